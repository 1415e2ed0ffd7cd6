//! Scratch: per-epoch CR / clamp trajectory at the default desk config.
use funlab_core::io::Dataset;
use funlab_core::synth::{generate, SynthConfig};
use funlab_core::trainer::{train, TrainConfig};

fn main() {
    let synth = SynthConfig { seed: 11, ..Default::default() };
    let ds = Dataset::from_synth(&generate(&synth).unwrap());
    let tc = TrainConfig { seed: 11, ..Default::default() };
    let (_, metrics) = train(&ds, &tc).unwrap();
    for m in &metrics {
        println!(
            "epoch {:2} lr {:.4} loss {:8.3} norm {:6.3} cr {:10.3} clamp {:.4}",
            m.epoch, m.lr, m.mean_loss, m.mean_norm, m.mean_cr, m.clamp_rate
        );
    }
}
