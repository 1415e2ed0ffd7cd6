//! Scratch exploration of the default desk benchmark (not part of the test
//! suite): trains FunFace/AdaFace across seeds and prints the headline
//! numbers the acceptance checks rely on.

use funlab_core::eval::{
    edc, generate_protocol, identify, verify_best_accuracy, QualitySource,
};
use funlab_core::io::Dataset;
use funlab_core::margin::{cosine_logits, pos_nn, EmbeddingBatch, MarginVariant};
use funlab_core::stats::certainty_ratio;
use funlab_core::synth::{generate, SynthConfig};
use funlab_core::trainer::{encode_dataset, train, TrainConfig};
use funlab_core::Matrix;

fn tier_indices(cfg: &SynthConfig, tier: usize) -> Vec<usize> {
    (0..cfg.num_samples()).filter(|&i| cfg.tier_of(i) == tier).collect()
}

fn main() {
    for seed in [11u64, 12, 13, 14, 15] {
        let synth = SynthConfig { seed, ..Default::default() };
        let train_ds = Dataset::from_synth(&generate(&synth).unwrap());
        let heldout_cfg = SynthConfig { noise_stream: 1, ..synth.clone() };
        let heldout = generate(&heldout_cfg).unwrap();

        for (name, variant, lambda) in [
            ("fun01", MarginVariant::FunFace, 0.1),
            ("ada", MarginVariant::AdaFace, 0.1),
            ("fun09", MarginVariant::FunFace, 0.9),
        ] {
            let mut tc = TrainConfig { seed, ..Default::default() };
            tc.margin.variant = variant;
            tc.margin.lambda = lambda;
            let t0 = std::time::Instant::now();
            let (ckpt, metrics) = train(&train_ds, &tc).unwrap();
            let dt = t0.elapsed().as_secs_f64();

            let emb = encode_dataset(&ckpt.params, &heldout.inputs).unwrap();

            // verification on clean-tier held-out pairs
            let clean = tier_indices(&heldout_cfg, 0);
            let proto = generate_protocol(&heldout.labels, &clean, 8, 4000, 1234).unwrap();
            let acc = verify_best_accuracy(&emb, &proto).unwrap();

            // rank-1: degraded probes vs clean gallery
            let degraded = tier_indices(&heldout_cfg, 1);
            let take = |idx: &[usize]| {
                let rows: Vec<Vec<f64>> = idx.iter().map(|&i| emb.row(i).to_vec()).collect();
                let labels: Vec<usize> = idx.iter().map(|&i| heldout.labels[i]).collect();
                (Matrix::from_rows(&rows), labels)
            };
            let (gal, gl) = take(&clean);
            let (probes, pl) = take(&degraded);
            let id = identify(&probes, &pl, &gal, &gl, &[1, 5]).unwrap();

            // edc on mixed-tier pairs, CR quality vs anti-oracle
            let all: Vec<usize> = (0..heldout.inputs.rows()).collect();
            let mixed = generate_protocol(&heldout.labels, &all, 8, 6000, 99).unwrap();
            let batch = EmbeddingBatch::new(emb.clone(), heldout.labels.clone()).unwrap();
            let cl = cosine_logits(&batch, &ckpt.protos).unwrap();
            let pn = pos_nn(&cl.cosines, &batch.labels).unwrap();
            let crs: Vec<f64> = pn
                .iter()
                .map(|&(p, n)| certainty_ratio(p, n, tc.margin.epsilon))
                .collect();
            let fr: Vec<f64> = (0..10).map(|k| k as f64 * 0.05).collect();
            let cr_curve = edc(&emb, &mixed, &crs, 1e-3, &fr, QualitySource::Cr);
            let anti: Vec<f64> = heldout.true_quality.iter().map(|&q| q).collect();
            let anti_curve = edc(&emb, &mixed, &anti, 1e-3, &fr, QualitySource::External);

            let first = metrics.first().unwrap().mean_loss;
            let last = metrics.last().unwrap().mean_loss;
            let thirds = metrics.len() / 3;
            let mean_cr_first: f64 =
                metrics[..thirds].iter().map(|m| m.mean_cr).sum::<f64>() / thirds as f64;
            let mean_cr_last: f64 = metrics[metrics.len() - thirds..]
                .iter()
                .map(|m| m.mean_cr)
                .sum::<f64>()
                / thirds as f64;

            print!(
                "seed {seed} {name}: {dt:.2}s loss {first:.3}->{last:.3} acc {acc:.4} \
                 rank1 {:.4} rank5 {:.4} cr {mean_cr_first:.3}->{mean_cr_last:.3}",
                id.rank_rates[0].1, id.rank_rates[1].1
            );
            match cr_curve {
                Ok(c) => print!(
                    " | edc_cr {:.4}->{:.4}",
                    c.fnmr_values.first().unwrap(),
                    c.fnmr_values.last().unwrap()
                ),
                Err(e) => print!(" | edc_cr ERR {e}"),
            }
            match anti_curve {
                Ok(c) => println!(
                    " anti {:.4}->{:.4}",
                    c.fnmr_values.first().unwrap(),
                    c.fnmr_values.last().unwrap()
                ),
                Err(e) => println!(" anti ERR {e}"),
            }
        }
    }
}
