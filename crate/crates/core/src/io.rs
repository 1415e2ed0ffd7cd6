//! Binary file formats: datasets and training checkpoints.
//!
//! Both formats are little-endian with a self-describing header. Dataset
//! files carry only inputs and labels; hidden ground truth (identity
//! directions, tier sigmas) stays out of the file and is re-derived from the
//! generator config when an oracle analysis needs it.
//!
//! Dataset layout (all header fields 64-bit little-endian):
//!   magic "FUNLBDS1" | version | N | D_in | C
//!   N * D_in  f64 row-major inputs
//!   N         u32 labels
//!
//! Checkpoint layout:
//!   magic "FUNLBCP1" | version | D_in | hidden | embed | C | epoch | seed
//!   normalizer (mu_z, sigma_z, mu_cr, sigma_cr, momentum as f64; init u8)
//!   w1 b1 w2 b2 | velocity of the same | prototypes | prototype velocity

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::margin::ClassPrototypes;
use crate::matrix::Matrix;
use crate::stats::NormalizerState;
use crate::synth::SynthDataset;
use crate::trainer::Checkpoint;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub const DATASET_MAGIC: u64 = u64::from_le_bytes(*b"FUNLBDS1");
pub const DATASET_VERSION: u64 = 1;
pub const CHECKPOINT_MAGIC: u64 = u64::from_le_bytes(*b"FUNLBCP1");
pub const CHECKPOINT_VERSION: u64 = 1;

/// Training inputs: features, labels, and the class count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn from_synth(ds: &SynthDataset) -> Self {
        Dataset {
            inputs: ds.inputs.clone(),
            labels: ds.labels.clone(),
            num_classes: ds.prototypes.rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.rows() == 0 {
            return Err(Error::EmptyInput("dataset"));
        }
        if self.labels.len() != self.inputs.rows() {
            return Err(Error::ShapeMismatch {
                context: "dataset labels",
                expected: format!("{}", self.inputs.rows()),
                actual: format!("{}", self.labels.len()),
            });
        }
        if let Some((i, &l)) = self
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l >= self.num_classes)
        {
            return Err(Error::LabelOutOfRange {
                row: i,
                label: l,
                num_classes: self.num_classes,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }
}

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_f64_slice(w: &mut impl Write, xs: &[f64]) -> Result<()> {
    for &x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_f64_vec(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut buf = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        out.push(f64::from_le_bytes(buf));
    }
    Ok(out)
}

pub fn write_dataset(w: &mut impl Write, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    write_u64(w, DATASET_MAGIC)?;
    write_u64(w, DATASET_VERSION)?;
    write_u64(w, ds.inputs.rows() as u64)?;
    write_u64(w, ds.inputs.cols() as u64)?;
    write_u64(w, ds.num_classes as u64)?;
    write_f64_slice(w, ds.inputs.data())?;
    for &l in &ds.labels {
        w.write_all(&(l as u32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_dataset(r: &mut impl Read) -> Result<Dataset> {
    let magic = read_u64(r)?;
    if magic != DATASET_MAGIC {
        return Err(Error::Format(format!(
            "bad dataset magic {magic:#018x}, expected {DATASET_MAGIC:#018x}"
        )));
    }
    let version = read_u64(r)?;
    if version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {version}")));
    }
    let n = read_u64(r)? as usize;
    let d = read_u64(r)? as usize;
    let c = read_u64(r)? as usize;
    if n == 0 || d == 0 || c == 0 || n.checked_mul(d).is_none() {
        return Err(Error::Format(format!("implausible dataset header: N={n} D={d} C={c}")));
    }
    let data = read_f64_vec(r, n * d)?;
    let mut labels = Vec::with_capacity(n);
    let mut buf = [0u8; 4];
    for _ in 0..n {
        r.read_exact(&mut buf)?;
        labels.push(u32::from_le_bytes(buf) as usize);
    }
    let ds = Dataset {
        inputs: Matrix::from_vec(n, d, data),
        labels,
        num_classes: c,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(&mut BufReader::new(File::open(path)?))
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    write_u64(w, CHECKPOINT_MAGIC)?;
    write_u64(w, CHECKPOINT_VERSION)?;
    let p = &ckpt.params;
    write_u64(w, p.input_dim() as u64)?;
    write_u64(w, p.hidden_dim() as u64)?;
    write_u64(w, p.embed_dim() as u64)?;
    write_u64(w, ckpt.protos.num_classes() as u64)?;
    write_u64(w, ckpt.epoch as u64)?;
    write_u64(w, ckpt.seed)?;
    let st = &ckpt.stats;
    write_f64_slice(
        w,
        &[st.mu_z, st.sigma_z, st.mu_cr, st.sigma_cr, st.ema_momentum],
    )?;
    w.write_all(&[u8::from(st.initialized)])?;
    for m in [&p.w1, &p.w2, &ckpt.velocity.w1, &ckpt.velocity.w2] {
        write_f64_slice(w, m.data())?;
    }
    for v in [&p.b1, &p.b2, &ckpt.velocity.b1, &ckpt.velocity.b2] {
        write_f64_slice(w, v)?;
    }
    write_f64_slice(w, ckpt.protos.centers().data())?;
    write_f64_slice(w, ckpt.proto_velocity.data())?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let magic = read_u64(r)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:#018x}, expected {CHECKPOINT_MAGIC:#018x}"
        )));
    }
    let version = read_u64(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let d_in = read_u64(r)? as usize;
    let hidden = read_u64(r)? as usize;
    let embed = read_u64(r)? as usize;
    let classes = read_u64(r)? as usize;
    let epoch = read_u64(r)? as usize;
    let seed = read_u64(r)?;
    let s = read_f64_vec(r, 5)?;
    let mut init = [0u8; 1];
    r.read_exact(&mut init)?;
    let stats = NormalizerState {
        mu_z: s[0],
        sigma_z: s[1],
        mu_cr: s[2],
        sigma_cr: s[3],
        ema_momentum: s[4],
        initialized: init[0] != 0,
    };
    let w1 = Matrix::from_vec(hidden, d_in, read_f64_vec(r, hidden * d_in)?);
    let w2 = Matrix::from_vec(embed, hidden, read_f64_vec(r, embed * hidden)?);
    let vw1 = Matrix::from_vec(hidden, d_in, read_f64_vec(r, hidden * d_in)?);
    let vw2 = Matrix::from_vec(embed, hidden, read_f64_vec(r, embed * hidden)?);
    let b1 = read_f64_vec(r, hidden)?;
    let b2 = read_f64_vec(r, embed)?;
    let vb1 = read_f64_vec(r, hidden)?;
    let vb2 = read_f64_vec(r, embed)?;
    let centers = Matrix::from_vec(classes, embed, read_f64_vec(r, classes * embed)?);
    let proto_velocity = Matrix::from_vec(classes, embed, read_f64_vec(r, classes * embed)?);
    Ok(Checkpoint {
        epoch,
        seed,
        params: EncoderParams { w1, b1, w2, b2 },
        velocity: EncoderParams {
            w1: vw1,
            b1: vb1,
            w2: vw2,
            b2: vb2,
        },
        protos: ClassPrototypes::from_unit_rows(centers)?,
        proto_velocity,
        stats,
    })
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ckpt)?;
    Ok(buf)
}

pub fn checkpoint_from_bytes(mut bytes: &[u8]) -> Result<Checkpoint> {
    read_checkpoint(&mut bytes)
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};
    use crate::trainer::{train, TrainConfig};

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let config = SynthConfig {
            num_identities: 3,
            samples_per_identity: 4,
            input_dim: 5,
            seed: 77,
            ..Default::default()
        };
        let ds = Dataset::from_synth(&generate(&config).unwrap());
        let mut buf = Vec::new();
        write_dataset(&mut buf, &ds).unwrap();
        let back = read_dataset(&mut buf.as_slice()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn dataset_bad_magic_is_rejected() {
        let mut buf = vec![0u8; 64];
        buf[0] = 0xFF;
        let err = read_dataset(&mut buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::Format(_)));
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let synth = SynthConfig {
            num_identities: 3,
            samples_per_identity: 4,
            input_dim: 8,
            seed: 9,
            ..Default::default()
        };
        let ds = Dataset::from_synth(&generate(&synth).unwrap());
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            embed_dim: 6,
            hidden_dim: 10,
            lr_drop_epochs: vec![],
            ..Default::default()
        };
        let (ckpt, _) = train(&ds, &cfg).unwrap();
        let bytes = checkpoint_to_bytes(&ckpt).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        assert_eq!(ckpt, back);
        let bytes2 = checkpoint_to_bytes(&back).unwrap();
        assert_eq!(bytes, bytes2);
    }
}
