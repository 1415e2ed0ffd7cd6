//! Evaluation metrics against brute-force enumerations, plus rotation
//! invariance.

mod common;

use common::{
    brute_best_accuracy, brute_edc, brute_identify, brute_tar_at_far, pair_scores,
    random_orthogonal, rotate_rows,
};
use funlab_core::eval::{
    edc, generate_protocol, identify, verify_best_accuracy, verify_tar_at_far, QualitySource,
    TarOutcome,
};
use funlab_core::matrix::Matrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

struct EvalInstance {
    embeddings: Matrix,
    labels: Vec<usize>,
    protocol: funlab_core::eval::PairProtocol,
    quality: Vec<f64>,
}

fn random_eval_instance(seed: u64) -> EvalInstance {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0xBEEF);
    let n = rng.random_range(20..=200usize);
    let c = rng.random_range(3..=8usize);
    let d = rng.random_range(4..=12usize);
    let mut centers = Matrix::zeros(c, d);
    for v in centers.data_mut() {
        *v = rng.sample::<f64, _>(StandardNormal);
    }
    let mut embeddings = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let id = rng.random_range(0..c);
        labels.push(id);
        for (k, v) in embeddings.row_mut(i).iter_mut().enumerate() {
            *v = centers.get(id, k) + rng.sample::<f64, _>(StandardNormal) * 0.8;
        }
    }
    let candidates: Vec<usize> = (0..n).collect();
    let protocol = generate_protocol(&labels, &candidates, 3, n, seed).unwrap();
    let quality: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    EvalInstance {
        embeddings,
        labels,
        protocol,
        quality,
    }
}

#[test]
fn verify_matches_brute_force() {
    for seed in 0..20 {
        let inst = random_eval_instance(seed);
        let scores = pair_scores(&inst.embeddings, &inst.protocol.pairs);

        let acc = verify_best_accuracy(&inst.embeddings, &inst.protocol).unwrap();
        assert_eq!(acc, brute_best_accuracy(&scores), "seed {seed}");

        for far in [0.01, 0.05, 0.2, 0.5, 1e-9] {
            let got = verify_tar_at_far(&inst.embeddings, &inst.protocol, &[far]).unwrap();
            match (got[0].outcome, brute_tar_at_far(&scores, far)) {
                (TarOutcome::Tar { tar, threshold }, Some((bt, bthr))) => {
                    assert_eq!(tar, bt, "seed {seed} far {far}");
                    assert_eq!(threshold, bthr, "seed {seed} far {far}");
                }
                (TarOutcome::Unattainable { .. }, None) => {}
                (got, want) => panic!("seed {seed} far {far}: {got:?} vs {want:?}"),
            }
        }
    }
}

#[test]
fn identify_matches_brute_force() {
    for seed in 0..20 {
        let inst = random_eval_instance(seed + 100);
        let n = inst.embeddings.rows();
        // odd rows probe, even rows gallery
        let (mut gi, mut pi) = (Vec::new(), Vec::new());
        for i in 0..n {
            if i % 2 == 0 {
                gi.push(i)
            } else {
                pi.push(i)
            }
        }
        let take = |idx: &[usize]| {
            let rows: Vec<Vec<f64>> = idx.iter().map(|&i| inst.embeddings.row(i).to_vec()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| inst.labels[i]).collect();
            (Matrix::from_rows(&rows), labels)
        };
        let (gallery, gl) = take(&gi);
        let (probes, pl) = take(&pi);
        let ranks = [1, 2, 5];
        let got = identify(&probes, &pl, &gallery, &gl, &ranks).unwrap();
        let (want_rates, want_excluded) = brute_identify(&probes, &pl, &gallery, &gl, &ranks);
        assert_eq!(got.rank_rates, want_rates, "seed {seed}");
        assert_eq!(got.excluded, want_excluded, "seed {seed}");
    }
}

#[test]
fn edc_matches_brute_force() {
    for seed in 0..20 {
        let inst = random_eval_instance(seed + 200);
        let fractions = [0.0, 0.1, 0.2, 0.3, 0.4];
        let fmr = 0.05;
        let curve = match edc(
            &inst.embeddings,
            &inst.protocol,
            &inst.quality,
            fmr,
            &fractions,
            QualitySource::External,
        ) {
            Ok(c) => c,
            Err(funlab_core::Error::UnattainableFar { .. }) => continue,
            Err(e) => panic!("seed {seed}: {e}"),
        };
        let scores = pair_scores(&inst.embeddings, &inst.protocol.pairs);
        let want = brute_edc(
            &scores,
            &inst.protocol.pairs,
            &inst.quality,
            curve.threshold,
            &fractions,
        );
        for (k, f) in curve.discard_fractions.iter().enumerate() {
            let pos = fractions.iter().position(|x| x == f).unwrap();
            assert_eq!(Some(curve.fnmr_values[k]), want[pos], "seed {seed} fraction {f}");
        }
        if let Some(t) = curve.truncated_at {
            let pos = fractions.iter().position(|&x| x == t).unwrap();
            assert_eq!(want[pos], None, "seed {seed}: truncation point disagrees");
        }
    }
}

#[test]
fn metrics_are_rotation_invariant() {
    for seed in 0..5 {
        let inst = random_eval_instance(seed + 300);
        let d = inst.embeddings.cols();
        let mut rng = ChaCha12Rng::seed_from_u64(999 + seed);
        let q = random_orthogonal(d, &mut rng);
        let rotated = rotate_rows(&inst.embeddings, &q);

        let acc = verify_best_accuracy(&inst.embeddings, &inst.protocol).unwrap();
        let acc_rot = verify_best_accuracy(&rotated, &inst.protocol).unwrap();
        assert_eq!(acc, acc_rot, "seed {seed}");

        let tar = verify_tar_at_far(&inst.embeddings, &inst.protocol, &[0.1]).unwrap();
        let tar_rot = verify_tar_at_far(&rotated, &inst.protocol, &[0.1]).unwrap();
        match (tar[0].outcome, tar_rot[0].outcome) {
            (TarOutcome::Tar { tar: a, .. }, TarOutcome::Tar { tar: b, .. }) => {
                assert_eq!(a, b, "seed {seed}")
            }
            (a, b) => panic!("seed {seed}: {a:?} vs {b:?}"),
        }

        let n = inst.embeddings.rows();
        let gi: Vec<usize> = (0..n).step_by(2).collect();
        let pi: Vec<usize> = (1..n).step_by(2).collect();
        let take = |m: &Matrix, idx: &[usize]| {
            Matrix::from_rows(&idx.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>())
        };
        let labels_of = |idx: &[usize]| idx.iter().map(|&i| inst.labels[i]).collect::<Vec<_>>();
        let (gl, pl) = (labels_of(&gi), labels_of(&pi));
        let a = identify(&take(&inst.embeddings, &pi), &pl, &take(&inst.embeddings, &gi), &gl, &[1, 3])
            .unwrap();
        let b = identify(&take(&rotated, &pi), &pl, &take(&rotated, &gi), &gl, &[1, 3]).unwrap();
        assert_eq!(a.rank_rates, b.rank_rates, "seed {seed}");

        let fractions = [0.0, 0.2, 0.4];
        let e1 = edc(&inst.embeddings, &inst.protocol, &inst.quality, 0.1, &fractions, QualitySource::External);
        let e2 = edc(&rotated, &inst.protocol, &inst.quality, 0.1, &fractions, QualitySource::External);
        match (e1, e2) {
            (Ok(c1), Ok(c2)) => assert_eq!(c1.fnmr_values, c2.fnmr_values, "seed {seed}"),
            (Err(_), Err(_)) => {}
            _ => panic!("seed {seed}: rotation changed edc feasibility"),
        }
    }
}
