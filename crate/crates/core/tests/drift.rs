use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use staged_stopping::diagnostics::{drift_diagnostic, weighted_drift_diagnostic};
use staged_stopping::synth::{exact_posteriors, joint_table, sample_trajectories, SyntheticWorld};

#[test]
fn exact_weighted_drift_vanishes_in_every_bin() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let world = SyntheticWorld::random(&mut rng, &[3, 2, 3], false);
        let table = joint_table(&world);
        let posteriors = exact_posteriors(&world);
        for t in 0..world.horizon() {
            let mut before = Vec::new();
            let mut after = Vec::new();
            let mut weights = Vec::new();
            for (h, j) in &table[t + 1] {
                before.push(posteriors[t][&h[..t].to_vec()]);
                after.push(j.posterior());
                weights.push(j.total());
            }
            let report = weighted_drift_diagnostic(&before, &after, &weights, 4).unwrap();
            assert!(report.mean_drift.abs() < 1e-12, "M = {}", report.mean_drift);
            for bin in &report.bins {
                assert!(bin.mean_increment.abs() < 1e-12, "{bin:?}");
            }
        }
    }
}

#[test]
fn sampled_drift_within_three_standard_errors() {
    let world = SyntheticWorld::random(&mut ChaCha8Rng::seed_from_u64(9), &[4, 3], false);
    let posteriors = exact_posteriors(&world);
    let seeds = 500;
    let mut inside = 0;
    for seed in 0..seeds {
        let paths = sample_trajectories(&world, 2000, seed).unwrap();
        let x1: Vec<f64> = paths
            .iter()
            .map(|p| posteriors[1][&p.history[..1].to_vec()])
            .collect();
        let x2: Vec<f64> = paths.iter().map(|p| posteriors[2][&p.history]).collect();
        let report = drift_diagnostic(&x1, &x2, 10).unwrap();
        let inc: Vec<f64> = x2.iter().zip(&x1).map(|(b, a)| b - a).collect();
        let n = inc.len() as f64;
        let mean = inc.iter().sum::<f64>() / n;
        let var = inc.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((report.mean_drift - mean).abs() < 1e-12);
        if report.mean_drift.abs() <= 3.0 * (var / n).sqrt() {
            inside += 1;
        }
    }
    assert!(
        inside * 100 >= seeds * 99,
        "{inside} of {seeds} within 3 SE"
    );
}
