use std::f64::consts::PI;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use zeno_core::dynamics::{survival_model, DriveConfig};
use zeno_core::protocol::{
    generate_trajectory, unobserved_survival, Fidelities, MeasurementRecord, Mode, Outcome, TrajectoryGenerator,
};
use zeno_core::statistics::{
    expected_run_counts, geometric_stay_estimate, run_lengths, runs, v_obs_with_error, RunHistogram,
};

/// Exhaustive expectation over all 2^L outcome sequences of the chain.
fn enumerate_runs(p0: f64, p1: f64, len: usize, initial_on: f64) -> (Vec<f64>, Vec<f64>) {
    let mut on = vec![0.0; len + 1];
    let mut off = vec![0.0; len + 1];
    for bits in 0u32..(1 << len) {
        let seq: Vec<bool> = (0..len).map(|i| bits >> i & 1 == 1).collect();
        let mut prob = if seq[0] { initial_on } else { 1.0 - initial_on };
        for w in seq.windows(2) {
            let stay = if w[0] { p0 } else { p1 };
            prob *= if w[0] == w[1] { stay } else { 1.0 - stay };
        }
        let mut start = 0;
        for i in 1..=len {
            if i == len || seq[i] != seq[start] {
                let q = i - start;
                if seq[start] {
                    on[q] += prob;
                } else {
                    off[q] += prob;
                }
                start = i;
            }
        }
    }
    (on, off)
}

#[test]
fn expected_runs_match_enumeration_with_mixed_start() {
    for len in 1..=10 {
        for &(p0, p1) in &[(0.2, 0.9), (1.0, 0.0), (0.5, 1.0)] {
            let fast = expected_run_counts(p0, p1, len, 0.3).unwrap();
            let (on, off) = enumerate_runs(p0, p1, len, 0.3);
            for q in 1..=len {
                assert!((fast.on[q] - on[q]).abs() < 1e-12, "L={len} q={q}");
                assert!((fast.off[q] - off[q]).abs() < 1e-12, "L={len} q={q}");
            }
        }
    }
}

/// Two-sample chi-square p-value on binned counts; bins with pooled count < 10
/// are merged into their neighbor.
fn two_sample_p_value(a: &[u64], b: &[u64]) -> f64 {
    let (na, nb) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut merged: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        acc.0 += x as f64;
        acc.1 += y as f64;
        if acc.0 + acc.1 >= 10.0 {
            merged.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if let Some(last) = merged.last_mut() {
        last.0 += acc.0;
        last.1 += acc.1;
    }
    let stat: f64 = merged
        .iter()
        .map(|&(x, y)| {
            let k1 = (nb / na).sqrt();
            let k2 = (na / nb).sqrt();
            (k1 * x - k2 * y).powi(2) / (x + y)
        })
        .sum();
    let dof = (merged.len() - 1) as f64;
    1.0 - ChiSquared::new(dof).unwrap().cdf(stat)
}

fn length_counts(hist: &RunHistogram, symbol: Outcome, max_q: usize) -> Vec<u64> {
    (1..=max_q).map(|q| hist.count(symbol, q)).collect()
}

#[test]
fn markov_and_full_quantum_agree_lossless() {
    let drive = DriveConfig::resonant(2.0, 1.0).unwrap();
    let markov = TrajectoryGenerator::new(drive, Fidelities::PERFECT, 500, Mode::Markov).unwrap();
    let quantum = TrajectoryGenerator::new(drive, Fidelities::PERFECT, 500, Mode::FullQuantum).unwrap();
    let hm = RunHistogram::from_trajectories(&markov.generate_batch(101, 200)).unwrap();
    let hq = RunHistogram::from_trajectories(&quantum.generate_batch(202, 200)).unwrap();
    let max_q = hm.max_run().max(hq.max_run());
    for symbol in [Outcome::On, Outcome::Off] {
        let p = two_sample_p_value(&length_counts(&hm, symbol, max_q), &length_counts(&hq, symbol, max_q));
        assert!(p > 0.01, "{symbol:?}: p-value {p}");
    }
}

#[test]
fn markov_and_full_quantum_agree_with_relaxation_and_fidelity() {
    let drive = DriveConfig::new(1.5, 0.0, 1.0, 0.2, 0.1).unwrap();
    let fid = Fidelities::new(0.95, 0.85).unwrap();
    let model = survival_model(&drive, fid.f0, fid.f1).unwrap();
    for mode in [Mode::Markov, Mode::FullQuantum] {
        let gen = TrajectoryGenerator::new(drive, fid, 500, mode).unwrap();
        let hist = RunHistogram::from_trajectories(&gen.generate_batch(77, 400)).unwrap();
        let p_on = geometric_stay_estimate(&hist.counts_on).unwrap();
        let p_off = geometric_stay_estimate(&hist.counts_off).unwrap();
        assert!((p_on - model.p0).abs() < 0.02 * model.p0, "{mode:?}: {p_on} vs {}", model.p0);
        assert!((p_off - model.p1).abs() < 0.02 * model.p1, "{mode:?}: {p_off} vs {}", model.p1);
    }
}

#[test]
fn stay_fraction_matches_cos_squared() {
    let drive = DriveConfig::resonant(2.0, 1.0).unwrap();
    let n = 100_000;
    let t = generate_trajectory(&drive, Fidelities::PERFECT, n, 8, Mode::Markov).unwrap();
    let stays = t.outcomes.windows(2).filter(|w| w[0] == w[1]).count() as f64;
    let steps = (n - 1) as f64;
    let p = 1.0f64.cos().powi(2);
    assert!((p - 0.2919265817264289).abs() < 1e-15);
    let se = (p * (1.0 - p) / steps).sqrt();
    assert!((stays / steps - p).abs() < 3.0 * se, "{} vs {p}", stays / steps);
}

#[test]
fn excitation_rate_matches_stationary_chain() {
    let drive = DriveConfig::resonant(2.0, 1.0).unwrap();
    let n = 100_000;
    let record = MeasurementRecord::new(generate_trajectory(&drive, Fidelities::PERFECT, n, 21, Mode::Markov).unwrap());
    let steps = (n - 1) as f64;
    let flip = 1.0f64.sin().powi(2);
    let expected = 0.5 * flip;
    assert!((expected - 0.3540367091367856).abs() < 1e-15);
    // flips are iid for p0 = p1 and alternate between up and down
    let se = (flip * (1.0 - flip) / steps).sqrt() / 2.0;
    let rate = record.transitions_up as f64 / steps;
    assert!((rate - expected).abs() < 3.0 * se, "{rate} vs {expected}");
    assert!(record.transitions_up.abs_diff(record.transitions_down) <= 1);
}

#[test]
fn unobserved_survival_matches_coherent_law() {
    let drive = DriveConfig::resonant(2.0, 1.0).unwrap();
    let est = unobserved_survival(&drive, 3, 100_000, 4).unwrap();
    let v = 3.0f64.cos().powi(2);
    let se = (v * (1.0 - v) / 1e5).sqrt();
    assert!((est.mean - v).abs() < 3.0 * se, "{} vs {v}", est.mean);
}

#[test]
fn v_obs_ratios_follow_geometric_law() {
    let drive = DriveConfig::resonant(1.2, 1.0).unwrap();
    let t = generate_trajectory(&drive, Fidelities::PERFECT, 300_000, 99, Mode::Markov).unwrap();
    let hist = run_lengths(&t).unwrap();
    let p = 0.6f64.cos().powi(2);
    for symbol in [Outcome::On, Outcome::Off] {
        for q in 2.. {
            if hist.count(symbol, q) < 100 {
                break;
            }
            let (v, se) = v_obs_with_error(&hist, symbol, q).unwrap();
            let target = p.powi(q as i32 - 1);
            assert!((v - target).abs() < 3.0 * se, "{symbol:?} q={q}: {v} vs {target} ± {se}");
        }
    }
}

#[test]
fn batch_is_independent_of_thread_count() {
    let drive = DriveConfig::new(2.0, 0.0, 1.0, 0.1, 0.05).unwrap();
    for mode in [Mode::Markov, Mode::FullQuantum] {
        let gen = TrajectoryGenerator::new(drive, Fidelities::new(1.0, 0.9).unwrap(), 500, mode).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| gen.generate_batch(2024, 64))
        };
        assert_eq!(run(1), run(8));
    }
}

#[test]
fn pi_over_two_steps_zeno_table_is_consistent() {
    let rows = zeno_core::protocol::zeno_scan(PI / 2.0, &[1, 4], 20_000, 6).unwrap();
    for row in rows {
        let sigma = (row.analytic * (1.0 - row.analytic) / 20_000.0).sqrt();
        assert!((row.monte_carlo.mean - row.analytic).abs() < 3.0 * sigma, "{row:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn runs_partition_and_alternate(theta in 0.0..PI, seed in any::<u64>(), n in 1usize..400, quantum in any::<bool>()) {
        let drive = DriveConfig::resonant(theta, 1.0).unwrap();
        let mode = if quantum { Mode::FullQuantum } else { Mode::Markov };
        let t = generate_trajectory(&drive, Fidelities::PERFECT, n, seed, mode).unwrap();
        prop_assert_eq!(t.len(), n);
        prop_assert_eq!(t.outcomes[0], Outcome::On);

        let rs = runs(&t.outcomes);
        prop_assert!(rs.windows(2).all(|w| w[0].0 != w[1].0));
        prop_assert_eq!(rs.iter().map(|r| r.1).sum::<usize>(), n);

        let hist = run_lengths(&t).unwrap();
        prop_assert_eq!(hist.covered_length(), n as u64);
        prop_assert!(hist.total_runs(Outcome::On).abs_diff(hist.total_runs(Outcome::Off)) <= 1);

        let record = MeasurementRecord::new(t);
        prop_assert!(record.transitions_up.abs_diff(record.transitions_down) <= 1);
    }

    #[test]
    fn histogram_merge_is_order_independent(seeds in proptest::collection::vec(any::<u64>(), 1..6)) {
        let drive = DriveConfig::resonant(1.0, 1.0).unwrap();
        let trajs: Vec<_> = seeds
            .iter()
            .map(|&s| generate_trajectory(&drive, Fidelities::PERFECT, 50, s, Mode::Markov).unwrap())
            .collect();
        let forward = RunHistogram::from_trajectories(&trajs).unwrap();
        let backward = RunHistogram::from_trajectories(trajs.iter().rev()).unwrap();
        prop_assert_eq!(&forward, &backward);
        prop_assert_eq!(forward.covered_length(), 50 * seeds.len() as u64);
    }

    #[test]
    fn expected_runs_cover_the_trajectory(p0 in 0.0..=1.0f64, p1 in 0.0..=1.0f64, len in 1usize..300, init in 0.0..=1.0f64) {
        let e = expected_run_counts(p0, p1, len, init).unwrap();
        let covered: f64 = (1..=len).map(|q| q as f64 * (e.on[q] + e.off[q])).sum();
        prop_assert!((covered - len as f64).abs() < 1e-9 * len as f64);
    }
}
