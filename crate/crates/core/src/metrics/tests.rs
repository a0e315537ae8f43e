use super::*;
use crate::scenarios::{fig2_network, single_sensor};

fn std_normal_tail(x: f64) -> f64 {
    // Trapezoid on [x, 12] with a fine grid; an oracle independent of the sampler.
    let n = 200_000;
    let dx = (12.0 - x) / n as f64;
    let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    (0..n).map(|i| 0.5 * (phi(x + i as f64 * dx) + phi(x + (i + 1) as f64 * dx)) * dx).sum()
}

fn one_shot(m: usize) -> FusionRuleSpec {
    FusionRuleSpec::MthAlarm { m }
}

#[test]
fn edd_follows_drift_law() {
    let net = single_sensor::<f64>();
    let th = ThresholdVector::kld(&net, 200.0).unwrap();
    let e = estimate_edd(&net, &one_shot(1), &th, 2_000, 10_000, 1).unwrap();
    assert!((0.9..=1.1).contains(&(e.mean / 200.0)), "{e:?}");
    assert!(e.is_valid());
}

#[test]
fn edd_is_monotone_in_m() {
    let net = fig2_network::<f64>();
    let th = ThresholdVector::kld(&net, 3.0).unwrap();
    let edds: Vec<f64> = (1..=9).map(|m| estimate_edd(&net, &one_shot(m), &th, 2_000, 10_000, 4).unwrap().mean).collect();
    assert!(edds.windows(2).all(|w| w[0] <= w[1]), "{edds:?}");
}

#[test]
fn zero_threshold_arl_is_geometric() {
    let net = single_sensor::<f64>();
    let th = ThresholdVector::scalar(&net, 0.0).unwrap();
    let e = estimate_arl_direct(&net, &one_shot(1), &th, 40_000, 10_000, 2).unwrap();
    let oracle = 1.0 / std_normal_tail(0.5);
    assert!((e.mean - oracle).abs() <= e.ci_halfwidth * 1.5, "{e:?} vs {oracle}");
}

#[test]
fn arl_grows_with_threshold_and_exponentially() {
    let net = single_sensor::<f64>();
    let streams = StreamFactory::new(8, Domain::Arl);
    let hs = [3.0, 4.0, 5.0, 6.0];
    let opts = RunOptions { trials: 4_000, run_cap: 1_000_000 };
    let est = simulate(&net, &one_shot(1), &[1.0], &hs, Regime::PreChange, opts, &streams).unwrap();
    assert!(est.windows(2).all(|w| w[0].mean < w[1].mean));
    let ys: Vec<f64> = est.iter().map(|e| e.mean.ln()).collect();
    let mx = hs.iter().sum::<f64>() / 4.0;
    let my = ys.iter().sum::<f64>() / 4.0;
    let slope = hs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / hs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope - 1.0).abs() <= 0.15, "slope {slope}");
}

/// `E[M-th smallest of n draws from the empirical law of each pool]`, by summing survival
/// functions: `E[T] = Σ_{t≥0} P(T > t)`.
fn exact_order_statistic(pools: &[&[u64]], m: usize) -> f64 {
    let max = pools.iter().flat_map(|p| p.iter()).copied().max().unwrap();
    let mut sorted: Vec<Vec<u64>> = pools.iter().map(|p| p.to_vec()).collect();
    sorted.iter_mut().for_each(|p| p.sort_unstable());
    let mut total = 0.0;
    for t in 0..max {
        // q_i = P(T_i ≤ t); P(M-th smallest > t) = P(fewer than M of T_i ≤ t).
        let q: Vec<f64> = sorted.iter().map(|p| p.partition_point(|&x| x <= t) as f64 / p.len() as f64).collect();
        let mut dist = vec![1.0];
        for qi in q {
            let mut next = vec![0.0; dist.len() + 1];
            for (k, &d) in dist.iter().enumerate() {
                next[k] += d * (1.0 - qi);
                next[k + 1] += d * qi;
            }
            dist = next;
        }
        total += dist[..m].iter().sum::<f64>();
    }
    total
}

fn times(pool: &[StopTime]) -> Vec<u64> {
    pool.iter().map(|t| t.time().expect("uncensored pool")).collect()
}

#[test]
fn composed_matches_exact_composition_of_its_pools() {
    let net = Network::gaussian(&[(2, crate::models::Gaussian::standard(), crate::models::Gaussian::new(1.0, 1.0).unwrap())]).unwrap();
    let th = ThresholdVector::scalar(&net, 3.0).unwrap();
    let (pool_n, compose_n, cap, seed) = (20_000, 200_000, 1_000_000, 6);
    let pool = local_false_alarm_pool(&net, 1, 3.0, pool_n, cap, &StreamFactory::new(seed, Domain::LocalPool)).unwrap();
    let pool = times(&pool);
    let slice = (pool_n / COMPOSE_BATCHES) as usize;
    let m_local = pool.iter().sum::<u64>() as f64 / pool.len() as f64;
    for (m, ratio) in [(1, 0.5), (2, 1.5)] {
        let c = estimate_arl_oneshot_composed(&net, m, &th, pool_n, compose_n, cap, seed).unwrap();
        assert!(c.is_valid());
        let oracle: f64 = (0..COMPOSE_BATCHES as usize)
            .map(|b| {
                let s = &pool[b * slice..(b + 1) * slice];
                exact_order_statistic(&[s, s], m)
            })
            .sum::<f64>()
            / COMPOSE_BATCHES as f64;
        assert!((c.estimate.mean - oracle).abs() <= c.estimate.ci_halfwidth, "M={m}: {:?} vs {oracle}", c.estimate);
        // Local false-alarm times are close to exponential at this threshold.
        assert!((c.estimate.mean / (ratio * m_local) - 1.0).abs() < 0.08, "M={m}: {} vs {}", c.estimate.mean, ratio * m_local);
    }
}

#[test]
fn composed_and_direct_agree() {
    let net = Network::gaussian(&[
        (2, crate::models::Gaussian::standard(), crate::models::Gaussian::new(0.5, 1.0).unwrap()),
        (1, crate::models::Gaussian::standard(), crate::models::Gaussian::new(1.0, 1.0).unwrap()),
    ])
    .unwrap();
    let th = ThresholdVector::kld(&net, 6.0).unwrap();
    for m in 1..=3 {
        let composed = estimate_arl_oneshot_composed(&net, m, &th, 20_000, 100_000, 1_000_000, 10).unwrap();
        let direct = estimate_arl_direct(&net, &one_shot(m), &th, 20_000, 1_000_000, 11).unwrap();
        assert!(composed.estimate.overlaps(&direct), "M={m}: {:?} vs {direct:?}", composed.estimate);
    }
}

#[test]
fn composed_rejects_bad_m() {
    let net = fig2_network::<f64>();
    let th = ThresholdVector::kld(&net, 1.0).unwrap();
    assert!(estimate_arl_oneshot_composed(&net, 0, &th, 100, 100, 100, 1).is_err());
    assert!(estimate_arl_oneshot_composed(&net, 10, &th, 100, 100, 100, 1).is_err());
    assert!(estimate_arl_oneshot_composed(&net, 1, &th, 10, 100, 100, 1).is_err());
}

#[test]
fn change_at_zero_is_the_worst_case() {
    let net = fig2_network::<f64>();
    let th = ThresholdVector::kld(&net, 3.0).unwrap();
    let opts = RunOptions { trials: 10_000, run_cap: 100_000 };
    for rule in [one_shot(7), FusionRuleSpec::MVoting { m: 9 }, FusionRuleSpec::CentralizedCusum] {
        let th = if rule.variant().uses_local_thresholds() { th.clone() } else { ThresholdVector::scalar(&net, 5.0).unwrap() };
        let zero = estimate_edd(&net, &rule, &th, opts.trials, opts.run_cap, 12).unwrap();
        for nu in [5, 20] {
            let r = estimate_residual_delay(&net, &rule, &th, nu, opts, 13).unwrap();
            let se = (zero.std_error().powi(2) + r.delay.std_error().powi(2)).sqrt();
            assert!(zero.mean >= r.delay.mean - 3.0 * se, "{rule:?} nu={nu}: {zero:?} vs {:?}", r.delay);
        }
    }
}

#[test]
fn interval_shrinks_like_root_n() {
    let net = fig2_network::<f64>();
    let th = ThresholdVector::kld(&net, 3.0).unwrap();
    for seed in 0..3 {
        let a = estimate_edd(&net, &one_shot(4), &th, 5_000, 100_000, 100 + seed).unwrap();
        let b = estimate_edd(&net, &one_shot(4), &th, 10_000, 100_000, 200 + seed).unwrap();
        let ratio = b.ci_halfwidth / a.ci_halfwidth;
        assert!((0.6..=0.82).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let net = fig2_network::<f64>();
    let th = ThresholdVector::kld(&net, 2.0).unwrap();
    let run = || estimate_arl_direct(&net, &FusionRuleSpec::MVoting { m: 3 }, &th, 3_000, 100_000, 21).unwrap();
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool3 = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    assert_eq!(pool1.install(run), pool3.install(run));
}

#[test]
fn early_abort_agrees_with_full_run() {
    let net = single_sensor::<f64>();
    let sim = TrialSimulator::new(&net, &one_shot(1), &[1.0], &[4.0]).unwrap();
    let streams = StreamFactory::new(3, Domain::Arl);
    let opts = RunOptions { trials: 5_000, run_cap: 1_000_000 };
    let full = evaluate(&sim, Regime::PreChange, opts, &streams, None);
    let mean = full.estimates[0].mean;
    assert!(!evaluate(&sim, Regime::PreChange, opts, &streams, Some(mean * 1.01)).exceeded);
    assert!(evaluate(&sim, Regime::PreChange, opts, &streams, Some(mean * 0.99)).exceeded);
}

#[test]
fn sweep_contract() {
    let net = single_sensor::<f64>();
    let rules = vec![NamedRule { name: "first".into(), rule: one_shot(1) }];
    let opts = SweepOptions { seed: 1, trials_arl: 1_000, trials_edd: 1_000, run_cap: 100_000, tolerance: 0.05 };
    assert!(tradeoff_sweep(&net, &rules, &Scaling::Kld, &[], &opts).is_empty());
    let a = tradeoff_sweep(&net, &rules, &Scaling::Kld, &[100.0, 300.0], &opts);
    let b = tradeoff_sweep(&net, &rules, &Scaling::Kld, &[100.0, 300.0], &opts);
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
    assert!(a.iter().all(|p| p.valid));
    assert!(a[0].edd_hat < a[1].edd_hat);
    // A failing point is flagged and the sweep continues.
    let bad = tradeoff_sweep(&net, &rules, &Scaling::Kld, &[0.5, 100.0], &opts);
    assert!(!bad[0].valid && bad[0].error.is_some());
    assert!(bad[1].valid);
}

#[test]
fn rejects_empty_runs() {
    let net = single_sensor::<f64>();
    let th = ThresholdVector::kld(&net, 1.0).unwrap();
    assert!(estimate_edd(&net, &one_shot(1), &th, 0, 10, 1).is_err());
    assert!(estimate_arl_direct(&net, &one_shot(1), &th, 10, 0, 1).is_err());
}

#[test]
fn early_abort_does_not_depend_on_thread_count() {
    let net = fig2_network::<f64>();
    let sim = TrialSimulator::new(&net, &FusionRuleSpec::MVoting { m: 9 }, &[1.0, 1.0, 1.0], &[0.3]).unwrap();
    let streams = StreamFactory::new(5, Domain::Arl);
    let opts = RunOptions { trials: 2_000, run_cap: 1_000_000 };
    let run = || evaluate(&sim, Regime::PreChange, opts, &streams, Some(2_000.0));
    let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let pool4 = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let (a, b) = (pool1.install(run), pool4.install(run));
    assert!(a.exceeded && b.exceeded);
    assert_eq!(a.estimates[0].mean, b.estimates[0].mean);
    assert_eq!((a.estimates[0].completed, b.estimates[0].completed), (0, 0));
}
