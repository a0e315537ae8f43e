use super::*;
use crate::cusum::run_local_sensor;
use crate::models::{Gaussian, SensorGroup};
use crate::rng::Domain;

fn n(m: f64, v: f64) -> Gaussian {
    Gaussian::new(m, v).unwrap()
}

fn fig2() -> Network {
    Network::gaussian(&[
        (3, n(0.0, 1.0), n(2.0 / 3.0, 1.0)),
        (3, n(0.0, 1.0), n(4.0 / 3.0, 2.0)),
        (3, n(0.0, 1.0), n(2.0, 3.0)),
    ])
    .unwrap()
}

fn fig4() -> Network {
    Network::gaussian(&[(8, n(0.0, 1.0), n(0.35, 1.0)), (1, n(0.0, 1.0), n(2.0, 4.0))]).unwrap()
}

fn two_sensors() -> Network {
    Network::gaussian(&[(2, n(0.0, 1.0), n(1.0, 1.0))]).unwrap()
}

fn scripted(net: &Network, rule: &FusionRuleSpec, h: f64, z: Vec<Vec<f64>>) -> GlobalStopTime {
    let sim = TrialSimulator::new(net, rule, &vec![1.0; net.group_count()], &[h]).unwrap();
    sim.run_scripted(&ScriptedLlrs { z }, 100).unwrap()
}

fn time(g: &Result<GlobalStopTime>) -> StopTime {
    g.as_ref().unwrap().time
}

#[test]
fn m_th_alarm_hand_trace() {
    let net = two_sensors();
    let a = vec![0.1, 0.1, 5.0, -9.0, -9.0, -9.0];
    let b = vec![0.1, 0.1, 0.1, 0.1, 5.0, -9.0];
    let r = scripted(&net, &FusionRuleSpec::MthAlarm { m: 2 }, 1.0, vec![a.clone(), b.clone()]);
    assert_eq!(r.time, StopTime::At(5));
    assert_eq!(r.triggering_set.len(), 2);
    let r1 = scripted(&net, &FusionRuleSpec::MthAlarm { m: 1 }, 1.0, vec![a, b]);
    assert_eq!(r1.time, StopTime::At(3));
    assert_eq!(r1.triggering_set, vec![SensorId { k: 1, l: 1 }]);
}

#[test]
fn m_voting_hand_trace() {
    let net = two_sensors();
    let a = vec![-1.0, -1.0, 5.0, 0.0, -10.0, -1.0, -1.0];
    let b = vec![-1.0, -1.0, -1.0, 5.0, 0.0, -10.0, -1.0];
    let r = scripted(&net, &FusionRuleSpec::MVoting { m: 2 }, 1.0, vec![a.clone(), b.clone()]);
    assert_eq!(r.time, StopTime::At(4));
    let all = FusionRuleSpec::selection_of_groups(&net, &[1]).unwrap();
    let r = scripted(&net, &FusionRuleSpec::MVotingWithin { m: 2, selection: all }, 1.0, vec![a.clone(), b.clone()]);
    assert_eq!(r.time, StopTime::At(4));
    // One-shot alarms latch, so B's first crossing completes the count.
    let r = scripted(&net, &FusionRuleSpec::MthAlarm { m: 2 }, 1.0, vec![a, b]);
    assert_eq!(r.time, StopTime::At(4));
}

#[test]
fn voting_needs_simultaneous_alarms() {
    let net = two_sensors();
    let a = vec![5.0, -10.0, -1.0, -1.0];
    let b = vec![-1.0, -1.0, 5.0, -10.0];
    let r = scripted(&net, &FusionRuleSpec::MVoting { m: 2 }, 1.0, vec![a.clone(), b.clone()]);
    assert_eq!(r.time, StopTime::Censored);
    let r = scripted(&net, &FusionRuleSpec::MthAlarm { m: 2 }, 1.0, vec![a, b]);
    assert_eq!(r.time, StopTime::At(3));
}

#[test]
fn weighted_voting_hand_trace() {
    let net = two_sensors();
    let rule = FusionRuleSpec::WeightedVoting { m: 1.0, weights: vec![0.3, 1.0] };
    let a = vec![5.0; 10];
    let b = vec![-1.0, -1.0, -1.0, -1.0, -1.0, 5.0, 5.0, 5.0, 5.0, 5.0];
    let r = scripted(&net, &rule, 1.0, vec![a.clone(), vec![-1.0; 10]]);
    assert_eq!(r.time, StopTime::Censored);
    let r = scripted(&net, &rule, 1.0, vec![a, b]);
    assert_eq!(r.time, StopTime::At(6));
}

#[test]
fn rule_validation() {
    let net = fig2();
    assert!(FusionRuleSpec::<f64>::MthAlarm { m: 0 }.validate(&net).is_err());
    assert!(FusionRuleSpec::<f64>::MVoting { m: 10 }.validate(&net).is_err());
    assert!(FusionRuleSpec::<f64>::MVoting { m: 9 }.validate(&net).is_ok());
    let sel = FusionRuleSpec::selection_of_groups(&net, &[3]).unwrap();
    assert!(FusionRuleSpec::MthAlarmWithin { m: 4, selection: sel.clone() }.validate(&net).is_err());
    assert!(FusionRuleSpec::MthAlarmWithin { m: 3, selection: sel }.validate(&net).is_ok());
    assert!(FusionRuleSpec::<f64>::MVotingWithin { m: 1, selection: vec![] }.validate(&net).is_err());
    let bad = vec![SensorId { k: 4, l: 1 }];
    assert!(FusionRuleSpec::<f64>::MVotingWithin { m: 1, selection: bad }.validate(&net).is_err());
    let dup = vec![SensorId { k: 1, l: 1 }, SensorId { k: 1, l: 1 }];
    assert!(FusionRuleSpec::<f64>::MVotingWithin { m: 1, selection: dup }.validate(&net).is_err());
    let w = vec![0.5; 9];
    assert!(FusionRuleSpec::WeightedVoting { m: 4.5, weights: w.clone() }.validate(&net).is_ok());
    assert!(FusionRuleSpec::WeightedVoting { m: 4.6, weights: w }.validate(&net).is_err());
    assert!(FusionRuleSpec::WeightedVoting { m: 1.0, weights: vec![1.2; 9] }.validate(&net).is_err());
    assert!(FusionRuleSpec::WeightedVoting { m: 1.0, weights: vec![1.0; 8] }.validate(&net).is_err());
}

#[test]
fn kld_weights_put_the_top_group_at_one() {
    let net = Network::gaussian(&[(6, n(0.0, 1.0), n(0.55, 1.0)), (4, n(0.0, 1.0), n(1.0, 1.0))]).unwrap();
    let w = FusionRuleSpec::kld_weights(&net);
    assert!((w[0] - 0.3025).abs() < 1e-12);
    assert_eq!(w[9], 1.0);
}

#[test]
fn first_alarm_on_one_sensor_is_the_local_stop() {
    let net = Network::gaussian(&[(1, n(0.0, 1.0), n(1.0, 1.0))]).unwrap();
    let group = net.groups()[0].clone();
    let th = ThresholdVector::kld(&net, 3.0).unwrap();
    let streams = StreamFactory::new(5, Domain::Custom(2));
    for regime in [Regime::PreChange, Regime::PostChange] {
        for trial in 0..300 {
            let mut rng = streams.sensor_stream(trial, 0);
            let local = run_local_sensor(&group, th.level(1), regime, 100_000, &mut rng).time;
            assert_eq!(time(&stop_m_th_alarm(&net, &th, 1, regime, 100_000, &streams, trial)), local);
            assert_eq!(time(&stop_m_voting(&net, &th, 1, regime, 100_000, &streams, trial)), local);
            assert_eq!(time(&stop_centralized_cusum(&net, th.level(1), regime, 100_000, &streams, trial)), local);
        }
    }
}

#[test]
fn last_alarm_is_the_max_of_local_stops() {
    let net = fig2();
    let th = ThresholdVector::kld(&net, 2.0).unwrap();
    let streams = StreamFactory::new(9, Domain::Custom(3));
    for trial in 0..1000 {
        let local_max = (0..net.total_sensors())
            .map(|i| {
                let g = &net.groups()[net.group_of(i)];
                let mut rng = streams.sensor_stream(trial, i);
                run_local_sensor(g, th.level(g.index()), Regime::PostChange, 100_000, &mut rng).time
            })
            .max()
            .unwrap();
        let joint = time(&stop_m_th_alarm(&net, &th, 9, Regime::PostChange, 100_000, &streams, trial));
        assert_eq!(joint, local_max, "trial {trial}");
    }
}

#[test]
fn pathwise_ordering_and_monotonicity_in_m() {
    let net = fig2();
    let streams = StreamFactory::new(21, Domain::Custom(4));
    let cap = 1_000_000;
    let c = net.klds();
    let mut buf = [StopTime::Censored];
    // Pre-change 9-voting needs all nine statistics positive at once; h = 0 keeps that reachable.
    for (regime, h) in [(Regime::PostChange, 1.5), (Regime::PreChange, 0.0)] {
        let alarm: Vec<_> = (1..=9)
            .map(|m| TrialSimulator::new(&net, &FusionRuleSpec::MthAlarm { m }, &c, &[h]).unwrap())
            .collect();
        let vote: Vec<_> = (1..=9)
            .map(|m| TrialSimulator::new(&net, &FusionRuleSpec::MVoting { m }, &c, &[h]).unwrap())
            .collect();
        for trial in 0..300 {
            let mut run = |sim: &TrialSimulator<f64, Gaussian>| {
                sim.run(regime, cap, &streams, trial, &mut buf);
                buf[0].time().expect("not censored")
            };
            let a: Vec<u64> = alarm.iter().map(&mut run).collect();
            let v: Vec<u64> = vote.iter().map(&mut run).collect();
            for m in 0..9 {
                assert!(a[0] <= a[m] && a[m] <= v[m] && v[m] <= v[8], "trial {trial} m {}", m + 1);
                if m > 0 {
                    assert!(a[m - 1] <= a[m] && v[m - 1] <= v[m]);
                }
            }
        }
    }
}

#[test]
fn multi_threshold_run_matches_single_runs() {
    let net = fig2();
    let streams = StreamFactory::new(77, Domain::Custom(5));
    let c = net.klds();
    let hs = [0.5, 1.0, 1.7, 2.5];
    let rules = vec![
        FusionRuleSpec::MthAlarm { m: 4 },
        FusionRuleSpec::MVoting { m: 3 },
        FusionRuleSpec::WeightedVoting { m: 2.5, weights: FusionRuleSpec::kld_weights(&net) },
        FusionRuleSpec::MthAlarmWithin { m: 2, selection: FusionRuleSpec::selection_of_groups(&net, &[2, 3]).unwrap() },
        FusionRuleSpec::CentralizedCusum,
        FusionRuleSpec::MixtureCusum,
    ];
    for rule in &rules {
        let multi = TrialSimulator::new(&net, rule, &c, &hs).unwrap();
        let singles: Vec<_> = hs.iter().map(|h| TrialSimulator::new(&net, rule, &c, &[*h]).unwrap()).collect();
        for regime in [Regime::PreChange, Regime::PostChange, Regime::ChangeAt(7)] {
            for trial in 0..100 {
                let mut out = [StopTime::Censored; 4];
                multi.run(regime, 200_000, &streams, trial, &mut out);
                for (j, s) in singles.iter().enumerate() {
                    let mut one = [StopTime::Censored];
                    s.run(regime, 200_000, &streams, trial, &mut one);
                    assert_eq!(out[j], one[0], "{rule:?} h={} trial {trial}", hs[j]);
                }
                assert!(out.windows(2).all(|w| w[0] <= w[1]));
            }
        }
    }
}

#[test]
fn selection_and_weight_equivalences() {
    let net = fig4();
    let th = ThresholdVector::kld(&net, 1.2).unwrap();
    let streams = StreamFactory::new(3, Domain::Custom(6));
    let all = FusionRuleSpec::selection_of_groups(&net, &[1, 2]).unwrap();
    let g1 = FusionRuleSpec::selection_of_groups(&net, &[1]).unwrap();
    let sub: Vec<SensorId> = g1.iter().take(4).copied().collect();
    let cap = 1_000_000;
    for regime in [Regime::PreChange, Regime::PostChange] {
        for trial in 0..200 {
            for m in 1..=4usize {
                let full_vote = time(&stop_m_voting(&net, &th, m, regime, cap, &streams, trial));
                let within_all = time(&stop_within(&net, &th, m, &all, RuleVariant::MVotingWithin, regime, cap, &streams, trial));
                assert_eq!(full_vote, within_all);
                let full_alarm = time(&stop_m_th_alarm(&net, &th, m, regime, cap, &streams, trial));
                let within_all = time(&stop_within(&net, &th, m, &all, RuleVariant::MthAlarmWithin, regime, cap, &streams, trial));
                assert_eq!(full_alarm, within_all);

                let ones = vec![1.0; net.total_sensors()];
                let equal = time(&stop_weighted_voting(&net, &th, m as f64, &ones, regime, cap, &streams, trial));
                assert_eq!(equal, full_vote);

                let within_g1 = time(&stop_within(&net, &th, m, &g1, RuleVariant::MVotingWithin, regime, cap, &streams, trial));
                let ind = FusionRuleSpec::indicator_weights(&net, &g1).unwrap();
                let weighted = time(&stop_weighted_voting(&net, &th, m as f64, &ind, regime, cap, &streams, trial));
                assert_eq!(weighted, within_g1);

                // D' ⊆ D never stops earlier.
                let within_sub = time(&stop_within(&net, &th, m, &sub, RuleVariant::MVotingWithin, regime, cap, &streams, trial));
                assert!(within_sub >= within_g1);
                assert!(within_g1 >= full_vote);
            }
        }
    }
}

#[test]
fn top_group_first_alarm_is_its_single_sensor() {
    let net = fig4();
    let th = ThresholdVector::kld(&net, 2.0).unwrap();
    let streams = StreamFactory::new(13, Domain::Custom(7));
    let g2 = FusionRuleSpec::selection_of_groups(&net, &[2]).unwrap();
    let sensor = net.flat_index(SensorId { k: 1, l: 2 }).unwrap();
    for trial in 0..500 {
        let mut rng = streams.sensor_stream(trial, sensor);
        let local = run_local_sensor(&net.groups()[1], th.level(2), Regime::PostChange, 100_000, &mut rng).time;
        let ruled = stop_within(&net, &th, 1, &g2, RuleVariant::MthAlarmWithin, Regime::PostChange, 100_000, &streams, trial).unwrap();
        assert_eq!(ruled.time, local);
        assert_eq!(ruled.triggering_set, vec![SensorId { k: 1, l: 2 }]);
    }
}

#[test]
fn monotone_in_h_on_shared_streams() {
    let net = fig2();
    let streams = StreamFactory::new(31, Domain::Custom(8));
    for trial in 0..200 {
        let mut prev = (StopTime::At(0), StopTime::At(0));
        for h in [0.0, 0.5, 1.0, 2.0, 3.0] {
            let th = ThresholdVector::kld(&net, h).unwrap();
            let a = time(&stop_m_th_alarm(&net, &th, 7, Regime::PreChange, 1_000_000, &streams, trial));
            let v = time(&stop_m_voting(&net, &th, 3, Regime::PreChange, 1_000_000, &streams, trial));
            assert!(a >= prev.0 && v >= prev.1);
            prev = (a, v);
        }
    }
}

#[test]
fn single_group_mixture_is_the_centralized_cusum() {
    let net = fig2().subnetwork(&[2]).unwrap();
    let streams = StreamFactory::new(8, Domain::Custom(9));
    for regime in [Regime::PreChange, Regime::PostChange] {
        for trial in 0..300 {
            let a = time(&stop_centralized_cusum(&net, 4.0, regime, 1_000_000, &streams, trial));
            let b = time(&stop_mixture_cusum(&net, 4.0, regime, 1_000_000, &streams, trial));
            assert_eq!(a, b);
        }
    }
}

#[test]
fn mixture_llr_matches_direct_density_ratio() {
    let net = fig4();
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt();
    for &x in &[0.0, -1.3, 0.7, 2.5] {
        let direct = ((8.0 / 9.0) * pdf(x, 0.35, 1.0) + (1.0 / 9.0) * pdf(x, 2.0, 4.0)).ln() - pdf(x, 0.0, 1.0).ln();
        assert!((mixture_llr(&net, x) - direct).abs() < 1e-12, "x={x}");
    }
}

#[test]
fn mixture_with_distinct_pre_laws_uses_mixture_denominator() {
    let g1 = SensorGroup::new(1, 1, n(0.0, 1.0), n(1.0, 1.0)).unwrap();
    let g2 = SensorGroup::new(2, 3, n(1.0, 2.0), n(0.0, 2.0)).unwrap();
    let net = Network::new(vec![g1, g2]).unwrap();
    let pdf = |x: f64, m: f64, v: f64| (-(x - m) * (x - m) / (2.0 * v)).exp() / (std::f64::consts::TAU * v).sqrt();
    let x = 0.4;
    let direct = (0.25 * pdf(x, 1.0, 1.0) + 0.75 * pdf(x, 0.0, 2.0)).ln() - (0.25 * pdf(x, 0.0, 1.0) + 0.75 * pdf(x, 1.0, 2.0)).ln();
    assert!((mixture_llr(&net, x) - direct).abs() < 1e-12);
}

#[test]
fn rejects_unsorted_or_negative_thresholds() {
    let net = fig2();
    let c = net.klds();
    let rule = FusionRuleSpec::MthAlarm { m: 1 };
    assert!(TrialSimulator::new(&net, &rule, &c, &[2.0, 1.0]).is_err());
    assert!(TrialSimulator::new(&net, &rule, &c, &[-1.0]).is_err());
    assert!(TrialSimulator::new(&net, &rule, &c, &[]).is_err());
    assert!(TrialSimulator::new(&net, &rule, &c[..2], &[1.0]).is_err());
    assert!(ThresholdVector::new(1.0, vec![1.0, 0.0]).is_err());
    assert!(stop_within(&net, &ThresholdVector::kld(&net, 1.0).unwrap(), 1, &[], RuleVariant::MVoting, Regime::PreChange, 10, &StreamFactory::new(0, Domain::Arl), 0).is_err());
}

#[test]
fn f32_engine_runs() {
    let f = Gaussian::<f32>::standard();
    let net = Network::<f32>::gaussian(&[(3, f, Gaussian::new(1.0f32, 1.0).unwrap())]).unwrap();
    let th = ThresholdVector::kld(&net, 4.0f32).unwrap();
    let streams = StreamFactory::new(1, Domain::Custom(10));
    let r = stop_m_voting(&net, &th, 2, Regime::PostChange, 10_000, &streams, 0).unwrap();
    assert!(r.time.time().is_some());
}
