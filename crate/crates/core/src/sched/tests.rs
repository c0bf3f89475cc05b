use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn constants(values: &[f64], weights: &[f64]) -> CombinerFamily {
    let members = values.iter().map(|&a| CutoffSequence::Constant { alpha: a }).collect();
    CombinerFamily::new(members, weights.to_vec()).unwrap()
}

fn assert_close(a: f64, b: f64, rel: f64) {
    assert!((a - b).abs() <= rel * a.abs().max(b.abs()), "{a} vs {b}");
}

// Upper 0.001 tail of the chi-square law (Wilson–Hilferty).
fn chi_square_critical(df: usize) -> f64 {
    let k = df as f64;
    let h = 2.0 / (9.0 * k);
    k * (1.0 - h + 3.0902 * h.sqrt()).powi(3)
}

fn chi_square(counts: &[u64], probs: &[f64]) -> (f64, usize) {
    let n: u64 = counts.iter().sum();
    let (mut stat, mut bins) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (&c, &p) in counts.iter().zip(probs) {
        let e = p * n as f64;
        if e < 5.0 {
            pooled_obs += c as f64;
            pooled_exp += e;
            continue;
        }
        stat += (c as f64 - e).powi(2) / e;
        bins += 1;
    }
    if pooled_exp > 0.0 {
        stat += (pooled_obs - pooled_exp).powi(2) / pooled_exp.max(1e-300);
        bins += 1;
    }
    (stat, bins - 1)
}

#[test]
fn two_constants_selection() {
    let family = constants(&[4.0, 2.0], &[0.5, 0.5]);
    let p = family.start().selection_probabilities();
    assert_close(p[0], 1.0 / 3.0, 1e-15);
    assert_close(p[1], 2.0 / 3.0, 1e-15);
}

#[test]
fn single_member_follows_its_sequence() {
    let family = CombinerFamily::new(vec![CutoffSequence::Luby], vec![1.0]).unwrap();
    let mut state = family.start();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cutoffs: Vec<f64> = (0..15).map(|_| state.next(&mut rng)).inspect(|d| assert_eq!(d.index, 0)).map(|d| d.cutoff).collect();
    assert_eq!(cutoffs, CutoffSequence::Luby.prefix(15));
}

#[test]
fn sprs_first_draw_follows_weights() {
    let family = CombinerFamily::sprs(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    assert_eq!(family.len(), 65);
    let p = family.start().selection_probabilities();
    assert_eq!(p[0], p[1]);
    let z: f64 = (0..=64).map(|i| 1.0 / WeightFunction::PolyLog.phi(i as f64)).sum();
    for (i, pi) in p.iter().enumerate() {
        assert_close(*pi, 1.0 / WeightFunction::PolyLog.phi(i as f64) / z, 1e-12);
    }
}

#[test]
fn sprs_weight_decays_with_runs() {
    let family = CombinerFamily::sprs(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    let mut state = family.start();
    let fresh = state.weight(0);
    for _ in 0..10 {
        state.advance(0);
    }
    assert_close(state.weight(0), fresh * 0.75f64.powi(10), 1e-12);
    for _ in 0..3 {
        state.advance(2);
    }
    let d = state.advance(2);
    assert_close(d.cutoff, (15.0f64 / 16.0).powi(-3), 1e-14);
}

#[test]
fn poly_log_normalizer() {
    let w = WeightFunction::PolyLog;
    assert_eq!(w.phi(0.0), 1.0);
    assert_eq!(w.phi(1.0), 1.0);
    assert_eq!(w.phi(4.0), 17.0);
    // integral tail bound: Σ_{i>N} 1/(i log²i) ≤ ln 2 / log₂ N
    let n = 1_000_000usize;
    let certified = w.partial_sum(n) + std::f64::consts::LN_2 / (n as f64).log2();
    assert!(certified <= w.certified_sum_bound(), "{certified}");
    let retained: f64 = (0..=DEFAULT_I_MAX).map(|i| w.weight(i)).sum();
    assert!(retained <= 1.0 + 1e-12, "{retained}");
    let p = WeightFunction::Power1PlusEps { eps: 0.5 };
    assert!(p.partial_sum(n) <= p.certified_sum_bound());
    assert!(p.partial_sum(n) <= p.normalizer());
    assert!(WeightFunction::Power1PlusEps { eps: 0.0 }.validate().is_err());
}

#[test]
fn ssprs_flat_family_layout() {
    let family = CombinerFamily::ssprs(WeightFunction::PolyLog, 3).unwrap();
    assert_eq!(family.len(), 9);
    assert_eq!(family.members()[0], CutoffSequence::Luby);
    assert_eq!(family.members()[5], CutoffSequence::GeometricQuantile { q: 0.125 });
    assert_eq!(family.members()[6], CutoffSequence::Constant { alpha: 8.0 });
    assert_close(family.weights()[0], 1.0 / 3.0, 1e-15);
    assert_close(family.weights()[6], 1.0 / (3.0 * 2.8 * WeightFunction::PolyLog.phi(2.0)), 1e-15);
}

#[test]
fn ssprs_first_draw_exact() {
    let w = WeightFunction::PolyLog;
    let flat = CombinerFamily::ssprs(w, DEFAULT_I_MAX).unwrap();
    let p = flat.start().selection_probabilities();
    let c = w.normalizer();
    let z = 1.0 / 3.0
        + (0..=DEFAULT_I_MAX)
            .map(|i| (1.0 + 2f64.powi(-(i as i32) - 1)) / (3.0 * c * w.phi(i as f64)))
            .sum::<f64>();
    assert_close(p[0], (1.0 / 3.0) / z, 1e-12);
    // the flat combiner does not give the Luby member a third of the first draws
    assert!(p[0] > 0.43 && p[0] < 0.45, "{}", p[0]);

    let two = TwoStageSsprs::new(w, DEFAULT_I_MAX).unwrap();
    let q = two.start().selection_probabilities();
    assert_eq!(q[0], 1.0 / 3.0);
    assert_close(q.iter().sum::<f64>(), 1.0, 1e-12);
    let const_total: f64 = (0..=DEFAULT_I_MAX).map(|i| 2f64.powi(-(i as i32) - 1) / w.phi(i as f64)).sum();
    for i in 0..=DEFAULT_I_MAX {
        let expected = 2f64.powi(-(i as i32) - 1) / w.phi(i as f64) / const_total / 3.0;
        assert_close(q[2 * i + 2], expected, 1e-12);
    }
}

#[test]
fn two_stage_constant_branch() {
    let two = TwoStageSsprs::new(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    let mut state = two.start();
    assert_eq!(state.advance(8).cutoff, 16.0);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let before = state.selection_probabilities();
    for _ in 0..1000 {
        let d = state.next(&mut rng);
        if d.index > 0 && d.index.is_multiple_of(2) {
            assert_eq!(d.cutoff, 2f64.powi((d.index / 2) as i32));
        }
    }
    let after = state.selection_probabilities();
    for i in 0..=DEFAULT_I_MAX {
        assert_eq!(before[2 * i + 2], after[2 * i + 2]);
    }
}

fn chi_square_mid_run(mut state_probs: impl FnMut(&mut ChaCha8Rng) -> (Vec<f64>, Vec<u64>)) {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (probs, counts) = state_probs(&mut rng);
    let (stat, df) = chi_square(&counts, &probs);
    assert!(stat < chi_square_critical(df), "chi2 {stat} with df {df}");
}

#[test]
fn two_stage_sampler_matches_its_law_mid_run() {
    let two = TwoStageSsprs::new(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    chi_square_mid_run(|rng| {
        let mut state = two.start();
        for _ in 0..5000 {
            state.next(rng);
        }
        let probs = state.selection_probabilities();
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..1_000_000 {
            counts[state.sample_index(rng)] += 1;
        }
        (probs, counts)
    });
}

#[test]
fn flat_sampler_matches_its_law_mid_run() {
    let flat = CombinerFamily::ssprs(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    chi_square_mid_run(|rng| {
        let mut state = flat.start();
        for _ in 0..5000 {
            state.next(rng);
        }
        let probs = state.selection_probabilities();
        let mut counts = vec![0u64; probs.len()];
        for _ in 0..1_000_000 {
            counts[state.sample_index(rng)] += 1;
        }
        (probs, counts)
    });
}

#[test]
fn counters_add_up_and_seeds_reproduce() {
    let family = CombinerFamily::sprs(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    let run = |seed: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = family.start();
        let draws: Vec<(usize, u64)> = (0..10_000).map(|_| state.next(&mut rng)).map(|d| (d.index, d.cutoff.to_bits())).collect();
        assert_eq!(state.counts().iter().sum::<u64>(), 10_000);
        assert_eq!(state.draws(), 10_000);
        draws
    };
    assert_eq!(run(5), run(5));
    assert_ne!(run(5), run(6));
}

#[test]
fn running_normalizer_stays_accurate() {
    let family = CombinerFamily::sprs(WeightFunction::PolyLog, DEFAULT_I_MAX).unwrap();
    let mut state = family.start();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..200_000 {
        state.next(&mut rng);
        let exact: f64 = (0..family.len()).map(|i| state.weight(i)).sum();
        assert!((state.z - exact).abs() <= 1e-9 * exact);
    }
}

#[test]
fn combine_rejects_bad_families() {
    assert!(CombinerFamily::new(vec![], vec![]).is_err());
    assert!(CombinerFamily::new(vec![CutoffSequence::Luby], vec![0.0]).is_err());
    assert!(CombinerFamily::new(vec![CutoffSequence::Luby, CutoffSequence::Luby], vec![0.7, 0.7]).is_err());
    assert!(CombinerFamily::sprs(WeightFunction::PolyLog, MAX_I_MAX + 1).is_err());
    let nested = r#"{"strategy":"combine","parts":[{"strategy":"sprs"}],"weights":[1]}"#;
    assert!(nested.parse::<StrategySpec>().is_err());
}

#[test]
fn strategy_specs_parse() {
    let cases = [
        (r#"{"strategy":"luby"}"#, StrategySpec::Luby),
        (r#"{"strategy":"quantile","q":0.5}"#, StrategySpec::Quantile { q: 0.5 }),
        (r#"{"strategy":"constant","alpha":8}"#, StrategySpec::Constant { alpha: 8.0 }),
        (r#"{"strategy":"sprs","i_max":64}"#, StrategySpec::Sprs { i_max: 64, weights: WeightFunction::PolyLog }),
        (
            r#"{"strategy":"ssprs","i_max":64}"#,
            StrategySpec::Ssprs { i_max: 64, weights: WeightFunction::PolyLog, mode: SsprsMode::Flat },
        ),
    ];
    for (text, expected) in cases {
        let parsed: StrategySpec = text.parse().unwrap();
        assert_eq!(parsed, expected);
        let again: StrategySpec = serde_json::to_string(&parsed).unwrap().parse().unwrap();
        assert_eq!(again, parsed);
    }
    let combine = r#"{"strategy":"combine","parts":[{"strategy":"constant","alpha":4},{"strategy":"luby"}],"weights":[0.5,0.5]}"#;
    let s = combine.parse::<StrategySpec>().unwrap().build().unwrap();
    assert_eq!(s.family().unwrap().len(), 2);
    assert_eq!("quantile:0.25".parse::<StrategySpec>().unwrap(), StrategySpec::Quantile { q: 0.25 });
    assert_eq!("explicit:1,2,3".parse::<StrategySpec>().unwrap(), StrategySpec::Explicit { cutoffs: vec![1.0, 2.0, 3.0] });
    assert!(matches!("ssprs_two_stage:8".parse::<StrategySpec>().unwrap(), StrategySpec::Ssprs { i_max: 8, mode: SsprsMode::TwoStage, .. }));
    assert!("lubby".parse::<StrategySpec>().is_err());
    assert!("quantile:2".parse::<StrategySpec>().is_err());
    assert!(r#"{"strategy":"constant","alpha":8,"beta":1}"#.parse::<StrategySpec>().is_err());
    let two = "ssprs_two_stage".parse::<StrategySpec>().unwrap();
    assert_eq!(two.build().unwrap().to_spec(), two);
}
