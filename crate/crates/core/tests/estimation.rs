use approx::assert_relative_eq;
use evict::catalog::{CANCEL_RATE, LAMBDA, SIGMA, TRAVEL_BETA};
use evict::estimation::*;
use evict::synth::{synth_corpus, CalibrationTargets};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

fn cs(duration: f64, observed: bool) -> CensoredSample {
    CensoredSample { duration, observed }
}

/// Product-limit survival curve built from distinct event times; the mean is
/// the sum of the curve's drops times the drop location.
fn km_oracle(samples: &[CensoredSample]) -> f64 {
    let mut times: Vec<f64> = samples.iter().filter(|s| s.observed).map(|s| s.duration).collect();
    times.sort_by(|a, b| a.total_cmp(b));
    times.dedup();
    let mut surv = 1.0;
    let mut mean = 0.0;
    for t in times {
        let at_risk = samples.iter().filter(|s| s.duration >= t).count() as f64;
        let events = samples.iter().filter(|s| s.observed && s.duration == t).count() as f64;
        let next = surv * (1.0 - events / at_risk);
        mean += (surv - next) * t;
        surv = next;
    }
    mean
}

#[test]
fn two_point_mle() {
    let e = mle_arrivals(&[2.0, 4.0]).unwrap();
    assert_eq!(e.lambda, 3.0);
    assert_eq!(e.sigma * e.sigma, 1.0);
}

#[test]
fn constant_series_has_zero_sigma() {
    let e = mle_arrivals(&[5.0; 30]).unwrap();
    assert_eq!(e.lambda, 5.0);
    assert_eq!(e.sigma, 0.0);
}

#[test]
fn mle_needs_two_days() {
    assert!(mle_arrivals(&[]).is_err());
    assert!(mle_arrivals(&[1.0]).is_err());
}

#[test]
fn gaussian_arrivals_are_recovered_within_three_standard_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(6.7519, 4.1093).unwrap();
    let daily: Vec<f64> = (0..1080).map(|_| normal.sample(&mut rng)).collect();
    let e = mle_arrivals(&daily).unwrap();
    let se = 4.1093 / (1080f64).sqrt();
    assert!((e.lambda - 6.7519).abs() < 3.0 * se, "{} vs 6.7519", e.lambda);
    assert!((e.sigma - 4.1093).abs() / 4.1093 < 0.1);
}

#[test]
fn km_without_censoring_is_the_sample_mean() {
    let e = km_mean(&[cs(1.0, true), cs(2.0, true), cs(3.0, true)], false).unwrap();
    assert_relative_eq!(e.t_hat, 2.0, epsilon = 1e-12);
}

#[test]
fn km_weight_moves_to_the_last_observation() {
    let e = km_mean(&[cs(1.0, false), cs(2.0, true)], false).unwrap();
    assert_relative_eq!(e.t_hat, 2.0, epsilon = 1e-12);
}

#[test]
fn all_censored_is_an_error() {
    assert!(km_mean(&[cs(1.0, false), cs(4.0, false)], false).is_err());
    assert!(km_mean(&[cs(1.0, true)], false).is_err());
}

#[test]
fn bias_term_only_when_the_largest_is_observed_after_a_censored_one() {
    let e = km_mean(&[cs(1.0, true), cs(2.0, false), cs(5.0, true)], false).unwrap();
    // N = 3: product over k = 1 of ((N-1-k)/(N-k))^delta_k = 1/2
    assert_relative_eq!(e.bias, -(2.0 / 3.0) * 5.0 * 0.5, epsilon = 1e-12);
    assert_relative_eq!(e.t_tilde, e.t_hat - e.bias, epsilon = 1e-12);
    assert_relative_eq!(e.rate, 1.0 / e.t_tilde, epsilon = 1e-12);
    let none = km_mean(&[cs(1.0, true), cs(2.0, true), cs(5.0, true)], false).unwrap();
    assert_eq!(none.bias, 0.0);
}

#[test]
fn exponential_cancellations_under_censoring_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cancel = Exp::new(CANCEL_RATE).unwrap();
    // heavier censoring truncates the observed tail and the integral becomes a restricted mean
    let service = Exp::new(0.004).unwrap();
    let samples: Vec<CensoredSample> = (0..40_000)
        .map(|_| {
            let (c, s): (f64, f64) = (cancel.sample(&mut rng), service.sample(&mut rng));
            cs(c.min(s), c <= s)
        })
        .collect();
    let e = km_mean(&samples, false).unwrap();
    assert!((e.rate - CANCEL_RATE).abs() / CANCEL_RATE < 0.1, "rate {}", e.rate);
}

#[test]
fn trimming_drops_each_tail_per_group() {
    let s: Vec<CensoredSample> = (0..20).map(|i| cs(i as f64, i % 2 == 0)).collect();
    let t = trim_samples(&s, 0.1);
    assert_eq!(t.len(), 16);
    for flag in [true, false] {
        let d: Vec<f64> = t.iter().filter(|x| x.observed == flag).map(|x| x.duration).collect();
        let all: Vec<f64> = s.iter().filter(|x| x.observed == flag).map(|x| x.duration).collect();
        assert!(!d.contains(&all[0]) && !d.contains(all.last().unwrap()));
    }
}

#[test]
fn travel_fit_is_exact_on_a_line() {
    assert_relative_eq!(travel_regression(&[(1.0, 2.0), (2.0, 4.0)]).unwrap(), 2.0, epsilon = 1e-12);
    assert_relative_eq!(travel_regression(&[(3.0, 5.9376)]).unwrap(), 1.9792, epsilon = 1e-12);
}

#[test]
fn travel_fit_needs_distance() {
    assert!(travel_regression(&[]).is_err());
    assert!(travel_regression(&[(0.0, 3.0), (0.0, 1.0)]).is_err());
}

#[test]
fn noisy_travel_times_recover_beta() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let km = rand_distr::Uniform::new(0.5, 30.0).unwrap();
    let noise = Normal::new(0.0, 5.0).unwrap();
    let pairs: Vec<(f64, f64)> = (0..5000)
        .map(|_| {
            let d = km.sample(&mut rng);
            (d, TRAVEL_BETA * d + noise.sample(&mut rng))
        })
        .collect();
    let b = travel_regression(&pairs).unwrap();
    assert!((b - TRAVEL_BETA).abs() / TRAVEL_BETA < 0.02, "beta {b}");
}

#[test]
fn empirical_dist_summary_and_support() {
    assert!(EmpiricalDist::new(vec![]).is_err());
    assert!(EmpiricalDist::new(vec![1.0, f64::NAN]).is_err());
    let d = EmpiricalDist::new(vec![4.0, 1.0, 3.0, 2.0]).unwrap();
    assert_eq!(d.mean(), 2.5);
    assert_eq!(d.median(), 2.5);
    assert_relative_eq!(d.std_dev(), (5.0f64 / 3.0).sqrt(), epsilon = 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut seen = [false; 4];
    for _ in 0..200 {
        let x = d.sample(&mut rng);
        assert!(d.values().contains(&x));
        seen[x as usize - 1] = true;
    }
    assert!(seen.iter().all(|&s| s));
}

fn small_targets() -> CalibrationTargets {
    CalibrationTargets { days: 200, ..CalibrationTargets::default() }
}

#[test]
fn corpus_is_deterministic_under_a_seed() {
    let a = synth_corpus(&small_targets(), 9).unwrap();
    let b = synth_corpus(&small_targets(), 9).unwrap();
    assert_eq!(a, b);
    let c = synth_corpus(&small_targets(), 10).unwrap();
    assert_ne!(a.records, c.records);
}

#[test]
fn corpus_csv_round_trip() {
    let c = synth_corpus(&CalibrationTargets { days: 20, ..CalibrationTargets::default() }, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.csv");
    c.write_csv(&path).unwrap();
    let back = evict::synth::Corpus::read_records_csv(&path).unwrap();
    assert_eq!(back.len(), c.records.len());
    for (x, y) in back.iter().zip(&c.records) {
        assert_eq!((x.id, x.zone, x.outcome, x.outcome_day, x.deadline_day), (y.id, y.zone, y.outcome, y.outcome_day, y.deadline_day));
        assert_relative_eq!(x.lat, y.lat, epsilon = 1e-12);
    }
}

#[test]
fn corpus_round_trip_recovers_the_targets() {
    let t = CalibrationTargets::default();
    let c = synth_corpus(&t, 5).unwrap();
    let r = estimate_all(&c.records, c.k, c.days).unwrap();
    for (class, a) in r.arrivals.iter().enumerate() {
        let se = SIGMA[class] / (a.days as f64).sqrt();
        assert!((a.lambda - LAMBDA[class]).abs() < 3.0 * se, "class {}: {} vs {}", class + 1, a.lambda, LAMBDA[class]);
    }
    assert!((r.cancellation.rate - CANCEL_RATE).abs() / CANCEL_RATE < 0.1, "rate {}", r.cancellation.rate);
    assert!((r.travel_beta - TRAVEL_BETA).abs() / TRAVEL_BETA < 0.02, "beta {}", r.travel_beta);
    assert!(r.deadline_median > 60.0 && r.deadline_median < 85.0);
}

#[test]
fn every_record_has_a_consistent_outcome() {
    let c = synth_corpus(&small_targets(), 4).unwrap();
    for r in &c.records {
        assert!(r.outcome_day > r.received_day);
        assert_eq!(r.has_deadline, r.deadline_day.is_some());
        if let Some(d) = r.deadline_day {
            assert!(r.outcome_day <= d);
        }
        if r.outcome == Outcome::Missed {
            assert_eq!(Some(r.outcome_day), r.deadline_day);
        }
        assert_eq!(r.team.is_some(), r.outcome == Outcome::Served);
    }
}

proptest! {
    #[test]
    fn km_matches_the_product_limit_oracle(
        raw in prop::collection::vec((0u32..40, any::<bool>()), 2..40)
    ) {
        let s: Vec<CensoredSample> = raw.iter().map(|&(d, o)| cs(d as f64, o)).collect();
        prop_assume!(s.iter().any(|x| x.observed));
        let e = km_mean(&s, false).unwrap();
        prop_assert!((e.t_hat - km_oracle(&s)).abs() < 1e-9 * (1.0 + e.t_hat));
    }

    #[test]
    fn km_uncensored_equals_mean(d in prop::collection::vec(0.0f64..500.0, 2..60)) {
        let s: Vec<CensoredSample> = d.iter().map(|&x| cs(x, true)).collect();
        let e = km_mean(&s, false).unwrap();
        let m = d.iter().sum::<f64>() / d.len() as f64;
        prop_assert!((e.t_hat - m).abs() < 1e-9 * (1.0 + m));
        prop_assert_eq!(e.bias, 0.0);
    }
}
