use fissile_uq::dataset::TrainingDataset;
use fissile_uq::inference::{
    find_map, gaussian_log_likelihood, marginal_grid, run_adaptive_metropolis, sample_posterior, sequential_pipeline,
    single_pipeline, AmConfig, Coordinates, InferenceConfig, Kde, KdeMode, ObservationSet, Posterior, Prior, SamplingMap,
};
use fissile_uq::space::{Output, ParamBox, Parameter};
use fissile_uq::surrogate::{GpSurrogate, PriorMean, SurrogateConfig};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn unit_box(params: Vec<Parameter>) -> ParamBox {
    let p = params.len();
    ParamBox::new(params, vec![0.0; p], vec![1.0; p]).unwrap()
}

fn gp_config() -> SurrogateConfig {
    SurrogateConfig {
        latents: 1,
        prior: PriorMean::Zero,
        log_outputs: vec![],
        known_noise: false,
        noise_bounds: [1e-6, 1e-4],
        ..Default::default()
    }
}

/// Surrogate of the identity map x -> x on the unit interval.
fn identity_gp() -> GpSurrogate {
    let xs: Vec<Vec<f64>> = (0..11).map(|i| vec![i as f64 / 10.0]).collect();
    let ds = TrainingDataset::from_rows(vec![Parameter::Kp], vec![Output::RateN], unit_box(vec![Parameter::Kp]), &xs, &xs, None, None)
        .unwrap();
    GpSurrogate::train(&ds, &gp_config(), None).unwrap()
}

/// Surrogate on (k_p, eps_F) whose single output depends on eps_F only.
fn second_coordinate_gp() -> GpSurrogate {
    let mut xs = Vec::new();
    for i in 0..5 {
        for j in 0..5 {
            xs.push(vec![i as f64 / 4.0, j as f64 / 4.0]);
        }
    }
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[1]]).collect();
    let ds = TrainingDataset::from_rows(
        vec![Parameter::Kp, Parameter::EpsF],
        vec![Output::RateG],
        unit_box(vec![Parameter::Kp, Parameter::EpsF]),
        &xs,
        &ys,
        None,
        None,
    )
    .unwrap();
    GpSurrogate::train(&ds, &gp_config(), None).unwrap()
}

fn observed(output: Output, mean: f64, var: f64, n: usize) -> ObservationSet {
    ObservationSet::with_covariance(vec![output], vec![mean], DMatrix::from_element(1, 1, var), n).unwrap()
}

fn short_chains() -> InferenceConfig {
    InferenceConfig {
        am: AmConfig {
            steps: 40_000,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn replicate_count_scales_mean_covariance() {
    let cov = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0]);
    let a = ObservationSet::with_covariance(vec![Output::RateN, Output::YN], vec![0.0; 2], cov.clone(), 10).unwrap();
    let b = ObservationSet::with_covariance(vec![Output::RateN, Output::YN], vec![0.0; 2], cov, 20).unwrap();
    assert_eq!(a.mean_covariance(), b.mean_covariance() * 2.0);
}

#[test]
fn adaptive_metropolis_recovers_gaussian() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.6, 0.6, 2.0]);
    let prec = cov.clone().try_inverse().unwrap();
    let target = |x: &[f64]| {
        let v = DVector::from_column_slice(x);
        -0.5 * (v.transpose() * &prec * &v)[(0, 0)]
    };
    let cfg = AmConfig {
        steps: 200_000,
        initial_scale: 0.5,
        ..Default::default()
    };
    let chain = run_adaptive_metropolis(target, &[0.5, -0.5], 11, &cfg).unwrap();
    assert!((0.1..=0.5).contains(&chain.acceptance), "acceptance {}", chain.acceptance);
    let n = chain.samples.len() as f64;
    let m: Vec<f64> = (0..2).map(|j| chain.samples.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    assert!(m.iter().all(|v| v.abs() < 0.05), "mean {m:?}");
    for a in 0..2 {
        for b in 0..2 {
            let c = chain.samples.iter().map(|s| (s[a] - m[a]) * (s[b] - m[b])).sum::<f64>() / (n - 1.0);
            assert!((c - cov[(a, b)]).abs() < 0.1 * cov[(a, b)], "cov[{a},{b}] = {c}");
        }
    }
}

#[test]
fn adaptive_metropolis_on_flat_box_is_uniform() {
    let target = |x: &[f64]| if (0.0..=1.0).contains(&x[0]) { 0.0 } else { f64::NEG_INFINITY };
    let cfg = AmConfig {
        steps: 400_000,
        initial_scale: 0.3,
        ..Default::default()
    };
    let chain = run_adaptive_metropolis(target, &[0.5], 12, &cfg).unwrap();
    let mut v: Vec<f64> = chain.samples.iter().step_by(200).map(|s| s[0]).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let d = v
        .iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max);
    // Kolmogorov critical value at the 1% level
    assert!(d < 1.628 / n.sqrt(), "KS distance {d} over {n} samples");
}

#[test]
fn kde_of_standard_normal() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let samples: Vec<Vec<f64>> = (0..4000).map(|_| vec![StandardNormal.sample(&mut rng)]).collect();
    let kde = Kde::fit(&samples, KdeMode::Joint).unwrap();
    let peak = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((kde.density(&[0.0]) / peak - 1.0).abs() < 0.15);
    let h = 0.01;
    let mass: f64 = (-800..800).map(|i| kde.density(&[(i as f64 + 0.5) * h]) * h).sum();
    assert!((mass - 1.0).abs() < 0.02, "mass {mass}");
    assert!((-800..800).all(|i| kde.density(&[i as f64 * h]) >= 0.0));
    let shifted: Vec<Vec<f64>> = samples.iter().map(|s| vec![s[0] + 3.0]).collect();
    let moved = Kde::fit(&shifted, KdeMode::Joint).unwrap();
    for x in [-1.0, 0.0, 0.7] {
        assert!((moved.log_density(&[x + 3.0]) - kde.log_density(&[x])).abs() < 1e-9);
    }
}

#[test]
fn marginal_kde_factorizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let samples: Vec<Vec<f64>> = (0..500)
        .map(|_| vec![StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)])
        .collect();
    let joint = Kde::fit(&samples, KdeMode::Marginals).unwrap();
    let a = Kde::fit(&samples.iter().map(|s| vec![s[0]]).collect::<Vec<_>>(), KdeMode::Joint).unwrap();
    let b = Kde::fit(&samples.iter().map(|s| vec![s[1]]).collect::<Vec<_>>(), KdeMode::Joint).unwrap();
    let x = [0.3, -1.2];
    assert!((joint.log_density(&x) - a.log_density(&x[..1]) - b.log_density(&x[1..])).abs() < 1e-12);
}

#[test]
fn map_search_finds_quadratic_peak() {
    let target = |x: &[f64]| -((x[0] - 0.3).powi(2) + 4.0 * (x[1] - 0.7).powi(2));
    let chain = vec![vec![0.1, 0.1], vec![0.5, 0.5], vec![0.9, 0.2]];
    let values: Vec<f64> = chain.iter().map(|x| target(x)).collect();
    let (x, v) = find_map(target, &chain, &values, 2, &[0.0, 0.0], &[1.0, 1.0]);
    assert!((x[0] - 0.3).abs() < 1e-3 && (x[1] - 0.7).abs() < 1e-3, "{x:?}");
    assert!(v >= values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
}

#[test]
fn identity_surrogate_gives_gaussian_posterior() {
    let gp = identity_gp();
    let obs = observed(Output::RateN, 0.5, 0.01, 4);
    let design = unit_box(vec![Parameter::Kp]);
    let s = single_pipeline(&obs, &gp, &design, &short_chains(), 21).unwrap();
    let (m, sd) = moments(&s.column(Parameter::Kp).unwrap());
    assert!((m - 0.5).abs() < 0.01, "mean {m}");
    assert!((sd / 0.05 - 1.0).abs() < 0.1, "sd {sd}");
    assert!((s.map[0] - 0.5).abs() < 0.01);
    assert!(s.map_log_posterior >= s.log_posterior.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let grid = marginal_grid(&s, Parameter::Kp, Parameter::Kp, &design, 20).unwrap();
    let mass: f64 = grid.iter().map(|r| r[2]).sum::<f64>() / 400.0;
    assert!((mass - 1.0).abs() < 1e-12);
}

#[test]
fn posterior_sampling_is_reproducible() {
    let gp = identity_gp();
    let obs = observed(Output::RateN, 0.4, 0.02, 4);
    let design = unit_box(vec![Parameter::Kp]);
    let cfg = InferenceConfig {
        am: AmConfig {
            steps: 5_000,
            ..Default::default()
        },
        ..Default::default()
    };
    let a = single_pipeline(&obs, &gp, &design, &cfg, 5).unwrap();
    let b = single_pipeline(&obs, &gp, &design, &cfg, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.chain, single_pipeline(&obs, &gp, &design, &cfg, 6).unwrap().chain);
}

#[test]
fn posterior_vanishes_outside_prior_box() {
    let gp = identity_gp();
    let obs = observed(Output::RateN, 0.5, 0.01, 4);
    let design = ParamBox::new(vec![Parameter::Kp], vec![0.2], vec![0.8]).unwrap();
    let post = Posterior::new(&gp, &obs, Prior::uniform(design).unwrap()).unwrap();
    assert_eq!(post.log_posterior(&[0.1]), f64::NEG_INFINITY);
    assert_eq!(post.log_posterior(&[0.9]), f64::NEG_INFINITY);
    assert!(post.log_posterior(&[0.5]).is_finite());
}

#[test]
fn uninformative_second_stage_keeps_first_marginal() {
    let (g1, g2) = (identity_gp(), second_coordinate_gp());
    let o1 = observed(Output::RateN, 0.5, 0.01, 4);
    let o2 = observed(Output::RateG, 0.3, 0.01, 4);
    let design = unit_box(vec![Parameter::Kp, Parameter::EpsF]);
    let r = sequential_pipeline((&o1, &g1), (&o2, &g2), &design, &short_chains(), 31).unwrap();
    assert_eq!(r.shared, vec![Parameter::Kp]);
    let (m1, s1) = moments(&r.first.column(Parameter::Kp).unwrap());
    let (m2, s2) = moments(&r.second.column(Parameter::Kp).unwrap());
    assert!((m1 - m2).abs() < 0.01, "{m1} vs {m2}");
    assert!((s2 / s1 - 1.0).abs() < 0.1, "{s1} vs {s2}");
    let (e, _) = moments(&r.second.column(Parameter::EpsF).unwrap());
    assert!((e - 0.3).abs() < 0.01);
}

#[test]
fn kde_prior_is_zero_outside_the_box() {
    let gp = second_coordinate_gp();
    let obs = observed(Output::RateG, 0.3, 0.01, 4);
    let design = unit_box(vec![Parameter::Kp, Parameter::EpsF]);
    let samples: Vec<Vec<f64>> = (0..200).map(|i| vec![0.4 + 0.001 * i as f64]).collect();
    let prior = Prior::kde(design, &[Parameter::Kp], samples, KdeMode::Joint).unwrap();
    let post = Posterior::new(&gp, &obs, prior).unwrap();
    assert_eq!(post.log_posterior(&[1.2, 0.3]), f64::NEG_INFINITY);
    assert!(post.log_posterior(&[0.5, 0.3]).is_finite());
    let s = sample_posterior(&post, &short_chains(), 3).unwrap();
    assert!(s.chain.iter().all(|x| (0.0..=1.0).contains(&x[0]) && (0.0..=1.0).contains(&x[1])));
}

proptest! {
    #[test]
    fn gaussian_likelihood_matches_dense_formula(a in proptest::collection::vec(-1.0f64..1.0, 9), y in proptest::array::uniform3(-2.0f64..2.0)) {
        let a = DMatrix::from_row_slice(3, 3, &a);
        let c = &a * a.transpose() + DMatrix::identity(3, 3) * 0.5;
        let r = DVector::from_column_slice(&y);
        let direct = -0.5 * c.determinant().ln() - 0.5 * (r.transpose() * c.clone().try_inverse().unwrap() * &r)[(0, 0)]
            - 1.5 * (2.0 * std::f64::consts::PI).ln();
        let got = gaussian_log_likelihood(&y, &[0.0; 3], &c).unwrap();
        prop_assert!((got - direct).abs() < 1e-12 * direct.abs().max(1.0));
    }

    #[test]
    fn sampling_map_round_trips_with_matching_jacobian(u in proptest::collection::vec(0.01f64..0.99, 6)) {
        let b = ParamBox::default_joint();
        let map = SamplingMap::new(&b, Coordinates::Log);
        let (x, log_jac) = map.from_unit(&u);
        prop_assert!(b.contains(&x));
        let back = map.to_unit(&x);
        prop_assert!(back.iter().zip(&u).all(|(a, b)| (a - b).abs() < 1e-12));
        let h = 1e-6;
        let fd: f64 = (0..6).map(|j| {
            let (mut lo, mut hi) = (u.clone(), u.clone());
            lo[j] -= h;
            hi[j] += h;
            ((map.from_unit(&hi).0[j] - map.from_unit(&lo).0[j]) / (2.0 * h)).abs().ln()
        }).sum();
        prop_assert!((fd - log_jac).abs() < 1e-6);
    }
}
