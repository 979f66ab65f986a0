use fissile_uq::dataset::TrainingDataset;
use fissile_uq::design::{
    csq_loop, csq_query, in_constraint_set, log_det_covariance, match_inputs, sobol_indices, sobol_weights,
    weights_from_indices, CsqConfig, LoopConfig, LoopContext, MatchConfig,
};
use fissile_uq::inference::ObservationSet;
use fissile_uq::pointmodel::NuclearData;
use fissile_uq::simulator::{FacilityModel, FacilityParams, MaterialInput};
use fissile_uq::space::{Output, ParamBox, Parameter};
use fissile_uq::surrogate::{GpSurrogate, Hyper, PriorMean, SurrogateConfig};
use nalgebra::DMatrix;
use proptest::prelude::*;
use std::f64::consts::PI;

fn line_box() -> ParamBox {
    ParamBox::new(vec![Parameter::Kp], vec![0.0], vec![1.0]).unwrap()
}

fn gaussian(mu: f64, sigma: f64) -> impl Fn(&[f64]) -> f64 {
    move |x: &[f64]| -0.5 * ((x[0] - mu) / sigma).powi(2)
}

#[test]
fn constraint_set_of_gaussian_is_two_sigma_interval() {
    let (mu, sigma) = (0.4, 0.05);
    let lp = gaussian(mu, sigma);
    let map_lp = lp(&[mu]);
    for side in [-1.0, 1.0] {
        let edge = mu + side * 2.0 * sigma;
        assert!(in_constraint_set(lp(&[mu + side * 2.0 * sigma * (1.0 - 1e-6)]), map_lp, 2.0));
        assert!(!in_constraint_set(lp(&[mu + side * 2.0 * sigma * (1.0 + 1e-6)]), map_lp, 2.0));
        let q = csq_query(|x| side * x[0], &lp, &[mu], &line_box(), &CsqConfig::default(), 1).unwrap();
        assert!((q.x[0] - edge).abs() < 1e-3, "{} vs {edge}", q.x[0]);
        assert!(in_constraint_set(q.log_posterior, map_lp, 2.0));
    }
}

#[test]
fn flat_objective_returns_admissible_point() {
    let lp = gaussian(0.6, 0.02);
    let q = csq_query(|_| 1.0, &lp, &[0.6], &line_box(), &CsqConfig::default(), 2).unwrap();
    assert_eq!(q.objective, 1.0);
    assert!(in_constraint_set(q.log_posterior, 0.0, 2.0));
}

#[test]
fn query_finds_variance_hole_edge_on_grid() {
    // training points leave a gap between 0.3 and 0.7; the set covers part of it
    let xs: Vec<Vec<f64>> = [0.0, 0.1, 0.2, 0.3, 0.7, 0.8, 0.9, 1.0].iter().map(|&x| vec![x]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![(3.0 * x[0]).sin()]).collect();
    let ds = TrainingDataset::from_rows(vec![Parameter::Kp], vec![Output::RateN], line_box(), &xs, &ys, None, None).unwrap();
    let cfg = SurrogateConfig {
        latents: 1,
        prior: PriorMean::Zero,
        log_outputs: vec![],
        known_noise: false,
        ..Default::default()
    };
    let hyper = Hyper {
        lengthscales: vec![vec![0.15]],
        mixing: vec![vec![1.0]],
        noise: vec![1e-6],
    };
    let gp = GpSurrogate::with_hyper(&ds, &cfg, None, hyper).unwrap();
    let lp = gaussian(0.35, 0.06);
    let objective = |x: &[f64]| log_det_covariance(&gp, x);
    let q = csq_query(objective, &lp, &[0.35], &line_box(), &CsqConfig::default(), 3).unwrap();
    let grid_best = (0..=100_000)
        .map(|i| i as f64 / 100_000.0)
        .filter(|&x| in_constraint_set(lp(&[x]), 0.0, 2.0))
        .map(|x| objective(&[x]))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(q.objective >= grid_best - 1e-3, "{} vs grid {grid_best}", q.objective);
}

fn ishigami(x: &[f64]) -> fissile_uq::Result<Vec<f64>> {
    Ok(vec![x[0].sin() + 7.0 * x[1].sin().powi(2) + 0.1 * x[2].powi(4) * x[0].sin()])
}

#[test]
fn ishigami_first_order_indices() {
    let b = ParamBox::new(vec![Parameter::Kp, Parameter::EpsF, Parameter::Source], vec![-PI; 3], vec![PI; 3]).unwrap();
    let s = sobol_indices(ishigami, &b, 1 << 15, 4).unwrap();
    // closed-form values for a = 7, b = 0.1
    let var = 0.5 + 49.0 / 8.0 + 0.1 * PI.powi(4) / 5.0 + 0.01 * PI.powi(8) / 18.0;
    let v1 = 0.5 * (1.0 + 0.1 * PI.powi(4) / 5.0).powi(2);
    let expected = [v1 / var, 49.0 / 8.0 / var, 0.0];
    for j in 0..3 {
        assert!((s.first_order[(j, 0)] - expected[j]).abs() < 0.05, "S{j} = {}", s.first_order[(j, 0)]);
    }
    assert!((s.variance[0] / var - 1.0).abs() < 0.05);
}

#[test]
fn single_active_input_takes_all_weight() {
    let b = ParamBox::new(vec![Parameter::Kp, Parameter::EpsF], vec![0.0; 2], vec![1.0; 2]).unwrap();
    let obs = ObservationSet::with_covariance(
        vec![Output::RateN, Output::YN],
        vec![1.0, 2.0],
        DMatrix::from_diagonal_element(2, 2, 0.1),
        5,
    )
    .unwrap();
    let (w, s) = sobol_weights(|x| Ok(vec![x[1].exp(), x[1] * 3.0]), &b, &obs, 1 << 13, 5).unwrap();
    assert!(s.first_order[(0, 0)].abs() < 0.02 && s.first_order[(0, 1)].abs() < 0.02);
    assert!(w.weights[1] > 0.98, "{:?}", w.weights);
}

#[test]
fn identical_indices_give_uniform_weights() {
    let s = DMatrix::from_element(4, 2, 0.25);
    let w = weights_from_indices(&s, &[1.0, 3.0], &[0.5, 2.0]).unwrap();
    assert!(w.weights.iter().all(|&v| (v - 0.25).abs() < 1e-15));
}

#[test]
fn zero_observation_variance_rejected() {
    let s = DMatrix::from_element(2, 2, 0.5);
    assert!(weights_from_indices(&s, &[1.0, 1.0], &[1.0, 0.0]).is_err());
    let b = line_box();
    let obs = ObservationSet::with_covariance(vec![Output::RateN], vec![1.0], DMatrix::zeros(1, 1), 3).unwrap();
    assert!(sobol_weights(|x| Ok(vec![x[0]]), &b, &obs, 1 << 10, 1).is_err());
}

#[test]
fn detector_knob_raises_efficiency() {
    let f = FacilityModel::new(ParamBox::default_joint()).unwrap();
    let mut last = f64::NEG_INFINITY;
    for i in 0..=10 {
        let mut k = [0.5; 6];
        k[1] = i as f64 / 10.0;
        let e = f.latent(&FacilityParams::new(k).unwrap()).unwrap().eps_f;
        assert!(e > last);
        last = e;
    }
}

#[test]
fn matching_reaches_interior_target() {
    let f = FacilityModel::new(ParamBox::default_joint()).unwrap();
    let target = MaterialInput::from_array([0.86, 0.011, 1.3e4, 0.45, 30.0, 0.25]);
    let r = match_inputs(&f, &target, &[1.0 / 6.0; 6], &MatchConfig::default(), 6).unwrap();
    let (a, t) = (r.achieved.to_array(), target.to_array());
    assert_eq!((a[2], a[3]), (t[2], t[3]));
    assert!(r.relative_errors.iter().all(|&e| e < 0.05), "{:?}", r.relative_errors);
}

#[test]
fn loop_without_new_points_is_identity() {
    let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![0.75 + 0.025 * i as f64]).collect();
    let ys: Vec<Vec<f64>> = xs.iter().map(|x| vec![x[0] * 1e3]).collect();
    let b = ParamBox::new(vec![Parameter::Kp], vec![0.75], vec![0.95]).unwrap();
    let ds = TrainingDataset::from_rows(vec![Parameter::Kp], vec![Output::RateN], b, &xs, &ys, None, None).unwrap();
    let cfg = SurrogateConfig {
        latents: 1,
        prior: PriorMean::Average,
        log_outputs: vec![],
        known_noise: false,
        ..Default::default()
    };
    let gp = GpSurrogate::train(&ds, &cfg, None).unwrap();
    let obs = ObservationSet::with_covariance(vec![Output::RateN], vec![850.0], DMatrix::from_element(1, 1, 25.0), 4).unwrap();
    let f = FacilityModel::new(ParamBox::default_joint()).unwrap();
    let data = NuclearData::reference();
    let ctx = LoopContext {
        facility: &f,
        data: &data,
        design: &ParamBox::default_joint(),
    };
    let loop_cfg = LoopConfig {
        n_new: 0,
        ..Default::default()
    };
    let out = csq_loop(&gp, &obs, &ctx, &loop_cfg, 7, None);
    assert!(out.error.is_none() && out.records.is_empty());
    assert_eq!(out.surrogate.training(), gp.training());
    assert_eq!(out.surrogate.predict(&[0.83]).unwrap(), gp.predict(&[0.83]).unwrap());
}

proptest! {
    #[test]
    fn weights_are_normalized_and_permute_with_inputs(
        s in proptest::collection::vec(0.01f64..1.0, 8),
        mean in proptest::array::uniform2(0.1f64..10.0),
        var in proptest::array::uniform2(0.01f64..5.0),
        shift in 0usize..4,
    ) {
        let m = DMatrix::from_row_slice(4, 2, &s);
        let w = weights_from_indices(&m, &mean, &var).unwrap();
        prop_assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.weights.iter().all(|&v| v >= 0.0));
        let perm: Vec<usize> = (0..4).map(|j| (j + shift) % 4).collect();
        let permuted = weights_from_indices(&m.select_rows(&perm), &mean, &var).unwrap();
        for (k, &j) in perm.iter().enumerate() {
            prop_assert!((permuted.weights[k] - w.weights[j]).abs() < 1e-12);
        }
    }
}
