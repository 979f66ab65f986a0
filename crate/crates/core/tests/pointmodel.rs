use fissile_uq::pointmodel::{
    asymptotics, count_rate, diven_factors, feynman_x, feynman_y, neutron_prior_mean, NeutronPointParams, NuclearData,
};
use proptest::prelude::*;

fn example_data() -> NuclearData {
    let mut d = NuclearData::reference();
    d.nu_bar = 2.43;
    d.nu_bar_s = 2.16;
    d.d2 = 0.8;
    d.d2_s = 0.8;
    d.d3 = 0.5;
    d.d3_s = 0.5;
    d
}

/// Direct transcription of the point-model relations, written against the
/// raw symbols rather than the library's factored helpers.
struct Oracle {
    k: f64,
    e: f64,
    s: f64,
    xs: f64,
    nu: f64,
    nus: f64,
    d2: f64,
    d2s: f64,
    d3: f64,
    d3s: f64,
    alpha: f64,
}

impl Oracle {
    fn new(k: f64, e: f64, s: f64, xs: f64, d: &NuclearData) -> Self {
        Self {
            k,
            e,
            s,
            xs,
            nu: d.nu_bar,
            nus: d.nu_bar_s,
            d2: d.d2,
            d2s: d.d2_s,
            d3: d.d3,
            d3s: d.d3_s,
            alpha: d.alpha,
        }
    }

    fn rho(&self) -> f64 {
        (self.k - 1.0) / self.k
    }

    fn r(&self) -> f64 {
        -self.e * self.nus * self.s / ((self.xs + self.nus - self.xs * self.nus) * self.rho() * self.nu)
    }

    fn y(&self, t: f64) -> f64 {
        let a = self.alpha * t;
        let rho = self.rho();
        self.e * self.d2 / (rho * rho)
            * (1.0 - self.xs * rho * self.nus * self.d2s / (self.nu * self.d2))
            * (1.0 - (1.0 - (-a).exp()) / a)
    }

    fn x(&self, t: f64) -> f64 {
        let a = self.alpha * t;
        let rho = self.rho();
        let y_inf = self.e * self.d2 / (rho * rho) * (1.0 - self.xs * rho * self.nus * self.d2s / (self.nu * self.d2));
        let first = 3.0 * (self.e * self.d2 / (rho * rho)) * y_inf;
        let second = -self.e * self.e * self.d3 / rho.powi(3)
            * (1.0 - self.xs * rho * (self.nus / self.nu).powi(3) * self.d3s / self.d3);
        first * (1.0 + (-a).exp() - 2.0 * (1.0 - (-a).exp()) / a)
            + second * (1.0 - (3.0 - 4.0 * (-a).exp() + (-2.0 * a).exp()) / (2.0 * a))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

#[test]
fn worked_example_against_oracle() {
    let d = example_data();
    let p = NeutronPointParams::new(0.9, 0.01, 1e4, 1.0, &d);
    let o = Oracle::new(0.9, 0.01, 1e4, 1.0, &d);
    assert!(rel(count_rate(&p).unwrap(), 800.0) < 1e-12);
    assert!(rel(o.r(), 800.0) < 1e-12);
    let (y, x) = asymptotics(&p).unwrap();
    assert!(rel(y, 0.648 * (1.0 + (1.0 / 9.0) * 2.16 / 2.43)) < 1e-12);
    assert!((y - 0.7120).abs() < 5e-5, "{y}");
    assert!((x - 1.4234).abs() < 5e-5, "{x}");
    for t in [1e-5, 1e-4, 1e-3, 1e-2] {
        assert!(rel(feynman_y(&p, t).unwrap(), o.y(t)) < 1e-9);
        assert!(rel(feynman_x(&p, t).unwrap(), o.x(t)) < 1e-9);
    }
}

#[test]
fn reference_data_matches_its_pmfs() {
    let d = NuclearData::reference();
    for (pmf, nu, d2, d3) in [(&d.induced_pmf, d.nu_bar, d.d2, d.d3), (&d.spont_pmf, d.nu_bar_s, d.d2_s, d.d3_s)] {
        assert!((pmf.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let f2: f64 = pmf.iter().enumerate().map(|(k, p)| (k * k.saturating_sub(1)) as f64 * p).sum();
        assert!((mean - nu).abs() < 1e-9);
        assert!((f2 / (mean * mean) - d2).abs() < 1e-9);
        let (_, _, dd3) = diven_factors(pmf);
        assert!((dd3 - d3).abs() < 1e-9);
    }
}

#[test]
fn zero_spontaneous_fraction_gives_plain_amplitude() {
    let d = example_data();
    let p = NeutronPointParams::new(0.8, 0.02, 1e4, 0.0, &d);
    let rho: f64 = (0.8 - 1.0) / 0.8;
    let (y, _) = asymptotics(&p).unwrap();
    assert!(rel(y, 0.02 * 0.8 / (rho * rho)) < 1e-14);
}

#[test]
fn finite_difference_slope_is_stable() {
    let d = NuclearData::reference();
    let x = [0.85, 0.012, 1.2e4, 0.5];
    for j in 0..4 {
        let slope = |h: f64| {
            let (mut a, mut b) = (x, x);
            a[j] -= h * x[j];
            b[j] += h * x[j];
            let (fa, fb) = (neutron_prior_mean(&a, &d).unwrap(), neutron_prior_mean(&b, &d).unwrap());
            (0..3).map(|i| (fb[i] - fa[i]) / (2.0 * h * x[j])).collect::<Vec<_>>()
        };
        let (s1, s2, s3) = (slope(1e-3), slope(5e-4), slope(2.5e-4));
        for i in 0..3 {
            let scale = s1[i].abs().max(1e-12);
            let (d1, d2) = ((s1[i] - s2[i]).abs(), (s2[i] - s3[i]).abs());
            assert!(d1 <= 1e-3 * scale, "input {j} output {i}: {d1:e}");
            assert!(d2 <= 0.5 * d1 + 1e-9 * scale, "input {j} output {i}: {d1:e} then {d2:e}");
        }
    }
}

#[test]
fn moments_diverge_towards_criticality() {
    let d = NuclearData::reference();
    let low = neutron_prior_mean(&[0.9, 0.01, 1e4, 0.5], &d).unwrap();
    let high = neutron_prior_mean(&[0.99, 0.01, 1e4, 0.5], &d).unwrap();
    for i in 0..3 {
        assert!(high[i] > low[i]);
    }
}

proptest! {
    #[test]
    fn moments_non_decreasing_in_window(
        k in 0.3f64..0.99, e in 1e-3f64..0.05, xs in 0.0f64..1.0,
        t in 1e-7f64..1e-1, f in 1.0f64..4.0,
    ) {
        let d = NuclearData::reference();
        let p = NeutronPointParams::new(k, e, 1e4, xs, &d);
        prop_assert!(feynman_y(&p, t * f).unwrap() >= feynman_y(&p, t).unwrap() * (1.0 - 1e-12));
        prop_assert!(feynman_x(&p, t * f).unwrap() >= feynman_x(&p, t).unwrap() * (1.0 - 1e-12));
    }

    #[test]
    fn scaling_laws(k in 0.3f64..0.99, e in 1e-3f64..0.05, s in 1e2f64..1e6, xs in 0.0f64..1.0, c in 0.1f64..10.0) {
        let d = NuclearData::reference();
        let p = NeutronPointParams::new(k, e, s, xs, &d);
        let r = count_rate(&p).unwrap();
        let y = feynman_y(&p, 1e-3).unwrap();
        let ps = NeutronPointParams::new(k, e, s * c, xs, &d);
        let pe = NeutronPointParams::new(k, e * c, s, xs, &d);
        prop_assert!(rel(count_rate(&ps).unwrap(), c * r) < 1e-12);
        prop_assert!(rel(count_rate(&pe).unwrap(), c * r) < 1e-12);
        prop_assert!(rel(feynman_y(&pe, 1e-3).unwrap(), c * y) < 1e-12);
        prop_assert!(r > 0.0);
    }

    #[test]
    fn asymptotes_match_long_windows(k in 0.3f64..0.99, e in 1e-3f64..0.05, xs in 0.0f64..1.0) {
        let d = NuclearData::reference();
        let p = NeutronPointParams::new(k, e, 1e4, xs, &d);
        let (y, x) = asymptotics(&p).unwrap();
        let t = 50.0 / d.alpha;
        // at u = 50 the 1/u terms still contribute about 2%; only e^{-u} is negligible
        let o = Oracle::new(k, e, 1e4, xs, &d);
        prop_assert!(rel(feynman_y(&p, t).unwrap(), o.y(t)) < 1e-9);
        prop_assert!(rel(feynman_x(&p, t).unwrap(), o.x(t)) < 1e-9);
        prop_assert!(rel(feynman_y(&p, 1e10 / d.alpha).unwrap(), y) < 1e-8);
        prop_assert!(rel(feynman_x(&p, 1e10 / d.alpha).unwrap(), x) < 1e-8);
    }

    #[test]
    fn neutron_prior_mean_is_the_composition(k in 0.3f64..0.99, e in 1e-3f64..0.05, s in 1e3f64..1e5, xs in 0.0f64..1.0) {
        let d = NuclearData::reference();
        let p = NeutronPointParams::new(k, e, s, xs, &d);
        let (y, x) = asymptotics(&p).unwrap();
        prop_assert_eq!(neutron_prior_mean(&[k, e, s, xs], &d).unwrap(), [count_rate(&p).unwrap(), y, x]);
    }
}
