//! Exact log-marginal likelihood of the coregionalized GP and its gradient.
//!
//! Covariance of the stacked (output-major) residual vector:
//! `K = sum_q (a_q a_q^T) kron K_q + diag(sigma^2) kron I + N`, where `K_q` is
//! a unit-variance Matérn Gram matrix and `N` the block-diagonal known noise.

use faer::linalg::solvers::DenseSolveCore;
use faer::{Mat, Side};

use super::kernel::{gram, inverse_squares, matern52_dlog_factor, scaled_distance};
use crate::error::{Error, Result};

/// Jitters tried, in order, when the Cholesky factorization fails.
pub const JITTERS: [f64; 6] = [0.0, 1e-10, 1e-8, 1e-7, 1e-6, 1e-5];

#[derive(Debug, Clone, PartialEq)]
pub struct Hyper {
    /// `Q x p` length-scales on unit-box inputs.
    pub lengthscales: Vec<Vec<f64>>,
    /// `d x Q` mixing matrix.
    pub mixing: Vec<Vec<f64>>,
    /// Per-output nugget variance in standardized units.
    pub noise: Vec<f64>,
}

impl Hyper {
    pub fn latents(&self) -> usize {
        self.lengthscales.len()
    }

    pub fn to_theta(&self) -> Vec<f64> {
        let mut t: Vec<f64> = self.lengthscales.iter().flatten().map(|l| l.ln()).collect();
        t.extend(self.mixing.iter().flatten());
        t.extend(self.noise.iter().map(|s| s.ln()));
        t
    }

    pub fn from_theta(theta: &[f64], q: usize, p: usize, d: usize) -> Self {
        let (ls, rest) = theta.split_at(q * p);
        let (mix, noise) = rest.split_at(d * q);
        Self {
            lengthscales: ls.chunks(p).map(|c| c.iter().map(|v| v.exp()).collect()).collect(),
            mixing: mix.chunks(q).map(|c| c.to_vec()).collect(),
            noise: noise.iter().map(|v| v.exp()).collect(),
        }
    }
}

/// Standardized training problem.
#[derive(Debug, Clone)]
pub struct Problem {
    /// Unit-box inputs, `n` rows of length `p`.
    pub u: Vec<Vec<f64>>,
    /// Stacked standardized residuals, output-major (`j * n + i`).
    pub r: Vec<f64>,
    /// Known noise covariance per row, standardized (`d x d`, row-major).
    pub known: Option<Vec<Vec<f64>>>,
    pub d: usize,
}

pub struct Factor {
    pub kinv: Mat<f64>,
    pub alpha: Vec<f64>,
    pub logdet: f64,
    pub jitter: f64,
}

pub struct Evaluation {
    pub lml: f64,
    pub grad: Vec<f64>,
}

impl Problem {
    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn p(&self) -> usize {
        self.u.first().map_or(0, |r| r.len())
    }

    fn grams(&self, h: &Hyper) -> Vec<Vec<f64>> {
        h.lengthscales.iter().map(|l| gram(&self.u, &inverse_squares(l))).collect()
    }

    fn assemble(&self, h: &Hyper, grams: &[Vec<f64>], jitter: f64) -> Mat<f64> {
        let (n, d, q) = (self.n(), self.d, h.latents());
        let mut b = vec![vec![0.0; d * d]; q];
        for (qq, bq) in b.iter_mut().enumerate() {
            for j in 0..d {
                for k in 0..d {
                    bq[j * d + k] = h.mixing[j][qq] * h.mixing[k][qq];
                }
            }
        }
        Mat::from_fn(n * d, n * d, |row, col| {
            let (j, i) = (row / n, row % n);
            let (k, l) = (col / n, col % n);
            let mut v = 0.0;
            for qq in 0..q {
                v += b[qq][j * d + k] * grams[qq][l * n + i];
            }
            if i == l {
                if let Some(known) = &self.known {
                    v += known[i][j * d + k];
                }
                if j == k {
                    v += h.noise[j] + jitter;
                }
            }
            v
        })
    }

    pub fn factor(&self, h: &Hyper) -> Result<Factor> {
        let grams = self.grams(h);
        self.factor_with(h, &grams)
    }

    fn factor_with(&self, h: &Hyper, grams: &[Vec<f64>]) -> Result<Factor> {
        for &jitter in &JITTERS {
            let k = self.assemble(h, grams, jitter);
            let Ok(llt) = k.llt(Side::Lower) else {
                continue;
            };
            let l = llt.L();
            let logdet = 2.0 * (0..k.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>();
            let kinv = llt.inverse();
            let m = kinv.nrows();
            let mut alpha = vec![0.0; m];
            for c in 0..m {
                let col = kinv.col_as_slice(c);
                let rc = self.r[c];
                for (a, v) in alpha.iter_mut().zip(col) {
                    *a += v * rc;
                }
            }
            if jitter > 0.0 {
                log::debug!("covariance factorized with jitter {jitter}");
            }
            return Ok(Factor {
                kinv,
                alpha,
                logdet,
                jitter,
            });
        }
        Err(Error::NotPositiveDefinite {
            jitter: *JITTERS.last().unwrap(),
            context: format!("training covariance with hyperparameters {h:?}"),
        })
    }

    /// Log-marginal likelihood and its gradient with respect to
    /// `Hyper::to_theta` coordinates.
    pub fn evaluate(&self, h: &Hyper) -> Result<Evaluation> {
        let (n, d, q, p) = (self.n(), self.d, h.latents(), self.p());
        let grams = self.grams(h);
        let f = self.factor_with(h, &grams)?;
        let m = n * d;
        let quad: f64 = self.r.iter().zip(&f.alpha).map(|(a, b)| a * b).sum();
        let lml = -0.5 * quad - 0.5 * f.logdet - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();

        // W = K^-1 - alpha alpha^T; G_q[j,k] = <W_jk, K_q>, H_q = sum_jk a_jq a_kq W_jk
        let mut g = vec![vec![0.0; d * d]; q];
        let mut hq = vec![vec![0.0; n * n]; q];
        let mut trace_w = vec![0.0; d];
        for k in 0..d {
            for l in 0..n {
                let col = f.kinv.col_as_slice(k * n + l);
                let al = f.alpha[k * n + l];
                for j in 0..d {
                    let block = &col[j * n..(j + 1) * n];
                    let ab = &f.alpha[j * n..(j + 1) * n];
                    let coef: Vec<f64> = (0..q).map(|qq| h.mixing[j][qq] * h.mixing[k][qq]).collect();
                    for qq in 0..q {
                        let kq = &grams[qq][l * n..(l + 1) * n];
                        let hcol = &mut hq[qq][l * n..(l + 1) * n];
                        let mut acc = 0.0;
                        let c = coef[qq];
                        for i in 0..n {
                            let w = block[i] - ab[i] * al;
                            acc += w * kq[i];
                            hcol[i] += c * w;
                        }
                        g[qq][j * d + k] += acc;
                    }
                    if j == k {
                        trace_w[j] += block[l] - ab[l] * al;
                    }
                }
            }
        }
        let mut grad = Vec::with_capacity(q * p + d * q + d);
        for qq in 0..q {
            let ls = &h.lengthscales[qq];
            let inv = inverse_squares(ls);
            let mut acc = vec![0.0; p];
            for l in 0..n {
                for i in 0..l {
                    let r = scaled_distance(&self.u[i], &self.u[l], &inv);
                    let w = 2.0 * hq[qq][l * n + i] * matern52_dlog_factor(r);
                    for mm in 0..p {
                        let dx = self.u[i][mm] - self.u[l][mm];
                        acc[mm] += w * dx * dx * inv[mm];
                    }
                }
            }
            grad.extend(acc.iter().map(|v| -0.5 * v));
        }
        for j in 0..d {
            for qq in 0..q {
                let s: f64 = (0..d).map(|k| h.mixing[k][qq] * g[qq][j * d + k]).sum();
                grad.push(-s);
            }
        }
        for j in 0..d {
            grad.push(-0.5 * h.noise[j] * trace_w[j]);
        }
        Ok(Evaluation { lml, grad })
    }
}
