//! Training data: material inputs paired with simulated outputs.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::space::{Output, ParamBox, Parameter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub histories: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDataset {
    pub params: Vec<Parameter>,
    pub outputs: Vec<Output>,
    /// Design box over `params`, used for input normalization.
    pub design: ParamBox,
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub provenance: Option<Vec<Provenance>>,
    /// Per-row estimation covariance of the outputs (d x d), if known.
    pub noise: Option<Vec<DMatrix<f64>>>,
}

/// Normalized inputs closer than this (max-norm) count as duplicates.
pub const DUPLICATE_TOL: f64 = 1e-12;

impl TrainingDataset {
    pub fn from_rows(
        params: Vec<Parameter>,
        outputs: Vec<Output>,
        design: ParamBox,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        provenance: Option<Vec<Provenance>>,
        noise: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let ds = Self::batch(params, outputs, design, inputs, targets, provenance, noise)?;
        ds.validate()?;
        Ok(ds)
    }

    /// Rows to append to an existing training set: every invariant except
    /// the minimum row count is checked.
    pub fn batch(
        params: Vec<Parameter>,
        outputs: Vec<Output>,
        design: ParamBox,
        inputs: &[Vec<f64>],
        targets: &[Vec<f64>],
        provenance: Option<Vec<Provenance>>,
        noise: Option<Vec<DMatrix<f64>>>,
    ) -> Result<Self> {
        let n = inputs.len();
        let (p, d) = (params.len(), outputs.len());
        if targets.len() != n {
            return Err(Error::invalid("dataset", "input and output row counts differ"));
        }
        if inputs.iter().any(|r| r.len() != p) || targets.iter().any(|r| r.len() != d) {
            return Err(Error::invalid("dataset", "row length does not match column names"));
        }
        if let Some(prov) = &provenance {
            if prov.len() != n {
                return Err(Error::invalid("dataset", "provenance length differs from row count"));
            }
        }
        let x = DMatrix::from_fn(n, p, |i, j| inputs[i][j]);
        let y = DMatrix::from_fn(n, d, |i, j| targets[i][j]);
        let ds = Self {
            params,
            outputs,
            design,
            x,
            y,
            provenance,
            noise,
        };
        ds.validate_rows()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n() < self.outputs.len() {
            return Err(Error::InsufficientData(format!(
                "dataset has {} rows for {} outputs",
                self.n(),
                self.outputs.len()
            )));
        }
        self.validate_rows()
    }

    fn validate_rows(&self) -> Result<()> {
        if self.design.params != self.params {
            return Err(Error::invalid("dataset", "design box parameters differ from input columns"));
        }
        self.design.validate()?;
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset", "non-finite entry"));
        }
        if let Some(noise) = &self.noise {
            let d = self.outputs.len();
            if noise.len() != self.n() {
                return Err(Error::invalid("dataset", "noise length differs from row count"));
            }
            for (i, c) in noise.iter().enumerate() {
                let ok = c.nrows() == d
                    && c.ncols() == d
                    && c.iter().all(|v| v.is_finite())
                    && (0..d).all(|k| c[(k, k)] >= 0.0)
                    && (0..d).all(|k| (0..d).all(|l| c[(k, l)] == c[(l, k)]));
                if !ok {
                    return Err(Error::invalid("dataset", format!("row {i}: noise covariance malformed")));
                }
            }
        }
        if let Some(i) = self.duplicate_row() {
            return Err(Error::DuplicateInput { index: i });
        }
        Ok(())
    }

    fn duplicate_row(&self) -> Option<usize> {
        let u = self.unit_inputs();
        let mut order: Vec<usize> = (0..self.n()).collect();
        order.sort_by(|&a, &b| u[a][0].total_cmp(&u[b][0]));
        for (k, &i) in order.iter().enumerate() {
            for &j in &order[k + 1..] {
                if u[j][0] - u[i][0] > DUPLICATE_TOL {
                    break;
                }
                if u[i].iter().zip(&u[j]).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL) {
                    return Some(i.max(j));
                }
            }
        }
        None
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn input_row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    pub fn output_row(&self, i: usize) -> Vec<f64> {
        self.y.row(i).iter().copied().collect()
    }

    pub fn unit_inputs(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.design.to_unit(&self.input_row(i))).collect()
    }

    pub fn rows(&self, idx: &[usize]) -> Result<Self> {
        let inputs: Vec<_> = idx.iter().map(|&i| self.input_row(i)).collect();
        let targets: Vec<_> = idx.iter().map(|&i| self.output_row(i)).collect();
        let prov = self
            .provenance
            .as_ref()
            .map(|p| idx.iter().map(|&i| p[i]).collect());
        let noise = self.noise.as_ref().map(|c| idx.iter().map(|&i| c[i].clone()).collect());
        Self::from_rows(
            self.params.clone(),
            self.outputs.clone(),
            self.design.clone(),
            &inputs,
            &targets,
            prov,
            noise,
        )
    }

    /// Column projection, e.g. the neutron inputs and outputs of a joint dataset.
    pub fn select(&self, params: &[Parameter], outputs: &[Output]) -> Result<Self> {
        let pcols: Vec<usize> = params
            .iter()
            .map(|&p| {
                self.params
                    .iter()
                    .position(|&q| q == p)
                    .ok_or_else(|| Error::invalid(p.name(), "not an input column"))
            })
            .collect::<Result<_>>()?;
        let ocols: Vec<usize> = outputs
            .iter()
            .map(|&o| {
                self.outputs
                    .iter()
                    .position(|&q| q == o)
                    .ok_or_else(|| Error::invalid(o.name(), "not an output column"))
            })
            .collect::<Result<_>>()?;
        let inputs: Vec<Vec<f64>> = (0..self.n())
            .map(|i| pcols.iter().map(|&j| self.x[(i, j)]).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..self.n())
            .map(|i| ocols.iter().map(|&j| self.y[(i, j)]).collect())
            .collect();
        let noise = self
            .noise
            .as_ref()
            .map(|cs| cs.iter().map(|c| c.select_rows(&ocols).select_columns(&ocols)).collect());
        Self::from_rows(
            params.to_vec(),
            outputs.to_vec(),
            self.design.project(params)?,
            &inputs,
            &targets,
            self.provenance.clone(),
            noise,
        )
    }

    /// Stratified random split: rows are sorted by the first input and cut
    /// into `n_test` contiguous strata; one row per stratum goes to the test set.
    pub fn split(&self, n_test: usize, seed: u64) -> Result<(Self, Self)> {
        let n = self.n();
        if n_test == 0 || n_test >= n {
            return Err(Error::invalid("n_test", format!("must lie in 1..{n}, got {n_test}")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| self.x[(a, 0)].total_cmp(&self.x[(b, 0)]).then(a.cmp(&b)));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut is_test = vec![false; n];
        for s in 0..n_test {
            let lo = s * n / n_test;
            let hi = (s + 1) * n / n_test;
            is_test[order[rng.random_range(lo..hi)]] = true;
        }
        let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
        let test: Vec<usize> = (0..n).filter(|&i| is_test[i]).collect();
        Ok((self.rows(&train)?, self.rows(&test)?))
    }

    /// Union with `other`; duplicated inputs are rejected with the row index
    /// within `other`.
    pub fn append(&self, other: &Self) -> Result<Self> {
        if other.params != self.params || other.outputs != self.outputs {
            return Err(Error::invalid("dataset", "cannot append datasets with different columns"));
        }
        let existing = self.unit_inputs();
        let fresh: Vec<Vec<f64>> = (0..other.n()).map(|i| self.design.to_unit(&other.input_row(i))).collect();
        for (k, u) in fresh.iter().enumerate() {
            let clash = existing
                .iter()
                .chain(&fresh[..k])
                .any(|e| e.iter().zip(u).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL));
            if clash {
                return Err(Error::DuplicateInput { index: k });
            }
        }
        let inputs: Vec<_> = (0..self.n()).map(|i| self.input_row(i)).chain((0..other.n()).map(|i| other.input_row(i))).collect();
        let targets: Vec<_> = (0..self.n()).map(|i| self.output_row(i)).chain((0..other.n()).map(|i| other.output_row(i))).collect();
        let prov = match (&self.provenance, &other.provenance) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        let noise = match (&self.noise, &other.noise) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        Self::from_rows(
            self.params.clone(),
            self.outputs.clone(),
            self.design.clone(),
            &inputs,
            &targets,
            prov,
            noise,
        )
    }

    /// Hex SHA-256 over column names and the bit patterns of all values.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name().as_bytes());
            h.update([0]);
        }
        for o in &self.outputs {
            h.update(o.name().as_bytes());
            h.update([0]);
        }
        for i in 0..self.n() {
            for v in self.x.row(i).iter().chain(self.y.row(i).iter()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<&str> = self.params.iter().map(|p| p.name()).collect();
        header.extend(self.outputs.iter().map(|o| o.name()));
        let d = self.outputs.len();
        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|k| (k..d).map(move |l| (k, l))).collect();
        let mut header: Vec<String> = header.into_iter().map(String::from).collect();
        if self.noise.is_some() {
            header.extend(
                pairs
                    .iter()
                    .map(|&(k, l)| format!("cov:{}:{}", self.outputs[k].name(), self.outputs[l].name())),
            );
        }
        if self.provenance.is_some() {
            header.extend(["seed".to_string(), "histories".to_string()]);
        }
        wr.write_record(&header)?;
        for i in 0..self.n() {
            let mut rec: Vec<String> = self.x.row(i).iter().chain(self.y.row(i).iter()).map(|v| v.to_string()).collect();
            if let Some(c) = &self.noise {
                rec.extend(pairs.iter().map(|&(k, l)| c[i][(k, l)].to_string()));
            }
            if let Some(p) = &self.provenance {
                rec.push(p[i].seed.to_string());
                rec.push(p[i].histories.to_string());
            }
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a dataset CSV; column roles are inferred from the header names.
    /// `design` supplies bounds for each parameter column present.
    pub fn read_csv<R: Read>(r: R, design: &ParamBox) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        let mut params = Vec::new();
        let mut outputs = Vec::new();
        let (mut seed_col, mut hist_col) = (None, None);
        let mut roles = Vec::new();
        let mut cov_cols: Vec<(usize, Output, Output)> = Vec::new();
        for (c, name) in header.iter().enumerate() {
            if let Some(rest) = name.strip_prefix("cov:") {
                let (a, b) = rest
                    .split_once(':')
                    .and_then(|(a, b)| Some((Output::from_name(a)?, Output::from_name(b)?)))
                    .ok_or_else(|| Error::Format(format!("bad covariance column `{name}`")))?;
                cov_cols.push((c, a, b));
                roles.push(2);
            } else if let Some(p) = Parameter::from_name(name) {
                params.push(p);
                roles.push(0);
            } else if let Some(o) = Output::from_name(name) {
                outputs.push(o);
                roles.push(1);
            } else if name == "seed" {
                seed_col = Some(c);
                roles.push(2);
            } else if name == "histories" {
                hist_col = Some(c);
                roles.push(2);
            } else {
                return Err(Error::Format(format!("unknown dataset column `{name}`")));
            }
        }
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut prov = Vec::new();
        let mut noise = Vec::new();
        let d = outputs.len();
        let out_pos = |o: Output| outputs.iter().position(|&q| q == o);
        if !cov_cols.is_empty() && cov_cols.len() != d * (d + 1) / 2 {
            return Err(Error::Format("incomplete set of covariance columns".into()));
        }
        for (row, rec) in rd.records().enumerate() {
            let rec = rec?;
            let mut xi = Vec::with_capacity(params.len());
            let mut yi = Vec::with_capacity(outputs.len());
            for (c, field) in rec.iter().enumerate() {
                match roles[c] {
                    0 | 1 => {
                        let v: f64 = field
                            .parse()
                            .map_err(|_| Error::Format(format!("row {}: bad number `{field}`", row + 1)))?;
                        if roles[c] == 0 {
                            xi.push(v)
                        } else {
                            yi.push(v)
                        }
                    }
                    _ => {}
                }
            }
            if let (Some(s), Some(h)) = (seed_col, hist_col) {
                let bad = |_| Error::Format(format!("row {}: bad provenance", row + 1));
                prov.push(Provenance {
                    seed: rec[s].parse().map_err(bad)?,
                    histories: rec[h].parse().map_err(bad)?,
                });
            }
            if !cov_cols.is_empty() {
                let mut c = DMatrix::zeros(d, d);
                for &(col, a, b) in &cov_cols {
                    let (k, l) = out_pos(a)
                        .zip(out_pos(b))
                        .ok_or_else(|| Error::Format("covariance column names an absent output".into()))?;
                    let v: f64 = rec[col]
                        .parse()
                        .map_err(|_| Error::Format(format!("row {}: bad covariance entry", row + 1)))?;
                    c[(k, l)] = v;
                    c[(l, k)] = v;
                }
                noise.push(c);
            }
            inputs.push(xi);
            targets.push(yi);
        }
        let provenance = (seed_col.is_some() && hist_col.is_some()).then_some(prov);
        let noise = (!cov_cols.is_empty()).then_some(noise);
        let design = design.project(&params)?;
        Self::from_rows(params, outputs, design, &inputs, &targets, provenance, noise)
    }

    pub fn read_csv_file(path: impl AsRef<Path>, design: &ParamBox) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, design)
    }
}
