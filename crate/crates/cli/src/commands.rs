//! Subcommand implementations. Every artifact is written under the output
//! directory and recorded in the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fissile_uq::config::ExperimentConfig;
use fissile_uq::dataset::TrainingDataset;
use fissile_uq::design::{csq_loop, sobol_weights, LoopContext};
use fissile_uq::inference::{
    joint_pipeline, marginal_grid, neutron_pipeline, sequential_pipeline, synthetic_observations, ObservationSet,
    PosteriorSamples,
};
use fissile_uq::metrics::{mcd, validate, DEFAULT_LEVELS};
use fissile_uq::moments::{extract_asymptote, sequential_binning, triggered_binning, ParticleKind};
use fissile_uq::pointmodel::NuclearData;
use fissile_uq::seed::derive;
use fissile_uq::simulator::{generate_dataset, simulate_with_tally, FacilityModel, TimeList};
use fissile_uq::space::{Output, ParamBox, Parameter};
use fissile_uq::surrogate::{GpSurrogate, SurrogateConfig};
use fissile_uq::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::Record;
use crate::{Mode, Model};

pub struct Context {
    cfg: ExperimentConfig,
    data: NuclearData,
    design: ParamBox,
    out: PathBuf,
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

fn models(m: Model) -> Vec<&'static str> {
    match m {
        Model::Nsm => vec!["nsm"],
        Model::Gsm => vec!["gsm"],
        Model::Jsm => vec!["jsm"],
        Model::All => vec!["nsm", "gsm", "jsm"],
    }
}

fn columns(model: &str) -> (&'static [Parameter], &'static [Output]) {
    match model {
        "nsm" => (&Parameter::NEUTRON, &Output::NEUTRON),
        "gsm" => (&Parameter::GAMMA, &Output::GAMMA),
        _ => (&Parameter::ALL, &Output::ALL),
    }
}

#[derive(Serialize, Deserialize)]
struct StoredObservations {
    key: String,
    neutron: ObservationSet,
    joint: ObservationSet,
}

impl Context {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            data: cfg.nuclear_data()?,
            design: cfg.design_box()?,
            out: cfg.output_dir.clone(),
            cfg: cfg.clone(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn seed(&self, label: &str) -> u64 {
        derive(self.cfg.seed, label)
    }

    fn surrogate_config(&self, model: &str) -> SurrogateConfig {
        let mut c = match model {
            "nsm" => self.cfg.surrogates.nsm.clone(),
            "gsm" => self.cfg.surrogates.gsm.clone(),
            _ => self.cfg.surrogates.jsm.clone(),
        };
        c.seed = self.seed(&format!("train-{model}"));
        c
    }

    fn read_dataset(&self, name: &str) -> Result<TrainingDataset> {
        let p = self.path(name);
        if !p.exists() {
            return Err(Error::invalid(name, format!("{} not found; run the producing subcommand first", p.display())));
        }
        TrainingDataset::read_csv_file(p, &self.design)
    }

    fn load_surrogate(&self, model: &str, dataset: &str, file: &str) -> Result<GpSurrogate> {
        let (params, outputs) = columns(model);
        let tr = self.read_dataset(dataset)?.select(params, outputs)?;
        let p = self.path(file);
        let text = std::fs::read_to_string(&p)
            .map_err(|e| Error::invalid(file, format!("{}: {e}; run `train` first", p.display())))?;
        GpSurrogate::from_json(&text, &tr)
    }

    pub fn simulate(&self, duration: f64) -> Result<Record> {
        let s = self.seed("simulate");
        let truth = self.cfg.truth()?;
        let (list, tally) = simulate_with_tally(&truth, &self.data, duration, s)?;
        list.write_file(self.path("timelist.tsv"))?;
        write_json(
            &self.path("simulate.json"),
            &json!({ "truth": truth, "duration_s": duration, "seed": s, "tally": tally }),
        )?;
        Ok(Record::default()
            .seed("simulate", s)
            .artifact("timelist.tsv")
            .artifact("simulate.json"))
    }

    pub fn moments(&self, timelist: &Path) -> Result<Record> {
        let list = TimeList::read_file(timelist)?;
        let b = &self.cfg.observations.binning;
        let window = self.cfg.dataset.trigger_window_alpha / self.data.alpha;
        let mut summary = serde_json::Map::new();
        let mut record = Record::default().artifact("moments.json");
        for kind in [ParticleKind::Neutron, ParticleKind::Gamma] {
            let curve = sequential_binning(&list, kind, b.base_window_alpha / self.data.alpha, b.doublings)?;
            let name = format!("feynman_{}.csv", kind.code());
            let mut w = BufWriter::new(File::create(self.path(&name))?);
            writeln!(w, "window_s,windows,y,x,low_statistics")?;
            for l in &curve.levels {
                let f = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                writeln!(w, "{},{},{},{},{}", l.window, l.windows, f(l.y), f(l.x), l.low_statistics)?;
            }
            w.flush()?;
            record = record.artifact(name);
            let a = extract_asymptote(&curve, &b.plateau)?;
            let t = triggered_binning(&list, kind, window)?;
            summary.insert(
                kind.code().to_string(),
                json!({
                    "rate": curve.rate,
                    "sequential": { "y": a.y, "x": a.x, "converged": a.converged },
                    "triggered": { "y": t.y, "x": t.x, "window_s": window },
                }),
            );
        }
        write_json(&self.path("moments.json"), &summary)?;
        Ok(record)
    }

    pub fn dataset(&self) -> Result<Record> {
        let s = self.seed("dataset");
        let facility = FacilityModel::new(self.design.clone())?;
        let ds = generate_dataset(&facility, &self.data, &self.cfg.dataset.settings(), s)?;
        ds.write_csv_file(self.path("dataset.csv"))?;
        Ok(Record::default().seed("dataset", s).artifact("dataset.csv"))
    }

    pub fn train(&self, model: Model) -> Result<Record> {
        let split = self.seed("split");
        let ds = self.read_dataset("dataset.csv")?;
        let (tr, te) = ds.split(self.cfg.dataset.n_test, split)?;
        tr.write_csv_file(self.path("train.csv"))?;
        te.write_csv_file(self.path("test.csv"))?;
        let mut record = Record::default()
            .seed("split", split)
            .artifact("train.csv")
            .artifact("test.csv");
        for m in models(model) {
            let (params, outputs) = columns(m);
            let cfg = self.surrogate_config(m);
            let gp = GpSurrogate::train(&tr.select(params, outputs)?, &cfg, Some(&self.data))
                .map_err(|e| e.in_stage(format!("train {m}")))?;
            let name = format!("surrogate_{m}.json");
            std::fs::write(self.path(&name), gp.to_json()? + "\n")?;
            record = record.seed(&format!("train-{m}"), cfg.seed).artifact(name);
        }
        Ok(record)
    }

    pub fn validate(&self, model: Model) -> Result<Record> {
        let te = self.read_dataset("test.csv")?;
        let mut record = Record::default();
        for m in models(model) {
            let gp = self.load_surrogate(m, "train.csv", &format!("surrogate_{m}.json"))?;
            let (params, outputs) = columns(m);
            let rep = validate(&gp, &te.select(params, outputs)?, &DEFAULT_LEVELS)?;
            let json_name = format!("validation_{m}.json");
            write_json(&self.path(&json_name), &rep)?;
            let csv_name = format!("coverage_{m}.csv");
            let mut w = BufWriter::new(File::create(self.path(&csv_name))?);
            writeln!(w, "alpha,coverage")?;
            for (a, c) in rep.levels.iter().zip(&rep.coverage) {
                writeln!(w, "{a},{c}")?;
            }
            w.flush()?;
            record = record.artifact(json_name).artifact(csv_name);
        }
        Ok(record)
    }

    /// Synthetic observations at the configured truth, cached on disk and
    /// regenerated when the settings that produced them change.
    fn observations(&self) -> Result<(ObservationSet, ObservationSet, Record)> {
        let o = &self.cfg.observations;
        let key = hex_key(&json!({
            "truth": o.truth, "duration": o.duration, "neutron": o.neutron_replicates,
            "joint": o.joint_replicates, "binning": o.binning, "seed": self.cfg.seed, "data": self.data,
        }))?;
        let path = self.path("observations.json");
        let (sn, sj) = (self.seed("observations-neutron"), self.seed("observations-joint"));
        let record = Record::default()
            .seed("observations-neutron", sn)
            .seed("observations-joint", sj)
            .artifact("observations.json");
        if let Ok(text) = std::fs::read_to_string(&path) {
            if let Ok(s) = serde_json::from_str::<StoredObservations>(&text) {
                if s.key == key {
                    return Ok((s.neutron, s.joint, record));
                }
            }
        }
        let truth = self.cfg.truth()?;
        let neutron = synthetic_observations(&truth, &self.data, o.duration, o.neutron_replicates, &o.binning, sn)?
            .select(&Output::NEUTRON)?;
        let joint = synthetic_observations(&truth, &self.data, o.duration, o.joint_replicates, &o.binning, sj)?;
        write_json(
            &path,
            &StoredObservations {
                key,
                neutron: neutron.clone(),
                joint: joint.clone(),
            },
        )?;
        Ok((neutron, joint, record))
    }

    fn write_posterior(&self, name: &str, p: &PosteriorSamples) -> Result<Vec<String>> {
        let csv = format!("posterior_{name}.csv");
        p.write_csv_file(self.path(&csv))?;
        let summary: serde_json::Map<String, serde_json::Value> = p
            .params
            .iter()
            .enumerate()
            .map(|(j, &q)| {
                (
                    q.name().to_string(),
                    json!({ "mean": p.mean()[j], "std": p.std(q), "map": p.map[j] }),
                )
            })
            .collect();
        let js = format!("posterior_{name}.json");
        write_json(
            &self.path(&js),
            &json!({
                "parameters": summary, "acceptance": p.acceptance, "map_log_posterior": p.map_log_posterior,
                "samples": p.chain.len(), "seed": p.seed,
                "observations_hash": p.observations_hash, "surrogate_hash": p.surrogate_hash,
            }),
        )?;
        Ok(vec![csv, js])
    }

    pub fn invert(&self, mode: Mode) -> Result<Record> {
        let (neutron, joint, mut record) = self.observations()?;
        let s = self.seed(&format!("invert-{}", mode.name()));
        record = record.seed(&format!("invert-{}", mode.name()), s);
        let inf = &self.cfg.inference;
        let files = match mode {
            Mode::Neutron => {
                let nsm = self.load_surrogate("nsm", "train.csv", "surrogate_nsm.json")?;
                let p = neutron_pipeline(&neutron, &nsm, &self.design, inf, s)?;
                self.write_posterior("neutron", &p)?
            }
            Mode::Sequential => {
                let nsm = self.load_surrogate("nsm", "train.csv", "surrogate_nsm.json")?;
                let gsm = self.load_surrogate("gsm", "train.csv", "surrogate_gsm.json")?;
                let r = sequential_pipeline((&neutron, &nsm), (&joint, &gsm), &self.design, inf, s)?;
                let mut f = self.write_posterior("sequential_stage1", &r.first)?;
                f.extend(self.write_posterior("sequential", &r.second)?);
                f
            }
            Mode::Joint => {
                let jsm = self.load_surrogate("jsm", "train.csv", "surrogate_jsm.json")?;
                let p = joint_pipeline(&joint, &jsm, &self.design, inf, s)?;
                self.write_posterior("joint", &p)?
            }
        };
        for f in files {
            record = record.artifact(f);
        }
        Ok(record)
    }

    /// Partial outputs of a failed loop are still written and recorded; the
    /// loop error is returned alongside the record.
    pub fn csq(&self) -> Result<(Record, Option<Error>)> {
        let (_, joint, mut record) = self.observations()?;
        let jsm = self.load_surrogate("jsm", "train.csv", "surrogate_jsm.json")?;
        let facility = FacilityModel::new(self.design.clone())?;
        let s = self.seed("csq");
        let ctx = LoopContext {
            facility: &facility,
            data: &self.data,
            design: &self.design,
        };
        let mut audit = BufWriter::new(File::create(self.path("csq_audit.jsonl"))?);
        let outcome = csq_loop(&jsm, &joint, &ctx, &self.cfg.csq, s, Some(&mut audit));
        audit.flush()?;
        record = record.seed("csq", s).artifact("csq_audit.jsonl");
        outcome.surrogate.training().write_csv_file(self.path("train_jsm_csq.csv"))?;
        std::fs::write(self.path("surrogate_jsm_csq.json"), outcome.surrogate.to_json()? + "\n")?;
        record = record.artifact("train_jsm_csq.csv").artifact("surrogate_jsm_csq.json");
        let te = self.read_dataset("test.csv")?;
        let inputs: Vec<Vec<f64>> = (0..te.n()).map(|i| te.input_row(i)).collect();
        let (old, new) = (mcd(&jsm, &inputs)?, mcd(&outcome.surrogate, &inputs)?);
        let mut summary = json!({
            "points_added": outcome.records.len(),
            "mcd_old": old, "mcd_new": new, "mcd_ratio": old / new,
            "weights": outcome.weights,
            "error": outcome.error.as_ref().map(|e| e.to_string()),
        });
        if let Some(e) = outcome.error {
            write_json(&self.path("csq.json"), &summary)?;
            return Ok((record.artifact("csq.json"), Some(e)));
        }
        let ps = self.seed("invert-joint-csq");
        let post = joint_pipeline(&joint, &outcome.surrogate, &self.design, &self.cfg.inference, ps)?;
        summary["posterior_k_p_std"] = json!(post.std(Parameter::Kp));
        for f in self.write_posterior("joint_csq", &post)? {
            record = record.artifact(f);
        }
        write_json(&self.path("csq.json"), &summary)?;
        Ok((record.seed("invert-joint-csq", ps).artifact("csq.json"), None))
    }

    pub fn sobol(&self) -> Result<Record> {
        let (_, joint, record) = self.observations()?;
        let jsm = self.load_surrogate("jsm", "train.csv", "surrogate_jsm.json")?;
        let s = self.seed("sobol");
        let b = self.design.project(jsm.params())?;
        let (w, idx) = sobol_weights(|x| jsm.predict_mean(x), &b, &joint, self.cfg.csq.sobol_samples, s)?;
        let rows: Vec<Vec<f64>> = (0..idx.first_order.nrows())
            .map(|j| idx.first_order.row(j).iter().copied().collect())
            .collect();
        write_json(
            &self.path("sobol.json"),
            &json!({
                "inputs": jsm.params().iter().map(|p| p.name()).collect::<Vec<_>>(),
                "outputs": jsm.outputs().iter().map(|o| o.name()).collect::<Vec<_>>(),
                "first_order": rows, "output_variance": idx.variance, "samples": idx.samples,
                "weights": w.weights,
            }),
        )?;
        Ok(record.seed("sobol", s).artifact("sobol.json"))
    }

    pub fn report(&self, bins: usize) -> Result<Record> {
        let mut record = Record::default();
        let mut summary = serde_json::Map::new();
        for name in ["neutron", "sequential_stage1", "sequential", "joint", "joint_csq"] {
            let p = self.path(&format!("posterior_{name}.csv"));
            if !p.exists() {
                continue;
            }
            let post = PosteriorSamples::read_csv_file(&p)?;
            let grid = marginal_grid(&post, Parameter::Kp, Parameter::Source, &self.design, bins)?;
            let g = format!("marginal_{name}_kp_s.csv");
            let mut w = BufWriter::new(File::create(self.path(&g))?);
            writeln!(w, "k_p,s_intensity,density")?;
            for [a, b, d] in grid {
                writeln!(w, "{a},{b},{d}")?;
            }
            w.flush()?;
            record = record.artifact(g);
            summary.insert(
                name.to_string(),
                json!({ "k_p_mean": post.mean()[0], "k_p_std": post.std(Parameter::Kp), "samples": post.chain.len() }),
            );
        }
        if summary.is_empty() {
            return Err(Error::InsufficientData("no posterior files found; run `invert` first".into()));
        }
        write_json(&self.path("report.json"), &summary)?;
        Ok(record.artifact("report.json"))
    }
}

fn hex_key(v: &serde_json::Value) -> Result<String> {
    use sha2::{Digest, Sha256};
    Ok(hex::encode(Sha256::digest(serde_json::to_string(v)?.as_bytes())))
}
