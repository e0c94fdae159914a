//! Repeated tests with fresh responses on fixed features.

use std::path::Path;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::evaluate_selection;
use super::response::{gen_response, ResponseMode, ResponseSpec};
use crate::data::FeatureMatrix;
use crate::error::{Error, Result};
use crate::hrt::{build_null_library, test_with_library, NullLibrary, PipelineConfig, TestReport};
use crate::seed::{derive_seed, stream};

/// How each replicate's response is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponseTemplate {
    pub noise_std: f64,
    pub mode: ResponseMode,
    /// All coefficients zero (global null).
    pub null: bool,
}

impl Default for ResponseTemplate {
    fn default() -> Self {
        ResponseTemplate {
            noise_std: 1.0,
            mode: ResponseMode::Linear,
            null: false,
        }
    }
}

impl ResponseTemplate {
    pub fn draw(&self, d: usize, seed: u64) -> ResponseSpec {
        let mut s = ResponseSpec::random(d, self.noise_std, self.mode, seed);
        if self.null {
            s.beta.iter_mut().for_each(|b| *b = 0.0);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub gamma: f64,
    pub fdp: f64,
    pub power: Option<f64>,
    pub selected: Vec<usize>,
    pub relevant: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaAggregate {
    pub gamma: f64,
    pub replicates: usize,
    pub mean_fdp: f64,
    pub mean_power: Option<f64>,
    pub fdp_quantiles: [f64; 3],
    pub power_quantiles: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub records: Vec<ReplicateRecord>,
    pub aggregate: Vec<GammaAggregate>,
    pub n_replicates: usize,
    /// `(replicate, message)` for replicates that failed.
    pub failures: Vec<(usize, String)>,
    pub seed: u64,
}

/// Quartiles by linear interpolation.
fn quartiles(v: &[f64]) -> [f64; 3] {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (s.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        s[lo] + (h - lo as f64) * (s[hi] - s[lo])
    };
    [q(0.25), q(0.5), q(0.75)]
}

/// Per-gamma means and quartiles over the records, in order of `gammas`.
pub fn aggregate(records: &[ReplicateRecord], gammas: &[f64]) -> Vec<GammaAggregate> {
    gammas
        .iter()
        .filter_map(|&g| {
            let rs: Vec<&ReplicateRecord> = records.iter().filter(|r| r.gamma == g).collect();
            if rs.is_empty() {
                return None;
            }
            let fdp: Vec<f64> = rs.iter().map(|r| r.fdp).collect();
            let power: Vec<f64> = rs.iter().filter_map(|r| r.power).collect();
            Some(GammaAggregate {
                gamma: g,
                replicates: rs.len(),
                mean_fdp: fdp.iter().sum::<f64>() / fdp.len() as f64,
                mean_power: (!power.is_empty()).then(|| power.iter().sum::<f64>() / power.len() as f64),
                fdp_quantiles: quartiles(&fdp),
                power_quantiles: (!power.is_empty()).then(|| quartiles(&power)),
            })
        })
        .collect()
}

/// Selection metrics of one report at each level.
pub fn score_report(report: &TestReport, relevant: &[usize], replicate: usize, gammas: &[f64]) -> Result<Vec<ReplicateRecord>> {
    gammas
        .iter()
        .map(|&g| {
            let sel = report.reselect(g, report.correction)?.selected();
            let m = evaluate_selection(&sel, relevant);
            Ok(ReplicateRecord {
                replicate,
                seed: report.seed,
                gamma: g,
                fdp: m.fdp,
                power: m.power,
                selected: sel,
                relevant: relevant.to_vec(),
            })
        })
        .collect()
}

/// Seed of replicate `r` under master seed `seed`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    derive_seed(seed, &[stream::REPLICATE, r as u64])
}

/// `n_replicates` fresh responses tested against one shared null library.
pub fn replicate_with_library(
    x: &FeatureMatrix,
    library: &NullLibrary,
    response: &ResponseTemplate,
    config: &PipelineConfig,
    gammas: &[f64],
    n_replicates: usize,
) -> Result<ExperimentResult> {
    if n_replicates == 0 {
        return Err(Error::Config("replicate.count must be at least 1".into()));
    }
    if gammas.is_empty() || gammas.iter().any(|g| !(0.0..=1.0).contains(g)) {
        return Err(Error::Config("replicate.gammas must be non-empty and within [0, 1]".into()));
    }
    let d = x.n_cols();
    let outcomes: Vec<std::result::Result<Vec<ReplicateRecord>, String>> = (0..n_replicates)
        .into_par_iter()
        .map(|r| {
            let seed = replicate_seed(config.seed, r);
            let run = || -> Result<Vec<ReplicateRecord>> {
                let spec = response.draw(d, seed);
                let y: Array1<f64> = gen_response(x.values(), &spec)?;
                let report = test_with_library(x, y.view(), library, config, seed)?;
                score_report(&report, &spec.relevant(), r, gammas)
            };
            run().map_err(|e| e.to_string())
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(rs) => records.extend(rs),
            Err(msg) => {
                log::warn!("replicate {r} failed: {msg}");
                failures.push((r, msg));
            }
        }
    }
    Ok(ExperimentResult {
        aggregate: aggregate(&records, gammas),
        records,
        n_replicates,
        failures,
        seed: config.seed,
    })
}

/// Build the null library once, then run the replicates against it.
pub fn replicate_experiment(
    x: &FeatureMatrix,
    response: &ResponseTemplate,
    config: &PipelineConfig,
    gammas: &[f64],
    n_replicates: usize,
) -> Result<ExperimentResult> {
    let library = build_null_library(x, config)?;
    replicate_with_library(x, &library, response, config, gammas, n_replicates)
}

fn join(v: &[usize]) -> String {
    v.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ")
}

fn split_ids(s: &str) -> Result<Vec<usize>> {
    s.split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format("replicate csv", format!("bad feature id `{t}`"))))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("replicate csv", e.to_string())
}

impl ExperimentResult {
    pub fn succeeded(&self) -> usize {
        self.n_replicates - self.failures.len()
    }

    /// `replicate,seed,gamma,fdp,power,selected,relevant`; id lists are
    /// space separated and a missing power is empty.
    pub fn write_replicates_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["replicate", "seed", "gamma", "fdp", "power", "selected", "relevant"]).map_err(csv_err)?;
        for r in &self.records {
            w.write_record([
                r.replicate.to_string(),
                r.seed.to_string(),
                r.gamma.to_string(),
                r.fdp.to_string(),
                r.power.map(|p| p.to_string()).unwrap_or_default(),
                join(&r.selected),
                join(&r.relevant),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn aggregate_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            seed: u64,
            n_replicates: usize,
            n_succeeded: usize,
            failures: &'a [(usize, String)],
            aggregate: &'a [GammaAggregate],
        }
        serde_json::to_string_pretty(&Out {
            seed: self.seed,
            n_replicates: self.n_replicates,
            n_succeeded: self.succeeded(),
            failures: &self.failures,
            aggregate: &self.aggregate,
        })
        .expect("aggregate serializes")
    }

    pub fn write_aggregate_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.aggregate_json() + "\n")?;
        Ok(())
    }
}

pub fn read_replicates_csv(path: &Path) -> Result<Vec<ReplicateRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != 7 {
            return Err(Error::format("replicate csv", format!("row has {} fields, expected 7", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| Error::format("replicate csv", format!("bad number `{}`", &rec[i])))
        };
        out.push(ReplicateRecord {
            replicate: rec[0].parse().map_err(|_| Error::format("replicate csv", "bad replicate index"))?,
            seed: rec[1].parse().map_err(|_| Error::format("replicate csv", "bad seed"))?,
            gamma: num(2)?,
            fdp: num(3)?,
            power: if rec[4].is_empty() { None } else { Some(num(4)?) },
            selected: split_ids(&rec[5])?,
            relevant: split_ids(&rec[6])?,
        });
    }
    Ok(out)
}

/// Recompute the aggregate from per-replicate rows and check it against
/// the expected replicate count and reported FDPs.
pub fn verify_records(records: &[ReplicateRecord], gammas: &[f64], expected_replicates: usize) -> Result<Vec<GammaAggregate>> {
    for r in records {
        let m = evaluate_selection(&r.selected, &r.relevant);
        if (m.fdp - r.fdp).abs() > 1e-12 {
            return Err(Error::Mismatch(format!(
                "replicate {} at gamma {}: FDP {} but selections give {}",
                r.replicate, r.gamma, r.fdp, m.fdp
            )));
        }
    }
    let agg = aggregate(records, gammas);
    for a in &agg {
        if a.replicates != expected_replicates {
            return Err(Error::Mismatch(format!(
                "gamma {}: {} replicates recorded, {expected_replicates} expected",
                a.gamma, a.replicates
            )));
        }
    }
    if agg.len() != gammas.len() {
        return Err(Error::Mismatch("some gamma levels have no replicates".into()));
    }
    Ok(agg)
}
