//! Per-feature test results and their exports.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::correction::{select, Correction};
use super::pvalue::TieRule;
use crate::error::{Error, Result};
use crate::models::StatisticKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureResult {
    /// Column index in the input matrix.
    pub feature: usize,
    pub name: String,
    pub p_value: f64,
    pub selected: bool,
    pub exceedances: usize,
    pub ties: usize,
    pub acceptance_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub features: Vec<FeatureResult>,
    /// `T*`, shared by every feature.
    pub observed_statistic: f64,
    pub statistic: StatisticKind,
    pub gamma: f64,
    pub correction: Correction,
    /// `s(γ)`.
    pub threshold: Option<f64>,
    pub k: usize,
    pub ties: TieRule,
    pub seed: u64,
    pub timings: Vec<StageTiming>,
}

#[derive(Serialize)]
struct Summary<'a> {
    gamma: f64,
    method: Correction,
    s_gamma: Option<f64>,
    k: usize,
    statistic: StatisticKind,
    observed_statistic: f64,
    tie_rule: TieRule,
    seed: u64,
    n_tested: usize,
    selected: Vec<usize>,
    timings: &'a [StageTiming],
}

impl TestReport {
    pub fn p_values(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.p_value).collect()
    }

    /// Column indices of the selected features.
    pub fn selected(&self) -> Vec<usize> {
        self.features.iter().filter(|f| f.selected).map(|f| f.feature).collect()
    }

    /// The same p-values thresholded at another level or correction.
    pub fn reselect(&self, gamma: f64, correction: Correction) -> Result<TestReport> {
        let sel = select(&self.p_values(), gamma, correction)?;
        let mut out = self.clone();
        out.gamma = gamma;
        out.correction = correction;
        out.threshold = sel.threshold;
        for (i, f) in out.features.iter_mut().enumerate() {
            f.selected = sel.selected.binary_search(&i).is_ok();
        }
        Ok(out)
    }

    /// `feature_id,statistic,p_value,selected`, one row per tested feature.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["feature_id", "statistic", "p_value", "selected"]).map_err(csv_err)?;
        for f in &self.features {
            w.write_record([
                f.feature.to_string(),
                format!("{:e}", self.observed_statistic),
                format!("{:e}", f.p_value),
                u8::from(f.selected).to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> String {
        let s = Summary {
            gamma: self.gamma,
            method: self.correction,
            s_gamma: self.threshold,
            k: self.k,
            statistic: self.statistic,
            observed_statistic: self.observed_statistic,
            tie_rule: self.ties,
            seed: self.seed,
            n_tested: self.features.len(),
            selected: self.selected(),
            timings: &self.timings,
        };
        serde_json::to_string_pretty(&s).expect("summary serializes")
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.summary_json() + "\n")?;
        Ok(())
    }

    /// `feature_id, group, neg_log10_p` for Manhattan-style plots; `groups`
    /// is indexed by column and defaults to the feature name.
    pub fn write_manhattan_tsv(&self, path: &Path, groups: Option<&[String]>) -> Result<()> {
        let mut out = String::from("feature_id\tgroup\tneg_log10_p\n");
        for f in &self.features {
            let g = match groups {
                Some(g) => g
                    .get(f.feature)
                    .ok_or_else(|| Error::Mismatch(format!("no group label for feature {}", f.feature)))?,
                None => &f.name,
            };
            out.push_str(&format!("{}\t{}\t{}\n", f.feature, g, -f.p_value.log10()));
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("report csv", e.to_string())
}

/// Parse a report CSV back into `(feature_id, p_value, selected)` rows.
pub fn read_report_csv(path: &Path) -> Result<Vec<(usize, f64, bool)>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::format("report csv", "short row"));
        let id = field(0)?.parse().map_err(|_| Error::format("report csv", "bad feature_id"))?;
        let p = field(2)?.parse().map_err(|_| Error::format("report csv", "bad p_value"))?;
        let sel = field(3)? == "1";
        out.push((id, p, sel));
    }
    Ok(out)
}
