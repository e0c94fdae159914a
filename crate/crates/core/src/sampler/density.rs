//! Joint log-densities that the conditional samplers can target.

use ndarray::{Array1, Array2, ArrayView2};

use crate::experiments::mog::MoGDensity;
use crate::flow::{base_log_density, FlowModel, Mode};

/// A joint density over feature rows. Non-finite evaluations are reported as
/// `−∞` so a sampler simply rejects them.
pub trait JointDensity: Sync {
    fn dim(&self) -> usize;

    fn log_density_rows(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;

    /// Evaluator for `log p(x_i)` with column `j` of `rows` replaced.
    fn column_evaluator<'a>(&'a self, rows: ArrayView2<'a, f64>, j: usize) -> Box<dyn ColumnEvaluator + 'a> {
        Box::new(GenericColumn {
            density: self,
            rows: rows.to_owned(),
            j,
        })
    }
}

pub trait ColumnEvaluator {
    /// Writes `log p` of every row with `x_ij = values[i]` into `out`.
    fn eval(&mut self, values: &[f64], out: &mut [f64]);
}

fn finite_or_neg_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::NEG_INFINITY
    }
}

struct GenericColumn<'a, D: JointDensity + ?Sized> {
    density: &'a D,
    rows: Array2<f64>,
    j: usize,
}

impl<D: JointDensity + ?Sized> ColumnEvaluator for GenericColumn<'_, D> {
    fn eval(&mut self, values: &[f64], out: &mut [f64]) {
        for (i, &v) in values.iter().enumerate() {
            self.rows[[i, self.j]] = v;
        }
        let lp = self.density.log_density_rows(self.rows.view());
        for (o, v) in out.iter_mut().zip(lp) {
            *o = finite_or_neg_inf(v);
        }
    }
}

impl FlowModel {
    fn tail_log_density(&self, mut h: Array2<f64>, mut ld: Array1<f64>) -> Array1<f64> {
        for b in &self.blocks {
            let (u, mld) = b.made.forward(h.view()).expect("dimension checked by caller");
            ld += &mld;
            let (out, nld, _) = b.norm.forward_cached(u.view(), Mode::Eval).expect("evaluation mode");
            ld += &nld;
            h = out;
        }
        (base_log_density(h.view()) + ld).mapv(finite_or_neg_inf)
    }
}

impl JointDensity for FlowModel {
    fn dim(&self) -> usize {
        FlowModel::dim(self)
    }

    fn log_density_rows(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        if x.ncols() != FlowModel::dim(self) || x.iter().any(|v| !v.is_finite()) {
            return x
                .rows()
                .into_iter()
                .map(|r| self.log_density(&r.to_vec()).unwrap_or(f64::NEG_INFINITY))
                .collect();
        }
        let (_, z0, ld) = self.elementwise_stage(x);
        self.tail_log_density(z0, ld)
    }

    fn column_evaluator<'a>(&'a self, rows: ArrayView2<'a, f64>, j: usize) -> Box<dyn ColumnEvaluator + 'a> {
        let (y, z0, _) = self.elementwise_stage(rows);
        let n = rows.nrows();
        // log-det of every coordinate except `j`, which changes per proposal
        let mut ld_rest = Array1::from_elem(n, self.standardizer.log_det());
        if self.gauss_enabled {
            for i in 0..n {
                for k in 0..FlowModel::dim(self) {
                    if k != j {
                        ld_rest[i] += self.gauss.element(k, y[[i, k]]).log_det;
                    }
                }
            }
        }
        Box::new(FlowColumn {
            model: self,
            z0,
            ld_rest,
            j,
        })
    }
}

struct FlowColumn<'a> {
    model: &'a FlowModel,
    z0: Array2<f64>,
    ld_rest: Array1<f64>,
    j: usize,
}

impl ColumnEvaluator for FlowColumn<'_> {
    fn eval(&mut self, values: &[f64], out: &mut [f64]) {
        let m = self.model;
        let (mean, std) = (m.standardizer.mean[self.j], m.standardizer.std[self.j]);
        let mut ld = self.ld_rest.clone();
        let mut bad = vec![false; values.len()];
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                bad[i] = true;
                self.z0[[i, self.j]] = 0.0;
                continue;
            }
            let y = (v - mean) / std;
            if m.gauss_enabled {
                let e = m.gauss.element(self.j, y);
                self.z0[[i, self.j]] = e.z;
                ld[i] += e.log_det;
            } else {
                self.z0[[i, self.j]] = y;
            }
        }
        let lp = m.tail_log_density(self.z0.clone(), ld);
        for (i, o) in out.iter_mut().enumerate() {
            *o = if bad[i] { f64::NEG_INFINITY } else { lp[i] };
        }
    }
}

impl JointDensity for MoGDensity {
    fn dim(&self) -> usize {
        MoGDensity::dim(self)
    }

    fn log_density_rows(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        MoGDensity::log_density_rows(self, x).mapv(finite_or_neg_inf)
    }
}
