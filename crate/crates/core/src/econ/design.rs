//! Sparse two-way fixed-effects design matrices.
//!
//! Every row carries one unit dummy, at most one week dummy and a handful of
//! named regressors, so cross products are accumulated row by row instead of
//! through a dense `n × k` matrix.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};

use super::EconError;

pub(crate) struct Design {
    pub n_cols: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
    pub y: Vec<f64>,
    /// Cluster (unit) of each row.
    pub cluster: Vec<usize>,
    pub n_clusters: usize,
    /// Named regressors and their column index.
    pub named: Vec<(String, usize)>,
}

/// Per-row layout inputs: which panel unit/week the observation sits in.
pub(crate) struct Cell {
    pub unit: usize,
    pub week: usize,
    pub y: f64,
}

pub(crate) struct NamedColumn {
    pub name: String,
    /// Value for a given (panel unit, panel week).
    pub value: Box<dyn Fn(usize, usize) -> f64>,
}

impl Design {
    /// Unit dummies for every kept unit, week dummies for every week but the
    /// first (unless `week_fe` is off), then the named columns.
    pub fn build(cells: &[Cell], kept_units: &[usize], n_weeks: usize, week_fe: bool, named: Vec<NamedColumn>) -> Self {
        let n_units = kept_units.len();
        let mut unit_col = std::collections::HashMap::new();
        for (k, &u) in kept_units.iter().enumerate() {
            unit_col.insert(u, k);
        }
        let week_cols = if week_fe { n_weeks.saturating_sub(1) } else { 0 };
        let first_named = n_units + week_cols;
        let mut rows = Vec::with_capacity(cells.len());
        let mut y = Vec::with_capacity(cells.len());
        let mut cluster = Vec::with_capacity(cells.len());
        for c in cells {
            let uc = unit_col[&c.unit];
            let mut row = Vec::with_capacity(2 + named.len());
            row.push((uc, 1.0));
            if week_fe && c.week > 0 {
                row.push((n_units + c.week - 1, 1.0));
            }
            for (k, col) in named.iter().enumerate() {
                let v = (col.value)(c.unit, c.week);
                if v != 0.0 {
                    row.push((first_named + k, v));
                }
            }
            rows.push(row);
            y.push(c.y);
            cluster.push(uc);
        }
        let n_cols = first_named + named.len();
        let named = named.into_iter().enumerate().map(|(k, c)| (c.name, first_named + k)).collect();
        Design { n_cols, rows, y, cluster, n_clusters: n_units, named }
    }

    pub fn named_cols(&self) -> Vec<usize> {
        self.named.iter().map(|(_, c)| *c).collect()
    }

    pub fn eta(&self, coef: &DVector<f64>) -> Vec<f64> {
        self.rows.iter().map(|r| r.iter().map(|&(j, v)| coef[j] * v).sum()).collect()
    }

    /// `X' diag(w) X`.
    pub fn gram(&self, w: Option<&[f64]>) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n_cols, self.n_cols);
        for (i, r) in self.rows.iter().enumerate() {
            let wi = w.map_or(1.0, |w| w[i]);
            for &(a, va) in r {
                for &(b, vb) in r {
                    g[(a, b)] += wi * va * vb;
                }
            }
        }
        g
    }

    /// `X' v`.
    pub fn xt(&self, v: &[f64]) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_cols);
        for (r, &vi) in self.rows.iter().zip(v) {
            for &(j, x) in r {
                out[j] += x * vi;
            }
        }
        out
    }

    /// Cluster-robust sandwich `B (Σ_g s_g s_g') B · G/(G−1)` with
    /// `s_g = Σ_{i∈g} x_i r_i`.
    pub fn cluster_sandwich(&self, bread: &DMatrix<f64>, resid: &[f64]) -> DMatrix<f64> {
        let mut scores = vec![DVector::<f64>::zeros(self.n_cols); self.n_clusters];
        let mut present = vec![false; self.n_clusters];
        for ((r, &e), &g) in self.rows.iter().zip(resid).zip(&self.cluster) {
            present[g] = true;
            for &(j, x) in r {
                scores[g][j] += x * e;
            }
        }
        let mut meat = DMatrix::zeros(self.n_cols, self.n_cols);
        for s in &scores {
            meat.ger(1.0, s, s, 1.0);
        }
        let g = present.iter().filter(|p| **p).count() as f64;
        let v = bread * meat * bread;
        let v = v * (g / (g - 1.0));
        // Symmetrize away rounding asymmetry.
        (&v + v.transpose()) * 0.5
    }
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub(crate) fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>, EconError> {
    let chol = m
        .cholesky()
        .ok_or_else(|| EconError::Singular(format!("{what} is not positive definite; regressors are collinear")))?;
    Ok(chol.inverse())
}

pub(crate) fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>, EconError> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| EconError::Singular(format!("{what} is not positive definite; regressors are collinear")))?;
    Ok(chol.solve(rhs))
}

pub(crate) fn week_label(w: NaiveDate) -> String {
    format!("week_{w}")
}
