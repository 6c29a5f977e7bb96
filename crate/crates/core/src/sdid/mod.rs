//! Synthetic difference-in-differences for one treated unit.
//!
//! Unit weights `ω` align the controls' pre-period path with the treated
//! unit (with an intercept and a ridge term); time weights `λ` align pre-period
//! weeks with each control's post-period mean. The effect is the weighted
//! double difference, with a placebo standard error obtained by reassigning
//! treatment to random controls.

mod simplex;
mod weights;

use std::io::Write;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::panel::{week_start, FlowPanel};
use crate::CountryCode;

pub use simplex::{solve_simplex_qp, QpNonConvergence, QpSolution, SolverControl};
pub use weights::{default_zeta, noise_level, solve_time_weights, solve_unit_weights, time_objective, unit_objective};

#[derive(Debug, thiserror::Error)]
pub enum SdidError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("{which} did not converge after {iterations} iterations (KKT residual {residual:e})")]
    NonConvergence { which: &'static str, iterations: usize, residual: f64 },
    #[error("placebo inference needs at least 2 control units, found {0}")]
    TooFewControls(usize),
    #[error("placebo inference needs at least 2 repetitions, got {0}")]
    TooFewReps(usize),
    #[error("covariates are collinear on the fitting cells: {}", .0.join(", "))]
    Collinear(Vec<String>),
    #[error("date {0} lies outside the panel")]
    OutsidePanel(NaiveDate),
}

type Result<T> = std::result::Result<T, SdidError>;

/// A time-varying covariate, `units × weeks`.
#[derive(Debug, Clone, PartialEq)]
pub struct Covariate {
    pub name: String,
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdidProblem {
    /// `units × weeks` outcomes.
    pub outcomes: DMatrix<f64>,
    pub units: Vec<CountryCode>,
    pub weeks: Vec<NaiveDate>,
    pub treated: usize,
    /// Number of pre-treatment weeks; the rest are post.
    pub t_pre: usize,
    pub covariates: Vec<Covariate>,
    pub seed: u64,
}

impl SdidProblem {
    /// Problem from a complete panel. The week containing `treatment_date`
    /// is the first post week.
    pub fn from_panel(panel: &FlowPanel, treated: CountryCode, treatment_date: NaiveDate, seed: u64) -> Result<Self> {
        if panel.is_empty() {
            return Err(SdidError::InvalidProblem("empty panel".into()));
        }
        let treated_idx = panel
            .unit_index(treated)
            .ok_or_else(|| SdidError::InvalidProblem(format!("treated country {treated} is not in the panel")))?;
        let t_pre = panel
            .week_index(week_start(treatment_date))
            .ok_or(SdidError::OutsidePanel(treatment_date))?;
        let mut outcomes = DMatrix::zeros(panel.n_units(), panel.n_weeks());
        for u in 0..panel.n_units() {
            for t in 0..panel.n_weeks() {
                outcomes[(u, t)] = panel.get(u, t).ok_or_else(|| {
                    SdidError::InvalidProblem(format!("missing cell {} {}", panel.countries[u], panel.weeks[t]))
                })?;
            }
        }
        let problem = SdidProblem {
            outcomes,
            units: panel.countries.clone(),
            weeks: panel.weeks.clone(),
            treated: treated_idx,
            t_pre,
            covariates: Vec::new(),
            seed,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn n_units(&self) -> usize {
        self.outcomes.nrows()
    }

    pub fn n_weeks(&self) -> usize {
        self.outcomes.ncols()
    }

    pub fn t_post(&self) -> usize {
        self.n_weeks() - self.t_pre
    }

    /// Control row indices in order.
    pub fn controls(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n_units()).filter(move |&i| i != self.treated)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SdidError::InvalidProblem(m));
        if self.units.len() != self.n_units() || self.weeks.len() != self.n_weeks() {
            return bad("unit or week labels do not match the outcome matrix".into());
        }
        if self.n_units() < 2 {
            return bad("need a treated unit and at least one control".into());
        }
        if self.treated >= self.n_units() {
            return bad(format!("treated index {} out of range", self.treated));
        }
        if self.t_pre < 2 {
            return bad(format!("need at least 2 pre-treatment weeks, found {}", self.t_pre));
        }
        if self.t_pre >= self.n_weeks() {
            return bad("need at least 1 post-treatment week".into());
        }
        if self.outcomes.iter().any(|v| !v.is_finite()) {
            return bad("outcomes must be finite".into());
        }
        for c in &self.covariates {
            if c.values.shape() != self.outcomes.shape() {
                return bad(format!("covariate {} does not cover every cell", c.name));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return bad(format!("covariate {} has non-finite values", c.name));
            }
        }
        Ok(())
    }

    /// Mean of the treated unit's pre-period outcomes.
    pub fn treated_pre_mean(&self) -> f64 {
        (0..self.t_pre).map(|t| self.outcomes[(self.treated, t)]).sum::<f64>() / self.t_pre as f64
    }

    /// Copy keeping the first `keep` weeks.
    fn truncate_weeks(&self, keep: usize) -> SdidProblem {
        SdidProblem {
            outcomes: self.outcomes.columns(0, keep).into_owned(),
            weeks: self.weeks[..keep].to_vec(),
            covariates: self
                .covariates
                .iter()
                .map(|c| Covariate { name: c.name.clone(), values: c.values.columns(0, keep).into_owned() })
                .collect(),
            ..self.clone()
        }
    }

    /// Controls only, with control `pseudo` (an index among controls) as the
    /// treated unit.
    fn placebo(&self, outcomes: &DMatrix<f64>, pseudo: usize) -> SdidProblem {
        let controls: Vec<usize> = self.controls().collect();
        SdidProblem {
            outcomes: outcomes.select_rows(&controls),
            units: controls.iter().map(|&i| self.units[i]).collect(),
            weeks: self.weeks.clone(),
            treated: pseudo,
            t_pre: self.t_pre,
            covariates: Vec::new(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdidConfig {
    pub reps: usize,
    /// Replaces the default ridge level for the unit weights.
    pub zeta_override: Option<f64>,
    pub solver: SolverControl,
}

impl Default for SdidConfig {
    fn default() -> Self {
        SdidConfig { reps: 200, zeta_override: None, solver: SolverControl::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdidWeights {
    pub controls: Vec<CountryCode>,
    pub omega: Vec<f64>,
    pub omega_intercept: f64,
    pub pre_weeks: Vec<NaiveDate>,
    pub lambda: Vec<f64>,
    pub zeta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectPoint {
    pub week: NaiveDate,
    pub effect: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdidResult {
    pub tau: f64,
    pub tau_relative: f64,
    pub pre_mean: f64,
    pub se_placebo: f64,
    pub se_relative: f64,
    pub effect_path: Vec<EffectPoint>,
    pub weights: SdidWeights,
    /// Covariate coefficients, in covariate order.
    pub gamma: Vec<f64>,
    pub placebo_taus: Vec<f64>,
}

/// Point estimate and per-post-week effects for given weights.
pub fn estimate_with_weights(problem: &SdidProblem, omega: &[f64], lambda: &[f64]) -> (f64, Vec<f64>) {
    point(&problem.outcomes, problem, omega, lambda)
}

fn point(y: &DMatrix<f64>, problem: &SdidProblem, omega: &[f64], lambda: &[f64]) -> (f64, Vec<f64>) {
    let (t_pre, t_all) = (problem.t_pre, problem.n_weeks());
    let controls: Vec<usize> = problem.controls().collect();
    // Synthetic control path: Σ_i ω_i Y_it.
    let synth: Vec<f64> = (0..t_all).map(|t| controls.iter().zip(omega).map(|(&i, w)| w * y[(i, t)]).sum()).collect();
    let tr: Vec<f64> = (0..t_all).map(|t| y[(problem.treated, t)]).collect();
    let pre_tr: f64 = lambda.iter().zip(&tr).map(|(l, v)| l * v).sum();
    let pre_synth: f64 = lambda.iter().zip(&synth).map(|(l, v)| l * v).sum();
    let path: Vec<f64> = (t_pre..t_all).map(|t| (tr[t] - pre_tr) - (synth[t] - pre_synth)).collect();
    let tau = path.iter().sum::<f64>() / path.len() as f64;
    (tau, path)
}

struct Fit {
    tau: f64,
    path: Vec<f64>,
    omega: Vec<f64>,
    intercept: f64,
    lambda: Vec<f64>,
}

fn fit(problem: &SdidProblem, config: &SdidConfig) -> Result<Fit> {
    let (omega, intercept) = solve_unit_weights(problem, config)?;
    let lambda = solve_time_weights(problem, config)?;
    let (tau, path) = estimate_with_weights(problem, &omega, &lambda);
    Ok(Fit { tau, path, omega, intercept, lambda })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceboSummary {
    pub se: f64,
    /// Standard error of each post-week effect.
    pub path_se: Vec<f64>,
    pub taus: Vec<f64>,
}

fn population_sd(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Placebo standard error: each repetition treats a random control and drops
/// the true treated unit. Repetition `r` draws from ChaCha stream `r` of the
/// problem seed, so results do not depend on thread scheduling.
pub fn placebo_variance(problem: &SdidProblem, reps: usize, config: &SdidConfig) -> Result<PlaceboSummary> {
    problem.validate()?;
    placebo_on(&problem.outcomes, problem, reps, config)
}

fn placebo_on(y: &DMatrix<f64>, problem: &SdidProblem, reps: usize, config: &SdidConfig) -> Result<PlaceboSummary> {
    let n_controls = problem.n_units() - 1;
    if n_controls < 2 {
        return Err(SdidError::TooFewControls(n_controls));
    }
    if reps < 2 {
        return Err(SdidError::TooFewReps(reps));
    }
    let draws: Vec<(f64, Vec<f64>)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(problem.seed);
            rng.set_stream(r as u64);
            let pseudo = rng.random_range(0..n_controls);
            let f = fit(&problem.placebo(y, pseudo), config)?;
            Ok((f.tau, f.path))
        })
        .collect::<Result<_>>()?;
    let taus: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let path_se = (0..problem.t_post())
        .map(|s| population_sd(&draws.iter().map(|d| d.1[s]).collect::<Vec<_>>()))
        .collect();
    Ok(PlaceboSummary { se: population_sd(&taus), path_se, taus })
}

/// Removes covariate effects fitted by least squares (no intercept) on the
/// control units' pre-period cells. Returns the adjusted outcomes and the
/// coefficients.
pub fn residualize_covariates(
    y: &DMatrix<f64>,
    covariates: &[Covariate],
    treated: usize,
    t_pre: usize,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    if covariates.is_empty() {
        return Ok((y.clone(), Vec::new()));
    }
    for c in covariates {
        if c.values.shape() != y.shape() {
            return Err(SdidError::InvalidProblem(format!("covariate {} does not cover every cell", c.name)));
        }
    }
    let cells: Vec<(usize, usize)> = (0..y.nrows())
        .filter(|&i| i != treated)
        .flat_map(|i| (0..t_pre).map(move |t| (i, t)))
        .collect();
    let k = covariates.len();
    let x = DMatrix::from_fn(cells.len(), k, |r, j| covariates[j].values[cells[r]]);
    let target = nalgebra::DVector::from_fn(cells.len(), |r, _| y[cells[r]]);

    // Gram–Schmidt pass to name the columns spanned by earlier ones.
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::new();
    let mut collinear = Vec::new();
    for (j, cov) in covariates.iter().enumerate() {
        let col = x.column(j).into_owned();
        let mut r = col.clone();
        for q in &basis {
            let d = q.dot(&r);
            r -= q * d;
        }
        let norm = r.norm();
        if norm <= 1e-10 * col.norm().max(f64::MIN_POSITIVE) {
            collinear.push(cov.name.clone());
        } else {
            basis.push(r / norm);
        }
    }
    if !collinear.is_empty() {
        return Err(SdidError::Collinear(collinear));
    }
    let gamma = (x.transpose() * &x)
        .cholesky()
        .ok_or_else(|| SdidError::Collinear(covariates.iter().map(|c| c.name.clone()).collect()))?
        .solve(&(x.transpose() * target));
    let mut adj = y.clone();
    for (c, g) in covariates.iter().zip(gamma.iter()) {
        adj -= &c.values * *g;
    }
    Ok((adj, gamma.iter().copied().collect()))
}

/// Point estimate, weights, effect path and placebo inference. Covariates,
/// when present, are residualized out first; the relative effect divides by
/// the treated unit's unadjusted pre-period mean.
pub fn estimate_sdid(problem: &SdidProblem, config: &SdidConfig) -> Result<SdidResult> {
    problem.validate()?;
    let (y_adj, gamma) = residualize_covariates(&problem.outcomes, &problem.covariates, problem.treated, problem.t_pre)?;
    let adjusted = SdidProblem { outcomes: y_adj, covariates: Vec::new(), ..problem.clone() };
    let f = fit(&adjusted, config)?;
    let placebo = placebo_on(&adjusted.outcomes, &adjusted, config.reps, config)?;

    let pre_mean = problem.treated_pre_mean();
    if pre_mean == 0.0 {
        return Err(SdidError::InvalidProblem("treated pre-period mean is zero".into()));
    }
    let effect_path = f
        .path
        .iter()
        .zip(&placebo.path_se)
        .enumerate()
        .map(|(s, (&effect, &se))| EffectPoint {
            week: problem.weeks[problem.t_pre + s],
            effect,
            se,
            ci_low: effect - 1.96 * se,
            ci_high: effect + 1.96 * se,
        })
        .collect();
    let weights = SdidWeights {
        controls: problem.controls().map(|i| problem.units[i]).collect(),
        omega: f.omega,
        omega_intercept: f.intercept,
        pre_weeks: problem.weeks[..problem.t_pre].to_vec(),
        lambda: f.lambda,
        zeta: config.zeta_override.unwrap_or_else(|| default_zeta(&adjusted)),
    };
    Ok(SdidResult {
        tau: f.tau,
        tau_relative: f.tau / pre_mean,
        pre_mean,
        se_placebo: placebo.se,
        se_relative: placebo.se / pre_mean.abs(),
        effect_path,
        weights,
        gamma,
        placebo_taus: placebo.taus,
    })
}

/// Re-estimates with treatment moved to the week containing `pseudo_date`.
/// Weeks from the true treatment onward are discarded so the placebo window
/// contains no treated observations.
pub fn placebo_in_time(problem: &SdidProblem, pseudo_date: NaiveDate, config: &SdidConfig) -> Result<SdidResult> {
    problem.validate()?;
    let pseudo = problem
        .weeks
        .iter()
        .position(|&w| w == week_start(pseudo_date))
        .ok_or(SdidError::OutsidePanel(pseudo_date))?;
    if pseudo == problem.t_pre {
        return estimate_sdid(problem, config);
    }
    if pseudo > problem.t_pre {
        return Err(SdidError::InvalidProblem(format!(
            "placebo date {pseudo_date} is after the true treatment week {}",
            problem.weeks[problem.t_pre]
        )));
    }
    let mut shifted = problem.truncate_weeks(problem.t_pre);
    shifted.t_pre = pseudo;
    estimate_sdid(&shifted, config)
}

/// Weights table: `country,omega`, largest weight first, then the
/// intercept and ridge level as comment lines.
pub fn write_weights<W: Write>(mut w: W, weights: &SdidWeights) -> std::io::Result<()> {
    writeln!(w, "# omega_intercept: {}", weights.omega_intercept)?;
    writeln!(w, "# zeta: {}", weights.zeta)?;
    writeln!(w, "country,omega")?;
    let mut order: Vec<usize> = (0..weights.omega.len()).collect();
    order.sort_by(|&a, &b| weights.omega[b].total_cmp(&weights.omega[a]).then(weights.controls[a].cmp(&weights.controls[b])));
    for i in order {
        writeln!(w, "{},{}", weights.controls[i], weights.omega[i])?;
    }
    Ok(())
}

/// Time weights: `week_start,lambda`.
pub fn write_time_weights<W: Write>(mut w: W, weights: &SdidWeights) -> std::io::Result<()> {
    writeln!(w, "week_start,lambda")?;
    for (week, l) in weights.pre_weeks.iter().zip(&weights.lambda) {
        writeln!(w, "{week},{l}")?;
    }
    Ok(())
}

/// Effect path: `week_start,effect,ci_low,ci_high`.
pub fn write_effect_path<W: Write>(mut w: W, result: &SdidResult) -> std::io::Result<()> {
    writeln!(w, "week_start,effect,ci_low,ci_high")?;
    for p in &result.effect_path {
        writeln!(w, "{},{},{},{}", p.week, p.effect, p.ci_low, p.ci_high)?;
    }
    Ok(())
}

/// Estimate table: levels and relative to the treated pre-period mean.
pub fn write_estimate<W: Write>(mut w: W, label: &str, result: &SdidResult) -> std::io::Result<()> {
    writeln!(w, "specification,tau,se,tau_relative,se_relative,pre_mean")?;
    writeln!(
        w,
        "{label},{},{},{},{},{}",
        result.tau, result.se_placebo, result.tau_relative, result.se_relative, result.pre_mean
    )
}
