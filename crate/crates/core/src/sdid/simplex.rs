//! Minimization of `w'Qw − 2c'w` over the probability simplex.
//!
//! Frank–Wolfe with away steps and exact line search, started from the
//! uniform point. Every few iterations the iterate is handed to a primal
//! active-set refinement; when that lands on a point satisfying the KKT
//! conditions it is returned directly.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverControl {
    pub max_iter: usize,
    /// Bound on `max_{w_i>0} g_i − min_j g_j`, `g` the gradient.
    pub kkt_tol: f64,
}

impl Default for SolverControl {
    fn default() -> Self {
        SolverControl { max_iter: 10_000, kkt_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub weights: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpNonConvergence {
    pub iterations: usize,
    pub kkt_residual: f64,
}

const POLISH_EVERY: usize = 10;

fn gradient(qw: &DVector<f64>, c: &DVector<f64>) -> DVector<f64> {
    (qw - c) * 2.0
}

/// KKT residual of `w`: spread between the largest gradient entry on the
/// support and the smallest entry overall.
pub fn kkt_residual(w: &[f64], g: &DVector<f64>) -> f64 {
    let min = g.iter().copied().fold(f64::INFINITY, f64::min);
    let max_support = w
        .iter()
        .zip(g.iter())
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, g)| *g)
        .fold(f64::NEG_INFINITY, f64::max);
    (max_support - min).max(0.0)
}

pub fn objective(q: &DMatrix<f64>, c: &DVector<f64>, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    (w.transpose() * q * &w)[(0, 0)] - 2.0 * c.dot(&w)
}

/// Stationary point of the objective on the affine hull of `support`, as a
/// full-length vector. Solved by SVD so a singular face still yields a
/// minimizer.
fn face_solution(q: &DMatrix<f64>, c: &DVector<f64>, support: &[usize]) -> Option<DVector<f64>> {
    let m = support.len();
    let mut k = DMatrix::zeros(m + 1, m + 1);
    let mut rhs = DVector::zeros(m + 1);
    for (a, &i) in support.iter().enumerate() {
        for (b, &j) in support.iter().enumerate() {
            k[(a, b)] = 2.0 * q[(i, j)];
        }
        k[(a, m)] = 1.0;
        k[(m, a)] = 1.0;
        rhs[a] = 2.0 * c[i];
    }
    rhs[m] = 1.0;
    let eps = 1e-13 * k.amax().max(1.0);
    let sol = k.clone().svd(true, true).solve(&rhs, eps).ok()?;
    if sol.iter().any(|v| !v.is_finite()) || (&k * &sol - &rhs).amax() > 1e-9 * (1.0 + rhs.amax()) {
        return None;
    }
    let mut w = DVector::zeros(q.nrows());
    for (a, &i) in support.iter().enumerate() {
        w[i] = sol[a];
    }
    Some(w)
}

/// Primal active-set refinement from a feasible `w`: move toward the face
/// optimum, dropping coordinates that hit zero, and free the coordinate with
/// the most negative reduced gradient once the face is solved.
fn active_set(q: &DMatrix<f64>, c: &DVector<f64>, w: &[f64], tol: f64) -> Option<Vec<f64>> {
    let n = w.len();
    let mut w = DVector::from_column_slice(w);
    let mut support: Vec<bool> = w.iter().map(|v| *v > 0.0).collect();
    for _ in 0..8 * n + 20 {
        let idx: Vec<usize> = (0..n).filter(|&i| support[i]).collect();
        let cand = face_solution(q, c, &idx)?;
        let blocking = idx
            .iter()
            .filter(|&&i| cand[i] <= 0.0)
            .map(|&i| (w[i] / (w[i] - cand[i]), i))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        match blocking {
            Some((t, drop)) => {
                w += (&cand - &w) * t;
                w[drop] = 0.0;
                support[drop] = false;
                for i in 0..n {
                    if !support[i] || w[i] < 0.0 {
                        w[i] = 0.0;
                    }
                }
                let sum = w.sum();
                w /= sum;
            }
            None => {
                w = cand;
                let g = gradient(&(q * &w), c);
                let level = idx.iter().map(|&i| g[i]).fold(f64::NEG_INFINITY, f64::max);
                let enter = (0..n).filter(|&i| !support[i]).min_by(|&a, &b| g[a].total_cmp(&g[b]));
                match enter {
                    Some(j) if g[j] < level - tol => support[j] = true,
                    _ => {
                        let mut out: Vec<f64> = w.iter().copied().collect();
                        normalize(&mut out);
                        return Some(out);
                    }
                }
            }
        }
    }
    None
}

/// Accepts an active-set refinement of `w` when it is optimal and no worse.
fn polished(q: &DMatrix<f64>, c: &DVector<f64>, w: &[f64], ctrl: &SolverControl) -> Option<(Vec<f64>, f64)> {
    let cand = active_set(q, c, w, 0.5 * ctrl.kkt_tol)?;
    let resid = kkt_residual(&cand, &gradient(&(q * DVector::from_column_slice(&cand)), c));
    (resid <= ctrl.kkt_tol && objective(q, c, &cand) <= objective(q, c, w) + 1e-12).then_some((cand, resid))
}

fn normalize(w: &mut [f64]) {
    for v in w.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

pub fn solve_simplex_qp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    ctrl: &SolverControl,
) -> Result<QpSolution, QpNonConvergence> {
    let n = c.len();
    assert!(n > 0 && q.nrows() == n && q.ncols() == n);
    if n == 1 {
        return Ok(QpSolution { weights: vec![1.0], kkt_residual: 0.0, iterations: 0 });
    }
    let mut w = vec![1.0 / n as f64; n];
    let mut qw = q * DVector::from_column_slice(&w);
    let mut resid = f64::INFINITY;
    for iter in 0..ctrl.max_iter {
        if iter % 100 == 99 {
            normalize(&mut w);
            qw = q * DVector::from_column_slice(&w);
        }
        let g = gradient(&qw, c);
        resid = kkt_residual(&w, &g);
        if resid <= ctrl.kkt_tol {
            normalize(&mut w);
            return Ok(QpSolution { weights: w, kkt_residual: resid, iterations: iter });
        }
        if iter % POLISH_EVERY == POLISH_EVERY - 1 {
            if let Some((cand, cand_resid)) = polished(q, c, &w, ctrl) {
                return Ok(QpSolution { weights: cand, kkt_residual: cand_resid, iterations: iter + 1 });
            }
        }

        let gw = g.dot(&DVector::from_column_slice(&w));
        let s = g.imin();
        let v = (0..n)
            .filter(|&i| w[i] > 0.0)
            .max_by(|&a, &b| g[a].total_cmp(&g[b]).then(b.cmp(&a)))
            .expect("nonempty support");
        let fw_gap = gw - g[s];
        let away_gap = g[v] - gw;
        let (qd, gd, gamma_max, toward, away) = if fw_gap >= away_gap {
            // d = e_s − w
            let qd = q.column(s) - &qw;
            (qd, g[s] - gw, 1.0, Some(s), None)
        } else {
            // d = w − e_v
            let qd = &qw - q.column(v);
            let wv = w[v];
            (qd, gw - g[v], wv / (1.0 - wv), None, Some(v))
        };
        // d'Qd from the direction's definition.
        let dqd = match (toward, away) {
            (Some(s), _) => {
                let wqw = DVector::from_column_slice(&w).dot(&qw);
                q[(s, s)] - 2.0 * qw[s] + wqw
            }
            (_, Some(v)) => {
                let wqw = DVector::from_column_slice(&w).dot(&qw);
                wqw - 2.0 * qw[v] + q[(v, v)]
            }
            _ => unreachable!(),
        };
        let gamma = if dqd > 0.0 { (-gd / (2.0 * dqd)).clamp(0.0, gamma_max) } else { gamma_max };
        if gamma <= 0.0 {
            break;
        }
        match (toward, away) {
            (Some(s), _) => {
                for (i, wi) in w.iter_mut().enumerate() {
                    *wi *= 1.0 - gamma;
                    if i == s {
                        *wi += gamma;
                    }
                }
            }
            (_, Some(v)) => {
                for wi in w.iter_mut() {
                    *wi *= 1.0 + gamma;
                }
                if gamma >= gamma_max {
                    w[v] = 0.0;
                } else {
                    w[v] -= gamma;
                }
            }
            _ => unreachable!(),
        }
        qw += qd * gamma;
    }
    // One last exact attempt from the final iterate before giving up.
    if let Some((cand, cand_resid)) = polished(q, c, &w, ctrl) {
        return Ok(QpSolution { weights: cand, kkt_residual: cand_resid, iterations: ctrl.max_iter });
    }
    Err(QpNonConvergence { iterations: ctrl.max_iter, kkt_residual: resid })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qp(a: &DMatrix<f64>, b: &DVector<f64>, ridge: f64) -> (DMatrix<f64>, DVector<f64>) {
        let n = a.ncols();
        (a.transpose() * a + DMatrix::identity(n, n) * ridge, a.transpose() * b)
    }

    #[test]
    fn vertex_optimum_is_exact() {
        // Target equals the second column: optimum is e_2.
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 2.0, -1.0]);
        let b = a.column(1).into_owned();
        let (q, c) = qp(&a, &b, 0.0);
        let sol = solve_simplex_qp(&q, &c, &SolverControl::default()).unwrap();
        assert!((sol.weights[1] - 1.0).abs() < 1e-12);
        assert!(sol.weights[0].abs() < 1e-12);
    }

    #[test]
    fn interior_optimum_matches_grid() {
        let a = DMatrix::from_row_slice(4, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.3, 0.5, 0.0, 1.0, 0.1, 0.4, 0.2]);
        let b = DVector::from_column_slice(&[0.4, 0.5, 0.45, 0.2]);
        let (q, c) = qp(&a, &b, 0.01);
        let sol = solve_simplex_qp(&q, &c, &SolverControl::default()).unwrap();
        let best = objective(&q, &c, &sol.weights);
        let steps = 200;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let w = [i as f64 / steps as f64, j as f64 / steps as f64, (steps - i - j) as f64 / steps as f64];
                assert!(objective(&q, &c, &w) >= best - 1e-12);
            }
        }
        assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn flat_objective_keeps_uniform() {
        let q = DMatrix::zeros(4, 4);
        let c = DVector::zeros(4);
        let sol = solve_simplex_qp(&q, &c, &SolverControl::default()).unwrap();
        assert_eq!(sol.weights, vec![0.25; 4]);
    }

    #[test]
    fn single_coordinate() {
        let sol = solve_simplex_qp(&DMatrix::from_element(1, 1, 3.0), &DVector::from_element(1, -7.0), &SolverControl::default()).unwrap();
        assert_eq!(sol.weights, vec![1.0]);
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.2, 0.1, 1.0, 0.4, 0.3, 0.2, 1.0]);
        let b = DVector::from_column_slice(&[0.2, 0.5, 0.3]);
        let (q, c) = qp(&a, &b, 0.0);
        let err = solve_simplex_qp(&q, &c, &SolverControl { max_iter: 1, kkt_tol: 1e-300 }).unwrap_err();
        assert!(err.kkt_residual > 0.0);
    }

    #[test]
    fn rank_deficient_problem_converges() {
        // Forty weights, eight observations: the quadratic is singular.
        let a = DMatrix::from_fn(8, 40, |r, k| ((r * 40 + k) as f64 * 0.731).sin() + 0.1 * (k as f64 * 1.3).cos());
        let b = DVector::from_fn(8, |r, _| (r as f64 * 0.4).cos());
        let (q, c) = qp(&a, &b, 0.0);
        let sol = solve_simplex_qp(&q, &c, &SolverControl::default()).unwrap();
        assert!(sol.kkt_residual <= 1e-8);
        assert!(sol.weights.iter().all(|w| *w >= 0.0));
        assert!((sol.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let f = objective(&q, &c, &sol.weights);
        assert!(f <= objective(&q, &c, &[1.0 / 40.0; 40]) + 1e-12);
        for k in 0..40 {
            let mut e = vec![0.0; 40];
            e[k] = 1.0;
            assert!(f <= objective(&q, &c, &e) + 1e-12);
        }
    }
}
