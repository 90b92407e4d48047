//! Dense strictly convex QP: equality elimination followed by the
//! Goldfarb-Idnani dual active-set method on the reduced problem.
//!
//! Solves `min ½ xᵀHx + cᵀx` s.t. `A_eq x = b_eq`, `A_in x ≤ b_in`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Family name attached to equality rows in infeasibility reports.
pub const EQUALITY_FAMILY: &str = "equality";

#[derive(Clone, Debug)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    /// Constraint family of each inequality row, used in diagnostics.
    pub in_family: Vec<String>,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            h,
            c,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            in_family: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn set_equalities(&mut self, a: DMatrix<f64>, b: DVector<f64>) {
        self.a_eq = a;
        self.b_eq = b;
    }

    /// Appends rows `a x ≤ b` tagged with `family`.
    pub fn push_inequalities(&mut self, a: &DMatrix<f64>, b: &DVector<f64>, family: &str) {
        let n = self.dim();
        let m0 = self.a_in.nrows();
        let m = a.nrows();
        let mut next = DMatrix::zeros(m0 + m, n);
        next.rows_mut(0, m0).copy_from(&self.a_in);
        next.rows_mut(m0, m).copy_from(a);
        self.a_in = next;
        let mut nb = DVector::zeros(m0 + m);
        nb.rows_mut(0, m0).copy_from(&self.b_in);
        nb.rows_mut(m0, m).copy_from(b);
        self.b_in = nb;
        self.in_family.extend(std::iter::repeat_n(family.to_string(), m));
    }

    /// Appends `lo ≤ x[i] ≤ hi` for each listed index; infinite sides are skipped.
    pub fn push_bounds(&mut self, idx: &[usize], lo: &[f64], hi: &[f64], family: &str) {
        let n = self.dim();
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for (k, &i) in idx.iter().enumerate() {
            if hi[k].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = 1.0;
                rows.push(r);
                rhs.push(hi[k]);
            }
            if lo[k].is_finite() {
                let mut r = vec![0.0; n];
                r[i] = -1.0;
                rows.push(r);
                rhs.push(-lo[k]);
            }
        }
        if rows.is_empty() {
            return;
        }
        let a = DMatrix::from_fn(rows.len(), n, |r, c| rows[r][c]);
        self.push_inequalities(&a, &DVector::from_vec(rhs), family);
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.c.dot(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the inequality rows (zero when inactive).
    pub multipliers: DVector<f64>,
    /// Multipliers of the equality rows.
    pub eq_multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    /// `‖A_eq x − b_eq‖∞`.
    pub eq_residual: f64,
    /// `‖Hx + c + A_eqᵀλ + A_inᵀμ‖∞`.
    pub kkt_residual: f64,
    /// Largest inequality violation (≤ 0 when feasible).
    pub max_violation: f64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("QP dimension mismatch: {0}")]
    Dimension(String),
    #[error("QP has non-finite data")]
    NonFinite,
    #[error("reduced Hessian is not positive definite")]
    NotConvex,
    #[error("infeasible: {family} constraint (row {row}) cannot be satisfied, violation {violation:.3e}")]
    Infeasible {
        family: String,
        row: usize,
        violation: f64,
    },
    #[error("no convergence within {iterations} iterations, max violation {max_violation:.3e}")]
    MaxIterations {
        iterations: usize,
        max_violation: f64,
        x: DVector<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpSettings {
    pub max_iterations: usize,
    /// Tikhonov term added to the reduced Hessian.
    pub regularization: f64,
    /// Inequality satisfaction tolerance.
    pub tolerance: f64,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            regularization: 1e-9,
            tolerance: 1e-10,
        }
    }
}

const REFINE_ROUNDS: usize = 10;

/// Particular solution and null-space basis of `A x = b` via SVD.
fn eliminate(a: &DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (m, n) = a.shape();
    if m == 0 {
        return (DVector::zeros(n), DMatrix::identity(n, n));
    }
    // Pad to at least n rows so the SVD returns a full right basis.
    let rows = m.max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.rows_mut(0, m).copy_from(a);
    let mut rhs = DVector::zeros(rows);
    rhs.rows_mut(0, m).copy_from(b);
    let svd = padded.clone().svd(true, true);
    let (u, vt, s) = (svd.u.unwrap(), svd.v_t.unwrap(), svd.singular_values);
    let smax = s.max();
    let tol = 1e-10 * smax.max(1.0);
    let range: Vec<usize> = (0..n).filter(|&i| s[i] > tol).collect();
    let pinv = |r: &DVector<f64>| {
        let mut x = DVector::zeros(n);
        for &i in &range {
            x += vt.row(i).transpose() * (u.column(i).dot(r) / s[i]);
        }
        x
    };
    // The SVD is occasionally loose; iterative refinement restores the
    // particular solution and the null basis to working precision.
    let mut x0 = pinv(&rhs);
    let mut last = f64::INFINITY;
    for _ in 0..REFINE_ROUNDS {
        let r = &rhs - &padded * &x0;
        let res = r.amax();
        if res >= last || res <= f64::EPSILON * (1.0 + rhs.amax()) {
            break;
        }
        last = res;
        x0 += pinv(&r);
    }
    let null: Vec<usize> = (0..n).filter(|&i| s[i] <= tol).collect();
    let mut v = DMatrix::zeros(n, null.len());
    for (k, &i) in null.iter().enumerate() {
        let mut col = vt.row(i).transpose();
        let mut last = f64::INFINITY;
        for _ in 0..REFINE_ROUNDS {
            let r = &padded * &col;
            let res = r.amax();
            if res >= last || res <= f64::EPSILON * smax {
                break;
            }
            last = res;
            col -= pinv(&r);
        }
        v.set_column(k, &col);
    }
    if v.ncols() > 0 {
        v = v.qr().q();
    }
    (x0, v)
}

/// Solves the problem. Pure function of the inputs.
pub fn solve(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    let n = p.dim();
    if p.h.shape() != (n, n)
        || p.a_eq.ncols() != n
        || p.a_eq.nrows() != p.b_eq.len()
        || p.a_in.ncols() != n
        || p.a_in.nrows() != p.b_in.len()
        || p.in_family.len() != p.b_in.len()
    {
        return Err(QpError::Dimension(format!(
            "n = {n}, H {:?}, A_eq {:?}, b_eq {}, A_in {:?}, b_in {}, families {}",
            p.h.shape(),
            p.a_eq.shape(),
            p.b_eq.len(),
            p.a_in.shape(),
            p.b_in.len(),
            p.in_family.len()
        )));
    }
    fn finite<'a>(it: impl IntoIterator<Item = &'a f64>) -> bool {
        it.into_iter().all(|v| v.is_finite())
    }
    if !finite(p.h.iter())
        || !finite(p.c.iter())
        || !finite(p.a_eq.iter())
        || !finite(p.b_eq.iter())
        || !finite(p.a_in.iter())
        || !finite(p.b_in.iter())
    {
        return Err(QpError::NonFinite);
    }

    let (x0, v) = eliminate(&p.a_eq, &p.b_eq);
    let eq_res = if p.b_eq.is_empty() {
        0.0
    } else {
        (&p.a_eq * &x0 - &p.b_eq).amax()
    };
    if eq_res > 1e-8 * (1.0 + p.b_eq.amax()) {
        return Err(QpError::Infeasible {
            family: EQUALITY_FAMILY.into(),
            row: (&p.a_eq * &x0 - &p.b_eq).iamax(),
            violation: eq_res,
        });
    }

    // Reduced problem in y: x = x0 + V y, constraints n_jᵀ y ≥ e_j.
    let k = v.ncols();
    let mut g = v.transpose() * &p.h * &v;
    g = (&g + g.transpose()) * 0.5;
    for i in 0..k {
        g[(i, i)] += settings.regularization;
    }
    let a = v.transpose() * (&p.h * &x0 + &p.c);
    let cn = -(&p.a_in * &v); // rows are n_jᵀ
    let e = -(&p.b_in - &p.a_in * &x0);
    let (y, u, active, iterations) = if k == 0 {
        (DVector::zeros(0), Vec::new(), Vec::new(), 0)
    } else {
        goldfarb_idnani(&g, &a, &cn, &e, &p.in_family, settings)?
    };
    let mut x = &x0 + &v * &y;
    // Put variables held by an active single-variable bound exactly on it.
    for &j in &active {
        let row = p.a_in.row(j);
        let nz: Vec<usize> = (0..n).filter(|&i| row[i] != 0.0).collect();
        if let [i] = nz[..] {
            if row[i].abs() == 1.0 {
                x[i] = p.b_in[j] * row[i];
            }
        }
    }

    let m_in = p.b_in.len();
    let mut mu = DVector::zeros(m_in);
    for (i, &j) in active.iter().enumerate() {
        mu[j] = u[i];
    }
    let max_violation = if m_in == 0 {
        f64::NEG_INFINITY
    } else {
        (&p.a_in * &x - &p.b_in).max()
    };
    if k == 0 && max_violation > settings.tolerance.max(1e-8) {
        let row = (&p.a_in * &x - &p.b_in).imax();
        return Err(QpError::Infeasible {
            family: p.in_family[row].clone(),
            row,
            violation: max_violation,
        });
    }
    // Equality multipliers from stationarity by least squares.
    let grad = &p.h * &x + &p.c + p.a_in.transpose() * &mu;
    let (lambda, kkt) = if p.b_eq.is_empty() {
        (DVector::zeros(0), grad.amax())
    } else {
        let at = p.a_eq.transpose();
        let lambda = at
            .clone()
            .svd(true, true)
            .solve(&(-&grad), 1e-12)
            .unwrap_or_else(|_| DVector::zeros(p.b_eq.len()));
        let r = &grad + &at * &lambda;
        (lambda, r.amax())
    };
    Ok(QpSolution {
        eq_residual: if p.b_eq.is_empty() {
            0.0
        } else {
            (&p.a_eq * &x - &p.b_eq).amax()
        },
        x,
        multipliers: mu,
        eq_multipliers: lambda,
        active,
        iterations,
        kkt_residual: kkt,
        max_violation,
    })
}

type GiResult = (DVector<f64>, Vec<f64>, Vec<usize>, usize);

/// `min ½yᵀGy + aᵀy` s.t. `Nᵀy ≥ e` (rows of `cn` are the `n_j`).
fn goldfarb_idnani(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    cn: &DMatrix<f64>,
    e: &DVector<f64>,
    family: &[String],
    settings: &QpSettings,
) -> Result<GiResult, QpError> {
    let k = g.nrows();
    let ginv = g
        .clone()
        .cholesky()
        .ok_or(QpError::NotConvex)?
        .inverse();
    let mut y = -(&ginv * a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let m = e.len();
    let slack = |y: &DVector<f64>, j: usize| cn.row(j).dot(&y.transpose()) - e[j];
    let mut iterations = 0;

    loop {
        // Most violated inactive constraint.
        let mut p = None;
        let mut worst = -settings.tolerance;
        for j in 0..m {
            if active.contains(&j) {
                continue;
            }
            let s = slack(&y, j);
            // Scale by row norm so the choice is invariant to row scaling.
            let sn = s / cn.row(j).norm().max(1e-300);
            if sn < worst {
                worst = sn;
                p = Some(j);
            }
        }
        let Some(p) = p else {
            return Ok((y, u, active, iterations));
        };
        let np: DVector<f64> = cn.row(p).transpose();
        let mut up = u.clone();
        up.push(0.0);
        loop {
            iterations += 1;
            if iterations > settings.max_iterations {
                let max_violation = (0..m).map(|j| -slack(&y, j)).fold(f64::NEG_INFINITY, f64::max);
                return Err(QpError::MaxIterations {
                    iterations: settings.max_iterations,
                    max_violation,
                    x: y,
                });
            }
            // Step directions from the current active set.
            let (z, r) = directions(&ginv, cn, &active, &np, k);
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for (i, &ri) in r.iter().enumerate() {
                if ri > 1e-14 {
                    let t = up[i] / ri;
                    if t < t1 {
                        t1 = t;
                        drop = Some(i);
                    }
                }
            }
            let zn = z.dot(&np);
            let t2 = if z.amax() <= 1e-14 || zn <= 1e-300 {
                f64::INFINITY
            } else {
                -slack(&y, p) / zn
            };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible {
                    family: family[p].clone(),
                    row: p,
                    violation: -slack(&y, p),
                });
            }
            if t2.is_infinite() {
                for (i, ri) in r.iter().enumerate() {
                    up[i] -= t1 * ri;
                }
                *up.last_mut().unwrap() += t1;
                let d = drop.unwrap();
                active.remove(d);
                up.remove(d);
                continue;
            }
            let t = t1.min(t2);
            y += &z * t;
            for (i, ri) in r.iter().enumerate() {
                up[i] -= t * ri;
            }
            *up.last_mut().unwrap() += t;
            if t2 <= t1 {
                active.push(p);
                u = up;
                break;
            }
            let d = drop.unwrap();
            active.remove(d);
            up.remove(d);
        }
    }
}

/// Primal step `z = H n_p` and dual step `r = N* n_p` for active set `act`.
fn directions(
    ginv: &DMatrix<f64>,
    cn: &DMatrix<f64>,
    act: &[usize],
    np: &DVector<f64>,
    k: usize,
) -> (DVector<f64>, Vec<f64>) {
    if act.is_empty() {
        return (ginv * np, Vec::new());
    }
    let mut na = DMatrix::zeros(k, act.len());
    for (i, &j) in act.iter().enumerate() {
        na.set_column(i, &cn.row(j).transpose());
    }
    let gn = ginv * &na;
    let m = na.transpose() * &gn;
    let rhs = gn.transpose() * np;
    let r = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.svd(true, true).solve(&rhs, 1e-14).unwrap_or_else(|_| DVector::zeros(act.len())),
    };
    let z = ginv * np - &gn * &r;
    (z, r.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, 4.0]));
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, -2.0]), epsilon = 1e-8);
    }

    #[test]
    fn bound_becomes_active() {
        // min (x − 3)² s.t. x ≤ 1 → x = 1, multiplier 4.
        let mut p = QpProblem::new(DMatrix::identity(1, 1) * 2.0, DVector::from_vec(vec![-6.0]));
        p.push_bounds(&[0], &[f64::NEG_INFINITY], &[1.0], "box");
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.multipliers[0], 4.0, epsilon = 1e-6);
        assert!(s.kkt_residual < 1e-6);
    }

    #[test]
    fn equality_and_inequality() {
        // min x² + y² s.t. x + y = 2, x ≤ 0.5 → (0.5, 1.5).
        let mut p = QpProblem::new(DMatrix::identity(2, 2) * 2.0, DVector::zeros(2));
        p.set_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DVector::from_vec(vec![2.0]));
        p.push_bounds(&[0], &[f64::NEG_INFINITY], &[0.5], "box");
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![0.5, 1.5]), epsilon = 1e-8);
        assert!(s.eq_residual < 1e-12 && s.kkt_residual < 1e-6);
    }

    #[test]
    fn reports_infeasible_family() {
        let mut p = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1));
        p.push_bounds(&[0], &[2.0], &[f64::INFINITY], "lower");
        p.push_bounds(&[0], &[f64::NEG_INFINITY], &[1.0], "upper");
        match solve(&p, &QpSettings::default()) {
            Err(QpError::Infeasible { family, .. }) => assert!(family == "lower" || family == "upper"),
            other => panic!("expected infeasibility, got {other:?}"),
        }
        let mut p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
        p.set_equalities(
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        );
        assert!(matches!(
            solve(&p, &QpSettings::default()),
            Err(QpError::Infeasible { family, .. }) if family == EQUALITY_FAMILY
        ));
    }

    #[test]
    fn fully_determined_equalities() {
        let mut p = QpProblem::new(DMatrix::identity(2, 2), DVector::zeros(2));
        p.set_equalities(DMatrix::identity(2, 2), DVector::from_vec(vec![1.0, -1.0]));
        let s = solve(&p, &QpSettings::default()).unwrap();
        assert_relative_eq!(s.x, DVector::from_vec(vec![1.0, -1.0]), epsilon = 1e-12);
        assert!(s.kkt_residual < 1e-9);
    }
}
