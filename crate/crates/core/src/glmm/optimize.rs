//! BFGS minimization with backtracking line search, and a Newton polish on a
//! finite-difference Hessian of the analytic gradient.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Longest step (Euclidean) tried by the line search.
    pub max_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            max_step: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at every accepted iterate, starting point first.
    pub trace: Vec<f64>,
}

impl Minimum {
    pub fn gradient_norm(&self) -> f64 {
        self.gradient.norm()
    }
}

fn eval<F>(f: &mut F, x: &DVector<f64>) -> Option<(f64, DVector<f64>)>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    match f(x) {
        Ok((v, g)) if v.is_finite() && g.iter().all(|c| c.is_finite()) => Some((v, g)),
        _ => None,
    }
}

/// Minimizes `f` (value and gradient) from `x0`. Evaluation errors and
/// non-finite values inside the line search are treated as `+∞`.
pub fn minimize_bfgs<F>(mut f: F, x0: DVector<f64>, opts: BfgsOptions) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let (mut value, mut grad) = f(&x0)?;
    let mut x = x0;
    let n = x.len();
    let mut inv_h = DMatrix::<f64>::identity(n, n);
    let mut fresh = true;
    let mut trace = vec![value];
    let mut iterations = 0;
    let mut stalled = 0;

    while iterations < opts.max_iterations {
        if grad.norm() < opts.gradient_tolerance {
            break;
        }
        iterations += 1;
        let mut dir = -(&inv_h * &grad);
        let mut slope = grad.dot(&dir);
        if !(slope < 0.0) {
            inv_h = DMatrix::identity(n, n);
            fresh = true;
            dir = -grad.clone();
            slope = grad.dot(&dir);
        }
        let mut alpha = if fresh { 1.0 / grad.norm().max(1.0) } else { 1.0 };
        let dn = dir.norm() * alpha;
        if dn > opts.max_step {
            alpha *= opts.max_step / dn;
        }

        let mut next = None;
        for _ in 0..60 {
            let cand = &x + alpha * &dir;
            if let Some((v, g)) = eval(&mut f, &cand) {
                if v <= value + 1e-4 * alpha * slope {
                    next = Some((cand, v, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some((x_new, v_new, g_new)) = next else {
            if fresh {
                break;
            }
            inv_h = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };

        let s = &x_new - &x;
        let yv = &g_new - &grad;
        let sy = s.dot(&yv);
        if sy > 1e-12 * s.norm() * yv.norm() {
            if fresh {
                inv_h = DMatrix::identity(n, n) * (sy / yv.dot(&yv));
            }
            let rho = 1.0 / sy;
            let hy = &inv_h * &yv;
            let yhy = yv.dot(&hy);
            // H ← H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            inv_h -= rho * (&hy * s.transpose() + &s * hy.transpose());
            inv_h += (rho * rho * yhy + rho) * (&s * s.transpose());
            fresh = false;
        }
        // Progress below rounding: further line searches only chase noise.
        if value - v_new <= 16.0 * f64::EPSILON * value.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        x = x_new;
        value = v_new;
        grad = g_new;
        trace.push(value);
        if stalled >= 3 {
            break;
        }
    }

    let converged = grad.norm() < opts.gradient_tolerance;
    Ok(Minimum {
        x,
        value,
        gradient: grad,
        iterations,
        converged,
        trace,
    })
}

/// Central-difference Jacobian of the gradient, symmetrized.
pub fn numerical_hessian<F>(f: &mut F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-4 * x[j].abs().max(1.0);
        let mut xp = x.clone();
        xp[j] += step;
        let mut xm = x.clone();
        xm[j] -= step;
        let (_, gp) = f(&xp)?;
        let (_, gm) = f(&xm)?;
        h.set_column(j, &((gp - gm) / (2.0 * step)));
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Full Newton steps from a BFGS solution until the gradient tolerance is met.
/// A step is kept only if it lowers the objective, or leaves it unchanged to
/// within rounding while shrinking the gradient.
pub fn newton_polish<F>(f: &mut F, mut m: Minimum, tolerance: f64, max_steps: usize) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> Result<(f64, DVector<f64>)>,
{
    for _ in 0..max_steps {
        if m.gradient.norm() < tolerance {
            break;
        }
        let hess = numerical_hessian(f, &m.x)?;
        let Some(chol) = hess.cholesky() else { break };
        let dir = -chol.solve(&m.gradient);
        let mut improved = false;
        let mut t = 1.0;
        for _ in 0..8 {
            let cand = &m.x + t * &dir;
            if let Some((v, g)) = eval(f, &cand) {
                let rounding = 64.0 * f64::EPSILON * m.value.abs().max(1.0);
                if v < m.value || (v <= m.value + rounding && g.norm() < m.gradient.norm()) {
                    m.x = cand;
                    m.value = v;
                    m.gradient = g;
                    m.iterations += 1;
                    m.trace.push(v);
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    m.converged = m.gradient.norm() < tolerance;
    Ok(m)
}
