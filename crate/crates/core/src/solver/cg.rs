use ndarray::{Array2, Zip};

use crate::error::{MameError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    /// `||b - A x|| / ||b||` at exit (absolute when `b = 0`).
    pub relative_residual: f64,
}

fn dot(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    Zip::from(a).and(b).fold(0.0, |acc, x, y| acc + x * y)
}

/// Conjugate gradients for a symmetric positive-definite operator on
/// matrix-shaped unknowns. Refines `x` in place; stops after `max_iter`
/// steps or once the relative residual drops to `rel_tol`.
pub fn conjugate_gradient<F>(apply: F, b: &Array2<f64>, x: &mut Array2<f64>, max_iter: usize, rel_tol: f64) -> Result<CgOutcome>
where
    F: Fn(&Array2<f64>) -> Array2<f64>,
{
    let b_norm = dot(b, b).sqrt();
    let scale = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut r = b - &apply(x);
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(MameError::Numerical("non-finite residual in conjugate gradients".into()));
    }
    let mut p = r.clone();
    let mut iterations = 0;
    while iterations < max_iter && rr.sqrt() > rel_tol * scale {
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !pap.is_finite() {
            return Err(MameError::Numerical("non-finite operator product in conjugate gradients".into()));
        }
        if pap <= 0.0 {
            break;
        }
        let step = rr / pap;
        x.scaled_add(step, &p);
        r.scaled_add(-step, &ap);
        let rr_next = dot(&r, &r);
        let ratio = rr_next / rr;
        rr = rr_next;
        p.zip_mut_with(&r, |pv, rv| *pv = rv + ratio * *pv);
        iterations += 1;
    }
    if !rr.is_finite() {
        return Err(MameError::Numerical("conjugate gradients diverged".into()));
    }
    Ok(CgOutcome {
        iterations,
        relative_residual: rr.sqrt() / scale,
    })
}
