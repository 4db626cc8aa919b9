//! Matrix-free conjugate gradients for symmetric positive (semi)definite
//! operators.

/// Outcome of one CG solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgInfo {
    pub iterations: usize,
    /// `||b - Mx|| / ||b||` at exit (0 when `b = 0`).
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `M x = b` starting from the given `x`, for at most `max_iter`
/// iterations or until the relative residual drops below `tol`.
pub fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    max_iter: usize,
    tol: f64,
) -> CgInfo {
    let n = b.len();
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.fill(0.0);
        return CgInfo {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut mx = vec![0.0; n];
    apply(x, &mut mx);
    let mut r: Vec<f64> = b.iter().zip(&mx).map(|(b, m)| b - m).collect();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let mut it = 0;
    while it < max_iter && rr.sqrt() > tol * b_norm {
        apply(&p, &mut mx);
        let pmp = dot(&p, &mx);
        if pmp <= 0.0 || !pmp.is_finite() {
            break;
        }
        let alpha = rr / pmp;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * mx[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        it += 1;
    }
    let rel = rr.sqrt() / b_norm;
    CgInfo {
        iterations: it,
        relative_residual: rel,
        converged: rel <= tol,
    }
}
