use super::FieldError;
use sprs::{CsMat, FillInReduction, SymmetryCheck};
use sprs_ldl::Ldl;

/// Sparse LDLᵀ with reverse Cuthill–McKee ordering.
pub(crate) fn solve_direct(a: &CsMat<f64>, rhs: &[f64]) -> Result<Vec<f64>, FieldError> {
    let factor = Ldl::new()
        .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
        .check_symmetry(SymmetryCheck::DontCheckSymmetry)
        .numeric(a.view())
        .map_err(|_| FieldError::SolverDiverged {
            iterations: 0,
            residual: f64::INFINITY,
        })?;
    let x: Vec<f64> = factor.solve(&rhs.to_vec());
    if x.iter().any(|v| !v.is_finite()) {
        return Err(FieldError::SolverDiverged {
            iterations: 0,
            residual: f64::NAN,
        });
    }
    Ok(x)
}

fn mat_vec(a: &CsMat<f64>, x: &[f64], out: &mut [f64]) {
    for (i, row) in a.outer_iterator().enumerate() {
        out[i] = row.iter().map(|(j, v)| v * x[j]).sum();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unpreconditioned conjugate gradients; stops when `‖r‖ ≤ tol·‖b‖`.
pub(crate) fn solve_cg(
    a: &CsMat<f64>,
    b: &[f64],
    tol: f64,
    max_iterations: usize,
) -> Result<Vec<f64>, FieldError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(x);
    }
    let target = tol * b_norm;
    let mut rr = dot(&r, &r);
    for iteration in 0..max_iterations {
        if rr.sqrt() <= target {
            return Ok(x);
        }
        mat_vec(a, &p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(FieldError::SolverDiverged {
                iterations: iteration + 1,
                residual: rr_next.sqrt() / b_norm,
            });
        }
        let beta = rr_next / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_next;
    }
    if rr.sqrt() <= target {
        Ok(x)
    } else {
        Err(FieldError::SolverDiverged {
            iterations: max_iterations,
            residual: rr.sqrt() / b_norm,
        })
    }
}
