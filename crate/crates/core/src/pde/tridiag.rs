//! Thomas algorithm for tridiagonal systems.
//!
//! lower: sub-diagonal (offset -1), len n-1
//! diag:  main diagonal, len n
//! upper: super-diagonal (offset +1), len n-1

/// Solves `A x = rhs` in place, overwriting `rhs` with the solution.
/// `scratch` must have length n; it avoids reallocating per time step.
/// No pivoting: the theta-scheme matrices are strictly diagonally dominant
/// for the grids this crate builds.
pub fn solve_in_place(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) {
    let n = rhs.len();
    debug_assert!(n >= 2);
    debug_assert_eq!(diag.len(), n);
    debug_assert_eq!(lower.len(), n - 1);
    debug_assert_eq!(upper.len(), n - 1);
    debug_assert_eq!(scratch.len(), n);

    let mut pivot = diag[0];
    debug_assert!(pivot.abs() > 1e-300, "zero pivot in tridiagonal solve");
    scratch[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i - 1] * scratch[i - 1];
        debug_assert!(pivot.abs() > 1e-300, "zero pivot in tridiagonal solve");
        if i < n - 1 {
            scratch[i] = upper[i] / pivot;
        }
        rhs[i] = (rhs[i] - lower[i - 1] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}
