//! Thomas algorithm for tridiagonal systems.

use crate::error::{Error, Result};

/// Solves `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
///
/// `lower[0]` and `upper[n-1]` are ignored. The scheme matrices assembled in
/// this crate are diagonally dominant, so no pivoting is needed.
pub fn solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    if lower.len() != n || upper.len() != n || rhs.len() != n {
        return Err(Error::InvalidInput(format!(
            "tridiagonal band lengths differ: {} {} {} {}",
            lower.len(),
            n,
            upper.len(),
            rhs.len()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn apply(lower: &[f64], diag: &[f64], upper: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut s = diag[i] * x[i];
                if i > 0 {
                    s += lower[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    #[test]
    fn laplacian_system() {
        let n = 5;
        let lower = vec![-1.0; n];
        let upper = vec![-1.0; n];
        let diag = vec![2.0; n];
        let x = solve(&lower, &diag, &upper, &vec![1.0; n]).unwrap();
        // Continuous solution of -u'' = 1 with zero ends, sampled at the nodes.
        let want: Vec<f64> = (1..=n).map(|i| (i * (n + 1 - i)) as f64 / 2.0).collect();
        for (a, b) in x.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_reported() {
        let r = solve(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &[1.0, 1.0]);
        assert_eq!(r, Err(Error::SingularSystem { row: 0 }));
    }

    proptest! {
        #[test]
        fn dominant_systems_roundtrip(
            seed in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -5.0f64..5.0), 1..40)
        ) {
            let lower: Vec<f64> = seed.iter().map(|s| s.0).collect();
            let upper: Vec<f64> = seed.iter().map(|s| s.1).collect();
            let diag: Vec<f64> = seed.iter().map(|s| 2.5 + s.0.abs() + s.1.abs()).collect();
            let x_true: Vec<f64> = seed.iter().map(|s| s.2).collect();
            let rhs = apply(&lower, &diag, &upper, &x_true);
            let x = solve(&lower, &diag, &upper, &rhs).unwrap();
            for (a, b) in x.iter().zip(&x_true) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }
    }
}
