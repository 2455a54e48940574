//! Small dense complex linear algebra: LU factorization with partial
//! pivoting for the per-frequency demixing matrices (M <= 8 or so).

use ndarray::{Array1, Array2};
use num_complex::Complex64;

/// LU factorization with partial pivoting of a square complex matrix.
pub struct Lu {
    lu: Array2<Complex64>,
    perm: Vec<usize>,
    singular: bool,
}

impl Lu {
    pub fn new(a: &Array2<Complex64>) -> Self {
        let n = a.nrows();
        assert_eq!(n, a.ncols(), "LU requires a square matrix");
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut singular = false;

        for col in 0..n {
            // pivot: largest magnitude on/below the diagonal
            let mut pivot = col;
            let mut best = lu[[col, col]].norm_sqr();
            for row in col + 1..n {
                let cand = lu[[row, col]].norm_sqr();
                if cand > best {
                    best = cand;
                    pivot = row;
                }
            }
            if best == 0.0 || !best.is_finite() {
                singular = true;
                continue;
            }
            if pivot != col {
                for j in 0..n {
                    lu.swap([col, j], [pivot, j]);
                }
                perm.swap(col, pivot);
            }
            let diag = lu[[col, col]];
            for row in col + 1..n {
                let factor = lu[[row, col]] / diag;
                lu[[row, col]] = factor;
                for j in col + 1..n {
                    let upd = lu[[col, j]] * factor;
                    lu[[row, j]] -= upd;
                }
            }
        }

        Lu { lu, perm, singular }
    }

    pub fn is_singular(&self) -> bool {
        self.singular
    }

    /// log |det A|; -inf when singular.
    pub fn log_abs_det(&self) -> f64 {
        if self.singular {
            return f64::NEG_INFINITY;
        }
        let n = self.lu.nrows();
        (0..n).map(|i| self.lu[[i, i]].norm().ln()).sum()
    }

    /// Solve A x = b. Returns None when the factorization is singular.
    pub fn solve(&self, b: &Array1<Complex64>) -> Option<Array1<Complex64>> {
        if self.singular {
            return None;
        }
        let n = self.lu.nrows();
        let mut x = Array1::<Complex64>::zeros(n);
        for i in 0..n {
            x[i] = b[self.perm[i]];
        }
        // forward substitution (unit lower triangle)
        for i in 0..n {
            for j in 0..i {
                let upd = self.lu[[i, j]] * x[j];
                x[i] -= upd;
            }
        }
        // back substitution
        for i in (0..n).rev() {
            for j in i + 1..n {
                let upd = self.lu[[i, j]] * x[j];
                x[i] -= upd;
            }
            x[i] /= self.lu[[i, i]];
        }
        if x.iter().all(|v| v.re.is_finite() && v.im.is_finite()) {
            Some(x)
        } else {
            None
        }
    }

    /// Full inverse via one solve per canonical basis vector.
    pub fn inverse(&self) -> Option<Array2<Complex64>> {
        let n = self.lu.nrows();
        let mut inv = Array2::<Complex64>::zeros((n, n));
        for k in 0..n {
            let mut e = Array1::<Complex64>::zeros(n);
            e[k] = Complex64::new(1.0, 0.0);
            let col = self.solve(&e)?;
            for i in 0..n {
                inv[[i, k]] = col[i];
            }
        }
        Some(inv)
    }
}

/// Hermitian quadratic form w^H V w; the result is real for Hermitian V.
pub fn quadratic_form(w: &Array1<Complex64>, v: &Array2<Complex64>) -> f64 {
    let n = w.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..n {
        let mut row = Complex64::new(0.0, 0.0);
        for j in 0..n {
            row += v[[i, j]] * w[j];
        }
        acc += w[i].conj() * row;
    }
    acc.re
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = array![
            [c(2.0, 1.0), c(0.5, -0.3), c(0.0, 0.0)],
            [c(-1.0, 0.2), c(3.0, 0.0), c(0.4, 0.4)],
            [c(0.1, -0.1), c(0.0, 1.0), c(1.5, -0.5)],
        ];
        let x_true = array![c(1.0, -2.0), c(0.5, 0.5), c(-1.0, 0.25)];
        let b = a.dot(&x_true);
        let x = Lu::new(&a).solve(&b).unwrap();
        for i in 0..3 {
            assert!((x[i] - x_true[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let a = array![
            [c(1.0, 0.5), c(0.2, 0.0)],
            [c(0.0, -0.7), c(2.0, 1.0)],
        ];
        let inv = Lu::new(&a).inverse().unwrap();
        let prod = inv.dot(&a);
        for i in 0..2 {
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((prod[[i, j]] - c(expect, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn log_abs_det_matches_hand_value() {
        // det = (3)(2) - (1)(4) = 2 for a real matrix
        let a = array![
            [c(3.0, 0.0), c(1.0, 0.0)],
            [c(4.0, 0.0), c(2.0, 0.0)],
        ];
        let lad = Lu::new(&a).log_abs_det();
        assert!((lad - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_detected() {
        let a = array![
            [c(1.0, 0.0), c(2.0, 0.0)],
            [c(2.0, 0.0), c(4.0, 0.0)],
        ];
        let lu = Lu::new(&a);
        assert!(lu.is_singular());
        assert!(lu.solve(&array![c(1.0, 0.0), c(0.0, 0.0)]).is_none());
    }

    #[test]
    fn quadratic_form_is_real_for_hermitian() {
        let v = array![
            [c(2.0, 0.0), c(0.3, 0.4)],
            [c(0.3, -0.4), c(1.0, 0.0)],
        ];
        let w = array![c(0.6, -1.0), c(0.2, 0.9)];
        let q = quadratic_form(&w, &v);
        // compare against an explicit expansion
        let mut acc = c(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                acc += w[i].conj() * v[[i, j]] * w[j];
            }
        }
        assert!(acc.im.abs() < 1e-12);
        assert!((q - acc.re).abs() < 1e-12);
    }
}
