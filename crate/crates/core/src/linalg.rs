use crate::Scalar;

/// Square dense matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense<T> {
    pub n: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    #[inline]
    pub fn at(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[i * self.n + j]
    }

    /// In-place Cholesky factorisation followed by a solve of `A x = b`;
    /// `b` is overwritten with `x`. Returns `false` if `A` is not positive definite.
    pub fn cholesky_solve(mut self, b: &mut [T]) -> bool {
        let n = self.n;
        for j in 0..n {
            let mut diag = self.data[j * n + j];
            for k in 0..j {
                let l = self.data[j * n + k];
                diag -= l * l;
            }
            if !diag.is_strictly_positive() {
                return false;
            }
            let diag = diag.sqrt();
            self.data[j * n + j] = diag;
            for i in (j + 1)..n {
                let mut s = self.data[i * n + j];
                for k in 0..j {
                    s -= self.data[i * n + k] * self.data[j * n + k];
                }
                self.data[i * n + j] = s / diag;
            }
        }
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.data[i * n + k] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = b[i];
            for k in (i + 1)..n {
                s -= self.data[k * n + i] * b[k];
            }
            b[i] = s / self.data[i * n + i];
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_spd_system() {
        let mut a = Dense::<f64>::zeros(3);
        let rows = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                *a.at(i, j) = rows[i][j];
            }
        }
        let x = [1.0, -2.0, 0.5];
        let mut b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| rows[i][j] * x[j]).sum()).collect();
        assert!(a.cholesky_solve(&mut b));
        for i in 0..3 {
            assert!((b[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = Dense::<f64>::zeros(2);
        *a.at(0, 0) = 1.0;
        *a.at(0, 1) = 2.0;
        *a.at(1, 0) = 2.0;
        *a.at(1, 1) = 1.0;
        assert!(!a.cholesky_solve(&mut [1.0, 1.0]));
    }
}
