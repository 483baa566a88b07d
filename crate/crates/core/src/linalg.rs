//! Matrix exponentials of birth–death generators.
//!
//! A tridiagonal generator with positive neighbour rates is reversible, so the
//! diagonal scaling `D = diag(sqrt(pi))` turns it into a symmetric matrix
//! `S = D A D^-1`. One symmetric eigendecomposition then gives `exp(cA)` for
//! every `c` in `O(m^2)` after an `O(m^3)` setup.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{invalid, Result};

/// Beyond this ratio of largest to smallest `sqrt(pi)` the similarity
/// transform loses too many digits and `exp` falls back to Padé.
const MAX_SCALING_RATIO: f64 = 1e6;

/// Spectral data of a reversible tridiagonal generator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    generator: DMatrix<f64>,
    invariant: DVector<f64>,
    sqrt_pi: DVector<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    pade_only: bool,
}

impl Spectrum {
    pub fn new(generator: &DMatrix<f64>) -> Result<Self> {
        let m = generator.nrows();
        if m == 0 || generator.ncols() != m {
            return Err(invalid("generator", "must be a non-empty square matrix"));
        }
        for i in 0..m.saturating_sub(1) {
            if !(generator[(i, i + 1)] > 0.0 && generator[(i + 1, i)] > 0.0) {
                return Err(invalid(
                    "generator",
                    format!("neighbour rates between states {i} and {} must be positive", i + 1),
                ));
            }
        }

        // Detailed balance: pi_{i+1} / pi_i = A_{i,i+1} / A_{i+1,i}.
        let mut log_pi = vec![0.0; m];
        for i in 1..m {
            log_pi[i] = log_pi[i - 1] + (generator[(i - 1, i)] / generator[(i, i - 1)]).ln();
        }
        let top = log_pi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut invariant = DVector::from_iterator(m, log_pi.iter().map(|l| (l - top).exp()));
        let total = invariant.sum();
        invariant /= total;
        let sqrt_pi = invariant.map(f64::sqrt);

        let mut sym = DMatrix::zeros(m, m);
        for i in 0..m {
            sym[(i, i)] = generator[(i, i)];
            if i + 1 < m {
                let off = (generator[(i, i + 1)] * generator[(i + 1, i)]).sqrt();
                sym[(i, i + 1)] = off;
                sym[(i + 1, i)] = off;
            }
        }
        let eig = SymmetricEigen::new(sym);

        let ratio = sqrt_pi.max() / sqrt_pi.min();
        Ok(Self {
            generator: generator.clone(),
            invariant,
            sqrt_pi,
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            pade_only: !(ratio.is_finite() && ratio < MAX_SCALING_RATIO),
        })
    }

    pub fn dim(&self) -> usize {
        self.invariant.len()
    }

    /// Invariant law `pi` with `pi A = 0`, `sum(pi) = 1`.
    pub fn invariant(&self) -> &DVector<f64> {
        &self.invariant
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.generator
    }

    /// Eigenvalues of the generator, ascending (all `<= 0`).
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `exp(c A)` for `c >= 0`. Entries are clamped at zero to remove
    /// round-off negatives.
    pub fn exp(&self, c: f64) -> DMatrix<f64> {
        let m = self.dim();
        if c == 0.0 {
            return DMatrix::identity(m, m);
        }
        let mut out = if self.pade_only {
            expm(&(&self.generator * c))
        } else {
            let q = &self.eigenvectors;
            let mut scaled = q.clone();
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col *= (c * self.eigenvalues[j]).exp();
            }
            let mut e = scaled * q.transpose();
            for i in 0..m {
                for j in 0..m {
                    e[(i, j)] *= self.sqrt_pi[j] / self.sqrt_pi[i];
                }
            }
            e
        };
        out.apply(|v| *v = v.max(0.0));
        out
    }

    /// Row-wise limit of `exp(cA)` as `c -> inf`: every row equals `pi`.
    pub fn stationary_matrix(&self) -> DMatrix<f64> {
        let m = self.dim();
        DMatrix::from_fn(m, m, |_, j| self.invariant[j])
    }
}

/// General matrix exponential by scaling and squaring with a diagonal
/// (6,6) Padé approximant.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    // c_k = (2q-k)! q! / ((2q)! k! (q-k)!) for q = 6
    const C: [f64; 7] = [
        1.0,
        0.5,
        5.0 / 44.0,
        1.0 / 66.0,
        1.0 / 792.0,
        1.0 / 15840.0,
        1.0 / 665280.0,
    ];
    let ident = DMatrix::<f64>::identity(n, n);
    let mut power = ident.clone();
    let mut num = ident.clone();
    let mut den = ident.clone();
    for (k, c) in C.iter().enumerate().skip(1) {
        power = &power * &scaled;
        num += &power * *c;
        if k % 2 == 0 {
            den += &power * *c;
        } else {
            den -= &power * *c;
        }
    }
    let mut result = den
        .lu()
        .solve(&num)
        .expect("Padé denominator is nonsingular for ||A|| <= 1/2");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}
