//! Pfaffians of small even-dimensional skew-symmetric matrices.

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 12;

/// Skewness tolerance at construction, relative to the largest entry.
pub const SKEW_TOL: f64 = 1e-12;

/// An even-dimensional real skew-symmetric matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SkewMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl SkewMatrix {
    /// Validates skew-symmetry up to [`SKEW_TOL`] and then antisymmetrises
    /// exactly, A ← (A − Aᵀ)/2.
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if !dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("skew matrix of odd dimension {dim}")));
        }
        if entries.len() != dim * dim {
            return Err(Error::InvalidArgument(format!(
                "expected {} entries for dimension {dim}, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let scale = entries.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let mut worst = 0.0f64;
        for i in 0..dim {
            for j in i..dim {
                worst = worst.max((entries[i * dim + j] + entries[j * dim + i]).abs());
            }
        }
        if worst > SKEW_TOL * scale {
            return Err(Error::NotSkew(worst));
        }
        let mut a = entries;
        for i in 0..dim {
            a[i * dim + i] = 0.0;
            for j in i + 1..dim {
                let v = 0.5 * (a[i * dim + j] - a[j * dim + i]);
                a[i * dim + j] = v;
                a[j * dim + i] = -v;
            }
        }
        Ok(SkewMatrix { dim, entries: a })
    }

    /// Builds the matrix from its strict upper triangle, given row by row.
    pub fn from_upper(dim: usize, upper: &[f64]) -> Result<Self> {
        if dim * dim.saturating_sub(1) / 2 != upper.len() {
            return Err(Error::InvalidArgument("wrong number of upper-triangle entries".into()));
        }
        let mut a = vec![0.0; dim * dim];
        let mut it = upper.iter();
        for i in 0..dim {
            for j in i + 1..dim {
                let v = *it.next().unwrap();
                a[i * dim + j] = v;
                a[j * dim + i] = -v;
            }
        }
        SkewMatrix::new(dim, a)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }
}

/// Pf(A) by expansion along the first remaining row,
/// Pf(A) = Σ_j (−1)^j a_{1j} Pf(A without rows/cols 1, j),
/// memoised on the set of remaining indices. Pf of the empty matrix is 1.
pub fn pfaffian(a: &SkewMatrix) -> Result<f64> {
    let n = a.dim();
    if n > MAX_DIM {
        return Err(Error::Unsupported(format!("pfaffian of dimension {n} (max {MAX_DIM})")));
    }
    let full: usize = (1usize << n) - 1;
    let mut memo: Vec<f64> = vec![f64::NAN; 1usize << n];
    memo[0] = 1.0;
    Ok(pf_rec(a, full, &mut memo))
}

fn pf_rec(a: &SkewMatrix, set: usize, memo: &mut [f64]) -> f64 {
    let cached = memo[set];
    if !cached.is_nan() {
        return cached;
    }
    let first = set.trailing_zeros() as usize;
    let rest = set & !(1 << first);
    let mut total = 0.0;
    let mut sign = 1.0;
    let mut bits = rest;
    while bits != 0 {
        let j = bits.trailing_zeros() as usize;
        bits &= bits - 1;
        let aij = a.get(first, j);
        if aij != 0.0 {
            total += sign * aij * pf_rec(a, rest & !(1 << j), memo);
        }
        sign = -sign;
    }
    memo[set] = total;
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::determinant;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_skew(n: usize, rng: &mut ChaCha8Rng) -> SkewMatrix {
        let upper: Vec<f64> = (0..n * (n - 1) / 2).map(|_| rng.random_range(-1.0..1.0)).collect();
        SkewMatrix::from_upper(n, &upper).unwrap()
    }

    #[test]
    fn small_cases() {
        let a = SkewMatrix::from_upper(2, &[3.5]).unwrap();
        assert_eq!(pfaffian(&a).unwrap(), 3.5);
        let (a12, a13, a14, a23, a24, a34) = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0);
        let b = SkewMatrix::from_upper(4, &[a12, a13, a14, a23, a24, a34]).unwrap();
        assert_eq!(pfaffian(&b).unwrap(), a12 * a34 - a13 * a24 + a14 * a23);
        let empty = SkewMatrix::new(0, vec![]).unwrap();
        assert_eq!(pfaffian(&empty).unwrap(), 1.0);
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(SkewMatrix::new(3, vec![0.0; 9]), Err(Error::InvalidArgument(_))));
        let bad = vec![0.0, 1.0, -0.9, 0.0];
        assert!(matches!(SkewMatrix::new(2, bad), Err(Error::NotSkew(_))));
        // tiny asymmetry is absorbed
        let ok = SkewMatrix::new(2, vec![0.0, 1.0, -1.0 - 1e-14, 0.0]).unwrap();
        assert_eq!(ok.get(0, 1), -ok.get(1, 0));
    }

    #[test]
    fn square_is_determinant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 4, 6, 8] {
            for _ in 0..20 {
                let a = random_skew(n, &mut rng);
                let pf = pfaffian(&a).unwrap();
                let det = determinant(a.entries(), n);
                assert_relative_eq!(pf * pf, det, max_relative = 1e-9, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn congruence_scales_by_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 4, 6] {
            let a = random_skew(n, &mut rng);
            let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut bab = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let mut s = 0.0;
                    for k in 0..n {
                        for l in 0..n {
                            s += b[i * n + k] * a.get(k, l) * b[j * n + l];
                        }
                    }
                    bab[i * n + j] = s;
                }
            }
            let lhs = pfaffian(&SkewMatrix::new(n, bab).unwrap()).unwrap();
            let rhs = determinant(&b, n) * pfaffian(&a).unwrap();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
        }
    }

    #[test]
    fn simultaneous_swap_flips_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 6;
        let a = random_skew(n, &mut rng);
        let (p, q) = (1, 4);
        let perm = |i: usize| {
            if i == p {
                q
            } else if i == q {
                p
            } else {
                i
            }
        };
        let swapped: Vec<f64> = (0..n * n).map(|k| a.get(perm(k / n), perm(k % n))).collect();
        let s = pfaffian(&SkewMatrix::new(n, swapped).unwrap()).unwrap();
        assert_relative_eq!(s, -pfaffian(&a).unwrap(), max_relative = 1e-12);
    }

    #[test]
    fn rejects_oversized() {
        let a = SkewMatrix::new(14, vec![0.0; 196]).unwrap();
        assert!(matches!(pfaffian(&a), Err(Error::Unsupported(_))));
    }
}
