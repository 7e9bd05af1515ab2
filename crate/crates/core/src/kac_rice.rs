//! Expected numbers of critical points by Morse index, with and without a
//! level constraint, from the first-order Kac–Rice formula reduced to
//! ordered GOE eigenvalues.

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::goe::{normalization_kn, OrderedEigDensity, MAX_DENSITY_N};
use crate::special::{gaussian_cdf, gaussian_sf, integrate_1d, Interval, DEFAULT_TOL, TRUNCATION};

/// Largest field dimension with mean counts.
pub const MAX_COUNT_DIM: usize = MAX_DENSITY_N - 1;

/// Relative gap on λ4 − 3λ2² below which the degenerate branch is used.
pub const DEGENERATE_REL_TOL: f64 = 1e-12;

/// Node spacing of the trapezoidal rule for whole-line GOE expectations of
/// entire integrands; its error is far below double precision.
const TRAPEZOID_STEP: f64 = 0.1;

/// A mean-count request.
#[derive(Debug, Clone, Serialize)]
pub struct CountQuery {
    pub dim: usize,
    pub index: Option<usize>,
    pub level: Option<f64>,
    pub volume: f64,
}

impl CountQuery {
    /// Total count, count of index k, or count of index k above level u.
    pub fn evaluate(&self, model: &CovarianceModel) -> Result<f64> {
        match (self.index, self.level) {
            (None, None) => mean_count_total(model, self.dim, self.volume),
            (Some(k), None) => mean_count_index(model, self.dim, k, self.volume),
            (Some(k), Some(u)) => mean_count_index_above(model, self.dim, k, u, self.volume),
            (None, Some(u)) => (0..=self.dim).map(|k| mean_count_index_above(model, self.dim, k, u, self.volume)).sum(),
        }
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_COUNT_DIM {
        return Err(Error::Unsupported(format!("mean counts in dimension {dim} (supported 1..={MAX_COUNT_DIM})")));
    }
    Ok(())
}

fn check_volume(volume: f64) -> Result<()> {
    if !(volume >= 0.0 && volume.is_finite()) {
        return Err(Error::InvalidArgument(format!("volume {volume} must be finite and nonnegative")));
    }
    Ok(())
}

/// (E[e^{−L_1²/2}], …, E[e^{−L_n²/2}]) for the n-GOE by the trapezoidal rule.
pub fn exp_moments_all(n: usize) -> Result<Vec<f64>> {
    let density = OrderedEigDensity::new(n)?;
    let half = (TRUNCATION / TRAPEZOID_STEP).round() as i64;
    let rows: Vec<Vec<f64>> = (-half..=half)
        .into_par_iter()
        .map(|i| {
            let l = i as f64 * TRAPEZOID_STEP;
            let w = (-0.5 * l * l).exp() * TRAPEZOID_STEP;
            density.eval_all(l).map(|q| q.into_iter().map(|v| v * w).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = vec![0.0; n];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    Ok(out)
}

/// |S| π^{−(N+1)/2} (k_N/k_{N+1}) / (N+1), the model-free part of every count.
fn base_factor(dim: usize, volume: f64) -> Result<f64> {
    Ok(volume / std::f64::consts::PI.powf((dim as f64 + 1.0) / 2.0) * normalization_kn(dim)?
        / normalization_kn(dim + 1)?
        / (dim as f64 + 1.0))
}

fn moments(model: &CovarianceModel) -> Result<(f64, f64)> {
    Ok((model.spectral_moment(1)?, model.spectral_moment(2)?))
}

/// E 𝒩^c_k(S) for a set of volume |S| in dimension N.
pub fn mean_count_index(model: &CovarianceModel, dim: usize, k: usize, volume: f64) -> Result<f64> {
    check_dim(dim)?;
    check_volume(volume)?;
    if k > dim {
        return Err(Error::InvalidArgument(format!("index {k} exceeds dimension {dim}")));
    }
    let (l2, l4) = moments(model)?;
    let e = OrderedEigDensity::new(dim + 1)?.expectation(k + 1, |l| (-0.5 * l * l).exp(), DEFAULT_TOL)?;
    Ok(base_factor(dim, volume)? * (l4 / (3.0 * l2)).powf(dim as f64 / 2.0) * e)
}

/// Mean counts for every index k = 0..=N.
pub fn mean_counts_by_index(model: &CovarianceModel, dim: usize, volume: f64) -> Result<Vec<f64>> {
    check_dim(dim)?;
    check_volume(volume)?;
    let (l2, l4) = moments(model)?;
    let c = base_factor(dim, volume)? * (l4 / (3.0 * l2)).powf(dim as f64 / 2.0);
    Ok(exp_moments_all(dim + 1)?.into_iter().map(|e| c * e).collect())
}

/// E 𝒩^c(S), summed over indices.
pub fn mean_count_total(model: &CovarianceModel, dim: usize, volume: f64) -> Result<f64> {
    Ok(mean_counts_by_index(model, dim, volume)?.iter().sum())
}

/// E 𝒩^c(S) = 2|S|/(√3 π) · λ4/(3λ2) in dimension two.
pub fn mean_count_total_2d_closed_form(model: &CovarianceModel, volume: f64) -> Result<f64> {
    check_volume(volume)?;
    let (l2, l4) = moments(model)?;
    Ok(2.0 * volume / (3f64.sqrt() * std::f64::consts::PI) * l4 / (3.0 * l2))
}

/// Which of the two level formulas applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelBranch {
    Regular,
    Degenerate,
}

/// Branch for given moments; λ4 < 3λ2² lies outside both formulas.
pub fn level_branch(l2: f64, l4: f64) -> Result<LevelBranch> {
    let gap = l4 - 3.0 * l2 * l2;
    if gap.abs() <= DEGENERATE_REL_TOL * l4 {
        Ok(LevelBranch::Degenerate)
    } else if gap > 0.0 {
        Ok(LevelBranch::Regular)
    } else {
        Err(Error::Unsupported(format!("level counts need λ4 ≥ 3λ2² (λ2 = {l2}, λ4 = {l4})")))
    }
}

/// E 𝒩^c_k(u, S): critical points of index k with value above u.
pub fn mean_count_index_above(model: &CovarianceModel, dim: usize, k: usize, u: f64, volume: f64) -> Result<f64> {
    check_dim(dim)?;
    check_volume(volume)?;
    if k > dim {
        return Err(Error::InvalidArgument(format!("index {k} exceeds dimension {dim}")));
    }
    if u.is_nan() {
        return Err(Error::InvalidArgument("level is NaN".into()));
    }
    let (l2, l4) = moments(model)?;
    let density = OrderedEigDensity::new(dim + 1)?;
    let base = base_factor(dim, volume)?;
    let gauss = |l: f64| (-0.5 * l * l).exp();
    match level_branch(l2, l4)? {
        LevelBranch::Regular => {
            let scale = (l4 / (l4 - 3.0 * l2 * l2)).sqrt();
            let slope = 6f64.sqrt() * l2 / l4.sqrt();
            // the Φ̄ factor switches around ℓ = u / slope
            let pivot = (u / slope).clamp(-TRUNCATION, TRUNCATION);
            let w = |l: f64| gauss(l) * gaussian_sf(scale * (u - l * slope));
            let e = density.expectation_over(k + 1, Interval::below(pivot), w, DEFAULT_TOL)?
                + density.expectation_over(k + 1, Interval::above(pivot), w, DEFAULT_TOL)?;
            Ok(base * (l4 / (3.0 * l2)).powf(dim as f64 / 2.0) * e)
        }
        LevelBranch::Degenerate => {
            let cut = u / 2f64.sqrt();
            let e = if cut >= TRUNCATION {
                0.0
            } else {
                density.expectation_over(k + 1, Interval::above(cut), gauss, DEFAULT_TOL)?
            };
            Ok(base * l2.powf(dim as f64 / 2.0) * e)
        }
    }
}

/// Fractions E 𝒩^c_k / E 𝒩^c for k = 0..=N; independent of the model.
pub fn index_fractions(dim: usize) -> Result<Vec<f64>> {
    check_dim(dim)?;
    let e = exp_moments_all(dim + 1)?;
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// ℐ = E[Φ(Y) Φ(√2 Y)] with Y ~ 𝒩(0, 1/3).
pub fn integral_i() -> Result<f64> {
    let sd = (1.0f64 / 3.0).sqrt();
    let f = |y: f64| {
        let z = y / sd;
        (-0.5 * z * z).exp() / (sd * crate::special::SQRT_2PI) * gaussian_cdf(y) * gaussian_cdf(2f64.sqrt() * y)
    };
    integrate_1d(f, Interval::real_line(), 1e-13)
}

/// Index fractions in closed form for N = 2, 3, 4 (N = 4 through ℐ).
pub fn index_fractions_closed_form(dim: usize) -> Result<Vec<f64>> {
    let pi = std::f64::consts::PI;
    match dim {
        1 => Ok(vec![0.5, 0.5]),
        2 => Ok(vec![0.25, 0.5, 0.25]),
        3 => {
            let a = (29.0 - 6.0 * 6f64.sqrt()) / 116.0;
            let b = (29.0 + 6.0 * 6f64.sqrt()) / 116.0;
            Ok(vec![a, b, b, a])
        }
        4 => {
            let i = integral_i()?;
            let a = (100.0 * pi * i - 57.0) / (200.0 * pi);
            let c = (50.0 * pi * (1.0 - 2.0 * i) + 57.0) / (100.0 * pi);
            Ok(vec![a, 0.25, c, 0.25, a])
        }
        _ => Err(Error::Unsupported(format!("no closed-form fractions for N = {dim}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gauss() -> CovarianceModel {
        CovarianceModel::gaussian(1.0).unwrap()
    }

    #[test]
    fn trapezoid_matches_adaptive() {
        let t = exp_moments_all(4).unwrap();
        let d = OrderedEigDensity::new(4).unwrap();
        for k in 1..=4 {
            let a = d.expectation(k, |l| (-0.5 * l * l).exp(), 1e-11).unwrap();
            assert_abs_diff_eq!(t[k - 1], a, epsilon = 1e-10);
        }
    }

    #[test]
    fn fractions_match_closed_forms() {
        for n in 1..=4 {
            let f = index_fractions(n).unwrap();
            let c = index_fractions_closed_form(n).unwrap();
            for (a, b) in f.iter().zip(&c) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-9);
            }
        }
        assert_abs_diff_eq!(integral_i().unwrap(), 0.3014, epsilon = 2e-3);
    }

    #[test]
    fn fractions_sum_to_one_and_are_palindromic() {
        for n in 1..=6 {
            let f = index_fractions(n).unwrap();
            assert_abs_diff_eq!(f.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            for k in 0..=n {
                assert_abs_diff_eq!(f[k], f[n - k], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn two_dimensional_total() {
        let g = gauss();
        let sum = mean_count_total(&g, 2, 1.0).unwrap();
        let cf = mean_count_total_2d_closed_form(&g, 1.0).unwrap();
        assert!((sum / cf - 1.0).abs() < 1e-9);
        assert_abs_diff_eq!(cf, 4.0 / (3f64.sqrt() * std::f64::consts::PI), epsilon = 1e-12);
        assert_eq!(mean_count_total(&g, 2, 0.0).unwrap(), 0.0);
        let by = mean_counts_by_index(&g, 2, 1.0).unwrap();
        assert_abs_diff_eq!(mean_count_index(&g, 2, 1, 1.0).unwrap(), by[1], epsilon = 1e-10);
    }

    #[test]
    fn one_dimensional_rice_count() {
        let g = gauss();
        let total = mean_count_total(&g, 1, 1.0).unwrap();
        assert_abs_diff_eq!(total, 6f64.sqrt() / std::f64::consts::PI, epsilon = 1e-10);
    }

    #[test]
    fn fractions_do_not_depend_on_model() {
        let a = mean_counts_by_index(&gauss(), 3, 2.0).unwrap();
        let b = mean_counts_by_index(&CovarianceModel::cauchy(2.0, 0.7).unwrap(), 3, 2.0).unwrap();
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        for k in 0..4 {
            assert_abs_diff_eq!(a[k] / sa, b[k] / sb, epsilon = 1e-12);
        }
    }

    #[test]
    fn level_limits_and_monotonicity() {
        let g = gauss();
        for k in 0..=2 {
            let base = mean_count_index(&g, 2, k, 1.0).unwrap();
            let low = mean_count_index_above(&g, 2, k, -40.0, 1.0).unwrap();
            assert!((low - base).abs() < 1e-9 * base);
            assert!(mean_count_index_above(&g, 2, k, 40.0, 1.0).unwrap().abs() < 1e-12);
            let mut prev = f64::INFINITY;
            for i in -10..=10 {
                let v = mean_count_index_above(&g, 2, k, i as f64 * 0.5, 1.0).unwrap();
                assert!(v <= prev + 1e-12);
                prev = v;
            }
        }
    }

    #[test]
    fn degenerate_branch_is_continuous() {
        let l2 = 2.0;
        let deg = CovarianceModel::moments(l2, 3.0 * l2 * l2, None, None).unwrap();
        let reg = CovarianceModel::moments(l2, 3.0 * l2 * l2 * (1.0 + 1e-8), None, None).unwrap();
        for &u in &[-1.0, 0.0, 0.8] {
            for k in 0..=1 {
                let a = mean_count_index_above(&deg, 1, k, u, 1.0).unwrap();
                let b = mean_count_index_above(&reg, 1, k, u, 1.0).unwrap();
                assert!((a / b - 1.0).abs() < 1e-6, "u={u} k={k}: {a} vs {b}");
            }
        }
        let bad = CovarianceModel::moments(2.0, 11.0, None, None).unwrap();
        assert!(matches!(mean_count_index_above(&bad, 2, 0, 0.0, 1.0), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rejects_bad_queries() {
        let g = gauss();
        assert!(mean_count_index(&g, 2, 3, 1.0).is_err());
        assert!(mean_count_index(&g, 9, 0, 1.0).is_err());
        assert!(mean_count_index(&g, 2, 0, -1.0).is_err());
    }
}
