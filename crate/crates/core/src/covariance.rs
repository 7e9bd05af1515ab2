//! Isotropic covariance models r(‖s−t‖²), spectral moments and covariances
//! of partial derivatives.
//!
//! Two kinds of model exist. Analytic models carry r and its first four
//! derivatives at any argument, which the two-point computations need.
//! Moments-only models carry λ2..λ8 and support the one-point results
//! (mean counts, small-separation asymptotics) only.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Highest derivative order of r any computation asks for.
pub const MAX_RADIAL_DERIVATIVE: usize = 4;

/// A radial covariance supplied by the caller, with explicit derivatives.
pub trait RadialCovariance: Send + Sync {
    /// r^{(m)}(x) for m = 0..=4 and x ≥ 0.
    fn deriv(&self, m: usize, x: f64) -> f64;

    /// r^{(m)}(x) − r^{(m)}(0). Override when it can be computed without
    /// cancellation for small x.
    fn deriv_increment(&self, m: usize, x: f64) -> f64 {
        self.deriv(m, x) - self.deriv(m, 0.0)
    }

    fn name(&self) -> String {
        "custom".to_string()
    }
}

#[derive(Clone)]
enum Kind {
    /// r(x) = exp(−a x)
    Gaussian {
        a: f64,
    },
    /// r(x) = (1 + x/β)^{−ν}
    Cauchy {
        nu: f64,
        beta: f64,
    },
    Custom(Arc<dyn RadialCovariance>),
    Moments {
        l2: f64,
        l4: f64,
        l6: Option<f64>,
        l8: Option<f64>,
    },
}

/// Covariance model of a centred, unit-variance, stationary isotropic field.
#[derive(Clone)]
pub struct CovarianceModel {
    kind: Kind,
}

impl fmt::Debug for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CovarianceModel({self})")
    }
}

impl fmt::Display for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Gaussian { a } => write!(f, "gaussian:a={a}"),
            Kind::Cauchy { nu, beta } => write!(f, "cauchy:nu={nu},beta={beta}"),
            Kind::Custom(c) => write!(f, "{}", c.name()),
            Kind::Moments { l2, l4, l6, l8 } => {
                write!(f, "moments:l2={l2},l4={l4}")?;
                if let Some(v) = l6 {
                    write!(f, ",l6={v}")?;
                }
                if let Some(v) = l8 {
                    write!(f, ",l8={v}")?;
                }
                Ok(())
            }
        }
    }
}

fn falling(x: f64, m: usize) -> f64 {
    (0..m).fold(1.0, |acc, k| acc * (x - k as f64))
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

impl CovarianceModel {
    /// r(x) = e^{−a x}; λ_{2n} = (2n)!/n! aⁿ.
    pub fn gaussian(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::InvalidModel(format!("gaussian scale a={a} must be positive")));
        }
        Ok(CovarianceModel { kind: Kind::Gaussian { a } })
    }

    /// Generalised Cauchy r(x) = (1 + x/β)^{−ν}, valid in every dimension.
    pub fn cauchy(nu: f64, beta: f64) -> Result<Self> {
        if !(nu > 0.0 && beta > 0.0 && nu.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidModel(format!("cauchy parameters nu={nu}, beta={beta} must be positive")));
        }
        Ok(CovarianceModel { kind: Kind::Cauchy { nu, beta } })
    }

    /// A caller-supplied analytic model. Only r(0) = 1 is checked here.
    pub fn custom(r: Arc<dyn RadialCovariance>) -> Result<Self> {
        let r0 = r.deriv(0, 0.0);
        if (r0 - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidModel(format!("r(0) = {r0}, expected 1")));
        }
        Ok(CovarianceModel { kind: Kind::Custom(r) })
    }

    /// Model known only through its spectral moments.
    pub fn moments(l2: f64, l4: f64, l6: Option<f64>, l8: Option<f64>) -> Result<Self> {
        for (name, v) in [("l2", Some(l2)), ("l4", Some(l4)), ("l6", l6), ("l8", l8)] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidModel(format!("{name}={v} must be positive")));
                }
            }
        }
        Ok(CovarianceModel { kind: Kind::Moments { l2, l4, l6, l8 } })
    }

    pub fn is_analytic(&self) -> bool {
        !matches!(self.kind, Kind::Moments { .. })
    }

    /// r^{(m)}(x); analytic models only.
    pub fn radial_deriv(&self, m: usize, x: f64) -> Result<f64> {
        if m > MAX_RADIAL_DERIVATIVE {
            return Err(Error::Unsupported(format!("radial derivative of order {m}")));
        }
        match &self.kind {
            Kind::Gaussian { a } => Ok((-a).powi(m as i32) * (-a * x).exp()),
            Kind::Cauchy { nu, beta } => {
                Ok(falling(-nu, m) / beta.powi(m as i32) * (1.0 + x / beta).powf(-nu - m as f64))
            }
            Kind::Custom(c) => Ok(c.deriv(m, x)),
            Kind::Moments { .. } => Err(Error::NeedsAnalyticModel),
        }
    }

    /// r^{(m)}(x) − r^{(m)}(0), accurate for small x on the built-in models.
    pub fn radial_deriv_increment(&self, m: usize, x: f64) -> Result<f64> {
        if m > MAX_RADIAL_DERIVATIVE {
            return Err(Error::Unsupported(format!("radial derivative of order {m}")));
        }
        match &self.kind {
            Kind::Gaussian { a } => Ok((-a).powi(m as i32) * (-a * x).exp_m1()),
            Kind::Cauchy { nu, beta } => {
                let c = falling(-nu, m) / beta.powi(m as i32);
                Ok(c * ((-nu - m as f64) * (x / beta).ln_1p()).exp_m1())
            }
            Kind::Custom(c) => Ok(c.deriv_increment(m, x)),
            Kind::Moments { .. } => Err(Error::NeedsAnalyticModel),
        }
    }

    /// λ_{2n} = Var(∂ⁿX/∂t_ℓⁿ) = (−1)ⁿ (2n)!/n! r⁽ⁿ⁾(0) for n = 1..=4.
    pub fn spectral_moment(&self, n: usize) -> Result<f64> {
        if !(1..=4).contains(&n) {
            return Err(Error::Unsupported(format!("spectral moment of order 2·{n}")));
        }
        let v = match &self.kind {
            Kind::Moments { l2, l4, l6, l8 } => match n {
                1 => Some(*l2),
                2 => Some(*l4),
                3 => *l6,
                _ => *l8,
            }
            .ok_or_else(|| Error::InvalidModel(format!("λ{} not provided", 2 * n)))?,
            _ => {
                let sign = if n.is_multiple_of(2) { 1.0 } else { -1.0 };
                sign * factorial(2 * n) / factorial(n) * self.radial_deriv(n, 0.0)?
            }
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::InvalidModel(format!("λ{} = {v} must be positive", 2 * n)));
        }
        Ok(v)
    }

    /// (λ2, λ4, λ6, λ8) with the higher ones optional.
    pub fn moments_up_to(&self, n: usize) -> Result<Vec<f64>> {
        (1..=n).map(|k| self.spectral_moment(k)).collect()
    }
}

impl FromStr for CovarianceModel {
    type Err = Error;

    /// `gaussian[:a=<f>]`, `cauchy:nu=<f>,beta=<f>` or
    /// `moments:l2=<f>,l4=<f>[,l6=<f>][,l8=<f>]`.
    fn from_str(s: &str) -> Result<Self> {
        let (name, params) = match s.split_once(':') {
            Some((n, p)) => (n.trim(), p.trim()),
            None => (s.trim(), ""),
        };
        let mut kv = std::collections::BTreeMap::new();
        for part in params.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("model parameter '{part}' is not key=value")))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("model parameter '{part}' is not a number")))?;
            kv.insert(k.trim().to_string(), v);
        }
        let mut take = |k: &str| kv.remove(k);
        let model = match name {
            "gaussian" => CovarianceModel::gaussian(take("a").unwrap_or(1.0))?,
            "cauchy" => CovarianceModel::cauchy(take("nu").unwrap_or(1.0), take("beta").unwrap_or(1.0))?,
            "moments" => {
                let l2 = take("l2").ok_or_else(|| Error::InvalidArgument("moments model needs l2".into()))?;
                let l4 = take("l4").ok_or_else(|| Error::InvalidArgument("moments model needs l4".into()))?;
                CovarianceModel::moments(l2, l4, take("l6"), take("l8"))?
            }
            other => return Err(Error::InvalidArgument(format!("unknown covariance model '{other}'"))),
        };
        if let Some(k) = kv.keys().next() {
            return Err(Error::InvalidArgument(format!("unknown parameter '{k}' for model '{name}'")));
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// derivative covariances
// ---------------------------------------------------------------------------

/// Orders of two partial derivatives ∂^i X and ∂^j X.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexPair {
    pub i: Vec<u8>,
    pub j: Vec<u8>,
}

impl MultiIndexPair {
    pub fn new(i: Vec<u8>, j: Vec<u8>) -> Result<Self> {
        if i.len() != j.len() {
            return Err(Error::InvalidArgument("multi-indices of different lengths".into()));
        }
        if i.iter().chain(&j).any(|&v| v > 4) {
            return Err(Error::Unsupported("derivative order above 4 in one coordinate".into()));
        }
        Ok(MultiIndexPair { i, j })
    }

    /// Multi-index for the derivative ∂/∂t_{a}∂t_{b}… given as a coordinate list.
    pub fn from_coords(dim: usize, left: &[usize], right: &[usize]) -> Result<Self> {
        let count = |c: &[usize]| {
            let mut v = vec![0u8; dim];
            for &k in c {
                v[k] += 1;
            }
            v
        };
        MultiIndexPair::new(count(left), count(right))
    }
}

/// E[∂^i X(t) ∂^j X(t)] at a single point:
/// (−1)^{|β|+|j|} λ_{2|β|} |β|!/(2|β|)! ∏ (2β_ℓ)!/β_ℓ!, β_ℓ = (i_ℓ + j_ℓ)/2,
/// and zero whenever some i_ℓ + j_ℓ is odd.
pub fn derivative_covariance(model: &CovarianceModel, p: &MultiIndexPair) -> Result<f64> {
    let mut beta = Vec::with_capacity(p.i.len());
    for (a, b) in p.i.iter().zip(&p.j) {
        let s = (*a + *b) as usize;
        if s % 2 == 1 {
            return Ok(0.0);
        }
        beta.push(s / 2);
    }
    let b: usize = beta.iter().sum();
    if b > 4 {
        return Err(Error::Unsupported(format!("covariance of derivatives with |β| = {b}")));
    }
    let lam = if b == 0 { 1.0 } else { model.spectral_moment(b)? };
    let jabs: usize = p.j.iter().map(|&v| v as usize).sum();
    let sign = if (b + jabs).is_multiple_of(2) { 1.0 } else { -1.0 };
    let prod: f64 = beta.iter().map(|&bl| factorial(2 * bl) / factorial(bl)).product();
    Ok(sign * lam * factorial(b) / factorial(2 * b) * prod)
}

/// Set partitions of `0..m` into blocks of size one or two, as
/// (singletons, pairs).
fn small_block_partitions(m: usize) -> Vec<(Vec<usize>, Vec<(usize, usize)>)> {
    fn rec(
        rest: &[usize],
        singles: &mut Vec<usize>,
        pairs: &mut Vec<(usize, usize)>,
        out: &mut Vec<(Vec<usize>, Vec<(usize, usize)>)>,
    ) {
        let Some((&first, tail)) = rest.split_first() else {
            out.push((singles.clone(), pairs.clone()));
            return;
        };
        singles.push(first);
        rec(tail, singles, pairs, out);
        singles.pop();
        for (k, &other) in tail.iter().enumerate() {
            let mut remaining: Vec<usize> = tail.to_vec();
            remaining.remove(k);
            pairs.push((first, other));
            rec(&remaining, singles, pairs, out);
            pairs.pop();
        }
    }
    let idx: Vec<usize> = (0..m).collect();
    let mut out = Vec::new();
    rec(&idx, &mut Vec::new(), &mut Vec::new(), &mut out);
    out
}

/// Cov(∂X(s)/∂s_{left…}, ∂X(t)/∂t_{right…}) for τ = s − t, where `left`
/// and `right` list coordinate indices (repeats allowed, total order ≤ 4).
///
/// Uses ∂_s^i ∂_t^j r(‖s−t‖²) = (−1)^{|j|} ∂_τ^{i+j} r(‖τ‖²) and the chain
/// rule for the quadratic inner function: only blocks of size one (2τ_a) and
/// two (2δ_ab) contribute.
pub fn cross_covariance(model: &CovarianceModel, left: &[usize], right: &[usize], tau: &[f64]) -> Result<f64> {
    let coords: Vec<usize> = left.iter().chain(right).copied().collect();
    let m = coords.len();
    if m > MAX_RADIAL_DERIVATIVE * 2 {
        return Err(Error::Unsupported(format!("cross covariance of total order {m}")));
    }
    let x: f64 = tau.iter().map(|v| v * v).sum();
    let mut total = 0.0;
    for (singles, pairs) in small_block_partitions(m) {
        let mut term = 1.0;
        for &(a, b) in &pairs {
            if coords[a] != coords[b] {
                term = 0.0;
                break;
            }
            term *= 2.0;
        }
        if term == 0.0 {
            continue;
        }
        for &a in &singles {
            term *= 2.0 * tau[coords[a]];
        }
        if term == 0.0 {
            continue;
        }
        let order = singles.len() + pairs.len();
        total += term * model.radial_deriv(order, x)?;
    }
    let sign = if right.len().is_multiple_of(2) { 1.0 } else { -1.0 };
    Ok(sign * total)
}

// ---------------------------------------------------------------------------
// ζ-blocks
// ---------------------------------------------------------------------------

/// Covariance matrices of the independent groups ζ1..ζ5 of derivatives at a
/// single point (ℓ = 2 is used for the mixed group ζ5).
#[derive(Debug, Clone, Serialize)]
pub struct ZetaBlocks {
    pub dim: usize,
    /// (X_2..X_N without X_ℓ): λ2·Id
    pub zeta1: Matrix,
    /// (X_ij, i<j): (λ4/3)·Id
    pub zeta2: Matrix,
    /// (X, X_1111, X_11, …, X_NN): M_{(N+2)}
    pub zeta3: Matrix,
    /// (X_1, X_111, X_122, …, X_1NN): M̃_{(N+1)}
    pub zeta4: Matrix,
    /// (X_ℓ, X_11ℓ)
    pub zeta5: Matrix,
}

fn cov_matrix(model: &CovarianceModel, dim: usize, vars: &[Vec<usize>]) -> Result<Matrix> {
    let n = vars.len();
    let mut m = Matrix::zeros(n, n);
    for a in 0..n {
        for b in 0..n {
            let p = MultiIndexPair::from_coords(dim, &vars[a], &vars[b])?;
            m.set(a, b, derivative_covariance(model, &p)?);
        }
    }
    Ok(m)
}

/// Assembles Var(ζ1)..Var(ζ5) entrywise from [`derivative_covariance`].
pub fn zeta_block_covariances(model: &CovarianceModel, dim: usize) -> Result<ZetaBlocks> {
    if dim < 2 {
        return Err(Error::Unsupported("ζ-blocks need N ≥ 2".into()));
    }
    let ell = 1usize; // zero-based coordinate 2
    let zeta1: Vec<Vec<usize>> = (1..dim).filter(|&k| k != ell).map(|k| vec![k]).collect();
    let mut zeta2 = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            zeta2.push(vec![i, j]);
        }
    }
    let mut zeta3 = vec![vec![], vec![0, 0, 0, 0]];
    zeta3.extend((0..dim).map(|k| vec![k, k]));
    let mut zeta4 = vec![vec![0], vec![0, 0, 0]];
    zeta4.extend((1..dim).map(|k| vec![0, k, k]));
    let zeta5 = vec![vec![ell], vec![0, 0, ell]];
    Ok(ZetaBlocks {
        dim,
        zeta1: cov_matrix(model, dim, &zeta1)?,
        zeta2: cov_matrix(model, dim, &zeta2)?,
        zeta3: cov_matrix(model, dim, &zeta3)?,
        zeta4: cov_matrix(model, dim, &zeta4)?,
        zeta5: cov_matrix(model, dim, &zeta5)?,
    })
}

// ---------------------------------------------------------------------------
// moment inequalities
// ---------------------------------------------------------------------------

/// K(n, N) = ((2n−1)/(2n−3))·((2n−4+N)/(2n−2+N)).
pub fn moment_ratio_bound(n: usize, dim: usize) -> f64 {
    let n = n as f64;
    let d = dim as f64;
    ((2.0 * n - 1.0) / (2.0 * n - 3.0)) * ((2.0 * n - 4.0 + d) / (2.0 * n - 2.0 + d))
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentCheck {
    pub n: usize,
    /// λ_{2n} λ_{2n−4}
    pub lhs: f64,
    /// K(n,N) λ_{2n−2}²
    pub rhs: f64,
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentReport {
    pub dim: usize,
    pub checks: Vec<MomentCheck>,
}

impl MomentReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Checks λ_{2n}λ_{2n−4} > K(n,N) λ²_{2n−2} for every n = 2..=4 whose
/// moments are available. Equality fails: it is the degenerate
/// sine–cosine case.
pub fn moment_inequality_check(model: &CovarianceModel, dim: usize) -> MomentReport {
    let lam = |k: usize| -> Option<f64> {
        if k == 0 {
            Some(1.0)
        } else {
            model.spectral_moment(k).ok()
        }
    };
    let mut checks = Vec::new();
    for n in 2..=4 {
        let (Some(a), Some(b), Some(c)) = (lam(n), lam(n - 2), lam(n - 1)) else {
            continue;
        };
        let lhs = a * b;
        let rhs = moment_ratio_bound(n, dim) * c * c;
        let margin = lhs - rhs;
        checks.push(MomentCheck { n, lhs, rhs, margin, passed: margin > 1e-12 * lhs });
    }
    MomentReport { dim, checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gauss() -> CovarianceModel {
        CovarianceModel::gaussian(1.0).unwrap()
    }

    struct Flat;
    impl RadialCovariance for Flat {
        fn deriv(&self, m: usize, _x: f64) -> f64 {
            if m == 0 {
                1.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn gaussian_spectral_moments() {
        let g = gauss();
        let expect = [2.0, 12.0, 120.0, 1680.0];
        for n in 1..=4 {
            assert_abs_diff_eq!(g.spectral_moment(n).unwrap(), expect[n - 1], epsilon = 1e-9);
        }
        let g2 = CovarianceModel::gaussian(0.5).unwrap();
        assert_abs_diff_eq!(g2.spectral_moment(2).unwrap(), 3.0, epsilon = 1e-12);
    }

    #[test]
    fn flat_model_is_rejected() {
        let m = CovarianceModel::custom(Arc::new(Flat)).unwrap();
        assert!(matches!(m.spectral_moment(1), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn cauchy_moments_match_finite_differences() {
        let m = CovarianceModel::cauchy(2.5, 1.5).unwrap();
        let h = 1e-5;
        for k in 0..4 {
            let fd = (m.radial_deriv(k, 0.3 + h).unwrap() - m.radial_deriv(k, 0.3 - h).unwrap()) / (2.0 * h);
            let an = m.radial_deriv(k + 1, 0.3).unwrap();
            assert!((fd - an).abs() < 1e-6 * an.abs().max(1.0), "order {k}: {fd} vs {an}");
        }
        let inc = m.radial_deriv_increment(2, 1e-9).unwrap();
        let direct = m.radial_deriv(2, 1e-9).unwrap() - m.radial_deriv(2, 0.0).unwrap();
        assert!((inc - direct).abs() < 1e-12);
    }

    #[test]
    fn derivative_covariance_examples() {
        let g = gauss();
        let c = |i: Vec<u8>, j: Vec<u8>| derivative_covariance(&g, &MultiIndexPair::new(i, j).unwrap()).unwrap();
        assert_abs_diff_eq!(c(vec![2, 0], vec![0, 2]), 12.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c(vec![0], vec![2]), -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c(vec![1], vec![3]), -12.0, epsilon = 1e-12);
        assert_eq!(c(vec![1, 0], vec![0, 1]), 0.0);
        assert!(derivative_covariance(&g, &MultiIndexPair::new(vec![4, 2], vec![2, 2]).unwrap()).is_err());
    }

    #[test]
    fn derivative_covariance_is_swap_consistent() {
        // E[∂^i X ∂^j X] computed either way round agrees
        let g = CovarianceModel::gaussian(0.7).unwrap();
        let idx: Vec<Vec<u8>> =
            vec![vec![0, 0], vec![1, 0], vec![2, 0], vec![1, 1], vec![0, 2], vec![3, 0], vec![1, 2], vec![2, 2]];
        for i in &idx {
            for j in &idx {
                let a = derivative_covariance(&g, &MultiIndexPair::new(i.clone(), j.clone()).unwrap());
                let b = derivative_covariance(&g, &MultiIndexPair::new(j.clone(), i.clone()).unwrap());
                if let (Ok(a), Ok(b)) = (a, b) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn cross_covariance_reduces_to_single_point() {
        let g = CovarianceModel::cauchy(3.0, 2.0).unwrap();
        let zero = [0.0, 0.0, 0.0];
        let cases: Vec<(Vec<usize>, Vec<usize>)> = vec![
            (vec![0, 0], vec![1, 1]),
            (vec![0], vec![0, 0, 0]),
            (vec![], vec![1, 1]),
            (vec![0, 1], vec![0, 1]),
            (vec![2, 2], vec![2, 2]),
            (vec![0], vec![1]),
        ];
        for (l, r) in cases {
            let a = cross_covariance(&g, &l, &r, &zero).unwrap();
            let b = derivative_covariance(&g, &MultiIndexPair::from_coords(3, &l, &r).unwrap()).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn cross_covariance_gradient_at_separation() {
        // Cov(X_1(0), X_1(t)) = −2r′ − 4ρ²r″,  Cov(X_2(0), X_2(t)) = −2r′ with t = ρ e1
        let g = gauss();
        let rho: f64 = 0.37;
        let x = rho * rho;
        let tau = [-rho, 0.0];
        let r1 = g.radial_deriv(1, x).unwrap();
        let r2 = g.radial_deriv(2, x).unwrap();
        assert_abs_diff_eq!(cross_covariance(&g, &[0], &[0], &tau).unwrap(), -2.0 * r1 - 4.0 * x * r2, epsilon = 1e-14);
        assert_abs_diff_eq!(cross_covariance(&g, &[1], &[1], &tau).unwrap(), -2.0 * r1, epsilon = 1e-14);
        assert_eq!(cross_covariance(&g, &[0], &[1], &tau).unwrap(), 0.0);
    }

    #[test]
    fn zeta_blocks_match_closed_forms() {
        let g = gauss();
        let (l2, l4, l6): (f64, f64, f64) = (2.0, 12.0, 120.0);
        for n in 2..=5 {
            let z = zeta_block_covariances(&g, n).unwrap();
            // Hessian diagonal block is the trailing N×N part of M_{(N+2)}
            let hd = Matrix::from_fn(n, n, |i, j| z.zeta3.get(i + 2, j + 2));
            let expect = (n as f64 + 2.0) * 2f64.powi(n as i32 - 1) * (l4 / 3.0).powi(n as i32);
            assert!((hd.determinant() / expect - 1.0).abs() < 1e-12);
            // (X_1, X_122, …, X_1NN)
            let idx: Vec<usize> = std::iter::once(0).chain(2..n + 1).collect();
            let m4 = Matrix::from_fn(n, n, |i, j| z.zeta4.get(idx[i], idx[j]));
            let nf = n as f64;
            let expect =
                (2.0 * l6 / 15.0).powi(n as i32 - 2) * (3.0 * (nf + 1.0) * l2 * l6 - 5.0 * (nf - 1.0) * l4 * l4) / 45.0;
            assert!((m4.determinant() / expect - 1.0).abs() < 1e-12);
            assert_abs_diff_eq!(z.zeta5.get(0, 1), -l4 / 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(z.zeta5.get(1, 1), l6 / 5.0, epsilon = 1e-12);
            assert_eq!(z.zeta1.rows, n - 2);
            assert_abs_diff_eq!(z.zeta2.get(0, 0), l4 / 3.0, epsilon = 1e-12);
            // reference first rows of M and M̃
            assert_abs_diff_eq!(z.zeta3.get(0, 1), l4, epsilon = 1e-12);
            assert_abs_diff_eq!(z.zeta3.get(1, 3), -l6 / 5.0, epsilon = 1e-9);
            assert_abs_diff_eq!(z.zeta4.get(0, 1), -l4, epsilon = 1e-12);
        }
    }

    #[test]
    fn zeta_blocks_are_positive_definite() {
        let g = gauss();
        for n in 2..=5 {
            let z = zeta_block_covariances(&g, n).unwrap();
            for m in [&z.zeta3, &z.zeta4] {
                assert!(m.is_symmetric(0.0));
                crate::linalg::psd_factor(&m.data, m.rows, 1e-10).unwrap();
            }
        }
    }

    #[test]
    fn identity_plus_ones_determinant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let n = rng.random_range(1..=6usize);
            let x: f64 = rng.random_range(0.1..3.0);
            let y: f64 = rng.random_range(-1.0..3.0);
            let m = Matrix::from_fn(n, n, |i, j| if i == j { x + y } else { y });
            let expect = x.powi(n as i32 - 1) * (x + n as f64 * y);
            assert!((m.determinant() - expect).abs() < 1e-10 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn moment_inequalities() {
        let g = gauss();
        let r = moment_inequality_check(&g, 2);
        assert!(r.passed());
        let first = &r.checks[0];
        assert_eq!(first.n, 2);
        assert_abs_diff_eq!(first.margin, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(moment_ratio_bound(2, 2), 1.5, epsilon = 1e-15);
        // N = 1, λ4 = λ2²: sine–cosine degenerate case
        let sc = CovarianceModel::moments(2.0, 4.0, None, None).unwrap();
        assert!(!moment_inequality_check(&sc, 1).passed());
        // λ6 too small
        let bad = CovarianceModel::moments(2.0, 12.0, Some(10.0), None).unwrap();
        let rep = moment_inequality_check(&bad, 3);
        assert!(!rep.passed());
        assert_eq!(rep.checks.len(), 2);
    }

    #[test]
    fn model_spec_strings() {
        let m: CovarianceModel = "gaussian:a=2".parse().unwrap();
        assert_abs_diff_eq!(m.spectral_moment(1).unwrap(), 4.0, epsilon = 1e-12);
        let d: CovarianceModel = "gaussian".parse().unwrap();
        assert_abs_diff_eq!(d.spectral_moment(2).unwrap(), 12.0, epsilon = 1e-12);
        let mo: CovarianceModel = "moments:l2=2,l4=12,l6=120,l8=1680".parse().unwrap();
        assert!(!mo.is_analytic());
        assert_eq!(mo.radial_deriv(1, 0.0), Err(Error::NeedsAnalyticModel));
        assert!("moments:l2=2".parse::<CovarianceModel>().is_err());
        assert!("gaussian:b=1".parse::<CovarianceModel>().is_err());
        assert!("matern:nu=1".parse::<CovarianceModel>().is_err());
        assert!("gaussian:a=-1".parse::<CovarianceModel>().is_err());
    }
}
