//! Gaussian Orthogonal Ensemble: joint eigenvalue density, densities of the
//! ordered eigenvalues through Pfaffians of half-line moment matrices, the
//! determinant-squared constants used by the correlation asymptotics, and
//! sampling.
//!
//! An N-GOE matrix is symmetric with independent centred Gaussian entries,
//! variance 1 on the diagonal and 1/2 off it. Eigenvalues are ordered
//! ascending, L_1 ≤ … ≤ L_N.

use std::cell::RefCell;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigenvalues;
use crate::montecarlo::{batch_means, chunk_rng, par_samples, BatchMeans, DEFAULT_BATCHES};
use crate::pfaffian::{pfaffian, SkewMatrix};
use crate::special::{
    gamma_half_integer, gaussian_cdf, gaussian_partial_moments, gaussian_sf, integrate_1d, integrate_finite, Interval,
    DEFAULT_TOL, SQRT_2PI, TRUNCATION,
};

/// Largest matrix size with ordered-eigenvalue densities (mean counts in
/// dimension N need the (N+1)-GOE, so N ≤ 8 requires 9 here).
pub const MAX_DENSITY_N: usize = 9;

/// Largest matrix size accepted by the sampler.
pub const MAX_SAMPLE_N: usize = 64;

/// Values of a density below zero by more than this are reported as a
/// consistency failure; smaller negatives are clipped to zero.
pub const NEGATIVE_DENSITY_TOL: f64 = 1e-9;

/// Relative accuracy requested from each quadrature-based matrix entry.
const ENTRY_REL_TOL: f64 = 1e-12;

/// k_N = (2π)^{−N/2} Γ(3/2)^N / ∏_{i=1}^{N} Γ(1 + i/2); k_0 = 1.
pub fn normalization_kn(n: usize) -> Result<f64> {
    if n > MAX_DENSITY_N {
        return Err(Error::Unsupported(format!("normalisation constant for N = {n} (max {MAX_DENSITY_N})")));
    }
    let g32 = gamma_half_integer(3);
    let mut k = 1.0;
    for i in 1..=n {
        k *= g32 / (SQRT_2PI * gamma_half_integer(i as u32 + 2));
    }
    Ok(k)
}

/// f_N(μ) = k_N exp(−Σμ²/2) ∏_{i<j} |μ_j − μ_i|.
pub fn joint_eigen_density(mu: &[f64]) -> Result<f64> {
    let kn = normalization_kn(mu.len())?;
    let mut v = kn * (-0.5 * mu.iter().map(|x| x * x).sum::<f64>()).exp();
    for j in 0..mu.len() {
        for i in 0..j {
            v *= (mu[j] - mu[i]).abs();
        }
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// subsets
// ---------------------------------------------------------------------------

/// A k-element subset I of {1, …, n}, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubsetSelector {
    n: usize,
    members: Vec<usize>,
}

impl SubsetSelector {
    pub fn new(n: usize, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("repeated subset element".into()));
        }
        if members.iter().any(|&m| m == 0 || m > n) {
            return Err(Error::InvalidArgument(format!("subset element outside 1..={n}")));
        }
        Ok(SubsetSelector { n, members })
    }

    /// All C(n, k) subsets of size k in lexicographic order.
    pub fn enumerate(n: usize, k: usize) -> Vec<SubsetSelector> {
        let mut out = Vec::new();
        if k > n {
            return out;
        }
        let mut cur: Vec<usize> = (1..=k).collect();
        loop {
            out.push(SubsetSelector { n, members: cur.clone() });
            // advance the rightmost element that still has room
            let mut pos = k;
            while pos > 0 && cur[pos - 1] == n - k + pos {
                pos -= 1;
            }
            if pos == 0 {
                break;
            }
            cur[pos - 1] += 1;
            for t in pos..k {
                cur[t] = cur[t - 1] + 1;
            }
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// Whether the one-based index `i` belongs to I.
    pub fn contains(&self, i: usize) -> bool {
        self.members.binary_search(&i).is_ok()
    }
}

// ---------------------------------------------------------------------------
// skew matrix entries
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Below = 0,
    Above = 1,
}

/// Lazily computed entries a^α_{ij} for all row/side combinations at one ℓ.
///
/// Row i (zero-based) carries g_i(x) = x^i (x−ℓ)^α e^{−x²/2} on its side of ℓ.
/// Entries with both rows on the same side are one outer quadrature over y of
/// g_j(y) times the signed inner integral, itself a combination of partial
/// moments. Entries with rows on opposite sides factor into single integrals.
struct EntryTable {
    n: usize,
    ell: f64,
    coeffs: Vec<Vec<f64>>,
    scale: Vec<f64>,
    singles: RefCell<Vec<Option<f64>>>,
    pairs: RefCell<Vec<Option<f64>>>,
}

impl EntryTable {
    fn new(n: usize, alpha: usize, ell: f64) -> Self {
        // binomial expansion of x^i (x − ℓ)^α
        let coeffs: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut c = vec![0.0; i + alpha + 1];
                let mut binom = 1.0;
                for t in 0..=alpha {
                    c[i + t] = binom * (-ell).powi((alpha - t) as i32);
                    binom = binom * (alpha - t) as f64 / (t + 1) as f64;
                }
                c
            })
            .collect();
        // ∫|g_i| bound from absolute moments 2^{(m+1)/2} Γ((m+1)/2)
        let scale = coeffs
            .iter()
            .map(|c| {
                c.iter()
                    .enumerate()
                    .map(|(m, v)| v.abs() * 2f64.powf((m as f64 + 1.0) / 2.0) * gamma_half_integer(m as u32 + 1))
                    .sum()
            })
            .collect();
        EntryTable {
            n,
            ell,
            coeffs,
            scale,
            singles: RefCell::new(vec![None; 2 * n]),
            pairs: RefCell::new(vec![None; 2 * n * n]),
        }
    }

    fn interval(&self, side: Side) -> Interval {
        match side {
            Side::Below => Interval::below(self.ell),
            Side::Above => Interval::above(self.ell),
        }
    }

    fn poly(&self, i: usize, x: f64) -> f64 {
        self.coeffs[i].iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    fn integral(&self, i: usize, iv: Interval) -> Result<f64> {
        let c = &self.coeffs[i];
        let m = gaussian_partial_moments(c.len() - 1, iv)?;
        Ok(c.iter().zip(&m).map(|(a, b)| a * b).sum())
    }

    /// ∫_{side} g_i.
    fn single(&self, i: usize, side: Side) -> Result<f64> {
        let key = side as usize * self.n + i;
        if let Some(v) = self.singles.borrow()[key] {
            return Ok(v);
        }
        let v = self.integral(i, self.interval(side))?;
        self.singles.borrow_mut()[key] = Some(v);
        Ok(v)
    }

    /// ∫_{side}dx ∫_{side}dy sign(y − x) g_i(x) g_j(y) for i < j.
    fn same_side(&self, i: usize, j: usize, side: Side) -> Result<f64> {
        let key = (side as usize * self.n + i) * self.n + j;
        if let Some(v) = self.pairs.borrow()[key] {
            return Ok(v);
        }
        let dom = self.interval(side);
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let inner = |y: f64| -> f64 {
            let lower = Interval { lo: dom.lo, hi: y };
            let upper = Interval { lo: y, hi: dom.hi };
            match (self.integral(i, lower), self.integral(i, upper)) {
                (Ok(a), Ok(b)) => a - b,
                (Err(e), _) | (_, Err(e)) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        };
        let f = |y: f64| self.poly(j, y) * (-0.5 * y * y).exp() * inner(y);
        let tol = ENTRY_REL_TOL * self.scale[i] * self.scale[j];
        let v = integrate_1d(f, dom, tol)?;
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        self.pairs.borrow_mut()[key] = Some(v);
        Ok(v)
    }

    fn entry(&self, i: usize, si: Side, j: usize, sj: Side) -> Result<f64> {
        match (si, sj) {
            _ if i == j => Ok(0.0),
            (Side::Below, Side::Above) => Ok(self.single(i, si)? * self.single(j, sj)?),
            (Side::Above, Side::Below) => Ok(-self.single(i, si)? * self.single(j, sj)?),
            _ if i < j => self.same_side(i, j, si),
            _ => Ok(-self.same_side(j, i, si)?),
        }
    }

    /// The skew matrix for subset `sel`: row i lives below ℓ iff i ∈ I, with a
    /// border row/column of single integrals when n is odd.
    fn matrix(&self, sel: &SubsetSelector) -> Result<SkewMatrix> {
        let n = self.n;
        let side = |i: usize| if sel.contains(i + 1) { Side::Below } else { Side::Above };
        let dim = n + n % 2;
        let mut upper = Vec::with_capacity(dim * dim.saturating_sub(1) / 2);
        for i in 0..dim {
            for j in i + 1..dim {
                let v = if j == n { self.single(i, side(i))? } else { self.entry(i, side(i), j, side(j))? };
                upper.push(v);
            }
        }
        SkewMatrix::from_upper(dim, &upper)
    }
}

/// The skew matrix 𝒜^α(I, ℓ) for α ∈ {1, 2}.
pub fn build_skew_a(alpha: usize, sel: &SubsetSelector, ell: f64) -> Result<SkewMatrix> {
    if !(alpha == 1 || alpha == 2) {
        return Err(Error::InvalidArgument(format!("alpha must be 1 or 2, got {alpha}")));
    }
    if sel.n() >= MAX_DENSITY_N {
        return Err(Error::Unsupported(format!("skew matrix for n = {}", sel.n())));
    }
    if !ell.is_finite() {
        return Err(Error::InvalidArgument("ℓ must be finite".into()));
    }
    EntryTable::new(sel.n(), alpha, ell).matrix(sel)
}

fn clip_density(v: f64) -> Result<f64> {
    if v < -NEGATIVE_DENSITY_TOL {
        Err(Error::Consistency(format!("density evaluated to {v:e}")))
    } else {
        Ok(v.max(0.0))
    }
}

// ---------------------------------------------------------------------------
// ordered eigenvalue densities
// ---------------------------------------------------------------------------

/// Densities q_N^k of the ordered eigenvalues of an N-GOE matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OrderedEigDensity {
    n: usize,
}

impl OrderedEigDensity {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 || n > MAX_DENSITY_N {
            return Err(Error::Unsupported(format!("ordered densities for N = {n} (supported 1..={MAX_DENSITY_N})")));
        }
        Ok(OrderedEigDensity { n })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.n {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", self.n)));
        }
        Ok(())
    }

    fn raw(&self, k: usize, table: &EntryTable, ell: f64) -> Result<f64> {
        let n = self.n;
        let mut sum = 0.0;
        for sel in SubsetSelector::enumerate(n - 1, k - 1) {
            sum += pfaffian(&table.matrix(&sel)?)?;
        }
        let sign = if (k - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
        let fact: f64 = (1..=n).map(|v| v as f64).product();
        Ok(normalization_kn(n)? * fact * sign * (-0.5 * ell * ell).exp() * sum)
    }

    /// q_N^k(ℓ); zero for |ℓ| ≥ the truncation radius.
    pub fn eval(&self, k: usize, ell: f64) -> Result<f64> {
        self.check_k(k)?;
        if ell.is_nan() {
            return Err(Error::InvalidArgument("ℓ is NaN".into()));
        }
        if ell.abs() >= TRUNCATION {
            return Ok(0.0);
        }
        let table = EntryTable::new(self.n - 1, 1, ell);
        clip_density(self.raw(k, &table, ell)?)
    }

    /// (q_N^1(ℓ), …, q_N^N(ℓ)) sharing one entry table.
    pub fn eval_all(&self, ell: f64) -> Result<Vec<f64>> {
        if ell.abs() >= TRUNCATION {
            return Ok(vec![0.0; self.n]);
        }
        let table = EntryTable::new(self.n - 1, 1, ell);
        (1..=self.n).map(|k| clip_density(self.raw(k, &table, ell)?)).collect()
    }

    /// ∫_iv q_N^k(ℓ) w(ℓ) dℓ.
    pub fn expectation_over<W: Fn(f64) -> f64>(&self, k: usize, iv: Interval, w: W, tol: f64) -> Result<f64> {
        self.check_k(k)?;
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let f = |ell: f64| match self.eval(k, ell) {
            Ok(q) => q * w(ell),
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        };
        let v = integrate_1d(f, iv, tol)?;
        match failure.into_inner() {
            Some(e) => Err(e),
            None => Ok(v),
        }
    }

    /// E[w(L_k)].
    pub fn expectation<W: Fn(f64) -> f64>(&self, k: usize, w: W, tol: f64) -> Result<f64> {
        self.expectation_over(k, Interval::real_line(), w, tol)
    }

    /// Tabulated CDF of L_k on [lo, hi] with nodes every `step`.
    pub fn cdf_table(&self, k: usize, lo: f64, hi: f64, step: f64) -> Result<CdfTable> {
        self.check_k(k)?;
        if !(hi > lo && step > 0.0) {
            return Err(Error::InvalidArgument("cdf table needs lo < hi and step > 0".into()));
        }
        let count = ((hi - lo) / step).ceil() as usize + 1;
        let nodes: Vec<f64> = (0..count).map(|i| (lo + i as f64 * step).min(hi)).collect();
        let dens: Vec<f64> = nodes.iter().map(|&x| self.eval(k, x)).collect::<Result<_>>()?;
        let mut cdf = Vec::with_capacity(count);
        // mass left of lo
        let mut acc = self.expectation_over(k, Interval::below(lo), |_| 1.0, DEFAULT_TOL)?;
        cdf.push(acc);
        for w in nodes.windows(2) {
            let failure: RefCell<Option<Error>> = RefCell::new(None);
            let f = |x: f64| {
                self.eval(k, x).unwrap_or_else(|e| {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                })
            };
            let est = integrate_finite(f, w[0], w[1], 1e-12);
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            acc += est.value;
            cdf.push(acc);
        }
        Ok(CdfTable { nodes, cdf, density: dens })
    }
}

/// Piecewise cubic Hermite CDF built from values and densities at nodes.
#[derive(Debug, Clone)]
pub struct CdfTable {
    nodes: Vec<f64>,
    cdf: Vec<f64>,
    density: Vec<f64>,
}

impl CdfTable {
    pub fn total_mass(&self) -> f64 {
        *self.cdf.last().unwrap()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if x <= self.nodes[0] {
            return self.cdf[0];
        }
        if x >= self.nodes[n - 1] {
            return self.cdf[n - 1];
        }
        let i = self.nodes.partition_point(|&t| t <= x) - 1;
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.cdf[i] + h10 * h * self.density[i] + h01 * self.cdf[i + 1] + h11 * h * self.density[i + 1]
    }
}

/// q_N^k(ℓ) via the Pfaffian construction.
pub fn ordered_eigen_density(n: usize, k: usize, ell: f64) -> Result<f64> {
    OrderedEigDensity::new(n)?.eval(k, ell)
}

/// E[exp(−L_k²/2)] for the N-GOE.
pub fn exp_moment_ordered(n: usize, k: usize) -> Result<f64> {
    OrderedEigDensity::new(n)?.expectation(k, |l| (-0.5 * l * l).exp(), DEFAULT_TOL)
}

// ---------------------------------------------------------------------------
// closed forms for N ≤ 5
// ---------------------------------------------------------------------------

fn q22(l: f64) -> f64 {
    let e = (-0.5 * l * l).exp();
    e / (2.0 * std::f64::consts::PI.sqrt()) * (e + SQRT_2PI * l * gaussian_cdf(l))
}

fn q33(l: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let e = (-0.5 * l * l).exp();
    e / (pi * 2f64.sqrt())
        * (pi.sqrt() * (2.0 * l * l - 1.0) * gaussian_cdf(l * 2f64.sqrt())
            + SQRT_2PI * e * gaussian_cdf(l)
            + l * (-l * l).exp())
}

fn q4_common(l: f64) -> (f64, f64, f64) {
    let pi = std::f64::consts::PI;
    let e = (-0.5 * l * l).exp();
    let shared = 1.5 * l * (-1.5 * l * l).exp()
        + 3.0 * pi.sqrt() * (1.0 + 2.0 * l * l) / 2.0 * gaussian_cdf(l * 2f64.sqrt()) * e;
    let a = SQRT_2PI * (1.0 - 0.5 * l * l) * (-l * l).exp();
    let b = pi * (2.0 * l.powi(3) - 3.0 * l) / 2f64.sqrt() * gaussian_cdf(l * 2f64.sqrt());
    (shared, a, b)
}

fn q43(l: f64) -> f64 {
    let (shared, a, b) = q4_common(l);
    let e = (-0.5 * l * l).exp();
    e / (2.0 * std::f64::consts::PI) * (shared + a * gaussian_sf(l) - b * gaussian_sf(l))
}

fn q44(l: f64) -> f64 {
    let (shared, a, b) = q4_common(l);
    let e = (-0.5 * l * l).exp();
    e / (2.0 * std::f64::consts::PI) * (shared - a * gaussian_cdf(l) + b * gaussian_cdf(l))
}

fn q5_prefactor(l: f64) -> f64 {
    2f64.sqrt() * (-0.5 * l * l).exp() / (3.0 * std::f64::consts::PI.powf(1.5))
}

fn q54(l: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let l2 = l * l;
    q5_prefactor(l)
        * (SQRT_2PI * (-1.5 * l2).exp() * (l.powi(3) / 2.0 + 1.25 * l)
            + 2f64.sqrt() * pi * gaussian_cdf(l * 2f64.sqrt()) * (-0.5 * l2).exp() * (l2 * l2 + 3.0 * l2 + 0.75))
}

fn q55(l: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let l2 = l * l;
    let p2 = gaussian_cdf(l * 2f64.sqrt());
    let p1 = gaussian_cdf(l);
    q5_prefactor(l)
        * ((2.0 * l2 * l2 - 6.0 * l2 + 1.5) * pi * p2 * p2
            + (l2 * l2 + 3.0 * l2 + 0.75) * 2f64.sqrt() * pi * p2 * p1 * (-0.5 * l2).exp()
            + SQRT_2PI * (l.powi(3) / 2.0 + 1.25 * l) * p1 * (-1.5 * l2).exp()
            + (3.0 * l.powi(3) - 6.5 * l) * pi.sqrt() * p2 * (-l2).exp()
            + (l2 - 2.0) * (-2.0 * l2).exp())
}

fn q53(l: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let l2 = l * l;
    let rest = pi * (4.0 * l2 * l2 - 12.0 * l2 + 3.0) * gaussian_cdf(l * 2f64.sqrt())
        + pi.sqrt() * (3.0 * l.powi(3) - 6.5 * l) * (-l2).exp()
        + 2f64.sqrt() * pi * (l2 * l2 + 3.0 * l2 + 0.75) * (-0.5 * l2).exp() * gaussian_cdf(l);
    q54(l) - 2.0 * q55(l) + q5_prefactor(l) * rest
}

/// Explicit q_N^k for 2 ≤ N ≤ 5, with the missing indices obtained by the
/// reflection q_N^k(ℓ) = q_N^{N+1−k}(−ℓ).
pub fn closed_form_density(n: usize, k: usize, ell: f64) -> Result<f64> {
    let v = match (n, k) {
        (2, 2) => q22(ell),
        (2, 1) => q22(-ell),
        (3, 1) => q33(-ell),
        (3, 2) => (-ell * ell).exp() / std::f64::consts::PI.sqrt(),
        (3, 3) => q33(ell),
        (4, 1) => q44(-ell),
        (4, 2) => q43(-ell),
        (4, 3) => q43(ell),
        (4, 4) => q44(ell),
        (5, 1) => q55(-ell),
        (5, 2) => q54(-ell),
        (5, 3) => q53(ell),
        (5, 4) => q54(ell),
        (5, 5) => q55(ell),
        _ => return Err(Error::Unsupported(format!("no closed form for N = {n}, k = {k}"))),
    };
    Ok(v)
}

// ---------------------------------------------------------------------------
// determinant-squared constants
// ---------------------------------------------------------------------------

fn check_gamma_n(n: usize) -> Result<()> {
    if n >= MAX_DENSITY_N {
        return Err(Error::Unsupported(format!("γ-constants for n = {n} (max {})", MAX_DENSITY_N - 1)));
    }
    Ok(())
}

/// (γ^0_{n,2}(x), …, γ^n_{n,2}(x)) where γ^k_{n,2}(x) = E[det²(G_n − x Id) 1{index = k}].
pub fn gamma2_all(n: usize, x: f64) -> Result<Vec<f64>> {
    check_gamma_n(n)?;
    if n == 0 {
        return Ok(vec![1.0]);
    }
    let table = EntryTable::new(n, 2, x);
    let fact: f64 = (1..=n).map(|v| v as f64).product();
    let c = normalization_kn(n)? * fact;
    (0..=n)
        .map(|k| {
            let mut s = 0.0;
            for sel in SubsetSelector::enumerate(n, k) {
                s += pfaffian(&table.matrix(&sel)?)?;
            }
            Ok(c * s)
        })
        .collect()
}

/// γ^k_{n,2}(x).
pub fn gamma2_indexed(n: usize, k: usize, x: f64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidArgument(format!("index {k} exceeds n = {n}")));
    }
    Ok(gamma2_all(n, x)?[k])
}

/// Density of 𝒩(0, 1/3).
fn lambda_density(x: f64) -> f64 {
    (3.0f64).sqrt() / SQRT_2PI * (-1.5 * x * x).exp()
}

fn integrate_gamma<F: Fn(&[f64]) -> f64>(n: usize, pick: F) -> Result<f64> {
    check_gamma_n(n)?;
    if n == 0 {
        return Ok(pick(&[1.0]));
    }
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let f = |x: f64| match gamma2_all(n, x) {
        Ok(v) => pick(&v) * lambda_density(x),
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            0.0
        }
    };
    let v = integrate_1d(f, Interval::real_line(), DEFAULT_TOL)?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(v),
    }
}

/// γ_n = E[det²(G_n − Λ Id)], Λ ~ 𝒩(0, 1/3) independent of G_n.
pub fn gamma_const(n: usize) -> Result<f64> {
    integrate_gamma(n, |v| v.iter().sum())
}

/// γ^k_n = E[det²(G_n − Λ Id) 1{index(G_n − Λ Id) = k}].
pub fn gamma_const_indexed(n: usize, k: usize) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidArgument(format!("index {k} exceeds n = {n}")));
    }
    integrate_gamma(n, |v| v[k])
}

/// Monte Carlo estimate of γ_n (or γ^k_n with `index`) from GOE draws.
pub fn gamma_const_mc(n: usize, index: Option<usize>, samples: usize, seed: u64) -> Result<BatchMeans> {
    check_gamma_n(n)?;
    if let Some(k) = index.filter(|&k| k > n) {
        return Err(Error::InvalidArgument(format!("index {k} exceeds n = {n}")));
    }
    let lam_sd = (1.0f64 / 3.0).sqrt();
    let vals = par_samples(samples, seed, |rng| {
        let lam = lam_sd * rng.sample::<f64, _>(StandardNormal);
        if n == 0 {
            return 1.0;
        }
        let mut a = sample_goe_matrix(n, rng);
        let ev = jacobi_eigenvalues(&mut a, n);
        let below = ev.iter().filter(|&&e| e < lam).count();
        if index.is_some_and(|k| k != below) {
            0.0
        } else {
            ev.iter().map(|e| (e - lam) * (e - lam)).product()
        }
    });
    batch_means(&vals, DEFAULT_BATCHES)
}

// ---------------------------------------------------------------------------
// sampling
// ---------------------------------------------------------------------------

/// Row-major N-GOE matrix.
pub fn sample_goe_matrix<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let mut a = vec![0.0; n * n];
    let off = std::f64::consts::FRAC_1_SQRT_2;
    for i in 0..n {
        a[i * n + i] = rng.sample::<f64, _>(StandardNormal);
        for j in i + 1..n {
            let v = off * rng.sample::<f64, _>(StandardNormal);
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    a
}

/// Ascending eigenvalues of one N-GOE draw.
pub fn sample_goe_spectrum<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 || n > MAX_SAMPLE_N {
        return Err(Error::Unsupported(format!("GOE sampling for N = {n} (supported 1..={MAX_SAMPLE_N})")));
    }
    let mut a = sample_goe_matrix(n, rng);
    Ok(jacobi_eigenvalues(&mut a, n))
}

/// One seeded draw.
pub fn sample_goe_spectrum_seeded(n: usize, seed: u64) -> Result<Vec<f64>> {
    sample_goe_spectrum(n, &mut chunk_rng(seed, 0))
}

/// `count` independent spectra, in parallel and deterministic in `seed`.
pub fn sample_goe_spectra(n: usize, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if n == 0 || n > MAX_SAMPLE_N {
        return Err(Error::Unsupported(format!("GOE sampling for N = {n} (supported 1..={MAX_SAMPLE_N})")));
    }
    Ok(par_samples(count, seed, |rng| {
        let mut a = sample_goe_matrix(n, rng);
        jacobi_eigenvalues(&mut a, n)
    }))
}

/// `count` draws of L_k.
pub fn sample_ordered_eigenvalues(n: usize, k: usize, count: usize, seed: u64) -> Result<Vec<f64>> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("k = {k} outside 1..={n}")));
    }
    Ok(sample_goe_spectra(n, count, seed)?.into_iter().map(|s| s[k - 1]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn kn_values() {
        assert_abs_diff_eq!(normalization_kn(1).unwrap(), 1.0 / SQRT_2PI, epsilon = 1e-15);
        assert_abs_diff_eq!(normalization_kn(2).unwrap(), 1.0 / (4.0 * PI.sqrt()), epsilon = 1e-15);
        assert_eq!(normalization_kn(0).unwrap(), 1.0);
        assert!(normalization_kn(10).is_err());
    }

    #[test]
    fn joint_density_normalises_for_two() {
        // ∫∫ f_2 over ℝ² as nested one-dimensional integrals
        let outer = |x: f64| {
            let f = |y: f64| joint_eigen_density(&[x, y]).unwrap();
            integrate_1d(f, Interval::below(x), 1e-13).unwrap() + integrate_1d(f, Interval::above(x), 1e-13).unwrap()
        };
        let total = integrate_1d(outer, Interval::real_line(), 1e-10).unwrap();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        assert_eq!(joint_eigen_density(&[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(joint_eigen_density(&[0.0]).unwrap(), 1.0 / SQRT_2PI, epsilon = 1e-15);
    }

    #[test]
    fn subsets_are_lexicographic_and_complete() {
        let s = SubsetSelector::enumerate(5, 3);
        assert_eq!(s.len(), 10);
        assert_eq!(s[0].members(), &[1, 2, 3]);
        assert_eq!(s[1].members(), &[1, 2, 4]);
        assert_eq!(s[9].members(), &[3, 4, 5]);
        assert!(s.windows(2).all(|w| w[0].members() < w[1].members()));
        assert_eq!(SubsetSelector::enumerate(4, 0).len(), 1);
        assert_eq!(SubsetSelector::enumerate(0, 0).len(), 1);
        assert!(SubsetSelector::enumerate(2, 3).is_empty());
        assert!(SubsetSelector::new(3, vec![4]).is_err());
        assert!(SubsetSelector::new(3, vec![1, 1]).is_err());
    }

    #[test]
    fn border_entry_closed_form() {
        for &l in &[-1.3, 0.0, 0.7, 2.5] {
            let sel = SubsetSelector::new(1, vec![]).unwrap();
            let a = build_skew_a(1, &sel, l).unwrap();
            let expect = (-0.5 * l * l).exp() - l * SQRT_2PI * gaussian_sf(l);
            assert_abs_diff_eq!(a.get(0, 1), expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn same_side_entry_matches_nested_quadrature() {
        // brute-force double integral of sign(y−x) g_1(x) g_2(y) over (ℓ,∞)²
        let l = 0.4;
        let sel = SubsetSelector::new(2, vec![]).unwrap();
        let a = build_skew_a(1, &sel, l).unwrap();
        let g = |p: i32, x: f64| x.powi(p) * (x - l) * (-0.5 * x * x).exp();
        let brute = integrate_1d(
            |y| {
                let below = integrate_finite(|x| g(0, x), l, y, 1e-13).value;
                let above = integrate_finite(|x| g(0, x), y, TRUNCATION, 1e-13).value;
                g(1, y) * (below - above)
            },
            Interval::above(l),
            1e-12,
        )
        .unwrap();
        assert_abs_diff_eq!(a.get(0, 1), brute, epsilon = 1e-10);
    }

    #[test]
    fn entries_tend_to_unconstrained_limit() {
        // with every row below a remote ℓ the domains cover the line, so
        // a_ij = B_{i+1,j+1} − ℓ(B_{i+1,j} + B_{i,j+1}) + ℓ² B_{ij} with
        // B_pq = ∫∫ sign(y−x) x^p y^q e^{−(x²+y²)/2}
        let b = |p: usize, q: usize| {
            integrate_1d(
                |y| {
                    let lo = crate::special::gaussian_partial_moment(p, Interval::below(y)).unwrap();
                    let hi = crate::special::gaussian_partial_moment(p, Interval::above(y)).unwrap();
                    y.powi(q as i32) * (-0.5 * y * y).exp() * (lo - hi)
                },
                Interval::real_line(),
                1e-12,
            )
            .unwrap()
        };
        let l = 11.0;
        let sel = SubsetSelector::new(3, vec![1, 2, 3]).unwrap();
        let a = build_skew_a(1, &sel, l).unwrap();
        for i in 0..3 {
            for j in i + 1..3 {
                let expect = b(i + 1, j + 1) - l * (b(i + 1, j) + b(i, j + 1)) + l * l * b(i, j);
                assert!((a.get(i, j) - expect).abs() < 1e-8 * (1.0 + expect.abs()), "({i},{j})");
            }
        }
    }

    #[test]
    fn reference_point_values() {
        assert_abs_diff_eq!(ordered_eigen_density(3, 2, 0.0).unwrap(), 1.0 / PI.sqrt(), epsilon = 1e-10);
        assert_abs_diff_eq!(ordered_eigen_density(2, 2, 0.0).unwrap(), 1.0 / (2.0 * PI.sqrt()), epsilon = 1e-10);
        let q330 = (SQRT_2PI - PI.sqrt()) / (2.0 * PI * 2f64.sqrt());
        assert_abs_diff_eq!(ordered_eigen_density(3, 3, 0.0).unwrap(), q330, epsilon = 1e-10);
        assert_abs_diff_eq!(closed_form_density(3, 2, 1.0).unwrap(), (-1.0f64).exp() / PI.sqrt(), epsilon = 1e-15);
    }

    #[test]
    fn one_goe_is_standard_normal() {
        for &l in &[-2.0, 0.0, 1.5] {
            assert_abs_diff_eq!(
                ordered_eigen_density(1, 1, l).unwrap(),
                (-0.5 * l * l).exp() / SQRT_2PI,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn pfaffian_path_matches_closed_forms() {
        for n in 2..=5 {
            let d = OrderedEigDensity::new(n).unwrap();
            for i in -12..=12 {
                let l = i as f64 * 0.5;
                let all = d.eval_all(l).unwrap();
                for k in 1..=n {
                    let cf = closed_form_density(n, k, l).unwrap();
                    assert!((all[k - 1] - cf).abs() < 1e-6, "N={n} k={k} ℓ={l}: {} vs {cf}", all[k - 1]);
                }
            }
        }
    }

    #[test]
    fn reflection_symmetry() {
        for n in 2..=6 {
            let d = OrderedEigDensity::new(n).unwrap();
            for &l in &[-2.3, -0.4, 0.9, 3.1] {
                let a = d.eval_all(l).unwrap();
                let b = d.eval_all(-l).unwrap();
                for k in 0..n {
                    assert!((a[k] - b[n - 1 - k]).abs() < 1e-9, "N={n} k={} ℓ={l}", k + 1);
                }
            }
        }
    }

    #[test]
    fn densities_normalise() {
        for n in 2..=4 {
            let d = OrderedEigDensity::new(n).unwrap();
            for k in 1..=n {
                let m = d.expectation(k, |_| 1.0, 1e-10).unwrap();
                assert_abs_diff_eq!(m, 1.0, epsilon = 1e-7);
            }
        }
    }

    #[test]
    fn exp_moment_of_middle_eigenvalue() {
        assert_abs_diff_eq!(exp_moment_ordered(3, 2).unwrap(), (2.0f64 / 3.0).sqrt(), epsilon = 1e-9);
        for k in 1..=4 {
            let v = exp_moment_ordered(4, k).unwrap();
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn gamma_small_cases() {
        assert_eq!(gamma2_all(0, 0.3).unwrap(), vec![1.0]);
        let g1 = gamma2_all(1, 0.0).unwrap();
        assert_abs_diff_eq!(g1[0] + g1[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g1[0], 0.5, epsilon = 1e-12);
        assert_eq!(gamma_const(0).unwrap(), 1.0);
        assert_abs_diff_eq!(gamma_const(1).unwrap(), 4.0 / 3.0, epsilon = 1e-8);
        assert!(gamma2_indexed(2, 3, 0.0).is_err());
        let mc = gamma_const_mc(1, None, 200_000, 4).unwrap();
        assert!((mc.mean - 4.0 / 3.0).abs() < 4.0 * mc.std_error);
        let mc = gamma_const_mc(2, Some(1), 200_000, 4).unwrap();
        assert!((mc.mean - gamma_const_indexed(2, 1).unwrap()).abs() < 4.0 * mc.std_error);
    }

    #[test]
    fn gamma_two_matches_sampling() {
        let x = 0.35;
        let g = gamma2_all(2, x).unwrap();
        let spectra = sample_goe_spectra(2, 400_000, 17).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            let vals: Vec<f64> = spectra
                .iter()
                .map(|s| {
                    let idx = s.iter().filter(|&&e| e < x).count();
                    if idx == k {
                        s.iter().map(|e| (e - x) * (e - x)).product()
                    } else {
                        0.0
                    }
                })
                .collect();
            let bm = batch_means(&vals, 100).unwrap();
            assert!((bm.mean - gk).abs() < 4.0 * bm.std_error, "k={k}: mc {} ± {} vs {}", bm.mean, bm.std_error, gk);
        }
    }

    #[test]
    fn spectra_preserve_trace() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for n in [1, 2, 5, 9] {
            let a = sample_goe_matrix(n, &mut rng);
            let trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
            let mut b = a.clone();
            let ev = jacobi_eigenvalues(&mut b, n);
            assert!((ev.iter().sum::<f64>() - trace).abs() < 1e-10);
            assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        }
        assert!(sample_goe_spectrum_seeded(65, 0).is_err());
    }

    #[test]
    fn largest_of_two_has_closed_form_mean() {
        let mean = OrderedEigDensity::new(2).unwrap().expectation(2, |l| l, 1e-10).unwrap();
        let draws = sample_ordered_eigenvalues(2, 2, 200_000, 3).unwrap();
        let bm = batch_means(&draws, 100).unwrap();
        assert!((bm.mean - mean).abs() < 3.0 * bm.std_error);
    }

    #[test]
    fn cdf_table_is_monotone_and_complete() {
        let d = OrderedEigDensity::new(3).unwrap();
        let t = d.cdf_table(2, -6.0, 6.0, 0.02).unwrap();
        assert_abs_diff_eq!(t.total_mass(), 1.0, epsilon = 1e-9);
        // L_2 of a 3-GOE is 𝒩(0, 1/2)
        for &x in &[-1.0, -0.23, 0.0, 0.51] {
            assert_abs_diff_eq!(t.cdf(x), gaussian_cdf(x * 2f64.sqrt()), epsilon = 1e-9);
        }
    }
}
