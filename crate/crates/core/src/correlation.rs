//! Two-point structure of the critical points: the law of the two Hessians
//! given vanishing gradients at 0 and t = ρ e₁, the correlation function
//! A(ρ) and its index-resolved versions by Monte Carlo, and the small-ρ
//! asymptotic laws.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::goe::{gamma_const, gamma_const_indexed};
use crate::linalg::{determinant, jacobi_eigenvalues, mat_vec, psd_factor, Matrix};
use crate::montecarlo::{batch_means, par_samples, DEFAULT_BATCHES};
use crate::special::{integrate_1d, integrate_finite, Interval, SQRT_2PI};

/// Conditioning denominators below this fraction of r′(0)² are rejected.
pub const MIN_CONDITIONING: f64 = 1e-14;

/// Pivot clipping of the covariance factorisations.
pub const PSD_CLIP: f64 = 1e-10;

/// Hessian eigenvalues below this fraction of ‖ξ‖ make the index undefined.
pub const MORSE_THRESHOLD: f64 = 1e-10;

/// Minimum Monte Carlo budget.
pub const MIN_SAMPLES: usize = 10_000;

/// Largest dimension for the two-point computations.
pub const MAX_CORR_DIM: usize = 8;

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_CORR_DIM {
        return Err(Error::Unsupported(format!("correlations in dimension {dim} (supported 1..={MAX_CORR_DIM})")));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if rho == 0.0 {
        return Err(Error::Singular("gradients at coincident points are perfectly correlated".into()));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation ρ = {rho} must be positive")));
    }
    Ok(())
}

/// Radial derivatives at 0 and at ρ², with the increments that enter the
/// conditioning denominators.
struct Radial {
    rho2: f64,
    d0: [f64; 3],
    d: [f64; 5],
    /// r′(ρ²) − r′(0)
    inc1: f64,
}

impl Radial {
    fn new(model: &CovarianceModel, rho: f64) -> Result<Self> {
        let rho2 = rho * rho;
        let mut d = [0.0; 5];
        for (m, v) in d.iter_mut().enumerate() {
            *v = model.radial_deriv(m, rho2)?;
        }
        Ok(Radial {
            rho2,
            d0: [model.radial_deriv(0, 0.0)?, model.radial_deriv(1, 0.0)?, model.radial_deriv(2, 0.0)?],
            d,
            inc1: model.radial_deriv_increment(1, rho2)?,
        })
    }

    /// r′(0)² − (r′ + 2r″ρ²)², as −Δ(2r′(0) + Δ) with Δ = r′ − r′(0) + 2r″ρ².
    fn den_first(&self) -> f64 {
        let delta = self.inc1 + 2.0 * self.d[2] * self.rho2;
        -delta * (2.0 * self.d0[1] + delta)
    }

    /// r′(0)² − r′², as −δ(2r′(0) + δ) with δ = r′ − r′(0).
    fn den_other(&self) -> f64 {
        -self.inc1 * (2.0 * self.d0[1] + self.inc1)
    }
}

/// det Var(∇X(0), ∇X(t)) as a product of per-coordinate 2×2 determinants.
pub fn gradient_pair_determinant(model: &CovarianceModel, dim: usize, rho: f64) -> Result<f64> {
    check_dim(dim)?;
    check_rho(rho)?;
    let r = Radial::new(model, rho)?;
    Ok(4.0 * r.den_first() * (4.0 * r.den_other()).powi(dim as i32 - 1))
}

/// p_{∇X(0),∇X(t)}(0, 0) = (2π)^{−N} det(Σ_grad)^{−1/2}.
pub fn gradient_pair_density(model: &CovarianceModel, dim: usize, rho: f64) -> Result<f64> {
    let det = gradient_pair_determinant(model, dim, rho)?;
    if !(det > 0.0) {
        return Err(Error::Singular(format!("gradient covariance determinant {det:e} at ρ = {rho}")));
    }
    Ok((2.0 * std::f64::consts::PI).powi(-(dim as i32)) / det.sqrt())
}

/// Joint Gaussian law of (ξ(0), ξ(t)), the Hessians at 0 and t = ρe₁ given
/// ∇X(0) = ∇X(t) = 0.
///
/// Diagonal entries ξ_d = (ξ₁₁, …, ξ_NN) and off-diagonal entries
/// ξ_u = (ξ₁₂, ξ₁₃, …, ξ_{N−1,N}) (lexicographic) are independent:
/// Var(ξ_d(0), ξ_d(t)) = [[Γ1, Γ3], [Γ3, Γ1]] and each off-diagonal entry m
/// pairs as [[Γ2_m, Γ4_m], [Γ4_m, Γ2_m]].
#[derive(Debug, Clone, Serialize)]
pub struct ConditionalHessianModel {
    pub dim: usize,
    pub rho: f64,
    pub gamma1: Matrix,
    pub gamma2: Vec<f64>,
    pub gamma3: Matrix,
    pub gamma4: Vec<f64>,
    /// Var(∇X(0), ∇X(t)) ordered (X₁(0), …, X_N(0), X₁(t), …, X_N(t)).
    pub grad_cov: Matrix,
    #[serde(skip)]
    diag_factor: Vec<f64>,
    #[serde(skip)]
    pair_factors: Vec<[f64; 4]>,
}

/// Builds the conditional law from the explicit block formulas.
pub fn conditional_cov(model: &CovarianceModel, dim: usize, rho: f64) -> Result<ConditionalHessianModel> {
    check_dim(dim)?;
    check_rho(rho)?;
    let r = Radial::new(model, rho)?;
    let rho2 = r.rho2;
    let (r1_0, r2_0) = (r.d0[1], r.d0[2]);
    let (r1, r2, r3, r4) = (r.d[1], r.d[2], r.d[3], r.d[4]);
    let den = r.den_first();
    let den2 = r.den_other();
    let floor = MIN_CONDITIONING * r1_0 * r1_0;
    if !(den > floor && den2 > floor) {
        return Err(Error::Singular(format!(
            "conditioning denominators {den:e}, {den2:e} at ρ = {rho} are not positive"
        )));
    }

    let b = 12.0 * r2 + 8.0 * rho2 * r3;
    let m = |i: usize, j: usize| match (i, j) {
        (0, 0) => b * b,
        (0, _) | (_, 0) => 4.0 * r2 * b,
        _ => 16.0 * r2 * r2,
    };
    let c1 = rho2 * r1_0 / (2.0 * den);
    let c3 = rho2 * (r1 + 2.0 * r2 * rho2) / (2.0 * den);
    let a = 4.0 * r2 + 8.0 * rho2 * r3;
    let d = 12.0 * r2 + 48.0 * rho2 * r3 + 16.0 * rho2 * rho2 * r4;

    let gamma1 = Matrix::from_fn(dim, dim, |i, j| {
        let base = if i == j { 12.0 * r2_0 } else { 4.0 * r2_0 };
        base + c1 * m(i, j)
    });
    let gamma3 = Matrix::from_fn(dim, dim, |i, j| {
        let base = match (i, j) {
            (0, 0) => d,
            (0, _) | (_, 0) => a,
            _ if i == j => 12.0 * r2,
            _ => 4.0 * r2,
        };
        base + c3 * m(i, j)
    });
    let offdiag = dim * (dim - 1) / 2;
    let d1 = 4.0 * r2_0 + 8.0 * rho2 * r2 * r2 * r1_0 / den2;
    let dt1 = a + 8.0 * rho2 * r2 * r2 * r1 / den2;
    let gamma2: Vec<f64> = (0..offdiag).map(|k| if k < dim - 1 { d1 } else { 4.0 * r2_0 }).collect();
    let gamma4: Vec<f64> = (0..offdiag).map(|k| if k < dim - 1 { dt1 } else { 4.0 * r2 }).collect();

    let cross_first = -2.0 * r1 - 4.0 * rho2 * r2;
    let grad_cov = Matrix::from_fn(2 * dim, 2 * dim, |p, q| {
        let (ci, cj) = (p % dim, q % dim);
        if ci != cj {
            0.0
        } else if p == q {
            -2.0 * r1_0
        } else if ci == 0 {
            cross_first
        } else {
            -2.0 * r1
        }
    });

    let joint = Matrix::from_fn(2 * dim, 2 * dim, |p, q| {
        let blk = if (p < dim) == (q < dim) { &gamma1 } else { &gamma3 };
        blk.get(p % dim, q % dim)
    });
    let diag_factor = psd_factor(&joint.data, 2 * dim, PSD_CLIP)?;
    let pair_factors = gamma2
        .iter()
        .zip(&gamma4)
        .map(|(&v, &c)| {
            let l = psd_factor(&[v, c, c, v], 2, PSD_CLIP)?;
            Ok([l[0], l[1], l[2], l[3]])
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ConditionalHessianModel { dim, rho, gamma1, gamma2, gamma3, gamma4, grad_cov, diag_factor, pair_factors })
}

impl ConditionalHessianModel {
    /// Full covariance of (ξ_d(0), ξ_u(0), ξ_d(t), ξ_u(t)).
    pub fn joint_covariance(&self) -> Matrix {
        let n = self.dim;
        let u = self.gamma2.len();
        let half = n + u;
        Matrix::from_fn(2 * half, 2 * half, |p, q| {
            let (bp, ip) = (p / half, p % half);
            let (bq, iq) = (q / half, q % half);
            match (ip < n, iq < n) {
                (true, true) => {
                    if bp == bq {
                        self.gamma1.get(ip, iq)
                    } else {
                        self.gamma3.get(ip, iq)
                    }
                }
                (false, false) if ip == iq => {
                    if bp == bq {
                        self.gamma2[ip - n]
                    } else {
                        self.gamma4[ip - n]
                    }
                }
                _ => 0.0,
            }
        })
    }

    /// Draws (ξ(0), ξ(t)) as two row-major N×N symmetric matrices.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let n = self.dim;
        let z: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
        let mut diag = vec![0.0; 2 * n];
        mat_vec(&self.diag_factor, &z, 2 * n, &mut diag);
        let mut h0 = vec![0.0; n * n];
        let mut ht = vec![0.0; n * n];
        for i in 0..n {
            h0[i * n + i] = diag[i];
            ht[i * n + i] = diag[n + i];
        }
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let l = self.pair_factors[k];
                let z0: f64 = rng.sample(StandardNormal);
                let z1: f64 = rng.sample(StandardNormal);
                let (x0, x1) = (l[0] * z0 + l[1] * z1, l[2] * z0 + l[3] * z1);
                h0[i * n + j] = x0;
                h0[j * n + i] = x0;
                ht[i * n + j] = x1;
                ht[j * n + i] = x1;
                k += 1;
            }
        }
        (h0, ht)
    }
}

// ---------------------------------------------------------------------------
// small-ρ equivalents
// ---------------------------------------------------------------------------

/// Leading small-ρ behaviour c·ρ^p of one conditional covariance quantity.
#[derive(Debug, Clone, Serialize)]
pub struct LimitCoefficient {
    pub name: &'static str,
    pub power: i32,
    pub coefficient: f64,
}

/// The table of leading coefficients for dimension `dim`. Entries needing λ6
/// or λ8 are omitted when those moments are unavailable; entries involving
/// coordinates 2 and 3 need N ≥ 2 and N ≥ 3 respectively.
pub fn small_rho_limits(model: &CovarianceModel, dim: usize) -> Result<Vec<LimitCoefficient>> {
    check_dim(dim)?;
    let l2 = model.spectral_moment(1)?;
    let l4 = model.spectral_moment(2)?;
    let l6 = model.spectral_moment(3).ok();
    let l8 = model.spectral_moment(4).ok();
    let nf = dim as f64;
    let mut out = vec![LimitCoefficient {
        name: "det_grad",
        power: 2 * dim as i32,
        coefficient: (l2 * l4).powi(dim as i32) / 3f64.powf(nf - 1.0),
    }];
    let mut push = |name, power, coefficient| out.push(LimitCoefficient { name, power, coefficient });
    if let Some(l6) = l6 {
        let g = l2 * l6 - l4 * l4;
        push("var_xi11", 2, g / (4.0 * l2));
        push("cross_xi11", 2, -g / (4.0 * l2));
        if let Some(l8) = l8 {
            push("det_xi11_pair", 6, (l4 * l8 - l6 * l6) * g / (144.0 * l2 * l4));
        }
        if dim >= 2 {
            let h = (9.0 * l2 * l6 - 5.0 * l4 * l4) / (180.0 * l2);
            push("var_xi1j", 2, h);
            push("cross_xi1j", 2, -h);
            push("cov_xi11_xijj", 2, (11.0 * l2 * l6 - 15.0 * l4 * l4) / (180.0 * l2));
            push("cross_xi11_xijj", 2, (15.0 * l4 * l4 - 7.0 * l2 * l6) / (180.0 * l2));
        }
    }
    if dim >= 2 {
        push("var_xijj", 0, 8.0 * l4 / 9.0);
        push("cross_xijj", 0, 8.0 * l4 / 9.0);
    }
    if dim >= 3 {
        push("var_xijk", 0, l4 / 3.0);
        push("cross_xijk", 0, l4 / 3.0);
        push("cov_xijj_xikk", 0, 2.0 * l4 / 9.0);
        push("cross_xijj_xikk", 0, 2.0 * l4 / 9.0);
    }
    Ok(out)
}

impl ConditionalHessianModel {
    /// The quantity named in [`small_rho_limits`], unscaled.
    pub fn named_entry(&self, name: &str) -> Option<f64> {
        let n = self.dim;
        let v = match name {
            "det_grad" => self.grad_cov.determinant(),
            "var_xi11" => self.gamma1.get(0, 0),
            "cross_xi11" => self.gamma3.get(0, 0),
            "det_xi11_pair" => {
                let (v, c) = (self.gamma1.get(0, 0), self.gamma3.get(0, 0));
                (v - c) * (v + c)
            }
            "var_xi1j" if n >= 2 => self.gamma2[0],
            "cross_xi1j" if n >= 2 => self.gamma4[0],
            "cov_xi11_xijj" if n >= 2 => self.gamma1.get(0, 1),
            "cross_xi11_xijj" if n >= 2 => self.gamma3.get(0, 1),
            "var_xijj" if n >= 2 => self.gamma1.get(1, 1),
            "cross_xijj" if n >= 2 => self.gamma3.get(1, 1),
            "var_xijk" if n >= 3 => self.gamma2[n - 1],
            "cross_xijk" if n >= 3 => self.gamma4[n - 1],
            "cov_xijj_xikk" if n >= 3 => self.gamma1.get(1, 2),
            "cross_xijj_xikk" if n >= 3 => self.gamma3.get(1, 2),
            _ => return None,
        };
        Some(v)
    }
}

/// One computed-versus-limit comparison.
#[derive(Debug, Clone, Serialize)]
pub struct LimitCheck {
    pub name: &'static str,
    pub scaled_value: f64,
    pub coefficient: f64,
    pub relative_error: f64,
}

/// ρ^{−p}-scaled conditional covariances at `rho` against their limits.
pub fn compare_with_limits(model: &CovarianceModel, dim: usize, rho: f64) -> Result<Vec<LimitCheck>> {
    let law = conditional_cov(model, dim, rho)?;
    let table = small_rho_limits(model, dim)?;
    let mut out = Vec::with_capacity(table.len());
    for t in table {
        let raw = match t.name {
            "det_grad" => gradient_pair_determinant(model, dim, rho)?,
            name => law.named_entry(name).expect("every tabulated name has an entry"),
        };
        let scaled = raw / rho.powi(t.power);
        out.push(LimitCheck {
            name: t.name,
            scaled_value: scaled,
            coefficient: t.coefficient,
            relative_error: (scaled - t.coefficient).abs() / t.coefficient.abs(),
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// A correlation-function estimate at one separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrEstimate {
    pub rho: f64,
    pub value: f64,
    pub std_error: f64,
    pub samples: usize,
    pub index_pair: Option<(usize, usize)>,
}

/// Estimates of A(ρ) and of every A^{i1,i2}(ρ) from one sample set.
#[derive(Debug, Clone, Serialize)]
pub struct CorrMcReport {
    pub dim: usize,
    pub rho: f64,
    pub seed: u64,
    pub total: CorrEstimate,
    /// Row-major (N+1)×(N+1) table indexed by (i1, i2); empty when index
    /// pairs were not requested.
    pub pairs: Vec<CorrEstimate>,
    /// Draws whose Hessian index was undefined at the Morse threshold.
    pub discarded: usize,
}

impl CorrMcReport {
    pub fn pair(&self, i1: usize, i2: usize) -> Option<&CorrEstimate> {
        self.pairs.get(i1 * (self.dim + 1) + i2)
    }
}

fn morse_index(h: &[f64], n: usize) -> Option<usize> {
    let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut w = h.to_vec();
    let ev = jacobi_eigenvalues(&mut w, n);
    if ev.iter().any(|e| e.abs() <= MORSE_THRESHOLD * norm) {
        return None;
    }
    Some(ev.iter().filter(|&&e| e < 0.0).count())
}

/// Monte Carlo estimate of A(ρ) and, with `by_index`, of every A^{i1,i2}(ρ).
pub fn corr_mc_report(
    model: &CovarianceModel,
    dim: usize,
    rho: f64,
    samples: usize,
    seed: u64,
    by_index: bool,
) -> Result<CorrMcReport> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!("at least {MIN_SAMPLES} samples required, got {samples}")));
    }
    let law = conditional_cov(model, dim, rho)?;
    let density = gradient_pair_density(model, dim, rho)?;
    // (|det ξ(0) det ξ(t)|, pair slot or usize::MAX when undefined)
    let draws: Vec<(f64, usize)> = par_samples(samples, seed, |rng| {
        let (h0, ht) = law.sample(rng);
        let v = (determinant(&h0, dim) * determinant(&ht, dim)).abs() * density;
        let slot = if by_index {
            match (morse_index(&h0, dim), morse_index(&ht, dim)) {
                (Some(a), Some(b)) => a * (dim + 1) + b,
                _ => usize::MAX,
            }
        } else {
            0
        };
        (v, slot)
    });
    let values: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let bm = batch_means(&values, DEFAULT_BATCHES)?;
    let total = CorrEstimate { rho, value: bm.mean, std_error: bm.std_error, samples, index_pair: None };
    let mut pairs = Vec::new();
    let mut discarded = 0;
    if by_index {
        discarded = draws.iter().filter(|d| d.1 == usize::MAX).count();
        let mut buf = vec![0.0; samples];
        for i1 in 0..=dim {
            for i2 in 0..=dim {
                let slot = i1 * (dim + 1) + i2;
                for (b, d) in buf.iter_mut().zip(&draws) {
                    *b = if d.1 == slot { d.0 } else { 0.0 };
                }
                let bm = batch_means(&buf, DEFAULT_BATCHES)?;
                pairs.push(CorrEstimate {
                    rho,
                    value: bm.mean,
                    std_error: bm.std_error,
                    samples,
                    index_pair: Some((i1, i2)),
                });
            }
        }
    }
    Ok(CorrMcReport { dim, rho, seed, total, pairs, discarded })
}

/// Monte Carlo estimate of A(ρ), or of A^{i1,i2}(ρ) when `index_pair` is given.
pub fn corr_mc(
    model: &CovarianceModel,
    dim: usize,
    rho: f64,
    index_pair: Option<(usize, usize)>,
    samples: usize,
    seed: u64,
) -> Result<CorrEstimate> {
    match index_pair {
        None => Ok(corr_mc_report(model, dim, rho, samples, seed, false)?.total),
        Some((a, b)) => {
            if a > dim || b > dim {
                return Err(Error::InvalidArgument(format!("index pair ({a}, {b}) outside 0..={dim}")));
            }
            let rep = corr_mc_report(model, dim, rho, samples, seed, true)?;
            Ok(*rep.pair(a, b).expect("pair table is complete"))
        }
    }
}

// ---------------------------------------------------------------------------
// asymptotic laws
// ---------------------------------------------------------------------------

fn asymptote_common(model: &CovarianceModel, dim: usize, rho: f64) -> Result<f64> {
    check_dim(dim)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::InvalidArgument(format!("separation ρ = {rho} must be positive")));
    }
    let l2 = model.spectral_moment(1)?;
    let l4 = model.spectral_moment(2)?;
    let l6 = model.spectral_moment(3)?;
    let nf = dim as f64;
    Ok(rho.powf(2.0 - nf) / (3f64.powf((nf - 1.0) / 2.0) * std::f64::consts::PI.powi(dim as i32))
        * (l4 / l2).powf(nf / 2.0)
        * (l2 * l6 - l4 * l4)
        / (l2 * l4))
}

/// A(ρ) ≃ ρ^{2−N} γ_{N−1} / (8·3^{(N−1)/2} π^N) · (λ4/λ2)^{N/2} (λ2λ6 − λ4²)/(λ2λ4).
pub fn corr_asymptote_total(model: &CovarianceModel, dim: usize, rho: f64) -> Result<f64> {
    Ok(asymptote_common(model, dim, rho)? * gamma_const(dim - 1)? / 8.0)
}

/// A^{k,k+1}(ρ) ≃ the same law with γ^k_{N−1} and 16 in place of γ_{N−1} and 8.
pub fn corr_asymptote_adjacent(model: &CovarianceModel, dim: usize, k: usize, rho: f64) -> Result<f64> {
    if dim == 0 || k + 1 > dim {
        return Err(Error::InvalidArgument(format!("adjacent pair ({k}, {}) outside 0..={dim}", k + 1)));
    }
    Ok(asymptote_common(model, dim, rho)? * gamma_const_indexed(dim - 1, k)? / 16.0)
}

/// For N = 1, A^{0,0}(ρ) = A^{1,1}(ρ) ≃ (λ4λ8 − λ6²)^{3/2} / (1296 π² λ4² (λ2λ6 − λ4²)^{1/2}) ρ⁴.
pub fn corr_1d_extrema_asymptote(model: &CovarianceModel, dim: usize, rho: f64) -> Result<f64> {
    if dim != 1 {
        return Err(Error::Unsupported("the same-type extrema law is one-dimensional".into()));
    }
    let l2 = model.spectral_moment(1)?;
    let l4 = model.spectral_moment(2)?;
    let l6 = model.spectral_moment(3)?;
    let l8 = model.spectral_moment(4)?;
    let pi2 = std::f64::consts::PI.powi(2);
    Ok((l4 * l8 - l6 * l6).powf(1.5) / (1296.0 * pi2 * l4 * l4 * (l2 * l6 - l4 * l4).sqrt()) * rho.powi(4))
}

// ---------------------------------------------------------------------------
// positive parts of a correlated Gaussian pair
// ---------------------------------------------------------------------------

fn check_pair(sigma2: f64, c: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(Error::InvalidArgument(format!("variance {sigma2} must be positive")));
    }
    if !(c.abs() < 1.0) {
        return Err(Error::InvalidArgument(format!("correlation {c} must lie in (−1, 1)")));
    }
    Ok(())
}

/// Adaptive quadrature to a relative tolerance, from a coarse first pass.
fn integrate_relative<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, rel: f64) -> Result<f64> {
    let coarse = integrate_finite(&f, lo, hi, 1e-6);
    let tol = (rel * coarse.value.abs()).max(f64::MIN_POSITIVE);
    let est = integrate_finite(&f, lo, hi, tol);
    if !est.value.is_finite() || est.error > 10.0 * tol {
        return Err(Error::Quadrature { estimate: est.value, error_bound: est.error });
    }
    Ok(est.value)
}

/// E[(Z⁺)^r] for Z ~ 𝒩(m, s²), written as s^r e^{−ℓ₊²/2} ∫₀^∞ v^r φ(ℓ + v) e^{ℓ₊²/2} dv
/// with ℓ = −m/s so the integrand stays O(1) deep in the tail.
fn positive_part_moment(r: f64, m: f64, s: f64) -> Result<f64> {
    let ell = -m / s;
    let shift = ell.max(0.0);
    let hi = (crate::special::TRUNCATION - ell).max(0.0) + 40.0 / (1.0 + shift);
    let g = |v: f64| v.powf(r) * (-0.5 * (ell + v) * (ell + v) + 0.5 * shift * shift).exp() / SQRT_2PI;
    let scale = (-0.5 * shift * shift).exp();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(s.powf(r) * scale * integrate_relative(g, 0.0, hi, 1e-11)?)
}

/// E[(X⁺Y⁺)^r] for centred (X, Y) with common variance σ² and correlation c.
pub fn positive_pair_moment(r: f64, sigma2: f64, c: f64) -> Result<f64> {
    check_pair(sigma2, c)?;
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("exponent r = {r} must be positive")));
    }
    let s = (1.0 - c * c).sqrt();
    // standardised: X = σu, Y | X ~ 𝒩(σcu, σ²(1 − c²))
    let failure = std::cell::RefCell::new(None);
    let f = |u: f64| {
        let inner = positive_part_moment(r, c * u, s).unwrap_or_else(|e| {
            failure.borrow_mut().get_or_insert(e);
            0.0
        });
        u.powf(r) * (-0.5 * u * u).exp() / SQRT_2PI * inner
    };
    let v = integrate_relative(f, 0.0, crate::special::TRUNCATION, 1e-10)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(sigma2.powf(r) * v)
}

/// E[X⁺Y⁺] = σ²[√(1−c²) + c(π/2 + arcsin c)]/(2π).
pub fn positive_pair_first_moment(sigma2: f64, c: f64) -> Result<f64> {
    check_pair(sigma2, c)?;
    let pi = std::f64::consts::PI;
    Ok(sigma2 * ((1.0 - c * c).sqrt() + c * (pi / 2.0 + c.asin())) / (2.0 * pi))
}

/// E[X⁺Y⁻] = σ²[√(1−c²) − c(π/2 − arcsin c)]/(2π), tending to σ²/2 as c → −1.
pub fn positive_pair_cross_moment(sigma2: f64, c: f64) -> Result<f64> {
    check_pair(sigma2, c)?;
    let pi = std::f64::consts::PI;
    Ok(sigma2 * ((1.0 - c * c).sqrt() - c * (pi / 2.0 - c.asin())) / (2.0 * pi))
}

/// K_r = [∫₀^∞ z^{2r+1} e^{−z²/2} dz · ∫_{−1}^{1} (1−s²)^r ds] / (2^{2r+1}·2π),
/// the constant in E[(X⁺Y⁺)^r] ≃ K_r σ^{−2(1+r)} det(Var(X,Y))^{(2r+1)/2}.
pub fn positive_pair_constant(r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!("exponent r = {r} must be positive")));
    }
    let radial = integrate_1d(|z| z.powf(2.0 * r + 1.0) * (-0.5 * z * z).exp(), Interval::above(0.0), 1e-11)?;
    let angular = integrate_finite(|s| (1.0 - s * s).max(0.0).powf(r), -1.0, 1.0, 1e-14).value;
    Ok(radial * angular / (2f64.powf(2.0 * r + 1.0) * 2.0 * std::f64::consts::PI))
}

/// The asymptotic form K_r σ^{−2(1+r)} (σ⁴(1−c²))^{(2r+1)/2}.
pub fn positive_pair_asymptote(r: f64, sigma2: f64, c: f64) -> Result<f64> {
    check_pair(sigma2, c)?;
    let det = sigma2 * sigma2 * (1.0 - c * c);
    Ok(positive_pair_constant(r)? * sigma2.powf(-(1.0 + r)) * det.powf((2.0 * r + 1.0) / 2.0))
}

// ---------------------------------------------------------------------------
// exponent fits
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub slope_error: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Weighted least-squares slope of log A against log ρ, weights from the
/// relative standard errors. Nonpositive estimates are skipped.
pub fn exponent_fit(estimates: &[CorrEstimate]) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64, f64)> = estimates
        .iter()
        .filter(|e| e.value > 0.0 && e.rho > 0.0)
        .map(|e| {
            let rel = (e.std_error / e.value).max(1e-12);
            (e.rho.ln(), e.value.ln(), 1.0 / (rel * rel))
        })
        .collect();
    if pts.len() < 3 {
        return Err(Error::TooFew(format!("{} usable estimates, need 3", pts.len())));
    }
    let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if hi - lo < 10f64.ln() * (1.0 - 1e-9) {
        return Err(Error::InvalidArgument("separations must span at least one decade".into()));
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Ok(SlopeFit { slope, slope_error: (1.0 / sxx).sqrt(), intercept: my - slope * mx, points: pts.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::cross_covariance;
    use crate::linalg::solve;
    use approx::assert_abs_diff_eq;

    fn gauss() -> CovarianceModel {
        CovarianceModel::gaussian(1.0).unwrap()
    }

    /// Hessian coordinates in ξ_d, ξ_u order.
    fn hessian_coords(n: usize) -> Vec<[usize; 2]> {
        let mut v: Vec<[usize; 2]> = (0..n).map(|i| [i, i]).collect();
        for i in 0..n {
            for j in i + 1..n {
                v.push([i, j]);
            }
        }
        v
    }

    /// Conditional covariance by a direct Schur complement of the joint law
    /// of (Hessians, gradients) at 0 and ρe₁.
    fn schur_oracle(model: &CovarianceModel, n: usize, rho: f64) -> Matrix {
        let hc = hessian_coords(n);
        // (point, derivative coordinates)
        let mut targets: Vec<(usize, Vec<usize>)> = Vec::new();
        for p in 0..2 {
            for h in &hc {
                targets.push((p, h.to_vec()));
            }
        }
        let conds: Vec<(usize, Vec<usize>)> = (0..2).flat_map(|p| (0..n).map(move |i| (p, vec![i]))).collect();
        let pos = |p: usize| {
            if p == 0 {
                vec![0.0; n]
            } else {
                (0..n).map(|i| if i == 0 { rho } else { 0.0 }).collect::<Vec<_>>()
            }
        };
        let cov = |a: &(usize, Vec<usize>), b: &(usize, Vec<usize>)| {
            let (pa, pb) = (pos(a.0), pos(b.0));
            let tau: Vec<f64> = pa.iter().zip(&pb).map(|(x, y)| x - y).collect();
            cross_covariance(model, &a.1, &b.1, &tau).unwrap()
        };
        let nt = targets.len();
        let nc = conds.len();
        let c: Vec<f64> = (0..nc * nc).map(|k| cov(&conds[k / nc], &conds[k % nc])).collect();
        let mut out = Matrix::zeros(nt, nt);
        let cross: Vec<Vec<f64>> = targets.iter().map(|t| conds.iter().map(|c| cov(t, c)).collect()).collect();
        let solved: Vec<Vec<f64>> = cross.iter().map(|row| solve(&c, row, nc).unwrap()).collect();
        for i in 0..nt {
            for j in 0..nt {
                let corr: f64 = cross[i].iter().zip(&solved[j]).map(|(a, b)| a * b).sum();
                out.set(i, j, cov(&targets[i], &targets[j]) - corr);
            }
        }
        out
    }

    #[test]
    fn block_formulas_match_schur_complement() {
        for model in [gauss(), CovarianceModel::cauchy(3.0, 1.5).unwrap()] {
            for n in 1..=4 {
                for &rho in &[0.3, 0.8] {
                    let law = conditional_cov(&model, n, rho).unwrap();
                    let joint = law.joint_covariance();
                    let oracle = schur_oracle(&model, n, rho);
                    let scale = oracle.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    for k in 0..joint.data.len() {
                        assert!(
                            (joint.data[k] - oracle.data[k]).abs() < 1e-9 * scale,
                            "N={n} ρ={rho} entry {k}: {} vs {}",
                            joint.data[k],
                            oracle.data[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_covariance_matches_direct_determinant() {
        let g = gauss();
        for n in 1..=3 {
            let law = conditional_cov(&g, n, 0.4).unwrap();
            let det = gradient_pair_determinant(&g, n, 0.4).unwrap();
            assert!((law.grad_cov.determinant() / det - 1.0).abs() < 1e-10);
        }
        // ρ^{−2N} det → λ2^N λ4^N / 3^{N−1}
        assert!((gradient_pair_determinant(&g, 1, 1e-4).unwrap() / 1e-8 / 24.0 - 1.0).abs() < 1e-6);
        assert!((gradient_pair_determinant(&g, 2, 1e-4).unwrap() / 1e-16 / 192.0 - 1.0).abs() < 1e-6);
        assert!(matches!(gradient_pair_density(&g, 2, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn small_rho_table_for_gaussian_model() {
        let t = small_rho_limits(&gauss(), 3).unwrap();
        let get = |n: &str| t.iter().find(|e| e.name == n).unwrap().coefficient;
        assert_abs_diff_eq!(get("var_xi11"), 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(get("cov_xi11_xijj"), 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(get("cov_xijj_xikk"), 8.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(get("det_xi11_pair"), 160.0, epsilon = 1e-9);
    }

    #[test]
    fn conditional_blocks_converge_to_limits() {
        for n in 2..=3 {
            for c in compare_with_limits(&gauss(), n, 1e-3).unwrap() {
                let tol = if c.name == "det_xi11_pair" { 0.05 } else { 0.02 };
                assert!(c.relative_error < tol, "N={n} {}: {} vs {}", c.name, c.scaled_value, c.coefficient);
            }
        }
    }

    #[test]
    fn conditional_correlation_tends_to_minus_one() {
        let law = conditional_cov(&gauss(), 2, 1e-3).unwrap();
        let corr = law.gamma3.get(0, 0) / law.gamma1.get(0, 0);
        assert!((corr + 1.0).abs() < 1e-3);
    }

    #[test]
    fn sampler_reproduces_covariance() {
        let law = conditional_cov(&gauss(), 3, 0.5).unwrap();
        let draws = par_samples(200_000, 9, |rng| law.sample(rng));
        // Cov(ξ11(0), ξ22(t)) and Var(ξ12(0))
        let n = 3;
        let c = draws.iter().map(|(a, b)| a[0] * b[n + 1]).sum::<f64>() / draws.len() as f64;
        let v = draws.iter().map(|(a, _)| a[1] * a[1]).sum::<f64>() / draws.len() as f64;
        assert!((c - law.gamma3.get(0, 1)).abs() < 0.05 * law.gamma1.get(1, 1));
        assert!((v / law.gamma2[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn asymptote_identities() {
        let g = gauss();
        // N = 1 reduces to the one-dimensional law
        for &rho in &[0.01, 0.1, 0.3] {
            let a = corr_asymptote_total(&g, 1, rho).unwrap();
            let expect = 96.0 / (8.0 * std::f64::consts::PI * 96f64.sqrt()) * rho;
            assert!((a / expect - 1.0).abs() < 1e-12);
        }
        assert_abs_diff_eq!(
            corr_asymptote_total(&g, 2, 0.05).unwrap(),
            4.0 / (3f64.sqrt() * std::f64::consts::PI.powi(2)),
            epsilon = 1e-8
        );
        let r = corr_asymptote_total(&g, 3, 0.01).unwrap() / corr_asymptote_total(&g, 3, 0.02).unwrap();
        assert!((r - 2.0).abs() < 1e-9);
        // adjacent pairs in both orientations partition the total
        for n in 2..=4 {
            let s: f64 = (0..n).map(|k| 2.0 * corr_asymptote_adjacent(&g, n, k, 0.1).unwrap()).sum();
            assert!((s / corr_asymptote_total(&g, n, 0.1).unwrap() - 1.0).abs() < 1e-9);
        }
        assert!(corr_asymptote_adjacent(&g, 2, 2, 0.1).is_err());
        assert_abs_diff_eq!(corr_1d_extrema_asymptote(&g, 1, 1.0).unwrap(), 0.02422, epsilon = 1e-5);
        assert!(corr_1d_extrema_asymptote(&g, 2, 1.0).is_err());
    }

    #[test]
    fn positive_part_moments() {
        for &c in &[-0.7, 0.0, 0.4] {
            let q = positive_pair_moment(1.0, 2.0, c).unwrap();
            assert_abs_diff_eq!(q, positive_pair_first_moment(2.0, c).unwrap(), epsilon = 1e-10);
            let frac = positive_pair_moment(1.5, 1.0, c).unwrap();
            assert!(frac > 0.0);
        }
        assert_abs_diff_eq!(
            positive_pair_first_moment(1.0, 0.0).unwrap(),
            1.0 / (2.0 * std::f64::consts::PI),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(positive_pair_constant(1.0).unwrap(), 1.0 / (6.0 * std::f64::consts::PI), epsilon = 1e-12);
        // 2^r Γ(r+1) B(r+1, r+1)/(2π) at r = 2: 8/(30·2π)
        assert_abs_diff_eq!(
            positive_pair_constant(2.0).unwrap(),
            8.0 / 30.0 / (2.0 * std::f64::consts::PI),
            epsilon = 1e-12
        );
        let cross = positive_pair_cross_moment(3.0, -0.999).unwrap();
        assert!((cross / 1.5 - 1.0).abs() < 0.01);
        assert!(positive_pair_first_moment(1.0, 1.0).is_err());
        // the asymptotic form is approached as c → −1
        for r in [1.0, 2.0] {
            let c = -0.9999;
            let exact = positive_pair_moment(r, 1.3, c).unwrap();
            let asym = positive_pair_asymptote(r, 1.3, c).unwrap();
            assert!((exact / asym - 1.0).abs() < 0.01, "r={r}: {exact} vs {asym}");
        }
    }

    #[test]
    fn exponent_fit_recovers_power_law() {
        let est: Vec<CorrEstimate> = [0.01, 0.03, 0.1, 0.3]
            .iter()
            .map(|&rho| CorrEstimate {
                rho,
                value: 0.7 * rho * rho,
                std_error: 1e-3 * rho * rho,
                samples: 1,
                index_pair: None,
            })
            .collect();
        let fit = exponent_fit(&est).unwrap();
        assert_abs_diff_eq!(fit.slope, 2.0, epsilon = 1e-6);
        assert!(exponent_fit(&est[..2]).is_err());
        assert!(exponent_fit(&est[1..3].iter().chain(&est[1..2]).copied().collect::<Vec<_>>()).is_err());
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let g = gauss();
        let a = corr_mc(&g, 2, 0.1, None, 20_000, 5).unwrap();
        let b = corr_mc(&g, 2, 0.1, None, 20_000, 5).unwrap();
        assert_eq!(a, b);
        assert!(corr_mc(&g, 2, 0.1, None, 100, 5).is_err());
    }

    #[test]
    fn index_pairs_partition_total() {
        let g = gauss();
        let rep = corr_mc_report(&g, 2, 0.2, 100_000, 3, true).unwrap();
        let s: f64 = rep.pairs.iter().map(|p| p.value).sum();
        assert!((s - rep.total.value).abs() < 1e-12 * rep.total.value.max(1.0) + 3.0 * rep.total.std_error);
        // A^{i1,i2} = A^{i2,i1} = A^{N−i1,N−i2}
        let (a, b, c) = (rep.pair(0, 1).unwrap(), rep.pair(1, 0).unwrap(), rep.pair(2, 1).unwrap());
        let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
        assert!((a.value - b.value).abs() < 4.0 * se);
        let se = (a.std_error.powi(2) + c.std_error.powi(2)).sqrt();
        assert!((a.value - c.value).abs() < 4.0 * se);
    }
}
