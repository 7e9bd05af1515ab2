//! Periodic Gaussian field synthesis, critical-point detection and the
//! empirical estimators built on top of it.
//!
//! Grids are flat arrays with axis 0 varying fastest: the node with integer
//! coordinates (i₀, …, i_{N−1}) sits at Σ i_k·side^k and at physical position
//! (i₀h, …, i_{N−1}h).

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::covariance::CovarianceModel;
use crate::error::{Error, Result};
use crate::linalg::{jacobi_eigenvalues, solve};

pub const MAX_FIELD_DIM: usize = 3;
pub const MAX_GRID_POINTS: usize = 1 << 27;
/// r((L/2)²) must stay below this for the torus to hold the covariance.
pub const SUPPORT_TOL: f64 = 1e-8;
/// Largest tolerated negative spectral mass, relative to the total.
pub const NEGATIVE_MASS_TOL: f64 = 1e-6;
/// Newton stops once the interpolant gradient norm reaches this.
pub const GRADIENT_TOL: f64 = 1e-8;
/// Hessian eigenvalues below this fraction of ‖H‖ leave the index undefined.
pub const DEGENERATE_TOL: f64 = 1e-10;
/// Location accuracy of refined critical points.
pub const LOCATION_TOL: f64 = 1e-8;
const NEWTON_ITERS: usize = 40;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"CPLB";
pub const SNAPSHOT_VERSION: u32 = 1;

/// A realisation on the periodic grid (ℤ/side)^N with node spacing h.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    pub dim: usize,
    pub side: usize,
    pub spacing: f64,
    pub values: Vec<f64>,
}

impl FieldGrid {
    pub fn new(dim: usize, side: usize, spacing: f64, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_FIELD_DIM {
            return Err(Error::Unsupported(format!("field dimension {dim} (supported 1..={MAX_FIELD_DIM})")));
        }
        if side < 8 || !side.is_power_of_two() {
            return Err(Error::InvalidArgument(format!("grid side {side} must be a power of two ≥ 8")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidArgument(format!("spacing {spacing} must be positive")));
        }
        let len = grid_len(dim, side)?;
        if values.len() != len {
            return Err(Error::InvalidArgument(format!("{} values for a grid of {len}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("grid values must be finite".into()));
        }
        Ok(FieldGrid { dim, side, spacing, values })
    }

    /// Samples `f` at every node.
    pub fn from_fn(dim: usize, side: usize, spacing: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let len = grid_len(dim, side)?;
        let mut x = vec![0.0; dim];
        let values = (0..len)
            .map(|flat| {
                let mut rest = flat;
                for xi in x.iter_mut() {
                    *xi = (rest % side) as f64 * spacing;
                    rest /= side;
                }
                f(&x)
            })
            .collect();
        FieldGrid::new(dim, side, spacing, values)
    }

    pub fn periodic(&self) -> bool {
        true
    }

    pub fn domain_length(&self) -> f64 {
        self.side as f64 * self.spacing
    }

    pub fn volume(&self) -> f64 {
        self.domain_length().powi(self.dim as i32)
    }

    fn stride(&self, axis: usize) -> usize {
        self.side.pow(axis as u32)
    }

    fn shifted(&self, flat: usize, axis: usize, delta: isize) -> usize {
        let s = self.stride(axis);
        let coord = (flat / s) % self.side;
        let moved = (coord as isize + delta).rem_euclid(self.side as isize) as usize;
        flat - coord * s + moved * s
    }

    /// Every `factor`-th node along each axis: the same realisation at a
    /// coarser spacing.
    pub fn subsample(&self, factor: usize) -> Result<FieldGrid> {
        if factor == 0 || !self.side.is_multiple_of(factor) {
            return Err(Error::InvalidArgument(format!("factor {factor} does not divide side {}", self.side)));
        }
        let side = self.side / factor;
        let len = grid_len(self.dim, side)?;
        let values = (0..len)
            .map(|flat| {
                let (mut rest, mut src) = (flat, 0);
                for k in 0..self.dim {
                    src += (rest % side) * factor * self.stride(k);
                    rest /= side;
                }
                self.values[src]
            })
            .collect();
        FieldGrid::new(self.dim, side, self.spacing * factor as f64, values)
    }

    pub fn negated(&self) -> FieldGrid {
        FieldGrid { values: self.values.iter().map(|v| -v).collect(), ..self.clone() }
    }
}

fn grid_len(dim: usize, side: usize) -> Result<usize> {
    if dim == 0 || dim > MAX_FIELD_DIM {
        return Err(Error::Unsupported(format!("field dimension {dim} (supported 1..={MAX_FIELD_DIM})")));
    }
    side.checked_pow(dim as u32)
        .filter(|&n| n <= MAX_GRID_POINTS)
        .ok_or_else(|| Error::InvalidArgument(format!("side^N = {side}^{dim} exceeds the 2^27 point cap")))
}

/// In-place N-dimensional FFT on the periodic grid.
fn fft_nd(data: &mut [Complex64], dim: usize, side: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(side) } else { planner.plan_fft_forward(side) };
    let mut line = vec![Complex64::new(0.0, 0.0); side];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dim {
        let stride = side.pow(axis as u32);
        let outer = data.len() / (stride * side);
        for o in 0..outer {
            for i in 0..stride {
                let base = o * stride * side + i;
                for (j, v) in line.iter_mut().enumerate() {
                    *v = data[base + j * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (j, v) in line.iter().enumerate() {
                    data[base + j * stride] = *v;
                }
            }
        }
    }
}

/// Eigenvalues of the circulant covariance: the FFT of c(τ) = r(‖τ‖²) with
/// toroidal lags. Negative mass up to [`NEGATIVE_MASS_TOL`] is clipped to 0.
fn circulant_spectrum(model: &CovarianceModel, dim: usize, side: usize, spacing: f64) -> Result<Vec<f64>> {
    let len = grid_len(dim, side)?;
    let half = side as f64 * spacing / 2.0;
    let tail = model.radial_deriv(0, half * half).map_err(|_| Error::NeedsAnalyticModel)?;
    if tail.abs() >= SUPPORT_TOL {
        return Err(Error::DomainTooSmall(format!(
            "r(L²/4) = {tail:e} ≥ {SUPPORT_TOL:e} for half-width {half}; enlarge side or spacing"
        )));
    }
    let mut kernel = Vec::with_capacity(len);
    for flat in 0..len {
        let mut rest = flat;
        let mut d2 = 0.0;
        for _ in 0..dim {
            let i = rest % side;
            rest /= side;
            let lag = i.min(side - i) as f64 * spacing;
            d2 += lag * lag;
        }
        kernel.push(Complex64::new(model.radial_deriv(0, d2)?, 0.0));
    }
    fft_nd(&mut kernel, dim, side, false);
    let total: f64 = kernel.iter().map(|c| c.re.abs()).sum();
    let negative: f64 = kernel.iter().filter(|c| c.re < 0.0).map(|c| -c.re).sum();
    if negative > NEGATIVE_MASS_TOL * total {
        return Err(Error::Embedding(negative / total));
    }
    Ok(kernel.iter().map(|c| c.re.max(0.0)).collect())
}

/// Stationary Gaussian field with covariance r(‖s − t‖²) on the periodic
/// grid, by circulant embedding. Deterministic in `seed`.
pub fn synthesize(model: &CovarianceModel, dim: usize, side: usize, spacing: f64, seed: u64) -> Result<FieldGrid> {
    if !model.is_analytic() {
        return Err(Error::NeedsAnalyticModel);
    }
    FieldGrid::new(dim, side, spacing, vec![0.0; grid_len(dim, side)?])?;
    let spectrum = circulant_spectrum(model, dim, side, spacing)?;
    let len = spectrum.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w: Vec<Complex64> = spectrum
        .iter()
        .map(|&lam| {
            let a = (lam / len as f64).sqrt();
            Complex64::new(a * rng.sample::<f64, _>(StandardNormal), a * rng.sample::<f64, _>(StandardNormal))
        })
        .collect();
    fft_nd(&mut w, dim, side, false);
    FieldGrid::new(dim, side, spacing, w.iter().map(|c| c.re).collect())
}

// ---------------------------------------------------------------------------
// quintic spline interpolant
// ---------------------------------------------------------------------------

/// Centred quintic B-spline and its first two derivatives at t.
fn bspline5(t: f64) -> [f64; 3] {
    const BINOM: [f64; 7] = [1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0];
    let mut out = [0.0; 3];
    for (j, &b) in BINOM.iter().enumerate() {
        let x = t + 3.0 - j as f64;
        if x <= 0.0 {
            continue;
        }
        let s = if j % 2 == 0 { b } else { -b };
        let x2 = x * x;
        let x3 = x2 * x;
        out[0] += s * x3 * x2;
        out[1] += s * 5.0 * x2 * x2;
        out[2] += s * 20.0 * x3;
    }
    out.map(|v| v / 120.0)
}

/// Periodic quintic spline through the grid values. Coefficients solve the
/// circulant interpolation system exactly in Fourier space.
#[derive(Debug, Clone)]
pub struct SplineInterpolant {
    dim: usize,
    side: usize,
    spacing: f64,
    coeffs: Vec<f64>,
}

/// Value, gradient and row-major Hessian of the interpolant at one point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub hessian: Vec<f64>,
}

impl SplineInterpolant {
    pub fn new(grid: &FieldGrid) -> Self {
        let (dim, side) = (grid.dim, grid.side);
        let mut data: Vec<Complex64> = grid.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut data, dim, side, false);
        let symbol: Vec<f64> = (0..side)
            .map(|j| {
                let w = 2.0 * std::f64::consts::PI * j as f64 / side as f64;
                (66.0 + 52.0 * w.cos() + 2.0 * (2.0 * w).cos()) / 120.0
            })
            .collect();
        for (flat, v) in data.iter_mut().enumerate() {
            let mut rest = flat;
            let mut s = 1.0;
            for _ in 0..dim {
                s *= symbol[rest % side];
                rest /= side;
            }
            *v /= s;
        }
        fft_nd(&mut data, dim, side, true);
        let len = data.len() as f64;
        SplineInterpolant { dim, side, spacing: grid.spacing, coeffs: data.iter().map(|c| c.re / len).collect() }
    }

    pub fn jet(&self, x: &[f64]) -> Jet {
        let (n, side, h) = (self.dim, self.side as isize, self.spacing);
        // per-axis node offsets and basis weights
        let mut nodes = [[0usize; 6]; MAX_FIELD_DIM];
        let mut w = [[[0.0; 3]; 6]; MAX_FIELD_DIM];
        for a in 0..n {
            let u = x[a] / h;
            let base = u.floor() as isize - 2;
            for m in 0..6 {
                let k = base + m as isize;
                nodes[a][m] = k.rem_euclid(side) as usize;
                let b = bspline5(u - k as f64);
                w[a][m] = [b[0], b[1] / h, b[2] / (h * h)];
            }
        }
        let mut value = 0.0;
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n * n];
        let total = 6usize.pow(n as u32);
        let mut sel = [0usize; MAX_FIELD_DIM];
        for combo in 0..total {
            let mut rest = combo;
            let mut flat = 0;
            let mut stride = 1;
            for a in 0..n {
                sel[a] = rest % 6;
                rest /= 6;
                flat += nodes[a][sel[a]] * stride;
                stride *= self.side;
            }
            let c = self.coeffs[flat];
            if c == 0.0 {
                continue;
            }
            let wt = |a: usize, d: usize| w[a][sel[a]][d];
            let mut p = c;
            for a in 0..n {
                p *= wt(a, 0);
            }
            value += p;
            for i in 0..n {
                let mut g = c * wt(i, 1);
                for a in (0..n).filter(|&a| a != i) {
                    g *= wt(a, 0);
                }
                grad[i] += g;
                for j in i..n {
                    let mut q = c;
                    for a in 0..n {
                        let d = (a == i) as usize + (a == j) as usize;
                        q *= wt(a, d);
                    }
                    hess[i * n + j] += q;
                    if j != i {
                        hess[j * n + i] += q;
                    }
                }
            }
        }
        Jet { value, gradient: grad, hessian: hess }
    }
}

// ---------------------------------------------------------------------------
// detection
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPointRecord {
    /// Position wrapped into [0, L)^N.
    pub location: Vec<f64>,
    pub value: f64,
    pub index: usize,
    pub hessian_eigs: Vec<f64>,
    pub gradient_norm: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DetectionDiagnostics {
    pub candidates: usize,
    pub newton_failures: usize,
    pub duplicates: usize,
    pub degenerate: usize,
    /// spacing·√λ2 exceeded the recommended 0.2 (only set when known).
    pub coarse_grid_warning: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Detection {
    pub records: Vec<CriticalPointRecord>,
    pub diagnostics: DetectionDiagnostics,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn newton(spline: &SplineInterpolant, start: &[f64], radius: f64) -> Option<(Vec<f64>, Jet)> {
    let n = start.len();
    let mut x = start.to_vec();
    for _ in 0..NEWTON_ITERS {
        let jet = spline.jet(&x);
        if norm(&jet.gradient) <= GRADIENT_TOL {
            return Some((x, jet));
        }
        let step = solve(&jet.hessian, &jet.gradient, n).ok()?;
        let len = norm(&step);
        let scale = if len > 0.5 * radius { 0.5 * radius / len } else { 1.0 };
        for (xi, s) in x.iter_mut().zip(&step) {
            *xi -= scale * s;
        }
        let moved: f64 = x.iter().zip(start).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if moved > radius {
            return None;
        }
    }
    let jet = spline.jet(&x);
    (norm(&jet.gradient) <= GRADIENT_TOL).then_some((x, jet))
}

fn toroidal_delta(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    d.min(period - d)
}

/// Locates, refines and classifies every critical point of the grid's
/// quintic-spline interpolant.
pub fn detect_critical_points(grid: &FieldGrid) -> Detection {
    let (n, side, h) = (grid.dim, grid.side, grid.spacing);
    let period = grid.domain_length();
    let spline = SplineInterpolant::new(grid);
    let len = grid.values.len();
    // centred-difference gradients at the nodes
    let grads: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..len)
                .map(|f| (grid.values[grid.shifted(f, a, 1)] - grid.values[grid.shifted(f, a, -1)]) / (2.0 * h))
                .collect()
        })
        .collect();
    let corners = 1usize << n;
    let mut diag = DetectionDiagnostics::default();
    let mut found: Vec<CriticalPointRecord> = Vec::new();
    for cell in 0..len {
        let mut sign_change = true;
        for g in &grads {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for c in 0..corners {
                let mut f = cell;
                for a in 0..n {
                    if c >> a & 1 == 1 {
                        f = grid.shifted(f, a, 1);
                    }
                }
                lo = lo.min(g[f]);
                hi = hi.max(g[f]);
            }
            if !(lo <= 0.0 && hi >= 0.0) {
                sign_change = false;
                break;
            }
        }
        if !sign_change {
            continue;
        }
        diag.candidates += 1;
        let mut rest = cell;
        let start: Vec<f64> = (0..n)
            .map(|_| {
                let i = rest % side;
                rest /= side;
                (i as f64 + 0.5) * h
            })
            .collect();
        let Some((x, jet)) = newton(&spline, &start, 2.0 * h) else {
            diag.newton_failures += 1;
            continue;
        };
        let mut hcopy = jet.hessian.clone();
        let eigs = jacobi_eigenvalues(&mut hcopy, n);
        let hnorm = norm(&jet.hessian);
        if eigs.iter().any(|e| e.abs() <= DEGENERATE_TOL * hnorm) {
            diag.degenerate += 1;
            continue;
        }
        found.push(CriticalPointRecord {
            location: x.iter().map(|v| v.rem_euclid(period)).collect(),
            value: jet.value,
            index: eigs.iter().filter(|&&e| e < 0.0).count(),
            hessian_eigs: eigs,
            gradient_norm: norm(&jet.gradient),
        });
    }
    let records = dedupe(found, h, period, &mut diag.duplicates);
    Detection { records, diagnostics: diag }
}

/// Keeps one record per cluster of points closer than h/2 on the torus,
/// preferring the smaller gradient norm.
fn dedupe(
    mut found: Vec<CriticalPointRecord>,
    h: f64,
    period: f64,
    duplicates: &mut usize,
) -> Vec<CriticalPointRecord> {
    found.sort_by(|a, b| a.gradient_norm.total_cmp(&b.gradient_norm));
    let cells = (period / h).round() as i64;
    let key = |x: &[f64]| -> Vec<i64> { x.iter().map(|v| ((v / h).floor() as i64).rem_euclid(cells)).collect() };
    let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
    let mut kept: Vec<CriticalPointRecord> = Vec::new();
    for rec in found {
        let k = key(&rec.location);
        let n = k.len();
        let mut clash = false;
        'search: for off in 0..3usize.pow(n as u32) {
            let mut r = off;
            let nb: Vec<i64> = k
                .iter()
                .map(|&c| {
                    let d = (r % 3) as i64 - 1;
                    r /= 3;
                    (c + d).rem_euclid(cells)
                })
                .collect();
            if let Some(ids) = buckets.get(&nb) {
                for &id in ids {
                    let d2: f64 = kept[id]
                        .location
                        .iter()
                        .zip(&rec.location)
                        .map(|(a, b)| toroidal_delta(*a, *b, period).powi(2))
                        .sum();
                    if d2.sqrt() < 0.5 * h {
                        clash = true;
                        break 'search;
                    }
                }
            }
        }
        if clash {
            *duplicates += 1;
        } else {
            buckets.entry(k).or_default().push(kept.len());
            kept.push(rec);
        }
    }
    kept.sort_by(|a, b| a.location.partial_cmp(&b.location).unwrap_or(std::cmp::Ordering::Equal));
    kept
}

/// Detection with the coarse-grid warning evaluated against the model.
pub fn detect_with_model(grid: &FieldGrid, model: &CovarianceModel) -> Result<Detection> {
    let mut d = detect_critical_points(grid);
    d.diagnostics.coarse_grid_warning = grid.spacing * model.spectral_moment(1)?.sqrt() > 0.2;
    Ok(d)
}

// ---------------------------------------------------------------------------
// estimators
// ---------------------------------------------------------------------------

/// Multinomial index fractions with 95% Wilson score intervals.
#[derive(Debug, Clone, Serialize)]
pub struct IndexFractionEstimate {
    pub counts: Vec<usize>,
    pub total: usize,
    pub fractions: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

pub const MIN_FRACTION_RECORDS: usize = 1000;
const WILSON_Z: f64 = 1.959_963_984_540_054;

impl IndexFractionEstimate {
    /// Max over indices of |p̂_k − p_k| / √(p_k(1 − p_k)/n).
    pub fn max_z_score(&self, reference: &[f64]) -> f64 {
        let n = self.total as f64;
        self.fractions
            .iter()
            .zip(reference)
            .map(|(&f, &p)| (f - p).abs() / (p * (1.0 - p) / n).sqrt())
            .fold(0.0, f64::max)
    }
}

pub fn empirical_index_fractions(records: &[CriticalPointRecord], dim: usize) -> Result<IndexFractionEstimate> {
    if records.len() < MIN_FRACTION_RECORDS {
        return Err(Error::TooFew(format!("{} records, need {MIN_FRACTION_RECORDS}", records.len())));
    }
    let mut counts = vec![0usize; dim + 1];
    for r in records {
        if r.index > dim {
            return Err(Error::InvalidArgument(format!("record index {} exceeds N = {dim}", r.index)));
        }
        counts[r.index] += 1;
    }
    let n = records.len() as f64;
    let z2 = WILSON_Z * WILSON_Z;
    let fractions: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let (lower, upper) = fractions
        .iter()
        .map(|&p| {
            let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
            let half = WILSON_Z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
            (centre - half, centre + half)
        })
        .unzip();
    Ok(IndexFractionEstimate { counts, total: records.len(), fractions, lower, upper })
}

/// One realisation's point set on the torus [0, L)^N.
#[derive(Debug, Clone)]
pub struct PointSet {
    pub dim: usize,
    pub period: f64,
    pub points: Vec<(Vec<f64>, usize)>,
}

impl PointSet {
    pub fn from_records(records: &[CriticalPointRecord], dim: usize, period: f64) -> Self {
        PointSet { dim, period, points: records.iter().map(|r| (r.location.clone(), r.index)).collect() }
    }

    pub fn volume(&self) -> f64 {
        self.period.powi(self.dim as i32)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PairBin {
    pub lo: f64,
    pub hi: f64,
    /// Second-order product density, comparable with A(ρ).
    pub product_density: f64,
    pub product_density_se: f64,
    /// Product density divided by the squared intensity (1 for Poisson).
    pub normalized: f64,
    pub normalized_se: f64,
    pub pairs: usize,
    pub empty: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PairCorrelation {
    pub index_pair: Option<(usize, usize)>,
    pub bin_width: f64,
    pub realizations: usize,
    pub bins: Vec<PairBin>,
}

fn ball_volume(dim: usize, r: f64) -> f64 {
    let c = match dim {
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => 4.0 * std::f64::consts::PI / 3.0,
    };
    c * r.powi(dim as i32)
}

/// Pair-count estimator of A(ρ) (or A^{i1,i2}(ρ)) on the torus, binned by
/// edges, averaged over realisations with across-realisation errors.
pub fn empirical_pair_correlation(
    sets: &[PointSet],
    edges: &[f64],
    index_pair: Option<(usize, usize)>,
) -> Result<PairCorrelation> {
    if sets.is_empty() {
        return Err(Error::TooFew("no realisations".into()));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] - w[0] >= 2.0 * LOCATION_TOL)) || edges[0] < 0.0 {
        return Err(Error::InvalidArgument("bin edges must increase by at least twice the location tolerance".into()));
    }
    let (dim, period) = (sets[0].dim, sets[0].period);
    let rmax = *edges.last().unwrap();
    if rmax >= period / 2.0 {
        return Err(Error::InvalidArgument(format!("largest radius {rmax} must stay below half the period {period}")));
    }
    let nb = edges.len() - 1;
    let per_set: Vec<(Vec<usize>, Vec<f64>, Vec<f64>)> = sets
        .par_iter()
        .map(|set| {
            let mut counts = vec![0usize; nb];
            let pts = &set.points;
            for (i, (a, ia)) in pts.iter().enumerate() {
                for (j, (b, ib)) in pts.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    if let Some((p, q)) = index_pair {
                        if *ia != p || *ib != q {
                            continue;
                        }
                    }
                    let mut d2 = 0.0;
                    for k in 0..dim {
                        d2 += toroidal_delta(a[k], b[k], period).powi(2);
                        if d2 >= rmax * rmax {
                            break;
                        }
                    }
                    if d2 >= rmax * rmax {
                        continue;
                    }
                    let d = d2.sqrt();
                    let bin = edges.partition_point(|&e| e <= d);
                    if bin >= 1 && bin <= nb {
                        counts[bin - 1] += 1;
                    }
                }
            }
            let vol = set.volume();
            let intensity = pts.len() as f64 / vol;
            let dens: Vec<f64> = (0..nb)
                .map(|b| counts[b] as f64 / (vol * (ball_volume(dim, edges[b + 1]) - ball_volume(dim, edges[b]))))
                .collect();
            let norm: Vec<f64> =
                dens.iter().map(|d| if intensity > 0.0 { d / (intensity * intensity) } else { 0.0 }).collect();
            (counts, dens, norm)
        })
        .collect();
    let r = sets.len() as f64;
    let stats = |vals: Vec<f64>| {
        let m = vals.iter().sum::<f64>() / r;
        let se = if sets.len() > 1 {
            (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt()
        } else {
            f64::NAN
        };
        (m, se)
    };
    let bins = (0..nb)
        .map(|b| {
            let pairs: usize = per_set.iter().map(|s| s.0[b]).sum();
            let (pd, pd_se) = stats(per_set.iter().map(|s| s.1[b]).collect());
            let (g, g_se) = stats(per_set.iter().map(|s| s.2[b]).collect());
            PairBin {
                lo: edges[b],
                hi: edges[b + 1],
                product_density: pd,
                product_density_se: pd_se,
                normalized: g,
                normalized_se: g_se,
                pairs,
                empty: pairs == 0,
            }
        })
        .collect();
    let bin_width = edges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    Ok(PairCorrelation { index_pair, bin_width, realizations: sets.len(), bins })
}

// ---------------------------------------------------------------------------
// simulation driver
// ---------------------------------------------------------------------------

/// Seed of realisation `r` in a run seeded with `seed`.
pub fn realization_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed.wrapping_add((r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Serialize)]
pub struct Realization {
    pub seed: u64,
    pub records: Vec<CriticalPointRecord>,
    pub diagnostics: DetectionDiagnostics,
    pub sample_variance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationSummary {
    pub dim: usize,
    pub side: usize,
    pub spacing: f64,
    pub seed: u64,
    pub realizations: usize,
    pub volume_per_realization: f64,
    pub total_points: usize,
    pub density: f64,
    pub density_se: f64,
    pub degenerate_fraction: f64,
    pub newton_failures: usize,
    pub coarse_grid_warning: bool,
}

/// Synthesises and analyses `count` independent realisations in parallel.
pub fn simulate(
    model: &CovarianceModel,
    dim: usize,
    side: usize,
    spacing: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Realization>> {
    if count == 0 {
        return Err(Error::InvalidArgument("at least one realisation required".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|r| {
            let s = realization_seed(seed, r);
            let grid = synthesize(model, dim, side, spacing, s)?;
            let det = detect_with_model(&grid, model)?;
            let var = grid.values.iter().map(|v| v * v).sum::<f64>() / grid.values.len() as f64;
            Ok(Realization { seed: s, records: det.records, diagnostics: det.diagnostics, sample_variance: var })
        })
        .collect()
}

pub fn summarize(runs: &[Realization], dim: usize, side: usize, spacing: f64, seed: u64) -> SimulationSummary {
    let vol = (side as f64 * spacing).powi(dim as i32);
    let counts: Vec<f64> = runs.iter().map(|r| r.records.len() as f64).collect();
    let r = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / r;
    let total: usize = runs.iter().map(|r| r.records.len()).sum();
    // across-realisation error when available, Poisson otherwise
    let se = if runs.len() > 1 {
        (counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (r - 1.0) / r).sqrt() / vol
    } else {
        mean.sqrt() / vol
    };
    let degenerate: usize = runs.iter().map(|r| r.diagnostics.degenerate).sum();
    SimulationSummary {
        dim,
        side,
        spacing,
        seed,
        realizations: runs.len(),
        volume_per_realization: vol,
        total_points: total,
        density: mean / vol,
        density_se: se,
        degenerate_fraction: degenerate as f64 / (total + degenerate).max(1) as f64,
        newton_failures: runs.iter().map(|r| r.diagnostics.newton_failures).sum(),
        coarse_grid_warning: runs.iter().any(|r| r.diagnostics.coarse_grid_warning),
    }
}

// ---------------------------------------------------------------------------
// snapshot format
// ---------------------------------------------------------------------------

/// Writes "CPLB", u32 version, u32 N, u32 side, f64 spacing, then the
/// values, all little-endian.
pub fn write_snapshot<W: Write>(grid: &FieldGrid, mut w: W) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim as u32).to_le_bytes())?;
    w.write_all(&(grid.side as u32).to_le_bytes())?;
    w.write_all(&grid.spacing.to_le_bytes())?;
    let mut buf = Vec::with_capacity(grid.values.len() * 8);
    for v in &grid.values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: Read>(mut r: R) -> Result<FieldGrid> {
    let mut head = [0u8; 24];
    r.read_exact(&mut head)?;
    if &head[..4] != SNAPSHOT_MAGIC {
        return Err(Error::InvalidArgument("not a grid snapshot (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[i..i + 4].try_into().unwrap());
    if word(4) != SNAPSHOT_VERSION {
        return Err(Error::Unsupported(format!("snapshot version {}", word(4))));
    }
    let (dim, side) = (word(8) as usize, word(12) as usize);
    let spacing = f64::from_le_bytes(head[16..24].try_into().unwrap());
    let len = grid_len(dim, side)?;
    let mut bytes = vec![0u8; len * 8];
    r.read_exact(&mut bytes)?;
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    FieldGrid::new(dim, side, spacing, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kac_rice::{index_fractions, mean_count_total};

    fn gauss() -> CovarianceModel {
        CovarianceModel::gaussian(1.0).unwrap()
    }

    #[test]
    fn bspline_partition_of_unity_and_samples() {
        let b = |t: f64| bspline5(t)[0];
        assert!((b(0.0) - 66.0 / 120.0).abs() < 1e-15);
        assert!((b(1.0) - 26.0 / 120.0).abs() < 1e-15);
        assert!((b(2.0) - 1.0 / 120.0).abs() < 1e-15);
        assert_eq!(b(3.0), 0.0);
        for &t in &[0.1, 0.37, 0.5, 0.93] {
            let s: f64 = (-3..=3).map(|k| b(t - k as f64)).sum();
            assert!((s - 1.0).abs() < 1e-12);
            let d: f64 = (-3..=3).map(|k| bspline5(t - k as f64)[1]).sum();
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn spline_interpolates_and_differentiates() {
        let side = 64;
        let h = 2.0 * std::f64::consts::PI / side as f64;
        let grid = FieldGrid::from_fn(2, side, h, |x| (x[0]).sin() * (2.0 * x[1]).cos()).unwrap();
        let s = SplineInterpolant::new(&grid);
        let node = s.jet(&[5.0 * h, 7.0 * h]);
        assert!((node.value - grid.values[5 + 7 * side]).abs() < 1e-12);
        let p = [1.234, 0.567];
        let j = s.jet(&p);
        assert!((j.value - p[0].sin() * (2.0 * p[1]).cos()).abs() < 1e-7);
        assert!((j.gradient[1] + 2.0 * p[0].sin() * (2.0 * p[1]).sin()).abs() < 1e-5);
        assert!((j.hessian[1] + 2.0 * p[0].cos() * (2.0 * p[1]).sin()).abs() < 1e-4);
        assert_eq!(j.hessian[1], j.hessian[2]);
    }

    #[test]
    fn trigonometric_surface_has_exact_critical_set() {
        // cos x cos y on [0, 4π)²: 8 maxima, 8 minima, 16 saddles
        let side = 128;
        let h = 4.0 * std::f64::consts::PI / side as f64;
        let grid = FieldGrid::from_fn(2, side, h, |x| x[0].cos() * x[1].cos()).unwrap();
        let det = detect_critical_points(&grid);
        let mut by = [0; 3];
        for r in &det.records {
            by[r.index] += 1;
            assert!(r.gradient_norm <= GRADIENT_TOL);
        }
        assert_eq!(by, [8, 16, 8], "{:?}", det.diagnostics);
    }

    #[test]
    fn synthesis_is_deterministic_and_rejects_small_domains() {
        let g = gauss();
        let a = synthesize(&g, 2, 64, 0.2, 11).unwrap();
        let b = synthesize(&g, 2, 64, 0.2, 11).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synthesize(&g, 2, 64, 0.2, 12).unwrap());
        assert!(matches!(synthesize(&g, 2, 16, 0.1, 1), Err(Error::DomainTooSmall(_))));
        let m = CovarianceModel::moments(2.0, 12.0, None, None).unwrap();
        assert!(matches!(synthesize(&m, 2, 64, 0.2, 1), Err(Error::NeedsAnalyticModel)));
        assert!(synthesize(&g, 4, 16, 0.2, 1).is_err());
        assert!(synthesize(&g, 2, 100, 0.2, 1).is_err());
    }

    #[test]
    fn synthesis_covariance_matches_model() {
        let g = gauss();
        let (side, h) = (128, 0.25);
        let fields: Vec<FieldGrid> = (0..50).map(|s| synthesize(&g, 2, side, h, s).unwrap()).collect();
        for lag in [0usize, 1, 2, 4, 6] {
            let per: Vec<f64> = fields
                .iter()
                .map(|f| {
                    let n = f.values.len();
                    (0..n).map(|i| f.values[i] * f.values[f.shifted(i, 0, lag as isize)]).sum::<f64>() / n as f64
                })
                .collect();
            let m = per.iter().sum::<f64>() / 50.0;
            let se = (per.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 49.0 / 50.0).sqrt();
            let expect = (-(lag as f64 * h).powi(2)).exp();
            assert!((m - expect).abs() < 3.0 * se + 1e-12, "lag {lag}: {m} vs {expect} ± {se}");
        }
    }

    #[test]
    fn one_dimensional_count_matches_rice() {
        let g = gauss();
        let grid = synthesize(&g, 1, 1 << 17, 0.1, 3).unwrap();
        let det = detect_critical_points(&grid);
        let density = det.records.len() as f64 / grid.volume();
        let expect = mean_count_total(&g, 1, 1.0).unwrap();
        assert!((density / expect - 1.0).abs() < 0.05, "{density} vs {expect}");
        let spline = SplineInterpolant::new(&grid);
        for r in det.records.iter().step_by(97) {
            assert!(norm(&spline.jet(&r.location).gradient) <= GRADIENT_TOL * 1.01);
        }
    }

    #[test]
    fn sign_flip_reverses_indices() {
        let grid = synthesize(&gauss(), 2, 512, 0.1, 8).unwrap();
        let a = detect_critical_points(&grid).records;
        let b = detect_critical_points(&grid.negated()).records;
        assert_eq!(a.len(), b.len());
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.index, 2 - q.index);
            assert!((p.value + q.value).abs() < 1e-12);
        }
        let fa = empirical_index_fractions(&a, 2).unwrap();
        let fb = empirical_index_fractions(&b, 2).unwrap();
        let rev: Vec<f64> = fb.fractions.iter().rev().copied().collect();
        assert_eq!(fa.fractions, rev);
    }

    #[test]
    fn halving_spacing_preserves_counts() {
        let fine = synthesize(&gauss(), 2, 512, 0.05, 21).unwrap();
        let coarse = fine.subsample(2).unwrap();
        let nf = detect_critical_points(&fine).records.len() as f64;
        let nc = detect_critical_points(&coarse).records.len() as f64;
        assert!((nf / nc - 1.0).abs() < 0.01, "{nf} vs {nc}");
    }

    #[test]
    fn two_dimensional_fractions_and_density() {
        let g = gauss();
        let runs = simulate(&g, 2, 256, 0.1, 8, 5).unwrap();
        let all: Vec<CriticalPointRecord> = runs.iter().flat_map(|r| r.records.clone()).collect();
        let f = empirical_index_fractions(&all, 2).unwrap();
        assert!(f.max_z_score(&index_fractions(2).unwrap()) < 3.0, "{:?}", f.fractions);
        let s = summarize(&runs, 2, 256, 0.1, 5);
        assert!((s.density / 0.7351 - 1.0).abs() < 0.05, "{}", s.density);
        assert!(s.degenerate_fraction < 1e-3);
        assert!(empirical_index_fractions(&all[..10], 2).is_err());
    }

    #[test]
    fn poisson_points_give_flat_profile() {
        let period = 50.0;
        let sets: Vec<PointSet> = (0..20)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let points =
                    (0..2000).map(|_| (vec![rng.random::<f64>() * period, rng.random::<f64>() * period], 0)).collect();
                PointSet { dim: 2, period, points }
            })
            .collect();
        let edges: Vec<f64> = (0..=10).map(|i| 0.5 + 0.5 * i as f64).collect();
        let pc = empirical_pair_correlation(&sets, &edges, None).unwrap();
        for b in &pc.bins {
            assert!((b.normalized - 1.0).abs() < 4.0 * b.normalized_se + 0.02, "{b:?}");
        }
        assert!(empirical_pair_correlation(&sets, &[0.0, 30.0], None).is_err());
        assert!(empirical_pair_correlation(&sets, &[1.0, 1.0], None).is_err());
    }

    #[test]
    fn snapshot_round_trip() {
        let grid = synthesize(&gauss(), 2, 64, 0.2, 4).unwrap();
        let mut buf = Vec::new();
        write_snapshot(&grid, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"CPLB");
        assert_eq!(buf.len(), 24 + 8 * 64 * 64);
        assert_eq!(read_snapshot(&buf[..]).unwrap(), grid);
        buf[0] = b'X';
        assert!(read_snapshot(&buf[..]).is_err());
        assert!(read_snapshot(&buf[..10]).is_err());
    }
}
