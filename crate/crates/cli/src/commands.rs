use std::fs::File;
use std::io::BufWriter;

use critpoint::acceptance::{run_criterion, Suite, TITLES};
use critpoint::correlation::{
    corr_1d_extrema_asymptote, corr_asymptote_adjacent, corr_asymptote_total, corr_mc_report, exponent_fit,
    CorrEstimate,
};
use critpoint::covariance::CovarianceModel;
use critpoint::field::{
    empirical_index_fractions, empirical_pair_correlation, simulate, summarize, synthesize, write_snapshot,
    CriticalPointRecord, PointSet,
};
use critpoint::goe::{closed_form_density, sample_ordered_eigenvalues, OrderedEigDensity, MAX_DENSITY_N};
use critpoint::kac_rice::{
    index_fractions, index_fractions_closed_form, mean_count_index_above, mean_count_total,
    mean_count_total_2d_closed_form, mean_counts_by_index,
};
use critpoint::montecarlo::{ks_critical_1pct, ks_statistic};
use critpoint::{Error, Result};
use serde_json::json;

use crate::args::Command;
use crate::report::Report;
use crate::row;

fn bad(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| bad(format!("{what}: '{s}' is not a number")))
}

/// `start:stop:step`, inclusive of both ends up to rounding.
pub fn parse_step_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(bad(format!("grid '{spec}' must be start:stop:step")));
    }
    let (a, b, h) =
        (parse_f64(parts[0], "grid start")?, parse_f64(parts[1], "grid stop")?, parse_f64(parts[2], "grid step")?);
    if !(h > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(bad(format!("grid '{spec}' needs start ≤ stop and a positive step")));
    }
    let n = ((b - a) / h + 1e-9).floor() as usize;
    if n > 1_000_000 {
        return Err(bad(format!("grid '{spec}' has more than 10^6 points")));
    }
    // snapping to 1e-12 keeps nodes such as 0 exact
    Ok((0..=n).map(|i| ((a + i as f64 * h) * 1e12).round() / 1e12).collect())
}

/// `start:stop:count:log|lin`, or a single value.
pub fn parse_rho_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let out = match parts.as_slice() {
        [v] => vec![parse_f64(v, "ρ")?],
        [a, b, n, kind] => {
            let (a, b) = (parse_f64(a, "ρ start")?, parse_f64(b, "ρ stop")?);
            let n: usize = n.trim().parse().map_err(|_| bad(format!("ρ count '{n}' is not an integer")))?;
            if n < 2 || !(b > a) {
                return Err(bad(format!("ρ grid '{spec}' needs start < stop and count ≥ 2")));
            }
            let t = |i: usize| i as f64 / (n - 1) as f64;
            match *kind {
                "lin" => (0..n).map(|i| a + (b - a) * t(i)).collect(),
                "log" if a > 0.0 => (0..n).map(|i| (a.ln() + (b.ln() - a.ln()) * t(i)).exp()).collect(),
                "log" => return Err(bad("log-spaced grids need a positive start")),
                other => return Err(bad(format!("grid spacing '{other}' must be log or lin"))),
            }
        }
        _ => return Err(bad(format!("ρ grid '{spec}' must be start:stop:count:log|lin or a single value"))),
    };
    if out.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(bad("separations must be positive"));
    }
    Ok(out)
}

pub fn parse_pair(spec: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = spec.split(',').collect();
    let p = |s: &str| s.trim().parse::<usize>().map_err(|_| bad(format!("index pair '{spec}' must be i1,i2")));
    match parts.as_slice() {
        [a, b] => Ok((p(a)?, p(b)?)),
        _ => Err(bad(format!("index pair '{spec}' must be i1,i2"))),
    }
}

fn model(spec: &str) -> Result<CovarianceModel> {
    spec.parse()
}

fn estimate_row(e: &CorrEstimate, seed: u64) -> serde_json::Map<String, serde_json::Value> {
    let mut r = row! {
        "rho" => e.rho,
        "value" => e.value,
        "std_error" => e.std_error,
        "samples" => e.samples,
        "seed" => seed,
        "method" => "monte-carlo",
    };
    if let Some((a, b)) = e.index_pair {
        r.insert("i1".into(), a.into());
        r.insert("i2".into(), b.into());
    }
    r
}

pub fn dispatch(cmd: &Command) -> Result<Report> {
    let cross = cmd.output().cross_check;
    match cmd {
        Command::GoeDensity { n, k, grid, .. } => goe_density(*n, *k, grid, cross),
        Command::GoeSample { n, k, samples, seed, .. } => goe_sample(*n, *k, *samples, *seed, cross),
        Command::Counts { model: m, n, k, u, volume, .. } => counts(m, *n, *k, *u, *volume, cross),
        Command::Fractions { n, .. } => fractions(*n, cross),
        Command::CorrAsymptote { model: m, n, rho, .. } => corr_asymptote(m, *n, rho),
        Command::CorrMc { model: m, n, rho, index_pair, all_pairs, samples, seed, .. } => {
            corr_mc(m, *n, rho, index_pair.as_deref(), *all_pairs, *samples, *seed, cross)
        }
        Command::Simulate {
            model: m,
            n,
            side,
            spacing,
            realizations,
            seed,
            snapshot,
            pair_bins,
            index_pair,
            records,
            ..
        } => simulate_cmd(SimArgs {
            model: m,
            n: *n,
            side: *side,
            spacing: *spacing,
            realizations: *realizations,
            seed: *seed,
            snapshot: snapshot.as_deref(),
            pair_bins: pair_bins.as_deref(),
            index_pair: index_pair.as_deref(),
            records: *records,
            cross,
        }),
        Command::Validate { suite, seed, .. } => validate(suite, *seed),
    }
}

fn goe_density(n: usize, k: Option<usize>, grid: &str, cross: bool) -> Result<Report> {
    if n == 0 || n > MAX_DENSITY_N {
        return Err(Error::Unsupported(format!("densities for N = {n} (supported 1..={MAX_DENSITY_N})")));
    }
    if let Some(k) = k.filter(|&k| k == 0 || k > n) {
        return Err(bad(format!("k = {k} outside 1..={n}")));
    }
    let pts = parse_step_grid(grid)?;
    let d = OrderedEigDensity::new(n)?;
    let ranks: Vec<usize> = k.map(|k| vec![k]).unwrap_or_else(|| (1..=n).collect());
    let mut rep = Report::new("goe-density");
    rep.input("N", n);
    rep.input("k", json!(k));
    rep.input("grid", grid);
    let check = cross && n <= 5;
    let mut max_gap: f64 = 0.0;
    for &l in &pts {
        let mut r = row! { "l" => l };
        for &kk in &ranks {
            let key = if k.is_some() { "density".to_string() } else { format!("q{kk}") };
            let v = d.eval(kk, l)?;
            r.insert(key.clone(), v.into());
            if check {
                let c = closed_form_density(n, kk, l)?;
                max_gap = max_gap.max((v - c).abs());
                r.insert(format!("{key}_closed_form"), c.into());
            }
        }
        r.insert("method".into(), "pfaffian".into());
        rep.rows.push(r);
    }
    if check {
        rep.extra("cross_check", json!({"against": "closed-form", "max_abs_gap": max_gap, "method": "closed-form"}));
    } else if cross {
        rep.extra("cross_check", json!({"available": false, "reason": "closed forms exist for N ≤ 5"}));
    }
    Ok(rep)
}

fn goe_sample(n: usize, k: Option<usize>, samples: usize, seed: u64, cross: bool) -> Result<Report> {
    if samples < 100 {
        return Err(bad("at least 100 samples required"));
    }
    if let Some(k) = k.filter(|&k| k == 0 || k > n) {
        return Err(bad(format!("k = {k} outside 1..={n}")));
    }
    let ranks: Vec<usize> = k.map(|k| vec![k]).unwrap_or_else(|| (1..=n).collect());
    let mut rep = Report::new("goe-sample");
    rep.input("N", n);
    rep.input("k", json!(k));
    rep.input("samples", samples);
    rep.input("seed", seed);
    let density = if cross && n <= MAX_DENSITY_N { Some(OrderedEigDensity::new(n)?) } else { None };
    for &kk in &ranks {
        let draws = sample_ordered_eigenvalues(n, kk, samples, seed)?;
        let m = draws.iter().sum::<f64>() / samples as f64;
        let var = draws.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (samples as f64 - 1.0);
        let mut r = row! {
            "k" => kk,
            "mean" => m,
            "std_error" => (var / samples as f64).sqrt(),
            "std_dev" => var.sqrt(),
            "min" => draws.iter().copied().fold(f64::INFINITY, f64::min),
            "max" => draws.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            "samples" => samples,
            "seed" => seed,
            "method" => "monte-carlo",
        };
        if let Some(d) = &density {
            let table = d.cdf_table(kk, -12.0, 12.0, 0.02)?;
            let ks = ks_statistic(&draws, |x| table.cdf(x));
            r.insert("ks_distance".into(), ks.into());
            r.insert("ks_critical_1pct".into(), ks_critical_1pct(samples).into());
            r.insert("ks_method".into(), "pfaffian".into());
        }
        rep.rows.push(r);
    }
    if cross && density.is_none() {
        rep.extra("cross_check", json!({"available": false, "reason": format!("densities need N ≤ {MAX_DENSITY_N}")}));
    }
    Ok(rep)
}

fn counts(spec: &str, n: usize, k: Option<usize>, u: Option<f64>, volume: f64, cross: bool) -> Result<Report> {
    let m = model(spec)?;
    if let Some(k) = k.filter(|&k| k > n) {
        return Err(bad(format!("index {k} exceeds N = {n}")));
    }
    let mut rep = Report::new("counts");
    rep.input("model", m.to_string());
    rep.input("N", n);
    rep.input("k", json!(k));
    rep.input("u", json!(u));
    rep.input("volume", volume);
    let ks: Vec<usize> = k.map(|k| vec![k]).unwrap_or_else(|| (0..=n).collect());
    let by_index = match u {
        None => {
            let all = mean_counts_by_index(&m, n, volume)?;
            ks.iter().map(|&i| all[i]).collect::<Vec<_>>()
        }
        Some(u) => ks.iter().map(|&i| mean_count_index_above(&m, n, i, u, volume)).collect::<Result<Vec<_>>>()?,
    };
    for (&i, &c) in ks.iter().zip(&by_index) {
        rep.rows.push(row! { "index" => i, "count" => c, "method" => "quadrature" });
    }
    if k.is_none() {
        let total: f64 = by_index.iter().sum();
        rep.extra("total", json!({"count": total, "method": "quadrature"}));
        if cross && u.is_none() {
            let check = match n {
                2 => Some(("closed-form", mean_count_total_2d_closed_form(&m, volume)?)),
                1 => {
                    let (l2, l4) = (m.spectral_moment(1)?, m.spectral_moment(2)?);
                    Some(("closed-form", volume * (l4 / l2).sqrt() / std::f64::consts::PI))
                }
                _ => None,
            };
            match check {
                Some((method, v)) => rep.extra(
                    "cross_check",
                    json!({"count": v, "relative_gap": (v / total - 1.0).abs(), "method": method}),
                ),
                None => rep.extra(
                    "cross_check",
                    json!({"count": mean_count_total(&m, n, volume)?, "method": "quadrature", "note": "no closed form for this N"}),
                ),
            }
        }
    }
    Ok(rep)
}

fn fractions(n: usize, cross: bool) -> Result<Report> {
    let f = index_fractions(n)?;
    let mut rep = Report::new("fractions");
    rep.input("N", n);
    for (i, v) in f.iter().enumerate() {
        rep.rows.push(row! { "index" => i, "fraction" => v, "method" => "quadrature" });
    }
    rep.extra("fractions", json!({"values": f, "method": "quadrature"}));
    if cross {
        match index_fractions_closed_form(n) {
            Ok(c) => {
                let gap = f.iter().zip(&c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                rep.extra("cross_check", json!({"values": c, "max_abs_gap": gap, "method": "closed-form"}));
            }
            Err(_) => rep.extra("cross_check", json!({"available": false, "reason": "closed forms exist for N ≤ 4"})),
        }
    }
    Ok(rep)
}

fn corr_asymptote(spec: &str, n: usize, rho: &str) -> Result<Report> {
    let m = model(spec)?;
    let grid = parse_rho_grid(rho)?;
    let mut rep = Report::new("corr-asymptote");
    rep.input("model", m.to_string());
    rep.input("N", n);
    rep.input("rho", rho);
    for &r in &grid {
        let mut row = row! { "rho" => r, "total" => corr_asymptote_total(&m, n, r)? };
        for k in 0..n {
            row.insert(format!("adjacent_{k}_{}", k + 1), corr_asymptote_adjacent(&m, n, k, r)?.into());
        }
        if n == 1 {
            match corr_1d_extrema_asymptote(&m, 1, r) {
                Ok(v) => row.insert("same_type_extrema".into(), v.into()),
                Err(Error::InvalidModel(_)) | Err(Error::Unsupported(_)) => None,
                Err(e) => return Err(e),
            };
        }
        row.insert("method".into(), "closed-form".into());
        rep.rows.push(row);
    }
    Ok(rep)
}

#[allow(clippy::too_many_arguments)]
fn corr_mc(
    spec: &str,
    n: usize,
    rho: &str,
    pair: Option<&str>,
    all_pairs: bool,
    samples: usize,
    seed: u64,
    cross: bool,
) -> Result<Report> {
    let m = model(spec)?;
    let grid = parse_rho_grid(rho)?;
    let pair = pair.map(parse_pair).transpose()?;
    if let Some((a, b)) = pair.filter(|&(a, b)| a > n || b > n) {
        return Err(bad(format!("index pair ({a}, {b}) outside 0..={n}")));
    }
    let mut rep = Report::new("corr-mc");
    rep.input("model", m.to_string());
    rep.input("N", n);
    rep.input("rho", rho);
    rep.input("index_pair", json!(pair));
    rep.input("all_pairs", all_pairs);
    rep.input("samples", samples);
    rep.input("seed", seed);
    let by_index = pair.is_some() || all_pairs;
    let mut fitted: Vec<CorrEstimate> = Vec::new();
    let mut discarded = 0;
    for &r in &grid {
        let report = corr_mc_report(&m, n, r, samples, seed, by_index)?;
        discarded += report.discarded;
        let chosen: Vec<CorrEstimate> = match (pair, all_pairs) {
            (Some((a, b)), _) => vec![*report.pair(a, b).expect("complete pair table")],
            (None, true) => report.pairs.clone(),
            (None, false) => vec![report.total],
        };
        for e in &chosen {
            let mut row = estimate_row(e, seed);
            if cross {
                let asym = match e.index_pair {
                    None => Some(corr_asymptote_total(&m, n, r)),
                    Some((a, b)) if a.abs_diff(b) == 1 => Some(corr_asymptote_adjacent(&m, n, a.min(b), r)),
                    Some((a, b)) if n == 1 && a == b => Some(corr_1d_extrema_asymptote(&m, 1, r)),
                    _ => None,
                };
                if let Some(v) = asym.transpose()? {
                    row.insert("asymptote".into(), v.into());
                    row.insert("ratio".into(), (e.value / v).into());
                    row.insert("asymptote_method".into(), "closed-form".into());
                }
            }
            rep.rows.push(row);
        }
        if !all_pairs {
            fitted.push(chosen[0]);
        }
    }
    if by_index {
        rep.extra("discarded_draws", json!({"count": discarded, "method": "monte-carlo"}));
    }
    if fitted.len() >= 3 {
        match exponent_fit(&fitted) {
            Ok(f) => rep.extra(
                "exponent_fit",
                json!({"slope": f.slope, "slope_error": f.slope_error, "intercept": f.intercept, "points": f.points, "method": "weighted-least-squares"}),
            ),
            Err(e) => rep.extra("exponent_fit", json!({"available": false, "reason": e.to_string()})),
        }
    }
    Ok(rep)
}

struct SimArgs<'a> {
    model: &'a str,
    n: usize,
    side: usize,
    spacing: f64,
    realizations: usize,
    seed: u64,
    snapshot: Option<&'a std::path::Path>,
    pair_bins: Option<&'a str>,
    index_pair: Option<&'a str>,
    records: bool,
    cross: bool,
}

fn simulate_cmd(a: SimArgs) -> Result<Report> {
    let m = model(a.model)?;
    let pair = a.index_pair.map(parse_pair).transpose()?;
    let edges = a.pair_bins.map(parse_rho_grid).transpose()?;
    if pair.is_some() && edges.is_none() {
        return Err(bad("--index-pair needs --pair-bins"));
    }
    let mut rep = Report::new("simulate");
    rep.input("model", m.to_string());
    rep.input("N", a.n);
    rep.input("side", a.side);
    rep.input("spacing", a.spacing);
    rep.input("realizations", a.realizations);
    rep.input("seed", a.seed);
    rep.input("pair_bins", json!(a.pair_bins));
    rep.input("index_pair", json!(pair));
    let runs = simulate(&m, a.n, a.side, a.spacing, a.realizations, a.seed)?;
    if let Some(path) = a.snapshot {
        let grid = synthesize(&m, a.n, a.side, a.spacing, runs[0].seed)?;
        write_snapshot(&grid, BufWriter::new(File::create(path)?))?;
        rep.extra("snapshot", json!({"path": path.display().to_string(), "realization": 0, "format": "CPLB v1"}));
    }
    for (i, run) in runs.iter().enumerate() {
        if a.records {
            for r in &run.records {
                rep.rows.push(row! {
                    "realization" => i,
                    "location" => r.location,
                    "value" => r.value,
                    "index" => r.index,
                    "hessian_eigs" => r.hessian_eigs,
                    "method" => "monte-carlo",
                });
            }
        } else {
            rep.rows.push(row! {
                "realization" => i,
                "seed" => run.seed,
                "points" => run.records.len(),
                "sample_variance" => run.sample_variance,
                "degenerate" => run.diagnostics.degenerate,
                "newton_failures" => run.diagnostics.newton_failures,
                "method" => "monte-carlo",
            });
        }
    }
    let s = summarize(&runs, a.n, a.side, a.spacing, a.seed);
    rep.extra(
        "density",
        json!({
            "value": s.density, "std_error": s.density_se, "points": s.total_points,
            "degenerate_fraction": s.degenerate_fraction, "coarse_grid_warning": s.coarse_grid_warning,
            "seed": a.seed, "method": "monte-carlo",
        }),
    );
    let all: Vec<CriticalPointRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    match empirical_index_fractions(&all, a.n) {
        Ok(f) => rep.extra(
            "fractions",
            json!({"values": f.fractions, "counts": f.counts, "wilson_lower": f.lower, "wilson_upper": f.upper, "method": "monte-carlo"}),
        ),
        Err(e) => rep.extra("fractions", json!({"available": false, "reason": e.to_string()})),
    }
    if a.cross {
        let expect = mean_count_total(&m, a.n, 1.0)?;
        let reference = index_fractions(a.n)?;
        let z = empirical_index_fractions(&all, a.n).map(|f| f.max_z_score(&reference)).ok();
        rep.extra(
            "cross_check",
            json!({
                "density": expect, "density_relative_gap": (s.density / expect - 1.0).abs(),
                "fractions": reference, "fractions_max_z": z, "method": "quadrature",
            }),
        );
    }
    if let Some(edges) = edges {
        let period = a.side as f64 * a.spacing;
        let sets: Vec<PointSet> = runs.iter().map(|r| PointSet::from_records(&r.records, a.n, period)).collect();
        let pc = empirical_pair_correlation(&sets, &edges, pair)?;
        let bins: Vec<_> = pc
            .bins
            .iter()
            .map(|b| {
                json!({
                    "lo": b.lo, "hi": b.hi, "product_density": b.product_density,
                    "product_density_se": b.product_density_se, "normalized": b.normalized,
                    "normalized_se": b.normalized_se, "pairs": b.pairs, "empty": b.empty,
                })
            })
            .collect();
        rep.extra("pair_correlation", json!({"bin_width": pc.bin_width, "bins": bins, "method": "monte-carlo"}));
    }
    Ok(rep)
}

/// Runs every criterion; failures are counted in the summary.
fn validate(suite: &str, seed: u64) -> Result<Report> {
    let suite = match suite {
        "quick" => Suite::Quick,
        "full" => Suite::Full,
        other => return Err(bad(format!("unknown suite '{other}' (quick or full)"))),
    };
    let mut rep = Report::new("validate");
    rep.input("suite", format!("{suite:?}").to_lowercase());
    rep.input("seed", seed);
    let mut failures = 0;
    for id in 1..=TITLES.len() {
        let o = run_criterion(id, seed, suite);
        // timings vary run to run, so they stay out of the report
        eprintln!("{o}");
        failures += usize::from(!o.passed);
        rep.rows.push(row! {
            "criterion" => o.id,
            "title" => o.title,
            "passed" => o.passed,
            "detail" => o.detail,
            "method" => "acceptance",
        });
    }
    rep.extra("failures", json!({"count": failures, "method": "acceptance"}));
    Ok(rep)
}
