//! Box counting: theoretical counts from the cube ledger, empirical grid
//! counts of point samples, log-log slopes, and the boundedness check of
//! `|C_k| w_k^p Q^{p s_k}`.

use std::collections::HashSet;
use std::io::Write;

use rug::ops::Pow;
use rug::{Float, Integer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{CountLedger, BOUND_PREC};
use crate::params::{tail_non_increasing, ParamSchedule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountSource {
    TheoreticalCubes,
    EmpiricalGrid,
}

impl CountSource {
    pub fn label(&self) -> &'static str {
        match self {
            CountSource::TheoreticalCubes => "theoretical-cubes",
            CountSource::EmpiricalGrid => "empirical-grid",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual of the fit.
    pub residual: f64,
    pub points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxCountReport {
    pub source: CountSource,
    /// Strictly decreasing.
    pub scales: Vec<f64>,
    pub counts: Vec<f64>,
    /// False for scales outside the trust window (extrapolation).
    pub in_window: Vec<bool>,
    pub window: Option<(f64, f64)>,
    /// Requested scales dropped by the minimum-gap guard.
    pub refused: Vec<f64>,
    pub n_points: usize,
    pub min_gap: Option<f64>,
    pub diameter: Option<f64>,
    pub slope: Option<SlopeFit>,
}

impl BoxCountReport {
    /// Columns `epsilon, count, source`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["epsilon", "count", "source"])?;
        for (e, c) in self.scales.iter().zip(&self.counts) {
            wr.write_record([format!("{e:e}"), format!("{c}"), self.source.label().to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoreticalCount {
    pub k: u32,
    pub width_exponent: u64,
    pub width: f64,
    #[serde(with = "crate::hierarchy::int_str")]
    pub count: Integer,
    /// `exact` when counted by the ledger, `bound` when extrapolated by
    /// the level-total bound.
    pub flag: String,
}

/// `(w_k, |C_k|)`, an upper bound on `N_{w_k}(M_1)`. Beyond the ledger's
/// horizon the level-total bound is iterated with full-size nets.
pub fn theoretical_box_count(sched: &ParamSchedule, ledger: &CountLedger, k: u32) -> Result<TheoreticalCount> {
    let (e, w) = sched.width(k)?;
    if let Some(c) = ledger.cubes(k) {
        return Ok(TheoreticalCount { k, width_exponent: e, width: w, count: c.clone(), flag: "exact".into() });
    }
    let h = ledger.horizon();
    let mut c = Float::with_val(BOUND_PREC, ledger.cubes(h).ok_or(Error::Level(h, h))?);
    let q = Float::with_val(BOUND_PREC, sched.q());
    for kk in h + 1..=k {
        let s = sched.s(kk);
        let m = sched.m(kk);
        let e_k = Float::with_val(BOUND_PREC, s).pow((2 * sched.d()) as u32);
        let base = Float::with_val(BOUND_PREC, 4 * s * s) * e_k;
        c = c * (2 * (m + 1)) as u32 * base.pow(m as u32) * q.clone().pow(s as u32);
    }
    let count = c.ceil().to_integer().unwrap_or_default();
    Ok(TheoreticalCount { k, width_exponent: e, width: w, count, flag: "bound".into() })
}

/// Ledger counts `(w_k, |C_k|)` for `k = 1..=K` as a report.
pub fn theoretical_report(sched: &ParamSchedule, ledger: &CountLedger) -> Result<BoxCountReport> {
    let mut scales = Vec::new();
    let mut counts = Vec::new();
    for k in 1..=ledger.horizon() {
        let t = theoretical_box_count(sched, ledger, k)?;
        scales.push(t.width);
        counts.push(t.count.to_f64());
    }
    let n = scales.len();
    let mut r = BoxCountReport {
        source: CountSource::TheoreticalCubes,
        scales,
        counts,
        in_window: vec![true; n],
        window: None,
        refused: Vec::new(),
        n_points: 0,
        min_gap: None,
        diameter: None,
        slope: None,
    };
    r.slope = dimension_slope(&r).ok();
    Ok(r)
}

fn diameter_bbox(points: &[Vec<f64>]) -> f64 {
    let d = points[0].len();
    let mut s = 0.0;
    for i in 0..d {
        let lo = points.iter().map(|p| p[i]).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(|p| p[i]).fold(f64::NEG_INFINITY, f64::max);
        s += (hi - lo) * (hi - lo);
    }
    s.sqrt()
}

fn cell_of(p: &[f64], side: f64) -> Vec<i64> {
    p.iter().map(|x| (x / side).floor() as i64).collect()
}

/// Smallest positive distance between two sample points, found by
/// hashing into cells and widening the cells until a pair shows up.
pub fn min_gap(points: &[Vec<f64>]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let diam = diameter_bbox(points);
    if diam == 0.0 {
        return None;
    }
    let d = points[0].len();
    let mut side = diam / (points.len() as f64).powf(1.0 / d as f64).max(1.0) / 4.0;
    loop {
        let mut cells: std::collections::HashMap<Vec<i64>, Vec<usize>> = std::collections::HashMap::new();
        for (i, p) in points.iter().enumerate() {
            cells.entry(cell_of(p, side)).or_default().push(i);
        }
        let mut best = f64::INFINITY;
        let offsets: Vec<Vec<i64>> = (0..3i64.pow(d as u32))
            .map(|mut c| {
                (0..d)
                    .map(|_| {
                        let o = c % 3 - 1;
                        c /= 3;
                        o
                    })
                    .collect()
            })
            .collect();
        for (cell, members) in &cells {
            for off in &offsets {
                let nb: Vec<i64> = cell.iter().zip(off).map(|(a, b)| a + b).collect();
                if let Some(other) = cells.get(&nb) {
                    for &i in members {
                        for &j in other {
                            if i < j {
                                let dd: f64 =
                                    points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                                if dd > 0.0 && dd < best {
                                    best = dd;
                                }
                            }
                        }
                    }
                }
            }
        }
        if best <= side {
            return Some(best);
        }
        if side > diam {
            return if best.is_finite() { Some(best) } else { None };
        }
        side *= 4.0;
    }
}

/// Occupied cells of the axis-aligned grid of cell half-width `ε`
/// anchored at the origin, for each requested scale. Scales below ten
/// times the minimum gap or above the diameter are refused; with a
/// trust `window` the scales outside it are kept but marked and left
/// out of the slope.
pub fn empirical_box_count(points: &[Vec<f64>], scales: &[f64], window: Option<(f64, f64)>) -> Result<BoxCountReport> {
    if scales.is_empty() {
        return Err(Error::Invalid("empty scale list".into()));
    }
    if points.is_empty() {
        return Err(Error::Invalid("no points".into()));
    }
    if scales.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Invalid("scales must be positive".into()));
    }
    let mut sorted: Vec<f64> = scales.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sorted.dedup();
    let gap = min_gap(points);
    let diam = if points.len() > 1 { Some(diameter_bbox(points)) } else { None };
    let mut kept = Vec::new();
    let mut refused = Vec::new();
    for e in sorted {
        let low_ok = gap.is_none_or(|g| e >= 10.0 * g);
        let high_ok = diam.is_none_or(|dm| dm == 0.0 || e <= dm);
        if low_ok && high_ok {
            kept.push(e);
        } else {
            refused.push(e);
        }
    }
    let counts: Vec<f64> = kept
        .iter()
        .map(|e| {
            let cells: HashSet<Vec<i64>> = points.iter().map(|p| cell_of(p, 2.0 * e)).collect();
            cells.len() as f64
        })
        .collect();
    let in_window = kept
        .iter()
        .map(|e| window.is_none_or(|(lo, hi)| *e >= lo * (1.0 - 1e-12) && *e <= hi * (1.0 + 1e-12)))
        .collect();
    let mut r = BoxCountReport {
        source: CountSource::EmpiricalGrid,
        scales: kept,
        counts,
        in_window,
        window,
        refused,
        n_points: points.len(),
        min_gap: gap,
        diameter: diam,
        slope: None,
    };
    r.slope = dimension_slope(&r).ok();
    Ok(r)
}

/// Least-squares slope of `ln N_ε` against `ln(1/ε)` over in-window
/// scales.
pub fn dimension_slope(r: &BoxCountReport) -> Result<SlopeFit> {
    let pts: Vec<(f64, f64)> = r
        .scales
        .iter()
        .zip(&r.counts)
        .zip(&r.in_window)
        .filter(|(_, w)| **w)
        .map(|((e, c), _)| (-e.ln(), c.ln()))
        .collect();
    fit_line(&pts)
}

pub fn fit_line(pts: &[(f64, f64)]) -> Result<SlopeFit> {
    if pts.len() < 3 {
        return Err(Error::Invalid(format!("slope needs at least 3 scales, got {}", pts.len())));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Invalid("scales coincide".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    Ok(SlopeFit { slope, intercept, residual: (ss / n).sqrt(), points: pts.len() })
}

/// Natural-log factors of the ratio bound between consecutive terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioFactors {
    pub k: u32,
    /// `ln[2(M_k+1)(4 s_k² |E_k|)^{M_k}]` with the net actually used.
    pub combinatorial: f64,
    /// `ln Q^{(p−1)s_k/2}`, the envelope the combinatorial factor must
    /// eventually stay under.
    pub envelope: f64,
    /// `ln Q^{−(p−1)s_k}`.
    pub decay: f64,
    /// `ln Q^{p(s̃_k − s̃_{k−1})}`.
    pub drift: f64,
    pub combinatorial_within_envelope: bool,
    /// `combinatorial + decay + drift`.
    pub ln_ratio_bound: f64,
    /// Observed `ln(term_k / term_{k−1})` of the s̃ variant.
    pub ln_ratio_observed: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClaimReport {
    pub p: f64,
    pub horizon: u32,
    /// `ln(|C_k| w_k^p Q^{p s_k})`.
    pub ln_terms: Vec<f64>,
    /// `ln(|C_k| w_k^p Q^{p s̃_k})`.
    pub ln_terms_tilde: Vec<f64>,
    pub factors: Vec<RatioFactors>,
    pub finite: bool,
    pub verdict: String,
    pub verdict_tilde: String,
    /// Largest term at this horizon; not a supremum.
    pub h_observed: f64,
    pub ln_h_observed: f64,
}

fn ln_int(x: &Integer) -> f64 {
    Float::with_val(BOUND_PREC, x).ln().to_f64()
}

/// The sequence `|C_k| w_k^p Q^{p s_k}` and its `s̃` variant in log
/// form, the per-level ratio factors, and a trend verdict.
pub fn check_claim(p: f64, depth: u32, sched: &ParamSchedule, ledger: &CountLedger) -> Result<ClaimReport> {
    if !(p > 1.0 && p < 2.0) {
        return Err(Error::Invalid(format!("p = {p} outside (1, 2)")));
    }
    if depth == 0 || depth > ledger.horizon() {
        return Err(Error::Level(depth, ledger.horizon()));
    }
    let lq = sched.q().ln();
    let mut ln_terms = Vec::new();
    let mut ln_tilde = Vec::new();
    let mut factors = Vec::new();
    for k in 1..=depth {
        let c = ln_int(ledger.cubes(k).unwrap());
        let e = sched.exponent(k) as f64;
        ln_terms.push(c - p * e * lq + p * sched.s(k) as f64 * lq);
        ln_tilde.push(c - p * e * lq + p * sched.s_tilde(k) as f64 * lq);
        if k >= 2 {
            let s = sched.s(k) as f64;
            let m = sched.m(k) as f64;
            let used = ledger.levels[k as usize - 1].dirs_used as f64;
            let combinatorial = (2.0 * (m + 1.0)).ln() + m * (4.0 * s * s * used).ln();
            let envelope = (p - 1.0) * s / 2.0 * lq;
            let decay = -(p - 1.0) * s * lq;
            let drift = p * (sched.s_tilde(k) as f64 - sched.s_tilde(k - 1) as f64) * lq;
            factors.push(RatioFactors {
                k,
                combinatorial,
                envelope,
                decay,
                drift,
                combinatorial_within_envelope: combinatorial <= envelope,
                ln_ratio_bound: combinatorial + decay + drift,
                ln_ratio_observed: ln_tilde[k as usize - 1] - ln_tilde[k as usize - 2],
            });
        }
    }
    let finite = ln_terms.iter().chain(&ln_tilde).all(|x| x.is_finite());
    let verdict = |xs: &[f64]| {
        if finite && (xs.len() < 2 || tail_non_increasing(xs)) {
            "bounded-trend".to_string()
        } else {
            "increasing".to_string()
        }
    };
    let ln_h = ln_terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(ClaimReport {
        p,
        horizon: depth,
        verdict: verdict(&ln_terms),
        verdict_tilde: verdict(&ln_tilde),
        ln_terms,
        ln_terms_tilde: ln_tilde,
        factors,
        finite,
        h_observed: ln_h.exp(),
        ln_h_observed: ln_h,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        for (dim, want) in [(1.0, 1.0), (2.0, 2.0)] {
            let scales: Vec<f64> = (1..6).map(|i| 0.5f64.powi(i)).collect();
            let counts = scales.iter().map(|e: &f64| (1.0 / e).powf(dim)).collect();
            let r = BoxCountReport {
                source: CountSource::EmpiricalGrid,
                in_window: vec![true; scales.len()],
                scales,
                counts,
                window: None,
                refused: vec![],
                n_points: 0,
                min_gap: None,
                diameter: None,
                slope: None,
            };
            assert!((dimension_slope(&r).unwrap().slope - want).abs() < 1e-12);
        }
    }

    #[test]
    fn single_point_counts_one() {
        let r = empirical_box_count(&[vec![0.3, 0.4]], &[0.1, 0.01, 0.001], None).unwrap();
        assert!(r.counts.iter().all(|c| *c == 1.0));
    }

    #[test]
    fn too_few_scales() {
        let r = empirical_box_count(&[vec![0.3, 0.4]], &[0.1, 0.01], None).unwrap();
        assert!(dimension_slope(&r).is_err());
        assert!(empirical_box_count(&[vec![0.0, 0.0]], &[], None).is_err());
    }

    #[test]
    fn min_gap_exact() {
        let pts = vec![vec![0.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.01], vec![3.0, 3.0]];
        assert!((min_gap(&pts).unwrap() - 0.01).abs() < 1e-15);
    }
}
