//! Diagnostics: Monte-Carlo porosity scans against a finite sample of the
//! truncated set, and the randomized audit of the differentiability
//! criterion's hypothesis with independent transcript re-checks.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, TOL};
use crate::hierarchy::Construction;
use crate::lemmas::{audit, random_ball, trial_seed, AuditReport, LemmaKind, LemmaParams, WedgeTranscript};
use crate::real::Real;
use crate::setmodel::{verify_witness, WitnessChain};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PorosityEstimate {
    pub x: Vec<f64>,
    pub radii: Vec<f64>,
    /// Largest `dist(y, sample)/‖y−x‖` found over `y ∈ B(x, r)`.
    pub per_radius: Vec<f64>,
    pub verdict: f64,
    pub trials: u64,
    pub sample_size: usize,
    pub depth: u32,
    pub label: String,
}

/// Uniform cell hash for nearest-point queries at one cell size.
struct CellIndex<'a> {
    pts: &'a [Vec<f64>],
    h: f64,
    cells: HashMap<Vec<i64>, Vec<usize>>,
}

impl<'a> CellIndex<'a> {
    fn new(pts: &'a [Vec<f64>], h: f64) -> Self {
        let mut cells: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            cells.entry(Self::key(p, h)).or_default().push(i);
        }
        CellIndex { pts, h, cells }
    }
    fn key(p: &[f64], h: f64) -> Vec<i64> {
        p.iter().map(|c| (c / h).floor() as i64).collect()
    }
    /// Distance from `y` to the nearest point, searched in Chebyshev
    /// rings of cells; `cap` is a known upper bound.
    fn nearest(&self, y: &[f64], cap: f64) -> f64 {
        let d = y.len();
        let base = Self::key(y, self.h);
        let mut best = cap;
        let mut ring: i64 = 0;
        loop {
            if (ring as f64 - 1.0) * self.h >= best {
                return best;
            }
            let mut off = vec![-ring; d];
            loop {
                if off.iter().any(|o| o.abs() == ring) {
                    let key: Vec<i64> = base.iter().zip(&off).map(|(b, o)| b + o).collect();
                    if let Some(ids) = self.cells.get(&key) {
                        for &i in ids {
                            let q = &self.pts[i];
                            let dist = q.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                            best = best.min(dist);
                        }
                    }
                }
                let mut i = 0;
                while i < d {
                    off[i] += 1;
                    if off[i] <= ring {
                        break;
                    }
                    off[i] = -ring;
                    i += 1;
                }
                if i == d {
                    break;
                }
            }
            ring += 1;
        }
    }
}

/// Heuristic lower estimate of the porosity constant at `x` relative to
/// the finite `sample` of a depth-`depth` truncation: for each radius,
/// the largest `dist(y, sample)/‖y−x‖` over `trials` probes `y ∈ B(x, r)`.
/// Probe `i` at radius index `r` depends only on `(seed, r, i)`, so
/// more trials never lower a reported ratio.
pub fn porosity_scan(
    sample: &[Vec<f64>],
    x: &[f64],
    radii: &[f64],
    window: (f64, f64),
    depth: u32,
    trials: u64,
    seed: u64,
) -> Result<PorosityEstimate> {
    if radii.is_empty() || trials == 0 {
        return Err(Error::Invalid("need at least one radius and one trial".into()));
    }
    let (lo, hi) = window;
    for &r in radii {
        if !(r >= lo * (1.0 - TOL) && r <= hi * (1.0 + TOL)) {
            return Err(Error::Invalid(format!("radius {r} outside the trust window [{lo}, {hi}]")));
        }
    }
    let d = x.len();
    let near_x = sample
        .iter()
        .map(|p| p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    if !sample.is_empty() && near_x > TOL {
        return Err(Error::Precondition("x must belong to the sample".into()));
    }
    let mut per_radius = Vec::with_capacity(radii.len());
    for (ri, &r) in radii.iter().enumerate() {
        let idx = CellIndex::new(sample, r / 8.0);
        let mut best: f64 = 0.0;
        for i in 0..trials {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed ^ (ri as u64).wrapping_mul(0x2545_f491_4f6c_dd1d), i));
            let b = random_ball(&mut rng, d);
            let y: Vec<f64> = x.iter().zip(&b).map(|(a, c)| a + r * c).collect();
            let yx = b.iter().map(|c| c * c).sum::<f64>().sqrt() * r;
            if yx <= 0.0 {
                continue;
            }
            let rho = idx.nearest(&y, yx);
            best = best.max((rho / yx).min(1.0));
        }
        per_radius.push(best);
    }
    let verdict = per_radius.iter().cloned().fold(0.0, f64::max);
    Ok(PorosityEstimate {
        x: x.to_vec(),
        radii: radii.to_vec(),
        per_radius,
        verdict,
        trials,
        sample_size: sample.len(),
        depth,
        label: "heuristic lower bound relative to a finite sample of the truncation".into(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recheck {
    pub ok: bool,
    pub reason: Option<String>,
    /// Largest `‖v_i' − v_i‖ / η`.
    pub worst_ratio: f64,
}

/// Re-checks a wedge transcript from scratch: the six certified points
/// must equal `x + δv'` combinations, their chains must verify for
/// `λ + ψ`, and `‖v_i' − v_i‖ ≤ η`.
pub fn recheck_wedge<R: Real>(con: &Construction<R>, params: LemmaParams, tr: &WedgeTranscript) -> Result<Recheck> {
    let p = con.proto();
    let parse = |s: &String| p.parse_like(s).ok_or_else(|| Error::Invalid(format!("bad number {s}")));
    let pt = |v: &[String]| -> Result<Point<R>> { Ok(Point(v.iter().map(parse).collect::<Result<Vec<R>>>()?)) };
    let x = pt(&tr.x)?;
    let delta = parse(&tr.delta)?;
    let vp = [pt(&tr.v_prime[0])?, pt(&tr.v_prime[1])?, pt(&tr.v_prime[2])?];
    let fail = |reason: String, worst| Ok(Recheck { ok: false, reason: Some(reason), worst_ratio: worst });
    let mut worst: f64 = 0.0;
    let eta = p.lit(params.eta);
    for i in 0..3 {
        let dv = vp[i].dist(&Point(tr.v[i].clone()).lift(p));
        worst = worst.max((dv.clone() / eta.clone()).to_f64());
        if dv > eta.clone() * p.lit(1.0 + TOL) {
            return fail(format!("‖v_{}' − v_{}‖ > η", i + 1, i + 1), worst);
        }
    }
    let at = |v: &Point<R>| x.axpy(&delta, v);
    let (x1, x2, x3) = (at(&vp[0]), at(&vp[1]), at(&vp[2]));
    let half = p.lit(0.5);
    let expected = [
        x1.clone(),
        x1.add(&x3).scale(&half),
        x3.clone(),
        x3.clone(),
        x3.add(&x2).scale(&half),
        x2,
    ];
    if tr.chains.len() != expected.len() {
        return fail(format!("expected {} chains, found {}", expected.len(), tr.chains.len()), worst);
    }
    let lifted = params.lambda + params.psi;
    let tol = delta.clone() * p.lit(TOL);
    for (i, (doc, e)) in tr.chains.iter().zip(&expected).enumerate() {
        let ch = WitnessChain::from_doc(doc, p)?;
        if ch.lambda > lifted + 1e-12 {
            return fail(format!("chain {i} claims λ = {}", ch.lambda), worst);
        }
        if ch.point.dist(e) > tol {
            return fail(format!("chain {i} certifies a different point"), worst);
        }
        let rep = verify_witness(con, &ch)?;
        if let Some(k) = rep.first_failure {
            return fail(format!("chain {i} fails at level {k}"), worst);
        }
    }
    Ok(Recheck { ok: true, reason: None, worst_ratio: worst })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub audit: AuditReport,
    pub rechecked: u64,
    pub recheck_failures: Vec<(u64, String)>,
    pub pass: bool,
}

/// Wedge trials at `(λ, ψ, η)`, each pass re-checked from its transcript.
pub fn uds_hypothesis_trial<R: Real>(
    con: &Construction<R>,
    params: LemmaParams,
    trials: u64,
    seed: u64,
) -> Result<HypothesisReport> {
    let rep = audit(con, LemmaKind::C3, params, trials, seed)?;
    let mut rechecked = 0;
    let mut failures = Vec::new();
    for r in rep.records.iter().filter(|r| r.pass) {
        let tr: WedgeTranscript = serde_json::from_value(r.detail.clone())?;
        rechecked += 1;
        let c = recheck_wedge(con, rep.params, &tr)?;
        if !c.ok {
            failures.push((r.trial, c.reason.unwrap_or_default()));
        }
    }
    let pass = rep.pass() && failures.is_empty();
    Ok(HypothesisReport { audit: rep, rechecked, recheck_failures: failures, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lone_point_is_fully_porous() {
        let x = vec![0.1, 0.2];
        let e = porosity_scan(&[x.clone()], &x, &[0.01, 0.1], (0.001, 1.0), 1, 50, 3).unwrap();
        assert!(e.per_radius.iter().all(|r| (*r - 1.0).abs() < 1e-12));
    }

    #[test]
    fn segment_is_porous_and_more_probes_never_lower() {
        let seg: Vec<Vec<f64>> = (0..=2000).map(|i| vec![-0.5 + i as f64 / 2000.0, 0.0]).collect();
        let x = vec![0.0, 0.0];
        let a = porosity_scan(&seg, &x, &[0.05, 0.1], (0.01, 1.0), 1, 100, 1).unwrap();
        let b = porosity_scan(&seg, &x, &[0.05, 0.1], (0.01, 1.0), 1, 400, 1).unwrap();
        assert!(a.per_radius.iter().all(|r| *r > 0.9));
        assert!(a.per_radius.iter().zip(&b.per_radius).all(|(s, t)| t >= s));
    }

    #[test]
    fn window_is_enforced() {
        let x = vec![0.0, 0.0];
        assert!(porosity_scan(&[x.clone()], &x, &[2.0], (0.01, 1.0), 1, 10, 0).is_err());
    }

    #[test]
    fn cell_index_matches_brute_force() {
        let pts: Vec<Vec<f64>> = (0..300).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()]).collect();
        let idx = CellIndex::new(&pts, 0.05);
        for q in [[0.3, 0.1], [1.5, -2.0], [0.0, 0.0]] {
            let brute = pts.iter().map(|p| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).fold(f64::INFINITY, f64::min);
            assert!((idx.nearest(&q, 10.0) - brute).abs() < 1e-15);
        }
    }
}
