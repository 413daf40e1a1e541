//! Constructive approximation lemmas: nearest children, re-categorization,
//! segment extension into `M_{λ+ψ}`, the direction/scale step and the
//! three-vector wedge. Every operation asserts the inequalities it relies
//! on and returns them as [`BoundCheck`]s; a failed inequality is an
//! [`Error::Violation`].

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::geometry::{random_unit, segment_distance, Direction, Point, TOL};
use crate::hierarchy::{Construction, HLine};
use crate::params::ParamSchedule;
use crate::real::Real;
use crate::setmodel::{sample_points, verify_witness, ChainDoc, ChainLink, WitnessChain};

/// `(λ, ψ, η)` with `λ ∈ [0,1)`, `ψ ∈ (0, 1−λ)`, `η ∈ (0,1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub lambda: f64,
    pub psi: f64,
    pub eta: f64,
}

impl LemmaParams {
    pub fn new(lambda: f64, psi: f64, eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Invalid(format!("λ = {lambda} outside [0, 1)")));
        }
        if !(psi > 0.0 && psi < 1.0 - lambda) {
            return Err(Error::Invalid(format!("ψ = {psi} outside (0, 1 − λ)")));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::Invalid(format!("η = {eta} outside (0, 1)")));
        }
        Ok(LemmaParams { lambda, psi, eta })
    }
    fn with_eta(self, eta: f64) -> Self {
        LemmaParams { eta, ..self }
    }
}

impl Default for LemmaParams {
    fn default() -> Self {
        LemmaParams { lambda: 0.2, psi: 0.7, eta: 0.2 }
    }
}

/// Slack split of the wedge: `a + 2b + 3c < 1/2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WedgeConstants {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl WedgeConstants {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0 && a + 2.0 * b + 3.0 * c < 0.5) {
            return Err(Error::Invalid(format!("wedge constants ({a}, {b}, {c}) need a + 2b + 3c < 1/2")));
        }
        Ok(WedgeConstants { a, b, c })
    }
}

impl Default for WedgeConstants {
    fn default() -> Self {
        WedgeConstants { a: 1.0 / 13.0, b: 1.0 / 13.0, c: 1.0 / 13.0 }
    }
}

/// The three per-level conditions of the direction/scale step, in the
/// `Q`-free form obtained from `Q < 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelConditions {
    pub k: u32,
    /// `1/s_k ≤ min(η, ψ)`
    pub separation: bool,
    /// `(M_k + 4)/s_k ≤ ηψ/4`
    pub budget: bool,
    /// `ψ M_k ≥ 6`
    pub classes: bool,
}

impl LevelConditions {
    pub fn holds(&self) -> bool {
        self.separation && self.budget && self.classes
    }
}

pub fn level_conditions(sched: &ParamSchedule, k: u32, psi: f64, eta: f64) -> LevelConditions {
    let s = sched.s(k) as f64;
    let m = sched.m(k) as f64;
    LevelConditions {
        k,
        separation: 1.0 / s <= eta.min(psi),
        budget: (m + 4.0) / s <= eta * psi / 4.0,
        classes: psi * m >= 6.0,
    }
}

/// Smallest `k ∈ [1, K−1]` such that every level in `k+1..=K` passes.
fn first_level(sched: &ParamSchedule, pass: impl Fn(u32) -> bool) -> Option<u32> {
    let big_k = sched.horizon();
    (1..big_k).find(|&k| (k + 1..=big_k).all(&pass))
}

/// Thresholds as levels: `δ0 = ψ w_{k0} / 4` and, when the wedge is
/// feasible, `δ1 = c ψ w_{k*} / 4`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub params: LemmaParams,
    pub constants: WedgeConstants,
    pub crucial_level: u32,
    pub wedge_level: Option<u32>,
    pub log10_delta0: f64,
    pub log10_delta1: Option<f64>,
    pub conditions: Vec<LevelConditions>,
}

impl Thresholds {
    pub fn delta0<R: Real>(&self, con: &Construction<R>) -> R {
        con.width(self.crucial_level) * con.proto().lit(self.params.psi / 4.0)
    }
    pub fn delta1<R: Real>(&self, con: &Construction<R>) -> Option<R> {
        let k = self.wedge_level?;
        Some(con.width(k) * con.proto().lit(self.constants.c * self.params.psi / 4.0))
    }
    /// The part of the verdict that must not depend on `Q`.
    pub fn verdict(&self) -> (u32, Option<u32>) {
        (self.crucial_level, self.wedge_level)
    }
}

/// Selects the thresholds by the level rule. The direction/scale step at
/// `η` runs internally at `2δ` with `η/2`, so its conditions are checked
/// at `η/2`; the wedge runs that step at `aη̂` (`η̂ = cη`) on the rescaled
/// scale and additionally needs `4/(ψ s_k) ≤ bη̂`.
pub fn delta_thresholds(params: LemmaParams, sched: &ParamSchedule) -> Result<Thresholds> {
    let p = LemmaParams::new(params.lambda, params.psi, params.eta)?;
    let wc = WedgeConstants::default();
    let conditions: Vec<_> = (1..=sched.horizon()).map(|k| level_conditions(sched, k, p.psi, p.eta / 2.0)).collect();
    let k0 = first_level(sched, |k| conditions[k as usize - 1].holds()).ok_or_else(|| {
        Error::HorizonInsufficient(format!(
            "no level k < K with all deeper levels meeting the conditions at (ψ, η/2) = ({}, {})",
            p.psi,
            p.eta / 2.0
        ))
    })?;
    let eta_hat = wc.c * p.eta;
    let inner = wc.a * eta_hat / 2.0;
    let k_star = first_level(sched, |k| {
        level_conditions(sched, k, p.psi, inner).holds() && 4.0 / (p.psi * sched.s(k) as f64) <= wc.b * eta_hat
    });
    let lq = sched.q().log10();
    let log10_delta0 = (p.psi / 4.0).log10() - sched.exponent(k0) as f64 * lq;
    let log10_delta1 = k_star.map(|k| (wc.c * p.psi / 4.0).log10() - sched.exponent(k) as f64 * lq);
    Ok(Thresholds {
        params: p,
        constants: wc,
        crucial_level: k0,
        wedge_level: k_star,
        log10_delta0,
        log10_delta1,
        conditions,
    })
}

/// `ψ Q^{t−1} w_n < δ ≤ ψ Q^t w_n` with `1/s_n ≤ ψ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaleContext<R> {
    pub lambda: f64,
    pub psi: f64,
    pub eta: f64,
    pub delta: R,
    pub n: u32,
    pub t: u64,
}

impl<R: Real> ScaleContext<R> {
    /// Finds `n` with `ψ w_n ≤ Qδ < ψ w_{n−1}` and then `t` with
    /// `ψ Q^t w_n ≤ Qδ < ψ Q^{t+1} w_n`.
    pub fn locate(con: &Construction<R>, p: LemmaParams, delta: R) -> Result<Self> {
        let sched = con.sched();
        let proto = con.proto();
        if delta <= proto.zero() {
            return Err(Error::Invalid("δ must be positive".into()));
        }
        let q = proto.lit(sched.q());
        let psi = proto.lit(p.psi);
        let qd = q.clone() * delta.clone();
        if qd >= psi.clone() * con.width(1) {
            return Err(Error::Precondition("δ too large: Qδ ≥ ψ w_1".into()));
        }
        let n = (2..=sched.horizon()).find(|&k| psi.clone() * con.width(k) <= qd).ok_or_else(|| {
            Error::HorizonInsufficient(format!("Qδ < ψ w_K: scale below truncation depth {}", sched.horizon()))
        })?;
        let e_n = sched.exponent(n) as i64;
        let s_n = sched.s(n);
        let level = |t: u64| psi.clone() * con.qpow(t as i64 - e_n);
        let ratio = qd.clone() / level(0);
        let est = (ratio.ln() / q.ln()).to_f64().floor().max(0.0) as u64;
        let mut t = est.min(s_n - 1);
        while t > 0 && level(t) > qd {
            t -= 1;
        }
        while t + 1 < s_n && level(t + 1) <= qd {
            t += 1;
        }
        Ok(ScaleContext { lambda: p.lambda, psi: p.psi, eta: p.eta, delta, n, t })
    }

    pub fn check(&self, con: &Construction<R>) -> Result<()> {
        let sched = con.sched();
        if self.n < 1 || self.n > sched.horizon() {
            return Err(Error::Level(self.n, sched.horizon()));
        }
        let s_n = sched.s(self.n);
        if self.t >= s_n {
            return Err(Error::Precondition(format!("t = {} ≥ s_n = {s_n}", self.t)));
        }
        if 1.0 / s_n as f64 > self.psi {
            return Err(Error::Precondition(format!("1/s_n = {} > ψ", 1.0 / s_n as f64)));
        }
        let e_n = sched.exponent(self.n) as i64;
        let p = con.proto();
        let psi = p.lit(self.psi);
        let lo = psi.clone() * con.qpow(self.t as i64 - 1 - e_n);
        let hi = psi * con.qpow(self.t as i64 - e_n);
        let d = self.delta.clone();
        if lo > d.clone() * p.lit(1.0 + TOL) || d > hi * p.lit(1.0 + TOL) {
            return Err(Error::Precondition(format!(
                "δ outside (ψ Q^(t−1) w_n, ψ Q^t w_n] for n = {}, t = {}",
                self.n, self.t
            )));
        }
        Ok(())
    }
}

/// One asserted inequality, as `value / bound`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub ratio: f64,
    pub ok: bool,
}

impl BoundCheck {
    pub fn slack(&self) -> f64 {
        1.0 - self.ratio
    }
}

pub fn worst_slack(checks: &[BoundCheck]) -> Option<f64> {
    checks.iter().map(BoundCheck::slack).reduce(f64::min)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Basic<R> {
    pub point: Point<R>,
    pub line: HLine<R>,
    pub checks: Vec<BoundCheck>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `i_m ≤ j_{m−1}`: one nearest-child step on the parent.
    Reanchor,
    /// Re-categorize the parent first.
    Recurse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recategorized<R> {
    pub point: Point<R>,
    pub line: HLine<R>,
    /// Outermost class first.
    pub branches: Vec<Branch>,
    pub checks: Vec<BoundCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extension<R> {
    pub point: Point<R>,
    pub line: HLine<R>,
    pub tau_max: R,
    /// `τmax ≤ 0`; nothing is certified.
    pub vacuous: bool,
    /// Chain for `point` in `M_{λ+ψ}`; valid along `point + [−τmax, τmax] f`.
    pub chain: WitnessChain<R>,
    pub checks: Vec<BoundCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Approximation<R> {
    pub point: Point<R>,
    pub dir_index: u64,
    pub dir: Direction<R>,
    pub line: HLine<R>,
    /// Context at the internal scale `2δ`.
    pub ctx: ScaleContext<R>,
    pub base_class: u64,
    pub tau_max: R,
    pub chain: WitnessChain<R>,
    pub checks: Vec<BoundCheck>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Wedge<R> {
    /// `v_1', v_2', v_3'`.
    pub v: [Point<R>; 3],
    /// `x_1', x_3', x_2'` in path order.
    pub vertices: [Point<R>; 3],
    /// Certificates for `x_1'`, the midpoint, `x_3'` of the first segment
    /// and `x_3'`, the midpoint, `x_2'` of the second.
    pub chains: Vec<WitnessChain<R>>,
    /// Largest `‖ṽ_i − v_i‖` introduced to make the inputs nonzero and distinct.
    pub perturbation: f64,
    pub n: u32,
    pub t: u64,
    pub checks: Vec<BoundCheck>,
}

fn lift<R: Real>(proto: &R, p: &Point<R>) -> Point<R> {
    Point(p.0.iter().map(|c| proto.clone() + c.clone()).collect())
}

fn rebase<R: Real>(chain: &WitnessChain<R>, point: Point<R>) -> WitnessChain<R> {
    WitnessChain { point, ..chain.clone() }
}

fn last_dir<R>(l: &HLine<R>) -> u64 {
    l.path.0.last().and_then(|g| g.steps.last()).map(|s| s.dir).expect("line below l_1")
}

/// The lemma engine over one construction.
pub struct Lemmas<'a, R> {
    con: &'a Construction<R>,
    eps: R,
}

impl<'a, R: Real> Lemmas<'a, R> {
    pub fn new(con: &'a Construction<R>) -> Self {
        let p = con.proto();
        let eps = p.lit(2.0).powi(-(p.precision() as i64 - 8));
        Lemmas { con, eps }
    }

    pub fn construction(&self) -> &'a Construction<R> {
        self.con
    }

    fn on_line(&self, p: &Point<R>, l: &HLine<R>) -> bool {
        segment_distance(p, &l.seg) <= self.eps
    }

    fn bound(&self, out: &mut Vec<BoundCheck>, name: &str, value: &R, limit: &R) -> Result<()> {
        let z = limit.zero();
        let ok = *value <= limit.clone() * limit.lit(1.0 + TOL) + self.eps.clone();
        let ratio = if *limit > z {
            (value.clone() / limit.clone()).to_f64()
        } else if *value <= self.eps {
            0.0
        } else {
            f64::INFINITY
        };
        out.push(BoundCheck { name: name.to_string(), ratio, ok });
        if ok {
            Ok(())
        } else {
            Err(Error::Violation(format!("{name}: ratio {ratio:.6}")))
        }
    }

    fn flag(&self, out: &mut Vec<BoundCheck>, name: &str, lhs: f64, rhs: f64) -> Result<()> {
        let ok = lhs <= rhs + 1e-12;
        let ratio = if rhs > 0.0 { lhs / rhs } else { f64::INFINITY };
        out.push(BoundCheck { name: name.to_string(), ratio, ok });
        if ok {
            Ok(())
        } else {
            Err(Error::Violation(format!("{name}: {lhs} > {rhs}")))
        }
    }

    fn certify(&self, out: &mut Vec<BoundCheck>, name: &str, chain: &WitnessChain<R>) -> Result<()> {
        let rep = verify_witness(self.con, chain)?;
        let ratio = rep.levels.iter().map(|l| l.dist_over_w).fold(0.0, f64::max) / chain.lambda.max(f64::MIN_POSITIVE);
        out.push(BoundCheck { name: name.to_string(), ratio, ok: rep.ok });
        match rep.first_failure {
            None => Ok(()),
            Some(k) => Err(Error::Violation(format!("{name}: witness fails at level {k}"))),
        }
    }

    fn require_member(&self, chain: &WitnessChain<R>, lambda: f64) -> Result<Point<R>> {
        if chain.lambda > lambda + 1e-12 {
            return Err(Error::Precondition(format!("chain is for λ = {} > {lambda}", chain.lambda)));
        }
        let rep = verify_witness(self.con, chain)?;
        if let Some(k) = rep.first_failure {
            return Err(Error::Precondition(format!("input chain fails at level {k}")));
        }
        Ok(lift(self.con.proto(), &chain.point))
    }

    /// Nearest member of `E_k` (lowest index on ties).
    pub fn snap(&self, k: u32, e: &Direction<R>) -> (u64, Direction<R>) {
        let i = self.con.net(k).nearest_index(&e.v().to_f64().0);
        (i, self.con.direction(k, i))
    }

    /// Anchors the child `x' + [−1,1]Q^j w_k e` at the grid point of `l`
    /// nearest to `x ∈ l`.
    pub fn nearest_child(&self, l: &HLine<R>, k: u32, dir: u64, j_next: u64, x: &Point<R>) -> Result<Basic<R>> {
        let x = lift(self.con.proto(), x);
        if !self.on_line(&x, l) {
            return Err(Error::Precondition("point is not on the line".into()));
        }
        let grid = self.con.nearest_grid(l, k, j_next, &x)?;
        let line = self.con.child(l, k, j_next, dir, &grid)?;
        let point = line.seg.center.clone();
        let mut checks = Vec::new();
        self.bound(&mut checks, "basic: ‖x'−x‖ ≤ Q^j w_k / s_k", &x.dist(&point), &self.con.spacing(k, j_next))?;
        let again = self.con.lazy_path(&line.path)?;
        if again.id != line.id || again.seg != line.seg {
            return Err(Error::Violation("basic: child not reproduced by its path".into()));
        }
        Ok(Basic { point, line, checks })
    }

    /// Moves `x ∈ l` to a parallel line of the same class whose category
    /// ends in `i_m`.
    pub fn recategorize(&self, l: &HLine<R>, i_m: u64, x: &Point<R>) -> Result<Recategorized<R>> {
        let k = l.tag.level;
        let m = l.path.class();
        if l.created() != k || m == 0 {
            return Err(Error::Precondition("re-categorization needs a line of class ≥ 1 at its own level".into()));
        }
        let cat = l.path.category();
        let j_m = *cat.last().unwrap();
        let s_k = self.con.sched().s(k);
        if i_m <= j_m {
            return Err(Error::Invalid(format!("nothing to do: i_m = {i_m} ≤ j_m = {j_m}")));
        }
        if i_m > s_k {
            return Err(Error::Invalid(format!("i_m = {i_m} > s_k = {s_k}")));
        }
        let x = lift(self.con.proto(), x);
        if !self.on_line(&x, l) {
            return Err(Error::Precondition("point is not on the line".into()));
        }
        let parent = self.con.lazy_path(&l.path.parent().expect("class ≥ 1 has a parent"))?.at_level(k)?;
        let dir = last_dir(l);
        let e = l.seg.dir.v();
        let z = l.seg.center.clone();
        let beta = z.sub(&x).dot(e);
        let mut checks = Vec::new();
        self.bound(&mut checks, "approx: |β| ≤ Q^(j_m) w_k", &beta.abs(), &l.seg.half)?;
        let (anchor, mut branches, inner) = if m == 1 || i_m <= cat[cat.len() - 2] {
            (self.nearest_child(&parent, k, dir, i_m, &z)?, vec![Branch::Reanchor], Vec::new())
        } else {
            let up = self.recategorize(&parent, i_m, &z)?;
            let b = self.nearest_child(&up.line, k, dir, i_m, &up.point)?;
            let mut br = vec![Branch::Recurse];
            br.extend(up.branches);
            (b, br, up.checks)
        };
        checks.extend(inner);
        checks.extend(anchor.checks);
        let point = anchor.point.axpy(&-beta, e);
        let line = anchor.line;
        let spacing = self.con.spacing(k, i_m) * self.con.proto().lit(m as f64);
        self.bound(&mut checks, "approx: ‖x'−x‖ ≤ m Q^(i_m) w_k / s_k", &x.dist(&point), &spacing)?;
        if !self.on_line(&point, &line) || last_dir(&line) != dir || line.path.class() != m {
            return Err(Error::Violation("approx: result not on a parallel line of the same class".into()));
        }
        let new_cat = line.path.category();
        if *new_cat.last().unwrap() != i_m || new_cat.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Violation(format!("approx: bad category {new_cat:?}")));
        }
        branches.truncate(m as usize);
        Ok(Recategorized { point, line, branches, checks })
    }

    /// Extends through `y ∈ l` in direction `f`, certifying
    /// `y' + [−τmax, τmax] f ⊆ M_{λ+ψ}` with
    /// `τmax = (Q − Q/(ψ s_n))δ − ‖y − x‖`.
    pub fn extend_segment(
        &self,
        chain: &WitnessChain<R>,
        ctx: &ScaleContext<R>,
        f: u64,
        y: &Point<R>,
        l: &HLine<R>,
    ) -> Result<Extension<R>> {
        ctx.check(self.con)?;
        let x = self.require_member(chain, ctx.lambda)?;
        let (n, t) = (ctx.n, ctx.t);
        if chain.depth < n {
            return Err(Error::Precondition(format!("chain depth {} < n = {n}", chain.depth)));
        }
        let sched = self.con.sched();
        let r = l.path.class();
        if l.created() != n || l.tag.level != n || r == 0 {
            return Err(Error::Precondition(format!("line must have class ≥ 1 at level {n}")));
        }
        if *l.path.category().last().unwrap() != t + 1 {
            return Err(Error::Precondition(format!("category must end in t + 1 = {}", t + 1)));
        }
        let lifted = ctx.lambda + ctx.psi;
        let cap = lifted * sched.m(n) as f64 - 2.0;
        if r as f64 > cap + 1e-12 {
            return Err(Error::Precondition(format!("class budget: r = {r} > (λ+ψ)M_n − 2 = {cap}")));
        }
        let b = self.nearest_child(l, n, f, t + 1, y)?;
        let mut checks = b.checks;
        let p = self.con.proto();
        let q = p.lit(sched.q());
        let psi_s = p.lit(ctx.psi * sched.s(n) as f64);
        let e_n = sched.exponent(n) as i64;
        let moved = b.point.dist(&lift(p, y));
        let half_spacing = self.con.qpow(t as i64 - e_n) / p.lit(sched.s(n) as f64);
        self.bound(&mut checks, "c1: ‖y'−y‖ ≤ Q^t w_n / s_n", &moved, &half_spacing)?;
        self.bound(&mut checks, "c1: ‖y'−y‖ ≤ Qδ/(ψ s_n)", &moved, &(q.clone() * ctx.delta.clone() / psi_s.clone()))?;
        let tau_max = (q.clone() - q / psi_s) * ctx.delta.clone() - lift(p, y).dist(&x);
        let mut levels: Vec<ChainLink> = chain.levels[..n as usize - 1].to_vec();
        levels.push(ChainLink { class: r + 1, path: b.line.path.clone() });
        for _ in n..chain.depth {
            levels.push(ChainLink { class: 0, path: b.line.path.clone() });
        }
        let new_chain = WitnessChain { point: b.point.clone(), lambda: lifted, depth: chain.depth, levels };
        let vacuous = tau_max <= p.zero();
        if !vacuous {
            self.bound(&mut checks, "c1: τmax ≤ Q^(t+1) w_n", &tau_max, &b.line.seg.half)?;
            let e = b.line.seg.dir.v();
            for (name, s) in [("c1: y' − τmax f ∈ M", -1.0), ("c1: y' ∈ M", 0.0), ("c1: y' + τmax f ∈ M", 1.0)] {
                let pt = b.point.axpy(&(tau_max.clone() * p.lit(s)), e);
                self.certify(&mut checks, name, &rebase(&new_chain, pt))?;
            }
        }
        Ok(Extension { point: b.point, line: b.line, tau_max, vacuous, chain: new_chain, checks })
    }

    /// Finds `x'`, `e' ∈ E_n` and `l'` with `‖x'−x‖ ≤ ηδ`, `‖e'−e‖ ≤ η`
    /// and `x' + [−1,1]δe' ⊆ M_{λ+ψ} ∩ l'`, by running the construction at
    /// scale `2δ` with `η/2`.
    pub fn approximate_at_scale(
        &self,
        chain: &WitnessChain<R>,
        e: &Direction<R>,
        delta: &R,
        params: LemmaParams,
    ) -> Result<Approximation<R>> {
        let th = delta_thresholds(params, self.con.sched())?;
        let p = self.con.proto();
        let delta = p.clone() + delta.clone();
        if delta >= th.delta0(self.con) {
            return Err(Error::Precondition(format!(
                "δ ≥ δ0 = ψ w_{} / 4",
                th.crucial_level
            )));
        }
        let x = self.require_member(chain, params.lambda)?;
        let e = Direction::normalized(&lift(p, e.v())).ok_or_else(|| Error::Invalid("zero direction".into()))?;
        let sched = self.con.sched();
        let inner = params.with_eta(params.eta / 2.0);
        let dd = delta.clone() * p.lit(2.0);
        let ctx = ScaleContext::locate(self.con, inner, dd.clone())?;
        let (n, t) = (ctx.n, ctx.t);
        let mut checks = Vec::new();
        let cond = level_conditions(sched, n, params.psi, inner.eta);
        if !cond.holds() {
            return Err(Error::Violation(format!("crucial: level {n} fails the threshold conditions")));
        }
        let s_n = sched.s(n) as f64;
        let q = p.lit(sched.q());
        let psi_s = p.lit(params.psi * s_n);
        let (e_idx, e_new) = self.snap(n, &e);
        let e_err = e_new.v().dist(e.v());
        self.bound(&mut checks, "crucial: ‖e'−e‖ ≤ 1/s_n", &e_err, &p.lit(1.0 / s_n))?;

        let link = &chain.levels[n as usize - 1];
        let m_n = link.class;
        let l_n = self.con.lazy_path(&link.path)?.at_level(n)?;
        let a = l_n.seg.half.clone();
        let u = l_n.seg.axial(&x).max_of(-a.clone()).min_of(a);
        let z = l_n.seg.at(&u);
        let alpha = x.dist(&z);
        let w_n = self.con.width(n);
        self.bound(&mut checks, "crucial: α ≤ λ w_n", &alpha, &(w_n.clone() * p.lit(params.lambda)))?;
        let g = Direction::normalized(&x.sub(&z)).unwrap_or_else(|| e.clone());
        let (g_idx, g_new) = self.snap(n, &g);
        self.bound(&mut checks, "crucial: ‖g'−g‖ ≤ 1/s_n", &g_new.v().dist(g.v()), &p.lit(1.0 / s_n))?;
        let b = self.nearest_child(&l_n, n, g_idx, 1, &z)?;
        checks.extend(b.checks);
        let x3 = b.point.axpy(&alpha, g_new.v());
        if !self.on_line(&x3, &b.line) {
            return Err(Error::Violation("crucial: x''' not on l'''".into()));
        }
        let q2d = q.clone() * q.clone() * dd.clone() / psi_s.clone();
        let d3 = x3.dist(&x);
        self.bound(&mut checks, "crucial: ‖x'''−x‖ ≤ 2Q w_n / s_n", &d3, &(q.clone() * w_n.clone() * p.lit(2.0 / s_n)))?;
        self.bound(&mut checks, "crucial: ‖x'''−x‖ ≤ 2Q²δ/(ψ s_n)", &d3, &(q2d.clone() * p.lit(2.0)))?;
        let lifted = params.lambda + params.psi;
        self.flag(&mut checks, "crucial: m_n + 2 ≤ (λ+ψ)M_n − 4", (m_n + 2) as f64, lifted * sched.m(n) as f64 - 4.0)?;

        let (y, l) = if t == 0 {
            (x3.clone(), b.line)
        } else {
            let r = self.recategorize(&b.line, t + 1, &x3)?;
            checks.extend(r.checks);
            let lim = self.con.spacing(n, t + 1) * p.lit((1 + m_n) as f64);
            self.bound(&mut checks, "crucial: ‖x''−x'''‖ ≤ (1+m_n) Q^(t+1) w_n / s_n", &r.point.dist(&x3), &lim)?;
            (r.point, r.line)
        };
        let c1 = self.extend_segment(chain, &ctx, e_idx, &y, &l)?;
        checks.extend(c1.checks);
        let xp = c1.point;
        self.bound(&mut checks, "crucial: ‖x'−x'''‖ ≤ (m_n+2)Q²δ/(ψ s_n)", &xp.dist(&x3), &(q2d.clone() * p.lit((m_n + 2) as f64)))?;
        let moved = xp.dist(&x);
        self.bound(&mut checks, "crucial: ‖x'−x‖ ≤ (m_n+4)Q²δ/(ψ s_n)", &moved, &(q2d * p.lit((m_n + 4) as f64)))?;
        self.bound(&mut checks, "crucial: ‖x'−x‖ ≤ ηδ", &moved, &(delta.clone() * p.lit(params.eta)))?;
        self.bound(&mut checks, "crucial: ‖e'−e‖ ≤ η", &e_err, &p.lit(params.eta))?;
        if c1.vacuous {
            return Err(Error::Violation("crucial: extension is vacuous".into()));
        }
        self.bound(&mut checks, "crucial: δ ≤ τmax", &delta, &c1.tau_max)?;
        for (name, s) in [("crucial: x' − δe' ∈ M", -1.0), ("crucial: x' + δe' ∈ M", 1.0)] {
            let pt = xp.axpy(&(delta.clone() * p.lit(s)), e_new.v());
            if !self.on_line(&pt, &c1.line) {
                return Err(Error::Violation(format!("{name}: endpoint leaves l'")));
            }
            self.certify(&mut checks, name, &rebase(&c1.chain, pt))?;
        }
        Ok(Approximation {
            point: xp,
            dir_index: e_idx,
            dir: e_new,
            line: c1.line,
            ctx,
            base_class: m_n,
            tau_max: c1.tau_max,
            chain: c1.chain,
            checks,
        })
    }

    /// Finds `v_i'` with `‖v_i'−v_i‖ ≤ η` and
    /// `[x+δv_1', x+δv_3'] ∪ [x+δv_3', x+δv_2'] ⊆ M_{λ+ψ}`.
    pub fn wedge(&self, chain: &WitnessChain<R>, delta: &R, v: &[Vec<f64>; 3], params: LemmaParams) -> Result<Wedge<R>> {
        let th = delta_thresholds(params, self.con.sched())?;
        let wc = th.constants;
        let p = self.con.proto();
        let delta = p.clone() + delta.clone();
        let d1 = th.delta1(self.con).ok_or_else(|| {
            Error::HorizonInsufficient("no level meets the wedge conditions within the horizon".into())
        })?;
        if delta >= d1 || delta <= p.zero() {
            return Err(Error::Precondition(format!("δ outside (0, δ1), δ1 = cψ w_{} / 4", th.wedge_level.unwrap())));
        }
        let d = self.con.d();
        for vi in v {
            if vi.len() != d || vi.iter().map(|c| c * c).sum::<f64>().sqrt() > 1.0 + 1e-12 {
                return Err(Error::Invalid("v_i must lie in the closed unit ball".into()));
            }
        }
        let x = self.require_member(chain, params.lambda)?;
        let eta_hat = wc.c * params.eta;
        let (vh, perturbation) = reduce(v, wc.c, eta_hat * 2f64.powi(-16));
        let vh: Vec<Point<R>> = vh.iter().map(|c| Point(c.clone()).lift(p)).collect();
        let dh = delta.clone() / p.lit(wc.c);
        let inner = params.with_eta(wc.a * eta_hat);
        let e1 = Direction::normalized(&vh[0]).expect("reduced vectors are nonzero");
        let cr = self.approximate_at_scale(chain, &e1, &dh, inner)?;
        let mut checks = cr.checks;
        let (n, t) = (cr.ctx.n, cr.ctx.t);
        let s_n = self.con.sched().s(n) as f64;
        let b_eta = p.lit(wc.b * eta_hat);
        self.bound(&mut checks, "c3: 1/s_n ≤ bη", &p.lit(1.0 / s_n), &b_eta)?;

        let x1 = cr.point.axpy(&(dh.clone() * vh[0].norm()), cr.dir.v());
        self.bound(&mut checks, "c3: ‖x_1−x‖ ≤ (c+aη)δ", &x1.dist(&x), &(dh.clone() * p.lit(wc.c + wc.a * eta_hat)))?;
        let v31 = vh[2].sub(&vh[0]);
        let e3 = Direction::normalized(&v31).expect("reduced vectors are distinct");
        let (e3_idx, e3n) = self.snap(n, &e3);
        self.bound(&mut checks, "c3: ‖e_3'−e_3‖ ≤ 1/s_n", &e3n.v().dist(e3.v()), &p.lit(1.0 / s_n))?;
        let ca = self.extend_segment(chain, &cr.ctx, e3_idx, &x1, &cr.line)?;
        checks.extend(ca.checks.clone());
        let x1p = ca.point.clone();
        self.bound(&mut checks, "c3: ‖x_1'−x_1‖ ≤ bηδ", &x1p.dist(&x1), &(b_eta.clone() * dh.clone()))?;
        let half = dh.clone() * p.lit(0.5);
        self.bound(&mut checks, "c3: δ/2 ≤ τmax (first)", &half, &ca.tau_max)?;

        let x3 = x1p.axpy(&(dh.clone() * v31.norm()), e3n.v());
        self.bound(
            &mut checks,
            "c3: ‖x_3−x‖ ≤ (aη+bη+3c)δ",
            &x3.dist(&x),
            &(dh.clone() * p.lit((wc.a + wc.b) * eta_hat + 3.0 * wc.c)),
        )?;
        let v23 = vh[1].sub(&vh[2]);
        let e2 = Direction::normalized(&v23).expect("reduced vectors are distinct");
        let (e2_idx, e2n) = self.snap(n, &e2);
        self.bound(&mut checks, "c3: ‖e_2'−e_2‖ ≤ 1/s_n", &e2n.v().dist(e2.v()), &p.lit(1.0 / s_n))?;
        let cb = self.extend_segment(chain, &cr.ctx, e2_idx, &x3, &ca.line)?;
        checks.extend(cb.checks.clone());
        let x3p = cb.point.clone();
        self.bound(&mut checks, "c3: ‖x_3'−x_3‖ ≤ bηδ", &x3p.dist(&x3), &(b_eta * dh.clone()))?;
        self.bound(&mut checks, "c3: δ/2 ≤ τmax (second)", &half, &cb.tau_max)?;
        let x2p = x3p.axpy(&(dh.clone() * v23.norm()), e2n.v());

        self.bound(&mut checks, "c3: ‖x_3'−x_1'‖ ≤ (bη+2c)δ", &x3p.dist(&x1p), &(dh.clone() * p.lit(wc.b * eta_hat + 2.0 * wc.c)))?;
        self.bound(&mut checks, "c3: ‖x_3'−x_1'‖ ≤ δ/2", &x3p.dist(&x1p), &half)?;
        self.bound(&mut checks, "c3: ‖x_2'−x_3'‖ ≤ 2cδ", &x2p.dist(&x3p), &(dh.clone() * p.lit(2.0 * wc.c)))?;

        let (a, b, c) = (wc.a, wc.b, wc.c);
        let chained = [a + b + a * c, a + 2.0 * b + a * c + 4.0 * b * c, a + 2.0 * b + a * c + 2.0 * b * c];
        let verts = [x1p.clone(), x2p.clone(), x3p.clone()];
        let mut vp = Vec::new();
        for i in 0..3 {
            let hat = verts[i].sub(&x).scale(&(p.one() / dh.clone()));
            let name = format!("c3: ‖v̂_{}'−v̂_{}‖ ≤ chained bound", i + 1, i + 1);
            self.bound(&mut checks, &name, &hat.dist(&vh[i]), &p.lit(chained[i] * eta_hat))?;
            let vi = verts[i].sub(&x).scale(&(p.one() / delta.clone()));
            let name = format!("c3: ‖v_{}'−v_{}‖ ≤ η", i + 1, i + 1);
            self.bound(&mut checks, &name, &vi.dist(&Point(v[i].clone()).lift(p)), &p.lit(params.eta))?;
            vp.push(vi);
        }
        let mid13 = x1p.add(&x3p).scale(&p.lit(0.5));
        let mid32 = x3p.add(&x2p).scale(&p.lit(0.5));
        let mut chains = Vec::new();
        for (name, base, pt) in [
            ("c3: x_1' ∈ M", &ca.chain, x1p.clone()),
            ("c3: (x_1'+x_3')/2 ∈ M", &ca.chain, mid13),
            ("c3: x_3' ∈ M (first)", &ca.chain, x3p.clone()),
            ("c3: x_3' ∈ M (second)", &cb.chain, x3p.clone()),
            ("c3: (x_3'+x_2')/2 ∈ M", &cb.chain, mid32),
            ("c3: x_2' ∈ M", &cb.chain, x2p.clone()),
        ] {
            let ch = rebase(base, pt);
            self.certify(&mut checks, name, &ch)?;
            chains.push(ch);
        }
        let [v1, v2, v3]: [Point<R>; 3] = vp.try_into().unwrap();
        Ok(Wedge {
            v: [v1, v2, v3],
            vertices: [x1p, x3p, x2p],
            chains,
            perturbation,
            n,
            t,
            checks,
        })
    }
}

/// Scales by `c` and nudges vectors shorter than `rho` or within `rho` of
/// an earlier one, keeping all norms ≤ `c`. Returns the vectors and the
/// largest displacement in the original units.
fn reduce(v: &[Vec<f64>; 3], c: f64, rho: f64) -> ([Vec<f64>; 3], f64) {
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scaled: Vec<Vec<f64>> = v.iter().map(|vi| vi.iter().map(|x| x * c).collect()).collect();
    let mut out = scaled.clone();
    for i in 0..3 {
        let mut tries = 0u32;
        while norm(&out[i]) < rho || (0..i).any(|j| dist(&out[i], &out[j]) < rho) {
            let ang = 2.399_963_229_728_653 * (3 * tries + i as u32 + 1) as f64;
            out[i][0] += rho * ang.cos();
            out[i][1] += rho * ang.sin();
            let nv = norm(&out[i]);
            if nv > c {
                for x in out[i].iter_mut() {
                    *x *= c / nv;
                }
            }
            tries += 1;
        }
    }
    let moved = (0..3).map(|i| dist(&out[i], &scaled[i]) / c).fold(0.0, f64::max);
    let [a, b, cc]: [Vec<f64>; 3] = out.try_into().unwrap();
    ([a, b, cc], moved)
}

/// Which operation an audit exercises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LemmaKind {
    Basic,
    Approx,
    C1,
    Crucial,
    C3,
}

impl LemmaKind {
    pub const ALL: [LemmaKind; 5] = [LemmaKind::Basic, LemmaKind::Approx, LemmaKind::C1, LemmaKind::Crucial, LemmaKind::C3];
    pub fn name(&self) -> &'static str {
        match self {
            LemmaKind::Basic => "basic",
            LemmaKind::Approx => "approx",
            LemmaKind::C1 => "c1",
            LemmaKind::Crucial => "crucial",
            LemmaKind::C3 => "c3",
        }
    }
}

impl fmt::Display for LemmaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LemmaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LemmaKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown lemma {s:?}; expected basic, approx, c1, crucial or c3")))
    }
}

/// Everything needed to re-check a wedge without rerunning it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WedgeTranscript {
    pub x: Vec<String>,
    pub delta: String,
    pub v: [Vec<f64>; 3],
    pub v_prime: [Vec<String>; 3],
    pub v_prime_approx: [Vec<f64>; 3],
    pub perturbation: f64,
    /// Same order as [`Wedge::chains`].
    pub chains: Vec<ChainDoc>,
}

impl WedgeTranscript {
    pub fn new<R: Real>(x: &Point<R>, delta: &R, v: &[Vec<f64>; 3], w: &Wedge<R>) -> Self {
        let rep = |p: &Point<R>| p.0.iter().map(|c| c.repr()).collect::<Vec<_>>();
        WedgeTranscript {
            x: rep(x),
            delta: delta.repr(),
            v: v.clone(),
            v_prime: [rep(&w.v[0]), rep(&w.v[1]), rep(&w.v[2])],
            v_prime_approx: [w.v[0].to_f64().0, w.v[1].to_f64().0, w.v[2].to_f64().0],
            perturbation: w.perturbation,
            chains: w.chains.iter().map(|c| c.to_doc()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub op: LemmaKind,
    pub trial: u64,
    pub seed: u64,
    pub pass: bool,
    pub vacuous: bool,
    pub error: Option<String>,
    pub n: Option<u32>,
    pub t: Option<u64>,
    /// `log_Q δ`.
    pub log_q_delta: Option<f64>,
    pub worst_slack: Option<f64>,
    pub checks: Vec<BoundCheck>,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub op: LemmaKind,
    pub params: LemmaParams,
    pub seed: u64,
    pub requested: u64,
    /// Non-vacuous trials.
    pub counted: u64,
    pub passes: u64,
    pub vacuous: u64,
    pub worst_slack: Option<f64>,
    pub records: Vec<TrialRecord>,
}

impl AuditReport {
    pub fn pass(&self) -> bool {
        self.counted == self.requested && self.passes == self.counted
    }
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
    /// Columns `trial, pass, worst_slack, log_q_delta, n, t`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["trial", "pass", "worst_slack", "log_q_delta", "n", "t"])?;
        let opt = |x: Option<String>| x.unwrap_or_default();
        for r in &self.records {
            c.write_record([
                r.trial.to_string(),
                r.pass.to_string(),
                opt(r.worst_slack.map(|x| format!("{x:.6}"))),
                opt(r.log_q_delta.map(|x| format!("{x:.6}"))),
                opt(r.n.map(|x| x.to_string())),
                opt(r.t.map(|x| x.to_string())),
            ])?;
        }
        c.flush()?;
        Ok(())
    }
}

/// Per-trial seed derived from the master seed (SplitMix64 finalizer).
pub fn trial_seed(master: u64, trial: u64) -> u64 {
    let mut z = master ^ trial.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A random point of `M_λ` at full depth, with its chain.
pub fn sample_chain<R: Real>(con: &Construction<R>, lambda: f64, seed: u64) -> Result<WitnessChain<R>> {
    let mut s = sample_points(con, lambda, con.sched().horizon(), 1, seed)?;
    Ok(s.pop().expect("one sample").1)
}

fn random_on<R: Real, G: Rng>(rng: &mut G, l: &HLine<R>) -> Point<R> {
    let tau = l.seg.half.clone() * l.seg.half.lit(rng.gen_range(-1.0..=1.0));
    l.seg.at(&tau)
}

pub fn random_ball<G: Rng>(rng: &mut G, d: usize) -> Vec<f64> {
    let u = random_unit(rng, d);
    let r = rng.gen::<f64>().powf(1.0 / d as f64);
    u.into_iter().map(|c| c * r).collect()
}

/// `δ = ψ Q^{t−1+u} w_n / 2 · factor` for random `n ∈ [from, K]`, `t`, `u`,
/// redrawn until below `limit`.
fn random_scale<R: Real, G: Rng>(
    con: &Construction<R>,
    rng: &mut G,
    psi: f64,
    from: u32,
    factor: f64,
    limit: &R,
) -> Result<R> {
    let sched = con.sched();
    let lo = from.max(2);
    if lo > sched.horizon() {
        return Err(Error::HorizonInsufficient("no admissible level for δ".into()));
    }
    for _ in 0..1000 {
        let n = rng.gen_range(lo..=sched.horizon());
        let t = rng.gen_range(0..sched.s(n));
        let u: f64 = 1.0 - rng.gen::<f64>();
        let p = con.proto();
        let delta = con.qpow(t as i64 - 1 - sched.exponent(n) as i64) * p.lit(psi * sched.q().powf(u) / 2.0 * factor);
        if delta < *limit {
            return Ok(delta);
        }
    }
    Err(Error::Budget(1000))
}

fn log_q<R: Real>(con: &Construction<R>, x: &R) -> f64 {
    (x.ln() / con.proto().lit(con.sched().q()).ln()).to_f64()
}

struct Outcome {
    vacuous: bool,
    n: Option<u32>,
    t: Option<u64>,
    log_q_delta: Option<f64>,
    checks: Vec<BoundCheck>,
    detail: serde_json::Value,
}

fn run_trial<R: Real>(eng: &Lemmas<'_, R>, kind: LemmaKind, params: LemmaParams, th: &Thresholds, seed: u64) -> Result<Outcome> {
    let con = eng.construction();
    let sched = con.sched();
    let big_k = sched.horizon();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = sample_chain(con, params.lambda, rng.gen())?;
    let p = con.proto();
    let plain = |checks, detail| Outcome { vacuous: false, n: None, t: None, log_q_delta: None, checks, detail };
    match kind {
        LemmaKind::Basic => {
            let k = rng.gen_range(2..=big_k);
            let mut l = con.lazy_path(&chain.levels[k as usize - 1].path)?.at_level(k)?;
            for _ in 0..rng.gen_range(0..=2) {
                let st = con.random_step(&mut rng, &l, k)?;
                l = con.child(&l, k, st.j, st.dir, &st.grid)?;
            }
            let class = if l.created() == k { l.path.class() } else { 0 };
            let max_j = if class == 0 { sched.s(k) } else { *l.path.category().last().unwrap() };
            let js = con.options().j_policy.choices(sched.s(k), max_j);
            let j = js[rng.gen_range(0..js.len())];
            let dir = rng.gen_range(0..con.dir_count(k));
            let x = random_on(&mut rng, &l);
            let b = eng.nearest_child(&l, k, dir, j, &x)?;
            Ok(plain(b.checks, json!({ "k": k, "class": class, "j_next": j, "dir": dir })))
        }
        LemmaKind::Approx => {
            let k = rng.gen_range(2..=big_k);
            let base = con.lazy_path(&chain.levels[k as usize - 1].path)?.at_level(k)?;
            let s_k = sched.s(k);
            let mut tries = 0;
            let l = loop {
                tries += 1;
                if tries > 100 {
                    return Err(Error::Budget(tries));
                }
                let mut l = base.clone();
                for _ in 0..rng.gen_range(1..=3) {
                    let st = con.random_step(&mut rng, &l, k)?;
                    l = con.child(&l, k, st.j, st.dir, &st.grid)?;
                }
                if *l.path.category().last().unwrap() < s_k {
                    break l;
                }
            };
            let j_m = *l.path.category().last().unwrap();
            let i_m = rng.gen_range(j_m + 1..=s_k);
            let x = random_on(&mut rng, &l);
            let r = eng.recategorize(&l, i_m, &x)?;
            Ok(plain(
                r.checks,
                json!({ "k": k, "class": l.path.class(), "category": l.path.category(), "i_m": i_m, "branches": r.branches }),
            ))
        }
        LemmaKind::C1 => {
            let n = rng.gen_range(2..=big_k);
            let x = lift(p, &chain.point);
            let link = &chain.levels[n as usize - 1];
            let l_n = con.lazy_path(&link.path)?.at_level(n)?;
            let max_t = if link.class == 0 { sched.s(n) - 1 } else { *l_n.path.category().last().unwrap() - 1 };
            let t = rng.gen_range(0..=max_t);
            let u: f64 = 1.0 - rng.gen::<f64>();
            let e_n = sched.exponent(n) as i64;
            let delta = con.qpow(t as i64 - 1 - e_n) * p.lit(params.psi * sched.q().powf(u));
            let ctx = ScaleContext { lambda: params.lambda, psi: params.psi, eta: params.eta, delta: delta.clone(), n, t };
            let a = l_n.seg.half.clone();
            let z = l_n.seg.at(&l_n.seg.axial(&x).max_of(-a.clone()).min_of(a));
            let g = rng.gen_range(0..con.dir_count(n));
            let seed_line = eng.nearest_child(&l_n, n, g, t + 1, &z)?;
            let f = rng.gen_range(0..con.dir_count(n));
            let ext = eng.extend_segment(&chain, &ctx, f, &seed_line.point, &seed_line.line)?;
            let tau_over_delta = (ext.tau_max.clone() / delta.clone()).to_f64();
            Ok(Outcome {
                vacuous: ext.vacuous,
                n: Some(n),
                t: Some(t),
                log_q_delta: Some(log_q(con, &delta)),
                checks: ext.checks,
                detail: json!({ "base_class": link.class, "tau_max_over_delta": tau_over_delta }),
            })
        }
        LemmaKind::Crucial => {
            let delta = random_scale(con, &mut rng, params.psi, th.crucial_level + 1, 1.0, &th.delta0(con))?;
            let e = Direction(Point(random_unit(&mut rng, con.d())).lift(p));
            let a = eng.approximate_at_scale(&chain, &e, &delta, params)?;
            Ok(Outcome {
                vacuous: false,
                n: Some(a.ctx.n),
                t: Some(a.ctx.t),
                log_q_delta: Some(log_q(con, &delta)),
                checks: a.checks,
                detail: json!({ "base_class": a.base_class, "dir_index": a.dir_index }),
            })
        }
        LemmaKind::C3 => {
            let k_star = th.wedge_level.ok_or_else(|| Error::HorizonInsufficient("wedge infeasible".into()))?;
            let d1 = th.delta1(con).unwrap();
            let c = th.constants.c;
            let delta = random_scale(con, &mut rng, params.psi, k_star + 1, c, &d1)?;
            let v = [random_ball(&mut rng, con.d()), random_ball(&mut rng, con.d()), random_ball(&mut rng, con.d())];
            let w = eng.wedge(&chain, &delta, &v, params)?;
            let tr = WedgeTranscript::new(&chain.point, &delta, &v, &w);
            Ok(Outcome {
                vacuous: false,
                n: Some(w.n),
                t: Some(w.t),
                log_q_delta: Some(log_q(con, &delta)),
                checks: w.checks,
                detail: serde_json::to_value(tr)?,
            })
        }
    }
}

/// Runs `trials` randomized trials of one operation. For `c1`, vacuous
/// draws are recorded but do not count; drawing stops after `trials`
/// non-vacuous ones (or `4·trials + 16` draws).
pub fn audit<R: Real>(con: &Construction<R>, kind: LemmaKind, params: LemmaParams, trials: u64, seed: u64) -> Result<AuditReport> {
    let params = LemmaParams::new(params.lambda, params.psi, params.eta)?;
    let th = delta_thresholds(params, con.sched())?;
    let eng = Lemmas::new(con);
    let mut records = Vec::new();
    let (mut counted, mut passes, mut vacuous) = (0, 0, 0);
    let mut i = 0;
    while counted < trials && i < 4 * trials + 16 {
        let s = trial_seed(seed, i);
        let rec = match run_trial(&eng, kind, params, &th, s) {
            Ok(o) => TrialRecord {
                op: kind,
                trial: i,
                seed: s,
                pass: true,
                vacuous: o.vacuous,
                error: None,
                n: o.n,
                t: o.t,
                log_q_delta: o.log_q_delta,
                worst_slack: worst_slack(&o.checks),
                checks: o.checks,
                detail: o.detail,
            },
            Err(e) => TrialRecord {
                op: kind,
                trial: i,
                seed: s,
                pass: false,
                vacuous: false,
                error: Some(e.to_string()),
                n: None,
                t: None,
                log_q_delta: None,
                worst_slack: None,
                checks: Vec::new(),
                detail: serde_json::Value::Null,
            },
        };
        if rec.vacuous {
            vacuous += 1;
        } else {
            counted += 1;
            if rec.pass {
                passes += 1;
            }
        }
        records.push(rec);
        i += 1;
    }
    let worst = records.iter().filter_map(|r| r.worst_slack).reduce(f64::min);
    Ok(AuditReport { op: kind, params, seed, requested: trials, counted, passes, vacuous, worst_slack: worst, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::ConstructionOptions;
    use rug::Integer;

    #[test]
    fn threshold_examples() {
        let s = ParamSchedule::lemma_feasible();
        let th = delta_thresholds(LemmaParams::default(), &s).unwrap();
        assert_eq!(th.verdict(), (1, Some(1)));
        let c = level_conditions(&s, 2, 0.7, 0.1);
        assert!(c.classes);
        let toy = ParamSchedule::toy();
        let e = delta_thresholds(LemmaParams::new(0.2, 0.5, 0.2).unwrap(), &toy).unwrap_err();
        assert!(matches!(e, Error::HorizonInsufficient(_)));
    }

    #[test]
    fn nearest_child_on_grid_point_is_identity() {
        let con = Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap();
        let eng = Lemmas::new(&con);
        let root = con.root();
        let s = con.sched().s(2);
        let g = con.child(&root, 2, s, 0, &Integer::from(3)).unwrap();
        let b = eng.nearest_child(&root, 2, 1, s, &g.seg.center).unwrap();
        assert_eq!(b.point, g.seg.center);
        assert_eq!(b.checks[0].ratio, 0.0);
    }

    #[test]
    fn midpoint_tie_goes_low() {
        let con = Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap();
        let eng = Lemmas::new(&con);
        let root = con.root();
        let s = con.sched().s(2);
        let h = con.spacing(2, s);
        let x = root.seg.at(&(-0.5 + 2.5 * h));
        let b = eng.nearest_child(&root, 2, 0, s, &x).unwrap();
        assert_eq!(b.line.path.0[0].steps[0].grid, Integer::from(2));
        assert!((b.checks[0].ratio - 0.5).abs() < 1e-9);
    }

    #[test]
    fn recategorize_nothing_to_do() {
        let con = Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap();
        let eng = Lemmas::new(&con);
        let s = con.sched().s(2);
        let l = con.child(&con.root(), 2, s - 1, 0, &Integer::from(1)).unwrap();
        let e = eng.recategorize(&l, s - 1, &l.seg.center).unwrap_err();
        assert!(matches!(e, Error::Invalid(_)));
    }

    #[test]
    fn reduce_separates_coincident_vectors() {
        let v = [vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]];
        let (r, moved) = reduce(&v, 0.1, 1e-6);
        for i in 0..3 {
            let n = (r[i][0] * r[i][0] + r[i][1] * r[i][1]).sqrt();
            assert!(n >= 1e-6 && n <= 0.1);
        }
        assert!(moved > 0.0 && moved < 1e-4);
    }

    #[test]
    fn lemma_kind_parses() {
        assert_eq!("c3".parse::<LemmaKind>().unwrap(), LemmaKind::C3);
        assert!("c2".parse::<LemmaKind>().is_err());
    }
}
