//! Truncated sets `M_λ`: witness chains, their verification, a budgeted
//! membership search over the lazy tree, and random sampling.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{grid_offset, random_unit, segment_distance, Point, TOL};
use crate::hierarchy::{Construction, HLine, LinePath};
use crate::real::Real;

/// Line designated at one level together with its class there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainLink {
    pub class: u64,
    pub path: LinePath,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WitnessChain<R> {
    pub point: Point<R>,
    pub lambda: f64,
    pub depth: u32,
    /// Entry `k − 1` is the link for level `k`.
    pub levels: Vec<ChainLink>,
}

/// Serialized form; coordinates use the lossless [`Real::repr`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDoc {
    pub point: Vec<String>,
    pub lambda: f64,
    pub depth: u32,
    pub levels: Vec<ChainLink>,
}

impl<R: Real> WitnessChain<R> {
    /// `l_1` as class 0 at every level.
    pub fn on_root(point: Point<R>, lambda: f64, depth: u32) -> Self {
        let levels = (0..depth).map(|_| ChainLink { class: 0, path: LinePath::root() }).collect();
        WitnessChain { point, lambda, depth, levels }
    }

    /// Persists the line designated at level `n` as class 0 at every
    /// deeper level up to `depth`.
    pub fn with_tail(mut self, n: u32, depth: u32) -> Self {
        let path = self.levels[n as usize - 1].path.clone();
        self.levels.truncate(n as usize);
        for _ in n..depth {
            self.levels.push(ChainLink { class: 0, path: path.clone() });
        }
        self.depth = depth;
        self
    }

    pub fn to_doc(&self) -> ChainDoc {
        ChainDoc {
            point: self.point.0.iter().map(|x| x.repr()).collect(),
            lambda: self.lambda,
            depth: self.depth,
            levels: self.levels.clone(),
        }
    }
    pub fn from_doc(doc: &ChainDoc, proto: &R) -> Result<Self> {
        let point = doc
            .point
            .iter()
            .map(|s| proto.parse_like(s).ok_or_else(|| Error::Invalid(format!("bad coordinate {s}"))))
            .collect::<Result<Vec<R>>>()?;
        Ok(WitnessChain { point: Point(point), lambda: doc.lambda, depth: doc.depth, levels: doc.levels.clone() })
    }
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_doc())?)
    }
    pub fn from_json(s: &str, proto: &R) -> Result<Self> {
        Self::from_doc(&serde_json::from_str(s)?, proto)
    }
}

impl<R: Real> Serialize for WitnessChain<R> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_doc().serialize(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelCheck {
    pub k: u32,
    pub class: u64,
    pub class_ok: bool,
    pub structure_ok: bool,
    /// `dist(x, line) / w_k`.
    pub dist_over_w: f64,
    pub dist_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub ok: bool,
    pub first_failure: Option<u32>,
    pub levels: Vec<LevelCheck>,
}

/// Largest class usable at level `k` for parameter `λ`.
pub fn class_cap(m_k: u64, lambda: f64) -> u64 {
    (lambda * m_k as f64 + 1e-12).floor() as u64
}

/// Checks `m_k ≤ λ M_k`, that the designated line really is a class-`m_k`
/// line of level `k`, and `dist(x, line) ≤ λ w_k` (up to `1e−12 w_k`).
pub fn verify_witness<R: Real>(con: &Construction<R>, chain: &WitnessChain<R>) -> Result<WitnessReport> {
    let sched = con.sched();
    if chain.depth == 0 || chain.depth > sched.horizon() {
        return Err(Error::Level(chain.depth, sched.horizon()));
    }
    if chain.levels.len() != chain.depth as usize {
        return Err(Error::Invalid(format!(
            "chain has {} levels for depth {}",
            chain.levels.len(),
            chain.depth
        )));
    }
    if chain.point.dim() != con.d() || !(0.0..=1.0).contains(&chain.lambda) {
        return Err(Error::Invalid("chain point dimension or λ out of range".into()));
    }
    let proto = con.proto();
    let x = Point(chain.point.0.iter().map(|c| proto.clone() + c.clone()).collect());
    let mut cache: HashMap<LinePath, Option<HLine<R>>> = HashMap::new();
    let mut levels = Vec::new();
    let mut first = None;
    for (i, link) in chain.levels.iter().enumerate() {
        let k = i as u32 + 1;
        let class_ok = (link.class as f64) <= chain.lambda * sched.m(k) as f64 + 1e-12;
        let created = link.path.created();
        let structure_ok = if link.class == 0 {
            created < k || (k == 1 && link.path.0.is_empty())
        } else {
            created == k && link.path.class() == link.class
        };
        let line = cache.entry(link.path.clone()).or_insert_with(|| con.lazy_path(&link.path).ok());
        let (ratio, dist_ok) = match line {
            Some(l) => {
                let w = con.width(k);
                let d = segment_distance(&x, &l.seg);
                let lim = w.clone() * w.lit(chain.lambda + TOL);
                ((d.clone() / w).to_f64(), d <= lim)
            }
            None => (f64::INFINITY, false),
        };
        let ok = class_ok && structure_ok && dist_ok;
        if !ok && first.is_none() {
            first = Some(k);
        }
        levels.push(LevelCheck { k, class: link.class, class_ok, structure_ok, dist_over_w: ratio, dist_ok });
    }
    Ok(WitnessReport { ok: first.is_none(), first_failure: first, levels })
}

#[derive(Clone, Debug, PartialEq)]
pub enum Membership<R> {
    Member(WitnessChain<R>),
    /// The search at this level exhausted the (pruned) tree.
    NotMember { level: u32 },
    /// Budget ran out; nothing is known.
    Unknown { expansions: u64 },
}

struct Search<'a, R> {
    con: &'a Construction<R>,
    x: &'a Point<R>,
    k: u32,
    cap_k: u64,
    radius: R,
    budget: u64,
    used: u64,
}

impl<R: Real> Search<'_, R> {
    fn cap(&self, level: u32) -> u64 {
        if level == self.k {
            self.cap_k
        } else {
            self.con.sched().m(level)
        }
    }

    /// Bound on the distance from a line to any line of its subtree that
    /// can still matter at the target level.
    fn reach(&self, created: u32, class: u64, last_j: Option<u64>) -> R {
        let con = self.con;
        let mut r = con.proto().zero();
        if let Some(j) = last_j {
            let more = self.cap(created).saturating_sub(class);
            r = r + con.qpow(j as i64 - con.sched().exponent(created) as i64) * con.proto().lit(more as f64);
        }
        for k2 in created + 1..=self.k {
            r = r + con.width(k2 - 1) * con.proto().lit(self.cap(k2) as f64);
        }
        r
    }

    fn candidate(&self, l: &HLine<R>) -> Option<u64> {
        let c = l.created();
        let class = if c < self.k { 0 } else { l.path.class() };
        if c > self.k || class > self.cap_k {
            return None;
        }
        if segment_distance(self.x, &l.seg) <= self.radius.clone() * self.radius.lit(1.0 + TOL) {
            Some(class)
        } else {
            None
        }
    }

    /// `Ok(Some(link))` when found, `Ok(None)` when exhausted.
    fn run(&mut self) -> Result<Option<ChainLink>> {
        let mut stack = vec![self.con.root()];
        while let Some(l) = stack.pop() {
            if let Some(class) = self.candidate(&l) {
                return Ok(Some(ChainLink { class, path: l.path.clone() }));
            }
            let created = l.created();
            let class = l.path.class();
            let mut levels = Vec::new();
            if created >= 2 && class < self.cap(created) {
                levels.push(created);
            }
            levels.extend(created + 1..=self.k);
            for k2 in levels {
                if k2 == self.k && self.cap_k == 0 {
                    continue;
                }
                let (m2, max_j) = if k2 == created {
                    (class + 1, *l.path.category().last().unwrap())
                } else {
                    (1, self.con.sched().s(k2))
                };
                for j in self.con.options().j_policy.choices(self.con.sched().s(k2), max_j) {
                    let half = self.con.qpow(self.con.child_len(k2, j).exp);
                    let bound = half + self.reach(k2, m2, Some(j)) + self.radius.clone();
                    self.push_window(&l, k2, j, &bound, &mut stack)?;
                    if self.used > self.budget {
                        return Err(Error::Budget(self.used));
                    }
                }
            }
        }
        Ok(None)
    }

    fn push_window(&mut self, l: &HLine<R>, k2: u32, j: u64, bound: &R, stack: &mut Vec<HLine<R>>) -> Result<()> {
        let con = self.con;
        let n = con.grid_len(l.len, k2, j)?;
        let h = con.spacing(k2, j);
        let len = con.len_value(l.len);
        let a = l.seg.axial(self.x) + l.seg.half.clone();
        // children whose centers sit within `bound` of x along l
        let perp2 = {
            let d = l.seg.center.axpy(&(a.clone() - l.seg.half.clone()), l.seg.dir.v()).dist(self.x);
            d.clone() * d
        };
        let b2 = bound.clone() * bound.clone();
        if perp2 > b2 {
            return Ok(());
        }
        let along = (b2 - perp2).sqrt();
        let last = Integer::from(&n - 1u32);
        let lo = ((a.clone() - along.clone()) / h.clone()).floor_int().max(Integer::new());
        let hi = ((a.clone() + along.clone()) / h.clone()).floor_int() + 1u32;
        let hi = if hi > last { last.clone() } else { hi };
        let mut idx: Vec<Integer> = Vec::new();
        let mut i = lo;
        while i <= hi {
            idx.push(i.clone());
            i += 1u32;
            if idx.len() as u64 > self.budget {
                break;
            }
        }
        if idx.last() != Some(&last) && (len.clone() - a.clone()).abs() <= along {
            idx.push(last.clone());
        }
        for g in idx {
            let off = grid_offset(&g, &n, &h, &len);
            if (off - a.clone()).abs() > along {
                continue;
            }
            for dir in 0..con.dir_count(k2) {
                self.used += 1;
                if self.used > self.budget {
                    return Ok(());
                }
                stack.push(con.child(l, k2, j, dir, &g)?);
            }
        }
        Ok(())
    }
}

/// Budgeted search for a witness chain of `x ∈ M_λ` at depth `depth`.
/// Levels are independent, so each is searched separately; the answer
/// distinguishes exhausted levels from exhausted budgets.
pub fn membership<R: Real>(
    con: &Construction<R>,
    x: &Point<R>,
    lambda: f64,
    depth: u32,
    budget: u64,
) -> Result<Membership<R>> {
    if depth == 0 || depth > con.sched().horizon() {
        return Err(Error::Level(depth, con.sched().horizon()));
    }
    let mut levels = Vec::new();
    let mut used = 0;
    for k in 1..=depth {
        let w = con.width(k);
        let mut s = Search {
            con,
            x,
            k,
            cap_k: class_cap(con.sched().m(k), lambda),
            radius: w.clone() * w.lit(lambda),
            budget: budget - used.min(budget),
            used: 0,
        };
        let r = s.run();
        used += s.used;
        match r {
            Ok(Some(link)) => levels.push(link),
            Ok(None) => return Ok(Membership::NotMember { level: k }),
            Err(Error::Budget(_)) => return Ok(Membership::Unknown { expansions: used }),
            Err(e) => return Err(e),
        }
    }
    let chain = WitnessChain { point: x.clone(), lambda, depth, levels };
    let rep = verify_witness(con, &chain)?;
    if !rep.ok {
        return Err(Error::Violation(format!("search produced a chain failing at level {:?}", rep.first_failure)));
    }
    Ok(Membership::Member(chain))
}

/// One random descent: a random class `m_k ≤ λM_k` and random steps at
/// every level, then a uniform point on the deepest line, optionally
/// displaced uniformly within a ball of radius `offset · w_depth`.
fn descend<R: Real, G: Rng>(
    con: &Construction<R>,
    rng: &mut G,
    lambda: f64,
    depth: u32,
    offset: f64,
) -> Result<WitnessChain<R>> {
    let mut line = con.root();
    let mut levels = vec![ChainLink { class: 0, path: LinePath::root() }];
    for k in 2..=depth {
        let m = rng.gen_range(0..=class_cap(con.sched().m(k), lambda));
        for _ in 0..m {
            let st = con.random_step(rng, &line, k)?;
            line = con.child(&line, k, st.j, st.dir, &st.grid)?;
        }
        levels.push(ChainLink { class: m, path: line.path.clone() });
    }
    let p = con.proto();
    let tau = line.seg.half.clone() * p.lit(rng.gen_range(-1.0..=1.0));
    let mut x = line.seg.at(&tau);
    if offset > 0.0 {
        let d = con.d();
        let u = random_unit(rng, d);
        let r = offset * rng.gen::<f64>().powf(1.0 / d as f64);
        let w = con.width(depth);
        let v = Point(u.iter().map(|c| w.clone() * p.lit(c * r)).collect());
        x = x.add(&v);
    }
    Ok(WitnessChain { point: x, lambda, depth, levels })
}

/// `n` verified chains of points of `M_λ` at depth `depth`, each uniform
/// along its deepest designated line; descents whose point leaves a
/// tube of an earlier level are rejected and redrawn.
pub fn sample_points<R: Real>(
    con: &Construction<R>,
    lambda: f64,
    depth: u32,
    n: usize,
    seed: u64,
) -> Result<Vec<(Point<R>, WitnessChain<R>)>> {
    sample_inner(con, lambda, depth, n, seed, 0.0)
}

/// Points of the depth-`depth` truncation of `M_1` including the tube
/// thickness: each descent point is displaced within a ball of radius
/// `w_depth` before verification.
pub fn sample_truncation<R: Real>(
    con: &Construction<R>,
    depth: u32,
    n: usize,
    seed: u64,
) -> Result<Vec<(Point<R>, WitnessChain<R>)>> {
    sample_inner(con, 1.0, depth, n, seed, 1.0)
}

fn sample_inner<R: Real>(
    con: &Construction<R>,
    lambda: f64,
    depth: u32,
    n: usize,
    seed: u64,
    offset: f64,
) -> Result<Vec<(Point<R>, WitnessChain<R>)>> {
    if n == 0 {
        return Err(Error::Invalid("sample size must be positive".into()));
    }
    if depth == 0 || depth > con.sched().horizon() {
        return Err(Error::Level(depth, con.sched().horizon()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let max_tries = 1000 * n as u64 + 1000;
    let mut tries = 0;
    while out.len() < n {
        tries += 1;
        if tries > max_tries {
            return Err(Error::Budget(tries));
        }
        let chain = descend(con, &mut rng, lambda, depth, offset * lambda)?;
        if verify_witness(con, &chain)?.ok {
            out.push((chain.point.clone(), chain));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::ConstructionOptions;
    use crate::params::ParamSchedule;

    fn toy() -> Construction<f64> {
        Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap()
    }

    #[test]
    fn root_chain_holds_for_every_lambda() {
        let c = toy();
        for lam in [0.0, 0.3, 1.0] {
            let ch = WitnessChain::on_root(Point(vec![0.2, 0.0]), lam, 3);
            assert!(verify_witness(&c, &ch).unwrap().ok);
        }
    }

    #[test]
    fn class_budget_is_enforced() {
        let c = toy();
        let mut l = c.root();
        for j in [5, 5, 5] {
            l = c.child(&l, 2, j, 0, &Integer::from(3)).unwrap();
        }
        let x = l.seg.center.clone();
        let mut ch = WitnessChain::on_root(x, 0.5, 2);
        ch.levels[1] = ChainLink { class: 3, path: l.path.clone() };
        let rep = verify_witness(&c, &ch).unwrap();
        assert_eq!(rep.first_failure, Some(2));
        assert!(!rep.levels[1].class_ok);
    }

    #[test]
    fn membership_examples() {
        let c = toy();
        let mid = Point(vec![0.0, 0.0]);
        assert!(matches!(membership(&c, &mid, 1.0, 3, 10).unwrap(), Membership::Member(_)));
        let w1 = c.width(1);
        let far = Point(vec![0.0, 2.0 * w1]);
        assert_eq!(membership(&c, &far, 1.0, 3, 1_000_000).unwrap(), Membership::NotMember { level: 1 });
    }

    #[test]
    fn chain_json_roundtrip() {
        let c = toy();
        let s = sample_points(&c, 1.0, 3, 5, 9).unwrap();
        for (_, ch) in s {
            let back = WitnessChain::from_json(&ch.to_json().unwrap(), &0.0).unwrap();
            assert_eq!(back, ch);
        }
    }
}
