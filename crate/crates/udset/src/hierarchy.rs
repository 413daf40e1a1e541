//! The level/class/category tree of segments. Lines are addressed by
//! their construction path, so any single line can be materialized
//! without its siblings; small schedules can also be enumerated in full,
//! and every schedule gets an exact grouped count ledger.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Mutex;

use rand::Rng;
use rug::integer::Order;
use rug::ops::Pow;
use rug::{Float, Integer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    build_direction_net, cover_count, cube_contains, cube_cover, grid_offset, random_unit,
    separated_points, Direction, DirectionNet, Point, Segment,
};
use crate::params::{ParamSchedule, ScheduleDoc};
use crate::real::{snapped_floor, Hp, Real};

/// Mantissa bits for ledger bounds.
pub const BOUND_PREC: u32 = 256;

/// Serde adapter writing big integers as decimal strings.
pub mod int_str {
    use rug::Integer;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Integer, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }
    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Integer, D::Error> {
        let s = String::deserialize(d)?;
        Integer::from_str_radix(&s, 10).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeTag {
    pub level: u32,
    pub class: u64,
    pub category: Vec<u64>,
}

/// One refinement `R_l(j, e)` choice: length exponent `j`, net index of
/// `e`, and index of the anchor on the parent's separated grid.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassStep {
    pub j: u64,
    pub dir: u64,
    #[serde(with = "int_str")]
    pub grid: Integer,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LevelSteps {
    pub level: u32,
    pub steps: Vec<ClassStep>,
}

/// Root-to-node directives. Levels strictly increase; the steps at one
/// level form a class chain started from a line of an earlier level.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinePath(pub Vec<LevelSteps>);

impl LinePath {
    pub fn root() -> Self {
        LinePath(Vec::new())
    }
    /// Level at which the line was created; `l_1` counts as level 1.
    pub fn created(&self) -> u32 {
        self.0.last().map_or(1, |l| l.level)
    }
    pub fn class(&self) -> u64 {
        self.0.last().map_or(0, |l| l.steps.len() as u64)
    }
    pub fn category(&self) -> Vec<u64> {
        self.0.last().map_or(Vec::new(), |l| l.steps.iter().map(|s| s.j).collect())
    }
    pub fn steps(&self) -> usize {
        self.0.iter().map(|l| l.steps.len()).sum()
    }
    pub fn parent(&self) -> Option<LinePath> {
        let mut p = self.clone();
        let last = p.0.last_mut()?;
        last.steps.pop();
        if last.steps.is_empty() {
            p.0.pop();
        }
        Some(p)
    }
    pub fn push(&self, level: u32, step: ClassStep) -> LinePath {
        let mut p = self.clone();
        match p.0.last_mut() {
            Some(last) if last.level == level => last.steps.push(step),
            _ => p.0.push(LevelSteps { level, steps: vec![step] }),
        }
        p
    }
}

/// Exact segment length `coef · Q^exp`: `l_1` is `(1, 0)`, a line of
/// category `(…, j)` at level `k` is `(2, j − E_k)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExactLen {
    pub coef: u8,
    pub exp: i64,
}

impl ExactLen {
    pub const UNIT: ExactLen = ExactLen { coef: 1, exp: 0 };
}

/// A line of the construction viewed at level `tag.level`.
#[derive(Clone, Debug, PartialEq)]
pub struct HLine<R> {
    pub tag: NodeTag,
    pub seg: Segment<R>,
    pub id: u64,
    pub parent: Option<u64>,
    pub path: LinePath,
    pub len: ExactLen,
}

impl<R: Real> HLine<R> {
    pub fn created(&self) -> u32 {
        self.path.created()
    }
    /// The same segment retagged as a class-0 line of a later level.
    pub fn at_level(&self, k: u32) -> Result<HLine<R>> {
        if k < self.created() {
            return Err(Error::Invalid(format!(
                "line created at level {} has no view at level {k}",
                self.created()
            )));
        }
        if k == self.created() {
            return Ok(self.clone());
        }
        Ok(HLine { tag: NodeTag { level: k, class: 0, category: Vec::new() }, ..self.clone() })
    }
}

fn fnv(bytes: &[u8], mut h: u64) -> u64 {
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

pub fn root_id() -> u64 {
    fnv(b"l1", FNV_OFFSET)
}

/// Content hash of one construction step.
pub fn node_id(parent: u64, k: u32, m: u64, j: u64, dir: u64, grid: &Integer) -> u64 {
    let mut h = fnv(&parent.to_le_bytes(), FNV_OFFSET);
    h = fnv(&k.to_le_bytes(), h);
    h = fnv(&m.to_le_bytes(), h);
    h = fnv(&j.to_le_bytes(), h);
    h = fnv(&dir.to_le_bytes(), h);
    fnv(grid.to_string().as_bytes(), h)
}

/// Which length exponents `j` class advancement may use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JPolicy {
    All,
    /// Only `j ∈ {s_k − 1, s_k}`.
    TopTwo,
}

impl JPolicy {
    pub fn allows(&self, j: u64, s: u64) -> bool {
        match self {
            JPolicy::All => (1..=s).contains(&j),
            JPolicy::TopTwo => j + 1 >= s && j <= s,
        }
    }
    /// Allowed `j ≤ max_j`, descending.
    pub fn choices(&self, s: u64, max_j: u64) -> Vec<u64> {
        (1..=s.min(max_j)).rev().filter(|j| self.allows(*j, s)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstructionOptions {
    /// Use only the first `n` members of every direction net.
    pub dir_limit: Option<u64>,
    pub j_policy: JPolicy,
    pub net_seed: u64,
}

impl Default for ConstructionOptions {
    fn default() -> Self {
        ConstructionOptions { dir_limit: None, j_policy: JPolicy::All, net_seed: 0 }
    }
}

impl ConstructionOptions {
    /// Five directions per level and `j ∈ {s_k − 1, s_k}`.
    pub fn toy() -> Self {
        ConstructionOptions { dir_limit: Some(5), j_policy: JPolicy::TopTwo, net_seed: 0 }
    }
}

/// Schedule, nets and cached powers of `Q` at one working precision.
pub struct Construction<R> {
    sched: ParamSchedule,
    opts: ConstructionOptions,
    proto: R,
    nets: Vec<DirectionNet>,
    dirs: Mutex<HashMap<(u32, u64), Direction<R>>>,
    qpows: Mutex<HashMap<i64, R>>,
    grids: Mutex<HashMap<(ExactLen, u32, u64), Integer>>,
}

impl Construction<f64> {
    pub fn f64(sched: ParamSchedule, opts: ConstructionOptions) -> Result<Self> {
        Self::new(sched, opts, 0.0)
    }
}

impl Construction<Hp> {
    /// Works at [`ParamSchedule::working_precision`].
    pub fn hp(sched: ParamSchedule, opts: ConstructionOptions) -> Result<Self> {
        let prec = sched.working_precision();
        Self::new(sched, opts, Hp::new(prec, 0.0))
    }
}

impl<R: Real> Construction<R> {
    pub fn new(sched: ParamSchedule, opts: ConstructionOptions, proto: R) -> Result<Self> {
        let mut nets = Vec::new();
        for k in 1..=sched.horizon() {
            let net = build_direction_net(sched.d(), sched.s(k), opts.net_seed.wrapping_add(k as u64))?;
            nets.push(net.subsampled(opts.dir_limit));
        }
        Ok(Construction {
            sched,
            opts,
            proto: proto.zero(),
            nets,
            dirs: Mutex::new(HashMap::new()),
            qpows: Mutex::new(HashMap::new()),
            grids: Mutex::new(HashMap::new()),
        })
    }

    pub fn sched(&self) -> &ParamSchedule {
        &self.sched
    }
    pub fn options(&self) -> &ConstructionOptions {
        &self.opts
    }
    pub fn proto(&self) -> &R {
        &self.proto
    }
    pub fn d(&self) -> usize {
        self.sched.d()
    }
    pub fn net(&self, k: u32) -> &DirectionNet {
        &self.nets[k as usize - 1]
    }
    /// `|E_k|` as used (after subsampling).
    pub fn dir_count(&self, k: u32) -> u64 {
        self.net(k).len()
    }

    pub fn qpow(&self, n: i64) -> R {
        let mut c = self.qpows.lock().unwrap();
        c.entry(n).or_insert_with(|| self.sched.qpow(&self.proto, n)).clone()
    }
    pub fn width(&self, k: u32) -> R {
        self.qpow(-(self.sched.exponent(k) as i64))
    }
    pub fn len_value(&self, len: ExactLen) -> R {
        self.qpow(len.exp) * self.proto.lit(len.coef as f64)
    }
    /// Grid spacing `Q^j w_k / s_k` of `R_l(j, e)` at level `k`.
    pub fn spacing(&self, k: u32, j: u64) -> R {
        self.qpow(j as i64 - self.sched.exponent(k) as i64) / self.proto.lit(self.sched.s(k) as f64)
    }
    pub fn child_len(&self, k: u32, j: u64) -> ExactLen {
        ExactLen { coef: 2, exp: j as i64 - self.sched.exponent(k) as i64 }
    }

    pub fn direction(&self, k: u32, i: u64) -> Direction<R> {
        let mut c = self.dirs.lock().unwrap();
        c.entry((k, i)).or_insert_with(|| self.net(k).member(i, &self.proto)).clone()
    }

    /// `l_1`: unit segment centered at the origin along the first axis.
    pub fn root(&self) -> HLine<R> {
        let p = &self.proto;
        HLine {
            tag: NodeTag { level: 1, class: 0, category: Vec::new() },
            seg: Segment::new(Point::zeros(p, self.d()), Direction::axis(p, self.d(), 0), p.lit(0.5)),
            id: root_id(),
            parent: None,
            path: LinePath::root(),
            len: ExactLen::UNIT,
        }
    }

    /// Size `floor(len/h) + 1` of the maximal separated grid used by
    /// `R_l(j, e)` at level `k`.
    pub fn grid_len(&self, len: ExactLen, k: u32, j: u64) -> Result<Integer> {
        if let Some(n) = self.grids.lock().unwrap().get(&(len, k, j)) {
            return Ok(n.clone());
        }
        let e = len.exp + self.sched.exponent(k) as i64 - j as i64;
        let ratio = self.qpow(e) * self.proto.lit(len.coef as f64 * self.sched.s(k) as f64);
        let n: Integer = snapped_floor(&ratio) + 1u32;
        if n < 2 {
            return Err(Error::Precondition(format!(
                "segment shorter than the spacing Q^j w_k / s_k (k = {k}, j = {j})"
            )));
        }
        self.grids.lock().unwrap().insert((len, k, j), n.clone());
        Ok(n)
    }

    /// Class of `parent` at level `k` after checking that `(j, dir)` is
    /// a legal next step there.
    fn check_step(&self, parent: &HLine<R>, k: u32, j: u64, dir: u64) -> Result<u64> {
        if k == 0 || k > self.sched.horizon() {
            return Err(Error::Level(k, self.sched.horizon()));
        }
        let created = parent.created();
        if created > k {
            return Err(Error::Invalid(format!("parent created at level {created} > {k}")));
        }
        let m = if created == k { parent.path.class() } else { 0 };
        if m >= self.sched.m(k) {
            return Err(Error::Invalid(format!("class {m} has no successor: M_{k} = {}", self.sched.m(k))));
        }
        let s = self.sched.s(k);
        if j == 0 || j > s {
            return Err(Error::Invalid(format!("j = {j} outside 1..={s}")));
        }
        if !self.opts.j_policy.allows(j, s) {
            return Err(Error::Invalid(format!("j = {j} excluded by {:?}", self.opts.j_policy)));
        }
        if m > 0 {
            let jm = *parent.path.category().last().unwrap();
            if j > jm {
                return Err(Error::Invalid(format!("category monotonicity violated: j = {j} > j_m = {jm}")));
            }
        }
        if dir >= self.dir_count(k) {
            return Err(Error::Invalid(format!("direction {dir} outside net of size {}", self.dir_count(k))));
        }
        Ok(m)
    }

    /// The child `x + [−1,1]Q^j w_k e` anchored at grid point `grid` of
    /// `parent`, with `e` the `dir`-th member of `E_k`.
    pub fn child(&self, parent: &HLine<R>, k: u32, j: u64, dir: u64, grid: &Integer) -> Result<HLine<R>> {
        let m = self.check_step(parent, k, j, dir)?;
        let n = self.grid_len(parent.len, k, j)?;
        if *grid < 0 || *grid >= n {
            return Err(Error::Invalid(format!("grid index {grid} outside 0..{n}")));
        }
        let h = self.spacing(k, j);
        let off = grid_offset(grid, &n, &h, &self.len_value(parent.len));
        let center = parent.seg.start().axpy(&off, parent.seg.dir.v());
        let len = self.child_len(k, j);
        let mut category = if m == 0 { Vec::new() } else { parent.path.category() };
        category.push(j);
        Ok(HLine {
            tag: NodeTag { level: k, class: m + 1, category },
            seg: Segment::new(center, self.direction(k, dir), self.qpow(len.exp)),
            id: node_id(parent.id, k, m + 1, j, dir, grid),
            parent: Some(parent.id),
            path: parent.path.push(k, ClassStep { j, dir, grid: grid.clone() }),
            len,
        })
    }

    /// All of `R_l(j, e)` for one direction, built from the separated
    /// grid of the parent segment.
    pub fn refine_lines(&self, parent: &HLine<R>, k: u32, j: u64, dir: u64) -> Result<Vec<HLine<R>>> {
        let m = self.check_step(parent, k, j, dir)?;
        let h = self.spacing(k, j);
        if parent.seg.length() < h {
            return Err(Error::Precondition(format!(
                "segment shorter than the spacing Q^j w_k / s_k (k = {k}, j = {j})"
            )));
        }
        let pts = separated_points(&parent.seg, &h)?;
        let len = self.child_len(k, j);
        let e = self.direction(k, dir);
        let mut category = if m == 0 { Vec::new() } else { parent.path.category() };
        category.push(j);
        Ok(pts
            .into_iter()
            .enumerate()
            .map(|(i, x)| {
                let g = Integer::from(i);
                HLine {
                    tag: NodeTag { level: k, class: m + 1, category: category.clone() },
                    seg: Segment::new(x, e.clone(), self.qpow(len.exp)),
                    id: node_id(parent.id, k, m + 1, j, dir, &g),
                    parent: Some(parent.id),
                    path: parent.path.push(k, ClassStep { j, dir, grid: g }),
                    len,
                }
            })
            .collect())
    }

    /// One class step applied to every source line and every direction.
    pub fn advance_class(&self, sources: &[HLine<R>], k: u32, next_j: u64) -> Result<Vec<HLine<R>>> {
        let mut out = Vec::new();
        for l in sources {
            for dir in 0..self.dir_count(k) {
                out.extend(self.refine_lines(l, k, next_j, dir)?);
            }
        }
        Ok(out)
    }

    /// Materializes the single line a path designates.
    pub fn lazy_path(&self, path: &LinePath) -> Result<HLine<R>> {
        let mut line = self.root();
        let mut last = 1;
        for group in &path.0 {
            if group.level <= last || group.level > self.sched.horizon() {
                return Err(Error::Invalid(format!(
                    "path levels must increase within 2..={}; got {} after {last}",
                    self.sched.horizon(),
                    group.level
                )));
            }
            if group.steps.is_empty() {
                return Err(Error::Invalid(format!("empty step list at level {}", group.level)));
            }
            for st in &group.steps {
                line = self.child(&line, group.level, st.j, st.dir, &st.grid)?;
            }
            last = group.level;
        }
        Ok(line)
    }

    /// Index of the grid point of `R_l(j, ·)` nearest to `x`, measured
    /// along the parent; ties go to the smaller index.
    pub fn nearest_grid(&self, parent: &HLine<R>, k: u32, j: u64, x: &Point<R>) -> Result<Integer> {
        let n = self.grid_len(parent.len, k, j)?;
        let h = self.spacing(k, j);
        let len = self.len_value(parent.len);
        let a = parent.seg.axial(x) + parent.seg.half.clone();
        let base = if a < a.zero() { Integer::new() } else { (a.clone() / h.clone()).floor_int() };
        let last = Integer::from(&n - 1u32);
        let mut cands: Vec<Integer> = vec![base.clone(), base + 1u32, last.clone()];
        for c in cands.iter_mut() {
            if *c > last {
                *c = last.clone();
            }
        }
        cands.sort();
        cands.dedup();
        let mut best: Option<(Integer, R)> = None;
        for c in cands {
            let d = (grid_offset(&c, &n, &h, &len) - a.clone()).abs();
            if best.as_ref().is_none_or(|(_, bd)| d < *bd) {
                best = Some((c, d));
            }
        }
        Ok(best.unwrap().0)
    }

    /// A uniformly random legal step from `parent` at level `k`.
    pub fn random_step<G: Rng>(&self, rng: &mut G, parent: &HLine<R>, k: u32) -> Result<ClassStep> {
        let m = if parent.created() == k { parent.path.class() } else { 0 };
        let max_j = if m == 0 { self.sched.s(k) } else { *parent.path.category().last().unwrap() };
        let js = self.opts.j_policy.choices(self.sched.s(k), max_j);
        if js.is_empty() {
            return Err(Error::Invalid(format!("no admissible j below {max_j}")));
        }
        let j = js[rng.gen_range(0..js.len())];
        let dir = rng.gen_range(0..self.dir_count(k));
        let n = self.grid_len(parent.len, k, j)?;
        Ok(ClassStep { j, dir, grid: random_below(rng, &n) })
    }
}

/// Uniform integer in `[0, n)` for `n ≥ 1`, with 64 surplus bits.
pub fn random_below<G: Rng>(rng: &mut G, n: &Integer) -> Integer {
    if let Some(n) = n.to_u64() {
        return Integer::from(rng.gen_range(0..n));
    }
    let words = (n.significant_bits() as usize + 64).div_ceil(64);
    let digits: Vec<u64> = (0..words).map(|_| rng.gen()).collect();
    Integer::from_digits(&digits, Order::Lsf) % n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArenaNode {
    pub parent: u32,
    pub level: u32,
    pub class: u32,
    pub j: u32,
    pub dir: u32,
    pub grid: u64,
    pub id: u64,
}

/// Every line created up to some level, stored flat in `f64`.
pub struct Arena {
    pub d: usize,
    pub nodes: Vec<ArenaNode>,
    centers: Vec<f64>,
    halves: Vec<f64>,
    /// `starts[k]` is the first node created at level `k + 2`.
    starts: Vec<usize>,
}

impl Arena {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    /// Number of lines in `L_k`.
    pub fn level_size(&self, k: u32) -> usize {
        self.starts.get(k as usize - 1).copied().unwrap_or(self.nodes.len())
    }
    pub fn segment(&self, con: &Construction<f64>, i: usize) -> Segment<f64> {
        let n = &self.nodes[i];
        let c = Point(self.centers[i * self.d..(i + 1) * self.d].to_vec());
        let dir = if n.parent == u32::MAX { Direction::axis(&0.0, self.d, 0) } else { con.direction(n.level, n.dir as u64) };
        Segment::new(c, dir, self.halves[i])
    }
    pub fn path(&self, i: usize) -> LinePath {
        let mut chain = Vec::new();
        let mut cur = i;
        while self.nodes[cur].parent != u32::MAX {
            chain.push(cur);
            cur = self.nodes[cur].parent as usize;
        }
        let mut p = LinePath::root();
        for &c in chain.iter().rev() {
            let n = &self.nodes[c];
            p = p.push(n.level, ClassStep { j: n.j as u64, dir: n.dir as u64, grid: Integer::from(n.grid) });
        }
        p
    }
    pub fn id_index(&self) -> HashMap<u64, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }
}

/// Materializes `L_1, …, L_{k_max}` in construction order.
pub fn enumerate_arena(con: &Construction<f64>, k_max: u32) -> Result<Arena> {
    let d = con.d();
    let mut a = Arena {
        d,
        nodes: vec![ArenaNode { parent: u32::MAX, level: 1, class: 0, j: 0, dir: 0, grid: 0, id: root_id() }],
        centers: vec![0.0; d],
        halves: vec![0.5],
        starts: Vec::new(),
    };
    let mut cats: Vec<u32> = vec![0];
    for k in 2..=k_max {
        let before = a.nodes.len();
        a.starts.push(before);
        let s = con.sched().s(k);
        let mut sources: Vec<usize> = (0..before).collect();
        for m in 0..con.sched().m(k) {
            let mut next = Vec::new();
            for &p in &sources {
                let seg = a.segment(con, p);
                let max_j = if m == 0 { s } else { cats[p] as u64 };
                let pid = a.nodes[p].id;
                for j in con.options().j_policy.choices(s, max_j) {
                    let h = con.spacing(k, j);
                    let pts = separated_points(&seg, &h)?;
                    let half = con.qpow(con.child_len(k, j).exp);
                    for dir in 0..con.dir_count(k) {
                        for (g, x) in pts.iter().enumerate() {
                            let gi = Integer::from(g);
                            next.push(a.nodes.len());
                            a.nodes.push(ArenaNode {
                                parent: p as u32,
                                level: k,
                                class: m as u32 + 1,
                                j: j as u32,
                                dir: dir as u32,
                                grid: g as u64,
                                id: node_id(pid, k, m + 1, j, dir, &gi),
                            });
                            a.centers.extend_from_slice(&x.0);
                            a.halves.push(half);
                            cats.push(j as u32);
                        }
                    }
                }
            }
            sources = next;
        }
    }
    Ok(a)
}

fn fl(x: f64) -> Float {
    Float::with_val(BOUND_PREC, x)
}
fn fi(x: &Integer) -> Float {
    Float::with_val(BOUND_PREC, x)
}
fn fmt_f(x: &Float) -> String {
    x.to_string_radix(10, Some(17))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub k: u32,
    pub m: u64,
    pub category: Vec<u64>,
    #[serde(with = "int_str")]
    pub lines: Integer,
    #[serde(with = "int_str")]
    pub cubes: Integer,
    /// Line-count bound; absent for class 0.
    pub bound_ii: Option<String>,
    /// Cube-count bound (for class 0, `2|C_{k−1}| Q^{s_k}`).
    pub bound_v: String,
    /// Per-parent bound `|R_l(j,e)| ≤ 2 s_k length(l) / (Q^j w_k)`.
    pub per_parent_ok: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTotal {
    pub m: u64,
    #[serde(with = "int_str")]
    pub cubes: Integer,
    pub bound: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub k: u32,
    pub width_exponent: u64,
    pub dirs_used: u64,
    pub dirs_full: u64,
    #[serde(with = "int_str")]
    pub lines: Integer,
    #[serde(with = "int_str")]
    pub cubes: Integer,
    /// Total length of the class-0 lines and its bound `2|C_{k−1}| w_{k−1}`.
    pub class0_length: Option<String>,
    pub class0_length_bound: Option<String>,
    pub classes: Vec<ClassTotal>,
    /// `2(M_k+1)|C_{k−1}|(4 s_k²|E_k|)^{M_k} Q^{s_k}`.
    pub boxes_bound: Option<String>,
    /// Lines whose cover count is not below `length/w_k`.
    #[serde(with = "int_str")]
    pub strict_cover_exceptions: Integer,
    pub materialized: bool,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountLedger {
    pub schedule: ScheduleDoc,
    pub options: ConstructionOptions,
    pub levels: Vec<LevelSummary>,
    pub rows: Vec<LedgerRow>,
}

impl CountLedger {
    pub fn pass(&self) -> bool {
        self.levels.iter().all(|l| l.pass) && self.rows.iter().all(|r| r.pass)
    }
    pub fn horizon(&self) -> u32 {
        self.levels.len() as u32
    }
    pub fn cubes(&self, k: u32) -> Option<&Integer> {
        self.levels.get(k as usize - 1).map(|l| &l.cubes)
    }
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in self.rows.iter().filter(|r| !r.pass) {
            out.push(format!("k={} m={} category={:?}: counts exceed bounds", r.k, r.m, r.category));
        }
        for l in self.levels.iter().filter(|l| !l.pass) {
            out.push(format!("k={}: level totals exceed bounds", l.k));
        }
        out
    }
    /// Columns `k, m, category, lines, cubes, bound_II, bound_V, pass`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["k", "m", "category", "lines", "cubes", "bound_II", "bound_V", "pass"])?;
        for r in &self.rows {
            let cat: Vec<String> = r.category.iter().map(|j| j.to_string()).collect();
            wr.write_record([
                r.k.to_string(),
                r.m.to_string(),
                cat.join(" "),
                r.lines.to_string(),
                r.cubes.to_string(),
                r.bound_ii.clone().unwrap_or_default(),
                r.bound_v.clone(),
                r.pass.to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Exact counts of lines and cubes per `(k, m, category)` on `1..=k_max`,
/// grouping lines by their exact length, checked against the bounds on
/// line counts, category cube counts, class totals, class-0 covers and
/// the level total. Fails with [`Error::Budget`] when the number of
/// categories exceeds `group_budget`.
pub fn count_ledger<R: Real>(con: &Construction<R>, k_max: u32, group_budget: u64) -> Result<CountLedger> {
    let sched = con.sched();
    if k_max == 0 || k_max > sched.horizon() {
        return Err(Error::Level(k_max, sched.horizon()));
    }
    let q = fl(sched.q());
    let qpow = |n: i64| -> Float { q.clone().pow(i32::try_from(n).expect("exponent in i32")) };
    let mut rows = Vec::new();
    let mut levels = Vec::new();
    let strict = |len: ExactLen, w_exp: i64, count: &Integer| -> bool {
        // count ≥ length/w, evaluated in the ledger precision
        let ratio = qpow(len.exp + w_exp) * len.coef as u32;
        fi(count) >= ratio
    };

    let w1 = con.width(1);
    let c1 = cover_count(&con.len_value(ExactLen::UNIT), &w1);
    let mut exc = Integer::new();
    if strict(ExactLen::UNIT, sched.exponent(1) as i64, &c1) {
        exc += 1;
    }
    levels.push(LevelSummary {
        k: 1,
        width_exponent: sched.exponent(1),
        dirs_used: con.dir_count(1),
        dirs_full: con.net(1).full_len(),
        lines: Integer::from(1),
        cubes: c1.clone(),
        class0_length: None,
        class0_length_bound: None,
        classes: vec![ClassTotal { m: 0, cubes: c1.clone(), bound: String::new(), pass: true }],
        boxes_bound: None,
        strict_cover_exceptions: exc,
        materialized: false,
        pass: true,
    });
    rows.push(LedgerRow {
        k: 1,
        m: 0,
        category: Vec::new(),
        lines: Integer::from(1),
        cubes: c1.clone(),
        bound_ii: None,
        bound_v: String::new(),
        per_parent_ok: true,
        pass: true,
    });

    // L_{k-1} grouped by exact length
    let mut prev: BTreeMap<ExactLen, Integer> = BTreeMap::new();
    prev.insert(ExactLen::UNIT, Integer::from(1));
    let mut c_prev = c1;
    let mut groups = 1u64;

    for k in 2..=k_max {
        let s = sched.s(k);
        let big_m = sched.m(k);
        let e_used = con.dir_count(k);
        let ek = sched.exponent(k) as i64;
        let wk = con.width(k);
        let cp = fi(&c_prev);
        let mut exc = Integer::new();
        let mut level_ok = true;

        // class 0
        let mut c0_lines = Integer::new();
        let mut c0_cubes = Integer::new();
        let mut c0_len = fl(0.0);
        for (len, n) in &prev {
            c0_lines += n;
            let cc = cover_count(&con.len_value(*len), &wk);
            if strict(*len, ek, &cc) {
                exc += n;
            }
            c0_cubes += Integer::from(n * &cc);
            c0_len += fi(n) * qpow(len.exp) * len.coef as u32;
        }
        let c0_bound = cp.clone() * 2u32 * qpow(s as i64);
        let c0_len_bound = cp.clone() * 2u32 * qpow(-(sched.exponent(k - 1) as i64));
        let c0_ok = fi(&c0_cubes) <= c0_bound && c0_len <= c0_len_bound;
        level_ok &= c0_ok;
        rows.push(LedgerRow {
            k,
            m: 0,
            category: Vec::new(),
            lines: c0_lines.clone(),
            cubes: c0_cubes.clone(),
            bound_ii: None,
            bound_v: fmt_f(&c0_bound),
            per_parent_ok: true,
            pass: c0_ok,
        });
        let mut classes =
            vec![ClassTotal { m: 0, cubes: c0_cubes.clone(), bound: fmt_f(&c0_bound), pass: c0_ok }];
        let mut total_lines = c0_lines;
        let mut total_cubes = c0_cubes;
        let mut next: BTreeMap<ExactLen, Integer> = prev.clone();

        // (category, line count) of the previous class; class 0 is the
        // grouped L_{k-1} with the empty category.
        let wk_f = qpow(-ek);
        let mut frontier: Vec<(Vec<u64>, Vec<(ExactLen, Integer)>)> =
            vec![(Vec::new(), prev.iter().map(|(l, n)| (*l, n.clone())).collect())];
        for m in 1..=big_m {
            let mut class_cubes = Integer::new();
            let mut new_frontier = Vec::new();
            for (cat, parents) in &frontier {
                let max_j = cat.last().copied().unwrap_or(s);
                for j in con.options().j_policy.choices(s, max_j) {
                    groups += 1;
                    if groups > group_budget {
                        return Err(Error::Budget(groups));
                    }
                    let mut lines = Integer::new();
                    let mut per_parent_ok = true;
                    for (len, n) in parents {
                        let g = con.grid_len(*len, k, j)?;
                        let lim = qpow(len.exp - j as i64) * len.coef as u32 * (2 * s) as u32 / wk_f.clone();
                        per_parent_ok &= fi(&g) <= lim;
                        lines += Integer::from(n * &g) * e_used;
                    }
                    let len = con.child_len(k, j);
                    let cc = cover_count(&con.len_value(len), &wk);
                    if strict(len, ek, &cc) {
                        exc += &lines;
                    }
                    let cubes = Integer::from(&lines * &cc);
                    let base = Float::with_val(BOUND_PREC, 4 * s * e_used).pow(m as u32);
                    let b2 = cp.clone() * base.clone() * qpow(s as i64 - j as i64);
                    let b5 = cp.clone() * 2u32 * base * qpow(s as i64);
                    let pass = per_parent_ok && fi(&lines) <= b2 && fi(&cubes) <= b5;
                    level_ok &= pass;
                    let mut category = cat.clone();
                    category.push(j);
                    rows.push(LedgerRow {
                        k,
                        m,
                        category: category.clone(),
                        lines: lines.clone(),
                        cubes: cubes.clone(),
                        bound_ii: Some(fmt_f(&b2)),
                        bound_v: fmt_f(&b5),
                        per_parent_ok,
                        pass,
                    });
                    class_cubes += &cubes;
                    total_lines += &lines;
                    total_cubes += &cubes;
                    *next.entry(len).or_default() += &lines;
                    new_frontier.push((category, vec![(len, lines)]));
                }
            }
            let ms_bound = cp.clone() * 2u32
                * Float::with_val(BOUND_PREC, 4 * s * s * e_used).pow(m as u32)
                * qpow(s as i64);
            let ok = fi(&class_cubes) <= ms_bound;
            level_ok &= ok;
            classes.push(ClassTotal { m, cubes: class_cubes, bound: fmt_f(&ms_bound), pass: ok });
            frontier = new_frontier;
        }
        let boxes = cp.clone() * (2 * (big_m + 1)) as u32
            * Float::with_val(BOUND_PREC, 4 * s * s * e_used).pow(big_m as u32)
            * qpow(s as i64);
        let boxes_ok = fi(&total_cubes) <= boxes;
        level_ok &= boxes_ok;
        levels.push(LevelSummary {
            k,
            width_exponent: sched.exponent(k),
            dirs_used: e_used,
            dirs_full: con.net(k).full_len(),
            lines: total_lines,
            cubes: total_cubes.clone(),
            class0_length: Some(fmt_f(&c0_len)),
            class0_length_bound: Some(fmt_f(&c0_len_bound)),
            classes,
            boxes_bound: Some(fmt_f(&boxes)),
            strict_cover_exceptions: exc,
            materialized: false,
            pass: level_ok,
        });
        prev = next;
        c_prev = total_cubes;
    }
    Ok(CountLedger { schedule: sched.doc.clone(), options: con.options().clone(), levels, rows })
}

/// Ledger through level `k`, with the lines themselves materialized up to
/// the deepest level whose total line count fits in `budget`.
pub struct LevelBuild {
    pub ledger: CountLedger,
    pub arena: Arena,
    pub materialized_to: u32,
    /// True when level `k` itself could not be materialized.
    pub partial: bool,
}

/// Categories the grouped ledger may visit before giving up.
pub const GROUP_BUDGET: u64 = 1_000_000;

pub fn enumerate_level(con: &Construction<f64>, k: u32, budget: u64) -> Result<LevelBuild> {
    let mut ledger = count_ledger(con, k, GROUP_BUDGET)?;
    let mut to = 0;
    for l in &ledger.levels {
        if l.lines <= budget {
            to = l.k;
        } else {
            break;
        }
    }
    let arena = enumerate_arena(con, to.max(1))?;
    for l in ledger.levels.iter_mut() {
        l.materialized = l.k <= to;
    }
    Ok(LevelBuild { ledger, arena, materialized_to: to, partial: to < k })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverAudit {
    pub k: u32,
    pub points: u64,
    pub failures: u64,
}

/// Draws `n` points from tubes `B̄_{w_k}(l)` of random lines `l ∈ L_k` and
/// counts those outside every cube of `F_{w_k}(l) ⊆ C_k`.
pub fn cover_audit<R: Real>(con: &Construction<R>, k: u32, n: u64, seed: u64) -> Result<CoverAudit> {
    use rand::SeedableRng;
    if k == 0 || k > con.sched().horizon() {
        return Err(Error::Level(k, con.sched().horizon()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = con.proto().clone();
    let w = con.width(k);
    let mut failures = 0;
    for _ in 0..n {
        let mut line = con.root();
        for level in 2..=k {
            for _ in 0..rng.gen_range(0..=con.sched().m(level)) {
                let st = con.random_step(&mut rng, &line, level)?;
                line = con.child(&line, level, st.j, st.dir, &st.grid)?;
            }
        }
        let tau = line.seg.half.clone() * p.lit(rng.gen_range(-1.0..=1.0));
        let u = random_unit(&mut rng, con.d());
        let r = rng.gen::<f64>().powf(1.0 / con.d() as f64);
        let off = Point(u.iter().map(|c| w.clone() * p.lit(c * r)).collect());
        let x = line.seg.at(&tau).add(&off);
        if !cube_cover(&line.seg, &w)?.iter().any(|c| cube_contains(c, &x)) {
            failures += 1;
        }
    }
    Ok(CoverAudit { k, points: n, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> Construction<f64> {
        Construction::f64(ParamSchedule::toy(), ConstructionOptions::toy()).unwrap()
    }

    #[test]
    fn root_cover_has_four_cubes() {
        let c = toy();
        let l = c.root();
        assert_eq!(l.seg.length(), 1.0);
        assert_eq!(cover_count(&l.seg.length(), &c.width(1)), 4);
    }

    #[test]
    fn level_one_refinement_with_full_net() {
        let c = Construction::f64(ParamSchedule::toy(), ConstructionOptions::default()).unwrap();
        let kids = c.refine_lines(&c.root(), 1, 1, 0).unwrap();
        assert_eq!(kids.len(), 14);
        assert_eq!(c.dir_count(1), 25);
        let all = c.advance_class(&[c.root()], 1, 1).unwrap();
        assert_eq!(all.len(), 350);
        for l in &all {
            assert!((l.seg.length() - 2.0 * 1.5 * 16.0 / 81.0).abs() < 1e-12);
        }
    }

    #[test]
    fn monotone_categories_enforced() {
        let c = Construction::f64(ParamSchedule::toy(), ConstructionOptions::default()).unwrap();
        let a = c.child(&c.root(), 2, 3, 0, &Integer::from(0)).unwrap();
        let b = c.child(&a, 2, 2, 0, &Integer::from(0)).unwrap();
        assert_eq!(b.tag.category, vec![3, 2]);
        assert!(c.child(&b, 2, 3, 0, &Integer::from(0)).is_err());
    }

    #[test]
    fn lazy_path_matches_refinement() {
        let c = toy();
        let kids = c.refine_lines(&c.root(), 2, 5, 0).unwrap();
        let p = LinePath(vec![LevelSteps {
            level: 2,
            steps: vec![ClassStep { j: 5, dir: 0, grid: Integer::from(0) }],
        }]);
        let l = c.lazy_path(&p).unwrap();
        assert_eq!(l.id, kids[0].id);
        assert!(l.seg.center.dist(&kids[0].seg.center) < 1e-15);
        assert_eq!(c.lazy_path(&LinePath::root()).unwrap().id, root_id());
    }

    #[test]
    fn nearest_grid_ties_go_low() {
        let c = toy();
        let r = c.root();
        let h = c.spacing(2, 5);
        let x = r.seg.start().axpy(&(1.5 * h), r.seg.dir.v());
        assert_eq!(c.nearest_grid(&r, 2, 5, &x).unwrap(), 1);
        let end = r.seg.end();
        let n = c.grid_len(r.len, 2, 5).unwrap();
        assert_eq!(c.nearest_grid(&r, 2, 5, &end).unwrap(), n - 1u32);
    }

    #[test]
    fn toy_level_two_counts() {
        let c = toy();
        let ledger = count_ledger(&c, 2, GROUP_BUDGET).unwrap();
        let l2 = &ledger.levels[1];
        // 1 + 320 + 28000 + 2112000
        assert_eq!(l2.lines, 2_140_321u64);
        assert!(ledger.pass(), "{:?}", ledger.violations());
    }

    #[test]
    fn random_steps_are_legal() {
        let c = toy();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut l = c.root();
        for k in 2..=3 {
            for _ in 0..3 {
                let st = c.random_step(&mut rng, &l, k).unwrap();
                l = c.child(&l, k, st.j, st.dir, &st.grid).unwrap();
            }
        }
        assert_eq!(c.lazy_path(&l.path).unwrap().id, l.id);
    }

    #[test]
    fn huge_random_below() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = Integer::from(10).pow(300u32);
        for _ in 0..20 {
            let r = random_below(&mut rng, &n);
            assert!(r >= 0 && r < n);
        }
    }
}
