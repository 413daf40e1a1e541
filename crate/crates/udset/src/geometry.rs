//! Points, segments, tubes, oriented cubes, separated grids on segments,
//! direction nets on the sphere and the cube covers `F_w(l)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rug::Integer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{snapped_ceil, snapped_floor, Real};

/// Relative tolerance of every geometric comparison.
pub const TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Point<R>(pub Vec<R>);

impl<R: Real> Point<R> {
    pub fn zeros(proto: &R, d: usize) -> Self {
        Point(vec![proto.zero(); d])
    }
    pub fn dim(&self) -> usize {
        self.0.len()
    }
    pub fn add(&self, o: &Self) -> Self {
        Point(self.0.iter().zip(&o.0).map(|(a, b)| a.clone() + b.clone()).collect())
    }
    pub fn sub(&self, o: &Self) -> Self {
        Point(self.0.iter().zip(&o.0).map(|(a, b)| a.clone() - b.clone()).collect())
    }
    pub fn scale(&self, t: &R) -> Self {
        Point(self.0.iter().map(|a| a.clone() * t.clone()).collect())
    }
    /// `self + t·v`
    pub fn axpy(&self, t: &R, v: &Self) -> Self {
        Point(self.0.iter().zip(&v.0).map(|(a, b)| a.clone() + t.clone() * b.clone()).collect())
    }
    pub fn dot(&self, o: &Self) -> R {
        let mut it = self.0.iter().zip(&o.0).map(|(a, b)| a.clone() * b.clone());
        let first = it.next().expect("empty point");
        it.fold(first, |acc, x| acc + x)
    }
    pub fn norm(&self) -> R {
        self.dot(self).sqrt()
    }
    pub fn dist(&self, o: &Self) -> R {
        self.sub(o).norm()
    }
    pub fn to_f64(&self) -> Point<f64> {
        Point(self.0.iter().map(|x| x.to_f64()).collect())
    }
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
    pub fn proto(&self) -> &R {
        &self.0[0]
    }
}

impl Point<f64> {
    pub fn lift<R: Real>(&self, proto: &R) -> Point<R> {
        Point(self.0.iter().map(|x| proto.lit(*x)).collect())
    }
}

/// Unit vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction<R>(pub Point<R>);

impl<R: Real> Direction<R> {
    pub fn normalized(p: &Point<R>) -> Option<Self> {
        let n = p.norm();
        if n <= p.proto().zero() || !n.is_finite() {
            return None;
        }
        Some(Direction(p.scale(&(n.one() / n))))
    }
    pub fn axis(proto: &R, d: usize, i: usize) -> Self {
        let mut p = Point::zeros(proto, d);
        p.0[i] = proto.one();
        Direction(p)
    }
    pub fn v(&self) -> &Point<R> {
        &self.0
    }
}

/// `center + [-half, half]·dir`.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment<R> {
    pub center: Point<R>,
    pub dir: Direction<R>,
    pub half: R,
}

impl<R: Real> Segment<R> {
    pub fn new(center: Point<R>, dir: Direction<R>, half: R) -> Self {
        Segment { center, dir, half }
    }
    pub fn start(&self) -> Point<R> {
        self.center.axpy(&-self.half.clone(), self.dir.v())
    }
    pub fn end(&self) -> Point<R> {
        self.center.axpy(&self.half, self.dir.v())
    }
    /// Point at signed offset `tau` from the center.
    pub fn at(&self, tau: &R) -> Point<R> {
        self.center.axpy(tau, self.dir.v())
    }
    pub fn length(&self) -> R {
        self.half.clone() + self.half.clone()
    }
    /// Signed axial coordinate of the projection of `p`, unclamped.
    pub fn axial(&self, p: &Point<R>) -> R {
        p.sub(&self.center).dot(self.dir.v())
    }
}

pub fn segment_distance<R: Real>(p: &Point<R>, s: &Segment<R>) -> R {
    let a = s.half.clone();
    let u = s.axial(p).max_of(-a.clone()).min_of(a);
    p.sub(&s.at(&u)).norm()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tube<R> {
    pub axis: Segment<R>,
    pub width: R,
}

impl<R: Real> Tube<R> {
    pub fn contains(&self, p: &Point<R>) -> bool {
        segment_distance(p, &self.axis) <= self.width.clone() * self.width.lit(1.0 + TOL)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrientedCube<R> {
    pub center: Point<R>,
    pub half: R,
    pub frame: Vec<Direction<R>>,
}

pub fn cube_contains<R: Real>(c: &OrientedCube<R>, p: &Point<R>) -> bool {
    let lim = c.half.clone() * c.half.lit(1.0 + TOL);
    let off = p.sub(&c.center);
    c.frame.iter().all(|f| off.dot(f.v()).abs() <= lim)
}

/// Orthonormal frame with `frame[0] = e`, completed by Gram–Schmidt over
/// the standard basis minus the basis vector most parallel to `e`.
pub fn complete_frame<R: Real>(e: &Direction<R>) -> Vec<Direction<R>> {
    let d = e.v().dim();
    let proto = e.v().proto().clone();
    let mut skip = 0;
    let mut best = e.v().0[0].abs();
    for i in 1..d {
        let c = e.v().0[i].abs();
        if c > best {
            best = c;
            skip = i;
        }
    }
    let mut frame = vec![e.clone()];
    for i in (0..d).filter(|&i| i != skip) {
        let mut v = Direction::axis(&proto, d, i).0;
        for f in &frame {
            let c = v.dot(f.v());
            v = v.axpy(&-c, f.v());
        }
        frame.push(Direction::normalized(&v).expect("basis vector independent of frame"));
    }
    frame
}

/// Number of points of the maximal `h`-separated grid on a segment of
/// length `len`: `floor(len/h) + 1`.
pub fn grid_count<R: Real>(len: &R, h: &R) -> Integer {
    snapped_floor(&(len.clone() / h.clone())) + 1
}

/// Offset from the start of grid point `i` of an `n`-point grid: `i·h`,
/// except that the last point sits at the far endpoint.
pub fn grid_offset<R: Real>(i: &Integer, n: &Integer, h: &R, len: &R) -> R {
    if *i == Integer::from(n - 1u32) {
        len.clone()
    } else {
        h.from_int(i) * h.clone()
    }
}

pub fn separated_points<R: Real>(s: &Segment<R>, h: &R) -> Result<Vec<Point<R>>> {
    let len = s.length();
    if *h <= h.zero() || *h > len.clone() * len.lit(1.0 + TOL) {
        return Err(Error::Invalid(format!("spacing {h:?} outside (0, {len:?}]")));
    }
    let n = grid_count(&len, h);
    let n_u = n.to_u64().ok_or_else(|| Error::Invalid("grid too large to materialize".into()))?;
    let start = s.start();
    Ok((0..n_u)
        .map(|i| start.axpy(&grid_offset(&Integer::from(i), &n, h, &len), s.dir.v()))
        .collect())
}

/// `ceil(len/(2w)) + 1`.
pub fn cover_count<R: Real>(len: &R, w: &R) -> Integer {
    snapped_ceil(&(len.clone() / (w.clone() + w.clone()))) + 1
}

pub fn cube_cover<R: Real>(l: &Segment<R>, w: &R) -> Result<Vec<OrientedCube<R>>> {
    let len = l.length();
    if *w <= w.zero() || w.clone() + w.clone() >= len {
        return Err(Error::Invalid(format!("cube width {w:?} outside (0, length/2)")));
    }
    let n = cover_count(&len, w);
    let n_u = n.to_u64().ok_or_else(|| Error::Invalid("cover too large to materialize".into()))?;
    if len >= w.clone() * w.lit(4.0) && !(w.from_int(&n) < len.clone() / w.clone()) {
        return Err(Error::Violation(format!("cover count {n} not below length/w")));
    }
    let frame = complete_frame(&l.dir);
    let start = l.start();
    let step = w.clone() + w.clone();
    Ok((0..n_u)
        .map(|i| {
            let off = if i + 1 == n_u { len.clone() } else { w.lit(i as f64) * step.clone() };
            OrientedCube { center: start.axpy(&off, l.dir.v()), half: w.clone(), frame: frame.clone() }
        })
        .collect())
}

/// Note emitted when the strict count bound `< length/w` fails.
pub fn cover_bound_note(len_over_w: f64, count: u64) -> Option<String> {
    if (count as f64) < len_over_w {
        None
    } else {
        Some(format!(
            "cover count {count} ≥ length/w = {len_over_w:.6}; strict bound unattainable with centers on the segment"
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum NetKind {
    /// Uniform angular grid of `n` points on the circle.
    Circle { n: u64 },
    /// Greedy net on `S^{d-1}`, stored explicitly.
    Sphere { members: Vec<Vec<f64>>, pool_mesh: f64, pool_size: usize, probes: usize },
}

/// Maximal `1/s`-separated subset of the unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionNet {
    pub d: usize,
    pub s: u64,
    pub seed: u64,
    pub kind: NetKind,
    /// When set, only the first `limit` members are used.
    pub limit: Option<u64>,
}

pub fn build_direction_net(d: usize, s: u64, seed: u64) -> Result<DirectionNet> {
    if d < 2 || s < 3 {
        return Err(Error::Invalid(format!("direction net needs d ≥ 2 and s ≥ 3, got d={d}, s={s}")));
    }
    let kind = if d == 2 {
        let half_angle = (1.0 / (2.0 * s as f64)).asin();
        let mut n = (std::f64::consts::PI / half_angle).floor() as u64;
        while 2.0 * (std::f64::consts::PI / n as f64).sin() * (s as f64) < 1.0 {
            n -= 1;
        }
        NetKind::Circle { n }
    } else {
        sphere_net(d, s, seed)
    };
    Ok(DirectionNet { d, s, seed, kind, limit: None })
}

/// Cube-face grid projected to the sphere. Radial projection is
/// 1-Lipschitz outside the unit ball, so the mesh is at most
/// `g·sqrt(d−1)/2`.
fn face_pool(d: usize, s: u64) -> (Vec<Vec<f64>>, f64) {
    let g_target = 1.0 / (2.0 * s as f64 * ((d - 1) as f64).sqrt());
    let per_side = (2.0 / g_target).ceil() as usize + 1;
    let g = 2.0 / (per_side - 1) as f64;
    let cells = per_side.pow(d as u32 - 1);
    let mut pool = Vec::with_capacity(2 * d * cells);
    for axis in 0..d {
        for sign in [-1.0, 1.0] {
            for mut code in 0..cells {
                let mut p = Vec::with_capacity(d);
                for a in 0..d {
                    if a == axis {
                        p.push(sign);
                    } else {
                        p.push(-1.0 + g * (code % per_side) as f64);
                        code /= per_side;
                    }
                }
                let n = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                pool.push(p.into_iter().map(|x| x / n).collect());
            }
        }
    }
    (pool, g * ((d - 1) as f64).sqrt() / 2.0)
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sphere_net(d: usize, s: u64, seed: u64) -> NetKind {
    let sep = 1.0 / s as f64;
    let sep2 = sep * sep;
    let (pool, mesh) = face_pool(d, s);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members: Vec<Vec<f64>> = Vec::new();
    let mut mind = vec![f64::INFINITY; pool.len()];
    let mut next = rng.gen_range(0..pool.len());
    loop {
        let m = pool[next].clone();
        for (i, p) in pool.iter().enumerate() {
            mind[i] = mind[i].min(dist2(p, &m));
        }
        members.push(m);
        let (far, &dmax) = mind
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
            .unwrap();
        if dmax < sep2 {
            break;
        }
        next = far;
    }
    let probes = 20_000 * d;
    for _ in 0..probes {
        let u = random_unit(&mut rng, d);
        if members.iter().all(|m| dist2(m, &u) >= sep2) {
            members.push(u);
        }
    }
    NetKind::Sphere { members, pool_mesh: mesh, pool_size: pool.len(), probes }
}

pub fn random_unit<G: Rng>(rng: &mut G, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl DirectionNet {
    pub fn full_len(&self) -> u64 {
        match &self.kind {
            NetKind::Circle { n } => *n,
            NetKind::Sphere { members, .. } => members.len() as u64,
        }
    }
    pub fn len(&self) -> u64 {
        let f = self.full_len();
        self.limit.map_or(f, |l| l.min(f))
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn subsampled(mut self, limit: Option<u64>) -> Self {
        self.limit = limit;
        self
    }
    pub fn separation(&self) -> f64 {
        1.0 / self.s as f64
    }

    pub fn member_f64(&self, i: u64) -> Vec<f64> {
        match &self.kind {
            NetKind::Circle { n } => {
                let a = 2.0 * std::f64::consts::PI * i as f64 / *n as f64;
                vec![a.cos(), a.sin()]
            }
            NetKind::Sphere { members, .. } => members[i as usize].clone(),
        }
    }

    /// Member `i` evaluated at the precision of `proto`.
    pub fn member<R: Real>(&self, i: u64, proto: &R) -> Direction<R> {
        match &self.kind {
            NetKind::Circle { n } => {
                let two_pi = proto.pi() * proto.lit(2.0);
                let ang = two_pi * proto.lit(i as f64) / proto.lit(*n as f64);
                let (s, c) = ang.sin_cos();
                Direction(Point(vec![c, s]))
            }
            NetKind::Sphere { members, .. } => {
                let p = Point(members[i as usize].iter().map(|x| proto.lit(*x)).collect());
                Direction::normalized(&p).expect("net member is nonzero")
            }
        }
    }

    /// Index of the nearest usable member (ties to the lower index), found
    /// in `f64`; callers re-measure the distance at their own precision.
    pub fn nearest_index(&self, e: &[f64]) -> u64 {
        match (&self.kind, self.limit) {
            (NetKind::Circle { n }, None) => {
                let mut theta = e[1].atan2(e[0]);
                if theta < 0.0 {
                    theta += 2.0 * std::f64::consts::PI;
                }
                let i = (theta * *n as f64 / (2.0 * std::f64::consts::PI)).round() as u64 % *n;
                let cands = [(i + n - 1) % n, i, (i + 1) % n];
                *cands
                    .iter()
                    .min_by(|a, b| {
                        dist2(&self.member_f64(**a), e)
                            .partial_cmp(&dist2(&self.member_f64(**b), e))
                            .unwrap()
                            .then(a.cmp(b))
                    })
                    .unwrap()
            }
            _ => (0..self.len())
                .min_by(|a, b| {
                    dist2(&self.member_f64(*a), e)
                        .partial_cmp(&dist2(&self.member_f64(*b), e))
                        .unwrap()
                        .then(a.cmp(b))
                })
                .unwrap(),
        }
    }

    /// Rows `(index, coordinates)` for CSV export.
    pub fn rows(&self) -> Vec<(u64, Vec<f64>)> {
        (0..self.len()).map(|i| (i, self.member_f64(i))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: &[f64]) -> Point<f64> {
        Point(v.to_vec())
    }

    #[test]
    fn distances() {
        let s = Segment::new(p(&[0.0, 0.0]), Direction(p(&[1.0, 0.0])), 1.0);
        assert_eq!(segment_distance(&p(&[0.5, 0.0]), &s), 0.0);
        assert!((segment_distance(&p(&[1.25, 0.0]), &s) - 0.25).abs() < 1e-15);
        assert!((segment_distance(&p(&[0.0, 0.3]), &s) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn cube_membership() {
        let e = Direction::normalized(&p(&[1.0, 1.0])).unwrap();
        let frame = complete_frame(&e);
        let c = OrientedCube { center: p(&[0.2, 0.1]), half: 0.1, frame: frame.clone() };
        assert!(cube_contains(&c, &c.center));
        let corner = c.center.axpy(&0.1, frame[0].v()).axpy(&0.1, frame[1].v());
        assert!(cube_contains(&c, &corner));
        assert!(!cube_contains(&c, &c.center.axpy(&0.101, frame[1].v())));
    }

    #[test]
    fn frame_is_orthonormal() {
        let e = Direction::normalized(&p(&[0.3, -0.2, 0.9])).unwrap();
        let f = complete_frame(&e);
        assert_eq!(f[0], e);
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((f[i].v().dot(f[j].v()) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn separated_grid_counts() {
        let s = Segment::new(p(&[0.0, 0.0]), Direction(p(&[1.0, 0.0])), 0.5);
        let h = 1.5 * (16.0 / 81.0) / 4.0;
        let pts = separated_points(&s, &h).unwrap();
        assert_eq!(pts.len(), 14);
        assert_eq!(separated_points(&s, &1.0).unwrap().len(), 2);
        assert!(separated_points(&s, &0.0).is_err());
        assert!(separated_points(&s, &1.5).is_err());
        let last = pts.last().unwrap();
        assert!((last.0[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cover_counts() {
        let w = 16.0 / 81.0;
        let s = Segment::new(p(&[0.0, 0.0]), Direction(p(&[1.0, 0.0])), 0.5);
        assert_eq!(cube_cover(&s, &w).unwrap().len(), 4);
        let w = 0.01;
        let s = Segment::new(p(&[0.0, 0.0]), Direction(p(&[1.0, 0.0])), (4.0 * w + 1e-7) / 2.0);
        let n = cube_cover(&s, &w).unwrap().len();
        assert_eq!(n, 4);
        assert!((n as f64) < s.length() / w);
        let s = Segment::new(p(&[0.0, 0.0]), Direction(p(&[1.0, 0.0])), 1.2 * w);
        let n = cube_cover(&s, &w).unwrap().len();
        assert_eq!(n, 3);
        assert!(cover_bound_note(2.4, n as u64).is_some());
    }

    #[test]
    fn circle_net_for_s4() {
        let net = build_direction_net(2, 4, 0).unwrap();
        assert_eq!(net.len(), 25);
        assert!(25 <= 4u64.pow(4));
        assert!(2.0 * (std::f64::consts::PI / 50.0).sin() < 0.25);
    }
}
