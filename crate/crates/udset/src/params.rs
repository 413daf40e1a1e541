//! Parameter schedules `s_k`, `M_k`, `s̃_k`, the ratio `Q` and the width
//! ledger `w_k = Q^(-E_k)` with `E_k = s_1 + ... + s_k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Integer sequence rule, indexed from `k = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SeqRule {
    /// `floor(a k + b)`
    Affine { a: f64, b: f64 },
    /// `max(3, floor F(k))`, coefficients in ascending powers.
    Polynomial { coeffs: Vec<f64> },
    Table { values: Vec<i64> },
    Constant { value: i64 },
    /// `max(min, floor ln s_k)`; only meaningful for `M`.
    Logfloor { min: i64 },
    /// `max(min, floor s_k^alpha)`; only meaningful for `M`.
    Powerfloor { alpha: f64, min: i64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SameAsS {
    #[serde(rename = "same-as-s")]
    SameAsS,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TildeRule {
    Same(SameAsS),
    Rule(SeqRule),
}

/// The serializable schedule document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleDoc {
    pub d: usize,
    #[serde(rename = "Q")]
    pub q: f64,
    pub s: SeqRule,
    #[serde(rename = "M")]
    pub m: SeqRule,
    #[serde(rename = "sTilde")]
    pub s_tilde: TildeRule,
    #[serde(rename = "K")]
    pub k: u32,
}

fn poly(coeffs: &[f64], k: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * k + c)
}

impl SeqRule {
    /// Raw value at level `k`; `s_k` is needed by the rules defined in
    /// terms of `s`.
    fn eval(&self, k: u32, s_k: Option<i64>) -> Result<i64> {
        let kf = k as f64;
        Ok(match self {
            SeqRule::Affine { a, b } => (a * kf + b).floor() as i64,
            SeqRule::Polynomial { coeffs } => (poly(coeffs, kf).floor() as i64).max(3),
            SeqRule::Table { values } => *values.get(k as usize - 1).ok_or_else(|| {
                Error::Schedule(format!("table has no entry for k = {k}"))
            })?,
            SeqRule::Constant { value } => *value,
            SeqRule::Logfloor { min } => {
                let s = s_k.ok_or_else(|| Error::Schedule("logfloor rule needs s_k".into()))?;
                ((s as f64).ln().floor() as i64).max(*min)
            }
            SeqRule::Powerfloor { alpha, min } => {
                let s = s_k.ok_or_else(|| Error::Schedule("powerfloor rule needs s_k".into()))?;
                ((s as f64).powf(*alpha).floor() as i64).max(*min)
            }
        })
    }
}

impl ScheduleDoc {
    /// Desk-scale default: `s_k = k+3`, `M_k = max(3, floor ln s_k)`.
    pub fn desk() -> Self {
        ScheduleDoc {
            d: 2,
            q: 1.5,
            s: SeqRule::Affine { a: 1.0, b: 3.0 },
            m: SeqRule::Logfloor { min: 3 },
            s_tilde: TildeRule::Same(SameAsS::SameAsS),
            k: 3,
        }
    }

    /// The enumeration oracle schedule `s = (4,5,6)`, `M = (3,3,3)`.
    pub fn toy() -> Self {
        ScheduleDoc {
            s: SeqRule::Table { values: vec![4, 5, 6] },
            m: SeqRule::Constant { value: 3 },
            ..Self::desk()
        }
    }

    /// Large enough for the approximation thresholds at
    /// `(λ, ψ, η) = (0.2, 0.7, 0.2)`; navigable lazily only.
    pub fn lemma_feasible() -> Self {
        ScheduleDoc {
            d: 2,
            q: 1.1,
            s: SeqRule::Table { values: vec![10, 150_000, 160_000] },
            m: SeqRule::Table { values: vec![9, 10, 11] },
            s_tilde: TildeRule::Same(SameAsS::SameAsS),
            k: 3,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" | "default" => Some(Self::desk()),
            "toy" => Some(Self::toy()),
            "lemma" | "lemma-feasible" => Some(Self::lemma_feasible()),
            _ => None,
        }
    }

    /// Raw sequences on `1..=horizon` without validation.
    pub fn sequences(&self, horizon: u32) -> Result<(Vec<i64>, Vec<i64>, Vec<i64>)> {
        let mut s = Vec::new();
        let mut m = Vec::new();
        let mut st = Vec::new();
        for k in 1..=horizon {
            let sk = self.s.eval(k, None)?;
            s.push(sk);
            m.push(self.m.eval(k, Some(sk))?);
            st.push(match &self.s_tilde {
                TildeRule::Same(_) => sk,
                TildeRule::Rule(r) => r.eval(k, Some(sk))?,
            });
        }
        Ok((s, m, st))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Polynomial,
    LinearTilde,
    LogM,
}

/// Builds one of the three standard schedule families. `polynomial` and `log-M`
/// read `coefficients` as `F` in ascending powers; `linear-tilde` reads
/// `[a, b, F...]` and sets `s̃_k = a k + b`.
pub fn make_schedule(
    kind: ScheduleKind,
    coefficients: &[f64],
    d: usize,
    q: f64,
    k: u32,
) -> Result<ParamSchedule> {
    let (f, tilde) = match kind {
        ScheduleKind::LinearTilde => {
            if coefficients.len() < 3 {
                return Err(Error::Schedule("linear-tilde needs [a, b, F...]".into()));
            }
            if coefficients[0] <= 0.0 {
                return Err(Error::Schedule("linear-tilde needs a > 0".into()));
            }
            let t = SeqRule::Affine { a: coefficients[0], b: coefficients[1] };
            (coefficients[2..].to_vec(), TildeRule::Rule(t))
        }
        _ => (coefficients.to_vec(), TildeRule::Same(SameAsS::SameAsS)),
    };
    match f.iter().rposition(|c| *c != 0.0) {
        Some(i) if f[i] > 0.0 && i > 0 => {}
        _ => {
            return Err(Error::Schedule(
                "F needs a positive leading coefficient of positive degree".into(),
            ))
        }
    }
    let m = match kind {
        ScheduleKind::Polynomial => SeqRule::Powerfloor { alpha: 0.5, min: 3 },
        _ => SeqRule::Logfloor { min: 3 },
    };
    ParamSchedule::new(ScheduleDoc {
        d,
        q,
        s: SeqRule::Polynomial { coeffs: f },
        m,
        s_tilde: tilde,
        k,
    })
}

/// A validated schedule with its sequences tabulated over `1..=K`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSchedule {
    pub doc: ScheduleDoc,
    s: Vec<u64>,
    m: Vec<u64>,
    st: Vec<u64>,
    e: Vec<u64>,
}

impl ParamSchedule {
    pub fn new(doc: ScheduleDoc) -> Result<Self> {
        if let Some(v) = hard_violations(&doc)?.into_iter().next() {
            return Err(Error::Schedule(v));
        }
        let (s, m, st) = doc.sequences(doc.k)?;
        let s: Vec<u64> = s.into_iter().map(|x| x as u64).collect();
        let mut e = Vec::with_capacity(s.len());
        let mut acc = 0u64;
        for x in &s {
            acc += x;
            e.push(acc);
        }
        Ok(ParamSchedule {
            doc,
            s,
            m: m.into_iter().map(|x| x as u64).collect(),
            st: st.into_iter().map(|x| x as u64).collect(),
            e,
        })
    }

    pub fn toy() -> Self {
        Self::new(ScheduleDoc::toy()).expect("toy schedule is valid")
    }
    pub fn desk() -> Self {
        Self::new(ScheduleDoc::desk()).expect("desk schedule is valid")
    }
    pub fn lemma_feasible() -> Self {
        Self::new(ScheduleDoc::lemma_feasible()).expect("lemma schedule is valid")
    }

    /// Same sequences with another ratio `Q`.
    pub fn with_q(&self, q: f64) -> Result<Self> {
        Self::new(ScheduleDoc { q, ..self.doc.clone() })
    }

    pub fn d(&self) -> usize {
        self.doc.d
    }
    pub fn q(&self) -> f64 {
        self.doc.q
    }
    pub fn horizon(&self) -> u32 {
        self.doc.k
    }

    fn idx(&self, k: u32) -> Result<usize> {
        if k == 0 || k > self.doc.k {
            Err(Error::Level(k, self.doc.k))
        } else {
            Ok(k as usize - 1)
        }
    }

    /// `s_k`; panics outside `1..=K`.
    pub fn s(&self, k: u32) -> u64 {
        self.s[self.idx(k).unwrap()]
    }
    pub fn m(&self, k: u32) -> u64 {
        self.m[self.idx(k).unwrap()]
    }
    pub fn s_tilde(&self, k: u32) -> u64 {
        self.st[self.idx(k).unwrap()]
    }
    /// `E_k = s_1 + ... + s_k`, with `E_0 = 0`.
    pub fn exponent(&self, k: u32) -> u64 {
        if k == 0 {
            0
        } else {
            self.e[self.idx(k).unwrap()]
        }
    }

    /// `(E_k, Q^(-E_k))` in double precision.
    pub fn width(&self, k: u32) -> Result<(u64, f64)> {
        let i = self.idx(k)?;
        let e = self.e[i];
        Ok((e, self.q().powf(-(e as f64))))
    }

    /// `Q^n` at the precision of `proto`.
    pub fn qpow<R: Real>(&self, proto: &R, n: i64) -> R {
        proto.lit(self.q()).powi(n)
    }

    /// `w_k` at the precision of `proto`.
    pub fn width_real<R: Real>(&self, proto: &R, k: u32) -> R {
        self.qpow(proto, -(self.exponent(k) as i64))
    }

    /// Mantissa bits that resolve `w_K` against unit-size coordinates
    /// with 128 guard bits.
    pub fn working_precision(&self) -> u32 {
        let bits = self.exponent(self.horizon()) as f64 * self.q().log2();
        (bits.ceil() as u32 + 128).max(128)
    }
}

/// Hard invariant failures, each naming its clause.
pub fn hard_violations(doc: &ScheduleDoc) -> Result<Vec<String>> {
    let mut out = Vec::new();
    if doc.d < 2 {
        out.push(format!("d ≥ 2 violated: d = {}", doc.d));
    }
    if !(doc.q > 1.0 && doc.q < 2.0) {
        out.push(format!("1 < Q < 2 violated: Q = {}", doc.q));
    }
    if doc.k < 1 {
        out.push("K ≥ 1 violated: K = 0".into());
        return Ok(out);
    }
    let (s, m, st) = doc.sequences(doc.k)?;
    for k in 0..s.len() {
        if !(3 <= m[k] && m[k] <= s[k]) {
            out.push(format!(
                "3 ≤ M_k ≤ s_k violated at k = {}: M_k = {}, s_k = {}",
                k + 1,
                m[k],
                s[k]
            ));
        }
        if st[k] < s[k] {
            out.push(format!("s̃_k ≥ s_k violated at k = {}: s̃_k = {}, s_k = {}", k + 1, st[k], s[k]));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clause {
    pub clause: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValidation {
    pub horizon: u32,
    pub hard: Vec<Clause>,
    pub s_growing: bool,
    pub m_growing: bool,
    /// `M_k log(s_k) / s_k` for `k = 1..=horizon`.
    pub m_log_s_over_s: Vec<f64>,
    /// `(s̃_k − s̃_{k−1}) / s_k` for `k = 2..=horizon`.
    pub tilde_drift: Vec<f64>,
    pub m_log_s_trend: bool,
    pub tilde_drift_trend: bool,
    pub label: String,
}

impl ScheduleValidation {
    pub fn hard_pass(&self) -> bool {
        self.hard.iter().all(|c| c.pass)
    }
}

/// Non-increasing over the final half, at least the last two terms.
pub fn tail_non_increasing(xs: &[f64]) -> bool {
    let len = xs.len();
    let tail = (len.div_ceil(2)).max(2).min(len);
    xs[len - tail..].windows(2).all(|w| w[1] <= w[0])
}

pub fn validate_schedule(doc: &ScheduleDoc, horizon: u32) -> Result<ScheduleValidation> {
    if horizon > doc.k || horizon == 0 {
        return Err(Error::Invalid(format!("horizon {horizon} outside 1..={}", doc.k)));
    }
    let violations = hard_violations(doc)?;
    let clauses = [
        ("d ≥ 2", "d ≥ 2"),
        ("1 < Q < 2", "1 < Q < 2"),
        ("3 ≤ M_k ≤ s_k", "3 ≤ M_k ≤ s_k"),
        ("s̃_k ≥ s_k", "s̃_k ≥ s_k"),
    ];
    let hard = clauses
        .iter()
        .map(|(name, key)| {
            let failing: Vec<&String> = violations.iter().filter(|v| v.starts_with(key)).collect();
            Clause {
                clause: name.to_string(),
                pass: failing.is_empty(),
                detail: failing.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; "),
            }
        })
        .collect();
    let (s, m, st) = doc.sequences(horizon)?;
    let s_growing = s.windows(2).all(|w| w[1] >= w[0]) && s.last() > s.first();
    let m_growing = m.windows(2).all(|w| w[1] >= w[0]) && m.last() > m.first();
    let m_log_s_over_s: Vec<f64> = s
        .iter()
        .zip(&m)
        .map(|(&sk, &mk)| mk as f64 * (sk as f64).ln() / sk as f64)
        .collect();
    let tilde_drift: Vec<f64> =
        (1..s.len()).map(|i| (st[i] - st[i - 1]) as f64 / s[i] as f64).collect();
    Ok(ScheduleValidation {
        horizon,
        hard,
        s_growing,
        m_growing,
        m_log_s_trend: m_log_s_over_s.len() >= 2 && tail_non_increasing(&m_log_s_over_s),
        tilde_drift_trend: tilde_drift.len() >= 2 && tail_non_increasing(&tilde_drift),
        m_log_s_over_s,
        tilde_drift,
        label: "trend only".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn widths_of_desk_schedule() {
        let p = ParamSchedule::desk();
        let (e1, w1) = p.width(1).unwrap();
        assert_eq!(e1, 4);
        assert!((w1 - 16.0 / 81.0).abs() < 1e-15);
        let (e2, w2) = p.width(2).unwrap();
        assert_eq!(e2, 9);
        assert!((w2 - 1.5f64.powi(-9)).abs() < 1e-15);
        assert!(p.width(0).is_err());
        assert!(p.width(4).is_err());
    }

    #[test]
    fn json_document_roundtrip() {
        let text = r#"{"d":2,"Q":1.5,"s":{"kind":"affine","a":1,"b":3},"M":{"kind":"logfloor","min":3},"sTilde":"same-as-s","K":3}"#;
        let doc: ScheduleDoc = serde_json::from_str(text).unwrap();
        assert_eq!(doc, ScheduleDoc::desk());
        let back: ScheduleDoc = serde_json::from_str(&serde_json::to_string(&doc).unwrap()).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn linear_tilde_family() {
        let p = make_schedule(ScheduleKind::LinearTilde, &[2.0, 3.0, 3.0, 1.0], 2, 1.5, 4).unwrap();
        assert_eq!((1..=4).map(|k| p.s(k)).collect::<Vec<_>>(), vec![4, 5, 6, 7]);
        assert_eq!((1..=4).map(|k| p.s_tilde(k)).collect::<Vec<_>>(), vec![5, 7, 9, 11]);
    }

    #[test]
    fn log_m_family() {
        let p = make_schedule(ScheduleKind::LogM, &[3.0, 1.0], 2, 1.5, 4).unwrap();
        assert_eq!((1..=4).map(|k| p.m(k)).collect::<Vec<_>>(), vec![3, 3, 3, 3]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let bad = ScheduleDoc { s: SeqRule::Constant { value: 2 }, ..ScheduleDoc::desk() };
        let err = ParamSchedule::new(bad).unwrap_err().to_string();
        assert!(err.contains("3 ≤ M_k ≤ s_k"), "{err}");
        assert!(make_schedule(ScheduleKind::LogM, &[3.0, 1.0], 2, 2.0, 4).is_err());
        assert!(make_schedule(ScheduleKind::LogM, &[3.0, -1.0], 2, 1.5, 4).is_err());
    }

    #[test]
    fn trend_report() {
        let mut doc = ScheduleDoc::desk();
        doc.k = 4;
        let v = validate_schedule(&doc, 4).unwrap();
        let want = [1.0 / 5.0, 1.0 / 6.0, 1.0 / 7.0];
        for (a, b) in v.tilde_drift.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(v.tilde_drift_trend);
        assert!(v.s_growing);
        assert_eq!(v.label, "trend only");

        let flat = ScheduleDoc { s: SeqRule::Constant { value: 5 }, ..doc.clone() };
        assert!(!validate_schedule(&flat, 4).unwrap().s_growing);

        let m_eq_s = ScheduleDoc { m: SeqRule::Affine { a: 1.0, b: 3.0 }, ..doc };
        let v = validate_schedule(&m_eq_s, 4).unwrap();
        for (k, x) in v.m_log_s_over_s.iter().enumerate() {
            assert!((x - ((k + 4) as f64).ln()).abs() < 1e-12);
        }
        assert!(!v.m_log_s_trend);
    }

    #[test]
    fn lemma_preset_precision() {
        let p = ParamSchedule::lemma_feasible();
        assert_eq!(p.exponent(3), 310_010);
        assert!(p.working_precision() > 42_000);
    }
}
