use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use udset::dimension::{check_claim, empirical_box_count, theoretical_report};
use udset::error::{Error, Result};
use udset::geometry::{random_unit, Direction, Point};
use udset::hierarchy::{count_ledger, cover_audit, enumerate_level, Construction, ConstructionOptions, JPolicy, GROUP_BUDGET};
use udset::io::{Format, Output, RunConfig};
use udset::lemmas::{audit, random_ball, sample_chain, LemmaKind, LemmaParams, Lemmas};
use udset::params::{validate_schedule, ParamSchedule, ScheduleDoc};
use udset::probes::{porosity_scan, uds_hypothesis_trial};
use udset::real::Real;
use udset::setmodel::{sample_points, sample_truncation};

#[derive(Parser)]
#[command(name = "udset", version, about = "Finite-depth construction of a dimension-one universal differentiability set")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Schedule document (JSON).
    #[arg(long, global = true)]
    schedule: Option<PathBuf>,
    /// Built-in schedule: desk, toy or lemma-feasible.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    budget: Option<u64>,
    /// Truncation depth K (defaults to the schedule's horizon).
    #[arg(long, global = true)]
    levels: Option<u32>,
    #[arg(long, global = true, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Use only the first n members of every direction net.
    #[arg(long, global = true)]
    dir_limit: Option<u64>,
    #[arg(long, global = true, value_enum)]
    j_policy: Option<JPolicyArg>,
    #[arg(long, global = true, default_value_t = 0)]
    net_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum JPolicyArg {
    All,
    TopTwo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Truncation,
    Segment,
    Square,
    Theoretical,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Basic,
    Approx,
    C1,
    Crucial,
    C3,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the schedule's hard invariants and report trend diagnostics.
    Validate,
    /// Count ledger, materialized levels and cover audits.
    Build {
        /// Cover-audit points per level.
        #[arg(long, default_value_t = 1000)]
        cover_points: u64,
    },
    /// Box-counting estimate.
    Boxcount {
        #[arg(long, value_enum, default_value = "truncation")]
        target: Target,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        /// Explicit scales (comma separated).
        #[arg(long, value_delimiter = ',')]
        scales: Option<Vec<f64>>,
        /// Number of log-spaced scales when none are given.
        #[arg(long, default_value_t = 8)]
        n_scales: usize,
    },
    /// The boundedness sequence in log form for each exponent p.
    Claim {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.2, 1.5, 1.8])]
        p: Vec<f64>,
    },
    /// Randomized audit of one approximation lemma.
    Lemma {
        #[arg(value_enum)]
        which: Which,
        #[arg(long, default_value_t = 100)]
        trials: u64,
        #[arg(long, default_value_t = 0.2)]
        lambda: f64,
        #[arg(long, default_value_t = 0.7)]
        psi: f64,
        #[arg(long, default_value_t = 0.2)]
        eta: f64,
        /// Run one trial at δ = Q^x instead (crucial and c3 only).
        #[arg(long, allow_hyphen_values = true)]
        delta_exp: Option<f64>,
    },
    /// Monte-Carlo porosity scan at a sampled point.
    Porosity {
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 6)]
        radii: usize,
        #[arg(long, default_value_t = 2000)]
        trials: u64,
    },
    /// Sample points of M_λ with witness chains.
    Sample {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Include the tube thickness (points of the truncation of M_1).
        #[arg(long)]
        thick: bool,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Validate => "validate",
            Cmd::Build { .. } => "build",
            Cmd::Boxcount { .. } => "boxcount",
            Cmd::Claim { .. } => "claim",
            Cmd::Lemma { .. } => "lemma",
            Cmd::Porosity { .. } => "porosity",
            Cmd::Sample { .. } => "sample",
        }
    }

    fn args(&self, c: &Common) -> BTreeMap<String, serde_json::Value> {
        let mut a = BTreeMap::new();
        a.insert("levels".into(), json!(c.levels));
        a.insert("budget".into(), json!(c.budget));
        match self {
            Cmd::Validate => {}
            Cmd::Build { cover_points } => {
                a.insert("cover_points".into(), json!(cover_points));
            }
            Cmd::Boxcount { target, samples, scales, n_scales } => {
                let t = match target {
                    Target::Truncation => "truncation",
                    Target::Segment => "segment",
                    Target::Square => "square",
                    Target::Theoretical => "theoretical",
                };
                a.insert("target".into(), json!(t));
                a.insert("samples".into(), json!(samples));
                a.insert("scales".into(), json!(scales));
                a.insert("n_scales".into(), json!(n_scales));
            }
            Cmd::Claim { p } => {
                a.insert("p".into(), json!(p));
            }
            Cmd::Lemma { which, trials, lambda, psi, eta, delta_exp } => {
                a.insert("which".into(), json!(kind(*which).name()));
                a.insert("trials".into(), json!(trials));
                a.insert("params".into(), json!([lambda, psi, eta]));
                a.insert("delta_exp".into(), json!(delta_exp));
            }
            Cmd::Porosity { samples, radii, trials } => {
                a.insert("samples".into(), json!(samples));
                a.insert("radii".into(), json!(radii));
                a.insert("trials".into(), json!(trials));
            }
            Cmd::Sample { samples, lambda, thick } => {
                a.insert("samples".into(), json!(samples));
                a.insert("lambda".into(), json!(lambda));
                a.insert("thick".into(), json!(thick));
            }
        }
        a
    }
}

fn kind(w: Which) -> LemmaKind {
    match w {
        Which::Basic => LemmaKind::Basic,
        Which::Approx => LemmaKind::Approx,
        Which::C1 => LemmaKind::C1,
        Which::Crucial => LemmaKind::Crucial,
        Which::C3 => LemmaKind::C3,
    }
}

fn load_schedule(c: &Common, cmd: &Cmd) -> Result<(ScheduleDoc, String)> {
    if let Some(path) = &c.schedule {
        let text = fs::read_to_string(path)?;
        return Ok((serde_json::from_str(&text)?, "file".into()));
    }
    let name = c.preset.clone().unwrap_or_else(|| if matches!(cmd, Cmd::Lemma { .. }) { "lemma-feasible" } else { "desk" }.into());
    let doc = ScheduleDoc::preset(&name).ok_or_else(|| Error::Invalid(format!("unknown preset {name:?}")))?;
    Ok((doc, name))
}

fn options(c: &Common, preset: &str) -> ConstructionOptions {
    let base = if preset == "toy" { ConstructionOptions::toy() } else { ConstructionOptions::default() };
    ConstructionOptions {
        dir_limit: c.dir_limit.or(base.dir_limit),
        j_policy: match c.j_policy {
            Some(JPolicyArg::All) => JPolicy::All,
            Some(JPolicyArg::TopTwo) => JPolicy::TopTwo,
            None => base.j_policy,
        },
        net_seed: c.net_seed,
    }
}

/// Schedules whose deepest width is resolvable in double precision.
fn fits_f64(s: &ParamSchedule) -> bool {
    s.exponent(s.horizon()) as f64 * s.q().log2() <= 40.0
}

fn depth(c: &Common, s: &ParamSchedule) -> Result<u32> {
    let k = c.levels.unwrap_or(s.horizon());
    if k == 0 || k > s.horizon() {
        return Err(Error::Level(k, s.horizon()));
    }
    Ok(k)
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n < 2 {
        return vec![hi];
    }
    (0..n).map(|i| hi * (lo / hi).powf(i as f64 / (n - 1) as f64)).collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Violation(_) | Error::HorizonInsufficient(_) | Error::Budget(_) => ExitCode::from(1),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    let c = &cli.common;
    let (doc, preset) = load_schedule(c, &cli.cmd)?;
    let config = RunConfig {
        command: cli.cmd.name().into(),
        schedule: doc.clone(),
        options: options(c, &preset),
        seed: c.seed,
        format: match c.format {
            FormatArg::Csv => Format::Csv,
            FormatArg::Json => Format::Json,
        },
        args: cli.cmd.args(c),
        out: Some(c.out.clone()),
    };
    if let Cmd::Validate = cli.cmd {
        let v = validate_schedule(&doc, c.levels.unwrap_or(doc.k))?;
        let out = Output::create(&c.out, &config)?;
        out.json("validation.json", &v)?;
        for cl in &v.hard {
            let tag = if cl.pass { "PASS" } else { "FAIL" };
            println!("{tag} {} {}", cl.clause, cl.detail);
        }
        println!("trend ({}): m log s / s non-increasing = {}, s̃ drift non-increasing = {}", v.label, v.m_log_s_trend, v.tilde_drift_trend);
        return Ok(v.hard_pass());
    }
    let sched = ParamSchedule::new(doc)?;
    let out = Output::create(&c.out, &config)?;
    let fmt = config.format;
    let opts = config.options.clone();
    match cli.cmd {
        Cmd::Validate => unreachable!(),
        Cmd::Build { cover_points } => {
            let k = depth(c, &sched)?;
            let con = Construction::f64(sched.clone(), opts)?;
            let b = enumerate_level(&con, k, c.budget.unwrap_or(3_000_000))?;
            let mut covers = Vec::new();
            for kk in 1..=k {
                if fits_f64(&sched) {
                    covers.push(cover_audit(&con, kk, cover_points, config.seed.wrapping_add(kk as u64))?);
                } else {
                    let hp = Construction::hp(sched.clone(), config.options.clone())?;
                    covers.push(cover_audit(&hp, kk, cover_points, config.seed.wrapping_add(kk as u64))?);
                }
            }
            match fmt {
                Format::Csv => out.csv("ledger.csv", |w| b.ledger.write_csv(w))?,
                Format::Json => out.json("ledger.json", &b.ledger)?,
            };
            let covers_ok = covers.iter().all(|a| a.failures == 0);
            let pass = b.ledger.pass() && covers_ok;
            out.json(
                "summary.json",
                &json!({
                    "pass": pass,
                    "ledger_pass": b.ledger.pass(),
                    "violations": b.ledger.violations(),
                    "partial": b.partial,
                    "materialized_to": b.materialized_to,
                    "levels": b.ledger.levels,
                    "cover_audits": covers,
                }),
            )?;
            for l in &b.ledger.levels {
                println!("k={} lines={} cubes={} pass={}", l.k, l.lines, l.cubes, l.pass);
            }
            if b.partial {
                println!("partial: lines materialized to level {} only", b.materialized_to);
            }
            Ok(pass)
        }
        Cmd::Boxcount { target, samples, scales, n_scales } => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let report = match target {
                Target::Theoretical => {
                    let k = depth(c, &sched)?;
                    let con = Construction::f64(sched.clone(), opts)?;
                    let ledger = count_ledger(&con, k, c.budget.unwrap_or(GROUP_BUDGET))?;
                    theoretical_report(&sched, &ledger)?
                }
                Target::Segment | Target::Square => {
                    let sq = matches!(target, Target::Square);
                    let pts: Vec<Vec<f64>> =
                        (0..samples).map(|_| vec![rng.gen::<f64>(), if sq { rng.gen::<f64>() } else { 0.0 }]).collect();
                    let sc = scales.unwrap_or_else(|| (2..=8).map(|j| 0.5f64.powi(j)).collect());
                    empirical_box_count(&pts, &sc, None)?
                }
                Target::Truncation => {
                    let k = depth(c, &sched)?;
                    let (_, w1) = sched.width(1)?;
                    let (_, wk) = sched.width(sched.horizon())?;
                    let sc = scales.unwrap_or_else(|| log_spaced(wk, w1, n_scales));
                    let pts = if fits_f64(&sched) {
                        let con = Construction::f64(sched.clone(), opts)?;
                        sample_truncation(&con, k, samples, config.seed)?.into_iter().map(|(p, _)| p.0).collect::<Vec<_>>()
                    } else {
                        let con = Construction::hp(sched.clone(), opts)?;
                        sample_truncation(&con, k, samples, config.seed)?.into_iter().map(|(p, _)| p.to_f64().0).collect()
                    };
                    empirical_box_count(&pts, &sc, Some((wk, w1)))?
                }
            };
            match fmt {
                Format::Csv => out.csv("boxcount.csv", |w| report.write_csv(w))?,
                Format::Json => out.json("boxcount.json", &report)?,
            };
            out.json("boxcount_summary.json", &json!({ "slope": report.slope, "refused": report.refused }))?;
            match &report.slope {
                Some(s) => println!("slope {:.4} over {} scales (rms residual {:.3e})", s.slope, s.points, s.residual),
                None => println!("no slope: fewer than three usable scales"),
            }
            Ok(report.slope.is_some())
        }
        Cmd::Claim { p } => {
            let k = depth(c, &sched)?;
            let con = Construction::f64(sched.clone(), opts)?;
            let ledger = count_ledger(&con, k, c.budget.unwrap_or(GROUP_BUDGET))?;
            let reports = p.iter().map(|&p| check_claim(p, k, &sched, &ledger)).collect::<Result<Vec<_>>>()?;
            match fmt {
                Format::Csv => out.csv("claim.csv", |w| {
                    let mut wr = csv::Writer::from_writer(w);
                    wr.write_record(["p", "k", "ln_term", "ln_term_tilde"])?;
                    for r in &reports {
                        for (i, (a, b)) in r.ln_terms.iter().zip(&r.ln_terms_tilde).enumerate() {
                            wr.write_record([r.p.to_string(), (i + 1).to_string(), format!("{a:.9}"), format!("{b:.9}")])?;
                        }
                    }
                    wr.flush()?;
                    Ok(())
                })?,
                Format::Json => out.json("claim.json", &reports)?,
            };
            out.json("claim_summary.json", &reports)?;
            for r in &reports {
                println!("p={} verdict={} (s̃ variant: {}) ln terms {:?}", r.p, r.verdict, r.verdict_tilde, r.ln_terms);
            }
            Ok(reports.iter().all(|r| r.finite && r.verdict == "bounded-trend"))
        }
        Cmd::Lemma { which, trials, lambda, psi, eta, delta_exp } => {
            let params = LemmaParams::new(lambda, psi, eta)?;
            let con = Construction::hp(sched.clone(), opts)?;
            let k = kind(which);
            if let Some(x) = delta_exp {
                return single_trial(&con, k, params, x, config.seed, &out);
            }
            let (report, extra) = if k == LemmaKind::C3 {
                let h = uds_hypothesis_trial(&con, params, trials, config.seed)?;
                let extra = json!({ "rechecked": h.rechecked, "recheck_failures": h.recheck_failures, "pass": h.pass });
                (h.audit, Some((extra, h.pass)))
            } else {
                (audit(&con, k, params, trials, config.seed)?, None)
            };
            out.jsonl("transcript.jsonl", |w| report.write_jsonl(w))?;
            match fmt {
                Format::Csv => out.csv("summary.csv", |w| report.write_csv(w))?,
                Format::Json => out.json("summary.json", &report.records.iter().map(|r| json!({
                    "trial": r.trial, "pass": r.pass, "worst_slack": r.worst_slack,
                    "log_q_delta": r.log_q_delta, "n": r.n, "t": r.t })).collect::<Vec<_>>())?,
            };
            let pass = extra.as_ref().map_or(report.pass(), |(_, p)| *p);
            out.json(
                "report.json",
                &json!({
                    "op": k.name(), "params": params, "requested": report.requested, "counted": report.counted,
                    "passes": report.passes, "vacuous": report.vacuous, "worst_slack": report.worst_slack,
                    "recheck": extra.map(|(e, _)| e), "pass": pass,
                }),
            )?;
            let slack = report.worst_slack.map_or("n/a".to_string(), |s| format!("{s:.4}"));
            println!("{}: {}/{} passed ({} vacuous draws), worst slack {slack}", k, report.passes, report.counted, report.vacuous);
            for r in report.records.iter().filter(|r| !r.pass) {
                println!("  trial {}: {}", r.trial, r.error.clone().unwrap_or_default());
            }
            Ok(pass)
        }
        Cmd::Porosity { samples, radii, trials } => {
            let k = depth(c, &sched)?;
            let pts: Vec<Vec<f64>> = if fits_f64(&sched) {
                let con = Construction::f64(sched.clone(), opts)?;
                sample_truncation(&con, k, samples, config.seed)?.into_iter().map(|(p, _)| p.0).collect()
            } else {
                let con = Construction::hp(sched.clone(), opts)?;
                sample_truncation(&con, k, samples, config.seed)?.into_iter().map(|(p, _)| p.to_f64().0).collect()
            };
            let (_, w1) = sched.width(1)?;
            let (_, wk) = sched.width(k)?;
            let lo = 10.0 * wk;
            if lo > w1 {
                return Err(Error::Invalid("trust window [10 w_K, w_1] is empty".into()));
            }
            let x = pts[0].clone();
            let est = porosity_scan(&pts, &x, &log_spaced(lo, w1, radii), (lo, w1), k, trials, config.seed)?;
            out.json("porosity.json", &est)?;
            for (r, q) in est.radii.iter().zip(&est.per_radius) {
                println!("r={r:.4e} ratio={q:.4}");
            }
            Ok(true)
        }
        Cmd::Sample { samples, lambda, thick } => {
            let k = depth(c, &sched)?;
            if fits_f64(&sched) {
                let con = Construction::f64(sched.clone(), opts)?;
                write_samples(&con, k, samples, lambda, thick, config.seed, fmt, &out)
            } else {
                let con = Construction::hp(sched.clone(), opts)?;
                write_samples(&con, k, samples, lambda, thick, config.seed, fmt, &out)
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn write_samples<R: Real>(
    con: &Construction<R>,
    k: u32,
    n: usize,
    lambda: f64,
    thick: bool,
    seed: u64,
    fmt: Format,
    out: &Output,
) -> Result<bool> {
    let s = if thick { sample_truncation(con, k, n, seed)? } else { sample_points(con, lambda, k, n, seed)? };
    match fmt {
        Format::Csv => out.csv("samples.csv", |w| {
            let mut wr = csv::Writer::from_writer(w);
            let mut head = vec!["index".to_string()];
            head.extend((0..con.d()).map(|i| format!("x{i}")));
            wr.write_record(&head)?;
            for (i, (p, _)) in s.iter().enumerate() {
                let mut row = vec![i.to_string()];
                row.extend(p.0.iter().map(|c| format!("{:e}", c.to_f64())));
                wr.write_record(&row)?;
            }
            wr.flush()?;
            Ok(())
        })?,
        Format::Json => out.jsonl("samples.jsonl", |w| {
            for (_, ch) in &s {
                serde_json::to_writer(&mut *w, ch)?;
                w.push(b'\n');
            }
            Ok(())
        })?,
    };
    println!("{} points written", s.len());
    Ok(true)
}

fn single_trial<R: Real>(con: &Construction<R>, k: LemmaKind, params: LemmaParams, x: f64, seed: u64, out: &Output) -> Result<bool> {
    let eng = Lemmas::new(con);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chain = sample_chain(con, params.lambda, rng.gen())?;
    let p = con.proto();
    let q = p.lit(con.sched().q());
    let delta = q.powi(x.floor() as i64) * p.lit(con.sched().q().powf(x - x.floor()));
    let checks = match k {
        LemmaKind::Crucial => {
            let e = Direction(Point(random_unit(&mut rng, con.d())).lift(p));
            eng.approximate_at_scale(&chain, &e, &delta, params)?.checks
        }
        LemmaKind::C3 => {
            let v = [random_ball(&mut rng, con.d()), random_ball(&mut rng, con.d()), random_ball(&mut rng, con.d())];
            eng.wedge(&chain, &delta, &v, params)?.checks
        }
        _ => return Err(Error::Invalid("--delta-exp applies to crucial and c3 only".into())),
    };
    out.json("single.json", &json!({ "op": k.name(), "delta_exp": x, "checks": checks }))?;
    println!("{k}: all {} checks hold", checks.len());
    Ok(true)
}
