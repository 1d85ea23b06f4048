//! Batch driver: run plans, strict config parsing, Reynolds continuation
//! and CSV output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;

use crate::diagnostics::{path_csv, sample_path, SamplePath, SwellReport, REPORT_HEADER};
use crate::error::{Result, SwellError};
use crate::ns_solver::{solve_stick_slip, SimConfig, Simulation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Single,
    ReSweep,
    SlipStudy,
    PSweep,
}

impl FromStr for RunMode {
    type Err = SwellError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(RunMode::Single),
            "re_sweep" => Ok(RunMode::ReSweep),
            "slip_study" => Ok(RunMode::SlipStudy),
            "p_sweep" => Ok(RunMode::PSweep),
            _ => Err(SwellError::Config(format!(
                "unknown mode '{s}' (expected single, re_sweep, slip_study or p_sweep)"
            ))),
        }
    }
}

/// The continuation ladder: 0, then 1..10 step 1, then 20..100 step 10.
pub fn re_ladder() -> Vec<f64> {
    let mut v = vec![0.0];
    v.extend((1..=10).map(f64::from));
    v.extend((2..=10).map(|k| f64::from(k * 10)));
    v
}

/// Ladder rungs strictly below `target`, followed by `target`.
pub fn ladder_to(target: f64) -> Vec<f64> {
    let mut v: Vec<f64> = re_ladder().into_iter().filter(|&r| r < target).collect();
    v.push(target);
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub mode: RunMode,
    pub base: SimConfig,
    /// Reynolds numbers reported by `re_sweep`
    pub re_values: Vec<f64>,
    /// slip parameters of `slip_study`
    pub b_sl_values: Vec<f64>,
    /// orders of `slip_study` and `p_sweep`
    pub p_values: Vec<usize>,
    pub out: PathBuf,
    /// write and reuse `checkpoints/<re>.ckpt`
    pub checkpoint: bool,
    /// samples per profile CSV
    pub path_points: usize,
}

impl Default for RunPlan {
    fn default() -> Self {
        RunPlan {
            mode: RunMode::Single,
            base: SimConfig::default(),
            re_values: re_ladder(),
            b_sl_values: vec![0.01, 0.1],
            p_values: vec![10, 12, 14],
            out: PathBuf::from("out"),
            checkpoint: true,
            path_points: 201,
        }
    }
}

const KEYS: [&str; 18] = [
    "mode",
    "re",
    "b_sl",
    "sigma",
    "p",
    "dt",
    "l1",
    "l2",
    "h",
    "steady_tol",
    "max_steps",
    "accelerate",
    "re_values",
    "b_sl_values",
    "p_values",
    "out",
    "checkpoint",
    "path_points",
];

/// Where a setting came from, for error messages.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Origin(pub String);

/// Splits config text into `(key, value, origin)` settings. Lines hold one
/// or more `key = value` pairs; `#` starts a comment.
pub fn tokenize(text: &str, source: &str) -> Result<Vec<(String, String, Origin)>> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        // glue `a = b` and `x, y` into single tokens
        let mut glued = String::new();
        let mut pending_space = false;
        for c in line.chars() {
            if c.is_whitespace() {
                pending_space = true;
                continue;
            }
            let joins = c == '=' || c == ',' || glued.ends_with('=') || glued.ends_with(',');
            if pending_space && !glued.is_empty() && !joins {
                glued.push(' ');
            }
            pending_space = false;
            glued.push(c);
        }
        for tok in glued.split_whitespace() {
            let (k, v) = tok.split_once('=').ok_or_else(|| {
                SwellError::Config(format!("{source}:{}: expected 'key = value', found '{tok}'", ln + 1))
            })?;
            if k.is_empty() || v.is_empty() || v.contains('=') {
                return Err(SwellError::Config(format!("{source}:{}: malformed setting '{tok}'", ln + 1)));
            }
            out.push((k.to_ascii_lowercase(), v.to_string(), Origin(format!("{source}:{}", ln + 1))));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, v: &str, at: &Origin) -> Result<T> {
    v.parse()
        .map_err(|_| SwellError::Config(format!("{}: cannot parse '{v}' for '{key}'", at.0)))
}

fn parse_list<T: FromStr>(key: &str, v: &str, at: &Origin) -> Result<Vec<T>> {
    v.split(',').filter(|s| !s.is_empty()).map(|s| parse_value(key, s, at)).collect()
}

fn parse_bool(key: &str, v: &str, at: &Origin) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(SwellError::Config(format!("{}: '{key}' expects true or false, got '{v}'", at.0))),
    }
}

/// Resolves config file settings and command-line overrides into a plan.
/// Unknown keys and a key given twice with different values in the same
/// layer are errors; overrides replace file values.
pub fn parse_config(file: &[(String, String, Origin)], overrides: &[(String, String, Origin)]) -> Result<RunPlan> {
    let mut merged: BTreeMap<String, (String, Origin)> = BTreeMap::new();
    for layer in [file, overrides] {
        let mut seen: BTreeMap<&str, (&str, &Origin)> = BTreeMap::new();
        for (k, v, at) in layer {
            if !KEYS.contains(&k.as_str()) {
                return Err(SwellError::Config(format!("{}: unknown key '{k}'", at.0)));
            }
            if let Some((old, first)) = seen.get(k.as_str()) {
                if *old != v.as_str() {
                    return Err(SwellError::Config(format!(
                        "'{k}' set to '{old}' at {} and to '{v}' at {}",
                        first.0, at.0
                    )));
                }
            }
            seen.insert(k, (v, at));
            merged.insert(k.clone(), (v.clone(), at.clone()));
        }
    }
    let mut plan = RunPlan::default();
    for (k, (v, at)) in &merged {
        let cfg = &mut plan.base;
        match k.as_str() {
            "mode" => plan.mode = v.parse()?,
            "re" => cfg.re = parse_value(k, v, at)?,
            "b_sl" => cfg.b_sl = parse_value(k, v, at)?,
            "sigma" => cfg.sigma = parse_value(k, v, at)?,
            "p" => cfg.order = parse_value(k, v, at)?,
            "dt" => cfg.dt = parse_value(k, v, at)?,
            "l1" => cfg.l1 = parse_value(k, v, at)?,
            "l2" => cfg.l2 = parse_value(k, v, at)?,
            "h" => cfg.h = parse_value(k, v, at)?,
            "steady_tol" => cfg.steady_tol = parse_value(k, v, at)?,
            "max_steps" => cfg.max_steps = parse_value(k, v, at)?,
            "accelerate" => cfg.accelerate = parse_bool(k, v, at)?,
            "re_values" => plan.re_values = parse_list(k, v, at)?,
            "b_sl_values" => plan.b_sl_values = parse_list(k, v, at)?,
            "p_values" => plan.p_values = parse_list(k, v, at)?,
            "out" => plan.out = PathBuf::from(v),
            "checkpoint" => plan.checkpoint = parse_bool(k, v, at)?,
            "path_points" => plan.path_points = parse_value(k, v, at)?,
            _ => unreachable!("key list checked above"),
        }
    }
    plan.base.validate().map_err(|e| SwellError::Config(e.to_string()))?;
    if plan.path_points < 2 {
        return Err(SwellError::Config("path_points must be at least 2".into()));
    }
    for &p in &plan.p_values {
        if p < 2 {
            return Err(SwellError::Config(format!("p_values entry {p} is below 2")));
        }
    }
    for &b in &plan.b_sl_values {
        if !(b >= 0.0) {
            return Err(SwellError::Config(format!("b_sl_values entry {b} is negative")));
        }
    }
    let mut last = f64::NEG_INFINITY;
    for &r in &plan.re_values {
        if !(r >= 0.0) || r <= last {
            return Err(SwellError::Config("re_values must be non-negative and increasing".into()));
        }
        last = r;
    }
    Ok(plan)
}

/// Formats a parameter for file names (`0`, `2.5`, `100`).
fn tag(x: f64) -> String {
    format!("{x}")
}

/// One continuation ladder at fixed order and slip.
struct Leg<'a> {
    plan: &'a RunPlan,
    cfg: SimConfig,
    dir: PathBuf,
}

impl Leg<'_> {
    fn checkpoint_path(&self, re: f64) -> PathBuf {
        self.dir.join("checkpoints").join(format!("{}.ckpt", tag(re)))
    }

    /// Runs stick-slip, then every rung of `ladder`, returning the reports
    /// of the rungs listed in `report`.
    fn run(&self, ladder: &[f64], report: &[f64]) -> Result<Vec<SwellReport>> {
        fs::create_dir_all(self.dir.join("checkpoints"))?;
        let mesh = self.cfg.build_mesh()?;
        let mut start = self.cfg.clone();
        start.re = 0.0;
        let init = solve_stick_slip(&mesh, &start)?;
        let mut sim = Simulation::new(start, mesh, init)?;
        let mut rows = Vec::new();
        for &re in ladder {
            sim.set_config(SimConfig { re, ..self.cfg.clone() })?;
            let ckpt = self.checkpoint_path(re);
            if self.plan.checkpoint && ckpt.exists() {
                info!("Re = {re}: resuming from {}", ckpt.display());
                sim.restore(&fs::read_to_string(&ckpt)?)?;
            } else {
                info!("Re = {re}, P = {}, B_sl = {}: running to steady state", self.cfg.order, self.cfg.b_sl);
                let outcome = sim.run_to_steady()?;
                if !outcome.converged {
                    return Err(SwellError::NotConverged {
                        steps: outcome.steps,
                        change: outcome.last_change,
                    });
                }
                if self.plan.checkpoint {
                    let tmp = ckpt.with_extension("tmp");
                    fs::write(&tmp, sim.checkpoint())?;
                    fs::rename(&tmp, &ckpt)?;
                }
            }
            if report.contains(&re) {
                let row = SwellReport::from_simulation(&sim, sim.steps)?;
                self.write_profiles(&sim, re)?;
                info!("Re = {re}: chi_R = {:.6}, n_ex = {:.6}", row.chi_r, row.n_ex);
                rows.push(row);
            }
        }
        Ok(rows)
    }

    fn write_profiles(&self, sim: &Simulation, re: f64) -> Result<()> {
        let re_tag = tag(re);
        if let Some(s) = sim.spline()? {
            fs::write(self.dir.join(format!("spline_Re{re_tag}.csv")), s.to_csv())?;
        }
        let paths = [
            SamplePath::Centerline,
            SamplePath::FreeSurface,
            SamplePath::Wall,
            SamplePath::CrossSection(0.0),
            SamplePath::CrossSection(sim.cfg.l2),
        ];
        for path in paths {
            let samples = sample_path(&sim.mesh, &sim.state, &sim.cfg, path, self.plan.path_points)?;
            fs::write(
                self.dir.join(format!("path_{}_Re{re_tag}.csv", path.name())),
                path_csv(&samples),
            )?;
        }
        Ok(())
    }
}

fn write_report(path: &Path, rows: &[SwellReport]) -> Result<()> {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// Executes a plan: per ladder, stick-slip initialization, the Re = 0 swell
/// and warm-started continuation. Writes `swell_report.csv` in `out` after
/// every reported run, and profiles and checkpoints per case.
pub fn run_plan(plan: &RunPlan) -> Result<Vec<SwellReport>> {
    fs::create_dir_all(&plan.out)?;
    let report = plan.out.join("swell_report.csv");
    let mut rows = Vec::new();
    let case_dir = |cfg: &SimConfig| plan.out.join(format!("P{}_Bsl{}", cfg.order, tag(cfg.b_sl)));
    let mut cases: Vec<(SimConfig, Vec<f64>, Vec<f64>)> = Vec::new();
    match plan.mode {
        RunMode::Single => {
            let target = plan.base.re;
            cases.push((plan.base.clone(), ladder_to(target), vec![target]));
        }
        RunMode::ReSweep => {
            let top = plan.re_values.last().copied().unwrap_or(0.0);
            let mut ladder: Vec<f64> = re_ladder().into_iter().filter(|&r| r <= top).collect();
            ladder.extend(plan.re_values.iter().copied());
            ladder.sort_by(f64::total_cmp);
            ladder.dedup();
            cases.push((plan.base.clone(), ladder, plan.re_values.clone()));
        }
        RunMode::SlipStudy => {
            for &p in &plan.p_values {
                for &b in &plan.b_sl_values {
                    let cfg = SimConfig {
                        order: p,
                        b_sl: b,
                        ..plan.base.clone()
                    };
                    let target = cfg.re;
                    cases.push((cfg, ladder_to(target), vec![target]));
                }
            }
        }
        RunMode::PSweep => {
            for &p in &plan.p_values {
                let cfg = SimConfig {
                    order: p,
                    ..plan.base.clone()
                };
                let target = cfg.re;
                cases.push((cfg, ladder_to(target), vec![target]));
            }
        }
    }
    for (cfg, ladder, wanted) in cases {
        let leg = Leg {
            plan,
            dir: case_dir(&cfg),
            cfg,
        };
        for row in leg.run(&ladder, &wanted)? {
            rows.push(row);
            write_report(&report, &rows)?;
        }
    }
    write_report(&report, &rows)?;
    Ok(rows)
}
