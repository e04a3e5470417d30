//! Multi-seed experiment plans: config files, run directories, aggregate
//! score reports and Q-error comparisons across variants.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use indexmap::IndexMap;

use crate::agent::{run_training, AgentConfig};
use crate::envs::env_spec;
use crate::error::{Error, Result};
use crate::eval::{iqm, median, optimality_gap};
use crate::losses::Variant;

/// One `(env, variant, seed)` run.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Cell {
    pub env: String,
    pub variant: Variant,
    pub seed: u64,
}

impl Cell {
    /// `root/<env>/<variant>/seed_<seed>`.
    pub fn run_dir(&self, root: &Path) -> PathBuf {
        root.join(&self.env)
            .join(self.variant.name())
            .join(format!("seed_{}", self.seed))
    }
}

/// A resolved experiment: cells plus the shared config overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentPlan {
    pub envs: Vec<String>,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub output_root: PathBuf,
    /// `AgentConfig` keys applied on top of each env's defaults, in file
    /// order.
    pub overrides: IndexMap<String, String>,
}

const PLAN_KEYS: [&str; 4] = ["env", "variant", "seeds", "output_root"];

fn config_err(line: usize, message: impl Into<String>) -> Error {
    Error::Config {
        line,
        message: message.into(),
    }
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

impl ExperimentPlan {
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for env in &self.envs {
            for &variant in &self.variants {
                for &seed in &self.seeds {
                    out.push(Cell {
                        env: env.clone(),
                        variant,
                        seed,
                    });
                }
            }
        }
        out
    }

    /// The agent config of `cell`: env defaults, then overrides, then the
    /// cell's variant and seed.
    pub fn config_for(&self, cell: &Cell) -> Result<AgentConfig> {
        let mut cfg = AgentConfig::for_env(&cell.env)?;
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.variant = cell.variant;
        cfg.seed = cell.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.envs.is_empty() {
            return Err(config_err(0, "missing `env`"));
        }
        if self.variants.is_empty() || self.seeds.is_empty() {
            return Err(config_err(0, "plan needs at least one variant and one seed"));
        }
        let cells = self.cells();
        let mut seen = std::collections::HashSet::new();
        for c in &cells {
            if !seen.insert(c.clone()) {
                return Err(config_err(
                    0,
                    format!("duplicate cell {} / {} / seed {}", c.env, c.variant, c.seed),
                ));
            }
            self.config_for(c).map_err(|e| config_err(0, e.to_string()))?;
        }
        Ok(())
    }

    /// Text form accepted by [`parse_config_str`].
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "env = {}", self.envs.join(", "));
        let v: Vec<&str> = self.variants.iter().map(|v| v.name()).collect();
        let _ = writeln!(out, "variant = {}", v.join(", "));
        let s: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "seeds = {}", s.join(", "));
        let _ = writeln!(out, "output_root = {}", self.output_root.display());
        for (k, v) in &self.overrides {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

/// Parses a flat `key = value` config (`#` starts a comment). `env` is
/// required; `variant` and `seeds` take comma-separated lists and default to
/// `VCR` and `1`; `output_root` defaults to `runs`. Every other key must be
/// an [`AgentConfig`] key.
pub fn parse_config_str(text: &str) -> Result<ExperimentPlan> {
    let mut seen: IndexMap<String, (usize, String)> = IndexMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(config_err(line_no, format!("expected `key = value`, got `{line}`")));
        };
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(config_err(line_no, "empty key"));
        }
        if !PLAN_KEYS.contains(&k) && !AgentConfig::KEYS.contains(&k) {
            return Err(config_err(line_no, format!("unknown key `{k}`")));
        }
        if let Some((first, _)) = seen.get(k) {
            return Err(config_err(
                line_no,
                format!("duplicate key `{k}` (first set on line {first})"),
            ));
        }
        seen.insert(k.to_string(), (line_no, v.to_string()));
    }
    let line_of = |k: &str| seen.get(k).map_or(0, |(l, _)| *l);
    let Some((_, env)) = seen.get("env") else {
        return Err(config_err(0, "missing `env`"));
    };
    let envs = split_list(env);
    let variants = match seen.get("variant") {
        Some((l, v)) => split_list(v)
            .iter()
            .map(|s| s.parse::<Variant>().map_err(|e| config_err(*l, e.to_string())))
            .collect::<Result<Vec<_>>>()?,
        None => vec![Variant::Vcr],
    };
    let seeds = match seen.get("seeds") {
        Some((l, v)) => split_list(v)
            .iter()
            .map(|s| {
                s.parse::<u64>()
                    .map_err(|e| config_err(*l, format!("bad seed `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?,
        None => vec![1],
    };
    let output_root = PathBuf::from(seen.get("output_root").map_or("runs", |(_, v)| v.as_str()));
    let overrides: IndexMap<String, String> = seen
        .iter()
        .filter(|(k, _)| !PLAN_KEYS.contains(&k.as_str()))
        .map(|(k, (_, v))| (k.clone(), v.clone()))
        .collect();
    // type-check every override against each env's defaults
    for e in &envs {
        let mut cfg = AgentConfig::for_env(e).map_err(|err| config_err(line_of("env"), err.to_string()))?;
        for (k, v) in &overrides {
            cfg.set(k, v).map_err(|err| config_err(line_of(k), err.to_string()))?;
        }
    }
    let plan = ExperimentPlan {
        envs,
        variants,
        seeds,
        output_root,
        overrides,
    };
    plan.validate()?;
    Ok(plan)
}

pub fn parse_config(path: &Path) -> Result<ExperimentPlan> {
    let text = fs::read_to_string(path).map_err(|e| config_err(0, format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// How [`run_plan`] executes cells.
#[derive(Clone, Debug)]
pub enum Executor {
    InProcess,
    /// Re-invokes `exe run <config> --env E --variant V --seeds S --out R
    /// --cell-only` with up to `jobs` children at once.
    Subprocess {
        exe: PathBuf,
        config: PathBuf,
        jobs: usize,
    },
}

#[derive(Clone, Debug, Default)]
pub struct PlanOutcome {
    pub completed: Vec<Cell>,
    pub failed: Vec<(Cell, String)>,
}

/// Executes every cell of `plan` under `plan.output_root`. Failures are
/// recorded and do not stop the plan.
pub fn run_plan(plan: &ExperimentPlan, executor: &Executor) -> Result<PlanOutcome> {
    plan.validate()?;
    fs::create_dir_all(&plan.output_root).map_err(|e| Error::io(&plan.output_root, e))?;
    let mut out = PlanOutcome::default();
    match executor {
        Executor::InProcess => {
            for cell in plan.cells() {
                let cfg = plan.config_for(&cell)?;
                match run_training(&cfg, Some(&cell.run_dir(&plan.output_root))) {
                    Ok(_) => out.completed.push(cell),
                    Err(e) => out.failed.push((cell, e.to_string())),
                }
            }
        }
        Executor::Subprocess { exe, config, jobs } => {
            let cells = plan.cells();
            for chunk in cells.chunks((*jobs).max(1)) {
                let children: Vec<_> = chunk
                    .iter()
                    .map(|c| {
                        Command::new(exe)
                            .arg("run")
                            .arg(config)
                            .args(["--env", &c.env, "--variant", c.variant.name()])
                            .args(["--seeds", &c.seed.to_string()])
                            .arg("--out")
                            .arg(&plan.output_root)
                            .arg("--cell-only")
                            .spawn()
                    })
                    .collect();
                for (c, child) in chunk.iter().zip(children) {
                    let status = child.and_then(|mut ch| ch.wait());
                    match status {
                        Ok(s) if s.success() => out.completed.push(c.clone()),
                        Ok(s) => out.failed.push((c.clone(), format!("child exited with {s}"))),
                        Err(e) => out.failed.push((c.clone(), e.to_string())),
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---- reading run directories --------------------------------------------

/// What a finished run directory holds.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub config: AgentConfig,
    pub score: f64,
    /// `(step, q_error)` probes.
    pub qerror: Vec<(u64, f64)>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads `config.txt` of a run directory.
pub fn read_run_config(dir: &Path) -> Result<AgentConfig> {
    let text = read(&dir.join("config.txt"))?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| config_err(i + 1, format!("bad line `{line}` in {}", dir.display())))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    let env = pairs
        .iter()
        .find(|(k, _)| k == "env")
        .map(|(_, v)| v.clone())
        .ok_or_else(|| config_err(0, format!("{} has no env", dir.display())))?;
    let mut cfg = AgentConfig::for_env(&env)?;
    for (k, v) in &pairs {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Loads a finished run directory.
pub fn read_run(dir: &Path) -> Result<RunRecord> {
    let config = read_run_config(dir)?;
    let score_text = read(&dir.join("score.txt"))?;
    let score = score_text
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::invalid(format!("bad score in {}: {e}", dir.display())))?;
    let mut qerror = Vec::new();
    for line in read(&dir.join("qerror.csv"))?.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 2 {
            return Err(Error::invalid(format!("bad qerror row `{line}` in {}", dir.display())));
        }
        let step = f[0]
            .parse::<u64>()
            .map_err(|e| Error::invalid(format!("bad step `{}`: {e}", f[0])))?;
        let q = f[1]
            .parse::<f64>()
            .map_err(|e| Error::invalid(format!("bad q_error `{}`: {e}", f[1])))?;
        qerror.push((step, q));
    }
    Ok(RunRecord {
        dir: dir.to_path_buf(),
        config,
        score,
        qerror,
    })
}

/// Every directory under `roots` (inclusive) holding a `config.txt`, in
/// sorted order. Roots that do not exist are returned separately.
pub fn find_run_dirs(roots: &[PathBuf]) -> (Vec<PathBuf>, Vec<PathBuf>) {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) {
        if dir.join("config.txt").is_file() {
            out.push(dir.to_path_buf());
            return;
        }
        let Ok(entries) = fs::read_dir(dir) else { return };
        let mut subs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.is_dir())
            .collect();
        subs.sort();
        for s in subs {
            walk(&s, out);
        }
    }
    let mut found = Vec::new();
    let mut missing = Vec::new();
    for r in roots {
        if r.is_dir() {
            walk(r, &mut found);
        } else {
            missing.push(r.clone());
        }
    }
    found.sort();
    found.dedup();
    (found, missing)
}

// ---- aggregate report ---------------------------------------------------

/// Statistics of one `(env, variant)` group.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub env: String,
    pub variant: Variant,
    pub n: usize,
    pub mean_score: f64,
    pub median_score: f64,
    pub iqm_hns: f64,
    pub optimality_gap: f64,
    pub random_score: f64,
    pub reference_score: f64,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AggregateReport {
    pub rows: Vec<AggregateRow>,
    pub errors: Vec<String>,
}

impl AggregateReport {
    pub fn to_csv(&self) -> String {
        let mut s =
            String::from("env,variant,n,mean_score,median_score,iqm_hns,optimality_gap,random_score,reference_score\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.env,
                r.variant,
                r.n,
                r.mean_score,
                r.median_score,
                r.iqm_hns,
                r.optimality_gap,
                r.random_score,
                r.reference_score
            );
        }
        s
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:<9} {:>3} {:>10} {:>10} {:>9} {:>8}",
            "env", "variant", "n", "mean", "median", "IQM(HNS)", "opt.gap"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<10} {:<9} {:>3} {:>10.4} {:>10.4} {:>9.4} {:>8.4}",
                r.env,
                r.variant.name(),
                r.n,
                r.mean_score,
                r.median_score,
                r.iqm_hns,
                r.optimality_gap
            );
        }
        if !self.errors.is_empty() {
            s.push_str("\nerrors:\n");
            for e in &self.errors {
                let _ = writeln!(s, "  {e}");
            }
        }
        s
    }
}

/// Groups the runs found under `roots` by `(env, variant)` and reports
/// mean, median, IQM of normalized scores and the optimality gap.
pub fn aggregate(roots: &[PathBuf]) -> Result<AggregateReport> {
    let (dirs, missing) = find_run_dirs(roots);
    let mut report = AggregateReport {
        errors: missing
            .iter()
            .map(|m| format!("missing run directory {}", m.display()))
            .collect(),
        ..AggregateReport::default()
    };
    let mut groups: BTreeMap<(String, Variant), Vec<RunRecord>> = BTreeMap::new();
    for d in dirs {
        match read_run(&d) {
            Ok(r) => groups
                .entry((r.config.env.name.clone(), r.config.variant))
                .or_default()
                .push(r),
            Err(e) => report.errors.push(format!("{}: {e}", d.display())),
        }
    }
    for ((env, variant), runs) in groups {
        let spec = env_spec(&runs[0].config.env)?;
        let scores: Vec<f64> = runs.iter().map(|r| r.score).collect();
        let hns: Vec<f64> = scores
            .iter()
            .map(|&s| crate::eval::hns(s, spec.random_score, spec.optimal_score))
            .collect::<Result<_>>()?;
        report.rows.push(AggregateRow {
            env,
            variant,
            n: scores.len(),
            mean_score: scores.iter().sum::<f64>() / scores.len() as f64,
            median_score: median(&scores),
            iqm_hns: iqm(&hns)?,
            optimality_gap: optimality_gap(&hns)?,
            random_score: spec.random_score,
            reference_score: spec.optimal_score,
            scores,
        });
    }
    Ok(report)
}

// ---- Q-error comparison -------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct QErrorPoint {
    pub env: String,
    pub step: u64,
    pub variant: Variant,
    pub mean: f64,
    /// Population standard deviation across seeds.
    pub std: f64,
    pub n: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct QErrorComparison {
    pub points: Vec<QErrorPoint>,
    pub errors: Vec<String>,
}

impl QErrorComparison {
    /// Long-format CSV `env,step,variant,mean,std,n`, followed by `# error:`
    /// lines for every directory that could not be used.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("env,step,variant,mean,std,n\n");
        for p in &self.points {
            let _ = writeln!(s, "{},{},{},{},{},{}", p.env, p.step, p.variant, p.mean, p.std, p.n);
        }
        for e in &self.errors {
            let _ = writeln!(s, "# error: {e}");
        }
        s
    }
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Per-step mean and standard deviation of the Q-error of each variant
/// across seeds. Runs of one env must share the probe schedule.
pub fn emit_qerror_comparison(roots: &[PathBuf]) -> Result<QErrorComparison> {
    let (dirs, missing) = find_run_dirs(roots);
    let mut out = QErrorComparison {
        errors: missing
            .iter()
            .map(|m| format!("missing run directory {}", m.display()))
            .collect(),
        ..QErrorComparison::default()
    };
    let mut groups: BTreeMap<(String, Variant), Vec<RunRecord>> = BTreeMap::new();
    let mut schedules: BTreeMap<String, (PathBuf, Vec<u64>)> = BTreeMap::new();
    for d in dirs {
        let r = match read_run(&d) {
            Ok(r) => r,
            Err(e) => {
                out.errors.push(format!("{}: {e}", d.display()));
                continue;
            }
        };
        let steps: Vec<u64> = r.qerror.iter().map(|(s, _)| *s).collect();
        let env = r.config.env.name.clone();
        match schedules.get(&env) {
            Some((first, s)) if *s != steps => {
                return Err(Error::invalid(format!(
                    "probe schedule of {} differs from {}",
                    d.display(),
                    first.display()
                )))
            }
            Some(_) => {}
            None => {
                schedules.insert(env.clone(), (d.clone(), steps));
            }
        }
        groups.entry((env, r.config.variant)).or_default().push(r);
    }
    for ((env, variant), runs) in groups {
        let steps = &schedules[&env].1;
        for (i, &step) in steps.iter().enumerate() {
            let xs: Vec<f64> = runs.iter().map(|r| r.qerror[i].1).collect();
            let (mean, std) = mean_std(&xs);
            out.points.push(QErrorPoint {
                env: env.clone(),
                step,
                variant,
                mean,
                std,
                n: xs.len(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_defaults_and_overrides() {
        let p = parse_config_str("env = chain\n").unwrap();
        assert_eq!(p.variants, vec![Variant::Vcr]);
        assert_eq!(
            p.config_for(&p.cells()[0]).unwrap(),
            AgentConfig::for_env("chain").unwrap()
        );
        let p = parse_config_str("env = pixelgrid # grid\nk = 9\nvariant = MSE_A, SPR_only\nseeds = 3,4\n").unwrap();
        assert_eq!(p.cells().len(), 4);
        let c = p.config_for(&p.cells()[0]).unwrap();
        assert_eq!((c.k, c.variant, c.seed), (9, Variant::MseA, 3));
    }

    #[test]
    fn parse_errors() {
        for bad in [
            "k = 3\n",
            "env = chain\nbogus = 1\n",
            "env = chain\nk = x\n",
            "env = chain\nk = 3\nk = 4\n",
            "env = chain\nnot a pair\n",
            "env = chain\nseeds = 1, 1\n",
        ] {
            assert!(matches!(parse_config_str(bad), Err(Error::Config { .. })), "{bad}");
        }
    }

    #[test]
    fn serialize_round_trips() {
        let p = parse_config_str(
            "env = chain, pointmass\nvariant = VCR, MSE\nseeds = 1, 2\nlr = 0.0003\noutput_root = out/x\n",
        )
        .unwrap();
        assert_eq!(parse_config_str(&p.serialize()).unwrap(), p);
    }

    #[test]
    fn population_std() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
    }
}
