//! Command-line surface: argument parsing, dispatch and CSV output.

use std::fs;
use std::path::{Path, PathBuf};

use crate::coefficients::ProviderKind;
use crate::config::{Config, KNOWN_KEYS};
use crate::data::{load_csv, synth_logreg};
use crate::engine::{OptimizerConfig, TrainSettings};
use crate::error::{Error, Result};
use crate::experiments::{
    dynamic_variance_experiment, find_fig1_instance, illustrate_fig1, nelbo_trace_experiment,
    static_variance_experiment, timing_overhead, Arm, DynamicConfig, Fig1Config, StaticConfig, TimingConfig,
    TraceConfig, VarianceReport,
};
use crate::models::{DoublyStochasticModel, QuadraticFamily, QuadraticSpec};
use crate::noise::BasisOrder;
use crate::objectives::ObjectiveKind;
use crate::theory::{trajectory_table, BoundKind, TheoremSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const SUBCOMMANDS: [&str; 6] =
    ["illustrate", "static-variance", "dynamic-variance", "train", "theorem-check", "time-overhead"];

pub const USAGE: &str = "\
usage: amcv <subcommand> [--config FILE] [--out DIR] [--jobs N] [--<key>=<value> ...]

subcommands:
  illustrate        two-batch illustration of shared vs per-batch coefficients
  static-variance   variance ratios with the model frozen at checkpoints
  dynamic-variance  variance ratios during joint training
  train             joint training with full-data NELBO traces
  theorem-check     controlled SGD on a quadratic against its convergence bound
  time-overhead     wall-clock cost per training step

options:
  --config FILE     key=value settings file
  --out DIR         output directory (default: out)
  --jobs N          worker threads (default: 1)
  --<key>=<value>   override a config key, e.g. --optimizer.model.lr=0.001
  --help            show this text and the list of config keys
";

#[derive(Debug)]
struct Invocation {
    subcommand: String,
    config_path: Option<PathBuf>,
    out: PathBuf,
    jobs: usize,
    overrides: Vec<(String, String)>,
}

/// Usage problems exit with 2, everything else with 1.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

fn parse_args(argv: &[String]) -> std::result::Result<Invocation, Failure> {
    let usage = |m: String| Failure::Usage(m);
    let mut it = argv.iter();
    let subcommand = it.next().ok_or_else(|| usage("missing subcommand".into()))?.clone();
    if !SUBCOMMANDS.contains(&subcommand.as_str()) {
        return Err(usage(format!("unknown subcommand '{subcommand}'")));
    }
    let mut config_path: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut jobs: Option<usize> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument '{arg}'")));
        };
        let (name, inline) = match flag.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (flag, None),
        };
        let mut value = || -> std::result::Result<String, Failure> {
            match &inline {
                Some(v) => Ok(v.clone()),
                None => it.next().cloned().ok_or_else(|| usage(format!("--{name} needs a value"))),
            }
        };
        match name {
            "config" => {
                let v = PathBuf::from(value()?);
                if config_path.as_ref().is_some_and(|p| *p != v) {
                    return Err(usage("--config given twice".into()));
                }
                config_path = Some(v);
            }
            "out" => {
                let v = PathBuf::from(value()?);
                if out.as_ref().is_some_and(|p| *p != v) {
                    return Err(usage("--out given twice with different values".into()));
                }
                out = Some(v);
            }
            "jobs" => {
                let v = value()?;
                let n: usize = v.parse().map_err(|_| usage(format!("--jobs expects a positive integer, got '{v}'")))?;
                if n == 0 || jobs.is_some_and(|j| j != n) {
                    return Err(usage("--jobs must be positive and given once".into()));
                }
                jobs = Some(n);
            }
            key if KNOWN_KEYS.iter().any(|(k, _)| *k == key) => {
                let v = inline.clone().ok_or_else(|| usage(format!("use --{key}=<value>")))?;
                if let Some((_, prev)) = overrides.iter().find(|(k, _)| k == key) {
                    if *prev != v {
                        return Err(usage(format!("conflicting values for --{key}")));
                    }
                } else {
                    overrides.push((key.to_string(), v));
                }
            }
            _ => return Err(usage(format!("unknown flag '--{name}'"))),
        }
    }
    Ok(Invocation {
        subcommand,
        config_path,
        out: out.unwrap_or_else(|| PathBuf::from("out")),
        jobs: jobs.unwrap_or(1),
        overrides,
    })
}

fn full_usage() -> String {
    let mut s = USAGE.to_string();
    s.push_str("\nconfig keys (default):\n");
    for (k, v) in KNOWN_KEYS {
        s.push_str(&format!("  {k} ({v})\n"));
    }
    s
}

/// Runs one subcommand; `argv` excludes the program name. Returns the exit code.
pub fn run_command(argv: &[String]) -> i32 {
    if argv.iter().any(|a| a == "--help" || a == "-h") {
        print!("{}", full_usage());
        return 0;
    }
    let inv = match parse_args(argv) {
        Ok(inv) => inv,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}\n\n{USAGE}");
            return 2;
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let mut output = Output::new(&inv.out);
    let result = load_config(&inv).and_then(|cfg| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(inv.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
        pool.install(|| dispatch(&inv.subcommand, &cfg, &mut output))?;
        output.write_manifest(&inv.subcommand, &cfg)
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            output.discard();
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_config(inv: &Invocation) -> Result<Config> {
    let mut cfg = match &inv.config_path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    for (k, v) in &inv.overrides {
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

/// Collects the files of one run so a failed run can remove them.
struct Output {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Output {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), created_dir: false, written: Vec::new() }
    }

    fn ensure_dir(&mut self) -> Result<()> {
        if !self.dir.exists() {
            fs::create_dir_all(&self.dir)?;
            self.created_dir = true;
        }
        Ok(())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.ensure_dir()?;
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, bytes)?;
        Ok(())
    }

    /// Writes `# config_hash=.. seed=.. schema=..` then a headed CSV.
    fn write_csv(&mut self, name: &str, cfg: &Config, schema: &str, comments: &[String], header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut buf = format!("# config_hash={} seed={} schema={schema}\n", cfg.hash(), cfg.raw("seed")).into_bytes();
        for c in comments {
            buf.extend(format!("# {c}\n").bytes());
        }
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        self.write(name, &buf)
    }

    fn write_manifest(&mut self, subcommand: &str, cfg: &Config) -> Result<()> {
        let names: Vec<String> =
            self.written.iter().filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned())).collect();
        let text = format!(
            "artifact=amortized-cv\nversion={VERSION}\nsubcommand={subcommand}\nseed={}\nconfig_hash={}\noutputs={}\n\n[config]\n{}",
            cfg.raw("seed"),
            cfg.hash(),
            names.join(","),
            cfg.resolved()
        );
        self.write("manifest.txt", text.as_bytes())
    }

    fn discard(&mut self) {
        for p in self.written.drain(..) {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn optimizer(cfg: &Config, which: &str) -> Result<OptimizerConfig> {
    let lr: f64 = cfg.get(&format!("optimizer.{which}.lr"))?;
    let o = match cfg.raw(&format!("optimizer.{which}.kind")) {
        "adam" => OptimizerConfig::adam(lr),
        "sgd" => OptimizerConfig::sgd(lr),
        other => return Err(Error::Config(format!("unknown optimizer '{other}'"))),
    };
    o.validate()?;
    Ok(o)
}

fn settings(cfg: &Config) -> Result<TrainSettings> {
    Ok(TrainSettings {
        order: BasisOrder::new(cfg.get("cv.order")?)?,
        samples: 1,
        objective: ObjectiveKind::parse(cfg.raw("objective"))?,
        batch_size: cfg.get("batch_size")?,
    })
}

fn arms(cfg: &Config) -> Result<Vec<Arm>> {
    let mut out = Vec::new();
    for p in cfg.strings("providers") {
        match ProviderKind::parse(&p)? {
            ProviderKind::Uncontrolled => out.push(Arm::none()),
            ProviderKind::ContextFree => out.push(Arm::context_free()),
            ProviderKind::Amortized => {
                for arch in cfg.raw("provider.hidden").split(';') {
                    let hidden = arch
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse().map_err(|_| Error::Config(format!("bad layer width '{s}'"))))
                        .collect::<Result<Vec<usize>>>()?;
                    out.push(Arm::amortized(&hidden));
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no providers configured".into()));
    }
    Ok(out)
}

fn build_model(cfg: &Config) -> Result<(Box<dyn DoublyStochasticModel<f64>>, Vec<f64>)> {
    match cfg.raw("model.kind") {
        "logistic" => {
            let ds = match cfg.raw("data.source") {
                "synthetic" => synth_logreg(cfg.get("data.seed")?, cfg.get("data.n")?, cfg.get("data.dim")?, cfg.get("data.clusters")?)?.0,
                "csv" => {
                    let target = cfg.raw("data.target");
                    load_csv(Path::new(cfg.raw("data.path")), (!target.is_empty()).then_some(target))?
                }
                other => return Err(Error::Config(format!("unknown data.source '{other}'"))),
            };
            let model = ds.to_logistic::<f64>()?;
            let theta0 = model.initial_state().theta;
            Ok((Box::new(model), theta0))
        }
        "quadratic" => {
            let fam = QuadraticFamily::<f64>::synthetic(
                cfg.get("data.seed")?,
                cfg.get("model.quadratic.n")?,
                cfg.get("model.quadratic.p")?,
                cfg.get("model.quadratic.d")?,
                cfg.get("model.quadratic.context_dim")?,
            )?;
            let theta0 = vec![0.0; fam.param_dim()];
            Ok((Box::new(fam), theta0))
        }
        other => Err(Error::Config(format!("unknown model.kind '{other}'"))),
    }
}

fn batch_fits(cfg: &Config, model: &dyn DoublyStochasticModel<f64>) -> Result<()> {
    let b: usize = cfg.get("batch_size")?;
    if b == 0 || b > model.num_data() {
        return Err(Error::Config(format!("batch_size {b} must lie in 1..={}", model.num_data())));
    }
    Ok(())
}

fn f(v: f64) -> String {
    format!("{v}")
}

fn variance_rows(rows: &[VarianceReport]) -> Vec<Vec<String>> {
    rows.iter()
        .map(|r| {
            vec![
                r.checkpoint.clone(),
                r.cv_step.to_string(),
                r.provider.clone(),
                r.objective.name().to_string(),
                f(r.ratio),
                r.draws.to_string(),
                r.seed.to_string(),
                r.model_step.to_string(),
                f(r.trace_ratio),
            ]
        })
        .collect()
}

const VARIANCE_HEADER: [&str; 9] =
    ["checkpoint", "cv_step", "provider", "objective", "ratio", "draws", "seed", "model_step", "trace_ratio"];

fn dispatch(sub: &str, cfg: &Config, out: &mut Output) -> Result<()> {
    let seed: u64 = cfg.get("seed")?;
    match sub {
        "theorem-check" => {
            let (p, d): (usize, usize) = (cfg.get("theorem.p")?, cfg.get("theorem.d")?);
            let q = QuadraticSpec::new(p, d, cfg.list("theorem.hessian")?, cfg.list("theorem.linear")?, cfg.list("theorem.coupling")?)?;
            let cv: Vec<f64> = cfg.list("theorem.cv_matrix")?;
            let eta: f64 = cfg.get("theorem.eta")?;
            let spec = if cv.is_empty() { TheoremSpec::perfect(q, eta)? } else { TheoremSpec::new(q, cv, eta)? };
            let theta0: Vec<f64> = cfg.list("theorem.theta0")?;
            let (kind, rows) = trajectory_table(&spec, &theta0, cfg.get("theorem.steps")?, cfg.get("theorem.seeds")?, seed)?;
            let mut comments = vec![match kind {
                BoundKind::Theorem1 => format!("bound=theorem1 c={}", f(spec.rate_c().unwrap_or(1.0))),
                BoundKind::Assumption4 => format!("bound=assumption4 c_bar={} m_bar={}", f(spec.rate_c_bar()), f(spec.m_bar())),
            }];
            if spec.theorem1_vacuous() {
                eprintln!("warning: step size sits on its bound, c = 1 and the bound is vacuous");
                comments.push("warning: c = 1, bound is vacuous".into());
            }
            let table: Vec<Vec<String>> =
                rows.iter().map(|r| vec![r.t.to_string(), f(r.empirical), f(r.bound), r.seeds.to_string()]).collect();
            out.write_csv("theorem.csv", cfg, "theorem/v1", &comments, &["t", "empirical", "bound", "seeds"], &table)
        }
        "illustrate" => {
            let x: Vec<f64> = cfg.list("fig1.x")?;
            let y: Vec<f64> = cfg.list("fig1.y")?;
            if x.len() != 2 || y.len() != 2 {
                return Err(Error::Config("fig1.x and fig1.y need two values each".into()));
            }
            let mut fc = Fig1Config {
                seed,
                x: [x[0], x[1]],
                y: [y[0], y[1]],
                mean: cfg.get("fig1.mean")?,
                log_scale: cfg.get("fig1.log_scale")?,
                draws: cfg.get("fig1.draws")?,
                grid_points: cfg.get("fig1.grid_points")?,
                ..Fig1Config::default()
            };
            if cfg.get::<bool>("fig1.search")? {
                let grid: Vec<f64> = (1..=12).map(|k| k as f64 * 0.25).collect();
                fc = find_fig1_instance(&fc, &grid, 20_000)?
                    .ok_or_else(|| Error::Assumption("no context pair on the search grid shows the effect".into()))?;
            }
            let rep = illustrate_fig1(&fc)?;
            let mut comments = vec![format!(
                "x={},{} y={},{} shared_coefficient={}",
                f(fc.x[0]),
                f(fc.x[1]),
                f(fc.y[0]),
                f(fc.y[1]),
                f(rep.shared_coefficient)
            )];
            if rep.degenerate {
                eprintln!("warning: both batches share one context; per-batch and shared coefficients coincide");
                comments.push("warning: degenerate instance, identical contexts".into());
            }
            let mut table = Vec::new();
            for c in &rep.curves {
                table.push(vec!["curve".into(), c.batch.to_string(), f(c.epsilon), f(c.g_value), String::new(), String::new(), String::new(), String::new()]);
            }
            for v in &rep.variances {
                table.push(vec![
                    "variance".into(),
                    v.batch.to_string(),
                    String::new(),
                    String::new(),
                    f(v.no_cv),
                    f(v.shared_cv),
                    f(v.per_batch_cv),
                    f(v.coefficient),
                ]);
            }
            out.write_csv(
                "fig1.csv",
                cfg,
                "fig1/v1",
                &comments,
                &["kind", "batch", "epsilon", "g_value", "no_cv", "shared_cv", "per_batch_cv", "coefficient"],
                &table,
            )
        }
        "static-variance" => {
            let (model, theta0) = build_model(cfg)?;
            batch_fits(cfg, model.as_ref())?;
            let sc = StaticConfig {
                seed,
                replicates: cfg.get("replicates")?,
                checkpoints: cfg.list("variance.checkpoints")?,
                log_steps: cfg.list("variance.log_steps")?,
                arms: arms(cfg)?,
                settings: settings(cfg)?,
                model_opt: optimizer(cfg, "model")?,
                coeff_opt: optimizer(cfg, "coeff")?,
                draws: cfg.get("variance.draws")?,
                eval_batches: cfg.get("variance.eval_batches")?,
            };
            let rows = static_variance_experiment(model.as_ref(), &theta0, &sc)?;
            out.write_csv("static-variance.csv", cfg, "variance/v1", &[], &VARIANCE_HEADER, &variance_rows(&rows))
        }
        "dynamic-variance" => {
            let (model, theta0) = build_model(cfg)?;
            batch_fits(cfg, model.as_ref())?;
            let dc = DynamicConfig {
                seed,
                replicates: cfg.get("replicates")?,
                iterations: cfg.get("dynamic.iterations")?,
                checkpoints: cfg.list("dynamic.checkpoints")?,
                arms: arms(cfg)?,
                settings: settings(cfg)?,
                model_opt: optimizer(cfg, "model")?,
                coeff_opt: optimizer(cfg, "coeff")?,
                draws: cfg.get("variance.draws")?,
                eval_batches: cfg.get("variance.eval_batches")?,
            };
            let rows = dynamic_variance_experiment(model.as_ref(), &theta0, &dc)?;
            out.write_csv("dynamic-variance.csv", cfg, "variance/v1", &[], &VARIANCE_HEADER, &variance_rows(&rows))
        }
        "train" => {
            let (model, theta0) = build_model(cfg)?;
            batch_fits(cfg, model.as_ref())?;
            let objectives =
                cfg.strings("train.objectives").iter().map(|s| ObjectiveKind::parse(s)).collect::<Result<Vec<_>>>()?;
            let mut methods = Vec::new();
            for arm in arms(cfg)? {
                if arm.kind == ProviderKind::Uncontrolled {
                    methods.push((arm, ObjectiveKind::SquaredDifference));
                } else {
                    methods.extend(objectives.iter().map(|&o| (arm.clone(), o)));
                }
            }
            let tc = TraceConfig {
                seed,
                replicates: cfg.get("replicates")?,
                iterations: cfg.get("train.iterations")?,
                nelbo_samples: cfg.get("train.nelbo_samples")?,
                record_every: cfg.get("train.record_every")?,
                methods,
                settings: settings(cfg)?,
                model_opt: optimizer(cfg, "model")?,
                coeff_opt: optimizer(cfg, "coeff")?,
                ..TraceConfig::default()
            };
            let rows = nelbo_trace_experiment(model.as_ref(), &theta0, &tc)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.iter.to_string(), r.method.clone(), r.replicate.to_string(), f(r.nelbo), f(r.diff), f(r.grad_norm_var)])
                .collect();
            out.write_csv("trace.csv", cfg, "trace/v1", &[], &["iter", "method", "replicate", "nelbo", "diff", "grad_norm_var"], &table)
        }
        "time-overhead" => {
            let (model, theta0) = build_model(cfg)?;
            batch_fits(cfg, model.as_ref())?;
            let mut methods = Vec::new();
            for arm in arms(cfg)? {
                if arm.kind == ProviderKind::Uncontrolled {
                    methods.push((arm, ObjectiveKind::SquaredDifference));
                } else {
                    methods.extend(ObjectiveKind::ALL.iter().map(|&o| (arm.clone(), o)));
                }
            }
            let tc = TimingConfig {
                seed,
                repetitions: cfg.get("timing.repetitions")?,
                steps_per_repetition: cfg.get("timing.steps")?,
                methods,
                settings: settings(cfg)?,
                model_opt: optimizer(cfg, "model")?,
                coeff_opt: optimizer(cfg, "coeff")?,
            };
            let rows = timing_overhead(model.as_ref(), &theta0, &tc)?;
            let table: Vec<Vec<String>> = rows
                .iter()
                .map(|r| vec![r.method.clone(), r.repetitions.to_string(), tc.steps_per_repetition.to_string(), f(r.mean_ms), f(r.std_ms)])
                .collect();
            out.write_csv("timing.csv", cfg, "timing/v1", &[], &["method", "repetitions", "steps", "mean_ms", "std_ms"], &table)
        }
        other => Err(Error::InvalidArgument(format!("unknown subcommand '{other}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn parses_flags_and_overrides() {
        let inv = parse_args(&args("train --out x --jobs 2 --seed=4 --optimizer.model.lr=0.1")).unwrap();
        assert_eq!(inv.subcommand, "train");
        assert_eq!(inv.out, PathBuf::from("x"));
        assert_eq!(inv.jobs, 2);
        assert_eq!(inv.overrides.len(), 2);
    }

    #[test]
    fn usage_errors() {
        for bad in ["", "frobnicate", "train --nope", "train --seed=1 --seed=2", "train --jobs 0", "train stray", "train --seed 3"] {
            assert!(matches!(parse_args(&args(bad)), Err(Failure::Usage(_))), "{bad}");
        }
        assert_eq!(run_command(&args("train --bogus")), 2);
    }

    #[test]
    fn failed_runs_leave_nothing_behind() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let code = run_command(&[
            "theorem-check".into(),
            "--out".into(),
            out.display().to_string(),
            "--theorem.eta=0.3".into(),
        ]);
        assert_eq!(code, 1);
        assert!(!out.exists());
        let missing = run_command(&["theorem-check".into(), "--config".into(), "/nonexistent.cfg".into()]);
        assert_eq!(missing, 1);
    }

    #[test]
    fn shipped_theorem_configs_run() {
        let dir = tempfile::tempdir().unwrap();
        let specs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs");
        for (name, kind) in [("quad_m0.cfg", "theorem1"), ("quad_relaxed.cfg", "assumption4")] {
            let out = dir.path().join(name);
            let code = run_command(&[
                "theorem-check".into(),
                "--config".into(),
                specs.join(name).display().to_string(),
                "--out".into(),
                out.display().to_string(),
            ]);
            assert_eq!(code, 0);
            let csv = fs::read_to_string(out.join("theorem.csv")).unwrap();
            let mut lines = csv.lines();
            assert!(lines.next().unwrap().starts_with("# config_hash="));
            assert!(lines.next().unwrap().contains(kind));
            assert_eq!(lines.next().unwrap(), "t,empirical,bound,seeds");
            let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
            assert!(manifest.contains("theorem.eta=0.125"));
        }
    }
}
