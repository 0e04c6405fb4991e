//! The `fsev` command line.

pub mod config;
pub mod validate;

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::estimator::Problem;
use crate::features::FeatureSet;
use crate::geometry::Domain;
use crate::network::{Architecture, ModeSnapshot};
use crate::trainer::{
    lr_at, max_overlap, n_at, solve_sequence, stream, ModelSpec, ProgressRecord, SolveOutcome, StreamTag, TrainConfig,
};
use config::{Command, Preset, RunConfig};

pub const EIGENVALUE_HEADER: &str = "k,lambda_hat,se,wall_seconds";
pub const ISOSPECTRAL_HEADER: &str = "s,k,lambda_A,se_A,lambda_B,se_B,R,significance";

#[derive(Parser, Debug)]
#[command(name = "fsev", version, about = "Eigenpairs of the fractional Schrödinger operator by Monte Carlo Ritz training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum PresetArg {
    Desk,
    Paper,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Train K modes on one domain and write eigenvalues.csv, checkpoints and a manifest
    #[command(after_help = config::keys_help())]
    Solve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "fsev_out")]
        out: PathBuf,
    },
    /// Sample a trained mode on a tensor grid, normalized to max |u| = 1
    Eigenfunction {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `n1xn2[,lo:hi,...]`; ranges default to the domain's bounding box
        #[arg(long)]
        grid: String,
        /// CSV destination; standard output when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the spectra of two domains over a list of orders
    #[command(after_help = config::keys_help())]
    Isospectral {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "fsev_out")]
        out: PathBuf,
    },
    /// Run the oracle and estimator self-checks
    Validate {
        /// scale the normalizing constant in the unbiasedness check
        #[arg(long, value_name = "FACTOR")]
        inject_wrong_constant: Option<f64>,
        /// drop part of the loss adjoint in the gradient check
        #[arg(long)]
        inject_broken_gradient: bool,
    },
    /// Print architecture sizes, schedules, domains or a resolved config
    Info {
        /// `d l m`, optionally written as `d=1 l=3 m=40`
        #[arg(long, num_args = 3, value_names = ["D", "L", "M"])]
        arch: Option<Vec<String>>,
        #[arg(long)]
        schedule: bool,
        #[arg(long, value_enum)]
        preset: Option<PresetArg>,
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// list every configuration key
        #[arg(long)]
        keys: bool,
    },
}

/// Exit status for an error: 2 for configuration problems, 3 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        _ => 3,
    }
}

pub fn run() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Cmd::Validate { inject_wrong_constant, inject_broken_gradient } => {
            let inject = validate::Injections { constant_factor: inject_wrong_constant, broken_gradient: inject_broken_gradient };
            let checks = validate::run_all(&inject);
            for c in &checks {
                println!("{}", c.line());
            }
            let failed = checks.iter().filter(|c| !c.passed).count();
            println!("{} of {} checks passed", checks.len() - failed, checks.len());
            if failed == 0 {
                0
            } else {
                1
            }
        }
        other => match dispatch(other) {
            Ok(code) => code,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code(&e)
            }
        },
    };
    ExitCode::from(code)
}

fn dispatch(cmd: Cmd) -> Result<u8> {
    match cmd {
        Cmd::Solve { config, preset, seed, out } => {
            let cfg = load_config(&config, Command::Solve, preset, seed)?;
            cmd_solve(&cfg, &out, &mut |line| eprintln!("{line}"))
        }
        Cmd::Isospectral { config, preset, seed, out } => {
            let cfg = load_config(&config, Command::Isospectral, preset, seed)?;
            cmd_isospectral(&cfg, &out, &mut |line| eprintln!("{line}"))
        }
        Cmd::Eigenfunction { checkpoint, grid, out } => {
            let snap = ModeSnapshot::load(&checkpoint)?;
            let csv = eigenfunction_csv(&snap, &grid)?;
            match out {
                Some(p) => fs::write(p, csv)?,
                None => print!("{csv}"),
            }
            Ok(0)
        }
        Cmd::Info { arch, schedule, preset, domain, config, keys } => {
            let text = info(arch.as_deref(), schedule, preset.map(Into::into), domain.as_deref(), config.as_deref(), keys)?;
            print!("{text}");
            Ok(0)
        }
        Cmd::Validate { .. } => unreachable!("handled in run"),
    }
}

pub fn load_config(path: &Path, command: Command, preset: Option<PresetArg>, seed: Option<u64>) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::config(0, format!("cannot read {}: {e}", path.display())))?;
    RunConfig::parse(&text, command, preset.map(Into::into), seed)
}

/// Problem and network shape for one cell of a run.
pub fn build(cfg: &RunConfig, domain_index: usize, s: f64) -> Result<(Problem, ModelSpec)> {
    let domain = cfg.domain(domain_index)?;
    let features = FeatureSet::from_decl(&domain, &cfg.feature_decl(s, &domain))?;
    let mut problem = Problem::on(domain, s, cfg.potential, &mut stream(cfg.train.seed, 0, 0, StreamTag::Init))?;
    problem.w_c = cfg.train.w_c;
    Ok((problem, ModelSpec { features, layers: cfg.layers }))
}

/// Trains one cell, writing checkpoints and progress records into `dir`.
fn run_cell(
    cfg: &RunConfig,
    domain_index: usize,
    s: f64,
    dir: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<(SolveOutcome, Problem)> {
    fs::create_dir_all(dir)?;
    let (problem, model) = build(cfg, domain_index, s)?;
    let mut progress = BufWriter::new(File::create(dir.join("progress.jsonl"))?);
    let mut io_error: Option<std::io::Error> = None;
    let mut on_progress = |r: &ProgressRecord| {
        let line = r.to_line();
        if let Err(e) = writeln!(progress, "{line}").and_then(|_| progress.flush()) {
            io_error.get_or_insert(e);
        }
    };
    let mut next = 1;
    let mut on_mode = |m: &crate::trainer::TrainedMode| {
        let path = dir.join(format!("mode_{next}.fsev"));
        next += 1;
        if let Err(e) = m.snapshot.save(&path) {
            log(&format!("cannot write {}: {e}", path.display()));
        }
        log(&format!(
            "{} s={s}: lambda {:.8} se {:.2e} ({:.0} s)",
            cfg.domains[domain_index], m.estimate.lambda_hat, m.estimate.se, m.wall_seconds
        ));
    };
    let outcome = solve_sequence(cfg.modes, &problem, &model, &cfg.train, &mut on_progress, &mut on_mode)?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    Ok((outcome, problem))
}

fn clear_checkpoints(dir: &Path) -> Result<()> {
    if let Ok(it) = fs::read_dir(dir) {
        for e in it.flatten() {
            let n = e.file_name();
            let n = n.to_string_lossy();
            if n.starts_with("mode_") && n.ends_with(".fsev") {
                fs::remove_file(e.path())?;
            }
        }
    }
    Ok(())
}

pub fn eigenvalue_csv(outcome: &SolveOutcome) -> String {
    let mut s = format!("{EIGENVALUE_HEADER}\n");
    for (i, m) in outcome.modes.iter().enumerate() {
        let _ = writeln!(s, "{},{:.16e},{:.16e},{:.16e}", i + 1, m.estimate.lambda_hat, m.estimate.se, m.wall_seconds);
    }
    s
}

fn schedule_comments(t: &TrainConfig) -> String {
    let mut s = String::new();
    for stage in 0..t.stages() {
        let first = stage * t.decay_every;
        let last = ((stage + 1) * t.decay_every).min(t.epochs) - 1;
        let _ = writeln!(s, "# stage {}: epochs {first}-{last} lr {:e} n {}", stage + 1, lr_at(t, first), n_at(t, first));
    }
    let _ = writeln!(s, "# final estimate: {} batches of {} samples", t.n_batches_final, t.n_final);
    s
}

fn mode_comments(label: &str, outcome: &SolveOutcome, overlap: Option<f64>) -> String {
    let mut s = String::new();
    for (i, m) in outcome.modes.iter().enumerate() {
        let beta = m.beta.map_or("none".to_string(), |b| format!("{b:e}"));
        let _ = writeln!(
            s,
            "# {label}mode {}: lambda {:.16e} se {:.3e} l2_norm_sq {:.16e} beta {beta} wall_seconds {:.1}",
            i + 1,
            m.estimate.lambda_hat,
            m.estimate.se,
            m.estimate.l2_norm_sq,
            m.wall_seconds
        );
    }
    if let Some(o) = overlap {
        let _ = writeln!(s, "# {label}max normalized overlap {o:.3e}");
    }
    for w in &outcome.warnings {
        let _ = writeln!(s, "# {label}warning: {w}");
    }
    if let Some((k, e)) = &outcome.failure {
        let _ = writeln!(s, "# {label}failed at mode {k}: {e}");
    }
    s
}

fn manifest_header(cfg: &RunConfig) -> String {
    let mut s = format!("# fsev {}\n", env!("CARGO_PKG_VERSION"));
    s.push_str(&cfg.render());
    s.push_str(&schedule_comments(&cfg.train));
    s
}

fn overlap_of(outcome: &SolveOutcome, problem: &Problem, cfg: &RunConfig) -> Result<Option<f64>> {
    if outcome.modes.len() < 2 {
        return Ok(None);
    }
    let snaps: Vec<ModeSnapshot> = outcome.modes.iter().map(|m| m.snapshot.clone()).collect();
    max_overlap(&snaps, problem, cfg.train.n_final, cfg.train.seed).map(Some)
}

/// `solve`: returns the exit status (0, or 3 when a mode failed).
pub fn cmd_solve(cfg: &RunConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<u8> {
    fs::create_dir_all(out)?;
    clear_checkpoints(out)?;
    let s = cfg.s_values[0];
    let (outcome, problem) = run_cell(cfg, 0, s, out, log)?;
    fs::write(out.join("eigenvalues.csv"), eigenvalue_csv(&outcome))?;
    let overlap = overlap_of(&outcome, &problem, cfg)?;
    let mut manifest = manifest_header(cfg);
    manifest.push_str(&mode_comments("", &outcome, overlap));
    fs::write(out.join("manifest.txt"), manifest)?;
    for w in &outcome.warnings {
        log(&format!("warning: {w}"));
    }
    match &outcome.failure {
        Some((k, e)) => {
            log(&format!("mode {k} failed: {e}"));
            Ok(3)
        }
        None => Ok(0),
    }
}

/// Signed relative gap (λ_B − λ_A) / ((λ_A + λ_B)/2).
pub fn relative_difference(a: f64, b: f64) -> f64 {
    (b - a) / ((a + b) / 2.0)
}

/// |λ_B − λ_A| / √(se_A² + se_B²); zero when the two estimates coincide.
pub fn significance(a: f64, se_a: f64, b: f64, se_b: f64) -> f64 {
    let d = (b - a).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / (se_a * se_a + se_b * se_b).sqrt()
}

/// `isospectral`: both domains for every order, then one R row per mode.
pub fn cmd_isospectral(cfg: &RunConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<u8> {
    fs::create_dir_all(out)?;
    let mut csv = format!("{ISOSPECTRAL_HEADER}\n");
    let mut manifest = manifest_header(cfg);
    let mut status = 0;
    for &s in &cfg.s_values {
        let mut results = Vec::new();
        for (i, name) in cfg.domains.iter().enumerate() {
            let side = ["A", "B"][i];
            let dir = out.join(format!("s{s}_{side}_{name}"));
            clear_checkpoints(&dir)?;
            let (outcome, problem) = run_cell(cfg, i, s, &dir, log)?;
            fs::write(dir.join("eigenvalues.csv"), eigenvalue_csv(&outcome))?;
            let overlap = overlap_of(&outcome, &problem, cfg)?;
            manifest.push_str(&mode_comments(&format!("s={s} {side} {name} "), &outcome, overlap));
            if outcome.failure.is_some() {
                status = 3;
            }
            results.push(outcome);
        }
        let n = results[0].modes.len().min(results[1].modes.len());
        for k in 0..n {
            let (a, b) = (&results[0].modes[k].estimate, &results[1].modes[k].estimate);
            let _ = writeln!(
                csv,
                "{s},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                k + 1,
                a.lambda_hat,
                a.se,
                b.lambda_hat,
                b.se,
                relative_difference(a.lambda_hat, b.lambda_hat),
                significance(a.lambda_hat, a.se, b.lambda_hat, b.se)
            );
        }
        fs::write(out.join("isospectral.csv"), &csv)?;
    }
    fs::write(out.join("manifest.txt"), manifest)?;
    Ok(status)
}

/// Parsed `--grid`: point counts and ranges per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub counts: Vec<usize>,
    pub ranges: Vec<(f64, f64)>,
}

impl GridSpec {
    /// `n1xn2[,lo:hi,...]`; missing ranges come from `default`.
    pub fn parse(text: &str, default: &(Vec<f64>, Vec<f64>)) -> Result<Self> {
        let bad = |m: String| Error::config(0, format!("grid `{text}`: {m}"));
        let mut parts = text.split(',');
        let counts: Vec<usize> = parts
            .next()
            .unwrap_or("")
            .split('x')
            .map(|t| t.trim().parse().map_err(|_| bad(format!("bad count `{t}`"))))
            .collect::<Result<_>>()?;
        let d = default.0.len();
        if counts.len() != d {
            return Err(bad(format!("{} counts for a {d}-dimensional domain", counts.len())));
        }
        if counts.iter().any(|&n| n < 2) {
            return Err(bad("every axis needs at least 2 points".into()));
        }
        let rest: Vec<&str> = parts.collect();
        let ranges = if rest.is_empty() {
            default.0.iter().copied().zip(default.1.iter().copied()).collect()
        } else {
            if rest.len() != d {
                return Err(bad(format!("{} ranges for a {d}-dimensional domain", rest.len())));
            }
            rest.iter()
                .map(|r| {
                    let (lo, hi) = r.split_once(':').ok_or_else(|| bad(format!("range `{r}` is not lo:hi")))?;
                    let lo: f64 = lo.trim().parse().map_err(|_| bad(format!("bad bound `{lo}`")))?;
                    let hi: f64 = hi.trim().parse().map_err(|_| bad(format!("bad bound `{hi}`")))?;
                    if !(lo < hi) {
                        return Err(bad(format!("range `{r}` needs lo < hi")));
                    }
                    Ok((lo, hi))
                })
                .collect::<Result<_>>()?
        };
        Ok(GridSpec { counts, ranges })
    }

    /// Row-major points, last axis fastest.
    pub fn points(&self) -> Vec<f64> {
        let d = self.counts.len();
        let total: usize = self.counts.iter().product();
        let mut out = Vec::with_capacity(total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            for a in 0..d {
                let (lo, hi) = self.ranges[a];
                out.push(lo + (hi - lo) * idx[a] as f64 / (self.counts[a] - 1) as f64);
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < self.counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        out
    }
}

/// Grid CSV `x1..xd,u` with u scaled to max |u| = 1 and exactly 0 outside Ω.
pub fn eigenfunction_csv(snap: &ModeSnapshot, grid: &str) -> Result<String> {
    let domain = snap.features.domain();
    let d = domain.dim();
    let spec = GridSpec::parse(grid, &domain.bounding_box())?;
    let pts = spec.points();
    let mut u = snap.forward_batch(&pts)?;
    for (v, x) in u.iter_mut().zip(pts.chunks_exact(d)) {
        if !domain.contains(x) {
            *v = 0.0;
        }
    }
    let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(max > 0.0) {
        return Err(Error::DegenerateTrialFunction(max));
    }
    let mut s = String::new();
    let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    let _ = writeln!(s, "{},u", header.join(","));
    for (v, x) in u.iter().zip(pts.chunks_exact(d)) {
        for c in x {
            let _ = write!(s, "{c:.16e},");
        }
        let _ = writeln!(s, "{:.16e}", v / max);
    }
    Ok(s)
}

fn describe_domain(domain: &Domain) -> String {
    let mut s = format!("domain {}\n", domain.to_tokens());
    let (lo, hi) = domain.bounding_box();
    let _ = writeln!(s, "dimension {}\nvolume {:.10}\nbounding box {lo:?} to {hi:?}", domain.dim(), domain.volume());
    if let Some(poly) = domain.polygon() {
        s.push_str("vertices (counter-clockwise):\n");
        for v in poly {
            let _ = writeln!(s, "  ({}, {})", v[0], v[1]);
        }
        for c in domain.reentrant_corners() {
            let _ = writeln!(s, "reentrant corner ({}, {}) start angle {:.6}", c.point[0], c.point[1], c.start_angle);
        }
    }
    s
}

fn parse_arch(values: &[String]) -> Result<Architecture> {
    let mut nums = [0usize; 3];
    for (i, (v, name)) in values.iter().zip(["d", "l", "m"]).enumerate() {
        let raw = v.strip_prefix(name).and_then(|r| r.strip_prefix('=')).unwrap_or(v);
        nums[i] = raw.parse().map_err(|_| Error::config(0, format!("--arch: cannot parse `{v}` as {name}")))?;
    }
    Architecture::new(nums[0], nums[1], nums[2]).map_err(|e| Error::config(0, e.to_string()))
}

pub fn info(
    arch: Option<&[String]>,
    schedule: bool,
    preset: Option<Preset>,
    domain: Option<&str>,
    config: Option<&Path>,
    keys: bool,
) -> Result<String> {
    let mut out = String::new();
    if let Some(a) = arch {
        let a = parse_arch(a)?;
        let _ = writeln!(out, "{} parameters", a.param_count());
    }
    if schedule {
        let p = preset.unwrap_or(Preset::Paper);
        let t = p.train();
        let _ = writeln!(out, "{} preset: {} epochs", p.name(), t.epochs);
        for stage in 0..t.stages() {
            let first = stage * t.decay_every;
            let _ = writeln!(out, "  stage {}: from epoch {first:>6}  lr {:.4e}  n {}", stage + 1, lr_at(&t, first), n_at(&t, first));
        }
    }
    if let Some(name) = domain {
        let built = config::Geometry::default().build(name).map_err(|e| Error::config(0, e.to_string()))?;
        out.push_str(&describe_domain(&built));
    }
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| Error::config(0, format!("cannot read {}: {e}", path.display())))?;
        let cfg = RunConfig::parse(&text, Command::Solve, None, None)
            .or_else(|_| RunConfig::parse(&text, Command::Isospectral, None, None))
            .or_else(|_| RunConfig::parse(&text, Command::Solve, None, None))?;
        out.push_str(&cfg.render());
        for i in 0..cfg.domains.len() {
            let dom = cfg.domain(i)?;
            out.push_str(&describe_domain(&dom));
            for &s in &cfg.s_values {
                let set = FeatureSet::from_decl(&dom, &cfg.feature_decl(s, &dom))?;
                let arch = Architecture::new(dom.dim(), cfg.layers, set.len())?;
                let _ = writeln!(out, "features at s={s}: {} ({} parameters)", set.len(), arch.param_count());
                for f in set.specs() {
                    let _ = writeln!(out, "  {} {}", f.kind.token(), f.exponent);
                }
            }
        }
    }
    if keys {
        out.push_str(&config::keys_help());
    }
    if out.is_empty() {
        return Err(Error::config(0, "info needs a topic: --arch, --schedule, --domain, --config or --keys"));
    }
    Ok(out)
}
