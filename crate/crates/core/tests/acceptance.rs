//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The training criteria use the desk preset
//! and take a few hours on one core.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use fsev::cli::config::{Command, RunConfig};
use fsev::cli::{self, validate};
use fsev::network::ModeSnapshot;
use fsev::oracle::{paper_reference, Source};
use fsev::trainer::max_overlap;

const PROPERTY_BUDGET: Duration = Duration::from_secs(60);
const INTERVAL_TOL: f64 = 0.005;
const INTERVAL_ROW_TOL: f64 = 0.01;
const SQUARE_TOL: f64 = 0.01;
const BALL_TOL: f64 = 0.01;
const LSHAPE_TOL: f64 = 0.015;
const OVERLAP_MAX: f64 = 0.05;
const MIN_SIGNIFICANCE: f64 = 2.0;

struct Report {
    failures: usize,
}

impl Report {
    fn record(&mut self, id: u32, passed: bool, detail: &str, elapsed: Duration) {
        if !passed {
            self.failures += 1;
        }
        println!(
            "criterion {id:>2} {}: {detail} [{:.1} s]",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

struct Run {
    name: String,
    lambdas: Vec<f64>,
    ses: Vec<f64>,
    overlap: Option<f64>,
}

fn read_modes(dir: &Path, k: usize) -> Vec<ModeSnapshot> {
    (1..=k).map_while(|i| ModeSnapshot::load(&dir.join(format!("mode_{i}.fsev"))).ok()).collect()
}

fn overlap(cfg: &RunConfig, domain_index: usize, s: f64, modes: &[ModeSnapshot]) -> Option<f64> {
    if modes.len() < 2 {
        return None;
    }
    let (problem, _) = cli::build(cfg, domain_index, s).ok()?;
    max_overlap(modes, &problem, cfg.train.n_final, cfg.train.seed + 1).ok()
}

/// Runs `solve` on a desk-preset config and reads back the results.
fn solve(name: &str, body: &str) -> Run {
    let cfg = RunConfig::parse(body, Command::Solve, None, None).expect("acceptance config parses");
    let out = root().join(name);
    let status = cli::cmd_solve(&cfg, &out, &mut |line| eprintln!("[{name}] {line}"));
    if let Err(e) = &status {
        eprintln!("[{name}] error: {e}");
    }
    let mut lambdas = Vec::new();
    let mut ses = Vec::new();
    if let Ok(csv) = fs::read_to_string(out.join("eigenvalues.csv")) {
        for line in csv.lines().skip(1) {
            let v: Vec<f64> = line.split(',').map(|t| t.parse().unwrap()).collect();
            lambdas.push(v[1]);
            ses.push(v[2]);
        }
    }
    let modes = read_modes(&out, cfg.modes);
    let overlap = overlap(&cfg, 0, cfg.s_values[0], &modes);
    Run { name: name.into(), lambdas, ses, overlap }
}

fn reference(domain: &str, s: f64, k: usize, source: Source) -> f64 {
    paper_reference(domain, s, k, source).expect("reference value on record").value
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.5}")).collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    fsev::tune_allocator();
    let mut report = Report { failures: 0 };
    let no_inject = validate::Injections::default();

    let property = |report: &mut Report, id: u32, check: &dyn Fn() -> validate::Check| {
        let t = Instant::now();
        let c = check();
        let el = t.elapsed();
        let ok = c.passed && el < PROPERTY_BUDGET;
        report.record(id, ok, &format!("{}: {}", c.name, c.detail), el);
    };
    property(&mut report, 1, &|| validate::check_unbiasedness(&no_inject, 1));
    property(&mut report, 2, &|| validate::check_gradient(&no_inject, 2));
    property(&mut report, 3, &|| validate::check_scale_invariance(3));
    property(&mut report, 4, &validate::check_adam);

    let mut multi: Vec<Run> = Vec::new();

    // 5: interval
    let t = Instant::now();
    let half = solve("interval_s0.5", "domain = interval\ns = 0.5\nK = 1\n");
    let near = solve("interval_s0.95", "domain = interval\ns = 0.95\nK = 1\n");
    let row = solve("interval_s0.75", "domain = interval\ns = 0.75\nK = 5\n");
    let e_half = reference("interval", 0.5, 1, Source::Exact);
    let e_near = reference("interval", 0.95, 1, Source::Exact);
    let row_ref: Vec<f64> = (1..=5).map(|k| reference("interval", 0.75, k, Source::Our)).collect();
    let ok_half = half.lambdas.len() == 1 && rel(half.lambdas[0], e_half) < INTERVAL_TOL;
    let ok_near = near.lambdas.len() == 1 && rel(near.lambdas[0], e_near) < INTERVAL_TOL;
    let ok_row = row.lambdas.len() == 5 && row.lambdas.iter().zip(&row_ref).all(|(a, b)| rel(*a, *b) < INTERVAL_ROW_TOL);
    report.record(
        5,
        ok_half && ok_near && ok_row,
        &format!(
            "s=0.5 {} vs {e_half}; s=0.95 {} vs {e_near}; s=0.75 [{}] vs [{}]",
            fmt(&half.lambdas),
            fmt(&near.lambdas),
            fmt(&row.lambdas),
            fmt(&row_ref)
        ),
        t.elapsed(),
    );
    multi.push(row);

    // 6: square, with a double second eigenvalue
    let t = Instant::now();
    let sq = solve("square_s0.5", "domain = square\ns = 0.5\nK = 3\n");
    let e_sq = reference("square", 0.5, 1, Source::Our);
    let ok = sq.lambdas.len() == 3
        && rel(sq.lambdas[0], e_sq) < SQUARE_TOL
        && (sq.lambdas[1] - sq.lambdas[2]).abs() <= 2.0 * (sq.ses[1] + sq.ses[2]);
    let gap = if sq.lambdas.len() == 3 { (sq.lambdas[1] - sq.lambdas[2]).abs() } else { f64::NAN };
    let bound = if sq.ses.len() == 3 { 2.0 * (sq.ses[1] + sq.ses[2]) } else { f64::NAN };
    report.record(
        6,
        ok,
        &format!("[{}] vs {e_sq}; |l2-l3| {gap:.2e} vs 2(se2+se3) {bound:.2e}", fmt(&sq.lambdas)),
        t.elapsed(),
    );
    multi.push(sq);

    // 7: unit ball in 3-D near the classical limit
    let t = Instant::now();
    let ball = solve("ball3_s0.9999", "domain = ball\ndim = 3\ns = 0.9999\nK = 1\n");
    let pi2 = std::f64::consts::PI.powi(2);
    let ok = ball.lambdas.len() == 1 && rel(ball.lambdas[0], pi2) < BALL_TOL;
    report.record(
        7,
        ok,
        &format!("{} vs pi^2 = {pi2:.5} (published {})", fmt(&ball.lambdas), reference("ball3", 0.9999, 1, Source::Our)),
        t.elapsed(),
    );

    // 8: L-shape
    let t = Instant::now();
    let l = solve("lshape_s0.5", "domain = lshape\ns = 0.5\nK = 1\nfirst_features = 40\ncorner_features = 20\n");
    let e_l = reference("lshape", 0.5, 1, Source::Our);
    let ok = l.lambdas.len() == 1 && rel(l.lambdas[0], e_l) < LSHAPE_TOL;
    report.record(8, ok, &format!("{} vs {e_l}", fmt(&l.lambdas)), t.elapsed());

    // 10: drums
    let t = Instant::now();
    let iso_cfg = RunConfig::parse("s_list = 0.5\nK = 2\n", Command::Isospectral, None, None).unwrap();
    let iso_out = root().join("isospectral_s0.5");
    if let Err(e) = cli::cmd_isospectral(&iso_cfg, &iso_out, &mut |line| eprintln!("[drums] {line}")) {
        eprintln!("[drums] error: {e}");
    }
    let rows: Vec<Vec<f64>> = fs::read_to_string(iso_out.join("isospectral.csv"))
        .map(|t| t.lines().skip(1).map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect())
        .unwrap_or_default();
    let detail = rows
        .iter()
        .map(|r| format!("k={}: A {:.5} B {:.5} R {:+.3e} sig {:.1}", r[1], r[2], r[4], r[6], r[7]))
        .collect::<Vec<_>>()
        .join("; ");
    for (i, name) in iso_cfg.domains.iter().enumerate() {
        let dir = iso_out.join(format!("s0.5_{}_{name}", ["A", "B"][i]));
        let modes = read_modes(&dir, iso_cfg.modes);
        multi.push(Run {
            name: format!("{name} s=0.5"),
            lambdas: modes.iter().map(|m| m.lambda_hat).collect(),
            ses: modes.iter().map(|m| m.lambda_se).collect(),
            overlap: overlap(&iso_cfg, i, 0.5, &modes),
        });
    }
    let iso_elapsed = t.elapsed();

    // 9: orthogonality over every multi-mode run above
    let ok = multi.iter().all(|r| r.overlap.is_some_and(|o| o < OVERLAP_MAX));
    let detail9 = multi
        .iter()
        .map(|r| format!("{} {}", r.name, r.overlap.map_or("missing".to_string(), |o| format!("{o:.2e}"))))
        .collect::<Vec<_>>()
        .join("; ");
    report.record(9, ok, &detail9, Duration::ZERO);
    report.record(10, ok_iso(&rows), &detail, iso_elapsed);

    println!("{} of 10 criteria passed", 10 - report.failures);
    if report.failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn ok_iso(rows: &[Vec<f64>]) -> bool {
    rows.len() == 2 && rows[0][6] > 0.0 && rows[1][6] < 0.0 && rows.iter().all(|r| r[7] >= MIN_SIGNIFICANCE)
}
