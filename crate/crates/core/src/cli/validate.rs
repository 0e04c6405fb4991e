//! Self-checks behind `fsev validate`. Each check is a plain function so the
//! acceptance suite can call the same code.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::estimator::{ball_profile, c_ds, mean_and_se, Potential, Prior, Problem, SampleLoss};
use crate::features::{FeatureDecl, FeatureSet};
use crate::geometry::Domain;
use crate::network::{loss_gradient, ModeSnapshot, NetworkParams, OutputLoss};
use crate::oracle::{self, LimitDomain, Source};
use crate::trainer::{adam_step, AdamConfig, AdamState, ModelSpec};
use crate::Result;

/// Test hooks that deliberately break one ingredient.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Injections {
    /// multiplies C_{d,s} in the unbiasedness check
    pub constant_factor: Option<f64>,
    /// drops the shifted-point branch of the loss adjoint
    pub broken_gradient: bool,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn from_result(name: &'static str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Check { name, passed, detail },
            Err(e) => Check { name, passed: false, detail: format!("error: {e}") },
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

pub const UNBIASED_ORDERS: [f64; 3] = [0.25, 0.5, 0.75];
pub const UNBIASED_BATCHES: usize = 200;
pub const UNBIASED_N: usize = 10_000;
pub const FD_COORDS: usize = 100;
pub const FD_TOL: f64 = 1e-5;
pub const SCALE_FACTORS: [f64; 3] = [-3.0, 0.01, 7.0];
pub const SCALE_TOL: f64 = 1e-12;
pub const ADAM_TOL: f64 = 1e-12;
pub const QUADRATURE_TOL: f64 = 1e-4;

/// θ after three steps from 0 with gradients 1, -0.5, 2, lr 1e-3 and the
/// default constants, evaluated in exact rational arithmetic.
pub const ADAM_REFERENCE: [f64; 3] = [-9.9999999e-4, -1.2663370262909702e-3, -1.92444862157197e-3];
pub const ADAM_GRADIENTS: [f64; 3] = [1.0, -0.5, 2.0];

pub fn check_reference_checksum() -> Check {
    Check::from_result(
        "reference table checksum",
        oracle::verify_reference_checksum().map(|_| (true, oracle::reference_digest())),
    )
}

pub fn check_constants() -> Check {
    let r = (|| {
        let cases = [(1, 1.0 / PI), (2, 1.0 / (2.0 * PI)), (3, 1.0 / (PI * PI))];
        let mut worst: f64 = 0.0;
        for (d, want) in cases {
            worst = worst.max(rel(c_ds(d, 0.5)?, want));
        }
        Ok((worst < 1e-13, format!("max relative error {worst:.2e} over d=1,2,3 at s=0.5")))
    })();
    Check::from_result("normalizing constant", r)
}

pub fn check_quadrature() -> Check {
    let r = (|| {
        let mut detail = String::new();
        let mut ok = true;
        for s in UNBIASED_ORDERS {
            let q = oracle::seminorm_quadrature(s, 1.0 / 24.0)?;
            let c = oracle::closed_form_quadratic(s)?;
            ok &= rel(q, c) < QUADRATURE_TOL;
            let _ = write!(detail, "s={s}: quadrature {q:.8} closed form {c:.8}; ");
        }
        Ok((ok, detail.trim_end_matches("; ").to_string()))
    })();
    Check::from_result("closed form vs quadrature", r)
}

/// Mean of A1+A2 for (1-x²)^s_+ over independent batches against the closed
/// form, at every order in [`UNBIASED_ORDERS`].
pub fn check_unbiasedness(inject: &Injections, seed: u64) -> Check {
    let r = (|| {
        let mut detail = String::new();
        let mut ok = true;
        for (i, s) in UNBIASED_ORDERS.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
            let mut p = Problem::on(Domain::interval(-1.0, 1.0)?, s, Potential::Zero, &mut rng)?;
            if let Some(f) = inject.constant_factor {
                let c = p.constant();
                p = p.with_constant(c * f);
            }
            let u = ball_profile(s, 1);
            let mut totals = Vec::with_capacity(UNBIASED_BATCHES);
            for _ in 0..UNBIASED_BATCHES {
                let b = p.draw_batch(UNBIASED_N, &mut rng)?;
                let ux = u(&b.xs)?;
                let uy = u(&b.shifted())?;
                totals.push(p.estimate_a1(&b, &ux, &uy)? + p.estimate_a2(&b, &ux)?);
            }
            let (mean, se) = mean_and_se(&totals);
            let exact = oracle::closed_form_quadratic(s)?;
            let z = (mean - exact).abs() / se;
            ok &= z < 3.0;
            let _ = write!(detail, "s={s}: {mean:.5} vs {exact:.5} ({z:.2} se); ");
        }
        Ok((ok, detail.trim_end_matches("; ").to_string()))
    })();
    Check::from_result("estimator unbiasedness", r)
}

/// Drops the adjoint for the shifted points, a realistic chain-rule slip.
struct Broken<'a>(SampleLoss<'a>);

impl OutputLoss for Broken<'_> {
    fn evaluate(&self, outputs: &[f64], adjoint: &mut [f64]) -> Result<f64> {
        let v = self.0.evaluate(outputs, adjoint)?;
        let n = adjoint.len() / 2;
        adjoint[n..].fill(0.0);
        Ok(v)
    }
}

/// Central differences of the full loss (Rayleigh quotient plus penalty with
/// one prior, harmonic potential) on a fixed batch against the analytic
/// gradient at [`FD_COORDS`] random coordinates.
pub fn check_gradient(inject: &Injections, seed: u64) -> Check {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dom = Domain::interval(-1.0, 1.0)?;
        let s = 0.4;
        let problem = Problem::on(dom.clone(), s, Potential::Harmonic, &mut rng)?;
        let features = FeatureSet::from_decl(&dom, &FeatureDecl::standard(s, 12, 0))?;
        let model = ModelSpec { features: features.clone(), layers: 2 };
        let arch = model.architecture()?;
        let prior = ModeSnapshot {
            params: NetworkParams::init(arch, &mut rng),
            features: features.clone(),
            lambda_hat: 1.0,
            lambda_se: 0.0,
            l2_norm_sq: 0.5,
        };
        let params = NetworkParams::init(arch, &mut rng);
        let batch = problem.draw_batch(500, &mut rng)?;
        let sample = problem.prepare(batch, &[Prior::from(&prior)])?;
        let xs = sample.batch.stacked();
        let beta = 5.0;
        let value = |p: &NetworkParams| -> Result<f64> {
            let out = crate::network::forward_batch(p, &features, &xs)?;
            Ok(problem.loss(&sample, &out, beta, None)?.loss)
        };
        let sl = SampleLoss::new(&problem, &sample, beta);
        let (_, g) = if inject.broken_gradient {
            loss_gradient(&params, &features, &xs, &Broken(sl))?
        } else {
            loss_gradient(&params, &features, &xs, &sl)?
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..FD_COORDS {
            let k = rng.random_range(0..arch.param_count());
            let mut p = params.clone();
            p.values[k] += h;
            let lp = value(&p)?;
            p.values[k] -= 2.0 * h;
            let lm = value(&p)?;
            let fd = (lp - lm) / (2.0 * h);
            let scale = fd.abs().max(g[k].abs()).max(1e-6);
            worst = worst.max((fd - g[k]).abs() / scale);
        }
        Ok((worst < FD_TOL, format!("max relative deviation {worst:.2e} over {FD_COORDS} coordinates")))
    })();
    Check::from_result("loss gradient vs finite differences", r)
}

/// The loss of c·u equals the loss of u on a fixed batch with one prior.
pub fn check_scale_invariance(seed: u64) -> Check {
    let r = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let problem = Problem::on(Domain::interval(-1.0, 1.0)?, 0.3, Potential::StiffHarmonicSine, &mut rng)?;
        let prior = |xs: &[f64]| -> Result<Vec<f64>> {
            Ok(xs.iter().map(|&x| if x.abs() < 1.0 { x * (1.0 - x * x).powf(0.3) } else { 0.0 }).collect())
        };
        let u = |xs: &[f64]| -> Vec<f64> {
            xs.iter().map(|&x| if x.abs() < 1.0 { (1.0 - x * x).powf(0.3) * (1.0 + 0.4 * x) } else { 0.0 }).collect()
        };
        let batch = problem.draw_batch(5000, &mut rng)?;
        let sample = problem.prepare(batch, &[Prior { function: &prior, norm_sq: 0.4 }])?;
        let out = u(&sample.batch.stacked());
        let base = problem.loss(&sample, &out, 7.0, None)?;
        let mut worst: f64 = 0.0;
        for c in SCALE_FACTORS {
            let scaled: Vec<f64> = out.iter().map(|v| c * v).collect();
            worst = worst.max(rel(problem.loss(&sample, &scaled, 7.0, None)?.loss, base.loss));
        }
        Ok((worst <= SCALE_TOL, format!("max relative change {worst:.2e} for c in {SCALE_FACTORS:?}")))
    })();
    Check::from_result("loss scale invariance", r)
}

/// Three ADAM steps on one parameter against [`ADAM_REFERENCE`].
pub fn check_adam() -> Check {
    let r = (|| {
        let mut theta = [0.0];
        let mut state = AdamState::new(1);
        let mut worst: f64 = 0.0;
        for (t, g) in ADAM_GRADIENTS.into_iter().enumerate() {
            adam_step(&mut theta, &[g], &mut state, 1e-3, &AdamConfig::default(), t)?;
            worst = worst.max((theta[0] - ADAM_REFERENCE[t]).abs());
        }
        Ok((worst <= ADAM_TOL, format!("max deviation {worst:.2e}, final theta {:.17e}", theta[0])))
    })();
    Check::from_result("ADAM trajectory", r)
}

/// Classical spectra against the s = 1 row of the published ball table.
pub fn check_laplacian_limits() -> Check {
    let r = (|| {
        let mut worst: f64 = 0.0;
        let mut count = 0;
        for e in oracle::reference_entries()
            .iter()
            .filter(|e| e.domain == "ball3" && e.s == 1.0 && e.source == Source::Exact)
        {
            worst = worst.max(rel(oracle::laplacian_limit(LimitDomain::Ball3, e.k)?, e.value));
            count += 1;
        }
        let interval = rel(oracle::laplacian_limit(LimitDomain::Interval, 1)?, PI * PI / 4.0);
        let square = rel(oracle::laplacian_limit(LimitDomain::Square, 2)?, 5.0 * PI * PI / 4.0);
        let ok = count > 0 && worst < 5e-6 && interval < 1e-15 && square < 1e-15;
        Ok((ok, format!("{count} ball entries, max relative deviation {worst:.2e}")))
    })();
    Check::from_result("Laplacian limits", r)
}

pub fn run_all(inject: &Injections) -> Vec<Check> {
    vec![
        check_reference_checksum(),
        check_constants(),
        check_quadrature(),
        check_unbiasedness(inject, 1),
        check_gradient(inject, 2),
        check_scale_invariance(3),
        check_adam(),
        check_laplacian_limits(),
    ]
}
