//! ADAM training of one eigenmode at a time with the staged learning-rate and
//! sample-size schedule, and the sequential driver that extracts modes in
//! ascending order.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimator::{EigenEstimate, Prior, Problem, SampleLoss, W_CLAMP};
use crate::features::FeatureSet;
use crate::network::{loss_gradient, Architecture, ModeSnapshot, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub decay_every: usize,
    pub decay_factor: f64,
    pub n0: usize,
    pub n_growth: f64,
    pub beta_factor: f64,
    pub w_c: f64,
    pub seed: u64,
    pub n_final: usize,
    pub n_batches_final: usize,
    pub adam: AdamConfig,
    /// epochs between progress records; 0 disables them
    pub progress_every: usize,
}

impl TrainConfig {
    /// The full published schedule: 120 000 epochs in six stages.
    pub fn paper() -> Self {
        TrainConfig {
            epochs: 120_000,
            lr0: 5e-3,
            decay_every: 20_000,
            decay_factor: 4.0,
            n0: 1000,
            n_growth: 2.0,
            beta_factor: 4.0,
            w_c: W_CLAMP,
            seed: 0,
            n_final: 1_000_000,
            n_batches_final: 100,
            adam: AdamConfig::default(),
            progress_every: 1000,
        }
    }

    /// Six stages of 5 000 epochs with a gentler sample growth and a smaller
    /// final estimate, sized for a single CPU.
    pub fn desk() -> Self {
        TrainConfig {
            epochs: 30_000,
            decay_every: 5_000,
            n_growth: std::f64::consts::SQRT_2,
            n_final: 100_000,
            n_batches_final: 100,
            progress_every: 500,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(0, m));
        if self.epochs == 0 || self.n0 == 0 || self.decay_every == 0 {
            return bad("epochs, n0 and decay_every must be >= 1");
        }
        if !(self.lr0 > 0.0) || !(self.decay_factor > 1.0) || !(self.n_growth >= 1.0) {
            return bad("need lr0 > 0, decay_factor > 1 and n_growth >= 1");
        }
        if !(self.beta_factor > 0.0) || !(self.w_c > 0.0) {
            return bad("beta_factor and w_c must be positive");
        }
        if self.n_final == 0 || self.n_batches_final == 0 {
            return bad("n_final and n_batches_final must be >= 1");
        }
        let a = self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam constants need 0 <= beta1, beta2 < 1 and eps > 0");
        }
        Ok(())
    }

    fn stage(&self, epoch: usize) -> i32 {
        (epoch / self.decay_every) as i32
    }

    pub fn stages(&self) -> usize {
        self.epochs.div_ceil(self.decay_every)
    }
}

/// lr0 / decay_factor^⌊epoch / decay_every⌋
pub fn lr_at(config: &TrainConfig, epoch: usize) -> f64 {
    config.lr0 / config.decay_factor.powi(config.stage(epoch))
}

/// n0 · n_growth^⌊epoch / decay_every⌋, rounded to the nearest count.
pub fn n_at(config: &TrainConfig, epoch: usize) -> usize {
    (config.n0 as f64 * config.n_growth.powi(config.stage(epoch))).round() as usize
}

/// Penalty weight for the next mode: none for the first, otherwise
/// `beta_factor` times the largest eigenvalue found so far.
pub fn beta_for(found: &[f64], config: &TrainConfig) -> Option<f64> {
    found.iter().copied().reduce(f64::max).map(|m| config.beta_factor * m)
}

/// First and second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }
}

/// One bias-corrected ADAM update. `epoch` only labels a divergence error;
/// on error the parameters are left untouched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    adam: &AdamConfig,
    epoch: usize,
) -> Result<()> {
    if let Some(index) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::OptimizerDivergence { epoch, index });
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - adam.beta1.powi(t);
    let c2 = 1.0 - adam.beta2.powi(t);
    let mut next = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let g = grads[i];
        let m = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        let v = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        let theta = params[i] - lr * (m / c1) / ((v / c2).sqrt() + adam.eps);
        if !theta.is_finite() {
            state.t -= 1;
            return Err(Error::OptimizerDivergence { epoch, index: i });
        }
        state.m[i] = m;
        state.v[i] = v;
        next.push(theta);
    }
    params.copy_from_slice(&next);
    Ok(())
}

/// Purpose of a random stream within one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamTag {
    Init = 1,
    Batch = 2,
    Final = 3,
    Overlap = 4,
}

/// Independent ChaCha stream keyed by (seed, mode, epoch, tag).
pub fn stream(seed: u64, mode: usize, epoch: usize, tag: StreamTag) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(mode as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[24..].copy_from_slice(&(tag as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// The network shape shared by every mode of a run.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub features: FeatureSet,
    pub layers: usize,
}

impl ModelSpec {
    pub fn architecture(&self) -> Result<Architecture> {
        Architecture::new(self.features.dim(), self.layers, self.features.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProgressRecord {
    pub mode: usize,
    pub epoch: usize,
    pub loss: f64,
    pub ratio: f64,
    pub lr: f64,
    pub n: usize,
}

impl ProgressRecord {
    /// One JSON object per line.
    pub fn to_line(&self) -> String {
        format!(
            "{{\"mode\":{},\"epoch\":{},\"loss\":{:e},\"ratio\":{:e},\"lr\":{:e},\"n\":{}}}",
            self.mode, self.epoch, self.loss, self.ratio, self.lr, self.n
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainedMode {
    pub snapshot: ModeSnapshot,
    pub estimate: EigenEstimate,
    pub beta: Option<f64>,
    pub wall_seconds: f64,
}

/// Trains mode `k` (1-based) against the frozen `priors` and estimates its
/// eigenvalue with `n_final × n_batches_final` samples.
pub fn train_mode(
    k: usize,
    priors: &[ModeSnapshot],
    problem: &Problem,
    model: &ModelSpec,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&ProgressRecord),
) -> Result<TrainedMode> {
    config.validate()?;
    if priors.len() + 1 != k {
        return Err(Error::ShapeMismatch(format!("mode {k} needs {} priors, got {}", k - 1, priors.len())));
    }
    let start = Instant::now();
    let arch = model.architecture()?;
    let mut params = NetworkParams::init(arch, &mut stream(config.seed, k, 0, StreamTag::Init));
    let mut adam = AdamState::new(params.values.len());
    let found: Vec<f64> = priors.iter().map(|p| p.lambda_hat).collect();
    let beta = beta_for(&found, config);
    let prior_refs: Vec<Prior<'_>> = priors.iter().map(Prior::from).collect();

    for epoch in 0..config.epochs {
        let n = n_at(config, epoch);
        let lr = lr_at(config, epoch);
        let batch = problem.draw_batch(n, &mut stream(config.seed, k, epoch, StreamTag::Batch))?;
        let sample = problem.prepare(batch, &prior_refs)?;
        let loss = SampleLoss::new(problem, &sample, beta.unwrap_or(0.0));
        let (value, grad) = loss_gradient(&params, &model.features, &sample.batch.stacked(), &loss)?;
        adam_step(&mut params.values, &grad, &mut adam, lr, &config.adam, epoch)?;
        let report = config.progress_every > 0 && (epoch % config.progress_every == 0 || epoch + 1 == config.epochs);
        if report {
            let ratio = loss.take_breakdown().map(|b| b.ratio()).unwrap_or(f64::NAN);
            progress(&ProgressRecord { mode: k, epoch, loss: value, ratio, lr, n });
        }
    }

    let mut snapshot = ModeSnapshot {
        params,
        features: model.features.clone(),
        lambda_hat: 0.0,
        lambda_se: 0.0,
        l2_norm_sq: 0.0,
    };
    let estimate = problem.estimate_eigenvalue(
        &snapshot,
        config.n_final,
        config.n_batches_final,
        &mut stream(config.seed, k, 0, StreamTag::Final),
    )?;
    snapshot.lambda_hat = estimate.lambda_hat;
    snapshot.lambda_se = estimate.se;
    snapshot.l2_norm_sq = estimate.l2_norm_sq;
    Ok(TrainedMode {
        snapshot,
        estimate,
        beta,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Modes found before a failure, the failure itself, and any warnings.
#[derive(Debug)]
pub struct SolveOutcome {
    pub modes: Vec<TrainedMode>,
    pub failure: Option<(usize, Error)>,
    pub warnings: Vec<String>,
}

/// Warnings for a just-finished mode: the penalty rule `β > λ_k − λ_1` and
/// ascending order within the reported standard errors.
pub fn sequence_warnings(modes: &[TrainedMode]) -> Vec<String> {
    let mut out = Vec::new();
    let Some(last) = modes.last() else { return out };
    let k = modes.len();
    if k < 2 {
        return out;
    }
    let first = &modes[0].estimate;
    let cur = &last.estimate;
    if let Some(beta) = last.beta {
        if beta <= cur.lambda_hat - first.lambda_hat {
            out.push(format!(
                "mode {k}: penalty beta={beta:e} is not above lambda_{k} - lambda_1 = {:e}",
                cur.lambda_hat - first.lambda_hat
            ));
        }
    }
    let prev = &modes[k - 2].estimate;
    if cur.lambda_hat < prev.lambda_hat - 2.0 * (cur.se + prev.se) {
        out.push(format!(
            "mode {k}: lambda {:e} is below mode {} lambda {:e} beyond 2(se_i + se_i+1)",
            cur.lambda_hat,
            k - 1,
            prev.lambda_hat
        ));
    }
    out
}

/// Extracts `count` modes in order; each mode gets a fresh network and the
/// penalty weight from [`beta_for`]. `on_mode` sees each finished mode.
pub fn solve_sequence(
    count: usize,
    problem: &Problem,
    model: &ModelSpec,
    config: &TrainConfig,
    progress: &mut dyn FnMut(&ProgressRecord),
    on_mode: &mut dyn FnMut(&TrainedMode),
) -> Result<SolveOutcome> {
    if count == 0 {
        return Err(Error::config(0, "K must be ≥ 1"));
    }
    config.validate()?;
    let mut modes: Vec<TrainedMode> = Vec::with_capacity(count);
    let mut warnings = Vec::new();
    for k in 1..=count {
        let priors: Vec<ModeSnapshot> = modes.iter().map(|m| m.snapshot.clone()).collect();
        match train_mode(k, &priors, problem, model, config, progress) {
            Ok(mode) => {
                on_mode(&mode);
                modes.push(mode);
                warnings.extend(sequence_warnings(&modes));
            }
            Err(e) => {
                return Ok(SolveOutcome { modes, failure: Some((k, e)), warnings });
            }
        }
    }
    Ok(SolveOutcome { modes, failure: None, warnings })
}

/// Largest pairwise normalized overlap among the modes, using `n` uniform
/// points of Ω per pair.
pub fn max_overlap(modes: &[ModeSnapshot], problem: &Problem, n: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for i in 0..modes.len() {
        for j in i + 1..modes.len() {
            let mut rng = stream(seed, i * modes.len() + j, 0, StreamTag::Overlap);
            worst = worst.max(problem.normalized_overlap(&modes[i], &modes[j], n, &mut rng)?);
        }
    }
    Ok(worst)
}
