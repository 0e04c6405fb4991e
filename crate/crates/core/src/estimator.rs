//! Monte Carlo estimators for the energy, L² and overlap integrals of the
//! loss, and the final eigenvalue estimate.
//!
//! The seminorm is split into a near part `A1` over the convex region D,
//! sampled along rays `x + w ξ` with radial density ∝ w^{1-2s}, and a tail
//! `A2` that only needs `u(x)` and the ray exit distance `w⁺`. L², potential
//! and overlap terms reuse the same x-sample restricted to Ω.

use std::cell::RefCell;
use std::f64::consts::PI;

use rand::Rng;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, LossSnapshot, Result};
use crate::geometry::{sphere_area, uniform_direction, Domain, SamplingRegion};
use crate::network::{ModeSnapshot, OutputLoss};

/// Default floor for the radial offset inside the difference quotient.
pub const W_CLAMP: f64 = 1e-4;

/// Points closer than this to the origin are dropped for the inverse-square
/// potential.
pub const SINGULAR_RADIUS: f64 = 1e-8;

/// Largest tolerated fraction of interior points dropped by the guard above.
pub const MAX_SINGULAR_FRACTION: f64 = 1e-3;

/// Points per forward pass when estimating at large N.
const CHUNK: usize = 1 << 14;

/// C_{d,s} = 2^{2s} s Γ(s + d/2) / (π^{d/2} Γ(1 - s)).
pub fn c_ds(d: usize, s: f64) -> Result<f64> {
    check_order(s)?;
    let h = d as f64 / 2.0;
    let log = 2.0 * s * 2f64.ln() + s.ln() + ln_gamma(s + h) - h * PI.ln() - ln_gamma(1.0 - s);
    Ok(log.exp())
}

pub(crate) fn check_order(s: f64) -> Result<()> {
    if s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(Error::FractionalOrderOutOfRange(s))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Potential {
    Zero,
    /// ‖x‖²/2
    Harmonic,
    /// 50‖x‖² + sin(2π x₁)
    StiffHarmonicSine,
    /// 1/(2‖x‖²)
    InverseSquare,
}

impl Potential {
    pub const ALL: [Potential; 4] =
        [Potential::Zero, Potential::Harmonic, Potential::StiffHarmonicSine, Potential::InverseSquare];

    pub fn name(self) -> &'static str {
        match self {
            Potential::Zero => "zero",
            Potential::Harmonic => "harmonic",
            Potential::StiffHarmonicSine => "stiff_harmonic_sine",
            Potential::InverseSquare => "inverse_square",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == token)
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match self {
            Potential::Zero => 0.0,
            Potential::Harmonic => 0.5 * r2,
            Potential::StiffHarmonicSine => 50.0 * r2 + (2.0 * PI * x[0]).sin(),
            Potential::InverseSquare => 0.5 / r2,
        }
    }

    fn is_singular_at(self, x: &[f64]) -> bool {
        self == Potential::InverseSquare && x.iter().map(|v| v * v).sum::<f64>().sqrt() < SINGULAR_RADIUS
    }
}

/// One Monte Carlo draw: base points in D, unit directions, exit distances,
/// radial offsets and their clamped copies. Point arrays have stride `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub d: usize,
    pub xs: Vec<f64>,
    pub xis: Vec<f64>,
    pub w_plus: Vec<f64>,
    pub ws: Vec<f64>,
    pub ws_clamped: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.w_plus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w_plus.is_empty()
    }

    pub fn x(&self, i: usize) -> &[f64] {
        &self.xs[i * self.d..(i + 1) * self.d]
    }

    /// Shifted points `y_i = x_i + w̃_i ξ_i`, stride `d`.
    pub fn shifted(&self) -> Vec<f64> {
        let d = self.d;
        let mut ys = self.xs.clone();
        for (i, y) in ys.chunks_exact_mut(d).enumerate() {
            let w = self.ws_clamped[i];
            for k in 0..d {
                y[k] += w * self.xis[i * d + k];
            }
        }
        ys
    }

    /// `[x_1..x_N, y_1..y_N]`: the points at which the trial function is
    /// needed for one loss evaluation.
    pub fn stacked(&self) -> Vec<f64> {
        let mut pts = self.xs.clone();
        pts.extend(self.shifted());
        pts
    }
}

/// Radial offset by inverse transform of the density ∝ w^{1-2s} on (0, w⁺]:
/// `w = w⁺ U^{1/(2-2s)}`.
pub fn radial_offset(w_plus: f64, s: f64, u: f64) -> f64 {
    w_plus * u.powf(1.0 / (2.0 - 2.0 * s))
}

/// Draws `n` samples `(x, ξ, w⁺, w, w̃)` with x uniform in `region`.
pub fn draw_batch<R: Rng + ?Sized>(region: &SamplingRegion, s: f64, n: usize, w_c: f64, rng: &mut R) -> Result<Batch> {
    let d = region.dim();
    let mut b = Batch {
        d,
        xs: vec![0.0; n * d],
        xis: vec![0.0; n * d],
        w_plus: Vec::with_capacity(n),
        ws: Vec::with_capacity(n),
        ws_clamped: Vec::with_capacity(n),
    };
    for i in 0..n {
        let x = &mut b.xs[i * d..(i + 1) * d];
        let xi = &mut b.xis[i * d..(i + 1) * d];
        region.uniform_point(rng, x);
        uniform_direction(rng, xi);
        let wp = region.exit_distance(x, xi)?;
        // 1 - U lies in (0, 1], so w > 0
        let w = radial_offset(wp, s, 1.0 - rng.random::<f64>());
        b.w_plus.push(wp);
        b.ws.push(w);
        b.ws_clamped.push(w.max(w_c));
    }
    Ok(b)
}

/// Unbiased estimate of ∫_Ω u v from values at uniform points of Ω.
pub fn estimate_inner(u: &[f64], v: &[f64], vol_omega: f64) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::EmptyInteriorBatch);
    }
    let sum: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(vol_omega * sum / u.len() as f64)
}

pub fn estimate_l2(u: &[f64], vol_omega: f64) -> Result<f64> {
    estimate_inner(u, u, vol_omega)
}

/// ∫_Ω V u² from values of u and V at uniform points of Ω.
pub fn estimate_potential(u: &[f64], v: &[f64], vol_omega: f64) -> Result<f64> {
    if u.is_empty() {
        return Err(Error::EmptyInteriorBatch);
    }
    let sum: f64 = u.iter().zip(v).map(|(a, p)| p * a * a).sum();
    Ok(vol_omega * sum / u.len() as f64)
}

/// A function that can be evaluated on a batch of points (stride `d`).
pub trait TrialFunction {
    fn values(&self, xs: &[f64]) -> Result<Vec<f64>>;
}

impl<F> TrialFunction for F
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    fn values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        self(xs)
    }
}

impl TrialFunction for ModeSnapshot {
    fn values(&self, xs: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(xs)
    }
}

/// A previously found mode used as an orthogonality target.
#[derive(Clone, Copy)]
pub struct Prior<'a> {
    pub function: &'a dyn TrialFunction,
    pub norm_sq: f64,
}

impl<'a> From<&'a ModeSnapshot> for Prior<'a> {
    fn from(m: &'a ModeSnapshot) -> Self {
        Prior {
            function: m,
            norm_sq: m.l2_norm_sq,
        }
    }
}

/// Everything that defines one eigenvalue problem apart from the network.
#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: Domain,
    pub region: SamplingRegion,
    pub s: f64,
    pub potential: Potential,
    pub w_c: f64,
    constant: f64,
    vol_region: f64,
    vol_omega: f64,
    sphere: f64,
}

impl Problem {
    /// The region must contain the domain; this is checked by sampling.
    pub fn new<R: Rng + ?Sized>(
        domain: Domain,
        region: SamplingRegion,
        s: f64,
        potential: Potential,
        w_c: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let d = domain.dim();
        let constant = c_ds(d, s)?;
        if !(w_c > 0.0) {
            return Err(Error::InvalidGeometry(format!("clamp w_c must be positive, got {w_c}")));
        }
        region.verify_covers(&domain, crate::geometry::CONTAINMENT_CHECK_SAMPLES, rng)?;
        Ok(Problem {
            vol_region: region.volume(),
            vol_omega: domain.volume(),
            sphere: sphere_area(d),
            domain,
            region,
            s,
            potential,
            w_c,
            constant,
        })
    }

    /// Problem on `domain` with its default sampling region.
    pub fn on<R: Rng + ?Sized>(domain: Domain, s: f64, potential: Potential, rng: &mut R) -> Result<Self> {
        let region = domain.default_region();
        Self::new(domain, region, s, potential, W_CLAMP, rng)
    }

    /// Replaces C_{d,s}; only useful as a negative control.
    pub fn with_constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn constant(&self) -> f64 {
        self.constant
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn vol_omega(&self) -> f64 {
        self.vol_omega
    }

    pub fn draw_batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Batch> {
        draw_batch(&self.region, self.s, n, self.w_c, rng)
    }

    /// Per-sample factor of the near-part sum: (w⁺)^{2-2s}/(2-2s).
    fn a1_weight(&self, w_plus: f64) -> f64 {
        let e = 2.0 - 2.0 * self.s;
        w_plus.powf(e) / e
    }

    /// Per-sample factor of the tail sum: (w⁺)^{-2s}/(2s).
    fn a2_weight(&self, w_plus: f64) -> f64 {
        w_plus.powf(-2.0 * self.s) / (2.0 * self.s)
    }

    fn scale(&self, n: usize) -> f64 {
        self.constant * self.vol_region * self.sphere / n as f64
    }

    /// Near part of the seminorm from u at the base points and at the
    /// shifted points of `batch`.
    pub fn estimate_a1(&self, batch: &Batch, ux: &[f64], uy: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for i in 0..batch.len() {
            let q = (uy[i] - ux[i]) / batch.ws_clamped[i];
            let t = q * q * self.a1_weight(batch.w_plus[i]);
            if !t.is_finite() {
                return Err(Error::NonFiniteSummand { index: i });
            }
            sum += t;
        }
        Ok(0.5 * self.scale(batch.len()) * sum)
    }

    /// Tail of the seminorm from u at the base points of `batch`.
    pub fn estimate_a2(&self, batch: &Batch, ux: &[f64]) -> Result<f64> {
        let mut sum = 0.0;
        for i in 0..batch.len() {
            let t = ux[i] * ux[i] * self.a2_weight(batch.w_plus[i]);
            if !t.is_finite() {
                return Err(Error::NonFiniteSummand { index: i });
            }
            sum += t;
        }
        Ok(self.scale(batch.len()) * sum)
    }

    /// Restricts `batch` to Ω and evaluates the potential and every prior on
    /// the retained points.
    pub fn prepare(&self, batch: Batch, priors: &[Prior<'_>]) -> Result<EpochSample> {
        let d = batch.d;
        let mut interior = Vec::with_capacity(batch.len());
        let mut rejected = 0;
        for i in 0..batch.len() {
            let x = batch.x(i);
            if self.domain.contains(x) {
                if self.potential.is_singular_at(x) {
                    rejected += 1;
                } else {
                    interior.push(i);
                }
            }
        }
        let total = interior.len() + rejected;
        if rejected as f64 > MAX_SINGULAR_FRACTION * total as f64 {
            return Err(Error::PotentialSingularity { rejected, total });
        }
        if interior.is_empty() {
            return Err(Error::EmptyInteriorBatch);
        }
        let pts: Vec<f64> = interior.iter().flat_map(|&i| batch.x(i).iter().copied()).collect();
        let potential = match self.potential {
            Potential::Zero => Vec::new(),
            p => pts.chunks_exact(d).map(|x| p.eval(x)).collect(),
        };
        let mut prior_values = Vec::with_capacity(priors.len());
        for p in priors {
            prior_values.push(p.function.values(&pts)?);
        }
        Ok(EpochSample {
            batch,
            interior,
            potential,
            priors: prior_values,
            prior_norms: priors.iter().map(|p| p.norm_sq).collect(),
        })
    }

    /// Loss terms and, if requested, `∂loss/∂u` at the stacked points.
    ///
    /// `outputs` holds u at `[x_1..x_N, y_1..y_N]` as produced by
    /// [`Batch::stacked`]. Without priors `beta` is ignored.
    pub fn loss(
        &self,
        sample: &EpochSample,
        outputs: &[f64],
        beta: f64,
        adjoint: Option<&mut [f64]>,
    ) -> Result<LossBreakdown> {
        let b = &sample.batch;
        let n = b.len();
        if outputs.len() != 2 * n {
            return Err(Error::ShapeMismatch(format!("{} outputs for a batch of {n}", outputs.len())));
        }
        let (ux, uy) = outputs.split_at(n);
        let a1 = self.estimate_a1(b, ux, uy)?;
        let a2 = self.estimate_a2(b, ux)?;
        let ui: Vec<f64> = sample.interior.iter().map(|&i| ux[i]).collect();
        let l2 = estimate_l2(&ui, self.vol_omega)?;
        let potential = if sample.potential.is_empty() {
            0.0
        } else {
            estimate_potential(&ui, &sample.potential, self.vol_omega)?
        };
        let mut inners = Vec::with_capacity(sample.priors.len());
        for p in &sample.priors {
            inners.push(estimate_inner(&ui, p, self.vol_omega)?);
        }
        let energy = a1 + a2 + potential;
        let snapshot = |loss| LossSnapshot { a1, a2, potential, l2, loss };
        if !(l2 >= 1e-12) {
            if !l2.is_finite() {
                return Err(Error::NonFiniteLoss(snapshot(f64::NAN)));
            }
            return Err(Error::DegenerateTrialFunction(l2));
        }
        let penalty_terms: Vec<f64> =
            inners.iter().zip(&sample.prior_norms).map(|(ip, n)| ip * ip / (l2 * n)).collect();
        let penalty: f64 = if inners.is_empty() { 0.0 } else { beta * penalty_terms.iter().sum::<f64>() };
        let loss = energy / l2 + penalty;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(snapshot(loss)));
        }

        if let Some(adj) = adjoint {
            let (gx, gy) = adj.split_at_mut(n);
            let c = self.scale(n);
            // near part and tail
            for i in 0..n {
                let k = c * self.a1_weight(b.w_plus[i]) / (b.ws_clamped[i] * b.ws_clamped[i]);
                let diff = uy[i] - ux[i];
                gy[i] = k * diff / l2;
                gx[i] = (-k * diff + 2.0 * c * ux[i] * self.a2_weight(b.w_plus[i])) / l2;
            }
            // interior terms: dl2 = 2cΩ u, dpot = 2cΩ V u, dinner_j = cΩ p_j
            let co = self.vol_omega / ui.len() as f64;
            let mut l2_coeff = energy / (l2 * l2);
            if !inners.is_empty() {
                l2_coeff += beta * penalty_terms.iter().sum::<f64>() / l2;
            }
            let inner_coeffs: Vec<f64> =
                inners.iter().zip(&sample.prior_norms).map(|(ip, nn)| beta * 2.0 * ip / (l2 * nn)).collect();
            for (a, &i) in sample.interior.iter().enumerate() {
                let u = ui[a];
                let v = sample.potential.get(a).copied().unwrap_or(0.0);
                let mut g = 2.0 * co * v * u / l2 - l2_coeff * 2.0 * co * u;
                for (j, p) in sample.priors.iter().enumerate() {
                    g += inner_coeffs[j] * co * p[a];
                }
                gx[i] += g;
            }
        }

        Ok(LossBreakdown { a1, a2, potential, l2, inners, loss })
    }
}

/// A batch restricted to Ω with the potential and prior modes evaluated on
/// the retained points.
#[derive(Debug, Clone)]
pub struct EpochSample {
    pub batch: Batch,
    /// indices into the batch of the base points inside Ω
    pub interior: Vec<usize>,
    /// V at the interior points; empty for the zero potential
    pub potential: Vec<f64>,
    /// prior modes at the interior points
    pub priors: Vec<Vec<f64>>,
    pub prior_norms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub a1: f64,
    pub a2: f64,
    pub potential: f64,
    pub l2: f64,
    pub inners: Vec<f64>,
    pub loss: f64,
}

impl LossBreakdown {
    /// The Rayleigh quotient without penalty.
    pub fn ratio(&self) -> f64 {
        (self.a1 + self.a2 + self.potential) / self.l2
    }
}

/// [`OutputLoss`] adapter that keeps the breakdown of the last evaluation.
pub struct SampleLoss<'a> {
    pub problem: &'a Problem,
    pub sample: &'a EpochSample,
    pub beta: f64,
    last: RefCell<Option<LossBreakdown>>,
}

impl<'a> SampleLoss<'a> {
    pub fn new(problem: &'a Problem, sample: &'a EpochSample, beta: f64) -> Self {
        SampleLoss { problem, sample, beta, last: RefCell::new(None) }
    }

    pub fn take_breakdown(&self) -> Option<LossBreakdown> {
        self.last.borrow_mut().take()
    }
}

impl OutputLoss for SampleLoss<'_> {
    fn evaluate(&self, outputs: &[f64], adjoint: &mut [f64]) -> Result<f64> {
        let br = self.problem.loss(self.sample, outputs, self.beta, Some(adjoint))?;
        let loss = br.loss;
        *self.last.borrow_mut() = Some(br);
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenEstimate {
    pub lambda_hat: f64,
    pub se: f64,
    pub n_samples: usize,
    /// mean of the per-batch L² estimates
    pub l2_norm_sq: f64,
}

/// Raw per-term sums over a large sample, accumulated chunk by chunk.
#[derive(Debug, Default, Clone, Copy)]
struct Sums {
    a1: f64,
    a2: f64,
    potential: f64,
    l2: f64,
    n: usize,
    n_interior: usize,
}

impl Problem {
    /// Energy, L² and sample counts of `u` over `n` fresh samples.
    fn accumulate<R: Rng + ?Sized>(&self, u: &dyn TrialFunction, n: usize, rng: &mut R) -> Result<(f64, f64)> {
        let mut sums = Sums::default();
        let mut left = n;
        while left > 0 {
            let m = left.min(CHUNK);
            left -= m;
            let batch = self.draw_batch(m, rng)?;
            let vals = u.values(&batch.stacked())?;
            let (ux, uy) = vals.split_at(m);
            // the scale factors are re-applied once at the end
            let inv = 1.0 / self.scale(m);
            sums.a1 += self.estimate_a1(&batch, ux, uy)? * inv;
            sums.a2 += self.estimate_a2(&batch, ux)? * inv;
            sums.n += m;
            for i in 0..m {
                let x = batch.x(i);
                if self.domain.contains(x) && !self.potential.is_singular_at(x) {
                    sums.n_interior += 1;
                    sums.l2 += ux[i] * ux[i];
                    if self.potential != Potential::Zero {
                        sums.potential += self.potential.eval(x) * ux[i] * ux[i];
                    }
                }
            }
        }
        if sums.n_interior == 0 {
            return Err(Error::EmptyInteriorBatch);
        }
        let c = self.scale(sums.n);
        let co = self.vol_omega / sums.n_interior as f64;
        let energy = c * (sums.a1 + sums.a2) + co * sums.potential;
        Ok((energy, co * sums.l2))
    }

    /// Rayleigh quotient of `u`: mean of `n_batches` independent ratio
    /// estimates with `n` samples each, and its standard error.
    pub fn estimate_eigenvalue<R: Rng + ?Sized>(
        &self,
        u: &dyn TrialFunction,
        n: usize,
        n_batches: usize,
        rng: &mut R,
    ) -> Result<EigenEstimate> {
        if n == 0 || n_batches == 0 {
            return Err(Error::ShapeMismatch("eigenvalue estimate needs n >= 1 and n_batches >= 1".into()));
        }
        let mut ratios = Vec::with_capacity(n_batches);
        let mut l2_sum = 0.0;
        for _ in 0..n_batches {
            let (energy, l2) = self.accumulate(u, n, rng)?;
            if !(l2 >= 1e-12) {
                return Err(Error::DegenerateTrialFunction(l2));
            }
            ratios.push(energy / l2);
            l2_sum += l2;
        }
        let (mean, se) = mean_and_se(&ratios);
        Ok(EigenEstimate {
            lambda_hat: mean,
            se,
            n_samples: n * n_batches,
            l2_norm_sq: l2_sum / n_batches as f64,
        })
    }

    /// |(u, v)| / (‖u‖ ‖v‖) over `n` uniform points of Ω.
    pub fn normalized_overlap<R: Rng + ?Sized>(
        &self,
        u: &dyn TrialFunction,
        v: &dyn TrialFunction,
        n: usize,
        rng: &mut R,
    ) -> Result<f64> {
        let d = self.dim();
        let (mut uv, mut uu, mut vv) = (0.0, 0.0, 0.0);
        let mut left = n;
        let mut x = vec![0.0; d];
        while left > 0 {
            let m = left.min(CHUNK);
            left -= m;
            let mut pts = Vec::with_capacity(m * d);
            for _ in 0..m {
                self.domain.uniform_point(rng, &mut x);
                pts.extend_from_slice(&x);
            }
            let a = u.values(&pts)?;
            let b = v.values(&pts)?;
            for (p, q) in a.iter().zip(&b) {
                uv += p * q;
                uu += p * p;
                vv += q * q;
            }
        }
        if !(uu > 0.0 && vv > 0.0) {
            return Err(Error::DegenerateTrialFunction(uu.min(vv)));
        }
        Ok(uv.abs() / (uu * vv).sqrt())
    }
}

/// Sample mean and its standard error (sample standard deviation / √n).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// `(1 - ‖x‖²)^s_+` on a batch; the ball profile whose fractional Laplacian
/// is constant on the unit ball.
pub fn ball_profile(s: f64, d: usize) -> impl Fn(&[f64]) -> Result<Vec<f64>> {
    move |xs: &[f64]| {
        Ok(xs
            .chunks_exact(d)
            .map(|x| {
                let t = 1.0 - x.iter().map(|v| v * v).sum::<f64>();
                if t > 0.0 {
                    t.powf(s)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn interval(s: f64, potential: Potential) -> Problem {
        Problem::on(Domain::interval(-1.0, 1.0).unwrap(), s, potential, &mut rng(0)).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn constant_examples() {
        assert!(rel(c_ds(1, 0.5).unwrap(), 1.0 / PI) < 1e-13);
        assert!(rel(c_ds(2, 0.5).unwrap(), 0.5 / PI) < 1e-13);
        assert!(rel(c_ds(3, 0.5).unwrap(), 1.0 / (PI * PI)) < 1e-13);
        for s in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(c_ds(2, s), Err(Error::FractionalOrderOutOfRange(_))));
        }
    }

    #[test]
    fn radial_inverse_transform() {
        assert_eq!(radial_offset(0.7, 0.3, 1.0), 0.7);
        assert!((radial_offset(1.0, 0.5, 0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn radial_law_matches_cdf() {
        // s = 0.75: CDF of w/w⁺ is r^{0.5}
        let p = interval(0.75, Potential::Zero);
        let b = p.draw_batch(1_000_000, &mut rng(3)).unwrap();
        let mut r: Vec<f64> = b.ws.iter().zip(&b.w_plus).map(|(w, wp)| w / wp).collect();
        r.sort_by(f64::total_cmp);
        let n = r.len() as f64;
        let ks = r
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = v.sqrt();
                (f - i as f64 / n).abs().max((f - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.002, "KS statistic {ks}");
    }

    #[test]
    fn batch_invariants() {
        let p = Problem::on(Domain::LShape, 0.3, Potential::Zero, &mut rng(1)).unwrap();
        let b = p.draw_batch(5000, &mut rng(2)).unwrap();
        for i in 0..b.len() {
            assert!(p.region.contains_strictly(b.x(i)));
            assert!(b.ws[i] > 0.0 && b.ws[i] <= b.w_plus[i]);
            assert!(b.ws_clamped[i] >= W_CLAMP);
            let n: f64 = b.xis[2 * i..2 * i + 2].iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn interior_integrals() {
        let ones = vec![1.0; 17];
        assert_eq!(estimate_inner(&ones, &ones, 2.0).unwrap(), 2.0);
        assert_eq!(estimate_l2(&ones, 2.0).unwrap(), 2.0);
        assert_eq!(estimate_l2(&[0.0; 5], 2.0).unwrap(), 0.0);
        assert!(matches!(estimate_l2(&[], 2.0), Err(Error::EmptyInteriorBatch)));

        let n = 1_000_000;
        let mut g = rng(5);
        let xs: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..1.0)).collect();
        let check = |vals: Vec<f64>, exact: f64| {
            // each summand is 2·f(x); the se is 2·sd(f)/√n
            let scaled: Vec<f64> = vals.iter().map(|v| 2.0 * v).collect();
            let (mean, se) = mean_and_se(&scaled);
            assert!((mean - exact).abs() < 3.0 * se, "{mean} vs {exact} (se {se})");
        };
        let ones = vec![1.0; n];
        check(xs.clone(), 0.0);
        assert!((estimate_inner(&xs, &ones, 2.0).unwrap() - 0.0).abs() < 0.01);
        check(xs.iter().map(|x| x * x).collect(), 2.0 / 3.0);
        check(xs.iter().map(|x| 1.0 - x * x).collect(), 4.0 / 3.0);
        let vh: Vec<f64> = xs.iter().map(|&x| Potential::Harmonic.eval(&[x])).collect();
        check(vh.clone(), 1.0 / 3.0);
        let vs: Vec<f64> = xs.iter().map(|&x| Potential::StiffHarmonicSine.eval(&[x])).collect();
        check(vs.clone(), 100.0 / 3.0);
        assert_eq!(estimate_potential(&ones, &vec![0.0; n], 2.0).unwrap(), 0.0);
        assert!(rel(estimate_potential(&ones, &vh, 2.0).unwrap(), 2.0 * vh.iter().sum::<f64>() / n as f64) < 1e-12);
    }

    #[test]
    fn potential_tokens() {
        for p in Potential::ALL {
            assert_eq!(Potential::parse(p.name()), Some(p));
        }
        assert_eq!(Potential::parse("coulomb"), None);
        assert_eq!(Potential::InverseSquare.eval(&[1.0, 0.0, 1.0]), 0.25);
    }

    #[test]
    fn singular_potential_guard() {
        let p = Problem::on(Domain::unit_ball(3), 0.5, Potential::InverseSquare, &mut rng(1)).unwrap();
        let mut b = p.draw_batch(100, &mut rng(2)).unwrap();
        assert_eq!(p.prepare(b.clone(), &[]).unwrap().interior.len(), 100);
        b.xs[..3].copy_from_slice(&[0.0, 1e-9, 0.0]);
        assert!(matches!(
            p.prepare(b, &[]),
            Err(Error::PotentialSingularity { rejected: 1, total: 100 })
        ));
    }

    #[test]
    fn seminorm_of_constants_vanishes() {
        let p = interval(0.4, Potential::Zero);
        let b = p.draw_batch(1000, &mut rng(9)).unwrap();
        let zeros = vec![0.0; 1000];
        let c = vec![3.5; 1000];
        assert_eq!(p.estimate_a1(&b, &zeros, &zeros).unwrap(), 0.0);
        assert_eq!(p.estimate_a1(&b, &c, &c).unwrap(), 0.0);
        assert_eq!(p.estimate_a2(&b, &zeros).unwrap(), 0.0);
    }

    #[test]
    fn tail_ignores_points_outside_domain() {
        let p = Problem::on(Domain::LShape, 0.5, Potential::Zero, &mut rng(1)).unwrap();
        let b = p.draw_batch(2000, &mut rng(4)).unwrap();
        let inside: Vec<bool> = (0..b.len()).map(|i| p.domain.contains(b.x(i))).collect();
        let u: Vec<f64> = inside.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        let exterior_only: Vec<f64> = u.iter().map(|v| 1.0 - v).collect();
        let zeroed: Vec<f64> = exterior_only.iter().zip(&u).map(|(e, v)| e * v).collect();
        assert_eq!(p.estimate_a2(&b, &zeroed).unwrap(), 0.0);
        assert!(p.estimate_a2(&b, &u).unwrap() > 0.0);
    }

    fn sample_with_prior(p: &Problem, n: usize, seed: u64, prior: &dyn TrialFunction) -> EpochSample {
        let b = p.draw_batch(n, &mut rng(seed)).unwrap();
        p.prepare(b, &[Prior { function: prior, norm_sq: 0.9 }]).unwrap()
    }

    fn trial(xs: &[f64]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(|&x| if x.abs() < 1.0 { (1.0 - x * x).sqrt() * (1.0 + 0.3 * x + 0.2 * (3.0 * x).sin()) } else { 0.0 }).collect())
    }

    fn prior_fn(xs: &[f64]) -> Result<Vec<f64>> {
        Ok(xs.iter().map(|&x| if x.abs() < 1.0 { x * (1.0 - x * x).powf(0.3) } else { 0.0 }).collect())
    }

    #[test]
    fn k1_loss_is_plain_ratio() {
        let p = interval(0.5, Potential::Harmonic);
        let s = p.prepare(p.draw_batch(3000, &mut rng(1)).unwrap(), &[]).unwrap();
        let out = trial(&s.batch.stacked()).unwrap();
        let br = p.loss(&s, &out, 123.0, None).unwrap();
        assert_eq!(br.loss, (br.a1 + br.a2 + br.potential) / br.l2);
        assert!(br.inners.is_empty());
    }

    #[test]
    fn loss_is_scale_invariant() {
        let p = interval(0.3, Potential::StiffHarmonicSine);
        let s = sample_with_prior(&p, 4000, 2, &prior_fn);
        let out = trial(&s.batch.stacked()).unwrap();
        let base = p.loss(&s, &out, 7.0, None).unwrap();
        for c in [-3.0, 0.01, 5.0, 7.0] {
            let scaled: Vec<f64> = out.iter().map(|v| c * v).collect();
            let br = p.loss(&s, &scaled, 7.0, None).unwrap();
            assert!(rel(br.loss, base.loss) < 1e-12, "c={c}");
            assert!(rel(br.a1, c * c * base.a1) < 1e-12);
            assert!(rel(br.l2, c * c * base.l2) < 1e-12);
        }
    }

    #[test]
    fn degenerate_trial_is_rejected() {
        let p = interval(0.5, Potential::Zero);
        let s = p.prepare(p.draw_batch(100, &mut rng(1)).unwrap(), &[]).unwrap();
        assert!(matches!(p.loss(&s, &[0.0; 200], 1.0, None), Err(Error::DegenerateTrialFunction(_))));
    }

    #[test]
    fn self_penalty_is_beta() {
        let p = interval(0.5, Potential::Zero);
        let b = p.draw_batch(20_000, &mut rng(3)).unwrap();
        let probe = p.prepare(b.clone(), &[]).unwrap();
        let out = prior_fn(&b.stacked()).unwrap();
        let l2 = p.loss(&probe, &out, 0.0, None).unwrap().l2;
        let s = p.prepare(b, &[Prior { function: &prior_fn, norm_sq: l2 }]).unwrap();
        let br = p.loss(&s, &out, 10.0, None).unwrap();
        assert!(rel(br.loss - br.ratio(), 10.0) < 1e-9);
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let p = interval(0.35, Potential::Harmonic);
        let s = sample_with_prior(&p, 300, 4, &prior_fn);
        let out = trial(&s.batch.stacked()).unwrap();
        let mut adj = vec![0.0; out.len()];
        p.loss(&s, &out, 6.0, Some(&mut adj)).unwrap();
        for i in (0..out.len()).step_by(7) {
            let h = 1e-6 * out[i].abs().max(1e-3);
            let mut up = out.clone();
            up[i] += h;
            let mut dn = out.clone();
            dn[i] -= h;
            let fd = (p.loss(&s, &up, 6.0, None).unwrap().loss - p.loss(&s, &dn, 6.0, None).unwrap().loss) / (2.0 * h);
            assert!((fd - adj[i]).abs() <= 1e-6 * adj[i].abs().max(1e-3), "i={i}: fd {fd} adjoint {}", adj[i]);
        }
    }

    #[test]
    fn rayleigh_quotient_of_half_profile() {
        // (π/2)/(4/3) = 3π/8, above the first eigenvalue 1.15777
        let p = interval(0.5, Potential::Zero);
        let u = ball_profile(0.5, 1);
        let est = p.estimate_eigenvalue(&u, 100_000, 20, &mut rng(11)).unwrap();
        let exact = 3.0 * PI / 8.0;
        assert!((est.lambda_hat - exact).abs() < 3.0 * est.se + 1e-3, "{est:?}");
        assert!(est.lambda_hat > 1.15777);
        assert!(est.se > 0.0 && est.se < 3e-2);
        assert!(rel(est.l2_norm_sq, 4.0 / 3.0) < 0.01);
        assert_eq!(est.n_samples, 2_000_000);
    }

    #[test]
    fn overlap_of_odd_and_even() {
        let p = interval(0.5, Potential::Zero);
        let even = ball_profile(0.5, 1);
        let o = p.normalized_overlap(&even, &prior_fn, 200_000, &mut rng(2)).unwrap();
        assert!(o < 0.01, "{o}");
        let same = p.normalized_overlap(&even, &even, 1000, &mut rng(2)).unwrap();
        assert!((same - 1.0).abs() < 1e-12);
    }
}
