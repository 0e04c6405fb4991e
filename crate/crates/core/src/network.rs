//! Feature-weighted tanh network
//! `û(x) = Σ_j W_{l+1,j} r_l,j(x) q_j(x)` with `r_i = tanh(W_i r_{i-1} + b_i)`,
//! its reverse-mode gradient, and the FSEV1 checkpoint format.
//!
//! Parameters are one flat vector in the order
//! `W_1 (m×d, row-major), b_1, W_2, b_2, …, W_l, b_l, W_{l+1}`.
//! Batched evaluation multiplies whole layers with a GEMM; every output row
//! depends only on its own input row, so a batch is bitwise equal to a loop.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::fastmath::tanh_in_place;
use crate::features::{FeatureKind, FeatureSet, FeatureSpec};
use crate::geometry::Domain;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// input dimension
    pub d: usize,
    /// hidden layers
    pub l: usize,
    /// width, equal to the number of features
    pub m: usize,
}

impl Architecture {
    pub fn new(d: usize, l: usize, m: usize) -> Result<Self> {
        if d == 0 || l == 0 || m == 0 {
            return Err(Error::ShapeMismatch(format!("architecture needs d, l, m >= 1, got {d}, {l}, {m}")));
        }
        Ok(Self { d, l, m })
    }

    pub fn param_count(&self) -> usize {
        let (d, l, m) = (self.d, self.l, self.m);
        m * d + m + (l - 1) * (m * m + m) + m
    }

    fn fan_in(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d
        } else {
            self.m
        }
    }

    /// Offset of `W_{layer+1}` (0-based hidden layer index).
    fn weight_offset(&self, layer: usize) -> usize {
        if layer == 0 {
            0
        } else {
            self.m * self.d + self.m + (layer - 1) * (self.m * self.m + self.m)
        }
    }

    fn bias_offset(&self, layer: usize) -> usize {
        self.weight_offset(layer) + self.m * self.fan_in(layer)
    }

    fn head_offset(&self) -> usize {
        self.param_count() - self.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub values: Vec<f64>,
}

impl NetworkParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.param_count()],
        }
    }

    /// Glorot-uniform hidden weights, zero biases, head uniform on `±1/√m`.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut p = Self::zeros(arch);
        for layer in 0..arch.l {
            let fan_in = arch.fan_in(layer);
            let bound = (6.0 / (fan_in + arch.m) as f64).sqrt();
            let off = arch.weight_offset(layer);
            for v in &mut p.values[off..off + arch.m * fan_in] {
                *v = rng.random_range(-bound..bound);
            }
        }
        let bound = 1.0 / (arch.m as f64).sqrt();
        let off = arch.head_offset();
        for v in &mut p.values[off..] {
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn from_values(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                arch.param_count(),
                values.len()
            )));
        }
        Ok(Self { arch, values })
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        let off = self.arch.weight_offset(layer);
        &self.values[off..off + self.arch.m * self.arch.fan_in(layer)]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        let off = self.arch.weight_offset(layer);
        let len = self.arch.m * self.arch.fan_in(layer);
        &mut self.values[off..off + len]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let off = self.arch.bias_offset(layer);
        &self.values[off..off + self.arch.m]
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut [f64] {
        let off = self.arch.bias_offset(layer);
        let m = self.arch.m;
        &mut self.values[off..off + m]
    }

    pub fn head(&self) -> &[f64] {
        &self.values[self.arch.head_offset()..]
    }

    pub fn head_mut(&mut self) -> &mut [f64] {
        let off = self.arch.head_offset();
        &mut self.values[off..]
    }

    fn check_features(&self, features: &FeatureSet) -> Result<()> {
        if features.len() != self.arch.m || features.dim() != self.arch.d {
            return Err(Error::ShapeMismatch(format!(
                "network (d={}, m={}) does not match feature set (d={}, m={})",
                self.arch.d,
                self.arch.m,
                features.dim(),
                features.len()
            )));
        }
        Ok(())
    }
}

/// `C = A·B + beta·C` on strided row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || a.len() > last(m, k, rsa, csa));
    assert!(k == 0 || b.len() > last(k, n, rsb, csb));
    assert!(c.len() > last(m, n, rsc, csc));
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Activations of one batched forward pass, kept for the backward pass.
/// Only rows with at least one non-zero feature are stored.
struct ForwardCache {
    /// indices of the stored rows in the original batch
    active: Vec<usize>,
    x: Vec<f64>,
    q: Vec<f64>,
    /// `hidden[k]` holds `r_{k+1}` for the active rows, `n_active × m`
    hidden: Vec<Vec<f64>>,
}

fn forward_cached(params: &NetworkParams, features: &FeatureSet, xs: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    params.check_features(features)?;
    let Architecture { d, l, m } = params.arch;
    if xs.len() % d != 0 {
        return Err(Error::ShapeMismatch(format!("point buffer length {} not a multiple of d={d}", xs.len())));
    }
    let n = xs.len() / d;
    let mut q_all = vec![0.0; n * m];
    features.eval_batch(xs, &mut q_all);
    let mut active = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * d);
    let mut q = Vec::with_capacity(n * m);
    for i in 0..n {
        let row = &q_all[i * m..(i + 1) * m];
        if row.iter().any(|&v| v != 0.0) {
            active.push(i);
            x.extend_from_slice(&xs[i * d..(i + 1) * d]);
            q.extend_from_slice(row);
        }
    }
    drop(q_all);
    let na = active.len();

    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(l);
    for layer in 0..l {
        let fan_in = if layer == 0 { d } else { m };
        let mut z = vec![0.0; na * m];
        let b = params.bias(layer);
        for row in z.chunks_exact_mut(m) {
            row.copy_from_slice(b);
        }
        let input: &[f64] = if layer == 0 { &x } else { &hidden[layer - 1] };
        // Z (na×m) += H (na×fan_in) · Wᵀ, W stored m×fan_in row-major
        gemm(na, fan_in, m, input, (fan_in, 1), params.weights(layer), (1, fan_in), 1.0, &mut z, (m, 1));
        tanh_in_place(&mut z);
        hidden.push(z);
    }

    let head = params.head();
    let mut out = vec![0.0; n];
    let last = &hidden[l - 1];
    for (a, &i) in active.iter().enumerate() {
        let h = &last[a * m..(a + 1) * m];
        let qr = &q[a * m..(a + 1) * m];
        let mut u = 0.0;
        for j in 0..m {
            u += head[j] * h[j] * qr[j];
        }
        if !u.is_finite() {
            return Err(diagnose(&x[a * d..(a + 1) * d], &hidden, a, m, i));
        }
        out[i] = u;
    }
    Ok((out, ForwardCache { active, x, q, hidden }))
}

fn diagnose(x: &[f64], hidden: &[Vec<f64>], row: usize, m: usize, index: usize) -> Error {
    if x.iter().any(|v| !v.is_finite()) {
        return Error::NonFiniteOutput { index };
    }
    for (layer, h) in hidden.iter().enumerate() {
        if h[row * m..(row + 1) * m].iter().any(|v| !v.is_finite()) {
            return Error::NumericOverflow { layer: layer + 1 };
        }
    }
    Error::NumericOverflow { layer: hidden.len() + 1 }
}

/// Network outputs at `n` points stored with stride `d`.
pub fn forward_batch(params: &NetworkParams, features: &FeatureSet, xs: &[f64]) -> Result<Vec<f64>> {
    forward_cached(params, features, xs).map(|(u, _)| u)
}

pub fn forward(params: &NetworkParams, features: &FeatureSet, x: &[f64]) -> Result<f64> {
    if x.len() != params.arch.d {
        return Err(Error::ShapeMismatch(format!("point has {} coordinates, network expects {}", x.len(), params.arch.d)));
    }
    forward_batch(params, features, x).map(|u| u[0])
}

/// A scalar function of all network outputs on a fixed batch.
pub trait OutputLoss {
    /// Returns the loss and writes `∂loss/∂u_i` into `adjoint`.
    fn evaluate(&self, outputs: &[f64], adjoint: &mut [f64]) -> Result<f64>;
}

impl<F> OutputLoss for F
where
    F: Fn(&[f64], &mut [f64]) -> Result<f64>,
{
    fn evaluate(&self, outputs: &[f64], adjoint: &mut [f64]) -> Result<f64> {
        self(outputs, adjoint)
    }
}

/// Loss value and its gradient with respect to every parameter; the points
/// are held fixed.
pub fn loss_gradient<L: OutputLoss + ?Sized>(
    params: &NetworkParams,
    features: &FeatureSet,
    xs: &[f64],
    loss: &L,
) -> Result<(f64, Vec<f64>)> {
    let (outputs, cache) = forward_cached(params, features, xs)?;
    let mut adjoint = vec![0.0; outputs.len()];
    let value = loss.evaluate(&outputs, &mut adjoint)?;
    let grad = backward(params, &cache, &adjoint);
    Ok((value, grad))
}

fn backward(params: &NetworkParams, cache: &ForwardCache, adjoint: &[f64]) -> Vec<f64> {
    let Architecture { d, l, m } = params.arch;
    let na = cache.active.len();
    let mut grad = NetworkParams::zeros(params.arch);
    let head = params.head();

    // seed: dH_l = a_i W_{l+1,j} q_ij and the head gradient
    let last = &cache.hidden[l - 1];
    let mut dz = vec![0.0; na * m];
    {
        let g_head = grad.head_mut();
        for (a, &i) in cache.active.iter().enumerate() {
            let ai = adjoint[i];
            let h = &last[a * m..(a + 1) * m];
            let qr = &cache.q[a * m..(a + 1) * m];
            let row = &mut dz[a * m..(a + 1) * m];
            for j in 0..m {
                g_head[j] += ai * h[j] * qr[j];
                row[j] = ai * head[j] * qr[j];
            }
        }
    }
    for layer in (0..l).rev() {
        let h = &cache.hidden[layer];
        for (g, hv) in dz.iter_mut().zip(h) {
            *g *= 1.0 - hv * hv;
        }
        let fan_in = if layer == 0 { d } else { m };
        let input: &[f64] = if layer == 0 { &cache.x } else { &cache.hidden[layer - 1] };
        // dW (m×fan_in) = dZᵀ (m×na) · H (na×fan_in)
        gemm(m, na, fan_in, &dz, (1, m), input, (fan_in, 1), 0.0, grad.weights_mut(layer), (fan_in, 1));
        let gb = grad.bias_mut(layer);
        for row in dz.chunks_exact(m) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        if layer > 0 {
            // dH (na×m) = dZ (na×m) · W (m×m)
            let mut dh = vec![0.0; na * m];
            gemm(na, m, m, &dz, (m, 1), params.weights(layer), (m, 1), 0.0, &mut dh, (m, 1));
            dz = dh;
        }
    }
    grad.values
}

/// A trained eigenmode frozen for use as an orthogonality target.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSnapshot {
    pub params: NetworkParams,
    pub features: FeatureSet,
    pub lambda_hat: f64,
    pub lambda_se: f64,
    pub l2_norm_sq: f64,
}

const MAGIC: &[u8] = b"FSEV1\n";

impl ModeSnapshot {
    pub fn forward_batch(&self, xs: &[f64]) -> Result<Vec<f64>> {
        forward_batch(&self.params, &self.features, xs)
    }

    /// Layout: magic line, `domain …`, `arch d l m`, one `feature kind
    /// exponent` line per feature, `params count`, the parameters as
    /// little-endian f64, then `lambda lambda_hat lambda_se l2_norm_sq`.
    /// Floats in text lines use shortest round-trip formatting.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let a = self.params.arch;
        w.write_all(MAGIC)?;
        writeln!(w, "domain {}", self.features.domain().to_tokens())?;
        writeln!(w, "arch {} {} {}", a.d, a.l, a.m)?;
        for spec in self.features.specs() {
            writeln!(w, "feature {} {:e}", spec.kind.token(), spec.exponent)?;
        }
        writeln!(w, "params {}", self.params.values.len())?;
        for v in &self.params.values {
            w.write_all(&v.to_le_bytes())?;
        }
        writeln!(w)?;
        writeln!(w, "lambda {:e} {:e} {:e}", self.lambda_hat, self.lambda_se, self.l2_norm_sq)?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(mut r: R) -> Result<Self> {
        let fail = |section: &'static str, message: String| Error::Checkpoint { section, message };
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).map_err(|e| fail("magic", e.to_string()))?;
        if magic != MAGIC {
            return Err(fail("magic", "not an FSEV1 checkpoint".into()));
        }
        let domain_line = read_tagged(&mut r, "domain")?;
        let domain = Domain::from_tokens(&domain_line).map_err(|e| fail("domain", e.to_string()))?;

        let arch_line = read_tagged(&mut r, "arch")?;
        let dims: Vec<usize> = arch_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| fail("arch", format!("bad integer {t:?}"))))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(fail("arch", format!("expected `d l m`, got {arch_line:?}")));
        }
        let arch = Architecture::new(dims[0], dims[1], dims[2]).map_err(|e| fail("arch", e.to_string()))?;

        let mut specs = Vec::with_capacity(arch.m);
        for _ in 0..arch.m {
            let line = read_tagged(&mut r, "feature")?;
            let mut parts = line.split_whitespace();
            let kind = parts
                .next()
                .and_then(FeatureKind::parse)
                .ok_or_else(|| fail("feature", format!("unknown feature {line:?}")))?;
            let exponent: f64 = parts
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| fail("feature", format!("bad exponent in {line:?}")))?;
            specs.push(FeatureSpec { kind, exponent });
        }
        let features = FeatureSet::new(&domain, specs).map_err(|e| fail("feature", e.to_string()))?;

        let count: usize = read_tagged(&mut r, "params")?
            .trim()
            .parse()
            .map_err(|_| fail("params", "bad parameter count".into()))?;
        if count != arch.param_count() {
            return Err(fail("params", format!("count {count} does not match architecture ({})", arch.param_count())));
        }
        let mut bytes = vec![0u8; count * 8];
        r.read_exact(&mut bytes).map_err(|e| fail("params", format!("truncated: {e}")))?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(fail("params", format!("non-finite parameter at index {i}")));
        }
        let mut nl = [0u8; 1];
        r.read_exact(&mut nl).map_err(|e| fail("params", e.to_string()))?;
        if nl[0] != b'\n' {
            return Err(fail("params", "missing terminator after parameter block".into()));
        }

        let footer = read_tagged(&mut r, "lambda")?;
        let nums: Vec<f64> = footer
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| fail("lambda", format!("bad number {t:?}"))))
            .collect::<Result<_>>()?;
        if nums.len() != 3 || nums[1] < 0.0 || nums[2] <= 0.0 {
            return Err(fail("lambda", format!("expected `lambda_hat se l2_norm_sq`, got {footer:?}")));
        }
        Ok(Self {
            params: NetworkParams { arch, values },
            features,
            lambda_hat: nums[0],
            lambda_se: nums[1],
            l2_norm_sq: nums[2],
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn read_tagged<R: BufRead>(r: &mut R, tag: &'static str) -> Result<String> {
    let fail = |message: String| Error::Checkpoint { section: tag, message };
    let mut line = String::new();
    r.read_line(&mut line).map_err(|e| fail(e.to_string()))?;
    let Some(body) = line.strip_suffix('\n') else {
        return Err(fail("unexpected end of file".into()));
    };
    if body == tag {
        return Ok(String::new());
    }
    body.strip_prefix(tag)
        .and_then(|s| s.strip_prefix(' '))
        .map(str::to_string)
        .ok_or_else(|| fail(format!("expected `{tag}` line, got {body:?}")))
}
