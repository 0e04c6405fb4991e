//! Fixed feature functions q_j(x) that multiply the last hidden layer.
//!
//! Each feature is a power of a non-negative "base" function that vanishes
//! on the boundary and outside of Ω. Features sharing a base are evaluated
//! together: the base and its logarithm are computed once per point.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fastmath::exp_in_place;
use crate::geometry::{corner_polar, Domain, ReentrantCorner};

/// Evenly spaced exponents `lo + k (hi - lo)/(m - 1)`, or `[lo]` when `m = 1`.
pub fn linspace_exponents(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    match m {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..m)
            .map(|k| lo + k as f64 * (hi - lo) / (m - 1) as f64)
            .collect(),
    }
}

/// `exp(-1/(1 - z²))` on `|z| < 1`, zero elsewhere.
pub fn bump(z: f64) -> f64 {
    if z.abs() < 1.0 {
        (-1.0 / (1.0 - z * z)).exp()
    } else {
        0.0
    }
}

fn bump_derivative(z: f64) -> f64 {
    if z.abs() < 1.0 {
        let q = 1.0 - z * z;
        bump(z) * (-2.0 * z / (q * q))
    } else {
        0.0
    }
}

/// Kind of a single feature. Boundary kinds are raised to the exponent;
/// corner kinds multiply an angular window by `r^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeatureKind {
    /// `ReLU(1 - |x - c|²/R²)^p`
    BallPower,
    /// `[Π_k ReLU(1 - y_k²)]^p` with `y` the box rescaled to `[-1,1]^d`
    BoxProduct,
    /// `max{ReLU(-x₁(x₁+1)) ReLU(1-x₂²), ReLU(-x₂(x₂+1)) ReLU(1-x₁²)}^p`
    LShapeBoundary,
    /// `B(2r) sin((2/3) ReLU(θ - π/2)) r^t` about the origin
    LShapeCorner,
    /// Max over the drum's convex pieces of the normalized product of
    /// inward edge distances, raised to `p`.
    DrumBoundary,
    /// Corner window about the drum's `corner`-th reentrant vertex.
    DrumCorner { corner: usize },
}

impl FeatureKind {
    pub fn token(&self) -> String {
        match self {
            FeatureKind::BallPower => "ball".into(),
            FeatureKind::BoxProduct => "box".into(),
            FeatureKind::LShapeBoundary => "lshape_boundary".into(),
            FeatureKind::LShapeCorner => "lshape_corner".into(),
            FeatureKind::DrumBoundary => "drum_boundary".into(),
            FeatureKind::DrumCorner { corner } => format!("drum_corner{corner}"),
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        Some(match token {
            "ball" => FeatureKind::BallPower,
            "box" => FeatureKind::BoxProduct,
            "lshape_boundary" => FeatureKind::LShapeBoundary,
            "lshape_corner" => FeatureKind::LShapeCorner,
            "drum_boundary" => FeatureKind::DrumBoundary,
            other => {
                let idx = other.strip_prefix("drum_corner")?.parse().ok()?;
                FeatureKind::DrumCorner { corner: idx }
            }
        })
    }

    fn is_corner(&self) -> bool {
        matches!(self, FeatureKind::LShapeCorner | FeatureKind::DrumCorner { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub exponent: f64,
}

/// How many features of each type to build and over which exponent ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDecl {
    pub first_count: usize,
    pub first_range: (f64, f64),
    pub corner_count: usize,
    pub corner_range: (f64, f64),
}

impl FeatureDecl {
    /// First-type exponents on `[s, 3]`, corner exponents on `[2/3, 3/2]`.
    pub fn standard(s: f64, first_count: usize, corner_count: usize) -> Self {
        Self {
            first_count,
            first_range: (s, 3.0),
            corner_count,
            corner_range: (2.0 / 3.0, 1.5),
        }
    }

    pub fn width(&self) -> usize {
        self.first_count + self.corner_count
    }
}

/// A convex polygon `{x : n_e·x ≥ c_e}` with its product-of-distances
/// normalizer.
#[derive(Debug, Clone, PartialEq)]
struct ConvexPiece {
    normals: Vec<[f64; 2]>,
    offsets: Vec<f64>,
    inv_max: f64,
}

impl ConvexPiece {
    fn from_ccw(vertices: &[[f64; 2]]) -> Self {
        let n = vertices.len();
        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            // inward normal of a counter-clockwise edge
            let nrm = [-(b[1] - a[1]) / len, (b[0] - a[0]) / len];
            normals.push(nrm);
            offsets.push(nrm[0] * a[0] + nrm[1] * a[1]);
        }
        let mut piece = Self {
            normals,
            offsets,
            inv_max: 1.0,
        };
        piece.inv_max = 1.0 / piece.grid_max(vertices);
        piece
    }

    fn raw(&self, x: &[f64]) -> f64 {
        let mut prod = 1.0;
        for (nrm, c) in self.normals.iter().zip(&self.offsets) {
            let dist = nrm[0] * x[0] + nrm[1] * x[1] - c;
            if dist <= 0.0 {
                return 0.0;
            }
            prod *= dist;
        }
        prod
    }

    fn grid_max(&self, vertices: &[[f64; 2]]) -> f64 {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in vertices {
            for k in 0..2 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
        let n = 400;
        let mut best: f64 = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let x = [
                    lo[0] + (hi[0] - lo[0]) * i as f64 / n as f64,
                    lo[1] + (hi[1] - lo[1]) * j as f64 / n as f64,
                ];
                best = best.max(self.raw(&x));
            }
        }
        best
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64; 2]) -> f64 {
        let k = self.normals.len();
        let mut dists = [0.0f64; 8];
        for e in 0..k {
            let nrm = self.normals[e];
            dists[e] = nrm[0] * x[0] + nrm[1] * x[1] - self.offsets[e];
            if dists[e] <= 0.0 {
                *grad = [0.0; 2];
                return 0.0;
            }
        }
        let mut prod = 1.0;
        *grad = [0.0; 2];
        for e in 0..k {
            let mut others = 1.0;
            for f in 0..k {
                if f != e {
                    others *= dists[f];
                }
            }
            grad[0] += others * self.normals[e][0];
            grad[1] += others * self.normals[e][1];
            prod *= dists[e];
        }
        grad[0] *= self.inv_max;
        grad[1] *= self.inv_max;
        prod * self.inv_max
    }
}

/// Convex hull (counter-clockwise, collinear points dropped).
fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// A shared base function; every feature is a power of one of these.
#[derive(Debug, Clone, PartialEq)]
enum Base {
    Ball { center: Vec<f64>, inv_r2: f64 },
    Box { mid: Vec<f64>, inv_half: Vec<f64> },
    LShape,
    Drum { pieces: Vec<ConvexPiece> },
    Corner { corner: ReentrantCorner, scale: f64 },
}

impl Base {
    /// Value of the base for boundary kinds; for corners returns the
    /// angular amplitude and writes `r/scale` to `rho`.
    fn value(&self, x: &[f64], rho: &mut f64) -> f64 {
        match self {
            Base::Ball { center, inv_r2 } => {
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c) * (a - c)).sum();
                (1.0 - r2 * inv_r2).max(0.0)
            }
            Base::Box { mid, inv_half } => {
                let mut prod = 1.0;
                for k in 0..x.len() {
                    let y = (x[k] - mid[k]) * inv_half[k];
                    let g = 1.0 - y * y;
                    if g <= 0.0 {
                        return 0.0;
                    }
                    prod *= g;
                }
                prod
            }
            Base::LShape => {
                let (x1, x2) = (x[0], x[1]);
                let b1 = relu(-x1 * (x1 + 1.0)) * relu(1.0 - x2 * x2);
                let b2 = relu(-x2 * (x2 + 1.0)) * relu(1.0 - x1 * x1);
                b1.max(b2)
            }
            Base::Drum { pieces } => pieces.iter().map(|p| p.raw(x) * p.inv_max).fold(0.0, f64::max),
            Base::Corner { corner, scale } => {
                let (r, theta) = corner_polar(x, corner.point);
                *rho = r / scale;
                let phi = angle_in_wedge(theta, corner.start_angle);
                if phi >= 1.5 * PI || *rho >= 0.5 {
                    return 0.0;
                }
                bump(2.0 * *rho) * (2.0 / 3.0 * phi).sin()
            }
        }
    }

    /// Value and gradient in x; the corner variant returns the amplitude and
    /// its gradient, plus `rho` and its gradient.
    fn value_grad(&self, x: &[f64], grad: &mut [f64], rho: &mut f64, rho_grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        match self {
            Base::Ball { center, inv_r2 } => {
                let v = self.value(x, rho);
                if v > 0.0 {
                    for k in 0..x.len() {
                        grad[k] = -2.0 * (x[k] - center[k]) * inv_r2;
                    }
                }
                v
            }
            Base::Box { mid, inv_half } => {
                let d = x.len();
                let g: Vec<f64> = (0..d)
                    .map(|k| {
                        let y = (x[k] - mid[k]) * inv_half[k];
                        1.0 - y * y
                    })
                    .collect();
                if g.iter().any(|&v| v <= 0.0) {
                    return 0.0;
                }
                for k in 0..d {
                    let y = (x[k] - mid[k]) * inv_half[k];
                    let others: f64 = (0..d).filter(|&j| j != k).map(|j| g[j]).product();
                    grad[k] = others * (-2.0 * y * inv_half[k]);
                }
                g.iter().product()
            }
            Base::LShape => {
                let (x1, x2) = (x[0], x[1]);
                let f = |t: f64| -t * (t + 1.0);
                let g = |t: f64| 1.0 - t * t;
                let b1 = relu(f(x1)) * relu(g(x2));
                let b2 = relu(f(x2)) * relu(g(x1));
                if b1 <= 0.0 && b2 <= 0.0 {
                    return 0.0;
                }
                if b1 >= b2 {
                    grad[0] = (-2.0 * x1 - 1.0) * g(x2);
                    grad[1] = f(x1) * (-2.0 * x2);
                    b1
                } else {
                    grad[0] = f(x2) * (-2.0 * x1);
                    grad[1] = (-2.0 * x2 - 1.0) * g(x1);
                    b2
                }
            }
            Base::Drum { pieces } => {
                let mut best = 0.0;
                let mut g = [0.0; 2];
                for p in pieces {
                    let v = p.value_grad(x, &mut g);
                    if v > best {
                        best = v;
                        grad[0] = g[0];
                        grad[1] = g[1];
                    }
                }
                best
            }
            Base::Corner { corner, scale } => {
                let (r, theta) = corner_polar(x, corner.point);
                *rho = r / scale;
                rho_grad.iter_mut().for_each(|g| *g = 0.0);
                if r == 0.0 {
                    return 0.0;
                }
                let dx = x[0] - corner.point[0];
                let dy = x[1] - corner.point[1];
                rho_grad[0] = dx / (r * scale);
                rho_grad[1] = dy / (r * scale);
                let phi = angle_in_wedge(theta, corner.start_angle);
                if phi >= 1.5 * PI || *rho >= 0.5 {
                    return 0.0;
                }
                let b = bump(2.0 * *rho);
                let db = bump_derivative(2.0 * *rho) * 2.0;
                let sn = (2.0 / 3.0 * phi).sin();
                let cs = (2.0 / 3.0 * phi).cos();
                let dtheta = [-dy / (r * r), dx / (r * r)];
                for k in 0..2 {
                    grad[k] = db * rho_grad[k] * sn + b * cs * (2.0 / 3.0) * dtheta[k];
                }
                b * sn
            }
        }
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Counter-clockwise angle from the corner's first wall, in `[0, 2π)`.
fn angle_in_wedge(theta: f64, start: f64) -> f64 {
    (theta - start).rem_euclid(2.0 * PI)
}

/// Floor applied to the base inside derivatives of fractional powers.
const DERIVATIVE_FLOOR: f64 = 1e-12;

const MAX_BASES: usize = 8;

/// The ordered feature list of a network, bound to its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    domain: Domain,
    specs: Vec<FeatureSpec>,
    bases: Vec<Base>,
    // per-feature index into `bases`
    base_of: Vec<usize>,
}

impl FeatureSet {
    /// Builds the feature set for `domain` from an explicit list.
    pub fn new(domain: &Domain, specs: Vec<FeatureSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidFeatures("feature list is empty".into()));
        }
        let corners = domain.reentrant_corners();
        let scale = match domain {
            Domain::Drum(d) => d.scale,
            _ => 1.0,
        };
        let mut bases: Vec<Base> = Vec::new();
        let mut keys: Vec<String> = Vec::new();
        let mut base_of = Vec::with_capacity(specs.len());
        for spec in &specs {
            if !(spec.exponent > 0.0 && spec.exponent.is_finite()) {
                return Err(Error::InvalidFeatures(format!("exponent must be positive, got {}", spec.exponent)));
            }
            let key = spec.kind.token();
            let idx = match keys.iter().position(|k| *k == key) {
                Some(i) => i,
                None => {
                    bases.push(make_base(domain, spec.kind, &corners, scale)?);
                    keys.push(key);
                    bases.len() - 1
                }
            };
            base_of.push(idx);
        }
        if bases.len() > MAX_BASES {
            return Err(Error::InvalidFeatures(format!("at most {MAX_BASES} distinct feature kinds")));
        }
        Ok(Self {
            domain: domain.clone(),
            specs,
            bases,
            base_of,
        })
    }

    /// The default recipe for a domain: first-type features on all domains,
    /// plus corner features on domains with reentrant corners.
    pub fn from_decl(domain: &Domain, decl: &FeatureDecl) -> Result<Self> {
        let first_kind = match domain {
            Domain::Interval { .. } | Domain::Box { .. } => FeatureKind::BoxProduct,
            Domain::Ball { .. } => FeatureKind::BallPower,
            Domain::LShape => FeatureKind::LShapeBoundary,
            Domain::Drum(_) => FeatureKind::DrumBoundary,
        };
        let mut specs: Vec<FeatureSpec> = linspace_exponents(decl.first_range.0, decl.first_range.1, decl.first_count)
            .into_iter()
            .map(|p| FeatureSpec { kind: first_kind, exponent: p })
            .collect();
        if decl.corner_count > 0 {
            let corners = domain.reentrant_corners();
            if corners.is_empty() {
                return Err(Error::InvalidFeatures(format!("domain {} has no reentrant corner", domain.name())));
            }
            if decl.corner_count % corners.len() != 0 {
                return Err(Error::InvalidFeatures(format!(
                    "{} corner features cannot be split evenly over {} corners",
                    decl.corner_count,
                    corners.len()
                )));
            }
            let per = decl.corner_count / corners.len();
            for c in 0..corners.len() {
                let kind = match domain {
                    Domain::LShape => FeatureKind::LShapeCorner,
                    _ => FeatureKind::DrumCorner { corner: c },
                };
                for t in linspace_exponents(decl.corner_range.0, decl.corner_range.1, per) {
                    specs.push(FeatureSpec { kind, exponent: t });
                }
            }
        }
        Self::new(domain, specs)
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Writes all feature values at `x` into `out` (length `len()`).
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.eval_batch(x, out);
    }

    /// Row-major `n × m` feature matrix for `n` points stored with stride `d`.
    ///
    /// Each value is written as `exp(log)`: `p ln(base)` for boundary kinds
    /// and `ln(amplitude) + t ln(r/scale)` for corner kinds, and the whole
    /// matrix goes through one vectorized exponential.
    pub fn eval_batch(&self, xs: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let m = self.len();
        let mut logs = [(0.0, 0.0); MAX_BASES];
        let mut rho = 0.0;
        for (x, row) in xs.chunks_exact(d).zip(out.chunks_exact_mut(m)) {
            for (b, base) in self.bases.iter().enumerate() {
                let v = base.value(x, &mut rho);
                let lv = if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
                let lr = if rho > 0.0 { rho.ln() } else { f64::NEG_INFINITY };
                logs[b] = (lv, lr);
            }
            for (j, spec) in self.specs.iter().enumerate() {
                let (lv, lr) = logs[self.base_of[j]];
                row[j] = if spec.kind.is_corner() {
                    if lv == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        lv + spec.exponent * lr
                    }
                } else {
                    spec.exponent * lv
                };
            }
        }
        exp_in_place(out);
    }

    /// Value and gradient (row-major `m × d`) of every feature at `x`.
    pub fn eval_with_grad(&self, x: &[f64], out: &mut [f64], grad: &mut [f64]) {
        let d = self.dim();
        let mut bg = vec![0.0; d];
        let mut rg = vec![0.0; d];
        let mut rho = 0.0;
        for (j, spec) in self.specs.iter().enumerate() {
            let v = self.bases[self.base_of[j]].value_grad(x, &mut bg, &mut rho, &mut rg);
            let g = &mut grad[j * d..(j + 1) * d];
            let p = spec.exponent;
            if spec.kind.is_corner() {
                if v == 0.0 {
                    // the amplitude vanishes to first order on the walls
                    let rp = if rho > 0.0 { rho.powf(p) } else { 0.0 };
                    out[j] = 0.0;
                    for k in 0..d {
                        g[k] = bg[k] * rp;
                    }
                    continue;
                }
                let rp = rho.powf(p);
                let drp = p * rho.max(DERIVATIVE_FLOOR).powf(p - 1.0);
                out[j] = v * rp;
                for k in 0..d {
                    g[k] = bg[k] * rp + v * drp * rg[k];
                }
            } else {
                if v <= 0.0 {
                    out[j] = 0.0;
                    g.iter_mut().for_each(|t| *t = 0.0);
                    continue;
                }
                out[j] = v.powf(p);
                let scale = p * v.max(DERIVATIVE_FLOOR).powf(p - 1.0);
                for k in 0..d {
                    g[k] = scale * bg[k];
                }
            }
        }
    }
}

fn make_base(domain: &Domain, kind: FeatureKind, corners: &[ReentrantCorner], scale: f64) -> Result<Base> {
    let mismatch = || {
        Error::InvalidFeatures(format!(
            "feature kind {} does not apply to domain {}",
            kind.token(),
            domain.name()
        ))
    };
    Ok(match (kind, domain) {
        (FeatureKind::BallPower, Domain::Ball { center, radius }) => Base::Ball {
            center: center.clone(),
            inv_r2: 1.0 / (radius * radius),
        },
        (FeatureKind::BoxProduct, Domain::Interval { a, b }) => Base::Box {
            mid: vec![0.5 * (a + b)],
            inv_half: vec![2.0 / (b - a)],
        },
        (FeatureKind::BoxProduct, Domain::Box { lo, hi }) => Base::Box {
            mid: lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            inv_half: lo.iter().zip(hi).map(|(l, h)| 2.0 / (h - l)).collect(),
        },
        (FeatureKind::LShapeBoundary, Domain::LShape) => Base::LShape,
        (FeatureKind::LShapeCorner, Domain::LShape) => Base::Corner {
            corner: corners[0],
            scale: 1.0,
        },
        (FeatureKind::DrumBoundary, Domain::Drum(drum)) => {
            let cells = drum.cells();
            let pieces = drum
                .glue()
                .iter()
                .map(|&(i, j)| {
                    let mut pts: Vec<[f64; 2]> = cells[i].to_vec();
                    pts.extend_from_slice(&cells[j]);
                    ConvexPiece::from_ccw(&convex_hull(&pts))
                })
                .collect();
            Base::Drum { pieces }
        }
        (FeatureKind::DrumCorner { corner }, Domain::Drum(_)) => Base::Corner {
            corner: *corners.get(corner).ok_or_else(|| {
                Error::InvalidFeatures(format!("drum has {} reentrant corners, asked for {corner}", corners.len()))
            })?,
            scale,
        },
        _ => return Err(mismatch()),
    })
}
