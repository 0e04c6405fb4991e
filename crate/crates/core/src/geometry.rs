//! Problem domains, convex sampling regions and the geometric queries the
//! Monte Carlo estimators need: uniform sampling, containment, Lebesgue
//! measure and ray-exit distances.
//!
//! Points are plain `&[f64]` slices of length `d`; batches of points are
//! stored flat with stride `d`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Number of uniform domain samples used to confirm that a sampling region
/// covers its domain.
pub const CONTAINMENT_CHECK_SAMPLES: usize = 100_000;

/// Which of the two isospectral drums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DrumShape {
    A,
    B,
}

impl DrumShape {
    pub fn name(self) -> &'static str {
        match self {
            DrumShape::A => "drumA",
            DrumShape::B => "drumB",
        }
    }
}

// Both drums are unions of seven right isosceles triangles with unit legs.
// Vertices are listed counter-clockwise; `glue` pairs index into `cells`
// and record which triangles share an edge (the gluing tree has six edges).
const DRUM_A_VERTICES: [[f64; 2]; 8] = [
    [1.0, 0.0],
    [2.0, 0.0],
    [3.0, 1.0],
    [2.0, 1.0],
    [2.0, 2.0],
    [1.0, 3.0],
    [0.0, 2.0],
    [1.0, 2.0],
];
const DRUM_A_CELLS: [[[f64; 2]; 3]; 7] = [
    [[1.0, 2.0], [2.0, 2.0], [1.0, 3.0]],
    [[2.0, 1.0], [2.0, 2.0], [1.0, 1.0]],
    [[1.0, 2.0], [2.0, 2.0], [1.0, 1.0]],
    [[1.0, 2.0], [0.0, 2.0], [1.0, 3.0]],
    [[2.0, 1.0], [2.0, 0.0], [3.0, 1.0]],
    [[1.0, 0.0], [2.0, 0.0], [1.0, 1.0]],
    [[2.0, 1.0], [2.0, 0.0], [1.0, 1.0]],
];
const DRUM_A_GLUE: [(usize, usize); 6] = [(1, 2), (5, 6), (0, 2), (4, 6), (0, 3), (1, 6)];

const DRUM_B_VERTICES: [[f64; 2]; 8] = [
    [1.0, 1.0],
    [2.0, 1.0],
    [3.0, 2.0],
    [2.0, 2.0],
    [2.0, 3.0],
    [0.0, 1.0],
    [0.0, 0.0],
    [1.0, 0.0],
];
const DRUM_B_CELLS: [[[f64; 2]; 3]; 7] = [
    [[1.0, 1.0], [2.0, 1.0], [1.0, 2.0]],
    [[2.0, 2.0], [2.0, 1.0], [3.0, 2.0]],
    [[2.0, 2.0], [2.0, 1.0], [1.0, 2.0]],
    [[2.0, 2.0], [2.0, 3.0], [1.0, 2.0]],
    [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]],
    [[1.0, 1.0], [0.0, 1.0], [1.0, 2.0]],
    [[1.0, 1.0], [0.0, 1.0], [1.0, 0.0]],
];
const DRUM_B_GLUE: [(usize, usize); 6] = [(0, 2), (4, 6), (1, 2), (5, 6), (0, 5), (2, 3)];

const LSHAPE_VERTICES: [[f64; 2]; 6] = [
    [-1.0, -1.0],
    [1.0, -1.0],
    [1.0, 0.0],
    [0.0, 0.0],
    [0.0, 1.0],
    [-1.0, 1.0],
];

/// One of the isospectral drums at a given scale (length of the triangle legs).
#[derive(Debug, Clone, PartialEq)]
pub struct Drum {
    pub shape: DrumShape,
    pub scale: f64,
}

impl Drum {
    pub fn new(shape: DrumShape, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidGeometry(format!("drum scale must be positive, got {scale}")));
        }
        Ok(Self { shape, scale })
    }

    pub fn vertices(&self) -> Vec<[f64; 2]> {
        let raw: &[[f64; 2]] = match self.shape {
            DrumShape::A => &DRUM_A_VERTICES,
            DrumShape::B => &DRUM_B_VERTICES,
        };
        raw.iter().map(|v| [v[0] * self.scale, v[1] * self.scale]).collect()
    }

    /// The seven constituent triangles.
    pub fn cells(&self) -> Vec<[[f64; 2]; 3]> {
        let raw: &[[[f64; 2]; 3]] = match self.shape {
            DrumShape::A => &DRUM_A_CELLS,
            DrumShape::B => &DRUM_B_CELLS,
        };
        raw.iter()
            .map(|t| t.map(|v| [v[0] * self.scale, v[1] * self.scale]))
            .collect()
    }

    /// Pairs of cells sharing an edge.
    pub fn glue(&self) -> &'static [(usize, usize)] {
        match self.shape {
            DrumShape::A => &DRUM_A_GLUE,
            DrumShape::B => &DRUM_B_GLUE,
        }
    }

    pub fn area(&self) -> f64 {
        3.5 * self.scale * self.scale
    }
}

/// A reentrant (interior angle 3π/2) corner of a polygonal domain. The part
/// of the domain near the corner is the wedge of polar angles
/// `[start_angle, start_angle + 3π/2]` measured counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReentrantCorner {
    pub point: [f64; 2],
    pub start_angle: f64,
}

/// The problem domain Ω.
#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    Interval { a: f64, b: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
    /// `[-1,1]² \ [0,1]²`
    LShape,
    Drum(Drum),
}

impl Domain {
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidGeometry(format!("interval needs a < b, got ({a}, {b})")));
        }
        Ok(Domain::Interval { a, b })
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_box(&lo, &hi)?;
        Ok(Domain::Box { lo, hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius > 0.0) {
            return Err(Error::InvalidGeometry(format!(
                "ball needs d >= 1 and radius > 0, got d={} radius={radius}",
                center.len()
            )));
        }
        Ok(Domain::Ball { center, radius })
    }

    pub fn unit_ball(dim: usize) -> Self {
        Domain::Ball {
            center: vec![0.0; dim],
            radius: 1.0,
        }
    }

    pub fn drum(shape: DrumShape, scale: f64) -> Result<Self> {
        Ok(Domain::Drum(Drum::new(shape, scale)?))
    }

    pub fn dim(&self) -> usize {
        match self {
            Domain::Interval { .. } => 1,
            Domain::Box { lo, .. } => lo.len(),
            Domain::Ball { center, .. } => center.len(),
            Domain::LShape | Domain::Drum(_) => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Domain::Interval { .. } => "interval",
            Domain::Box { .. } => "box",
            Domain::Ball { .. } => "ball",
            Domain::LShape => "lshape",
            Domain::Drum(d) => d.shape.name(),
        }
    }

    /// Whitespace-separated description that `from_tokens` reads back
    /// exactly, e.g. `ball 3 0e0 0e0 0e0 1e0`.
    pub fn to_tokens(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(" ");
        match self {
            Domain::Interval { a, b } => format!("interval {a:e} {b:e}"),
            Domain::Box { lo, hi } => format!("box {} {} {}", lo.len(), join(lo), join(hi)),
            Domain::Ball { center, radius } => format!("ball {} {} {radius:e}", center.len(), join(center)),
            Domain::LShape => "lshape".into(),
            Domain::Drum(d) => format!("{} {:e}", d.shape.name(), d.scale),
        }
    }

    pub fn from_tokens(text: &str) -> Result<Self> {
        let bad = || Error::InvalidGeometry(format!("cannot parse domain description {text:?}"));
        let mut it = text.split_whitespace();
        let kind = it.next().ok_or_else(bad)?;
        let nums: Vec<f64> = it.map(|t| t.parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        let dim_then = |extra: usize| -> Result<usize> {
            let d = *nums.first().ok_or_else(bad)?;
            if d < 1.0 || d.fract() != 0.0 || nums.len() != 1 + extra * d as usize + usize::from(extra == 1) {
                return Err(bad());
            }
            Ok(d as usize)
        };
        match kind {
            "interval" if nums.len() == 2 => Domain::interval(nums[0], nums[1]),
            "box" => {
                let d = dim_then(2)?;
                Domain::boxed(nums[1..1 + d].to_vec(), nums[1 + d..].to_vec())
            }
            "ball" => {
                let d = dim_then(1)?;
                Domain::ball(nums[1..1 + d].to_vec(), nums[1 + d])
            }
            "lshape" if nums.is_empty() => Ok(Domain::LShape),
            "drumA" if nums.len() == 1 => Domain::drum(DrumShape::A, nums[0]),
            "drumB" if nums.len() == 1 => Domain::drum(DrumShape::B, nums[0]),
            _ => Err(bad()),
        }
    }

    /// Closed-domain membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Domain::Interval { a, b } => x[0] >= *a && x[0] <= *b,
            Domain::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h),
            Domain::Ball { center, radius } => dist_sq(x, center) <= radius * radius,
            Domain::LShape => {
                let inside_square = x[0].abs() <= 1.0 && x[1].abs() <= 1.0;
                inside_square && !(x[0] > 0.0 && x[1] > 0.0)
            }
            Domain::Drum(drum) => point_in_polygon(&drum.vertices(), [x[0], x[1]]),
        }
    }

    /// Lebesgue measure |Ω|.
    pub fn volume(&self) -> f64 {
        match self {
            Domain::Interval { a, b } => b - a,
            Domain::Box { lo, hi } => box_volume(lo, hi),
            Domain::Ball { center, radius } => ball_volume(center.len(), *radius),
            Domain::LShape => 3.0,
            Domain::Drum(d) => d.area(),
        }
    }

    /// Axis-aligned bounding box.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Domain::Interval { a, b } => (vec![*a], vec![*b]),
            Domain::Box { lo, hi } => (lo.clone(), hi.clone()),
            Domain::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Domain::LShape => (vec![-1.0, -1.0], vec![1.0, 1.0]),
            Domain::Drum(d) => {
                let v = d.vertices();
                let mut lo = vec![f64::INFINITY; 2];
                let mut hi = vec![f64::NEG_INFINITY; 2];
                for p in &v {
                    for k in 0..2 {
                        lo[k] = lo[k].min(p[k]);
                        hi[k] = hi[k].max(p[k]);
                    }
                }
                (lo, hi)
            }
        }
    }

    /// Smallest convenient convex region containing the domain: the domain
    /// itself when it is convex, its bounding box otherwise.
    pub fn default_region(&self) -> SamplingRegion {
        match self {
            Domain::Interval { a, b } => SamplingRegion::Box {
                lo: vec![*a],
                hi: vec![*b],
            },
            Domain::Box { lo, hi } => SamplingRegion::Box {
                lo: lo.clone(),
                hi: hi.clone(),
            },
            Domain::Ball { center, radius } => SamplingRegion::Ball {
                center: center.clone(),
                radius: *radius,
            },
            Domain::LShape | Domain::Drum(_) => {
                let (lo, hi) = self.bounding_box();
                SamplingRegion::Box { lo, hi }
            }
        }
    }

    /// Boundary polygon (counter-clockwise) for the planar polygonal domains.
    pub fn polygon(&self) -> Option<Vec<[f64; 2]>> {
        match self {
            Domain::LShape => Some(LSHAPE_VERTICES.to_vec()),
            Domain::Drum(d) => Some(d.vertices()),
            _ => None,
        }
    }

    pub fn reentrant_corners(&self) -> Vec<ReentrantCorner> {
        self.polygon().map(|p| reentrant_corners(&p)).unwrap_or_default()
    }

    /// Uniform point in the closed domain, by rejection from the bounding box
    /// (direct radial sampling for balls).
    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        if let Domain::Ball { center, radius } = self {
            sample_ball(center, *radius, rng, out);
            return;
        }
        let (lo, hi) = self.bounding_box();
        loop {
            for k in 0..out.len() {
                out[k] = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
            }
            if self.contains(out) {
                return;
            }
        }
    }
}

/// The convex region D ⊇ Ω that the singular-integral estimators sample.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingRegion {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl SamplingRegion {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        check_box(&lo, &hi)?;
        Ok(SamplingRegion::Box { lo, hi })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !(radius > 0.0) {
            return Err(Error::InvalidGeometry("ball region needs d >= 1 and radius > 0".into()));
        }
        Ok(SamplingRegion::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            SamplingRegion::Box { lo, .. } => lo.len(),
            SamplingRegion::Ball { center, .. } => center.len(),
        }
    }

    /// Closed membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            SamplingRegion::Box { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h)
            }
            SamplingRegion::Ball { center, radius } => dist_sq(x, center) <= radius * radius,
        }
    }

    /// Strict interior membership.
    pub fn contains_strictly(&self, x: &[f64]) -> bool {
        match self {
            SamplingRegion::Box { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v > l && v < h)
            }
            SamplingRegion::Ball { center, radius } => dist_sq(x, center) < radius * radius,
        }
    }

    pub fn volume(&self) -> f64 {
        match self {
            SamplingRegion::Box { lo, hi } => box_volume(lo, hi),
            SamplingRegion::Ball { center, radius } => ball_volume(center.len(), *radius),
        }
    }

    /// Uniform point strictly inside the region. Draws that land on the
    /// boundary in floating point are redrawn.
    pub fn uniform_point<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        loop {
            match self {
                SamplingRegion::Box { lo, hi } => {
                    for k in 0..out.len() {
                        out[k] = lo[k] + (hi[k] - lo[k]) * rng.random::<f64>();
                    }
                }
                SamplingRegion::Ball { center, radius } => sample_ball(center, *radius, rng, out),
            }
            if self.contains_strictly(out) {
                return;
            }
        }
    }

    /// Distance from an interior point `x` to the boundary along the unit
    /// direction `xi`.
    pub fn exit_distance(&self, x: &[f64], xi: &[f64]) -> Result<f64> {
        if !self.contains_strictly(x) {
            return Err(Error::PointNotInterior);
        }
        let w = match self {
            SamplingRegion::Box { lo, hi } => {
                let mut best = f64::INFINITY;
                for k in 0..x.len() {
                    let t = if xi[k] > 0.0 {
                        (hi[k] - x[k]) / xi[k]
                    } else if xi[k] < 0.0 {
                        (lo[k] - x[k]) / xi[k]
                    } else {
                        continue;
                    };
                    best = best.min(t);
                }
                best
            }
            SamplingRegion::Ball { center, radius } => {
                // |x - c + w xi|² = r²  with |xi| = 1
                let mut b = 0.0;
                let mut c = -radius * radius;
                for k in 0..x.len() {
                    let dx = x[k] - center[k];
                    b += dx * xi[k];
                    c += dx * dx;
                }
                let disc = b * b - c;
                -b + disc.sqrt()
            }
        };
        if w > 0.0 && w.is_finite() {
            Ok(w)
        } else {
            Err(Error::PointNotInterior)
        }
    }

    /// Checks convexity-independent containment D ⊇ Ω by drawing uniform
    /// samples of Ω.
    pub fn verify_covers<R: Rng + ?Sized>(&self, domain: &Domain, samples: usize, rng: &mut R) -> Result<()> {
        if self.dim() != domain.dim() {
            return Err(Error::InvalidGeometry(format!(
                "region dimension {} does not match domain dimension {}",
                self.dim(),
                domain.dim()
            )));
        }
        let mut x = vec![0.0; domain.dim()];
        for _ in 0..samples {
            domain.uniform_point(rng, &mut x);
            if !self.contains(&x) {
                return Err(Error::InvalidGeometry(format!(
                    "sampling region does not contain domain point {x:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Uniform direction on the unit sphere S^{d-1}; for d = 1 this is ±1.
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    if out.len() == 1 {
        out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        return;
    }
    loop {
        let mut norm_sq = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            norm_sq += *v * *v;
        }
        if norm_sq > 1e-300 {
            let inv = 1.0 / norm_sq.sqrt();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Surface measure |S^{d-1}| = 2π^{d/2}/Γ(d/2); counting measure 2 for d = 1.
pub fn sphere_area(d: usize) -> f64 {
    if d == 1 {
        return 2.0;
    }
    let h = d as f64 / 2.0;
    2.0 * (h * PI.ln() - ln_gamma(h)).exp()
}

pub fn ball_volume(d: usize, radius: f64) -> f64 {
    let h = d as f64 / 2.0;
    (h * PI.ln() - ln_gamma(h + 1.0)).exp() * radius.powi(d as i32)
}

/// Polar coordinates of `x` about `corner`: distance and counter-clockwise
/// angle from the positive x-axis in `[0, 2π)`. The corner itself maps to
/// `(0, 0)`.
pub fn corner_polar(x: &[f64], corner: [f64; 2]) -> (f64, f64) {
    let dx = x[0] - corner[0];
    let dy = x[1] - corner[1];
    let r = dx.hypot(dy);
    if r == 0.0 {
        return (0.0, 0.0);
    }
    let mut theta = dy.atan2(dx);
    if theta < 0.0 {
        theta += 2.0 * PI;
    }
    if theta >= 2.0 * PI {
        theta -= 2.0 * PI;
    }
    (r, theta)
}

/// Even-odd rule with the boundary counted as inside.
pub fn point_in_polygon(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if on_segment(a, b, p) {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x_cross = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
    }
    inside
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    if cross.abs() > 1e-12 * len.max(1.0) {
        return false;
    }
    let dot = (p[0] - a[0]) * (b[0] - a[0]) + (p[1] - a[1]) * (b[1] - a[1]);
    dot >= 0.0 && dot <= len * len
}

/// Vertices of a counter-clockwise polygon where the boundary turns
/// clockwise by a right angle.
pub fn reentrant_corners(poly: &[[f64; 2]]) -> Vec<ReentrantCorner> {
    let n = poly.len();
    let mut out = Vec::new();
    for i in 0..n {
        let prev = poly[(i + n - 1) % n];
        let cur = poly[i];
        let next = poly[(i + 1) % n];
        let din = [cur[0] - prev[0], cur[1] - prev[1]];
        let dout = [next[0] - cur[0], next[1] - cur[1]];
        let cross = din[0] * dout[1] - din[1] * dout[0];
        let dot = din[0] * dout[0] + din[1] * dout[1];
        let scale = din[0].hypot(din[1]) * dout[0].hypot(dout[1]);
        if cross < 0.0 && dot.abs() <= 1e-12 * scale {
            let mut start = dout[1].atan2(dout[0]);
            if start < 0.0 {
                start += 2.0 * PI;
            }
            out.push(ReentrantCorner { point: cur, start_angle: start });
        }
    }
    out
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(Error::InvalidGeometry("box bounds must be non-empty and of equal length".into()));
    }
    if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
        return Err(Error::InvalidGeometry(format!("box needs lo < hi componentwise, got {lo:?} {hi:?}")));
    }
    Ok(())
}

fn box_volume(lo: &[f64], hi: &[f64]) -> f64 {
    lo.iter().zip(hi).map(|(l, h)| h - l).product()
}

fn dist_sq(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn sample_ball<R: Rng + ?Sized>(center: &[f64], radius: f64, rng: &mut R, out: &mut [f64]) {
    let d = center.len();
    uniform_direction(rng, out);
    let u: f64 = rng.random();
    let rho = radius * u.powf(1.0 / d as f64);
    for k in 0..d {
        out[k] = center[k] + rho * out[k];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn uniform_interval_mean_is_centered() {
        let region = SamplingRegion::boxed(vec![-1.0], vec![1.0]).unwrap();
        let mut r = rng();
        let n = 1_000_000;
        let mut x = [0.0];
        let mut sum = 0.0;
        for _ in 0..n {
            region.uniform_point(&mut r, &mut x);
            assert!(x[0] > -1.0 && x[0] < 1.0);
            sum += x[0];
        }
        // Var(U(-1,1)) = 1/3
        let sigma = (1.0 / 3.0 / n as f64).sqrt();
        assert!((sum / n as f64).abs() < 3.0 * sigma);
    }

    #[test]
    fn ball_points_stay_inside() {
        let region = SamplingRegion::ball(vec![0.0; 3], 1.0).unwrap();
        let mut r = rng();
        let mut x = [0.0; 3];
        for _ in 0..100_000 {
            region.uniform_point(&mut r, &mut x);
            assert!(x.iter().map(|v| v * v).sum::<f64>() <= 1.0);
        }
    }

    #[test]
    fn disk_inner_radius_fraction() {
        let region = SamplingRegion::ball(vec![0.0; 2], 1.0).unwrap();
        let mut r = rng();
        let n = 1_000_000;
        let mut x = [0.0; 2];
        let mut hits = 0usize;
        for _ in 0..n {
            region.uniform_point(&mut r, &mut x);
            if x[0] * x[0] + x[1] * x[1] <= 0.25 {
                hits += 1;
            }
        }
        let p = 0.25;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - p).abs() < 3.0 * sigma);
    }

    #[test]
    fn direction_d1_is_plus_minus_one() {
        let mut r = rng();
        let n = 1_000_000;
        let mut xi = [0.0];
        let mut plus = 0usize;
        for _ in 0..n {
            uniform_direction(&mut r, &mut xi);
            assert!(xi[0] == 1.0 || xi[0] == -1.0);
            if xi[0] > 0.0 {
                plus += 1;
            }
        }
        let sigma = (0.25 / n as f64).sqrt();
        assert!((plus as f64 / n as f64 - 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn direction_d3_is_isotropic_and_unit() {
        let mut r = rng();
        let n = 1_000_000;
        let mut xi = [0.0; 3];
        let mut mean = [0.0; 3];
        for _ in 0..n {
            uniform_direction(&mut r, &mut xi);
            let norm: f64 = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
            for k in 0..3 {
                mean[k] += xi[k];
            }
        }
        // each component has variance 1/3
        let sigma = (1.0 / 3.0 / n as f64).sqrt();
        for m in mean {
            assert!((m / n as f64).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn direction_d2_quadrant_fraction() {
        let mut r = rng();
        let n = 1_000_000;
        let mut xi = [0.0; 2];
        let mut hits = 0usize;
        for _ in 0..n {
            uniform_direction(&mut r, &mut xi);
            let theta = xi[1].atan2(xi[0]);
            if (0.0..PI / 2.0).contains(&theta) {
                hits += 1;
            }
        }
        let sigma = (0.25 * 0.75 / n as f64).sqrt();
        assert!((hits as f64 / n as f64 - 0.25).abs() < 3.0 * sigma);
    }

    #[test]
    fn exit_distance_examples() {
        let ball = SamplingRegion::ball(vec![0.0; 3], 1.0).unwrap();
        let xi = [0.6, 0.0, 0.8];
        assert!((ball.exit_distance(&[0.0; 3], &xi).unwrap() - 1.0).abs() < 1e-15);

        let seg = SamplingRegion::boxed(vec![-1.0], vec![1.0]).unwrap();
        assert_eq!(seg.exit_distance(&[0.5], &[1.0]).unwrap(), 0.5);

        let sq = SamplingRegion::boxed(vec![-1.0; 2], vec![1.0; 2]).unwrap();
        let h = 0.5f64.sqrt();
        let w = sq.exit_distance(&[0.5, 0.0], &[h, h]).unwrap();
        // bisection on the containment predicate
        let (mut a, mut b) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if sq.contains(&[0.5 + mid * h, mid * h]) {
                a = mid;
            } else {
                b = mid;
            }
        }
        assert!((w - a).abs() < 1e-12);
        assert!((w - 0.707_106_781_186_547_5).abs() < 1e-12);
    }

    #[test]
    fn exit_distance_rejects_boundary_points() {
        let seg = SamplingRegion::boxed(vec![-1.0], vec![1.0]).unwrap();
        assert!(matches!(seg.exit_distance(&[1.0], &[1.0]), Err(Error::PointNotInterior)));
        let ball = SamplingRegion::ball(vec![0.0; 2], 1.0).unwrap();
        assert!(ball.exit_distance(&[2.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn lshape_membership() {
        assert!(!Domain::LShape.contains(&[0.5, 0.5]));
        assert!(Domain::LShape.contains(&[-0.5, 0.5]));
        assert!(Domain::LShape.contains(&[0.0, 0.5]));
        assert!(!Domain::LShape.contains(&[1.2, -0.5]));
    }

    #[test]
    fn drum_cell_centroids_are_inside() {
        for shape in [DrumShape::A, DrumShape::B] {
            let drum = Drum::new(shape, 1.0).unwrap();
            let dom = Domain::Drum(drum.clone());
            for cell in drum.cells() {
                let c = [
                    (cell[0][0] + cell[1][0] + cell[2][0]) / 3.0,
                    (cell[0][1] + cell[1][1] + cell[2][1]) / 3.0,
                ];
                // brute-force crossing count as an independent check
                let poly = drum.vertices();
                let mut crossings = 0;
                for i in 0..poly.len() {
                    let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
                    if (a[1] > c[1]) != (b[1] > c[1]) {
                        let t = (c[1] - a[1]) / (b[1] - a[1]);
                        if a[0] + t * (b[0] - a[0]) > c[0] {
                            crossings += 1;
                        }
                    }
                }
                assert_eq!(crossings % 2, 1);
                assert!(dom.contains(&c));
            }
        }
    }

    #[test]
    fn drum_cells_tile_the_polygon() {
        for shape in [DrumShape::A, DrumShape::B] {
            let drum = Drum::new(shape, 1.0).unwrap();
            let cell_area: f64 = drum
                .cells()
                .iter()
                .map(|t| 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1])).abs())
                .sum();
            let v = drum.vertices();
            let shoelace: f64 = (0..v.len())
                .map(|i| {
                    let (a, b) = (v[i], v[(i + 1) % v.len()]);
                    a[0] * b[1] - b[0] * a[1]
                })
                .sum::<f64>()
                / 2.0;
            assert!((cell_area - 3.5).abs() < 1e-12);
            assert!((shoelace - 3.5).abs() < 1e-12, "counter-clockwise with area 3.5");
            assert_eq!(Domain::Drum(drum).reentrant_corners().len(), 2);
        }
    }

    #[test]
    fn volumes() {
        let cube = SamplingRegion::boxed(vec![-1.0; 3], vec![1.0; 3]).unwrap();
        assert_eq!(cube.volume(), 8.0);
        let disk = SamplingRegion::ball(vec![0.0; 2], 1.0).unwrap();
        assert!((disk.volume() - PI).abs() < 1e-13);
        let b9 = SamplingRegion::ball(vec![0.0; 9], 1.0).unwrap();
        assert!((b9.volume() - 3.298_508_902_738_7).abs() < 1e-9);
    }

    #[test]
    fn ball9_volume_matches_rejection_estimate() {
        let b9 = SamplingRegion::ball(vec![0.0; 9], 1.0).unwrap();
        let mut r = rng();
        let n = 1_000_000;
        let mut hits = 0usize;
        let mut x = [0.0; 9];
        for _ in 0..n {
            for v in x.iter_mut() {
                *v = 2.0 * r.random::<f64>() - 1.0;
            }
            if b9.contains(&x) {
                hits += 1;
            }
        }
        let p = hits as f64 / n as f64;
        let est = p * 512.0;
        let se = 512.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((est - b9.volume()).abs() < 3.0 * se);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-13);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-12);
        assert_eq!(sphere_area(1), 2.0);
    }

    #[test]
    fn corner_polar_examples() {
        let (r, t) = corner_polar(&[-1.0, 0.0], [0.0, 0.0]);
        assert!((r - 1.0).abs() < 1e-15 && (t - PI).abs() < 1e-15);
        let (r, t) = corner_polar(&[0.0, -1.0], [0.0, 0.0]);
        assert!((r - 1.0).abs() < 1e-15 && (t - 1.5 * PI).abs() < 1e-15);
        let (r, t) = corner_polar(&[-0.3, -0.4], [0.0, 0.0]);
        assert!((r - 0.5).abs() < 1e-15);
        assert!((t - (PI + (4.0f64 / 3.0).atan())).abs() < 1e-14);
        assert!((t - 4.068_887_871_591_405).abs() < 1e-12);
        assert_eq!(corner_polar(&[0.0, 0.0], [0.0, 0.0]), (0.0, 0.0));
    }

    #[test]
    fn lshape_corner_matches_paper_orientation() {
        let corners = Domain::LShape.reentrant_corners();
        assert_eq!(corners.len(), 1);
        assert_eq!(corners[0].point, [0.0, 0.0]);
        assert!((corners[0].start_angle - PI / 2.0).abs() < 1e-15);
    }

    #[test]
    fn domain_tokens_round_trip() {
        let domains = [
            Domain::interval(-1.0, 0.1).unwrap(),
            Domain::boxed(vec![-1.0, 0.3], vec![1.0, 2.0 / 3.0]).unwrap(),
            Domain::ball(vec![0.1, 0.2, 0.3], 1.7).unwrap(),
            Domain::LShape,
            Domain::drum(DrumShape::A, 1.0).unwrap(),
            Domain::drum(DrumShape::B, 0.7).unwrap(),
        ];
        for dom in domains {
            assert_eq!(Domain::from_tokens(&dom.to_tokens()).unwrap(), dom);
        }
        assert!(Domain::from_tokens("ball 2 0 0").is_err());
        assert!(Domain::from_tokens("hexagon").is_err());
    }

    #[test]
    fn region_verification_detects_too_small_region() {
        let mut r = rng();
        let small = SamplingRegion::boxed(vec![-0.5, -0.5], vec![0.5, 0.5]).unwrap();
        assert!(small.verify_covers(&Domain::LShape, 10_000, &mut r).is_err());
        let good = Domain::LShape.default_region();
        good.verify_covers(&Domain::LShape, CONTAINMENT_CHECK_SAMPLES, &mut r).unwrap();
    }
}
