//! Reference values that do not come from the Monte Carlo solver: closed
//! forms for the ball profile `(1 - ‖x‖²)^s_+`, a deterministic quadrature
//! of its seminorm, classical Laplacian spectra, and the published tables.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::estimator::{c_ds, check_order};

/// The published tables, one value per line.
pub const PAPER_TABLES: &str = include_str!("../data/paper_tables.txt");
/// `sha256sum` output for [`PAPER_TABLES`].
pub const PAPER_TABLES_SHA256: &str = include_str!("../data/paper_tables.sha256");

/// `(-Δ)^s (1 - ‖x‖²)^s_+` on the unit ball of ℝ^d:
/// 2^{2s} Γ(s+1) Γ(s+d/2) / Γ(d/2).
pub fn ball_profile_constant(d: usize, s: f64) -> Result<f64> {
    check_order(s)?;
    let h = d as f64 / 2.0;
    Ok((2.0 * s * 2f64.ln() + ln_gamma(s + 1.0) + ln_gamma(s + h) - ln_gamma(h)).exp())
}

/// ∫_{-1}^{1} (1 - x²)^s dx = √π Γ(s+1) / Γ(s+3/2).
pub fn profile_integral(s: f64) -> f64 {
    (0.5 * PI.ln() + ln_gamma(s + 1.0) - ln_gamma(s + 1.5)).exp()
}

/// a(u, u) for u = (1 - x²)^s_+ in one dimension.
pub fn closed_form_quadratic(s: f64) -> Result<f64> {
    Ok(ball_profile_constant(1, s)? * profile_integral(s))
}

/// Double-exponential (tanh-sinh) rule on [a, b]. The integrand receives
/// `(x, x - a, b - x)` with both distances computed without cancellation,
/// so endpoint singularities can be evaluated accurately.
pub fn tanh_sinh<F: Fn(f64, f64, f64) -> f64>(f: F, a: f64, b: f64, step: f64) -> f64 {
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    let mut j = 0i64;
    loop {
        let t = j as f64 * step;
        let u = 0.5 * PI * t.sinh();
        let ch = u.cosh();
        let w = 0.5 * PI * t.cosh() / (ch * ch);
        if w * half < 1e-300 || u > 350.0 {
            break;
        }
        // distance of the node from the nearer endpoint: (b-a)/(e^{2u}+1)
        let near = (b - a) / ((2.0 * u).exp() + 1.0);
        let far = (b - a) - near;
        let mut add = |da: f64, db: f64| {
            if da > 0.0 && db > 0.0 {
                sum += w * f(a + da, da, db);
            }
        };
        if j == 0 {
            add(half, half);
        } else {
            add(far, near);
            add(near, far);
        }
        j += 1;
    }
    sum * half * step
}

/// `a^s - b^s` from `b` and the difference `a - b`, without cancellation.
fn pow_diff(b: f64, diff: f64, s: f64) -> f64 {
    if b == 0.0 {
        return (b + diff).powf(s);
    }
    b.powf(s) * (s * (diff / b).max(-1.0).ln_1p()).exp_m1()
}

/// a(u, u) for u = (1 - x²)^s_+ by deterministic quadrature of the double
/// integral (C_{1,s}/2) ∫∫ (u(x) - u(y))² / |x - y|^{1+2s}.
///
/// The pairs with both points in (-1, 1) are written as 2 ∫_0^2 h^{-1-2s}
/// G(h) dh with G(h) = ∫ (u(x+h) - u(x))² dx; the outer integral is split at
/// h = δ so the singular end gets its own panel. Pairs with one point
/// outside reduce to a 1-D integral against the explicit tail
/// ∫_{|y|>1} |x - y|^{-1-2s} dy.
pub fn seminorm_quadrature(s: f64, step: f64) -> Result<f64> {
    let c = c_ds(1, s)?;
    let delta = 1e-2;
    // G(h): inner variable x ∈ (-1, 1-h); da = 1 + x, db = 1 - h - x
    let g = |h: f64| {
        tanh_sinh(
            |x, da, db| {
                let fx = da * (2.0 - da);
                let fy = db * (2.0 - db);
                // f(x+h) - f(x) = -h (2x + h)
                // expand around the larger of the two so the ratio stays in [-1, 0]
                let df = -h * (2.0 * x + h);
                let diff = if fy < fx { pow_diff(fx, df, s) } else { -pow_diff(fy, -df, s) };
                diff * diff
            },
            -1.0,
            1.0 - h,
            step,
        )
    };
    // the integrand stays bounded by O(h^{1-2s}) as h → 0, so nodes below
    // 1e-100 carry nothing and are skipped before h^{-1-2s} overflows
    let outer = |h: f64, _: f64, _: f64| if h < 1e-100 { 0.0 } else { h.powf(-1.0 - 2.0 * s) * g(h) };
    let inside = 2.0 * (tanh_sinh(outer, 0.0, delta, step) + tanh_sinh(outer, delta, 2.0, step));
    let tail = 2.0
        * tanh_sinh(
            // u(x)² [(1-x)^{-2s} + (1+x)^{-2s}] / 2s with u² = (da db)^{2s}
            |_, da, db| (da.powf(2.0 * s) + db.powf(2.0 * s)) / (2.0 * s),
            -1.0,
            1.0,
            step,
        );
    Ok(0.5 * c * (inside + tail))
}

/// Domains with a classical (s = 1) Dirichlet spectrum on record.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitDomain {
    /// (-1, 1)
    Interval,
    /// the unit ball in ℝ³
    Ball3,
    /// [-1, 1]²
    Square,
}

/// k-th Dirichlet Laplacian eigenvalue (k ≥ 1, with multiplicity).
pub fn laplacian_limit(domain: LimitDomain, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::MissingReference("k must be >= 1".into()));
    }
    match domain {
        LimitDomain::Interval => Ok((k as f64 * PI / 2.0).powi(2)),
        LimitDomain::Square => square_spectrum()
            .get(k - 1)
            .copied()
            .ok_or_else(|| Error::MissingReference(format!("square Laplacian k={k}"))),
        LimitDomain::Ball3 => ball3_spectrum()
            .get(k - 1)
            .copied()
            .ok_or_else(|| Error::MissingReference(format!("ball Laplacian k={k}"))),
    }
}

const SQUARE_MAX: usize = 40;

fn square_spectrum() -> &'static [f64] {
    static CELL: OnceLock<Vec<f64>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut v: Vec<(usize, f64)> = Vec::new();
        for m in 1..=SQUARE_MAX {
            for n in 1..=SQUARE_MAX {
                v.push((m * m + n * n, PI * PI / 4.0 * (m * m + n * n) as f64));
            }
        }
        v.sort_by_key(|p| p.0);
        // complete only below the first value that needs m or n > SQUARE_MAX
        let limit = SQUARE_MAX * SQUARE_MAX + 1;
        v.into_iter().filter(|p| p.0 <= limit).map(|p| p.1).collect()
    })
}

/// Spherical Bessel j_l by upward recurrence; accurate for x ≳ l.
pub fn spherical_bessel(l: usize, x: f64) -> f64 {
    let (s, c) = x.sin_cos();
    let j0 = s / x;
    if l == 0 {
        return j0;
    }
    let mut prev = j0;
    let mut cur = s / (x * x) - c / x;
    for n in 1..l {
        let next = (2 * n + 1) as f64 / x * cur - prev;
        prev = cur;
        cur = next;
    }
    cur
}

const BALL_ZERO_MAX: f64 = 30.0;

fn ball3_spectrum() -> &'static [f64] {
    static CELL: OnceLock<Vec<f64>> = OnceLock::new();
    CELL.get_or_init(|| {
        let mut v = Vec::new();
        for l in 0.. {
            // the first zero of j_l exceeds l + 1/2
            let start = l as f64 + 0.5;
            if start >= BALL_ZERO_MAX {
                break;
            }
            let f = |x: f64| spherical_bessel(l, x);
            let n = ((BALL_ZERO_MAX - start) / 1e-3) as usize;
            let mut a = start;
            let mut fa = f(a);
            for i in 1..=n {
                let b = start + i as f64 * 1e-3;
                let fb = f(b);
                if fa * fb < 0.0 {
                    let (mut lo, mut hi) = (a, b);
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if f(lo) * f(mid) <= 0.0 {
                            hi = mid;
                        } else {
                            lo = mid;
                        }
                    }
                    let z = 0.5 * (lo + hi);
                    for _ in 0..(2 * l + 1) {
                        v.push(z * z);
                    }
                }
                a = b;
                fa = fb;
            }
        }
        v.sort_by(f64::total_cmp);
        // complete below the smallest zero of the first excluded order
        v.retain(|&e| e < BALL_ZERO_MAX * BALL_ZERO_MAX);
        v
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Exact,
    /// the authors' estimate (Scheme A on the L-shape)
    Our,
    /// Scheme B on the L-shape
    OurB,
    /// an independent reference method quoted alongside
    Ref,
    Extrapolated,
    Fem,
    LaplacianLimit,
}

impl Source {
    pub fn token(self) -> &'static str {
        match self {
            Source::Exact => "exact",
            Source::Our => "our",
            Source::OurB => "our_b",
            Source::Ref => "ref",
            Source::Extrapolated => "extrapolated",
            Source::Fem => "fem",
            Source::LaplacianLimit => "laplacian_limit",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        [
            Source::Exact,
            Source::Our,
            Source::OurB,
            Source::Ref,
            Source::Extrapolated,
            Source::Fem,
            Source::LaplacianLimit,
        ]
        .into_iter()
        .find(|s| s.token() == token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEntry {
    pub table: u32,
    pub domain: &'static str,
    pub s: f64,
    pub k: usize,
    pub source: Source,
    pub value: f64,
}

impl fmt::Display for ReferenceEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "table {} {} s={} k={} {} = {}",
            self.table,
            self.domain,
            self.s,
            self.k,
            self.source.token(),
            self.value
        )
    }
}

/// Hex SHA-256 of the embedded tables.
pub fn reference_digest() -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(PAPER_TABLES.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

/// Compares the embedded tables with their recorded checksum. Regenerate the
/// checksum with `sha256sum paper_tables.txt > paper_tables.sha256` in
/// `crates/core/data` after editing the tables.
pub fn verify_reference_checksum() -> Result<()> {
    let recorded = PAPER_TABLES_SHA256.split_whitespace().next().unwrap_or("");
    let actual = reference_digest();
    if recorded == actual {
        Ok(())
    } else {
        Err(Error::MissingReference(format!("table checksum mismatch: recorded {recorded}, actual {actual}")))
    }
}

/// Every published entry, parsed once from [`PAPER_TABLES`].
pub fn reference_entries() -> &'static [ReferenceEntry] {
    static CELL: OnceLock<Vec<ReferenceEntry>> = OnceLock::new();
    CELL.get_or_init(|| {
        PAPER_TABLES
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| parse_entry(l).unwrap_or_else(|| panic!("malformed reference line: {l}")))
            .collect()
    })
}

fn parse_entry(line: &'static str) -> Option<ReferenceEntry> {
    let mut it = line.split_whitespace();
    let entry = ReferenceEntry {
        table: it.next()?.parse().ok()?,
        domain: it.next()?,
        s: it.next()?.parse().ok()?,
        k: it.next()?.parse().ok()?,
        source: Source::parse(it.next()?)?,
        value: it.next()?.parse().ok()?,
    };
    (it.next().is_none() && entry.value > 0.0).then_some(entry)
}

/// The published value for (domain, s, k, source). When several tables carry
/// the same cell the lowest table number wins.
pub fn paper_reference(domain: &str, s: f64, k: usize, source: Source) -> Result<ReferenceEntry> {
    reference_entries()
        .iter()
        .find(|e| e.domain == domain && (e.s - s).abs() < 1e-12 && e.k == k && e.source == source)
        .cloned()
        .ok_or_else(|| Error::MissingReference(format!("{domain} s={s} k={k} {}", source.token())))
}
