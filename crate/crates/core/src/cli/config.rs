//! Flat `key = value` run configuration.
//!
//! Every key is listed in [`KEYS`]; unknown keys, repeated keys and keys that
//! do not apply to the chosen domain or command are rejected with the line
//! number. A resolved configuration is written back by [`RunConfig::render`]
//! in the same format, so a run manifest is itself a valid configuration.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::estimator::Potential;
use crate::features::FeatureDecl;
use crate::geometry::{Domain, DrumShape};
use crate::trainer::TrainConfig;

/// (key, description) for every accepted key.
pub const KEYS: &[(&str, &str)] = &[
    ("domain", "interval | square | box | ball | lshape | drumA | drumB (solve)"),
    ("domain_a", "first domain of the isospectral pair (default drumA)"),
    ("domain_b", "second domain of the isospectral pair (default drumB)"),
    ("a", "interval left end (default -1)"),
    ("b", "interval right end (default 1)"),
    ("dim", "dimension of box or ball (default 2 for box, 3 for ball)"),
    ("lower", "box lower bound on every axis (default -1)"),
    ("upper", "box upper bound on every axis (default 1)"),
    ("radius", "ball radius, centred at the origin (default 1)"),
    ("drum_scale", "triangle leg length of the drums (default 1)"),
    ("s", "fractional order in (0, 1) (solve)"),
    ("s_list", "space-separated fractional orders (isospectral)"),
    ("potential", "zero | harmonic | stiff_harmonic_sine | inverse_square (default zero)"),
    ("K", "number of eigenmodes (default 1)"),
    ("layers", "hidden layers (default 3)"),
    ("first_features", "boundary features (default 40)"),
    ("first_exponent_min", "smallest boundary exponent (default s)"),
    ("first_exponent_max", "largest boundary exponent (default 3)"),
    ("corner_features", "corner features (default 20 on lshape and drums, else 0)"),
    ("corner_exponent_min", "smallest corner exponent (default 2/3)"),
    ("corner_exponent_max", "largest corner exponent (default 3/2)"),
    ("preset", "desk | paper training schedule (default desk)"),
    ("seed", "random seed (default 0)"),
    ("epochs", "training epochs per mode"),
    ("lr0", "initial learning rate"),
    ("decay_every", "epochs per schedule stage"),
    ("decay_factor", "learning-rate divisor per stage"),
    ("n0", "samples per epoch in the first stage"),
    ("n_growth", "sample multiplier per stage"),
    ("beta_factor", "penalty weight as a multiple of the largest eigenvalue found"),
    ("w_c", "radial clamp inside the difference quotient"),
    ("n_final", "samples per batch of the final eigenvalue estimate"),
    ("n_batches_final", "batches of the final eigenvalue estimate"),
    ("adam_beta1", "ADAM first-moment decay"),
    ("adam_beta2", "ADAM second-moment decay"),
    ("adam_eps", "ADAM denominator offset"),
    ("progress_every", "epochs between progress records (0 disables)"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "desk" => Some(Preset::Desk),
            "paper" => Some(Preset::Paper),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }

    pub fn train(self) -> TrainConfig {
        match self {
            Preset::Desk => TrainConfig::desk(),
            Preset::Paper => TrainConfig::paper(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Isospectral,
}

/// Geometry keys shared by both commands; which ones apply depends on the
/// domain name.
#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    pub dim: Option<usize>,
    pub lower: f64,
    pub upper: f64,
    pub radius: f64,
    pub drum_scale: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { a: -1.0, b: 1.0, dim: None, lower: -1.0, upper: 1.0, radius: 1.0, drum_scale: 1.0 }
    }
}

pub const DOMAIN_NAMES: &[&str] = &["interval", "square", "box", "ball", "lshape", "drumA", "drumB"];

fn geometry_keys(name: &str) -> &'static [&'static str] {
    match name {
        "interval" => &["a", "b"],
        "box" => &["dim", "lower", "upper"],
        "ball" => &["dim", "radius"],
        "drumA" | "drumB" => &["drum_scale"],
        _ => &[],
    }
}

impl Geometry {
    pub fn build(&self, name: &str) -> Result<Domain> {
        match name {
            "interval" => Domain::interval(self.a, self.b),
            "square" => Domain::boxed(vec![-1.0; 2], vec![1.0; 2]),
            "box" => {
                let d = self.dim.unwrap_or(2);
                Domain::boxed(vec![self.lower; d], vec![self.upper; d])
            }
            "ball" => Domain::ball(vec![0.0; self.dim.unwrap_or(3)], self.radius),
            "lshape" => Ok(Domain::LShape),
            "drumA" => Domain::drum(DrumShape::A, self.drum_scale),
            "drumB" => Domain::drum(DrumShape::B, self.drum_scale),
            other => Err(Error::InvalidGeometry(format!("unknown domain {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    /// `domain` for solve; `[domain_a, domain_b]` for isospectral
    pub domains: Vec<String>,
    pub geometry: Geometry,
    /// one order for solve, the sweep for isospectral
    pub s_values: Vec<f64>,
    pub potential: Potential,
    pub modes: usize,
    pub layers: usize,
    pub first_features: usize,
    pub first_exponents: (Option<f64>, f64),
    pub corner_features: Option<usize>,
    pub corner_exponents: (f64, f64),
    pub preset: Preset,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Feature recipe for order `s` on `domain`.
    pub fn feature_decl(&self, s: f64, domain: &Domain) -> FeatureDecl {
        let corner = self.corner_features.unwrap_or(match domain {
            Domain::LShape | Domain::Drum(_) => 20,
            _ => 0,
        });
        FeatureDecl {
            first_count: self.first_features,
            first_range: (self.first_exponents.0.unwrap_or(s), self.first_exponents.1),
            corner_count: corner,
            corner_range: self.corner_exponents,
        }
    }

    pub fn domain(&self, index: usize) -> Result<Domain> {
        self.geometry.build(&self.domains[index])
    }

    /// Parses a configuration. `preset` and `seed` given on the command line
    /// take precedence over the file.
    pub fn parse(text: &str, command: Command, preset: Option<Preset>, seed: Option<u64>) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(Error::config(line, format!("expected `key = value`, got `{content}`")));
            };
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.iter().any(|(k, _)| *k == key) {
                return Err(Error::config(line, format!("unknown key `{key}`")));
            }
            if let Some((first, _, _)) = entries.iter().find(|e| e.1 == key) {
                return Err(Error::config(line, format!("key `{key}` already set on line {first}")));
            }
            if value.is_empty() {
                return Err(Error::config(line, format!("key `{key}` has no value")));
            }
            entries.push((line, key, value));
        }
        let get = |key: &str| entries.iter().find(|e| e.1 == key).map(|e| (e.0, e.2));
        let line_of = |key: &str| get(key).map_or(0, |e| e.0);

        fn num<T: std::str::FromStr>(key: &str, v: Option<(usize, &str)>) -> Result<Option<T>> {
            match v {
                None => Ok(None),
                Some((line, s)) => {
                    s.parse().map(Some).map_err(|_| Error::config(line, format!("`{key}`: cannot parse `{s}`")))
                }
            }
        }
        let reject = |key: &str, why: &str| -> Result<()> {
            match get(key) {
                Some((line, _)) => Err(Error::config(line, format!("key `{key}` {why}"))),
                None => Ok(()),
            }
        };

        let domains: Vec<String> = match command {
            Command::Solve => {
                reject("s_list", "is only used by isospectral")?;
                reject("domain_a", "is only used by isospectral")?;
                reject("domain_b", "is only used by isospectral")?;
                let (line, name) = get("domain").ok_or_else(|| Error::config(0, "missing key `domain`"))?;
                check_domain_name(line, name)?;
                vec![name.to_string()]
            }
            Command::Isospectral => {
                reject("domain", "is not used by isospectral; set domain_a and domain_b")?;
                reject("s", "is not used by isospectral; set s_list")?;
                let mut v = Vec::new();
                for (key, default) in [("domain_a", "drumA"), ("domain_b", "drumB")] {
                    let (line, name) = get(key).unwrap_or((0, default));
                    check_domain_name(line, name)?;
                    v.push(name.to_string());
                }
                v
            }
        };
        // geometry keys must apply to at least one chosen domain
        for key in ["a", "b", "dim", "lower", "upper", "radius", "drum_scale"] {
            if get(key).is_some() && !domains.iter().any(|d| geometry_keys(d).contains(&key)) {
                reject(key, &format!("does not apply to domain {}", domains.join("/")))?;
            }
        }
        let mut geometry = Geometry::default();
        if let Some(v) = num("a", get("a"))? {
            geometry.a = v;
        }
        if let Some(v) = num("b", get("b"))? {
            geometry.b = v;
        }
        geometry.dim = num("dim", get("dim"))?;
        if geometry.dim == Some(0) {
            return Err(Error::config(line_of("dim"), "dim must be >= 1"));
        }
        if let Some(v) = num("lower", get("lower"))? {
            geometry.lower = v;
        }
        if let Some(v) = num("upper", get("upper"))? {
            geometry.upper = v;
        }
        if let Some(v) = num("radius", get("radius"))? {
            geometry.radius = v;
        }
        if let Some(v) = num("drum_scale", get("drum_scale"))? {
            geometry.drum_scale = v;
        }
        for (i, name) in domains.iter().enumerate() {
            let key = match command {
                Command::Solve => "domain",
                Command::Isospectral => ["domain_a", "domain_b"][i],
            };
            geometry.build(name).map_err(|e| Error::config(line_of(key), e.to_string()))?;
        }

        let s_values: Vec<f64> = match command {
            Command::Solve => {
                let v: f64 = num("s", get("s"))?.ok_or_else(|| Error::config(0, "missing key `s`"))?;
                vec![v]
            }
            Command::Isospectral => {
                let (line, list) = get("s_list").ok_or_else(|| Error::config(0, "missing key `s_list`"))?;
                list.split_whitespace()
                    .map(|t| t.parse().map_err(|_| Error::config(line, format!("`s_list`: cannot parse `{t}`"))))
                    .collect::<Result<_>>()?
            }
        };
        let s_key = if command == Command::Solve { "s" } else { "s_list" };
        for &s in &s_values {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::config(line_of(s_key), format!("s must lie in (0, 1), got {s}")));
            }
        }

        let potential = match get("potential") {
            None => Potential::Zero,
            Some((line, t)) => {
                Potential::parse(t).ok_or_else(|| Error::config(line, format!("unknown potential `{t}`")))?
            }
        };
        let modes: usize = num("K", get("K"))?.unwrap_or(1);
        if modes == 0 {
            return Err(Error::config(line_of("K"), "K must be ≥ 1"));
        }
        let layers: usize = num("layers", get("layers"))?.unwrap_or(3);
        if layers == 0 {
            return Err(Error::config(line_of("layers"), "layers must be >= 1"));
        }
        let first_features: usize = num("first_features", get("first_features"))?.unwrap_or(40);
        if first_features == 0 {
            return Err(Error::config(line_of("first_features"), "first_features must be >= 1"));
        }
        let first_exponents =
            (num("first_exponent_min", get("first_exponent_min"))?, num("first_exponent_max", get("first_exponent_max"))?.unwrap_or(3.0));
        let corner_features = num("corner_features", get("corner_features"))?;
        let corner_exponents = (
            num("corner_exponent_min", get("corner_exponent_min"))?.unwrap_or(2.0 / 3.0),
            num("corner_exponent_max", get("corner_exponent_max"))?.unwrap_or(1.5),
        );

        let preset = match (preset, get("preset")) {
            (Some(p), _) => p,
            (None, Some((line, t))) => {
                Preset::parse(t).ok_or_else(|| Error::config(line, format!("unknown preset `{t}`")))?
            }
            (None, None) => Preset::Desk,
        };
        let mut train = preset.train();
        macro_rules! set {
            ($key:literal, $field:expr) => {
                if let Some(v) = num($key, get($key))? {
                    $field = v;
                }
            };
        }
        set!("seed", train.seed);
        set!("epochs", train.epochs);
        set!("lr0", train.lr0);
        set!("decay_every", train.decay_every);
        set!("decay_factor", train.decay_factor);
        set!("n0", train.n0);
        set!("n_growth", train.n_growth);
        set!("beta_factor", train.beta_factor);
        set!("w_c", train.w_c);
        set!("n_final", train.n_final);
        set!("n_batches_final", train.n_batches_final);
        set!("adam_beta1", train.adam.beta1);
        set!("adam_beta2", train.adam.beta2);
        set!("adam_eps", train.adam.eps);
        set!("progress_every", train.progress_every);
        if let Some(seed) = seed {
            train.seed = seed;
        }
        train.validate()?;

        let config = RunConfig {
            command,
            domains,
            geometry,
            s_values,
            potential,
            modes,
            layers,
            first_features,
            first_exponents,
            corner_features,
            corner_exponents,
            preset,
            train,
        };
        // surface feature-recipe errors (e.g. corner features on a convex domain) as config errors
        for i in 0..config.domains.len() {
            let domain = config.domain(i)?;
            for &s in &config.s_values {
                let decl = config.feature_decl(s, &domain);
                crate::features::FeatureSet::from_decl(&domain, &decl).map_err(|e| {
                    Error::config(line_of("corner_features").max(line_of("first_features")), e.to_string())
                })?;
            }
        }
        Ok(config)
    }

    /// Every resolved setting as `key = value` lines; parsing the result
    /// gives back an equal configuration.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        match self.command {
            Command::Solve => line("domain", self.domains[0].clone()),
            Command::Isospectral => {
                line("domain_a", self.domains[0].clone());
                line("domain_b", self.domains[1].clone());
            }
        }
        let g = &self.geometry;
        for key in ["a", "b", "dim", "lower", "upper", "radius", "drum_scale"] {
            if !self.domains.iter().any(|d| geometry_keys(d).contains(&key)) {
                continue;
            }
            let v = match key {
                "a" => g.a.to_string(),
                "b" => g.b.to_string(),
                "dim" => g.dim.unwrap_or(if self.domains.iter().any(|d| d == "ball") { 3 } else { 2 }).to_string(),
                "lower" => g.lower.to_string(),
                "upper" => g.upper.to_string(),
                "radius" => g.radius.to_string(),
                _ => g.drum_scale.to_string(),
            };
            line(key, v);
        }
        match self.command {
            Command::Solve => line("s", self.s_values[0].to_string()),
            Command::Isospectral => {
                line("s_list", self.s_values.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(" "))
            }
        }
        line("potential", self.potential.name().to_string());
        line("K", self.modes.to_string());
        line("layers", self.layers.to_string());
        line("first_features", self.first_features.to_string());
        if let Some(v) = self.first_exponents.0 {
            line("first_exponent_min", v.to_string());
        }
        line("first_exponent_max", self.first_exponents.1.to_string());
        if let Some(v) = self.corner_features {
            line("corner_features", v.to_string());
        }
        line("corner_exponent_min", self.corner_exponents.0.to_string());
        line("corner_exponent_max", self.corner_exponents.1.to_string());
        let t = &self.train;
        line("preset", self.preset.name().to_string());
        line("seed", t.seed.to_string());
        line("epochs", t.epochs.to_string());
        line("lr0", t.lr0.to_string());
        line("decay_every", t.decay_every.to_string());
        line("decay_factor", t.decay_factor.to_string());
        line("n0", t.n0.to_string());
        line("n_growth", t.n_growth.to_string());
        line("beta_factor", t.beta_factor.to_string());
        line("w_c", t.w_c.to_string());
        line("n_final", t.n_final.to_string());
        line("n_batches_final", t.n_batches_final.to_string());
        line("adam_beta1", t.adam.beta1.to_string());
        line("adam_beta2", t.adam.beta2.to_string());
        line("adam_eps", t.adam.eps.to_string());
        line("progress_every", t.progress_every.to_string());
        out
    }
}

fn check_domain_name(line: usize, name: &str) -> Result<()> {
    if DOMAIN_NAMES.contains(&name) {
        Ok(())
    } else {
        Err(Error::config(line, format!("unknown domain `{name}` (expected one of {})", DOMAIN_NAMES.join(", "))))
    }
}

/// Help text listing every key.
pub fn keys_help() -> String {
    let mut s = String::from("Configuration keys (`key = value`, `#` starts a comment):\n");
    for (k, d) in KEYS {
        let _ = writeln!(s, "  {k:<22} {d}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(text: &str) -> Result<RunConfig> {
        RunConfig::parse(text, Command::Solve, None, None)
    }

    fn line_of(e: Error) -> usize {
        match e {
            Error::Config { line, .. } => line,
            other => panic!("expected config error, got {other}"),
        }
    }

    #[test]
    fn minimal_solve_config() {
        let c = solve("domain = interval\ns = 0.5\n").unwrap();
        assert_eq!(c.domain(0).unwrap(), Domain::interval(-1.0, 1.0).unwrap());
        assert_eq!(c.modes, 1);
        assert_eq!(c.preset, Preset::Desk);
        assert_eq!(c.train, TrainConfig::desk());
        let decl = c.feature_decl(0.5, &c.domain(0).unwrap());
        assert_eq!((decl.first_count, decl.corner_count, decl.first_range), (40, 0, (0.5, 3.0)));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(line_of(solve("domain = interval\ns = 0.5\nK = 0\n").unwrap_err()), 3);
        let e = solve("domain = interval\ns = 0.5\nK = 0\n").unwrap_err();
        assert!(e.to_string().contains("K must be ≥ 1"));
        assert_eq!(line_of(solve("# c\ndomain = interval\ns = 0.5\nbogus = 1\n").unwrap_err()), 4);
        assert_eq!(line_of(solve("domain = interval\ns = 1.5\n").unwrap_err()), 2);
        assert_eq!(line_of(solve("domain = interval\ns = 0.5\ns = 0.4\n").unwrap_err()), 3);
        assert_eq!(line_of(solve("domain = interval\ns = 0.5\nradius = 2\n").unwrap_err()), 3);
        assert_eq!(line_of(solve("domain = hexagon\ns = 0.5\n").unwrap_err()), 1);
        assert_eq!(line_of(solve("domain = interval\ns = 0.5\nepochs = many\n").unwrap_err()), 3);
        assert_eq!(line_of(solve("domain = interval\ns = 0.5\ncorner_features = 20\n").unwrap_err()), 3);
        assert!(solve("s = 0.5\n").is_err());
        assert_eq!(line_of(solve("domain interval\n").unwrap_err()), 1);
    }

    #[test]
    fn overrides_and_flags() {
        let text = "domain = lshape  # the L\ns = 0.3\npreset = paper\nseed = 4\nepochs = 10\n";
        let c = solve(text).unwrap();
        assert_eq!(c.preset, Preset::Paper);
        assert_eq!((c.train.seed, c.train.epochs, c.train.decay_every), (4, 10, 20_000));
        let decl = c.feature_decl(0.3, &c.domain(0).unwrap());
        assert_eq!((decl.first_count, decl.corner_count), (40, 20));
        let c = RunConfig::parse(text, Command::Solve, Some(Preset::Desk), Some(9)).unwrap();
        assert_eq!((c.preset, c.train.seed, c.train.decay_every), (Preset::Desk, 9, 5_000));
    }

    #[test]
    fn render_round_trips() {
        for text in [
            "domain = interval\na = -2\nb = 0.5\ns = 0.25\nK = 3\npotential = harmonic\n",
            "domain = ball\ndim = 3\ns = 0.9999\nn_growth = 1.5\nadam_eps = 1e-7\n",
            "domain = drumB\ndrum_scale = 2\ns = 0.5\ncorner_features = 10\nfirst_exponent_min = 0.7\n",
        ] {
            let c = solve(text).unwrap();
            let again = solve(&c.render()).unwrap();
            assert_eq!(c, again);
        }
        let iso = RunConfig::parse("s_list = 0.3 0.5\nK = 2\n", Command::Isospectral, None, None).unwrap();
        assert_eq!(iso.domains, vec!["drumA", "drumB"]);
        assert_eq!(iso.s_values, vec![0.3, 0.5]);
        let again = RunConfig::parse(&iso.render(), Command::Isospectral, None, None).unwrap();
        assert_eq!(iso, again);
    }

    #[test]
    fn command_specific_keys() {
        assert!(RunConfig::parse("domain = drumA\ns_list = 0.5\n", Command::Isospectral, None, None).is_err());
        assert!(RunConfig::parse("s = 0.5\ns_list = 0.5\n", Command::Isospectral, None, None).is_err());
        assert!(solve("domain = interval\ns = 0.5\ns_list = 0.5\n").is_err());
        assert!(keys_help().contains("drum_scale"));
    }
}
