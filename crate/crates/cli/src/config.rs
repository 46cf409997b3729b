//! Run configuration: TOML on disk, validated into [`RunConfig`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lattice_green::expr::ScalarField;
use lattice_green::lattice::{LatticeOptions, Solver, Tilt};
use lattice_green::model::{LatticeSite, ModelSpec, SampleBox};
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    Model(#[from] lattice_green::Error),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    model: RawModel,
    points: RawPoints,
    sweep: Option<RawSweep>,
    #[serde(default)]
    oracle: RawOracle,
    #[serde(default)]
    hypotheses: RawHypotheses,
    #[serde(default)]
    finsler: RawFinsler,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    dim: usize,
    radius: u32,
    coupling: f64,
    dpp: String,
    wpp: BTreeMap<String, String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Coord {
    Numerator(i64),
    Rational(String),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPoints {
    exponent: u32,
    x: Vec<Coord>,
    y: Vec<Coord>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    n: Vec<u32>,
    rate_window: Option<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    #[serde(default = "default_kind")]
    kind: String,
    #[serde(default = "default_tilt")]
    tilt: String,
    #[serde(default = "default_solver")]
    solver: String,
    #[serde(default = "default_target")]
    target: f64,
    #[serde(default = "default_site_cap")]
    site_cap: usize,
}

impl Default for RawOracle {
    fn default() -> Self {
        RawOracle {
            kind: default_kind(),
            tilt: default_tilt(),
            solver: default_solver(),
            target: default_target(),
            site_cap: default_site_cap(),
        }
    }
}

fn default_kind() -> String {
    "lattice".into()
}
fn default_tilt() -> String {
    "default".into()
}
fn default_solver() -> String {
    "lu".into()
}
fn default_target() -> f64 {
    1e-10
}
fn default_site_cap() -> usize {
    4_000_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHypotheses {
    #[serde(default = "default_samples")]
    samples: usize,
    lo: Option<Vec<f64>>,
    hi: Option<Vec<f64>>,
}

impl Default for RawHypotheses {
    fn default() -> Self {
        RawHypotheses {
            samples: default_samples(),
            lo: None,
            hi: None,
        }
    }
}

fn default_samples() -> usize {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinsler {
    #[serde(default = "default_directions")]
    directions: usize,
}

impl Default for RawFinsler {
    fn default() -> Self {
        RawFinsler {
            directions: default_directions(),
        }
    }
}

fn default_directions() -> usize {
    64
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Spectral,
    Lattice,
}

/// A validated run configuration.
#[derive(Debug)]
pub struct RunConfig {
    pub hash: String,
    pub seed: u64,
    pub model: ModelSpec,
    /// base spacing exponent `N`, `h = 2^{-N}`
    pub exponent: u32,
    pub x: LatticeSite,
    pub y: LatticeSite,
    pub sweep: Vec<u32>,
    pub rate_window: [f64; 2],
    pub oracle: OracleKind,
    pub lattice: LatticeOptions,
    pub sample_box: SampleBox,
    pub samples: usize,
    pub directions: usize,
    pub out_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn h(&self) -> f64 {
        self.x.h
    }

    pub fn x_point(&self) -> Vec<f64> {
        self.x.point()
    }

    pub fn y_point(&self) -> Vec<f64> {
        self.y.point()
    }
}

pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse(&text)
}

/// `sha256` of the config text, hex encoded.
pub fn config_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn parse_unit_offset(key: &str, dim: usize) -> Result<Vec<i64>, ConfigError> {
    let parts: Result<Vec<i64>, _> = key.split(',').map(|s| s.trim().parse::<i64>()).collect();
    match parts {
        Ok(l) if l.len() == dim => Ok(l),
        _ => invalid(format!("wpp key `{key}` is not an offset of length {dim} such as \"1,0\"")),
    }
}

/// Numerator of a coordinate over `2^exponent`.
fn numerator(c: &Coord, exponent: u32) -> Result<i64, ConfigError> {
    match c {
        Coord::Numerator(k) => Ok(*k),
        Coord::Rational(s) => {
            let (p, q) = match s.split_once('/') {
                Some((p, q)) => (p.trim(), q.trim()),
                None => (s.trim(), "1"),
            };
            let (Ok(p), Ok(q)) = (p.parse::<i64>(), q.parse::<i64>()) else {
                return invalid(format!("coordinate `{s}` is not a rational a/b"));
            };
            if q <= 0 {
                return invalid(format!("coordinate `{s}` has a non-positive denominator"));
            }
            let scaled = (p as i128) << exponent;
            if scaled % q as i128 != 0 {
                return invalid(format!("coordinate {s} is not on the grid of spacing 2^-{exponent}"));
            }
            i64::try_from(scaled / q as i128).or_else(|_| invalid(format!("coordinate {s} overflows")))
        }
    }
}

pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text)?;
    let m = &raw.model;
    let d = m.dim;
    let dpp = ScalarField::parse(&m.dpp, d)?;
    let mut wpp = Vec::new();
    for (key, expr) in &m.wpp {
        let field = ScalarField::parse(expr, d)?;
        if key == "all_unit" {
            for i in 0..d {
                let mut l = vec![0; d];
                l[i] = 1;
                wpp.push((l, field.clone()));
            }
        } else {
            wpp.push((parse_unit_offset(key, d)?, field));
        }
    }
    let model = ModelSpec::new(d, m.radius, m.coupling, dpp, wpp)?;

    let p = &raw.points;
    if p.exponent > 30 {
        return invalid("points.exponent must be at most 30");
    }
    if p.x.len() != d || p.y.len() != d {
        return invalid(format!("points x and y need {d} coordinates"));
    }
    let h = 0.5f64.powi(p.exponent as i32);
    let xk = p.x.iter().map(|c| numerator(c, p.exponent)).collect::<Result<Vec<_>, _>>()?;
    let yk = p.y.iter().map(|c| numerator(c, p.exponent)).collect::<Result<Vec<_>, _>>()?;
    let x = LatticeSite::new(xk, h);
    let y = LatticeSite::new(yk, h);

    let (sweep, rate_window) = match &raw.sweep {
        Some(s) => {
            if s.n.is_empty() || s.n.windows(2).any(|w| w[1] <= w[0]) {
                return invalid("sweep.n must be a non-empty increasing list");
            }
            if s.n.iter().any(|&n| n > 30) {
                return invalid("sweep exponents must be at most 30");
            }
            let w = s.rate_window.unwrap_or([1.5, 2.6]);
            if !(w[0] > 0.0 && w[1] > w[0]) {
                return invalid("sweep.rate_window must be an increasing pair of positive numbers");
            }
            (s.n.clone(), w)
        }
        None => (Vec::new(), [1.5, 2.6]),
    };
    let (xp, yp) = (x.point(), y.point());
    for &n in &sweep {
        let hn = 0.5f64.powi(n as i32);
        if LatticeSite::from_point(&xp, hn).is_err() || LatticeSite::from_point(&yp, hn).is_err() {
            return invalid(format!("x or y is not on the grid of spacing 2^-{n}"));
        }
    }

    let o = &raw.oracle;
    let oracle = match o.kind.as_str() {
        "spectral" => OracleKind::Spectral,
        "lattice" => OracleKind::Lattice,
        k => return invalid(format!("oracle.kind `{k}` is not spectral or lattice")),
    };
    let tilt = match o.tilt.as_str() {
        "default" => Tilt::Default,
        "none" => Tilt::None,
        t => return invalid(format!("oracle.tilt `{t}` is not default or none")),
    };
    let solver = match o.solver.as_str() {
        "lu" => Solver::BandedLu,
        "cg" => Solver::ConjugateGradient,
        s => return invalid(format!("oracle.solver `{s}` is not lu or cg")),
    };
    if !(o.target > 0.0 && o.target < 1.0) {
        return invalid("oracle.target must be in (0, 1)");
    }
    if o.site_cap == 0 {
        return invalid("oracle.site_cap must be positive");
    }

    let hy = &raw.hypotheses;
    if hy.samples == 0 {
        return invalid("hypotheses.samples must be positive");
    }
    let sample_box = match (&hy.lo, &hy.hi) {
        (Some(lo), Some(hi)) => {
            if lo.len() != d || hi.len() != d || lo.iter().zip(hi).any(|(a, b)| a >= b) {
                return invalid("hypotheses.lo/hi must describe a non-empty box");
            }
            SampleBox {
                lo: lo.clone(),
                hi: hi.clone(),
            }
        }
        (None, None) => {
            let reach = xp.iter().chain(&yp).fold(0.0f64, |a, b| a.max(b.abs()));
            SampleBox::cube(d, reach + 1.0)
        }
        _ => return invalid("hypotheses.lo and hypotheses.hi go together"),
    };
    if raw.finsler.directions == 0 {
        return invalid("finsler.directions must be positive");
    }

    Ok(RunConfig {
        hash: config_hash(text),
        seed: raw.seed.unwrap_or(0),
        model,
        exponent: p.exponent,
        x,
        y,
        sweep,
        rate_window,
        oracle,
        lattice: LatticeOptions {
            target: o.target,
            tilt,
            solver,
            site_cap: o.site_cap,
        },
        sample_box,
        samples: hy.samples,
        directions: raw.finsler.directions,
        out_dir: raw.output.dir.clone(),
    })
}
