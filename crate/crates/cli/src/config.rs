//! Line-oriented configuration files and their resolution against
//! command-line flags.
//!
//! The format is deliberately small: `key = value` pairs, grouped by
//! `[section]` headers, full-line `#` comments, and nothing else. Every
//! key is checked against the known set — a typo fails the run with the
//! offending key and line number instead of being silently ignored.
//! Command-line flags override file values.

use creig::adapt::{AdaptConfig, MarkingMode};
use creig::mesh::{make_square_ring, make_unit_square, TriMesh};
use creig::spaces::AveragingRule;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Reference value for the double second/third eigenvalue of the square
/// ring, obtained by Aitken extrapolation of conforming values on uniform
/// refinements (the `reference` subcommand recomputes it).
pub const RING_REFERENCE: f64 = 84.517;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: unknown section `[{section}]`")]
    UnknownSection { section: String, line: usize },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Malformed { text: String, line: usize },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    BadValue {
        key: String,
        line: usize,
        msg: String,
    },
    #[error("invalid {what}: {msg}")]
    BadFlag { what: String, msg: String },
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Where the mesh comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DomainSpec {
    Ring,
    Square(usize),
    File(PathBuf),
}

impl DomainSpec {
    /// `ring`, `square:<n>`, or a path to a mesh file.
    pub fn parse(text: &str) -> Result<DomainSpec, String> {
        if text == "ring" {
            return Ok(DomainSpec::Ring);
        }
        if let Some(n) = text.strip_prefix("square:") {
            let n: usize = n
                .parse()
                .map_err(|_| format!("square:<n> needs a positive integer, got `{n}`"))?;
            if n == 0 {
                return Err("square:<n> needs n >= 1".into());
            }
            return Ok(DomainSpec::Square(n));
        }
        if text == "square" {
            return Err("square domains need a subdivision count: square:<n>".into());
        }
        Ok(DomainSpec::File(PathBuf::from(text)))
    }

    pub fn build(&self) -> Result<TriMesh, String> {
        match self {
            DomainSpec::Ring => Ok(make_square_ring()),
            DomainSpec::Square(n) => Ok(make_unit_square(*n)),
            DomainSpec::File(path) => TriMesh::from_file(path)
                .map_err(|e| format!("cannot load mesh {}: {e}", path.display())),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DomainSpec::Ring => "ring".to_string(),
            DomainSpec::Square(n) => format!("square:{n}"),
            DomainSpec::File(p) => p.display().to_string(),
        }
    }
}

/// Fully resolved run configuration (file values overridden by flags).
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub adapt: AdaptConfig,
    pub out: Option<PathBuf>,
    /// Trusted reference value for audits and error columns.
    pub reference: Option<f64>,
    /// Uniform refinement levels for the `reference` subcommand.
    pub levels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            domain: DomainSpec::Square(4),
            adapt: AdaptConfig {
                nev: 6,
                ..Default::default()
            },
            out: None,
            reference: None,
            levels: 5,
        }
    }
}

/// Optional values as they appear on the command line; `None` means the
/// flag was not given and the file value (or default) stands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub domain: Option<String>,
    pub theta: Option<f64>,
    pub nev: Option<usize>,
    pub max_dof: Option<usize>,
    pub target: Option<usize>,
    pub marking: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub cluster_rtol: Option<f64>,
    pub reference: Option<f64>,
    pub levels: Option<usize>,
}

pub fn parse_marking(text: &str) -> Result<MarkingMode, String> {
    if text == "cluster" {
        return Ok(MarkingMode::ClusterSum);
    }
    if let Some(k) = text.strip_prefix("single:") {
        let k: usize = k
            .parse()
            .map_err(|_| format!("single:<k> needs a positive integer, got `{k}`"))?;
        if k == 0 {
            return Err("single:<k> needs k >= 1".into());
        }
        return Ok(MarkingMode::Single(k));
    }
    Err(format!(
        "marking must be `cluster` or `single:<k>`, got `{text}`"
    ))
}

fn parse_rule(text: &str) -> Result<AveragingRule, String> {
    match text {
        "uniform" => Ok(AveragingRule::Uniform),
        "area" => Ok(AveragingRule::AreaWeighted),
        other => Err(format!("rule must be `uniform` or `area`, got `{other}`")),
    }
}

fn parse_bool(text: &str) -> Result<bool, String> {
    match text {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        other => Err(format!("expected a boolean, got `{other}`")),
    }
}

/// Parses a config file into a [`RunConfig`] starting from defaults.
pub fn parse_file(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_text(&text)
}

pub fn parse_text(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[') {
            let Some(name) = name.strip_suffix(']') else {
                return Err(ConfigError::Malformed {
                    text: trimmed.to_string(),
                    line,
                });
            };
            let name = name.trim();
            match name {
                "domain" | "adapt" | "output" | "reference" | "audit" => {
                    section = name.to_string();
                }
                other => {
                    return Err(ConfigError::UnknownSection {
                        section: other.to_string(),
                        line,
                    })
                }
            }
            continue;
        }
        let Some((key, value)) = trimmed.split_once('=') else {
            return Err(ConfigError::Malformed {
                text: trimmed.to_string(),
                line,
            });
        };
        let key = key.trim();
        let value = value.trim();
        let qualified = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        apply_key(&mut cfg, &qualified, value, line)?;
    }
    Ok(cfg)
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
    let bad = |msg: String| ConfigError::BadValue {
        key: key.to_string(),
        line,
        msg,
    };
    macro_rules! num {
        ($ty:ty) => {
            value.parse::<$ty>().map_err(|e| bad(format!("{e}")))?
        };
    }
    match key {
        "domain.kind" => {
            cfg.domain = match value {
                "ring" => DomainSpec::Ring,
                "square" => {
                    // The subdivision arrives via domain.n; default until then.
                    match cfg.domain {
                        DomainSpec::Square(n) => DomainSpec::Square(n),
                        _ => DomainSpec::Square(4),
                    }
                }
                "file" => DomainSpec::File(PathBuf::new()),
                other => return Err(bad(format!("unknown domain kind `{other}`"))),
            };
        }
        "domain.n" => {
            let n = num!(usize);
            if n == 0 {
                return Err(bad("n must be >= 1".into()));
            }
            cfg.domain = DomainSpec::Square(n);
        }
        "domain.path" => cfg.domain = DomainSpec::File(PathBuf::from(value)),
        "adapt.theta" => cfg.adapt.theta = num!(f64),
        "adapt.target" => cfg.adapt.target = num!(usize),
        "adapt.nev" => cfg.adapt.nev = num!(usize),
        "adapt.max_dof" => cfg.adapt.max_dof = num!(usize),
        "adapt.marking" => cfg.adapt.marking = parse_marking(value).map_err(bad)?,
        "adapt.cluster_rtol" => cfg.adapt.cluster_rtol = num!(f64),
        "adapt.seed" => cfg.adapt.seed = num!(u64),
        "adapt.use_eta" => cfg.adapt.use_eta = parse_bool(value).map_err(bad)?,
        "adapt.rule" => cfg.adapt.rule = parse_rule(value).map_err(bad)?,
        "output.dir" => cfg.out = Some(PathBuf::from(value)),
        "reference.levels" => {
            let l = num!(usize);
            if l < 3 {
                return Err(bad("extrapolation needs at least 3 levels".into()));
            }
            cfg.levels = l;
        }
        "audit.reference" => cfg.reference = Some(num!(f64)),
        other => {
            return Err(ConfigError::UnknownKey {
                key: other.to_string(),
                line,
            })
        }
    }
    Ok(())
}

/// Applies command-line overrides on top of a parsed (or default) config.
pub fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides) -> Result<(), ConfigError> {
    let flag = |what: &str, msg: String| ConfigError::BadFlag {
        what: what.to_string(),
        msg,
    };
    if let Some(d) = &ov.domain {
        cfg.domain = DomainSpec::parse(d).map_err(|m| flag("--domain", m))?;
    }
    if let Some(t) = ov.theta {
        cfg.adapt.theta = t;
    }
    if let Some(n) = ov.nev {
        cfg.adapt.nev = n;
    }
    if let Some(m) = ov.max_dof {
        cfg.adapt.max_dof = m;
    }
    if let Some(t) = ov.target {
        cfg.adapt.target = t;
    }
    if let Some(m) = &ov.marking {
        cfg.adapt.marking = parse_marking(m).map_err(|e| flag("--marking", e))?;
    }
    if let Some(s) = ov.seed {
        cfg.adapt.seed = s;
    }
    if let Some(o) = &ov.out {
        cfg.out = Some(o.clone());
    }
    if let Some(r) = ov.cluster_rtol {
        cfg.adapt.cluster_rtol = r;
    }
    if let Some(r) = ov.reference {
        cfg.reference = Some(r);
    }
    if let Some(l) = ov.levels {
        if l < 3 {
            return Err(flag(
                "--levels",
                "extrapolation needs at least 3 levels".into(),
            ));
        }
        cfg.levels = l;
    }
    Ok(())
}

/// Echo lines recorded in the manifest; also the canonical way to inspect
/// what a run actually used.
pub fn echo_lines(cfg: &RunConfig) -> Vec<String> {
    let marking = match cfg.adapt.marking {
        MarkingMode::ClusterSum => "cluster".to_string(),
        MarkingMode::Single(k) => format!("single:{k}"),
    };
    let rule = match cfg.adapt.rule {
        AveragingRule::Uniform => "uniform",
        AveragingRule::AreaWeighted => "area",
    };
    let mut lines = vec![
        format!("domain = {}", cfg.domain.describe()),
        format!("theta = {}", cfg.adapt.theta),
        format!("target = {}", cfg.adapt.target),
        format!("nev = {}", cfg.adapt.nev),
        format!("max_dof = {}", cfg.adapt.max_dof),
        format!("marking = {marking}"),
        format!("cluster_rtol = {}", cfg.adapt.cluster_rtol),
        format!("use_eta = {}", cfg.adapt.use_eta),
        format!("rule = {rule}"),
        format!("seed = {}", cfg.adapt.seed),
        format!("levels = {}", cfg.levels),
    ];
    if let Some(r) = cfg.reference {
        lines.push(format!("reference = {r}"));
    }
    lines
}
