//! Experiment configuration: a flat dotted-key text format and its
//! validated in-memory form.
//!
//! The file format is one `section.key = value` assignment per line, `#`
//! comments, and repeated `tree.edge` lines for the edge list. It is
//! deliberately flat so configs diff cleanly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::measures::ToyKind;
use crate::net::Activation;
use crate::tree::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
}

/// Where the reference density sits on the tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RootMode {
    /// The root is a leaf; its own data measure is the reference.
    Leaf(NodeId),
    /// The root is an internal node carrying a designed Gaussian reference
    /// scaled by `alpha`.
    Internal { node: NodeId, alpha: f64 },
}

/// Per-leaf data specification.
#[derive(Debug, Clone, PartialEq)]
pub enum LeafSpec {
    Toy {
        kind: ToyKind,
        noise: f64,
        seed: Option<u64>,
    },
    Gaussian {
        dim: usize,
        cond_max: f64,
        scale: f64,
        seed: u64,
    },
    /// Isotropic Gaussian density evaluated on the discrete oracle grid;
    /// not sampleable.
    GridDensity { mean: Vec<f64>, sigma: f64 },
}

/// Discrete-solver settings.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub grid_dim: usize,
    pub grid_points: usize,
    pub grid_min: f64,
    pub grid_max: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub cap: usize,
    /// Internal-root reference density on the grid (mean, sigma).
    pub root_density: Option<(Vec<f64>, f64)>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_dim: 1,
            grid_points: 10,
            grid_min: -4.0,
            grid_max: 4.0,
            tol: 1e-10,
            max_iter: 10_000,
            cap: 2_000_000,
            root_density: None,
        }
    }
}

/// Fully validated experiment description; a run is a pure function of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub tree_nodes: usize,
    pub tree_edges: Vec<(NodeId, NodeId, f64)>,
    pub epsilon: f64,
    pub root: RootMode,
    pub leaves: BTreeMap<NodeId, LeafSpec>,
    pub dataset_count: usize,
    pub schedule_steps: usize,
    pub schedule_gamma0: f64,
    pub train_lr: f64,
    pub train_batch: usize,
    pub train_iters_per_ipf: usize,
    pub train_refresh_every: usize,
    pub train_activation: Activation,
    pub run_cycles: usize,
    pub run_seed: u64,
    pub eval_count: usize,
    pub eval_uvp: bool,
    pub oracle: OracleConfig,
    /// Standalone dataset spec for the data-generation command.
    pub dataset_spec: Option<LeafSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            tree_nodes: 0,
            tree_edges: Vec::new(),
            epsilon: 0.1,
            root: RootMode::Leaf(0),
            leaves: BTreeMap::new(),
            dataset_count: 10_000,
            schedule_steps: 50,
            schedule_gamma0: 1e-5,
            train_lr: 1e-4,
            train_batch: 512,
            train_iters_per_ipf: 2_000,
            train_refresh_every: 500,
            train_activation: Activation::Silu,
            run_cycles: 10,
            run_seed: 0,
            eval_count: 2_000,
            eval_uvp: true,
            oracle: OracleConfig::default(),
            dataset_spec: None,
        }
    }
}

/// Raw per-leaf fields before they are resolved into a [`LeafSpec`].
#[derive(Default, Clone)]
struct LeafDraft {
    kind: Option<String>,
    noise: Option<f64>,
    seed: Option<u64>,
    dim: Option<usize>,
    cond_max: Option<f64>,
    scale: Option<f64>,
    mean: Option<Vec<f64>>,
    sigma: Option<f64>,
}

impl ExperimentConfig {
    /// Parses the dotted-key text format, applies defaults, and validates
    /// global constraints.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut leaf_drafts: BTreeMap<NodeId, LeafDraft> = BTreeMap::new();
        let mut dataset_draft = LeafDraft::default();
        let mut saw_dataset_key = false;
        let mut root_node: Option<usize> = None;
        let mut root_mode: Option<String> = None;
        let mut root_alpha: Option<f64> = None;
        let mut root_mean: Option<Vec<f64>> = None;
        let mut root_sigma: Option<f64> = None;

        for (line_no, raw_line) in text.lines().enumerate() {
            let line = line_no + 1;
            let stripped = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            };
            if stripped.trim().is_empty() {
                continue;
            }
            let eq = stripped.find('=').ok_or(ConfigError::ParseError {
                line,
                column: stripped.len(),
                message: "expected `key = value`".into(),
            })?;
            let key = stripped[..eq].trim();
            let value = unquote(stripped[eq + 1..].trim());
            if key.is_empty() {
                return Err(ConfigError::ParseError {
                    line,
                    column: 1,
                    message: "empty key".into(),
                });
            }
            let col = raw_line.find(key).map(|p| p + 1).unwrap_or(1);
            let bad_value = |message: String| ConfigError::ParseError {
                line,
                column: col,
                message,
            };

            let parts: Vec<&str> = key.split('.').collect();
            match parts.as_slice() {
                ["tree", "nodes"] => cfg.tree_nodes = parse_num(value, line, col)?,
                ["tree", "edge"] => {
                    let fields: Vec<&str> = value.split_whitespace().collect();
                    if fields.len() != 3 {
                        return Err(bad_value(format!(
                            "tree.edge needs `u v w`, got `{value}`"
                        )));
                    }
                    let u: usize = parse_num(fields[0], line, col)?;
                    let v: usize = parse_num(fields[1], line, col)?;
                    let w: f64 = parse_num(fields[2], line, col)?;
                    cfg.tree_edges.push((u, v, w));
                }
                ["epsilon"] => cfg.epsilon = parse_num(value, line, col)?,
                ["root", "mode"] => root_mode = Some(value.to_string()),
                ["root", "node"] => root_node = Some(parse_num(value, line, col)?),
                ["root", "alpha"] => root_alpha = Some(parse_num(value, line, col)?),
                ["root", "mean"] => root_mean = Some(parse_vec(value, line, col)?),
                ["root", "sigma"] => root_sigma = Some(parse_num(value, line, col)?),
                ["dataset", "count"] => cfg.dataset_count = parse_num(value, line, col)?,
                ["dataset", field] => {
                    saw_dataset_key = true;
                    fill_leaf_field(&mut dataset_draft, field, value, line, col)?;
                }
                ["leaf", id, field] => {
                    let node: usize = parse_num(id, line, col)?;
                    let draft = leaf_drafts.entry(node).or_default();
                    fill_leaf_field(draft, field, value, line, col)?;
                }
                ["schedule", "steps"] => cfg.schedule_steps = parse_num(value, line, col)?,
                ["schedule", "gamma0"] => cfg.schedule_gamma0 = parse_num(value, line, col)?,
                ["train", "lr"] => cfg.train_lr = parse_num(value, line, col)?,
                ["train", "batch"] => cfg.train_batch = parse_num(value, line, col)?,
                ["train", "iters_per_ipf"] => cfg.train_iters_per_ipf = parse_num(value, line, col)?,
                ["train", "refresh_every"] => cfg.train_refresh_every = parse_num(value, line, col)?,
                ["train", "activation"] => {
                    cfg.train_activation = value.parse().map_err(|e: String| bad_value(e))?
                }
                ["run", "cycles"] => cfg.run_cycles = parse_num(value, line, col)?,
                ["run", "seed"] => cfg.run_seed = parse_num(value, line, col)?,
                ["eval", "count"] => cfg.eval_count = parse_num(value, line, col)?,
                ["eval", "uvp"] => {
                    cfg.eval_uvp = match value {
                        "true" => true,
                        "false" => false,
                        other => return Err(bad_value(format!("expected true/false, got `{other}`"))),
                    }
                }
                ["oracle", "grid", "dim"] => cfg.oracle.grid_dim = parse_num(value, line, col)?,
                ["oracle", "grid", "points"] => cfg.oracle.grid_points = parse_num(value, line, col)?,
                ["oracle", "grid", "min"] => cfg.oracle.grid_min = parse_num(value, line, col)?,
                ["oracle", "grid", "max"] => cfg.oracle.grid_max = parse_num(value, line, col)?,
                ["oracle", "tol"] => cfg.oracle.tol = parse_num(value, line, col)?,
                ["oracle", "max_iter"] => cfg.oracle.max_iter = parse_num(value, line, col)?,
                ["oracle", "cap"] => cfg.oracle.cap = parse_num(value, line, col)?,
                _ => return Err(ConfigError::UnknownKey(key.to_string())),
            }
        }

        cfg.root = match root_mode.as_deref() {
            None | Some("leaf") => RootMode::Leaf(root_node.unwrap_or(0)),
            Some("internal") => RootMode::Internal {
                node: root_node.unwrap_or(0),
                alpha: root_alpha.unwrap_or(1.0),
            },
            Some(other) => {
                return Err(ConfigError::ConstraintViolation(format!(
                    "root.mode must be `leaf` or `internal`, got `{other}`"
                )))
            }
        };
        if let (Some(mean), Some(sigma)) = (root_mean, root_sigma) {
            cfg.oracle.root_density = Some((mean, sigma));
        }
        for (node, draft) in leaf_drafts {
            cfg.leaves.insert(node, resolve_leaf(node, draft)?);
        }
        if saw_dataset_key {
            cfg.dataset_spec = Some(resolve_leaf(usize::MAX, dataset_draft)?);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::ConstraintViolation(m));
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.schedule_steps < 2 || self.schedule_steps % 2 != 0 {
            return fail(format!(
                "schedule.steps must be even and >= 2, got {}",
                self.schedule_steps
            ));
        }
        if !(self.schedule_gamma0 > 0.0) {
            return fail("schedule.gamma0 must be positive".into());
        }
        if self.train_batch == 0 {
            return fail("train.batch must be positive".into());
        }
        if let RootMode::Internal { alpha, .. } = self.root {
            if !(alpha > 0.0) {
                return fail(format!("root.alpha must be positive, got {alpha}"));
            }
        }
        for (node, spec) in &self.leaves {
            if let LeafSpec::Gaussian { dim, cond_max, scale, .. } = spec {
                if *dim == 0 {
                    return fail(format!("leaf.{node}.dim must be >= 1"));
                }
                if *cond_max < 1.0 {
                    return fail(format!("leaf.{node}.cond_max must be >= 1"));
                }
                if !(*scale > 0.0) {
                    return fail(format!("leaf.{node}.scale must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Common data dimension across the leaf specs.
    pub fn data_dim(&self) -> Result<usize, String> {
        let mut dim = None;
        for (node, spec) in &self.leaves {
            let d = match spec {
                LeafSpec::Toy { .. } => 2,
                LeafSpec::Gaussian { dim, .. } => *dim,
                LeafSpec::GridDensity { mean, .. } => mean.len(),
            };
            match dim {
                None => dim = Some(d),
                Some(existing) if existing != d => {
                    return Err(format!(
                        "leaf {node} has dimension {d}, but earlier leaves have {existing}"
                    ))
                }
                _ => {}
            }
        }
        dim.ok_or_else(|| "no leaf specs".to_string())
    }

    /// Serializes back to the text format; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tree.nodes = {}", self.tree_nodes);
        for (u, v, w) in &self.tree_edges {
            let _ = writeln!(out, "tree.edge = \"{u} {v} {w}\"");
        }
        let _ = writeln!(out, "epsilon = {}", self.epsilon);
        match self.root {
            RootMode::Leaf(node) => {
                let _ = writeln!(out, "root.mode = leaf");
                let _ = writeln!(out, "root.node = {node}");
            }
            RootMode::Internal { node, alpha } => {
                let _ = writeln!(out, "root.mode = internal");
                let _ = writeln!(out, "root.node = {node}");
                let _ = writeln!(out, "root.alpha = {alpha}");
            }
        }
        let _ = writeln!(out, "dataset.count = {}", self.dataset_count);
        if let Some(spec) = &self.dataset_spec {
            write_leaf(&mut out, "dataset".to_string(), spec);
        }
        for (node, spec) in &self.leaves {
            write_leaf(&mut out, format!("leaf.{node}"), spec);
        }
        let _ = writeln!(out, "schedule.steps = {}", self.schedule_steps);
        let _ = writeln!(out, "schedule.gamma0 = {}", self.schedule_gamma0);
        let _ = writeln!(out, "train.lr = {}", self.train_lr);
        let _ = writeln!(out, "train.batch = {}", self.train_batch);
        let _ = writeln!(out, "train.iters_per_ipf = {}", self.train_iters_per_ipf);
        let _ = writeln!(out, "train.refresh_every = {}", self.train_refresh_every);
        let act = match self.train_activation {
            Activation::Silu => "silu",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        };
        let _ = writeln!(out, "train.activation = {act}");
        let _ = writeln!(out, "run.cycles = {}", self.run_cycles);
        let _ = writeln!(out, "run.seed = {}", self.run_seed);
        let _ = writeln!(out, "eval.count = {}", self.eval_count);
        let _ = writeln!(out, "eval.uvp = {}", self.eval_uvp);
        let o = &self.oracle;
        let _ = writeln!(out, "oracle.grid.dim = {}", o.grid_dim);
        let _ = writeln!(out, "oracle.grid.points = {}", o.grid_points);
        let _ = writeln!(out, "oracle.grid.min = {}", o.grid_min);
        let _ = writeln!(out, "oracle.grid.max = {}", o.grid_max);
        let _ = writeln!(out, "oracle.tol = {}", o.tol);
        let _ = writeln!(out, "oracle.max_iter = {}", o.max_iter);
        let _ = writeln!(out, "oracle.cap = {}", o.cap);
        if let Some((mean, sigma)) = &o.root_density {
            let joined: Vec<String> = mean.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(out, "root.mean = \"{}\"", joined.join(" "));
            let _ = writeln!(out, "root.sigma = {sigma}");
        }
        out
    }
}

fn write_leaf(out: &mut String, prefix: String, spec: &LeafSpec) {
    match spec {
        LeafSpec::Toy { kind, noise, seed } => {
            let _ = writeln!(out, "{prefix}.kind = {kind}");
            let _ = writeln!(out, "{prefix}.noise = {noise}");
            if let Some(s) = seed {
                let _ = writeln!(out, "{prefix}.seed = {s}");
            }
        }
        LeafSpec::Gaussian { dim, cond_max, scale, seed } => {
            let _ = writeln!(out, "{prefix}.kind = gaussian");
            let _ = writeln!(out, "{prefix}.dim = {dim}");
            let _ = writeln!(out, "{prefix}.cond_max = {cond_max}");
            let _ = writeln!(out, "{prefix}.scale = {scale}");
            let _ = writeln!(out, "{prefix}.seed = {seed}");
        }
        LeafSpec::GridDensity { mean, sigma } => {
            let joined: Vec<String> = mean.iter().map(|m| m.to_string()).collect();
            let _ = writeln!(out, "{prefix}.mean = \"{}\"", joined.join(" "));
            let _ = writeln!(out, "{prefix}.sigma = {sigma}");
        }
    }
}

fn unquote(s: &str) -> &str {
    let s = s.trim();
    if s.len() >= 2 && s.starts_with('"') && s.ends_with('"') {
        &s[1..s.len() - 1]
    } else {
        s
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, column: usize) -> Result<T, ConfigError> {
    s.parse().map_err(|_| ConfigError::ParseError {
        line,
        column,
        message: format!("cannot parse `{s}`"),
    })
}

fn parse_vec(s: &str, line: usize, column: usize) -> Result<Vec<f64>, ConfigError> {
    s.split_whitespace().map(|tok| parse_num(tok, line, column)).collect()
}

fn fill_leaf_field(
    draft: &mut LeafDraft,
    field: &str,
    value: &str,
    line: usize,
    col: usize,
) -> Result<(), ConfigError> {
    match field {
        "kind" => draft.kind = Some(value.to_string()),
        "noise" => draft.noise = Some(parse_num(value, line, col)?),
        "seed" => draft.seed = Some(parse_num(value, line, col)?),
        "dim" => draft.dim = Some(parse_num(value, line, col)?),
        "cond_max" => draft.cond_max = Some(parse_num(value, line, col)?),
        "scale" => draft.scale = Some(parse_num(value, line, col)?),
        "mean" => draft.mean = Some(parse_vec(value, line, col)?),
        "sigma" => draft.sigma = Some(parse_num(value, line, col)?),
        other => return Err(ConfigError::UnknownKey(format!("leaf.<id>.{other}"))),
    }
    Ok(())
}

fn resolve_leaf(node: usize, draft: LeafDraft) -> Result<LeafSpec, ConfigError> {
    let name = if node == usize::MAX { "dataset".to_string() } else { format!("leaf.{node}") };
    match draft.kind.as_deref() {
        Some("gaussian") => Ok(LeafSpec::Gaussian {
            dim: draft.dim.unwrap_or(2),
            cond_max: draft.cond_max.unwrap_or(10.0),
            scale: draft.scale.unwrap_or(1.0),
            seed: draft.seed.unwrap_or(node as u64),
        }),
        Some(toy) => {
            let kind: ToyKind = toy.parse().map_err(|_| {
                ConfigError::ConstraintViolation(format!("{name}.kind has unknown value `{toy}`"))
            })?;
            if draft.mean.is_some() || draft.sigma.is_some() {
                return Err(ConfigError::ConstraintViolation(format!(
                    "{name} mixes a sampled kind with grid-density fields"
                )));
            }
            Ok(LeafSpec::Toy {
                kind,
                noise: draft.noise.unwrap_or(0.0),
                seed: draft.seed,
            })
        }
        None => match (draft.mean, draft.sigma) {
            (Some(mean), Some(sigma)) => {
                if !(sigma > 0.0) {
                    return Err(ConfigError::ConstraintViolation(format!(
                        "{name}.sigma must be positive"
                    )));
                }
                Ok(LeafSpec::GridDensity { mean, sigma })
            }
            _ => Err(ConfigError::ConstraintViolation(format!(
                "{name} needs either a kind or mean+sigma"
            ))),
        },
    }
}
