//! Run orchestration and file I/O: executing experiments into an output
//! directory, dataset CSVs, metric streams, checkpoints, and evaluation.
//!
//! Output layout of a run:
//!
//! ```text
//! out_dir/
//!   metrics.jsonl                 one record per iteration, deterministic
//!   manifest.json                 config hash, seeds, records with timing
//!   samples/node_<id>_from_<leaf>.csv
//!   checkpoint/manifest.json + edge_<from>_<to>.bin
//! ```
//!
//! `metrics.jsonl` is a pure function of the config; wall-clock times live
//! only in the manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, LeafSpec, RootMode};
use crate::engine::{Engine, EngineError};
use crate::measures::{empirical_moments, GaussianMeasure, MeasureError, SampleSet};
use crate::oracle::{
    bw2_uvp, dense_mipf, gaussian_barycenter_fixed_point, gaussian_on_grid, tree_sinkhorn_mp,
    wp_objective_check, Grid, GridMeasure, OracleError, TreeKernelSet,
};
use crate::tree::{NodeId, TreeError, UndirectedTree};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error in {path} at row {row}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        message: String,
    },
    #[error("{0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// CSV of sample sets: header `x0,...,x{d-1}`, shortest-round-trip decimals.

pub fn write_samples_csv(path: &Path, samples: &SampleSet) -> Result<(), RunError> {
    let mut out = String::new();
    let d = samples.dim();
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for row in samples.data().rows() {
        let fields: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(io_err(path))
}

pub fn read_samples_csv(path: &Path) -> Result<SampleSet, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| RunError::Schema {
        path: path.to_path_buf(),
        row: 1,
        message: "empty file".into(),
    })?;
    let d = header.split(',').count();
    if !header.starts_with("x0") {
        return Err(RunError::Schema {
            path: path.to_path_buf(),
            row: 1,
            message: format!("expected `x0,...` header, got `{header}`"),
        });
    }
    let mut values = Vec::new();
    let mut count = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d {
            return Err(RunError::Schema {
                path: path.to_path_buf(),
                row,
                message: format!("expected {d} fields, got {}", fields.len()),
            });
        }
        for f in fields {
            let v: f64 = f.parse().map_err(|_| RunError::Schema {
                path: path.to_path_buf(),
                row,
                message: format!("cannot parse `{f}` as a number"),
            })?;
            values.push(v);
        }
        count += 1;
    }
    let data = Array2::from_shape_vec((count, d), values).expect("row-major layout");
    SampleSet::new(data).map_err(|e| RunError::Schema {
        path: path.to_path_buf(),
        row: 0,
        message: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Run artifacts.

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricRecord {
    pub iteration: usize,
    pub cycle: usize,
    pub leaf: NodeId,
    pub edges_trained: usize,
    pub final_loss: f64,
    pub mean_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uvp_percent: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TimedRecord {
    #[serde(flatten)]
    pub metric: MetricRecord,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub records: Vec<TimedRecord>,
    pub artifacts: BTreeMap<String, Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_uvp_percent: Option<f64>,
}

fn sha256_hex(text: &str) -> String {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Unregularized barycenter of the config's Gaussian leaves, weighted by the
/// normalized edge weights. The evaluation target for Gaussian runs.
pub fn oracle_barycenter_from_config(cfg: &ExperimentConfig) -> Result<GaussianMeasure, RunError> {
    let tree = UndirectedTree::build(cfg.tree_nodes, &cfg.tree_edges)?;
    let center = tree
        .star_center()
        .ok_or_else(|| RunError::Invalid("oracle barycenter needs a star tree".into()))?;
    let mut gaussians = Vec::new();
    let mut weights = Vec::new();
    for (&leaf, spec) in &cfg.leaves {
        match spec {
            LeafSpec::Gaussian { dim, cond_max, scale, seed } => {
                gaussians.push(crate::measures::gen_random_spd(*dim, *cond_max, *scale, *seed)?);
            }
            _ => {
                return Err(RunError::Invalid(format!(
                    "leaf {leaf} is not gaussian; no closed-form barycenter target"
                )))
            }
        }
        weights.push(tree.edge_weight(center, leaf).expect("star edge"));
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(gaussian_barycenter_fixed_point(&gaussians, &weights, 1e-11, 2000)?)
}

/// Executes the configured number of cycles, writing metrics, samples,
/// checkpoints, and the manifest into `out_dir`.
pub fn cmd_run(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunManifest, RunError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let config_text = cfg.to_text();
    let mut engine = Engine::new(cfg.clone())?;

    // Closed-form evaluation target, when one exists.
    let uvp_target = if cfg.eval_uvp {
        oracle_barycenter_from_config(cfg).ok()
    } else {
        None
    };
    let center = engine.tree().star_center();

    let mut records: Vec<TimedRecord> = Vec::new();
    let started = Instant::now();
    let mut last_mark = started.elapsed();
    let eval_count = cfg.eval_count;
    let seed = cfg.run_seed;
    engine.run_cycles(cfg.run_cycles, |eng, rec| {
        let uvp_percent = match (&uvp_target, center) {
            (Some(target), Some(hub)) => eng
                .sample_node_from(
                    rec.leaf,
                    hub,
                    eval_count,
                    crate::engine::derive_seed(seed, &[40, rec.iteration as u64]),
                )
                .ok()
                .and_then(|s| bw2_uvp(&s, target).ok()),
            _ => None,
        };
        let now = started.elapsed();
        let wall_ms = (now - last_mark).as_millis() as u64;
        last_mark = now;
        records.push(TimedRecord {
            metric: MetricRecord {
                iteration: rec.iteration,
                cycle: rec.cycle,
                leaf: rec.leaf,
                edges_trained: rec.edges_trained,
                final_loss: rec.final_loss,
                mean_loss: rec.mean_loss,
                uvp_percent,
            },
            wall_ms,
        });
    })?;

    // metrics.jsonl excludes timing so reruns are byte-identical.
    let metrics_path = out_dir.join("metrics.jsonl");
    {
        let mut f = fs::File::create(&metrics_path).map_err(io_err(&metrics_path))?;
        for r in &records {
            let line = serde_json::to_string(&r.metric).expect("serializable record");
            writeln!(f, "{line}").map_err(io_err(&metrics_path))?;
        }
    }

    // Final samples: the whole tree diffused from every start leaf.
    let samples_dir = out_dir.join("samples");
    fs::create_dir_all(&samples_dir).map_err(io_err(&samples_dir))?;
    let mut sample_files = Vec::new();
    for leaf in engine.tree().leaves() {
        let per_node =
            engine.sample_tree(leaf, cfg.eval_count, crate::engine::derive_seed(seed, &[41, leaf as u64]))?;
        let mut nodes: Vec<_> = per_node.keys().copied().collect();
        nodes.sort_unstable();
        for node in nodes {
            let name = format!("node_{node}_from_{leaf}.csv");
            write_samples_csv(&samples_dir.join(&name), &per_node[&node])?;
            sample_files.push(format!("samples/{name}"));
        }
    }

    let checkpoint_files = write_checkpoints(&engine, &out_dir.join("checkpoint"))?;

    let best_uvp_percent = records
        .iter()
        .filter_map(|r| r.metric.uvp_percent)
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.min(v))));

    let mut artifacts = BTreeMap::new();
    artifacts.insert("metrics".to_string(), vec!["metrics.jsonl".to_string()]);
    artifacts.insert("samples".to_string(), sample_files);
    artifacts.insert("checkpoints".to_string(), checkpoint_files);

    let manifest = RunManifest {
        config_sha256: sha256_hex(&config_text),
        seed,
        records,
        artifacts,
        best_uvp_percent,
    };
    let manifest_path = out_dir.join("manifest.json");
    fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
    )
    .map_err(io_err(&manifest_path))?;
    fs::write(out_dir.join("config.txt"), config_text).map_err(io_err(out_dir))?;
    Ok(manifest)
}

#[derive(Debug, Serialize)]
struct CheckpointEntry {
    from: NodeId,
    to: NodeId,
    file: String,
    adam_steps: u64,
    blocks: Vec<BlockShape>,
}

#[derive(Debug, Serialize)]
struct BlockShape {
    name: String,
    weight_shape: [usize; 2],
    bias_len: usize,
}

fn write_checkpoints(engine: &Engine, dir: &Path) -> Result<Vec<String>, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let block_names = [
        "state_block.0",
        "state_block.1",
        "time_block.0",
        "time_block.1",
        "head.0",
        "head.1",
        "head.2",
    ];
    let mut entries = Vec::new();
    let mut files = Vec::new();
    for (from, to) in engine.models.directed_edges() {
        let net = engine.models.net(from, to);
        let file = format!("edge_{from}_{to}.bin");
        let mut bytes = Vec::new();
        let mut blocks = Vec::new();
        for (layer, name) in net.layers().into_iter().zip(block_names) {
            for &v in layer.w.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            for &v in layer.b.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            blocks.push(BlockShape {
                name: name.to_string(),
                weight_shape: [layer.w.nrows(), layer.w.ncols()],
                bias_len: layer.b.len(),
            });
        }
        let path = dir.join(&file);
        fs::write(&path, bytes).map_err(io_err(&path))?;
        entries.push(CheckpointEntry {
            from,
            to,
            file: file.clone(),
            adam_steps: engine.models.adam_steps(from, to),
            blocks,
        });
        files.push(format!("checkpoint/{file}"));
    }
    let manifest = dir.join("manifest.json");
    fs::write(
        &manifest,
        serde_json::to_string_pretty(&entries).expect("serializable checkpoint manifest"),
    )
    .map_err(io_err(&manifest))?;
    files.push("checkpoint/manifest.json".to_string());
    Ok(files)
}

// ---------------------------------------------------------------------------
// Evaluation.

#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub uvp_percent: f64,
    pub sample_count: usize,
    pub fitted_mean: Vec<f64>,
    pub fitted_cov: Vec<Vec<f64>>,
    pub target_mean: Vec<f64>,
    pub target_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Deserialize)]
pub struct GaussianTargetSpec {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

pub fn gaussian_from_spec(spec: &GaussianTargetSpec) -> Result<GaussianMeasure, RunError> {
    let d = spec.mean.len();
    if spec.cov.len() != d || spec.cov.iter().any(|r| r.len() != d) {
        return Err(RunError::Invalid("target cov shape does not match mean".into()));
    }
    let cov = Array2::from_shape_fn((d, d), |(i, j)| spec.cov[i][j]);
    Ok(GaussianMeasure::new_unchecked(
        Array1::from_vec(spec.mean.clone()),
        cov,
    ))
}

/// Unexplained-variance evaluation of a samples file against a Gaussian
/// target.
pub fn cmd_eval_uvp(samples_path: &Path, target: &GaussianMeasure) -> Result<EvalReport, RunError> {
    let samples = read_samples_csv(samples_path)?;
    let uvp = bw2_uvp(&samples, target)?;
    let (mean, cov) = empirical_moments(&samples)?;
    let d = mean.len();
    Ok(EvalReport {
        uvp_percent: uvp,
        sample_count: samples.count(),
        fitted_mean: mean.to_vec(),
        fitted_cov: (0..d).map(|i| (0..d).map(|j| cov[[i, j]]).collect()).collect(),
        target_mean: target.mean().to_vec(),
        target_cov: (0..d)
            .map(|i| (0..d).map(|j| target.cov()[[i, j]]).collect())
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Discrete-solver commands.

#[derive(Debug, Serialize)]
pub struct SinkhornReport {
    pub iterations: usize,
    pub final_max_tv: f64,
    pub kl_trace: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective_identity: Option<ObjectiveIdentity>,
}

#[derive(Debug, Serialize)]
pub struct ObjectiveIdentity {
    pub lhs: f64,
    pub rhs: f64,
    pub residual: f64,
    pub dense_vs_mp_max_marginal_diff: f64,
}

/// Builds grid, kernels, and leaf densities from a config's oracle section.
pub fn oracle_instance(
    cfg: &ExperimentConfig,
) -> Result<
    (
        UndirectedTree,
        std::sync::Arc<Grid>,
        std::collections::HashMap<NodeId, GridMeasure>,
        TreeKernelSet,
    ),
    RunError,
> {
    let tree = UndirectedTree::build(cfg.tree_nodes, &cfg.tree_edges)?;
    let o = &cfg.oracle;
    let grid = match o.grid_dim {
        1 => Grid::regular_1d(o.grid_min, o.grid_max, o.grid_points),
        2 => Grid::regular_2d(o.grid_min, o.grid_max, o.grid_points),
        d => return Err(RunError::Invalid(format!("oracle.grid.dim must be 1 or 2, got {d}"))),
    };
    let mut leaf_marginals = std::collections::HashMap::new();
    for (&leaf, spec) in &cfg.leaves {
        match spec {
            LeafSpec::GridDensity { mean, sigma } => {
                leaf_marginals.insert(leaf, gaussian_on_grid(&grid, mean, *sigma)?);
            }
            _ => {
                return Err(RunError::Invalid(format!(
                    "leaf {leaf} needs mean+sigma fields for the discrete solver"
                )))
            }
        }
    }
    let (root, phi_root) = match cfg.root {
        RootMode::Leaf(r) => {
            let phi = leaf_marginals
                .get(&r)
                .ok_or_else(|| RunError::Invalid(format!("root leaf {r} has no density")))?
                .clone();
            (r, phi)
        }
        RootMode::Internal { node, .. } => {
            let (mean, sigma) = o
                .root_density
                .clone()
                .ok_or_else(|| RunError::Invalid("internal root needs root.mean and root.sigma".into()))?;
            (node, gaussian_on_grid(&grid, &mean, sigma)?)
        }
    };
    let kernels = TreeKernelSet::build(&tree, &grid, cfg.epsilon, root, &phi_root)?;
    Ok((tree, grid, leaf_marginals, kernels))
}

/// Runs the message-passing solver, writes node marginal CSVs
/// (`grid_index,point...,weight`) and a JSON report with convergence
/// diagnostics. The objective identity is cross-checked on the dense tensor
/// when the instance fits under the cap.
pub fn cmd_oracle_sinkhorn(cfg: &ExperimentConfig, out_dir: &Path) -> Result<SinkhornReport, RunError> {
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let (tree, grid, leaf_marginals, kernels) = oracle_instance(cfg)?;
    let run = tree_sinkhorn_mp(&kernels, &tree, &leaf_marginals, cfg.oracle.tol, cfg.oracle.max_iter)?;

    for (node, marginal) in &run.node_marginals {
        let mut out = String::new();
        let coord_header: Vec<String> = (0..grid.dim()).map(|j| format!("p{j}")).collect();
        out.push_str(&format!("grid_index,{},weight\n", coord_header.join(",")));
        for (i, &w) in marginal.weights().iter().enumerate() {
            let coords: Vec<String> = grid.point(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&format!("{i},{},{w}\n", coords.join(",")));
        }
        let path = out_dir.join(format!("node_{node}_marginal.csv"));
        fs::write(&path, out).map_err(io_err(&path))?;
    }

    let objective_identity = match dense_mipf(
        &kernels,
        &tree,
        &leaf_marginals,
        run.iterations,
        cfg.oracle.cap,
        0,
    ) {
        Ok(dense) => {
            let mu0 = match cfg.root {
                RootMode::Leaf(r) => leaf_marginals[&r].clone(),
                RootMode::Internal { .. } => {
                    let (mean, sigma) = cfg.oracle.root_density.clone().expect("validated above");
                    gaussian_on_grid(&grid, &mean, sigma)?
                }
            };
            let (lhs, rhs) = wp_objective_check(&dense.finalt, &kernels, &tree, &mu0, cfg.oracle.cap)?;
            let mut max_diff = 0.0f64;
            for v in 0..tree.node_count() {
                let dm = dense.finalt.node_marginal(v);
                let mm = run.node_marginals[&v].weights();
                for i in 0..dm.len() {
                    max_diff = max_diff.max((dm[i] - mm[i]).abs());
                }
            }
            Some(ObjectiveIdentity {
                lhs,
                rhs,
                residual: (lhs - rhs).abs(),
                dense_vs_mp_max_marginal_diff: max_diff,
            })
        }
        Err(OracleError::InstanceTooLarge { .. }) => None,
        Err(e) => return Err(e.into()),
    };

    let report = SinkhornReport {
        iterations: run.iterations,
        final_max_tv: run.final_max_tv,
        kl_trace: run.kl_trace,
        objective_identity,
    };
    let path = out_dir.join("report.json");
    fs::write(&path, serde_json::to_string_pretty(&report).expect("serializable report"))
        .map_err(io_err(&path))?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct BarycenterReport {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub fixed_point_tol: f64,
}

/// Closed-form barycenter of the config's Gaussian leaves.
pub fn cmd_oracle_barycenter(cfg: &ExperimentConfig) -> Result<BarycenterReport, RunError> {
    let tree = UndirectedTree::build(cfg.tree_nodes, &cfg.tree_edges)?;
    let center = tree
        .star_center()
        .ok_or_else(|| RunError::Invalid("barycenter oracle needs a star tree".into()))?;
    let target = oracle_barycenter_from_config(cfg)?;
    let mut weights: Vec<f64> = cfg
        .leaves
        .keys()
        .map(|&l| tree.edge_weight(center, l).expect("star edge"))
        .collect();
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    let d = target.dim();
    Ok(BarycenterReport {
        mean: target.mean().to_vec(),
        cov: (0..d)
            .map(|i| (0..d).map(|j| target.cov()[[i, j]]).collect())
            .collect(),
        weights,
        fixed_point_tol: 1e-11,
    })
}

/// Writes the standalone dataset described by the config's `dataset.*` keys.
pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path) -> Result<usize, RunError> {
    let spec = cfg
        .dataset_spec
        .as_ref()
        .ok_or_else(|| RunError::Invalid("config has no dataset.* keys".into()))?;
    let samples = match spec {
        LeafSpec::Toy { kind, noise, seed } => {
            crate::measures::gen_toy2d(*kind, cfg.dataset_count, *noise, seed.unwrap_or(0))
        }
        LeafSpec::Gaussian { dim, cond_max, scale, seed } => {
            let g = crate::measures::gen_random_spd(*dim, *cond_max, *scale, *seed)?;
            crate::measures::sample_gaussian(&g, cfg.dataset_count, seed.wrapping_add(1))?
        }
        LeafSpec::GridDensity { .. } => {
            return Err(RunError::Invalid("dataset.* cannot be a grid density".into()))
        }
    };
    write_samples_csv(out, &samples)?;
    Ok(samples.count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::test_configs::{gaussian_star_config, toy_star_config};
    use ndarray::array;

    #[test]
    fn csv_round_trip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let samples = SampleSet::new(array![
            [0.1, -2.5e-17],
            [1.0 / 3.0, f64::MIN_POSITIVE],
            [12345.6789, -0.0]
        ])
        .unwrap();
        write_samples_csv(&path, &samples).unwrap();
        let back = read_samples_csv(&path).unwrap();
        assert_eq!(samples.data(), back.data());
    }

    #[test]
    fn csv_schema_errors_carry_row_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "x0,x1\n1.0,2.0\n3.0\n").unwrap();
        match read_samples_csv(&path).unwrap_err() {
            RunError::Schema { row, .. } => assert_eq!(row, 3),
            other => panic!("unexpected error {other:?}"),
        }
        fs::write(&path, "x0,x1\n1.0,abc\n").unwrap();
        match read_samples_csv(&path).unwrap_err() {
            RunError::Schema { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn run_writes_all_artifacts_and_is_deterministic() {
        let mut cfg = toy_star_config(80, 4);
        cfg.run_cycles = 1;
        cfg.eval_count = 32;
        let dir = tempfile::tempdir().unwrap();
        let out_a = dir.path().join("a");
        let out_b = dir.path().join("b");
        let manifest = cmd_run(&cfg, &out_a).unwrap();
        assert_eq!(manifest.records.len(), 3);
        assert!(out_a.join("metrics.jsonl").exists());
        assert!(out_a.join("manifest.json").exists());
        assert!(out_a.join("checkpoint/manifest.json").exists());
        // 4 nodes x 3 start leaves.
        assert_eq!(manifest.artifacts["samples"].len(), 12);
        for f in &manifest.artifacts["samples"] {
            assert!(out_a.join(f).exists());
        }

        cmd_run(&cfg, &out_b).unwrap();
        let ma = fs::read(out_a.join("metrics.jsonl")).unwrap();
        let mb = fs::read(out_b.join("metrics.jsonl")).unwrap();
        assert_eq!(ma, mb, "metrics.jsonl must be byte-identical across reruns");
    }

    #[test]
    fn gaussian_run_records_uvp() {
        let mut cfg = gaussian_star_config(100, 4, 2);
        cfg.run_cycles = 1;
        cfg.eval_count = 64;
        let dir = tempfile::tempdir().unwrap();
        let manifest = cmd_run(&cfg, dir.path()).unwrap();
        assert!(manifest.best_uvp_percent.is_some());
        for r in &manifest.records {
            assert!(r.metric.uvp_percent.is_some());
        }
    }

    #[test]
    fn eval_uvp_of_exact_target_samples() {
        let g = crate::measures::gen_random_spd(2, 5.0, 1.0, 3).unwrap();
        let s = crate::measures::sample_gaussian(&g, 50_000, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        write_samples_csv(&path, &s).unwrap();
        let report = cmd_eval_uvp(&path, &g).unwrap();
        assert!(report.uvp_percent < 0.5, "uvp {}", report.uvp_percent);
        assert_eq!(report.sample_count, 50_000);
    }

    #[test]
    fn gen_data_writes_csv() {
        let cfg = ExperimentConfig {
            dataset_count: 17,
            dataset_spec: Some(LeafSpec::Toy {
                kind: crate::measures::ToyKind::Circle,
                noise: 0.0,
                seed: Some(2),
            }),
            ..ExperimentConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.csv");
        let n = cmd_gen_data(&cfg, &out).unwrap();
        assert_eq!(n, 17);
        let back = read_samples_csv(&out).unwrap();
        assert_eq!(back.count(), 17);
        assert_eq!(back.dim(), 2);
    }

    #[test]
    fn oracle_sinkhorn_command_reports_identity() {
        let text = r#"
tree.nodes = 3
tree.edge = "0 1 0.7"
tree.edge = "1 2 1.2"
epsilon = 0.6
root.node = 0
leaf.0.mean = "-0.6"
leaf.0.sigma = 0.5
leaf.2.mean = "0.8"
leaf.2.sigma = 0.4
oracle.grid.points = 8
oracle.grid.min = -2
oracle.grid.max = 2
oracle.tol = 1e-10
"#;
        let cfg = ExperimentConfig::parse(text).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let report = cmd_oracle_sinkhorn(&cfg, dir.path()).unwrap();
        assert!(report.final_max_tv <= 1e-10);
        let identity = report.objective_identity.expect("instance fits the cap");
        assert!(identity.residual <= 1e-8);
        assert!(identity.dense_vs_mp_max_marginal_diff <= 1e-8);
        assert!(dir.path().join("node_1_marginal.csv").exists());
        assert!(dir.path().join("report.json").exists());
    }

    #[test]
    fn oracle_barycenter_command() {
        let cfg = gaussian_star_config(10, 1, 2);
        let report = cmd_oracle_barycenter(&cfg).unwrap();
        assert_eq!(report.mean.len(), 2);
        assert_eq!(report.weights, vec![1.0 / 3.0; 3]);
    }
}
