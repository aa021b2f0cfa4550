//! Subcommand implementations.
//!
//! Shared shape: validate arguments, hash inputs, resolve output paths,
//! write `manifest.json`, then compute and write the artifacts. Validation
//! problems surface as [`Failure::Validation`] (exit 2); only `certify`
//! produces [`Failure::Uncertified`] (exit 3).

use std::path::{Path, PathBuf};

use serde_json::json;

use rgmdt::cluster::{self, FitConfig};
use rgmdt::env::MazeSpec;
use rgmdt::evalx::{self, Method, ReturnGapReport};
use rgmdt::multiagent::{self, GrowthSchedule, JointGrowConfig};
use rgmdt::oracle::{
    self, ExactSolveConfig, GreedyPolicy, OracleCritic, QLearnConfig, VisitationMode,
};
use rgmdt::qvec::{self, ActionSource, ActionValueVector, Conditioning, OwnActionPin};
use rgmdt::svmtree::{DecisionTree, GrowConfig, SvmConfig};

use crate::manifest::{
    self, validation, CmdResult, Failure, InputHash, Manifest, MANIFEST_VERSION,
};
use crate::{Cli, Command, GrowArgs, OracleMode};

/// Resolved global options every subcommand sees.
struct Ctx {
    out_dir: PathBuf,
    seed: u64,
    jobs: Option<usize>,
    verbose: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if self.verbose {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn emit_manifest(
        &self,
        command: &'static str,
        config: serde_json::Value,
        inputs: Vec<InputHash>,
        outputs: &[String],
    ) -> CmdResult<()> {
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            toolkit_version: env!("CARGO_PKG_VERSION"),
            command,
            seed: self.seed,
            jobs: self.jobs,
            config,
            inputs,
            outputs: outputs.to_vec(),
        };
        manifest::write_manifest(&self.out_dir, &manifest)?;
        self.note(format!(
            "wrote {}",
            self.out_dir.join("manifest.json").display()
        ));
        Ok(())
    }
}

pub fn run(cli: Cli) -> CmdResult<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return validation("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| {
                Failure::Validation(format!("cannot configure {jobs} worker threads: {e}"))
            })?;
    }
    std::fs::create_dir_all(&cli.out_dir).map_err(|e| {
        Failure::Validation(format!("cannot create {}: {e}", cli.out_dir.display()))
    })?;
    let ctx = Ctx {
        out_dir: cli.out_dir,
        seed: resolve_seed(cli.seed)?,
        jobs: cli.jobs,
        verbose: cli.verbose,
    };
    let name = cli.command.name();
    match cli.command {
        Command::TrainOracle {
            maze,
            mode,
            episodes,
            out,
        } => train_oracle(&ctx, name, &maze, mode, episodes, &out),
        Command::DumpQvec { critic, agent, out } => dump_qvec(&ctx, name, &critic, agent, &out),
        Command::Cluster {
            qvec,
            weights,
            labels,
            hyper,
            out,
        } => cluster_cmd(&ctx, name, &qvec, weights.as_deref(), labels, &hyper, &out),
        Command::Extract {
            critic,
            leaves,
            grow,
            out,
        } => extract(&ctx, name, &critic, leaves, &grow, &out),
        Command::ExtractMulti {
            critic,
            maze,
            leaves,
            iterations,
            unconditioned,
            agent_order,
            grow,
        } => extract_multi(
            &ctx,
            name,
            &critic,
            maze.as_deref(),
            leaves,
            iterations,
            unconditioned,
            agent_order,
            &grow,
        ),
        Command::ExportDot { tree, out } => export_dot(&ctx, name, &tree, out.as_deref()),
        Command::Evaluate {
            critic,
            trees,
            schedule,
            advisory,
            episodes,
            out,
        } => evaluate(
            &ctx,
            name,
            &critic,
            &trees,
            schedule.as_deref(),
            advisory,
            episodes,
            &out,
        ),
        Command::Certify {
            critic,
            trees,
            schedule,
            out,
        } => certify(&ctx, name, &critic, &trees, schedule.as_deref(), &out),
        Command::Sweep {
            critic,
            methods,
            leaves,
            seeds,
            grow,
            out,
        } => sweep(&ctx, name, &critic, &methods, &leaves, &seeds, &grow, &out),
        Command::Ablate {
            critic,
            metrics,
            noise,
            seeds,
            leaves,
            grow,
            out,
        } => ablate(
            &ctx, name, &critic, &metrics, &noise, &seeds, leaves, &grow, &out,
        ),
    }
}

fn resolve_seed(flag: Option<u64>) -> CmdResult<u64> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match std::env::var("RGMDT_SEED") {
        Ok(v) => v.trim().parse::<u64>().map_err(|_| {
            Failure::Validation(format!("RGMDT_SEED must be an unsigned integer, got '{v}'"))
        }),
        Err(_) => Ok(0),
    }
}

// ---------------------------------------------------------------------------
// Shared loading helpers
// ---------------------------------------------------------------------------

fn load_critic(path: &Path) -> CmdResult<(OracleCritic<f64>, InputHash)> {
    let text = manifest::read_text(path)?;
    let critic = OracleCritic::<f64>::from_json(&text)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Ok((
        critic,
        InputHash {
            path: path.display().to_string(),
            sha256: manifest::sha256_hex(text.as_bytes()),
        },
    ))
}

fn load_tree(path: &Path) -> CmdResult<(DecisionTree<f64>, InputHash)> {
    let text = manifest::read_text(path)?;
    let tree = DecisionTree::<f64>::from_json(&text)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Ok((
        tree,
        InputHash {
            path: path.display().to_string(),
            sha256: manifest::sha256_hex(text.as_bytes()),
        },
    ))
}

fn load_schedule(path: &Path) -> CmdResult<(GrowthSchedule<f64>, InputHash)> {
    let text = manifest::read_text(path)?;
    let schedule = GrowthSchedule::<f64>::from_json(&text)
        .map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))?;
    Ok((
        schedule,
        InputHash {
            path: path.display().to_string(),
            sha256: manifest::sha256_hex(text.as_bytes()),
        },
    ))
}

/// Interpret `--maze` as a JSON file when one exists at that path, otherwise
/// as a named preset.
fn resolve_maze(arg: &str) -> CmdResult<(MazeSpec<f64>, Option<InputHash>)> {
    let path = Path::new(arg);
    if path.exists() {
        let text = manifest::read_text(path)?;
        let spec = MazeSpec::<f64>::from_json(&text)
            .map_err(|e| Failure::Validation(format!("{arg}: {e}")))?;
        return Ok((
            spec,
            Some(InputHash {
                path: arg.to_string(),
                sha256: manifest::sha256_hex(text.as_bytes()),
            }),
        ));
    }
    Ok((preset(arg)?, None))
}

fn preset(name: &str) -> CmdResult<MazeSpec<f64>> {
    fn agents(name: &str, n: &str) -> CmdResult<usize> {
        match n.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => validation(format!("preset '{name}': agent count must be a positive integer")),
        }
    }
    if let Some(n) = name.strip_prefix("toy-2x2:") {
        return Ok(MazeSpec::toy_2x2(agents(name, n)?));
    }
    if let Some(n) = name.strip_prefix("predator-prey-4x4:") {
        return Ok(MazeSpec::predator_prey_4x4(agents(name, n)?));
    }
    match name {
        "simple-4x4" => Ok(MazeSpec::simple_4x4()),
        "medium-8x8" => Ok(MazeSpec::medium_8x8()),
        "hard-10x10" => Ok(MazeSpec::hard_10x10()),
        _ => validation(format!(
            "'{name}' is neither a readable file nor a preset \
             (simple-4x4, medium-8x8, hard-10x10, toy-2x2:N, predator-prey-4x4:N)"
        )),
    }
}

/// `{stem}{decoration}.{ext}` next to `rel` (e.g. `runs/q.csv` ->
/// `runs/q.weights.csv`).
fn sibling(rel: &str, rename: impl FnOnce(&str, &str) -> String) -> String {
    let p = Path::new(rel);
    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    let ext = p.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    let name = rename(stem, ext);
    match p.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => {
            parent.join(&name).to_string_lossy().into_owned()
        }
        _ => name,
    }
}

fn require_budget(leaves: usize) -> CmdResult<()> {
    if leaves < 2 {
        return validation(format!(
            "invalid --leaves {leaves}: the leaf budget must satisfy L >= 2 \
             (a one-leaf tree cannot split observations)"
        ));
    }
    Ok(())
}

fn build_grow_config(args: &GrowArgs, leaves: usize, seed: u64) -> GrowConfig<f64> {
    let mut cfg = GrowConfig::with_budget(leaves, seed);
    cfg.mode = args.growth_mode.into();
    cfg.svm = SvmConfig {
        c: args.svm_c,
        tol: args.svm_tol,
        ..SvmConfig::default()
    };
    cfg.fit = FitConfig {
        tau: args.cluster.tau,
        lambda_rim: args.cluster.lambda_rim,
        k3: args.cluster.k3,
        max_iters: args.cluster.max_iters,
        tol: args.cluster.tol,
        n_restarts: args.cluster.restarts,
        seed,
        metric: args.cluster.metric.into(),
    };
    cfg
}

fn to_value<T: serde::Serialize>(value: &T) -> CmdResult<serde_json::Value> {
    serde_json::to_value(value)
        .map_err(|e| Failure::Validation(format!("cannot serialize config: {e}")))
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn train_oracle(
    ctx: &Ctx,
    name: &'static str,
    maze: &str,
    mode: OracleMode,
    episodes: usize,
    out: &str,
) -> CmdResult<()> {
    let (spec, maze_hash) = resolve_maze(maze)?;
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    let solver = match mode {
        OracleMode::Exact => to_value(&ExactSolveConfig::default())?,
        OracleMode::Qlearn => to_value(&QLearnConfig {
            episodes,
            seed: ctx.seed,
            ..QLearnConfig::default()
        })?,
    };
    ctx.emit_manifest(
        name,
        json!({
            "maze": maze,
            "mode": mode.to_string(),
            "solver": solver,
            "spec": to_value(&spec)?,
            "out": out,
        }),
        maze_hash.into_iter().collect(),
        &[out.to_string()],
    )?;

    let critic = match mode {
        OracleMode::Exact => oracle::solve_exact(&spec)?,
        OracleMode::Qlearn => oracle::learn_q(
            &spec,
            QLearnConfig {
                episodes,
                seed: ctx.seed,
                ..QLearnConfig::default()
            },
        )?,
    };
    manifest::write_artifact(&out_path, &(critic.to_json()? + "\n"))?;
    println!(
        "wrote {out} ({} agent(s), {} joint observations)",
        critic.spec.n_agents,
        critic.q.len()
    );
    Ok(())
}

fn dump_qvec(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    agent: usize,
    out: &str,
) -> CmdResult<()> {
    let (critic, critic_hash) = load_critic(critic_path)?;
    let spec = &critic.spec;
    if agent >= spec.n_agents {
        return validation(format!(
            "--agent {agent} is out of range: the critic has {} agent(s)",
            spec.n_agents
        ));
    }
    let weights_out = sibling(out, |s, e| format!("{s}.weights.{e}"));
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    let weights_path = manifest::resolve_out(&ctx.out_dir, &weights_out)?;
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "agent": agent,
            "out": out,
            "weights_out": weights_out,
        }),
        vec![critic_hash],
        &[out.to_string(), weights_out.clone()],
    )?;

    let dynamics = rgmdt::env::Dynamics::build(spec)?;
    let visit = oracle::visitation(
        spec,
        &dynamics,
        &GreedyPolicy::new(&critic),
        VisitationMode::ExactDiscounted,
    )?;
    let vectors: Vec<ActionValueVector<f64>> = qvec::build_vectors(
        &critic,
        &visit,
        agent,
        &Conditioning::free(),
        OwnActionPin::OracleArgmax,
    )?
    .into_iter()
    .filter(|v| !v.is_zero_norm())
    .collect();
    if vectors.is_empty() {
        return validation("every observation is absorbing; no vectors to export");
    }
    manifest::write_artifact(&out_path, &qvec::to_csv(spec, &vectors)?)?;
    manifest::write_artifact(&weights_path, &qvec::weights_to_csv(spec, &vectors)?)?;
    println!(
        "wrote {out} and {weights_out} ({} vectors, agent {agent})",
        vectors.len()
    );
    Ok(())
}

/// Parse a dump-qvec CSV back into rows of `f0, f1, component...`.
fn parse_qvec_csv(text: &str) -> CmdResult<Vec<Vec<f64>>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::Validation("qvec CSV is empty".into()))?;
    if !header.starts_with("f0,f1,component_0") {
        return validation(
            "qvec CSV header must start with 'f0,f1,component_0' (as written by dump-qvec)",
        );
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut vals = Vec::new();
        for field in line.split(',') {
            vals.push(field.parse::<f64>().map_err(|_| {
                Failure::Validation(format!(
                    "qvec CSV row {}: '{field}' is not a number",
                    i + 2
                ))
            })?);
        }
        if vals.len() < 3 {
            return validation(format!("qvec CSV row {} has too few fields", i + 2));
        }
        rows.push(vals);
    }
    if rows.is_empty() {
        return validation("qvec CSV has no data rows");
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return validation("qvec CSV rows have inconsistent field counts");
    }
    Ok(rows)
}

/// Parse a `f0,f1,weight` sidecar.
fn parse_weights_csv(text: &str, expected_rows: usize) -> CmdResult<Vec<f64>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Failure::Validation("weights CSV is empty".into()))?;
    if header != "f0,f1,weight" {
        return validation("weights CSV header must be 'f0,f1,weight'");
    }
    let mut weights = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return validation(format!("weights CSV row {} must have 3 fields", i + 2));
        }
        let w = fields[2].parse::<f64>().map_err(|_| {
            Failure::Validation(format!(
                "weights CSV row {}: '{}' is not a number",
                i + 2,
                fields[2]
            ))
        })?;
        if !(w >= 0.0) {
            return validation(format!("weights CSV row {}: weight must be >= 0", i + 2));
        }
        weights.push(w);
    }
    if weights.len() != expected_rows {
        return validation(format!(
            "weights CSV has {} rows but the qvec CSV has {expected_rows}",
            weights.len()
        ));
    }
    if weights.iter().all(|&w| w == 0.0) {
        return validation("weights CSV carries no mass (all weights are zero)");
    }
    Ok(weights)
}

#[allow(clippy::too_many_arguments)]
fn cluster_cmd(
    ctx: &Ctx,
    name: &'static str,
    qvec_path: &Path,
    weights_path: Option<&Path>,
    labels: usize,
    hyper: &crate::ClusterArgs,
    out: &str,
) -> CmdResult<()> {
    let qvec_text = manifest::read_text(qvec_path)?;
    let rows = parse_qvec_csv(&qvec_text)?;
    let mut inputs = vec![InputHash {
        path: qvec_path.display().to_string(),
        sha256: manifest::sha256_hex(qvec_text.as_bytes()),
    }];
    let weights = match weights_path {
        Some(p) => {
            let text = manifest::read_text(p)?;
            inputs.push(InputHash {
                path: p.display().to_string(),
                sha256: manifest::sha256_hex(text.as_bytes()),
            });
            parse_weights_csv(&text, rows.len())?
        }
        None => vec![1.0 / rows.len() as f64; rows.len()],
    };

    let fit_cfg = FitConfig::<f64> {
        tau: hyper.tau,
        lambda_rim: hyper.lambda_rim,
        k3: hyper.k3,
        max_iters: hyper.max_iters,
        tol: hyper.tol,
        n_restarts: hyper.restarts,
        seed: ctx.seed,
        metric: hyper.metric.into(),
    };
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    ctx.emit_manifest(
        name,
        json!({
            "qvec": qvec_path.display().to_string(),
            "weights": weights_path.map(|p| p.display().to_string()),
            "labels": labels,
            "fit": to_value(&fit_cfg)?,
            "out": out,
        }),
        inputs,
        &[out.to_string()],
    )?;

    // Rows become synthetic vectors: `own_cell` is the CSV row index, which
    // keeps `member_cells` meaningful for file-based workflows.
    let vectors: Vec<ActionValueVector<f64>> = rows
        .iter()
        .zip(&weights)
        .enumerate()
        .map(|(row, (vals, &weight))| {
            let components = vals[2..].to_vec();
            let norm = components.iter().map(|c| c * c).sum::<f64>().sqrt();
            if norm == 0.0 {
                return validation(format!(
                    "qvec CSV row {} is a zero vector; drop absorbing rows before clustering",
                    row + 2
                ));
            }
            Ok(ActionValueVector {
                agent: 0,
                own_cell: row,
                components,
                weight,
                norm,
                pinned_action: None,
                source: ActionSource::OwnEnumeration,
            })
        })
        .collect::<CmdResult<_>>()?;

    let model = cluster::fit(&vectors, labels, &fit_cfg)?;
    manifest::write_artifact(&out_path, &(model.to_json()? + "\n"))?;
    println!(
        "wrote {out} (epsilon {:.6e}, {} labels over {} vectors)",
        model.epsilon,
        labels,
        vectors.len()
    );
    Ok(())
}

fn extract(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    leaves: usize,
    grow: &GrowArgs,
    out: &str,
) -> CmdResult<()> {
    require_budget(leaves)?;
    let (critic, critic_hash) = load_critic(critic_path)?;
    if critic.spec.n_agents != 1 {
        return validation(format!(
            "the critic has {} agents; extract handles single-agent critics, use extract-multi",
            critic.spec.n_agents
        ));
    }
    let cfg = JointGrowConfig::new(build_grow_config(grow, leaves, ctx.seed));
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "leaves": leaves,
            "grow": to_value(&cfg)?,
            "out": out,
        }),
        vec![critic_hash],
        &[out.to_string()],
    )?;

    let grown = multiagent::grow_joint(&critic, &cfg)?;
    let tree = &grown.trees[0];
    manifest::write_artifact(&out_path, &(tree.to_json()? + "\n"))?;
    let last_eps = grown
        .schedule
        .stages
        .last()
        .map(|s| s.epsilon_stage)
        .unwrap_or(0.0);
    println!(
        "wrote {out} ({} leaves, stage epsilon {last_eps:.6e})",
        tree.n_leaves()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn extract_multi(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    maze: Option<&Path>,
    leaves: usize,
    iterations: Option<usize>,
    unconditioned: bool,
    agent_order: crate::AgentOrderArg,
    grow: &GrowArgs,
) -> CmdResult<()> {
    require_budget(leaves)?;
    let (critic, critic_hash) = load_critic(critic_path)?;
    let mut inputs = vec![critic_hash];
    if let Some(maze_path) = maze {
        let text = manifest::read_text(maze_path)?;
        let spec = MazeSpec::<f64>::from_json(&text)
            .map_err(|e| Failure::Validation(format!("{}: {e}", maze_path.display())))?;
        inputs.push(InputHash {
            path: maze_path.display().to_string(),
            sha256: manifest::sha256_hex(text.as_bytes()),
        });
        if spec != critic.spec {
            return validation(format!(
                "{} differs from the maze spec embedded in the critic",
                maze_path.display()
            ));
        }
    }

    let mut cfg = JointGrowConfig::new(build_grow_config(grow, leaves, ctx.seed));
    cfg.iterations = iterations;
    cfg.conditioned = !unconditioned;
    cfg.agent_order = agent_order.into();

    let n = critic.spec.n_agents;
    let tree_outs: Vec<String> = (0..n).map(|j| format!("tree_agent{j}.json")).collect();
    let mut outputs = tree_outs.clone();
    outputs.push("schedule.json".to_string());
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "maze": maze.map(|p| p.display().to_string()),
            "leaves": leaves,
            "grow": to_value(&cfg)?,
        }),
        inputs,
        &outputs,
    )?;

    let grown = multiagent::grow_joint(&critic, &cfg)?;
    for (tree, rel) in grown.trees.iter().zip(&tree_outs) {
        let path = manifest::resolve_out(&ctx.out_dir, rel)?;
        manifest::write_artifact(&path, &(tree.to_json()? + "\n"))?;
    }
    let schedule_path = manifest::resolve_out(&ctx.out_dir, "schedule.json")?;
    manifest::write_artifact(&schedule_path, &(grown.schedule.to_json()? + "\n"))?;
    println!(
        "wrote {} tree(s) and schedule.json ({} stages over {} iterations)",
        n,
        grown.schedule.stages.len(),
        grown.schedule.iterations
    );
    Ok(())
}

fn export_dot(
    ctx: &Ctx,
    name: &'static str,
    tree_path: &Path,
    out: Option<&str>,
) -> CmdResult<()> {
    let (tree, tree_hash) = load_tree(tree_path)?;
    let out = match out {
        Some(o) => o.to_string(),
        None => {
            let stem = tree_path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("tree");
            format!("{stem}.dot")
        }
    };
    let out_path = manifest::resolve_out(&ctx.out_dir, &out)?;
    ctx.emit_manifest(
        name,
        json!({
            "tree": tree_path.display().to_string(),
            "out": out,
        }),
        vec![tree_hash],
        &[out.clone()],
    )?;
    manifest::write_artifact(&out_path, &tree.export_dot())?;
    println!("wrote {out}");
    Ok(())
}

fn load_policy_inputs(
    critic_path: &Path,
    tree_paths: &[PathBuf],
    schedule_path: Option<&Path>,
) -> CmdResult<(
    OracleCritic<f64>,
    Vec<DecisionTree<f64>>,
    Option<GrowthSchedule<f64>>,
    Vec<InputHash>,
)> {
    let (critic, critic_hash) = load_critic(critic_path)?;
    let mut inputs = vec![critic_hash];
    let mut trees = Vec::with_capacity(tree_paths.len());
    for p in tree_paths {
        let (tree, hash) = load_tree(p)?;
        trees.push(tree);
        inputs.push(hash);
    }
    if trees.len() != critic.spec.n_agents {
        return validation(format!(
            "got {} tree(s) for a critic with {} agent(s); pass one tree per agent in agent order",
            trees.len(),
            critic.spec.n_agents
        ));
    }
    let schedule = match schedule_path {
        Some(p) => {
            let (s, hash) = load_schedule(p)?;
            inputs.push(hash);
            Some(s)
        }
        None => None,
    };
    Ok((critic, trees, schedule, inputs))
}

fn report_summary(report: &ReturnGapReport<f64>) -> String {
    format!(
        "J_oracle {:.6}, J_tree {:.6}, gap {:.6e}, bound {:.6e}, certified {} [{}]",
        report.j_oracle,
        report.j_tree,
        report.gap,
        report.bound_explicit,
        report.certified,
        report.metric_mode
    )
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    tree_paths: &[PathBuf],
    schedule_path: Option<&Path>,
    advisory: bool,
    episodes: usize,
    out: &str,
) -> CmdResult<()> {
    if advisory && episodes == 0 {
        return validation("--episodes must be at least 1 in advisory mode");
    }
    let (critic, trees, schedule, inputs) =
        load_policy_inputs(critic_path, tree_paths, schedule_path)?;
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "trees": tree_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "schedule": schedule_path.map(|p| p.display().to_string()),
            "advisory": advisory,
            "episodes": episodes,
            "out": out,
        }),
        inputs,
        &[out.to_string()],
    )?;

    let report = if advisory {
        evalx::certify_bound_advisory(&critic, &trees, episodes, ctx.seed)?
    } else {
        evalx::certify_bound(&critic, &trees, schedule.as_ref())?
    };
    manifest::write_artifact(&out_path, &(report.to_json()? + "\n"))?;
    println!("wrote {out}: {}", report_summary(&report));
    Ok(())
}

fn certify(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    tree_paths: &[PathBuf],
    schedule_path: Option<&Path>,
    out: &str,
) -> CmdResult<()> {
    let (critic, trees, schedule, inputs) =
        load_policy_inputs(critic_path, tree_paths, schedule_path)?;
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "trees": tree_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "schedule": schedule_path.map(|p| p.display().to_string()),
            "out": out,
        }),
        inputs,
        &[out.to_string()],
    )?;

    let report = evalx::certify_bound(&critic, &trees, schedule.as_ref())?;
    manifest::write_artifact(&out_path, &(report.to_json()? + "\n"))?;
    println!("wrote {out}: {}", report_summary(&report));
    if !report.certified {
        return Err(Failure::Uncertified(format!(
            "return gap {:.6e} exceeds the certified bound {:.6e}",
            report.gap, report.bound_explicit
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    methods: &[crate::MethodArg],
    leaves: &[usize],
    seeds: &[u64],
    grow: &GrowArgs,
    out: &str,
) -> CmdResult<()> {
    for &l in leaves {
        require_budget(l)?;
    }
    if seeds.is_empty() {
        return validation("--seeds must name at least one seed");
    }
    let (critic, critic_hash) = load_critic(critic_path)?;
    let methods: Vec<Method> = methods.iter().map(|&m| m.into()).collect();
    let base = JointGrowConfig::new(build_grow_config(grow, leaves[0], ctx.seed));
    let cells_out = sibling(out, |s, e| format!("{s}_cells.{e}"));
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    let cells_path = manifest::resolve_out(&ctx.out_dir, &cells_out)?;
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "methods": methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "leaves": leaves,
            "seeds": seeds,
            "grow": to_value(&base)?,
            "out": out,
            "cells_out": cells_out,
        }),
        vec![critic_hash],
        &[out.to_string(), cells_out.clone()],
    )?;

    let cells = evalx::sweep_cells(&critic, &methods, leaves, seeds, &base)?;
    let rows = evalx::aggregate_sweep(&cells);
    manifest::write_artifact(&out_path, &evalx::sweep_to_csv(&rows))?;
    manifest::write_artifact(&cells_path, &evalx::sweep_cells_to_csv(&cells))?;
    println!(
        "wrote {out} ({} rows) and {cells_out} ({} cells)",
        rows.len(),
        cells.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn ablate(
    ctx: &Ctx,
    name: &'static str,
    critic_path: &Path,
    metrics: &[crate::MetricArg],
    noise: &[f64],
    seeds: &[u64],
    leaves: usize,
    grow: &GrowArgs,
    out: &str,
) -> CmdResult<()> {
    require_budget(leaves)?;
    if seeds.is_empty() {
        return validation("--seeds must name at least one seed");
    }
    for &p in noise {
        if !(0.0..=1.0).contains(&p) {
            return validation(format!("--noise {p} is not a probability in [0, 1]"));
        }
    }
    let (critic, critic_hash) = load_critic(critic_path)?;
    let metrics: Vec<cluster::Metric> = metrics.iter().map(|&m| m.into()).collect();
    let base = JointGrowConfig::new(build_grow_config(grow, leaves, ctx.seed));
    let summary_out = sibling(out, |s, e| format!("{s}_summary.{e}"));
    let out_path = manifest::resolve_out(&ctx.out_dir, out)?;
    let summary_path = manifest::resolve_out(&ctx.out_dir, &summary_out)?;
    ctx.emit_manifest(
        name,
        json!({
            "critic": critic_path.display().to_string(),
            "metrics": metrics.iter().map(|m| m.name()).collect::<Vec<_>>(),
            "noise": noise,
            "seeds": seeds,
            "leaves": leaves,
            "grow": to_value(&base)?,
            "out": out,
            "summary_out": summary_out,
        }),
        vec![critic_hash],
        &[out.to_string(), summary_out.clone()],
    )?;

    let rows = evalx::ablate_metric(&critic, &metrics, noise, seeds, &base)?;
    let summary = evalx::ablate_summary(&rows);
    manifest::write_artifact(&out_path, &evalx::ablate_to_csv(&rows))?;
    manifest::write_artifact(&summary_path, &evalx::ablate_summary_to_csv(&summary))?;

    // Ordering report: metrics ranked by mean discounted return per noise.
    let mut levels: Vec<f64> = summary.iter().map(|s| s.noise).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for level in levels {
        let mut at: Vec<_> = summary.iter().filter(|s| s.noise == level).collect();
        at.sort_by(|a, b| b.j_tree_mean.total_cmp(&a.j_tree_mean));
        let ranking = at
            .iter()
            .map(|s| format!("{} {:.4}", s.metric.name(), s.j_tree_mean))
            .collect::<Vec<_>>()
            .join(" >= ");
        println!("noise {level}: {ranking} (mean discounted return)");
    }
    println!("wrote {out} ({} rows) and {summary_out}", rows.len());
    Ok(())
}
