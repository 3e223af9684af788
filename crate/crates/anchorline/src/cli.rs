use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anchorline_core::anchor_sim::{AnchorStore, RelocModel};
use anchorline_core::executor::{Execution, ExecutionState, ExecutorConfig};
use anchorline_core::fixtures::{inspection_scenario, FIXTURE_MISSION_ID};
use anchorline_core::gestures::{
    generate_dataset, infer, read_jsonl, standard_subjects, train, write_jsonl, GestureNet, TrainConfig,
};
use anchorline_core::mapconv::{convert, load_mesh_file, SliceConfig, DEFAULT_RESOLUTION};
use anchorline_core::mission::MissionStore;
use anchorline_core::nav::Pose2D;
use clap::{Parser, Subcommand};
use serde_json::json;

use crate::config::ApiConfig;

#[derive(Debug, Parser)]
#[command(name = "anchorline", version, about = "Anchor-relative robot missions on a shared map")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Convert an OBJ/PLY mesh into an occupancy grid.
    ConvertMap {
        #[arg(long)]
        mesh: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        resolution: f64,
        /// Slice height (m).
        #[arg(long, default_value_t = 0.5)]
        z: f64,
        /// Occupied band (m); one voxel when omitted.
        #[arg(long)]
        band: Option<f64>,
    },
    /// Run a stored mission to completion in simulation.
    Execute {
        #[arg(long)]
        mission: String,
        #[arg(long)]
        missions: PathBuf,
        #[arg(long)]
        anchors: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        /// Service config supplying the localization model and executor settings.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Branch choice as `node=order`; unlisted branches take the lowest order.
        #[arg(long = "branch", value_parser = parse_branch)]
        branches: Vec<(String, u32)>,
        /// Robot start as `x,y,yaw`.
        #[arg(long, value_parser = parse_pose)]
        start: Option<Pose2D>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic gesture dataset (JSON lines).
    GenerateGestures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        subjects: usize,
        #[arg(long, default_value_t = 2)]
        reps: usize,
    },
    /// Train the gesture classifier with one subject held out.
    TrainGestures {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        holdout: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 40)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify every window of every recording in a dataset.
    Classify {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write the demo inspection scenario and a service config into a directory.
    MakeFixture {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn parse_branch(s: &str) -> Result<(String, u32), String> {
    let (node, order) = s.split_once('=').ok_or("expected node=order")?;
    let order = order.parse().map_err(|e| format!("bad order {order:?}: {e}"))?;
    Ok((node.to_string(), order))
}

fn parse_pose(s: &str) -> Result<Pose2D, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, yaw] => Ok(Pose2D::new(x, y, yaw)),
        [x, y] => Ok(Pose2D::new(x, y, 0.0)),
        _ => Err("expected x,y[,yaw]".into()),
    }
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 on a domain error, 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

type CmdResult = Result<i32, String>;

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_file(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn dispatch(cmd: Cmd) -> CmdResult {
    match cmd {
        Cmd::ConvertMap {
            mesh,
            out,
            resolution,
            z,
            band,
        } => convert_map(&mesh, &out, resolution, z, band),
        Cmd::Execute {
            mission,
            missions,
            anchors,
            grid,
            config,
            branches,
            start,
            seed,
        } => execute(ExecuteArgs {
            mission,
            missions,
            anchors,
            grid,
            config,
            branches: branches.into_iter().collect(),
            start,
            seed,
        }),
        Cmd::GenerateGestures { out, subjects, reps } => {
            let data = generate_dataset(&standard_subjects(subjects), reps);
            write_file(&out, &write_jsonl(&data))?;
            eprintln!("wrote {} recordings to {}", data.len(), out.display());
            Ok(0)
        }
        Cmd::TrainGestures {
            data,
            holdout,
            seed,
            epochs,
            out,
        } => {
            let recordings = read_jsonl(&read_file(&data)?).map_err(|e| e.to_string())?;
            let cfg = TrainConfig {
                seed,
                epochs,
                ..TrainConfig::default()
            };
            let report = train(&recordings, &holdout, &cfg).map_err(|e| e.to_string())?;
            write_file(&out, &report.net.to_json())?;
            let summary = json!({
                "initial_loss": report.initial_loss,
                "final_loss": report.final_loss,
                "epoch_losses": report.epoch_losses,
                "holdout_accuracy": report.holdout_accuracy,
                "holdout_confusion": report.holdout_confusion,
                "train_windows": report.train_windows,
                "holdout_windows": report.holdout_windows,
            });
            println!("{summary}");
            Ok(0)
        }
        Cmd::Classify { net, data } => {
            let net = GestureNet::from_json(&read_file(&net)?).map_err(|e| e.to_string())?;
            let recordings = read_jsonl(&read_file(&data)?).map_err(|e| e.to_string())?;
            for r in &recordings {
                for w in r.windows().map_err(|e| e.to_string())? {
                    let inf = infer(&net, &w);
                    let line = json!({
                        "subject": r.subject,
                        "t": w.end_time(),
                        "label": inf.label,
                        "confidences": inf.confidences,
                    });
                    println!("{line}");
                }
            }
            Ok(0)
        }
        Cmd::MakeFixture { dir, seed } => make_fixture(&dir, seed),
        Cmd::Serve { config } => {
            let cfg = ApiConfig::resolve(config.as_deref()).map_err(|e| e.to_string())?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
            rt.block_on(crate::server::serve(&cfg)).map_err(|e| e.to_string())?;
            Ok(0)
        }
    }
}

fn convert_map(mesh: &Path, out: &Path, resolution: f64, z: f64, band: Option<f64>) -> CmdResult {
    let loaded = load_mesh_file(mesh).map_err(|e| e.to_string())?;
    if loaded.dropped_faces > 0 {
        eprintln!("dropped {} degenerate faces", loaded.dropped_faces);
    }
    let mut slice = SliceConfig::new(z, resolution);
    if let Some(b) = band {
        slice.occupied_band = b;
    }
    let grid = convert(&loaded.mesh, resolution, &slice).map_err(|e| e.to_string())?;
    write_file(out, &grid.to_json())?;
    eprintln!(
        "wrote {}x{} grid at {} m, origin ({}, {})",
        grid.width, grid.height, grid.resolution, grid.origin[0], grid.origin[1]
    );
    Ok(0)
}

struct ExecuteArgs {
    mission: String,
    missions: PathBuf,
    anchors: PathBuf,
    grid: PathBuf,
    config: Option<PathBuf>,
    branches: HashMap<String, u32>,
    start: Option<Pose2D>,
    seed: Option<u64>,
}

fn execute(a: ExecuteArgs) -> CmdResult {
    let (mut model, mut exec_cfg, cfg_start) = match &a.config {
        Some(p) => {
            let c = ApiConfig::load(p).map_err(|e| e.to_string())?;
            (c.reloc_model(), c.executor_config(), Some(c.robot_start))
        }
        None => (RelocModel::default(), ExecutorConfig::default(), None),
    };
    if let Some(s) = a.seed {
        model.seed = s;
        exec_cfg.seed = s;
    }
    let start = a.start.or(cfg_start).unwrap_or(Pose2D::new(1.0, 1.0, 0.0));
    let store = MissionStore::open(&a.missions).map_err(|e| e.to_string())?;
    let anchors = AnchorStore::open(&a.anchors).map_err(|e| e.to_string())?;
    let grid = anchorline_core::mapconv::OccupancyGrid::from_json(&read_file(&a.grid)?).map_err(|e| e.to_string())?;
    let mut exec = Execution::start(&store, &anchors, Arc::new(grid), &a.mission, model, exec_cfg, start)
        .map_err(|e| e.to_string())?;
    // Each pass either finishes, resolves a branch or exhausts the tick budget.
    let tick_budget = exec_cfg.max_steps.saturating_mul(100_000).max(1);
    loop {
        let state = exec.run_until_blocked(tick_budget).clone();
        match state {
            ExecutionState::AwaitingBranch { node } => {
                let order = match a.branches.get(&node) {
                    Some(o) => *o,
                    None => exec
                        .mission()
                        .and_then(|m| m.out_edges(&node).iter().map(|e| e.order).min())
                        .ok_or_else(|| format!("no out-edges at {node}"))?,
                };
                exec.resolve_branch(&node, order).map_err(|e| e.to_string())?;
            }
            ExecutionState::Navigating { .. } => return Err("tick budget exhausted".into()),
            _ => break,
        }
    }
    let summary = exec.summary();
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(if matches!(summary.state, ExecutionState::Completed) { 0 } else { 1 })
}

fn make_fixture(dir: &Path, seed: u64) -> CmdResult {
    let mut s = inspection_scenario(seed);
    let missions = dir.join("missions");
    let store = MissionStore::open(&missions).map_err(|e| e.to_string())?;
    store.save(&s.mission).map_err(|e| e.to_string())?;
    s.anchors.save_to(dir.join("anchors.json")).map_err(|e| e.to_string())?;
    write_file(&dir.join("grid.json"), &s.grid.to_json())?;
    let mut cfg = ApiConfig::new("missions".into(), "anchors.json".into(), "grid.json".into());
    cfg.robot_start = s.robot_start;
    cfg.seed = Some(seed);
    write_file(
        &dir.join("config.json"),
        &serde_json::to_string_pretty(&cfg).expect("config serializes"),
    )?;
    eprintln!("wrote mission {FIXTURE_MISSION_ID} and config to {}", dir.display());
    Ok(0)
}
