//! Running a matrix.
//!
//! Output layout of `out_dir`:
//!
//! * `run_<cell>_seed<seed>.jsonl`: one `run` header line, one `batch`
//!   line per batch and one `eval` footer line. Wall-clock fields live only
//!   here.
//! * `loss_<cell>.csv`: `batch,mean_loss,variance_loss,runs`, the mean and
//!   sample variance over seeds of each batch's mean loss.
//! * `table.csv`: `action,privacy,cpt_obs1..cpt_obsK,nocpt_obs1..nocpt_obsK`,
//!   mean evaluation visits per episode to each obstacle, one row per action
//!   mode and privacy level. Rows run MaxQ before RandQ and from the largest
//!   noise scale down to `NoDP`. Slots without a cell are left empty.
//! * `failed_<cell>.jsonl`: one `failure` line per seed that could not run,
//!   written only when something failed.
//! * `networks/<cell>_seed<seed>.json`: final parameters, only with
//!   [`RunOptions::save_networks`].
//!
//! Cells that differ only in their action mode share one training run per
//! seed; each is evaluated separately.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ppcpt_core::trainer::{evaluate_policy, train_with_observer};
use ppcpt_core::{ActionMode, BatchRecord, CptMode, EvalReport, GridWorld, QNetwork, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::error::{HarnessError, Result};
use crate::matrix::{action_index, ExperimentMatrix};
use crate::world::load_world;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub jobs: Option<usize>,
    pub save_networks: bool,
    /// Print one line per finished training to stderr.
    pub progress: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub cell: String,
    pub seed: u64,
    /// All seeds of this cell.
    pub seeds: Vec<u64>,
    /// All cell names of the matrix.
    pub matrix_cells: Vec<String>,
    pub privacy_label: String,
    pub sigma: Option<f64>,
    pub cpt: CptMode,
    pub action: ActionMode,
    pub config: TrainConfig,
    pub world: GridWorld,
    pub started_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLine {
    pub batch_index: usize,
    pub samples: usize,
    pub mean_loss: f64,
    pub variance_loss: f64,
    pub obstacle_visits: Vec<u64>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFooter {
    pub action: ActionMode,
    pub episodes: usize,
    pub max_steps: usize,
    pub mean_visits: Vec<f64>,
    pub success_rate: f64,
    pub mean_return: f64,
    pub final_quartile_loss: f64,
    pub lipschitz_bound: Option<f64>,
    pub training_visits: Vec<u64>,
    pub finished_unix_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureLine {
    pub cell: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub matrix_cells: Vec<String>,
    pub privacy_label: String,
    pub cpt: CptMode,
    pub action: ActionMode,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Run(RunHeader),
    Batch(BatchLine),
    Eval(EvalFooter),
    Failure(FailureLine),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub cell: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    /// `(cell, seed)` pairs that trained and evaluated.
    pub completed: usize,
    /// Distinct trainings after sharing across action modes.
    pub trainings: usize,
    pub failures: Vec<CellFailure>,
    pub files: Vec<PathBuf>,
}

/// Mean of the last quarter of `losses` (at least one element).
pub fn final_quartile_mean(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return f64::NAN;
    }
    let tail = (losses.len() / 4).max(1);
    losses[losses.len() - tail..].iter().sum::<f64>() / tail as f64
}

/// Sample mean and variance; the variance of one value is 0.
pub fn mean_and_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, ss / (n - 1.0))
}

fn unix_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn eval_rng(seed: u64, action: ActionMode) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + action_index(action) as u64);
    rng
}

struct Job {
    config: TrainConfig,
    /// Distinct action modes to evaluate.
    actions: Vec<ActionMode>,
}

struct Trained {
    records: Vec<(BatchRecord, f64)>,
    network: QNetwork,
    obstacle_visits: Vec<u64>,
    lipschitz_bound: Option<f64>,
    evals: Vec<(ActionMode, EvalReport)>,
    started_unix_ms: u64,
    seconds: f64,
}

fn run_job(world: &GridWorld, job: &Job, eval: &crate::matrix::EvalSettings) -> ppcpt_core::Result<Trained> {
    let started_unix_ms = unix_ms();
    let clock = Instant::now();
    let mut records = Vec::with_capacity(job.config.horizon);
    let out = train_with_observer(world, &job.config, |r| {
        records.push((r.clone(), clock.elapsed().as_secs_f64() * 1e3));
    })?;
    let mut evals = Vec::new();
    for &action in &job.actions {
        let mut rng = eval_rng(job.config.seed, action);
        let report = evaluate_policy(world, &out.network, eval.episodes, eval.max_steps, action, &mut rng)?;
        evals.push((action, report));
    }
    Ok(Trained {
        records,
        network: out.network,
        obstacle_visits: out.obstacle_visits,
        lipschitz_bound: out.lipschitz_bound,
        evals,
        started_unix_ms,
        seconds: clock.elapsed().as_secs_f64(),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::Logs(format!("{}: {other:?}", path.display())),
    }
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn write_jsonl(path: &Path, lines: impl IntoIterator<Item = LogLine>) -> Result<()> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        serde_json::to_writer(&mut w, &line).map_err(|e| HarnessError::Logs(format!("{}: {e}", path.display())))?;
        w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Runs every cell and seed of `matrix` on the world in `world_file` and
/// writes the outputs described in the module docs to `out_dir`, which
/// must not already hold run logs.
pub fn run_matrix(matrix: &ExperimentMatrix, world_file: &Path, out_dir: &Path, options: &RunOptions) -> Result<RunSummary> {
    let world = load_world(world_file)?;
    run_matrix_on(matrix, &world, out_dir, options)
}

pub fn run_matrix_on(matrix: &ExperimentMatrix, world: &GridWorld, out_dir: &Path, options: &RunOptions) -> Result<RunSummary> {
    matrix.validate().map_err(|m| HarnessError::config("matrix", m))?;
    world.validate().map_err(|e| HarnessError::config("world", e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    for entry in fs::read_dir(out_dir).map_err(|e| HarnessError::io(out_dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(out_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "jsonl") {
            return Err(HarnessError::config(out_dir, "output directory already holds run logs"));
        }
    }
    if options.save_networks {
        let dir = out_dir.join("networks");
        fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    }

    let matrix_cells: Vec<String> = matrix.cells.iter().map(|c| c.name.clone()).collect();
    let mut failures = Vec::new();
    let mut jobs: Vec<Job> = Vec::new();
    let mut job_of: HashMap<String, usize> = HashMap::new();
    // (cell index, seed) -> job index
    let mut assignments: BTreeMap<(usize, u64), usize> = BTreeMap::new();
    for (ci, cell) in matrix.cells.iter().enumerate() {
        let base = matrix.train_config(cell).map_err(|m| HarnessError::config("matrix", m))?;
        let privacy = match matrix.privacy_config(cell, &base) {
            Ok(p) => p,
            Err(e) => {
                for &seed in &cell.seeds {
                    failures.push(CellFailure { cell: cell.name.clone(), seed, error: e.to_string() });
                }
                continue;
            }
        };
        for &seed in &cell.seeds {
            let config = TrainConfig { seed, privacy, ..base.clone() };
            let key = serde_json::to_string(&config).expect("config serializes");
            let ji = *job_of.entry(key).or_insert_with(|| {
                jobs.push(Job { config, actions: Vec::new() });
                jobs.len() - 1
            });
            if !jobs[ji].actions.contains(&cell.action) {
                jobs[ji].actions.push(cell.action);
            }
            assignments.insert((ci, seed), ji);
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.jobs {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder.build().map_err(|e| HarnessError::Logs(format!("worker pool: {e}")))?;
    let world = Arc::new(world.clone());
    let eval = Arc::new(matrix.evaluation.clone());
    let jobs = Arc::new(jobs);
    let (tx, rx) = mpsc::channel();
    for ji in 0..jobs.len() {
        let (tx, world, eval, jobs) = (tx.clone(), world.clone(), eval.clone(), jobs.clone());
        pool.spawn(move || {
            let result = run_job(&world, &jobs[ji], &eval);
            let _ = tx.send((ji, result));
        });
    }
    drop(tx);

    // Single collector: logs are written here as trainings finish.
    let mut by_job: Vec<Vec<(usize, u64)>> = vec![Vec::new(); jobs.len()];
    for (&(ci, seed), &ji) in &assignments {
        by_job[ji].push((ci, seed));
    }
    let mut losses: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    let mut visits: BTreeMap<(usize, u64), Vec<f64>> = BTreeMap::new();
    let mut files = Vec::new();
    let mut finished = 0;
    for (ji, result) in rx {
        finished += 1;
        let trained = match result {
            Ok(t) => t,
            Err(e) => {
                for &(ci, seed) in &by_job[ji] {
                    failures.push(CellFailure { cell: matrix.cells[ci].name.clone(), seed, error: e.to_string() });
                }
                continue;
            }
        };
        if options.progress {
            let names: Vec<&str> = by_job[ji].iter().map(|&(ci, _)| matrix.cells[ci].name.as_str()).collect();
            eprintln!(
                "[{finished}/{}] {} seed {}: {:.1} s",
                jobs.len(),
                names.join(","),
                jobs[ji].config.seed,
                trained.seconds
            );
        }
        let trace: Vec<f64> = trained.records.iter().map(|(r, _)| r.mean_loss).collect();
        let fq = final_quartile_mean(&trace);
        for &(ci, seed) in &by_job[ji] {
            let cell = &matrix.cells[ci];
            let report = &trained.evals.iter().find(|(a, _)| *a == cell.action).expect("evaluated").1;
            let header = RunHeader {
                cell: cell.name.clone(),
                seed,
                seeds: cell.seeds.clone(),
                matrix_cells: matrix_cells.clone(),
                privacy_label: cell.privacy_label(),
                sigma: cell.sigma,
                cpt: cell.cpt,
                action: cell.action,
                config: jobs[ji].config.clone(),
                world: (*world).clone(),
                started_unix_ms: trained.started_unix_ms,
            };
            let batches = trained.records.iter().map(|(r, ms)| {
                LogLine::Batch(BatchLine {
                    batch_index: r.batch_index,
                    samples: r.samples,
                    mean_loss: r.mean_loss,
                    variance_loss: r.loss_variance(),
                    obstacle_visits: r.obstacle_visits.clone(),
                    wall_time_ms: *ms,
                })
            });
            let footer = EvalFooter {
                action: cell.action,
                episodes: report.episodes,
                max_steps: eval.max_steps,
                mean_visits: report.mean_visits.clone(),
                success_rate: report.success_rate,
                mean_return: report.mean_return,
                final_quartile_loss: fq,
                lipschitz_bound: trained.lipschitz_bound,
                training_visits: trained.obstacle_visits.clone(),
                finished_unix_ms: unix_ms(),
            };
            let path = out_dir.join(format!("run_{}_seed{seed}.jsonl", cell.name));
            write_jsonl(
                &path,
                std::iter::once(LogLine::Run(header)).chain(batches).chain(std::iter::once(LogLine::Eval(footer))),
            )?;
            files.push(path);
            if options.save_networks {
                let path = out_dir.join("networks").join(format!("{}_seed{seed}.json", cell.name));
                checkpoint::save(&trained.network, &path)?;
                files.push(path);
            }
            losses.insert((ci, seed), trace.clone());
            visits.insert((ci, seed), report.mean_visits.clone());
        }
    }

    failures.sort_by(|a, b| (&a.cell, a.seed).cmp(&(&b.cell, b.seed)));
    let mut failed_by_cell: BTreeMap<&str, Vec<&CellFailure>> = BTreeMap::new();
    for f in &failures {
        failed_by_cell.entry(f.cell.as_str()).or_default().push(f);
    }
    for (name, list) in &failed_by_cell {
        let cell = matrix.cells.iter().find(|c| c.name == *name).expect("known cell");
        let path = out_dir.join(format!("failed_{name}.jsonl"));
        write_jsonl(
            &path,
            list.iter().map(|f| {
                LogLine::Failure(FailureLine {
                    cell: f.cell.clone(),
                    seed: f.seed,
                    seeds: cell.seeds.clone(),
                    matrix_cells: matrix_cells.clone(),
                    privacy_label: cell.privacy_label(),
                    cpt: cell.cpt,
                    action: cell.action,
                    error: f.error.clone(),
                })
            }),
        )?;
        files.push(path);
    }

    for (ci, cell) in matrix.cells.iter().enumerate() {
        let traces: Vec<&Vec<f64>> = losses.range((ci, 0)..=(ci, u64::MAX)).map(|(_, t)| t).collect();
        if traces.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("loss_{}.csv", cell.name));
        let mut w = csv_writer(&path)?;
        w.write_record(["batch", "mean_loss", "variance_loss", "runs"]).map_err(|e| csv_error(&path, e))?;
        let batches = traces.iter().map(|t| t.len()).min().unwrap_or(0);
        for b in 0..batches {
            let column: Vec<f64> = traces.iter().map(|t| t[b]).collect();
            let (mean, var) = mean_and_variance(&column);
            w.write_record([b.to_string(), fmt(mean), fmt(var), traces.len().to_string()])
                .map_err(|e| csv_error(&path, e))?;
        }
        w.flush().map_err(|e| HarnessError::io(&path, e))?;
        files.push(path);
    }

    let path = out_dir.join("table.csv");
    write_table(&path, matrix, world.obstacles.len(), &visits)?;
    files.push(path);

    Ok(RunSummary { completed: visits.len(), trainings: jobs.len(), failures, files })
}

/// Orders privacy labels from the largest noise scale down to `NoDP`.
pub(crate) fn privacy_order(sigma: Option<f64>) -> (u8, f64) {
    match sigma {
        Some(s) => (0, -s),
        None => (1, 0.0),
    }
}

fn write_table(
    path: &Path,
    matrix: &ExperimentMatrix,
    obstacles: usize,
    visits: &BTreeMap<(usize, u64), Vec<f64>>,
) -> Result<()> {
    let mut rows: Vec<(usize, Option<f64>, String)> = Vec::new();
    for cell in &matrix.cells {
        let row = (action_index(cell.action), cell.sigma, cell.privacy_label());
        if !rows.iter().any(|r| r.0 == row.0 && r.2 == row.2) {
            rows.push(row);
        }
    }
    rows.sort_by(|a, b| {
        (a.0, privacy_order(a.1))
            .partial_cmp(&(b.0, privacy_order(b.1)))
            .expect("sigma is finite")
    });

    let mut w = csv_writer(path)?;
    let mut header = vec!["action".to_string(), "privacy".to_string()];
    for prefix in ["cpt", "nocpt"] {
        header.extend((1..=obstacles).map(|i| format!("{prefix}_obs{i}")));
    }
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for (action, _, label) in rows {
        let mut record = vec![["MaxQ", "RandQ"][action].to_string(), label.clone()];
        for mode in [CptMode::Cpt, CptMode::Expectation] {
            let cell = matrix
                .cells
                .iter()
                .position(|c| action_index(c.action) == action && c.privacy_label() == label && c.cpt == mode);
            let per_seed: Vec<&Vec<f64>> = match cell {
                Some(ci) => visits.range((ci, 0)..=(ci, u64::MAX)).map(|(_, v)| v).collect(),
                None => Vec::new(),
            };
            for i in 0..obstacles {
                if per_seed.is_empty() {
                    record.push(String::new());
                } else {
                    let column: Vec<f64> = per_seed.iter().map(|v| v[i]).collect();
                    record.push(fmt(mean_and_variance(&column).0));
                }
            }
        }
        w.write_record(&record).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}
