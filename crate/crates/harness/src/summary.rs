//! Summaries of a run directory.
//!
//! Reads every `*.jsonl` log, checks that each cell and seed named by the
//! logs either completed or failed explicitly, and reports per-cell means
//! and variances over seeds with trend flags:
//!
//! * for each action mode and privacy level with both objectives, CPT
//!   agents visit the highest-penalty obstacle less often than
//!   expected-value agents;
//! * for each action mode and objective, final-quartile loss decreases
//!   strictly between consecutive noise levels (`DP-5 > DP-1`) and weakly
//!   from the smallest noise level to `NoDP` (`DP-1 >= NoDP`).
//!
//! An informational flag also records whether the smallest noise level
//! lies within one pooled standard deviation of `NoDP`.
//!
//! Writes `summary.csv` (`cell,privacy,objective,action,runs,failed,
//! final_quartile_loss_mean,final_quartile_loss_var,success_mean,
//! obs1_mean,obs1_var,...`) and `trends.csv`
//! (`trend,asserted,holds,left,right`) next to the logs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ppcpt_core::{ActionMode, CptMode};

use crate::error::{HarnessError, Result};
use crate::matrix::action_index;
use crate::run::{mean_and_variance, privacy_order, EvalFooter, FailureLine, LogLine, RunHeader};

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats {
    pub cell: String,
    pub privacy_label: String,
    pub sigma: Option<f64>,
    pub cpt: CptMode,
    pub action: ActionMode,
    pub runs: usize,
    pub failed: usize,
    pub loss_mean: f64,
    pub loss_var: f64,
    pub success_mean: f64,
    pub visits_mean: Vec<f64>,
    pub visits_var: Vec<f64>,
    /// Index of the obstacle with the largest penalty.
    pub worst_obstacle: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendFlag {
    pub name: String,
    /// Checked by `--assert-trends`.
    pub asserted: bool,
    pub holds: bool,
    pub left: f64,
    pub right: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub cells: Vec<CellStats>,
    pub trends: Vec<TrendFlag>,
    pub failures: Vec<FailureLine>,
}

impl Summary {
    /// True when at least one asserted flag exists and all of them hold.
    pub fn asserted_trends_hold(&self) -> bool {
        let asserted: Vec<&TrendFlag> = self.trends.iter().filter(|t| t.asserted).collect();
        !asserted.is_empty() && asserted.iter().all(|t| t.holds)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>5} {:>14} {:>12} {:>8}  visits", "cell", "runs", "loss (fq)", "loss var", "success");
        for c in &self.cells {
            let visits: Vec<String> = c.visits_mean.iter().map(|v| format!("{v:.3}")).collect();
            let _ = writeln!(
                out,
                "{:<24} {:>5} {:>14.4} {:>12.4} {:>8.3}  [{}]",
                c.cell,
                c.runs,
                c.loss_mean,
                c.loss_var,
                c.success_mean,
                visits.join(", ")
            );
        }
        if !self.failures.is_empty() {
            let _ = writeln!(out, "\nfailed runs:");
            for f in &self.failures {
                let _ = writeln!(out, "  {} seed {}: {}", f.cell, f.seed, f.error);
            }
        }
        let _ = writeln!(out, "\ntrends:");
        if self.trends.is_empty() {
            let _ = writeln!(out, "  none computable from these cells");
        }
        for t in &self.trends {
            let status = if t.holds { "yes" } else { "NO" };
            let kind = if t.asserted { "" } else { " (info)" };
            let _ = writeln!(out, "  [{status}] {}{kind}: {} vs {}", t.name, t.left, t.right);
        }
        out
    }
}

struct CompletedRun {
    header: RunHeader,
    footer: EvalFooter,
}

fn read_log(path: &Path, runs: &mut Vec<CompletedRun>, failures: &mut Vec<FailureLine>) -> Result<()> {
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut header = None;
    let mut footer = None;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HarnessError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| HarnessError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        match parsed {
            LogLine::Run(h) => header = Some(h),
            LogLine::Eval(f) => footer = Some(f),
            LogLine::Failure(f) => failures.push(f),
            LogLine::Batch(_) => {}
        }
    }
    if let (Some(header), Some(footer)) = (header, footer) {
        runs.push(CompletedRun { header, footer });
    }
    Ok(())
}

/// Reads the logs in `dir`, writes `summary.csv` and `trends.csv` there
/// and returns the summary.
pub fn summarize(dir: &Path) -> Result<Summary> {
    let summary = summarize_logs(dir)?;
    write_csvs(dir, &summary)?;
    Ok(summary)
}

/// As [`summarize`] without writing files.
pub fn summarize_logs(dir: &Path) -> Result<Summary> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    paths.sort();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for p in &paths {
        read_log(p, &mut runs, &mut failures)?;
    }
    if runs.is_empty() && failures.is_empty() {
        return Err(HarnessError::Logs(format!("no run logs in {}: found 0 runs", dir.display())));
    }

    // Expected cells and seeds as recorded by the logs themselves.
    let mut order: Vec<String> = Vec::new();
    let mut expected: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    let mut seen: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
    let mut record = |cells: &[String], cell: &str, seeds: &[u64], seed: u64| {
        for c in cells {
            if !order.contains(c) {
                order.push(c.clone());
            }
        }
        expected.entry(cell.to_string()).or_default().extend(seeds);
        seen.entry(cell.to_string()).or_default().insert(seed);
    };
    for r in &runs {
        record(&r.header.matrix_cells, &r.header.cell, &r.header.seeds, r.header.seed);
    }
    for f in &failures {
        record(&f.matrix_cells, &f.cell, &f.seeds, f.seed);
    }
    let mut missing = Vec::new();
    for cell in &order {
        match (expected.get(cell), seen.get(cell)) {
            (Some(want), Some(have)) => {
                let absent: Vec<u64> = want.difference(have).copied().collect();
                if !absent.is_empty() {
                    missing.push(format!("{cell} (seeds {absent:?})"));
                }
            }
            _ => missing.push(format!("{cell} (no logs)")),
        }
    }
    if !missing.is_empty() {
        return Err(HarnessError::Logs(format!(
            "missing runs in {}: {}",
            dir.display(),
            missing.join(", ")
        )));
    }

    let mut cells = Vec::new();
    for name in &order {
        let mut mine: Vec<&CompletedRun> = runs.iter().filter(|r| &r.header.cell == name).collect();
        mine.sort_by_key(|r| r.header.seed);
        let failed = failures.iter().filter(|f| &f.cell == name).count();
        let Some(first) = mine.first() else {
            continue;
        };
        let losses: Vec<f64> = mine.iter().map(|r| r.footer.final_quartile_loss).collect();
        let successes: Vec<f64> = mine.iter().map(|r| r.footer.success_rate).collect();
        let obstacles = first.footer.mean_visits.len();
        let (mut visits_mean, mut visits_var) = (Vec::new(), Vec::new());
        for i in 0..obstacles {
            let column: Vec<f64> = mine.iter().map(|r| r.footer.mean_visits[i]).collect();
            let (m, v) = mean_and_variance(&column);
            visits_mean.push(m);
            visits_var.push(v);
        }
        let (loss_mean, loss_var) = mean_and_variance(&losses);
        let penalties: Vec<f64> = first.header.world.obstacles.iter().map(|o| o.penalty).collect();
        let worst_obstacle = (0..penalties.len()).fold(0, |best, i| if penalties[i] > penalties[best] { i } else { best });
        cells.push(CellStats {
            cell: name.clone(),
            privacy_label: first.header.privacy_label.clone(),
            sigma: first.header.sigma,
            cpt: first.header.cpt,
            action: first.header.action,
            runs: mine.len(),
            failed,
            loss_mean,
            loss_var,
            success_mean: mean_and_variance(&successes).0,
            visits_mean,
            visits_var,
            worst_obstacle,
        });
    }

    let trends = trend_flags(&cells);
    failures.sort_by(|a, b| (&a.cell, a.seed).cmp(&(&b.cell, b.seed)));
    Ok(Summary { cells, trends, failures })
}

fn objective_name(mode: CptMode) -> &'static str {
    match mode {
        CptMode::Cpt => "CPT",
        CptMode::Expectation => "NoCPT",
    }
}

fn action_name(mode: ActionMode) -> &'static str {
    ["MaxQ", "RandQ"][action_index(mode)]
}

/// Pooled standard deviation of two groups from their sample variances.
pub fn pooled_sd(n1: usize, var1: f64, n2: usize, var2: f64) -> f64 {
    if n1 + n2 <= 2 {
        return 0.0;
    }
    let (a, b) = ((n1.max(1) - 1) as f64, (n2.max(1) - 1) as f64);
    ((a * var1 + b * var2) / (a + b)).sqrt()
}

pub fn trend_flags(cells: &[CellStats]) -> Vec<TrendFlag> {
    let mut flags = Vec::new();
    let mut actions: Vec<ActionMode> = cells.iter().map(|c| c.action).collect();
    actions.sort_by_key(|&a| action_index(a));
    actions.dedup();

    for &action in &actions {
        let mut levels: Vec<(Option<f64>, String)> = Vec::new();
        for c in cells.iter().filter(|c| c.action == action) {
            if !levels.iter().any(|l| l.1 == c.privacy_label) {
                levels.push((c.sigma, c.privacy_label.clone()));
            }
        }
        levels.sort_by(|a, b| privacy_order(a.0).partial_cmp(&privacy_order(b.0)).expect("finite sigma"));

        for (_, label) in &levels {
            let find = |mode| cells.iter().find(|c| c.action == action && &c.privacy_label == label && c.cpt == mode);
            if let (Some(cpt), Some(ev)) = (find(CptMode::Cpt), find(CptMode::Expectation)) {
                let j = cpt.worst_obstacle;
                flags.push(TrendFlag {
                    name: format!("{} {label}: CPT obs{} visits < NoCPT", action_name(action), j + 1),
                    asserted: true,
                    holds: cpt.visits_mean[j] < ev.visits_mean[j],
                    left: cpt.visits_mean[j],
                    right: ev.visits_mean[j],
                });
            }
        }

        for mode in [CptMode::Cpt, CptMode::Expectation] {
            let chain: Vec<&CellStats> = levels
                .iter()
                .filter_map(|(_, label)| {
                    cells.iter().find(|c| c.action == action && &c.privacy_label == label && c.cpt == mode)
                })
                .collect();
            for pair in chain.windows(2) {
                let (hi, lo) = (pair[0], pair[1]);
                let strict = lo.sigma.is_some();
                let holds = if strict { hi.loss_mean > lo.loss_mean } else { hi.loss_mean >= lo.loss_mean };
                let op = if strict { ">" } else { ">=" };
                flags.push(TrendFlag {
                    name: format!(
                        "{} {}: loss {} {op} {}",
                        action_name(action),
                        objective_name(mode),
                        hi.privacy_label,
                        lo.privacy_label
                    ),
                    asserted: true,
                    holds,
                    left: hi.loss_mean,
                    right: lo.loss_mean,
                });
                if !strict {
                    let sd = pooled_sd(hi.runs, hi.loss_var, lo.runs, lo.loss_var);
                    flags.push(TrendFlag {
                        name: format!(
                            "{} {}: |loss {} - {}| <= pooled sd {sd}",
                            action_name(action),
                            objective_name(mode),
                            hi.privacy_label,
                            lo.privacy_label
                        ),
                        asserted: false,
                        holds: (hi.loss_mean - lo.loss_mean).abs() <= sd,
                        left: hi.loss_mean,
                        right: lo.loss_mean,
                    });
                }
            }
        }
    }
    flags
}

fn write_csvs(dir: &Path, summary: &Summary) -> Result<()> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |e: csv::Error| HarnessError::Logs(format!("{}: {e}", path.display()))
    };
    let path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
    let obstacles = summary.cells.iter().map(|c| c.visits_mean.len()).max().unwrap_or(0);
    let mut header: Vec<String> = [
        "cell",
        "privacy",
        "objective",
        "action",
        "runs",
        "failed",
        "final_quartile_loss_mean",
        "final_quartile_loss_var",
        "success_mean",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for i in 1..=obstacles {
        header.push(format!("obs{i}_mean"));
        header.push(format!("obs{i}_var"));
    }
    w.write_record(&header).map_err(io(&path))?;
    for c in &summary.cells {
        let mut row = vec![
            c.cell.clone(),
            c.privacy_label.clone(),
            objective_name(c.cpt).to_string(),
            action_name(c.action).to_string(),
            c.runs.to_string(),
            c.failed.to_string(),
            c.loss_mean.to_string(),
            c.loss_var.to_string(),
            c.success_mean.to_string(),
        ];
        for (m, v) in c.visits_mean.iter().zip(&c.visits_var) {
            row.push(m.to_string());
            row.push(v.to_string());
        }
        w.write_record(&row).map_err(io(&path))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))?;

    let path = dir.join("trends.csv");
    let mut w = csv::Writer::from_path(&path).map_err(io(&path))?;
    w.write_record(["trend", "asserted", "holds", "left", "right"]).map_err(io(&path))?;
    for t in &summary.trends {
        w.write_record([t.name.clone(), t.asserted.to_string(), t.holds.to_string(), t.left.to_string(), t.right.to_string()])
            .map_err(io(&path))?;
    }
    w.flush().map_err(|e| HarnessError::io(&path, e))
}
