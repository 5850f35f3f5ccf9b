//! Structured run logs and the plot-ready export formats.
//!
//! Logs round-trip losslessly through JSON lines (f64 values print in
//! shortest-roundtrip form), so an exported run replays to the same verdict
//! as the live one.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::environment::KnowledgeState;
use crate::error::Error;
use crate::mpc::MpcSolution;
use crate::sim::scenario::ScenarioConfig;
use crate::Result;

/// One closed-loop step, complete enough to re-verify every run invariant
/// offline.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepLog {
    pub t: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    /// Storage value `S_t` the controller saw at this step.
    pub s: f64,
    /// Backup-cost bound `F_hat_t`; `None` while still unbounded.
    pub f_hat: Option<f64>,
    pub f_star: f64,
    pub objective: f64,
    pub solution: MpcSolution,
    pub newly_discovered: Vec<usize>,
    pub sensed_center: Vec<f64>,
    pub wall_ms: f64,
}

/// Run metadata; carries the full scenario so logs are self-describing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunHeader {
    pub scenario: ScenarioConfig,
    pub seed: u64,
    pub mode: crate::mpc::Mode,
}

pub fn write_run(dir: &Path, header: &RunHeader, logs: &[StepLog]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header_json = serde_json::to_string_pretty(header)
        .map_err(|e| Error::Parse(format!("header serialization: {e}")))?;
    fs::write(dir.join("header.json"), header_json)?;
    let mut out = fs::File::create(dir.join("steps.jsonl"))?;
    for log in logs {
        let line = serde_json::to_string(log)
            .map_err(|e| Error::Parse(format!("step serialization: {e}")))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn read_run(dir: &Path) -> Result<(RunHeader, Vec<StepLog>)> {
    let header: RunHeader = serde_json::from_str(&fs::read_to_string(dir.join("header.json"))?)
        .map_err(|e| Error::Parse(format!("header.json: {e}")))?;
    let file = fs::File::open(dir.join("steps.jsonl"))?;
    let mut logs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let log: StepLog = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("steps.jsonl line {}: {e}", i + 1)))?;
        logs.push(log);
    }
    Ok((header, logs))
}

/// Writes the trajectory CSV and the environment geometry file.
pub fn export_plot_data(dir: &Path, header: &RunHeader, logs: &[StepLog]) -> Result<()> {
    if logs.is_empty() {
        return Err(Error::Config("nothing to export: empty log".into()));
    }
    fs::create_dir_all(dir)?;

    let (n, m, p) = (logs[0].x.len(), logs[0].u.len(), logs[0].y.len());
    let mut csv = String::new();
    csv.push('t');
    for i in 1..=n {
        csv.push_str(&format!(",x{i}"));
    }
    for i in 1..=m {
        csv.push_str(&format!(",u{i}"));
    }
    for i in 1..=p {
        csv.push_str(&format!(",y{i}"));
    }
    csv.push_str(",S,F_hat,F_star\n");
    for log in logs {
        csv.push_str(&log.t.to_string());
        for v in log.x.iter().chain(&log.u).chain(&log.y) {
            csv.push_str(&format!(",{v}"));
        }
        let f_hat = log
            .f_hat
            .map_or("inf".to_string(), |v| v.to_string());
        csv.push_str(&format!(",{},{},{}\n", log.s, f_hat, log.f_star));
    }
    fs::write(dir.join("trajectory.csv"), csv)?;

    let mut geo = String::new();
    match header.scenario.build()?.knowledge {
        KnowledgeState::Continuous(k) => {
            for (i, ob) in k.obstacles.iter().enumerate() {
                geo.push_str(&format!(
                    "obstacle,{i},{},{},{}\n",
                    ob.center[0], ob.center[1], ob.radius
                ));
            }
            for log in logs {
                geo.push_str(&format!(
                    "sensed,{},{},{},{}\n",
                    log.t, log.sensed_center[0], log.sensed_center[1], k.sense_radius
                ));
            }
        }
        KnowledgeState::Finite(k) => {
            for (i, cells) in k.obstacle_cells.iter().enumerate() {
                for c in cells {
                    let coords: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                    geo.push_str(&format!("obstacle_cell,{i},{}\n", coords.join(",")));
                }
            }
            if let Some(h) = k.sense_radius {
                for log in logs {
                    let coords: Vec<String> =
                        log.sensed_center.iter().map(|v| v.to_string()).collect();
                    geo.push_str(&format!("sensed,{},{},{h}\n", log.t, coords.join(",")));
                }
            }
        }
    }
    fs::write(dir.join("geometry.txt"), geo)?;
    Ok(())
}
