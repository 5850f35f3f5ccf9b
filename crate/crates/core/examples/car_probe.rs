//! Scratch probe for the car scenario. Prints per-step progress so solver
//! behavior is visible while tuning.

use sempc::mpc::Mode;
use sempc::sim::{car_partially_unknown, run_closed_loop, RunOptions};

fn main() {
    let mode = match std::env::args().nth(1).as_deref() {
        Some("no9j") => Mode::ProposedWithout9j,
        Some("baseline") => Mode::Baseline,
        _ => Mode::Proposed,
    };
    let steps: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(60);
    let scenario = car_partially_unknown();
    let t0 = std::time::Instant::now();
    let result = run_closed_loop(
        &scenario,
        &RunOptions {
            mode: Some(mode),
            max_steps: Some(steps),
            ..Default::default()
        },
    )
    .unwrap();
    for log in &result.logs {
        if log.t % 5 == 0 || log.t + 1 == result.logs.len() {
            println!(
                "t={:3} x=({:7.3},{:7.3}) v={:6.3} u=({:6.2},{:6.3}) S={:9.4} F^={} F*={:9.4} rB=({:6.2},{:6.2}) status={:?} {:.0}ms",
                log.t,
                log.x[0],
                log.x[1],
                log.x[3],
                log.u[0],
                log.u[1],
                log.s,
                log.f_hat.map_or("inf".into(), |v| format!("{v:9.4}")),
                log.f_star,
                log.solution.pair.backup_setpoint.x[0],
                log.solution.pair.backup_setpoint.x[1],
                log.solution.solver_status,
                log.wall_ms,
            );
        }
    }
    println!(
        "outcome: {:?}, final output ({:.4}, {:.4}), {} steps, {:.1}s total",
        result.outcome,
        result.final_output[0],
        result.final_output[1],
        result.logs.len(),
        t0.elapsed().as_secs_f64()
    );
}
