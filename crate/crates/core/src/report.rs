//! CSV and JSON outputs. Every file is a pure function of its inputs and is
//! written through a temporary file and a rename.
//!
//! Floating-point fields carry 9 significant digits; unreached times print as
//! an empty CSV field or JSON `null`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::{json, Map, Value};

use crate::config::SimulationConfig;
use crate::domain::RoundRecord;
use crate::error::Result;
use crate::experiment::{AlphaSweep, Arm, Comparison, OracleRow};
use crate::sim::SimulationOutcome;

/// Rounds `x` to 9 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// `x` with 9 significant digits, shortest form, no exponent for ordinary magnitudes.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let r = round_sig(x);
    let a = r.abs();
    if a != 0.0 && !(1e-6..1e15).contains(&a) {
        format!("{r:e}")
    } else {
        format!("{r}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

fn num(x: f64) -> Value {
    serde_json::Number::from_f64(round_sig(x)).map_or(Value::Null, Value::Number)
}

fn opt_num(x: Option<f64>) -> Value {
    x.map_or(Value::Null, num)
}

/// Writes `contents` to `path` via a sibling temporary file and rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Fixed leading columns of rounds.csv; three columns per model follow:
/// `<model>_accuracy`, `<model>_participants`, `<model>_mean_batch`.
pub const ROUND_COLUMNS: [&str; 13] = [
    "round",
    "skipped",
    "elapsed",
    "cumulative_time",
    "deadline",
    "percentile",
    "active_models",
    "participants",
    "pairs",
    "fresh_pairs",
    "objective_value",
    "relaxed",
    "mean_idle_fraction",
];

pub fn rounds_csv(records: &[RoundRecord], models: &[String]) -> String {
    let mut out = ROUND_COLUMNS.join(",");
    for m in models {
        write!(out, ",{m}_accuracy,{m}_participants,{m}_mean_batch").unwrap();
    }
    out.push('\n');
    for r in records {
        write!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.round,
            r.skipped,
            fmt_sig(r.elapsed),
            fmt_sig(r.cumulative_time),
            fmt_sig(r.deadline),
            fmt_sig(r.percentile),
            r.active_models,
            r.participants(),
            r.plans.len(),
            r.objective.fresh_pairs,
            fmt_sig(r.objective.value),
            r.relaxed,
            fmt_sig(r.mean_idle_fraction()),
        )
        .unwrap();
        for m in &r.models {
            write!(
                out,
                ",{},{},{}",
                fmt_sig(m.accuracy),
                m.participants,
                fmt_sig(m.mean_batch)
            )
            .unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn summary_json(out: &SimulationOutcome, cfg: &SimulationConfig) -> Result<String> {
    let mut models = Map::new();
    for m in &out.models {
        models.insert(
            m.model.to_string(),
            json!({
                "target_accuracy": num(m.target_accuracy),
                "reached": m.time_to_accuracy.is_some(),
                "time_to_accuracy": opt_num(m.time_to_accuracy),
                "rounds_to_accuracy": m.rounds_to_accuracy,
                "final_accuracy": num(m.final_accuracy),
            }),
        );
    }
    let config: Value =
        serde_json::to_value(cfg).map_err(|e| crate::error::config(e.to_string()))?;
    let doc = json!({
        "seed": out.seed,
        "rounds": out.rounds,
        "total_time": num(out.total_time),
        "mean_idle_fraction": num(out.mean_idle_fraction),
        "time_to_accuracy": Value::Object(models.iter().map(|(k, v)| (k.clone(), v["time_to_accuracy"].clone())).collect()),
        "models": Value::Object(models),
        "config": config,
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("json value serializes");
    text.push('\n');
    Ok(text)
}

/// Writes rounds.csv and summary.json into `dir`.
pub fn write_run(dir: &Path, out: &SimulationOutcome, cfg: &SimulationConfig) -> Result<()> {
    let models: Vec<String> = cfg.models.iter().map(|m| m.id.to_string()).collect();
    write_atomic(&dir.join("rounds.csv"), &rounds_csv(&out.records, &models))?;
    write_atomic(&dir.join("summary.json"), &summary_json(out, cfg)?)
}

pub const COMPARISON_COLUMNS: &str =
    "arm,seed,model,time_to_accuracy,rounds_to_accuracy,final_accuracy,flammable_time_to_accuracy,speedup,mean_idle_fraction";

/// Per-(arm, seed, model) rows. `speedup` is the arm's time over the flammable
/// arm's time; it is empty when the flammable arm did not reach the target or
/// was not run.
pub fn comparison_csv(c: &Comparison) -> String {
    let mut out = format!("{COMPARISON_COLUMNS}\n");
    for runs in &c.arms {
        for (k, o) in runs.outcomes.iter().enumerate() {
            for (j, m) in o.models.iter().enumerate() {
                let reference = c
                    .runs(Arm::Flammable)
                    .map(|f| f.outcomes[k].models[j].time_to_accuracy);
                let speedup = c.speedups(runs.arm, j).and_then(|s| s[k]);
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    runs.arm,
                    o.seed,
                    m.model,
                    opt(m.time_to_accuracy),
                    m.rounds_to_accuracy
                        .map(|r| r.to_string())
                        .unwrap_or_default(),
                    fmt_sig(m.final_accuracy),
                    opt(reference.flatten()),
                    opt(speedup),
                    fmt_sig(o.mean_idle_fraction),
                )
                .unwrap();
            }
        }
    }
    out
}

pub const COMPARISON_SUMMARY_COLUMNS: &str =
    "arm,model,median_time_to_accuracy,median_speedup,median_idle_fraction";

/// Lower medians over seeds, one row per (arm, model).
pub fn comparison_summary_csv(c: &Comparison) -> String {
    let mut out = format!("{COMPARISON_SUMMARY_COLUMNS}\n");
    for runs in &c.arms {
        for (j, model) in c.models.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                runs.arm,
                model,
                opt(c.median_tta(runs.arm, j)),
                opt(c.median_speedup(runs.arm, j)),
                opt(c.median_idle(runs.arm)),
            )
            .unwrap();
        }
    }
    out
}

pub const ALPHA_COLUMNS: &str = "alpha,seed,model,time_to_accuracy,final_accuracy";

pub fn alpha_csv(s: &AlphaSweep) -> String {
    let mut out = format!("{ALPHA_COLUMNS}\n");
    for r in &s.rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            fmt_sig(r.alpha),
            r.seed,
            r.model,
            opt(r.time_to_accuracy),
            fmt_sig(r.final_accuracy)
        )
        .unwrap();
    }
    out
}

pub const ORACLE_COLUMNS: &str = "instance_id,n,m,objective_exact,objective_oracle,equal";

pub fn oracle_csv(rows: &[OracleRow]) -> String {
    let mut out = format!("{ORACLE_COLUMNS}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.instance_id, r.clients, r.models, r.objective_exact, r.objective_oracle, r.equal
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::run_simulation;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig(0.1), "0.1");
        assert_eq!(fmt_sig(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig(123456.7891234), "123456.789");
        assert_eq!(fmt_sig(2.0), "2");
        assert_eq!(fmt_sig(0.0), "0");
        assert_eq!(fmt_sig(f64::INFINITY), "inf");
        assert_eq!(fmt_sig(1.5e-9), "1.5e-9");
        assert_eq!(fmt_sig(-2.25), "-2.25");
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_atomic(&p, "a\n").unwrap();
        write_atomic(&p, "b\n").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "b\n");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn rounds_csv_shape() {
        let mut cfg = SimulationConfig::default();
        cfg.scenario.clients = 20;
        cfg.selection.per_model_clients = 2;
        cfg.rounds_cap = 5;
        let out = run_simulation(cfg.clone()).unwrap();
        let models: Vec<String> = cfg.models.iter().map(|m| m.id.to_string()).collect();
        let csv = rounds_csv(&out.records, &models);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 6);
        let width = ROUND_COLUMNS.len() + 3 * models.len();
        assert!(lines.iter().all(|l| l.split(',').count() == width));
        assert!(lines[0].ends_with("mobilenet_mean_batch"));

        let summary: Value = serde_json::from_str(&summary_json(&out, &cfg).unwrap()).unwrap();
        assert_eq!(summary["seed"], 1);
        assert!(summary["time_to_accuracy"].get("cnn").is_some());
        assert_eq!(summary["config"]["rounds_cap"], 5);
    }
}
