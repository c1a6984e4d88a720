use std::collections::BTreeSet;
use std::fs;

use mmfl_core::config::{config_schema, SimulationConfig};
use mmfl_core::experiment::Arm;
use mmfl_core::report;
use mmfl_core::scenario::{default_profiles, generate_roster};
use mmfl_core::sim::run_simulation;
use mmfl_core::Error;

fn small() -> SimulationConfig {
    let mut cfg = SimulationConfig::default();
    cfg.scenario.clients = 50;
    cfg.selection.per_model_clients = 4;
    cfg.rounds_cap = 120;
    cfg
}

#[test]
fn schema_doc_is_current() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/config.schema.json");
    let on_disk = fs::read_to_string(path).expect("docs/config.schema.json exists");
    assert_eq!(
        on_disk.trim_end(),
        config_schema(),
        "regenerate with `mmfl-sim schema --out docs/config.schema.json`"
    );
}

#[test]
fn config_file_with_roster_and_profiles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small();
    let roster = generate_roster(&cfg);
    fs::write(
        dir.path().join("roster.json"),
        serde_json::to_string(&roster).unwrap(),
    )
    .unwrap();
    fs::write(
        dir.path().join("profiles.json"),
        default_profiles(&cfg.models).to_json(),
    )
    .unwrap();
    let path = dir.path().join("cfg.json");
    fs::write(
        &path,
        r#"{"seed": 2, "rounds_cap": 30,
            "scenario": {"roster": "roster.json", "profiles": "profiles.json"},
            "selection": {"per_model_clients": 4}}"#,
    )
    .unwrap();
    let loaded = SimulationConfig::load(&path).unwrap();
    assert_eq!(loaded.seed, 2);
    assert!(loaded.scenario.roster.as_ref().unwrap().is_absolute());
    let out = run_simulation(loaded).unwrap();
    assert_eq!(out.rounds, 30);

    fs::write(&path, r#"{"selection": {"alpha": -1}}"#).unwrap();
    assert!(matches!(
        SimulationConfig::load(&path),
        Err(Error::Config(_))
    ));
    fs::write(&path, "{").unwrap();
    assert!(matches!(
        SimulationConfig::load(&path),
        Err(Error::Json { .. })
    ));
}

#[test]
fn round_invariants_hold_for_every_arm() {
    for arm in Arm::ALL {
        let cfg = arm.configure(&small());
        let out = run_simulation(cfg.clone()).unwrap();
        let mut clock = 0.0;
        let mut best = vec![0.0; cfg.models.len()];
        for r in &out.records {
            assert!(r.elapsed >= 0.0);
            clock += r.elapsed;
            assert!((r.cumulative_time - clock).abs() <= 1e-9 * clock.max(1.0));
            assert!((10.0..=100.0).contains(&r.percentile));
            let idle = r.mean_idle_fraction();
            assert!(
                (0.0..1.0).contains(&idle) || idle == 0.0,
                "{arm}: idle {idle}"
            );
            // one entry per selected client, none beyond the round's wall time
            let ids: BTreeSet<_> = r.clients.iter().map(|c| c.client).collect();
            assert_eq!(ids.len(), r.clients.len());
            for c in &r.clients {
                assert!(c.busy <= r.elapsed * (1.0 + 1e-12));
            }
            for (j, m) in r.models.iter().enumerate() {
                assert!(m.accuracy >= best[j], "{arm}: accuracy fell");
                best[j] = m.accuracy;
            }
            if !cfg.selection.multi_model {
                let mut per_client = std::collections::BTreeMap::new();
                for p in &r.plans {
                    *per_client.entry(p.client).or_insert(0) += 1;
                }
                assert!(
                    per_client.values().all(|&n| n == 1),
                    "{arm}: multi-model engagement"
                );
            }
            if !cfg.batch.adaptation {
                assert!(r.plans.iter().all(|p| p.batch == cfg.batch.initial_batch
                    && p.iterations == cfg.batch.initial_iterations));
            }
        }
        for m in &out.models {
            if let Some(t) = m.time_to_accuracy {
                assert!(t <= out.total_time);
                assert!(m.final_accuracy >= m.target_accuracy);
            }
        }
    }
}

#[test]
fn outputs_depend_only_on_config() {
    let cfg = small();
    let models: Vec<String> = cfg.models.iter().map(|m| m.id.to_string()).collect();
    let render = |c: &SimulationConfig| {
        let out = run_simulation(c.clone()).unwrap();
        (
            report::rounds_csv(&out.records, &models),
            report::summary_json(&out, c).unwrap(),
        )
    };
    let a = render(&cfg);
    assert_eq!(a, render(&cfg));
    let mut other = cfg.clone();
    other.seed = 99;
    assert_ne!(a.0, render(&other).0);
}
