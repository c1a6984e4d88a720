//! Device profiles and client rosters: JSON loading and seeded generation.

use std::collections::BTreeMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{ModelSpec, SimulationConfig};
use crate::domain::{ClientId, DeviceKind, DeviceProfile, ModelId, ThroughputCurve};
use crate::error::{config, Error, Result};
use crate::rng::{stream, Stream};

/// One profiled curve as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileEntry {
    pub device_kind: DeviceKind,
    pub model_id: ModelId,
    pub points: Vec<(u32, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileSet {
    profiles: BTreeMap<DeviceKind, DeviceProfile>,
}

impl ProfileSet {
    pub fn from_entries(entries: Vec<ProfileEntry>) -> Result<Self> {
        let mut profiles: BTreeMap<DeviceKind, DeviceProfile> = BTreeMap::new();
        for (k, e) in entries.into_iter().enumerate() {
            let curve = ThroughputCurve::new(e.points)
                .map_err(|err| config(format!("profiles[{k}]: {err}")))?;
            let profile = profiles
                .entry(e.device_kind)
                .or_insert_with(|| DeviceProfile::new(e.device_kind));
            if profile.insert(e.model_id.clone(), curve).is_some() {
                return Err(config(format!(
                    "profiles[{k}]: duplicate curve for ({}, {})",
                    e.device_kind, e.model_id
                )));
            }
        }
        Ok(Self { profiles })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let entries: Vec<ProfileEntry> =
            serde_json::from_str(&text).map_err(|err| Error::Json {
                path: path.to_path_buf(),
                err,
            })?;
        Self::from_entries(entries)
    }

    pub fn entries(&self) -> Vec<ProfileEntry> {
        self.profiles
            .values()
            .flat_map(|p| {
                p.curves().map(|(id, c)| ProfileEntry {
                    device_kind: p.device_kind,
                    model_id: id.clone(),
                    points: c.points().to_vec(),
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries()).expect("profiles serialize")
    }

    pub fn get(&self, kind: DeviceKind) -> Result<&DeviceProfile> {
        self.profiles
            .get(&kind)
            .ok_or_else(|| config(format!("no profile for device kind '{kind}'")))
    }

    /// Every device kind used by the roster must have a curve for every model.
    pub fn check_covers(
        &self,
        kinds: impl IntoIterator<Item = DeviceKind>,
        models: &[ModelId],
    ) -> Result<()> {
        for kind in kinds {
            let p = self.get(kind)?;
            for m in models {
                p.curve(m)?;
            }
        }
        Ok(())
    }
}

/// Throughput at batch 10 for a model of unit cost.
fn base_throughput(kind: DeviceKind) -> f64 {
    match kind {
        DeviceKind::Gpu => 200.0,
        DeviceKind::Cpu => 100.0,
        DeviceKind::Mobile => 50.0,
    }
}

/// Batch size at which the device reaches half of its peak throughput.
fn half_saturation(kind: DeviceKind) -> f64 {
    match kind {
        DeviceKind::Gpu => 200.0,
        DeviceKind::Cpu => 60.0,
        DeviceKind::Mobile => 15.0,
    }
}

pub const PROFILE_BATCHES: [u32; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

/// Profiles for the three device kinds with `theta(m) = peak * m / (m + h)`,
/// scaled by each model's compute cost.
pub fn default_profiles(models: &[ModelSpec]) -> ProfileSet {
    let mut entries = Vec::new();
    for kind in DeviceKind::ALL {
        let h = half_saturation(kind);
        let at10 = 10.0 / (10.0 + h);
        for m in models {
            let points = PROFILE_BATCHES
                .iter()
                .map(|&b| {
                    let shape = f64::from(b) / (f64::from(b) + h) / at10;
                    (b, base_throughput(kind) * shape / m.compute_cost)
                })
                .collect();
            entries.push(ProfileEntry {
                device_kind: kind,
                model_id: m.id.clone(),
                points,
            });
        }
    }
    ProfileSet::from_entries(entries).expect("generated profiles are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub client_id: ClientId,
    pub device_kind: DeviceKind,
    pub datasets: BTreeMap<ModelId, u32>,
    #[serde(default)]
    pub heterogeneity: BTreeMap<ModelId, f64>,
    /// Throughput multiplier relative to the device kind's profile.
    #[serde(default = "unit_speed")]
    pub speed: f64,
}

fn unit_speed() -> f64 {
    1.0
}

pub fn load_roster(path: &Path) -> Result<Vec<RosterEntry>> {
    let text = std::fs::read_to_string(path)?;
    let roster: Vec<RosterEntry> = serde_json::from_str(&text).map_err(|err| Error::Json {
        path: path.to_path_buf(),
        err,
    })?;
    validate_roster(&roster)?;
    Ok(roster)
}

pub fn validate_roster(roster: &[RosterEntry]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for (k, e) in roster.iter().enumerate() {
        if !seen.insert(e.client_id) {
            return Err(config(format!(
                "roster[{k}].client_id: duplicate id {}",
                e.client_id
            )));
        }
        if !(e.speed > 0.0 && e.speed.is_finite()) {
            return Err(config(format!(
                "roster[{k}].speed: must be positive, got {}",
                e.speed
            )));
        }
        if let Some((m, h)) = e
            .heterogeneity
            .iter()
            .find(|(_, h)| !(**h > 0.0 && h.is_finite()))
        {
            return Err(config(format!(
                "roster[{k}].heterogeneity.{m}: must be positive, got {h}"
            )));
        }
    }
    if roster.is_empty() {
        return Err(config("roster is empty"));
    }
    Ok(())
}

/// Seeded roster: device kinds drawn from the configured mix, per-model data
/// shares from a Gamma draw (Dirichlet after normalization), log-normal
/// speed and heterogeneity multipliers.
pub fn generate_roster(cfg: &SimulationConfig) -> Vec<RosterEntry> {
    let mut rng = stream(cfg.seed, Stream::Scenario);
    let sc = &cfg.scenario;
    let n = sc.clients as usize;
    let mix = sc.device_mix;
    let kinds = WeightedIndex::new([mix.gpu, mix.cpu, mix.mobile]).expect("validated mix");
    let devices: Vec<DeviceKind> = (0..n)
        .map(|_| DeviceKind::ALL[kinds.sample(&mut rng)])
        .collect();
    let speeds: Vec<f64> = (0..n)
        .map(|_| (sc.speed_spread * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();

    let gamma = Gamma::new(sc.data_concentration, 1.0).expect("validated concentration");
    let mut datasets = vec![BTreeMap::new(); n];
    let mut heterogeneity = vec![BTreeMap::new(); n];
    for m in &cfg.models {
        let present: Vec<bool> = (0..n).map(|_| rng.random_bool(sc.data_presence)).collect();
        let shares: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
        let total: f64 = shares
            .iter()
            .zip(&present)
            .filter(|(_, &p)| p)
            .map(|(s, _)| s)
            .sum();
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            heterogeneity[i].insert(m.id.clone(), (sc.heterogeneity_spread * z).exp());
            let size = if present[i] && total > 0.0 {
                ((f64::from(m.total_samples) * shares[i] / total).round() as u32).max(1)
            } else {
                0
            };
            datasets[i].insert(m.id.clone(), size);
        }
    }
    (0..n)
        .map(|i| RosterEntry {
            client_id: ClientId(i as u32),
            device_kind: devices[i],
            datasets: std::mem::take(&mut datasets[i]),
            heterogeneity: std::mem::take(&mut heterogeneity[i]),
            speed: speeds[i],
        })
        .collect()
}

/// Profiles plus roster, resolved from files or generated.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub profiles: ProfileSet,
    pub roster: Vec<RosterEntry>,
}

impl Scenario {
    pub fn from_config(cfg: &SimulationConfig) -> Result<Self> {
        let profiles = match &cfg.scenario.profiles {
            Some(p) => ProfileSet::load(p)?,
            None => default_profiles(&cfg.models),
        };
        let roster = match &cfg.scenario.roster {
            Some(p) => load_roster(p)?,
            None => generate_roster(cfg),
        };
        let ids: Vec<ModelId> = cfg.models.iter().map(|m| m.id.clone()).collect();
        let kinds: std::collections::BTreeSet<DeviceKind> =
            roster.iter().map(|e| e.device_kind).collect();
        profiles.check_covers(kinds, &ids)?;
        Ok(Self { profiles, roster })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_profiles_cover_models_and_are_ordered() {
        let cfg = SimulationConfig::default();
        let p = default_profiles(&cfg.models);
        let ids: Vec<ModelId> = cfg.models.iter().map(|m| m.id.clone()).collect();
        p.check_covers(DeviceKind::ALL, &ids).unwrap();
        let cnn = &ids[0];
        let gpu = p.get(DeviceKind::Gpu).unwrap().throughput(cnn, 10).unwrap();
        let cpu = p.get(DeviceKind::Cpu).unwrap().throughput(cnn, 10).unwrap();
        let mobile = p
            .get(DeviceKind::Mobile)
            .unwrap()
            .throughput(cnn, 10)
            .unwrap();
        assert!(gpu > cpu && cpu > mobile);
        assert!((gpu - 200.0).abs() < 1e-9);
    }

    #[test]
    fn profile_json_round_trip() {
        let cfg = SimulationConfig::default();
        let p = default_profiles(&cfg.models);
        let entries: Vec<ProfileEntry> = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(ProfileSet::from_entries(entries).unwrap(), p);
    }

    #[test]
    fn profile_schema_parses_array_points() {
        let json =
            r#"[{"device_kind": "gpu", "model_id": "a", "points": [[10, 100.0], [100, 1000.0]]}]"#;
        let entries: Vec<ProfileEntry> = serde_json::from_str(json).unwrap();
        let set = ProfileSet::from_entries(entries).unwrap();
        assert_eq!(
            set.get(DeviceKind::Gpu)
                .unwrap()
                .throughput(&ModelId::new("a"), 55)
                .unwrap(),
            550.0
        );
        assert!(set.get(DeviceKind::Cpu).is_err());

        let bad = r#"[{"device_kind": "gpu", "model_id": "a", "points": [[10, 100.0]]}]"#;
        let entries: Vec<ProfileEntry> = serde_json::from_str(bad).unwrap();
        assert!(ProfileSet::from_entries(entries).is_err());
    }

    #[test]
    fn roster_generation_is_seeded() {
        let cfg = SimulationConfig::default();
        let a = generate_roster(&cfg);
        let b = generate_roster(&cfg);
        assert_eq!(a, b);
        assert_eq!(a.len(), 200);
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(generate_roster(&other), a);
    }

    #[test]
    fn roster_sizes_sum_to_total() {
        let cfg = SimulationConfig::default();
        let roster = generate_roster(&cfg);
        for m in &cfg.models {
            let total: u32 = roster.iter().map(|e| e.datasets[&m.id]).sum();
            let err = (f64::from(total) - f64::from(m.total_samples)).abs();
            assert!(err < 200.0, "{total}");
            assert!(roster.iter().any(|e| e.datasets[&m.id] == 0));
        }
    }

    #[test]
    fn roster_json_schema() {
        let json = r#"[{"client_id": 3, "device_kind": "mobile", "datasets": {"a": 12, "b": 0}, "heterogeneity": {"a": 1.2}}]"#;
        let r: Vec<RosterEntry> = serde_json::from_str(json).unwrap();
        validate_roster(&r).unwrap();
        assert_eq!(r[0].client_id, ClientId(3));
        let dup = r#"[{"client_id": 1, "device_kind": "gpu", "datasets": {}}, {"client_id": 1, "device_kind": "cpu", "datasets": {}}]"#;
        let r: Vec<RosterEntry> = serde_json::from_str(dup).unwrap();
        assert!(validate_roster(&r).is_err());
        let r: Vec<RosterEntry> = serde_json::from_str(
            r#"[{"client_id": 1, "device_kind": "gpu", "datasets": {}, "speed": 2}]"#,
        )
        .unwrap();
        assert_eq!(r[0].speed, 2.0);
        assert_eq!(
            serde_json::from_str::<Vec<RosterEntry>>(json).unwrap()[0].speed,
            1.0
        );
        assert!(serde_json::from_str::<Vec<RosterEntry>>(
            r#"[{"client_id": 1, "device_kind": "gpu", "datasets": {}, "cores": 2}]"#
        )
        .is_err());
    }
}
