use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::numerics::{load_params, save_params};
use crate::policy_rl::PolicyNet;
use crate::reward_model::{RewardNet, RmSidecar};
use crate::synth_env::FeatureMap;

const MANIFEST: &str = "manifest.json";

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "ADVRM_OUT";

/// Completed stages of one run directory, tied to the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub seed: u64,
    pub config_digest: String,
    pub completed: BTreeSet<String>,
}

fn digest(text: &str) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// Directory holding every artifact of one `(config, seed)` run.
#[derive(Debug)]
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Opens `out/seed-<seed>`, creating it when needed. Refuses directories
    /// written under a different configuration.
    pub fn open(out: &Path, config: &ExperimentConfig) -> Result<Self> {
        let root = out.join(format!("seed-{}", config.seed));
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let text = config.to_toml();
        let config_digest = digest(&text);
        let path = root.join(MANIFEST);
        let manifest = if path.exists() {
            let m: RunManifest = read_json(&path)?;
            if m.config_digest != config_digest {
                return Err(Error::state(format!(
                    "{} was produced with a different configuration; choose another --out or delete it",
                    root.display()
                )));
            }
            m
        } else {
            RunManifest {
                seed: config.seed,
                config_digest,
                completed: BTreeSet::new(),
            }
        };
        let dir = Self { root, manifest };
        dir.write("config.toml", &text)?;
        dir.save_manifest()?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn is_done(&self, stage: &str) -> bool {
        self.manifest.completed.contains(stage)
    }

    pub fn mark(&mut self, stage: &str) -> Result<()> {
        self.manifest.completed.insert(stage.to_string());
        self.save_manifest()
    }

    fn save_manifest(&self) -> Result<()> {
        write_json(&self.path(MANIFEST), &self.manifest)
    }

    /// Path of an artifact produced by `stage`, or an error naming that stage.
    pub fn require(&self, stage: &str, name: &str) -> Result<PathBuf> {
        let path = self.path(name);
        if !self.is_done(stage) || !path.exists() {
            return Err(Error::MissingArtifact {
                path,
                stage: stage.to_string(),
            });
        }
        Ok(path)
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    pub fn read(&self, stage: &str, name: &str) -> Result<String> {
        let path = self.require(stage, name)?;
        fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        write_json(&self.path(name), value)
    }

    pub fn read_json<T: DeserializeOwned>(&self, stage: &str, name: &str) -> Result<T> {
        read_json(&self.require(stage, name)?)
    }

    pub fn save_policy(&self, name: &str, policy: &PolicyNet) -> Result<()> {
        self.write_json(name, policy)
    }

    pub fn load_policy(&self, stage: &str, name: &str) -> Result<PolicyNet> {
        let policy: PolicyNet = self.read_json(stage, name)?;
        PolicyNet::new(policy.spec().clone(), policy.params().clone()).map(|_| policy)
    }

    /// Writes `<stem>.params.json` and `<stem>.sidecar.json`.
    pub fn save_rm(&self, stem: &str, rm: &RewardNet) -> Result<()> {
        save_params(&self.path(&format!("{stem}.params.json")), rm.params())?;
        self.write_json(&format!("{stem}.sidecar.json"), &rm.sidecar())
    }

    pub fn load_rm(&self, stage: &str, stem: &str, features: Arc<FeatureMap>) -> Result<RewardNet> {
        let params = load_params(&self.require(stage, &format!("{stem}.params.json"))?)?;
        let sidecar: RmSidecar = self.read_json(stage, &format!("{stem}.sidecar.json"))?;
        RewardNet::from_parts(features, params, &sidecar)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("artifact serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_stage_names_the_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = RunDir::open(tmp.path(), &ExperimentConfig::default()).unwrap();
        match dir.require("gen-world", "sft.json") {
            Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "gen-world"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_change_is_refused() {
        let tmp = tempfile::tempdir().unwrap();
        let mut c = ExperimentConfig::default();
        let mut dir = RunDir::open(tmp.path(), &c).unwrap();
        dir.mark("gen-world").unwrap();
        assert!(RunDir::open(tmp.path(), &c).unwrap().is_done("gen-world"));
        c.attack.lambda = 12.0;
        assert!(RunDir::open(tmp.path(), &c).is_err());
    }
}
