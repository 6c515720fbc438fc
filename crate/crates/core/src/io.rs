//! Artifact files: a JSON payload wrapped with a manifest recording the
//! environment it was built for, the config hash, the seed and the version.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dqn::{MlpNetwork, TrainingLog};
use crate::error::{Error, Result};
use crate::parametric::MdpFamily;
use crate::pool::PolicyPool;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Pool,
    Dqn,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ArtifactKind,
    pub format_version: u32,
    pub crate_version: String,
    /// SHA-256 of the environment description.
    pub env_hash: String,
    /// SHA-256 of the full run config.
    pub config_hash: String,
    pub seed: u64,
}

impl Manifest {
    pub fn new(kind: ArtifactKind, family: &dyn MdpFamily, config_hash: String, seed: u64) -> Result<Self> {
        Ok(Self {
            kind,
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            env_hash: env_hash(family)?,
            config_hash,
            seed,
        })
    }

    /// Fails unless the artifact was built for `family`.
    pub fn check_environment(&self, family: &dyn MdpFamily) -> Result<()> {
        let expected = env_hash(family)?;
        if self.env_hash != expected {
            return Err(Error::Artifact(format!(
                "artifact was built for environment {} but the config describes {}",
                short(&self.env_hash),
                short(&expected)
            )));
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Hex SHA-256 of the compact JSON encoding of `value`.
pub fn hash_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

pub fn env_hash(family: &dyn MdpFamily) -> Result<String> {
    hash_json(&family.describe())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub manifest: Manifest,
    pub payload: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolArtifact {
    /// Radius the cover was requested with.
    pub radius: f64,
    pub pool: PolicyPool,
}

impl PoolArtifact {
    /// Display name, e.g. `AdaptPool0.25`.
    pub fn name(&self) -> String {
        format!("AdaptPool{}", self.radius)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnArtifact {
    pub network: MlpNetwork,
    pub log: TrainingLog,
}

pub fn save_artifact<T: Serialize>(path: &Path, artifact: &Artifact<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec(artifact)?)?;
    Ok(())
}

/// Reads an artifact and checks its kind and format version.
pub fn load_artifact<T: DeserializeOwned>(path: &Path, kind: ArtifactKind) -> Result<Artifact<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::Artifact(format!("cannot read {}: {e}", path.display())))?;
    let artifact: Artifact<T> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Artifact(format!("{} is not a valid artifact: {e}", path.display())))?;
    if artifact.manifest.kind != kind {
        return Err(Error::Artifact(format!(
            "{} holds a {:?} artifact, expected {:?}",
            path.display(),
            artifact.manifest.kind,
            kind
        )));
    }
    if artifact.manifest.format_version != FORMAT_VERSION {
        return Err(Error::Artifact(format!(
            "{} has format version {}, expected {FORMAT_VERSION}",
            path.display(),
            artifact.manifest.format_version
        )));
    }
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_worstcase_pair, GatheringConfig, GatheringGame, WorstCasePair};
    use crate::par::Execution;
    use crate::pool::train_pool;

    #[test]
    fn pool_artifact_round_trips() {
        let f = build_worstcase_pair(0.99, 1.0).unwrap();
        let pool = train_pool(&f, &WorstCasePair::types(), Execution::Sequential).unwrap();
        let art = Artifact {
            manifest: Manifest::new(ArtifactKind::Pool, &f, "abc".into(), 3).unwrap(),
            payload: PoolArtifact { radius: 1.0, pool },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/pool.json");
        save_artifact(&path, &art).unwrap();
        let back: Artifact<PoolArtifact> = load_artifact(&path, ArtifactKind::Pool).unwrap();
        assert_eq!(back, art);
        assert_eq!(back.payload.name(), "AdaptPool1");
        back.manifest.check_environment(&f).unwrap();
        assert!(load_artifact::<PoolArtifact>(&path, ArtifactKind::Dqn).is_err());
    }

    #[test]
    fn mismatched_environment_is_refused() {
        let a = GatheringGame::new(GatheringConfig::for_grid(3)).unwrap();
        let b = GatheringGame::new(GatheringConfig::for_grid(4)).unwrap();
        let m = Manifest::new(ArtifactKind::Dqn, &a, String::new(), 0).unwrap();
        m.check_environment(&a).unwrap();
        assert!(matches!(m.check_environment(&b), Err(Error::Artifact(_))));
        assert_ne!(env_hash(&a).unwrap(), env_hash(&b).unwrap());
        assert_eq!(env_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn missing_or_corrupt_files_are_artifact_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.json");
        assert!(matches!(load_artifact::<PoolArtifact>(&missing, ArtifactKind::Pool), Err(Error::Artifact(_))));
        let bad = dir.path().join("bad.json");
        std::fs::write(&bad, "{not json").unwrap();
        assert!(matches!(load_artifact::<PoolArtifact>(&bad, ArtifactKind::Pool), Err(Error::Artifact(_))));
    }
}
