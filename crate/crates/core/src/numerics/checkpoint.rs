use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "advrm-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Versioned textual dump of named arrays plus optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(params: ParamStore) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::parse("checkpoint", e))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                "checkpoint",
                format!("unknown format {:?}", ckpt.format),
            ));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                "checkpoint",
                format!("unsupported version {}", ckpt.version),
            ));
        }
        Ok(ckpt)
    }
}

pub fn save_params(path: &Path, params: &ParamStore) -> Result<()> {
    fs::write(path, Checkpoint::new(params.clone()).to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(Checkpoint::from_json(&text)?.params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{adam_step, AdamConfig, Gradients, Mlp};
    use crate::rng::stream;

    #[test]
    fn round_trip_is_exact_and_byte_stable() {
        let mlp = Mlp::new(4, vec![3]);
        let mut p = mlp.init(&mut stream(5, "ckpt", 0));
        let g = mlp.backward(&p, &[0.1, 0.2, 0.3, 0.4], 1.0).unwrap();
        adam_step(&mut p, &g, &AdamConfig::with_lr(0.01)).unwrap();
        let text = Checkpoint::new(p.clone()).to_json();
        let back = Checkpoint::from_json(&text).unwrap();
        assert_eq!(back.params, p);
        assert_eq!(back.to_json(), text);
        let _ = Gradients::zeros_like(&back.params);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut c = Checkpoint::new(ParamStore::new());
        c.version = 99;
        assert!(Checkpoint::from_json(&c.to_json()).is_err());
    }
}
