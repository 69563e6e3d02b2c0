//! Self-describing checkpoint files.
//!
//! A checkpoint is a single JSON record holding shapes, row-major parameter
//! arrays, optional optimizer moments, the task-stream counter, and an echo
//! of the run configuration. Loading validates every array length against
//! the declared shapes and fails loudly on any mismatch.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gradients, PolicyParams};
use crate::error::{Error, Result};

/// Adam moment estimates, parameter-shaped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub m: Gradients,
    pub v: Gradients,
    /// Number of optimizer steps the moments have absorbed (bias-correction
    /// time index).
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: String,
    /// Optimizer step count at save time.
    pub step: u64,
    /// Training mode label that produced this checkpoint.
    pub mode: String,
    pub params: PolicyParams,
    pub optimizer: Option<OptimizerState>,
    /// Task-stream position, so a resumed run sees fresh queries.
    pub task_counter: u64,
    /// Echo of the run configuration that produced this checkpoint.
    pub config: serde_json::Value,
}

impl Checkpoint {
    pub fn new(
        step: u64,
        mode: &str,
        params: PolicyParams,
        optimizer: Option<OptimizerState>,
        task_counter: u64,
        config: serde_json::Value,
    ) -> Self {
        Checkpoint {
            version: env!("CARGO_PKG_VERSION").to_string(),
            step,
            mode: mode.to_string(),
            params,
            optimizer,
            task_counter,
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate_shapes()?;
        if let Some(opt) = &self.optimizer {
            for state in [&opt.m, &opt.v] {
                if state.dims != self.params.dims {
                    return Err(Error::ShapeMismatch(format!(
                        "optimizer moments have dims {:?}, parameters have {:?}",
                        state.dims, self.params.dims
                    )));
                }
                for (name, block) in state.blocks() {
                    let want = self
                        .params
                        .blocks()
                        .iter()
                        .find(|(n, _)| *n == name)
                        .map(|(_, b)| b.len())
                        .unwrap_or(0);
                    if block.len() != want {
                        return Err(Error::ShapeMismatch(format!(
                            "optimizer block {name}: expected {want} entries, found {}",
                            block.len()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text)?;
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// FNV-1a hash of the serialized parameters, for checkpoint provenance
    /// links in run summaries.
    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.params).expect("params serialize");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        format!("{h:016x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::ModelDims;
    use crate::rng::SeedPath;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("curelab-test-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn roundtrip_preserves_params_exactly() {
        let dims = ModelDims {
            vocab: 6,
            embed: 3,
            context: 2,
            hidden: 4,
        };
        let params = PolicyParams::init(dims, &SeedPath::root(42));
        let ckpt = Checkpoint::new(
            17,
            "dapo",
            params.clone(),
            None,
            99,
            serde_json::json!({"seed": 42}),
        );
        let path = temp_path("roundtrip.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.step, 17);
        assert_eq!(loaded.task_counter, 99);
        assert_eq!(loaded.content_hash(), ckpt.content_hash());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn shape_mismatch_fails_loudly() {
        let dims = ModelDims {
            vocab: 6,
            embed: 3,
            context: 2,
            hidden: 4,
        };
        let mut ckpt = Checkpoint::new(
            0,
            "grpo",
            PolicyParams::init(dims, &SeedPath::root(1)),
            None,
            0,
            serde_json::Value::Null,
        );
        ckpt.params.w2.pop();
        let path = temp_path("mismatch.json");
        ckpt.save(&path).unwrap();
        let err = Checkpoint::load(&path).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "got {err:?}");
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn hash_changes_with_params() {
        let dims = ModelDims {
            vocab: 6,
            embed: 3,
            context: 2,
            hidden: 4,
        };
        let a = Checkpoint::new(
            0,
            "grpo",
            PolicyParams::init(dims, &SeedPath::root(1)),
            None,
            0,
            serde_json::Value::Null,
        );
        let mut b = a.clone();
        b.params.b2[0] += 1e-9;
        assert_ne!(a.content_hash(), b.content_hash());
    }
}
