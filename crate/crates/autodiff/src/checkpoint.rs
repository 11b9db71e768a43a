//! JSON parameter checkpoints: `{"version": 1, "params": {name: {"shape": [..], "values": [..]}}}`.

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::AutodiffError;
use crate::tensor::{ParamSet, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    params: IndexMap<String, Entry>,
}

pub fn to_json(params: &ParamSet) -> Result<String, AutodiffError> {
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        params: params
            .iter()
            .map(|(_, name, t)| {
                (
                    name.to_string(),
                    Entry {
                        shape: t.shape().to_vec(),
                        values: t.data().to_vec(),
                    },
                )
            })
            .collect(),
    };
    Ok(serde_json::to_string(&ckpt)?)
}

pub fn from_json(text: &str) -> Result<ParamSet, AutodiffError> {
    let ckpt: Checkpoint = serde_json::from_str(text)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(AutodiffError::Checkpoint(format!(
            "unsupported version {} (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    let mut params = ParamSet::new();
    for (name, e) in ckpt.params {
        let t = Tensor::new(e.shape, e.values)
            .map_err(|err| AutodiffError::Checkpoint(format!("parameter `{name}`: {err}")))?;
        params.insert(name, t)?;
    }
    Ok(params)
}

pub fn save(params: &ParamSet, path: &Path) -> Result<(), AutodiffError> {
    fs::write(path, to_json(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet, AutodiffError> {
    from_json(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut p = ParamSet::new();
        p.insert("b", Tensor::vector(vec![0.1, -1e-300, 1.0 / 3.0])).unwrap();
        p.insert("a", Tensor::matrix(1, 2, vec![std::f64::consts::PI, 2.5]).unwrap())
            .unwrap();
        let back = from_json(&to_json(&p).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn wrong_version_rejected() {
        let text = r#"{"version": 7, "params": {}}"#;
        assert!(matches!(from_json(text), Err(AutodiffError::Checkpoint(_))));
    }

    #[test]
    fn shape_value_mismatch_rejected() {
        let text = r#"{"version": 1, "params": {"w": {"shape": [2, 2], "values": [1.0]}}}"#;
        assert!(from_json(text).is_err());
    }
}
