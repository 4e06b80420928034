use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
struct Param {
    value: Matrix,
    grad: Matrix,
}

/// Named trainable matrices, each paired with a gradient buffer of the same
/// shape. Iteration order is by name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::structural(format!("duplicate parameter `{name}`")));
        }
        let grad = Array2::zeros(value.dim());
        self.params.insert(name, Param { value, grad });
        Ok(())
    }

    /// Glorot-uniform initialized `rows × cols` matrix.
    pub fn insert_glorot(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut impl Rng) -> Result<()> {
        let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.insert(name, value)
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, rows: usize, cols: usize) -> Result<()> {
        self.insert(name, Array2::zeros((rows, cols)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn value(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Matrix> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub(crate) fn grad_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.params.get_mut(name).map(|p| &mut p.grad)
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn entry_count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// `(name, shape)` pairs, used to validate checkpoints.
    pub fn manifest(&self) -> Vec<(String, (usize, usize))> {
        self.params.iter().map(|(k, p)| (k.clone(), p.value.dim())).collect()
    }

    /// Iterates `(name, value, grad)` mutably; used by optimizers.
    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix, &Matrix)> {
        self.params
            .iter_mut()
            .map(|(k, p)| (k.as_str(), &mut p.value, &p.grad))
    }

    /// Copies values for every name in `other` that also exists here.
    pub fn load_values_from(&mut self, other: &ParamStore) -> Result<()> {
        for (name, p) in &other.params {
            let mine = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::structural(format!("unexpected parameter `{name}`")))?;
            if mine.value.dim() != p.value.dim() {
                return Err(Error::structural(format!("shape mismatch for `{name}`")));
            }
            mine.value.assign(&p.value);
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|p| p.value.iter().all(|x| x.is_finite()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            v: CHECKPOINT_VERSION,
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        StoredMatrix {
                            rows: p.value.nrows(),
                            cols: p.value.ncols(),
                            data: p.value.iter().copied().collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    /// Rebuilds a store from a checkpoint, requiring exactly the names and
    /// shapes listed in `manifest`.
    pub fn from_checkpoint(ck: Checkpoint, manifest: &[(String, (usize, usize))]) -> Result<Self> {
        if ck.v != CHECKPOINT_VERSION {
            return Err(Error::structural(format!("unsupported checkpoint version {}", ck.v)));
        }
        if ck.params.len() != manifest.len() {
            return Err(Error::structural(format!(
                "checkpoint has {} parameters, manifest expects {}",
                ck.params.len(),
                manifest.len()
            )));
        }
        let mut store = ParamStore::new();
        for (name, (rows, cols)) in manifest {
            let m = ck
                .params
                .get(name)
                .ok_or_else(|| Error::structural(format!("checkpoint lacks `{name}`")))?;
            if (m.rows, m.cols) != (*rows, *cols) || m.data.len() != rows * cols {
                return Err(Error::structural(format!(
                    "`{name}` stored as {}x{}, expected {rows}x{cols}",
                    m.rows, m.cols
                )));
            }
            let value = Array2::from_shape_vec((*rows, *cols), m.data.clone())
                .map_err(|e| Error::structural(e.to_string()))?;
            store.insert(name.clone(), value)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint()).map_err(|e| Error::structural(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, manifest: &[(String, (usize, usize))]) -> Result<Self> {
        let text = read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Document {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::from_checkpoint(ck, manifest)
    }
}

pub(crate) fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

/// On-disk checkpoint: `{"v":1,"params":{name:{rows,cols,data}}}` with
/// row-major data written as shortest round-trip decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub v: u32,
    pub params: BTreeMap<String, StoredMatrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoredMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}
