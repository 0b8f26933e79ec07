use super::{NnError, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub value: Tensor,
}

/// Ordered, named set of trainable tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<NamedParam>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointEntry {
    name: String,
    shape: [usize; 2],
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    parameters: Vec<CheckpointEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its slot.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.params.push(NamedParam {
            name: name.into(),
            value,
        });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedParam> {
        self.params.iter()
    }

    pub fn get(&self, slot: usize) -> &Tensor {
        &self.params[slot].value
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn set_tensors(&mut self, tensors: Vec<Tensor>) {
        for (p, t) in self.params.iter_mut().zip(tensors) {
            p.value = t;
        }
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value)
    }

    /// Total number of trainable scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn to_checkpoint(&self) -> String {
        let checkpoint = Checkpoint {
            parameters: self
                .params
                .iter()
                .map(|p| CheckpointEntry {
                    name: p.name.clone(),
                    shape: p.value.shape(),
                    values: p.value.data().to_vec(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&checkpoint).expect("checkpoint serializes")
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, NnError> {
        let checkpoint: Checkpoint =
            serde_json::from_str(text).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut store = Self::new();
        for entry in checkpoint.parameters {
            let [r, c] = entry.shape;
            store.push(entry.name, Tensor::new(r, c, entry.values)?);
        }
        Ok(store)
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<(), NnError> {
        if other.len() != self.len() {
            return Err(NnError::Checkpoint(format!(
                "expected {} tensors, found {}",
                self.len(),
                other.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(&other.params) {
            if mine.name != theirs.name || mine.value.shape() != theirs.value.shape() {
                return Err(NnError::Checkpoint(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.value.shape(),
                    theirs.name,
                    theirs.value.shape()
                )));
            }
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_checkpoint())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_layer_count() {
        let mut store = ParamStore::new();
        store.push("w", Tensor::zeros(2, 2));
        store.push("b", Tensor::zeros(1, 2));
        assert_eq!(store.count(), 6);
        assert_eq!(ParamStore::new().count(), 0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut store = ParamStore::new();
        store.push(
            "w",
            Tensor::new(1, 3, vec![0.1, -1.0 / 3.0, 1e-300]).unwrap(),
        );
        let text = store.to_checkpoint();
        assert_eq!(ParamStore::from_checkpoint(&text).unwrap(), store);
        assert!(ParamStore::from_checkpoint(
            "{\"parameters\":[{\"name\":\"w\",\"shape\":[2,2],\"values\":[1]}]}"
        )
        .is_err());
    }
}
