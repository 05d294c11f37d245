//! Named parameter tensors in declaration order.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::tape::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Encoder,
    Decoder,
    Head,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Glorot uniform over (rows, cols).
    Xavier,
    Uniform(f64),
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub groups: Vec<Group>,
}

/// Rounds through f32 so in-memory values equal their stored form.
pub(crate) fn round_f32(t: &mut Tensor) {
    for v in &mut t.data {
        *v = f64::from(*v as f32);
    }
}

impl ParamStore {
    pub(crate) fn add(
        &mut self,
        name: String,
        rows: usize,
        cols: usize,
        group: Group,
        init: Init,
        rng: Option<&mut ChaCha8Rng>,
    ) -> usize {
        let mut t = Tensor::zeros(rows, cols);
        match (init, rng) {
            (Init::Ones, _) => t.data.fill(1.0),
            (Init::Zeros, _) | (_, None) => {}
            (Init::Xavier, Some(rng)) => {
                let a = (6.0 / (rows + cols) as f64).sqrt();
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-a..a));
            }
            (Init::Uniform(a), Some(rng)) => {
                t.data.iter_mut().for_each(|v| *v = rng.random_range(-a..a))
            }
        }
        round_f32(&mut t);
        self.names.push(name);
        self.tensors.push(t);
        self.groups.push(group);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn checksum(&self, group: Group) -> String {
        let mut h = Sha256::new();
        for ((name, t), g) in self.names.iter().zip(&self.tensors).zip(&self.groups) {
            if *g == group {
                h.update(name.as_bytes());
                for v in &t.data {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.tensors)
            .find(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
    }
}
