//! Path-addressed views over trainable tensors.
//!
//! Every layer implements [`Parameterized`] by visiting its matrices in a
//! fixed order under a dotted path (`topic.head.hidden.weight`). Gradients are
//! stored in a value of the same type as the parameters, so optimizer and
//! gradient checker zip the two visits together.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub trait Parameterized {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix));

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix));

    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |p, m| out.push((p, m)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |p, m| out.push((p, m)));
        out
    }

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    fn zero_out(&mut self) {
        self.visit_mut("", &mut |_, m| m.fill(0.0));
    }

    /// A zero-filled value with identical structure, used as a gradient buffer.
    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.zero_out();
        z
    }

    /// `self += scale * other`, tensor by tensor.
    fn add_scaled_from(&mut self, scale: f64, other: &Self) {
        let src = other.tensors();
        let mut i = 0;
        self.visit_mut("", &mut |path, m| {
            let (p, o) = &src[i];
            debug_assert_eq!(&path, p);
            m.add_scaled(scale, o);
            i += 1;
        });
    }

    fn to_parameter_set(&self) -> ParameterSet {
        ParameterSet {
            entries: self
                .tensors()
                .into_iter()
                .map(|(p, m)| (p, m.clone()))
                .collect(),
        }
    }

    /// Overwrite every tensor from `set`; paths and shapes must match exactly.
    fn load_parameter_set(&mut self, set: &ParameterSet) -> Result<()> {
        let mut targets = self.tensors_mut();
        if targets.len() != set.entries.len() {
            return Err(Error::config(format!(
                "parameter set has {} tensors, model expects {}",
                set.entries.len(),
                targets.len()
            )));
        }
        for ((path, dst), (src_path, src)) in targets.iter_mut().zip(&set.entries) {
            if path != src_path {
                return Err(Error::config(format!(
                    "parameter path mismatch: model `{path}`, file `{src_path}`"
                )));
            }
            if dst.shape() != src.shape() {
                return Err(Error::config(format!(
                    "parameter `{path}` shape {:?} does not match stored {:?}",
                    dst.shape(),
                    src.shape()
                )));
            }
            (**dst).clone_from(src);
        }
        Ok(())
    }
}

/// Ordered map from parameter path to tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<NamedTensor>", into = "Vec<NamedTensor>")]
pub struct ParameterSet {
    entries: Vec<(String, Matrix)>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    path: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<Vec<NamedTensor>> for ParameterSet {
    type Error = Error;

    fn try_from(raw: Vec<NamedTensor>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut entries = Vec::with_capacity(raw.len());
        for t in raw {
            if !seen.insert(t.path.clone()) {
                return Err(Error::config(format!("duplicate parameter path `{}`", t.path)));
            }
            let m = Matrix::new(t.rows, t.cols, t.data)?;
            entries.push((t.path, m));
        }
        Ok(Self { entries })
    }
}

impl From<ParameterSet> for Vec<NamedTensor> {
    fn from(set: ParameterSet) -> Self {
        set.entries
            .into_iter()
            .map(|(path, m)| NamedTensor {
                path,
                rows: m.rows(),
                cols: m.cols(),
                data: m.into_vec(),
            })
            .collect()
    }
}

impl ParameterSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, path: &str) -> Option<&Matrix> {
        self.entries.iter().find(|(p, _)| p == path).map(|(_, m)| m)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(p, _)| p.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(p, m)| (p.as_str(), m))
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|(_, m)| m.len()).sum()
    }
}
