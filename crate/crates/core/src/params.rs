//! Learnable maps, their initialization, and on-disk weight sets.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Token-wise affine map, weight `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// 2-D convolution, weight `(out, in, k, k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundLinear {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundConv {
    pub w: Var,
    pub b: Var,
    pub stride: usize,
}

/// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn uniform_init<R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

impl Linear {
    pub fn init<R: Rng>(rng: &mut R, cin: usize, cout: usize) -> Self {
        Self {
            weight: uniform_init(rng, &[cout, cin], cin),
            bias: uniform_init(rng, &[cout], cin),
        }
    }

    pub fn identity(c: usize) -> Self {
        Self {
            weight: Tensor::eye(c),
            bias: Tensor::zeros(&[c]),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph) -> BoundLinear {
        BoundLinear {
            w: g.leaf(self.weight.clone()),
            b: g.leaf(self.bias.clone()),
        }
    }

    /// The same map as a `1 x 1` convolution.
    pub fn to_conv(&self) -> Conv {
        let (o, i) = (self.out_features(), self.in_features());
        Conv {
            weight: self.weight.reshape(&[o, i, 1, 1]).expect("same element count"),
            bias: self.bias.clone(),
            stride: 1,
        }
    }
}

impl Conv {
    pub fn init<R: Rng>(rng: &mut R, cin: usize, cout: usize, k: usize, stride: usize) -> Self {
        let fan_in = cin * k * k;
        Self {
            weight: uniform_init(rng, &[cout, cin, k, k], fan_in),
            bias: uniform_init(rng, &[cout], fan_in),
            stride,
        }
    }

    pub fn identity(c: usize) -> Self {
        Linear::identity(c).to_conv()
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn bind(&self, g: &mut Graph) -> BoundConv {
        BoundConv {
            w: g.leaf(self.weight.clone()),
            b: g.leaf(self.bias.clone()),
            stride: self.stride,
        }
    }
}

impl BoundLinear {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.linear(x, self.w, self.b)
    }
}

impl BoundConv {
    pub fn apply(&self, g: &mut Graph, x: Var) -> Result<Var> {
        g.conv2d(x, self.w, self.b, self.stride)
    }
}

/// Flat `name -> tensor` view used for persistence.
pub trait NamedTensors {
    fn tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;
}

impl NamedTensors for Linear {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

impl NamedTensors for Conv {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("weight".into(), &self.weight), ("bias".into(), &self.bias)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("weight".into(), &mut self.weight), ("bias".into(), &mut self.bias)]
    }
}

pub(crate) fn prefixed<'a>(prefix: &str, items: Vec<(String, &'a Tensor)>) -> Vec<(String, &'a Tensor)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a>(prefix: &str, items: Vec<(String, &'a mut Tensor)>) -> Vec<(String, &'a mut Tensor)> {
    items.into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub file: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub maps: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes one `.vwt` file per named tensor plus `manifest.json`.
pub fn save_weights(dir: &Path, weights: &dyn NamedTensors) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let mut maps = Vec::new();
    for (name, t) in weights.tensors() {
        let file = format!("{name}.vwt");
        t.save(dir.join(&file))?;
        maps.push(ManifestEntry {
            name,
            file,
            shape: t.shape().to_vec(),
        });
    }
    let manifest = Manifest { maps };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_weight_dir(dir: &Path) -> Result<BTreeMap<String, Tensor>> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    let mut out = BTreeMap::new();
    for e in manifest.maps {
        let t = Tensor::load(dir.join(&e.file))?;
        if t.shape() != e.shape.as_slice() {
            return Err(Error::Format(format!(
                "{}: manifest says {:?}, file holds {:?}",
                e.name,
                e.shape,
                t.shape()
            )));
        }
        out.insert(e.name, t);
    }
    Ok(out)
}

/// Overwrites every tensor of `weights` with the stored one of the same
/// name and shape.
pub fn load_weights(dir: &Path, weights: &mut dyn NamedTensors) -> Result<()> {
    let mut stored = read_weight_dir(dir)?;
    for (name, slot) in weights.tensors_mut() {
        let t = stored
            .remove(&name)
            .ok_or_else(|| Error::Format(format!("missing weight `{name}`")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected {:?}, found {:?}",
                slot.shape(),
                t.shape()
            )));
        }
        *slot = t;
    }
    Ok(())
}
