//! The convolutional encoder: config, initialization, forward/backward over
//! the layer stack, and checkpoint persistence.
//!
//! Architecture: for each conv block `conv → ReLU → maxpool2`, then flatten
//! and a dense layer to `embedding_dim`. An optional projection head
//! `dense → ReLU → dense` follows, and an optional unit-norm step last.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::layers::{self, LayerCache, Padding};
use crate::tensor::{Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CDTL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSize {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl InputSize {
    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel_size: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionHead {
    pub hidden_dim: usize,
    pub output_dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub input_size: InputSize,
    pub conv_blocks: Vec<ConvBlock>,
    pub padding: Padding,
    pub embedding_dim: usize,
    pub projection_head: Option<ProjectionHead>,
    /// Scale the final output to unit Euclidean norm.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            input_size: InputSize {
                height: 32,
                width: 32,
                channels: 1,
            },
            conv_blocks: vec![
                ConvBlock {
                    filters: 8,
                    kernel_size: 3,
                },
                ConvBlock {
                    filters: 16,
                    kernel_size: 3,
                },
            ],
            padding: Padding::Valid,
            embedding_dim: 64,
            projection_head: None,
            normalize: false,
            seed: 0,
        }
    }
}

/// Name and shape of one weight tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub fan_in: usize,
    pub is_bias: bool,
}

impl EncoderConfig {
    /// Length of the vectors produced by [`EncoderModel::embed`].
    pub fn output_dim(&self) -> usize {
        self.projection_head
            .map_or(self.embedding_dim, |h| h.output_dim)
    }

    /// Checks the invariants and returns the weight table in storage order.
    pub fn weight_specs(&self) -> Result<Vec<WeightSpec>> {
        let InputSize {
            height,
            width,
            channels,
        } = self.input_size;
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "input size must be positive, got {height}×{width}×{channels}"
            )));
        }
        if self.embedding_dim < 2 {
            return Err(Error::Config(format!(
                "embedding_dim must be at least 2, got {}",
                self.embedding_dim
            )));
        }
        let mut specs = Vec::new();
        let (mut h, mut w, mut c) = (height, width, channels);
        for (i, block) in self.conv_blocks.iter().enumerate() {
            let k = block.kernel_size;
            if k == 0 || block.filters == 0 {
                return Err(Error::Config(format!(
                    "conv block {i} needs positive filters and kernel size"
                )));
            }
            let (Some((ch, _)), Some((cw, _))) =
                (self.padding.resolve(h, k, 1), self.padding.resolve(w, k, 1))
            else {
                return Err(Error::Config(format!(
                    "conv block {i}: kernel {k} exceeds spatial extent {h}×{w}"
                )));
            };
            if ch < 2 || cw < 2 {
                return Err(Error::Config(format!(
                    "conv block {i}: pooling would exhaust spatial extent {ch}×{cw}"
                )));
            }
            specs.push(WeightSpec {
                name: format!("block{i}.kernels"),
                shape: vec![k, k, c, block.filters],
                fan_in: k * k * c,
                is_bias: false,
            });
            specs.push(WeightSpec {
                name: format!("block{i}.bias"),
                shape: vec![block.filters],
                fan_in: k * k * c,
                is_bias: true,
            });
            h = ch / 2;
            w = cw / 2;
            c = block.filters;
        }
        let flat = h * w * c;
        let mut dense = |name: &str, n: usize, m: usize| {
            specs.push(WeightSpec {
                name: format!("{name}.weights"),
                shape: vec![n, m],
                fan_in: n,
                is_bias: false,
            });
            specs.push(WeightSpec {
                name: format!("{name}.bias"),
                shape: vec![m],
                fan_in: n,
                is_bias: true,
            });
        };
        dense("embedding", flat, self.embedding_dim);
        if let Some(head) = self.projection_head {
            if head.hidden_dim == 0 || head.output_dim < 2 {
                return Err(Error::Config(format!(
                    "projection head needs hidden_dim ≥ 1 and output_dim ≥ 2, got {head:?}"
                )));
            }
            dense("projection.hidden", self.embedding_dim, head.hidden_dim);
            dense("projection.output", head.hidden_dim, head.output_dim);
        }
        Ok(specs)
    }
}

/// The vector an image maps to.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding<T = f32>(Vec<T>);

impl<T: Scalar> Embedding<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self(values)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<T> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-layer caches from one forward pass, consumed by [`EncoderModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace<T = f32> {
    caches: Vec<LayerCache<T>>,
}

impl<T> ForwardTrace<T> {
    pub fn caches(&self) -> &[LayerCache<T>] {
        &self.caches
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel<T = f32> {
    config: EncoderConfig,
    weights: Vec<Tensor<T>>,
}

/// He-initialized encoder; fully determined by `config.seed`.
pub fn init_encoder(config: &EncoderConfig) -> Result<EncoderModel> {
    let specs = config.weight_specs()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let weights = specs
        .iter()
        .map(|spec| {
            if spec.is_bias {
                return Tensor::zeros(&spec.shape);
            }
            let std = (2.0 / spec.fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let n = spec.shape.iter().product();
            let data = (0..n).map(|_| normal.sample(&mut rng) as f32).collect();
            Tensor::new(spec.shape.clone(), data).expect("shape from spec")
        })
        .collect();
    Ok(EncoderModel {
        config: config.clone(),
        weights,
    })
}

impl<T: Scalar> EncoderModel<T> {
    /// Builds a model from explicit weights, checking them against the config.
    pub fn from_weights(config: EncoderConfig, weights: Vec<Tensor<T>>) -> Result<Self> {
        let specs = config.weight_specs()?;
        if specs.len() != weights.len() {
            return Err(Error::shape(format!(
                "config declares {} weight tensors, got {}",
                specs.len(),
                weights.len()
            )));
        }
        for (spec, w) in specs.iter().zip(&weights) {
            if w.shape() != spec.shape.as_slice() {
                return Err(Error::shape(format!(
                    "{}: expected shape {:?}, got {:?}",
                    spec.name,
                    spec.shape,
                    w.shape()
                )));
            }
        }
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn weights(&self) -> &[Tensor<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.weights
    }

    pub fn cast<U: Scalar>(&self) -> EncoderModel<U> {
        EncoderModel {
            config: self.config.clone(),
            weights: self.weights.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn embed(&self, image: &Tensor<T>) -> Result<Embedding<T>> {
        self.embed_with_cache(image).map(|(e, _)| e)
    }

    pub fn embed_with_cache(&self, image: &Tensor<T>) -> Result<(Embedding<T>, ForwardTrace<T>)> {
        let expected = self.config.input_size.shape();
        if image.shape() != expected {
            return Err(Error::shape(format!(
                "image shape {:?} does not match encoder input {:?}",
                image.shape(),
                expected
            )));
        }
        if !image.all_finite() {
            return Err(Error::Input("image contains non-finite pixels".into()));
        }

        let mut caches = Vec::new();
        let mut x = image.clone();
        let mut wi = 0;
        for _ in &self.config.conv_blocks {
            let (y, c) = layers::conv2d_forward(
                &x,
                &self.weights[wi],
                &self.weights[wi + 1],
                1,
                self.config.padding,
            )?;
            wi += 2;
            caches.push(LayerCache::Conv(c));
            let (y, c) = layers::relu_forward(&y);
            caches.push(LayerCache::Relu(c));
            let (y, c) = layers::maxpool2_forward(&y)?;
            caches.push(LayerCache::MaxPool(c));
            x = y;
        }
        caches.push(LayerCache::Flatten(x.shape().to_vec()));
        let n = x.len();
        x = x.reshape(vec![n])?;

        let (y, c) = layers::dense_forward(&x, &self.weights[wi], &self.weights[wi + 1])?;
        wi += 2;
        caches.push(LayerCache::Dense(c));
        x = y;

        if self.config.projection_head.is_some() {
            let (y, c) = layers::dense_forward(&x, &self.weights[wi], &self.weights[wi + 1])?;
            caches.push(LayerCache::Dense(c));
            let (y, c) = layers::relu_forward(&y);
            caches.push(LayerCache::Relu(c));
            let (y, c) = layers::dense_forward(&y, &self.weights[wi + 2], &self.weights[wi + 3])?;
            caches.push(LayerCache::Dense(c));
            x = y;
        }

        if self.config.normalize {
            let norm = x.data().iter().map(|&v| v * v).sum::<T>().sqrt();
            let denom = norm.max(T::of_f64(layers::DISTANCE_EPS));
            x = x.map(|v| v / denom);
            caches.push(LayerCache::Normalize(x.clone(), denom));
        }

        Ok((Embedding(x.into_data()), ForwardTrace { caches }))
    }

    /// Weight gradients (in weight order) of a scalar loss whose gradient
    /// with respect to the embedding is `grad_embedding`.
    pub fn backward(
        &self,
        trace: &ForwardTrace<T>,
        grad_embedding: &[T],
    ) -> Result<Vec<Tensor<T>>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.weights.len()];
        let mut wi = self.weights.len();
        let mut g = Tensor::vector(grad_embedding.to_vec())?;
        for cache in trace.caches.iter().rev() {
            g = match cache {
                LayerCache::Normalize(y, denom) => {
                    // d(x/|x|) = (g - y (y·g)) / |x|
                    let dot: T = y.data().iter().zip(g.data()).map(|(&a, &b)| a * b).sum();
                    let data = y
                        .data()
                        .iter()
                        .zip(g.data())
                        .map(|(&yv, &gv)| (gv - yv * dot) / *denom)
                        .collect();
                    Tensor::new(y.shape().to_vec(), data)?
                }
                LayerCache::Dense(c) => {
                    let d = layers::dense_backward(&g, c)?;
                    wi -= 2;
                    grads[wi] = Some(d.weights);
                    grads[wi + 1] = Some(d.bias);
                    d.input
                }
                LayerCache::Relu(c) => layers::relu_backward(&g, c)?,
                LayerCache::Flatten(shape) => g.reshape(shape.clone())?,
                LayerCache::MaxPool(c) => layers::maxpool2_backward(&g, c)?,
                LayerCache::Conv(c) => {
                    let d = layers::conv2d_backward(&g, c)?;
                    wi -= 2;
                    grads[wi] = Some(d.kernels);
                    grads[wi + 1] = Some(d.bias);
                    d.input
                }
            };
        }
        grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.ok_or_else(|| Error::shape(format!("trace left weight {i} without gradient")))
            })
            .collect()
    }
}

impl EncoderModel<f32> {
    /// Serializes to the checkpoint byte layout.
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for w in &self.weights {
            out.extend_from_slice(&(w.rank() as u32).to_le_bytes());
            for &e in w.shape() {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for &v in w.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Format("magic: expected \"CDTL\"".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "version: expected {CHECKPOINT_VERSION}, got {version}"
            )));
        }
        let len = r.u32("config length")? as usize;
        let blob = r.take(len, "config")?;
        let config: EncoderConfig =
            serde_json::from_slice(blob).map_err(|e| Error::Format(format!("config: {e}")))?;
        let specs = config
            .weight_specs()
            .map_err(|e| Error::Format(format!("config: {e}")))?;

        let mut weights = Vec::with_capacity(specs.len());
        for spec in &specs {
            let rank = r.u32(&format!("{}.rank", spec.name))? as usize;
            if rank != spec.shape.len() {
                return Err(Error::Format(format!(
                    "{}.rank: expected {}, got {rank}",
                    spec.name,
                    spec.shape.len()
                )));
            }
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32(&format!("{}.extents", spec.name))? as usize);
            }
            if shape != spec.shape {
                return Err(Error::Format(format!(
                    "{}.extents: expected {:?}, got {shape:?}",
                    spec.name, spec.shape
                )));
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4, &format!("{}.values", spec.name))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            weights.push(Tensor::new(shape, data)?);
        }
        if !r.is_done() {
            return Err(Error::Format(format!(
                "trailing bytes: {} unexpected bytes after the last tensor",
                r.remaining()
            )));
        }
        Ok(Self { config, weights })
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&fs::read(path)?)
    }

    /// SHA-256 of the checkpoint bytes.
    pub fn fingerprint(&self) -> [u8; 32] {
        Sha256::digest(self.to_checkpoint_bytes()).into()
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format(format!(
                "{field}: truncated ({} bytes needed, {} left)",
                n,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn is_done(&self) -> bool {
        self.remaining() == 0
    }
}
