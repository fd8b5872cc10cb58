//! Differentiable layer primitives with explicit forward/backward pairs.
//!
//! Images and activations use `H×W×C` layout; convolution kernels use
//! `k×k×Cin×Cout`. Every forward returns a cache value that the matching
//! backward consumes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Gradients below this distance are defined as zero.
pub const DISTANCE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    #[default]
    Valid,
    Same,
}

impl Padding {
    /// Output extent and leading pad for one spatial axis.
    pub fn resolve(self, extent: usize, kernel: usize, stride: usize) -> Option<(usize, usize)> {
        if stride == 0 || kernel == 0 {
            return None;
        }
        match self {
            Padding::Valid => {
                if kernel > extent {
                    None
                } else {
                    Some(((extent - kernel) / stride + 1, 0))
                }
            }
            Padding::Same => {
                let out = extent.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(extent);
                if kernel > extent + total {
                    None
                } else {
                    Some((out, total / 2))
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvCache<T = f32> {
    input: Tensor<T>,
    kernels: Tensor<T>,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_shape: [usize; 3],
}

#[derive(Clone, Debug)]
pub struct ReluCache {
    shape: Vec<usize>,
    active: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct PoolCache {
    input_shape: [usize; 3],
    argmax: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct DenseCache<T = f32> {
    input: Tensor<T>,
    weights: Tensor<T>,
}

/// Cache of any layer kind, as stored by a layer stack.
#[derive(Clone, Debug)]
pub enum LayerCache<T = f32> {
    Conv(ConvCache<T>),
    Relu(ReluCache),
    MaxPool(PoolCache),
    Dense(DenseCache<T>),
    Flatten(Vec<usize>),
    Normalize(Tensor<T>, T),
}

pub struct ConvGrads<T = f32> {
    pub input: Tensor<T>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

pub struct DenseGrads<T = f32> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, ConvCache<T>)> {
    input.expect_rank(3, "conv input")?;
    kernels.expect_rank(4, "conv kernels")?;
    let [h, w, cin] = [input.shape()[0], input.shape()[1], input.shape()[2]];
    let ks = kernels.shape();
    let (k, kcin, cout) = (ks[0], ks[2], ks[3]);
    if ks[1] != k {
        return Err(Error::shape(format!("kernels must be square, got {ks:?}")));
    }
    if kcin != cin {
        return Err(Error::shape(format!(
            "input has {cin} channels but kernels expect {kcin}"
        )));
    }
    bias.expect_shape(&[cout])?;
    if stride == 0 {
        return Err(Error::shape("stride must be at least 1"));
    }
    let (ho, pad_top) = padding
        .resolve(h, k, stride)
        .ok_or_else(|| Error::shape(format!("kernel {k} exceeds input height {h}")))?;
    let (wo, pad_left) = padding
        .resolve(w, k, stride)
        .ok_or_else(|| Error::shape(format!("kernel {k} exceeds input width {w}")))?;

    let x = input.data();
    let kd = kernels.data();
    let b = bias.data();
    let mut out = vec![T::zero(); ho * wo * cout];
    for oy in 0..ho {
        for ox in 0..wo {
            let acc = &mut out[(oy * wo + ox) * cout..][..cout];
            acc.copy_from_slice(b);
            for ky in 0..k {
                let Some(iy) = (oy * stride + ky).checked_sub(pad_top).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * stride + kx).checked_sub(pad_left).filter(|&v| v < w)
                    else {
                        continue;
                    };
                    let px = &x[(iy * w + ix) * cin..][..cin];
                    let krow = &kd[(ky * k + kx) * cin * cout..][..cin * cout];
                    for (ci, &xv) in px.iter().enumerate() {
                        for (a, &kv) in acc.iter_mut().zip(&krow[ci * cout..][..cout]) {
                            *a = *a + xv * kv;
                        }
                    }
                }
            }
        }
    }
    let output = Tensor::new(vec![ho, wo, cout], out)?;
    let cache = ConvCache {
        input: input.clone(),
        kernels: kernels.clone(),
        stride,
        pad_top,
        pad_left,
        out_shape: [ho, wo, cout],
    };
    Ok((output, cache))
}

pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &ConvCache<T>,
) -> Result<ConvGrads<T>> {
    grad_out.expect_shape(&cache.out_shape)?;
    let [ho, wo, cout] = cache.out_shape;
    let is = cache.input.shape();
    let (h, w, cin) = (is[0], is[1], is[2]);
    let k = cache.kernels.shape()[0];
    let (stride, pad_top, pad_left) = (cache.stride, cache.pad_top, cache.pad_left);

    let x = cache.input.data();
    let kd = cache.kernels.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); x.len()];
    let mut gk = vec![T::zero(); kd.len()];
    let mut gb = vec![T::zero(); cout];

    for oy in 0..ho {
        for ox in 0..wo {
            let go = &g[(oy * wo + ox) * cout..][..cout];
            for (b, &gv) in gb.iter_mut().zip(go) {
                *b = *b + gv;
            }
            for ky in 0..k {
                let Some(iy) = (oy * stride + ky).checked_sub(pad_top).filter(|&v| v < h) else {
                    continue;
                };
                for kx in 0..k {
                    let Some(ix) = (ox * stride + kx).checked_sub(pad_left).filter(|&v| v < w)
                    else {
                        continue;
                    };
                    let base = (iy * w + ix) * cin;
                    let koff = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[base + ci];
                        let krow = &kd[koff + ci * cout..][..cout];
                        let gkrow = &mut gk[koff + ci * cout..][..cout];
                        let mut acc = T::zero();
                        for ((gkv, &kv), &gv) in gkrow.iter_mut().zip(krow).zip(go) {
                            *gkv = *gkv + xv * gv;
                            acc = acc + kv * gv;
                        }
                        gx[base + ci] = gx[base + ci] + acc;
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(is.to_vec(), gx)?,
        kernels: Tensor::new(cache.kernels.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![cout], gb)?,
    })
}

pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = input.data().iter().map(|&v| v > T::zero()).collect();
    let out = input.map(|v| if v > T::zero() { v } else { T::zero() });
    let cache = ReluCache {
        shape: input.shape().to_vec(),
        active,
    };
    (out, cache)
}

/// Gradient is zero wherever the forward input was `<= 0`.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &ReluCache) -> Result<Tensor<T>> {
    grad_out.expect_shape(&cache.shape)?;
    let data = grad_out
        .data()
        .iter()
        .zip(&cache.active)
        .map(|(&g, &on)| if on { g } else { T::zero() })
        .collect();
    Tensor::new(cache.shape.clone(), data)
}

/// 2×2 max pooling with stride 2. Odd trailing rows and columns are dropped.
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
    input.expect_rank(3, "max-pool input")?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h < 2 || w < 2 {
        return Err(Error::shape(format!(
            "max-pool needs at least 2×2 spatial extent, got {h}×{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(ho * wo * c);
    let mut argmax = Vec::with_capacity(ho * wo * c);
    for oy in 0..ho {
        for ox in 0..wo {
            for ch in 0..c {
                // row-major window order; strict `>` keeps the first maximum
                let mut best_idx = ((2 * oy) * w + 2 * ox) * c + ch;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * oy + dy) * w + 2 * ox + dx) * c + ch;
                    if x[idx] > best {
                        best = x[idx];
                        best_idx = idx;
                    }
                }
                out.push(best);
                argmax.push(best_idx);
            }
        }
    }
    let cache = PoolCache {
        input_shape: [h, w, c],
        argmax,
    };
    Ok((Tensor::new(vec![ho, wo, c], out)?, cache))
}

pub fn maxpool2_backward<T: Scalar>(grad_out: &Tensor<T>, cache: &PoolCache) -> Result<Tensor<T>> {
    let [h, w, c] = cache.input_shape;
    grad_out.expect_shape(&[h / 2, w / 2, c])?;
    let mut gx = vec![T::zero(); h * w * c];
    for (&idx, &g) in cache.argmax.iter().zip(grad_out.data()) {
        gx[idx] = gx[idx] + g;
    }
    Tensor::new(cache.input_shape.to_vec(), gx)
}

/// `output = inputᵀ · weights + bias` for `input: [n]`, `weights: [n×m]`.
pub fn dense_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(Tensor<T>, DenseCache<T>)> {
    input.expect_rank(1, "dense input")?;
    weights.expect_rank(2, "dense weights")?;
    let (n, m) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n {
        return Err(Error::shape(format!(
            "dense input has length {} but weights have {n} rows",
            input.len()
        )));
    }
    bias.expect_shape(&[m])?;
    let mut out = bias.data().to_vec();
    let wd = weights.data();
    for (i, &xv) in input.data().iter().enumerate() {
        for (o, &wv) in out.iter_mut().zip(&wd[i * m..][..m]) {
            *o = *o + xv * wv;
        }
    }
    let cache = DenseCache {
        input: input.clone(),
        weights: weights.clone(),
    };
    Ok((Tensor::new(vec![m], out)?, cache))
}

pub fn dense_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &DenseCache<T>,
) -> Result<DenseGrads<T>> {
    let (n, m) = (cache.weights.shape()[0], cache.weights.shape()[1]);
    grad_out.expect_shape(&[m])?;
    let g = grad_out.data();
    let wd = cache.weights.data();
    let x = cache.input.data();
    let mut gw = vec![T::zero(); n * m];
    let mut gx = vec![T::zero(); n];
    for i in 0..n {
        let xv = x[i];
        let row = &wd[i * m..][..m];
        let grow = &mut gw[i * m..][..m];
        let mut acc = T::zero();
        for ((gwv, &wv), &gv) in grow.iter_mut().zip(row).zip(g) {
            *gwv = xv * gv;
            acc = acc + wv * gv;
        }
        gx[i] = acc;
    }
    Ok(DenseGrads {
        input: Tensor::new(vec![n], gx)?,
        weights: Tensor::new(vec![n, m], gw)?,
        bias: grad_out.clone(),
    })
}

pub fn euclidean_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::shape(format!(
            "distance needs equal nonzero lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sq: T = a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum();
    Ok(sq.sqrt())
}

/// Gradients of `upstream * d(a, b)` with respect to `a` and `b`, given the
/// forward distance `d`. Zero when `d` is below [`DISTANCE_EPS`].
pub fn euclidean_distance_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    d: T,
    upstream: T,
) -> Result<(Vec<T>, Vec<T>)> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "distance needs equal lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if d.as_f64() < DISTANCE_EPS {
        return Ok((vec![T::zero(); a.len()], vec![T::zero(); b.len()]));
    }
    let s = upstream / d;
    let ga: Vec<T> = a.iter().zip(b).map(|(&x, &y)| (x - y) * s).collect();
    let gb = ga.iter().map(|&v| -v).collect();
    Ok((ga, gb))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor<f32> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_kernel_is_identity() {
        let input = t(&[2, 3, 1], &[1.0, -2.0, 3.0, 4.0, 5.0, -6.0]);
        let k = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let (out, cache) = conv2d_forward(&input, &k, &b, 1, Padding::Valid).unwrap();
        assert_eq!(out, input);
        let g = conv2d_backward(&input, &cache).unwrap();
        assert_eq!(g.input, input);
    }

    #[test]
    fn zero_input_yields_bias() {
        let input = Tensor::<f32>::zeros(&[5, 5, 2]);
        let k = Tensor::filled(&[3, 3, 2, 3], 0.7f32);
        let b = t(&[3], &[0.5, -1.0, 2.0]);
        for padding in [Padding::Valid, Padding::Same] {
            let (out, _) = conv2d_forward(&input, &k, &b, 1, padding).unwrap();
            for px in out.data().chunks(3) {
                assert_eq!(px, b.data());
            }
        }
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let input = Tensor::filled(&[4, 4, 1], 0.3f32);
        let k = Tensor::filled(&[3, 3, 1, 2], 0.1f32);
        let b = Tensor::zeros(&[2]);
        let (out, cache) = conv2d_forward(&input, &k, &b, 1, Padding::Valid).unwrap();
        let g = conv2d_backward(&Tensor::zeros(out.shape()), &cache).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.kernels.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_rejects_channel_mismatch() {
        let input = Tensor::<f32>::zeros(&[4, 4, 2]);
        let k = Tensor::zeros(&[3, 3, 1, 2]);
        let b = Tensor::zeros(&[2]);
        assert!(matches!(
            conv2d_forward(&input, &k, &b, 1, Padding::Valid),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv_output_extents() {
        let input = Tensor::<f32>::zeros(&[7, 6, 1]);
        let k = Tensor::zeros(&[3, 3, 1, 4]);
        let b = Tensor::zeros(&[4]);
        let (out, _) = conv2d_forward(&input, &k, &b, 2, Padding::Valid).unwrap();
        assert_eq!(out.shape(), &[3, 2, 4]);
        let (out, _) = conv2d_forward(&input, &k, &b, 2, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[4, 3, 4]);
        let (out, _) = conv2d_forward(&input, &k, &b, 1, Padding::Same).unwrap();
        assert_eq!(out.shape(), &[7, 6, 4]);
    }

    #[test]
    fn conv_backward_rejects_wrong_grad_shape() {
        let input = Tensor::<f32>::zeros(&[4, 4, 1]);
        let k = Tensor::zeros(&[3, 3, 1, 1]);
        let b = Tensor::zeros(&[1]);
        let (_, cache) = conv2d_forward(&input, &k, &b, 1, Padding::Valid).unwrap();
        assert!(conv2d_backward(&Tensor::zeros(&[3, 3, 1]), &cache).is_err());
    }

    #[test]
    fn relu_examples() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        let (y, cache) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&t(&[3], &[5.0, 5.0, 5.0]), &cache).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn maxpool_routes_to_max() {
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let (y, cache) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let g = maxpool2_backward(&t(&[1, 1, 1], &[1.5]), &cache).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 0.0, 1.5]);
    }

    #[test]
    fn maxpool_ties_go_to_first_window_element() {
        let x = Tensor::filled(&[5, 4, 2], 0.25f32);
        let (y, cache) = maxpool2_forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 0.25));
        let g = maxpool2_backward(&Tensor::filled(&[2, 2, 2], 1.0), &cache).unwrap();
        for y in 0..5 {
            for x in 0..4 {
                for c in 0..2 {
                    let expect = if y < 4 && y % 2 == 0 && x % 2 == 0 {
                        1.0
                    } else {
                        0.0
                    };
                    assert_eq!(g.data()[(y * 4 + x) * 2 + c], expect, "at ({y},{x},{c})");
                }
            }
        }
    }

    #[test]
    fn maxpool_rejects_bad_rank() {
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(&[4, 4])).is_err());
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(&[1, 4, 1])).is_err());
    }

    #[test]
    fn dense_identity_and_zero_input() {
        let n = 3;
        let mut eye = vec![0.0f32; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let w = t(&[n, n], &eye);
        let x = t(&[n], &[0.5, -1.0, 2.0]);
        let (y, _) = dense_forward(&x, &w, &Tensor::zeros(&[n])).unwrap();
        assert_eq!(y, x);

        let b = t(&[3], &[1.0, 2.0, 3.0]);
        let (y, cache) = dense_forward(&Tensor::zeros(&[3]), &w, &b).unwrap();
        assert_eq!(y, b);
        let g = dense_backward(&t(&[3], &[1.0, 1.0, 1.0]), &cache).unwrap();
        assert!(g.weights.data().iter().all(|&v| v == 0.0));
        assert!(dense_forward(&Tensor::zeros(&[4]), &w, &b).is_err());
    }

    #[test]
    fn distance_examples() {
        assert_eq!(
            euclidean_distance(&[3.0f32, 0.0], &[0.0, 4.0]).unwrap(),
            5.0
        );
        let a = [0.3f32, -0.2];
        let d = euclidean_distance(&a, &a).unwrap();
        assert_eq!(d, 0.0);
        let (ga, gb) = euclidean_distance_backward(&a, &a, d, 1.0).unwrap();
        assert!(ga.iter().chain(&gb).all(|&v| v == 0.0));
        assert!(euclidean_distance(&[1.0f32], &[1.0, 2.0]).is_err());
    }
}
