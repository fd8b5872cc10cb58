//! Finite-difference checks shared by the gradient tests and the
//! acceptance run. Every check panics with a located message on mismatch.

use cdtl::encoder::{ConvBlock, EncoderConfig, EncoderModel, InputSize, ProjectionHead};
use cdtl::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, euclidean_distance,
    euclidean_distance_backward, maxpool2_backward, maxpool2_forward, relu_backward, relu_forward,
    Padding,
};
use cdtl::loss::{loss_and_grads, LossConfig};
use cdtl::tensor::Tensor;
use rand::Rng;

use super::{fd_check, fd_check_where, random_tensor, rng, uniform};

/// Weighted sum `r · y`, the scalar every layer check differentiates.
pub fn project(y: &Tensor<f64>, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(a, b)| a * b).sum()
}

pub fn conv2d(instances: usize) {
    let mut g = rng(11);
    for case in 0..instances {
        let (h, w) = (g.random_range(3..8), g.random_range(3..8));
        let (cin, cout) = (g.random_range(1..4), g.random_range(1..4));
        let k = g.random_range(1..=h.min(w).min(3));
        let stride = g.random_range(1..3);
        let padding = if g.random_bool(0.5) {
            Padding::Same
        } else {
            Padding::Valid
        };
        let x = random_tensor(&mut g, &[h, w, cin]);
        let kern = random_tensor(&mut g, &[k, k, cin, cout]);
        let bias = random_tensor(&mut g, &[cout]);
        let (y, cache) = conv2d_forward(&x, &kern, &bias, stride, padding).unwrap();
        let r = uniform(&mut g, y.len());
        let grads =
            conv2d_backward(&Tensor::new(y.shape().to_vec(), r.clone()).unwrap(), &cache).unwrap();

        let f = |x: &Tensor<f64>, kern: &Tensor<f64>, bias: &Tensor<f64>| {
            project(
                &conv2d_forward(x, kern, bias, stride, padding).unwrap().0,
                &r,
            )
        };
        fd_check(
            &format!("conv case {case} input"),
            &x,
            grads.input.data(),
            |t| f(t, &kern, &bias),
        );
        fd_check(
            &format!("conv case {case} kernels"),
            &kern,
            grads.kernels.data(),
            |t| f(&x, t, &bias),
        );
        fd_check(
            &format!("conv case {case} bias"),
            &bias,
            grads.bias.data(),
            |t| f(&x, &kern, t),
        );
    }
}

pub fn relu(instances: usize) {
    let mut g = rng(13);
    let mut checked = 0;
    while checked < instances {
        let shape = [g.random_range(1..6), g.random_range(1..6), 2];
        let x = random_tensor(&mut g, &shape);
        if x.data().iter().any(|v| v.abs() < 1e-2) {
            continue;
        }
        let (y, cache) = relu_forward(&x);
        let r = uniform(&mut g, y.len());
        let gx =
            relu_backward(&Tensor::new(y.shape().to_vec(), r.clone()).unwrap(), &cache).unwrap();
        fd_check(&format!("relu case {checked}"), &x, gx.data(), |t| {
            project(&relu_forward(t).0, &r)
        });
        checked += 1;
    }
}

/// Smallest gap between the winner and runner-up over all pooling windows.
pub fn min_window_gap(x: &Tensor<f64>) -> f64 {
    window_gap(x, false)
}

/// Gap over windows whose winner is positive only. All-zero windows after a
/// ReLU stay zero under small perturbations, so their ties are harmless.
fn window_gap(x: &Tensor<f64>, skip_zero: bool) -> f64 {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut gap = f64::INFINITY;
    for oy in 0..h / 2 {
        for ox in 0..w / 2 {
            for ch in 0..c {
                let mut v: Vec<f64> = [(0, 0), (0, 1), (1, 0), (1, 1)]
                    .iter()
                    .map(|(dy, dx)| x.data()[((2 * oy + dy) * w + 2 * ox + dx) * c + ch])
                    .collect();
                v.sort_by(|a, b| b.total_cmp(a));
                if skip_zero && v[0] <= 0.0 {
                    continue;
                }
                gap = gap.min(v[0] - v[1]);
            }
        }
    }
    gap
}

pub fn maxpool(instances: usize) {
    let mut g = rng(14);
    let mut checked = 0;
    while checked < instances {
        let shape = [
            g.random_range(2..7),
            g.random_range(2..7),
            g.random_range(1..3),
        ];
        let x = random_tensor(&mut g, &shape);
        if min_window_gap(&x) < 1e-2 {
            continue;
        }
        let (y, cache) = maxpool2_forward(&x).unwrap();
        let r = uniform(&mut g, y.len());
        let gx = maxpool2_backward(&Tensor::new(y.shape().to_vec(), r.clone()).unwrap(), &cache)
            .unwrap();
        fd_check(&format!("maxpool case {checked}"), &x, gx.data(), |t| {
            project(&maxpool2_forward(t).unwrap().0, &r)
        });
        checked += 1;
    }
}

pub fn dense(instances: usize) {
    let mut g = rng(16);
    for case in 0..instances {
        let (n, m) = if case == 0 {
            (8, 4)
        } else {
            (g.random_range(1..12), g.random_range(1..8))
        };
        let x = random_tensor(&mut g, &[n]);
        let wts = random_tensor(&mut g, &[n, m]);
        let b = random_tensor(&mut g, &[m]);
        let (y, cache) = dense_forward(&x, &wts, &b).unwrap();
        let r = uniform(&mut g, m);
        let grads = dense_backward(&Tensor::vector(r.clone()).unwrap(), &cache).unwrap();
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            project(&dense_forward(x, w, b).unwrap().0, &r)
        };
        fd_check(
            &format!("dense case {case} input"),
            &x,
            grads.input.data(),
            |t| f(t, &wts, &b),
        );
        fd_check(
            &format!("dense case {case} weights"),
            &wts,
            grads.weights.data(),
            |t| f(&x, t, &b),
        );
        fd_check(
            &format!("dense case {case} bias"),
            &b,
            grads.bias.data(),
            |t| f(&x, &wts, t),
        );
        // direct oracle
        for j in 0..m {
            let s: f64 = b.data()[j]
                + (0..n)
                    .map(|i| x.data()[i] * wts.data()[i * m + j])
                    .sum::<f64>();
            assert!((y.data()[j] - s).abs() < 1e-12);
        }
    }
}

pub fn distance(instances: usize) {
    let mut g = rng(17);
    for case in 0..instances {
        let d = if case == 0 { 64 } else { g.random_range(1..70) };
        let a = random_tensor(&mut g, &[d]);
        let b = random_tensor(&mut g, &[d]);
        let dist = euclidean_distance(a.data(), b.data()).unwrap();
        let up = g.random_range(-2.0..2.0);
        let (ga, gb) = euclidean_distance_backward(a.data(), b.data(), dist, up).unwrap();
        let f = |x: &[f64], y: &[f64]| up * euclidean_distance(x, y).unwrap();
        fd_check(&format!("distance case {case} a"), &a, &ga, |t| {
            f(t.data(), b.data())
        });
        fd_check(&format!("distance case {case} b"), &b, &gb, |t| {
            f(a.data(), t.data())
        });
    }
}

pub fn losses(instances: usize) {
    for (name, cfg) in [
        ("basic", LossConfig::basic(0.2)),
        ("modified", LossConfig::modified(0.2, 0.2)),
    ] {
        let mut g = rng(18);
        let mut checked = 0;
        while checked < instances {
            let (a, p, n) = (
                random_tensor(&mut g, &[64]),
                random_tensor(&mut g, &[64]),
                random_tensor(&mut g, &[64]),
            );
            // random triplets are usually inactive; pulling p toward a gives a
            // mix of active and inactive hinges
            let shrink = g.random_range(0.0..1.0);
            let p: Tensor<f64> = Tensor::vector(
                a.data()
                    .iter()
                    .zip(p.data())
                    .map(|(x, y)| x + shrink * (y - x))
                    .collect(),
            )
            .unwrap();
            let (d_ap, d_an, d_pn) = (
                euclidean_distance(a.data(), p.data()).unwrap(),
                euclidean_distance(a.data(), n.data()).unwrap(),
                euclidean_distance(p.data(), n.data()).unwrap(),
            );
            if (d_ap - d_an + 0.2).abs() < 1e-3 || (d_ap - d_pn + 0.2).abs() < 1e-3 {
                continue;
            }
            let gr = loss_and_grads(a.data(), p.data(), n.data(), &cfg).unwrap();
            let f = |a: &[f64], p: &[f64], n: &[f64]| loss_and_grads(a, p, n, &cfg).unwrap().loss;
            fd_check(
                &format!("{name} case {checked} anchor"),
                &a,
                &gr.grad_a,
                |t| f(t.data(), p.data(), n.data()),
            );
            fd_check(
                &format!("{name} case {checked} positive"),
                &p,
                &gr.grad_p,
                |t| f(a.data(), t.data(), n.data()),
            );
            fd_check(
                &format!("{name} case {checked} negative"),
                &n,
                &gr.grad_n,
                |t| f(a.data(), p.data(), t.data()),
            );
            checked += 1;
        }
    }
}

fn tiny_encoder(projection: bool, normalize: bool, seed: u64) -> EncoderConfig {
    EncoderConfig {
        input_size: InputSize {
            height: 9,
            width: 8,
            channels: 2,
        },
        conv_blocks: vec![
            ConvBlock {
                filters: 3,
                kernel_size: 3,
            },
            ConvBlock {
                filters: 2,
                kernel_size: 2,
            },
        ],
        padding: if projection {
            Padding::Same
        } else {
            Padding::Valid
        },
        embedding_dim: 5,
        projection_head: projection.then_some(ProjectionHead {
            hidden_dim: 4,
            output_dim: 3,
        }),
        normalize,
        seed,
    }
}

/// ReLU on/off states and pooling winners of the whole forward pass,
/// recomputed from the public layer functions. Central differences are exact
/// for the piecewise-linear part as long as this pattern does not change.
fn activation_pattern(model: &EncoderModel<f64>, image: &Tensor<f64>) -> Vec<usize> {
    let cfg = model.config();
    let w = model.weights();
    let mut pattern = Vec::new();
    let mut x = image.clone();
    let mut i = 0;
    for _ in &cfg.conv_blocks {
        let (y, _) = conv2d_forward(&x, &w[i], &w[i + 1], 1, cfg.padding).unwrap();
        pattern.extend(y.data().iter().map(|&v| usize::from(v > 0.0)));
        let (r, _) = relu_forward(&y);
        let (h, wd, c) = (r.shape()[0], r.shape()[1], r.shape()[2]);
        for oy in 0..h / 2 {
            for ox in 0..wd / 2 {
                for ch in 0..c {
                    let at = |dy: usize, dx: usize| {
                        r.data()[((2 * oy + dy) * wd + 2 * ox + dx) * c + ch]
                    };
                    let mut best = 0;
                    for (j, (dy, dx)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        let (by, bx) = [(0, 0), (0, 1), (1, 0), (1, 1)][best];
                        if at(dy, dx) > at(by, bx) {
                            best = j;
                        }
                    }
                    // an all-zero window has no gradient whichever element wins
                    pattern.push(
                        if at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)) > 0.0 {
                            best + 1
                        } else {
                            0
                        },
                    );
                }
            }
        }
        x = maxpool2_forward(&r).unwrap().0;
        i += 2;
    }
    if cfg.projection_head.is_some() {
        let flat = Tensor::vector(x.data().to_vec()).unwrap();
        let (e, _) = dense_forward(&flat, &w[i], &w[i + 1]).unwrap();
        let (hdn, _) = dense_forward(&e, &w[i + 2], &w[i + 3]).unwrap();
        pattern.extend(hdn.data().iter().map(|&v| usize::from(v > 0.0)));
    }
    pattern
}

pub fn encoder(instances: usize) {
    let mut g = rng(19);
    for (projection, normalize) in [(false, false), (true, false), (false, true)] {
        let mut checked = 0;
        let mut seed = 0;
        let (mut total, mut skipped) = (0, 0);
        while checked < instances {
            seed += 1;
            let cfg = tiny_encoder(projection, normalize, seed);
            let model: EncoderModel<f64> = cdtl::init_encoder(&cfg).unwrap().cast();
            // random biases so that zero-bias symmetries do not hide bugs
            let mut weights: Vec<Tensor<f64>> = model.weights().to_vec();
            for t in &mut weights {
                if t.rank() == 1 {
                    *t = random_tensor(&mut g, t.shape()).map(|v| 0.1 * v);
                }
            }
            let model = EncoderModel::from_weights(cfg.clone(), weights).unwrap();
            let image = random_tensor(&mut g, &[9, 8, 2]).map(|v| 0.5 * (v + 1.0));
            if normalize {
                // e/|e| bends sharply near the origin
                let raw = EncoderModel::from_weights(
                    EncoderConfig {
                        normalize: false,
                        ..cfg.clone()
                    },
                    model.weights().to_vec(),
                )
                .unwrap();
                let e = raw.embed(&image).unwrap();
                if e.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt() < 2.0 {
                    continue;
                }
            }
            let (emb, trace) = model.embed_with_cache(&image).unwrap();
            assert_eq!(emb.as_slice(), model.embed(&image).unwrap().as_slice());
            let r = uniform(&mut g, emb.len());
            let grads = model.backward(&trace, &r).unwrap();
            let base = model.weights().to_vec();
            let with = |wi: usize, t: &Tensor<f64>| {
                let mut ws = base.clone();
                ws[wi] = t.clone();
                EncoderModel::from_weights(cfg.clone(), ws).unwrap()
            };
            let reference = activation_pattern(&model, &image);
            for (wi, grad) in grads.iter().enumerate() {
                total += grad.len();
                skipped += fd_check_where(
                    &format!(
                        "encoder(proj={projection}, norm={normalize}) seed {seed} weight {wi}"
                    ),
                    &base[wi],
                    grad.data(),
                    |t| {
                        let e = with(wi, t).embed(&image).unwrap();
                        e.as_slice().iter().zip(&r).map(|(a, b)| a * b).sum()
                    },
                    |t| activation_pattern(&with(wi, t), &image) == reference,
                );
            }
            checked += 1;
        }
        // kink crossings should be rare; a large share would hide errors
        assert!(
            skipped * 20 < total,
            "{skipped} of {total} elements skipped"
        );
    }
}
