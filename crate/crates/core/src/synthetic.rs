//! Procedural two-domain defect datasets.
//!
//! Each domain has its own background process (stripes, gradient or
//! blotches) while the defect, soft dark blobs, is drawn by one shared
//! process that differs between domains only by a bounded per-domain
//! scaling of blob radius and intensity.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Domain, Label, LabeledImage};
use crate::error::{Error, Result};
use crate::pgm;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Background {
    /// `amplitude · sin(2π·(x·cosθ + y·sinθ)/period + φ)`; φ is uniform per
    /// image when `phase_jitter` is set, else 0.
    Stripes {
        period: f64,
        angle_deg: f64,
        amplitude: f64,
        phase_jitter: bool,
    },
    /// Linear ramp through the image centre spanning `±amplitude`, with the
    /// direction drawn per image within `±angle_jitter_deg`.
    Gradient {
        angle_deg: f64,
        amplitude: f64,
        angle_jitter_deg: f64,
    },
    /// Bilinear value noise on a lattice with `scale`-pixel spacing.
    Blotch { scale: f64, amplitude: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub background: Background,
    pub base_intensity: f64,
    pub noise_sigma: f64,
    pub image_size: (usize, usize),
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectSpec {
    /// Inclusive range of blobs per defect image.
    pub blob_count: (usize, usize),
    /// Radius range in pixels.
    pub blob_radius: (f64, f64),
    /// Added to the background at the blob core; negative darkens.
    pub intensity_delta: f64,
    /// Width in pixels of the linear falloff at the blob rim.
    pub edge_softness: f64,
    /// Per-domain multiplicative perturbation of radius and delta, at most 0.2.
    pub jitter: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub no_defect: usize,
    pub defect: usize,
}

/// Everything needed to generate a source/target pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub defect: DefectSpec,
    pub source_counts: ClassCounts,
    pub target_counts: ClassCounts,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            source: DomainSpec {
                background: Background::Gradient {
                    angle_deg: 0.0,
                    amplitude: 0.12,
                    angle_jitter_deg: 180.0,
                },
                base_intensity: 0.65,
                noise_sigma: 0.01,
                image_size: (32, 32),
                seed: 1,
            },
            target: DomainSpec {
                background: Background::Gradient {
                    angle_deg: 45.0,
                    amplitude: 0.2,
                    angle_jitter_deg: 0.0,
                },
                base_intensity: 0.6,
                noise_sigma: 0.01,
                image_size: (32, 32),
                seed: 2,
            },
            defect: DefectSpec {
                blob_count: (15, 24),
                blob_radius: (1.2, 2.2),
                intensity_delta: -0.3,
                edge_softness: 0.5,
                jitter: 0.15,
            },
            source_counts: ClassCounts {
                no_defect: 300,
                defect: 300,
            },
            target_counts: ClassCounts {
                no_defect: 300,
                defect: 300,
            },
        }
    }
}

impl GeneratorSpec {
    pub fn generate(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        generate_pair(
            &self.source,
            &self.target,
            &self.defect,
            self.source_counts,
            self.target_counts,
            seed,
        )
    }
}

impl DomainSpec {
    fn validate(&self, defect: &DefectSpec) -> Result<()> {
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::Spec("image size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.base_intensity) {
            return Err(Error::Spec(format!(
                "base_intensity must lie in [0, 1], got {}",
                self.base_intensity
            )));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma < 0.5) {
            return Err(Error::Spec(format!(
                "noise_sigma must lie in [0, 0.5), got {}",
                self.noise_sigma
            )));
        }
        match self.background {
            Background::Stripes { period, .. } if period.is_nan() || period <= 0.0 => {
                return Err(Error::Spec("stripe period must be positive".into()))
            }
            Background::Blotch { scale, .. } if scale.is_nan() || scale < 1.0 => {
                return Err(Error::Spec("blotch scale must be at least 1 pixel".into()))
            }
            _ => {}
        }
        let max_diameter = 2.0 * defect.blob_radius.1 * (1.0 + defect.jitter) + 1.0;
        if max_diameter > h.min(w) as f64 {
            return Err(Error::Spec(format!(
                "blob diameter up to {max_diameter:.1} px does not fit a {h}×{w} image"
            )));
        }
        Ok(())
    }
}

impl DefectSpec {
    fn validate(&self) -> Result<()> {
        if self.blob_count.0 > self.blob_count.1 {
            return Err(Error::Spec("blob_count range is inverted".into()));
        }
        let (r0, r1) = self.blob_radius;
        if !(r0 > 0.0 && r0 <= r1) {
            return Err(Error::Spec(format!(
                "invalid blob_radius range ({r0}, {r1})"
            )));
        }
        if !(0.0..=0.2).contains(&self.jitter) {
            return Err(Error::Spec(format!(
                "jitter must lie in [0, 0.2], got {}",
                self.jitter
            )));
        }
        if self.edge_softness.is_nan()
            || self.edge_softness < 0.0
            || !self.intensity_delta.is_finite()
        {
            return Err(Error::Spec(
                "edge_softness and intensity_delta must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Generates the source and target datasets. No-defect images come first in
/// each, then defect images.
pub fn generate_pair(
    source: &DomainSpec,
    target: &DomainSpec,
    defect: &DefectSpec,
    source_counts: ClassCounts,
    target_counts: ClassCounts,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    defect.validate()?;
    let s = generate_domain(Domain::Source, source, defect, source_counts, seed)?;
    let t = generate_domain(Domain::Target, target, defect, target_counts, seed)?;
    Ok((s, t))
}

fn generate_domain(
    domain: Domain,
    spec: &DomainSpec,
    defect: &DefectSpec,
    counts: ClassCounts,
    seed: u64,
) -> Result<Dataset> {
    spec.validate(defect)?;
    if counts.no_defect == 0 || counts.defect == 0 {
        return Err(Error::Spec(format!(
            "{domain} needs at least one image per class, got {counts:?}"
        )));
    }
    let domain_seed = derive_seed(derive_seed(seed, spec.seed), domain as u64);
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(derive_seed(domain_seed, 0x6a17));
    let radius_scale = 1.0 + jitter_rng.random_range(-1.0..=1.0) * defect.jitter;
    let delta_scale = 1.0 + jitter_rng.random_range(-1.0..=1.0) * defect.jitter;

    let mut samples = Vec::with_capacity(counts.no_defect + counts.defect);
    for (label, n) in [
        (Label::NoDefect, counts.no_defect),
        (Label::Defect, counts.defect),
    ] {
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                derive_seed(domain_seed, label as u64 + 1),
                i as u64,
            ));
            let mut img = render_background(spec, &mut rng);
            if label == Label::Defect {
                let blobs = BlobDraw {
                    radius_scale,
                    delta: defect.intensity_delta * delta_scale,
                };
                paint_blobs(&mut img, spec.image_size, defect, blobs, &mut rng);
            }
            if spec.noise_sigma > 0.0 {
                let normal = Normal::new(0.0, spec.noise_sigma).expect("valid sigma");
                for v in &mut img {
                    *v += normal.sample(&mut rng);
                }
            }
            let (h, w) = spec.image_size;
            let data = img
                .into_iter()
                .map(|v| pgm::dequantize(pgm::quantize(v as f32)))
                .collect();
            samples.push(LabeledImage {
                name: format!("{domain}_{label}_{i:04}.pgm"),
                image: Tensor::new(vec![h, w, 1], data)?,
                label,
                domain,
            });
        }
    }
    Ok(Dataset::new(samples))
}

/// Background intensities (before noise and clamping), row-major.
fn render_background(spec: &DomainSpec, rng: &mut impl Rng) -> Vec<f64> {
    let (h, w) = spec.image_size;
    let base = spec.base_intensity;
    let mut out = Vec::with_capacity(h * w);
    match spec.background {
        Background::Stripes {
            period,
            angle_deg,
            amplitude,
            phase_jitter,
        } => {
            let phase = if phase_jitter {
                rng.random_range(0.0..2.0 * PI)
            } else {
                0.0
            };
            for y in 0..h {
                for x in 0..w {
                    out.push(stripe_value(
                        base, period, angle_deg, amplitude, phase, x, y,
                    ));
                }
            }
        }
        Background::Gradient {
            angle_deg,
            amplitude,
            angle_jitter_deg,
        } => {
            let jitter = if angle_jitter_deg > 0.0 {
                rng.random_range(-angle_jitter_deg..=angle_jitter_deg)
            } else {
                0.0
            };
            let theta = (angle_deg + jitter).to_radians();
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let half = (h.max(w) as f64 - 1.0).max(1.0) / 2.0;
            for y in 0..h {
                for x in 0..w {
                    let t = ((x as f64 - cx) * theta.cos() + (y as f64 - cy) * theta.sin()) / half;
                    out.push(base + amplitude * t);
                }
            }
        }
        Background::Blotch { scale, amplitude } => {
            let gh = (h as f64 / scale).ceil() as usize + 2;
            let gw = (w as f64 / scale).ceil() as usize + 2;
            let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
            for y in 0..h {
                for x in 0..w {
                    let (fy, fx) = (y as f64 / scale, x as f64 / scale);
                    let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
                    let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
                    let at = |r: usize, c: usize| lattice[r * gw + c];
                    let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                    let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                    out.push(base + amplitude * (top * (1.0 - ty) + bot * ty));
                }
            }
        }
    }
    out
}

/// The stripe background at pixel `(x, y)`.
pub fn stripe_value(
    base: f64,
    period: f64,
    angle_deg: f64,
    amplitude: f64,
    phase: f64,
    x: usize,
    y: usize,
) -> f64 {
    let theta = angle_deg.to_radians();
    let u = x as f64 * theta.cos() + y as f64 * theta.sin();
    base + amplitude * (2.0 * PI * u / period + phase).sin()
}

#[derive(Clone, Copy)]
struct BlobDraw {
    radius_scale: f64,
    delta: f64,
}

fn paint_blobs(
    img: &mut [f64],
    (h, w): (usize, usize),
    spec: &DefectSpec,
    draw: BlobDraw,
    rng: &mut impl Rng,
) {
    let count = rng.random_range(spec.blob_count.0..=spec.blob_count.1);
    let mut alpha = vec![0.0f64; h * w];
    for _ in 0..count {
        let r = rng.random_range(spec.blob_radius.0..=spec.blob_radius.1) * draw.radius_scale;
        // centre keeps the whole disc inside the image
        let cy = rng.random_range(r..=(h as f64 - 1.0 - r));
        let cx = rng.random_range(r..=(w as f64 - 1.0 - r));
        for y in 0..h {
            for x in 0..w {
                let d = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt();
                let a = if spec.edge_softness > 0.0 {
                    ((r - d) / spec.edge_softness).clamp(0.0, 1.0)
                } else if d <= r {
                    1.0
                } else {
                    0.0
                };
                let slot = &mut alpha[y * w + x];
                *slot = slot.max(a);
            }
        }
    }
    for (v, a) in img.iter_mut().zip(alpha) {
        *v += draw.delta * a;
    }
}

/// Pixel-wise mean image of a set of equally sized images.
fn mean_image<'a>(images: impl IntoIterator<Item = &'a Tensor>) -> Option<Vec<f64>> {
    let mut acc: Option<Vec<f64>> = None;
    let mut n = 0usize;
    for img in images {
        let a = acc.get_or_insert_with(|| vec![0.0; img.len()]);
        for (s, &v) in a.iter_mut().zip(img.data()) {
            *s += v as f64;
        }
        n += 1;
    }
    acc.map(|a| a.into_iter().map(|s| s / n as f64).collect())
}

fn mean_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// How strongly the domain shift dominates the class signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftStatistics {
    /// Mean |Δ| between the source and target no-defect mean images.
    pub domain_gap: f64,
    /// Largest within-domain mean |Δ| between defect and no-defect mean images.
    pub class_gap: f64,
}

pub fn shift_statistics(source: &Dataset, target: &Dataset) -> Option<ShiftStatistics> {
    let class_mean =
        |d: &Dataset, dom, label| mean_image(d.select(dom, label).into_iter().map(|s| &s.image));
    let s_ok = class_mean(source, Domain::Source, Label::NoDefect)?;
    let s_def = class_mean(source, Domain::Source, Label::Defect)?;
    let t_ok = class_mean(target, Domain::Target, Label::NoDefect)?;
    let t_def = class_mean(target, Domain::Target, Label::Defect)?;
    Some(ShiftStatistics {
        domain_gap: mean_abs_diff(&s_ok, &t_ok),
        class_gap: mean_abs_diff(&s_def, &s_ok).max(mean_abs_diff(&t_def, &t_ok)),
    })
}

/// Best accuracy of a one-threshold classifier on mean image intensity
/// (defect predicted below the threshold, as blobs darken).
pub fn mean_intensity_threshold_accuracy(dataset: &Dataset) -> f64 {
    let mut scored: Vec<(f64, Label)> = dataset
        .samples
        .iter()
        .map(|s| {
            let m = s.image.data().iter().map(|&v| v as f64).sum::<f64>() / s.image.len() as f64;
            (m, s.label)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = scored.len();
    let total_ok = scored.iter().filter(|s| s.1 == Label::NoDefect).count();
    // threshold between positions k-1 and k: first k predicted defect
    let mut best = total_ok;
    let (mut def_below, mut ok_below) = (0, 0);
    for &(_, label) in &scored {
        match label {
            Label::Defect => def_below += 1,
            Label::NoDefect => ok_below += 1,
        }
        best = best.max(def_below + (total_ok - ok_below));
    }
    best as f64 / n as f64
}
