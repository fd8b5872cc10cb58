//! Triplet objectives over Euclidean embedding distances.
//!
//! * basic: `max(d_ap − d_an + m1, 0)`
//! * modified: `max(d_ap − d_an + m1, 0) + max(d_ap − d_pn + m2, 0)`
//!
//! The second hinge of the modified loss also pushes the positive away from
//! the negative, so positive and anchor may come from different domains
//! without the positive collapsing onto domain-only features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{euclidean_distance, euclidean_distance_backward};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossVariant {
    Basic,
    Modified,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub variant: LossVariant,
    pub m1: f64,
    pub m2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::modified(0.2, 0.2)
    }
}

impl LossConfig {
    pub fn basic(m1: f64) -> Self {
        Self {
            variant: LossVariant::Basic,
            m1,
            m2: 0.0,
        }
    }

    pub fn modified(m1: f64, m2: f64) -> Self {
        Self {
            variant: LossVariant::Modified,
            m1,
            m2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m1 >= 0.0 && self.m1.is_finite() && self.m2 >= 0.0 && self.m2.is_finite()) {
            return Err(Error::Config(format!(
                "margins must be finite and nonnegative, got m1={} m2={}",
                self.m1, self.m2
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TripletDistances {
    pub d_ap: f64,
    pub d_an: f64,
    pub d_pn: f64,
}

impl TripletDistances {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_ap", self.d_ap),
            ("d_an", self.d_an),
            ("d_pn", self.d_pn),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Input(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

fn hinge(v: f64) -> f64 {
    v.max(0.0)
}

pub fn basic_loss(d: &TripletDistances, cfg: &LossConfig) -> Result<f64> {
    d.validate()?;
    cfg.validate()?;
    Ok(hinge(d.d_ap - d.d_an + cfg.m1))
}

pub fn modified_loss(d: &TripletDistances, cfg: &LossConfig) -> Result<f64> {
    d.validate()?;
    cfg.validate()?;
    Ok(hinge(d.d_ap - d.d_an + cfg.m1) + hinge(d.d_ap - d.d_pn + cfg.m2))
}

/// Dispatches on `cfg.variant`.
pub fn triplet_loss(d: &TripletDistances, cfg: &LossConfig) -> Result<f64> {
    match cfg.variant {
        LossVariant::Basic => basic_loss(d, cfg),
        LossVariant::Modified => modified_loss(d, cfg),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrads<T = f32> {
    pub loss: T,
    pub grad_a: Vec<T>,
    pub grad_p: Vec<T>,
    pub grad_n: Vec<T>,
}

/// Loss of one triplet and its gradients with respect to all three
/// embeddings. Hinges that are exactly zero contribute no gradient.
pub fn loss_and_grads<T: Scalar>(
    a: &[T],
    p: &[T],
    n: &[T],
    cfg: &LossConfig,
) -> Result<TripletGrads<T>> {
    cfg.validate()?;
    if a.len() != p.len() || a.len() != n.len() {
        return Err(Error::shape(format!(
            "triplet embeddings differ in length: {}, {}, {}",
            a.len(),
            p.len(),
            n.len()
        )));
    }
    let d_ap = euclidean_distance(a, p)?;
    let d_an = euclidean_distance(a, n)?;
    let d_pn = euclidean_distance(p, n)?;

    let zero = T::zero();
    let one = T::one();
    let mut loss = zero;
    // upstream gradients of the loss with respect to each distance
    let (mut u_ap, mut u_an, mut u_pn) = (zero, zero, zero);

    let h1 = d_ap - d_an + T::of_f64(cfg.m1);
    if h1 > zero {
        loss = loss + h1;
        u_ap = u_ap + one;
        u_an = u_an - one;
    }
    if cfg.variant == LossVariant::Modified {
        let h2 = d_ap - d_pn + T::of_f64(cfg.m2);
        if h2 > zero {
            loss = loss + h2;
            u_ap = u_ap + one;
            u_pn = u_pn - one;
        }
    }

    let mut grad_a = vec![zero; a.len()];
    let mut grad_p = vec![zero; a.len()];
    let mut grad_n = vec![zero; a.len()];
    let accumulate = |x: &[T], y: &[T], d: T, u: T, gx: &mut [T], gy: &mut [T]| -> Result<()> {
        if u == zero {
            return Ok(());
        }
        let (dx, dy) = euclidean_distance_backward(x, y, d, u)?;
        for (g, v) in gx.iter_mut().zip(dx) {
            *g = *g + v;
        }
        for (g, v) in gy.iter_mut().zip(dy) {
            *g = *g + v;
        }
        Ok(())
    };
    accumulate(a, p, d_ap, u_ap, &mut grad_a, &mut grad_p)?;
    accumulate(a, n, d_an, u_an, &mut grad_a, &mut grad_n)?;
    accumulate(p, n, d_pn, u_pn, &mut grad_p, &mut grad_n)?;

    Ok(TripletGrads {
        loss,
        grad_a,
        grad_p,
        grad_n,
    })
}

/// Anchor, positive and negative embeddings of one triplet.
pub type TripletEmbeddings<'a, T> = (&'a [T], &'a [T], &'a [T]);

/// Mean loss over the batch; every returned gradient is scaled by
/// `1 / batch_size`.
pub fn batch_loss<T: Scalar>(
    batch: &[TripletEmbeddings<'_, T>],
    cfg: &LossConfig,
) -> Result<(T, Vec<TripletGrads<T>>)> {
    if batch.is_empty() {
        return Err(Error::Input(
            "batch must contain at least one triplet".into(),
        ));
    }
    let scale = T::one() / T::of_f64(batch.len() as f64);
    let mut total = T::zero();
    let mut out = Vec::with_capacity(batch.len());
    for &(a, p, n) in batch {
        let mut g = loss_and_grads(a, p, n, cfg)?;
        total = total + g.loss;
        for v in g
            .grad_a
            .iter_mut()
            .chain(g.grad_p.iter_mut())
            .chain(g.grad_n.iter_mut())
        {
            *v = *v * scale;
        }
        out.push(g);
    }
    Ok((total * scale, out))
}
