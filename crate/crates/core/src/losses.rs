//! Training objectives: squared-Euclidean triplet loss, cosine triplet
//! loss with L2 regularization, and an ArcFace classification head
//! (additive angular margin; Deng et al., CVPR 2019). Every loss returns
//! its exact gradients alongside the value.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which triplet formulation to train with. The distance degree is fixed
/// at p = 2 (squared Euclidean) for the `euclidean` variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TripletVariant {
    Euclidean,
    Cosine,
}

/// Config-facing triplet loss selection; unset fields resolve to the
/// per-variant defaults so reports always carry explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TripletLossSpec {
    pub variant: TripletVariant,
    pub margin: Option<f64>,
    pub lambda: Option<f64>,
}

impl Default for TripletLossSpec {
    fn default() -> Self {
        TripletLossSpec {
            variant: TripletVariant::Euclidean,
            margin: None,
            lambda: None,
        }
    }
}

impl TripletLossSpec {
    pub fn resolve(&self) -> Result<TripletLossParams> {
        let params = match self.variant {
            TripletVariant::Euclidean => TripletLossParams {
                variant: self.variant,
                margin: self.margin.unwrap_or(1.0),
                lambda: self.lambda.unwrap_or(0.0),
            },
            TripletVariant::Cosine => TripletLossParams {
                variant: self.variant,
                margin: self.margin.unwrap_or(0.5),
                lambda: self.lambda.unwrap_or(1e-4),
            },
        };
        params.validate()?;
        Ok(params)
    }
}

/// Resolved triplet loss parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripletLossParams {
    pub variant: TripletVariant,
    pub margin: f64,
    /// L2 regularization weight; used by the cosine variant only.
    pub lambda: f64,
}

impl TripletLossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::InvalidParam(format!(
                "triplet margin must be positive, got {}",
                self.margin
            )));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "triplet lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Loss and gradients for one triplet under the selected variant.
    pub fn evaluate(
        &self,
        anchor: &[f64],
        positive: &[f64],
        negative: &[f64],
    ) -> Result<(f64, TripletGrads)> {
        match self.variant {
            TripletVariant::Euclidean => triplet_euclidean(anchor, positive, negative, self.margin),
            TripletVariant::Cosine => {
                triplet_cosine_l2(anchor, positive, negative, self.margin, self.lambda)
            }
        }
    }
}

/// Gradients of a triplet loss w.r.t. its three inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletGrads {
    pub anchor: Vec<f64>,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

fn check_dims(anchor: &[f64], positive: &[f64], negative: &[f64]) -> Result<()> {
    if anchor.len() != positive.len() || anchor.len() != negative.len() {
        return Err(Error::InvalidParam(format!(
            "triplet dims differ: anchor {}, positive {}, negative {}",
            anchor.len(),
            positive.len(),
            negative.len()
        )));
    }
    Ok(())
}

/// max(0, ||Fa-Fp||^2 - ||Fa-Fn||^2 + margin). The hinge subgradient at
/// exactly zero is taken as zero.
pub fn triplet_euclidean(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<(f64, TripletGrads)> {
    check_dims(anchor, positive, negative)?;
    let d = anchor.len();
    let mut d_ap = 0.0;
    let mut d_an = 0.0;
    for i in 0..d {
        let ap = anchor[i] - positive[i];
        let an = anchor[i] - negative[i];
        d_ap += ap * ap;
        d_an += an * an;
    }
    let value = d_ap - d_an + margin;
    if !value.is_finite() {
        return Err(Error::NonFinite("triplet loss".into()));
    }
    let mut grads = TripletGrads {
        anchor: vec![0.0; d],
        positive: vec![0.0; d],
        negative: vec![0.0; d],
    };
    if value > 0.0 {
        for i in 0..d {
            grads.anchor[i] = 2.0 * (negative[i] - positive[i]);
            grads.positive[i] = 2.0 * (positive[i] - anchor[i]);
            grads.negative[i] = 2.0 * (anchor[i] - negative[i]);
        }
        Ok((value, grads))
    } else {
        Ok((0.0, grads))
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of cos(u, v) w.r.t. u, given unit vectors and |u|.
fn cos_grad(u_hat: &[f64], v_hat: &[f64], cos_uv: f64, u_norm: f64) -> Vec<f64> {
    u_hat
        .iter()
        .zip(v_hat)
        .map(|(u, v)| (v - cos_uv * u) / u_norm)
        .collect()
}

/// max(0, cos(Fa,Fn) - cos(Fa,Fp) + margin) + lambda(|Fa|^2+|Fp|^2+|Fn|^2),
/// with gradients taken exactly through the normalizations.
pub fn triplet_cosine_l2(
    anchor: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
    lambda: f64,
) -> Result<(f64, TripletGrads)> {
    check_dims(anchor, positive, negative)?;
    let d = anchor.len();
    let (na, np, nn) = (norm(anchor), norm(positive), norm(negative));
    for (n, name) in [(na, "anchor"), (np, "positive"), (nn, "negative")] {
        if n == 0.0 {
            return Err(Error::InvalidParam(format!(
                "zero-norm {name} vector in cosine triplet"
            )));
        }
    }
    let a_hat: Vec<f64> = anchor.iter().map(|v| v / na).collect();
    let p_hat: Vec<f64> = positive.iter().map(|v| v / np).collect();
    let n_hat: Vec<f64> = negative.iter().map(|v| v / nn).collect();
    let cos_ap = dot(&a_hat, &p_hat);
    let cos_an = dot(&a_hat, &n_hat);
    if !cos_ap.is_finite() || !cos_an.is_finite() {
        return Err(Error::NonFinite("cosine triplet loss".into()));
    }
    let hinge = cos_an - cos_ap + margin;

    let mut grads = TripletGrads {
        anchor: anchor.iter().map(|v| 2.0 * lambda * v).collect(),
        positive: positive.iter().map(|v| 2.0 * lambda * v).collect(),
        negative: negative.iter().map(|v| 2.0 * lambda * v).collect(),
    };
    let mut loss = lambda * (na * na + np * np + nn * nn);
    if hinge > 0.0 {
        loss += hinge;
        let dcos_an_da = cos_grad(&a_hat, &n_hat, cos_an, na);
        let dcos_ap_da = cos_grad(&a_hat, &p_hat, cos_ap, na);
        let dcos_ap_dp = cos_grad(&p_hat, &a_hat, cos_ap, np);
        let dcos_an_dn = cos_grad(&n_hat, &a_hat, cos_an, nn);
        for i in 0..d {
            grads.anchor[i] += dcos_an_da[i] - dcos_ap_da[i];
            grads.positive[i] -= dcos_ap_dp[i];
            grads.negative[i] += dcos_an_dn[i];
        }
    }
    Ok((loss, grads))
}

/// ArcFace hyperparameters (scale s and additive angular margin m).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArcFaceParams {
    pub scale: f64,
    pub margin: f64,
}

impl Default for ArcFaceParams {
    fn default() -> Self {
        // The canonical ArcFace settings; configurable because no single
        // pair suits every feature dimensionality.
        ArcFaceParams {
            scale: 30.0,
            margin: 0.5,
        }
    }
}

impl ArcFaceParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::InvalidParam(format!(
                "arcface scale must be positive, got {}",
                self.scale
            )));
        }
        if !(0.0..PI / 2.0).contains(&self.margin) {
            return Err(Error::InvalidParam(format!(
                "arcface margin must be in [0, pi/2), got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

/// Classification head: one weight row per writer class, compared to
/// features by normalized cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct ArcFaceHead {
    classes: usize,
    dim: usize,
    pub params: ArcFaceParams,
    /// C x N row-major.
    weights: Vec<f64>,
}

impl ArcFaceHead {
    /// Xavier-uniform rows, deterministic per seed.
    pub fn init(classes: usize, dim: usize, params: ArcFaceParams, seed: u64) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParam(format!(
                "arcface needs at least 2 classes, got {classes}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParam("arcface feature dim must be positive".into()));
        }
        params.validate()?;
        let bound = (6.0 / (classes + dim) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = (0..classes * dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Ok(ArcFaceHead {
            classes,
            dim,
            params,
            weights,
        })
    }

    pub fn from_parts(
        classes: usize,
        dim: usize,
        params: ArcFaceParams,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::InvalidParam(format!(
                "arcface needs at least 2 classes, got {classes}"
            )));
        }
        params.validate()?;
        if weights.len() != classes * dim {
            return Err(Error::InvalidParam(format!(
                "arcface weights length {} does not match {classes}x{dim}",
                weights.len()
            )));
        }
        Ok(ArcFaceHead {
            classes,
            dim,
            params,
            weights,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn weight_row(&self, c: usize) -> &[f64] {
        &self.weights[c * self.dim..(c + 1) * self.dim]
    }
}

/// Loss plus gradients w.r.t. the feature batch and the head weights.
#[derive(Debug, Clone)]
pub struct ArcFaceOutput {
    pub loss: f64,
    pub feature_grads: Vec<Vec<f64>>,
    /// C x N row-major, matching [`ArcFaceHead::weights`].
    pub weight_grads: Vec<f64>,
}

/// Mean additive-angular-margin cross-entropy over the batch.
///
/// Cosines come from L2-normalized features and weight rows; the target
/// logit is cos(theta_y + m), computed as cos*cos m - sin*sin m with
/// theta clamped so theta + m <= pi (keeps the logit monotone in theta),
/// and all logits are scaled by s before the softmax.
pub fn arcface(
    features: &[Vec<f64>],
    labels: &[usize],
    head: &ArcFaceHead,
) -> Result<ArcFaceOutput> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InvalidParam("arcface batch is empty".into()));
    }
    if labels.len() != n {
        return Err(Error::InvalidParam(format!(
            "arcface got {n} features but {} labels",
            labels.len()
        )));
    }
    let (c, d) = (head.classes, head.dim);
    let mut w_norms = Vec::with_capacity(c);
    let mut w_hat = Vec::with_capacity(c);
    for j in 0..c {
        let row = head.weight_row(j);
        let nrm = norm(row);
        if nrm == 0.0 {
            return Err(Error::InvalidParam(format!("zero-norm arcface weight row {j}")));
        }
        w_hat.push(row.iter().map(|v| v / nrm).collect::<Vec<f64>>());
        w_norms.push(nrm);
    }

    let s = head.params.scale;
    let m = head.params.margin;
    let (cos_m, sin_m) = (m.cos(), m.sin());
    // theta + m <= pi  <=>  cos(theta) >= cos(pi - m).
    let clamp_cos = (PI - m).cos();

    let mut loss = 0.0;
    let mut feature_grads = vec![vec![0.0; d]; n];
    let mut weight_grads = vec![0.0; c * d];
    let inv_n = 1.0 / n as f64;

    for (i, f) in features.iter().enumerate() {
        if f.len() != d {
            return Err(Error::InvalidParam(format!(
                "feature row {i} has dim {}, head expects {d}",
                f.len()
            )));
        }
        let y = labels[i];
        if y >= c {
            return Err(Error::InvalidParam(format!(
                "label {y} out of range for {c} classes"
            )));
        }
        let f_norm = norm(f);
        if f_norm == 0.0 {
            return Err(Error::InvalidParam(format!("zero-norm feature row {i}")));
        }
        let f_hat: Vec<f64> = f.iter().map(|v| v / f_norm).collect();
        let cosines: Vec<f64> = (0..c).map(|j| dot(&f_hat, &w_hat[j]).clamp(-1.0, 1.0)).collect();

        let cos_y = cosines[y];
        // Margin branch: d(target logit)/d(cos theta_y) alongside the value.
        let (target_logit, dtarget_dcos) = if cos_y <= clamp_cos {
            (-1.0, 0.0)
        } else {
            let sin_y = (1.0 - cos_y * cos_y).max(0.0).sqrt();
            let deriv = if sin_m == 0.0 {
                cos_m
            } else {
                cos_m + cos_y / sin_y * sin_m
            };
            (cos_y * cos_m - sin_y * sin_m, deriv)
        };

        let mut logits: Vec<f64> = cosines.iter().map(|&x| s * x).collect();
        logits[y] = s * target_logit;

        let max_logit = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max_logit).exp()).collect();
        let denom: f64 = exps.iter().sum();
        loss += -(logits[y] - max_logit - denom.ln()) * inv_n;

        for j in 0..c {
            let p = exps[j] / denom;
            let dl_dz = (p - if j == y { 1.0 } else { 0.0 }) * inv_n;
            let dz_dcos = s * if j == y { dtarget_dcos } else { 1.0 };
            let g = dl_dz * dz_dcos;
            if g == 0.0 {
                continue;
            }
            for k in 0..d {
                feature_grads[i][k] += g * (w_hat[j][k] - cosines[j] * f_hat[k]) / f_norm;
                weight_grads[j * d + k] += g * (f_hat[k] - cosines[j] * w_hat[j][k]) / w_norms[j];
            }
        }
    }

    if !loss.is_finite() {
        return Err(Error::NonFinite("arcface loss".into()));
    }
    Ok(ArcFaceOutput {
        loss,
        feature_grads,
        weight_grads,
    })
}
