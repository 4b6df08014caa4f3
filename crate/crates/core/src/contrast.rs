//! Local-global query contrast.
//!
//! Both views of every query are projected onto the unit sphere and compared
//! with a temperature-scaled supervised contrastive loss. Cross-view losses
//! treat the same query index as a positive; same-view losses use queries
//! sharing the ground-truth object.

use candle_core::{DType, Device, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::dataset::EntityId;
use crate::error::{LogclError, Result};
use crate::nn::{normalize_rows, Linear, ParamStore};

/// Denominator mask value for excluded pairs.
const EXCLUDED: f64 = -1e9;
const NORM_EPS: f64 = 1e-12;

/// Two-layer perceptron followed by L2 normalization.
#[derive(Clone, Debug)]
pub struct ProjectionHead {
    pub hidden: Linear,
    pub output: Linear,
}

impl ProjectionHead {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, proj_dim: usize) -> Result<Self> {
        Ok(Self {
            hidden: Linear::new(store, &format!("{name}.hidden"), 2 * dim, dim, true)?,
            output: Linear::new(store, &format!("{name}.output"), dim, proj_dim, true)?,
        })
    }

    /// Projects `[h || r]` onto the unit sphere. The second value counts rows whose
    /// pre-normalization norm was below the epsilon guard.
    pub fn project(&self, h: &Tensor, r: &Tensor) -> Result<(Tensor, usize)> {
        let x = Tensor::cat(&[h, r], D::Minus1)?;
        let raw = self.output.forward(&self.hidden.forward(&x)?.relu()?)?;
        let norms: Vec<f64> = raw.detach().to_dtype(DType::F64)?.sqr()?.sum(D::Minus1)?.sqrt()?.to_vec1()?;
        let degenerate = norms.iter().filter(|&&n| n < NORM_EPS).count();
        Ok((normalize_rows(&raw, NORM_EPS)?, degenerate))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum View {
    /// Anchors and candidates come from different encoders; the anchor's own
    /// index is always a positive and stays in the denominator.
    Cross,
    /// Same encoder; the anchor itself is excluded everywhere.
    Same,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossPositives {
    /// Same index plus every candidate with the anchor's label.
    IndexAndLabel,
    IndexOnly,
}

/// Positive weights `W[i][j] = 1/|P(i)|` and the additive denominator mask.
pub fn contrast_masks(labels: &[EntityId], view: View, cross: CrossPositives) -> (Vec<f64>, Vec<f64>) {
    let n = labels.len();
    let mut weights = vec![0.0; n * n];
    let mut mask = vec![0.0; n * n];
    for i in 0..n {
        let mut positives = Vec::new();
        for j in 0..n {
            let allowed = view == View::Cross || j != i;
            if !allowed {
                mask[i * n + j] = EXCLUDED;
                continue;
            }
            let positive = match view {
                View::Cross => j == i || (cross == CrossPositives::IndexAndLabel && labels[j] == labels[i]),
                View::Same => labels[j] == labels[i],
            };
            if positive {
                positives.push(j);
            }
        }
        let w = if positives.is_empty() { 0.0 } else { 1.0 / positives.len() as f64 };
        for j in positives {
            weights[i * n + j] = w;
        }
    }
    (weights, mask)
}

/// Supervised contrastive loss
/// `-(1/N) sum_i 1/|P(i)| sum_{j in P(i)} log( exp(a_i.c_j/tau) / sum_k exp(a_i.c_k/tau) )`.
/// Anchors without positives contribute zero.
pub fn supcon_loss(
    anchors: &Tensor,
    candidates: &Tensor,
    labels: &[EntityId],
    tau: f64,
    view: View,
    cross: CrossPositives,
) -> Result<Tensor> {
    if !(tau > 0.0) {
        return Err(LogclError::InvalidArgument(format!("temperature must be positive, got {tau}")));
    }
    let (n, _) = anchors.dims2()?;
    if candidates.dims2()?.0 != n || labels.len() != n {
        return Err(LogclError::Shape(format!(
            "contrast batch: {n} anchors, {} candidates, {} labels",
            candidates.dims2()?.0,
            labels.len()
        )));
    }
    let dtype = anchors.dtype();
    let device: &Device = anchors.device();
    if n == 0 {
        return Ok(Tensor::zeros((), dtype, device)?);
    }
    let (weights, mask) = contrast_masks(labels, view, cross);
    let weights = Tensor::from_vec(weights, (n, n), device)?.to_dtype(dtype)?;
    let mask = Tensor::from_vec(mask, (n, n), device)?.to_dtype(dtype)?;

    let sim = (anchors.matmul(&candidates.t()?)? / tau)?;
    let masked = (&sim + mask)?;
    let max = masked.max_keepdim(D::Minus1)?.detach();
    let lse = (masked.broadcast_sub(&max)?.exp()?.sum_keepdim(D::Minus1)?.log()? + max)?;
    let log_prob = sim.broadcast_sub(&lse)?;
    Ok(((log_prob * weights)?.sum_all()? / -(n as f64))?)
}

#[derive(Clone, Debug)]
pub struct ContrastLosses {
    pub local_global: Tensor,
    pub global_local: Tensor,
    pub local_local: Tensor,
    pub global_global: Tensor,
    pub total: Tensor,
}

/// Average of the four view combinations.
pub fn contrastive_total(
    z_local: &Tensor,
    z_global: &Tensor,
    labels: &[EntityId],
    tau: f64,
    cross: CrossPositives,
) -> Result<ContrastLosses> {
    if labels.is_empty() {
        return Err(LogclError::InvalidArgument("contrast over an empty batch".into()));
    }
    let local_global = supcon_loss(z_local, z_global, labels, tau, View::Cross, cross)?;
    let global_local = supcon_loss(z_global, z_local, labels, tau, View::Cross, cross)?;
    let local_local = supcon_loss(z_local, z_local, labels, tau, View::Same, cross)?;
    let global_global = supcon_loss(z_global, z_global, labels, tau, View::Same, cross)?;
    let total = ((((&local_global + &global_local)? + &local_local)? + &global_global)? / 4.0)?;
    Ok(ContrastLosses {
        local_global,
        global_local,
        local_local,
        global_global,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        let n = rows.len();
        let d = rows[0].len();
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::from_vec(flat, (n, d), &Device::Cpu).unwrap()
    }

    fn scalar(t: &Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn orthogonal_cross_view_pair() {
        let zl = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let zg = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let loss = supcon_loss(&zl, &zg, &[0, 1], 1.0, View::Cross, CrossPositives::IndexAndLabel).unwrap();
        let e = std::f64::consts::E;
        assert!((scalar(&loss) - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        assert!((scalar(&loss) - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn identical_candidates_same_view() {
        let n = 5;
        let rows: Vec<&[f64]> = vec![&[0.6, 0.8]; n];
        let z = m(&rows);
        let labels: Vec<usize> = (0..n).collect();
        // distinct labels leave no same-view positives
        let none = supcon_loss(&z, &z, &labels, 0.5, View::Same, CrossPositives::IndexAndLabel).unwrap();
        assert_eq!(scalar(&none), 0.0);
        let shared = vec![3; n];
        let loss = supcon_loss(&z, &z, &shared, 0.5, View::Same, CrossPositives::IndexAndLabel).unwrap();
        assert!((scalar(&loss) - ((n - 1) as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn single_query_batch() {
        let z = m(&[&[1.0, 0.0]]);
        let g = m(&[&[0.0, 1.0]]);
        let cross = supcon_loss(&z, &g, &[4], 0.07, View::Cross, CrossPositives::IndexAndLabel).unwrap();
        assert!(scalar(&cross).abs() < 1e-12);
        let losses = contrastive_total(&z, &g, &[4], 0.07, CrossPositives::IndexAndLabel).unwrap();
        assert_eq!(scalar(&losses.local_local), 0.0);
        assert_eq!(scalar(&losses.global_global), 0.0);
        let expected = (scalar(&losses.local_global) + scalar(&losses.global_local)) / 4.0;
        assert!((scalar(&losses.total) - expected).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_temperature_and_shapes() {
        let z = m(&[&[1.0, 0.0]]);
        assert!(supcon_loss(&z, &z, &[0], 0.0, View::Cross, CrossPositives::IndexOnly).is_err());
        assert!(supcon_loss(&z, &z, &[0, 1], 1.0, View::Cross, CrossPositives::IndexOnly).is_err());
    }

    #[test]
    fn index_only_ignores_shared_labels() {
        let zl = m(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let both = supcon_loss(&zl, &zl, &[7, 7], 1.0, View::Cross, CrossPositives::IndexAndLabel).unwrap();
        let index = supcon_loss(&zl, &zl, &[7, 7], 1.0, View::Cross, CrossPositives::IndexOnly).unwrap();
        let e = std::f64::consts::E;
        assert!((scalar(&index) - (-(e / (e + 1.0)).ln())).abs() < 1e-12);
        // both candidates positive: mean of -log p over the full softmax row
        let expected = -0.5 * ((e / (e + 1.0)).ln() + (1.0 / (e + 1.0)).ln());
        assert!((scalar(&both) - expected).abs() < 1e-12);
    }
}
