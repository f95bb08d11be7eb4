//! The training objective: imbalance-corrected pair weights, the weighted
//! pairwise (likelihood) loss, the weighted contrastive loss over the
//! combined distance, and their batch reduction with gradients.
//!
//! Forward inner products between codes are exact binary values; the backward
//! pass replaces the binarization with its hard-tanh surrogate gated by the
//! straight-through estimator (see [`crate::codec::ste_gate`]).

use crate::codec::{htan, ste_gate};
use crate::dataset::PairBatch;
use crate::encoder::HashActivation;
use crate::error::{Error, Result};

/// Loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Sigmoid scale on code inner products.
    pub alpha: f64,
    /// Contrastive margin for dissimilar pairs.
    pub margin: f64,
    /// Weight on the contrastive component.
    pub lambda: f64,
    /// Weight on the pairwise component.
    pub beta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 1.0,
            margin: 1.0,
            lambda: 0.7,
            beta: 0.3,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("margin", self.margin),
            ("lambda", self.lambda),
            ("beta", self.beta),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("loss parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Weighted contrastive + weighted pairwise loss over D = d_euc + l_p.
    Wcl,
    /// Plain contrastive baseline: unit weights, no pairwise term.
    Tcl,
}

impl std::str::FromStr for LossMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wcl" => Ok(LossMode::Wcl),
            "tcl" => Ok(LossMode::Tcl),
            other => Err(Error::Config(format!("loss_mode must be wcl or tcl, got {other:?}"))),
        }
    }
}

/// Per-pair loss diagnostics.
#[derive(Debug, Clone)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub similar: bool,
    pub weight: f64,
    pub d_euc: f64,
    pub l_p: f64,
    pub c_loss: f64,
}

/// Batch loss value plus gradients w.r.t. each item's hash activation,
/// split by path: the exact Euclidean-distance path and the STE surrogate
/// path through the code inner products.
#[derive(Debug)]
pub struct TotalLoss {
    pub loss: f64,
    pub grad_euc: Vec<Vec<f64>>,
    pub grad_ste: Vec<Vec<f64>>,
    pub terms: Vec<PairTerm>,
}

impl TotalLoss {
    /// Combined training gradient for item `i`.
    pub fn grad(&self, i: usize) -> Vec<f64> {
        self.grad_euc[i]
            .iter()
            .zip(&self.grad_ste[i])
            .map(|(a, b)| a + b)
            .collect()
    }
}

/// Numerically stable softplus: ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|).
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-ratio weight correcting the similar/dissimilar pair imbalance.
///
/// w = ln((N_s + N_d) / (s*N_s + (1-s)*N_d)), so the rarer kind of pair gets
/// the larger weight.
pub fn pair_weight(similar: bool, n_similar: u64, n_dissimilar: u64) -> Result<f64> {
    if n_similar == 0 || n_dissimilar == 0 {
        return Err(Error::DegenerateBalance {
            n_similar,
            n_dissimilar,
        });
    }
    let total = (n_similar + n_dissimilar) as f64;
    let denom = if similar { n_similar } else { n_dissimilar } as f64;
    Ok((total / denom).ln())
}

/// Weighted pairwise loss for one pair: w * (softplus(alpha*z) - alpha*s*z).
///
/// Evaluated through the reflection identity softplus(x) - s*x =
/// softplus((1-2s)*x) for s in {0,1}, which keeps the similar-pair branch
/// accurate where softplus(alpha*z) saturates to alpha*z.
pub fn pairwise_term(z: f64, similar: bool, weight: f64, alpha: f64) -> f64 {
    let sign = if similar { -1.0 } else { 1.0 };
    weight * softplus(sign * alpha * z)
}

/// Derivative of [`pairwise_term`] in z.
fn pairwise_term_dz(z: f64, similar: bool, weight: f64, alpha: f64) -> f64 {
    let s = similar as u8 as f64;
    weight * alpha * (sigmoid(alpha * z) - s)
}

/// Squared Euclidean distance between two activation vectors.
pub fn euclidean_sq(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "euclidean_sq over lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Contrastive hinge over the combined distance D = d_euc + l_p:
/// c = s*D/2 + (1-s)*max(0, p - D)/2.
pub fn contrastive_term(d_euc: f64, l_p: f64, similar: bool, margin: f64) -> f64 {
    let d_tot = d_euc + l_p;
    if similar {
        0.5 * d_tot
    } else {
        0.5 * (margin - d_tot).max(0.0)
    }
}

/// Mean-centering transpose: g - mean(g). Backward of u' = v - mean(v).
fn center_transpose(g: &[f64]) -> Vec<f64> {
    let m = g.iter().sum::<f64>() / g.len() as f64;
    g.iter().map(|x| x - m).collect()
}

/// Batch loss with mean reduction over pairs, plus per-item gradients.
///
/// In `Wcl` mode the loss is (lambda * sum c + beta * sum l_p) / P. The
/// Euclidean path differentiates exactly; the inner-product path treats z as
/// sum_k Htan(u'_i[k]) * Htan(u'_j[k]) in backward only, with the forward z
/// kept exactly binary. `Tcl` mode is the plain contrastive baseline on
/// d_euc alone with unit weights.
pub fn total_loss(batch: &PairBatch, cfg: &LossConfig, mode: LossMode) -> Result<TotalLoss> {
    if batch.pairs.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_items = batch.activations.len();
    let k = batch
        .activations
        .first()
        .map(|a| a.len())
        .ok_or(Error::EmptyBatch)?;

    let pair_count = batch.pairs.len() as f64;
    let mut loss = 0.0;
    let mut grad_euc = vec![vec![0.0; k]; n_items];
    // accumulated w.r.t. the centered pre-activation; centering transpose
    // is applied once per item at the end (it is linear)
    let mut grad_u = vec![vec![0.0; k]; n_items];
    let mut terms = Vec::with_capacity(batch.pairs.len());

    for pair in &batch.pairs {
        let (i, j) = (pair.i, pair.j);
        if i >= n_items || j >= n_items {
            return Err(Error::ShapeMismatch(format!(
                "pair ({i}, {j}) out of range for batch of {n_items}"
            )));
        }
        let vi = batch.activations[i].v_h();
        let vj = batch.activations[j].v_h();
        let d_euc = euclidean_sq(vi, vj)?;

        let (weight, l_p, dz) = match mode {
            LossMode::Wcl => {
                let z = batch.codes[i].inner_product(&batch.codes[j])? as f64;
                let w = pair.weight;
                (
                    w,
                    pairwise_term(z, pair.similar, w, cfg.alpha),
                    pairwise_term_dz(z, pair.similar, w, cfg.alpha),
                )
            }
            LossMode::Tcl => (1.0, 0.0, 0.0),
        };

        let c_loss = contrastive_term(d_euc, l_p, pair.similar, cfg.margin);
        let (lambda, beta) = match mode {
            LossMode::Wcl => (cfg.lambda, cfg.beta),
            LossMode::Tcl => (1.0, 0.0),
        };
        loss += (lambda * c_loss + beta * l_p) / pair_count;

        // dL/dD for this pair; the hinge subgradient at D == margin is 0
        let d_tot = d_euc + l_p;
        let s = pair.similar as u8 as f64;
        let hinge_active = !pair.similar && d_tot < cfg.margin;
        let g_d =
            lambda / pair_count * (0.5 * s - 0.5 * (1.0 - s) * if hinge_active { 1.0 } else { 0.0 });

        // Euclidean path: dD/dv_i = 2 (v_i - v_j)
        for m in 0..k {
            let diff = 2.0 * (vi[m] - vj[m]);
            grad_euc[i][m] += g_d * diff;
            grad_euc[j][m] -= g_d * diff;
        }

        // STE path: z enters through both c_loss (via D) and the beta term
        if matches!(mode, LossMode::Wcl) {
            let g_z = (g_d + beta / pair_count) * dz;
            let ui = batch.activations[i].centered();
            let uj = batch.activations[j].centered();
            let gi: Vec<f64> = uj.iter().map(|&u| g_z * htan(u)).collect();
            let gj: Vec<f64> = ui.iter().map(|&u| g_z * htan(u)).collect();
            for (acc, g) in grad_u[i].iter_mut().zip(ste_gate(&gi, ui)) {
                *acc += g;
            }
            for (acc, g) in grad_u[j].iter_mut().zip(ste_gate(&gj, uj)) {
                *acc += g;
            }
        }

        terms.push(PairTerm {
            i,
            j,
            similar: pair.similar,
            weight,
            d_euc,
            l_p,
            c_loss,
        });
    }

    let grad_ste = grad_u.iter().map(|g| center_transpose(g)).collect();
    Ok(TotalLoss {
        loss,
        grad_euc,
        grad_ste,
        terms,
    })
}

/// Convenience used by tests and the trainer: activations -> codes -> batch.
pub fn activations_to_codes(activations: &[HashActivation]) -> Vec<crate::codec::HashCode> {
    activations.iter().map(|a| a.code()).collect()
}
