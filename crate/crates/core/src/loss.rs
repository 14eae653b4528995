//! Evidential training objectives on Dirichlet opinions.
//!
//! The per-sample loss is the expected squared error of a one-hot label under
//! `Dir(α)` plus an annealed KL penalty towards the uniform Dirichlet.

use alloc::format;
use alloc::vec::Vec;

use crate::evidence::{DirichletOpinion, EvidenceVector};
use crate::special::{digamma, ln_gamma, trigamma};
use crate::{Error, Result};

/// One-hot class indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    class: usize,
    n_classes: usize,
}

impl OneHot {
    pub fn new(class: usize, n_classes: usize) -> Result<Self> {
        if n_classes < 2 {
            return Err(Error::TooFewClasses(n_classes));
        }
        if class >= n_classes {
            return Err(Error::InvalidArgument(format!("class {class} out of range for {n_classes} classes")));
        }
        Ok(OneHot { class, n_classes })
    }

    /// Accepts an indicator vector with exactly one entry equal to 1 and the rest 0.
    pub fn from_indicator(y: &[f64]) -> Result<Self> {
        let ones: Vec<usize> = y.iter().enumerate().filter(|(_, v)| **v == 1.0).map(|(i, _)| i).collect();
        if ones.len() != 1 || y.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::InvalidArgument(format!("{y:?} is not a one-hot indicator")));
        }
        OneHot::new(ones[0], y.len())
    }

    pub fn class(&self) -> usize {
        self.class
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, j: usize) -> f64 {
        if j == self.class {
            1.0
        } else {
            0.0
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        (0..self.n_classes).map(|j| self.get(j)).collect()
    }
}

fn check_dims(o: &DirichletOpinion, y: &OneHot) -> Result<()> {
    if o.n_classes() != y.n_classes() {
        return Err(Error::DimensionMismatch { expected: o.n_classes(), found: y.n_classes() });
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("annealing coefficient {lambda} outside [0, 1]")));
    }
    Ok(())
}

/// `E_{μ~Dir(α)} ‖y − μ‖²` in closed form:
/// `Σ_j (y_j − α_j/S)² + α_j(S − α_j) / (S²(S + 1))`.
pub fn mse_term(o: &DirichletOpinion, y: &OneHot) -> Result<f64> {
    check_dims(o, y)?;
    let s = o.strength();
    Ok(o
        .alpha()
        .iter()
        .enumerate()
        .map(|(j, a)| {
            let p = a / s;
            let err = y.get(j) - p;
            err * err + a * (s - a) / (s * s * (s + 1.0))
        })
        .sum())
}

/// `KL[Dir(α) ‖ Dir(1)]`.
pub fn kl_to_uniform(o: &DirichletOpinion) -> f64 {
    let s = o.strength();
    let k = o.n_classes() as f64;
    let psi_s = digamma(s);
    let mut kl = ln_gamma(s) - ln_gamma(k);
    for a in o.alpha() {
        kl += (a - 1.0) * (digamma(*a) - psi_s) - ln_gamma(*a);
    }
    // exact zero at α = 1 can come out as -1e-16
    kl.max(0.0)
}

/// `∂ KL[Dir(α) ‖ Dir(1)] / ∂α_j = (α_j − 1) ψ'(α_j) − (S − K) ψ'(S)`.
pub fn kl_to_uniform_gradient(o: &DirichletOpinion) -> Vec<f64> {
    let s = o.strength();
    let excess = s - o.n_classes() as f64;
    let tri_s = trigamma(s);
    o.alpha().iter().map(|a| (a - 1.0) * trigamma(*a) - excess * tri_s).collect()
}

/// Removes the true-class evidence: `α̃ = y + (1 − y) ⊙ α`.
pub fn adjusted_alpha(o: &DirichletOpinion, y: &OneHot) -> Result<DirichletOpinion> {
    check_dims(o, y)?;
    let mut alpha = o.alpha().to_vec();
    alpha[y.class()] = 1.0;
    DirichletOpinion::new(alpha)
}

/// Linear warm-up `λ = min(1, epoch / anneal_epochs)`.
pub fn anneal_coefficient(epoch: usize, anneal_epochs: usize) -> Result<f64> {
    if anneal_epochs == 0 {
        return Err(Error::InvalidArgument("anneal_epochs must be at least 1".into()));
    }
    Ok((epoch as f64 / anneal_epochs as f64).min(1.0))
}

/// Which Dirichlet the KL penalty is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlTarget {
    /// True-class parameter reset to 1 before the penalty.
    #[default]
    Adjusted,
    /// The raw opinion.
    Raw,
}

/// Per-sample loss `MSE + λ · KL` with the chosen KL target.
pub fn sample_loss_with(o: &DirichletOpinion, y: &OneHot, lambda: f64, target: KlTarget) -> Result<f64> {
    check_lambda(lambda)?;
    let mse = mse_term(o, y)?;
    if lambda == 0.0 {
        return Ok(mse);
    }
    let kl = match target {
        KlTarget::Adjusted => kl_to_uniform(&adjusted_alpha(o, y)?),
        KlTarget::Raw => kl_to_uniform(o),
    };
    Ok(mse + lambda * kl)
}

pub fn sample_loss(o: &DirichletOpinion, y: &OneHot, lambda: f64) -> Result<f64> {
    sample_loss_with(o, y, lambda, KlTarget::Adjusted)
}

/// `∂ mse_term / ∂α`.
pub fn mse_gradient(o: &DirichletOpinion, y: &OneHot) -> Result<Vec<f64>> {
    check_dims(o, y)?;
    // With p = α/S the loss is Σ(y − p)² + (1 − Σp²)/(S + 1).
    let s = o.strength();
    let probs = o.expected_probabilities();
    let sum_sq: f64 = probs.iter().map(|p| p * p).sum();
    let dp: Vec<f64> = probs.iter().enumerate().map(|(j, p)| -2.0 * (y.get(j) - p) - 2.0 * p / (s + 1.0)).collect();
    let mean_dp: f64 = dp.iter().zip(&probs).map(|(g, p)| g * p).sum();
    let ds = -(1.0 - sum_sq) / ((s + 1.0) * (s + 1.0));
    Ok(dp.iter().map(|g| (g - mean_dp) / s + ds).collect())
}

/// `∂ sample_loss / ∂α`.
pub fn sample_loss_gradient_with(o: &DirichletOpinion, y: &OneHot, lambda: f64, target: KlTarget) -> Result<Vec<f64>> {
    check_lambda(lambda)?;
    let mut grad = mse_gradient(o, y)?;
    if lambda == 0.0 {
        return Ok(grad);
    }
    let kl_grad = match target {
        KlTarget::Adjusted => {
            let mut g = kl_to_uniform_gradient(&adjusted_alpha(o, y)?);
            g[y.class()] = 0.0;
            g
        }
        KlTarget::Raw => kl_to_uniform_gradient(o),
    };
    for (g, k) in grad.iter_mut().zip(kl_grad) {
        *g += lambda * k;
    }
    Ok(grad)
}

pub fn sample_loss_gradient(o: &DirichletOpinion, y: &OneHot, lambda: f64) -> Result<Vec<f64>> {
    sample_loss_gradient_with(o, y, lambda, KlTarget::Adjusted)
}

/// `∂ sample_loss / ∂e`; identical to the α gradient since `α = e + 1`.
pub fn loss_gradient_wrt_evidence(e: &EvidenceVector, y: &OneHot, lambda: f64) -> Result<Vec<f64>> {
    sample_loss_gradient(&DirichletOpinion::from_evidence(e), y, lambda)
}

/// The four summed loss components of one pass over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub l_cfp: f64,
    pub l_oct: f64,
    pub l_vessel: f64,
    pub l_fusion: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossReport {
    pub fn from_components(l_cfp: f64, l_oct: f64, l_vessel: f64, l_fusion: f64, lambda: f64) -> Self {
        LossReport { l_cfp, l_oct, l_vessel, l_fusion, total: l_cfp + l_oct + l_vessel + l_fusion, lambda }
    }
}

/// Sums the per-sample loss over each branch and the fusion, in sample order.
pub fn total_loss(
    per_modality: [&[DirichletOpinion]; 3],
    fused: &[DirichletOpinion],
    labels: &[OneHot],
    lambda: f64,
) -> Result<LossReport> {
    check_lambda(lambda)?;
    let n = labels.len();
    for len in per_modality.iter().map(|m| m.len()).chain(core::iter::once(fused.len())) {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, found: len });
        }
    }
    let branch = |opinions: &[DirichletOpinion]| -> Result<f64> {
        let mut sum = 0.0;
        for (i, (o, y)) in opinions.iter().zip(labels).enumerate() {
            sum += sample_loss(o, y, lambda).map_err(|e| e.at_sample(i))?;
        }
        Ok(sum)
    };
    Ok(LossReport::from_components(
        branch(per_modality[0])?,
        branch(per_modality[1])?,
        branch(per_modality[2])?,
        branch(fused)?,
        lambda,
    ))
}
