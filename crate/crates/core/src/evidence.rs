//! Subjective-logic opinions over `K` classes.
//!
//! Non-negative evidence `e` becomes a Dirichlet opinion with `α = e + 1`.
//! An opinion maps to a mass set of per-class beliefs `b = (α - 1) / S` and an
//! uncertainty `u = K / S`, where `S = Σα` is the Dirichlet strength. Mass sets
//! from several sources are fused with Dempster's rule restricted to singleton
//! and whole-frame focal elements.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Tolerance on `Σb + u = 1`.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Conflict at or above `1 - TOTAL_CONFLICT_MARGIN` is rejected.
pub const TOTAL_CONFLICT_MARGIN: f64 = 1e-12;

fn check_classes(k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::TooFewClasses(k));
    }
    Ok(())
}

/// Per-class support values, all finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceVector(Vec<f64>);

impl EvidenceVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_classes(values.len())?;
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidEvidence { index, value });
        }
        Ok(EvidenceVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn n_classes(&self) -> usize {
        self.0.len()
    }
}

/// Dirichlet concentration parameters with every `α_j >= 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletOpinion {
    alpha: Vec<f64>,
}

impl DirichletOpinion {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        check_classes(alpha.len())?;
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 1.0)) {
            return Err(Error::InvalidOpinion(format!("alpha component {a} is not a finite value >= 1")));
        }
        Ok(DirichletOpinion { alpha })
    }

    /// `α_j = e_j + 1`.
    pub fn from_evidence(evidence: &EvidenceVector) -> Self {
        DirichletOpinion { alpha: evidence.0.iter().map(|e| e + 1.0).collect() }
    }

    /// The all-ones opinion: no evidence for any class.
    pub fn uniform(n_classes: usize) -> Result<Self> {
        check_classes(n_classes)?;
        Ok(DirichletOpinion { alpha: vec![1.0; n_classes] })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn n_classes(&self) -> usize {
        self.alpha.len()
    }

    /// Dirichlet strength `S = Σα`.
    pub fn strength(&self) -> f64 {
        self.alpha.iter().sum()
    }

    pub fn evidence(&self) -> EvidenceVector {
        EvidenceVector(self.alpha.iter().map(|a| a - 1.0).collect())
    }

    /// Expected class probabilities `α / S`.
    pub fn expected_probabilities(&self) -> Vec<f64> {
        let s = self.strength();
        self.alpha.iter().map(|a| a / s).collect()
    }

    pub fn to_mass(&self) -> MassSet {
        let s = self.strength();
        MassSet {
            belief: self.alpha.iter().map(|a| (a - 1.0) / s).collect(),
            uncertainty: self.n_classes() as f64 / s,
        }
    }

    pub fn predict(&self) -> Prediction {
        let probs = self.expected_probabilities();
        let class_index = argmax(&probs);
        Prediction { class_index, probs, uncertainty: self.n_classes() as f64 / self.strength() }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Belief per class plus uncertainty, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MassSet {
    belief: Vec<f64>,
    uncertainty: f64,
}

impl MassSet {
    /// Validates components in `[0, 1]`, `Σb + u = 1` within [`MASS_TOLERANCE`], and `u > 0`.
    pub fn new(belief: Vec<f64>, uncertainty: f64) -> Result<Self> {
        check_classes(belief.len())?;
        let in_unit = |x: f64| x.is_finite() && (0.0..=1.0).contains(&x);
        if !belief.iter().all(|b| in_unit(*b)) || !in_unit(uncertainty) {
            return Err(Error::InvalidMass(format!("components must lie in [0, 1]: b={belief:?}, u={uncertainty}")));
        }
        let total = belief.iter().sum::<f64>() + uncertainty;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::InvalidMass(format!("masses sum to {total}, not 1")));
        }
        if uncertainty == 0.0 {
            return Err(Error::ZeroUncertainty);
        }
        Ok(MassSet { belief, uncertainty })
    }

    /// Total ignorance: `b = 0`, `u = 1`.
    pub fn vacuous(n_classes: usize) -> Result<Self> {
        check_classes(n_classes)?;
        Ok(MassSet { belief: vec![0.0; n_classes], uncertainty: 1.0 })
    }

    pub fn belief(&self) -> &[f64] {
        &self.belief
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn n_classes(&self) -> usize {
        self.belief.len()
    }

    /// `S = K / u`, `α_j = b_j S + 1`.
    pub fn to_opinion(&self) -> Result<DirichletOpinion> {
        if self.uncertainty <= 0.0 {
            return Err(Error::ZeroUncertainty);
        }
        let s = self.n_classes() as f64 / self.uncertainty;
        Ok(DirichletOpinion { alpha: self.belief.iter().map(|b| b * s + 1.0).collect() })
    }
}

/// Predicted class with its expected probabilities and uncertainty `K / S`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
}

/// Conflict `K' = Σ_{i≠j} b1_i b2_j`.
pub fn conflict(m1: &MassSet, m2: &MassSet) -> f64 {
    let mut k = 0.0;
    for (i, b1) in m1.belief.iter().enumerate() {
        for (j, b2) in m2.belief.iter().enumerate() {
            if i != j {
                k += b1 * b2;
            }
        }
    }
    k
}

/// Reduced Dempster combination of two mass sets.
pub fn combine(m1: &MassSet, m2: &MassSet) -> Result<MassSet> {
    if m1.n_classes() != m2.n_classes() {
        return Err(Error::DimensionMismatch { expected: m1.n_classes(), found: m2.n_classes() });
    }
    let k = conflict(m1, m2);
    if k >= 1.0 - TOTAL_CONFLICT_MARGIN {
        return Err(Error::TotalConflict { conflict: k });
    }
    let norm = 1.0 - k;
    let (u1, u2) = (m1.uncertainty, m2.uncertainty);
    let belief = m1
        .belief
        .iter()
        .zip(&m2.belief)
        .map(|(b1, b2)| (b1 * b2 + b1 * u2 + b2 * u1) / norm)
        .collect();
    let uncertainty = u1 * u2 / norm;
    if uncertainty == 0.0 {
        return Err(Error::ZeroUncertainty);
    }
    Ok(MassSet { belief, uncertainty })
}

/// Left fold of [`combine`] in list order.
pub fn fuse_all(masses: &[MassSet]) -> Result<MassSet> {
    let (first, rest) = masses.split_first().ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    rest.iter().try_fold(first.clone(), |acc, m| combine(&acc, m))
}

/// Gradient of a scalar with respect to the components of a mass set.
#[derive(Debug, Clone, PartialEq)]
pub struct MassGradient {
    pub belief: Vec<f64>,
    pub uncertainty: f64,
}

impl MassGradient {
    pub fn zeros(n_classes: usize) -> Self {
        MassGradient { belief: vec![0.0; n_classes], uncertainty: 0.0 }
    }
}

/// Backward pass of [`combine`], treating every belief and uncertainty as a
/// free variable. Returns the gradients for `m1` and `m2`.
pub fn combine_backward(m1: &MassSet, m2: &MassSet, upstream: &MassGradient) -> (MassGradient, MassGradient) {
    let norm = 1.0 - conflict(m1, m2);
    let (u1, u2) = (m1.uncertainty, m2.uncertainty);
    let total1: f64 = m1.belief.iter().sum();
    let total2: f64 = m2.belief.iter().sum();

    // d loss / d norm, with fused_j = numerator_j / norm
    let mut weighted = upstream.uncertainty * u1 * u2;
    for ((g, b1), b2) in upstream.belief.iter().zip(&m1.belief).zip(&m2.belief) {
        weighted += g * (b1 * b2 + b1 * u2 + b2 * u1);
    }
    let d_norm = -weighted / (norm * norm);

    let k = m1.n_classes();
    let mut g1 = MassGradient::zeros(k);
    let mut g2 = MassGradient::zeros(k);
    for j in 0..k {
        let g = upstream.belief[j];
        let (b1, b2) = (m1.belief[j], m2.belief[j]);
        // d norm / d b1_j = -(Σb2 - b2_j)
        g1.belief[j] = g * (b2 + u2) / norm - d_norm * (total2 - b2);
        g2.belief[j] = g * (b1 + u1) / norm - d_norm * (total1 - b1);
        g1.uncertainty += g * b2 / norm;
        g2.uncertainty += g * b1 / norm;
    }
    g1.uncertainty += upstream.uncertainty * u2 / norm;
    g2.uncertainty += upstream.uncertainty * u1 / norm;
    (g1, g2)
}

/// Forward fold that keeps the running fused masses for [`fuse_all_backward`].
#[derive(Debug, Clone)]
pub struct FusionTrace {
    inputs: Vec<MassSet>,
    partials: Vec<MassSet>,
}

impl FusionTrace {
    pub fn fused(&self) -> &MassSet {
        self.partials.last().expect("trace holds at least one mass set")
    }
}

pub fn fuse_all_traced(masses: &[MassSet]) -> Result<FusionTrace> {
    let (first, rest) = masses.split_first().ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    let mut partials = Vec::with_capacity(masses.len());
    partials.push(first.clone());
    for m in rest {
        let next = combine(partials.last().unwrap(), m)?;
        partials.push(next);
    }
    Ok(FusionTrace { inputs: masses.to_vec(), partials })
}

/// Gradients of a scalar with respect to every input of a traced fold.
pub fn fuse_all_backward(trace: &FusionTrace, upstream: &MassGradient) -> Vec<MassGradient> {
    let n = trace.inputs.len();
    let mut grads = vec![MassGradient::zeros(upstream.belief.len()); n];
    let mut carry = upstream.clone();
    for i in (1..n).rev() {
        let (g_acc, g_in) = combine_backward(&trace.partials[i - 1], &trace.inputs[i], &carry);
        grads[i] = g_in;
        carry = g_acc;
    }
    grads[0] = carry;
    grads
}

/// Backward pass of [`DirichletOpinion::to_mass`]: gradient with respect to `α`.
pub fn opinion_to_mass_backward(opinion: &DirichletOpinion, upstream: &MassGradient) -> Vec<f64> {
    let s = opinion.strength();
    let mass = opinion.to_mass();
    let mut shared = upstream.uncertainty * mass.uncertainty;
    for (g, b) in upstream.belief.iter().zip(&mass.belief) {
        shared += g * b;
    }
    upstream.belief.iter().map(|g| (g - shared) / s).collect()
}

/// Backward pass of [`MassSet::to_opinion`]: gradient with respect to the masses.
pub fn mass_to_opinion_backward(mass: &MassSet, grad_alpha: &[f64]) -> MassGradient {
    let k = mass.n_classes() as f64;
    let u = mass.uncertainty;
    let scale = k / u;
    let belief: Vec<f64> = grad_alpha.iter().map(|g| g * scale).collect();
    let uncertainty = -grad_alpha.iter().zip(&mass.belief).map(|(g, b)| g * b).sum::<f64>() * k / (u * u);
    MassGradient { belief, uncertainty }
}
