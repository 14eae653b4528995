//! Stage-two evidential heads trained jointly through the fusion loss.

use alloc::vec;
use alloc::vec::Vec;

use crate::evidence::{
    fuse_all_backward, fuse_all_traced, mass_to_opinion_backward, opinion_to_mass_backward, DirichletOpinion,
    EvidenceVector,
};
use crate::loss::{anneal_coefficient, sample_loss_gradient_with, sample_loss_with, KlTarget, LossReport, OneHot};
use crate::nn::{Activation, AdamConfig, AdamState, Gradients, Mlp};
use crate::{rng, Error, Modality, Result, N_MODALITIES};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub anneal_epochs: usize,
    pub seed: u64,
    /// Optional hidden ReLU layer between the embedding and the evidence output.
    pub hidden: Option<usize>,
    pub kl_target: KlTarget,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { epochs: 200, lr: 1e-3, anneal_epochs: 10, seed: 0, hidden: None, kl_target: KlTarget::Adjusted }
    }
}

/// One Softplus evidence head per modality.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidentialHeads {
    heads: [Mlp; N_MODALITIES],
}

/// Opinions of every branch and their fusion for one sample.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub opinions: [DirichletOpinion; N_MODALITIES],
    pub fused: DirichletOpinion,
}

impl EvidentialHeads {
    pub fn new(heads: [Mlp; N_MODALITIES]) -> Result<Self> {
        let k = heads[0].output_dim();
        for h in &heads {
            if h.output_dim() != k {
                return Err(Error::DimensionMismatch { expected: k, found: h.output_dim() });
            }
            if h.layers().last().map(|l| l.activation()) != Some(Activation::Softplus) {
                return Err(Error::InvalidArgument("evidence heads must end in a Softplus layer".into()));
            }
        }
        if k < 2 {
            return Err(Error::TooFewClasses(k));
        }
        Ok(EvidentialHeads { heads })
    }

    pub fn init(input_dims: [usize; N_MODALITIES], n_classes: usize, hidden: Option<usize>, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed, "init/heads");
        let mut build = |d: usize| match hidden {
            Some(h) => Mlp::init(&[d, h, n_classes], &[Activation::Relu, Activation::Softplus], &mut r),
            None => Mlp::init(&[d, n_classes], &[Activation::Softplus], &mut r),
        };
        let heads = [build(input_dims[0])?, build(input_dims[1])?, build(input_dims[2])?];
        EvidentialHeads::new(heads)
    }

    pub fn head(&self, m: Modality) -> &Mlp {
        &self.heads[m.index()]
    }

    pub fn heads(&self) -> &[Mlp; N_MODALITIES] {
        &self.heads
    }

    pub fn n_classes(&self) -> usize {
        self.heads[0].output_dim()
    }

    pub fn evidence(&self, m: Modality, x: &[f64]) -> Result<EvidenceVector> {
        EvidenceVector::new(self.heads[m.index()].predict(x)?)
    }

    /// Evidence per branch, then fusion in CFP, OCT, Vessel order.
    pub fn forward_sample(&self, inputs: [&[f64]; N_MODALITIES]) -> Result<SampleForward> {
        let mut opinions = Vec::with_capacity(N_MODALITIES);
        for m in Modality::ALL {
            opinions.push(DirichletOpinion::from_evidence(&self.evidence(m, inputs[m.index()])?));
        }
        let masses: Vec<_> = opinions.iter().map(|o| o.to_mass()).collect();
        let fused = crate::evidence::fuse_all(&masses)?.to_opinion()?;
        let opinions: [DirichletOpinion; N_MODALITIES] = opinions.try_into().expect("three branches");
        Ok(SampleForward { opinions, fused })
    }
}

/// Loss of the fused opinion and its gradient with respect to each branch's evidence,
/// through the mass mapping, the reduced Dempster fold and back.
pub fn fused_branch_gradients(
    evidence: &[EvidenceVector],
    y: &OneHot,
    lambda: f64,
    kl_target: KlTarget,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let opinions: Vec<DirichletOpinion> = evidence.iter().map(DirichletOpinion::from_evidence).collect();
    let masses: Vec<_> = opinions.iter().map(|o| o.to_mass()).collect();
    let trace = fuse_all_traced(&masses)?;
    let fused_mass = trace.fused();
    let fused = fused_mass.to_opinion()?;
    let loss = sample_loss_with(&fused, y, lambda, kl_target)?;
    let g_alpha = sample_loss_gradient_with(&fused, y, lambda, kl_target)?;
    let g_mass = mass_to_opinion_backward(fused_mass, &g_alpha);
    let grads = fuse_all_backward(&trace, &g_mass)
        .iter()
        .zip(&opinions)
        .map(|(g, o)| opinion_to_mass_backward(o, g))
        .collect();
    Ok((loss, grads))
}

/// Trained heads and the per-epoch loss history.
#[derive(Debug, Clone)]
pub struct ClassifierRun {
    pub heads: EvidentialHeads,
    pub history: Vec<LossReport>,
}

/// Full-batch joint training of the three heads on the summed branch and fusion losses.
///
/// `embeddings[m][i]` is sample `i` in modality `m`. The loss reported for an
/// epoch is evaluated with the parameters at the start of that epoch.
pub fn train_classifier(
    embeddings: [&[Vec<f64>]; N_MODALITIES],
    labels: &[usize],
    n_classes: usize,
    config: &ClassifierConfig,
) -> Result<ClassifierRun> {
    let n = labels.len();
    for e in &embeddings {
        if e.len() != n {
            return Err(Error::DimensionMismatch { expected: n, found: e.len() });
        }
    }
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let one_hot: Vec<OneHot> = labels.iter().map(|c| OneHot::new(*c, n_classes)).collect::<Result<_>>()?;
    let dims = [embeddings[0][0].len(), embeddings[1][0].len(), embeddings[2][0].len()];
    let mut heads = EvidentialHeads::init(dims, n_classes, config.hidden, config.seed)?;
    let adam = AdamConfig { lr: config.lr, ..AdamConfig::default() };
    let mut optimizers: Vec<AdamState> = heads.heads.iter().map(|h| AdamState::new(h, adam)).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let lambda = anneal_coefficient(epoch, config.anneal_epochs)?;
        let mut grads: Vec<Gradients> = heads.heads.iter().map(Gradients::zeros_like).collect();
        let mut sums = [0.0; N_MODALITIES + 1];
        for (i, y) in one_hot.iter().enumerate() {
            let mut step = || -> Result<()> {
                let mut caches = Vec::with_capacity(N_MODALITIES);
                let mut evidence = Vec::with_capacity(N_MODALITIES);
                for m in 0..N_MODALITIES {
                    let (out, cache) = heads.heads[m].forward(&embeddings[m][i])?;
                    evidence.push(EvidenceVector::new(out)?);
                    caches.push(cache);
                }
                let (fused_loss, mut upstream) = fused_branch_gradients(&evidence, y, lambda, config.kl_target)?;
                sums[N_MODALITIES] += fused_loss;
                for m in 0..N_MODALITIES {
                    let o = DirichletOpinion::from_evidence(&evidence[m]);
                    sums[m] += sample_loss_with(&o, y, lambda, config.kl_target)?;
                    let own = sample_loss_gradient_with(&o, y, lambda, config.kl_target)?;
                    upstream[m].iter_mut().zip(own).for_each(|(a, b)| *a += b);
                    let (g, _) = heads.heads[m].backward(&caches[m], &upstream[m])?;
                    grads[m].add_assign(&g);
                }
                Ok(())
            };
            step().map_err(|e| e.at_sample(i))?;
        }
        history.push(LossReport::from_components(sums[0], sums[1], sums[2], sums[3], lambda));
        for ((head, opt), g) in heads.heads.iter_mut().zip(optimizers.iter_mut()).zip(&grads) {
            opt.step(head, g)?;
        }
    }
    Ok(ClassifierRun { heads, history })
}

impl ClassifierRun {
    /// Loss report of the trained heads at the final annealing coefficient.
    pub fn final_loss(&self, embeddings: [&[Vec<f64>]; N_MODALITIES], labels: &[usize], lambda: f64) -> Result<LossReport> {
        let k = self.heads.n_classes();
        let mut per: [Vec<DirichletOpinion>; N_MODALITIES] = [vec![], vec![], vec![]];
        let mut fused = Vec::with_capacity(labels.len());
        let mut ys = Vec::with_capacity(labels.len());
        for (i, c) in labels.iter().enumerate() {
            let f = self
                .heads
                .forward_sample([&embeddings[0][i], &embeddings[1][i], &embeddings[2][i]])
                .map_err(|e| e.at_sample(i))?;
            for (slot, o) in per.iter_mut().zip(f.opinions) {
                slot.push(o);
            }
            fused.push(f.fused);
            ys.push(OneHot::new(*c, k)?);
        }
        crate::loss::total_loss([&per[0], &per[1], &per[2]], &fused, &ys, lambda)
    }
}
