//! End-to-end flow: one contrastive encoder per modality, joint evidential
//! heads on the frozen pre-projection representations, then fused prediction and evaluation.

use alloc::format;
use alloc::vec::Vec;

use crate::contrastive::{train_encoder, Encoder, EncoderConfig};
use crate::evidence::{fuse_all, DirichletOpinion, MassSet, Prediction};
use crate::loss::LossReport;
use crate::metrics::{accuracy, confusion, quadratic_weighted_kappa, ConfusionMatrix};
use crate::nn::{train_classifier, ClassifierConfig, EvidentialHeads};
use crate::synth::MultiModalDataset;
use crate::{Error, Modality, Result, N_MODALITIES};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_classes: usize,
    pub encoder: EncoderConfig,
    pub classifier: ClassifierConfig,
}

impl PipelineConfig {
    /// Stage defaults with every random stream rooted at `seed`.
    pub fn with_seed(n_classes: usize, seed: u64) -> Self {
        PipelineConfig {
            n_classes,
            encoder: EncoderConfig { seed, ..EncoderConfig::default() },
            classifier: ClassifierConfig { seed, ..ClassifierConfig::default() },
        }
    }

    pub fn encoder_for(&self, m: Modality) -> EncoderConfig {
        EncoderConfig { stream_tag: m.name().into(), ..self.encoder.clone() }
    }
}

#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub encoders: [Encoder; N_MODALITIES],
    pub heads: EvidentialHeads,
    pub encoder_losses: [Vec<f64>; N_MODALITIES],
    pub classifier_history: Vec<LossReport>,
}

/// Encoder representations of every record, indexed `[modality][record]`.
pub fn represent_dataset(encoders: &[Encoder; N_MODALITIES], ds: &MultiModalDataset) -> Result<[Vec<Vec<f64>>; N_MODALITIES]> {
    let mut out: [Vec<Vec<f64>>; N_MODALITIES] = Default::default();
    for m in Modality::ALL {
        out[m.index()] = ds
            .records
            .iter()
            .enumerate()
            .map(|(i, r)| encoders[m.index()].represent(r.modality(m)).map_err(|e| e.at_sample(i)))
            .collect::<Result<_>>()?;
    }
    Ok(out)
}

pub fn train_encoders(train: &MultiModalDataset, config: &PipelineConfig) -> Result<([Encoder; N_MODALITIES], [Vec<f64>; N_MODALITIES])> {
    let labels = train.labels();
    let mut encoders = Vec::with_capacity(N_MODALITIES);
    let mut losses = Vec::with_capacity(N_MODALITIES);
    for m in Modality::ALL {
        let run = train_encoder(&train.features(m), &labels, &config.encoder_for(m))?;
        encoders.push(run.encoder);
        losses.push(run.epoch_losses);
    }
    Ok((encoders.try_into().expect("three encoders"), losses.try_into().expect("three loss curves")))
}

pub fn train_pipeline(train: &MultiModalDataset, config: &PipelineConfig) -> Result<TrainedPipeline> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (encoders, encoder_losses) = train_encoders(train, config)?;
    let emb = represent_dataset(&encoders, train)?;
    let run = train_classifier([&emb[0], &emb[1], &emb[2]], &train.labels(), config.n_classes, &config.classifier)?;
    Ok(TrainedPipeline { encoders, heads: run.heads, encoder_losses, classifier_history: run.history })
}

/// Per-sample outcome of [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutcome {
    pub id: u64,
    pub label: usize,
    pub conflict: bool,
    pub opinions: [DirichletOpinion; N_MODALITIES],
    /// Prediction from all three branches fused in CFP, OCT, Vessel order.
    pub fused: Prediction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub n_classes: usize,
    pub samples: Vec<SampleOutcome>,
}

/// Metrics for one combination of branches.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetMetrics {
    pub confusion: ConfusionMatrix,
    pub accuracy: f64,
    pub kappa: Option<f64>,
    pub mean_uncertainty: f64,
}

pub fn evaluate(heads: &EvidentialHeads, encoders: &[Encoder; N_MODALITIES], ds: &MultiModalDataset) -> Result<Evaluation> {
    let emb = represent_dataset(encoders, ds)?;
    evaluate_represented(heads, &emb, ds)
}

pub fn evaluate_represented(heads: &EvidentialHeads, emb: &[Vec<Vec<f64>>; N_MODALITIES], ds: &MultiModalDataset) -> Result<Evaluation> {
    let mut samples = Vec::with_capacity(ds.len());
    for (i, rec) in ds.records.iter().enumerate() {
        let f = heads.forward_sample([&emb[0][i], &emb[1][i], &emb[2][i]]).map_err(|e| e.at_sample(i))?;
        samples.push(SampleOutcome {
            id: rec.id,
            label: rec.label,
            conflict: rec.any_conflict(),
            fused: f.fused.predict(),
            opinions: f.opinions,
        });
    }
    Ok(Evaluation { n_classes: heads.n_classes(), samples })
}

impl Evaluation {
    /// Fuses only the given branches (in the given order) and scores the result.
    pub fn subset_metrics(&self, branches: &[Modality]) -> Result<SubsetMetrics> {
        if branches.is_empty() {
            return Err(Error::InvalidArgument("no branches selected".into()));
        }
        let mut preds = Vec::with_capacity(self.samples.len());
        let mut u_sum = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            let masses: Vec<MassSet> = branches.iter().map(|m| s.opinions[m.index()].to_mass()).collect();
            let p = fuse_all(&masses).and_then(|m| m.to_opinion()).map_err(|e| e.at_sample(i))?.predict();
            u_sum += p.uncertainty;
            preds.push(p.class_index);
        }
        let truths: Vec<usize> = self.samples.iter().map(|s| s.label).collect();
        let cm = confusion(&preds, &truths, self.n_classes)?;
        Ok(SubsetMetrics {
            accuracy: accuracy(&cm)?,
            kappa: quadratic_weighted_kappa(&cm)?,
            confusion: cm,
            mean_uncertainty: u_sum / self.samples.len() as f64,
        })
    }

    pub fn fused_metrics(&self) -> Result<SubsetMetrics> {
        self.subset_metrics(&Modality::ALL)
    }

    /// Mean fused uncertainty over samples with and without injected conflict.
    pub fn uncertainty_by_conflict(&self) -> (Option<f64>, Option<f64>) {
        let mean = |want: bool| {
            let us: Vec<f64> = self.samples.iter().filter(|s| s.conflict == want).map(|s| s.fused.uncertainty).collect();
            (!us.is_empty()).then(|| us.iter().sum::<f64>() / us.len() as f64)
        };
        (mean(false), mean(true))
    }
}

impl core::fmt::Display for SubsetMetrics {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let kappa = self.kappa.map_or_else(|| "undefined".into(), |k| format!("{k:.4}"));
        write!(f, "kappa={kappa} accuracy={:.4} mean_u={:.4}", self.accuracy, self.mean_uncertainty)
    }
}
