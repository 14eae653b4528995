//! CSV and JSON outputs of training and evaluation runs.

use etscl_core::evidence::MassSet;
use etscl_core::loss::LossReport;
use etscl_core::metrics::ConfusionMatrix;
use etscl_core::pipeline::SampleOutcome;
use serde::{Deserialize, Serialize};

pub const LOSS_HEADER: &str = "epoch,l_cfp,l_oct,l_vessel,l_fusion,total,lambda";

pub fn loss_report_csv(history: &[LossReport]) -> String {
    let mut out = format!("{LOSS_HEADER}\n");
    for (epoch, r) in history.iter().enumerate() {
        out += &format!("{epoch},{},{},{},{},{},{}\n", r.l_cfp, r.l_oct, r.l_vessel, r.l_fusion, r.total, r.lambda);
    }
    out
}

pub fn embed_loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (epoch, l) in losses.iter().enumerate() {
        out += &format!("{epoch},{l}\n");
    }
    out
}

/// Rows are true classes, columns predicted classes.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let k = cm.n_classes();
    let mut out = String::from("true\\pred");
    for j in 0..k {
        out += &format!(",{j}");
    }
    out.push('\n');
    for (i, row) in cm.rows().enumerate() {
        out += &i.to_string();
        for c in row {
            out += &format!(",{c}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionLine {
    pub id: u64,
    pub label: usize,
    pub pred: usize,
    pub probs: Vec<f64>,
    pub uncertainty: f64,
    pub uncertainty_cfp: f64,
    pub uncertainty_oct: f64,
    pub uncertainty_vessel: f64,
    pub conflict: bool,
}

impl From<&SampleOutcome> for PredictionLine {
    fn from(s: &SampleOutcome) -> Self {
        let u = |i: usize| s.opinions[i].to_mass().uncertainty();
        PredictionLine {
            id: s.id,
            label: s.label,
            pred: s.fused.class_index,
            probs: s.fused.probs.clone(),
            uncertainty: s.fused.uncertainty,
            uncertainty_cfp: u(0),
            uncertainty_oct: u(1),
            uncertainty_vessel: u(2),
            conflict: s.conflict,
        }
    }
}

pub fn predictions_jsonl(samples: &[SampleOutcome]) -> String {
    samples
        .iter()
        .map(|s| serde_json::to_string(&PredictionLine::from(s)).expect("predictions serialize") + "\n")
        .collect()
}

/// `{"b": [...], "u": x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassJson {
    pub b: Vec<f64>,
    pub u: f64,
}

impl MassJson {
    pub fn to_mass(&self) -> etscl_core::Result<MassSet> {
        MassSet::new(self.b.clone(), self.u)
    }
}

impl From<&MassSet> for MassJson {
    fn from(m: &MassSet) -> Self {
        MassJson { b: m.belief().to_vec(), u: m.uncertainty() }
    }
}

/// Fused mass with its predicted class, as printed by `fuse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedJson {
    pub b: Vec<f64>,
    pub u: f64,
    pub pred: usize,
}
