//! Trains the full pipeline on the default synthetic benchmark and prints
//! per-branch and fused test metrics.

use etscl_core::pipeline::{evaluate, train_pipeline, PipelineConfig};
use etscl_core::synth::{generate, split, DatasetSpec};
use etscl_core::Modality::{Cfp, Oct, Vessel};

fn main() -> Result<(), etscl_core::Error> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let spec = DatasetSpec { seed, ..DatasetSpec::default() };
    let (train, test) = split(&generate(&spec)?, 2.0 / 3.0, seed)?;
    let trained = train_pipeline(&train, &PipelineConfig::with_seed(spec.n_classes, seed))?;
    for (m, l) in [Cfp, Oct, Vessel].iter().zip(&trained.encoder_losses) {
        println!("{m} encoder loss: first {:.4} last {:.4}", l[0], l[l.len() - 1]);
    }
    let h = &trained.classifier_history;
    println!("classifier total loss: first {:.3} last {:.3}", h[0].total, h[h.len() - 1].total);
    let eval = evaluate(&trained.heads, &trained.encoders, &test)?;
    for (name, subset) in [
        ("cfp", vec![Cfp]),
        ("oct", vec![Oct]),
        ("vessel", vec![Vessel]),
        ("cfp+oct", vec![Cfp, Oct]),
        ("cfp+oct+vessel", vec![Cfp, Oct, Vessel]),
    ] {
        println!("{name:>15}: {}", eval.subset_metrics(&subset)?);
    }
    let (clean, conflict) = eval.uncertainty_by_conflict();
    println!("mean fused u: clean {clean:?} conflict {conflict:?}");
    Ok(())
}
