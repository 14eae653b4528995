//! Evidential multi-modal classification machinery.
//!
//! The crate is `no_std` (it needs `alloc`) and covers the numerical side of a
//! two-stage multi-modal classifier:
//!
//! * [`contrastive`]: supervised contrastive loss, its gradient, and the
//!   per-modality feature encoder trained with it.
//! * [`evidence`]: subjective-logic opinions built from Dirichlet evidence and
//!   the reduced Dempster rule used to fuse them.
//! * [`loss`]: closed-form evidential objectives and their gradients.
//! * [`nn`]: a small dense network with Softplus evidence heads and Adam.
//! * [`frangi`]: multiscale Hessian vesselness for 2D images.
//! * [`metrics`]: accuracy and quadratically weighted Cohen's kappa.
//! * [`synth`]: seeded synthetic multi-modal datasets and tube images.
//! * [`pipeline`]: the end-to-end train/evaluate flow tying the stages together.
//!
//! File formats and the command line live in the companion `etscl` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod contrastive;
mod error;
pub mod evidence;
pub mod frangi;
pub mod loss;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod special;
pub mod synth;

pub use error::{Error, Result};

/// Number of modality branches in the pipeline.
pub const N_MODALITIES: usize = 3;

/// The three modality branches, in fusion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modality {
    Cfp,
    Oct,
    Vessel,
}

impl Modality {
    pub const ALL: [Modality; N_MODALITIES] = [Modality::Cfp, Modality::Oct, Modality::Vessel];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Cfp => "cfp",
            Modality::Oct => "oct",
            Modality::Vessel => "vessel",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cfp" => Some(Modality::Cfp),
            "oct" => Some(Modality::Oct),
            "vessel" => Some(Modality::Vessel),
            _ => None,
        }
    }
}

impl core::fmt::Display for Modality {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}
