//! Seeded synthetic data: Gaussian multi-modal class clusters with optional
//! per-modality label conflicts, stratified splits, and tube images.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::frangi::{GrayImage, Polarity};
use crate::{rng, Error, Modality, Result, N_MODALITIES};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub n_samples: usize,
    pub n_classes: usize,
    /// Feature dimension per modality (CFP, OCT, Vessel).
    pub dims: [usize; N_MODALITIES],
    /// Distance between class means per modality, in noise standard deviations.
    pub separability: [f64; N_MODALITIES],
    /// Probability that one modality of one sample is drawn from a wrong class.
    pub conflict_rate: f64,
    pub label_distribution: Vec<f64>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_samples: 300,
            n_classes: 3,
            dims: [32, 64, 16],
            separability: [2.0, 1.5, 1.0],
            conflict_rate: 0.1,
            label_distribution: vec![1.0 / 3.0; 3],
            seed: 1,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::TooFewClasses(self.n_classes));
        }
        let d = &self.label_distribution;
        if d.len() != self.n_classes {
            return Err(Error::DimensionMismatch { expected: self.n_classes, found: d.len() });
        }
        if d.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (d.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("label proportions {d:?} must be non-negative and sum to 1")));
        }
        if let Some(dim) = self.dims.iter().find(|d| **d < self.n_classes) {
            return Err(Error::InvalidArgument(format!(
                "feature dimension {dim} is smaller than the class count {}",
                self.n_classes
            )));
        }
        if self.separability.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("separability must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.conflict_rate) {
            return Err(Error::InvalidArgument(format!("conflict rate {} outside [0, 1]", self.conflict_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: u64,
    pub label: usize,
    /// Features per modality, in CFP, OCT, Vessel order.
    pub features: [Vec<f64>; N_MODALITIES],
    /// Whether each modality was drawn from a wrong class.
    pub conflict: [bool; N_MODALITIES],
}

impl Record {
    pub fn modality(&self, m: Modality) -> &[f64] {
        &self.features[m.index()]
    }

    pub fn any_conflict(&self) -> bool {
        self.conflict.iter().any(|c| *c)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiModalDataset {
    pub records: Vec<Record>,
}

impl MultiModalDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn features(&self, m: Modality) -> Vec<Vec<f64>> {
        self.records.iter().map(|r| r.features[m.index()].clone()).collect()
    }

    /// Largest label plus one.
    pub fn n_classes_hint(&self) -> usize {
        self.records.iter().map(|r| r.label + 1).max().unwrap_or(0)
    }
}

/// Means of `n_classes` points in `dim` dimensions, pairwise `separation` apart.
pub fn simplex_means(n_classes: usize, dim: usize, separation: f64) -> Vec<Vec<f64>> {
    let scale = separation / core::f64::consts::SQRT_2;
    let centroid = 1.0 / n_classes as f64;
    (0..n_classes)
        .map(|k| {
            let mut mean = vec![0.0; dim];
            for (j, v) in mean.iter_mut().enumerate().take(n_classes) {
                *v = scale * (if j == k { 1.0 } else { 0.0 } - centroid);
            }
            mean
        })
        .collect()
}

fn draw_class<R: Rng>(r: &mut R, proportions: &[f64]) -> usize {
    let u: f64 = r.random();
    let mut acc = 0.0;
    for (k, p) in proportions.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    proportions.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn generate(spec: &DatasetSpec) -> Result<MultiModalDataset> {
    spec.validate()?;
    let means: Vec<Vec<Vec<f64>>> =
        (0..N_MODALITIES).map(|m| simplex_means(spec.n_classes, spec.dims[m], spec.separability[m])).collect();
    let mut r = rng::stream(spec.seed, "data");
    let mut records = Vec::with_capacity(spec.n_samples);
    for id in 0..spec.n_samples {
        let label = draw_class(&mut r, &spec.label_distribution);
        let mut conflict = [false; N_MODALITIES];
        let features: [Vec<f64>; N_MODALITIES] = core::array::from_fn(|m| {
            let flip = r.random::<f64>() < spec.conflict_rate;
            let offset = r.random_range(1..spec.n_classes);
            let source = if flip { (label + offset) % spec.n_classes } else { label };
            conflict[m] = flip;
            means[m][source]
                .iter()
                .map(|mu| {
                    let n: f64 = StandardNormal.sample(&mut r);
                    mu + n
                })
                .collect()
        });
        records.push(Record { id: id as u64, label, features, conflict });
    }
    Ok(MultiModalDataset { records })
}

/// Stratified seeded split; the train side gets `round(n · train_fraction)` records.
pub fn split(ds: &MultiModalDataset, train_fraction: f64, seed: u64) -> Result<(MultiModalDataset, MultiModalDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!("train fraction {train_fraction} must lie in (0, 1)")));
    }
    let n = ds.len();
    let n_train = libm::round(n as f64 * train_fraction) as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::EmptySide);
    }
    let k = ds.n_classes_hint();
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, rec) in ds.records.iter().enumerate() {
        groups[rec.label].push(i);
    }
    // largest-remainder allocation of the train quota across classes
    let exact: Vec<f64> = groups.iter().map(|g| g.len() as f64 * n_train as f64 / n as f64).collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| libm::floor(*e) as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|a, b| (exact[*b] - quota[*b] as f64).total_cmp(&(exact[*a] - quota[*a] as f64)).then(a.cmp(b)));
    let missing = n_train - quota.iter().sum::<usize>();
    for c in order.into_iter().take(missing) {
        quota[c] += 1;
    }

    let mut r = rng::stream(seed, "split");
    let mut in_train = vec![false; n];
    for (group, q) in groups.iter_mut().zip(&quota) {
        group.shuffle(&mut r);
        for i in group.iter().take(*q) {
            in_train[*i] = true;
        }
    }
    let (mut train, mut test) = (Vec::with_capacity(n_train), Vec::with_capacity(n - n_train));
    for (rec, t) in ds.records.iter().zip(in_train) {
        if t { &mut train } else { &mut test }.push(rec.clone());
    }
    Ok((MultiModalDataset { records: train }, MultiModalDataset { records: test }))
}

/// Background level of generated tube images.
pub const TUBE_BACKGROUND: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct TubeImage {
    pub image: GrayImage,
    /// Pixels whose centers lie within half a pixel of the tube axis.
    pub centerline: Vec<bool>,
    /// Distance of each pixel center from the tube axis.
    pub distance: Vec<f64>,
}

/// Straight tube with a Gaussian cross-section through the image center.
///
/// The profile standard deviation is `tube_width / (2√2)`, which puts the peak
/// σ²-normalized second-derivative response at `σ = tube_width / 2`.
pub fn generate_tube_image(
    width: usize,
    height: usize,
    tube_width: f64,
    angle_deg: f64,
    contrast: f64,
    polarity: Polarity,
) -> Result<TubeImage> {
    if !(tube_width > 0.0) || tube_width > width.min(height) as f64 {
        return Err(Error::InvalidArgument(format!("tube width {tube_width} does not fit a {width}x{height} image")));
    }
    let headroom = match polarity {
        Polarity::DarkOnBright => TUBE_BACKGROUND,
        Polarity::BrightOnDark => 1.0 - TUBE_BACKGROUND,
    };
    if !(contrast >= 0.0 && contrast <= headroom + 1e-12) {
        return Err(Error::InvalidArgument(format!("contrast {contrast} outside [0, {headroom}]")));
    }
    let sign = match polarity {
        Polarity::DarkOnBright => -1.0,
        Polarity::BrightOnDark => 1.0,
    };
    let s = tube_width / (2.0 * core::f64::consts::SQRT_2);
    let theta = angle_deg.to_radians();
    let (sin, cos) = (libm::sin(theta), libm::cos(theta));
    let (cx, cy) = ((width / 2) as f64, (height / 2) as f64);
    let mut data = Vec::with_capacity(width * height);
    let mut centerline = Vec::with_capacity(width * height);
    let mut distance = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let d = (-sin * (x as f64 - cx) + cos * (y as f64 - cy)).abs();
            let v = TUBE_BACKGROUND + sign * contrast * libm::exp(-d * d / (2.0 * s * s));
            data.push(v.clamp(0.0, 1.0));
            centerline.push(d <= 0.5);
            distance.push(d);
        }
    }
    Ok(TubeImage { image: GrayImage::new(width, height, data)?, centerline, distance })
}
