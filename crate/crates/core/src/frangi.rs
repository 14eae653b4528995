//! Multiscale Hessian vesselness for 2D grayscale images.
//!
//! At each scale σ the image Hessian is estimated with sampled Gaussian
//! derivative kernels (radius `⌈4σ⌉`, reflected borders, σ²-normalized). Its
//! eigenvalues `|λ1| <= |λ2|` give the tubularity measure
//! `exp(−R_B²/2β²)·(1 − exp(−S²/2c²))`, `R_B = λ1/λ2`, `S = ‖λ‖`, which is zero
//! when `λ2` has the wrong sign for the vessel polarity. The filter output is
//! the maximum over scales.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Row-major image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("dimensions must be positive".into()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, found: data.len() });
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::InvalidImage(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        GrayImage::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Unbounded real-valued image, used for derivative responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Field {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Second-derivative responses `(Ixx, Ixy, Iyy)` at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    pub xx: Field,
    pub xy: Field,
    pub yy: Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    /// Dark vessels on a bright background; needs `λ2 > 0`.
    #[default]
    DarkOnBright,
    /// Bright vessels on a dark background; needs `λ2 < 0`.
    BrightOnDark,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrangiParams {
    pub scales: Vec<f64>,
    pub beta: f64,
    pub c: f64,
    pub polarity: Polarity,
}

impl Default for FrangiParams {
    fn default() -> Self {
        FrangiParams { scales: vec![1.0, 2.0, 3.0, 4.0], beta: 0.5, c: 15.0 / 255.0, polarity: Polarity::DarkOnBright }
    }
}

impl FrangiParams {
    fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || !self.scales.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::InvalidArgument("scales must be a non-empty list of positive values".into()));
        }
        if !(self.beta > 0.0 && self.c > 0.0) {
            return Err(Error::InvalidArgument("beta and c must be positive".into()));
        }
        Ok(())
    }
}

pub fn kernel_radius(sigma: f64) -> usize {
    libm::ceil(4.0 * sigma) as usize
}

/// Gaussian, first- and second-derivative kernels in correlation form,
/// corrected so that they are exact on constants, ramps and quadratics.
fn kernels(sigma: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let r = kernel_radius(sigma) as i64;
    let ts: Vec<f64> = (-r..=r).map(|t| t as f64).collect();
    let var = sigma * sigma;
    let mut g: Vec<f64> = ts.iter().map(|t| libm::exp(-t * t / (2.0 * var))).collect();
    let sum: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= sum);

    let mut d1: Vec<f64> = ts.iter().zip(&g).map(|(t, g)| t * g).collect();
    let moment1: f64 = ts.iter().zip(&d1).map(|(t, k)| t * k).sum();
    d1.iter_mut().for_each(|v| *v /= moment1);

    let mut d2: Vec<f64> = ts.iter().zip(&g).map(|(t, g)| (t * t / var - 1.0) * g).collect();
    let mean = d2.iter().sum::<f64>() / d2.len() as f64;
    d2.iter_mut().for_each(|v| *v -= mean);
    let moment2: f64 = ts.iter().zip(&d2).map(|(t, k)| t * t * k).sum::<f64>() / 2.0;
    d2.iter_mut().for_each(|v| *v /= moment2);
    (g, d1, d2)
}

fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let mut i = i;
    if i < 0 {
        i = -i;
    }
    if i >= n {
        i = 2 * (n - 1) - i;
    }
    i as usize
}

fn correlate_rows(src: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            out[y * width + x] =
                k.iter().enumerate().map(|(j, w)| w * row[reflect(x as i64 + j as i64 - r, width)]).sum();
        }
    }
    out
}

fn correlate_cols(src: &[f64], width: usize, height: usize, k: &[f64]) -> Vec<f64> {
    let r = (k.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] =
                k.iter().enumerate().map(|(j, w)| w * src[reflect(y as i64 + j as i64 - r, height) * width + x]).sum();
        }
    }
    out
}

fn check_size(width: usize, height: usize, sigma: f64) -> Result<()> {
    let required = 2 * kernel_radius(sigma) + 1;
    if width < required || height < required {
        return Err(Error::ImageTooSmall { width, height, required });
    }
    Ok(())
}

/// σ²-normalized Gaussian second derivatives of `img`.
pub fn gaussian_second_derivatives(img: &GrayImage, sigma: f64) -> Result<Hessian> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be positive")));
    }
    let (w, h) = (img.width, img.height);
    check_size(w, h, sigma)?;
    let (g, d1, d2) = kernels(sigma);
    let scale = sigma * sigma;
    let field = |mut data: Vec<f64>| {
        data.iter_mut().for_each(|v| *v *= scale);
        Field { width: w, height: h, data }
    };
    let xx = correlate_cols(&correlate_rows(&img.data, w, h, &d2), w, h, &g);
    let yy = correlate_rows(&correlate_cols(&img.data, w, h, &d2), w, h, &g);
    let xy = correlate_cols(&correlate_rows(&img.data, w, h, &d1), w, h, &d1);
    Ok(Hessian { xx: field(xx), xy: field(xy), yy: field(yy) })
}

/// Eigenvalues of `[[xx, xy], [xy, yy]]` ordered `|λ1| <= |λ2|`; an exact
/// magnitude tie puts the smaller signed value first.
pub fn hessian_eigenvalues(xx: f64, xy: f64, yy: f64) -> (f64, f64) {
    let mean = 0.5 * (xx + yy);
    let d = libm::hypot(0.5 * (xx - yy), xy);
    let (hi, lo) = (mean + d, mean - d);
    if lo.abs() <= hi.abs() {
        (lo, hi)
    } else {
        (hi, lo)
    }
}

/// Per-pixel vesselness from Hessian eigenvalues.
pub fn vesselness(l1: f64, l2: f64, params: &FrangiParams) -> f64 {
    let right_sign = match params.polarity {
        Polarity::DarkOnBright => l2 > 0.0,
        Polarity::BrightOnDark => l2 < 0.0,
    };
    if !right_sign {
        return 0.0;
    }
    let rb = l1 / l2;
    let s2 = l1 * l1 + l2 * l2;
    let beta2 = params.beta * params.beta;
    let c2 = params.c * params.c;
    libm::exp(-rb * rb / (2.0 * beta2)) * (1.0 - libm::exp(-s2 / (2.0 * c2)))
}

pub fn vesselness_at_scale(hessian: &Hessian, params: &FrangiParams) -> Result<GrayImage> {
    params.validate()?;
    let Hessian { xx, xy, yy } = hessian;
    if xx.data.len() != xy.data.len() || xx.data.len() != yy.data.len() || xx.width != yy.width || xx.width != xy.width {
        return Err(Error::DimensionMismatch { expected: xx.data.len(), found: xy.data.len().min(yy.data.len()) });
    }
    let data = xx
        .data
        .iter()
        .zip(&xy.data)
        .zip(&yy.data)
        .map(|((a, b), c)| {
            let (l1, l2) = hessian_eigenvalues(*a, *b, *c);
            vesselness(l1, l2, params)
        })
        .collect();
    GrayImage::new(xx.width, xx.height, data)
}

/// Maximum vesselness over all configured scales.
pub fn frangi_filter(img: &GrayImage, params: &FrangiParams) -> Result<GrayImage> {
    params.validate()?;
    let largest = params.scales.iter().copied().fold(0.0, f64::max);
    check_size(img.width, img.height, largest)?;
    let mut best = vec![0.0f64; img.data.len()];
    for sigma in &params.scales {
        let v = vesselness_at_scale(&gaussian_second_derivatives(img, *sigma)?, params)?;
        best.iter_mut().zip(&v.data).for_each(|(b, v)| *b = b.max(*v));
    }
    GrayImage::new(img.width, img.height, best)
}
