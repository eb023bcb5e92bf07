//! Recovery quality and correlation diagnostics.

use log::warn;
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::singular_values;
use crate::tensor::{DenseTensor, Split};

/// SSIM stabilizing constants and window of the original SSIM reference.
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// SSIM is evaluated on 8-bit scale luminance.
pub const SSIM_DYNAMIC_RANGE: f64 = 255.0;

/// Singular values below this are ignored by the entropy.
const ENTROPY_CUTOFF: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub rse: f64,
    /// Mean SSIM over frames, when computed.
    pub ssim: Option<f64>,
    pub per_frame_ssim: Vec<f64>,
}

/// Relative square error `||x - t||_F / ||t||_F`.
pub fn rse(x: &DenseTensor, t: &DenseTensor) -> Result<f64> {
    if x.shape() != t.shape() {
        return Err(Error::arg(format!(
            "rse shape mismatch: {:?} vs {:?}",
            x.shape(),
            t.shape()
        )));
    }
    let reference = t.frobenius_norm();
    if reference == 0.0 {
        return Err(Error::arg("rse against a zero reference"));
    }
    Ok(x.sub(t)?.frobenius_norm() / reference)
}

/// ITU-R BT.601 luma of an `H x W x 3` slice stored column-major.
fn luminance(rgb: &[f64], h: usize, w: usize) -> Vec<f64> {
    let plane = h * w;
    (0..plane)
        .map(|i| 0.299 * rgb[i] + 0.587 * rgb[plane + i] + 0.114 * rgb[2 * plane + i])
        .collect()
}

fn gaussian_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|x| x / s).collect()
}

/// Separable "valid" filtering of an `h x w` column-major plane.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; oh * w];
    for c in 0..w {
        for r in 0..oh {
            rows[r + oh * c] = (0..n).map(|i| k[i] * img[r + i + h * c]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for c in 0..ow {
        for r in 0..oh {
            out[r + oh * c] = (0..n).map(|i| k[i] * rows[r + oh * (c + i)]).sum();
        }
    }
    (out, oh, ow)
}

fn ssim_terms(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE).powi(2);
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Mean SSIM of two `h x w` grayscale planes on a 0..255 scale, using an
/// 11x11 Gaussian window (sigma 1.5). Planes smaller than the window fall
/// back to a single global window.
pub fn ssim_plane(x: &[f64], y: &[f64], h: usize, w: usize) -> Result<f64> {
    if x.len() != h * w || y.len() != h * w || h == 0 || w == 0 {
        return Err(Error::arg("ssim planes must both be h x w"));
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        warn!("{h}x{w} frame is smaller than the SSIM window; using global statistics");
        return Ok(ssim_global(x, y));
    }
    let k = gaussian_kernel();
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<f64>>();
    let (mx, oh, ow) = filter_valid(x, h, w, &k);
    let (my, _, _) = filter_valid(y, h, w, &k);
    let (sxx, _, _) = filter_valid(&prod(x, x), h, w, &k);
    let (syy, _, _) = filter_valid(&prod(y, y), h, w, &k);
    let (sxy, _, _) = filter_valid(&prod(x, y), h, w, &k);
    let total: f64 = (0..oh * ow)
        .map(|i| {
            ssim_terms(
                mx[i],
                my[i],
                sxx[i] - mx[i] * mx[i],
                syy[i] - my[i] * my[i],
                sxy[i] - mx[i] * my[i],
            )
        })
        .sum();
    Ok(total / (oh * ow) as f64)
}

fn ssim_global(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|a| (a - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    ssim_terms(mx, my, vx, vy, cxy)
}

/// SSIM of two `H x W x 3` images with values in `[0, 1]`, on luminance.
pub fn ssim_image(x: &DenseTensor, t: &DenseTensor) -> Result<f64> {
    let &[h, w, 3] = t.shape() else {
        return Err(Error::arg(format!("expected an H x W x 3 image, got {:?}", t.shape())));
    };
    if x.shape() != t.shape() {
        return Err(Error::arg("ssim shape mismatch"));
    }
    let scale = |v: Vec<f64>| v.into_iter().map(|a| a * SSIM_DYNAMIC_RANGE).collect::<Vec<_>>();
    let lx = scale(luminance(x.data(), h, w));
    let lt = scale(luminance(t.data(), h, w));
    ssim_plane(&lx, &lt, h, w)
}

/// Per-frame luminance SSIM of two 4-way videos with values in `[0, 1]`.
///
/// `frame_mode` (1-based) names the frame axis; the remaining modes, in
/// order, are rows, columns and the 3 color channels.
pub fn mean_ssim(x: &DenseTensor, t: &DenseTensor, frame_mode: usize) -> Result<QualityReport> {
    if x.shape() != t.shape() {
        return Err(Error::arg("ssim shape mismatch"));
    }
    if t.order() != 4 || frame_mode == 0 || frame_mode > 4 {
        return Err(Error::arg(format!(
            "mean_ssim expects a 4-way video and a frame mode in 1..=4, got {:?} / {frame_mode}",
            t.shape()
        )));
    }
    let mut perm: Vec<usize> = (0..4).filter(|&m| m != frame_mode - 1).collect();
    perm.push(frame_mode - 1);
    let xs = x.permute(&perm)?;
    let ts = t.permute(&perm)?;
    let &[h, w, c, frames] = ts.shape() else { unreachable!() };
    if c != 3 {
        return Err(Error::arg("video frames must have 3 channels"));
    }
    let per = h * w * c;
    let per_frame_ssim = (0..frames)
        .map(|f| {
            let fx = DenseTensor::new(vec![h, w, 3], xs.data()[f * per..(f + 1) * per].to_vec())?;
            let ft = DenseTensor::new(vec![h, w, 3], ts.data()[f * per..(f + 1) * per].to_vec())?;
            ssim_image(&fx, &ft)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_frame_ssim.iter().sum::<f64>() / frames as f64;
    Ok(QualityReport {
        rse: rse(x, t)?,
        ssim: Some(mean),
        per_frame_ssim,
    })
}

/// Von Neumann entropy `-sum lambda_l^2 log2 lambda_l^2` of the normalized
/// singular values of a matricization. Zero for a rank-one split, `log2 r`
/// for `r` equal singular values.
pub fn entanglement_entropy(t: &DenseTensor, split: Split) -> Result<f64> {
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::arg("entropy of a zero tensor"));
    }
    let m = t.unfold(split)?.matrix / norm;
    Ok(entropy_of_spectrum(&singular_values(&m)?))
}

fn entropy_of_spectrum(s: &[f64]) -> f64 {
    s.iter()
        .filter(|&&l| l > ENTROPY_CUTOFF)
        .map(|&l| {
            let p = l * l;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Entropy from the eigenvalues of the reduced matrix `rho = X X^T` (row
/// side) or `X^T X` (column side) of the normalized matricization.
pub fn entanglement_entropy_reduced(t: &DenseTensor, split: Split, row_side: bool) -> Result<f64> {
    let norm = t.frobenius_norm();
    if norm == 0.0 {
        return Err(Error::arg("entropy of a zero tensor"));
    }
    let m: DMatrix<f64> = t.unfold(split)?.matrix / norm;
    let rho = if row_side { &m * m.transpose() } else { m.tr_mul(&m) };
    let eig = rho.symmetric_eigenvalues();
    Ok(eig
        .iter()
        .filter(|&&p| p > ENTROPY_CUTOFF * ENTROPY_CUTOFF)
        .map(|&p| -p * p.log2())
        .sum::<f64>()
        .max(0.0))
}
