//! Image-quality metrics: PSNR, SSIM, latitude-band PSNR, and PSNR on
//! Laplacian-selected high/low-frequency crops.
//!
//! All metrics are computed in ERP pixel coordinates on images in `[0, 1]`.
//! SSIM and the Laplacian work on luminance `0.299 R + 0.587 G + 0.114 B`.

use crate::error::{Error, Result};
use crate::image::ErpImage;

/// PSNR reported for identical inputs (and the ceiling for everything else).
pub const PSNR_CAP: f64 = 99.0;

/// Latitude bands in degrees, south to north.
pub const BANDS: [(f64, f64); 5] = [
    (-90.0, -54.0),
    (-54.0, -18.0),
    (-18.0, 18.0),
    (18.0, 54.0),
    (54.0, 90.0),
];

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse.is_nan() {
        return f64::NAN;
    }
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Squared error summed over channels and the pixel count, over a rectangle.
fn sse(a: &ErpImage, b: &ErpImage, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for row in rows {
        for col in cols.clone() {
            let (p, q) = (a.get(col, row), b.get(col, row));
            sum += (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>();
            count += 1;
        }
    }
    (sum, count)
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &ErpImage, b: &ErpImage) -> Result<f64> {
    a.same_dims(b)?;
    let (s, n) = sse(a, b, 0..a.height(), 0..a.width());
    Ok(s / (3 * n) as f64)
}

pub fn psnr(a: &ErpImage, b: &ErpImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian filter, "valid" region only.
fn filter_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> (Vec<f64>, usize, usize) {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            horiz[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * horiz[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// `k1 = 0.01`, `k2 = 0.03`, dynamic range 1.
pub fn ssim(a: &ErpImage, b: &ErpImage) -> Result<f64> {
    a.same_dims(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let (x, y) = (a.luminance(), b.luminance());
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let k = gaussian_kernel();
    let (mx, _, _) = filter_valid(&x, w, h, &k);
    let (my, _, _) = filter_valid(&y, w, h, &k);
    let (sxx, _, _) = filter_valid(&xx, w, h, &k);
    let (syy, _, _) = filter_valid(&yy, w, h, &k);
    let (sxy, _, _) = filter_valid(&xy, w, h, &k);
    let (c1, c2) = (SSIM_K1.powi(2), SSIM_K2.powi(2));
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// Latitude of a row's center in degrees.
pub fn row_center_latitude_deg(row: usize, height: usize) -> f64 {
    90.0 - 180.0 * (row as f64 + 0.5) / height as f64
}

/// Index into [`BANDS`] for a latitude; intervals are closed below, the top
/// band also includes +90.
pub fn band_of(lat_deg: f64) -> usize {
    BANDS
        .iter()
        .position(|&(_, hi)| lat_deg < hi)
        .unwrap_or(BANDS.len() - 1)
}

/// Rows whose center latitude falls in each band.
pub fn band_rows(height: usize) -> [Vec<usize>; 5] {
    let mut rows: [Vec<usize>; 5] = Default::default();
    for r in 0..height {
        rows[band_of(row_center_latitude_deg(r, height))].push(r);
    }
    rows
}

/// Per-band `(squared error sum, pixel count)`.
pub fn band_sse(a: &ErpImage, b: &ErpImage) -> Result<[(f64, usize); 5]> {
    a.same_dims(b)?;
    let rows = band_rows(a.height());
    let mut out = [(0.0, 0); 5];
    for (k, rs) in rows.iter().enumerate() {
        for &r in rs {
            let (s, n) = sse(a, b, r..r + 1, 0..a.width());
            out[k].0 += s;
            out[k].1 += n;
        }
    }
    Ok(out)
}

/// PSNR per latitude band, south to north; `NaN` for bands with no rows.
pub fn band_psnr(a: &ErpImage, b: &ErpImage) -> Result<[f64; 5]> {
    let sse = band_sse(a, b)?;
    Ok(sse.map(|(s, n)| {
        if n == 0 {
            f64::NAN
        } else {
            psnr_from_mse(s / (3 * n) as f64)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn square(x: usize, y: usize, side: usize) -> Self {
        Self {
            x,
            y,
            width: side,
            height: side,
        }
    }
}

pub fn crop_psnr(a: &ErpImage, b: &ErpImage, rect: Rect) -> Result<f64> {
    a.same_dims(b)?;
    if rect.width == 0 || rect.height == 0 || rect.x + rect.width > a.width() || rect.y + rect.height > a.height() {
        return Err(Error::domain(format!(
            "crop {rect:?} outside {}x{} image",
            a.width(),
            a.height()
        )));
    }
    let (s, n) = sse(a, b, rect.y..rect.y + rect.height, rect.x..rect.x + rect.width);
    Ok(psnr_from_mse(s / (3 * n) as f64))
}

/// `|8 c - sum of the 8 neighbours|` on luminance with replicated borders.
pub fn abs_laplacian(img: &ErpImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let lum = img.luminance();
    let at = |x: isize, y: isize| {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        lum[yc * w + xc]
    };
    let mut out = vec![0.0; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 8.0 * at(x, y);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx != 0 || dy != 0 {
                        acc -= at(x + dx, y + dy);
                    }
                }
            }
            out[y as usize * w + x as usize] = acc.abs();
        }
    }
    out
}

/// Mean absolute Laplacian of every `crop x crop` window on a `stride` grid,
/// in row-major window order.
pub fn window_scores(img: &ErpImage, crop: usize, stride: usize) -> Result<Vec<(Rect, f64)>> {
    let (w, h) = (img.width(), img.height());
    if crop == 0 || stride == 0 {
        return Err(Error::domain("crop size and stride must be >= 1"));
    }
    if w < crop || h < crop {
        return Err(Error::domain(format!(
            "image {w}x{h} is smaller than the {crop}x{crop} crop"
        )));
    }
    let lap = abs_laplacian(img);
    // Summed-area table with a zero border row and column.
    let mut sat = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += lap[y * w + x];
            sat[(y + 1) * (w + 1) + x + 1] = sat[y * (w + 1) + x + 1] + row;
        }
    }
    let area = (crop * crop) as f64;
    let mut out = Vec::new();
    for y in (0..=h - crop).step_by(stride) {
        for x in (0..=w - crop).step_by(stride) {
            let s = sat[(y + crop) * (w + 1) + x + crop] - sat[y * (w + 1) + x + crop]
                - sat[(y + crop) * (w + 1) + x]
                + sat[y * (w + 1) + x];
            out.push((Rect::square(x, y, crop), s.max(0.0) / area));
        }
    }
    Ok(out)
}

/// `(low_frequency, high_frequency)` crops: the windows with the smallest
/// and largest mean absolute Laplacian; ties go to the first window in
/// row-major order.
pub fn frequency_crops(gt: &ErpImage, crop: usize, stride: usize) -> Result<(Rect, Rect)> {
    let scores = window_scores(gt, crop, stride)?;
    let (mut low, mut high) = (scores[0], scores[0]);
    for &s in &scores[1..] {
        if s.1 < low.1 {
            low = s;
        }
        if s.1 > high.1 {
            high = s;
        }
    }
    Ok((low.0, high.0))
}

/// Metrics of one rendered view against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub band_psnr: [f64; 5],
    pub low_crop_psnr: f64,
    pub high_crop_psnr: f64,
}

/// All metrics for a view; crops come from the ground truth.
pub fn evaluate_view(rendered: &ErpImage, gt: &ErpImage, crop: usize, stride: usize) -> Result<ViewMetrics> {
    let (low, high) = frequency_crops(gt, crop, stride)?;
    Ok(ViewMetrics {
        psnr: psnr(rendered, gt)?,
        ssim: ssim(rendered, gt)?,
        band_psnr: band_psnr(rendered, gt)?,
        low_crop_psnr: crop_psnr(rendered, gt, low)?,
        high_crop_psnr: crop_psnr(rendered, gt, high)?,
    })
}

/// Aggregate over views: PSNR-type values averaged in dB, SSIM averaged.
pub fn mean_metrics(views: &[ViewMetrics]) -> ViewMetrics {
    let n = views.len() as f64;
    let mean = |f: &dyn Fn(&ViewMetrics) -> f64| views.iter().map(f).sum::<f64>() / n;
    ViewMetrics {
        psnr: mean(&|v| v.psnr),
        ssim: mean(&|v| v.ssim),
        band_psnr: std::array::from_fn(|k| mean(&|v: &ViewMetrics| v.band_psnr[k])),
        low_crop_psnr: mean(&|v| v.low_crop_psnr),
        high_crop_psnr: mean(&|v| v.high_crop_psnr),
    }
}
