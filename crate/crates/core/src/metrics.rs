//! SNR and Gaussian-windowed SSIM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{image_stats, Image};

/// `10 log10(sum clean^2 / sum (clean - estimate)^2)`; `+inf` for a perfect
/// estimate.
pub fn snr_db(clean: &Image, estimate: &Image) -> Result<f64> {
    clean.check_shape(estimate)?;
    let signal: f64 = clean.pixels().iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::InvalidParameter(
            "SNR undefined for an all-zero reference".into(),
        ));
    }
    let noise: f64 = clean
        .pixels()
        .iter()
        .zip(estimate.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricParams {
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Defaults to `max - min` of the clean image (1 when that is zero).
    pub dynamic_range: Option<f64>,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            ssim_window: 11,
            ssim_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: None,
        }
    }
}

impl MetricParams {
    fn validate(&self) -> Result<()> {
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "SSIM window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0) || !(self.k1 > 0.0) || !(self.k2 > 0.0) {
            return Err(Error::InvalidParameter(
                "SSIM sigma, k1 and k2 must be positive".into(),
            ));
        }
        if let Some(r) = self.dynamic_range {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::InvalidParameter(format!("bad dynamic range {r}")));
            }
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let half = (self.ssim_window / 2) as f64;
        let taps: Vec<f64> = (0..self.ssim_window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.ssim_sigma * self.ssim_sigma)).exp()
            })
            .collect();
        let s: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / s).collect()
    }

    pub(crate) fn range_for(&self, clean: &Image) -> f64 {
        self.dynamic_range.unwrap_or_else(|| {
            let st = image_stats(clean);
            let r = st.max - st.min;
            if r > 0.0 {
                r
            } else {
                1.0
            }
        })
    }
}

/// Filter over fully contained windows only: output is
/// `(h - win + 1) x (w - win + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ow, oh) = (w - k + 1, h - k + 1);
    let mut horiz = vec![0.0; ow * h];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            horiz[r * ow + c] = taps.iter().zip(&row[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * horiz[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all valid window positions.
pub fn ssim(clean: &Image, estimate: &Image, params: &MetricParams) -> Result<f64> {
    params.validate()?;
    clean.check_shape(estimate)?;
    let (w, h) = (clean.width(), clean.height());
    let win = params.ssim_window;
    if w < win || h < win {
        return Err(Error::InvalidParameter(format!(
            "image {w}x{h} smaller than the {win}x{win} SSIM window"
        )));
    }
    let range = params.range_for(clean);
    let c1 = (params.k1 * range).powi(2);
    let c2 = (params.k2 * range).powi(2);
    let taps = params.gaussian_taps();

    let x = clean.pixels();
    let y = estimate.pixels();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();

    let mx = filter_valid(x, w, h, &taps);
    let my = filter_valid(y, w, h, &taps);
    let exx = filter_valid(&xx, w, h, &taps);
    let eyy = filter_valid(&yy, w, h, &taps);
    let exy = filter_valid(&xy, w, h, &taps);

    let total: f64 = (0..mx.len())
        .map(|i| local_ssim(mx[i], my[i], exx[i], eyy[i], exy[i], c1, c2))
        .sum();
    Ok(total / mx.len() as f64)
}

/// SSIM of one window from its weighted moments. Written so that swapping
/// the two images, or passing identical ones, is exact.
#[inline]
pub(crate) fn local_ssim(mx: f64, my: f64, exx: f64, eyy: f64, exy: f64, c1: f64, c2: f64) -> f64 {
    let mxy = mx * my;
    let vx = exx - mx * mx;
    let vy = eyy - my * my;
    let cov = exy - mxy;
    let num = (2.0 * mxy + c1) * (2.0 * cov + c2);
    let den = ((mx * mx + my * my) + c1) * ((vx + vy) + c2);
    num / den
}
