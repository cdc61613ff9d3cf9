//! Piecewise-constant test phantoms and multiplicative Gamma speckle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

pub const MIN_PHANTOM_SIZE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    /// Rectangles, ellipses, thin bars and point targets on a background.
    Shapes,
    Checker,
    /// Blocky glyph strokes.
    TextLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    /// Side length of the square phantom.
    pub size: usize,
    /// Region reflectivities; the first is the background.
    pub levels: Vec<f64>,
    pub seed: u64,
}

impl PhantomSpec {
    pub const DEFAULT_LEVELS: [f64; 4] = [30.0, 90.0, 160.0, 230.0];

    pub fn new(kind: PhantomKind, size: usize, seed: u64) -> Self {
        Self {
            kind,
            size,
            levels: Self::DEFAULT_LEVELS.to_vec(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size < MIN_PHANTOM_SIZE {
            return Err(Error::InvalidParameter(format!(
                "phantom size must be at least {MIN_PHANTOM_SIZE}, got {}",
                self.size
            )));
        }
        if self.levels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "phantom levels must be finite".into(),
            ));
        }
        let first = self.levels.first().copied();
        if !self.levels.iter().any(|&v| Some(v) != first) {
            return Err(Error::InvalidParameter(
                "phantom needs at least two distinct levels".into(),
            ));
        }
        Ok(())
    }
}

/// Phantom image together with the level index of every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: Image,
    pub regions: Vec<usize>,
}

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Image> {
    Ok(generate_phantom_with_regions(spec)?.image)
}

pub fn generate_phantom_with_regions(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.size;
    let mut regions = vec![0usize; n * n];
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    match spec.kind {
        PhantomKind::Checker => {
            let block = (n / 8).max(2);
            for r in 0..n {
                for c in 0..n {
                    regions[r * n + c] = (r / block + c / block) % spec.levels.len();
                }
            }
        }
        PhantomKind::Shapes => draw_shapes(&mut regions, n, spec.levels.len(), &mut rng),
        PhantomKind::TextLike => draw_glyphs(&mut regions, n, spec.levels.len(), &mut rng),
    }
    let pixels = regions.iter().map(|&k| spec.levels[k]).collect();
    Ok(Phantom {
        image: Image::new(n, n, pixels)?,
        regions,
    })
}

/// Level index for the `k`-th foreground object, never the background.
fn foreground(k: usize, levels: usize) -> usize {
    1 + k % (levels - 1)
}

fn fill_rect(
    regions: &mut [usize],
    n: usize,
    r0: usize,
    c0: usize,
    h: usize,
    w: usize,
    label: usize,
) {
    for r in r0..(r0 + h).min(n) {
        for c in c0..(c0 + w).min(n) {
            regions[r * n + c] = label;
        }
    }
}

fn draw_shapes(regions: &mut [usize], n: usize, levels: usize, rng: &mut ChaCha8Rng) {
    let margin = (n / 16).max(1);
    let span = n - 2 * margin;
    let mut k = 0;

    // one large block so every phantom has a sizeable foreground region
    let side = (span / 3).max(1);
    fill_rect(
        regions,
        n,
        margin,
        margin,
        side,
        side,
        foreground(k, levels),
    );
    k += 1;

    let count = 6 + n / 32;
    for _ in 0..count {
        let label = foreground(k, levels);
        k += 1;
        let kind = rng.random_range(0..3u8);
        match kind {
            0 => {
                let h = rng.random_range(span / 10..=span / 4).max(1);
                let w = rng.random_range(span / 10..=span / 4).max(1);
                let r0 = margin + rng.random_range(0..=span - h);
                let c0 = margin + rng.random_range(0..=span - w);
                fill_rect(regions, n, r0, c0, h, w, label);
            }
            1 => {
                let ry = rng.random_range(span / 16..=span / 6).max(1) as f64;
                let rx = rng.random_range(span / 16..=span / 6).max(1) as f64;
                let cy =
                    margin as f64 + ry + rng.random::<f64>() * (span as f64 - 2.0 * ry).max(0.0);
                let cx =
                    margin as f64 + rx + rng.random::<f64>() * (span as f64 - 2.0 * rx).max(0.0);
                for r in 0..n {
                    for c in 0..n {
                        let dy = (r as f64 + 0.5 - cy) / ry;
                        let dx = (c as f64 + 0.5 - cx) / rx;
                        if dx * dx + dy * dy <= 1.0 {
                            regions[r * n + c] = label;
                        }
                    }
                }
            }
            _ => {
                // thin bar, horizontal or vertical
                let thick = rng.random_range(1..=(n / 64).max(2));
                let len = rng.random_range(span / 4..=span / 2).max(1);
                let a = margin + rng.random_range(0..=span - thick.min(span));
                let b = margin + rng.random_range(0..=span - len);
                if rng.random::<bool>() {
                    fill_rect(regions, n, a, b, thick, len, label);
                } else {
                    fill_rect(regions, n, b, a, len, thick, label);
                }
            }
        }
    }

    // small bright point targets
    let points = 3 + n / 64;
    let top = levels - 1;
    for _ in 0..points {
        let s = (n / 128).max(1);
        let r0 = margin + rng.random_range(0..=span - s);
        let c0 = margin + rng.random_range(0..=span - s);
        fill_rect(regions, n, r0, c0, s, s, top);
    }
}

fn draw_glyphs(regions: &mut [usize], n: usize, levels: usize, rng: &mut ChaCha8Rng) {
    const GW: usize = 5;
    const GH: usize = 7;
    let cell = (n / 4).max(GH + 1);
    let scale = (cell / (GH + 1)).max(1);
    let mut k = 0;
    let mut any = false;
    for gy in 0..n / cell {
        for gx in 0..n / cell {
            let label = foreground(k, levels);
            k += 1;
            let (r0, c0) = (gy * cell + scale / 2, gx * cell + scale / 2);
            for by in 0..GH {
                for bx in 0..GW {
                    // strokes: full vertical spine plus random horizontals
                    let on = bx == 0
                        || (by % 3 == 0 && rng.random::<f64>() < 0.8)
                        || rng.random::<f64>() < 0.2;
                    if on {
                        fill_rect(
                            regions,
                            n,
                            r0 + by * scale,
                            c0 + bx * scale,
                            scale,
                            scale,
                            label,
                        );
                        any = true;
                    }
                }
            }
        }
    }
    if !any {
        fill_rect(
            regions,
            n,
            n / 4,
            n / 4,
            n / 2,
            n / 4,
            foreground(0, levels),
        );
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeckleSpec {
    /// Number of looks; `1` gives exponential intensity speckle.
    pub looks: f64,
    pub seed: u64,
}

impl SpeckleSpec {
    fn distribution(&self) -> Result<Gamma<f64>> {
        if !(self.looks > 0.0) || !self.looks.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "number of looks must be positive, got {}",
                self.looks
            )));
        }
        Gamma::new(self.looks, 1.0 / self.looks)
            .map_err(|e| Error::InvalidParameter(format!("speckle distribution: {e}")))
    }
}

/// Unit-mean Gamma(L, 1/L) speckle factors.
pub fn speckle_samples(spec: &SpeckleSpec, count: usize) -> Result<Vec<f64>> {
    let dist = spec.distribution()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
}

/// `g = f * n` with independent unit-mean Gamma speckle `n`.
pub fn apply_speckle(clean: &Image, spec: &SpeckleSpec) -> Result<Image> {
    if let Some(i) = clean.pixels().iter().position(|&v| v < 0.0) {
        return Err(Error::InvalidParameter(format!(
            "speckle needs nonnegative reflectivity, pixel {i} is {}",
            clean.pixels()[i]
        )));
    }
    let noise = speckle_samples(spec, clean.len())?;
    clean.with_pixels(
        clean
            .pixels()
            .iter()
            .zip(&noise)
            .map(|(f, n)| f * n)
            .collect(),
    )
}
