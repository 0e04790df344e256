use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detect::BBox;
use crate::phantom::image::Image;
use crate::phantom::PhantomError;

/// Geometry and appearance of one synthetic lung-ultrasound frame.
///
/// Ranges are inclusive `(min, max)` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomParams {
    pub width: usize,
    pub height: usize,
    pub pleural_row_frac: f64,
    pub n_blines: usize,
    pub bline_width_px: (usize, usize),
    pub bline_intensity: (f64, f64),
    pub n_alines: usize,
    /// Bright sub-pleural streaks that stop short of half the depth.
    pub n_confusers: usize,
    /// Minimum dark gap in pixels between neighbouring vertical streaks.
    pub min_gap: usize,
    pub speckle_sigma: f64,
    /// Per-pixel exponential attenuation below the pleura.
    pub decay: f64,
    pub seed: u64,
}

impl Default for PhantomParams {
    fn default() -> Self {
        Self {
            width: 154,
            height: 120,
            pleural_row_frac: 0.18,
            n_blines: 0,
            bline_width_px: (3, 8),
            bline_intensity: (0.6, 1.0),
            n_alines: 0,
            n_confusers: 0,
            min_gap: 6,
            speckle_sigma: 0.08,
            decay: 0.008,
            seed: 0,
        }
    }
}

pub const MAX_BLINES: usize = 6;
pub const MAX_ALINES: usize = 3;

const MARGIN: usize = 2;
const TISSUE: f64 = 0.22;
const LUNG: f64 = 0.1;
const PLEURA: f64 = 0.9;
const PLEURA_THICKNESS: usize = 3;
const ALINE: f64 = 0.42;
const ALINE_THICKNESS: usize = 2;

impl PhantomParams {
    pub fn pleural_row(&self) -> usize {
        (self.pleural_row_frac * self.height as f64).round() as usize
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::Params(m));
        if self.width < 32 || self.height < 32 {
            return bad(format!("image {}x{} smaller than 32x32", self.width, self.height));
        }
        if !(self.pleural_row_frac > 0.0 && self.pleural_row_frac < 0.5) {
            return bad(format!("pleural_row_frac {} outside (0, 0.5)", self.pleural_row_frac));
        }
        if self.n_blines > MAX_BLINES {
            return bad(format!("n_blines {} above {MAX_BLINES}", self.n_blines));
        }
        if self.n_alines > MAX_ALINES {
            return bad(format!("n_alines {} above {MAX_ALINES}", self.n_alines));
        }
        let (w0, w1) = self.bline_width_px;
        if w0 == 0 || w0 > w1 {
            return bad(format!("bline_width_px ({w0}, {w1}) empty"));
        }
        let (i0, i1) = self.bline_intensity;
        if !(0.0..=1.0).contains(&i0) || !(0.0..=1.0).contains(&i1) || i0 > i1 {
            return bad(format!("bline_intensity ({i0}, {i1}) not an ordered range in [0, 1]"));
        }
        if !(self.speckle_sigma >= 0.0 && self.speckle_sigma.is_finite()) {
            return bad(format!("speckle_sigma {} must be non-negative", self.speckle_sigma));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return bad(format!("decay {} must be non-negative", self.decay));
        }
        Ok(())
    }
}

/// An image with its B-line boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: Image<f64>,
    pub boxes: Vec<BBox<f64>>,
    pub source_id: String,
}

#[derive(Clone, Copy, Debug)]
struct Streak {
    x: usize,
    width: usize,
    bottom: usize,
    intensity: f64,
    labeled: bool,
}

/// Left edges for `widths` placed in order across `[MARGIN, width - MARGIN)`
/// with at least `gap` pixels between neighbours, spreading the slack at
/// random.
fn place(widths: &[usize], width: usize, gap: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>, PhantomError> {
    let n = widths.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let needed = widths.iter().sum::<usize>() + gap * (n - 1) + 2 * MARGIN;
    if needed > width {
        return Err(PhantomError::Placement { needed, available: width });
    }
    let slack = width - needed;
    let mut cuts: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut xs = Vec::with_capacity(n);
    let mut x = MARGIN;
    let mut used = 0;
    for (i, &w) in widths.iter().enumerate() {
        x += cuts[i] - used;
        used = cuts[i];
        xs.push(x);
        x += w + gap;
    }
    Ok(xs)
}

/// Renders one phantom.
///
/// The pleura is a bright band starting at [`PhantomParams::pleural_row`].
/// B-lines are flat vertical bands from that row to the bottom edge; their
/// boxes cover exactly the band pixels. A-lines are fainter horizontal
/// reverberations at multiples of the pleural depth. Confusers look like
/// B-lines but end before half of the depth below the pleura and carry no box.
/// Speckle is multiplicative Gaussian noise; results are clamped to `[0, 1]`.
pub fn generate_phantom(params: &PhantomParams) -> Result<LabeledImage, PhantomError> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let p = params.pleural_row();
    let depth = h - p;

    let mut geo = ChaCha8Rng::seed_from_u64(params.seed);
    let mut noise = ChaCha8Rng::seed_from_u64(params.seed);
    noise.set_stream(1);

    let n = params.n_blines + params.n_confusers;
    let mut labeled: Vec<bool> = (0..n).map(|i| i < params.n_blines).collect();
    // random left-to-right order of labeled and unlabeled streaks
    for i in (1..n).rev() {
        let j = geo.gen_range(0..=i);
        labeled.swap(i, j);
    }
    let (w0, w1) = params.bline_width_px;
    let (i0, i1) = params.bline_intensity;
    let widths: Vec<usize> = (0..n).map(|_| geo.gen_range(w0..=w1)).collect();
    let xs = place(&widths, w, params.min_gap, &mut geo)?;
    let max_short = (depth / 2).saturating_sub(1).max(2);
    let mut streaks = Vec::with_capacity(n);
    for i in 0..n {
        let intensity = if i1 > i0 { geo.gen_range(i0..=i1) } else { i0 };
        let bottom = if labeled[i] { h } else { p + geo.gen_range(2.min(max_short)..=max_short) };
        streaks.push(Streak { x: xs[i], width: widths[i], bottom, intensity, labeled: labeled[i] });
    }

    let mut data = vec![0.0; w * h];
    for y in 0..h {
        let base = if y < p {
            TISSUE
        } else {
            LUNG * (-params.decay * (y - p) as f64).exp()
        };
        data[y * w..(y + 1) * w].fill(base);
    }
    for k in 0..params.n_alines {
        let y0 = p * (k + 2);
        let v = ALINE * (-params.decay * (y0 - p) as f64).exp();
        for y in y0..(y0 + ALINE_THICKNESS).min(h) {
            for px in &mut data[y * w..(y + 1) * w] {
                *px = px.max(v);
            }
        }
    }
    for s in &streaks {
        for y in p..s.bottom {
            let v = s.intensity * (-0.5 * params.decay * (y - p) as f64).exp();
            for px in &mut data[y * w + s.x..y * w + s.x + s.width] {
                *px = px.max(v);
            }
        }
    }
    for y in p..(p + PLEURA_THICKNESS).min(h) {
        data[y * w..(y + 1) * w].fill(PLEURA);
    }
    if params.speckle_sigma > 0.0 {
        for v in &mut data {
            let z: f64 = StandardNormal.sample(&mut noise);
            *v *= 1.0 + params.speckle_sigma * z;
        }
    }
    for v in &mut data {
        *v = v.clamp(0.0, 1.0);
    }

    let mut boxes: Vec<BBox<f64>> = streaks
        .iter()
        .filter(|s| s.labeled)
        .map(|s| BBox::raw(s.x as f64, p as f64, (s.x + s.width) as f64, h as f64))
        .collect();
    boxes.sort_by(|a, b| a.x1.total_cmp(&b.x1));
    Ok(LabeledImage {
        image: Image::new(w, h, data)?,
        boxes,
        source_id: format!("phantom-{:016x}", params.seed),
    })
}
