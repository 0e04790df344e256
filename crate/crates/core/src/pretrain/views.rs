use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::phantom::{Image, PhantomError};

/// Augmentations applied independently to the query and key views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ViewConfig {
    pub view_width: usize,
    pub view_height: usize,
    /// Patch grid side; each view yields `grid * grid` patches.
    pub grid: usize,
    /// Smallest crop area as a fraction of the source.
    pub min_crop_area: f64,
    pub flip_prob: f64,
    /// Brightness and contrast are scaled by factors in `1 +- jitter`.
    pub jitter: f64,
    /// Upper bound on the additive Gaussian noise sigma.
    pub noise_sigma: f64,
}

impl Default for ViewConfig {
    fn default() -> Self {
        Self {
            view_width: 64,
            view_height: 48,
            grid: 3,
            min_crop_area: 0.6,
            flip_prob: 0.5,
            jitter: 0.2,
            noise_sigma: 0.02,
        }
    }
}

impl ViewConfig {
    /// Crop, flip, jitter and noise all disabled.
    pub fn identity(view_width: usize, view_height: usize, grid: usize) -> Self {
        Self { view_width, view_height, grid, min_crop_area: 1.0, flip_prob: 0.0, jitter: 0.0, noise_sigma: 0.0 }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::Params(m));
        if self.grid == 0 {
            return bad("grid must be positive".into());
        }
        if self.view_width < 2 * self.grid || self.view_height < 2 * self.grid {
            return bad(format!(
                "view {}x{} cannot be tiled by a {}x{} grid",
                self.view_width, self.view_height, self.grid, self.grid
            ));
        }
        if !(self.min_crop_area > 0.0 && self.min_crop_area <= 1.0) {
            return bad(format!("min_crop_area {} outside (0, 1]", self.min_crop_area));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad(format!("flip_prob {} outside [0, 1]", self.flip_prob));
        }
        if !(0.0..1.0).contains(&self.jitter) || !(self.noise_sigma >= 0.0) {
            return bad("jitter must be in [0, 1) and noise_sigma non-negative".into());
        }
        Ok(())
    }

    pub fn patches(&self) -> usize {
        self.grid * self.grid
    }
}

/// Query and key views of one image with their local patches.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub global_q: Image<f64>,
    pub global_k: Image<f64>,
    pub patches_q: Vec<Image<f64>>,
    pub patches_k: Vec<Image<f64>>,
}

/// Splits `image` into `grid x grid` tiles in row-major order. Tile
/// boundaries are at `floor(i * extent / grid)`.
pub fn tile(image: &Image<f64>, grid: usize) -> Result<Vec<Image<f64>>, PhantomError> {
    let (w, h) = (image.width(), image.height());
    if grid == 0 || w < 2 * grid || h < 2 * grid {
        return Err(PhantomError::Geometry(format!("{w}x{h} image too small for a {grid}x{grid} grid")));
    }
    let mut out = Vec::with_capacity(grid * grid);
    for r in 0..grid {
        let (y0, y1) = (r * h / grid, (r + 1) * h / grid);
        for c in 0..grid {
            let (x0, x1) = (c * w / grid, (c + 1) * w / grid);
            out.push(image.crop(x0, y0, x1 - x0, y1 - y0)?);
        }
    }
    Ok(out)
}

fn augment(image: &Image<f64>, cfg: &ViewConfig, rng: &mut ChaCha8Rng) -> Result<Image<f64>, PhantomError> {
    let (w, h) = (image.width(), image.height());
    let area = if cfg.min_crop_area < 1.0 { rng.gen_range(cfg.min_crop_area..=1.0) } else { 1.0 };
    let side = area.sqrt();
    let cw = ((w as f64 * side).round() as usize).clamp(1, w);
    let ch = ((h as f64 * side).round() as usize).clamp(1, h);
    let x0 = rng.gen_range(0..=w - cw);
    let y0 = rng.gen_range(0..=h - ch);
    let mut v = image.crop(x0, y0, cw, ch)?.resize(cfg.view_width, cfg.view_height)?;
    if cfg.flip_prob > 0.0 && rng.gen_bool(cfg.flip_prob) {
        v = v.flip_horizontal();
    }
    if cfg.jitter > 0.0 {
        let brightness = rng.gen_range(1.0 - cfg.jitter..=1.0 + cfg.jitter);
        let contrast = rng.gen_range(1.0 - cfg.jitter..=1.0 + cfg.jitter);
        let mean = v.mean();
        for p in v.data_mut() {
            *p = ((*p - mean) * contrast + mean) * brightness;
        }
    }
    if cfg.noise_sigma > 0.0 {
        let sigma = rng.gen_range(0.0..=cfg.noise_sigma);
        for p in v.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *p += sigma * z;
        }
    }
    for p in v.data_mut() {
        *p = p.clamp(0.0, 1.0);
    }
    Ok(v)
}

/// Two independently augmented views of `image` and their patch tilings.
pub fn make_views(image: &Image<f64>, seed: u64, cfg: &ViewConfig) -> Result<ViewSet, PhantomError> {
    cfg.validate()?;
    if image.width() < 2 * cfg.grid || image.height() < 2 * cfg.grid {
        return Err(PhantomError::Geometry(format!(
            "{}x{} image too small for a {}x{} grid",
            image.width(),
            image.height(),
            cfg.grid,
            cfg.grid
        )));
    }
    let mut rq = ChaCha8Rng::seed_from_u64(seed);
    let mut rk = ChaCha8Rng::seed_from_u64(seed);
    rk.set_stream(1);
    let global_q = augment(image, cfg, &mut rq)?;
    let global_k = augment(image, cfg, &mut rk)?;
    Ok(ViewSet {
        patches_q: tile(&global_q, cfg.grid)?,
        patches_k: tile(&global_k, cfg.grid)?,
        global_q,
        global_k,
    })
}
