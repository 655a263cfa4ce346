//! Procedural depth, clean scenes, scattering-model synthesis and dataset
//! assembly.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::{ImageRgb, ScalarField};
use crate::math;
use crate::training::TrainingPair;

pub const DEPTH_MIN: f64 = 0.5;
pub const DEPTH_MAX: f64 = 5.0;
pub const DEFAULT_CROP: usize = 180;
pub const DEFAULT_PAIRS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthKind {
    Ramp,
    Radial,
    Steps,
    PerlinLike,
}

impl DepthKind {
    pub const ALL: [DepthKind; 4] = [DepthKind::Ramp, DepthKind::Radial, DepthKind::Steps, DepthKind::PerlinLike];

    pub fn as_str(self) -> &'static str {
        match self {
            DepthKind::Ramp => "ramp",
            DepthKind::Radial => "radial",
            DepthKind::Steps => "steps",
            DepthKind::PerlinLike => "perlin",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ramp" => Ok(DepthKind::Ramp),
            "radial" => Ok(DepthKind::Radial),
            "steps" => Ok(DepthKind::Steps),
            "perlin" | "perlin-like" => Ok(DepthKind::PerlinLike),
            other => Err(Error::InvalidParameter(alloc::format!("unknown depth kind `{other}`"))),
        }
    }
}

fn rescale(field: ScalarField, lo: f64, hi: f64) -> ScalarField {
    let (mn, mx) = (field.min(), field.max());
    if mx - mn < 1e-12 {
        return ScalarField::filled(field.height(), field.width(), 0.5 * (lo + hi));
    }
    field.map(|v| lo + (hi - lo) * (v - mn) / (mx - mn))
}

#[inline]
fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

/// Smooth value noise on a `cells x cells` lattice, sampled on an `h x w` grid.
fn value_noise(rng: &mut ChaCha8Rng, h: usize, w: usize, cells: usize) -> ScalarField {
    let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random_range(0.0..1.0)).collect();
    let at = |i: usize, j: usize| lattice[i * (cells + 1) + j];
    ScalarField::from_fn(h, w, |r, c| {
        let y = r as f64 / h as f64 * cells as f64;
        let x = c as f64 / w as f64 * cells as f64;
        let (i, j) = (y as usize, x as usize);
        let (fy, fx) = (smoothstep(y - i as f64), smoothstep(x - j as f64));
        let top = at(i, j) * (1.0 - fx) + at(i, j + 1) * fx;
        let bottom = at(i + 1, j) * (1.0 - fx) + at(i + 1, j + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Depth map in `[0.5, 5]`, deterministic per seed.
///
/// `Ramp` grows linearly with the column, `Radial` with the distance from
/// the centre, `Steps` is piecewise constant in vertical bands and
/// `PerlinLike` is multi-octave value noise.
pub fn procedural_depth(kind: DepthKind, height: usize, width: usize, seed: u64) -> Result<ScalarField> {
    if height < 8 || width < 8 {
        return Err(Error::InvalidParameter("procedural depth needs at least 8x8".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = DEPTH_MAX - DEPTH_MIN;
    let field = match kind {
        DepthKind::Ramp => ScalarField::from_fn(height, width, |_, c| DEPTH_MIN + span * c as f64 / (width - 1) as f64),
        DepthKind::Radial => {
            let (cy, cx) = ((height - 1) as f64 / 2.0, (width - 1) as f64 / 2.0);
            let rmax = math::sqrt(cy * cy + cx * cx);
            ScalarField::from_fn(height, width, |r, c| {
                let d = math::sqrt((r as f64 - cy) * (r as f64 - cy) + (c as f64 - cx) * (c as f64 - cx));
                DEPTH_MIN + span * d / rmax
            })
        }
        DepthKind::Steps => {
            let bands = rng.random_range(3..=6usize);
            let mut levels: Vec<f64> = (0..bands).map(|_| rng.random_range(DEPTH_MIN..=DEPTH_MAX)).collect();
            levels[0] = DEPTH_MIN;
            levels[bands - 1] = DEPTH_MAX;
            ScalarField::from_fn(height, width, |_, c| levels[(c * bands / width).min(bands - 1)])
        }
        DepthKind::PerlinLike => {
            let mut acc = ScalarField::zeros(height, width);
            let mut amp = 1.0;
            for octave in 0..4 {
                let n = value_noise(&mut rng, height, width, 2 << octave);
                acc.add_scaled(&n, amp);
                amp *= 0.5;
            }
            rescale(acc, DEPTH_MIN, DEPTH_MAX)
        }
    };
    Ok(field)
}

/// A clean, colourful test scene in `[0, 1]`: a smooth background, saturated
/// rectangles and discs, and a faint texture.
pub fn procedural_scene(height: usize, width: usize, seed: u64) -> ImageRgb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5ce9e);
    let base: [f64; 3] = core::array::from_fn(|_| rng.random_range(0.2..0.7));
    let tilt: [f64; 3] = core::array::from_fn(|_| rng.random_range(-0.25..0.25));
    let mut img = ImageRgb::from_fn(height, width, |r, c| {
        let u = r as f64 / height as f64 - 0.5;
        let v = c as f64 / width as f64 - 0.5;
        core::array::from_fn(|ch| base[ch] + tilt[ch] * (u + v))
    });
    let shapes = rng.random_range(8..16usize);
    for _ in 0..shapes {
        // Saturated colours keep one channel dark, as in natural scenes.
        let mut color: [f64; 3] = core::array::from_fn(|_| rng.random_range(0.35..1.0));
        color[rng.random_range(0..3usize)] = rng.random_range(0.0..0.12);
        let cy = rng.random_range(0.0..height as f64);
        let cx = rng.random_range(0.0..width as f64);
        let ry = rng.random_range(0.05..0.3) * height as f64;
        let rx = rng.random_range(0.05..0.3) * width as f64;
        let disc = rng.random_bool(0.5);
        for ch in 0..3 {
            let chan = img.channel_mut(ch);
            for r in 0..height {
                for c in 0..width {
                    let dy = (r as f64 - cy) / ry;
                    let dx = (c as f64 - cx) / rx;
                    let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                    if inside {
                        chan.set(r, c, color[ch]);
                    }
                }
            }
        }
    }
    let texture = value_noise(&mut rng, height, width, (width / 6).max(2));
    let texture_amp = rng.random_range(0.03..0.1);
    img.map_channels(|_, ch| {
        ch.zip_map(&texture, |v, n| (v + texture_amp * (n - 0.5)).clamp(0.0, 1.0))
            .expect("same shape")
    })
}

/// Gray-airlight haze parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HazeRecipe {
    pub a: f64,
    pub beta: f64,
    pub crop: usize,
    pub seed: u64,
}

pub const HAZE_A_RANGE: (f64, f64) = (0.7, 1.0);
pub const HAZE_BETA_RANGE: (f64, f64) = (0.7, 1.2);

fn check_range(name: &str, v: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo..=hi).contains(&v) {
        return Err(Error::InvalidParameter(alloc::format!("{name} = {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

impl HazeRecipe {
    pub fn new(a: f64, beta: f64, crop: usize, seed: u64) -> Result<Self> {
        check_range("airlight a", a, HAZE_A_RANGE)?;
        check_range("beta", beta, HAZE_BETA_RANGE)?;
        if crop == 0 {
            return Err(Error::InvalidParameter("crop must be positive".into()));
        }
        Ok(Self { a, beta, crop, seed })
    }

    /// Uniform draw from the declared ranges.
    pub fn sample(rng: &mut impl Rng, crop: usize) -> Self {
        Self {
            a: rng.random_range(HAZE_A_RANGE.0..=HAZE_A_RANGE.1),
            beta: rng.random_range(HAZE_BETA_RANGE.0..=HAZE_BETA_RANGE.1),
            crop,
            seed: rng.random(),
        }
    }
}

/// Per-channel underwater parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnderwaterRecipe {
    pub background: [f64; 3],
    pub beta: [f64; 3],
    pub crop: usize,
    pub seed: u64,
}

pub const UNDERWATER_B_RANGES: [(f64, f64); 3] = [(0.05, 0.2), (0.6, 0.8), (0.7, 1.0)];
pub const UNDERWATER_BETA_RANGES: [(f64, f64); 3] = [(0.05, 0.15), (0.6, 0.9), (0.7, 1.0)];

impl UnderwaterRecipe {
    pub fn new(background: [f64; 3], beta: [f64; 3], crop: usize, seed: u64) -> Result<Self> {
        for c in 0..3 {
            check_range("background light", background[c], UNDERWATER_B_RANGES[c])?;
            check_range("beta", beta[c], UNDERWATER_BETA_RANGES[c])?;
        }
        if crop == 0 {
            return Err(Error::InvalidParameter("crop must be positive".into()));
        }
        Ok(Self {
            background,
            beta,
            crop,
            seed,
        })
    }

    pub fn sample(rng: &mut impl Rng, crop: usize) -> Self {
        Self {
            background: core::array::from_fn(|c| rng.random_range(UNDERWATER_B_RANGES[c].0..=UNDERWATER_B_RANGES[c].1)),
            beta: core::array::from_fn(|c| rng.random_range(UNDERWATER_BETA_RANGES[c].0..=UNDERWATER_BETA_RANGES[c].1)),
            crop,
            seed: rng.random(),
        }
    }
}

/// Seeded crop window `(row, col, size_h, size_w)`; the crop is capped at
/// the image size.
fn crop_window(h: usize, w: usize, crop: usize, seed: u64) -> (usize, usize, usize, usize) {
    let (ch, cw) = (crop.min(h), crop.min(w));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(0..=h - ch);
    let c = rng.random_range(0..=w - cw);
    (r, c, ch, cw)
}

fn check_scene(clean: &ImageRgb, depth: &ScalarField) -> Result<()> {
    if clean.shape() != depth.shape() {
        return Err(Error::ShapeMismatch {
            expected: clean.shape(),
            found: depth.shape(),
        });
    }
    if depth.min() < 0.0 {
        return Err(Error::InvalidParameter("depth must be nonnegative".into()));
    }
    Ok(())
}

/// `t = exp(-beta d)`, `I = J t + a (1 - t)`, then the same crop on both.
pub fn synth_hazy(clean: &ImageRgb, depth: &ScalarField, recipe: &HazeRecipe) -> Result<(ImageRgb, ScalarField)> {
    check_scene(clean, depth)?;
    let t = depth.map(|d| math::exp(-recipe.beta * d));
    let hazy = clean.map_channels(|_, ch| ch.zip_map(&t, |j, tv| j * tv + recipe.a * (1.0 - tv)).expect("same shape"));
    let (h, w) = clean.shape();
    let (r, c, ch, cw) = crop_window(h, w, recipe.crop, recipe.seed);
    Ok((hazy.crop(r, c, ch, cw)?, t.crop(r, c, ch, cw)?))
}

/// `t_c = exp(-beta_c d)`, `I_c = J_c t_c + B_c (1 - t_c)`, then cropped.
pub fn synth_underwater(
    clean: &ImageRgb,
    depth: &ScalarField,
    recipe: &UnderwaterRecipe,
) -> Result<(ImageRgb, [ScalarField; 3])> {
    check_scene(clean, depth)?;
    let t: [ScalarField; 3] = core::array::from_fn(|c| depth.map(|d| math::exp(-recipe.beta[c] * d)));
    let img = clean.map_channels(|c, ch| {
        ch.zip_map(&t[c], |j, tv| j * tv + recipe.background[c] * (1.0 - tv))
            .expect("same shape")
    });
    let (h, w) = clean.shape();
    let (r, c0, ch, cw) = crop_window(h, w, recipe.crop, recipe.seed);
    let [t0, t1, t2] = t;
    Ok((
        img.crop(r, c0, ch, cw)?,
        [t0.crop(r, c0, ch, cw)?, t1.crop(r, c0, ch, cw)?, t2.crop(r, c0, ch, cw)?],
    ))
}

/// `count` procedural (scene, depth) sources of side `size`, cycling
/// through the depth kinds.
pub fn procedural_sources(count: usize, size: usize, seed: u64) -> Result<Vec<(ImageRgb, ScalarField)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = DepthKind::ALL[i % DepthKind::ALL.len()];
            let scene = procedural_scene(size, size, rng.random());
            Ok((scene, procedural_depth(kind, size, size, rng.random())?))
        })
        .collect()
}

/// One synthesized training pair together with the clean crop it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub pair: TrainingPair,
    pub clean: ImageRgb,
    pub recipe: HazeRecipe,
}

/// Draws `n_pairs` haze recipes and synthesizes one cropped sample per
/// recipe, cycling through `sources`.
pub fn build_samples(sources: &[(ImageRgb, ScalarField)], n_pairs: usize, crop: usize, seed: u64) -> Result<Vec<SynthSample>> {
    if sources.is_empty() {
        return Err(Error::Empty("dataset sources"));
    }
    if crop == 0 {
        return Err(Error::InvalidParameter("crop must be positive".into()));
    }
    for (img, depth) in sources {
        check_scene(img, depth)?;
        let (h, w) = img.shape();
        if h < crop || w < crop {
            return Err(Error::SourceTooSmall { height: h, width: w, crop });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_pairs)
        .map(|i| {
            let (clean, depth) = &sources[i % sources.len()];
            let recipe = HazeRecipe::sample(&mut rng, crop);
            let (hazy, t) = synth_hazy(clean, depth, &recipe)?;
            let (h, w) = clean.shape();
            let (r, c, ch, cw) = crop_window(h, w, recipe.crop, recipe.seed);
            Ok(SynthSample {
                pair: TrainingPair::new(hazy, t)?,
                clean: clean.crop(r, c, ch, cw)?,
                recipe,
            })
        })
        .collect()
}

/// One synthesized underwater observation with its clean crop.
#[derive(Debug, Clone, PartialEq)]
pub struct UnderwaterSample {
    pub observation: ImageRgb,
    pub transmission: [ScalarField; 3],
    pub clean: ImageRgb,
    pub recipe: UnderwaterRecipe,
}

/// Underwater counterpart of [`build_samples`].
pub fn build_underwater_samples(
    sources: &[(ImageRgb, ScalarField)],
    n: usize,
    crop: usize,
    seed: u64,
) -> Result<Vec<UnderwaterSample>> {
    if sources.is_empty() {
        return Err(Error::Empty("dataset sources"));
    }
    if crop == 0 {
        return Err(Error::InvalidParameter("crop must be positive".into()));
    }
    for (img, depth) in sources {
        check_scene(img, depth)?;
        let (h, w) = img.shape();
        if h < crop || w < crop {
            return Err(Error::SourceTooSmall { height: h, width: w, crop });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (clean, depth) = &sources[i % sources.len()];
            let recipe = UnderwaterRecipe::sample(&mut rng, crop);
            let (observation, transmission) = synth_underwater(clean, depth, &recipe)?;
            let (h, w) = clean.shape();
            let (r, c, ch, cw) = crop_window(h, w, recipe.crop, recipe.seed);
            Ok(UnderwaterSample {
                observation,
                transmission,
                clean: clean.crop(r, c, ch, cw)?,
                recipe,
            })
        })
        .collect()
}

/// [`build_samples`] without the clean crops.
pub fn build_dataset(sources: &[(ImageRgb, ScalarField)], n_pairs: usize, crop: usize, seed: u64) -> Result<Vec<TrainingPair>> {
    Ok(build_samples(sources, n_pairs, crop, seed)?.into_iter().map(|s| s.pair).collect())
}
