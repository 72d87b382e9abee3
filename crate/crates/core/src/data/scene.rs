use std::fs;
use std::io::Write;
use std::path::Path;

use super::netpbm::{encode_pgm, encode_ppm};
use crate::error::{Error, Result};
use crate::losses::IGNORE_INDEX;
use crate::model::Spatial;
use crate::numerics::rng::fnv1a64;
use crate::numerics::{CounterRng, Matrix, Scalar};

/// Interleaved RGB image with channel values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn zeros(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn dims(&self) -> Spatial {
        Spatial::new(self.height, self.width)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `(h·w) × 3` matrix, the layout the model consumes.
    pub fn to_matrix<T: Scalar>(&self) -> Matrix<T> {
        let data = self.data.iter().map(|&v| T::of(v as f64)).collect();
        Matrix::from_vec(self.height * self.width, 3, data).expect("image length")
    }

    pub fn from_matrix(m: &Matrix<f32>, height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub image: Image,
    /// Row-major class indices; [`IGNORE_INDEX`] marks padding.
    pub mask: Vec<u8>,
    /// `presence[i] = 1` iff class `i` occupies at least one mask pixel.
    pub presence: Vec<u8>,
}

impl SceneSample {
    pub fn presence_vector<T: Scalar>(&self) -> Vec<T> {
        self.presence.iter().map(|&b| T::of(b as f64)).collect()
    }
}

/// Presence bits recomputed from a mask; ignored pixels do not count.
pub fn presence_from_mask(mask: &[u8], classes: usize) -> Vec<u8> {
    let mut y = vec![0u8; classes];
    for &v in mask {
        if v != IGNORE_INDEX && (v as usize) < classes {
            y[v as usize] = 1;
        }
    }
    y
}

/// Scene layout: class 0 is the sky above a horizon, classes 1 and 2 are
/// the alternative ground classes below it, and every further class is an
/// object primitive (disc, square, triangle by `(index − 3) mod 3`).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub side: usize,
    pub classes: Vec<String>,
    /// Size of the fixed scene set used for training and evaluation.
    pub scenes: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    pub seed: u64,
    /// Per-scene, per-class colour jitter amplitude.
    pub jitter: f64,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            side: 32,
            classes: ["sky", "grass", "road", "ball", "box", "tree"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            scenes: 8,
            min_shapes: 1,
            max_shapes: 3,
            seed: 7,
            jitter: 0.08,
            noise: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.side < 4 {
            return Err(Error::Config(format!("data.side = {} is too small", self.side)));
        }
        if !(2..=254).contains(&self.classes.len()) {
            return Err(Error::Config(format!(
                "data.classes has {} entries, need 2..=254",
                self.classes.len()
            )));
        }
        if self.scenes == 0 {
            return Err(Error::Config("data.scenes must be positive".into()));
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Config("data.min_shapes exceeds data.max_shapes".into()));
        }
        Ok(())
    }
}

const PALETTE: [[f64; 3]; 6] = [
    [0.45, 0.65, 0.95], // sky
    [0.30, 0.70, 0.25], // grass
    [0.45, 0.45, 0.48], // road
    [0.90, 0.20, 0.15], // ball
    [0.72, 0.50, 0.22], // box
    [0.12, 0.42, 0.18], // tree
];

fn base_color(index: usize, name: &str) -> [f64; 3] {
    if index < PALETTE.len() {
        return PALETTE[index];
    }
    let mut rng = CounterRng::new(fnv1a64(name.as_bytes()));
    [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)]
}

#[derive(Clone, Copy)]
enum Primitive {
    Disc,
    Square,
    Triangle,
}

fn inside(kind: Primitive, cy: f64, cx: f64, r: f64, py: f64, px: f64) -> bool {
    match kind {
        Primitive::Disc => (py - cy).powi(2) + (px - cx).powi(2) <= r * r,
        Primitive::Square => (py - cy).abs() <= r && (px - cx).abs() <= r,
        Primitive::Triangle => {
            let t = (py - (cy - r)) / (2.0 * r);
            (0.0..=1.0).contains(&t) && (px - cx).abs() <= r * t
        }
    }
}

/// Deterministic in `(cfg.seed, index)`.
pub fn generate_scene(cfg: &SceneConfig, index: u64) -> SceneSample {
    let side = cfg.side;
    let m = cfg.classes.len();
    let mut rng = CounterRng::derive(cfg.seed, index);

    let lo = ((side as f64 * 0.3).round() as i64).max(1);
    let hi = ((side as f64 * 0.7).round() as i64).clamp(lo, side as i64 - 1);
    let horizon = rng.range_inclusive(lo, hi) as usize;
    let ground = if m >= 3 { 1 + rng.below(2) as u8 } else { 1 };

    let colors: Vec<[f64; 3]> = cfg
        .classes
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let base = base_color(i, name);
            let mut c = [0.0; 3];
            for (ch, b) in c.iter_mut().zip(base) {
                *ch = (b + rng.uniform(-cfg.jitter, cfg.jitter)).clamp(0.0, 1.0);
            }
            c
        })
        .collect();

    let mut mask = vec![0u8; side * side];
    for row in mask.chunks_mut(side).skip(horizon) {
        row.fill(ground);
    }

    let shapes = rng.range_inclusive(cfg.min_shapes as i64, cfg.max_shapes as i64) as usize;
    for _ in 0..shapes {
        if m <= 3 {
            break;
        }
        let class = 3 + rng.below((m - 3) as u64) as usize;
        let kind = match (class - 3) % 3 {
            0 => Primitive::Disc,
            1 => Primitive::Square,
            _ => Primitive::Triangle,
        };
        let r = rng.uniform(0.12, 0.25) * side as f64;
        let cy = rng.uniform(0.0, side as f64);
        let cx = rng.uniform(0.0, side as f64);
        for y in 0..side {
            for x in 0..side {
                if inside(kind, cy, cx, r, y as f64 + 0.5, x as f64 + 0.5) {
                    mask[y * side + x] = class as u8;
                }
            }
        }
    }

    let mut image = Image::zeros(side, side);
    for (p, &label) in mask.iter().enumerate() {
        let c = colors[label as usize];
        for (out, base) in image.data[p * 3..p * 3 + 3].iter_mut().zip(c) {
            *out = (base + cfg.noise * rng.normal()).clamp(0.0, 1.0) as f32;
        }
    }
    let presence = presence_from_mask(&mask, m);
    SceneSample { image, mask, presence }
}

/// Scenes `0..cfg.scenes`.
pub fn generate_dataset(cfg: &SceneConfig) -> Vec<SceneSample> {
    (0..cfg.scenes as u64).map(|i| generate_scene(cfg, i)).collect()
}

/// Writes `scene_NNNN.ppm`, `scene_NNNN_mask.pgm` and `manifest.csv`
/// (`index,image,mask,presence` with presence as a bit string).
pub fn dump_dataset(cfg: &SceneConfig, count: usize, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut manifest = fs::File::create(dir.join("manifest.csv"))?;
    writeln!(manifest, "index,image,mask,presence")?;
    for i in 0..count {
        let s = generate_scene(cfg, i as u64);
        let img = format!("scene_{i:04}.ppm");
        let msk = format!("scene_{i:04}_mask.pgm");
        fs::write(
            dir.join(&img),
            encode_ppm(s.image.width, s.image.height, &s.image.to_rgb8()),
        )?;
        fs::write(dir.join(&msk), encode_pgm(s.image.width, s.image.height, &s.mask))?;
        let bits: String = s.presence.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
        writeln!(manifest, "{i},{img},{msk},{bits}")?;
    }
    Ok(())
}
