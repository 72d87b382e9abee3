use super::scene::{presence_from_mask, Image, SceneSample};
use crate::losses::IGNORE_INDEX;
use crate::model::upsample::bilinear_resize;
use crate::model::Spatial;
use crate::numerics::CounterRng;

/// One draw of the augmentation pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub scale: f64,
    /// Top-left `(y, x)` of the crop window in the rescaled image; negative
    /// or overhanging windows are padded.
    pub offset: (i64, i64),
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            flip: false,
            scale: 1.0,
            offset: (0, 0),
        }
    }
}

fn scaled_len(len: usize, scale: f64) -> usize {
    ((len as f64 * scale).round() as usize).max(1)
}

fn offset_range(scaled: usize, len: usize) -> (i64, i64) {
    let d = scaled as i64 - len as i64;
    (d.min(0), d.max(0))
}

/// Flip with probability 0.5, scale uniform in `[0.5, 2]`, crop offset uniform.
pub fn draw_augment(dims: Spatial, rng: &mut CounterRng) -> AugmentParams {
    let flip = rng.bernoulli(0.5);
    let scale = rng.uniform(0.5, 2.0);
    let (h, w) = (scaled_len(dims.height, scale), scaled_len(dims.width, scale));
    let (ylo, yhi) = offset_range(h, dims.height);
    let (xlo, xhi) = offset_range(w, dims.width);
    AugmentParams {
        flip,
        scale,
        offset: (rng.range_inclusive(ylo, yhi), rng.range_inclusive(xlo, xhi)),
    }
}

/// Flip, rescale (bilinear image, nearest mask), then crop back to the
/// original size with zero image padding and ignore-label mask padding.
pub fn apply_augment(sample: &SceneSample, p: &AugmentParams) -> SceneSample {
    let (h, w) = (sample.image.height, sample.image.width);
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if p.flip {
        for y in 0..h {
            for x in 0..w {
                let px = sample.image.pixel(y, w - 1 - x);
                image.data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&px);
            }
            mask[y * w..(y + 1) * w].reverse();
        }
    }

    let (sh, sw) = (scaled_len(h, p.scale), scaled_len(w, p.scale));
    let (scaled_img, scaled_mask) = if (sh, sw) == (h, w) {
        (image, mask)
    } else {
        let resized = bilinear_resize(&image.to_matrix::<f32>(), Spatial::new(h, w), Spatial::new(sh, sw))
            .expect("positive sizes");
        let near =
            |d: usize, src: usize, dst: usize| (((d as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
        let mut m = vec![0u8; sh * sw];
        for y in 0..sh {
            for x in 0..sw {
                m[y * sw + x] = mask[near(y, h, sh) * w + near(x, w, sw)];
            }
        }
        (Image::from_matrix(&resized, sh, sw), m)
    };

    let mut out = Image::zeros(h, w);
    let mut out_mask = vec![IGNORE_INDEX; h * w];
    let (oy, ox) = p.offset;
    for y in 0..h {
        let sy = y as i64 + oy;
        if sy < 0 || sy >= sh as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x as i64 + ox;
            if sx < 0 || sx >= sw as i64 {
                continue;
            }
            let s = sy as usize * sw + sx as usize;
            out_mask[y * w + x] = scaled_mask[s];
            out.data[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&scaled_img.data[s * 3..s * 3 + 3]);
        }
    }
    let presence = presence_from_mask(&out_mask, sample.presence.len());
    SceneSample {
        image: out,
        mask: out_mask,
        presence,
    }
}

/// Draws parameters from the stream `seed` and applies them.
pub fn augment(sample: &SceneSample, seed: u64) -> SceneSample {
    let mut rng = CounterRng::new(seed);
    let p = draw_augment(sample.image.dims(), &mut rng);
    apply_augment(sample, &p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_scene, SceneConfig};

    fn sample() -> SceneSample {
        generate_scene(&SceneConfig::default(), 5)
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample();
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        };
        let once = apply_augment(&s, &p);
        assert_ne!(once, s);
        assert_eq!(once.mask[0], s.mask[s.image.width - 1]);
        assert_eq!(apply_augment(&once, &p), s);
    }

    #[test]
    fn unit_scale_centered_crop_is_identity() {
        let s = sample();
        assert_eq!(apply_augment(&s, &AugmentParams::identity()), s);
    }

    #[test]
    fn half_scale_content_is_confined() {
        let s = sample();
        let side = s.image.width;
        let p = AugmentParams {
            flip: false,
            scale: 0.5,
            offset: (0, 0),
        };
        let out = apply_augment(&s, &p);
        for y in 0..side {
            for x in 0..side {
                let px = out.image.pixel(y, x);
                if y >= side / 2 || x >= side / 2 {
                    assert_eq!(px, [0.0; 3]);
                    assert_eq!(out.mask[y * side + x], IGNORE_INDEX);
                } else {
                    assert_ne!(out.mask[y * side + x], IGNORE_INDEX);
                }
            }
        }
    }

    #[test]
    fn presence_tracks_mask_after_random_augment() {
        let cfg = SceneConfig::default();
        for i in 0..40 {
            let s = generate_scene(&cfg, i);
            let a = augment(&s, 1000 + i);
            assert_eq!(a.presence, presence_from_mask(&a.mask, cfg.classes.len()));
            assert_eq!(a.mask.len(), s.mask.len());
        }
    }

    #[test]
    fn draws_stay_in_range() {
        let mut rng = CounterRng::new(3);
        for _ in 0..200 {
            let p = draw_augment(Spatial::new(32, 32), &mut rng);
            assert!((0.5..2.0).contains(&p.scale));
            let n = scaled_len(32, p.scale) as i64;
            let (lo, hi) = offset_range(n as usize, 32);
            assert!(p.offset.0 >= lo && p.offset.0 <= hi);
        }
    }
}
