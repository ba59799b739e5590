//! Block-consistent augmentation.
//!
//! Spatial transforms (crop offset, horizontal flip) are drawn once per clip
//! and applied identically to every frame of every block of every view.
//! Color jitter and random greying are frame-wise and touch the rgb view
//! only; flow has its x-component negated under horizontal flips.

use super::ViewKind;
use crate::error::Result;
use ndarray::{Array5, Axis};
use rand::Rng;
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize)]
pub struct AugmentPolicy {
    /// Random crop from the rendered margin down to the model input size.
    pub crop: bool,
    pub crop_margin: usize,
    /// Random horizontal flip (one coin per clip).
    pub hflip: bool,
    /// Frame-wise brightness/channel jitter strength; 0 disables.
    pub color_jitter: f64,
    /// Frame-wise probability of replacing an rgb frame by its luminance.
    pub grey_prob: f64,
}

impl Default for AugmentPolicy {
    /// Everything off; `augment` is the identity under this policy.
    fn default() -> Self {
        AugmentPolicy { crop: false, crop_margin: 0, hflip: false, color_jitter: 0.0, grey_prob: 0.0 }
    }
}

impl AugmentPolicy {
    /// The training-time policy.
    pub fn train(crop_margin: usize) -> Self {
        AugmentPolicy { crop: true, crop_margin, hflip: true, color_jitter: 0.4, grey_prob: 0.25 }
    }
}

/// Mirror a block tensor along W; flow gets its x-component negated so the
/// field stays a valid displacement field of the mirrored frames.
pub fn flip_horizontal(blocks: &Array5<f32>, kind: ViewKind) -> Array5<f32> {
    let mut out = blocks.slice(ndarray::s![.., .., .., ..;-1, ..]).to_owned();
    if kind == ViewKind::Flow {
        out.index_axis_mut(Axis(4), 0).mapv_inplace(|v| -v);
    }
    out
}

fn crop(blocks: &Array5<f32>, oy: usize, ox: usize, out_h: usize, out_w: usize) -> Array5<f32> {
    blocks
        .slice(ndarray::s![
            ..,
            ..,
            oy as i32..(oy + out_h) as i32,
            ox as i32..(ox + out_w) as i32,
            ..
        ])
        .to_owned()
}

/// Apply the policy to all views of one clip. Spatial draws happen first and
/// are shared across views; color draws consume the rng per rgb frame.
pub fn augment(
    views: &BTreeMap<ViewKind, Array5<f32>>,
    policy: &AugmentPolicy,
    rng: &mut impl Rng,
) -> Result<BTreeMap<ViewKind, Array5<f32>>> {
    let (h, w) = {
        let first = views.values().next().expect("augment on empty view map");
        (first.dim().2, first.dim().3)
    };
    let crop_params = if policy.crop && policy.crop_margin > 0 {
        let m = 2 * policy.crop_margin;
        Some((rng.gen_range(0..=m), rng.gen_range(0..=m), h - m, w - m))
    } else {
        None
    };
    let do_flip = policy.hflip && rng.gen::<bool>();

    let mut out = BTreeMap::new();
    for (&kind, blocks) in views {
        let mut b = blocks.clone();
        if let Some((oy, ox, oh, ow)) = crop_params {
            b = crop(&b, oy, ox, oh, ow);
        }
        if do_flip {
            b = flip_horizontal(&b, kind);
        }
        out.insert(kind, b);
    }

    if policy.color_jitter > 0.0 || policy.grey_prob > 0.0 {
        if let Some(rgb) = out.get_mut(&ViewKind::Rgb) {
            let (n, k, _, _, _) = rgb.dim();
            let s = policy.color_jitter;
            for bi in 0..n {
                for fi in 0..k {
                    let brightness = if s > 0.0 { rng.gen_range(1.0 - s..1.0 + s) } else { 1.0 };
                    let ch: [f64; 3] = if s > 0.0 {
                        [
                            rng.gen_range(1.0 - s / 2.0..1.0 + s / 2.0),
                            rng.gen_range(1.0 - s / 2.0..1.0 + s / 2.0),
                            rng.gen_range(1.0 - s / 2.0..1.0 + s / 2.0),
                        ]
                    } else {
                        [1.0; 3]
                    };
                    let grey = policy.grey_prob > 0.0 && rng.gen::<f64>() < policy.grey_prob;
                    let mut frame = rgb
                        .index_axis_mut(Axis(0), bi)
                        .index_axis_move(Axis(0), fi);
                    for mut pixel in frame.rows_mut() {
                        let (mut r, mut g, mut b) = (
                            pixel[0] as f64 * brightness * ch[0],
                            pixel[1] as f64 * brightness * ch[1],
                            pixel[2] as f64 * brightness * ch[2],
                        );
                        if grey {
                            let y = 0.299 * r + 0.587 * g + 0.114 * b;
                            r = y;
                            g = y;
                            b = y;
                        }
                        pixel[0] = r.clamp(0.0, 1.0) as f32;
                        pixel[1] = g.clamp(0.0, 1.0) as f32;
                        pixel[2] = b.clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Deterministic center crop by `margin` on each side; the eval-time
/// counterpart of the random crop.
pub fn center_crop(
    views: &BTreeMap<ViewKind, Array5<f32>>,
    margin: usize,
) -> BTreeMap<ViewKind, Array5<f32>> {
    if margin == 0 {
        return views.clone();
    }
    views
        .iter()
        .map(|(&kind, blocks)| {
            let (_, _, h, w, _) = blocks.dim();
            (kind, crop(blocks, margin, margin, h - 2 * margin, w - 2 * margin))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_views() -> BTreeMap<ViewKind, Array5<f32>> {
        let mut views = BTreeMap::new();
        let mut rgb = Array5::<f32>::zeros((2, 2, 6, 6, 3));
        let mut flow = Array5::<f32>::zeros((2, 2, 6, 6, 2));
        for b in 0..2 {
            for f in 0..2 {
                for y in 0..6 {
                    for x in 0..6 {
                        rgb[[b, f, y, x, 0]] = (x + 10 * y + 100 * f) as f32 / 400.0;
                        flow[[b, f, y, x, 0]] = x as f32 - 2.5;
                        flow[[b, f, y, x, 1]] = y as f32;
                    }
                }
            }
        }
        views.insert(ViewKind::Rgb, rgb);
        views.insert(ViewKind::Flow, flow);
        views
    }

    #[test]
    fn all_flags_off_is_identity() {
        let views = sample_views();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = augment(&views, &AugmentPolicy::default(), &mut rng).unwrap();
        for (kind, blocks) in &views {
            assert_eq!(&out[kind], blocks);
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let views = sample_views();
        for (&kind, blocks) in &views {
            let twice = flip_horizontal(&flip_horizontal(blocks, kind), kind);
            assert_eq!(&twice, blocks, "{kind}");
        }
    }

    #[test]
    fn flipped_flow_obeys_vector_field_law() {
        let views = sample_views();
        let flow = &views[&ViewKind::Flow];
        let flipped = flip_horizontal(flow, ViewKind::Flow);
        let (_, _, _, w, _) = flow.dim();
        for y in 0..6 {
            for x in 0..w {
                assert_eq!(flipped[[0, 0, y, x, 0]], -flow[[0, 0, y, w - 1 - x, 0]]);
                assert_eq!(flipped[[0, 0, y, x, 1]], flow[[0, 0, y, w - 1 - x, 1]]);
            }
        }
    }

    #[test]
    fn crop_is_shared_across_views_and_blocks() {
        let views = sample_views();
        let policy = AugmentPolicy { crop: true, crop_margin: 1, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = augment(&views, &policy, &mut rng).unwrap();
        let rgb = &out[&ViewKind::Rgb];
        let flow = &out[&ViewKind::Flow];
        assert_eq!(rgb.dim().2, 4);
        assert_eq!(flow.dim().2, 4);
        // The same window: rgb channel 0 encodes x + 10y, flow channel 0
        // encodes x - 2.5; both must report the same x offset.
        let rgb_x = (rgb[[0, 0, 0, 0, 0]] * 400.0).round() as i64 % 10;
        let flow_x = (flow[[0, 0, 0, 0, 0]] + 2.5).round() as i64;
        assert_eq!(rgb_x, flow_x);
    }

    #[test]
    fn color_ops_never_touch_flow() {
        let views = sample_views();
        let policy =
            AugmentPolicy { color_jitter: 0.5, grey_prob: 1.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out = augment(&views, &policy, &mut rng).unwrap();
        assert_eq!(out[&ViewKind::Flow], views[&ViewKind::Flow]);
        assert_ne!(out[&ViewKind::Rgb], views[&ViewKind::Rgb]);
        // Grey with probability 1: all three channels equal everywhere.
        let rgb = &out[&ViewKind::Rgb];
        for v in rgb.rows() {
            assert!((v[0] - v[1]).abs() < 1e-6 && (v[1] - v[2]).abs() < 1e-6);
        }
    }

    #[test]
    fn center_crop_matches_dims() {
        let views = sample_views();
        let out = center_crop(&views, 1);
        assert_eq!(out[&ViewKind::Rgb].dim(), (2, 2, 4, 4, 3));
    }
}
