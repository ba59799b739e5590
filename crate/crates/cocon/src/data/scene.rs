//! Sprite scene renderer with analytic ground-truth flow.

use super::{MultiViewClip, ViewKind};
use crate::error::{CoconError, Result};
use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// The motion pattern is the class. Ids 0..8 map to the eight moving
/// patterns; `Static` exists for degenerate-flow tests only.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MotionPattern {
    Circular,
    Linear,
    Zigzag,
    Bounce,
    Spiral,
    Shake,
    GrowShrink,
    Pendulum,
    Static,
}

impl MotionPattern {
    pub const CLASS_COUNT: usize = 8;

    pub fn from_class_id(id: usize) -> Result<Self> {
        use MotionPattern::*;
        match id {
            0 => Ok(Circular),
            1 => Ok(Linear),
            2 => Ok(Zigzag),
            3 => Ok(Bounce),
            4 => Ok(Spiral),
            5 => Ok(Shake),
            6 => Ok(GrowShrink),
            7 => Ok(Pendulum),
            _ => Err(CoconError::Config(format!("class id {id} out of range (max 8 classes)"))),
        }
    }

    pub fn name(&self) -> &'static str {
        use MotionPattern::*;
        match self {
            Circular => "circular",
            Linear => "linear",
            Zigzag => "zigzag",
            Bounce => "bounce",
            Spiral => "spiral",
            Shake => "shake",
            GrowShrink => "grow_shrink",
            Pendulum => "pendulum",
            Static => "static",
        }
    }
}

/// Everything needed to render one clip deterministically.
#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct SceneConfig {
    pub class_id: usize,
    pub num_classes: usize,
    /// Rendered frame size (H, W); block cropping happens downstream.
    pub frame_size: (usize, usize),
    pub frames: usize,
    pub seed: u64,
    /// Probability of dropping a sprite pixel from the mask view per frame.
    pub mask_noise: f64,
    /// Probability of zeroing a heatmap frame entirely.
    pub heatmap_noise: f64,
    /// Exact period in frames for the periodic patterns; `None` draws a
    /// per-clip period around the default.
    pub period_frames: Option<f64>,
    /// Background textures are drawn from a pool of this many variants, so
    /// the background alone cannot identify a clip. 0 means one texture per
    /// clip seed.
    pub bg_pool: u64,
    /// Render the degenerate zero-velocity scene regardless of class id.
    pub force_static: bool,
}

impl SceneConfig {
    pub fn new(class_id: usize, num_classes: usize, size: usize, frames: usize, seed: u64) -> Self {
        SceneConfig {
            class_id,
            num_classes,
            frame_size: (size, size),
            frames,
            seed,
            mask_noise: 0.08,
            heatmap_noise: 0.1,
            period_frames: None,
            bg_pool: 8,
            force_static: false,
        }
    }

    /// Degenerate zero-velocity scene, used by flow tests.
    pub fn static_scene(size: usize, frames: usize, seed: u64) -> Self {
        let mut cfg = SceneConfig::new(0, 1, size, frames, seed);
        cfg.force_static = true;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > MotionPattern::CLASS_COUNT {
            return Err(CoconError::Config(format!(
                "num_classes must be 1..={}, got {}",
                MotionPattern::CLASS_COUNT,
                self.num_classes
            )));
        }
        if self.class_id >= self.num_classes {
            return Err(CoconError::Config(format!(
                "class id {} >= class count {}",
                self.class_id, self.num_classes
            )));
        }
        if self.frame_size.0 < 16 || self.frame_size.1 < 16 {
            return Err(CoconError::Config(format!(
                "frame size {:?} too small to render a scene",
                self.frame_size
            )));
        }
        if self.frames == 0 {
            return Err(CoconError::Config("frame count must be > 0".into()));
        }
        Ok(())
    }

    fn pattern(&self) -> Result<MotionPattern> {
        if self.force_static {
            Ok(MotionPattern::Static)
        } else {
            MotionPattern::from_class_id(self.class_id)
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum SpriteShape {
    Circle,
    Square,
    Diamond,
    Bar,
}

impl SpriteShape {
    /// Signed distance-ish: <= 0 inside, grows outward in pixels.
    fn boundary_excess(&self, dx: f64, dy: f64, r: f64) -> f64 {
        match self {
            SpriteShape::Circle => (dx * dx + dy * dy).sqrt() - r,
            SpriteShape::Square => dx.abs().max(dy.abs()) - r,
            SpriteShape::Diamond => (dx.abs() + dy.abs()) / std::f64::consts::SQRT_2 - r,
            SpriteShape::Bar => (dx.abs() / 1.6).max(dy.abs() / 0.7) - r,
        }
    }
}

struct Trajectory {
    /// Sprite centers for frames 0..=T (one extra for the last flow field).
    centers: Vec<(f64, f64)>,
    /// Sprite scale factors, same length.
    scales: Vec<f64>,
}

fn gen_trajectory(
    pattern: MotionPattern,
    h: f64,
    w: f64,
    radius: f64,
    frames: usize,
    period_override: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Trajectory {
    let s = h.min(w);
    let margin = radius * 1.6 + 2.0;
    let span_x = w - 2.0 * margin;
    let span_y = h - 2.0 * margin;
    let n = frames + 1;
    let period = period_override.unwrap_or_else(|| {
        // Short enough that a clip covers one to two motion cycles.
        let base = frames as f64 * 0.6;
        base * rng.gen_range(0.8..1.2)
    });
    let speed_scale = s / 36.0;
    let mut centers = Vec::with_capacity(n);
    let mut scales = vec![1.0; n];
    use MotionPattern::*;
    match pattern {
        Static => {
            let c = (
                margin + rng.gen::<f64>() * span_y,
                margin + rng.gen::<f64>() * span_x,
            );
            centers = vec![c; n];
        }
        Circular | Spiral => {
            let rho_max = (span_x.min(span_y) / 2.0) * rng.gen_range(0.7..0.95);
            let cy = h / 2.0 + rng.gen_range(-0.05..0.05) * s;
            let cx = w / 2.0 + rng.gen_range(-0.05..0.05) * s;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let dir = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let radial_period = period * rng.gen_range(1.6..2.4);
            for t in 0..n {
                let th = phase + dir * std::f64::consts::TAU * t as f64 / period;
                let rho = match pattern {
                    Circular => rho_max * 0.8,
                    _ => rho_max * (0.55 + 0.4 * (std::f64::consts::TAU * t as f64 / radial_period).sin()),
                };
                centers.push((cy + rho * th.sin(), cx + rho * th.cos()));
            }
        }
        Linear => {
            let mut y = margin + rng.gen::<f64>() * span_y;
            let mut x = margin + rng.gen::<f64>() * span_x;
            let speed = rng.gen_range(0.9..1.6) * speed_scale;
            let dir = rng.gen_range(0.0..std::f64::consts::TAU);
            let mut vy = speed * dir.sin();
            let mut vx = speed * dir.cos();
            for _ in 0..n {
                centers.push((y, x));
                y += vy;
                x += vx;
                if y < margin || y > h - margin {
                    vy = -vy;
                    y = y.clamp(margin, h - margin);
                }
                if x < margin || x > w - margin {
                    vx = -vx;
                    x = x.clamp(margin, w - margin);
                }
            }
        }
        Zigzag => {
            let y0 = h / 2.0 + rng.gen_range(-0.1..0.1) * s;
            let mut x = margin + rng.gen::<f64>() * span_x;
            let vx_mag = rng.gen_range(0.5..0.9) * speed_scale;
            let mut vx = if rng.gen::<bool>() { vx_mag } else { -vx_mag };
            let vy = rng.gen_range(0.8..1.4) * speed_scale;
            let half = (period / 2.0).max(2.0);
            let phase = rng.gen_range(0.0..period);
            let mut y = y0;
            for t in 0..n {
                centers.push((y, x));
                let seg = ((t as f64 + phase) / half).floor() as i64;
                let dir = if seg % 2 == 0 { 1.0 } else { -1.0 };
                y = (y + dir * vy).clamp(margin, h - margin);
                x += vx;
                if x < margin || x > w - margin {
                    vx = -vx;
                    x = x.clamp(margin, w - margin);
                }
            }
        }
        Bounce => {
            let floor = h - margin;
            let drop = rng.gen_range(0.45..0.7) * (floor - margin);
            let g = 8.0 * drop / (period * period);
            let x0 = margin + rng.gen::<f64>() * span_x;
            let vx = rng.gen_range(-0.25..0.25) * speed_scale;
            let phase = rng.gen_range(0.0..period);
            let mut x = x0;
            for t in 0..n {
                let tb = (t as f64 + phase) % period;
                // Parabolic arc hitting the floor at tb = 0 and period.
                let y = floor - 0.5 * g * tb * (period - tb);
                centers.push((y, x));
                x += vx;
                if x < margin || x > w - margin {
                    x = x.clamp(margin, w - margin);
                }
            }
        }
        Shake => {
            let cy = margin + rng.gen::<f64>() * span_y;
            let cx = margin + rng.gen::<f64>() * span_x;
            let amp = 0.05 * s;
            for _ in 0..n {
                centers.push((
                    cy + rng.gen_range(-amp..amp),
                    cx + rng.gen_range(-amp..amp),
                ));
            }
        }
        GrowShrink => {
            let c = (
                h / 2.0 + rng.gen_range(-0.08..0.08) * s,
                w / 2.0 + rng.gen_range(-0.08..0.08) * s,
            );
            let amp = rng.gen_range(0.3..0.45);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            centers = vec![c; n];
            for (t, sc) in scales.iter_mut().enumerate() {
                *sc = 1.0 + amp * (phase + std::f64::consts::TAU * t as f64 / period).sin();
            }
        }
        Pendulum => {
            let pivot_y = margin * 0.6;
            let pivot_x = w / 2.0 + rng.gen_range(-0.05..0.05) * s;
            let arm = (h - 2.0 * margin) * rng.gen_range(0.6..0.8);
            let max_angle = rng.gen_range(0.5..0.8);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            for t in 0..n {
                let th = max_angle * (phase + std::f64::consts::TAU * t as f64 / period).sin();
                centers.push((pivot_y + arm * th.cos(), pivot_x + arm * th.sin()));
            }
        }
    }
    Trajectory { centers, scales }
}

fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Render a clip. Deterministic in `config.seed`; views are mutually
/// consistent because they share one trajectory.
pub fn generate_clip(config: &SceneConfig, views: &[ViewKind]) -> Result<MultiViewClip> {
    config.validate()?;
    if views.is_empty() {
        return Err(CoconError::Config("at least one view required".into()));
    }
    let (h, w) = config.frame_size;
    let t_frames = config.frames;
    let mut appearance = derived_rng(config.seed, 0);
    let mut trajectory_rng = derived_rng(config.seed, 1);
    let mut mask_rng = derived_rng(config.seed, 2);
    let mut heat_rng = derived_rng(config.seed, 3);
    let bg_seed = if config.bg_pool == 0 { config.seed } else { config.seed % config.bg_pool };
    let mut bg_rng = derived_rng(bg_seed, 4);

    // Appearance nuisance, independent of the class.
    let shape = match appearance.gen_range(0..4) {
        0 => SpriteShape::Circle,
        1 => SpriteShape::Square,
        2 => SpriteShape::Diamond,
        _ => SpriteShape::Bar,
    };
    let radius = appearance.gen_range(0.13..0.19) * h.min(w) as f64;
    let color: [f32; 3] = [
        appearance.gen_range(0.55..1.0),
        appearance.gen_range(0.55..1.0),
        appearance.gen_range(0.55..1.0),
    ];
    // Static low-frequency background: base tone plus two gratings, shared
    // across the texture pool.
    let base: [f32; 3] = [
        bg_rng.gen_range(0.15..0.35),
        bg_rng.gen_range(0.15..0.35),
        bg_rng.gen_range(0.15..0.35),
    ];
    let mut gratings = Vec::new();
    for _ in 0..2 {
        let angle: f64 = bg_rng.gen_range(0.0..std::f64::consts::PI);
        let freq = bg_rng.gen_range(0.6..1.8) * std::f64::consts::TAU / h.min(w) as f64;
        let phase = bg_rng.gen_range(0.0..std::f64::consts::TAU);
        let amp: f32 = bg_rng.gen_range(0.02..0.05);
        gratings.push((angle.cos() * freq, angle.sin() * freq, phase, amp));
    }
    let mut background = vec![0f32; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let mut v = 0.0f32;
            for &(ky, kx, phase, amp) in &gratings {
                v += amp * ((ky * y as f64 + kx * x as f64 + phase).sin() as f32);
            }
            for c in 0..3 {
                background[(y * w + x) * 3 + c] = (base[c] + v).clamp(0.0, 1.0);
            }
        }
    }

    let pattern = config.pattern()?;
    let traj = gen_trajectory(
        pattern,
        h as f64,
        w as f64,
        radius,
        t_frames,
        config.period_frames,
        &mut trajectory_rng,
    );

    let mut out: BTreeMap<ViewKind, Array4<f32>> = BTreeMap::new();
    for &view in views {
        out.insert(view, Array4::zeros((t_frames, h, w, view.channels())));
    }

    let aa = 1.0; // soft edge width in pixels
    for t in 0..t_frames {
        let (cy, cx) = traj.centers[t];
        let r_eff = radius * traj.scales[t];
        let (ny, nx) = traj.centers[t + 1];
        let scale_ratio = traj.scales[t + 1] / traj.scales[t];
        let (uy, ux) = (ny - cy, nx - cx);
        let heat_dropped = heat_rng.gen::<f64>() < config.heatmap_noise;
        let (jy, jx) = (heat_rng.gen_range(-1.0..1.0), heat_rng.gen_range(-1.0..1.0));
        let sigma = (1.1 * r_eff).max(1.0);

        for y in 0..h {
            for x in 0..w {
                let dy = y as f64 - cy;
                let dx = x as f64 - cx;
                let excess = shape.boundary_excess(dx, dy, r_eff);
                let alpha = (0.5 - excess / aa).clamp(0.0, 1.0) as f32;
                let on_sprite = alpha > 0.5;

                if let Some(rgb) = out.get_mut(&ViewKind::Rgb) {
                    for c in 0..3 {
                        let bg = background[(y * w + x) * 3 + c];
                        rgb[[t, y, x, c]] = bg + (color[c] - bg) * alpha;
                    }
                }
                if let Some(flow) = out.get_mut(&ViewKind::Flow) {
                    if on_sprite {
                        flow[[t, y, x, 0]] = (ux + (scale_ratio - 1.0) * dx) as f32;
                        flow[[t, y, x, 1]] = (uy + (scale_ratio - 1.0) * dy) as f32;
                    }
                }
                if let Some(mask) = out.get_mut(&ViewKind::Mask) {
                    if on_sprite && mask_rng.gen::<f64>() >= config.mask_noise {
                        mask[[t, y, x, 0]] = 1.0;
                    }
                }
                if let Some(heat) = out.get_mut(&ViewKind::Heatmap) {
                    if !heat_dropped {
                        let hy = y as f64 - (cy + jy);
                        let hx = x as f64 - (cx + jx);
                        heat[[t, y, x, 0]] =
                            (-(hy * hy + hx * hx) / (2.0 * sigma * sigma)).exp() as f32;
                    }
                }
            }
        }
    }

    Ok(MultiViewClip { views: out, label: config.class_id, seed: config.seed })
}

/// Mean absolute error of forward-warping each rgb frame by its flow field,
/// measured on sprite pixels (mask == 1) whose warp target stays in frame.
/// Requires the rgb, flow and mask views.
pub fn warp_consistency_error(clip: &MultiViewClip) -> Result<f64> {
    let rgb = clip.view(ViewKind::Rgb)?;
    let flow = clip.view(ViewKind::Flow)?;
    let mask = clip.view(ViewKind::Mask)?;
    let (t_frames, h, w, _) = rgb.dim();
    let mut total = 0.0f64;
    let mut count = 0usize;
    for t in 0..t_frames.saturating_sub(1) {
        for y in 0..h {
            for x in 0..w {
                if mask[[t, y, x, 0]] < 0.5 {
                    continue;
                }
                let ty = y as f64 + flow[[t, y, x, 1]] as f64;
                let tx = x as f64 + flow[[t, y, x, 0]] as f64;
                if ty < 0.0 || tx < 0.0 || ty > (h - 1) as f64 || tx > (w - 1) as f64 {
                    continue;
                }
                let y0 = ty.floor() as usize;
                let x0 = tx.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                let fy = ty - y0 as f64;
                let fx = tx - x0 as f64;
                for c in 0..3 {
                    let v00 = rgb[[t + 1, y0, x0, c]] as f64;
                    let v01 = rgb[[t + 1, y0, x1, c]] as f64;
                    let v10 = rgb[[t + 1, y1, x0, c]] as f64;
                    let v11 = rgb[[t + 1, y1, x1, c]] as f64;
                    let warped = v00 * (1.0 - fy) * (1.0 - fx)
                        + v01 * (1.0 - fy) * fx
                        + v10 * fy * (1.0 - fx)
                        + v11 * fy * fx;
                    total += (warped - rgb[[t, y, x, c]] as f64).abs();
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Ok(0.0);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_views() -> Vec<ViewKind> {
        ViewKind::all().to_vec()
    }

    #[test]
    fn static_sprite_has_zero_flow() {
        let cfg = SceneConfig::static_scene(32, 8, 5);
        let clip = generate_clip(&cfg, &all_views()).unwrap();
        let flow = clip.view(ViewKind::Flow).unwrap();
        assert!(flow.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SceneConfig::new(3, 8, 36, 12, 99);
        let a = generate_clip(&cfg, &all_views()).unwrap();
        let b = generate_clip(&cfg, &all_views()).unwrap();
        for kind in ViewKind::all() {
            assert_eq!(a.view(kind).unwrap(), b.view(kind).unwrap(), "{kind}");
        }
    }

    #[test]
    fn warp_consistency_on_every_class() {
        for class in 0..MotionPattern::CLASS_COUNT {
            for seed in [1u64, 2] {
                let mut cfg = SceneConfig::new(class, 8, 36, 12, seed);
                cfg.mask_noise = 0.0;
                let clip = generate_clip(&cfg, &all_views()).unwrap();
                let err = warp_consistency_error(&clip).unwrap();
                assert!(
                    err < 0.05,
                    "class {class} seed {seed}: warp error {err:.4}"
                );
            }
        }
    }

    #[test]
    fn mask_is_binary() {
        let cfg = SceneConfig::new(5, 8, 36, 10, 4);
        let clip = generate_clip(&cfg, &[ViewKind::Mask]).unwrap();
        assert!(clip
            .view(ViewKind::Mask)
            .unwrap()
            .iter()
            .all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn same_class_same_pattern_different_appearance() {
        let a = generate_clip(&SceneConfig::new(0, 8, 36, 12, 10), &[ViewKind::Rgb]).unwrap();
        let b = generate_clip(&SceneConfig::new(0, 8, 36, 12, 11), &[ViewKind::Rgb]).unwrap();
        assert_ne!(a.view(ViewKind::Rgb).unwrap(), b.view(ViewKind::Rgb).unwrap());
    }

    #[test]
    fn bad_config_rejected() {
        assert!(generate_clip(&SceneConfig::new(9, 8, 36, 12, 0), &[ViewKind::Rgb]).is_err());
        assert!(generate_clip(&SceneConfig::new(0, 8, 4, 12, 0), &[ViewKind::Rgb]).is_err());
    }
}
