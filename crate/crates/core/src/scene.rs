//! Layered flat-shaded scenes with analytic depth.
//!
//! Layer `k` (1-based, back to front) sits at depth `1 - k/10`; the
//! background is at depth 1. Fill brightness falls with nearness so that
//! depth has a visible cue, hue and saturation are random.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{AnnotationEntry, DepthMap, ImageTensor, OrderingAnnotation, TextMask};
use crate::error::{Error, Result};

pub const MAX_LAYERS: usize = 9;

/// Depth of layer `k`; `0` is the background.
pub fn layer_depth(k: usize) -> f64 {
    (10usize.saturating_sub(k)).max(1) as f64 / 10.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rect,
    Ellipse,
    Triangle,
}

/// Axis-aligned box in pixel units, `x0 <= x1`, `y0 <= y1`, inside the
/// canvas.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    fn contains(&self, kind: ShapeKind, x: f64, y: f64) -> bool {
        if x < self.x0 || x > self.x1 || y < self.y0 || y > self.y1 {
            return false;
        }
        match kind {
            ShapeKind::Rect => true,
            ShapeKind::Ellipse => {
                let (cx, cy) = ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0);
                let (rx, ry) = ((self.x1 - self.x0) / 2.0, (self.y1 - self.y0) / 2.0);
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            ShapeKind::Triangle => {
                // apex at top centre, base along the bottom edge
                let t = (y - self.y0) / (self.y1 - self.y0);
                let half = t * (self.x1 - self.x0) / 2.0;
                let cx = (self.x0 + self.x1) / 2.0;
                (x - cx).abs() <= half
            }
        }
    }
}

/// White elliptical speech balloon filled with glyph-like noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Balloon {
    pub bbox: BBox,
    pub glyph_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub shape: ShapeKind,
    pub bbox: BBox,
    pub color: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub balloon: Option<Balloon>,
}

/// Everything needed to re-render a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneDescriptor {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub background: [f64; 3],
    /// Back to front.
    pub layers: Vec<Layer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: ImageTensor,
    pub depth: DepthMap,
    pub mask: TextMask,
    pub descriptor: SceneDescriptor,
}

/// Whether a scene gets a speech balloon on its front layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BalloonMode {
    Never,
    /// With probability one half.
    Sometimes,
    Always,
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height < 8 || width < 8 {
        return Err(Error::Config(format!("scene size {height}x{width} is below 8x8")));
    }
    Ok(())
}

/// Seeded scene with `n_layers` foreground shapes; balloons appear on the
/// front layer of about half the scenes.
pub fn generate_scene(seed: u64, height: usize, width: usize, n_layers: usize) -> Result<Scene> {
    generate_scene_with(seed, height, width, n_layers, BalloonMode::Sometimes)
}

pub fn generate_scene_with(
    seed: u64,
    height: usize,
    width: usize,
    n_layers: usize,
    balloons: BalloonMode,
) -> Result<Scene> {
    if n_layers > MAX_LAYERS {
        return Err(Error::Config(format!(
            "{n_layers} layers requested, at most {MAX_LAYERS} are supported"
        )));
    }
    check_size(height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let background = shade(&mut rng, layer_depth(0));
    let mut layers = Vec::with_capacity(n_layers);
    for k in 1..=n_layers {
        let kind = match rng.random_range(0..3) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Ellipse,
            _ => ShapeKind::Triangle,
        };
        let bw = rng.random_range(0.25..0.6) * w;
        let bh = rng.random_range(0.25..0.6) * h;
        let x0 = rng.random_range(0.0..w - bw);
        let y0 = rng.random_range(0.0..h - bh);
        layers.push(Layer {
            shape: kind,
            bbox: BBox {
                x0,
                y0,
                x1: x0 + bw,
                y1: y0 + bh,
            },
            color: shade(&mut rng, layer_depth(k)),
            balloon: None,
        });
    }
    let want_balloon = match balloons {
        BalloonMode::Never => false,
        BalloonMode::Always => true,
        BalloonMode::Sometimes => rng.random_bool(0.5),
    };
    if want_balloon {
        if let Some(front) = layers.last_mut() {
            let rx = rng.random_range(0.12..0.2) * w;
            let ry = rng.random_range(0.08..0.15) * h;
            let cx = rng.random_range(rx..w - rx);
            let cy = rng.random_range(ry..h - ry);
            front.balloon = Some(Balloon {
                bbox: BBox {
                    x0: cx - rx,
                    y0: cy - ry,
                    x1: cx + rx,
                    y1: cy + ry,
                },
                glyph_seed: rng.random(),
            });
        }
    }
    let descriptor = SceneDescriptor {
        seed,
        height,
        width,
        background,
        layers,
    };
    descriptor.render()
}

/// Random hue at fixed saturation and value, blended towards a pale haze
/// with distance. Every channel is then affine in depth for a given hue.
fn shade(rng: &mut ChaCha8Rng, depth: f64) -> [f64; 3] {
    const HAZE: f64 = 0.95;
    let hue = rng.random_range(0.0..360.0);
    let base = hsv_to_rgb(hue, 0.7, 0.5);
    let t = 0.85 * (depth - 0.1) / 0.9;
    base.map(|c| (1.0 - t) * c + t * HAZE)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m).clamp(0.0, 1.0), (g + m).clamp(0.0, 1.0), (b + m).clamp(0.0, 1.0)]
}

/// Which layer (0 = background) covers each pixel, and which pixels belong
/// to a visible balloon.
struct Coverage {
    owner: Vec<usize>,
    balloon: Vec<bool>,
}

impl SceneDescriptor {
    fn coverage(&self) -> Coverage {
        let n = self.height * self.width;
        let mut owner = vec![0; n];
        let mut balloon = vec![false; n];
        for (i, layer) in self.layers.iter().enumerate() {
            for y in 0..self.height {
                for x in 0..self.width {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let p = y * self.width + x;
                    let in_balloon = layer
                        .balloon
                        .is_some_and(|b| b.bbox.contains(ShapeKind::Ellipse, px, py));
                    if layer.bbox.contains(layer.shape, px, py) || in_balloon {
                        owner[p] = i + 1;
                        balloon[p] = in_balloon;
                    }
                }
            }
        }
        Coverage { owner, balloon }
    }

    /// Analytic depth of the scene.
    pub fn render_depth(&self) -> Result<DepthMap> {
        check_size(self.height, self.width)?;
        let cov = self.coverage();
        DepthMap::new(self.height, self.width, cov.owner.iter().map(|&k| layer_depth(k)).collect())
    }

    /// Image, depth and balloon mask.
    pub fn render(&self) -> Result<Scene> {
        check_size(self.height, self.width)?;
        let (h, w) = (self.height, self.width);
        let cov = self.coverage();
        let mut rgb = vec![[0.0; 3]; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = y * w + x;
                let k = cov.owner[p];
                rgb[p] = if k == 0 { self.background } else { self.layers[k - 1].color };
                let edge = k > 0
                    && !cov.balloon[p]
                    && [(0, -1), (0, 1), (-1, 0), (1, 0)].iter().any(|(dy, dx)| {
                        let (ny, nx) = (y as isize + dy, x as isize + dx);
                        ny < 0
                            || nx < 0
                            || ny >= h as isize
                            || nx >= w as isize
                            || cov.owner[ny as usize * w + nx as usize] != k
                    });
                if edge {
                    rgb[p] = rgb[p].map(|c| c * 0.25);
                }
            }
        }
        for layer in &self.layers {
            if let Some(b) = layer.balloon {
                paint_glyphs(&mut rgb, &cov, h, w, &b);
            }
        }
        let mut data = vec![0.0; 3 * h * w];
        for (p, px) in rgb.iter().enumerate() {
            for c in 0..3 {
                data[c * h * w + p] = px[c];
            }
        }
        let mask = cov.balloon.iter().map(|&b| u8::from(b)).collect();
        Ok(Scene {
            image: ImageTensor::new(h, w, data)?,
            depth: self.render_depth()?,
            mask: TextMask::new(h, w, mask)?,
            descriptor: self.clone(),
        })
    }
}

/// White fill with rows of dark, randomly broken strokes inside the inner
/// part of the balloon.
fn paint_glyphs(rgb: &mut [[f64; 3]], cov: &Coverage, h: usize, w: usize, b: &Balloon) {
    let mut rng = ChaCha8Rng::seed_from_u64(b.glyph_seed);
    let (cx, cy) = ((b.bbox.x0 + b.bbox.x1) / 2.0, (b.bbox.y0 + b.bbox.y1) / 2.0);
    let (rx, ry) = ((b.bbox.x1 - b.bbox.x0) / 2.0, (b.bbox.y1 - b.bbox.y0) / 2.0);
    let inner = BBox {
        x0: cx - 0.7 * rx,
        y0: cy - 0.6 * ry,
        x1: cx + 0.7 * rx,
        y1: cy + 0.6 * ry,
    };
    let y_start = b.bbox.y0.max(0.0) as usize;
    let y_end = (b.bbox.y1.ceil() as usize).min(h);
    let x_start = b.bbox.x0.max(0.0) as usize;
    let x_end = (b.bbox.x1.ceil() as usize).min(w);
    for y in y_start..y_end {
        for x in x_start..x_end {
            let p = y * w + x;
            // draw for every pixel in the box so the pattern only depends on
            // the balloon, not on what covers it
            let ink = rng.random_bool(0.55);
            if !cov.balloon[p] {
                continue;
            }
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let on_line = (y - y_start) % 3 != 0;
            rgb[p] = if on_line && ink && inner.contains(ShapeKind::Ellipse, px, py) {
                [0.05; 3]
            } else {
                [1.0; 3]
            };
        }
    }
}

impl Scene {
    /// Ordinal labels sampled from the interior of every visible layer:
    /// `l1` ranks layers from nearest (1) to the background, `l2` is 1.
    ///
    /// Points avoid outlines and balloons, and each layer contributes at
    /// most `per_layer` of them.
    pub fn annotation(&self, image_id: &str, per_layer: usize) -> OrderingAnnotation {
        let (h, w) = (self.depth.height(), self.depth.width());
        let mut by_depth: BTreeMap<u64, Vec<(u32, u32)>> = BTreeMap::new();
        for y in 1..h.saturating_sub(1) {
            for x in 1..w.saturating_sub(1) {
                let d = self.depth.get(y, x);
                let interior = (y - 1..=y + 1)
                    .all(|yy| (x - 1..=x + 1).all(|xx| self.depth.get(yy, xx) == d && !self.mask.get(yy, xx)));
                if interior {
                    by_depth.entry(d.to_bits()).or_default().push((x as u32, y as u32));
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.descriptor.seed ^ 0x5eed_a770);
        let mut entries = Vec::new();
        // f64 bits of positive values sort like the values, so iteration is near to far
        for (rank, points) in by_depth.values_mut().enumerate() {
            let take = per_layer.min(points.len());
            for i in 0..take {
                let j = rng.random_range(i..points.len());
                points.swap(i, j);
                let (x, y) = points[i];
                entries.push(AnnotationEntry {
                    x,
                    y,
                    l1: rank as u32 + 1,
                    l2: 1,
                });
            }
        }
        OrderingAnnotation {
            image_id: image_id.to_string(),
            entries,
        }
    }
}
