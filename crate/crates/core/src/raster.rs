//! Deterministic software rasterizer.
//!
//! Scenes are described in world coordinates and projected either
//! top-down (orthographic) or through a fixed pinhole camera. Shapes are
//! flat-shaded and drawn in list order (painter's algorithm). A pixel is
//! covered when its center lies inside the projected shape, so the output
//! is a pure function of the scene and the frame size.

use alloc::vec;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Color(pub u8, pub u8, pub u8);

impl Color {
    pub const FLOOR: Color = Color(128, 128, 128);
    pub const TABLE: Color = Color(176, 176, 176);
    pub const ROBOT: Color = Color(220, 30, 30);
    pub const TARGET: Color = Color(240, 220, 40);
    pub const WALL: Color = Color(0, 0, 0);
    pub const DISTRACTOR_BLUE: Color = Color(40, 70, 220);
    pub const DISTRACTOR_GREEN: Color = Color(40, 190, 70);
}

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Observation {
    pub fn filled(width: usize, height: usize, color: Color) -> Self {
        let mut data = vec![0u8; width * height * 3];
        for px in data.chunks_exact_mut(3) {
            px.copy_from_slice(&[color.0, color.1, color.2]);
        }
        Self { width, height, data }
    }

    /// Returns `None` when `data.len() != width * height * 3`.
    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Option<Self> {
        (data.len() == width * height * 3).then_some(Self { width, height, data })
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> Color {
        let i = (y * self.width + x) * 3;
        Color(self.data[i], self.data[i + 1], self.data[i + 2])
    }

    #[inline]
    fn put(&mut self, x: usize, y: usize, c: Color) {
        let i = (y * self.width + x) * 3;
        self.data[i] = c.0;
        self.data[i + 1] = c.1;
        self.data[i + 2] = c.2;
    }

    /// Nearest-neighbour resampling.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Observation {
        let mut out = Observation::filled(width, height, Color(0, 0, 0));
        for y in 0..height {
            let sy = y * self.height / height;
            for x in 0..width {
                let sx = x * self.width / width;
                out.put(x, y, self.pixel(sx, sy));
            }
        }
        out
    }
}

/// Pinhole camera looking at `target` with `up = +z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    /// Vertical field of view in radians.
    pub fov_y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Projection {
    /// Orthographic view of the world rectangle `[min, max]` seen from +z.
    TopDown { min: [f64; 2], max: [f64; 2] },
    Perspective(Camera),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Disc facing the viewer; radius in world units.
    Disc { center: [f64; 3], radius: f64 },
    /// Axis-aligned rectangle on the plane `z`.
    Rect { min: [f64; 2], max: [f64; 2], z: f64 },
    /// Planar convex quad.
    Quad { corners: [[f64; 3]; 4] },
    /// Thick line; width in world units.
    Segment { a: [f64; 3], b: [f64; 3], width: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDescription {
    pub projection: Projection,
    pub background: Color,
    pub items: Vec<(Shape, Color)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self { width: 64, height: 64 }
    }
}

struct Projector {
    projection: Projection,
    width: f64,
    height: f64,
    right: [f64; 3],
    up: [f64; 3],
    forward: [f64; 3],
    focal: f64,
}

const NEAR: f64 = 1e-3;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}
fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}
fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Projector {
    fn new(projection: Projection, cfg: RenderConfig) -> Self {
        let (w, h) = (cfg.width as f64, cfg.height as f64);
        let mut p = Projector {
            projection,
            width: w,
            height: h,
            right: [1.0, 0.0, 0.0],
            up: [0.0, 1.0, 0.0],
            forward: [0.0, 0.0, -1.0],
            focal: 1.0,
        };
        if let Projection::Perspective(cam) = projection {
            let forward = normalize(sub(cam.target, cam.eye));
            let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
            p.up = cross(right, forward);
            p.right = right;
            p.forward = forward;
            p.focal = (h / 2.0) / (cam.fov_y / 2.0).tan();
        }
        p
    }

    /// Screen position and world-to-pixel scale at that point.
    fn project(&self, p: [f64; 3]) -> Option<([f64; 2], f64)> {
        match self.projection {
            Projection::TopDown { min, max } => {
                let sx = self.width / (max[0] - min[0]);
                let sy = self.height / (max[1] - min[1]);
                Some(([(p[0] - min[0]) * sx, (max[1] - p[1]) * sy], sx.min(sy)))
            }
            Projection::Perspective(cam) => {
                let d = sub(p, cam.eye);
                let z = dot(d, self.forward);
                if z <= NEAR {
                    return None;
                }
                let x = dot(d, self.right);
                let y = dot(d, self.up);
                let scale = self.focal / z;
                Some(([self.width / 2.0 + x * scale, self.height / 2.0 - y * scale], scale))
            }
        }
    }
}

/// Renders `scene` into a fresh image.
pub fn render(scene: &SceneDescription, cfg: RenderConfig) -> Observation {
    let mut img = Observation::filled(cfg.width, cfg.height, scene.background);
    let proj = Projector::new(scene.projection, cfg);
    for (shape, color) in &scene.items {
        draw_shape(&mut img, &proj, shape, *color);
    }
    img
}

fn draw_shape(img: &mut Observation, proj: &Projector, shape: &Shape, color: Color) {
    match *shape {
        Shape::Disc { center, radius } => {
            if let Some((c, scale)) = proj.project(center) {
                fill_circle(img, c, radius * scale, color);
            }
        }
        Shape::Rect { min, max, z } => {
            let corners = [[min[0], min[1], z], [max[0], min[1], z], [max[0], max[1], z], [min[0], max[1], z]];
            draw_quad(img, proj, &corners, color);
        }
        Shape::Quad { corners } => draw_quad(img, proj, &corners, color),
        Shape::Segment { a, b, width } => {
            let (Some((pa, sa)), Some((pb, sb))) = (proj.project(a), proj.project(b)) else {
                return;
            };
            let half = 0.5 * width * 0.5 * (sa + sb);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
            if len < 1e-12 {
                fill_circle(img, pa, half, color);
                return;
            }
            let n = [-d[1] / len * half, d[0] / len * half];
            let poly = [
                [pa[0] + n[0], pa[1] + n[1]],
                [pb[0] + n[0], pb[1] + n[1]],
                [pb[0] - n[0], pb[1] - n[1]],
                [pa[0] - n[0], pa[1] - n[1]],
            ];
            fill_convex(img, &poly, color);
            fill_circle(img, pa, half, color);
            fill_circle(img, pb, half, color);
        }
    }
}

fn draw_quad(img: &mut Observation, proj: &Projector, corners: &[[f64; 3]; 4], color: Color) {
    let mut pts = [[0.0; 2]; 4];
    for (dst, c) in pts.iter_mut().zip(corners) {
        match proj.project(*c) {
            Some((p, _)) => *dst = p,
            None => return,
        }
    }
    fill_convex(img, &pts, color);
}

fn pixel_range(lo: f64, hi: f64, limit: usize) -> core::ops::Range<usize> {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = ((hi - 0.5).floor() + 1.0).min(limit as f64);
    if !(start < end) {
        return 0..0;
    }
    start as usize..end as usize
}

/// Fills pixels whose centers fall inside the circle.
pub fn fill_circle(img: &mut Observation, c: [f64; 2], r: f64, color: Color) {
    if !(r > 0.0) {
        return;
    }
    let r2 = r * r;
    for y in pixel_range(c[1] - r, c[1] + r, img.height) {
        let dy = y as f64 + 0.5 - c[1];
        for x in pixel_range(c[0] - r, c[0] + r, img.width) {
            let dx = x as f64 + 0.5 - c[0];
            if dx * dx + dy * dy <= r2 {
                img.put(x, y, color);
            }
        }
    }
}

/// Fills a convex polygon given in screen space, either winding.
pub fn fill_convex(img: &mut Observation, poly: &[[f64; 2]], color: Color) {
    if poly.len() < 3 {
        return;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in poly {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let area: f64 = (0..poly.len())
        .map(|i| {
            let a = poly[i];
            let b = poly[(i + 1) % poly.len()];
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    if area == 0.0 {
        return;
    }
    let sign = area.signum();
    for y in pixel_range(y0, y1, img.height) {
        let py = y as f64 + 0.5;
        for x in pixel_range(x0, x1, img.width) {
            let px = x as f64 + 0.5;
            let inside = (0..poly.len()).all(|i| {
                let a = poly[i];
                let b = poly[(i + 1) % poly.len()];
                let e = (b[0] - a[0]) * (py - a[1]) - (b[1] - a[1]) * (px - a[0]);
                e * sign >= 0.0
            });
            if inside {
                img.put(x, y, color);
            }
        }
    }
}
