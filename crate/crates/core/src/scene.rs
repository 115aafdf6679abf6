//! Procedural emissive-fog scenes with piecewise-constant density and color.
//!
//! Because every primitive has constant interior density, a ray crosses a
//! finite list of homogeneous segments, and [`AnalyticScene::render_ray`]
//! composites them exactly: `alpha = 1 - exp(-sigma * length)` per segment.
//! This is the ground truth for generated datasets and the reference the
//! renderer is checked against.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::RadianceQuery;
use crate::geometry::{dot, generate_ray, CameraPose, Ray, Vec3};
use crate::image::ErpImage;
use crate::rng::{seeded, UniformSource};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Cuboid { min: Vec3, max: Vec3 },
}

impl Shape {
    fn contains(&self, p: Vec3) -> bool {
        match *self {
            Shape::Sphere { center, radius } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                dot(d, d) <= radius * radius
            }
            Shape::Cuboid { min, max } => (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]),
        }
    }

    fn volume(&self) -> f64 {
        match *self {
            Shape::Sphere { radius, .. } => 4.0 / 3.0 * PI * radius.powi(3),
            Shape::Cuboid { min, max } => (0..3).map(|k| max[k] - min[k]).product(),
        }
    }

    /// Parameter interval `[t0, t1]` where the ray is inside the shape.
    fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (o, d) = (ray.origin, ray.direction);
        match *self {
            Shape::Sphere { center, radius } => {
                let oc = [o[0] - center[0], o[1] - center[1], o[2] - center[2]];
                let b = dot(oc, d);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Cuboid { min, max } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for k in 0..3 {
                    if d[k] == 0.0 {
                        if o[k] < min[k] || o[k] > max[k] {
                            return None;
                        }
                        continue;
                    }
                    let (a, b) = ((min[k] - o[k]) / d[k], (max[k] - o[k]) / d[k]);
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 < t1).then_some((t0, t1))
            }
        }
    }

    fn max_distance_from_origin(&self) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => dot(center, center).sqrt() + radius,
            Shape::Cuboid { min, max } => {
                let far: Vec3 = std::array::from_fn(|k| min[k].abs().max(max[k].abs()));
                dot(far, far).sqrt()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// Interior density, per world unit.
    pub sigma: f64,
    pub rgb: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    pub ambient_sigma: f64,
    pub ambient_rgb: [f64; 3],
    /// Every primitive lies within this distance of the origin.
    pub bound_radius: f64,
    pub t_far: f64,
}

/// Built-in scenes selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenePreset {
    /// Walled room with colored spheres and a checkered cube.
    Toy,
    /// Thin translucent spheres with no walls.
    Fog,
    Empty,
}

impl std::str::FromStr for ScenePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Self::Toy),
            "fog" => Ok(Self::Fog),
            "empty" => Ok(Self::Empty),
            other => Err(Error::Config(format!(
                "unknown scene preset '{other}' (expected toy, fog or empty)"
            ))),
        }
    }
}

impl ScenePreset {
    pub fn build(self) -> AnalyticScene {
        match self {
            Self::Toy => toy_scene(),
            Self::Fog => fog_scene(),
            Self::Empty => AnalyticScene::new(Vec::new(), 0.0, [0.0; 3], 6.0).expect("empty scene"),
        }
    }
}

const SOLID: f64 = 40.0;

fn sphere(center: Vec3, radius: f64, sigma: f64, rgb: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Sphere { center, radius },
        sigma,
        rgb,
    }
}

fn cuboid(min: Vec3, max: Vec3, sigma: f64, rgb: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Cuboid { min, max },
        sigma,
        rgb,
    }
}

/// Room of half-extent 2.5 (walls 0.5 thick), eight spheres, and a 0.8-unit
/// cube of 4x4x4 alternating cells.
pub fn toy_scene() -> AnalyticScene {
    let (a, b) = (2.5, 3.0);
    let mut prims = vec![
        cuboid([-b, -b, -b], [b, b, -a], SOLID, [0.55, 0.5, 0.45]),
        cuboid([-b, -b, a], [b, b, b], SOLID, [0.9, 0.9, 0.85]),
        cuboid([a, -b, -a], [b, b, a], SOLID, [0.8, 0.3, 0.3]),
        cuboid([-b, -b, -a], [-a, b, a], SOLID, [0.3, 0.5, 0.8]),
        cuboid([-a, a, -a], [a, b, a], SOLID, [0.4, 0.7, 0.4]),
        cuboid([-a, -b, -a], [a, -a, a], SOLID, [0.85, 0.75, 0.35]),
    ];
    let spheres = [
        ([1.6, 0.9, 0.2], 0.45, [0.9, 0.2, 0.2]),
        ([-1.4, 1.3, -0.4], 0.55, [0.2, 0.8, 0.3]),
        ([-1.8, -0.9, 0.5], 0.4, [0.2, 0.3, 0.9]),
        ([0.3, 1.9, 0.9], 0.35, [0.95, 0.8, 0.1]),
        ([0.2, -1.9, -0.8], 0.5, [0.7, 0.2, 0.8]),
        ([-0.6, -1.5, 1.3], 0.3, [0.1, 0.8, 0.8]),
        ([1.2, 1.5, -1.3], 0.6, [0.95, 0.55, 0.15]),
        ([-0.3, 0.4, -1.9], 0.35, [0.95, 0.95, 0.95]),
    ];
    prims.extend(spheres.iter().map(|&(c, r, rgb)| sphere(c, r, SOLID, rgb)));
    let (origin, cell, cells) = ([1.3, -1.6, -0.5], 0.2, 4);
    for i in 0..cells {
        for j in 0..cells {
            for k in 0..cells {
                let min = [
                    origin[0] + i as f64 * cell,
                    origin[1] + j as f64 * cell,
                    origin[2] + k as f64 * cell,
                ];
                let max = min.map(|v| v + cell);
                let rgb = if (i + j + k) % 2 == 0 {
                    [0.95, 0.95, 0.9]
                } else {
                    [0.08, 0.08, 0.12]
                };
                prims.push(cuboid(min, max, SOLID, rgb));
            }
        }
    }
    AnalyticScene::new(prims, 0.0, [0.0; 3], 6.0).expect("toy scene is valid")
}

/// Low-density spheres, used where quadrature must converge quickly.
pub fn fog_scene() -> AnalyticScene {
    let prims = vec![
        sphere([1.5, 0.0, 0.0], 0.8, 0.06, [0.9, 0.3, 0.2]),
        sphere([-1.0, 1.2, 0.4], 1.0, 0.04, [0.2, 0.7, 0.3]),
        sphere([-0.5, -1.5, -0.6], 0.6, 0.08, [0.2, 0.3, 0.9]),
        sphere([-0.5, -1.5, -0.6], 0.3, 0.1, [0.9, 0.9, 0.2]),
    ];
    AnalyticScene::new(prims, 0.01, [0.5, 0.5, 0.5], 4.0).expect("fog scene is valid")
}

impl AnalyticScene {
    pub fn new(primitives: Vec<Primitive>, ambient_sigma: f64, ambient_rgb: [f64; 3], t_far: f64) -> Result<Self> {
        if !(ambient_sigma >= 0.0) || primitives.iter().any(|p| !(p.sigma >= 0.0)) {
            return Err(Error::domain("scene densities must be >= 0"));
        }
        let bound_radius = primitives
            .iter()
            .map(|p| p.shape.max_distance_from_origin())
            .fold(0.0, f64::max);
        if bound_radius > t_far {
            return Err(Error::domain(format!(
                "primitives reach radius {bound_radius}, beyond t_far {t_far}"
            )));
        }
        Ok(Self {
            primitives,
            ambient_sigma,
            ambient_rgb,
            bound_radius,
            t_far,
        })
    }

    /// Density and color at `p`: the smallest-volume primitive containing
    /// `p` wins (earliest on ties), otherwise the ambient medium.
    pub fn field(&self, p: Vec3) -> (f64, [f64; 3]) {
        let mut best: Option<(f64, &Primitive)> = None;
        for prim in &self.primitives {
            if prim.shape.contains(p) {
                let v = prim.shape.volume();
                if best.map_or(true, |(bv, _)| v < bv) {
                    best = Some((v, prim));
                }
            }
        }
        match best {
            Some((_, prim)) => (prim.sigma, prim.rgb),
            None => (self.ambient_sigma, self.ambient_rgb),
        }
    }

    /// Exact compositing over the homogeneous segments of `ray`.
    pub fn render_ray(&self, ray: &Ray) -> [f64; 3] {
        let mut cuts = vec![ray.t_near, ray.t_far];
        for prim in &self.primitives {
            if let Some((a, b)) = prim.shape.intersect(ray) {
                for t in [a, b] {
                    if t > ray.t_near && t < ray.t_far {
                        cuts.push(t);
                    }
                }
            }
        }
        cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite cut"));
        let mut color = [0.0; 3];
        let mut transmittance = 1.0;
        for w in cuts.windows(2) {
            let len = w[1] - w[0];
            if len <= 0.0 {
                continue;
            }
            let (sigma, rgb) = self.field(ray.at(0.5 * (w[0] + w[1])));
            let alpha = -(-sigma * len).exp_m1();
            for k in 0..3 {
                color[k] += transmittance * alpha * rgb[k];
            }
            transmittance *= 1.0 - alpha;
        }
        color
    }

    /// Midpoint-rule compositing with `n` equal steps; converges to
    /// [`render_ray`](Self::render_ray) as `n` grows.
    pub fn quadrature_ray(&self, ray: &Ray, n: usize) -> [f64; 3] {
        let dt = (ray.t_far - ray.t_near) / n as f64;
        let mut color = [0.0; 3];
        let mut transmittance = 1.0;
        for i in 0..n {
            let (sigma, rgb) = self.field(ray.at(ray.t_near + (i as f64 + 0.5) * dt));
            let alpha = -(-sigma * dt).exp_m1();
            for k in 0..3 {
                color[k] += transmittance * alpha * rgb[k];
            }
            transmittance *= 1.0 - alpha;
        }
        color
    }

    fn render_with(&self, pose: &CameraPose, width: usize, height: usize, f: impl Fn(&Ray) -> [f64; 3]) -> Result<ErpImage> {
        let mut img = ErpImage::new(width, height);
        for row in 0..height {
            for col in 0..width {
                let ray = generate_ray(pose, col, row, width, height, [0.5, 0.5], 0.0, self.t_far)?;
                img.set(col, row, f(&ray));
            }
        }
        Ok(img)
    }

    /// Ground-truth ERP image seen from `pose`, one ray through each pixel center.
    pub fn oracle_render(&self, pose: &CameraPose, width: usize, height: usize) -> Result<ErpImage> {
        self.render_with(pose, width, height, |r| self.render_ray(r))
    }

    pub fn quadrature_render(&self, pose: &CameraPose, width: usize, height: usize, n: usize) -> Result<ErpImage> {
        if n == 0 {
            return Err(Error::domain("quadrature needs at least one step"));
        }
        self.render_with(pose, width, height, |r| self.quadrature_ray(r, n))
    }

    /// Camera poses inside the empty middle of the scene: positions in a
    /// flattened ball of radius `radius`, random yaw.
    pub fn sample_poses(&self, count: usize, radius: f64, rng: &mut impl UniformSource) -> Vec<CameraPose> {
        let mut poses = Vec::with_capacity(count);
        while poses.len() < count {
            let p = [
                radius * (2.0 * rng.uniform() - 1.0),
                radius * (2.0 * rng.uniform() - 1.0),
                0.5 * radius * (2.0 * rng.uniform() - 1.0),
            ];
            let yaw = PI * (2.0 * rng.uniform() - 1.0);
            if dot(p, p) <= radius * radius && self.field(p).0 == self.ambient_sigma {
                poses.push(CameraPose::yawed(p, yaw));
            }
        }
        poses
    }

    /// Deterministic train/test poses for `seed`.
    pub fn dataset_poses(&self, n_train: usize, n_test: usize, seed: u64) -> (Vec<CameraPose>, Vec<CameraPose>) {
        let mut rng = seeded(seed);
        let train = self.sample_poses(n_train, 0.5, &mut rng);
        let test = self.sample_poses(n_test, 0.5, &mut rng);
        (train, test)
    }
}

impl RadianceQuery for AnalyticScene {
    fn query(&self, positions: &[Vec3], _: &[Vec3], sigma: &mut Vec<f64>, rgb: &mut Vec<[f64; 3]>) -> Result<()> {
        sigma.clear();
        rgb.clear();
        for &p in positions {
            let (s, c) = self.field(p);
            sigma.push(s);
            rgb.push(c);
        }
        Ok(())
    }
}
