//! ERP pixel <-> sphere mapping, per-pixel solid angles and camera rays.
//!
//! Conventions: row 0 is latitude +pi/2, column 0 is longitude -pi, and the
//! world frame is right-handed with +z up. A direction with latitude `theta`
//! and longitude `phi` is `(cos theta cos phi, cos theta sin phi, sin theta)`.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub fn add_scaled(a: Vec3, b: Vec3, s: f64) -> Vec3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    /// Latitude in `[-pi/2, pi/2]`.
    pub theta: f64,
    /// Longitude in `[-pi, pi)`.
    pub phi: f64,
}

impl SphericalCoord {
    /// Clamps latitude and wraps longitude into `[-pi, pi)`.
    pub fn normalized(theta: f64, phi: f64) -> Self {
        let theta = theta.clamp(-FRAC_PI_2, FRAC_PI_2);
        let mut phi = (phi + PI).rem_euclid(2.0 * PI) - PI;
        if phi >= PI {
            phi -= 2.0 * PI;
        }
        Self { theta, phi }
    }

    pub fn to_direction(self) -> Vec3 {
        spherical_to_direction(self)
    }
}

/// Maps continuous pixel coordinates to latitude/longitude.
///
/// `u` and `v` are column and row plus a fractional offset; pixel centers sit
/// at `(col + 0.5, row + 0.5)`.
pub fn pixel_to_spherical(u: f64, v: f64, width: usize, height: usize) -> Result<SphericalCoord> {
    check_dims(width, height)?;
    if !(0.0..width as f64).contains(&u) || !(0.0..height as f64).contains(&v) {
        return Err(Error::domain(format!(
            "pixel coordinate ({u}, {v}) outside {width}x{height}"
        )));
    }
    Ok(SphericalCoord {
        theta: FRAC_PI_2 - PI * v / height as f64,
        phi: 2.0 * PI * u / width as f64 - PI,
    })
}

/// Inverse of [`pixel_to_spherical`].
pub fn spherical_to_pixel(s: SphericalCoord, width: usize, height: usize) -> (f64, f64) {
    let u = (s.phi + PI) * width as f64 / (2.0 * PI);
    let v = (FRAC_PI_2 - s.theta) * height as f64 / PI;
    (u, v)
}

pub fn spherical_to_direction(s: SphericalCoord) -> Vec3 {
    let (st, ct) = s.theta.sin_cos();
    let (sp, cp) = s.phi.sin_cos();
    [ct * cp, ct * sp, st]
}

pub fn direction_to_spherical(d: Vec3) -> SphericalCoord {
    let n = norm(d);
    SphericalCoord::normalized((d[2] / n).clamp(-1.0, 1.0).asin(), d[1].atan2(d[0]))
}

/// Latitude bounds `(theta_low, theta_high)` of an image row's pixel edges.
pub fn row_latitude_bounds(row: usize, height: usize) -> (f64, f64) {
    let h = height as f64;
    let hi = FRAC_PI_2 - PI * row as f64 / h;
    let lo = FRAC_PI_2 - PI * (row + 1) as f64 / h;
    (lo, hi)
}

/// Area a pixel of `row` covers on the unit sphere, in steradians.
///
/// `(phi2 - phi1) * (sin theta2 - sin theta1)`, the exact integral of
/// `cos theta` over the pixel's latitude/longitude rectangle.
pub fn pixel_solid_angle(row: usize, width: usize, height: usize) -> Result<f64> {
    check_dims(width, height)?;
    if row >= height {
        return Err(Error::domain(format!("row {row} outside height {height}")));
    }
    let (lo, hi) = row_latitude_bounds(row, height);
    Ok(2.0 * PI / width as f64 * (hi.sin() - lo.sin()))
}

/// Per-row solid angles of a `width` x `height` ERP image; column-independent.
#[derive(Debug, Clone, PartialEq)]
pub struct SolidAngles {
    width: usize,
    rows: Vec<f64>,
}

impl SolidAngles {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        let rows = (0..height)
            .map(|r| pixel_solid_angle(r, width, height))
            .collect::<Result<_>>()?;
        Ok(Self { width, rows })
    }

    pub fn row(&self, row: usize) -> f64 {
        self.rows[row]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn total(&self) -> f64 {
        self.width as f64 * self.rows.iter().sum::<f64>()
    }
}

fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::domain("image dimensions must be at least 1x1"));
    }
    Ok(())
}

/// World-from-camera rigid transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: Vec3,
    /// Row-major world-from-camera rotation.
    pub rotation: [[f64; 3]; 3],
}

impl CameraPose {
    pub fn new(position: Vec3, rotation: [[f64; 3]; 3]) -> Result<Self> {
        let pose = Self { position, rotation };
        pose.validate(1e-9)?;
        Ok(pose)
    }

    pub fn identity_at(position: Vec3) -> Self {
        Self {
            position,
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rotation by `yaw` radians about +z.
    pub fn yawed(position: Vec3, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        Self {
            position,
            rotation: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Checks orthonormality and a +1 determinant to `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        if self.position.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("camera position is not finite"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(r[i], r[j]);
                let want = if i == j { 1.0 } else { 0.0 };
                if !((d - want).abs() <= tol) {
                    return Err(Error::domain(format!(
                        "rotation is not orthonormal (rows {i},{j} dot = {d})"
                    )));
                }
            }
        }
        let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
            - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
            + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
        if !((det - 1.0).abs() <= tol) {
            return Err(Error::domain(format!("rotation determinant is {det}, not +1")));
        }
        Ok(())
    }

    pub fn rotate(&self, v: Vec3) -> Vec3 {
        let r = &self.rotation;
        [dot(r[0], v), dot(r[1], v), dot(r[2], v)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vec3 {
        add_scaled(self.origin, self.direction, t)
    }
}

/// Casts the ray through pixel `(col, row)` offset by `jitter` inside the pixel.
///
/// `jitter = [0.5, 0.5]` hits the pixel center.
#[allow(clippy::too_many_arguments)]
pub fn generate_ray(
    pose: &CameraPose,
    col: usize,
    row: usize,
    width: usize,
    height: usize,
    jitter: [f64; 2],
    t_near: f64,
    t_far: f64,
) -> Result<Ray> {
    if !jitter.iter().all(|j| (0.0..1.0).contains(j)) {
        return Err(Error::domain(format!("jitter {jitter:?} outside [0,1)^2")));
    }
    if !(t_near >= 0.0 && t_far > t_near) {
        return Err(Error::domain(format!(
            "ray interval [{t_near}, {t_far}] is invalid"
        )));
    }
    pose.validate(1e-6)?;
    let s = pixel_to_spherical(col as f64 + jitter[0], row as f64 + jitter[1], width, height)?;
    let mut direction = pose.rotate(spherical_to_direction(s));
    let n = norm(direction);
    direction = direction.map(|c| c / n);
    Ok(Ray {
        origin: pose.position,
        direction,
        t_near,
        t_far,
    })
}
