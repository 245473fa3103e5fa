use serde::{Deserialize, Serialize};

use crate::geometry::{dot, norm, sub, Vec3};

use super::RenderError;

pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, x) in row.iter_mut().enumerate() {
            *x = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec(a: &Mat3, v: Vec3) -> Vec3 {
    [dot(a[0], v), dot(a[1], v), dot(a[2], v)]
}

pub fn transpose(a: &Mat3) -> Mat3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn determinant(a: &Mat3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

/// Angle of the relative rotation `aᵀb`, in radians.
pub fn rotation_angle_between(a: &Mat3, b: &Mat3) -> f64 {
    let r = mat_mul(&transpose(a), b);
    let trace = r[0][0] + r[1][1] + r[2][2];
    ((trace - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// Rodrigues' formula for an axis-angle vector.
pub fn so3_exp(w: Vec3) -> Mat3 {
    let theta = norm(w);
    let (a, b) = if theta < 1e-4 {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0 + t2 * t2 / 120.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    let k = [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]];
    let k2 = mat_mul(&k, &k);
    let mut r = IDENTITY;
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] += a * k[i][j] + b * k2[i][j];
        }
    }
    r
}

/// Pinhole camera with a world-to-camera rigid transform `x_c = R x_w + t`.
///
/// Camera space follows the computer-vision convention: `+z` looks into the
/// scene, `+x` right and `+y` down in the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Mat3,
    pub translation: Vec3,
}

/// Pixel coordinates and camera-space depth of a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
    /// False when the point is not beyond the near clip plane.
    pub visible: bool,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` roughly pointing up in
    /// the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, fx: f64, fy: f64, width: usize, height: usize) -> Self {
        let z = crate::geometry::normalize(sub(target, eye));
        // image y points down, so the camera's x axis is z × up
        let mut x = crate::geometry::cross(z, up);
        if norm(x) < 1e-9 {
            x = crate::geometry::cross(z, [1.0, 0.0, 0.0]);
        }
        let x = crate::geometry::normalize(x);
        let y = crate::geometry::cross(z, x);
        let rotation = [x, y, z];
        let translation = mat_vec(&rotation, eye).map(|c| -c);
        Self {
            fx,
            fy,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
            rotation,
            translation,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(RenderError::BadCamera("focal lengths and resolution must be positive".into()));
        }
        let r = &self.rotation;
        let rrt = mat_mul(r, &transpose(r));
        let off = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .map(|(i, j)| (rrt[i][j] - IDENTITY[i][j]).abs())
            .fold(0.0, f64::max);
        if off > 1e-9 || (determinant(r) - 1.0).abs() > 1e-9 {
            return Err(RenderError::BadCamera("rotation is not orthonormal with determinant +1".into()));
        }
        Ok(())
    }

    /// Camera center in world coordinates, `−Rᵀt`.
    pub fn center(&self) -> Vec3 {
        mat_vec(&transpose(&self.rotation), self.translation).map(|c| -c)
    }

    pub fn world_to_camera(&self, x: Vec3) -> Vec3 {
        let r = mat_vec(&self.rotation, x);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    /// `4 × 4` camera-to-world matrix, rows `[Rᵀ | c]` then `[0 0 0 1]`.
    pub fn camera_to_world(&self) -> [[f64; 4]; 4] {
        let rt = transpose(&self.rotation);
        let c = self.center();
        [
            [rt[0][0], rt[0][1], rt[0][2], c[0]],
            [rt[1][0], rt[1][1], rt[1][2], c[1]],
            [rt[2][0], rt[2][1], rt[2][2], c[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    pub fn from_camera_to_world(m: &[[f64; 4]; 4], fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        let rotation = [
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ];
        let c = [m[0][3], m[1][3], m[2][3]];
        let translation = mat_vec(&rotation, c).map(|v| -v);
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            rotation,
            translation,
        }
    }

    /// Projects a world point; `near` is the clip distance.
    pub fn project(&self, x: Vec3, near: f64) -> Projection {
        let c = self.world_to_camera(x);
        Projection {
            pixel: [self.fx * c[0] / c[2] + self.cx, self.fy * c[1] / c[2] + self.cy],
            depth: c[2],
            visible: c[2] > near,
        }
    }

    /// `∂(u, v)/∂x` of [`Camera::project`] with respect to the world point.
    pub fn projection_jacobian(&self, x: Vec3) -> [[f64; 3]; 2] {
        let [cx, cy, cz] = self.world_to_camera(x);
        let du = [self.fx / cz, 0.0, -self.fx * cx / (cz * cz)];
        let dv = [0.0, self.fy / cz, -self.fy * cy / (cz * cz)];
        // chain through x_c = R x + t
        let r = &self.rotation;
        let row = |d: [f64; 3]| [0, 1, 2].map(|j| (0..3).map(|i| d[i] * r[i][j]).sum());
        [row(du), row(dv)]
    }

    /// Same pose with the image resampled by `factor` (e.g. 0.5 halves
    /// the resolution).
    pub fn scaled(&self, factor: f64) -> Self {
        let width = ((self.width as f64 * factor).round() as usize).max(1);
        let height = ((self.height as f64 * factor).round() as usize).max(1);
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: self.cx * sx,
            cy: self.cy * sy,
            width,
            height,
            ..self.clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LightMode {
    /// Point light at the camera center.
    Collocated,
    /// Point light at a world position.
    Point,
    /// Parallel light from a world direction (pointing toward the light).
    Directional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Light {
    pub mode: LightMode,
    /// Position (point), direction (directional) or ignored (collocated).
    pub xyz: Vec3,
}

impl Light {
    pub fn collocated() -> Self {
        Self {
            mode: LightMode::Collocated,
            xyz: [0.0; 3],
        }
    }

    pub fn point(position: Vec3) -> Self {
        Self {
            mode: LightMode::Point,
            xyz: position,
        }
    }

    pub fn directional(direction: Vec3) -> Self {
        Self {
            mode: LightMode::Directional,
            xyz: crate::geometry::normalize(direction),
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        if self.mode == LightMode::Directional && (norm(self.xyz) - 1.0).abs() > 1e-9 {
            return Err(RenderError::BadLight("directional light needs a unit direction".into()));
        }
        if !self.xyz.iter().all(|c| c.is_finite()) {
            return Err(RenderError::BadLight("non-finite light coordinates".into()));
        }
        Ok(())
    }

    /// World position of the light when it is a point light.
    pub fn world_position(&self, cam: &Camera) -> Option<Vec3> {
        match self.mode {
            LightMode::Collocated => Some(cam.center()),
            LightMode::Point => Some(self.xyz),
            LightMode::Directional => None,
        }
    }

    /// The light expressed in the camera's coordinates.
    pub fn in_camera(&self, cam: &Camera) -> crate::reflectance::PointLight {
        use crate::reflectance::PointLight;
        match self.mode {
            LightMode::Collocated => PointLight::Point([0.0; 3]),
            LightMode::Point => PointLight::Point(cam.world_to_camera(self.xyz)),
            LightMode::Directional => PointLight::Directional(mat_vec(&cam.rotation, self.xyz)),
        }
    }
}
