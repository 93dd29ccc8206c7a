//! Velocity-aligned planning frame.

use nalgebra::{Matrix3, Vector3};

/// Gravity direction in the world frame.
pub const GRAVITY_DIR: Vector3<f64> = Vector3::new(0.0, 0.0, -1.0);

/// Rigid transform from the velocity-aligned frame to the world.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityFrame {
    /// Columns are the frame axes expressed in world coordinates.
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl VelocityFrame {
    pub fn identity_at(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    pub fn x_axis(&self) -> Vector3<f64> {
        self.rotation.column(0).into()
    }

    pub fn y_axis(&self) -> Vector3<f64> {
        self.rotation.column(1).into()
    }

    pub fn z_axis(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }

    #[inline]
    pub fn to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn to_local(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.tr_mul(&(p - self.translation))
    }

    #[inline]
    pub fn vector_to_world(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }
}

fn near_vertical(x: &Vector3<f64>) -> bool {
    // Within one degree of the gravity axis.
    x.dot(&GRAVITY_DIR).abs() > 1f64.to_radians().cos()
}

/// Builds the planning frame at `p` with x along `v`. Below `eps_v`, or when
/// `v` is nearly vertical, `fallback_dir` is used instead.
pub fn velocity_frame(
    p: Vector3<f64>,
    v: Vector3<f64>,
    fallback_dir: Vector3<f64>,
    eps_v: f64,
) -> VelocityFrame {
    let speed = v.norm();
    let mut x = if speed >= eps_v {
        v / speed
    } else {
        fallback_dir
    };
    if !(x.norm() > 0.5) || near_vertical(&x) {
        x = fallback_dir;
    }
    if !(x.norm() > 0.5) || near_vertical(&x) {
        x = Vector3::x();
    }
    let x = x.normalize();
    let y = x.cross(&GRAVITY_DIR).normalize();
    let z = x.cross(&y);
    VelocityFrame {
        rotation: Matrix3::from_columns(&[x, y, z]),
        translation: p,
    }
}
