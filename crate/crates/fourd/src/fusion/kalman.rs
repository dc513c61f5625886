//! Constant-velocity Kalman filter over 3D positions.
//!
//! State is position and velocity in the global frame with one frame as
//! the time unit; measurements are segment centroids. Matrices are small
//! and fixed size, so every operation is closed form and allocation free.

use nalgebra::{Matrix3, Matrix6, Point3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

type Vector6 = SVector<f64, 6>;
type Matrix3x6 = SMatrix<f64, 3, 6>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KalmanConfig {
    /// Process noise added to position variance each frame.
    pub process_pos: f64,
    /// Process noise added to velocity variance each frame.
    pub process_vel: f64,
    /// Measurement noise variance of centroid observations.
    pub measurement: f64,
    /// Initial position variance.
    pub init_pos: f64,
    /// Initial velocity variance.
    pub init_vel: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_pos: 0.01,
            process_vel: 0.01,
            measurement: 0.05,
            init_pos: 0.25,
            init_vel: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Kalman {
    x: Vector6,
    p: Matrix6<f64>,
    cfg: KalmanConfig,
}

impl Kalman {
    pub fn new(first: &Point3<f64>, cfg: KalmanConfig) -> Self {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&first.coords);
        let mut p = Matrix6::zeros();
        for a in 0..3 {
            p[(a, a)] = cfg.init_pos;
            p[(a + 3, a + 3)] = cfg.init_vel;
        }
        Self { x, p, cfg }
    }

    fn transition() -> Matrix6<f64> {
        let mut f = Matrix6::identity();
        for a in 0..3 {
            f[(a, a + 3)] = 1.0;
        }
        f
    }

    /// Advances one frame.
    pub fn predict(&mut self) {
        let f = Self::transition();
        self.x = f * self.x;
        self.p = f * self.p * f.transpose();
        for a in 0..3 {
            self.p[(a, a)] += self.cfg.process_pos;
            self.p[(a + 3, a + 3)] += self.cfg.process_vel;
        }
    }

    /// Folds in a centroid measurement.
    pub fn update(&mut self, z: &Point3<f64>) {
        let mut h = Matrix3x6::zeros();
        for a in 0..3 {
            h[(a, a)] = 1.0;
        }
        let y = z.coords - h * self.x;
        let s = h * self.p * h.transpose() + Matrix3::identity() * self.cfg.measurement;
        let k = self.p * h.transpose() * s.try_inverse().expect("S is positive definite");
        self.x += k * y;
        self.p = (Matrix6::identity() - k * h) * self.p;
    }

    pub fn position(&self) -> Point3<f64> {
        Point3::from(Vector3::new(self.x[0], self.x[1], self.x[2]))
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.x[3], self.x[4], self.x[5])
    }
}
