//! Constant-velocity Kalman filter over boxes, state
//! `[u, v, s, r, du, dv, ds]` (centre, area, aspect ratio, velocities per
//! frame). Aspect ratio has no velocity term.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::BBox;
use crate::error::{Error, Result};

pub type State = SVector<f64, 7>;
pub type Covariance = SMatrix<f64, 7, 7>;
type Measurement = SVector<f64, 4>;
type Observation = SMatrix<f64, 4, 7>;

/// Negative eigenvalues down to this (relative to the largest) are treated
/// as rounding noise.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Diagonal noise settings; defaults are the constants of the reference
/// SORT tracker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KalmanParams {
    pub measurement_noise: [f64; 4],
    pub process_noise: [f64; 7],
    pub initial_covariance: [f64; 7],
}

impl Default for KalmanParams {
    fn default() -> Self {
        Self {
            measurement_noise: [1.0, 1.0, 10.0, 10.0],
            process_noise: [1.0, 1.0, 1.0, 1.0, 0.01, 0.01, 0.0001],
            initial_covariance: [10.0, 10.0, 10.0, 10.0, 10_000.0, 10_000.0, 10_000.0],
        }
    }
}

fn transition() -> Covariance {
    let mut f = Covariance::identity();
    f[(0, 4)] = 1.0;
    f[(1, 5)] = 1.0;
    f[(2, 6)] = 1.0;
    f
}

fn observation() -> Observation {
    let mut h = Observation::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

pub fn bbox_to_measurement(b: &BBox) -> [f64; 4] {
    let (w, h) = (b.width(), b.height());
    [b.u_min + w / 2.0, b.v_min + h / 2.0, w * h, w / h]
}

pub fn measurement_to_bbox(z: &[f64]) -> BBox {
    let (s, r) = (z[2].max(0.0), z[3]);
    let w = (s * r).max(0.0).sqrt();
    let h = if w > 0.0 { s / w } else { 0.0 };
    BBox { u_min: z[0] - w / 2.0, v_min: z[1] - h / 2.0, u_max: z[0] + w / 2.0, v_max: z[1] + h / 2.0 }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanBox {
    pub x: State,
    pub p: Covariance,
}

impl KalmanBox {
    pub fn new(b: &BBox, params: &KalmanParams) -> Self {
        let z = bbox_to_measurement(b);
        let mut x = State::zeros();
        x.fixed_rows_mut::<4>(0).copy_from_slice(&z);
        let p = Covariance::from_diagonal(&SVector::from(params.initial_covariance));
        Self { x, p }
    }

    pub fn bbox(&self) -> BBox {
        measurement_to_bbox(self.x.as_slice())
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }

    pub fn predict(&mut self, params: &KalmanParams) -> Result<()> {
        if self.x[2] + self.x[6] <= 0.0 {
            self.x[6] = 0.0;
        }
        let f = transition();
        let q = Covariance::from_diagonal(&SVector::from(params.process_noise));
        self.x = f * self.x;
        self.p = f * self.p * f.transpose() + q;
        self.stabilize()
    }

    pub fn update(&mut self, b: &BBox, params: &KalmanParams) -> Result<()> {
        let h = observation();
        let r = SMatrix::<f64, 4, 4>::from_diagonal(&SVector::from(params.measurement_noise));
        let z = Measurement::from(bbox_to_measurement(b));
        let innovation = z - h * self.x;
        let s = h * self.p * h.transpose() + r;
        let s_inv = s.try_inverse().ok_or_else(|| Error::Numerical("singular innovation covariance".into()))?;
        let k = self.p * h.transpose() * s_inv;
        self.x += k * innovation;
        // Joseph form keeps the covariance symmetric positive semi-definite.
        let ikh = Covariance::identity() - k * h;
        self.p = ikh * self.p * ikh.transpose() + k * r * k.transpose();
        self.stabilize()
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.p.symmetric_eigen().eigenvalues.min()
    }

    fn stabilize(&mut self) -> Result<()> {
        self.p = (self.p + self.p.transpose()) * 0.5;
        let eig = self.p.symmetric_eigenvalues();
        let scale = eig.amax().max(1.0);
        if eig.min() < -PSD_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "covariance lost positive semi-definiteness (min eigenvalue {})",
                eig.min()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(u: f64, v: f64, w: f64, h: f64) -> BBox {
        BBox { u_min: u - w / 2.0, v_min: v - h / 2.0, u_max: u + w / 2.0, v_max: v + h / 2.0 }
    }

    #[test]
    fn measurement_round_trip() {
        let b = bx(100.0, 50.0, 20.0, 10.0);
        let z = bbox_to_measurement(&b);
        assert_eq!(z, [100.0, 50.0, 200.0, 2.0]);
        let back = measurement_to_bbox(&z);
        assert!((back.u_min - b.u_min).abs() < 1e-12 && (back.v_max - b.v_max).abs() < 1e-12);
    }

    #[test]
    fn zero_velocity_predict_keeps_box() {
        let params = KalmanParams::default();
        let mut k = KalmanBox::new(&bx(10.0, 20.0, 8.0, 4.0), &params);
        let before = k.x;
        k.predict(&params).unwrap();
        for i in 0..4 {
            assert_eq!(k.x[i], before[i]);
        }
    }

    #[test]
    fn velocity_moves_prediction() {
        let params = KalmanParams::default();
        let mut k = KalmanBox::new(&bx(10.0, 20.0, 8.0, 4.0), &params);
        k.x[4] = 2.0;
        k.predict(&params).unwrap();
        assert_eq!(k.x[0], 12.0);
        assert_eq!(k.x[1], 20.0);
    }

    #[test]
    fn negative_area_velocity_clamped() {
        let params = KalmanParams::default();
        let mut k = KalmanBox::new(&bx(10.0, 20.0, 2.0, 2.0), &params);
        k.x[6] = -10.0;
        k.predict(&params).unwrap();
        assert_eq!(k.x[6], 0.0);
        assert_eq!(k.x[2], 4.0);
    }

    #[test]
    fn converges_on_constant_velocity() {
        let params = KalmanParams::default();
        let truth = |f: usize| bx(50.0 + 3.0 * f as f64, 80.0 - 1.5 * f as f64, 30.0, 15.0);
        let mut k = KalmanBox::new(&truth(0), &params);
        for f in 1..=20 {
            k.predict(&params).unwrap();
            if f == 20 {
                let (pu, pv) = (k.x[0], k.x[1]);
                let [tu, tv, _, _] = bbox_to_measurement(&truth(20));
                assert!((pu - tu).abs() < 0.5 && (pv - tv).abs() < 0.5, "{pu},{pv} vs {tu},{tv}");
            }
            k.update(&truth(f), &params).unwrap();
            assert!(k.min_eigenvalue() >= -1e-9);
            assert_eq!(k.p, k.p.transpose());
        }
    }

    #[test]
    fn noiseless_measurement_pins_state() {
        let params = KalmanParams { measurement_noise: [0.0; 4], ..Default::default() };
        let mut k = KalmanBox::new(&bx(10.0, 10.0, 4.0, 4.0), &params);
        k.predict(&params).unwrap();
        let target = bx(13.0, 9.0, 6.0, 3.0);
        k.update(&target, &params).unwrap();
        let z = bbox_to_measurement(&target);
        for i in 0..4 {
            assert!((k.x[i] - z[i]).abs() <= 1e-9 * z[i].abs().max(1.0), "{i}");
        }
    }
}
