//! Pinhole camera and rectified stereo-pair math.
//!
//! Frames are right-handed with `z` along the optical axis. All lengths are
//! meters, image coordinates are pixels with the origin at the top-left corner.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = nalgebra::Point3<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("disparity {0} px is not positive; target at infinity or correspondence failure")]
    DegenerateDisparity(f64),
    #[error("depth {0} m is not positive")]
    InvalidDepth(f64),
    #[error("point is behind the camera (z = {0} m)")]
    BehindCamera(f64),
    #[error("projection ({u:.2}, {v:.2}) px falls outside the image")]
    OutOfFrame { u: f64, v: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
}

/// A rectified, distortion-free stereo pair. The left camera defines the frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StereoRig {
    pub focal_px: f64,
    pub baseline_m: f64,
    pub image_w: u32,
    pub image_h: u32,
    pub cx: f64,
    pub cy: f64,
}

impl Default for StereoRig {
    fn default() -> Self {
        Self {
            focal_px: 500.0,
            baseline_m: 0.10,
            image_w: 400,
            image_h: 400,
            cx: 200.0,
            cy: 200.0,
        }
    }
}

/// Left-image pixel plus the horizontal left/right disparity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelObservation {
    pub u: f64,
    pub v: f64,
    pub disparity_px: f64,
}

impl StereoRig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.focal_px.is_finite() && self.focal_px > 0.0) {
            return Err("rig.focal_px must be > 0".into());
        }
        if !(self.baseline_m.is_finite() && self.baseline_m > 0.0) {
            return Err("rig.baseline_m must be > 0".into());
        }
        if self.image_w == 0 || self.image_h == 0 {
            return Err("rig.image_w and rig.image_h must be > 0".into());
        }
        let (w, h) = (f64::from(self.image_w), f64::from(self.image_h));
        if !(0.0..=w).contains(&self.cx) || !(0.0..=h).contains(&self.cy) {
            return Err("rig principal point must lie inside the image".into());
        }
        Ok(())
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < f64::from(self.image_w) && v < f64::from(self.image_h)
    }

    /// Depth from disparity, `Z = f·T/d`.
    pub fn stereo_depth(&self, disparity_px: f64) -> Result<f64, GeometryError> {
        if !disparity_px.is_finite() {
            return Err(GeometryError::InvalidInput("disparity must be finite"));
        }
        if disparity_px <= 0.0 {
            return Err(GeometryError::DegenerateDisparity(disparity_px));
        }
        Ok(self.focal_px * self.baseline_m / disparity_px)
    }

    /// Inverts the pinhole projection at a known depth.
    pub fn back_project(&self, obs: &PixelObservation, depth_m: f64) -> Result<Point3, GeometryError> {
        if !(obs.u.is_finite() && obs.v.is_finite() && depth_m.is_finite()) {
            return Err(GeometryError::InvalidInput("observation and depth must be finite"));
        }
        if depth_m <= 0.0 {
            return Err(GeometryError::InvalidDepth(depth_m));
        }
        if !self.contains(obs.u, obs.v) {
            return Err(GeometryError::OutOfFrame { u: obs.u, v: obs.v });
        }
        let scale = depth_m / self.focal_px;
        Ok(Point3::new((obs.u - self.cx) * scale, (obs.v - self.cy) * scale, depth_m))
    }

    /// Forward model: left-image pixel and the disparity the pair would measure.
    pub fn project(&self, p: &Point3) -> Result<PixelObservation, GeometryError> {
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(GeometryError::InvalidInput("point must be finite"));
        }
        if p.z <= 0.0 {
            return Err(GeometryError::BehindCamera(p.z));
        }
        let u = self.cx + self.focal_px * p.x / p.z;
        let v = self.cy + self.focal_px * p.y / p.z;
        if !self.contains(u, v) {
            return Err(GeometryError::OutOfFrame { u, v });
        }
        Ok(PixelObservation {
            u,
            v,
            disparity_px: self.focal_px * self.baseline_m / p.z,
        })
    }

    /// Full triangulation of an observation: depth from disparity, then back-projection.
    pub fn triangulate(&self, obs: &PixelObservation) -> Result<Point3, GeometryError> {
        let z = self.stereo_depth(obs.disparity_px)?;
        self.back_project(obs, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rig() -> StereoRig {
        StereoRig::default()
    }

    #[test]
    fn depth_from_disparity() {
        assert!((rig().stereo_depth(50.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((rig().stereo_depth(25.0).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(rig().stereo_depth(0.0), Err(GeometryError::DegenerateDisparity(0.0)));
        assert!(matches!(rig().stereo_depth(-3.0), Err(GeometryError::DegenerateDisparity(_))));
        assert!(matches!(rig().stereo_depth(f64::NAN), Err(GeometryError::InvalidInput(_))));
    }

    #[test]
    fn back_projection() {
        let r = rig();
        let on_axis = PixelObservation { u: 200.0, v: 200.0, disparity_px: 50.0 };
        assert_eq!(r.back_project(&on_axis, 1.0).unwrap(), Point3::new(0.0, 0.0, 1.0));

        let off = PixelObservation { u: 300.0, v: 200.0, disparity_px: 50.0 };
        assert!((r.back_project(&off, 1.0).unwrap().x - 0.2).abs() < 1e-15);

        assert_eq!(r.back_project(&on_axis, -1.0), Err(GeometryError::InvalidDepth(-1.0)));
    }

    #[test]
    fn projection() {
        let r = rig();
        let obs = r.project(&Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!((obs.u, obs.v), (200.0, 200.0));
        assert!((obs.disparity_px - 50.0).abs() < 1e-12);

        assert_eq!(r.project(&Point3::new(0.0, 0.0, -1.0)), Err(GeometryError::BehindCamera(-1.0)));
        assert!(matches!(
            r.project(&Point3::new(5.0, 0.0, 1.0)),
            Err(GeometryError::OutOfFrame { .. })
        ));

        let p = Point3::new(0.13, -0.07, 1.7);
        let back = r.triangulate(&r.project(&p).unwrap()).unwrap();
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn rig_validation() {
        assert!(rig().validate().is_ok());
        assert!(StereoRig { focal_px: 0.0, ..rig() }.validate().is_err());
        assert!(StereoRig { baseline_m: -0.1, ..rig() }.validate().is_err());
        assert!(StereoRig { image_w: 0, ..rig() }.validate().is_err());
        assert!(StereoRig { cx: 401.0, ..rig() }.validate().is_err());
    }
}
