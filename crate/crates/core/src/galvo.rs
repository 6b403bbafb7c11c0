//! Two-mirror galvanometer scanner.
//!
//! The scanner is described in its own frame: the laser source fires along
//! `+x` into mirror 1 at the origin, which turns the beam to `+y` onto mirror 2,
//! which sends it out along `+z` (the boresight, parallel to the camera axis).
//! Mirror 1 rotates about `z` and sweeps the beam in `x`; mirror 2 rotates about
//! `x` and sweeps it in `y`.
//!
//! Commands are rate limited to the scanner's point rate and pass through a
//! unipolar DAC followed by a ±5 V bipolar stage, so every applied angle is a
//! quantized code.

use nalgebra::{Matrix2, Rotation3, Unit, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Point3, Vec3};
use crate::time::SimTime;

const PARALLEL_EPS: f64 = 1e-12;
const UNIT_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GalvoError {
    #[error("beam is parallel to the mirror plane")]
    BeamParallelToMirror,
    #[error("mirror plane lies behind the beam origin")]
    NoForwardIntersection,
    #[error("beam hits mirror {mirror} {distance_m:.4} m from its pivot, outside the aperture")]
    MissedMirror { mirror: usize, distance_m: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(&'static str),
    #[error("target outside the scanner workspace: {0}")]
    OutOfWorkspace(String),
    #[error("aim solver did not converge after {iterations} iterations (residual {residual_m:.3e} m)")]
    NoConvergence { iterations: usize, residual_m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Point3,
    pub dir: Vec3,
}

impl Ray {
    /// Builds a ray, normalizing `dir`.
    pub fn new(origin: Point3, dir: Vec3) -> Result<Self, GalvoError> {
        let n = dir.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GalvoError::InvalidInput("ray direction must be nonzero"));
        }
        Ok(Self { origin, dir: dir / n })
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.origin + self.dir * t
    }

    /// Perpendicular distance from `p` to the forward half-line.
    pub fn miss_distance(&self, p: &Point3) -> f64 {
        let v = p - self.origin;
        let t = v.dot(&self.dir);
        if t <= 0.0 {
            v.norm()
        } else {
            (v - self.dir * t).norm()
        }
    }

    /// Intersection with the plane `z = z0`, if the ray reaches it going forward.
    pub fn hit_z_plane(&self, z0: f64) -> Option<Point3> {
        if self.dir.z.abs() <= PARALLEL_EPS {
            return None;
        }
        let t = (z0 - self.origin.z) / self.dir.z;
        (t >= 0.0).then(|| self.at(t))
    }
}

/// A flat mirror pivoting about an axis through `pivot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MirrorPlane {
    pub pivot: Point3,
    pub rotation_axis: Unit<Vec3>,
    pub rest_normal: Unit<Vec3>,
    pub angle: f64,
    /// Mechanical limit; the mirror moves within `[-theta_max, theta_max]`.
    pub theta_max: f64,
    pub radius_m: f64,
}

impl MirrorPlane {
    pub fn new(pivot: Point3, rotation_axis: Vec3, rest_normal: Vec3, theta_max: f64, radius_m: f64) -> Result<Self, GalvoError> {
        let rotation_axis = Unit::new_normalize(rotation_axis);
        let rest_normal = Unit::new_normalize(rest_normal);
        if rotation_axis.dot(&rest_normal).abs() > UNIT_EPS {
            return Err(GalvoError::InvalidInput("rotation axis must be perpendicular to the rest normal"));
        }
        Ok(Self { pivot, rotation_axis, rest_normal, angle: 0.0, theta_max, radius_m })
    }

    pub fn with_angle(mut self, angle: f64) -> Self {
        self.angle = angle;
        self
    }

    /// Current normal: the rest normal rotated by `angle` about the axis.
    pub fn normal(&self) -> Vec3 {
        Rotation3::from_axis_angle(&self.rotation_axis, self.angle) * self.rest_normal.into_inner()
    }
}

/// Point where `ray` meets the mirror plane through `mirror.pivot`.
pub fn plane_intersect(ray: &Ray, mirror: &MirrorPlane) -> Result<Point3, GalvoError> {
    let n = mirror.normal();
    let denom = n.dot(&ray.dir);
    if denom.abs() <= PARALLEL_EPS {
        return Err(GalvoError::BeamParallelToMirror);
    }
    let t = n.dot(&(mirror.pivot - ray.origin)) / denom;
    if t < 0.0 {
        return Err(GalvoError::NoForwardIntersection);
    }
    Ok(ray.at(t))
}

/// Specular reflection `d - 2(d·n)n` of a unit direction about a unit normal.
pub fn reflect(dir: &Vec3, normal: &Vec3) -> Result<Vec3, GalvoError> {
    if (dir.norm() - 1.0).abs() > UNIT_EPS || (normal.norm() - 1.0).abs() > UNIT_EPS {
        return Err(GalvoError::InvalidInput("reflect expects unit vectors"));
    }
    Ok(dir - normal * (2.0 * dir.dot(normal)))
}

/// Scanner layout, limits and signal chain, as read from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GalvoConfig {
    /// Scanner frame origin (mirror 1 pivot) relative to the left camera, meters.
    pub offset_m: [f64; 3],
    /// Distance from the laser aperture to mirror 1.
    pub source_distance_m: f64,
    /// Distance from mirror 1 to mirror 2 along the rest beam path.
    pub mirror_separation_m: f64,
    pub mirror_radius_m: f64,
    pub theta_max_rad: f64,
    pub dac_bits: u32,
    pub min_command_period_s: f64,
    pub calibration_offset_rad: [f64; 2],
    pub aim_tolerance_m: f64,
    pub max_iterations: usize,
}

impl Default for GalvoConfig {
    fn default() -> Self {
        Self {
            offset_m: [0.0, 0.05, 0.0],
            source_distance_m: 0.03,
            mirror_separation_m: 0.02,
            mirror_radius_m: 0.01,
            theta_max_rad: 0.35,
            dac_bits: 12,
            min_command_period_s: 1.0 / 20_000.0,
            calibration_offset_rad: [0.0, 0.0],
            aim_tolerance_m: 1e-4,
            max_iterations: 50,
        }
    }
}

impl GalvoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.offset_m.iter().any(|v| !v.is_finite()) {
            return Err("galvo.offset_m must be finite".into());
        }
        for (name, v) in [
            ("galvo.source_distance_m", self.source_distance_m),
            ("galvo.mirror_separation_m", self.mirror_separation_m),
            ("galvo.mirror_radius_m", self.mirror_radius_m),
            ("galvo.theta_max_rad", self.theta_max_rad),
            ("galvo.min_command_period_s", self.min_command_period_s),
            ("galvo.aim_tolerance_m", self.aim_tolerance_m),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be > 0"));
            }
        }
        if self.theta_max_rad >= std::f64::consts::FRAC_PI_4 {
            return Err("galvo.theta_max_rad must be < pi/4".into());
        }
        if !(8..=16).contains(&self.dac_bits) {
            return Err("galvo.dac_bits must be in [8, 16]".into());
        }
        if SimTime::from_secs_f64(self.min_command_period_s) == SimTime::ZERO {
            return Err("galvo.min_command_period_s must be at least 1 ns".into());
        }
        if self.max_iterations == 0 {
            return Err("galvo.max_iterations must be >= 1".into());
        }
        if self.calibration_offset_rad.iter().any(|v| !v.is_finite()) {
            return Err("galvo.calibration_offset_rad must be finite".into());
        }
        Ok(())
    }
}

/// Static scanner geometry in the scanner frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GalvoGeometry {
    pub source: Ray,
    pub mirrors: [MirrorPlane; 2],
    pub calibration_offset: [f64; 2],
    pub aim_tolerance_m: f64,
    pub max_iterations: usize,
    /// Scanner frame origin relative to the camera frame.
    pub mount_offset: Vec3,
    /// Linearized optical-to-mechanical map around zero, used for slew estimates.
    approx_inverse: Matrix2<f64>,
}

impl GalvoGeometry {
    pub fn from_config(cfg: &GalvoConfig) -> Result<Self, GalvoError> {
        cfg.validate().map_err(|_| GalvoError::InvalidInput("invalid galvo configuration"))?;
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let source = Ray::new(Point3::new(-cfg.source_distance_m, 0.0, 0.0), Vec3::x())?;
        let m1 = MirrorPlane::new(Point3::origin(), Vec3::z(), Vec3::new(-s, s, 0.0), cfg.theta_max_rad, cfg.mirror_radius_m)?;
        let m2 = MirrorPlane::new(
            Point3::new(0.0, cfg.mirror_separation_m, 0.0),
            Vec3::x(),
            Vec3::new(0.0, -s, s),
            cfg.theta_max_rad,
            cfg.mirror_radius_m,
        )?;
        let mut geo = Self {
            source,
            mirrors: [m1, m2],
            calibration_offset: cfg.calibration_offset_rad,
            aim_tolerance_m: cfg.aim_tolerance_m,
            max_iterations: cfg.max_iterations,
            mount_offset: Vec3::from(cfg.offset_m),
            approx_inverse: Matrix2::identity(),
        };
        geo.approx_inverse = geo.optical_jacobian_at_zero()?.try_inverse().ok_or(GalvoError::InvalidInput("degenerate mirror layout"))?;
        Ok(geo)
    }

    pub fn theta_max(&self) -> f64 {
        self.mirrors[0].theta_max
    }

    /// The outgoing ray with both commanded angles at zero.
    pub fn boresight(&self) -> Result<Ray, GalvoError> {
        self.trace_beam([0.0, 0.0])
    }

    /// Traces the source beam through both mirrors at the given commanded angles.
    pub fn trace_beam(&self, angles: [f64; 2]) -> Result<Ray, GalvoError> {
        self.trace(angles, true)
    }

    fn trace(&self, angles: [f64; 2], check_aperture: bool) -> Result<Ray, GalvoError> {
        let mut ray = self.source;
        for (i, mirror) in self.mirrors.iter().enumerate() {
            let m = mirror.with_angle(angles[i] + self.calibration_offset[i]);
            let hit = plane_intersect(&ray, &m)?;
            if check_aperture {
                let r = (hit - m.pivot).norm();
                if r > m.radius_m {
                    return Err(GalvoError::MissedMirror { mirror: i + 1, distance_m: r });
                }
            }
            ray = Ray { origin: hit, dir: reflect(&ray.dir, &m.normal())? };
        }
        Ok(ray)
    }

    fn optical_jacobian_at_zero(&self) -> Result<Matrix2<f64>, GalvoError> {
        let h = 1e-6;
        let optical = |a: [f64; 2]| -> Result<Vector2<f64>, GalvoError> {
            let d = self.trace(a, false)?.dir;
            Ok(Vector2::new(d.x.atan2(d.z), d.y.atan2(d.z)))
        };
        let mut j = Matrix2::zeros();
        for k in 0..2 {
            let mut plus = [0.0; 2];
            let mut minus = [0.0; 2];
            plus[k] = h;
            minus[k] = -h;
            let col = (optical(plus)? - optical(minus)?) / (2.0 * h);
            j.set_column(k, &col);
        }
        Ok(j)
    }

    /// Cheap small-angle estimate of the angles pointing at `target` (scanner frame).
    pub fn approx_angles(&self, target: &Point3) -> [f64; 2] {
        let origin = self.mirrors[1].pivot;
        let v = target - origin;
        let optical = Vector2::new(v.x.atan2(v.z), v.y.atan2(v.z));
        let m = self.approx_inverse * optical;
        [m.x, m.y]
    }

    /// Miss vector in the plane `z = target.z`, ignoring mirror apertures.
    fn miss_vector(&self, angles: [f64; 2], target: &Point3) -> Option<Vector2<f64>> {
        let ray = self.trace(angles, false).ok()?;
        if ray.dir.z <= 1e-9 {
            return None;
        }
        let hit = ray.hit_z_plane(target.z)?;
        Some(Vector2::new(hit.x - target.x, hit.y - target.y))
    }

    /// Mirror angles whose outgoing beam passes through `target` (scanner frame).
    ///
    /// Damped Newton iteration on the 2D miss vector, with a central-difference
    /// Jacobian, starting from `initial` (normally the current mirror angles).
    pub fn solve_angles(&self, target: &Point3, initial: [f64; 2]) -> Result<[f64; 2], GalvoError> {
        if !(target.x.is_finite() && target.y.is_finite() && target.z.is_finite()) {
            return Err(GalvoError::InvalidInput("target must be finite"));
        }
        let exit = self.mirrors[1].pivot;
        if target.z <= exit.z + 1e-6 {
            return Err(GalvoError::OutOfWorkspace("target is behind the scanner".into()));
        }
        let scale = (target - exit).norm().max(1.0);
        let mut angles = initial;
        let mut r = self
            .miss_vector(angles, target)
            .ok_or_else(|| GalvoError::OutOfWorkspace("initial angles do not reach the target plane".into()))?;
        let h = 1e-7;
        let mut iterations = 0;
        while iterations < self.max_iterations && r.norm() > 1e-13 * scale {
            iterations += 1;
            let mut j = Matrix2::zeros();
            for k in 0..2 {
                let mut plus = angles;
                let mut minus = angles;
                plus[k] += h;
                minus[k] -= h;
                let (Some(rp), Some(rm)) = (self.miss_vector(plus, target), self.miss_vector(minus, target)) else {
                    return Err(GalvoError::OutOfWorkspace("beam leaves the forward hemisphere".into()));
                };
                j.set_column(k, &((rp - rm) / (2.0 * h)));
            }
            let Some(step) = j.lu().solve(&(-r)) else {
                return Err(GalvoError::NoConvergence { iterations, residual_m: r.norm() });
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial = [angles[0] + alpha * step.x, angles[1] + alpha * step.y];
                if let Some(rt) = self.miss_vector(trial, target) {
                    if rt.norm() < r.norm() {
                        angles = trial;
                        r = rt;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            if !accepted {
                break;
            }
        }

        let limit = self.theta_max();
        if angles.iter().any(|a| a.abs() > limit) {
            return Err(GalvoError::OutOfWorkspace(format!(
                "solution ({:.4}, {:.4}) rad exceeds the ±{limit} rad mechanical range",
                angles[0], angles[1]
            )));
        }
        let ray = match self.trace_beam(angles) {
            Ok(ray) => ray,
            Err(GalvoError::MissedMirror { mirror, distance_m }) => {
                return Err(GalvoError::OutOfWorkspace(format!(
                    "beam would miss mirror {mirror} ({distance_m:.4} m off center)"
                )))
            }
            Err(e) => return Err(e),
        };
        let miss = ray.miss_distance(target);
        if miss > self.aim_tolerance_m {
            return Err(GalvoError::NoConvergence { iterations, residual_m: miss });
        }
        Ok(angles)
    }
}

/// One DAC conversion of a commanded angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DacSample {
    pub code: u32,
    pub volts: f64,
    pub clamped: bool,
}

fn full_scale(bits: u32) -> f64 {
    f64::from((1u32 << bits) - 1)
}

/// Maps an angle in `[-theta_max, theta_max]` to a DAC code and the ±5 V drive level.
pub fn dac_encode(angle: f64, theta_max: f64, bits: u32) -> DacSample {
    debug_assert!((8..=16).contains(&bits));
    let clamped = !(-theta_max..=theta_max).contains(&angle);
    let a = angle.clamp(-theta_max, theta_max);
    let frac = (a + theta_max) / (2.0 * theta_max);
    let code = (frac * full_scale(bits)).round() as u32;
    DacSample { code, volts: dac_volts(code, bits), clamped }
}

/// Bipolar output voltage for a code: the 0–5 V DAC level mapped to ±5 V.
pub fn dac_volts(code: u32, bits: u32) -> f64 {
    f64::from(code) / full_scale(bits) * 10.0 - 5.0
}

pub fn dac_decode(code: u32, theta_max: f64, bits: u32) -> f64 {
    -theta_max + f64::from(code) / full_scale(bits) * 2.0 * theta_max
}

/// An applied mirror command, as recorded in the event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalvoCommand {
    pub t_request: SimTime,
    pub t_effective: SimTime,
    pub theta: [f64; 2],
    pub code: [u32; 2],
    pub clamped: bool,
}

/// Mutable scanner state owned by one engagement loop.
#[derive(Debug, Clone, PartialEq)]
pub struct GalvoState {
    pub angles: [f64; 2],
    pub last_command_time: Option<SimTime>,
    pub min_command_period: SimTime,
    pub dac_bits: u32,
    pub theta_max: f64,
}

impl GalvoState {
    pub fn new(cfg: &GalvoConfig) -> Self {
        Self {
            angles: [0.0, 0.0],
            last_command_time: None,
            min_command_period: SimTime::from_secs_f64(cfg.min_command_period_s),
            dac_bits: cfg.dac_bits,
            theta_max: cfg.theta_max_rad,
        }
    }

    /// Earliest time a command issued at `t_request` can take effect.
    pub fn effective_time(&self, t_request: SimTime) -> SimTime {
        match self.last_command_time {
            Some(last) => t_request.max(last + self.min_command_period),
            None => t_request,
        }
    }

    /// Applies a command: delayed to honor the point rate, clamped to range and
    /// quantized through the DAC.
    pub fn command_mirrors(&mut self, target: [f64; 2], t_request: SimTime) -> GalvoCommand {
        let t_effective = self.effective_time(t_request);
        let s0 = dac_encode(target[0], self.theta_max, self.dac_bits);
        let s1 = dac_encode(target[1], self.theta_max, self.dac_bits);
        let theta = [
            dac_decode(s0.code, self.theta_max, self.dac_bits),
            dac_decode(s1.code, self.theta_max, self.dac_bits),
        ];
        self.angles = theta;
        self.last_command_time = Some(t_effective);
        GalvoCommand {
            t_request,
            t_effective,
            theta,
            code: [s0.code, s1.code],
            clamped: s0.clamped || s1.clamped,
        }
    }

    /// Angular size of one DAC step.
    pub fn quantum(&self) -> f64 {
        2.0 * self.theta_max / full_scale(self.dac_bits)
    }
}
