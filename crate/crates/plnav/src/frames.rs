//! Coordinate frames and rotation machinery shared by the whole crate.
//!
//! Everything downstream works in the Earth-centered Earth-fixed (ECEF)
//! frame for absolute quantities and in a local East-North-Up (ENU) tangent
//! frame for horizontal/vertical splits. Rotations are stored as 3x3
//! matrices; the exp/log maps and the right Jacobian are implemented here so
//! the residual code in the graph module can stay close to the math.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion};

use crate::error::{Error, Result};

pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// WGS-84 semi-major axis, m.
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;
/// WGS-84 semi-minor axis, m.
pub const WGS84_B: f64 = WGS84_A * (1.0 - WGS84_F);
/// WGS-84 first eccentricity squared.
pub const WGS84_E2: f64 = WGS84_F * (2.0 - WGS84_F);
/// Normal gravity at the equator, m/s^2.
pub const GRAVITY_EQUATOR: f64 = 9.780_325_335_9;
/// Somigliana constant k = (b*g_pole - a*g_equator) / (a*g_equator).
pub const SOMIGLIANA_K: f64 = 1.931_852_652_41e-3;
/// WGS-84 gravity ratio m = omega^2 a^2 b / GM, used in the height correction.
pub const GRAVITY_M: f64 = 3.449_786_506_84e-3;

/// Angle below which exp/log switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Skew-symmetric (cross-product) matrix of `v`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// A rotation matrix in SO(3).
///
/// Invariants: columns orthonormal within 1e-9 and determinant +1 within
/// 1e-9. Constructors other than [`Rotation::from_matrix_unchecked`] maintain
/// these; after long products call [`Rotation::renormalized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Exponential map so(3) -> SO(3) via the Rodrigues formula.
    ///
    /// For angles below 1e-8 the sin/cos coefficients are replaced by their
    /// second-order Taylor expansions.
    pub fn exp(theta: &Vec3) -> Self {
        let angle_sq = theta.norm_squared();
        let s = skew(theta);
        if angle_sq < SMALL_ANGLE * SMALL_ANGLE {
            // sin(t)/t ~ 1 - t^2/6, (1-cos(t))/t^2 ~ 1/2 - t^2/24
            let a = 1.0 - angle_sq / 6.0;
            let b = 0.5 - angle_sq / 24.0;
            Rotation(Mat3::identity() + s * a + s * s * b)
        } else {
            let angle = angle_sq.sqrt();
            let a = angle.sin() / angle;
            let b = (1.0 - angle.cos()) / angle_sq;
            Rotation(Mat3::identity() + s * a + s * s * b)
        }
    }

    /// Logarithm map SO(3) -> so(3) on the principal branch (norm <= pi).
    ///
    /// Near the pi branch the axis is recovered from the diagonal of the
    /// symmetric part; its sign is fixed by taking the component of the
    /// largest-magnitude diagonal element non-negative (and aligned with the
    /// antisymmetric part whenever the latter is non-zero).
    pub fn log(&self) -> Vec3 {
        let m = &self.0;
        let omega = Vec3::new(
            m[(2, 1)] - m[(1, 2)],
            m[(0, 2)] - m[(2, 0)],
            m[(1, 0)] - m[(0, 1)],
        ) * 0.5;
        let cos_t = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
        let sin_t = omega.norm();
        let angle = sin_t.atan2(cos_t);

        if angle < SMALL_ANGLE {
            // theta/sin(theta) ~ 1 + t^2/6 + 7 t^4 / 360
            return omega * (1.0 + angle * angle / 6.0);
        }
        if std::f64::consts::PI - angle > 1e-6 {
            return omega * (angle / sin_t);
        }

        // pi branch: R ~ 2 n n^T - I, recover n from the largest diagonal.
        let diag = Vec3::new(m[(0, 0)], m[(1, 1)], m[(2, 2)]);
        let k = diag.imax();
        let nk = ((diag[k] + 1.0).max(0.0) * 0.5).sqrt().max(1e-12);
        let mut axis = Vec3::zeros();
        axis[k] = nk;
        axis[(k + 1) % 3] = (m[((k + 1) % 3, k)] + m[(k, (k + 1) % 3)]) / (4.0 * nk);
        axis[(k + 2) % 3] = (m[((k + 2) % 3, k)] + m[(k, (k + 2) % 3)]) / (4.0 * nk);
        let axis = axis.normalize();
        // Just below pi the antisymmetric part still carries the sign.
        let axis = if sin_t > 1e-12 && axis.dot(&omega) < 0.0 {
            -axis
        } else {
            axis
        };
        axis * angle
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Iterative re-orthonormalization (Newton step for the polar factor);
    /// converges quadratically from near-orthonormal inputs.
    pub fn renormalized(&self) -> Rotation {
        let mut m = self.0;
        for _ in 0..3 {
            m = m * 1.5 - m * (m.transpose() * m) * 0.5;
        }
        Rotation(m)
    }

    /// Max deviation of R^T R from identity plus determinant error.
    pub fn orthonormality_error(&self) -> f64 {
        let e = self.0.transpose() * self.0 - Mat3::identity();
        e.abs().max().max((self.0.determinant() - 1.0).abs())
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.iter().all(|x| x.is_finite()) && self.orthonormality_error() <= tol
    }

    pub fn to_quaternion(&self) -> (f64, f64, f64, f64) {
        let q = UnitQuaternion::from_matrix(&self.0);
        (q.w, q.i, q.j, q.k)
    }

    pub fn from_quaternion(w: f64, x: f64, y: f64, z: f64) -> Self {
        let q = UnitQuaternion::from_quaternion(Quaternion::new(w, x, y, z));
        Rotation(*q.to_rotation_matrix().matrix())
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

impl std::ops::Mul<Vec3> for Rotation {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

impl std::ops::Mul<&Vec3> for &Rotation {
    type Output = Vec3;
    fn mul(self, rhs: &Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Right Jacobian of SO(3): Exp(theta + d) ~ Exp(theta) Exp(Jr(theta) d).
pub fn right_jacobian(theta: &Vec3) -> Mat3 {
    let angle_sq = theta.norm_squared();
    let s = skew(theta);
    if angle_sq < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() - s * 0.5 + s * s * (1.0 / 6.0);
    }
    let angle = angle_sq.sqrt();
    let a = (1.0 - angle.cos()) / angle_sq;
    let b = (angle - angle.sin()) / (angle_sq * angle);
    Mat3::identity() - s * a + s * s * b
}

/// Inverse of the right Jacobian.
pub fn right_jacobian_inv(theta: &Vec3) -> Mat3 {
    let angle_sq = theta.norm_squared();
    let s = skew(theta);
    if angle_sq < SMALL_ANGLE * SMALL_ANGLE {
        return Mat3::identity() + s * 0.5 + s * s * (1.0 / 12.0);
    }
    let angle = angle_sq.sqrt();
    let b = 1.0 / angle_sq - (1.0 + angle.cos()) / (2.0 * angle * angle.sin());
    Mat3::identity() + s * 0.5 + s * s * b
}

/// Geodetic coordinate on the WGS-84 ellipsoid (radians, meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeodeticCoord {
    pub latitude: f64,
    pub longitude: f64,
    pub height: f64,
}

impl GeodeticCoord {
    pub fn new(latitude: f64, longitude: f64, height: f64) -> Result<Self> {
        if !latitude.is_finite() || latitude.abs() > std::f64::consts::FRAC_PI_2 {
            return Err(Error::InvalidGeodetic(format!(
                "latitude {latitude} outside [-pi/2, pi/2]"
            )));
        }
        if !longitude.is_finite()
            || longitude <= -std::f64::consts::PI
            || longitude > std::f64::consts::PI
        {
            return Err(Error::InvalidGeodetic(format!(
                "longitude {longitude} outside (-pi, pi]"
            )));
        }
        if !height.is_finite() {
            return Err(Error::InvalidGeodetic("non-finite height".into()));
        }
        Ok(GeodeticCoord {
            latitude,
            longitude,
            height,
        })
    }
}

/// Closed-form geodetic -> ECEF conversion.
pub fn geodetic_to_ecef(g: &GeodeticCoord) -> Vec3 {
    let (sin_lat, cos_lat) = g.latitude.sin_cos();
    let (sin_lon, cos_lon) = g.longitude.sin_cos();
    let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
    Vec3::new(
        (n + g.height) * cos_lat * cos_lon,
        (n + g.height) * cos_lat * sin_lon,
        (n * (1.0 - WGS84_E2) + g.height) * sin_lat,
    )
}

/// Iterative ECEF -> geodetic conversion, converged below 1e-6 m in height.
pub fn ecef_to_geodetic(p: &Vec3) -> Result<GeodeticCoord> {
    let norm = p.norm();
    if norm <= 1e5 {
        return Err(Error::DegenerateEcef { norm });
    }
    let lon = p.y.atan2(p.x);
    let rho = (p.x * p.x + p.y * p.y).sqrt();
    let mut lat = p.z.atan2(rho * (1.0 - WGS84_E2));
    let mut height = 0.0;
    for _ in 0..20 {
        let sin_lat = lat.sin();
        let n = WGS84_A / (1.0 - WGS84_E2 * sin_lat * sin_lat).sqrt();
        let prev = height;
        if lat.cos().abs() > 1e-8 {
            height = rho / lat.cos() - n;
        } else {
            height = p.z / sin_lat - n * (1.0 - WGS84_E2);
        }
        lat = p.z.atan2(rho * (1.0 - WGS84_E2 * n / (n + height)));
        if (height - prev).abs() < 1e-9 {
            break;
        }
    }
    GeodeticCoord::new(lat, lon, height)
}

/// Rotation mapping ECEF deltas into local East-North-Up components at `origin`.
pub fn enu_rotation(origin: &GeodeticCoord) -> Rotation {
    let (sin_lat, cos_lat) = origin.latitude.sin_cos();
    let (sin_lon, cos_lon) = origin.longitude.sin_cos();
    Rotation(Mat3::new(
        -sin_lon,
        cos_lon,
        0.0,
        -sin_lat * cos_lon,
        -sin_lat * sin_lon,
        cos_lat,
        cos_lat * cos_lon,
        cos_lat * sin_lon,
        sin_lat,
    ))
}

/// Somigliana normal gravity with a linear free-air height correction,
/// expressed in ECEF and directed along the ellipsoidal down axis.
pub fn gravity_ecef(p: &Vec3) -> Result<Vec3> {
    let radius = p.norm();
    if !(6.2e6..=7.0e6).contains(&radius) {
        return Err(Error::GravityEnvelope { radius });
    }
    let geo = ecef_to_geodetic(p)?;
    let sin2 = geo.latitude.sin().powi(2);
    let g0 = GRAVITY_EQUATOR * (1.0 + SOMIGLIANA_K * sin2) / (1.0 - WGS84_E2 * sin2).sqrt();
    let g = g0
        * (1.0
            - 2.0 * geo.height / WGS84_A * (1.0 + WGS84_F + GRAVITY_M - 2.0 * WGS84_F * sin2));
    let up = enu_rotation(&geo).matrix().row(2).transpose();
    Ok(-up * g)
}

/// Antenna point from body position and a fixed body-frame lever arm.
pub fn apply_lever_arm(rotation: &Rotation, p_body: &Vec3, lever: &Vec3) -> Vec3 {
    p_body + rotation * lever
}
