//! On-manifold IMU preintegration between consecutive GNSS/PL epochs.
//!
//! High-rate gyro/accelerometer samples are folded into relative motion
//! deltas (rotation, velocity, position) that are independent of the
//! absolute start state, together with a propagated 9x9 noise covariance
//! (ordered rotation, velocity, position) and first-order bias Jacobians.
//! Zero-order hold: each sample's rates are held constant over its
//! integration interval (left Riemann), and the position update uses the
//! pre-update velocity and rotation.
//!
//! Earth-rotation (Coriolis) terms are omitted from the mechanization; over
//! windows of tens of seconds with 1 Hz position fixes the induced error is
//! far below the meter-level regime this crate targets.

use nalgebra::SMatrix;

use crate::error::{Error, Result};
use crate::frames::{right_jacobian, right_jacobian_inv, skew, Mat3, Rotation, Vec3};
use crate::graph::NavState;

pub type Cov9 = SMatrix<f64, 9, 9>;
pub type Jac9x15 = SMatrix<f64, 9, 15>;

/// One IMU sample: body-frame angular rate and specific force.
#[derive(Debug, Clone, Copy)]
pub struct ImuSample {
    pub t: f64,
    pub gyro: Vec3,
    pub accel: Vec3,
}

/// Continuous-time IMU noise densities plus the nominal sample rate.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImuNoiseParams {
    /// rad/s/sqrt(Hz)
    pub gyro_noise_density: f64,
    /// m/s^2/sqrt(Hz)
    pub accel_noise_density: f64,
    /// rad/s^2/sqrt(Hz) (gyro bias random walk)
    pub gyro_bias_walk: f64,
    /// m/s^3/sqrt(Hz) (accel bias random walk)
    pub accel_bias_walk: f64,
    /// Hz
    pub sample_rate: f64,
}

impl ImuNoiseParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gyro_noise_density", self.gyro_noise_density),
            ("accel_noise_density", self.accel_noise_density),
            ("gyro_bias_walk", self.gyro_bias_walk),
            ("accel_bias_walk", self.accel_bias_walk),
            ("sample_rate", self.sample_rate),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig {
                    field: format!("noise.{name}"),
                    constraint: "must be finite and > 0".into(),
                });
            }
        }
        Ok(())
    }
}

/// Accelerometer and gyroscope biases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuBias {
    pub accel: Vec3,
    pub gyro: Vec3,
}

impl ImuBias {
    pub fn zero() -> Self {
        ImuBias {
            accel: Vec3::zeros(),
            gyro: Vec3::zeros(),
        }
    }
}

/// Bias delta beyond which first-order correction is flagged as extrapolating.
const GYRO_CORRECTION_WARN: f64 = 0.05;
const ACCEL_CORRECTION_WARN: f64 = 0.5;

/// Accumulated preintegrated motion between two epochs.
#[derive(Debug, Clone)]
pub struct PreintegratedImu {
    pub delta_rotation: Rotation,
    pub delta_velocity: Vec3,
    pub delta_position: Vec3,
    /// 9x9, ordered (rotation, velocity, position).
    pub covariance: Cov9,
    pub j_rot_gyro_bias: Mat3,
    pub j_vel_accel_bias: Mat3,
    pub j_vel_gyro_bias: Mat3,
    pub j_pos_accel_bias: Mat3,
    pub j_pos_gyro_bias: Mat3,
    pub dt_total: f64,
    /// Bias linearization point, fixed for the accumulator lifetime.
    pub bias_lin: ImuBias,
    steps: usize,
}

/// Deltas corrected to a bias estimate via the first-order Jacobians.
#[derive(Debug, Clone, Copy)]
pub struct CorrectedDeltas {
    pub rotation: Rotation,
    pub velocity: Vec3,
    pub position: Vec3,
    /// Set when the bias delta exceeds the first-order trust region.
    pub extrapolated: bool,
}

impl PreintegratedImu {
    pub fn new(bias_lin: ImuBias) -> Self {
        PreintegratedImu {
            delta_rotation: Rotation::identity(),
            delta_velocity: Vec3::zeros(),
            delta_position: Vec3::zeros(),
            covariance: Cov9::zeros(),
            j_rot_gyro_bias: Mat3::zeros(),
            j_vel_accel_bias: Mat3::zeros(),
            j_vel_gyro_bias: Mat3::zeros(),
            j_pos_accel_bias: Mat3::zeros(),
            j_pos_gyro_bias: Mat3::zeros(),
            dt_total: 0.0,
            bias_lin,
            steps: 0,
        }
    }

    /// Fold one sample held over `dt` into the accumulator.
    pub fn integrate(&mut self, sample: &ImuSample, dt: f64, noise: &ImuNoiseParams) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::NonPositiveDt(dt));
        }
        let gyro = sample.gyro - self.bias_lin.gyro;
        let accel = sample.accel - self.bias_lin.accel;
        let rot = self.delta_rotation; // pre-update
        let step_rot = Rotation::exp(&(gyro * dt));
        let jr = right_jacobian(&(gyro * dt));
        let accel_skew = skew(&accel);

        // Discrete linearized error propagation in (rotation, velocity,
        // position) order; per-sample noise is density^2 / dt.
        let mut a = Cov9::identity();
        a.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&step_rot.matrix().transpose());
        a.fixed_view_mut::<3, 3>(3, 0)
            .copy_from(&(-rot.matrix() * accel_skew * dt));
        a.fixed_view_mut::<3, 3>(6, 0)
            .copy_from(&(-rot.matrix() * accel_skew * (0.5 * dt * dt)));
        a.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(Mat3::identity() * dt));

        let mut b = SMatrix::<f64, 9, 6>::zeros();
        b.fixed_view_mut::<3, 3>(0, 0).copy_from(&(jr * dt));
        b.fixed_view_mut::<3, 3>(3, 3).copy_from(&(rot.matrix() * dt));
        b.fixed_view_mut::<3, 3>(6, 3)
            .copy_from(&(rot.matrix() * (0.5 * dt * dt)));

        let qg = noise.gyro_noise_density.powi(2) / dt;
        let qa = noise.accel_noise_density.powi(2) / dt;
        let mut q = SMatrix::<f64, 6, 6>::zeros();
        q.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(Mat3::identity() * qg));
        q.fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Mat3::identity() * qa));

        self.covariance = a * self.covariance * a.transpose() + b * q * b.transpose();
        self.covariance = (self.covariance + self.covariance.transpose()) * 0.5;

        // Bias Jacobians: position first (uses pre-update velocity terms),
        // then velocity, then rotation.
        self.j_pos_accel_bias += self.j_vel_accel_bias * dt - rot.matrix() * (0.5 * dt * dt);
        self.j_pos_gyro_bias +=
            self.j_vel_gyro_bias * dt - rot.matrix() * accel_skew * self.j_rot_gyro_bias * (0.5 * dt * dt);
        self.j_vel_accel_bias -= rot.matrix() * dt;
        self.j_vel_gyro_bias -= rot.matrix() * accel_skew * self.j_rot_gyro_bias * dt;
        self.j_rot_gyro_bias = step_rot.matrix().transpose() * self.j_rot_gyro_bias - jr * dt;

        // Deltas: position with pre-update velocity/rotation, then velocity,
        // then rotation.
        self.delta_position += self.delta_velocity * dt + rot * (accel * (0.5 * dt * dt));
        self.delta_velocity += rot * (accel * dt);
        self.delta_rotation = rot * step_rot;
        self.dt_total += dt;
        self.steps += 1;
        if self.steps % 512 == 0 {
            self.delta_rotation = self.delta_rotation.renormalized();
        }
        Ok(())
    }

    /// Integrate a slice of samples with the fixed interval `dt` each.
    pub fn integrate_all(
        &mut self,
        samples: &[ImuSample],
        dt: f64,
        noise: &ImuNoiseParams,
    ) -> Result<()> {
        for s in samples {
            self.integrate(s, dt, noise)?;
        }
        Ok(())
    }

    /// First-order bias-corrected deltas at `bias`.
    pub fn bias_corrected(&self, bias: &ImuBias) -> CorrectedDeltas {
        let dbg = bias.gyro - self.bias_lin.gyro;
        let dba = bias.accel - self.bias_lin.accel;
        let extrapolated = dbg.norm() > GYRO_CORRECTION_WARN || dba.norm() > ACCEL_CORRECTION_WARN;
        CorrectedDeltas {
            rotation: self.delta_rotation * Rotation::exp(&(self.j_rot_gyro_bias * dbg)),
            velocity: self.delta_velocity + self.j_vel_accel_bias * dba + self.j_vel_gyro_bias * dbg,
            position: self.delta_position + self.j_pos_accel_bias * dba + self.j_pos_gyro_bias * dbg,
            extrapolated,
        }
    }
}

/// Residual of the preintegrated IMU factor, stacked (rotation, velocity,
/// position) to match the covariance ordering.
#[derive(Debug, Clone, Copy)]
pub struct ImuResidual {
    pub rotation: Vec3,
    pub velocity: Vec3,
    pub position: Vec3,
}

impl ImuResidual {
    pub fn as_vector(&self) -> nalgebra::SVector<f64, 9> {
        let mut v = nalgebra::SVector::<f64, 9>::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.rotation);
        v.fixed_rows_mut::<3>(3).copy_from(&self.velocity);
        v.fixed_rows_mut::<3>(6).copy_from(&self.position);
        v
    }
}

/// Forward prediction of the next state from raw (uncorrected) deltas.
pub fn predict_state(state_i: &NavState, pre: &PreintegratedImu, gravity: &Vec3) -> NavState {
    let dt = pre.dt_total;
    NavState {
        rotation: state_i.rotation * pre.delta_rotation,
        velocity: state_i.velocity + gravity * dt + state_i.rotation * pre.delta_velocity,
        position: state_i.position
            + state_i.velocity * dt
            + gravity * (0.5 * dt * dt)
            + state_i.rotation * pre.delta_position,
        bias: state_i.bias,
        epoch: state_i.epoch + dt,
    }
}

/// Preintegrated IMU residual between two states; corrected deltas use
/// `state_i`'s biases.
pub fn imu_residual(
    state_i: &NavState,
    state_j: &NavState,
    pre: &PreintegratedImu,
    gravity: &Vec3,
) -> ImuResidual {
    let dt = pre.dt_total;
    let corrected = pre.bias_corrected(&state_i.bias);
    let rot_i_t = state_i.rotation.transpose();
    ImuResidual {
        rotation: (corrected.rotation.transpose() * rot_i_t * state_j.rotation).log(),
        velocity: rot_i_t * (state_j.velocity - state_i.velocity - gravity * dt)
            - corrected.velocity,
        position: rot_i_t
            * (state_j.position - state_i.position - state_i.velocity * dt
                - gravity * (0.5 * dt * dt))
            - corrected.position,
    }
}

/// Analytic Jacobians of [`imu_residual`] with respect to the 15-dim tangent
/// of each state, columns ordered (dtheta, dp, dv, dba, dbg). The rotation
/// convention is the right perturbation R * Exp(dtheta).
pub struct ImuJacobians {
    pub wrt_i: Jac9x15,
    pub wrt_j: Jac9x15,
}

pub fn residual_jacobians(
    state_i: &NavState,
    state_j: &NavState,
    pre: &PreintegratedImu,
    gravity: &Vec3,
) -> ImuJacobians {
    let dt = pre.dt_total;
    let corrected = pre.bias_corrected(&state_i.bias);
    let rot_i = state_i.rotation.matrix();
    let rot_i_t = rot_i.transpose();
    let rot_j_t = state_j.rotation.matrix().transpose();
    let r_phi = (corrected.rotation.transpose() * state_i.rotation.transpose() * state_j.rotation)
        .log();
    let jr_inv = right_jacobian_inv(&r_phi);
    let dbg = state_i.bias.gyro - pre.bias_lin.gyro;
    let correction = pre.j_rot_gyro_bias * dbg;

    let e_v = state_j.velocity - state_i.velocity - gravity * dt;
    let e_p = state_j.position - state_i.position - state_i.velocity * dt
        - gravity * (0.5 * dt * dt);

    let mut wrt_i = Jac9x15::zeros();
    let mut wrt_j = Jac9x15::zeros();

    // Rotation rows.
    wrt_i
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jr_inv * rot_j_t * rot_i));
    wrt_i.fixed_view_mut::<3, 3>(0, 12).copy_from(
        &(-jr_inv
            * Rotation::exp(&r_phi).matrix().transpose()
            * right_jacobian(&correction)
            * pre.j_rot_gyro_bias),
    );
    wrt_j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jr_inv);

    // Velocity rows.
    wrt_i
        .fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&skew(&(rot_i_t * e_v)));
    wrt_i
        .fixed_view_mut::<3, 3>(3, 6)
        .copy_from(&(-rot_i_t));
    wrt_i
        .fixed_view_mut::<3, 3>(3, 9)
        .copy_from(&(-pre.j_vel_accel_bias));
    wrt_i
        .fixed_view_mut::<3, 3>(3, 12)
        .copy_from(&(-pre.j_vel_gyro_bias));
    wrt_j.fixed_view_mut::<3, 3>(3, 6).copy_from(&rot_i_t);

    // Position rows.
    wrt_i
        .fixed_view_mut::<3, 3>(6, 0)
        .copy_from(&skew(&(rot_i_t * e_p)));
    wrt_i
        .fixed_view_mut::<3, 3>(6, 3)
        .copy_from(&(-rot_i_t));
    wrt_i
        .fixed_view_mut::<3, 3>(6, 6)
        .copy_from(&(-rot_i_t * dt));
    wrt_i
        .fixed_view_mut::<3, 3>(6, 9)
        .copy_from(&(-pre.j_pos_accel_bias));
    wrt_i
        .fixed_view_mut::<3, 3>(6, 12)
        .copy_from(&(-pre.j_pos_gyro_bias));
    wrt_j.fixed_view_mut::<3, 3>(6, 3).copy_from(&rot_i_t);

    ImuJacobians { wrt_i, wrt_j }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NavState, StateDelta};
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    pub fn nominal_noise() -> ImuNoiseParams {
        ImuNoiseParams {
            gyro_noise_density: 2e-4,
            accel_noise_density: 2e-3,
            gyro_bias_walk: 1e-5,
            accel_bias_walk: 1e-4,
            sample_rate: 100.0,
        }
    }

    fn constant_stream(gyro: Vec3, accel: Vec3, n: usize, dt: f64) -> Vec<ImuSample> {
        (0..n)
            .map(|k| ImuSample {
                t: (k + 1) as f64 * dt,
                gyro,
                accel,
            })
            .collect()
    }

    fn random_state(rng: &mut StdRng) -> NavState {
        NavState {
            rotation: Rotation::exp(&Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )),
            position: Vec3::new(
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            ),
            velocity: Vec3::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ),
            bias: ImuBias {
                accel: Vec3::new(
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                    rng.gen_range(-0.05..0.05),
                ),
                gyro: Vec3::new(
                    rng.gen_range(-0.005..0.005),
                    rng.gen_range(-0.005..0.005),
                    rng.gen_range(-0.005..0.005),
                ),
            },
            epoch: 0.0,
        }
    }

    fn random_preintegration(rng: &mut StdRng, bias_lin: ImuBias) -> PreintegratedImu {
        let mut pre = PreintegratedImu::new(bias_lin);
        let noise = nominal_noise();
        let n = rng.gen_range(20..60);
        for k in 0..n {
            let s = ImuSample {
                t: (k + 1) as f64 * 0.01,
                gyro: Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
                accel: Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ),
            };
            pre.integrate(&s, 0.01, &noise).unwrap();
        }
        pre
    }

    #[test]
    fn constant_rate_rotation_closed_form() {
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        let samples = constant_stream(Vec3::new(0.0, 0.0, 0.1), Vec3::zeros(), 100, 0.01);
        pre.integrate_all(&samples, 0.01, &nominal_noise()).unwrap();
        let expected = Rotation::exp(&Vec3::new(0.0, 0.0, 0.1));
        assert!((pre.delta_rotation.matrix() - expected.matrix()).abs().max() < 1e-12);
        assert!(pre.delta_velocity.norm() < 1e-15);
        assert_abs_diff_eq!(pre.dt_total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_accel_closed_form() {
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        let samples = constant_stream(Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), 100, 0.01);
        pre.integrate_all(&samples, 0.01, &nominal_noise()).unwrap();
        assert_abs_diff_eq!(pre.delta_velocity, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
        // Sum over k of (k*dt*dt + dt^2/2) = 0.5 exactly under the stated
        // update order (position uses pre-update velocity).
        assert_abs_diff_eq!(pre.delta_position, Vec3::new(0.0, 0.0, 0.5), epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_positive_dt() {
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        let s = ImuSample {
            t: 0.0,
            gyro: Vec3::zeros(),
            accel: Vec3::zeros(),
        };
        assert!(matches!(
            pre.integrate(&s, 0.0, &nominal_noise()),
            Err(Error::NonPositiveDt(_))
        ));
    }

    #[test]
    fn covariance_matches_monte_carlo() {
        // Integrate a 1 s, 100 Hz stream with nominal motion and compare the
        // propagated covariance against a sample covariance of the deltas.
        let noise = nominal_noise();
        let dt = 0.01;
        let n = 100;
        let gyro = Vec3::new(0.05, -0.02, 0.1);
        let accel = Vec3::new(0.3, 9.8, -0.2);

        let mut nominal = PreintegratedImu::new(ImuBias::zero());
        nominal
            .integrate_all(&constant_stream(gyro, accel, n, dt), dt, &noise)
            .unwrap();

        let sigma_g = noise.gyro_noise_density / dt.sqrt();
        let sigma_a = noise.accel_noise_density / dt.sqrt();
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = StdRng::seed_from_u64(2024);
        let runs = 2000;
        let mut sum = Cov9::zeros();
        for _ in 0..runs {
            let mut pre = PreintegratedImu::new(ImuBias::zero());
            for k in 0..n {
                let s = ImuSample {
                    t: (k + 1) as f64 * dt,
                    gyro: gyro
                        + Vec3::new(
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                        ) * sigma_g,
                    accel: accel
                        + Vec3::new(
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                            normal.sample(&mut rng),
                        ) * sigma_a,
                };
                pre.integrate(&s, dt, &noise).unwrap();
            }
            let dtheta =
                (nominal.delta_rotation.transpose() * pre.delta_rotation).log();
            let dv = pre.delta_velocity - nominal.delta_velocity;
            let dp = pre.delta_position - nominal.delta_position;
            let mut e = nalgebra::SVector::<f64, 9>::zeros();
            e.fixed_rows_mut::<3>(0).copy_from(&dtheta);
            e.fixed_rows_mut::<3>(3).copy_from(&dv);
            e.fixed_rows_mut::<3>(6).copy_from(&dp);
            sum += e * e.transpose();
        }
        let sample_cov = sum / runs as f64;
        let err = (sample_cov - nominal.covariance).norm() / nominal.covariance.norm();
        assert!(err < 0.15, "Frobenius mismatch {err}");
    }

    #[test]
    fn covariance_stays_symmetric_psd() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        let noise = nominal_noise();
        for k in 0..500 {
            let s = ImuSample {
                t: (k + 1) as f64 * 0.01,
                gyro: Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ),
                accel: Vec3::new(
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                    rng.gen_range(-5.0..5.0),
                ),
            };
            pre.integrate(&s, 0.01, &noise).unwrap();
            let asym = (pre.covariance - pre.covariance.transpose()).abs().max();
            assert!(asym < 1e-18);
            let eig = pre.covariance.symmetric_eigenvalues();
            assert!(eig.min() > -1e-12, "eigenvalue {}", eig.min());
        }
    }

    #[test]
    fn rotation_covariance_grows_linearly_with_gyro_noise() {
        let mut noise = nominal_noise();
        noise.accel_noise_density = 1e-12;
        let dt = 0.01;
        let trace_at = |n: usize| {
            let mut pre = PreintegratedImu::new(ImuBias::zero());
            pre.integrate_all(
                &constant_stream(Vec3::new(0.0, 0.0, 0.2), Vec3::zeros(), n, dt),
                dt,
                &noise,
            )
            .unwrap();
            pre.covariance.fixed_view::<3, 3>(0, 0).trace()
        };
        let t1 = trace_at(100);
        let t2 = trace_at(200);
        assert!(
            (t2 / t1 - 2.0).abs() < 0.05,
            "rotation covariance ratio {}",
            t2 / t1
        );
    }

    #[test]
    fn stream_folding_matches_composition() {
        // Integrating [s1..sn] in one go equals integrating two halves and
        // composing them with the standard delta-composition rule.
        let mut rng = StdRng::seed_from_u64(8);
        let noise = nominal_noise();
        let dt = 0.01;
        let samples: Vec<ImuSample> = (0..80)
            .map(|k| ImuSample {
                t: (k + 1) as f64 * dt,
                gyro: Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
                accel: Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ),
            })
            .collect();
        let mut full = PreintegratedImu::new(ImuBias::zero());
        full.integrate_all(&samples, dt, &noise).unwrap();

        let mut first = PreintegratedImu::new(ImuBias::zero());
        first.integrate_all(&samples[..37], dt, &noise).unwrap();
        let mut second = PreintegratedImu::new(ImuBias::zero());
        second.integrate_all(&samples[37..], dt, &noise).unwrap();

        // Composition rule (test-only).
        let rot = first.delta_rotation * second.delta_rotation;
        let vel = first.delta_velocity + first.delta_rotation * second.delta_velocity;
        let pos = first.delta_position
            + first.delta_velocity * second.dt_total
            + first.delta_rotation * second.delta_position;

        assert!((full.delta_rotation.matrix() - rot.matrix()).abs().max() < 1e-9);
        assert!((full.delta_velocity - vel).norm() < 1e-9);
        assert!((full.delta_position - pos).norm() < 1e-9);
    }

    #[test]
    fn bias_correction_identity_at_linearization_point() {
        let mut rng = StdRng::seed_from_u64(11);
        let bias = ImuBias {
            accel: Vec3::new(0.01, -0.02, 0.03),
            gyro: Vec3::new(0.001, 0.002, -0.001),
        };
        let pre = random_preintegration(&mut rng, bias);
        let c = pre.bias_corrected(&bias);
        assert_eq!(c.rotation.matrix(), pre.delta_rotation.matrix());
        assert_eq!(c.velocity, pre.delta_velocity);
        assert_eq!(c.position, pre.delta_position);
        assert!(!c.extrapolated);
    }

    #[test]
    fn bias_correction_matches_reintegration() {
        // First-order correction vs re-integration at a shifted bias.
        let mut rng = StdRng::seed_from_u64(12);
        let noise = nominal_noise();
        let dt = 0.01;
        let samples: Vec<ImuSample> = (0..100)
            .map(|k| ImuSample {
                t: (k + 1) as f64 * dt,
                gyro: Vec3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                ),
                accel: Vec3::new(
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ),
            })
            .collect();
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        pre.integrate_all(&samples, dt, &noise).unwrap();

        let shift = ImuBias {
            accel: Vec3::new(5e-3, -4e-3, 3e-3),
            gyro: Vec3::new(1e-3, -1e-3, 5e-4),
        };
        let corrected = pre.bias_corrected(&shift);

        let mut re = PreintegratedImu::new(shift);
        re.integrate_all(&samples, dt, &noise).unwrap();

        assert!(
            (corrected.rotation.transpose() * re.delta_rotation).log().norm() < 1e-4,
            "rotation correction too far from re-integration"
        );
        assert!((corrected.velocity - re.delta_velocity).norm() < 1e-4);
        assert!((corrected.position - re.delta_position).norm() < 1e-4);
    }

    #[test]
    fn bias_correction_linear_in_accel_bias() {
        let mut rng = StdRng::seed_from_u64(13);
        let pre = random_preintegration(&mut rng, ImuBias::zero());
        let da = Vec3::new(0.01, -0.02, 0.005);
        let c1 = pre.bias_corrected(&ImuBias {
            accel: da,
            gyro: Vec3::zeros(),
        });
        let c2 = pre.bias_corrected(&ImuBias {
            accel: da * 2.0,
            gyro: Vec3::zeros(),
        });
        let dv1 = c1.velocity - pre.delta_velocity;
        let dv2 = c2.velocity - pre.delta_velocity;
        assert!((dv2 - dv1 * 2.0).norm() < 1e-15);
        let dp1 = c1.position - pre.delta_position;
        let dp2 = c2.position - pre.delta_position;
        assert!((dp2 - dp1 * 2.0).norm() < 1e-15);
    }

    #[test]
    fn bias_correction_flags_extrapolation() {
        let mut rng = StdRng::seed_from_u64(14);
        let pre = random_preintegration(&mut rng, ImuBias::zero());
        let c = pre.bias_corrected(&ImuBias {
            accel: Vec3::new(1.0, 0.0, 0.0),
            gyro: Vec3::zeros(),
        });
        assert!(c.extrapolated);
    }

    #[test]
    fn residual_zero_for_predicted_state() {
        let mut rng = StdRng::seed_from_u64(15);
        for _ in 0..20 {
            let mut state_i = random_state(&mut rng);
            let pre = random_preintegration(&mut rng, state_i.bias);
            state_i.bias = pre.bias_lin;
            let gravity = Vec3::new(0.1, -9.8, 0.2);
            let state_j = predict_state(&state_i, &pre, &gravity);
            let r = imu_residual(&state_i, &state_j, &pre, &gravity);
            assert!(r.as_vector().norm() < 1e-10, "residual {:?}", r);
        }
    }

    #[test]
    fn free_fall_velocity_increment() {
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        pre.integrate_all(
            &constant_stream(Vec3::zeros(), Vec3::zeros(), 100, 0.01),
            0.01,
            &nominal_noise(),
        )
        .unwrap();
        let state_i = NavState {
            rotation: Rotation::identity(),
            position: Vec3::zeros(),
            velocity: Vec3::new(1.0, 2.0, 3.0),
            bias: ImuBias::zero(),
            epoch: 0.0,
        };
        let g = Vec3::new(0.0, 0.0, -9.81);
        let state_j = predict_state(&state_i, &pre, &g);
        assert_abs_diff_eq!(state_j.velocity - state_i.velocity, g, epsilon = 1e-12);
    }

    #[test]
    fn stationary_gravity_cancelling_input() {
        // Body at rest with accel exactly cancelling gravity.
        let g = Vec3::new(0.0, 0.0, -9.81);
        let rot = Rotation::exp(&Vec3::new(0.1, 0.2, -0.3));
        let accel_body = rot.transpose() * (-g);
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        pre.integrate_all(
            &constant_stream(Vec3::zeros(), accel_body, 100, 0.01),
            0.01,
            &nominal_noise(),
        )
        .unwrap();
        let state_i = NavState {
            rotation: rot,
            position: Vec3::new(10.0, 20.0, 30.0),
            velocity: Vec3::zeros(),
            bias: ImuBias::zero(),
            epoch: 0.0,
        };
        let state_j = predict_state(&state_i, &pre, &g);
        assert!((state_j.position - state_i.position).norm() < 1e-9);
        assert!((state_j.velocity - state_i.velocity).norm() < 1e-9);
    }

    #[test]
    fn residual_linear_in_position_j() {
        let mut rng = StdRng::seed_from_u64(16);
        let state_i = random_state(&mut rng);
        let pre = random_preintegration(&mut rng, state_i.bias);
        let gravity = Vec3::new(0.0, 0.0, -9.81);
        let state_j = predict_state(&state_i, &pre, &gravity);
        let r0 = imu_residual(&state_i, &state_j, &pre, &gravity);
        let mut moved = state_j.clone();
        moved.position += Vec3::new(1.0, 0.0, 0.0);
        let r1 = imu_residual(&state_i, &moved, &pre, &gravity);
        let expected = state_i.rotation.transpose() * Vec3::new(1.0, 0.0, 0.0);
        assert_abs_diff_eq!(r1.position - r0.position, expected, epsilon = 1e-12);
    }

    #[test]
    fn jacobian_wrt_vj_is_rit_at_zero_residual() {
        let mut rng = StdRng::seed_from_u64(17);
        let state_i = random_state(&mut rng);
        let pre = random_preintegration(&mut rng, state_i.bias);
        let gravity = Vec3::new(0.0, 0.0, -9.81);
        let state_j = predict_state(&state_i, &pre, &gravity);
        let jac = residual_jacobians(&state_i, &state_j, &pre, &gravity);
        let block = jac.wrt_j.fixed_view::<3, 3>(3, 6).into_owned();
        assert!((block - state_i.rotation.matrix().transpose()).abs().max() < 1e-12);
    }

    /// Central finite differences of the residual over the 15-dim tangents.
    fn fd_jacobians(
        state_i: &NavState,
        state_j: &NavState,
        pre: &PreintegratedImu,
        gravity: &Vec3,
        h: f64,
    ) -> (Jac9x15, Jac9x15) {
        let mut fd_i = Jac9x15::zeros();
        let mut fd_j = Jac9x15::zeros();
        for k in 0..15 {
            let mut dv = nalgebra::SVector::<f64, 15>::zeros();
            dv[k] = h;
            let dp = StateDelta::from_vector(&dv);
            let dm = StateDelta::from_vector(&(-dv));

            let rp = imu_residual(&state_i.retract(&dp), state_j, pre, gravity).as_vector();
            let rm = imu_residual(&state_i.retract(&dm), state_j, pre, gravity).as_vector();
            fd_i.set_column(k, &((rp - rm) / (2.0 * h)));

            let rp = imu_residual(state_i, &state_j.retract(&dp), pre, gravity).as_vector();
            let rm = imu_residual(state_i, &state_j.retract(&dm), pre, gravity).as_vector();
            fd_j.set_column(k, &((rp - rm) / (2.0 * h)));
        }
        (fd_i, fd_j)
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = StdRng::seed_from_u64(18);
        let gravity = Vec3::new(0.05, -9.8, 0.1);
        for run in 0..100 {
            let state_i = random_state(&mut rng);
            let mut state_j = random_state(&mut rng);
            // Keep states dynamically plausible relative to each other.
            let pre = random_preintegration(&mut rng, state_i.bias);
            state_j.epoch = state_i.epoch + pre.dt_total;
            let jac = residual_jacobians(&state_i, &state_j, &pre, &gravity);
            let (fd_i, fd_j) = fd_jacobians(&state_i, &state_j, &pre, &gravity, 1e-6);
            let scale_i = jac.wrt_i.norm().max(1.0);
            let scale_j = jac.wrt_j.norm().max(1.0);
            assert!(
                (jac.wrt_i - fd_i).norm() / scale_i < 1e-5,
                "run {run}: wrt_i mismatch {}",
                (jac.wrt_i - fd_i).norm() / scale_i
            );
            assert!(
                (jac.wrt_j - fd_j).norm() / scale_j < 1e-5,
                "run {run}: wrt_j mismatch {}",
                (jac.wrt_j - fd_j).norm() / scale_j
            );
        }
    }

    #[test]
    fn bias_jacobian_blocks_match_finite_differences() {
        // The residual bias blocks must equal the (negated) preintegration
        // bias Jacobians composed through the correction chain.
        let mut rng = StdRng::seed_from_u64(19);
        for _ in 0..20 {
            let mut state_i = random_state(&mut rng);
            let pre = random_preintegration(&mut rng, state_i.bias);
            state_i.bias.gyro += Vec3::new(1e-3, -2e-3, 1.5e-3);
            state_i.bias.accel += Vec3::new(1e-2, 2e-2, -1e-2);
            let gravity = Vec3::new(0.0, 0.0, -9.81);
            let state_j = predict_state(&state_i, &pre, &gravity);
            let jac = residual_jacobians(&state_i, &state_j, &pre, &gravity);
            let (fd_i, _) = fd_jacobians(&state_i, &state_j, &pre, &gravity, 1e-6);
            let analytic = jac.wrt_i.fixed_view::<9, 6>(0, 9).into_owned();
            let fd = fd_i.fixed_view::<9, 6>(0, 9).into_owned();
            assert!(
                (analytic - fd).norm() / analytic.norm().max(1.0) < 1e-5,
                "bias block mismatch {}",
                (analytic - fd).norm() / analytic.norm().max(1.0)
            );
            // Velocity/accel-bias block is exactly the negated recursion.
            let block = jac.wrt_i.fixed_view::<3, 3>(3, 9).into_owned();
            assert!((block + pre.j_vel_accel_bias).abs().max() < 1e-15);
        }
    }
}
