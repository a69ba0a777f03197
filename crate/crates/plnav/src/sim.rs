//! Synthetic scenario generator: a ground vehicle trajectory, a handful of
//! high-elevation GNSS satellites, optional pseudolites, a static base
//! station, and noisy IMU + pseudorange streams with ground truth.
//!
//! The sampled ground truth is propagated at the IMU rate by the same
//! discrete zero-order-hold mechanization the preintegration module inverts,
//! so noise-free measurement streams reproduce the sampled truth to rounding
//! precision. Positions are accumulated as deltas from the scenario origin
//! to keep that rounding at the millimeter scale and below. Gravity is held
//! constant over each GNSS/PL epoch interval, evaluated at the antenna point
//! at the interval start (the same point the downstream position factors
//! see).
//!
//! Satellite lines of sight are frozen over the run; GPS geometry changes by
//! a fraction of a degree per minute, which is negligible for DOP at this
//! window length.
//!
//! All random draws come from one seeded generator with fixed stream
//! assignment (IMU noise, bias walk, clocks, one stream per transmitter), so
//! scenarios differing only in their pseudolite set share identical common
//! noise.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::frames::{
    ecef_to_geodetic, enu_rotation, geodetic_to_ecef, gravity_ecef, GeodeticCoord, Mat3, Rotation,
    Vec3,
};
use crate::graph::NavState;
use crate::preintegration::{ImuBias, ImuNoiseParams, ImuSample};
use crate::pseudorange::{PseudorangeObs, TransmitterKind, TransmitterState};

/// Satellites below this elevation are excluded with a notice.
pub const SATELLITE_ELEVATION_MASK: f64 = 5.0 * std::f64::consts::PI / 180.0;

/// RNG stream assignment (ChaCha streams of the scenario seed).
const STREAM_IMU_NOISE: u64 = 0;
const STREAM_BIAS_WALK: u64 = 1;
const STREAM_ROVER_CLOCK: u64 = 2;
const STREAM_BASE_CLOCK: u64 = 3;
const STREAM_SATELLITE_BASE: u64 = 10;
const STREAM_PSEUDOLITE_BASE: u64 = 500;

fn default_duration() -> f64 {
    80.0
}
fn default_epoch_rate() -> f64 {
    1.0
}
fn default_imu_rate() -> f64 {
    200.0
}
fn default_clock_walk() -> f64 {
    0.1
}
fn default_lever() -> [f64; 3] {
    [0.0, 0.0, -0.1249]
}
fn default_label() -> String {
    "scenario".into()
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginConfig {
    /// rad
    pub latitude: f64,
    /// rad
    pub longitude: f64,
    /// m above the WGS-84 ellipsoid
    pub height: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// Counterclockwise circle starting at the origin heading East.
    Circle { radius: f64, speed: f64 },
    /// Lissajous figure eight spanning roughly `scale` meters.
    FigureEight { scale: f64, period: f64 },
    /// Constant velocity due East.
    StraightLine { speed: f64 },
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SatelliteConfig {
    /// rad, clockwise from North
    pub azimuth: f64,
    /// rad above the horizon
    pub elevation: f64,
    /// m from the origin
    pub range: f64,
    /// m
    #[serde(default)]
    pub clock_offset: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PseudoliteConfig {
    /// ENU position relative to the origin, m.
    pub east: f64,
    pub north: f64,
    pub up: f64,
    /// m
    #[serde(default)]
    pub clock_offset: f64,
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasConfig {
    pub accel: [f64; 3],
    pub gyro: [f64; 3],
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            accel: [0.0; 3],
            gyro: [0.0; 3],
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_label")]
    pub label: String,
    pub seed: u64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_epoch_rate")]
    pub gnss_epoch_rate: f64,
    #[serde(default = "default_imu_rate")]
    pub imu_rate: f64,
    pub origin: OriginConfig,
    pub trajectory: Trajectory,
    pub satellites: Vec<SatelliteConfig>,
    #[serde(default)]
    pub pseudolites: Vec<PseudoliteConfig>,
    /// Static base station, ENU m.
    pub base_enu: [f64; 3],
    /// Per-receiver pseudorange noise, m (1-sigma).
    pub pr_sigma: f64,
    /// Receiver clock random walk, m/sqrt(s); rover and base walk
    /// independently.
    #[serde(default = "default_clock_walk")]
    pub clock_walk_sigma: f64,
    pub noise: ImuNoiseParams,
    #[serde(default)]
    pub initial_bias: BiasConfig,
    /// Body-frame antenna lever arm, m.
    #[serde(default = "default_lever")]
    pub lever_arm: [f64; 3],
    /// Disable every stochastic draw (measurement noise, bias walk, clock
    /// walks) while keeping the nominal densities for downstream weighting.
    #[serde(default)]
    pub zero_noise: bool,
}

impl ScenarioConfig {
    pub fn lever(&self) -> Vec3 {
        Vec3::from_column_slice(&self.lever_arm)
    }

    pub fn origin_coord(&self) -> Result<GeodeticCoord> {
        GeodeticCoord::new(self.origin.latitude, self.origin.longitude, self.origin.height)
            .map_err(|e| Error::InvalidConfig {
                field: "origin".into(),
                constraint: e.to_string(),
            })
    }

    pub fn initial_bias(&self) -> ImuBias {
        ImuBias {
            accel: Vec3::from_column_slice(&self.initial_bias.accel),
            gyro: Vec3::from_column_slice(&self.initial_bias.gyro),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let field_err = |field: &str, constraint: &str| -> Error {
            Error::InvalidConfig {
                field: field.into(),
                constraint: constraint.into(),
            }
        };
        if !(self.duration > 0.0) {
            return Err(field_err("duration", "must be > 0"));
        }
        if !(self.gnss_epoch_rate > 0.0) {
            return Err(field_err("gnss_epoch_rate", "must be > 0"));
        }
        if !(self.imu_rate > 0.0) {
            return Err(field_err("imu_rate", "must be > 0"));
        }
        let ratio = self.imu_rate / self.gnss_epoch_rate;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
            return Err(field_err(
                "imu_rate",
                "must be an integer multiple of gnss_epoch_rate",
            ));
        }
        if self.pr_sigma < 0.0 {
            return Err(field_err("pr_sigma", "must be >= 0"));
        }
        if self.clock_walk_sigma < 0.0 {
            return Err(field_err("clock_walk_sigma", "must be >= 0"));
        }
        self.origin_coord()?;
        self.noise.validate()?;
        match &self.trajectory {
            Trajectory::Circle { radius, speed } => {
                if !(*radius > 0.0) {
                    return Err(field_err("trajectory.radius", "must be > 0"));
                }
                if !(*speed > 0.0) {
                    return Err(field_err(
                        "trajectory.speed",
                        "must be > 0 (heading-defined yaw requires motion)",
                    ));
                }
            }
            Trajectory::FigureEight { scale, period } => {
                if !(*scale > 0.0) {
                    return Err(field_err("trajectory.scale", "must be > 0"));
                }
                if !(*period > 0.0) {
                    return Err(field_err("trajectory.period", "must be > 0"));
                }
            }
            Trajectory::StraightLine { speed } => {
                if !(*speed > 0.0) {
                    return Err(field_err(
                        "trajectory.speed",
                        "must be > 0 (heading-defined yaw requires motion)",
                    ));
                }
            }
        }
        for (i, s) in self.satellites.iter().enumerate() {
            if !(s.elevation > 0.0 && s.elevation <= std::f64::consts::FRAC_PI_2) {
                return Err(field_err(
                    &format!("satellites[{i}].elevation"),
                    "must lie in (0, pi/2]",
                ));
            }
            if !(s.range > 0.0) {
                return Err(field_err(&format!("satellites[{i}].range"), "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Ground-truth trajectory: analytic accessors plus the NavState sequence
/// sampled at the IMU rate by the discrete mechanization.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub origin: GeodeticCoord,
    pub origin_ecef: Vec3,
    /// ECEF -> ENU at the origin.
    pub enu: Rotation,
    trajectory: Trajectory,
    pub samples: Vec<NavState>,
    pub sample_dt: f64,
}

impl GroundTruth {
    /// ENU kinematics of the analytic trajectory at time `t`:
    /// (position, velocity, acceleration, heading unit (E, N), heading rate).
    fn enu_kinematics(&self, t: f64) -> (Vec3, Vec3, Vec3, (f64, f64), f64) {
        match self.trajectory {
            Trajectory::StraightLine { speed } => (
                Vec3::new(speed * t, 0.0, 0.0),
                Vec3::new(speed, 0.0, 0.0),
                Vec3::zeros(),
                (1.0, 0.0),
                0.0,
            ),
            Trajectory::Circle { radius, speed } => {
                let omega = speed / radius;
                let a = omega * t;
                (
                    Vec3::new(radius * a.sin(), radius * (1.0 - a.cos()), 0.0),
                    Vec3::new(speed * a.cos(), speed * a.sin(), 0.0),
                    Vec3::new(-speed * omega * a.sin(), speed * omega * a.cos(), 0.0),
                    (a.cos(), a.sin()),
                    omega,
                )
            }
            Trajectory::FigureEight { scale, period } => {
                let w = 2.0 * std::f64::consts::PI / period;
                let pos = Vec3::new(scale * (w * t).sin(), 0.5 * scale * (2.0 * w * t).sin(), 0.0);
                let vel = Vec3::new(
                    scale * w * (w * t).cos(),
                    scale * w * (2.0 * w * t).cos(),
                    0.0,
                );
                let acc = Vec3::new(
                    -scale * w * w * (w * t).sin(),
                    -2.0 * scale * w * w * (2.0 * w * t).sin(),
                    0.0,
                );
                let h = vel.norm();
                let heading = (vel.x / h, vel.y / h);
                let rate = (vel.x * acc.y - vel.y * acc.x) / (h * h);
                (pos, vel, acc, heading, rate)
            }
        }
    }

    pub fn analytic_position_ecef(&self, t: f64) -> Vec3 {
        let (p, ..) = self.enu_kinematics(t);
        self.origin_ecef + self.enu.matrix().transpose() * p
    }

    pub fn analytic_velocity_ecef(&self, t: f64) -> Vec3 {
        let (_, v, ..) = self.enu_kinematics(t);
        self.enu.matrix().transpose() * v
    }

    pub fn analytic_acceleration_ecef(&self, t: f64) -> Vec3 {
        let (_, _, a, ..) = self.enu_kinematics(t);
        self.enu.matrix().transpose() * a
    }

    /// Body frame is forward-left-up with yaw following the heading.
    pub fn analytic_rotation(&self, t: f64) -> Rotation {
        let (.., heading, _) = self.enu_kinematics(t);
        rotation_from_heading(&self.enu, heading)
    }

    /// Body-frame angular rate: yaw rate about the (body z = up) axis.
    pub fn analytic_angular_rate_body(&self, t: f64) -> Vec3 {
        let (.., rate) = self.enu_kinematics(t);
        Vec3::new(0.0, 0.0, rate)
    }

    pub fn span(&self) -> (f64, f64) {
        (0.0, self.sample_dt * (self.samples.len() - 1) as f64)
    }

    /// Sampled truth state at `t`, which must fall on the sample grid.
    pub fn state_at(&self, t: f64) -> Result<&NavState> {
        let idx = t / self.sample_dt;
        let k = idx.round() as usize;
        if (idx - idx.round()).abs() > 1e-6 || k >= self.samples.len() {
            let (start, end) = self.span();
            return Err(Error::EpochOutOfSpan {
                epoch: t,
                start,
                end,
            });
        }
        Ok(&self.samples[k])
    }
}

fn rotation_from_heading(enu: &Rotation, heading: (f64, f64)) -> Rotation {
    let f = Vec3::new(heading.0, heading.1, 0.0);
    let u = Vec3::new(0.0, 0.0, 1.0);
    let l = u.cross(&f);
    let mut m = Mat3::zeros();
    m.set_column(0, &f);
    m.set_column(1, &l);
    m.set_column(2, &u);
    Rotation::from_matrix_unchecked(enu.matrix().transpose() * m)
}

/// Everything a run needs: streams, truth, transmitter table, config echo.
#[derive(Debug, Clone)]
pub struct SimulatedDataset {
    pub config: ScenarioConfig,
    pub truth: GroundTruth,
    pub imu: Vec<ImuSample>,
    pub rover_obs: Vec<PseudorangeObs>,
    pub base_obs: Vec<PseudorangeObs>,
    /// Epoch times (s) with observations.
    pub epochs: Vec<f64>,
    /// Transmitter states; lines of sight are frozen over the run.
    pub transmitters: Vec<TransmitterState>,
    pub base_position: Vec3,
    pub notices: Vec<String>,
}

struct NoiseStreams {
    imu: ChaCha8Rng,
    bias_walk: ChaCha8Rng,
    rover_clock: ChaCha8Rng,
    base_clock: ChaCha8Rng,
    per_tx: Vec<(ChaCha8Rng, ChaCha8Rng)>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(gauss(rng), gauss(rng), gauss(rng))
}

/// Transmitter table from the scenario geometry; satellites below the
/// elevation mask are dropped with a notice.
fn build_transmitters(cfg: &ScenarioConfig, truth: &GroundTruth) -> (Vec<TransmitterState>, Vec<String>) {
    let mut txs = Vec::new();
    let mut notices = Vec::new();
    let to_ecef = |enu: Vec3| truth.origin_ecef + truth.enu.matrix().transpose() * enu;
    for (i, s) in cfg.satellites.iter().enumerate() {
        if s.elevation < SATELLITE_ELEVATION_MASK {
            notices.push(format!(
                "satellite {i} below {:.1} deg elevation mask, excluded",
                SATELLITE_ELEVATION_MASK.to_degrees()
            ));
            continue;
        }
        let los = Vec3::new(
            s.azimuth.sin() * s.elevation.cos(),
            s.azimuth.cos() * s.elevation.cos(),
            s.elevation.sin(),
        );
        txs.push(TransmitterState {
            id: format!("G{:02}", i + 1),
            kind: TransmitterKind::GnssSatellite,
            position: to_ecef(los * s.range),
            clock_offset: s.clock_offset,
        });
    }
    for (i, p) in cfg.pseudolites.iter().enumerate() {
        txs.push(TransmitterState {
            id: format!("PL{:02}", i + 1),
            kind: TransmitterKind::Pseudolite,
            position: to_ecef(Vec3::new(p.east, p.north, p.up)),
            clock_offset: p.clock_offset,
        });
    }
    (txs, notices)
}

/// Propagate the discrete ground truth and derive the IMU stream in one
/// pass. Positions are accumulated as ENU-frame-free ECEF deltas from the
/// origin so per-step rounding stays at the delta scale.
fn propagate_truth_and_imu(
    cfg: &ScenarioConfig,
    truth_shell: &GroundTruth,
    streams: &mut NoiseStreams,
) -> Result<(Vec<NavState>, Vec<ImuSample>)> {
    let dt = 1.0 / cfg.imu_rate;
    let n_samples = (cfg.duration * cfg.imu_rate).round() as usize;
    let samples_per_epoch = (cfg.imu_rate / cfg.gnss_epoch_rate).round() as usize;
    let sigma_gyro = cfg.noise.gyro_noise_density * cfg.imu_rate.sqrt();
    let sigma_accel = cfg.noise.accel_noise_density * cfg.imu_rate.sqrt();
    let walk_gyro = cfg.noise.gyro_bias_walk * dt.sqrt();
    let walk_accel = cfg.noise.accel_bias_walk * dt.sqrt();
    let lever = cfg.lever();

    let mut bias = cfg.initial_bias();
    let mut delta = truth_shell.enu_kinematics(0.0).0; // ENU start offset
    let mut position_delta = truth_shell.enu.matrix().transpose() * delta;
    delta = Vec3::zeros();
    let _ = delta;
    let mut velocity = truth_shell.analytic_velocity_ecef(0.0);
    let mut rotation = truth_shell.analytic_rotation(0.0);
    let mut gravity = Vec3::zeros();

    let mut states = Vec::with_capacity(n_samples + 1);
    let mut imu = Vec::with_capacity(n_samples);
    states.push(NavState {
        rotation,
        position: truth_shell.origin_ecef + position_delta,
        velocity,
        bias,
        epoch: 0.0,
    });

    for k in 0..n_samples {
        let t_left = k as f64 * dt;
        if k % samples_per_epoch == 0 {
            // New epoch interval: re-evaluate the held gravity at the
            // current antenna point.
            let antenna = truth_shell.origin_ecef + position_delta + rotation * lever;
            gravity = gravity_ecef(&antenna)?;
        }
        let gyro_clean = truth_shell.analytic_angular_rate_body(t_left);
        let accel_ecef = truth_shell.analytic_acceleration_ecef(t_left);
        let accel_clean = rotation.transpose() * (accel_ecef - gravity);

        let (gyro_meas, accel_meas) = if cfg.zero_noise {
            (gyro_clean + bias.gyro, accel_clean + bias.accel)
        } else {
            let g = gyro_clean + bias.gyro + gauss3(&mut streams.imu) * sigma_gyro;
            let a = accel_clean + bias.accel + gauss3(&mut streams.imu) * sigma_accel;
            bias.gyro += gauss3(&mut streams.bias_walk) * walk_gyro;
            bias.accel += gauss3(&mut streams.bias_walk) * walk_accel;
            (g, a)
        };
        imu.push(ImuSample {
            t: (k + 1) as f64 * dt,
            gyro: gyro_meas,
            accel: accel_meas,
        });

        // Discrete mechanization with the clean values: position first
        // (pre-update velocity/rotation), then velocity, then rotation.
        position_delta += velocity * dt + gravity * (0.5 * dt * dt)
            + rotation * (accel_clean * (0.5 * dt * dt));
        velocity += gravity * dt + rotation * (accel_clean * dt);
        rotation = rotation * Rotation::exp(&(gyro_clean * dt));
        if (k + 1) % 512 == 0 {
            rotation = rotation.renormalized();
        }
        states.push(NavState {
            rotation,
            position: truth_shell.origin_ecef + position_delta,
            velocity,
            bias,
            epoch: (k + 1) as f64 * dt,
        });
    }
    Ok((states, imu))
}

/// Build the full dataset for one scenario.
pub fn generate_dataset(cfg: &ScenarioConfig) -> Result<SimulatedDataset> {
    cfg.validate()?;
    let origin = cfg.origin_coord()?;
    let origin_ecef = geodetic_to_ecef(&origin);
    let enu = enu_rotation(&origin);
    let mut truth = GroundTruth {
        origin,
        origin_ecef,
        enu,
        trajectory: cfg.trajectory.clone(),
        samples: Vec::new(),
        sample_dt: 1.0 / cfg.imu_rate,
    };

    let mut streams = NoiseStreams {
        imu: stream(cfg.seed, STREAM_IMU_NOISE),
        bias_walk: stream(cfg.seed, STREAM_BIAS_WALK),
        rover_clock: stream(cfg.seed, STREAM_ROVER_CLOCK),
        base_clock: stream(cfg.seed, STREAM_BASE_CLOCK),
        per_tx: Vec::new(),
    };

    let (samples, imu) = propagate_truth_and_imu(cfg, &truth, &mut streams)?;
    truth.samples = samples;

    let (transmitters, notices) = build_transmitters(cfg, &truth);
    if transmitters.len() < 4 {
        return Err(Error::InvalidConfig {
            field: "satellites/pseudolites".into(),
            constraint: format!(
                "need at least 4 transmitters above the mask, have {}",
                transmitters.len()
            ),
        });
    }
    validate_transmitters(&transmitters)?;

    // One stream pair (rover, base) per transmitter, keyed by the stable
    // per-kind index so adding pseudolites leaves satellite draws untouched.
    for tx in &transmitters {
        let idx: u64 = tx.id[tx.id.len() - 2..].parse::<u64>().unwrap_or(0);
        let base_stream = match tx.kind {
            TransmitterKind::GnssSatellite => STREAM_SATELLITE_BASE + 2 * idx,
            TransmitterKind::Pseudolite => STREAM_PSEUDOLITE_BASE + 2 * idx,
        };
        streams
            .per_tx
            .push((stream(cfg.seed, base_stream), stream(cfg.seed, base_stream + 1)));
    }

    let base_position =
        origin_ecef + enu.matrix().transpose() * Vec3::from_column_slice(&cfg.base_enu);
    let lever = cfg.lever();
    let epoch_dt = 1.0 / cfg.gnss_epoch_rate;
    let n_epochs = (cfg.duration * cfg.gnss_epoch_rate).round() as usize;
    let obs_sigma = if cfg.pr_sigma > 0.0 { cfg.pr_sigma } else { 1.0 };
    let clock_step = cfg.clock_walk_sigma * epoch_dt.sqrt();

    let mut rover_clock = 0.0;
    let mut base_clock = 0.0;
    let mut epochs = Vec::with_capacity(n_epochs);
    let mut rover_obs = Vec::new();
    let mut base_obs = Vec::new();

    for k in 0..n_epochs {
        let t = k as f64 * epoch_dt;
        epochs.push(t);
        if !cfg.zero_noise && k > 0 {
            rover_clock += gauss(&mut streams.rover_clock) * clock_step;
            base_clock += gauss(&mut streams.base_clock) * clock_step;
        }
        let state = truth.state_at(t)?;
        let antenna = state.position + state.rotation * lever;
        for (tx, (rover_rng, base_rng)) in transmitters.iter().zip(&mut streams.per_tx) {
            let geo_rover = (tx.position - antenna).norm();
            let geo_base = (tx.position - base_position).norm();
            let (noise_r, noise_b) = if cfg.zero_noise {
                (0.0, 0.0)
            } else {
                (
                    gauss(rover_rng) * cfg.pr_sigma,
                    gauss(base_rng) * cfg.pr_sigma,
                )
            };
            rover_obs.push(PseudorangeObs {
                epoch: t,
                transmitter_id: tx.id.clone(),
                range: geo_rover + rover_clock - tx.clock_offset + noise_r,
                sigma: obs_sigma,
            });
            base_obs.push(PseudorangeObs {
                epoch: t,
                transmitter_id: tx.id.clone(),
                range: geo_base + base_clock - tx.clock_offset + noise_b,
                sigma: obs_sigma,
            });
        }
    }

    Ok(SimulatedDataset {
        config: cfg.clone(),
        truth,
        imu,
        rover_obs,
        base_obs,
        epochs,
        transmitters,
        base_position,
        notices,
    })
}

fn validate_transmitters(txs: &[TransmitterState]) -> Result<()> {
    for tx in txs {
        match tx.kind {
            TransmitterKind::GnssSatellite => {
                let r = tx.position.norm();
                if !(2.0e7..=3.0e7).contains(&r) {
                    return Err(Error::InvalidConfig {
                        field: format!("satellite {}", tx.id),
                        constraint: format!("radius {r:.3e} outside [2e7, 3e7] m"),
                    });
                }
            }
            TransmitterKind::Pseudolite => {
                let h = ecef_to_geodetic(&tx.position)?.height;
                if !(-100.0..=1e4).contains(&h) {
                    return Err(Error::InvalidConfig {
                        field: format!("pseudolite {}", tx.id),
                        constraint: format!("height {h:.1} m outside [-100, 1e4]"),
                    });
                }
            }
        }
    }
    Ok(())
}

/// The four default signal sets sharing one seed and trajectory, differing
/// only in the pseudolite set: none, both, or one of the two. Satellite
/// geometry is clustered at high elevation so the GPS-only case has poor
/// DOP, and the two pseudolites are low-elevation ground transmitters that
/// mostly repair the horizontal/vertical split.
pub fn default_paper_scenarios(seed: u64) -> Vec<ScenarioConfig> {
    let pl1 = PseudoliteConfig {
        east: 170.0,
        north: 60.0,
        up: 12.0,
        clock_offset: 4.0,
    };
    let pl2 = PseudoliteConfig {
        east: -30.0,
        north: -190.0,
        up: 3.0,
        clock_offset: -2.5,
    };
    let base = base_scenario(seed);
    let with = |label: &str, pls: Vec<PseudoliteConfig>| -> ScenarioConfig {
        let mut cfg = base.clone();
        cfg.label = label.into();
        cfg.pseudolites = pls;
        cfg
    };
    vec![
        with("GPS", vec![]),
        with("GPS+2PL", vec![pl1.clone(), pl2.clone()]),
        with("GPS+PL01", vec![pl1]),
        with("GPS+PL02", vec![pl2]),
    ]
}

fn base_scenario(seed: u64) -> ScenarioConfig {
    let deg = std::f64::consts::PI / 180.0;
    ScenarioConfig {
        label: "GPS".into(),
        seed,
        duration: 80.0,
        gnss_epoch_rate: 1.0,
        imu_rate: 200.0,
        origin: OriginConfig {
            latitude: 48.08 * deg,
            longitude: 11.64 * deg,
            height: 540.0,
        },
        trajectory: Trajectory::Circle {
            radius: 20.0,
            speed: 3.0,
        },
        satellites: vec![
            SatelliteConfig {
                azimuth: 30.0 * deg,
                elevation: 78.0 * deg,
                range: 2.02e7,
                clock_offset: 12.0,
            },
            SatelliteConfig {
                azimuth: 150.0 * deg,
                elevation: 72.0 * deg,
                range: 2.05e7,
                clock_offset: -7.0,
            },
            SatelliteConfig {
                azimuth: 255.0 * deg,
                elevation: 75.0 * deg,
                range: 2.04e7,
                clock_offset: 3.5,
            },
            SatelliteConfig {
                azimuth: 340.0 * deg,
                elevation: 68.0 * deg,
                range: 2.08e7,
                clock_offset: -1.0,
            },
        ],
        pseudolites: vec![],
        base_enu: [-60.0, -40.0, 1.0],
        pr_sigma: 1.0,
        clock_walk_sigma: 0.1,
        noise: ImuNoiseParams {
            gyro_noise_density: 3e-4,
            accel_noise_density: 3e-3,
            gyro_bias_walk: 3e-4,
            accel_bias_walk: 3e-2,
            sample_rate: 200.0,
        },
        initial_bias: BiasConfig::default(),
        lever_arm: default_lever(),
        zero_noise: false,
    }
}

/// Scenario-level mean DOPs over all epochs at the truth antenna point.
pub fn mean_dops(dataset: &SimulatedDataset) -> Result<crate::pseudorange::DopValues> {
    let lever = dataset.config.lever();
    let mut sum = [0.0f64; 4];
    for &t in &dataset.epochs {
        let s = dataset.truth.state_at(t)?;
        let antenna = s.position + s.rotation * lever;
        let d = crate::pseudorange::compute_dop(dataset.transmitters.iter(), &antenna)?;
        sum[0] += d.pdop;
        sum[1] += d.hdop;
        sum[2] += d.vdop;
        sum[3] += d.gdop;
    }
    let n = dataset.epochs.len() as f64;
    Ok(crate::pseudorange::DopValues {
        pdop: sum[0] / n,
        hdop: sum[1] / n,
        vdop: sum[2] / n,
        gdop: sum[3] / n,
    })
}
