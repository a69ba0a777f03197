//! Pseudorange observation model, single-differencing against a static base
//! station, epoch-wise Gauss-Newton least squares, and DOP computation.
//!
//! Clocks are carried in meters (c * dt) throughout so the speed of light
//! never appears. After single-differencing, one common differential clock
//! unknown is estimated jointly for GNSS and pseudolite observations.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::frames::{ecef_to_geodetic, enu_rotation, Mat3, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TransmitterKind {
    GnssSatellite,
    Pseudolite,
}

impl TransmitterKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransmitterKind::GnssSatellite => "gnss",
            TransmitterKind::Pseudolite => "pseudolite",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gnss" => Ok(TransmitterKind::GnssSatellite),
            "pseudolite" => Ok(TransmitterKind::Pseudolite),
            other => Err(Error::Parse(format!("unknown transmitter kind `{other}`"))),
        }
    }
}

/// Transmitter position and clock state at one epoch. Positions are treated
/// as known and error-free (broadcast truth from the simulator).
#[derive(Debug, Clone)]
pub struct TransmitterState {
    pub id: String,
    pub kind: TransmitterKind,
    pub position: Vec3,
    /// Transmitter clock error expressed in meters.
    pub clock_offset: f64,
}

/// Raw one-way pseudorange observation.
#[derive(Debug, Clone)]
pub struct PseudorangeObs {
    pub epoch: f64,
    pub transmitter_id: String,
    pub range: f64,
    pub sigma: f64,
}

/// Single-differenced observation (rover minus base).
#[derive(Debug, Clone)]
pub struct SdObs {
    pub epoch: f64,
    pub transmitter_id: String,
    pub sd_range: f64,
    pub sigma: f64,
}

/// Dilution-of-precision scalars.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DopValues {
    pub pdop: f64,
    pub hdop: f64,
    pub vdop: f64,
    pub gdop: f64,
}

/// Per-epoch least-squares fix for the antenna position.
#[derive(Debug, Clone)]
pub struct LsSolution {
    pub epoch: f64,
    pub position: Vec3,
    /// Differential receiver clock, meters.
    pub clock: f64,
    pub covariance: Mat3,
    pub dop: DopValues,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct LsConfig {
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub initial_guess: Vec3,
    pub base_position: Vec3,
}

impl LsConfig {
    pub fn new(initial_guess: Vec3, base_position: Vec3) -> Self {
        // Step tolerance sits above the f64 rounding floor of range
        // differences at GNSS scale (~1e-8 m).
        LsConfig {
            max_iterations: 25,
            step_tolerance: 1e-7,
            initial_guess,
            base_position,
        }
    }
}

/// Modeled pseudorange: geometric range plus receiver clock minus
/// transmitter clock, all in meters.
pub fn predict_pseudorange(tx: &TransmitterState, rx_position: &Vec3, rx_clock: f64) -> Result<f64> {
    let d = tx.position - rx_position;
    let range = d.norm();
    if range < 1e-9 {
        return Err(Error::CoincidentPositions);
    }
    Ok(range + rx_clock - tx.clock_offset)
}

/// Rover-minus-base single difference; cancels the transmitter clock.
pub fn single_difference(rover: &PseudorangeObs, base: &PseudorangeObs) -> Result<SdObs> {
    if rover.transmitter_id != base.transmitter_id {
        return Err(Error::ObservationMismatch(format!(
            "transmitter ids differ: {} vs {}",
            rover.transmitter_id, base.transmitter_id
        )));
    }
    if (rover.epoch - base.epoch).abs() > 1e-6 {
        return Err(Error::ObservationMismatch(format!(
            "epochs differ: {} vs {}",
            rover.epoch, base.epoch
        )));
    }
    Ok(SdObs {
        epoch: rover.epoch,
        transmitter_id: rover.transmitter_id.clone(),
        sd_range: rover.range - base.range,
        sigma: (rover.sigma * rover.sigma + base.sigma * base.sigma).sqrt(),
    })
}

/// Predicted single difference at rover position `p` with differential
/// clock `clock`; the transmitter clock cancels exactly.
fn predict_sd(tx: &TransmitterState, p: &Vec3, base: &Vec3, clock: f64) -> f64 {
    (tx.position - p).norm() - (tx.position - base).norm() + clock
}

/// Gauss-Newton least squares over (position, differential clock) on
/// single-differenced pseudoranges. Steps are halved until the weighted
/// residual cost decreases, so the accepted-iteration cost sequence is
/// non-increasing.
pub fn solve_ls(obs: &[SdObs], txs: &[TransmitterState], cfg: &LsConfig) -> Result<LsSolution> {
    solve_ls_traced(obs, txs, cfg).map(|(sol, _)| sol)
}

pub(crate) fn solve_ls_traced(
    obs: &[SdObs],
    txs: &[TransmitterState],
    cfg: &LsConfig,
) -> Result<(LsSolution, Vec<f64>)> {
    if obs.len() < 4 {
        return Err(Error::Underdetermined {
            have: obs.len(),
            need: 4,
        });
    }
    let mut tx_for = Vec::with_capacity(obs.len());
    for o in obs {
        let tx = txs
            .iter()
            .find(|t| t.id == o.transmitter_id)
            .ok_or_else(|| {
                Error::ObservationMismatch(format!("no transmitter state for {}", o.transmitter_id))
            })?;
        tx_for.push(tx);
    }

    let cost = |p: &Vec3, clock: f64| -> f64 {
        obs.iter()
            .zip(&tx_for)
            .map(|(o, tx)| {
                let r = (o.sd_range - predict_sd(tx, p, &cfg.base_position, clock)) / o.sigma;
                r * r
            })
            .sum()
    };

    let epoch = obs[0].epoch;
    let mut p = cfg.initial_guess;
    let mut clock = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut current_cost = cost(&p, clock);
    let mut cost_trace = vec![current_cost];

    let mut jac = DMatrix::<f64>::zeros(obs.len(), 4);
    let mut res = DVector::<f64>::zeros(obs.len());

    for iter in 0..cfg.max_iterations {
        iterations = iter + 1;
        for (k, (o, tx)) in obs.iter().zip(&tx_for).enumerate() {
            let d = tx.position - p;
            let range = d.norm();
            if range < 1e-9 {
                return Err(Error::CoincidentPositions);
            }
            let u = d / range;
            let w = 1.0 / o.sigma;
            res[k] = (o.sd_range - predict_sd(tx, &p, &cfg.base_position, clock)) * w;
            jac[(k, 0)] = -u.x * w;
            jac[(k, 1)] = -u.y * w;
            jac[(k, 2)] = -u.z * w;
            jac[(k, 3)] = w;
        }
        let normal = jac.transpose() * &jac;
        let rhs = jac.transpose() * &res;
        check_condition(&normal)?;
        let step = normal
            .cholesky()
            .ok_or_else(|| Error::SingularGeometry("normal matrix not positive definite".into()))?
            .solve(&rhs);
        if step.norm() < cfg.step_tolerance {
            converged = true;
            break;
        }
        let step_pos = Vec3::new(step[0], step[1], step[2]);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let cand_p = p + step_pos * alpha;
            let cand_clock = clock + step[3] * alpha;
            let cand_cost = cost(&cand_p, cand_clock);
            if cand_cost <= current_cost {
                p = cand_p;
                clock = cand_clock;
                current_cost = cand_cost;
                cost_trace.push(current_cost);
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || alpha * step.norm() < cfg.step_tolerance {
            // No usable decrease left: at the numerical floor.
            converged = true;
            break;
        }
    }

    // Unit-weight formal covariance of the position block at the solution.
    let mut normal = Matrix4::<f64>::zeros();
    for (o, tx) in obs.iter().zip(&tx_for) {
        let u = (tx.position - p).normalize();
        let row = Vector4::new(-u.x, -u.y, -u.z, 1.0) / o.sigma;
        normal += row * row.transpose();
    }
    let cov4 = normal
        .try_inverse()
        .ok_or_else(|| Error::SingularGeometry("normal matrix singular at solution".into()))?;
    let covariance = cov4.fixed_view::<3, 3>(0, 0).into_owned();

    let dop = compute_dop(txs_for_obs(&tx_for), &p)?;

    Ok((
        LsSolution {
            epoch,
            position: p,
            clock,
            covariance,
            dop,
            iterations,
            converged,
        },
        cost_trace,
    ))
}

fn txs_for_obs<'a>(tx_for: &'a [&'a TransmitterState]) -> impl Iterator<Item = &'a TransmitterState> {
    tx_for.iter().copied()
}

fn check_condition(normal: &DMatrix<f64>) -> Result<()> {
    let svd = normal.clone().svd(false, false);
    let max = svd.singular_values.max();
    let min = svd.singular_values.min();
    if min <= 0.0 || max / min > 1e12 {
        return Err(Error::SingularGeometry(format!(
            "normal matrix condition {:.3e} exceeds 1e12",
            if min > 0.0 { max / min } else { f64::INFINITY }
        )));
    }
    Ok(())
}

/// Geometry matrix DOPs at `p`: G rows are [-u^T, 1] with u the unit ECEF
/// line of sight; the position block of (G^T G)^-1 is rotated to ENU at `p`
/// to split HDOP and VDOP.
pub fn compute_dop<'a, I>(txs: I, p: &Vec3) -> Result<DopValues>
where
    I: IntoIterator<Item = &'a TransmitterState>,
{
    let mut gtg = Matrix4::<f64>::zeros();
    let mut count = 0usize;
    for tx in txs {
        let d = tx.position - p;
        let range = d.norm();
        if range < 1e-9 {
            return Err(Error::CoincidentPositions);
        }
        let u = d / range;
        let row = Vector4::new(-u.x, -u.y, -u.z, 1.0);
        gtg += row * row.transpose();
        count += 1;
    }
    if count < 4 {
        return Err(Error::Underdetermined {
            have: count,
            need: 4,
        });
    }
    let q = gtg
        .try_inverse()
        .ok_or_else(|| Error::SingularGeometry("G^T G singular".into()))?;
    let gdop = q.trace().sqrt();
    let q_pos: Mat3 = q.fixed_view::<3, 3>(0, 0).into_owned();
    let pdop = q_pos.trace().sqrt();
    let r = enu_rotation(&ecef_to_geodetic(p)?);
    let q_enu = r.matrix() * q_pos * r.matrix().transpose();
    let hdop = (q_enu[(0, 0)] + q_enu[(1, 1)]).max(0.0).sqrt();
    let vdop = q_enu[(2, 2)].max(0.0).sqrt();
    Ok(DopValues {
        pdop,
        hdop,
        vdop,
        gdop,
    })
}
