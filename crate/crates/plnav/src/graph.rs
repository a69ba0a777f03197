//! Batch factor graph over navigation states at GNSS/PL epochs.
//!
//! One state node per measurement epoch carries rotation, ECEF position and
//! velocity, and IMU biases. Factors are: a prior on the first node, a
//! position factor per node (the loosely coupled LS fix, applied at the
//! antenna point through the lever arm), and preintegrated-IMU plus
//! bias-random-walk factors between consecutive nodes. The sum of squared
//! Mahalanobis residuals is minimized by Levenberg-Marquardt.
//!
//! The normal equations over the 15K-dimensional tangent space are block
//! tridiagonal (binary factors only couple neighbours, unary factors are
//! diagonal blocks), so states are ordered by epoch and the damped system is
//! factorized by a banded Cholesky with scalar bandwidth 29.
//!
//! Rotation updates use the right-perturbation convention R * Exp(dtheta)
//! throughout; position, velocity and biases are additive.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::frames::{apply_lever_arm, right_jacobian_inv, skew, Mat3, Rotation, Vec3};
use crate::preintegration::{
    imu_residual, residual_jacobians, ImuBias, ImuNoiseParams, ImuSample, PreintegratedImu,
};
use crate::pseudorange::LsSolution;

pub type Cov15 = SMatrix<f64, 15, 15>;

/// Diagonal floor applied to position-factor covariances, (0.5 m)^2.
pub const SIGMA_P_FLOOR: f64 = 0.25;

/// Default prior sigmas where no measurement informs the block.
pub const PRIOR_SIGMA_VELOCITY: f64 = 1.0;
pub const PRIOR_SIGMA_ROLL_PITCH: f64 = 0.1;
pub const PRIOR_SIGMA_YAW: f64 = 0.5;
pub const PRIOR_SIGMA_ACCEL_BIAS: f64 = 0.1;
pub const PRIOR_SIGMA_GYRO_BIAS: f64 = 0.01;

/// Full navigation state at one epoch.
#[derive(Debug, Clone)]
pub struct NavState {
    pub rotation: Rotation,
    pub position: Vec3,
    pub velocity: Vec3,
    pub bias: ImuBias,
    pub epoch: f64,
}

impl NavState {
    /// Manifold update: rotation right-multiplied by Exp(dtheta), the rest
    /// additive.
    pub fn retract(&self, d: &StateDelta) -> NavState {
        NavState {
            rotation: self.rotation * Rotation::exp(&d.dtheta),
            position: self.position + d.dp,
            velocity: self.velocity + d.dv,
            bias: ImuBias {
                accel: self.bias.accel + d.dba,
                gyro: self.bias.gyro + d.dbg,
            },
            epoch: self.epoch,
        }
    }
}

/// 15-dim tangent increment, ordered (dtheta, dp, dv, dba, dbg).
#[derive(Debug, Clone, Copy)]
pub struct StateDelta {
    pub dtheta: Vec3,
    pub dp: Vec3,
    pub dv: Vec3,
    pub dba: Vec3,
    pub dbg: Vec3,
}

impl StateDelta {
    pub fn zero() -> Self {
        StateDelta {
            dtheta: Vec3::zeros(),
            dp: Vec3::zeros(),
            dv: Vec3::zeros(),
            dba: Vec3::zeros(),
            dbg: Vec3::zeros(),
        }
    }

    pub fn from_vector(v: &SVector<f64, 15>) -> Self {
        StateDelta {
            dtheta: v.fixed_rows::<3>(0).into_owned(),
            dp: v.fixed_rows::<3>(3).into_owned(),
            dv: v.fixed_rows::<3>(6).into_owned(),
            dba: v.fixed_rows::<3>(9).into_owned(),
            dbg: v.fixed_rows::<3>(12).into_owned(),
        }
    }

    pub fn negated(&self) -> Self {
        StateDelta {
            dtheta: -self.dtheta,
            dp: -self.dp,
            dv: -self.dv,
            dba: -self.dba,
            dbg: -self.dbg,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PriorFactor {
    pub state: usize,
    pub target: NavState,
    pub covariance: Cov15,
}

#[derive(Debug, Clone)]
pub struct PositionFactor {
    pub state: usize,
    /// Observed antenna position (LS fix), ECEF m.
    pub measurement: Vec3,
    pub covariance: Mat3,
    pub lever: Vec3,
}

#[derive(Debug, Clone)]
pub struct ImuFactor {
    /// Connects states (first, first + 1).
    pub first: usize,
    pub pre: PreintegratedImu,
    /// Gravity held constant over the interval, evaluated at construction.
    pub gravity: Vec3,
}

#[derive(Debug, Clone)]
pub struct BiasFactor {
    pub first: usize,
    pub accel_cov: Mat3,
    pub gyro_cov: Mat3,
}

#[derive(Debug, Clone)]
pub enum Factor {
    Prior(PriorFactor),
    Imu(ImuFactor),
    Bias(BiasFactor),
    Position(PositionFactor),
}

impl Factor {
    pub fn kind(&self) -> &'static str {
        match self {
            Factor::Prior(_) => "prior",
            Factor::Imu(_) => "imu",
            Factor::Bias(_) => "bias",
            Factor::Position(_) => "position",
        }
    }
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    pub num_states: usize,
    pub factors: Vec<Factor>,
}

/// Residual of the position factor at the antenna point.
pub fn position_residual(s: &NavState, f: &PositionFactor) -> Vec3 {
    apply_lever_arm(&s.rotation, &s.position, &f.lever) - f.measurement
}

/// Bias random-walk residual between consecutive states.
pub fn bias_residual(s_i: &NavState, s_j: &NavState) -> (Vec3, Vec3) {
    (
        s_j.bias.accel - s_i.bias.accel,
        s_j.bias.gyro - s_i.bias.gyro,
    )
}

/// Prior residual, stacked (rotation, position, velocity, accel bias, gyro
/// bias) like [`StateDelta`].
pub fn prior_residual(s: &NavState, f: &PriorFactor) -> SVector<f64, 15> {
    let mut r = SVector::<f64, 15>::zeros();
    r.fixed_rows_mut::<3>(0)
        .copy_from(&(f.target.rotation.transpose() * s.rotation).log());
    r.fixed_rows_mut::<3>(3)
        .copy_from(&(s.position - f.target.position));
    r.fixed_rows_mut::<3>(6)
        .copy_from(&(s.velocity - f.target.velocity));
    r.fixed_rows_mut::<3>(9)
        .copy_from(&(s.bias.accel - f.target.bias.accel));
    r.fixed_rows_mut::<3>(12)
        .copy_from(&(s.bias.gyro - f.target.bias.gyro));
    r
}

/// Whitened residual and Jacobian blocks of one factor.
struct Evaluated {
    residual: DVector<f64>,
    /// (state index, whitened Jacobian block of shape residual_dim x 15)
    blocks: Vec<(usize, DMatrix<f64>)>,
}

fn whiten_in_place(cov: &DMatrix<f64>, residual: &mut DVector<f64>, blocks: &mut [(usize, DMatrix<f64>)]) -> Result<()> {
    let chol = cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::SolverFailure("factor covariance not positive definite".into()))?;
    let l = chol.l();
    l.solve_lower_triangular_mut(residual);
    for (_, b) in blocks.iter_mut() {
        l.solve_lower_triangular_mut(b);
    }
    Ok(())
}

fn evaluate_factor(factor: &Factor, states: &[NavState], with_jacobians: bool) -> Result<Evaluated> {
    let mut out = match factor {
        Factor::Prior(f) => {
            let r = prior_residual(&states[f.state], f);
            let mut blocks = Vec::new();
            if with_jacobians {
                let mut j = DMatrix::<f64>::identity(15, 15);
                j.view_mut((0, 0), (3, 3))
                    .copy_from(&right_jacobian_inv(&r.fixed_rows::<3>(0).into_owned()));
                blocks.push((f.state, j));
            }
            Evaluated {
                residual: DVector::from_column_slice(r.as_slice()),
                blocks,
            }
        }
        Factor::Position(f) => {
            let s = &states[f.state];
            let r = position_residual(s, f);
            let mut blocks = Vec::new();
            if with_jacobians {
                let mut j = DMatrix::<f64>::zeros(3, 15);
                j.view_mut((0, 0), (3, 3))
                    .copy_from(&(-s.rotation.matrix() * skew(&f.lever)));
                j.view_mut((0, 3), (3, 3)).copy_from(&Mat3::identity());
                blocks.push((f.state, j));
            }
            Evaluated {
                residual: DVector::from_column_slice(r.as_slice()),
                blocks,
            }
        }
        Factor::Bias(f) => {
            let (ra, rg) = bias_residual(&states[f.first], &states[f.first + 1]);
            let mut residual = DVector::<f64>::zeros(6);
            residual.rows_mut(0, 3).copy_from(&ra);
            residual.rows_mut(3, 3).copy_from(&rg);
            let mut blocks = Vec::new();
            if with_jacobians {
                let mut ji = DMatrix::<f64>::zeros(6, 15);
                ji.view_mut((0, 9), (3, 3)).copy_from(&(-Mat3::identity()));
                ji.view_mut((3, 12), (3, 3)).copy_from(&(-Mat3::identity()));
                let mut jj = DMatrix::<f64>::zeros(6, 15);
                jj.view_mut((0, 9), (3, 3)).copy_from(&Mat3::identity());
                jj.view_mut((3, 12), (3, 3)).copy_from(&Mat3::identity());
                blocks.push((f.first, ji));
                blocks.push((f.first + 1, jj));
            }
            Evaluated { residual, blocks }
        }
        Factor::Imu(f) => {
            let si = &states[f.first];
            let sj = &states[f.first + 1];
            let r = imu_residual(si, sj, &f.pre, &f.gravity).as_vector();
            let mut blocks = Vec::new();
            if with_jacobians {
                let jac = residual_jacobians(si, sj, &f.pre, &f.gravity);
                let mut ji = DMatrix::<f64>::zeros(9, 15);
                let mut jj = DMatrix::<f64>::zeros(9, 15);
                for c in 0..15 {
                    for row in 0..9 {
                        ji[(row, c)] = jac.wrt_i[(row, c)];
                        jj[(row, c)] = jac.wrt_j[(row, c)];
                    }
                }
                blocks.push((f.first, ji));
                blocks.push((f.first + 1, jj));
            }
            Evaluated {
                residual: DVector::from_column_slice(r.as_slice()),
                blocks,
            }
        }
    };

    let cov = factor_covariance(factor);
    whiten_in_place(&cov, &mut out.residual, &mut out.blocks)?;
    if out.residual.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteResidual(format!(
            "{} factor produced a non-finite residual",
            factor.kind()
        )));
    }
    Ok(out)
}

fn factor_covariance(factor: &Factor) -> DMatrix<f64> {
    match factor {
        Factor::Prior(f) => DMatrix::from_iterator(15, 15, f.covariance.iter().copied()),
        Factor::Position(f) => DMatrix::from_iterator(3, 3, f.covariance.iter().copied()),
        Factor::Imu(f) => DMatrix::from_iterator(9, 9, f.pre.covariance.iter().copied()),
        Factor::Bias(f) => {
            let mut c = DMatrix::<f64>::zeros(6, 6);
            c.view_mut((0, 0), (3, 3)).copy_from(&f.accel_cov);
            c.view_mut((3, 3), (3, 3)).copy_from(&f.gyro_cov);
            c
        }
    }
}

/// Sum of squared Mahalanobis norms over all factors, accumulated in factor
/// order so the result is independent of any evaluation parallelism.
pub fn total_cost(graph: &FactorGraph, states: &[NavState]) -> Result<f64> {
    let mut cost = 0.0;
    for factor in &graph.factors {
        let ev = evaluate_factor(factor, states, false)?;
        cost += ev.residual.norm_squared();
    }
    Ok(cost)
}

#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    /// Relative cost-change convergence threshold.
    pub cost_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iterations: 60,
            initial_lambda: 1e-6,
            lambda_up: 10.0,
            lambda_down: 0.3,
            cost_tolerance: 1e-9,
            step_tolerance: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub lambda: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct FactorResidualReport {
    pub kind: &'static str,
    pub first_state: usize,
    /// Whitened residual norm at the final states.
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct OptimizationResult {
    pub states: Vec<NavState>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub cost_log: Vec<IterationRecord>,
    pub factor_report: Vec<FactorResidualReport>,
}

/// Scalar bandwidth of the block-tridiagonal normal matrix: two adjacent
/// 15-dim states.
const BANDWIDTH: usize = 29;

/// In-place banded Cholesky factorization (lower triangle), returning false
/// if the matrix is not positive definite within the band.
fn banded_cholesky(h: &mut DMatrix<f64>, bw: usize) -> bool {
    let n = h.nrows();
    for j in 0..n {
        let lo = j.saturating_sub(bw);
        let mut d = h[(j, j)];
        for k in lo..j {
            d -= h[(j, k)] * h[(j, k)];
        }
        if d <= 0.0 || !d.is_finite() {
            return false;
        }
        let dj = d.sqrt();
        h[(j, j)] = dj;
        let hi = (j + bw + 1).min(n);
        for i in (j + 1)..hi {
            let lo_i = i.saturating_sub(bw).max(lo);
            let mut s = h[(i, j)];
            for k in lo_i..j {
                s -= h[(i, k)] * h[(j, k)];
            }
            h[(i, j)] = s / dj;
        }
    }
    true
}

/// Solve L L^T x = b given the banded Cholesky factor in `l`.
fn banded_solve(l: &DMatrix<f64>, b: &DVector<f64>, bw: usize) -> DVector<f64> {
    let n = l.nrows();
    let mut x = b.clone();
    for i in 0..n {
        let lo = i.saturating_sub(bw);
        let mut s = x[i];
        for k in lo..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    for i in (0..n).rev() {
        let hi = (i + bw + 1).min(n);
        let mut s = x[i];
        for k in (i + 1)..hi {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Levenberg-Marquardt over the whitened factor residuals. A step is
/// accepted only if the cost strictly decreases; rejected steps raise the
/// damping. Every linear solve counts as one iteration.
pub fn solve(
    graph: &FactorGraph,
    initial_states: &[NavState],
    cfg: &OptimizerConfig,
) -> Result<OptimizationResult> {
    if graph.num_states == 0 || initial_states.len() != graph.num_states {
        return Err(Error::SolverFailure(format!(
            "graph has {} states but {} initial states given",
            graph.num_states,
            initial_states.len()
        )));
    }
    let mut touched = vec![false; graph.num_states];
    for f in &graph.factors {
        match f {
            Factor::Prior(p) => touched[p.state] = true,
            Factor::Position(p) => touched[p.state] = true,
            Factor::Imu(p) => {
                touched[p.first] = true;
                touched[p.first + 1] = true;
            }
            Factor::Bias(p) => {
                touched[p.first] = true;
                touched[p.first + 1] = true;
            }
        }
    }
    if let Some(idx) = touched.iter().position(|t| !t) {
        return Err(Error::SolverFailure(format!(
            "state {idx} is not constrained by any factor"
        )));
    }

    let n = graph.num_states * 15;
    let bw = BANDWIDTH.min(n.saturating_sub(1));
    let mut states = initial_states.to_vec();
    let initial_cost = total_cost(graph, &states)?;
    let mut current_cost = initial_cost;
    let mut lambda = cfg.initial_lambda;
    let mut cost_log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    let mut hessian = DMatrix::<f64>::zeros(n, n);
    let mut gradient = DVector::<f64>::zeros(n);

    'outer: while iterations < cfg.max_iterations {
        hessian.fill(0.0);
        gradient.fill(0.0);
        for factor in &graph.factors {
            let ev = evaluate_factor(factor, &states, true)?;
            for (si, ji) in &ev.blocks {
                let gi = ji.transpose() * &ev.residual;
                let ri = si * 15;
                for k in 0..15 {
                    gradient[ri + k] += gi[k];
                }
                for (sj, jj) in &ev.blocks {
                    if sj < si {
                        continue; // fill upper block pair once, mirror below
                    }
                    let hij = ji.transpose() * jj;
                    let rj = sj * 15;
                    for a in 0..15 {
                        for b in 0..15 {
                            hessian[(ri + a, rj + b)] += hij[(a, b)];
                            if ri != rj {
                                hessian[(rj + b, ri + a)] += hij[(a, b)];
                            }
                        }
                    }
                }
            }
        }

        // Damped attempts at the current linearization.
        loop {
            if iterations >= cfg.max_iterations {
                break 'outer;
            }
            iterations += 1;
            let mut damped = hessian.clone();
            for k in 0..n {
                let d = hessian[(k, k)].max(1e-12);
                damped[(k, k)] += lambda * d;
            }
            if !banded_cholesky(&mut damped, bw) {
                cost_log.push(IterationRecord {
                    iteration: iterations,
                    cost: current_cost,
                    lambda,
                    accepted: false,
                });
                lambda *= cfg.lambda_up;
                if lambda > 1e16 {
                    return Err(Error::SolverFailure(
                        "normal matrix indefinite even at maximum damping".into(),
                    ));
                }
                continue;
            }
            let step = banded_solve(&damped, &(-&gradient), bw);
            let candidate: Vec<NavState> = states
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let seg = step.rows(i * 15, 15);
                    s.retract(&StateDelta::from_vector(&SVector::<f64, 15>::from_iterator(
                        seg.iter().copied(),
                    )))
                })
                .collect();
            let new_cost = total_cost(graph, &candidate)?;
            if new_cost.is_finite() && new_cost < current_cost {
                let rel_drop = (current_cost - new_cost) / current_cost.max(1e-300);
                states = candidate;
                current_cost = new_cost;
                cost_log.push(IterationRecord {
                    iteration: iterations,
                    cost: current_cost,
                    lambda,
                    accepted: true,
                });
                lambda = (lambda * cfg.lambda_down).max(1e-12);
                if rel_drop < cfg.cost_tolerance
                    || step.norm() < cfg.step_tolerance
                    || current_cost < 1e-16
                {
                    converged = true;
                    break 'outer;
                }
                break; // re-linearize
            } else {
                cost_log.push(IterationRecord {
                    iteration: iterations,
                    cost: current_cost,
                    lambda,
                    accepted: false,
                });
                lambda *= cfg.lambda_up;
                if step.norm() < cfg.step_tolerance {
                    // Proposals are numerically indistinguishable from the
                    // current point: treat as converged.
                    converged = true;
                    break 'outer;
                }
                if lambda > 1e16 {
                    converged = true;
                    break 'outer;
                }
            }
        }
    }

    let factor_report = graph
        .factors
        .iter()
        .map(|f| {
            let norm = evaluate_factor(f, &states, false)
                .map(|ev| ev.residual.norm())
                .unwrap_or(f64::NAN);
            FactorResidualReport {
                kind: f.kind(),
                first_state: match f {
                    Factor::Prior(p) => p.state,
                    Factor::Position(p) => p.state,
                    Factor::Imu(p) => p.first,
                    Factor::Bias(p) => p.first,
                },
                norm,
            }
        })
        .collect();

    Ok(OptimizationResult {
        states,
        initial_cost,
        final_cost: current_cost,
        iterations,
        converged,
        cost_log,
        factor_report,
    })
}

/// Floor the diagonal of a position covariance at [`SIGMA_P_FLOOR`].
pub fn floor_position_covariance(cov: &Mat3) -> Mat3 {
    let mut out = (cov + cov.transpose()) * 0.5;
    for k in 0..3 {
        if out[(k, k)] < SIGMA_P_FLOOR {
            out[(k, k)] = SIGMA_P_FLOOR;
        }
    }
    out
}

/// Diagonal prior built from the first LS covariance and the default sigmas;
/// the tangent ordering is (rotation, position, velocity, accel bias, gyro
/// bias) with roll/pitch tighter than yaw.
pub fn default_prior(target: NavState, first_ls_covariance: &Mat3) -> PriorFactor {
    let mut cov = Cov15::zeros();
    cov[(0, 0)] = PRIOR_SIGMA_ROLL_PITCH * PRIOR_SIGMA_ROLL_PITCH;
    cov[(1, 1)] = PRIOR_SIGMA_ROLL_PITCH * PRIOR_SIGMA_ROLL_PITCH;
    cov[(2, 2)] = PRIOR_SIGMA_YAW * PRIOR_SIGMA_YAW;
    let pos = floor_position_covariance(first_ls_covariance);
    for k in 0..3 {
        cov[(3 + k, 3 + k)] = pos[(k, k)];
    }
    for k in 0..3 {
        cov[(6 + k, 6 + k)] = PRIOR_SIGMA_VELOCITY * PRIOR_SIGMA_VELOCITY;
        cov[(9 + k, 9 + k)] = PRIOR_SIGMA_ACCEL_BIAS * PRIOR_SIGMA_ACCEL_BIAS;
        cov[(12 + k, 12 + k)] = PRIOR_SIGMA_GYRO_BIAS * PRIOR_SIGMA_GYRO_BIAS;
    }
    PriorFactor {
        state: 0,
        target,
        covariance: cov,
    }
}

/// Assemble the full graph from per-epoch LS fixes and the IMU stream.
///
/// One state node per LS epoch; a position factor per node with the floored
/// LS covariance; an IMU factor and a bias factor per consecutive pair
/// preintegrating exactly the samples with t in (t_i, t_j]; the prior
/// attached to node 0. Samples outside the epoch span are ignored. The bias
/// linearization point is zero (the cold-start estimate) and gravity is
/// evaluated once per factor at the interval-start LS position.
pub fn build_graph(
    ls_solutions: &[LsSolution],
    imu: &[ImuSample],
    noise: &ImuNoiseParams,
    prior: PriorFactor,
    lever: &Vec3,
) -> Result<FactorGraph> {
    if ls_solutions.is_empty() {
        return Err(Error::EmptySeries("no LS solutions".into()));
    }
    for w in ls_solutions.windows(2) {
        if w[1].epoch <= w[0].epoch {
            return Err(Error::EpochMisalignment(format!(
                "LS epochs not strictly increasing at {} -> {}",
                w[0].epoch, w[1].epoch
            )));
        }
    }
    let num_states = ls_solutions.len();
    let mut factors = Vec::with_capacity(3 * num_states);
    factors.push(Factor::Prior(prior));
    for (k, ls) in ls_solutions.iter().enumerate() {
        factors.push(Factor::Position(PositionFactor {
            state: k,
            measurement: ls.position,
            covariance: floor_position_covariance(&ls.covariance),
            lever: *lever,
        }));
    }

    let nominal_dt = 1.0 / noise.sample_rate;
    for k in 0..num_states - 1 {
        let t_i = ls_solutions[k].epoch;
        let t_j = ls_solutions[k + 1].epoch;
        let span: Vec<&ImuSample> = imu.iter().filter(|s| s.t > t_i && s.t <= t_j).collect();
        let mut prev_t = t_i;
        let mut pre = PreintegratedImu::new(ImuBias::zero());
        for s in &span {
            let dt = s.t - prev_t;
            if dt > 2.0 * nominal_dt {
                return Err(Error::ImuGap {
                    start: prev_t,
                    end: s.t,
                    gap: dt,
                });
            }
            pre.integrate(s, dt, noise)?;
            prev_t = s.t;
        }
        if t_j - prev_t > 2.0 * nominal_dt || span.is_empty() {
            return Err(Error::ImuGap {
                start: prev_t,
                end: t_j,
                gap: t_j - prev_t,
            });
        }
        let gravity = crate::frames::gravity_ecef(&ls_solutions[k].position)?;
        factors.push(Factor::Imu(ImuFactor {
            first: k,
            pre,
            gravity,
        }));
        let dt_ij = t_j - t_i;
        factors.push(Factor::Bias(BiasFactor {
            first: k,
            accel_cov: Mat3::identity() * noise.accel_bias_walk.powi(2) * dt_ij,
            gyro_cov: Mat3::identity() * noise.gyro_bias_walk.powi(2) * dt_ij,
        }));
    }

    Ok(FactorGraph {
        num_states,
        factors,
    })
}

/// Cold-start state initialization from per-epoch LS fixes: velocities by
/// central differences, one constant rotation with yaw aligned to the
/// initial horizontal velocity (roll/pitch zero), biases zero, body
/// positions lever-corrected.
pub fn initialize_states(
    ls_solutions: &[LsSolution],
    lever: &Vec3,
    yaw_override: Option<f64>,
) -> Result<Vec<NavState>> {
    if ls_solutions.is_empty() {
        return Err(Error::EmptySeries("no LS solutions".into()));
    }
    let n = ls_solutions.len();
    let mut velocities = Vec::with_capacity(n);
    for k in 0..n {
        let (a, b) = if n == 1 {
            (0, 0)
        } else if k == 0 {
            (0, 1)
        } else if k == n - 1 {
            (n - 2, n - 1)
        } else {
            (k - 1, k + 1)
        };
        let dt = ls_solutions[b].epoch - ls_solutions[a].epoch;
        let v = if dt > 0.0 {
            (ls_solutions[b].position - ls_solutions[a].position) / dt
        } else {
            Vec3::zeros()
        };
        velocities.push(v);
    }

    let origin = crate::frames::ecef_to_geodetic(&ls_solutions[0].position)?;
    let enu = crate::frames::enu_rotation(&origin);
    let rotation = match yaw_override {
        Some(yaw) => rotation_from_heading(&enu, yaw.sin(), yaw.cos()),
        None => {
            let v_enu = enu * velocities[0];
            let h = (v_enu.x * v_enu.x + v_enu.y * v_enu.y).sqrt();
            if h < 0.1 {
                // Too slow to define a heading; default to East.
                rotation_from_heading(&enu, 1.0, 0.0)
            } else {
                rotation_from_heading(&enu, v_enu.x / h, v_enu.y / h)
            }
        }
    };

    Ok(ls_solutions
        .iter()
        .zip(velocities)
        .map(|(ls, velocity)| NavState {
            rotation,
            position: ls.position - rotation * *lever,
            velocity,
            bias: ImuBias::zero(),
            epoch: ls.epoch,
        })
        .collect())
}

/// Body frame is forward-left-up; forward = horizontal heading (sin, cos in
/// ENU east/north components), up = ellipsoidal up.
fn rotation_from_heading(enu: &Rotation, sin_heading: f64, cos_heading: f64) -> Rotation {
    let f = Vec3::new(sin_heading, cos_heading, 0.0);
    let u = Vec3::new(0.0, 0.0, 1.0);
    let l = u.cross(&f);
    let mut m = Mat3::zeros();
    m.set_column(0, &f);
    m.set_column(1, &l);
    m.set_column(2, &u);
    Rotation::from_matrix_unchecked(enu.matrix().transpose() * m)
}
