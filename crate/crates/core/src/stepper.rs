//! Time integration of the coupled rod, head and fluid.
//!
//! Each step evaluates the hydrodynamic loads explicitly from the previous
//! velocities, then solves the implicit elastic balance
//! `M (q⁺ − q)/Δt² − M q̇/Δt = f_int(q⁺) + f_ext` by damped Newton with a
//! banded Jacobian. The twist of the head edge is prescribed by the motor.

use std::io::Write;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::elastic::{ElasticModel, JacobianMode, JACOBIAN_BANDWIDTH};
use crate::hydro::{HeadFlowModel, Hydrodynamics, LocalTerm};
use crate::rod::{build_initial_configuration, node_dof, twist_dof, RodState};
use crate::{Error, PhysicalParameters, Result, Vec3};

/// Sense of the motor relative to the head-edge tangent `t^0`.
///
/// `t^0` points from the head into the flagellum, so a rotation that is
/// counter-clockwise when viewed from above the head is a negative rotation
/// about `t^0`. With a right-handed helix this sense pushes the head forward.
pub const MOTOR_SENSE: f64 = -1.0;

/// Frame in which the motor speed is prescribed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotorDrive {
    /// `ω` is the spin of `e^0` relative to the head, which counter-rotates
    /// freely under torque balance.
    #[default]
    RelativeToHead,
    /// `ω` is the lab-frame spin of `e^0`.
    Lab,
}

/// Newton solver controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StepControls {
    /// Tolerance on the scaled residual norm.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    /// Overrides the physical time step when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_step: Option<f64>,
    pub jacobian: JacobianMode,
    pub head_flow: HeadFlowModel,
    pub local_term: LocalTerm,
    pub drive: MotorDrive,
}

impl Default for StepControls {
    fn default() -> Self {
        Self {
            newton_tol: 1e-6,
            max_newton_iters: 50,
            time_step: None,
            jacobian: JacobianMode::Analytic,
            head_flow: HeadFlowModel::AsPrinted,
            local_term: LocalTerm::Stokeslet,
            drive: MotorDrive::RelativeToHead,
        }
    }
}

impl StepControls {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0 && self.newton_tol <= 1e-2) {
            return Err(Error::InvalidParameter(format!(
                "newton_tol must lie in (0, 1e-2], got {}",
                self.newton_tol
            )));
        }
        if self.max_newton_iters < 5 {
            return Err(Error::InvalidParameter(format!(
                "max_newton_iters must be at least 5, got {}",
                self.max_newton_iters
            )));
        }
        if let Some(dt) = self.time_step {
            if !(dt.is_finite() && dt > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "time_step must be positive, got {dt}"
                )));
            }
        }
        Ok(())
    }
}

/// Piecewise-constant, right-continuous angular velocity schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularVelocityProfile {
    /// `(time [s], ω [rad/s])` with strictly increasing times.
    pub breakpoints: Vec<(f64, f64)>,
}

impl AngularVelocityProfile {
    pub fn new(breakpoints: Vec<(f64, f64)>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::InvalidInput(
                "angular velocity profile is empty".into(),
            ));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::InvalidInput(format!(
                    "profile times must be strictly increasing ({} then {})",
                    w[0].0, w[1].0
                )));
            }
        }
        if breakpoints
            .iter()
            .any(|(t, w)| !t.is_finite() || !w.is_finite())
        {
            return Err(Error::InvalidInput(
                "profile contains non-finite values".into(),
            ));
        }
        Ok(Self { breakpoints })
    }

    pub fn constant(omega: f64) -> Self {
        Self {
            breakpoints: vec![(0.0, omega)],
        }
    }

    /// `ω_L` until `t_app`, `ω_H` for `t_h`, then `ω_L`.
    pub fn pulse(omega_l: f64, omega_h: f64, t_app: f64, t_h: f64) -> Self {
        let mut b = vec![(0.0, omega_l)];
        if t_h > 0.0 {
            if t_app > 0.0 {
                b.push((t_app, omega_h));
            } else {
                b[0].1 = omega_h;
            }
            b.push((t_app.max(0.0) + t_h, omega_l));
        }
        Self { breakpoints: b }
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.breakpoints.partition_point(|(bt, _)| *bt <= t);
        self.breakpoints[idx.saturating_sub(1)].1
    }
}

/// One observation of the head and the two nodes that define the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub t: f64,
    pub x0: Vec3,
    pub x1: Vec3,
    pub x2: Vec3,
    /// Motor angular velocity applied from this instant [rad/s].
    pub omega: f64,
}

impl TrajectorySample {
    pub fn of(state: &RodState, omega: f64) -> Self {
        Self {
            t: state.time,
            x0: state.position(0),
            x1: state.position(1),
            x2: state.position(2),
            omega,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HeadTrajectory {
    pub samples: Vec<TrajectorySample>,
}

impl HeadTrajectory {
    pub fn positions(&self) -> Vec<Vec3> {
        self.samples.iter().map(|s| s.x0).collect()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Per-step solver report.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub newton_iterations: usize,
    pub residuals: Vec<f64>,
}

#[derive(Serialize)]
struct DumpRecord<'a> {
    t: f64,
    omega: f64,
    q: &'a [f64],
    q_dot: &'a [f64],
    head_angular_velocity: [f64; 3],
}

/// Forward model for one parameter set.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub params: PhysicalParameters,
    pub controls: StepControls,
    elastic: ElasticModel,
    hydro: Hydrodynamics,
    mass: Vec<f64>,
}

impl Simulator {
    pub fn new(params: PhysicalParameters, controls: StepControls) -> Result<Self> {
        params.validate()?;
        controls.validate()?;
        let n = params.node_count;
        let mut mass = vec![0.0; 4 * n - 1];
        let edge = params.edge_length();
        let node_mass = params.rod_linear_density() * edge;
        let polar = params.rod_polar_inertia_density() * edge;
        for j in 0..n {
            let m = match j {
                0 => params.head_mass(),
                j if j == n - 1 => 0.5 * node_mass,
                _ => node_mass,
            };
            for k in 0..3 {
                mass[node_dof(j) + k] = m;
            }
            if j < n - 1 {
                mass[twist_dof(j)] = polar;
            }
        }
        Ok(Self {
            elastic: ElasticModel::new(&params),
            hydro: Hydrodynamics::new(&params, controls.head_flow, controls.local_term),
            params,
            controls,
            mass,
        })
    }

    pub fn time_step(&self) -> f64 {
        self.controls.time_step.unwrap_or(self.params.time_step)
    }

    pub fn elastic(&self) -> &ElasticModel {
        &self.elastic
    }

    pub fn hydrodynamics(&self) -> &Hydrodynamics {
        &self.hydro
    }

    pub fn initial_state(&self) -> Result<RodState> {
        build_initial_configuration(&self.params)
    }

    /// Hydrodynamic forces on flagellar nodes `1..N` and on the head node,
    /// evaluated from the current velocities.
    pub fn hydrodynamic_loads(&self, state: &RodState) -> Result<(Vec<Vec3>, Vec3)> {
        let x = state.positions();
        let x0 = x[0];
        let rel: Vec<Vec3> = x[1..].iter().map(|p| p - x0).collect();
        let u_h = state.head_velocity();
        let omega_h = state.head_angular_velocity;
        let induced = self.hydro.head_induced_flow(&rel, &u_h, &omega_h)?;
        let flow: Vec<Vec3> = (1..x.len())
            .map(|j| state.node_velocity(j) - induced[j - 1])
            .collect();
        let mobility = self.hydro.mobility(&x)?;
        let forces = mobility.solve(&flow);
        let (f_head, _) = self
            .hydro
            .head_force_torque(&forces, &rel, &u_h, &omega_h)?;
        Ok((forces, f_head))
    }

    /// Advances by the configured time step.
    pub fn step(&self, state: &RodState, omega: f64) -> Result<(RodState, StepReport)> {
        self.step_with(state, omega, self.time_step())
    }

    pub fn step_with(
        &self,
        state: &RodState,
        omega: f64,
        dt: f64,
    ) -> Result<(RodState, StepReport)> {
        let n_dof = state.q.len();
        let x = state.positions();
        let (forces, f_head) = self.hydrodynamic_loads(state)?;
        let mut f_ext = vec![0.0; n_dof];
        for k in 0..3 {
            f_ext[k] = f_head[k];
        }
        for (j, f) in forces.iter().enumerate() {
            for k in 0..3 {
                f_ext[node_dof(j + 1) + k] = f[k];
            }
        }

        let mut spin = MOTOR_SENSE * omega;
        if self.controls.drive == MotorDrive::RelativeToHead {
            spin += state
                .head_angular_velocity
                .dot(&state.reference_frames[0].t);
        }
        let mut q_target = state.q.clone();
        q_target[twist_dof(0)] += dt * spin;

        let inertia: Vec<f64> = (0..n_dof)
            .map(|i| self.mass[i] * (state.q[i] + dt * state.q_dot[i]))
            .collect();
        let inv_dt2 = 1.0 / (dt * dt);

        let mut q: Vec<f64> = state
            .q
            .iter()
            .zip(&state.q_dot)
            .map(|(q, v)| q + dt * v)
            .collect();
        q[twist_dof(0)] = q_target[twist_dof(0)];

        let ext_norm = f_ext.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mom_norm = (0..n_dof)
            .map(|i| (self.mass[i] * state.q_dot[i] / dt).powi(2))
            .sum::<f64>()
            .sqrt();
        let edge = self.params.edge_length();
        let scale = ext_norm
            .max(mom_norm)
            .max(self.elastic.stiffness.bending / (edge * edge));

        let pinned = twist_dof(0);
        let residual = |trial: &RodState, f_int: &[f64]| -> Vec<f64> {
            let mut r: Vec<f64> = (0..n_dof)
                .map(|i| inv_dt2 * (self.mass[i] * trial.q[i] - inertia[i]) - f_int[i] - f_ext[i])
                .collect();
            r[pinned] = 0.0;
            r
        };
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt() / scale;

        let mut trial = state.with_dofs(q.clone())?;
        let mut residuals = Vec::new();
        let mut band = BandedMatrix::zeros(n_dof, JACOBIAN_BANDWIDTH, JACOBIAN_BANDWIDTH);
        for iter in 0..self.controls.max_newton_iters {
            band.clear();
            let f_int = match self.controls.jacobian {
                JacobianMode::Analytic => {
                    self.elastic.force_and_banded_hessian(&trial, &mut band)?
                }
                JacobianMode::FiniteDifference => {
                    let j = self
                        .elastic
                        .internal_force_jacobian_fd(&trial, 1e-8 * edge)?;
                    for r in 0..n_dof {
                        for c in r.saturating_sub(JACOBIAN_BANDWIDTH)
                            ..=(r + JACOBIAN_BANDWIDTH).min(n_dof - 1)
                        {
                            band.add(r, c, -j[(r, c)]);
                        }
                    }
                    self.elastic.internal_force(&trial)?
                }
            };
            let r = residual(&trial, &f_int);
            let rn = norm(&r);
            residuals.push(rn);
            if rn < self.controls.newton_tol {
                return self.finish(state, trial, &x, &forces, dt, iter, residuals);
            }
            for i in 0..n_dof {
                band.add(i, i, self.mass[i] * inv_dt2);
            }
            band.pin(pinned);
            let mut delta: Vec<f64> = r.iter().map(|v| -v).collect();
            delta[pinned] = 0.0;
            if band.solve_in_place(&mut delta).is_none() {
                return Err(Error::SingularNewtonSystem { iteration: iter });
            }
            // Backtrack while the residual grows.
            let mut alpha = 1.0;
            let mut next;
            loop {
                let cand: Vec<f64> = trial
                    .q
                    .iter()
                    .zip(&delta)
                    .map(|(q, d)| q + alpha * d)
                    .collect();
                next = state.with_dofs(cand)?;
                if alpha < 1.0 / 64.0 {
                    break;
                }
                let f = self.elastic.internal_force(&next);
                match f {
                    Ok(f) if norm(&residual(&next, &f)) < rn => break,
                    _ => alpha *= 0.5,
                }
            }
            trial = next;
        }
        Err(Error::NewtonDiverged {
            iterations: self.controls.max_newton_iters,
            residuals,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        start: &RodState,
        mut next: RodState,
        x: &[Vec3],
        forces: &[Vec3],
        dt: f64,
        iter: usize,
        residuals: Vec<f64>,
    ) -> Result<(RodState, StepReport)> {
        next.q_dot = next
            .q
            .iter()
            .zip(&start.q)
            .map(|(a, b)| (a - b) / dt)
            .collect();
        let rel: Vec<Vec3> = x[1..].iter().map(|p| p - x[0]).collect();
        next.head_angular_velocity = self.hydro.torque_balance_head(forces, &rel)?;
        next.time = start.time + dt;
        Ok((
            next,
            StepReport {
                newton_iterations: iter,
                residuals,
            },
        ))
    }

    /// One step, retried once as two half steps on failure.
    fn robust_step(&self, state: &RodState, omega: f64, dt: f64) -> Result<RodState> {
        match self.step_with(state, omega, dt) {
            Ok((s, _)) => Ok(s),
            Err(e) => {
                warn!(
                    "step at t = {:.4} s failed ({e}); retrying with Δt/2",
                    state.time
                );
                let (half, _) = self.step_with(state, omega, 0.5 * dt)?;
                let (mut full, _) = self.step_with(&half, omega, 0.5 * dt)?;
                full.time = state.time + dt;
                Ok(full)
            }
        }
    }

    /// Number of integration steps per observation interval.
    pub fn steps_per_observation(&self, interval: f64) -> Result<usize> {
        let dt = self.time_step();
        let ratio = interval / dt;
        let k = ratio.round();
        if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "observation interval {interval} s must be a positive integer multiple of Δt = {dt} s"
            )));
        }
        Ok(k as usize)
    }

    /// Advances `state` by `n_steps` steps of constant `omega`.
    pub fn advance(&self, state: &RodState, omega: f64, n_steps: usize) -> Result<RodState> {
        let dt = self.time_step();
        let start = state.time;
        let mut s = state.clone();
        for i in 0..n_steps {
            s = self.robust_step(&s, omega, dt)?;
            s.time = start + (i + 1) as f64 * dt;
        }
        Ok(s)
    }

    /// Runs `profile` from `state` for `duration`, sampling every `interval`.
    /// The profile is evaluated on times relative to the start of the run.
    pub fn simulate_from(
        &self,
        state: &RodState,
        profile: &AngularVelocityProfile,
        duration: f64,
        interval: f64,
        dump: Option<&mut dyn Write>,
    ) -> Result<(HeadTrajectory, RodState)> {
        let mut traj = HeadTrajectory::default();
        let s = self.simulate_into(state, profile, duration, interval, dump, &mut traj)?;
        Ok((traj, s))
    }

    /// As [`simulate_from`](Self::simulate_from), appending samples to
    /// `traj` so they survive a failed step.
    pub fn simulate_into(
        &self,
        state: &RodState,
        profile: &AngularVelocityProfile,
        duration: f64,
        interval: f64,
        mut dump: Option<&mut dyn Write>,
        traj: &mut HeadTrajectory,
    ) -> Result<RodState> {
        if !(duration >= 0.0 && duration.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "duration must be non-negative, got {duration}"
            )));
        }
        let per_obs = self.steps_per_observation(interval)?;
        let dt = self.time_step();
        let total = (duration / dt).round() as usize;
        let start = state.time;
        let mut s = state.clone();
        let record = |s: &RodState, w: f64, dump: &mut Option<&mut dyn Write>| -> Result<()> {
            if let Some(out) = dump.as_deref_mut() {
                let rec = DumpRecord {
                    t: s.time,
                    omega: w,
                    q: &s.q,
                    q_dot: &s.q_dot,
                    head_angular_velocity: s.head_angular_velocity.into(),
                };
                serde_json::to_writer(&mut *out, &rec)?;
                out.write_all(b"\n")?;
            }
            Ok(())
        };
        let omega0 = profile.at(0.0);
        traj.samples.push(TrajectorySample::of(&s, omega0));
        record(&s, omega0, &mut dump)?;
        for i in 0..total {
            let omega = profile.at(i as f64 * dt);
            s = self.robust_step(&s, omega, dt)?;
            s.time = start + (i + 1) as f64 * dt;
            if (i + 1) % per_obs == 0 {
                let w = profile.at((i + 1) as f64 * dt);
                traj.samples.push(TrajectorySample::of(&s, w));
                record(&s, w, &mut dump)?;
                debug!("t = {:.3} s, x0 = {:?}", s.time, s.position(0));
            }
        }
        Ok(s)
    }

    /// Runs `profile` from the as-built configuration.
    pub fn simulate(
        &self,
        profile: &AngularVelocityProfile,
        duration: f64,
        interval: f64,
        dump: Option<&mut dyn Write>,
    ) -> Result<HeadTrajectory> {
        let s = self.initial_state()?;
        Ok(self.simulate_from(&s, profile, duration, interval, dump)?.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpm_to_rad_s;

    fn desk() -> Simulator {
        Simulator::new(PhysicalParameters::desk(), StepControls::default()).unwrap()
    }

    #[test]
    fn rest_state_is_an_equilibrium() {
        let sim = desk();
        let s0 = sim.initial_state().unwrap();
        let s = sim.advance(&s0, 0.0, 20).unwrap();
        let drift =
            s.q.iter()
                .zip(&s0.q)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
        assert!(drift < 1e-12, "drift {drift}");
        assert!(s.q_dot.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn profile_is_right_continuous() {
        let p = AngularVelocityProfile::new(vec![(1.0, 2.0), (3.0, 5.0)]).unwrap();
        assert_eq!(p.at(0.0), 2.0);
        assert_eq!(p.at(2.999), 2.0);
        assert_eq!(p.at(3.0), 5.0);
        assert_eq!(p.at(1e9), 5.0);
        assert!(AngularVelocityProfile::new(vec![(1.0, 0.0), (1.0, 1.0)]).is_err());
        assert!(AngularVelocityProfile::new(vec![]).is_err());
        assert!(AngularVelocityProfile::new(vec![(0.0, f64::NAN)]).is_err());
    }

    #[test]
    fn pulse_profiles() {
        let p = AngularVelocityProfile::pulse(1.0, 4.0, 10.0, 5.0);
        assert_eq!(
            [p.at(9.9), p.at(10.0), p.at(14.9), p.at(15.0)],
            [1.0, 4.0, 4.0, 1.0]
        );
        assert_eq!(
            AngularVelocityProfile::pulse(1.0, 4.0, 10.0, 0.0).breakpoints,
            vec![(0.0, 1.0)]
        );
        let now = AngularVelocityProfile::pulse(1.0, 4.0, 0.0, 2.0);
        assert_eq!([now.at(0.0), now.at(2.0)], [4.0, 1.0]);
    }

    #[test]
    fn zero_duration_gives_initial_sample() {
        let traj = desk()
            .simulate(&AngularVelocityProfile::constant(1.0), 0.0, 0.5, None)
            .unwrap();
        assert_eq!(traj.len(), 1);
        assert_eq!(traj.samples[0].x0, Vec3::zeros());
    }

    #[test]
    fn observation_interval_must_be_a_multiple_of_the_step() {
        let sim = desk();
        assert_eq!(sim.steps_per_observation(0.5).unwrap(), 100);
        assert!(sim.steps_per_observation(0.0123).is_err());
        assert!(sim.steps_per_observation(0.0).is_err());
    }

    #[test]
    fn newton_converges_quadratically() {
        let sim = desk();
        let mut s = sim.initial_state().unwrap();
        let w = rpm_to_rad_s(15.0);
        for _ in 0..50 {
            let (next, report) = sim.step(&s, w).unwrap();
            let r = &report.residuals;
            assert!(*r.last().unwrap() < sim.controls.newton_tol);
            if r.len() >= 3 {
                let (a, b) = (r[r.len() - 2], r[r.len() - 1]);
                assert!(b / a < 0.5, "residuals {r:?}");
            }
            s = next;
        }
    }

    #[test]
    fn motor_twist_follows_the_head() {
        let sim = desk();
        let s = sim
            .advance(&sim.initial_state().unwrap(), rpm_to_rad_s(3.0), 40)
            .unwrap();
        let w = rpm_to_rad_s(3.0);
        let dt = sim.time_step();
        let (next, _) = sim.step(&s, w).unwrap();
        let head_spin = s.head_angular_velocity.dot(&s.reference_frames[0].t);
        let rate = (next.q[twist_dof(0)] - s.q[twist_dof(0)]) / dt;
        assert!((rate - (MOTOR_SENSE * w + head_spin)).abs() < 1e-9);
        assert!(head_spin.abs() > 1e-3 * w);

        let lab = Simulator::new(
            PhysicalParameters::desk(),
            StepControls {
                drive: MotorDrive::Lab,
                ..Default::default()
            },
        )
        .unwrap();
        let (next, _) = lab.step(&s, w).unwrap();
        let rate = (next.q[twist_dof(0)] - s.q[twist_dof(0)]) / dt;
        assert!((rate - MOTOR_SENSE * w).abs() < 1e-9);
    }

    #[test]
    fn simulation_is_bit_identical() {
        let sim = desk();
        let p = AngularVelocityProfile::pulse(rpm_to_rad_s(3.0), rpm_to_rad_s(15.0), 0.5, 0.5);
        let mut a = Vec::new();
        let mut b = Vec::new();
        let ta = sim.simulate(&p, 1.5, 0.5, Some(&mut a)).unwrap();
        let tb = sim.simulate(&p, 1.5, 0.5, Some(&mut b)).unwrap();
        assert_eq!(ta, tb);
        assert_eq!(a, b);
        assert_eq!(String::from_utf8(a).unwrap().lines().count(), 4);
    }

    #[test]
    fn invalid_controls_are_rejected() {
        for c in [
            StepControls {
                newton_tol: 0.0,
                ..Default::default()
            },
            StepControls {
                newton_tol: 0.1,
                ..Default::default()
            },
            StepControls {
                max_newton_iters: 2,
                ..Default::default()
            },
        ] {
            assert!(Simulator::new(PhysicalParameters::desk(), c).is_err());
        }
    }

    #[test]
    fn controls_reject_unknown_keys() {
        let c: StepControls = serde_json::from_str(r#"{"drive":"lab"}"#).unwrap();
        assert_eq!(c.drive, MotorDrive::Lab);
        assert!(serde_json::from_str::<StepControls>(r#"{"tolerance":1}"#).is_err());
    }
}
