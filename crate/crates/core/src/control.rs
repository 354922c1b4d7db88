//! Online waypoint following with a binary motor rate.
//!
//! The controller watches the head trajectory, waits for a straight stretch,
//! then turns the next two waypoints into a three-phase schedule: `ω_L` for
//! `t_app`, `ω_H` for `t_H`, `ω_L` for `t_L`.

use std::collections::VecDeque;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::learning::InverseMaps;
use crate::stepper::{HeadTrajectory, Simulator, TrajectorySample};
use crate::trajectory::{
    aligning_rotation, body_frame, desired_parameters, direction_vector, fit_line,
    polyline_distance, project_p1, Azimuth, DesiredManeuver, FitWindow,
};
use crate::{rpm_to_rad_s, Error, Result, Vec3};

/// Wait before the pulse so the realized azimuth `beta` lines up with
/// `beta_d`, picking the rotation period that best preserves `l_d`.
///
/// Angles in degrees, `omega_rpm` is the spin rate of the body frame and
/// `v` the straight-swimming speed. Negative results are lifted by whole
/// periods.
pub fn compute_t_app(beta_d: f64, beta: f64, l_d: f64, l: f64, omega_rpm: f64, v: f64) -> f64 {
    let (_, t) = t_app_unlifted(beta_d, beta, l_d, l, omega_rpm, v);
    lift(t, 60.0 / omega_rpm)
}

/// Period index and wait before negative waits are lifted.
pub fn t_app_unlifted(
    beta_d: f64,
    beta: f64,
    l_d: f64,
    l: f64,
    omega_rpm: f64,
    v: f64,
) -> (f64, f64) {
    let db = beta_d - beta;
    let kappa = (omega_rpm * (l_d - l) / (60.0 * v) - db / 360.0).round();
    (kappa, db / (6.0 * omega_rpm) + 60.0 / omega_rpm * kappa)
}

fn lift(t: f64, period: f64) -> f64 {
    if t >= 0.0 {
        return t;
    }
    let mut t = t + (-t / period).ceil() * period;
    while t < 0.0 {
        t += period;
    }
    t
}

/// Controller settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub omega_l_rpm: f64,
    pub omega_h_rpm: f64,
    /// Linearity threshold on the line-fit residual [m²].
    pub delta_l: f64,
    /// Samples in the line-fit window, less one.
    pub k: usize,
    /// Observation and decision interval [s].
    pub dt: f64,
    /// Turns below this polar angle are flown straight [deg].
    pub straight_tolerance_deg: f64,
    /// No plan before this time, so the start-up transient does not bias
    /// the direction estimate [s].
    pub settle_time: f64,
    pub azimuth: Azimuth,
    /// Hard stop for closed-loop runs [s].
    pub max_duration: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            omega_l_rpm: 3.0,
            omega_h_rpm: 20.0,
            delta_l: 1e-8,
            k: 10,
            dt: 0.5,
            straight_tolerance_deg: 5.0,
            settle_time: 20.0,
            azimuth: Azimuth::Full,
            max_duration: 2000.0,
        }
    }
}

impl ControlConfig {
    pub fn window(&self) -> FitWindow {
        FitWindow {
            k: self.k,
            dt: self.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.window().validate()?;
        if !(self.omega_l_rpm > 0.0 && self.omega_h_rpm > self.omega_l_rpm) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < omega_l_rpm < omega_h_rpm, got {} and {}",
                self.omega_l_rpm, self.omega_h_rpm
            )));
        }
        if !(self.delta_l > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_l must be positive, got {}",
                self.delta_l
            )));
        }
        if !(0.0..180.0).contains(&self.straight_tolerance_deg) {
            return Err(Error::InvalidParameter(format!(
                "straight_tolerance_deg must lie in [0, 180), got {}",
                self.straight_tolerance_deg
            )));
        }
        if !(self.settle_time >= 0.0) {
            return Err(Error::InvalidParameter(
                "settle_time must be non-negative".into(),
            ));
        }
        if !(self.max_duration > 0.0) {
            return Err(Error::InvalidParameter(
                "max_duration must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Observation handed to the controller at one decision instant.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ControlInput {
    pub t: f64,
    /// `x_0(t − j δt)` for `j = 0..=k`, newest first. Missing entries are
    /// `None`.
    pub head_history: Vec<Option<Vec3>>,
    pub x1: Option<Vec3>,
    pub x2: Option<Vec3>,
    /// Newly received waypoints, absent when nothing arrived.
    pub p1: Option<Vec3>,
    pub p2: Option<Vec3>,
    /// `p1` is the last waypoint; it is approached without a turn.
    pub final_leg: bool,
    /// Rate currently applied [rad/s].
    pub omega: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Approach,
    Pulse,
    Cruise,
}

/// Three-phase timing of one maneuver [s].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    pub t_app: f64,
    pub t_h: f64,
    pub t_l: f64,
    pub omega_l: f64,
    pub omega_h: f64,
}

impl ControlSchedule {
    /// Per-interval rates for a schedule starting now.
    fn expand(&self, dt: f64) -> Vec<(f64, Phase)> {
        let end = self.t_app + self.t_h + self.t_l;
        let mut out = Vec::new();
        let mut j = 0usize;
        loop {
            let s = j as f64 * dt;
            if s >= end - 1e-9 * dt {
                break;
            }
            out.push(if s < self.t_app - 1e-9 * dt {
                (self.omega_l, Phase::Approach)
            } else if s < self.t_app + self.t_h - 1e-9 * dt {
                (self.omega_h, Phase::Pulse)
            } else {
                (self.omega_l, Phase::Cruise)
            });
            j += 1;
        }
        out
    }
}

/// One planning attempt, written as a JSON line.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub t: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linearity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta_d: Option<f64>,
    #[serde(rename = "t_H", skip_serializing_if = "Option::is_none")]
    pub t_h: Option<f64>,
    #[serde(rename = "t_L", skip_serializing_if = "Option::is_none")]
    pub t_l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_app: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<String>,
}

/// Rate for the coming interval plus the log entry, if a plan was tried.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub omega: f64,
    pub phase: Option<Phase>,
    pub record: Option<DecisionRecord>,
}

/// Algorithm state: stored waypoints and the future rate sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub config: ControlConfig,
    pending_p1: Option<Vec3>,
    pending_p2: Option<Vec3>,
    pending_final: bool,
    schedule: VecDeque<(f64, Phase)>,
    started: bool,
}

impl Controller {
    pub fn new(config: ControlConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            pending_p1: None,
            pending_p2: None,
            pending_final: false,
            schedule: VecDeque::new(),
            started: false,
        })
    }

    pub fn has_pending(&self) -> bool {
        self.pending_p1.is_some() || self.pending_p2.is_some()
    }

    /// Remaining scheduled intervals.
    pub fn scheduled(&self) -> usize {
        self.schedule.len()
    }

    /// Consumes one observation and returns the rate for `[t, t + δt)`.
    pub fn step(&mut self, input: &ControlInput, maps: &InverseMaps) -> ControlOutput {
        let c = self.config;
        let w_l = rpm_to_rad_s(c.omega_l_rpm);
        if !self.started {
            self.started = true;
            self.schedule = (0..c.k).map(|_| (w_l, Phase::Warmup)).collect();
        }
        if let Some(p) = input.p1 {
            self.pending_p1 = Some(p);
            self.pending_p2 = input.p2;
            self.pending_final = input.final_leg;
        } else if let Some(p) = input.p2 {
            self.pending_p2 = Some(p);
        }

        let mut record = None;
        if input.t < c.settle_time - 1e-9 {
            return self.emit(w_l, record);
        }
        let free = self
            .schedule
            .front()
            .is_none_or(|(_, ph)| matches!(ph, Phase::Warmup | Phase::Cruise));
        if self.pending_p1.is_some() && free {
            let mut r = DecisionRecord {
                t: input.t,
                ..Default::default()
            };
            match self.plan(input, maps, &mut r) {
                Ok(Some(s)) => {
                    debug!("t = {:.1} s: new schedule {s:?}", input.t);
                    self.schedule = s.expand(c.dt).into();
                    self.pending_p1 = None;
                    self.pending_p2 = None;
                    self.pending_final = false;
                }
                Ok(None) => {}
                Err(e) => r.rejections.push(e.to_string()),
            }
            record = Some(r);
        }

        self.emit(w_l, record)
    }

    fn emit(&mut self, w_l: f64, record: Option<DecisionRecord>) -> ControlOutput {
        match self.schedule.pop_front() {
            Some((w, ph)) => ControlOutput {
                omega: w,
                phase: Some(ph),
                record,
            },
            // Keep swimming while stored waypoints wait for a straight
            // stretch; stop once nothing is left.
            None if self.has_pending() => ControlOutput {
                omega: w_l,
                phase: None,
                record,
            },
            None => ControlOutput {
                omega: 0.0,
                phase: None,
                record,
            },
        }
    }

    /// Returns `Ok(None)` when a required input is missing or the head is
    /// still turning.
    fn plan(
        &self,
        input: &ControlInput,
        maps: &InverseMaps,
        r: &mut DecisionRecord,
    ) -> Result<Option<ControlSchedule>> {
        let c = &self.config;
        let history: Option<Vec<Vec3>> = input.head_history.iter().copied().collect();
        let (history, x1, x2, p1) = match (history, input.x1, input.x2, self.pending_p1) {
            (Some(h), Some(x1), Some(x2), Some(p1))
                if h.len() == c.k + 1 && input.t > c.k as f64 * c.dt - 1e-9 =>
            {
                (h, x1, x2, p1)
            }
            _ => {
                r.rejections.push("incomplete input".into());
                return Ok(None);
            }
        };
        let p2 = match (self.pending_p2, self.pending_final) {
            (Some(p2), _) => Some(p2),
            (None, true) => None,
            (None, false) => {
                r.rejections.push("incomplete input".into());
                return Ok(None);
            }
        };

        let mut attempt = |rot: &nalgebra::Rotation3<f64>| -> Result<(f64, Option<ControlSchedule>, Option<DesiredManeuver>)> {
            let rot_all: Vec<Vec3> = history.iter().map(|p| rot * p).collect();
            let a = fit_line(&rot_all)?;
            if a.residual > c.delta_l {
                return Ok((a.residual, None, None));
            }
            let x0 = rot_all[0];
            let (x1, x2, p1) = (rot * x1, rot * x2, rot * p1);
            let v = direction_vector(&a, &x0, &x1)?;
            let Some(p2) = p2.map(|p| rot * p) else {
                let l_d = (p1 - x0).dot(&v);
                return Ok((a.residual, Some(self.cruise(l_d.max(0.0), maps)), None));
            };
            let p1_hat = match project_p1(&v, &x0, &p1, &p2) {
                Ok(p) => p,
                // Collinear with the direction of motion: any plane through
                // v holds p2, so use the closest point on the line.
                Err(Error::DegeneratePlane) => x0 + v * (p1 - x0).dot(&v),
                Err(e) => return Err(e),
            };
            let frame = body_frame(&v, &x1, &x2)?;
            let m = desired_parameters(&x0, &p1_hat, &p2, &frame, c.azimuth)?;
            if m.alpha_d < c.straight_tolerance_deg {
                let reach = m.l_d + m.h_d * m.alpha_d.to_radians().cos();
                return Ok((a.residual, Some(self.cruise(reach.max(0.0), maps)), Some(m)));
            }
            Ok((a.residual, Some(self.maneuver(&m, maps, r)?), Some(m)))
        };
        let result = match attempt(&nalgebra::Rotation3::identity()) {
            Err(Error::DegenerateOrientation) => attempt(&aligning_rotation(&history)?),
            other => other,
        };
        let (linearity, schedule, m) = result?;
        r.linearity = Some(linearity);
        if let Some(m) = m {
            r.h_d = Some(m.h_d);
            r.l_d = Some(m.l_d);
            r.alpha_d = Some(m.alpha_d);
            r.beta_d = Some(m.beta_d);
        }
        if schedule.is_none() {
            r.rejections.push(format!(
                "turning: linearity {linearity:.3e} > {:.3e}",
                c.delta_l
            ));
        }
        if let Some(s) = &schedule {
            r.t_h = Some(s.t_h);
            r.t_l = Some(s.t_l);
            r.t_app.get_or_insert(s.t_app);
        }
        Ok(schedule)
    }

    /// Pure `ω_L` run covering `distance`.
    fn cruise(&self, distance: f64, maps: &InverseMaps) -> ControlSchedule {
        ControlSchedule {
            t_app: 0.0,
            t_h: 0.0,
            t_l: distance / maps.calibration.v_omega_l,
            omega_l: rpm_to_rad_s(self.config.omega_l_rpm),
            omega_h: rpm_to_rad_s(self.config.omega_h_rpm),
        }
    }

    fn maneuver(
        &self,
        m: &DesiredManeuver,
        maps: &InverseMaps,
        r: &mut DecisionRecord,
    ) -> Result<ControlSchedule> {
        let cal = maps.calibration;
        if !(cal.body_rate_rpm > 0.0 && cal.v_omega_l > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "calibration must have positive body rate and speed, got {cal:?}"
            )));
        }
        let (t_h, t_l) = maps.durations(m.h_d, m.alpha_d);
        let (t_h, t_l) = (t_h.max(0.0), t_l.max(self.config.dt));
        let (beta, l) = maps.realized(t_h, t_l);
        let t_app = compute_t_app(m.beta_d, beta, m.l_d, l, cal.body_rate_rpm, cal.v_omega_l);
        r.beta = Some(beta);
        r.l = Some(l);
        r.t_app = Some(t_app);
        Ok(ControlSchedule {
            t_app,
            t_h,
            t_l,
            omega_l: rpm_to_rad_s(self.config.omega_l_rpm),
            omega_h: rpm_to_rad_s(self.config.omega_h_rpm),
        })
    }
}

/// Ordered waypoints with a cursor that only moves forward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointQueue {
    pub points: Vec<Vec3>,
    pub cursor: usize,
}

impl WaypointQueue {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 waypoints, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidInput("non-finite waypoint".into()));
        }
        Ok(Self { points, cursor: 0 })
    }

    /// Advances past every waypoint the head has crossed and returns the
    /// indices newly passed.
    pub fn update(&mut self, head: &Vec3) -> Vec<usize> {
        let mut passed = Vec::new();
        while self.cursor + 1 < self.points.len() {
            let (a, b) = (self.points[self.cursor], self.points[self.cursor + 1]);
            let ab = b - a;
            if ab.norm_squared() > 0.0 && (head - a).dot(&ab) < ab.norm_squared() {
                break;
            }
            self.cursor += 1;
            passed.push(self.cursor);
        }
        passed
    }

    /// The turn point and target after the current segment, if any.
    pub fn pair(&self) -> Option<(Vec3, Option<Vec3>)> {
        let p1 = *self.points.get(self.cursor + 1)?;
        Some((p1, self.points.get(self.cursor + 2).copied()))
    }
}

/// Crossing of a waypoint by the head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassEvent {
    pub index: usize,
    pub t: f64,
    /// Head distance from the waypoint at the crossing [m].
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopRun {
    pub trajectory: HeadTrajectory,
    pub log: Vec<DecisionRecord>,
    pub passes: Vec<PassEvent>,
    /// `(t, distance to the waypoint polyline)`.
    pub tracking_error: Vec<(f64, f64)>,
    /// `(t, phase)` whenever the phase changes.
    pub phases: Vec<(f64, Option<Phase>)>,
    pub timed_out: bool,
}

impl ClosedLoopRun {
    /// Closest approach to waypoint `i` over the whole run [m].
    pub fn closest_approach(&self, p: &Vec3) -> f64 {
        self.trajectory
            .samples
            .iter()
            .map(|s| (s.x0 - p).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Maximal runs of equal rate as `(start, end, ω)`.
    pub fn rate_intervals(&self) -> Vec<(f64, f64, f64)> {
        let s = &self.trajectory.samples;
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        for w in s.windows(2) {
            match out.last_mut() {
                Some(last) if last.2 == w[0].omega => last.1 = w[1].t,
                _ => out.push((w[0].t, w[1].t, w[0].omega)),
            }
        }
        out
    }
}

/// Run that stopped on an error, with everything recorded up to it.
#[derive(Debug)]
pub struct Interrupted {
    pub run: ClosedLoopRun,
    pub error: Error,
}

impl std::fmt::Display for Interrupted {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "closed loop stopped at t = {:.1} s: {}",
            self.run.trajectory.samples.last().map_or(0.0, |s| s.t),
            self.error
        )
    }
}

impl std::error::Error for Interrupted {}

/// Couples the simulator and the controller on a common clock of `δt`.
pub fn run_closed_loop(
    sim: &Simulator,
    maps: &InverseMaps,
    mut queue: WaypointQueue,
    config: ControlConfig,
) -> std::result::Result<ClosedLoopRun, Interrupted> {
    let mut run = ClosedLoopRun::default();
    macro_rules! tri {
        ($e:expr) => {
            match $e {
                Ok(v) => v,
                Err(error) => return Err(Interrupted { run, error }),
            }
        };
    }
    let mut ctl = tri!(Controller::new(config));
    let per_obs = tri!(sim.steps_per_observation(config.dt));
    let mut state = tri!(sim.initial_state());
    let path = queue.points.clone();
    let mut history: VecDeque<Vec3> = VecDeque::with_capacity(config.k + 1);
    let mut last_pair = None;
    let mut last_phase = Some(Phase::Warmup);
    run.phases.push((0.0, last_phase));
    loop {
        let t = state.time;
        let head = state.position(0);
        history.push_front(head);
        history.truncate(config.k + 1);
        for index in queue.update(&head) {
            run.passes.push(PassEvent {
                index,
                t,
                distance: (head - path[index]).norm(),
            });
        }
        run.tracking_error
            .push((t, polyline_distance(&head, &path)));

        let pair = queue.pair();
        let fresh = pair.filter(|_| last_pair != Some(queue.cursor));
        if fresh.is_some() {
            last_pair = Some(queue.cursor);
        }
        let mut head_history: Vec<Option<Vec3>> = history.iter().copied().map(Some).collect();
        head_history.resize(config.k + 1, None);
        let input = ControlInput {
            t,
            head_history,
            x1: Some(state.position(1)),
            x2: Some(state.position(2)),
            p1: fresh.map(|p| p.0),
            p2: fresh.and_then(|p| p.1),
            final_leg: fresh.is_some_and(|p| p.1.is_none()),
            omega: run.trajectory.samples.last().map_or(0.0, |s| s.omega),
        };
        let out = ctl.step(&input, maps);
        if let Some(rec) = out.record {
            run.log.push(rec);
        }
        if out.phase != last_phase {
            run.phases.push((t, out.phase));
            last_phase = out.phase;
        }
        run.trajectory
            .samples
            .push(TrajectorySample::of(&state, out.omega));
        if out.omega == 0.0 {
            break;
        }
        if t + config.dt > config.max_duration + 1e-9 {
            warn!(
                "closed loop reached max_duration = {} s",
                config.max_duration
            );
            run.timed_out = true;
            break;
        }
        state = tri!(sim.advance(&state, out.omega, per_obs));
    }
    Ok(run)
}

/// Tracking-error summary of a trajectory against a waypoint polyline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub max: f64,
    pub median: f64,
    pub mean: f64,
    pub steering_windows: Vec<WindowError>,
}

/// Largest error inside one `ω_H` interval [m].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowError {
    pub start: f64,
    pub end: f64,
    pub max: f64,
}

/// Summarizes the distance of every sample from the path. A sample belongs
/// to a steering window while its rate exceeds `omega_split`.
pub fn tracking_summary(
    samples: &[TrajectorySample],
    path: &[Vec3],
    omega_split: f64,
) -> Result<TrackingSummary> {
    if samples.is_empty() {
        return Err(Error::InsufficientSamples("empty trajectory".into()));
    }
    if path.len() < 2 {
        return Err(Error::InvalidInput(
            "path needs at least 2 waypoints".into(),
        ));
    }
    let errs: Vec<f64> = samples
        .iter()
        .map(|s| polyline_distance(&s.x0, path))
        .collect();
    let mut sorted = errs.clone();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    let mut windows: Vec<WindowError> = Vec::new();
    let mut open = false;
    for (s, e) in samples.iter().zip(&errs) {
        if s.omega > omega_split {
            if !open {
                windows.push(WindowError {
                    start: s.t,
                    end: s.t,
                    max: *e,
                });
                open = true;
            }
            let w = windows.last_mut().expect("window opened above");
            w.end = s.t;
            w.max = w.max.max(*e);
        } else {
            open = false;
        }
    }
    Ok(TrackingSummary {
        max: sorted[n - 1],
        median,
        mean: errs.iter().sum::<f64>() / n as f64,
        steering_windows: windows,
    })
}
