//! Closed-form trajectory geometry: line fits to head positions, the body
//! frame, the desired maneuver for a pair of waypoints, and the reduction of
//! a simulated steering run to one training datapoint.

use crate::error::{Error, Result};
use crate::stepper::TrajectorySample;
use crate::Vec3;
use nalgebra::Rotation3;
use serde::{Deserialize, Serialize};

/// Relative size of the x-spread below which the `y(x)`, `z(x)` form fails.
const DEGENERATE_SPREAD: f64 = 1e-12;
/// Relative tolerance for cross products treated as zero.
const PARALLEL_TOL: f64 = 1e-12;

/// Line `y = a1 x + a2`, `z = a3 x + a4` and its least-squares residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    /// Sum of squared y and z residuals [m²].
    pub residual: f64,
}

impl LineFit {
    /// Unnormalized direction `[1, a1, a3]`.
    pub fn slope(&self) -> Vec3 {
        Vec3::new(1.0, self.a1, self.a3)
    }

    /// Point of the line at abscissa `x`.
    pub fn at(&self, x: f64) -> Vec3 {
        Vec3::new(x, self.a1 * x + self.a2, self.a3 * x + self.a4)
    }

    /// Orthogonal projection of `p` onto the line.
    pub fn project(&self, p: &Vec3) -> Vec3 {
        let x = (p.x + self.a1 * (p.y - self.a2) + self.a3 * (p.z - self.a4))
            / (1.0 + self.a1 * self.a1 + self.a3 * self.a3);
        self.at(x)
    }
}

/// Least-squares line through `points` in the `y(x)`, `z(x)` form.
///
/// Fails with [`Error::DegenerateOrientation`] when the points have no
/// spread along x; [`aligning_rotation`] gives a frame in which the fit is
/// well posed.
pub fn fit_line(points: &[Vec3]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "line fit needs at least 2 points, got {}",
            points.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let (mut sxx, mut sxy, mut sxz, mut spread) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        sxz += d.x * d.z;
        spread += d.norm_squared();
    }
    if !(sxx > DEGENERATE_SPREAD * spread) {
        return Err(Error::DegenerateOrientation);
    }
    let a1 = sxy / sxx;
    let a3 = sxz / sxx;
    let a2 = mean.y - a1 * mean.x;
    let a4 = mean.z - a3 * mean.x;
    let residual = points
        .iter()
        .map(|p| (p.y - a1 * p.x - a2).powi(2) + (p.z - a3 * p.x - a4).powi(2))
        .sum();
    Ok(LineFit {
        a1,
        a2,
        a3,
        a4,
        residual,
    })
}

/// Rotation taking the dominant displacement direction of `points` onto +x.
/// Geometry computed in the rotated frame is rotated back with the inverse.
pub fn aligning_rotation(points: &[Vec3]) -> Result<Rotation3<f64>> {
    let (first, last) = match (points.first(), points.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::InsufficientSamples("no points to align".into())),
    };
    let mut d = first - last;
    if d.norm() == 0.0 {
        let mean = points.iter().sum::<Vec3>() / points.len() as f64;
        d = points
            .iter()
            .map(|p| p - mean)
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .unwrap_or(d);
    }
    if d.norm() == 0.0 {
        return Err(Error::DegenerateOrientation);
    }
    // rotation_between fails only for the antiparallel case.
    Ok(Rotation3::rotation_between(&d, &Vec3::x())
        .unwrap_or_else(|| Rotation3::from_axis_angle(&Vec3::z_axis(), std::f64::consts::PI)))
}

/// Direction of motion: the fitted line direction oriented from `x1`
/// towards the head `x0`.
pub fn direction_vector(fit: &LineFit, x0: &Vec3, x1: &Vec3) -> Result<Vec3> {
    let s = fit.slope();
    let d = x0 - x1;
    let dot = d.dot(&s);
    if dot == 0.0 || dot.abs() <= PARALLEL_TOL * d.norm() * s.norm() {
        return Err(Error::AmbiguousDirection);
    }
    Ok(dot.signum() * s / s.norm())
}

/// Orthonormal body frame: direction of motion `v`, `n` normal to the plane
/// of `v` and the flagellum segment `x1 - x2`, and `w = v × n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyFrame {
    pub v: Vec3,
    pub n: Vec3,
    pub w: Vec3,
}

pub fn body_frame(v: &Vec3, x1: &Vec3, x2: &Vec3) -> Result<BodyFrame> {
    let seg = x1 - x2;
    let c = v.cross(&seg);
    if c.norm() <= PARALLEL_TOL * v.norm() * seg.norm() || c.norm() == 0.0 {
        return Err(Error::DegenerateFrame);
    }
    let n = c / c.norm();
    let vn = v.cross(&n);
    Ok(BodyFrame {
        v: *v,
        n,
        w: vn / vn.norm(),
    })
}

/// Projects `p1` onto the plane through `x0` spanned by `v` and `p2 - x0`.
pub fn project_p1(v: &Vec3, x0: &Vec3, p1: &Vec3, p2: &Vec3) -> Result<Vec3> {
    let d = p2 - x0;
    let normal = v.cross(&d);
    let nn = normal.norm_squared();
    if nn == 0.0 || normal.norm() <= PARALLEL_TOL * v.norm() * d.norm() {
        return Err(Error::DegeneratePlane);
    }
    Ok(p1 + normal * (normal.dot(&(x0 - p1)) / nn))
}

/// Shape of a two-segment maneuver: turn point at signed distance `l` ahead
/// of the head, then a leg of length `h` at polar angle `alpha` from the
/// direction of motion and azimuth `beta` about it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesiredManeuver {
    /// Leg length [m].
    pub h_d: f64,
    /// Signed distance to the turn point [m].
    pub l_d: f64,
    /// Polar angle [deg].
    pub alpha_d: f64,
    /// Azimuth [deg].
    pub beta_d: f64,
}

/// Convention for the azimuth `beta` of the turn plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Azimuth {
    /// Single-argument arctangent, `(-90, 90)`. A turn and its mirror image
    /// through `v` share the same value.
    #[default]
    Printed,
    /// Two-argument arctangent, `(-180, 180]`.
    Full,
}

/// Leg length, signed approach distance and the two turn angles in degrees.
fn maneuver_shape(
    from: &Vec3,
    turn: &Vec3,
    to: &Vec3,
    frame: &BodyFrame,
    azimuth: Azimuth,
) -> (f64, f64, f64, f64) {
    let leg = to - turn;
    let h = leg.norm();
    let approach = turn - from;
    let l = sgn(approach.dot(&frame.v)) * approach.norm();
    let alpha = (leg.dot(&frame.v) / h).clamp(-1.0, 1.0).acos().to_degrees();
    let vn = frame.v.cross(&frame.n);
    let num = leg.dot(&vn);
    let den = leg.dot(&frame.n) * vn.norm();
    let beta = match azimuth {
        Azimuth::Printed if num == 0.0 => 0.0,
        Azimuth::Printed => (num / den).atan().to_degrees(),
        Azimuth::Full => num.atan2(den).to_degrees(),
    };
    (h, l, alpha, beta)
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Maneuver taking the head at `x0` through the projected turn point `p1_hat`
/// to `p2`.
pub fn desired_parameters(
    x0: &Vec3,
    p1_hat: &Vec3,
    p2: &Vec3,
    frame: &BodyFrame,
    azimuth: Azimuth,
) -> Result<DesiredManeuver> {
    if (p2 - p1_hat).norm() == 0.0 {
        return Err(Error::InvalidInput(
            "p2 coincides with the turn point".into(),
        ));
    }
    let (h_d, l_d, alpha_d, beta_d) = maneuver_shape(x0, p1_hat, p2, frame, azimuth);
    Ok(DesiredManeuver {
        h_d,
        l_d,
        alpha_d,
        beta_d,
    })
}

/// One row of the steering dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringDatapoint {
    #[serde(rename = "t_H")]
    pub t_h: f64,
    #[serde(rename = "t_L")]
    pub t_l: f64,
    pub h: f64,
    pub alpha: f64,
    pub beta: f64,
    pub l: f64,
}

impl SteeringDatapoint {
    pub fn is_valid(&self) -> bool {
        self.t_h >= 0.0
            && self.t_l > 0.0
            && self.h > 0.0
            && (0.0..=180.0).contains(&self.alpha)
            && self.beta > -180.0
            && self.beta <= 180.0
            && self.l.is_finite()
    }
}

/// Observation window used by the line fits: `k + 1` samples spaced `dt`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitWindow {
    pub k: usize,
    /// Observation interval [s].
    pub dt: f64,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { k: 10, dt: 0.5 }
    }
}

impl FitWindow {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 || !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "fit window needs k >= 1 and dt > 0, got k = {}, dt = {}",
                self.k, self.dt
            )));
        }
        Ok(())
    }

    /// Duration spanned by the window.
    pub fn span(&self) -> f64 {
        self.k as f64 * self.dt
    }
}

/// After-turn line constrained to pass through the end point and to meet
/// the before-turn line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstrainedLine {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    /// Reciprocal offset `1 / (x* - x_e)` of the intersection abscissa `x*`.
    pub tau: f64,
    /// Abscissa of the end point.
    pub x_end: f64,
}

impl ConstrainedLine {
    fn objective(b: [f64; 4], samples: &[Vec3]) -> f64 {
        samples
            .iter()
            .map(|p| (p.y - b[0] * p.x - b[1]).powi(2) + (p.z - b[2] * p.x - b[3]).powi(2))
            .sum()
    }

    /// Member of the one-parameter family of admissible lines.
    pub fn from_tau(a: &LineFit, end: &Vec3, tau: f64) -> Self {
        let (ey, ez) = end_offsets(a, end);
        let b1 = a.a1 + ey * tau;
        let b3 = a.a3 + ez * tau;
        Self {
            b1,
            b2: end.y - b1 * end.x,
            b3,
            b4: end.z - b3 * end.x,
            tau,
            x_end: end.x,
        }
    }

    /// Sum of squared residuals of `samples` about this line.
    pub fn cost(&self, samples: &[Vec3]) -> f64 {
        Self::objective([self.b1, self.b2, self.b3, self.b4], samples)
    }

    /// Intersection with the before-turn line.
    pub fn intersection(&self, a: &LineFit) -> Vec3 {
        let x = (self.b2 - a.a2) / (a.a1 - self.b1);
        let y = (a.a1 * self.b2 - self.b1 * a.a2) / (a.a1 - self.b1);
        let z = (a.a3 * self.b4 - self.b3 * a.a4) / (a.a3 - self.b3);
        let p = Vec3::new(x, y, z);
        if p.iter().all(|c| c.is_finite()) {
            p
        } else {
            // One of the printed quotients is 0/0 when a slope is unchanged.
            a.at(self.x_end + 1.0 / self.tau)
        }
    }
}

fn end_offsets(a: &LineFit, end: &Vec3) -> (f64, f64) {
    (a.a1 * end.x + a.a2 - end.y, a.a3 * end.x + a.a4 - end.z)
}

/// Best line through `end` that is coplanar with `a`, fitted to `samples`.
pub fn fit_constrained_line(a: &LineFit, end: &Vec3, samples: &[Vec3]) -> Result<ConstrainedLine> {
    let (ey, ez) = end_offsets(a, end);
    let e2 = ey * ey + ez * ez;
    let scale = 1.0 + end.norm_squared();
    if e2 <= PARALLEL_TOL * PARALLEL_TOL * scale {
        return Err(Error::DegeneratePlane);
    }
    let (mut num, mut sxx) = (0.0, 0.0);
    for p in samples {
        let d = p - end;
        num += d.x * ((d.y - a.a1 * d.x) * ey + (d.z - a.a3 * d.x) * ez);
        sxx += d.x * d.x;
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateOrientation);
    }
    Ok(ConstrainedLine::from_tau(a, end, num / (e2 * sxx)))
}

/// Index of time `t` in uniformly spaced `samples`.
fn index_of(samples: &[TrajectorySample], dt: f64, t: f64) -> Result<usize> {
    let t_start = samples
        .first()
        .ok_or_else(|| Error::InsufficientSamples("empty trajectory".into()))?
        .t;
    let i = ((t - t_start) / dt).round();
    if i < 0.0 || i as usize >= samples.len() {
        return Err(Error::InsufficientSamples(format!(
            "time {t} s outside the recorded trajectory [{t_start}, {}] s",
            samples.last().map_or(t_start, |s| s.t)
        )));
    }
    Ok(i as usize)
}

/// Reduces a steering run to `(t_H, t_L, h, alpha, beta, l)`.
///
/// `samples` must be uniformly spaced by `window.dt`. The pulse starts at
/// `t0`; the run ends at `t0 + t_h + t_l`. Turns below `min_turn_deg` are
/// rejected as [`Error::NoTurn`].
pub fn parameterize_segment(
    samples: &[TrajectorySample],
    t0: f64,
    t_h: f64,
    t_l: f64,
    window: &FitWindow,
    min_turn_deg: f64,
    azimuth: Azimuth,
) -> Result<SteeringDatapoint> {
    window.validate()?;
    let i0 = index_of(samples, window.dt, t0)?;
    let ie = index_of(samples, window.dt, t0 + t_h + t_l)?;
    if i0 < window.k {
        return Err(Error::InsufficientSamples(format!(
            "need {} samples before the pulse, have {i0}",
            window.k
        )));
    }
    // The after-turn fit starts once the lag window has cleared the pulse.
    let m = ((t_l - window.span()) / window.dt).round();
    if m < 2.0 || (m as usize) > ie {
        return Err(Error::InsufficientSamples(format!(
            "after-turn fit needs at least 2 samples, have {m}"
        )));
    }
    let m = m as usize;
    let before: Vec<Vec3> = (0..=window.k).map(|j| samples[i0 - j].x0).collect();
    let after: Vec<Vec3> = (1..=m).map(|j| samples[ie - j].x0).collect();
    let start = &samples[i0];
    let end = samples[ie].x0;

    let attempt = |r: &Rotation3<f64>| -> Result<SteeringDatapoint> {
        let rot = |v: &Vec3| r * v;
        let before: Vec<Vec3> = before.iter().map(rot).collect();
        let after: Vec<Vec3> = after.iter().map(rot).collect();
        let (x0, x1, x2, end) = (rot(&start.x0), rot(&start.x1), rot(&start.x2), rot(&end));
        let a = fit_line(&before)?;
        let v = direction_vector(&a, &x0, &x1)?;
        let frame = body_frame(&v, &x1, &x2)?;
        let b = fit_constrained_line(&a, &end, &after)?;
        let turn = Vec3::new(1.0, b.b1, b.b3)
            .normalize()
            .dot(&a.slope().normalize())
            .clamp(-1.0, 1.0)
            .acos()
            .to_degrees();
        if b.tau == 0.0 || turn < min_turn_deg {
            return Err(Error::NoTurn);
        }
        let p1 = b.intersection(&a);
        let x0_hat = a.project(&x0);
        let (h, l, alpha, beta) = maneuver_shape(&x0_hat, &p1, &end, &frame, azimuth);
        Ok(SteeringDatapoint {
            t_h,
            t_l,
            h,
            alpha,
            beta,
            l,
        })
    };
    match attempt(&Rotation3::identity()) {
        Err(Error::DegenerateOrientation) => attempt(&aligning_rotation(&before)?),
        other => other,
    }
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let s = if len2 == 0.0 {
        0.0
    } else {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    };
    (p - (a + s * ab)).norm()
}

/// Minimum distance from `p` to the polyline through `path`.
pub fn polyline_distance(p: &Vec3, path: &[Vec3]) -> f64 {
    match path {
        [] => f64::INFINITY,
        [only] => (p - only).norm(),
        _ => path
            .windows(2)
            .map(|w| point_segment_distance(p, &w[0], &w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn normal_equations(points: &[Vec3]) -> [f64; 4] {
        let n = points.len();
        let mut a = DMatrix::zeros(n, 2);
        let mut y = DVector::zeros(n);
        let mut z = DVector::zeros(n);
        for (i, p) in points.iter().enumerate() {
            a[(i, 0)] = p.x;
            a[(i, 1)] = 1.0;
            y[i] = p.y;
            z[i] = p.z;
        }
        let ata = a.transpose() * &a;
        let chol = ata.cholesky().unwrap();
        let by = chol.solve(&(a.transpose() * y));
        let bz = chol.solve(&(a.transpose() * z));
        [by[0], by[1], bz[0], bz[1]]
    }

    #[test]
    fn exact_line_is_recovered() {
        let pts: Vec<Vec3> = (0..6)
            .map(|i| {
                let x = i as f64 * 0.3 - 0.4;
                Vec3::new(x, 2.0 * x + 1.0, -x + 3.0)
            })
            .collect();
        let f = fit_line(&pts).unwrap();
        for (u, v) in [f.a1, f.a2, f.a3, f.a4].iter().zip([2.0, 1.0, -1.0, 3.0]) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(f.residual < 1e-24);
    }

    #[test]
    fn two_points_interpolate() {
        let f = fit_line(&[Vec3::new(0.0, 1.0, 2.0), Vec3::new(1.0, 3.0, 1.0)]).unwrap();
        assert!((f.a1 - 2.0).abs() < 1e-14 && (f.a3 + 1.0).abs() < 1e-14);
        assert!(f.residual < 1e-28);
    }

    #[test]
    fn fit_matches_normal_equations_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let n = rng.gen_range(3..30);
            let dir = Vec3::new(1.0, rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let origin = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0);
            let pts: Vec<Vec3> = (0..n)
                .map(|i| {
                    origin
                        + dir * (i as f64 * 0.1)
                        + Vec3::new(
                            rng.gen_range(-0.02..0.02),
                            rng.gen_range(-0.02..0.02),
                            rng.gen_range(-0.02..0.02),
                        )
                })
                .collect();
            let f = fit_line(&pts).unwrap();
            let o = normal_equations(&pts);
            for (u, v) in [f.a1, f.a2, f.a3, f.a4].iter().zip(o) {
                assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn perpendicular_motion_is_degenerate() {
        let pts: Vec<Vec3> = (0..5).map(|i| Vec3::new(0.3, i as f64, 0.0)).collect();
        assert!(matches!(fit_line(&pts), Err(Error::DegenerateOrientation)));
        let r = aligning_rotation(&pts).unwrap();
        let rotated: Vec<Vec3> = pts.iter().map(|p| r * p).collect();
        let f = fit_line(&rotated).unwrap();
        assert!(f.residual < 1e-20);
    }

    #[test]
    fn direction_vector_examples() {
        let flat = LineFit {
            a1: 0.0,
            a2: 0.0,
            a3: 0.0,
            a4: 0.0,
            residual: 0.0,
        };
        let v = direction_vector(&flat, &Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros()).unwrap();
        assert!((v - Vec3::x()).norm() < 1e-15);
        let diag = LineFit { a1: 1.0, ..flat };
        let v = direction_vector(&diag, &Vec3::zeros(), &Vec3::new(1.0, 0.0, 0.0)).unwrap();
        let expect = -Vec3::new(1.0, 1.0, 0.0) / 2f64.sqrt();
        assert!((v - expect).norm() < 1e-15);
        assert!(matches!(
            direction_vector(&flat, &Vec3::y(), &Vec3::zeros()),
            Err(Error::AmbiguousDirection)
        ));
    }

    #[test]
    fn body_frame_examples() {
        let f = body_frame(&Vec3::x(), &Vec3::y(), &Vec3::zeros()).unwrap();
        assert!((f.n - Vec3::z()).norm() < 1e-15);
        assert!((f.w + Vec3::y()).norm() < 1e-15);
        let g = body_frame(&Vec3::x(), &(10.0 * Vec3::y()), &Vec3::zeros()).unwrap();
        assert!((f.n - g.n).norm() < 1e-15 && (f.w - g.w).norm() < 1e-15);
        assert!(matches!(
            body_frame(&Vec3::x(), &Vec3::x(), &Vec3::zeros()),
            Err(Error::DegenerateFrame)
        ));
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn body_frame_is_orthonormal(v in vec3(), x1 in vec3(), x2 in vec3()) {
            prop_assume!(v.norm() > 1e-3);
            let v = v.normalize();
            if let Ok(f) = body_frame(&v, &x1, &x2) {
                prop_assert!(f.v.dot(&f.n).abs() <= 1e-12);
                prop_assert!(f.v.dot(&f.w).abs() <= 1e-12);
                prop_assert!(f.n.dot(&f.w).abs() <= 1e-12);
                prop_assert!((f.w - f.v.cross(&f.n).normalize()).norm() <= 1e-12);
            }
        }

        #[test]
        fn projection_lies_on_plane_and_is_minimal(
            v in vec3(), x0 in vec3(), p1 in vec3(), p2 in vec3(), s in -3.0..3.0f64, t in -3.0..3.0f64,
        ) {
            prop_assume!(v.norm() > 1e-3 && v.cross(&(p2 - x0)).norm() > 1e-3);
            let v = v.normalize();
            let q = project_p1(&v, &x0, &p1, &p2).unwrap();
            let normal = v.cross(&(p2 - x0));
            prop_assert!(normal.dot(&(q - x0)).abs() <= 1e-12 * (p2 - x0).norm().max(1.0));
            prop_assert!((q - p1).cross(&normal).norm() <= 1e-12 * normal.norm().max(1.0));
            let on_plane = x0 + s * v + t * (p2 - x0);
            prop_assert!((q - p1).norm() <= (on_plane - p1).norm() + 1e-12);
        }

        #[test]
        fn maneuver_angles_in_range(x0 in vec3(), p1 in vec3(), p2 in vec3(), x2 in vec3()) {
            let v = Vec3::x();
            prop_assume!((p2 - p1).norm() > 1e-6);
            if let Ok(frame) = body_frame(&v, &x0, &x2) {
                let m = desired_parameters(&x0, &p1, &p2, &frame, Azimuth::Printed).unwrap();
                prop_assert!((0.0..=180.0).contains(&m.alpha_d));
                prop_assert!(m.beta_d >= -90.0 && m.beta_d <= 90.0);
                prop_assert!(m.h_d > 0.0);
                let full = desired_parameters(&x0, &p1, &p2, &frame, Azimuth::Full).unwrap();
                prop_assert!(full.beta_d > -180.0 && full.beta_d <= 180.0);
                let folded = (full.beta_d - m.beta_d) / 180.0;
                prop_assert!((folded - folded.round()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn full_azimuth_separates_mirrored_turns() {
        let frame = BodyFrame {
            v: Vec3::x(),
            n: Vec3::y(),
            w: Vec3::z(),
        };
        let (x0, p1) = (Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0));
        let leg = Vec3::new(0.05, 0.02, 0.01);
        let mirror = Vec3::new(0.05, -0.02, -0.01);
        let beta = |d: &Vec3, a| {
            desired_parameters(&x0, &p1, &(p1 + d), &frame, a)
                .unwrap()
                .beta_d
        };
        assert!((beta(&leg, Azimuth::Printed) - beta(&mirror, Azimuth::Printed)).abs() < 1e-12);
        let (a, b) = (beta(&leg, Azimuth::Full), beta(&mirror, Azimuth::Full));
        assert!((a - 0.5f64.atan().to_degrees()).abs() < 1e-12);
        assert!((a - b - 180.0).abs() < 1e-9);
        assert_eq!(beta(&Vec3::new(0.05, -0.02, 0.0), Azimuth::Full), 180.0);
    }

    #[test]
    fn projection_recovers_offset_point() {
        let (v, x0, p2) = (Vec3::x(), Vec3::zeros(), Vec3::new(1.0, 2.0, 0.0));
        let on = Vec3::new(0.4, -0.3, 0.0);
        assert!((project_p1(&v, &x0, &on, &p2).unwrap() - on).norm() < 1e-15);
        let normal = v.cross(&(p2 - x0)).normalize();
        let q = project_p1(&v, &x0, &(on + 0.05 * normal), &p2).unwrap();
        assert!((q - on).norm() < 1e-12);
        assert!(matches!(
            project_p1(&v, &x0, &on, &Vec3::new(2.0, 0.0, 0.0)),
            Err(Error::DegeneratePlane)
        ));
    }

    #[test]
    fn desired_parameter_examples() {
        let frame = body_frame(&Vec3::x(), &Vec3::y(), &Vec3::zeros()).unwrap();
        let x0 = Vec3::zeros();
        let p1 = Vec3::new(0.1, 0.0, 0.0);
        let ahead = desired_parameters(
            &x0,
            &p1,
            &Vec3::new(0.3, 0.0, 0.0),
            &frame,
            Azimuth::Printed,
        )
        .unwrap();
        assert!(ahead.alpha_d.abs() < 1e-12 && (ahead.h_d - 0.2).abs() < 1e-15);
        assert!((ahead.l_d - 0.1).abs() < 1e-15);
        let pure_n =
            desired_parameters(&x0, &p1, &(p1 + 0.2 * frame.n), &frame, Azimuth::Printed).unwrap();
        assert!(pure_n.beta_d.abs() < 1e-12 && (pure_n.alpha_d - 90.0).abs() < 1e-12);
        let behind = desired_parameters(
            &x0,
            &-p1,
            &Vec3::new(0.0, 0.1, 0.1),
            &frame,
            Azimuth::Printed,
        )
        .unwrap();
        assert!(behind.l_d < 0.0);
        let oblique = p1 + 0.1 * Vec3::x() + 0.1 * frame.n + 0.1 * frame.w;
        let m = desired_parameters(&x0, &p1, &oblique, &frame, Azimuth::Printed).unwrap();
        assert!((m.beta_d - 45.0).abs() < 1e-12);
        assert!((m.alpha_d - (1.0 / 3f64.sqrt()).acos().to_degrees()).abs() < 1e-12);
    }

    struct Synthetic {
        samples: Vec<TrajectorySample>,
        t0: f64,
        t_h: f64,
        t_l: f64,
        corner: Vec3,
        x0_start: Vec3,
        end: Vec3,
        frame: BodyFrame,
    }

    /// Head moving at `speed` along `u1`, cornering onto `u2` 2 s after `t0`.
    fn synthetic(u1: Vec3, u2: Vec3, speed: f64, window: &FitWindow) -> Synthetic {
        let (t0, t_h, t_l) = (10.0, 3.0, 20.0);
        let t_corner = t0 + 2.0;
        let start = Vec3::new(0.01, -0.02, 0.005);
        let (u1, u2) = (u1.normalize(), u2.normalize());
        let corner = start + u1 * speed * t_corner;
        let seg = Vec3::new(0.2, 0.7, -0.4);
        let count = ((t0 + t_h + t_l) / window.dt).round() as usize + 1;
        let samples: Vec<TrajectorySample> = (0..count)
            .map(|i| {
                let t = i as f64 * window.dt;
                let x0 = if t <= t_corner {
                    start + u1 * speed * t
                } else {
                    corner + u2 * speed * (t - t_corner)
                };
                TrajectorySample {
                    t,
                    x0,
                    x1: x0 - 0.01 * u1 + 0.001 * seg,
                    x2: x0 - 0.02 * u1 - 0.001 * seg,
                    omega: 0.0,
                }
            })
            .collect();
        let s0 = &samples[(t0 / window.dt) as usize];
        let frame = body_frame(&u1, &s0.x1, &s0.x2).unwrap();
        Synthetic {
            x0_start: s0.x0,
            end: samples.last().unwrap().x0,
            samples,
            t0,
            t_h,
            t_l,
            corner,
            frame,
        }
    }

    #[test]
    fn synthetic_corner_is_recovered() {
        let window = FitWindow { k: 6, dt: 0.5 };
        let cases = [
            (Vec3::new(1.0, 0.1, -0.05), Vec3::new(1.0, 0.6, 0.3)),
            (Vec3::new(1.0, -0.3, 0.2), Vec3::new(0.8, 0.4, -0.7)),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.2, 0.1, 1.0)),
        ];
        for (u1, u2) in cases {
            let s = synthetic(u1, u2, 2e-4, &window);
            let d = parameterize_segment(
                &s.samples,
                s.t0,
                s.t_h,
                s.t_l,
                &window,
                1.0,
                Azimuth::Printed,
            )
            .unwrap();
            let (h, l, alpha, beta) =
                maneuver_shape(&s.x0_start, &s.corner, &s.end, &s.frame, Azimuth::Printed);
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-12);
            assert!(rel(d.h, h) < 1e-6, "h {} vs {h}", d.h);
            assert!(rel(d.l, l) < 1e-6, "l {} vs {l}", d.l);
            assert!(rel(d.alpha, alpha) < 1e-6, "alpha {} vs {alpha}", d.alpha);
            assert!(rel(d.beta, beta) < 1e-6 || (d.beta - beta).abs() < 1e-9);
            assert!(d.is_valid());
        }
    }

    #[test]
    fn straight_run_is_rejected_as_no_turn() {
        let window = FitWindow::default();
        let u = Vec3::new(1.0, 0.2, 0.1);
        let s = synthetic(u, u, 2e-4, &window);
        let r = parameterize_segment(
            &s.samples,
            s.t0,
            s.t_h,
            s.t_l,
            &window,
            1.0,
            Azimuth::Printed,
        );
        assert!(
            matches!(r, Err(Error::NoTurn | Error::DegeneratePlane)),
            "{r:?}"
        );
    }

    #[test]
    fn turn_perpendicular_to_x_uses_rotated_frame() {
        let window = FitWindow::default();
        let s = synthetic(Vec3::y(), Vec3::new(0.3, 1.0, 0.5), 2e-4, &window);
        let d = parameterize_segment(
            &s.samples,
            s.t0,
            s.t_h,
            s.t_l,
            &window,
            1.0,
            Azimuth::Printed,
        )
        .unwrap();
        let (h, _, alpha, _) =
            maneuver_shape(&s.x0_start, &s.corner, &s.end, &s.frame, Azimuth::Printed);
        assert!((d.h - h).abs() < 1e-6 * h && (d.alpha - alpha).abs() < 1e-6 * alpha);
    }

    fn noisy_after_turn(rng: &mut ChaCha8Rng) -> (LineFit, Vec3, Vec<Vec3>) {
        let a = LineFit {
            a1: rng.gen_range(-0.5..0.5),
            a2: rng.gen_range(-0.1..0.1),
            a3: rng.gen_range(-0.5..0.5),
            a4: rng.gen_range(-0.1..0.1),
            residual: 0.0,
        };
        let p1 = a.at(rng.gen_range(0.0..0.1));
        let dir = Vec3::new(1.0, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let end = p1 + 0.2 * dir;
        let samples = (1..20)
            .map(|j| {
                p1 + dir * (0.01 * j as f64)
                    + Vec3::new(
                        rng.gen_range(-1e-3..1e-3),
                        rng.gen_range(-1e-3..1e-3),
                        rng.gen_range(-1e-3..1e-3),
                    )
            })
            .collect();
        (a, end, samples)
    }

    #[test]
    fn constrained_fit_satisfies_constraints() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (a, end, samples) = noisy_after_turn(&mut rng);
            let b = fit_constrained_line(&a, &end, &samples).unwrap();
            assert!((b.b1 * end.x + b.b2 - end.y).abs() < 1e-9);
            assert!((b.b3 * end.x + b.b4 - end.z).abs() < 1e-9);
            // The y- and z-equations give the same crossing abscissa.
            let xy = (b.b2 - a.a2) / (a.a1 - b.b1);
            let xz = (b.b4 - a.a4) / (a.a3 - b.b3);
            assert!((xy - xz).abs() < 1e-9 * (1.0 + xy.abs()));
        }
    }

    #[test]
    fn constrained_fit_is_optimal_by_golden_section() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..100 {
            let (a, end, samples) = noisy_after_turn(&mut rng);
            let b = fit_constrained_line(&a, &end, &samples).unwrap();
            let cost = |t: f64| ConstrainedLine::from_tau(&a, &end, t).cost(&samples);
            let (mut lo, mut hi) = (
                b.tau - 100.0 * (1.0 + b.tau.abs()),
                b.tau + 100.0 * (1.0 + b.tau.abs()),
            );
            let mut c = hi - phi * (hi - lo);
            let mut d = lo + phi * (hi - lo);
            for _ in 0..200 {
                if cost(c) < cost(d) {
                    hi = d;
                } else {
                    lo = c;
                }
                c = hi - phi * (hi - lo);
                d = lo + phi * (hi - lo);
            }
            let scan = 0.5 * (lo + hi);
            assert!(
                (scan - b.tau).abs() < 1e-6 * (1.0 + b.tau.abs()),
                "{scan} vs {}",
                b.tau
            );
        }
    }

    #[test]
    fn printed_b3_agrees_with_constrained_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (a, end, samples) = noisy_after_turn(&mut rng);
            let b = fit_constrained_line(&a, &end, &samples).unwrap();
            let printed = ((a.a1 - b.b1) * (end.z - a.a4) - a.a3 * (b.b2 - a.a2))
                / ((a.a1 - b.b1) * end.x - b.b2 + a.a2);
            assert!((printed - b.b3).abs() < 1e-8 * (1.0 + b.b3.abs()));
        }
    }

    #[test]
    fn roundtrip_through_desired_parameters() {
        let window = FitWindow { k: 6, dt: 0.5 };
        let s = synthetic(
            Vec3::new(1.0, 0.1, 0.2),
            Vec3::new(1.0, -0.5, 0.4),
            2e-4,
            &window,
        );
        let d = parameterize_segment(
            &s.samples,
            s.t0,
            s.t_h,
            s.t_l,
            &window,
            1.0,
            Azimuth::Printed,
        )
        .unwrap();
        let m =
            desired_parameters(&s.x0_start, &s.corner, &s.end, &s.frame, Azimuth::Printed).unwrap();
        assert!((m.h_d - d.h).abs() < 1e-9 && (m.l_d - d.l).abs() < 1e-9);
        assert!((m.alpha_d - d.alpha).abs() < 1e-6 && (m.beta_d - d.beta).abs() < 1e-6);
    }

    #[test]
    fn segment_requires_enough_history() {
        let window = FitWindow::default();
        let s = synthetic(Vec3::x(), Vec3::y(), 2e-4, &window);
        assert!(matches!(
            parameterize_segment(&s.samples, 2.0, 1.0, 1.0, &window, 1.0, Azimuth::Printed),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn segment_distance_cases() {
        let (a, b) = (Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0));
        assert!((point_segment_distance(&Vec3::new(0.5, 2.0, 0.0), &a, &b) - 2.0).abs() < 1e-15);
        assert!((point_segment_distance(&Vec3::new(-3.0, 4.0, 0.0), &a, &b) - 5.0).abs() < 1e-15);
        assert!(
            (point_segment_distance(&Vec3::new(1.0, 1.0, 1.0), &a, &a) - 3f64.sqrt()).abs() < 1e-15
        );
        let path = [a, b, Vec3::new(1.0, 1.0, 0.0)];
        assert!((polyline_distance(&Vec3::new(1.5, 0.5, 0.0), &path) - 0.5).abs() < 1e-15);
    }
}
