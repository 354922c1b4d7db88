//! Slender-body hydrodynamics of the flagellum and the flow and loads of the
//! spherical head.
//!
//! Forces `f_j` are the hydrodynamic forces *on* the flagellar nodes; the
//! flow they induce in the fluid is `−A f`.

use std::f64::consts::PI;

use faer::prelude::Solve;
use faer::{Mat, Side};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::{Error, Mat3, Result, Vec3};

/// Condition number above which the mobility solve is refused.
pub const MAX_MOBILITY_CONDITION: f64 = 1e14;

/// Flow field used for the fluid velocity induced by the moving head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadFlowModel {
    /// The tensor exactly as printed: rotational term `r × Ω`, and
    /// `(b²/3)(I/r³ − r⊗r/r⁵)` in the translational part.
    #[default]
    AsPrinted,
    /// Classical rigid sphere: `Ω × r`, and `(b²/3)(I/r³ − 3 r⊗r/r⁵)`, which
    /// satisfies no-slip on the sphere surface.
    Classical,
}

/// Self-interaction block of each flagellar node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalTerm {
    /// `(I − t⊗t)/(8πμδ)`: acts on the perpendicular force only. The
    /// tangential high-wavenumber modes of the resulting operator have
    /// negative or vanishing mobility, which the explicit coupling amplifies.
    Perpendicular,
    /// `(I + t⊗t)/(8πμδ)`: the perpendicular term plus a tangential term of
    /// Stokeslet form, i.e. an Oseen block evaluated at distance `δ` along the
    /// tangent. Keeps the operator positive definite.
    #[default]
    Stokeslet,
}

/// Fluid and head constants needed by the hydrodynamic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hydrodynamics {
    pub viscosity: f64,
    pub head_radius: f64,
    pub cutoff: f64,
    pub head_flow: HeadFlowModel,
    pub local_term: LocalTerm,
}

impl Hydrodynamics {
    pub fn new(
        params: &crate::PhysicalParameters,
        head_flow: HeadFlowModel,
        local_term: LocalTerm,
    ) -> Self {
        Self {
            viscosity: params.viscosity,
            head_radius: params.head_radius,
            cutoff: params.cutoff(),
            head_flow,
            local_term,
        }
    }

    /// Mobility of the flagellar nodes `positions[1..]`.
    pub fn mobility(&self, positions: &[Vec3]) -> Result<MobilityOperator> {
        MobilityOperator::assemble(
            &positions[1..],
            &node_tangents(positions),
            self.viscosity,
            self.cutoff,
            self.local_term,
        )
    }

    /// Fluid velocity induced at each `r_j` (relative to the head center) by a
    /// head moving with `U_h` and spinning with `Ω_h`.
    pub fn head_induced_flow(&self, rel: &[Vec3], u_h: &Vec3, omega_h: &Vec3) -> Result<Vec<Vec3>> {
        let b = self.head_radius;
        rel.iter()
            .enumerate()
            .map(|(j, r)| {
                let d = r.norm();
                if !(d > 0.0) {
                    return Err(Error::NodeAtHeadCenter { node: j + 1 });
                }
                let rr = r * r.transpose();
                let id = Mat3::identity();
                let (d3, d5) = (d.powi(3), d.powi(5));
                let (rot, dipole) = match self.head_flow {
                    HeadFlowModel::AsPrinted => (r.cross(omega_h), 1.0),
                    HeadFlowModel::Classical => (omega_h.cross(r), 3.0),
                };
                let tensor = (id / d + rr / d3) + (id / d3 - rr * (dipole / d5)) * (b * b / 3.0);
                Ok(rot * (b.powi(3) / d3) + tensor * u_h * (0.75 * b))
            })
            .collect()
    }

    /// Force and torque on the head: the flagellum-induced sums plus Stokes
    /// drag `−6πμbU_h` and drag torque `−8πμb³Ω_h`.
    pub fn head_force_torque(
        &self,
        forces: &[Vec3],
        rel: &[Vec3],
        u_h: &Vec3,
        omega_h: &Vec3,
    ) -> Result<(Vec3, Vec3)> {
        let (b, mu) = (self.head_radius, self.viscosity);
        let mut force = -u_h * (6.0 * PI * mu * b);
        let mut torque = -omega_h * (8.0 * PI * mu * b.powi(3));
        for (j, (f, r)) in forces.iter().zip(rel).enumerate() {
            let d = r.norm();
            if !(d > 0.0) {
                return Err(Error::NodeAtHeadCenter { node: j + 1 });
            }
            let (s, s3) = (b / d, (b / d).powi(3));
            force += f * (-1.5 * s + 0.5 * s3) + r * (f.dot(r) / (d * d) * (-0.75 * s + 0.75 * s3));
            torque -= r.cross(f) * s3;
        }
        Ok((force, torque))
    }

    /// Head angular velocity making the total hydrodynamic torque on the
    /// robot about the head center vanish: head drag torque, flagellum-induced
    /// head torque and the torques of the flagellar forces.
    pub fn torque_balance_head(&self, forces: &[Vec3], rel: &[Vec3]) -> Result<Vec3> {
        let (_, induced) = self.head_force_torque(forces, rel, &Vec3::zeros(), &Vec3::zeros())?;
        let arm: Vec3 = forces.iter().zip(rel).map(|(f, r)| r.cross(f)).sum();
        Ok((induced + arm) / (8.0 * PI * self.viscosity * self.head_radius.powi(3)))
    }
}

/// Per-node tangents of the flagellar nodes `x_1 … x_{N−1}`: the normalized
/// average of the adjacent edge tangents, or the single edge at the free end.
pub fn node_tangents(positions: &[Vec3]) -> Vec<Vec3> {
    let n = positions.len();
    let edge = |j: usize| (positions[j + 1] - positions[j]).normalize();
    (1..n)
        .map(|j| {
            if j == n - 1 {
                edge(j - 1)
            } else {
                (edge(j - 1) + edge(j)).normalize()
            }
        })
        .collect()
}

/// Dense slender-body mobility: `−u_f = A f` over the flagellar nodes.
pub struct MobilityOperator {
    matrix: DMatrix<f64>,
    factor: faer::linalg::solvers::Lblt<f64>,
    condition: f64,
}

impl MobilityOperator {
    /// Assembles and factorizes `A` for flagellar node positions and tangents.
    pub fn assemble(
        nodes: &[Vec3],
        tangents: &[Vec3],
        viscosity: f64,
        cutoff: f64,
        local_term: LocalTerm,
    ) -> Result<Self> {
        let m = nodes.len();
        let n = 3 * m;
        let mut a = DMatrix::zeros(n, n);
        let local = 1.0 / (8.0 * PI * viscosity * cutoff);
        for j in 0..m {
            let t = &tangents[j];
            let tt = t * t.transpose();
            let block = match local_term {
                LocalTerm::Perpendicular => Mat3::identity() - tt,
                LocalTerm::Stokeslet => Mat3::identity() + tt,
            } * local;
            a.fixed_view_mut::<3, 3>(3 * j, 3 * j).copy_from(&block);
            for k in j + 1..m {
                let r = nodes[j] - nodes[k];
                let d = r.norm();
                if !(d > 0.0) {
                    return Err(Error::DegenerateEdge { edge: j, length: d });
                }
                let rh = r / d;
                let block = (Mat3::identity() + rh * rh.transpose()) / (8.0 * PI * viscosity * d);
                a.fixed_view_mut::<3, 3>(3 * j, 3 * k).copy_from(&block);
                a.fixed_view_mut::<3, 3>(3 * k, 3 * j).copy_from(&block);
            }
        }
        let fa = Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
        let factor = fa.lblt(Side::Lower);
        let condition = estimate_condition(&a, &factor);
        if !(condition <= MAX_MOBILITY_CONDITION) {
            return Err(Error::IllConditionedMobility {
                condition,
                nodes: m,
            });
        }
        Ok(Self {
            matrix: a,
            factor,
            condition,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// One-norm condition estimate of `A`.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// `A f` for stacked node forces.
    pub fn apply(&self, forces: &[Vec3]) -> Vec<Vec3> {
        let f = stack(forces);
        unstack((&self.matrix * nalgebra::DVector::from_vec(f)).as_slice())
    }

    /// Forces `f` with `A f = −u_f`.
    pub fn solve(&self, flow: &[Vec3]) -> Vec<Vec3> {
        let rhs = stack(flow);
        let b = Mat::<f64>::from_fn(rhs.len(), 1, |i, _| -rhs[i]);
        let x = self.factor.solve(&b);
        let out: Vec<f64> = (0..rhs.len()).map(|i| x[(i, 0)]).collect();
        unstack(&out)
    }
}

fn stack(v: &[Vec3]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
}

fn unstack(v: &[f64]) -> Vec<Vec3> {
    v.chunks_exact(3)
        .map(|c| Vec3::new(c[0], c[1], c[2]))
        .collect()
}

/// Hager's one-norm estimate of `‖A⁻¹‖₁` times `‖A‖₁`, for symmetric `A`.
fn estimate_condition(a: &DMatrix<f64>, factor: &faer::linalg::solvers::Lblt<f64>) -> f64 {
    let n = a.nrows();
    let norm_a = (0..n)
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let solve = |v: &[f64]| -> Vec<f64> {
        let b = Mat::<f64>::from_fn(n, 1, |i, _| v[i]);
        let x = factor.solve(&b);
        (0..n).map(|i| x[(i, 0)]).collect()
    };
    let mut x = vec![1.0 / n as f64; n];
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = solve(&x);
        if y.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let norm_y: f64 = y.iter().map(|v| v.abs()).sum();
        if norm_y <= estimate {
            break;
        }
        estimate = norm_y;
        let sign: Vec<f64> = y
            .iter()
            .map(|v| if *v >= 0.0 { 1.0 } else { -1.0 })
            .collect();
        let z = solve(&sign);
        let (jmax, zmax) = z.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
        if zmax <= ztx {
            break;
        }
        x = vec![0.0; n];
        x[jmax] = 1.0;
    }
    norm_a * estimate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rod::build_initial_configuration;
    use crate::PhysicalParameters;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hydro(model: HeadFlowModel) -> Hydrodynamics {
        Hydrodynamics::new(
            &PhysicalParameters::reference(),
            model,
            LocalTerm::Stokeslet,
        )
    }

    fn helix_operator(
        p: &PhysicalParameters,
        local: LocalTerm,
    ) -> (Vec<Vec3>, Vec<Vec3>, MobilityOperator) {
        let x = build_initial_configuration(p).unwrap().positions();
        let t = node_tangents(&x);
        let nodes = x[1..].to_vec();
        let a = MobilityOperator::assemble(&nodes, &t, p.viscosity, p.cutoff(), local).unwrap();
        (nodes, t, a)
    }

    const LOCAL_TERMS: [LocalTerm; 2] = [LocalTerm::Perpendicular, LocalTerm::Stokeslet];

    #[test]
    fn head_flow_vanishes_at_rest() {
        let h = hydro(HeadFlowModel::AsPrinted);
        let u = h
            .head_induced_flow(
                &[Vec3::new(0.02, 0.01, 0.0)],
                &Vec3::zeros(),
                &Vec3::zeros(),
            )
            .unwrap();
        assert_eq!(u[0], Vec3::zeros());
    }

    #[test]
    fn head_flow_on_axis_closed_form() {
        // r = 2b x̂, U = U x̂: the bracket reduces to (1/r + 1/r) + (b²/3)(1/r³ − 1/r³).
        let h = hydro(HeadFlowModel::AsPrinted);
        let b = h.head_radius;
        let r = 2.0 * b;
        let big_u = 1e-3;
        let u = h
            .head_induced_flow(
                &[Vec3::new(r, 0.0, 0.0)],
                &Vec3::new(big_u, 0.0, 0.0),
                &Vec3::zeros(),
            )
            .unwrap();
        let expect = 0.75 * b * (2.0 / r) * big_u;
        assert!((u[0].x - expect).abs() < 1e-15);
        assert!(u[0].y.abs() < 1e-18 && u[0].z.abs() < 1e-18);
    }

    #[test]
    fn head_flow_far_field_bound() {
        let h = hydro(HeadFlowModel::AsPrinted);
        let b = h.head_radius;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let dir = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalize();
            let uh = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            );
            let u = h
                .head_induced_flow(&[dir * (100.0 * b)], &uh, &Vec3::zeros())
                .unwrap();
            assert!(u[0].norm() <= 0.75 * 0.01 * uh.norm() * 2.01);
        }
    }

    #[test]
    fn head_flow_rotation_sign_per_model() {
        let printed = hydro(HeadFlowModel::AsPrinted);
        let classical = hydro(HeadFlowModel::Classical);
        let r = [Vec3::new(0.02, 0.0, 0.0)];
        let w = Vec3::new(0.0, 0.0, 1.0);
        let a = printed.head_induced_flow(&r, &Vec3::zeros(), &w).unwrap()[0];
        let c = classical.head_induced_flow(&r, &Vec3::zeros(), &w).unwrap()[0];
        let b3 = (0.01f64 / 0.02).powi(3);
        assert!((a - Vec3::new(0.0, -0.02 * b3, 0.0)).norm() < 1e-15);
        assert!((a + c).norm() < 1e-15);
    }

    #[test]
    fn classical_flow_satisfies_no_slip() {
        let h = hydro(HeadFlowModel::Classical);
        let b = h.head_radius;
        let r = Vec3::new(1.0, -2.0, 0.5).normalize() * b;
        let (uh, w) = (Vec3::new(0.3, 0.1, -0.2), Vec3::new(0.5, -1.0, 2.0));
        let u = h.head_induced_flow(&[r], &uh, &w).unwrap()[0];
        assert!((u - (uh + w.cross(&r))).norm() < 1e-14);
        // The printed tensor leaves an extra ½(U·r̂)r̂ on the surface.
        let p = hydro(HeadFlowModel::AsPrinted)
            .head_induced_flow(&[r], &uh, &Vec3::zeros())
            .unwrap()[0];
        let rh = r / b;
        assert!((p - (uh + rh * (0.5 * uh.dot(&rh)))).norm() < 1e-14);
    }

    #[test]
    fn head_flow_rejects_center_node() {
        let h = hydro(HeadFlowModel::AsPrinted);
        let e = h.head_induced_flow(&[Vec3::x(), Vec3::zeros()], &Vec3::x(), &Vec3::zeros());
        assert!(matches!(e, Err(Error::NodeAtHeadCenter { node: 2 })));
    }

    #[test]
    fn head_loads_pure_drag() {
        let h = hydro(HeadFlowModel::AsPrinted);
        let (f, t) = h
            .head_force_torque(
                &[Vec3::zeros()],
                &[Vec3::x()],
                &Vec3::zeros(),
                &Vec3::zeros(),
            )
            .unwrap();
        assert_eq!((f, t), (Vec3::zeros(), Vec3::zeros()));
        let (f, _) = h
            .head_force_torque(&[Vec3::zeros()], &[Vec3::x()], &Vec3::x(), &Vec3::zeros())
            .unwrap();
        let expect = -6.0 * PI * h.viscosity * h.head_radius;
        assert!((f - Vec3::new(expect, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn head_torque_single_node() {
        let h = hydro(HeadFlowModel::AsPrinted);
        let (b, d, big_f) = (h.head_radius, 0.03, 2e-4);
        let (_, t) = h
            .head_force_torque(
                &[Vec3::new(0.0, big_f, 0.0)],
                &[Vec3::new(d, 0.0, 0.0)],
                &Vec3::zeros(),
                &Vec3::zeros(),
            )
            .unwrap();
        let expect = Vec3::new(0.0, 0.0, -b.powi(3) * big_f / (d * d));
        assert!((t - expect).norm() < 1e-15 * big_f);
    }

    #[test]
    fn torque_balance_linear_and_zero() {
        let h = hydro(HeadFlowModel::AsPrinted);
        let p = PhysicalParameters::desk();
        let (nodes, _, _) = helix_operator(&p, LocalTerm::Stokeslet);
        let rel = nodes.clone();
        let zero = vec![Vec3::zeros(); rel.len()];
        assert_eq!(h.torque_balance_head(&zero, &rel).unwrap(), Vec3::zeros());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f: Vec<Vec3> = rel
            .iter()
            .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 1e-4)
            .collect();
        let f2: Vec<Vec3> = f.iter().map(|v| v * 2.0).collect();
        let w1 = h.torque_balance_head(&f, &rel).unwrap();
        let w2 = h.torque_balance_head(&f2, &rel).unwrap();
        assert!((w2 - 2.0 * w1).norm() < 1e-12 * w1.norm());
        // Total torque with the balanced spin vanishes.
        let (_, th) = h.head_force_torque(&f, &rel, &Vec3::zeros(), &w1).unwrap();
        let arm: Vec3 = f.iter().zip(&rel).map(|(f, r)| r.cross(f)).sum();
        assert!((th + arm).norm() < 1e-10 * arm.norm());
    }

    #[test]
    fn mobility_blocks_and_symmetry() {
        let p = PhysicalParameters::desk();
        for local_term in LOCAL_TERMS {
            let (nodes, t, a) = helix_operator(&p, local_term);
            let m = a.matrix();
            assert!((m - m.transpose()).norm() <= 1e-12 * m.norm());
            let (j, k) = (3, 17);
            let r = nodes[j] - nodes[k];
            let rh = r.normalize();
            let expect =
                (Mat3::identity() + rh * rh.transpose()) / (8.0 * PI * p.viscosity * r.norm());
            let block = m.fixed_view::<3, 3>(3 * j, 3 * k).into_owned();
            assert!((block - expect).norm() < 1e-14 * expect.norm());
            let along = m.fixed_view::<3, 3>(3 * j, 3 * j) * t[j];
            let local = 1.0 / (8.0 * PI * p.viscosity * p.cutoff());
            let expect = match local_term {
                LocalTerm::Perpendicular => Vec3::zeros(),
                LocalTerm::Stokeslet => t[j] * (2.0 * local),
            };
            assert!((along - expect).norm() < 1e-12 * local);
        }
    }

    #[test]
    fn stokeslet_local_term_is_positive_definite() {
        for p in [PhysicalParameters::desk(), PhysicalParameters::reference()] {
            let (_, _, a) = helix_operator(&p, LocalTerm::Stokeslet);
            let eig = a.matrix().clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() > 0.0);
            let (_, _, a) = helix_operator(&p, LocalTerm::Perpendicular);
            let eig = a.matrix().clone().symmetric_eigen().eigenvalues;
            assert!(eig.min() < 0.0);
        }
    }

    #[test]
    fn mobility_solve_residual_and_linearity() {
        for (p, local_term) in [PhysicalParameters::desk(), PhysicalParameters::reference()]
            .into_iter()
            .flat_map(|p| LOCAL_TERMS.map(|l| (p, l)))
        {
            let (nodes, _, a) = helix_operator(&p, local_term);
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            let u: Vec<Vec3> = nodes
                .iter()
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 1e-3)
                .collect();
            let f = a.solve(&u);
            let af = a.apply(&f);
            let res: f64 = af
                .iter()
                .zip(&u)
                .map(|(x, y)| (x + y).norm_squared())
                .sum::<f64>()
                .sqrt();
            let norm: f64 = u.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
            assert!(
                res <= 1e-10 * norm,
                "residual {res} (cond {:.2e})",
                a.condition()
            );
            let u2: Vec<Vec3> = u.iter().map(|v| v * 2.0).collect();
            for (x, y) in a.solve(&u2).iter().zip(&f) {
                assert!((x - 2.0 * y).norm() <= 1e-9 * y.norm().max(1e-30));
            }
            assert!(a
                .solve(&vec![Vec3::zeros(); nodes.len()])
                .iter()
                .all(|v| *v == Vec3::zeros()));
        }
    }

    #[test]
    fn two_node_system_matches_hand_assembly() {
        let (mu, delta) = (2.7, 8.24e-4);
        let nodes = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.2e-3, 0.9e-3, 0.4e-3)];
        let t = (nodes[1] - nodes[0]).normalize();
        let a = MobilityOperator::assemble(&nodes, &[t, t], mu, delta, LocalTerm::Perpendicular)
            .unwrap();
        // Hand oracle: 6×6 system, local blocks P/(8πμδ), off-diagonal Oseen block.
        let p = Mat3::identity() - t * t.transpose();
        let r = nodes[0] - nodes[1];
        let g = (Mat3::identity() + t * t.transpose()) / (8.0 * PI * mu * r.norm());
        let mut dense = DMatrix::zeros(6, 6);
        dense
            .fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&(p / (8.0 * PI * mu * delta)));
        dense
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(p / (8.0 * PI * mu * delta)));
        dense.fixed_view_mut::<3, 3>(0, 3).copy_from(&g);
        dense.fixed_view_mut::<3, 3>(3, 0).copy_from(&g);
        assert!((&dense - a.matrix()).norm() < 1e-14 * dense.norm());
        let u = [Vec3::new(1e-3, -2e-3, 0.5e-3), Vec3::new(0.0, 1e-3, 1e-3)];
        let rhs = nalgebra::DVector::from_iterator(6, u.iter().flat_map(|v| [-v.x, -v.y, -v.z]));
        let expect = dense.lu().solve(&rhs).unwrap();
        let f = a.solve(&u);
        for i in 0..2 {
            for k in 0..3 {
                assert!((f[i][k] - expect[3 * i + k]).abs() < 1e-12 * expect.amax());
            }
        }
    }

    #[test]
    fn mobility_is_objective_and_scales_with_viscosity() {
        let p = PhysicalParameters::desk();
        for local_term in LOCAL_TERMS {
            let (nodes, t, a) = helix_operator(&p, local_term);
            let mut rng = ChaCha8Rng::seed_from_u64(6);
            let u: Vec<Vec3> = nodes
                .iter()
                .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()) * 1e-3)
                .collect();
            let f = a.solve(&u);
            let q = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
            let rot = |v: &[Vec3]| v.iter().map(|x| q * x).collect::<Vec<_>>();
            let ar = MobilityOperator::assemble(
                &rot(&nodes),
                &rot(&t),
                p.viscosity,
                p.cutoff(),
                local_term,
            )
            .unwrap();
            let fr = ar.solve(&rot(&u));
            let fnorm = f.iter().map(|v| v.norm()).fold(0.0, f64::max);
            for (x, y) in fr.iter().zip(&f) {
                assert!((x - q * y).norm() < 1e-10 * fnorm);
            }
            let a3 =
                MobilityOperator::assemble(&nodes, &t, 3.0 * p.viscosity, p.cutoff(), local_term)
                    .unwrap();
            for (x, y) in a3.solve(&u).iter().zip(&f) {
                assert!((x - 3.0 * y).norm() < 1e-12 * fnorm);
            }
        }
    }

    #[test]
    fn ill_conditioned_operator_is_rejected() {
        // Two coincident-direction nodes far apart relative to a huge cutoff
        // make the local term negligible and tangential rows nearly dependent.
        let nodes = [
            Vec3::zeros(),
            Vec3::new(1e-3, 0.0, 0.0),
            Vec3::new(1e-3, 1e-18, 0.0),
        ];
        let t = [Vec3::x(), Vec3::x(), Vec3::x()];
        let r = MobilityOperator::assemble(&nodes, &t, 1.0, 1e-3, LocalTerm::Perpendicular);
        assert!(matches!(r, Err(Error::IllConditionedMobility { .. })));
    }
}
