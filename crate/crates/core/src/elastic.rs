//! Discrete stretching, bending and twisting forces and their Jacobian.
//!
//! Energies follow the standard discrete-elastic-rod forms:
//!
//! * stretching `½ EA |ē| (|e|/|ē| − 1)²` per edge,
//! * bending `½ EI/l̄ [(κ1 − κ̄1)² + (κ2 − κ̄2)²]` per internal node,
//! * twisting `½ GJ/l̄ (m − m̄)²` per internal node,
//!
//! with material curvatures taken from the curvature binormal and the
//! material frames of the two adjacent edges. The bending/twisting stencil
//! of internal node `i` covers the eleven contiguous DOFs starting at
//! `4(i − 1)`.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::banded::BandedMatrix;
use crate::rod::{curvature_binormal, node_dof, RodState};
use crate::{Error, Mat3, PhysicalParameters, Result, Vec3};

type Vec11 = SVector<f64, 11>;
type Mat11 = SMatrix<f64, 11, 11>;

/// Half bandwidth of the elastic Jacobian in the interleaved DOF layout.
pub const JACOBIAN_BANDWIDTH: usize = 10;

/// Edges shorter than this fraction of `2δ` abort the computation.
pub const DEGENERATE_EDGE_FRACTION: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticStiffnesses {
    /// `EA` [N].
    pub stretching: f64,
    /// `EI` [N·m²].
    pub bending: f64,
    /// `GJ` [N·m²].
    pub twisting: f64,
}

impl ElasticStiffnesses {
    pub fn from_params(p: &PhysicalParameters) -> Self {
        let r = p.rod_radius;
        let area = std::f64::consts::PI * r * r;
        let second_moment = std::f64::consts::PI * r.powi(4) / 4.0;
        Self {
            stretching: p.youngs_modulus * area,
            bending: p.youngs_modulus * second_moment,
            twisting: p.shear_modulus() * 2.0 * second_moment,
        }
    }
}

/// How the elastic Jacobian is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    #[default]
    Analytic,
    /// Central differences of the analytic force; for cross-checking.
    FiniteDifference,
}

/// Receives Hessian entries in global DOF indices.
pub trait HessianSink {
    fn add(&mut self, i: usize, j: usize, v: f64);
}

impl HessianSink for DMatrix<f64> {
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self[(i, j)] += v;
    }
}

impl HessianSink for BandedMatrix {
    fn add(&mut self, i: usize, j: usize, v: f64) {
        BandedMatrix::add(self, i, j, v);
    }
}

/// Elastic model of one rod: stiffnesses plus the degenerate-edge guard.
#[derive(Debug, Clone, Copy)]
pub struct ElasticModel {
    pub stiffness: ElasticStiffnesses,
    pub min_edge: f64,
}

fn skew(a: &Vec3) -> Mat3 {
    Mat3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0)
}

fn outer(a: &Vec3, b: &Vec3) -> Mat3 {
    a * b.transpose()
}

fn put_vec(g: &mut Vec11, at: usize, v: &Vec3) {
    for k in 0..3 {
        g[at + k] += v[k];
    }
}

fn put_block(h: &mut Mat11, r: usize, c: usize, m: &Mat3) {
    for a in 0..3 {
        for b in 0..3 {
            h[(r + a, c + b)] += m[(a, b)];
        }
    }
}

/// Scatters position second derivatives into the 11×11 stencil given
/// `∂²/∂e²`, `∂²/∂e∂f` and `∂²/∂f²` with `e = x_i − x_{i−1}`, `f = x_{i+1} − x_i`.
fn scatter_positions(h: &mut Mat11, dee: &Mat3, def: &Mat3, dff: &Mat3) {
    let dfe = def.transpose();
    put_block(h, 0, 0, dee);
    put_block(h, 0, 4, &(-dee + def));
    put_block(h, 0, 8, &(-def));
    put_block(h, 4, 0, &(-dee + dfe));
    put_block(h, 4, 4, &(dee - def - dfe + dff));
    put_block(h, 4, 8, &(def - dff));
    put_block(h, 8, 0, &(-dfe));
    put_block(h, 8, 4, &(dfe - dff));
    put_block(h, 8, 8, dff);
}

/// Scatters mixed position/θ second derivatives for twist slot `slot` (3 or 7).
fn scatter_mixed(h: &mut Mat11, slot: usize, de: &Vec3, df: &Vec3) {
    let blocks = [(0, -de), (4, de - df), (8, *df)];
    for (at, v) in blocks {
        for k in 0..3 {
            h[(at + k, slot)] += v[k];
            h[(slot, at + k)] += v[k];
        }
    }
}

/// Local geometry of the stencil around internal node `i`.
struct NodeStencil {
    norm_e: f64,
    norm_f: f64,
    te: Vec3,
    tf: Vec3,
    kb: Vec3,
    chi: f64,
    tilde_t: Vec3,
    m1e: Vec3,
    m2e: Vec3,
    m1f: Vec3,
    m2f: Vec3,
}

impl NodeStencil {
    fn kappa(&self) -> [f64; 2] {
        [
            0.5 * self.kb.dot(&(self.m2e + self.m2f)),
            -0.5 * self.kb.dot(&(self.m1e + self.m1f)),
        ]
    }

    /// Gradients of `κ1` and `κ2` over the 11 stencil DOFs.
    fn kappa_gradients(&self) -> [Vec11; 2] {
        let [k1, k2] = self.kappa();
        let d1t = (self.m1e + self.m1f) / self.chi;
        let d2t = (self.m2e + self.m2f) / self.chi;
        let dk1de = (-self.tilde_t * k1 + self.tf.cross(&d2t)) / self.norm_e;
        let dk1df = (-self.tilde_t * k1 - self.te.cross(&d2t)) / self.norm_f;
        let dk2de = (-self.tilde_t * k2 - self.tf.cross(&d1t)) / self.norm_e;
        let dk2df = (-self.tilde_t * k2 + self.te.cross(&d1t)) / self.norm_f;
        let mut g1 = Vec11::zeros();
        put_vec(&mut g1, 0, &(-dk1de));
        put_vec(&mut g1, 4, &(dk1de - dk1df));
        put_vec(&mut g1, 8, &dk1df);
        g1[3] = -0.5 * self.kb.dot(&self.m1e);
        g1[7] = -0.5 * self.kb.dot(&self.m1f);
        let mut g2 = Vec11::zeros();
        put_vec(&mut g2, 0, &(-dk2de));
        put_vec(&mut g2, 4, &(dk2de - dk2df));
        put_vec(&mut g2, 8, &dk2df);
        g2[3] = -0.5 * self.kb.dot(&self.m2e);
        g2[7] = -0.5 * self.kb.dot(&self.m2f);
        [g1, g2]
    }

    /// Second derivatives of `κ1` and `κ2` over the stencil.
    fn kappa_hessians(&self) -> [Mat11; 2] {
        let [k1, k2] = self.kappa();
        let (ne, nf, chi) = (self.norm_e, self.norm_f, self.chi);
        let (te, tf, tt, kb) = (&self.te, &self.tf, &self.tilde_t, &self.kb);
        let d1t = (self.m1e + self.m1f) / chi;
        let d2t = (self.m2e + self.m2f) / chi;
        let id = Mat3::identity();
        let tt_tt = outer(tt, tt);
        let (ne2, nf2, nef) = (ne * ne, nf * nf, ne * nf);

        // κ1
        let a = outer(&tf.cross(&d2t), tt);
        let dee1 = (tt_tt * (2.0 * k1) - a - a.transpose()) / ne2
            - (id - outer(te, te)) * (k1 / (chi * ne2))
            + (outer(kb, &self.m2e) + outer(&self.m2e, kb)) / (4.0 * ne2);
        let b = outer(&te.cross(&d2t), tt);
        let dff1 = (tt_tt * (2.0 * k1) + b + b.transpose()) / nf2
            - (id - outer(tf, tf)) * (k1 / (chi * nf2))
            + (outer(kb, &self.m2f) + outer(&self.m2f, kb)) / (4.0 * nf2);
        let def1 = -(id + outer(te, tf)) * (k1 / (chi * nef))
            + (tt_tt * (2.0 * k1) - a + b.transpose() - skew(&d2t)) / nef;

        // κ2
        let c = outer(&tf.cross(&d1t), tt);
        let dee2 = (tt_tt * (2.0 * k2) + c + c.transpose()) / ne2
            - (id - outer(te, te)) * (k2 / (chi * ne2))
            - (outer(kb, &self.m1e) + outer(&self.m1e, kb)) / (4.0 * ne2);
        let d = outer(&te.cross(&d1t), tt);
        let dff2 = (tt_tt * (2.0 * k2) - d - d.transpose()) / nf2
            - (id - outer(tf, tf)) * (k2 / (chi * nf2))
            - (outer(kb, &self.m1f) + outer(&self.m1f, kb)) / (4.0 * nf2);
        let def2 = -(id + outer(te, tf)) * (k2 / (chi * nef))
            + (tt_tt * (2.0 * k2) + c - d.transpose() + skew(&d1t)) / nef;

        let mut h1 = Mat11::zeros();
        scatter_positions(&mut h1, &dee1, &def1, &dff1);
        h1[(3, 3)] = -0.5 * kb.dot(&self.m2e);
        h1[(7, 7)] = -0.5 * kb.dot(&self.m2f);
        let de_te = (tt * (0.5 * kb.dot(&self.m1e)) - tf.cross(&self.m1e) / chi) / ne;
        let df_te = (tt * (0.5 * kb.dot(&self.m1e)) + te.cross(&self.m1e) / chi) / nf;
        scatter_mixed(&mut h1, 3, &de_te, &df_te);
        let de_tf = (tt * (0.5 * kb.dot(&self.m1f)) - tf.cross(&self.m1f) / chi) / ne;
        let df_tf = (tt * (0.5 * kb.dot(&self.m1f)) + te.cross(&self.m1f) / chi) / nf;
        scatter_mixed(&mut h1, 7, &de_tf, &df_tf);

        let mut h2 = Mat11::zeros();
        scatter_positions(&mut h2, &dee2, &def2, &dff2);
        h2[(3, 3)] = 0.5 * kb.dot(&self.m1e);
        h2[(7, 7)] = 0.5 * kb.dot(&self.m1f);
        let de_te = (tt * (0.5 * kb.dot(&self.m2e)) - tf.cross(&self.m2e) / chi) / ne;
        let df_te = (tt * (0.5 * kb.dot(&self.m2e)) + te.cross(&self.m2e) / chi) / nf;
        scatter_mixed(&mut h2, 3, &de_te, &df_te);
        let de_tf = (tt * (0.5 * kb.dot(&self.m2f)) - tf.cross(&self.m2f) / chi) / ne;
        let df_tf = (tt * (0.5 * kb.dot(&self.m2f)) + te.cross(&self.m2f) / chi) / nf;
        scatter_mixed(&mut h2, 7, &de_tf, &df_tf);
        [h1, h2]
    }

    fn twist_gradient(&self) -> Vec11 {
        let mut g = Vec11::zeros();
        let de = self.kb * (0.5 / self.norm_e);
        let df = self.kb * (0.5 / self.norm_f);
        put_vec(&mut g, 0, &(-de));
        put_vec(&mut g, 4, &(de - df));
        put_vec(&mut g, 8, &df);
        g[3] = -1.0;
        g[7] = 1.0;
        g
    }

    fn twist_hessian(&self) -> Mat11 {
        let (ne, nf) = (self.norm_e, self.norm_f);
        let (te, tf, tt, kb) = (&self.te, &self.tf, &self.tilde_t, &self.kb);
        let a = outer(kb, &(te + tt));
        let b = outer(kb, &(tf + tt));
        let dee = -(a + a.transpose()) / (4.0 * ne * ne);
        let dff = -(b + b.transpose()) / (4.0 * nf * nf);
        let def = (skew(te) * (2.0 / self.chi) - outer(kb, tt)) / (2.0 * ne * nf);
        let mut h = Mat11::zeros();
        scatter_positions(&mut h, &dee, &def, &dff);
        h
    }
}

/// Values returned by one pass over the stencils.
struct Pass<'a, S: HessianSink> {
    energy: f64,
    gradient: Option<&'a mut [f64]>,
    hessian: Option<&'a mut S>,
}

impl ElasticModel {
    pub fn new(params: &PhysicalParameters) -> Self {
        Self {
            stiffness: ElasticStiffnesses::from_params(params),
            min_edge: DEGENERATE_EDGE_FRACTION * params.edge_length(),
        }
    }

    fn check_edges(&self, positions: &[Vec3]) -> Result<()> {
        for (j, w) in positions.windows(2).enumerate() {
            let len = (w[1] - w[0]).norm();
            if !(len > self.min_edge) {
                return Err(Error::DegenerateEdge {
                    edge: j,
                    length: len,
                });
            }
        }
        Ok(())
    }

    fn run<S: HessianSink>(&self, state: &RodState, pass: &mut Pass<'_, S>) -> Result<()> {
        let x = state.positions();
        self.check_edges(&x)?;
        let nat = &state.naturals;
        let material = state.material_frames();
        let twists = state.twist_angles();
        let n = x.len();
        let (ea, ei, gj) = (
            self.stiffness.stretching,
            self.stiffness.bending,
            self.stiffness.twisting,
        );

        for j in 0..n - 1 {
            let e = x[j + 1] - x[j];
            let len = e.norm();
            let rest = nat.edge_lengths[j];
            let t = e / len;
            let strain = len / rest - 1.0;
            pass.energy += 0.5 * ea * rest * strain * strain;
            let g = t * (ea * strain);
            let (a, b) = (node_dof(j), node_dof(j + 1));
            if let Some(grad) = pass.gradient.as_deref_mut() {
                for k in 0..3 {
                    grad[a + k] -= g[k];
                    grad[b + k] += g[k];
                }
            }
            if let Some(hess) = pass.hessian.as_deref_mut() {
                let tt = outer(&t, &t);
                let m =
                    tt * (ea / rest) + (Mat3::identity() - tt) * (ea * (1.0 / rest - 1.0 / len));
                for r in 0..3 {
                    for c in 0..3 {
                        let v = m[(r, c)];
                        hess.add(a + r, a + c, v);
                        hess.add(b + r, b + c, v);
                        hess.add(a + r, b + c, -v);
                        hess.add(b + r, a + c, -v);
                    }
                }
            }
        }

        for i in 1..n - 1 {
            let e = x[i] - x[i - 1];
            let f = x[i + 1] - x[i];
            let (norm_e, norm_f) = (e.norm(), f.norm());
            let (te, tf) = (e / norm_e, f / norm_f);
            let chi = 1.0 + te.dot(&tf);
            let st = NodeStencil {
                norm_e,
                norm_f,
                te,
                tf,
                kb: curvature_binormal(&e, &f),
                chi,
                tilde_t: (te + tf) / chi,
                m1e: material[i - 1].d1,
                m2e: material[i - 1].d2,
                m1f: material[i].d1,
                m2f: material[i].d2,
            };
            let vor = nat.voronoi_lengths[i];
            let kappa = st.kappa();
            let dk = [
                kappa[0] - nat.curvatures[i][0],
                kappa[1] - nat.curvatures[i][1],
            ];
            let twist = twists[i] - twists[i - 1] + state.reference_twist[i];
            let dm = twist - nat.twists[i];
            let kb_coef = ei / vor;
            let kt_coef = gj / vor;
            pass.energy +=
                0.5 * kb_coef * (dk[0] * dk[0] + dk[1] * dk[1]) + 0.5 * kt_coef * dm * dm;

            let need_grad = pass.gradient.is_some() || pass.hessian.is_some();
            if !need_grad {
                continue;
            }
            let [g1, g2] = st.kappa_gradients();
            let gt = st.twist_gradient();
            let base = 4 * (i - 1);
            if let Some(grad) = pass.gradient.as_deref_mut() {
                let local = g1 * (kb_coef * dk[0]) + g2 * (kb_coef * dk[1]) + gt * (kt_coef * dm);
                for k in 0..11 {
                    grad[base + k] += local[k];
                }
            }
            if let Some(hess) = pass.hessian.as_deref_mut() {
                let [h1, h2] = st.kappa_hessians();
                let ht = st.twist_hessian();
                let local = (g1 * g1.transpose() + h1 * dk[0]) * kb_coef
                    + (g2 * g2.transpose() + h2 * dk[1]) * kb_coef
                    + (gt * gt.transpose() + ht * dm) * kt_coef;
                for r in 0..11 {
                    for c in 0..11 {
                        hess.add(base + r, base + c, local[(r, c)]);
                    }
                }
            }
        }
        Ok(())
    }

    /// Total elastic energy.
    pub fn energy(&self, state: &RodState) -> Result<f64> {
        let mut pass: Pass<'_, DMatrix<f64>> = Pass {
            energy: 0.0,
            gradient: None,
            hessian: None,
        };
        self.run(state, &mut pass)?;
        Ok(pass.energy)
    }

    /// Internal force `−∇E` in DOF layout.
    pub fn internal_force(&self, state: &RodState) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; state.q.len()];
        let mut pass: Pass<'_, DMatrix<f64>> = Pass {
            energy: 0.0,
            gradient: Some(&mut grad),
            hessian: None,
        };
        self.run(state, &mut pass)?;
        grad.iter_mut().for_each(|g| *g = -*g);
        Ok(grad)
    }

    /// Adds the energy Hessian (= −∂f_int/∂q) into `sink` and returns the force.
    pub fn force_and_hessian<S: HessianSink>(
        &self,
        state: &RodState,
        sink: &mut S,
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; state.q.len()];
        let mut pass = Pass {
            energy: 0.0,
            gradient: Some(&mut grad),
            hessian: Some(sink),
        };
        self.run(state, &mut pass)?;
        grad.iter_mut().for_each(|g| *g = -*g);
        Ok(grad)
    }

    /// Dense Jacobian `∂f_int/∂q`.
    pub fn internal_force_jacobian(&self, state: &RodState) -> Result<DMatrix<f64>> {
        let n = state.q.len();
        let mut h = DMatrix::zeros(n, n);
        self.force_and_hessian(state, &mut h)?;
        Ok(-h)
    }

    /// Jacobian by central differences of [`internal_force`](Self::internal_force),
    /// perturbing non-interacting DOFs together.
    pub fn internal_force_jacobian_fd(&self, state: &RodState, step: f64) -> Result<DMatrix<f64>> {
        let n = state.q.len();
        let stride = 2 * JACOBIAN_BANDWIDTH + 1;
        let mut jac = DMatrix::zeros(n, n);
        for color in 0..stride.min(n) {
            let cols: Vec<usize> = (color..n).step_by(stride).collect();
            let shifted = |sign: f64| -> Result<Vec<f64>> {
                let mut q = state.q.clone();
                for &c in &cols {
                    q[c] += sign * step;
                }
                self.internal_force(&state.with_dofs(q)?)
            };
            let (fp, fm) = (shifted(1.0)?, shifted(-1.0)?);
            for &c in &cols {
                let lo = c.saturating_sub(JACOBIAN_BANDWIDTH);
                let hi = (c + JACOBIAN_BANDWIDTH).min(n - 1);
                for r in lo..=hi {
                    jac[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
                }
            }
        }
        Ok(jac)
    }

    /// Jacobian in band storage for the time stepper; returns the force too.
    pub fn force_and_banded_hessian(
        &self,
        state: &RodState,
        band: &mut BandedMatrix,
    ) -> Result<Vec<f64>> {
        self.force_and_hessian(state, band)
    }
}
