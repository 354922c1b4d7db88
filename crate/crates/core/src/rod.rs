//! Discrete rod geometry: degrees of freedom, adapted frames, and the initial
//! helical configuration.
//!
//! The configuration is `q = [x_0, θ^0, x_1, θ^1, …, x_{N−2}, θ^{N−2}, x_{N−1}]`
//! with `4N − 1` entries. Node 0 is the head center; edge `e^0 = x_1 − x_0`
//! attaches the flagellum to the head along the helix axis.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::{Error, PhysicalParameters, Result, Vec3};

/// Index of the first coordinate of node `j` in the DOF vector.
#[inline]
pub fn node_dof(j: usize) -> usize {
    4 * j
}

/// Index of the twist angle of edge `j` in the DOF vector.
#[inline]
pub fn twist_dof(j: usize) -> usize {
    4 * j + 3
}

/// Number of DOFs for `n` nodes.
#[inline]
pub fn dof_count(n: usize) -> usize {
    4 * n - 1
}

/// Packs positions and twist angles into the interleaved DOF layout.
pub fn pack_dofs(positions: &[Vec3], twists: &[f64]) -> Vec<f64> {
    assert_eq!(twists.len() + 1, positions.len());
    let mut q = vec![0.0; dof_count(positions.len())];
    for (j, x) in positions.iter().enumerate() {
        q[node_dof(j)..node_dof(j) + 3].copy_from_slice(x.as_slice());
    }
    for (j, &t) in twists.iter().enumerate() {
        q[twist_dof(j)] = t;
    }
    q
}

/// Inverse of [`pack_dofs`].
pub fn unpack_dofs(q: &[f64]) -> (Vec<Vec3>, Vec<f64>) {
    assert_eq!(q.len() % 4, 3, "DOF vector must have 4N-1 entries");
    let n = (q.len() + 1) / 4;
    let positions = (0..n).map(|j| node_position(q, j)).collect();
    let twists = (0..n - 1).map(|j| q[twist_dof(j)]).collect();
    (positions, twists)
}

#[inline]
pub fn node_position(q: &[f64], j: usize) -> Vec3 {
    let i = node_dof(j);
    Vec3::new(q[i], q[i + 1], q[i + 2])
}

/// Orthonormal adapted triad `(d1, d2, t)` of one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub d1: Vec3,
    pub d2: Vec3,
    pub t: Vec3,
}

impl Frame {
    /// Largest deviation from orthonormality among the nine dot products.
    pub fn orthonormality_error(&self) -> f64 {
        let v = [self.d1, self.d2, self.t];
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                err = err.max((v[i].dot(&v[j]) - target).abs());
            }
        }
        err
    }
}

/// Rotates `u` by the minimal rotation taking unit vector `from` onto unit
/// vector `to`.
pub fn parallel_transport(u: &Vec3, from: &Vec3, to: &Vec3) -> Vec3 {
    let b = from.cross(to);
    let c = from.dot(to);
    if b.norm_squared() < 1e-30 && c > 0.0 {
        return *u;
    }
    // Rodrigues form of the minimal rotation; singular only for antiparallel tangents.
    u * c + b.cross(u) + b * (b.dot(u) / (1.0 + c))
}

/// Rotates `u` about unit axis `axis` by `angle` (right-hand rule).
pub fn rotate_about(u: &Vec3, axis: &Vec3, angle: f64) -> Vec3 {
    let (s, c) = angle.sin_cos();
    u * c + axis.cross(u) * s + axis * (axis.dot(u) * (1.0 - c))
}

/// Angle from `u` to `v` measured about `axis`.
pub fn signed_angle(u: &Vec3, v: &Vec3, axis: &Vec3) -> f64 {
    let w = u.cross(v);
    w.dot(axis).atan2(u.dot(v))
}

/// Material frames from reference frames and twist angles:
/// `m1 = d1 cos θ + d2 sin θ`, `m2 = −d1 sin θ + d2 cos θ`.
pub fn material_frames(reference: &[Frame], twists: &[f64]) -> Vec<Frame> {
    reference
        .iter()
        .zip(twists)
        .map(|(f, &theta)| {
            let (s, c) = theta.sin_cos();
            Frame {
                d1: f.d1 * c + f.d2 * s,
                d2: -f.d1 * s + f.d2 * c,
                t: f.t,
            }
        })
        .collect()
}

/// Unit edge tangents, failing on degenerate edges.
pub fn edge_tangents(positions: &[Vec3], min_length: f64) -> Result<Vec<Vec3>> {
    positions
        .windows(2)
        .enumerate()
        .map(|(j, w)| {
            let e = w[1] - w[0];
            let len = e.norm();
            if !(len > min_length) {
                Err(Error::DegenerateEdge {
                    edge: j,
                    length: len,
                })
            } else {
                Ok(e / len)
            }
        })
        .collect()
}

/// Transports each reference frame in time from its old tangent to the
/// tangent defined by `new_positions`.
pub fn parallel_transport_frames(old: &[Frame], new_positions: &[Vec3]) -> Result<Vec<Frame>> {
    assert_eq!(old.len() + 1, new_positions.len());
    let tangents = edge_tangents(new_positions, 0.0)?;
    Ok(transport_frames_to(old, &tangents))
}

pub(crate) fn transport_frames_to(old: &[Frame], tangents: &[Vec3]) -> Vec<Frame> {
    old.iter()
        .zip(tangents)
        .map(|(f, t)| {
            let d1 = parallel_transport(&f.d1, &f.t, t);
            // Re-orthogonalize against rounding drift.
            let d1 = (d1 - t * t.dot(&d1)).normalize();
            Frame {
                d1,
                d2: t.cross(&d1),
                t: *t,
            }
        })
        .collect()
}

/// Reference twist at each internal node, tracked incrementally from the
/// previous values so that it never wraps.
pub fn reference_twist(frames: &[Frame], previous: &[f64]) -> Vec<f64> {
    let n_nodes = frames.len() + 1;
    let mut out = vec![0.0; n_nodes];
    for i in 1..n_nodes - 1 {
        let (fe, ff) = (&frames[i - 1], &frames[i]);
        let u = parallel_transport(&fe.d1, &fe.t, &ff.t);
        let u = rotate_about(&u, &ff.t, previous[i]);
        out[i] = previous[i] + signed_angle(&u, &ff.d1, &ff.t);
    }
    out
}

/// Curvature binormal `2 e×f / (|e||f| + e·f)`.
pub fn curvature_binormal(e: &Vec3, f: &Vec3) -> Vec3 {
    e.cross(f) * (2.0 / (e.norm() * f.norm() + e.dot(f)))
}

/// Rest (stress-free) strains recorded from the as-built configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalStrains {
    /// Rest length of each edge.
    pub edge_lengths: Vec<f64>,
    /// Rest Voronoi length at each node (zero at the two ends).
    pub voronoi_lengths: Vec<f64>,
    /// Rest material curvatures `(κ1, κ2)` at each node (zero at the ends).
    pub curvatures: Vec<[f64; 2]>,
    /// Rest integrated twist at each node (zero at the ends).
    pub twists: Vec<f64>,
}

/// Strains of a configuration, in the same layout as [`NaturalStrains`].
#[derive(Debug, Clone)]
pub struct Strains {
    pub edge_lengths: Vec<f64>,
    pub curvatures: Vec<[f64; 2]>,
    pub twists: Vec<f64>,
}

pub fn compute_strains(
    positions: &[Vec3],
    material: &[Frame],
    ref_twist: &[f64],
    twists: &[f64],
) -> Strains {
    let n = positions.len();
    let edges: Vec<Vec3> = positions.windows(2).map(|w| w[1] - w[0]).collect();
    let mut curvatures = vec![[0.0; 2]; n];
    let mut twist = vec![0.0; n];
    for i in 1..n - 1 {
        let kb = curvature_binormal(&edges[i - 1], &edges[i]);
        let (me, mf) = (&material[i - 1], &material[i]);
        curvatures[i] = [
            0.5 * kb.dot(&(me.d2 + mf.d2)),
            -0.5 * kb.dot(&(me.d1 + mf.d1)),
        ];
        twist[i] = twists[i] - twists[i - 1] + ref_twist[i];
    }
    Strains {
        edge_lengths: edges.iter().map(|e| e.norm()).collect(),
        curvatures,
        twists: twist,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    #[default]
    Right,
    Left,
}

/// Shape of the built flagellum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelixSpec {
    pub handedness: Handedness,
    /// Number of nodes on the flagellum, `x_1 … x_{N−1}`.
    pub n_helix_nodes: usize,
    /// Length of every flagellar edge; always `2δ`.
    pub contour_edge_length: f64,
    /// Length of the head edge `e^0`, from the head center to the point
    /// where the flagellum leaves the head surface.
    pub attachment_length: f64,
    /// Axial distance over which the helix radius ramps from zero (on the
    /// axis at `x_1`) to its full value.
    pub radius_ramp_length: f64,
}

impl HelixSpec {
    pub fn for_params(params: &PhysicalParameters) -> Self {
        Self {
            handedness: Handedness::Right,
            n_helix_nodes: params.node_count - 1,
            contour_edge_length: params.edge_length(),
            attachment_length: params.head_radius,
            radius_ramp_length: 0.5 * params.pitch,
        }
    }
}

/// Full configuration of the discretized robot.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RodState {
    /// DOF vector, `4N − 1` entries.
    pub q: Vec<f64>,
    /// DOF velocities.
    pub q_dot: Vec<f64>,
    /// Time-parallel reference frames, one per edge.
    pub reference_frames: Vec<Frame>,
    /// Reference twist per node (ends are zero).
    pub reference_twist: Vec<f64>,
    /// Head angular velocity `Ω_h` [rad/s].
    pub head_angular_velocity: Vec3,
    /// Simulation time [s].
    pub time: f64,
    /// Rest strains recorded at build time.
    pub naturals: Arc<NaturalStrains>,
}

impl RodState {
    pub fn node_count(&self) -> usize {
        (self.q.len() + 1) / 4
    }

    pub fn position(&self, j: usize) -> Vec3 {
        node_position(&self.q, j)
    }

    pub fn positions(&self) -> Vec<Vec3> {
        (0..self.node_count()).map(|j| self.position(j)).collect()
    }

    pub fn twist_angles(&self) -> Vec<f64> {
        (0..self.node_count() - 1)
            .map(|j| self.q[twist_dof(j)])
            .collect()
    }

    pub fn node_velocity(&self, j: usize) -> Vec3 {
        node_position(&self.q_dot, j)
    }

    /// Head velocity `U_h = ẋ_0`.
    pub fn head_velocity(&self) -> Vec3 {
        self.node_velocity(0)
    }

    pub fn material_frames(&self) -> Vec<Frame> {
        material_frames(&self.reference_frames, &self.twist_angles())
    }

    pub fn tangents(&self) -> Vec<Vec3> {
        self.reference_frames.iter().map(|f| f.t).collect()
    }

    pub fn strains(&self) -> Strains {
        compute_strains(
            &self.positions(),
            &self.material_frames(),
            &self.reference_twist,
            &self.twist_angles(),
        )
    }

    /// Rebuilds frames and reference twist for new DOFs by time-parallel
    /// transport from this state.
    pub fn with_dofs(&self, q: Vec<f64>) -> Result<RodState> {
        let positions = unpack_dofs(&q).0;
        let frames = parallel_transport_frames(&self.reference_frames, &positions)?;
        let reference_twist = reference_twist(&frames, &self.reference_twist);
        Ok(RodState {
            q,
            q_dot: self.q_dot.clone(),
            reference_frames: frames,
            reference_twist,
            head_angular_velocity: self.head_angular_velocity,
            time: self.time,
            naturals: Arc::clone(&self.naturals),
        })
    }

    /// Applies a rigid translation to every node.
    pub fn translated(&self, by: &Vec3) -> RodState {
        let mut s = self.clone();
        for j in 0..self.node_count() {
            for k in 0..3 {
                s.q[node_dof(j) + k] += by[k];
            }
        }
        s
    }
}

/// Centerline of the built flagellum as a function of axial distance `u`
/// past the attachment node.
struct Centerline {
    origin: Vec3,
    axis: Vec3,
    e1: Vec3,
    e2: Vec3,
    radius: f64,
    pitch: f64,
    ramp: f64,
    chirality: f64,
}

impl Centerline {
    fn point(&self, u: f64) -> Vec3 {
        let s = if self.ramp > 0.0 {
            (u / self.ramp).clamp(0.0, 1.0)
        } else {
            1.0
        };
        let rho = self.radius * s * s * (3.0 - 2.0 * s);
        let phi = self.chirality * 2.0 * PI * u / self.pitch;
        self.origin + self.axis * u + (self.e1 * phi.cos() + self.e2 * phi.sin()) * rho
    }

    /// Next parameter whose point lies exactly `chord` away from `point(u)`.
    fn advance(&self, u: f64, chord: f64) -> f64 {
        let p = self.point(u);
        let (mut lo, mut hi) = (u, u + chord);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (self.point(mid) - p).norm() < chord {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-17 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Builds the stress-free initial configuration: head center at the origin,
/// helix axis along `−x` so that head-first swimming moves in `+x`.
pub fn build_initial_configuration(params: &PhysicalParameters) -> Result<RodState> {
    build_with_helix(params, &HelixSpec::for_params(params))
}

pub fn build_with_helix(params: &PhysicalParameters, helix: &HelixSpec) -> Result<RodState> {
    params.validate()?;
    let n = params.node_count;
    if helix.n_helix_nodes + 1 != n {
        return Err(Error::InvalidParameter(format!(
            "helix must have N-1 = {} nodes, got {}",
            n - 1,
            helix.n_helix_nodes
        )));
    }
    let edge = params.edge_length();
    if (helix.contour_edge_length - edge).abs() > 1e-15 * edge {
        return Err(Error::InvalidParameter(format!(
            "flagellar edge length must equal 2δ = {edge:e}, got {:e}",
            helix.contour_edge_length
        )));
    }
    let available = params.helix_contour_length();
    let required = params.discretized_contour_length();
    if required > available + edge {
        return Err(Error::InconsistentDiscretization(format!(
            "(N-2)·2δ = {required:.6} m exceeds the helix contour {available:.6} m by more than one edge"
        )));
    }
    if !(helix.attachment_length > 0.0) {
        return Err(Error::InvalidParameter(
            "attachment_length must be positive".into(),
        ));
    }

    let axis = -Vec3::x();
    let curve = Centerline {
        origin: axis * helix.attachment_length,
        axis,
        // e1 × e2 = axis, so increasing phase is a right-handed turn about the axis.
        e1: Vec3::z(),
        e2: Vec3::y(),
        radius: params.helix_radius,
        pitch: params.pitch,
        ramp: helix.radius_ramp_length,
        chirality: match helix.handedness {
            Handedness::Right => 1.0,
            Handedness::Left => -1.0,
        },
    };

    let mut positions = Vec::with_capacity(n);
    positions.push(Vec3::zeros());
    let mut u = 0.0;
    positions.push(curve.point(u));
    for _ in 2..n {
        u = curve.advance(u, edge);
        positions.push(curve.point(u));
    }

    let tangents = edge_tangents(&positions, 0.0)?;
    let mut frames = Vec::with_capacity(n - 1);
    let d1 = Vec3::z();
    let d1 = (d1 - tangents[0] * tangents[0].dot(&d1)).normalize();
    frames.push(Frame {
        d1,
        d2: tangents[0].cross(&d1),
        t: tangents[0],
    });
    for j in 1..n - 1 {
        let prev = frames[j - 1];
        let d1 = parallel_transport(&prev.d1, &prev.t, &tangents[j]);
        let d1 = (d1 - tangents[j] * tangents[j].dot(&d1)).normalize();
        frames.push(Frame {
            d1,
            d2: tangents[j].cross(&d1),
            t: tangents[j],
        });
    }
    let ref_twist = reference_twist(&frames, &vec![0.0; n]);
    let twists = vec![0.0; n - 1];
    let q = pack_dofs(&positions, &twists);
    let strains = compute_strains(
        &positions,
        &material_frames(&frames, &twists),
        &ref_twist,
        &twists,
    );
    let mut voronoi = vec![0.0; n];
    for i in 1..n - 1 {
        voronoi[i] = 0.5 * (strains.edge_lengths[i - 1] + strains.edge_lengths[i]);
    }
    let naturals = NaturalStrains {
        edge_lengths: strains.edge_lengths,
        voronoi_lengths: voronoi,
        curvatures: strains.curvatures,
        twists: strains.twists,
    };
    Ok(RodState {
        q_dot: vec![0.0; q.len()],
        q,
        reference_frames: frames,
        reference_twist: ref_twist,
        head_angular_velocity: Vec3::zeros(),
        time: 0.0,
        naturals: Arc::new(naturals),
    })
}
