//! Steering dataset generation and the small regressors that invert the
//! steering dynamics.
//!
//! Every regressor is a fully connected network with `tanh` hidden layers
//! and a linear output, trained by Levenberg–Marquardt on a Bayesian
//! (evidence-adapted) weight-decay objective.

use crate::error::{Error, Result};
use crate::stepper::{AngularVelocityProfile, Simulator};
use crate::trajectory::{parameterize_segment, Azimuth, FitWindow, SteeringDatapoint};
use crate::{rpm_to_rad_s, Vec3};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Hidden layer sizes used by every regressor.
pub const HIDDEN_LAYERS: [usize; 3] = [20, 10, 5];

/// Affine map `x -> (x - shift) / scale`, per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

/// How output dimensions are scaled before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScaling {
    /// Each output to unit variance.
    #[default]
    PerDimension,
    /// One common scale, so outputs keep their relative magnitudes in the
    /// loss.
    Shared,
}

impl Normalizer {
    /// Zero mean and unit variance per column of `rows`. Constant columns
    /// keep scale 1.
    pub fn fit(rows: &[Vec<f64>], scaling: OutputScaling) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let shift: Vec<f64> = (0..dim)
            .map(|d| rows.iter().map(|r| r[d]).sum::<f64>() / n)
            .collect();
        let std: Vec<f64> = (0..dim)
            .map(|d| (rows.iter().map(|r| (r[d] - shift[d]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        let fix = |s: f64| if s > 0.0 && s.is_finite() { s } else { 1.0 };
        let scale = match scaling {
            OutputScaling::PerDimension => std.iter().map(|&s| fix(s)).collect(),
            OutputScaling::Shared => {
                let rms = (std.iter().map(|s| s * s).sum::<f64>() / dim.max(1) as f64).sqrt();
                vec![fix(rms); dim]
            }
        };
        Self { shift, scale }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, k))| (v - s) / k)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (s, k))| v * k + s)
            .collect()
    }
}

/// Summary of a training run stored with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub seed: u64,
    pub epochs: usize,
    /// RMS error on the training split, in output units.
    pub train_rmse: Vec<f64>,
    /// RMS error on the validation split, in output units.
    pub validation_rmse: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub effective_parameters: f64,
}

/// Trained feed-forward regressor with its normalizers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    /// Row-major `out × in` weight matrix per layer.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub input_normalizer: Normalizer,
    pub output_normalizer: Normalizer,
    /// Axis-aligned bounding box of the training inputs.
    pub input_bounds: Vec<(f64, f64)>,
    pub training: TrainingRecord,
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap_or(&0)
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let z = self.input_normalizer.normalize(x);
        let params = flatten(&self.weights, &self.biases);
        let y = forward(&self.layer_sizes, &params, &z);
        self.output_normalizer.denormalize(&y)
    }

    /// First output of [`predict`](Self::predict).
    pub fn predict_scalar(&self, x: &[f64]) -> f64 {
        self.predict(x)[0]
    }

    /// True when `x` lies inside the training bounding box.
    pub fn in_hull(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(&self.input_bounds)
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }

    /// `x` clamped to the training bounding box.
    pub fn clamp_to_hull(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.input_bounds)
            .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .flatten()
            .all(|v| v.is_finite())
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

fn flatten(weights: &[Vec<f64>], biases: &[Vec<f64>]) -> Vec<f64> {
    let mut p = Vec::new();
    for (w, b) in weights.iter().zip(biases) {
        p.extend_from_slice(w);
        p.extend_from_slice(b);
    }
    p
}

fn unflatten(sizes: &[usize], p: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let (mut ws, mut bs, mut at) = (Vec::new(), Vec::new(), 0);
    for w in sizes.windows(2) {
        let (i, o) = (w[0], w[1]);
        ws.push(p[at..at + o * i].to_vec());
        at += o * i;
        bs.push(p[at..at + o].to_vec());
        at += o;
    }
    (ws, bs)
}

/// Layer activations for input `z`; the last entry is the network output.
fn activations(sizes: &[usize], p: &[f64], z: &[f64]) -> Vec<Vec<f64>> {
    let mut acts = vec![z.to_vec()];
    let mut at = 0;
    let layers = sizes.len() - 1;
    for (l, w) in sizes.windows(2).enumerate() {
        let (i, o) = (w[0], w[1]);
        let prev = &acts[l];
        let bias = at + o * i;
        let next: Vec<f64> = (0..o)
            .map(|r| {
                let row = &p[at + r * i..at + (r + 1) * i];
                let s = p[bias + r] + row.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>();
                if l + 1 < layers {
                    s.tanh()
                } else {
                    s
                }
            })
            .collect();
        at = bias + o;
        acts.push(next);
    }
    acts
}

fn forward(sizes: &[usize], p: &[f64], z: &[f64]) -> Vec<f64> {
    activations(sizes, p, z).pop().unwrap_or_default()
}

/// Output and the gradient of every output with respect to the parameters
/// (`out × P`, row-major).
fn forward_with_jacobian(sizes: &[usize], p: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let acts = activations(sizes, p, z);
    let n_params = p.len();
    let layers = sizes.len() - 1;
    let mut offsets = Vec::with_capacity(layers);
    let mut at = 0;
    for w in sizes.windows(2) {
        offsets.push(at);
        at += w[1] * (w[0] + 1);
    }
    let out_dim = sizes[layers];
    let mut jac = vec![0.0; out_dim * n_params];
    for o in 0..out_dim {
        let row = &mut jac[o * n_params..(o + 1) * n_params];
        let mut delta = vec![0.0; out_dim];
        delta[o] = 1.0;
        for l in (0..layers).rev() {
            let (i, n_out) = (sizes[l], sizes[l + 1]);
            let off = offsets[l];
            let prev = &acts[l];
            for r in 0..n_out {
                let d = delta[r];
                if d != 0.0 {
                    for c in 0..i {
                        row[off + r * i + c] = d * prev[c];
                    }
                }
                row[off + n_out * i + r] = d;
            }
            if l > 0 {
                delta = (0..i)
                    .map(|c| {
                        let s: f64 = (0..n_out).map(|r| p[off + r * i + c] * delta[r]).sum();
                        s * (1.0 - prev[c] * prev[c])
                    })
                    .collect();
            }
        }
    }
    (acts[layers].clone(), jac)
}

/// Training controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainControls {
    pub seed: u64,
    pub max_epochs: usize,
    /// Fraction of the data held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Initial weight-decay and data-fit hyperparameters.
    pub alpha: f64,
    pub beta: f64,
    /// Re-estimate `alpha` and `beta` from the evidence every epoch.
    pub adapt_hyperparameters: bool,
    pub output_scaling: OutputScaling,
}

impl Default for TrainControls {
    fn default() -> Self {
        Self {
            seed: 0,
            max_epochs: 500,
            validation_fraction: 0.2,
            patience: 25,
            alpha: 1e-2,
            beta: 1.0,
            adapt_hyperparameters: true,
            output_scaling: OutputScaling::PerDimension,
        }
    }
}

const MU_INIT: f64 = 5e-3;
const MU_MAX: f64 = 1e10;
const MIN_SAMPLES: usize = 20;
/// Relative validation gain below which an epoch counts as stagnant.
const MIN_IMPROVEMENT: f64 = 1e-3;

/// Trains a `[in, 20, 10, 5, out]` network mapping `inputs` to `targets`.
/// Spectral factors of the Gauss-Newton matrix. The eigenproblem is solved on
/// the smaller Gram matrix so that damped solves cost O(N P).
struct GaussNewton {
    jac: DMatrix<f64>,
    basis: DMatrix<f64>,
    kappa: Vec<f64>,
    wide: bool,
}

impl GaussNewton {
    fn new(jac: DMatrix<f64>) -> Self {
        let wide = jac.nrows() <= jac.ncols();
        let gram = if wide {
            &jac * jac.transpose()
        } else {
            jac.tr_mul(&jac)
        };
        let eig = gram.symmetric_eigen();
        let kappa = eig.eigenvalues.iter().map(|k| k.max(0.0)).collect();
        Self {
            jac,
            basis: eig.eigenvectors,
            kappa,
            wide,
        }
    }

    /// Solves (beta JtJ + lambda I) x = -g.
    fn solve(&self, g: &DVector<f64>, beta: f64, lambda: f64) -> DVector<f64> {
        if self.wide {
            let mut c = self.basis.tr_mul(&(&self.jac * g));
            for (c, &k) in c.iter_mut().zip(&self.kappa) {
                *c *= beta / (lambda * (beta * k + lambda));
            }
            self.jac.tr_mul(&(&self.basis * c)) - g / lambda
        } else {
            let mut c = self.basis.tr_mul(g);
            for (c, &k) in c.iter_mut().zip(&self.kappa) {
                *c /= beta * k + lambda;
            }
            -(&self.basis * c)
        }
    }
}

pub fn train_regressor(
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    controls: &TrainControls,
) -> Result<MlpModel> {
    if inputs.len() != targets.len() {
        return Err(Error::InvalidInput(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.len() < MIN_SAMPLES {
        return Err(Error::InsufficientSamples(format!(
            "training needs at least {MIN_SAMPLES} datapoints, got {}",
            inputs.len()
        )));
    }
    let in_dim = inputs[0].len();
    let out_dim = targets[0].len();
    if inputs.iter().any(|r| r.len() != in_dim) || targets.iter().any(|r| r.len() != out_dim) {
        return Err(Error::InvalidInput("ragged training data".into()));
    }
    if inputs
        .iter()
        .chain(targets)
        .flatten()
        .any(|v| !v.is_finite())
    {
        return Err(Error::InvalidInput("non-finite training data".into()));
    }
    let mut sizes = vec![in_dim];
    sizes.extend_from_slice(&HIDDEN_LAYERS);
    sizes.push(out_dim);

    let input_normalizer = Normalizer::fit(inputs, OutputScaling::PerDimension);
    let output_normalizer = Normalizer::fit(targets, controls.output_scaling);
    let zin: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| input_normalizer.normalize(x))
        .collect();
    let zout: Vec<Vec<f64>> = targets
        .iter()
        .map(|y| output_normalizer.normalize(y))
        .collect();

    let mut params = initial_parameters(&sizes, &mut ChaCha8Rng::seed_from_u64(controls.seed));
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(controls.seed, 101)));
    let n_val = ((inputs.len() as f64) * controls.validation_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val.min(inputs.len() - MIN_SAMPLES / 2));

    let n_params = params.len();
    let n_res = train_idx.len() * out_dim;
    let (mut alpha, mut beta) = (controls.alpha, controls.beta);
    let mut mu = MU_INIT;
    let mut gamma = n_params as f64;

    let residuals = |p: &[f64], idx: &[usize]| -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| {
                let y = forward(&sizes, p, &zin[i]);
                y.into_iter()
                    .zip(&zout[i])
                    .map(|(a, b)| a - b)
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();

    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut stagnant = 0;
    let mut epochs = 0;
    for epoch in 0..controls.max_epochs {
        epochs = epoch + 1;
        let mut jac = DMatrix::zeros(n_res, n_params);
        let mut e = DVector::zeros(n_res);
        for (s, &i) in train_idx.iter().enumerate() {
            let (y, jrows) = forward_with_jacobian(&sizes, &params, &zin[i]);
            for o in 0..out_dim {
                let r = s * out_dim + o;
                e[r] = y[o] - zout[i][o];
                for c in 0..n_params {
                    jac[(r, c)] = jrows[o * n_params + c];
                }
            }
        }
        let w = DVector::from_column_slice(&params);
        let sse = e.norm_squared();
        let ssw = w.norm_squared();
        if !sse.is_finite() || !ssw.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss at epoch {epoch}; last stable iterate kept at epoch {}",
                epoch.saturating_sub(1)
            )));
        }
        let jte = jac.tr_mul(&e);
        let gauss = GaussNewton::new(jac);
        if controls.adapt_hyperparameters && epoch > 0 {
            gamma = gauss
                .kappa
                .iter()
                .map(|&l| beta * l / (beta * l + alpha))
                .sum::<f64>()
                .clamp(1.0, n_params as f64);
            alpha = (gamma / ssw.max(1e-300)).clamp(1e-10, 1e10);
            beta = ((n_res as f64 - gamma).max(1.0) / sse.max(1e-300)).clamp(1e-10, 1e10);
        }
        let objective = |sse: f64, ssw: f64| 0.5 * (beta * sse + alpha * ssw);
        let f0 = objective(sse, ssw);
        let grad = jte * beta + &w * alpha;
        let mut accepted = false;
        while mu <= MU_MAX {
            let step = gauss.solve(&grad, beta, alpha + mu);
            let trial: Vec<f64> = params.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let f1 = objective(sq(&residuals(&trial, train_idx)), sq(&trial));
            if f1.is_finite() && f1 < f0 {
                params = trial;
                mu = (mu * 0.1).max(1e-20);
                accepted = true;
                break;
            }
            mu *= 10.0;
        }
        let score = if val_idx.is_empty() {
            sq(&residuals(&params, train_idx))
        } else {
            sq(&residuals(&params, val_idx))
        };
        if score < best_val {
            // Marginal gains still update the best iterate but count as stagnant.
            if score < best_val * (1.0 - MIN_IMPROVEMENT) {
                stagnant = 0;
            } else {
                stagnant += 1;
            }
            best_val = score;
            best = params.clone();
        } else {
            stagnant += 1;
        }
        if !accepted || stagnant >= controls.patience {
            break;
        }
    }

    let rmse = |idx: &[usize]| -> Vec<f64> {
        (0..out_dim)
            .map(|o| {
                if idx.is_empty() {
                    return 0.0;
                }
                let s: f64 = idx
                    .iter()
                    .map(|&i| {
                        let y = forward(&sizes, &best, &zin[i]);
                        ((y[o] - zout[i][o]) * output_normalizer.scale[o]).powi(2)
                    })
                    .sum();
                (s / idx.len() as f64).sqrt()
            })
            .collect()
    };
    let (train_rmse, validation_rmse) = (rmse(train_idx), rmse(val_idx));
    let (weights, biases) = unflatten(&sizes, &best);
    let input_bounds = (0..in_dim)
        .map(|d| {
            inputs
                .iter()
                .map(|r| r[d])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();
    let model = MlpModel {
        layer_sizes: sizes.clone(),
        weights,
        biases,
        input_normalizer,
        output_normalizer,
        input_bounds,
        training: TrainingRecord {
            seed: controls.seed,
            epochs,
            train_rmse,
            validation_rmse,
            alpha,
            beta,
            effective_parameters: gamma,
        },
    };
    if !model.is_finite() {
        return Err(Error::Training("trained parameters are not finite".into()));
    }
    Ok(model)
}

/// Uniform Glorot initialization.
fn initial_parameters(sizes: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p = Vec::with_capacity(param_count(sizes));
    for w in sizes.windows(2) {
        let (i, o) = (w[0], w[1]);
        let limit = (6.0 / (i + o) as f64).sqrt();
        for _ in 0..o * i {
            p.push(rng.gen_range(-limit..limit));
        }
        p.extend(std::iter::repeat(0.0).take(o));
    }
    p
}

/// Per-output sum of squared training errors, in output units.
pub fn loss_shares(model: &MlpModel, inputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Vec<f64> {
    let mut shares = vec![0.0; model.output_dim()];
    for (x, y) in inputs.iter().zip(targets) {
        for (s, (p, t)) in shares.iter_mut().zip(model.predict(x).iter().zip(y)) {
            *s += (p - t).powi(2);
        }
    }
    shares
}

/// How segment end times are chosen along each long trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentSampling {
    /// Evenly spaced over the admissible range, the last at `t_total`.
    #[default]
    Even,
    /// Uniformly random over the admissible range.
    Random,
}

/// Schedule of the long steering runs and the segments cut from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    /// Length of each run [s].
    pub t_total: f64,
    /// Pulse durations, one run each [s].
    pub t_h_grid: Vec<f64>,
    /// Pulse start [s].
    pub t_0: f64,
    pub segments_per_trajectory: usize,
    pub segment_sampling: SegmentSampling,
    pub seed: u64,
    /// Below- and above-buckling rates [rpm].
    pub omega_l_rpm: f64,
    pub omega_h_rpm: f64,
    pub window: FitWindow,
    /// Turns below this angle are rejected [deg].
    pub min_turn_deg: f64,
    pub azimuth: Azimuth,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            t_total: 400.0,
            t_h_grid: vec![16.0, 20.0, 24.0, 28.0, 32.0, 36.0, 40.0, 44.0],
            t_0: 30.0,
            segments_per_trajectory: 8,
            segment_sampling: SegmentSampling::Even,
            seed: 0,
            omega_l_rpm: 3.0,
            omega_h_rpm: 20.0,
            window: FitWindow::default(),
            min_turn_deg: 5.0,
            azimuth: Azimuth::Full,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.omega_l_rpm > 0.0 && self.omega_h_rpm > self.omega_l_rpm) {
            return bad(format!(
                "need 0 < omega_l < omega_h, got {} and {} rpm",
                self.omega_l_rpm, self.omega_h_rpm
            ));
        }
        if !(self.t_0 >= self.window.span()) {
            return bad(format!(
                "t_0 = {} s is shorter than the fit window",
                self.t_0
            ));
        }
        if self.segments_per_trajectory == 0 {
            return bad("segments_per_trajectory must be positive".into());
        }
        for &t_h in &self.t_h_grid {
            if !(t_h >= 0.0) || self.t_0 + t_h + self.window.span() >= self.t_total {
                return bad(format!(
                    "t_H = {t_h} s leaves no admissible segment within t_total = {} s",
                    self.t_total
                ));
            }
        }
        Ok(())
    }

    /// Segment end times for a run with pulse length `t_h`, on the
    /// observation grid.
    pub fn end_times(&self, t_h: f64, index: usize) -> Vec<f64> {
        let lo = self.t_0 + t_h + self.window.span();
        let n = self.segments_per_trajectory;
        let dt = self.window.dt;
        let snap = |t: f64| ((t / dt).round() * dt).min(self.t_total);
        let mut times: Vec<f64> = match self.segment_sampling {
            SegmentSampling::Even => (1..=n)
                .map(|i| snap(lo + (self.t_total - lo) * i as f64 / n as f64))
                .collect(),
            SegmentSampling::Random => {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    self.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                );
                (0..n)
                    .map(|_| snap(rng.gen_range(lo..self.t_total)))
                    .collect()
            }
        };
        times.retain(|&t| t > lo);
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

/// Why a candidate segment was left out of the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub t_h: f64,
    pub t_e: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub points: Vec<SteeringDatapoint>,
    pub rejections: Vec<Rejection>,
}

/// Runs one long simulation per `t_H` and cuts it into datapoints. Runs
/// are independent and merged in grid order.
pub fn generate_dataset(sim: &Simulator, spec: &DatasetSpec) -> Result<DatasetReport> {
    spec.validate()?;
    let runs: Vec<(Vec<SteeringDatapoint>, Vec<Rejection>)> = spec
        .t_h_grid
        .par_iter()
        .enumerate()
        .map(|(index, &t_h)| run_trajectory(sim, spec, index, t_h))
        .collect();
    let mut report = DatasetReport::default();
    for (points, rejections) in runs {
        report.points.extend(points);
        report.rejections.extend(rejections);
    }
    Ok(report)
}

fn run_trajectory(
    sim: &Simulator,
    spec: &DatasetSpec,
    index: usize,
    t_h: f64,
) -> (Vec<SteeringDatapoint>, Vec<Rejection>) {
    let profile = AngularVelocityProfile::pulse(
        rpm_to_rad_s(spec.omega_l_rpm),
        rpm_to_rad_s(spec.omega_h_rpm),
        spec.t_0,
        t_h,
    );
    let traj = match sim.simulate(&profile, spec.t_total, spec.window.dt, None) {
        Ok(t) => t,
        Err(e) => {
            log::warn!("trajectory t_H = {t_h} s failed: {e}");
            return (
                Vec::new(),
                vec![Rejection {
                    t_h,
                    t_e: None,
                    reason: format!("simulation failed: {e}"),
                }],
            );
        }
    };
    let mut points = Vec::new();
    let mut rejections = Vec::new();
    for t_e in spec.end_times(t_h, index) {
        let t_l = t_e - spec.t_0 - t_h;
        match parameterize_segment(
            &traj.samples,
            spec.t_0,
            t_h,
            t_l,
            &spec.window,
            spec.min_turn_deg,
            spec.azimuth,
        ) {
            Ok(p) if p.is_valid() => points.push(p),
            Ok(p) => rejections.push(Rejection {
                t_h,
                t_e: Some(t_e),
                reason: format!("datapoint out of range: {p:?}"),
            }),
            Err(e) => {
                log::info!("segment t_H = {t_h} s, t_e = {t_e} s rejected: {e}");
                rejections.push(Rejection {
                    t_h,
                    t_e: Some(t_e),
                    reason: e.to_string(),
                });
            }
        }
    }
    (points, rejections)
}

/// Steady straight-swimming kinematics at one motor rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    /// Head speed [m/s].
    pub v_omega_l: f64,
    /// Spin of the body frame `n` about the swimming direction [rpm]. The
    /// head counter-rotates, so this is below the motor rate.
    pub body_rate_rpm: f64,
}

/// Measures speed and body-frame spin at `omega_rpm` over `span` seconds
/// after a transient.
pub fn calibrate(
    sim: &Simulator,
    omega_rpm: f64,
    transient: f64,
    span: f64,
) -> Result<Calibration> {
    if !(transient >= 0.0 && span > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "calibration needs a positive span, got transient {transient} s and span {span} s"
        )));
    }
    let interval = 0.5;
    let traj = sim.simulate(
        &AngularVelocityProfile::constant(rpm_to_rad_s(omega_rpm)),
        transient + span,
        interval,
        None,
    )?;
    let s: Vec<_> = traj
        .samples
        .iter()
        .filter(|s| s.t >= transient - 1e-9)
        .collect();
    if s.len() < 3 {
        return Err(Error::InsufficientSamples(
            "calibration run too short".into(),
        ));
    }
    let (first, last) = (s[0], s[s.len() - 1]);
    let d = last.x0 - first.x0;
    let v = d.norm() / (last.t - first.t);
    let dir = d.normalize();
    // Unwrapped angle of n about the swimming direction, then a slope fit.
    let mut angle = 0.0;
    let mut prev: Option<Vec3> = None;
    let mut pts = Vec::with_capacity(s.len());
    for x in &s {
        let n = crate::trajectory::body_frame(&dir, &x.x1, &x.x2)?.n;
        if let Some(p) = prev {
            angle += p.cross(&n).dot(&dir).atan2(p.dot(&n));
        }
        prev = Some(n);
        pts.push((x.t, angle));
    }
    let m = pts.len() as f64;
    let (mt, ma) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0 / m, b + p.1 / m));
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - ma)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    Ok(Calibration {
        v_omega_l: v,
        body_rate_rpm: crate::rad_s_to_rpm(sxy / sxx),
    })
}

/// Slope `c` of the least-squares fit `alpha ≈ c t_H + c0`, with `alpha` in
/// radians, and its standard error.
pub fn steering_slope(data: &[SteeringDatapoint]) -> Result<(f64, f64)> {
    if data.len() < 3 {
        return Err(Error::InsufficientSamples(
            "slope needs at least 3 datapoints".into(),
        ));
    }
    let n = data.len() as f64;
    let mx = data.iter().map(|d| d.t_h).sum::<f64>() / n;
    let my = data.iter().map(|d| d.alpha.to_radians()).sum::<f64>() / n;
    let sxx: f64 = data.iter().map(|d| (d.t_h - mx).powi(2)).sum();
    let sxy: f64 = data
        .iter()
        .map(|d| (d.t_h - mx) * (d.alpha.to_radians() - my))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::Training("no variation of t_H in the dataset".into()));
    }
    let c = sxy / sxx;
    let c0 = my - c * mx;
    let rss: f64 = data
        .iter()
        .map(|d| (d.alpha.to_radians() - c * d.t_h - c0).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    Ok((c, se))
}

/// Seeds for the four regressors, derived from one base seed.
fn sub_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_add(k.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// The four inverse maps and the constants the controller needs with them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseMaps {
    /// `(h, alpha) -> t_H`.
    pub f_h: MlpModel,
    /// `(h, alpha) -> t_L`.
    pub f_l: MlpModel,
    /// `(t_H, t_L) -> beta`.
    pub f_beta: MlpModel,
    /// `(t_H, t_L) -> l`.
    pub f_lpos: MlpModel,
    /// Optional joint `(h, alpha) -> (t_H, t_L)` map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joint: Option<JointMap>,
    /// Steady kinematics at `omega_l_rpm`.
    pub calibration: Calibration,
    pub omega_l_rpm: f64,
    pub omega_h_rpm: f64,
    pub window: FitWindow,
}

impl InverseMaps {
    /// `(t_H, t_L)` for the desired leg, preferring the joint map when
    /// present. Queries outside the training hull are clamped with a warning.
    pub fn durations(&self, h: f64, alpha: f64) -> (f64, f64) {
        let x = [h, alpha];
        if let Some(j) = &self.joint {
            return j.predict(h, alpha);
        }
        let q = clamp_query(&self.f_h, &x, "f_H");
        (
            self.f_h.predict_scalar(&q),
            self.f_l.predict_scalar(&clamp_query(&self.f_l, &x, "f_L")),
        )
    }

    /// `(beta, l)` realized by a pulse of `t_h` followed by `t_l`.
    pub fn realized(&self, t_h: f64, t_l: f64) -> (f64, f64) {
        let x = [t_h, t_l];
        (
            self.f_beta
                .predict_scalar(&clamp_query(&self.f_beta, &x, "f_beta")),
            self.f_lpos
                .predict_scalar(&clamp_query(&self.f_lpos, &x, "f_l")),
        )
    }
}

fn clamp_query(model: &MlpModel, x: &[f64], name: &str) -> Vec<f64> {
    if model.in_hull(x) {
        x.to_vec()
    } else {
        let q = model.clamp_to_hull(x);
        log::warn!("{name} query {x:?} outside the training hull, clamped to {q:?}");
        q
    }
}

/// Two-output map trained on rescaled durations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointMap {
    pub model: MlpModel,
    /// Slope of alpha [rad] against t_H [s].
    pub c: f64,
    pub v_omega_l: f64,
    /// Whether targets were rescaled to `(h c t_H, v t_L)`.
    pub scaled: bool,
}

impl JointMap {
    pub fn predict(&self, h: f64, alpha: f64) -> (f64, f64) {
        let x = clamp_query(&self.model, &[h, alpha], "f_HL");
        let y = self.model.predict(&x);
        if self.scaled {
            (y[0] / (h * self.c), y[1] / self.v_omega_l)
        } else {
            (y[0], y[1])
        }
    }

    /// Targets for `data` in the units the network is trained on.
    pub fn targets(data: &[SteeringDatapoint], c: f64, v: f64, scaled: bool) -> Vec<Vec<f64>> {
        data.iter()
            .map(|d| {
                if scaled {
                    vec![d.h * c * d.t_h, v * d.t_l]
                } else {
                    vec![d.t_h, d.t_l]
                }
            })
            .collect()
    }
}

fn hl_inputs(data: &[SteeringDatapoint]) -> Vec<Vec<f64>> {
    data.iter().map(|d| vec![d.h, d.alpha]).collect()
}

fn durations_inputs(data: &[SteeringDatapoint]) -> Vec<Vec<f64>> {
    data.iter().map(|d| vec![d.t_h, d.t_l]).collect()
}

fn column(data: &[SteeringDatapoint], f: impl Fn(&SteeringDatapoint) -> f64) -> Vec<Vec<f64>> {
    data.iter().map(|d| vec![f(d)]).collect()
}

/// Trains `f_H`, `f_L`, `f_beta` and `f_l` on `data`.
pub fn fit_inverse_maps(
    data: &[SteeringDatapoint],
    calibration: Calibration,
    spec: &DatasetSpec,
    controls: &TrainControls,
) -> Result<InverseMaps> {
    if data.is_empty() {
        return Err(Error::InsufficientSamples("dataset is empty".into()));
    }
    let with_seed = |k| TrainControls {
        seed: sub_seed(controls.seed, k),
        ..*controls
    };
    let hl = hl_inputs(data);
    let dur = durations_inputs(data);
    let f_h = train_regressor(&hl, &column(data, |d| d.t_h), &with_seed(1))?;
    let f_l = train_regressor(&hl, &column(data, |d| d.t_l), &with_seed(2))?;
    let f_beta = train_regressor(&dur, &column(data, |d| d.beta), &with_seed(3))?;
    let f_lpos = train_regressor(&dur, &column(data, |d| d.l), &with_seed(4))?;
    probe_monotonicity(&f_l);
    Ok(InverseMaps {
        f_h,
        f_l,
        f_beta,
        f_lpos,
        joint: None,
        calibration,
        omega_l_rpm: spec.omega_l_rpm,
        omega_h_rpm: spec.omega_h_rpm,
        window: spec.window,
    })
}

/// Trains the joint `(h, alpha) -> (t_H, t_L)` map. With `scaled`, targets
/// are `(h c t_H, v t_L)` so both outputs weigh equally in end-point error.
pub fn fit_joint_inverse_map(
    data: &[SteeringDatapoint],
    v_omega_l: f64,
    scaled: bool,
    controls: &TrainControls,
) -> Result<JointMap> {
    let (c, se) = steering_slope(data)?;
    if !(c.abs() > 2.0 * se) || c == 0.0 {
        return Err(Error::Training(format!(
            "steering slope c = {c:e} rad/s is not significantly nonzero (standard error {se:e})"
        )));
    }
    let controls = TrainControls {
        seed: sub_seed(controls.seed, 5),
        output_scaling: OutputScaling::Shared,
        ..*controls
    };
    let model = train_regressor(
        &hl_inputs(data),
        &JointMap::targets(data, c, v_omega_l, scaled),
        &controls,
    )?;
    Ok(JointMap {
        model,
        c,
        v_omega_l,
        scaled,
    })
}

/// Warns when `t_L` fails to grow with `h` at fixed `alpha` inside the
/// training box.
fn probe_monotonicity(f_l: &MlpModel) {
    let (h_lo, h_hi) = f_l.input_bounds[0];
    let (a_lo, a_hi) = f_l.input_bounds[1];
    let steps = 10;
    for i in 0..=steps {
        let a = a_lo + (a_hi - a_lo) * i as f64 / steps as f64;
        let mut prev = f64::NEG_INFINITY;
        for j in 0..=steps {
            let h = h_lo + (h_hi - h_lo) * j as f64 / steps as f64;
            let t = f_l.predict_scalar(&[h, a]);
            if t < prev {
                log::warn!("f_L is not monotone in h at alpha = {a:.2} deg (h = {h:.4} m)");
                break;
            }
            prev = t;
        }
    }
}

/// End point predicted from a datapoint's own `(h, alpha, beta, l)` on the
/// canonical frame `v = x`, `n = y`.
pub fn reconstruct_endpoint(h: f64, alpha: f64, beta: f64, l: f64) -> Vec3 {
    let (a, b) = (alpha.to_radians(), beta.to_radians());
    let p1 = Vec3::new(l, 0.0, 0.0);
    p1 + h * Vec3::new(a.cos(), a.sin() * b.cos(), a.sin() * b.sin())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{body_frame, desired_parameters};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn grid(n: usize, offset: f64) -> Vec<Vec<f64>> {
        let mut v = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let x = PI * (i as f64 + offset) / (n - 1) as f64;
                let y = PI * (j as f64 + offset) / (n - 1) as f64;
                v.push(vec![x.min(PI), y.min(PI)]);
            }
        }
        v
    }

    #[test]
    fn fits_sine_cosine_surface() {
        let x = grid(20, 0.0);
        let y: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0].sin() * p[1].cos()]).collect();
        let m = train_regressor(&x, &y, &TrainControls::default()).unwrap();
        let held = grid(19, 0.5);
        let truth: Vec<f64> = held.iter().map(|p| p[0].sin() * p[1].cos()).collect();
        let mse: f64 = held
            .iter()
            .zip(&truth)
            .map(|(p, t)| (m.predict_scalar(p) - t).powi(2))
            .sum::<f64>()
            / held.len() as f64;
        let rmse = mse.sqrt() / m.output_normalizer.scale[0];
        assert!(rmse < 1e-2, "normalized held-out RMSE {rmse}");
    }

    #[test]
    fn constant_target_is_reproduced() {
        let x = grid(6, 0.0);
        let c = 3.25;
        let y: Vec<Vec<f64>> = x.iter().map(|_| vec![c]).collect();
        let m = train_regressor(&x, &y, &TrainControls::default()).unwrap();
        for p in grid(5, 0.3) {
            assert!((m.predict_scalar(&p) - c).abs() <= 1e-3 * c + 1e-6);
        }
    }

    #[test]
    fn too_few_points_are_rejected() {
        let x = vec![vec![0.0, 1.0]; 10];
        let y = vec![vec![1.0]; 10];
        assert!(matches!(
            train_regressor(&x, &y, &TrainControls::default()),
            Err(Error::InsufficientSamples(_))
        ));
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let x = grid(6, 0.0);
        let y: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0] * p[1] + 0.1]).collect();
        let m = train_regressor(&x, &y, &TrainControls::default()).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        let back: MlpModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        for p in grid(7, 0.2) {
            assert_eq!(back.predict(&p), m.predict(&p));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let x = grid(6, 0.0);
        let y: Vec<Vec<f64>> = x.iter().map(|p| vec![(p[0] - p[1]).sin()]).collect();
        let c = TrainControls {
            seed: 17,
            ..TrainControls::default()
        };
        let a = train_regressor(&x, &y, &c).unwrap();
        let b = train_regressor(&x, &y, &c).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn duplicated_data_matches_with_halved_beta() {
        let x = grid(6, 0.0);
        let y: Vec<Vec<f64>> = x.iter().map(|p| vec![p[0].cos() + 0.3 * p[1]]).collect();
        let fixed = TrainControls {
            adapt_hyperparameters: false,
            validation_fraction: 0.0,
            max_epochs: 60,
            ..TrainControls::default()
        };
        let a = train_regressor(&x, &y, &fixed).unwrap();
        let (x2, y2): (Vec<_>, Vec<_>) = x
            .iter()
            .zip(&y)
            .flat_map(|(p, t)| [(p.clone(), t.clone()), (p.clone(), t.clone())])
            .unzip();
        // The shuffled order changes nothing without a validation split, so
        // only the data term doubles.
        let b = train_regressor(&x2, &y2, &TrainControls { beta: 0.5, ..fixed }).unwrap();
        for p in grid(5, 0.1) {
            assert!((a.predict_scalar(&p) - b.predict_scalar(&p)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn normalizer_roundtrip(rows in prop::collection::vec(prop::collection::vec(-1e3..1e3f64, 3), 2..20)) {
            for scaling in [OutputScaling::PerDimension, OutputScaling::Shared] {
                let n = Normalizer::fit(&rows, scaling);
                prop_assert!(n.scale.iter().all(|s| *s > 0.0));
                for r in &rows {
                    let back = n.denormalize(&n.normalize(r));
                    for (a, b) in back.iter().zip(r) {
                        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
                    }
                }
            }
        }
    }

    /// Smooth stand-in for the steering response: the turn angle grows with
    /// the pulse, the leg with the after-turn duration. `(h, alpha)` carry
    /// measurement noise of equal end-point size `eps`.
    fn synthetic_steering(eps: f64, shift: f64) -> (Vec<SteeringDatapoint>, f64) {
        let v = 3.8e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut noise = || rng.gen_range(-1.0..1.0) * eps;
        let mut data = Vec::new();
        for i in 0..12 {
            let t_h = 16.0 + 2.5 * (i as f64 + shift);
            for j in 0..12 {
                let t_l = 20.0 + 25.0 * (j as f64 + shift);
                // The leg includes the distance covered during the pulse.
                let h = v * t_l + 0.03;
                let alpha = 2.0 * (t_h - 14.0) + 0.02 * t_l;
                data.push(SteeringDatapoint {
                    t_h,
                    t_l,
                    h: h + noise(),
                    alpha: alpha + (noise() / h).to_degrees(),
                    beta: 30.0 * ((t_h + t_l) / 80.0).sin(),
                    l: 0.01 - 2e-5 * t_l,
                });
            }
        }
        (data, v)
    }

    #[test]
    fn spectral_solve_matches_dense_cholesky() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for (rows, cols) in [(7, 19), (19, 7), (6, 6)] {
            let jac = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
            let g = DVector::from_fn(cols, |_, _| rng.gen_range(-1.0..1.0));
            let (beta, lambda) = (3.5, 0.02);
            let mut h = jac.tr_mul(&jac) * beta;
            for d in 0..cols {
                h[(d, d)] += lambda;
            }
            let want = h.cholesky().unwrap().solve(&(-&g));
            let got = GaussNewton::new(jac).solve(&g, beta, lambda);
            assert!((got - &want).norm() < 1e-9 * want.norm(), "{rows}x{cols}");
        }
    }

    #[test]
    fn slope_matches_normal_equations() {
        let (data, _) = synthetic_steering(0.0, 0.0);
        let (c, se) = steering_slope(&data).unwrap();
        let a = DMatrix::from_fn(data.len(), 2, |r, k| if k == 0 { data[r].t_h } else { 1.0 });
        let b = DVector::from_iterator(data.len(), data.iter().map(|d| d.alpha.to_radians()));
        let sol = (a.transpose() * &a)
            .cholesky()
            .unwrap()
            .solve(&(a.transpose() * b));
        assert!((c - sol[0]).abs() < 1e-9);
        assert!(se > 0.0 && c.abs() > 2.0 * se);
    }

    #[test]
    fn flat_alpha_is_rejected_for_joint_training() {
        let (mut data, v) = synthetic_steering(0.0, 0.0);
        for (k, d) in data.iter_mut().enumerate() {
            d.alpha = 10.0 + if k % 2 == 0 { 0.5 } else { -0.5 };
        }
        assert!(matches!(
            fit_joint_inverse_map(&data, v, true, &TrainControls::default()),
            Err(Error::Training(_))
        ));
    }

    #[test]
    fn unscaled_joint_loss_is_biased_toward_t_l() {
        let (data, v) = synthetic_steering(1e-3, 0.0);
        let controls = TrainControls::default();
        let x = hl_inputs(&data);
        let (c, _) = steering_slope(&data).unwrap();
        let unscaled = fit_joint_inverse_map(&data, v, false, &controls).unwrap();
        let s = loss_shares(&unscaled.model, &x, &JointMap::targets(&data, c, v, false));
        assert!(s[1] / s[0] > 10.0, "unscaled shares {s:?}");
        let scaled = fit_joint_inverse_map(&data, v, true, &controls).unwrap();
        let s = loss_shares(&scaled.model, &x, &JointMap::targets(&data, c, v, true));
        let ratio = s[1].max(s[0]) / s[1].min(s[0]);
        assert!(ratio < 10.0, "scaled shares {s:?}");
    }

    #[test]
    fn inverse_maps_are_self_consistent() {
        let (data, v) = synthetic_steering(0.0, 0.0);
        let maps = fit_inverse_maps(
            &data,
            Calibration {
                v_omega_l: v,
                body_rate_rpm: 1.4,
            },
            &DatasetSpec::default(),
            &TrainControls::default(),
        )
        .unwrap();
        let rms_b = maps.f_beta.training.train_rmse[0];
        let rms_l = maps.f_lpos.training.train_rmse[0];
        let (mut bad_b, mut bad_l) = (0, 0);
        for d in &data {
            let (b, l) = maps.realized(d.t_h, d.t_l);
            bad_b += usize::from((b - d.beta).abs() > 2.5 * rms_b + 1e-9);
            bad_l += usize::from((l - d.l).abs() > 2.5 * rms_l + 1e-12);
        }
        // Residuals of a noise-free fit are not Gaussian, so the band is loose.
        assert!(
            bad_b * 10 <= data.len() && bad_l * 10 <= data.len(),
            "{bad_b} {bad_l}"
        );

        let (held, _) = synthetic_steering(0.0, 0.5);
        let held: Vec<_> = held
            .into_iter()
            .filter(|d| d.t_h < 43.0 && d.t_l < 295.0)
            .collect();
        let mut errs: Vec<f64> = held
            .iter()
            .map(|d| {
                let (t_h, t_l) = maps.durations(d.h, d.alpha);
                let (b, l) = maps.realized(t_h, t_l);
                let want = reconstruct_endpoint(d.h, d.alpha, d.beta, d.l);
                (reconstruct_endpoint(d.h, d.alpha, b, l) - want).norm() / d.h
            })
            .collect();
        errs.sort_by(f64::total_cmp);
        let median = errs[errs.len() / 2];
        assert!(median < 0.05, "median relative end-point error {median}");
    }

    #[test]
    fn endpoint_reconstruction_inverts_maneuver_parameters() {
        let frame = body_frame(&Vec3::x(), &Vec3::y(), &Vec3::zeros()).unwrap();
        let frame = crate::trajectory::BodyFrame {
            n: Vec3::y(),
            w: Vec3::z(),
            ..frame
        };
        for (h, a, b, l) in [(0.03, 20.0, 35.0, 0.01), (0.05, 120.0, -60.0, -0.004)] {
            let p2 = reconstruct_endpoint(h, a, b, l);
            let m = desired_parameters(
                &Vec3::zeros(),
                &Vec3::new(l, 0.0, 0.0),
                &p2,
                &frame,
                Azimuth::Printed,
            )
            .unwrap();
            assert!((m.h_d - h).abs() < 1e-12 && (m.alpha_d - a).abs() < 1e-9);
            assert!((m.beta_d - b).abs() < 1e-9 && (m.l_d - l).abs() < 1e-12);
        }
    }

    #[test]
    fn end_times_respect_the_admissible_range() {
        let spec = DatasetSpec::default();
        for (k, &t_h) in spec.t_h_grid.iter().enumerate() {
            for sampling in [SegmentSampling::Even, SegmentSampling::Random] {
                let s = DatasetSpec {
                    segment_sampling: sampling,
                    ..spec.clone()
                };
                let t = s.end_times(t_h, k);
                assert!(!t.is_empty() && t.len() <= s.segments_per_trajectory);
                for &te in &t {
                    let t_l = te - s.t_0 - t_h;
                    assert!(t_l > s.window.span() && te <= s.t_total);
                }
            }
            assert_eq!(*spec.end_times(t_h, k).last().unwrap(), spec.t_total);
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad = DatasetSpec {
            omega_h_rpm: 2.0,
            ..DatasetSpec::default()
        };
        assert!(bad.validate().is_err());
        let bad = DatasetSpec {
            t_h_grid: vec![500.0],
            ..DatasetSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
