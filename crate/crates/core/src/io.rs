//! File formats: CSV for numeric series, JSON for everything else.
//!
//! Writers build the whole file in memory and publish it with
//! [`write_atomic`], so readers never see a half-written file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::learning::{Calibration, InverseMaps, JointMap, MlpModel};
use crate::stepper::TrajectorySample;
use crate::trajectory::{FitWindow, SteeringDatapoint};
use crate::{Error, Result, Vec3};

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,x1x,x1y,x1z,x2x,x2y,x2z,omega";
pub const DATASET_HEADER: &str = "t_H,t_L,h,alpha,beta,l";
/// First characters of the trailer appended to series cut short by an error.
pub const INCOMPLETE_MARK: &str = "# incomplete:";

fn file_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::File {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| file_error(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(|e| file_error(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        file_error(path, e)
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    serde_json::from_str(&text).map_err(|e| file_error(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// One compact JSON document per line.
pub fn json_lines<T: Serialize>(items: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for it in items {
        serde_json::to_writer(&mut out, it)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn push_row(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&v.to_string());
    }
    out.push('\n');
}

/// Trajectory CSV. With `failure`, a marked trailer records why the series
/// ends early.
pub fn trajectory_csv(samples: &[TrajectorySample], failure: Option<&str>) -> String {
    let mut out = String::with_capacity(64 * (samples.len() + 1));
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for s in samples {
        push_row(
            &mut out,
            &[
                s.t, s.x0.x, s.x0.y, s.x0.z, s.x1.x, s.x1.y, s.x1.z, s.x2.x, s.x2.y, s.x2.z,
                s.omega,
            ],
        );
    }
    if let Some(msg) = failure {
        out.push_str(INCOMPLETE_MARK);
        out.push(' ');
        out.push_str(&msg.replace('\n', " "));
        out.push('\n');
    }
    out
}

fn read_rows(path: &Path, header: &str) -> Result<Vec<Vec<f64>>> {
    let text = fs::read_to_string(path).map_err(|e| file_error(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let got = reader.headers()?.iter().collect::<Vec<_>>().join(",");
    if got != header {
        return Err(file_error(
            path,
            format!("expected header `{header}`, found `{got}`"),
        ));
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // Header is line 1.
        let line = rec
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(i as u64 + 2, |p| p.line());
        let bad = |m: String| file_error(path, format!("row {line}: {m}"));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if rec.len() != width {
            return Err(bad(format!("expected {width} fields, found {}", rec.len())));
        }
        let row = rec
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("`{f}` is not a finite number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectorySample>> {
    Ok(read_rows(path, TRAJECTORY_HEADER)?
        .into_iter()
        .map(|r| TrajectorySample {
            t: r[0],
            x0: Vec3::new(r[1], r[2], r[3]),
            x1: Vec3::new(r[4], r[5], r[6]),
            x2: Vec3::new(r[7], r[8], r[9]),
            omega: r[10],
        })
        .collect())
}

pub fn dataset_csv(points: &[SteeringDatapoint]) -> String {
    let mut out = String::from(DATASET_HEADER);
    out.push('\n');
    for p in points {
        push_row(&mut out, &[p.t_h, p.t_l, p.h, p.alpha, p.beta, p.l]);
    }
    out
}

/// Reads a dataset, rejecting rows that break the datapoint invariants.
pub fn read_dataset_csv(path: &Path) -> Result<Vec<SteeringDatapoint>> {
    read_rows(path, DATASET_HEADER)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let p = SteeringDatapoint {
                t_h: r[0],
                t_l: r[1],
                h: r[2],
                alpha: r[3],
                beta: r[4],
                l: r[5],
            };
            if p.is_valid() {
                Ok(p)
            } else {
                Err(file_error(
                    path,
                    format!("row {}: datapoint out of range {p:?}", i + 2),
                ))
            }
        })
        .collect()
}

pub fn tracking_csv(errors: &[(f64, f64)]) -> String {
    let mut out = String::from("t,distance\n");
    for &(t, d) in errors {
        push_row(&mut out, &[t, d]);
    }
    out
}

/// Waypoint file: a JSON array of `[x, y, z]` in meters.
pub fn read_waypoints(path: &Path) -> Result<Vec<Vec3>> {
    let raw: Vec<[f64; 3]> = read_json(path)?;
    if raw.len() < 2 {
        return Err(file_error(
            path,
            format!("need at least 2 waypoints, found {}", raw.len()),
        ));
    }
    if raw.iter().flatten().any(|v| !v.is_finite()) {
        return Err(file_error(path, "non-finite coordinate"));
    }
    Ok(raw.into_iter().map(Vec3::from).collect())
}

pub fn write_waypoints(path: &Path, points: &[Vec3]) -> Result<()> {
    let raw: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    write_json(path, &raw)
}

/// Constants stored next to the four model files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapsMeta {
    pub calibration: Calibration,
    pub omega_l_rpm: f64,
    pub omega_h_rpm: f64,
    pub window: FitWindow,
}

pub const MODEL_FILES: [&str; 4] = ["f_H.json", "f_L.json", "f_beta.json", "f_l.json"];
pub const META_FILE: &str = "maps.json";
pub const JOINT_FILE: &str = "joint.json";

pub fn save_models(dir: &Path, maps: &InverseMaps) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| file_error(dir, e))?;
    let models = [&maps.f_h, &maps.f_l, &maps.f_beta, &maps.f_lpos];
    let mut written = Vec::new();
    for (name, m) in MODEL_FILES.iter().zip(models) {
        let p = dir.join(name);
        write_json(&p, m)?;
        written.push(p);
    }
    if let Some(j) = &maps.joint {
        let p = dir.join(JOINT_FILE);
        write_json(&p, j)?;
        written.push(p);
    }
    let meta = MapsMeta {
        calibration: maps.calibration,
        omega_l_rpm: maps.omega_l_rpm,
        omega_h_rpm: maps.omega_h_rpm,
        window: maps.window,
    };
    let p = dir.join(META_FILE);
    write_json(&p, &meta)?;
    written.push(p);
    Ok(written)
}

pub fn load_models(dir: &Path) -> Result<InverseMaps> {
    let load = |name: &str| -> Result<MlpModel> {
        let p = dir.join(name);
        if !p.is_file() {
            return Err(file_error(&p, "model file not found"));
        }
        let m: MlpModel = read_json(&p)?;
        if !m.is_finite() || m.input_dim() != 2 || m.output_dim() != 1 {
            return Err(file_error(
                &p,
                "not a 2-input scalar model with finite weights",
            ));
        }
        Ok(m)
    };
    let [f_h, f_l, f_beta, f_lpos] = [0, 1, 2, 3].map(|i| load(MODEL_FILES[i]));
    let (f_h, f_l, f_beta, f_lpos) = (f_h?, f_l?, f_beta?, f_lpos?);
    let meta_path = dir.join(META_FILE);
    if !meta_path.is_file() {
        return Err(file_error(&meta_path, "model metadata not found"));
    }
    let meta: MapsMeta = read_json(&meta_path)?;
    let joint_path = dir.join(JOINT_FILE);
    let joint = if joint_path.is_file() {
        Some(read_json::<JointMap>(&joint_path)?)
    } else {
        None
    };
    Ok(InverseMaps {
        f_h,
        f_l,
        f_beta,
        f_lpos,
        joint,
        calibration: meta.calibration,
        omega_l_rpm: meta.omega_l_rpm,
        omega_h_rpm: meta.omega_h_rpm,
        window: meta.window,
    })
}
