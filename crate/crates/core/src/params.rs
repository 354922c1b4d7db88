//! Geometry, material, fluid and discretization constants.

use serde::{Deserialize, Serialize};
use std::f64::consts::{E, PI};

use crate::{Error, Result};

/// Physical parameter set of the robot, SI units throughout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalParameters {
    /// Axial length of the helix `L` [m].
    pub axial_length: f64,
    /// Helix pitch `λ` [m].
    pub pitch: f64,
    /// Helix radius `R` [m].
    pub helix_radius: f64,
    /// Radius of the rod cross-section `r0` [m].
    pub rod_radius: f64,
    /// Young's modulus `E` [Pa].
    pub youngs_modulus: f64,
    /// Poisson's ratio `ν`.
    pub poisson_ratio: f64,
    /// Head radius `b` [m].
    pub head_radius: f64,
    /// Fluid viscosity `μ` [Pa·s].
    pub viscosity: f64,
    /// Rod (and head) density `ρ` [kg/m³].
    pub density: f64,
    /// Number of nodes `N`, head center included.
    pub node_count: usize,
    /// Integration time step `Δt` [s].
    pub time_step: f64,
}

/// Named parameter presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Full-resolution parameters (N = 122, Δt = 1 ms).
    Reference,
    /// Coarse parameters for quick runs (N = 42, Δt = 5 ms).
    Desk,
}

impl PhysicalParameters {
    /// The reference robot: 13 cm helix, 1 mm rod, 1 cm head in a 2.7 Pa·s fluid.
    pub fn reference() -> Self {
        Self {
            axial_length: 0.13,
            pitch: 32.6e-3,
            helix_radius: 6.04e-3,
            rod_radius: 1.0e-3,
            youngs_modulus: 1.0e6,
            poisson_ratio: 0.5,
            head_radius: 0.01,
            viscosity: 2.7,
            density: 127.0e3,
            node_count: 122,
            time_step: 1.0e-3,
        }
    }

    /// Coarse variant of [`reference`](Self::reference) with 42 nodes.
    ///
    /// The edge length is tied to the rod radius, so a coarser mesh over the
    /// same helix needs a thicker rod. The radius is tripled and Young's
    /// modulus divided by 3⁴, which keeps the bending and twisting
    /// stiffnesses (and the helix geometry) identical to the reference robot.
    pub fn desk() -> Self {
        let base = Self::reference();
        let scale = 3.0;
        Self {
            rod_radius: base.rod_radius * scale,
            youngs_modulus: base.youngs_modulus / scale.powi(4),
            node_count: 42,
            time_step: 5.0e-3,
            ..base
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Reference => Self::reference(),
            Preset::Desk => Self::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("axial_length", self.axial_length),
            ("pitch", self.pitch),
            ("helix_radius", self.helix_radius),
            ("rod_radius", self.rod_radius),
            ("youngs_modulus", self.youngs_modulus),
            ("head_radius", self.head_radius),
            ("viscosity", self.viscosity),
            ("density", self.density),
            ("time_step", self.time_step),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and positive, got {value}"
                )));
            }
        }
        if !(0.0..=0.5).contains(&self.poisson_ratio) {
            return Err(Error::InvalidParameter(format!(
                "poisson_ratio must lie in [0, 0.5], got {}",
                self.poisson_ratio
            )));
        }
        if self.node_count < 4 {
            return Err(Error::InvalidParameter(format!(
                "node_count must be at least 4, got {}",
                self.node_count
            )));
        }
        Ok(())
    }

    /// Natural cutoff length `δ = r0·√e / 2`.
    pub fn cutoff(&self) -> f64 {
        self.rod_radius * E.sqrt() / 2.0
    }

    /// Flagellar edge length `2δ`.
    pub fn edge_length(&self) -> f64 {
        2.0 * self.cutoff()
    }

    /// Contour length of a helix with the configured axial length, pitch and radius.
    pub fn helix_contour_length(&self) -> f64 {
        let turns = self.axial_length / self.pitch;
        turns * ((2.0 * PI * self.helix_radius).powi(2) + self.pitch.powi(2)).sqrt()
    }

    /// Contour length spanned by the flagellar edges, `(N − 2)·2δ`.
    pub fn discretized_contour_length(&self) -> f64 {
        (self.node_count - 2) as f64 * self.edge_length()
    }

    pub fn shear_modulus(&self) -> f64 {
        self.youngs_modulus / (2.0 * (1.0 + self.poisson_ratio))
    }

    /// Mass of the rigid head (sphere of density `ρ`).
    pub fn head_mass(&self) -> f64 {
        4.0 / 3.0 * PI * self.head_radius.powi(3) * self.density
    }

    /// Rod mass per unit length.
    pub fn rod_linear_density(&self) -> f64 {
        self.density * PI * self.rod_radius.powi(2)
    }

    /// Rotational inertia of the rod about its own axis per unit length.
    pub fn rod_polar_inertia_density(&self) -> f64 {
        self.density * PI * self.rod_radius.powi(4) / 2.0
    }
}

impl Default for PhysicalParameters {
    fn default() -> Self {
        Self::reference()
    }
}
