//! Initial data presets.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mesh::{BoxDomain, Mesh, Vec3};
use crate::scheme::{initial_state, SchemeParams, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// `ρ ≡ ρ̄`, `m ≡ 0`
    Stationary,
    /// `ρ = ρ̄ + A exp(−r²/σ²)` around the box center, `m ≡ 0`
    Bump,
    /// `ρ ≡ ρ̄`, `m = ρ (A sin(2πy), 0, 0)`
    Shear,
}

impl FromStr for PresetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stationary" => Ok(PresetKind::Stationary),
            "bump" => Ok(PresetKind::Bump),
            "shear" => Ok(PresetKind::Shear),
            _ => Err(Error::InvalidArgument(format!(
                "unknown preset '{s}' (expected stationary, bump or shear)"
            ))),
        }
    }
}

impl fmt::Display for PresetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PresetKind::Stationary => "stationary",
            PresetKind::Bump => "bump",
            PresetKind::Shear => "shear",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub kind: PresetKind,
    pub rho_bar: f64,
    pub amplitude: f64,
    pub sigma: f64,
    pub domain: BoxDomain,
}

impl Preset {
    pub fn new(kind: PresetKind, domain: BoxDomain) -> Self {
        Preset {
            kind,
            rho_bar: 1.0,
            amplitude: 0.5,
            sigma: 0.25,
            domain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho_bar >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rho_bar must be >= 0, got {}",
                self.rho_bar
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument("amplitude must be finite".into()));
        }
        Ok(())
    }

    pub fn rho0(&self, x: &Vec3) -> f64 {
        match self.kind {
            PresetKind::Bump => {
                let r2 = (x - self.domain.center()).norm_squared();
                self.rho_bar + self.amplitude * (-r2 / (self.sigma * self.sigma)).exp()
            }
            PresetKind::Stationary | PresetKind::Shear => self.rho_bar,
        }
    }

    pub fn m0(&self, x: &Vec3) -> Vec3 {
        match self.kind {
            PresetKind::Shear => {
                let ly = self.domain.extents().y;
                let y = (x.y - self.domain.lower.y) / ly;
                Vec3::new(self.amplitude * (2.0 * PI * y).sin(), 0.0, 0.0) * self.rho0(x)
            }
            PresetKind::Stationary | PresetKind::Bump => Vec3::zeros(),
        }
    }

    pub fn initial_state(&self, mesh: &Mesh, params: &SchemeParams) -> Result<State> {
        self.validate()?;
        initial_state(&|x| self.rho0(x), &|x| self.m0(x), mesh, params)
    }
}
