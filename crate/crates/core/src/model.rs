//! Nuclear charge models built from normalized Gaussians.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::ModelError;
use crate::field::{restrict_to_cell, GridFunction};
use crate::lattice::Lattice;

/// `charge * (2πσ²)^{-3/2} exp(-|x - center|² / 2σ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Gaussian {
    pub charge: f64,
    pub center: [f64; 3],
    pub width: f64,
}

impl Gaussian {
    pub fn new(charge: f64, center: [f64; 3], width: f64) -> Result<Self, ModelError> {
        if !(width.is_finite() && width > 0.0) {
            return Err(ModelError::NonPositiveWidth(width));
        }
        Ok(Self { charge, center, width })
    }

    /// Density at displacement `d` from the centre.
    #[inline]
    pub fn density_at_offset(&self, d: [f64; 3]) -> f64 {
        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
        let s2 = self.width * self.width;
        self.charge * (-r2 / (2.0 * s2)).exp() / (2.0 * PI * s2).powf(1.5)
    }

    /// Distance beyond which the density is below `1e-20` of its peak.
    fn cutoff(&self) -> f64 {
        self.width * (2.0 * 20.0 * std::f64::consts::LN_10).sqrt()
    }
}

/// Periodic host charge (uniform background plus Gaussians replicated over
/// `a Z^3`) and a localized defect `ν`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuclearModel {
    /// Uniform part of the periodic nuclear density.
    #[serde(default)]
    pub background: f64,
    /// Gaussians of one unit cell, replicated over the lattice.
    #[serde(default)]
    pub periodic: Vec<Gaussian>,
    /// Localized defect charge, not replicated.
    #[serde(default)]
    pub defect: Vec<Gaussian>,
}

impl NuclearModel {
    /// Homogeneous host of density `α²` (jellium) with the given defect.
    pub fn jellium(alpha: f64, defect: Vec<Gaussian>) -> Self {
        Self {
            background: alpha * alpha,
            periodic: Vec::new(),
            defect,
        }
    }

    pub fn validate(&self, a: f64) -> Result<(), ModelError> {
        for g in self.periodic.iter().chain(&self.defect) {
            if !(g.width.is_finite() && g.width > 0.0) {
                return Err(ModelError::NonPositiveWidth(g.width));
            }
        }
        let z = self.cell_charge(a);
        if !(z > 0.0) {
            return Err(ModelError::NonPositiveCharge(z));
        }
        Ok(())
    }

    /// Nuclear charge per unit cell, `Z = background a³ + Σ q_i`.
    pub fn cell_charge(&self, a: f64) -> f64 {
        self.background * a.powi(3) + self.periodic.iter().map(|g| g.charge).sum::<f64>()
    }

    /// Total defect charge `∫ ν`.
    pub fn defect_charge(&self) -> f64 {
        self.defect.iter().map(|g| g.charge).sum()
    }

    /// `ρ_nuc_per` sampled on the grid, summing periodic images explicitly.
    pub fn periodic_density(&self, lat: &Lattice) -> GridFunction {
        let a = lat.a();
        let bg = self.background;
        GridFunction::from_fn(*lat, |x| {
            let mut acc = bg;
            for g in &self.periodic {
                let reach = (g.cutoff() / a).ceil() as i64 + 1;
                // displacement folded into one unit cell, then images around it
                let d0 = [0, 1, 2].map(|c| {
                    let d = x[c] - g.center[c];
                    d - a * (d / a).round()
                });
                for i in -reach..=reach {
                    for j in -reach..=reach {
                        for l in -reach..=reach {
                            let d = [d0[0] + i as f64 * a, d0[1] + j as f64 * a, d0[2] + l as f64 * a];
                            acc += g.density_at_offset(d);
                        }
                    }
                }
            }
            acc
        })
    }

    /// `ν_L`: the defect restricted to `Γ_L` and periodized.
    pub fn defect_density(&self, lat: &Lattice) -> GridFunction {
        restrict_to_cell(&self.defect, lat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn periodic_density_integrates_to_cell_charge() {
        let lat = Lattice::new(1.0, 1, 16).unwrap();
        let model = NuclearModel {
            background: 0.25,
            periodic: vec![Gaussian::new(1.0, [0.1, 0.0, -0.2], 0.15).unwrap()],
            defect: vec![],
        };
        let rho = model.periodic_density(&lat);
        assert_relative_eq!(rho.integral(), model.cell_charge(1.0), max_relative = 1e-12);
        // supercell replicas carry L^3 times the charge and are R_1-periodic
        let lat2 = lat.with_supercell(2).unwrap();
        let rho2 = model.periodic_density(&lat2);
        assert_relative_eq!(rho2.integral(), 8.0 * model.cell_charge(1.0), max_relative = 1e-12);
        let shift = lat2.flat(16, 0, 0);
        assert_relative_eq!(rho2.values()[0], rho2.values()[shift], max_relative = 1e-12);
    }

    #[test]
    fn validation() {
        let bad = NuclearModel {
            background: 0.0,
            periodic: vec![],
            defect: vec![],
        };
        assert!(bad.validate(1.0).is_err());
        assert!(Gaussian::new(1.0, [0.0; 3], 0.0).is_err());
        let ok = NuclearModel::jellium(1.0, vec![]);
        assert!(ok.validate(2.0).is_ok());
        assert_relative_eq!(ok.cell_charge(2.0), 8.0);
    }
}
