//! Third-order multi-machine generator model.
//!
//! Each generator contributes three deviation states `[Δδ, Δω, ΔE'q]`
//! around an operating point; machines interact only through the reduced
//! network admittance `G + jB`.

pub(crate) mod dynamics;
mod linearize;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub use dynamics::{
    currents, derivatives, electrical_power, refine_equilibrium, verify_equilibrium,
};
pub use linearize::{
    linearize, tabulated_coefficients, LinearizedPlant,
    TabulatedCoefficients, TabulatedInteraction,
};

/// Residual bound used when `linearize` checks its operating point.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

pub const STATES_PER_MACHINE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorParams {
    /// Damping factor, p.u.
    #[serde(rename = "D")]
    pub damping: f64,
    /// Inertia constant, s.
    #[serde(rename = "H")]
    pub inertia: f64,
    /// Synchronous speed, rad/s.
    pub omega0: f64,
    /// Mechanical input power, p.u. (held constant).
    #[serde(rename = "Pm")]
    pub pm: f64,
    /// d-axis transient open-circuit time constant, s.
    #[serde(rename = "Tdo_prime")]
    pub tdo_prime: f64,
    pub xd: f64,
    pub xd_prime: f64,
    pub xad: f64,
}

impl GeneratorParams {
    pub fn validate(&self, index: usize) -> Result<()> {
        let bad = |field: &str, reason: &str| Err(Error::param(format!("generators[{index}].{field}"), reason));
        let all = [
            self.damping,
            self.inertia,
            self.omega0,
            self.pm,
            self.tdo_prime,
            self.xd,
            self.xd_prime,
            self.xad,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("*", "all parameters must be finite");
        }
        if self.inertia <= 0.0 {
            return bad("H", "must be > 0");
        }
        if self.tdo_prime <= 0.0 {
            return bad("Tdo_prime", "must be > 0");
        }
        if self.omega0 <= 0.0 {
            return bad("omega0", "must be > 0");
        }
        if self.damping < 0.0 {
            return bad("D", "must be >= 0");
        }
        if !(self.xd > self.xd_prime && self.xd_prime > 0.0) {
            return bad("xd", "requires xd > xd_prime > 0");
        }
        Ok(())
    }
}

/// Reduced network admittance seen from the generator internal nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub g: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl NetworkModel {
    pub fn new(g: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let net = NetworkModel { g, b };
        net.validate()?;
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.g.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.g.nrows();
        for (what, m) in [("network G", &self.g), ("network B", &self.b)] {
            if m.nrows() != n {
                return Err(Error::Dimension { what, expected: n, got: m.nrows(), index: 0 });
            }
            if m.ncols() != n {
                return Err(Error::Dimension { what, expected: n, got: m.ncols(), index: 1 });
            }
            for i in 0..n {
                for j in 0..n {
                    if !m[(i, j)].is_finite() {
                        return Err(Error::NonFinite { what, index: i * n + j });
                    }
                    if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 {
                        return Err(Error::param(what, format!("not symmetric at ({i}, {j})")));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Power angles, rad.
    pub delta0: Vec<f64>,
    /// Transient EMFs, p.u.
    #[serde(rename = "Eq_prime0")]
    pub eq_prime0: Vec<f64>,
    /// Field EMFs holding the point in equilibrium, p.u.
    #[serde(rename = "Ef0")]
    pub ef0: Vec<f64>,
}

impl OperatingPoint {
    pub fn n(&self) -> usize {
        self.delta0.len()
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        for (what, v) in [
            ("operating point delta0", &self.delta0),
            ("operating point Eq_prime0", &self.eq_prime0),
            ("operating point Ef0", &self.ef0),
        ] {
            if v.len() != n {
                return Err(Error::Dimension { what, expected: n, got: v.len(), index: 0 });
            }
            if let Some(k) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what, index: k });
            }
        }
        Ok(())
    }
}

/// Stacked deviation state `[Δδ₁, Δω₁, ΔE'q₁, Δδ₂, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState(pub DVector<f64>);

impl PlantState {
    pub fn zeros(n_machines: usize) -> Self {
        PlantState(DVector::zeros(STATES_PER_MACHINE * n_machines))
    }

    pub fn from_slice(x: &[f64]) -> Self {
        PlantState(DVector::from_column_slice(x))
    }

    pub fn n_machines(&self) -> usize {
        self.0.len() / STATES_PER_MACHINE
    }

    pub fn delta_dev(&self, i: usize) -> f64 {
        self.0[3 * i]
    }

    pub fn omega_dev(&self, i: usize) -> f64 {
        self.0[3 * i + 1]
    }

    pub fn eq_prime_dev(&self, i: usize) -> f64 {
        self.0[3 * i + 2]
    }

    pub fn subsystem(&self, i: usize) -> [f64; 3] {
        [self.0[3 * i], self.0[3 * i + 1], self.0[3 * i + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Everything needed to simulate the physical system.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub generators: Vec<GeneratorParams>,
    pub network: NetworkModel,
    pub operating_point: OperatingPoint,
}

impl PlantModel {
    pub fn n(&self) -> usize {
        self.generators.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.generators.len();
        if n == 0 {
            return Err(Error::param("generators", "at least one generator is required"));
        }
        for (i, g) in self.generators.iter().enumerate() {
            g.validate(i)?;
        }
        self.network.validate()?;
        if self.network.n() != n {
            return Err(Error::Dimension {
                what: "network",
                expected: n,
                got: self.network.n(),
                index: 0,
            });
        }
        self.operating_point.check(n)
    }

    /// Builds a plant whose operating point is an equilibrium by
    /// construction: `Pm` is matched to `Pe` and `Ef` to `Eq` at the given
    /// angles and transient EMFs.
    pub fn balanced(
        mut generators: Vec<GeneratorParams>,
        network: NetworkModel,
        delta0: Vec<f64>,
        eq_prime0: Vec<f64>,
    ) -> Result<Self> {
        let n = generators.len();
        let mut op = OperatingPoint {
            delta0,
            eq_prime0,
            ef0: vec![0.0; n],
        };
        op.check(n)?;
        let zero = PlantState::zeros(n);
        let (id, _) = currents(&zero, &op, &network)?;
        let (pe, _) = electrical_power(&zero, &op, &network)?;
        for (i, g) in generators.iter_mut().enumerate() {
            g.pm = pe[i];
            op.ef0[i] = op.eq_prime0[i] + (g.xd - g.xd_prime) * id[i];
        }
        let plant = PlantModel {
            generators,
            network,
            operating_point: op,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PlantFile = serde_json::from_str(text)?;
        file.try_into()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PlantFile::from(self))?)
    }
}

/// On-disk plant description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub generators: Vec<GeneratorParams>,
    #[serde(rename = "G")]
    pub g: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub operating_point: OperatingPoint,
}

impl TryFrom<PlantFile> for PlantModel {
    type Error = Error;

    fn try_from(f: PlantFile) -> Result<Self> {
        let network = NetworkModel {
            g: linalg::from_rows(&f.g)?,
            b: linalg::from_rows(&f.b)?,
        };
        let plant = PlantModel {
            generators: f.generators,
            network,
            operating_point: f.operating_point,
        };
        plant.validate()?;
        Ok(plant)
    }
}

impl From<&PlantModel> for PlantFile {
    fn from(p: &PlantModel) -> Self {
        PlantFile {
            name: None,
            generators: p.generators.clone(),
            g: linalg::to_rows(&p.network.g),
            b: linalg::to_rows(&p.network.b),
            operating_point: p.operating_point.clone(),
        }
    }
}
