//! Decentralized state-feedback stand-in for the nominal controller.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::observability::DEFAULT_RANK_TOL;
use crate::power::LinearizedPlant;

/// Poles used for every subsystem when a scenario does not set any.
pub const DEFAULT_POLES: [[f64; 2]; 3] = [[-1.0, 0.0], [-2.0, 0.0], [-3.0, 0.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerConfig {
    /// Closed-loop poles `[re, im]` per subsystem.
    Poles(Vec<Vec<[f64; 2]>>),
    /// Explicit gain rows per subsystem.
    Gains(Vec<Vec<f64>>),
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig::Poles(Vec::new())
    }
}

/// Ackermann's formula for a single-input pair.
pub fn place_poles(a: &DMatrix<f64>, b: &DVector<f64>, poles: &[C64]) -> Result<RowDVector<f64>> {
    let n = a.nrows();
    if poles.len() != n {
        return Err(Error::Dimension { what: "pole list", expected: n, got: poles.len(), index: 0 });
    }
    // Characteristic polynomial coefficients, highest power first.
    let mut coeff = vec![C64::new(1.0, 0.0)];
    for &p in poles {
        let mut next = vec![C64::new(0.0, 0.0); coeff.len() + 1];
        for (k, &c) in coeff.iter().enumerate() {
            next[k] += c;
            next[k + 1] -= c * p;
        }
        coeff = next;
    }
    let scale = coeff.iter().map(|c| c.norm()).fold(1.0, f64::max);
    if coeff.iter().any(|c| c.im.abs() > 1e-9 * scale) {
        return Err(Error::param("poles", "complex poles must come in conjugate pairs"));
    }
    let mut phi = DMatrix::<f64>::zeros(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for k in (0..=n).rev() {
        phi += &power * coeff[k].re;
        power = &power * a;
    }
    let mut ctrb = DMatrix::zeros(n, n);
    let mut col = b.clone();
    for k in 0..n {
        ctrb.set_column(k, &col);
        col = a * col;
    }
    if linalg::numerical_rank(&ctrb, DEFAULT_RANK_TOL) < n {
        return Err(Error::Singular("uncontrollable pair in pole placement"));
    }
    let inv = ctrb.try_inverse().ok_or(Error::Singular("controllability matrix"))?;
    let mut en = RowDVector::zeros(n);
    en[n - 1] = 1.0;
    Ok(en * inv * phi)
}

/// Gain rows for every subsystem of `lin`.
pub fn controller_gains(cfg: &ControllerConfig, lin: &LinearizedPlant) -> Result<Vec<[f64; 3]>> {
    let n = lin.n();
    match cfg {
        ControllerConfig::Gains(rows) => {
            if rows.len() != n {
                return Err(Error::Dimension { what: "controller.gains", expected: n, got: rows.len(), index: 0 });
            }
            rows.iter()
                .enumerate()
                .map(|(i, r)| {
                    if r.len() != 3 {
                        return Err(Error::Dimension { what: "controller.gains row", expected: 3, got: r.len(), index: i });
                    }
                    if r.iter().any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite { what: "controller.gains", index: i });
                    }
                    Ok([r[0], r[1], r[2]])
                })
                .collect()
        }
        ControllerConfig::Poles(sets) => {
            if !sets.is_empty() && sets.len() != n {
                return Err(Error::Dimension { what: "controller.poles", expected: n, got: sets.len(), index: 0 });
            }
            (0..n)
                .map(|i| {
                    let poles: Vec<C64> = match sets.get(i) {
                        Some(s) => s.iter().map(|p| C64::new(p[0], p[1])).collect(),
                        None => DEFAULT_POLES.iter().map(|p| C64::new(p[0], p[1])).collect(),
                    };
                    let b = DVector::from_column_slice(lin.bsub[i].as_slice());
                    let k = place_poles(&lin.a_dyn(i), &b, &poles)?;
                    Ok([k[0], k[1], k[2]])
                })
                .collect()
        }
    }
}

/// `uᵢ = −Kᵢ x̂ᵢ + u₀ᵢ`.
pub fn nominal_controller(estimates: &[[f64; 3]], gains: &[[f64; 3]], u0: &[f64]) -> Vec<f64> {
    estimates
        .iter()
        .zip(gains)
        .zip(u0)
        .map(|((x, k), &u)| u - (k[0] * x[0] + k[1] * x[1] + k[2] * x[2]))
        .collect()
}
