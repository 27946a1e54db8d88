use nalgebra::{DMatrix, Matrix3, RowVector3, Vector3};
use serde::{Deserialize, Serialize};

use super::{verify_equilibrium, GeneratorParams, NetworkModel, OperatingPoint, EQUILIBRIUM_TOL};
use crate::error::{Error, Result};

/// Per-subsystem linear model `ẋᵢ = Aᵢxᵢ + Bᵢuᵢ + Σⱼ Gᵢⱼxⱼ`, `yᵢ = Cᵢxᵢ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedPlant {
    pub a: Vec<Matrix3<f64>>,
    pub gint: Vec<Vec<Matrix3<f64>>>,
    pub bsub: Vec<Vector3<f64>>,
    pub csub: Vec<RowVector3<f64>>,
}

impl LinearizedPlant {
    pub fn n(&self) -> usize {
        self.a.len()
    }

    pub fn a_dyn(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |r, c| self.a[i][(r, c)])
    }

    pub fn b_dyn(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(3, 1, |r, _| self.bsub[i][r])
    }

    pub fn c_dyn(&self, i: usize) -> DMatrix<f64> {
        DMatrix::from_fn(1, 3, |_, c| self.csub[i][c])
    }

    pub fn g_dyn(&self, i: usize, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(3, 3, |r, c| self.gint[i][j][(r, c)])
    }

    /// The full `3n × 3n` state matrix.
    pub fn full_a(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..n {
            for j in 0..n {
                let blk = if i == j { self.a[i] } else { self.gint[i][j] };
                out.fixed_view_mut::<3, 3>(3 * i, 3 * j).copy_from(&blk);
            }
        }
        out
    }

    pub fn full_b(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(3 * n, n);
        for i in 0..n {
            out.fixed_view_mut::<3, 1>(3 * i, i).copy_from(&self.bsub[i]);
        }
        out
    }

    pub fn full_c(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut out = DMatrix::zeros(n, 3 * n);
        for i in 0..n {
            out.fixed_view_mut::<1, 3>(i, 3 * i).copy_from(&self.csub[i]);
        }
        out
    }
}

/// Analytic Jacobian of the nonlinear right-hand side at `op`.
pub fn linearize(
    op: &OperatingPoint,
    params: &[GeneratorParams],
    net: &NetworkModel,
) -> Result<LinearizedPlant> {
    let residual = verify_equilibrium(op, params, net)?;
    if !(residual <= EQUILIBRIUM_TOL) {
        return Err(Error::NotEquilibrium { residual, tolerance: EQUILIBRIUM_TOL });
    }
    Ok(jacobian(op, params, net))
}

pub(crate) fn jacobian(op: &OperatingPoint, params: &[GeneratorParams], net: &NetworkModel) -> LinearizedPlant {
    let n = net.n();
    let d = &op.delta0;
    let e = &op.eq_prime0;
    let (g, b) = (&net.g, &net.b);

    let mut a = vec![Matrix3::zeros(); n];
    let mut gint = vec![vec![Matrix3::zeros(); n]; n];
    let mut bsub = Vec::with_capacity(n);
    let mut csub = Vec::with_capacity(n);

    for i in 0..n {
        let p = &params[i];
        let kw = p.omega0 / (2.0 * p.inertia);
        let kx = (p.xd - p.xd_prime) / p.tdo_prime;

        let mut iq = 0.0;
        let mut dpe_ddi = 0.0;
        let mut did_ddi = 0.0;
        for j in 0..n {
            let (s, c) = (d[i] - d[j]).sin_cos();
            iq += e[j] * (b[(i, j)] * s + g[(i, j)] * c);
            if j != i {
                dpe_ddi += e[i] * e[j] * (b[(i, j)] * c - g[(i, j)] * s);
                did_ddi += e[j] * (g[(i, j)] * c + b[(i, j)] * s);
            }
        }
        let dpe_dei = iq + e[i] * g[(i, i)];
        let did_dei = -b[(i, i)];

        a[i] = Matrix3::new(
            0.0, 1.0, 0.0,
            -kw * dpe_ddi, -p.damping / (2.0 * p.inertia), -kw * dpe_dei,
            -kx * did_ddi, 0.0, (-1.0 - (p.xd - p.xd_prime) * did_dei) / p.tdo_prime,
        );

        for j in 0..n {
            if j == i {
                continue;
            }
            let (s, c) = (d[i] - d[j]).sin_cos();
            let (gij, bij) = (g[(i, j)], b[(i, j)]);
            let dpe_ddj = e[i] * e[j] * (-bij * c + gij * s);
            let dpe_dej = e[i] * (bij * s + gij * c);
            let did_ddj = e[j] * (-gij * c - bij * s);
            let did_dej = gij * s - bij * c;
            gint[i][j] = Matrix3::new(
                0.0, 0.0, 0.0,
                -kw * dpe_ddj, 0.0, -kw * dpe_dej,
                -kx * did_ddj, 0.0, -kx * did_dej,
            );
        }

        bsub.push(Vector3::new(0.0, 0.0, 1.0 / p.tdo_prime));
        csub.push(RowVector3::new(1.0, 0.0, 0.0));
    }

    LinearizedPlant { a, gint, bsub, csub }
}

/// Coefficients evaluated with the closed-form table used in the
/// literature for this model, with `J = 2H`.
///
/// Kept for comparison only. Relative to [`linearize`]: `a22`, `a33` and
/// `g33` agree; `a21`, `g21` and `g23` lack the `ω0` factor; `a21` and `a31`
/// include the self term `j = i`; `a23` scales its self term differently;
/// `g31` has the opposite sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabulatedCoefficients {
    pub a21: f64,
    pub a22: f64,
    pub a23: f64,
    pub a31: f64,
    pub a33: f64,
}

/// Interaction coefficients for pair `(i, j)` from the same table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabulatedInteraction {
    pub g21: f64,
    pub g23: f64,
    pub g31: f64,
    pub g33: f64,
}

pub fn tabulated_coefficients(
    op: &OperatingPoint,
    params: &[GeneratorParams],
    net: &NetworkModel,
) -> (Vec<TabulatedCoefficients>, Vec<Vec<TabulatedInteraction>>) {
    let n = net.n();
    let d = &op.delta0;
    let e = &op.eq_prime0;
    let (g, b) = (&net.g, &net.b);
    let mut own = Vec::with_capacity(n);
    let mut inter = vec![vec![TabulatedInteraction { g21: 0.0, g23: 0.0, g31: 0.0, g33: 0.0 }; n]; n];
    for i in 0..n {
        let p = &params[i];
        let jm = 2.0 * p.inertia;
        let kx = (p.xd - p.xd_prime) / p.tdo_prime;
        let mut s21 = 0.0;
        let mut s_bg = 0.0;
        for j in 0..n {
            let (s, c) = (d[i] - d[j]).sin_cos();
            s21 += e[i] * e[j] * (g[(i, j)] * s - b[(i, j)] * c);
            s_bg += e[j] * (b[(i, j)] * s + g[(i, j)] * c);
        }
        own.push(TabulatedCoefficients {
            a21: s21 / (2.0 * p.inertia),
            a22: -p.damping / (2.0 * p.inertia),
            a23: -g[(i, i)] * e[i] / p.inertia - s_bg / jm,
            a31: -kx * s_bg,
            a33: -1.0 / p.tdo_prime + kx * b[(i, i)],
        });
        for j in 0..n {
            if j == i {
                continue;
            }
            let (s, c) = (d[i] - d[j]).sin_cos();
            let (gij, bij) = (g[(i, j)], b[(i, j)]);
            inter[i][j] = TabulatedInteraction {
                g21: -e[i] * e[j] * (gij * s - bij * c) / jm,
                g23: -e[i] * (bij * s + gij * c) / jm,
                g31: -kx * e[j] * (bij * s + gij * c),
                g33: -kx * (gij * s - bij * c),
            };
        }
    }
    (own, inter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use crate::power::PlantModel;

/// Central-difference Jacobian of the nonlinear right-hand side.
fn finite_difference_jacobian(
    op: &OperatingPoint,
    params: &[GeneratorParams],
    net: &NetworkModel,
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = net.n();
    let mut jac = DMatrix::zeros(3 * n, 3 * n);
    for k in 0..3 * n {
        let mut xp = DVector::zeros(3 * n);
        xp[k] = h;
        let xm = -&xp;
        let fp = crate::power::derivatives(&crate::power::PlantState(xp), &op.ef0, params, op, net)?;
        let fm = crate::power::derivatives(&crate::power::PlantState(xm), &op.ef0, params, op, net)?;
        jac.set_column(k, &((fp.0 - fm.0) / (2.0 * h)));
    }
    Ok(jac)
}

    fn gen(d: f64, h: f64) -> GeneratorParams {
        GeneratorParams {
            damping: d,
            inertia: h,
            omega0: 377.0,
            pm: 0.0,
            tdo_prime: 6.0,
            xd: 1.8,
            xd_prime: 0.3,
            xad: 1.65,
        }
    }

    fn three() -> PlantModel {
        let b = DMatrix::from_row_slice(3, 3, &[-1.6, 0.8, 0.5, 0.8, -1.5, 0.4, 0.5, 0.4, -1.2]);
        let g = DMatrix::from_row_slice(3, 3, &[0.2, -0.04, -0.03, -0.04, 0.15, -0.02, -0.03, -0.02, 0.12]);
        let net = NetworkModel::new(g, b).unwrap();
        PlantModel::balanced(
            vec![gen(2.0, 1.0), gen(1.0, 4.0), gen(0.5, 3.0)],
            net,
            vec![0.3, 0.1, -0.05],
            vec![1.1, 1.05, 1.02],
        )
        .unwrap()
    }

    #[test]
    fn a22_is_damping_over_twice_inertia() {
        let p = three();
        let lin = linearize(&p.operating_point, &p.generators, &p.network).unwrap();
        assert_eq!(lin.a[0][(1, 1)], -1.0);
    }

    #[test]
    fn rejects_non_equilibrium() {
        let mut p = three();
        p.generators[0].pm += 0.1;
        match linearize(&p.operating_point, &p.generators, &p.network) {
            Err(Error::NotEquilibrium { residual, .. }) => assert!(residual > 1.0),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn decoupled_network_has_no_interaction() {
        let net = NetworkModel::new(DMatrix::from_diagonal_element(2, 2, 0.1), DMatrix::from_diagonal_element(2, 2, -1.0)).unwrap();
        let p = PlantModel::balanced(vec![gen(1.0, 2.0), gen(1.0, 2.0)], net, vec![0.1, 0.2], vec![1.0, 1.1]).unwrap();
        let lin = linearize(&p.operating_point, &p.generators, &p.network).unwrap();
        assert!(lin.gint.iter().flatten().all(|m| m.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn matches_finite_differences() {
        let p = three();
        let lin = linearize(&p.operating_point, &p.generators, &p.network).unwrap();
        let fd = finite_difference_jacobian(&p.operating_point, &p.generators, &p.network, 1e-6).unwrap();
        let full = lin.full_a();
        for r in 0..9 {
            for c in 0..9 {
                let scale = full[(r, c)].abs().max(1.0);
                assert!((full[(r, c)] - fd[(r, c)]).abs() / scale < 1e-5, "({r},{c})");
            }
        }
    }

    #[test]
    fn table_agrees_where_expected() {
        let p = three();
        let lin = linearize(&p.operating_point, &p.generators, &p.network).unwrap();
        let (own, inter) = tabulated_coefficients(&p.operating_point, &p.generators, &p.network);
        for i in 0..3 {
            assert!((own[i].a22 - lin.a[i][(1, 1)]).abs() < 1e-14);
            assert!((own[i].a33 - lin.a[i][(2, 2)]).abs() < 1e-14);
            let w0 = p.generators[i].omega0;
            for j in 0..3 {
                if i == j {
                    continue;
                }
                let gj = &lin.gint[i][j];
                assert!((inter[i][j].g33 - gj[(2, 2)]).abs() < 1e-14);
                assert!((inter[i][j].g21 * w0 - gj[(1, 0)]).abs() < 1e-10);
                assert!((inter[i][j].g23 * w0 - gj[(1, 2)]).abs() < 1e-10);
                assert!((inter[i][j].g31 + gj[(2, 0)]).abs() < 1e-14);
            }
        }
    }
}
