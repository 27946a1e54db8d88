use nalgebra::{DMatrix, DVector};

use super::{GeneratorParams, NetworkModel, OperatingPoint, PlantModel, PlantState};
use crate::error::{Error, Result};

fn check_state(state: &PlantState, n: usize) -> Result<()> {
    if state.0.len() != 3 * n {
        return Err(Error::Dimension {
            what: "plant state",
            expected: 3 * n,
            got: state.0.len(),
            index: 0,
        });
    }
    if let Some(k) = state.0.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "plant state", index: k });
    }
    Ok(())
}

/// Absolute angles and transient EMFs from deviations.
fn absolute(state: &[f64], op: &OperatingPoint, delta: &mut [f64], e: &mut [f64]) {
    for i in 0..delta.len() {
        delta[i] = op.delta0[i] + state[3 * i];
        e[i] = op.eq_prime0[i] + state[3 * i + 2];
    }
}

/// Stator currents for absolute angles `delta` and EMFs `e`.
pub(crate) fn network_currents(
    delta: &[f64],
    e: &[f64],
    net: &NetworkModel,
    id: &mut [f64],
    iq: &mut [f64],
) {
    let n = delta.len();
    for i in 0..n {
        let mut sd = 0.0;
        let mut sq = 0.0;
        for j in 0..n {
            let (s, c) = (delta[i] - delta[j]).sin_cos();
            let g = net.g[(i, j)];
            let b = net.b[(i, j)];
            sd += e[j] * (g * s - b * c);
            sq += e[j] * (b * s + g * c);
        }
        id[i] = sd;
        iq[i] = sq;
    }
}

/// `(I_d, I_q)` per machine at the given deviation state.
pub fn currents(
    state: &PlantState,
    op: &OperatingPoint,
    net: &NetworkModel,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = net.n();
    op.check(n)?;
    check_state(state, n)?;
    let mut delta = vec![0.0; n];
    let mut e = vec![0.0; n];
    absolute(state.as_slice(), op, &mut delta, &mut e);
    let mut id = vec![0.0; n];
    let mut iq = vec![0.0; n];
    network_currents(&delta, &e, net, &mut id, &mut iq);
    Ok((DVector::from_vec(id), DVector::from_vec(iq)))
}

/// `(P_e, Q_e)` per machine at the given deviation state.
pub fn electrical_power(
    state: &PlantState,
    op: &OperatingPoint,
    net: &NetworkModel,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (id, iq) = currents(state, op, net)?;
    let n = net.n();
    let e = DVector::from_fn(n, |i, _| op.eq_prime0[i] + state.eq_prime_dev(i));
    Ok((e.component_mul(&iq), e.component_mul(&id)))
}

/// Reusable buffers for allocation-free right-hand-side evaluation.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    delta: Vec<f64>,
    e: Vec<f64>,
    id: Vec<f64>,
    iq: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(n: usize) -> Self {
        Workspace {
            delta: vec![0.0; n],
            e: vec![0.0; n],
            id: vec![0.0; n],
            iq: vec![0.0; n],
        }
    }
}

/// Writes `dx/dt` into `out`. Lengths are trusted.
pub(crate) fn rhs_into(
    x: &[f64],
    u: &[f64],
    plant: &PlantModel,
    mech_offset: &[f64],
    ws: &mut Workspace,
    out: &mut [f64],
) {
    let op = &plant.operating_point;
    absolute(x, op, &mut ws.delta, &mut ws.e);
    network_currents(&ws.delta, &ws.e, &plant.network, &mut ws.id, &mut ws.iq);
    for (i, g) in plant.generators.iter().enumerate() {
        let pe = ws.e[i] * ws.iq[i];
        let eq = ws.e[i] + (g.xd - g.xd_prime) * ws.id[i];
        let dw = x[3 * i + 1];
        out[3 * i] = dw;
        out[3 * i + 1] = -g.damping / (2.0 * g.inertia) * dw
            + g.omega0 / (2.0 * g.inertia) * (g.pm + mech_offset[i] - pe);
        out[3 * i + 2] = (u[i] - eq) / g.tdo_prime;
    }
}

/// Continuous-time right-hand side. `u_field` holds absolute field EMFs.
pub fn derivatives(
    state: &PlantState,
    u_field: &[f64],
    params: &[GeneratorParams],
    op: &OperatingPoint,
    net: &NetworkModel,
) -> Result<PlantState> {
    let n = net.n();
    if params.len() != n {
        return Err(Error::Dimension { what: "generator params", expected: n, got: params.len(), index: 0 });
    }
    if u_field.len() != n {
        return Err(Error::Dimension { what: "field input", expected: n, got: u_field.len(), index: 0 });
    }
    if let Some(k) = u_field.iter().position(|x| !x.is_finite()) {
        return Err(Error::NonFinite { what: "field input", index: k });
    }
    op.check(n)?;
    check_state(state, n)?;
    let plant = PlantModel {
        generators: params.to_vec(),
        network: net.clone(),
        operating_point: op.clone(),
    };
    let mut out = vec![0.0; 3 * n];
    let zeros = vec![0.0; n];
    rhs_into(state.as_slice(), u_field, &plant, &zeros, &mut Workspace::new(n), &mut out);
    Ok(PlantState(DVector::from_vec(out)))
}

/// Infinity norm of the right-hand side at zero deviation with `u = Ef0`.
pub fn verify_equilibrium(
    op: &OperatingPoint,
    params: &[GeneratorParams],
    net: &NetworkModel,
) -> Result<f64> {
    let n = net.n();
    let f = derivatives(&PlantState::zeros(n), &op.ef0, params, op, net)?;
    Ok(f.0.amax())
}

/// Damped Newton iteration on `(δ, E'q)` that moves the operating point onto
/// the nearest equilibrium for the fixed `Pm` and `Ef0`. Machine 1's angle is
/// held as the reference.
pub fn refine_equilibrium(plant: &PlantModel, max_iter: usize) -> Result<OperatingPoint> {
    plant.validate()?;
    let n = plant.n();
    let residual = |op: &OperatingPoint| -> Result<DVector<f64>> {
        let zero = PlantState::zeros(n);
        let (id, iq) = currents(&zero, op, &plant.network)?;
        Ok(DVector::from_fn(2 * n, |k, _| {
            let i = k % n;
            let g = &plant.generators[i];
            if k < n {
                g.pm - op.eq_prime0[i] * iq[i]
            } else {
                op.ef0[i] - op.eq_prime0[i] - (g.xd - g.xd_prime) * id[i]
            }
        }))
    };
    let mut op = plant.operating_point.clone();
    let mut r = residual(&op)?;
    for _ in 0..max_iter {
        if r.amax() < 1e-13 {
            break;
        }
        // Forward-difference Jacobian over the unknowns δ₂..δₙ, E'₁..E'ₙ.
        let unknowns = 2 * n - 1;
        let mut jac = DMatrix::zeros(2 * n, unknowns);
        for col in 0..unknowns {
            let mut p = op.clone();
            let h;
            if col < n - 1 {
                h = 1e-7 * (1.0 + p.delta0[col + 1].abs());
                p.delta0[col + 1] += h;
            } else {
                let i = col - (n - 1);
                h = 1e-7 * (1.0 + p.eq_prime0[i].abs());
                p.eq_prime0[i] += h;
            }
            let rp = residual(&p)?;
            jac.set_column(col, &((rp - &r) / h));
        }
        let step = jac
            .svd(true, true)
            .solve(&(-&r), 1e-12)
            .map_err(|_| Error::Singular("equilibrium Newton step"))?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let mut cand = op.clone();
            for col in 0..unknowns {
                if col < n - 1 {
                    cand.delta0[col + 1] += t * step[col];
                } else {
                    cand.eq_prime0[col - (n - 1)] += t * step[col];
                }
            }
            let rc = residual(&cand)?;
            if rc.norm() < r.norm() {
                op = cand;
                r = rc;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    Ok(op)
}
