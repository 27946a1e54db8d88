//! Adaptive high-gain observer in chain coordinates.
//!
//! A single-output pair `(A, c)` is mapped to `z = T x` with `T` the
//! observability matrix, so that `ż_k = z_{k+1}` for `k < n` and
//! `ż_n = r z`. The observer copies the chain, injects `ℓ_k L^k e₁` on every
//! row and adapts `L` from the output error.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::observability::{StateSpace, DEFAULT_RANK_TOL};

/// Required decay of the error dynamics, relative to `L`, in [`Observer::gain_floor`].
pub const FLOOR_DECAY: f64 = 0.2;
const GAIN_GRID_RATIO: f64 = 1.25;

pub const DEFAULT_L_MAX: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct ChainForm {
    pub n: usize,
    /// Physical to chain coordinates.
    pub t: DMatrix<f64>,
    pub t_inv: DMatrix<f64>,
    /// Last row of `T A T⁻¹`; the part of the dynamics outside the chain.
    pub residual_dynamics: RowDVector<f64>,
    /// `T B`.
    pub b_chain: DMatrix<f64>,
    /// Output row used to build `T`.
    pub c: RowDVector<f64>,
}

impl ChainForm {
    /// The pure chain `A_c` (ones on the superdiagonal).
    pub fn chain_matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |i, j| if j == i + 1 { 1.0 } else { 0.0 })
    }

    /// `A_c + e_n r`, the full transformed state matrix.
    pub fn transformed_a(&self) -> DMatrix<f64> {
        let mut a = self.chain_matrix();
        a.row_mut(self.n - 1).copy_from(&self.residual_dynamics);
        a
    }

    pub fn to_chain(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.t * x
    }

    pub fn to_physical(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.t_inv * z
    }
}

/// Chain-form transform of a pair observed through a single output row.
pub fn to_chain_form(sub: &StateSpace) -> Result<ChainForm> {
    if sub.c.nrows() != 1 {
        return Err(Error::Dimension { what: "chain form output", expected: 1, got: sub.c.nrows(), index: 0 });
    }
    chain_from_row(&sub.a, &sub.b, &sub.c.row(0).into_owned())
}

pub(crate) fn chain_from_row(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &RowDVector<f64>) -> Result<ChainForm> {
    let n = a.nrows();
    let cm = DMatrix::from_row_slice(1, n, c.as_slice());
    let t = linalg::observability_matrix(a, &cm);
    let rank = linalg::numerical_rank(&t, DEFAULT_RANK_TOL);
    if rank < n {
        return Err(Error::Unobservable { rank, n });
    }
    let t_inv = t.clone().try_inverse().ok_or(Error::Unobservable { rank, n })?;
    let mut cak = cm.clone();
    for _ in 0..n {
        cak = &cak * a;
    }
    let residual_dynamics = RowDVector::from_row_slice((&cak * &t_inv).as_slice());
    Ok(ChainForm { n, b_chain: &t * b, t, t_inv, residual_dynamics, c: c.clone() })
}

/// Chain form for a multi-output pair: the best-conditioned observable
/// candidate among the single rows and a few fixed weightings of all rows.
pub fn chain_form_multi(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<ChainForm> {
    let n = a.nrows();
    let rows: Vec<RowDVector<f64>> =
        (0..c.nrows()).map(|k| c.row(k).into_owned()).filter(|r| r.iter().any(|&v| v != 0.0)).collect();
    if rows.is_empty() {
        return Err(Error::Unobservable { rank: 0, n });
    }
    let mut candidates = rows.clone();
    // Blends: equal weights, then weights 1/(k+1) and alternating signs.
    let blends: [fn(usize) -> f64; 3] = [|_| 1.0, |k| 1.0 / (k as f64 + 1.0), |k| if k % 2 == 0 { 1.0 } else { -0.5 }];
    if rows.len() > 1 {
        for w in blends {
            let mut sum = RowDVector::zeros(n);
            for (k, r) in rows.iter().enumerate() {
                sum += r * w(k);
            }
            candidates.push(sum);
        }
    }
    let mut best: Option<(f64, RowDVector<f64>)> = None;
    for row in candidates {
        let sv = linalg::singular_values(&linalg::observability_matrix(a, &DMatrix::from_row_slice(1, n, row.as_slice())));
        let ratio = sv.last().copied().unwrap_or(0.0) / sv[0].max(f64::MIN_POSITIVE);
        if ratio > DEFAULT_RANK_TOL && best.as_ref().is_none_or(|(r, _)| ratio > *r) {
            best = Some((ratio, row));
        }
    }
    match best {
        Some((_, row)) => chain_from_row(a, b, &row),
        None => chain_from_row(a, b, &rows.iter().fold(RowDVector::zeros(n), |s, r| s + r)),
    }
}

/// Constant `l` in the gain law `L̇ = e₁² / l²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LParam {
    Mode(GainMode),
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GainMode {
    /// `l = L(t)`.
    #[serde(rename = "self")]
    SelfGain,
}

impl Default for LParam {
    fn default() -> Self {
        LParam::Mode(GainMode::SelfGain)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficients {
    /// `ℓ_k = C(n, k)`: error poles at `−L`.
    #[default]
    Binomial,
    /// `ℓ_k = 1`.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemainderMode {
    /// Last row copies only the chain and the input.
    #[default]
    Disturbance,
    /// Last row also includes `r ẑ`.
    Modeled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    Rk4,
    Euler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverConfig {
    pub l_param: LParam,
    #[serde(rename = "L_max")]
    pub l_max: f64,
    pub coefficients: Coefficients,
    pub remainder: RemainderMode,
    pub integrator: Integrator,
    /// Added to the true initial state to form the initial estimate,
    /// physical coordinates, stacked over all subsystems.
    pub initial_offset: Vec<f64>,
}

impl Default for ObserverConfig {
    fn default() -> Self {
        ObserverConfig {
            l_param: LParam::default(),
            l_max: DEFAULT_L_MAX,
            coefficients: Coefficients::default(),
            remainder: RemainderMode::default(),
            integrator: Integrator::default(),
            initial_offset: Vec::new(),
        }
    }
}

impl ObserverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l_max >= 1.0) {
            return Err(Error::param("observer.L_max", "must be >= 1"));
        }
        if let LParam::Constant(l) = self.l_param {
            if !(l > 0.0 && l.is_finite()) {
                return Err(Error::param("observer.l_param", "constant must be finite and > 0"));
            }
        }
        if let Some(k) = self.initial_offset.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: "observer.initial_offset", index: k });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    /// Estimate in chain coordinates.
    pub x_hat: DVector<f64>,
    pub l: f64,
    pub l_max: f64,
    pub l_param: LParam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observer {
    pub chain: ChainForm,
    pub coefficients: Coefficients,
    pub remainder: RemainderMode,
    pub integrator: Integrator,
    pub state: ObserverState,
    gains: Vec<f64>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (n + 1 - i) as f64 / i as f64)
}

impl Observer {
    /// Observer started at the physical estimate `x_hat_phys`, `L(0) = 1`.
    pub fn new(chain: ChainForm, config: &ObserverConfig, x_hat_phys: &DVector<f64>) -> Result<Self> {
        config.validate()?;
        if x_hat_phys.len() != chain.n {
            return Err(Error::Dimension { what: "initial estimate", expected: chain.n, got: x_hat_phys.len(), index: 0 });
        }
        let n = chain.n;
        let gains = (1..=n)
            .map(|k| match config.coefficients {
                Coefficients::Binomial => binomial(n, k),
                Coefficients::Unit => 1.0,
            })
            .collect();
        let x_hat = chain.to_chain(x_hat_phys);
        Ok(Observer {
            coefficients: config.coefficients,
            remainder: config.remainder,
            integrator: config.integrator,
            state: ObserverState { x_hat, l: 1.0, l_max: config.l_max, l_param: config.l_param },
            gains,
            chain,
        })
    }

    pub fn n(&self) -> usize {
        self.chain.n
    }

    /// Linear error dynamics `A_c + e_n r − diag(ℓ_k L^k) e₁ᵀ` at gain `l`.
    pub fn error_dynamics(&self, l: f64) -> DMatrix<f64> {
        let mut m = self.chain.transformed_a();
        let mut lk = 1.0;
        for k in 0..self.chain.n {
            lk *= l;
            m[(k, 0)] -= self.gains[k] * lk;
        }
        m
    }

    /// Smallest `L` on a geometric grid from 1 to `L_max` above which the
    /// linear error dynamics decay at least as fast as `FLOOR_DECAY · L`.
    /// Weakly observable augmented chains are unstable at small `L`, so an
    /// observer switched in during reconfiguration starts at this floor.
    pub fn gain_floor(&self) -> f64 {
        let mut grid = vec![1.0];
        while let Some(&last) = grid.last() {
            if last >= self.state.l_max {
                break;
            }
            grid.push((last * GAIN_GRID_RATIO).min(self.state.l_max));
        }
        let mut floor = self.state.l_max;
        for &l in grid.iter().rev() {
            if linalg::spectral_abscissa(&self.error_dynamics(l)) <= -FLOOR_DECAY * l {
                floor = l;
            } else {
                break;
            }
        }
        floor
    }

    pub fn estimate_physical(&self) -> DVector<f64> {
        self.chain.to_physical(&self.state.x_hat)
    }

    pub fn innovation(&self, y: f64) -> f64 {
        y - self.state.x_hat[0]
    }

    fn rate(&self, z: &DVector<f64>, y: f64, bu: &DVector<f64>, l: f64, out: &mut DVector<f64>) {
        let n = self.chain.n;
        let e1 = y - z[0];
        let mut lk = 1.0;
        for k in 0..n {
            lk *= l;
            let chain = if k + 1 < n {
                z[k + 1]
            } else if self.remainder == RemainderMode::Modeled {
                self.chain.residual_dynamics.dot(&z.transpose())
            } else {
                0.0
            };
            out[k] = chain + bu[k] + self.gains[k] * lk * e1;
        }
    }

    /// One step of the observer followed by the gain update. Returns the
    /// output error at the start of the step.
    pub fn advance(&mut self, y: f64, u: &[f64], dt: f64) -> Result<f64> {
        let e1 = self.innovation(y);
        let next = observer_step(self, y, u, dt)?;
        self.state.x_hat = next.state.x_hat;
        self.state = gain_update(&self.state, e1, dt);
        Ok(e1)
    }
}

/// Advances the estimate by `dt` with `L` frozen over the step.
pub fn observer_step(obs: &Observer, y_meas: f64, u: &[f64], dt: f64) -> Result<Observer> {
    if !y_meas.is_finite() {
        return Err(Error::NonFinite { what: "observer measurement", index: 0 });
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", "must be > 0"));
    }
    if u.len() != obs.chain.b_chain.ncols() {
        return Err(Error::Dimension { what: "observer input", expected: obs.chain.b_chain.ncols(), got: u.len(), index: 0 });
    }
    let n = obs.chain.n;
    let bu = &obs.chain.b_chain * DVector::from_column_slice(u);
    let l = obs.state.l;
    let z = &obs.state.x_hat;
    let mut next = obs.clone();
    match obs.integrator {
        Integrator::Euler => {
            let mut k1 = DVector::zeros(n);
            obs.rate(z, y_meas, &bu, l, &mut k1);
            next.state.x_hat = z + k1 * dt;
        }
        Integrator::Rk4 => {
            let mut k1 = DVector::zeros(n);
            let mut k2 = DVector::zeros(n);
            let mut k3 = DVector::zeros(n);
            let mut k4 = DVector::zeros(n);
            obs.rate(z, y_meas, &bu, l, &mut k1);
            obs.rate(&(z + &k1 * (0.5 * dt)), y_meas, &bu, l, &mut k2);
            obs.rate(&(z + &k2 * (0.5 * dt)), y_meas, &bu, l, &mut k3);
            obs.rate(&(z + &k3 * dt), y_meas, &bu, l, &mut k4);
            next.state.x_hat = z + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
    }
    Ok(next)
}

/// `L ← min(L_max, L + dt e₁² / l²)`.
pub fn gain_update(obs: &ObserverState, e1: f64, dt: f64) -> ObserverState {
    let l = match obs.l_param {
        LParam::Mode(GainMode::SelfGain) => obs.l,
        LParam::Constant(c) => c,
    };
    let mut next = obs.clone();
    let grown = obs.l + dt * e1 * e1 / (l * l);
    if grown.is_finite() {
        next.l = grown.min(obs.l_max).max(obs.l);
    }
    next
}

/// One sample of the interaction terms and chain states.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSample {
    /// `I_ik` per subsystem `i` and chain row `k`.
    pub interaction: Vec<Vec<f64>>,
    /// Chain-coordinate states per subsystem.
    pub chain_states: Vec<Vec<f64>>,
}

/// Running maximum of `|I_ik| / Σ_j Σ_{l≤k} |z_jl|` per chain row.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InteractionBounds {
    pub c_hat: Vec<f64>,
    pub samples: usize,
}

impl InteractionBounds {
    /// Denominators below this are skipped as uninformative.
    pub const FLOOR: f64 = 1e-9;

    pub fn update(&mut self, s: &InteractionSample) {
        let rows = s.interaction.iter().map(Vec::len).max().unwrap_or(0);
        if self.c_hat.len() < rows {
            self.c_hat.resize(rows, 0.0);
        }
        self.samples += 1;
        for k in 0..rows {
            let denom: f64 = s
                .chain_states
                .iter()
                .map(|z| z.iter().take(k + 1).map(|v| v.abs()).sum::<f64>())
                .sum();
            let num = s
                .interaction
                .iter()
                .filter_map(|row| row.get(k))
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            if denom > Self::FLOOR {
                self.c_hat[k] = self.c_hat[k].max(num / denom);
            }
        }
    }
}

/// Empirical constants `Ĉ_k` over a set of samples.
pub fn interaction_bound_estimate(samples: &[InteractionSample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::param("trajectory", "no samples"));
    }
    let mut acc = InteractionBounds::default();
    for s in samples {
        acc.update(s);
    }
    Ok(acc.c_hat)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(a: &[f64], n: usize) -> StateSpace {
        let mut c = DMatrix::zeros(1, n);
        c[(0, 0)] = 1.0;
        let mut b = DMatrix::zeros(n, 1);
        b[(n - 1, 0)] = 1.0;
        StateSpace::new(DMatrix::from_row_slice(n, n, a), b, c).unwrap()
    }

    #[test]
    fn companion_is_fixed_point() {
        let cf = to_chain_form(&sys(&[0.0, 1.0, -2.0, -3.0], 2)).unwrap();
        assert!((&cf.t - DMatrix::identity(2, 2)).norm() < 1e-15);
        assert_eq!(cf.residual_dynamics.as_slice(), &[-2.0, -3.0]);
    }

    #[test]
    fn unobservable_pair_has_no_chain_form() {
        let s = sys(&[1.0, 0.0, 0.0, 2.0], 2);
        assert!(matches!(to_chain_form(&s), Err(Error::Unobservable { .. })));
    }

    #[test]
    fn zero_error_leaves_estimate() {
        let cf = to_chain_form(&sys(&[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0], 3)).unwrap();
        let obs = Observer::new(cf, &ObserverConfig::default(), &DVector::zeros(3)).unwrap();
        let next = observer_step(&obs, 0.0, &[0.0], 0.01).unwrap();
        assert_eq!(next.state.x_hat, DVector::zeros(3));
    }

    #[test]
    fn single_state_euler() {
        let cf = to_chain_form(&sys(&[0.0], 1)).unwrap();
        let cfg = ObserverConfig { integrator: Integrator::Euler, ..Default::default() };
        let mut obs = Observer::new(cf, &cfg, &DVector::zeros(1)).unwrap();
        obs.state.l = 2.0;
        let next = observer_step(&obs, 1.0, &[0.0], 0.1).unwrap();
        assert!((next.state.x_hat[0] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_measurement() {
        let cf = to_chain_form(&sys(&[0.0], 1)).unwrap();
        let obs = Observer::new(cf, &ObserverConfig::default(), &DVector::zeros(1)).unwrap();
        assert!(observer_step(&obs, f64::NAN, &[0.0], 0.1).is_err());
    }

    #[test]
    fn gain_law_cases() {
        let s = ObserverState { x_hat: DVector::zeros(1), l: 1.0, l_max: 10.0, l_param: LParam::default() };
        assert_eq!(gain_update(&s, 0.0, 0.1).l, 1.0);
        assert!((gain_update(&s, 1.0, 0.1).l - 1.1).abs() < 1e-15);
        let mut t = s.clone();
        for _ in 0..10_000 {
            t = gain_update(&t, 1.0, 0.1);
        }
        assert_eq!(t.l, 10.0);
        let c = ObserverState { l_param: LParam::Constant(0.5), ..s };
        assert!((gain_update(&c, 1.0, 0.1).l - 1.4).abs() < 1e-15);
    }

    #[test]
    fn l_param_serde() {
        let cfg: ObserverConfig = serde_json::from_str(r#"{"l_param": "self"}"#).unwrap();
        assert_eq!(cfg.l_param, LParam::Mode(GainMode::SelfGain));
        let cfg: ObserverConfig = serde_json::from_str(r#"{"l_param": 2.5}"#).unwrap();
        assert_eq!(cfg.l_param, LParam::Constant(2.5));
    }

    #[test]
    fn decoupled_bounds_are_zero() {
        let s = InteractionSample { interaction: vec![vec![0.0; 3]; 2], chain_states: vec![vec![1.0, 2.0, 3.0]; 2] };
        assert_eq!(interaction_bound_estimate(&[s]).unwrap(), vec![0.0; 3]);
        assert!(interaction_bound_estimate(&[]).is_err());
    }
}
