//! Observability tests, Gramians, H2 norms and the augmentation cost.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, C64};

/// Relative singular-value cutoff for numerical rank decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
/// Gap below which two eigenvalues count as equal, scaled by `1 + |λ|`.
pub const DEFAULT_EIG_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub rank: f64,
    pub eig: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { rank: DEFAULT_RANK_TOL, eig: DEFAULT_EIG_TOL }
    }
}

impl Tolerances {
    pub fn with_rank(rank: f64) -> Self {
        Tolerances { rank, ..Self::default() }
    }

    fn check(&self) -> Result<()> {
        if !(self.rank > 0.0) {
            return Err(Error::param("tol", "rank tolerance must be > 0"));
        }
        if !(self.eig > 0.0) {
            return Err(Error::param("tol", "eigenvalue tolerance must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpace {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl StateSpace {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let dims = [
            ("state matrix A", a.ncols(), 1),
            ("input matrix B", b.nrows(), 0),
            ("output matrix C", c.ncols(), 1),
        ];
        for (what, got, index) in dims {
            if got != n {
                return Err(Error::Dimension { what, expected: n, got, index });
            }
        }
        for (what, m) in [("state matrix A", &a), ("input matrix B", &b), ("output matrix C", &c)] {
            if let Some(k) = m.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what, index: k });
            }
        }
        Ok(StateSpace { a, b, c })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }
}

/// Structural zero/nonzero pattern of an `(A, C)` pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ZeroPattern {
    pub a: DMatrix<bool>,
    pub c: DMatrix<bool>,
}

impl ZeroPattern {
    /// Pattern of the exactly nonzero entries.
    pub fn of(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Self {
        ZeroPattern { a: a.map(|x| x != 0.0), c: c.map(|x| x != 0.0) }
    }
}

/// True iff every state reaches a measured output in the digraph with an
/// edge `j → i` for each structurally nonzero `A[i][j]`.
pub fn structurally_observable(pattern: &ZeroPattern) -> bool {
    let n = pattern.a.nrows();
    if pattern.a.ncols() != n || pattern.c.ncols() != n {
        return false;
    }
    let mut reached: Vec<bool> = (0..n).map(|i| pattern.c.column(i).iter().any(|&b| b)).collect();
    let mut stack: Vec<usize> = (0..n).filter(|&i| reached[i]).collect();
    while let Some(i) = stack.pop() {
        // Any j feeding i is output-connected through i.
        for j in 0..n {
            if !reached[j] && pattern.a[(i, j)] {
                reached[j] = true;
                stack.push(j);
            }
        }
    }
    reached.iter().all(|&r| r)
}

/// Rank of the observability matrix and whether it is full.
pub fn kalman_rank(a: &DMatrix<f64>, c: &DMatrix<f64>, tol: f64) -> Result<(usize, bool)> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be > 0"));
    }
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension { what: "kalman_rank A", expected: n, got: a.ncols(), index: 1 });
    }
    if c.ncols() != n {
        return Err(Error::Dimension { what: "kalman_rank C", expected: n, got: c.ncols(), index: 1 });
    }
    let rank = linalg::numerical_rank(&linalg::observability_matrix(a, c), tol);
    Ok((rank, rank == n))
}

/// Which condition of the cascade test decided the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeReason {
    Observable,
    /// The measured block `(A11, C1)` is itself unobservable.
    ConditionI,
    /// A shared or repeated eigenvalue leaves a mode invisible.
    ConditionII,
    /// The coupling transfer vanishes at an eigenvalue of `A22`.
    ConditionIII,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeVerdict {
    pub observable: bool,
    pub reason: CascadeReason,
}

fn eig_close(x: C64, y: C64, tol: f64) -> bool {
    (x - y).norm() <= tol * (1.0 + x.norm().max(y.norm()))
}

fn cluster(ev: &[C64], tol: f64) -> Vec<C64> {
    let mut reps: Vec<C64> = Vec::new();
    for &e in ev {
        if !reps.iter().any(|&r| eig_close(r, e, tol)) {
            reps.push(e);
        }
    }
    reps
}

/// Observability of `ẋ₁ = A11 x₁ + A12 x₂`, `ẋ₂ = A22 x₂`, `y = C1 x₁`.
pub fn cascade_observable(
    a11: &DMatrix<f64>,
    a12: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    c1: &DMatrix<f64>,
    tol: Tolerances,
) -> Result<CascadeVerdict> {
    tol.check()?;
    let n1 = a11.nrows();
    let n2 = a22.nrows();
    let checks = [
        ("cascade A11", a11.ncols(), n1),
        ("cascade A22", a22.ncols(), n2),
        ("cascade A12 rows", a12.nrows(), n1),
        ("cascade A12 cols", a12.ncols(), n2),
        ("cascade C1", c1.ncols(), n1),
    ];
    for (what, got, expected) in checks {
        if got != expected {
            return Err(Error::Dimension { what, expected, got, index: 0 });
        }
    }
    let verdict = |reason| Ok(CascadeVerdict { observable: reason == CascadeReason::Observable, reason });

    if !kalman_rank(a11, c1, tol.rank)?.1 {
        return verdict(CascadeReason::ConditionI);
    }
    if n2 == 0 {
        return verdict(CascadeReason::Observable);
    }

    let n = n1 + n2;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (n1, n1)).copy_from(a11);
    a.view_mut((0, n1), (n1, n2)).copy_from(a12);
    a.view_mut((n1, n1), (n2, n2)).copy_from(a22);
    let mut c = DMatrix::zeros(c1.nrows(), n);
    c.view_mut((0, 0), (c1.nrows(), n1)).copy_from(c1);
    let cc = linalg::to_complex(&c);

    let ev11 = linalg::eigenvalues(a11);
    let lambdas = cluster(&linalg::eigenvalues(a22), tol.eig);

    let mut simple = Vec::new();
    for &lam in &lambdas {
        let shifted = linalg::shifted(&a, lam);
        let q = n - linalg::complex_rank(&shifted, tol.rank);
        let shared = ev11.iter().any(|&m| eig_close(m, lam, tol.eig));
        if shared || q > 1 {
            // Eigenvector test: every invariant direction at λ must reach C.
            let v = linalg::complex_null_space(&shifted, tol.rank);
            let cv = &cc * &v;
            let cutoff = tol.rank.sqrt() * linalg::complex_norm(&cc);
            if v.ncols() > 0 && linalg::complex_rank_abs(&cv, cutoff) < v.ncols() {
                return verdict(CascadeReason::ConditionII);
            }
        } else {
            simple.push(lam);
        }
    }

    let c1c = linalg::to_complex(c1);
    let a12c = linalg::to_complex(a12);
    for lam in simple {
        let adj11 = linalg::adjugate(&linalg::shifted(a11, lam));
        let adj22 = linalg::adjugate(&linalg::shifted(a22, lam));
        let m = &c1c * &adj11 * &a12c * &adj22;
        let scale = linalg::complex_norm(&c1c)
            * linalg::complex_norm(&adj11)
            * linalg::complex_norm(&a12c)
            * linalg::complex_norm(&adj22);
        if linalg::complex_norm(&m) <= tol.rank * scale {
            return verdict(CascadeReason::ConditionIII);
        }
    }
    verdict(CascadeReason::Observable)
}

/// Cascade test on a partitioned pair. The lower-left block of `a` and the
/// trailing columns of `c` (from state `k` on) must be zero.
pub fn cascade_observable_split(
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    k: usize,
    tol: Tolerances,
) -> Result<CascadeVerdict> {
    let n = a.nrows();
    if a.ncols() != n || c.ncols() != n || k > n {
        return Err(Error::Dimension { what: "cascade split", expected: n, got: a.ncols().max(c.ncols()), index: k });
    }
    if a.view((k, 0), (n - k, k)).iter().any(|&x| x != 0.0) {
        return Err(Error::NotCascade("lower-left block of A is nonzero".into()));
    }
    if c.view((0, k), (c.nrows(), n - k)).iter().any(|&x| x != 0.0) {
        return Err(Error::NotCascade("C has a nonzero second block".into()));
    }
    cascade_observable(
        &a.view((0, 0), (k, k)).into_owned(),
        &a.view((0, k), (k, n - k)).into_owned(),
        &a.view((k, k), (n - k, n - k)).into_owned(),
        &c.view((0, 0), (c.nrows(), k)).into_owned(),
        tol,
    )
}

/// Observability Gramian, the solution of `AᵀW + WA + CᵀC = 0`.
pub fn obs_gramian(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::ensure_hurwitz(a)?;
    if c.ncols() != a.nrows() {
        return Err(Error::Dimension { what: "gramian C", expected: a.nrows(), got: c.ncols(), index: 1 });
    }
    linalg::lyapunov(a, &(c.transpose() * c))
}

/// Controllability Gramian, the solution of `AW + WAᵀ + BBᵀ = 0`.
pub fn ctrb_gramian(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::ensure_hurwitz(a)?;
    if b.nrows() != a.nrows() {
        return Err(Error::Dimension { what: "gramian B", expected: a.nrows(), got: b.nrows(), index: 0 });
    }
    linalg::lyapunov(&a.transpose(), &(b * b.transpose()))
}

/// Squared H2 norm `trace(C W_c Cᵀ)`.
pub fn h2_norm_sq(sys: &StateSpace) -> Result<f64> {
    let wc = ctrb_gramian(&sys.a, &sys.b)?;
    Ok((&sys.c * wc * sys.c.transpose()).trace())
}

/// Healthy-minus-faulty H2 gap sharing one controllability Gramian.
pub fn hf_norm_sq(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c_healthy: &DMatrix<f64>,
    c_faulty: &DMatrix<f64>,
) -> Result<f64> {
    let n = a.nrows();
    for (what, m) in [("healthy C", c_healthy), ("faulty C", c_faulty)] {
        if m.ncols() != n {
            return Err(Error::Dimension { what, expected: n, got: m.ncols(), index: 1 });
        }
    }
    let wc = ctrb_gramian(a, b)?;
    let th = (c_healthy * &wc * c_healthy.transpose()).trace();
    let tf = (c_faulty * &wc * c_faulty.transpose()).trace();
    Ok(th - tf)
}

/// `J = α (1/trace W_o)² + ξ ‖G‖_HF²`.
pub fn cost_j(trace_wo: f64, hf_norm: f64, alpha: f64, xi: f64) -> Result<f64> {
    if !(trace_wo > 0.0) {
        return Err(Error::param("trace_Wo", "must be > 0"));
    }
    if !(alpha >= 0.0 && xi >= 0.0) {
        return Err(Error::param("alpha/xi", "weights must be >= 0"));
    }
    let rho = 1.0 / trace_wo;
    Ok(alpha * rho * rho + xi * hf_norm * hf_norm)
}

/// Scores for one augmentation candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    /// Subsystem ids, faulty one first.
    pub candidate: Vec<usize>,
    /// Scores of a rejected candidate are not numbers; JSON writes them as
    /// `null`.
    #[serde(rename = "trace_Wo", deserialize_with = "nan_if_null")]
    pub trace_wo: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub rho: f64,
    #[serde(deserialize_with = "nan_if_null")]
    pub hf_norm: f64,
    #[serde(rename = "J", deserialize_with = "inf_if_null")]
    pub j: f64,
    pub observable: bool,
    pub stable: bool,
    /// Why the candidate was set aside, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected: Option<String>,
}

fn nan_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
}

fn inf_if_null<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

impl CostReport {
    pub fn rejected(candidate: Vec<usize>, observable: bool, stable: bool, why: impl Into<String>) -> Self {
        CostReport {
            candidate,
            trace_wo: f64::NAN,
            rho: f64::NAN,
            hf_norm: f64::NAN,
            j: f64::INFINITY,
            observable,
            stable,
            rejected: Some(why.into()),
        }
    }

    pub fn admissible(&self) -> bool {
        self.observable && self.stable && self.rejected.is_none()
    }
}

/// Builds the cost report for system `(A, B)` whose healthy output map
/// `c_healthy` degrades to `c_faulty`.
pub fn score(
    candidate: Vec<usize>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c_healthy: &DMatrix<f64>,
    c_faulty: &DMatrix<f64>,
    alpha: f64,
    xi: f64,
) -> Result<CostReport> {
    let wo = obs_gramian(a, c_faulty)?;
    let trace_wo = wo.trace();
    let hf = hf_norm_sq(a, b, c_healthy, c_faulty)?.max(0.0).sqrt();
    let j = cost_j(trace_wo, hf, alpha, xi)?;
    Ok(CostReport {
        candidate,
        trace_wo,
        rho: 1.0 / trace_wo,
        hf_norm: hf,
        j,
        observable: true,
        stable: true,
        rejected: None,
    })
}
