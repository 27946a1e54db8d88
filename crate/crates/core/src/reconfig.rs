//! Fault accommodation: virtual sensors, subsystem augmentation and the
//! candidate search that chooses between them.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::observability::{
    cascade_observable_split, kalman_rank, score, structurally_observable, CostReport, Tolerances,
    ZeroPattern,
};
use crate::observer::{chain_form_multi, ChainForm};
use crate::power::LinearizedPlant;

/// 1-based subsystem identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubsystemId(pub usize);

impl SubsystemId {
    pub fn index(self) -> usize {
        self.0 - 1
    }

    pub fn from_index(i: usize) -> Self {
        SubsystemId(i + 1)
    }

    pub fn check(self, n: usize) -> Result<Self> {
        if self.0 == 0 || self.0 > n {
            return Err(Error::UnknownSubsystem(self.0));
        }
        Ok(self)
    }
}

impl fmt::Display for SubsystemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Sensor output scaled by `factor`.
    Gain { factor: f64 },
    /// Output frozen at its last pre-fault value.
    Stuck,
    /// No reading at all.
    TotalLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub t_fault: f64,
    pub subsystem: SubsystemId,
    /// Output row within the subsystem, 0-based.
    #[serde(default)]
    pub sensor_row: usize,
    #[serde(flatten)]
    pub kind: FaultKind,
    pub fdi_delay: f64,
}

impl FaultEvent {
    pub fn validate(&self, index: usize, n_subsystems: usize, rows: usize) -> Result<()> {
        let field = |f: &str| format!("faults[{index}].{f}");
        if !(self.t_fault >= 0.0 && self.t_fault.is_finite()) {
            return Err(Error::param(field("t_fault"), "must be finite and >= 0"));
        }
        if !(self.fdi_delay >= 0.0 && self.fdi_delay.is_finite()) {
            return Err(Error::param(field("fdi_delay"), "must be finite and >= 0"));
        }
        if let FaultKind::Gain { factor } = self.kind {
            if !factor.is_finite() {
                return Err(Error::param(field("factor"), "must be finite"));
            }
        }
        if self.subsystem.0 == 0 || self.subsystem.0 > n_subsystems {
            return Err(Error::param(field("subsystem"), format!("unknown subsystem id {}", self.subsystem)));
        }
        if self.sensor_row >= rows {
            return Err(Error::param(field("sensor_row"), format!("must be < {rows}")));
        }
        Ok(())
    }

    pub fn t_diagnosed(&self) -> f64 {
        self.t_fault + self.fdi_delay
    }
}

/// Output map of subsystem `c` under the given faults (all on that
/// subsystem). Stuck rows carry no state information and are zeroed.
pub fn faulty_output_matrix(c: &DMatrix<f64>, faults: &[&FaultEvent]) -> DMatrix<f64> {
    let mut cf = c.clone();
    for f in faults {
        match f.kind {
            FaultKind::Gain { factor } => {
                let mut row = cf.row_mut(f.sensor_row);
                row *= factor;
            }
            FaultKind::Stuck => cf.row_mut(f.sensor_row).fill(0.0),
            FaultKind::TotalLoss => cf.fill(0.0),
        }
    }
    cf
}

/// Identity with the listed rows zeroed.
#[allow(non_snake_case)]
pub fn default_P(c: &DMatrix<f64>, faulty_rows: &[usize]) -> Result<DMatrix<f64>> {
    let p = c.nrows();
    let mut m = DMatrix::identity(p, p);
    for &r in faulty_rows {
        if r >= p {
            return Err(Error::Dimension { what: "faulty sensor row", expected: p, got: r, index: r });
        }
        m[(r, r)] = 0.0;
    }
    Ok(m)
}

/// `ỹ = P y_f + (C − P C_f) x̂`.
pub fn virtual_sensor(
    y_f: &DVector<f64>,
    x_hat: &DVector<f64>,
    c: &DMatrix<f64>,
    c_f: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let rows = c.nrows();
    let n = c.ncols();
    let checks = [
        ("virtual sensor y_f", y_f.len(), rows),
        ("virtual sensor x_hat", x_hat.len(), n),
        ("virtual sensor C_f rows", c_f.nrows(), rows),
        ("virtual sensor C_f cols", c_f.ncols(), n),
        ("virtual sensor P rows", p.nrows(), rows),
        ("virtual sensor P cols", p.ncols(), rows),
    ];
    for (what, got, expected) in checks {
        if got != expected {
            return Err(Error::Dimension { what, expected, got, index: 0 });
        }
    }
    Ok(p * y_f + (c - p * c_f) * x_hat)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSystem {
    pub a_new: DMatrix<f64>,
    pub b_new: DMatrix<f64>,
    pub c_new: DMatrix<f64>,
    /// Block-diagonal output map before the fault.
    pub c_healthy: DMatrix<f64>,
    pub index_map: Vec<(SubsystemId, Range<usize>)>,
    pub dims: usize,
}

impl AugmentedSystem {
    pub fn members(&self) -> Vec<SubsystemId> {
        self.index_map.iter().map(|(id, _)| *id).collect()
    }

    pub fn slice_of(&self, id: SubsystemId) -> Option<Range<usize>> {
        self.index_map.iter().find(|(i, _)| *i == id).map(|(_, r)| r.clone())
    }
}

/// Augmented system with the faulty subsystem's output block zeroed.
pub fn augment(ids: &[SubsystemId], lin: &LinearizedPlant, faulty: SubsystemId) -> Result<AugmentedSystem> {
    augment_with(ids, lin, faulty, &DMatrix::zeros(1, 3))
}

/// Augmented system using `c_faulty` as the faulty subsystem's output block.
pub fn augment_with(
    ids: &[SubsystemId],
    lin: &LinearizedPlant,
    faulty: SubsystemId,
    c_faulty: &DMatrix<f64>,
) -> Result<AugmentedSystem> {
    let n = lin.n();
    for (k, id) in ids.iter().enumerate() {
        id.check(n)?;
        if ids[..k].contains(id) {
            return Err(Error::param("ids", format!("subsystem {id} listed twice")));
        }
    }
    if !ids.contains(&faulty) {
        return Err(Error::param("ids", format!("faulty subsystem {faulty} is not a member")));
    }
    let m = ids.len();
    let dims = 3 * m;
    let mut a_new = DMatrix::zeros(dims, dims);
    let mut b_new = DMatrix::zeros(dims, m);
    let mut c_new = DMatrix::zeros(m, dims);
    let mut c_healthy = DMatrix::zeros(m, dims);
    let mut index_map = Vec::with_capacity(m);
    for (bi, &i) in ids.iter().enumerate() {
        let ii = i.index();
        for (bj, &j) in ids.iter().enumerate() {
            let blk = if bi == bj { lin.a[ii] } else { lin.gint[ii][j.index()] };
            a_new.fixed_view_mut::<3, 3>(3 * bi, 3 * bj).copy_from(&blk);
        }
        b_new.fixed_view_mut::<3, 1>(3 * bi, bi).copy_from(&lin.bsub[ii]);
        c_healthy.fixed_view_mut::<1, 3>(bi, 3 * bi).copy_from(&lin.csub[ii]);
        if i == faulty {
            if c_faulty.nrows() == 1 && c_faulty.ncols() == 3 {
                c_new.view_mut((bi, 3 * bi), (1, 3)).copy_from(c_faulty);
            }
        } else {
            c_new.fixed_view_mut::<1, 3>(bi, 3 * bi).copy_from(&lin.csub[ii]);
        }
        index_map.push((i, 3 * bi..3 * bi + 3));
    }
    Ok(AugmentedSystem { a_new, b_new, c_new, c_healthy, index_map, dims })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlanMode {
    VirtualSensor,
    Augmentation,
    Unrecoverable,
}

impl fmt::Display for PlanMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlanMode::VirtualSensor => "virtual-sensor",
            PlanMode::Augmentation => "augmentation",
            PlanMode::Unrecoverable => "unrecoverable",
        })
    }
}

/// Serializable description of an observer's chain-form transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverSpec {
    pub members: Vec<SubsystemId>,
    pub faulty: Option<SubsystemId>,
    pub dims: usize,
    pub output_row: Vec<f64>,
    #[serde(rename = "T")]
    pub t: Vec<Vec<f64>>,
    pub residual_dynamics: Vec<f64>,
    pub b_chain: Vec<Vec<f64>>,
    /// Ratio of extreme singular values of `T`.
    pub conditioning: f64,
}

impl ObserverSpec {
    pub fn from_chain(members: Vec<SubsystemId>, faulty: Option<SubsystemId>, cf: &ChainForm) -> Self {
        let sv = linalg::singular_values(&cf.t);
        ObserverSpec {
            members,
            faulty,
            dims: cf.n,
            output_row: cf.c.iter().copied().collect(),
            t: linalg::to_rows(&cf.t),
            residual_dynamics: cf.residual_dynamics.iter().copied().collect(),
            b_chain: linalg::to_rows(&cf.b_chain),
            conditioning: sv.last().copied().unwrap_or(0.0) / sv.first().copied().unwrap_or(1.0),
        }
    }

    pub fn chain_form(&self) -> Result<ChainForm> {
        let t = linalg::from_rows(&self.t)?;
        let t_inv = t.clone().try_inverse().ok_or(Error::Singular("observer transform"))?;
        Ok(ChainForm {
            n: self.dims,
            t,
            t_inv,
            residual_dynamics: RowDVector::from_row_slice(&self.residual_dynamics),
            b_chain: linalg::from_rows(&self.b_chain)?,
            c: RowDVector::from_row_slice(&self.output_row),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconfigPlan {
    pub mode: PlanMode,
    pub faulty: SubsystemId,
    /// Reconstruction selector (virtual-sensor mode).
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<Vec<f64>>>,
    /// Faulty output map used to build the plan.
    #[serde(rename = "C_f")]
    pub c_f: Vec<Vec<f64>>,
    #[serde(default)]
    pub augment_set: Vec<SubsystemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer: Option<ObserverSpec>,
    #[serde(rename = "J", default, skip_serializing_if = "Option::is_none")]
    pub j: Option<f64>,
    pub candidates: Vec<CostReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub alpha: f64,
    pub xi: f64,
    /// Largest admissible cost; `None` means unbounded.
    #[serde(rename = "J_max")]
    pub j_max: Option<f64>,
    pub tol: Tolerances,
    /// Subsystems that may not join an augmentation.
    pub excluded: Vec<SubsystemId>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig { alpha: 100.0, xi: 50.0, j_max: None, tol: Tolerances::default(), excluded: Vec::new() }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::param("alpha", "must be finite and >= 0"));
        }
        if !(self.xi >= 0.0 && self.xi.is_finite()) {
            return Err(Error::param("xi", "must be finite and >= 0"));
        }
        if let Some(j) = self.j_max {
            if j.is_nan() {
                return Err(Error::param("J_max", "must be a number"));
            }
        }
        if !(self.tol.rank > 0.0 && self.tol.eig > 0.0) {
            return Err(Error::param("tol", "must be > 0"));
        }
        Ok(())
    }
}

/// Observability of an augmented pair. Uses the cascade test when the
/// faulty block receives nothing from the measured members.
pub fn augmented_observable(aug: &AugmentedSystem, faulty: SubsystemId, tol: Tolerances) -> Result<bool> {
    let fs = aug.slice_of(faulty).ok_or(Error::UnknownSubsystem(faulty.0))?;
    let others: Vec<usize> = (0..aug.dims).filter(|k| !fs.contains(k)).collect();
    let reverse_zero = fs.clone().all(|r| others.iter().all(|&c| aug.a_new[(r, c)] == 0.0));
    let faulty_unmeasured = aug.c_new.columns(fs.start, fs.len()).iter().all(|&v| v == 0.0);
    if reverse_zero && faulty_unmeasured && !others.is_empty() {
        let order: Vec<usize> = others.iter().copied().chain(fs.clone()).collect();
        let a = DMatrix::from_fn(aug.dims, aug.dims, |i, j| aug.a_new[(order[i], order[j])]);
        let c = DMatrix::from_fn(aug.c_new.nrows(), aug.dims, |i, j| aug.c_new[(i, order[j])]);
        return Ok(cascade_observable_split(&a, &c, others.len(), tol)?.observable);
    }
    Ok(kalman_rank(&aug.a_new, &aug.c_new, tol.rank)?.1)
}

fn combinations(pool: &[SubsystemId], k: usize) -> Vec<Vec<SubsystemId>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    if k > pool.len() {
        return out;
    }
    loop {
        out.push(idx.iter().map(|&i| pool[i]).collect());
        let mut i = k;
        while i > 0 && idx[i - 1] == pool.len() - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn sorted_ids(v: &[usize]) -> Vec<usize> {
    let mut s = v.to_vec();
    s.sort_unstable();
    s
}

/// Evaluates one augmentation candidate (faulty id first).
pub fn evaluate_candidate(
    ids: &[SubsystemId],
    lin: &LinearizedPlant,
    faulty: SubsystemId,
    c_faulty: &DMatrix<f64>,
    cfg: &SelectionConfig,
) -> Result<CostReport> {
    let label: Vec<usize> = ids.iter().map(|i| i.0).collect();
    let aug = augment_with(ids, lin, faulty, c_faulty)?;
    if !structurally_observable(&ZeroPattern::of(&aug.a_new, &aug.c_new)) {
        return Ok(CostReport::rejected(label, false, false, "structurally unobservable"));
    }
    if !augmented_observable(&aug, faulty, cfg.tol)? {
        return Ok(CostReport::rejected(label, false, false, "unobservable"));
    }
    let abscissa = linalg::spectral_abscissa(&aug.a_new);
    if !(abscissa < 0.0) {
        return Ok(CostReport::rejected(label, true, false, format!("A_NEW not Hurwitz (max Re = {abscissa:.4e})")));
    }
    let mut report = score(label, &aug.a_new, &aug.b_new, &aug.c_healthy, &aug.c_new, cfg.alpha, cfg.xi)?;
    if let Some(jmax) = cfg.j_max {
        if report.j > jmax {
            report.rejected = Some(format!("J = {:.4} exceeds J_max = {jmax}", report.j));
        }
    }
    Ok(report)
}

/// Recovery plan for subsystem `faulty` whose output map degraded to `c_if`.
pub fn rftc_select(
    faulty: SubsystemId,
    c_if: &DMatrix<f64>,
    lin: &LinearizedPlant,
    cfg: &SelectionConfig,
) -> Result<ReconfigPlan> {
    cfg.validate()?;
    let n = lin.n();
    let fi = faulty.check(n)?.index();
    if c_if.nrows() != 1 || c_if.ncols() != 3 {
        return Err(Error::Dimension { what: "faulty output map", expected: 3, got: c_if.ncols(), index: 0 });
    }
    let mut warnings = Vec::new();
    if cfg.j_max.is_none() {
        warnings.push("J_max unset; any admissible cost is accepted".to_string());
    }
    let c = lin.c_dyn(fi);
    let a = lin.a_dyn(fi);
    let faulty_rows: Vec<usize> = (0..c.nrows())
        .filter(|&r| (0..c.ncols()).any(|k| c_if[(r, k)] != c[(r, k)]))
        .collect();

    let mut plan = ReconfigPlan {
        mode: PlanMode::Unrecoverable,
        faulty,
        p: None,
        c_f: linalg::to_rows(c_if),
        augment_set: Vec::new(),
        observer: None,
        j: None,
        candidates: Vec::new(),
        warnings,
    };

    if kalman_rank(&a, c_if, cfg.tol.rank)?.1 {
        let cf = chain_form_multi(&a, &lin.b_dyn(fi), c_if)?;
        plan.mode = PlanMode::VirtualSensor;
        plan.p = Some(linalg::to_rows(&default_P(&c, &faulty_rows)?));
        plan.augment_set = vec![faulty];
        plan.observer = Some(ObserverSpec::from_chain(vec![faulty], Some(faulty), &cf));
        return Ok(plan);
    }

    for id in &cfg.excluded {
        id.check(n)?;
    }
    let pool: Vec<SubsystemId> = (0..n)
        .map(SubsystemId::from_index)
        .filter(|&id| id != faulty && !cfg.excluded.contains(&id))
        .collect();

    for extra in 1..=pool.len() {
        let mut best: Option<CostReport> = None;
        for combo in combinations(&pool, extra) {
            let ids: Vec<SubsystemId> = std::iter::once(faulty).chain(combo).collect();
            let report = evaluate_candidate(&ids, lin, faulty, c_if, cfg)?;
            if report.admissible() {
                let better = match &best {
                    None => true,
                    Some(b) => {
                        report.j < b.j || (report.j == b.j && sorted_ids(&report.candidate) < sorted_ids(&b.candidate))
                    }
                };
                if better {
                    best = Some(report.clone());
                }
            }
            plan.candidates.push(report);
        }
        if let Some(b) = best {
            let ids: Vec<SubsystemId> = b.candidate.iter().map(|&i| SubsystemId(i)).collect();
            let aug = augment_with(&ids, lin, faulty, c_if)?;
            let cf = chain_form_multi(&aug.a_new, &aug.b_new, &aug.c_new)?;
            plan.mode = PlanMode::Augmentation;
            plan.observer = Some(ObserverSpec::from_chain(ids.clone(), Some(faulty), &cf));
            plan.augment_set = ids;
            plan.j = Some(b.j);
            return Ok(plan);
        }
    }
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BankKey {
    /// `None` for a healthy singleton.
    pub faulty: Option<SubsystemId>,
    /// Sorted member ids.
    pub members: Vec<SubsystemId>,
}

impl BankKey {
    pub fn new(faulty: Option<SubsystemId>, members: &[SubsystemId]) -> Self {
        let mut members = members.to_vec();
        members.sort_unstable();
        BankKey { faulty, members }
    }
}

/// Precomputed observers for every observable candidate up to a size cap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ObserverBank {
    pub cap: usize,
    pub entries: BTreeMap<BankKey, ObserverSpec>,
}

pub const DEFAULT_BANK_CAP: usize = 3;

/// Builds the bank: healthy singletons, and every set of size `2..=cap`
/// with each member in turn treated as having lost its sensor.
pub fn build_observer_bank(lin: &LinearizedPlant, cap: usize, tol: Tolerances) -> Result<ObserverBank> {
    let n = lin.n();
    let all: Vec<SubsystemId> = (0..n).map(SubsystemId::from_index).collect();
    let mut bank = ObserverBank { cap, entries: BTreeMap::new() };
    for &id in &all {
        let (a, c) = (lin.a_dyn(id.index()), lin.c_dyn(id.index()));
        if kalman_rank(&a, &c, tol.rank)?.1 {
            let cf = chain_form_multi(&a, &lin.b_dyn(id.index()), &c)?;
            bank.entries.insert(BankKey::new(None, &[id]), ObserverSpec::from_chain(vec![id], None, &cf));
        }
    }
    for size in 2..=cap.min(n) {
        for set in combinations(&all, size) {
            for &f in &set {
                if let Some(spec) = build_entry(&set, lin, f, tol)? {
                    bank.entries.insert(BankKey::new(Some(f), &set), spec);
                }
            }
        }
    }
    Ok(bank)
}

fn build_entry(set: &[SubsystemId], lin: &LinearizedPlant, faulty: SubsystemId, tol: Tolerances) -> Result<Option<ObserverSpec>> {
    let ids: Vec<SubsystemId> = std::iter::once(faulty).chain(set.iter().copied().filter(|&i| i != faulty)).collect();
    let aug = augment(&ids, lin, faulty)?;
    if !kalman_rank(&aug.a_new, &aug.c_new, tol.rank)?.1 {
        return Ok(None);
    }
    // Observable, but no single output row yields a chain form.
    match chain_form_multi(&aug.a_new, &aug.b_new, &aug.c_new) {
        Ok(cf) => Ok(Some(ObserverSpec::from_chain(ids, Some(faulty), &cf))),
        Err(Error::Unobservable { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

impl ObserverBank {
    pub fn get(&self, faulty: Option<SubsystemId>, members: &[SubsystemId]) -> Option<&ObserverSpec> {
        self.entries.get(&BankKey::new(faulty, members))
    }

    /// Looks up an entry, building and caching it on a miss.
    pub fn get_or_build(
        &mut self,
        lin: &LinearizedPlant,
        faulty: SubsystemId,
        members: &[SubsystemId],
        tol: Tolerances,
    ) -> Result<Option<ObserverSpec>> {
        let key = BankKey::new(Some(faulty), members);
        if let Some(s) = self.entries.get(&key) {
            return Ok(Some(s.clone()));
        }
        let built = build_entry(members, lin, faulty, tol)?;
        if let Some(s) = &built {
            self.entries.insert(key, s.clone());
        }
        Ok(built)
    }
}
