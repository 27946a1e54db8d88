use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::control::{controller_gains, nominal_controller};
use super::log::{grid_step, Event, EventKind, TrajectoryLog, NO_PLAN};
use super::scenario::Scenario;
use crate::error::{Error, Result};
use crate::observer::{chain_from_row, ChainForm, InteractionBounds, InteractionSample, Observer};
use crate::power::dynamics::{rhs_into, Workspace};
use crate::power::{linearize, LinearizedPlant, PlantModel, PlantState};
use crate::reconfig::{
    build_observer_bank, faulty_output_matrix, rftc_select, FaultEvent, FaultKind, ObserverBank, PlanMode,
    SelectionConfig, SubsystemId,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub value: f64,
    pub valid: bool,
}

/// Sensor readings `yᵢ = Δδᵢ` with the active faults applied. `held[k]` is
/// the pre-fault value frozen by a stuck fault `k`.
pub fn measure(state: &PlantState, faults: &[FaultEvent], active: &[bool], held: &[f64]) -> Vec<Measurement> {
    let n = state.n_machines();
    let mut y: Vec<Measurement> = (0..n).map(|i| Measurement { value: state.delta_dev(i), valid: true }).collect();
    for (k, f) in faults.iter().enumerate() {
        if !active.get(k).copied().unwrap_or(false) {
            continue;
        }
        let m = &mut y[f.subsystem.index()];
        if !m.valid {
            continue;
        }
        match f.kind {
            FaultKind::Gain { factor } => m.value *= factor,
            FaultKind::Stuck => m.value = held.get(k).copied().unwrap_or(m.value),
            FaultKind::TotalLoss => *m = Measurement { value: 0.0, valid: false },
        }
    }
    y
}

/// Degraded output row and selection settings for diagnosing fault `k`
/// while the faults flagged in `active` are acting. Other subsystems with
/// active faults are kept out of the augmentation.
pub fn diagnosis_inputs(scn: &Scenario, lin: &LinearizedPlant, k: usize, active: &[bool]) -> (DMatrix<f64>, SelectionConfig) {
    let faulty = scn.faults[k].subsystem;
    let on = |f: &&FaultEvent, a: &bool| *a && f.subsystem == faulty;
    let on_sub: Vec<&FaultEvent> = scn.faults.iter().zip(active).filter(|(f, a)| on(f, a)).map(|(f, _)| f).collect();
    let c_if = faulty_output_matrix(&lin.c_dyn(faulty.index()), &on_sub);
    let mut cfg = scn.selection();
    cfg.excluded = scn
        .faults
        .iter()
        .zip(active)
        .filter(|(f, &a)| a && f.subsystem != faulty)
        .map(|(f, _)| f.subsystem)
        .collect();
    cfg.excluded.sort_unstable();
    cfg.excluded.dedup();
    (c_if, cfg)
}

/// Faults that have started by the time fault `k` is diagnosed, on the
/// scenario's time grid.
pub fn active_at_diagnosis(scn: &Scenario, k: usize) -> Vec<bool> {
    let at = grid_step(scn.faults[k].t_diagnosed(), scn.dt);
    scn.faults.iter().map(|f| grid_step(f.t_fault, scn.dt) <= at).collect()
}

/// Where a subsystem's estimate comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Local,
    Augmented(usize),
}

struct AugObserver {
    obs: Observer,
    /// Member indices, faulty first.
    members: Vec<usize>,
    /// Output combination weights per member.
    weights: Vec<f64>,
}

struct VirtualSensor {
    p: f64,
    c_f: [f64; 3],
}

/// Runs a scenario against an already loaded plant.
pub fn run_scenario(scn: &Scenario, plant: &PlantModel) -> Result<TrajectoryLog> {
    scn.validate(plant)?;
    let lin = linearize(&plant.operating_point, &plant.generators, &plant.network)?;
    let gains = controller_gains(&scn.controller, &lin)?;
    let mut bank = build_observer_bank(&lin, scn.bank_cap, scn.tol)?;
    let mut engine = Engine::new(scn, plant, &lin, &gains, &mut bank)?;
    engine.run()?;
    Ok(engine.log)
}

/// Loads the plant referenced by the scenario and runs it.
pub fn run_scenario_file(path: &std::path::Path) -> Result<TrajectoryLog> {
    let (scn, plant) = Scenario::load(path)?;
    run_scenario(&scn, &plant)
}

struct Engine<'a> {
    scn: &'a Scenario,
    plant: &'a PlantModel,
    lin: &'a LinearizedPlant,
    gains: &'a [[f64; 3]],
    bank: &'a mut ObserverBank,
    n: usize,
    x: Vec<f64>,
    local: Vec<Observer>,
    /// Healthy chain forms used for the interaction diagnostic.
    chains: Vec<ChainForm>,
    source: Vec<Source>,
    augs: Vec<AugObserver>,
    vs: Vec<Option<VirtualSensor>>,
    active: Vec<bool>,
    held: Vec<f64>,
    last_y: Vec<f64>,
    active_plan: usize,
    rng: ChaCha8Rng,
    ws: Workspace,
    log: TrajectoryLog,
}

impl<'a> Engine<'a> {
    fn new(
        scn: &'a Scenario,
        plant: &'a PlantModel,
        lin: &'a LinearizedPlant,
        gains: &'a [[f64; 3]],
        bank: &'a mut ObserverBank,
    ) -> Result<Self> {
        let n = plant.n();
        let x = if scn.initial_state.is_empty() { vec![0.0; 3 * n] } else { scn.initial_state.clone() };
        let mut local = Vec::with_capacity(n);
        let mut chains = Vec::with_capacity(n);
        for i in 0..n {
            let id = SubsystemId::from_index(i);
            let spec = bank.get(None, &[id]).ok_or(Error::Unobservable { rank: 0, n: 3 })?;
            let cf = spec.chain_form()?;
            let mut x0 = DVector::from_column_slice(&x[3 * i..3 * i + 3]);
            if !scn.observer.initial_offset.is_empty() {
                x0 += DVector::from_column_slice(&scn.observer.initial_offset[3 * i..3 * i + 3]);
            }
            local.push(Observer::new(cf.clone(), &scn.observer, &x0)?);
            chains.push(cf);
        }
        let steps = scn.steps();
        Ok(Engine {
            scn,
            plant,
            lin,
            gains,
            bank,
            n,
            x,
            local,
            chains,
            source: vec![Source::Local; n],
            augs: Vec::new(),
            vs: (0..n).map(|_| None).collect(),
            active: vec![false; scn.faults.len()],
            held: vec![0.0; scn.faults.len()],
            last_y: vec![0.0; n],
            active_plan: NO_PLAN,
            rng: ChaCha8Rng::seed_from_u64(scn.seed),
            ws: Workspace::new(n),
            log: TrajectoryLog::new(n, scn.dt, steps),
        })
    }

    fn estimate(&self, i: usize) -> [f64; 3] {
        match self.source[i] {
            Source::Local => {
                let e = self.local[i].estimate_physical();
                [e[0], e[1], e[2]]
            }
            Source::Augmented(a) => {
                let aug = &self.augs[a];
                let pos = aug.members.iter().position(|&m| m == i).expect("member");
                let e = aug.obs.estimate_physical();
                [e[3 * pos], e[3 * pos + 1], e[3 * pos + 2]]
            }
        }
    }

    fn gain(&self, i: usize) -> f64 {
        match self.source[i] {
            Source::Local => self.local[i].state.l,
            Source::Augmented(a) => self.augs[a].obs.state.l,
        }
    }

    fn push_event(&mut self, step: usize, kind: EventKind, fault: Option<usize>, mode: Option<PlanMode>, detail: String) {
        let subsystem = fault.map(|k| self.scn.faults[k].subsystem);
        let plan_id = if kind == EventKind::Fdi && mode.is_some() { Some(self.log.plans.len() - 1) } else { None };
        self.log.events.push(Event { t: step as f64 * self.scn.dt, step, kind, subsystem, fault_index: fault, mode, plan_id, detail });
    }

    fn activate_fault(&mut self, step: usize, k: usize) {
        let f = &self.scn.faults[k];
        self.held[k] = self.last_y[f.subsystem.index()];
        self.active[k] = true;
        let detail = match f.kind {
            FaultKind::Gain { factor } => format!("gain({factor})"),
            FaultKind::Stuck => "stuck".to_string(),
            FaultKind::TotalLoss => "total-loss".to_string(),
        };
        self.push_event(step, EventKind::Fault, Some(k), None, detail);
    }

    fn diagnose(&mut self, step: usize, k: usize) -> Result<()> {
        if !self.scn.reconfiguration {
            self.push_event(step, EventKind::Fdi, Some(k), None, "reconfiguration disabled".into());
            return Ok(());
        }
        let faulty = self.scn.faults[k].subsystem;
        let fi = faulty.index();
        let (c_if, cfg) = diagnosis_inputs(self.scn, self.lin, k, &self.active);
        let plan = rftc_select(faulty, &c_if, self.lin, &cfg)?;
        let start = self.estimate(fi);
        let start_l = self.gain(fi);
        match plan.mode {
            PlanMode::VirtualSensor => {
                let cf = chain_from_row(&self.lin.a_dyn(fi), &self.lin.b_dyn(fi), &c_if.row(0).into_owned())?;
                let mut obs = Observer::new(cf, &self.scn.observer, &DVector::from_column_slice(&start))?;
                obs.state.l = start_l.max(obs.gain_floor());
                self.local[fi] = obs;
                self.source[fi] = Source::Local;
                let p = plan.p.as_ref().map_or(1.0, |p| p[0][0]);
                self.vs[fi] = Some(VirtualSensor { p, c_f: [c_if[(0, 0)], c_if[(0, 1)], c_if[(0, 2)]] });
            }
            PlanMode::Augmentation => {
                let members: Vec<usize> = plan.augment_set.iter().map(|id| id.index()).collect();
                let spec = if c_if.iter().all(|&v| v == 0.0) {
                    self.bank.get_or_build(self.lin, faulty, &plan.augment_set, cfg.tol)?
                } else {
                    None
                };
                let spec = spec.or_else(|| plan.observer.clone()).ok_or(Error::Singular("augmented observer"))?;
                let cf = spec.chain_form()?;
                let mut x0 = Vec::with_capacity(3 * members.len());
                for (pos, &m) in members.iter().enumerate() {
                    let e = if pos == 0 { start } else { self.estimate(m) };
                    x0.extend_from_slice(&e);
                }
                let weights = members
                    .iter()
                    .enumerate()
                    .map(|(pos, &m)| {
                        if pos == 0 {
                            return 0.0;
                        }
                        let cm = self.lin.csub[m];
                        let num: f64 = (0..3).map(|j| cf.c[3 * pos + j] * cm[j]).sum();
                        num / cm.norm_squared()
                    })
                    .collect();
                let mut obs = Observer::new(cf, &self.scn.observer, &DVector::from_vec(x0))?;
                obs.state.l = start_l.max(obs.gain_floor());
                self.augs.push(AugObserver { obs, members, weights });
                self.source[fi] = Source::Augmented(self.augs.len() - 1);
                self.vs[fi] = None;
            }
            PlanMode::Unrecoverable => {}
        }
        let mode = plan.mode;
        let detail = match mode {
            PlanMode::Augmentation => format!(
                "augment {:?} J = {:.4}",
                plan.augment_set.iter().map(|s| s.0).collect::<Vec<_>>(),
                plan.j.unwrap_or(f64::NAN)
            ),
            PlanMode::VirtualSensor => "virtual sensor".into(),
            PlanMode::Unrecoverable => "no admissible candidate".into(),
        };
        self.log.plans.push(plan);
        self.active_plan = self.log.plans.len() - 1;
        self.push_event(step, EventKind::Fdi, Some(k), Some(mode), detail);
        Ok(())
    }

    fn mech_offset(&self, t: f64, out: &mut [f64]) {
        out.fill(0.0);
        for d in &self.scn.disturbances {
            if t >= d.t_start - 1e-12 && t < d.t_start + d.duration - 1e-12 {
                out[d.subsystem.index()] += d.delta_pm;
            }
        }
    }

    fn run(&mut self) -> Result<()> {
        let n = self.n;
        let dt = self.scn.dt;
        let steps = self.scn.steps();
        let fault_steps: Vec<usize> = self.scn.faults.iter().map(|f| grid_step(f.t_fault, dt)).collect();
        let fdi_steps: Vec<usize> = self.scn.faults.iter().map(|f| grid_step(f.t_diagnosed(), dt)).collect();
        let u0 = self.plant.operating_point.ef0.clone();
        let mut offset = vec![0.0; n];
        let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; 3 * n], vec![0.0; 3 * n], vec![0.0; 3 * n], vec![0.0; 3 * n]);
        let mut tmp = vec![0.0; 3 * n];
        let mut bounds = InteractionBounds::default();

        for step in 0..steps {
            let t = step as f64 * dt;
            for (k, &s) in fault_steps.iter().enumerate() {
                if s == step {
                    self.activate_fault(step, k);
                }
            }
            for (k, &s) in fdi_steps.iter().enumerate() {
                if s == step {
                    self.diagnose(step, k)?;
                }
            }

            let state = PlantState::from_slice(&self.x);
            let mut y = measure(&state, &self.scn.faults, &self.active, &self.held);
            if self.scn.noise > 0.0 {
                for m in y.iter_mut().filter(|m| m.valid) {
                    m.value += self.rng.random_range(-self.scn.noise..=self.scn.noise);
                }
            }
            let est: Vec<[f64; 3]> = (0..n).map(|i| self.estimate(i)).collect();

            self.log.t.push(t);
            self.log.x.extend_from_slice(&self.x);
            for e in &est {
                self.log.x_hat.extend_from_slice(e);
            }
            for (i, m) in y.iter().enumerate() {
                self.log.y.push(m.value);
                let yt = match &self.vs[i] {
                    Some(v) => {
                        let e = &est[i];
                        let c = self.lin.csub[i];
                        let cx: f64 = (0..3).map(|j| (c[j] - v.p * v.c_f[j]) * e[j]).sum();
                        v.p * m.value + cx
                    }
                    None if matches!(self.source[i], Source::Augmented(_)) => self.lin.csub[i][0] * est[i][0],
                    None => m.value,
                };
                self.log.y_tilde.push(yt);
                self.log.gain.push(self.gain(i));
                self.last_y[i] = m.value;
            }
            self.log.active_plan.push(self.active_plan);

            let mut u = nominal_controller(&est, self.gains, &u0);
            if let Some(lim) = self.scn.field_limit {
                for (v, &v0) in u.iter_mut().zip(&u0) {
                    *v = v.clamp(v0 - lim, v0 + lim);
                }
            }
            let du: Vec<f64> = u.iter().zip(&u0).map(|(a, b)| a - b).collect();

            for i in 0..n {
                if self.source[i] == Source::Local {
                    self.local[i].advance(y[i].value, &du[i..i + 1], dt)?;
                }
            }
            for aug in &mut self.augs {
                let ya: f64 = aug.members.iter().zip(&aug.weights).map(|(&m, w)| w * y[m].value).sum();
                let ua: Vec<f64> = aug.members.iter().map(|&m| du[m]).collect();
                aug.obs.advance(ya, &ua, dt)?;
            }

            self.mech_offset(t, &mut offset);
            rhs_into(&self.x, &u, self.plant, &offset, &mut self.ws, &mut k1);
            self.record_interaction(&k1, &du, &mut bounds);
            for j in 0..3 * n {
                tmp[j] = self.x[j] + 0.5 * dt * k1[j];
            }
            rhs_into(&tmp, &u, self.plant, &offset, &mut self.ws, &mut k2);
            for j in 0..3 * n {
                tmp[j] = self.x[j] + 0.5 * dt * k2[j];
            }
            rhs_into(&tmp, &u, self.plant, &offset, &mut self.ws, &mut k3);
            for j in 0..3 * n {
                tmp[j] = self.x[j] + dt * k3[j];
            }
            rhs_into(&tmp, &u, self.plant, &offset, &mut self.ws, &mut k4);
            for j in 0..3 * n {
                self.x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }

            let worst = self.x.iter().fold(0.0_f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY });
            let limit = self.scn.divergence_limit.unwrap_or(f64::INFINITY);
            if !(worst <= limit) {
                if step + 1 < steps {
                    self.log.diverged = true;
                    self.push_event(step + 1, EventKind::Diverged, None, None, format!("max |x| = {worst:.3e}"));
                }
                break;
            }
        }
        self.log.interaction = bounds;
        Ok(())
    }

    /// Interaction terms in each healthy chain: everything in `T ẋ` that the
    /// pure chain and the modelled input do not explain.
    fn record_interaction(&self, f: &[f64], du: &[f64], bounds: &mut InteractionBounds) {
        let n = self.n;
        let mut sample = InteractionSample { interaction: Vec::with_capacity(n), chain_states: Vec::with_capacity(n) };
        for i in 0..n {
            let cf = &self.chains[i];
            let xi = DVector::from_column_slice(&self.x[3 * i..3 * i + 3]);
            let fi = DVector::from_column_slice(&f[3 * i..3 * i + 3]);
            let z = &cf.t * xi;
            let tz = &cf.t * fi;
            let bu = &cf.b_chain * DMatrix::from_element(1, 1, du[i]);
            let row: Vec<f64> = (0..3)
                .map(|k| {
                    let chain = if k + 1 < 3 { z[k + 1] } else { 0.0 };
                    tz[k] - chain - bu[(k, 0)]
                })
                .collect();
            sample.interaction.push(row);
            sample.chain_states.push(z.iter().copied().collect());
        }
        bounds.update(&sample);
    }
}

