use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observer::InteractionBounds;
use crate::reconfig::{FaultEvent, PlanMode, ReconfigPlan, SubsystemId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// A sensor fault starts acting on the measurements.
    Fault,
    /// The fault is diagnosed and the loop switches to the plan.
    Fdi,
    /// The state left the configured divergence bound; the run stopped.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t: f64,
    pub step: usize,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subsystem: Option<SubsystemId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fault_index: Option<usize>,
    /// Mode switched to; `None` when reconfiguration is disabled.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<PlanMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub plan_id: Option<usize>,
    pub detail: String,
}

impl Event {
    pub fn label(&self) -> String {
        let sub = self.subsystem.map_or(String::new(), |s| format!(":{s}"));
        match self.kind {
            EventKind::Fault => format!("fault{sub}:{}", self.detail),
            EventKind::Fdi => match self.mode {
                Some(m) => format!("fdi{sub}:{m}"),
                None => format!("fdi{sub}:disabled"),
            },
            EventKind::Diverged => "diverged".to_string(),
        }
    }
}

/// Time-indexed record of one run. Per-step data are stored row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub n: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    /// True deviation states, `3n` per row.
    pub x: Vec<f64>,
    /// Estimates in physical coordinates, `3n` per row.
    pub x_hat: Vec<f64>,
    /// Measured outputs as delivered by the sensors, `n` per row.
    pub y: Vec<f64>,
    /// Outputs after reconstruction, `n` per row.
    pub y_tilde: Vec<f64>,
    /// Observer gains, `n` per row.
    pub gain: Vec<f64>,
    /// Index into `plans` of the plan active per row, or `usize::MAX`.
    pub active_plan: Vec<usize>,
    pub events: Vec<Event>,
    pub plans: Vec<ReconfigPlan>,
    pub interaction: InteractionBounds,
    pub diverged: bool,
}

pub const NO_PLAN: usize = usize::MAX;

impl TrajectoryLog {
    pub fn new(n: usize, dt: f64, capacity: usize) -> Self {
        TrajectoryLog {
            n,
            dt,
            t: Vec::with_capacity(capacity),
            x: Vec::with_capacity(capacity * 3 * n),
            x_hat: Vec::with_capacity(capacity * 3 * n),
            y: Vec::with_capacity(capacity * n),
            y_tilde: Vec::with_capacity(capacity * n),
            gain: Vec::with_capacity(capacity * n),
            active_plan: Vec::with_capacity(capacity),
            ..Default::default()
        }
    }

    pub fn rows(&self) -> usize {
        self.t.len()
    }

    pub fn x_row(&self, k: usize) -> &[f64] {
        &self.x[3 * self.n * k..3 * self.n * (k + 1)]
    }

    pub fn x_hat_row(&self, k: usize) -> &[f64] {
        &self.x_hat[3 * self.n * k..3 * self.n * (k + 1)]
    }

    pub fn gain_row(&self, k: usize) -> &[f64] {
        &self.gain[self.n * k..self.n * (k + 1)]
    }

    /// `‖x − x̂‖∞` at row `k`, optionally restricted to one subsystem.
    pub fn estimation_error(&self, k: usize, sub: Option<usize>) -> f64 {
        let (x, xh) = (self.x_row(k), self.x_hat_row(k));
        let range = match sub {
            Some(i) => 3 * i..3 * i + 3,
            None => 0..3 * self.n,
        };
        range.map(|j| (x[j] - xh[j]).abs()).fold(0.0, f64::max)
    }

    /// `‖x‖∞` at row `k`.
    pub fn deviation(&self, k: usize) -> f64 {
        self.x_row(k).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string()];
        for i in 1..=self.n {
            h.extend((1..=3).map(|k| format!("sub{i}_x{k}")));
            h.extend((1..=3).map(|k| format!("sub{i}_xhat{k}")));
            h.push(format!("sub{i}_y"));
            h.push(format!("sub{i}_L"));
        }
        h.push("event".to_string());
        h
    }

    pub fn write_csv<W: Write>(&self, w: W) -> io::Result<()> {
        let mut w = io::BufWriter::new(w);
        writeln!(w, "{}", self.csv_header().join(","))?;
        let mut ev = self.events.iter().peekable();
        let n = self.n;
        for k in 0..self.rows() {
            write!(w, "{}", self.t[k])?;
            let (x, xh) = (self.x_row(k), self.x_hat_row(k));
            for i in 0..n {
                for j in 0..3 {
                    write!(w, ",{}", x[3 * i + j])?;
                }
                for j in 0..3 {
                    write!(w, ",{}", xh[3 * i + j])?;
                }
                write!(w, ",{},{}", self.y[n * k + i], self.gain[n * k + i])?;
            }
            let mut labels = Vec::new();
            while let Some(e) = ev.peek() {
                if e.step != k {
                    break;
                }
                labels.push(e.label());
                ev.next();
            }
            writeln!(w, ",{}", labels.join(";"))?;
        }
        w.flush()
    }

    pub fn write_events<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.events)?;
        Ok(())
    }

    /// Per-fault recovery judgement. The interval of fault `k` runs until
    /// the next fault or the end of the log; it counts as recovered when
    /// the largest `‖x‖∞` over its trailing `window` seconds is below
    /// `fraction` of the peak over the interval.
    pub fn recovery(&self, faults: &[FaultEvent], window: f64, fraction: f64) -> Result<Vec<RecoveryVerdict>> {
        if self.rows() == 0 {
            return Err(Error::param("trajectory", "empty log"));
        }
        let step_of = |t: f64| grid_step(t, self.dt).min(self.rows());
        let mut out = Vec::with_capacity(faults.len());
        for (k, f) in faults.iter().enumerate() {
            let start = step_of(f.t_fault);
            let end = faults.get(k + 1).map_or(self.rows(), |g| step_of(g.t_fault));
            let plan_mode = self
                .events
                .iter()
                .find(|e| e.kind == EventKind::Fdi && e.fault_index == Some(k))
                .and_then(|e| e.mode);
            let truncated = self.diverged && end == self.rows();
            if start >= end {
                out.push(RecoveryVerdict { fault_index: k, peak: f64::NAN, tail_max: f64::NAN, recovered: false, mode: plan_mode, diverged: self.diverged });
                continue;
            }
            let peak = (start..end).map(|r| self.deviation(r)).fold(0.0, f64::max);
            let w = ((window / self.dt).round() as usize).max(1);
            let tail_start = end.saturating_sub(w).max(start);
            let tail_max = (tail_start..end).map(|r| self.deviation(r)).fold(0.0, f64::max);
            let recovered = !truncated && plan_mode != Some(PlanMode::Unrecoverable) && tail_max < fraction * peak;
            out.push(RecoveryVerdict { fault_index: k, peak, tail_max, recovered, mode: plan_mode, diverged: truncated });
        }
        Ok(out)
    }
}

/// Step index of the first grid point at or after `t`.
pub fn grid_step(t: f64, dt: f64) -> usize {
    let r = t / dt;
    let k = r.round();
    if (r - k).abs() <= 1e-9 * r.abs().max(1.0) {
        k as usize
    } else {
        r.ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryVerdict {
    pub fault_index: usize,
    pub peak: f64,
    pub tail_max: f64,
    pub recovered: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<PlanMode>,
    pub diverged: bool,
}
