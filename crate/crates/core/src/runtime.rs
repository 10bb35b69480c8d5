//! Closed-loop execution of quantized controllers and trajectory-level checks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::determinize::DecisionTree;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::format::fmt_sig12;
use crate::lattice::{Lattice, StateBox};
use crate::synthesis::{ModeSet, RefinedController, INF};
use crate::system::SampledSystem;

#[derive(Debug, Clone, PartialEq)]
pub enum Spec {
    Safety { safe: StateBox },
    Reach { safe: StateBox, target: StateBox },
}

impl Spec {
    pub fn safe(&self) -> &StateBox {
        match self {
            Spec::Safety { safe } | Spec::Reach { safe, .. } => safe,
        }
    }

    pub fn target(&self) -> Option<&StateBox> {
        match self {
            Spec::Safety { .. } => None,
            Spec::Reach { target, .. } => Some(target),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Policy {
    /// `C = K o Q_eta`.
    SetValued(RefinedController),
    /// `C_d`, a single mode per cell.
    Tree(DecisionTree),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Mode(usize),
    Blocked,
}

/// How a mode is picked from a set-valued enabled set.
#[derive(Debug, Clone)]
pub enum Selector {
    Lowest,
    Random(ChaCha8Rng),
}

impl Selector {
    pub fn seeded(seed: u64) -> Self {
        Selector::Random(ChaCha8Rng::seed_from_u64(seed))
    }

    fn pick(&mut self, set: ModeSet) -> Option<usize> {
        match self {
            Selector::Lowest => set.lowest(),
            Selector::Random(rng) if !set.is_empty() => {
                let k = rng.random_range(0..set.len());
                set.iter().nth(k)
            }
            Selector::Random(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Controller {
    lat: Lattice,
    spec: Spec,
    modes: usize,
    policy: Policy,
}

impl Controller {
    pub fn new(lat: Lattice, spec: Spec, modes: usize, policy: Policy) -> Result<Self> {
        if spec.safe().dim() != lat.dim() || spec.target().is_some_and(|t| t.dim() != lat.dim()) {
            return Err(Error::Dimension("spec boxes do not match the lattice dimension".into()));
        }
        let range_dim = match &policy {
            Policy::SetValued(k) => k.cells.dim(),
            Policy::Tree(t) => t.cells().dim(),
        };
        if range_dim != lat.dim() {
            return Err(Error::Dimension("controller cells do not match the lattice dimension".into()));
        }
        Ok(Controller { lat, spec, modes, policy })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn spec(&self) -> &Spec {
        &self.spec
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// Modes the controller allows at `x`.
    pub fn enabled(&self, x: &[f64]) -> ModeSet {
        let q = self.lat.quantize(x);
        match &self.policy {
            Policy::SetValued(k) => k.k_at(&q.0).unwrap_or(ModeSet::EMPTY),
            Policy::Tree(t) => {
                let inside = match &self.spec {
                    Spec::Safety { safe } => safe.contains(x),
                    Spec::Reach { safe, target } => safe.contains(x) && !target.contains(x),
                };
                match (inside, &self.spec) {
                    (true, _) => t.lookup(&q.0).map(ModeSet::single).unwrap_or(ModeSet::EMPTY),
                    (false, Spec::Safety { .. }) => ModeSet::EMPTY,
                    (false, Spec::Reach { .. }) => ModeSet::all(self.modes),
                }
            }
        }
    }

    pub fn step(&self, x: &[f64]) -> Action {
        self.step_with(x, &mut Selector::Lowest)
    }

    pub fn step_with(&self, x: &[f64], sel: &mut Selector) -> Action {
        sel.pick(self.enabled(x)).map_or(Action::Blocked, Action::Mode)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub tau: f64,
    pub states: Vec<Vec<f64>>,
    /// `modes[i]` drives `states[i]` to `states[i + 1]`.
    pub modes: Vec<usize>,
    pub blocked: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.push("mode".into());
        writeln!(w, "{}", header.join(","))?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![fmt_sig12(k as f64 * self.tau)];
            row.extend(x.iter().map(|&v| fmt_sig12(v)));
            row.push(match self.modes.get(k) {
                Some(p) => p.to_string(),
                None if self.blocked => "BLOCKED".into(),
                None => String::new(),
            });
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

pub fn run_closed_loop(sys: &SampledSystem, ctrl: &Controller, x0: &[f64], steps: usize) -> Result<Trajectory> {
    run_closed_loop_with(sys, ctrl, x0, steps, &mut Selector::Lowest)
}

pub fn run_closed_loop_with(
    sys: &SampledSystem,
    ctrl: &Controller,
    x0: &[f64],
    steps: usize,
    sel: &mut Selector,
) -> Result<Trajectory> {
    run_until(sys, ctrl, x0, steps, sel, |_| false)
}

fn run_until(
    sys: &SampledSystem,
    ctrl: &Controller,
    x0: &[f64],
    steps: usize,
    sel: &mut Selector,
    stop: impl Fn(&[f64]) -> bool,
) -> Result<Trajectory> {
    if x0.len() != sys.dim() {
        return Err(Error::Dimension(format!("x0 has {} entries, system has {}", x0.len(), sys.dim())));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state".into()));
    }
    let mut traj = Trajectory { tau: sys.tau(), states: vec![x0.to_vec()], modes: Vec::new(), blocked: false };
    let mut x = x0.to_vec();
    for _ in 0..steps {
        if stop(&x) {
            break;
        }
        match ctrl.step_with(&x, sel) {
            Action::Blocked => {
                traj.blocked = true;
                break;
            }
            Action::Mode(p) => {
                x = sys.step(p, &x)?;
                traj.modes.push(p);
                traj.states.push(x.clone());
            }
        }
    }
    Ok(traj)
}

/// Steps until the first state in the target with all earlier states safe;
/// `None` when that never happens within the trajectory.
pub fn entry_time(traj: &Trajectory, safe: &StateBox, target: &StateBox) -> Option<usize> {
    for (k, x) in traj.states.iter().enumerate() {
        if !safe.contains(x) {
            return None;
        }
        if target.contains(x) {
            return Some(k);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub x0: Vec<f64>,
    pub steps: usize,
    pub blocked: bool,
    pub left_safe: bool,
    /// Reach only.
    pub entry: Option<usize>,
    pub bound: Option<u32>,
    /// Visited states where the applied mode was not in `K(Q_eta(x))` though
    /// the set-valued controller constrains that state.
    pub membership_violations: usize,
}

impl RunOutcome {
    pub fn violated(&self) -> bool {
        if self.membership_violations > 0 {
            return true;
        }
        match self.bound {
            None => self.blocked || self.left_safe,
            Some(b) => self.entry.is_none_or(|e| e as u64 > b as u64),
        }
    }

    /// `entry - bound`, when both are finite.
    pub fn slack(&self) -> Option<i64> {
        Some(self.entry? as i64 - self.bound? as i64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub runs: Vec<RunOutcome>,
}

impl McReport {
    pub fn violations(&self) -> usize {
        self.runs.iter().filter(|r| r.violated()).count()
    }

    pub fn violation_rate(&self) -> f64 {
        self.violations() as f64 / self.runs.len().max(1) as f64
    }

    /// Largest `entry - bound` over reach runs.
    pub fn max_slack(&self) -> Option<i64> {
        self.runs.iter().filter_map(RunOutcome::slack).max()
    }

    pub fn passed(&self) -> bool {
        self.violations() == 0
    }
}

/// Seeded closed-loop validation from starts drawn uniformly over `dom(K)`
/// (safety) or the finite-`J~` cells outside the target (reach). Run `i`
/// uses ChaCha stream `i`, so results do not depend on scheduling.
pub fn monte_carlo_validate(
    sys: &SampledSystem,
    ctrl: &Controller,
    reference: &RefinedController,
    n_runs: usize,
    steps: usize,
    seed: u64,
    exec: Exec,
) -> Result<McReport> {
    if n_runs == 0 {
        return Err(Error::InvalidParameter("n_runs must be at least 1".into()));
    }
    let lat = ctrl.lattice();
    let safe = ctrl.spec().safe();
    let target = ctrl.spec().target();
    let eligible: Vec<usize> = (0..reference.cells.len())
        .filter(|&i| match (&reference.j_tilde, target) {
            (Some(j), Some(t)) => {
                j[i] != INF && j[i] > 0 && !t.contains(&lat.center(&crate::lattice::Cell(reference.cells.coords_of(i))))
            }
            _ => !reference.k[i].is_empty(),
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::EmptySpec("no eligible start cells".into()));
    }
    let half = lat.spacing() / 2.0;
    let outcomes = exec.map(n_runs, |run| -> Result<RunOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run as u64);
        // a point in the quantization cell that also lies in Y_S
        let (x0, cell) = loop {
            let idx = eligible[rng.random_range(0..eligible.len())];
            let k = reference.cells.coords_of(idx);
            let x: Vec<f64> = k.iter().map(|&ki| ki as f64 * lat.spacing() + rng.random_range(-half..half)).collect();
            if safe.contains(&x) && lat.quantize(&x).0 == k && target.is_none_or(|t| !t.contains(&x)) {
                break (x, idx);
            }
        };
        let bound = reference.j_tilde.as_ref().map(|j| j[cell]);
        let horizon = bound.map_or(steps, |b| b as usize);
        let traj = match target {
            Some(t) => run_until(sys, ctrl, &x0, horizon, &mut Selector::Lowest, |x| t.contains(x) || !safe.contains(x))?,
            None => run_closed_loop(sys, ctrl, &x0, horizon)?,
        };
        let membership_violations = traj
            .states
            .iter()
            .zip(&traj.modes)
            .filter(|(x, &p)| {
                let q = lat.quantize(x);
                let Some(i) = reference.cells.index_of(&q.0) else { return false };
                let constrained = match (&reference.j_tilde, target) {
                    (Some(j), Some(t)) => j[i] != INF && safe.contains(x) && !t.contains(x),
                    _ => !reference.k[i].is_empty(),
                };
                constrained && !reference.k[i].contains(p)
            })
            .count();
        Ok(RunOutcome {
            x0,
            steps: traj.modes.len(),
            blocked: traj.blocked,
            left_safe: traj.states.iter().any(|x| !safe.contains(x)),
            entry: target.and_then(|t| entry_time(&traj, safe, t)),
            bound,
            membership_violations,
        })
    });
    Ok(McReport { runs: outcomes.into_iter().collect::<Result<_>>()? })
}
