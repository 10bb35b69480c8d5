//! End-to-end orchestration shared by the command-line tool and the tests.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::abstraction::SymbolicModel;
use crate::artifact::{ControllerFile, Meta, TreeFile};
use crate::config::{Decimal, ProblemConfig};
use crate::determinize::{determinize, verify_determinization, Permissions, VerificationReport};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lattice::{CellRange, Lattice, StateBox};
use crate::runtime::{entry_time, run_closed_loop, Controller, Policy, Spec, Trajectory};
use crate::synthesis::{
    synthesize_reach, synthesize_safety, RefinedController, Refinement, SpecKind, INF,
};
use crate::system::{check_precision, LyapunovCertificate, SampledSystem, SamplingParams, SwitchedSystem};

/// A validated problem instance.
#[derive(Debug, Clone)]
pub struct Problem {
    pub config: ProblemConfig,
    pub system: SwitchedSystem,
    pub certificate: LyapunovCertificate,
    pub params: SamplingParams,
    pub eta: Decimal,
    pub lattice: Lattice,
    pub spec: Spec,
}

impl Problem {
    pub fn new(config: &ProblemConfig) -> Result<Self> {
        let system = config.system.build()?;
        let n = system.dim();
        let certificate = config.certificate.build(n)?;
        let eta = config.resolve_eta()?;
        let params = SamplingParams::new(config.params.tau, eta.value, config.params.epsilon.value)
            .map_err(|e| Error::PrecisionViolated(e.to_string()))?;
        if !check_precision(&certificate, &params) {
            return Err(Error::PrecisionViolated(format!(
                "eta = {} is too coarse for epsilon = {}: the condition needs epsilon >= {:.6}",
                eta.text,
                config.params.epsilon.text,
                eta.value + certificate.precision_rhs(params.tau, params.eta)
            )));
        }
        let lattice = Lattice::new(n, eta.value)?;
        let safe = config.spec.safe.clone();
        safe.contract(params.epsilon)?;
        let spec = match (&config.spec.target, config.spec.kind) {
            (Some(t), SpecKind::Reach) => {
                if (0..n).any(|i| t.lo()[i] < safe.lo()[i] || t.hi()[i] > safe.hi()[i]) {
                    return Err(Error::Config("target box is not inside the safe box".into()));
                }
                t.contract(params.epsilon)?;
                Spec::Reach { safe, target: t.clone() }
            }
            _ => Spec::Safety { safe },
        };
        Ok(Problem { config: config.clone(), system, certificate, params, eta, lattice, spec })
    }

    pub fn kind(&self) -> SpecKind {
        self.config.spec.kind
    }

    pub fn sampled(&self) -> Result<SampledSystem> {
        self.system.sampled(self.params.tau, self.config.runtime.substeps)
    }

    /// `Q_eta(Y_S)`: the abstraction domain and the controller's cells.
    pub fn spec_cells(&self) -> CellRange {
        self.lattice.cell_range(self.spec.safe())
    }

    pub fn abstraction(&self, exec: Exec) -> Result<SymbolicModel> {
        SymbolicModel::build(&self.sampled()?, &self.lattice, self.spec.safe(), exec)
    }

    /// Abstract cells whose centres lie in `Cont_eps(b)`.
    fn contracted_cells(&self, b: &StateBox) -> Result<CellRange> {
        let cells = self.lattice.centers_within(&b.contract(self.params.epsilon)?);
        if cells.is_empty() {
            return Err(Error::EmptySpec("the contracted box contains no lattice point".into()));
        }
        Ok(cells)
    }

    pub fn meta(&self) -> Meta {
        Meta {
            kind: self.kind(),
            n: self.lattice.dim(),
            eta: self.eta.text.clone(),
            safe: self.spec.safe().clone(),
            target: self.spec.target().cloned(),
            modes: self.system.mode_count(),
        }
    }

    pub fn synthesize(&self, exec: Exec) -> Result<Synthesis> {
        let model = self.abstraction(exec)?;
        let refinement = Refinement::new(&self.lattice, &self.certificate, &self.params)?;
        let spec_cells = self.spec_cells();
        let safe = self.contracted_cells(self.spec.safe())?;
        let (controller, abstract_dom) = match &self.spec {
            Spec::Safety { .. } => {
                let s = synthesize_safety(&model, &safe, exec)?;
                let dom = s.dom_size();
                let k = refinement.safety(&s, model.domain(), &spec_cells, self.config.runtime.dilation, exec)?;
                (k, dom)
            }
            Spec::Reach { target, .. } => {
                let target = self.contracted_cells(target)?;
                let r = synthesize_reach(&model, &safe, &target, exec)?;
                let dom = r.reachable_count();
                let k = refinement.reach(&r, model.domain(), &spec_cells, self.config.runtime.refine, exec)?;
                (k, dom)
            }
        };
        let file = ControllerFile {
            meta: self.meta(),
            epsilon: self.config.params.epsilon.text.clone(),
            tau: format!("{}", self.params.tau),
            controller,
        };
        Ok(Synthesis { out_fraction: model.out_fraction(), cells: model.len(), abstract_dom, file })
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub cells: usize,
    pub out_fraction: f64,
    /// Size of the abstract controller's domain (or finite-`J` set).
    pub abstract_dom: usize,
    pub file: ControllerFile,
}

/// Counts of finite `J~` values, with `None` for unbounded cells.
pub fn j_histogram(j: &[u32]) -> BTreeMap<Option<u32>, usize> {
    let mut h = BTreeMap::new();
    for &v in j {
        *h.entry((v != INF).then_some(v)).or_insert(0) += 1;
    }
    h
}

pub fn permissions(file: &ControllerFile) -> Result<Permissions> {
    let target_inside = match &file.meta.target {
        Some(t) => Some(file.meta.lattice()?.cells_inside(t)),
        None => None,
    };
    Permissions::for_controller(&file.controller, target_inside.as_ref(), file.meta.modes)
}

/// Builds and exhaustively checks the decision tree for a controller file.
pub fn determinize_file(file: &ControllerFile, exec: Exec) -> Result<(TreeFile, VerificationReport)> {
    let perm = permissions(file)?;
    let tree = determinize(&perm)?;
    let report = verify_determinization(&tree, &perm, exec)?;
    Ok((TreeFile { meta: file.meta.clone(), tree }, report))
}

#[derive(Debug, Clone)]
pub enum Artifact {
    Controller(ControllerFile),
    Tree(TreeFile),
}

impl Artifact {
    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        let mut r = BufReader::new(f);
        let magic = r.fill_buf()?.get(..4).map(|m| m.to_vec()).unwrap_or_default();
        match magic.as_slice() {
            b"QSC1" => Ok(Artifact::Controller(ControllerFile::read(r)?)),
            b"QST1" => Ok(Artifact::Tree(TreeFile::read(r)?)),
            _ => Err(Error::Format(format!("{} is neither a controller nor a tree file", path.display()))),
        }
    }

    pub fn meta(&self) -> &Meta {
        match self {
            Artifact::Controller(c) => &c.meta,
            Artifact::Tree(t) => &t.meta,
        }
    }

    pub fn controller(&self) -> Result<Controller> {
        let meta = self.meta();
        let policy = match self {
            Artifact::Controller(c) => Policy::SetValued(c.controller.clone()),
            Artifact::Tree(t) => Policy::Tree(t.tree.clone()),
        };
        Controller::new(meta.lattice()?, meta.spec()?, meta.modes, policy)
    }
}

/// Checks that an artifact was produced for this problem.
pub fn check_compatible(problem: &Problem, meta: &Meta) -> Result<()> {
    let mine = problem.meta();
    if mine.kind != meta.kind
        || mine.n != meta.n
        || mine.modes != meta.modes
        || mine.safe != meta.safe
        || mine.target != meta.target
        || problem.lattice.eta() != meta.lattice()?.eta()
    {
        return Err(Error::Config("artifact does not match the configured problem".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// Blocked at the initial state: outside the controller's domain.
    OutOfDomain,
    Safe,
    Unsafe { step: usize, blocked: bool },
    Reached { entry: usize },
    Missed,
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::OutOfDomain => "OUT-OF-DOMAIN",
            Verdict::Safe => "SAFE",
            Verdict::Unsafe { .. } => "UNSAFE",
            Verdict::Reached { .. } => "REACHED",
            Verdict::Missed => "MISSED",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationReport {
    pub trajectory: Trajectory,
    pub verdict: Verdict,
    /// Whether the start lies where the theorems promise something:
    /// `K(Q(x0))` nonempty for safety, `J~(Q(x0))` finite for reach.
    pub guaranteed: bool,
    pub bound: Option<u32>,
    /// The guaranteed property failed.
    pub violation: bool,
}

/// Closed-loop run with a verdict; `reference` supplies `K` and `J~` for
/// deciding whether the start is covered by the guarantees.
pub fn simulate(
    sys: &SampledSystem,
    ctrl: &Controller,
    reference: Option<&RefinedController>,
    x0: &[f64],
    steps: usize,
) -> Result<SimulationReport> {
    let traj = run_closed_loop(sys, ctrl, x0, steps)?;
    let spec = ctrl.spec();
    let safe = spec.safe();
    let q = ctrl.lattice().quantize(x0);
    let (guaranteed, bound) = match reference.and_then(|r| r.cells.index_of(&q.0).map(|i| (r, i))) {
        Some((r, i)) if safe.contains(x0) => match &r.j_tilde {
            Some(j) => (j[i] != INF, (j[i] != INF).then_some(j[i])),
            None => (!r.k[i].is_empty(), None),
        },
        _ => (false, None),
    };
    let verdict = match spec {
        _ if traj.blocked && traj.modes.is_empty() => Verdict::OutOfDomain,
        Spec::Reach { .. } if !safe.contains(x0) => Verdict::OutOfDomain,
        Spec::Safety { .. } => match traj.states.iter().position(|x| !safe.contains(x)) {
            Some(step) => Verdict::Unsafe { step, blocked: false },
            None if traj.blocked => Verdict::Unsafe { step: traj.modes.len(), blocked: true },
            None => Verdict::Safe,
        },
        Spec::Reach { target, .. } => match entry_time(&traj, safe, target) {
            Some(entry) => Verdict::Reached { entry },
            None => Verdict::Missed,
        },
    };
    let violation = guaranteed
        && match (&verdict, bound) {
            (Verdict::Unsafe { .. }, _) => true,
            (Verdict::Reached { entry }, Some(b)) => *entry as u64 > b as u64,
            // a miss only counts once the run was long enough to see the bound
            (Verdict::Missed, Some(b)) => steps as u64 >= b as u64,
            (Verdict::OutOfDomain, _) => true,
            _ => false,
        };
    Ok(SimulationReport { trajectory: traj, verdict, guaranteed, bound, violation })
}

/// Reads a whole controller file from disk.
pub fn read_controller(path: &Path) -> Result<ControllerFile> {
    ControllerFile::read(BufReader::new(std::fs::File::open(path)?))
}
