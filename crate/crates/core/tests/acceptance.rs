//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs the two building instances at full resolution.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qswitch::abstraction::SymbolicModel;
use qswitch::config::ProblemConfig;
use qswitch::pipeline::{self, Artifact, Problem, Synthesis};
use qswitch::runtime::{monte_carlo_validate, McReport};
use qswitch::synthesis::{
    dilate_edt, dilate_scan, min_filter, synthesize_reach, synthesize_safety, INF,
};
use qswitch::system::{check_precision, estimate_kappa, LyapunovCertificate, SamplingParams};
use qswitch::thermal::ThermalParams;
use qswitch::Exec;

struct Line {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn config(name: &str) -> ProblemConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "configs", name].iter().collect();
    ProblemConfig::load(&path).expect("bundled config parses")
}

/// Everything one pipeline run produces, as bytes where a file exists.
struct Run {
    synth_time: Duration,
    syn: Synthesis,
    table: Vec<u32>,
    qsc: Vec<u8>,
    qst: Vec<u8>,
    csv: Vec<u8>,
    nodes: usize,
    checked: usize,
    tree_violations: usize,
    mc: McReport,
}

fn run_pipeline(p: &Problem, exec: Exec, x0: &[f64]) -> Run {
    let t = Instant::now();
    let syn = p.synthesize(exec).expect("synthesis");
    let synth_time = t.elapsed();
    let table = p.abstraction(exec).expect("abstraction").table().to_vec();
    let mut qsc = Vec::new();
    syn.file.write(&mut qsc).unwrap();
    let (tree, report) = pipeline::determinize_file(&syn.file, exec).expect("determinization");
    let mut qst = Vec::new();
    tree.write(&mut qst).unwrap();
    let nodes = tree.tree.node_count();
    let ctrl = Artifact::Tree(tree).controller().unwrap();
    let sys = p.sampled().unwrap();
    let sim = pipeline::simulate(&sys, &ctrl, Some(&syn.file.controller), x0, p.config.runtime.steps).unwrap();
    let mut csv = Vec::new();
    sim.trajectory.write_csv(&mut csv).unwrap();
    let rt = &p.config.runtime;
    let mc = monte_carlo_validate(&sys, &ctrl, &syn.file.controller, rt.runs, rt.steps, rt.seed, exec).unwrap();
    Run {
        synth_time,
        syn,
        table,
        qsc,
        qst,
        csv,
        nodes,
        checked: report.checked,
        tree_violations: report.violations.len(),
        mc,
    }
}

/// Runs on 1, 4 and 8 workers, then sequentially.
fn run_all(p: &Problem, x0: &[f64]) -> Vec<(String, Run)> {
    let mut out = Vec::new();
    for t in [1usize, 4, 8] {
        out.push((format!("{t} threads"), Exec::Parallel.with_threads(Some(t), || run_pipeline(p, Exec::Parallel, x0))));
    }
    out.push(("sequential".into(), run_pipeline(p, Exec::Sequential, x0)));
    out
}

fn mean_time(reps: u32, mut f: impl FnMut()) -> Duration {
    let t = Instant::now();
    for _ in 0..reps {
        f();
    }
    t.elapsed() / reps
}

fn criterion_precision() -> Line {
    let cert = LyapunovCertificate::quadratic_identity(2, 0.0084).unwrap();
    let sets = [(0.0014, 0.25), (0.0035, 0.5)];
    let ok = sets.iter().all(|&(eta, eps)| check_precision(&cert, &SamplingParams::new(5.0, eta, eps).unwrap()));
    let rhs = cert.precision_rhs(5.0, 0.0014);
    // by hand with gamma = alpha = r^2: eta + sqrt((4 eta^2 + eta^2 e^{-k tau}) / (1 - e^{-k tau}))
    let (eta, decay) = (0.0014f64, (-0.0084f64 * 5.0).exp());
    let hand = eta + ((4.0 * eta * eta + eta * eta * decay) / (1.0 - decay)).sqrt();
    let dt = mean_time(1000, || {
        for &(eta, eps) in &sets {
            std::hint::black_box(check_precision(&cert, &SamplingParams::new(5.0, eta, eps).unwrap()));
        }
    });
    Line {
        id: 1,
        title: "precision condition",
        pass: ok && (rhs - 0.01677).abs() <= 1e-5 && (rhs - hand).abs() <= 1e-12 && dt < Duration::from_millis(1),
        detail: format!("both sets admissible = {ok}, RHS = {rhs:.7} (hand {hand:.7}), {dt:?} per check"),
    }
}

fn criterion_kappa() -> Line {
    let sys = ThermalParams::default().system().unwrap();
    let kappa = estimate_kappa(&sys).unwrap();
    // closed-form top eigenvalue of the symmetric part of each 2x2 mode
    let p = ThermalParams::default();
    let hand = [0.0, 1.0]
        .iter()
        .map(|&on| {
            let a = -p.a21 - p.ae1 - p.af * on;
            let d = -p.a12 - p.ae2;
            let off = (p.a21 + p.a12) / 2.0;
            let top = (a + d) / 2.0 + (((a - d) / 2.0).powi(2) + off * off).sqrt();
            -2.0 * top
        })
        .fold(f64::INFINITY, f64::min);
    let dt = mean_time(1000, || {
        std::hint::black_box(estimate_kappa(&sys).unwrap());
    });
    Line {
        id: 2,
        title: "kappa estimate",
        pass: (kappa - 0.00829).abs() <= 2e-4 && (kappa - hand).abs() <= 1e-12 && dt < Duration::from_millis(1),
        detail: format!("kappa = {kappa:.7} (hand {hand:.7}, paper 0.0084), {dt:?} per estimate"),
    }
}

/// Cells per axis from the half-open cell boundaries: the first cell whose
/// upper face lies above `lo` through the last whose lower face is <= `hi`.
fn axis_count(lo: f64, hi: f64, s: f64) -> i64 {
    let first = (lo / s - 0.5).floor() as i64 + 1;
    let last = (hi / s + 0.5).floor() as i64;
    last - first + 1
}

fn criterion_grid(problems: &[&Problem]) -> Line {
    let mut pass = true;
    let mut detail = Vec::new();
    for p in problems {
        let s = p.lattice.spacing();
        let b = p.spec.safe();
        let oracle: i64 = (0..2).map(|i| axis_count(b.lo()[i], b.hi()[i], s)).product();
        let got = p.spec_cells().len();
        pass &= got == 1_022_121 && oracle == got as i64;
        detail.push(format!("eta {}: {got} cells (per-axis oracle {oracle})", p.eta.text));
    }
    Line { id: 3, title: "grid scale", pass, detail: detail.join("; ") }
}

fn criterion_safety(p: &Problem, run: &Run) -> Line {
    let c = &run.syn.file.controller;
    let dom = c.dom_size();
    // the outermost ring of Q_eta(Y_S) must carry no mode
    let ring_empty = c.cells.iter().zip(&c.k).all(|(q, k)| {
        let on_ring = (0..q.len()).any(|i| q[i] == c.cells.kmin[i] || q[i] == c.cells.kmax[i]);
        !on_ring || k.is_empty()
    });
    let empty = c.k.len() - dom;
    let compression = run.checked as f64 / run.nodes as f64;
    let pass = dom > 0
        && ring_empty
        && empty > 0
        && run.synth_time < Duration::from_secs(600)
        && run.checked == p.spec_cells().len()
        && run.tree_violations == 0
        && run.nodes <= 500
        && compression >= 2000.0;
    Line {
        id: 4,
        title: "safety pipeline",
        pass,
        detail: format!(
            "synthesis+refinement {:.2?}, dom {dom}/{} ({empty} empty, boundary ring empty = {ring_empty}), \
             {} violations over {} cells, {} nodes (paper 27), compression {compression:.0}x",
            run.synth_time,
            c.k.len(),
            run.tree_violations,
            run.checked,
            run.nodes
        ),
    }
}

fn criterion_reach(p: &Problem, run: &Run) -> Line {
    let c = &run.syn.file.controller;
    let jt = c.j_tilde.as_ref().unwrap();
    let s = p.lattice.spacing();
    let r = p.params.epsilon - p.params.eta;
    // lattice points inside Cont_eps(Y_T) = [20.5, 21.5]^2, per axis
    let t_lo = (20.5 / s).ceil() as i64;
    let t_hi = (21.5 / s).floor() as i64;
    let mut mismatches = 0usize;
    let mut near_ties = 0usize;
    for (q, &j) in c.cells.iter().zip(jt) {
        let d2: f64 = q.iter().map(|&k| ((t_lo - k).max(0).max(k - t_hi) as f64 * s).powi(2)).sum();
        if (d2 - r * r).abs() < 1e-9 {
            near_ties += 1;
        }
        if (d2 <= r * r) != (j == 0) {
            mismatches += 1;
        }
    }
    let finite = jt.iter().filter(|&&v| v != INF).count();
    let pass = mismatches == 0 && near_ties == 0 && finite > 0 && run.tree_violations == 0 && run.nodes <= 20_000;
    Line {
        id: 5,
        title: "reach pipeline",
        pass,
        detail: format!(
            "J~=0 mismatches {mismatches} (ties {near_ties}), finite J~ on {finite} cells, \
             {} violations over {} cells, {} nodes (paper 2249), synthesis+refinement {:.2?}",
            run.tree_violations, run.checked, run.nodes, run.synth_time
        ),
    }
}

fn criterion_closed_loop(safety: &Run, reach: &Run) -> Line {
    let s = &safety.mc;
    let r = &reach.mc;
    let s_exits = s.runs.iter().filter(|o| o.left_safe).count();
    let s_blocks = s.runs.iter().filter(|o| o.blocked).count();
    let s_short = s.runs.iter().filter(|o| o.steps != 500).count();
    let slack = r.max_slack();
    let misses = r.runs.iter().filter(|o| o.entry.is_none()).count();
    let pass = s.runs.len() == 100
        && r.runs.len() == 100
        && s.passed()
        && s_exits == 0
        && s_blocks == 0
        && s_short == 0
        && r.passed()
        && misses == 0
        && slack.is_some_and(|v| v <= 0);
    Line {
        id: 6,
        title: "closed-loop guarantees",
        pass,
        detail: format!(
            "safety: {} runs x 500 steps, {s_exits} exits, {s_blocks} blocks; reach: {} runs, \
             {misses} misses, max(entry - J~) = {slack:?}",
            s.runs.len(),
            r.runs.len()
        ),
    }
}

fn criterion_oracles() -> Line {
    let fixtures = common::fixtures();
    let mut failures = Vec::new();
    for f in &fixtures {
        let dom = f.model.domain();
        let ball = f.ball();
        for exec in [Exec::Sequential, Exec::Parallel] {
            // (a) safety fixed point
            let s = synthesize_safety(&f.model, &f.safe, exec).unwrap();
            if s.k_eps != common::naive_safety(&f.model, &f.safe) {
                failures.push(format!("{}: safety fixed point", f.name));
            }
            // (b) dilation engines against each other and the pairwise loop
            let edt = dilate_edt(&s.k_eps, dom, f.r2, exec);
            let scan = dilate_scan(&s.k_eps, dom, &ball, exec);
            if edt != scan || scan != common::brute_dilate(&s.k_eps, dom, f.r2) {
                failures.push(format!("{}: dilation", f.name));
            }
            // (c) min-filter and (d) entry-time recursion
            let r = synthesize_reach(&f.model, &f.safe, &f.target, exec).unwrap();
            if r.j != common::naive_entry_times(&f.model, &f.safe, &f.target) {
                failures.push(format!("{}: entry times", f.name));
            }
            let (jt, _) = min_filter(&r.j, dom, &ball, exec);
            if jt != common::brute_min(&r.j, dom, f.r2) {
                failures.push(format!("{}: min-filter", f.name));
            }
            let bad = common::recursion_failures(&f.model, &r.k_eps, &r.j);
            if bad > 0 {
                failures.push(format!("{}: recursion fails at {bad} cells", f.name));
            }
        }
    }
    failures.dedup();
    let sizes: Vec<String> = fixtures.iter().map(|f| format!("{}={}", f.name, f.model.len())).collect();
    Line {
        id: 7,
        title: "oracle equivalence",
        pass: fixtures.len() >= 5 && fixtures.iter().all(|f| f.model.len() <= 500) && failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} fixtures ({}) exact", fixtures.len(), sizes.join(", "))
        } else {
            failures.join("; ")
        },
    }
}

fn criterion_determinism(instances: &[(&str, &[(String, Run)])]) -> Line {
    let mut diffs = Vec::new();
    for (name, runs) in instances {
        let (_, base) = &runs[0];
        for (label, r) in &runs[1..] {
            let same = r.table == base.table
                && r.qsc == base.qsc
                && r.qst == base.qst
                && r.csv == base.csv
                && r.mc == base.mc;
            if !same {
                diffs.push(format!("{name} {label}"));
            }
        }
    }
    // text dumps of the small fixtures
    for f in common::fixtures() {
        let lat = *f.model.lattice();
        let dumps: Vec<Vec<u8>> = [1usize, 4, 8]
            .iter()
            .map(|&t| {
                Exec::Parallel.with_threads(Some(t), || {
                    let mut buf = Vec::new();
                    let m = SymbolicModel::from_table(
                        &lat,
                        f.model.working_box(),
                        f.model.mode_count(),
                        f.model.tau(),
                        f.model.table().to_vec(),
                    )
                    .unwrap();
                    m.write_dump(&mut buf).unwrap();
                    buf
                })
            })
            .collect();
        if dumps.windows(2).any(|w| w[0] != w[1]) {
            diffs.push(format!("{} dump", f.name));
        }
    }
    Line {
        id: 8,
        title: "determinism",
        pass: diffs.is_empty(),
        detail: if diffs.is_empty() {
            "transition tables, QSC1, QST1, trajectory CSV and Monte Carlo reports identical for 1/4/8 threads and sequential"
                .into()
        } else {
            format!("differences: {}", diffs.join(", "))
        },
    }
}

fn main() -> ExitCode {
    let started = Instant::now();
    let safety = Problem::new(&config("safety.toml")).unwrap();
    let reach = Problem::new(&config("reach.toml")).unwrap();

    let mut lines = vec![criterion_precision(), criterion_kappa(), criterion_grid(&[&safety, &reach])];
    let safety_runs = run_all(&safety, &[21.0, 21.0]);
    let reach_runs = run_all(&reach, &[18.2, 18.2]);
    lines.push(criterion_safety(&safety, &safety_runs[0].1));
    lines.push(criterion_reach(&reach, &reach_runs[0].1));
    lines.push(criterion_closed_loop(&safety_runs[0].1, &reach_runs[0].1));
    lines.push(criterion_oracles());
    lines.push(criterion_determinism(&[("safety", &safety_runs), ("reach", &reach_runs)]));

    let mut failed = 0;
    for l in &lines {
        println!("criterion {} [{}] {}: {}", l.id, if l.pass { "PASS" } else { "FAIL" }, l.title, l.detail);
        failed += usize::from(!l.pass);
    }
    println!("acceptance: {}/{} passed in {:.1?}", lines.len() - failed, lines.len(), started.elapsed());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
