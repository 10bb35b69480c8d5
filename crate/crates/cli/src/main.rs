use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use qswitch::artifact::ControllerFile;
use qswitch::config::{EtaChoice, ProblemConfig};
use qswitch::pipeline::{self, Artifact, Problem};
use qswitch::runtime::monte_carlo_validate;
use qswitch::system::{estimate_kappa, max_eta};
use qswitch::{Error, Exec};

#[derive(Parser)]
#[command(name = "qswitch", version, about = "Quantized switching controllers for incrementally stable switched systems")]
struct Cli {
    /// Worker threads for the parallel kernels.
    #[arg(long, global = true, env = "QSWITCH_THREADS")]
    threads: Option<usize>,

    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the symbolic abstraction and report its size.
    Abstract {
        config: PathBuf,
        /// Also write the transition table as a QSA1 text dump.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Synthesize and refine a controller; writes a QSC1 file.
    Synth {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Turn a QSC1 controller into a verified QST1 decision tree.
    Determinize {
        controller: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the closed loop from one initial state.
    Simulate {
        config: PathBuf,
        /// QSC1 controller or QST1 tree.
        controller: PathBuf,
        /// Initial state, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        x0: Vec<f64>,
        #[arg(long)]
        steps: Option<usize>,
        /// QSC1 file used to decide whether the start is covered by the
        /// guarantees; defaults to the controller itself when it is one.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Trajectory CSV destination.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Check a tree against its controller and run seeded closed-loop tests.
    Verify {
        config: PathBuf,
        controller: PathBuf,
        #[arg(long)]
        tree: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize a config or an artifact file.
    Info { path: PathBuf },
}

enum Failure {
    Core(Error),
    Verification(String),
    Guarantee(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(Error::PrecisionViolated(_)) => 2,
            Failure::Core(Error::Config(_) | Error::EmptySpec(_)) => 3,
            Failure::Core(_) => 1,
            Failure::Verification(_) => 4,
            Failure::Guarantee(_) => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(Error::EmptySpec(m)) => format!("empty specification: {m}"),
            Failure::Core(e) => e.to_string(),
            Failure::Verification(m) | Failure::Guarantee(m) => m.clone(),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match exec.with_threads(cli.threads, || run(cli.command, exec)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}

fn run(cmd: Command, exec: Exec) -> CliResult {
    match cmd {
        Command::Abstract { config, dump } => cmd_abstract(&config, dump.as_deref(), exec),
        Command::Synth { config, output } => cmd_synth(&config, &output, exec),
        Command::Determinize { controller, output } => cmd_determinize(&controller, &output, exec),
        Command::Simulate { config, controller, x0, steps, reference, csv } => {
            cmd_simulate(&config, &controller, &x0, steps, reference.as_deref(), csv.as_deref())
        }
        Command::Verify { config, controller, tree, runs, steps, seed } => {
            cmd_verify(&config, &controller, tree.as_deref(), runs, steps, seed, exec)
        }
        Command::Info { path } => cmd_info(&path),
    }
}

fn load_problem(path: &Path) -> Result<Problem, Failure> {
    let cfg = ProblemConfig::load(path)?;
    if cfg.params.eta == EtaChoice::Auto {
        eprintln!("warning: eta = \"auto\" picks the coarsest admissible lattice; finer values give larger controller domains");
    }
    Ok(Problem::new(&cfg)?)
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> qswitch::Result<()>) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_abstract(config: &Path, dump: Option<&Path>, exec: Exec) -> CliResult {
    let p = load_problem(config)?;
    let t = Instant::now();
    let model = p.abstraction(exec)?;
    println!("eta {}", p.eta.text);
    println!("spacing {}", p.lattice.spacing());
    println!("extents {:?}", model.domain().extents());
    println!("cells {}", model.len());
    println!("modes {}", model.mode_count());
    println!("out_fraction {:.6}", model.out_fraction());
    println!("elapsed {:.3}s", t.elapsed().as_secs_f64());
    if let Some(path) = dump {
        write_file(path, |w| model.write_dump(w))?;
    }
    Ok(())
}

fn cmd_synth(config: &Path, output: &Path, exec: Exec) -> CliResult {
    let p = load_problem(config)?;
    let t = Instant::now();
    let syn = p.synthesize(exec)?;
    let c = &syn.file.controller;
    println!("cells {}", syn.cells);
    println!("abstract_domain {}", syn.abstract_dom);
    println!("dom {}", c.dom_size());
    if let Some(j) = &c.j_tilde {
        println!("j_tilde histogram:");
        for (v, count) in pipeline::j_histogram(j) {
            match v {
                Some(v) => println!("  {v:>4} {count}"),
                None => println!("   inf {count}"),
            }
        }
    }
    println!("elapsed {:.3}s", t.elapsed().as_secs_f64());
    write_file(output, |w| syn.file.write(w))
}

fn cmd_determinize(controller: &Path, output: &Path, exec: Exec) -> CliResult {
    let file = pipeline::read_controller(controller)?;
    let t = Instant::now();
    let (tree, report) = pipeline::determinize_file(&file, exec)?;
    let cells = file.controller.cells.len();
    println!("nodes {}", tree.tree.node_count());
    println!("leaves {}", tree.tree.leaf_count());
    println!("depth {}", tree.tree.depth());
    println!("compression {:.1}", cells as f64 / tree.tree.node_count() as f64);
    println!("checked {}", report.checked);
    println!("violations {}", report.violations.len());
    println!("elapsed {:.3}s", t.elapsed().as_secs_f64());
    if !report.passed() {
        return Err(Failure::Verification(format!(
            "{} cells violate the determinization clause; nothing written",
            report.violations.len()
        )));
    }
    write_file(output, |w| tree.write(w))
}

fn cmd_simulate(
    config: &Path,
    controller: &Path,
    x0: &[f64],
    steps: Option<usize>,
    reference: Option<&Path>,
    csv: Option<&Path>,
) -> CliResult {
    let p = load_problem(config)?;
    let art = Artifact::read(controller)?;
    pipeline::check_compatible(&p, art.meta())?;
    let reference: Option<ControllerFile> = match (reference, &art) {
        (Some(path), _) => {
            let r = pipeline::read_controller(path)?;
            pipeline::check_compatible(&p, &r.meta)?;
            Some(r)
        }
        (None, Artifact::Controller(c)) => Some(c.clone()),
        (None, Artifact::Tree(_)) => None,
    };
    let steps = steps.unwrap_or(p.config.runtime.steps);
    let ctrl = art.controller()?;
    let rep = pipeline::simulate(&p.sampled()?, &ctrl, reference.as_ref().map(|r| &r.controller), x0, steps)?;
    if let Some(path) = csv {
        write_file(path, |w| rep.trajectory.write_csv(w))?;
    }
    let last = rep.trajectory.states.last().expect("trajectory holds x0");
    println!("steps {}", rep.trajectory.modes.len());
    println!("final {}", last.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(","));
    println!("verdict {}", rep.verdict.label());
    match rep.verdict {
        qswitch::pipeline::Verdict::Reached { entry } => println!("entry {entry}"),
        qswitch::pipeline::Verdict::Unsafe { step, blocked } => {
            println!("{} at step {step}", if blocked { "blocked" } else { "left safe set" })
        }
        _ => {}
    }
    if let Some(b) = rep.bound {
        println!("bound {b}");
    }
    println!(
        "guarantee {}",
        match (reference.is_some(), rep.guaranteed) {
            (false, _) => "unchecked (no reference controller)",
            (true, true) => "applies",
            (true, false) => "does not apply at x0",
        }
    );
    if rep.violation {
        return Err(Failure::Guarantee(format!("guarantee violated: {}", rep.verdict.label())));
    }
    Ok(())
}

fn cmd_verify(
    config: &Path,
    controller: &Path,
    tree: Option<&Path>,
    runs: Option<usize>,
    steps: Option<usize>,
    seed: Option<u64>,
    exec: Exec,
) -> CliResult {
    let p = load_problem(config)?;
    let file = pipeline::read_controller(controller)?;
    pipeline::check_compatible(&p, &file.meta)?;
    let art = match tree {
        Some(path) => {
            let art = Artifact::read(path)?;
            let Artifact::Tree(t) = &art else {
                return Err(Failure::Core(Error::Format(format!("{} is not a tree file", path.display()))));
            };
            pipeline::check_compatible(&p, &t.meta)?;
            let perm = pipeline::permissions(&file)?;
            let report = qswitch::determinize::verify_determinization(&t.tree, &perm, exec)?;
            println!("tree_checked {}", report.checked);
            println!("tree_violations {}", report.violations.len());
            if !report.passed() {
                return Err(Failure::Verification(format!(
                    "{} cells violate the determinization clause",
                    report.violations.len()
                )));
            }
            art
        }
        None => Artifact::Controller(file.clone()),
    };
    let rt = &p.config.runtime;
    let runs = runs.unwrap_or(rt.runs);
    let steps = steps.unwrap_or(rt.steps);
    let seed = seed.unwrap_or(rt.seed);
    let ctrl = art.controller()?;
    let mc = monte_carlo_validate(&p.sampled()?, &ctrl, &file.controller, runs, steps, seed, exec)?;
    println!("runs {}", mc.runs.len());
    println!("violations {}", mc.violations());
    if let Some(s) = mc.max_slack() {
        println!("max_entry_minus_bound {s}");
    }
    if !mc.passed() {
        return Err(Failure::Guarantee(format!("{} of {} runs violated the guarantee", mc.violations(), runs)));
    }
    Ok(())
}

fn cmd_info(path: &Path) -> CliResult {
    let head = std::fs::read(path)?;
    if head.starts_with(b"QSC1") || head.starts_with(b"QST1") {
        let art = Artifact::read(path)?;
        let m = art.meta();
        println!("kind {:?}", m.kind);
        println!("n {}", m.n);
        println!("eta {}", m.eta);
        println!("modes {}", m.modes);
        match &art {
            Artifact::Controller(c) => {
                println!("format QSC1");
                println!("epsilon {}", c.epsilon);
                println!("tau {}", c.tau);
                println!("cells {}", c.controller.cells.len());
                println!("dom {}", c.controller.dom_size());
            }
            Artifact::Tree(t) => {
                println!("format QST1");
                println!("cells {}", t.tree.cells().len());
                println!("nodes {}", t.tree.node_count());
                println!("depth {}", t.tree.depth());
            }
        }
        return Ok(());
    }
    let cfg = ProblemConfig::load(path)?;
    let sys = cfg.system.build()?;
    let cert = cfg.certificate.build(sys.dim())?;
    println!("n {}", sys.dim());
    println!("modes {}", sys.mode_count());
    match estimate_kappa(&sys) {
        Ok(k) => println!("kappa_estimate {k:.6}"),
        Err(e) => println!("kappa_estimate unavailable ({e})"),
    }
    println!("kappa_configured {}", cert.kappa);
    println!("max_eta {:.6}", max_eta(&cert, cfg.params.tau, cfg.params.epsilon.value));
    let p = Problem::new(&cfg)?;
    println!("eta {}", p.eta.text);
    println!("precision_rhs {:.6}", p.certificate.precision_rhs(p.params.tau, p.params.eta));
    println!("cells {}", p.spec_cells().len());
    Ok(())
}
