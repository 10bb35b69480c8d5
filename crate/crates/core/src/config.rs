//! TOML problem description.
//!
//! ```toml
//! [system]
//! model = "thermal"            # or "affine" with [[system.mode]] a = [[..]], b = [..]
//!
//! [certificate]
//! alpha_lo = [1.0, 2.0]        # c * r^e
//! alpha_hi = [1.0, 2.0]
//! gamma = [1.0, 2.0]
//! kappa = 0.0084
//!
//! [params]
//! tau = 5.0
//! epsilon = 0.25
//! eta = 0.0014                 # or "auto"
//!
//! [spec]
//! kind = "safety"
//! safe_lo = [20.0, 20.0]
//! safe_hi = [22.0, 22.0]
//! ```
//!
//! `eta` and `epsilon` keep their source text so artifact headers repeat
//! exactly what the user wrote.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use toml::Spanned;

use crate::error::{Error, Result};
use crate::lattice::StateBox;
use crate::synthesis::{DilationEngine, ReachRefineMode, SpecKind};
use crate::system::{max_eta, LyapunovCertificate, ModeDynamics, PowerKInf, SwitchedSystem};
use crate::thermal::ThermalParams;

#[derive(Debug, Clone, PartialEq)]
pub enum SystemConfig {
    Thermal(ThermalParams),
    Affine(Vec<(Vec<Vec<f64>>, Vec<f64>)>),
}

impl SystemConfig {
    pub fn build(&self) -> Result<SwitchedSystem> {
        match self {
            SystemConfig::Thermal(p) => p.system(),
            SystemConfig::Affine(modes) => {
                let modes = modes
                    .iter()
                    .map(|(a, b)| {
                        let n = b.len();
                        if a.len() != n || a.iter().any(|r| r.len() != n) {
                            return Err(Error::Config(format!("mode matrix is not {n}x{n}")));
                        }
                        let a = DMatrix::from_fn(n, n, |i, j| a[i][j]);
                        ModeDynamics::affine(a, DVector::from_column_slice(b))
                    })
                    .collect::<Result<Vec<_>>>()?;
                SwitchedSystem::new(modes)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateConfig {
    /// Identity when absent.
    pub m: Option<Vec<Vec<f64>>>,
    pub alpha_lo: (f64, f64),
    pub alpha_hi: (f64, f64),
    pub gamma: (f64, f64),
    pub kappa: f64,
}

impl CertificateConfig {
    pub fn build(&self, n: usize) -> Result<LyapunovCertificate> {
        let m = match &self.m {
            None => DMatrix::identity(n, n),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Config(format!("certificate matrix is not {n}x{n}")));
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j])
            }
        };
        let k = |(c, e): (f64, f64)| PowerKInf::new(c, e);
        LyapunovCertificate::new(m, k(self.alpha_lo)?, k(self.alpha_hi)?, k(self.gamma)?, self.kappa)
    }
}

/// A decimal kept alongside its source text.
#[derive(Debug, Clone, PartialEq)]
pub struct Decimal {
    pub value: f64,
    pub text: String,
}

impl Decimal {
    pub fn new(value: f64) -> Self {
        Decimal { value, text: format!("{value}") }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EtaChoice {
    Fixed(Decimal),
    Auto,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamsConfig {
    pub tau: f64,
    pub epsilon: Decimal,
    pub eta: EtaChoice,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpecConfig {
    pub kind: SpecKind,
    pub safe: StateBox,
    pub target: Option<StateBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    /// RK4 substeps for non-affine modes; 0 selects the exact flow.
    pub substeps: usize,
    pub threads: Option<usize>,
    pub seed: u64,
    pub steps: usize,
    pub runs: usize,
    pub refine: ReachRefineMode,
    pub dilation: DilationEngine,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        RuntimeConfig {
            substeps: 0,
            threads: None,
            seed: 0,
            steps: 500,
            runs: 100,
            refine: ReachRefineMode::Fast,
            dilation: DilationEngine::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    pub system: SystemConfig,
    pub certificate: CertificateConfig,
    pub params: ParamsConfig,
    pub spec: SpecConfig,
    pub runtime: RuntimeConfig,
}

// raw serde layer

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    system: RawSystem,
    certificate: RawCertificate,
    params: RawParams,
    spec: RawSpec,
    #[serde(default)]
    runtime: RawRuntime,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    model: String,
    #[serde(default)]
    thermal: Option<ThermalParams>,
    #[serde(default)]
    mode: Vec<RawMode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMode {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCertificate {
    m: Option<Vec<Vec<f64>>>,
    alpha_lo: [f64; 2],
    alpha_hi: [f64; 2],
    gamma: [f64; 2],
    kappa: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NumOrText {
    Num(f64),
    Text(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    tau: f64,
    epsilon: Spanned<NumOrText>,
    eta: Spanned<NumOrText>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    kind: String,
    safe_lo: Vec<f64>,
    safe_hi: Vec<f64>,
    target_lo: Option<Vec<f64>>,
    target_hi: Option<Vec<f64>>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RawRuntime {
    substeps: Option<usize>,
    threads: Option<usize>,
    seed: Option<u64>,
    steps: Option<usize>,
    runs: Option<usize>,
    refine: Option<String>,
    dilation: Option<String>,
}

fn decimal(src: &str, field: &str, raw: &Spanned<NumOrText>) -> Result<Option<Decimal>> {
    match raw.get_ref() {
        NumOrText::Num(v) => {
            let text = src[raw.span()].trim().replace('_', "");
            Ok(Some(Decimal { value: *v, text }))
        }
        NumOrText::Text(s) if s == "auto" => Ok(None),
        NumOrText::Text(s) => {
            let value: f64 = s.trim().parse().map_err(|_| Error::Config(format!("{field} = {s:?} is not a number")))?;
            Ok(Some(Decimal { value, text: s.trim().to_string() }))
        }
    }
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&src)
    }

    pub fn parse(src: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(src).map_err(|e| Error::Config(e.to_string()))?;

        let system = match raw.system.model.as_str() {
            "thermal" => {
                if !raw.system.mode.is_empty() {
                    return Err(Error::Config("thermal model takes no [[system.mode]] entries".into()));
                }
                SystemConfig::Thermal(raw.system.thermal.unwrap_or_default())
            }
            "affine" => {
                if raw.system.thermal.is_some() || raw.system.mode.is_empty() {
                    return Err(Error::Config("affine model needs [[system.mode]] entries and no [system.thermal]".into()));
                }
                SystemConfig::Affine(raw.system.mode.into_iter().map(|m| (m.a, m.b)).collect())
            }
            other => return Err(Error::Config(format!("unknown system model {other:?}"))),
        };

        let c = raw.certificate;
        let certificate = CertificateConfig {
            m: c.m,
            alpha_lo: (c.alpha_lo[0], c.alpha_lo[1]),
            alpha_hi: (c.alpha_hi[0], c.alpha_hi[1]),
            gamma: (c.gamma[0], c.gamma[1]),
            kappa: c.kappa,
        };

        let epsilon = decimal(src, "epsilon", &raw.params.epsilon)?
            .ok_or_else(|| Error::Config("epsilon cannot be auto".into()))?;
        let eta = match decimal(src, "eta", &raw.params.eta)? {
            Some(d) => EtaChoice::Fixed(d),
            None => EtaChoice::Auto,
        };
        let params = ParamsConfig { tau: raw.params.tau, epsilon, eta };

        let kind = match raw.spec.kind.as_str() {
            "safety" => SpecKind::Safety,
            "reach" => SpecKind::Reach,
            other => return Err(Error::Config(format!("unknown spec kind {other:?}"))),
        };
        let mk_box = |lo: Vec<f64>, hi: Vec<f64>| -> Result<StateBox> {
            if lo.len() != hi.len() {
                return Err(Error::Config("box bounds differ in length".into()));
            }
            StateBox::new(lo, hi).map_err(|e| Error::Config(e.to_string()))
        };
        let safe = mk_box(raw.spec.safe_lo, raw.spec.safe_hi)?;
        let target = match (kind, raw.spec.target_lo, raw.spec.target_hi) {
            (SpecKind::Reach, Some(lo), Some(hi)) => Some(mk_box(lo, hi)?),
            (SpecKind::Reach, _, _) => return Err(Error::Config("reach spec needs target_lo and target_hi".into())),
            (SpecKind::Safety, None, None) => None,
            (SpecKind::Safety, _, _) => return Err(Error::Config("safety spec takes no target".into())),
        };
        let spec = SpecConfig { kind, safe, target };

        let r = raw.runtime;
        let d = RuntimeConfig::default();
        let refine = match r.refine.as_deref() {
            None | Some("fast") => ReachRefineMode::Fast,
            Some("full_union") => ReachRefineMode::FullUnion,
            Some(other) => return Err(Error::Config(format!("unknown refine mode {other:?}"))),
        };
        let dilation = match r.dilation.as_deref() {
            None | Some("auto") => DilationEngine::Auto,
            Some("scan") => DilationEngine::BallScan,
            Some("edt") => DilationEngine::DistanceTransform,
            Some(other) => return Err(Error::Config(format!("unknown dilation engine {other:?}"))),
        };
        let runtime = RuntimeConfig {
            substeps: r.substeps.unwrap_or(d.substeps),
            threads: r.threads,
            seed: r.seed.unwrap_or(d.seed),
            steps: r.steps.unwrap_or(d.steps),
            runs: r.runs.unwrap_or(d.runs),
            refine,
            dilation,
        };

        let cfg = ProblemConfig { system, certificate, params, spec, runtime };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let n = self.system.build().map_err(|e| Error::Config(e.to_string()))?.dim();
        self.certificate.build(n).map_err(|e| Error::Config(e.to_string()))?;
        if self.spec.safe.dim() != n || self.spec.target.as_ref().is_some_and(|t| t.dim() != n) {
            return Err(Error::Config(format!("spec boxes must have dimension {n}")));
        }
        if !(self.params.tau > 0.0) || !(self.params.epsilon.value > 0.0) {
            return Err(Error::Config("tau and epsilon must be positive".into()));
        }
        if let EtaChoice::Fixed(d) = &self.params.eta {
            if !(d.value > 0.0) {
                return Err(Error::Config("eta must be positive".into()));
            }
        }
        if self.runtime.runs == 0 {
            return Err(Error::Config("runtime.runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.spec.safe.dim()
    }

    /// The sampling parameter in effect and its header text.
    pub fn resolve_eta(&self) -> Result<Decimal> {
        match &self.params.eta {
            EtaChoice::Fixed(d) => Ok(d.clone()),
            EtaChoice::Auto => {
                let cert = self.certificate.build(self.dim())?;
                let eta = max_eta(&cert, self.params.tau, self.params.epsilon.value);
                if !(eta > 0.0) {
                    return Err(Error::PrecisionViolated(format!(
                        "no positive eta satisfies the precision condition for epsilon {}",
                        self.params.epsilon.text
                    )));
                }
                Ok(Decimal::new(eta))
            }
        }
    }

    pub fn to_canonical(&self) -> String {
        let mut s = String::new();
        let arr = |v: &[f64]| format!("[{}]", v.iter().map(|x| fmt_num(*x)).collect::<Vec<_>>().join(", "));
        let mat = |m: &[Vec<f64>]| format!("[{}]", m.iter().map(|r| arr(r)).collect::<Vec<_>>().join(", "));
        s.push_str("[system]\n");
        match &self.system {
            SystemConfig::Thermal(p) => {
                s.push_str("model = \"thermal\"\n\n[system.thermal]\n");
                for (k, v) in [
                    ("te", p.te),
                    ("tf", p.tf),
                    ("a21", p.a21),
                    ("a12", p.a12),
                    ("ae1", p.ae1),
                    ("ae2", p.ae2),
                    ("af", p.af),
                ] {
                    s.push_str(&format!("{k} = {}\n", fmt_num(v)));
                }
            }
            SystemConfig::Affine(modes) => {
                s.push_str("model = \"affine\"\n");
                for (a, b) in modes {
                    s.push_str(&format!("\n[[system.mode]]\na = {}\nb = {}\n", mat(a), arr(b)));
                }
            }
        }
        let c = &self.certificate;
        s.push_str("\n[certificate]\n");
        if let Some(m) = &c.m {
            s.push_str(&format!("m = {}\n", mat(m)));
        }
        let pair = |(a, b): (f64, f64)| arr(&[a, b]);
        s.push_str(&format!(
            "alpha_lo = {}\nalpha_hi = {}\ngamma = {}\nkappa = {}\n",
            pair(c.alpha_lo),
            pair(c.alpha_hi),
            pair(c.gamma),
            fmt_num(c.kappa)
        ));
        let p = &self.params;
        let eta = match &p.eta {
            EtaChoice::Fixed(d) => quote_decimal(&d.text),
            EtaChoice::Auto => "\"auto\"".into(),
        };
        s.push_str(&format!(
            "\n[params]\ntau = {}\nepsilon = {}\neta = {eta}\n",
            fmt_num(p.tau),
            quote_decimal(&p.epsilon.text)
        ));
        let sp = &self.spec;
        let kind = match sp.kind {
            SpecKind::Safety => "safety",
            SpecKind::Reach => "reach",
        };
        s.push_str(&format!(
            "\n[spec]\nkind = \"{kind}\"\nsafe_lo = {}\nsafe_hi = {}\n",
            arr(sp.safe.lo()),
            arr(sp.safe.hi())
        ));
        if let Some(t) = &sp.target {
            s.push_str(&format!("target_lo = {}\ntarget_hi = {}\n", arr(t.lo()), arr(t.hi())));
        }
        let r = &self.runtime;
        s.push_str(&format!("\n[runtime]\nsubsteps = {}\n", r.substeps));
        if let Some(t) = r.threads {
            s.push_str(&format!("threads = {t}\n"));
        }
        let refine = match r.refine {
            ReachRefineMode::Fast => "fast",
            ReachRefineMode::FullUnion => "full_union",
        };
        let dilation = match r.dilation {
            DilationEngine::Auto => "auto",
            DilationEngine::BallScan => "scan",
            DilationEngine::DistanceTransform => "edt",
        };
        s.push_str(&format!(
            "seed = {}\nsteps = {}\nruns = {}\nrefine = \"{refine}\"\ndilation = \"{dilation}\"\n",
            r.seed, r.steps, r.runs
        ));
        s
    }
}

/// TOML float literal that parses back to the same value.
fn fmt_num(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Source text as a TOML float when it already is one, else a string.
fn quote_decimal(text: &str) -> String {
    let is_float = toml::from_str::<toml::Table>(&format!("v = {text}"))
        .ok()
        .and_then(|t| t.get("v").map(|v| v.is_float()))
        .unwrap_or(false);
    if is_float {
        text.to_string()
    } else {
        format!("\"{text}\"")
    }
}
