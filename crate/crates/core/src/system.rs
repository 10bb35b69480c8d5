//! Switched dynamics, sampled-time transition maps and the incremental
//! stability certificate.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::lattice::StateBox;

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Vector field of a single mode.
#[derive(Clone)]
pub enum ModeDynamics {
    /// `dx/dt = A x + b`
    Affine { a: DMatrix<f64>, b: DVector<f64> },
    Generic { dim: usize, field: VectorField },
}

impl fmt::Debug for ModeDynamics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeDynamics::Affine { a, b } => f
                .debug_struct("Affine")
                .field("a", a)
                .field("b", b)
                .finish(),
            ModeDynamics::Generic { dim, .. } => f.debug_struct("Generic").field("dim", dim).finish(),
        }
    }
}

impl ModeDynamics {
    pub fn affine(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.len() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, b has length {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mode matrices".into()));
        }
        Ok(ModeDynamics::Affine { a, b })
    }

    pub fn generic(dim: usize, field: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        ModeDynamics::Generic { dim, field: Arc::new(field) }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModeDynamics::Affine { b, .. } => b.len(),
            ModeDynamics::Generic { dim, .. } => *dim,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, ModeDynamics::Affine { .. })
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        match self {
            ModeDynamics::Affine { a, b } => {
                let n = b.len();
                for i in 0..n {
                    let mut acc = b[i];
                    for j in 0..n {
                        acc += a[(i, j)] * x[j];
                    }
                    out[i] = acc;
                }
            }
            ModeDynamics::Generic { field, .. } => field(x, out),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    n: usize,
    modes: Vec<ModeDynamics>,
}

impl SwitchedSystem {
    pub fn new(modes: Vec<ModeDynamics>) -> Result<Self> {
        let n = modes
            .first()
            .ok_or_else(|| Error::InvalidParameter("a switched system needs at least one mode".into()))?
            .dim();
        if let Some((p, m)) = modes.iter().enumerate().find(|(_, m)| m.dim() != n) {
            return Err(Error::Dimension(format!("mode {p} has dimension {}, expected {n}", m.dim())));
        }
        if n == 0 {
            return Err(Error::Dimension("state dimension must be positive".into()));
        }
        Ok(SwitchedSystem { n, modes })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn modes(&self) -> &[ModeDynamics] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Precomputes the sampled transition map of every mode.
    pub fn sampled(&self, tau: f64, substeps: usize) -> Result<SampledSystem> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        let maps = self
            .modes
            .iter()
            .map(|m| match m {
                ModeDynamics::Affine { a, b } => {
                    let (e, c) = affine_flow_matrices(a, b, tau)?;
                    Ok(SampledMap::Affine { e, c })
                }
                ModeDynamics::Generic { .. } => Ok(SampledMap::Integrated {
                    mode: m.clone(),
                    tau,
                    substeps: substeps.max(1),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SampledSystem { n: self.n, tau, maps })
    }
}

/// Returns `(e^{A tau}, Phi(tau) b)` from the exponential of the augmented
/// matrix `[[A, b], [0, 0]] * tau`.
fn affine_flow_matrices(a: &DMatrix<f64>, b: &DVector<f64>, tau: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = b.len();
    let mut aug = DMatrix::<f64>::zeros(n + 1, n + 1);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a * tau));
    aug.view_mut((0, n), (n, 1)).copy_from(&(b * tau));
    let ex = expm(&aug)?;
    let e = ex.view((0, 0), (n, n)).into_owned();
    let c = ex.view((0, n), (n, 1)).column(0).into_owned();
    Ok((e, c))
}

pub fn flow_exact(mode: &ModeDynamics, x: &[f64], tau: f64) -> Result<Vec<f64>> {
    let ModeDynamics::Affine { a, b } = mode else {
        return Err(Error::InvalidParameter("flow_exact requires an affine mode".into()));
    };
    if x.len() != b.len() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), b.len())));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let (e, c) = affine_flow_matrices(a, b, tau)?;
    let mut out = vec![0.0; x.len()];
    apply_affine(&e, &c, x, &mut out);
    check_finite(&out)?;
    Ok(out)
}

pub fn flow_rk4(mode: &ModeDynamics, x: &[f64], tau: f64, substeps: usize) -> Result<Vec<f64>> {
    if substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be at least 1".into()));
    }
    if x.len() != mode.dim() {
        return Err(Error::Dimension(format!("state has length {}, expected {}", x.len(), mode.dim())));
    }
    let mut out = vec![0.0; x.len()];
    rk4_into(mode, x, tau, substeps, &mut out)?;
    Ok(out)
}

fn rk4_into(mode: &ModeDynamics, x: &[f64], tau: f64, substeps: usize, out: &mut [f64]) -> Result<()> {
    let n = x.len();
    let h = tau / substeps as f64;
    let mut y = x.to_vec();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    for _ in 0..substeps {
        mode.eval(&y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k1[i];
        }
        mode.eval(&tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + 0.5 * h * k2[i];
        }
        mode.eval(&tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + h * k3[i];
        }
        mode.eval(&tmp, &mut k4);
        for i in 0..n {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        check_finite(&y)?;
    }
    out.copy_from_slice(&y);
    Ok(())
}

fn apply_affine(e: &DMatrix<f64>, c: &DVector<f64>, x: &[f64], out: &mut [f64]) {
    let n = c.len();
    for i in 0..n {
        let mut acc = c[i];
        for j in 0..n {
            acc += e[(i, j)] * x[j];
        }
        out[i] = acc;
    }
}

fn check_finite(x: &[f64]) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::IntegrationOverflow(format!("non-finite state {x:?}")))
    }
}

/// Transition map of one mode over a fixed sampling period.
#[derive(Debug, Clone)]
pub enum SampledMap {
    Affine { e: DMatrix<f64>, c: DVector<f64> },
    Integrated { mode: ModeDynamics, tau: f64, substeps: usize },
}

/// `T_tau` of a switched system: one precomputed map per mode.
#[derive(Debug, Clone)]
pub struct SampledSystem {
    n: usize,
    tau: f64,
    maps: Vec<SampledMap>,
}

impl SampledSystem {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn mode_count(&self) -> usize {
        self.maps.len()
    }

    pub fn step_into(&self, mode: usize, x: &[f64], out: &mut [f64]) -> Result<()> {
        match &self.maps[mode] {
            SampledMap::Affine { e, c } => {
                apply_affine(e, c, x, out);
                check_finite(out)
            }
            SampledMap::Integrated { mode, tau, substeps } => rk4_into(mode, x, *tau, *substeps, out),
        }
    }

    pub fn step(&self, mode: usize, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.step_into(mode, x, &mut out)?;
        Ok(out)
    }
}

/// `r -> c * r^e`, a class-K-infinity function in closed form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerKInf {
    pub c: f64,
    pub e: f64,
}

impl PowerKInf {
    pub fn new(c: f64, e: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) || !(e >= 1.0 && e.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "K-infinity power form needs c > 0 and e >= 1, got c={c}, e={e}"
            )));
        }
        Ok(PowerKInf { c, e })
    }

    pub fn quadratic() -> Self {
        PowerKInf { c: 1.0, e: 2.0 }
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.c * r.max(0.0).powf(self.e)
    }

    pub fn inverse(&self, s: f64) -> f64 {
        (s.max(0.0) / self.c).powf(1.0 / self.e)
    }
}

/// Quadratic incremental Lyapunov function `V(x,y) = (x-y)^T M (x-y)`
/// together with its comparison functions and decay rate.
#[derive(Debug, Clone)]
pub struct LyapunovCertificate {
    pub m: DMatrix<f64>,
    pub alpha_lo: PowerKInf,
    pub alpha_hi: PowerKInf,
    pub gamma: PowerKInf,
    pub kappa: f64,
}

impl LyapunovCertificate {
    pub fn new(
        m: DMatrix<f64>,
        alpha_lo: PowerKInf,
        alpha_hi: PowerKInf,
        gamma: PowerKInf,
        kappa: f64,
    ) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension("M must be square".into()));
        }
        if (&m - m.transpose()).iter().any(|v| v.abs() > 1e-12 * (1.0 + m.amax())) {
            return Err(Error::InvalidParameter("M must be symmetric".into()));
        }
        if m.clone().cholesky().is_none() {
            return Err(Error::InvalidParameter("M must be positive definite".into()));
        }
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
        }
        Ok(LyapunovCertificate { m, alpha_lo, alpha_hi, gamma, kappa })
    }

    /// The paper-style certificate `M = I`, all comparison functions `r^2`.
    pub fn quadratic_identity(n: usize, kappa: f64) -> Result<Self> {
        let q = PowerKInf::quadratic();
        Self::new(DMatrix::identity(n, n), q, q, q, kappa)
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn is_identity(&self) -> bool {
        self.m == DMatrix::identity(self.dim(), self.dim())
    }

    /// Quadratic form `d^T M d`.
    pub fn form(&self, d: &[f64]) -> f64 {
        let n = d.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += d[i] * self.m[(i, j)] * d[j];
            }
        }
        acc
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.form(&d)
    }

    /// Right-hand side of the precision condition:
    /// `eta + alpha_lo^{-1}((gamma(2 eta) + gamma(eta) e^{-kappa tau}) / (1 - e^{-kappa tau}))`.
    pub fn precision_rhs(&self, tau: f64, eta: f64) -> f64 {
        let decay = (-self.kappa * tau).exp();
        let inner = (self.gamma.eval(2.0 * eta) + self.gamma.eval(eta) * decay) / (1.0 - decay);
        eta + self.alpha_lo.inverse(inner)
    }

    /// Relation-ball threshold `alpha_lo(epsilon - eta)`.
    pub fn relation_threshold(&self, params: &SamplingParams) -> f64 {
        self.alpha_lo.eval(params.epsilon - params.eta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub tau: f64,
    pub eta: f64,
    pub epsilon: f64,
}

impl SamplingParams {
    pub fn new(tau: f64, eta: f64, epsilon: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(epsilon > eta && epsilon.is_finite()) {
            return Err(Error::PrecisionViolated(format!("epsilon ({epsilon}) must exceed eta ({eta})")));
        }
        Ok(SamplingParams { tau, eta, epsilon })
    }
}

pub fn check_precision(cert: &LyapunovCertificate, params: &SamplingParams) -> bool {
    params.epsilon >= cert.precision_rhs(params.tau, params.eta)
}

/// Largest `eta` satisfying the precision condition for `(tau, epsilon)`.
pub fn max_eta(cert: &LyapunovCertificate, tau: f64, epsilon: f64) -> f64 {
    if !(epsilon > 0.0) {
        return 0.0;
    }
    let (mut lo, mut hi) = (0.0f64, epsilon);
    // rhs(eta) >= eta, so the answer lies in [0, epsilon]
    while hi - lo > 1e-9 * hi.max(f64::MIN_POSITIVE) {
        let mid = 0.5 * (lo + hi);
        if cert.precision_rhs(tau, mid) <= epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Tightest decay rate for `V = |x - y|^2`: `-2 max_p lambda_max((A_p + A_p^T)/2)`.
pub fn estimate_kappa(sys: &SwitchedSystem) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for (p, mode) in sys.modes().iter().enumerate() {
        let ModeDynamics::Affine { a, .. } = mode else {
            return Err(Error::InvalidParameter(format!("estimate_kappa needs affine modes; mode {p} is generic")));
        };
        let sym = (a + a.transpose()) * 0.5;
        let lmax = sym.symmetric_eigenvalues().max();
        worst = worst.max(lmax);
    }
    let kappa = -2.0 * worst;
    if kappa > 0.0 {
        Ok(kappa)
    } else {
        Err(Error::NotIncrementallyStable(kappa))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertificateReport {
    pub samples: usize,
    /// Smallest slack over both sandwich inequalities; negative means violated.
    pub sandwich_margin: f64,
    /// Smallest slack of `gamma(|x1-y1| + |x2-y2|) - |V(x1,x2) - V(y1,y2)|`.
    pub gamma_margin: f64,
    /// Smallest slack of `-kappa V - dV/dt` over affine modes; `None` if
    /// some mode is generic.
    pub decay_margin: Option<f64>,
}

impl CertificateReport {
    pub fn sandwich_ok(&self) -> bool {
        self.sandwich_margin >= -1e-12
    }

    pub fn gamma_ok(&self) -> bool {
        self.gamma_margin >= -1e-12
    }

    pub fn decay_ok(&self) -> Option<bool> {
        self.decay_margin.map(|m| m >= -1e-12)
    }

    pub fn passed(&self) -> bool {
        self.sandwich_ok() && self.gamma_ok()
    }
}

/// Radical-inverse (Halton) coordinate of `index` in `base`.
fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while index > 0 {
        r += f * (index % base) as f64;
        index /= base;
        f *= inv;
    }
    r
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103,
    107, 109, 113, 127, 131,
];

fn halton_point(bx: &StateBox, index: u64, dim_offset: usize) -> Vec<f64> {
    (0..bx.dim())
        .map(|i| {
            let u = radical_inverse(index, PRIMES[(dim_offset + i) % PRIMES.len()]);
            bx.lo()[i] + u * (bx.hi()[i] - bx.lo()[i])
        })
        .collect()
}

/// Samples the certificate inequalities on `bx` with a deterministic
/// Halton sequence.
pub fn validate_certificate(
    sys: &SwitchedSystem,
    cert: &LyapunovCertificate,
    bx: &StateBox,
    samples: usize,
) -> Result<CertificateReport> {
    let n = sys.dim();
    if cert.dim() != n || bx.dim() != n {
        return Err(Error::Dimension("system, certificate and box dimensions differ".into()));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("samples must be at least 1".into()));
    }
    let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    let all_affine = sys.modes().iter().all(ModeDynamics::is_affine);
    let mut sandwich = f64::INFINITY;
    let mut gamma = f64::INFINITY;
    let mut decay = f64::INFINITY;
    let mut fx = vec![0.0; n];
    let mut fy = vec![0.0; n];
    for s in 0..samples as u64 {
        let idx = s + 1;
        let x1 = halton_point(bx, idx, 0);
        let x2 = halton_point(bx, idx, n);
        let y1 = halton_point(bx, idx, 2 * n);
        let y2 = halton_point(bx, idx, 3 * n);

        let r = norm(&x1, &x2);
        let v = cert.value(&x1, &x2);
        sandwich = sandwich.min(v - cert.alpha_lo.eval(r)).min(cert.alpha_hi.eval(r) - v);

        let lhs = (v - cert.value(&y1, &y2)).abs();
        gamma = gamma.min(cert.gamma.eval(norm(&x1, &y1) + norm(&x2, &y2)) - lhs);

        if all_affine {
            let d: Vec<f64> = x1.iter().zip(&x2).map(|(a, b)| a - b).collect();
            for mode in sys.modes() {
                mode.eval(&x1, &mut fx);
                mode.eval(&x2, &mut fy);
                let df: Vec<f64> = fx.iter().zip(&fy).map(|(a, b)| a - b).collect();
                // dV/dt = 2 d^T M (f(x1) - f(x2)) for symmetric M
                let mut dv = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        dv += 2.0 * d[i] * cert.m[(i, j)] * df[j];
                    }
                }
                decay = decay.min(-cert.kappa * v - dv);
            }
        }
    }
    Ok(CertificateReport {
        samples,
        sandwich_margin: sandwich,
        gamma_margin: gamma,
        decay_margin: all_affine.then_some(decay),
    })
}
