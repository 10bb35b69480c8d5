//! Controller synthesis on the symbolic model and refinement into the
//! quantized controller of the continuous system.
//!
//! Safety uses the maximal fixed point of the "stay in the safe cells"
//! operator, computed with a removal worklist over the reversed transition
//! graph. Reachability runs a multi-source backward breadth-first search
//! from the target cells, giving entry times and the time-optimal modes.
//! Refinement takes the union (safety) or arg-min (reachability) of the
//! abstract controller over the relation ball of each cell.

use std::collections::VecDeque;
use std::fmt;

use crate::abstraction::{SymbolicModel, OUT};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::lattice::{CellRange, Lattice, RelationBall, StateBox};
use crate::system::{check_precision, LyapunovCertificate, SamplingParams};

/// Entry time of cells that cannot reach the target.
pub const INF: u32 = u32::MAX;

/// At most this many modes fit the one-byte mode-set encoding.
pub const MAX_MODES: usize = 8;

/// Set of mode ids, one bit per mode.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct ModeSet(u8);

impl ModeSet {
    pub const EMPTY: ModeSet = ModeSet(0);

    pub fn all(modes: usize) -> Self {
        assert!(modes <= MAX_MODES);
        ModeSet(((1u16 << modes) - 1) as u8)
    }

    pub fn single(p: usize) -> Self {
        ModeSet(1 << p)
    }

    pub fn from_bits(bits: u8) -> Self {
        ModeSet(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, p: usize) -> bool {
        p < MAX_MODES && self.0 & (1 << p) != 0
    }

    pub fn insert(&mut self, p: usize) {
        self.0 |= 1 << p;
    }

    pub fn remove(&mut self, p: usize) {
        self.0 &= !(1 << p);
    }

    pub fn union(self, other: ModeSet) -> ModeSet {
        ModeSet(self.0 | other.0)
    }

    pub fn intersect(self, other: ModeSet) -> ModeSet {
        ModeSet(self.0 & other.0)
    }

    pub fn is_subset(self, other: ModeSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn lowest(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..MAX_MODES).filter(move |&p| self.contains(p))
    }
}

impl fmt::Debug for ModeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

pub fn contract_box(bx: &StateBox, epsilon: f64) -> Result<StateBox> {
    bx.contract(epsilon)
}

fn check_modes(model: &SymbolicModel) -> Result<()> {
    if model.mode_count() > MAX_MODES {
        return Err(Error::InvalidParameter(format!(
            "{} modes exceed the supported maximum of {MAX_MODES}",
            model.mode_count()
        )));
    }
    Ok(())
}

fn subset_mask(outer: &CellRange, inner: &CellRange, what: &str) -> Result<Vec<bool>> {
    if !inner.is_subset_of(outer) {
        return Err(Error::InvalidParameter(format!("{what} cells are not inside the model domain")));
    }
    Ok(outer.mask_of(inner))
}

/// Reversed transitions restricted to `mask -> mask`, in CSR form:
/// predecessors of `j` are `preds[offs[j]..offs[j + 1]]`, each encoded as
/// `i * modes + p`. Predecessors are sorted by that code.
struct ReverseGraph {
    offs: Vec<usize>,
    preds: Vec<u32>,
}

impl ReverseGraph {
    fn build(model: &SymbolicModel, mask: &[bool]) -> Self {
        let len = model.len();
        let modes = model.mode_count();
        let mut offs = vec![0usize; len + 1];
        for i in 0..len {
            if !mask[i] {
                continue;
            }
            for p in 0..modes {
                let j = model.succ_index(i, p);
                if j != OUT && mask[j as usize] {
                    offs[j as usize + 1] += 1;
                }
            }
        }
        for j in 0..len {
            offs[j + 1] += offs[j];
        }
        let mut fill = offs.clone();
        let mut preds = vec![0u32; offs[len]];
        for i in 0..len {
            if !mask[i] {
                continue;
            }
            for p in 0..modes {
                let j = model.succ_index(i, p);
                if j != OUT && mask[j as usize] {
                    preds[fill[j as usize]] = (i * modes + p) as u32;
                    fill[j as usize] += 1;
                }
            }
        }
        ReverseGraph { offs, preds }
    }

    fn preds(&self, j: usize) -> &[u32] {
        &self.preds[self.offs[j]..self.offs[j + 1]]
    }
}

/// Most permissive safety controller of the symbolic model.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyResult {
    /// Over the model domain, row-major.
    pub k_eps: Vec<ModeSet>,
}

impl SafetyResult {
    pub fn dom_mask(&self) -> Vec<bool> {
        self.k_eps.iter().map(|k| !k.is_empty()).collect()
    }

    pub fn dom_size(&self) -> usize {
        self.k_eps.iter().filter(|k| !k.is_empty()).count()
    }
}

pub fn synthesize_safety(model: &SymbolicModel, safe_cells: &CellRange, exec: Exec) -> Result<SafetyResult> {
    check_modes(model)?;
    let safe = subset_mask(model.domain(), safe_cells, "safe")?;
    let modes = model.mode_count();
    let mut k_eps = vec![ModeSet::EMPTY; model.len()];
    exec.fill(&mut k_eps, |i| {
        let mut k = ModeSet::EMPTY;
        if safe[i] {
            for p in 0..modes {
                let j = model.succ_index(i, p);
                if j != OUT && safe[j as usize] {
                    k.insert(p);
                }
            }
        }
        k
    });

    let rev = ReverseGraph::build(model, &safe);
    let mut alive = safe.clone();
    let mut queue: VecDeque<usize> = VecDeque::new();
    for i in 0..model.len() {
        if alive[i] && k_eps[i].is_empty() {
            alive[i] = false;
            queue.push_back(i);
        }
    }
    while let Some(j) = queue.pop_front() {
        for &code in rev.preds(j) {
            let (i, p) = (code as usize / modes, code as usize % modes);
            if !alive[i] {
                continue;
            }
            k_eps[i].remove(p);
            if k_eps[i].is_empty() {
                alive[i] = false;
                queue.push_back(i);
            }
        }
    }
    Ok(SafetyResult { k_eps })
}

/// Time-optimal reachability controller of the symbolic model.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachResult {
    pub k_eps: Vec<ModeSet>,
    /// Entry time per cell, [`INF`] when unreachable.
    pub j: Vec<u32>,
}

impl ReachResult {
    pub fn reachable_count(&self) -> usize {
        self.j.iter().filter(|&&v| v != INF).count()
    }
}

/// Target cells get every mode: any input is admissible once inside.
pub fn synthesize_reach(
    model: &SymbolicModel,
    safe_cells: &CellRange,
    target_cells: &CellRange,
    exec: Exec,
) -> Result<ReachResult> {
    check_modes(model)?;
    if !target_cells.is_subset_of(safe_cells) {
        return Err(Error::InvalidParameter("target cells are not inside the safe cells".into()));
    }
    let safe = subset_mask(model.domain(), safe_cells, "safe")?;
    let target = model.domain().mask_of(target_cells);
    let modes = model.mode_count();
    let len = model.len();

    let rev = ReverseGraph::build(model, &safe);
    let mut j = vec![INF; len];
    let mut frontier: Vec<usize> = (0..len).filter(|&i| target[i]).collect();
    for &i in &frontier {
        j[i] = 0;
    }
    let mut depth = 0u32;
    while !frontier.is_empty() {
        depth += 1;
        let mut next = Vec::new();
        for &t in &frontier {
            for &code in rev.preds(t) {
                let i = code as usize / modes;
                if j[i] == INF {
                    j[i] = depth;
                    next.push(i);
                }
            }
        }
        frontier = next;
    }

    let mut k_eps = vec![ModeSet::EMPTY; len];
    let all = ModeSet::all(modes);
    exec.fill(&mut k_eps, |i| match j[i] {
        0 => all,
        INF => ModeSet::EMPTY,
        d => {
            let mut k = ModeSet::EMPTY;
            for p in 0..modes {
                let s = model.succ_index(i, p);
                if s != OUT && safe[s as usize] && j[s as usize] == d - 1 {
                    k.insert(p);
                }
            }
            k
        }
    });
    Ok(ReachResult { k_eps, j })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpecKind {
    Safety,
    Reach,
}

/// Quantized controller `K` over the spec cells, with `J~` for reachability.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedController {
    pub kind: SpecKind,
    pub cells: CellRange,
    pub k: Vec<ModeSet>,
    pub j_tilde: Option<Vec<u32>>,
}

impl RefinedController {
    pub fn dom_size(&self) -> usize {
        self.k.iter().filter(|k| !k.is_empty()).count()
    }

    pub fn k_at(&self, cell: &[i64]) -> Option<ModeSet> {
        self.cells.index_of(cell).map(|i| self.k[i])
    }

    pub fn j_tilde_at(&self, cell: &[i64]) -> Option<u32> {
        let i = self.cells.index_of(cell)?;
        self.j_tilde.as_ref().map(|j| j[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DilationEngine {
    /// Distance transform when the ball is Euclidean, else ball scan.
    #[default]
    Auto,
    BallScan,
    DistanceTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReachRefineMode {
    /// `K_eps` of the lexicographically first minimizer.
    #[default]
    Fast,
    /// Union of `K_eps` over every minimizer.
    FullUnion,
}

/// Refinement over the relation ball of a fixed lattice, certificate and
/// sampling parameters.
#[derive(Debug, Clone)]
pub struct Refinement {
    ball: RelationBall,
}

impl Refinement {
    /// Fails unless the precision condition holds.
    pub fn new(lat: &Lattice, cert: &LyapunovCertificate, params: &SamplingParams) -> Result<Self> {
        if !check_precision(cert, params) {
            return Err(Error::PrecisionViolated(format!(
                "epsilon = {} is below the required {}",
                params.epsilon,
                cert.precision_rhs(params.tau, params.eta)
            )));
        }
        Ok(Refinement { ball: RelationBall::new(lat, cert, params)? })
    }

    /// Uses a given ball without checking the precision condition.
    pub fn from_ball(ball: RelationBall) -> Self {
        Refinement { ball }
    }

    pub fn ball(&self) -> &RelationBall {
        &self.ball
    }

    pub fn safety(
        &self,
        sres: &SafetyResult,
        domain: &CellRange,
        spec_cells: &CellRange,
        engine: DilationEngine,
        exec: Exec,
    ) -> Result<RefinedController> {
        check_grid(domain, &sres.k_eps, spec_cells)?;
        let engine = match engine {
            DilationEngine::Auto if self.ball.max_norm2().is_some() => DilationEngine::DistanceTransform,
            DilationEngine::Auto => DilationEngine::BallScan,
            e => e,
        };
        let k_dom = match engine {
            DilationEngine::DistanceTransform => {
                let max_norm2 = self.ball.max_norm2().ok_or_else(|| {
                    Error::InvalidParameter("distance-transform dilation needs an identity certificate".into())
                })?;
                dilate_edt(&sres.k_eps, domain, max_norm2, exec)
            }
            _ => dilate_scan(&sres.k_eps, domain, &self.ball, exec),
        };
        Ok(RefinedController {
            kind: SpecKind::Safety,
            cells: spec_cells.clone(),
            k: restrict(&k_dom, domain, spec_cells),
            j_tilde: None,
        })
    }

    pub fn reach(
        &self,
        rres: &ReachResult,
        domain: &CellRange,
        spec_cells: &CellRange,
        mode: ReachRefineMode,
        exec: Exec,
    ) -> Result<RefinedController> {
        check_grid(domain, &rres.k_eps, spec_cells)?;
        if rres.j.len() != domain.len() {
            return Err(Error::Dimension("entry-time array does not match the domain".into()));
        }
        let (jt, arg) = min_filter(&rres.j, domain, &self.ball, exec);
        let mut k = vec![ModeSet::EMPTY; domain.len()];
        match mode {
            ReachRefineMode::Fast => exec.fill(&mut k, |i| match arg[i] {
                Some(m) if jt[i] != INF => rres.k_eps[m],
                _ => ModeSet::EMPTY,
            }),
            ReachRefineMode::FullUnion => {
                // one dilation per entry-time level: cells with J~ = v take
                // the union of K_eps over the ball restricted to J = v
                let mut levels: Vec<u32> = jt.iter().copied().filter(|&v| v != INF).collect();
                levels.sort_unstable();
                levels.dedup();
                for v in levels {
                    let mut at_level = vec![ModeSet::EMPTY; domain.len()];
                    exec.fill(&mut at_level, |m| if rres.j[m] == v { rres.k_eps[m] } else { ModeSet::EMPTY });
                    let grown = match self.ball.max_norm2() {
                        Some(r2) => dilate_edt(&at_level, domain, r2, exec),
                        None => dilate_scan(&at_level, domain, &self.ball, exec),
                    };
                    exec.update(&mut k, |i, cur| if jt[i] == v { grown[i] } else { *cur });
                }
            }
        }
        Ok(RefinedController {
            kind: SpecKind::Reach,
            cells: spec_cells.clone(),
            k: restrict(&k, domain, spec_cells),
            j_tilde: Some(restrict(&jt, domain, spec_cells)),
        })
    }
}

fn check_grid(domain: &CellRange, k: &[ModeSet], spec_cells: &CellRange) -> Result<()> {
    if k.len() != domain.len() {
        return Err(Error::Dimension("controller array does not match the domain".into()));
    }
    if !spec_cells.is_subset_of(domain) {
        return Err(Error::InvalidParameter("spec cells are not inside the model domain".into()));
    }
    Ok(())
}

fn restrict<T: Copy>(values: &[T], domain: &CellRange, sub: &CellRange) -> Vec<T> {
    if sub == domain {
        return values.to_vec();
    }
    sub.iter()
        .map(|k| values[domain.index_of(&k).expect("subset of domain")])
        .collect()
}

/// Union of `k` over the ball around every cell, by direct enumeration.
pub fn dilate_scan(k: &[ModeSet], domain: &CellRange, ball: &RelationBall, exec: Exec) -> Vec<ModeSet> {
    let union_all = k.iter().fold(ModeSet::EMPTY, |a, b| a.union(*b));
    let strides = domain.strides();
    let mut out = vec![ModeSet::EMPTY; domain.len()];
    exec.fill(&mut out, |i| {
        let q = domain.coords_of(i);
        let mut acc = ModeSet::EMPTY;
        'offsets: for d in ball.offsets() {
            let mut m = 0usize;
            for a in 0..q.len() {
                let c = q[a] + d[a];
                if c < domain.kmin[a] || c > domain.kmax[a] {
                    continue 'offsets;
                }
                m += (c - domain.kmin[a]) as usize * strides[a];
            }
            acc = acc.union(k[m]);
            if acc == union_all {
                break;
            }
        }
        acc
    });
    out
}

/// Union of `k` over the Euclidean ball `|d|^2 <= max_norm2`, one exact
/// squared distance transform per mode.
pub fn dilate_edt(k: &[ModeSet], domain: &CellRange, max_norm2: u64, exec: Exec) -> Vec<ModeSet> {
    let mut out = vec![ModeSet::EMPTY; domain.len()];
    for p in 0..MAX_MODES {
        if !k.iter().any(|s| s.contains(p)) {
            continue;
        }
        let features: Vec<bool> = k.iter().map(|s| s.contains(p)).collect();
        let dt = squared_edt(&features, &domain.extents(), exec);
        for (o, d) in out.iter_mut().zip(&dt) {
            if *d <= max_norm2 {
                o.insert(p);
            }
        }
    }
    out
}

/// Squared-distance value for "no feature reachable".
pub const EDT_INF: u64 = u64::MAX;

/// Exact squared Euclidean distance (in cells) from every cell to the
/// nearest `true` cell of a row-major grid, by separable lower envelopes of
/// parabolas with exact integer arithmetic.
pub fn squared_edt(features: &[bool], extents: &[usize], exec: Exec) -> Vec<u64> {
    let mut f: Vec<u64> = features.iter().map(|&b| if b { 0 } else { EDT_INF }).collect();
    let len = f.len();
    if len == 0 {
        return f;
    }
    let n = extents.len();
    let mut strides = vec![1usize; n];
    for a in (0..n.saturating_sub(1)).rev() {
        strides[a] = strides[a + 1] * extents[a + 1];
    }
    for axis in 0..n {
        let ext = extents[axis];
        let stride = strides[axis];
        let lines = len / ext;
        let line_start = |l: usize| (l / stride) * stride * ext + l % stride;
        let results: Vec<Vec<u64>> = exec.map(lines, |l| {
            let base = line_start(l);
            let line: Vec<u64> = (0..ext).map(|t| f[base + t * stride]).collect();
            envelope_1d(&line)
        });
        for (l, res) in results.into_iter().enumerate() {
            let base = line_start(l);
            for (t, v) in res.into_iter().enumerate() {
                f[base + t * stride] = v;
            }
        }
    }
    f
}

/// `out[x] = min_y (x - y)^2 + f[y]` over finite `f[y]`.
fn envelope_1d(f: &[u64]) -> Vec<u64> {
    let m = f.len();
    // parabola vertices and the left boundary of each one's region as a
    // rational num/den (den > 0); None is -infinity
    let mut v: Vec<usize> = Vec::with_capacity(m);
    let mut z: Vec<Option<(i128, i128)>> = Vec::with_capacity(m);
    let val = |q: usize| f[q] as i128 + (q as i128) * (q as i128);
    for q in 0..m {
        if f[q] == EDT_INF {
            continue;
        }
        loop {
            let Some(&last) = v.last() else {
                v.push(q);
                z.push(None);
                break;
            };
            let num = val(q) - val(last);
            let den = 2 * (q as i128 - last as i128);
            let lower = *z.last().expect("paired with v");
            let dominated = match lower {
                None => false,
                Some((zn, zd)) => num * zd <= zn * den,
            };
            if dominated {
                v.pop();
                z.pop();
            } else {
                v.push(q);
                z.push(Some((num, den)));
                break;
            }
        }
    }
    if v.is_empty() {
        return vec![EDT_INF; m];
    }
    let mut out = vec![0u64; m];
    let mut k = 0;
    for (x, o) in out.iter_mut().enumerate() {
        while k + 1 < v.len() {
            let (zn, zd) = z[k + 1].expect("only the first boundary is unbounded");
            if zn < x as i128 * zd {
                k += 1;
            } else {
                break;
            }
        }
        let d = x as i128 - v[k] as i128;
        *o = (d * d + f[v[k]] as i128) as u64;
    }
    out
}

/// Minimum of `j` over the ball around every cell, and the flat index of
/// the lexicographically first minimizer (offset order). Ball cells outside
/// the domain count as [`INF`].
pub fn min_filter(
    j: &[u32],
    domain: &CellRange,
    ball: &RelationBall,
    exec: Exec,
) -> (Vec<u32>, Vec<Option<usize>>) {
    let len = domain.len();
    let n = domain.dim();
    let ext = domain.extents();
    if len == 0 {
        return (Vec::new(), Vec::new());
    }
    let last_ext = ext[n - 1];
    let lines = len / last_ext;
    let runs = ball.runs();

    // best (J, run index, position along the line) per cell
    let mut best: Vec<(u32, u32, u32)> = vec![(INF, u32::MAX, u32::MAX); len];

    let mut lengths: Vec<i64> = runs.iter().map(|(_, lo, hi)| hi - lo + 1).collect();
    lengths.sort_unstable();
    lengths.dedup();

    // line index and position of each prefix offset
    let prefix_strides: Vec<i64> = {
        let mut s = vec![1i64; n.saturating_sub(1)];
        for a in (0..n.saturating_sub(2)).rev() {
            s[a] = s[a + 1] * ext[a + 1] as i64;
        }
        s
    };

    for &width in &lengths {
        let w = width as usize;
        // window[l][u] for u in 0..last_ext + w - 1 covers positions
        // [u - (w - 1), u] clipped to the line; key = (J << 32) | position
        let padded = last_ext + w - 1;
        let windows: Vec<Vec<u64>> = exec.map(lines, |l| {
            let base = l * last_ext;
            sliding_min(&j[base..base + last_ext], w, padded)
        });
        let run_ids: Vec<usize> = runs
            .iter()
            .enumerate()
            .filter(|(_, (_, lo, hi))| hi - lo + 1 == width)
            .map(|(r, _)| r)
            .collect();
        exec.update(&mut best, |i, cur| {
            let line = i / last_ext;
            let x = (i % last_ext) as i64;
            // prefix coordinates of this line
            let mut rem = line;
            let mut pre = vec![0i64; n - 1];
            for a in (0..n - 1).rev() {
                pre[a] = (rem % ext[a]) as i64;
                rem /= ext[a];
            }
            let mut b = *cur;
            'runs: for &r in &run_ids {
                let (prefix, lo, _) = &runs[r];
                let mut nl = 0i64;
                for a in 0..n - 1 {
                    let c = pre[a] + prefix[a];
                    if c < 0 || c >= ext[a] as i64 {
                        continue 'runs;
                    }
                    nl += c * prefix_strides[a];
                }
                // window ending at x + lo + w - 1
                let end = x + lo + width - 1;
                if end < 0 || end >= padded as i64 {
                    continue;
                }
                let key = windows[nl as usize][end as usize];
                let jv = (key >> 32) as u32;
                if jv == INF {
                    continue;
                }
                let cand = (jv, r as u32, (key & 0xffff_ffff) as u32);
                if cand < b {
                    b = cand;
                }
            }
            b
        });
    }

    let jt: Vec<u32> = best.iter().map(|b| b.0).collect();
    let arg: Vec<Option<usize>> = best
        .iter()
        .enumerate()
        .map(|(i, &(jv, r, pos))| {
            if jv == INF {
                return None;
            }
            let line = i / last_ext;
            let prefix = &runs[r as usize].0;
            let mut rem = line;
            let mut pre = vec![0i64; n - 1];
            for a in (0..n - 1).rev() {
                pre[a] = (rem % ext[a]) as i64;
                rem /= ext[a];
            }
            let mut nl = 0i64;
            for a in 0..n - 1 {
                nl += (pre[a] + prefix[a]) * prefix_strides[a];
            }
            Some(nl as usize * last_ext + pos as usize)
        })
        .collect();
    (jt, arg)
}

/// Sliding minimum of `(value, position)` keys over windows of width `w`;
/// entry `u` covers positions `u + 1 - w ..= u` clipped to the line.
fn sliding_min(line: &[u32], w: usize, padded: usize) -> Vec<u64> {
    let key = |t: usize| ((line[t] as u64) << 32) | t as u64;
    let mut out = vec![u64::MAX; padded];
    let mut dq: VecDeque<usize> = VecDeque::new();
    for (u, o) in out.iter_mut().enumerate() {
        if u < line.len() {
            // keep the earliest position on ties
            while let Some(&b) = dq.back() {
                if key(b) >> 32 > line[u] as u64 {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(u);
        }
        while let Some(&f) = dq.front() {
            if f + w <= u {
                dq.pop_front();
            } else {
                break;
            }
        }
        if let Some(&f) = dq.front() {
            *o = key(f);
        }
    }
    out
}
