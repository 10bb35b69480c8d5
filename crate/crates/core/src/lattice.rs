//! The uniform lattice of spacing `2 eta / sqrt(n)`, its half-open quantizer,
//! integer cell ranges over boxes and relation-ball neighbourhoods.
//!
//! Every set operation downstream of [`Lattice::quantize`] runs on integer
//! coordinates. Row-major order (last axis fastest) is used for all flat
//! cell indices.

use crate::error::{Error, Result};
use crate::system::{LyapunovCertificate, SamplingParams};

/// Axis-aligned closed box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl StateBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Dimension(format!("box bounds have lengths {} and {}", lo.len(), hi.len())));
        }
        if lo.iter().chain(&hi).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("box bounds".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::EmptySpec(format!("box lo {lo:?} exceeds hi {hi:?}")));
        }
        Ok(StateBox { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (l, h))| l <= v && v <= h)
    }

    /// Points whose closed Euclidean `epsilon`-ball stays inside the box.
    pub fn contract(&self, epsilon: f64) -> Result<StateBox> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidParameter(format!("contraction radius must be >= 0, got {epsilon}")));
        }
        let lo: Vec<f64> = self.lo.iter().map(|l| l + epsilon).collect();
        let hi: Vec<f64> = self.hi.iter().map(|h| h - epsilon).collect();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::EmptySpec(format!("{epsilon}-contraction of {:?}..{:?} is empty", self.lo, self.hi)));
        }
        StateBox::new(lo, hi)
    }
}

/// Integer lattice coordinates of a cell; its center is `k * spacing`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell(pub Vec<i64>);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    n: usize,
    eta: f64,
    spacing: f64,
}

impl Lattice {
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("lattice dimension must be positive".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        Ok(Lattice { n, eta, spacing: 2.0 * eta / (n as f64).sqrt() })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn quantize_axis(&self, v: f64) -> i64 {
        (v / self.spacing + 0.5).floor() as i64
    }

    pub fn quantize(&self, x: &[f64]) -> Cell {
        Cell(x.iter().map(|&v| self.quantize_axis(v)).collect())
    }

    pub fn center(&self, cell: &Cell) -> Vec<f64> {
        cell.0.iter().map(|&k| k as f64 * self.spacing).collect()
    }

    /// `Q_eta(bx)`: every cell whose half-open extent meets the box.
    pub fn cell_range(&self, bx: &StateBox) -> CellRange {
        CellRange {
            kmin: bx.lo().iter().map(|&v| self.quantize_axis(v)).collect(),
            kmax: bx.hi().iter().map(|&v| self.quantize_axis(v)).collect(),
        }
    }

    /// Cells whose center lies in the box.
    pub fn centers_within(&self, bx: &StateBox) -> CellRange {
        let s = self.spacing;
        let mut kmin = Vec::with_capacity(self.n);
        let mut kmax = Vec::with_capacity(self.n);
        for (&lo, &hi) in bx.lo().iter().zip(bx.hi()) {
            let mut a = (lo / s).ceil() as i64;
            while (a as f64) * s < lo {
                a += 1;
            }
            while ((a - 1) as f64) * s >= lo {
                a -= 1;
            }
            let mut b = (hi / s).floor() as i64;
            while (b as f64) * s > hi {
                b -= 1;
            }
            while ((b + 1) as f64) * s <= hi {
                b += 1;
            }
            kmin.push(a);
            kmax.push(b);
        }
        CellRange { kmin, kmax }
    }

    /// Cells whose whole half-open extent lies inside the box, with a small
    /// inward margin so rounding in [`Lattice::quantize`] can never map a
    /// point outside the box onto one of them.
    pub fn cells_inside(&self, bx: &StateBox) -> CellRange {
        let s = self.spacing;
        let margin = 1e-9 * s;
        let kmin = bx
            .lo()
            .iter()
            .map(|&lo| {
                let mut a = (lo / s + 0.5).ceil() as i64;
                while (a as f64 - 0.5) * s < lo + margin {
                    a += 1;
                }
                a
            })
            .collect();
        let kmax = bx
            .hi()
            .iter()
            .map(|&hi| {
                let mut b = (hi / s - 0.5).floor() as i64;
                while (b as f64 + 0.5) * s > hi - margin {
                    b -= 1;
                }
                b
            })
            .collect();
        CellRange { kmin, kmax }
    }

    /// Integer offsets `d` with `|d * spacing| <= radius`, lexicographic.
    pub fn ball_offsets(&self, radius: f64) -> Vec<Vec<i64>> {
        if !(radius >= 0.0) {
            return Vec::new();
        }
        let max_norm2 = self.max_norm2_within(radius * radius);
        let bound = (max_norm2 as f64).sqrt().floor() as i64 + 1;
        let cube = CellRange { kmin: vec![-bound; self.n], kmax: vec![bound; self.n] };
        cube.iter().filter(|d| norm2(d) <= max_norm2).collect()
    }

    /// Largest integer `m` with `m * spacing^2 <= limit`.
    fn max_norm2_within(&self, limit: f64) -> u64 {
        let s2 = self.spacing * self.spacing;
        if limit < 0.0 {
            return 0;
        }
        let mut m = (limit / s2).floor().max(0.0) as u64;
        while m > 0 && (m as f64) * s2 > limit {
            m -= 1;
        }
        while ((m + 1) as f64) * s2 <= limit {
            m += 1;
        }
        m
    }
}

pub fn norm2(d: &[i64]) -> u64 {
    d.iter().map(|&v| (v * v) as u64).sum()
}

/// Product of integer intervals `[kmin_i, kmax_i]`; empty if any axis has
/// `kmax_i < kmin_i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellRange {
    pub kmin: Vec<i64>,
    pub kmax: Vec<i64>,
}

impl CellRange {
    pub fn new(kmin: Vec<i64>, kmax: Vec<i64>) -> Result<Self> {
        if kmin.len() != kmax.len() || kmin.is_empty() {
            return Err(Error::Dimension("cell range bounds differ in length".into()));
        }
        Ok(CellRange { kmin, kmax })
    }

    pub fn dim(&self) -> usize {
        self.kmin.len()
    }

    pub fn extents(&self) -> Vec<usize> {
        self.kmin
            .iter()
            .zip(&self.kmax)
            .map(|(a, b)| if b >= a { (b - a + 1) as usize } else { 0 })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major strides (last axis has stride 1).
    pub fn strides(&self) -> Vec<usize> {
        let ext = self.extents();
        let mut strides = vec![1usize; ext.len()];
        for i in (0..ext.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * ext[i + 1];
        }
        strides
    }

    pub fn contains(&self, k: &[i64]) -> bool {
        k.iter().zip(self.kmin.iter().zip(&self.kmax)).all(|(v, (a, b))| a <= v && v <= b)
    }

    pub fn is_subset_of(&self, other: &CellRange) -> bool {
        self.is_empty() || (other.contains(&self.kmin) && other.contains(&self.kmax))
    }

    pub fn index_of(&self, k: &[i64]) -> Option<usize> {
        if !self.contains(k) {
            return None;
        }
        let ext = self.extents();
        let mut idx = 0usize;
        for i in 0..k.len() {
            idx = idx * ext[i] + (k[i] - self.kmin[i]) as usize;
        }
        Some(idx)
    }

    pub fn coords_of(&self, mut idx: usize) -> Vec<i64> {
        let ext = self.extents();
        let mut k = vec![0i64; ext.len()];
        for i in (0..ext.len()).rev() {
            k[i] = self.kmin[i] + (idx % ext[i]) as i64;
            idx /= ext[i];
        }
        k
    }

    pub fn intersect(&self, other: &CellRange) -> CellRange {
        CellRange {
            kmin: self.kmin.iter().zip(&other.kmin).map(|(a, b)| *a.max(b)).collect(),
            kmax: self.kmax.iter().zip(&other.kmax).map(|(a, b)| *a.min(b)).collect(),
        }
    }

    /// Membership mask of `sub` over the flat indices of `self`.
    pub fn mask_of(&self, sub: &CellRange) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        let inter = self.intersect(sub);
        for k in inter.iter() {
            mask[self.index_of(&k).expect("intersection lies in range")] = true;
        }
        mask
    }

    /// Row-major iteration over all cells.
    pub fn iter(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        (0..self.len()).map(move |i| self.coords_of(i))
    }
}

/// Lattice neighbourhood `{q' : V(q, q') <= alpha_lo(epsilon - eta)}` as a
/// translation-invariant offset table.
#[derive(Debug, Clone)]
pub struct RelationBall {
    offsets: Vec<Vec<i64>>,
    /// Set when `M = I`: membership is `|d|^2 <= max_norm2` in lattice units.
    max_norm2: Option<u64>,
}

impl RelationBall {
    pub fn new(lat: &Lattice, cert: &LyapunovCertificate, params: &SamplingParams) -> Result<Self> {
        if !(params.epsilon > params.eta) {
            return Err(Error::PrecisionViolated(format!(
                "epsilon ({}) must exceed eta ({})",
                params.epsilon, params.eta
            )));
        }
        if cert.dim() != lat.dim() {
            return Err(Error::Dimension("certificate and lattice dimensions differ".into()));
        }
        let threshold = cert.relation_threshold(params);
        let s = lat.spacing();
        if cert.is_identity() {
            let max_norm2 = lat.max_norm2_within(threshold);
            let bound = (max_norm2 as f64).sqrt().floor() as i64 + 1;
            let cube = CellRange { kmin: vec![-bound; lat.dim()], kmax: vec![bound; lat.dim()] };
            let offsets = cube.iter().filter(|d| norm2(d) <= max_norm2).collect();
            return Ok(RelationBall { offsets, max_norm2: Some(max_norm2) });
        }
        // alpha_lo(|d|) <= V(d) <= threshold bounds |d| by epsilon - eta
        let bound = ((params.epsilon - params.eta) / s).floor() as i64 + 1;
        let cube = CellRange { kmin: vec![-bound; lat.dim()], kmax: vec![bound; lat.dim()] };
        let offsets = cube
            .iter()
            .filter(|d| {
                let x: Vec<f64> = d.iter().map(|&v| v as f64 * s).collect();
                cert.form(&x) <= threshold
            })
            .collect();
        Ok(RelationBall { offsets, max_norm2: None })
    }

    /// Euclidean ball of `max_norm2` (lattice units), for tests and tools.
    pub fn euclidean(n: usize, max_norm2: u64) -> Self {
        let bound = (max_norm2 as f64).sqrt().floor() as i64 + 1;
        let cube = CellRange { kmin: vec![-bound; n], kmax: vec![bound; n] };
        RelationBall {
            offsets: cube.iter().filter(|d| norm2(d) <= max_norm2).collect(),
            max_norm2: Some(max_norm2),
        }
    }

    /// Offsets in lexicographic (row-major) order.
    pub fn offsets(&self) -> &[Vec<i64>] {
        &self.offsets
    }

    pub fn max_norm2(&self) -> Option<u64> {
        self.max_norm2
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn is_singleton(&self) -> bool {
        self.offsets.len() == 1
    }

    pub fn cells_around(&self, q: &Cell) -> Vec<Cell> {
        self.offsets
            .iter()
            .map(|d| Cell(q.0.iter().zip(d).map(|(a, b)| a + b).collect()))
            .collect()
    }

    /// The ball cut into runs along the last axis: `(prefix, lo, hi)` means
    /// offsets `prefix ++ [t]` for `lo <= t <= hi`. Runs follow the
    /// lexicographic offset order.
    pub fn runs(&self) -> Vec<(Vec<i64>, i64, i64)> {
        let mut runs: Vec<(Vec<i64>, i64, i64)> = Vec::new();
        for d in &self.offsets {
            let (last, prefix) = d.split_last().expect("nonzero dimension");
            match runs.last_mut() {
                Some((p, _, hi)) if p.as_slice() == prefix && *hi + 1 == *last => *hi = *last,
                _ => runs.push((prefix.to_vec(), *last, *last)),
            }
        }
        runs
    }
}
