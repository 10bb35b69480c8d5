//! Symbolic model: the quantized sampled dynamics restricted to the cells of
//! a working box. Successors are computed from cell centers.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::format::{fmt_f64s, HeaderReader};
use crate::lattice::{Cell, CellRange, Lattice, StateBox};
use crate::system::SampledSystem;

/// Successor entry for transitions leaving the working box.
pub const OUT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicModel {
    lat: Lattice,
    working_box: StateBox,
    domain: CellRange,
    modes: usize,
    tau: f64,
    /// Cell-major: entry `i * modes + p`.
    succ: Vec<u32>,
}

impl SymbolicModel {
    pub fn build(sampled: &SampledSystem, lat: &Lattice, working_box: &StateBox, exec: Exec) -> Result<Self> {
        let n = lat.dim();
        if sampled.dim() != n || working_box.dim() != n {
            return Err(Error::Dimension("system, lattice and box dimensions differ".into()));
        }
        let domain = lat.cell_range(working_box);
        let len = domain.len();
        if len >= OUT as usize {
            return Err(Error::InvalidParameter(format!("{len} cells exceed the 32-bit index space")));
        }
        let modes = sampled.mode_count();
        let mut succ = vec![OUT; len * modes];
        let kmin = domain.kmin.clone();
        let ext = domain.extents();
        let s = lat.spacing();
        exec.try_fill(&mut succ, |j| -> Result<u32> {
            let (i, p) = (j / modes, j % modes);
            let mut rem = i;
            let mut x = vec![0.0; n];
            for a in (0..n).rev() {
                x[a] = (kmin[a] + (rem % ext[a]) as i64) as f64 * s;
                rem /= ext[a];
            }
            let mut y = vec![0.0; n];
            sampled.step_into(p, &x, &mut y).map_err(|e| {
                Error::IntegrationOverflow(format!("cell {:?}, mode {p}: {e}", domain.coords_of(i)))
            })?;
            let mut idx = 0usize;
            for a in 0..n {
                let k = lat.quantize_axis(y[a]) - kmin[a];
                if k < 0 || k as usize >= ext[a] {
                    return Ok(OUT);
                }
                idx = idx * ext[a] + k as usize;
            }
            Ok(idx as u32)
        })?;
        Ok(SymbolicModel {
            lat: *lat,
            working_box: working_box.clone(),
            domain,
            modes,
            tau: sampled.tau(),
            succ,
        })
    }

    /// Wraps an explicit cell-major successor table (entry `i * modes + p`).
    pub fn from_table(
        lat: &Lattice,
        working_box: &StateBox,
        modes: usize,
        tau: f64,
        succ: Vec<u32>,
    ) -> Result<Self> {
        let domain = lat.cell_range(working_box);
        if succ.len() != domain.len() * modes {
            return Err(Error::Dimension(format!(
                "table has {} entries, expected {} cells x {modes} modes",
                succ.len(),
                domain.len()
            )));
        }
        if let Some(bad) = succ.iter().find(|&&j| j != OUT && j as usize >= domain.len()) {
            return Err(Error::InvalidParameter(format!("successor index {bad} out of range")));
        }
        Ok(SymbolicModel { lat: *lat, working_box: working_box.clone(), domain, modes, tau, succ })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lat
    }

    pub fn domain(&self) -> &CellRange {
        &self.domain
    }

    pub fn working_box(&self) -> &StateBox {
        &self.working_box
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Successor by flat index; [`OUT`] when it leaves the working box.
    #[inline]
    pub fn succ_index(&self, i: usize, p: usize) -> u32 {
        self.succ[i * self.modes + p]
    }

    pub fn table(&self) -> &[u32] {
        &self.succ
    }

    /// `None` stands for OUT.
    pub fn successor(&self, q: &Cell, p: usize) -> Result<Option<Cell>> {
        let i = self
            .domain
            .index_of(&q.0)
            .ok_or_else(|| Error::OutOfDomain { cell: q.0.clone() })?;
        if p >= self.modes {
            return Err(Error::InvalidParameter(format!("mode {p} out of range")));
        }
        Ok(match self.succ_index(i, p) {
            OUT => None,
            j => Some(Cell(self.domain.coords_of(j as usize))),
        })
    }

    pub fn out_fraction(&self) -> f64 {
        if self.succ.is_empty() {
            return 0.0;
        }
        self.succ.iter().filter(|&&j| j == OUT).count() as f64 / self.succ.len() as f64
    }

    /// Writes the `QSA1` debugging dump.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "QSA1")?;
        writeln!(w, "n {}", self.lat.dim())?;
        writeln!(w, "eta {}", self.lat.eta())?;
        writeln!(w, "tau {}", self.tau)?;
        writeln!(w, "box {} {}", fmt_f64s(self.working_box.lo()), fmt_f64s(self.working_box.hi()))?;
        writeln!(w, "modes {}", self.modes)?;
        writeln!(w, "cells {}", self.len())?;
        for p in 0..self.modes {
            let row: Vec<String> = (0..self.len())
                .map(|i| match self.succ_index(i, p) {
                    OUT => "OUT".to_string(),
                    j => j.to_string(),
                })
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(r: R) -> Result<Self> {
        let mut h = HeaderReader::new(r);
        h.expect_magic("QSA1")?;
        let n: usize = h.field("n")?.parse_one()?;
        let eta: f64 = h.field("eta")?.parse_one()?;
        let tau: f64 = h.field("tau")?.parse_one()?;
        let bv: Vec<f64> = h.field("box")?.parse_all()?;
        let modes: usize = h.field("modes")?.parse_one()?;
        let cells: usize = h.field("cells")?.parse_one()?;
        if bv.len() != 2 * n {
            return Err(Error::Format("box has wrong arity".into()));
        }
        let lat = Lattice::new(n, eta)?;
        let working_box = StateBox::new(bv[..n].to_vec(), bv[n..].to_vec())?;
        let domain = lat.cell_range(&working_box);
        if domain.len() != cells {
            return Err(Error::Format(format!("header says {cells} cells, box gives {}", domain.len())));
        }
        let mut succ = vec![OUT; cells * modes];
        for p in 0..modes {
            let line = h.line()?;
            let mut count = 0;
            for (i, tok) in line.split_ascii_whitespace().enumerate() {
                if i >= cells {
                    return Err(Error::Format(format!("mode {p} row too long")));
                }
                succ[i * modes + p] = match tok {
                    "OUT" => OUT,
                    t => {
                        let j: u32 = t.parse().map_err(|_| Error::Format(format!("bad successor {t:?}")))?;
                        if j as usize >= cells {
                            return Err(Error::Format(format!("successor {j} out of range")));
                        }
                        j
                    }
                };
                count += 1;
            }
            if count != cells {
                return Err(Error::Format(format!("mode {p} row has {count} entries, expected {cells}")));
            }
        }
        Ok(SymbolicModel { lat, working_box, domain, modes, tau, succ })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{flow_exact, ModeDynamics, SwitchedSystem};
    use crate::thermal::ThermalParams;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn drift_1d(v: f64) -> ModeDynamics {
        ModeDynamics::affine(DMatrix::zeros(1, 1), DVector::from_vec(vec![v])).unwrap()
    }

    #[test]
    fn static_dynamics_are_fixed_points() {
        let zero = ModeDynamics::affine(DMatrix::zeros(2, 2), DVector::zeros(2)).unwrap();
        let sys = SwitchedSystem::new(vec![zero.clone(), zero]).unwrap();
        let lat = Lattice::new(2, 0.1).unwrap();
        let bx = StateBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let m = SymbolicModel::build(&sys.sampled(1.0, 1).unwrap(), &lat, &bx, Exec::Parallel).unwrap();
        for i in 0..m.len() {
            for p in 0..2 {
                assert_eq!(m.succ_index(i, p), i as u32);
            }
        }
        let q = Cell(m.domain().kmin.clone());
        assert_eq!(m.successor(&q, 1).unwrap(), Some(q));
    }

    #[test]
    fn unit_shift_and_out() {
        let sys = SwitchedSystem::new(vec![drift_1d(1.0)]).unwrap();
        let lat = Lattice::new(1, 0.5).unwrap();
        let bx = StateBox::new(vec![0.0], vec![10.0]).unwrap();
        let m = SymbolicModel::build(&sys.sampled(1.0, 1).unwrap(), &lat, &bx, Exec::Sequential).unwrap();
        assert_eq!(m.len(), 11);
        for k in 0..10 {
            assert_eq!(m.successor(&Cell(vec![k]), 0).unwrap(), Some(Cell(vec![k + 1])));
        }
        assert_eq!(m.successor(&Cell(vec![10]), 0).unwrap(), None);
        assert!(matches!(m.successor(&Cell(vec![11]), 0), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn paper_safety_table_matches_pointwise_oracle() {
        let sys = ThermalParams::default().system().unwrap();
        let lat = Lattice::new(2, 0.0014).unwrap();
        let bx = StateBox::new(vec![20.0; 2], vec![22.0; 2]).unwrap();
        let m = SymbolicModel::build(&sys.sampled(5.0, 1).unwrap(), &lat, &bx, Exec::Parallel).unwrap();
        assert_eq!(m.len(), 1_022_121);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let i = rng.random_range(0..m.len());
            let q = Cell(m.domain().coords_of(i));
            for p in 0..2 {
                let y = flow_exact(&sys.modes()[p], &lat.center(&q), 5.0).unwrap();
                let expect = lat.quantize(&y);
                let got = m.successor(&q, p).unwrap();
                if m.domain().contains(&expect.0) {
                    assert_eq!(got, Some(expect));
                } else {
                    assert_eq!(got, None);
                }
            }
        }
    }

    #[test]
    fn one_step_relation_preserved() {
        // (x, Q(x)) in R_eps maps to a related pair after one transition
        let sys = ThermalParams::default().system().unwrap();
        let eta = 0.0014;
        let lat = Lattice::new(2, eta).unwrap();
        let threshold = (0.25f64 - eta).powi(2);
        let bx = StateBox::new(vec![20.0; 2], vec![22.0; 2]).unwrap();
        let sampled = sys.sampled(5.0, 1).unwrap();
        let m = SymbolicModel::build(&sampled, &lat, &bx, Exec::Parallel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let x = [rng.random_range(20.0..22.0), rng.random_range(20.0..22.0)];
            let q = lat.quantize(&x);
            for p in 0..2 {
                let Some(q2) = m.successor(&q, p).unwrap() else { continue };
                let x2 = lat.center(&lat.quantize(&sampled.step(p, &x).unwrap()));
                let c2 = lat.center(&q2);
                let v = (x2[0] - c2[0]).powi(2) + (x2[1] - c2[1]).powi(2);
                assert!(v <= threshold);
            }
        }
    }

    #[test]
    fn build_independent_of_exec() {
        let sys = ThermalParams::default().system().unwrap();
        let lat = Lattice::new(2, 0.01).unwrap();
        let bx = StateBox::new(vec![19.0; 2], vec![23.0; 2]).unwrap();
        let s = sys.sampled(5.0, 1).unwrap();
        let a = SymbolicModel::build(&s, &lat, &bx, Exec::Sequential).unwrap();
        let b = SymbolicModel::build(&s, &lat, &bx, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert!(a.out_fraction() > 0.0 && a.out_fraction() < 1.0);
    }

    #[test]
    fn overflow_names_offending_cell() {
        let blowup = ModeDynamics::generic(1, |x, out| out[0] = x[0].exp());
        let sys = SwitchedSystem::new(vec![blowup]).unwrap();
        let lat = Lattice::new(1, 0.5).unwrap();
        let bx = StateBox::new(vec![1000.0], vec![1002.0]).unwrap();
        let err = SymbolicModel::build(&sys.sampled(1.0, 4).unwrap(), &lat, &bx, Exec::Parallel).unwrap_err();
        assert!(matches!(err, Error::IntegrationOverflow(ref m) if m.contains("mode 0")));
    }

    #[test]
    fn dump_round_trip() {
        let sys = SwitchedSystem::new(vec![drift_1d(1.0), drift_1d(-2.0)]).unwrap();
        let lat = Lattice::new(1, 0.5).unwrap();
        let bx = StateBox::new(vec![0.0], vec![6.0]).unwrap();
        let m = SymbolicModel::build(&sys.sampled(1.0, 1).unwrap(), &lat, &bx, Exec::Sequential).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let back = SymbolicModel::read_dump(&buf[..]).unwrap();
        assert_eq!(back, m);
        let mut buf2 = Vec::new();
        back.write_dump(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }
}
