//! Small fixture systems and brute-force oracles shared by the integration
//! tests. The oracles deliberately avoid the library's kernels: they loop
//! over all cell pairs and iterate to stability.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use qswitch::abstraction::{SymbolicModel, OUT};
use qswitch::lattice::{CellRange, Lattice, RelationBall, StateBox};
use qswitch::synthesis::{ModeSet, INF};
use qswitch::system::{ModeDynamics, SwitchedSystem};
use qswitch::thermal::ThermalParams;
use qswitch::Exec;

pub struct Fixture {
    pub name: &'static str,
    pub model: SymbolicModel,
    pub safe: CellRange,
    pub target: CellRange,
    /// Squared relation radius in cell units.
    pub r2: u64,
}

impl Fixture {
    pub fn ball(&self) -> RelationBall {
        RelationBall::euclidean(self.model.lattice().dim(), self.r2)
    }
}

fn affine(a: &[&[f64]], b: &[f64]) -> ModeDynamics {
    let n = b.len();
    ModeDynamics::affine(DMatrix::from_fn(n, n, |i, j| a[i][j]), DVector::from_column_slice(b)).unwrap()
}

fn boxed(lo: &[f64], hi: &[f64]) -> StateBox {
    StateBox::new(lo.to_vec(), hi.to_vec()).unwrap()
}

fn fixture(
    name: &'static str,
    sys: SwitchedSystem,
    tau: f64,
    substeps: usize,
    eta: f64,
    working: StateBox,
    safe: StateBox,
    target: StateBox,
    r2: u64,
) -> Fixture {
    let lat = Lattice::new(sys.dim(), eta).unwrap();
    let model = SymbolicModel::build(&sys.sampled(tau, substeps).unwrap(), &lat, &working, Exec::Sequential).unwrap();
    assert!(model.len() <= 500, "{name} has {} cells", model.len());
    let safe = lat.centers_within(&safe);
    let target = lat.centers_within(&target);
    assert!(!target.is_empty() && target.is_subset_of(&safe));
    Fixture { name, model, safe, target, r2 }
}

pub fn fixtures() -> Vec<Fixture> {
    let thermal = ThermalParams::default().system().unwrap();
    let drift = SwitchedSystem::new(vec![affine(&[&[0.0]], &[-1.0]), affine(&[&[0.0]], &[1.0])]).unwrap();
    let rotation = SwitchedSystem::new(vec![
        affine(&[&[-0.2, 1.0], &[-1.0, -0.2]], &[0.0, 0.0]),
        affine(&[&[-0.2, 1.0], &[-1.0, -0.2]], &[0.5, 0.0]),
    ])
    .unwrap();
    let d3: &[&[f64]] = &[&[-0.5, 0.0, 0.0], &[0.0, -0.5, 0.0], &[0.0, 0.0, -0.5]];
    let decay3 = SwitchedSystem::new(vec![affine(d3, &[0.2, 0.2, 0.0]), affine(d3, &[-0.2, 0.0, 0.2])]).unwrap();
    let d2: &[&[f64]] = &[&[-0.3, 0.0], &[0.0, -0.3]];
    let three = SwitchedSystem::new(vec![
        affine(d2, &[0.3, 0.0]),
        affine(d2, &[-0.15, 0.26]),
        affine(d2, &[-0.15, -0.26]),
    ])
    .unwrap();
    let pendulum = SwitchedSystem::new(vec![
        ModeDynamics::generic(2, |x, dx| {
            dx[0] = x[1];
            dx[1] = -x[0].sin() - 0.8 * x[1];
        }),
        ModeDynamics::generic(2, |x, dx| {
            dx[0] = x[1];
            dx[1] = -x[0].sin() - 0.8 * x[1] + 0.6;
        }),
    ])
    .unwrap();
    vec![
        fixture(
            "thermal-coarse",
            thermal,
            5.0,
            0,
            0.07,
            boxed(&[20.0, 20.0], &[22.0, 22.0]),
            boxed(&[20.25, 20.25], &[21.75, 21.75]),
            boxed(&[20.6, 20.6], &[21.4, 21.4]),
            2,
        ),
        fixture(
            "drift-1d",
            drift,
            0.3,
            0,
            0.05,
            boxed(&[-2.0], &[2.0]),
            boxed(&[-1.5], &[1.5]),
            boxed(&[-0.2], &[0.2]),
            1,
        ),
        fixture(
            "rotation-2d",
            rotation,
            0.5,
            0,
            0.07,
            boxed(&[-1.0, -1.0], &[1.0, 1.0]),
            boxed(&[-0.8, -0.8], &[0.8, 0.8]),
            boxed(&[-0.2, -0.2], &[0.2, 0.2]),
            2,
        ),
        fixture(
            "decay-3d",
            decay3,
            1.0,
            0,
            0.2,
            boxed(&[-0.7; 3], &[0.7; 3]),
            boxed(&[-0.5; 3], &[0.5; 3]),
            boxed(&[-0.1; 3], &[0.1; 3]),
            1,
        ),
        fixture(
            "three-mode-2d",
            three,
            1.0,
            0,
            0.1,
            boxed(&[-1.5, -1.0], &[1.5, 1.0]),
            boxed(&[-1.2, -0.8], &[1.2, 0.8]),
            boxed(&[-0.3, -0.3], &[0.3, 0.3]),
            3,
        ),
        fixture(
            "pendulum-rk4",
            pendulum,
            0.5,
            20,
            0.1,
            boxed(&[-1.4, -1.4], &[1.4, 1.4]),
            boxed(&[-1.1, -1.1], &[1.1, 1.1]),
            boxed(&[-0.3, -0.3], &[0.3, 0.3]),
            2,
        ),
    ]
}

fn sub(a: &[i64], b: &[i64]) -> u64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) * (x - y)) as u64).sum()
}

/// Greatest fixed point by repeated full sweeps until nothing changes.
pub fn naive_safety(model: &SymbolicModel, safe: &CellRange) -> Vec<ModeSet> {
    let dom = model.domain();
    let modes = model.mode_count();
    let mut alive: Vec<bool> = (0..dom.len()).map(|i| safe.contains(&dom.coords_of(i))).collect();
    loop {
        let k: Vec<ModeSet> = (0..dom.len())
            .map(|i| {
                let mut s = ModeSet::EMPTY;
                if alive[i] {
                    for p in 0..modes {
                        let t = model.succ_index(i, p);
                        if t != OUT && alive[t as usize] {
                            s.insert(p);
                        }
                    }
                }
                s
            })
            .collect();
        let next: Vec<bool> = k.iter().map(|s| !s.is_empty()).collect();
        if next == alive {
            return k;
        }
        alive = next;
    }
}

/// Entry times by value iteration: `J(q) = 1 + min_p J(succ(q, p))` over
/// safe successors, iterated until stable.
pub fn naive_entry_times(model: &SymbolicModel, safe: &CellRange, target: &CellRange) -> Vec<u32> {
    let dom = model.domain();
    let modes = model.mode_count();
    let cells: Vec<Vec<i64>> = (0..dom.len()).map(|i| dom.coords_of(i)).collect();
    let mut j: Vec<u32> = cells.iter().map(|c| if target.contains(c) { 0 } else { INF }).collect();
    loop {
        let mut changed = false;
        for i in 0..dom.len() {
            if j[i] == 0 || !safe.contains(&cells[i]) {
                continue;
            }
            let best = (0..modes)
                .filter_map(|p| {
                    let t = model.succ_index(i, p);
                    (t != OUT && safe.contains(&cells[t as usize]) && j[t as usize] != INF).then(|| j[t as usize] + 1)
                })
                .min()
                .unwrap_or(INF);
            if best < j[i] {
                j[i] = best;
                changed = true;
            }
        }
        if !changed {
            return j;
        }
    }
}

/// `K(q) = union of k(q')` over all cells within squared cell distance `r2`,
/// by a loop over every pair.
pub fn brute_dilate(k: &[ModeSet], dom: &CellRange, r2: u64) -> Vec<ModeSet> {
    let cells: Vec<Vec<i64>> = (0..dom.len()).map(|i| dom.coords_of(i)).collect();
    cells
        .iter()
        .map(|q| {
            cells
                .iter()
                .zip(k)
                .filter(|(c, _)| sub(q, c) <= r2)
                .fold(ModeSet::EMPTY, |acc, (_, s)| acc.union(*s))
        })
        .collect()
}

/// Minimum of `j` over all cells within squared cell distance `r2`.
pub fn brute_min(j: &[u32], dom: &CellRange, r2: u64) -> Vec<u32> {
    let cells: Vec<Vec<i64>> = (0..dom.len()).map(|i| dom.coords_of(i)).collect();
    cells
        .iter()
        .map(|q| cells.iter().zip(j).filter(|(c, _)| sub(q, c) <= r2).map(|(_, v)| *v).min().unwrap_or(INF))
        .collect()
}

/// Cells where the entry-time recursion fails:
/// `J(q) = 1 + max_{p in K(q)} J(succ(q, p))` at every `0 < J(q) < INF`.
pub fn recursion_failures(model: &SymbolicModel, k_eps: &[ModeSet], j: &[u32]) -> usize {
    (0..model.len())
        .filter(|&i| j[i] != 0 && j[i] != INF)
        .filter(|&i| {
            let worst = k_eps[i]
                .iter()
                .map(|p| match model.succ_index(i, p) {
                    OUT => INF,
                    t => j[t as usize],
                })
                .max();
            match worst {
                Some(w) if w != INF => j[i] != w + 1,
                _ => true,
            }
        })
        .count()
}
