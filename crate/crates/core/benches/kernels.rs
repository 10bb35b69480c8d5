//! Sequential against data-parallel execution for each pipeline kernel on
//! a mid-size thermal safety problem (about 41k cells, ball radius 24 cells).
//! Without the `parallel` feature both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qswitch::abstraction::SymbolicModel;
use qswitch::determinize::{determinize, verify_determinization, Permissions};
use qswitch::lattice::{CellRange, Lattice, RelationBall, StateBox};
use qswitch::runtime::{monte_carlo_validate, Controller, Policy, Spec};
use qswitch::synthesis::*;
use qswitch::system::SampledSystem;
use qswitch::thermal::ThermalParams;
use qswitch::Exec;
use std::hint::black_box;

const ETA: f64 = 0.014;
const EPS: f64 = 0.25;

struct Setup {
    sys: SampledSystem,
    lat: Lattice,
    working: StateBox,
    model: SymbolicModel,
    safe: CellRange,
    target: CellRange,
    ball: RelationBall,
}

fn setup() -> Setup {
    let sys = ThermalParams::default().system().unwrap().sampled(5.0, 0).unwrap();
    let lat = Lattice::new(2, ETA).unwrap();
    let working = StateBox::new(vec![20.0; 2], vec![22.0; 2]).unwrap();
    let model = SymbolicModel::build(&sys, &lat, &working, Exec::Parallel).unwrap();
    let safe = lat.centers_within(&working.contract(EPS).unwrap());
    let target = lat.centers_within(&StateBox::new(vec![20.8; 2], vec![21.2; 2]).unwrap());
    let r = (EPS - ETA) / lat.spacing();
    let ball = RelationBall::euclidean(2, (r * r).floor() as u64);
    Setup { sys, lat, working, model, safe, target, ball }
}

const EXECS: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn kernels(c: &mut Criterion) {
    let s = setup();
    let dom = s.model.domain().clone();
    let sres = synthesize_safety(&s.model, &s.safe, Exec::Parallel).unwrap();
    let rres = synthesize_reach(&s.model, &s.safe, &s.target, Exec::Parallel).unwrap();
    let refn = Refinement::from_ball(s.ball.clone());
    let rc = refn.safety(&sres, &dom, &dom, DilationEngine::Auto, Exec::Parallel).unwrap();
    let perm = Permissions::safety(&rc, 2);
    let tree = determinize(&perm).unwrap();
    let ctrl = Controller::new(s.lat, Spec::Safety { safe: s.working.clone() }, 2, Policy::Tree(tree.clone())).unwrap();

    let mut g = c.benchmark_group("kernels");
    g.sample_size(10);
    for (name, exec) in EXECS {
        g.bench_function(BenchmarkId::new("abstraction", name), |b| {
            b.iter(|| SymbolicModel::build(&s.sys, &s.lat, &s.working, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("safety_fixed_point", name), |b| {
            b.iter(|| synthesize_safety(&s.model, &s.safe, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("dilate_edt", name), |b| {
            b.iter(|| dilate_edt(black_box(&sres.k_eps), &dom, s.ball.max_norm2().unwrap(), exec))
        });
        g.bench_function(BenchmarkId::new("dilate_scan", name), |b| {
            b.iter(|| dilate_scan(black_box(&sres.k_eps), &dom, &s.ball, exec))
        });
        g.bench_function(BenchmarkId::new("min_filter", name), |b| {
            b.iter(|| min_filter(black_box(&rres.j), &dom, &s.ball, exec))
        });
        g.bench_function(BenchmarkId::new("reach_full_union", name), |b| {
            b.iter(|| refn.reach(&rres, &dom, &dom, ReachRefineMode::FullUnion, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("verify_determinization", name), |b| {
            b.iter(|| verify_determinization(&tree, &perm, exec).unwrap())
        });
        g.bench_function(BenchmarkId::new("monte_carlo_64x200", name), |b| {
            b.iter(|| monte_carlo_validate(&s.sys, &ctrl, &rc, 64, 200, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
