use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};

use meltpinn_bench::{desk_net, random_batch};
use meltpinn_core::difftape::Tape;
use meltpinn_core::losses::{Gradients, LogParams, LossEngine, Objective};
use meltpinn_core::physics::NondimParams;
use meltpinn_core::refsolver::{BoundaryConditions, MaskedGrid, Solver};

fn loss_engine(c: &mut Criterion) {
    let p = desk_net(1);
    let lp = LogParams::from_nd(&NondimParams::new(541.0, 77.0).unwrap());
    let mut g = c.benchmark_group("loss_engine");
    g.sample_size(10);
    for total in [1024, 8192] {
        let b = random_batch(total, 2);
        let mut engine = LossEngine::new();
        g.bench_function(format!("value_and_grad_{total}"), |bench| {
            let mut grad = Gradients::zeros(p.n_params());
            bench.iter(|| engine.evaluate(&p, &b, &Objective::forward(), lp, Some(&mut grad)).unwrap())
        });
    }
    g.finish();
}

fn jets(c: &mut Criterion) {
    let p = desk_net(3);
    c.bench_function("forward_jet_scalar", |b| b.iter(|| p.forward_jet(black_box([1.0, 0.1, -0.2])).unwrap()));
    c.bench_function("tape_record_and_backward", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let leaves = p.leaves_on(&mut tape).unwrap();
            let jet = p.record_forward_jet(&mut tape, &leaves, [1.0, 0.1, -0.2]).unwrap();
            tape.backward(jet.u.d_xx, &leaves).unwrap()
        })
    });
}

fn solver(c: &mut Criterion) {
    let mut g = c.benchmark_group("refsolver_step");
    g.sample_size(20);
    for n in [48, 96] {
        let s = Solver::new(
            MaskedGrid::half_disk(n).unwrap(),
            NondimParams::new(541.0, 77.0).unwrap(),
            BoundaryConditions::default(),
        );
        let dt = 0.4 * s.stable_dt(1.0);
        let mut state = s.initial_state();
        for _ in 0..20 {
            state = s.step(&state, dt).unwrap();
        }
        g.bench_function(format!("half_disk_{n}"), |b| {
            b.iter_batched(|| state.clone(), |st| s.step(&st, dt).unwrap(), BatchSize::LargeInput)
        });
    }
    g.finish();
}

criterion_group!(benches, loss_engine, jets, solver);
criterion_main!(benches);
