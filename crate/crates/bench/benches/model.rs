use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use platoon_core::eval::{generate_platoon, GenerationTask};
use platoon_core::network::{backward_rollout, forward_step, LstmMemory};
use platoon_core::sampling::sample_mask;
use platoon_core::training::rollout_follower;
use platoon_core::{features, LstmModel};

fn forward(c: &mut Criterion) {
    let (platoons, params) = platoon_bench::fixture();
    let p = &platoons[0];
    let obs = features(&p.trajectories()[1].states()[0], &p.leader().states()[0]);
    let mem = LstmMemory::zeros(params.hidden_sizes());
    c.bench_function("forward_step", |b| {
        b.iter(|| forward_step(&params, black_box(&obs), &mem).unwrap())
    });
}

fn rollout_backward(c: &mut Criterion) {
    let (platoons, params) = platoon_bench::fixture();
    let p = &platoons[0];
    let (lead, follow) = (p.leader().states(), p.trajectories()[1].states());
    let mask = sample_mask(0.5, p.steps(), 3).unwrap();
    let dt = p.dt();
    c.bench_function("rollout_and_backward", |b| {
        b.iter(|| {
            let roll = rollout_follower(&params, follow, lead, lead, &mask, dt).unwrap();
            let dl: Vec<f64> = (1..follow.len()).map(|t| roll.generated[t].x - follow[t].x).collect();
            backward_rollout(&params, &roll.tape, &dl).unwrap()
        })
    });
}

fn generate(c: &mut Criterion) {
    let (platoons, params) = platoon_bench::fixture();
    let model = LstmModel::new(params);
    let task = GenerationTask::from_platoon(&platoons[0]);
    c.bench_function("generate_platoon", |b| {
        b.iter(|| generate_platoon(&model, black_box(&task)).unwrap())
    });
}

criterion_group!(benches, forward, rollout_backward, generate);
criterion_main!(benches);
