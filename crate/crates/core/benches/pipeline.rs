//! Sequential against data-parallel execution of the encrypted pipeline.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dlcontrol::codec;
use dlcontrol::controller::LinearLaw;
use dlcontrol::crypto::PaillierKeypair;
use dlcontrol::exec::Execution;
use dlcontrol::linalg::IntMatrix;
use dlcontrol::sim::{self, RunConfig};
use dlcontrol::{Fixed, GridParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const EXAMPLE: &str = include_str!("../../../configs/example.toml");
const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn closed_loop(c: &mut Criterion) {
    let mut group = c.benchmark_group("closed_loop_10_steps");
    group.sample_size(10);
    for bits in [64u64, 256] {
        let mut cfg = RunConfig::from_toml(EXAMPLE).unwrap();
        cfg.run.horizon = 10;
        cfg.keys.paillier_bits = bits;
        cfg.keys.rsa_bits = 4 * bits;
        for (name, mode) in MODES {
            let mut cfg = cfg.clone();
            cfg.run.execution = mode;
            group.bench_with_input(BenchmarkId::new(name, bits), &cfg, |b, cfg| {
                b.iter(|| black_box(sim::run(cfg).unwrap()))
            });
        }
    }
    group.finish();
}

/// A dense random law with `states` states and `inputs` inputs.
fn dense_law(states: usize, inputs: usize, rng: &mut ChaCha20Rng) -> LinearLaw {
    let mut rows = |n: usize| {
        let rows = (0..n)
            .map(|_| (0..states + inputs).map(|_| rng.gen_range(-9..=9)).collect())
            .collect();
        IntMatrix::from_rows(rows).unwrap()
    };
    let output = rows(states);
    let update = rows(states);
    LinearLaw::new(states, inputs, output, update).unwrap()
}

fn encrypted_law(c: &mut Criterion) {
    let mut group = c.benchmark_group("encrypted_law");
    group.sample_size(10);
    let grid = GridParams::new(24, 6).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let kp = PaillierKeypair::generate(512, &mut rng).unwrap();
    for size in [4usize, 16] {
        let law = dense_law(size, size, &mut rng);
        let values: Vec<Fixed> = (0..2 * size)
            .map(|_| Fixed::from_raw(rng.gen_range(-500..=500), grid).unwrap())
            .collect();
        let duals = codec::encrypt_dual(&values, &kp.public, &mut rng).unwrap();
        for (name, mode) in MODES {
            group.bench_with_input(BenchmarkId::new(name, size), &duals, |b, duals| {
                b.iter(|| black_box(law.evaluate_encrypted(&kp.public, &duals[..size], &duals[size..], mode).unwrap()))
            });
        }
    }
    group.finish();
}

fn entity_encryption(c: &mut Criterion) {
    let mut group = c.benchmark_group("entity_encryption");
    group.sample_size(10);
    let grid = GridParams::new(24, 6).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let kp = PaillierKeypair::generate(512, &mut rng).unwrap();
    let entities = 8;
    let values: Vec<Fixed> = (0..4).map(|i| Fixed::from_raw(i * 37 - 60, grid).unwrap()).collect();
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::new(name, entities), |b| {
            b.iter(|| {
                mode.map(entities, |i| {
                    let mut rng = ChaCha20Rng::seed_from_u64(i as u64);
                    black_box(codec::encrypt_dual(&values, &kp.public, &mut rng).unwrap())
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, closed_loop, encrypted_law, entity_encryption);
criterion_main!(benches);
