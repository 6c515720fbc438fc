use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use robustcoop::env::{GatheringConfig, GatheringGame};
use robustcoop::harness::{evaluate_grid, Algorithm, AlgorithmSpec, Estimator, EvalSettings, PolicyHandle, TestCell};
use robustcoop::par::{self, Execution};
use robustcoop::pool::{epsilon_cover, train_pool};
use robustcoop::{MdpFamily, ThetaVector};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn family() -> GatheringGame {
    GatheringGame::new(GatheringConfig::for_grid(3)).unwrap()
}

fn grid_eval(c: &mut Criterion) {
    let f = family();
    let pool = train_pool(&f, &epsilon_cover(f.space(), 1.0).unwrap(), Execution::Sequential).unwrap();
    let algorithms =
        [Algorithm::new("AdaptPool1", AlgorithmSpec::Pool(pool)), Algorithm::new("Oracle", AlgorithmSpec::Oracle)];
    let settings =
        EvalSettings { resolution: 1.0, runs: 1, episodes: 5, steps: 50, learning_rate: 0.025, theta0: None, seed: 1 };
    let mut group = c.benchmark_group("grid_eval");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| b.iter(|| black_box(evaluate_grid(&f, &algorithms, &settings, exec).unwrap())));
    }
    group.finish();
}

fn mc_trials(c: &mut Criterion) {
    let f = family();
    let cell = TestCell::new(&f, &ThetaVector(vec![1.0, -1.0])).unwrap();
    let seeds: Vec<u64> = (0..16).collect();
    let mut group = c.benchmark_group("mc_trials");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| {
                par::map(exec, &seeds, |&s| {
                    let est = Estimator::for_family(&f, f.space().center(), 0.025).unwrap();
                    cell.run("Oracle", PolicyHandle::Oracle, est, 5, 50, s).unwrap().total_discounted_return
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, grid_eval, mc_trials);
criterion_main!(benches);
