//! Compares the rayon-backed batch path (the `parallel` feature's
//! `par::map_ordered`) against the sequential fallback on the pipeline's
//! two data-parallel hot loops: episode collection with grading, and
//! per-step reward-model scoring. Both paths produce identical results;
//! only throughput differs.

use criterion::{criterion_group, criterion_main, Criterion};

use rleif::grader;
use rleif::par;
use rleif::rewards::{prm_step_scores, RewardNet, FEATURE_DIM};
use rleif::rl::{generate_problems, gold_solution, rollout, MicroProblem, Policy};

type EpisodeBody<'a> = &'a (dyn Fn(usize, &MicroProblem) -> (usize, bool) + Sync);

fn collect_episodes<F>(problems: &[MicroProblem], policy: &Policy, mapper: F) -> usize
where
    F: Fn(&[MicroProblem], EpisodeBody<'_>) -> Vec<(usize, bool)>,
{
    let body = |i: usize, problem: &MicroProblem| {
        let (trajectory, solution) = rollout(policy, problem, false, i as u64);
        let correct = grader::grade(&solution.raw_text, &problem.gold_answer.to_string())
            .map(|v| v.is_correct)
            .unwrap_or(false);
        (trajectory.len(), correct)
    };
    mapper(problems, &body)
        .into_iter()
        .map(|(t, c)| t + c as usize)
        .sum()
}

fn bench_rollout_batch(c: &mut Criterion) {
    let policy = Policy::new_uniform();
    let problems = generate_problems(256, 0);
    let mut group = c.benchmark_group("rollout_batch_256");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            collect_episodes(&problems, &policy, |items, f| {
                par::map_ordered_seq(items, |i, p| f(i, p))
            })
        })
    });
    group.bench_function("parallel_feature", |b| {
        b.iter(|| {
            collect_episodes(&problems, &policy, |items, f| {
                par::map_ordered(items, |i, p| f(i, p))
            })
        })
    });
    group.finish();
}

fn bench_prm_scoring(c: &mut Criterion) {
    let problems = generate_problems(192, 1);
    let solutions: Vec<_> = problems.iter().map(gold_solution).collect();
    let net = RewardNet::new(FEATURE_DIM, 12, 3);
    let indices: Vec<usize> = (0..problems.len()).collect();
    let score_one = |i: usize| {
        prm_step_scores(&net, &problems[i].instruction_text, &solutions[i])
            .map(|scores| scores.iter().sum::<f64>())
            .unwrap_or(0.0)
    };
    let mut group = c.benchmark_group("prm_scoring_192");
    group.sample_size(20);
    group.bench_function("sequential", |b| {
        b.iter(|| {
            par::map_ordered_seq(&indices, |_, i| score_one(*i))
                .iter()
                .sum::<f64>()
        })
    });
    group.bench_function("parallel_feature", |b| {
        b.iter(|| {
            par::map_ordered(&indices, |_, i| score_one(*i))
                .iter()
                .sum::<f64>()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_rollout_batch, bench_prm_scoring);
criterion_main!(benches);
