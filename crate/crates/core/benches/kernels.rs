//! Sequential vs data-parallel execution of one explicit step, and of a
//! small sweep at one vs several concurrent jobs.

use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ifdflow::grid::{CellField, Grid};
use ifdflow::model::{MatrixField, ProblemData, VectorField};
use ifdflow::par::Exec;
use ifdflow::scenario::{parse_scenario, sweep, SweepParam};
use ifdflow::solver::{step, SolverConfig};

fn problem(n: usize, exec: Exec) -> (ProblemData, Grid, CellField) {
    let g = Grid::new_2d(n, n, 1.0, 1.0).unwrap().with_exec(exec);
    let m = CellField::from_fn(2, g.n_cells(), |i, c| {
        let [x, y] = g.cell_center(c);
        if i == 0 {
            3.0 + (2.0 * PI * x).sin()
        } else {
            3.0 + (2.0 * PI * y).cos()
        }
    });
    let d = ProblemData::new(2, g.n_cells(), MatrixField::uniform(&[vec![2.0, 1.0], vec![1.0, 2.0]]), VectorField::PerCell(m)).unwrap();
    let u = CellField::from_fn(2, g.n_cells(), |i, c| {
        let [x, y] = g.cell_center(c);
        0.5 + 0.2 * (PI * (x + i as f64 * y)).cos()
    });
    (d, g, u)
}

fn bench_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("step");
    group.sample_size(20);
    for n in [64, 256] {
        for (label, exec) in [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)] {
            let (d, g, u) = problem(n, exec);
            let cfg = SolverConfig::new(1.0);
            group.bench_with_input(BenchmarkId::new(label, n * n), &n, |b, _| {
                b.iter(|| step(&d, &g, &u, &cfg).unwrap())
            });
        }
    }
    group.finish();
}

const SWEEP: &str = r#"
name = "bench"
[domain]
extents = [1.0]
cells = [32]
[model]
A = [[2, 1], [1, 2]]
m = ["3 + sin(2*pi*x)", "3 + cos(2*pi*x)"]
[initial]
u0 = [0.5, 0.5]
[solver]
t_end = 0.05
"#;

fn bench_sweep(c: &mut Criterion) {
    let s = parse_scenario(SWEEP).unwrap();
    let values = [1e-2, 5e-3, 2e-3, 1e-3];
    let jobs_n = std::thread::available_parallelism().map_or(2, |n| n.get()).max(2);
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for jobs in [1, jobs_n] {
        group.bench_with_input(BenchmarkId::new("jobs", jobs), &jobs, |b, &jobs| {
            b.iter(|| {
                let dir = tempfile::tempdir().unwrap();
                sweep(&s, SweepParam::Delta, &values, dir.path(), jobs).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_step, bench_sweep);
criterion_main!(benches);
