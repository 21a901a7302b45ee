use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tilescan_core::geo::BoundingRegion;
use tilescan_core::par::Execution;
use tilescan_core::pipeline::{run_deployment, Adjacency, DeployConfig, OperatingPoint, TileSource};
use tilescan_core::scoring::{score_batch, HeuristicScorer};
use tilescan_core::synthworld::{SyntheticWorld, SyntheticWorldSpec};

fn world() -> SyntheticWorld {
    let region: BoundingRegion = "35.0,-101.0,35.1,-100.9".parse().unwrap();
    SyntheticWorld::new(SyntheticWorldSpec::generate(region, 42, 2, 0.3).unwrap()).unwrap()
}

fn modes() -> [(&'static str, Execution); 2] {
    [("sequential", Execution::SEQUENTIAL), ("parallel", Execution::default())]
}

fn bench_score_batch(c: &mut Criterion) {
    let w = world();
    let tiles: Vec<_> = w
        .tiles()
        .unwrap()
        .into_iter()
        .take(64)
        .map(|t| (t, w.fetch(t).unwrap()))
        .collect();
    let mut g = c.benchmark_group("score_batch_64");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| score_batch(&tiles, &HeuristicScorer::default(), exec).unwrap())
        });
    }
    g.finish();
}

fn bench_deployment(c: &mut Criterion) {
    let w = world();
    let region = w.spec().region;
    let op = OperatingPoint::new(0.5).unwrap();
    let mut g = c.benchmark_group("deployment_render_and_score");
    g.sample_size(10);
    for (name, exec) in modes() {
        let config = DeployConfig {
            adjacency: Adjacency::Eight,
            exec,
        };
        g.bench_with_input(BenchmarkId::from_parameter(name), &config, |b, &config| {
            b.iter(|| run_deployment(&region, &w, &HeuristicScorer::default(), op, &[], config).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, bench_score_batch, bench_deployment);
criterion_main!(benches);
