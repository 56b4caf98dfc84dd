use std::sync::Arc;
use std::time::Instant;

use feol::evalx::{evaluate_testcase, FieldTestbed, TestCase};
use feol::operators::{build_decomposition, DecompositionStrategy, FnoConfig};
use feol::problems::{self, MaterialConstants};
use feol::sampler::FourierSamplerConfig;
use feol::solver::SolverOpts;
use feol::training::{train, Dataset, TrainConfig, TrainScheme};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let n_samples: usize = args.get(1).map_or(100, |s| s.parse().unwrap());
    let n_epoch: usize = args.get(2).map_or(50, |s| s.parse().unwrap());
    let grid: usize = args.get(3).map_or(21, |s| s.parse().unwrap());

    let mesh = Arc::new(problems::square2d_mesh(grid).unwrap());
    let spec = problems::square2d_spec();
    let consts = MaterialConstants::default();
    let sampler_cfg = FourierSamplerConfig::default_2d(grid, 42);
    let dataset = problems::field_dataset(&mesh, &spec, consts, &sampler_cfg, 0, n_samples).unwrap();

    let fno = FnoConfig {
        dim: 2,
        modes: vec![8, 8],
        width: 16,
        n_stages: 4,
        proj_dim: 128,
        padding: 4,
        output_scale: 1e-3,
        include_coords: true,
        out_fields: 3,
    };
    let set = build_decomposition(DecompositionStrategy::Single, &fno).unwrap();
    let mut params = set.init_params(7);
    println!("params: {}", params.iter().map(|p| p.n_params()).sum::<usize>());

    let mut cfg = TrainConfig::new(TrainScheme::Monolithic, n_epoch, 100.min(n_samples), 7);
    cfg.lr_start = 1e-2;
    cfg.lr_end = 1e-3;

    let t0 = Instant::now();
    let history = train(&set, &mut params, &dataset, &cfg, |_, _| Ok(())).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let first = history.epochs.first().unwrap().loss;
    let last = history.epochs.last().unwrap().loss;
    println!(
        "train {:.1}s ({:.1} ms/sample-step): L {first:.4e} -> {last:.4e} (ratio {:.1})",
        dt,
        1000.0 * dt / (n_samples * n_epoch) as f64,
        first / last
    );

    let testbed = FieldTestbed {
        dim: 2,
        spec,
        consts,
        sampler: sampler_cfg,
        solver: SolverOpts::default(),
    };
    let t1 = Instant::now();
    let report = evaluate_testcase(&testbed, &set, &params, TestCase::InDistribution, 10, grid, 1_000_000).unwrap();
    println!(
        "eval {:.1}s: means {:?} excluded {}",
        t1.elapsed().as_secs_f64(),
        report
            .mean_per_field()
            .iter()
            .map(|v| format!("{:.3}", v))
            .collect::<Vec<_>>(),
        report.excluded
    );
}
