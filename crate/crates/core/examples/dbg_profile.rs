use std::sync::Arc;
use std::time::Instant;

use feol::fem::{KernelCacheStore, LossMode};
use feol::operators::{build_decomposition, DecompositionStrategy, FnoConfig, SampleInput};
use feol::problems::{self, MaterialConstants};
use feol::sampler::FourierSamplerConfig;
use feol::tape::{FemProblem, LossSelect, Tape};

fn main() {
    let grid = 21usize;
    let mesh = Arc::new(problems::square2d_mesh(grid).unwrap());
    let spec = problems::square2d_spec();
    let bcs = spec.expand(&mesh).unwrap();
    let kernels = Arc::new(KernelCacheStore::build(&mesh).unwrap());
    let problem = FemProblem::new(mesh.clone(), kernels, Arc::new(bcs));
    let consts = MaterialConstants::default();
    let cfg = FourierSamplerConfig::default_2d(grid, 42);
    let phi = feol::sampler::fourier_field(&cfg, 0).unwrap();
    let mat = consts.field(phi.clone()).unwrap();
    let input = SampleInput::from_field(&mesh, phi).unwrap();

    let fno = FnoConfig {
        dim: 2, modes: vec![8, 8], width: 16, n_stages: 4, proj_dim: 128,
        padding: 4, output_scale: 1e-3, include_coords: true, out_fields: 3,
    };
    let set = build_decomposition(DecompositionStrategy::Single, &fno).unwrap();
    let params = set.init_params(7);

    let n = 200;
    // eval-only forward
    let t0 = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::eval(&params);
        let _ = set.state_nodes(&mut tape, &input, &problem).unwrap();
    }
    println!("forward only:        {:.2} ms", 1000.0 * t0.elapsed().as_secs_f64() / n as f64);

    // forward + loss head
    let t0 = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::eval(&params);
        let (t, u) = set.state_nodes(&mut tape, &input, &problem).unwrap();
        let _ = tape.fem_loss(&problem, &mat, t, u, LossMode::DetachTest, LossSelect::Total, None).unwrap();
    }
    println!("forward + head:      {:.2} ms", 1000.0 * t0.elapsed().as_secs_f64() / n as f64);

    // record + backward
    let t0 = Instant::now();
    for _ in 0..n {
        let mut tape = Tape::record(&params);
        let (t, u) = set.state_nodes(&mut tape, &input, &problem).unwrap();
        let (l, _, _) = tape.fem_loss(&problem, &mat, t, u, LossMode::DetachTest, LossSelect::Total, None).unwrap();
        let _ = tape.backward(l, 1.0).unwrap();
    }
    println!("fwd + head + bwd:    {:.2} ms", 1000.0 * t0.elapsed().as_secs_f64() / n as f64);
}
