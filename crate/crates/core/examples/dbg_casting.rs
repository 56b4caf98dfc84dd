use feol::material::MaterialField;
use feol::problems;
use feol::solver::{solve_coupled, LinearBackend, SolverOpts};

fn main() {
    for div in [14usize, 15, 16, 17, 18] {
        let mesh = problems::casting_surrogate_mesh(div).unwrap();
        println!("div {div}: nodes {} elems {}", mesh.n_nodes(), mesh.n_elements());
    }
    let mesh = problems::casting_surrogate_mesh(16).unwrap();
    let mat = MaterialField::homogeneous(mesh.n_nodes());
    let spec = problems::casting_spec().resolve(0.8);
    let mut opts = SolverOpts::default();
    opts.linear_backend = LinearBackend::Bicgstab;
    let t0 = std::time::Instant::now();
    match solve_coupled(&mesh, &mat, &spec, &opts) {
        Ok((state, reports)) => {
            let tmax = state.t.iter().cloned().fold(f64::MIN, f64::max);
            let umax = state.u.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
            println!(
                "solved in {:.2}s: newton iters {} (res {:.2e}), max T {tmax:.4}, max |u| {umax:.3e}",
                t0.elapsed().as_secs_f64(),
                reports.thermal.iterations,
                reports.thermal.residual_norms.last().unwrap(),
            );
        }
        Err(e) => println!("solve failed: {e}"),
    }
}
