//! Gradient of a loss on the Perron vector with respect to the adjacency
//! matrix: the analytic series, the unrolled iteration and central
//! differences side by side, plus the decay of the start-vector gradient.
//!
//! cargo run --release --example gradient_check

use eigencent::eigencentrality::{power_method, PowerConfig};
use eigencent::gradcheck::{random_stochastic, run_trial, smooth_alpha, summarize};
use eigencent::numerics::{dot, finite_diff_grad, relative_error, Rng};
use eigencent::powergrad::{analytic_grad_a, grad_wrt_init_z, series_partial_sums, unrolled_grad_a};

fn main() -> eigencent::Result<()> {
    let mut rng = Rng::new(7);
    let a = random_stochastic(5, 1.0, &mut rng);
    let gamma = rng.normal_vec(5, 1.0);
    let cfg = PowerConfig::default();
    let eig = power_method(&a, &cfg)?;

    let fd = finite_diff_grad(|m| dot(&gamma, &smooth_alpha(m)), a.matrix(), 1e-6);
    println!("series depth vs finite differences:");
    for k in [1, 2, 5, 10, 20, 40] {
        let g = analytic_grad_a(&a, &eig, &gamma, k)?;
        println!("  k = {k:2}  relative error {:.3e}", relative_error(g.data(), fd.data(), 1e-12));
    }
    let sums = series_partial_sums(&a, &eig, &gamma, 12)?;
    let terms: Vec<String> = sums.windows(2).map(|w| format!("{:.1e}", w[1].sub(&w[0]).max_abs())).collect();
    println!("series term sizes {terms:?}");

    let un = unrolled_grad_a(&a, &cfg, &gamma)?;
    let an = analytic_grad_a(&a, &un.eig, &gamma, cfg.grad_steps)?;
    println!("unrolled vs analytic (k = {}): max abs diff {:.3e}", cfg.grad_steps, un.grad.sub(&an).max_abs());

    let (gz, curve) = grad_wrt_init_z(&a, &cfg, &gamma)?;
    println!("dL/dz after {} steps: {:.3e}", curve.len() - 1, gz.iter().map(|x| x * x).sum::<f64>().sqrt());
    for k in [0, 5, 10, 20, 40] {
        println!("  step {k:2}  {:.3e}", curve[k]);
    }

    let trials: Vec<_> = (0..20).map(|t| run_trial(2019, t, 8)).collect::<eigencent::Result<_>>()?;
    println!("{:#?}", summarize(&trials));
    Ok(())
}
