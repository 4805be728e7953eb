//! Dominant eigenpair of a small word graph, the convergence trace, and the
//! spectral gap that governs it.
//!
//! cargo run --example power_method

use eigencent::adjacency::AdjacencyMatrix;
use eigencent::eigencentrality::{power_method, PowerConfig};
use eigencent::numerics::{column_softmax, Matrix, Rng};
use eigencent::powergrad::spectral_diag;

fn main() -> eigencent::Result<()> {
    let a = AdjacencyMatrix::new(Matrix::from_rows(&[[0.5, 0.2, 0.1], [0.3, 0.6, 0.1], [0.2, 0.2, 0.8]])?)?;
    let e = power_method(&a, &PowerConfig::default())?;
    println!("alpha   {:?}", e.alpha);
    println!("lambda  {:.12}  steps {}  converged {}", e.lambda, e.steps_taken, e.converged);
    println!("residual {:.2e}", e.residual(&a));

    let d = spectral_diag(&a)?;
    println!("|l2|/l1 {:.6}", d.lambda2_over_lambda1);
    for steps in [1, 2, 4, 8, 16, 32] {
        let t = power_method(&a, &PowerConfig::fixed_steps(steps))?;
        let err: f64 = t.alpha.iter().zip(&e.alpha).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        println!("  after {steps:2} steps  max |alpha - alpha*| {err:.3e}  bound ~ {:.3e}", d.lambda2_over_lambda1.powi(steps as i32));
    }

    let mut rng = Rng::new(1);
    let big = AdjacencyMatrix::new(column_softmax(&rng.normal_matrix(64, 64, 1.0)))?;
    let e = power_method(&big, &PowerConfig::default())?;
    println!("random 64x64: {} steps, lambda {:.12}", e.steps_taken, e.lambda);
    Ok(())
}
