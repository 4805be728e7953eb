//! Power-method step counts over random word graphs, by sequence length.
//!
//! cargo run --release --example bench_converge

use eigencent::adjacency::{build_adjacency, ConnectivityScorer};
use eigencent::eigencentrality::{converge_stats, PowerConfig};
use eigencent::numerics::Rng;

fn main() -> eigencent::Result<()> {
    let mut rng = Rng::new(11);
    let cfg = PowerConfig::default();
    println!("{:>4} {:>7} {:>4} {:>4} {:>12}", "n", "median", "p95", "max", "unconverged");
    for n in [2, 4, 8, 16, 32, 64, 128] {
        let batch = (0..200)
            .map(|_| {
                let scorer = ConnectivityScorer::random(16, 8, &mut rng);
                let h = rng.normal_matrix(16, n, 1.0);
                build_adjacency(&scorer, &h, &vec![true; n])
            })
            .collect::<eigencent::Result<Vec<_>>>()?;
        let hist = converge_stats(&batch, &cfg)?;
        println!(
            "{n:>4} {:>7} {:>4} {:>4} {:>12}",
            hist.median(),
            hist.quantile(0.95),
            hist.quantile(1.0),
            hist.unconverged
        );
    }
    Ok(())
}
