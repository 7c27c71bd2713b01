//! Draws trees conditioned on their size, two ways, and prints summary
//! statistics next to the exact size probability.
//!
//! cargo run --release --example conditioned_trees

use gwldp::empirical::TreeCounts;
use gwldp::law::CountLaw;
use gwldp::model::{Alphabet, OffspringKernel};
use gwldp::sim::{sample_conditioned_batch, sample_markov_indexed_batch, size_probability, DEFAULT_RETRY_BUDGET};

fn main() -> gwldp::error::Result<()> {
    let alphabet = Alphabet::new(["a", "b"])?;
    let law = CountLaw::geometric(0.5)?;
    let transition = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
    let kernel = OffspringKernel::factored(alphabet.clone(), law.clone(), transition.clone())?;
    let root = [0.5, 0.5];
    let n = 25;

    // geometric(1/2) trees of size n: Catalan(n - 1) / 2^(2n - 1), whatever the types
    let catalan = (0..n - 1).fold(1.0, |c, i| c * 2.0 * (2 * i + 1) as f64 / (i + 2) as f64);
    let exact = catalan / 2f64.powi(2 * n as i32 - 1);
    println!("P{{|T| = {n}}} = {exact:.6e}");
    println!("by enumeration at n = 8: {:.6e}", size_probability(&kernel, &root, 8, 10_000_000)?);

    let direct = sample_conditioned_batch(&kernel, &root, n, 500, 7, DEFAULT_RETRY_BUDGET)?;
    let indexed = sample_markov_indexed_batch(&law, &transition, &root, n, 500, 8, DEFAULT_RETRY_BUDGET)?;
    for (name, batch) in [("rejection", &direct), ("shape then types", &indexed)] {
        let attempts: u64 = batch.iter().map(|r| r.attempts).sum();
        let share_a: f64 =
            batch.iter().map(|r| r.tree.types().iter().filter(|&&t| t == 0).count() as f64 / n as f64).sum::<f64>()
                / batch.len() as f64;
        let leaves: f64 = batch
            .iter()
            .map(|r| {
                TreeCounts::of(&r.tree, 2)
                    .offspring_measure()
                    .iter()
                    .filter(|(_, c, _)| c.count() == 0)
                    .map(|(_, _, w)| w)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / batch.len() as f64;
        println!(
            "{name:>17}: acceptance {:.3e}, type-a share {share_a:.3}, leaf share {leaves:.3}",
            batch.len() as f64 / attempts as f64
        );
    }

    println!("\nfirst tree:\n{}", direct[0].tree.to_text(&alphabet));
    Ok(())
}
