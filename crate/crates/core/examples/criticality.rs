//! Mean matrices, recurrent/transient classes and the Perron-Frobenius
//! eigenvalue, plus exact size probabilities by enumeration.
//!
//! cargo run --release --example criticality

use gwldp::law::{tilt_to_critical, CountLaw};
use gwldp::model::{classify, transient_offspring_bound, Alphabet, OffspringConfig, OffspringKernel};
use gwldp::sim::size_probability;

fn main() -> gwldp::error::Result<()> {
    let chain = OffspringKernel::factored(
        Alphabet::letters(2),
        CountLaw::geometric(0.5)?,
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
    )?;
    let report = classify(&chain.mean_matrix()?);
    println!("2-type geometric chain: {report:?}, critical: {}", report.is_critical());

    // a and b breed each other and shed c, which is always a leaf
    let cfg = OffspringConfig::new;
    let feeder = OffspringKernel::explicit(
        Alphabet::letters(3),
        vec![
            vec![(cfg(vec![]), 0.4), (cfg(vec![0, 1]), 0.3), (cfg(vec![2, 2]), 0.3)],
            vec![(cfg(vec![]), 0.5), (cfg(vec![1, 0, 2]), 0.5)],
            vec![(cfg(vec![]), 1.0)],
        ],
    )?;
    let report = classify(&feeder.mean_matrix()?);
    println!(
        "feeder: recurrent {:?}, transient {:?}, rho {:?}, transient offspring bound {:?}",
        report.recurrent,
        report.transient,
        report.pf_eigenvalue,
        transient_offspring_bound(&feeder, &report)
    );

    let sub = CountLaw::poisson(0.6)?;
    let (theta, critical) = tilt_to_critical(&sub)?;
    println!("poisson(0.6) tilted by theta = {theta:.6} has mean {:.12}", critical.mean());

    let single = OffspringKernel::factored(Alphabet::letters(1), CountLaw::geometric(0.5)?, vec![vec![1.0]])?;
    println!("\nn,P(|T|=n),-log(P)/n");
    for n in 1..=12 {
        let p = size_probability(&single, &[1.0], n, 10_000_000)?;
        println!("{n},{p:.6e},{:.6}", -p.ln() / n as f64);
    }
    Ok(())
}
