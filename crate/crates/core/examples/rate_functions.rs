//! The Legendre transform of several count laws, the geometric closed form,
//! and the rate functions J, K and I at a few measures.
//!
//! cargo run --release --example rate_functions

use gwldp::empirical::{OffspringMeasure, PairMeasure};
use gwldp::law::CountLaw;
use gwldp::model::{Alphabet, OffspringConfig, OffspringKernel};
use gwldp::rate::{ip_geometric_closed, legendre_ip, rate_i, rate_i_geometric, rate_j, rate_k, RateOptions};

fn main() -> gwldp::error::Result<()> {
    let laws = [
        ("geometric(1/2)", CountLaw::geometric(0.5)?),
        ("poisson(1)", CountLaw::poisson(1.0)?),
        ("table(1/4,1/2,1/4)", CountLaw::table(vec![0.25, 0.5, 0.25])?),
    ];
    print!("{:>6}", "x");
    for (name, _) in &laws {
        print!("{name:>20}");
    }
    println!("{:>20}", "closed form");
    for x in [0.0, 0.5, 1.0, 1.5, 2.0, 3.0] {
        print!("{x:>6.2}");
        for (_, law) in &laws {
            print!("{:>20.10}", legendre_ip(law, x)?);
        }
        println!("{:>20.10}", ip_geometric_closed(x)?);
    }

    let alphabet = Alphabet::new(["a", "b"])?;
    let transition = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
    let kernel = OffspringKernel::factored(alphabet, CountLaw::geometric(0.5)?, transition.clone())?;

    // the zero of I: stationary law times the chain
    let zero = PairMeasure::from_rows(vec![vec![0.6, 1.0 / 15.0], vec![1.0 / 15.0, 4.0 / 15.0]])?;
    let off = PairMeasure::from_rows(vec![vec![0.4, 0.1], vec![0.1, 0.4]])?;
    for (name, mu) in [("pi (x) Q", &zero), ("symmetric", &off)] {
        println!(
            "I({name}) = {:.8} (general) {:.8} (geometric form)",
            rate_i(mu, &transition, &CountLaw::geometric(0.5)?)?,
            rate_i_geometric(mu, &transition)?
        );
    }

    // every a has one child b and every b one child a
    let cycle = OffspringMeasure::new(
        2,
        [((0, OffspringConfig::new(vec![1])), 0.5), ((1, OffspringConfig::new(vec![0])), 0.5)],
    )?;
    let pair = PairMeasure::from_rows(vec![vec![0.0, 0.5], vec![0.5, 0.0]])?;
    println!("K(cycle) = {:.8}", rate_k(&cycle, &kernel, 1e-10)?);
    println!("J(cycle) = {:.8}", rate_j(&pair, &cycle, &kernel, &RateOptions::default())?);
    let lopsided = PairMeasure::from_rows(vec![vec![0.0, 0.25], vec![0.75, 0.0]])?;
    println!("J with mismatched marginals = {}", rate_j(&lopsided, &cycle, &kernel, &RateOptions::default())?);
    Ok(())
}
