//! Minimizes relative entropy over offspring laws with prescribed mean child
//! counts by brute force, and compares with the closed form
//! `z H(phi/z || q) + I_p(z)`. The gap comes from truncating at k children.
//!
//! cargo run --release --example infimum_identity

use gwldp::law::CountLaw;
use gwldp::rate::lemma_inf_oracle;

fn main() -> gwldp::error::Result<()> {
    let cases: [(&[f64], &[f64]); 2] = [(&[0.8, 0.4], &[0.5, 0.5]), (&[0.5, 0.3, 0.4], &[0.2, 0.3, 0.5])];
    let laws = [
        ("geometric(1/2)", CountLaw::geometric(0.5)?),
        ("poisson(1)", CountLaw::poisson(1.0)?),
        ("table(1/4,1/2,1/4)", CountLaw::table(vec![0.25, 0.5, 0.25])?),
    ];
    println!(
        "{:<20} {:>4} {:>3} {:>14} {:>14} {:>10} {:>6}",
        "law", "S", "k", "brute force", "closed form", "gap", "iters"
    );
    for (phi, q) in cases {
        for (name, law) in &laws {
            for k in [4, 6, 8, 10] {
                let o = lemma_inf_oracle(phi, q, law, k)?;
                println!(
                    "{name:<20} {:>4} {k:>3} {:>14.10} {:>14.10} {:>10.2e} {:>6}",
                    phi.len(),
                    o.bruteforce,
                    o.closed_form,
                    o.bruteforce.value() - o.closed_form.value(),
                    o.iterations
                );
            }
        }
    }
    Ok(())
}
