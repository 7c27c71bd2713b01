//! Importance sampling of a rare event: a critical binary tree of size 20
//! whose offspring measure lies near "every vertex has exactly one child".
//! Compares plain Monte Carlo with the automatically tilted estimator.
//!
//! cargo run --release --example rare_event_tilting

use gwldp::empirical::OffspringMeasure;
use gwldp::model::{Alphabet, OffspringConfig, OffspringKernel};
use gwldp::rate::BallOptions;
use gwldp::tilting::{auto_tilt, estimate_decay_rate, estimate_prob, tilted_model, Event, TiltFunction};

fn main() -> gwldp::error::Result<()> {
    let alphabet = Alphabet::new(["a"])?;
    let kernel = OffspringKernel::explicit(
        alphabet.clone(),
        vec![vec![
            (OffspringConfig::empty(), 0.25),
            (OffspringConfig::uniform(0, 1), 0.5),
            (OffspringConfig::uniform(0, 2), 0.25),
        ]],
    )?;
    let center = OffspringMeasure::new(1, [((0, OffspringConfig::uniform(0, 1)), 1.0)])?;
    let event = Event::OffspringBall { center, radius: 0.2 };
    let (n, samples) = (20, 200_000);

    let (g, ball_rate) = auto_tilt(&kernel, &event, 2, &BallOptions::default())?;
    println!("rate infimum over the ball ~ {ball_rate:.5}");
    println!("tilt:\n{}", serde_json::to_string_pretty(&g.to_json(&alphabet))?);

    let plain = tilted_model(&kernel, &[1.0], &TiltFunction::zero(1))?;
    let tilted = tilted_model(&kernel, &[1.0], &g)?;
    for (name, model) in [("plain", &plain), ("tilted", &tilted)] {
        let r = estimate_prob(model, n, &event, samples, 1)?;
        println!("{name:>6}: estimate {:.4e} stderr {:.2e} hits {} ess {:.0}", r.estimate, r.stderr, r.hits, r.ess);
    }

    println!("\nn,conditional,conditional_decay");
    for p in estimate_decay_rate(&tilted, &event, &[10, 20, 40], samples, 2)? {
        println!("{},{:.4e},{:.4}", p.report.n, p.report.conditional, p.conditional_decay);
    }
    Ok(())
}
