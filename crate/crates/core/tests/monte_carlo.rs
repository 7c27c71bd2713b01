use gwldp::empirical::{OffspringMeasure, TreeCounts};
use gwldp::model::{Alphabet, OffspringConfig, OffspringKernel};
use gwldp::rate::BallOptions;
use gwldp::sim::{enumerate, sample_conditioned_batch, DEFAULT_RETRY_BUDGET};
use gwldp::tilting::{auto_tilt, estimate_prob, tilted_model, Event, TiltFunction};
use gwldp::verify::chi_square_gof;

fn binary() -> OffspringKernel {
    OffspringKernel::explicit(
        Alphabet::letters(1),
        vec![vec![
            (OffspringConfig::empty(), 0.25),
            (OffspringConfig::uniform(0, 1), 0.5),
            (OffspringConfig::uniform(0, 2), 0.25),
        ]],
    )
    .unwrap()
}

#[test]
fn conditioned_sampler_matches_enumeration_for_explicit_kernel() {
    let k = OffspringKernel::explicit(
        Alphabet::letters(2),
        vec![
            vec![
                (OffspringConfig::empty(), 0.4),
                (OffspringConfig::new(vec![0, 1]), 0.3),
                (OffspringConfig::new(vec![1, 1, 0]), 0.3),
            ],
            vec![(OffspringConfig::empty(), 0.6), (OffspringConfig::new(vec![0]), 0.4)],
        ],
    )
    .unwrap();
    let root = [0.7, 0.3];
    let exact = enumerate(&k, &root, 6, 1_000_000).unwrap();
    let batch = sample_conditioned_batch(&k, &root, 6, 50_000, 9, DEFAULT_RETRY_BUDGET).unwrap();
    let mut observed = vec![0u64; exact.len()];
    for r in &batch {
        let i = exact.iter().position(|(t, _)| *t == r.tree).expect("sampled tree missing from enumeration");
        observed[i] += 1;
    }
    let probs: Vec<f64> = exact.iter().map(|(_, p)| *p).collect();
    let (stat, dof, p) = chi_square_gof(&observed, &probs);
    assert!(p > 0.001, "chi2 {stat} on {dof} dof, p = {p}");
}

fn ball_probability(kernel: &OffspringKernel, n: usize, event: &Event) -> f64 {
    enumerate(kernel, &[1.0], n, 1_000_000)
        .unwrap()
        .into_iter()
        .filter(|(t, _)| {
            let c = TreeCounts::of(t, 1);
            event.contains(&c.pair_measure_tilde(), &c.offspring_measure())
        })
        .map(|(_, p)| p)
        .sum()
}

#[test]
fn tilted_estimates_are_unbiased() {
    let k = binary();
    let center = OffspringMeasure::new(1, [((0, OffspringConfig::uniform(0, 1)), 1.0)]).unwrap();
    let event = Event::OffspringBall { center, radius: 0.4 };
    let n = 8;
    let exact = ball_probability(&k, n, &event);
    let g = TiltFunction::from_fn(&k, 2, 0.0, |_, c| if c.count() == 1 { 0.6 } else { 0.0 }).unwrap();
    let model = tilted_model(&k, &[1.0], &g).unwrap();
    let inside = (0..50)
        .filter(|&rep| {
            let r = estimate_prob(&model, n, &event, 4000, 1000 + rep).unwrap();
            (r.estimate - exact).abs() <= 3.0 * r.stderr
        })
        .count();
    assert!(inside >= 47, "{inside} of 50 within 3 sigma of {exact}");
}

#[test]
fn automatic_tilt_reduces_relative_error() {
    let k = binary();
    let center = OffspringMeasure::new(1, [((0, OffspringConfig::uniform(0, 1)), 1.0)]).unwrap();
    let event = Event::OffspringBall { center, radius: 0.2 };
    let n = 14;
    let exact = ball_probability(&k, n, &event);
    let plain =
        estimate_prob(&tilted_model(&k, &[1.0], &TiltFunction::zero(1)).unwrap(), n, &event, 100_000, 3).unwrap();
    let (g, rate) = auto_tilt(&k, &event, 2, &BallOptions::default()).unwrap();
    assert!(rate.is_finite());
    let tilted = estimate_prob(&tilted_model(&k, &[1.0], &g).unwrap(), n, &event, 100_000, 3).unwrap();
    assert!((tilted.estimate - exact).abs() <= 4.0 * tilted.stderr, "{} vs {exact}", tilted.estimate);
    let rel = |r: &gwldp::tilting::EstimateReport| r.stderr / r.estimate;
    assert!(plain.hits == 0 || rel(&tilted) < rel(&plain), "{:?} vs {:?}", tilted, plain);
    assert!(tilted.stderr < plain.stderr.max(exact), "{} vs {}", tilted.stderr, plain.stderr);
}
