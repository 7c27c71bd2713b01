//! Empirical offspring and pair measures of one tree, the consistency
//! relation between them, and repairing a sub-consistent pair.
//!
//! cargo run --release --example empirical_measures

use gwldp::empirical::{check_consistency, consistency_defect, repair_consistency, tv_distance, TreeCounts};
use gwldp::model::{Alphabet, OffspringConfig};
use gwldp::tree::TypedTree;

fn main() -> gwldp::error::Result<()> {
    let alphabet = Alphabet::new(["a", "b"])?;
    // a(b(a, a), a(b)) in preorder
    let tree = TypedTree::from_preorder(vec![0, 1, 0, 0, 0, 1], vec![2, 2, 0, 0, 1, 0])?;
    let counts = TreeCounts::of(&tree, 2);
    let nu = counts.offspring_measure();
    let pair = counts.pair_measure_tilde();

    println!("offspring measure M_X:\n{}", nu.to_csv(&alphabet));
    println!("pair measure (|T|-normalized):\n{}", pair.to_csv(&alphabet));
    println!("edges {} of {} vertices", counts.edge_total(), counts.vertices);
    println!("consistency: {:?}", check_consistency(&pair, &nu, 1e-12)?);

    // add mass to the pair measure and repair at growing scales
    let mut loose = pair.clone();
    loose.set(1, 0, loose.get(1, 0) + 0.05);
    loose.set(0, 1, loose.get(0, 1) + 0.02);
    println!("\nafter perturbation: {:?}", check_consistency(&loose, &nu, 1e-12)?);
    println!("defect:\n{}", consistency_defect(&loose, &nu)?.to_csv(&alphabet));
    println!("n,tv_offspring,tv_pair,consistency");
    for n in [10, 100, 1000, 10_000] {
        let (w, v) = repair_consistency(&loose, &nu, n)?;
        println!(
            "{n},{:.3e},{:.3e},{:?}",
            tv_distance(&v, &nu),
            w.tv_distance(&loose),
            check_consistency(&w, &v, 1e-10)?
        );
    }
    let atom = OffspringConfig::uniform(0, 10);
    println!("\nrepair at n = 10 adds ({}, {:?})", alphabet.symbol(1), atom.labels(&alphabet));
    Ok(())
}
