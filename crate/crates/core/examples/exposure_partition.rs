//! Exposure groups across k on a simulated network: group counts, unmatched
//! treated nodes, the κ·d^{3/2} diagnostic and the refinement check.
//!
//! Run: cargo run --release --example exposure_partition

use hnci::partition::{kappa_diagnostic, partition_from_profiles, refinement_check};
use hnci::simharness::{draw_repetition, presets};

fn main() -> hnci::Result<()> {
    let design = presets::setting(1)?;
    let drawn = draw_repetition(&design, 0, 4, 0, |_, _| true)?;
    let g = &drawn.graph;
    println!("n = {}, edges = {}, treated = {}", g.n(), g.edge_count(), g.treated_count());

    let mut prev = None;
    for k in 0..=4 {
        let part = partition_from_profiles(g, &drawn.profiles, &design.mapping, k)?;
        let sizes = part.group_sizes();
        let nested = match &prev {
            Some(coarse) => refinement_check(coarse, &part)?.to_string(),
            None => "-".into(),
        };
        println!(
            "k={k}: d={:4}  smallest group={:4}  unmatched treated={:3}  kappa*d^1.5={:8.3}  refines k-1: {nested}",
            part.d(),
            sizes.iter().min().unwrap(),
            part.violations.len(),
            kappa_diagnostic(&part),
        );
        prev = Some(part);
    }
    Ok(())
}
