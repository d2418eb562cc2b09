//! Depth profiles and feature keys on a hand-built network.
//!
//! Run: cargo run --example feature_keys

use hnci::netgraph::{all_depth_profiles, feature_key, ExposureMapping, InterferenceGraph};

fn main() -> hnci::Result<()> {
    //   0 - 1 - 2 - 3
    //       |       |
    //       4       5
    let edges = [(0, 1), (1, 2), (2, 3), (1, 4), (3, 5)];
    let z = vec![false, true, false, true, false, true];
    let y = vec![0.0; 6];
    let p = vec![0.5; 6];
    let g = InterferenceGraph::new(6, &edges, z, y, p)?;

    let k = 3;
    let profiles = all_depth_profiles(&g, k);
    for prof in &profiles {
        let counts: Vec<String> = (1..=k)
            .map(|d| {
                let c = prof.at(d);
                format!("{}/{}", c.treated, c.total)
            })
            .collect();
        println!("node {} (ecc {}): treated/total by depth {}", prof.ego, prof.max_depth, counts.join(" "));
    }

    let mappings = [
        ExposureMapping::RawTreatedProportion,
        ExposureMapping::treated_proportion_bucket(0.25)?,
        ExposureMapping::treated_count_bucket(1)?,
        // Any rule on (treated, total, depth) works.
        ExposureMapping::custom("any-treated", |t, _, _| i64::from(t > 0)),
    ];
    for m in &mappings {
        println!("\nmapping {}", m.label());
        for prof in &profiles {
            println!("  node {}: k=1 {}  k=3 {}", prof.ego, feature_key(prof, m, 1), feature_key(prof, m, 3));
        }
    }
    Ok(())
}
