//! Homogeneous-effect regression under interference of depth 3, studied
//! across k. Coverage collapses at small k and the width is smallest at the
//! true k.
//!
//! Run: cargo run --release --example pooled_staircase [reps]

use hnci::simharness::{presets, run_adet_study, AdetStudySpec, StudyMethod};

fn main() -> hnci::Result<()> {
    let reps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60);
    let mut design = presets::staircase();
    design.outer_reps = reps;
    let spec = AdetStudySpec::new((0..=6).collect(), vec![StudyMethod::PooledOls]);
    let res = run_adet_study(&design, &spec)?;
    println!("{} repetitions, {} redraws", reps, res.total_redraws);
    println!("  k  coverage  mean width");
    for c in &res.cells {
        println!("{:3}  {:8.3}  {:10.4}", c.k, c.coverage, c.mean_width);
    }
    Ok(())
}
