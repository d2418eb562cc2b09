//! Replication study on one of the four synthetic settings, all four
//! OR/DR x OLS/SFL methods, printed as CSV.
//!
//! Run: cargo run --release --example simulate_setting [setting] [outer] [inner]

use hnci::simharness::{presets, run_adet_study, AdetStudySpec, StudyMethod};

fn main() -> hnci::Result<()> {
    let mut args = std::env::args().skip(1).map(|s| s.parse::<usize>().ok());
    let which = args.next().flatten().unwrap_or(1) as u8;
    let outer = args.next().flatten().unwrap_or(5);
    let inner = args.next().flatten().unwrap_or(50);

    let mut design = presets::setting(which)?;
    design.outer_reps = outer;
    design.inner_reps = inner;
    let spec = AdetStudySpec::new((0..=4).collect(), StudyMethod::FOUR.to_vec());
    let res = run_adet_study(&design, &spec)?;
    eprintln!("{} x {} replications, {} redraws", outer, inner, res.total_redraws);
    print!("{}", res.to_csv());
    Ok(())
}
