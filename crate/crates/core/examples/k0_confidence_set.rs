//! Confidence set for the interference neighborhood size on one simulated
//! network with k0 = 2, in both candidate modes.
//!
//! Run: cargo run --release --example k0_confidence_set

use hnci::k0infer::{infer_k0, CandidateMode, K0Config, Ladder};
use hnci::partition::{partition_from_profiles, GroupPartition};
use hnci::seeding::substream;
use hnci::simharness::{draw_repetition, generate_outcomes, presets};

fn main() -> hnci::Result<()> {
    let design = presets::k0_study(1, 2)?;
    let k_max = 4;
    let drawn = draw_repetition(&design, 0, k_max, 100, |_, _| true)?;
    let mut rng = substream(design.seed, 0, 0, 0);
    let (g, _) = generate_outcomes(&drawn.graph, &drawn.tau_i, &drawn.f, design.noise_sd, &mut rng)?;

    let parts: Vec<GroupPartition> = (0..=k_max)
        .map(|k| partition_from_profiles(&g, &drawn.profiles, &design.mapping, k))
        .collect::<hnci::Result<_>>()?;
    let ladder = Ladder::new(&parts)?;
    let y = parts[0].untreated_outcomes(&g);

    for mode in [CandidateMode::Repro, CandidateMode::Range] {
        let cfg = K0Config {
            k_max,
            candidate_mode: mode.clone(),
            seed: 11,
            ..Default::default()
        };
        let set = infer_k0(&y, &ladder, &cfg)?;
        println!("{mode:?}: candidates {:?}, k_hat {}", set.candidate_set, set.k_hat_obs);
        for (k, f) in &set.f_hat {
            println!("  F_hat(k={k}) = {f:.3}");
        }
        println!("  retained {:?}, use k = {:?} downstream", set.retained, set.k_alpha_star);
        println!("  retained at alpha = 0.2: {:?}", set.retained_at(0.2));
    }
    Ok(())
}
