//! OR and DR intervals for the average direct effect on the treated, one
//! simulated network, across k. The true k here is 2.
//!
//! Run: cargo run --release --example adet_ols

use hnci::estimators::{adet_dr, adet_or, ols_fit};
use hnci::partition::partition_from_profiles;
use hnci::seeding::substream;
use hnci::simharness::{draw_repetition, generate_outcomes, presets};

fn main() -> hnci::Result<()> {
    let design = presets::setting(1)?;
    let drawn = draw_repetition(&design, 0, 4, 100, |g, prof| {
        (0..=4).all(|k| {
            partition_from_profiles(g, prof, &design.mapping, k)
                .map(|p| p.is_balanced())
                .unwrap_or(false)
        })
    })?;
    let mut rng = substream(7, 0, 0, 0);
    let (g, tau) = generate_outcomes(&drawn.graph, &drawn.tau_i, &drawn.f, design.noise_sd, &mut rng)?;
    println!("true ADET = {tau:.4}");

    for k in 0..=4 {
        let part = partition_from_profiles(&g, &drawn.profiles, &design.mapping, k)?;
        let fit = ols_fit(&g, &part)?;
        let or = adet_or(&g, &part, &fit, 0.05)?;
        let dr = adet_dr(&g, &part, &fit, 0.05)?;
        println!(
            "k={k} d={:3}  OR {:.4} [{:.4}, {:.4}]  DR {:.4} [{:.4}, {:.4}]  sigma2={:.4}",
            part.d(),
            or.tau_hat,
            or.ci.0,
            or.ci.1,
            dr.tau_hat,
            dr.ci.0,
            dr.ci.1,
            fit.sigma2_hat
        );
    }
    Ok(())
}
