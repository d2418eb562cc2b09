//! Writes a simulated network in the CLI's CSV format and prints the commands
//! for the usual workflow: validate, pick k with `k0`, then `adet` at that k.
//!
//! Run: cargo run --release --example cli_workflow [dir]

use std::fmt::Write as _;

use hnci::seeding::substream;
use hnci::simharness::{draw_repetition, generate_outcomes, presets};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::path::PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "hnci-demo".into()));
    std::fs::create_dir_all(&dir)?;

    let design = presets::setting(1)?;
    let drawn = draw_repetition(&design, 0, 2, 0, |_, _| true)?;
    let mut rng = substream(1, 0, 0, 0);
    let (g, tau) = generate_outcomes(&drawn.graph, &drawn.tau_i, &drawn.f, design.noise_sd, &mut rng)?;

    let mut nodes = String::from("node_id,z,y,p\n");
    for i in 0..g.n() {
        let _ = writeln!(
            nodes,
            "v{i},{},{},{}",
            u8::from(g.is_treated(i)),
            g.outcomes()[i],
            g.propensities()[i]
        );
    }
    let mut edges = String::from("u,v\n");
    for (u, v) in g.edges() {
        let _ = writeln!(edges, "v{u},v{v}");
    }
    std::fs::write(dir.join("nodes.csv"), nodes)?;
    std::fs::write(dir.join("edges.csv"), edges)?;
    std::fs::write(
        dir.join("run.toml"),
        "seed = 1\n\n[input]\nnodes = \"nodes.csv\"\nedges = \"edges.csv\"\nmapping = \"count:4\"\n\n\
         [k0]\nmax_k = 3\ncandidate_mode = \"repro\"\nB = 100\nJ = 100\n\n\
         [adet]\nmethod = \"sfl\"\nestimator = \"dr\"\nalpha = 0.05\n",
    )?;

    let d = dir.display();
    println!("wrote {d}/nodes.csv, {d}/edges.csv, {d}/run.toml (true ADET {tau:.4})");
    println!("hnci --config {d}/run.toml validate --k-max 3");
    println!("hnci --config {d}/run.toml k0");
    println!("hnci --config {d}/run.toml adet --k <recommended_k>");
    Ok(())
}
