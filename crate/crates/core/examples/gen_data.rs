//! Generates the coupled VAR dataset used throughout the examples and writes it as CSV.
//!
//! `cargo run --release --example gen_data [out.csv]`

use std::path::PathBuf;

use cpiri::data::{
    generate, lag1_cross_correlation, max_lagged_cross_correlation, write_csv, SyntheticKind,
    SyntheticSpec,
};
use cpiri::presets;

fn main() -> cpiri::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("cpiri_var.csv"), PathBuf::from);

    let spec = presets::coupled_var();
    let ds = generate(&spec)?;
    println!(
        "{} steps x {} channels ({:?})",
        ds.len(),
        ds.n_channels(),
        spec.kind
    );
    println!(
        "lag-1 cross-correlation     {:.4}",
        lag1_cross_correlation(&ds.values)?
    );
    println!(
        "max lagged cross-correlation {:.4}",
        max_lagged_cross_correlation(&ds.values, 4)?
    );

    // Without coupling the channels are independent.
    let independent = generate(&SyntheticSpec {
        coupling_strength: 0.0,
        ..spec.clone()
    })?;
    println!(
        "uncoupled lag-1 cross-corr  {:.4}",
        lag1_cross_correlation(&independent.values)?
    );

    let diffusion = generate(&SyntheticSpec {
        kind: SyntheticKind::GraphDiffusion,
        ..spec
    })?;
    println!(
        "graph diffusion lag-1 cross-corr {:.4}",
        lag1_cross_correlation(&diffusion.values)?
    );

    write_csv(&ds, &out)?;
    println!("wrote {}", out.display());
    Ok(())
}
