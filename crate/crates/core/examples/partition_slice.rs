//! Builds the watershed/waterfall hierarchy of one phantom slice and prints
//! how many regions each layer keeps.
//!
//!     cargo run --example partition_slice -- [seed] [max_layers]

use pless::hierarchy::build_hierarchy;
use pless::pipeline::PipelineInputs;
use pless::synth::{generate_phantom, PhantomConfig};
use pless::HierarchyConfig;

fn main() -> pless::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let max_layers = args.next().and_then(|s| s.parse().ok()).unwrap_or(6);

    let phantom = generate_phantom(&PhantomConfig {
        seed,
        slices: 1,
        ..Default::default()
    })?;
    let inputs = PipelineInputs::from_phantom(&phantom)?;
    let hier = build_hierarchy(&inputs.images[0], &HierarchyConfig { max_layers })?;
    hier.check_nesting()?;

    let pixels = hier.height() * hier.width();
    for (k, layer) in hier.layers().iter().enumerate() {
        let n = layer.region_count();
        println!(
            "layer {k}: {n:5} regions, mean size {:6.1} px",
            pixels as f64 / n as f64
        );
    }
    println!(
        "parent map of layer 0 -> 1 starts {:?}",
        &hier.parents()[0][..8.min(hier.parents()[0].len())]
    );
    Ok(())
}
