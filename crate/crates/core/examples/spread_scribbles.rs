//! Compares the three scribble enhancement variants on a phantom: how much
//! of the slice each one labels and how often those labels are right.
//!
//!     cargo run --release --example spread_scribbles -- [seed]

use pless::pipeline::PipelineInputs;
use pless::spreading::{enhance_scribbles_staged, SpreadVariant};
use pless::synth::{generate_phantom, PhantomConfig};
use pless::HierarchyConfig;

fn main() -> pless::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let phantom = generate_phantom(&PhantomConfig {
        seed,
        ..Default::default()
    })?;
    let inputs = PipelineInputs::from_phantom(&phantom)?;
    let hier = HierarchyConfig::default();

    let scribbled: usize = inputs.scribbles.iter().map(|s| s.labeled_count()).sum();
    let total: usize = inputs.scribbles.iter().map(|s| s.len()).sum();
    println!(
        "scribbles: {scribbled} px ({:.1}%)",
        100.0 * scribbled as f64 / total as f64
    );

    for variant in SpreadVariant::ALL {
        let (mut labeled, mut correct) = (0, 0);
        for z in 0..inputs.images.len() {
            let staged =
                enhance_scribbles_staged(&inputs.images[z], &inputs.scribbles[z], variant, &hier)?;
            let gt = phantom.ground_truth[z].codes();
            for (p, &c) in staged.enhanced.codes().iter().enumerate() {
                if staged.enhanced.is_labeled(p) {
                    labeled += 1;
                    correct += usize::from(c == gt[p]);
                }
            }
        }
        println!(
            "{:12} labels {:5.1}% of pixels ({:4.1}x scribbles), precision {:.3}",
            variant.as_str(),
            100.0 * labeled as f64 / total as f64,
            labeled as f64 / scribbled as f64,
            correct as f64 / labeled as f64
        );
    }
    Ok(())
}
