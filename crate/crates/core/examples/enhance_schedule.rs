//! Walks the enhancement schedule: enhanced scribbles override the fused
//! pseudo-label only while `epoch <= tau * e_max`.
//!
//!     cargo run --release --example enhance_schedule -- [tau] [e_max]

use pless::enhancement::{enhance_pseudo_labels, fuse_predictions};
use pless::pipeline::PipelineInputs;
use pless::spreading::enhance_scribbles;
use pless::synth::{generate_phantom, PhantomConfig};
use pless::{EnhancementConfig, HierarchyConfig};

fn main() -> pless::Result<()> {
    let mut args = std::env::args().skip(1);
    let tau = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.25);
    let e_max = args.next().and_then(|s| s.parse().ok()).unwrap_or(20);
    let cfg = EnhancementConfig {
        tau,
        e_max,
        ..Default::default()
    };
    cfg.validate()?;

    let phantom = generate_phantom(&PhantomConfig {
        seed: 1,
        slices: 1,
        ..Default::default()
    })?;
    let inputs = PipelineInputs::from_phantom(&phantom)?;
    let s_enh = enhance_scribbles(
        &inputs.images[0],
        &inputs.scribbles[0],
        cfg.variant,
        &HierarchyConfig::default(),
    )?;
    let p_pl = fuse_predictions(&inputs.student[0], &inputs.teacher[0], cfg.fusion)?;
    let gt = &phantom.ground_truth[0];
    let acc = |m: &pless::LabelMap| {
        m.codes()
            .iter()
            .zip(gt.codes())
            .filter(|(a, b)| a == b)
            .count() as f64
            / m.len() as f64
    };

    println!("tau {tau}, e_max {e_max}, fused accuracy {:.4}", acc(&p_pl));
    for epoch in (0..=e_max).step_by((e_max as usize / 10).max(1)) {
        let p_enh = enhance_pseudo_labels(&p_pl, &s_enh, epoch, &cfg)?;
        let changed = p_enh
            .codes()
            .iter()
            .zip(p_pl.codes())
            .filter(|(a, b)| a != b)
            .count();
        println!(
            "epoch {epoch:3} {:8} changed {changed:4} px, accuracy {:.4}",
            if cfg.is_active(epoch) {
                "active"
            } else {
                "inactive"
            },
            acc(&p_enh)
        );
    }
    Ok(())
}
