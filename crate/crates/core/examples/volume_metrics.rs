//! DSC, HD95 and ASD of a corrupted prediction against phantom ground truth.
//!
//!     cargo run --release --example volume_metrics -- [seed]

use pless::metrics::evaluate;
use pless::synth::{generate_phantom, PhantomConfig};
use pless::VolumeLabelMap;

fn main() -> pless::Result<()> {
    let seed = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let phantom = generate_phantom(&PhantomConfig {
        seed,
        ..Default::default()
    })?;
    let pred: Vec<_> = phantom.student.iter().map(|p| p.argmax_labels()).collect();
    let pred = VolumeLabelMap::from_slices(&pred, phantom.meta.clone())?;
    let gt = VolumeLabelMap::from_slices(&phantom.ground_truth, phantom.meta.clone())?;

    let report = evaluate(&pred, &gt)?;
    println!("spacing (x, y, z) = {:?} mm", phantom.meta.spacing_mm);
    for c in &report.classes {
        println!(
            "{:4} dsc {:.3}  hd95 {:>8}  asd {:>8}",
            c.class,
            c.dsc,
            fmt_mm(c.hd95_mm),
            fmt_mm(c.asd_mm)
        );
    }
    println!(
        "mean dsc {:.3}  hd95 {}  asd {}",
        report.avg.dsc,
        fmt_mm(report.avg.hd95_mm),
        fmt_mm(report.avg.asd_mm)
    );
    Ok(())
}

fn fmt_mm(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |d| format!("{d:.2} mm"))
}
