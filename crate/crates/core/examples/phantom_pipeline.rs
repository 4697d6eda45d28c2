//! Full chain on a synthetic phantom: hierarchy, spreading, background
//! expansion, fusion, scheduled enhancement, loss and metrics.
//!
//!     cargo run --release --example phantom_pipeline -- [seed] [jobs]

use pless::pipeline::{run_pipeline, PipelineConfig, PipelineInputs};

fn main() -> pless::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter("PLESS_LOG")).init();
    let mut args = std::env::args().skip(1);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let jobs = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let cfg = PipelineConfig {
        seed,
        ..Default::default()
    };
    let inputs = PipelineInputs::load(&cfg)?;
    let (report, _) = run_pipeline(&inputs, &cfg, jobs)?;

    let c = &report.coverage;
    println!(
        "coverage: scribbles {:.3}, spread {:.3}, enhanced {:.3}",
        c.scribbles, c.spread, c.enhanced
    );
    let active = report.schedule.iter().filter(|e| e.active).count();
    println!(
        "schedule: {active} of {} epochs active, loss {:.4} -> {:.4}",
        report.schedule.len(),
        report.schedule[0].loss,
        report.schedule.last().map_or(0.0, |e| e.loss)
    );
    if let Some(ev) = &report.evaluation {
        println!(
            "pixel accuracy: fused {:.4}, enhanced {:.4}",
            ev.accuracy.pseudo_label, ev.accuracy.enhanced
        );
        println!(
            "mean dsc: fused {:.3}, enhanced {:.3}",
            ev.pseudo_label.avg.dsc, ev.enhanced.avg.dsc
        );
    }
    Ok(())
}
