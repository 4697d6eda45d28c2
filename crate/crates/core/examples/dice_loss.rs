//! Soft Dice loss of student and teacher against an enhanced pseudo-label,
//! plus a finite-difference look at the analytic gradient.
//!
//!     cargo run --example dice_loss

use pless::enhancement::ProbMap;
use pless::loss::{pseudo_label_loss, soft_dice_grad, soft_dice_loss};
use pless::{DiceConfig, LabelMap};

fn main() -> pless::Result<()> {
    // 2 classes on a 1x4 strip, [C, H, W] layout
    let ps = ProbMap::new(2, 1, 4, vec![0.9, 0.6, 0.3, 0.2, 0.1, 0.4, 0.7, 0.8])?;
    let pt = ProbMap::new(2, 1, 4, vec![0.7, 0.7, 0.4, 0.1, 0.3, 0.3, 0.6, 0.9])?;
    let target = LabelMap::from_codes(1, 4, vec![0, 0, 1, 1], 2, 255)?;
    let cfg = DiceConfig::default();

    let student = soft_dice_loss(&ps, &target, &cfg)?;
    println!(
        "student loss {:.6}, per class {:?}",
        student.total, student.per_class
    );
    println!(
        "pseudo-label loss {:.6}",
        pseudo_label_loss(&ps, &pt, &target, &cfg)?
    );

    let grad = soft_dice_grad(&ps, &target, &cfg)?;
    let h = 1e-6;
    for i in 0..grad.len() {
        // the closed form is defined for any values, so no renormalization
        let mut up = ps.values().to_vec();
        let mut down = up.clone();
        up[i] += h;
        down[i] -= h;
        let fd = (raw_loss(&up, &target, &cfg) - raw_loss(&down, &target, &cfg)) / (2.0 * h);
        println!("d/dp[{i}] analytic {:+.6} numeric {:+.6}", grad[i], fd);
    }
    Ok(())
}

fn raw_loss(values: &[f64], target: &LabelMap, cfg: &DiceConfig) -> f64 {
    let n = target.len();
    let classes = values.len() / n;
    let losses: Vec<f64> = (0..classes)
        .map(|c| {
            let plane = &values[c * n..(c + 1) * n];
            let g: Vec<f64> = target
                .codes()
                .iter()
                .map(|&t| f64::from(t as usize == c))
                .collect();
            let inter: f64 = plane.iter().zip(&g).map(|(p, g)| p * g).sum();
            let mass: f64 = plane.iter().sum::<f64>() + g.iter().sum::<f64>();
            1.0 - (2.0 * inter + cfg.epsilon) / (mass + cfg.epsilon)
        })
        .collect();
    losses.iter().sum::<f64>() / classes as f64
}
