//! Soft Dice loss against hard labels, its analytic gradient, and the
//! student/teacher pseudo-label loss built on it.

use serde::{Deserialize, Serialize};

use crate::enhancement::ProbMap;
use crate::error::{Error, Result};
use crate::spreading::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiceConfig {
    /// Smoothing added to numerator and denominator.
    pub epsilon: f64,
    /// Mean over the reduced classes when true, sum otherwise.
    pub class_average: bool,
    /// Whether class 0 takes part in the reduction.
    pub include_background: bool,
}

impl Default for DiceConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            class_average: true,
            include_background: true,
        }
    }
}

impl DiceConfig {
    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::invalid("dice epsilon must be positive"));
        }
        Ok(())
    }

    fn first_class(&self) -> usize {
        usize::from(!self.include_background)
    }

    /// Weight of each reduced class in the total.
    fn class_weight(&self, num_classes: usize) -> Result<f64> {
        let reduced = num_classes - self.first_class();
        if reduced == 0 {
            return Err(Error::invalid("no classes left to reduce"));
        }
        Ok(if self.class_average {
            1.0 / reduced as f64
        } else {
            1.0
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiceLoss {
    pub total: f64,
    /// Loss for every class, including any excluded from `total`.
    pub per_class: Vec<f64>,
}

/// Per-class sums: (intersection, prediction mass, target mass).
fn class_sums(pred: &ProbMap, target: &LabelMap) -> Vec<(f64, f64, f64)> {
    let n = pred.plane_len();
    (0..pred.num_classes())
        .map(|c| {
            let plane = pred.class_plane(c);
            let mut inter = 0.0;
            let mut target_mass = 0.0;
            for (p, &code) in target.codes().iter().enumerate().take(n) {
                if code as usize == c {
                    inter += plane[p];
                    target_mass += 1.0;
                }
            }
            (inter, plane.iter().sum::<f64>(), target_mass)
        })
        .collect()
}

fn check_inputs(pred: &ProbMap, target: &LabelMap, cfg: &DiceConfig) -> Result<()> {
    cfg.validate()?;
    if pred.height() != target.height() || pred.width() != target.width() {
        return Err(Error::dims(format!(
            "prediction is {}x{} but target is {}x{}",
            pred.height(),
            pred.width(),
            target.height(),
            target.width()
        )));
    }
    if pred.num_classes() != target.num_classes() as usize {
        return Err(Error::dims(format!(
            "prediction has {} classes but target has {}",
            pred.num_classes(),
            target.num_classes()
        )));
    }
    if !target.is_fully_labeled() {
        return Err(Error::invalid("dice target contains unlabeled pixels"));
    }
    Ok(())
}

/// `loss_c = 1 - (2 * sum(p_c * g_c) + eps) / (sum(p_c) + sum(g_c) + eps)`
/// with `g` the one-hot encoding of `target`.
pub fn soft_dice_loss(pred: &ProbMap, target: &LabelMap, cfg: &DiceConfig) -> Result<DiceLoss> {
    check_inputs(pred, target, cfg)?;
    let eps = cfg.epsilon;
    let weight = cfg.class_weight(pred.num_classes())?;
    let per_class: Vec<f64> = class_sums(pred, target)
        .into_iter()
        .map(|(inter, pm, gm)| 1.0 - (2.0 * inter + eps) / (pm + gm + eps))
        .collect();
    let total = per_class[cfg.first_class()..].iter().sum::<f64>() * weight;
    Ok(DiceLoss { total, per_class })
}

/// Gradient of the total soft Dice loss with respect to every prediction
/// entry, laid out `[C, H, W]` like the prediction.
pub fn soft_dice_grad(pred: &ProbMap, target: &LabelMap, cfg: &DiceConfig) -> Result<Vec<f64>> {
    check_inputs(pred, target, cfg)?;
    let eps = cfg.epsilon;
    let weight = cfg.class_weight(pred.num_classes())?;
    let n = pred.plane_len();
    let mut grad = vec![0.0; pred.values().len()];
    for (c, (inter, pm, gm)) in class_sums(pred, target).into_iter().enumerate() {
        if c < cfg.first_class() {
            continue;
        }
        let num = 2.0 * inter + eps;
        let den = pm + gm + eps;
        // d/dp [1 - num/den] = (num - 2 g den) / den^2
        let on_target = weight * (num - 2.0 * den) / (den * den);
        let off_target = weight * num / (den * den);
        for (p, &code) in target.codes().iter().enumerate() {
            grad[c * n + p] = if code as usize == c {
                on_target
            } else {
                off_target
            };
        }
    }
    Ok(grad)
}

/// Mean of the Dice losses of student and teacher against the enhanced
/// pseudo-label.
pub fn pseudo_label_loss(
    ps: &ProbMap,
    pt: &ProbMap,
    p_enh: &LabelMap,
    cfg: &DiceConfig,
) -> Result<f64> {
    if !ps.same_shape(pt) {
        return Err(Error::dims(
            "student and teacher predictions differ in shape",
        ));
    }
    let student = soft_dice_loss(ps, p_enh, cfg)?.total;
    let teacher = soft_dice_loss(pt, p_enh, cfg)?.total;
    Ok(0.5 * (student + teacher))
}
