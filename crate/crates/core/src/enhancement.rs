//! Pseudo-label fusion and the tolerance-scheduled enhancement blend.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spreading::{LabelMap, SpreadVariant, DEFAULT_UNLABELED};

/// Tolerance on per-pixel probability sums.
pub const NORMALIZATION_TOL: f64 = 1e-5;

/// Per-class probabilities stored class-major as `[C, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    num_classes: usize,
    height: usize,
    width: usize,
    probs: Vec<f64>,
}

impl ProbMap {
    pub fn new(num_classes: usize, height: usize, width: usize, probs: Vec<f64>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::invalid("probability maps need at least two classes"));
        }
        if num_classes > u8::MAX as usize {
            return Err(Error::invalid("too many classes for u8 label codes"));
        }
        if height == 0 || width == 0 || probs.len() != num_classes * height * width {
            return Err(Error::dims(format!(
                "[{num_classes}, {height}, {width}] probability map cannot hold {} values",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("probabilities must lie in [0, 1]"));
        }
        let map = Self {
            num_classes,
            height,
            width,
            probs,
        };
        let plane = height * width;
        for p in 0..plane {
            let sum: f64 = (0..num_classes).map(|c| map.probs[c * plane + p]).sum();
            if (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::invalid(format!(
                    "pixel {p} probabilities sum to {sum}, not 1"
                )));
            }
        }
        Ok(map)
    }

    /// One-hot encoding of a fully labeled map.
    pub fn one_hot(labels: &LabelMap) -> Result<Self> {
        if !labels.is_fully_labeled() {
            return Err(Error::invalid("one-hot encoding needs a fully labeled map"));
        }
        let c = labels.num_classes() as usize;
        let plane = labels.len();
        let mut probs = vec![0.0; c * plane];
        for (p, &code) in labels.codes().iter().enumerate() {
            probs[code as usize * plane + p] = 1.0;
        }
        Self::new(c, labels.height(), labels.width(), probs)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, class: usize, pixel: usize) -> f64 {
        self.probs[class * self.plane_len() + pixel]
    }

    pub fn class_plane(&self, class: usize) -> &[f64] {
        let n = self.plane_len();
        &self.probs[class * n..(class + 1) * n]
    }

    /// Most probable class at `pixel`, smallest code on ties, with its
    /// probability.
    pub fn argmax(&self, pixel: usize) -> (u8, f64) {
        argmax_by(self.num_classes, |c| self.prob(c, pixel))
    }

    pub fn argmax_labels(&self) -> LabelMap {
        let codes = (0..self.plane_len()).map(|p| self.argmax(p).0).collect();
        LabelMap::from_codes(
            self.height,
            self.width,
            codes,
            self.num_classes as u8,
            DEFAULT_UNLABELED,
        )
        .expect("argmax codes are valid classes")
    }

    pub fn same_shape(&self, other: &ProbMap) -> bool {
        self.num_classes == other.num_classes
            && self.height == other.height
            && self.width == other.width
    }
}

fn argmax_by(num_classes: usize, prob: impl Fn(usize) -> f64) -> (u8, f64) {
    let mut best = (0u8, prob(0));
    for c in 1..num_classes {
        let p = prob(c);
        if p > best.1 {
            best = (c as u8, p);
        }
    }
    best
}

/// How student and teacher predictions are combined into a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum FusionStrategy {
    /// Argmax of the mean prediction.
    #[default]
    #[serde(rename = "average")]
    AverageArgmax,
    /// Per pixel, argmax of whichever model is more confident (student on ties).
    #[serde(rename = "confidence")]
    ConfidenceSelect,
    /// Argmax of the student prediction.
    #[serde(rename = "student")]
    StudentOnly,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [
        Self::AverageArgmax,
        Self::ConfidenceSelect,
        Self::StudentOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::AverageArgmax => "average",
            Self::ConfidenceSelect => "confidence",
            Self::StudentOnly => "student",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown fusion {s:?} (expected average|confidence|student)"
                ))
            })
    }
}

/// Fuses student and teacher predictions into a fully labeled pseudo-label.
pub fn fuse_predictions(ps: &ProbMap, pt: &ProbMap, strategy: FusionStrategy) -> Result<LabelMap> {
    if !ps.same_shape(pt) {
        return Err(Error::dims(format!(
            "student is [{}, {}, {}] but teacher is [{}, {}, {}]",
            ps.num_classes, ps.height, ps.width, pt.num_classes, pt.height, pt.width
        )));
    }
    let c = ps.num_classes;
    let codes = (0..ps.plane_len())
        .map(|p| match strategy {
            FusionStrategy::AverageArgmax => {
                argmax_by(c, |k| (ps.prob(k, p) + pt.prob(k, p)) / 2.0).0
            }
            FusionStrategy::ConfidenceSelect => {
                let (s_class, s_conf) = ps.argmax(p);
                let (t_class, t_conf) = pt.argmax(p);
                if t_conf > s_conf {
                    t_class
                } else {
                    s_class
                }
            }
            FusionStrategy::StudentOnly => ps.argmax(p).0,
        })
        .collect();
    LabelMap::from_codes(ps.height, ps.width, codes, c as u8, DEFAULT_UNLABELED)
}

/// Binary image marking pixels that carry an enhanced label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn enhancement_mask(s_enh: &LabelMap) -> BinaryMask {
    BinaryMask {
        height: s_enh.height(),
        width: s_enh.width(),
        bits: (0..s_enh.len()).map(|i| s_enh.is_labeled(i)).collect(),
    }
}

/// Tolerance schedule and operator choices.
///
/// JSON form: `{"tau":0.25,"e_max":100,"variant":"enh+bg","fusion":"average"}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhancementConfig {
    /// Fraction of training during which enhancement is applied.
    pub tau: f64,
    /// Total number of training epochs.
    pub e_max: u32,
    pub variant: SpreadVariant,
    pub fusion: FusionStrategy,
}

impl Default for EnhancementConfig {
    fn default() -> Self {
        Self {
            tau: 0.25,
            e_max: 100,
            variant: SpreadVariant::EnhBg,
            fusion: FusionStrategy::AverageArgmax,
        }
    }
}

impl EnhancementConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::invalid(format!("tau {} outside [0, 1]", self.tau)));
        }
        if self.e_max == 0 {
            return Err(Error::invalid("e_max must be at least 1"));
        }
        Ok(())
    }

    /// Whether enhancement applies at `epoch`: `epoch <= tau * e_max`, with
    /// the product kept real-valued.
    pub fn is_active(&self, epoch: u32) -> bool {
        epoch as f64 <= self.tau * self.e_max as f64
    }
}

/// Overrides the pseudo-label with enhanced scribbles where they exist, while
/// the schedule is active; returns the pseudo-label unchanged afterwards.
pub fn enhance_pseudo_labels(
    p_pl: &LabelMap,
    s_enh: &LabelMap,
    epoch: u32,
    cfg: &EnhancementConfig,
) -> Result<LabelMap> {
    cfg.validate()?;
    if !p_pl.same_shape(s_enh) {
        return Err(Error::dims(format!(
            "pseudo-label is {}x{} but enhanced scribbles are {}x{}",
            p_pl.height(),
            p_pl.width(),
            s_enh.height(),
            s_enh.width()
        )));
    }
    if p_pl.num_classes() != s_enh.num_classes() {
        return Err(Error::invalid(
            "pseudo-label and scribbles disagree on class count",
        ));
    }
    if !p_pl.is_fully_labeled() {
        return Err(Error::invalid("pseudo-label contains unlabeled pixels"));
    }
    if !cfg.is_active(epoch) {
        return Ok(p_pl.clone());
    }
    let mask = enhancement_mask(s_enh);
    let codes = p_pl
        .codes()
        .iter()
        .zip(s_enh.codes())
        .zip(mask.bits())
        .map(|((&pl, &enh), &m)| if m { enh } else { pl })
        .collect();
    Ok(p_pl.with_codes(codes))
}

#[cfg(test)]
mod tests {
    use super::*;

    const U: u8 = DEFAULT_UNLABELED;

    fn pm(c: usize, h: usize, w: usize, v: &[f64]) -> ProbMap {
        ProbMap::new(c, h, w, v.to_vec()).unwrap()
    }

    fn labels(codes: &[u8]) -> LabelMap {
        LabelMap::from_codes(1, codes.len(), codes.to_vec(), 4, U).unwrap()
    }

    #[test]
    fn prob_map_validation() {
        assert!(ProbMap::new(2, 1, 1, vec![0.6, 0.5]).is_err());
        assert!(ProbMap::new(1, 1, 1, vec![1.0]).is_err());
        assert!(ProbMap::new(2, 1, 2, vec![0.5, 0.5]).is_err());
        assert!(ProbMap::new(2, 1, 1, vec![1.2, -0.2]).is_err());
        assert!(ProbMap::new(2, 1, 1, vec![0.5 + 4e-6, 0.5]).is_ok());
    }

    #[test]
    fn identical_inputs_fuse_to_argmax() {
        let p = pm(3, 1, 2, &[0.2, 0.5, 0.7, 0.1, 0.1, 0.4]);
        for s in FusionStrategy::ALL {
            assert_eq!(fuse_predictions(&p, &p, s).unwrap(), p.argmax_labels());
        }
        assert_eq!(p.argmax_labels().codes(), &[1, 0]);
    }

    #[test]
    fn fusion_single_pixel() {
        let ps = pm(2, 1, 1, &[0.6, 0.4]);
        let pt = pm(2, 1, 1, &[0.2, 0.8]);
        let avg = fuse_predictions(&ps, &pt, FusionStrategy::AverageArgmax).unwrap();
        assert_eq!(avg.codes(), &[1]);
        let conf = fuse_predictions(&ps, &pt, FusionStrategy::ConfidenceSelect).unwrap();
        assert_eq!(conf.codes(), &[1]);
        let student = fuse_predictions(&ps, &pt, FusionStrategy::StudentOnly).unwrap();
        assert_eq!(student.codes(), &[0]);
    }

    #[test]
    fn fusion_ties_pick_smallest_code() {
        let p = pm(2, 1, 1, &[0.5, 0.5]);
        for s in FusionStrategy::ALL {
            assert_eq!(fuse_predictions(&p, &p, s).unwrap().codes(), &[0]);
        }
    }

    #[test]
    fn fusion_shape_mismatch() {
        let a = pm(2, 1, 1, &[0.5, 0.5]);
        let b = pm(2, 1, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert!(fuse_predictions(&a, &b, FusionStrategy::AverageArgmax).is_err());
    }

    #[test]
    fn mask_examples() {
        assert_eq!(enhancement_mask(&labels(&[U, U])).count_ones(), 0);
        assert_eq!(enhancement_mask(&labels(&[0, 3])).count_ones(), 2);
        let m = LabelMap::from_codes(2, 2, vec![U, U, 2, U], 4, U).unwrap();
        assert_eq!(enhancement_mask(&m).bits(), &[false, false, true, false]);
    }

    #[test]
    fn schedule_cutoff() {
        let cfg = EnhancementConfig {
            tau: 0.25,
            e_max: 100,
            ..Default::default()
        };
        let ppl = labels(&[3, 3, 3]);
        let s = labels(&[0, U, 1]);
        assert_eq!(enhance_pseudo_labels(&ppl, &s, 30, &cfg).unwrap(), ppl);
        assert_eq!(
            enhance_pseudo_labels(&ppl, &s, 25, &cfg).unwrap().codes(),
            &[0, 3, 1]
        );
        assert_eq!(enhance_pseudo_labels(&ppl, &s, 26, &cfg).unwrap(), ppl);
    }

    #[test]
    fn masked_blend_hand_case() {
        // LV = 3, RV = 1, BG = 0
        let cfg = EnhancementConfig::default();
        let out = enhance_pseudo_labels(&labels(&[3, 3, 3]), &labels(&[0, U, 1]), 0, &cfg).unwrap();
        assert_eq!(out.codes(), &[0, 3, 1]);
    }

    #[test]
    fn zero_mask_is_identity() {
        let cfg = EnhancementConfig::default();
        let ppl = labels(&[1, 2, 0]);
        for e in [0, 10, 25, 99] {
            assert_eq!(
                enhance_pseudo_labels(&ppl, &labels(&[U, U, U]), e, &cfg).unwrap(),
                ppl
            );
        }
    }

    #[test]
    fn enhance_errors() {
        let cfg = EnhancementConfig::default();
        assert!(enhance_pseudo_labels(&labels(&[1, U]), &labels(&[U, U]), 0, &cfg).is_err());
        assert!(enhance_pseudo_labels(&labels(&[1, 1]), &labels(&[U, U, U]), 0, &cfg).is_err());
        let bad = EnhancementConfig { tau: 1.5, ..cfg };
        assert!(enhance_pseudo_labels(&labels(&[1]), &labels(&[U]), 0, &bad).is_err());
    }

    #[test]
    fn config_json() {
        let text = r#"{"tau":0.25,"e_max":100,"variant":"enh+bg","fusion":"average"}"#;
        let cfg: EnhancementConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg, EnhancementConfig::default());
        assert_eq!(serde_json::to_string(&cfg).unwrap(), text);
    }

    #[test]
    fn tau_product_is_not_rounded() {
        let cfg = EnhancementConfig {
            tau: 0.3,
            e_max: 7,
            ..Default::default()
        };
        // 0.3 * 7 = 2.1
        assert!(cfg.is_active(2));
        assert!(!cfg.is_active(3));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn normalized(raw: &[f64], c: usize) -> Vec<f64> {
            let n = raw.len() / c;
            let mut out = raw.to_vec();
            for p in 0..n {
                let s: f64 = (0..c).map(|k| raw[k * n + p]).sum();
                for k in 0..c {
                    out[k * n + p] = raw[k * n + p] / s;
                }
            }
            out
        }

        proptest! {
            #[test]
            fn average_argmax_invariant_to_common_scaling(
                raw_s in prop::collection::vec(0.01f64..1.0, 12),
                raw_t in prop::collection::vec(0.01f64..1.0, 12),
                scale in prop::collection::vec(0.1f64..10.0, 4),
            ) {
                let ps = ProbMap::new(3, 2, 2, normalized(&raw_s, 3)).unwrap();
                let pt = ProbMap::new(3, 2, 2, normalized(&raw_t, 3)).unwrap();
                // common per-pixel factor on both maps, renormalized identically
                let rescale = |m: &ProbMap| {
                    let v: Vec<f64> = m.values().iter().enumerate()
                        .map(|(i, &x)| x * scale[i % 4]).collect();
                    let n = normalized(&v, 3);
                    ProbMap::new(3, 2, 2, n).unwrap()
                };
                let a = fuse_predictions(&ps, &pt, FusionStrategy::AverageArgmax).unwrap();
                let b = fuse_predictions(&rescale(&ps), &rescale(&pt), FusionStrategy::AverageArgmax).unwrap();
                // identical up to float ties, which random draws avoid
                prop_assert_eq!(a, b);
            }

            #[test]
            fn blend_partitions_pixels(
                ppl in prop::collection::vec(0u8..4, 9),
                enh in prop::collection::vec(prop_oneof![0u8..4, Just(U)], 9),
                epoch in 0u32..60,
                tau in prop_oneof![Just(0.25), Just(0.5), Just(0.75), Just(1.0)],
            ) {
                let ppl = LabelMap::from_codes(3, 3, ppl, 4, U).unwrap();
                let s = LabelMap::from_codes(3, 3, enh, 4, U).unwrap();
                let cfg = EnhancementConfig { tau, e_max: 60, ..Default::default() };
                let out = enhance_pseudo_labels(&ppl, &s, epoch, &cfg).unwrap();
                prop_assert!(out.is_fully_labeled());
                for i in 0..9 {
                    let o = out.codes()[i];
                    prop_assert!(o == ppl.codes()[i] || o == s.codes()[i]);
                    if cfg.is_active(epoch) && s.is_labeled(i) {
                        prop_assert_eq!(o, s.codes()[i]);
                    }
                }
                if !cfg.is_active(epoch) {
                    prop_assert_eq!(out, ppl);
                }
            }
        }
    }
}
