//! Scribble spreading through a partition hierarchy, background expansion
//! and full nearest-label propagation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::neighbors4;
use crate::hierarchy::{build_hierarchy, HierarchyConfig, PartitionHierarchy, Slice};

/// Ignore label used by scribble datasets.
pub const DEFAULT_UNLABELED: u8 = 255;
pub const BACKGROUND: u8 = 0;

/// Per-pixel class codes with an explicit unlabeled sentinel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    codes: Vec<u8>,
    num_classes: u8,
    unlabeled: u8,
}

impl LabelMap {
    pub fn from_codes(
        height: usize,
        width: usize,
        codes: Vec<u8>,
        num_classes: u8,
        unlabeled: u8,
    ) -> Result<Self> {
        if height == 0 || width == 0 || height * width != codes.len() {
            return Err(Error::dims(format!(
                "{height}x{width} label map cannot hold {} codes",
                codes.len()
            )));
        }
        if num_classes == 0 || unlabeled < num_classes {
            return Err(Error::invalid(format!(
                "unlabeled code {unlabeled} collides with {num_classes} classes"
            )));
        }
        if let Some(&bad) = codes.iter().find(|&&c| c >= num_classes && c != unlabeled) {
            return Err(Error::UnknownCode(bad as u32));
        }
        Ok(Self {
            height,
            width,
            codes,
            num_classes,
            unlabeled,
        })
    }

    pub fn unlabeled(height: usize, width: usize, num_classes: u8, unlabeled: u8) -> Result<Self> {
        Self::from_codes(
            height,
            width,
            vec![unlabeled; height * width],
            num_classes,
            unlabeled,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn num_classes(&self) -> u8 {
        self.num_classes
    }

    pub fn unlabeled_code(&self) -> u8 {
        self.unlabeled
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.codes[row * self.width + col]
    }

    pub fn is_labeled(&self, idx: usize) -> bool {
        self.codes[idx] != self.unlabeled
    }

    pub fn labeled_count(&self) -> usize {
        self.codes.iter().filter(|&&c| c != self.unlabeled).count()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.codes.iter().all(|&c| c != self.unlabeled)
    }

    /// Fraction of pixels carrying a class.
    pub fn coverage(&self) -> f64 {
        self.labeled_count() as f64 / self.len() as f64
    }

    pub fn same_shape(&self, other: &LabelMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn with_codes(&self, codes: Vec<u8>) -> Self {
        debug_assert_eq!(codes.len(), self.codes.len());
        Self {
            codes,
            ..self.clone()
        }
    }
}

/// How far enhanced scribbles are pushed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpreadVariant {
    /// Hierarchical spreading only.
    #[serde(rename = "enh")]
    Enh,
    /// Spreading followed by background expansion.
    #[serde(rename = "enh+bg")]
    EnhBg,
    /// Spreading, background expansion, then nearest-label propagation.
    #[serde(rename = "enh+bg+prop")]
    EnhBgProp,
}

impl SpreadVariant {
    pub const ALL: [SpreadVariant; 3] = [Self::Enh, Self::EnhBg, Self::EnhBgProp];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Enh => "enh",
            Self::EnhBg => "enh+bg",
            Self::EnhBgProp => "enh+bg+prop",
        }
    }
}

impl fmt::Display for SpreadVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpreadVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown variant {s:?} (expected enh|enh+bg|enh+bg+prop)"
                ))
            })
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Candidates {
    Empty,
    Unique(u8),
    Conflict,
}

impl Candidates {
    fn add(self, class: u8) -> Self {
        match self {
            Candidates::Empty => Candidates::Unique(class),
            Candidates::Unique(c) if c == class => self,
            _ => Candidates::Conflict,
        }
    }
}

/// Spreads scribbles coarse-to-fine through the hierarchy.
///
/// In each layer a region whose labeled pixels (original scribbles plus
/// labels committed by coarser layers) share exactly one class gets all of
/// its unlabeled pixels set to that class. Regions with no candidate or
/// with conflicting candidates are left alone. Labeled pixels never change.
pub fn spread_scribbles(hier: &PartitionHierarchy, scribbles: &LabelMap) -> Result<LabelMap> {
    if hier.height() != scribbles.height || hier.width() != scribbles.width {
        return Err(Error::dims(format!(
            "hierarchy is {}x{} but scribbles are {}x{}",
            hier.height(),
            hier.width(),
            scribbles.height,
            scribbles.width
        )));
    }
    let mut codes = scribbles.codes.clone();
    let unlabeled = scribbles.unlabeled;
    for layer in hier.layers().iter().rev() {
        let mut cands = vec![Candidates::Empty; layer.region_count()];
        for (&region, &code) in layer.ids().iter().zip(&codes) {
            if code != unlabeled {
                let slot = &mut cands[region as usize];
                *slot = slot.add(code);
            }
        }
        for (&region, code) in layer.ids().iter().zip(codes.iter_mut()) {
            if *code == unlabeled {
                if let Candidates::Unique(class) = cands[region as usize] {
                    *code = class;
                }
            }
        }
    }
    Ok(scribbles.with_codes(codes))
}

/// Relabels as background every 4-connected unlabeled component that has no
/// foreground neighbor. The image border counts as non-foreground.
pub fn expand_background(spread: &LabelMap) -> LabelMap {
    let (h, w) = (spread.height, spread.width);
    let unlabeled = spread.unlabeled;
    let is_fg = |c: u8| c != unlabeled && c != BACKGROUND;
    let mut codes = spread.codes.clone();
    let mut seen = vec![false; codes.len()];
    let mut component = Vec::new();
    let mut stack = Vec::new();
    for start in 0..codes.len() {
        if seen[start] || spread.codes[start] != unlabeled {
            continue;
        }
        component.clear();
        let mut touches_fg = false;
        seen[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            component.push(p);
            for q in neighbors4(p, h, w) {
                let c = spread.codes[q];
                if c == unlabeled {
                    if !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                } else if is_fg(c) {
                    touches_fg = true;
                }
            }
        }
        if !touches_fg {
            for &p in &component {
                codes[p] = BACKGROUND;
            }
        }
    }
    spread.with_codes(codes)
}

/// Assigns every unlabeled pixel the class of its nearest labeled pixel
/// (4-connected BFS distance). Equidistant candidates resolve to the
/// smallest class code.
pub fn full_propagation(partial: &LabelMap) -> Result<LabelMap> {
    let (h, w) = (partial.height, partial.width);
    let unlabeled = partial.unlabeled;
    let mut codes = partial.codes.clone();
    let mut frontier: Vec<usize> = (0..codes.len())
        .filter(|&i| codes[i] != unlabeled)
        .collect();
    if frontier.is_empty() {
        return Err(Error::invalid("nothing to propagate: no labeled pixels"));
    }
    // Layer-synchronous BFS so ties within a layer see every candidate.
    let mut next = Vec::new();
    while !frontier.is_empty() {
        next.clear();
        let mut tentative: Vec<(usize, u8)> = Vec::new();
        for &p in &frontier {
            for q in neighbors4(p, h, w) {
                if codes[q] == unlabeled {
                    tentative.push((q, codes[p]));
                }
            }
        }
        tentative.sort_unstable();
        for (q, class) in tentative {
            // sorted by (pixel, class): the first entry per pixel is the smallest class
            if codes[q] == unlabeled {
                codes[q] = class;
                next.push(q);
            }
        }
        std::mem::swap(&mut frontier, &mut next);
    }
    Ok(partial.with_codes(codes))
}

/// Every stage of scribble enhancement for one slice.
#[derive(Debug, Clone, PartialEq)]
pub struct EnhancedScribbles {
    /// Hierarchical spreading result.
    pub spread: LabelMap,
    /// Final labels for the requested variant.
    pub enhanced: LabelMap,
}

/// Builds the slice hierarchy and applies the stages selected by `variant`.
pub fn enhance_scribbles_staged(
    slice: &Slice,
    scribbles: &LabelMap,
    variant: SpreadVariant,
    config: &HierarchyConfig,
) -> Result<EnhancedScribbles> {
    if slice.height() != scribbles.height || slice.width() != scribbles.width {
        return Err(Error::dims(format!(
            "slice is {}x{} but scribbles are {}x{}",
            slice.height(),
            slice.width(),
            scribbles.height,
            scribbles.width
        )));
    }
    let hier = build_hierarchy(slice, config)?;
    let spread = spread_scribbles(&hier, scribbles)?;
    let enhanced = match variant {
        SpreadVariant::Enh => spread.clone(),
        SpreadVariant::EnhBg => expand_background(&spread),
        SpreadVariant::EnhBgProp => full_propagation(&expand_background(&spread))?,
    };
    Ok(EnhancedScribbles { spread, enhanced })
}

pub fn enhance_scribbles(
    slice: &Slice,
    scribbles: &LabelMap,
    variant: SpreadVariant,
    config: &HierarchyConfig,
) -> Result<LabelMap> {
    enhance_scribbles_staged(slice, scribbles, variant, config).map(|s| s.enhanced)
}
