//! Per-slice region hierarchies: morphological gradient relief, priority-flood
//! watershed and iterated waterfall merging.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{neighbors4, UnionFind};

/// A 2D image slice with values in `[0, 1]` and in-plane spacing `(x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    height: usize,
    width: usize,
    values: Vec<f64>,
    spacing_mm: [f64; 2],
}

impl Slice {
    /// Wraps already-normalized values. Use [`preprocess`] for raw intensities.
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        spacing_mm: [f64; 2],
    ) -> Result<Self> {
        check_plane(height, width, values.len())?;
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("slice values must lie in [0, 1]"));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::invalid("slice spacing must be positive"));
        }
        Ok(Self {
            height,
            width,
            values,
            spacing_mm,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn spacing_mm(&self) -> [f64; 2] {
        self.spacing_mm
    }
}

fn check_plane(height: usize, width: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::invalid("slice must be non-empty"));
    }
    if height * width != len {
        return Err(Error::dims(format!(
            "{height}x{width} slice needs {} values, got {len}",
            height * width
        )));
    }
    Ok(())
}

/// Min-max rescales raw intensities to `[0, 1]`. Constant input maps to zeros.
pub fn preprocess(height: usize, width: usize, raw: &[f64], spacing_mm: [f64; 2]) -> Result<Slice> {
    check_plane(height, width, raw.len())?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value in raw slice"));
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let values = if range > 0.0 {
        raw.iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; raw.len()]
    };
    Slice::new(height, width, values, spacing_mm)
}

/// A non-negative height field that drives the watershed.
#[derive(Debug, Clone, PartialEq)]
pub struct Relief {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Relief {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        check_plane(height, width, values.len())?;
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invalid("relief must be finite and non-negative"));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Morphological gradient: max minus min over the border-clamped 3x3 window.
pub fn gradient_magnitude(slice: &Slice) -> Relief {
    let (h, w) = (slice.height, slice.width);
    let v = &slice.values;
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        let rows = r.saturating_sub(1)..=(r + 1).min(h - 1);
        for c in 0..w {
            let cols = c.saturating_sub(1)..=(c + 1).min(w - 1);
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for rr in rows.clone() {
                for &x in &v[rr * w + *cols.start()..=rr * w + *cols.end()] {
                    lo = lo.min(x);
                    hi = hi.max(x);
                }
            }
            out[r * w + c] = hi - lo;
        }
    }
    Relief {
        height: h,
        width: w,
        values: out,
    }
}

/// A partition of a slice into 4-connected regions with ids `0..region_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionLabeling {
    height: usize,
    width: usize,
    ids: Vec<u32>,
    region_count: usize,
}

impl RegionLabeling {
    /// Validates that ids are dense (every id below the maximum is used).
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        check_plane(height, width, ids.len())?;
        let count = ids.iter().max().map_or(0, |&m| m as usize + 1);
        let mut used = vec![false; count];
        for &id in &ids {
            used[id as usize] = true;
        }
        if let Some(gap) = used.iter().position(|u| !u) {
            return Err(Error::invalid(format!("region id {gap} is unused")));
        }
        Ok(Self {
            height,
            width,
            ids,
            region_count: count,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    /// True when every region is a single 4-connected component.
    pub fn regions_connected(&self) -> bool {
        let mut seen = vec![false; self.ids.len()];
        let mut seen_region = vec![false; self.region_count];
        let mut stack = Vec::new();
        for start in 0..self.ids.len() {
            if seen[start] {
                continue;
            }
            let id = self.ids[start];
            if std::mem::replace(&mut seen_region[id as usize], true) {
                return false;
            }
            seen[start] = true;
            stack.push(start);
            while let Some(p) = stack.pop() {
                for q in neighbors4(p, self.height, self.width) {
                    if !seen[q] && self.ids[q] == id {
                        seen[q] = true;
                        stack.push(q);
                    }
                }
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy)]
struct FloodEntry {
    value: f64,
    idx: usize,
}

impl PartialEq for FloodEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for FloodEntry {}

impl PartialOrd for FloodEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FloodEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value
            .total_cmp(&other.value)
            .then(self.idx.cmp(&other.idx))
    }
}

const UNASSIGNED: u32 = u32::MAX;

/// Priority-flood watershed without watershed lines.
///
/// Every 4-connected plateau with no lower neighbor seeds one region; seeds
/// are numbered in row-major order of their first pixel. Pixels are then
/// flooded in nondecreasing relief order with ties broken by the smaller
/// row-major index, each taking the label of the pixel that reached it.
pub fn watershed(relief: &Relief) -> RegionLabeling {
    let (h, w) = (relief.height, relief.width);
    let v = &relief.values;
    let n = h * w;
    let mut labels = vec![UNASSIGNED; n];
    let mut heap = BinaryHeap::new();

    // Regional minima plateaus.
    let mut visited = vec![false; n];
    let mut plateau = Vec::new();
    let mut stack = Vec::new();
    let mut next_label = 0u32;
    for start in 0..n {
        if visited[start] {
            continue;
        }
        plateau.clear();
        let level = v[start];
        let mut is_minimum = true;
        visited[start] = true;
        stack.push(start);
        while let Some(p) = stack.pop() {
            plateau.push(p);
            for q in neighbors4(p, h, w) {
                if v[q] == level {
                    if !visited[q] {
                        visited[q] = true;
                        stack.push(q);
                    }
                } else if v[q] < level {
                    is_minimum = false;
                }
            }
        }
        if is_minimum {
            for &p in &plateau {
                labels[p] = next_label;
                heap.push(Reverse(FloodEntry {
                    value: v[p],
                    idx: p,
                }));
            }
            next_label += 1;
        }
    }

    while let Some(Reverse(FloodEntry { idx, .. })) = heap.pop() {
        let label = labels[idx];
        for q in neighbors4(idx, h, w) {
            if labels[q] == UNASSIGNED {
                labels[q] = label;
                heap.push(Reverse(FloodEntry {
                    value: v[q],
                    idx: q,
                }));
            }
        }
    }

    RegionLabeling {
        height: h,
        width: w,
        ids: labels,
        region_count: next_label as usize,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierarchyConfig {
    /// Total number of layers including the finest watershed layer.
    pub max_layers: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self { max_layers: 4 }
    }
}

/// Nested region labelings, finest first.
///
/// `parents[k][r]` is the region of layer `k + 1` that contains region `r`
/// of layer `k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PartitionHierarchy {
    #[serde(skip)]
    layers: Vec<RegionLabeling>,
    parents: Vec<Vec<u32>>,
}

impl PartitionHierarchy {
    pub fn layers(&self) -> &[RegionLabeling] {
        &self.layers
    }

    pub fn parents(&self) -> &[Vec<u32>] {
        &self.parents
    }

    pub fn finest(&self) -> &RegionLabeling {
        &self.layers[0]
    }

    pub fn coarsest(&self) -> &RegionLabeling {
        self.layers
            .last()
            .expect("hierarchy has at least one layer")
    }

    pub fn height(&self) -> usize {
        self.layers[0].height
    }

    pub fn width(&self) -> usize {
        self.layers[0].width
    }

    pub fn region_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.region_count).collect()
    }

    /// Builds a hierarchy from explicit layers, deriving and checking the
    /// parent maps.
    pub fn from_layers(layers: Vec<RegionLabeling>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::invalid("hierarchy needs at least one layer"))?;
        let (h, w) = (first.height, first.width);
        let mut parents = Vec::with_capacity(layers.len().saturating_sub(1));
        for pair in layers.windows(2) {
            let (fine, coarse) = (&pair[0], &pair[1]);
            if (coarse.height, coarse.width) != (h, w) || (fine.height, fine.width) != (h, w) {
                return Err(Error::dims("hierarchy layers differ in size"));
            }
            let mut parent = vec![UNASSIGNED; fine.region_count];
            for (&child, &p) in fine.ids.iter().zip(&coarse.ids) {
                let slot = &mut parent[child as usize];
                if *slot == UNASSIGNED {
                    *slot = p;
                } else if *slot != p {
                    return Err(Error::invalid(format!(
                        "region {child} straddles two coarser regions"
                    )));
                }
            }
            parents.push(parent);
        }
        let hier = Self { layers, parents };
        hier.check_nesting()?;
        Ok(hier)
    }

    /// Verifies that each layer is a coarsening of the previous one under the
    /// stored parent maps.
    pub fn check_nesting(&self) -> Result<()> {
        if self.parents.len() + 1 != self.layers.len() {
            return Err(Error::invalid("parent map count does not match layers"));
        }
        for (k, (pair, parent)) in self.layers.windows(2).zip(&self.parents).enumerate() {
            let (fine, coarse) = (&pair[0], &pair[1]);
            if coarse.region_count > fine.region_count {
                return Err(Error::invalid(format!(
                    "layer {} has more regions than layer {k}",
                    k + 1
                )));
            }
            if parent.len() != fine.region_count {
                return Err(Error::invalid(format!("parent map {k} has wrong length")));
            }
            for (&child, &p) in fine.ids.iter().zip(&coarse.ids) {
                if parent[child as usize] != p {
                    return Err(Error::invalid(format!(
                        "layer {} region {p} is not a union of layer {k} regions",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Region adjacency graph with pass-value saliencies.
///
/// The saliency of an edge is the lowest crossing between the two regions,
/// where crossing between adjacent pixels `p`, `q` costs `max(relief(p),
/// relief(q))`.
fn region_adjacency(relief: &Relief, labeling: &RegionLabeling) -> BTreeMap<(u32, u32), f64> {
    let (h, w) = (relief.height, relief.width);
    let mut edges = BTreeMap::new();
    for p in 0..h * w {
        let a = labeling.ids[p];
        // right and down neighbors visit each pixel pair once
        let right = (p % w + 1 < w).then_some(p + 1);
        let down = (p / w + 1 < h).then_some(p + w);
        for q in [right, down].into_iter().flatten() {
            let b = labeling.ids[q];
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            let pass = relief.values[p].max(relief.values[q]);
            edges
                .entry(key)
                .and_modify(|s: &mut f64| *s = s.min(pass))
                .or_insert(pass);
        }
    }
    edges
}

/// One waterfall step: an edge is merged when no edge incident to either of
/// its endpoints has a strictly lower saliency, so every region drains
/// through its lowest passes first. Returns the parent map and the new
/// region count.
fn waterfall_step(region_count: usize, edges: &BTreeMap<(u32, u32), f64>) -> (Vec<u32>, usize) {
    let mut lowest = vec![f64::INFINITY; region_count];
    for (&(a, b), &s) in edges {
        lowest[a as usize] = lowest[a as usize].min(s);
        lowest[b as usize] = lowest[b as usize].min(s);
    }
    let mut uf = UnionFind::new(region_count);
    for (&(a, b), &s) in edges {
        if s <= lowest[a as usize] && s <= lowest[b as usize] {
            uf.union(a as usize, b as usize);
        }
    }

    // New ids follow the smallest child id, so they stay in first-pixel order.
    let mut new_id = vec![UNASSIGNED; region_count];
    let mut parent = Vec::with_capacity(region_count);
    let mut count = 0u32;
    for r in 0..region_count {
        let root = uf.find(r);
        if new_id[root] == UNASSIGNED {
            new_id[root] = count;
            count += 1;
        }
        parent.push(new_id[root]);
    }
    (parent, count as usize)
}

/// Iterated waterfall merging on top of a watershed partition.
///
/// Each step rebuilds the region adjacency graph of the current layer and
/// merges every edge that is a local minimum among the edges incident to
/// either endpoint (ties merge). Stops when a single region remains or
/// `max_layers` layers (including `finest`) exist.
pub fn waterfall_hierarchy(
    relief: &Relief,
    finest: &RegionLabeling,
    max_layers: usize,
) -> Result<PartitionHierarchy> {
    if (finest.height, finest.width) != (relief.height, relief.width) {
        return Err(Error::dims(format!(
            "labeling is {}x{} but relief is {}x{}",
            finest.height, finest.width, relief.height, relief.width
        )));
    }
    if max_layers == 0 {
        return Err(Error::invalid("max_layers must be positive"));
    }
    let mut layers = vec![finest.clone()];
    let mut parents = Vec::new();
    while layers.len() < max_layers {
        let current = layers.last().expect("non-empty");
        if current.region_count <= 1 {
            break;
        }
        let edges = region_adjacency(relief, current);
        let (parent, count) = waterfall_step(current.region_count, &edges);
        if count == current.region_count {
            break;
        }
        let ids = current.ids.iter().map(|&id| parent[id as usize]).collect();
        let next = RegionLabeling {
            height: current.height,
            width: current.width,
            ids,
            region_count: count,
        };
        log::debug!(
            "waterfall layer {}: {} -> {} regions",
            layers.len(),
            current.region_count,
            count
        );
        parents.push(parent);
        layers.push(next);
    }
    Ok(PartitionHierarchy { layers, parents })
}

/// Gradient relief, watershed and waterfall in one call.
pub fn build_hierarchy(slice: &Slice, config: &HierarchyConfig) -> Result<PartitionHierarchy> {
    let relief = gradient_magnitude(slice);
    let finest = watershed(&relief);
    waterfall_hierarchy(&relief, &finest, config.max_layers)
}
