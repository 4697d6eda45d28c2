//! Volumetric overlap and surface-distance metrics in millimetres.
//!
//! Surface distances are measured between surface voxel centers. A surface
//! voxel is a foreground voxel with at least one 6-connected neighbor that is
//! background or outside the volume. Nearest-surface lookups go through an
//! exact anisotropic squared Euclidean distance transform.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::VolumeMeta;
use crate::spreading::{LabelMap, BACKGROUND};

/// Boolean volume with row-major `dims = [n0, n1, n2]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryVolume {
    dims: [usize; 3],
    voxels: Vec<bool>,
}

impl BinaryVolume {
    pub fn new(dims: [usize; 3], voxels: Vec<bool>) -> Result<Self> {
        if dims.iter().product::<usize>() != voxels.len() || voxels.is_empty() {
            return Err(Error::dims(format!(
                "{dims:?} volume cannot hold {} voxels",
                voxels.len()
            )));
        }
        Ok(Self { dims, voxels })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxels(&self) -> &[bool] {
        &self.voxels
    }

    pub fn count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    fn coords(&self, idx: usize) -> [usize; 3] {
        let [_, n1, n2] = self.dims;
        [idx / (n1 * n2), (idx / n2) % n1, idx % n2]
    }
}

/// Indices of foreground voxels touching background or the volume edge
/// through a face.
pub fn surface_voxels(mask: &BinaryVolume) -> Vec<usize> {
    let [n0, n1, n2] = mask.dims;
    let strides = [n1 * n2, n2, 1];
    (0..mask.voxels.len())
        .filter(|&i| {
            if !mask.voxels[i] {
                return false;
            }
            let c = mask.coords(i);
            (0..3).any(|axis| {
                let n = [n0, n1, n2][axis];
                c[axis] == 0
                    || c[axis] + 1 == n
                    || !mask.voxels[i - strides[axis]]
                    || !mask.voxels[i + strides[axis]]
            })
        })
        .collect()
}

/// One pass of the lower-envelope distance transform along a line:
/// `out[q] = min_p (spacing * (q - p))^2 + f[p]`.
fn edt_1d(f: &[f64], spacing: f64, out: &mut [f64], sites: &mut Vec<usize>, bounds: &mut Vec<f64>) {
    let s2 = spacing * spacing;
    sites.clear();
    bounds.clear();
    for (q, &fq) in f.iter().enumerate() {
        if fq.is_infinite() {
            continue;
        }
        // intersection of parabolas rooted at p and q
        let meet = |p: usize| {
            ((fq + s2 * (q * q) as f64) - (f[p] + s2 * (p * p) as f64))
                / (2.0 * s2 * (q - p) as f64)
        };
        while let Some(&p) = sites.last() {
            let z = meet(p);
            if bounds.last().is_some_and(|&b| z <= b) {
                sites.pop();
                bounds.pop();
            } else {
                bounds.push(z);
                break;
            }
        }
        if sites.is_empty() {
            bounds.clear();
        }
        sites.push(q);
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    // bounds[k] separates sites[k] and sites[k + 1]
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k < bounds.len() && bounds[k] < q as f64 {
            k += 1;
        }
        let p = sites[k];
        let d = q as f64 - p as f64;
        *o = s2 * (d * d) + f[p];
    }
}

/// Squared distance (mm^2) from every voxel to the nearest site.
fn squared_distance_transform(dims: [usize; 3], sites: &[usize], spacing: [f64; 3]) -> Vec<f64> {
    let total = dims.iter().product::<usize>();
    let mut grid = vec![f64::INFINITY; total];
    for &s in sites {
        grid[s] = 0.0;
    }
    let strides = [dims[1] * dims[2], dims[2], 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let (mut site_buf, mut bound_buf) = (Vec::new(), Vec::new());
    for axis in (0..3).rev() {
        let n = dims[axis];
        let stride = strides[axis];
        line.resize(n, 0.0);
        out.resize(n, 0.0);
        for start in 0..total {
            // visit each line once, from its first voxel
            if !(start / stride).is_multiple_of(n) {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = grid[start + k * stride];
            }
            edt_1d(
                &line,
                spacing[axis],
                &mut out,
                &mut site_buf,
                &mut bound_buf,
            );
            for (k, &o) in out.iter().enumerate() {
                grid[start + k * stride] = o;
            }
        }
    }
    grid
}

/// Distances (mm) from each surface voxel of `from` to the nearest surface
/// voxel of `to`.
pub fn directed_surface_distances(
    from: &BinaryVolume,
    to: &BinaryVolume,
    spacing: [f64; 3],
) -> Result<Vec<f64>> {
    if from.dims != to.dims {
        return Err(Error::dims(format!("{:?} vs {:?}", from.dims, to.dims)));
    }
    let target = surface_voxels(to);
    if target.is_empty() {
        return Ok(Vec::new());
    }
    let dt = squared_distance_transform(to.dims, &target, spacing);
    Ok(surface_voxels(from)
        .into_iter()
        .map(|i| dt[i].sqrt())
        .collect())
}

fn check_pair(pred: &BinaryVolume, gt: &BinaryVolume, spacing: [f64; 3]) -> Result<()> {
    if pred.dims != gt.dims {
        return Err(Error::dims(format!("{:?} vs {:?}", pred.dims, gt.dims)));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::invalid("spacing must be positive"));
    }
    Ok(())
}

/// 1-based rank `ceil(0.95 n)` of the nearest-rank 95th percentile.
fn nearest_rank_95(n: usize) -> usize {
    (95 * n).div_ceil(100)
}

fn percentile_95(mut d: Vec<f64>) -> f64 {
    d.sort_by(f64::total_cmp);
    d[nearest_rank_95(d.len()) - 1]
}

/// Symmetric 95th-percentile Hausdorff distance, or `None` when either mask
/// is empty.
pub fn hd95(pred: &BinaryVolume, gt: &BinaryVolume, spacing: [f64; 3]) -> Result<Option<f64>> {
    check_pair(pred, gt, spacing)?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(None);
    }
    let a = percentile_95(directed_surface_distances(pred, gt, spacing)?);
    let b = percentile_95(directed_surface_distances(gt, pred, spacing)?);
    Ok(Some(a.max(b)))
}

/// Mean of the pooled directed surface distances in both directions, or
/// `None` when either mask is empty.
pub fn asd(pred: &BinaryVolume, gt: &BinaryVolume, spacing: [f64; 3]) -> Result<Option<f64>> {
    check_pair(pred, gt, spacing)?;
    if pred.is_empty() || gt.is_empty() {
        return Ok(None);
    }
    let a = directed_surface_distances(pred, gt, spacing)?;
    let b = directed_surface_distances(gt, pred, spacing)?;
    let sum: f64 = a.iter().sum::<f64>() + b.iter().sum::<f64>();
    Ok(Some(sum / (a.len() + b.len()) as f64))
}

/// Dice overlap of two binary volumes; 1.0 when both are empty.
pub fn dice(pred: &BinaryVolume, gt: &BinaryVolume) -> Result<f64> {
    if pred.dims != gt.dims {
        return Err(Error::dims(format!("{:?} vs {:?}", pred.dims, gt.dims)));
    }
    let inter = pred
        .voxels
        .iter()
        .zip(&gt.voxels)
        .filter(|(a, b)| **a && **b)
        .count();
    let total = pred.count() + gt.count();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Stacked label volume stored `[depth, height, width]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeLabelMap {
    dims: [usize; 3],
    codes: Vec<u8>,
    meta: VolumeMeta,
}

impl VolumeLabelMap {
    pub fn new(dims: [usize; 3], codes: Vec<u8>, meta: VolumeMeta) -> Result<Self> {
        meta.validate()?;
        if dims.iter().product::<usize>() != codes.len() || codes.is_empty() {
            return Err(Error::dims(format!(
                "{dims:?} volume cannot hold {} codes",
                codes.len()
            )));
        }
        let n = meta.num_classes();
        if let Some(&bad) = codes.iter().find(|&&c| c >= n && c != meta.unlabeled_code) {
            return Err(Error::UnknownCode(bad as u32));
        }
        Ok(Self { dims, codes, meta })
    }

    /// Stacks 2D slices along a new leading axis.
    pub fn from_slices(slices: &[LabelMap], meta: VolumeMeta) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::invalid("a volume needs at least one slice"))?;
        if slices.iter().any(|s| !s.same_shape(first)) {
            return Err(Error::dims("slices differ in size"));
        }
        let codes = slices
            .iter()
            .flat_map(|s| s.codes().iter().copied())
            .collect();
        Self::new([slices.len(), first.height(), first.width()], codes, meta)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn codes(&self) -> &[u8] {
        &self.codes
    }

    pub fn meta(&self) -> &VolumeMeta {
        &self.meta
    }

    pub fn class_mask(&self, class: u8) -> BinaryVolume {
        BinaryVolume {
            dims: self.dims,
            voxels: self.codes.iter().map(|&c| c == class).collect(),
        }
    }
}

fn check_volumes(pred: &VolumeLabelMap, gt: &VolumeLabelMap) -> Result<()> {
    if pred.dims != gt.dims {
        return Err(Error::dims(format!("{:?} vs {:?}", pred.dims, gt.dims)));
    }
    if pred.meta.num_classes() != gt.meta.num_classes() {
        return Err(Error::invalid("volumes disagree on class count"));
    }
    Ok(())
}

pub fn dsc_3d(pred: &VolumeLabelMap, gt: &VolumeLabelMap, class: u8) -> Result<f64> {
    check_volumes(pred, gt)?;
    dice(&pred.class_mask(class), &gt.class_mask(class))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub class: String,
    pub code: u8,
    pub dsc: f64,
    /// `None` when the class is absent from either volume.
    pub hd95_mm: Option<f64>,
    pub asd_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AverageMetrics {
    pub dsc: f64,
    /// Mean over classes with defined distances; `None` if there are none.
    pub hd95_mm: Option<f64>,
    pub asd_mm: Option<f64>,
    /// Classes left out of the distance averages.
    pub undefined_distance_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub classes: Vec<ClassMetrics>,
    pub avg: AverageMetrics,
}

/// Per-class metrics for every non-background class and their unweighted
/// averages. Spacing comes from the ground-truth metadata.
pub fn evaluate(pred: &VolumeLabelMap, gt: &VolumeLabelMap) -> Result<MetricReport> {
    check_volumes(pred, gt)?;
    let spacing = gt.meta.axis_spacing();
    let mut classes = Vec::new();
    for code in 0..gt.meta.num_classes() {
        if code == BACKGROUND {
            continue;
        }
        let (p, g) = (pred.class_mask(code), gt.class_mask(code));
        classes.push(ClassMetrics {
            class: gt.meta.class_names[code as usize].clone(),
            code,
            dsc: dice(&p, &g)?,
            hd95_mm: hd95(&p, &g, spacing)?,
            asd_mm: asd(&p, &g, spacing)?,
        });
    }
    let mean =
        |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    let defined_hd: Vec<f64> = classes.iter().filter_map(|c| c.hd95_mm).collect();
    let defined_asd: Vec<f64> = classes.iter().filter_map(|c| c.asd_mm).collect();
    let avg = AverageMetrics {
        dsc: mean(classes.iter().map(|c| c.dsc).collect()).unwrap_or(1.0),
        undefined_distance_classes: classes.len() - defined_hd.len(),
        hd95_mm: mean(defined_hd),
        asd_mm: mean(defined_asd),
    };
    Ok(MetricReport { classes, avg })
}
