//! Deterministic cardiac-like phantoms: concentric LV/MYO with an RV crescent
//! on a textured background, thin centerline scribbles and corrupted
//! student/teacher probability maps.

use std::collections::VecDeque;
use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::enhancement::ProbMap;
use crate::error::{Error, Result};
use crate::grid::neighbors4;
use crate::io::{self, VolumeMeta};
use crate::spreading::{LabelMap, DEFAULT_UNLABELED};

pub const RV: u8 = 1;
pub const MYO: u8 = 2;
pub const LV: u8 = 3;
const NUM_CLASSES: u8 = 4;

/// Largest scribble size per class, as a fraction of that class's pixels.
pub const MAX_SCRIBBLE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub seed: u64,
    /// Slice height and width in pixels.
    pub size: usize,
    pub slices: usize,
    /// Argmax accuracy of each corrupted probability map.
    pub map_accuracy: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 96,
            slices: 3,
            map_accuracy: 0.85,
        }
    }
}

/// A generated phantom volume, one entry per slice.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    /// Raw intensities in scanner-like units, not normalized.
    pub raw_images: Vec<Vec<f64>>,
    pub ground_truth: Vec<LabelMap>,
    pub scribbles: Vec<LabelMap>,
    pub student: Vec<ProbMap>,
    pub teacher: Vec<ProbMap>,
    pub meta: VolumeMeta,
    pub size: usize,
}

pub const IMAGE_FILE: &str = "image.plt";
pub const GT_FILE: &str = "gt.plt";
pub const SCRIBBLES_FILE: &str = "scribbles.plt";
pub const STUDENT_FILE: &str = "ps.plt";
pub const TEACHER_FILE: &str = "pt.plt";
pub const META_FILE: &str = "meta.json";

impl Phantom {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let n = self.size;
        let raw: Vec<f32> = self
            .raw_images
            .iter()
            .flatten()
            .map(|&v| v as f32)
            .collect();
        let dims = if self.raw_images.len() == 1 {
            vec![n, n]
        } else {
            vec![self.raw_images.len(), n, n]
        };
        io::write_tensor(
            dir.join(IMAGE_FILE),
            &io::Tensor::new(dims, io::TensorData::F32(raw))?,
        )?;
        io::write_tensor(
            dir.join(GT_FILE),
            &io::labelmaps_to_tensor(&self.ground_truth)?,
        )?;
        io::write_tensor(
            dir.join(SCRIBBLES_FILE),
            &io::labelmaps_to_tensor(&self.scribbles)?,
        )?;
        io::write_tensor(
            dir.join(STUDENT_FILE),
            &io::probmaps_to_tensor(&self.student)?,
        )?;
        io::write_tensor(
            dir.join(TEACHER_FILE),
            &io::probmaps_to_tensor(&self.teacher)?,
        )?;
        self.meta.save(dir.join(META_FILE))
    }
}

struct Anatomy {
    cy: f64,
    cx: f64,
    r_lv: f64,
    r_myo: f64,
    rv_cy: f64,
    rv_cx: f64,
    rv_ry: f64,
    rv_rx: f64,
}

impl Anatomy {
    fn sample(rng: &mut ChaCha8Rng, n: usize, slice: usize, slices: usize) -> Self {
        let s = n as f64 / 96.0;
        // basal slices are larger than apical ones
        let taper = 1.0 - 0.15 * slice as f64 / slices.max(1) as f64;
        let cy = n as f64 / 2.0 + rng.random_range(-3.0..3.0) * s;
        let cx = n as f64 / 2.0 + 6.0 * s + rng.random_range(-3.0..3.0) * s;
        let r_lv = (11.0 + rng.random_range(0.0..3.0)) * s * taper;
        let r_myo = r_lv + (5.0 + rng.random_range(0.0..1.5)) * s;
        Self {
            cy,
            cx,
            r_lv,
            r_myo,
            rv_cy: cy + rng.random_range(-2.0..2.0) * s,
            rv_cx: cx - r_myo - 4.0 * s,
            rv_ry: (17.0 + rng.random_range(0.0..3.0)) * s * taper,
            rv_rx: (9.0 + rng.random_range(0.0..2.0)) * s * taper,
        }
    }

    fn class_at(&self, y: f64, x: f64) -> u8 {
        let d = ((y - self.cy).powi(2) + (x - self.cx).powi(2)).sqrt();
        if d <= self.r_lv {
            return LV;
        }
        if d <= self.r_myo {
            return MYO;
        }
        let e = ((y - self.rv_cy) / self.rv_ry).powi(2) + ((x - self.rv_cx) / self.rv_rx).powi(2);
        if e <= 1.0 {
            RV
        } else {
            0
        }
    }
}

fn box_blur(values: &[f64], n: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![0.0; values.len()];
    let mut out = vec![0.0; values.len()];
    for r in 0..n {
        for c in 0..n {
            let (lo, hi) = (c.saturating_sub(radius), (c + radius).min(n - 1));
            tmp[r * n + c] =
                values[r * n + lo..=r * n + hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    for r in 0..n {
        let (lo, hi) = (r.saturating_sub(radius), (r + radius).min(n - 1));
        for c in 0..n {
            out[r * n + c] =
                (lo..=hi).map(|rr| tmp[rr * n + c]).sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    out
}

/// Low-frequency noise rescaled to `[0, 1]`.
fn smooth_field(rng: &mut ChaCha8Rng, n: usize, radius: usize) -> Vec<f64> {
    let white: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let f = box_blur(&box_blur(&white, n, radius), n, radius);
    let (lo, hi) = f
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    f.iter().map(|v| (v - lo) / (hi - lo).max(1e-12)).collect()
}

fn intensity(class: u8) -> f64 {
    match class {
        LV => 0.85,
        RV => 0.75,
        MYO => 0.42,
        _ => 0.15,
    }
}

fn raster_points(n: usize, points: impl Iterator<Item = (f64, f64)>) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for (y, x) in points {
        let (r, c) = (y.round(), x.round());
        if r < 0.0 || c < 0.0 || r >= n as f64 || c >= n as f64 {
            continue;
        }
        let idx = r as usize * n + c as usize;
        if !out.contains(&idx) {
            out.push(idx);
        }
    }
    out
}

fn scribble_paths(a: &Anatomy, n: usize) -> [(u8, Vec<usize>); 4] {
    let steps = 400;
    let line = |y0: f64, x0: f64, y1: f64, x1: f64| {
        raster_points(
            n,
            (0..=steps).map(move |k| {
                let t = k as f64 / steps as f64;
                (y0 + t * (y1 - y0), x0 + t * (x1 - x0))
            }),
        )
    };
    let arc = |r: f64, from: f64, to: f64| {
        raster_points(
            n,
            (0..=steps).map(move |k| {
                let t = from + (to - from) * k as f64 / steps as f64;
                (a.cy + r * t.sin(), a.cx + r * t.cos())
            }),
        )
    };
    let lv = line(a.cy, a.cx - a.r_lv * 0.45, a.cy, a.cx + a.r_lv * 0.45);
    let myo = arc((a.r_lv + a.r_myo) / 2.0, -PI / 4.0, PI / 4.0);
    let rv = line(
        a.rv_cy - a.rv_ry * 0.4,
        a.rv_cx - a.rv_rx * 0.3,
        a.rv_cy + a.rv_ry * 0.4,
        a.rv_cx - a.rv_rx * 0.3,
    );
    let mut bg = arc(a.r_myo + 12.0 * n as f64 / 96.0, -0.6 * PI, 0.6 * PI);
    let margin = 4.0;
    bg.extend(line(margin, margin, n as f64 - 1.0 - margin, margin));
    [(LV, lv), (MYO, myo), (RV, rv), (0, bg)]
}

/// 4-connected distance to the nearest pixel of a different class.
fn boundary_distance(gt: &[u8], n: usize) -> Vec<f64> {
    let mut dist = vec![u32::MAX; gt.len()];
    let mut queue = VecDeque::new();
    for p in 0..gt.len() {
        if neighbors4(p, n, n).any(|q| gt[q] != gt[p]) {
            dist[p] = 0;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        for q in neighbors4(p, n, n) {
            if dist[q] == u32::MAX {
                dist[q] = dist[p] + 1;
                queue.push_back(q);
            }
        }
    }
    dist.into_iter()
        .map(|d| {
            if d == u32::MAX {
                f64::INFINITY
            } else {
                d as f64
            }
        })
        .collect()
}

/// Most frequent other class within a 7x7 window, if any.
fn confusable_class(gt: &[u8], n: usize, p: usize) -> Option<u8> {
    let (r, c) = ((p / n) as i64, (p % n) as i64);
    let mut counts = [0usize; NUM_CLASSES as usize];
    for dr in -3..=3 {
        for dc in -3..=3 {
            let (rr, cc) = (r + dr, c + dc);
            if rr >= 0 && cc >= 0 && rr < n as i64 && cc < n as i64 {
                let k = gt[(rr * n as i64 + cc) as usize];
                if k != gt[p] {
                    counts[k as usize] += 1;
                }
            }
        }
    }
    let (best, &count) = counts
        .iter()
        .enumerate()
        .max_by_key(|&(k, &cnt)| (cnt, std::cmp::Reverse(k)))?;
    (count > 0).then_some(best as u8)
}

/// Probability map whose argmax matches `gt` on exactly
/// `round(accuracy * pixels)` pixels, with errors concentrated near class
/// boundaries and in smooth random blobs.
fn corrupted_map(
    rng: &mut ChaCha8Rng,
    gt: &[u8],
    n: usize,
    boundary: &[f64],
    accuracy: f64,
) -> ProbMap {
    let total = gt.len();
    let blobs = smooth_field(rng, n, 3);
    let mut scored: Vec<(f64, usize)> = (0..total)
        .map(|p| {
            let near = (-boundary[p] / 2.5).exp();
            (
                0.55 * near + 0.45 * blobs[p] + 0.05 * rng.random::<f64>(),
                p,
            )
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let errors = ((1.0 - accuracy) * total as f64).round() as usize;
    let mut predicted = gt.to_vec();
    for &(_, p) in scored.iter().take(errors) {
        predicted[p] = confusable_class(gt, n, p).unwrap_or_else(|| {
            let shift = rng.random_range(1..NUM_CLASSES);
            (gt[p] + shift) % NUM_CLASSES
        });
    }
    let c = NUM_CLASSES as usize;
    let mut probs = vec![0.0; c * total];
    for p in 0..total {
        let top = rng.random_range(0.52..0.95);
        let weights: Vec<f64> = (0..c - 1).map(|_| rng.random_range(0.05..1.0)).collect();
        let wsum: f64 = weights.iter().sum();
        let mut others = weights.iter().map(|w| (1.0 - top) * w / wsum);
        for k in 0..c {
            probs[k * total + p] = if k as u8 == predicted[p] {
                top
            } else {
                others.next().expect("c - 1 other classes")
            };
        }
    }
    // round-trip through f32 so in-memory maps match what gets written
    let probs = probs.into_iter().map(|v| v as f32 as f64).collect();
    ProbMap::new(c, n, n, probs).expect("generated probabilities are normalized")
}

pub fn generate_phantom(cfg: &PhantomConfig) -> Result<Phantom> {
    if cfg.size < 32 || cfg.slices == 0 {
        return Err(Error::invalid(
            "phantoms need size >= 32 and at least one slice",
        ));
    }
    if !(0.0..=1.0).contains(&cfg.map_accuracy) {
        return Err(Error::invalid("map accuracy must lie in [0, 1]"));
    }
    let n = cfg.size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 0.03).expect("valid normal");
    let meta = VolumeMeta {
        spacing_mm: [1.5, 1.5, 5.0],
        ..VolumeMeta::default()
    };
    let mut phantom = Phantom {
        raw_images: Vec::new(),
        ground_truth: Vec::new(),
        scribbles: Vec::new(),
        student: Vec::new(),
        teacher: Vec::new(),
        meta,
        size: n,
    };

    for z in 0..cfg.slices {
        let anatomy = Anatomy::sample(&mut rng, n, z, cfg.slices);
        let gt: Vec<u8> = (0..n * n)
            .map(|p| anatomy.class_at((p / n) as f64, (p % n) as f64))
            .collect();

        let texture = smooth_field(&mut rng, n, 6);
        let clean: Vec<f64> = gt
            .iter()
            .zip(&texture)
            .map(|(&k, &t)| {
                intensity(k)
                    + if k == 0 {
                        0.12 * (t - 0.5)
                    } else {
                        0.04 * (t - 0.5)
                    }
            })
            .collect();
        let blurred = box_blur(&clean, n, 1);
        let raw: Vec<f64> = blurred
            .iter()
            .map(|&v| 1000.0 * (v + noise.sample(&mut rng)).max(0.0))
            .collect();

        let mut scribbles = vec![DEFAULT_UNLABELED; n * n];
        for (class, path) in scribble_paths(&anatomy, n) {
            let area = gt.iter().filter(|&&k| k == class).count();
            let budget = (MAX_SCRIBBLE_FRACTION * area as f64).floor() as usize;
            for p in path.into_iter().filter(|&p| gt[p] == class).take(budget) {
                scribbles[p] = class;
            }
        }

        let boundary = boundary_distance(&gt, n);
        let student = corrupted_map(&mut rng, &gt, n, &boundary, cfg.map_accuracy);
        let teacher = corrupted_map(&mut rng, &gt, n, &boundary, cfg.map_accuracy);

        phantom.raw_images.push(raw);
        phantom.ground_truth.push(LabelMap::from_codes(
            n,
            n,
            gt,
            NUM_CLASSES,
            DEFAULT_UNLABELED,
        )?);
        phantom.scribbles.push(LabelMap::from_codes(
            n,
            n,
            scribbles,
            NUM_CLASSES,
            DEFAULT_UNLABELED,
        )?);
        phantom.student.push(student);
        phantom.teacher.push(teacher);
    }
    Ok(phantom)
}
