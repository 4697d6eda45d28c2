//! Brute-force reference implementations shared by the integration tests.
//! Each one is written for clarity rather than speed and avoids the data
//! structures of the library code it checks.

#![allow(dead_code)]

use std::collections::BTreeSet;

pub fn neighbors(idx: usize, h: usize, w: usize) -> Vec<usize> {
    let (r, c) = (idx / w, idx % w);
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push(idx - w);
    }
    if c > 0 {
        out.push(idx - 1);
    }
    if c + 1 < w {
        out.push(idx + 1);
    }
    if r + 1 < h {
        out.push(idx + w);
    }
    out
}

/// Connected components of pixels for which `same(p, q)` holds between
/// 4-neighbors, found by repeated min-label relaxation. Every pixel gets the
/// smallest index in its component.
pub fn components_by_relaxation(
    h: usize,
    w: usize,
    same: impl Fn(usize, usize) -> bool,
) -> Vec<usize> {
    let mut comp: Vec<usize> = (0..h * w).collect();
    loop {
        let mut changed = false;
        for p in 0..h * w {
            for q in neighbors(p, h, w) {
                if same(p, q) && comp[q] < comp[p] {
                    comp[p] = comp[q];
                    changed = true;
                }
            }
        }
        if !changed {
            return comp;
        }
    }
}

/// Priority-flood watershed by linear scans: the open pixel with the lowest
/// (relief, index) is expanded next and hands its label to unassigned
/// neighbors.
pub fn watershed_oracle(h: usize, w: usize, relief: &[f64]) -> Vec<u32> {
    let n = h * w;
    let plateau = components_by_relaxation(h, w, |p, q| relief[p] == relief[q]);
    let mut has_lower = vec![false; n];
    for p in 0..n {
        if neighbors(p, h, w).iter().any(|&q| relief[q] < relief[p]) {
            has_lower[plateau[p]] = true;
        }
    }
    // plateau roots are their first pixel, so ascending roots are row-major
    let roots: Vec<usize> = (0..n)
        .filter(|&p| plateau[p] == p && !has_lower[p])
        .collect();
    let mut label: Vec<Option<u32>> = vec![None; n];
    let mut open = Vec::new();
    for p in 0..n {
        if let Some(k) = roots.iter().position(|&r| r == plateau[p]) {
            label[p] = Some(k as u32);
            open.push(p);
        }
    }
    while !open.is_empty() {
        let mut best = 0;
        for k in 1..open.len() {
            let (a, b) = (open[k], open[best]);
            if relief[a] < relief[b] || (relief[a] == relief[b] && a < b) {
                best = k;
            }
        }
        let p = open.swap_remove(best);
        for q in neighbors(p, h, w) {
            if label[q].is_none() {
                label[q] = label[p];
                open.push(q);
            }
        }
    }
    label
        .into_iter()
        .map(|l| l.expect("every pixel flooded"))
        .collect()
}

/// Coarsest-to-finest region vote over explicit layer id arrays.
pub fn spread_oracle(layers: &[Vec<u32>], scribbles: &[u8], unlabeled: u8) -> Vec<u8> {
    let mut codes = scribbles.to_vec();
    for ids in layers.iter().rev() {
        let regions: BTreeSet<u32> = ids.iter().copied().collect();
        for r in regions {
            let classes: BTreeSet<u8> = (0..codes.len())
                .filter(|&p| ids[p] == r && codes[p] != unlabeled)
                .map(|p| codes[p])
                .collect();
            if classes.len() == 1 {
                let class = *classes.iter().next().unwrap();
                for p in 0..codes.len() {
                    if ids[p] == r && codes[p] == unlabeled {
                        codes[p] = class;
                    }
                }
            }
        }
    }
    codes
}

/// Unlabeled components with no foreground neighbor become background.
pub fn background_oracle(
    h: usize,
    w: usize,
    codes: &[u8],
    unlabeled: u8,
    background: u8,
) -> Vec<u8> {
    let comp =
        components_by_relaxation(h, w, |p, q| codes[p] == unlabeled && codes[q] == unlabeled);
    let mut touches = vec![false; h * w];
    for p in 0..h * w {
        if codes[p] != unlabeled {
            continue;
        }
        for q in neighbors(p, h, w) {
            if codes[q] != unlabeled && codes[q] != background {
                touches[comp[p]] = true;
            }
        }
    }
    (0..h * w)
        .map(|p| {
            if codes[p] == unlabeled && !touches[comp[p]] {
                background
            } else {
                codes[p]
            }
        })
        .collect()
}

/// Nearest labeled pixel by Manhattan distance, ties to the smallest class.
pub fn propagation_oracle(h: usize, w: usize, codes: &[u8], unlabeled: u8) -> Vec<u8> {
    let sources: Vec<usize> = (0..h * w).filter(|&p| codes[p] != unlabeled).collect();
    (0..h * w)
        .map(|p| {
            if codes[p] != unlabeled {
                return codes[p];
            }
            let (r, c) = ((p / w) as i64, (p % w) as i64);
            sources
                .iter()
                .map(|&s| {
                    let d = (r - (s / w) as i64).abs() + (c - (s % w) as i64).abs();
                    (d, codes[s])
                })
                .min()
                .unwrap()
                .1
        })
        .collect()
}

/// Soft Dice loss over a raw `[C, N]` probability array.
pub fn dice_loss_raw(
    probs: &[f64],
    classes: usize,
    target: &[u8],
    eps: f64,
    class_average: bool,
    include_background: bool,
) -> f64 {
    let n = target.len();
    let first = if include_background { 0 } else { 1 };
    let mut total = 0.0;
    for c in first..classes {
        let mut inter = 0.0;
        let mut pred = 0.0;
        let mut gt = 0.0;
        for p in 0..n {
            let g = if target[p] as usize == c { 1.0 } else { 0.0 };
            inter += probs[c * n + p] * g;
            pred += probs[c * n + p];
            gt += g;
        }
        total += 1.0 - (2.0 * inter + eps) / (pred + gt + eps);
    }
    if class_average {
        total / (classes - first) as f64
    } else {
        total
    }
}

/// Voxels of a `[d, h, w]` mask with a face neighbor outside the mask or the
/// volume.
pub fn surface_oracle(dims: [usize; 3], mask: &[bool]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for z in 0..dims[0] {
        for y in 0..dims[1] {
            for x in 0..dims[2] {
                let at = |z: usize, y: usize, x: usize| mask[(z * dims[1] + y) * dims[2] + x];
                if !at(z, y, x) {
                    continue;
                }
                let offsets: [(i64, i64, i64); 6] = [
                    (-1, 0, 0),
                    (1, 0, 0),
                    (0, -1, 0),
                    (0, 1, 0),
                    (0, 0, -1),
                    (0, 0, 1),
                ];
                let exposed = offsets.iter().any(|&(dz, dy, dx)| {
                    let (nz, ny, nx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                    nz < 0
                        || ny < 0
                        || nx < 0
                        || nz >= dims[0] as i64
                        || ny >= dims[1] as i64
                        || nx >= dims[2] as i64
                        || !at(nz as usize, ny as usize, nx as usize)
                });
                if exposed {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out
}

/// All-pairs nearest surface distances from `a` to `b`; `spacing` per axis.
pub fn directed_oracle(a: &[[usize; 3]], b: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    a.iter()
        .map(|p| {
            b.iter()
                .map(|q| {
                    (0..3)
                        .map(|k| ((p[k] as f64 - q[k] as f64) * spacing[k]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// (dsc, hd95, asd) from first principles; distances are `None` when a mask
/// is empty.
pub fn metrics_oracle(
    dims: [usize; 3],
    pred: &[bool],
    gt: &[bool],
    spacing: [f64; 3],
) -> (f64, Option<f64>, Option<f64>) {
    let np = pred.iter().filter(|&&v| v).count();
    let ng = gt.iter().filter(|&&v| v).count();
    let inter = pred.iter().zip(gt).filter(|(a, b)| **a && **b).count();
    let dsc = if np + ng == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (np + ng) as f64
    };
    if np == 0 || ng == 0 {
        return (dsc, None, None);
    }
    let sp = surface_oracle(dims, pred);
    let sg = surface_oracle(dims, gt);
    let d_pg = directed_oracle(&sp, &sg, spacing);
    let d_gp = directed_oracle(&sg, &sp, spacing);
    let p95 = |d: &[f64]| {
        let mut s = d.to_vec();
        s.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let rank = ((0.95 * s.len() as f64) - 1e-9).ceil() as usize;
        s[rank.max(1) - 1]
    };
    let hd = p95(&d_pg).max(p95(&d_gp));
    let asd =
        (d_pg.iter().sum::<f64>() + d_gp.iter().sum::<f64>()) / (d_pg.len() + d_gp.len()) as f64;
    (dsc, Some(hd), Some(asd))
}
