//! Superpixel feature spaces and coalition masks.
//!
//! A [`Segmentation`] partitions the pixels of an image into `K` regions.
//! The perturbation explainers treat each region as one feature: a
//! [`CoalitionMask`] says which regions are kept, and [`apply_mask`] paints
//! every other region with a [`Baseline`] colour.

use serde::{Deserialize, Serialize};

use crate::error::{Result, XaiError};
use crate::image::ImageU8;

/// Replacement content for removed superpixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Gray(u8),
    ChannelMean([u8; 3]),
}

impl Default for Baseline {
    fn default() -> Self {
        Baseline::Gray(128)
    }
}

impl Baseline {
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Baseline::Gray(v) => [v; 3],
            Baseline::ChannelMean(c) => c,
        }
    }

    /// Per-channel mean over a set of images, rounded half up.
    pub fn dataset_mean<'a>(images: impl IntoIterator<Item = &'a ImageU8>) -> Result<Self> {
        let mut sums = [0u64; 3];
        let mut count = 0u64;
        for img in images {
            for px in img.data().chunks_exact(3) {
                for c in 0..3 {
                    sums[c] += px[c] as u64;
                }
            }
            count += img.pixel_count() as u64;
        }
        if count == 0 {
            return Err(XaiError::Argument("dataset mean of no images".into()));
        }
        Ok(Baseline::ChannelMean(
            sums.map(|s| ((2 * s + count) / (2 * count)) as u8),
        ))
    }
}

/// Inclusion flags over the `K` superpixels of a segmentation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoalitionMask {
    bits: Vec<bool>,
}

impl CoalitionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        CoalitionMask { bits }
    }

    pub fn full(k: usize) -> Self {
        CoalitionMask {
            bits: vec![true; k],
        }
    }

    pub fn empty(k: usize) -> Self {
        CoalitionMask {
            bits: vec![false; k],
        }
    }

    /// Bit `i` of `index` is feature `i`.
    pub fn from_index(index: u64, k: usize) -> Self {
        CoalitionMask {
            bits: (0..k).map(|i| index >> i & 1 == 1).collect(),
        }
    }

    /// Inverse of [`from_index`](Self::from_index); `None` above 64 features.
    pub fn to_index(&self) -> Option<u64> {
        (self.bits.len() <= 64).then(|| {
            self.bits
                .iter()
                .enumerate()
                .filter(|(_, &b)| b)
                .fold(0u64, |acc, (i, _)| acc | 1 << i)
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn is_present(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn set(&mut self, i: usize, present: bool) {
        self.bits[i] = present;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn present_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn absent_count(&self) -> usize {
        self.bits.len() - self.present_count()
    }
}

/// Per-pixel superpixel ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    region_count: usize,
}

impl Segmentation {
    /// Validates that labels cover exactly the ids `0..region_count`.
    pub fn new(height: usize, width: usize, labels: Vec<u32>, region_count: usize) -> Result<Self> {
        if labels.len() != height * width {
            return Err(XaiError::Argument(format!(
                "{} labels for a {height}×{width} image",
                labels.len()
            )));
        }
        let mut seen = vec![false; region_count];
        for &l in &labels {
            let slot = seen.get_mut(l as usize).ok_or_else(|| {
                XaiError::Argument(format!("label {l} not below region count {region_count}"))
            })?;
            *slot = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(XaiError::Argument(format!(
                "region {missing} has no pixels"
            )));
        }
        Ok(Segmentation {
            height,
            width,
            labels,
            region_count,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn region_count(&self) -> usize {
        self.region_count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.region_count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// Scatters one score per region onto the pixel grid.
    pub fn splat(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.region_count {
            return Err(XaiError::Argument(format!(
                "{} scores for {} regions",
                scores.len(),
                self.region_count
            )));
        }
        Ok(self.labels.iter().map(|&l| scores[l as usize]).collect())
    }

    /// Debug export: P5 label map with maxval `K - 1` (at least 1).
    pub fn to_pgm(&self) -> Vec<u8> {
        let maxval = self.region_count.saturating_sub(1).max(1);
        let mut out = format!("P5\n{} {}\n{maxval}\n", self.width, self.height).into_bytes();
        for &l in &self.labels {
            if maxval > 255 {
                out.extend_from_slice(&(l as u16).to_be_bytes());
            } else {
                out.push(l as u8);
            }
        }
        out
    }
}

/// Regular `rows × cols` grid. Band `i` spans `floor(i·H/rows)` up to
/// `floor((i+1)·H/rows)`, likewise for columns; ids are row-major.
pub fn grid_segment(image: &ImageU8, rows: usize, cols: usize) -> Result<Segmentation> {
    grid_labels(image.height(), image.width(), rows, cols)
}

pub(crate) fn grid_labels(h: usize, w: usize, rows: usize, cols: usize) -> Result<Segmentation> {
    if rows == 0 || cols == 0 {
        return Err(XaiError::Argument(format!(
            "grid needs at least one row and column, got {rows}×{cols}"
        )));
    }
    if rows > h || cols > w {
        return Err(XaiError::Argument(format!(
            "{rows}×{cols} grid does not fit a {h}×{w} image"
        )));
    }
    let band =
        |i: usize, len: usize, n: usize| (0..n).rev().find(|&b| b * len / n <= i).unwrap_or(0);
    let row_of: Vec<usize> = (0..h).map(|y| band(y, h, rows)).collect();
    let col_of: Vec<usize> = (0..w).map(|x| band(x, w, cols)).collect();
    let labels = (0..h)
        .flat_map(|y| {
            let r = row_of[y];
            col_of
                .iter()
                .map(move |&c| (r * cols + c) as u32)
                .collect::<Vec<_>>()
        })
        .collect();
    Segmentation::new(h, w, labels, rows * cols)
}

/// sRGB (D65) to CIE L*a*b*.
fn srgb_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = |c: u8| {
        let c = c as f64 / 255.0;
        if c <= 0.04045 {
            c / 12.92
        } else {
            ((c + 0.055) / 1.055).powf(2.4)
        }
    };
    let (r, g, b) = (lin(rgb[0]), lin(rgb[1]), lin(rgb[2]));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let f = |t: f64| {
        if t > 216.0 / 24389.0 {
            t.cbrt()
        } else {
            (24389.0 / 27.0 * t + 16.0) / 116.0
        }
    };
    let (fx, fy, fz) = (f(x), f(y), f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Simplified SLIC.
///
/// k-means over `(L*, a*, b*, x·m/S, y·m/S)` with `S = sqrt(HW/K)` and
/// `m = compactness`. Centres start on a uniform grid of roughly `K` cells
/// and every centre competes for every pixel. After `iters` rounds the
/// clusters are split into 4-connected components and components smaller
/// than `S²/4` pixels are merged, in scan order, into the largest touching
/// neighbour. Ids are assigned in order of first appearance.
pub fn slic_segment(
    image: &ImageU8,
    k: usize,
    compactness: f64,
    iters: usize,
) -> Result<Segmentation> {
    let (h, w) = (image.height(), image.width());
    if k == 0 {
        return Err(XaiError::Argument(
            "SLIC needs at least one superpixel".into(),
        ));
    }
    if k > h * w {
        return Err(XaiError::Argument(format!(
            "{k} superpixels requested for {} pixels",
            h * w
        )));
    }
    if !(compactness > 0.0) {
        return Err(XaiError::Argument(format!(
            "compactness must be positive, got {compactness}"
        )));
    }
    let step = ((h * w) as f64 / k as f64).sqrt();
    let spatial = compactness / step;

    let features: Vec<[f64; 5]> = (0..h * w)
        .map(|i| {
            let (y, x) = (i / w, i % w);
            let [l, a, b] = srgb_to_lab(image.pixel(y, x));
            [
                l,
                a,
                b,
                (x as f64 + 0.5) * spatial,
                (y as f64 + 0.5) * spatial,
            ]
        })
        .collect();

    let rows = (((k * h) as f64 / w as f64).sqrt().round() as usize).clamp(1, h);
    let cols = ((k as f64 / rows as f64).round() as usize).clamp(1, w);
    let mut centers: Vec<[f64; 5]> = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let cy = (r as f64 + 0.5) * h as f64 / rows as f64;
            let cx = (c as f64 + 0.5) * w as f64 / cols as f64;
            let f = features[(cy as usize).min(h - 1) * w + (cx as usize).min(w - 1)];
            centers.push([f[0], f[1], f[2], cx * spatial, cy * spatial]);
        }
    }

    let mut assign = vec![0usize; h * w];
    for _ in 0..iters.max(1) {
        for (p, f) in features.iter().enumerate() {
            let mut best = (f64::INFINITY, 0);
            for (ci, c) in centers.iter().enumerate() {
                let d: f64 = f.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, ci);
                }
            }
            assign[p] = best.1;
        }
        let mut sums = vec![[0.0; 5]; centers.len()];
        let mut counts = vec![0usize; centers.len()];
        for (p, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for d in 0..5 {
                sums[c][d] += features[p][d];
            }
        }
        for (ci, center) in centers.iter_mut().enumerate() {
            if counts[ci] > 0 {
                for d in 0..5 {
                    center[d] = sums[ci][d] / counts[ci] as f64;
                }
            }
        }
    }

    let min_size = ((step * step / 4.0) as usize).max(1);
    let labels = enforce_connectivity(&assign, h, w, min_size);
    let region_count = labels.iter().max().map_or(0, |&m| m as usize + 1);
    Segmentation::new(h, w, labels, region_count)
}

fn neighbors(p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (p / w, p % w);
    [
        (y > 0).then(|| p - w),
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
        (y + 1 < h).then(|| p + w),
    ]
    .into_iter()
    .flatten()
}

/// Splits clusters into 4-connected components, merges the small ones and
/// renumbers by first appearance.
fn enforce_connectivity(assign: &[usize], h: usize, w: usize, min_size: usize) -> Vec<u32> {
    const UNSET: usize = usize::MAX;
    let mut comp = vec![UNSET; h * w];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for start in 0..h * w {
        if comp[start] != UNSET {
            continue;
        }
        let id = members.len();
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        comp[start] = id;
        while let Some(p) = stack.pop() {
            pixels.push(p);
            for q in neighbors(p, h, w) {
                if comp[q] == UNSET && assign[q] == assign[p] {
                    comp[q] = id;
                    stack.push(q);
                }
            }
        }
        members.push(pixels);
    }

    for id in 0..members.len() {
        if members[id].is_empty() || members[id].len() >= min_size {
            continue;
        }
        let mut best: Option<usize> = None;
        for &p in &members[id] {
            for q in neighbors(p, h, w) {
                let other = comp[q];
                if other == id {
                    continue;
                }
                best = match best {
                    Some(b)
                        if members[b].len() > members[other].len()
                            || (members[b].len() == members[other].len() && b < other) =>
                    {
                        Some(b)
                    }
                    _ => Some(other),
                };
            }
        }
        if let Some(target) = best {
            let moved = std::mem::take(&mut members[id]);
            for &p in &moved {
                comp[p] = target;
            }
            members[target].extend(moved);
        }
    }

    let mut remap = vec![u32::MAX; members.len()];
    let mut next = 0u32;
    comp.iter()
        .map(|&c| {
            if remap[c] == u32::MAX {
                remap[c] = next;
                next += 1;
            }
            remap[c]
        })
        .collect()
}

/// Keeps the pixels of present regions and paints absent ones with the
/// baseline colour.
pub fn apply_mask(
    image: &ImageU8,
    seg: &Segmentation,
    mask: &CoalitionMask,
    baseline: Baseline,
) -> Result<ImageU8> {
    if mask.len() != seg.region_count() {
        return Err(XaiError::Argument(format!(
            "mask has {} bits, segmentation has {} regions",
            mask.len(),
            seg.region_count()
        )));
    }
    if seg.height() != image.height() || seg.width() != image.width() {
        return Err(XaiError::Argument(format!(
            "segmentation is {}×{}, image is {}×{}",
            seg.height(),
            seg.width(),
            image.height(),
            image.width()
        )));
    }
    let fill = baseline.rgb();
    let mut data = image.data().to_vec();
    for (px, &l) in data.chunks_exact_mut(3).zip(seg.labels()) {
        if !mask.is_present(l as usize) {
            px.copy_from_slice(&fill);
        }
    }
    ImageU8::new(image.height(), image.width(), data)
}
