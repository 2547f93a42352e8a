use crate::error::{Result, XaiError};
use crate::image::ImageU8;

use super::Attribution;

/// Black gutter between grid cells, in pixels.
pub const GUTTER: usize = 2;

pub fn round_half_up(x: f64) -> u8 {
    (x + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Blue → green → red. On each half the rising channel is rounded and the
/// falling one is its complement, so the pair always sums to 255.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    if t <= 0.5 {
        let g = round_half_up(255.0 * 2.0 * t);
        [0, g, 255 - g]
    } else {
        let r = round_half_up(255.0 * (2.0 * t - 1.0));
        [r, 255 - r, 0]
    }
}

/// `(1 - alpha)·image + alpha·colormap(value)` per channel.
pub fn render_overlay(image: &ImageU8, attribution: &Attribution, alpha: f64) -> Result<ImageU8> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(XaiError::Argument(format!(
            "alpha must lie in [0, 1], got {alpha}"
        )));
    }
    if attribution.height() != image.height() || attribution.width() != image.width() {
        return Err(XaiError::Argument(format!(
            "attribution is {}×{}, image is {}×{}",
            attribution.height(),
            attribution.width(),
            image.height(),
            image.width()
        )));
    }
    let map = attribution.display_map();
    let mut data = Vec::with_capacity(image.data().len());
    for (px, &v) in image.data().chunks_exact(3).zip(&map) {
        let c = colormap(v);
        for ch in 0..3 {
            data.push(round_half_up(
                (1.0 - alpha) * px[ch] as f64 + alpha * c[ch] as f64,
            ));
        }
    }
    ImageU8::new(image.height(), image.width(), data)
}

/// A composed grid plus one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct GridImage {
    pub image: ImageU8,
    pub labels: Vec<String>,
}

impl GridImage {
    /// Binary PPM with the row labels in a header comment.
    pub fn to_ppm(&self) -> Vec<u8> {
        let comment = format!("rows: {}", self.labels.join(" | "));
        self.image.to_ppm_with_comment(Some(&comment))
    }
}

/// Lays out `rows` of equally sized cells with black gutters.
pub fn render_grid(rows: &[Vec<ImageU8>], labels: &[String]) -> Result<GridImage> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| XaiError::Argument("grid needs at least one non-empty row".into()))?;
    let (ch, cw) = (first.height(), first.width());
    let cols = rows[0].len();
    if labels.len() != rows.len() {
        return Err(XaiError::Argument(format!(
            "{} labels for {} rows",
            labels.len(),
            rows.len()
        )));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(XaiError::Argument(format!(
                "row {i} has {} cells, expected {cols}",
                row.len()
            )));
        }
        if let Some(cell) = row.iter().find(|c| c.height() != ch || c.width() != cw) {
            return Err(XaiError::Argument(format!(
                "row {i} has a {}×{} cell, expected {ch}×{cw}",
                cell.height(),
                cell.width()
            )));
        }
    }
    let width = cols * cw + (cols - 1) * GUTTER;
    let height = rows.len() * ch + (rows.len() - 1) * GUTTER;
    let mut data = vec![0u8; height * width * 3];
    for (r, row) in rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let (y0, x0) = (r * (ch + GUTTER), c * (cw + GUTTER));
            for y in 0..ch {
                let dst = ((y0 + y) * width + x0) * 3;
                data[dst..dst + cw * 3].copy_from_slice(&cell.data()[y * cw * 3..(y + 1) * cw * 3]);
            }
        }
    }
    Ok(GridImage {
        image: ImageU8::new(height, width, data)?,
        labels: labels.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::super::Method;
    use super::*;
    use crate::rng::SplitMix64;
    use crate::tensor::Tensor;

    fn constant_map(v: f64, h: usize, w: usize) -> Attribution {
        Attribution::pixel_map(
            Method::Gradcam,
            0,
            Tensor::new(vec![h, w], vec![v; h * w]).unwrap(),
            1.0,
        )
        .unwrap()
    }

    fn noise(h: usize, w: usize, seed: u64) -> ImageU8 {
        let mut rng = SplitMix64::new(seed);
        ImageU8::new(h, w, (0..h * w * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
    }

    #[test]
    fn colormap_stops() {
        assert_eq!(colormap(0.0), [0, 0, 255]);
        assert_eq!(colormap(0.5), [0, 255, 0]);
        assert_eq!(colormap(1.0), [255, 0, 0]);
        assert_eq!(colormap(0.25), [0, 128, 127]);
    }

    #[test]
    fn zero_alpha_is_identity() {
        let img = noise(5, 7, 1);
        let out = render_overlay(&img, &constant_map(0.3, 5, 7), 0.0).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn full_alpha_shows_colormap() {
        let img = noise(4, 4, 2);
        let red = render_overlay(&img, &constant_map(1.0, 4, 4), 1.0).unwrap();
        assert!(red.data().chunks(3).all(|p| p == [255, 0, 0]));
        let q = render_overlay(&img, &constant_map(0.25, 4, 4), 1.0).unwrap();
        assert_eq!(q.pixel(2, 3), [0, 128, 127]);
    }

    #[test]
    fn overlay_monotone_in_alpha() {
        let img = noise(6, 6, 3);
        let mut rng = SplitMix64::new(4);
        let map = Tensor::new(vec![6, 6], (0..36).map(|_| rng.next_f64()).collect()).unwrap();
        let attr = Attribution::pixel_map(Method::Guided, 0, map.clone(), 1.0).unwrap();
        let alphas = [0.0, 0.2, 0.5, 0.8, 1.0];
        let renders: Vec<ImageU8> = alphas
            .iter()
            .map(|&a| render_overlay(&img, &attr, a).unwrap())
            .collect();
        for p in 0..36 {
            let cm = colormap(map.data()[p]);
            for ch in 0..3 {
                let seq: Vec<u8> = renders.iter().map(|r| r.data()[p * 3 + ch]).collect();
                let orig = img.data()[p * 3 + ch];
                if cm[ch] >= orig {
                    assert!(seq.windows(2).all(|w| w[0] <= w[1]), "{seq:?}");
                } else {
                    assert!(seq.windows(2).all(|w| w[0] >= w[1]), "{seq:?}");
                }
            }
        }
    }

    #[test]
    fn grid_dimensions() {
        let row: Vec<ImageU8> = (0..5).map(|i| noise(64, 64, i)).collect();
        let one = render_grid(std::slice::from_ref(&row), &["a".into()]).unwrap();
        assert_eq!(
            (one.image.height(), one.image.width()),
            (64, 5 * 64 + 4 * 2)
        );
        let rows = vec![row; 7];
        let labels: Vec<String> = (0..7).map(|i| format!("r{i}")).collect();
        let seven = render_grid(&rows, &labels).unwrap();
        assert_eq!(seven.image.height(), 460);
        assert_eq!(
            seven.to_ppm(),
            render_grid(&rows, &labels).unwrap().to_ppm()
        );
        // Gutter pixels are black; cell pixels are copied.
        assert_eq!(seven.image.pixel(64, 10), [0, 0, 0]);
        assert_eq!(seven.image.pixel(66, 66), rows[1][1].pixel(0, 0));
    }

    #[test]
    fn ragged_grid_rejected() {
        let a = vec![noise(4, 4, 1), noise(4, 4, 2)];
        let b = vec![noise(4, 4, 3)];
        assert!(render_grid(&[a.clone(), b], &["x".into(), "y".into()]).is_err());
        assert!(render_grid(
            &[a.clone(), vec![noise(4, 5, 1), noise(4, 4, 1)]],
            &["x".into(), "y".into()]
        )
        .is_err());
        assert!(render_grid(&[a], &[]).is_err());
        assert!(render_grid(&[], &[]).is_err());
    }
}
