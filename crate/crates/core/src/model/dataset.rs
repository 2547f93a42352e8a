use std::fs;
use std::path::Path;

use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::rng::SplitMix64;

pub const IMAGE_SIZE: usize = 64;
pub const CLASS_NAMES: [&str; 4] = ["disk", "square", "triangle", "ring"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Disk = 0,
    Square = 1,
    Triangle = 2,
    Ring = 3,
}

impl ShapeClass {
    pub fn from_index(i: usize) -> Option<Self> {
        [Self::Disk, Self::Square, Self::Triangle, Self::Ring]
            .get(i)
            .copied()
    }

    pub fn name(self) -> &'static str {
        CLASS_NAMES[self as usize]
    }

    /// Whether pixel offset `(dx, dy)` from the centre lies inside a shape
    /// of half-size `half`.
    pub fn contains(self, dx: i64, dy: i64, half: i64) -> bool {
        let r2 = dx * dx + dy * dy;
        match self {
            ShapeClass::Disk => r2 <= half * half,
            ShapeClass::Square => dx.abs() <= half && dy.abs() <= half,
            // Apex at the top, base along the bottom edge of the box.
            ShapeClass::Triangle => dy.abs() <= half && 2 * dx.abs() <= dy + half,
            // Inner radius is half the outer one.
            ShapeClass::Ring => r2 <= half * half && 4 * r2 >= half * half,
        }
    }
}

/// Where the shape of a generated sample sits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShapeGeometry {
    pub center_x: usize,
    pub center_y: usize,
    pub half_size: usize,
}

impl ShapeGeometry {
    /// Inclusive `(x0, y0, x1, y1)`.
    pub fn bbox(&self) -> (usize, usize, usize, usize) {
        (
            self.center_x - self.half_size,
            self.center_y - self.half_size,
            self.center_x + self.half_size,
            self.center_y + self.half_size,
        )
    }

    pub fn bbox_contains(&self, y: usize, x: usize) -> bool {
        let (x0, y0, x1, y1) = self.bbox();
        (x0..=x1).contains(&x) && (y0..=y1).contains(&y)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub image: ImageU8,
    /// Index into [`CLASS_NAMES`].
    pub label: usize,
    /// Known for generated samples, absent for samples read from disk.
    pub geometry: Option<ShapeGeometry>,
}

/// Deterministic synthetic shapes.
///
/// Per sample the generator draws, in order: class, centre x, centre y
/// (both in `[16, 48]`), half-size (`[8, 14]`), dominant channel, its value
/// (`[200, 255]`), the two remaining channels (`[0, 80]`, in channel order),
/// then one gray background level in `[0, 60]` per pixel in row-major order.
pub fn gen_shapes_dataset(n: usize, seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(XaiError::Argument("dataset size must be at least 1".into()));
    }
    let mut rng = SplitMix64::new(seed);
    Ok((0..n).map(|_| gen_one(&mut rng)).collect())
}

fn gen_one(rng: &mut SplitMix64) -> Sample {
    let class = ShapeClass::from_index(rng.below(4) as usize).expect("below(4) < 4");
    let cx = rng.range_inclusive(16, 48) as usize;
    let cy = rng.range_inclusive(16, 48) as usize;
    let half = rng.range_inclusive(8, 14) as usize;
    let dominant = rng.below(3) as usize;
    let mut color = [0u8; 3];
    color[dominant] = rng.range_inclusive(200, 255) as u8;
    for c in 0..3 {
        if c != dominant {
            color[c] = rng.range_inclusive(0, 80) as u8;
        }
    }

    let mut data = Vec::with_capacity(IMAGE_SIZE * IMAGE_SIZE * 3);
    for y in 0..IMAGE_SIZE {
        for x in 0..IMAGE_SIZE {
            let gray = rng.range_inclusive(0, 60) as u8;
            let inside = class.contains(x as i64 - cx as i64, y as i64 - cy as i64, half as i64);
            data.extend_from_slice(&if inside { color } else { [gray; 3] });
        }
    }
    Sample {
        image: ImageU8::new(IMAGE_SIZE, IMAGE_SIZE, data).expect("fixed dimensions"),
        label: class as usize,
        geometry: Some(ShapeGeometry {
            center_x: cx,
            center_y: cy,
            half_size: half,
        }),
    }
}

/// Writes `NNNNN_<label>.ppm` files into `dir`, creating it if needed.
pub fn save_dataset(dir: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| XaiError::io(dir, e))?;
    for (i, s) in samples.iter().enumerate() {
        s.image
            .write_ppm(&dir.join(format!("{i:05}_{}.ppm", s.label)))?;
    }
    Ok(())
}

/// Reads every `NNNNN_<label>.ppm` in `dir`, sorted by file name. Other
/// files are ignored.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| XaiError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let stem = p.file_stem()?.to_str()?.to_owned();
            let (index, label) = stem.split_once('_')?;
            let ok = p.extension()? == "ppm"
                && index.len() == 5
                && index.bytes().all(|b| b.is_ascii_digit());
            let label: usize = label.parse().ok()?;
            (ok && label < CLASS_NAMES.len()).then_some((p, label))
        })
        .collect();
    entries.sort();
    entries
        .into_iter()
        .map(|(path, label)| {
            Ok(Sample {
                image: ImageU8::read_ppm(&path)?,
                label,
                geometry: None,
            })
        })
        .collect()
}
