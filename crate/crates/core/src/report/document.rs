use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, XaiError};
use crate::image::{pgm16, ImageU8};

use super::{GridImage, Normalization};

pub const REPORT_FILE: &str = "report.json";

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn digest_hex(bytes: &[u8]) -> String {
    format!("{:016x}", fnv1a64(bytes))
}

/// 16-bit PGM of a `[0, 1]` map, `round(65535·v)`.
pub fn map_pgm16(height: usize, width: usize, map: &[f64]) -> Vec<u8> {
    let values: Vec<u16> = map
        .iter()
        .map(|v| (65535.0 * v.clamp(0.0, 1.0)).round() as u16)
        .collect();
    pgm16(height, width, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub version: String,
    pub model_digest: String,
    pub image: String,
    pub class_index: usize,
    pub methods: Vec<MethodEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEntry {
    pub name: String,
    pub config: serde_json::Value,
    pub attribution: AttributionRecord,
    pub deletion_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    /// `superpixel` or `pixel_map`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_file: Option<String>,
    pub normalization: Normalization,
}

/// A document plus the files it refers to.
#[derive(Debug, Clone, Default)]
pub struct ReportBundle {
    pub document: Option<ReportDocument>,
    /// `(file name, overlay)`.
    pub overlays: Vec<(String, ImageU8)>,
    /// `(file name, PGM bytes)`.
    pub maps: Vec<(String, Vec<u8>)>,
    pub grid: Option<(String, GridImage)>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| XaiError::io(path, e))
}

/// Writes every artifact, then `report.json`. Returns the written paths in
/// order.
pub fn write_report(bundle: &ReportBundle, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let document = bundle
        .document
        .as_ref()
        .ok_or_else(|| XaiError::Argument("report bundle has no document".into()))?;
    std::fs::create_dir_all(out_dir).map_err(|e| XaiError::io(out_dir, e))?;
    let mut written = Vec::new();
    for (name, img) in &bundle.overlays {
        let path = out_dir.join(name);
        write_file(&path, &img.to_ppm())?;
        written.push(path);
    }
    for (name, bytes) in &bundle.maps {
        let path = out_dir.join(name);
        write_file(&path, bytes)?;
        written.push(path);
    }
    if let Some((name, grid)) = &bundle.grid {
        let path = out_dir.join(name);
        write_file(&path, &grid.to_ppm())?;
        written.push(path);
    }
    for entry in &document.methods {
        if !entry.deletion_auc.is_finite() {
            return Err(XaiError::Numeric(format!(
                "{} deletion AUC is not finite",
                entry.name
            )));
        }
        if let Some(file) = &entry.attribution.map_file {
            if !out_dir.join(file).is_file() {
                return Err(XaiError::State(format!(
                    "{} refers to missing map file {file}",
                    entry.name
                )));
            }
        }
    }
    let json = serde_json::to_string_pretty(document)
        .map_err(|e| XaiError::State(format!("report serialization failed: {e}")))?;
    let path = out_dir.join(REPORT_FILE);
    write_file(&path, json.as_bytes())?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::parse_pgm;
    use crate::segmentation::Baseline;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(digest_hex(b"foobar"), "85944171f73967e8");
    }

    #[test]
    fn map_encoding() {
        let bytes = map_pgm16(1, 3, &[0.0, 0.5, 1.0]);
        let (h, w, maxval, values) = parse_pgm(&bytes).unwrap();
        assert_eq!((h, w, maxval), (1, 3, 65535));
        assert_eq!(values, vec![0, 32768, 65535]);
    }

    fn sample_doc() -> ReportDocument {
        ReportDocument {
            version: "0.1.0".into(),
            model_digest: digest_hex(b"weights"),
            image: "img.ppm".into(),
            class_index: 2,
            methods: vec![
                MethodEntry {
                    name: "shap".into(),
                    config: serde_json::json!({"mode": "exact"}),
                    attribution: AttributionRecord {
                        kind: "superpixel".into(),
                        values: Some(vec![0.1, -0.25, 1e-17]),
                        map_file: None,
                        normalization: Normalization {
                            max_before: 0.1,
                            baseline: Some(Baseline::Gray(128)),
                        },
                    },
                    deletion_auc: 0.123456789012345,
                },
                MethodEntry {
                    name: "gradcam".into(),
                    config: serde_json::json!({"tap": "relu2"}),
                    attribution: AttributionRecord {
                        kind: "pixel_map".into(),
                        values: None,
                        map_file: Some("gradcam.pgm".into()),
                        normalization: Normalization {
                            max_before: 3.5,
                            baseline: None,
                        },
                    },
                    deletion_auc: 0.5,
                },
            ],
        }
    }

    #[test]
    fn round_trip_and_conditional_grid() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ReportBundle {
            document: Some(sample_doc()),
            maps: vec![("gradcam.pgm".into(), map_pgm16(2, 2, &[0.0; 4]))],
            ..Default::default()
        };
        write_report(&bundle, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap();
        let back: ReportDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, sample_doc());
        let keys: Vec<usize> = [
            "\"version\"",
            "\"model_digest\"",
            "\"image\"",
            "\"class_index\"",
            "\"methods\"",
        ]
        .iter()
        .map(|k| text.find(k).unwrap())
        .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        let files: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        assert_eq!(files.len(), 2);
    }

    #[test]
    fn missing_map_file_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = ReportBundle {
            document: Some(sample_doc()),
            ..Default::default()
        };
        assert!(write_report(&bundle, dir.path()).is_err());
        assert!(!dir.path().join(REPORT_FILE).exists());
    }
}
