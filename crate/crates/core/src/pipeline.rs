//! Explaining one image with several methods at once, and turning the
//! result into overlays and a report.

use std::collections::HashMap;

use serde_json::json;

use crate::error::{Result, XaiError};
use crate::gradcam::gradcam_heatmap;
use crate::guided::guided_backprop;
use crate::image::ImageU8;
use crate::lime::{explain_lime_game, LimeConfig};
use crate::model::{ModelHandle, DEFAULT_TAP};
use crate::report::{
    deletion_auc, map_pgm16, render_overlay, Attribution, AttributionRecord, Method, MethodEntry,
    Payload, ReportBundle, ReportDocument,
};
use crate::segmentation::{apply_mask, grid_segment, Baseline, CoalitionMask, Segmentation};
use crate::shap::{explain_shap_game, ShapConfig};

/// Settings shared by every method in one run.
#[derive(Debug, Clone)]
pub struct ExplainOptions {
    pub methods: Vec<Method>,
    /// `(rows, cols)` of the LIME grid.
    pub lime_grid: (usize, usize),
    /// `(rows, cols)` of the SHAP grid.
    pub shap_grid: (usize, usize),
    pub lime: LimeConfig,
    pub shap: ShapConfig,
    pub tap: String,
    pub deletion_steps: usize,
    pub overlay_alpha: f64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        ExplainOptions {
            methods: Method::ALL.to_vec(),
            lime_grid: (8, 8),
            shap_grid: (3, 3),
            lime: LimeConfig::default(),
            shap: ShapConfig::default(),
            tap: DEFAULT_TAP.to_string(),
            deletion_steps: 20,
            overlay_alpha: 0.5,
        }
    }
}

impl ExplainOptions {
    /// Every method on one `rows × cols` grid, with `top_k` capped at the
    /// region count.
    pub fn shared_grid(rows: usize, cols: usize) -> Self {
        let k = rows * cols;
        let defaults = Self::default();
        ExplainOptions {
            lime_grid: (rows, cols),
            shap_grid: (rows, cols),
            lime: LimeConfig {
                top_k: defaults.lime.top_k.min(k),
                ..defaults.lime
            },
            ..defaults
        }
    }
}

/// One method's output on one image.
#[derive(Debug, Clone)]
pub struct MethodResult {
    pub attribution: Attribution,
    pub config: serde_json::Value,
    pub deletion_auc: f64,
}

#[derive(Debug, Clone)]
pub struct ImageExplanation {
    pub class_index: usize,
    pub probabilities: Vec<f64>,
    pub results: Vec<MethodResult>,
}

impl ImageExplanation {
    pub fn get(&self, method: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.attribution.method == method)
    }
}

/// Memoized class probability over coalitions of one segmentation.
struct CoalitionGame<'a> {
    model: &'a dyn ModelHandle,
    image: &'a ImageU8,
    seg: &'a Segmentation,
    baseline: Baseline,
    class_index: usize,
    cache: HashMap<Vec<bool>, f64>,
}

impl CoalitionGame<'_> {
    fn value(&mut self, mask: &CoalitionMask) -> Result<f64> {
        if let Some(&v) = self.cache.get(mask.bits()) {
            return Ok(v);
        }
        let perturbed = apply_mask(self.image, self.seg, mask, self.baseline)?;
        let v = self.model.predict(&perturbed)?.probabilities[self.class_index];
        self.cache.insert(mask.bits().to_vec(), v);
        Ok(v)
    }
}

type GameSlot = (
    (usize, usize),
    Baseline,
    Segmentation,
    HashMap<Vec<bool>, f64>,
);

fn game_slot(
    games: &mut Vec<GameSlot>,
    image: &ImageU8,
    grid: (usize, usize),
    baseline: Baseline,
) -> Result<usize> {
    if let Some(i) = games.iter().position(|g| g.0 == grid && g.1 == baseline) {
        return Ok(i);
    }
    games.push((
        grid,
        baseline,
        grid_segment(image, grid.0, grid.1)?,
        HashMap::new(),
    ));
    Ok(games.len() - 1)
}

/// Runs `options.methods` on `image` for `class_index`, or for the
/// predicted class when `None`.
///
/// Methods sharing a grid and baseline share one coalition cache, so each
/// distinct mask costs one model call.
pub fn explain_image(
    model: &dyn ModelHandle,
    image: &ImageU8,
    class_index: Option<usize>,
    options: &ExplainOptions,
) -> Result<ImageExplanation> {
    let prediction = model.predict(image)?;
    let class_index = class_index.unwrap_or_else(|| prediction.argmax());
    if class_index >= model.class_count() {
        return Err(XaiError::Index {
            index: class_index,
            len: model.class_count(),
        });
    }
    if options.methods.is_empty() {
        return Err(XaiError::Argument("no methods requested".into()));
    }
    let mut games: Vec<GameSlot> = Vec::new();
    let mut results = Vec::new();
    for &method in &options.methods {
        let (attribution, config) = match method {
            Method::Lime | Method::Shap => {
                let (grid, baseline) = if method == Method::Lime {
                    (options.lime_grid, options.lime.baseline)
                } else {
                    (options.shap_grid, options.shap.baseline)
                };
                let gi = game_slot(&mut games, image, grid, baseline)?;
                let (_, _, seg, cache) = &mut games[gi];
                let mut game = CoalitionGame {
                    model,
                    image,
                    seg,
                    baseline,
                    class_index,
                    cache: std::mem::take(cache),
                };
                let k = seg.region_count();
                let out = if method == Method::Lime {
                    explain_lime_game(|m| game.value(m), k, &options.lime).and_then(|exp| {
                        let config = json!({"grid": [grid.0, grid.1], "lime": options.lime, "r_squared": exp.r_squared});
                        Ok((Attribution::from_lime(&exp, seg, class_index)?, config))
                    })
                } else {
                    explain_shap_game(|m| game.value(m), k, &options.shap).and_then(|shap| {
                        let config = json!({
                            "grid": [grid.0, grid.1],
                            "shap": options.shap,
                            "v_full": shap.v_full,
                            "v_empty": shap.v_empty,
                            "std_errors": shap.std_errors,
                        });
                        Ok((
                            Attribution::from_shap(&shap, seg, class_index, baseline)?,
                            config,
                        ))
                    })
                };
                *cache = game.cache;
                out?
            }
            Method::Gradcam => {
                let r = gradcam_heatmap(model, image, class_index, &options.tap)?;
                let config = json!({
                    "tap": r.tap_name,
                    "activation": "post_relu",
                    "upsampling": "bilinear_half_pixel",
                    "normalization": "max",
                });
                (Attribution::from_gradcam(&r)?, config)
            }
            Method::Guided => {
                let r = guided_backprop(model, image, class_index)?;
                let config = json!({
                    "relu_rule": "guided_joint_mask",
                    "reduction": "max_abs_over_channels",
                    "normalization": "max",
                });
                (Attribution::from_guided(&r)?, config)
            }
        };
        let deletion_auc = deletion_auc(
            model,
            image,
            &attribution.pixel_scores(),
            class_index,
            options.deletion_steps,
            options.lime.baseline,
        )?;
        results.push(MethodResult {
            attribution,
            config,
            deletion_auc,
        });
    }
    Ok(ImageExplanation {
        class_index,
        probabilities: prediction.probabilities,
        results,
    })
}

/// `[original, overlay per method...]` in the order the methods ran.
pub fn overlay_row(
    image: &ImageU8,
    explanation: &ImageExplanation,
    alpha: f64,
) -> Result<Vec<ImageU8>> {
    let mut row = vec![image.clone()];
    for r in &explanation.results {
        row.push(render_overlay(image, &r.attribution, alpha)?);
    }
    Ok(row)
}

/// Report document plus overlay and map files for one explained image.
pub fn build_report(
    image: &ImageU8,
    image_name: &str,
    explanation: &ImageExplanation,
    model_digest: &str,
    alpha: f64,
) -> Result<ReportBundle> {
    let mut bundle = ReportBundle::default();
    let mut methods = Vec::new();
    for r in &explanation.results {
        let name = r.attribution.method.name();
        bundle.overlays.push((
            format!("{name}_overlay.ppm"),
            render_overlay(image, &r.attribution, alpha)?,
        ));
        let record = match &r.attribution.payload {
            Payload::Superpixel { scores, .. } => AttributionRecord {
                kind: "superpixel".into(),
                values: Some(scores.clone()),
                map_file: None,
                normalization: r.attribution.normalization,
            },
            Payload::PixelMap(map) => {
                let file = format!("{name}_map.pgm");
                bundle.maps.push((
                    file.clone(),
                    map_pgm16(map.shape()[0], map.shape()[1], map.data()),
                ));
                AttributionRecord {
                    kind: "pixel_map".into(),
                    values: None,
                    map_file: Some(file),
                    normalization: r.attribution.normalization,
                }
            }
        };
        methods.push(MethodEntry {
            name: name.to_string(),
            config: r.config.clone(),
            attribution: record,
            deletion_auc: r.deletion_auc,
        });
    }
    bundle.document = Some(ReportDocument {
        version: env!("CARGO_PKG_VERSION").to_string(),
        model_digest: model_digest.to_string(),
        image: image_name.to_string(),
        class_index: explanation.class_index,
        methods,
    });
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lime::explain_lime;
    use crate::model::{build_toycnn, gen_shapes_dataset, Opaque};
    use crate::shap::explain_shap;

    #[test]
    fn shared_cache_matches_standalone_explainers() {
        let model = build_toycnn(4);
        let image = &gen_shapes_dataset(1, 2).unwrap()[0].image;
        let options = ExplainOptions {
            lime: LimeConfig {
                n_samples: 200,
                ..ExplainOptions::shared_grid(3, 3).lime
            },
            ..ExplainOptions::shared_grid(3, 3)
        };
        let e = explain_image(&model, image, Some(1), &options).unwrap();
        let seg = grid_segment(image, 3, 3).unwrap();
        let lime = explain_lime(&model, image, &seg, 1, &options.lime).unwrap();
        let shap = explain_shap(&model, image, &seg, 1, &options.shap).unwrap();
        match &e.get(Method::Lime).unwrap().attribution.payload {
            Payload::Superpixel { scores, .. } => assert_eq!(scores, &lime.coefficients),
            _ => panic!("expected superpixel payload"),
        }
        match &e.get(Method::Shap).unwrap().attribution.payload {
            Payload::Superpixel { scores, .. } => assert_eq!(scores, &shap.phi),
            _ => panic!("expected superpixel payload"),
        }
        assert_eq!(e.results.len(), 4);
        assert!(e
            .results
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.deletion_auc)));
    }

    #[test]
    fn auto_class_is_argmax() {
        let model = build_toycnn(4);
        let image = &gen_shapes_dataset(1, 2).unwrap()[0].image;
        let options = ExplainOptions {
            methods: vec![Method::Gradcam],
            ..ExplainOptions::default()
        };
        let e = explain_image(&model, image, None, &options).unwrap();
        assert_eq!(e.class_index, model.predict(image).unwrap().argmax());
        assert!(explain_image(&model, image, Some(4), &options).is_err());
    }

    #[test]
    fn opaque_model_still_gets_perturbation_methods() {
        let model = build_toycnn(4);
        let image = &gen_shapes_dataset(1, 2).unwrap()[0].image;
        let perturb = ExplainOptions {
            methods: vec![Method::Shap],
            ..ExplainOptions::default()
        };
        assert!(explain_image(&Opaque(&model), image, None, &perturb).is_ok());
        let grads = ExplainOptions {
            methods: vec![Method::Guided],
            ..ExplainOptions::default()
        };
        assert!(matches!(
            explain_image(&Opaque(&model), image, None, &grads),
            Err(XaiError::Capability(_))
        ));
    }

    #[test]
    fn report_bundle_layout() {
        let model = build_toycnn(4);
        let image = &gen_shapes_dataset(1, 2).unwrap()[0].image;
        let options = ExplainOptions {
            methods: vec![Method::Shap, Method::Gradcam],
            ..ExplainOptions::default()
        };
        let e = explain_image(&model, image, None, &options).unwrap();
        let bundle = build_report(image, "x.ppm", &e, "00", 0.5).unwrap();
        assert_eq!(bundle.overlays.len(), 2);
        assert_eq!(bundle.maps.len(), 1);
        let doc = bundle.document.unwrap();
        assert_eq!(doc.methods[0].attribution.kind, "superpixel");
        assert_eq!(
            doc.methods[1].attribution.map_file.as_deref(),
            Some("gradcam_map.pgm")
        );
        let row = overlay_row(image, &e, 0.5).unwrap();
        assert_eq!(row.len(), 3);
    }
}
