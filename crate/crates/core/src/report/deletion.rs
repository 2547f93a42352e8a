use crate::error::{Result, XaiError};
use crate::image::ImageU8;
use crate::model::ModelHandle;
use crate::rng::SplitMix64;
use crate::segmentation::Baseline;

/// Class probability as the most-attributed pixels are progressively
/// replaced by `baseline`.
///
/// Pixels are ranked by `scores` descending, ties in row-major order. Point
/// `j` of the returned `steps + 1` values has the top `floor(j·N/steps)`
/// pixels removed.
pub fn deletion_curve(
    model: &dyn ModelHandle,
    image: &ImageU8,
    scores: &[f64],
    class_index: usize,
    steps: usize,
    baseline: Baseline,
) -> Result<Vec<f64>> {
    let n = image.pixel_count();
    if steps < 2 {
        return Err(XaiError::Argument(format!(
            "deletion needs at least 2 steps, got {steps}"
        )));
    }
    if scores.len() != n {
        return Err(XaiError::Argument(format!(
            "{} scores for {n} pixels",
            scores.len()
        )));
    }
    if class_index >= model.class_count() {
        return Err(XaiError::Index {
            index: class_index,
            len: model.class_count(),
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let rgb = baseline.rgb();
    let (w, mut current) = (image.width(), image.clone());
    let mut curve = Vec::with_capacity(steps + 1);
    let mut removed = 0;
    for j in 0..=steps {
        let target = j * n / steps;
        for &p in &order[removed..target] {
            current.set_pixel(p / w, p % w, rgb);
        }
        removed = target;
        curve.push(model.predict(&current)?.probabilities[class_index]);
    }
    Ok(curve)
}

/// Trapezoid rule over equally spaced points spanning `[0, 1]`.
pub fn trapezoid(curve: &[f64]) -> f64 {
    if curve.len() < 2 {
        return 0.0;
    }
    let h = 1.0 / (curve.len() - 1) as f64;
    curve.windows(2).map(|p| 0.5 * (p[0] + p[1]) * h).sum()
}

/// Area under [`deletion_curve`]; lower means the ranking found the pixels
/// the model relies on.
pub fn deletion_auc(
    model: &dyn ModelHandle,
    image: &ImageU8,
    scores: &[f64],
    class_index: usize,
    steps: usize,
    baseline: Baseline,
) -> Result<f64> {
    Ok(trapezoid(&deletion_curve(
        model,
        image,
        scores,
        class_index,
        steps,
        baseline,
    )?))
}

/// Uniform scores in `[0, 1)` for `n` pixels: the chance-level ranking.
pub fn random_attribution(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..n).map(|_| rng.next_f64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_toycnn, gen_shapes_dataset, OpaqueModel, Prediction};

    #[test]
    fn flat_curve_for_pixel_blind_model() {
        let model = OpaqueModel::new(2, |_: &ImageU8| {
            Ok(Prediction::from_logits(vec![0.3, -0.2]))
        });
        let image = ImageU8::filled(8, 8, [10, 20, 30]);
        let p = model.predict(&image).unwrap().probabilities[0];
        let auc = deletion_auc(&model, &image, &[1.0; 64], 0, 10, Baseline::default()).unwrap();
        assert!((auc - p).abs() < 1e-15);
    }

    #[test]
    fn first_point_is_original_probability() {
        let model = build_toycnn(2);
        let image = &gen_shapes_dataset(1, 4).unwrap()[0].image;
        let curve = deletion_curve(
            &model,
            image,
            &random_attribution(4096, 1),
            3,
            20,
            Baseline::default(),
        )
        .unwrap();
        assert_eq!(curve.len(), 21);
        assert_eq!(curve[0], model.predict(image).unwrap().probabilities[3]);
        let gray = ImageU8::filled(64, 64, [128; 3]);
        assert_eq!(curve[20], model.predict(&gray).unwrap().probabilities[3]);
    }

    #[test]
    fn auc_is_trapezoid_of_curve() {
        let model = build_toycnn(2);
        let image = &gen_shapes_dataset(1, 5).unwrap()[0].image;
        let scores = random_attribution(4096, 9);
        let curve = deletion_curve(&model, image, &scores, 1, 12, Baseline::default()).unwrap();
        let mut manual = 0.0;
        for j in 0..12 {
            manual += (curve[j] + curve[j + 1]) / 2.0 / 12.0;
        }
        let auc = deletion_auc(&model, image, &scores, 1, 12, Baseline::default()).unwrap();
        assert!((auc - manual).abs() < 1e-15);
    }

    #[test]
    fn ties_break_row_major() {
        // Model reads the first pixel's red channel; equal scores must delete it first.
        let model = OpaqueModel::new(2, |img: &ImageU8| {
            Ok(Prediction::from_logits(vec![
                img.pixel(0, 0)[0] as f64 / 50.0,
                0.0,
            ]))
        });
        let image = ImageU8::filled(2, 2, [255, 0, 0]);
        let curve = deletion_curve(&model, &image, &[0.0; 4], 0, 4, Baseline::Gray(0)).unwrap();
        assert!(curve[1] < curve[0]);
        assert_eq!(curve[1], curve[4]);
    }

    #[test]
    fn argument_checks() {
        let model = build_toycnn(2);
        let image = ImageU8::filled(64, 64, [0; 3]);
        assert!(deletion_auc(&model, &image, &[0.0; 4096], 0, 1, Baseline::default()).is_err());
        assert!(deletion_auc(&model, &image, &[0.0; 10], 0, 5, Baseline::default()).is_err());
        assert!(deletion_auc(&model, &image, &[0.0; 4096], 4, 5, Baseline::default()).is_err());
    }
}
