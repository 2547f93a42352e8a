//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (visible with `--nocapture`) before asserting.

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use xaiscope::autodiff::{relu_backward, Affine, Layer, Network, ReluPolicy};
use xaiscope::gradcam::{gradcam_from_network, gradcam_heatmap};
use xaiscope::guided::{guided_backprop, guided_from_network};
use xaiscope::lime::{explain_lime_game, LimeConfig, MaskSampling};
use xaiscope::model::{
    accuracy, build_toycnn, decode_weights, encode_weights, gen_shapes_dataset, load_weights,
    save_weights, train, Sample, ToyConvNet,
};
use xaiscope::oracles::{permutation_shapley, OracleBudget};
use xaiscope::pipeline::{
    build_report, explain_image, overlay_row, ExplainOptions, ImageExplanation,
};
use xaiscope::report::{
    deletion_auc, random_attribution, render_grid, write_report, Method, ReportDocument,
};
use xaiscope::shap::{exact_shapley, mc_shapley};
use xaiscope::verify::verify_gradients;
use xaiscope::{Baseline, CoalitionMask, SplitMix64, Tensor};

fn report(criterion: u32, title: &str, ok: bool, detail: &str) {
    println!(
        "{} criterion {criterion} ({title}): {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

fn random_table(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..1usize << k).map(|_| rng.next_f64()).collect()
}

fn lookup(t: &[f64]) -> impl Fn(&CoalitionMask) -> xaiscope::Result<f64> + Copy + '_ {
    move |m| Ok(t[m.to_index().unwrap() as usize])
}

// ---------------------------------------------------------------------------
// Shared desk-scale run: 1000 samples from seed 9, the first 800 train the
// model and the last 200 are held out; the first 50 held-out images are
// explained with every method.

const EXPLAINED: usize = 50;
const GRID_ROWS: usize = 7;

struct DeskRun {
    model: ToyConvNet,
    held_out: Vec<Sample>,
    accuracy: f64,
    explanations: Vec<ImageExplanation>,
    explain_time: Duration,
    train_time: Duration,
}

fn desk_options() -> ExplainOptions {
    ExplainOptions::shared_grid(3, 3)
}

fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let data = gen_shapes_dataset(1000, 9).unwrap();
        let (train_set, held_out) = data.split_at(800);
        let t = Instant::now();
        let (model, _) = train(&build_toycnn(9), train_set, 5, 0.005, 9).unwrap();
        let train_time = t.elapsed();
        let accuracy = accuracy(&model, held_out).unwrap();
        let options = desk_options();
        let t = Instant::now();
        let explanations = held_out[..EXPLAINED]
            .iter()
            .map(|s| explain_image(&model, &s.image, None, &options).unwrap())
            .collect();
        DeskRun {
            model,
            held_out: held_out.to_vec(),
            accuracy,
            explanations,
            explain_time: t.elapsed(),
            train_time,
        }
    })
}

fn grid_bytes(
    model: &ToyConvNet,
    samples: &[Sample],
    explanations: &[ImageExplanation],
) -> Vec<u8> {
    let rows: Vec<_> = samples
        .iter()
        .zip(explanations)
        .map(|(s, e)| overlay_row(&s.image, e, 0.5).unwrap())
        .collect();
    let labels: Vec<String> = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            format!(
                "{i} {}",
                xaiscope::model::CLASS_NAMES[model.predict(&s.image).unwrap().argmax()]
            )
        })
        .collect();
    render_grid(&rows, &labels).unwrap().to_ppm()
}

// ---------------------------------------------------------------------------

#[test]
fn criterion_1_gradient_soundness() {
    let t = Instant::now();
    let outcome = verify_gradients(10, 50, 2024).unwrap();
    let elapsed = t.elapsed();
    let ok = outcome.passed() && outcome.checks >= 500 && elapsed < Duration::from_secs(60);
    report(
        1,
        "gradient soundness",
        ok,
        &format!(
            "{} parameters, max relative error {:.2e}, {:.1?}",
            outcome.checks, outcome.max_error, elapsed
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_2_shapley_exactness() {
    let mut worst = 0.0f64;
    let mut efficiency = 0.0f64;
    for seed in 0..20 {
        let t = random_table(8, 100 + seed);
        let phi = exact_shapley(lookup(&t), 8, 12).unwrap();
        let oracle = permutation_shapley(lookup(&t), 8, &OracleBudget::default()).unwrap();
        worst = phi
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(worst, f64::max);
        efficiency = efficiency.max((phi.iter().sum::<f64>() - (t[255] - t[0])).abs());
    }

    // Dummy: feature 5 ignored by the game.
    let base = random_table(8, 7);
    let phi = exact_shapley(
        |m| Ok(base[(m.to_index().unwrap() & !(1 << 5)) as usize]),
        8,
        12,
    )
    .unwrap();
    let dummy = phi[5].abs();

    // Symmetry: a game invariant under swapping features 2 and 6.
    let swap = |s: usize| (s & !0b100_0100) | (s >> 2 & 1) << 6 | (s >> 6 & 1) << 2;
    let sym: Vec<f64> = (0..256).map(|s| base[s] + base[swap(s)]).collect();
    let phi = exact_shapley(lookup(&sym), 8, 12).unwrap();
    let symmetry = (phi[2] - phi[6]).abs();

    // Additivity and linearity.
    let w = [0.2, -0.1, 0.5, 0.0, 0.3, 0.05, -0.4, 0.25];
    let phi = exact_shapley(
        |m| Ok((0..8).filter(|&i| m.is_present(i)).map(|i| w[i]).sum()),
        8,
        12,
    )
    .unwrap();
    let additivity = phi
        .iter()
        .zip(w)
        .map(|(p, x)| (p - x).abs())
        .fold(0.0, f64::max);
    let (v1, v2) = (random_table(8, 31), random_table(8, 32));
    let mix: Vec<f64> = v1
        .iter()
        .zip(&v2)
        .map(|(a, b)| 1.5 * a - 0.75 * b)
        .collect();
    let (p1, p2, pm) = (
        exact_shapley(lookup(&v1), 8, 12).unwrap(),
        exact_shapley(lookup(&v2), 8, 12).unwrap(),
        exact_shapley(lookup(&mix), 8, 12).unwrap(),
    );
    let linearity = (0..8)
        .map(|i| (pm[i] - (1.5 * p1[i] - 0.75 * p2[i])).abs())
        .fold(0.0, f64::max);

    let ok = worst <= 1e-9
        && efficiency <= 1e-9
        && dummy <= 1e-12
        && symmetry <= 1e-9
        && additivity <= 1e-9
        && linearity <= 1e-9;
    report(
        2,
        "Shapley exactness",
        ok,
        &format!(
            "oracle {worst:.1e}, efficiency {efficiency:.1e}, dummy {dummy:.1e}, symmetry {symmetry:.1e}, \
             additivity {additivity:.1e}, linearity {linearity:.1e}"
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_3_monte_carlo_convergence() {
    let t = random_table(10, 77);
    let exact = exact_shapley(lookup(&t), 10, 12).unwrap();
    let err = |n: usize, seed: u64| {
        let mc = mc_shapley(lookup(&t), 10, n, seed).unwrap();
        exact
            .iter()
            .zip(&mc.phi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    };
    let single = err(2000, 1);
    let means: Vec<f64> = [100, 500, 2000]
        .iter()
        .map(|&n| (0..10).map(|s| err(n, s)).sum::<f64>() / 10.0)
        .collect();
    let ok = single <= 0.02 && means[0] > means[1] && means[1] > means[2];
    report(
        3,
        "Monte-Carlo convergence",
        ok,
        &format!("max error at 2000 = {single:.4}, mean errors {means:.4?}"),
    );
    assert!(ok);
}

#[test]
fn criterion_4_lime_fidelity() {
    let k = 10;
    let mut rng = SplitMix64::new(4);
    let planted: Vec<f64> = (0..k).map(|_| rng.symmetric(0.5)).collect();
    let config = LimeConfig {
        sampling: MaskSampling::Exhaustive,
        ridge: 1e-12,
        top_k: k,
        ..LimeConfig::default()
    };
    let exp = explain_lime_game(
        |m| {
            Ok(0.3
                + (0..k)
                    .filter(|&i| m.is_present(i))
                    .map(|i| planted[i])
                    .sum::<f64>())
        },
        k,
        &config,
    )
    .unwrap();
    let planted_err = exp
        .coefficients
        .iter()
        .zip(&planted)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let constant = explain_lime_game(|_| Ok(0.42), k, &config).unwrap();
    let constant_err = constant
        .coefficients
        .iter()
        .map(|c| c.abs())
        .fold(0.0, f64::max);
    let ok = planted_err <= 1e-6 && constant_err <= 1e-9;
    report(
        4,
        "LIME fidelity",
        ok,
        &format!("planted error {planted_err:.1e}, constant error {constant_err:.1e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_5_guided_policy() {
    let mut rng = SplitMix64::new(55);
    let n = 100_000;
    let x: Vec<f64> = (0..n).map(|_| rng.symmetric(1.0)).collect();
    let up: Vec<f64> = (0..n).map(|_| rng.symmetric(1.0)).collect();
    let out = relu_backward(&x, &up, ReluPolicy::Guided);
    let site_errors = (0..n)
        .filter(|&i| {
            out[i]
                != if x[i] > 0.0 && up[i] > 0.0 {
                    up[i]
                } else {
                    0.0
                }
        })
        .count();

    let model = build_toycnn(5);
    let mut violations = 0;
    for (i, s) in gen_shapes_dataset(20, 55).unwrap().iter().enumerate() {
        let class = i % 4;
        let guided = guided_backprop(&model, &s.image, class).unwrap();
        let input = model.input_tensor(&s.image).unwrap();
        let standard =
            guided_from_network(model.network(), &input, class, ReluPolicy::Standard).unwrap();
        violations += guided
            .gradient
            .data()
            .iter()
            .zip(standard.gradient.data())
            .filter(|(g, s)| **g != 0.0 && **s == 0.0)
            .count();
    }
    let ok = site_errors == 0 && violations == 0;
    report(
        5,
        "guided policy",
        ok,
        &format!("{site_errors} site mismatches over {n}, {violations} support violations over 20 images"),
    );
    assert!(ok);
}

#[test]
fn criterion_6_gradcam_analytic() {
    // Unit-gradient head: ReLU tapped, then a sum.
    let (h, w) = (6, 5);
    let head = Affine::new(
        Tensor::new(vec![1, h * w], vec![1.0; h * w]).unwrap(),
        Tensor::zeros(vec![1]),
    )
    .unwrap();
    let net = Network::new(vec![
        ("act".into(), Layer::Relu),
        ("sum".into(), Layer::Affine(head)),
    ]);
    let mut rng = SplitMix64::new(6);
    let a = Tensor::new(
        vec![1, h, w],
        (0..h * w).map(|_| rng.symmetric(1.0)).collect(),
    )
    .unwrap();
    let r = gradcam_from_network(&net, &a, 0, 0, h, w).unwrap();
    let relu: Vec<f64> = a.data().iter().map(|v| v.max(0.0)).collect();
    let unit_ok = r.raw.data() == &relu[..] && r.alphas == vec![1.0];

    let run = desk_run();
    let model = &run.model;
    let image = &run.held_out[0].image;
    let class = model.predict(image).unwrap().argmax();
    let cam = gradcam_heatmap(model, image, class, "relu2").unwrap();
    let net = model.network();
    let tape = net
        .record(&model.input_tensor(image).unwrap(), [4])
        .unwrap();
    let act = tape.activation(4).unwrap().clone();
    let (ah, aw) = (act.shape()[1], act.shape()[2]);
    let eps = 1e-4;
    let shifted = |k: usize, d: f64| {
        let mut t = act.clone();
        t.data_mut()[k * ah * aw..(k + 1) * ah * aw]
            .iter_mut()
            .for_each(|v| *v += d);
        net.eval_from(5, t).unwrap().data()[class]
    };
    let mut worst = 0.0f64;
    for (k, &alpha) in cam.alphas.iter().enumerate() {
        let numeric = (shifted(k, eps) - shifted(k, -eps)) / (2.0 * eps) / (ah * aw) as f64;
        worst = worst.max((numeric - alpha).abs() / alpha.abs().max(numeric.abs()).max(1e-6));
    }
    let ok = unit_ok && worst <= 1e-5;
    report(
        6,
        "Grad-CAM analytic cases",
        ok,
        &format!("unit head exact: {unit_ok}, max alpha relative error {worst:.2e}"),
    );
    assert!(ok);
}

#[test]
fn criterion_7_desk_scale_run() {
    let run = desk_run();
    let accuracy_ok = run.accuracy >= 0.95;
    let time_ok = run.explain_time < Duration::from_secs(600);
    let complete = run.explanations.len() == EXPLAINED
        && run.explanations.iter().all(|e| e.results.len() == 4);

    let samples = &run.held_out[..GRID_ROWS];
    let first = grid_bytes(&run.model, samples, &run.explanations[..GRID_ROWS]);
    let again: Vec<ImageExplanation> = samples
        .iter()
        .map(|s| explain_image(&run.model, &s.image, None, &desk_options()).unwrap())
        .collect();
    let second = grid_bytes(&run.model, samples, &again);
    let grid_ok = first == second;

    let ok = accuracy_ok && time_ok && complete && grid_ok;
    report(
        7,
        "desk-scale run",
        ok,
        &format!(
            "held-out accuracy {:.3} (needs 0.95), training {:.1?}, {} images explained in {:.1?}, grid stable: {grid_ok}",
            run.accuracy,
            run.train_time,
            run.explanations.len(),
            run.explain_time
        ),
    );
    assert!(
        time_ok && complete && grid_ok,
        "explainer run or grid determinism failed"
    );
    assert!(
        accuracy_ok,
        "held-out accuracy {:.3} is below 0.95",
        run.accuracy
    );
}

#[test]
fn criterion_8_comparative_signal() {
    let run = desk_run();
    let mut sums = [0.0f64; 3];
    for (i, (s, e)) in run.held_out.iter().zip(&run.explanations).enumerate() {
        sums[0] += e.get(Method::Gradcam).unwrap().deletion_auc;
        sums[1] += e.get(Method::Shap).unwrap().deletion_auc;
        let random = random_attribution(s.image.pixel_count(), 1000 + i as u64);
        sums[2] += deletion_auc(
            &run.model,
            &s.image,
            &random,
            e.class_index,
            20,
            Baseline::default(),
        )
        .unwrap();
    }
    let [gradcam, shap, random] = sums.map(|v| v / EXPLAINED as f64);
    let ok = random - gradcam >= 0.05 && random - shap >= 0.05;
    report(
        8,
        "comparative signal",
        ok,
        &format!("mean deletion AUC: Grad-CAM {gradcam:.4}, SHAP {shap:.4}, random {random:.4}"),
    );
    assert!(ok);
}

#[test]
fn criterion_9_serialization() {
    let dir = tempfile::tempdir().unwrap();
    let model = build_toycnn(99);
    let path = dir.path().join("model.xaiw");
    save_weights(&model, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let loaded = load_weights(&path).unwrap();
    let weights_ok = encode_weights(&loaded) == bytes && decode_weights(&bytes).unwrap() == model;

    // Digest recomputed here, independent of the library.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in &bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    let expected_digest = format!("{h:016x}");

    let sample = &gen_shapes_dataset(1, 3).unwrap()[0];
    let options = ExplainOptions {
        methods: vec![Method::Shap, Method::Gradcam],
        ..ExplainOptions::default()
    };
    let e = explain_image(&loaded, &sample.image, None, &options).unwrap();
    let bundle = build_report(
        &sample.image,
        "sample.ppm",
        &e,
        &xaiscope::report::digest_hex(&bytes),
        0.5,
    )
    .unwrap();
    let out = dir.path().join("report");
    write_report(&bundle, &out).unwrap();
    let text = std::fs::read_to_string(out.join("report.json")).unwrap();
    let parsed: ReportDocument = serde_json::from_str(&text).unwrap();
    let report_ok = Some(&parsed) == bundle.document.as_ref();
    let digest_ok = parsed.model_digest == expected_digest;
    let map_ok = out.join("gradcam_map.pgm").is_file();

    let ok = weights_ok && report_ok && digest_ok && map_ok;
    report(
        9,
        "serialization",
        ok,
        &format!(
            "weights round trip {weights_ok}, report round trip {report_ok}, digest {digest_ok}"
        ),
    );
    assert!(ok);
}
