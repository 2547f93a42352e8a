use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use xaiscope::model::{
    accuracy, build_toycnn, gen_shapes_dataset, load_dataset, load_weights, save_dataset,
    save_weights, train, ModelHandle, Opaque, ToyConvNet, CLASS_NAMES, DEFAULT_TAP,
};
use xaiscope::pipeline::{build_report, explain_image, overlay_row, ExplainOptions};
use xaiscope::report::{digest_hex, render_grid, write_report, Method};
use xaiscope::shap::ShapMode;
use xaiscope::verify::Suite;
use xaiscope::{ImageU8, Result, XaiError};

#[derive(Parser)]
#[command(
    name = "xaiscope",
    version,
    about = "Explain a toy image classifier with LIME, SHAP, Grad-CAM and guided backpropagation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shapes dataset as NNNNN_<label>.ppm files.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the toy CNN with plain SGD.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 5)]
        epochs: usize,
        #[arg(long, default_value_t = 0.005)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Explain one image and write report.json with overlays and maps.
    Explain(ExplainArgs),
    /// Render the comparison grid for the first images of a directory.
    Grid(GridArgs),
    /// Check fast paths against the brute-force oracles.
    Verify {
        #[arg(long, value_enum, default_value_t = SuiteArg::All)]
        suite: SuiteArg,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Lime,
    Shap,
    Gradcam,
    Guided,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Lime => vec![Method::Lime],
            MethodArg::Shap => vec![Method::Shap],
            MethodArg::Gradcam => vec![Method::Gradcam],
            MethodArg::Guided => vec![Method::Guided],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapModeArg {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Shapley,
    Grad,
    Wls,
    All,
}

#[derive(Clone, Copy)]
enum ClassArg {
    Auto,
    Index(usize),
}

fn parse_class(s: &str) -> std::result::Result<ClassArg, String> {
    if s == "auto" {
        return Ok(ClassArg::Auto);
    }
    s.parse()
        .map(ClassArg::Index)
        .map_err(|_| format!("expected 'auto' or a class index, got '{s}'"))
}

/// Settings shared by `explain` and `grid`.
#[derive(Args)]
struct MethodSettings {
    /// Superpixel grid rows (default 3 when methods share a grid, 8 for LIME alone).
    #[arg(long)]
    grid_rows: Option<usize>,
    #[arg(long)]
    grid_cols: Option<usize>,
    #[arg(long, value_enum, default_value_t = ShapModeArg::Exact)]
    shap_mode: ShapModeArg,
    /// Permutations for Monte-Carlo SHAP.
    #[arg(long, default_value_t = 1000)]
    perms: usize,
    #[arg(long, default_value = DEFAULT_TAP)]
    tap: String,
    #[arg(long, default_value_t = 1000)]
    lime_samples: usize,
    /// Seed for LIME masks and SHAP permutations.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    method: MethodArg,
    #[arg(long, value_parser = parse_class, default_value = "auto")]
    class: ClassArg,
    /// Hide the model's gradients, as for a remote black box.
    #[arg(long)]
    opaque: bool,
    #[command(flatten)]
    settings: MethodSettings,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    model: PathBuf,
    /// Directory of 64×64 PPM images, taken in file-name order.
    #[arg(long)]
    images: PathBuf,
    /// Number of rows.
    #[arg(long, default_value_t = 7)]
    limit: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    methods: MethodArg,
    #[command(flatten)]
    settings: MethodSettings,
    #[arg(long)]
    out: PathBuf,
}

fn options(methods: &[Method], s: &MethodSettings) -> Result<ExplainOptions> {
    let shared = methods.len() > 1;
    let default_side = if methods == [Method::Lime] { 8 } else { 3 };
    let rows = s.grid_rows.unwrap_or(default_side);
    let cols = s.grid_cols.unwrap_or(default_side);
    if rows == 0 || cols == 0 {
        return Err(XaiError::Argument(
            "grid rows and columns must be positive".into(),
        ));
    }
    let mut o = ExplainOptions::shared_grid(rows, cols);
    o.methods = methods.to_vec();
    if !shared && methods == [Method::Lime] {
        o.lime.top_k = 8.min(rows * cols);
    }
    o.lime.n_samples = s.lime_samples;
    o.lime.seed = s.seed;
    o.shap.seed = s.seed;
    o.shap.mode = match s.shap_mode {
        ShapModeArg::Exact => ShapMode::Exact,
        ShapModeArg::Mc => ShapMode::MonteCarlo {
            n_permutations: s.perms,
        },
    };
    o.tap = s.tap.clone();
    if !(0.0..=1.0).contains(&s.alpha) {
        return Err(XaiError::Argument(format!(
            "alpha must lie in [0, 1], got {}",
            s.alpha
        )));
    }
    o.overlay_alpha = s.alpha;
    Ok(o)
}

fn options_json(o: &ExplainOptions) -> serde_json::Value {
    json!({
        "methods": o.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "lime_grid": [o.lime_grid.0, o.lime_grid.1],
        "shap_grid": [o.shap_grid.0, o.shap_grid.1],
        "lime": o.lime,
        "shap": o.shap,
        "tap": o.tap,
        "deletion_steps": o.deletion_steps,
        "alpha": o.overlay_alpha,
    })
}

fn print_config(command: &str, config: serde_json::Value) {
    eprintln!("{command}: {}", json!({ "config": config }));
}

fn load_model(path: &Path) -> Result<(ToyConvNet, String)> {
    let bytes = fs::read(path).map_err(|e| XaiError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok((load_weights(path)?, digest_hex(&bytes)))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::GenData { n, seed, out } => {
            print_config("gen-data", json!({"n": n, "seed": seed, "out": out}));
            let samples = gen_shapes_dataset(n, seed)?;
            save_dataset(&out, &samples)?;
            println!("wrote {n} samples to {}", out.display());
        }
        Command::Train {
            data,
            epochs,
            lr,
            seed,
            out,
        } => {
            print_config(
                "train",
                json!({"data": data, "epochs": epochs, "lr": lr, "seed": seed, "out": out}),
            );
            let samples = load_dataset(&data)?;
            if samples.is_empty() {
                return Err(XaiError::Argument(format!(
                    "no NNNNN_<label>.ppm files in {}",
                    data.display()
                )));
            }
            let (model, losses) = train(&build_toycnn(seed), &samples, epochs, lr, seed)?;
            for (i, loss) in losses.iter().enumerate() {
                eprintln!("epoch {}: mean loss {loss:.6}", i + 1);
            }
            save_weights(&model, &out)?;
            println!(
                "training accuracy {:.4} over {} samples; weights in {}",
                accuracy(&model, &samples)?,
                samples.len(),
                out.display()
            );
        }
        Command::Explain(args) => {
            let o = options(&args.method.methods(), &args.settings)?;
            let class = match args.class {
                ClassArg::Auto => None,
                ClassArg::Index(i) => Some(i),
            };
            let mut config = options_json(&o);
            config["model"] = json!(args.model);
            config["image"] = json!(args.image);
            config["class"] = class.map_or(json!("auto"), |c| json!(c));
            config["opaque"] = json!(args.opaque);
            config["out"] = json!(args.out);
            print_config("explain", config);

            let (model, digest) = load_model(&args.model)?;
            let image = ImageU8::read_ppm(&args.image)?;
            let opaque = Opaque(&model);
            let handle: &dyn ModelHandle = if args.opaque { &opaque } else { &model };
            let explanation = explain_image(handle, &image, class, &o)?;
            let bundle = build_report(
                &image,
                &args.image.display().to_string(),
                &explanation,
                &digest,
                o.overlay_alpha,
            )?;
            write_report(&bundle, &args.out)?;
            println!(
                "class {} ({}), p = {:.4}",
                explanation.class_index,
                CLASS_NAMES.get(explanation.class_index).unwrap_or(&"?"),
                explanation.probabilities[explanation.class_index]
            );
            for r in &explanation.results {
                println!(
                    "{:8} deletion AUC {:.4}",
                    r.attribution.method.name(),
                    r.deletion_auc
                );
            }
        }
        Command::Grid(args) => {
            let o = options(&args.methods.methods(), &args.settings)?;
            let mut config = options_json(&o);
            config["model"] = json!(args.model);
            config["images"] = json!(args.images);
            config["limit"] = json!(args.limit);
            config["out"] = json!(args.out);
            print_config("grid", config);
            if args.limit == 0 {
                return Err(XaiError::Argument("--limit must be at least 1".into()));
            }

            let (model, _) = load_model(&args.model)?;
            let mut files: Vec<PathBuf> = fs::read_dir(&args.images)
                .map_err(|e| XaiError::Io {
                    path: args.images.clone(),
                    source: e,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
                .collect();
            files.sort();
            files.truncate(args.limit);
            if files.is_empty() {
                return Err(XaiError::Argument(format!(
                    "no .ppm images in {}",
                    args.images.display()
                )));
            }
            let mut rows = Vec::new();
            let mut labels = Vec::new();
            for (i, path) in files.iter().enumerate() {
                let image = ImageU8::read_ppm(path)?;
                let e = explain_image(&model, &image, None, &o)?;
                eprintln!("[{}/{}] {}", i + 1, files.len(), path.display());
                rows.push(overlay_row(&image, &e, o.overlay_alpha)?);
                let name = path
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                labels.push(format!(
                    "{name}: {}",
                    CLASS_NAMES.get(e.class_index).unwrap_or(&"?")
                ));
            }
            let grid = render_grid(&rows, &labels)?;
            if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| XaiError::Io {
                    path: parent.to_path_buf(),
                    source: e,
                })?;
            }
            fs::write(&args.out, grid.to_ppm()).map_err(|e| XaiError::Io {
                path: args.out.clone(),
                source: e,
            })?;
            println!(
                "wrote {}×{} grid to {}",
                grid.image.height(),
                grid.image.width(),
                args.out.display()
            );
        }
        Command::Verify { suite } => {
            let suites: Vec<Suite> = match suite {
                SuiteArg::Shapley => vec![Suite::Shapley],
                SuiteArg::Grad => vec![Suite::Grad],
                SuiteArg::Wls => vec![Suite::Wls],
                SuiteArg::All => Suite::ALL.to_vec(),
            };
            print_config(
                "verify",
                json!({"suites": suites.iter().map(|s| s.name()).collect::<Vec<_>>()}),
            );
            let mut all_passed = true;
            for s in suites {
                let outcome = s.run()?;
                println!("{outcome}");
                all_passed &= outcome.passed();
            }
            return Ok(all_passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
