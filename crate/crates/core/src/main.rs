//! Command-line entry point: dataset generation, training, inference,
//! evaluation, and shape inspection.
//!
//! Exit codes: 0 success, 1 runtime/data error, 2 usage/config error.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use salfau::checkpoint;
use salfau::config::Config;
use salfau::data::{self, DatasetManifest};
use salfau::metrics;
use salfau::network::{shape_plan, SalFAUNet};
use salfau::nn::Mode;
use salfau::optim::{train_loop, Adam, TrainOptions};
use salfau::Tensor;

/// Saliency detection toolkit. Option precedence: command-line flags
/// override config-file values, which override built-in defaults.
#[derive(Parser)]
#[command(name = "salfau", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a seeded synthetic shapes dataset with masks and manifest.
    GenData {
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
        /// Number of image/mask pairs.
        #[arg(long)]
        count: usize,
        /// Square image side in pixels (at least 16).
        #[arg(long)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train on a manifest dataset; writes the checkpoint and a
    /// `<out>.loss.tsv` loss log.
    Train {
        /// Dataset manifest (image<TAB>mask lines).
        #[arg(long)]
        data: PathBuf,
        /// Config file of `key = value` lines.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Override the configured iteration count.
        #[arg(long)]
        iters: Option<usize>,
        /// Override the configured batch size.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Predict a saliency map for one image, restored to its original size.
    Predict {
        /// Checkpoint path.
        #[arg(long)]
        model: PathBuf,
        /// Input image (binary PPM or PGM).
        #[arg(long)]
        input: PathBuf,
        /// Output saliency map (binary PGM).
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate predicted maps against ground-truth masks by file stem.
    Eval {
        /// Directory of predicted .pgm maps.
        #[arg(long)]
        pred: PathBuf,
        /// Directory of ground-truth .pgm masks.
        #[arg(long)]
        gt: PathBuf,
        /// Report output path (TSV).
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the per-stage shape table for a configuration.
    Shapes {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum CliError {
    /// Bad flags or configuration: exit code 2.
    Usage(String),
    /// Data, IO, or checkpoint problems at run time: exit code 1.
    Runtime(String),
}

type CliResult = Result<(), CliError>;

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Cmd) -> CliResult {
    match cmd {
        Cmd::GenData {
            out,
            count,
            size,
            seed,
        } => gen_data(&out, count, size, seed),
        Cmd::Train {
            data,
            config,
            out,
            iters,
            batch,
        } => train(&data, config.as_deref(), &out, iters, batch),
        Cmd::Predict {
            model,
            input,
            output,
        } => predict(&model, &input, &output),
        Cmd::Eval {
            pred,
            gt,
            report,
            config,
        } => eval(&pred, &gt, &report, config.as_deref()),
        Cmd::Shapes { config } => shapes(config.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        Some(p) => Config::from_file(p).map_err(usage),
        None => Ok(Config::default()),
    }
}

fn gen_data(out: &Path, count: usize, size: usize, seed: u64) -> CliResult {
    if count == 0 {
        return Err(CliError::Usage("--count must be at least 1".into()));
    }
    if size < 16 {
        return Err(CliError::Usage("--size must be at least 16".into()));
    }
    let manifest = data::gen_synthetic(count, size, seed, out).map_err(runtime)?;
    println!(
        "wrote {} pairs under {} (manifest.tsv)",
        manifest.entries.len(),
        out.display()
    );
    Ok(())
}

fn train(
    data_path: &Path,
    config: Option<&Path>,
    out: &Path,
    iters: Option<usize>,
    batch: Option<usize>,
) -> CliResult {
    let mut cfg = load_config(config)?;
    if let Some(i) = iters {
        cfg.iters = i;
    }
    if let Some(b) = batch {
        if b == 0 {
            return Err(CliError::Usage("--batch must be at least 1".into()));
        }
        cfg.batch = b;
    }
    let net = SalFAUNet::<f32>::new(cfg.network(), cfg.seed).map_err(usage)?;
    let weights = cfg.weights();
    weights.validate().map_err(usage)?;

    let manifest = DatasetManifest::read(data_path).map_err(runtime)?;
    let dataset = manifest.load_samples().map_err(runtime)?;

    let mut adam = Adam::new(net.trainable_params(), cfg.hyper());
    let opts = TrainOptions {
        iters: cfg.iters,
        batch: cfg.batch,
        seed: cfg.seed.wrapping_add(1),
        weights,
        checkpoint_every: cfg.checkpoint_every,
    };
    let history = train_loop(&net, &mut adam, &dataset, &opts, |_, n, a| {
        checkpoint::save(out, &n.to_records(), Some(&a.to_records()))
    })
    .map_err(runtime)?;

    checkpoint::save(out, &net.to_records(), Some(&adam.to_records())).map_err(runtime)?;
    let log_path = loss_log_path(out);
    let mut log = String::new();
    for (i, loss) in history.iter().enumerate() {
        log.push_str(&format!("{}\t{:.6}\n", i + 1, loss));
    }
    std::fs::write(&log_path, log).map_err(runtime)?;

    match history.last() {
        Some(last) => println!(
            "trained {} iterations, final loss {:.6}; checkpoint {}, loss log {}",
            history.len(),
            last,
            out.display(),
            log_path.display()
        ),
        None => println!(
            "trained 0 iterations; checkpoint {} equals initialization",
            out.display()
        ),
    }
    Ok(())
}

fn loss_log_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".loss.tsv");
    out.with_file_name(name)
}

fn predict(model: &Path, input: &Path, output: &Path) -> CliResult {
    let (records, _) = checkpoint::load(model).map_err(runtime)?;
    let cfg = checkpoint::config_from_records(&records).map_err(runtime)?;
    let net = SalFAUNet::<f32>::new(cfg, 0).map_err(runtime)?;
    net.load_records(&records).map_err(runtime)?;
    net.set_requires_grad(false);

    let raster = data::read_image(input).map_err(runtime)?;
    let (x, orig) = data::preprocess_test(&raster, cfg.input_size);
    let outputs = net.forward(&x, Mode::Eval).map_err(runtime)?;
    let restored = data::restore_map(&outputs.fused, orig).map_err(runtime)?;
    // Interpolation can leave sub-ulp excursions outside the open sigmoid
    // range; pin the written map to [0,1].
    let clamped = Tensor::from_fn(restored.shape().to_vec(), |i| {
        restored.data()[i].clamp(0.0, 1.0)
    });
    data::write_pgm(output, &clamped).map_err(runtime)?;
    println!("wrote {} ({}x{})", output.display(), orig.1, orig.0);
    Ok(())
}

fn pgm_stems(dir: &Path) -> Result<BTreeSet<String>, CliError> {
    let mut stems = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(runtime)? {
        let path = entry.map_err(runtime)?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.insert(stem.to_string());
            }
        }
    }
    Ok(stems)
}

fn eval(pred: &Path, gt: &Path, report_path: &Path, config: Option<&Path>) -> CliResult {
    let cfg = load_config(config)?;
    let names: Vec<String> = pgm_stems(pred)?
        .intersection(&pgm_stems(gt)?)
        .cloned()
        .collect();
    if names.is_empty() {
        return Err(CliError::Runtime(format!(
            "no .pgm stems shared between {} and {}",
            pred.display(),
            gt.display()
        )));
    }
    let pairs: Vec<metrics::PairInput> = names
        .into_iter()
        .map(|name| {
            let loaded = load_pair(
                &pred.join(format!("{name}.pgm")),
                &gt.join(format!("{name}.pgm")),
            );
            (name, loaded)
        })
        .collect();
    let report = metrics::evaluate_dataset(pairs, &cfg.metrics()).map_err(runtime)?;
    let text = metrics::render_report(&report);
    std::fs::write(report_path, &text).map_err(runtime)?;
    if let Some(mean) = text.lines().last() {
        println!("{mean}");
    }
    Ok(())
}

fn load_pair(pred: &Path, gt: &Path) -> salfau::Result<(Tensor<f32>, Tensor<f32>)> {
    let p = data::read_image(pred)?;
    let g = data::read_image(gt)?;
    let p_map = data::mask_tensor(&p)?;
    // Ground truth binarizes at the 8-bit midpoint.
    let g_map = Tensor::from_vec(
        vec![1, g.height, g.width],
        g.data
            .iter()
            .map(|&b| if b >= 128 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    Ok((p_map, g_map))
}

fn shapes(config: Option<&Path>) -> CliResult {
    let cfg = load_config(config)?;
    let plan = shape_plan(&cfg.network()).map_err(usage)?;
    for row in plan {
        println!("{row}");
    }
    Ok(())
}
