//! The `cae` command-line tool.
//!
//! Subcommands: `gen-data`, `train`, `eval`, `equivariance`, `ablate`,
//! `objectwise`, `render`. Every run prints its resolved configuration, all
//! outputs land under `--out`, and exit codes are 0 (ok), 1 (usage),
//! 2 (data), 3 (numeric failure).

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{format::read_sample_at, mnist, Dataset, DatasetSpec, DatasetVariant, Split};
use crate::error::{CaeError, Result};
use crate::eval::{
    equivariance_harness, evaluate, kmeans, phase_features, objectwise_finetune, render,
    ObjectwiseConfig,
};
use crate::layers::AblationFlags;
use crate::model::{CaeConfig, CaeModel};
use crate::rng::derive_seed;
use crate::train::{load_checkpoint, save_checkpoint, train_loop, AdamState, TrainConfig};

#[derive(Parser)]
#[command(name = "cae", version, about = "Complex-valued autoencoder for object discovery")]
struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    GenData(GenDataArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Measure global rotation equivariance errors.
    Equivariance(EquivarianceArgs),
    /// Train and evaluate the component-removal variants.
    Ablate(AblateArgs),
    /// Fine-tune the decoder for object-wise reconstructions.
    Objectwise(ObjectwiseArgs),
    /// Render input/reconstruction/phase/prediction panels.
    Render(RenderArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    variant: String,
    #[arg(long)]
    split: String,
    /// Number of images (default: 50,000 train / 10,000 val and test).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    image_size: usize,
    /// Directory holding the four standard IDX digit files.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Validation dataset file (optional).
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_interval: Option<u64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    val_images: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    /// none, no-phase-bias, no-chi, no-batchnorm, no-f-out.
    #[arg(long)]
    ablation: Option<String>,
    /// Resume from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EquivarianceArgs {
    /// Checkpoint to test; a fresh random-init model when omitted.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    images: usize,
    #[arg(long, default_value_t = 16)]
    alphas: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    #[arg(long)]
    val_data: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ObjectwiseArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    steps: u64,
    #[arg(long, default_value_t = 5e-5)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// How many images get per-object reconstruction panels.
    #[arg(long, default_value_t = 6)]
    samples: usize,
    #[arg(long)]
    max_images: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Sample index within the dataset file.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    // Thread count applies to every parallel section. Ignore failure when a
    // pool already exists (repeated calls in one process, e.g. tests).
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global();

    let result = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Train(args) => train(args),
        Command::Eval(args) => eval_cmd(args),
        Command::Equivariance(args) => equivariance(args),
        Command::Ablate(args) => ablate(args),
        Command::Objectwise(args) => objectwise(args),
        Command::Render(args) => render_cmd(args),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(CaeError::Format(format!(
            "{what} not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn load_digits(dir: &Path, split: Split) -> Result<mnist::MnistStore> {
    let (img, lab) = match split {
        Split::Train | Split::Val => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    };
    let (img, lab) = (dir.join(img), dir.join(lab));
    require_file(&img, "IDX image file")?;
    require_file(&lab, "IDX label file")?;
    mnist::load_mnist_idx(&img, &lab)
}

fn gen_data(args: GenDataArgs) -> Result<()> {
    let variant = DatasetVariant::parse(&args.variant)?;
    let split = Split::parse(&args.split)?;
    let mut spec = DatasetSpec::new(variant, split, args.seed);
    spec.image_size = args.image_size;
    if let Some(count) = args.count {
        spec.count = count;
    }
    println!("command = gen-data");
    println!("variant = {}", variant.name());
    println!("split = {}", split.name());
    println!("count = {}", spec.count);
    println!("seed = {}", spec.seed);
    println!("image_size = {}", spec.image_size);

    let digits = match (&args.mnist_dir, variant.needs_digits()) {
        (Some(dir), _) => Some(load_digits(dir, split)?),
        (None, true) => {
            return Err(CaeError::InvalidArgument(
                "this variant needs --mnist-dir with the IDX digit files".into(),
            ))
        }
        (None, false) => None,
    };
    std::fs::create_dir_all(&args.out)?;
    let dataset = Dataset::generate(&spec, digits.as_ref())?;
    let path = args.out.join(format!("{}-{}.caed", variant.name(), split.name()));
    dataset.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse_ablation(name: &str) -> Result<AblationFlags> {
    let mut flags = AblationFlags::default();
    match name {
        "none" => {}
        "no-phase-bias" => flags.disable_phase_bias = true,
        "no-chi" => flags.disable_chi = true,
        "no-batchnorm" => flags.disable_batchnorm = true,
        "no-f-out" => flags.disable_f_out = true,
        other => {
            return Err(CaeError::InvalidArgument(format!(
                "unknown ablation {other:?} (none, no-phase-bias, no-chi, no-batchnorm, no-f-out)"
            )))
        }
    }
    Ok(flags)
}

fn ablation_name(flags: &AblationFlags) -> &'static str {
    if flags.disable_phase_bias {
        "no-phase-bias"
    } else if flags.disable_chi {
        "no-chi"
    } else if flags.disable_batchnorm {
        "no-batchnorm"
    } else if flags.disable_f_out {
        "no-f-out"
    } else {
        "none"
    }
}

/// Resolve train settings: defaults, then config file, then flags.
fn resolve_train(args: &TrainArgs) -> Result<(TrainConfig, AblationFlags, usize)> {
    let mut cfg = TrainConfig::default();
    let mut flags = AblationFlags::default();
    let mut latent_dim = CaeConfig::default().latent_dim;

    if let Some(path) = &args.config {
        require_file(path, "config file")?;
        let text = std::fs::read_to_string(path)?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CaeError::Format(format!(
                    "{}:{}: expected key=value",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |e: String| CaeError::Format(format!("{}:{}: {e}", path.display(), lineno + 1));
            match key {
                "steps" => cfg.steps = value.parse().map_err(|e| bad(format!("{e}")))?,
                "batch" => cfg.batch_size = value.parse().map_err(|e| bad(format!("{e}")))?,
                "lr" => cfg.peak_lr = value.parse().map_err(|e| bad(format!("{e}")))?,
                "warmup" => cfg.warmup_steps = value.parse().map_err(|e| bad(format!("{e}")))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(format!("{e}")))?,
                "checkpoint_interval" => {
                    cfg.checkpoint_interval = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "eval_interval" => {
                    cfg.eval_interval = value.parse().map_err(|e| bad(format!("{e}")))?
                }
                "val_images" => cfg.val_images = value.parse().map_err(|e| bad(format!("{e}")))?,
                "latent_dim" => latent_dim = value.parse().map_err(|e| bad(format!("{e}")))?,
                "ablation" => flags = parse_ablation(value)?,
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
    }

    if let Some(v) = args.steps {
        cfg.steps = v;
    }
    if let Some(v) = args.batch {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.peak_lr = v;
    }
    if let Some(v) = args.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.checkpoint_interval {
        cfg.checkpoint_interval = v;
    }
    if let Some(v) = args.eval_interval {
        cfg.eval_interval = v;
    }
    if let Some(v) = args.val_images {
        cfg.val_images = v;
    }
    if let Some(v) = args.latent_dim {
        latent_dim = v;
    }
    if let Some(name) = &args.ablation {
        flags = parse_ablation(name)?;
    }
    Ok((cfg, flags, latent_dim))
}

fn resolved_train_text(cfg: &TrainConfig, flags: &AblationFlags, latent_dim: usize) -> String {
    format!(
        "steps = {}\nbatch = {}\nlr = {}\nwarmup = {}\nseed = {}\ncheckpoint_interval = {}\n\
         eval_interval = {}\nval_images = {}\nlatent_dim = {}\nablation = {}\n",
        cfg.steps,
        cfg.batch_size,
        cfg.peak_lr,
        cfg.warmup_steps,
        cfg.seed,
        cfg.checkpoint_interval,
        cfg.eval_interval,
        cfg.val_images,
        latent_dim,
        ablation_name(flags),
    )
}

fn train(args: TrainArgs) -> Result<()> {
    let (cfg, flags, latent_dim) = resolve_train(&args)?;
    require_file(&args.data, "training dataset")?;
    let data = Dataset::load(&args.data)?;
    let val = match &args.val_data {
        Some(p) => {
            require_file(p, "validation dataset")?;
            Some(Dataset::load(p)?)
        }
        None => None,
    };

    let resolved = resolved_train_text(&cfg, &flags, latent_dim);
    print!("command = train\ndata = {}\n{resolved}", args.data.display());
    std::fs::create_dir_all(&args.out)?;
    std::fs::write(args.out.join("config.resolved.txt"), &resolved)?;

    let (mut model, resume) = match &args.resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let (model, state, step) = load_checkpoint(path)?;
            println!("resumed = {} (step {step})", path.display());
            (model, Some((state, step)))
        }
        None => {
            let model_cfg = CaeConfig {
                latent_dim,
                flags,
                seed: cfg.seed,
                image_size: data.image_size,
                ..CaeConfig::default()
            };
            (CaeModel::build(model_cfg)?, None)
        }
    };

    let outcome = train_loop(&mut model, &data, val.as_ref(), &cfg, Some(&args.out), resume)?;
    println!(
        "done: first_mse = {}, last_mse = {}",
        outcome.first_train_mse, outcome.last_train_mse
    );
    if let Some(p) = outcome.final_checkpoint {
        println!("final checkpoint: {}", p.display());
    }
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.data, "dataset")?;
    println!("command = eval");
    println!("checkpoint = {}", args.checkpoint.display());
    println!("data = {}", args.data.display());
    println!("seed = {}", args.seed);
    let (model, _, _) = load_checkpoint(&args.checkpoint)?;
    let data = Dataset::load(&args.data)?;
    let report = evaluate(&model, &data, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let path = args.out.join("eval-report.json");
    report.write(&path)?;
    println!(
        "mse = {}\nari_with_bg = {}\nari_no_bg = {}\nexcluded_overlap_pixels = {}",
        report.mse, report.ari_with_bg, report.ari_no_bg, report.n_excluded_overlap_pixels
    );
    println!("report: {}", path.display());
    Ok(())
}

fn equivariance(args: EquivarianceArgs) -> Result<()> {
    println!("command = equivariance");
    println!("images = {}", args.images);
    println!("alphas = {}", args.alphas);
    println!("seed = {}", args.seed);
    let model = match &args.checkpoint {
        Some(path) => {
            require_file(path, "checkpoint")?;
            println!("checkpoint = {}", path.display());
            load_checkpoint(path)?.0
        }
        None => {
            // Fresh model with generic phase biases: at the all-zero training
            // init the phase metric is ill-conditioned (see
            // CaeModel::randomize_phase_biases).
            println!("checkpoint = (random init)");
            let mut m = CaeModel::build(CaeConfig {
                seed: args.seed,
                ..CaeConfig::default()
            })?;
            m.randomize_phase_biases(args.seed);
            m
        }
    };
    let points = equivariance_harness(&model, args.images, args.alphas, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let mut csv = String::from("alpha,mag_err,phase_err\n");
    println!("{:>10} {:>14} {:>14}", "alpha", "mag_err", "phase_err");
    for p in &points {
        println!("{:>10.6} {:>14.3e} {:>14.3e}", p.alpha, p.mag_err, p.phase_err);
        csv.push_str(&format!("{},{},{}\n", p.alpha, p.mag_err, p.phase_err));
    }
    let path = args.out.join("equivariance.csv");
    std::fs::write(&path, csv)?;
    println!("table: {}", path.display());
    Ok(())
}

fn ablate(args: AblateArgs) -> Result<()> {
    require_file(&args.data, "training dataset")?;
    require_file(&args.test_data, "test dataset")?;
    let data = Dataset::load(&args.data)?;
    let test = Dataset::load(&args.test_data)?;
    let val = match &args.val_data {
        Some(p) => Some(Dataset::load(p)?),
        None => None,
    };
    let mut cfg = TrainConfig {
        seed: args.seed,
        ..TrainConfig::default()
    };
    if let Some(steps) = args.steps {
        cfg.steps = steps;
        cfg.warmup_steps = cfg.warmup_steps.min(steps);
    }
    if let Some(batch) = args.batch {
        cfg.batch_size = batch;
    }
    println!("command = ablate");
    println!("steps = {}", cfg.steps);
    println!("seed = {}", cfg.seed);

    let variants: [(&str, AblationFlags); 5] = [
        ("full", AblationFlags::default()),
        ("-b_phi", AblationFlags { disable_phase_bias: true, ..Default::default() }),
        ("-chi", AblationFlags { disable_chi: true, ..Default::default() }),
        ("-batchnorm", AblationFlags { disable_batchnorm: true, ..Default::default() }),
        ("-f_out", AblationFlags { disable_f_out: true, ..Default::default() }),
    ];

    std::fs::create_dir_all(&args.out)?;
    let mut summary = String::from("name,mse,ari_with_bg,ari_no_bg\n");
    println!("{:<12} {:>12} {:>12} {:>12}", "name", "mse", "ari+bg", "ari-bg");
    for (name, flags) in variants {
        let run_dir = args.out.join(name.replace(['-'], "minus_").replace("b_phi", "bphi"));
        let model_cfg = CaeConfig {
            flags,
            seed: cfg.seed,
            image_size: data.image_size,
            ..CaeConfig::default()
        };
        let mut model = CaeModel::build(model_cfg)?;
        train_loop(&mut model, &data, val.as_ref(), &cfg, Some(&run_dir), None)?;
        let report = evaluate(&model, &test, args.seed)?;
        println!(
            "{:<12} {:>12.4e} {:>12.4} {:>12.4}",
            name, report.mse, report.ari_with_bg, report.ari_no_bg
        );
        summary.push_str(&format!(
            "{name},{},{},{}\n",
            report.mse, report.ari_with_bg, report.ari_no_bg
        ));
    }
    let path = args.out.join("ablate-summary.csv");
    std::fs::write(&path, summary)?;
    println!("summary: {}", path.display());
    Ok(())
}

fn objectwise(args: ObjectwiseArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.data, "dataset")?;
    println!("command = objectwise");
    println!("checkpoint = {}", args.checkpoint.display());
    println!("steps = {}", args.steps);
    println!("lr = {}", args.lr);
    println!("seed = {}", args.seed);
    let (model, _, _) = load_checkpoint(&args.checkpoint)?;
    let data = Dataset::load(&args.data)?;
    let cfg = ObjectwiseConfig {
        steps: args.steps,
        lr: args.lr,
        seed: args.seed,
        max_images: args.max_images.unwrap_or(usize::MAX),
        ..Default::default()
    };
    let out = objectwise_finetune(&model, &data, &cfg, args.samples)?;
    std::fs::create_dir_all(&args.out)?;
    for s in &out.samples {
        let prefix = args.out.join(format!("sample{}", s.index));
        render::render_gray(&data.image(s.index), &prefix.with_extension("input.ppm"))?;
        render::render_gray(&s.full_recon, &prefix.with_extension("full.ppm"))?;
        for (c, recon) in s.cluster_recons.iter().enumerate() {
            render::render_gray(recon, &prefix.with_extension(format!("cluster{c}.ppm")))?;
        }
    }
    let state = AdamState::new(out.model.params());
    let ckpt = args.out.join("decoder-finetuned.cae");
    save_checkpoint(&out.model, &state, cfg.steps, &ckpt)?;
    println!("fine-tuned checkpoint: {}", ckpt.display());
    Ok(())
}

fn render_cmd(args: RenderArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_file(&args.data, "dataset")?;
    println!("command = render");
    println!("checkpoint = {}", args.checkpoint.display());
    println!("data = {}", args.data.display());
    println!("index = {}", args.index);
    let (model, _, _) = load_checkpoint(&args.checkpoint)?;
    let sample = read_sample_at(&args.data, args.index)?;
    let batch = sample.image.reshaped(&[1, 1, model.config.image_size, model.config.image_size])?;
    let out = model.forward(&batch)?;

    std::fs::create_dir_all(&args.out)?;
    let prefix = args.out.join(format!("sample{}", args.index));
    render::render_gray(&sample.image, &prefix.with_extension("input.ppm"))?;
    render::render_gray(&out.x_hat, &prefix.with_extension("recon.ppm"))?;
    render::render_phase_map(&out.out_phase, &out.out_mag, &prefix.with_extension("phase.ppm"))?;

    let features = phase_features(&out.out_phase, &out.out_mag)?;
    let km = kmeans(&features, sample.n_objects + 1, derive_seed(args.seed, args.index as u64))?;
    render::render_clusters(
        &km.assignments,
        &km.centroids,
        model.config.image_size,
        model.config.image_size,
        &prefix.with_extension("pred.ppm"),
    )?;
    println!("panels under {}", args.out.display());
    Ok(())
}
