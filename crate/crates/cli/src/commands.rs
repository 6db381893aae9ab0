use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use paanet::data::{self, gray_raster, image_tensor, load_dataset, Raster, Split, MIN_SPLIT_IDS, Style, SynthSpec};
use paanet::metrics::{binarize, DEFAULT_THRESHOLD};
use paanet::model::{predict_all, ModelConfig};
use paanet::tensor::{op_suite, OpKind};
use paanet::training::{evaluate_samples, model_gradcheck, Checkpoint, Trainer, LAST_CHECKPOINT};

use crate::config::{parse_size, RunConfig};

pub const THREADS_VAR: &str = "PAANET_THREADS";
pub const RESOLVED_CONFIG: &str = "resolved.cfg";
pub const TRAIN_LOG: &str = "train.log";

const OP_TOLERANCE: f64 = 1e-3;
const MODEL_TOLERANCE: f64 = 1e-2;

#[derive(Debug)]
pub enum Failure {
    /// Bad flags, config or environment: exit 1.
    Usage(String),
    /// Anything that failed while running: exit 2.
    Runtime(String),
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

#[derive(Parser, Debug)]
#[command(name = "paanet", version, about = "Attention-guided segmentation: data, training, evaluation")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with a seeded train/val/test split.
    Synth(SynthArgs),
    /// Train a model and write checkpoints, the epoch log and the resolved config.
    Train(TrainArgs),
    /// Score a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Predict a mask for one image, optionally dumping the attention maps.
    Predict(PredictArgs),
    /// Compare every backward rule and a tiny model against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "nuclei")]
    style: Style,
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// `N` or `HxW`.
    #[arg(long, default_value = "64")]
    size: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_blocks: Option<usize>,
    /// Continue from `last.ckpt` in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: Split,
    /// Report file; defaults to `eval_<split>.txt` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write every attention map as a grayscale PGM.
    #[arg(long)]
    dump_gams: bool,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Flip the sign of one op's backward rule (checker self-test).
    #[arg(long, hide = true)]
    inject_fault: Option<String>,
}

/// Upper bound on worker threads from the environment. The current kernels
/// are single-threaded, so any valid value results in one thread.
pub fn thread_cap() -> Result<usize, Failure> {
    match std::env::var(THREADS_VAR) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n.min(1)),
            _ => Err(Failure::Usage(format!("{THREADS_VAR} must be a positive integer, got `{v}`"))),
        },
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    thread_cap()?;
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let size = parse_size(&a.size).map_err(Failure::Usage)?;
    let spec = SynthSpec { style: a.style, count: a.count, size, seed: a.seed, ..SynthSpec::default() };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if spec.count < MIN_SPLIT_IDS {
        return Err(Failure::Usage(format!("--count {} is below the {MIN_SPLIT_IDS} samples a split needs", spec.count)));
    }
    let split = data::generate(&spec, &a.out).map_err(runtime)?;
    println!(
        "wrote {} samples to {} (train {}, val {}, test {})",
        spec.count,
        a.out.display(),
        split.ids(Split::Train).len(),
        split.ids(Split::Val).len(),
        split.ids(Split::Test).len()
    );
    Ok(())
}

fn resolve(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => RunConfig::default(),
    };
    if let Some(d) = &a.data {
        cfg.data = Some(d.clone());
    }
    if let Some(v) = a.lr {
        cfg.train.adam.learning_rate = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.train.batch_size = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.num_blocks {
        cfg.model.num_blocks = v;
    }
    if cfg.data.is_none() {
        return Err(Failure::Usage("no dataset: pass --data or set `data` in the config".into()));
    }
    cfg.validate().map_err(Failure::Usage)?;
    Ok(cfg)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let cfg = resolve(&a)?;
    let data_dir = cfg.data.clone().expect("checked in resolve");
    let train_set = load_dataset(&data_dir, Some(Split::Train)).map_err(runtime)?;
    let val_set = load_dataset(&data_dir, Some(Split::Val)).map_err(runtime)?;
    fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    let resolved = cfg.to_text();
    eprint!("{resolved}");
    let rp = a.out.join(RESOLVED_CONFIG);
    fs::write(&rp, &resolved).map_err(|e| runtime(format!("{}: {e}", rp.display())))?;

    let mut tc = cfg.train.clone();
    tc.checkpoint_dir = Some(a.out.clone());
    tc.log_path = Some(a.out.join(TRAIN_LOG));
    let trainer = if a.resume {
        let ckpt = Checkpoint::load(&a.out.join(LAST_CHECKPOINT)).map_err(runtime)?;
        if ckpt.model_config() != &cfg.model {
            return Err(Failure::Usage("model settings differ from the checkpoint being resumed".into()));
        }
        Trainer::resume(ckpt, tc, &train_set, &val_set)
    } else {
        Trainer::new(&cfg.model, tc, &train_set, &val_set)
    }
    .map_err(runtime)?;
    let outcome = trainer.run_with(|e| eprintln!("{}", e.line())).map_err(runtime)?;
    println!("trained {} epochs; best validation DSC {:.6}", outcome.last.epoch, outcome.last.best_val_dsc);
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path).map_err(runtime)
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let samples = load_dataset(&a.data, Some(a.split)).map_err(runtime)?;
    if samples.is_empty() {
        return Err(runtime(format!("split `{}` is empty", a.split)));
    }
    let report = evaluate_samples(&ckpt.params, &samples, ckpt.batch_size).map_err(runtime)?;
    let text = format!("{}\n{}", report.tsv(), report.key_values());
    print!("{text}");
    let out = a.out.unwrap_or_else(|| {
        a.ckpt.parent().unwrap_or(Path::new(".")).join(format!("eval_{}.txt", a.split))
    });
    fs::write(&out, text).map_err(|e| runtime(format!("{}: {e}", out.display())))
}

fn predict(a: PredictArgs) -> Result<(), Failure> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let raster = Raster::read(&a.image).map_err(runtime)?;
    let image = image_tensor(&raster).map_err(runtime)?;
    let cfg: &ModelConfig = ckpt.model_config();
    let (h, w) = (raster.height, raster.width);
    if (h, w) != cfg.input_size {
        return Err(runtime(format!(
            "image is {h}x{w}, the checkpoint expects {}x{}",
            cfg.input_size.0, cfg.input_size.1
        )));
    }
    let batch = image.reshape(vec![1, 3, h, w]).map_err(runtime)?;
    let (prob, gams) = predict_all(&ckpt.params, &batch).map_err(runtime)?;

    // Render everything before touching the output directory.
    let stem = a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
    let mask = binarize(&prob, DEFAULT_THRESHOLD);
    let mut files = vec![(format!("{stem}_mask.pgm"), gray_raster(&mask).map_err(runtime)?)];
    if a.dump_gams {
        let c = cfg.dense_layers;
        for (i, g) in gams.iter().enumerate() {
            files.push((format!("{stem}_gam{}_{}.pgm", i / c, i % c + 1), gray_raster(g).map_err(runtime)?));
        }
    }
    fs::create_dir_all(&a.out).map_err(|e| runtime(format!("{}: {e}", a.out.display())))?;
    for (name, r) in &files {
        r.write(&a.out.join(name)).map_err(runtime)?;
    }
    println!("wrote {} file(s) to {}", files.len(), a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let fault = match &a.inject_fault {
        None => None,
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| Failure::Usage(format!("unknown op `{name}`")))?),
    };
    let mut failed = 0;
    let ops = op_suite::<f64>(a.seed, fault, 1e-6).map_err(runtime)?;
    for r in &ops {
        let ok = r.passes(OP_TOLERANCE);
        failed += usize::from(!ok);
        println!("{}\t{:.3e}\t{}", if ok { "PASS" } else { "FAIL" }, r.max_rel_err, r.name);
    }
    let model = model_gradcheck::<f32>(&ModelConfig::tiny(), a.seed, 5, fault, 1e-3).map_err(runtime)?;
    for r in &model {
        let ok = r.passes(MODEL_TOLERANCE);
        failed += usize::from(!ok);
        println!("{}\t{:.3e}\tmodel {}", if ok { "PASS" } else { "FAIL" }, r.max_rel_err, r.name);
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{failed} of {} gradient checks failed", ops.len() + model.len())));
    }
    println!("all {} gradient checks passed", ops.len() + model.len());
    Ok(())
}
