//! `blockcnn` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or format error, 3 internal
//! invariant violation. Diagnostics go to stderr; stdout only carries the
//! paths of written files.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use blockcnn::codec::{self, CodecError, ModelRegistry, NoModels};
use blockcnn::enhance::enhance_image;
use blockcnn::eval::{self, EvalError, Mode, SweepModels};
use blockcnn::image::{load_ppm, save_ppm, ByteImage, ColorSpace, ImageError};
use blockcnn::model::{LoadedModel, ModelError, Variant};
use blockcnn::nn::{CheckpointError, NnError};
use blockcnn::trainer::{self, Corpus, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "blockcnn", version, about = "Block-CNN image codec, enhancer and trainer")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "BLOCKCNN_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PPM image into a .bcn container.
    Compress(CompressArgs),
    /// Decode a .bcn container into a PPM image.
    Decompress(DecompressArgs),
    /// Remove compression artifacts with an AR model.
    Enhance(EnhanceArgs),
    /// Train an AR or PRED model on a directory of PPM images.
    Train(TrainArgs),
    /// Rate-distortion sweep over a corpus.
    Eval(EvalArgs),
    /// Per-position squared error within 8x8 blocks after JPEG coding.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Space {
    Ycbcr,
    Lab,
}

impl From<Space> for ColorSpace {
    fn from(s: Space) -> Self {
        match s {
            Space::Ycbcr => ColorSpace::YCbCr,
            Space::Lab => ColorSpace::Lab,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Ar,
    Pred,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
    quality: u8,
    /// PRED checkpoint; without it blocks are coded exactly as baseline JPEG.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Defaults to the model's colorspace, or YCbCr without a model.
    #[arg(long, value_enum)]
    colorspace: Option<Space>,
}

#[derive(Args)]
struct DecompressArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory of .bckp checkpoints searched for the stream's model.
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EnhanceArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Quality the image was coded at; AR models are trained per quality.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
    quality: u8,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    variant: VariantArg,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
    quality: u8,
    #[arg(long)]
    iters: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 64)]
    channels: usize,
    #[arg(long, default_value_t = 9)]
    res_blocks: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    #[arg(long, default_value_t = 1000)]
    checkpoint_every: usize,
    /// Training log CSV (default: the output path with a .csv extension).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ycbcr")]
    colorspace: Space,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    qualities: Vec<u8>,
    #[arg(long, value_delimiter = ',', required = true)]
    modes: Vec<Mode>,
    #[arg(long)]
    out: PathBuf,
    /// AR checkpoint for the +AR modes.
    #[arg(long)]
    ar: Option<PathBuf>,
    /// PRED checkpoint for the BCNN modes.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ycbcr")]
    colorspace: Space,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=100))]
    quality: u8,
    #[arg(long)]
    out: PathBuf,
    /// Optional PGM heat map of the grid.
    #[arg(long)]
    pgm: Option<PathBuf>,
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }

    fn data(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

fn nn_failure(e: &NnError) -> Failure {
    match e {
        NnError::NonFinite(_) => Failure::data(e.to_string()),
        _ => Failure::internal(e.to_string()),
    }
}

fn model_failure(e: ModelError) -> Failure {
    match &e {
        ModelError::Nn(n) => nn_failure(n),
        ModelError::Config(_) | ModelError::Variant { .. } => Failure::usage(e.to_string()),
        _ => Failure::data(e.to_string()),
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        model_failure(e)
    }
}

impl From<CodecError> for Failure {
    fn from(e: CodecError) -> Self {
        match e {
            CodecError::Sequencing { .. } => Failure::internal(e.to_string()),
            CodecError::Config(_) => Failure::usage(e.to_string()),
            CodecError::Model(m) => model_failure(m),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) => Failure::usage(e.to_string()),
            TrainError::Model(m) => model_failure(m),
            TrainError::Nn(ref n) => nn_failure(n),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => Failure::usage(e.to_string()),
            EvalError::Codec(c) => c.into(),
            EvalError::Model(m) => model_failure(m),
            _ => Failure::data(e.to_string()),
        }
    }
}

impl From<ImageError> for Failure {
    fn from(e: ImageError) -> Self {
        Failure::data(e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Self {
        Failure::data(e.to_string())
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::data(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes)
        .map_err(|e| Failure::data(format!("cannot write {}: {e}", path.display())))?;
    println!("{}", path.display());
    Ok(())
}

fn load_model(path: &Path) -> Result<LoadedModel, Failure> {
    let bytes = read(path)?;
    LoadedModel::from_bytes(&bytes)
        .map_err(|e| Failure::data(format!("{}: {e}", path.display())))
}

fn compress(a: CompressArgs) -> Result<(), Failure> {
    let img = load_ppm(&read(&a.input)?)?;
    let model = a.model.as_deref().map(load_model).transpose()?;
    let colorspace = match (a.colorspace, &model) {
        (Some(s), _) => s.into(),
        (None, Some(m)) => m.model.config().colorspace,
        (None, None) => ColorSpace::YCbCr,
    };
    let stream = codec::encode_image(&img, a.quality, colorspace, model.as_ref())?;
    write(&a.out, &stream)
}

fn decompress(a: DecompressArgs) -> Result<(), Failure> {
    let bytes = read(&a.input)?;
    let img = match &a.model_dir {
        Some(dir) => codec::decode_image(&bytes, &ModelRegistry::load_dir(dir)?)?,
        None => codec::decode_image(&bytes, &NoModels)?,
    };
    write(&a.out, &save_ppm(&img)?)
}

fn enhance(a: EnhanceArgs) -> Result<(), Failure> {
    let img = load_ppm(&read(&a.input)?)?;
    let model = load_model(&a.model)?;
    log::info!("enhancing {} (coded at quality {})", a.input.display(), a.quality);
    let out = enhance_image(&img, &model.model)?;
    write(&a.out, &save_ppm(&out)?)
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let colorspace: ColorSpace = a.colorspace.into();
    let config = TrainConfig {
        iterations: a.iters,
        batch_size: a.batch,
        lr: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
        checkpoint_every: a.checkpoint_every,
        channels: a.channels,
        n_res_blocks: a.res_blocks,
        colorspace,
        ..TrainConfig::new(
            match a.variant {
                VariantArg::Ar => Variant::Ar,
                VariantArg::Pred => Variant::Pred,
            },
            a.quality,
        )
    };
    config.validate()?;
    let corpus = Corpus::load_dir(&a.corpus, colorspace)?;
    let out = a.out.clone();
    let outcome = trainer::train(&config, &corpus, |step, bytes| {
        std::fs::write(&out, bytes)?;
        log::info!("checkpoint at step {step} written to {}", out.display());
        Ok(())
    })?;
    println!("{}", a.out.display());
    let log_path = a.log.unwrap_or_else(|| a.out.with_extension("csv"));
    let mut buf = Vec::new();
    trainer::write_log_csv(&outcome.log, &mut buf)?;
    write(&log_path, &buf)
}

fn load_rgb_corpus(dir: &Path) -> Result<Vec<(String, ByteImage)>, Failure> {
    let corpus = Corpus::load_dir(dir, ColorSpace::Rgb)?;
    Ok(corpus.images)
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    if let Some(q) = a.qualities.iter().find(|q| !(1..=100).contains(*q)) {
        return Err(Failure::usage(format!("--qualities: {q} is outside 1..=100")));
    }
    if let Some(m) = a.modes.iter().find(|m| m.uses_ar()).filter(|_| a.ar.is_none()) {
        return Err(Failure::usage(format!("mode {m} requires --ar <checkpoint>")));
    }
    if let Some(m) = a.modes.iter().find(|m| m.uses_pred()).filter(|_| a.pred.is_none()) {
        return Err(Failure::usage(format!("mode {m} requires --pred <checkpoint>")));
    }
    let ar = a.ar.as_deref().map(load_model).transpose()?;
    let pred = a.pred.as_deref().map(load_model).transpose()?;
    let corpus = load_rgb_corpus(&a.corpus)?;
    let models = SweepModels {
        ar: ar.as_ref().map(|m| &m.model),
        pred: pred.as_ref(),
    };
    let rows = eval::rd_sweep(&corpus, &a.qualities, &a.modes, models, a.colorspace.into())?;
    let mut buf = Vec::new();
    eval::write_metrics_csv(&rows, &mut buf)?;
    write(&a.out, &buf)
}

fn stats(a: StatsArgs) -> Result<(), Failure> {
    let corpus = Corpus::load_dir(&a.corpus, ColorSpace::YCbCr)?;
    let images: Vec<ByteImage> = corpus.images.into_iter().map(|(_, i)| i).collect();
    let grid = eval::block_position_mse(&images, a.quality)?;
    log::info!(
        "border mean {:.3}, centre mean {:.3}",
        eval::border_mean(&grid),
        eval::center_mean(&grid)
    );
    let mut buf = Vec::new();
    eval::write_grid_csv(&grid, &mut buf)?;
    write(&a.out, &buf)?;
    if let Some(pgm) = &a.pgm {
        write(pgm, &eval::grid_pgm(&grid, 16))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::internal(e.to_string()))?;
    }
    match cli.command {
        Command::Compress(a) => compress(a),
        Command::Decompress(a) => decompress(a),
        Command::Enhance(a) => enhance(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Stats(a) => stats(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn modes_parse_from_comma_list() {
        let cli = Cli::try_parse_from([
            "blockcnn", "eval", "--corpus", "c", "--qualities", "10,20", "--modes", "jpeg,bcnn+ar",
            "--out", "r.csv",
        ])
        .unwrap();
        let Command::Eval(a) = cli.command else { panic!() };
        assert_eq!(a.qualities, vec![10, 20]);
        assert_eq!(a.modes, vec![Mode::Jpeg, Mode::BcnnAr]);
    }
}
