//! `vpllr`: score, rank and inspect visual-prompting transferability from
//! pre-extracted features.
//!
//! Exit codes: 0 on success, 2 for invalid input or arguments, 3 when the
//! numerical pipeline fails on valid input.

mod commands;
mod output;
mod scores;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vpllr::featurestore::PromptTag;
use vpllr::prompts::KlDirection;

#[derive(Parser)]
#[command(name = "vpllr", version, about = "LLR scoring of visual prompting against linear probing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// LLR of one dataset from an LP feature file and K prompted feature files.
    Score(ScoreArgs),
    /// Rank correlation and sign accuracy of scores against accuracy gains.
    Rank(RankArgs),
    /// Prompt generators and spectral comparison.
    #[command(subcommand)]
    Prompt(PromptCommand),
    /// Softmax and Mahalanobis OOD baselines.
    #[command(subcommand)]
    Baseline(BaselineCommand),
    /// LLR over mixtures of dataset A with the first k classes of dataset B.
    MixSweep(MixSweepArgs),
    /// Writes a synthetic LP set and K prompted sets.
    Synth(SynthArgs),
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    lp: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    vp: Vec<PathBuf>,
    /// Treat the --lp file as LP and the --vp files as VP whatever kind they store.
    #[arg(long)]
    override_kind: bool,
    /// Prompt tag given to --vp files that carry none (only with --override-kind).
    #[arg(long, value_enum, default_value_t = TagArg::Gaussian)]
    tag: TagArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct RankArgs {
    /// Score files: JSON written by `score`/`mix-sweep`, or CSV with a
    /// `dataset` column and an `llr` or `score` column, or a gains CSV.
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// CSV with columns dataset,lp_acc,vp_acc.
    #[arg(long)]
    gains: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PromptCommand {
    /// Clamped Gaussian ring prompts, one file per seed.
    Gaussian(GaussianArgs),
    /// Sign-of-gradient prompt from a gradient feature file.
    Gradient(GradientArgs),
    /// Radial spectrum profile of a prompt.
    Spectrum(SpectrumArgs),
    /// Spectral KL divergence between two prompts.
    Kl(KlArgs),
}

#[derive(Args)]
struct GaussianArgs {
    #[arg(long, default_value_t = 224)]
    h: usize,
    #[arg(long, default_value_t = 224)]
    w: usize,
    #[arg(long, default_value_t = 16)]
    frame: usize,
    /// Variance of the ring draws.
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Seed of the first prompt; later prompts use consecutive seeds.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    seed: i64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradientArgs {
    /// Feature file whose rows are 3*h*w pixel gradients; rows are averaged.
    #[arg(long)]
    grads: PathBuf,
    /// Defaults to a square image inferred from the row width.
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    w: Option<usize>,
    #[arg(long, default_value_t = 16)]
    frame: usize,
    #[arg(short, long, default_value = "gradient.pst")]
    output: PathBuf,
}

#[derive(Args)]
struct SpectrumArgs {
    prompt: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct KlArgs {
    /// Simulated prompt.
    simulated: PathBuf,
    /// Trained prompt.
    trained: PathBuf,
    #[arg(long, value_enum, default_value_t = DirectionArg::SimToTrained)]
    direction: DirectionArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BaselineCommand {
    /// Maximum softmax probability.
    Confidence(ConfidenceArgs),
    /// Temperature-scaled maximum softmax probability.
    Odin(OdinArgs),
    /// Class-conditional Mahalanobis distance with a tied covariance.
    Mahalanobis(MahalanobisArgs),
}

#[derive(Args)]
struct ConfidenceArgs {
    /// Feature file holding one row of C logits per sample.
    #[arg(long)]
    logits: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct OdinArgs {
    #[arg(long)]
    logits: PathBuf,
    #[arg(long, default_value_t = vpllr::baselines::DEFAULT_TEMPERATURE)]
    temperature: f64,
    /// Logits recomputed on perturbed inputs; replaces --logits for scoring.
    #[arg(long)]
    perturbed: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MahalanobisArgs {
    /// Labelled in-distribution features used to fit means and covariance.
    #[arg(long)]
    train: PathBuf,
    /// Held-out in-distribution reference features.
    #[arg(long)]
    id: PathBuf,
    /// Downstream features scored as out-of-distribution.
    #[arg(long)]
    ood: PathBuf,
    #[arg(long, default_value_t = vpllr::baselines::DEFAULT_RIDGE_SCALE)]
    ridge_scale: f64,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MixSweepArgs {
    /// LP features of the base dataset.
    #[arg(long)]
    a: PathBuf,
    /// LP features of the dataset whose classes are added.
    #[arg(long)]
    b: PathBuf,
    /// Prompted features of A, one per prompt draw.
    #[arg(long, required = true, num_args = 1..)]
    vp_a: Vec<PathBuf>,
    /// Prompted features of B, paired with --vp-a in order.
    #[arg(long, required = true, num_args = 1..)]
    vp_b: Vec<PathBuf>,
    /// Numbers of B classes to add, e.g. 2,5,10.
    #[arg(long, required = true, value_delimiter = ',')]
    k: Vec<u32>,
    #[arg(long)]
    override_kind: bool,
    #[arg(long, value_enum, default_value_t = TagArg::Gaussian)]
    tag: TagArg,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = Profile::Ood)]
    profile: Profile,
    #[arg(long, default_value_t = 10)]
    classes: u32,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 32)]
    lp_dim: usize,
    #[arg(long, default_value_t = 32)]
    vp_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "synthetic")]
    name: String,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum TagArg {
    Gaussian,
    Gradient,
    MiniFt1,
    MiniFt5,
    Trained,
}

impl From<TagArg> for PromptTag {
    fn from(t: TagArg) -> Self {
        match t {
            TagArg::Gaussian => PromptTag::Gaussian,
            TagArg::Gradient => PromptTag::Gradient,
            TagArg::MiniFt1 => PromptTag::MiniFt1,
            TagArg::MiniFt5 => PromptTag::MiniFt5,
            TagArg::Trained => PromptTag::Trained,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    SimToTrained,
    TrainedToSim,
}

impl From<DirectionArg> for KlDirection {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::SimToTrained => KlDirection::SimulatedToTrained,
            DirectionArg::TrainedToSim => KlDirection::TrainedToSimulated,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    /// Prompted features separate the classes, LP features barely do.
    Ood,
    /// LP features separate the classes, prompted features barely do.
    Id,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("LLR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow::anyhow!("LLR_THREADS = {raw:?} is not a positive integer"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Score(a) => commands::score(a),
        Command::Rank(a) => commands::rank(a),
        Command::Prompt(p) => match p {
            PromptCommand::Gaussian(a) => commands::prompt_gaussian(a),
            PromptCommand::Gradient(a) => commands::prompt_gradient(a),
            PromptCommand::Spectrum(a) => commands::prompt_spectrum(a),
            PromptCommand::Kl(a) => commands::prompt_kl(a),
        },
        Command::Baseline(b) => match b {
            BaselineCommand::Confidence(a) => commands::baseline_confidence(a),
            BaselineCommand::Odin(a) => commands::baseline_odin(a),
            BaselineCommand::Mahalanobis(a) => commands::baseline_mahalanobis(a),
        },
        Command::MixSweep(a) => commands::mix_sweep(a),
        Command::Synth(a) => commands::synth(a),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    let compute = err
        .chain()
        .filter_map(|e| e.downcast_ref::<vpllr::Error>())
        .any(vpllr::Error::is_compute);
    if compute {
        3
    } else {
        2
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("vpllr: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
