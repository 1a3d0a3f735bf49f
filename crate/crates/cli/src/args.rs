//! Flag definitions. Every command struct doubles as the config echoed into
//! its output, so the same types derive both clap and serde.

use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tknn_core::DistanceMetric;

#[derive(Debug, Parser)]
#[command(name = "tknn", version, about = "Exact and private nearest-neighbor data valuation")]
pub struct Cli {
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Caps the worker pool.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: TopLevel,
}

// parsed once per process, so the size gap is irrelevant
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Subcommand)]
pub enum TopLevel {
    #[command(flatten)]
    Run(Command),
    /// Re-run the command recorded in an earlier output file.
    Replay {
        file: PathBuf,
    },
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", content = "config", rename_all = "kebab-case")]
pub enum Command {
    /// Exact KNN- or TKNN-Shapley values.
    Value(ValueArgs),
    /// Differentially private values plus the composed privacy report.
    DpValue(DpValueArgs),
    /// Corrupt part of the training set and score how well low values find it.
    Detect(DetectArgs),
    /// Membership inference against a value function.
    Attack(AttackArgs),
    /// Median wall time per training size, as CSV.
    Bench(BenchArgs),
    /// Composed epsilon for repeated subsampled Gaussian releases.
    Account(AccountArgs),
}

/// `n=2000,d=10[,nval=200]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Synthetic {
    pub n: usize,
    pub d: usize,
    pub nval: Option<usize>,
}

impl FromStr for Synthetic {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (mut n, mut d, mut nval) = (None, None, None);
        for part in s.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{part}`"))?;
            let value = parse_count(value.trim())?;
            match key.trim() {
                "n" => n = Some(value),
                "d" => d = Some(value),
                "nval" => nval = Some(value),
                other => return Err(format!("unknown key `{other}` (expected n, d, nval)")),
            }
        }
        Ok(Synthetic {
            n: n.ok_or("missing n=")?,
            d: d.ok_or("missing d=")?,
            nval,
        })
    }
}

/// Accepts `2000` as well as `1e4`.
pub fn parse_count(s: &str) -> Result<usize, String> {
    if let Ok(v) = s.parse::<usize>() {
        return Ok(v);
    }
    let f: f64 = s.parse().map_err(|_| format!("`{s}` is not a count"))?;
    if f < 0.0 || f.fract() != 0.0 || f > 1e15 {
        return Err(format!("`{s}` is not a count"));
    }
    Ok(f as usize)
}

fn parse_metric(s: &str) -> Result<DistanceMetric, String> {
    match s {
        "negative-cosine" | "negative_cosine" | "cosine" => Ok(DistanceMetric::NegativeCosine),
        "euclidean" => Ok(DistanceMetric::Euclidean),
        _ => Err(format!("unknown metric `{s}` (negative-cosine, euclidean)")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CsvArgs {
    /// Label column, by header name or 0-based index.
    #[arg(long, default_value = "label")]
    pub label_column: String,
    /// Keep raw features instead of scaling rows to unit length.
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DataArgs {
    #[arg(long, requires = "validation", required_unless_present = "synthetic")]
    pub train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    pub validation: Option<PathBuf>,
    /// Generated Gaussian data instead of CSVs; nval defaults to 100.
    #[arg(long, conflicts_with_all = ["train", "validation"])]
    pub synthetic: Option<Synthetic>,
    #[command(flatten)]
    pub csv: CsvArgs,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Hyper {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    pub tau: f64,
    #[arg(long, default_value = "negative-cosine", value_parser = parse_metric)]
    pub metric: DistanceMetric,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct Privacy {
    /// Target epsilon over the whole validation set.
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    /// Use this noise scale instead of calibrating one from epsilon.
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    /// Poisson subsampling rate.
    #[arg(long, default_value_t = 0.01)]
    pub q: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub grid_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExactMethod {
    Knn,
    KnnOld,
    Tknn,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ValueArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "tknn")]
    pub method: ExactMethod,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    DpTknn,
    /// Older KNN variant with noise on every score.
    DpKnn,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DpValueArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "dp-tknn")]
    pub baseline: Baseline,
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub privacy: Privacy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnyMethod {
    Knn,
    KnnOld,
    Tknn,
    DpTknn,
    DpKnn,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Corruption {
    Flip,
    Noise,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct DetectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "flip")]
    pub corruption: Corruption,
    #[arg(long, default_value_t = 0.1)]
    pub rate: f64,
    #[arg(long, value_enum, default_value = "tknn")]
    pub method: AnyMethod,
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub privacy: Privacy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Knn,
    KnnOld,
    Tknn,
    DpTknn,
    Constant,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AttackArgs {
    /// Points in the server's dataset.
    #[arg(long, requires_all = ["nonmembers", "pool", "validation"], required_unless_present = "synthetic")]
    pub members: Option<PathBuf>,
    #[arg(long, requires = "members")]
    pub nonmembers: Option<PathBuf>,
    /// Points the attacker draws shadow datasets from.
    #[arg(long, requires = "members")]
    pub pool: Option<PathBuf>,
    #[arg(long, requires = "members")]
    pub validation: Option<PathBuf>,
    /// n members and n non-members; nval defaults to 50.
    #[arg(long, conflicts_with = "members")]
    pub synthetic: Option<Synthetic>,
    /// Synthetic pool size; defaults to 1.25 n.
    #[arg(long, requires = "synthetic")]
    pub pool_size: Option<usize>,
    /// Fraction of synthetic labels to flip; 0.5 makes labels independent
    /// of features.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[command(flatten)]
    pub csv: CsvArgs,
    #[arg(long, value_enum, default_value = "knn")]
    pub target: Target,
    #[command(flatten)]
    pub hyper: Hyper,
    #[command(flatten)]
    pub privacy: Privacy,
    #[arg(long, default_value_t = 32)]
    pub shadows: usize,
    /// Points per shadow dataset; defaults to the member count.
    #[arg(long)]
    pub shadow_size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// Training sizes, ascending.
    #[arg(long, value_delimiter = ',', value_parser = parse_count, default_value = "1e4,1e5")]
    pub ns: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub d: usize,
    #[arg(long, default_value_t = 100)]
    pub nval: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "tknn,knn")]
    pub methods: Vec<ExactMethod>,
    #[command(flatten)]
    pub hyper: Hyper,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AccountArgs {
    #[arg(long, default_value_t = 1)]
    pub mechanisms: usize,
    #[arg(long, required_unless_present = "epsilon", conflicts_with = "epsilon")]
    pub sigma: Option<f64>,
    /// Find the smallest sigma reaching this epsilon instead.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 3f64.sqrt())]
    pub sensitivity: f64,
    #[arg(long, default_value_t = 0.01)]
    pub q: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub delta: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub grid_step: f64,
}
