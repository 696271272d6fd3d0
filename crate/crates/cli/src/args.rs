//! Command-line flags.
//!
//! Every field is optional at parse time so that a `--config` JSON file can
//! supply it; explicit flags win over the file. Defaults are applied by the
//! commands after merging.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "sparsalloc", version, about = "Layer-wise sparsity allocation experiments")]
pub struct Cli {
    /// JSON file with flag values for the chosen subcommand (snake_case keys).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a random layer chain and write it as a NetFile.
    GenNet(GenNetArgs),
    /// Generate standard-normal calibration inputs.
    GenCalib(GenCalibArgs),
    /// Grid-search the common difference and write the best profile.
    Search(SearchArgs),
    /// Prune a network with a stored profile and trace its errors.
    Prune(PruneArgs),
    /// Run the seeded validation sweeps and write their CSVs.
    Validate(ValidateArgs),
    /// Repeat the grid search for several step sizes.
    StepAblation(AblationArgs),
    /// Seeded random search over profiles with a fixed average.
    RandomSearch(RandomSearchArgs),
    /// Compare allocators over many seeded networks.
    Compare(CompareArgs),
    /// Summarise a comparison CSV.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GenNetArgs {
    /// Number of layers [default: 32]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Width of every layer when --dims is absent [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// Explicit widths, L+1 comma-separated values
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// linear or relu [default: linear]
    #[arg(long)]
    pub activation: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct GenCalibArgs {
    /// Input features [default: 64]
    #[arg(long)]
    pub features: Option<usize>,
    /// Calibration samples [default: 128]
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

/// Network and calibration inputs shared by the pruning commands. Without
/// `--calib`, calibration data is generated from `--seed`.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct DataArgs {
    #[arg(long)]
    pub net: Option<PathBuf>,
    #[arg(long)]
    pub calib: Option<PathBuf>,
    /// Generated calibration samples [default: 128]
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneFlags {
    /// magnitude, wanda or nm:N:M [default: wanda]
    #[arg(long)]
    pub method: Option<String>,
    /// total or heldout [default: total]
    #[arg(long)]
    pub objective: Option<String>,
    /// layer or row [default: layer]
    #[arg(long)]
    pub granularity: Option<String>,
    /// sparse or dense [default: sparse]
    #[arg(long)]
    pub scoring_input: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub prune: PruneFlags,
    /// Average sparsity S [default: 0.7]
    #[arg(short = 'S', long)]
    pub sparsity: Option<f64>,
    /// Grid step for beta [default: 0.002]
    #[arg(long)]
    pub step: Option<f64>,
    /// [default: search.csv]
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// [default: profile.json]
    #[arg(long)]
    pub out_profile: Option<PathBuf>,
    /// Full report as JSON
    #[arg(long)]
    pub out_json: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct PruneArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub prune: PruneFlags,
    /// Profile JSON to apply
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// [default: sparse.spal]
    #[arg(long)]
    pub out_net: Option<PathBuf>,
    /// [default: masks.spal]
    #[arg(long)]
    pub out_masks: Option<PathBuf>,
    /// [default: trace.csv]
    #[arg(long)]
    pub out_trace: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidateArgs {
    /// all, lemma1, 1, 2, 3 or 4 [default: all]
    #[arg(long)]
    pub theorem: Option<String>,
    /// Layers in the exhaustive ordering table [default: 6]
    #[arg(long)]
    pub layers: Option<usize>,
    /// Propagation factor for the ordering table [default: 1.5]
    #[arg(long)]
    pub c: Option<f64>,
    /// square, ratio or exp [default: square]
    #[arg(long)]
    pub f: Option<String>,
    /// Single-layer check with magnitude scores only
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub nested: Option<bool>,
    /// Seed base [default: 20240000]
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: validate-out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub prune: PruneFlags,
    #[arg(short = 'S', long)]
    pub sparsity: Option<f64>,
    /// [default: 0.008,0.004,0.002,0.001,0.0005]
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<f64>>,
    /// [default: ablation.csv]
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct RandomSearchArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub prune: PruneFlags,
    #[arg(short = 'S', long)]
    pub sparsity: Option<f64>,
    /// [default: 1000]
    #[arg(long)]
    pub iters: Option<usize>,
    /// [default: random.csv]
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
    /// [default: random_profile.json]
    #[arg(long)]
    pub out_profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub prune: PruneFlags,
    /// Seeded networks [default: 20]
    #[arg(long)]
    pub nets: Option<usize>,
    /// [default: 32]
    #[arg(long)]
    pub layers: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub dim: Option<usize>,
    /// [default: 128]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Average sparsities [default: 0.5,0.6,0.7]
    #[arg(short = 'S', long, value_delimiter = ',')]
    pub sparsity: Option<Vec<f64>>,
    /// [default: 0.002]
    #[arg(long)]
    pub step: Option<f64>,
    /// Random-search iterations per network, 0 to skip [default: 100]
    #[arg(long)]
    pub random_iters: Option<usize>,
    /// Seed base; network i uses seed + i
    #[arg(long)]
    pub seed: Option<u64>,
    /// [default: compare.csv]
    #[arg(long)]
    pub out_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportArgs {
    /// Comparison CSV written by `compare`
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Summary CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Fills every unset flag from the JSON object in `config`.
pub fn overlay<T: Serialize + DeserializeOwned>(flags: T, config: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = config else {
        return Ok(flags);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut merged: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
    let Value::Object(base) = &mut merged else {
        return Err(CliError::Usage(format!("config {} must be a JSON object", path.display())));
    };
    let Value::Object(explicit) = serde_json::to_value(&flags)? else {
        unreachable!("argument structs serialise to objects");
    };
    for (key, value) in explicit {
        if !value.is_null() {
            base.insert(key, value);
        }
    }
    serde_json::from_value(merged).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
}

pub fn require<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let args = SearchArgs {
            data: DataArgs {
                net: Some("net.spal".into()),
                calib: None,
                samples: Some(64),
                seed: Some(3),
            },
            prune: PruneFlags {
                method: Some("magnitude".into()),
                ..PruneFlags::default()
            },
            sparsity: Some(0.6),
            step: Some(0.004),
            ..SearchArgs::default()
        };
        let json = serde_json::to_string(&args).unwrap();
        let back: SearchArgs = serde_json::from_str(&json).unwrap();
        assert_eq!(back, args);
    }

    #[test]
    fn flags_override_config() {
        let dir = std::env::temp_dir().join(format!("sparsalloc-args-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("c.json");
        std::fs::write(&cfg, r#"{"layers": 4, "dim": 8, "seed": 5}"#).unwrap();
        let flags = GenNetArgs {
            seed: Some(9),
            ..GenNetArgs::default()
        };
        let merged = overlay(flags, Some(&cfg)).unwrap();
        assert_eq!(merged.layers, Some(4));
        assert_eq!(merged.dim, Some(8));
        assert_eq!(merged.seed, Some(9));

        std::fs::write(&cfg, "[1, 2]").unwrap();
        assert!(matches!(overlay(GenNetArgs::default(), Some(&cfg)), Err(CliError::Usage(_))));
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
