use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use sparsalloc::abstractmodel::{propagation_ratios, AbstractErrorParams, ErrorFn};
use sparsalloc::allocator::{allocate_erk, allocate_global, allocate_lamp, allocate_uniform, SparsityProfile};
use sparsalloc::format::{encode_masks, encode_net, load_calibration, load_net, save_calibration, write_atomic};
use sparsalloc::netmodel::{generate_calibration, generate_net, Activation, CalibrationSet, LayerNet};
use sparsalloc::pruner::{prune_net, Granularity, PruneMethod, PruneOptions, ScoringInput};
use sparsalloc::reconerr::{trace_errors, trace_rows};
use sparsalloc::report::{ablation_table, fmt_f64, fmt_opt, ordering_table, search_table, trace_table, CsvTable};
use sparsalloc::search::{
    evaluate_profile, grid_search_beta, random_search_profiles, step_ablation, Objective, SearchConfig,
};
use sparsalloc::validate::{self, DEFAULT_SEED};

use crate::args::*;
use crate::CliError;

const DEFAULT_LAYERS: usize = 32;
const DEFAULT_DIM: usize = 64;
const DEFAULT_SAMPLES: usize = 128;
const DEFAULT_SPARSITY: f64 = 0.7;
const DEFAULT_STEP: f64 = 0.002;
const DEFAULT_ABLATION_STEPS: [f64; 5] = [0.008, 0.004, 0.002, 0.001, 0.0005];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Attaches the path to bare I/O errors from the core loaders.
fn at_path<T>(path: &Path, r: sparsalloc::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        sparsalloc::Error::Io(source) => CliError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    at_path(path, write_atomic(path, bytes))
}

fn write_csv(path: &Path, table: &CsvTable, seed: Option<u64>) -> Result<(), CliError> {
    write_bytes(path, table.render(seed).as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn parse<T: std::str::FromStr<Err = sparsalloc::Error>>(value: Option<&str>, default: T) -> Result<T, CliError> {
    value.map_or(Ok(default), |v| Ok(v.parse()?))
}

fn search_config(flags: &PruneFlags) -> Result<SearchConfig, CliError> {
    let granularity = match flags.granularity.as_deref() {
        None | Some("layer") => Granularity::Layer,
        Some("row") => Granularity::Row,
        Some(other) => return Err(CliError::Usage(format!("unknown granularity '{other}' (layer, row)"))),
    };
    let scoring_input = match flags.scoring_input.as_deref() {
        None | Some("sparse") => ScoringInput::Sparse,
        Some("dense") => ScoringInput::Dense,
        Some(other) => return Err(CliError::Usage(format!("unknown scoring input '{other}' (sparse, dense)"))),
    };
    Ok(SearchConfig {
        method: parse(flags.method.as_deref(), PruneMethod::WandaStyle)?,
        objective: parse(flags.objective.as_deref(), Objective::TotalReconError)?,
        options: PruneOptions {
            granularity,
            scoring_input,
        },
    })
}

fn load_data(data: &DataArgs) -> Result<(LayerNet, CalibrationSet), CliError> {
    let net_path = require(data.net.clone(), "net")?;
    let net = at_path(&net_path, load_net(&net_path))?;
    let calib = match &data.calib {
        Some(path) => at_path(path, load_calibration(path))?,
        None => {
            let seed = data
                .seed
                .ok_or_else(|| CliError::Usage("either --calib or --seed is required".into()))?;
            generate_calibration(net.input_dim(), data.samples.unwrap_or(DEFAULT_SAMPLES), seed)?
        }
    };
    Ok((net, calib))
}

fn write_profile(path: &Path, profile: &SparsityProfile) -> Result<(), CliError> {
    let mut json = profile.to_json()?;
    json.push('\n');
    write_bytes(path, json.as_bytes())?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn gen_net(args: GenNetArgs) -> Result<(), CliError> {
    let seed = require(args.seed, "seed")?;
    let output = require(args.output, "output")?;
    let layers = args.layers.unwrap_or(DEFAULT_LAYERS);
    let dims = args
        .dims
        .unwrap_or_else(|| vec![args.dim.unwrap_or(DEFAULT_DIM); layers + 1]);
    let activation: Activation = parse(args.activation.as_deref(), Activation::Linear)?;
    let net = generate_net(layers, &dims, activation, seed)?;
    let bytes = encode_net(&net);
    write_bytes(&output, &bytes)?;
    println!("wrote {}", output.display());
    println!("sha256 {}", sha256_hex(&bytes));
    Ok(())
}

pub fn gen_calib(args: GenCalibArgs) -> Result<(), CliError> {
    let seed = require(args.seed, "seed")?;
    let output = require(args.output, "output")?;
    let calib = generate_calibration(
        args.features.unwrap_or(DEFAULT_DIM),
        args.samples.unwrap_or(DEFAULT_SAMPLES),
        seed,
    )?;
    at_path(&output, save_calibration(&calib, &output))?;
    println!("wrote {}", output.display());
    println!("sha256 {}", sha256_hex(&std::fs::read(&output).map_err(|source| CliError::Io {
        path: output.clone(),
        source,
    })?));
    Ok(())
}

pub fn search(args: SearchArgs) -> Result<(), CliError> {
    let (net, calib) = load_data(&args.data)?;
    let cfg = search_config(&args.prune)?;
    let s = args.sparsity.unwrap_or(DEFAULT_SPARSITY);
    let step = args.step.unwrap_or(DEFAULT_STEP);
    let report = grid_search_beta(&net, &calib, s, step, &cfg)?;
    println!(
        "evaluated {} candidates in {:.2?}; best beta {} objective {}",
        report.evaluations(),
        report.wall_time,
        fmt_opt(report.best_beta),
        fmt_f64(report.best_objective)
    );
    write_csv(
        &args.out_csv.unwrap_or_else(|| PathBuf::from("search.csv")),
        &search_table(&report),
        args.data.seed,
    )?;
    write_profile(
        &args.out_profile.unwrap_or_else(|| PathBuf::from("profile.json")),
        &report.best_profile,
    )?;
    if let Some(path) = args.out_json {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_bytes(&path, json.as_bytes())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn prune(args: PruneArgs) -> Result<(), CliError> {
    let (net, calib) = load_data(&args.data)?;
    let cfg = search_config(&args.prune)?;
    let profile_path = require(args.profile, "profile")?;
    let text = std::fs::read_to_string(&profile_path).map_err(|source| CliError::Io {
        path: profile_path.clone(),
        source,
    })?;
    let profile = SparsityProfile::from_json(&text)?;
    let pruned = prune_net(&net, &calib, &profile, cfg.method, cfg.options)?;
    let trace = trace_errors(&net, &pruned.sparse_net, &calib)?;
    let rows = trace_rows(&trace, &pruned.sparse_net)?;

    let out_net = args.out_net.unwrap_or_else(|| PathBuf::from("sparse.spal"));
    let bytes = encode_net(&pruned.sparse_net);
    write_bytes(&out_net, &bytes)?;
    println!("wrote {}", out_net.display());
    println!("sha256 {}", sha256_hex(&bytes));
    let out_masks = args.out_masks.unwrap_or_else(|| PathBuf::from("masks.spal"));
    write_bytes(&out_masks, &encode_masks(&pruned.masks))?;
    println!("wrote {}", out_masks.display());

    let mut table = trace_table(&rows);
    table.header.push("requested_rate".into());
    for (row, requested) in table.rows.iter_mut().zip(&profile.rates) {
        row.push(fmt_f64(*requested));
    }
    write_csv(
        &args.out_trace.unwrap_or_else(|| PathBuf::from("trace.csv")),
        &table,
        args.data.seed,
    )?;
    println!("total reconstruction error {}", fmt_f64(trace.total));
    let ratios: Vec<String> = propagation_ratios(&trace.per_layer)
        .into_iter()
        .map(|r| r.map_or_else(|| "-".into(), |v| format!("{v:.3}")))
        .collect();
    println!("layer-to-layer error ratios {}", ratios.join(" "));
    Ok(())
}

pub fn step_ablation_cmd(args: AblationArgs) -> Result<(), CliError> {
    let (net, calib) = load_data(&args.data)?;
    let cfg = search_config(&args.prune)?;
    let steps = args.steps.unwrap_or_else(|| DEFAULT_ABLATION_STEPS.to_vec());
    if steps.iter().any(|&s| !(s > 0.0)) {
        return Err(CliError::Usage("all --steps must be positive".into()));
    }
    let s = args.sparsity.unwrap_or(DEFAULT_SPARSITY);
    let results = step_ablation(&net, &calib, s, &steps, &cfg)?;
    let rows: Vec<_> = results.into_iter().map(|(row, _)| row).collect();
    for r in &rows {
        println!(
            "step {:<8} evaluations {:<5} best beta {:<10} objective {}",
            r.step,
            r.evaluations,
            r.best_beta,
            fmt_f64(r.best_objective)
        );
    }
    write_csv(
        &args.out_csv.unwrap_or_else(|| PathBuf::from("ablation.csv")),
        &ablation_table(&rows),
        args.data.seed,
    )
}

pub fn random_search_cmd(args: RandomSearchArgs) -> Result<(), CliError> {
    let seed = require(args.data.seed, "seed")?;
    let (net, calib) = load_data(&args.data)?;
    let cfg = search_config(&args.prune)?;
    let s = args.sparsity.unwrap_or(DEFAULT_SPARSITY);
    let report = random_search_profiles(&net, &calib, s, args.iters.unwrap_or(1000), seed, &cfg)?;
    println!(
        "sampled {} profiles in {:.2?}; best objective {}",
        report.evaluations(),
        report.wall_time,
        fmt_f64(report.best_objective)
    );
    let mut table = CsvTable::new(["iteration", "objective"]);
    for (i, c) in report.candidates.iter().enumerate() {
        table.push([i.to_string(), fmt_f64(c.objective)]);
    }
    write_csv(&args.out_csv.unwrap_or_else(|| PathBuf::from("random.csv")), &table, Some(seed))?;
    write_profile(
        &args.out_profile.unwrap_or_else(|| PathBuf::from("random_profile.json")),
        &report.best_profile,
    )
}

struct Check {
    name: &'static str,
    measured: String,
    threshold: &'static str,
    passed: bool,
}

fn error_family(name: Option<&str>) -> Result<ErrorFn, CliError> {
    match name.unwrap_or("square") {
        "square" => Ok(ErrorFn::Square),
        "ratio" => Ok(validate::ERROR_FAMILIES[1]),
        "exp" => Ok(validate::ERROR_FAMILIES[2]),
        other => Err(CliError::Usage(format!("unknown f family '{other}' (square, ratio, exp)"))),
    }
}

pub fn validate_cmd(args: ValidateArgs) -> Result<(), CliError> {
    let which = args.theorem.as_deref().unwrap_or("all");
    let known = ["all", "lemma1", "1", "2", "3", "4"];
    if !known.contains(&which) {
        return Err(CliError::Usage(format!("unknown --theorem '{which}' ({})", known.join(", "))));
    }
    let run = |t: &str| which == "all" || which == t;
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let dir = args.out_dir.unwrap_or_else(|| PathBuf::from("validate-out"));
    let mut checks = Vec::new();

    if run("lemma1") {
        let sweep = validate::lemma1_sweep(seed, 1000, Some(50))?;
        let mut t = CsvTable::new(["case", "rows", "cols", "inner", "full_column_rank", "lhs", "rhs", "holds"]);
        for (i, c) in sweep.cases.iter().enumerate() {
            t.push([
                i.to_string(),
                c.rows.to_string(),
                c.cols.to_string(),
                c.inner.to_string(),
                c.full_column_rank.to_string(),
                fmt_f64(c.lhs),
                fmt_f64(c.rhs),
                c.holds().to_string(),
            ]);
        }
        write_csv(&dir.join("lemma1.csv"), &t, Some(seed))?;
        let full: Vec<_> = sweep.cases.iter().filter(|c| c.full_column_rank).collect();
        let deficient_holding = sweep
            .cases
            .iter()
            .filter(|c| !c.full_column_rank && c.holds())
            .count();
        println!(
            "lemma1: rank-deficient draws {} (bound held in {}; reported only)",
            sweep.rank_deficient, deficient_holding
        );
        checks.push(Check {
            name: "lemma1 product bound (full column rank)",
            measured: format!("{}/{}", full.iter().filter(|c| c.holds()).count(), full.len()),
            threshold: "all",
            passed: sweep.passed(),
        });
    }

    if run("1") {
        let methods: Vec<PruneMethod> = match (which, args.nested) {
            ("1", Some(true)) => vec![PruneMethod::Magnitude],
            ("1", _) => vec![PruneMethod::WandaStyle],
            _ if args.nested == Some(true) => vec![PruneMethod::Magnitude],
            _ => vec![PruneMethod::Magnitude, PruneMethod::WandaStyle],
        };
        for method in methods {
            let sweep = validate::theorem1_sweep(seed, 100, method)?;
            let mut t = CsvTable::new(["layer", "monotone_fraction", "nested"]);
            for (i, (frac, nested)) in sweep.layers.iter().enumerate() {
                t.push([i.to_string(), fmt_f64(*frac), nested.to_string()]);
            }
            write_csv(&dir.join(format!("theorem1_{method}.csv")), &t, Some(seed))?;
            checks.push(Check {
                name: if method == PruneMethod::Magnitude {
                    "theorem1 monotone error (magnitude, nested)"
                } else {
                    "theorem1 monotone error (activation-aware)"
                },
                measured: format!(
                    "mean fraction {:.4}, {}/100 fully monotone",
                    sweep.mean_fraction(),
                    sweep.fully_monotone()
                ),
                threshold: if method == PruneMethod::Magnitude { "1.0" } else { ">= 0.99" },
                passed: sweep.passed(),
            });
        }
    }

    if run("2") {
        let sweep = validate::theorem2_sweep(seed, 50)?;
        let mut t = CsvTable::new(["net", "layer", "lhs", "sigma_min_sq", "rhs", "ratio", "holds"]);
        for (net, r) in &sweep.rows {
            t.push([
                net.to_string(),
                r.layer.to_string(),
                fmt_f64(r.lhs),
                fmt_f64(r.sigma_min_sq),
                fmt_f64(r.rhs),
                fmt_f64(r.ratio()),
                r.holds.to_string(),
            ]);
        }
        write_csv(&dir.join("theorem2.csv"), &t, Some(seed))?;
        checks.push(Check {
            name: "theorem2 propagation bound",
            measured: format!("{:.4} of {} pairs", sweep.fraction(), sweep.rows.len()),
            threshold: ">= 0.95",
            passed: sweep.passed(),
        });
    }

    if run("3") {
        let sweep = validate::theorem3_sweep(seed, 200)?;
        let mut t = CsvTable::new(["trial", "layer", "next_error_before", "next_error_after", "non_decreasing"]);
        for (i, tr) in sweep.trials.iter().enumerate() {
            t.push([
                i.to_string(),
                tr.layer.to_string(),
                fmt_f64(tr.next_error_before),
                fmt_f64(tr.next_error_after),
                tr.non_decreasing().to_string(),
            ]);
        }
        write_csv(&dir.join("theorem3.csv"), &t, Some(seed))?;
        checks.push(Check {
            name: "theorem3 next-layer error after raising a rate",
            measured: format!("{:.4} of 200 trials", sweep.fraction()),
            threshold: ">= 0.95",
            passed: sweep.passed(),
        });
    }

    if run("4") {
        let layers = args.layers.unwrap_or(6);
        let params = AbstractErrorParams::new(args.c.unwrap_or(1.5), error_family(args.f.as_deref())?)?;
        let table = validate::theorem4_table(layers, &params)?;
        write_csv(&dir.join("theorem4.csv"), &ordering_table(&table), None)?;
        println!("theorem4: {} orderings of {layers} rates", table.ranking.len());
        checks.push(Check {
            name: "theorem4 ascending ordering strictly minimal (table)",
            measured: format!("{} counterexamples", table.counterexamples()),
            threshold: "0",
            passed: table.degenerate || table.ascending_strict_min,
        });
        let sweep = validate::theorem4_sweep(3, 6)?;
        checks.push(Check {
            name: "theorem4 exhaustive sweep",
            measured: format!("{} counterexamples in {} cases", sweep.counterexamples, sweep.cases),
            threshold: "0",
            passed: sweep.passed(),
        });
    }

    let mut summary = CsvTable::new(["check", "measured", "threshold", "status"]);
    for c in &checks {
        let status = if c.passed { "PASS" } else { "FAIL" };
        println!("[{status}] {}: {} (threshold {})", c.name, c.measured, c.threshold);
        summary.push([c.name.to_string(), c.measured.replace(',', ";"), c.threshold.to_string(), status.to_string()]);
    }
    write_csv(&dir.join("summary.csv"), &summary, Some(seed))?;
    let failed: Vec<_> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed.join("; ")))
    }
}

const ALLOCATORS: [&str; 6] = ["uniform", "atp", "erk", "lamp", "global", "random_search"];

pub fn compare(args: CompareArgs) -> Result<(), CliError> {
    let seed = require(args.seed, "seed")?;
    let cfg = search_config(&args.prune)?;
    let nets = args.nets.unwrap_or(20);
    let layers = args.layers.unwrap_or(DEFAULT_LAYERS);
    let dim = args.dim.unwrap_or(DEFAULT_DIM);
    let samples = args.samples.unwrap_or(DEFAULT_SAMPLES);
    let levels = args.sparsity.unwrap_or_else(|| vec![0.5, 0.6, 0.7]);
    let step = args.step.unwrap_or(DEFAULT_STEP);
    let iters = args.random_iters.unwrap_or(100);

    let per_net = (0..nets as u64)
        .into_par_iter()
        .map(|i| {
            let net_seed = seed + i;
            let net = generate_net(layers, &vec![dim; layers + 1], Activation::Linear, net_seed)?;
            let calib = generate_calibration(dim, samples, net_seed)?;
            let mut rows = Vec::new();
            for &s in &levels {
                let atp = grid_search_beta(&net, &calib, s, step, &cfg)?;
                let eval = |p: &SparsityProfile| evaluate_profile(&net, &calib, p, &cfg);
                let mut push = |name: &str, objective: f64, beta: Option<f64>| {
                    rows.push([
                        net_seed.to_string(),
                        fmt_f64(s),
                        name.to_string(),
                        fmt_f64(objective),
                        fmt_opt(beta),
                    ]);
                };
                push("uniform", eval(&allocate_uniform(s, layers)?)?, None);
                push("atp", atp.best_objective, atp.best_beta);
                push("erk", eval(&allocate_erk(&net, s)?)?, None);
                push("lamp", eval(&allocate_lamp(&net, s)?)?, None);
                push("global", eval(&allocate_global(&net, s)?)?, None);
                if iters > 0 {
                    let rs = random_search_profiles(&net, &calib, s, iters, net_seed, &cfg)?;
                    push("random_search", rs.best_objective, None);
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>, sparsalloc::Error>>()?;

    let mut table = CsvTable::new(["net_seed", "S", "allocator", "objective", "beta"]);
    for row in per_net.into_iter().flatten() {
        table.push(row);
    }
    write_csv(&args.out_csv.unwrap_or_else(|| PathBuf::from("compare.csv")), &table, Some(seed))
}

#[derive(Debug, serde::Deserialize)]
struct CompareRow {
    net_seed: u64,
    #[serde(rename = "S")]
    s: f64,
    allocator: String,
    objective: f64,
}

pub fn report(args: ReportArgs) -> Result<(), CliError> {
    let input = require(args.input, "input")?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(&input)?;
    // (S in bits, net) -> allocator -> objective
    let mut by_net: BTreeMap<(u64, u64), BTreeMap<String, f64>> = BTreeMap::new();
    for row in reader.deserialize() {
        let row: CompareRow = row?;
        by_net
            .entry((row.s.to_bits(), row.net_seed))
            .or_default()
            .insert(row.allocator, row.objective);
    }
    if by_net.is_empty() {
        return Err(CliError::Usage(format!("{} holds no comparison rows", input.display())));
    }

    let mut levels: Vec<u64> = by_net.keys().map(|k| k.0).collect();
    levels.dedup();
    let mut summary = CsvTable::new([
        "S",
        "allocator",
        "nets",
        "mean_objective",
        "mean_ratio_to_uniform",
        "wins_vs_uniform",
        "losses_vs_uniform",
        "ties_vs_uniform",
    ]);
    println!("| S | allocator | nets | mean objective | mean / uniform | wins | losses | ties |");
    println!("|---|---|---|---|---|---|---|---|");
    for bits in levels {
        let s = f64::from_bits(bits);
        let nets: Vec<&BTreeMap<String, f64>> = by_net
            .iter()
            .filter(|(k, _)| k.0 == bits)
            .map(|(_, v)| v)
            .collect();
        for name in ALLOCATORS {
            let pairs: Vec<(f64, f64)> = nets
                .iter()
                .filter_map(|m| Some((*m.get(name)?, *m.get("uniform")?)))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let n = pairs.len() as f64;
            let mean = pairs.iter().map(|p| p.0).sum::<f64>() / n;
            let ratio = pairs.iter().map(|p| p.0 / p.1).sum::<f64>() / n;
            let wins = pairs.iter().filter(|p| p.0 < p.1).count();
            let losses = pairs.iter().filter(|p| p.0 > p.1).count();
            let ties = pairs.len() - wins - losses;
            println!("| {s} | {name} | {} | {mean:.6e} | {ratio:.4} | {wins} | {losses} | {ties} |", pairs.len());
            summary.push([
                fmt_f64(s),
                name.to_string(),
                pairs.len().to_string(),
                fmt_f64(mean),
                fmt_f64(ratio),
                wins.to_string(),
                losses.to_string(),
                ties.to_string(),
            ]);
        }
    }
    if let Some(out) = args.out {
        write_csv(&out, &summary, None)?;
    }
    Ok(())
}
