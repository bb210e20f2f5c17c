//! Command-line front end.
//!
//! Every command reads an optional scenario file (see [`config`]), applies
//! `--set` overrides and writes its results as CSV plus a `manifest.txt`
//! holding the resolved configuration into `--out`. All randomness derives
//! from `--seed`, so equal flags give byte-identical files.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible scenario,
//! 4 I/O error, 1 anything else.

pub mod config;
pub mod output;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

pub use config::{parse_config, Resolved, ScenarioFile};
use output::{emit_round_csv, num, opt_num, write_csv, write_text};

use crate::codec::{
    compress_model, compressed_bits_bound, decode_with_mask, quantize, reconstruct_sparse, sparsify, CompressionConfig,
};
use crate::error::{Error, Result};
use crate::fedsim::{
    energy_to_target, run_modeled_with, run_toy_training, RoundLedger, Scenario, Strategy, ToyTrainSpec,
};
use crate::grad::{generate_synthetic, LayerShape, ModelGradient, SyntheticGradientSpec};
use crate::optimizer::solve_all;
use crate::perf::fit_kappa;
use crate::rng;

#[derive(Debug, Parser)]
#[command(
    name = "fedgreen",
    version,
    about = "Energy-aware gradient compression for federated learning"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve every device's ratio and frequency for one round.
    Solve(CommonArgs),
    /// Run modeled rounds of one strategy.
    Simulate(SimulateArgs),
    /// Run several strategies on the same scenarios and summarise.
    Compare(CompareArgs),
    /// Train the toy network through the codec.
    ToyTrain(ToyArgs),
    /// Fit the accuracy model to (alpha, accuracy) points from a CSV file.
    FitKappa(FitArgs),
    /// Compress, decode and verify a synthetic model gradient.
    CodecRoundtrip(CodecArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML, or JSON by extension). Defaults apply without one.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Root seed; replaces the file's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a scenario key, e.g. `config.T_max=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    pub rounds: u32,
    /// fedgreen, random, uniform, selection, uncompressed or fixed:<alpha>.
    #[arg(long, default_value = "fedgreen")]
    pub strategy: String,
    /// Contribution at which energy-to-target is measured.
    #[arg(long)]
    pub target_contribution: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, default_value_t = 10)]
    pub rounds: u32,
    /// Strategies to compare; repeatable or comma separated.
    #[arg(long, value_delimiter = ',', default_value = "fedgreen,random,uniform,selection")]
    pub strategy: Vec<String>,
    /// Absolute target; defaults to 0.95 of FedGreen's first-round contribution.
    #[arg(long)]
    pub target_contribution: Option<f64>,
    /// Number of scenarios, seeded `seed`, `seed + 1`, ...
    #[arg(long, default_value_t = 1)]
    pub replicates: u64,
    /// Worker threads for independent replicates.
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Clone, Args)]
pub struct ToyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Overrides `toy.rounds`.
    #[arg(long)]
    pub rounds: Option<u32>,
    #[arg(long, default_value = "fedgreen")]
    pub strategy: String,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with columns `alpha,accuracy`.
    #[arg(long)]
    pub points: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct CodecArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Target compression ratio.
    #[arg(long, default_value_t = 8.0)]
    pub alpha: f64,
    /// Independent gradients to push through the codec.
    #[arg(long, default_value_t = 10)]
    pub trials: u32,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config { .. } => 2,
        Error::Infeasible(_) => 3,
        Error::Io(_) => 4,
        _ => 1,
    }
}

/// Parses process arguments, runs the command and maps errors to exit codes.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Runs a parsed command and returns a short human-readable report.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Solve(a) => solve(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::ToyTrain(a) => toy_train(a),
        Command::FitKappa(a) => fit(a),
        Command::CodecRoundtrip(a) => codec_roundtrip(a),
    }
}

fn resolve(common: &CommonArgs) -> Result<Resolved> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    parse_config(common.scenario.as_deref(), &overrides)
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))
}

fn parse_strategy(s: &str) -> Result<Strategy> {
    s.trim().parse()
}

fn manifest(command: &str, common: &CommonArgs, extra: &[(&str, String)], resolved: &Resolved) -> Result<String> {
    let mut m = String::new();
    let _ = writeln!(m, "fedgreen {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(m, "command: {command}");
    let _ = writeln!(
        m,
        "scenario: {}",
        common
            .scenario
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "(defaults)".into())
    );
    for o in &common.overrides {
        let _ = writeln!(m, "set: {o}");
    }
    for (k, v) in extra {
        let _ = writeln!(m, "{k}: {v}");
    }
    let _ = writeln!(m, "\n# resolved configuration");
    m.push_str(&toml::to_string(&resolved.file).map_err(|e| Error::Io(e.to_string()))?);
    let _ = writeln!(m, "\n# devices");
    let _ = writeln!(m, "device_id,f_max,power,bandwidth,gain,epsilon,data");
    for d in &resolved.scenario.devices {
        let _ = writeln!(
            m,
            "{},{},{},{},{},{},{}",
            d.device_id,
            num(d.f_max),
            num(d.power),
            num(d.bandwidth),
            num(d.gain),
            num(d.epsilon),
            d.data
        );
    }
    Ok(m)
}

fn solve(a: &CommonArgs) -> Result<String> {
    let r = resolve(a)?;
    let s = &r.scenario;
    let plans = solve_all(&s.devices, &s.config, &s.accuracy_model, &r.file.solver)?;
    if !plans.iter().any(|p| p.feasible) {
        return Err(Error::Infeasible("no device can meet the deadline".into()));
    }
    prepare_out(&a.out)?;
    let rows: Vec<Vec<String>> = plans
        .iter()
        .map(|p| {
            vec![
                p.device_id.to_string(),
                num(p.alpha),
                num(p.f),
                num(p.beta),
                num(p.objective_share),
                p.feasible.to_string(),
                p.boundary.as_str().to_string(),
            ]
        })
        .collect();
    write_csv(
        &a.out.join("plans.csv"),
        &[
            "device_id",
            "alpha",
            "f_hz",
            "beta",
            "objective_share",
            "feasible",
            "boundary",
        ],
        &rows,
    )?;
    write_text(&a.out.join("manifest.txt"), &manifest("solve", a, &[], &r)?)?;
    let total: f64 = plans.iter().map(|p| p.objective_share).sum();
    Ok(format!("solved {} devices, goal {}\n", plans.len(), num(total)))
}

#[derive(Debug, Clone, PartialEq)]
struct Summary {
    strategy: Strategy,
    mean_goal: f64,
    contribution: f64,
    total_energy: f64,
    energy_to_target: Option<f64>,
    clamped_rounds: usize,
}

fn summarise(strategy: Strategy, ledgers: &[RoundLedger], target: f64) -> Summary {
    let last = ledgers.last().expect("at least one round");
    Summary {
        strategy,
        mean_goal: ledgers.iter().map(|l| l.goal).sum::<f64>() / ledgers.len() as f64,
        contribution: last.contribution,
        total_energy: last.cumulative_energy,
        energy_to_target: energy_to_target(ledgers, target),
        clamped_rounds: ledgers.iter().filter(|l| l.accuracy_clamped).count(),
    }
}

fn simulate(a: &SimulateArgs) -> Result<String> {
    let r = resolve(&a.common)?;
    let strategy = parse_strategy(&a.strategy)?;
    if a.rounds == 0 {
        return Err(Error::config("rounds", "must be at least 1"));
    }
    let ledgers = run_modeled_with(&r.scenario, strategy, a.rounds, &r.file.solver)?;
    let target = a.target_contribution.unwrap_or(0.95 * ledgers[0].contribution);
    let s = summarise(strategy, &ledgers, target);
    prepare_out(&a.common.out)?;
    emit_round_csv(&ledgers, &a.common.out.join("rounds.csv"))?;
    write_csv(
        &a.common.out.join("summary.csv"),
        &[
            "strategy",
            "rounds",
            "mean_goal",
            "contribution",
            "total_energy_j",
            "target_contribution",
            "energy_to_target_j",
            "clamped_rounds",
        ],
        &[vec![
            strategy.to_string(),
            a.rounds.to_string(),
            num(s.mean_goal),
            num(s.contribution),
            num(s.total_energy),
            num(target),
            opt_num(s.energy_to_target),
            s.clamped_rounds.to_string(),
        ]],
    )?;
    let extra = [("rounds", a.rounds.to_string()), ("strategy", strategy.to_string())];
    write_text(
        &a.common.out.join("manifest.txt"),
        &manifest("simulate", &a.common, &extra, &r)?,
    )?;
    Ok(format!(
        "{strategy}: mean goal {}, energy {} J over {} rounds\n",
        num(s.mean_goal),
        num(s.total_energy),
        a.rounds
    ))
}

struct Replicate {
    seed: u64,
    target: f64,
    runs: Vec<(Summary, Vec<RoundLedger>)>,
}

fn run_replicate(
    base: &Scenario,
    seed: u64,
    strategies: &[Strategy],
    rounds: u32,
    target: Option<f64>,
    r: &Resolved,
) -> Result<Replicate> {
    let scenario = if seed == base.seed {
        base.clone()
    } else {
        let mut file = r.file.clone();
        file.seed = seed;
        file.resolve()?.scenario
    };
    let ledgers = strategies
        .iter()
        .map(|&s| run_modeled_with(&scenario, s, rounds, &r.file.solver))
        .collect::<Result<Vec<_>>>()?;
    let reference = strategies
        .iter()
        .position(|&s| s == Strategy::FedGreen)
        .map(|i| ledgers[i][0].contribution)
        .unwrap_or_else(|| {
            ledgers
                .iter()
                .map(|l| l[0].contribution)
                .fold(f64::NEG_INFINITY, f64::max)
        });
    let target = target.unwrap_or(0.95 * reference);
    let runs = strategies
        .iter()
        .zip(ledgers)
        .map(|(&s, l)| (summarise(s, &l, target), l))
        .collect();
    Ok(Replicate { seed, target, runs })
}

fn compare(a: &CompareArgs) -> Result<String> {
    let r = resolve(&a.common)?;
    let strategies = a
        .strategy
        .iter()
        .map(|s| parse_strategy(s))
        .collect::<Result<Vec<_>>>()?;
    if strategies.len() < 2 {
        return Err(Error::config("strategy", "compare needs at least two strategies"));
    }
    if a.rounds == 0 || a.replicates == 0 || a.parallel == 0 {
        return Err(Error::config(
            "rounds",
            "rounds, replicates and parallel must be at least 1",
        ));
    }
    let seeds: Vec<u64> = (0..a.replicates).map(|k| r.file.seed.wrapping_add(k)).collect();
    let mut results: Vec<Option<Result<Replicate>>> = (0..seeds.len()).map(|_| None).collect();
    let workers = a.parallel.min(seeds.len());
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                let (seeds, strategies, r) = (&seeds, &strategies, &r);
                scope.spawn(move || {
                    (w..seeds.len())
                        .step_by(workers)
                        .map(|k| {
                            (
                                k,
                                run_replicate(&r.scenario, seeds[k], strategies, a.rounds, a.target_contribution, r),
                            )
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        for h in handles {
            for (k, res) in h.join().expect("worker panicked") {
                results[k] = Some(res);
            }
        }
    });
    let replicates = results
        .into_iter()
        .map(|x| x.expect("every replicate ran"))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut wins = 0;
    for (k, rep) in replicates.iter().enumerate() {
        let best = rep
            .runs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .0.mean_goal.total_cmp(&y.1 .0.mean_goal).then(y.0.cmp(&x.0)))
            .map(|(i, _)| i)
            .unwrap();
        let fg_energy = rep
            .runs
            .iter()
            .find(|x| x.0.strategy == Strategy::FedGreen)
            .map(|x| x.0.total_energy);
        if rep.runs[best].0.strategy == Strategy::FedGreen {
            wins += 1;
        }
        for (i, (s, _)) in rep.runs.iter().enumerate() {
            rows.push(vec![
                k.to_string(),
                rep.seed.to_string(),
                s.strategy.to_string(),
                num(s.mean_goal),
                num(s.contribution),
                num(s.total_energy),
                num(rep.target),
                opt_num(s.energy_to_target),
                opt_num(fg_energy.map(|e| s.total_energy / e)),
                (i == best).to_string(),
            ]);
        }
    }
    prepare_out(&a.common.out)?;
    write_csv(
        &a.common.out.join("summary.csv"),
        &[
            "replicate",
            "seed",
            "strategy",
            "mean_goal",
            "contribution",
            "total_energy_j",
            "target_contribution",
            "energy_to_target_j",
            "energy_ratio_vs_fedgreen",
            "best",
        ],
        &rows,
    )?;
    for (s, l) in &replicates[0].runs {
        emit_round_csv(
            l,
            &a.common
                .out
                .join(format!("rounds_{}.csv", s.strategy.to_string().replace(':', "_"))),
        )?;
    }
    let extra = [
        ("rounds", a.rounds.to_string()),
        ("strategies", a.strategy.join(",")),
        ("replicates", a.replicates.to_string()),
        (
            "target_contribution",
            a.target_contribution
                .map(num)
                .unwrap_or_else(|| "0.95 x fedgreen".into()),
        ),
    ];
    write_text(
        &a.common.out.join("manifest.txt"),
        &manifest("compare", &a.common, &extra, &r)?,
    )?;
    let mut report = format!("{} replicate(s), {} strategies\n", replicates.len(), strategies.len());
    if strategies.contains(&Strategy::FedGreen) {
        let _ = writeln!(report, "fedgreen has the best goal in {wins}/{}", replicates.len());
    }
    Ok(report)
}

fn toy_train(a: &ToyArgs) -> Result<String> {
    let r = resolve(&a.common)?;
    let t = &r.file.toy;
    let spec = ToyTrainSpec {
        seed: r.file.seed,
        rounds: a.rounds.unwrap_or(t.rounds),
        samples_per_device: t.samples_per_device,
        learning_rate: t.learning_rate,
        strategy: parse_strategy(&a.strategy)?,
        test_samples: t.test_samples,
        compression: r.compression,
    };
    let run = run_toy_training(&r.scenario, &spec)?;
    prepare_out(&a.common.out)?;
    emit_round_csv(&run.ledgers, &a.common.out.join("rounds.csv"))?;
    let rows: Vec<Vec<String>> = (0..run.test_accuracy.len())
        .map(|i| {
            vec![
                (i + 1).to_string(),
                num(run.train_loss[i]),
                num(run.test_accuracy[i]),
                num(run.achieved_alpha[i]),
            ]
        })
        .collect();
    write_csv(
        &a.common.out.join("toy.csv"),
        &["round", "train_loss", "test_accuracy", "achieved_alpha"],
        &rows,
    )?;
    let extra = [
        ("rounds", spec.rounds.to_string()),
        ("strategy", spec.strategy.to_string()),
    ];
    write_text(
        &a.common.out.join("manifest.txt"),
        &manifest("toy-train", &a.common, &extra, &r)?,
    )?;
    Ok(format!(
        "final test accuracy {:.4} after {} rounds\n",
        run.test_accuracy.last().copied().unwrap_or(0.0),
        spec.rounds
    ))
}

fn fit(a: &FitArgs) -> Result<String> {
    let r = resolve(&a.common)?;
    let mut reader =
        csv::Reader::from_path(&a.points).map_err(|e| Error::Io(format!("{}: {e}", a.points.display())))?;
    let mut points = Vec::new();
    for (i, rec) in reader.deserialize::<(f64, f64)>().enumerate() {
        let p = rec.map_err(|e| Error::config(format!("points line {}", i + 2), e.to_string()))?;
        points.push(p);
    }
    let f = fit_kappa(&points)?;
    prepare_out(&a.common.out)?;
    let m = f.model;
    write_csv(
        &a.common.out.join("fit.csv"),
        &["kappa1", "kappa2", "kappa3", "kappa4", "clamp_epsilon", "rss", "rms"],
        &[vec![
            num(m.kappa1),
            num(m.kappa2),
            num(m.kappa3),
            num(m.kappa4),
            num(m.clamp_epsilon),
            num(f.rss),
            num(f.rms),
        ]],
    )?;
    let extra = [("points", a.points.display().to_string())];
    write_text(
        &a.common.out.join("manifest.txt"),
        &manifest("fit-kappa", &a.common, &extra, &r)?,
    )?;
    Ok(format!(
        "kappa = ({}, {}, {}, {}), rms {}\n",
        num(m.kappa1),
        num(m.kappa2),
        num(m.kappa3),
        num(m.kappa4),
        num(f.rms)
    ))
}

/// Layers used by `codec-roundtrip`.
pub fn roundtrip_shapes() -> Vec<LayerShape> {
    vec![
        LayerShape::conv(0, 16, 8, 3).unwrap(),
        LayerShape::bias(1, 16).unwrap(),
        LayerShape::fully_connected(2, 10, 256).unwrap(),
        LayerShape::bias(3, 10).unwrap(),
    ]
}

fn codec_roundtrip(a: &CodecArgs) -> Result<String> {
    let r = resolve(&a.common)?;
    if !(a.alpha >= 1.0) {
        return Err(Error::config("alpha", format!("must be >= 1, got {}", a.alpha)));
    }
    let config: CompressionConfig = r.compression;
    let mut rows = Vec::new();
    let mut failures = 0;
    for trial in 0..a.trials {
        let seed = rng::derive_seed(r.file.seed, &[u64::from(trial)]);
        let spec = SyntheticGradientSpec::new(seed, 8.0)?;
        let layers = roundtrip_shapes()
            .iter()
            .map(|s| generate_synthetic(s, &spec))
            .collect();
        let model = ModelGradient::new(layers, 1)?;
        let c = compress_model(&model, a.alpha, &config, seed)?;
        for (t, blob) in model.layers().iter().zip(&c.layers) {
            let shape = t.shape();
            let decoded = decode_with_mask(blob)?;
            let expected = match config.levels_for(shape.kind()) {
                None => t.clone(),
                Some(levels) => {
                    let s = sparsify(t, c.rho)?;
                    let q = quantize(
                        &s.kept_values,
                        levels,
                        rng::derive_seed(seed, &[u64::from(shape.layer_id())]),
                    )?;
                    reconstruct_sparse(&q.dequantize(), &s.mask, shape)?
                }
            };
            let exact = expected
                .values()
                .iter()
                .zip(decoded.tensor.values())
                .all(|(x, y)| x.to_bits() == y.to_bits());
            failures += usize::from(!exact);
            let bound = config
                .levels_for(shape.kind())
                .map(|l| compressed_bits_bound(shape, c.rho, l));
            rows.push(vec![
                trial.to_string(),
                shape.layer_id().to_string(),
                format!("{:?}", shape.kind()).to_lowercase(),
                shape.c_out().to_string(),
                shape.c_in().to_string(),
                shape.k().to_string(),
                blob.levels.to_string(),
                decoded.mask.kept_count().to_string(),
                format!("{:?}", blob.mask_encoding).to_lowercase(),
                format!("{:?}", blob.index_encoding).to_lowercase(),
                blob.bit_counts.payload().to_string(),
                bound.map(|b| b.to_string()).unwrap_or_default(),
                blob.bit_counts.total().to_string(),
                exact.to_string(),
            ]);
        }
    }
    prepare_out(&a.common.out)?;
    write_csv(
        &a.common.out.join("codec.csv"),
        &[
            "trial",
            "layer_id",
            "kind",
            "c_out",
            "c_in",
            "k",
            "levels",
            "kept_kernels",
            "mask_encoding",
            "index_encoding",
            "payload_bits",
            "bound_bits",
            "wire_bits",
            "exact",
        ],
        &rows,
    )?;
    let extra = [("alpha", num(a.alpha)), ("trials", a.trials.to_string())];
    write_text(
        &a.common.out.join("manifest.txt"),
        &manifest("codec-roundtrip", &a.common, &extra, &r)?,
    )?;
    if failures > 0 {
        return Err(Error::format(0, format!("{failures} layer(s) did not decode exactly")));
    }
    Ok(format!("{} layers decoded exactly\n", rows.len()))
}
