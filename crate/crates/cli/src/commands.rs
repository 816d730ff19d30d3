use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use acae_core::checkpoint::{load_checkpoint, save_checkpoint};
use acae_core::data::{
    binarize, dedupe_earliest, parse_log, split_leave_one_out, validation_split, Binarized, DatasetStats,
};
use acae_core::evaluation::{
    curves_to_csv, evaluate, itempop as itempop_report, noise_impact_probe, robustness_sweep, DEFAULT_EPS_GRID,
};
use acae_core::training::{adversarial_train, init_params, pretrain, trace_to_csv, TraceRow, TrainingData};
use acae_core::{BinaryDataset, ModelParams, NoiseKind, NoiseSite, RngStream, SplitSpec};
use anyhow::{Context, Result};
use clap::Args;

use crate::config::{apply_override, ExperimentConfig};
use crate::UsageError;

pub const SPLIT_FILE: &str = "split.txt";
pub const CONFIG_FILE: &str = "config.toml";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_config(cfg: &ExperimentConfig) -> Result<()> {
    write_file(&cfg.out.join(CONFIG_FILE), cfg.to_toml())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, UsageError> {
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| UsageError(format!("{what}: cannot parse {s:?}")))
        })
        .collect()
}

struct Loaded {
    raw: DatasetStats,
    binarized: Binarized,
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Loaded> {
    let path = cfg.require_dataset()?;
    let log = parse_log(path, cfg.format()?, cfg.roles())?;
    for w in log.warnings.iter().take(10) {
        eprintln!("warning: {}:{}: {}", path.display(), w.line, w.reason);
    }
    if log.warnings.len() > 10 {
        eprintln!("warning: {} more malformed lines skipped", log.warnings.len() - 10);
    }
    let raw = log.stats();
    let log = if cfg.dataset.dedupe { dedupe_earliest(&log)? } else { log };
    let binarized = binarize(&log, cfg.dataset.threshold, cfg.mode()?);
    Ok(Loaded { raw, binarized })
}

#[derive(Args, Clone, Default)]
pub struct SplitArgs {
    /// Split file; defaults to `<out>/split.txt`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Report path; defaults to a file in the output directory.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

fn load_split(cfg: &ExperimentConfig, ds: &BinaryDataset, path: Option<&Path>) -> Result<SplitSpec> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| cfg.out.join(SPLIT_FILE));
    if !path.is_file() {
        return Err(UsageError(format!("split file {} does not exist; run `acae prepare` first", path.display())).into());
    }
    Ok(SplitSpec::read(&path, ds)?)
}

fn load_model(path: &Path) -> Result<ModelParams> {
    if !path.is_file() {
        return Err(UsageError(format!("checkpoint {} does not exist", path.display())).into());
    }
    Ok(load_checkpoint(path)?)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<()> {
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    if !loaded.binarized.dropped_users.is_empty() {
        eprintln!(
            "{} users have no positive ratings and were dropped",
            loaded.binarized.dropped_users.len()
        );
    }
    let split = split_leave_one_out(ds, cfg.split_seed(), cfg.split.n_neg)?;
    write_file(&cfg.out.join(SPLIT_FILE), split.to_text())?;
    let stats = format!("{}\n{}\n", DatasetStats::CSV_HEADER, loaded.raw.csv_row());
    write_file(&cfg.out.join("stats.csv"), &stats)?;
    write_file(
        &cfg.out.join("binary_stats.csv"),
        format!("{}\n{}\n", DatasetStats::CSV_HEADER, ds.stats().csv_row()),
    )?;
    write_config(cfg)?;
    print!("{stats}");
    println!("tested users: {}", split.tested_count());
    Ok(())
}

#[derive(Args, Clone, Default)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// Stop after pre-training.
    #[arg(long)]
    pub skip_adversarial: bool,
    /// Start adversarial training from this checkpoint instead of pre-training.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Suppress per-evaluation progress lines.
    #[arg(long)]
    pub quiet: bool,
}

fn print_row(r: &TraceRow) {
    eprintln!(
        "{:>11} epoch {:>4}  loss {:.4}  HR@5 {:.4}  NDCG@5 {:.4}",
        r.stage.name(),
        r.epoch,
        r.loss,
        r.hr5,
        r.ndcg5
    );
}

fn fresh_params(cfg: &ExperimentConfig, ds: &BinaryDataset) -> Result<ModelParams> {
    let (enc, dec) = cfg.activations()?;
    let pc = cfg.pretrain_config();
    let mut rng = RngStream::with_stream(pc.seed, 1);
    Ok(init_params(ds.user_count(), ds.item_count(), cfg.model.k, enc, dec, pc.init_std, &mut rng)?)
}

pub fn validation_for(cfg: &ExperimentConfig, ds: &BinaryDataset, test: &SplitSpec) -> Result<SplitSpec> {
    Ok(validation_split(ds, test, cfg.split_seed().wrapping_add(1), cfg.split.n_neg)?)
}

fn check_shape(params: &ModelParams, ds: &BinaryDataset, what: &Path) -> Result<()> {
    if params.users() != ds.user_count() || params.items() != ds.item_count() {
        return Err(acae_core::AcaeError::Shape {
            op: "load checkpoint",
            expected: format!("{} users x {} items", ds.user_count(), ds.item_count()),
            actual: format!("{} users x {} items in {}", params.users(), params.items(), what.display()),
        }
        .into());
    }
    Ok(())
}

fn report_line(label: &str, params: &ModelParams, test: &SplitSpec) -> Result<String> {
    let r = evaluate(params, test, &[5, 10])?;
    Ok(format!(
        "{label}: HR@5 {:.4}  NDCG@5 {:.4}  HR@10 {:.4}  NDCG@10 {:.4}  ({} users)",
        r.hr(5),
        r.ndcg(5),
        r.hr(10),
        r.ndcg(10),
        r.users
    ))
}

pub fn train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<()> {
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    let test = load_split(cfg, ds, args.split.split.as_deref())?;
    let validation = validation_for(cfg, ds, &test)?;
    write_config(cfg)?;

    let show = |r: &TraceRow| print_row(r);
    let mut data = TrainingData::new(&validation);
    data.monitor = Some(&test);
    if !args.quiet {
        data.progress = Some(&show);
    }

    let mut trace: Vec<TraceRow> = Vec::new();
    let mut test_trace: Vec<TraceRow> = Vec::new();
    let start = match &args.init {
        Some(path) => {
            let p = load_model(path)?;
            check_shape(&p, ds, path)?;
            p
        }
        None => {
            let out = pretrain(fresh_params(cfg, ds)?, &data, &cfg.pretrain_config())?;
            save_checkpoint(&out.params, &cfg.out.join("pre.ckpt"))?;
            trace.extend(&out.trace);
            test_trace.extend(&out.monitor);
            println!("{}", report_line("pretrain", &out.params, &test)?);
            out.params
        }
    };

    if !args.skip_adversarial {
        let out = adversarial_train(start, &data, &cfg.adv_config(), cfg.gamma)?;
        save_checkpoint(&out.params, &cfg.out.join("adv.ckpt"))?;
        trace.extend(&out.trace);
        test_trace.extend(&out.monitor);
        println!("{}", report_line("adversarial", &out.params, &test)?);
    }
    write_file(&cfg.out.join("trace.csv"), trace_to_csv(&trace))?;
    write_file(&cfg.out.join("test_trace.csv"), trace_to_csv(&test_trace))?;
    Ok(())
}

#[derive(Args, Clone)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated cutoffs.
    #[arg(long, default_value = "5,10")]
    pub n: String,
}

pub fn eval(cfg: &ExperimentConfig, args: &EvalArgs) -> Result<()> {
    let cutoffs: Vec<usize> = parse_list(&args.n, "--n")?;
    let params = load_model(&args.checkpoint)?;
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    check_shape(&params, ds, &args.checkpoint)?;
    let test = load_split(cfg, ds, args.split.split.as_deref())?;
    let report = evaluate(&params, &test, &cutoffs)?.to_csv();
    let path = args.split.output.clone().unwrap_or_else(|| cfg.out.join("eval.csv"));
    write_file(&path, &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Args, Clone)]
pub struct RobustnessArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "decoder")]
    pub site: String,
    /// Comma-separated noise levels.
    #[arg(long)]
    pub eps: Option<String>,
}

fn eps_grid(raw: &Option<String>) -> Result<Vec<f64>, UsageError> {
    match raw {
        Some(s) => parse_list(s, "--eps"),
        None => Ok(DEFAULT_EPS_GRID.to_vec()),
    }
}

pub fn robustness(cfg: &ExperimentConfig, args: &RobustnessArgs) -> Result<()> {
    let site: NoiseSite = args.site.parse().map_err(|e| UsageError(format!("--site: {e}")))?;
    let grid = eps_grid(&args.eps)?;
    let params = load_model(&args.checkpoint)?;
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    check_shape(&params, ds, &args.checkpoint)?;
    let test = load_split(cfg, ds, args.split.split.as_deref())?;
    let curve = robustness_sweep(&params, &test, site, &grid)?;
    let csv = curves_to_csv(std::slice::from_ref(&curve));
    let path = args.split.output.clone().unwrap_or_else(|| cfg.out.join("robustness.csv"));
    write_file(&path, &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Args, Clone)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub eps: Option<String>,
    /// Gaussian draws averaged per point.
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
}

pub fn probe(cfg: &ExperimentConfig, args: &ProbeArgs) -> Result<()> {
    let grid = eps_grid(&args.eps)?;
    let params = load_model(&args.checkpoint)?;
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    check_shape(&params, ds, &args.checkpoint)?;
    let test = load_split(cfg, ds, args.split.split.as_deref())?;
    let cases: Vec<(NoiseSite, NoiseKind)> = NoiseSite::ALL
        .iter()
        .flat_map(|&s| [(s, NoiseKind::Gaussian), (s, NoiseKind::Adversarial)])
        .collect();
    let mut rng = RngStream::with_stream(cfg.seed, 3);
    let curves = noise_impact_probe(&params, &test, &cases, &grid, args.trials, &mut rng)?;
    let csv = curves_to_csv(&curves);
    let path = args.split.output.clone().unwrap_or_else(|| cfg.out.join("probe.csv"));
    write_file(&path, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn itempop(cfg: &ExperimentConfig, args: &SplitArgs) -> Result<()> {
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    let test = load_split(cfg, ds, args.split.as_deref())?;
    let report = itempop_report(&test, &[5, 10]).to_csv();
    let path = args.output.clone().unwrap_or_else(|| cfg.out.join("itempop.csv"));
    write_file(&path, &report)?;
    print!("{report}");
    Ok(())
}

#[derive(Args, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    /// `key=v1,v2,...`; repeat for a Cartesian grid.
    #[arg(long = "grid", required = true, value_name = "KEY=VALUES")]
    pub grid: Vec<String>,
    /// Warm-start checkpoint; defaults to `<out>/pre.ckpt`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Pre-train every point from scratch instead of warm-starting.
    #[arg(long)]
    pub pretrain: bool,
}

fn grid_points(grid: &[String]) -> Result<Vec<Vec<(String, String)>>, UsageError> {
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for g in grid {
        let (key, values) = g
            .split_once('=')
            .ok_or_else(|| UsageError(format!("--grid {g:?} is not key=v1,v2")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(UsageError(format!("--grid {key}: no values")));
        }
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.trim().to_string(), v.to_string()));
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

fn with_overrides(cfg: &ExperimentConfig, point: &[(String, String)], out: PathBuf) -> Result<ExperimentConfig, UsageError> {
    let mut table: toml::Table = cfg.to_toml().parse().expect("resolved config parses");
    for (k, v) in point {
        apply_override(&mut table, &format!("{k}={v}"))?;
    }
    let mut next: ExperimentConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| UsageError(format!("sweep point: {e}")))?;
    next.out = out;
    Ok(next)
}

pub const SWEEP_HEADER: &str = "param,value,hr5,ndcg5";

pub fn sweep(cfg: &ExperimentConfig, args: &SweepArgs) -> Result<()> {
    let points = grid_points(&args.grid)?;
    let loaded = load_dataset(cfg)?;
    let ds = &loaded.binarized.dataset;
    let test = load_split(cfg, ds, args.split.split.as_deref())?;
    let warm = if args.pretrain {
        None
    } else {
        let path = args.init.clone().unwrap_or_else(|| cfg.out.join("pre.ckpt"));
        let p = load_model(&path)?;
        check_shape(&p, ds, &path)?;
        Some(p)
    };
    // Point-level overrides may change the split seed, so validate up front.
    let configs: Vec<ExperimentConfig> = points
        .iter()
        .enumerate()
        .map(|(k, p)| with_overrides(cfg, p, cfg.out.join("sweep").join(k.to_string())))
        .collect::<Result<_, _>>()?;
    write_config(cfg)?;

    let mut csv = format!("{SWEEP_HEADER}\n");
    for (point, pcfg) in points.iter().zip(&configs) {
        let validation = validation_for(pcfg, ds, &test)?;
        let data = TrainingData::new(&validation);
        let start = match &warm {
            Some(p) => p.clone(),
            None => pretrain(fresh_params(pcfg, ds)?, &data, &pcfg.pretrain_config())?.params,
        };
        let out = adversarial_train(start, &data, &pcfg.adv_config(), pcfg.gamma)?;
        write_config(pcfg)?;
        save_checkpoint(&out.params, &pcfg.out.join("adv.ckpt"))?;
        write_file(&pcfg.out.join("trace.csv"), trace_to_csv(&out.trace))?;
        let r = evaluate(&out.params, &test, &[5])?;
        let keys: Vec<&str> = point.iter().map(|(k, _)| k.as_str()).collect();
        let values: Vec<&str> = point.iter().map(|(_, v)| v.as_str()).collect();
        let row = format!("{},{},{},{}", keys.join("|"), values.join("|"), r.hr(5), r.ndcg(5));
        eprintln!("{row}");
        let _ = writeln!(csv, "{row}");
    }
    write_file(&cfg.out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
