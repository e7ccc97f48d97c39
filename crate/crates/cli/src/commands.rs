use crate::config::RunConfig;
use crate::error::CliError;
use grcl_core::datagen::{self, preset};
use grcl_core::harness::write_diagnostics_csv;
use grcl_core::model::checkpoint;
use grcl_core::RunOutput;
use serde::Serialize;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const R_MATRIX_FILE: &str = "r_matrix.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MEMORIES_FILE: &str = "memories.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, Serialize)]
struct MetricsFile<'a> {
    strategy: &'a str,
    seed: u64,
    acc: f64,
    acc_mean: f64,
    bwt: Option<f64>,
    constraint_violations: usize,
}

#[derive(Debug, Serialize)]
struct Versions {
    #[serde(rename = "grcl-core")]
    core: &'static str,
    #[serde(rename = "grcl-cli")]
    cli: &'static str,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config: &'a RunConfig,
    seed: u64,
    dataset: String,
    versions: Versions,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, CliError> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut out = create(dir, name)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

/// Runs one configuration with `seed` and writes every artifact into `dir`.
pub fn run_to_dir(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<RunOutput, CliError> {
    let bench = cfg.benchmark()?;
    let plan = cfg.plan(&bench, seed);
    let out = grcl_core::run(&plan, &bench)?;

    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    out.matrix.write_csv(create(dir, R_MATRIX_FILE)?)?;
    write_diagnostics_csv(&out.diagnostics, create(dir, DIAGNOSTICS_FILE)?)?;
    let violations = out.diagnostics.iter().filter(|r| !r.constraints_hold()).count();
    write_json(
        dir,
        METRICS_FILE,
        &MetricsFile {
            strategy: plan.strategy.name(),
            seed,
            acc: out.metrics.acc,
            acc_mean: out.metrics.acc_mean,
            bwt: out.metrics.bwt,
            constraint_violations: violations,
        },
    )?;
    {
        let mut mem = create(dir, MEMORIES_FILE)?;
        let mut first = true;
        for m in &out.state.memories {
            let mut buf = Vec::new();
            m.export_csv(&out.state.params, &mut buf)?;
            let text = String::from_utf8(buf).expect("csv output is utf-8");
            let body = if first { &text[..] } else { text.split_once('\n').map_or("", |(_, b)| b) };
            mem.write_all(body.as_bytes())?;
            first = false;
        }
        mem.flush()?;
    }
    checkpoint::save(&out.state.params, &dir.join(CHECKPOINT_FILE))?;
    write_json(
        dir,
        MANIFEST_FILE,
        &Manifest {
            config: &RunConfig {
                seed,
                ..cfg.clone()
            },
            seed,
            dataset: cfg.dataset_key(),
            versions: Versions {
                core: grcl_core::VERSION,
                cli: env!("CARGO_PKG_VERSION"),
            },
        },
    )?;
    Ok(out)
}

pub fn run(config: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config)?;
    let dir = cfg.resolved_output_dir();
    let out = run_to_dir(&cfg, cfg.seed, &dir)?;
    let bwt = out.metrics.bwt.map_or_else(|| "n/a".to_string(), |b| format!("{b:.4}"));
    println!(
        "{} seed {}: ACC {:.4} (mean over domains {:.4}), BWT {bwt}; outputs in {}",
        cfg.label(),
        cfg.seed,
        out.metrics.acc,
        out.metrics.acc_mean,
        dir.display()
    );
    Ok(())
}

/// Mean and sample standard deviation (divisor `n − 1`); the deviation is
/// absent for fewer than two values.
pub fn mean_std(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub runs: usize,
    pub acc: f64,
    pub acc_std: Option<f64>,
    pub acc_mean: f64,
    pub acc_mean_std: Option<f64>,
    pub bwt: Option<f64>,
    pub bwt_std: Option<f64>,
}

pub fn compare_configs(configs: &[RunConfig], scratch: Option<&Path>) -> Result<Vec<ComparisonRow>, CliError> {
    if configs.len() < 2 {
        return Err(CliError::Config("compare needs at least two configs".into()));
    }
    let key = configs[0].dataset_key();
    if let Some(other) = configs.iter().find(|c| c.dataset_key() != key) {
        return Err(CliError::Config(format!(
            "configs use different datasets: {key} vs {}",
            other.dataset_key()
        )));
    }
    let mut rows = Vec::with_capacity(configs.len());
    for (i, cfg) in configs.iter().enumerate() {
        let bench = cfg.benchmark()?;
        let (mut accs, mut means, mut bwts) = (Vec::new(), Vec::new(), Vec::new());
        for seed in cfg.seeds() {
            let out = match scratch {
                Some(dir) => run_to_dir(cfg, seed, &dir.join(format!("{i}-{}", cfg.label())).join(format!("seed-{seed}")))?,
                None => grcl_core::run(&cfg.plan(&bench, seed), &bench)?,
            };
            accs.push(out.metrics.acc);
            means.push(out.metrics.acc_mean);
            if let Some(b) = out.metrics.bwt {
                bwts.push(b);
            }
        }
        let (acc, acc_std) = mean_std(&accs);
        let (acc_mean, acc_mean_std) = mean_std(&means);
        let (bwt, bwt_std) = if bwts.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&bwts);
            (Some(m), s)
        };
        rows.push(ComparisonRow {
            strategy: cfg.label(),
            runs: accs.len(),
            acc,
            acc_std,
            acc_mean,
            acc_mean_std,
            bwt,
            bwt_std,
        });
    }
    Ok(rows)
}

pub fn write_comparison<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn compare(paths: &[PathBuf], output_dir: Option<&Path>, keep_runs: bool) -> Result<(), CliError> {
    let configs = paths.iter().map(|p| RunConfig::load(p)).collect::<Result<Vec<_>, _>>()?;
    let dir = std::env::var_os(crate::config::OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .or_else(|| output_dir.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."));
    let scratch = keep_runs.then(|| dir.join("runs"));
    let rows = compare_configs(&configs, scratch.as_deref())?;
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    write_comparison(&rows, create(&dir, COMPARISON_FILE)?)?;
    let fmt = |m: f64, s: Option<f64>| match s {
        Some(s) => format!("{m:.4} ± {s:.4}"),
        None => format!("{m:.4}"),
    };
    println!("{:<28} {:>5} {:>18} {:>18}", "strategy", "runs", "ACC", "BWT");
    for r in &rows {
        let bwt = r.bwt.map_or_else(|| "n/a".to_string(), |b| fmt(b, r.bwt_std));
        println!("{:<28} {:>5} {:>18} {:>18}", r.strategy, r.runs, fmt(r.acc, r.acc_std), bwt);
    }
    Ok(())
}

pub fn generate(name: &str, output: &Path) -> Result<(), CliError> {
    let specs = preset(name).ok_or_else(|| {
        CliError::Config(format!("unknown preset `{name}`; expected one of {}", datagen::PRESETS.join(", ")))
    })?;
    let bench = grcl_core::generate_sequence(&specs)?;
    let file = File::create(output).map_err(|e| CliError::Io(format!("{}: {e}", output.display())))?;
    datagen::export_csv(&bench, BufWriter::new(file))?;
    Ok(())
}

pub fn presets() {
    for name in datagen::PRESETS {
        let specs = preset(name).expect("listed presets exist");
        let rotations: Vec<String> = specs.iter().map(|s| format!("{}", s.rotation_deg)).collect();
        println!(
            "{name}: {} domains, {} classes, {} samples per class, rotations {}",
            specs.len(),
            specs[0].num_classes,
            specs[0].per_class,
            rotations.join("/")
        );
    }
}
