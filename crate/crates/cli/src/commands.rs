use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::Args;
use serde::{Deserialize, Serialize};

use selfmm_core::dataio::{self, Dataset, Split, SynthSpec};
use selfmm_core::metrics::MetricsBundle;
use selfmm_core::model::Model;
use selfmm_core::trainer::{evaluate, TaskMask, TrainConfig, Trainer};
use selfmm_core::trajectory;

use crate::config;
use crate::error::{CliError, CliResult};
use crate::manifest::{self, DatasetRef, RunManifest};

pub const BEST_CHECKPOINT: &str = "model.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const EPOCHS_FILE: &str = "epochs.jsonl";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.txt";

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Writes to stdout; a closed pipe downstream is not an error.
fn emit(text: &str) -> CliResult<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Internal(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    if !path.is_file() {
        return Err(CliError::Data(format!("{}: no such dataset file", path.display())));
    }
    Ok(dataio::load(path)?)
}

fn parse_triple<T: std::str::FromStr>(raw: &str) -> Result<[T; 3], String>
where
    T::Err: std::fmt::Display,
{
    let parts: Vec<T> = raw.split(',').map(|p| p.trim().parse().map_err(|e| format!("`{p}`: {e}"))).collect::<Result<_, _>>()?;
    <[T; 3]>::try_from(parts).map_err(|_| "expected three comma-separated values".to_string())
}

fn parse_len_range(raw: &str) -> Result<(usize, usize), String> {
    let (lo, hi) = raw.split_once('-').ok_or("expected LO-HI")?;
    Ok((lo.trim().parse().map_err(|e| format!("{e}"))?, hi.trim().parse().map_err(|e| format!("{e}"))?))
}

/// `7`, `3-9` or `3..9` (inclusive).
pub fn parse_epoch_range(raw: &str) -> Result<RangeInclusive<usize>, String> {
    let num = |s: &str| s.trim().parse::<usize>().map_err(|e| format!("epoch range `{raw}`: {e}"));
    let (lo, hi) = match raw.split_once("..").or_else(|| raw.split_once('-')) {
        Some((a, b)) => (num(a)?, num(b.trim_start_matches('='))?),
        None => {
            let e = num(raw)?;
            (e, e)
        }
    };
    if lo > hi {
        return Err(format!("epoch range `{raw}` is empty"));
    }
    Ok(lo..=hi)
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Number of samples.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Output dataset file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub label_range: f64,
    /// Latent noise for text,audio,vision.
    #[arg(long, value_parser = parse_triple::<f64>, default_value = "0.3,0.6,0.8")]
    pub modality_noise: [f64; 3],
    #[arg(long, default_value_t = 0.1)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    pub step_noise: f64,
    /// Feature widths for text,audio,vision.
    #[arg(long, value_parser = parse_triple::<usize>, default_value = "8,8,8")]
    pub dims: [usize; 3],
    /// Inclusive sequence length range.
    #[arg(long, value_parser = parse_len_range, default_value = "10-20")]
    pub seq_len: (usize, usize),
    #[arg(long, default_value_t = 0.7)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.15)]
    pub valid_fraction: f64,
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        label_range: args.label_range,
        modality_noise: args.modality_noise,
        label_noise: args.label_noise,
        step_noise: args.step_noise,
        dims: args.dims,
        seq_len: args.seq_len,
        train_fraction: args.train_fraction,
        valid_fraction: args.valid_fraction,
    };
    let ds = dataio::synth_generate(args.n, args.seed, &spec).map_err(|e| CliError::Usage(e.to_string()))?;
    dataio::save(&ds, &args.out)?;
    eprintln!("wrote {} samples to {}", ds.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset file.
    #[arg(long)]
    pub data: PathBuf,
    /// Flat key=value config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Task subset, e.g. `m` or `m,t,a,v`.
    #[arg(long)]
    pub tasks: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Replace an existing run in `--out`.
    #[arg(long)]
    pub overwrite: bool,
}

impl TrainArgs {
    pub fn resolve(&self) -> CliResult<TrainConfig> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            for (k, v) in config::parse(&text)? {
                config::apply(&mut cfg, &k, &v)?;
            }
        }
        if let Some(t) = &self.tasks {
            cfg.tasks = TaskMask::parse(t).map_err(CliError::Usage)?;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Final scores of a run, written to `metrics.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub tasks: String,
    pub epochs: usize,
    pub best_epoch: usize,
    pub valid: MetricsBundle,
    pub test: Option<MetricsBundle>,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let cfg = args.resolve()?;
    let dataset = load_dataset(&args.data)?;
    let data_hash = manifest::sha256_file(&args.data)?;

    let out = &args.out;
    if out.join(manifest::FILE_NAME).exists() && !args.overwrite {
        return Err(CliError::Conflict(format!("{} already holds a run; pass --overwrite to replace it", out.display())));
    }
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    // A stale manifest must not outlive a failed rerun.
    let _ = std::fs::remove_file(out.join(manifest::FILE_NAME));
    let snapshot = config::snapshot(&cfg);
    std::fs::write(out.join(CONFIG_FILE), config::render(&snapshot)).map_err(|e| CliError::io(out, e))?;

    let epochs_path = out.join(EPOCHS_FILE);
    let traj_path = out.join(TRAJECTORY_FILE);
    let mut epochs_w = create(&epochs_path)?;
    let mut traj_w = create(&traj_path)?;
    trajectory::write_header(&mut traj_w).map_err(|e| CliError::io(&traj_path, e))?;

    let mut trainer = Trainer::new(&dataset, cfg.clone())?;
    for _ in 0..cfg.epochs {
        let report = trainer.train_epoch()?;
        eprintln!(
            "epoch {:>3}/{} loss {:.5} drift {:.5} valid mae {:.5} corr {:.4}",
            report.epoch, cfg.epochs, report.train_loss, report.max_label_drift, report.valid.mae, report.valid.corr
        );
        let line = serde_json::to_string(&report).map_err(|e| CliError::Internal(e.to_string()))?;
        writeln!(epochs_w, "{line}").map_err(|e| CliError::io(&epochs_path, e))?;
        trajectory::write_records(&mut traj_w, &trainer.trajectory()).map_err(|e| CliError::io(&traj_path, e))?;
    }
    epochs_w.flush().map_err(|e| CliError::io(&epochs_path, e))?;
    traj_w.flush().map_err(|e| CliError::io(&traj_path, e))?;

    let (final_model, best, _) = trainer.into_parts();
    let (best_epoch, best_model) = best.ok_or_else(|| CliError::Internal("no epoch completed".into()))?;
    best_model.save(&out.join(BEST_CHECKPOINT))?;
    final_model.save(&out.join(FINAL_CHECKPOINT))?;

    let test = if dataset.indices(Split::Test).is_empty() { None } else { Some(evaluate(&best_model, &dataset, Split::Test)?) };
    let metrics = RunMetrics {
        tasks: cfg.tasks.label(),
        epochs: cfg.epochs,
        best_epoch,
        valid: evaluate(&best_model, &dataset, Split::Valid)?,
        test,
    };
    write_json(&out.join(METRICS_FILE), &metrics)?;

    let artifacts: BTreeMap<String, String> = [
        ("best_checkpoint", BEST_CHECKPOINT),
        ("final_checkpoint", FINAL_CHECKPOINT),
        ("epoch_reports", EPOCHS_FILE),
        ("trajectory", TRAJECTORY_FILE),
        ("metrics", METRICS_FILE),
        ("config", CONFIG_FILE),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v.to_string()))
    .collect();
    RunManifest {
        tool: "selfmm".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: "train".into(),
        config: snapshot,
        seed: cfg.seed,
        dataset: DatasetRef { path: args.data.display().to_string(), sha256: data_hash },
        artifacts,
        started_unix_seconds: started,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    }
    .write(out)?;
    eprintln!("best epoch {best_epoch}; run written to {}", out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also write the report to this file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    let dataset = load_dataset(&args.data)?;
    if !args.checkpoint.is_file() {
        return Err(CliError::Data(format!("{}: no such checkpoint", args.checkpoint.display())));
    }
    let model = Model::load(&args.checkpoint)?;
    let expected = model.config().encoder.input_dims;
    if expected != dataset.dims() {
        return Err(CliError::Data(format!("checkpoint expects feature widths {expected:?}, dataset has {:?}", dataset.dims())));
    }
    let bundle = evaluate(&model, &dataset, args.split)?;
    let text = serde_json::to_string_pretty(&bundle).map_err(|e| CliError::Internal(e.to_string()))?;
    emit(&format!("{text}\n"))?;
    if let Some(path) = &args.out {
        write_json(path, &bundle)?;
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct LabelsArgs {
    #[arg(long)]
    pub run_dir: PathBuf,
    /// Epochs to keep: `N`, `A-B` or `A..B`.
    #[arg(long, value_parser = parse_epoch_range)]
    pub epochs: Option<RangeInclusive<usize>>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_labels(args: &LabelsArgs) -> CliResult<()> {
    let path = args.run_dir.join(TRAJECTORY_FILE);
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let records = trajectory::read_filtered(BufReader::new(file), args.epochs.clone())?;
    let write = |w: &mut dyn Write| -> std::io::Result<()> {
        trajectory::write_header(&mut *w)?;
        trajectory::write_records(&mut *w, &records)?;
        w.flush()
    };
    match &args.out {
        Some(p) => write(&mut create(p)?).map_err(|e| CliError::io(p, e)),
        None => {
            let mut buf = Vec::new();
            write(&mut buf).map_err(|e| CliError::Internal(e.to_string()))?;
            emit(&String::from_utf8_lossy(&buf))
        }
    }
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// Run directories, one table row each.
    #[arg(long, num_args = 1.., required = true)]
    pub run_dirs: Vec<PathBuf>,
    /// Which split's scores to tabulate.
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Emit comma-separated values instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
}

pub const REPORT_COLUMNS: [&str; 8] = ["run", "tasks", "mae", "corr", "acc2_nonneg", "f1_nonneg", "acc2_pos", "f1_pos"];

pub fn report_rows(args: &ReportArgs) -> CliResult<Vec<[String; 8]>> {
    let mut rows = Vec::new();
    for dir in &args.run_dirs {
        let path = dir.join(METRICS_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let m: RunMetrics = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let b = match args.split {
            Split::Valid => m.valid,
            Split::Test => m.test.ok_or_else(|| CliError::Data(format!("{}: run has no test scores", path.display())))?,
            Split::Train => return Err(CliError::Usage("runs record valid and test scores only".into())),
        };
        let f = |v: f64| format!("{v:.4}");
        rows.push([
            dir.display().to_string(),
            m.tasks,
            f(b.mae),
            f(b.corr),
            f(100.0 * b.acc2_nonneg),
            f(100.0 * b.f1_nonneg),
            f(100.0 * b.acc2_pos),
            f(100.0 * b.f1_pos),
        ]);
    }
    Ok(rows)
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    let rows = report_rows(args)?;
    let mut text = String::new();
    if args.csv {
        text.push_str(&format!("{}\n", REPORT_COLUMNS.join(",")));
        for r in &rows {
            text.push_str(&format!("{}\n", r.join(",")));
        }
        return emit(&text);
    }
    let mut widths = REPORT_COLUMNS.map(str::len);
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[&str]| {
        let joined = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ");
        format!("{}\n", joined.trim_end())
    };
    text.push_str(&line(&REPORT_COLUMNS));
    for r in &rows {
        text.push_str(&line(&r.each_ref().map(String::as_str)));
    }
    emit(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epoch_ranges() {
        assert_eq!(parse_epoch_range("36-40").unwrap(), 36..=40);
        assert_eq!(parse_epoch_range("36..40").unwrap(), 36..=40);
        assert_eq!(parse_epoch_range("36..=40").unwrap(), 36..=40);
        assert_eq!(parse_epoch_range("7").unwrap(), 7..=7);
        assert!(parse_epoch_range("9-3").is_err());
        assert!(parse_epoch_range("x").is_err());
    }

    #[test]
    fn triples() {
        assert_eq!(parse_triple::<usize>("1, 2,3").unwrap(), [1, 2, 3]);
        assert!(parse_triple::<usize>("1,2").is_err());
        assert_eq!(parse_len_range("3-5").unwrap(), (3, 5));
    }
}
