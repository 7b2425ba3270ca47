//! `selfmm`: generate data, train, evaluate, export u-label trajectories
//! and tabulate ablations.
//!
//! Exit codes: 0 success, 1 internal error, 2 usage error, 3 missing or
//! invalid input, 4 non-finite loss, 5 configuration conflict.

mod commands;
mod config;
mod error;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{EvalArgs, LabelsArgs, ReportArgs, SynthArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "selfmm", version, about = "Self-supervised multi-task multimodal sentiment regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with known per-modality latents.
    Synth(SynthArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Extract u-label trajectory rows from a run.
    Labels(LabelsArgs),
    /// Tabulate final scores of several runs side by side.
    Report(ReportArgs),
}

fn run(cli: &Cli) -> error::CliResult<()> {
    match &cli.command {
        Command::Synth(a) => commands::cmd_synth(a),
        Command::Train(a) => commands::cmd_train(a),
        Command::Eval(a) => commands::cmd_eval(a),
        Command::Labels(a) => commands::cmd_labels(a),
        Command::Report(a) => commands::cmd_report(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use commands::{report_rows, RunMetrics, METRICS_FILE};

    fn exec(args: &[&str]) -> error::CliResult<()> {
        let cli = Cli::try_parse_from(std::iter::once("selfmm").chain(args.iter().copied())).expect("arguments parse");
        run(&cli)
    }

    fn code(args: &[&str]) -> u8 {
        exec(args).err().map_or(0, |e| e.exit_code())
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    #[test]
    fn bad_flags_are_usage_errors() {
        let err = Cli::try_parse_from(["selfmm", "train", "--bogus"]).unwrap_err();
        assert!(err.use_stderr());
        assert!(Cli::try_parse_from(["selfmm", "synth", "--n", "10", "--out", "x", "--dims", "1,2"]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("d.jsonl");
        assert_eq!(code(&["synth", "--n", "10", "--out", s(&out), "--train-fraction", "1.5"]), 2);
        assert_eq!(code(&["synth", "--n", "30", "--out", s(&out)]), 0);
        let run = dir.path().join("run");
        assert_eq!(code(&["train", "--data", s(&out), "--out", s(&run), "--tasks", "m,x"]), 2);
    }

    #[test]
    fn missing_and_malformed_inputs_exit_3() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.jsonl");
        let run = dir.path().join("run");
        assert_eq!(code(&["train", "--data", s(&missing), "--out", s(&run)]), 3);
        let junk = dir.path().join("junk.jsonl");
        std::fs::write(&junk, "not a dataset\n").unwrap();
        assert_eq!(code(&["train", "--data", s(&junk), "--out", s(&run)]), 3);
        assert_eq!(code(&["eval", "--data", s(&junk), "--checkpoint", s(&missing)]), 3);
        assert_eq!(code(&["labels", "--run-dir", s(&run)]), 3);
        assert_eq!(code(&["report", "--run-dirs", s(&run)]), 3);
    }

    #[test]
    fn end_to_end_run_and_ablation_report() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("d.jsonl");
        exec(&["synth", "--n", "80", "--seed", "5", "--out", s(&data), "--seq-len", "3-5"]).unwrap();

        let cfg = dir.path().join("cfg.txt");
        std::fs::write(&cfg, "# small model\nhidden_dims = 4\nfusion_dim = 6\nunimodal_dim = 4\nbatch_size = 16\n").unwrap();
        let full = dir.path().join("full");
        let single = dir.path().join("single");
        exec(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&full), "--epochs", "3"]).unwrap();
        exec(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&single), "--epochs", "3", "--tasks", "m"]).unwrap();

        // A second run into the same directory needs --overwrite.
        let again = ["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&single), "--epochs", "1", "--tasks", "m"];
        assert_eq!(code(&again), 5);
        let mut forced = again.to_vec();
        forced.push("--overwrite");
        assert_eq!(code(&forced), 0);
        exec(&["train", "--data", s(&data), "--config", s(&cfg), "--out", s(&single), "--epochs", "3", "--tasks", "m", "--overwrite"])
            .unwrap();

        let text = std::fs::read_to_string(full.join(METRICS_FILE)).unwrap();
        let m: RunMetrics = serde_json::from_str(&text).unwrap();
        assert_eq!((m.tasks.as_str(), m.epochs), ("m,t,a,v", 3));
        assert!(m.test.unwrap().mae.is_finite());

        let scored = dir.path().join("eval.json");
        let ckpt = full.join(commands::BEST_CHECKPOINT);
        exec(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt), "--split", "valid", "--out", s(&scored)]).unwrap();
        let eval: selfmm_core::metrics::MetricsBundle = serde_json::from_str(&std::fs::read_to_string(&scored).unwrap()).unwrap();
        assert_eq!(eval, m.valid);

        let labels = dir.path().join("labels.csv");
        exec(&["labels", "--run-dir", s(&full), "--epochs", "2-3", "--out", s(&labels)]).unwrap();
        let rows = std::fs::read_to_string(&labels).unwrap();
        assert!(rows.lines().count() > 1);

        let cli = Cli::try_parse_from(["selfmm", "report", "--run-dirs", s(&single), s(&full)]).unwrap();
        let Command::Report(args) = &cli.command else { unreachable!() };
        let table = report_rows(args).unwrap();
        assert_eq!(table.len(), 2);
        assert_eq!((table[0][1].as_str(), table[1][1].as_str()), ("m", "m,t,a,v"));
        assert_eq!(code(&["report", "--run-dirs", s(&full), "--split", "train"]), 2);
    }

    #[test]
    fn eval_rejects_a_checkpoint_for_other_feature_widths() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        exec(&["synth", "--n", "40", "--out", s(&a), "--seq-len", "2-3"]).unwrap();
        exec(&["synth", "--n", "40", "--out", s(&b), "--seq-len", "2-3", "--dims", "3,3,3"]).unwrap();
        let run = dir.path().join("run");
        exec(&["train", "--data", s(&a), "--out", s(&run), "--epochs", "1"]).unwrap();
        let ckpt = run.join(commands::BEST_CHECKPOINT);
        assert_eq!(code(&["eval", "--data", s(&b), "--checkpoint", s(&ckpt)]), 3);
    }
}
