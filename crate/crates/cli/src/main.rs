//! `harasskit`: every pipeline stage behind one executable.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::*;

#[derive(Parser)]
#[command(name = "harasskit", version, about = "Harassment corpus tooling: preprocessing, agreement, crowd labeling, classifiers")]
struct Cli {
    /// JSON run config keyed by subcommand name; flags override its values.
    /// For `serve` this is the study file instead.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read a JSONL or CSV corpus and write it back as canonical JSONL.
    Ingest(IngestArgs),
    /// Tokenize documents and apply the optional language and hashtag filters.
    Preprocess(PreprocessArgs),
    /// Drop documents whose token sequence repeats an earlier one.
    Dedupe(DedupeArgs),
    /// Build an n-gram vocabulary and write sparse count vectors.
    Featurize(FeaturizeArgs),
    /// Fit one method on a whole corpus and save the model.
    Train(TrainArgs),
    /// Label a corpus with a saved model.
    Predict(PredictArgs),
    /// Cross-validate methods and write the accuracy table.
    Evaluate(EvaluateArgs),
    /// Fleiss' kappa of a label CSV (item_id,rater_id,category).
    Kappa(KappaArgs),
    /// Kappa before and after merging categories.
    MergeKappa(MergeKappaArgs),
    /// Batch policy, offline aggregation and study simulation.
    #[command(subcommand)]
    Crowd(CrowdCommand),
    /// Fit an LDA topic model and print per-topic terms and hashtags.
    Lda(LdaArgs),
    /// Infer author gender from a weighted token lexicon.
    Gender(GenderArgs),
    /// Run the annotation service.
    Serve(ServeArgs),
    /// Turn a service event log into a label CSV.
    ExportLabels(ExportLabelsArgs),
}

#[derive(Subcommand)]
enum CrowdCommand {
    /// Batch size earned by a number of correct answers among the last 8 gold questions.
    Score(ScoreArgs),
    /// Trust-weighted labels from a label CSV and a gold set.
    Aggregate(AggregateArgs),
    /// Simulate a labeling study with synthetic raters.
    Simulate(SimulateArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::Ingest(a) => ingest(a, cfg),
        Command::Preprocess(a) => preprocess(a, cfg),
        Command::Dedupe(a) => dedupe(a, cfg),
        Command::Featurize(a) => featurize(a, cfg),
        Command::Train(a) => train(a, cfg),
        Command::Predict(a) => predict(a, cfg),
        Command::Evaluate(a) => evaluate(a, cfg),
        Command::Kappa(a) => kappa(a, cfg),
        Command::MergeKappa(a) => merge_kappa(a, cfg),
        Command::Crowd(CrowdCommand::Score(a)) => crowd_score(a, cfg),
        Command::Crowd(CrowdCommand::Aggregate(a)) => crowd_aggregate(a, cfg),
        Command::Crowd(CrowdCommand::Simulate(a)) => crowd_simulate(a, cfg),
        Command::Lda(a) => lda(a, cfg),
        Command::Gender(a) => gender(a, cfg),
        Command::Serve(a) => serve(a, cfg),
        Command::ExportLabels(a) => export_labels(a, cfg),
    }
}

fn is_broken_pipe(e: &(dyn std::error::Error + 'static)) -> bool {
    let kind = e
        .downcast_ref::<std::io::Error>()
        .map(|io| io.kind())
        .or_else(|| e.downcast_ref::<serde_json::Error>().and_then(|j| j.io_error_kind()));
    kind == Some(std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.chain().any(is_broken_pipe) => {
            // downstream closed early, as with `| head`
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
