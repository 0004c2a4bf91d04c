//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::config::Config;
use crate::data::synthetic::{generate_synthetic, SyntheticSpec};
use crate::data::{load_corpus, write_corpus, Document, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics_jsonl, render_html, render_text, reward_records, summary_table, DecodeMode};
use crate::eval::{evaluate_document, SelectionView};
use crate::trainer::Trainer;

pub const VERSION: &str = env!("HRL_DASC_VERSION");

#[derive(Debug, Parser)]
#[command(name = "hrl-dasc", version = VERSION, about = "Hierarchical clause and word selection for aspect rating")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus with planted selections.
    Gen(GenArgs),
    /// Pretrain both encoders, then train the selection policies.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval(EvalArgs),
    /// Render the selections for one document and aspect.
    Viz(VizArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Generator settings (TOML). Defaults apply when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration field, e.g. `--set dim=50`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    fn given(&self) -> bool {
        self.config.is_some() || !self.overrides.is_empty() || self.seed.is_some()
    }

    fn resolve(&self) -> Result<Config> {
        let text = match &self.config {
            Some(p) => read_text(p)?,
            None => String::new(),
        };
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        Config::from_toml(&text, &overrides)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Pretrained word vectors, one `token v1 .. vd` per line.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// Threshold the policies at 0.5 (default).
    #[arg(long, conflicts_with = "sample")]
    pub greedy: bool,
    /// Sample selections from the policies.
    #[arg(long)]
    pub sample: bool,
}

impl DecodeArgs {
    fn mode(&self) -> DecodeMode {
        if self.sample {
            DecodeMode::Sample
        } else {
            DecodeMode::Greedy
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Checked against the checkpoint; decoding settings come from here.
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "doc")]
    pub document: String,
    #[arg(long)]
    pub aspect: String,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Everything needed to rerun a command.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub started_unix: u64,
    pub config: Option<Config>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub args: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, config: Option<&Config>, inputs: &[&Path], outputs: &[PathBuf]) -> Self {
        RunManifest {
            command: command.to_string(),
            version: VERSION.to_string(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config: config.cloned(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: outputs.to_vec(),
            args: std::env::args().collect(),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serialises");
        write_file(&dir.join("manifest.json"), json + "\n")
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn jsonl<T: Serialize>(records: &[T]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serialises") + "\n")
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Viz(a) => cmd_viz(&a),
    }
}

pub fn cmd_gen(args: &GenArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => SyntheticSpec::from_toml(&read_text(p)?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    out_dir(&args.out)?;
    let inputs: Vec<&Path> = args.spec.iter().map(PathBuf::as_path).collect();
    RunManifest::new("gen", None, &inputs, &[args.out.join("corpus.jsonl")]).write(&args.out)?;
    let corpus = generate_synthetic(&spec)?;
    write_corpus(&corpus, &args.out)?;
    write_file(&args.out.join("synthetic.toml"), spec.to_toml())?;
    eprintln!("wrote {} documents to {}", corpus.documents.len(), args.out.display());
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let config = args.config.resolve()?;
    let corpus = load_corpus(&args.corpus)?;
    out_dir(&args.out)?;
    let ckpt = args.out.join("model.ckpt");
    let mut inputs = vec![args.corpus.as_path()];
    inputs.extend(args.config.config.as_deref());
    inputs.extend(args.embeddings.as_deref());
    let outputs = [ckpt.clone(), args.out.join("rewards.jsonl"), args.out.join("losses.json")];
    RunManifest::new("train", Some(&config), &inputs, &outputs).write(&args.out)?;

    let mut trainer = Trainer::new(config, &corpus, args.embeddings.as_deref())?;
    let train = trainer.model.encode_all(corpus.split(Split::Train))?;
    let log = trainer.fit(&train)?;
    trainer.save(&ckpt)?;
    write_file(&outputs[1], jsonl(&reward_records(&log.rewards)))?;
    let losses = serde_json::json!({
        "word_stage": log.word_losses,
        "clause_stage": log.clause_losses,
    });
    write_file(&outputs[2], serde_json::to_string_pretty(&losses).expect("losses serialise") + "\n")?;
    eprintln!(
        "trained on {} documents, {} policy epochs; checkpoint {}",
        train.len(),
        log.rewards.len(),
        ckpt.display()
    );
    Ok(())
}

/// Loads a checkpoint and, when a configuration is given, checks it
/// against the stored model and adopts it.
fn load_for_eval(checkpoint: &Path, config: Option<&ConfigArgs>) -> Result<Trainer> {
    let mut trainer = Trainer::load(checkpoint)?;
    if let Some(args) = config.filter(|a| a.given()) {
        let cfg = args.resolve()?;
        if cfg.dim != trainer.model.dim() {
            return Err(Error::shape("checkpoint dim", trainer.model.dim(), format!("config dim {}", cfg.dim)));
        }
        if cfg.classes != trainer.model.classes() {
            return Err(Error::shape(
                "checkpoint classes",
                trainer.model.classes(),
                format!("config classes {}", cfg.classes),
            ));
        }
        trainer.config = cfg;
    }
    Ok(trainer)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let trainer = load_for_eval(&args.checkpoint, Some(&args.config))?;
    let corpus = load_corpus(&args.corpus)?;
    if corpus.classes != trainer.model.classes() {
        return Err(Error::shape("corpus classes", corpus.classes, trainer.model.classes()));
    }
    out_dir(&args.out)?;
    let outputs = [args.out.join("metrics.jsonl"), args.out.join("summary.txt")];
    RunManifest::new(
        "eval",
        Some(&trainer.config),
        &[args.checkpoint.as_path(), args.corpus.as_path()],
        &outputs,
    )
    .write(&args.out)?;
    let docs = corpus.split(args.split);
    let result = evaluate(
        &trainer.model,
        &trainer.policies,
        &trainer.config,
        &docs,
        args.decode.mode(),
        args.threads,
        trainer.config.seed,
    )?;
    write_file(&outputs[0], metrics_jsonl(&result))?;
    let table = summary_table(&result);
    write_file(&outputs[1], &table)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_viz(args: &VizArgs) -> Result<()> {
    let trainer = Trainer::load(&args.checkpoint)?;
    let corpus = load_corpus(&args.corpus)?;
    let doc = corpus
        .find(&args.document)
        .ok_or_else(|| Error::Usage(format!("no document {:?} in {}", args.document, args.corpus.display())))?;
    let label = doc.label(&args.aspect).ok_or_else(|| {
        Error::Usage(format!("document {} has no rating for aspect {:?}", doc.id, args.aspect))
    })?;
    // only the requested query is rolled out
    let single = Document {
        aspects: vec![label.clone()],
        ..doc.clone()
    };
    out_dir(&args.out)?;
    let outputs = [args.out.join("report.txt"), args.out.join("report.html")];
    RunManifest::new(
        "viz",
        Some(&trainer.config),
        &[args.checkpoint.as_path(), args.corpus.as_path()],
        &outputs,
    )
    .write(&args.out)?;
    let mut rng = trainer.rng().clone();
    if let Some(seed) = args.seed {
        rng = rand::SeedableRng::seed_from_u64(seed);
    }
    let outcomes = evaluate_document(
        &trainer.model,
        &trainer.policies,
        &trainer.config,
        &single,
        args.decode.mode(),
        &mut rng,
    )?;
    let view = SelectionView::from_outcome(doc, &outcomes[0], trainer.model.classes())?;
    let text = render_text(&view);
    write_file(&outputs[0], &text)?;
    write_file(&outputs[1], render_html(&view))?;
    print!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_line_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn decode_flags_conflict() {
        let parsed = Cli::try_parse_from([
            "hrl-dasc", "eval", "--checkpoint", "c", "--corpus", "x", "--out", "o", "--greedy", "--sample",
        ]);
        assert!(parsed.is_err());
        let parsed = Cli::try_parse_from(["hrl-dasc", "eval", "--checkpoint", "c", "--corpus", "x", "--out", "o"]).unwrap();
        let Command::Eval(a) = parsed.command else { panic!() };
        assert_eq!(a.decode.mode(), DecodeMode::Greedy);
        assert_eq!(a.split, Split::Test);
        assert_eq!(a.threads, 1);
    }

    #[test]
    fn config_flags_resolve_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "dim = 30\nseed = 1\n").unwrap();
        let args = ConfigArgs {
            config: Some(path),
            overrides: vec!["dim=20".into()],
            seed: Some(8),
        };
        let cfg = args.resolve().unwrap();
        assert_eq!((cfg.dim, cfg.seed), (20, 8));
        let bad = ConfigArgs {
            config: None,
            overrides: vec!["no_such_field=1".into()],
            seed: None,
        };
        assert!(matches!(bad.resolve(), Err(Error::Usage(_))));
    }
}
