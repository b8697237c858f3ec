use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use regabstract_core::baselines::{bow_predict, bow_train, documents_in_window, ontology_predict, BowConfig};
use regabstract_core::corpus::{
    generate_corpus, load_corpus, parse_fold_range, parse_kinds, read_json, split_folds, write_corpus, write_json, write_jsonl,
    AttributeKind, ClinicalDocument, CorpusBundle, GeneratorConfig, Patient, SplitSets,
};
use regabstract_core::evalx::{
    ablation_tsv, casefinding_patient_eval, evaluate_multiclass, run_ablation, AblationVariant, MetricsReport,
};
use regabstract_core::model::{
    checkpoint_file_name, load_checkpoint, load_encoder_checkpoint, save_checkpoint, save_encoder_checkpoint, EncoderKind, Model,
    ModelConfig,
};
use regabstract_core::rationale::render_span;
use regabstract_core::textproc::{learn_vocab, AssembleOptions, Vocab, Window};
use regabstract_core::train::{
    evaluate_abstraction, build_abstraction_dataset, pretrain_encoder, score_patient_days, select_patients, AbstractionTask,
    CaseFindingConfig, CaseFindingScheme, CaseFindingTask, PretrainConfig, TrainConfig,
};
use regabstract_service::{extract_all, load_predictors, serve, Extraction, Predictor, ServiceConfig};

use crate::error::{CliError, CliResult};
use crate::manifest::{hash_path, manifest_beside, ManifestBuilder};
use crate::report::{render, MetricsDoc};

#[derive(Parser, Debug)]
#[command(name = "regabstract", version, about = "Registry abstraction and case finding from patient-level labels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus with registry labels and planted evidence.
    GenCorpus(GenCorpusArgs),
    /// Learn a subword vocabulary from training-split documents and the pretraining pool.
    BuildVocab(BuildVocabArgs),
    /// Masked-token pretraining of a transformer encoder on the unlabeled pool.
    Pretrain(PretrainArgs),
    /// Train an abstraction model for one attribute and score the test split.
    Train(TrainArgs),
    /// Evaluate a trained model or a baseline on one split.
    Eval(EvalArgs),
    /// Compare document-kind and window variants under identical seeds and folds.
    Ablate(AblateArgs),
    /// Day-level case-finding classifier with patient-level evaluation.
    CaseFind {
        #[command(subcommand)]
        command: CaseFindCommand,
    },
    /// Run extraction for every patient and attribute and write JSONL.
    Infer(InferArgs),
    /// Print one extraction with its rationale sentences.
    Explain(ExplainArgs),
    /// Start the curation HTTP service.
    Serve(ServeArgs),
    /// Render markdown tables from metrics.json files.
    Report(ReportArgs),
}

#[derive(Subcommand, Debug)]
pub enum CaseFindCommand {
    /// Train the day-level classifier and tune its threshold on dev patients
    Train(CaseFindTrainArgs),
    /// Score a split with a trained case-finding model
    Eval(CaseFindEvalArgs),
}

#[derive(Args, Debug, Serialize)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub cancer: usize,
    #[arg(long, default_value_t = 500)]
    pub control: usize,
    #[arg(long, default_value_t = 24)]
    pub sites: usize,
    #[arg(long, default_value_t = 30)]
    pub histologies: usize,
    /// Fraction of patients whose location appears only in radiology.
    #[arg(long, default_value_t = 0.5)]
    pub cross_doc: f64,
    /// Unlabeled notes for pretraining.
    #[arg(long, default_value_t = 2000)]
    pub pool: usize,
}

/// Corpus location and fold assignment shared by the training subcommands.
#[derive(Args, Debug, Clone, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub folds: usize,
    #[arg(long, default_value = "1-8")]
    pub train_folds: String,
    #[arg(long, default_value = "9-10")]
    pub dev_folds: String,
    #[arg(long, default_value = "11-12")]
    pub test_folds: String,
    #[arg(long, default_value_t = 1)]
    pub fold_seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct BuildVocabArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub size: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderArg {
    Contextfree,
    Transformer,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value = "contextfree")]
    pub encoder: EncoderArg,
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub ff_dim: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dropout: f64,
}

impl ModelArgs {
    fn config(&self, vocab_size: usize, n_classes: usize, seed: u64) -> ModelConfig {
        let encoder = match self.encoder {
            EncoderArg::Contextfree => EncoderKind::ContextFree,
            EncoderArg::Transformer => EncoderKind::TinyTransformer {
                layers: self.layers,
                heads: self.heads,
                ff_dim: self.ff_dim,
            },
        };
        ModelConfig {
            embed_dim: self.embed_dim,
            gru_hidden: self.hidden,
            word_attn_dim: self.hidden,
            sent_attn_dim: self.hidden,
            dropout_rate: self.dropout,
            seed,
            ..ModelConfig::new(vocab_size, n_classes, encoder)
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct FitArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 256)]
    pub max_sentences: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl FitArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            patience: self.patience,
            seed: self.seed,
            max_sentences: self.max_sentences,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct PretrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Encoder checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 256)]
    pub ff_dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value = "site")]
    pub attribute: AttributeKind,
    /// Days around diagnosis, START:END.
    #[arg(long, default_value = "-30:30", allow_hyphen_values = true)]
    pub window: Window,
    #[arg(long, default_value = "path,rad,op")]
    pub kinds: String,
    /// Encoder checkpoint from `pretrain`; its encoder settings override --encoder and dimensions.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Directory for the checkpoint, options, history, metrics and manifest.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Model,
    Ontology,
    Bow,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitName {
    Dev,
    Test,
}

impl SplitName {
    fn ids(self, s: &SplitSets) -> &[String] {
        match self {
            SplitName::Dev => &s.dev,
            SplitName::Test => &s.test,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }
}

#[derive(Args, Debug, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long, default_value = "site")]
    pub attribute: AttributeKind,
    #[arg(long, value_enum, default_value = "model")]
    pub method: Method,
    /// Directory written by `train` (required for --method model).
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Vocabulary (required for --method model).
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub on: SplitName,
    /// Training seed for the bag-of-words baseline.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct AblateArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, default_value = "site")]
    pub attribute: AttributeKind,
    /// KINDS@START:END, e.g. `path@-30:30`; give at least two.
    #[arg(long = "variant", required = true, allow_hyphen_values = true)]
    pub variants: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Default,
    HardNegatives,
}

#[derive(Args, Debug, Serialize)]
pub struct CaseFindTrainArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    #[arg(long, value_enum, default_value = "default")]
    pub scheme: SchemeArg,
    #[arg(long, default_value = "path,rad,op")]
    pub kinds: String,
    /// Days before diagnosis beyond which registry days count as hard negatives.
    #[arg(long, default_value_t = 30)]
    pub hard_cutoff: i64,
    #[arg(long, default_value_t = 2)]
    pub per_patient_max: usize,
    #[arg(long, default_value_t = 3)]
    pub control_days: usize,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct CaseFindEvalArgs {
    #[command(flatten)]
    pub split: SplitArgs,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Directory written by `case-find train`.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub on: SplitName,
    /// Overrides the threshold tuned during training.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory with `{attribute}.{encoder}.ckpt` files; attributes without one use alias matching.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub patient: String,
    #[arg(long, default_value = "site")]
    pub attribute: AttributeKind,
    /// Emit the extraction as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Append-only event log; replayed on start.
    #[arg(long, default_value = "events.jsonl")]
    pub log: PathBuf,
    /// 0 picks a free port.
    #[arg(long, default_value_t = 8080, env = "REGABSTRACT_PORT")]
    pub port: u16,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// metrics.json files, rendered in the order given.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::BuildVocab(a) => build_vocab(&a),
        Command::Pretrain(a) => pretrain(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Ablate(a) => ablate(&a),
        Command::CaseFind { command: CaseFindCommand::Train(a) } => casefind_train(&a),
        Command::CaseFind { command: CaseFindCommand::Eval(a) } => casefind_eval(&a),
        Command::Infer(a) => infer(&a),
        Command::Explain(a) => explain(&a),
        Command::Serve(a) => serve_cmd(a),
        Command::Report(a) => report(&a),
    }
}

// ---------------------------------------------------------------- inputs

fn require(path: &Path, what: &str, producer: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(what, path, producer))
    }
}

fn open_corpus(dir: &Path) -> CliResult<CorpusBundle> {
    require(&dir.join("patients.jsonl"), "corpus", "gen-corpus")?;
    Ok(load_corpus(dir)?)
}

fn open_vocab(path: &Path) -> CliResult<Vocab> {
    require(path, "vocabulary", "build-vocab")?;
    Ok(Vocab::load(path)?)
}

fn kinds(s: &str) -> CliResult<Vec<regabstract_core::corpus::DocKind>> {
    Ok(parse_kinds(s)?)
}

impl SplitArgs {
    fn splits(&self, bundle: &CorpusBundle) -> CliResult<SplitSets> {
        let folds = split_folds(&bundle.patients, self.folds, self.fold_seed)?;
        Ok(folds.split(
            parse_fold_range(&self.train_folds)?,
            parse_fold_range(&self.dev_folds)?,
            parse_fold_range(&self.test_folds)?,
        )?)
    }
}

fn cancer_patients(bundle: &CorpusBundle) -> Vec<Patient> {
    bundle.patients.iter().filter(|p| p.is_cancer()).cloned().collect()
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_metrics(path: &Path, doc: &MetricsDoc) -> CliResult<()> {
    let text = serde_json::to_string_pretty(doc).map_err(anyhow::Error::from)? + "\n";
    write_text(path, &text)
}

fn summarize(report: &MetricsReport) -> String {
    format!(
        "AUROC {:.4} AUPRC {:.4} accuracy {:.4} over {} patients",
        report.auroc, report.auprc, report.accuracy, report.n_instances
    )
}

// ---------------------------------------------------------------- stages

fn gen_corpus(a: &GenCorpusArgs) -> CliResult<()> {
    let config = GeneratorConfig {
        n_cancer_patients: a.cancer,
        n_control_patients: a.control,
        n_site_classes: a.sites,
        n_histology_classes: a.histologies,
        cross_doc_fraction: a.cross_doc,
        pretrain_pool_docs: a.pool,
        seed: a.seed,
        ..GeneratorConfig::default()
    };
    config.validate()?;
    let mut m = ManifestBuilder::new("gen-corpus", &config, Some(a.seed));
    let bundle = generate_corpus(&config)?;
    write_corpus(&bundle, &a.out)?;
    m.output(&a.out);
    m.write(&a.out.join("manifest.json"))?;
    println!(
        "wrote {} patients ({} with registry records) and {} pool notes to {}; sha256 {}",
        bundle.patients.len(),
        bundle.patients.iter().filter(|p| p.is_cancer()).count(),
        bundle.pretrain_pool.len(),
        a.out.display(),
        hash_path(&a.out)?
    );
    Ok(())
}

fn build_vocab(a: &BuildVocabArgs) -> CliResult<()> {
    let bundle = open_corpus(&a.split.corpus)?;
    let splits = a.split.splits(&bundle)?;
    let mut m = ManifestBuilder::new("build-vocab", a, None);
    m.input(&a.split.corpus)?;
    let train = select_patients(&bundle.patients, &splits.train);
    let mut texts: Vec<&str> = train.iter().flat_map(|p| p.documents.iter().map(|d| d.text.as_str())).collect();
    texts.extend(bundle.pretrain_pool.iter().map(|d| d.text.as_str()));
    let vocab = learn_vocab(&texts, a.size)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    vocab.save(&a.out)?;
    m.output(&a.out);
    m.write(&manifest_beside(&a.out))?;
    println!("vocabulary of {} units from {} texts -> {}", vocab.len(), texts.len(), a.out.display());
    Ok(())
}

fn pretrain(a: &PretrainArgs) -> CliResult<()> {
    let bundle = open_corpus(&a.corpus)?;
    let vocab = open_vocab(&a.vocab)?;
    let mut m = ManifestBuilder::new("pretrain", a, Some(a.seed));
    m.input(&a.corpus)?;
    m.input(&a.vocab)?;
    let model_args = ModelArgs {
        encoder: EncoderArg::Transformer,
        embed_dim: a.embed_dim,
        hidden: 64,
        layers: a.layers,
        heads: a.heads,
        ff_dim: a.ff_dim,
        dropout: 0.1,
    };
    let model = Model::new(model_args.config(vocab.len(), 2, a.seed), vocab.content_hash())?;
    let config = PretrainConfig {
        steps: a.steps,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        ..PretrainConfig::default()
    };
    let outcome = pretrain_encoder(&config, model, &bundle.pretrain_pool, &vocab)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    save_encoder_checkpoint(&outcome.model, &a.out)?;
    let losses = a.out.with_extension("losses.json");
    write_json(&losses, &outcome.losses)?;
    m.output(&a.out);
    m.output(&losses);
    m.write(&manifest_beside(&a.out))?;
    let n = outcome.losses.len();
    let k = n.min(50).max(1);
    println!(
        "masked-token loss {:.4} -> {:.4} over {n} steps -> {}",
        outcome.losses.iter().take(k).sum::<f64>() / k as f64,
        outcome.losses.iter().skip(n.saturating_sub(k)).sum::<f64>() / k as f64,
        a.out.display()
    );
    Ok(())
}

/// Model config for a task, adopting the encoder of a pretrained checkpoint when given.
fn resolve_model(
    model: &ModelArgs,
    pretrained: Option<&Path>,
    vocab: &Vocab,
    n_classes: usize,
    seed: u64,
) -> CliResult<(ModelConfig, Option<regabstract_core::numcore::ParamStore<f32>>)> {
    let mut config = model.config(vocab.len(), n_classes, seed);
    let Some(path) = pretrained else {
        return Ok((config, None));
    };
    require(path, "pretrained encoder", "pretrain")?;
    let (header, params) = load_encoder_checkpoint(path, &vocab.content_hash())?;
    config.encoder = header.config.encoder;
    config.embed_dim = header.config.embed_dim;
    config.max_sentence_tokens = header.config.max_sentence_tokens;
    Ok((config, Some(params)))
}

fn train(a: &TrainArgs) -> CliResult<()> {
    let options = AssembleOptions {
        window: a.window,
        kinds: kinds(&a.kinds)?,
        max_sentences: a.fit.max_sentences,
        ..AssembleOptions::default()
    };
    let fit = a.fit.config();
    fit.validate()?;
    let bundle = open_corpus(&a.split.corpus)?;
    let vocab = open_vocab(&a.vocab)?;
    let splits = a.split.splits(&bundle)?;
    let space = bundle.label_space(a.attribute);
    let (model_config, pretrained) = resolve_model(&a.model, a.pretrained.as_deref(), &vocab, space.len(), a.fit.seed)?;
    let mut m = ManifestBuilder::new("train", a, Some(a.fit.seed));
    m.input(&a.split.corpus)?;
    m.input(&a.vocab)?;
    if let Some(p) = &a.pretrained {
        m.input(p)?;
    }
    let cancer = cancer_patients(&bundle);
    let task = AbstractionTask {
        patients: &cancer,
        splits: &splits,
        space,
        vocab: &vocab,
        model_config,
        train_config: fit,
        pretrained: pretrained.as_ref(),
    };
    let run = task.run(&options)?;
    fs::create_dir_all(&a.out)?;
    let stem = checkpoint_file_name(a.attribute.as_str(), &run.model.config.encoder);
    let stem = stem.trim_end_matches(".ckpt");
    let ckpt = a.out.join(format!("{stem}.ckpt"));
    save_checkpoint(&run.model, &ckpt)?;
    let opts = a.out.join(format!("{stem}.options.json"));
    write_json(&opts, &options)?;
    let history = a.out.join(format!("{stem}.history.json"));
    run.history.save(&history)?;
    let metrics = a.out.join(format!("{stem}.metrics.json"));
    write_metrics(
        &metrics,
        &MetricsDoc::Abstraction {
            attribute: a.attribute,
            method: run.model.config.encoder.name().to_string(),
            split: "test".into(),
            options,
            report: run.report.clone(),
        },
    )?;
    for p in [&ckpt, &opts, &history, &metrics] {
        m.output(p);
    }
    m.write(&a.out.join(format!("{stem}.manifest.json")))?;
    println!(
        "{} {}: best epoch {} (dev macro AUPRC {:.4}); test {}",
        a.attribute,
        stem,
        run.history.best_epoch,
        run.history.best_dev_metric,
        summarize(&run.report)
    );
    Ok(())
}

fn find_checkpoint(dir: &Path, attribute: AttributeKind) -> CliResult<(PathBuf, String)> {
    for name in ["transformer", "contextfree"] {
        let stem = format!("{attribute}.{name}");
        let path = dir.join(format!("{stem}.ckpt"));
        if path.exists() {
            return Ok((path, stem));
        }
    }
    Err(CliError::missing(
        &format!("{attribute} checkpoint"),
        &dir.join(format!("{attribute}.contextfree.ckpt")),
        "train",
    ))
}

fn eval(a: &EvalArgs) -> CliResult<()> {
    let bundle = open_corpus(&a.split.corpus)?;
    let splits = a.split.splits(&bundle)?;
    let space = bundle.label_space(a.attribute);
    let mut m = ManifestBuilder::new("eval", a, Some(a.seed));
    m.input(&a.split.corpus)?;
    let cancer = cancer_patients(&bundle);
    let patients = select_patients(&cancer, a.on.ids(&splits));
    let label = |p: &Patient| -> CliResult<usize> {
        let code = p.registry.as_ref().map(|r| r.label(a.attribute)).unwrap_or_default();
        space
            .index_of(code)
            .ok_or_else(|| CliError::Runtime(anyhow::anyhow!("patient {} has label {code} outside the label space", p.patient_id)))
    };
    let labels: Vec<usize> = patients.iter().map(label).collect::<CliResult<_>>()?;
    let default_opts = AssembleOptions::default();
    let anchored = |p| anchored_documents(p, &default_opts);
    let (method, options, report) = match a.method {
        Method::Model => {
            let dir = a
                .checkpoints
                .as_deref()
                .ok_or_else(|| CliError::Validation("--method model needs --checkpoints (written by `regabstract train`)".into()))?;
            let vocab_path = a
                .vocab
                .as_deref()
                .ok_or_else(|| CliError::Validation("--method model needs --vocab (written by `regabstract build-vocab`)".into()))?;
            let vocab = open_vocab(vocab_path)?;
            let (ckpt, stem) = find_checkpoint(dir, a.attribute)?;
            let model = load_checkpoint(&ckpt, &vocab.content_hash())?;
            let opts_path = dir.join(format!("{stem}.options.json"));
            let options: AssembleOptions = if opts_path.exists() { read_json(&opts_path)? } else { default_opts.clone() };
            m.input(&ckpt)?;
            m.input(vocab_path)?;
            let examples = build_abstraction_dataset(&patients, space, &options, &vocab)?;
            let report = evaluate_abstraction(&model, &examples, space)?;
            (model.config.encoder.name().to_string(), options, report)
        }
        Method::Ontology => {
            let lexicon = bundle.lexicon.get(&a.attribute).cloned().unwrap_or_default();
            let probs: Vec<Vec<f64>> = patients.iter().map(|p| ontology_predict(&lexicon, space, &anchored(p))).collect();
            ("ontology".to_string(), default_opts.clone(), evaluate_multiclass(&probs, &labels, &space.classes)?)
        }
        Method::Bow => {
            let train = select_patients(&cancer, &splits.train);
            let examples: Vec<_> = train.iter().map(|p| Ok((anchored(p), label(p)?))).collect::<CliResult<_>>()?;
            let config = BowConfig {
                seed: a.seed,
                ..BowConfig::default()
            };
            let bow = bow_train(&examples, space, &config)?.model;
            let probs: Vec<Vec<f64>> = patients.iter().map(|p| bow_predict(&bow, &anchored(p))).collect();
            ("bow".to_string(), default_opts.clone(), evaluate_multiclass(&probs, &labels, &space.classes)?)
        }
    };
    println!("{} {method} on {}: {}", a.attribute, a.on.as_str(), summarize(&report));
    write_metrics(
        &a.out,
        &MetricsDoc::Abstraction {
            attribute: a.attribute,
            method,
            split: a.on.as_str().into(),
            options,
            report,
        },
    )?;
    m.output(&a.out);
    m.write(&manifest_beside(&a.out))?;
    Ok(())
}

fn anchored_documents<'a>(p: &'a Patient, options: &AssembleOptions) -> Vec<&'a ClinicalDocument> {
    let day = p.registry.as_ref().map_or(0, |r| r.diagnosis_date);
    documents_in_window(p, day, options)
}

fn parse_variant(s: &str) -> CliResult<AblationVariant> {
    let (k, w) = s
        .split_once('@')
        .ok_or_else(|| CliError::Validation(format!("variant '{s}' is not KINDS@START:END")))?;
    Ok(AblationVariant::new(&kinds(k)?, w.parse::<Window>()?))
}

fn ablate(a: &AblateArgs) -> CliResult<()> {
    let variants: Vec<AblationVariant> = a.variants.iter().map(|v| parse_variant(v)).collect::<CliResult<_>>()?;
    if variants.len() < 2 {
        return Err(CliError::Validation("an ablation needs at least two --variant flags".into()));
    }
    let fit = a.fit.config();
    fit.validate()?;
    let bundle = open_corpus(&a.split.corpus)?;
    let vocab = open_vocab(&a.vocab)?;
    let splits = a.split.splits(&bundle)?;
    let space = bundle.label_space(a.attribute);
    let mut m = ManifestBuilder::new("ablate", a, Some(a.fit.seed));
    m.input(&a.split.corpus)?;
    m.input(&a.vocab)?;
    let cancer = cancer_patients(&bundle);
    let task = AbstractionTask {
        patients: &cancer,
        splits: &splits,
        space,
        vocab: &vocab,
        model_config: a.model.config(vocab.len(), space.len(), a.fit.seed),
        train_config: fit,
        pretrained: None,
    };
    let result = run_ablation(&task, &variants)?;
    fs::create_dir_all(&a.out)?;
    let tsv = a.out.join("ablation.tsv");
    write_text(&tsv, &ablation_tsv(&result))?;
    let metrics = a.out.join("metrics.json");
    write_metrics(&metrics, &MetricsDoc::Ablation { result: result.clone() })?;
    m.output(&tsv);
    m.output(&metrics);
    m.write(&a.out.join("manifest.json"))?;
    print!("{}", ablation_tsv(&result));
    Ok(())
}

/// Saved next to a case-finding checkpoint so `case-find eval` can rebuild the inputs.
#[derive(Serialize, Deserialize)]
struct CaseFindingState {
    config: CaseFindingConfig,
    threshold: f64,
    dev_f1: f64,
}

const CASEFINDING_CKPT: &str = "casefinding.ckpt";
const CASEFINDING_STATE: &str = "casefinding.json";

fn casefind_train(a: &CaseFindTrainArgs) -> CliResult<()> {
    let scheme = match a.scheme {
        SchemeArg::Default => CaseFindingScheme::Default,
        SchemeArg::HardNegatives => CaseFindingScheme::HardNegatives {
            hard_cutoff_days: a.hard_cutoff,
            per_patient_max: a.per_patient_max,
        },
    };
    let config = CaseFindingConfig {
        scheme,
        kinds: kinds(&a.kinds)?,
        control_days_per_patient: a.control_days,
        max_sentences: a.fit.max_sentences,
        seed: a.fit.seed,
    };
    let fit = a.fit.config();
    fit.validate()?;
    let bundle = open_corpus(&a.split.corpus)?;
    let vocab = open_vocab(&a.vocab)?;
    let splits = a.split.splits(&bundle)?;
    let mut m = ManifestBuilder::new("case-find train", a, Some(a.fit.seed));
    m.input(&a.split.corpus)?;
    m.input(&a.vocab)?;
    let task = CaseFindingTask {
        patients: &bundle.patients,
        splits: &splits,
        vocab: &vocab,
        model_config: a.model.config(vocab.len(), 2, a.fit.seed),
        train_config: fit,
        config: config.clone(),
        pretrained: None,
    };
    let run = task.run()?;
    fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join(CASEFINDING_CKPT);
    save_checkpoint(&run.model, &ckpt)?;
    let state = a.out.join(CASEFINDING_STATE);
    write_json(
        &state,
        &CaseFindingState {
            config,
            threshold: run.threshold,
            dev_f1: run.dev_f1,
        },
    )?;
    let history = a.out.join("history.json");
    run.history.save(&history)?;
    let metrics = a.out.join("metrics.json");
    write_metrics(
        &metrics,
        &MetricsDoc::CaseFinding {
            scheme: scheme.name().into(),
            split: "test".into(),
            threshold: run.threshold,
            outcome: run.test.clone(),
        },
    )?;
    for p in [&ckpt, &state, &history, &metrics] {
        m.output(p);
    }
    m.write(&a.out.join("manifest.json"))?;
    println!(
        "{}: threshold {:.2} (dev F1 {:.4}); test precision {:.4} recall {:.4} F1 {:.4}",
        scheme.name(),
        run.threshold,
        run.dev_f1,
        run.test.precision,
        run.test.recall,
        run.test.f1
    );
    Ok(())
}

fn casefind_eval(a: &CaseFindEvalArgs) -> CliResult<()> {
    let ckpt = a.model.join(CASEFINDING_CKPT);
    require(&ckpt, "case-finding checkpoint", "case-find train")?;
    let state: CaseFindingState = read_json(&a.model.join(CASEFINDING_STATE))?;
    let bundle = open_corpus(&a.split.corpus)?;
    let vocab = open_vocab(&a.vocab)?;
    let splits = a.split.splits(&bundle)?;
    let mut m = ManifestBuilder::new("case-find eval", a, None);
    m.input(&a.split.corpus)?;
    m.input(&a.vocab)?;
    m.input(&ckpt)?;
    let model = load_checkpoint(&ckpt, &vocab.content_hash())?;
    let threshold = a.threshold.unwrap_or(state.threshold);
    let patients = select_patients(&bundle.patients, a.on.ids(&splits));
    let scores = score_patient_days(&model, &patients, &state.config, &vocab)?;
    let outcome = casefinding_patient_eval(&scores, threshold)?;
    println!(
        "{} on {}: threshold {threshold:.2}; precision {:.4} recall {:.4} F1 {:.4} (tp {} fp {} fn {} tn {})",
        state.config.scheme.name(),
        a.on.as_str(),
        outcome.precision,
        outcome.recall,
        outcome.f1,
        outcome.tp,
        outcome.fp,
        outcome.fn_,
        outcome.tn
    );
    write_metrics(
        &a.out,
        &MetricsDoc::CaseFinding {
            scheme: state.config.scheme.name().into(),
            split: a.on.as_str().into(),
            threshold,
            outcome,
        },
    )?;
    m.output(&a.out);
    m.write(&manifest_beside(&a.out))?;
    Ok(())
}

fn extractions(corpus: &Path, checkpoints: Option<&Path>, vocab: Option<&Path>, bundle: &CorpusBundle) -> CliResult<Vec<Extraction>> {
    if let Some(dir) = checkpoints {
        require(dir, "checkpoint directory", "train")?;
    }
    let predictors = load_predictors(checkpoints, vocab)?;
    for (attribute, source) in predictors.sources() {
        log::info!("{attribute}: {source}");
    }
    if predictors.by_attribute.values().all(|p| matches!(p, Predictor::Ontology)) {
        log::info!("no checkpoints loaded from {}; every attribute uses alias matching", corpus.display());
    }
    Ok(extract_all(bundle, &predictors)?)
}

fn infer(a: &InferArgs) -> CliResult<()> {
    let bundle = open_corpus(&a.corpus)?;
    let mut m = ManifestBuilder::new("infer", a, None);
    m.input(&a.corpus)?;
    let rows = extractions(&a.corpus, a.checkpoints.as_deref(), a.vocab.as_deref(), &bundle)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_jsonl(&a.out, &rows)?;
    m.output(&a.out);
    m.write(&manifest_beside(&a.out))?;
    println!("{} extractions -> {}", rows.len(), a.out.display());
    Ok(())
}

fn explain(a: &ExplainArgs) -> CliResult<()> {
    let mut bundle = open_corpus(&a.corpus)?;
    let patient = bundle
        .patient(&a.patient)
        .cloned()
        .ok_or_else(|| CliError::Validation(format!("no patient '{}' in {}", a.patient, a.corpus.display())))?;
    bundle.patients = vec![patient.clone()];
    let rows = extractions(&a.corpus, a.checkpoints.as_deref(), a.vocab.as_deref(), &bundle)?;
    let x = rows
        .into_iter()
        .find(|x| x.attribute == a.attribute)
        .ok_or_else(|| CliError::Runtime(anyhow::anyhow!("no extraction for {}", a.attribute)))?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&x).map_err(anyhow::Error::from)?);
        return Ok(());
    }
    let truth = patient.registry.as_ref().map(|r| r.label(a.attribute).to_string());
    println!("{} {}: {} ({})", x.patient_id, x.attribute, x.predicted, x.source);
    if let Some(t) = truth {
        println!("registry: {t}");
    }
    for l in &x.top5 {
        println!("  {:<16} {:.4}", l.label, l.prob);
    }
    let Some(r) = &x.rationale else {
        println!("no rationale (alias matching or empty input)");
        return Ok(());
    };
    let docs: BTreeMap<&str, _> = patient.documents.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    for (rank, e) in r.entries.iter().enumerate() {
        let Some(doc) = docs.get(e.doc_id.as_str()) else { continue };
        let text = render_span(doc, e.char_start, e.char_end).unwrap_or("");
        let words: Vec<&str> = e.tokens.iter().filter_map(|t| render_span(doc, t.char_start, t.char_end)).collect();
        println!(
            "{}. [{} {} day {}] weight {:.3}: {}\n   words: {}",
            rank + 1,
            doc.doc_id,
            doc.kind,
            doc.date,
            e.sentence_weight,
            text.trim(),
            words.join(", ")
        );
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    require(&a.corpus.join("patients.jsonl"), "corpus", "gen-corpus")?;
    if let Some(dir) = &a.checkpoints {
        require(dir, "checkpoint directory", "train")?;
    }
    let config = ServiceConfig {
        port: a.port,
        corpus_dir: a.corpus,
        checkpoint_dir: a.checkpoints,
        vocab: a.vocab,
        log_path: a.log,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(config))?;
    Ok(())
}

fn report(a: &ReportArgs) -> CliResult<()> {
    let mut docs = Vec::with_capacity(a.metrics.len());
    for path in &a.metrics {
        require(path, "metrics file", "train, eval, ablate or case-find")?;
        let doc: MetricsDoc = read_json(path)?;
        docs.push((path.display().to_string(), doc));
    }
    let text = render(&docs);
    match &a.out {
        Some(out) => write_text(out, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}
