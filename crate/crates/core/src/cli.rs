//! Command-line front end. Every command that writes a file also writes
//! `<out>.manifest.json` echoing the resolved configuration.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::corpus::{self, Label, LabeledInstance, TextSample, CORRUPTED_SUFFIX, FIXED_SUFFIX};
use crate::corrupt::{self, CorruptionConfig, Corruptor, PairRecord, Resources};
use crate::detect::{self, Algorithm, ClassifierParams, Direction, GmmParams, LinearClassifier, OutlierModel};
use crate::edits::{self, EditOp};
use crate::error::{Error, Result};
use crate::eval::{self, CiOptions, EvalOptions, Prediction};
use crate::lm::{self, NGramModel};
use crate::metrics::{self, FeatureRow, TextScore, TokenScoreFileRecord, FEATURE_KEYS};
use crate::par;
use crate::seed;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser, Serialize)]
#[command(name = "gedkit", version, about = "Corpus-quality and text anomaly detection toolkit")]
pub struct Cli {
    /// Base seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (0 = one per core). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Generate corrupted/correct pairs from correct texts.
    Corrupt(CorruptArgs),
    /// Fit an n-gram language model on correct texts.
    FitLm(FitLmArgs),
    /// Score texts with a fitted model into token_scores.jsonl.
    Score(ScoreArgs),
    /// Aggregate per-token metrics into per-text features.
    Features(FeaturesArgs),
    /// Search a decision threshold on one feature.
    GridSearch(GridSearchArgs),
    /// Fit an outlier model on embeddings.
    FitOutlier(FitOutlierArgs),
    /// Score embeddings with a fitted outlier model.
    ScoreOutlier(ScoreOutlierArgs),
    /// Surprisal gap between corrupted and fixed embeddings under a GMM.
    GmmGap(GmmGapArgs),
    /// Logistic classifier over features, with permutation importance.
    Classify(ClassifyArgs),
    /// Word-level edits turning each corrupted text into its fixed text.
    Diff(DiffArgs),
    /// Corpus statistics: edits, vocabulary, lines, perplexity diagnostics.
    Stats(StatsArgs),
    /// KL divergence between the edit distributions of two corpora.
    Kl(KlArgs),
    /// Evaluate predictions with F0.5 on class-balanced data.
    Eval(EvalArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct CorruptArgs {
    /// Correct texts (samples.jsonl); the bundled demo corpus when omitted.
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Number of pairs; defaults to one per input text.
    #[arg(long)]
    pub n: Option<usize>,
    /// Rule weights as `rule=w,...`; unlisted rules are disabled.
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub max_edits: usize,
    #[arg(long, default_value_t = 0.5)]
    pub preposition_delete_share: f64,
    #[arg(long, default_value_t = 0.5)]
    pub comma_removal_share: f64,
    #[arg(long, requires_all = ["confusions", "prepositions"])]
    pub morphology: Option<PathBuf>,
    #[arg(long)]
    pub confusions: Option<PathBuf>,
    #[arg(long)]
    pub prepositions: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitLmArgs {
    /// Texts to train on; the `text_fixed` side of every sample is used.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = lm::DEFAULT_ORDER)]
    pub order: usize,
    #[arg(long, default_value_t = lm::DEFAULT_SMOOTHING_K)]
    pub k: f64,
    #[arg(long, default_value_t = lm::DEFAULT_VOCAB_CAP)]
    pub vocab_cap: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub topk: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    /// Samples supplying labels and domains.
    #[arg(long = "in")]
    pub input: PathBuf,
    /// token_scores.jsonl to aggregate.
    #[arg(long, conflicts_with = "model")]
    pub scores: Option<PathBuf>,
    /// Score directly with this n-gram model instead.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GridSearchArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "min_p")]
    pub feature: String,
    #[arg(long, default_value = "flag_below")]
    pub direction: String,
    #[arg(long, default_value_t = detect::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Separate held-out feature file.
    #[arg(long, conflicts_with = "holdout_share")]
    pub holdout: Option<PathBuf>,
    /// Hold out this share of source texts (split by source id) instead.
    #[arg(long)]
    pub holdout_share: Option<f64>,
    /// Write predictions here: held-out rows when a holdout is given, else the training rows.
    #[arg(long)]
    pub predict_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitOutlierArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value = "iforest")]
    pub algorithm: String,
    #[arg(long, default_value_t = 0.05)]
    pub contamination: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreOutlierArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    /// predictions.jsonl
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct GmmGapArgs {
    /// Embeddings of correct texts to fit the mixture on.
    #[arg(long)]
    pub train: PathBuf,
    /// Pair embeddings with ids ending in `:corrupted` / `:fixed`.
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub k: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Held-out features; importance and predictions use it when given.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-3)]
    pub l2: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub predict_out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// edits.jsonl
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Reference corpus for vocabulary overlap.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Add perplexity diagnostics over pairs with this n-gram model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KlArgs {
    /// Pairs defining P.
    #[arg(long)]
    pub p: PathBuf,
    /// Pairs defining Q.
    #[arg(long)]
    pub q: PathBuf,
    #[arg(long, default_value_t = edits::DEFAULT_KL_EPSILON)]
    pub epsilon: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// predictions.jsonl; repeat for several runs (t-interval).
    #[arg(long = "pred", required = true)]
    pub pred: Vec<PathBuf>,
    #[arg(long)]
    pub samples: PathBuf,
    /// Bootstrap replicates; 0 disables the interval.
    #[arg(long, default_value_t = eval::DEFAULT_BOOTSTRAP)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = eval::DEFAULT_LEVEL)]
    pub level: f64,
    /// Critical t value for the across-run interval.
    #[arg(long, default_value_t = 2.262)]
    pub t_value: f64,
    /// Report only the overall row.
    #[arg(long)]
    pub no_group: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `argv` and run; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
    par::set_jobs(cli.jobs);
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn write_manifest(out: &Path, cli: &Cli) -> Result<()> {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    let manifest = json!({
        "tool": "gedkit",
        "version": VERSION,
        "parallel": cfg!(feature = "parallel"),
        "created_at": chrono::Utc::now().to_rfc3339(),
        "config": cli,
    });
    corpus::write_json(Path::new(&name), &manifest)
}

fn execute(cli: &Cli) -> Result<()> {
    let seed = cli.seed;
    let out = match &cli.command {
        Command::Corrupt(a) => cmd_corrupt(a, seed)?,
        Command::FitLm(a) => cmd_fit_lm(a)?,
        Command::Score(a) => cmd_score(a)?,
        Command::Features(a) => cmd_features(a)?,
        Command::GridSearch(a) => cmd_grid_search(a, seed)?,
        Command::FitOutlier(a) => cmd_fit_outlier(a, seed)?,
        Command::ScoreOutlier(a) => cmd_score_outlier(a)?,
        Command::GmmGap(a) => cmd_gmm_gap(a, seed)?,
        Command::Classify(a) => cmd_classify(a, seed)?,
        Command::Diff(a) => cmd_diff(a)?,
        Command::Stats(a) => cmd_stats(a)?,
        Command::Kl(a) => cmd_kl(a)?,
        Command::Eval(a) => cmd_eval(a, seed)?,
    };
    if let Some(out) = out {
        write_manifest(&out, cli)?;
    }
    Ok(())
}

fn cmd_corrupt(a: &CorruptArgs, seed: u64) -> Result<Option<PathBuf>> {
    let corpus = match &a.input {
        Some(p) => corpus::read_samples(p)?,
        None => corrupt::demo_corpus(),
    };
    let resources = match (&a.morphology, &a.confusions, &a.prepositions) {
        (Some(m), Some(c), Some(p)) => Resources::load(m, c, p)?,
        (None, None, None) => Resources::demo(),
        _ => return Err(Error::invalid("--morphology, --confusions and --prepositions go together")),
    };
    let mut config = CorruptionConfig {
        seed,
        max_edits_per_text: a.max_edits,
        preposition_delete_share: a.preposition_delete_share,
        comma_removal_share: a.comma_removal_share,
        ..Default::default()
    };
    if let Some(w) = &a.weights {
        config.rule_weights = CorruptionConfig::parse_weights(w)?;
    }
    let corruptor = Corruptor::new(config, resources)?;
    let sources = corpus.iter().filter(|s| s.text_fixed.is_some()).count();
    let records = corruptor.generate_dataset(&corpus, a.n.unwrap_or(sources))?;
    let pairs: Vec<PairRecord> = records.iter().map(PairRecord::from).collect();
    corpus::write_jsonl(&a.out, &pairs)?;
    log::info!("wrote {} pairs to {}", pairs.len(), a.out.display());
    Ok(Some(a.out.clone()))
}

fn cmd_fit_lm(a: &FitLmArgs) -> Result<Option<PathBuf>> {
    let samples = corpus::read_samples(&a.input)?;
    let texts: Vec<&str> = samples.iter().filter_map(|s| s.text_fixed.as_deref()).collect();
    if texts.is_empty() {
        return Err(Error::domain(format!("{} has no correct texts to train on", a.input.display())));
    }
    let model = NGramModel::fit(&texts, a.order, a.k, a.vocab_cap)?;
    model.save(&a.out)?;
    log::info!("fitted order-{} model with {} word types", a.order, model.words().len());
    Ok(Some(a.out.clone()))
}

fn score_instances(model: &NGramModel, instances: &[LabeledInstance], topk: usize) -> Vec<TokenScoreFileRecord> {
    par::map_slice(instances, |inst| match model.score_text(&inst.text) {
        Ok(scored) => Some(TokenScoreFileRecord::from_scored(inst.id.clone(), &scored, topk)),
        Err(e) => {
            log::warn!("skipping {}: {e}", inst.id);
            None
        }
    })
    .into_iter()
    .flatten()
    .collect()
}

fn cmd_score(a: &ScoreArgs) -> Result<Option<PathBuf>> {
    let model = NGramModel::load(&a.model)?;
    let instances = corpus::expand_pairs(&corpus::read_samples(&a.input)?);
    let records = score_instances(&model, &instances, a.topk);
    corpus::write_jsonl(&a.out, &records)?;
    Ok(Some(a.out.clone()))
}

fn cmd_features(a: &FeaturesArgs) -> Result<Option<PathBuf>> {
    let instances = corpus::expand_pairs(&corpus::read_samples(&a.input)?);
    let scores = match (&a.scores, &a.model) {
        (Some(p), None) => metrics::read_token_scores(p)?,
        (None, Some(m)) => score_instances(&NGramModel::load(m)?, &instances, 10),
        _ => return Err(Error::invalid("give exactly one of --scores or --model")),
    };
    let by_id = metrics::index_by_id(scores);
    let rows: Vec<Option<FeatureRow>> = par::map_slice(&instances, |inst| {
        let rec = by_id.get(&inst.id)?;
        let features = rec.to_records().and_then(|r| metrics::aggregate_features(&r));
        match features {
            Ok(features) => Some(FeatureRow {
                id: inst.id.clone(),
                domain: inst.domain.clone(),
                label: Some(inst.label),
                features,
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", inst.id);
                None
            }
        }
    });
    let missing = rows.iter().filter(|r| r.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} instances have no usable token scores");
    }
    let rows: Vec<FeatureRow> = rows.into_iter().flatten().collect();
    metrics::write_features(&a.out, &rows)?;
    Ok(Some(a.out.clone()))
}

/// Source text of an instance id: `src#i:side` -> `src`.
pub fn source_id(id: &str) -> &str {
    let base = id
        .strip_suffix(CORRUPTED_SUFFIX)
        .or_else(|| id.strip_suffix(FIXED_SUFFIX))
        .unwrap_or(id);
    base.rsplit_once('#').map_or(base, |(src, _)| src)
}

/// Deterministic split by source id; rows of one source stay together.
pub fn split_by_source(rows: Vec<FeatureRow>, share: f64, seed: u64) -> Result<(Vec<FeatureRow>, Vec<FeatureRow>)> {
    if !(share > 0.0 && share < 1.0) {
        return Err(Error::invalid(format!("holdout share {share} outside (0, 1)")));
    }
    let mut sources: Vec<&str> = rows.iter().map(|r| source_id(&r.id)).collect::<HashSet<_>>().into_iter().collect();
    sources.sort_by_key(|s| (seed::derive_str(seed, s), *s));
    let n_hold = ((sources.len() as f64 * share).round() as usize).clamp(1, sources.len().saturating_sub(1).max(1));
    let held: HashSet<String> = sources[..n_hold].iter().map(|s| s.to_string()).collect();
    Ok(rows.into_iter().partition(|r| !held.contains(source_id(&r.id))))
}

fn rows_as_instances(rows: &[FeatureRow]) -> Result<Vec<LabeledInstance>> {
    rows.iter()
        .map(|r| {
            Ok(LabeledInstance {
                id: r.id.clone(),
                domain: r.domain.clone(),
                text: String::new(),
                label: r.label.ok_or_else(|| Error::invalid(format!("row {} has no label", r.id)))?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct GridSearchReport {
    detector: detect::ThresholdDetector,
    train_f05: f64,
    curve: Vec<detect::CurvePoint>,
    holdout: Option<Vec<eval::EvalReport>>,
}

fn cmd_grid_search(a: &GridSearchArgs, seed: u64) -> Result<Option<PathBuf>> {
    let direction: Direction = a.direction.parse()?;
    let all = metrics::read_features(&a.features)?;
    let (train, holdout) = match (&a.holdout, a.holdout_share) {
        (Some(p), _) => (all, Some(metrics::read_features(p)?)),
        (None, Some(share)) => {
            let (t, h) = split_by_source(all, share, seed)?;
            (t, Some(h))
        }
        (None, None) => (all, None),
    };
    let (det, curve) = detect::grid_search_threshold(&train, &a.feature, direction, a.grid)?;
    let best = curve.iter().find(|p| p.threshold == det.threshold).map_or(0.0, |p| p.f05);
    let predict = |rows: &[FeatureRow]| -> Vec<Prediction> {
        rows.iter()
            .map(|r| Prediction {
                id: r.id.clone(),
                pred: det.predict_row(r),
                score: r.features.get(&det.feature_name),
            })
            .collect()
    };
    let holdout_report = match &holdout {
        Some(rows) => {
            let preds = predict(rows);
            if let Some(p) = &a.predict_out {
                eval::write_predictions(p, &preds)?;
            }
            let opts = EvalOptions { ci: CiOptions::None, seed, ..Default::default() };
            let reports = eval::evaluate_predictions(&preds, &rows_as_instances(rows)?, &opts)?;
            print!("{}", eval::render_table(&reports));
            Some(reports)
        }
        None => {
            // without a holdout, predictions cover the rows the threshold was fit on
            if let Some(p) = &a.predict_out {
                eval::write_predictions(p, &predict(&train))?;
            }
            None
        }
    };
    let report = GridSearchReport { detector: det, train_f05: best, curve, holdout: holdout_report };
    corpus::write_json(&a.out, &report)?;
    Ok(Some(a.out.clone()))
}

fn vectors_of(records: &[detect::EmbeddingRecord]) -> Vec<Vec<f64>> {
    records.iter().map(|r| r.vector.clone()).collect()
}

fn cmd_fit_outlier(a: &FitOutlierArgs, seed: u64) -> Result<Option<PathBuf>> {
    let algorithm: Algorithm = a.algorithm.parse()?;
    let records = detect::read_embeddings(&a.embeddings)?;
    let model = OutlierModel::fit(algorithm, &vectors_of(&records), a.contamination, seed)?;
    corpus::write_json(&a.out, &model)?;
    Ok(Some(a.out.clone()))
}

fn cmd_score_outlier(a: &ScoreOutlierArgs) -> Result<Option<PathBuf>> {
    let model: OutlierModel = corpus::read_json(&a.model)?;
    let records = detect::read_embeddings(&a.embeddings)?;
    let scores = model.score_all(&vectors_of(&records))?;
    let preds: Vec<Prediction> = records
        .iter()
        .zip(scores)
        .map(|(r, s)| Prediction {
            id: r.id.clone(),
            pred: if model.is_outlier(s) { Label::Corrupted } else { Label::Correct },
            score: Some(s),
        })
        .collect();
    eval::write_predictions(&a.out, &preds)?;
    Ok(Some(a.out.clone()))
}

fn cmd_gmm_gap(a: &GmmGapArgs, seed: u64) -> Result<Option<PathBuf>> {
    let train = detect::read_embeddings(&a.train)?;
    let pairs = detect::read_embeddings(&a.pairs)?;
    let params = GmmParams { k: a.k, seed, max_iter: a.max_iter, tol: a.tol };
    let fit = detect::gmm_fit(&vectors_of(&train), params)?;
    let by_id = detect::embeddings_by_id(&pairs);
    let mut corrupted = Vec::new();
    let mut fixed = Vec::new();
    for r in &pairs {
        if let Some(base) = r.id.strip_suffix(CORRUPTED_SUFFIX) {
            if let Some(f) = by_id.get(format!("{base}{FIXED_SUFFIX}").as_str()) {
                corrupted.push(r.vector.clone());
                fixed.push(f.to_vec());
            }
        }
    }
    let gap = detect::surprisal_gap(&fit.model, &corrupted, &fixed)?;
    let report = json!({
        "k": a.k,
        "n_pairs": corrupted.len(),
        "surprisal_gap": gap,
        "converged": fit.converged,
        "log_likelihoods": fit.log_likelihoods,
        "model": fit.model,
    });
    corpus::write_json(&a.out, &report)?;
    Ok(Some(a.out.clone()))
}

fn feature_matrix(rows: &[FeatureRow]) -> Result<(Vec<Vec<f64>>, Vec<Label>)> {
    let labels = rows
        .iter()
        .map(|r| r.label.ok_or_else(|| Error::invalid(format!("row {} has no label", r.id))))
        .collect::<Result<Vec<_>>>()?;
    Ok((rows.iter().map(|r| r.features.values()).collect(), labels))
}

fn cmd_classify(a: &ClassifyArgs, seed: u64) -> Result<Option<PathBuf>> {
    let train = metrics::read_features(&a.features)?;
    let (x, y) = feature_matrix(&train)?;
    let params = ClassifierParams { l2: a.l2, epochs: a.epochs, lr: a.lr, seed };
    let model = LinearClassifier::fit(&x, &y, params)?;
    let test = match &a.test {
        Some(p) => metrics::read_features(p)?,
        None => train.clone(),
    };
    let (tx, ty) = feature_matrix(&test)?;
    let importance = detect::permutation_importance(&model, &tx, &ty, a.repeats, seed)?;
    let preds: Vec<Prediction> = test
        .iter()
        .zip(&tx)
        .map(|(r, v)| Prediction { id: r.id.clone(), pred: model.predict(v), score: Some(model.predict_proba(v)) })
        .collect();
    if let Some(p) = &a.predict_out {
        eval::write_predictions(p, &preds)?;
    }
    let opts = EvalOptions { ci: CiOptions::None, seed, ..Default::default() };
    let reports = eval::evaluate_predictions(&preds, &rows_as_instances(&test)?, &opts)?;
    print!("{}", eval::render_table(&reports));
    let importance: BTreeMap<&str, detect::FeatureImportance> = FEATURE_KEYS.iter().copied().zip(importance).collect();
    let report = json!({ "model": model, "importance": importance, "evaluation": reports });
    corpus::write_json(&a.out, &report)?;
    Ok(Some(a.out.clone()))
}

#[derive(Debug, Serialize)]
struct EditsRecord {
    id: String,
    edits: Vec<EditOp>,
}

fn paired(samples: &[TextSample]) -> Vec<(&TextSample, &str, &str)> {
    samples
        .iter()
        .filter_map(|s| Some((s, s.text_corrupted.as_deref()?, s.text_fixed.as_deref()?)))
        .collect()
}

fn cmd_diff(a: &DiffArgs) -> Result<Option<PathBuf>> {
    let samples = corpus::read_samples(&a.input)?;
    let pairs = paired(&samples);
    let records: Vec<EditsRecord> = par::map_slice(&pairs, |(s, c, f)| EditsRecord {
        id: s.id.clone(),
        edits: edits::word_level_diff(c, f),
    });
    corpus::write_jsonl(&a.out, &records)?;
    Ok(Some(a.out.clone()))
}

fn text_pairs(samples: &[TextSample]) -> Vec<(String, String)> {
    paired(samples).into_iter().map(|(_, c, f)| (c.to_string(), f.to_string())).collect()
}

fn cmd_stats(a: &StatsArgs) -> Result<Option<PathBuf>> {
    let samples = corpus::read_samples(&a.input)?;
    let pairs = text_pairs(&samples);
    let fixed: Vec<&str> = samples.iter().filter_map(|s| s.text_fixed.as_deref()).collect();
    let corrupted: Vec<&str> = samples.iter().filter_map(|s| s.text_corrupted.as_deref()).collect();
    let poems: Vec<&str> = samples
        .iter()
        .filter(|s| s.domain == "poetry")
        .filter_map(|s| s.text_fixed.as_deref().or(s.text_corrupted.as_deref()))
        .collect();
    let profile = edits::edit_frequency_profile(&pairs);
    let mut report = json!({
        "n_samples": samples.len(),
        "n_pairs": pairs.len(),
        "edit_count_histogram": edits::edit_count_histogram(&pairs),
        "category_counts": profile.category_counts,
        "total_edits": profile.total_edits(),
        "vocab_fixed": edits::vocab_stats(&fixed),
        "vocab_corrupted": edits::vocab_stats(&corrupted),
        "poem_lines": edits::poem_line_stats(&poems),
    });
    if let Some(r) = &a.reference {
        let reference = corpus::read_samples(r)?;
        let ref_texts: Vec<&str> = reference.iter().filter_map(|s| s.text_fixed.as_deref()).collect();
        report["overlap_with_reference"] = json!(edits::vocab_overlap_and_novelty(&fixed, &ref_texts));
    }
    if let Some(m) = &a.model {
        let model = NGramModel::load(m)?;
        let scored: Vec<Option<(TextScore, TextScore)>> = par::map_slice(&pairs, |(c, f)| {
            let sc = metrics::score_records(&model, c).and_then(|r| TextScore::of(&r)).ok()?;
            let sf = metrics::score_records(&model, f).and_then(|r| TextScore::of(&r)).ok()?;
            Some((sc, sf))
        });
        let scored: Vec<(TextScore, TextScore)> = scored.into_iter().flatten().collect();
        report["perplexity"] = serde_json::to_value(metrics::ppl_pair_diagnostics(&scored)?)?;
    }
    corpus::write_json(&a.out, &report)?;
    Ok(Some(a.out.clone()))
}

fn cmd_kl(a: &KlArgs) -> Result<Option<PathBuf>> {
    let p = edits::edit_frequency_profile(&text_pairs(&corpus::read_samples(&a.p)?));
    let q = edits::edit_frequency_profile(&text_pairs(&corpus::read_samples(&a.q)?));
    let d = edits::kl_divergence(&p, &q, a.epsilon)?;
    let report = json!({
        "kl_divergence": d,
        "epsilon": a.epsilon,
        "p_edits": p.total_edits(),
        "q_edits": q.total_edits(),
    });
    corpus::write_json(&a.out, &report)?;
    Ok(Some(a.out.clone()))
}

/// Instances named by the predictions: pair-expanded ids, or raw sample
/// ids labelled by which text the sample holds.
fn eval_instances(samples: &[TextSample], preds: &[Prediction]) -> Vec<LabeledInstance> {
    let expanded = corpus::expand_pairs(samples);
    let wanted: HashSet<&str> = preds.iter().map(|p| p.id.as_str()).collect();
    if expanded.iter().any(|i| wanted.contains(i.id.as_str())) {
        return expanded;
    }
    let by_id: HashMap<&str, &TextSample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = wanted
        .iter()
        .filter_map(|id| by_id.get(id))
        .map(|s| {
            let (text, label) = match (&s.text_corrupted, &s.text_fixed) {
                (Some(t), _) => (t.clone(), Label::Corrupted),
                (None, Some(t)) => (t.clone(), Label::Correct),
                (None, None) => (String::new(), Label::Correct),
            };
            LabeledInstance { id: s.id.clone(), domain: s.domain.clone(), text, label }
        })
        .collect::<Vec<_>>();
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out
}

fn cmd_eval(a: &EvalArgs, seed: u64) -> Result<Option<PathBuf>> {
    let samples = corpus::read_samples(&a.samples)?;
    let runs: Vec<Vec<Prediction>> = a.pred.iter().map(|p| eval::read_predictions(p)).collect::<Result<_>>()?;
    let instances = eval_instances(&samples, &runs[0]);
    let ci = if a.bootstrap == 0 {
        CiOptions::None
    } else {
        CiOptions::Bootstrap { replicates: a.bootstrap, level: a.level }
    };
    let opts = EvalOptions { group_by_domain: !a.no_group, ci, seed };
    let reports = if runs.len() == 1 {
        eval::evaluate_predictions(&runs[0], &instances, &opts)?
    } else {
        eval::evaluate_runs(&runs, &instances, a.t_value, &opts)?
    };
    print!("{}", eval::render_table(&reports));
    match &a.out {
        Some(out) => {
            corpus::write_json(out, &reports)?;
            Ok(Some(out.clone()))
        }
        None => Ok(None),
    }
}
