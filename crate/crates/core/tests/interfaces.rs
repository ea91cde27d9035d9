//! File interfaces consumed from external scorers, and the CLI contract.

use std::path::Path;
use std::process::Command;

use gedkit::corpus::{self, Label, TextSample};
use gedkit::detect::{self, EmbeddingRecord};
use gedkit::eval::{self, EvalReport};
use gedkit::lm::{DistributionView, ScoredToken};
use gedkit::metrics::{self, TokenScoreFileRecord, TokenScoreRecord};
use gedkit::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::Value;

const VOCAB: usize = 300;
const TOPK: usize = 10;

fn fixture_samples() -> Vec<TextSample> {
    let texts = [
        ("Я иду в школу утром.", "Я иду на школу утром."),
        ("Кот спит на диване.", "Кот спит в диване."),
        ("Мы читали книгу вечером.", "Мы читали книгой вечером."),
        ("Она пишет письмо другу.", "Она пишет письмо, другу."),
        ("Дети играют во дворе.", "Дети играют во двор."),
        ("Он купил хлеб и молоко.", "Он купил хлеб и малоко."),
        ("Погода сегодня хорошая.", "Погода сегодня хороший."),
        ("Мы поехали на море летом.", "Мы поехали в море летом."),
        ("Учитель объяснил задачу.", "Учитель объяснил за дачу."),
        ("Брат работает в городе.", "Брат работает в городом."),
    ];
    texts
        .iter()
        .enumerate()
        .map(|(i, (fixed, corrupted))| TextSample::pair(format!("t{i}"), if i < 5 { "news" } else { "essays" }, *corrupted, *fixed))
        .collect()
}

/// Zipf-like distribution over a shuffled vocabulary.
fn zipf(rng: &mut impl Rng) -> DistributionView {
    let mut weights: Vec<f64> = (1..=VOCAB).map(|r| 1.0 / r as f64).collect();
    weights.shuffle(rng);
    let z: f64 = weights.iter().sum();
    DistributionView::new(weights.into_iter().map(|w| w / z).collect()).unwrap()
}

/// Scores as an external model would export them: corrupted texts contain one
/// implausible token, fixed texts only likely ones.
fn synthetic_scores(samples: &[TextSample], topk: usize) -> Vec<(TokenScoreFileRecord, Vec<ScoredToken>)> {
    let mut rng = seed::rng(5);
    corpus::expand_pairs(samples)
        .iter()
        .map(|inst| {
            let tokens: Vec<String> = corpus::tokenize(&inst.text)
                .into_iter()
                .filter(|t| t.is_scoreable())
                .map(|t| t.surface)
                .collect();
            let odd = rng.gen_range(0..tokens.len());
            let scored: Vec<ScoredToken> = tokens
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let distribution = zipf(&mut rng);
                    let rank = if inst.label == Label::Corrupted && i == odd { rng.gen_range(150..VOCAB) } else { rng.gen_range(0..3) };
                    let observed = distribution.sorted_desc()[rank] as usize;
                    ScoredToken { token: t.clone(), distribution, observed }
                })
                .collect();
            (TokenScoreFileRecord::from_scored(inst.id.clone(), &scored, topk), scored)
        })
        .collect()
}

fn synthetic_embeddings(samples: &[TextSample]) -> Vec<EmbeddingRecord> {
    let mut rng = seed::rng(9);
    corpus::expand_pairs(samples)
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            // two corrupted texts are pushed far from the cloud
            let far = inst.label == Label::Corrupted && i < 4;
            let vector = (0..6)
                .map(|_| rng.gen_range(-1.0..1.0) + if far { 12.0 } else { 0.0 })
                .collect();
            EmbeddingRecord { id: inst.id.clone(), layer: Some(-1), vector }
        })
        .collect()
}

fn cli(args: &[&str]) -> i32 {
    gedkit::cli::run(std::iter::once("gedkit").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn token_scores_fixture_validates() {
    for (rec, _) in synthetic_scores(&fixture_samples(), TOPK) {
        rec.validate().unwrap();
        for (top, tail) in rec.topk.iter().zip(&rec.tail_mass) {
            let mass = top.iter().sum::<f64>() + tail;
            assert!((mass - 1.0).abs() <= 1e-3);
            assert_eq!(top.len(), TOPK);
        }
    }
}

#[test]
fn full_topk_export_reproduces_direct_metrics() {
    for (rec, scored) in synthetic_scores(&fixture_samples()[..3], VOCAB) {
        let from_file = rec.to_records().unwrap();
        for (f, s) in from_file.iter().zip(&scored) {
            let d = TokenScoreRecord::from_scored(s);
            assert_eq!(f.rank, d.rank);
            assert_eq!(f.possible_states, d.possible_states);
            assert!(f.exact_xi);
            for (a, b) in [(f.p_t, d.p_t), (f.entropy, d.entropy), (f.cum_prob, d.cum_prob), (f.oddballness, d.oddballness)] {
                assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn truncated_topk_oddballness_is_a_lower_bound() {
    let exact = synthetic_scores(&fixture_samples(), VOCAB);
    let cut = synthetic_scores(&fixture_samples(), TOPK);
    for ((full, _), (trunc, _)) in exact.iter().zip(&cut) {
        for (a, b) in full.to_records().unwrap().iter().zip(trunc.to_records().unwrap()) {
            assert!(b.oddballness <= a.oddballness + 1e-12);
            if b.exact_xi {
                assert!((a.oddballness - b.oddballness).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn invalid_token_scores_are_rejected() {
    let (mut rec, _) = synthetic_scores(&fixture_samples()[..1], TOPK).remove(0);
    rec.tail_mass[0] += 0.01;
    assert!(rec.validate().is_err());
    let (mut rec, _) = synthetic_scores(&fixture_samples()[..1], TOPK).remove(0);
    rec.rank.pop();
    assert!(rec.validate().is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    let (mut rec, _) = synthetic_scores(&fixture_samples()[..1], TOPK).remove(0);
    rec.topk[0].reverse();
    corpus::write_jsonl(&path, &[rec]).unwrap();
    assert!(metrics::read_token_scores(&path).is_err());
}

#[test]
fn external_scores_drive_the_detector_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let samples = fixture_samples();
    corpus::write_samples(&d.join("samples.jsonl"), &samples).unwrap();
    let records: Vec<TokenScoreFileRecord> = synthetic_scores(&samples, TOPK).into_iter().map(|(r, _)| r).collect();
    corpus::write_jsonl(&d.join("token_scores.jsonl"), &records).unwrap();

    let (samples_p, scores_p, feats_p, grid_p) =
        (d.join("samples.jsonl"), d.join("token_scores.jsonl"), d.join("features.jsonl"), d.join("grid.json"));
    assert_eq!(cli(&["features", "--in", s(&samples_p), "--scores", s(&scores_p), "--out", s(&feats_p)]), 0);
    let rows = metrics::read_features(&feats_p).unwrap();
    assert_eq!(rows.len(), 20);

    let pred_p = d.join("grid_pred.jsonl");
    let code = cli(&[
        "grid-search", "--features", s(&feats_p), "--feature", "min_p", "--direction", "flag_below",
        "--out", s(&grid_p), "--predict-out", s(&pred_p),
    ]);
    assert_eq!(code, 0);
    let report: Value = corpus::read_json(&grid_p).unwrap();
    assert!(report["train_f05"].as_f64().unwrap() > 0.95, "{report}");
    assert_eq!(report["detector"]["feature_name"], "min_p");

    let eval_p = d.join("eval.json");
    let code = cli(&["eval", "--pred", s(&pred_p), "--samples", s(&samples_p), "--bootstrap", "200", "--out", s(&eval_p)]);
    assert_eq!(code, 0);
    let reports: Vec<EvalReport> = corpus::read_json(&eval_p).unwrap();
    let overall = reports.iter().find(|r| r.domain == eval::OVERALL).unwrap();
    assert_eq!(overall.n, 20);
    let (lo, hi) = (overall.ci_low.unwrap(), overall.ci_high.unwrap());
    assert!(lo <= overall.f05 && overall.f05 <= hi);
    assert!(reports.iter().any(|r| r.domain == "news"));
}

#[test]
fn external_embeddings_drive_outlier_detection() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let emb = synthetic_embeddings(&fixture_samples());
    let emb_p = d.join("embeddings.jsonl");
    corpus::write_jsonl(&emb_p, &emb).unwrap();
    assert_eq!(detect::read_embeddings(&emb_p).unwrap(), emb);

    for alg in ["kde", "iforest", "abod"] {
        let model_p = d.join(format!("{alg}.json"));
        let pred_p = d.join(format!("{alg}_pred.jsonl"));
        let code = cli(&[
            "fit-outlier", "--embeddings", s(&emb_p), "--algorithm", alg, "--contamination", "0.1", "--out", s(&model_p),
        ]);
        assert_eq!(code, 0, "{alg}");
        assert_eq!(cli(&["score-outlier", "--model", s(&model_p), "--embeddings", s(&emb_p), "--out", s(&pred_p)]), 0);
        let preds = eval::read_predictions(&pred_p).unwrap();
        let flagged: Vec<&str> = preds.iter().filter(|p| p.pred == Label::Corrupted).map(|p| p.id.as_str()).collect();
        assert_eq!(flagged, vec!["t0:corrupted", "t1:corrupted"], "{alg}");
    }

    let mut bad = emb.clone();
    bad[3].vector.push(0.0);
    let bad_p = d.join("bad.jsonl");
    corpus::write_jsonl(&bad_p, &bad).unwrap();
    assert!(detect::read_embeddings(&bad_p).is_err());
    assert_eq!(cli(&["fit-outlier", "--embeddings", s(&bad_p), "--out", s(&d.join("m.json"))]), 2);
}

#[test]
fn binary_exit_codes_and_manifest() {
    let bin = env!("CARGO_BIN_EXE_gedkit");
    let out = Command::new(bin).arg("--version").output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains(env!("CARGO_PKG_VERSION")));

    assert_eq!(Command::new(bin).arg("no-such-command").output().unwrap().status.code(), Some(1));
    assert_eq!(Command::new(bin).args(["eval"]).output().unwrap().status.code(), Some(1));

    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = Command::new(bin)
        .args(["fit-lm", "--in", s(&missing), "--out", s(&dir.path().join("lm.json"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));

    let data = dir.path().join("data.jsonl");
    let status = Command::new(bin)
        .args(["--seed", "17", "corrupt", "--n", "5", "--out", s(&data)])
        .status()
        .unwrap();
    assert!(status.success());
    let manifest: Value = corpus::read_json(&dir.path().join("data.jsonl.manifest.json")).unwrap();
    assert_eq!(manifest["tool"], "gedkit");
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config"]["seed"], 17);
    assert!(manifest["created_at"].is_string());
}
