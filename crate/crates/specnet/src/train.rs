//! End-to-end training, evaluation metrics, and the per-page prediction
//! entry point.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{ModelBundle, TrainMetadata};
use crate::classifier::{self, InternalLabel};
use crate::config::TrainConfig;
use crate::embed::{self, Charset, W2vConfig};
use crate::error::{Error, Result};
use crate::ingest::RawPage;
use crate::model::{self, PreparedPage, ReconstructionReport};
use crate::nn::{Adam, CosineRestarts, ParamStore, Tape};

/// Parse labeled pages; unlabeled or oversize/missing-domain pages are
/// skipped with a warning and counted.
pub fn prepare_labeled(pages: &[RawPage], cfg: &TrainConfig) -> Result<(Vec<PreparedPage>, usize)> {
    let mut prepared = Vec::with_capacity(pages.len());
    let mut skipped = 0usize;
    for page in pages {
        if page.label.is_none() {
            skipped += 1;
            log::warn!("skipping unlabeled page");
            continue;
        }
        match model::prepare_page(page, cfg) {
            Ok(p) => prepared.push(p),
            Err(e) => {
                skipped += 1;
                log::warn!("skipping page: {e}");
            }
        }
    }
    if prepared.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok((prepared, skipped))
}

fn has_both_classes(pages: &[PreparedPage]) -> bool {
    let benign = pages
        .iter()
        .filter(|p| p.label.map(InternalLabel::is_benign).unwrap_or(false))
        .count();
    benign > 0 && benign < pages.len()
}

/// Validation-side outputs for one page under the current parameters.
struct ValOutput {
    eps: Option<f64>,
    prob2: Option<f64>,
    label: InternalLabel,
}

fn validation_pass(
    store: &ParamStore<f32>,
    ids: &model::ModelIds,
    vocab: &embed::TokenVocabulary,
    table: &embed::EmbeddingTable,
    charset: &Charset,
    cfg: &TrainConfig,
    val: &[PreparedPage],
) -> Result<Vec<ValOutput>> {
    val.iter()
        .map(|page| {
            let mut tape = Tape::new();
            let fwd = model::forward_sample(
                &mut tape, store, ids, vocab, table, charset, cfg, &page.tree, None,
            )?;
            Ok(ValOutput {
                eps: fwd.eps.map(|e| tape.scalar_value(e) as f64),
                prob2: fwd.prob2.map(|p| tape.scalar_value(p) as f64),
                label: page.label.expect("validation pages are labeled"),
            })
        })
        .collect()
}

/// Calibrate a provisional threshold (when the variant uses one) and score
/// macro-F1 of the variant's decision rule over the validation outputs.
fn score_validation(outputs: &[ValOutput], cfg: &TrainConfig) -> Result<(f64, f64)> {
    let tau = if cfg.ablation.uses_prob1() {
        let eps: Vec<f64> = outputs.iter().map(|o| o.eps.expect("eps present")).collect();
        let labels: Vec<InternalLabel> = outputs.iter().map(|o| o.label).collect();
        classifier::calibrate_threshold(&eps, &labels)?.0
    } else {
        0.0
    };
    let beta = cfg.effective_beta();
    let mut external_pairs = Vec::with_capacity(outputs.len());
    for o in outputs {
        let prob1 = o
            .eps
            .filter(|_| cfg.ablation.uses_prob1())
            .map(|e| classifier::prob_threshold(e, tau, beta));
        let (_, verdict) = match (prob1, o.prob2.filter(|_| cfg.ablation.uses_prob2())) {
            (Some(p1), Some(p2)) => classifier::ensemble_decide(p1, p2),
            (Some(p1), None) => classifier::single_prob_decide(p1),
            (None, Some(p2)) => classifier::single_prob_decide(p2),
            (None, None) => unreachable!("variant uses at least one probability"),
        };
        external_pairs.push((o.label.to_external(), verdict));
    }
    let macro_f1 = macro_f1_external(&external_pairs);
    Ok((tau, macro_f1))
}

/// Macro-F1 over (true external label, predicted external label) pairs.
pub fn macro_f1_external(pairs: &[(u8, u8)]) -> f64 {
    let mut f1_sum = 0.0;
    for class in [0u8, 1u8] {
        let tp = pairs.iter().filter(|(t, p)| *t == class && *p == class).count() as f64;
        let fp = pairs.iter().filter(|(t, p)| *t != class && *p == class).count() as f64;
        let fn_ = pairs.iter().filter(|(t, p)| *t == class && *p != class).count() as f64;
        let f1 = if tp == 0.0 {
            0.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fn_)
        };
        f1_sum += f1;
    }
    f1_sum / 2.0
}

/// Train end to end: vocabulary, embeddings, joint optimization with the
/// cosine-restart schedule, early stopping on validation macro-F1 with a
/// provisional threshold, final calibration, bundle assembly.
pub fn train(cfg: &TrainConfig, train_pages: &[RawPage], val_pages: &[RawPage]) -> Result<ModelBundle> {
    cfg.validate()?;
    if train_pages.is_empty() || val_pages.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (train_set, train_skipped) = prepare_labeled(train_pages, cfg)?;
    let (val_set, val_skipped) = prepare_labeled(val_pages, cfg)?;
    if train_skipped + val_skipped > 0 {
        log::warn!("skipped {train_skipped} training / {val_skipped} validation pages");
    }
    if !has_both_classes(&val_set) {
        return Err(Error::CalibrationDegenerate);
    }

    let charset = Charset::v1();
    let trees: Vec<_> = train_set.iter().map(|p| p.tree.clone()).collect();
    let vocab = embed::build_vocabulary(trees.iter())?;
    let table = embed::train_embeddings(
        &trees,
        &vocab,
        &W2vConfig {
            dim: cfg.feature_dim,
            epochs: cfg.w2v_epochs,
            negatives: cfg.w2v_negatives,
            learning_rate: cfg.w2v_lr,
            seed: cfg.seed,
        },
    );
    drop(trees);

    let (mut store, ids) = model::init_model::<f32>(cfg, &charset);
    let mut adam = Adam::new(&store);
    let schedule = CosineRestarts::new(cfg.initial_lr, cfg.lr_floor, cfg.lr_cycle, cfg.lr_cycle_mult);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);

    let mut best: Option<(f64, f64, ParamStore<f32>, usize)> = None; // (f1, tau, params, epoch)
    let mut epochs_since_best = 0usize;
    let mut epochs_run = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        epochs_run = epoch + 1;
        let lr = schedule.lr_at(epoch) as f32;
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            store.zero_grads();
            let scale = 1.0f32 / batch.len() as f32;
            for (k, &idx) in batch.iter().enumerate() {
                let page = &train_set[idx];
                let mut tape = Tape::new();
                let fwd = model::forward_sample(
                    &mut tape, &store, &ids, &vocab, &table, &charset, cfg, &page.tree, page.label,
                )?;
                let loss = fwd.loss.expect("labeled sample produces a loss");
                if !tape.scalar_value(loss).is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, sample: k });
                }
                tape.backward_into(loss, scale, &mut store)?;
            }
            adam.step(&mut store, lr)?;
        }

        let outputs = validation_pass(&store, &ids, &vocab, &table, &charset, cfg, &val_set)?;
        let (tau, macro_f1) = score_validation(&outputs, cfg)?;
        log::info!("epoch {epoch}: lr {lr:.6} validation macro-F1 {macro_f1:.4} tau {tau:.6}");

        let improved = best.as_ref().map(|(f, ..)| macro_f1 > *f).unwrap_or(true);
        if improved {
            best = Some((macro_f1, tau, store.clone(), epoch));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch}");
                break;
            }
        }
    }

    let (best_f1, tau, best_store, best_epoch) = best.expect("at least one epoch ran");
    Ok(ModelBundle {
        config: cfg.clone(),
        vocab,
        charset_version: embed::domain::CHARSET_VERSION.to_string(),
        table,
        store: best_store,
        ids,
        tau,
        metadata: TrainMetadata {
            seed: cfg.seed,
            epochs_run,
            best_epoch,
            best_val_macro_f1: best_f1,
            train_pages: train_set.len(),
            val_pages: val_set.len(),
        },
    })
}

/// Recalibrate the threshold of an existing bundle on a validation set
/// without touching any other parameter.
pub fn calibrate(bundle: &mut ModelBundle, val_pages: &[RawPage]) -> Result<f64> {
    let cfg = bundle.config.clone();
    if !cfg.ablation.uses_prob1() {
        return Err(Error::Config(
            "this model variant does not use a reconstruction threshold".into(),
        ));
    }
    let (val_set, _) = prepare_labeled(val_pages, &cfg)?;
    if !has_both_classes(&val_set) {
        return Err(Error::CalibrationDegenerate);
    }
    let charset = Charset::v1();
    let outputs = validation_pass(
        &bundle.store,
        &bundle.ids,
        &bundle.vocab,
        &bundle.table,
        &charset,
        &cfg,
        &val_set,
    )?;
    let eps: Vec<f64> = outputs.iter().map(|o| o.eps.expect("eps present")).collect();
    let labels: Vec<InternalLabel> = outputs.iter().map(|o| o.label).collect();
    let (tau, _) = classifier::calibrate_threshold(&eps, &labels)?;
    bundle.tau = tau;
    Ok(tau)
}

/// Predict one page end to end; latency covers parse through verdict.
pub fn predict_page(bundle: &ModelBundle, page: &RawPage) -> Result<ReconstructionReport> {
    let charset = Charset::v1();
    let start = Instant::now();
    let prepared = model::prepare_page(page, &bundle.config)?;
    let out = model::infer_tree(
        &bundle.store,
        &bundle.ids,
        &bundle.vocab,
        &bundle.table,
        &charset,
        &bundle.config,
        bundle.tau,
        &prepared.tree,
    )?;
    let latency_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(ReconstructionReport {
        epsilon: out.epsilon,
        prob1: out.prob1,
        prob2: out.prob2,
        verdict: out.verdict,
        latency_ms,
    })
}

/// Confusion counts with phishing (external 1) as the positive class.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// Prob2-confidence statistics for one diagnostic group.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProbStats {
    pub count: usize,
    pub mean_confidence: f64,
    pub histogram: [usize; 10],
}

impl ProbStats {
    fn push(&mut self, confidence: f64) {
        self.count += 1;
        self.mean_confidence += confidence;
        let bin = ((confidence * 10.0) as usize).min(9);
        self.histogram[bin] += 1;
    }

    fn finish(&mut self) {
        if self.count > 0 {
            self.mean_confidence /= self.count as f64;
        }
    }
}

/// MLP-probability distributions conditioned on the threshold rule being
/// correct: the complementarity diagnostic.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ProbDiagnostic {
    pub both_correct: ProbStats,
    pub mlp_wrong_threshold_correct: ProbStats,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pages: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub confusion: Confusion,
    pub per_class: Vec<ClassMetrics>,
    pub diagnostic: ProbDiagnostic,
    pub latency_ms_mean: f64,
    pub latency_ms_p90: f64,
}

/// Metrics from (true external, predicted external) pairs.
pub fn metrics_from_pairs(pairs: &[(u8, u8)]) -> (f64, Vec<ClassMetrics>, Confusion) {
    let n = pairs.len().max(1);
    let correct = pairs.iter().filter(|(t, p)| t == p).count();
    let accuracy = correct as f64 / n as f64;
    let per_class = [0u8, 1u8]
        .iter()
        .map(|&class| {
            let tp = pairs.iter().filter(|(t, p)| *t == class && *p == class).count() as f64;
            let fp = pairs.iter().filter(|(t, p)| *t != class && *p == class).count() as f64;
            let fn_ = pairs.iter().filter(|(t, p)| *t == class && *p != class).count() as f64;
            let support = pairs.iter().filter(|(t, _)| *t == class).count();
            let precision = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
            let recall = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
            let f1 = if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            };
            ClassMetrics {
                class,
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect::<Vec<_>>();
    let confusion = Confusion {
        tp: pairs.iter().filter(|(t, p)| *t == 1 && *p == 1).count(),
        fp: pairs.iter().filter(|(t, p)| *t == 0 && *p == 1).count(),
        fn_: pairs.iter().filter(|(t, p)| *t == 1 && *p == 0).count(),
        tn: pairs.iter().filter(|(t, p)| *t == 0 && *p == 0).count(),
    };
    (accuracy, per_class, confusion)
}

/// Evaluate a bundle over labeled pages. `threads` > 1 parallelizes the
/// per-page forward passes with order-stable collection.
pub fn evaluate(bundle: &ModelBundle, pages: &[RawPage], threads: usize) -> Result<MetricsReport> {
    let labeled: Vec<&RawPage> = pages.iter().filter(|p| p.label.is_some()).collect();
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let run = |page: &RawPage| -> Result<(u8, ReconstructionReport)> {
        let report = predict_page(bundle, page)?;
        Ok((page.label.expect("filtered to labeled"), report))
    };
    let results: Vec<Result<(u8, ReconstructionReport)>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| {
            use rayon::prelude::*;
            labeled.par_iter().map(|p| run(p)).collect()
        })
    } else {
        labeled.iter().map(|p| run(p)).collect()
    };

    let mut pairs = Vec::with_capacity(results.len());
    let mut latencies = Vec::with_capacity(results.len());
    let mut diagnostic = ProbDiagnostic::default();
    let beta = bundle.config.effective_beta();
    let mut skipped = 0usize;
    for result in results {
        let (label, report) = match result {
            Ok(x) => x,
            Err(e) => {
                skipped += 1;
                log::warn!("evaluation skipped a page: {e}");
                continue;
            }
        };
        pairs.push((label, report.verdict));
        latencies.push(report.latency_ms);
        if let (Some(eps), Some(p2)) = (report.epsilon, report.prob2) {
            let p1 = classifier::prob_threshold(eps, bundle.tau, beta);
            let threshold_correct = classifier::single_prob_decide(p1).1 == label;
            let mlp_correct = classifier::single_prob_decide(p2).1 == label;
            let confidence = p2.max(1.0 - p2);
            if threshold_correct && mlp_correct {
                diagnostic.both_correct.push(confidence);
            } else if threshold_correct {
                diagnostic.mlp_wrong_threshold_correct.push(confidence);
            }
        }
    }
    if skipped > 0 {
        log::warn!("evaluation skipped {skipped} pages");
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    diagnostic.both_correct.finish();
    diagnostic.mlp_wrong_threshold_correct.finish();

    let (accuracy, per_class, confusion) = metrics_from_pairs(&pairs);
    let macro_f1 = per_class.iter().map(|c| c.f1).sum::<f64>() / 2.0;
    let macro_precision = per_class.iter().map(|c| c.precision).sum::<f64>() / 2.0;
    let macro_recall = per_class.iter().map(|c| c.recall).sum::<f64>() / 2.0;
    latencies.sort_by(|a, b| a.partial_cmp(b).expect("finite latencies"));
    let latency_ms_mean = latencies.iter().sum::<f64>() / latencies.len() as f64;
    let p90_idx = ((latencies.len() as f64) * 0.9).ceil() as usize;
    let latency_ms_p90 = latencies[p90_idx.saturating_sub(1).min(latencies.len() - 1)];

    Ok(MetricsReport {
        pages: pairs.len(),
        accuracy,
        macro_f1,
        macro_precision,
        macro_recall,
        confusion,
        per_class,
        diagnostic,
        latency_ms_mean,
        latency_ms_p90,
    })
}
