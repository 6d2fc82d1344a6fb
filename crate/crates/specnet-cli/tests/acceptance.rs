//! Acceptance suite: one test per criterion, each printing a PASS line with
//! its measured numbers. Heavy criteria share one synthetic corpus and one
//! trained model, built on first use; a mutex keeps CPU-heavy sections from
//! running concurrently so latency measurements stay honest.

use std::path::{Path, PathBuf};
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::Instant;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specnet::backbone;
use specnet::bundle::{self, ModelBundle};
use specnet::classifier::{self, InternalLabel};
use specnet::config::{Ablation, TrainConfig};
use specnet::embed;
use specnet::ingest::{self, load_manifest, RawPage};
use specnet::model;
use specnet::nn::{grad_check, ParamStore, Tape};
use specnet::perturb::{self, PerturbationKind, PerturbationSpec};
use specnet::specular;
use specnet::synth::{self, SynthSpec};
use specnet::train;

fn heavy_lock() -> MutexGuard<'static, ()> {
    static HEAVY: Mutex<()> = Mutex::new(());
    HEAVY.lock().unwrap_or_else(|e| e.into_inner())
}

fn read_pages(path: &Path) -> Vec<RawPage> {
    load_manifest(path).unwrap().map(|p| p.unwrap()).collect()
}

/// The shared synthetic corpus: 500 train / 100 val / 200 test per class.
struct Corpus {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Corpus {
    fn manifest(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.jsonl"))
    }
}

fn corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec {
            templates: 16,
            pages_per_template: 100,
            noise: 0.3,
            seed: 424_242,
            node_scale: 1.0,
        };
        let splits = vec![
            ("train".to_string(), 500usize),
            ("val".to_string(), 100),
            ("test".to_string(), 200),
        ];
        synth::generate(dir.path(), &spec, Some(&splits)).unwrap();
        Corpus {
            root: dir.path().to_path_buf(),
            _dir: dir,
        }
    })
}

/// The shared full model trained on the corpus, with its training wall time
/// and clean test metrics.
struct TrainedModel {
    bundle: ModelBundle,
    train_seconds: f64,
    clean: train::MetricsReport,
}

fn trained_model() -> &'static TrainedModel {
    static MODEL: OnceLock<TrainedModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let corpus = corpus();
        let cfg = TrainConfig {
            seed: 1,
            epochs: 30,
            patience: 5,
            ..TrainConfig::default()
        };
        let train_pages = read_pages(&corpus.manifest("train"));
        let val_pages = read_pages(&corpus.manifest("val"));
        let start = Instant::now();
        let bundle = train::train(&cfg, &train_pages, &val_pages).unwrap();
        let train_seconds = start.elapsed().as_secs_f64();
        let test_pages = read_pages(&corpus.manifest("test"));
        let clean = train::evaluate(&bundle, &test_pages, 1).unwrap();
        TrainedModel {
            bundle,
            train_seconds,
            clean,
        }
    })
}

fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut parents = vec![None];
    let mut depth = vec![0usize];
    for v in 1..n {
        let p = rng.random_range(0..v);
        parents.push(Some(p));
        depth.push(depth[p] + 1);
    }
    (parents, depth)
}

// ---------------------------------------------------------------------------
// Criterion 1: gradient integrity.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_gradient_integrity() {
    let start = Instant::now();
    let tol = 1e-4;
    let mut worst: f64 = 0.0;

    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rnd = |r: usize, c: usize, rng: &mut ChaCha8Rng| {
            Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
        };

        // (a) Substrate primitives.
        let mut store = ParamStore::<f64>::new();
        let x = store.register("x", rnd(4, 3, &mut rng));
        let w = store.register("w", rnd(2, 3, &mut rng));
        let b = store.register("b", rnd(1, 2, &mut rng));
        let gamma = store.register("gamma", rnd(1, 3, &mut rng));
        let beta = store.register("beta", rnd(1, 3, &mut rng));
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, x);
            let gamma = tape.param(store, gamma);
            let beta = tape.param(store, beta);
            let normed = tape.layer_norm(x, gamma, beta)?;
            let w = tape.param(store, w);
            let b = tape.param(store, b);
            let lin = tape.linear(normed, w, b)?;
            let act = tape.leaky_relu(lin, 0.01);
            let scores = tape.gather_rows(act, &[0, 1, 2, 3])?;
            let col = tape.slice_cols(scores, 0, 1)?;
            let sm = tape.softmax(col);
            let weighted = tape.scale_rows(act, sm)?;
            Ok(tape.mean_all(weighted))
        })
        .unwrap();
        assert!(report.passes(tol), "primitives seed {seed}: {}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);

        // (b) Domain encoder.
        let charset = embed::Charset::v1();
        let mut store = ParamStore::<f64>::new();
        let ids = embed::domain::random_encoder(&mut store, &charset, 6, 1, seed);
        let len = rng.random_range(2..8);
        let domain: String = (0..len)
            .map(|_| charset.chars()[rng.random_range(0..charset.chars().len())])
            .collect();
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let out = embed::encode_domain_on(tape, store, &ids, &charset, &domain)?;
            let sq = tape.mul(out, out)?;
            Ok(tape.sum_all(sq))
        })
        .unwrap();
        assert!(report.passes(tol), "domain seed {seed}: {}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);

        // (c) Error MLP through its classification loss.
        let mut store = ParamStore::<f64>::new();
        let mut mlp_rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
        let mlp = classifier::init_error_mlp(&mut store, 8, &[5], &mut mlp_rng);
        let delta = store.register(
            "delta",
            Array2::from_shape_fn((1, 8), |_| rng.random_range(0.0..2.0)),
        );
        let y = if seed % 2 == 0 {
            InternalLabel::benign()
        } else {
            InternalLabel::phishing()
        };
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let delta = tape.param(store, delta);
            let p2 = classifier::error_mlp_on(tape, store, &mlp, delta, 0.01)?;
            classifier::loss_classification_on(tape, p2, y)
        })
        .unwrap();
        assert!(report.passes(tol), "mlp seed {seed}: {}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);

        // (d) Full encode -> decode -> error -> L1 + L2 -> multitask on a
        // random 6-node tree.
        let (parents, depth) = random_tree(&mut rng, 6);
        let graph = specular::build_mirror(&parents, &depth);
        let f = 6;
        let mut store = ParamStore::<f64>::new();
        let x_id = store.register("x", rnd(6, f, &mut rng));
        let enc_w = store.register("enc.w", rnd(f, 2 * f, &mut rng));
        let enc_b = store.register("enc.b", rnd(1, f, &mut rng));
        let dec_w = store.register("dec.w", rnd(f, 2 * f, &mut rng));
        let dec_b = store.register("dec.b", rnd(1, f, &mut rng));
        let mut mlp_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5A5A);
        let mlp = classifier::init_error_mlp(&mut store, f, &[4], &mut mlp_rng);
        let w1 = store.register("loss.w1", rnd(1, 1, &mut rng));
        let w2 = store.register("loss.w2", rnd(1, 1, &mut rng));
        let report = grad_check(&mut store, 1e-5, |tape, store| {
            let x = tape.param(store, x_id);
            let (root, _, _) = specular::encode_on(tape, store, &graph, x, enc_w, enc_b, 0.01)?;
            let (xhat, _) = specular::decode_on(tape, store, &graph, x, root, dec_w, dec_b, 0.01)?;
            let (_, eps, delta) = specular::reconstruction_error_on(tape, x, xhat, true)?;
            let l1 = classifier::loss_reconstruction_on(tape, eps, y)?;
            let p2 = classifier::error_mlp_on(tape, store, &mlp, delta, 0.01)?;
            let l2 = classifier::loss_classification_on(tape, p2, y)?;
            classifier::multitask_on(tape, store, &[(l1, w1), (l2, w2)])
        })
        .unwrap();
        assert!(report.passes(tol), "pipeline seed {seed}: {}", report.max_rel_err);
        worst = worst.max(report.max_rel_err);
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 1 must finish within a minute, took {secs:.1}s");
    println!(
        "[PASS] criterion 1: gradient integrity, 20 seeds, max rel err {worst:.2e} <= 1e-4, {secs:.1}s"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: structural invariants on 1,000 random trees.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_structural_invariants() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x57AB);
    let f = 4;
    let mut store = ParamStore::<f64>::new();
    let enc_w = store.register("enc.w", Array2::from_shape_fn((f, 2 * f), |_| 0.3));
    let enc_b = store.register("enc.b", Array2::zeros((1, f)));
    let dec_w = store.register("dec.w", Array2::from_shape_fn((f, 2 * f), |_| -0.2));
    let dec_b = store.register("dec.b", Array2::zeros((1, f)));

    for round in 0..1000 {
        let n = rng.random_range(1..=2000);
        let (parents, _depth) = random_tree(&mut rng, n);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        // Pooling law.
        let kept = backbone::select_topk(&scores, 0.2);
        assert_eq!(kept.len(), ((n + 4) / 5).max(1), "round {round}");
        assert_eq!(kept[0], 0, "root kept, round {round}");

        // Restoration vs the upward-walk oracle.
        let (parent, depth) = backbone::restore_connectivity(&kept, &parents);
        for (i, &orig) in kept.iter().enumerate() {
            let mut w = parents[orig];
            let expect = loop {
                match w {
                    None => break None,
                    Some(u) if kept.binary_search(&u).is_ok() => {
                        break Some(kept.binary_search(&u).unwrap())
                    }
                    Some(u) => w = parents[u],
                }
            };
            assert_eq!(parent[i], expect, "round {round} node {orig}");
        }

        // Mirror size laws over the pooled tree.
        let graph = specular::build_mirror(&parent, &depth);
        let k = kept.len();
        assert_eq!(graph.total_nodes(), 2 * k - 1);
        assert_eq!(graph.total_directed_edges(), 2 * (k - 1));

        // Level-wise update order and single-update laws.
        let mut tape = Tape::new();
        let x = tape.leaf(Array2::from_shape_fn((k, f), |_| rng.random_range(-1.0..1.0)));
        let (root, _, enc_trace) =
            specular::encode_on(&mut tape, &store, &graph, x, enc_w, enc_b, 0.01).unwrap();
        let (_, dec_trace) =
            specular::decode_on(&mut tape, &store, &graph, x, root, dec_w, dec_b, 0.01).unwrap();

        let mut enc_ts = vec![usize::MAX; k];
        for (t, &v) in enc_trace.order.iter().enumerate() {
            assert_eq!(enc_ts[v], usize::MAX, "single update, round {round}");
            enc_ts[v] = t;
        }
        assert!(enc_ts.iter().all(|&t| t != usize::MAX));
        for v in 1..k {
            assert!(
                enc_ts[v] < enc_ts[parent[v].unwrap()],
                "children before parents, round {round}"
            );
        }
        let mut dec_ts = vec![usize::MAX; k];
        dec_ts[0] = 0;
        for (t, &v) in dec_trace.order.iter().enumerate() {
            assert_eq!(dec_ts[v], usize::MAX);
            dec_ts[v] = t + 1;
        }
        assert!(dec_ts.iter().all(|&t| t != usize::MAX));
        for &v in &dec_trace.order {
            assert!(dec_ts[v] > dec_ts[parent[v].unwrap()], "parents first, round {round}");
        }
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 2 must finish within 2 minutes, took {secs:.1}s");
    println!("[PASS] criterion 2: structural invariants on 1000 trees (1-2000 nodes), {secs:.1}s");
}

// ---------------------------------------------------------------------------
// Criterion 3: closed-form equation checks at 1e-9.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_closed_form_equations() {
    let tol = 1e-9;

    // Scalar mean error and per-feature vector on fixed and random inputs.
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(ndarray::array![[2.0]]);
    let xhat = tape.leaf(ndarray::array![[0.5]]);
    let (e, eps, delta) = specular::reconstruction_error_on(&mut tape, x, xhat, true).unwrap();
    assert!((tape.value(e)[(0, 0)] - 2.25).abs() < tol);
    assert!((tape.scalar_value(eps) - 2.25).abs() < tol);
    assert!((tape.value(delta)[(0, 0)] - 2.25).abs() < tol);

    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let a = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
    let b = Array2::from_shape_fn((5, 3), |_| rng.random_range(-2.0..2.0));
    let brute: f64 = a
        .iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / 15.0;
    let xa = tape.leaf(a);
    let xb = tape.leaf(b);
    let (_, eps, _) = specular::reconstruction_error_on(&mut tape, xa, xb, true).unwrap();
    assert!((tape.scalar_value(eps) - brute).abs() < 1e-12);

    // Supervised reconstruction loss.
    let z = tape.scalar(0.0);
    let l = classifier::loss_reconstruction_on(&mut tape, z, InternalLabel::benign()).unwrap();
    assert!(tape.scalar_value(l).abs() < tol);
    let ln2 = tape.scalar(2.0f64.ln());
    let l = classifier::loss_reconstruction_on(&mut tape, ln2, InternalLabel::phishing()).unwrap();
    assert!((tape.scalar_value(l) - 2.0f64.ln()).abs() < tol);
    let z = tape.scalar(0.0);
    let l = classifier::loss_reconstruction_on(&mut tape, z, InternalLabel::phishing()).unwrap();
    let clamped = tape.scalar_value(l);
    assert!(clamped.is_finite() && (clamped - 27.631).abs() < 0.01);

    // Threshold probability: exact center, closed form, monotone limit.
    assert_eq!(classifier::prob_threshold(0.37, 0.37, 1.0), 0.5);
    assert_eq!(classifier::prob_threshold(0.37, 0.37, 10.0), 0.5);
    assert!((classifier::prob_threshold(1.0 + 3.0f64.ln(), 1.0, 1.0) - 0.25).abs() < tol);
    let mut last = 1.0;
    for i in 0..100 {
        let p = classifier::prob_threshold(i as f64 * 0.3, 1.0, 10.0);
        assert!(p < last);
        last = p;
    }
    assert!(last < 1e-12);

    // Error MLP closed forms.
    let mut store = ParamStore::<f64>::new();
    let w1 = store.register("w1", Array2::zeros((4, 8)));
    let b1 = store.register("b1", Array2::zeros((1, 4)));
    let w2 = store.register("w2", Array2::zeros((1, 4)));
    let b2 = store.register("b2", Array2::zeros((1, 1)));
    let mlp = classifier::ErrorMlpIds {
        layers: vec![(w1, b1), (w2, b2)],
    };
    let mut tape = Tape::new();
    let delta = tape.zeros(1, 8);
    let p = classifier::error_mlp_on(&mut tape, &store, &mlp, delta, 0.01).unwrap();
    assert!((tape.scalar_value(p) - 0.5).abs() < tol);
    store.value_mut(b2)[(0, 0)] = 3.0f64.ln();
    let mut tape = Tape::new();
    let delta = tape.zeros(1, 8);
    let p = classifier::error_mlp_on(&mut tape, &store, &mlp, delta, 0.01).unwrap();
    assert!((tape.scalar_value(p) - 0.75).abs() < tol);

    // Binary cross entropy.
    let mut tape = Tape::<f64>::new();
    for y in [InternalLabel::benign(), InternalLabel::phishing()] {
        let p = tape.scalar(0.5);
        let l = classifier::loss_classification_on(&mut tape, p, y).unwrap();
        assert!((tape.scalar_value(l) - 2.0f64.ln()).abs() < tol);
    }
    let p = tape.scalar(0.75);
    let l = classifier::loss_classification_on(&mut tape, p, InternalLabel::benign()).unwrap();
    assert!((tape.scalar_value(l) + 0.75f64.ln()).abs() < tol);
    let p = tape.scalar(1.0 - 1e-9);
    let l = classifier::loss_classification_on(&mut tape, p, InternalLabel::benign()).unwrap();
    assert!(tape.scalar_value(l) < 2e-7);

    // Ensemble boundary and direction.
    assert_eq!(classifier::ensemble_decide(0.5, 0.5), (0, 1));
    assert_eq!(classifier::ensemble_decide(0.9, 0.8), (1, 0));
    assert_eq!(classifier::ensemble_decide(0.1, 0.3), (0, 1));

    // Multitask identity at zero weights and weight stationarity.
    let mut store = ParamStore::<f64>::new();
    let w1 = store.register("w1", Array2::zeros((1, 1)));
    let w2 = store.register("w2", Array2::zeros((1, 1)));
    let mut tape = Tape::new();
    let l1 = tape.scalar(0.9);
    let l2 = tape.scalar(1.7);
    let total = classifier::multitask_on(&mut tape, &store, &[(l1, w1), (l2, w2)]).unwrap();
    assert!((tape.scalar_value(total) - 2.6).abs() < 1e-15);

    store.value_mut(w1)[(0, 0)] = 0.9f64.ln();
    let grad_at = |store: &mut ParamStore<f64>| -> f64 {
        let mut tape = Tape::new();
        let l1 = tape.scalar(0.9);
        let l2 = tape.scalar(1.7);
        let total = classifier::multitask_on(&mut tape, store, &[(l1, w1), (l2, w2)]).unwrap();
        store.zero_grads();
        tape.backward_into(total, 1.0, store).unwrap();
        store.grad(w1)[(0, 0)]
    };
    assert!(grad_at(&mut store).abs() < tol, "dL/dw1 vanishes at w1 = ln L1");
    // Finite-difference confirmation of the analytic derivative formula.
    let h = 1e-6;
    let eval = |store: &mut ParamStore<f64>| -> f64 {
        let mut tape = Tape::new();
        let l1 = tape.scalar(0.9);
        let l2 = tape.scalar(1.7);
        let total = classifier::multitask_on(&mut tape, store, &[(l1, w1), (l2, w2)]).unwrap();
        tape.scalar_value(total)
    };
    store.value_mut(w1)[(0, 0)] = 0.25;
    let up = {
        store.value_mut(w1)[(0, 0)] = 0.25 + h;
        eval(&mut store)
    };
    let down = {
        store.value_mut(w1)[(0, 0)] = 0.25 - h;
        eval(&mut store)
    };
    store.value_mut(w1)[(0, 0)] = 0.25;
    let fd = (up - down) / (2.0 * h);
    let analytic = -0.9 * (-0.25f64).exp() + 1.0;
    assert!((fd - analytic).abs() < 1e-6);

    println!("[PASS] criterion 3: closed-form equation checks at 1e-9");
}

// ---------------------------------------------------------------------------
// Criterion 4: calibration equals the exhaustive sweep.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_calibration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA11);
    for round in 0..200 {
        let n = rng.random_range(2..=200);
        let mut eps: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        if n > 6 && round % 3 == 0 {
            // Exercise duplicate error values.
            eps[2] = eps[1];
            eps[3] = eps[1];
        }
        let mut labels: Vec<InternalLabel> = (0..n)
            .map(|_| {
                if rng.random_range(0..2) == 0 {
                    InternalLabel::benign()
                } else {
                    InternalLabel::phishing()
                }
            })
            .collect();
        labels[0] = InternalLabel::benign();
        labels[n - 1] = InternalLabel::phishing();

        let (tau, f1) = classifier::calibrate_threshold(&eps, &labels).unwrap();

        // Independent exhaustive sweep.
        let mut sorted = eps.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        sorted.dedup();
        let mut candidates = vec![sorted[0] - 1.0];
        for w in sorted.windows(2) {
            candidates.push((w[0] + w[1]) / 2.0);
        }
        candidates.push(sorted.last().unwrap() + 1.0);
        let mut best = (f64::NEG_INFINITY, 0.0f64);
        for &t in &candidates {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for (&e, &l) in eps.iter().zip(&labels) {
                match (e <= t, l.is_benign()) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    (false, false) => {}
                }
            }
            let f1 = if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            };
            if f1 > best.1 || best.0 == f64::NEG_INFINITY {
                if f1 > best.1 || best.0 == f64::NEG_INFINITY {
                    best = (t, f1);
                }
            }
        }
        assert_eq!(tau, best.0, "round {round}");
        assert_eq!(f1, best.1, "round {round}");
    }
    println!("[PASS] criterion 4: calibration matches the exhaustive sweep on 200 sets");
}

// ---------------------------------------------------------------------------
// Criterion 5: synthetic end-to-end training.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_synthetic_end_to_end() {
    let _guard = heavy_lock();
    let model = trained_model();
    assert!(
        model.train_seconds < 900.0,
        "training took {:.0}s, budget is 15 minutes",
        model.train_seconds
    );
    assert!(
        model.bundle.metadata.best_val_macro_f1 >= 0.95,
        "validation macro-F1 {}",
        model.bundle.metadata.best_val_macro_f1
    );
    assert!(model.bundle.metadata.epochs_run <= 30);
    assert!(
        model.clean.macro_f1 >= 0.95,
        "held-out macro-F1 {}",
        model.clean.macro_f1
    );
    println!(
        "[PASS] criterion 5: held-out macro-F1 {:.4} (val {:.4}), trained in {:.0}s < 900s",
        model.clean.macro_f1, model.bundle.metadata.best_val_macro_f1, model.train_seconds
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: the full model dominates every ablation variant.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_ablation_ordering() {
    let _guard = heavy_lock();
    let corpus = corpus();
    let train_pages = read_pages(&corpus.manifest("train"));
    let val_pages = read_pages(&corpus.manifest("val"));
    let test_pages = read_pages(&corpus.manifest("test"));

    // Identical shortened budget for the full model and every variant keeps
    // the directional comparison fair.
    let seeds = [1u64, 2, 3];
    let mut mean_f1 = Vec::new();
    for variant in Ablation::ALL {
        let mut sum = 0.0;
        for &seed in &seeds {
            let cfg = TrainConfig {
                seed,
                epochs: 10,
                patience: 3,
                ablation: variant,
                ..TrainConfig::default()
            };
            let bundle = train::train(&cfg, &train_pages, &val_pages).unwrap();
            let report = train::evaluate(&bundle, &test_pages, 1).unwrap();
            sum += report.macro_f1;
        }
        let mean = sum / seeds.len() as f64;
        println!("  ablation {:<24} mean F1 {:.4}", variant.name(), mean);
        mean_f1.push((variant, mean));
    }
    let full = mean_f1
        .iter()
        .find(|(v, _)| *v == Ablation::None)
        .unwrap()
        .1;
    for (variant, f1) in &mean_f1 {
        if *variant != Ablation::None {
            assert!(
                full >= *f1 - 1e-12,
                "full model ({full:.4}) must not trail {} ({f1:.4})",
                variant.name()
            );
        }
    }
    println!("[PASS] criterion 6: full model F1 {full:.4} >= all six ablation variants (3 seeds)");
}

// ---------------------------------------------------------------------------
// Criterion 7: robustness under threat-model perturbations.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_07_perturbation_robustness() {
    let _guard = heavy_lock();
    let corpus = corpus();
    let model = trained_model();

    let spec = PerturbationSpec {
        kinds: vec![
            PerturbationKind::InsertRedundant,
            PerturbationKind::ShuffleSiblings,
        ],
        intensity: 0.1,
        seed: 7,
    };
    let test_pages = read_pages(&corpus.manifest("test"));
    let perturbed: Vec<RawPage> = test_pages
        .iter()
        .enumerate()
        .map(|(i, page)| {
            let mut rng = perturb::page_rng(spec.seed, i as u64);
            let (html, _) = perturb::perturb_html(&page.html, &spec, &mut rng).unwrap();
            RawPage {
                html,
                domain: page.domain.clone(),
                label: page.label,
            }
        })
        .collect();
    let report = train::evaluate(&model.bundle, &perturbed, 1).unwrap();
    let drop = model.clean.macro_f1 - report.macro_f1;
    assert!(
        drop <= 0.15,
        "F1 dropped {drop:.4} (clean {:.4} -> perturbed {:.4}), budget is 15 points",
        model.clean.macro_f1,
        report.macro_f1
    );
    println!(
        "[PASS] criterion 7: perturbed F1 {:.4} vs clean {:.4} (drop {:.4} <= 0.15)",
        report.macro_f1, model.clean.macro_f1, drop
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: latency order-of-magnitude via the real CLI.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_latency() {
    let _guard = heavy_lock();
    let model = trained_model();
    let dir = tempfile::tempdir().unwrap();

    // Large synthetic pages around 1,000 nodes, plus small ones so the
    // scaling comparison below has two populated buckets.
    let spec = SynthSpec {
        templates: 4,
        pages_per_template: 30,
        noise: 0.3,
        seed: 777,
        node_scale: 5.0,
    };
    let summary = synth::generate(dir.path(), &spec, None).unwrap();
    let mut kept_lines = Vec::new();
    for line in std::fs::read_to_string(&summary.manifests[0]).unwrap().lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        let html = std::fs::read(dir.path().join(entry["html_path"].as_str().unwrap())).unwrap();
        let nodes = ingest::parse_html(&html).unwrap().len();
        if (500..2000).contains(&nodes) {
            kept_lines.push(line.to_string());
        }
    }
    assert!(
        kept_lines.len() >= 30,
        "need enough ~1000-node pages, got {}",
        kept_lines.len()
    );
    let small_dir = dir.path().join("small");
    let small_spec = SynthSpec {
        templates: 4,
        pages_per_template: 10,
        noise: 0.3,
        seed: 778,
        node_scale: 1.0,
    };
    let small = synth::generate(&small_dir, &small_spec, None).unwrap();
    for line in std::fs::read_to_string(&small.manifests[0]).unwrap().lines() {
        let entry: serde_json::Value = serde_json::from_str(line).unwrap();
        let rel = entry["html_path"].as_str().unwrap();
        let mut patched = entry.clone();
        patched["html_path"] = serde_json::Value::String(format!("small/{rel}"));
        kept_lines.push(patched.to_string());
    }
    let bench_manifest = dir.path().join("bench.jsonl");
    std::fs::write(&bench_manifest, kept_lines.join("\n") + "\n").unwrap();
    let model_path = dir.path().join("bench.bundle");
    bundle::save_bundle(&model.bundle, &model_path).unwrap();

    let out = std::process::Command::new(env!("CARGO_BIN_EXE_specnet"))
        .args([
            "bench",
            "--model",
            model_path.to_str().unwrap(),
            "--manifest",
            bench_manifest.to_str().unwrap(),
            "--quiet",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let bucket = summary["buckets"]
        .as_array()
        .unwrap()
        .iter()
        .find(|b| b["nodes"] == "500-2000")
        .expect("the 500-2000 node bucket exists");
    let p50 = bucket["latency_ms_p50"].as_f64().unwrap();
    assert!(
        p50 <= 100.0,
        "median end-to-end latency {p50:.1} ms exceeds the 100 ms bound"
    );

    // Scaling sanity: cost per node must not grow faster than linearly
    // (small log factors from pooling's sort are allowed for).
    let small_bucket = summary["buckets"]
        .as_array()
        .unwrap()
        .iter()
        .find(|b| b["nodes"] == "<500")
        .expect("the <500 bucket exists");
    let small_mean = small_bucket["latency_ms_mean"].as_f64().unwrap();
    let big_mean = bucket["latency_ms_mean"].as_f64().unwrap();
    // Bucket node midpoints are ~150 vs ~1000: a linear-in-N pipeline may
    // grow by the node ratio (~7x) plus slack; superlinear growth would
    // blow far past it.
    assert!(
        big_mean <= small_mean * 7.0 * 3.0,
        "latency scaling looks superlinear: {small_mean:.2} ms -> {big_mean:.2} ms"
    );
    println!(
        "[PASS] criterion 8: median latency {p50:.2} ms on {} pages of 500-2000 nodes (<= 100 ms); \
         scaling {small_mean:.2} ms @<500 -> {big_mean:.2} ms @500-2000",
        bucket["pages"]
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: determinism and persistence.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_determinism_and_persistence() {
    let _guard = heavy_lock();
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        templates: 2,
        pages_per_template: 30,
        noise: 0.3,
        seed: 99,
        node_scale: 1.0,
    };
    let splits = vec![("train".to_string(), 20usize), ("val".to_string(), 8)];
    synth::generate(dir.path(), &spec, Some(&splits)).unwrap();
    let train_pages = read_pages(&dir.path().join("train.jsonl"));
    let val_pages = read_pages(&dir.path().join("val.jsonl"));
    let cfg = TrainConfig {
        seed: 9,
        epochs: 4,
        patience: 2,
        ..TrainConfig::default()
    };

    // Two identically seeded runs produce bitwise-identical bundles.
    let b1 = train::train(&cfg, &train_pages, &val_pages).unwrap();
    let b2 = train::train(&cfg, &train_pages, &val_pages).unwrap();
    let bytes1 = bundle::bundle_to_bytes(&b1).unwrap();
    let bytes2 = bundle::bundle_to_bytes(&b2).unwrap();
    assert_eq!(bytes1, bytes2, "training is not bitwise deterministic");

    // Round-trip is bit-exact.
    let path = dir.path().join("model.bundle");
    bundle::save_bundle(&b1, &path).unwrap();
    let loaded = bundle::load_bundle(&path).unwrap();
    assert_eq!(bytes1, bundle::bundle_to_bytes(&loaded).unwrap());

    // Batch-vs-single prediction invariance on 100 random pages.
    let model = trained_model();
    let corpus = corpus();
    let pages: Vec<RawPage> = read_pages(&corpus.manifest("test"))
        .into_iter()
        .take(100)
        .collect();
    assert_eq!(pages.len(), 100);
    let singles: Vec<_> = pages
        .iter()
        .map(|p| train::predict_page(&model.bundle, p).unwrap())
        .collect();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let batched: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        pages
            .par_iter()
            .map(|p| train::predict_page(&model.bundle, p).unwrap())
            .collect()
    });
    for (a, b) in singles.iter().zip(&batched) {
        assert_eq!(a.verdict, b.verdict);
        for (x, y) in [
            (a.prob1, b.prob1),
            (a.prob2, b.prob2),
            (a.epsilon, b.epsilon),
        ] {
            match (x, y) {
                (Some(x), Some(y)) => assert!((x - y).abs() < 1e-6),
                (None, None) => {}
                other => panic!("mismatched presence {other:?}"),
            }
        }
    }
    println!("[PASS] criterion 9: bitwise-identical seeded runs, bit-exact roundtrip, batch invariance at 1e-6");
}

// ---------------------------------------------------------------------------
// Criterion 10: ingestion guarantees.
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_ingestion_guarantees() {
    // Sentinel erasure over 500 fuzzed documents.
    let mut rng = ChaCha8Rng::seed_from_u64(0x1265);
    let tags = ["div", "p", "a", "span", "li", "ul", "table", "em", "input", "x-gadget"];
    let attrs = ["href", "class", "id", "data-x", "onclick", "value"];
    for round in 0..500 {
        let sentinel = format!("ZSENTQ{round}W");
        let mut html = Vec::new();
        for _ in 0..rng.random_range(2..50) {
            match rng.random_range(0..6) {
                0 => {
                    let t = tags[rng.random_range(0..tags.len())];
                    html.extend_from_slice(format!("<{t}").as_bytes());
                    for _ in 0..rng.random_range(0..3) {
                        let a = attrs[rng.random_range(0..attrs.len())];
                        html.extend_from_slice(format!(" {a}='{sentinel}'").as_bytes());
                    }
                    html.push(b'>');
                }
                1 => {
                    let t = tags[rng.random_range(0..tags.len())];
                    html.extend_from_slice(format!("</{t}>").as_bytes());
                }
                2 => html.extend_from_slice(format!(" {sentinel} ").as_bytes()),
                3 => html.extend_from_slice(format!("<!--{sentinel}-->").as_bytes()),
                4 => html.extend_from_slice(
                    format!("<script>var x='{sentinel}';</script>").as_bytes(),
                ),
                _ => html.extend_from_slice(format!("<textarea>{sentinel}</textarea>").as_bytes()),
            }
        }
        let tree = ingest::parse_html(&html).unwrap();
        tree.validate().unwrap();
        let needle = sentinel.to_ascii_lowercase();
        for node in tree.nodes() {
            assert!(
                !node.token.contains(&needle),
                "round {round}: content leaked into token {:?}",
                node.token
            );
        }
    }

    // The parser survives 10,000 arbitrary byte inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(0xF422);
    for _ in 0..10_000 {
        let len = rng.random_range(0..400);
        let bytes: Vec<u8> = (0..len).map(|_| rng.random_range(0..=255u32) as u8).collect();
        let tree = ingest::parse_html(&bytes).unwrap();
        debug_assert!(tree.validate().is_ok());
    }

    // Model-facing invariant: attribute/tag decomposition stays intact on a
    // real page end to end.
    let page = RawPage {
        html: b"<html><body><a href=\"SECRETVAL\">SECRETTEXT</a></body></html>".to_vec(),
        domain: Some("ok.example".into()),
        label: None,
    };
    let cfg = TrainConfig::default();
    let prepared = model::prepare_page(&page, &cfg).unwrap();
    for node in prepared.tree.nodes() {
        assert!(!node.token.contains("secret"));
        assert!(!node.token.contains("SECRET"));
    }

    println!("[PASS] criterion 10: sentinel erasure on 500 fuzzed docs, no panics on 10k random inputs");
}
