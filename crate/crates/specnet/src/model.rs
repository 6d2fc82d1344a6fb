//! Model assembly: parameter registration in canonical order and the
//! per-sample forward pass, including every ablation variant's wiring.

use std::rc::Rc;

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{self, GcnStackIds};
use crate::classifier::{self, ErrorMlpIds, InternalLabel};
use crate::config::{Ablation, TrainConfig};
use crate::embed::{self, Charset, DomainEncoderIds, EmbeddingTable, TokenVocabulary};
use crate::error::{Error, Result};
use crate::ingest::{self, DomTree, RawPage};
use crate::nn::{ParamId, ParamStore, Scalar, Tape, Var};
use crate::specular;

/// Parameter handles for every learned component, registered in a fixed
/// canonical order (also the serialization order).
#[derive(Clone, Debug)]
pub struct ModelIds {
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
    pub gcn: GcnStackIds,
    pub pool_p: ParamId,
    pub enc_w: ParamId,
    pub enc_b: ParamId,
    pub dec_w: ParamId,
    pub dec_b: ParamId,
    pub mlp: ErrorMlpIds,
    pub loss_w1: ParamId,
    pub loss_w2: ParamId,
    pub domain: Option<DomainEncoderIds>,
}

/// Register all parameters with seeded initial values.
pub fn init_model<T: Scalar>(cfg: &TrainConfig, charset: &Charset) -> (ParamStore<T>, ModelIds) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut store = ParamStore::new();
    let ids = register_model(&mut store, cfg, charset, &mut |r, c, store, name| {
        let bound = (6.0 / c as f64).sqrt();
        store.register(
            name,
            Array2::from_shape_fn((r, c), |_| T::from_f64(rng.random_range(-bound..bound))),
        )
    });
    (store, ids)
}

/// Register all parameters with zero values (bundle loading fills them in).
pub fn register_model_shapes<T: Scalar>(
    cfg: &TrainConfig,
    charset: &Charset,
) -> (ParamStore<T>, ModelIds) {
    let mut store = ParamStore::new();
    let ids = register_model(&mut store, cfg, charset, &mut |r, c, store, name| {
        store.register(name, Array2::zeros((r, c)))
    });
    (store, ids)
}

/// Allocator for freshly initialized weight tensors during registration.
type WeightInit<'a, T> = &'a mut dyn FnMut(usize, usize, &mut ParamStore<T>, String) -> ParamId;

fn register_model<T: Scalar>(
    store: &mut ParamStore<T>,
    cfg: &TrainConfig,
    charset: &Charset,
    fresh: WeightInit<'_, T>,
) -> ModelIds {
    let f = cfg.feature_dim;
    let ln_gamma = store.register("ln.gamma", Array2::from_elem((1, f), T::one()));
    let ln_beta = store.register("ln.beta", Array2::zeros((1, f)));

    let gcn_layers = backbone::gcn_layer_dims(f, cfg.gcn_hidden, cfg.gcn_layers)
        .into_iter()
        .enumerate()
        .map(|(i, (d_in, d_out))| {
            let w = fresh(d_out, d_in, store, format!("gcn{i}.w"));
            let b = store.register(format!("gcn{i}.b"), Array2::zeros((1, d_out)));
            (w, b)
        })
        .collect();
    let gcn = GcnStackIds { layers: gcn_layers };

    let pool_p = fresh(1, f, store, "pool.p".into());

    let enc_w = fresh(f, 2 * f, store, "enc.w".into());
    let enc_b = store.register("enc.b", Array2::zeros((1, f)));
    let dec_w = fresh(f, 2 * f, store, "dec.w".into());
    let dec_b = store.register("dec.b", Array2::zeros((1, f)));

    let mut dims = vec![f];
    dims.extend_from_slice(&cfg.mlp_hidden);
    dims.push(1);
    let mlp_layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            let w = fresh(d[1], d[0], store, format!("mlp{i}.w"));
            let b = store.register(format!("mlp{i}.b"), Array2::zeros((1, d[1])));
            (w, b)
        })
        .collect();
    let mlp = ErrorMlpIds { layers: mlp_layers };

    let loss_w1 = store.register("loss.w1", Array2::zeros((1, 1)));
    let loss_w2 = store.register("loss.w2", Array2::zeros((1, 1)));

    let domain = cfg.domain_enabled().then(|| {
        let table = fresh(charset.size(), f, store, "domain.char_table".into());
        let layers = (0..cfg.lstm_layers)
            .map(|l| {
                let w = fresh(4 * f, 2 * f, store, format!("domain.lstm{l}.w"));
                let mut bias = Array2::zeros((1, 4 * f));
                for j in f..2 * f {
                    bias[(0, j)] = T::one();
                }
                let b = store.register(format!("domain.lstm{l}.b"), bias);
                (w, b)
            })
            .collect();
        DomainEncoderIds {
            char_table: table,
            layers,
        }
    });

    ModelIds {
        ln_gamma,
        ln_beta,
        gcn,
        pool_p,
        enc_w,
        enc_b,
        dec_w,
        dec_b,
        mlp,
        loss_w1,
        loss_w2,
        domain,
    }
}

/// A parsed page ready for the model.
#[derive(Clone, Debug)]
pub struct PreparedPage {
    pub tree: DomTree,
    pub label: Option<InternalLabel>,
    pub node_count: usize,
}

/// Parse a raw page and attach/strip the domain node per config. Raises
/// `MissingDomain` when domain features are enabled but the page has none.
pub fn prepare_page(page: &RawPage, cfg: &TrainConfig) -> Result<PreparedPage> {
    let mut tree = ingest::parse_html_capped(&page.html, cfg.max_nodes)?;
    if cfg.domain_enabled() {
        match &page.domain {
            Some(domain) => ingest::attach_domain_node(&mut tree, domain)?,
            None => return Err(Error::MissingDomain),
        }
    }
    let node_count = tree.len();
    Ok(PreparedPage {
        tree,
        label: page.label.map(InternalLabel::from_external),
        node_count,
    })
}

/// Tape handles produced by one forward pass.
pub struct SampleForward {
    pub eps: Option<Var>,
    pub delta: Option<Var>,
    pub prob2: Option<Var>,
    pub loss: Option<Var>,
    /// Nodes surviving pooling (0 when the variant skips pooling).
    pub pooled_nodes: usize,
}

/// Record the configured pipeline for one tree, with losses when a label is
/// supplied.
#[allow(clippy::too_many_arguments)]
pub fn forward_sample<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &ModelIds,
    vocab: &TokenVocabulary,
    table: &EmbeddingTable,
    charset: &Charset,
    cfg: &TrainConfig,
    tree: &DomTree,
    label: Option<InternalLabel>,
) -> Result<SampleForward> {
    let slope = T::from_f64(cfg.leaky_slope);
    // Config-driven drop: a tree carrying a domain node under a
    // domain-disabled config is featurized without it.
    let stripped;
    let tree = if !cfg.domain_enabled() && tree.domain_node().is_some() {
        stripped = ingest::strip_domain_node(tree);
        &stripped
    } else {
        tree
    };
    let x0 = embed::featurize_on(tape, store, vocab, table, ids.domain.as_ref(), charset, tree)?;
    let gamma = tape.param(store, ids.ln_gamma);
    let beta = tape.param(store, ids.ln_beta);
    let x1 = tape.layer_norm(x0, gamma, beta)?;

    let refined = if cfg.ablation == Ablation::NoGcn {
        x1
    } else {
        let adj = Rc::new(backbone::normalized_adjacency::<T>(tree.parents()));
        backbone::gcn_stack_on(tape, store, &ids.gcn, x1, &adj, slope)?
    };

    // Variants that skip the autoencoder entirely.
    if cfg.ablation == Ablation::NoAutoencoder {
        let pooled = tape.mean_rows(refined);
        let prob2 = classifier::error_mlp_on(tape, store, &ids.mlp, pooled, slope)?;
        let loss = match label {
            None => None,
            Some(y) => {
                let l2 = classifier::loss_classification_on(tape, prob2, y)?;
                Some(classifier::multitask_on(tape, store, &[(l2, ids.loss_w2)])?)
            }
        };
        return Ok(SampleForward {
            eps: None,
            delta: None,
            prob2: Some(prob2),
            loss,
            pooled_nodes: 0,
        });
    }

    let (pooled, gated) = backbone::topk_pool_on(
        tape,
        store,
        ids.pool_p,
        refined,
        tree.parents(),
        cfg.pool_ratio,
    )?;
    let graph = specular::build_mirror(&pooled.parent, &pooled.depth);
    let (root_state, _, _) =
        specular::encode_on(tape, store, &graph, gated, ids.enc_w, ids.enc_b, slope)?;

    if cfg.ablation == Ablation::NoDecoder {
        let prob2 = classifier::error_mlp_on(tape, store, &ids.mlp, root_state, slope)?;
        let loss = match label {
            None => None,
            Some(y) => {
                let l2 = classifier::loss_classification_on(tape, prob2, y)?;
                Some(classifier::multitask_on(tape, store, &[(l2, ids.loss_w2)])?)
            }
        };
        return Ok(SampleForward {
            eps: None,
            delta: None,
            prob2: Some(prob2),
            loss,
            pooled_nodes: pooled.len(),
        });
    }

    let (xhat, _) = specular::decode_on(
        tape, store, &graph, gated, root_state, ids.dec_w, ids.dec_b, slope,
    )?;
    let (_, eps, delta) =
        specular::reconstruction_error_on(tape, gated, xhat, cfg.root_in_error)?;

    let prob2 = if cfg.ablation.uses_prob2() {
        Some(classifier::error_mlp_on(tape, store, &ids.mlp, delta, slope)?)
    } else {
        None
    };

    let loss = match label {
        None => None,
        Some(y) => {
            let mut terms = Vec::new();
            if cfg.ablation.trains_l1() {
                let l1 = classifier::loss_reconstruction_on(tape, eps, y)?;
                terms.push((l1, ids.loss_w1));
            }
            if cfg.ablation.trains_l2() {
                let p2 = prob2.expect("prob2 exists whenever L2 trains");
                let l2 = classifier::loss_classification_on(tape, p2, y)?;
                terms.push((l2, ids.loss_w2));
            }
            Some(classifier::multitask_on(tape, store, &terms)?)
        }
    };

    Ok(SampleForward {
        eps: Some(eps),
        delta: Some(delta),
        prob2,
        loss,
        pooled_nodes: pooled.len(),
    })
}

/// Inference output for one page.
#[derive(Clone, Debug)]
pub struct InferenceOutput {
    pub epsilon: Option<f64>,
    /// Per-feature error summary (the error-MLP input), when the variant
    /// reconstructs.
    pub delta: Option<Vec<f32>>,
    pub prob1: Option<f64>,
    pub prob2: Option<f64>,
    /// Internal prediction (1 = benign).
    pub internal: u8,
    /// External verdict (0 = benign, 1 = phishing).
    pub verdict: u8,
}

/// Run the forward pass in inference mode and apply the variant's decision
/// rule with the calibrated threshold.
#[allow(clippy::too_many_arguments)]
pub fn infer_tree(
    store: &ParamStore<f32>,
    ids: &ModelIds,
    vocab: &TokenVocabulary,
    table: &EmbeddingTable,
    charset: &Charset,
    cfg: &TrainConfig,
    tau: f64,
    tree: &DomTree,
) -> Result<InferenceOutput> {
    let mut tape = Tape::new();
    let fwd = forward_sample(&mut tape, store, ids, vocab, table, charset, cfg, tree, None)?;
    let epsilon = fwd.eps.map(|e| tape.scalar_value(e) as f64);
    let delta = fwd.delta.map(|d| tape.value(d).iter().copied().collect());
    let prob2 = fwd.prob2.map(|p| tape.scalar_value(p) as f64);
    let prob1 = if cfg.ablation.uses_prob1() {
        Some(classifier::prob_threshold(
            epsilon.expect("prob1 requires a reconstruction"),
            tau,
            cfg.effective_beta(),
        ))
    } else {
        None
    };
    let (internal, verdict) = match (cfg.ablation.uses_prob1(), cfg.ablation.uses_prob2()) {
        (true, true) => classifier::ensemble_decide(
            prob1.expect("checked"),
            prob2.expect("prob2 active"),
        ),
        (true, false) => classifier::single_prob_decide(prob1.expect("checked")),
        (false, true) => classifier::single_prob_decide(prob2.expect("checked")),
        (false, false) => unreachable!("every variant uses at least one probability"),
    };
    Ok(InferenceOutput {
        epsilon,
        delta,
        prob1,
        prob2,
        internal,
        verdict,
    })
}

/// Per-page prediction record (one JSON object per line in predict output).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub epsilon: Option<f64>,
    pub prob1: Option<f64>,
    pub prob2: Option<f64>,
    pub verdict: u8,
    pub latency_ms: f64,
}
