//! Skip-gram with negative sampling over tag/attribute "sentences".
//!
//! Each tag node forms one sentence: the tag token followed by its attribute
//! tokens in child order. Sentences are short, so the context window spans
//! the whole sentence. Training is single-threaded and seeded for bitwise
//! reproducibility.

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EmbeddingTable, TokenVocabulary};
use crate::ingest::{DomTree, NodeKind};

#[derive(Clone, Copy, Debug)]
pub struct W2vConfig {
    pub dim: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for W2vConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 5,
            negatives: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

/// Combined id space: tags, unk_tag, attributes, unk_attr.
fn sentence_ids(tree: &DomTree, vocab: &TokenVocabulary) -> Vec<Vec<usize>> {
    let attr_offset = vocab.tag_rows();
    let mut sentences = Vec::new();
    for node in tree.nodes() {
        if node.kind != NodeKind::Tag {
            continue;
        }
        let mut sentence = vec![vocab.tag_index(&node.token)];
        for &c in &node.children {
            if tree.node(c).kind == NodeKind::Attr {
                sentence.push(attr_offset + vocab.attr_index(&tree.node(c).token));
            }
        }
        sentences.push(sentence);
    }
    sentences
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Train skip-gram embeddings; deterministic under a fixed seed.
///
/// A vocabulary with fewer than two real tokens cannot form co-occurrence
/// pairs; the table falls back to its random initialization (still finite
/// and fully usable) with a warning.
pub fn train_embeddings(
    corpus: &[DomTree],
    vocab: &TokenVocabulary,
    cfg: &W2vConfig,
) -> EmbeddingTable {
    let v = vocab.tag_rows() + vocab.attr_rows();
    let dim = cfg.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Input vectors: small uniform init (word2vec convention); output zeros.
    // The stored table is input + output, so first-order co-occurrence
    // (which lives in the input/output cross products) survives into the
    // cosine geometry of the final vectors.
    let bound = 0.5 / dim as f64;
    let mut input = Array2::from_shape_fn((v, dim), |_| rng.random_range(-bound..bound));
    let mut output = Array2::<f64>::zeros((v, dim));

    let sentences: Vec<Vec<usize>> = corpus
        .iter()
        .flat_map(|t| sentence_ids(t, vocab))
        .collect();

    if vocab.size() < 2 {
        log::warn!(
            "degenerate vocabulary ({} tokens): returning the fallback random-normal table",
            vocab.size()
        );
        return finish(&input, &output, vocab, dim);
    }

    // Unigram^(3/4) negative-sampling distribution over observed tokens.
    let mut counts = vec![0f64; v];
    for s in &sentences {
        for &id in s {
            counts[id] += 1.0;
        }
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c.powf(0.75)).collect();
    let total_weight: f64 = weights.iter().sum();
    let mut cumulative = Vec::with_capacity(v);
    let mut acc = 0.0;
    for w in &weights {
        acc += w;
        cumulative.push(acc);
    }
    let draw_negative = |rng: &mut ChaCha8Rng| -> usize {
        let u = rng.random_range(0.0..total_weight);
        cumulative.partition_point(|&c| c <= u).min(v - 1)
    };

    let pairs_per_epoch: usize = sentences.iter().map(|s| s.len() * (s.len() - 1)).sum();
    let total_pairs = (pairs_per_epoch * cfg.epochs).max(1);
    let mut processed = 0usize;

    let mut hidden_grad = vec![0f64; dim];
    for _ in 0..cfg.epochs {
        for sentence in &sentences {
            for (i, &center) in sentence.iter().enumerate() {
                for (j, &context) in sentence.iter().enumerate() {
                    if i == j {
                        continue;
                    }
                    let lr = cfg.learning_rate
                        * (1.0 - processed as f64 / total_pairs as f64).max(1e-4);
                    processed += 1;
                    hidden_grad.iter_mut().for_each(|g| *g = 0.0);
                    for k in 0..=cfg.negatives {
                        let (target, label) = if k == 0 {
                            (context, 1.0)
                        } else {
                            let neg = draw_negative(&mut rng);
                            if neg == context {
                                continue;
                            }
                            (neg, 0.0)
                        };
                        let mut dot = 0.0;
                        for d in 0..dim {
                            dot += input[(center, d)] * output[(target, d)];
                        }
                        let err = (sigmoid(dot) - label) * lr;
                        for d in 0..dim {
                            hidden_grad[d] += err * output[(target, d)];
                            output[(target, d)] -= err * input[(center, d)];
                        }
                    }
                    for d in 0..dim {
                        input[(center, d)] -= hidden_grad[d];
                    }
                }
            }
        }
    }
    finish(&input, &output, vocab, dim)
}

fn finish(
    input: &Array2<f64>,
    output: &Array2<f64>,
    vocab: &TokenVocabulary,
    dim: usize,
) -> EmbeddingTable {
    let tag_rows = vocab.tag_rows();
    let attr_rows = vocab.attr_rows();
    let at = |r: usize, c: usize| (input[(r, c)] + output[(r, c)]) as f32;
    let tag_vectors = Array2::from_shape_fn((tag_rows, dim), |(r, c)| at(r, c));
    let attr_vectors = Array2::from_shape_fn((attr_rows, dim), |(r, c)| at(tag_rows + r, c));
    EmbeddingTable {
        dim,
        tag_vectors,
        attr_vectors,
    }
}
