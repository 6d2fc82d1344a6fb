//! Node features: Word2Vec-style embeddings for tag/attribute tokens and a
//! character-level recurrent encoder for domains.
//!
//! The vocabulary is the intersection of tokens observed in the training
//! corpus with the shipped HTML-standard lists; everything else resolves to
//! kind-specific unknown tokens at lookup time.

pub mod domain;
mod word2vec;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::ingest::{DomTree, NodeKind};
use crate::nn::{Scalar, Tape, Var};
pub use domain::{encode_domain, encode_domain_on, init_domain_encoder, Charset, DomainEncoderIds};
pub use word2vec::{train_embeddings, W2vConfig};

pub const STANDARD_LIST_VERSION: &str = "v1";

const ELEMENTS_V1: &str = include_str!("../../data/html_elements_v1.txt");
const ATTRIBUTES_V1: &str = include_str!("../../data/html_attributes_v1.txt");

fn parse_list(data: &'static str) -> BTreeSet<&'static str> {
    data.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .collect()
}

/// Shipped HTML-standard element names (frozen, versioned).
pub fn standard_elements() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| parse_list(ELEMENTS_V1))
}

/// Shipped HTML-standard attribute names (frozen, versioned).
pub fn standard_attributes() -> &'static BTreeSet<&'static str> {
    static SET: OnceLock<BTreeSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| parse_list(ATTRIBUTES_V1))
}

/// Kind-qualified token tables plus reserved unknown tokens.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TokenVocabulary {
    /// Sorted in-vocabulary tag tokens.
    pub tag_tokens: Vec<String>,
    /// Sorted in-vocabulary attribute tokens.
    pub attr_tokens: Vec<String>,
    pub standard_list_version: String,
}

impl TokenVocabulary {
    /// Row index for a tag token; out-of-vocabulary maps to the unknown row.
    pub fn tag_index(&self, token: &str) -> usize {
        self.tag_tokens
            .binary_search_by(|t| t.as_str().cmp(token))
            .unwrap_or(self.tag_tokens.len())
    }

    pub fn attr_index(&self, token: &str) -> usize {
        self.attr_tokens
            .binary_search_by(|t| t.as_str().cmp(token))
            .unwrap_or(self.attr_tokens.len())
    }

    pub fn unk_tag_index(&self) -> usize {
        self.tag_tokens.len()
    }

    pub fn unk_attr_index(&self) -> usize {
        self.attr_tokens.len()
    }

    /// Rows in the tag table (vocabulary plus the unknown token).
    pub fn tag_rows(&self) -> usize {
        self.tag_tokens.len() + 1
    }

    pub fn attr_rows(&self) -> usize {
        self.attr_tokens.len() + 1
    }

    /// In-vocabulary size excluding the unknown tokens.
    pub fn size(&self) -> usize {
        self.tag_tokens.len() + self.attr_tokens.len()
    }
}

/// Vocabulary = (tokens observed in the corpus) ∩ (standard lists).
pub fn build_vocabulary<'a, I>(corpus: I) -> Result<TokenVocabulary>
where
    I: IntoIterator<Item = &'a DomTree>,
{
    let mut tags = BTreeSet::new();
    let mut attrs = BTreeSet::new();
    let mut any = false;
    for tree in corpus {
        any = true;
        for node in tree.nodes() {
            match node.kind {
                NodeKind::Tag => {
                    if standard_elements().contains(node.token.as_str()) {
                        tags.insert(node.token.clone());
                    }
                }
                NodeKind::Attr => {
                    if standard_attributes().contains(node.token.as_str()) {
                        attrs.insert(node.token.clone());
                    }
                }
                NodeKind::Domain => {}
            }
        }
    }
    if !any {
        return Err(Error::EmptyCorpus);
    }
    Ok(TokenVocabulary {
        tag_tokens: tags.into_iter().collect(),
        attr_tokens: attrs.into_iter().collect(),
        standard_list_version: STANDARD_LIST_VERSION.to_string(),
    })
}

/// Trained token vectors; last row of each table is the unknown token.
#[derive(Clone, Debug)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub tag_vectors: Array2<f32>,
    pub attr_vectors: Array2<f32>,
}

impl EmbeddingTable {
    pub fn lookup_tag(&self, vocab: &TokenVocabulary, token: &str) -> ndarray::ArrayView1<'_, f32> {
        self.tag_vectors.row(vocab.tag_index(token))
    }

    pub fn lookup_attr(&self, vocab: &TokenVocabulary, token: &str) -> ndarray::ArrayView1<'_, f32> {
        self.attr_vectors.row(vocab.attr_index(token))
    }
}

/// Record the per-node feature matrix for a tree on the tape.
///
/// Tag and attribute rows are frozen lookups; the domain node's row is the
/// recurrent encoder output and carries gradients. Trees with a domain node
/// require `domain_encoder`; strip the node first when domain features are
/// disabled.
pub fn featurize_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &crate::nn::ParamStore<T>,
    vocab: &TokenVocabulary,
    table: &EmbeddingTable,
    domain_encoder: Option<&DomainEncoderIds>,
    charset: &Charset,
    tree: &DomTree,
) -> Result<Var> {
    let n = tree.len();
    let f = table.dim;
    let mut base = Array2::zeros((n, f));
    let mut domain_row: Option<(usize, &str)> = None;
    for (i, node) in tree.nodes().iter().enumerate() {
        match node.kind {
            NodeKind::Tag => {
                let row = table.lookup_tag(vocab, &node.token);
                for j in 0..f {
                    base[(i, j)] = T::from_f64(row[j] as f64);
                }
            }
            NodeKind::Attr => {
                let row = table.lookup_attr(vocab, &node.token);
                for j in 0..f {
                    base[(i, j)] = T::from_f64(row[j] as f64);
                }
            }
            NodeKind::Domain => domain_row = Some((i, node.token.as_str())),
        }
    }
    let x = tape.leaf(base);
    match domain_row {
        None => Ok(x),
        Some((idx, domain)) => {
            let enc = domain_encoder.ok_or_else(|| {
                Error::Config("tree carries a domain node but no domain encoder is configured".into())
            })?;
            let row = encode_domain_on(tape, store, enc, charset, domain)?;
            tape.set_row(x, row, idx)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest;

    #[test]
    fn vocabulary_is_corpus_intersect_standard() {
        let t1 = ingest::parse_html(b"<html><body><div><a href=x></a></div></body></html>").unwrap();
        let t2 = ingest::parse_html(b"<html><body><x-fake-widget once=1></x-fake-widget></body></html>")
            .unwrap();
        let vocab = build_vocabulary([&t1, &t2]).unwrap();
        assert_eq!(vocab.tag_tokens, vec!["a", "body", "div", "html"]);
        assert_eq!(vocab.attr_tokens, vec!["href"]);
        // Custom tag resolves to the unknown row.
        assert_eq!(vocab.tag_index("x-fake-widget"), vocab.unk_tag_index());
        // Standard token never observed is also unknown.
        assert!(standard_elements().contains("table"));
        assert_eq!(vocab.tag_index("table"), vocab.unk_tag_index());
        // Lookups are kind-qualified: `a` as an attribute is unknown.
        assert_eq!(vocab.attr_index("a"), vocab.unk_attr_index());
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let err = build_vocabulary([]).unwrap_err();
        assert!(matches!(err, Error::EmptyCorpus));
    }

    #[test]
    fn featurize_composes_lookups_and_domain_encoder() {
        use crate::nn::{ParamStore, Tape};
        let mut tree = ingest::parse_html(b"<html><body><a href=x></a></body></html>").unwrap();
        ingest::attach_domain_node(&mut tree, "login-example.com").unwrap();
        assert_eq!(tree.len(), 5);

        let vocab = build_vocabulary([&tree]).unwrap();
        let table = train_embeddings(
            std::slice::from_ref(&tree),
            &vocab,
            &W2vConfig {
                dim: 32,
                ..Default::default()
            },
        );
        let charset = Charset::v1();
        let mut store = ParamStore::<f32>::new();
        let enc = domain::random_encoder(&mut store, &charset, 32, 1, 4);

        let mut tape = Tape::new();
        let x = featurize_on(&mut tape, &store, &vocab, &table, Some(&enc), &charset, &tree)
            .unwrap();
        assert_eq!(tape.value(x).dim(), (5, 32));
        // The domain node's row is exactly the recurrent encoder output.
        let domain_idx = tree.domain_node().unwrap();
        let expected = encode_domain(&store, &enc, &charset, "login-example.com").unwrap();
        for j in 0..32 {
            assert_eq!(tape.value(x)[(domain_idx, j)], expected[(0, j)]);
        }

        // Domain features disabled: the node is dropped before featurization.
        let stripped = ingest::strip_domain_node(&tree);
        let mut tape = Tape::new();
        let x = featurize_on(&mut tape, &store, &vocab, &table, None, &charset, &stripped).unwrap();
        assert_eq!(tape.value(x).dim(), (4, 32));

        // Out-of-vocabulary tag rows equal the unknown-tag vector exactly.
        let mut custom = ingest::DomTree::new_root("html");
        custom.add_element(0, "x-fake-widget", &[]);
        let mut tape = Tape::new();
        let x = featurize_on(&mut tape, &store, &vocab, &table, None, &charset, &custom).unwrap();
        let unk = table.tag_vectors.row(vocab.unk_tag_index());
        for j in 0..32 {
            assert_eq!(tape.value(x)[(1, j)], unk[j]);
        }
    }
}
