//! Threat-model HTML perturbations: sibling shuffling, redundant container
//! insertion, and subtree wrapping. Text content and attribute values pass
//! through untouched (the visual-fidelity proxy), labels carry through, and
//! output is fully determined by (input, spec, seed).

use rand::seq::SliceRandom;
use rand::RngExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::document::{DocData, DocNode, Document};
use crate::ingest::{self, DEFAULT_MAX_NODES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PerturbationKind {
    ShuffleSiblings,
    InsertRedundant,
    WrapSubtree,
}

impl PerturbationKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "shuffle_siblings" => Ok(Self::ShuffleSiblings),
            "insert_redundant" => Ok(Self::InsertRedundant),
            "wrap_subtree" => Ok(Self::WrapSubtree),
            other => Err(Error::Config(format!("unknown perturbation kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::ShuffleSiblings => "shuffle_siblings",
            Self::InsertRedundant => "insert_redundant",
            Self::WrapSubtree => "wrap_subtree",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PerturbationSpec {
    /// Kinds applied in order with one shared random stream.
    pub kinds: Vec<PerturbationKind>,
    /// Fraction of eligible sites perturbed, in [0, 1].
    pub intensity: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.kinds.is_empty() {
            return Err(Error::Config("at least one perturbation kind required".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::Config("intensity must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PerturbationLog {
    pub shuffled_sites: usize,
    pub insertions: usize,
    pub wrapped: usize,
}

/// Containers that can safely host an injected block element.
const SAFE_CONTAINERS: [&str; 15] = [
    "body", "div", "section", "article", "main", "form", "fieldset", "header", "footer", "nav",
    "aside", "p", "li", "td", "th",
];

const FILLER_TAGS: [&str; 3] = ["div", "span", "section"];

fn element_ids(doc: &Document) -> Vec<usize> {
    (0..doc.nodes.len()).filter(|&i| doc.is_element(i)).collect()
}

/// Deterministic choice of `round(intensity * eligible)` sites.
fn pick_sites(eligible: &[usize], intensity: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = (intensity * eligible.len() as f64).round() as usize;
    let mut pool = eligible.to_vec();
    pool.shuffle(rng);
    pool.truncate(n.min(eligible.len()));
    pool.sort_unstable();
    pool
}

/// Apply the perturbations in place; returns counts per kind.
pub fn perturb_document(
    doc: &mut Document,
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> PerturbationLog {
    let mut log = PerturbationLog::default();
    for kind in &spec.kinds {
        match kind {
            PerturbationKind::ShuffleSiblings => {
                let eligible: Vec<usize> = element_ids(doc)
                    .into_iter()
                    .filter(|&id| doc.nodes[id].children.len() >= 2)
                    .collect();
                for site in pick_sites(&eligible, spec.intensity, rng) {
                    doc.nodes[site].children.shuffle(rng);
                    log.shuffled_sites += 1;
                }
            }
            PerturbationKind::InsertRedundant => {
                let eligible: Vec<usize> = element_ids(doc)
                    .into_iter()
                    .filter(|&id| {
                        doc.element_name(id)
                            .map(|n| SAFE_CONTAINERS.contains(&n))
                            .unwrap_or(false)
                    })
                    .collect();
                for site in pick_sites(&eligible, spec.intensity, rng) {
                    let tag = FILLER_TAGS[rng.random_range(0..FILLER_TAGS.len())];
                    let new_id = doc.nodes.len();
                    doc.nodes.push(DocNode {
                        data: DocData::Element {
                            name: tag.to_string(),
                            attrs: Vec::new(),
                        },
                        children: Vec::new(),
                    });
                    let slot = rng.random_range(0..=doc.nodes[site].children.len());
                    doc.nodes[site].children.insert(slot, new_id);
                    log.insertions += 1;
                }
            }
            PerturbationKind::WrapSubtree => {
                // Wrap children of safe containers (never the root).
                let mut eligible = Vec::new();
                for id in element_ids(doc) {
                    let safe = doc
                        .element_name(id)
                        .map(|n| SAFE_CONTAINERS.contains(&n))
                        .unwrap_or(false);
                    if !safe {
                        continue;
                    }
                    for (pos, &child) in doc.nodes[id].children.iter().enumerate() {
                        if doc.is_element(child) {
                            eligible.push((id, pos));
                        }
                    }
                }
                let sites: Vec<usize> = pick_sites(
                    &(0..eligible.len()).collect::<Vec<_>>(),
                    spec.intensity,
                    rng,
                );
                for &site in &sites {
                    let (parent, pos) = eligible[site];
                    let tag = if rng.random_range(0..2) == 0 { "div" } else { "span" };
                    let child = doc.nodes[parent].children[pos];
                    let wrapper = doc.nodes.len();
                    doc.nodes.push(DocNode {
                        data: DocData::Element {
                            name: tag.to_string(),
                            attrs: Vec::new(),
                        },
                        children: vec![child],
                    });
                    doc.nodes[parent].children[pos] = wrapper;
                    log.wrapped += 1;
                }
            }
        }
    }
    log
}

/// Parse, perturb, serialize.
pub fn perturb_html(
    bytes: &[u8],
    spec: &PerturbationSpec,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<u8>, PerturbationLog)> {
    let mut doc = ingest::parse_document(bytes, DEFAULT_MAX_NODES)?;
    let log = perturb_document(&mut doc, spec, rng);
    Ok((doc.to_html(), log))
}

/// Fresh deterministic stream for one page: mixes the spec seed with the
/// page index so manifests perturb reproducibly page by page.
pub fn page_rng(seed: u64, page_index: u64) -> ChaCha8Rng {
    let mut x = seed ^ page_index.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    x ^= x >> 32;
    x = x.wrapping_mul(0xD6E8_FEB8_6659_FD93);
    ChaCha8Rng::seed_from_u64(x)
}
