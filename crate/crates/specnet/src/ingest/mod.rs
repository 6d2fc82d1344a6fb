//! Page ingestion: raw HTML bytes and a domain name become the unified tree
//! the model consumes. Text content, attribute values, comments and
//! declarations are discarded; only tag names, attribute names and the
//! optional domain node survive.

pub mod document;
mod tokenizer;

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};
pub use document::{parse_document, DocData, Document};

/// Default cap on tag + attribute nodes per document.
pub const DEFAULT_MAX_NODES: usize = 200_000;

/// One input page: raw HTML bytes, optional domain, optional external label
/// (0 = benign, 1 = phishing).
#[derive(Clone, Debug)]
pub struct RawPage {
    pub html: Vec<u8>,
    pub domain: Option<String>,
    pub label: Option<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Tag,
    Attr,
    Domain,
}

#[derive(Clone, Debug)]
pub struct DomNode {
    pub kind: NodeKind,
    pub token: String,
    pub children: Vec<usize>,
}

/// Rooted ordered tree of tag/attribute/domain nodes.
///
/// Node 0 is the root; `parent`/`depth` are maintained on every insertion,
/// so `depth(v) = depth(parent(v)) + 1` holds by construction.
#[derive(Clone, Debug)]
pub struct DomTree {
    nodes: Vec<DomNode>,
    parent: Vec<Option<usize>>,
    depth: Vec<usize>,
}

impl DomTree {
    pub fn new_root(token: impl Into<String>) -> Self {
        DomTree {
            nodes: vec![DomNode {
                kind: NodeKind::Tag,
                token: token.into(),
                children: Vec::new(),
            }],
            parent: vec![None],
            depth: vec![0],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false // a tree always has its root
    }

    pub fn root(&self) -> usize {
        0
    }

    pub fn node(&self, id: usize) -> &DomNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[DomNode] {
        &self.nodes
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.parent[id]
    }

    pub fn depth(&self, id: usize) -> usize {
        self.depth[id]
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parent
    }

    /// Append a child under `parent`, maintaining parent/depth.
    pub fn add_child(&mut self, parent: usize, kind: NodeKind, token: impl Into<String>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(DomNode {
            kind,
            token: token.into(),
            children: Vec::new(),
        });
        self.parent.push(Some(parent));
        self.depth.push(self.depth[parent] + 1);
        self.nodes[parent].children.push(id);
        id
    }

    /// Decompose a tag with its attribute names into the tag-parent /
    /// attribute-children subtree under `parent`. Duplicate attribute names
    /// keep the first occurrence; order is source order.
    pub fn add_element(&mut self, parent: usize, tag: &str, attrs: &[&str]) -> usize {
        let id = self.add_child(parent, NodeKind::Tag, tag.to_ascii_lowercase());
        let mut seen: Vec<&str> = Vec::with_capacity(attrs.len());
        for &attr in attrs {
            if seen.iter().any(|s| s.eq_ignore_ascii_case(attr)) {
                continue;
            }
            seen.push(attr);
            self.add_child(id, NodeKind::Attr, attr.to_ascii_lowercase());
        }
        id
    }

    pub fn domain_node(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == NodeKind::Domain)
    }

    /// Verify all tree invariants; used by tests and debug assertions.
    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.parent[0].is_some() || self.depth[0] != 0 {
            return Err(Error::Config("root must be parentless at depth 0".into()));
        }
        let mut reached = vec![false; n];
        let mut stack = vec![0usize];
        let mut visited = 0usize;
        while let Some(v) = stack.pop() {
            if reached[v] {
                return Err(Error::Config(format!("node {v} reached twice")));
            }
            reached[v] = true;
            visited += 1;
            for &c in &self.nodes[v].children {
                if self.parent[c] != Some(v) {
                    return Err(Error::Config(format!("parent link broken at {c}")));
                }
                if self.depth[c] != self.depth[v] + 1 {
                    return Err(Error::Config(format!("depth law broken at {c}")));
                }
                stack.push(c);
            }
        }
        if visited != n {
            return Err(Error::Config("tree is not connected".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.token.is_empty() {
                return Err(Error::Config(format!("empty token at {i}")));
            }
            if node.kind != NodeKind::Tag && !node.children.is_empty() {
                return Err(Error::Config(format!("non-tag node {i} has children")));
            }
        }
        Ok(())
    }
}

/// Parse raw HTML into the model's tree with the default node cap.
pub fn parse_html(html: &[u8]) -> Result<DomTree> {
    parse_html_capped(html, DEFAULT_MAX_NODES)
}

/// Parse raw HTML into the model's tree. Tolerant of malformed markup;
/// deterministic for identical bytes. The only failure is the node cap.
pub fn parse_html_capped(html: &[u8], max_nodes: usize) -> Result<DomTree> {
    let doc = parse_document(html, max_nodes)?;
    Ok(dom_tree_from_document(&doc))
}

pub fn dom_tree_from_document(doc: &Document) -> DomTree {
    fn descend(doc: &Document, doc_id: usize, tree: &mut DomTree, parent: usize) {
        for &child in &doc.nodes[doc_id].children {
            if let DocData::Element { name, attrs } = &doc.nodes[child].data {
                let names: Vec<&str> = attrs.iter().map(|(n, _)| n.as_str()).collect();
                let id = tree.add_element(parent, name, &names);
                descend(doc, child, tree, id);
            }
        }
    }

    // The document root is always an `html` element (synthesized if absent).
    let root_id = doc.root();
    let (name, attr_names): (&str, Vec<&str>) = match &doc.nodes[root_id].data {
        DocData::Element { name, attrs } => {
            (name.as_str(), attrs.iter().map(|(n, _)| n.as_str()).collect())
        }
        DocData::Text { .. } => ("html", Vec::new()),
    };
    let mut tree = DomTree::new_root(name.to_ascii_lowercase());
    let mut seen: Vec<&str> = Vec::new();
    for attr in attr_names {
        if !seen.contains(&attr) {
            seen.push(attr);
            tree.add_child(0, NodeKind::Attr, attr.to_ascii_lowercase());
        }
    }
    descend(doc, root_id, &mut tree, 0);
    tree
}

/// Insert the domain as the first child of the root. Rejects trees that
/// already carry a domain node.
pub fn attach_domain_node(tree: &mut DomTree, domain: &str) -> Result<()> {
    let domain = domain.trim().to_ascii_lowercase();
    if domain.is_empty() {
        return Err(Error::MissingDomain);
    }
    if tree.domain_node().is_some() {
        return Err(Error::DuplicateDomain);
    }
    let id = tree.nodes.len();
    tree.nodes.push(DomNode {
        kind: NodeKind::Domain,
        token: domain,
        children: Vec::new(),
    });
    tree.parent.push(Some(0));
    tree.depth.push(1);
    tree.nodes[0].children.insert(0, id);
    Ok(())
}

/// Copy of the tree without its domain node (if any), reindexed.
pub fn strip_domain_node(tree: &DomTree) -> DomTree {
    let Some(skip) = tree.domain_node() else {
        return tree.clone();
    };
    let mut out = DomTree::new_root(tree.nodes[0].token.clone());
    out.nodes[0].kind = tree.nodes[0].kind;
    fn copy(tree: &DomTree, from: usize, out: &mut DomTree, to: usize, skip: usize) {
        for &c in &tree.nodes[from].children {
            if c == skip {
                continue;
            }
            let id = out.add_child(to, tree.nodes[c].kind, tree.nodes[c].token.clone());
            copy(tree, c, out, id, skip);
        }
    }
    copy(tree, 0, &mut out, 0, skip);
    out
}

#[derive(Deserialize)]
struct ManifestEntry {
    html_path: String,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    label: Option<serde_json::Value>,
}

/// Streaming reader over a JSON-lines manifest.
///
/// Malformed lines are skipped and counted; pages whose HTML file is missing
/// yield an error item and the stream continues.
pub struct ManifestReader {
    lines: std::io::Lines<BufReader<fs::File>>,
    base_dir: PathBuf,
    skipped: usize,
}

impl ManifestReader {
    /// Lines skipped so far because they failed to parse.
    pub fn skipped(&self) -> usize {
        self.skipped
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<ManifestReader> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok(ManifestReader {
        lines: BufReader::new(file).lines(),
        base_dir,
        skipped: 0,
    })
}

impl Iterator for ManifestReader {
    type Item = Result<RawPage>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(Error::io(&self.base_dir, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = match serde_json::from_str(&line) {
                Ok(e) => e,
                Err(e) => {
                    self.skipped += 1;
                    log::warn!("skipping malformed manifest line: {e}");
                    continue;
                }
            };
            let label = match entry.label {
                None | Some(serde_json::Value::Null) => None,
                Some(serde_json::Value::Number(n)) if n.as_u64() == Some(0) => Some(0),
                Some(serde_json::Value::Number(n)) if n.as_u64() == Some(1) => Some(1),
                Some(other) => {
                    self.skipped += 1;
                    log::warn!("skipping manifest line with invalid label {other}");
                    continue;
                }
            };
            // Whitespace-only domains are normalized to absent.
            let domain = entry
                .domain
                .map(|d| d.trim().to_string())
                .filter(|d| !d.is_empty());
            let mut html_path = PathBuf::from(&entry.html_path);
            if html_path.is_relative() {
                html_path = self.base_dir.join(html_path);
            }
            let html = match fs::read(&html_path) {
                Ok(bytes) => bytes,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Some(Err(Error::FileMissing { path: html_path }));
                }
                Err(e) => return Some(Err(Error::io(html_path, e))),
            };
            return Some(Ok(RawPage {
                html,
                domain,
                label,
            }));
        }
    }
}
