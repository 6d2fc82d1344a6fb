//! Text-preserving document tree built from the tolerant tokenizer.
//!
//! [`Document`] retains text nodes and attribute values so structural
//! perturbations can be applied and written back as HTML. The model-facing
//! [`super::DomTree`] is derived from it by discarding content.

use super::tokenizer::{is_raw_text_element, tokenize, Token};
use crate::error::{Error, Result};

/// Elements with no content model; their start tags never open.
const VOID_ELEMENTS: [&str; 16] = [
    "area", "base", "basefont", "bgsound", "br", "col", "embed", "frame", "hr", "img", "input",
    "link", "meta", "param", "source", "track",
];

/// Elements whose start implicitly closes an open `p`.
const P_CLOSERS: [&str; 42] = [
    "address",
    "article",
    "aside",
    "blockquote",
    "center",
    "details",
    "dialog",
    "dir",
    "div",
    "dl",
    "dd",
    "dt",
    "fieldset",
    "figcaption",
    "figure",
    "footer",
    "form",
    "h1",
    "h2",
    "h3",
    "h4",
    "h5",
    "h6",
    "header",
    "hgroup",
    "hr",
    "li",
    "listing",
    "main",
    "menu",
    "nav",
    "ol",
    "p",
    "plaintext",
    "pre",
    "search",
    "section",
    "summary",
    "table",
    "ul",
    "wbr",
    "xmp",
];

/// Elements that belong in `head` and trigger an implied head when they
/// appear before any body content.
const HEAD_CONTENT: [&str; 8] = [
    "base", "basefont", "bgsound", "link", "meta", "style", "template", "title",
];

pub fn is_void_element(name: &str) -> bool {
    VOID_ELEMENTS.contains(&name)
}

#[derive(Clone, Debug)]
pub enum DocData {
    Element {
        name: String,
        attrs: Vec<(String, Vec<u8>)>,
    },
    Text {
        bytes: Vec<u8>,
        raw: bool,
    },
}

#[derive(Clone, Debug)]
pub struct DocNode {
    pub data: DocData,
    pub children: Vec<usize>,
}

/// Parsed document: node 0 is always the `html` element.
#[derive(Clone, Debug)]
pub struct Document {
    pub nodes: Vec<DocNode>,
}

impl Document {
    pub fn root(&self) -> usize {
        0
    }

    pub fn is_element(&self, id: usize) -> bool {
        matches!(self.nodes[id].data, DocData::Element { .. })
    }

    pub fn element_name(&self, id: usize) -> Option<&str> {
        match &self.nodes[id].data {
            DocData::Element { name, .. } => Some(name),
            DocData::Text { .. } => None,
        }
    }

    pub fn element_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.data, DocData::Element { .. }))
            .count()
    }

    /// Sorted multiset of attribute values (whole) and text content
    /// (whitespace-delimited words). The perturbation fidelity contract
    /// compares this before and after; word granularity makes the check
    /// insensitive to text-node coalescing across a serialize/parse cycle
    /// while still catching any content mutation.
    pub fn content_multiset(&self) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for node in &self.nodes {
            match &node.data {
                DocData::Element { attrs, .. } => {
                    for (_, v) in attrs {
                        out.push(v.clone());
                    }
                }
                DocData::Text { bytes, .. } => {
                    for word in bytes.split(|b| b.is_ascii_whitespace()) {
                        if !word.is_empty() {
                            out.push(word.to_vec());
                        }
                    }
                }
            }
        }
        out.sort();
        out
    }

    /// Serialize back to HTML bytes. Text is entity-escaped except inside
    /// raw-text elements, so the output re-parses to the same document.
    pub fn to_html(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_node(self.root(), &mut out);
        out
    }

    fn write_node(&self, id: usize, out: &mut Vec<u8>) {
        match &self.nodes[id].data {
            DocData::Text { bytes, raw } => {
                if *raw {
                    out.extend_from_slice(bytes);
                } else {
                    for &b in bytes {
                        match b {
                            b'&' => out.extend_from_slice(b"&amp;"),
                            b'<' => out.extend_from_slice(b"&lt;"),
                            b'>' => out.extend_from_slice(b"&gt;"),
                            _ => out.push(b),
                        }
                    }
                }
            }
            DocData::Element { name, attrs } => {
                out.push(b'<');
                out.extend_from_slice(name.as_bytes());
                for (n, v) in attrs {
                    out.push(b' ');
                    out.extend_from_slice(n.as_bytes());
                    out.extend_from_slice(b"=\"");
                    for &b in v {
                        match b {
                            b'&' => out.extend_from_slice(b"&amp;"),
                            b'"' => out.extend_from_slice(b"&quot;"),
                            b'<' => out.extend_from_slice(b"&lt;"),
                            _ => out.push(b),
                        }
                    }
                    out.push(b'"');
                }
                out.push(b'>');
                if is_void_element(name) {
                    return;
                }
                for &child in &self.nodes[id].children {
                    self.write_node(child, out);
                }
                out.extend_from_slice(b"</");
                out.extend_from_slice(name.as_bytes());
                out.push(b'>');
            }
        }
    }
}

/// Parse bytes into a [`Document`] with standards-style recovery: implied
/// `html`/`head`/`body`, auto-closing of optional end tags, stray end tags
/// ignored, everything closed at EOF. Never fails on malformed markup; the
/// only error is exceeding `max_nodes` (elements plus attributes).
pub fn parse_document(input: &[u8], max_nodes: usize) -> Result<Document> {
    Builder::new(max_nodes).run(tokenize(input))
}

struct Builder {
    nodes: Vec<DocNode>,
    /// Open element stack; `stack[0]` is the html element once created.
    stack: Vec<usize>,
    html: Option<usize>,
    head: Option<usize>,
    body: Option<usize>,
    /// Tags + attributes created so far, checked against the cap.
    dom_nodes: usize,
    max_nodes: usize,
}

impl Builder {
    fn new(max_nodes: usize) -> Self {
        Self {
            nodes: Vec::new(),
            stack: Vec::new(),
            html: None,
            head: None,
            body: None,
            dom_nodes: 0,
            max_nodes,
        }
    }

    fn run(mut self, tokens: Vec<Token>) -> Result<Document> {
        for token in tokens {
            match token {
                Token::StartTag {
                    name,
                    attrs,
                    self_closing,
                } => self.start_tag(name, attrs, self_closing)?,
                Token::EndTag { name } => self.end_tag(&name),
                Token::Text { bytes, raw } => self.text(bytes, raw)?,
            }
        }
        if self.html.is_none() {
            // Zero decodable elements: synthesize a bare html root.
            self.create_element("html".into(), Vec::new())?;
        }
        Ok(Document { nodes: self.nodes })
    }

    fn create_element(&mut self, name: String, attrs: Vec<(String, Vec<u8>)>) -> Result<usize> {
        self.dom_nodes += 1 + attrs.len();
        if self.dom_nodes > self.max_nodes {
            return Err(Error::OversizeDocument {
                nodes: self.dom_nodes,
                limit: self.max_nodes,
            });
        }
        let id = self.nodes.len();
        self.nodes.push(DocNode {
            data: DocData::Element { name, attrs },
            children: Vec::new(),
        });
        if let Some(&parent) = self.stack.last() {
            self.nodes[parent].children.push(id);
        }
        Ok(id)
    }

    fn open(&mut self, name: String, attrs: Vec<(String, Vec<u8>)>) -> Result<usize> {
        let id = self.create_element(name, attrs)?;
        self.stack.push(id);
        Ok(id)
    }

    fn ensure_html(&mut self) -> Result<()> {
        match self.html {
            None => {
                let id = self.open("html".into(), Vec::new())?;
                self.html = Some(id);
            }
            Some(html) if self.stack.is_empty() => {
                // Content after a stray </html>: re-enter the existing element.
                self.stack.push(html);
            }
            Some(_) => {}
        }
        Ok(())
    }

    fn ensure_body(&mut self) -> Result<()> {
        self.ensure_html()?;
        if let Some(head) = self.head {
            if self.stack.contains(&head) {
                self.close_through(head);
            }
        }
        match self.body {
            None => {
                let id = self.open("body".into(), Vec::new())?;
                self.body = Some(id);
            }
            Some(body) if !self.stack.contains(&body) => self.stack.push(body),
            Some(_) => {}
        }
        Ok(())
    }

    /// Pop the stack up to and including `id`.
    fn close_through(&mut self, id: usize) {
        while let Some(top) = self.stack.pop() {
            if top == id {
                break;
            }
        }
    }

    fn current_name(&self) -> Option<&str> {
        self.stack
            .last()
            .and_then(|&id| match &self.nodes[id].data {
                DocData::Element { name, .. } => Some(name.as_str()),
                DocData::Text { .. } => None,
            })
    }

    fn auto_close_for(&mut self, new_tag: &str) {
        loop {
            let Some(top) = self.current_name() else { return };
            let close = match top {
                "p" => P_CLOSERS.contains(&new_tag),
                "a" => new_tag == "a",
                "button" => new_tag == "button",
                "li" => new_tag == "li",
                "dd" | "dt" => new_tag == "dd" || new_tag == "dt",
                "option" => new_tag == "option" || new_tag == "optgroup",
                "td" | "th" => matches!(new_tag, "td" | "th" | "tr"),
                "tr" => matches!(new_tag, "tr" | "tbody" | "thead" | "tfoot"),
                "thead" | "tbody" | "tfoot" => matches!(new_tag, "tbody" | "thead" | "tfoot"),
                "caption" => matches!(new_tag, "tbody" | "thead" | "tfoot" | "tr" | "colgroup"),
                "colgroup" => new_tag == "colgroup",
                _ => false,
            };
            if !close {
                return;
            }
            self.stack.pop();
        }
    }

    fn start_tag(
        &mut self,
        name: String,
        attrs: Vec<(String, Vec<u8>)>,
        self_closing: bool,
    ) -> Result<()> {
        match name.as_str() {
            "html" => {
                if self.html.is_none() {
                    let id = self.open(name, attrs)?;
                    self.html = Some(id);
                }
                // Duplicate <html> start tags are dropped.
                return Ok(());
            }
            "head" => {
                self.ensure_html()?;
                if self.head.is_none() && self.body.is_none() {
                    let id = self.open(name, attrs)?;
                    self.head = Some(id);
                }
                return Ok(());
            }
            "body" => {
                self.ensure_html()?;
                if let Some(head) = self.head {
                    if self.stack.contains(&head) {
                        self.close_through(head);
                    }
                }
                if self.body.is_none() {
                    let id = self.open(name, attrs)?;
                    self.body = Some(id);
                }
                return Ok(());
            }
            _ => {}
        }

        self.ensure_html()?;
        let head_allowed = HEAD_CONTENT.contains(&name.as_str())
            || matches!(name.as_str(), "script" | "noscript");
        let in_head = self
            .head
            .map(|h| self.stack.contains(&h))
            .unwrap_or(false);
        if in_head && !head_allowed {
            // Flow content implicitly closes the head.
            self.close_through(self.head.unwrap());
            self.ensure_body()?;
        } else if !in_head {
            let in_body = self
                .body
                .map(|b| self.stack.contains(&b))
                .unwrap_or(false);
            if !in_body {
                if head_allowed && self.body.is_none() {
                    // Head-bound element before any body content: enter the
                    // head, creating it if needed.
                    match self.head {
                        Some(h) => self.stack.push(h),
                        None => {
                            let id = self.open("head".into(), Vec::new())?;
                            self.head = Some(id);
                        }
                    }
                } else {
                    self.ensure_body()?;
                }
            }
        }

        self.auto_close_for(&name);
        if is_void_element(&name) || (self_closing && is_raw_text_element(&name)) {
            self.create_element(name, attrs)?;
        } else {
            self.open(name, attrs)?;
        }
        Ok(())
    }

    fn end_tag(&mut self, name: &str) {
        if name == "html" || name == "body" {
            // Leave document-level elements; trailing content re-enters.
            if let Some(id) = if name == "body" { self.body } else { self.html } {
                if self.stack.contains(&id) {
                    self.close_through(id);
                    if name == "body" {
                        // html stays open for possible trailing content.
                        if let Some(html) = self.html {
                            if !self.stack.contains(&html) {
                                self.stack.push(html);
                            }
                        }
                    }
                }
            }
            return;
        }
        if let Some(pos) = self.stack.iter().rposition(|&id| {
            matches!(&self.nodes[id].data, DocData::Element { name: n, .. } if n == name)
        }) {
            self.stack.truncate(pos);
        }
        // Unmatched end tags are ignored.
    }

    fn text(&mut self, bytes: Vec<u8>, raw: bool) -> Result<()> {
        let in_open_element = self
            .stack
            .last()
            .map(|&id| Some(id) != self.html)
            .unwrap_or(false);
        if !in_open_element {
            if bytes.iter().all(|b| is_ascii_ws(*b)) {
                return Ok(()); // inter-element whitespace before content
            }
            self.ensure_body()?;
        }
        let id = self.nodes.len();
        self.nodes.push(DocNode {
            data: DocData::Text { bytes, raw },
            children: Vec::new(),
        });
        let parent = *self.stack.last().expect("ensure_body leaves an open element");
        self.nodes[parent].children.push(id);
        Ok(())
    }
}

fn is_ascii_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0c')
}
