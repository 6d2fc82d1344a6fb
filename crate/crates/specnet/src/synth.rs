//! Desk-scale synthetic corpus generator.
//!
//! Two structurally separable families: "benign-like" pages are deep,
//! heterogeneous trees of standard elements with plain domains; "kit-like"
//! pages are shallow, repetitive, form-heavy templates with legacy/custom
//! tags, inline handlers and long noisy domains. A stand-in for real
//! corpora, not a simulation of any particular feed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct SynthSpec {
    /// Total templates, split evenly between the two families (benign gets
    /// the extra one when odd).
    pub templates: usize,
    pub pages_per_template: usize,
    /// Structural mutation intensity in [0, 1]; 0 keeps every page of a
    /// template DOM-isomorphic.
    pub noise: f64,
    pub seed: u64,
    /// Multiplies template size ranges (latency benching uses large pages).
    pub node_scale: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            templates: 8,
            pages_per_template: 25,
            noise: 0.3,
            seed: 1,
            node_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthSummary {
    pub pages: usize,
    pub files: usize,
    pub manifests: Vec<PathBuf>,
}

const BENIGN_WORDS: &[&str] = &[
    "acorn", "harbor", "willow", "summit", "monarch", "lantern", "meadow", "quartz", "voyage",
    "garden", "archive", "bistro", "cedar", "dynamo", "ember", "foundry", "gazette", "horizon",
    "island", "jubilee", "kernel", "lagoon", "mosaic", "nectar", "orchard", "prairie", "quill",
    "riverside", "sonnet", "timber", "upland", "vertex", "wharf", "zephyr",
];

const BENIGN_TLDS: &[&str] = &["com", "org", "net", "io", "edu"];

const BRANDS: &[&str] = &[
    "paypa1", "amaz0n", "g00gle", "micr0soft", "app1e", "netfl1x", "faceb00k", "bank0famerica",
    "wellsfarg0", "chase-bank", "dr0pbox", "inst4gram",
];

const KIT_WORDS: &[&str] = &[
    "login", "verify", "secure", "account", "update", "confirm", "auth", "signin", "billing",
    "support", "wallet", "restore",
];

const KIT_TLDS: &[&str] = &["xyz", "top", "icu", "live", "online", "club", "rest"];

/// Mix a handful of ids into one deterministic stream seed.
fn page_seed(seed: u64, family: u64, template: u64, page: u64) -> u64 {
    let mut x = seed
        ^ family.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ template.wrapping_mul(0xBF58_476D_1CE4_E5B9)
        ^ page.wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^= x >> 30;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^= x >> 27;
    x
}

struct Node {
    tag: &'static str,
    attrs: Vec<(&'static str, String)>,
    text: Option<String>,
    children: Vec<Node>,
}

impl Node {
    fn new(tag: &'static str) -> Node {
        Node {
            tag,
            attrs: Vec::new(),
            text: None,
            children: Vec::new(),
        }
    }

    fn attr(mut self, name: &'static str, value: impl Into<String>) -> Node {
        self.attrs.push((name, value.into()));
        self
    }

    fn text(mut self, t: impl Into<String>) -> Node {
        self.text = Some(t.into());
        self
    }

    fn child(mut self, c: Node) -> Node {
        self.children.push(c);
        self
    }

    fn write(&self, out: &mut String) {
        out.push('<');
        out.push_str(self.tag);
        for (k, v) in &self.attrs {
            let _ = write!(out, " {k}=\"{v}\"");
        }
        out.push('>');
        if let Some(t) = &self.text {
            out.push_str(t);
        }
        for c in &self.children {
            c.write(out);
        }
        if !matches!(
            self.tag,
            "br" | "hr" | "img" | "input" | "meta" | "link" | "source"
        ) {
            let _ = write!(out, "</{}>", self.tag);
        }
    }
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| BENIGN_WORDS[rng.random_range(0..BENIGN_WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn benign_domain(rng: &mut ChaCha8Rng) -> String {
    let w1 = BENIGN_WORDS[rng.random_range(0..BENIGN_WORDS.len())];
    let tld = BENIGN_TLDS[rng.random_range(0..BENIGN_TLDS.len())];
    if rng.random_range(0..3) == 0 {
        let w2 = BENIGN_WORDS[rng.random_range(0..BENIGN_WORDS.len())];
        format!("{w1}-{w2}.{tld}")
    } else {
        format!("{w1}.{tld}")
    }
}

fn kit_domain(rng: &mut ChaCha8Rng) -> String {
    let brand = BRANDS[rng.random_range(0..BRANDS.len())];
    let w = KIT_WORDS[rng.random_range(0..KIT_WORDS.len())];
    let w2 = KIT_WORDS[rng.random_range(0..KIT_WORDS.len())];
    let tld = KIT_TLDS[rng.random_range(0..KIT_TLDS.len())];
    let tail: String = (0..rng.random_range(4..9))
        .map(|_| {
            let c = rng.random_range(0..36u32);
            char::from_digit(c % 10, 10).unwrap_or('x')
        })
        .collect();
    format!("{brand}-{w}-{w2}-{tail}.{tld}")
}

/// Template-level structural constants, drawn once per template so that
/// noise-free pages are DOM-isomorphic.
#[derive(Clone, Debug)]
struct BenignTemplate {
    nav_items: usize,
    articles: usize,
    paras_per_article: usize,
    cards: usize,
    list_items: usize,
    with_table: bool,
    table_rows: usize,
    footer_links: usize,
}

impl BenignTemplate {
    fn draw(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let s = |v: usize| ((v as f64 * scale).round() as usize).max(1);
        BenignTemplate {
            nav_items: s(rng.random_range(3..8)),
            articles: s(rng.random_range(2..5)),
            paras_per_article: s(rng.random_range(2..6)),
            cards: s(rng.random_range(2..6)),
            list_items: s(rng.random_range(3..8)),
            with_table: rng.random_range(0..2) == 0,
            table_rows: s(rng.random_range(2..6)),
            footer_links: s(rng.random_range(2..5)),
        }
    }
}

/// Structural branches draw from `srng` (seeded per template, so noise-free
/// pages are isomorphic); text, urls and noise mutations draw from `prng`.
fn benign_page(
    t: &BenignTemplate,
    srng: &mut ChaCha8Rng,
    prng: &mut ChaCha8Rng,
    noise: f64,
) -> Node {
    let mutate = |rng: &mut ChaCha8Rng, base: usize| -> usize {
        if noise > 0.0 && rng.random_range(0.0..1.0) < noise {
            (base as i64 + rng.random_range(-1..2)).max(1) as usize
        } else {
            base
        }
    };
    let head = Node::new("head")
        .child(Node::new("meta").attr("charset", "utf-8"))
        .child(Node::new("title").text(words(prng, 3)))
        .child(
            Node::new("link")
                .attr("rel", "stylesheet")
                .attr("href", format!("/static/{}.css", words(prng, 1))),
        )
        .child(
            Node::new("meta")
                .attr("name", "viewport")
                .attr("content", "width=device-width"),
        );

    let mut nav_list = Node::new("ul").attr("class", "nav");
    for _ in 0..mutate(prng, t.nav_items) {
        nav_list = nav_list.child(
            Node::new("li").child(
                Node::new("a")
                    .attr("href", format!("/{}", words(prng, 1)))
                    .text(words(prng, 1)),
            ),
        );
    }
    let header = Node::new("header").child(Node::new("nav").child(nav_list));

    let mut main = Node::new("main");
    for _ in 0..mutate(prng, t.articles) {
        let mut article = Node::new("article")
            .attr("class", "post")
            .child(Node::new("h2").text(words(prng, 4)));
        for _ in 0..mutate(prng, t.paras_per_article) {
            let mut p = Node::new("p").text(words(prng, 12));
            if srng.random_range(0..2) == 0 {
                p = p.child(
                    Node::new("a")
                        .attr("href", format!("https://{}", benign_domain(prng)))
                        .text(words(prng, 2)),
                );
            }
            if srng.random_range(0..3) == 0 {
                p = p.child(Node::new("em").text(words(prng, 2)));
            }
            article = article.child(p);
        }
        if srng.random_range(0..2) == 0 {
            article = article.child(
                Node::new("img")
                    .attr("src", format!("/img/{}.png", words(prng, 1)))
                    .attr("alt", words(prng, 2)),
            );
        }
        let mut ul = Node::new("ul");
        for _ in 0..mutate(prng, t.list_items) {
            ul = ul.child(Node::new("li").text(words(prng, 3)));
        }
        article = article.child(ul);
        main = main.child(article);
    }
    if t.with_table {
        let mut tbody = Node::new("tbody");
        for _ in 0..mutate(prng, t.table_rows) {
            tbody = tbody.child(
                Node::new("tr")
                    .child(Node::new("td").text(words(prng, 2)))
                    .child(Node::new("td").text(words(prng, 1)))
                    .child(Node::new("td").text(words(prng, 1))),
            );
        }
        main = main.child(
            Node::new("table").attr("class", "data").child(
                Node::new("thead").child(
                    Node::new("tr")
                        .child(Node::new("th").text(words(prng, 1)))
                        .child(Node::new("th").text(words(prng, 1)))
                        .child(Node::new("th").text(words(prng, 1))),
                ),
            )
            .child(tbody),
        );
    }

    let mut section = Node::new("section").child(Node::new("h3").text(words(prng, 3)));
    for _ in 0..mutate(prng, t.cards) {
        section = section.child(
            Node::new("div")
                .attr("class", "card")
                .child(Node::new("h4").text(words(prng, 2)))
                .child(Node::new("p").text(words(prng, 8)))
                .child(
                    Node::new("a")
                        .attr("href", format!("/{}", words(prng, 1)))
                        .text(words(prng, 1)),
                ),
        );
    }

    let mut footer_div = Node::new("div").child(Node::new("p").text(words(prng, 6)));
    for _ in 0..mutate(prng, t.footer_links) {
        footer_div = footer_div.child(
            Node::new("a")
                .attr("href", format!("/{}", words(prng, 1)))
                .attr("rel", "nofollow")
                .text(words(prng, 1)),
        );
    }
    let footer = Node::new("footer").child(footer_div);

    Node::new("html")
        .attr("lang", "en")
        .child(head)
        .child(Node::new("body").child(header).child(main).child(section).child(footer))
}

#[derive(Clone, Debug)]
struct KitTemplate {
    forms: usize,
    fields_per_form: usize,
    hidden_inputs: usize,
    with_marquee: bool,
    with_custom_tag: bool,
    repeat_blocks: usize,
}

impl KitTemplate {
    fn draw(rng: &mut ChaCha8Rng, scale: f64) -> Self {
        let s = |v: usize| ((v as f64 * scale).round() as usize).max(1);
        KitTemplate {
            forms: s(rng.random_range(1..3)),
            fields_per_form: s(rng.random_range(2..5)),
            hidden_inputs: rng.random_range(0..4),
            with_marquee: rng.random_range(0..2) == 0,
            with_custom_tag: rng.random_range(0..2) == 0,
            repeat_blocks: s(rng.random_range(2..5)),
        }
    }
}

fn kit_page(t: &KitTemplate, prng: &mut ChaCha8Rng, noise: f64) -> Node {
    let mutate = |rng: &mut ChaCha8Rng, base: usize| -> usize {
        if noise > 0.0 && rng.random_range(0.0..1.0) < noise {
            (base as i64 + rng.random_range(-1..2)).max(1) as usize
        } else {
            base
        }
    };
    let head = Node::new("head")
        .child(Node::new("title").text(format!("{} - secure login", words(prng, 1))))
        .child(Node::new("meta").attr("charset", "utf-8"));

    let mut body = Node::new("body").attr("onload", "init()");
    body = body.child(
        Node::new("div")
            .attr("class", "logo")
            .child(Node::new("img").attr("src", "logo.png")),
    );
    for _ in 0..mutate(prng, t.forms) {
        let mut form = Node::new("form")
            .attr("action", format!("post.php?x={}", prng.random_range(0..999)))
            .attr("method", "post");
        for _ in 0..mutate(prng, t.repeat_blocks) {
            let mut block = Node::new("div").attr("class", "blk");
            for _ in 0..mutate(prng, t.fields_per_form) {
                block = block.child(
                    Node::new("div")
                        .child(Node::new("label").attr("for", "f").text(words(prng, 1)))
                        .child(
                            Node::new("input")
                                .attr("type", "text")
                                .attr("name", KIT_WORDS[prng.random_range(0..KIT_WORDS.len())]),
                        ),
                );
            }
            form = form.child(block);
        }
        for _ in 0..t.hidden_inputs {
            form = form.child(
                Node::new("input")
                    .attr("type", "hidden")
                    .attr("name", "tok")
                    .attr("value", format!("{:x}", prng.random_range(0..u32::MAX))),
            );
        }
        form = form.child(
            Node::new("button")
                .attr("type", "submit")
                .attr("onclick", "return go()")
                .text("Continue"),
        );
        body = body.child(Node::new("center").child(form));
    }
    if t.with_marquee {
        body = body.child(Node::new("marquee").text("Session expires soon"));
    }
    if t.with_custom_tag {
        body = body.child(Node::new("x-protect").attr("data-k", "1"));
    }
    body = body.child(
        Node::new("font")
            .attr("color", "gray")
            .text(words(prng, 4)),
    );
    body = body.child(Node::new("script").text(format!(
        "var t=\"{}\";document.cookie=t;",
        words(prng, 1)
    )));

    Node::new("html").child(head).child(body)
}

enum Template {
    Benign(BenignTemplate),
    Kit(KitTemplate),
}

/// Generate the corpus. With `splits` (name, pages-per-class) the pages of
/// each class are dealt round-robin across templates into one manifest per
/// split; otherwise a single `manifest.jsonl` covers everything.
pub fn generate(
    out_dir: &Path,
    spec: &SynthSpec,
    splits: Option<&[(String, usize)]>,
) -> Result<SynthSummary> {
    if spec.templates < 2 {
        return Err(Error::Config("need at least 2 templates (one per family)".into()));
    }
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::Config("noise must lie in [0, 1]".into()));
    }
    let benign_templates = spec.templates.div_ceil(2);
    let kit_templates = spec.templates / 2;
    if let Some(splits) = splits {
        let per_class: usize = splits.iter().map(|(_, n)| n).sum();
        let benign_total = benign_templates * spec.pages_per_template;
        let kit_total = kit_templates * spec.pages_per_template;
        if per_class > benign_total.min(kit_total) {
            return Err(Error::Config(format!(
                "split sizes need {per_class} pages per class but the corpus has {} benign / {} kit",
                benign_total, kit_total
            )));
        }
    }

    let pages_dir = out_dir.join("pages");
    fs::create_dir_all(&pages_dir).map_err(|e| Error::io(&pages_dir, e))?;

    // Per-family page lists in round-robin template order.
    let mut class_pages: [Vec<(String, String)>; 2] = [Vec::new(), Vec::new()];
    for (family, n_templates) in [(0usize, benign_templates), (1usize, kit_templates)] {
        let templates: Vec<Template> = (0..n_templates)
            .map(|t| {
                let mut rng = ChaCha8Rng::seed_from_u64(page_seed(
                    spec.seed,
                    family as u64,
                    t as u64,
                    u64::MAX,
                ));
                if family == 0 {
                    Template::Benign(BenignTemplate::draw(&mut rng, spec.node_scale))
                } else {
                    Template::Kit(KitTemplate::draw(&mut rng, spec.node_scale))
                }
            })
            .collect();
        for page_idx in 0..spec.pages_per_template {
            for (t_idx, template) in templates.iter().enumerate() {
                let mut prng = ChaCha8Rng::seed_from_u64(page_seed(
                    spec.seed,
                    family as u64,
                    t_idx as u64,
                    page_idx as u64,
                ));
                // Same structural stream for every page of a template.
                let mut srng = ChaCha8Rng::seed_from_u64(page_seed(
                    spec.seed,
                    family as u64,
                    t_idx as u64,
                    u64::MAX - 1,
                ));
                let (node, domain) = match template {
                    Template::Benign(t) => {
                        let node = benign_page(t, &mut srng, &mut prng, spec.noise);
                        let domain = benign_domain(&mut prng);
                        (node, domain)
                    }
                    Template::Kit(t) => {
                        let node = kit_page(t, &mut prng, spec.noise);
                        let domain = kit_domain(&mut prng);
                        (node, domain)
                    }
                };
                let mut html = String::from("<!doctype html>");
                node.write(&mut html);
                let class = if family == 0 { "benign" } else { "phish" };
                let file = format!("pages/{class}_{t_idx:02}_{page_idx:04}.html");
                let path = out_dir.join(&file);
                fs::write(&path, html.as_bytes()).map_err(|e| Error::io(&path, e))?;
                class_pages[family].push((file, domain));
            }
        }
    }

    let line = |file: &str, domain: &str, label: usize| {
        format!(r#"{{"html_path": "{file}", "domain": "{domain}", "label": {label}}}"#)
    };

    let mut manifests = Vec::new();
    match splits {
        None => {
            let mut lines = Vec::new();
            for (family, pages) in class_pages.iter().enumerate() {
                for (file, domain) in pages {
                    lines.push(line(file, domain, family));
                }
            }
            let path = out_dir.join("manifest.jsonl");
            fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
            manifests.push(path);
        }
        Some(splits) => {
            let mut cursors = [0usize; 2];
            for (name, per_class) in splits {
                let mut lines = Vec::new();
                for (family, pages) in class_pages.iter().enumerate() {
                    let start = cursors[family];
                    for (file, domain) in &pages[start..start + per_class] {
                        lines.push(line(file, domain, family));
                    }
                    cursors[family] += per_class;
                }
                let path = out_dir.join(format!("{name}.jsonl"));
                fs::write(&path, lines.join("\n") + "\n").map_err(|e| Error::io(&path, e))?;
                manifests.push(path);
            }
        }
    }

    let files = class_pages[0].len() + class_pages[1].len();
    Ok(SynthSummary {
        pages: files,
        files,
        manifests,
    })
}
