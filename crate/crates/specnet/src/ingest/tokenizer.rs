//! Byte-level tolerant HTML tokenizer.
//!
//! Consumes arbitrary bytes and never fails: unterminated constructs run to
//! end of input, stray `<` becomes text, bogus declarations are skipped.
//! Tag and attribute names are ASCII-lowercased; non-ASCII name bytes pass
//! through latin-1 style. Text and attribute values stay raw bytes except
//! for decoding of the five entities the serializer emits, which keeps a
//! parse -> serialize -> parse cycle stable.

/// Elements whose content is consumed as raw text up to the matching
/// case-insensitive end tag.
const RAW_TEXT_ELEMENTS: [&str; 8] = [
    "script", "style", "textarea", "title", "xmp", "iframe", "noembed", "noframes",
];

pub fn is_raw_text_element(name: &str) -> bool {
    RAW_TEXT_ELEMENTS.contains(&name)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Token {
    StartTag {
        name: String,
        /// Attribute (name, value) pairs in source order, first occurrence
        /// of a duplicate name wins.
        attrs: Vec<(String, Vec<u8>)>,
        self_closing: bool,
    },
    EndTag {
        name: String,
    },
    Text {
        bytes: Vec<u8>,
        /// True for raw-text element content: no entity decoding applies and
        /// the serializer writes it back verbatim.
        raw: bool,
    },
}

pub fn tokenize(input: &[u8]) -> Vec<Token> {
    Tokenizer {
        b: input,
        i: 0,
        out: Vec::new(),
    }
    .run()
}

struct Tokenizer<'a> {
    b: &'a [u8],
    i: usize,
    out: Vec<Token>,
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0c')
}

fn lower_byte_char(b: u8) -> char {
    b.to_ascii_lowercase() as char
}

/// Decode the entities the serializer produces; everything else passes
/// through untouched.
fn decode_entities(bytes: &[u8]) -> Vec<u8> {
    if !bytes.contains(&b'&') {
        return bytes.to_vec();
    }
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'&' {
            let rest = &bytes[i..];
            let replacements: [(&[u8], u8); 6] = [
                (b"&amp;", b'&'),
                (b"&lt;", b'<'),
                (b"&gt;", b'>'),
                (b"&quot;", b'"'),
                (b"&apos;", b'\''),
                (b"&#39;", b'\''),
            ];
            if let Some((pat, ch)) = replacements.iter().find(|(p, _)| rest.starts_with(p)) {
                out.push(*ch);
                i += pat.len();
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    out
}

impl<'a> Tokenizer<'a> {
    fn run(mut self) -> Vec<Token> {
        while self.i < self.b.len() {
            self.text_run();
            if self.i >= self.b.len() {
                break;
            }
            // self.i points at a '<' that opens a construct.
            match self.b.get(self.i + 1) {
                Some(c) if c.is_ascii_alphabetic() => self.start_tag(),
                Some(b'/') => self.end_tag(),
                Some(b'!') => self.markup_declaration(),
                Some(b'?') => self.skip_bogus(),
                _ => unreachable!("text_run only stops at construct openers"),
            }
        }
        self.out
    }

    /// Consume text up to the next `<` that opens a real construct.
    fn text_run(&mut self) {
        let start = self.i;
        while self.i < self.b.len() {
            if self.b[self.i] == b'<' {
                match self.b.get(self.i + 1) {
                    Some(c) if c.is_ascii_alphabetic() => break,
                    Some(b'/') | Some(b'!') | Some(b'?') => break,
                    // Bare '<' (or trailing '<' at EOF) is literal text.
                    _ => self.i += 1,
                }
            } else {
                self.i += 1;
            }
        }
        if self.i > start {
            self.out.push(Token::Text {
                bytes: decode_entities(&self.b[start..self.i]),
                raw: false,
            });
        }
    }

    fn scan_name(&mut self) -> String {
        let mut name = String::new();
        while self.i < self.b.len() {
            let c = self.b[self.i];
            if is_ws(c) || c == b'/' || c == b'>' || c == b'=' {
                break;
            }
            name.push(lower_byte_char(c));
            self.i += 1;
        }
        name
    }

    fn skip_ws(&mut self) {
        while self.i < self.b.len() && is_ws(self.b[self.i]) {
            self.i += 1;
        }
    }

    /// Skip to just past the next `>` (or EOF).
    fn skip_bogus(&mut self) {
        while self.i < self.b.len() && self.b[self.i] != b'>' {
            self.i += 1;
        }
        if self.i < self.b.len() {
            self.i += 1;
        }
    }

    fn markup_declaration(&mut self) {
        if self.b[self.i..].starts_with(b"<!--") {
            // Comment: runs to `-->` or EOF; contents dropped.
            self.i += 4;
            while self.i < self.b.len() && !self.b[self.i..].starts_with(b"-->") {
                self.i += 1;
            }
            self.i = (self.i + 3).min(self.b.len());
        } else {
            // Doctype, CDATA and other declarations are structural noise.
            self.skip_bogus();
        }
    }

    fn end_tag(&mut self) {
        self.i += 2; // past "</"
        if self.i >= self.b.len() {
            return;
        }
        if !self.b[self.i].is_ascii_alphabetic() {
            self.skip_bogus();
            return;
        }
        let name = self.scan_name();
        self.skip_bogus(); // end tags carry no attributes; drop anything up to '>'
        self.out.push(Token::EndTag { name });
    }

    fn start_tag(&mut self) {
        self.i += 1; // past '<'
        let name = self.scan_name();
        let mut attrs: Vec<(String, Vec<u8>)> = Vec::new();
        let mut self_closing = false;
        loop {
            self.skip_ws();
            if self.i >= self.b.len() {
                break;
            }
            match self.b[self.i] {
                b'>' => {
                    self.i += 1;
                    break;
                }
                b'/' => {
                    if self.b.get(self.i + 1) == Some(&b'>') {
                        self_closing = true;
                        self.i += 2;
                        break;
                    }
                    self.i += 1;
                }
                b'=' => {
                    // Stray '=' with no attribute name; guarantee progress.
                    self.i += 1;
                }
                _ => {
                    let attr_name = self.scan_name();
                    self.skip_ws();
                    let mut value = Vec::new();
                    if self.i < self.b.len() && self.b[self.i] == b'=' {
                        self.i += 1;
                        self.skip_ws();
                        value = self.attr_value();
                    }
                    if attr_name.is_empty() {
                        continue;
                    }
                    if !attrs.iter().any(|(n, _)| n == &attr_name) {
                        attrs.push((attr_name, value));
                    }
                }
            }
        }
        let raw = is_raw_text_element(&name);
        self.out.push(Token::StartTag {
            name: name.clone(),
            attrs,
            self_closing,
        });
        if raw && !self_closing {
            self.raw_text(&name);
        }
    }

    fn attr_value(&mut self) -> Vec<u8> {
        if self.i >= self.b.len() {
            return Vec::new();
        }
        let quote = self.b[self.i];
        if quote == b'"' || quote == b'\'' {
            self.i += 1;
            let start = self.i;
            while self.i < self.b.len() && self.b[self.i] != quote {
                self.i += 1;
            }
            let value = decode_entities(&self.b[start..self.i]);
            if self.i < self.b.len() {
                self.i += 1;
            }
            value
        } else {
            let start = self.i;
            while self.i < self.b.len() && !is_ws(self.b[self.i]) && self.b[self.i] != b'>' {
                self.i += 1;
            }
            decode_entities(&self.b[start..self.i])
        }
    }

    /// Consume raw text following `name`'s start tag, up to its
    /// case-insensitive end tag (or EOF).
    fn raw_text(&mut self, name: &str) {
        let start = self.i;
        let needle = name.as_bytes();
        let mut end = self.b.len();
        let mut close_at = None;
        let mut j = self.i;
        while j + 2 + needle.len() <= self.b.len() {
            if self.b[j] == b'<'
                && self.b[j + 1] == b'/'
                && self.b[j + 2..j + 2 + needle.len()].eq_ignore_ascii_case(needle)
            {
                let after = self.b.get(j + 2 + needle.len());
                if after.is_none() || matches!(after, Some(&c) if is_ws(c) || c == b'/' || c == b'>')
                {
                    end = j;
                    close_at = Some(j);
                    break;
                }
            }
            j += 1;
        }
        if end > start {
            self.out.push(Token::Text {
                bytes: self.b[start..end].to_vec(),
                raw: true,
            });
        }
        match close_at {
            Some(pos) => {
                self.i = pos;
                self.end_tag_at_raw_close(name);
            }
            None => self.i = self.b.len(),
        }
    }

    fn end_tag_at_raw_close(&mut self, name: &str) {
        // self.i points at "</name"; consume through '>'.
        self.i += 2 + name.len();
        self.skip_bogus();
        self.out.push(Token::EndTag {
            name: name.to_string(),
        });
    }
}
