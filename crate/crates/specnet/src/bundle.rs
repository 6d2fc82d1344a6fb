//! Single-file model persistence.
//!
//! Layout: a magic+version line, a header-length line, a JSON header
//! (config, vocabulary, tensor table, payload checksum), then raw
//! little-endian f32 tensor blocks in canonical parameter order. Round-trips
//! are bit-exact.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::embed::{Charset, EmbeddingTable, TokenVocabulary};
use crate::error::{Error, Result};
use crate::model::{self, ModelIds};
use crate::nn::ParamStore;

pub const BUNDLE_VERSION: u64 = 1;
const MAGIC: &str = "SPECNET-BUNDLE";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_macro_f1: f64,
    pub train_pages: usize,
    pub val_pages: usize,
}

/// Everything needed to run inference, in memory.
#[derive(Clone, Debug)]
pub struct ModelBundle {
    pub config: TrainConfig,
    pub vocab: TokenVocabulary,
    pub charset_version: String,
    pub table: EmbeddingTable,
    pub store: ParamStore<f32>,
    pub ids: ModelIds,
    pub tau: f64,
    pub metadata: TrainMetadata,
}

#[derive(Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u64,
    config: TrainConfig,
    vocab: TokenVocabulary,
    charset_version: String,
    tau: f64,
    metadata: TrainMetadata,
    tensors: Vec<TensorInfo>,
    payload_len: usize,
    payload_sha256: String,
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut out = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn push_tensor(payload: &mut Vec<u8>, tensors: &mut Vec<TensorInfo>, name: &str, a: &Array2<f32>) {
    tensors.push(TensorInfo {
        name: name.to_string(),
        rows: a.nrows(),
        cols: a.ncols(),
    });
    for &v in a.iter() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize a bundle to bytes.
pub fn bundle_to_bytes(bundle: &ModelBundle) -> Result<Vec<u8>> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    push_tensor(&mut payload, &mut tensors, "table.tag", &bundle.table.tag_vectors);
    push_tensor(&mut payload, &mut tensors, "table.attr", &bundle.table.attr_vectors);
    for param in bundle.store.iter() {
        push_tensor(&mut payload, &mut tensors, &param.name, &param.value);
    }
    let digest = hex_digest(&Sha256::digest(&payload));
    let header = Header {
        version: BUNDLE_VERSION,
        config: bundle.config.clone(),
        vocab: bundle.vocab.clone(),
        charset_version: bundle.charset_version.clone(),
        tau: bundle.tau,
        metadata: bundle.metadata.clone(),
        tensors,
        payload_len: payload.len(),
        payload_sha256: digest,
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| Error::CorruptBundle(format!("header: {e}")))?;
    let mut out = Vec::with_capacity(header_json.len() + payload.len() + 64);
    writeln!(out, "{MAGIC} v{BUNDLE_VERSION}").expect("vec write");
    writeln!(out, "header-bytes {}", header_json.len()).expect("vec write");
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle_to_bytes(bundle)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn take_line<'a>(rest: &mut &'a [u8]) -> Result<&'a str> {
    let pos = rest
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::CorruptBundle("missing newline in preamble".into()))?;
    let line = std::str::from_utf8(&rest[..pos])
        .map_err(|_| Error::CorruptBundle("non-utf8 preamble".into()))?;
    *rest = &rest[pos + 1..];
    Ok(line)
}

/// Deserialize a bundle from bytes, verifying version, length and checksum.
pub fn bundle_from_bytes(bytes: &[u8]) -> Result<ModelBundle> {
    let mut rest = bytes;
    let magic_line = take_line(&mut rest)?;
    let version = magic_line
        .strip_prefix(MAGIC)
        .and_then(|r| r.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u64>().ok())
        .ok_or_else(|| Error::CorruptBundle(format!("bad magic line `{magic_line}`")))?;
    if version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: BUNDLE_VERSION,
        });
    }
    let len_line = take_line(&mut rest)?;
    let header_len: usize = len_line
        .strip_prefix("header-bytes ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::CorruptBundle(format!("bad header-length line `{len_line}`")))?;
    if rest.len() < header_len {
        return Err(Error::CorruptBundle("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&rest[..header_len])
        .map_err(|e| Error::CorruptBundle(format!("header: {e}")))?;
    if header.version != BUNDLE_VERSION {
        return Err(Error::UnsupportedVersion {
            found: header.version,
            supported: BUNDLE_VERSION,
        });
    }
    let payload = &rest[header_len..];
    if payload.len() != header.payload_len {
        return Err(Error::CorruptBundle(format!(
            "payload length {} does not match header {}",
            payload.len(),
            header.payload_len
        )));
    }
    if hex_digest(&Sha256::digest(payload)) != header.payload_sha256 {
        return Err(Error::CorruptBundle("payload checksum mismatch".into()));
    }

    // Rebuild tensors in header order.
    let mut offset = 0usize;
    let mut read_tensor = |info: &TensorInfo| -> Result<Array2<f32>> {
        let count = info.rows * info.cols;
        let bytes_needed = count * 4;
        if offset + bytes_needed > payload.len() {
            return Err(Error::CorruptBundle(format!(
                "tensor `{}` overruns the payload",
                info.name
            )));
        }
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let at = offset + i * 4;
            data.push(f32::from_le_bytes([
                payload[at],
                payload[at + 1],
                payload[at + 2],
                payload[at + 3],
            ]));
        }
        offset += bytes_needed;
        Array2::from_shape_vec((info.rows, info.cols), data)
            .map_err(|e| Error::CorruptBundle(format!("tensor `{}`: {e}", info.name)))
    };

    if header.tensors.len() < 2 {
        return Err(Error::CorruptBundle("missing embedding tensors".into()));
    }
    if header.tensors[0].name != "table.tag" || header.tensors[1].name != "table.attr" {
        return Err(Error::CorruptBundle("unexpected leading tensors".into()));
    }
    let tag_vectors = read_tensor(&header.tensors[0])?;
    let attr_vectors = read_tensor(&header.tensors[1])?;
    if tag_vectors.nrows() != header.vocab.tag_rows()
        || attr_vectors.nrows() != header.vocab.attr_rows()
    {
        return Err(Error::CorruptBundle(
            "embedding tables do not match the vocabulary".into(),
        ));
    }
    let table = EmbeddingTable {
        dim: header.config.feature_dim,
        tag_vectors,
        attr_vectors,
    };

    let charset = Charset::v1();
    let (mut store, ids) = model::register_model_shapes::<f32>(&header.config, &charset);
    let expected: Vec<String> = store.iter().map(|p| p.name.clone()).collect();
    let found: Vec<&str> = header.tensors[2..].iter().map(|t| t.name.as_str()).collect();
    if expected.len() != found.len() || expected.iter().zip(&found).any(|(e, f)| e != f) {
        return Err(Error::CorruptBundle(
            "parameter tensor list does not match the model layout".into(),
        ));
    }
    for (id, info) in store.ids().collect::<Vec<_>>().iter().zip(&header.tensors[2..]) {
        let value = read_tensor(info)?;
        if value.raw_dim() != store.value(*id).raw_dim() {
            return Err(Error::CorruptBundle(format!(
                "tensor `{}` has the wrong shape",
                info.name
            )));
        }
        *store.value_mut(*id) = value;
    }
    if offset != payload.len() {
        return Err(Error::CorruptBundle("trailing payload bytes".into()));
    }

    Ok(ModelBundle {
        config: header.config,
        vocab: header.vocab,
        charset_version: header.charset_version,
        table,
        store,
        ids,
        tau: header.tau,
        metadata: header.metadata,
    })
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    bundle_from_bytes(&bytes)
}
