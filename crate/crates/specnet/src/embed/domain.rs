//! Character-level recurrent domain encoder.
//!
//! Domains are lowercased character sequences over a fixed ~60-symbol
//! alphabet (shipped as a versioned data file); out-of-alphabet characters
//! map to a dedicated unknown symbol. A single-layer LSTM (stackable via
//! config) runs left-to-right from a zero state and the final hidden state
//! becomes the domain node's feature vector.

use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{ParamId, ParamStore, Scalar, Tape, Var};

pub const CHARSET_VERSION: &str = "v1";
const CHARSET_V1: &str = include_str!("../../data/domain_charset_v1.txt");

/// Fixed domain alphabet plus one unknown symbol (the last row of the
/// character table).
#[derive(Clone, Debug)]
pub struct Charset {
    chars: Vec<char>,
}

impl Default for Charset {
    fn default() -> Self {
        Self::v1()
    }
}

impl Charset {
    pub fn v1() -> Self {
        let chars = CHARSET_V1
            .lines()
            .filter_map(|l| l.chars().next())
            .collect();
        Charset { chars }
    }

    /// Symbols including the unknown token.
    pub fn size(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn index_of(&self, c: char) -> usize {
        self.chars
            .iter()
            .position(|&k| k == c)
            .unwrap_or(self.chars.len())
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }
}

/// Parameter ids of the domain encoder: character table plus one fused
/// (W, b) pair per recurrent layer. Gate order in the fused weight is
/// input, forget, cell, output; the forget-gate bias initializes to one.
#[derive(Clone, Debug)]
pub struct DomainEncoderIds {
    pub char_table: ParamId,
    pub layers: Vec<(ParamId, ParamId)>,
}

pub fn init_domain_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    charset: &Charset,
    dim: usize,
    layers: usize,
    rng: &mut ChaCha8Rng,
) -> DomainEncoderIds {
    let table_bound = 0.5 / dim as f64;
    let char_table = store.register(
        "domain.char_table",
        Array2::from_shape_fn((charset.size(), dim), |_| {
            T::from_f64(rng.random_range(-table_bound..table_bound))
        }),
    );
    let mut layer_ids = Vec::with_capacity(layers);
    for l in 0..layers {
        let fan_in = 2 * dim;
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = store.register(
            format!("domain.lstm{l}.w"),
            Array2::from_shape_fn((4 * dim, 2 * dim), |_| {
                T::from_f64(rng.random_range(-bound..bound))
            }),
        );
        let mut bias = Array2::zeros((1, 4 * dim));
        for j in dim..2 * dim {
            bias[(0, j)] = T::one(); // forget gate
        }
        let b = store.register(format!("domain.lstm{l}.b"), bias);
        layer_ids.push((w, b));
    }
    DomainEncoderIds {
        char_table,
        layers: layer_ids,
    }
}

/// Record the encoder on a tape and return the final hidden state (1, F).
///
/// The empty domain returns the documented zero-vector sentinel without
/// touching the recurrent cell.
pub fn encode_domain_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &DomainEncoderIds,
    charset: &Charset,
    domain: &str,
) -> Result<Var> {
    let dim = store.value(ids.char_table).ncols();
    let domain = domain.trim().to_lowercase();
    if domain.is_empty() {
        return Ok(tape.zeros(1, dim));
    }
    let table = tape.param(store, ids.char_table);
    let mut inputs: Vec<Var> = domain
        .chars()
        .map(|c| tape.gather_rows(table, &[charset.index_of(c)]))
        .collect::<Result<_>>()?;

    for &(w_id, b_id) in &ids.layers {
        let w = tape.param(store, w_id);
        let b = tape.param(store, b_id);
        let mut h = tape.zeros(1, dim);
        let mut c = tape.zeros(1, dim);
        let mut outputs = Vec::with_capacity(inputs.len());
        for &x in &inputs {
            let xh = tape.concat_cols(x, h)?;
            let gates = tape.linear(xh, w, b)?;
            let i_gate = tape.slice_cols(gates, 0, dim)?;
            let f_gate = tape.slice_cols(gates, dim, dim)?;
            let g_gate = tape.slice_cols(gates, 2 * dim, dim)?;
            let o_gate = tape.slice_cols(gates, 3 * dim, dim)?;
            let i_act = tape.sigmoid(i_gate);
            let f_act = tape.sigmoid(f_gate);
            let g_act = tape.tanh(g_gate);
            let o_act = tape.sigmoid(o_gate);
            let keep = tape.mul(f_act, c)?;
            let write = tape.mul(i_act, g_act)?;
            c = tape.add(keep, write)?;
            let c_tanh = tape.tanh(c);
            h = tape.mul(o_act, c_tanh)?;
            outputs.push(h);
        }
        inputs = outputs;
    }
    Ok(*inputs.last().expect("domain is non-empty"))
}

/// Forward-only convenience: encode a domain with `f32` parameters.
pub fn encode_domain(
    store: &ParamStore<f32>,
    ids: &DomainEncoderIds,
    charset: &Charset,
    domain: &str,
) -> Result<Array2<f32>> {
    let mut tape = Tape::new();
    let out = encode_domain_on(&mut tape, store, ids, charset, domain)?;
    Ok(tape.value(out).clone())
}

/// Seeded random encoder for tests.
pub fn random_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    charset: &Charset,
    dim: usize,
    layers: usize,
    seed: u64,
) -> DomainEncoderIds {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    init_domain_encoder(store, charset, dim, layers, &mut rng)
}
