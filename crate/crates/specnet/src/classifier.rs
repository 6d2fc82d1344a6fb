//! Reconstruction errors become a verdict: supervised reconstruction loss,
//! threshold-calibrated probability, error-MLP probability, ensemble
//! decision, and the uncertainty-weighted joint loss.
//!
//! Internally 1 means benign and 0 means phishing (the inverse of the
//! external dataset convention); both probabilities are benign-oriented so
//! their average is coherent.

use ndarray::Array2;
use rand::RngExt;
#[cfg(test)]
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Scalar, Tape, Var};

/// Training-side label: 1 = benign, 0 = phishing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct InternalLabel(u8);

impl InternalLabel {
    pub fn from_external(label: u8) -> Self {
        debug_assert!(label <= 1);
        InternalLabel(1 - label)
    }

    pub fn to_external(self) -> u8 {
        1 - self.0
    }

    pub fn benign() -> Self {
        InternalLabel(1)
    }

    pub fn phishing() -> Self {
        InternalLabel(0)
    }

    pub fn is_benign(self) -> bool {
        self.0 == 1
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

/// Supervised reconstruction loss: y*eps - (1-y)*log(1 - e^(-eps)), with
/// e^(-eps) clamped below one so the phishing branch stays finite at eps=0.
pub fn loss_reconstruction_on<T: Scalar>(
    tape: &mut Tape<T>,
    eps: Var,
    y: InternalLabel,
) -> Result<Var> {
    if y.is_benign() {
        return Ok(eps);
    }
    // Clamp gap: 1e-12 per the contract, widened to a representable gap for
    // narrower float types (f32 cannot express 1 - 1e-12).
    let gap = T::from_f64(1e-12).max(T::epsilon() * T::from_f64(8.0));
    let neg_eps = tape.neg(eps);
    let decay = tape.exp(neg_eps);
    let clamped = tape.clamp_max(decay, T::one() - gap);
    let neg = tape.neg(clamped);
    let one_minus = tape.add_scalar(neg, T::one());
    let log = tape.ln(one_minus);
    Ok(tape.neg(log))
}

/// Benign-oriented probability from the calibrated threshold:
/// 1 / (1 + e^(beta * (eps - tau))).
pub fn prob_threshold(eps: f64, tau: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    1.0 / (1.0 + (beta * (eps - tau)).exp())
}

/// Error-MLP parameters: hidden stack plus the single-logit output layer.
#[derive(Clone, Debug)]
pub struct ErrorMlpIds {
    pub layers: Vec<(ParamId, ParamId)>,
}

pub fn init_error_mlp<T: Scalar>(
    store: &mut ParamStore<T>,
    input_dim: usize,
    hidden: &[usize],
    rng: &mut ChaCha8Rng,
) -> ErrorMlpIds {
    let mut dims = vec![input_dim];
    dims.extend_from_slice(hidden);
    dims.push(1);
    let layers = dims
        .windows(2)
        .enumerate()
        .map(|(i, d)| {
            let (d_in, d_out) = (d[0], d[1]);
            let bound = (6.0 / d_in as f64).sqrt();
            let w = store.register(
                format!("mlp{i}.w"),
                Array2::from_shape_fn((d_out, d_in), |_| {
                    T::from_f64(rng.random_range(-bound..bound))
                }),
            );
            let b = store.register(format!("mlp{i}.b"), Array2::zeros((1, d_out)));
            (w, b)
        })
        .collect();
    ErrorMlpIds { layers }
}

/// prob2 = sigmoid(W_out * leaky(... W_1 * delta + b_1 ...) + b_out).
pub fn error_mlp_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    ids: &ErrorMlpIds,
    delta: Var,
    slope: T,
) -> Result<Var> {
    let mut h = delta;
    let last = ids.layers.len() - 1;
    for (i, &(w_id, b_id)) in ids.layers.iter().enumerate() {
        let w = tape.param(store, w_id);
        let b = tape.param(store, b_id);
        h = tape.linear(h, w, b)?;
        if i < last {
            h = tape.leaky_relu(h, slope);
        }
    }
    Ok(tape.sigmoid(h))
}

/// Binary cross entropy against the internal label; prob2 is clamped into
/// [1e-7, 1 - 1e-7] so both branches stay finite. The gradient path stays on
/// the probability itself (no rounding).
pub fn loss_classification_on<T: Scalar>(
    tape: &mut Tape<T>,
    prob2: Var,
    y: InternalLabel,
) -> Result<Var> {
    let lo = T::from_f64(1e-7);
    let hi = T::one() - T::from_f64(1e-7);
    let p = tape.clamp(prob2, lo, hi);
    let log = if y.is_benign() {
        tape.ln(p)
    } else {
        let neg = tape.neg(p);
        let one_minus = tape.add_scalar(neg, T::one());
        tape.ln(one_minus)
    };
    Ok(tape.neg(log))
}

/// Uncertainty-weighted multitask objective: sum of L_i * e^(-w_i) + w_i
/// over the active loss terms; the weights receive gradients.
pub fn multitask_on<T: Scalar>(
    tape: &mut Tape<T>,
    store: &ParamStore<T>,
    terms: &[(Var, ParamId)],
) -> Result<Var> {
    debug_assert!(!terms.is_empty());
    let mut total: Option<Var> = None;
    for &(loss, w_id) in terms {
        let w = tape.param(store, w_id);
        let neg_w = tape.neg(w);
        let scale = tape.exp(neg_w);
        let weighted = tape.mul(loss, scale)?;
        let term = tape.add(weighted, w)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    Ok(total.expect("at least one loss term"))
}

/// Ensemble rule: mean probability <= 0.5 maps to internal 0 (phishing).
/// Returns (internal prediction, external verdict).
pub fn ensemble_decide(prob1: f64, prob2: f64) -> (u8, u8) {
    let internal = if (prob1 + prob2) / 2.0 <= 0.5 { 0 } else { 1 };
    (internal, 1 - internal)
}

/// Decision from a single benign-oriented probability (ablation variants).
pub fn single_prob_decide(prob: f64) -> (u8, u8) {
    let internal = if prob <= 0.5 { 0 } else { 1 };
    (internal, 1 - internal)
}

/// F1 of the rule "eps <= tau => benign" with benign as the positive class.
fn threshold_rule_f1(eps: &[f64], labels: &[InternalLabel], tau: f64) -> f64 {
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut fn_ = 0usize;
    for (&e, &l) in eps.iter().zip(labels) {
        let predicted_benign = e <= tau;
        match (predicted_benign, l.is_benign()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Pick the threshold maximizing the benign-class F1 of "eps <= tau" over
/// candidate midpoints between consecutive distinct errors plus sentinels
/// below the minimum and above the maximum. Ties break toward smaller tau.
pub fn calibrate_threshold(eps: &[f64], labels: &[InternalLabel]) -> Result<(f64, f64)> {
    if eps.len() != labels.len() || eps.is_empty() {
        return Err(Error::CalibrationDegenerate);
    }
    let benign = labels.iter().filter(|l| l.is_benign()).count();
    if benign == 0 || benign == labels.len() {
        return Err(Error::CalibrationDegenerate);
    }
    let mut distinct: Vec<f64> = eps.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite errors"));
    distinct.dedup();
    let mut candidates = Vec::with_capacity(distinct.len() + 1);
    candidates.push(distinct[0] - 1.0);
    for w in distinct.windows(2) {
        candidates.push((w[0] + w[1]) / 2.0);
    }
    candidates.push(distinct[distinct.len() - 1] + 1.0);

    let mut best_tau = candidates[0];
    let mut best_f1 = threshold_rule_f1(eps, labels, best_tau);
    for &tau in &candidates[1..] {
        let f1 = threshold_rule_f1(eps, labels, tau);
        if f1 > best_f1 {
            best_f1 = f1;
            best_tau = tau;
        }
    }
    Ok((best_tau, best_f1))
}
