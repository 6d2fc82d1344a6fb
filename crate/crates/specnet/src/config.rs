//! Training configuration: Table-style defaults, hard validity checks, and
//! tuning-range warnings.
//!
//! Loads from a TOML key-value file; unknown keys are errors. Genuinely
//! invalid values are rejected naming the offending key, while values that
//! are valid but outside the documented tuning ranges only produce warnings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pipeline ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Full pipeline.
    None,
    /// Drop the classification loss; decide by the threshold probability.
    NoClassificationLoss,
    /// Drop the reconstruction-error loss; decide by the MLP probability.
    NoReconstructionLoss,
    /// Drop the decoder; the error-MLP reads the encoded root state.
    NoDecoder,
    /// Drop the autoencoder; the GCN output is globally mean-pooled into
    /// the MLP.
    NoAutoencoder,
    /// Drop the GCN stack; pooling applies to the normalized raw features.
    NoGcn,
    /// Drop the domain node and encoder.
    NoDomain,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::None,
        Ablation::NoClassificationLoss,
        Ablation::NoReconstructionLoss,
        Ablation::NoDecoder,
        Ablation::NoAutoencoder,
        Ablation::NoGcn,
        Ablation::NoDomain,
    ];

    pub fn parse(s: &str) -> Result<Ablation> {
        match s {
            "none" => Ok(Ablation::None),
            "no_classification_loss" => Ok(Ablation::NoClassificationLoss),
            "no_reconstruction_loss" => Ok(Ablation::NoReconstructionLoss),
            "no_decoder" => Ok(Ablation::NoDecoder),
            "no_autoencoder" | "no_ae" => Ok(Ablation::NoAutoencoder),
            "no_gcn" | "no_base_gnn" => Ok(Ablation::NoGcn),
            "no_domain" => Ok(Ablation::NoDomain),
            other => Err(Error::Config(format!("unknown ablation variant `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoClassificationLoss => "no_classification_loss",
            Ablation::NoReconstructionLoss => "no_reconstruction_loss",
            Ablation::NoDecoder => "no_decoder",
            Ablation::NoAutoencoder => "no_autoencoder",
            Ablation::NoGcn => "no_gcn",
            Ablation::NoDomain => "no_domain",
        }
    }

    /// Does the variant reconstruct features (and therefore have an epsilon)?
    pub fn has_reconstruction(self) -> bool {
        !matches!(self, Ablation::NoDecoder | Ablation::NoAutoencoder)
    }

    /// Does the decision use the threshold probability?
    pub fn uses_prob1(self) -> bool {
        matches!(
            self,
            Ablation::None | Ablation::NoDomain | Ablation::NoGcn | Ablation::NoClassificationLoss
        )
    }

    /// Does the decision use the MLP probability?
    pub fn uses_prob2(self) -> bool {
        !matches!(self, Ablation::NoClassificationLoss)
    }

    /// Is the reconstruction loss term active during training?
    pub fn trains_l1(self) -> bool {
        self.has_reconstruction() && !matches!(self, Ablation::NoReconstructionLoss)
    }

    /// Is the classification loss term active during training?
    pub fn trains_l2(self) -> bool {
        self.uses_prob2()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Feature dimension F.
    pub feature_dim: usize,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    pub lstm_layers: usize,
    /// Must equal `feature_dim`: the domain vector is an ordinary node feature.
    pub lstm_hidden: usize,
    pub pool_ratio: f64,
    /// Output width of the autoencoder linear layers; must equal `feature_dim`.
    pub ae_width: usize,
    /// Hidden widths of the error-MLP (the output logit is implicit).
    pub mlp_hidden: Vec<usize>,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub epochs: usize,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
    pub domain_features: bool,
    /// Sigmoid steepness for the threshold probability. Unset picks the
    /// validated default: 1.0 with domain features, 10.0 without.
    pub beta: Option<f64>,
    pub leaky_slope: f64,
    pub lr_floor: f64,
    /// Initial cosine cycle length in epochs.
    pub lr_cycle: usize,
    pub lr_cycle_mult: usize,
    pub max_nodes: usize,
    /// Whether the root row contributes to the reconstruction error.
    pub root_in_error: bool,
    pub ablation: Ablation,
    pub w2v_epochs: usize,
    pub w2v_negatives: usize,
    pub w2v_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 42,
            feature_dim: 32,
            gcn_layers: 3,
            gcn_hidden: 64,
            lstm_layers: 1,
            lstm_hidden: 32,
            pool_ratio: 0.20,
            ae_width: 32,
            mlp_hidden: vec![16],
            batch_size: 8,
            initial_lr: 1e-3,
            epochs: 100,
            patience: 10,
            domain_features: true,
            beta: None,
            leaky_slope: 0.01,
            lr_floor: 1e-5,
            lr_cycle: 10,
            lr_cycle_mult: 2,
            max_nodes: crate::ingest::DEFAULT_MAX_NODES,
            root_in_error: true,
            ablation: Ablation::None,
            w2v_epochs: 5,
            w2v_negatives: 5,
            w2v_lr: 0.025,
        }
    }
}

impl TrainConfig {
    pub fn effective_beta(&self) -> f64 {
        self.beta
            .unwrap_or(if self.domain_enabled() { 1.0 } else { 10.0 })
    }

    /// Domain features can be disabled both by config and by ablation.
    pub fn domain_enabled(&self) -> bool {
        self.domain_features && self.ablation != Ablation::NoDomain
    }

    pub fn with_ablation(&self, ablation: Ablation) -> TrainConfig {
        TrainConfig {
            ablation,
            ..self.clone()
        }
    }

    /// Hard validity check; returns tuning-range warnings on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        fn reject(key: &str, detail: String) -> Result<Vec<String>> {
            Err(Error::Config(format!("{key}: {detail}")))
        }
        if self.feature_dim == 0 {
            return reject("feature_dim", "must be positive".into());
        }
        if self.gcn_layers == 0 {
            return reject("gcn_layers", "must be at least 1".into());
        }
        if self.gcn_hidden == 0 {
            return reject("gcn_hidden", "must be positive".into());
        }
        if self.lstm_layers == 0 {
            return reject("lstm_layers", "must be at least 1".into());
        }
        if self.lstm_hidden != self.feature_dim {
            return reject(
                "lstm_hidden",
                format!(
                    "must equal feature_dim ({}) so the domain vector is an ordinary node feature",
                    self.feature_dim
                ),
            );
        }
        if self.ae_width != self.feature_dim {
            return reject(
                "ae_width",
                format!("must equal feature_dim ({})", self.feature_dim),
            );
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return reject("pool_ratio", "must lie in (0, 1]".into());
        }
        if self.mlp_hidden.contains(&0) {
            return reject("mlp_hidden", "hidden widths must be positive".into());
        }
        if self.mlp_hidden.len() > 2 {
            return reject("mlp_hidden", "at most two hidden layers supported".into());
        }
        if self.batch_size == 0 {
            return reject("batch_size", "must be positive".into());
        }
        if !(self.initial_lr > 0.0 && self.initial_lr.is_finite()) {
            return reject("initial_lr", "must be positive and finite".into());
        }
        if self.epochs == 0 {
            return reject("epochs", "must be at least 1".into());
        }
        if let Some(beta) = self.beta {
            if !(beta > 0.0 && beta.is_finite()) {
                return reject("beta", "must be positive and finite".into());
            }
        }
        if !(self.leaky_slope >= 0.0 && self.leaky_slope < 1.0) {
            return reject("leaky_slope", "must lie in [0, 1)".into());
        }
        if !(self.lr_floor >= 0.0 && self.lr_floor <= self.initial_lr) {
            return reject("lr_floor", "must lie in [0, initial_lr]".into());
        }
        if self.lr_cycle == 0 {
            return reject("lr_cycle", "must be at least 1".into());
        }
        if self.lr_cycle_mult == 0 {
            return reject("lr_cycle_mult", "must be at least 1".into());
        }
        if self.max_nodes == 0 {
            return reject("max_nodes", "must be positive".into());
        }
        if self.w2v_epochs == 0 || self.w2v_negatives == 0 {
            return reject("w2v_epochs/w2v_negatives", "must be positive".into());
        }
        if !(self.w2v_lr > 0.0 && self.w2v_lr.is_finite()) {
            return reject("w2v_lr", "must be positive and finite".into());
        }

        // Documented tuning ranges; deviations are legal but worth flagging.
        let mut warnings = Vec::new();
        let mut warn = |key: &str, detail: String| {
            warnings.push(format!("{key}: {detail} (outside the documented tuning range)"));
        };
        if ![16, 32, 64].contains(&self.feature_dim) {
            warn("feature_dim", format!("{}", self.feature_dim));
        }
        if !(1..=6).contains(&self.gcn_layers) {
            warn("gcn_layers", format!("{}", self.gcn_layers));
        }
        if ![16, 32, 64, 128].contains(&self.gcn_hidden) {
            warn("gcn_hidden", format!("{}", self.gcn_hidden));
        }
        if !(1..=3).contains(&self.lstm_layers) {
            warn("lstm_layers", format!("{}", self.lstm_layers));
        }
        let ratio_pct = self.pool_ratio * 100.0;
        if ![5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
            .iter()
            .any(|&r| (ratio_pct - r).abs() < 1e-9)
        {
            warn("pool_ratio", format!("{}", self.pool_ratio));
        }
        if ![vec![16], vec![32], vec![16, 8], vec![32, 16]].contains(&self.mlp_hidden) {
            warn("mlp_hidden", format!("{:?}", self.mlp_hidden));
        }
        if ![8, 16, 32, 64].contains(&self.batch_size) {
            warn("batch_size", format!("{}", self.batch_size));
        }
        if ![1e-2, 1e-3, 1e-4]
            .iter()
            .any(|&lr| (self.initial_lr - lr).abs() / lr < 1e-9)
        {
            warn("initial_lr", format!("{}", self.initial_lr));
        }
        Ok(warnings)
    }

    pub fn from_toml_str(s: &str) -> Result<(TrainConfig, Vec<String>)> {
        let cfg: TrainConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse error: {e}")))?;
        let warnings = cfg.validate()?;
        Ok((cfg, warnings))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<(TrainConfig, Vec<String>)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
