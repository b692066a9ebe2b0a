//! TOML run configuration. Every key is optional; unknown keys are errors.
//!
//! ```toml
//! seed = 1
//! model = "model1"
//! pbs_power_dbm = 10.0
//!
//! [network]      # n_t, n_p, k, j
//! [powers]       # p_in_dbm, p_max_dbm, sigma2_dbm, gamma_db
//! [channels]     # su, ehr, pu, pbs_su, pbs_ehr (per-entry variances)
//! [radii]        # g, e, ps, pe
//! [model1]       # m, a, b
//! [model2]       # m, c, n, p0
//! [algorithm]    # alpha, tau0, step, epsilon, ...
//! [algorithm.solver]
//! [sweep]        # alphas, gamma_db, realizations, model, csi, base_seed, timing
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::eh::{EhModel, LogisticParams, SensitivityParams};
use crate::error::{Error, Result};
use crate::experiments::{ModelKind, Scenario, SweepSpec};
use crate::network::{
    dbm_to_watt, ChannelVariances, Counts, GenerationConfig, NetworkInstance, PowerLevels, UncertaintyRadii,
};
use crate::optimizer::AlgorithmConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Channel seed for single-instance commands. Sweeps use `sweep.base_seed`.
    pub seed: u64,
    /// Model for single-instance commands.
    pub model: ModelKind,
    pub pbs_power_dbm: f64,
    pub network: Counts,
    pub powers: PowerLevels,
    pub channels: ChannelVariances,
    pub radii: UncertaintyRadii,
    pub model1: LogisticParams,
    pub model2: SensitivityParams,
    pub algorithm: AlgorithmConfig,
    pub sweep: SweepSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            model: ModelKind::Model1,
            pbs_power_dbm: 10.0,
            network: Counts::default(),
            powers: PowerLevels::default(),
            channels: ChannelVariances::default(),
            radii: UncertaintyRadii::default(),
            model1: LogisticParams::default(),
            model2: SensitivityParams::default(),
            algorithm: AlgorithmConfig::default(),
            sweep: SweepSpec::default(),
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().trim().to_string();
            match e.span() {
                Some(span) => {
                    let (line, col) = line_col(text, span.start);
                    Error::Config(format!("line {line}, column {col}: {msg}"))
                }
                None => Error::Config(msg),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.generation().validate()?;
        if self.network.n_t == 0 || self.network.n_p == 0 || self.network.k == 0 || self.network.j == 0 {
            return Err(Error::Config(format!("all network counts must be positive, got {:?}", self.network)));
        }
        for m in [EhModel::Logistic(self.model1), EhModel::Sensitivity(self.model2)] {
            m.validate()?;
            self.algorithm.validate(&m)?;
        }
        self.sweep.validate()
    }

    pub fn generation(&self) -> GenerationConfig {
        GenerationConfig {
            variances: self.channels.clone(),
            radii: self.radii.clone(),
            pbs_power: dbm_to_watt(self.pbs_power_dbm),
            seed: self.seed,
        }
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            generation: self.generation(),
            counts: self.network,
            powers: self.powers,
            logistic: self.model1,
            sensitivity: self.model2,
            algorithm: self.algorithm,
        }
    }

    pub fn eh_model(&self) -> EhModel {
        self.scenario().model(self.model)
    }

    /// The single instance drawn from `seed`.
    pub fn instance(&self) -> Result<NetworkInstance> {
        self.scenario().instance(self.seed, self.powers.gamma_db, crate::experiments::CsiKind::Robust)
    }
}
