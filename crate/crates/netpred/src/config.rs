//! TOML run configuration shared by the CLI subcommands.
//!
//! ```toml
//! [plant]
//! A = [[0.0, 1.0], [0.0, 0.0]]   # row-major
//! B = [[0.0], [1.0]]
//!
//! [gain]
//! K = [[-1.0, -2.0]]
//!
//! [delays]
//! r0 = 0.2
//! r1 = 0.2
//! eta_max = 0.01
//! mu_max = 0.01
//! h = 0.0369
//!
//! [trigger]
//! omega = [[1.0]]
//! sigma = 0.0
//! wait = 0.0369
//!
//! scenario = "SampledPredictor"
//!
//! [sim]
//! horizon = 20.0
//! x0 = [0.98, 0.0, 0.2, 0.0]
//! seed = 1
//!
//! [certify]
//! alpha = 0.01
//! method = "lemma1"
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::Family;
use crate::model::{DelayProfile, Gain, LtiPlant, Scenario, TriggerParams};
use crate::simulator::SimConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub plant: PlantSection,
    pub gain: GainSection,
    pub delays: DelayProfile,
    pub trigger: TriggerSection,
    pub scenario: Scenario,
    pub sim: SimSection,
    pub certify: Option<CertifySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantSection {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainSection {
    #[serde(rename = "K")]
    pub k: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriggerSection {
    pub omega: Vec<Vec<f64>>,
    pub sigma: f64,
    pub wait: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimSection {
    pub horizon: f64,
    pub x0: Vec<f64>,
    pub seed: u64,
    #[serde(default = "default_log_step")]
    pub log_step: f64,
}

fn default_log_step() -> f64 {
    0.01
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifySection {
    pub alpha: f64,
    pub method: Family,
}

fn rows_to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Config(format!("{what}: empty matrix")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("{what}: ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn plant(&self) -> Result<LtiPlant> {
        LtiPlant::new(rows_to_matrix(&self.plant.a, "plant.A")?, rows_to_matrix(&self.plant.b, "plant.B")?)
    }

    pub fn gain(&self) -> Result<Gain> {
        Gain::for_plant(rows_to_matrix(&self.gain.k, "gain.K")?, &self.plant()?)
    }

    pub fn trigger_params(&self) -> Result<TriggerParams> {
        TriggerParams::new(
            rows_to_matrix(&self.trigger.omega, "trigger.omega")?,
            self.trigger.sigma,
            self.trigger.wait,
        )
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        SimConfig::new(self.sim.horizon, self.sim.x0.clone(), self.sim.seed)?
            .with_log_step(self.sim.log_step)
    }
}
