use std::path::{Path, PathBuf};

use evict::catalog::ClassCatalog;
use evict::hjb::{HjbConfig, PenaltyConfig};
use evict::neural::LrSchedule;
use evict::pcst::BudgetParams;
use evict::policies::PolicyConfig;
use evict::rbm::ModelParams;
use evict::sim::SimConfig;
use evict::surrogate::SurrogateConfig;
use evict::synth::{CalibrationTargets, Corpus};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// Cost and scaling constants of the control model. `h = c2 / c1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub h: f64,
    pub p: f64,
    pub c1: f64,
    pub deadline_days: f64,
    pub kappa: f64,
    /// one cancellation rate for every class; the corpus target when absent
    pub cancel_rate: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { h: 4.0, p: 1.0, c1: 0.005, deadline_days: 72.0, kappa: 500.0, cancel_rate: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateStage {
    pub samples: usize,
    /// fraction of samples held out for the reported test error
    pub holdout: f64,
    /// h used for the no-deadline prize range of the samples; set it to the
    /// largest h of an h sweep
    pub prize_cap_h: Option<f64>,
    pub routing: BudgetParams,
    pub train: SurrogateConfig,
}

impl Default for SurrogateStage {
    fn default() -> Self {
        SurrogateStage {
            samples: 2000,
            holdout: 0.1,
            prize_cap_h: None,
            routing: BudgetParams::default(),
            train: SurrogateConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbStage {
    pub hidden: Vec<usize>,
    pub horizon: f64,
    pub dt: f64,
    pub batch: usize,
    pub iterations: usize,
    pub schedule: LrSchedule,
    pub penalty: bool,
}

impl Default for HjbStage {
    fn default() -> Self {
        let s = HjbConfig::standard(vec![], None);
        HjbStage {
            hidden: s.hidden,
            horizon: s.horizon,
            dt: s.dt,
            batch: s.batch,
            iterations: s.iterations,
            schedule: s.schedule,
            penalty: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub h: Vec<f64>,
    pub vehicles: Vec<f64>,
    pub hours: Vec<f64>,
    pub extension: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            h: (1..=10).map(f64::from).collect(),
            vehicles: vec![3.0, 4.0, 5.0],
            hours: vec![4.0, 5.0, 6.0],
            extension: vec![10.0, 20.0, 30.0],
        }
    }
}

fn default_policies() -> Vec<PolicyConfig> {
    vec![PolicyConfig::threshold(), PolicyConfig::urgency(), PolicyConfig::proposed()]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// artifact directory, relative to the config file
    pub out_dir: PathBuf,
    pub synth: CalibrationTargets,
    pub model: ModelConfig,
    pub surrogate: SurrogateStage,
    pub hjb: HjbStage,
    pub sim: SimConfig,
    pub policies: Vec<PolicyConfig>,
    pub sweep: SweepConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            out_dir: PathBuf::from("out"),
            synth: CalibrationTargets::default(),
            model: ModelConfig::default(),
            surrogate: SurrogateStage::default(),
            hjb: HjbStage::default(),
            sim: SimConfig::default(),
            policies: default_policies(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Stage streams derived from the master seed.
#[derive(Clone, Copy, Debug)]
pub enum Stage {
    Synth = 0,
    Samples = 1,
    SurrogateTrain = 2,
    Hjb = 3,
    Sim = 4,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        let base = path.parent().unwrap_or(Path::new("."));
        let out = base.join(&cfg.out_dir);
        Ok((cfg, out))
    }

    pub fn validate(&self) -> Result<(), Failure> {
        let m = &self.model;
        if !(m.h > 0.0) || !(m.c1 >= 0.0) || !(m.kappa > 0.0) || !(m.deadline_days > 0.0) {
            return Err(Failure::Config("model needs h > 0, c1 >= 0, kappa > 0 and a positive deadline".into()));
        }
        if !(0.0..1.0).contains(&self.surrogate.holdout) {
            return Err(Failure::Config("surrogate.holdout must lie in [0, 1)".into()));
        }
        if self.policies.is_empty() {
            return Err(Failure::Config("at least one policy is required".into()));
        }
        self.synth.validate().map_err(Failure::config)?;
        self.sim.validate().map_err(Failure::config)?;
        for p in &self.policies {
            p.validate(self.synth.k).map_err(Failure::config)?;
        }
        self.model_params(m.h).map_err(Failure::config)?;
        Ok(())
    }

    /// Hex SHA-256 of the config as serialized, with the output directory blanked
    /// so artifacts do not depend on where they are written.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stage_seed(&self, stage: Stage) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (stage as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
    }

    pub fn cancel_rate(&self) -> f64 {
        self.model.cancel_rate.unwrap_or(self.synth.cancel_rate)
    }

    pub fn model_params(&self, h: f64) -> evict::Result<ModelParams<f64>> {
        let m = &self.model;
        ModelParams::new(
            self.synth.lambda.clone(),
            self.synth.sigma.clone(),
            vec![self.cancel_rate(); self.synth.dim()],
            m.deadline_days,
            m.p,
            m.c1,
            h * m.c1,
            m.kappa,
        )
    }

    pub fn catalog(&self, corpus: &Corpus, h: f64) -> ClassCatalog {
        let gamma = vec![self.cancel_rate(); self.synth.dim()];
        corpus.catalog(&self.synth.n_mean, &self.synth.n_max, &gamma, self.model.p, h * self.model.c1, self.synth.depot)
    }

    pub fn hjb_config(&self, h: f64) -> HjbConfig {
        let k = self.synth.k;
        let penalty = self.hjb.penalty.then(|| PenaltyConfig::standard(&self.synth.n_max[k..], h));
        let s = &self.hjb;
        HjbConfig {
            hidden: s.hidden.clone(),
            horizon: s.horizon,
            dt: s.dt,
            batch: s.batch,
            iterations: s.iterations,
            schedule: s.schedule.clone(),
            penalty,
            z0: self.synth.n_mean.clone(),
            seed: self.stage_seed(Stage::Hjb),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig { seed: self.stage_seed(Stage::Sim), cancel_rate: self.cancel_rate(), ..self.sim.clone() }
    }
}
