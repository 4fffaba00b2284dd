use serde::{Deserialize, Serialize};

use crate::attention::{AttentionOptions, AttentionTrainConfig};
use crate::beqrnn::{BeqrnnTopology, BuildOptions, HorizonConfig, RefineConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::nn::{AdamWConfig, StepSchedule};
use crate::prognostics::{AlertConfig, BaselineConfig};
use crate::snn::{LifParams, SnnOptions, SnnTrainConfig};
use crate::stpe::FeatureRecipe;
use crate::synth::{Regime, RegimeSpec, SplitPart, TransitionConfig, WaveVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    pub normal: RegimeSpec,
    pub abnormal: RegimeSpec,
    pub transition: TransitionConfig,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            normal: RegimeSpec::new(
                Regime::Wave {
                    amplitude: 1.0,
                    period: 24.0,
                    phase: 0.0,
                    sigma: 0.02,
                    wavevector: WaveVector { kx: 0.1, ky: 0.05 },
                },
                1,
            ),
            abnormal: RegimeSpec::new(
                Regime::Chaotic {
                    r: 3.9,
                    coupling: 0.3,
                    transient: 100,
                },
                2,
            ),
            transition: TransitionConfig {
                n_segments: 150,
                blend: 200,
                normal_only_fraction: 0.25,
                ..TransitionConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Section {
    pub topology: BeqrnnTopology,
    pub build: BuildOptions,
    pub train: TrainConfig,
    /// Cap on training rows; rows are drawn evenly from the normal pool.
    pub max_rows: usize,
}

impl Default for Stage1Section {
    fn default() -> Self {
        Self {
            topology: BeqrnnTopology::default(),
            build: BuildOptions::default(),
            train: TrainConfig {
                epochs: 40,
                batch_size: 64,
                patience: 6,
                optimizer: AdamWConfig {
                    lr: 1e-3,
                    ..AdamWConfig::default()
                },
                ..TrainConfig::default()
            },
            max_rows: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Section {
    pub attention: AttentionOptions,
    pub attention_train: AttentionTrainConfig,
    /// Cap on attention training steps.
    pub max_steps: usize,
    pub horizon: HorizonConfig,
    pub refine: RefineConfig,
    /// Feature column the refiner forecasts; defaults to the STPE field mean.
    pub target_feature: usize,
    pub max_rows: usize,
}

impl Default for Stage2Section {
    fn default() -> Self {
        Self {
            attention: AttentionOptions::default(),
            attention_train: AttentionTrainConfig {
                epochs: 8,
                patience: 3,
                ..AttentionTrainConfig::default()
            },
            max_steps: 3000,
            horizon: HorizonConfig::medium(),
            refine: RefineConfig::default(),
            target_feature: 64,
            max_rows: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnnSection {
    pub options: SnnOptions,
    pub train: SnnTrainConfig,
    pub lif: LifParams,
    pub max_rows: usize,
}

impl Default for SnnSection {
    fn default() -> Self {
        Self {
            options: SnnOptions {
                hidden: 48,
                ..SnnOptions::default()
            },
            train: SnnTrainConfig {
                epochs: 30,
                optimizer: AdamWConfig {
                    lr: 3e-3,
                    weight_decay: 0.0,
                    schedule: StepSchedule { factor: 0.5, every: 10 },
                    ..AdamWConfig::default()
                },
                ..SnnTrainConfig::default()
            },
            lif: LifParams {
                t_sim: 60,
                ..LifParams::default()
            },
            max_rows: 2400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CapacitySection {
    pub t_single_ms: f64,
    pub machines: usize,
    pub cores: usize,
    pub n_max: usize,
}

impl Default for CapacitySection {
    fn default() -> Self {
        Self {
            t_single_ms: 5507.8,
            machines: 50,
            cores: 64,
            n_max: 12,
        }
    }
}

/// Every setting of a run. The root `seed` overrides each stage seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub features: FeatureRecipe,
    pub stage1: Stage1Section,
    pub stage2: Stage2Section,
    pub snn: SnnSection,
    pub baseline: BaselineConfig,
    pub alerts: AlertConfig,
    /// Split the evaluation report is computed on.
    pub eval_part: SplitPart,
    pub capacity: CapacitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            data: DataSection::default(),
            features: FeatureRecipe::default(),
            stage1: Stage1Section::default(),
            stage2: Stage2Section::default(),
            snn: SnnSection::default(),
            baseline: BaselineConfig::default(),
            alerts: AlertConfig::default(),
            eval_part: SplitPart::Test,
            capacity: CapacitySection::default(),
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            // a tagged variant switch replaces the whole table
            (Some(toml::Value::Table(b)), toml::Value::Table(o))
                if o.get("kind").is_none_or(|k| b.get("kind") == Some(k)) =>
            {
                merge(b, o)
            }
            (Some(toml::Value::Table(b)), toml::Value::Table(mut o)) => {
                if let (None, Some(seed)) = (o.get("seed"), b.get("seed")) {
                    o.insert("seed".into(), seed.clone());
                }
                base.insert(k, toml::Value::Table(o));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// SplitMix64 finalizer over the root seed and a stage tag.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut z = root ^ tag.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3));
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RunConfig {
    /// Parses a config document. Keys that are absent keep the values of
    /// [`RunConfig::default`], also inside partially given tables.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {}", e.message())))?;
        let mut base = toml::Table::try_from(Self::default()).map_err(|e| Error::Parse(format!("config: {e}")))?;
        merge(&mut base, user);
        base.try_into().map_err(|e: toml::de::Error| Error::Parse(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(format!("config: {e}")))
    }

    /// Copy with every stage seed derived from the root seed.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        let s = self.seed;
        c.data.transition.seed = derive_seed(s, "data");
        c.data.normal.seed = derive_seed(s, "data.normal");
        c.data.abnormal.seed = derive_seed(s, "data.abnormal");
        c.features.seed = derive_seed(s, "features");
        c.stage1.build.seed = derive_seed(s, "stage1.build");
        c.stage1.train.seed = derive_seed(s, "stage1.train");
        c.stage2.attention.seed = derive_seed(s, "stage2.attention");
        c.stage2.attention_train.seed = derive_seed(s, "stage2.attention_train");
        c.stage2.refine.seed = derive_seed(s, "stage2.refine");
        c.snn.options.seed = derive_seed(s, "snn.options");
        c.snn.train.seed = derive_seed(s, "snn.train");
        c
    }

    /// Small corpus and short schedules for smoke runs and tests.
    pub fn smoke() -> Self {
        let mut c = Self::default();
        c.data.transition.n_segments = 10;
        c.stage1.train.epochs = 3;
        c.stage1.max_rows = 600;
        c.stage2.attention_train.epochs = 1;
        c.stage2.max_steps = 300;
        c.stage2.refine.epochs = 3;
        c.stage2.max_rows = 600;
        c.snn.train.epochs = 2;
        c.snn.lif.t_sim = 20;
        c.snn.max_rows = 200;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.data.normal.validate()?;
        self.data.abnormal.validate()?;
        self.data.transition.split.validate()?;
        self.features.validate()?;
        self.snn.lif.validate()?;
        if self.stage2.target_feature >= crate::stpe::FEATURE_COUNT {
            return Err(Error::validation(format!(
                "target feature {} outside the {} feature columns",
                self.stage2.target_feature,
                crate::stpe::FEATURE_COUNT
            )));
        }
        if self.stage1.max_rows == 0 || self.stage2.max_rows == 0 || self.stage2.max_steps == 0 || self.snn.max_rows == 0 {
            return Err(Error::validation("row caps must be positive"));
        }
        Ok(())
    }
}
