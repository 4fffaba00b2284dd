use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate, RegimeSpec};
use crate::error::{Error, Result};
use crate::grid::GridSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Split {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split fractions {parts:?} must be in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Part for segment `k` of `n`, assigned in contiguous blocks.
    pub fn part(&self, k: usize, n: usize) -> SplitPart {
        let n_train = (self.train * n as f64).round() as usize;
        let n_val = ((self.train + self.val) * n as f64).round() as usize;
        if k < n_train {
            SplitPart::Train
        } else if k < n_val {
            SplitPart::Val
        } else {
            SplitPart::Test
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionConfig {
    pub width: usize,
    pub height: usize,
    pub n_steps: usize,
    pub n_segments: usize,
    /// Inclusive range the transition step is drawn from.
    pub transition_window: (usize, usize),
    /// Cross-fade length centred on the transition step.
    pub blend: usize,
    /// Fraction of segments that never leave the normal regime.
    pub normal_only_fraction: f64,
    pub split: Split,
    pub seed: u64,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            width: 8,
            height: 8,
            n_steps: 600,
            n_segments: 100,
            transition_window: (300, 450),
            blend: 10,
            normal_only_fraction: 0.0,
            split: Split::default(),
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    #[serde(skip)]
    pub grid: Option<GridSeries>,
    pub normal: RegimeSpec,
    pub abnormal: RegimeSpec,
    pub transition_step: Option<usize>,
    pub part: SplitPart,
}

impl Segment {
    pub fn grid(&self) -> &GridSeries {
        self.grid.as_ref().expect("segment grid loaded")
    }

    pub fn label_at(&self, t: usize) -> Label {
        match self.transition_step {
            Some(ts) if t >= ts => Label::Abnormal,
            _ => Label::Normal,
        }
    }

    /// Overall label: abnormal if the segment ever changes regime.
    pub fn label(&self) -> Label {
        if self.transition_step.is_some() {
            Label::Abnormal
        } else {
            Label::Normal
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    pub config: TransitionConfig,
    pub segments: Vec<Segment>,
}

/// Blend weight of the abnormal regime at step `t`.
fn blend_weight(t: usize, ts: usize, blend: usize) -> f64 {
    if blend == 0 {
        return if t >= ts { 1.0 } else { 0.0 };
    }
    let start = ts as f64 - blend as f64 / 2.0;
    ((t as f64 - start) / blend as f64).clamp(0.0, 1.0)
}

pub fn make_transition_dataset(
    normal: &RegimeSpec,
    abnormal: &RegimeSpec,
    cfg: &TransitionConfig,
) -> Result<LabeledDataset> {
    normal.validate()?;
    abnormal.validate()?;
    cfg.split.validate()?;
    let (lo, hi) = cfg.transition_window;
    if lo > hi || hi >= cfg.n_steps {
        return Err(Error::validation(format!(
            "transition window [{lo}, {hi}] empty or beyond {} steps",
            cfg.n_steps
        )));
    }
    if cfg.n_segments == 0 {
        return Err(Error::validation("n_segments must be at least 1"));
    }
    if !(0.0..=1.0).contains(&cfg.normal_only_fraction) {
        return Err(Error::validation("normal_only_fraction must lie in [0, 1]"));
    }
    let n_normal_only = (cfg.normal_only_fraction * cfg.n_segments as f64).round() as usize;
    let mut segments = Vec::with_capacity(cfg.n_segments);
    for k in 0..cfg.n_segments {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(k as u64);
        let normal_k = normal.with_seed(rng.random());
        let abnormal_k = abnormal.with_seed(rng.random());
        let ts = rng.random_range(lo..=hi);
        // normal-only segments are spread evenly over the index range
        let normal_only = n_normal_only > 0 && (k * n_normal_only) % cfg.n_segments < n_normal_only;
        let transition_step = (!normal_only).then_some(ts);
        let grid = build_grid(&normal_k, &abnormal_k, transition_step, cfg)?;
        segments.push(Segment {
            grid: Some(grid),
            normal: normal_k,
            abnormal: abnormal_k,
            transition_step,
            part: cfg.split.part(k, cfg.n_segments),
        });
    }
    Ok(LabeledDataset {
        config: cfg.clone(),
        segments,
    })
}

fn build_grid(
    normal: &RegimeSpec,
    abnormal: &RegimeSpec,
    ts: Option<usize>,
    cfg: &TransitionConfig,
) -> Result<GridSeries> {
    let a = generate(normal, cfg.width, cfg.height, cfg.n_steps)?;
    let Some(ts) = ts else {
        return Ok(a.with_spacing(1.0, 1.0));
    };
    let b = generate(abnormal, cfg.width, cfg.height, cfg.n_steps)?;
    let n_cells = cfg.width * cfg.height;
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .enumerate()
        .map(|(k, (x, y))| {
            let w = blend_weight(k / n_cells, ts, cfg.blend);
            if w == 0.0 {
                *x
            } else if w == 1.0 {
                *y
            } else {
                (1.0 - w) * x + w * y
            }
        })
        .collect();
    GridSeries::new(cfg.width, cfg.height, cfg.n_steps, values)
}

impl LabeledDataset {
    pub fn part(&self, part: SplitPart) -> impl Iterator<Item = &Segment> {
        self.segments.iter().filter(move |s| s.part == part)
    }

    pub fn transition_steps(&self) -> Vec<Option<usize>> {
        self.segments.iter().map(|s| s.transition_step).collect()
    }

    pub fn segment_file(k: usize) -> String {
        format!("segment_{k:04}.csv")
    }

    /// Writes `manifest.json` plus one grid CSV per segment.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let manifest = BufWriter::new(File::create(dir.join("manifest.json"))?);
        serde_json::to_writer_pretty(manifest, self).map_err(|e| Error::Parse(e.to_string()))?;
        for (k, seg) in self.segments.iter().enumerate() {
            let w = BufWriter::new(File::create(dir.join(Self::segment_file(k)))?);
            seg.grid().write_csv(w)?;
        }
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest = BufReader::new(File::open(dir.join("manifest.json"))?);
        let mut ds: LabeledDataset =
            serde_json::from_reader(manifest).map_err(|e| Error::Parse(format!("dataset manifest: {e}")))?;
        for (k, seg) in ds.segments.iter_mut().enumerate() {
            let r = BufReader::new(File::open(dir.join(Self::segment_file(k)))?);
            let g = GridSeries::read_csv(r)?;
            if g.n_steps() != ds.config.n_steps || g.width() != ds.config.width || g.height() != ds.config.height {
                return Err(Error::validation(format!("segment {k} does not match dataset dimensions")));
            }
            seg.grid = Some(g);
        }
        Ok(ds)
    }
}
