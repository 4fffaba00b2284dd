//! Leaky integrate-and-fire scoring stage.
//!
//! Real-valued inputs are rate-encoded into spike trains, driven through two
//! LIF layers simulated with forward Euler, and read out as a continuous
//! anomaly score from the second layer's spike counts.

mod train;

pub use train::{encode_sample, score_samples, smooth_loss, smooth_loss_gradients, train_snn, JointLossConfig, SnnEpoch, SnnLoss, SnnTrainConfig, SnnTrainHistory};

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Checkpoint, ParamKind, Parameterized};

/// Width of the surrogate derivative `1 / (1 + β|v − v_th|)²`.
pub const SURROGATE_BETA: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifParams {
    /// Seconds.
    pub tau_m: f64,
    pub r_m: f64,
    pub c_m: f64,
    pub v_rest: f64,
    pub v_th: f64,
    pub v_reset: f64,
    /// Seconds per simulation step.
    pub dt: f64,
    /// Simulation steps per decision window.
    pub t_sim: usize,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau_m: 0.02,
            r_m: 1.0,
            c_m: 0.02,
            v_rest: 0.0,
            v_th: 1.0,
            v_reset: 0.0,
            dt: 0.001,
            t_sim: 100,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_m > 0.0 && self.r_m > 0.0 && self.c_m > 0.0 && self.dt > 0.0) {
            return Err(Error::validation("LIF constants and dt must be positive"));
        }
        if (self.tau_m - self.r_m * self.c_m).abs() > 1e-12 {
            return Err(Error::validation(format!(
                "tau_m {} differs from R_m * C_m = {}",
                self.tau_m,
                self.r_m * self.c_m
            )));
        }
        if self.v_reset >= self.v_th {
            return Err(Error::validation("reset potential must lie below threshold"));
        }
        if self.dt > self.tau_m / 10.0 {
            return Err(Error::validation(format!("dt {} exceeds tau_m / 10", self.dt)));
        }
        if self.t_sim == 0 {
            return Err(Error::validation("t_sim must be positive"));
        }
        Ok(())
    }

    /// Euler factor `dt / tau_m`.
    pub fn alpha(&self) -> f64 {
        self.dt / self.tau_m
    }

    /// Closed-form interspike interval in seconds under constant current, or
    /// `None` when the drive never reaches threshold.
    pub fn analytic_isi(&self, current: f64) -> Option<f64> {
        let drive = self.r_m * current;
        let gap = self.v_th - self.v_rest;
        let start = self.v_reset - self.v_rest;
        if drive <= gap {
            return None;
        }
        Some(self.tau_m * ((drive - start) / (drive - gap)).ln())
    }
}

/// Binary spikes, row-major `steps x channels`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    pub channels: usize,
    pub steps: usize,
    pub spikes: Vec<u8>,
}

impl SpikeTrain {
    pub fn zeros(channels: usize, steps: usize) -> Self {
        Self {
            channels,
            steps,
            spikes: vec![0; channels * steps],
        }
    }

    pub fn get(&self, step: usize, channel: usize) -> u8 {
        self.spikes[step * self.channels + channel]
    }

    pub fn set(&mut self, step: usize, channel: usize, v: u8) {
        self.spikes[step * self.channels + channel] = v;
    }

    pub fn row(&self, step: usize) -> &[u8] {
        &self.spikes[step * self.channels..(step + 1) * self.channels]
    }

    pub fn count(&self) -> usize {
        self.spikes.iter().map(|&s| s as usize).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    /// Independent Bernoulli draws per step.
    #[default]
    Bernoulli,
    /// Evenly spaced spikes at the same rate; no randomness.
    Deterministic,
}

/// `max(0, q − τ)`.
pub fn spike_rate(q: f64, tau: f64) -> f64 {
    (q - tau).max(0.0)
}

/// Rate-encodes each value into a train of `t_sim` steps with per-step spike
/// probability `clamp(gain · max(0, q − τ), 0, 1)`.
pub fn encode_rate<R: Rng + ?Sized>(
    q: &[f64],
    tau: f64,
    gain: f64,
    t_sim: usize,
    mode: Encoding,
    rng: &mut R,
) -> Result<SpikeTrain> {
    if !(gain > 0.0) {
        return Err(Error::validation("encoding gain must be positive"));
    }
    let probs: Vec<f64> = q.iter().map(|&v| (spike_rate(v, tau) * gain).clamp(0.0, 1.0)).collect();
    let mut train = SpikeTrain::zeros(q.len(), t_sim);
    for step in 0..t_sim {
        for (c, &p) in probs.iter().enumerate() {
            let fire = match mode {
                Encoding::Bernoulli => p > 0.0 && rng.random::<f64>() < p,
                Encoding::Deterministic => ((step + 1) as f64 * p).floor() > (step as f64 * p).floor(),
            };
            if fire {
                train.set(step, c, 1);
            }
        }
    }
    Ok(train)
}

/// Membrane potentials of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LifLayerState {
    pub v: Vec<f64>,
}

impl LifLayerState {
    pub fn at_rest(n: usize, p: &LifParams) -> Self {
        Self { v: vec![p.v_rest; n] }
    }
}

/// One forward-Euler step; neurons crossing threshold spike and reset.
pub fn lif_step(state: &mut LifLayerState, current: &[f64], p: &LifParams) -> Result<Vec<bool>> {
    if current.len() != state.v.len() {
        return Err(Error::shape("LIF input current", state.v.len(), current.len()));
    }
    let a = p.alpha();
    let mut spikes = vec![false; current.len()];
    for (k, (v, &i)) in state.v.iter_mut().zip(current).enumerate() {
        let pre = *v + a * (-(*v - p.v_rest) + p.r_m * i);
        if !pre.is_finite() {
            return Err(Error::Numeric(format!("membrane potential of neuron {k} is not finite")));
        }
        if pre >= p.v_th {
            spikes[k] = true;
            *v = p.v_reset;
        } else {
            *v = pre;
        }
    }
    Ok(spikes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    Sigmoid,
    Relu,
    Identity,
}

impl Readout {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Readout::Sigmoid => sigmoid(z),
            Readout::Relu => z.max(0.0),
            Readout::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Readout::Sigmoid => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            Readout::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Readout::Identity => 1.0,
        }
    }
}

/// Fully connected LIF layer: `I = S_in W + b`, `W` stored `n_in x n_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifLayer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl LifLayer {
    fn new<R: Rng + ?Sized>(n_in: usize, n_out: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (n_in as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("positive bound");
        Self {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| u.sample(rng)).collect(),
            b: vec![0.0; n_out],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// Input current from a binary spike vector (sparse accumulate).
    fn current(&self, spikes: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.b);
        for (i, &s) in spikes.iter().enumerate() {
            if s != 0.0 {
                let row = &self.w[i * self.n_out..(i + 1) * self.n_out];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += s * w;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SnnOptions {
    pub hidden: usize,
    pub readout: Readout,
    /// Initial weight scale relative to `tau_m / dt`, so one input spike can
    /// move a membrane by a comparable amount at any step size.
    pub init_gain: f64,
    pub seed: u64,
}

impl Default for SnnOptions {
    fn default() -> Self {
        Self {
            hidden: 256,
            readout: Readout::Sigmoid,
            init_gain: 0.5,
            seed: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnnNetwork {
    pub layers: [LifLayer; 2],
    pub readout_w: Vec<f64>,
    pub readout_b: f64,
    pub readout: Readout,
    pub lif: LifParams,
}

/// Spike counts per layer and the readout score.
#[derive(Debug, Clone, PartialEq)]
pub struct SnnOutput {
    pub counts: [Vec<u32>; 2],
    pub score: f64,
}

impl SnnNetwork {
    pub fn new(n_in: usize, opts: &SnnOptions, lif: LifParams) -> Result<Self> {
        use rand::SeedableRng;
        lif.validate()?;
        if n_in == 0 || opts.hidden == 0 {
            return Err(Error::validation("SNN layers need at least one input and one neuron"));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        let scale = opts.init_gain / lif.alpha();
        let l1 = LifLayer::new(n_in, opts.hidden, scale, &mut rng);
        let l2 = LifLayer::new(opts.hidden, opts.hidden, scale, &mut rng);
        let bound = 1.0 / (lif.t_sim as f64 * (opts.hidden as f64).sqrt());
        let u = Uniform::new_inclusive(-bound, bound).expect("positive bound");
        Ok(Self {
            layers: [l1, l2],
            readout_w: (0..opts.hidden).map(|_| u.sample(&mut rng)).collect(),
            readout_b: 0.0,
            readout: opts.readout,
            lif,
        })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn hidden(&self) -> usize {
        self.layers[1].n_out
    }

    /// `[layer 1, layer 2, readout]`, each `N_{l−1} × N_l + N_l`.
    pub fn param_counts(&self) -> [usize; 3] {
        [
            self.layers[0].parameter_count(),
            self.layers[1].parameter_count(),
            self.readout_w.len() + 1,
        ]
    }

    fn check(&self, input: &SpikeTrain) -> Result<()> {
        if input.channels != self.n_in() {
            return Err(Error::shape("SNN input channels", self.n_in(), input.channels));
        }
        Ok(())
    }

    /// Simulates one decision window from rest.
    pub fn run(&self, input: &SpikeTrain) -> Result<SnnOutput> {
        self.simulate(input, None)
    }

    /// As [`run`](Self::run), also recording every neuron's spike per step.
    pub fn run_with_raster(&self, input: &SpikeTrain) -> Result<(SnnOutput, SpikeRaster)> {
        let mut raster = SpikeRaster::default();
        let out = self.simulate(input, Some(&mut raster))?;
        Ok((out, raster))
    }

    fn simulate(&self, input: &SpikeTrain, mut raster: Option<&mut SpikeRaster>) -> Result<SnnOutput> {
        self.check(input)?;
        let n = self.hidden();
        let mut states = [LifLayerState::at_rest(n, &self.lif), LifLayerState::at_rest(n, &self.lif)];
        let mut counts = [vec![0u32; n], vec![0u32; n]];
        let mut current = vec![0.0; n];
        let mut upstream: Vec<f64>;
        for step in 0..input.steps {
            upstream = input.row(step).iter().map(|&s| s as f64).collect();
            if let Some(r) = raster.as_deref_mut() {
                r.push_layer(step, 0, &upstream);
            }
            for l in 0..2 {
                self.layers[l].current(&upstream, &mut current);
                let spikes = lif_step(&mut states[l], &current, &self.lif)?;
                upstream = spikes.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
                for (c, &s) in counts[l].iter_mut().zip(&spikes) {
                    *c += s as u32;
                }
                if let Some(r) = raster.as_deref_mut() {
                    r.push_layer(step, l + 1, &upstream);
                }
            }
        }
        let z: f64 = counts[1].iter().zip(&self.readout_w).map(|(&c, &w)| c as f64 * w).sum::<f64>() + self.readout_b;
        Ok(SnnOutput {
            counts,
            score: self.readout.apply(z),
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({
            "kind": "snn",
            "n_in": self.n_in(),
            "hidden": self.hidden(),
            "readout": self.readout,
            "lif": self.lif,
        }));
        c.push("params", self.flat_params());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("snn") {
            return Err(Error::Parse("checkpoint is not a spiking network".into()));
        }
        let get = |k: &str| c.meta.get(k).cloned().ok_or_else(|| Error::Parse(format!("snn checkpoint lacks {k}")));
        let n_in: usize = serde_json::from_value(get("n_in")?).map_err(|e| Error::Parse(e.to_string()))?;
        let hidden: usize = serde_json::from_value(get("hidden")?).map_err(|e| Error::Parse(e.to_string()))?;
        let readout: Readout = serde_json::from_value(get("readout")?).map_err(|e| Error::Parse(e.to_string()))?;
        let lif: LifParams = serde_json::from_value(get("lif")?).map_err(|e| Error::Parse(e.to_string()))?;
        let opts = SnnOptions {
            hidden,
            readout,
            ..SnnOptions::default()
        };
        let mut net = Self::new(n_in, &opts, lif)?;
        net.set_flat_params(c.section("params")?)?;
        Ok(net)
    }
}

impl Parameterized for SnnNetwork {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        for l in &self.layers {
            f(ParamKind::Weight, &l.w);
            f(ParamKind::Bias, &l.b);
        }
        f(ParamKind::Weight, &self.readout_w);
        f(ParamKind::Bias, std::slice::from_ref(&self.readout_b));
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        for l in &mut self.layers {
            f(ParamKind::Weight, &mut l.w);
            f(ParamKind::Bias, &mut l.b);
        }
        f(ParamKind::Weight, &mut self.readout_w);
        f(ParamKind::Bias, std::slice::from_mut(&mut self.readout_b));
    }
}

/// Dense spike record for one window; layer 0 is the encoded input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SpikeRaster {
    pub rows: Vec<(usize, usize, usize, u8)>,
}

impl SpikeRaster {
    fn push_layer(&mut self, step: usize, layer: usize, spikes: &[f64]) {
        for (n, &s) in spikes.iter().enumerate() {
            self.rows.push((step, layer, n, (s != 0.0) as u8));
        }
    }

    /// CSV with header `step,layer,neuron,spike`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step,layer,neuron,spike")?;
        for (s, l, n, v) in &self.rows {
            writeln!(f, "{s},{l},{n},{v}")?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines();
        if lines.next() != Some("step,layer,neuron,spike") {
            return Err(Error::Parse("unexpected raster header".into()));
        }
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let parse = |i: usize| -> Result<usize> {
                f.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::Parse(format!("raster row {}: bad field {i}", k + 2)))
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?, parse(3)? as u8));
        }
        Ok(Self { rows })
    }
}

/// Writes anomaly scores as CSV with header `t,A`.
pub fn write_scores_csv(path: &Path, scores: &[(usize, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "t,A")?;
    for (t, a) in scores {
        writeln!(f, "{t},{a:e}")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<(usize, f64)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("t,A") {
        return Err(Error::Parse("unexpected score header".into()));
    }
    lines
        .enumerate()
        .map(|(k, l)| {
            let (t, a) = l.split_once(',').ok_or_else(|| Error::Parse(format!("score row {}", k + 2)))?;
            Ok((
                t.parse().map_err(|_| Error::Parse(format!("score row {}: t", k + 2)))?,
                a.parse().map_err(|_| Error::Parse(format!("score row {}: A", k + 2)))?,
            ))
        })
        .collect()
}
