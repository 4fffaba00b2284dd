//! Gated multi-head temporal attention over past bottleneck states.
//!
//! Each head attends over a lag range `[lo, hi]` of the history buffer. Head
//! outputs are blended with the current state through per-head sigmoid gates:
//! `h~ = sum_k G_k * A_k + (1 - mean_k G_k) * H`, which for a single head is
//! the usual `G * A + (1 - G) * H`.

mod train;

pub use train::{run_sequence, train_attention, AttentionTrainConfig, AttentionTrainHistory, StateSequence};

use std::collections::VecDeque;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{sigmoid, Checkpoint, ParamKind, Parameterized};

/// Default key width, equal to the bottleneck width.
pub const DEFAULT_KEY_DIM: usize = 20;

/// Default lag ranges for the short, medium and long heads.
pub const DEFAULT_RANGES: [(usize, usize); 3] = [(1, 2), (12, 24), (168, 200)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregateRule {
    #[default]
    Mean,
    Last,
}

/// Ring of past states, newest last. Lag 1 is the most recent push.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    capacity: usize,
    dim: usize,
    states: VecDeque<Vec<f64>>,
}

/// States for a lag range. Unobserved lags are masked out and hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    pub lags: Vec<usize>,
    pub mask: Vec<bool>,
    pub states: Array2<f64>,
}

impl HistoryWindow {
    /// Builds a fully observed window from explicit rows; mainly for tests.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut states = Array2::zeros((rows.len(), dim));
        for (k, r) in rows.iter().enumerate() {
            if r.len() != dim {
                return Err(Error::shape("history row", dim, r.len()));
            }
            states.row_mut(k).assign(&ArrayView1::from(r.as_slice()));
        }
        Ok(Self {
            lags: (1..=rows.len()).collect(),
            mask: vec![true; rows.len()],
            states,
        })
    }

    pub fn observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mean or most recent observed state; `None` when nothing is observed.
    pub fn aggregate(&self, rule: AggregateRule) -> Option<Array1<f64>> {
        let observed: Vec<usize> = (0..self.mask.len()).filter(|&k| self.mask[k]).collect();
        if observed.is_empty() {
            return None;
        }
        match rule {
            AggregateRule::Mean => {
                let mut acc = Array1::zeros(self.states.ncols());
                for &k in &observed {
                    acc += &self.states.row(k);
                }
                Some(acc / observed.len() as f64)
            }
            AggregateRule::Last => {
                let k = *observed.iter().min_by_key(|&&k| self.lags[k]).expect("nonempty");
                Some(self.states.row(k).to_owned())
            }
        }
    }
}

impl HistoryBuffer {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            states: VecDeque::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != self.dim {
            return Err(Error::shape("history state", self.dim, state.len()));
        }
        if self.capacity == 0 {
            return Ok(());
        }
        if self.states.len() == self.capacity {
            self.states.pop_front();
        }
        self.states.push_back(state.to_vec());
        Ok(())
    }

    pub fn lag(&self, lag: usize) -> Option<&[f64]> {
        if lag == 0 || lag > self.states.len() {
            return None;
        }
        Some(&self.states[self.states.len() - lag])
    }

    pub fn window(&self, lo: usize, hi: usize) -> HistoryWindow {
        let lags: Vec<usize> = (lo..=hi).collect();
        let mut states = Array2::zeros((lags.len(), self.dim));
        let mut mask = vec![false; lags.len()];
        for (k, &l) in lags.iter().enumerate() {
            if let Some(s) = self.lag(l) {
                states.row_mut(k).assign(&ArrayView1::from(s));
                mask[k] = true;
            }
        }
        HistoryWindow { lags, mask, states }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub range: (usize, usize),
    /// `d_model x d_k`.
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    /// `d_model x d_model`, so head outputs live in state space.
    pub wv: Array2<f64>,
}

/// Attention output and the weight on each window position (0 where masked).
#[derive(Debug, Clone, PartialEq)]
pub struct Attended {
    pub output: Array1<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AttendCache {
    q: Array1<f64>,
    keys: Array2<f64>,
    values: Array2<f64>,
    weights: Vec<f64>,
}

impl AttentionHead {
    pub fn new<R: Rng + ?Sized>(d_model: usize, d_k: usize, range: (usize, usize), rng: &mut R) -> Result<Self> {
        let head = Self {
            range,
            wq: uniform(d_model, d_k, rng),
            wk: uniform(d_model, d_k, rng),
            wv: uniform(d_model, d_model, rng),
        };
        head.validate()?;
        Ok(head)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.range;
        if lo == 0 || lo >= hi {
            return Err(Error::validation(format!("head range ({lo}, {hi}) needs 1 <= lo < hi")));
        }
        let d = self.wq.nrows();
        if self.wk.dim() != self.wq.dim() || self.wv.dim() != (d, d) {
            return Err(Error::validation("inconsistent head projection shapes"));
        }
        Ok(())
    }

    pub fn d_model(&self) -> usize {
        self.wq.nrows()
    }

    pub fn d_k(&self) -> usize {
        self.wq.ncols()
    }

    fn attend_cached(&self, query: ArrayView1<f64>, window: &HistoryWindow) -> Result<(Attended, AttendCache)> {
        if query.len() != self.d_model() {
            return Err(Error::shape("attention query", self.d_model(), query.len()));
        }
        if window.states.ncols() != self.d_model() {
            return Err(Error::shape("attention history width", self.d_model(), window.states.ncols()));
        }
        if window.observed() == 0 {
            return Err(Error::insufficient("attention history states", 1, 0));
        }
        let q = query.dot(&self.wq);
        let keys = window.states.dot(&self.wk);
        let values = window.states.dot(&self.wv);
        let scale = 1.0 / (self.d_k() as f64).sqrt();
        let scores: Vec<f64> = (0..window.mask.len())
            .map(|k| if window.mask[k] { keys.row(k).dot(&q) * scale } else { f64::NEG_INFINITY })
            .collect();
        let weights = softmax_masked(&scores, &window.mask);
        let mut output = Array1::zeros(self.d_model());
        for (k, &w) in weights.iter().enumerate() {
            if window.mask[k] {
                output.scaled_add(w, &values.row(k));
            }
        }
        let cache = AttendCache {
            q,
            keys,
            values,
            weights: weights.clone(),
        };
        Ok((Attended { output, weights }, cache))
    }

    /// Returns `(dquery, [dwq, dwk, dwv])`.
    fn attend_backward(
        &self,
        query: ArrayView1<f64>,
        window: &HistoryWindow,
        cache: &AttendCache,
        dout: ArrayView1<f64>,
    ) -> (Array1<f64>, [Array2<f64>; 3]) {
        let scale = 1.0 / (self.d_k() as f64).sqrt();
        let n = window.mask.len();
        let mut dw = vec![0.0; n];
        let mut dvalues = Array2::zeros(cache.values.dim());
        for k in 0..n {
            if window.mask[k] {
                dw[k] = dout.dot(&cache.values.row(k));
                dvalues.row_mut(k).assign(&(&dout * cache.weights[k]));
            }
        }
        let mean_dw: f64 = (0..n).map(|k| cache.weights[k] * dw[k]).sum();
        let mut dq = Array1::zeros(self.d_k());
        let mut dkeys = Array2::zeros(cache.keys.dim());
        for k in 0..n {
            if window.mask[k] {
                let de = cache.weights[k] * (dw[k] - mean_dw) * scale;
                dq.scaled_add(de, &cache.keys.row(k));
                dkeys.row_mut(k).assign(&(&cache.q * de));
            }
        }
        let dwq = outer(query, dq.view());
        let dwk = window.states.t().dot(&dkeys);
        let dwv = window.states.t().dot(&dvalues);
        let dquery = self.wq.dot(&dq);
        (dquery, [dwq, dwk, dwv])
    }
}

/// Scaled dot-product attention of `query` over the observed part of `window`.
pub fn attend(head: &AttentionHead, query: ArrayView1<f64>, window: &HistoryWindow) -> Result<Attended> {
    head.attend_cached(query, window).map(|(a, _)| a)
}

/// Sigmoid gate over `[H; aggregate(history)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    /// `2 d_model x d_model`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub rule: AggregateRule,
}

impl GateParams {
    pub fn new<R: Rng + ?Sized>(d_model: usize, rule: AggregateRule, rng: &mut R) -> Self {
        Self {
            w: uniform(2 * d_model, d_model, rng),
            b: Array1::zeros(d_model),
            rule,
        }
    }

    pub fn zeros(d_model: usize, rule: AggregateRule) -> Self {
        Self {
            w: Array2::zeros((2 * d_model, d_model)),
            b: Array1::zeros(d_model),
            rule,
        }
    }

    pub fn d_model(&self) -> usize {
        self.b.len()
    }

    fn input(&self, h: ArrayView1<f64>, window: &HistoryWindow) -> Result<Array1<f64>> {
        let d = self.d_model();
        if h.len() != d || self.w.dim() != (2 * d, d) {
            return Err(Error::shape("gate input", d, h.len()));
        }
        let agg = window.aggregate(self.rule).unwrap_or_else(|| Array1::zeros(d));
        if agg.len() != d {
            return Err(Error::shape("gate history width", d, agg.len()));
        }
        let mut u = Array1::zeros(2 * d);
        u.slice_mut(ndarray::s![..d]).assign(&h);
        u.slice_mut(ndarray::s![d..]).assign(&agg);
        Ok(u)
    }
}

/// `G = sigmoid(W [H; Hbar] + b)`, with `Hbar` the mean or last observed state.
pub fn gate(params: &GateParams, h: ArrayView1<f64>, window: &HistoryWindow) -> Result<Array1<f64>> {
    let u = params.input(h, window)?;
    Ok((u.dot(&params.w) + &params.b).mapv(sigmoid))
}

/// `sum_k G_k * A_k + (1 - mean_k G_k) * H`.
pub fn gated_output(h: ArrayView1<f64>, attns: &[Array1<f64>], gates: &[Array1<f64>]) -> Result<Array1<f64>> {
    if attns.is_empty() || attns.len() != gates.len() {
        return Err(Error::validation("gated output needs one gate per head and at least one head"));
    }
    let d = h.len();
    for (a, g) in attns.iter().zip(gates) {
        if a.len() != d || g.len() != d {
            return Err(Error::shape("gated output width", d, a.len().max(g.len())));
        }
    }
    let n = gates.len() as f64;
    let mut out = Array1::zeros(d);
    for c in 0..d {
        let mut acc = 0.0;
        let mut gsum = 0.0;
        for (a, g) in attns.iter().zip(gates) {
            acc += g[c] * a[c];
            gsum += g[c];
        }
        out[c] = acc + (1.0 - gsum / n) * h[c];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionOptions {
    pub d_model: usize,
    pub d_k: usize,
    pub ranges: [(usize, usize); 3],
    pub rule: AggregateRule,
    pub seed: u64,
}

impl Default for AttentionOptions {
    fn default() -> Self {
        Self {
            d_model: DEFAULT_KEY_DIM,
            d_k: DEFAULT_KEY_DIM,
            ranges: DEFAULT_RANGES,
            rule: AggregateRule::Mean,
            seed: 17,
        }
    }
}

/// One evaluated step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStep {
    pub output: Array1<f64>,
    /// Per head; `None` for heads with no observed history.
    pub weights: Vec<Option<Vec<f64>>>,
    pub gates: Vec<Option<Array1<f64>>>,
    /// No head had history, so the output is the current state.
    pub degraded: bool,
}

pub(crate) struct StepCache {
    h: Array1<f64>,
    windows: Vec<HistoryWindow>,
    heads: Vec<Option<HeadCache>>,
}

struct HeadCache {
    attn: AttendCache,
    output: Array1<f64>,
    gate_in: Array1<f64>,
    gate: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedAttention {
    pub heads: Vec<AttentionHead>,
    pub gates: Vec<GateParams>,
}

impl GatedAttention {
    pub fn new(opts: &AttentionOptions) -> Result<Self> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
        let mut heads = Vec::new();
        let mut gates = Vec::new();
        for &r in &opts.ranges {
            heads.push(AttentionHead::new(opts.d_model, opts.d_k, r, &mut rng)?);
            gates.push(GateParams::new(opts.d_model, opts.rule, &mut rng));
        }
        Ok(Self { heads, gates })
    }

    pub fn from_parts(heads: Vec<AttentionHead>, gates: Vec<GateParams>) -> Result<Self> {
        if heads.is_empty() || heads.len() != gates.len() {
            return Err(Error::validation("attention needs matching, nonempty heads and gates"));
        }
        let d = heads[0].d_model();
        for (h, g) in heads.iter().zip(&gates) {
            h.validate()?;
            if h.d_model() != d || g.d_model() != d {
                return Err(Error::validation("all heads and gates must share the state width"));
            }
        }
        Ok(Self { heads, gates })
    }

    pub fn d_model(&self) -> usize {
        self.heads[0].d_model()
    }

    /// History capacity needed by the widest head.
    pub fn max_lag(&self) -> usize {
        self.heads.iter().map(|h| h.range.1).max().unwrap_or(0)
    }

    pub fn history(&self) -> HistoryBuffer {
        HistoryBuffer::new(self.max_lag(), self.d_model())
    }

    pub(crate) fn step_cached(&self, h: ArrayView1<f64>, history: &HistoryBuffer, forced: Option<f64>) -> Result<(AttentionStep, StepCache)> {
        if h.len() != self.d_model() {
            return Err(Error::shape("attention state", self.d_model(), h.len()));
        }
        let windows: Vec<HistoryWindow> = self.heads.iter().map(|hd| history.window(hd.range.0, hd.range.1)).collect();
        let mut caches = Vec::with_capacity(self.heads.len());
        for ((head, gp), w) in self.heads.iter().zip(&self.gates).zip(&windows) {
            if w.observed() == 0 {
                caches.push(None);
                continue;
            }
            let (att, attn_cache) = head.attend_cached(h, w)?;
            let gate_in = gp.input(h, w)?;
            let g = match forced {
                Some(v) => Array1::from_elem(self.d_model(), v),
                None => (gate_in.dot(&gp.w) + &gp.b).mapv(sigmoid),
            };
            caches.push(Some(HeadCache {
                attn: attn_cache,
                output: att.output,
                gate_in,
                gate: g,
            }));
        }
        let active: Vec<&HeadCache> = caches.iter().flatten().collect();
        let degraded = active.is_empty();
        let output = if degraded {
            h.to_owned()
        } else {
            let attns: Vec<Array1<f64>> = active.iter().map(|c| c.output.clone()).collect();
            let gs: Vec<Array1<f64>> = active.iter().map(|c| c.gate.clone()).collect();
            gated_output(h, &attns, &gs)?
        };
        let step = AttentionStep {
            output,
            weights: caches.iter().map(|c| c.as_ref().map(|c| c.attn.weights.clone())).collect(),
            gates: caches.iter().map(|c| c.as_ref().map(|c| c.gate.clone())).collect(),
            degraded,
        };
        Ok((
            step,
            StepCache {
                h: h.to_owned(),
                windows,
                heads: caches,
            },
        ))
    }

    /// Evaluates one step against the current history (which excludes `h`).
    pub fn step(&self, h: ArrayView1<f64>, history: &HistoryBuffer) -> Result<AttentionStep> {
        self.step_cached(h, history, None).map(|(s, _)| s)
    }

    /// As [`step`](Self::step) with every gate held at `value`.
    pub fn step_with_gate(&self, h: ArrayView1<f64>, history: &HistoryBuffer, value: f64) -> Result<AttentionStep> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Range(format!("forced gate {value} outside [0, 1]")));
        }
        self.step_cached(h, history, Some(value)).map(|(s, _)| s)
    }

    /// Gradients of `dout · step(h).output`: flat parameters in visit order
    /// and the query state `h`, with `history` held fixed.
    pub fn step_gradients(
        &self,
        h: ArrayView1<f64>,
        history: &HistoryBuffer,
        dout: ArrayView1<f64>,
    ) -> Result<(Vec<f64>, Array1<f64>)> {
        if dout.len() != self.d_model() {
            return Err(Error::shape("output gradient", self.d_model(), dout.len()));
        }
        let (_, cache) = self.step_cached(h, history, None)?;
        Ok(self.step_backward(&cache, dout))
    }

    /// Flat parameter gradients (visit order) and the gradient on `h`.
    pub(crate) fn step_backward(&self, cache: &StepCache, dout: ArrayView1<f64>) -> (Vec<f64>, Array1<f64>) {
        let d = self.d_model();
        let mut dh = Array1::zeros(d);
        let mut flat = Vec::with_capacity(self.n_params());
        let active: Vec<&HeadCache> = cache.heads.iter().flatten().collect();
        let n = active.len() as f64;
        if !active.is_empty() {
            let gmean = active.iter().fold(Array1::<f64>::zeros(d), |acc, c| acc + &c.gate) / n;
            dh += &(&dout * &(1.0 - &gmean));
        } else {
            dh += &dout;
        }
        for (k, (head, gp)) in self.heads.iter().zip(&self.gates).enumerate() {
            let Some(c) = &cache.heads[k] else {
                flat.extend(std::iter::repeat_n(0.0, head.wq.len() + head.wk.len() + head.wv.len() + gp.w.len() + gp.b.len()));
                continue;
            };
            let da = &dout * &c.gate;
            let dg = &dout * &(&c.output - &(&cache.h / n));
            let (dq_in, [dwq, dwk, dwv]) = head.attend_backward(cache.h.view(), &cache.windows[k], &c.attn, da.view());
            dh += &dq_in;
            let dz = &dg * &c.gate.mapv(|g| g * (1.0 - g));
            let dwg = outer(c.gate_in.view(), dz.view());
            // the history half of the gate input is treated as a constant
            let du = gp.w.dot(&dz);
            dh += &du.slice(ndarray::s![..d]);
            flat.extend(dwq.iter());
            flat.extend(dwk.iter());
            flat.extend(dwv.iter());
            flat.extend(dwg.iter());
            flat.extend(dz.iter());
        }
        (flat, dh)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let ranges: Vec<(usize, usize)> = self.heads.iter().map(|h| h.range).collect();
        let mut c = Checkpoint::new(serde_json::json!({
            "kind": "attention",
            "d_model": self.d_model(),
            "d_k": self.heads[0].d_k(),
            "ranges": ranges,
            "rule": self.gates[0].rule,
        }));
        c.push("params", self.flat_params());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("attention") {
            return Err(Error::Parse("checkpoint is not an attention module".into()));
        }
        let parse = |key: &str| c.meta.get(key).cloned().ok_or_else(|| Error::Parse(format!("attention checkpoint lacks {key}")));
        let d_model: usize = serde_json::from_value(parse("d_model")?).map_err(|e| Error::Parse(e.to_string()))?;
        let d_k: usize = serde_json::from_value(parse("d_k")?).map_err(|e| Error::Parse(e.to_string()))?;
        let ranges: Vec<(usize, usize)> = serde_json::from_value(parse("ranges")?).map_err(|e| Error::Parse(e.to_string()))?;
        let rule: AggregateRule = serde_json::from_value(parse("rule")?).map_err(|e| Error::Parse(e.to_string()))?;
        let heads = ranges
            .iter()
            .map(|&range| AttentionHead {
                range,
                wq: Array2::zeros((d_model, d_k)),
                wk: Array2::zeros((d_model, d_k)),
                wv: Array2::zeros((d_model, d_model)),
            })
            .collect();
        let gates = ranges.iter().map(|_| GateParams::zeros(d_model, rule)).collect();
        let mut att = Self::from_parts(heads, gates)?;
        att.set_flat_params(c.section("params")?)?;
        Ok(att)
    }
}

impl Parameterized for GatedAttention {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        for (h, g) in self.heads.iter().zip(&self.gates) {
            for w in [&h.wq, &h.wk, &h.wv, &g.w] {
                f(ParamKind::Weight, w.as_slice().expect("standard layout"));
            }
            f(ParamKind::Bias, g.b.as_slice().expect("standard layout"));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        for (h, g) in self.heads.iter_mut().zip(&mut self.gates) {
            for w in [&mut h.wq, &mut h.wk, &mut h.wv, &mut g.w] {
                f(ParamKind::Weight, w.as_slice_mut().expect("standard layout"));
            }
            f(ParamKind::Bias, g.b.as_slice_mut().expect("standard layout"));
        }
    }
}

/// Per-step attention weights for export, one row per observed position.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub rows: Vec<(usize, usize, usize, f64)>,
}

impl AttentionTrace {
    pub fn record(&mut self, t: usize, att: &GatedAttention, step: &AttentionStep) {
        for (k, w) in step.weights.iter().enumerate() {
            let Some(w) = w else { continue };
            let (lo, _) = att.heads[k].range;
            for (pos, &v) in w.iter().enumerate() {
                if v > 0.0 {
                    self.rows.push((t, k, lo + pos, v));
                }
            }
        }
    }

    /// CSV with header `t,head,lag,weight`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t,head,lag,weight")?;
        for (t, k, lag, w) in &self.rows {
            writeln!(f, "{t},{k},{lag},{w:e}")?;
        }
        f.flush()?;
        Ok(())
    }
}

fn softmax_masked(scores: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = scores
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&s, _)| s)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores
        .iter()
        .zip(mask)
        .map(|(&s, &m)| if m { (s - max).exp() } else { 0.0 })
        .collect();
    let z: f64 = w.iter().sum();
    for v in &mut w {
        *v /= z;
    }
    w
}

fn outer(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array2<f64> {
    let mut m = Array2::zeros((a.len(), b.len()));
    for (i, &x) in a.iter().enumerate() {
        m.row_mut(i).assign(&(&b * x));
    }
    m
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (rows as f64).sqrt();
    let u = Uniform::new_inclusive(-bound, bound).expect("positive bound");
    Array2::from_shape_simple_fn((rows, cols), || u.sample(rng))
}

#[cfg(test)]
mod tests;
