//! Encoder/decoder quantile network with per-level heads and two-stage training.

mod refine;
mod train;

use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Block, Checkpoint, Dense, GroupNorm, Mode, ParamKind, Parameterized, Sequential, SequentialCache};

pub use refine::{train_stage2, RefineConfig, Refiner};
pub use train::{train_stage1, EarlyStopping, EpochRecord, Stage1Loss, TrainConfig, TrainHistory};

pub const ENCODER_DIMS: [usize; 15] = [70, 350, 280, 224, 179, 143, 114, 91, 73, 58, 46, 37, 30, 24, 20];
pub const DEFAULT_ALPHAS: [f64; 10] = [0.01, 0.1, 0.2, 0.25, 0.5, 0.6, 0.75, 0.8, 0.9, 0.99];

pub const ENCODER_LAYER_COUNTS: [usize; 14] = [
    24_850, 98_280, 62_944, 40_275, 25_740, 16_416, 10_465, 6_716, 4_292, 2_714, 1_739, 1_140, 744, 500,
];
pub const DECODER_LAYER_COUNTS: [usize; 14] = [
    504, 750, 1_147, 1_748, 2_726, 4_307, 6_734, 10_488, 16_445, 25_776, 40_320, 63_000, 98_350, 24_570,
];
pub const ENCODER_TOTAL: usize = 296_815;
pub const DECODER_TOTAL: usize = 296_865;
pub const NETWORK_TOTAL: usize = 593_680;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeqrnnTopology {
    pub encoder_dims: Vec<usize>,
    pub decoder_dims: Vec<usize>,
}

impl Default for BeqrnnTopology {
    fn default() -> Self {
        Self::mirrored(&ENCODER_DIMS)
    }
}

impl BeqrnnTopology {
    pub fn mirrored(encoder: &[usize]) -> Self {
        Self {
            encoder_dims: encoder.to_vec(),
            decoder_dims: encoder.iter().rev().copied().collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder_dims[0]
    }

    pub fn bottleneck(&self) -> usize {
        *self.encoder_dims.last().expect("non-empty")
    }

    pub fn output_dim(&self) -> usize {
        *self.decoder_dims.last().expect("non-empty")
    }

    fn layer_counts(dims: &[usize]) -> Vec<usize> {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).collect()
    }

    /// Dense `W + b` counts per encoder layer.
    pub fn encoder_counts(&self) -> Vec<usize> {
        Self::layer_counts(&self.encoder_dims)
    }

    pub fn decoder_counts(&self) -> Vec<usize> {
        Self::layer_counts(&self.decoder_dims)
    }

    pub fn encoder_total(&self) -> usize {
        self.encoder_counts().iter().sum()
    }

    pub fn decoder_total(&self) -> usize {
        self.decoder_counts().iter().sum()
    }

    pub fn total(&self) -> usize {
        self.encoder_total() + self.decoder_total()
    }

    fn validate_shape(&self) -> Result<()> {
        if self.encoder_dims.len() < 2 || self.decoder_dims.len() < 2 {
            return Err(Error::validation("encoder and decoder need at least one layer each"));
        }
        if self.encoder_dims.iter().chain(&self.decoder_dims).any(|&d| d == 0) {
            return Err(Error::validation("layer widths must be positive"));
        }
        if self.bottleneck() != self.decoder_dims[0] {
            return Err(Error::validation(format!(
                "decoder starts at {} but the bottleneck is {}",
                self.decoder_dims[0],
                self.bottleneck()
            )));
        }
        if self.output_dim() != self.input_dim() {
            return Err(Error::validation("decoder must reconstruct the input width"));
        }
        Ok(())
    }

    /// Compares every layer with the reference tables.
    pub fn verify_reference_counts(&self) -> Result<()> {
        let check = |name: &str, got: Vec<usize>, want: &[usize]| -> Result<()> {
            if got.len() != want.len() {
                return Err(Error::validation(format!(
                    "{name} has {} layers, reference has {}",
                    got.len(),
                    want.len()
                )));
            }
            for (k, (g, w)) in got.iter().zip(want).enumerate() {
                if g != w {
                    return Err(Error::validation(format!(
                        "{name} layer {} has {g} parameters, reference {w}",
                        k + 1
                    )));
                }
            }
            Ok(())
        };
        check("encoder", self.encoder_counts(), &ENCODER_LAYER_COUNTS)?;
        check("decoder", self.decoder_counts(), &DECODER_LAYER_COUNTS)?;
        if self.total() != NETWORK_TOTAL {
            return Err(Error::validation(format!("total {} differs from {NETWORK_TOTAL}", self.total())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildOptions {
    pub alphas: Vec<f64>,
    pub dropout: f64,
    pub groups: usize,
    pub norm_eps: f64,
    pub seed: u64,
    /// Accept a topology that differs from the reference tables.
    pub allow_custom_topology: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
            dropout: 0.15,
            groups: 8,
            norm_eps: 1e-5,
            seed: 7,
            allow_custom_topology: false,
        }
    }
}

/// Affine head `scale ⊙ u + shift` for one quantile level.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileHead {
    pub alpha: f64,
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNetwork {
    pub topology: BeqrnnTopology,
    pub options: BuildOptions,
    pub encoder: Sequential,
    pub decoder: Sequential,
    pub heads: Vec<QuantileHead>,
}

/// Per-level predictions for one input row, rearranged to be monotone in α.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantilePrediction {
    pub alphas: Vec<f64>,
    /// `|alphas| × output_dim`.
    pub values: Array2<f64>,
}

impl QuantilePrediction {
    pub fn level(&self, alpha: f64) -> Option<ndarray::ArrayView1<'_, f64>> {
        self.alphas
            .iter()
            .position(|a| (a - alpha).abs() < 1e-12)
            .map(|k| self.values.row(k))
    }
}

pub fn validate_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() {
        return Err(Error::validation("quantile set is empty"));
    }
    if alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
        return Err(Error::Range(format!("quantile levels {alphas:?} must lie in (0, 1)")));
    }
    if alphas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Ordering(format!("quantile levels {alphas:?} must be strictly increasing")));
    }
    Ok(())
}

fn stack(dims: &[usize], opts: &BuildOptions, last_plain: bool, rng: &mut ChaCha8Rng) -> Sequential {
    let n = dims.len() - 1;
    let blocks = dims
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let dense = Dense::new(w[0], w[1], rng);
            if last_plain && k + 1 == n {
                Block::new(dense, None, Activation::Identity, 0.0)
            } else {
                Block::new(
                    dense,
                    Some(GroupNorm::new(w[1], opts.groups, opts.norm_eps)),
                    Activation::prelu(w[1]),
                    opts.dropout,
                )
            }
        })
        .collect();
    Sequential::new(blocks)
}

/// Builds the network; hidden layers are dense → group norm → PReLU → dropout
/// and the reconstruction layer is a plain affine map.
pub fn build(topology: &BeqrnnTopology, opts: &BuildOptions) -> Result<QuantileNetwork> {
    topology.validate_shape()?;
    if !opts.allow_custom_topology {
        topology.verify_reference_counts()?;
    }
    validate_alphas(&opts.alphas)?;
    if !(0.0..1.0).contains(&opts.dropout) {
        return Err(Error::validation(format!("dropout {} outside [0, 1)", opts.dropout)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let encoder = stack(&topology.encoder_dims, opts, false, &mut rng);
    let decoder = stack(&topology.decoder_dims, opts, true, &mut rng);
    let out = topology.output_dim();
    let heads = opts
        .alphas
        .iter()
        .map(|&alpha| QuantileHead {
            alpha,
            scale: Array1::ones(out),
            shift: Array1::zeros(out),
        })
        .collect();
    let net = QuantileNetwork {
        topology: topology.clone(),
        options: opts.clone(),
        encoder,
        decoder,
        heads,
    };
    let dense: usize = net
        .encoder
        .blocks
        .iter()
        .chain(&net.decoder.blocks)
        .map(|b| b.dense.parameter_count())
        .sum();
    if dense != topology.total() {
        return Err(Error::validation(format!("built {dense} dense parameters, expected {}", topology.total())));
    }
    Ok(net)
}

pub(crate) struct ForwardPass {
    pub enc: SequentialCache,
    pub dec: SequentialCache,
    pub trunk: Array2<f64>,
    /// Raw head outputs per level, before rearrangement.
    pub quantiles: Vec<Array2<f64>>,
}

impl QuantileNetwork {
    pub fn alphas(&self) -> Vec<f64> {
        self.heads.iter().map(|h| h.alpha).collect()
    }

    /// Dense parameters of encoder and decoder.
    pub fn dense_parameter_count(&self) -> usize {
        self.encoder
            .blocks
            .iter()
            .chain(&self.decoder.blocks)
            .map(|b| b.dense.parameter_count())
            .sum()
    }

    /// Group-norm, PReLU and head parameters, outside the reference totals.
    pub fn auxiliary_parameter_count(&self) -> usize {
        self.n_params() - self.dense_parameter_count()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.topology.input_dim() {
            return Err(Error::shape("network input width", self.topology.input_dim(), x.ncols()));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("network input contains non-finite values"));
        }
        Ok(())
    }

    pub(crate) fn forward_pass<R: Rng + ?Sized>(&self, x: ArrayView2<f64>, mode: Mode, rng: &mut R) -> Result<ForwardPass> {
        self.check_input(x)?;
        let (bottleneck, enc) = self.encoder.forward(x, mode, rng)?;
        let (trunk, dec) = self.decoder.forward(bottleneck.view(), mode, rng)?;
        let quantiles = self.heads.iter().map(|h| &trunk * &h.scale + &h.shift).collect();
        Ok(ForwardPass {
            enc,
            dec,
            trunk,
            quantiles,
        })
    }

    /// Flat gradients from per-level output gradients.
    pub(crate) fn backward_pass(&self, pass: &ForwardPass, dq: &[Array2<f64>]) -> Vec<f64> {
        let mut dtrunk = Array2::zeros(pass.trunk.dim());
        let mut head_grads: Vec<f64> = Vec::with_capacity(2 * self.topology.output_dim() * self.heads.len());
        for (h, g) in self.heads.iter().zip(dq) {
            dtrunk += &(g * &h.scale);
            let dscale = (g * &pass.trunk).sum_axis(ndarray::Axis(0));
            let dshift = g.sum_axis(ndarray::Axis(0));
            head_grads.extend(dscale.iter());
            head_grads.extend(dshift.iter());
        }
        let (dbott, dec_grads) = self.decoder.backward(&pass.dec, dtrunk.view());
        let (_, enc_grads) = self.encoder.backward(&pass.enc, dbott.view());
        let mut flat = enc_grads;
        flat.extend(dec_grads);
        flat.extend(head_grads);
        flat
    }

    /// Raw output of one head for bottleneck states, with the decoder cache.
    pub(crate) fn decode_level(&self, h: ArrayView2<f64>, level: usize) -> Result<(Array2<f64>, SequentialCache)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (trunk, cache) = self.decoder.forward(h, Mode::Eval, &mut rng)?;
        let head = &self.heads[level];
        Ok((&trunk * &head.scale + &head.shift, cache))
    }

    /// Gradient with respect to the bottleneck input of `decode_level`.
    pub(crate) fn decode_level_input_grad(&self, cache: &SequentialCache, level: usize, dq: ArrayView2<f64>) -> Array2<f64> {
        let dtrunk = &dq * &self.heads[level].scale;
        self.decoder.backward(cache, dtrunk.view()).0
    }

    pub fn level_index(&self, alpha: f64) -> Option<usize> {
        self.heads.iter().position(|h| (h.alpha - alpha).abs() < 1e-12)
    }

    /// Bottleneck states for a batch of rows.
    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        self.encoder.predict(x)
    }

    /// Reconstruction-space output of the decoder for bottleneck states.
    pub fn decode(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.decoder.predict(h)
    }

    /// Head outputs for decoder states, rearranged per row and coordinate.
    pub fn heads_from_trunk(&self, trunk: ArrayView2<f64>) -> Vec<QuantilePrediction> {
        let raw: Vec<Array2<f64>> = self.heads.iter().map(|h| &trunk * &h.scale + &h.shift).collect();
        rearrange(&self.alphas(), &raw)
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Vec<QuantilePrediction>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pass = self.forward_pass(x, Mode::Eval, &mut rng)?;
        if pass.trunk.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in quantile network".into()));
        }
        Ok(rearrange(&self.alphas(), &pass.quantiles))
    }

    pub fn predict_quantiles(&self, x: &[f64]) -> Result<QuantilePrediction> {
        let row = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(self.predict_batch(row)?.remove(0))
    }

    /// Coordinate-mean pinball residual of the median head (`α = 0.5`).
    pub fn reconstruction_anomaly_score(&self, x: &[f64]) -> Result<f64> {
        let p = self.predict_quantiles(x)?;
        let median = p
            .level(0.5)
            .ok_or_else(|| Error::validation("network has no median head"))?;
        let sum: f64 = x
            .iter()
            .zip(median.iter())
            .map(|(y, q)| {
                let r = y - q;
                (0.5 * r).max(-0.5 * r)
            })
            .sum();
        Ok(sum / x.len() as f64)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(serde_json::json!({
            "kind": "beqrnn",
            "topology": self.topology,
            "options": self.options,
        }));
        c.push("params", self.flat_params());
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some("beqrnn") {
            return Err(Error::Parse("checkpoint is not a quantile network".into()));
        }
        let topology: BeqrnnTopology = serde_json::from_value(c.meta["topology"].clone())
            .map_err(|e| Error::Parse(format!("checkpoint topology: {e}")))?;
        let options: BuildOptions = serde_json::from_value(c.meta["options"].clone())
            .map_err(|e| Error::Parse(format!("checkpoint options: {e}")))?;
        let mut net = build(&topology, &options)?;
        net.set_flat_params(c.section("params")?)?;
        Ok(net)
    }
}

/// Sorts each row/coordinate across levels so quantiles never cross.
fn rearrange(alphas: &[f64], raw: &[Array2<f64>]) -> Vec<QuantilePrediction> {
    let (n, d) = raw[0].dim();
    let mut col = vec![0.0; raw.len()];
    (0..n)
        .map(|r| {
            let mut values = Array2::zeros((raw.len(), d));
            for c in 0..d {
                for (k, q) in raw.iter().enumerate() {
                    col[k] = q[[r, c]];
                }
                col.sort_by(f64::total_cmp);
                for (k, v) in col.iter().enumerate() {
                    values[[k, c]] = *v;
                }
            }
            QuantilePrediction {
                alphas: alphas.to_vec(),
                values,
            }
        })
        .collect()
}

impl Parameterized for QuantileNetwork {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        self.encoder.visit_params(f);
        self.decoder.visit_params(f);
        for h in &self.heads {
            f(ParamKind::NormScale, h.scale.as_slice().expect("contiguous"));
            f(ParamKind::NormShift, h.shift.as_slice().expect("contiguous"));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        self.encoder.visit_params_mut(f);
        self.decoder.visit_params_mut(f);
        for h in &mut self.heads {
            f(ParamKind::NormScale, h.scale.as_slice_mut().expect("contiguous"));
            f(ParamKind::NormShift, h.shift.as_slice_mut().expect("contiguous"));
        }
    }
}

/// Time scale of a forecast and the quantile levels it reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonConfig {
    pub name: String,
    pub quantiles: Vec<f64>,
    pub horizon_steps: usize,
}

impl HorizonConfig {
    pub fn short() -> Self {
        Self {
            name: "short_1h".into(),
            quantiles: DEFAULT_ALPHAS.to_vec(),
            horizon_steps: 1,
        }
    }

    pub fn medium() -> Self {
        Self {
            name: "medium_12_24h".into(),
            quantiles: vec![0.25, 0.4, 0.6, 0.75, 0.99],
            horizon_steps: 24,
        }
    }

    pub fn long() -> Self {
        Self {
            name: "long_168h".into(),
            quantiles: vec![0.1, 0.5, 0.75, 0.9],
            horizon_steps: 168,
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::short(), Self::medium(), Self::long()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::grad_check_fn;

    fn small_net(seed: u64) -> QuantileNetwork {
        let topo = BeqrnnTopology::mirrored(&[6, 8, 4]);
        let opts = BuildOptions {
            alphas: vec![0.1, 0.5, 0.9],
            dropout: 0.0,
            // single-channel groups would normalize to zero
            groups: 2,
            seed,
            allow_custom_topology: true,
            ..BuildOptions::default()
        };
        build(&topo, &opts).unwrap()
    }

    #[test]
    fn reference_counts() {
        let topo = BeqrnnTopology::default();
        assert_eq!(topo.encoder_counts()[0], 24_850);
        assert_eq!(topo.decoder_counts()[13], 24_570);
        assert_eq!(topo.encoder_total(), ENCODER_TOTAL);
        assert_eq!(topo.decoder_total(), DECODER_TOTAL);
        assert_eq!(topo.total(), NETWORK_TOTAL);
        let net = build(&topo, &BuildOptions::default()).unwrap();
        assert_eq!(net.dense_parameter_count(), NETWORK_TOTAL);
    }

    #[test]
    fn mismatch_names_layer() {
        let mut dims = ENCODER_DIMS.to_vec();
        dims[3] = 200;
        let err = build(&BeqrnnTopology::mirrored(&dims), &BuildOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("encoder layer 3"), "{msg}");
    }

    #[test]
    fn alpha_validation() {
        let topo = BeqrnnTopology::default();
        let bad = |alphas: Vec<f64>| {
            build(
                &topo,
                &BuildOptions {
                    alphas,
                    ..BuildOptions::default()
                },
            )
            .unwrap_err()
            .kind()
        };
        assert_eq!(bad(vec![0.5, 0.1]), "ordering");
        assert_eq!(bad(vec![0.0, 0.5]), "range");
    }

    #[test]
    fn prediction_shape_and_order() {
        let net = build(&BeqrnnTopology::default(), &BuildOptions::default()).unwrap();
        let x: Vec<f64> = (0..70).map(|k| (k as f64 * 0.37).sin()).collect();
        let p = net.predict_quantiles(&x).unwrap();
        assert_eq!(p.values.dim(), (10, 70));
        for c in 0..70 {
            for k in 1..10 {
                assert!(p.values[[k - 1, c]] <= p.values[[k, c]]);
            }
        }
        assert_eq!(net.predict_quantiles(&x[..69]).unwrap_err().kind(), "shape_mismatch");
    }

    #[test]
    fn untrained_golden_outputs() {
        let net = build(&BeqrnnTopology::default(), &BuildOptions::default()).unwrap();
        // zero biases and zero-mean normalization keep a zero input at zero
        let p = net.predict_quantiles(&[0.0; 70]).unwrap();
        assert!(p.values.iter().all(|&v| v == 0.0));
        let ramp: Vec<f64> = (0..70).map(|k| k as f64 / 35.0 - 1.0).collect();
        let m = net.predict_quantiles(&ramp).unwrap();
        let m = m.level(0.5).unwrap();
        for (got, want) in [m[0], m[1], m[69]].iter().zip(GOLDEN_RAMP) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    const GOLDEN_RAMP: [f64; 3] = [1.67123153162426430e-1, 4.63567037633062062e-1, -5.89297916536144051e-1];

    #[test]
    fn anomaly_score_bounds() {
        let mut net = small_net(3);
        let x = [0.2, -0.1, 0.4, 0.0, 1.0, -2.0];
        assert!(net.reconstruction_anomaly_score(&x).unwrap() >= 0.0);
        // zero trunk scale turns every head into its shift
        for h in &mut net.heads {
            h.scale.fill(0.0);
            h.shift.assign(&Array1::from(x.to_vec()));
        }
        assert_eq!(net.reconstruction_anomaly_score(&x).unwrap(), 0.0);
    }

    #[test]
    fn network_gradients() {
        let net = small_net(9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_simple_fn((4, 6), || rng.random::<f64>() - 0.5);
        let y = Array2::from_shape_simple_fn((4, 6), || rng.random::<f64>() - 0.5);
        let loss = |q: &Array2<f64>| (q - &y).mapv(|r| 0.5 * r * r).sum();
        let pass = net.forward_pass(x.view(), Mode::Eval, &mut rng).unwrap();
        let dq: Vec<Array2<f64>> = pass.quantiles.iter().map(|q| q - &y).collect();
        let analytic = net.backward_pass(&pass, &dq);
        let theta = net.flat_params();
        let mut work = net.clone();
        let r = grad_check_fn(
            &theta,
            &analytic,
            |p| {
                work.set_flat_params(p).unwrap();
                let pass = work.forward_pass(x.view(), Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
                (pass.quantiles.iter().map(loss).sum(), 0)
            },
            1e-5,
        );
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = small_net(4);
        let bytes = net.to_checkpoint().to_bytes().unwrap();
        let back = QuantileNetwork::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn horizons() {
        let [s, m, l] = HorizonConfig::all();
        assert_eq!(s.quantiles.len(), 10);
        assert_eq!(m.quantiles, vec![0.25, 0.4, 0.6, 0.75, 0.99]);
        assert_eq!(l.quantiles, vec![0.1, 0.5, 0.75, 0.9]);
        assert_eq!(l.horizon_steps, 168);
    }
}
