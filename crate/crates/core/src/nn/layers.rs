use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    Slope,
}

impl ParamKind {
    /// Decoupled weight decay applies to dense weights only.
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// Fixed-order access to every trainable tensor.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64]));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64]));

    fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit_params(&mut |_, p| out.extend_from_slice(p));
        out
    }

    fn decay_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.n_params());
        self.visit_params(&mut |k, p| out.extend(std::iter::repeat_n(k.decays(), p.len())));
        out
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.n_params();
        if flat.len() != n {
            return Err(Error::shape("flat parameter vector", n, flat.len()));
        }
        let mut off = 0;
        self.visit_params_mut(&mut |_, p| {
            p.copy_from_slice(&flat[off..off + p.len()]);
            off += p.len();
        });
        Ok(())
    }
}

fn slice_mut<D: ndarray::Dimension>(a: &mut ndarray::Array<f64, D>) -> &mut [f64] {
    a.as_slice_mut().expect("standard layout")
}

fn slice<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
    a.as_slice().expect("standard layout")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in_dim × out_dim`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    /// Uniform fan-in initialization `U(−1/√in, 1/√in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let w = Array2::from_shape_simple_fn((in_dim, out_dim), || u.sample(rng));
        Self {
            w,
            b: Array1::zeros(out_dim),
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: Array2::zeros((in_dim, out_dim)),
            b: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.in_dim() * self.out_dim() + self.out_dim()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape("dense input width", self.in_dim(), x.ncols()));
        }
        Ok(x.dot(&self.w) + &self.b)
    }

    /// Returns `(dx, dw, db)`.
    pub fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let dx = dy.dot(&self.w.t());
        let dw = x.t().dot(&dy);
        let db = dy.sum_axis(Axis(0));
        (dx, dw, db)
    }
}

/// Largest divisor of `channels` not exceeding `requested`.
pub fn effective_groups(channels: usize, requested: usize) -> usize {
    (1..=requested.max(1).min(channels.max(1)))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupNorm {
    pub groups: usize,
    pub eps: f64,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct GroupNormCache {
    xhat: Array2<f64>,
    inv_std: Array2<f64>,
}

impl GroupNorm {
    pub fn new(channels: usize, requested_groups: usize, eps: f64) -> Self {
        Self {
            groups: effective_groups(channels, requested_groups),
            eps,
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Per-group standardized input, before the affine map.
    pub fn normalize(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let (n, c) = x.dim();
        let gs = c / self.groups;
        let mut xhat = Array2::zeros((n, c));
        let mut inv_std = Array2::zeros((n, self.groups));
        for r in 0..n {
            for g in 0..self.groups {
                let seg = x.slice(s![r, g * gs..(g + 1) * gs]);
                let mean = seg.sum() / gs as f64;
                let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gs as f64;
                let is = 1.0 / (var + self.eps).sqrt();
                inv_std[[r, g]] = is;
                for (k, v) in seg.iter().enumerate() {
                    xhat[[r, g * gs + k]] = (v - mean) * is;
                }
            }
        }
        (xhat, inv_std)
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, GroupNormCache)> {
        if x.ncols() != self.channels() {
            return Err(Error::shape("group norm width", self.channels(), x.ncols()));
        }
        let (xhat, inv_std) = self.normalize(x);
        let y = &xhat * &self.gamma + &self.beta;
        Ok((y, GroupNormCache { xhat, inv_std }))
    }

    /// Returns `(dx, dgamma, dbeta)`.
    pub fn backward(&self, cache: &GroupNormCache, dy: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let (n, c) = dy.dim();
        let gs = c / self.groups;
        let dgamma = (&dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let mut dx = Array2::zeros((n, c));
        let m = gs as f64;
        for r in 0..n {
            for g in 0..self.groups {
                let range = g * gs..(g + 1) * gs;
                let dxh = dxhat.slice(s![r, range.clone()]);
                let xh = cache.xhat.slice(s![r, range.clone()]);
                let sum_d = dxh.sum();
                let sum_dx = (&dxh * &xh).sum();
                let is = cache.inv_std[[r, g]];
                for k in 0..gs {
                    dx[[r, g * gs + k]] = is / m * (m * dxh[k] - sum_d - xh[k] * sum_dx);
                }
            }
        }
        (dx, dgamma, dbeta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    /// Per-channel negative slopes.
    PRelu(Array1<f64>),
    Sigmoid,
    Identity,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn prelu(channels: usize) -> Self {
        Activation::PRelu(Array1::from_elem(channels, 0.25))
    }

    pub fn forward(&self, z: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.to_owned(),
            Activation::Sigmoid => z.mapv(sigmoid),
            Activation::PRelu(a) => {
                let mut out = z.to_owned();
                for mut row in out.rows_mut() {
                    for (v, s) in row.iter_mut().zip(a.iter()) {
                        if *v < 0.0 {
                            *v *= s;
                        }
                    }
                }
                out
            }
        }
    }

    /// Returns `(dz, dslope)`; `dslope` is empty unless PReLU.
    pub fn backward(&self, z: ArrayView2<f64>, out: ArrayView2<f64>, dout: ArrayView2<f64>) -> (Array2<f64>, Array1<f64>) {
        match self {
            Activation::Identity => (dout.to_owned(), Array1::zeros(0)),
            Activation::Sigmoid => (&dout * &out.mapv(|s| s * (1.0 - s)), Array1::zeros(0)),
            Activation::PRelu(a) => {
                let mut dz = dout.to_owned();
                let mut da = Array1::zeros(a.len());
                for (r, mut row) in dz.rows_mut().into_iter().enumerate() {
                    for (c, v) in row.iter_mut().enumerate() {
                        let zi = z[[r, c]];
                        if zi < 0.0 {
                            da[c] += *v * zi;
                            *v *= a[c];
                        }
                    }
                }
                (dz, da)
            }
        }
    }
}

/// Dense → optional group norm → activation → dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub dense: Dense,
    pub norm: Option<GroupNorm>,
    pub activation: Activation,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    x: Array2<f64>,
    norm: Option<GroupNormCache>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl Block {
    pub fn new(dense: Dense, norm: Option<GroupNorm>, activation: Activation, dropout: f64) -> Self {
        Self {
            dense,
            norm,
            activation,
            dropout,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.dense.out_dim()
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, BlockCache)> {
        let z = self.dense.forward(x)?;
        let (pre_act, norm) = match &self.norm {
            Some(gn) => {
                let (y, c) = gn.forward(z.view())?;
                (y, Some(c))
            }
            None => (z, None),
        };
        let act = self.activation.forward(pre_act.view());
        let (out, mask) = if mode == Mode::Train && self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let scale = 1.0 / keep;
            let mask = Array2::from_shape_simple_fn(act.dim(), || if rng.random::<f64>() < keep { scale } else { 0.0 });
            (&act * &mask, Some(mask))
        } else {
            (act.clone(), None)
        };
        Ok((
            out,
            BlockCache {
                x: x.to_owned(),
                norm,
                pre_act,
                act,
                mask,
            },
        ))
    }

    /// Backward pass; parameter gradients are appended to `grads` in visit order.
    pub fn backward(&self, cache: &BlockCache, dout: ArrayView2<f64>, grads: &mut Vec<f64>) -> Array2<f64> {
        let dact = match &cache.mask {
            Some(m) => &dout * m,
            None => dout.to_owned(),
        };
        let (dpre, dslope) = self
            .activation
            .backward(cache.pre_act.view(), cache.act.view(), dact.view());
        let (dz, norm_grads) = match (&self.norm, &cache.norm) {
            (Some(gn), Some(c)) => {
                let (dz, dg, db) = gn.backward(c, dpre.view());
                (dz, Some((dg, db)))
            }
            _ => (dpre, None),
        };
        let (dx, dw, db) = self.dense.backward(cache.x.view(), dz.view());
        grads.extend_from_slice(slice(&dw));
        grads.extend_from_slice(slice(&db));
        if let Some((dg, dbeta)) = norm_grads {
            grads.extend_from_slice(slice(&dg));
            grads.extend_from_slice(slice(&dbeta));
        }
        if matches!(self.activation, Activation::PRelu(_)) {
            grads.extend_from_slice(slice(&dslope));
        }
        dx
    }
}

impl Parameterized for Block {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        f(ParamKind::Weight, slice(&self.dense.w));
        f(ParamKind::Bias, slice(&self.dense.b));
        if let Some(gn) = &self.norm {
            f(ParamKind::NormScale, slice(&gn.gamma));
            f(ParamKind::NormShift, slice(&gn.beta));
        }
        if let Activation::PRelu(a) = &self.activation {
            f(ParamKind::Slope, slice(a));
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        f(ParamKind::Weight, slice_mut(&mut self.dense.w));
        f(ParamKind::Bias, slice_mut(&mut self.dense.b));
        if let Some(gn) = &mut self.norm {
            f(ParamKind::NormScale, slice_mut(&mut gn.gamma));
            f(ParamKind::NormShift, slice_mut(&mut gn.beta));
        }
        if let Activation::PRelu(a) = &mut self.activation {
            f(ParamKind::Slope, slice_mut(a));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    pub blocks: Vec<Block>,
}

#[derive(Debug, Clone)]
pub struct SequentialCache(Vec<BlockCache>);

impl Sequential {
    pub fn new(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn in_dim(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.dense.in_dim())
    }

    pub fn out_dim(&self) -> usize {
        self.blocks.last().map_or(0, Block::out_dim)
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        x: ArrayView2<f64>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, SequentialCache)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x.to_owned();
        for b in &self.blocks {
            let (y, c) = b.forward(h.view(), mode, rng)?;
            caches.push(c);
            h = y;
        }
        Ok((h, SequentialCache(caches)))
    }

    /// Deterministic inference pass.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut h = x.to_owned();
        for b in &self.blocks {
            let z = b.dense.forward(h.view())?;
            let u = match &b.norm {
                Some(gn) => gn.forward(z.view())?.0,
                None => z,
            };
            h = b.activation.forward(u.view());
        }
        Ok(h)
    }

    /// Returns `(dx, flat parameter gradients)`.
    pub fn backward(&self, cache: &SequentialCache, dout: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
        let mut per_block: Vec<Vec<f64>> = Vec::with_capacity(self.blocks.len());
        let mut d = dout.to_owned();
        for (b, c) in self.blocks.iter().zip(&cache.0).rev() {
            let mut g = Vec::new();
            d = b.backward(c, d.view(), &mut g);
            per_block.push(g);
        }
        let flat = per_block.into_iter().rev().flatten().collect();
        (d, flat)
    }
}

impl Parameterized for Sequential {
    fn visit_params(&self, f: &mut dyn FnMut(ParamKind, &[f64])) {
        for b in &self.blocks {
            b.visit_params(f);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(ParamKind, &mut [f64])) {
        for b in &mut self.blocks {
            b.visit_params_mut(f);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_return_bias() {
        let mut d = Dense::zeros(3, 2);
        d.b = array![1.5, -2.0];
        let out = d.forward(array![[0.3, 0.1, 9.0]].view()).unwrap();
        assert_eq!(out, array![[1.5, -2.0]]);
        assert_eq!(d.parameter_count(), 8);
        assert_eq!(Dense::zeros(70, 350).parameter_count(), 24_850);
    }

    #[test]
    fn shape_mismatch() {
        let err = Dense::zeros(3, 2).forward(array![[1.0, 2.0]].view()).unwrap_err();
        assert_eq!(err.kind(), "shape_mismatch");
    }

    #[test]
    fn prelu_unit_slope_is_identity() {
        let act = Activation::PRelu(array![1.0, 1.0]);
        let z = array![[-3.0, 2.0], [-0.5, -7.0]];
        assert_eq!(act.forward(z.view()), z);
        let default = Activation::prelu(2).forward(z.view());
        assert_eq!(default, array![[-0.75, 2.0], [-0.125, -1.75]]);
    }

    #[test]
    fn groups_are_largest_divisor() {
        assert_eq!(effective_groups(350, 8), 7);
        assert_eq!(effective_groups(280, 8), 8);
        assert_eq!(effective_groups(179, 8), 1);
        assert_eq!(effective_groups(20, 8), 5);
        assert_eq!(effective_groups(3, 8), 3);
    }

    #[test]
    fn group_norm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let gn = GroupNorm::new(24, 8, 1e-5);
        for scale in [1e-3, 1.0, 40.0, 1e4] {
            let x = Array2::from_shape_simple_fn((5, 24), || (rng.random::<f64>() - 0.2) * scale);
            let (xhat, _) = gn.normalize(x.view());
            for r in 0..5 {
                for g in 0..8 {
                    let raw = x.slice(s![r, g * 3..g * 3 + 3]);
                    let raw_mean = raw.sum() / 3.0;
                    let raw_var = raw.iter().map(|v| (v - raw_mean).powi(2)).sum::<f64>() / 3.0;
                    let seg = xhat.slice(s![r, g * 3..g * 3 + 3]);
                    let mean = seg.sum() / 3.0;
                    let var = seg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
                    assert!(mean.abs() < 1e-6);
                    assert!((var - raw_var / (raw_var + 1e-5)).abs() < 1e-12);
                    if raw_var >= 10.0 {
                        assert!((var - 1.0).abs() < 1e-6, "{var}");
                    }
                }
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Block::new(Dense::new(4, 6, &mut rng), Some(GroupNorm::new(6, 8, 1e-5)), Activation::prelu(6), 0.15);
        let x = array![[0.1, -0.2, 0.3, 0.9]];
        let (a, _) = b.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        let (c, _) = b.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut dense = Dense::zeros(1, 1);
        dense.b = array![2.0];
        let b = Block::new(dense, None, Activation::Identity, 0.15);
        let x = Array2::zeros((10_000, 1));
        let (eval, _) = b.forward(x.view(), Mode::Eval, &mut rng).unwrap();
        let (train, _) = b.forward(x.view(), Mode::Train, &mut rng).unwrap();
        let mean = train.mean().unwrap();
        assert!((mean - eval[[0, 0]]).abs() / eval[[0, 0]] < 0.02, "{mean}");
    }

    #[test]
    fn flat_params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Sequential::new(vec![
            Block::new(Dense::new(3, 8, &mut rng), Some(GroupNorm::new(8, 8, 1e-5)), Activation::prelu(8), 0.0),
            Block::new(Dense::new(8, 2, &mut rng), None, Activation::Identity, 0.0),
        ]);
        assert_eq!(net.n_params(), 3 * 8 + 8 + 8 + 8 + 8 + 8 * 2 + 2);
        let mut flat = net.flat_params();
        flat[0] = 42.0;
        net.set_flat_params(&flat).unwrap();
        assert_eq!(net.blocks[0].dense.w[[0, 0]], 42.0);
        let mask = net.decay_mask();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 3 * 8 + 8 * 2);
        assert!(net.set_flat_params(&flat[1..]).is_err());
    }
}
