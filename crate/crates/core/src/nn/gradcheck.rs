use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Mode, Parameterized, Sequential};
use super::loss::Loss;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `max |a − fd| / (|a| + |fd| + 1e−12)` over checked parameters.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Parameters whose probes straddle a non-smooth seam.
    pub skipped: usize,
    /// Parameters where both gradients are below the absolute floor.
    pub negligible: usize,
}

/// Gradients smaller than this in both estimates are rounding noise.
const ABS_FLOOR: f64 = 1e-9;

/// Central-difference check of `analytic` against `f`.
///
/// `f` returns the objective and a signature of the smooth piece it was
/// evaluated on; probes with differing signatures are skipped.
pub fn grad_check_fn<F>(theta: &[f64], analytic: &[f64], mut f: F, eps: f64) -> GradCheck
where
    F: FnMut(&[f64]) -> (f64, u64),
{
    let mut probe = theta.to_vec();
    let mut out = GradCheck {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        skipped: 0,
        negligible: 0,
    };
    for k in 0..theta.len() {
        probe[k] = theta[k] + eps;
        let (fp, sp) = f(&probe);
        probe[k] = theta[k] - eps;
        let (fm, sm) = f(&probe);
        probe[k] = theta[k];
        if sp != sm {
            out.skipped += 1;
            continue;
        }
        let fd = (fp - fm) / (2.0 * eps);
        let a = analytic[k];
        if a.abs() < ABS_FLOOR && fd.abs() < ABS_FLOOR {
            out.negligible += 1;
            continue;
        }
        out.checked += 1;
        let rel = (a - fd).abs() / (a.abs() + fd.abs() + 1e-12);
        if rel > out.max_rel_error || out.worst_index.is_none() {
            out.max_rel_error = out.max_rel_error.max(rel);
            out.worst_index = Some(k);
        }
    }
    out
}

/// Loss summed over every output, and its branch signature.
fn objective(net: &Sequential, loss: &Loss, x: ArrayView2<f64>, target: ArrayView2<f64>) -> (f64, u64, Array2<f64>) {
    let out = net.predict(x).expect("grad check shapes");
    let mut total = 0.0;
    let mut sig = 0xcbf29ce484222325u64;
    for (q, y) in out.iter().zip(target.iter()) {
        total += loss.value(*y, *q);
        sig = (sig ^ loss.branch(*y, *q) as u64).wrapping_mul(0x100000001b3);
    }
    (total, sig, out)
}

/// Checks every parameter gradient of `net` under `loss` (dropout disabled).
pub fn grad_check(net: &Sequential, loss: &Loss, x: ArrayView2<f64>, target: ArrayView2<f64>, eps: f64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, cache) = net.forward(x, Mode::Eval, &mut rng).expect("grad check shapes");
    let dout = Array2::from_shape_fn(out.dim(), |(r, c)| loss.grad(target[[r, c]], out[[r, c]]));
    let (_, analytic) = net.backward(&cache, dout.view());
    let theta = net.flat_params();
    let mut work = net.clone();
    grad_check_fn(
        &theta,
        &analytic,
        |p| {
            work.set_flat_params(p).expect("same layout");
            let (v, s, _) = objective(&work, loss, x, target);
            (v, s)
        },
        eps,
    )
}
