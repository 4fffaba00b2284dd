use super::*;
use crate::beqrnn::{build, BeqrnnTopology, BuildOptions};
use crate::nn::grad_check_fn;
use ndarray::{arr1, arr2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn head_from(wq: Array2<f64>, wk: Array2<f64>, wv: Array2<f64>, range: (usize, usize)) -> AttentionHead {
    let h = AttentionHead { range, wq, wk, wv };
    h.validate().unwrap();
    h
}

fn random_att(d: usize, ranges: &[(usize, usize)], seed: u64) -> GatedAttention {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = ranges.iter().map(|&r| AttentionHead::new(d, 3, r, &mut rng).unwrap()).collect();
    let gates = ranges
        .iter()
        .map(|_| {
            let mut g = GateParams::new(d, AggregateRule::Mean, &mut rng);
            g.b.mapv_inplace(|_| rng.random::<f64>() - 0.5);
            g
        })
        .collect();
    GatedAttention::from_parts(heads, gates).unwrap()
}

fn filled_history(att: &GatedAttention, n: usize, seed: u64) -> HistoryBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut h = att.history();
    for _ in 0..n {
        let s: Vec<f64> = (0..att.d_model()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        h.push(&s).unwrap();
    }
    h
}

/// Direct softmax-weighted sum with explicit loops.
fn brute_attend(h: &AttentionHead, q_in: &[f64], rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = h.d_model();
    let dk = h.d_k();
    let proj = |x: &[f64], w: &Array2<f64>, cols: usize| -> Vec<f64> {
        (0..cols).map(|c| (0..d).map(|r| x[r] * w[[r, c]]).sum()).collect()
    };
    let q = proj(q_in, &h.wq, dk);
    let scores: Vec<f64> = rows
        .iter()
        .map(|s| {
            let k = proj(s, &h.wk, dk);
            q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() / (dk as f64).sqrt()
        })
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
    let z: f64 = e.iter().sum();
    let w: Vec<f64> = e.iter().map(|v| v / z).collect();
    let mut out = vec![0.0; d];
    for (s, wk) in rows.iter().zip(&w) {
        let v = proj(s, &h.wv, d);
        for c in 0..d {
            out[c] += wk * v[c];
        }
    }
    (out, w)
}

#[test]
fn single_state_returns_value_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let head = AttentionHead::new(4, 3, (1, 2), &mut rng).unwrap();
    let s = vec![0.3, -1.0, 2.0, 0.5];
    let w = HistoryWindow::from_rows(&[s.clone()]).unwrap();
    let a = attend(&head, arr1(&[1.0, 0.0, -1.0, 2.0]).view(), &w).unwrap();
    assert_eq!(a.weights, vec![1.0]);
    let v = arr1(&s).dot(&head.wv);
    for (x, y) in a.output.iter().zip(v.iter()) {
        assert!((x - y).abs() < 1e-15);
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let head = AttentionHead::new(3, 3, (1, 5), &mut rng).unwrap();
    let w = HistoryWindow::from_rows(&vec![vec![0.2, -0.4, 0.9]; 5]).unwrap();
    let a = attend(&head, arr1(&[1.0, 2.0, 3.0]).view(), &w).unwrap();
    for v in a.weights {
        assert!((v - 0.2).abs() < 1e-15);
    }
}

#[test]
fn integer_case_matches_brute_force() {
    let head = head_from(
        arr2(&[[1.0, 0.0], [0.0, 1.0]]),
        arr2(&[[1.0, 1.0], [0.0, -1.0]]),
        arr2(&[[2.0, 0.0], [1.0, 1.0]]),
        (1, 3),
    );
    let rows = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
    let q = [1.0, 2.0];
    let a = attend(&head, arr1(&q).view(), &HistoryWindow::from_rows(&rows).unwrap()).unwrap();
    let (out, w) = brute_attend(&head, &q, &rows);
    // keys (1, 1), (0, -1), (1, 0) against q = (1, 2): scores (3, -2, 1) / sqrt(2)
    let e: Vec<f64> = [3.0f64, -2.0, 1.0].iter().map(|s| (s / 2f64.sqrt()).exp()).collect();
    let z: f64 = e.iter().sum();
    for k in 0..3 {
        assert!((a.weights[k] - w[k]).abs() < 1e-12);
        assert!((a.weights[k] - e[k] / z).abs() < 1e-12);
    }
    for c in 0..2 {
        assert!((a.output[c] - out[c]).abs() < 1e-12);
    }
}

#[test]
fn empty_history_is_an_error() {
    let att = random_att(3, &[(1, 2)], 3);
    let w = att.history().window(1, 2);
    let err = attend(&att.heads[0], arr1(&[0.0, 0.0, 0.0]).view(), &w).unwrap_err();
    assert_eq!(err.kind(), "insufficient_data");
}

#[test]
fn history_masks_unobserved_lags() {
    let mut h = HistoryBuffer::new(4, 1);
    for v in 1..=6 {
        h.push(&[v as f64]).unwrap();
    }
    assert_eq!(h.len(), 4);
    assert_eq!(h.lag(1), Some(&[6.0][..]));
    assert_eq!(h.lag(4), Some(&[3.0][..]));
    assert_eq!(h.lag(5), None);
    let w = h.window(3, 6);
    assert_eq!(w.mask, vec![true, true, false, false]);
    assert_eq!(w.states.column(0).to_vec(), vec![4.0, 3.0, 0.0, 0.0]);
    assert!(h.push(&[1.0, 2.0]).is_err());
}

#[test]
fn zero_gate_is_one_half() {
    let g = GateParams::zeros(4, AggregateRule::Mean);
    let w = HistoryWindow::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
    let out = gate(&g, arr1(&[0.5, -0.5, 1.0, 0.0]).view(), &w).unwrap();
    assert!(out.iter().all(|&v| v == 0.5));
}

#[test]
fn large_bias_saturates_gate() {
    let mut g = GateParams::zeros(3, AggregateRule::Last);
    g.b.fill(30.0);
    let w = HistoryWindow::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
    let out = gate(&g, arr1(&[0.1, 0.2, 0.3]).view(), &w).unwrap();
    assert!(out.iter().all(|&v| (1.0 - v) < 1e-9 && v < 1.0 + 1e-15));
}

#[test]
fn mean_and_last_aggregates_differ() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut g = GateParams::new(2, AggregateRule::Mean, &mut rng);
    let rows = vec![vec![1.0, 0.0], vec![-3.0, 2.0]];
    let w = HistoryWindow::from_rows(&rows).unwrap();
    assert_eq!(w.aggregate(AggregateRule::Mean).unwrap().to_vec(), vec![-1.0, 1.0]);
    assert_eq!(w.aggregate(AggregateRule::Last).unwrap().to_vec(), rows[0]);
    let h = arr1(&[0.2, 0.4]);
    let mean = gate(&g, h.view(), &w).unwrap();
    g.rule = AggregateRule::Last;
    let last = gate(&g, h.view(), &w).unwrap();
    let u_mean = [0.2, 0.4, -1.0, 1.0];
    let u_last = [0.2, 0.4, 1.0, 0.0];
    for c in 0..2 {
        let z = |u: &[f64; 4]| (0..4).map(|r| u[r] * g.w[[r, c]]).sum::<f64>() + g.b[c];
        assert!((mean[c] - sigmoid(z(&u_mean))).abs() < 1e-15);
        assert!((last[c] - sigmoid(z(&u_last))).abs() < 1e-15);
    }
    assert_ne!(mean, last);
}

#[test]
fn gate_limits_are_bit_exact() {
    let att = random_att(5, &[(1, 4)], 5);
    let hist = filled_history(&att, 4, 6);
    let h = arr1(&[0.3, -0.7, 1.1, 0.01, -2.5]);
    let closed = att.step_with_gate(h.view(), &hist, 0.0).unwrap();
    for (a, b) in closed.output.iter().zip(h.iter()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let open = att.step_with_gate(h.view(), &hist, 1.0).unwrap();
    let a = attend(&att.heads[0], h.view(), &hist.window(1, 4)).unwrap();
    for (x, y) in open.output.iter().zip(a.output.iter()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    assert!(att.step_with_gate(h.view(), &hist, 1.5).is_err());
}

#[test]
fn three_heads_match_brute_force() {
    let id = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
    let heads = vec![
        head_from(id.clone(), id.clone(), id.clone(), (1, 2)),
        head_from(arr2(&[[2.0, 0.0], [0.0, 0.0]]), id.clone(), arr2(&[[0.0, 1.0], [1.0, 0.0]]), (2, 3)),
        head_from(id.clone(), arr2(&[[0.0, 1.0], [1.0, 0.0]]), arr2(&[[1.0, 1.0], [0.0, 2.0]]), (1, 4)),
    ];
    let mut gates = Vec::new();
    for (k, rule) in [AggregateRule::Mean, AggregateRule::Last, AggregateRule::Mean].into_iter().enumerate() {
        let mut g = GateParams::zeros(2, rule);
        g.w[[0, 0]] = 1.0;
        g.w[[3, 1]] = -1.0;
        g.b.fill(k as f64 - 1.0);
        gates.push(g);
    }
    let att = GatedAttention::from_parts(heads, gates).unwrap();
    let mut hist = att.history();
    let past = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, -1.0]];
    for p in past {
        hist.push(&p).unwrap();
    }
    let h = [1.0, -1.0];
    let step = att.step(arr1(&h).view(), &hist).unwrap();

    // lag l is past[4 - l]
    let rows_for = |lo: usize, hi: usize| -> Vec<Vec<f64>> { (lo..=hi).map(|l| past[4 - l].to_vec()).collect() };
    let mut expect = [0.0; 2];
    let mut gsum = [0.0; 2];
    for (k, head) in att.heads.iter().enumerate() {
        let rows = rows_for(head.range.0, head.range.1);
        let (a, w) = brute_attend(head, &h, &rows);
        let agg: Vec<f64> = match att.gates[k].rule {
            AggregateRule::Mean => (0..2).map(|c| rows.iter().map(|r| r[c]).sum::<f64>() / rows.len() as f64).collect(),
            AggregateRule::Last => rows[0].clone(),
        };
        let u = [h[0], h[1], agg[0], agg[1]];
        for c in 0..2 {
            let z: f64 = (0..4).map(|r| u[r] * att.gates[k].w[[r, c]]).sum::<f64>() + att.gates[k].b[c];
            let g = 1.0 / (1.0 + (-z).exp());
            expect[c] += g * a[c];
            gsum[c] += g;
        }
        let got = step.weights[k].as_ref().unwrap();
        for (x, y) in got.iter().zip(&w) {
            assert!((x - y).abs() < 1e-12);
        }
    }
    for c in 0..2 {
        expect[c] += (1.0 - gsum[c] / 3.0) * h[c];
        assert!((step.output[c] - expect[c]).abs() < 1e-12, "{c}: {} vs {}", step.output[c], expect[c]);
    }
}

#[test]
fn empty_history_degrades_to_current_state() {
    let att = random_att(3, &[(1, 2), (5, 9)], 7);
    let h = arr1(&[1.0, 2.0, 3.0]);
    let step = att.step(h.view(), &att.history()).unwrap();
    assert!(step.degraded);
    assert_eq!(step.output, h);
    // only the short head sees a single pushed state
    let hist = filled_history(&att, 1, 8);
    let step = att.step(h.view(), &hist).unwrap();
    assert!(!step.degraded);
    assert!(step.weights[0].is_some() && step.weights[1].is_none());
}

#[test]
fn gradients_match_finite_differences() {
    let att = random_att(4, &[(1, 2), (2, 5), (4, 7)], 9);
    let hist = filled_history(&att, 6, 10);
    let h = arr1(&[0.4, -0.3, 0.8, -1.2]);
    let c = arr1(&[1.0, -0.5, 0.25, 2.0]);
    let (_, cache) = att.step_cached(h.view(), &hist, None).unwrap();
    let (grads, dh) = att.step_backward(&cache, c.view());

    let theta = att.flat_params();
    let mut probe = att.clone();
    let r = grad_check_fn(
        &theta,
        &grads,
        |p| {
            probe.set_flat_params(p).unwrap();
            (probe.step(h.view(), &hist).unwrap().output.dot(&c), 0)
        },
        1e-6,
    );
    assert!(r.max_rel_error < 1e-4, "{r:?}");
    assert_eq!(r.skipped, 0);

    // gradient on the query state, history held fixed
    let r = grad_check_fn(
        h.as_slice().unwrap(),
        dh.as_slice().unwrap(),
        |x| (att.step(ArrayView1::from(x), &hist).unwrap().output.dot(&c), 0),
        1e-6,
    );
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn checkpoint_round_trip() {
    let att = random_att(3, &[(1, 2), (3, 6)], 11);
    let back = GatedAttention::from_checkpoint(&Checkpoint::from_bytes(&att.to_checkpoint().to_bytes().unwrap()).unwrap()).unwrap();
    assert_eq!(back.flat_params(), att.flat_params());
    assert_eq!(back.heads[1].range, (3, 6));
}

#[test]
fn trace_csv_lists_observed_weights() {
    let att = random_att(2, &[(1, 3)], 12);
    let hist = filled_history(&att, 2, 13);
    let step = att.step(arr1(&[0.1, 0.2]).view(), &hist).unwrap();
    let mut trace = AttentionTrace::default();
    trace.record(7, &att, &step);
    assert_eq!(trace.rows.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("w.csv");
    trace.write_csv(&p).unwrap();
    let text = std::fs::read_to_string(p).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("t,head,lag,weight"));
    let total: f64 = lines.map(|l| l.split(',').nth(3).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn training_learns_to_look_back_one_step() {
    let net = build(
        &BeqrnnTopology::mirrored(&[4, 12, 6]),
        &BuildOptions {
            alphas: vec![0.1, 0.5, 0.9],
            dropout: 0.0,
            groups: 2,
            seed: 3,
            allow_custom_topology: true,
            ..BuildOptions::default()
        },
    )
    .unwrap();
    let level = net.level_index(0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut make = |n: usize| {
        let mut states = Array2::zeros((n, 6));
        let mut s = [0.0f64; 6];
        for t in 0..n {
            for v in s.iter_mut() {
                *v = 0.6 * *v + rng.random::<f64>() * 2.0 - 1.0;
            }
            states.row_mut(t).assign(&ArrayView1::from(&s[..]));
        }
        // target at t is the decoding of the previous state
        let (dec, _) = net.decode_level(states.view(), level).unwrap();
        let mut targets = Array2::zeros((n, 4));
        for t in 1..n {
            targets.row_mut(t).assign(&dec.row(t - 1));
        }
        targets.row_mut(0).assign(&dec.row(0));
        StateSequence { states, targets }
    };
    let train: Vec<_> = (0..4).map(|_| make(120)).collect();
    let val = vec![make(120)];
    let mut att = GatedAttention::new(&AttentionOptions {
        d_model: 6,
        d_k: 6,
        ranges: [(1, 2), (3, 5), (6, 9)],
        ..AttentionOptions::default()
    })
    .unwrap();
    let cfg = AttentionTrainConfig {
        epochs: 40,
        batch_size: 32,
        optimizer: crate::nn::AdamWConfig {
            lr: 1e-2,
            weight_decay: 0.0,
            ..crate::nn::AdamWConfig::default()
        },
        ..AttentionTrainConfig::default()
    };
    let h = train_attention(&mut att, &net, &train, &val, &cfg).unwrap();
    let first = h.records[0].2;
    let best = h.records.iter().map(|r| r.2).fold(f64::INFINITY, f64::min);
    assert!(best < 0.6 * first, "{:?}", h.records);
}

proptest! {
    #[test]
    fn weights_form_a_distribution(seed in 0u64..500, n in 1usize..12) {
        let att = random_att(4, &[(1, 12)], seed);
        let hist = filled_history(&att, n, seed + 1);
        let step = att.step(arr1(&[0.5, -1.0, 0.25, 2.0]).view(), &hist).unwrap();
        let w = step.weights[0].as_ref().unwrap();
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert_eq!(w.iter().filter(|&&v| v > 0.0).count(), n);
    }

    #[test]
    fn permuting_history_permutes_weights(seed in 0u64..500, rot in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = AttentionHead::new(3, 2, (1, 5), &mut rng).unwrap();
        let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).collect();
        let mut rotated = rows.clone();
        rotated.rotate_left(rot);
        let q = arr1(&[0.3, 1.0, -0.6]);
        let a = attend(&head, q.view(), &HistoryWindow::from_rows(&rows).unwrap()).unwrap();
        let b = attend(&head, q.view(), &HistoryWindow::from_rows(&rotated).unwrap()).unwrap();
        for k in 0..5 {
            prop_assert!((b.weights[k] - a.weights[(k + rot) % 5]).abs() < 1e-14);
        }
        for c in 0..3 {
            prop_assert!((a.output[c] - b.output[c]).abs() < 1e-12);
        }
    }
}
