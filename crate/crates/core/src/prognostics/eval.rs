use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::Label;

/// Ground truth for one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentTruth {
    pub transition_step: Option<usize>,
    pub n_steps: usize,
}

impl SegmentTruth {
    pub fn label_at(&self, t: usize) -> Label {
        match self.transition_step {
            Some(ts) if t >= ts => Label::Abnormal,
            _ => Label::Normal,
        }
    }
}

/// What the model produced for one segment.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentPrediction {
    /// Alert onset steps.
    pub alerts: Vec<usize>,
    /// First step at which alerts could have been raised.
    pub scored_from: usize,
    /// Per-step classifications `(t, predicted)`.
    pub classifications: Vec<(usize, Label)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub segment: usize,
    pub transition_step: Option<usize>,
    pub n_alerts: usize,
    pub detected: bool,
    pub lead_time_steps: Option<usize>,
    pub false_alarm: bool,
    /// Whether the segment has any scored step before the detection window.
    pub has_negative_region: bool,
    pub step_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub false_positive_rate: f64,
    pub detection_rate_within_window: f64,
    pub mean_lead_time_steps: Option<f64>,
    pub n_segments: usize,
    pub n_transitions: usize,
    pub horizon_steps: usize,
    pub segments: Vec<SegmentRecord>,
}

/// Segment-level detection and false-alarm rates plus step-level accuracy.
///
/// An alert at `a` detects the transition `ts` when `ts − horizon ≤ a < ts`;
/// lead time is `ts − a` for the earliest such alert. Alerts before
/// `ts − horizon` (or anywhere in a segment that never transitions) are false
/// alarms; alerts at or after `ts` are late and count as neither.
pub fn evaluate(predictions: &[SegmentPrediction], truth: &[SegmentTruth], horizon: usize) -> Result<EvalReport> {
    if truth.is_empty() {
        return Err(Error::insufficient("evaluation segments", 1, 0));
    }
    if predictions.len() != truth.len() {
        return Err(Error::shape("predictions vs segments", truth.len(), predictions.len()));
    }
    let mut records = Vec::with_capacity(truth.len());
    let (mut correct, mut total) = (0usize, 0usize);
    for (k, (p, tr)) in predictions.iter().zip(truth).enumerate() {
        let window_start = tr.transition_step.map(|ts| ts.saturating_sub(horizon));
        let negative_end = window_start.unwrap_or(tr.n_steps);
        let first_hit = tr
            .transition_step
            .and_then(|ts| p.alerts.iter().copied().filter(|&a| a >= ts.saturating_sub(horizon) && a < ts).min());
        let false_alarm = p.alerts.iter().any(|&a| a < negative_end);
        let mut seg_correct = 0;
        for &(t, label) in &p.classifications {
            seg_correct += (tr.label_at(t) == label) as usize;
        }
        correct += seg_correct;
        total += p.classifications.len();
        records.push(SegmentRecord {
            segment: k,
            transition_step: tr.transition_step,
            n_alerts: p.alerts.len(),
            detected: first_hit.is_some(),
            lead_time_steps: first_hit.map(|a| tr.transition_step.expect("hit implies transition") - a),
            false_alarm,
            has_negative_region: p.scored_from < negative_end,
            step_accuracy: (!p.classifications.is_empty())
                .then(|| seg_correct as f64 / p.classifications.len() as f64),
        });
    }
    if total == 0 {
        return Err(Error::insufficient("step classifications", 1, 0));
    }
    let n_transitions = records.iter().filter(|r| r.transition_step.is_some()).count();
    let detected: Vec<usize> = records.iter().filter_map(|r| r.lead_time_steps).collect();
    let negatives = records.iter().filter(|r| r.has_negative_region).count();
    let false_alarms = records.iter().filter(|r| r.has_negative_region && r.false_alarm).count();
    Ok(EvalReport {
        accuracy: correct as f64 / total as f64,
        false_positive_rate: if negatives == 0 { 0.0 } else { false_alarms as f64 / negatives as f64 },
        detection_rate_within_window: if n_transitions == 0 {
            0.0
        } else {
            detected.len() as f64 / n_transitions as f64
        },
        mean_lead_time_steps: (!detected.is_empty())
            .then(|| detected.iter().sum::<usize>() as f64 / detected.len() as f64),
        n_segments: truth.len(),
        n_transitions,
        horizon_steps: horizon,
        segments: records,
    })
}
