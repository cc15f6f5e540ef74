use nalgebra::DMatrix;

use super::{ContinuousRecording, EventKind, SignalWindow, Slot, WindowKind};
use crate::{CompId, Error, Result};

pub const OBSERVATION_SECONDS: f64 = 2.0;
pub const STATEMENT_SECONDS: f64 = 1.0;
pub const STATEMENT_BASELINE_SECONDS: f64 = 0.2;
/// Peak-to-peak rejection threshold in microvolts.
pub const DEFAULT_ARTIFACT_UV: f64 = 100.0;

fn seconds_to_samples(seconds: f64, rate: f64) -> usize {
    (seconds * rate).round() as usize
}

/// Two-second window centered in the execution of trajectory `slot` of comparison `j`.
pub fn extract_observation(rec: &ContinuousRecording, j: CompId, slot: Slot) -> Result<SignalWindow> {
    let start = rec
        .find_event(EventKind::TrajectoryStart, j, Some(slot))
        .ok_or_else(|| Error::Extraction(format!("no trajectory start for comparison {j} slot {}", slot.number())))?
        .sample;
    let end = rec
        .find_event(EventKind::TrajectoryEnd, j, Some(slot))
        .ok_or_else(|| Error::Extraction(format!("no trajectory end for comparison {j} slot {}", slot.number())))?
        .sample;
    let len = seconds_to_samples(OBSERVATION_SECONDS, rec.rate());
    if end < start || end - start < len {
        return Err(Error::Extraction(format!(
            "comparison {j} slot {}: execution of {} samples is shorter than the {len}-sample window",
            slot.number(),
            end.saturating_sub(start)
        )));
    }
    let from = start + (end - start - len) / 2;
    let data = rec.data().columns(from, len).into_owned();
    SignalWindow::new(WindowKind::Observation, data, rec.rate(), j, Some(slot))
}

/// Subtract each channel's mean over `pre` from `window`.
pub fn baseline_correct(window: &DMatrix<f64>, pre: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = window.clone();
    for (mut row, pre_row) in out.row_iter_mut().zip(pre.row_iter()) {
        let mean = pre_row.mean();
        row.add_scalar_mut(-mean);
    }
    out
}

/// One-second window from the statement onset of comparison `j`, baselined
/// by the preceding 200 ms. The recording must already be at the statement rate.
pub fn extract_statement(rec: &ContinuousRecording, j: CompId) -> Result<SignalWindow> {
    let onset = rec
        .find_event(EventKind::StatementOnset, j, None)
        .ok_or_else(|| Error::Extraction(format!("no statement onset for comparison {j}")))?
        .sample;
    let len = seconds_to_samples(STATEMENT_SECONDS, rec.rate());
    let base = seconds_to_samples(STATEMENT_BASELINE_SECONDS, rec.rate());
    if onset < base {
        return Err(Error::Extraction(format!(
            "comparison {j}: only {onset} samples before the statement, {base} needed for the baseline"
        )));
    }
    if onset + len > rec.n_samples() {
        return Err(Error::Extraction(format!("comparison {j}: statement window runs past the recording")));
    }
    let pre = rec.data().columns(onset - base, base).into_owned();
    let window = rec.data().columns(onset, len).into_owned();
    SignalWindow::new(
        WindowKind::Statement,
        baseline_correct(&window, &pre),
        rec.rate(),
        j,
        None,
    )
}

/// True iff some channel's peak-to-peak amplitude strictly exceeds `threshold_uv`.
pub fn artifact_flag(w: &SignalWindow, threshold_uv: f64) -> bool {
    w.data().row_iter().any(|row| row.max() - row.min() > threshold_uv)
}
