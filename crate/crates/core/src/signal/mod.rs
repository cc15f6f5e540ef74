//! Continuous multichannel recordings and the windows cut from them.

mod filter;
mod io;
mod window;
mod xdawn;

pub use filter::{bandpass, resample, Biquad, SosFilter};
pub use io::{read_recording, write_recording, RECORDING_MAGIC};
pub use window::{
    artifact_flag, baseline_correct, extract_observation, extract_statement, DEFAULT_ARTIFACT_UV,
    OBSERVATION_SECONDS, STATEMENT_BASELINE_SECONDS, STATEMENT_SECONDS,
};
pub use xdawn::{augment_statement, fit_xdawn, XdawnModel, XDAWN_COMPONENTS};

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::{CompId, Error, Result};

/// Rate of statement windows after resampling.
pub const STATEMENT_RATE: f64 = 100.0;

/// Rows of an augmented statement window (four blocks of three filters).
pub const AUGMENTED_ROWS: usize = 12;

/// Position of a trajectory within a comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slot {
    First,
    Second,
}

impl Slot {
    pub fn other(self) -> Slot {
        match self {
            Slot::First => Slot::Second,
            Slot::Second => Slot::First,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Slot::First => 0,
            Slot::Second => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    pub fn from_number(n: u8) -> Result<Slot> {
        match n {
            1 => Ok(Slot::First),
            2 => Ok(Slot::Second),
            other => Err(Error::Input(format!("slot must be 1 or 2, got {other}"))),
        }
    }
}

impl Serialize for Slot {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for Slot {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = u8::deserialize(d)?;
        Slot::from_number(n).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TrajectoryStart,
    TrajectoryEnd,
    StatementOnset,
    ButtonPress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub sample: usize,
    pub kind: EventKind,
    pub comparison: CompId,
    pub slot: Option<Slot>,
}

/// A continuous `channels × samples` recording in microvolts with its event table.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRecording {
    channels: Vec<String>,
    data: DMatrix<f64>,
    rate: f64,
    events: Vec<Event>,
}

impl ContinuousRecording {
    pub fn new(channels: Vec<String>, data: DMatrix<f64>, rate: f64, events: Vec<Event>) -> Result<Self> {
        if channels.is_empty() || channels.len() != data.nrows() {
            return Err(Error::Input(format!(
                "{} channel labels for {} data rows",
                channels.len(),
                data.nrows()
            )));
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::Parameter(format!("sampling rate must be positive, got {rate}")));
        }
        let n = data.ncols();
        if events.iter().any(|e| e.sample >= n) {
            return Err(Error::Input("event sample index outside the recording".into()));
        }
        if events.windows(2).any(|w| w[1].sample < w[0].sample) {
            return Err(Error::Input("event samples must be nondecreasing".into()));
        }
        Ok(Self {
            channels,
            data,
            rate,
            events,
        })
    }

    pub fn channels(&self) -> &[String] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn find_event(&self, kind: EventKind, comparison: CompId, slot: Option<Slot>) -> Option<&Event> {
        self.events
            .iter()
            .find(|e| e.kind == kind && e.comparison == comparison && e.slot == slot)
    }

    /// Comparison ids in order of first appearance.
    pub fn comparison_ids(&self) -> Vec<CompId> {
        let mut ids: Vec<CompId> = Vec::new();
        for e in &self.events {
            if !ids.contains(&e.comparison) {
                ids.push(e.comparison);
            }
        }
        ids
    }

    pub(crate) fn with_data(&self, data: DMatrix<f64>, rate: f64, events: Vec<Event>) -> Self {
        Self {
            channels: self.channels.clone(),
            data,
            rate,
            events,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    Observation,
    Statement,
    StatementAugmented,
}

/// Class label attached to a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowLabel {
    Near,
    Far,
    Correct,
    Erroneous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalWindow {
    kind: WindowKind,
    data: DMatrix<f64>,
    rate: f64,
    comparison: CompId,
    slot: Option<Slot>,
    label: Option<WindowLabel>,
}

impl SignalWindow {
    pub fn new(
        kind: WindowKind,
        data: DMatrix<f64>,
        rate: f64,
        comparison: CompId,
        slot: Option<Slot>,
    ) -> Result<Self> {
        let cols = data.ncols() as f64;
        let ok = match kind {
            WindowKind::Observation => (cols - OBSERVATION_SECONDS * rate).abs() <= 1.0,
            WindowKind::Statement => {
                rate == STATEMENT_RATE && (cols - STATEMENT_SECONDS * rate).abs() <= 1.0
            }
            WindowKind::StatementAugmented => data.nrows() == AUGMENTED_ROWS,
        };
        if !ok || data.nrows() == 0 {
            return Err(Error::Input(format!(
                "{kind:?} window of shape {}x{} at {rate} Hz violates its shape contract",
                data.nrows(),
                data.ncols()
            )));
        }
        Ok(Self {
            kind,
            data,
            rate,
            comparison,
            slot,
            label: None,
        })
    }

    pub fn with_label(mut self, label: WindowLabel) -> Self {
        self.label = Some(label);
        self
    }

    pub fn set_label(&mut self, label: Option<WindowLabel>) {
        self.label = label;
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn comparison(&self) -> CompId {
        self.comparison
    }

    pub fn slot(&self) -> Option<Slot> {
        self.slot
    }

    pub fn label(&self) -> Option<WindowLabel> {
        self.label
    }
}
