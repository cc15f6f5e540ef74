use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::ContinuousRecording;
use crate::{Error, Result};

/// Order of each Butterworth half of the band-pass.
const BANDPASS_ORDER: usize = 4;
/// Order of the anti-alias low-pass used before decimation.
const ANTI_ALIAS_ORDER: usize = 8;
/// Anti-alias cutoff as a fraction of the new sampling rate.
const ANTI_ALIAS_FRACTION: f64 = 0.4;

/// Second-order section in transposed direct form II, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn lowpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        // 1 − cos w0 without cancellation
        let one_minus_cos = 2.0 * (w0 / 2.0).sin().powi(2);
        let a0 = 1.0 + alpha;
        Self {
            b: [one_minus_cos / 2.0 / a0, one_minus_cos / a0, one_minus_cos / 2.0 / a0],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn highpass(cutoff: f64, rate: f64, q: f64) -> Self {
        let w0 = 2.0 * PI * cutoff / rate;
        let alpha = w0.sin() / (2.0 * q);
        let cos = w0.cos();
        let a0 = 1.0 + alpha;
        let g = (1.0 + cos) / 2.0 / a0;
        Self {
            b: [g, -2.0 * g, g],
            a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        }
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant unit input produce a constant output.
    fn steady_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * g;
        let z1 = self.b[1] - self.a[0] * g + z2;
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

fn butterworth_qs(order: usize) -> impl Iterator<Item = f64> {
    debug_assert!(order.is_multiple_of(2));
    (0..order / 2).map(move |k| 1.0 / (2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).cos()))
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    /// Butterworth low-pass of even `order`.
    pub fn butter_lowpass(order: usize, cutoff: f64, rate: f64) -> Self {
        Self {
            sections: butterworth_qs(order).map(|q| Biquad::lowpass(cutoff, rate, q)).collect(),
        }
    }

    /// Butterworth high-pass of even `order`.
    pub fn butter_highpass(order: usize, cutoff: f64, rate: f64) -> Self {
        Self {
            sections: butterworth_qs(order).map(|q| Biquad::highpass(cutoff, rate, q)).collect(),
        }
    }

    pub fn then(mut self, other: SosFilter) -> Self {
        self.sections.extend(other.sections);
        self
    }

    /// Causal filtering with steady-state initial conditions for `x[0]`.
    pub fn filter(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut level = first;
        for s in &self.sections {
            let [z1, z2] = s.steady_state();
            s.run(x, [z1 * level, z2 * level]);
            level *= s.dc_gain();
        }
    }

    /// Zero-phase forward-backward filtering with odd-reflection padding.
    pub fn filtfilt(&self, x: &[f64], padlen: usize) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = padlen.min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|k| 2.0 * x[0] - x[k]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|k| 2.0 * x[n - 1] - x[n - 1 - k]));
        self.filter(&mut ext);
        ext.reverse();
        self.filter(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    fn apply_rows(&self, data: &DMatrix<f64>, padlen: usize) -> DMatrix<f64> {
        let mut out = data.clone();
        for (r, row) in data.row_iter().enumerate() {
            let samples: Vec<f64> = row.iter().copied().collect();
            for (c, v) in self.filtfilt(&samples, padlen).into_iter().enumerate() {
                out[(r, c)] = v;
            }
        }
        out
    }
}

/// Zero-phase band-pass: Butterworth high-pass at `lo` cascaded with a
/// Butterworth low-pass at `hi`, run forward and backward.
pub fn bandpass(rec: &ContinuousRecording, lo: f64, hi: f64) -> Result<ContinuousRecording> {
    let rate = rec.rate();
    if !(lo > 0.0 && lo < hi && hi < rate / 2.0) {
        return Err(Error::Parameter(format!(
            "band-pass needs 0 < lo < hi < Nyquist ({}), got {lo}..{hi}",
            rate / 2.0
        )));
    }
    let sos = SosFilter::butter_highpass(BANDPASS_ORDER, lo, rate)
        .then(SosFilter::butter_lowpass(BANDPASS_ORDER, hi, rate));
    let padlen = (3 * (2 * sos.sections.len() + 1)).max((rate / lo).ceil() as usize);
    let data = sos.apply_rows(rec.data(), padlen);
    Ok(rec.with_data(data, rate, rec.events().to_vec()))
}

/// Anti-alias low-pass at `0.4 · new_rate` followed by integer decimation.
/// Event indices are divided by the ratio and rounded down.
pub fn resample(rec: &ContinuousRecording, new_rate: f64) -> Result<ContinuousRecording> {
    let rate = rec.rate();
    let ratio_f = rate / new_rate;
    let ratio = ratio_f.round();
    if !(new_rate > 0.0) || ratio < 1.0 || (ratio_f - ratio).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "resampling needs an integer ratio, got {rate} Hz -> {new_rate} Hz"
        )));
    }
    let ratio = ratio as usize;
    if ratio == 1 {
        return Ok(rec.clone());
    }
    let sos = SosFilter::butter_lowpass(ANTI_ALIAS_ORDER, ANTI_ALIAS_FRACTION * new_rate, rate);
    let padlen = 3 * (2 * sos.sections.len() + 1) * ratio;
    let filtered = sos.apply_rows(rec.data(), padlen);
    let n_out = rec.n_samples().div_ceil(ratio);
    let data = DMatrix::from_fn(rec.n_channels(), n_out, |r, c| filtered[(r, c * ratio)]);
    let events = rec
        .events()
        .iter()
        .map(|e| {
            let mut e = e.clone();
            e.sample /= ratio;
            e
        })
        .collect();
    Ok(rec.with_data(data, new_rate, events))
}
