//! Synthetic traffic: analytic waves, event-triggered series, injected
//! anomalies, measurement noise and interval resampling.

use std::f64::consts::PI;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{anomaly_label, TimeSeries};

pub mod synth;

pub use synth::{synthesize, SynthSpec};

pub const DEFAULT_INTERVAL: f64 = 60.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveKind {
    Sine,
    Square,
    Triangle,
}

impl WaveKind {
    pub const ALL: [WaveKind; 3] = [WaveKind::Sine, WaveKind::Square, WaveKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            WaveKind::Sine => "sine",
            WaveKind::Square => "square",
            WaveKind::Triangle => "triangle",
        }
    }

    /// Unit-amplitude waveform at angle `theta` (radians). All three start
    /// at zero (square: +1) and rise.
    fn at(self, theta: f64) -> f64 {
        match self {
            WaveKind::Sine => theta.sin(),
            WaveKind::Square => {
                if theta.sin() >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            WaveKind::Triangle => {
                let u = (theta / (2.0 * PI) + 0.25).rem_euclid(1.0);
                1.0 - 4.0 * (u - 0.5).abs()
            }
        }
    }
}

/// `amplitude * wave(2π t / period + phase)` for t = 0..length, at 60 s bins.
pub fn gen_wave(kind: WaveKind, length: usize, period: f64, amplitude: f64, phase: f64) -> Result<TimeSeries> {
    if length < 2 {
        return Err(Error::invalid("length", format!("need at least 2 bins, got {length}")));
    }
    if !(period >= 2.0 && period.is_finite()) {
        return Err(Error::invalid("period", format!("{period} is below 2 bins")));
    }
    let values = (0..length)
        .map(|t| amplitude * kind.at(2.0 * PI * t as f64 / period + phase))
        .collect();
    TimeSeries::new(kind.name(), DEFAULT_INTERVAL, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventKind {
    Mtc,
    Htc,
}

/// One event source: a 0/1 indicator per bin and the volume it produces
/// while active.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSpec {
    pub kind: EventKind,
    pub indicator: Vec<u8>,
    pub intensity: Vec<f64>,
}

impl EventSpec {
    pub fn new(kind: EventKind, indicator: Vec<u8>, intensity: Vec<f64>) -> Result<Self> {
        if indicator.len() != intensity.len() {
            return Err(Error::LengthMismatch {
                expected: indicator.len(),
                actual: intensity.len(),
            });
        }
        if indicator.iter().any(|&e| e > 1) {
            return Err(Error::invalid("indicator", "entries must be 0 or 1"));
        }
        if intensity.iter().any(|&a| !(a >= 0.0)) {
            return Err(Error::invalid("intensity", "entries must be non-negative"));
        }
        Ok(Self {
            kind,
            indicator,
            intensity,
        })
    }

    /// Periodic low-volume machine traffic: active for `duration` bins every
    /// `period` bins starting at `offset`, volume `level` with ±10% jitter.
    pub fn mtc(length: usize, period: usize, offset: usize, duration: usize, level: f64, seed: u64) -> Result<Self> {
        if period == 0 || duration == 0 || duration > period {
            return Err(Error::invalid("period", "need 0 < duration <= period"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let indicator = (0..length)
            .map(|t| u8::from(t >= offset && (t - offset) % period < duration))
            .collect();
        let intensity = (0..length).map(|_| level * rng.random_range(0.9..1.1)).collect();
        Self::new(EventKind::Mtc, indicator, intensity)
    }

    /// Sparse human-driven bursts: `bursts` activity windows of 2..=max_len
    /// bins at random positions, each with a lognormal-ish large volume.
    pub fn htc(length: usize, bursts: usize, max_len: usize, level: f64, seed: u64) -> Result<Self> {
        if max_len < 2 || max_len > length {
            return Err(Error::invalid("max_len", format!("must be in 2..={length}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut indicator = vec![0u8; length];
        let mut intensity = vec![0.0; length];
        for _ in 0..bursts {
            let len = rng.random_range(2..=max_len);
            let start = rng.random_range(0..=length - len);
            let volume = level * (1.0 + rng.random::<f64>()).powi(2);
            for t in start..start + len {
                indicator[t] = 1;
                intensity[t] = volume * rng.random_range(0.7..1.3);
            }
        }
        Self::new(EventKind::Htc, indicator, intensity)
    }

    pub fn len(&self) -> usize {
        self.indicator.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicator.is_empty()
    }
}

/// Sum of `intensity ∘ indicator` over all events.
pub fn gen_event_triggered(events: &[EventSpec], length: usize) -> Result<TimeSeries> {
    if length == 0 {
        return Err(Error::EmptyInput("event-triggered series"));
    }
    let mut values = vec![0.0; length];
    for e in events {
        if e.len() != length {
            return Err(Error::LengthMismatch {
                expected: length,
                actual: e.len(),
            });
        }
        for (v, (&on, &a)) in values.iter_mut().zip(e.indicator.iter().zip(&e.intensity)) {
            if on == 1 {
                *v += a;
            }
        }
    }
    TimeSeries::new("events", DEFAULT_INTERVAL, values)
}

/// Anomaly shape parameters. Magnitudes scale with the series' peak absolute
/// value so one setting works across amplitudes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyParams {
    /// First affected bin; drawn uniformly when absent.
    pub start: Option<usize>,
    /// Segment length; per-type default when absent (20, 10, 20, 1).
    pub length: Option<usize>,
    /// Type 1 noise σ as a multiple of the peak.
    pub sigma: f64,
    /// Type 2 plateau height as a multiple of the peak.
    pub plateau: f64,
    /// Type 4 impulse value as a multiple of the peak.
    pub impulse: f64,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        Self {
            start: None,
            length: None,
            sigma: 0.5,
            plateau: 5.0,
            impulse: 5.0,
        }
    }
}

fn default_segment(kind: u8) -> usize {
    match kind {
        2 => 10,
        4 => 1,
        _ => 20,
    }
}

fn peak(values: &[f64]) -> f64 {
    let m = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

/// Returns the anomalous copy and the affected half-open range.
pub fn inject_anomaly_at(
    x: &TimeSeries,
    kind: u8,
    params: &AnomalyParams,
    seed: u64,
) -> Result<(TimeSeries, std::ops::Range<usize>)> {
    if !(1..=4).contains(&kind) {
        return Err(Error::invalid("type", format!("anomaly type {kind} is not in 1..=4")));
    }
    let n = x.len();
    let len = params.length.unwrap_or_else(|| default_segment(kind));
    if len == 0 || len > n {
        return Err(Error::invalid("length", format!("segment of {len} bins does not fit {n}")));
    }
    let len = if kind == 4 { 1 } else { len };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = match params.start {
        Some(s) if s + len <= n => s,
        Some(s) => {
            return Err(Error::invalid(
                "start",
                format!("segment [{s}, {}) is out of range for {n} bins", s + len),
            ))
        }
        None => rng.random_range(0..=n - len),
    };
    let seg = start..start + len;
    let top = peak(&x.values);
    let mut out = x.clone();
    match kind {
        1 => {
            let sigma = params.sigma * top;
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
                for v in &mut out.values[seg.clone()] {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        2 => {
            for v in &mut out.values[seg.clone()] {
                *v += params.plateau * top;
            }
        }
        3 => out.values[seg.clone()].fill(0.0),
        _ => {
            let spike = params.impulse * top;
            let v = &mut out.values[start];
            *v = if *v == spike { spike + top } else { spike };
        }
    }
    out.label = Some(anomaly_label(kind));
    Ok((out, seg))
}

pub fn inject_anomaly(x: &TimeSeries, kind: u8, params: &AnomalyParams, seed: u64) -> Result<TimeSeries> {
    inject_anomaly_at(x, kind, params, seed).map(|(s, _)| s)
}

/// Measurement noise. Type 1 interpolates to `level`× the sampling rate,
/// type 2 keeps bins ⌊j·level⌋, type 3 rotates right by ⌊level⌋, type 4 adds
/// N(0, level²) everywhere.
pub fn apply_noise(x: &TimeSeries, kind: u8, level: f64, seed: u64) -> Result<TimeSeries> {
    if !(level >= 0.0 && level.is_finite()) {
        return Err(Error::invalid("level", format!("{level} is not a finite non-negative number")));
    }
    let n = x.len();
    let mut out = x.clone();
    match kind {
        1 => {
            if level == 0.0 {
                return Err(Error::invalid("level", "rate factor must be positive"));
            }
            let m = ((n as f64) * level).round() as usize;
            if m < 2 || n < 2 {
                return Err(Error::invalid("level", format!("upsampling {n} bins by {level} leaves {m}")));
            }
            let step = (n - 1) as f64 / (m - 1) as f64;
            out.values = (0..m).map(|j| interp(&x.values, j as f64 * step)).collect();
            out.interval = x.interval * n as f64 / m as f64;
        }
        2 => {
            if level < 1.0 {
                return Err(Error::invalid("level", "decimation factor must be at least 1"));
            }
            out.values = (0..)
                .map(|j| (j as f64 * level).floor() as usize)
                .take_while(|&i| i < n)
                .map(|i| x.values[i])
                .collect();
            if out.values.len() < 2 {
                return Err(Error::invalid(
                    "level",
                    format!("decimating {n} bins by {level} leaves fewer than 2"),
                ));
            }
            out.interval = x.interval * level;
        }
        3 => {
            let s = (level.floor() as usize) % n;
            out.values.rotate_right(s);
        }
        4 => {
            if level > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let normal = Normal::new(0.0, level).map_err(|e| Error::invalid("level", e.to_string()))?;
                for v in &mut out.values {
                    *v += normal.sample(&mut rng);
                }
            }
        }
        _ => return Err(Error::invalid("type", format!("noise type {kind} is not in 1..=4"))),
    }
    Ok(out)
}

fn interp(v: &[f64], pos: f64) -> f64 {
    let i = (pos.floor() as usize).min(v.len() - 1);
    let frac = pos - i as f64;
    if i + 1 >= v.len() || frac == 0.0 {
        v[i]
    } else {
        v[i] + frac * (v[i + 1] - v[i])
    }
}

const MAX_DENOMINATOR: u64 = 1000;

/// `num/den` in lowest terms with `den <= MAX_DENOMINATOR`.
fn rational(r: f64) -> Option<(usize, usize)> {
    (1..=MAX_DENOMINATOR).find_map(|q| {
        let p = (r * q as f64).round();
        (p >= 1.0 && (p / q as f64 - r).abs() <= 1e-9 * r.max(1.0)).then_some((p as usize, q as usize))
    })
}

/// Change the bin width to `new_interval`. Coarsening sums whole groups of
/// bins; refining splits each bin into sub-bins shaped by linear
/// interpolation and rescaled so every original bin keeps its volume. Other
/// rational ratios refine to the common sub-interval and then sum.
pub fn resample(x: &TimeSeries, new_interval: f64) -> Result<TimeSeries> {
    if !(new_interval > 0.0 && new_interval.is_finite()) {
        return Err(Error::invalid("interval", format!("{new_interval} is not a positive number")));
    }
    let (p, q) = rational(new_interval / x.interval).ok_or_else(|| {
        Error::invalid(
            "interval",
            format!("{} s to {new_interval} s is not a rational ratio", x.interval),
        )
    })?;
    let fine = refine(&x.values, q);
    if !fine.len().is_multiple_of(p) {
        return Err(Error::invalid(
            "interval",
            format!(
                "{} bins at {} s do not divide into {new_interval} s bins",
                x.len(),
                x.interval
            ),
        ));
    }
    let mut out = x.clone();
    out.values = fine.chunks(p).map(|c| c.iter().sum()).collect();
    out.interval = new_interval;
    Ok(out)
}

fn refine(v: &[f64], k: usize) -> Vec<f64> {
    if k == 1 {
        return v.to_vec();
    }
    let n = v.len();
    let mut out = Vec::with_capacity(n * k);
    for (i, &total) in v.iter().enumerate() {
        // Sub-bin centers in original-bin coordinates, clamped at the edges.
        let shape: Vec<f64> = (0..k)
            .map(|j| {
                let pos = i as f64 + (j as f64 + 0.5) / k as f64 - 0.5;
                interp(v, pos.clamp(0.0, (n - 1) as f64))
            })
            .collect();
        let s: f64 = shape.iter().sum();
        // Rescaling only makes sense when every sub-bin agrees in sign with
        // the bin total; otherwise split evenly.
        if s * total > 0.0 && shape.iter().all(|&u| u * total >= 0.0) {
            out.extend(shape.iter().map(|&u| u * total / s));
        } else {
            out.extend(std::iter::repeat_n(total / k as f64, k));
        }
    }
    out
}

/// Replaces ⌊fraction·N⌋ randomly chosen series with anomalous versions,
/// cycling through `types`. Returns the new set and the replaced indices in
/// ascending order.
pub fn contaminate_training(
    data: &[TimeSeries],
    fraction: f64,
    types: &[u8],
    params: &AnomalyParams,
    seed: u64,
) -> Result<(Vec<TimeSeries>, Vec<usize>)> {
    if !(0.0..=0.5).contains(&fraction) {
        return Err(Error::invalid("fraction", format!("{fraction} is outside [0, 0.5]")));
    }
    let count = (fraction * data.len() as f64).floor() as usize;
    if count > 0 && types.is_empty() {
        return Err(Error::invalid("types", "no anomaly types given"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, data.len(), count).into_vec();
    picked.sort_unstable();
    let mut out = data.to_vec();
    for (j, &i) in picked.iter().enumerate() {
        let s = rng.random::<u64>();
        let mut a = inject_anomaly(&data[i], types[j % types.len()], params, s)?;
        a.id = data[i].id.clone();
        out[i] = a;
    }
    Ok((out, picked))
}
