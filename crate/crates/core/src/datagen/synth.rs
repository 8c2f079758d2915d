use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{apply_noise, gen_event_triggered, gen_wave, inject_anomaly, AnomalyParams, EventSpec, WaveKind};
use crate::error::{Error, Result};
use crate::series::{TimeSeries, NORMAL};

/// A corpus recipe: groups of series drawn from one source each, optionally
/// perturbed, labeled and partially turned anomalous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_length")]
    pub length: usize,
    #[serde(default = "default_interval")]
    pub interval: f64,
    pub groups: Vec<Group>,
}

fn default_length() -> usize {
    120
}

fn default_interval() -> f64 {
    super::DEFAULT_INTERVAL
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Group {
    /// Id prefix; ids are `<name>-<index>`.
    pub name: String,
    pub count: usize,
    pub source: Source,
    /// Label for the unperturbed members, `normal` by default.
    #[serde(default)]
    pub label: Option<String>,
    /// Phase drawn uniformly from ±phase_jitter radians around the source phase.
    #[serde(default)]
    pub phase_jitter: f64,
    /// White Gaussian noise σ added to every bin.
    #[serde(default)]
    pub awgn: f64,
    #[serde(default)]
    pub anomaly: Option<AnomalyDirective>,
    #[serde(default)]
    pub noise: Option<NoiseDirective>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum Source {
    Wave {
        kind: WaveKind,
        period: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        phase: f64,
    },
    Events {
        #[serde(default)]
        mtc: Vec<MtcSource>,
        #[serde(default)]
        htc: Vec<HtcSource>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MtcSource {
    pub period: usize,
    pub duration: usize,
    pub level: f64,
    /// Fixed offset; random in 0..period when absent.
    #[serde(default)]
    pub offset: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HtcSource {
    pub bursts: usize,
    pub max_len: usize,
    pub level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnomalyDirective {
    /// Anomaly types cycled over the affected members.
    pub types: Vec<u8>,
    /// Share of the group made anomalous, in [0, 1].
    pub fraction: f64,
    #[serde(default)]
    pub params: AnomalyParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseDirective {
    #[serde(rename = "type")]
    pub kind: u8,
    pub level: f64,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub fn synthesize(spec: &SynthSpec) -> Result<Vec<TimeSeries>> {
    if spec.length < 2 {
        return Err(Error::invalid("length", "need at least 2 bins"));
    }
    let mut out = Vec::new();
    for (gi, group) in spec.groups.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (gi as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        out.extend(synth_group(spec, group, &mut rng)?);
    }
    Ok(out)
}

fn synth_group(spec: &SynthSpec, group: &Group, rng: &mut ChaCha8Rng) -> Result<Vec<TimeSeries>> {
    if !(group.phase_jitter >= 0.0 && group.awgn >= 0.0) {
        return Err(Error::invalid("phase_jitter", "jitter and awgn must be non-negative"));
    }
    let awgn = Normal::new(0.0, group.awgn).map_err(|e| Error::invalid("awgn", e.to_string()))?;
    let label = group.label.clone().unwrap_or_else(|| NORMAL.to_string());
    let width = (group.count.max(1) - 1).to_string().len();
    let mut members = Vec::with_capacity(group.count);
    for i in 0..group.count {
        let mut s = draw(spec, &group.source, group.phase_jitter, rng)?;
        if group.awgn > 0.0 {
            for v in &mut s.values {
                *v += awgn.sample(rng);
            }
        }
        if let Some(n) = &group.noise {
            s = apply_noise(&s, n.kind, n.level, rng.random())?;
        }
        s.id = format!("{}-{:0width$}", group.name, i);
        s.label = Some(label.clone());
        members.push(s);
    }
    if let Some(a) = &group.anomaly {
        if !(0.0..=1.0).contains(&a.fraction) {
            return Err(Error::invalid("fraction", format!("{} is outside [0, 1]", a.fraction)));
        }
        if a.types.is_empty() {
            return Err(Error::invalid("types", "no anomaly types given"));
        }
        let count = (a.fraction * group.count as f64).floor() as usize;
        let mut picked = index::sample(rng, group.count, count).into_vec();
        picked.sort_unstable();
        for (j, &i) in picked.iter().enumerate() {
            let id = members[i].id.clone();
            members[i] = inject_anomaly(&members[i], a.types[j % a.types.len()], &a.params, rng.random())?;
            members[i].id = id;
        }
    }
    Ok(members)
}

fn draw(spec: &SynthSpec, source: &Source, jitter: f64, rng: &mut ChaCha8Rng) -> Result<TimeSeries> {
    let mut s = match source {
        Source::Wave {
            kind,
            period,
            amplitude,
            phase,
        } => {
            let offset = if jitter > 0.0 { rng.random_range(-jitter..=jitter) } else { 0.0 };
            gen_wave(*kind, spec.length, *period, *amplitude, phase + offset)?
        }
        Source::Events { mtc, htc } => {
            let mut events = Vec::with_capacity(mtc.len() + htc.len());
            for m in mtc {
                let offset = match m.offset {
                    Some(o) => o,
                    None => rng.random_range(0..m.period.max(1)),
                };
                events.push(EventSpec::mtc(spec.length, m.period, offset, m.duration, m.level, rng.random())?);
            }
            for h in htc {
                events.push(EventSpec::htc(spec.length, h.bursts, h.max_len, h.level, rng.random())?);
            }
            gen_event_triggered(&events, spec.length)?
        }
    };
    s.interval = spec.interval;
    Ok(s)
}
