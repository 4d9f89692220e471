//! The two-rate controller: frame-rate filter selection feeding a
//! sample-rate FxNLMS loop, plus the three experiment scenarios.
//!
//! Selection for frame `k` is made from the samples of frame `k - 1` and
//! takes effect on the first sample of frame `k`. Frame 0 therefore runs
//! without a selected filter: SFANC emits no anti-noise, HYBRID adapts from
//! zero like plain FxNLMS.

use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveFilterState, DEFAULT_BETA, DEFAULT_CONTROL_TAPS, DEFAULT_MU};
use crate::bank::{normalized_frame, ControlFilterBank};
use crate::classifier::CnnModel;
use crate::dsp::{noise_reduction_db, FirFilter, PathModel, StreamingFir, Waveform};
use crate::error::{invalid, Error, Result};
use crate::noise::{cascade, mix, mix_seed, perturb_path, synth_track, BandSpec, NoiseTrackSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerMode {
    Sfanc,
    Fxnlms,
    Hybrid,
}

impl ControllerMode {
    pub const ALL: [ControllerMode; 3] =
        [ControllerMode::Sfanc, ControllerMode::Fxnlms, ControllerMode::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            ControllerMode::Sfanc => "sfanc",
            ControllerMode::Fxnlms => "fxnlms",
            ControllerMode::Hybrid => "hybrid",
        }
    }

    pub fn needs_selector(self) -> bool {
        self != ControllerMode::Fxnlms
    }
}

impl std::fmt::Display for ControllerMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ControllerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sfanc" => Ok(ControllerMode::Sfanc),
            "fxnlms" => Ok(ControllerMode::Fxnlms),
            "hybrid" => Ok(ControllerMode::Hybrid),
            other => Err(invalid(format!("unknown controller mode `{other}`"))),
        }
    }
}

/// Frame-rate choice of a bank index from the raw (un-normalised) frame.
pub trait FilterSelector {
    fn select(&mut self, frame: &[f64]) -> Result<usize>;
}

/// Selection by the trained CNN on the min-max normalised frame.
pub struct CnnSelector<'a> {
    model: &'a CnnModel,
}

impl<'a> CnnSelector<'a> {
    pub fn new(model: &'a CnnModel) -> Self {
        CnnSelector { model }
    }
}

impl FilterSelector for CnnSelector<'_> {
    fn select(&mut self, frame: &[f64]) -> Result<usize> {
        self.model.predict(&normalized_frame(frame))
    }
}

impl<F: FnMut(&[f64]) -> Result<usize>> FilterSelector for F {
    fn select(&mut self, frame: &[f64]) -> Result<usize> {
        self(frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDecision {
    /// Frame the decision applies to (it was made from frame `frame_index - 1`).
    pub frame_index: usize,
    pub selected: usize,
    /// Whether the control coefficients were replaced.
    pub swapped: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SimConfig {
    pub mu: f64,
    pub beta: f64,
    pub filter_taps: usize,
    pub frame_len: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mu: DEFAULT_MU,
            beta: DEFAULT_BETA,
            filter_taps: DEFAULT_CONTROL_TAPS,
            frame_len: crate::DEFAULT_SAMPLE_RATE_HZ as usize,
        }
    }
}

/// Primary path that may change at given sample offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSchedule {
    /// `(start_sample, paths)`, sorted, first entry at 0. All entries share
    /// the secondary path and its estimate.
    segments: Vec<(usize, PathModel)>,
}

impl PathSchedule {
    pub fn fixed(paths: PathModel) -> Self {
        PathSchedule {
            segments: vec![(0, paths)],
        }
    }

    pub fn new(segments: Vec<(usize, PathModel)>) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| invalid("path schedule needs at least one segment"))?;
        if first.0 != 0 {
            return Err(invalid("path schedule must start at sample 0"));
        }
        if segments.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(invalid("path segments must start at increasing samples"));
        }
        let (plen, s, s_hat) = (
            first.1.primary.len(),
            &first.1.secondary,
            &first.1.secondary_estimate,
        );
        for (_, p) in &segments {
            if p.primary.len() != plen {
                return Err(invalid("all primary paths in a schedule must share a length"));
            }
            if &p.secondary != s || &p.secondary_estimate != s_hat {
                return Err(invalid("only the primary path may vary within a schedule"));
            }
        }
        Ok(PathSchedule { segments })
    }

    pub fn segments(&self) -> &[(usize, PathModel)] {
        &self.segments
    }

    pub fn initial(&self) -> &PathModel {
        &self.segments[0].1
    }
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub mode: ControllerMode,
    pub e_trace: Waveform,
    pub d_trace: Waveform,
    /// Empty in FXNLMS mode.
    pub decisions: Vec<FrameDecision>,
    pub nr_per_second: Vec<f64>,
}

/// Run one controller over the reference `x` (which is also the primary noise).
pub fn simulate(
    mode: ControllerMode,
    x: &Waveform,
    schedule: &PathSchedule,
    bank: Option<&ControlFilterBank>,
    selector: Option<&mut dyn FilterSelector>,
    config: &SimConfig,
) -> Result<SimulationResult> {
    if config.frame_len == 0 {
        return Err(invalid("frame length must be positive"));
    }
    let (bank, mut selector) = match (mode.needs_selector(), bank, selector) {
        (false, _, _) => (None, None),
        (true, Some(b), Some(s)) => {
            if b.taps() != config.filter_taps {
                return Err(invalid(format!(
                    "bank filters have {} taps but the controller uses {}",
                    b.taps(),
                    config.filter_taps
                )));
            }
            (Some(b), Some(s))
        }
        (true, None, _) => return Err(Error::Missing("control filter bank")),
        (true, _, None) => return Err(Error::Missing("filter-selection model")),
    };

    let paths = schedule.initial();
    let mut state = AdaptiveFilterState::zeros(
        config.filter_taps,
        config.mu,
        config.beta,
        paths.secondary_estimate.clone(),
    )?;
    let mut primary = StreamingFir::new(paths.primary.clone());
    let mut secondary = StreamingFir::new(paths.secondary.clone());
    let adapt = mode != ControllerMode::Sfanc;

    let mut next_segment = 1;
    let mut active: Option<usize> = None;
    let mut decisions = Vec::new();
    let mut d = Vec::with_capacity(x.len());
    let mut e = Vec::with_capacity(x.len());
    let samples = x.samples();
    let sim_err = |err: Error, n: usize| match err {
        Error::Diverged { .. } => Error::Simulation {
            mode: mode.to_string(),
            sample: n as u64,
        },
        other => other,
    };

    for (n, &x_n) in samples.iter().enumerate() {
        if let Some((start, p)) = schedule.segments.get(next_segment) {
            if *start == n {
                primary.replace_taps(p.primary.clone())?;
                next_segment += 1;
            }
        }
        let d_n = primary.step(x_n);
        let out = state
            .fxnlms_step(x_n, d_n, &mut secondary, adapt)
            .map_err(|err| sim_err(err, n))?;
        d.push(d_n);
        e.push(out.e_n);

        // Frame boundary: classify the frame that just completed.
        if (n + 1) % config.frame_len == 0 {
            if let (Some(bank), Some(sel)) = (bank, selector.as_mut()) {
                let frame = &samples[n + 1 - config.frame_len..=n];
                let selected = sel.select(frame)?;
                if selected >= bank.len() {
                    return Err(invalid(format!(
                        "selector returned index {selected} for a bank of {}",
                        bank.len()
                    )));
                }
                let swapped = active != Some(selected);
                if swapped {
                    state.set_weights(bank.filter(selected))?;
                    active = Some(selected);
                }
                decisions.push(FrameDecision {
                    frame_index: (n + 1) / config.frame_len,
                    selected,
                    swapped,
                });
            }
        }
    }

    let rate = x.sample_rate_hz();
    let e_trace = Waveform::new(e, rate)?;
    let d_trace = Waveform::new(d, rate)?;
    let nr_per_second = noise_reduction_db(&d_trace, &e_trace, 1.0)?;
    Ok(SimulationResult {
        mode,
        e_trace,
        d_trace,
        decisions,
        nr_per_second,
    })
}

/// Stand-in noise sources for the recorded aircraft and traffic noise.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ScenarioConfig {
    pub sample_rate_hz: u32,
    pub segment_s: f64,
    /// Aircraft surrogate band; the upper edge is clipped below Nyquist.
    pub aircraft_band: BandSpec,
    pub traffic_band: BandSpec,
    pub aircraft_rms: f64,
    pub traffic_rms: f64,
    /// Path SNRs of the second and third varying-path segments.
    pub path_snrs_db: [f64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            sample_rate_hz: crate::DEFAULT_SAMPLE_RATE_HZ,
            segment_s: 13.0,
            aircraft_band: BandSpec {
                low_hz: 50.0,
                high_hz: 7900.0,
            },
            traffic_band: BandSpec {
                low_hz: 40.0,
                high_hz: 1400.0,
            },
            aircraft_rms: 0.5,
            traffic_rms: 0.5,
            path_snrs_db: [30.0, 10.0],
        }
    }
}

fn surrogate(band: BandSpec, rms: f64, duration_s: f64, seed: u64, fs: u32) -> Result<Waveform> {
    let nyquist = f64::from(fs) / 2.0;
    let band = band.clipped(nyquist * 0.9875);
    synth_track(&NoiseTrackSpec::clean(band, duration_s, rms, seed), fs)
}

pub fn aircraft_noise(config: &ScenarioConfig, duration_s: f64, seed: u64) -> Result<Waveform> {
    surrogate(
        config.aircraft_band,
        config.aircraft_rms,
        duration_s,
        mix_seed(seed, 101),
        config.sample_rate_hz,
    )
}

pub fn traffic_noise(config: &ScenarioConfig, duration_s: f64, seed: u64) -> Result<Waveform> {
    surrogate(
        config.traffic_band,
        config.traffic_rms,
        duration_s,
        mix_seed(seed, 202),
        config.sample_rate_hz,
    )
}

/// Aircraft surrogate followed by traffic surrogate, one segment each.
pub fn scenario_cascaded(config: &ScenarioConfig, seed: u64) -> Result<Waveform> {
    cascade(&[
        aircraft_noise(config, config.segment_s, seed)?,
        traffic_noise(config, config.segment_s, seed)?,
    ])
}

/// Sum of aircraft and traffic surrogates over one segment.
pub fn scenario_mixed(config: &ScenarioConfig, seed: u64) -> Result<Waveform> {
    mix(
        &[
            aircraft_noise(config, config.segment_s, seed)?,
            traffic_noise(config, config.segment_s, seed)?,
        ],
        &[1.0, 1.0],
    )
}

/// Traffic surrogate over three segments.
pub fn scenario_varying_noise(config: &ScenarioConfig, seed: u64) -> Result<Waveform> {
    traffic_noise(config, 3.0 * config.segment_s, seed)
}

/// Clean primary path, then the path perturbed at each configured SNR.
pub fn scenario_varying_path(
    config: &ScenarioConfig,
    paths: &PathModel,
    seed: u64,
) -> Result<Vec<(f64, PathModel)>> {
    let mut out = vec![(0.0, paths.clone())];
    for (i, &snr) in config.path_snrs_db.iter().enumerate() {
        let primary = perturb_path(&paths.primary, snr, mix_seed(seed, 300 + i as u64))?;
        out.push(((i + 1) as f64 * config.segment_s, paths.with_primary(primary)));
    }
    Ok(out)
}

/// Convert `(start_s, paths)` segments into a sample-indexed schedule.
pub fn schedule_from_segments(segments: &[(f64, PathModel)], sample_rate_hz: u32) -> Result<PathSchedule> {
    PathSchedule::new(
        segments
            .iter()
            .map(|(t, p)| ((t * f64::from(sample_rate_hz)).round() as usize, p.clone()))
            .collect(),
    )
}

/// Control filter used when a mode needs no bank filter yet.
pub fn zero_filter(config: &SimConfig) -> FirFilter {
    FirFilter::zeros(config.filter_taps)
}

/// The three experiment inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Cascaded,
    Mixed,
    VaryingPath,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Cascaded, Scenario::Mixed, Scenario::VaryingPath];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Cascaded => "cascaded",
            Scenario::Mixed => "mixed",
            Scenario::VaryingPath => "varying-path",
        }
    }

    /// Reference noise and path schedule for one run.
    pub fn build(
        self,
        config: &ScenarioConfig,
        paths: &PathModel,
        seed: u64,
    ) -> Result<(Waveform, PathSchedule)> {
        match self {
            Scenario::Cascaded => Ok((scenario_cascaded(config, seed)?, PathSchedule::fixed(paths.clone()))),
            Scenario::Mixed => Ok((scenario_mixed(config, seed)?, PathSchedule::fixed(paths.clone()))),
            Scenario::VaryingPath => {
                let segments = scenario_varying_path(config, paths, seed)?;
                Ok((
                    scenario_varying_noise(config, seed)?,
                    schedule_from_segments(&segments, config.sample_rate_hz)?,
                ))
            }
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.name() == s.to_ascii_lowercase())
            .ok_or_else(|| invalid(format!("unknown scenario `{s}`")))
    }
}
