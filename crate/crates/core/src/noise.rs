//! Seeded band-limited noise, scenario composition and path perturbation.
//!
//! Every generator is a pure function of its arguments. Randomness comes from
//! ChaCha8 seeded through `SeedableRng::seed_from_u64`, with Gaussian samples
//! drawn by `rand_distr::StandardNormal`; both are value-stable across
//! platforms for a fixed crate version.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{design_bandpass, fft_convolve, mean_power, FirFilter, Waveform};
use crate::error::{invalid, Result};

/// Lowest and highest edge of the control-filter band plan.
pub const BAND_PLAN_LOW_HZ: f64 = 20.0;
pub const BAND_PLAN_HIGH_HZ: f64 = 7980.0;

/// Number of logarithmic base bands combined into the 15 control bands.
const BASE_BANDS: usize = 5;

/// Taps of the shaping filter used for noise synthesis.
///
/// Long enough that the narrowest low band (20-66 Hz) keeps steep skirts.
pub const SYNTH_FILTER_TAPS: usize = 8191;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandSpec {
    pub low_hz: f64,
    pub high_hz: f64,
}

impl BandSpec {
    pub fn new(low_hz: f64, high_hz: f64) -> Result<Self> {
        if !(low_hz > 0.0 && low_hz < high_hz && high_hz.is_finite()) {
            return Err(invalid(format!("invalid band {low_hz}-{high_hz} Hz")));
        }
        Ok(BandSpec { low_hz, high_hz })
    }

    pub fn contains(&self, freq_hz: f64) -> bool {
        freq_hz >= self.low_hz && freq_hz <= self.high_hz
    }

    /// Clip the upper edge to `max_hz`.
    pub fn clipped(&self, max_hz: f64) -> BandSpec {
        BandSpec {
            low_hz: self.low_hz,
            high_hz: self.high_hz.min(max_hz),
        }
    }
}

impl std::fmt::Display for BandSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}-{} Hz", self.low_hz, self.high_hz)
    }
}

/// Edges of the five base bands, `20 * (7980/20)^(k/5)` rounded to 1 Hz.
pub fn base_band_edges() -> [f64; BASE_BANDS + 1] {
    let ratio = BAND_PLAN_HIGH_HZ / BAND_PLAN_LOW_HZ;
    let mut edges = [0.0; BASE_BANDS + 1];
    for (k, e) in edges.iter_mut().enumerate() {
        *e = (BAND_PLAN_LOW_HZ * ratio.powf(k as f64 / BASE_BANDS as f64)).round();
    }
    edges
}

/// The 15 control bands: every contiguous run of base bands, ordered by
/// run length and then by starting band. Index 14 is the full 20-7980 Hz band.
pub fn control_bands() -> Vec<BandSpec> {
    let edges = base_band_edges();
    let mut bands = Vec::with_capacity(15);
    for width in 1..=BASE_BANDS {
        for start in 0..=BASE_BANDS - width {
            bands.push(BandSpec {
                low_hz: edges[start],
                high_hz: edges[start + width],
            });
        }
    }
    bands
}

/// Everything needed to regenerate one noise track bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseTrackSpec {
    pub band: BandSpec,
    pub duration_s: f64,
    /// Target RMS of the band-limited component.
    pub amplitude: f64,
    /// Band-signal to background power ratio; `f64::INFINITY` disables the background.
    pub background_snr_db: f64,
    pub seed: u64,
}

impl NoiseTrackSpec {
    pub fn clean(band: BandSpec, duration_s: f64, amplitude: f64, seed: u64) -> Self {
        NoiseTrackSpec {
            band,
            duration_s,
            amplitude,
            background_snr_db: f64::INFINITY,
            seed,
        }
    }
}

/// SplitMix64 finaliser, used to derive independent sub-seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn white_gaussian(len: usize, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..len).map(|_| r.sample::<f64, _>(StandardNormal)).collect()
}

/// Band-limited Gaussian noise with the requested RMS, plus optional
/// full-band white background `background_snr_db` below it.
pub fn synth_track(spec: &NoiseTrackSpec, sample_rate_hz: u32) -> Result<Waveform> {
    if !(spec.duration_s > 0.0) || !spec.duration_s.is_finite() {
        return Err(invalid(format!(
            "track duration must be positive, got {}",
            spec.duration_s
        )));
    }
    if !(spec.amplitude > 0.0) || !spec.amplitude.is_finite() {
        return Err(invalid(format!(
            "track amplitude must be positive, got {}",
            spec.amplitude
        )));
    }
    if spec.background_snr_db.is_nan() || spec.background_snr_db == f64::NEG_INFINITY {
        return Err(invalid("background SNR must be a number or +inf"));
    }
    let len = (spec.duration_s * f64::from(sample_rate_hz)).round() as usize;
    if len == 0 {
        return Err(invalid("track shorter than one sample"));
    }
    let shaping = design_bandpass(
        spec.band.low_hz,
        spec.band.high_hz,
        SYNTH_FILTER_TAPS,
        sample_rate_hz,
    )?;

    // Draw enough excitation to discard the filter's start-up transient.
    let excitation = white_gaussian(len + SYNTH_FILTER_TAPS - 1, mix_seed(spec.seed, 1));
    let filtered = fft_convolve(&excitation, shaping.taps());
    let steady = &filtered[SYNTH_FILTER_TAPS - 1..SYNTH_FILTER_TAPS - 1 + len];
    let level = mean_power(steady).sqrt();
    let unit: Vec<f64> = steady.iter().map(|v| v / level).collect();
    let mut samples: Vec<f64> = unit.iter().map(|v| v * spec.amplitude).collect();

    if spec.background_snr_db.is_finite() {
        let signal_power = spec.amplitude * spec.amplitude;
        let target = signal_power / 10f64.powf(spec.background_snr_db / 10.0);
        let bg = white_gaussian(len, mix_seed(spec.seed, 2));
        let g = (target / mean_power(&bg)).sqrt();
        for (s, b) in samples.iter_mut().zip(&bg) {
            *s += g * b;
        }
    }
    Waveform::new(samples, sample_rate_hz)
}

/// Concatenate tracks in time.
pub fn cascade(tracks: &[Waveform]) -> Result<Waveform> {
    let first = tracks
        .first()
        .ok_or_else(|| invalid("cascade needs at least one track"))?;
    let rate = first.sample_rate_hz();
    if tracks.iter().any(|t| t.sample_rate_hz() != rate) {
        return Err(invalid("cascade tracks have different sample rates"));
    }
    let samples: Vec<f64> = tracks.iter().flat_map(|t| t.samples().iter().copied()).collect();
    Waveform::new(samples, rate)
}

/// Pointwise weighted sum of equal-length tracks.
pub fn mix(tracks: &[Waveform], gains: &[f64]) -> Result<Waveform> {
    let first = tracks
        .first()
        .ok_or_else(|| invalid("mix needs at least one track"))?;
    if tracks.len() != gains.len() {
        return Err(invalid(format!(
            "{} tracks but {} gains",
            tracks.len(),
            gains.len()
        )));
    }
    let (len, rate) = (first.len(), first.sample_rate_hz());
    if tracks.iter().any(|t| t.len() != len) {
        return Err(invalid("mixed tracks must have equal length"));
    }
    if tracks.iter().any(|t| t.sample_rate_hz() != rate) {
        return Err(invalid("mixed tracks have different sample rates"));
    }
    let mut out = vec![0.0; len];
    for (t, &g) in tracks.iter().zip(gains) {
        for (o, &v) in out.iter_mut().zip(t.samples()) {
            *o += g * v;
        }
    }
    Waveform::new(out, rate)
}

/// Add white Gaussian noise to an impulse response at `snr_db` (tap energy
/// over noise energy). `f64::INFINITY` returns the input unchanged.
pub fn perturb_path(ir: &FirFilter, snr_db: f64, seed: u64) -> Result<FirFilter> {
    if snr_db == f64::INFINITY {
        return Ok(ir.clone());
    }
    if !snr_db.is_finite() {
        return Err(invalid("path SNR must be finite or +inf"));
    }
    let noise = white_gaussian(ir.len(), mix_seed(seed, 3));
    let p_ir = ir.energy() / ir.len() as f64;
    let target = p_ir / 10f64.powf(snr_db / 10.0);
    let g = (target / mean_power(&noise)).sqrt();
    FirFilter::new(
        ir.taps()
            .iter()
            .zip(&noise)
            .map(|(h, n)| h + g * n)
            .collect(),
    )
}
