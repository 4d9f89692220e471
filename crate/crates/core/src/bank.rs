//! The pre-trained control-filter bank, oracle labelling and the labelled
//! frame dataset used to train the classifier.

use std::fs;
use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::adaptive::{run_fixed, AdaptiveFilterState, DEFAULT_BETA, DEFAULT_CONTROL_TAPS};
use crate::binio::{ByteReader, ByteWriter};
use crate::dsp::{
    convolve_slices, mean_power, min_max_normalize_slice, nr_db, FftPlan, FirFilter, PathModel,
    StreamingFir, Waveform,
};
use crate::error::{invalid, Error, Result};
use crate::noise::{control_bands, mix_seed, rng, synth_track, BandSpec, NoiseTrackSpec};
use crate::NUM_CONTROL_FILTERS;

const BANK_MAGIC: &[u8; 4] = b"ANCB";
const BANK_VERSION: u16 = 1;
const DATASET_MAGIC: &[u8; 4] = b"ANCD";
const DATASET_VERSION: u16 = 1;

/// FxLMS pre-training settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PretrainConfig {
    pub taps: usize,
    /// Initial FxLMS step size; halved after each divergence.
    pub mu: f64,
    pub max_backoffs: u32,
    pub duration_s: f64,
    /// RMS of the training noise.
    pub amplitude: f64,
    /// Length of the held-out evaluation track; NR is read from its last second.
    pub eval_duration_s: f64,
    pub seed: u64,
    pub sample_rate_hz: u32,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            taps: DEFAULT_CONTROL_TAPS,
            mu: 0.01,
            max_backoffs: 5,
            duration_s: 30.0,
            amplitude: 0.025,
            eval_duration_s: 2.0,
            seed: 2022,
            sample_rate_hz: crate::DEFAULT_SAMPLE_RATE_HZ,
        }
    }
}

/// Outcome of pre-training one band.
#[derive(Debug, Clone)]
pub struct PretrainedFilter {
    pub filter: FirFilter,
    pub mu_used: f64,
    /// Final-second NR on a held-out track of the same band.
    pub heldout_nr_db: f64,
}

/// Per-band training record stored alongside the coefficients.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BandRecord {
    pub band: BandSpec,
    pub mu_used: f64,
    pub heldout_nr_db: f64,
    pub train_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BankMeta {
    pub config: PretrainConfig,
    pub records: Vec<BandRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlFilterBank {
    filters: Vec<FirFilter>,
    meta: BankMeta,
}

impl ControlFilterBank {
    pub fn new(filters: Vec<FirFilter>, meta: BankMeta) -> Result<Self> {
        if filters.is_empty() || filters.len() > u16::MAX as usize {
            return Err(invalid(format!("bank cannot hold {} filters", filters.len())));
        }
        if filters.len() != meta.records.len() {
            return Err(invalid("bank filters and band records are misaligned"));
        }
        let taps = filters[0].len();
        if filters.iter().any(|f| f.len() != taps) {
            return Err(invalid("bank filters must share one length"));
        }
        Ok(ControlFilterBank { filters, meta })
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn taps(&self) -> usize {
        self.filters[0].len()
    }

    pub fn filter(&self, index: usize) -> &FirFilter {
        &self.filters[index]
    }

    pub fn filters(&self) -> &[FirFilter] {
        &self.filters
    }

    pub fn band(&self, index: usize) -> BandSpec {
        self.meta.records[index].band
    }

    pub fn bands(&self) -> Vec<BandSpec> {
        self.meta.records.iter().map(|r| r.band).collect()
    }

    pub fn meta(&self) -> &BankMeta {
        &self.meta
    }
}

fn train_seed(config: &PretrainConfig, band_index: usize) -> u64 {
    mix_seed(config.seed, 1000 + band_index as u64)
}

fn eval_seed(config: &PretrainConfig, band_index: usize) -> u64 {
    mix_seed(config.seed, 2000 + band_index as u64)
}

/// Train one control filter with FxLMS on noise from `band`.
///
/// On divergence the step size is halved and training restarts from zero,
/// at most `max_backoffs` times.
pub fn pretrain_filter(
    band: BandSpec,
    paths: &PathModel,
    config: &PretrainConfig,
    seed: u64,
    heldout_seed: u64,
) -> Result<PretrainedFilter> {
    let fs = config.sample_rate_hz;
    if band.high_hz > f64::from(fs) / 2.0 {
        return Err(invalid(format!("band {band} exceeds Nyquist")));
    }
    let train = synth_track(
        &NoiseTrackSpec::clean(band, config.duration_s, config.amplitude, seed),
        fs,
    )?;
    let mut mu = config.mu;
    for _ in 0..=config.max_backoffs {
        match fxlms_train(&train, paths, config.taps, mu) {
            Ok(filter) => {
                let heldout = synth_track(
                    &NoiseTrackSpec::clean(band, config.eval_duration_s, config.amplitude, heldout_seed),
                    fs,
                )?;
                let heldout_nr_db = final_second_nr(&filter, &heldout, paths)?;
                return Ok(PretrainedFilter {
                    filter,
                    mu_used: mu,
                    heldout_nr_db,
                });
            }
            Err(Error::Diverged { .. }) => mu *= 0.5,
            Err(e) => return Err(e),
        }
    }
    Err(Error::PretrainFailed {
        index: usize::MAX,
        low_hz: band.low_hz,
        high_hz: band.high_hz,
        reason: format!("FxLMS diverged down to step size {}", mu * 2.0),
    })
}

/// FxLMS over the whole track. A one-second window whose residual power
/// exceeds 100x the disturbance power counts as divergence.
fn fxlms_train(x: &Waveform, paths: &PathModel, taps: usize, mu: f64) -> Result<FirFilter> {
    let mut state = AdaptiveFilterState::zeros(taps, mu, DEFAULT_BETA, paths.secondary_estimate.clone())?;
    let mut primary = StreamingFir::new(paths.primary.clone());
    let mut secondary = StreamingFir::new(paths.secondary.clone());
    let window = x.sample_rate_hz() as usize;
    let (mut pd, mut pe) = (0.0, 0.0);
    for (n, &x_n) in x.samples().iter().enumerate() {
        let d_n = primary.step(x_n);
        let e_n = state.fxlms_step(x_n, d_n, &mut secondary)?.e_n;
        pd += d_n * d_n;
        pe += e_n * e_n;
        if (n + 1) % window == 0 {
            if pe > 100.0 * pd {
                return Err(Error::Diverged { sample: n as u64 });
            }
            pd = 0.0;
            pe = 0.0;
        }
    }
    Ok(state.filter())
}

/// NR of a fixed filter over the last full second of `x`.
pub fn final_second_nr(w: &FirFilter, x: &Waveform, paths: &PathModel) -> Result<f64> {
    let e = run_fixed(w, x, paths)?;
    let d = disturbance(x, paths)?;
    let win = x.sample_rate_hz() as usize;
    if x.len() < win {
        return Err(invalid("evaluation track shorter than one second"));
    }
    let start = x.len() - win;
    Ok(nr_db(
        mean_power(&d.samples()[start..]),
        mean_power(&e.samples()[start..]),
    ))
}

/// `x` streamed through the primary path (same length as `x`).
pub fn disturbance(x: &Waveform, paths: &PathModel) -> Result<Waveform> {
    let mut p = StreamingFir::new(paths.primary.clone());
    Waveform::new(x.samples().iter().map(|&v| p.step(v)).collect(), x.sample_rate_hz())
}

/// Pre-train one filter per control band; index `i` always maps to band `i`.
pub fn build_bank(paths: &PathModel, config: &PretrainConfig) -> Result<ControlFilterBank> {
    let bands = control_bands();
    let mut filters = Vec::with_capacity(bands.len());
    let mut records = Vec::with_capacity(bands.len());
    for (i, band) in bands.into_iter().enumerate() {
        let seed = train_seed(config, i);
        let trained = pretrain_filter(band, paths, config, seed, eval_seed(config, i)).map_err(
            |e| match e {
                Error::PretrainFailed {
                    low_hz,
                    high_hz,
                    reason,
                    ..
                } => Error::PretrainFailed {
                    index: i,
                    low_hz,
                    high_hz,
                    reason,
                },
                other => Error::PretrainFailed {
                    index: i,
                    low_hz: band.low_hz,
                    high_hz: band.high_hz,
                    reason: other.to_string(),
                },
            },
        )?;
        records.push(BandRecord {
            band,
            mu_used: trained.mu_used,
            heldout_nr_db: trained.heldout_nr_db,
            train_seed: seed,
        });
        filters.push(trained.filter);
    }
    ControlFilterBank::new(
        filters,
        BankMeta {
            config: config.clone(),
            records,
        },
    )
}

/// Fast residual-power evaluation of every bank filter on one frame.
///
/// With frozen coefficients the plant is linear, so the residual of filter
/// `i` is `x * (p - s * w_i)` truncated to the frame. The combined responses
/// are transformed once and each frame costs one forward FFT plus one
/// inverse FFT per filter.
#[derive(Debug, Clone)]
pub struct FrameLabeler {
    frame_len: usize,
    plan: FftPlan,
    residual_spectra: Vec<Vec<Complex64>>,
}

impl FrameLabeler {
    pub fn new(bank: &ControlFilterBank, paths: &PathModel, frame_len: usize) -> Self {
        let residual_filters: Vec<Vec<f64>> = bank
            .filters()
            .iter()
            .map(|w| {
                let mut g = convolve_slices(paths.secondary.taps(), w.taps());
                g.iter_mut().for_each(|v| *v = -*v);
                if g.len() < paths.primary.len() {
                    g.resize(paths.primary.len(), 0.0);
                }
                for (gk, pk) in g.iter_mut().zip(paths.primary.taps()) {
                    *gk += pk;
                }
                g
            })
            .collect();
        let longest = residual_filters.iter().map(Vec::len).max().unwrap_or(1);
        let plan = FftPlan::new((frame_len + longest - 1).next_power_of_two());
        let residual_spectra = residual_filters.iter().map(|g| plan.spectrum(g)).collect();
        FrameLabeler {
            frame_len,
            plan,
            residual_spectra,
        }
    }

    /// Mean residual power of each filter over the frame.
    pub fn residual_powers(&self, frame: &[f64]) -> Result<Vec<f64>> {
        if frame.len() != self.frame_len {
            return Err(invalid(format!(
                "labelling expects {} samples, got {}",
                self.frame_len,
                frame.len()
            )));
        }
        let spectrum = self.plan.spectrum(frame);
        Ok(self
            .residual_spectra
            .iter()
            .map(|g| {
                let prod = spectrum.iter().zip(g).map(|(a, b)| a * b).collect();
                let e = self.plan.inverse(prod);
                mean_power(&e[..self.frame_len])
            })
            .collect())
    }

    pub fn label(&self, frame: &[f64]) -> Result<usize> {
        Ok(argmin_first(&self.residual_powers(frame)?))
    }
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// Index of the bank filter with the lowest residual power on `x`, using
/// the streaming fixed-filter plant directly.
pub fn oracle_label(x: &Waveform, bank: &ControlFilterBank, paths: &PathModel) -> Result<usize> {
    let powers = bank
        .filters()
        .iter()
        .map(|w| run_fixed(w, x, paths).map(|e| e.power()))
        .collect::<Result<Vec<_>>>()?;
    Ok(argmin_first(&powers))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitSizes {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

impl Default for SplitSizes {
    fn default() -> Self {
        SplitSizes {
            train: 6000,
            validation: 500,
            test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub spec: NoiseTrackSpec,
    pub label: u8,
    /// Min-max normalised frame.
    pub frame: Vec<f32>,
}

/// Labelled frames, stored train first, then validation, then test.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub frame_len: usize,
    pub sample_rate_hz: u32,
    pub splits: SplitSizes,
    pub entries: Vec<DatasetEntry>,
}

impl LabeledDataset {
    pub fn train(&self) -> &[DatasetEntry] {
        &self.entries[..self.splits.train]
    }

    pub fn validation(&self) -> &[DatasetEntry] {
        let start = self.splits.train;
        &self.entries[start..start + self.splits.validation]
    }

    pub fn test(&self) -> &[DatasetEntry] {
        &self.entries[self.splits.train + self.splits.validation..]
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut h = vec![0; classes];
        for e in &self.entries {
            if (e.label as usize) < classes {
                h[e.label as usize] += 1;
            }
        }
        h
    }
}

/// Randomisation ranges for dataset tracks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetRanges {
    pub amplitude: (f64, f64),
    pub background_snr_db: (f64, f64),
}

impl Default for DatasetRanges {
    fn default() -> Self {
        DatasetRanges {
            amplitude: (0.25, 1.0),
            background_snr_db: (10.0, 40.0),
        }
    }
}

/// The randomised track spec of dataset entry `index`.
pub fn dataset_track_spec(
    master_seed: u64,
    index: usize,
    frame_len: usize,
    sample_rate_hz: u32,
    ranges: &DatasetRanges,
) -> NoiseTrackSpec {
    let entry_seed = mix_seed(master_seed, index as u64);
    let mut r = rng(entry_seed);
    let bands = control_bands();
    let band = bands[r.gen_range(0..bands.len())];
    let amplitude = r.gen_range(ranges.amplitude.0..=ranges.amplitude.1);
    let background_snr_db = r.gen_range(ranges.background_snr_db.0..=ranges.background_snr_db.1);
    NoiseTrackSpec {
        band,
        duration_s: frame_len as f64 / f64::from(sample_rate_hz),
        amplitude,
        background_snr_db,
        seed: mix_seed(entry_seed, 7),
    }
}

/// Normalise a raw frame; a constant frame becomes all zeros.
pub fn normalized_frame(raw: &[f64]) -> Vec<f64> {
    min_max_normalize_slice(raw).unwrap_or_else(|_| vec![0.0; raw.len()])
}

/// Synthesize, label and normalise `counts.total()` tracks.
pub fn generate_dataset(
    bank: &ControlFilterBank,
    paths: &PathModel,
    counts: SplitSizes,
    master_seed: u64,
    frame_len: usize,
    sample_rate_hz: u32,
    ranges: &DatasetRanges,
) -> Result<LabeledDataset> {
    if counts.train == 0 || counts.validation == 0 || counts.test == 0 {
        return Err(invalid("every dataset split needs at least one entry"));
    }
    let labeler = FrameLabeler::new(bank, paths, frame_len);
    let mut entries = Vec::with_capacity(counts.total());
    for index in 0..counts.total() {
        let spec = dataset_track_spec(master_seed, index, frame_len, sample_rate_hz, ranges);
        let track = synth_track(&spec, sample_rate_hz)?;
        let label = labeler.label(track.samples())?;
        let frame = normalized_frame(track.samples())
            .into_iter()
            .map(|v| v as f32)
            .collect();
        entries.push(DatasetEntry {
            spec,
            label: label as u8,
            frame,
        });
    }
    Ok(LabeledDataset {
        frame_len,
        sample_rate_hz,
        splits: counts,
        entries,
    })
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Layout: `"ANCB"`, u16 version, u16 filter count, u32 tap count, the taps
/// of every filter as f64, then a u32-length-prefixed JSON metadata blob.
/// All integers and floats are little-endian.
pub fn encode_bank(bank: &ControlFilterBank) -> Result<Vec<u8>> {
    let mut w = ByteWriter::new();
    w.bytes(BANK_MAGIC);
    w.u16(BANK_VERSION);
    w.u16(bank.len() as u16);
    w.u32(bank.taps() as u32);
    for f in bank.filters() {
        for &t in f.taps() {
            w.f64(t);
        }
    }
    w.string(&serde_json::to_string(&bank.meta)?);
    Ok(w.finish())
}

pub fn decode_bank(bytes: &[u8]) -> Result<ControlFilterBank> {
    let mut r = ByteReader::new(bytes, "bank file");
    r.magic(BANK_MAGIC)?;
    r.version(BANK_VERSION)?;
    let count = r.u16()? as usize;
    let taps = r.u32()? as usize;
    if count == 0 || taps == 0 {
        return Err(Error::Format("bank file declares an empty bank".into()));
    }
    let mut filters = Vec::with_capacity(count);
    for _ in 0..count {
        let mut v = Vec::with_capacity(taps);
        for _ in 0..taps {
            v.push(r.f64()?);
        }
        filters.push(FirFilter::new(v).map_err(|e| Error::Format(e.to_string()))?);
    }
    let meta: BankMeta = serde_json::from_str(&r.string()?)?;
    r.finish()?;
    if meta.records.len() != count {
        return Err(Error::Format(format!(
            "bank metadata lists {} bands for {count} filters",
            meta.records.len()
        )));
    }
    if meta.config.taps != taps {
        return Err(Error::Format(format!(
            "bank metadata says {} taps but file stores {taps}",
            meta.config.taps
        )));
    }
    ControlFilterBank::new(filters, meta)
}

pub fn save_bank(bank: &ControlFilterBank, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_bank(bank)?)?;
    Ok(())
}

pub fn load_bank(path: impl AsRef<Path>) -> Result<ControlFilterBank> {
    decode_bank(&fs::read(path)?)
}

/// Layout: `"ANCD"`, u16 version, u32 entry count, u32 train / validation /
/// test counts, u32 frame length, u32 sample rate, then per entry: band
/// edges (2 x f64), duration f64, amplitude f64, background SNR f64, seed
/// u64, label u8 and `frame_len` f32 samples.
pub fn encode_dataset(ds: &LabeledDataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.u32(ds.entries.len() as u32);
    w.u32(ds.splits.train as u32);
    w.u32(ds.splits.validation as u32);
    w.u32(ds.splits.test as u32);
    w.u32(ds.frame_len as u32);
    w.u32(ds.sample_rate_hz);
    for e in &ds.entries {
        w.f64(e.spec.band.low_hz);
        w.f64(e.spec.band.high_hz);
        w.f64(e.spec.duration_s);
        w.f64(e.spec.amplitude);
        w.f64(e.spec.background_snr_db);
        w.u64(e.spec.seed);
        w.u8(e.label);
        for &v in &e.frame {
            w.f32(v);
        }
    }
    w.finish()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<LabeledDataset> {
    let mut r = ByteReader::new(bytes, "dataset file");
    r.magic(DATASET_MAGIC)?;
    r.version(DATASET_VERSION)?;
    let count = r.u32()? as usize;
    let splits = SplitSizes {
        train: r.u32()? as usize,
        validation: r.u32()? as usize,
        test: r.u32()? as usize,
    };
    if splits.total() != count {
        return Err(Error::Format(format!(
            "dataset split sizes sum to {} but header says {count} entries",
            splits.total()
        )));
    }
    let frame_len = r.u32()? as usize;
    let sample_rate_hz = r.u32()?;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let band = BandSpec {
            low_hz: r.f64()?,
            high_hz: r.f64()?,
        };
        let spec = NoiseTrackSpec {
            band,
            duration_s: r.f64()?,
            amplitude: r.f64()?,
            background_snr_db: r.f64()?,
            seed: r.u64()?,
        };
        let label = r.u8()?;
        let raw = r.take(frame_len * 4)?;
        let frame = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(DatasetEntry { spec, label, frame });
    }
    r.finish()?;
    Ok(LabeledDataset {
        frame_len,
        sample_rate_hz,
        splits,
        entries,
    })
}

pub fn save_dataset(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_dataset(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    decode_dataset(&fs::read(path)?)
}

/// Check the bank has the expected number of filters.
pub fn expect_full_bank(bank: &ControlFilterBank) -> Result<()> {
    if bank.len() != NUM_CONTROL_FILTERS {
        return Err(invalid(format!(
            "expected {NUM_CONTROL_FILTERS} control filters, found {}",
            bank.len()
        )));
    }
    Ok(())
}
