//! Signal containers, FIR design, convolution and noise-reduction metrics.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("waveform sample {i} is not finite")));
        }
        Ok(Waveform {
            samples,
            sample_rate_hz,
        })
    }

    pub fn zeros(len: usize, sample_rate_hz: u32) -> Self {
        Waveform {
            samples: vec![0.0; len],
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate_hz)
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_power(&self.samples)
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }

    pub fn slice(&self, start: usize, end: usize) -> Waveform {
        Waveform {
            samples: self.samples[start..end].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Finite impulse response coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    taps: Vec<f64>,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>) -> Result<Self> {
        if taps.is_empty() {
            return Err(invalid("FIR filter needs at least one tap"));
        }
        if taps.iter().any(|v| !v.is_finite()) {
            return Err(invalid("FIR taps must be finite"));
        }
        Ok(FirFilter { taps })
    }

    pub fn zeros(len: usize) -> Self {
        assert!(len > 0, "FIR filter needs at least one tap");
        FirFilter {
            taps: vec![0.0; len],
        }
    }

    /// `[1, 0, 0, ...]`: passes the input through unchanged.
    pub fn identity(len: usize) -> Self {
        let mut f = FirFilter::zeros(len);
        f.taps[0] = 1.0;
        f
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn into_taps(self) -> Vec<f64> {
        self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|v| v * v).sum()
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn magnitude_at(&self, freq_hz: f64, sample_rate_hz: u32) -> f64 {
        let omega = 2.0 * PI * freq_hz / f64::from(sample_rate_hz);
        let (re, im) = self
            .taps
            .iter()
            .enumerate()
            .fold((0.0, 0.0), |(re, im), (n, &h)| {
                let phase = omega * n as f64;
                (re + h * phase.cos(), im - h * phase.sin())
            });
        re.hypot(im)
    }

    pub fn magnitude_db_at(&self, freq_hz: f64, sample_rate_hz: u32) -> f64 {
        20.0 * self.magnitude_at(freq_hz, sample_rate_hz).log10()
    }
}

/// The three acoustic paths of a single-channel feedforward ANC plant.
///
/// `secondary_estimate` is what the controller uses to filter the reference;
/// `secondary` is what the plant actually applies to the anti-noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathModel {
    pub primary: FirFilter,
    pub secondary: FirFilter,
    pub secondary_estimate: FirFilter,
}

impl PathModel {
    /// Paths with a perfect secondary-path estimate.
    pub fn new(primary: FirFilter, secondary: FirFilter) -> Self {
        PathModel {
            primary,
            secondary_estimate: secondary.clone(),
            secondary,
        }
    }

    pub fn with_primary(&self, primary: FirFilter) -> Self {
        PathModel {
            primary,
            secondary: self.secondary.clone(),
            secondary_estimate: self.secondary_estimate.clone(),
        }
    }
}

/// Newest-first history of the last `len` inputs, zero-initialised.
///
/// Samples are written twice into a buffer of length `2 * len` so the
/// current window is always one contiguous slice.
#[derive(Debug, Clone)]
pub struct DelayLine {
    buf: Vec<f64>,
    pos: usize,
    len: usize,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        assert!(len > 0, "delay line length must be positive");
        DelayLine {
            buf: vec![0.0; 2 * len],
            pos: 0,
            len,
        }
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.pos = if self.pos == 0 { self.len - 1 } else { self.pos - 1 };
        self.buf[self.pos] = x;
        self.buf[self.pos + self.len] = x;
    }

    /// `window()[0]` is the newest sample, `window()[len - 1]` the oldest.
    #[inline]
    pub fn window(&self) -> &[f64] {
        &self.buf[self.pos..self.pos + self.len]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn reset(&mut self) {
        self.buf.iter_mut().for_each(|v| *v = 0.0);
        self.pos = 0;
    }
}

/// Sample-by-sample FIR filtering.
#[derive(Debug, Clone)]
pub struct StreamingFir {
    filter: FirFilter,
    line: DelayLine,
}

impl StreamingFir {
    pub fn new(filter: FirFilter) -> Self {
        let line = DelayLine::new(filter.len());
        StreamingFir { filter, line }
    }

    /// Push one input and return the filter output for it.
    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        self.line.push(x);
        dot(self.filter.taps(), self.line.window())
    }

    pub fn filter(&self) -> &FirFilter {
        &self.filter
    }

    /// Swap in new coefficients of the same length, keeping the input history.
    pub fn replace_taps(&mut self, filter: FirFilter) -> Result<()> {
        if filter.len() != self.filter.len() {
            return Err(invalid(format!(
                "replacement filter has {} taps, expected {}",
                filter.len(),
                self.filter.len()
            )));
        }
        self.filter = filter;
        Ok(())
    }

    pub fn reset(&mut self) {
        self.line.reset();
    }
}

/// Inner product with a fixed left-to-right summation order over four lanes.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn mean_power(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    dot(x, x) / x.len() as f64
}

pub fn rms(x: &[f64]) -> f64 {
    mean_power(x).sqrt()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Linear-phase windowed-sinc (Hamming) band-pass.
///
/// The response is normalised to unit gain at the arithmetic band centre.
pub fn design_bandpass(
    low_hz: f64,
    high_hz: f64,
    num_taps: usize,
    sample_rate_hz: u32,
) -> Result<FirFilter> {
    let nyquist = f64::from(sample_rate_hz) / 2.0;
    if !(low_hz > 0.0 && high_hz > 0.0) || !low_hz.is_finite() || !high_hz.is_finite() {
        return Err(invalid(format!(
            "band edges must be positive, got {low_hz}-{high_hz} Hz"
        )));
    }
    if low_hz >= high_hz {
        return Err(invalid(format!(
            "low edge {low_hz} Hz must be below high edge {high_hz} Hz"
        )));
    }
    if high_hz > nyquist {
        return Err(invalid(format!(
            "high edge {high_hz} Hz exceeds Nyquist {nyquist} Hz"
        )));
    }
    if num_taps % 2 == 0 || num_taps < 31 {
        return Err(invalid(format!(
            "band-pass length must be odd and at least 31, got {num_taps}"
        )));
    }

    let fs = f64::from(sample_rate_hz);
    let (fl, fh) = (low_hz / fs, high_hz / fs);
    let mid = (num_taps - 1) as f64 / 2.0;
    let denom = (num_taps - 1) as f64;
    let mut taps: Vec<f64> = (0..num_taps)
        .map(|n| {
            let m = n as f64 - mid;
            let ideal = 2.0 * fh * sinc(2.0 * fh * m) - 2.0 * fl * sinc(2.0 * fl * m);
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos();
            ideal * window
        })
        .collect();

    // Symmetrise exactly so rounding in the window cannot break linear phase.
    for i in 0..num_taps / 2 {
        let j = num_taps - 1 - i;
        let avg = 0.5 * (taps[i] + taps[j]);
        taps[i] = avg;
        taps[j] = avg;
    }

    let filter = FirFilter { taps };
    let gain = filter.magnitude_at(0.5 * (low_hz + high_hz), sample_rate_hz);
    if gain <= 0.0 || !gain.is_finite() {
        return Err(Error::DegenerateInput("band-pass design has zero centre gain"));
    }
    Ok(FirFilter {
        taps: filter.taps.into_iter().map(|v| v / gain).collect(),
    })
}

/// Full linear convolution, direct form. Output length `len(x) + len(h) - 1`.
pub fn convolve_full(x: &Waveform, h: &FirFilter) -> Result<Waveform> {
    if x.is_empty() {
        return Err(invalid("cannot convolve an empty waveform"));
    }
    Ok(Waveform {
        samples: convolve_slices(x.samples(), h.taps()),
        sample_rate_hz: x.sample_rate_hz(),
    })
}

/// Direct linear convolution of two slices.
pub fn convolve_slices(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        for (yk, &hk) in y[i..i + h.len()].iter_mut().zip(h) {
            *yk += xi * hk;
        }
    }
    y
}

/// FFT-backed linear convolution. Agrees with [`convolve_slices`] to rounding.
pub fn fft_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    if x.is_empty() || h.is_empty() {
        return Vec::new();
    }
    let out_len = x.len() + h.len() - 1;
    let plan = FftPlan::new(out_len.next_power_of_two());
    let hx = plan.spectrum(x);
    let hh = plan.spectrum(h);
    let prod: Vec<Complex64> = hx.iter().zip(&hh).map(|(a, b)| a * b).collect();
    let mut y = plan.inverse(prod);
    y.truncate(out_len);
    y
}

/// A cached forward/inverse FFT pair of one size.
#[derive(Clone)]
pub struct FftPlan {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("size", &self.size).finish()
    }
}

impl FftPlan {
    pub fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        FftPlan {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// Zero-padded forward transform of a real signal.
    pub fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        assert!(x.len() <= self.size, "signal longer than FFT size");
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        buf
    }

    /// Inverse transform, returning the (scaled) real part.
    pub fn inverse(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        self.inverse.process(&mut spec);
        let scale = 1.0 / self.size as f64;
        spec.into_iter().map(|c| c.re * scale).collect()
    }
}

/// Divide every sample by the frame's range (max - min).
///
/// No mean is removed: a frame that does not straddle zero is not centred
/// and may leave (-1, 1).
pub fn min_max_normalize(frame: &Waveform) -> Result<Waveform> {
    Ok(Waveform {
        samples: min_max_normalize_slice(frame.samples())?,
        sample_rate_hz: frame.sample_rate_hz(),
    })
}

pub fn min_max_normalize_slice(frame: &[f64]) -> Result<Vec<f64>> {
    if frame.is_empty() {
        return Err(Error::DegenerateInput("cannot normalise an empty frame"));
    }
    let (lo, hi) = frame
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::DegenerateInput("constant frame has zero range"));
    }
    Ok(frame.iter().map(|v| v / range).collect())
}

/// Per-window noise reduction `10 log10(P_d / P_e)` in dB.
///
/// A trailing partial window is dropped. A silent disturbance gives 0 dB;
/// a silent residual (with non-silent disturbance) gives `+inf`.
pub fn noise_reduction_db(d: &Waveform, e: &Waveform, window_s: f64) -> Result<Vec<f64>> {
    if d.len() != e.len() {
        return Err(invalid(format!(
            "disturbance has {} samples but residual has {}",
            d.len(),
            e.len()
        )));
    }
    if d.sample_rate_hz() != e.sample_rate_hz() {
        return Err(invalid("disturbance and residual sample rates differ"));
    }
    if !(window_s > 0.0) || !window_s.is_finite() {
        return Err(invalid(format!("window must be positive, got {window_s} s")));
    }
    let window = (window_s * f64::from(d.sample_rate_hz())).round() as usize;
    if window == 0 {
        return Err(invalid("window shorter than one sample"));
    }
    Ok(d.samples()
        .chunks_exact(window)
        .zip(e.samples().chunks_exact(window))
        .map(|(dw, ew)| nr_db(mean_power(dw), mean_power(ew)))
        .collect())
}

/// Noise reduction for one pair of powers, with the silent-window conventions.
pub fn nr_db(p_d: f64, p_e: f64) -> f64 {
    if p_d == 0.0 {
        0.0
    } else if p_e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (p_d / p_e).log10()
    }
}
