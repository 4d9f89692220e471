//! Sample-rate feedforward control: FxLMS, FxNLMS and the fixed-filter
//! controller.
//!
//! One call to [`AdaptiveFilterState::fxnlms_step`] runs the whole plant for
//! one sample, in this order:
//!
//! ```text
//! x_line <- x(n)                       reference history
//! u(n)    = w . x_line                 control output
//! y(n)    = s * u (n)                  anti-noise at the error point
//! e(n)    = d(n) - y(n)
//! r(n)    = s_hat * x (n),  r_line <- r(n)
//! Gamma   = beta + r_line . r_line
//! w      <- w + mu * e(n) * r_line / Gamma
//! ```
//!
//! The update uses the error produced by the pre-update weights.

use crate::dsp::{dot, DelayLine, FirFilter, PathModel, StreamingFir, Waveform};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_MU: f64 = 0.002;
pub const DEFAULT_BETA: f64 = 1e-6;
pub const DEFAULT_CONTROL_TAPS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlStepOutput {
    /// Residual at the error sensor.
    pub e_n: f64,
    /// Anti-noise after the secondary path.
    pub y_n: f64,
    /// `beta + r^T r` for this step.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Update {
    Frozen,
    Lms,
    Nlms,
}

/// Control filter plus the reference and filtered-reference histories.
#[derive(Debug, Clone)]
pub struct AdaptiveFilterState {
    w: Vec<f64>,
    mu: f64,
    beta: f64,
    x_line: DelayLine,
    r_line: DelayLine,
    s_hat: StreamingFir,
    samples_seen: u64,
}

impl AdaptiveFilterState {
    pub fn new(w: FirFilter, mu: f64, beta: f64, secondary_estimate: FirFilter) -> Result<Self> {
        if !(mu > 0.0) || !mu.is_finite() {
            return Err(invalid(format!("step size must be positive, got {mu}")));
        }
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(invalid(format!("regulariser must be positive, got {beta}")));
        }
        let len = w.len();
        Ok(AdaptiveFilterState {
            w: w.into_taps(),
            mu,
            beta,
            x_line: DelayLine::new(len),
            r_line: DelayLine::new(len),
            s_hat: StreamingFir::new(secondary_estimate),
            samples_seen: 0,
        })
    }

    /// Zero-initialised control filter of `taps` coefficients.
    pub fn zeros(taps: usize, mu: f64, beta: f64, secondary_estimate: FirFilter) -> Result<Self> {
        if taps == 0 {
            return Err(invalid("control filter needs at least one tap"));
        }
        Self::new(FirFilter::zeros(taps), mu, beta, secondary_estimate)
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn filter(&self) -> FirFilter {
        FirFilter::new(self.w.clone()).expect("weights are kept finite")
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn samples_seen(&self) -> u64 {
        self.samples_seen
    }

    /// Newest-first filtered-reference history used by the last update.
    pub fn filtered_reference(&self) -> &[f64] {
        self.r_line.window()
    }

    /// Overwrite the control coefficients; the signal histories are kept.
    pub fn set_weights(&mut self, w: &FirFilter) -> Result<()> {
        if w.len() != self.w.len() {
            return Err(invalid(format!(
                "control filter has {} taps, expected {}",
                w.len(),
                self.w.len()
            )));
        }
        self.w.copy_from_slice(w.taps());
        Ok(())
    }

    pub fn fxnlms_step(
        &mut self,
        x_n: f64,
        d_n: f64,
        secondary: &mut StreamingFir,
        adapt: bool,
    ) -> Result<ControlStepOutput> {
        let rule = if adapt { Update::Nlms } else { Update::Frozen };
        self.step(x_n, d_n, secondary, rule)
    }

    pub fn fxlms_step(
        &mut self,
        x_n: f64,
        d_n: f64,
        secondary: &mut StreamingFir,
    ) -> Result<ControlStepOutput> {
        self.step(x_n, d_n, secondary, Update::Lms)
    }

    fn step(
        &mut self,
        x_n: f64,
        d_n: f64,
        secondary: &mut StreamingFir,
        rule: Update,
    ) -> Result<ControlStepOutput> {
        let index = self.samples_seen;
        self.samples_seen += 1;

        self.x_line.push(x_n);
        let u_n = dot(&self.w, self.x_line.window());
        let y_n = secondary.step(u_n);
        let e_n = d_n - y_n;
        let r_n = self.s_hat.step(x_n);
        self.r_line.push(r_n);
        let r = self.r_line.window();
        let gamma = self.beta + dot(r, r);

        let gain = match rule {
            Update::Frozen => 0.0,
            Update::Lms => self.mu * e_n,
            Update::Nlms => self.mu * e_n / gamma,
        };
        if !e_n.is_finite() || !gain.is_finite() {
            return Err(Error::Diverged { sample: index });
        }
        if gain != 0.0 {
            for (w, &rk) in self.w.iter_mut().zip(r) {
                *w += gain * rk;
            }
            if !self.w.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged { sample: index });
            }
        }
        Ok(ControlStepOutput { e_n, y_n, gamma })
    }
}

/// Stream `x` through the plant with frozen control coefficients and return
/// the residual `e(n)`. The disturbance is `x` filtered by the primary path.
pub fn run_fixed(w: &FirFilter, x: &Waveform, paths: &PathModel) -> Result<Waveform> {
    let mut state = AdaptiveFilterState::new(
        w.clone(),
        DEFAULT_MU,
        DEFAULT_BETA,
        paths.secondary_estimate.clone(),
    )?;
    let mut primary = StreamingFir::new(paths.primary.clone());
    let mut secondary = StreamingFir::new(paths.secondary.clone());
    let mut e = Vec::with_capacity(x.len());
    for &x_n in x.samples() {
        let d_n = primary.step(x_n);
        e.push(state.fxnlms_step(x_n, d_n, &mut secondary, false)?.e_n);
    }
    Waveform::new(e, x.sample_rate_hz())
}

/// Disturbance and residual traces of an adaptive run.
#[derive(Debug, Clone)]
pub struct AdaptiveRun {
    pub d: Waveform,
    pub e: Waveform,
    pub filter: FirFilter,
}

/// Run FxNLMS (or FxLMS) from the given initial coefficients over `x`.
pub fn run_adaptive(
    w0: &FirFilter,
    x: &Waveform,
    paths: &PathModel,
    mu: f64,
    beta: f64,
    normalized: bool,
) -> Result<AdaptiveRun> {
    let mut state = AdaptiveFilterState::new(w0.clone(), mu, beta, paths.secondary_estimate.clone())?;
    let mut primary = StreamingFir::new(paths.primary.clone());
    let mut secondary = StreamingFir::new(paths.secondary.clone());
    let mut d = Vec::with_capacity(x.len());
    let mut e = Vec::with_capacity(x.len());
    for &x_n in x.samples() {
        let d_n = primary.step(x_n);
        let out = if normalized {
            state.fxnlms_step(x_n, d_n, &mut secondary, true)?
        } else {
            state.fxlms_step(x_n, d_n, &mut secondary)?
        };
        d.push(d_n);
        e.push(out.e_n);
    }
    let rate = x.sample_rate_hz();
    Ok(AdaptiveRun {
        d: Waveform::new(d, rate)?,
        e: Waveform::new(e, rate)?,
        filter: state.filter(),
    })
}
