//! Hanbury-Brown-Twiss data: synthesis, histogramming, normalization,
//! likelihood fits of g²(0), bootstrap errors and β from saturation data.
//!
//! Delays are in nanoseconds throughout; model curves are converted from
//! units of 1/Γ with a [`UnitScale`]. A delay `Δt = t(detector 1) − t(detector 0)`
//! falls into the bin centered at `k·w` with `k = floor((Δt + w/2)/w)`.

use std::path::Path;

use argmin::core::{CostFunction, Executor};
use argmin::solver::neldermead::NelderMead;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Exp, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::OdBinSpec;
use crate::error::{Error, Result};
use crate::types::{G2Curve, TauGrid, UnitScale};

pub const DEFAULT_BIN_WIDTH_NS: f64 = 2.0;
pub const DEFAULT_TAU_MAX_NS: f64 = 400.0;
pub const DEFAULT_TAIL_NS: f64 = 200.0;
pub const DEFAULT_MIN_TAIL_COUNTS: u64 = 100;
pub const DIP_WINDOW_NS: f64 = 30.0;
pub const PEAK_WINDOW_NS: f64 = 15.0;
pub const DEFAULT_BOOTSTRAP_SAMPLES: usize = 50;

/// Symmetric coincidence histogram with bins centered at `k·w`, `|k| ≤ K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceHistogram {
    bin_width_ns: f64,
    counts: Vec<u64>,
    /// Singles rates of the two detectors, per ns.
    pub singles_rates: Option<(f64, f64)>,
    pub acquisition_ns: Option<f64>,
    pub transmission: Option<f64>,
}

impl CoincidenceHistogram {
    /// Empty histogram covering `[−tau_max, tau_max]`.
    pub fn zeros(bin_width_ns: f64, tau_max_ns: f64) -> Result<Self> {
        if !(bin_width_ns > 0.0 && bin_width_ns.is_finite()) {
            return Err(Error::InvalidData(format!("bin width {bin_width_ns} must be positive")));
        }
        if !(tau_max_ns >= bin_width_ns && tau_max_ns.is_finite()) {
            return Err(Error::InvalidData(format!(
                "delay range {tau_max_ns} ns must cover at least one bin of {bin_width_ns} ns"
            )));
        }
        let half = (tau_max_ns / bin_width_ns + 1e-9).floor() as usize;
        Ok(Self {
            bin_width_ns,
            counts: vec![0; 2 * half + 1],
            singles_rates: None,
            acquisition_ns: None,
            transmission: None,
        })
    }

    /// Build from `(tau_ns, counts)` rows; centers must be `k·w` for a
    /// symmetric range of `k`.
    pub fn from_rows(rows: &[(f64, u64)]) -> Result<Self> {
        if rows.len() < 3 || rows.len().is_multiple_of(2) {
            return Err(Error::InvalidData(format!(
                "histogram needs an odd number (>= 3) of bins, got {}",
                rows.len()
            )));
        }
        let width = rows[1].0 - rows[0].0;
        let half = rows.len() / 2;
        let mut hist = Self::zeros(width, width * half as f64)?;
        for (i, (tau, c)) in rows.iter().enumerate() {
            let expected = (i as f64 - half as f64) * width;
            if (tau - expected).abs() > 1e-6 * width.max(1.0) {
                return Err(Error::InvalidData(format!(
                    "bin {i} at {tau} ns breaks the uniform symmetric layout (expected {expected})"
                )));
            }
            hist.counts[i] = *c;
        }
        Ok(hist)
    }

    pub fn bin_width_ns(&self) -> f64 {
        self.bin_width_ns
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn half_bins(&self) -> usize {
        self.counts.len() / 2
    }

    pub fn tau_max_ns(&self) -> f64 {
        self.half_bins() as f64 * self.bin_width_ns
    }

    pub fn tau_ns(&self, i: usize) -> f64 {
        (i as f64 - self.half_bins() as f64) * self.bin_width_ns
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.tau_ns(i)).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Bin index for delay `dt`, or `None` outside the range.
    pub fn index_of(&self, dt_ns: f64) -> Option<usize> {
        let k = ((dt_ns + 0.5 * self.bin_width_ns) / self.bin_width_ns).floor();
        let i = k + self.half_bins() as f64;
        (i >= 0.0 && i < self.counts.len() as f64).then_some(i as usize)
    }

    pub fn record(&mut self, dt_ns: f64) {
        if let Some(i) = self.index_of(dt_ns) {
            self.counts[i] += 1;
        }
    }

    /// Add another histogram of identical layout.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.counts.len() != other.counts.len() || self.bin_width_ns != other.bin_width_ns {
            return Err(Error::InvalidData("histograms differ in layout".into()));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.acquisition_ns, other.acquisition_ns) {
            self.acquisition_ns = Some(a + b);
        }
        Ok(())
    }

    pub fn scaled(&self, factor: u64) -> Self {
        let mut out = self.clone();
        out.counts.iter_mut().for_each(|c| *c *= factor);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["tau_ns", "counts"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.tau_ns(i).to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            tau_ns: f64,
            counts: u64,
        }
        let mut rows = Vec::new();
        for r in csv::Reader::from_path(path)?.deserialize() {
            let r: Row = r?;
            rows.push((r.tau_ns, r.counts));
        }
        Self::from_rows(&rows)
    }
}

/// Poisson counts with mean `r₁ r₂ w T g²(τ_i)`.
pub fn synth_histogram(
    g2: &G2Curve,
    rates_per_ns: (f64, f64),
    acquisition_ns: f64,
    layout: &CoincidenceHistogram,
    scale: &UnitScale,
    seed: u64,
) -> Result<CoincidenceHistogram> {
    let (r1, r2) = rates_per_ns;
    if !(r1 > 0.0 && r2 > 0.0 && acquisition_ns > 0.0) {
        return Err(Error::InvalidData("rates and acquisition time must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = r1 * r2 * layout.bin_width_ns * acquisition_ns;
    let mut hist = CoincidenceHistogram::zeros(layout.bin_width_ns, layout.tau_max_ns())?;
    for i in 0..hist.counts.len() {
        let mean = base * g2.value_at(scale.to_gamma(hist.tau_ns(i).abs()));
        hist.counts[i] = if mean > 0.0 {
            Poisson::new(mean)
                .map_err(|e| Error::InvalidData(e.to_string()))?
                .sample(&mut rng) as u64
        } else {
            0
        };
    }
    hist.singles_rates = Some(rates_per_ns);
    hist.acquisition_ns = Some(acquisition_ns);
    hist.transmission = Some(g2.transmission);
    Ok(hist)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TimeTag {
    pub timestamp_ns: i64,
    pub detector_id: u8,
}

/// Detection events of both detectors, sorted by time.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeTagStream {
    tags: Vec<TimeTag>,
}

impl TimeTagStream {
    pub fn new(tags: Vec<TimeTag>) -> Result<Self> {
        for (i, t) in tags.iter().enumerate() {
            if t.detector_id > 1 {
                return Err(Error::InvalidData(format!("tag {i} has detector id {}", t.detector_id)));
            }
            if i > 0 && t.timestamp_ns < tags[i - 1].timestamp_ns {
                return Err(Error::UnsortedStream { index: i });
            }
        }
        Ok(Self { tags })
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["detector_id", "timestamp_ns"])?;
        for t in &self.tags {
            w.write_record([t.detector_id.to_string(), t.timestamp_ns.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            detector_id: u8,
            timestamp_ns: i64,
        }
        let mut tags = Vec::new();
        for r in csv::Reader::from_path(path)?.deserialize() {
            let r: Row = r?;
            tags.push(TimeTag {
                timestamp_ns: r.timestamp_ns,
                detector_id: r.detector_id,
            });
        }
        Self::new(tags)
    }
}

fn poisson_times(rng: &mut ChaCha8Rng, rate: f64, duration: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity((rate * duration * 1.1) as usize + 16);
    let gap = Exp::new(rate).expect("positive rate");
    let mut t = gap.sample(rng);
    while t < duration {
        out.push(t);
        t += gap.sample(rng);
    }
    out
}

/// Two-detector stream with cross-correlation `g2`.
///
/// Detector 0 is a Poisson process of rate `r₀`. Detector 1 is obtained by
/// thinning a Poisson process of rate `r₁·g_max` with the conditional
/// intensity `r₁·Π_s g²(t − s)` over detector-0 tags `s` within the curve's
/// range, clamped to `r₁·g_max`.
pub fn synth_timetags(
    g2: &G2Curve,
    rates_per_ns: (f64, f64),
    duration_ns: f64,
    scale: &UnitScale,
    seed: u64,
) -> Result<TimeTagStream> {
    let (r0, r1) = rates_per_ns;
    if !(r0 > 0.0 && r1 > 0.0) {
        return Err(Error::InvalidData("rates must be positive".into()));
    }
    if !(duration_ns >= 0.0 && duration_ns.is_finite()) {
        return Err(Error::InvalidData(format!("duration {duration_ns} must be >= 0")));
    }
    if duration_ns == 0.0 {
        return Ok(TimeTagStream::default());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let det0 = poisson_times(&mut rng, r0, duration_ns);
    let g_max = g2.values().iter().cloned().fold(1.0, f64::max);
    let reach = scale.to_ns(g2.grid.max());
    let candidates = poisson_times(&mut rng, r1 * g_max, duration_ns);

    let mut det1 = Vec::with_capacity(candidates.len());
    let mut lo = 0;
    for t in candidates {
        while lo < det0.len() && det0[lo] < t - reach {
            lo += 1;
        }
        let mut factor = 1.0;
        for s in det0[lo..].iter().take_while(|s| **s <= t + reach) {
            factor *= g2.value_at(scale.to_gamma((t - s).abs()));
        }
        if rng.random::<f64>() * g_max < factor.min(g_max) {
            det1.push(t);
        }
    }

    let mut tags: Vec<TimeTag> = det0
        .iter()
        .map(|t| (t, 0u8))
        .chain(det1.iter().map(|t| (t, 1u8)))
        .map(|(t, d)| TimeTag {
            timestamp_ns: t.floor() as i64,
            detector_id: d,
        })
        .collect();
    tags.sort();
    TimeTagStream::new(tags)
}

/// Probe-pulse gating: only tags inside `[window_start, window_end)` of each
/// pulse period are kept, and the first `discard_pulses` pulses of every run
/// are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseGating {
    pub period_ns: i64,
    pub window_start_ns: i64,
    pub window_end_ns: i64,
    pub discard_pulses: u64,
    /// Pulses per run; `None` treats the stream as a single run.
    pub pulses_per_run: Option<u64>,
}

impl Default for PulseGating {
    fn default() -> Self {
        Self {
            period_ns: 210_000,
            window_start_ns: 1_000,
            window_end_ns: 9_000,
            discard_pulses: 20,
            pulses_per_run: Some(350),
        }
    }
}

impl PulseGating {
    pub fn keeps(&self, t_ns: i64) -> bool {
        let pulse = t_ns.div_euclid(self.period_ns) as u64;
        let phase = t_ns.rem_euclid(self.period_ns);
        let index = match self.pulses_per_run {
            Some(n) if n > 0 => pulse % n,
            _ => pulse,
        };
        index >= self.discard_pulses && phase >= self.window_start_ns && phase < self.window_end_ns
    }
}

/// Histogram of `t₁ − t₀` over all detector pairs within the range.
pub fn histogram_timetags(
    stream: &TimeTagStream,
    bin_width_ns: f64,
    tau_max_ns: f64,
    gating: Option<&PulseGating>,
) -> Result<CoincidenceHistogram> {
    // Re-validate: the field is private but streams may be deserialized.
    TimeTagStream::new(stream.tags.clone())?;
    let mut hist = CoincidenceHistogram::zeros(bin_width_ns, tau_max_ns)?;
    let keep = |t: &&TimeTag| gating.is_none_or(|g| g.keeps(t.timestamp_ns));
    let by_det = |d: u8| -> Vec<i64> {
        stream
            .tags
            .iter()
            .filter(keep)
            .filter(|t| t.detector_id == d)
            .map(|t| t.timestamp_ns)
            .collect()
    };
    let (d0, d1) = (by_det(0), by_det(1));
    let reach = hist.tau_max_ns() + 0.5 * bin_width_ns;
    let mut lo = 0;
    for &s in &d0 {
        while lo < d1.len() && ((d1[lo] - s) as f64) < -reach {
            lo += 1;
        }
        for &t in d1[lo..].iter().take_while(|t| ((**t - s) as f64) < reach) {
            hist.record((t - s) as f64);
        }
    }
    if let (Some(first), Some(last)) = (stream.tags.first(), stream.tags.last()) {
        let span = (last.timestamp_ns - first.timestamp_ns) as f64;
        if span > 0.0 && gating.is_none() {
            hist.singles_rates = Some((d0.len() as f64 / span, d1.len() as f64 / span));
            hist.acquisition_ns = Some(span);
        }
    }
    Ok(hist)
}

/// Two-sided normalized values `c_i / mean tail count`.
pub fn normalized_values(hist: &CoincidenceHistogram, tail_ns: f64, min_tail_counts: u64) -> Result<Vec<f64>> {
    let tail: Vec<u64> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| hist.tau_ns(*i).abs() > tail_ns)
        .map(|(_, c)| *c)
        .collect();
    let found: u64 = tail.iter().sum();
    if tail.is_empty() || found < min_tail_counts {
        return Err(Error::InsufficientTail {
            found,
            required: min_tail_counts,
        });
    }
    let mean = found as f64 / tail.len() as f64;
    Ok(hist.counts.iter().map(|c| *c as f64 / mean).collect())
}

/// Normalized g²(τ) on `τ ≥ 0`, averaging the `±τ` bins, with delays in 1/Γ.
pub fn normalize_histogram(
    hist: &CoincidenceHistogram,
    tail_ns: f64,
    min_tail_counts: u64,
    scale: &UnitScale,
) -> Result<G2Curve> {
    let values = normalized_values(hist, tail_ns, min_tail_counts)?;
    let h = hist.half_bins();
    let taus: Vec<f64> = (0..=h).map(|k| scale.to_gamma(k as f64 * hist.bin_width_ns)).collect();
    let folded: Vec<f64> = (0..=h)
        .map(|k| {
            if k == 0 {
                values[h]
            } else {
                0.5 * (values[h + k] + values[h - k])
            }
        })
        .collect();
    G2Curve::new(
        TauGrid::new(taus, true)?,
        folded,
        hist.transmission.unwrap_or(f64::NAN),
        "normalized histogram",
    )
}

/// Heuristic model `1 − A·exp(−γ|τ|)` fitted by maximum likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    #[serde(rename = "A")]
    pub a: f64,
    pub a_err: Option<f64>,
    pub gamma_fit_per_ns: f64,
    pub g2_zero: f64,
    pub window_ns: f64,
    pub n_bootstrap: usize,
    pub seed: Option<u64>,
    pub likelihood: Likelihood,
    /// Counts per bin at g² = 1 when the likelihood fixes it.
    pub baseline: Option<f64>,
    /// Number of tail bins behind `baseline`.
    pub tail_bins: Option<usize>,
    pub window_counts: u64,
    pub log_likelihood: f64,
}

/// Fit window choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitWindow {
    /// 30 ns for dips, 15 ns for peaks, chosen from a moment estimate.
    Auto,
    HalfWidthNs(f64),
}

/// Normalization of the proportional likelihood `Π g_i^{c_i}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// `Σ c ln g − C ln Σ g`: the shape inside the window only. The overall
    /// scale is free, so nearly linear dips can drift to `A → 1, γ → 0`.
    Multinomial,
    /// `Σ c ln g − b Σ g` with `b` the mean count beyond `tail_ns`.
    TailPoisson { tail_ns: f64 },
}

impl Default for Likelihood {
    fn default() -> Self {
        Likelihood::TailPoisson {
            tail_ns: DEFAULT_TAIL_NS,
        }
    }
}

/// Sign of `g(0) − 1` from the three central bins against the baseline
/// (the tail if populated, otherwise the 30 ns window edge).
pub fn looks_bunched(hist: &CoincidenceHistogram) -> bool {
    let h = hist.half_bins();
    let center = (hist.counts[h.saturating_sub(1)] + hist.counts[h] + hist.counts[(h + 1).min(2 * h)]) as f64 / 3.0;
    let baseline = match normalized_values(hist, DEFAULT_TAIL_NS, 1) {
        Ok(v) => return v[h.saturating_sub(1)..=(h + 1).min(2 * h)].iter().sum::<f64>() / 3.0 > 1.0,
        Err(_) => {
            let edge = (DIP_WINDOW_NS / hist.bin_width_ns).round() as usize;
            let edge = edge.min(h);
            0.5 * (hist.counts[h - edge] + hist.counts[h + edge]) as f64
        }
    };
    center > baseline
}

fn tail_mean(hist: &CoincidenceHistogram, tail_ns: f64) -> Result<(f64, usize)> {
    let tail: Vec<u64> = hist
        .counts
        .iter()
        .enumerate()
        .filter(|(i, _)| hist.tau_ns(*i).abs() > tail_ns)
        .map(|(_, c)| *c)
        .collect();
    let found: u64 = tail.iter().sum();
    if found == 0 {
        return Err(Error::InsufficientTail { found, required: 1 });
    }
    Ok((found as f64 / tail.len() as f64, tail.len()))
}

struct WindowData {
    tau: Vec<f64>,
    counts: Vec<f64>,
}

impl WindowData {
    fn from_hist(hist: &CoincidenceHistogram, half_width_ns: f64) -> Self {
        let (tau, counts) = hist
            .counts
            .iter()
            .enumerate()
            .map(|(i, c)| (hist.tau_ns(i), *c as f64))
            .filter(|(t, _)| t.abs() <= half_width_ns + 1e-9)
            .unzip();
        Self { tau, counts }
    }

    fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

struct LikelihoodCost<'a> {
    data: &'a WindowData,
    total: f64,
    baseline: Option<f64>,
}

impl LikelihoodCost<'_> {
    fn log_likelihood(&self, a: f64, gamma: f64) -> f64 {
        let mut ll = 0.0;
        let mut norm = 0.0;
        for (t, c) in self.data.tau.iter().zip(&self.data.counts) {
            let g = 1.0 - a * (-gamma * t.abs()).exp();
            if g < 0.0 || (g == 0.0 && *c > 0.0) {
                return f64::NEG_INFINITY;
            }
            if *c > 0.0 {
                ll += c * g.ln();
            }
            norm += g;
        }
        if !(norm > 0.0) {
            return f64::NEG_INFINITY;
        }
        match self.baseline {
            Some(b) => ll - b * norm,
            None => ll - self.total * norm.ln(),
        }
    }
}

impl CostFunction for LikelihoodCost<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let ll = self.log_likelihood(p[0], p[1].exp());
        Ok(if ll.is_finite() { -ll } else { f64::INFINITY })
    }
}

const MIN_WINDOW_BINS: usize = 5;
const MAX_ITERS: u64 = 2000;

fn fit_window(
    data: &WindowData,
    window_ns: f64,
    start_a: f64,
    likelihood: Likelihood,
    baseline: Option<f64>,
) -> Result<FitResult> {
    if data.tau.len() < MIN_WINDOW_BINS {
        return Err(Error::FitFailed(format!(
            "window of ±{window_ns} ns holds {} bins, need {MIN_WINDOW_BINS}",
            data.tau.len()
        )));
    }
    let total = data.total();
    if total == 0.0 {
        return Err(Error::EmptyWindow { window_ns });
    }
    let cost = |data| LikelihoodCost { data, total, baseline };
    let g0 = (1.0f64 / 30.0).ln();
    // Keep the starting simplex feasible: 1 − A > 0 at τ = 0.
    let a0 = start_a.clamp(-50.0, 0.9);
    let da = if a0 > 0.5 { -0.2 } else { 0.2 };
    let simplex = vec![vec![a0, g0], vec![a0 + da, g0], vec![a0, g0 + 0.5]];
    let solver = NelderMead::new(simplex)
        .with_sd_tolerance(1e-10)
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    let res = Executor::new(cost(data), solver)
        .configure(|s| s.max_iters(MAX_ITERS))
        .run()
        .map_err(|e| Error::FitFailed(e.to_string()))?;
    let state = res.state();
    let best = state
        .best_param
        .clone()
        .ok_or_else(|| Error::FitFailed("search produced no parameters".into()))?;
    let (a, gamma) = (best[0], best[1].exp());
    let ll = cost(data).log_likelihood(a, gamma);
    if !ll.is_finite() || !a.is_finite() || !gamma.is_finite() {
        return Err(Error::FitFailed(format!(
            "non-finite optimum: A={a}, gamma={gamma}/ns, log-likelihood={ll}, {} iterations",
            state.iter
        )));
    }
    if state.iter >= MAX_ITERS {
        return Err(Error::FitFailed(format!(
            "no convergence after {} iterations (A={a}, gamma={gamma}/ns)",
            state.iter
        )));
    }
    Ok(FitResult {
        a,
        a_err: None,
        gamma_fit_per_ns: gamma,
        g2_zero: 1.0 - a,
        window_ns,
        n_bootstrap: 0,
        seed: None,
        likelihood,
        baseline,
        tail_bins: None,
        window_counts: total as u64,
        log_likelihood: ll,
    })
}

/// Maximize the normalized likelihood over `(A, γ)` in the window.
pub fn mle_fit_g2(hist: &CoincidenceHistogram, window: FitWindow, likelihood: Likelihood) -> Result<FitResult> {
    let window_ns = match window {
        FitWindow::Auto => {
            if looks_bunched(hist) {
                PEAK_WINDOW_NS
            } else {
                DIP_WINDOW_NS
            }
        }
        FitWindow::HalfWidthNs(w) => w,
    };
    let (baseline, tail_bins) = match likelihood {
        Likelihood::Multinomial => (None, None),
        Likelihood::TailPoisson { tail_ns } => {
            let (b, n) = tail_mean(hist, tail_ns)?;
            (Some(b), Some(n))
        }
    };
    let data = WindowData::from_hist(hist, window_ns);
    // Moment start: center against the baseline or the window edge.
    let n = data.counts.len();
    if n == 0 {
        return Err(Error::FitFailed(format!("window of ±{window_ns} ns holds no bins")));
    }
    let edge = baseline
        .unwrap_or_else(|| 0.5 * (data.counts[0] + data.counts[n - 1]))
        .max(1.0);
    let start = 1.0 - data.counts[n / 2] / edge;
    let mut fit = fit_window(&data, window_ns, start, likelihood, baseline)?;
    fit.tail_bins = tail_bins;
    Ok(fit)
}

/// Multinomial draw of `total` counts over `probs` by sequential binomials.
fn multinomial(rng: &mut ChaCha8Rng, total: u64, probs: &[f64]) -> Vec<f64> {
    let mut remaining = total;
    let mut mass: f64 = probs.iter().sum();
    let mut out = Vec::with_capacity(probs.len());
    for (i, p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            out.push(remaining as f64);
            break;
        }
        let q = if mass > 0.0 { (p / mass).clamp(0.0, 1.0) } else { 0.0 };
        let k = if remaining == 0 || q == 0.0 {
            0
        } else {
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        out.push(k as f64);
        remaining -= k;
        mass -= p;
    }
    out
}

/// Bootstrap the fitted amplitude: `n_samples` histograms drawn from the
/// fitted model and refitted. Multinomial fits keep the observed window
/// total; tail-normalized fits draw independent Poisson counts and a
/// Poisson tail, so the baseline is resampled too.
pub fn bootstrap_error(fit: &FitResult, hist: &CoincidenceHistogram, n_samples: usize, seed: u64) -> Result<FitResult> {
    if n_samples < 2 {
        return Err(Error::InvalidData("bootstrap needs at least two samples".into()));
    }
    let data = WindowData::from_hist(hist, fit.window_ns);
    let probs: Vec<f64> = data
        .tau
        .iter()
        .map(|t| (1.0 - fit.a * (-fit.gamma_fit_per_ns * t.abs()).exp()).max(0.0))
        .collect();
    let total = data.total() as u64;
    let refits: Vec<Option<f64>> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut poisson = |mean: f64| {
                if mean > 0.0 {
                    Poisson::new(mean).unwrap().sample(&mut rng)
                } else {
                    0.0
                }
            };
            let (counts, baseline) = match fit.baseline {
                None => (multinomial(&mut rng, total, &probs), None),
                Some(b) => {
                    let counts = probs.iter().map(|p| poisson(b * p)).collect();
                    let n_tail = fit.tail_bins.unwrap_or(1).max(1) as f64;
                    let tail = poisson(b * n_tail).max(1.0);
                    (counts, Some(tail / n_tail))
                }
            };
            let sample = WindowData {
                tau: data.tau.clone(),
                counts,
            };
            fit_window(&sample, fit.window_ns, fit.a, fit.likelihood, baseline)
                .ok()
                .map(|f| f.a)
        })
        .collect();
    let ok: Vec<f64> = refits.iter().flatten().copied().collect();
    let failed = n_samples - ok.len();
    if failed * 5 > n_samples || ok.len() < 2 {
        return Err(Error::UnstableFit {
            failed,
            total: n_samples,
        });
    }
    let mean = ok.iter().sum::<f64>() / ok.len() as f64;
    let var = ok.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (ok.len() - 1) as f64;
    Ok(FitResult {
        a_err: Some(var.sqrt()),
        n_bootstrap: n_samples,
        seed: Some(seed),
        ..fit.clone()
    })
}

/// One experimental run: its mean transmission and coincidence histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub transmission: f64,
    pub histogram: CoincidenceHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedHistograms {
    pub spec: OdBinSpec,
    /// Pooled histogram per bin (`None` when no run landed there).
    pub bins: Vec<Option<CoincidenceHistogram>>,
    pub runs_per_bin: Vec<usize>,
    pub overflow: Option<CoincidenceHistogram>,
    pub overflow_runs: usize,
    /// Bin index per input run; `None` for overflow.
    pub assignments: Vec<Option<usize>>,
}

fn pool(slot: &mut Option<CoincidenceHistogram>, h: &CoincidenceHistogram) -> Result<()> {
    match slot {
        Some(acc) => acc.merge(h),
        None => {
            *slot = Some(h.clone());
            Ok(())
        }
    }
}

/// Sort runs into OD bins via `OD = −ln T` and pool their histograms.
/// `T ≤ 0` and ODs past the last edge go to the overflow slot.
pub fn bin_runs_by_od(runs: &[RunRecord], spec: &OdBinSpec) -> Result<BinnedHistograms> {
    spec.validate()?;
    let mut out = BinnedHistograms {
        spec: spec.clone(),
        bins: vec![None; spec.n_bins()],
        runs_per_bin: vec![0; spec.n_bins()],
        overflow: None,
        overflow_runs: 0,
        assignments: Vec::with_capacity(runs.len()),
    };
    for (i, run) in runs.iter().enumerate() {
        let t = run.transmission;
        if t.is_nan() {
            return Err(Error::InvalidData(format!("run {i} has NaN transmission")));
        }
        let bin = if t <= 0.0 {
            log::warn!("run {i}: transmission {t} <= 0, assigned to overflow");
            None
        } else {
            spec.bin_of((-t.ln()).max(0.0))
        };
        out.assignments.push(bin);
        match bin {
            Some(b) => {
                pool(&mut out.bins[b], &run.histogram)?;
                out.runs_per_bin[b] += 1;
            }
            None => {
                pool(&mut out.overflow, &run.histogram)?;
                out.overflow_runs += 1;
            }
        }
    }
    Ok(out)
}

/// Input power against transmission. The power column `s0` is expressed
/// per unit coupling: an atom with coupling β sees `S₀ = β·s0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaturationData {
    rows: Vec<(f64, f64)>,
}

impl SaturationData {
    pub fn new(rows: Vec<(f64, f64)>) -> Result<Self> {
        for (i, (s, t)) in rows.iter().enumerate() {
            if !(*s > 0.0 && s.is_finite() && *t > 0.0 && t.is_finite()) {
                return Err(Error::InvalidData(format!(
                    "row {i}: power and transmission must be positive"
                )));
            }
            if i > 0 && *s <= rows[i - 1].0 {
                return Err(Error::InvalidData(format!("row {i}: input powers must increase")));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[(f64, f64)] {
        &self.rows
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["s0", "transmission"])?;
        for (s, t) in &self.rows {
            w.write_record([s.to_string(), t.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            s0: f64,
            transmission: f64,
        }
        let mut rows = Vec::new();
        for r in csv::Reader::from_path(path)?.deserialize() {
            let r: Row = r?;
            rows.push((r.s0, r.transmission));
        }
        Self::new(rows)
    }
}

/// Transmission of a saturable medium: root of `ln T + S(T − 1) + od0 = 0`.
pub fn saturated_transmission(saturation: f64, od0: f64) -> f64 {
    if od0 == 0.0 {
        return 1.0;
    }
    // Newton in x = ln T; the function is increasing and convex in x.
    let mut x = -od0;
    for _ in 0..200 {
        let e = x.exp();
        let f = x + saturation * (e - 1.0) + od0;
        let step = f / (1.0 + saturation * e);
        x -= step;
        if step.abs() < 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    x.exp().min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaFit {
    pub beta: f64,
    pub beta_err: f64,
    pub rms_log_residual: f64,
    pub n_points: usize,
}

/// Least-squares β from saturation data in log transmission.
pub fn fit_beta_saturation(data: &SaturationData, od0: f64) -> Result<BetaFit> {
    let rows = data.rows();
    if rows.len() < 5 {
        return Err(Error::Uninformative(format!(
            "{} power points, need at least 5",
            rows.len()
        )));
    }
    if !(od0 > 0.0 && od0.is_finite()) {
        return Err(Error::InvalidData(format!("low-power OD {od0} must be positive")));
    }
    let residuals = |beta: f64| -> Vec<f64> {
        rows.iter()
            .map(|(s, t)| saturated_transmission(beta * s, od0).ln() - t.ln())
            .collect()
    };
    let sse = |beta: f64| residuals(beta).iter().map(|r| r * r).sum::<f64>();

    // Coarse log grid, then Gauss-Newton.
    let mut beta = (0..=120)
        .map(|i| 1e-5 * 10f64.powf(i as f64 / 30.0))
        .min_by(|a, b| sse(*a).partial_cmp(&sse(*b)).unwrap())
        .unwrap();
    let jacobian = |beta: f64| -> Vec<f64> {
        rows.iter()
            .map(|(s, _)| {
                let sat = beta * s;
                let t = saturated_transmission(sat, od0);
                // ∂ln T/∂β from the implicit relation.
                s * (1.0 - t) / (1.0 + sat * t)
            })
            .collect()
    };
    let mut converged = false;
    for _ in 0..100 {
        let r = residuals(beta);
        let j = jacobian(beta);
        let jj: f64 = j.iter().map(|x| x * x).sum();
        if !(jj > 0.0) {
            break;
        }
        let mut step = -j.iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / jj;
        let current = sse(beta);
        while beta + step <= 0.0 || sse(beta + step) > current {
            step *= 0.5;
            if step.abs() < 1e-16 * beta {
                break;
            }
        }
        beta += step;
        if step.abs() < 1e-12 * beta {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged(format!("beta fit stalled at {beta}")));
    }

    let s_min = rows[0].0 * beta;
    let s_max = rows[rows.len() - 1].0 * beta;
    if !(s_min < 1.0 && s_max > 1.0) {
        return Err(Error::Uninformative(format!(
            "saturation range [{s_min:.3}, {s_max:.3}] does not straddle 1"
        )));
    }
    let n = rows.len();
    let rss = sse(beta);
    let jj: f64 = jacobian(beta).iter().map(|x| x * x).sum();
    Ok(BetaFit {
        beta,
        beta_err: (rss / (n - 1) as f64 / jj).sqrt(),
        rms_log_residual: (rss / n as f64).sqrt(),
        n_points: n,
    })
}

/// Synthetic saturation scan with multiplicative Gaussian noise on the
/// transmitted power.
pub fn synth_saturation(
    beta: f64,
    od0: f64,
    saturations: &[f64],
    relative_noise: f64,
    seed: u64,
) -> Result<SaturationData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = rand_distr::Normal::new(0.0, relative_noise).map_err(|e| Error::InvalidData(e.to_string()))?;
    let rows = saturations
        .iter()
        .map(|s| {
            let t = saturated_transmission(*s, od0) * (1.0 + normal.sample(&mut rng)).max(1e-6);
            (s / beta, t)
        })
        .collect();
    SaturationData::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model_curve(a: f64, tau_ns: f64, scale: &UnitScale) -> G2Curve {
        let grid = TauGrid::linspace(scale.to_gamma(600.0), 1201).unwrap();
        let values = grid
            .values()
            .iter()
            .map(|t| 1.0 - a * (-scale.to_ns(*t) / tau_ns).exp())
            .collect();
        G2Curve::new(grid, values, 0.01, "model").unwrap()
    }

    #[test]
    fn bin_convention() {
        let h = CoincidenceHistogram::zeros(2.0, 10.0).unwrap();
        assert_eq!(h.counts().len(), 11);
        assert_eq!(h.tau_ns(h.index_of(5.0).unwrap()), 6.0);
        assert_eq!(h.tau_ns(h.index_of(-5.0).unwrap()), -4.0);
        assert_eq!(h.tau_ns(h.index_of(0.99).unwrap()), 0.0);
        assert_eq!(h.index_of(11.0), None);
        assert!(CoincidenceHistogram::zeros(0.0, 10.0).is_err());
    }

    #[test]
    fn two_tags_five_ns_apart() {
        let s = TimeTagStream::new(vec![
            TimeTag {
                timestamp_ns: 100,
                detector_id: 0,
            },
            TimeTag {
                timestamp_ns: 105,
                detector_id: 1,
            },
        ])
        .unwrap();
        let h = histogram_timetags(&s, 2.0, 20.0, None).unwrap();
        assert_eq!(h.total(), 1);
        let i = h.counts().iter().position(|c| *c == 1).unwrap();
        assert!((h.tau_ns(i) - 5.0).abs() <= 1.0);
    }

    #[test]
    fn empty_and_unsorted_streams() {
        let h = histogram_timetags(&TimeTagStream::default(), 2.0, 20.0, None).unwrap();
        assert_eq!(h.total(), 0);
        let err = TimeTagStream::new(vec![
            TimeTag {
                timestamp_ns: 5,
                detector_id: 0,
            },
            TimeTag {
                timestamp_ns: 4,
                detector_id: 1,
            },
        ])
        .unwrap_err();
        assert!(matches!(err, Error::UnsortedStream { index: 1 }));
        assert!(TimeTagStream::new(vec![TimeTag {
            timestamp_ns: 5,
            detector_id: 2
        }])
        .is_err());
    }

    #[test]
    fn gating_window_and_discarded_pulses() {
        let g = PulseGating::default();
        let pulse = |k: i64, phase: i64| k * g.period_ns + phase;
        assert!(!g.keeps(pulse(5, 5_000)));
        assert!(g.keeps(pulse(20, 5_000)));
        assert!(!g.keeps(pulse(20, 500)));
        assert!(!g.keeps(pulse(20, 9_500)));
        assert!(g.keeps(pulse(20, 1_000)));
        // Second run restarts the pulse count.
        assert!(!g.keeps(pulse(350 + 3, 5_000)));
        assert!(g.keeps(pulse(350 + 25, 5_000)));

        let tags = vec![
            TimeTag {
                timestamp_ns: pulse(30, 500),
                detector_id: 0,
            },
            TimeTag {
                timestamp_ns: pulse(30, 504),
                detector_id: 1,
            },
            TimeTag {
                timestamp_ns: pulse(30, 5_000),
                detector_id: 0,
            },
            TimeTag {
                timestamp_ns: pulse(30, 5_004),
                detector_id: 1,
            },
        ];
        let s = TimeTagStream::new(tags).unwrap();
        assert_eq!(histogram_timetags(&s, 2.0, 20.0, None).unwrap().total(), 2);
        assert_eq!(histogram_timetags(&s, 2.0, 20.0, Some(&g)).unwrap().total(), 1);
    }

    #[test]
    fn flat_synthesis_has_expected_mean() {
        let scale = UnitScale::default();
        let grid = TauGrid::linspace(20.0, 21).unwrap();
        let flat = G2Curve::flat(grid, 1.0, "flat");
        let layout = CoincidenceHistogram::zeros(2.0, 400.0).unwrap();
        let h = synth_histogram(&flat, (1e-3, 2e-3), 1e9, &layout, &scale, 1).unwrap();
        let mean = h.total() as f64 / h.counts().len() as f64;
        assert_relative_eq!(mean, 4000.0, max_relative = 0.01);
        let again = synth_histogram(&flat, (1e-3, 2e-3), 1e9, &layout, &scale, 1).unwrap();
        assert_eq!(h, again);
    }

    #[test]
    fn normalization() {
        let h =
            CoincidenceHistogram::from_rows(&(-150..=150).map(|k| (2.0 * k as f64, 7)).collect::<Vec<_>>()).unwrap();
        let scale = UnitScale::default();
        let c = normalize_histogram(&h, 200.0, 100, &scale).unwrap();
        assert!(c.values().iter().all(|v| (*v - 1.0).abs() < 1e-12));
        let doubled = normalize_histogram(&h.scaled(2), 200.0, 100, &scale).unwrap();
        assert_eq!(c.values(), doubled.values());
        assert!(matches!(
            normalize_histogram(&h, 200.0, 10_000, &scale),
            Err(Error::InsufficientTail { .. })
        ));
    }

    #[test]
    fn dip_fit_recovers_amplitude_within_bootstrap_error() {
        let scale = UnitScale::default();
        let curve = model_curve(0.6, 30.0, &scale);
        let layout = CoincidenceHistogram::zeros(2.0, 400.0).unwrap();
        for likelihood in [Likelihood::default(), Likelihood::Multinomial] {
            let mut covered = 0;
            for seed in 0..40 {
                let h = synth_histogram(&curve, (1e-3, 1e-3), 1e9, &layout, &scale, seed).unwrap();
                let fit = mle_fit_g2(&h, FitWindow::Auto, likelihood).unwrap();
                assert_eq!(fit.window_ns, DIP_WINDOW_NS);
                assert!((15.0..60.0).contains(&(1.0 / fit.gamma_fit_per_ns)));
                let fit = bootstrap_error(&fit, &h, DEFAULT_BOOTSTRAP_SAMPLES, seed).unwrap();
                if (fit.a - 0.6).abs() < 2.0 * fit.a_err.unwrap() {
                    covered += 1;
                }
            }
            assert!(covered >= 34, "{likelihood:?}: {covered}/40 within 2 sigma");
        }
        let h = synth_histogram(&curve, (1e-3, 1e-3), 1e9, &layout, &scale, 1).unwrap();
        let fit = mle_fit_g2(&h, FitWindow::Auto, Likelihood::default()).unwrap();
        let a = bootstrap_error(&fit, &h, DEFAULT_BOOTSTRAP_SAMPLES, 11).unwrap();
        let b = bootstrap_error(&fit, &h, DEFAULT_BOOTSTRAP_SAMPLES, 11).unwrap();
        assert_eq!(a.a_err, b.a_err);
    }

    #[test]
    fn flat_data_fits_unit_g2() {
        let scale = UnitScale::default();
        let flat = G2Curve::flat(TauGrid::linspace(20.0, 21).unwrap(), 1.0, "flat");
        let layout = CoincidenceHistogram::zeros(2.0, 400.0).unwrap();
        let h = synth_histogram(&flat, (1e-3, 1e-3), 2e9, &layout, &scale, 2).unwrap();
        let fit = mle_fit_g2(&h, FitWindow::HalfWidthNs(DIP_WINDOW_NS), Likelihood::default()).unwrap();
        let fit = bootstrap_error(&fit, &h, 50, 3).unwrap();
        assert!(fit.a.abs() < 3.0 * fit.a_err.unwrap() + 0.02);
    }

    #[test]
    fn bunched_data_uses_narrow_window() {
        let scale = UnitScale::default();
        let curve = model_curve(-21.0, 10.0, &scale);
        let layout = CoincidenceHistogram::zeros(2.0, 400.0).unwrap();
        let h = synth_histogram(&curve, (1e-4, 1e-4), 2e10, &layout, &scale, 5).unwrap();
        let fit = mle_fit_g2(&h, FitWindow::Auto, Likelihood::default()).unwrap();
        assert_eq!(fit.window_ns, PEAK_WINDOW_NS);
        let fit = bootstrap_error(&fit, &h, 50, 4).unwrap();
        assert!(fit.g2_zero > 1.0);
        assert!((fit.g2_zero - 22.0).abs() < 2.0 * fit.a_err.unwrap() + 0.5, "{fit:?}");
    }

    #[test]
    fn bootstrap_error_shrinks_with_counts() {
        let scale = UnitScale::default();
        let curve = model_curve(0.6, 30.0, &scale);
        let layout = CoincidenceHistogram::zeros(2.0, 400.0).unwrap();
        let err_at = |t_acq: f64| {
            let h = synth_histogram(&curve, (1e-3, 1e-3), t_acq, &layout, &scale, 9).unwrap();
            let f = mle_fit_g2(&h, FitWindow::HalfWidthNs(30.0), Likelihood::default()).unwrap();
            bootstrap_error(&f, &h, 200, 1).unwrap().a_err.unwrap()
        };
        let ratio = err_at(2e8) / err_at(8e8);
        assert!((ratio - 2.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn empty_window_is_an_error() {
        let h = CoincidenceHistogram::zeros(2.0, 400.0).unwrap();
        assert!(matches!(
            mle_fit_g2(&h, FitWindow::HalfWidthNs(30.0), Likelihood::Multinomial),
            Err(Error::EmptyWindow { .. })
        ));
        assert!(mle_fit_g2(&h, FitWindow::HalfWidthNs(3.0), Likelihood::Multinomial).is_err());
        assert!(matches!(
            mle_fit_g2(&h, FitWindow::Auto, Likelihood::default()),
            Err(Error::InsufficientTail { .. })
        ));
    }

    #[test]
    fn timetags_match_direct_histogram_means() {
        let scale = UnitScale::default();
        let curve = model_curve(0.6, 30.0, &scale);
        let rates = (2e-4, 2e-4);
        let duration = 2e9;
        let tags = synth_timetags(&curve, rates, duration, &scale, 21).unwrap();
        let h = histogram_timetags(&tags, 2.0, 400.0, None).unwrap();
        let expected_flat = rates.0 * rates.1 * 2.0 * duration;
        let g = normalized_values(&h, 200.0, 100).unwrap();
        let tail_mean = h.counts()[..50].iter().sum::<u64>() as f64 / 50.0;
        assert_relative_eq!(tail_mean, expected_flat, max_relative = 0.05);
        // Central ±6 ns against the model.
        let half = h.half_bins();
        let center: f64 = g[half - 3..=half + 3].iter().sum::<f64>() / 7.0;
        let model: f64 = (-3..=3)
            .map(|k| 1.0 - 0.6 * (-(2.0 * k as f64).abs() / 30.0f64).exp())
            .sum::<f64>()
            / 7.0;
        assert!((center - model).abs() < 0.05, "{center} vs {model}");
        assert!(synth_timetags(&curve, rates, 0.0, &scale, 1).unwrap().is_empty());
    }

    #[test]
    fn timetag_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let scale = UnitScale::default();
        let flat = G2Curve::flat(TauGrid::linspace(5.0, 6).unwrap(), 1.0, "flat");
        let s = synth_timetags(&flat, (1e-3, 1e-3), 1e5, &scale, 4).unwrap();
        let p = dir.path().join("tags.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(TimeTagStream::read_csv(&p).unwrap(), s);
        let h = histogram_timetags(&s, 2.0, 50.0, None).unwrap();
        let p = dir.path().join("hist.csv");
        h.write_csv(&p).unwrap();
        assert_eq!(CoincidenceHistogram::read_csv(&p).unwrap().counts(), h.counts());
    }

    #[test]
    fn runs_are_binned_by_od() {
        let spec = OdBinSpec::standard(None);
        let h = CoincidenceHistogram::zeros(2.0, 10.0).unwrap();
        let mut h1 = h.clone();
        h1.record(0.0);
        let runs = vec![
            RunRecord {
                transmission: 1.0,
                histogram: h1.clone(),
            },
            RunRecord {
                transmission: (-5.13f64).exp(),
                histogram: h1.clone(),
            },
            RunRecord {
                transmission: (-5.2f64).exp(),
                histogram: h1.clone(),
            },
            RunRecord {
                transmission: 0.0,
                histogram: h1.clone(),
            },
        ];
        let b = bin_runs_by_od(&runs, &spec).unwrap();
        assert_eq!(b.assignments[0], Some(0));
        assert_eq!(b.assignments[1], b.assignments[2]);
        assert_eq!(b.bins[b.assignments[1].unwrap()].as_ref().unwrap().total(), 2);
        assert_eq!(b.overflow_runs, 1);
        assert_eq!(bin_runs_by_od(&runs, &spec).unwrap(), b);
    }

    #[test]
    fn saturation_model_limits() {
        assert_relative_eq!(saturated_transmission(0.0, 3.0), (-3.0f64).exp(), max_relative = 1e-12);
        assert!(saturated_transmission(1e6, 3.0) > 0.9999);
        let t = saturated_transmission(2.0, 5.0);
        assert!((t.ln() + 2.0 * (t - 1.0) + 5.0).abs() < 1e-12);
    }

    #[test]
    fn beta_fit_recovers_planted_value() {
        let sat: Vec<f64> = (0..15).map(|i| 0.05 * 10f64.powf(i as f64 * 2.6 / 14.0)).collect();
        let data = synth_saturation(0.0083, 5.0, &sat, 0.0, 1).unwrap();
        let fit = fit_beta_saturation(&data, 5.0).unwrap();
        assert_relative_eq!(fit.beta, 0.0083, max_relative = 1e-8);
        let noisy = synth_saturation(0.0083, 5.0, &sat, 0.03, 2).unwrap();
        let fit = fit_beta_saturation(&noisy, 5.0).unwrap();
        assert!((fit.beta - 0.0083).abs() < 3.0 * fit.beta_err);
    }

    #[test]
    fn beta_fit_rejects_degenerate_scans() {
        let low: Vec<f64> = (0..8).map(|i| 1e-3 * (1.0 + i as f64)).collect();
        let data = synth_saturation(0.0083, 5.0, &low, 0.01, 1).unwrap();
        assert!(matches!(fit_beta_saturation(&data, 5.0), Err(Error::Uninformative(_))));
        let few = synth_saturation(0.0083, 5.0, &[0.1, 1.0, 10.0], 0.01, 1).unwrap();
        assert!(matches!(fit_beta_saturation(&few, 5.0), Err(Error::Uninformative(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn scaling_counts_keeps_fit(scale_factor in 2u64..6, seed in 0u64..1000) {
            let scale = UnitScale::default();
            let curve = model_curve(0.5, 30.0, &scale);
            let layout = CoincidenceHistogram::zeros(2.0, 300.0).unwrap();
            let h = synth_histogram(&curve, (1e-3, 1e-3), 1e8, &layout, &scale, seed).unwrap();
            let a = mle_fit_g2(&h, FitWindow::HalfWidthNs(30.0), Likelihood::default()).unwrap();
            let b = mle_fit_g2(&h.scaled(scale_factor), FitWindow::HalfWidthNs(30.0), Likelihood::default()).unwrap();
            prop_assert!((a.a - b.a).abs() < 1e-5);
        }

        #[test]
        fn recorded_delays_land_in_their_bin(dt in -300.0f64..300.0, w in 0.5f64..5.0) {
            let mut h = CoincidenceHistogram::zeros(w, 400.0).unwrap();
            h.record(dt);
            let i = h.counts().iter().position(|c| *c == 1).unwrap();
            prop_assert!(dt >= h.tau_ns(i) - 0.5 * w - 1e-9 && dt < h.tau_ns(i) + 0.5 * w + 1e-9);
        }

        #[test]
        fn binning_is_deterministic(ts in proptest::collection::vec(1e-4f64..1.0, 1..30)) {
            let spec = OdBinSpec::standard(None);
            let h = CoincidenceHistogram::zeros(2.0, 10.0).unwrap();
            let runs: Vec<_> = ts.iter().map(|t| RunRecord { transmission: *t, histogram: h.clone() }).collect();
            let a = bin_runs_by_od(&runs, &spec).unwrap();
            prop_assert_eq!(&a.assignments, &bin_runs_by_od(&runs, &spec).unwrap().assignments);
            prop_assert_eq!(a.runs_per_bin.iter().sum::<usize>() + a.overflow_runs, runs.len());
        }
    }
}
