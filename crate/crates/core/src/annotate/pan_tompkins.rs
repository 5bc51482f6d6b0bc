//! QRS detection: band-pass, derivative, squaring, moving-window integration,
//! adaptive dual thresholds with search-back.

use crate::error::{Error, Result};

/// Integration window, seconds.
const MWI_SECONDS: f64 = 0.150;
/// Minimum spacing between accepted beats, seconds.
const REFRACTORY_SECONDS: f64 = 0.200;
/// Search-back triggers when the current RR gap exceeds this multiple of the
/// running RR average.
const SEARCHBACK_RR_FACTOR: f64 = 1.66;
/// Half-width of the final local-maximum refinement on the raw ECG, seconds.
const REFINE_SECONDS: f64 = 0.025;
/// How far back from an integrated-signal peak the underlying R-wave can sit
/// (filter group delay plus integration window), seconds.
const FIDUCIAL_LOOKBACK_SECONDS: f64 = 0.225;

/// Second-order IIR section in direct form I.
#[derive(Debug, Clone)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2], // a1, a2 with a0 normalized to 1
}

impl Biquad {
    /// RBJ cookbook low-pass, Q = 1/sqrt(2).
    fn lowpass(fc: f64, fs: f64) -> Biquad {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let alpha = w0.sin() / std::f64::consts::SQRT_2;
        let cosw = w0.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b: [
                (1.0 - cosw) / 2.0 / a0,
                (1.0 - cosw) / a0,
                (1.0 - cosw) / 2.0 / a0,
            ],
            a: [-2.0 * cosw / a0, (1.0 - alpha) / a0],
        }
    }

    /// RBJ cookbook high-pass, Q = 1/sqrt(2).
    fn highpass(fc: f64, fs: f64) -> Biquad {
        let w0 = 2.0 * std::f64::consts::PI * fc / fs;
        let alpha = w0.sin() / std::f64::consts::SQRT_2;
        let cosw = w0.cos();
        let a0 = 1.0 + alpha;
        Biquad {
            b: [
                (1.0 + cosw) / 2.0 / a0,
                -(1.0 + cosw) / a0,
                (1.0 + cosw) / 2.0 / a0,
            ],
            a: [-2.0 * cosw / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, xs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(xs.len());
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        for &x in xs {
            let y = self.b[0] * x + self.b[1] * x1 + self.b[2] * x2
                - self.a[0] * y1
                - self.a[1] * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            out.push(y);
        }
        out
    }
}

/// Band-pass 5-15 Hz as cascaded second-order low-pass and high-pass sections.
pub fn bandpass_5_15(xs: &[f64], fs: f64) -> Vec<f64> {
    Biquad::highpass(5.0, fs).run(&Biquad::lowpass(15.0, fs).run(xs))
}

/// Causal five-point derivative.
fn derivative(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let at = |i: isize| -> f64 {
        if i < 0 {
            xs[0]
        } else {
            xs[i as usize]
        }
    };
    (0..n)
        .map(|i| {
            let i = i as isize;
            (2.0 * at(i) + at(i - 1) - at(i - 3) - 2.0 * at(i - 4)) / 8.0
        })
        .collect()
}

/// Moving-window mean of the squared signal.
fn integrate(xs: &[f64], window: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        let sq = xs[i] * xs[i];
        sum += sq;
        if i >= window {
            sum -= xs[i - window] * xs[i - window];
        }
        out.push(sum / window as f64);
    }
    out
}

/// Indices of strict local maxima; plateaus resolve to their first sample.
fn local_maxima(xs: &[f64]) -> Vec<usize> {
    let n = xs.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if xs[i] > xs[i - 1] && xs[i] >= xs[i + 1] {
            peaks.push(i);
            // skip the plateau so a flat top yields one peak
            let mut j = i + 1;
            while j + 1 < n && xs[j] == xs[i] {
                j += 1;
            }
            i = j;
        } else {
            i += 1;
        }
    }
    peaks
}

struct ThresholdState {
    spki: f64,
    npki: f64,
}

impl ThresholdState {
    fn threshold1(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }

    fn threshold2(&self) -> f64 {
        0.5 * self.threshold1()
    }

    fn accept(&mut self, peak: f64) {
        self.spki = 0.125 * peak + 0.875 * self.spki;
    }

    fn accept_searchback(&mut self, peak: f64) {
        self.spki = 0.25 * peak + 0.75 * self.spki;
    }

    fn reject(&mut self, peak: f64) {
        self.npki = 0.125 * peak + 0.875 * self.npki;
    }
}

/// Detect R-wave sample indices in an ECG trace.
///
/// Runs at the native rate (at least 100 Hz) and needs at least two seconds
/// of signal. A zero-variance trace returns no peaks. Returned indices point
/// at the raw-ECG local maximum within 25 ms of each detection and are
/// strictly increasing with at least a 200 ms gap.
pub fn detect_r_peaks(ecg: &[f64], fs: f64) -> Result<Vec<usize>> {
    if fs < 100.0 {
        return Err(Error::Contract(format!(
            "R-peak detection needs fs >= 100 Hz, got {fs}"
        )));
    }
    if (ecg.len() as f64) < 2.0 * fs {
        return Err(Error::TooShort(format!(
            "need at least 2 s of ECG ({} samples at {fs} Hz), got {}",
            (2.0 * fs) as usize,
            ecg.len()
        )));
    }
    let mean = ecg.iter().sum::<f64>() / ecg.len() as f64;
    if ecg.iter().all(|&x| x == mean) {
        return Ok(Vec::new());
    }

    let filtered = bandpass_5_15(ecg, fs);
    let deriv = derivative(&filtered);
    let mwi_window = ((MWI_SECONDS * fs).round() as usize).max(1);
    let mwi = integrate(&deriv, mwi_window);

    let refractory = (REFRACTORY_SECONDS * fs).round() as usize;
    let candidates = local_maxima(&mwi);
    if candidates.is_empty() {
        return Ok(Vec::new());
    }

    // Learning phase: seed thresholds from the first two seconds.
    let learn = (2.0 * fs) as usize;
    let learn_max = mwi[..learn.min(mwi.len())]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let learn_mean = mwi[..learn.min(mwi.len())].iter().sum::<f64>() / learn.min(mwi.len()) as f64;
    let mut thr = ThresholdState {
        spki: 0.25 * learn_max,
        npki: 0.5 * learn_mean,
    };

    let mut accepted: Vec<usize> = Vec::new(); // MWI peak positions
    let mut rr_intervals: Vec<f64> = Vec::new();
    let mut rejected_since_last: Vec<usize> = Vec::new();

    for &cand in &candidates {
        let value = mwi[cand];
        let since_last = accepted.last().map(|&p| cand - p);
        let in_refractory = since_last.map_or(false, |d| d < refractory);

        if value > thr.threshold1() && !in_refractory {
            if let Some(&prev) = accepted.last() {
                push_rr(&mut rr_intervals, (cand - prev) as f64);
            }
            accepted.push(cand);
            thr.accept(value);
            rejected_since_last.clear();
            continue;
        }
        thr.reject(value);
        rejected_since_last.push(cand);

        // Search-back: a long gap means a beat was likely missed; take the
        // strongest skipped candidate above the lower threshold.
        if let (Some(&prev), false) = (accepted.last(), rr_intervals.is_empty()) {
            let rr_avg = rr_intervals.iter().sum::<f64>() / rr_intervals.len() as f64;
            if (cand - prev) as f64 > SEARCHBACK_RR_FACTOR * rr_avg {
                let pick = rejected_since_last
                    .iter()
                    .cloned()
                    .filter(|&i| i > prev + refractory && cand - i >= refractory)
                    .filter(|&i| mwi[i] > thr.threshold2())
                    .max_by(|&a, &b| mwi[a].partial_cmp(&mwi[b]).unwrap());
                if let Some(found) = pick {
                    push_rr(&mut rr_intervals, (found - prev) as f64);
                    accepted.push(found);
                    thr.accept_searchback(mwi[found]);
                    rejected_since_last.retain(|&i| i > found);
                }
            }
        }
    }

    // Map each integrated-signal peak back to the raw R-wave, then polish to
    // the local ECG maximum within +/-25 ms.
    let lookback = (FIDUCIAL_LOOKBACK_SECONDS * fs).round() as usize;
    let refine = (REFINE_SECONDS * fs).round() as usize;
    let mut peaks: Vec<usize> = accepted
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(lookback);
            let r0 = argmax_range(ecg, lo, p + 1);
            let lo = r0.saturating_sub(refine);
            let hi = (r0 + refine + 1).min(ecg.len());
            argmax_range(ecg, lo, hi)
        })
        .collect();

    peaks.sort_unstable();
    peaks.dedup();
    // Re-apply the refractory gap after refinement collapses near-duplicates.
    let mut out: Vec<usize> = Vec::with_capacity(peaks.len());
    for p in peaks {
        match out.last() {
            Some(&prev) if p - prev < refractory => {
                if ecg[p] > ecg[prev] {
                    *out.last_mut().unwrap() = p;
                }
            }
            _ => out.push(p),
        }
    }
    Ok(out)
}

fn push_rr(rr: &mut Vec<f64>, interval: f64) {
    rr.push(interval);
    if rr.len() > 8 {
        rr.remove(0);
    }
}

/// Argmax over `xs[lo..hi]`, ties to the earliest index.
fn argmax_range(xs: &[f64], lo: usize, hi: usize) -> usize {
    let mut best = lo;
    for i in lo..hi.min(xs.len()) {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}
