//! Resampling, windowing and per-window normalization.

use crate::error::{Error, Result};
use crate::record::{ChannelSelection, Record};

/// Rate every dataset is brought to before training, the minimum across datasets.
pub const TARGET_RATE_HZ: f64 = 64.0;

/// Window length in seconds; each window spans several heartbeats.
pub const WINDOW_SECONDS: f64 = 5.0;

/// One fixed-length, normalized, multi-channel window.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `channels x len` values, each in `[0, 1]`, row-major per channel.
    pub samples: Vec<Vec<f64>>,
    /// Sample offset of this window in the resampled (target-rate) record.
    pub start_index: usize,
    pub subject_id: String,
}

impl Window {
    pub fn channel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn len(&self) -> usize {
        self.samples.first().map_or(0, |c| c.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Windowing pipeline settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig {
    pub window_seconds: f64,
    /// Defaults to the window length (non-overlapping partition); smaller
    /// strides overlap windows for augmentation.
    pub stride_seconds: f64,
    pub target_rate_hz: f64,
    /// Normalize each native-rate window before resampling it (the published
    /// processing order). Disable to resample the whole trace first.
    pub normalize_then_resample: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            window_seconds: WINDOW_SECONDS,
            stride_seconds: WINDOW_SECONDS,
            target_rate_hz: TARGET_RATE_HZ,
            normalize_then_resample: true,
        }
    }
}

impl WindowConfig {
    /// Window length in samples at the target rate.
    pub fn window_len(&self) -> usize {
        (self.window_seconds * self.target_rate_hz).round() as usize
    }
}

/// Linearly interpolate `samples` from `from_hz` onto `to_hz`.
///
/// Output length is `round(len * to_hz / from_hz)`; equal rates return the
/// input unchanged.
pub fn resample(samples: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if !(from_hz > 0.0) || !(to_hz > 0.0) {
        return Err(Error::Contract(format!(
            "resample rates must be positive, got {from_hz} -> {to_hz}"
        )));
    }
    if from_hz == to_hz {
        return Ok(samples.to_vec());
    }
    let out_len = (samples.len() as f64 * to_hz / from_hz).round() as usize;
    resample_to_len(samples, from_hz, to_hz, out_len)
}

/// Same as [`resample`] but with an explicit output length, so callers that
/// already know the target sample count avoid per-window rounding drift.
pub fn resample_to_len(
    samples: &[f64],
    from_hz: f64,
    to_hz: f64,
    out_len: usize,
) -> Result<Vec<f64>> {
    if samples.len() < 2 {
        return Err(Error::TooShort(format!(
            "resample needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    let last = samples.len() - 1;
    let ratio = from_hz / to_hz;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        // Sample j of the output sits at time j/to_hz = (j*ratio)/from_hz.
        let pos = j as f64 * ratio;
        if pos >= last as f64 {
            out.push(samples[last]);
            continue;
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        out.push(samples[i] + (samples[i + 1] - samples[i]) * frac);
    }
    Ok(out)
}

/// Cut `record` into fixed-length windows of raw (unnormalized) channel data.
///
/// Returns `(start_index, channels x len matrix)` pairs ordered by start.
/// A record shorter than one window yields an empty list. The trailing
/// remainder shorter than one window is dropped.
pub fn cut_windows(
    record: &Record,
    window_seconds: f64,
    stride_seconds: f64,
) -> Result<Vec<(usize, Vec<Vec<f64>>)>> {
    if !(window_seconds > 0.0) || !(stride_seconds > 0.0) {
        return Err(Error::Contract(
            "window and stride must be positive".into(),
        ));
    }
    let win = (window_seconds * record.sample_rate_hz).round() as usize;
    let stride = (stride_seconds * record.sample_rate_hz).round() as usize;
    if win == 0 || stride == 0 {
        return Err(Error::Contract(
            "window and stride must span at least one sample".into(),
        ));
    }
    let len = record.len();
    let mut out = Vec::new();
    let mut start = 0usize;
    while start + win <= len {
        let matrix = record
            .channels
            .iter()
            .map(|(_, samples)| samples[start..start + win].to_vec())
            .collect();
        out.push((start, matrix));
        start += stride;
    }
    Ok(out)
}

/// Min-max normalize each channel of a window into `[0, 1]` in place.
/// A constant channel maps to all zeros.
pub fn minmax_normalize(window: &mut [Vec<f64>]) {
    for channel in window.iter_mut() {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &x in channel.iter() {
            min = min.min(x);
            max = max.max(x);
        }
        let span = max - min;
        if span > 0.0 {
            for x in channel.iter_mut() {
                *x = (*x - min) / span;
            }
        } else {
            for x in channel.iter_mut() {
                *x = 0.0;
            }
        }
    }
}

/// Run the full windowing pipeline on one record for the given channel mode.
///
/// Order follows `cfg.normalize_then_resample`: either cut at the native rate,
/// normalize, then resample each window to the target rate; or resample the
/// whole record first, then cut and normalize. Every output window is
/// `selection.channel_count() x cfg.window_len()` with values in `[0, 1]`.
pub fn make_windows(
    record: &Record,
    selection: ChannelSelection,
    cfg: &WindowConfig,
) -> Result<Vec<Window>> {
    let selected = selection.select(record)?;
    let names: Vec<String> = selection.channel_names().iter().map(|s| s.to_string()).collect();
    let target_len = cfg.window_len();

    let sub = Record::new(
        record.subject_id.clone(),
        record.dataset_id.clone(),
        record.sample_rate_hz,
        names
            .iter()
            .cloned()
            .zip(selected.iter().map(|s| s.to_vec()))
            .collect(),
        None,
    )?;

    let mut windows = Vec::new();
    if cfg.normalize_then_resample {
        let native_rate = sub.sample_rate_hz;
        for (start_native, mut matrix) in
            cut_windows(&sub, cfg.window_seconds, cfg.stride_seconds)?
        {
            minmax_normalize(&mut matrix);
            let samples = if native_rate == cfg.target_rate_hz {
                matrix
            } else {
                matrix
                    .iter()
                    .map(|ch| resample_to_len(ch, native_rate, cfg.target_rate_hz, target_len))
                    .collect::<Result<Vec<_>>>()?
            };
            let start_index =
                (start_native as f64 * cfg.target_rate_hz / native_rate).round() as usize;
            windows.push(Window {
                samples,
                start_index,
                subject_id: record.subject_id.clone(),
            });
        }
    } else {
        let resampled = if sub.sample_rate_hz == cfg.target_rate_hz {
            sub
        } else {
            let channels = sub
                .channels
                .iter()
                .map(|(name, samples)| {
                    resample(samples, record.sample_rate_hz, cfg.target_rate_hz)
                        .map(|s| (name.clone(), s))
                })
                .collect::<Result<Vec<_>>>()?;
            Record::new(
                record.subject_id.clone(),
                record.dataset_id.clone(),
                cfg.target_rate_hz,
                channels,
                None,
            )?
        };
        for (start_index, mut matrix) in
            cut_windows(&resampled, cfg.window_seconds, cfg.stride_seconds)?
        {
            minmax_normalize(&mut matrix);
            windows.push(Window {
                samples: matrix,
                start_index,
                subject_id: record.subject_id.clone(),
            });
        }
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record_64hz(len: usize) -> Record {
        let samples: Vec<f64> = (0..len).map(|i| (i as f64 * 0.1).sin()).collect();
        Record::new(
            "s0",
            "unit",
            64.0,
            vec![("acc_z".to_string(), samples)],
            None,
        )
        .unwrap()
    }

    #[test]
    fn resample_identity_when_rates_equal() {
        let xs = vec![1.0, -2.0, 3.5];
        assert_eq!(resample(&xs, 64.0, 64.0).unwrap(), xs);
    }

    #[test]
    fn resample_rejects_short_input() {
        assert!(matches!(
            resample(&[1.0], 100.0, 64.0),
            Err(Error::TooShort(_))
        ));
    }

    #[test]
    fn resample_sine_matches_analytic_oracle() {
        // 1 s of sin(2*pi*2t) at 5000 Hz down to 64 Hz.
        let from = 5000.0;
        let xs: Vec<f64> = (0..5000)
            .map(|i| (2.0 * std::f64::consts::PI * 2.0 * i as f64 / from).sin())
            .collect();
        let out = resample(&xs, from, 64.0).unwrap();
        assert_eq!(out.len(), 64);
        let max_dev = out
            .iter()
            .enumerate()
            .map(|(j, &y)| {
                let t = j as f64 / 64.0;
                (y - (2.0 * std::f64::consts::PI * 2.0 * t).sin()).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_dev < 1e-3, "max deviation {max_dev}");
    }

    #[test]
    fn resample_constant_stays_constant() {
        let xs = vec![4.2; 300];
        let out = resample(&xs, 300.0, 64.0).unwrap();
        assert_eq!(out.len(), 64);
        assert!(out.iter().all(|&x| (x - 4.2).abs() < 1e-12));
    }

    #[test]
    fn windows_non_overlapping_default() {
        let r = record_64hz(640);
        let wins = cut_windows(&r, 5.0, 5.0).unwrap();
        assert_eq!(wins.len(), 2);
        assert_eq!(wins[0].0, 0);
        assert_eq!(wins[1].0, 320);
    }

    #[test]
    fn windows_drop_trailing_remainder() {
        let r = record_64hz(639);
        let wins = cut_windows(&r, 5.0, 5.0).unwrap();
        assert_eq!(wins.len(), 1);
        assert_eq!(wins[0].0, 0);
    }

    #[test]
    fn windows_half_stride_starts() {
        let r = record_64hz(640);
        let wins = cut_windows(&r, 5.0, 2.5).unwrap();
        let starts: Vec<usize> = wins.iter().map(|(s, _)| *s).collect();
        assert_eq!(starts, vec![0, 160, 320]);
    }

    #[test]
    fn too_short_record_yields_no_windows() {
        let r = record_64hz(100);
        assert!(cut_windows(&r, 5.0, 5.0).unwrap().is_empty());
    }

    #[test]
    fn normalize_basic_and_constant() {
        let mut w = vec![vec![2.0, 4.0, 6.0], vec![7.0, 7.0, 7.0]];
        minmax_normalize(&mut w);
        assert_eq!(w[0], vec![0.0, 0.5, 1.0]);
        assert_eq!(w[1], vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn make_windows_shape_and_range() {
        let r = {
            let len = 5 * 500 * 3; // 15 s at 500 Hz
            let samples: Vec<f64> = (0..len).map(|i| (i as f64 * 0.01).sin() * 3.0).collect();
            Record::new(
                "s0",
                "unit",
                500.0,
                vec![("acc_z".to_string(), samples)],
                None,
            )
            .unwrap()
        };
        for order in [true, false] {
            let cfg = WindowConfig {
                normalize_then_resample: order,
                ..WindowConfig::default()
            };
            let wins = make_windows(&r, ChannelSelection::SingleZ, &cfg).unwrap();
            assert_eq!(wins.len(), 3);
            for (k, w) in wins.iter().enumerate() {
                assert_eq!(w.channel_count(), 1);
                assert_eq!(w.len(), 320);
                assert_eq!(w.start_index, 320 * k);
                assert!(w.samples[0].iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    proptest! {
        #[test]
        fn normalize_idempotent_and_order_preserving(
            xs in proptest::collection::vec(-1e3f64..1e3, 4..64)
        ) {
            let mut w = vec![xs.clone()];
            minmax_normalize(&mut w);
            let first = w[0].clone();
            let spread = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - xs.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 0.0 {
                prop_assert!((first.iter().cloned().fold(f64::INFINITY, f64::min)).abs() < 1e-12);
                prop_assert!((first.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - 1.0).abs() < 1e-12);
                let argmax = |v: &[f64]| {
                    v.iter().enumerate().fold((0usize, f64::NEG_INFINITY), |acc, (i, &x)| {
                        if x > acc.1 { (i, x) } else { acc }
                    }).0
                };
                let argmin = |v: &[f64]| {
                    v.iter().enumerate().fold((0usize, f64::INFINITY), |acc, (i, &x)| {
                        if x < acc.1 { (i, x) } else { acc }
                    }).0
                };
                prop_assert_eq!(argmax(&xs), argmax(&first));
                prop_assert_eq!(argmin(&xs), argmin(&first));
            }
            minmax_normalize(&mut w);
            for (a, b) in w[0].iter().zip(first.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn resample_duration_error_bounded(
            len in 2usize..4000,
            from in 20.0f64..6000.0,
            to in 20.0f64..6000.0,
        ) {
            let xs = vec![0.0; len];
            let out = resample(&xs, from, to).unwrap();
            let err = (out.len() as f64 / to - len as f64 / from).abs();
            prop_assert!(err <= 1.0 / to + 1e-9, "duration error {err}");
        }
    }
}
