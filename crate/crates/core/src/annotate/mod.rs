//! Ground-truth labeling from a synchronized ECG.
//!
//! R-waves and AO points are located at the record's native rate, AO indices
//! are then mapped to the target rate, and binary systolic-complex masks are
//! built there. The ECG is used only in this step; training and evaluation
//! never see it.

mod pan_tompkins;

pub use pan_tompkins::{bandpass_5_15, detect_r_peaks};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::record::Record;
use crate::signal::TARGET_RATE_HZ;

/// Labeling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelingConfig {
    /// AO search window after each R-wave, milliseconds.
    pub ao_search_ms: f64,
    /// Total bounding-box width around each AO point, milliseconds.
    pub box_ms: f64,
    /// Rate the mask is built at.
    pub labeling_rate_hz: f64,
}

impl Default for LabelingConfig {
    fn default() -> Self {
        LabelingConfig {
            ao_search_ms: 90.0,
            box_ms: 25.0,
            labeling_rate_hz: TARGET_RATE_HZ,
        }
    }
}

/// AO fiducial indices plus the aligned binary mask for one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    /// Strictly increasing AO sample indices at the mask rate.
    pub ao_indices: Vec<usize>,
    /// One flag per sample of the (resampled) trace.
    pub mask: Vec<u8>,
    /// Half-width of each box: boxes span `ao - h ..= ao + h` clipped to bounds.
    pub box_halfwidth_samples: usize,
}

impl Annotation {
    /// Number of contiguous 1-runs in the mask; merging keeps this at or
    /// below the AO count.
    pub fn run_count(&self) -> usize {
        let mut runs = 0;
        let mut prev = 0u8;
        for &m in &self.mask {
            if m == 1 && prev == 0 {
                runs += 1;
            }
            prev = m;
        }
        runs
    }
}

/// Locate AO points: for each R-peak, the argmax of `scg_z` in the window
/// `(r, r + round(0.001 * ao_search_ms * fs)]`, clipped to the signal end.
/// Ties break toward the earlier index; R-peaks whose window is empty after
/// clipping are skipped.
pub fn locate_ao(scg_z: &[f64], r_peaks: &[usize], fs: f64, cfg: &LabelingConfig) -> Vec<usize> {
    let span = (cfg.ao_search_ms / 1000.0 * fs).round() as usize;
    let mut out = Vec::with_capacity(r_peaks.len());
    for &r in r_peaks {
        let lo = r + 1;
        let hi = (r + span + 1).min(scg_z.len());
        if lo >= hi {
            continue;
        }
        let mut best = lo;
        for i in lo..hi {
            if scg_z[i] > scg_z[best] {
                best = i;
            }
        }
        out.push(best);
    }
    out
}

/// Box width in samples: `round(box_ms * fs / 1000)` pushed up to the nearest
/// odd integer and floored at 3, so boxes stay centered and trainable even at
/// 64 Hz where 25 ms spans under two samples.
pub fn box_width_samples(box_ms: f64, fs: f64) -> usize {
    let raw = (box_ms * fs / 1000.0).round() as usize;
    let odd = if raw % 2 == 0 { raw + 1 } else { raw };
    odd.max(3)
}

/// Build the binary mask for a trace: ones on each AO's box, overlaps merged.
pub fn build_mask(ao_indices: &[usize], trace_len: usize, fs: f64, box_ms: f64) -> Vec<u8> {
    let w = box_width_samples(box_ms, fs);
    let half = (w - 1) / 2;
    let mut mask = vec![0u8; trace_len];
    for &ao in ao_indices {
        if ao >= trace_len {
            continue;
        }
        let lo = ao.saturating_sub(half);
        let hi = (ao + half + 1).min(trace_len);
        for m in &mut mask[lo..hi] {
            *m = 1;
        }
    }
    mask
}

/// Map sample indices between rates: `i -> round(i * to_hz / from_hz)`,
/// collapsing duplicates introduced by rounding.
pub fn map_indices(indices: &[usize], from_hz: f64, to_hz: f64) -> Vec<usize> {
    let mut out: Vec<usize> = indices
        .iter()
        .map(|&i| (i as f64 * to_hz / from_hz).round() as usize)
        .collect();
    out.dedup();
    out
}

/// Label one record end to end: R-peaks and AO at the native rate, AO mapped
/// to `cfg.labeling_rate_hz`, mask built there. Requires an ECG channel.
pub fn label_record(record: &Record, cfg: &LabelingConfig) -> Result<Annotation> {
    let ecg = record
        .ecg
        .as_ref()
        .ok_or_else(|| Error::Schema(format!("record {} has no ECG to label from", record.subject_id)))?;
    let native = record.sample_rate_hz;
    let r_peaks = detect_r_peaks(ecg, native)?;
    let ao_native = locate_ao(record.acc_z()?, &r_peaks, native, cfg);
    annotation_from_native(&ao_native, record.len(), native, cfg)
}

/// Build the target-rate annotation from native-rate AO indices.
pub fn annotation_from_native(
    ao_native: &[usize],
    trace_len_native: usize,
    native_rate_hz: f64,
    cfg: &LabelingConfig,
) -> Result<Annotation> {
    let rate = cfg.labeling_rate_hz;
    let len_at_rate = (trace_len_native as f64 * rate / native_rate_hz).round() as usize;
    let mut ao = map_indices(ao_native, native_rate_hz, rate);
    ao.retain(|&i| i < len_at_rate);
    let mask = build_mask(&ao, len_at_rate, rate, cfg.box_ms);
    let w = box_width_samples(cfg.box_ms, rate);
    Ok(Annotation {
        ao_indices: ao,
        mask,
        box_halfwidth_samples: (w - 1) / 2,
    })
}

/// On-disk annotation: everything needed to regenerate the mask bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub subject_id: String,
    /// Native rate the labels were computed at.
    pub labeling_rate_hz: f64,
    pub ao_indices_native: Vec<usize>,
    pub ao_indices_64hz: Vec<usize>,
    /// Full odd box width at the mask rate.
    pub box_width_samples: usize,
    /// Mask length at the target rate.
    pub trace_len_64hz: usize,
}

impl AnnotationFile {
    pub fn from_labeling(
        subject_id: &str,
        native_rate_hz: f64,
        ao_native: &[usize],
        annotation: &Annotation,
    ) -> Self {
        AnnotationFile {
            subject_id: subject_id.to_string(),
            labeling_rate_hz: native_rate_hz,
            ao_indices_native: ao_native.to_vec(),
            ao_indices_64hz: annotation.ao_indices.clone(),
            box_width_samples: 2 * annotation.box_halfwidth_samples + 1,
            trace_len_64hz: annotation.mask.len(),
        }
    }

    /// Rebuild the target-rate mask exactly as it was generated.
    pub fn regenerate_mask(&self) -> Vec<u8> {
        let half = (self.box_width_samples - 1) / 2;
        let mut mask = vec![0u8; self.trace_len_64hz];
        for &ao in &self.ao_indices_64hz {
            if ao >= self.trace_len_64hz {
                continue;
            }
            let lo = ao.saturating_sub(half);
            let hi = (ao + half + 1).min(self.trace_len_64hz);
            for m in &mut mask[lo..hi] {
                *m = 1;
            }
        }
        mask
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}
