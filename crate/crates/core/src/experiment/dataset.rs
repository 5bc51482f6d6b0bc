//! Labeled, windowed datasets: the unit experiments train and evaluate on.

use std::collections::BTreeMap;
use std::path::Path;

use crate::annotate::{label_record, Annotation, LabelingConfig};
use crate::detect::{compute_metrics, detect_boxes, match_detections, Metrics, MetricsReport};
use crate::error::{Error, Result};
use crate::io;
use crate::neural::{Tensor3, UNet};
use crate::parallel::map_collect;
use crate::record::{ChannelSelection, Record};
use crate::signal::{make_windows, WindowConfig};

/// One normalized window paired with its segmentation target and the
/// ground-truth AO indices that fall inside it (window-relative).
#[derive(Debug, Clone)]
pub struct LabeledWindow {
    pub start_index: usize,
    /// `channels x len`, values in [0, 1].
    pub samples: Vec<Vec<f64>>,
    pub target: Vec<u8>,
    pub ao: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SubjectData {
    pub subject_id: String,
    /// Chronological (by window start).
    pub windows: Vec<LabeledWindow>,
}

/// All subjects of one dataset, sorted by subject id.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub dataset_id: String,
    pub channel_mode: ChannelSelection,
    pub subjects: Vec<SubjectData>,
}

impl Dataset {
    pub fn subject_ids(&self) -> Vec<String> {
        self.subjects.iter().map(|s| s.subject_id.clone()).collect()
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectData> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    pub fn window_count(&self) -> usize {
        self.subjects.iter().map(|s| s.windows.len()).sum()
    }

    /// Label and window a set of records. Records are processed in parallel;
    /// output order follows subject id.
    pub fn from_records(
        dataset_id: &str,
        records: &[Record],
        channel_mode: ChannelSelection,
        window_cfg: &WindowConfig,
        labeling_cfg: &LabelingConfig,
    ) -> Result<Self> {
        let labeled: Vec<Result<SubjectData>> = map_collect(records, |record| {
            let annotation = label_record(record, labeling_cfg)?;
            subject_from_record(record, &annotation, channel_mode, window_cfg)
        });
        let mut subjects = labeled.into_iter().collect::<Result<Vec<_>>>()?;
        subjects.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
        Ok(Dataset {
            dataset_id: dataset_id.to_string(),
            channel_mode,
            subjects,
        })
    }

    /// Load a dataset directory: every `*.json` sidecar with a `.csv` or
    /// `.f32` data file next to it becomes one record.
    pub fn load_dir(
        dir: &Path,
        dataset_id: &str,
        channel_mode: ChannelSelection,
        window_cfg: &WindowConfig,
        labeling_cfg: &LabelingConfig,
    ) -> Result<Self> {
        let records = load_records_dir(dir)?;
        if records.is_empty() {
            return Err(Error::Config(format!(
                "dataset directory {} holds no records",
                dir.display()
            )));
        }
        Self::from_records(dataset_id, &records, channel_mode, window_cfg, labeling_cfg)
    }
}

/// All records in a directory, sorted by subject id.
pub fn load_records_dir(dir: &Path) -> Result<Vec<Record>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("json"))
        .filter(|p| !p.to_string_lossy().ends_with(".truth.json"))
        .collect();
    paths.sort();
    let mut records = Vec::new();
    for sidecar in paths {
        let csv = sidecar.with_extension("csv");
        let blob = sidecar.with_extension("f32");
        let data = if csv.exists() {
            csv
        } else if blob.exists() {
            blob
        } else {
            continue;
        };
        records.push(io::load_record(&data)?);
    }
    records.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(records)
}

/// Window one already-annotated record.
pub fn subject_from_record(
    record: &Record,
    annotation: &Annotation,
    channel_mode: ChannelSelection,
    window_cfg: &WindowConfig,
) -> Result<SubjectData> {
    let windows = make_windows(record, channel_mode, window_cfg)?;
    let len = window_cfg.window_len();
    let labeled = windows
        .into_iter()
        .map(|w| {
            let start = w.start_index;
            let mut target = vec![0u8; len];
            for (i, t) in target.iter_mut().enumerate() {
                if let Some(&m) = annotation.mask.get(start + i) {
                    *t = m;
                }
            }
            let ao = annotation
                .ao_indices
                .iter()
                .filter(|&&a| a >= start && a < start + len)
                .map(|&a| a - start)
                .collect();
            LabeledWindow {
                start_index: start,
                samples: w.samples,
                target,
                ao,
            }
        })
        .collect();
    Ok(SubjectData {
        subject_id: record.subject_id.clone(),
        windows: labeled,
    })
}

/// Stack windows into a `B x C x L` input tensor.
pub fn batch_inputs(windows: &[&LabeledWindow]) -> Result<Tensor3<f32>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let (channels, len) = (first.samples.len(), first.samples[0].len());
    let mut t = Tensor3::zeros(windows.len(), channels, len);
    for (b, w) in windows.iter().enumerate() {
        if w.samples.len() != channels || w.samples[0].len() != len {
            return Err(Error::Shape("ragged window batch".into()));
        }
        for (c, channel) in w.samples.iter().enumerate() {
            for (l, &x) in channel.iter().enumerate() {
                *t.at_mut(b, c, l) = x as f32;
            }
        }
    }
    Ok(t)
}

/// Stack targets into a `B x 1 x L` tensor of 0/1 floats.
pub fn batch_targets(windows: &[&LabeledWindow]) -> Result<Tensor3<f32>> {
    let first = windows
        .first()
        .ok_or_else(|| Error::Contract("empty batch".into()))?;
    let len = first.target.len();
    let mut t = Tensor3::zeros(windows.len(), 1, len);
    for (b, w) in windows.iter().enumerate() {
        for (l, &m) in w.target.iter().enumerate() {
            *t.at_mut(b, 0, l) = m as f32;
        }
    }
    Ok(t)
}

/// Inference probabilities for each window, batched.
pub fn predict_probs(
    model: &UNet<f32>,
    windows: &[&LabeledWindow],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let x = batch_inputs(chunk)?;
        let probs = model.forward(&x)?;
        for b in 0..chunk.len() {
            out.push(probs.row(b, 0).iter().map(|&p| p as f64).collect());
        }
    }
    Ok(out)
}

/// Pooled detection counts for a set of windows at a fixed threshold.
pub fn evaluate_windows(
    model: &UNet<f32>,
    windows: &[&LabeledWindow],
    tau: f64,
    min_box_len: usize,
) -> Result<(usize, usize, usize)> {
    let probs = predict_probs(model, windows, 64)?;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, w) in probs.iter().zip(windows) {
        let boxes: Vec<(usize, usize)> = detect_boxes(p, tau, min_box_len)
            .iter()
            .map(|b| (b.start, b.end))
            .collect();
        let (t, f, n) = match_detections(&boxes, &w.ao)?;
        tp += t;
        fp += f;
        fn_ += n;
    }
    Ok((tp, fp, fn_))
}

/// Per-subject metrics for every listed subject, mean over users on top.
pub fn evaluate_subjects(
    model: &UNet<f32>,
    subjects: &[&SubjectData],
    tau: f64,
    min_box_len: usize,
) -> Result<MetricsReport> {
    let per_user: Vec<(String, Metrics)> = subjects
        .iter()
        .map(|s| {
            let windows: Vec<&LabeledWindow> = s.windows.iter().collect();
            let (tp, fp, fn_) = evaluate_windows(model, &windows, tau, min_box_len)?;
            Ok((s.subject_id.clone(), compute_metrics(tp, fp, fn_)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::from_per_user(
        per_user.into_iter().collect::<BTreeMap<_, _>>(),
    ))
}

/// Validation pairs (probabilities, AO) for threshold selection.
pub fn threshold_pairs(
    model: &UNet<f32>,
    windows: &[&LabeledWindow],
) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
    let probs = predict_probs(model, windows, 64)?;
    Ok(probs
        .into_iter()
        .zip(windows)
        .map(|(p, w)| (p, w.ao.clone()))
        .collect())
}
