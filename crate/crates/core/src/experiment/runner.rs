//! Experiment orchestration: dataset registry, protocol dispatch, run
//! directory layout and the deterministic summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annotate::LabelingConfig;
use crate::detect::{default_tau_grid, select_threshold, Metrics, MetricsReport};
use crate::error::{Error, Result};
use crate::neural::{save_checkpoint, UNet};
use crate::parallel::map_collect;
use crate::record::ChannelSelection;
use crate::signal::WindowConfig;

use super::dataset::{evaluate_subjects, threshold_pairs, Dataset, LabeledWindow, SubjectData};
use super::folds::loso_folds;
use super::spec::{ExperimentSpec, Protocol};
use super::train::{fine_tune, personalize, pool_windows, train_model, TrainHistory};

/// Resolves dataset ids to directories under one root.
#[derive(Debug, Clone)]
pub struct DatasetStore {
    pub root: PathBuf,
    pub window_cfg: WindowConfig,
    pub labeling_cfg: LabelingConfig,
}

impl DatasetStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DatasetStore {
            root: root.into(),
            window_cfg: WindowConfig::default(),
            labeling_cfg: LabelingConfig::default(),
        }
    }

    pub fn load(&self, dataset_id: &str, channel_mode: ChannelSelection) -> Result<Dataset> {
        let dir = self.root.join(dataset_id);
        if !dir.is_dir() {
            return Err(Error::Config(format!(
                "dataset {dataset_id:?} is not registered under {}",
                self.root.display()
            )));
        }
        Dataset::load_dir(&dir, dataset_id, channel_mode, &self.window_cfg, &self.labeling_cfg)
    }
}

/// Deterministic run summary written as `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_hash: String,
    pub seed: u64,
    pub protocol: String,
    pub train_datasets: Vec<String>,
    pub test_dataset: String,
    pub channel_mode: String,
    /// Selected threshold per fold / model / user.
    pub tau: BTreeMap<String, f64>,
    pub per_user: BTreeMap<String, Metrics>,
    pub aggregate: Metrics,
    /// Unadapted-model scores on the same evaluation data, where the
    /// protocol adapts (fine_tune / personalize).
    pub baseline_per_user: Option<BTreeMap<String, Metrics>>,
    pub baseline_aggregate: Option<Metrics>,
    pub checkpoints: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub summary: Summary,
}

struct FoldArtifacts {
    name: String,
    tau: f64,
    history: TrainHistory,
    report: MetricsReport,
    baseline: Option<MetricsReport>,
    checkpoint: PathBuf,
}

/// Execute a spec end to end and write `runs_root/<config-hash>/...`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    store: &DatasetStore,
    runs_root: &Path,
) -> Result<RunOutput> {
    spec.validate()?;
    let hash = spec.config_hash();
    let run_dir = runs_root.join(&hash);
    std::fs::create_dir_all(&run_dir)?;
    std::fs::write(run_dir.join("spec.toml"), spec.to_toml())?;

    let folds = match spec.experiment.protocol {
        Protocol::Loso => run_loso(spec, store, &run_dir)?,
        Protocol::CrossDataset => run_cross(spec, store, &run_dir)?,
        Protocol::FineTune => run_fine_tune(spec, store, &run_dir)?,
        Protocol::Personalize => run_personalize(spec, store, &run_dir)?,
    };

    let mut tau = BTreeMap::new();
    let mut per_user = BTreeMap::new();
    let mut checkpoints = BTreeMap::new();
    let mut baseline_per_user: BTreeMap<String, Metrics> = BTreeMap::new();
    let mut any_baseline = false;
    for fold in &folds {
        tau.insert(fold.name.clone(), fold.tau);
        checkpoints.insert(
            fold.name.clone(),
            fold.checkpoint
                .strip_prefix(&run_dir)
                .unwrap_or(&fold.checkpoint)
                .to_string_lossy()
                .into_owned(),
        );
        for (user, m) in &fold.report.per_user {
            per_user.insert(user.clone(), *m);
        }
        if let Some(base) = &fold.baseline {
            any_baseline = true;
            for (user, m) in &base.per_user {
                baseline_per_user.insert(user.clone(), *m);
            }
        }
    }
    let aggregate = MetricsReport::from_per_user(per_user.clone()).aggregate;
    let baseline_aggregate = if any_baseline {
        Some(MetricsReport::from_per_user(baseline_per_user.clone()).aggregate)
    } else {
        None
    };

    let summary = Summary {
        config_hash: hash,
        seed: spec.experiment.seed,
        protocol: spec.experiment.protocol.to_string(),
        train_datasets: spec.experiment.train_datasets.clone(),
        test_dataset: spec.experiment.test_dataset.clone(),
        channel_mode: spec.experiment.channel_mode.to_string(),
        tau,
        per_user,
        aggregate,
        baseline_per_user: if any_baseline {
            Some(baseline_per_user)
        } else {
            None
        },
        baseline_aggregate,
        checkpoints,
    };
    let mut json = serde_json::to_string_pretty(&summary)?;
    json.push('\n');
    std::fs::write(run_dir.join("summary.json"), json)?;
    Ok(RunOutput { run_dir, summary })
}

fn fold_seed(base: u64, k: usize) -> u64 {
    base ^ (k as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn write_fold(dir: &Path, artifacts: &FoldArtifacts) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("history.csv"), artifacts.history.to_csv())?;
    std::fs::write(dir.join("metrics.csv"), artifacts.report.to_csv())?;
    Ok(())
}

fn subjects_by_ids<'a>(dataset: &'a Dataset, ids: &[String]) -> Vec<&'a SubjectData> {
    ids.iter().filter_map(|id| dataset.subject(id)).collect()
}

fn run_loso(
    spec: &ExperimentSpec,
    store: &DatasetStore,
    run_dir: &Path,
) -> Result<Vec<FoldArtifacts>> {
    let dataset = store.load(&spec.experiment.test_dataset, spec.experiment.channel_mode)?;
    let folds = loso_folds(&dataset.subject_ids(), spec.experiment.seed)?;

    let results: Vec<Result<FoldArtifacts>> =
        map_collect(&folds.iter().enumerate().collect::<Vec<_>>(), |(k, fold)| {
            let seed = fold_seed(spec.experiment.seed, *k);
            let train = pool_windows(&subjects_by_ids(&dataset, &fold.train));
            let val = pool_windows(&subjects_by_ids(&dataset, &fold.val));
            let mut model = UNet::<f32>::new(spec.unet_config(), seed)?;
            let history = train_model(&mut model, &train, &val, &spec.training, seed)?;
            let tau = select_threshold(
                &threshold_pairs(&model, &val)?,
                &default_tau_grid(),
                spec.detect.min_box_len,
            )?;
            let test = dataset
                .subject(&fold.test)
                .ok_or_else(|| Error::Config(format!("missing subject {}", fold.test)))?;
            let report = evaluate_subjects(&model, &[test], tau, spec.detect.min_box_len)?;

            let name = format!("fold-{k}");
            let dir = run_dir.join(&name);
            let artifacts = FoldArtifacts {
                checkpoint: dir.join("checkpoint.ckpt"),
                name,
                tau,
                history,
                report,
                baseline: None,
            };
            write_fold(&dir, &artifacts)?;
            save_checkpoint(&model, None, &artifacts.checkpoint)?;
            Ok(artifacts)
        });
    results.into_iter().collect()
}

/// Pool all subjects of the listed datasets, keys qualified as
/// `dataset/subject` so multi-source unions cannot collide.
fn pooled_training_subjects(
    spec: &ExperimentSpec,
    store: &DatasetStore,
) -> Result<Vec<SubjectData>> {
    let mut pool = Vec::new();
    for id in &spec.experiment.train_datasets {
        let ds = store.load(id, spec.experiment.channel_mode)?;
        for s in ds.subjects {
            pool.push(SubjectData {
                subject_id: format!("{}/{}", id, s.subject_id),
                windows: s.windows,
            });
        }
    }
    pool.sort_by(|a, b| a.subject_id.cmp(&b.subject_id));
    Ok(pool)
}

/// Subject-level 20% validation split of a training pool, seeded.
fn split_train_val(pool: &[SubjectData], seed: u64) -> (Vec<&SubjectData>, Vec<&SubjectData>) {
    use rand::prelude::*;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let n_val = ((0.2 * pool.len() as f64).round() as usize).clamp(1, pool.len() - 1);
    let val: Vec<&SubjectData> = order[..n_val].iter().map(|&i| &pool[i]).collect();
    let train: Vec<&SubjectData> = order[n_val..].iter().map(|&i| &pool[i]).collect();
    (train, val)
}

struct Pretrained {
    model: UNet<f32>,
    tau: f64,
    history: TrainHistory,
}

fn pretrain(spec: &ExperimentSpec, store: &DatasetStore) -> Result<Pretrained> {
    let pool = pooled_training_subjects(spec, store)?;
    if pool.len() < 2 {
        return Err(Error::Config(
            "cross-dataset training needs at least 2 subjects".into(),
        ));
    }
    let seed = spec.experiment.seed;
    let (train_subjects, val_subjects) = split_train_val(&pool, seed);
    let train = pool_windows(&train_subjects);
    let val = pool_windows(&val_subjects);
    let mut model = UNet::<f32>::new(spec.unet_config(), seed)?;
    let history = train_model(&mut model, &train, &val, &spec.training, seed)?;
    let tau = select_threshold(
        &threshold_pairs(&model, &val)?,
        &default_tau_grid(),
        spec.detect.min_box_len,
    )?;
    Ok(Pretrained { model, tau, history })
}

fn run_cross(
    spec: &ExperimentSpec,
    store: &DatasetStore,
    run_dir: &Path,
) -> Result<Vec<FoldArtifacts>> {
    let pre = pretrain(spec, store)?;
    let test = store.load(&spec.experiment.test_dataset, spec.experiment.channel_mode)?;
    let users: Vec<&SubjectData> = test.subjects.iter().collect();
    let report = evaluate_subjects(&pre.model, &users, pre.tau, spec.detect.min_box_len)?;

    let name = "model".to_string();
    let dir = run_dir.join(&name);
    let artifacts = FoldArtifacts {
        checkpoint: dir.join("checkpoint.ckpt"),
        name,
        tau: pre.tau,
        history: pre.history,
        report,
        baseline: None,
    };
    write_fold(&dir, &artifacts)?;
    save_checkpoint(&pre.model, None, &artifacts.checkpoint)?;
    Ok(vec![artifacts])
}

fn run_fine_tune(
    spec: &ExperimentSpec,
    store: &DatasetStore,
    run_dir: &Path,
) -> Result<Vec<FoldArtifacts>> {
    let pre = pretrain(spec, store)?;
    let test = store.load(&spec.experiment.test_dataset, spec.experiment.channel_mode)?;
    if test.subjects.len() < 2 {
        return Err(Error::Config(
            "fine-tuning needs at least 2 subjects in the test dataset".into(),
        ));
    }
    // Split the testing dataset in two subject-level halves: adapt on the
    // first, assess on the second.
    let mid = test.subjects.len().div_ceil(2);
    let (adapt_subjects, eval_subjects) = test.subjects.split_at(mid);
    let eval_refs: Vec<&SubjectData> = eval_subjects.iter().collect();

    let baseline = evaluate_subjects(&pre.model, &eval_refs, pre.tau, spec.detect.min_box_len)?;

    let seed = spec.experiment.seed.wrapping_add(1);
    let (ft_train, ft_val) = split_train_val(adapt_subjects, seed);
    let mut model = pre.model.clone();
    let history = fine_tune(
        &mut model,
        &pool_windows(&ft_train),
        &pool_windows(&ft_val),
        &spec.training,
        seed,
    )?;
    let tau = select_threshold(
        &threshold_pairs(&model, &pool_windows(&ft_val))?,
        &default_tau_grid(),
        spec.detect.min_box_len,
    )?;
    let report = evaluate_subjects(&model, &eval_refs, tau, spec.detect.min_box_len)?;

    let pre_dir = run_dir.join("pretrained");
    std::fs::create_dir_all(&pre_dir)?;
    save_checkpoint(&pre.model, None, &pre_dir.join("checkpoint.ckpt"))?;

    let name = "fine-tuned".to_string();
    let dir = run_dir.join(&name);
    let artifacts = FoldArtifacts {
        checkpoint: dir.join("checkpoint.ckpt"),
        name,
        tau,
        history,
        report,
        baseline: Some(baseline),
    };
    write_fold(&dir, &artifacts)?;
    save_checkpoint(&model, None, &artifacts.checkpoint)?;
    Ok(vec![artifacts])
}

fn run_personalize(
    spec: &ExperimentSpec,
    store: &DatasetStore,
    run_dir: &Path,
) -> Result<Vec<FoldArtifacts>> {
    let single_dataset = spec.experiment.train_datasets.len() == 1
        && spec.experiment.train_datasets[0] == spec.experiment.test_dataset;
    let test = store.load(&spec.experiment.test_dataset, spec.experiment.channel_mode)?;

    if single_dataset {
        // LOSO pretraining: each user is personalized from the model that
        // never saw them.
        let folds = loso_folds(&test.subject_ids(), spec.experiment.seed)?;
        let results: Vec<Result<FoldArtifacts>> = map_collect(
            &folds.iter().enumerate().collect::<Vec<_>>(),
            |(k, fold)| {
                let seed = fold_seed(spec.experiment.seed, *k);
                let train = pool_windows(&subjects_by_ids(&test, &fold.train));
                let val = pool_windows(&subjects_by_ids(&test, &fold.val));
                let mut model = UNet::<f32>::new(spec.unet_config(), seed)?;
                train_model(&mut model, &train, &val, &spec.training, seed)?;
                let base_tau = select_threshold(
                    &threshold_pairs(&model, &val)?,
                    &default_tau_grid(),
                    spec.detect.min_box_len,
                )?;
                let user = test
                    .subject(&fold.test)
                    .ok_or_else(|| Error::Config(format!("missing subject {}", fold.test)))?;
                personalize_one(spec, &model, base_tau, user, run_dir, seed)
            },
        );
        results.into_iter().collect()
    } else {
        let pre = pretrain(spec, store)?;
        let pre_dir = run_dir.join("pretrained");
        std::fs::create_dir_all(&pre_dir)?;
        save_checkpoint(&pre.model, None, &pre_dir.join("checkpoint.ckpt"))?;

        let users: Vec<&SubjectData> = test.subjects.iter().collect();
        let results: Vec<Result<FoldArtifacts>> =
            map_collect(&users.iter().enumerate().collect::<Vec<_>>(), |(k, user)| {
                let seed = fold_seed(spec.experiment.seed, *k).wrapping_add(7);
                personalize_one(spec, &pre.model, pre.tau, user, run_dir, seed)
            });
        results.into_iter().collect()
    }
}

/// Adapt one user, score the held-out half, and score the unadapted model on
/// the same half for the before/after comparison.
fn personalize_one(
    spec: &ExperimentSpec,
    model: &UNet<f32>,
    base_tau: f64,
    user: &SubjectData,
    run_dir: &Path,
    seed: u64,
) -> Result<FoldArtifacts> {
    let outcome = personalize(
        model,
        user,
        spec.personalize.split_fraction,
        &spec.training,
        spec.detect.min_box_len,
        seed,
    )?;

    // Baseline on the identical held-out windows.
    let mut windows: Vec<&LabeledWindow> = user.windows.iter().collect();
    windows.sort_by_key(|w| w.start_index);
    let n_adapt = ((windows.len() as f64 * spec.personalize.split_fraction).round() as usize)
        .clamp(1, windows.len() - 1);
    let held_out = SubjectData {
        subject_id: user.subject_id.clone(),
        windows: windows[n_adapt..].iter().map(|w| (*w).clone()).collect(),
    };
    let baseline = evaluate_subjects(model, &[&held_out], base_tau, spec.detect.min_box_len)?;

    let name = format!("user-{}", user.subject_id);
    let dir = run_dir.join(&name);
    let artifacts = FoldArtifacts {
        checkpoint: dir.join("checkpoint.ckpt"),
        name,
        tau: outcome.tau,
        history: outcome.history,
        report: outcome.report,
        baseline: Some(baseline),
    };
    write_fold(&dir, &artifacts)?;
    save_checkpoint(&outcome.model, None, &artifacts.checkpoint)?;
    Ok(artifacts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::synth::{generate_synthetic, SynthConfig};
    use crate::io::save_record_csv;

    fn write_dataset(root: &Path, id: &str, cfg: &SynthConfig, seed: u64) {
        let dir = root.join(id);
        std::fs::create_dir_all(&dir).unwrap();
        for s in generate_synthetic(cfg, seed).unwrap() {
            let path = dir.join(format!("{}.csv", s.record.subject_id));
            save_record_csv(&s.record, &path).unwrap();
        }
    }

    fn small_spec(protocol: &str, train: &[&str], test: &str) -> ExperimentSpec {
        let train_list = train
            .iter()
            .map(|t| format!("\"{t}\""))
            .collect::<Vec<_>>()
            .join(", ");
        ExperimentSpec::parse(&format!(
            r#"
[experiment]
protocol = "{protocol}"
train_datasets = [{train_list}]
test_dataset = "{test}"
channel_mode = "single_z"
seed = 3

[training]
batch_size = 8
learning_rate = 2e-3
max_epochs = 3
patience = 3

[model]
depth = 2
base_filters = 4
"#
        ))
        .unwrap()
    }

    #[test]
    fn loso_produces_one_report_per_subject() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let cfg = SynthConfig {
            n_subjects: 4,
            duration_s: 20.0,
            ..SynthConfig::default()
        };
        write_dataset(&data, "tiny", &cfg, 5);
        let store = DatasetStore::new(&data);
        let spec = small_spec("loso", &["tiny"], "tiny");
        let out = run_experiment(&spec, &store, &tmp.path().join("runs")).unwrap();
        assert_eq!(out.summary.per_user.len(), 4);
        assert!(out.run_dir.join("summary.json").is_file());
        assert!(out.run_dir.join("fold-0/checkpoint.ckpt").is_file());
        assert!(out.run_dir.join("fold-3/metrics.csv").is_file());
        // aggregate is the mean of per-user F1
        let mean: f64 = out.summary.per_user.values().map(|m| m.f1).sum::<f64>() / 4.0;
        assert!((out.summary.aggregate.f1 - mean).abs() < 1e-12);
    }

    #[test]
    fn unregistered_dataset_is_config_error() {
        let tmp = tempfile::tempdir().unwrap();
        let store = DatasetStore::new(tmp.path().join("data"));
        let spec = small_spec("loso", &["nope"], "nope");
        let err = run_experiment(&spec, &store, &tmp.path().join("runs")).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn multi_source_pools_all_windows() {
        let tmp = tempfile::tempdir().unwrap();
        let data = tmp.path().join("data");
        let cfg = SynthConfig {
            n_subjects: 2,
            duration_s: 15.0,
            ..SynthConfig::default()
        };
        write_dataset(&data, "a", &cfg, 1);
        write_dataset(&data, "b", &cfg, 2);
        let store = DatasetStore::new(&data);
        let spec = small_spec("cross_dataset", &["a", "b"], "a");
        let pool = pooled_training_subjects(&spec, &store).unwrap();
        assert_eq!(pool.len(), 4);
        let per: usize = store
            .load("a", ChannelSelection::SingleZ)
            .unwrap()
            .window_count();
        let pooled: usize = pool.iter().map(|s| s.windows.len()).sum();
        assert_eq!(pooled, 2 * per);
    }
}
