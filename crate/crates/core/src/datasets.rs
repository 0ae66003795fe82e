//! Fold manifests, segment extraction, clip voting and cross-validation.

use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, CowArray, Ix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::{
    apply_standardizer, cache_file_name, featurize_wav, fit_standardizer, read_feature_clip, save_cached,
    FeatureClip, Standardizer,
};
use crate::netcore::{Predictor, Segment};
use crate::optim::{class_indices, train_with_progress, EpochRecord, TrainData, TrainRun};
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub fold: usize,
    pub label: String,
}

/// Clips with their fold assignment and class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldManifest {
    pub entries: Vec<ManifestEntry>,
    /// Distinct labels in alphabetical order; a label's class index is its
    /// position here.
    pub classes: Vec<String>,
    /// Folds are numbered `1..=num_folds`.
    pub num_folds: usize,
}

impl FoldManifest {
    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(label)).ok()
    }

    pub fn split(&self, test_fold: usize) -> Result<FoldSplit> {
        fold_split(self.num_folds, test_fold)
    }

    /// Number of entries of each class, indexed like `classes`.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for e in &self.entries {
            counts[self.class_index(&e.label).unwrap()] += 1;
        }
        counts
    }
}

/// Parse a `path,fold,label` CSV. Columns may appear in any order and extra
/// columns are ignored. Folds must cover `1..=F` with `F ≥ 3`.
pub fn parse_manifest(bytes: &[u8]) -> Result<FoldManifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| Error::Manifest(format!("cannot read header: {e}")))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Manifest(format!("missing column {name:?}")))
    };
    let (path_col, fold_col, label_col) = (column("path")?, column("fold")?, column("label")?);

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Manifest(format!("line {line}: {e}")))?;
        let field = |col: usize| record.get(col).unwrap_or("");
        let path = field(path_col).to_string();
        let label = field(label_col).to_string();
        if path.is_empty() || label.is_empty() {
            return Err(Error::Manifest(format!("line {line}: empty path or label")));
        }
        let fold: usize = field(fold_col)
            .parse()
            .map_err(|_| Error::Manifest(format!("line {line}: fold {:?} is not an integer", field(fold_col))))?;
        if fold < 1 {
            return Err(Error::Manifest(format!("line {line}: fold {fold} out of range, folds start at 1")));
        }
        if !seen.insert(path.clone()) {
            return Err(Error::Manifest(format!("duplicate path {path:?}")));
        }
        entries.push(ManifestEntry { path, fold, label });
    }
    if entries.is_empty() {
        return Err(Error::Manifest("manifest has no entries".into()));
    }
    let num_folds = entries.iter().map(|e| e.fold).max().unwrap();
    if num_folds < 3 {
        return Err(Error::Manifest(format!(
            "{num_folds} folds; at least 3 are needed for train, validation and test"
        )));
    }
    let present: BTreeSet<usize> = entries.iter().map(|e| e.fold).collect();
    if let Some(missing) = (1..=num_folds).find(|f| !present.contains(f)) {
        return Err(Error::Manifest(format!("fold {missing} has no entries")));
    }
    let classes: Vec<String> = entries
        .iter()
        .map(|e| e.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    Ok(FoldManifest {
        entries,
        classes,
        num_folds,
    })
}

/// One cross-validation rotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: usize,
    pub test: usize,
}

/// Test on `test_fold`, validate on the fold after it (wrapping), train on
/// the rest.
pub fn fold_split(num_folds: usize, test_fold: usize) -> Result<FoldSplit> {
    if num_folds < 3 {
        return Err(Error::InvalidArgument(format!("{num_folds} folds; at least 3 are needed")));
    }
    if !(1..=num_folds).contains(&test_fold) {
        return Err(Error::InvalidArgument(format!(
            "test fold {test_fold} out of range 1..={num_folds}"
        )));
    }
    let validation = test_fold % num_folds + 1;
    let train = (1..=num_folds)
        .filter(|&f| f != test_fold && f != validation)
        .collect();
    Ok(FoldSplit {
        train,
        validation,
        test: test_fold,
    })
}

/// Segment start frames for a clip of `frames` frames (after padding).
pub fn segment_starts(frames: usize, width: usize, hop: usize) -> impl Iterator<Item = usize> {
    let last = frames.saturating_sub(width);
    (0..=last).step_by(hop.max(1))
}

/// `frames` itself when it has at least `width` rows, otherwise `frames`
/// extended to `width` rows by repeating its final row.
pub fn padded_frames(frames: ArrayView2<'_, f64>, width: usize) -> CowArray<'_, f64, Ix2> {
    if frames.nrows() >= width {
        return CowArray::from(frames);
    }
    let mut out = Array2::zeros((width, frames.ncols()));
    out.slice_mut(s![..frames.nrows(), ..]).assign(&frames);
    let last = frames.row(frames.nrows() - 1);
    for mut row in out.slice_mut(s![frames.nrows().., ..]).rows_mut() {
        row.assign(&last);
    }
    CowArray::from(out)
}

/// Every `width`-frame window starting at multiples of `hop`. A clip shorter
/// than `width` yields one segment padded with copies of its last frame.
pub fn extract_segments(clip: &FeatureClip, width: usize, hop: usize) -> Vec<Segment> {
    let frames = padded_frames(clip.frames.view(), width);
    segment_starts(frames.nrows(), width, hop)
        .map(|start| Segment {
            frames: frames.slice(s![start..start + width, ..]).to_owned(),
            clip_id: clip.clip_id.clone(),
            start,
        })
        .collect()
}

/// Mean of the segment probability vectors and its argmax, lowest index on
/// ties.
pub fn vote(segment_probs: &[Array1<f64>]) -> Result<(usize, Array1<f64>)> {
    let first = segment_probs
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot vote over zero segments".into()))?;
    if segment_probs.iter().any(|p| p.len() != first.len()) {
        return Err(Error::Shape("probability vectors differ in length".into()));
    }
    let mut mean = Array1::zeros(first.len());
    for p in segment_probs {
        mean += p;
    }
    mean /= segment_probs.len() as f64;
    Ok((argmax(&mean), mean))
}

fn argmax(v: &Array1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Clip decision by voting over every segment at `hop`.
pub fn predict_clip(predictor: &Predictor<'_>, frames: ArrayView2<f64>, hop: usize) -> Result<(usize, Array1<f64>)> {
    let width = predictor.params().segment_width();
    let padded = padded_frames(frames, width);
    let probs = segment_starts(padded.nrows(), width, hop)
        .map(|start| predictor.forward(padded.slice(s![start..start + width, ..]), false, 0))
        .collect::<Result<Vec<_>>>()?;
    vote(&probs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAccuracy {
    pub fold: usize,
    pub clips: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub classes: Vec<String>,
    pub folds: Vec<FoldAccuracy>,
    /// Unweighted mean of the per-fold accuracies.
    pub mean_accuracy: f64,
    /// `confusion[true][predicted]`, summed over folds.
    pub confusion: Vec<Vec<usize>>,
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Confusion matrix as aligned text: one row per true class, one column
    /// per predicted class.
    pub fn confusion_table(&self) -> String {
        let label_width = self.classes.iter().map(|c| c.len()).max().unwrap_or(0);
        let cell = self
            .confusion
            .iter()
            .flatten()
            .map(|v| v.to_string().len())
            .chain(self.classes.iter().map(|c| c.len()))
            .max()
            .unwrap_or(1);
        let mut out = String::new();
        out.push_str(&format!("{:label_width$}", ""));
        for c in &self.classes {
            out.push_str(&format!(" {c:>cell$}"));
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.confusion) {
            out.push_str(&format!("{c:label_width$}"));
            for v in row {
                out.push_str(&format!(" {v:>cell$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Accumulates per-fold clip predictions into an [`EvaluationReport`].
#[derive(Debug, Clone)]
pub struct ReportBuilder {
    classes: Vec<String>,
    folds: Vec<FoldAccuracy>,
    confusion: Vec<Vec<usize>>,
}

impl ReportBuilder {
    pub fn new(classes: Vec<String>) -> Self {
        let n = classes.len();
        ReportBuilder {
            classes,
            folds: Vec::new(),
            confusion: vec![vec![0; n]; n],
        }
    }

    /// Record a fold's `(true class, predicted class)` pairs.
    pub fn add_fold(&mut self, fold: usize, predictions: &[(usize, usize)]) -> Result<()> {
        if predictions.is_empty() {
            return Err(Error::InvalidArgument(format!("fold {fold} has no test clips")));
        }
        let n = self.classes.len();
        if let Some(&(t, p)) = predictions.iter().find(|(t, p)| *t >= n || *p >= n) {
            return Err(Error::LabelOutOfRange {
                label: t.max(p),
                classes: n,
            });
        }
        let correct = predictions.iter().filter(|(t, p)| t == p).count();
        for &(t, p) in predictions {
            self.confusion[t][p] += 1;
        }
        self.folds.push(FoldAccuracy {
            fold,
            clips: predictions.len(),
            accuracy: correct as f64 / predictions.len() as f64,
        });
        Ok(())
    }

    pub fn finish(mut self) -> EvaluationReport {
        self.folds.sort_by_key(|f| f.fold);
        let mean_accuracy = if self.folds.is_empty() {
            0.0
        } else {
            self.folds.iter().map(|f| f.accuracy).sum::<f64>() / self.folds.len() as f64
        };
        EvaluationReport {
            classes: self.classes,
            folds: self.folds,
            mean_accuracy,
            confusion: self.confusion,
        }
    }
}

/// Result of training and testing one rotation.
#[derive(Debug, Clone)]
pub struct RotationResult {
    pub split: FoldSplit,
    pub standardizer: Standardizer,
    pub run: TrainRun,
    /// `(true class, predicted class)` for every test clip.
    pub predictions: Vec<(usize, usize)>,
}

/// Clips of the training folds, the validation fold and the test fold.
pub fn partition_clips(
    clips: &[FeatureClip],
    split: &FoldSplit,
) -> (Vec<FeatureClip>, Vec<FeatureClip>, Vec<FeatureClip>) {
    let select = |keep: &dyn Fn(usize) -> bool| -> Vec<FeatureClip> {
        clips.iter().filter(|c| keep(c.fold)).cloned().collect()
    };
    (
        select(&|f| split.train.contains(&f)),
        select(&|f| f == split.validation),
        select(&|f| f == split.test),
    )
}

/// Standardizer for a rotation, fitted on its training folds only.
pub fn rotation_standardizer(clips: &[FeatureClip], split: &FoldSplit) -> Result<Standardizer> {
    fit_standardizer(&partition_clips(clips, split).0)
}

/// Seed of the rotation testing on `test_fold`.
pub fn rotation_seed(seed: u64, test_fold: usize) -> u64 {
    derive_seed(seed, 1000 + test_fold as u64)
}

/// Standardize on the training folds, train with early stopping on the
/// validation fold, and classify the test fold.
pub fn run_rotation(
    config: &ModelConfig,
    clips: &[FeatureClip],
    num_folds: usize,
    test_fold: usize,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<RotationResult> {
    let split = fold_split(num_folds, test_fold)?;
    let (train_raw, val_raw, test_raw) = partition_clips(clips, &split);
    for (name, set) in [("training", &train_raw), ("validation", &val_raw), ("test", &test_raw)] {
        if set.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "rotation with test fold {test_fold} has no {name} clips"
            )));
        }
    }

    let standardizer = fit_standardizer(&train_raw)?;
    let standardize = |set: Vec<FeatureClip>| -> Result<Vec<FeatureClip>> {
        set.iter().map(|c| apply_standardizer(c, &standardizer)).collect()
    };
    let train = standardize(train_raw)?;
    let validation = standardize(val_raw)?;
    let test = standardize(test_raw)?;

    let run = train_with_progress(
        config,
        TrainData {
            train: &train,
            validation: &validation,
        },
        rotation_seed(config.seed, test_fold),
        on_epoch,
    )?;

    let truth = class_indices(&test, &config.classes)?;
    let predictor = run.best_params.predictor();
    let predictions = test
        .iter()
        .zip(truth)
        .map(|(clip, t)| {
            let (p, _) = predict_clip(&predictor, clip.frames.view(), config.training.inference_hop)?;
            Ok((t, p))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RotationResult {
        split,
        standardizer,
        run,
        predictions,
    })
}

/// Full cross-validation: one rotation per test fold, rotations run in
/// parallel on the current rayon pool, results merged in fold order.
pub fn cross_validate(
    config: &ModelConfig,
    clips: &[FeatureClip],
    num_folds: usize,
    on_epoch: impl Fn(usize, &EpochRecord) + Sync,
) -> Result<(EvaluationReport, Vec<RotationResult>)> {
    let rotations = (1..=num_folds)
        .into_par_iter()
        .map(|fold| run_rotation(config, clips, num_folds, fold, |r| on_epoch(fold, r)))
        .collect::<Result<Vec<_>>>()?;
    let mut builder = ReportBuilder::new(config.classes.clone());
    for r in &rotations {
        builder.add_fold(r.split.test, &r.predictions)?;
    }
    Ok((builder.finish(), rotations))
}

/// Outcome of [`featurize_manifest`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeaturizeSummary {
    pub written: usize,
    pub reused: usize,
}

/// Compute features for every manifest entry under `audio_root` and write
/// them to `cache_dir`. Entries with an existing cache file are left alone
/// unless `force` is set. Clips are processed in parallel on the current
/// rayon pool.
pub fn featurize_manifest(
    manifest: &FoldManifest,
    audio_root: &Path,
    cache_dir: &Path,
    force: bool,
) -> Result<FeaturizeSummary> {
    std::fs::create_dir_all(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let written = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let target = cache_dir.join(cache_file_name(&entry.path));
            if !force && target.exists() {
                return Ok(false);
            }
            let wav = audio_root.join(&entry.path);
            let bytes = std::fs::read(&wav).map_err(|e| Error::io(&wav, e))?;
            let clip = featurize_wav(&bytes, &entry.path, &entry.label, entry.fold)?;
            save_cached(&clip, cache_dir)?;
            Ok(true)
        })
        .collect::<Result<Vec<bool>>>()?
        .into_iter()
        .filter(|&w| w)
        .count();
    Ok(FeaturizeSummary {
        written,
        reused: manifest.entries.len() - written,
    })
}

/// Every cached clip in `cache_dir`, sorted by clip id. Only the cache is
/// read; no audio is touched.
pub fn load_feature_cache(cache_dir: &Path) -> Result<Vec<FeatureClip>> {
    let listing = std::fs::read_dir(cache_dir).map_err(|e| Error::io(cache_dir, e))?;
    let mut paths = Vec::new();
    for entry in listing {
        let path = entry.map_err(|e| Error::io(cache_dir, e))?.path();
        if path.extension().is_some_and(|x| x == "mclfeat") {
            paths.push(path);
        }
    }
    let mut clips = paths
        .par_iter()
        .map(|path| {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            read_feature_clip(bytes.as_slice())
        })
        .collect::<Result<Vec<_>>>()?;
    if clips.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no cached features in {}",
            cache_dir.display()
        )));
    }
    clips.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(clips)
}

/// Number of folds covered by `clips`, checked the same way as a manifest:
/// folds `1..=F`, each nonempty, `F ≥ 3`.
pub fn clip_folds(clips: &[FeatureClip]) -> Result<usize> {
    let present: BTreeSet<usize> = clips.iter().map(|c| c.fold).collect();
    let num_folds = present.iter().next_back().copied().unwrap_or(0);
    if num_folds < 3 || present.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "clips cover folds {present:?}; need folds 1..=F with F ≥ 3"
        )));
    }
    if let Some(missing) = (1..=num_folds).find(|f| !present.contains(f)) {
        return Err(Error::InvalidArgument(format!("fold {missing} has no clips")));
    }
    Ok(num_folds)
}

/// Clip ids of the entries in `folds`.
pub fn entries_in_folds<'a>(manifest: &'a FoldManifest, folds: &[usize]) -> Vec<&'a ManifestEntry> {
    manifest
        .entries
        .iter()
        .filter(|e| folds.contains(&e.fold))
        .collect()
}
