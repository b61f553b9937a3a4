//! Training loop, loss and K-fold orchestration.

use std::collections::HashMap;

use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{DatasetManifest, FoldPlan, Split};
use crate::error::{Error, Result};
use crate::eval::{self, AggregateReport, ConfusionMatrix, MetricReport};
use crate::fusion::{assemble_inputs, build_model, Example, FusionModel, FusionModelConfig, PROB_FLOOR};
use crate::nn::{Adam, AdamConfig};
use crate::textfeat::{TextFeature, TextKind};
use crate::visfeat::{VisualFeature, VisualKind};

fn d_epochs() -> usize {
    20
}
fn d_batch() -> usize {
    16
}
fn d_lr() -> f64 {
    0.001
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-7
}
fn d_patience() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub epsilon: f64,
    #[serde(default = "d_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: d_epochs(),
            batch_size: d_batch(),
            learning_rate: d_lr(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            epsilon: d_eps(),
            patience: d_patience(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.patience > 0
            && self.learning_rate > 0.0
            && self.epsilon > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("training settings out of range: {self:?}")))
        }
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// A predicted distribution `s` and a one-hot truth `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossInputs {
    pub s: Vec<f64>,
    pub t: Vec<f64>,
}

impl LossInputs {
    pub fn one_hot(s: Vec<f64>, label: usize) -> Self {
        let mut t = vec![0.0; s.len()];
        t[label] = 1.0;
        Self { s, t }
    }
}

/// `-Σ t_i ln(max(s_i, 1e-12))`.
pub fn cross_entropy(inputs: &LossInputs) -> f64 {
    -inputs
        .s
        .iter()
        .zip(&inputs.t)
        .map(|(&s, &t)| t * s.clamp(PROB_FLOOR, 1.0).ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the in-epoch batch predictions, before each update.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn best_val_accuracy(&self) -> f64 {
        self.epochs[self.best_epoch - 1].val_accuracy
    }
}

/// Examples with their class indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledSet {
    pub examples: Vec<Example>,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn push(&mut self, example: Example, label: usize) {
        self.examples.push(example);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

fn to_f64(v: f32) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Class probabilities for every example, in order.
pub fn predict_probs(model: &FusionModel<f32>, set: &LabeledSet, batch_size: usize) -> Result<Vec<Vec<f32>>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        let inputs = assemble_inputs::<f32>(&model.config, &refs)?;
        let probs = model.forward(&inputs)?;
        out.extend(probs.rows().into_iter().map(|r| r.to_vec()));
    }
    Ok(out)
}

pub fn predict(model: &FusionModel<f32>, set: &LabeledSet, batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(set.len());
    for chunk in set.examples.chunks(batch_size.max(1)) {
        let refs: Vec<&Example> = chunk.iter().collect();
        out.extend(model.predict(&assemble_inputs::<f32>(&model.config, &refs)?)?);
    }
    Ok(out)
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    predicted.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / truth.len() as f64
}

/// Trains with Adam on shuffled mini-batches (the last partial batch is
/// kept), early-stops on validation accuracy and restores the best epoch's
/// parameters. A strictly higher validation accuracy is needed to replace
/// the best epoch.
pub fn train_model(
    model: &mut FusionModel<f32>,
    train: &LabeledSet,
    val: &LabeledSet,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Validation("training and validation sets must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::<f32>::new(config.adam());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;
    let mut stopped = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&Example> = batch.iter().map(|&i| &train.examples[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let inputs = assemble_inputs::<f32>(&model.config, &refs)?;
            let (loss, probs) = model.loss_and_grad(&inputs, &labels)?;
            let loss = to_f64(loss);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            loss_sum += loss * batch.len() as f64;
            correct += probs
                .rows()
                .into_iter()
                .zip(&labels)
                .filter(|(r, &y)| crate::fusion::argmax(&r.to_vec()) == y)
                .count();
            adam.step(model);
        }
        let val_pred = predict(model, val, config.batch_size)?;
        let val_accuracy = accuracy(&val_pred, &val.labels);
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        };
        log::debug!(
            "epoch {epoch}: loss {:.4} acc {:.3} val_acc {:.3}",
            stats.train_loss,
            stats.train_accuracy,
            val_accuracy
        );
        history.push(stats);
        stopped = epoch;
        if best.as_ref().is_none_or(|(_, acc, _)| val_accuracy > *acc) {
            best = Some((epoch, val_accuracy, model.snapshot()));
        }
        let best_epoch = best.as_ref().unwrap().0;
        if epoch - best_epoch >= config.patience {
            break;
        }
    }
    let (best_epoch, _, snapshot) = best.expect("at least one epoch ran");
    model.restore(&snapshot);
    Ok(TrainHistory {
        epochs: history,
        stopped_epoch: stopped,
        best_epoch,
    })
}

/// Read access to cached features. Count features depend on the fold
/// because their vocabulary is built from that fold's training documents.
pub trait FeatureSource: Sync {
    fn text(&self, id: &str, kind: TextKind, fold: usize) -> Result<TextFeature>;
    fn visual(&self, id: &str, kind: VisualKind) -> Result<VisualFeature>;
}

/// Features held in memory; count features are keyed by fold.
#[derive(Debug, Clone, Default)]
pub struct InMemoryFeatures {
    pub text: HashMap<(String, TextKind, Option<usize>), TextFeature>,
    pub visual: HashMap<(String, VisualKind), VisualFeature>,
}

impl InMemoryFeatures {
    pub fn insert_text(&mut self, f: TextFeature, fold: Option<usize>) {
        self.text.insert((f.video_id.clone(), f.kind, fold), f);
    }

    pub fn insert_visual(&mut self, f: VisualFeature) {
        self.visual.insert((f.video_id.clone(), f.kind), f);
    }
}

impl FeatureSource for InMemoryFeatures {
    fn text(&self, id: &str, kind: TextKind, fold: usize) -> Result<TextFeature> {
        let key_fold = (kind == TextKind::CountVect).then_some(fold);
        self.text
            .get(&(id.to_string(), kind, key_fold))
            .cloned()
            .ok_or_else(|| Error::MissingFeature {
                id: id.into(),
                kind: kind.name().into(),
            })
    }

    fn visual(&self, id: &str, kind: VisualKind) -> Result<VisualFeature> {
        self.visual
            .get(&(id.to_string(), kind))
            .cloned()
            .ok_or_else(|| Error::MissingFeature {
                id: id.into(),
                kind: kind.name().into(),
            })
    }
}

/// Loads the features `config` needs for the given ids.
pub fn gather(
    manifest: &DatasetManifest,
    ids: &[&str],
    features: &dyn FeatureSource,
    config: &FusionModelConfig,
    fold: usize,
) -> Result<LabeledSet> {
    let mut set = LabeledSet::default();
    for &id in ids {
        let entry = manifest
            .entry(id)
            .ok_or_else(|| Error::Validation(format!("fold references unknown id '{id}'")))?;
        let text = config.text_kind.map(|k| features.text(id, k, fold)).transpose()?;
        let visual = config.visual_kind.map(|k| features.visual(id, k)).transpose()?;
        set.push(
            Example {
                video_id: id.to_string(),
                text,
                visual,
            },
            manifest.label_index(entry),
        );
    }
    Ok(set)
}

fn as_refs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub video_id: String,
    pub label: usize,
    pub predicted: usize,
    pub probs: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub seed: u64,
    pub history: TrainHistory,
    pub model: FusionModel<f32>,
    /// Accuracy of the restored model over the fold's whole training set.
    pub train_accuracy: f64,
    pub predictions: Vec<Prediction>,
    pub confusion: ConfusionMatrix,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct KFoldResult {
    pub folds: Vec<FoldOutcome>,
    pub aggregate: AggregateReport,
}

impl KFoldResult {
    pub fn reports(&self) -> Vec<MetricReport> {
        self.folds.iter().map(|f| f.report.clone()).collect()
    }

    /// Test confusion counts summed over folds.
    pub fn pooled_confusion(&self) -> ConfusionMatrix {
        let mut it = self.folds.iter().map(|f| f.confusion.clone());
        let first = it.next().expect("at least one fold");
        it.fold(first, |acc, cm| acc.add(&cm))
    }
}

/// Trains one fresh model per fold (seed = base seed + fold index), early
/// stopping on the fold's validation ids, and evaluates on the manifest's
/// test split.
pub fn run_kfold(
    manifest: &DatasetManifest,
    features: &dyn FeatureSource,
    model_config: &FusionModelConfig,
    train_config: &TrainConfig,
    plan: &FoldPlan,
) -> Result<KFoldResult> {
    model_config.validate()?;
    train_config.validate()?;
    let test_ids: Vec<&str> = manifest.split(Split::Test).map(|e| e.id.as_str()).collect();
    if test_ids.is_empty() {
        return Err(Error::Validation("manifest has no test entries".into()));
    }
    let classes = manifest.vocabulary.size();
    let mut folds = Vec::with_capacity(plan.folds.len());
    for (i, fold) in plan.folds.iter().enumerate() {
        let seed = train_config.seed + i as u64;
        let train = gather(manifest, &as_refs(&fold.train_ids), features, model_config, i)?;
        let val = gather(manifest, &as_refs(&fold.val_ids), features, model_config, i)?;
        let test = gather(manifest, &test_ids, features, model_config, i)?;
        let mut model = build_model::<f32>(model_config, seed)?;
        let cfg = TrainConfig { seed, ..*train_config };
        let history = train_model(&mut model, &train, &val, &cfg)?;
        let train_accuracy = accuracy(&predict(&model, &train, cfg.batch_size)?, &train.labels);
        let predicted = predict(&model, &test, cfg.batch_size)?;
        let probs = predict_probs(&model, &test, cfg.batch_size)?;
        let predictions: Vec<Prediction> = test
            .examples
            .iter()
            .zip(&test.labels)
            .zip(predicted.iter().zip(probs))
            .map(|((ex, &label), (&p, probs))| Prediction {
                video_id: ex.video_id.clone(),
                label,
                predicted: p,
                probs,
            })
            .collect();
        let confusion = eval::confusion(&test.labels, &predicted, classes)?;
        let report = eval::metrics(&confusion)?;
        log::info!(
            "fold {i}: best epoch {} of {}, train acc {:.3}, test acc {:.3}",
            history.best_epoch,
            history.stopped_epoch,
            train_accuracy,
            report.accuracy
        );
        folds.push(FoldOutcome {
            fold: i,
            seed,
            history,
            model,
            train_accuracy,
            predictions,
            confusion,
            report,
        });
    }
    let reports: Vec<MetricReport> = folds.iter().map(|f| f.report.clone()).collect();
    let aggregate = eval::aggregate(&reports)?;
    Ok(KFoldResult { folds, aggregate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionMode;
    use crate::visfeat::VisualKind;
    use rand::Rng;

    #[test]
    fn cross_entropy_examples() {
        assert_eq!(cross_entropy(&LossInputs::one_hot(vec![0.0, 1.0, 0.0], 1)), 0.0);
        let uniform = LossInputs::one_hot(vec![1.0 / 9.0; 9], 4);
        assert!((cross_entropy(&uniform) - 9f64.ln()).abs() < 1e-12);
        let mut s = vec![0.5 / 8.0; 9];
        s[0] = 0.5;
        assert!((cross_entropy(&LossInputs::one_hot(s, 0)) - 2f64.ln()).abs() < 1e-12);
        // Zero probability on the truth is clamped, not infinite.
        assert!(cross_entropy(&LossInputs::one_hot(vec![1.0, 0.0], 1)).is_finite());
    }

    fn blob_set(n: usize, seed: u64) -> LabeledSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = LabeledSet::default();
        for i in 0..n {
            let label = i % 2;
            let centre = if label == 0 { 0.8 } else { 0.2 };
            let data: Vec<f32> = (0..365).map(|_| centre + rng.random_range(-0.1f32..0.1)).collect();
            set.push(
                Example {
                    video_id: format!("v{i}"),
                    text: None,
                    visual: Some(VisualFeature::new(VisualKind::PlcFeat, format!("v{i}"), data).unwrap()),
                },
                label,
            );
        }
        set
    }

    fn small_visual_config() -> FusionModelConfig {
        FusionModelConfig {
            encoder_units: 16,
            ..FusionModelConfig::new(FusionMode::SingleVisual, None, Some(VisualKind::PlcFeat))
        }
    }

    #[test]
    fn frozen_validation_stops_after_patience() {
        let train = blob_set(20, 1);
        let mut val = LabeledSet::default();
        val.push(train.examples[0].clone(), 0);
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::with_seed(3)
        };
        let mut model = build_model(&small_visual_config(), 0).unwrap();
        let h = train_model(&mut model, &train, &val, &cfg).unwrap();
        // A single validation sample can only be right or wrong, so after the
        // first correct epoch nothing strictly improves.
        assert!(h.stopped_epoch <= h.best_epoch + 10);
        assert!(h.stopped_epoch < 30);
        assert!(h.best_epoch <= h.stopped_epoch);
    }

    #[test]
    fn training_is_deterministic() {
        let train = blob_set(24, 2);
        let val = blob_set(6, 3);
        let cfg = TrainConfig {
            epochs: 3,
            ..TrainConfig::with_seed(9)
        };
        let run = || {
            let mut m = build_model(&small_visual_config(), 4).unwrap();
            let h = train_model(&mut m, &train, &val, &cfg).unwrap();
            (h, m)
        };
        let (h1, m1) = run();
        let (h2, m2) = run();
        assert_eq!(h1, h2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn restored_model_matches_best_validation_accuracy() {
        let train = blob_set(40, 5);
        let val = blob_set(10, 6);
        let mut m = build_model(&small_visual_config(), 1).unwrap();
        let h = train_model(&mut m, &train, &val, &TrainConfig::with_seed(2)).unwrap();
        let acc = accuracy(&predict(&m, &val, 16).unwrap(), &val.labels);
        assert_eq!(acc, h.best_val_accuracy());
        assert!(h.epochs.iter().all(|e| e.val_accuracy <= acc));
    }
}
