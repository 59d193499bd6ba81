//! Accuracy harness: a small MLP classifier whose stored parameters pass
//! through encode → fault injection → decode before inference.
//!
//! The dataset is synthetic (Gaussian class clusters), the network is a
//! single-hidden-layer MLP trained by full-batch gradient descent, and after
//! training every weight and bias is max-abs normalized into `[-1, 1]` so
//! the half-precision storage premise holds. The per-layer scales are
//! replayed at inference time: the output layer's scale cancels under
//! argmax and the hidden layer's scale folds into the next layer's multiply.

use crate::codec::{self, CodecError, SchemeSet};
use crate::halffloat::{half_to_real, real_to_half, HalfError, HalfWord};
use crate::memdevice::{self, DeviceError, FaultSpec};
use crate::stream_rng;
use rand::RngExt;
use rand_distr::StandardNormal;
use std::fmt;
use std::io::{self, Write};
use thiserror::Error;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Feature dimensionality of the synthetic dataset.
pub const FEATURE_DIM: usize = 64;
/// Number of classes (Gaussian clusters).
pub const CLASSES: usize = 10;
/// Training points per class.
pub const TRAIN_PER_CLASS: usize = 200;
/// Test points per class.
pub const TEST_PER_CLASS: usize = 50;
/// Standard deviation of cluster centers; points get unit noise around
/// them. At this separation a linear classifier is comfortably above 90%.
const CLUSTER_SCALE: f64 = 2.0;

/// Hidden layer width.
pub const HIDDEN_DIM: usize = 32;
const LEARNING_RATE: f64 = 0.5;
const MAX_ITERS: usize = 400;
/// Training stops early once train accuracy reaches this.
const TARGET_TRAIN_ACCURACY: f64 = 0.95;
/// Hitting the iteration cap below this is a convergence failure.
const FLOOR_TRAIN_ACCURACY: f64 = 0.90;

/// Errors of the accuracy harness.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Half(#[from] HalfError),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error("training stalled at accuracy {0:.3}, below the 0.90 floor")]
    Convergence(f64),
}

/// Synthetic classification dataset with a fixed train/test split.
#[derive(Clone, PartialEq, Debug)]
pub struct Dataset {
    pub train_features: Vec<f64>,
    pub train_labels: Vec<usize>,
    pub test_features: Vec<f64>,
    pub test_labels: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
    pub seed: u64,
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }
}

/// Builds the clustered dataset for a seed: balanced classes, deterministic
/// content, shuffled order.
pub fn make_dataset(seed: u64) -> Dataset {
    let mut rng = stream_rng(seed, 0);
    let mut centers = vec![0.0f64; CLASSES * FEATURE_DIM];
    for c in centers.iter_mut() {
        *c = CLUSTER_SCALE * rng.sample::<f64, _>(StandardNormal);
    }
    let split = |per_class: usize, rng: &mut rand_chacha::ChaCha8Rng| {
        let n = per_class * CLASSES;
        let mut features = vec![0.0f64; n * FEATURE_DIM];
        let mut labels = vec![0usize; n];
        for class in 0..CLASSES {
            for i in 0..per_class {
                let row = class * per_class + i;
                labels[row] = class;
                for d in 0..FEATURE_DIM {
                    features[row * FEATURE_DIM + d] =
                        centers[class * FEATURE_DIM + d] + rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        // Deterministic shuffle of row order.
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(rng);
        let mut shuffled_features = vec![0.0f64; n * FEATURE_DIM];
        let mut shuffled_labels = vec![0usize; n];
        for (dst, &src) in order.iter().enumerate() {
            shuffled_labels[dst] = labels[src];
            shuffled_features[dst * FEATURE_DIM..(dst + 1) * FEATURE_DIM]
                .copy_from_slice(&features[src * FEATURE_DIM..(src + 1) * FEATURE_DIM]);
        }
        (shuffled_features, shuffled_labels)
    };
    let (train_features, train_labels) = split(TRAIN_PER_CLASS, &mut rng);
    let (test_features, test_labels) = split(TEST_PER_CLASS, &mut rng);
    Dataset {
        train_features,
        train_labels,
        test_features,
        test_labels,
        feature_dim: FEATURE_DIM,
        classes: CLASSES,
        seed,
    }
}

/// A trained two-layer rectifier network in stored (normalized) form.
///
/// All parameters lie in `[-1, 1]`; `hidden_scale` and `output_scale` are
/// the max-abs factors divided out per layer. Inference multiplies the
/// output layer by `hidden_scale`; `output_scale` is argmax-invariant and
/// kept only for completeness.
#[derive(Clone, PartialEq, Debug)]
pub struct MlpModel {
    hidden_weights: Vec<f64>,
    hidden_bias: Vec<f64>,
    output_weights: Vec<f64>,
    output_bias: Vec<f64>,
    pub hidden_scale: f64,
    pub output_scale: f64,
    input_dim: usize,
    hidden_dim: usize,
    classes: usize,
}

impl MlpModel {
    /// All parameters flattened in storage order: hidden weights, hidden
    /// bias, output weights, output bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        out.extend(&self.hidden_weights);
        out.extend(&self.hidden_bias);
        out.extend(&self.output_weights);
        out.extend(&self.output_bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.hidden_weights.len()
            + self.hidden_bias.len()
            + self.output_weights.len()
            + self.output_bias.len()
    }

    /// Same architecture and scales, parameters replaced from a flat slice.
    pub fn with_params(&self, params: &[f64]) -> MlpModel {
        assert_eq!(params.len(), self.param_count());
        let mut model = self.clone();
        let (w1, rest) = params.split_at(self.hidden_weights.len());
        let (b1, rest) = rest.split_at(self.hidden_bias.len());
        let (w2, b2) = rest.split_at(self.output_weights.len());
        model.hidden_weights.copy_from_slice(w1);
        model.hidden_bias.copy_from_slice(b1);
        model.output_weights.copy_from_slice(w2);
        model.output_bias.copy_from_slice(b2);
        model
    }

    /// Class scores for one feature row. `hidden_scale` re-applies the
    /// hidden layer's normalization; the remaining output scale only
    /// multiplies every logit and cannot change the argmax.
    fn logits(&self, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        for (j, slot) in hidden.iter_mut().enumerate() {
            let row = &self.hidden_weights[j * self.input_dim..(j + 1) * self.input_dim];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.hidden_bias[j];
            *slot = z.max(0.0);
        }
        for (k, slot) in out.iter_mut().enumerate() {
            let row = &self.output_weights[k * self.hidden_dim..(k + 1) * self.hidden_dim];
            let z: f64 = row.iter().zip(hidden.iter()).map(|(w, v)| w * v).sum();
            *slot = self.hidden_scale * z + self.output_bias[k];
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    // total_cmp keeps the choice well defined even when corrupted weights
    // push logits to infinities or NaN.
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap()
}

/// Fraction of rows whose argmax matches the label.
fn accuracy(model: &MlpModel, features: &[f64], labels: &[usize], dim: usize) -> f64 {
    let mut hidden = vec![0.0; model.hidden_dim];
    let mut logits = vec![0.0; model.classes];
    let mut correct = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        model.logits(
            &features[row * dim..(row + 1) * dim],
            &mut hidden,
            &mut logits,
        );
        if argmax(&logits) == label {
            correct += 1;
        }
    }
    correct as f64 / labels.len() as f64
}

/// Test-split accuracy of a model.
pub fn test_accuracy(model: &MlpModel, ds: &Dataset) -> f64 {
    accuracy(model, &ds.test_features, &ds.test_labels, ds.feature_dim)
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Trains by full-batch gradient descent on softmax cross-entropy until the
/// train accuracy target or the iteration cap, then max-abs normalizes each
/// layer into `[-1, 1]`.
pub fn train(ds: &Dataset, seed: u64) -> Result<MlpModel, HarnessError> {
    let (d, h, c) = (ds.feature_dim, HIDDEN_DIM, ds.classes);
    let n = ds.train_len();
    let mut rng = stream_rng(seed, 1);
    let mut uniform = |bound: f64, len: usize| -> Vec<f64> {
        (0..len)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
            .collect()
    };
    let mut model = MlpModel {
        hidden_weights: uniform((6.0 / (d + h) as f64).sqrt(), h * d),
        hidden_bias: vec![0.0; h],
        output_weights: uniform((6.0 / (h + c) as f64).sqrt(), c * h),
        output_bias: vec![0.0; c],
        hidden_scale: 1.0,
        output_scale: 1.0,
        input_dim: d,
        hidden_dim: h,
        classes: c,
    };

    let mut grad_w1 = vec![0.0f64; h * d];
    let mut grad_b1 = vec![0.0f64; h];
    let mut grad_w2 = vec![0.0f64; c * h];
    let mut grad_b2 = vec![0.0f64; c];
    let mut hidden = vec![0.0f64; h];
    let mut logits = vec![0.0f64; c];
    let mut probs = vec![0.0f64; c];
    let mut hidden_grad = vec![0.0f64; h];
    let mut train_acc = 0.0;

    for _ in 0..MAX_ITERS {
        grad_w1.fill(0.0);
        grad_b1.fill(0.0);
        grad_w2.fill(0.0);
        grad_b2.fill(0.0);
        let mut correct = 0usize;

        for (row, &label) in ds.train_labels.iter().enumerate() {
            let x = &ds.train_features[row * d..(row + 1) * d];
            model.logits(x, &mut hidden, &mut logits);
            if argmax(&logits) == label {
                correct += 1;
            }
            let peak = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut total = 0.0;
            for (p, &z) in probs.iter_mut().zip(&logits) {
                *p = (z - peak).exp();
                total += *p;
            }
            for (k, p) in probs.iter_mut().enumerate() {
                *p = *p / total - (k == label) as usize as f64;
            }
            for (k, &delta) in probs.iter().enumerate() {
                grad_b2[k] += delta;
                for j in 0..h {
                    grad_w2[k * h + j] += delta * hidden[j];
                }
            }
            for (j, slot) in hidden_grad.iter_mut().enumerate() {
                if hidden[j] > 0.0 {
                    *slot = probs
                        .iter()
                        .enumerate()
                        .map(|(k, &dl)| dl * model.output_weights[k * h + j])
                        .sum();
                } else {
                    *slot = 0.0;
                }
            }
            for (j, &delta) in hidden_grad.iter().enumerate() {
                if delta != 0.0 {
                    grad_b1[j] += delta;
                    for (i, &xi) in x.iter().enumerate() {
                        grad_w1[j * d + i] += delta * xi;
                    }
                }
            }
        }

        train_acc = correct as f64 / n as f64;
        if train_acc >= TARGET_TRAIN_ACCURACY {
            break;
        }
        let step = LEARNING_RATE / n as f64;
        for (w, g) in model.hidden_weights.iter_mut().zip(&grad_w1) {
            *w -= step * g;
        }
        for (w, g) in model.hidden_bias.iter_mut().zip(&grad_b1) {
            *w -= step * g;
        }
        for (w, g) in model.output_weights.iter_mut().zip(&grad_w2) {
            *w -= step * g;
        }
        for (w, g) in model.output_bias.iter_mut().zip(&grad_b2) {
            *w -= step * g;
        }
    }
    if train_acc < FLOOR_TRAIN_ACCURACY {
        return Err(HarnessError::Convergence(train_acc));
    }

    // Max-abs normalization per layer; the divided-out scales replay at
    // inference time.
    let s1 = max_abs(&model.hidden_weights)
        .max(max_abs(&model.hidden_bias))
        .max(1e-12);
    let s2 = max_abs(&model.output_weights)
        .max(max_abs(&model.output_bias))
        .max(1e-12);
    for w in model
        .hidden_weights
        .iter_mut()
        .chain(&mut model.hidden_bias)
    {
        *w /= s1;
    }
    for w in model
        .output_weights
        .iter_mut()
        .chain(&mut model.output_bias)
    {
        *w /= s2;
    }
    model.hidden_scale = s1;
    model.output_scale = s2;
    Ok(model)
}

/// The storage systems the accuracy experiment compares.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum System {
    /// Half-converted parameters, no buffer, no faults.
    ErrorFree,
    /// Raw storage, no sign backup, faults on.
    Unprotected,
    /// Sign backup plus {NoChange, Round} selection.
    RoundOnly,
    /// Sign backup plus {NoChange, Rotate} selection.
    RotateOnly,
    /// Sign backup plus full three-scheme selection.
    Hybrid,
}

impl System {
    pub const ALL: [System; 5] = [
        System::ErrorFree,
        System::Unprotected,
        System::RoundOnly,
        System::RotateOnly,
        System::Hybrid,
    ];

    /// Scheme set used for encoding; `None` bypasses the buffer entirely.
    pub fn scheme_set(self) -> Option<SchemeSet> {
        match self {
            System::ErrorFree => None,
            System::Unprotected => Some(SchemeSet::empty()),
            System::RoundOnly => Some(SchemeSet::no_change_only().with(codec::Scheme::Round)),
            System::RotateOnly => Some(SchemeSet::lossless()),
            System::Hybrid => Some(SchemeSet::all()),
        }
    }
}

impl fmt::Display for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            System::ErrorFree => "error_free",
            System::Unprotected => "unprotected",
            System::RoundOnly => "round",
            System::RotateOnly => "rotate",
            System::Hybrid => "hybrid",
        })
    }
}

fn infer_with_options(
    model: &MlpModel,
    ds: &Dataset,
    system: System,
    spec: &FaultSpec,
    granularity: usize,
    sign_protect: bool,
) -> Result<f64, HarnessError> {
    let params = model.flat_params();
    let halves = params
        .iter()
        .map(|&v| real_to_half(v))
        .collect::<Result<Vec<HalfWord>, _>>()?;
    let stored = match system.scheme_set() {
        None => halves,
        Some(set) => {
            let buf = codec::encode_buffer_opts(&halves, granularity, set, sign_protect)?;
            let faulted = memdevice::inject_faults(&buf, spec);
            codec::decode_buffer(&faulted).words
        }
    };
    let restored: Vec<f64> = stored.iter().map(|&h| half_to_real(h)).collect();
    Ok(test_accuracy(&model.with_params(&restored), ds))
}

/// Stores the model's parameters through the given system's buffer, injects
/// faults, decodes and reports test accuracy.
pub fn infer_through_buffer(
    model: &MlpModel,
    ds: &Dataset,
    system: System,
    spec: &FaultSpec,
    granularity: usize,
) -> Result<f64, HarnessError> {
    infer_with_options(model, ds, system, spec, granularity, true)
}

/// Accuracy experiment parameters.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct ExperimentConfig {
    /// Soft-error probability per intermediate cell.
    pub p: f64,
    pub granularity: usize,
    /// Fault seeds per faulted system.
    pub trials: usize,
    /// Trial `t` uses fault seed `fault_seed_base + t`.
    pub fault_seed_base: u64,
    /// Ablation switch for the sign backup in the protected systems.
    pub sign_protect: bool,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            p: memdevice::SOFT_ERROR_P_HIGH,
            granularity: 1,
            trials: 20,
            fault_seed_base: 0,
            sign_protect: true,
        }
    }
}

/// Mean and spread of one system's accuracy over the fault trials.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct SystemAccuracy {
    pub system: System,
    pub mean: f64,
    /// Sample standard deviation over trials (0 for a single run).
    pub stddev: f64,
    pub trials: usize,
}

/// Per-system accuracy statistics for one experiment configuration.
#[derive(Clone, PartialEq, Debug)]
pub struct AccuracyReport {
    pub p: f64,
    pub granularity: usize,
    pub rows: Vec<SystemAccuracy>,
}

impl AccuracyReport {
    pub fn row(&self, system: System) -> &SystemAccuracy {
        self.rows
            .iter()
            .find(|r| r.system == system)
            .expect("every system has a row")
    }
}

fn stats(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every system of [`System::ALL`]. Fault seeds are shared across
/// systems (trial `t` draws the same per-cell randomness everywhere), which
/// keeps the comparison paired.
pub fn run_accuracy_experiment(
    model: &MlpModel,
    ds: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<AccuracyReport, HarnessError> {
    let mut rows = Vec::with_capacity(System::ALL.len());
    for system in System::ALL {
        let row = if system == System::ErrorFree {
            let acc = infer_with_options(
                model,
                ds,
                system,
                &FaultSpec::new(0.0, 0)?,
                cfg.granularity,
                cfg.sign_protect,
            )?;
            SystemAccuracy {
                system,
                mean: acc,
                stddev: 0.0,
                trials: 1,
            }
        } else {
            let trial = |t: usize| -> Result<f64, HarnessError> {
                let spec = FaultSpec::new(cfg.p, cfg.fault_seed_base.wrapping_add(t as u64))?;
                infer_with_options(model, ds, system, &spec, cfg.granularity, cfg.sign_protect)
            };
            #[cfg(feature = "parallel")]
            let accs = (0..cfg.trials)
                .into_par_iter()
                .map(trial)
                .collect::<Result<Vec<_>, _>>()?;
            #[cfg(not(feature = "parallel"))]
            let accs = (0..cfg.trials).map(trial).collect::<Result<Vec<_>, _>>()?;
            let (mean, stddev) = stats(&accs);
            SystemAccuracy {
                system,
                mean,
                stddev,
                trials: cfg.trials,
            }
        };
        rows.push(row);
    }
    Ok(AccuracyReport {
        p: cfg.p,
        granularity: cfg.granularity,
        rows,
    })
}

/// Writes `accuracy.csv`: `system,granularity,p,mean_accuracy,stddev,trials`.
pub fn write_accuracy_csv(report: &AccuracyReport, w: &mut impl Write) -> io::Result<()> {
    writeln!(w, "system,granularity,p,mean_accuracy,stddev,trials")?;
    for r in &report.rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.system, report.granularity, report.p, r.mean, r.stddev, r.trials
        )?;
    }
    Ok(())
}
