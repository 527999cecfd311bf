//! The dual-input classification model: pretrained (or random) backbone
//! features, global average pooling, fusion with the tabular vector, and a
//! configurable dense head trained with Adam on categorical cross-entropy.
//!
//! Head layout, fixed and documented: dense_1 -> activation -> [batchnorm]
//! -> dense_2 -> activation -> [batchnorm] -> dropout -> dense_out, with
//! one batch-norm layer placed after the first dense layer and the second
//! (when configured) after the second dense layer.

use ndarray::{Array1, Array2, Array4, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbones::{build_backbone, Backbone, BackboneError, BackboneSpec};
use crate::nn::adam::Adam;
use crate::nn::init::glorot_uniform;
use crate::nn::loss::{argmax_row, cross_entropy, softmax, softmax_ce_grad};
use crate::nn::ops::{Activation, BatchNorm1d, Dense, NnError};
use crate::nn::Param;
use crate::tensorstore::TensorStore;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("tabular width must be positive")]
    ZeroTabularWidth,
    #[error("n_classes must be 2 or 3, got {0}")]
    BadClassCount(usize),
    #[error("bn_layers must be 0, 1, or 2, got {0}")]
    BadBnLayers(u8),
    #[error("dropout rate {0} outside [0, 1)")]
    BadDropout(f64),
    #[error("epochs must be at least 1")]
    ZeroEpochs,
    #[error("empty {0} partition")]
    EmptyPartition(&'static str),
    #[error("label {label} out of range for {n_classes} classes at sample {index}")]
    LabelOutOfRange {
        label: usize,
        n_classes: usize,
        index: usize,
    },
    #[error("non-finite loss at epoch {epoch}, step {step}: training aborted")]
    NanLoss { epoch: usize, step: usize },
    #[error("image batch is {got} wide but model expects {expected} tabular features")]
    TabularWidthMismatch { got: usize, expected: usize },
    #[error("image count {images} != tabular rows {tabular}")]
    BatchMismatch { images: usize, tabular: usize },
    #[error(transparent)]
    Store(#[from] crate::tensorstore::StoreError),
    #[error("checkpoint {path} is missing entry {name}")]
    CheckpointIncomplete { path: String, name: String },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Dense-head hyperparameters (the one-at-a-time search axes).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub bn_layers: u8,
    pub neurons_1: usize,
    pub neurons_2: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            bn_layers: 1,
            neurons_1: 256,
            neurons_2: 512,
            dropout_rate: 0.5,
            activation: Activation::Relu,
        }
    }
}

/// Optimization settings. Defaults: Adam at 2e-4, batch 16, 10 epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            batch_size: 16,
            epochs: 10,
            seed: 0,
        }
    }
}

/// One task's ready-to-train tensors.
#[derive(Debug, Clone)]
pub struct TaskData {
    /// `[N, 3, H, W]` slice stacks in [0, 1].
    pub images: Array4<f64>,
    /// `[N, T]` tabular features.
    pub tabular: Array2<f64>,
    pub labels: Vec<usize>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Per-epoch curves; length equals the configured epoch count.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct Head {
    pub d1: Dense,
    pub bn1: Option<BatchNorm1d>,
    pub d2: Dense,
    pub bn2: Option<BatchNorm1d>,
    pub out: Dense,
    pub activation: Activation,
    pub dropout_rate: f64,
}

/// Everything the backward pass needs from one head forward.
pub struct HeadTape {
    x: Array2<f64>,
    z1: Array2<f64>,
    a1: Array2<f64>,
    bn1: Option<(Array2<f64>, Array1<f64>)>,
    h1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    bn2: Option<(Array2<f64>, Array1<f64>)>,
    h2: Array2<f64>,
    mask: Option<Array2<f64>>,
    dropped: Array2<f64>,
}

impl Head {
    fn new(cfg: &HeadConfig, in_width: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let dense = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| Dense {
            w: Param::new(glorot_uniform((fan_in, fan_out), fan_in, fan_out, rng)),
            b: Param::new(Array1::zeros(fan_out)),
        };
        Head {
            d1: dense(rng, in_width, cfg.neurons_1),
            bn1: (cfg.bn_layers >= 1).then(|| BatchNorm1d::new(cfg.neurons_1)),
            d2: dense(rng, cfg.neurons_1, cfg.neurons_2),
            bn2: (cfg.bn_layers >= 2).then(|| BatchNorm1d::new(cfg.neurons_2)),
            out: dense(rng, cfg.neurons_2, n_classes),
            activation: cfg.activation,
            dropout_rate: cfg.dropout_rate,
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let a = self.activation;
        let mut h = self.d1.forward(x).mapv(|v| a.apply_scalar(v));
        if let Some(bn) = &self.bn1 {
            h = bn.eval(&h);
        }
        let mut h2 = self.d2.forward(&h).mapv(|v| a.apply_scalar(v));
        if let Some(bn) = &self.bn2 {
            h2 = bn.eval(&h2);
        }
        self.out.forward(&h2)
    }

    /// Training-mode forward. `dropout_rng` of `None` bypasses dropout
    /// (used by the gradient check).
    pub fn forward_train(
        &mut self,
        x: &Array2<f64>,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, HeadTape) {
        let a = self.activation;
        let z1 = self.d1.forward(x);
        let a1 = z1.mapv(|v| a.apply_scalar(v));
        let (h1, bn1) = match &mut self.bn1 {
            Some(bn) => {
                let (y, xhat, invstd) = bn.train_forward(&a1);
                (y, Some((xhat, invstd)))
            }
            None => (a1.clone(), None),
        };
        let z2 = self.d2.forward(&h1);
        let a2 = z2.mapv(|v| a.apply_scalar(v));
        let (h2, bn2) = match &mut self.bn2 {
            Some(bn) => {
                let (y, xhat, invstd) = bn.train_forward(&a2);
                (y, Some((xhat, invstd)))
            }
            None => (a2.clone(), None),
        };
        let (dropped, mask) = match dropout_rng {
            Some(rng) if self.dropout_rate > 0.0 => {
                let keep = 1.0 - self.dropout_rate;
                let mask = Array2::from_shape_simple_fn(h2.raw_dim(), || {
                    if rng.gen_bool(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&h2 * &mask, Some(mask))
            }
            _ => (h2.clone(), None),
        };
        let logits = self.out.forward(&dropped);
        (
            logits,
            HeadTape {
                x: x.clone(),
                z1,
                a1,
                bn1,
                h1,
                z2,
                a2,
                bn2,
                h2,
                mask,
                dropped,
            },
        )
    }

    /// Accumulate parameter gradients; returns d(input).
    pub fn backward(&mut self, tape: &HeadTape, dlogits: &Array2<f64>) -> Array2<f64> {
        let a = self.activation;
        let mut d = self.out.backward(&tape.dropped, dlogits);
        if let Some(mask) = &tape.mask {
            d = &d * mask;
        }
        let _ = &tape.h2;
        if let (Some(bn), Some((xhat, invstd))) = (&mut self.bn2, &tape.bn2) {
            d = bn.backward(xhat, invstd, &d);
        }
        let mut da2 = d;
        ndarray::Zip::from(&mut da2).and(&tape.z2).for_each(|g, &z| {
            *g *= a.derivative(z);
        });
        let _ = &tape.a2;
        let mut d = self.d2.backward(&tape.h1, &da2);
        if let (Some(bn), Some((xhat, invstd))) = (&mut self.bn1, &tape.bn1) {
            d = bn.backward(xhat, invstd, &d);
        }
        let mut da1 = d;
        ndarray::Zip::from(&mut da1).and(&tape.z1).for_each(|g, &z| {
            *g *= a.derivative(z);
        });
        let _ = &tape.a1;
        self.d1.backward(&tape.x, &da1)
    }

    pub fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        let dense = |name: &str, d: &mut Dense, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])| {
            f(
                &format!("head.{name}.w"),
                d.w.v.as_slice_mut().unwrap(),
                d.w.g.as_slice_mut().unwrap(),
            );
            f(
                &format!("head.{name}.b"),
                d.b.v.as_slice_mut().unwrap(),
                d.b.g.as_slice_mut().unwrap(),
            );
        };
        dense("d1", &mut self.d1, f);
        if let Some(bn) = &mut self.bn1 {
            visit_bn1d("head.bn1", bn, f);
        }
        dense("d2", &mut self.d2, f);
        if let Some(bn) = &mut self.bn2 {
            visit_bn1d("head.bn2", bn, f);
        }
        dense("out", &mut self.out, f);
    }
}

fn visit_bn1d(prefix: &str, bn: &mut BatchNorm1d, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
    f(
        &format!("{prefix}.gamma"),
        bn.gamma.v.as_slice_mut().unwrap(),
        bn.gamma.g.as_slice_mut().unwrap(),
    );
    f(
        &format!("{prefix}.beta"),
        bn.beta.v.as_slice_mut().unwrap(),
        bn.beta.g.as_slice_mut().unwrap(),
    );
    let mut empty: [f64; 0] = [];
    f(
        &format!("{prefix}.moving_mean"),
        bn.moving_mean.as_slice_mut().unwrap(),
        &mut empty,
    );
    let mut empty2: [f64; 0] = [];
    f(
        &format!("{prefix}.moving_var"),
        bn.moving_var.as_slice_mut().unwrap(),
        &mut empty2,
    );
}

/// The assembled dual-input model.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub backbone: Backbone,
    pub head: Head,
    pub head_config: HeadConfig,
    pub n_classes: usize,
    pub tabular_width: usize,
    pub seed: u64,
}

impl FusionModel {
    /// Fused input width: pooled feature dim plus tabular width.
    pub fn fused_width(&self) -> usize {
        self.backbone.info.feature_dim + self.tabular_width
    }

    pub fn visit_trainable(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        if self.backbone.spec.trainable {
            self.backbone.graph.visit_params(f);
        }
        self.head.visit_params(f);
    }

    pub fn visit_all(&mut self, f: &mut dyn FnMut(&str, &mut [f64], &mut [f64])) {
        self.backbone.graph.visit_params(f);
        self.head.visit_params(f);
    }

    /// Snapshot of backbone parameter bits, for freeze verification.
    pub fn backbone_param_bits(&mut self) -> Vec<u64> {
        let mut out = Vec::new();
        self.backbone
            .graph
            .visit_params(&mut |_, v, _| out.extend(v.iter().map(|x| x.to_bits())));
        out
    }

    /// Pooled backbone features for a [0,1] image batch, preprocessing
    /// included. Batched to bound peak memory.
    pub fn extract_features(&self, images: &Array4<f64>, batch: usize) -> Result<Array2<f64>> {
        let n = images.shape()[0];
        let mut out = Array2::<f64>::zeros((n, self.backbone.info.feature_dim));
        let mut start = 0;
        while start < n {
            let end = (start + batch.max(1)).min(n);
            let chunk = images.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let pre = self.backbone.preprocess(&chunk);
            let feats = self.backbone.features(&pre)?;
            out.slice_mut(ndarray::s![start..end, ..]).assign(&feats);
            start = end;
        }
        Ok(out)
    }
}

/// Build the dual-input model with seeded initialization.
pub fn build_model(
    backbone_spec: &BackboneSpec,
    head_cfg: &HeadConfig,
    n_classes: usize,
    tabular_width: usize,
    seed: u64,
    weights_dir: Option<&std::path::Path>,
) -> Result<FusionModel> {
    if tabular_width == 0 {
        return Err(ModelError::ZeroTabularWidth);
    }
    if !(2..=3).contains(&n_classes) {
        return Err(ModelError::BadClassCount(n_classes));
    }
    if head_cfg.bn_layers > 2 {
        return Err(ModelError::BadBnLayers(head_cfg.bn_layers));
    }
    if !(0.0..1.0).contains(&head_cfg.dropout_rate) {
        return Err(ModelError::BadDropout(head_cfg.dropout_rate));
    }
    let backbone = build_backbone(backbone_spec, seed, weights_dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x9e3779b97f4a7c15));
    let head = Head::new(
        head_cfg,
        backbone.info.feature_dim + tabular_width,
        n_classes,
        &mut rng,
    );
    Ok(FusionModel {
        backbone,
        head,
        head_config: *head_cfg,
        n_classes,
        tabular_width,
        seed,
    })
}

fn fuse(features: &Array2<f64>, tabular: &Array2<f64>) -> Result<Array2<f64>> {
    if features.shape()[0] != tabular.shape()[0] {
        return Err(ModelError::BatchMismatch {
            images: features.shape()[0],
            tabular: tabular.shape()[0],
        });
    }
    Ok(ndarray::concatenate(Axis(1), &[features.view(), tabular.view()]).expect("row counts match"))
}

fn check_labels(labels: &[usize], n_classes: usize) -> Result<()> {
    for (index, &label) in labels.iter().enumerate() {
        if label >= n_classes {
            return Err(ModelError::LabelOutOfRange {
                label,
                n_classes,
                index,
            });
        }
    }
    Ok(())
}

/// Batch size used when extracting features from a frozen backbone.
pub const FEATURE_BATCH: usize = 8;

/// Train the model. With a frozen backbone (the default), pooled features
/// are extracted once and only the head trains; with `trainable = true`
/// gradients flow through the whole graph.
pub fn train(
    model: FusionModel,
    train_data: &TaskData,
    val_data: &TaskData,
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainHistory)> {
    if cfg.epochs == 0 {
        return Err(ModelError::ZeroEpochs);
    }
    if train_data.is_empty() {
        return Err(ModelError::EmptyPartition("train"));
    }
    if val_data.is_empty() {
        return Err(ModelError::EmptyPartition("validation"));
    }
    check_labels(&train_data.labels, model.n_classes)?;
    check_labels(&val_data.labels, model.n_classes)?;
    if train_data.tabular.shape()[1] != model.tabular_width {
        return Err(ModelError::TabularWidthMismatch {
            got: train_data.tabular.shape()[1],
            expected: model.tabular_width,
        });
    }

    if model.backbone.spec.trainable {
        train_unfrozen(model, train_data, val_data, cfg)
    } else {
        let feat_train = model.extract_features(&train_data.images, FEATURE_BATCH)?;
        let feat_val = model.extract_features(&val_data.images, FEATURE_BATCH)?;
        train_on_features(
            model,
            &feat_train,
            &train_data.tabular,
            &train_data.labels,
            &feat_val,
            &val_data.tabular,
            &val_data.labels,
            cfg,
        )
    }
}

/// Head-only training against precomputed backbone features. This is the
/// fast path the experiment sweeps use so one feature extraction serves
/// every trial.
#[allow(clippy::too_many_arguments)]
pub fn train_on_features(
    mut model: FusionModel,
    feat_train: &Array2<f64>,
    tab_train: &Array2<f64>,
    y_train: &[usize],
    feat_val: &Array2<f64>,
    tab_val: &Array2<f64>,
    y_val: &[usize],
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainHistory)> {
    if cfg.epochs == 0 {
        return Err(ModelError::ZeroEpochs);
    }
    check_labels(y_train, model.n_classes)?;
    check_labels(y_val, model.n_classes)?;
    let fused_train = fuse(feat_train, tab_train)?;
    let fused_val = fuse(feat_val, tab_val)?;
    let n = y_train.len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let xb = gather_rows(&fused_train, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| y_train[i]).collect();

            model.head.visit_params(&mut |_, _, g| g.fill(0.0));
            let (logits, tape) = model.head.forward_train(&xb, Some(&mut rng));
            let probs = softmax(&logits);
            let loss = cross_entropy(&probs, &yb);
            if !loss.is_finite() {
                return Err(ModelError::NanLoss { epoch, step });
            }
            loss_sum += loss * yb.len() as f64;
            correct += count_correct(&probs, &yb);
            let dlogits = softmax_ce_grad(&probs, &yb);
            model.head.backward(&tape, &dlogits);
            adam.step(|f| model.head.visit_params(f));
        }

        let (val_loss, val_acc) = evaluate_fused(&model, &fused_val, y_val);
        if !val_loss.is_finite() {
            return Err(ModelError::NanLoss {
                epoch,
                step: usize::MAX,
            });
        }
        history.epochs.push(EpochStats {
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
        });
    }
    Ok((model, history))
}

fn train_unfrozen(
    mut model: FusionModel,
    train_data: &TaskData,
    val_data: &TaskData,
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainHistory)> {
    let n = train_data.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = Adam::new(cfg.learning_rate);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let images = gather_images(&train_data.images, chunk);
            let pre = model.backbone.preprocess(&images);
            let tab = gather_rows(&train_data.tabular, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| train_data.labels[i]).collect();

            model.visit_trainable(&mut |_, _, g| g.fill(0.0));
            let (feats, graph_tape) = model.backbone.graph.forward_train(&pre)?;
            let fused = fuse(&feats, &tab)?;
            let (logits, head_tape) = model.head.forward_train(&fused, Some(&mut rng));
            let probs = softmax(&logits);
            let loss = cross_entropy(&probs, &yb);
            if !loss.is_finite() {
                return Err(ModelError::NanLoss { epoch, step });
            }
            loss_sum += loss * yb.len() as f64;
            correct += count_correct(&probs, &yb);

            let dlogits = softmax_ce_grad(&probs, &yb);
            let dfused = model.head.backward(&head_tape, &dlogits);
            let dfeat = dfused
                .slice(ndarray::s![.., ..model.backbone.info.feature_dim])
                .to_owned();
            model.backbone.graph.backward(&graph_tape, &dfeat)?;
            adam.step(|f| model.visit_trainable(f));
        }

        let feat_val = model.extract_features(&val_data.images, FEATURE_BATCH)?;
        let fused_val = fuse(&feat_val, &val_data.tabular)?;
        let (val_loss, val_acc) = evaluate_fused(&model, &fused_val, &val_data.labels);
        history.epochs.push(EpochStats {
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
        });
    }
    Ok((model, history))
}

fn gather_rows(m: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((idx.len(), m.shape()[1]));
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).assign(&m.row(i));
    }
    out
}

fn gather_images(images: &Array4<f64>, idx: &[usize]) -> Array4<f64> {
    let s = images.shape();
    let mut out = Array4::<f64>::zeros((idx.len(), s[1], s[2], s[3]));
    for (r, &i) in idx.iter().enumerate() {
        out.index_axis_mut(Axis(0), r)
            .assign(&images.index_axis(Axis(0), i));
    }
    out
}

fn count_correct(probs: &Array2<f64>, labels: &[usize]) -> usize {
    probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax_row(*row) == y)
        .count()
}

fn evaluate_fused(model: &FusionModel, fused: &Array2<f64>, labels: &[usize]) -> (f64, f64) {
    let logits = model.head.forward_eval(fused);
    let probs = softmax(&logits);
    let loss = cross_entropy(&probs, labels);
    let acc = count_correct(&probs, labels) as f64 / labels.len() as f64;
    (loss, acc)
}

/// Class probabilities and argmax labels for a dataset (inference mode).
pub fn predict(model: &FusionModel, data: &TaskData) -> Result<(Array2<f64>, Vec<usize>)> {
    let feats = model.extract_features(&data.images, FEATURE_BATCH)?;
    let fused = fuse(&feats, &data.tabular)?;
    predict_on_features_fused(model, &fused)
}

/// Prediction against already-fused features.
pub fn predict_on_features_fused(
    model: &FusionModel,
    fused: &Array2<f64>,
) -> Result<(Array2<f64>, Vec<usize>)> {
    let logits = model.head.forward_eval(fused);
    let probs = softmax(&logits);
    let labels = probs.rows().into_iter().map(argmax_row).collect();
    Ok((probs, labels))
}

/// Maximum relative error between analytic and central finite-difference
/// gradients over a sampled subset of head parameters.
///
/// Runs with dropout bypassed; batch-norm layers use batch statistics with
/// model state restored around every probe so the loss is a deterministic
/// function of the parameters.
pub fn gradient_check(
    model: &FusionModel,
    fused: &Array2<f64>,
    labels: &[usize],
    n_probes: usize,
    fd_step: f64,
) -> Result<f64> {
    check_labels(labels, model.n_classes)?;
    let pristine = model.clone();

    // analytic gradients
    let mut work = pristine.clone();
    work.head.visit_params(&mut |_, _, g| g.fill(0.0));
    let (logits, tape) = work.head.forward_train(fused, None);
    let probs = softmax(&logits);
    let dlogits = softmax_ce_grad(&probs, labels);
    work.head.backward(&tape, &dlogits);

    let mut analytic = Vec::new();
    work.head.visit_params(&mut |name, v, g| {
        if !g.is_empty() {
            for i in 0..v.len() {
                analytic.push((name.to_string(), i, g[i]));
            }
        }
    });

    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut max_rel = 0.0f64;
    let probes = n_probes.min(analytic.len());
    for _ in 0..probes {
        let pick = rng.gen_range(0..analytic.len());
        let (name, idx, g_analytic) = analytic[pick].clone();

        let loss_at = |delta: f64| -> f64 {
            let mut m = pristine.clone();
            m.head.visit_params(&mut |n, v, _| {
                if n == name {
                    v[idx] += delta;
                }
            });
            let (logits, _) = m.head.forward_train(fused, None);
            let probs = softmax(&logits);
            cross_entropy(&probs, labels)
        };
        let fd = (loss_at(fd_step) - loss_at(-fd_step)) / (2.0 * fd_step);
        let denom = g_analytic.abs().max(fd.abs()).max(1e-8);
        max_rel = max_rel.max((fd - g_analytic).abs() / denom);
    }
    Ok(max_rel)
}

/// Checkpoint metadata stored alongside the weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub backbone: BackboneSpec,
    pub head: HeadConfig,
    pub n_classes: usize,
    pub tabular_width: usize,
    pub seed: u64,
    /// Cohort age-normalization constants for inference-time reuse.
    pub age_norm: Option<crate::cohort::AgeNormalization>,
}

/// Save the model (all parameters plus metadata) as one archive file.
pub fn save_checkpoint(
    model: &mut FusionModel,
    meta_extra: Option<crate::cohort::AgeNormalization>,
    path: &std::path::Path,
) -> Result<()> {
    let mut store = TensorStore::new();
    model.visit_all(&mut |name, v, _| {
        store.insert(name, &[v.len()], v.to_vec());
    });
    let meta = CheckpointMeta {
        backbone: model.backbone.spec,
        head: model.head_config,
        n_classes: model.n_classes,
        tabular_width: model.tabular_width,
        seed: model.seed,
        age_norm: meta_extra,
    };
    store.meta.insert(
        "model".to_string(),
        serde_json::to_string(&meta).expect("meta serializes"),
    );
    store.write(path)?;
    Ok(())
}

/// Rebuild a model from a checkpoint archive.
pub fn load_checkpoint(path: &std::path::Path) -> Result<(FusionModel, CheckpointMeta)> {
    let store = TensorStore::read(path)?;
    let meta: CheckpointMeta = serde_json::from_str(
        store
            .meta
            .get("model")
            .ok_or_else(|| ModelError::CheckpointIncomplete {
                path: path.display().to_string(),
                name: "meta.model".into(),
            })?,
    )
    .map_err(|e| ModelError::CheckpointIncomplete {
        path: path.display().to_string(),
        name: format!("meta.model ({e})"),
    })?;
    // Weights come from the archive, so build with random initialization
    // regardless of the recorded weight source.
    let build_spec = BackboneSpec {
        weights: crate::backbones::WeightSource::Random,
        ..meta.backbone
    };
    let mut model = build_model(
        &build_spec,
        &meta.head,
        meta.n_classes,
        meta.tabular_width,
        meta.seed,
        None,
    )?;
    let mut missing: Option<String> = None;
    model.visit_all(&mut |name, v, _| {
        match store.get(name) {
            Some(values) if values.len() == v.len() => v.copy_from_slice(values),
            _ => missing = Some(name.to_string()),
        }
    });
    if let Some(name) = missing {
        return Err(ModelError::CheckpointIncomplete {
            path: path.display().to_string(),
            name,
        });
    }
    model.backbone.spec = meta.backbone;
    Ok((model, meta))
}
