//! Backbone registry: the eight transfer-learning architectures compared in
//! the study plus a tiny CPU-friendly test network.
//!
//! Each entry builds the convolutional trunk up to global average pooling
//! as a [`Graph`]. Weights are either randomly initialized from a seed or
//! loaded from a converted-weights cache directory (`GLIOPRED_WEIGHTS_DIR`
//! or an explicit path); there is no network download — a missing archive
//! is a hard error so offline runs fail fast.

mod densenet;
mod efficientnet;
mod inception_resnet_v2;
mod inception_v3;
mod resnet;
mod tiny;
mod vgg;

use std::path::{Path, PathBuf};

use ndarray::{Array4, Ix3, Ix4};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::graph::{Graph, Op};
use crate::nn::init::glorot_uniform;
use crate::nn::ops::{Activation, BatchNorm2d, Conv2d, DwConv2d, Padding, PadSpec, Pool2d};
use crate::nn::Param;

/// Environment variable naming the converted-weights cache directory.
pub const WEIGHTS_DIR_ENV: &str = "GLIOPRED_WEIGHTS_DIR";

#[derive(Debug, Error)]
pub enum BackboneError {
    #[error("unknown backbone id '{0}'")]
    UnknownId(String),
    #[error(
        "pretrained weights for {id} not found at {path}; set {WEIGHTS_DIR_ENV} to a directory \
         holding converted archives (offline mode never downloads)"
    )]
    WeightsUnavailable { id: BackboneId, path: PathBuf },
    #[error("weight archive {path} does not match {id}: {detail}")]
    WeightsMismatch {
        id: BackboneId,
        path: PathBuf,
        detail: String,
    },
    #[error(transparent)]
    Store(#[from] crate::tensorstore::StoreError),
}

pub type Result<T> = std::result::Result<T, BackboneError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneId {
    Resnet50,
    Resnet101,
    EfficientnetB4,
    Vgg16,
    InceptionV3,
    InceptionResnetV2,
    Densenet121,
    Densenet201,
    TinyTest,
}

impl BackboneId {
    pub const ALL: [BackboneId; 9] = [
        BackboneId::Resnet50,
        BackboneId::Resnet101,
        BackboneId::EfficientnetB4,
        BackboneId::Vgg16,
        BackboneId::InceptionV3,
        BackboneId::InceptionResnetV2,
        BackboneId::Densenet121,
        BackboneId::Densenet201,
        BackboneId::TinyTest,
    ];

    /// The eight architectures from the comparison study, in table order.
    pub const PAPER_SET: [BackboneId; 8] = [
        BackboneId::Resnet50,
        BackboneId::Resnet101,
        BackboneId::EfficientnetB4,
        BackboneId::Vgg16,
        BackboneId::InceptionV3,
        BackboneId::InceptionResnetV2,
        BackboneId::Densenet121,
        BackboneId::Densenet201,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BackboneId::Resnet50 => "resnet50",
            BackboneId::Resnet101 => "resnet101",
            BackboneId::EfficientnetB4 => "efficientnet_b4",
            BackboneId::Vgg16 => "vgg16",
            BackboneId::InceptionV3 => "inception_v3",
            BackboneId::InceptionResnetV2 => "inception_resnet_v2",
            BackboneId::Densenet121 => "densenet121",
            BackboneId::Densenet201 => "densenet201",
            BackboneId::TinyTest => "tiny_test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|b| b.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| BackboneError::UnknownId(s.to_string()))
    }

    pub fn info(self) -> BackboneInfo {
        registry()
            .iter()
            .find(|i| i.id == self)
            .copied()
            .expect("every id is registered")
    }
}

impl std::fmt::Display for BackboneId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Input transform from the pipeline's [0,1] slice stacks to what the
/// backbone family was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preprocess {
    /// Identity; values stay in [0,1].
    Unit,
    /// Scale to 0-255, reorder RGB->BGR, subtract the BGR channel means.
    CaffeBgr,
    /// Subtract ImageNet channel means and divide by channel stds in [0,1].
    TorchRgb,
    /// Map [0,1] to [-1,1].
    InceptionPm1,
}

/// Static facts about one registered backbone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneInfo {
    pub id: BackboneId,
    /// Width of the pooled feature vector.
    pub feature_dim: usize,
    /// Smallest square input the trunk accepts.
    pub min_input: usize,
    pub preprocess: Preprocess,
}

/// All registered backbones.
pub fn registry() -> &'static [BackboneInfo] {
    use BackboneId::*;
    use Preprocess::*;
    &[
        BackboneInfo { id: Resnet50, feature_dim: 2048, min_input: 32, preprocess: CaffeBgr },
        BackboneInfo { id: Resnet101, feature_dim: 2048, min_input: 32, preprocess: CaffeBgr },
        BackboneInfo { id: EfficientnetB4, feature_dim: 1792, min_input: 32, preprocess: TorchRgb },
        BackboneInfo { id: Vgg16, feature_dim: 512, min_input: 32, preprocess: CaffeBgr },
        BackboneInfo { id: InceptionV3, feature_dim: 2048, min_input: 75, preprocess: InceptionPm1 },
        BackboneInfo { id: InceptionResnetV2, feature_dim: 1536, min_input: 75, preprocess: InceptionPm1 },
        BackboneInfo { id: Densenet121, feature_dim: 1024, min_input: 32, preprocess: TorchRgb },
        BackboneInfo { id: Densenet201, feature_dim: 1920, min_input: 32, preprocess: TorchRgb },
        BackboneInfo { id: TinyTest, feature_dim: 32, min_input: 8, preprocess: Unit },
    ]
}

/// Where backbone weights come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// Converted ImageNet weights from the local cache directory.
    PretrainedImagenet,
    /// Seeded random initialization (structure only).
    #[default]
    Random,
}

/// A backbone selection: which trunk, which weights, and whether its
/// parameters train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: BackboneId,
    #[serde(default)]
    pub weights: WeightSource,
    #[serde(default)]
    pub trainable: bool,
}

impl BackboneSpec {
    pub fn random(id: BackboneId) -> Self {
        BackboneSpec {
            id,
            weights: WeightSource::Random,
            trainable: false,
        }
    }
}

/// A built trunk: graph ending in global average pooling.
#[derive(Debug, Clone)]
pub struct Backbone {
    pub graph: Graph,
    pub info: BackboneInfo,
    pub spec: BackboneSpec,
}

impl Backbone {
    /// Pooled features for a preprocessed batch.
    pub fn features(&self, x: &Array4<f64>) -> crate::nn::ops::Result<ndarray::Array2<f64>> {
        self.graph.features(x)
    }

    /// Apply this backbone's canonical input transform to a [0,1] batch.
    pub fn preprocess(&self, x: &Array4<f64>) -> Array4<f64> {
        apply_preprocess(self.info.preprocess, x)
    }

    pub fn param_count(&mut self) -> usize {
        self.graph.param_count()
    }
}

pub fn apply_preprocess(p: Preprocess, x: &Array4<f64>) -> Array4<f64> {
    match p {
        Preprocess::Unit => x.clone(),
        Preprocess::CaffeBgr => {
            let mut y = x.clone();
            // channel order becomes BGR
            y.index_axis_mut(ndarray::Axis(1), 0)
                .assign(&x.index_axis(ndarray::Axis(1), 2));
            y.index_axis_mut(ndarray::Axis(1), 2)
                .assign(&x.index_axis(ndarray::Axis(1), 0));
            let means = [103.939, 116.779, 123.68];
            for (c, m) in means.iter().enumerate() {
                y.index_axis_mut(ndarray::Axis(1), c)
                    .mapv_inplace(|v| v * 255.0 - m);
            }
            y
        }
        Preprocess::TorchRgb => {
            let mean = [0.485, 0.456, 0.406];
            let std = [0.229, 0.224, 0.225];
            let mut y = x.clone();
            for c in 0..3 {
                y.index_axis_mut(ndarray::Axis(1), c)
                    .mapv_inplace(|v| (v - mean[c]) / std[c]);
            }
            y
        }
        Preprocess::InceptionPm1 => x.mapv(|v| v * 2.0 - 1.0),
    }
}

/// Build a backbone. Random weights are drawn from `seed`; pretrained
/// weights load from `weights_dir` (or the env var) and fail fast when the
/// archive is missing.
pub fn build_backbone(
    spec: &BackboneSpec,
    seed: u64,
    weights_dir: Option<&Path>,
) -> Result<Backbone> {
    let info = spec.id.info();
    let mut b = Builder::new(seed ^ fxhash(info.id.name()));
    let graph = match spec.id {
        BackboneId::Resnet50 => resnet::build(&mut b, &[3, 4, 6, 3]),
        BackboneId::Resnet101 => resnet::build(&mut b, &[3, 4, 23, 3]),
        BackboneId::EfficientnetB4 => efficientnet::build_b4(&mut b),
        BackboneId::Vgg16 => vgg::build(&mut b),
        BackboneId::InceptionV3 => inception_v3::build(&mut b),
        BackboneId::InceptionResnetV2 => inception_resnet_v2::build(&mut b),
        BackboneId::Densenet121 => densenet::build(&mut b, &[6, 12, 24, 16]),
        BackboneId::Densenet201 => densenet::build(&mut b, &[6, 12, 48, 32]),
        BackboneId::TinyTest => tiny::build(&mut b),
    };
    let mut backbone = Backbone {
        graph,
        info,
        spec: *spec,
    };
    if spec.weights == WeightSource::PretrainedImagenet {
        let dir = weights_dir
            .map(PathBuf::from)
            .or_else(|| std::env::var_os(WEIGHTS_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("weights"));
        let path = dir.join(format!("{}.tensors", info.id.name()));
        if !path.is_file() {
            return Err(BackboneError::WeightsUnavailable { id: info.id, path });
        }
        load_weights(&mut backbone, &path)?;
    }
    Ok(backbone)
}

/// Load a converted-weights archive into the backbone, by parameter name.
pub fn load_weights(backbone: &mut Backbone, path: &Path) -> Result<()> {
    let store = crate::tensorstore::TensorStore::read(path)?;
    let mut missing = Vec::new();
    backbone.graph.visit_params(&mut |name, v, _| {
        match store.get(name) {
            Some(values) if values.len() == v.len() => v.copy_from_slice(values),
            Some(values) => missing.push(format!(
                "{name}: expected {} values, archive has {}",
                v.len(),
                values.len()
            )),
            None => missing.push(format!("{name}: absent from archive")),
        }
    });
    if !missing.is_empty() {
        return Err(BackboneError::WeightsMismatch {
            id: backbone.info.id,
            path: path.to_path_buf(),
            detail: missing.join("; "),
        });
    }
    Ok(())
}

/// Save a backbone's weights as an archive (the converse of
/// [`load_weights`]; used by conversion tooling and tests).
pub fn save_weights(backbone: &mut Backbone, path: &Path) -> Result<()> {
    let mut store = crate::tensorstore::TensorStore::new();
    backbone.graph.visit_params(&mut |name, v, _| {
        store.insert(name, &[v.len()], v.to_vec());
    });
    store.write(path)?;
    Ok(())
}

fn fxhash(s: &str) -> u64 {
    // tiny stable string hash for per-architecture seed separation
    s.bytes().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Graph-building helper that tracks per-node channel counts and owns the
/// weight-init RNG.
pub(crate) struct Builder {
    pub g: Graph,
    pub rng: ChaCha8Rng,
    channels: Vec<usize>,
}

impl Builder {
    fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        Builder {
            g: Graph::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            channels: vec![3],
        }
    }

    pub fn input(&self) -> usize {
        0
    }

    pub fn channels(&self, node: usize) -> usize {
        self.channels[node]
    }

    fn push(&mut self, op: Op, inputs: &[usize], out_ch: usize) -> usize {
        let id = self.g.push(op, inputs);
        self.channels.push(out_ch);
        debug_assert_eq!(self.channels.len(), self.g.nodes.len());
        id
    }

    pub fn conv(
        &mut self,
        input: usize,
        out_ch: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: Padding,
        bias: bool,
    ) -> usize {
        let in_ch = self.channels[input];
        let fan_in = in_ch * k.0 * k.1;
        let fan_out = out_ch * k.0 * k.1;
        let w = glorot_uniform::<Ix4, _>(
            (out_ch, in_ch, k.0, k.1),
            fan_in,
            fan_out,
            &mut self.rng,
        );
        let b = bias.then(|| Param::new(ndarray::Array1::zeros(out_ch)));
        let conv = Conv2d {
            w: Param::new(w),
            b,
            stride,
            pad,
        };
        self.push(Op::Conv(conv), &[input], out_ch)
    }

    pub fn dwconv(
        &mut self,
        input: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: Padding,
    ) -> usize {
        let ch = self.channels[input];
        let w = glorot_uniform::<Ix3, _>((ch, k.0, k.1), k.0 * k.1, k.0 * k.1, &mut self.rng);
        let conv = DwConv2d {
            w: Param::new(w),
            b: None,
            stride,
            pad,
        };
        self.push(Op::DwConv(conv), &[input], ch)
    }

    pub fn bn(&mut self, input: usize, scale: bool, eps: f64) -> usize {
        let ch = self.channels[input];
        self.push(Op::Bn(BatchNorm2d::new(ch, scale, eps)), &[input], ch)
    }

    pub fn act(&mut self, input: usize, a: Activation) -> usize {
        let ch = self.channels[input];
        self.push(Op::Act(a), &[input], ch)
    }

    pub fn maxpool(&mut self, input: usize, k: usize, stride: usize, pad: Padding) -> usize {
        let ch = self.channels[input];
        self.push(
            Op::MaxPool(Pool2d {
                k: (k, k),
                stride: (stride, stride),
                pad,
            }),
            &[input],
            ch,
        )
    }

    pub fn avgpool(&mut self, input: usize, k: usize, stride: usize, pad: Padding) -> usize {
        let ch = self.channels[input];
        self.push(
            Op::AvgPool(Pool2d {
                k: (k, k),
                stride: (stride, stride),
                pad,
            }),
            &[input],
            ch,
        )
    }

    pub fn zeropad(&mut self, input: usize, spec: PadSpec) -> usize {
        let ch = self.channels[input];
        self.push(Op::ZeroPad(spec), &[input], ch)
    }

    pub fn gap(&mut self, input: usize, keepdims: bool) -> usize {
        let ch = self.channels[input];
        self.push(Op::GlobalAvgPool { keepdims }, &[input], ch)
    }

    pub fn add(&mut self, inputs: &[usize]) -> usize {
        let ch = self.channels[inputs[0]];
        self.push(Op::Add, inputs, ch)
    }

    pub fn scale(&mut self, input: usize, s: f64) -> usize {
        let ch = self.channels[input];
        self.push(Op::Scale(s), &[input], ch)
    }

    pub fn scale_channels(&mut self, x: usize, s: usize) -> usize {
        let ch = self.channels[x];
        self.push(Op::ScaleChannels, &[x, s], ch)
    }

    pub fn concat(&mut self, inputs: &[usize]) -> usize {
        let ch = inputs.iter().map(|&i| self.channels[i]).sum();
        self.push(Op::ConcatC, inputs, ch)
    }
}
