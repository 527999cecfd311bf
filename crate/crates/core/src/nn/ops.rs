//! Layer primitives with explicit forward/backward passes (NCHW layout).

use ndarray::{Array1, Array2, Array3, Array4, ArrayView3, Ix1, Ix2, Ix4};
use thiserror::Error;

use super::{Param, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("{op}: input too small: {detail}")]
    InputTooSmall { op: &'static str, detail: String },
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Spatial padding scheme. `Same` follows the TensorFlow convention: output
/// size ceil(in/stride), with any odd padding placed at the bottom/right.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Valid,
    Same,
    Explicit {
        top: usize,
        bottom: usize,
        left: usize,
        right: usize,
    },
}

impl Padding {
    /// Returns (pad_top, pad_left, out_h, out_w).
    fn resolve(
        &self,
        op: &'static str,
        in_h: usize,
        in_w: usize,
        kh: usize,
        kw: usize,
        sh: usize,
        sw: usize,
    ) -> Result<(usize, usize, usize, usize)> {
        match *self {
            Padding::Valid => {
                if in_h < kh || in_w < kw {
                    return Err(NnError::InputTooSmall {
                        op,
                        detail: format!("{in_h}x{in_w} vs kernel {kh}x{kw}"),
                    });
                }
                Ok((0, 0, (in_h - kh) / sh + 1, (in_w - kw) / sw + 1))
            }
            Padding::Same => {
                let oh = in_h.div_ceil(sh);
                let ow = in_w.div_ceil(sw);
                let ph = ((oh - 1) * sh + kh).saturating_sub(in_h);
                let pw = ((ow - 1) * sw + kw).saturating_sub(in_w);
                Ok((ph / 2, pw / 2, oh, ow))
            }
            Padding::Explicit { top, bottom, left, right } => {
                let h = in_h + top + bottom;
                let w = in_w + left + right;
                if h < kh || w < kw {
                    return Err(NnError::InputTooSmall {
                        op,
                        detail: format!("padded {h}x{w} vs kernel {kh}x{kw}"),
                    });
                }
                Ok((top, left, (h - kh) / sh + 1, (w - kw) / sw + 1))
            }
        }
    }
}

/// Data cached by the forward pass for use in backward.
#[derive(Debug, Clone)]
pub enum OpCache {
    None,
    Conv { cols: Vec<Array2<f64>> },
    Bn { xhat: Array4<f64>, invstd: Array1<f64> },
    MaxPool { argmax: Vec<(usize, usize)> },
}

fn unfold(
    x: ArrayView3<f64>,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (c_in, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut col = Array2::<f64>::zeros((c_in * kh * kw, oh * ow));
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oi in 0..oh {
                    let ii = (oi * sh + ki) as isize - pt as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * sw + kj) as isize - pl as isize;
                        if jj >= 0 && jj < w as isize {
                            col[(row, oi * ow + oj)] = x[(c, ii as usize, jj as usize)];
                        }
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn fold_into(
    dx: &mut ndarray::ArrayViewMut3<f64>,
    dcol: &Array2<f64>,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    pt: usize,
    pl: usize,
    oh: usize,
    ow: usize,
) {
    let (c_in, h, w) = (dx.shape()[0], dx.shape()[1], dx.shape()[2]);
    for c in 0..c_in {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                for oi in 0..oh {
                    let ii = (oi * sh + ki) as isize - pt as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..ow {
                        let jj = (oj * sw + kj) as isize - pl as isize;
                        if jj >= 0 && jj < w as isize {
                            dx[(c, ii as usize, jj as usize)] += dcol[(row, oi * ow + oj)];
                        }
                    }
                }
            }
        }
    }
}

/// Standard 2-D convolution; weights are `[out_ch, in_ch, kh, kw]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param<Ix4>,
    pub b: Option<Param<Ix1>>,
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl Conv2d {

    pub fn forward(&self, x: &Array4<f64>, keep_cols: bool) -> Result<(Array4<f64>, OpCache)> {
        let (n, c, h, w) = dim4(x);
        let ws = self.w.v.shape();
        let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        if c != ic {
            return Err(NnError::Shape {
                op: "conv2d",
                detail: format!("input channels {c} vs weight {ic}"),
            });
        }
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("conv2d", h, w, kh, kw, sh, sw)?;
        let w2 = self
            .w
            .v
            .view()
            .into_shape_with_order((oc, ic * kh * kw))
            .expect("contiguous weight");
        let mut y = Array4::<f64>::zeros((n, oc, oh, ow));
        let mut cols = Vec::new();
        for ni in 0..n {
            let col = unfold(
                x.index_axis(ndarray::Axis(0), ni),
                kh,
                kw,
                sh,
                sw,
                pt,
                pl,
                oh,
                ow,
            );
            let y2 = w2.dot(&col); // [oc, oh*ow]
            let mut yn = y.index_axis_mut(ndarray::Axis(0), ni);
            let mut y3 = y2.into_shape_with_order((oc, oh, ow)).unwrap();
            if let Some(b) = &self.b {
                for ci in 0..oc {
                    y3.index_axis_mut(ndarray::Axis(0), ci)
                        .mapv_inplace(|v| v + b.v[ci]);
                }
            }
            yn.assign(&y3);
            if keep_cols {
                cols.push(col);
            }
        }
        let cache = if keep_cols {
            OpCache::Conv { cols }
        } else {
            OpCache::None
        };
        Ok((y, cache))
    }

    pub fn backward(
        &mut self,
        x: &Array4<f64>,
        cache: &OpCache,
        dy: &Array4<f64>,
    ) -> Result<Array4<f64>> {
        let OpCache::Conv { cols } = cache else {
            return Err(NnError::Shape {
                op: "conv2d",
                detail: "missing column cache".into(),
            });
        };
        let (n, _c, h, w) = dim4(x);
        let ws = self.w.v.shape();
        let (oc, ic, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("conv2d", h, w, kh, kw, sh, sw)?;
        let w2 = self
            .w
            .v
            .view()
            .into_shape_with_order((oc, ic * kh * kw))
            .unwrap();
        let mut dx = Array4::<f64>::zeros(x.raw_dim());
        let mut dw2 = Array2::<f64>::zeros((oc, ic * kh * kw));
        for ni in 0..n {
            let dyn2 = dy
                .index_axis(ndarray::Axis(0), ni)
                .into_shape_with_order((oc, oh * ow))
                .unwrap()
                .to_owned();
            dw2 = dw2 + dyn2.dot(&cols[ni].t());
            if let Some(b) = &mut self.b {
                for ci in 0..oc {
                    b.g[ci] += dyn2.row(ci).sum();
                }
            }
            let dcol = w2.t().dot(&dyn2); // [ic*kh*kw, oh*ow]
            let mut dxn = dx.index_axis_mut(ndarray::Axis(0), ni);
            fold_into(&mut dxn, &dcol, kh, kw, sh, sw, pt, pl, oh, ow);
        }
        let dw4 = dw2.into_shape_with_order((oc, ic, kh, kw)).unwrap();
        self.w.g = &self.w.g + &dw4;
        Ok(dx)
    }
}

/// Depthwise 2-D convolution (multiplier 1); weights are `[ch, kh, kw]`.
#[derive(Debug, Clone)]
pub struct DwConv2d {
    pub w: Param<ndarray::Ix3>,
    pub b: Option<Param<Ix1>>,
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl DwConv2d {
    pub fn forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = dim4(x);
        let ws = self.w.v.shape();
        let (wc, kh, kw) = (ws[0], ws[1], ws[2]);
        if c != wc {
            return Err(NnError::Shape {
                op: "dwconv2d",
                detail: format!("input channels {c} vs weight {wc}"),
            });
        }
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("dwconv2d", h, w, kh, kw, sh, sw)?;
        let mut y = Array4::<f64>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = 0.0;
                        for ki in 0..kh {
                            let ii = (oi * sh + ki) as isize - pt as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let jj = (oj * sw + kj) as isize - pl as isize;
                                if jj >= 0 && jj < w as isize {
                                    acc += self.w.v[(ci, ki, kj)]
                                        * x[(ni, ci, ii as usize, jj as usize)];
                                }
                            }
                        }
                        if let Some(b) = &self.b {
                            acc += b.v[ci];
                        }
                        y[(ni, ci, oi, oj)] = acc;
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(
        &mut self,
        x: &Array4<f64>,
        dy: &Array4<f64>,
    ) -> Result<Array4<f64>> {
        let (n, c, h, w) = dim4(x);
        let ws = self.w.v.shape();
        let (kh, kw) = (ws[1], ws[2]);
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("dwconv2d", h, w, kh, kw, sh, sw)?;
        let mut dx = Array4::<f64>::zeros(x.raw_dim());
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let g = dy[(ni, ci, oi, oj)];
                        if let Some(b) = &mut self.b {
                            b.g[ci] += g;
                        }
                        for ki in 0..kh {
                            let ii = (oi * sh + ki) as isize - pt as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let jj = (oj * sw + kj) as isize - pl as isize;
                                if jj >= 0 && jj < w as isize {
                                    self.w.g[(ci, ki, kj)] +=
                                        g * x[(ni, ci, ii as usize, jj as usize)];
                                    dx[(ni, ci, ii as usize, jj as usize)] +=
                                        g * self.w.v[(ci, ki, kj)];
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Channel-wise batch normalization over `[N, C, H, W]`.
///
/// `gamma` is optional because some architectures disable the scale term.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Option<Param<Ix1>>,
    pub beta: Param<Ix1>,
    pub moving_mean: Array1<f64>,
    pub moving_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm2d {
    pub fn new(channels: usize, scale: bool, eps: f64) -> Self {
        BatchNorm2d {
            gamma: scale.then(|| Param::new(Array1::ones(channels))),
            beta: Param::new(Array1::zeros(channels)),
            moving_mean: Array1::zeros(channels),
            moving_var: Array1::ones(channels),
            eps,
            momentum: 0.99,
        }
    }

    fn gamma_at(&self, c: usize) -> f64 {
        self.gamma.as_ref().map(|g| g.v[c]).unwrap_or(1.0)
    }

    pub fn eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let (_, c, _, _) = dim4(x);
        let mut y = x.clone();
        for ci in 0..c {
            let a = self.gamma_at(ci) / (self.moving_var[ci] + self.eps).sqrt();
            let b = self.beta.v[ci] - self.moving_mean[ci] * a;
            y.index_axis_mut(ndarray::Axis(1), ci)
                .mapv_inplace(|v| v * a + b);
        }
        y
    }

    pub fn train_forward(&mut self, x: &Array4<f64>) -> (Array4<f64>, OpCache) {
        let (n, c, h, w) = dim4(x);
        let m = (n * h * w) as f64;
        let mut xhat = x.clone();
        let mut invstd = Array1::<f64>::zeros(c);
        for ci in 0..c {
            let slice = x.index_axis(ndarray::Axis(1), ci);
            let mean = slice.sum() / m;
            let var = slice.mapv(|v| (v - mean) * (v - mean)).sum() / m;
            let istd = 1.0 / (var + self.eps).sqrt();
            invstd[ci] = istd;
            xhat.index_axis_mut(ndarray::Axis(1), ci)
                .mapv_inplace(|v| (v - mean) * istd);
            self.moving_mean[ci] = self.moving_mean[ci] * self.momentum + mean * (1.0 - self.momentum);
            self.moving_var[ci] = self.moving_var[ci] * self.momentum + var * (1.0 - self.momentum);
        }
        let mut y = xhat.clone();
        for ci in 0..c {
            let g = self.gamma_at(ci);
            let b = self.beta.v[ci];
            y.index_axis_mut(ndarray::Axis(1), ci)
                .mapv_inplace(|v| v * g + b);
        }
        (y, OpCache::Bn { xhat, invstd })
    }

    pub fn backward(&mut self, cache: &OpCache, dy: &Array4<f64>) -> Result<Array4<f64>> {
        let OpCache::Bn { xhat, invstd } = cache else {
            return Err(NnError::Shape {
                op: "batchnorm2d",
                detail: "missing cache".into(),
            });
        };
        let (n, c, h, w) = dim4(dy);
        let m = (n * h * w) as f64;
        let mut dx = Array4::<f64>::zeros(dy.raw_dim());
        for ci in 0..c {
            let dyc = dy.index_axis(ndarray::Axis(1), ci);
            let xc = xhat.index_axis(ndarray::Axis(1), ci);
            let sum_dy = dyc.sum();
            let sum_dy_xhat = (&dyc * &xc).sum();
            self.beta.g[ci] += sum_dy;
            if let Some(g) = &mut self.gamma {
                g.g[ci] += sum_dy_xhat;
            }
            let gamma = self.gamma_at(ci);
            let scale = gamma * invstd[ci] / m;
            let mut dxc = dx.index_axis_mut(ndarray::Axis(1), ci);
            ndarray::Zip::from(&mut dxc)
                .and(&dyc)
                .and(&xc)
                .for_each(|d, &dyv, &xv| {
                    *d = scale * (m * dyv - sum_dy - xv * sum_dy_xhat);
                });
        }
        Ok(dx)
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Swish,
    Sigmoid,
    Tanh,
    Linear,
}

impl Activation {
    pub fn apply_scalar(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Swish => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Swish => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::Tanh => 1.0 - x.tanh().powi(2),
            Activation::Linear => 1.0,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Swish => "swish",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        };
        write!(f, "{s}")
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max or average pooling window.
#[derive(Debug, Clone, Copy)]
pub struct Pool2d {
    pub k: (usize, usize),
    pub stride: (usize, usize),
    pub pad: Padding,
}

impl Pool2d {
    pub fn max_forward(&self, x: &Array4<f64>) -> Result<(Array4<f64>, OpCache)> {
        let (n, c, h, w) = dim4(x);
        let (kh, kw) = self.k;
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("maxpool", h, w, kh, kw, sh, sw)?;
        let mut y = Array4::<f64>::zeros((n, c, oh, ow));
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_pos = (0usize, 0usize);
                        for ki in 0..kh {
                            let ii = (oi * sh + ki) as isize - pt as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let jj = (oj * sw + kj) as isize - pl as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                let v = x[(ni, ci, ii as usize, jj as usize)];
                                if v > best {
                                    best = v;
                                    best_pos = (ii as usize, jj as usize);
                                }
                            }
                        }
                        y[(ni, ci, oi, oj)] = best;
                        argmax.push(best_pos);
                    }
                }
            }
        }
        Ok((y, OpCache::MaxPool { argmax }))
    }

    pub fn max_backward(
        &self,
        x: &Array4<f64>,
        cache: &OpCache,
        dy: &Array4<f64>,
    ) -> Result<Array4<f64>> {
        let OpCache::MaxPool { argmax } = cache else {
            return Err(NnError::Shape {
                op: "maxpool",
                detail: "missing cache".into(),
            });
        };
        let (n, c, oh, ow) = dim4(dy);
        let mut dx = Array4::<f64>::zeros(x.raw_dim());
        let mut idx = 0;
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let (ii, jj) = argmax[idx];
                        dx[(ni, ci, ii, jj)] += dy[(ni, ci, oi, oj)];
                        idx += 1;
                    }
                }
            }
        }
        Ok(dx)
    }

    /// Average pooling; padded positions are excluded from the mean.
    pub fn avg_forward(&self, x: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = dim4(x);
        let (kh, kw) = self.k;
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("avgpool", h, w, kh, kw, sh, sw)?;
        let mut y = Array4::<f64>::zeros((n, c, oh, ow));
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut acc = 0.0;
                        let mut cnt = 0.0f64;
                        for ki in 0..kh {
                            let ii = (oi * sh + ki) as isize - pt as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let jj = (oj * sw + kj) as isize - pl as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                acc += x[(ni, ci, ii as usize, jj as usize)];
                                cnt += 1.0;
                            }
                        }
                        y[(ni, ci, oi, oj)] = acc / cnt.max(1.0);
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn avg_backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> Result<Array4<f64>> {
        let (n, c, h, w) = dim4(x);
        let (kh, kw) = self.k;
        let (sh, sw) = self.stride;
        let (pt, pl, oh, ow) = self.pad.resolve("avgpool", h, w, kh, kw, sh, sw)?;
        let mut dx = Array4::<f64>::zeros(x.raw_dim());
        for ni in 0..n {
            for ci in 0..c {
                for oi in 0..oh {
                    for oj in 0..ow {
                        let mut cells = Vec::new();
                        for ki in 0..kh {
                            let ii = (oi * sh + ki) as isize - pt as isize;
                            if ii < 0 || ii >= h as isize {
                                continue;
                            }
                            for kj in 0..kw {
                                let jj = (oj * sw + kj) as isize - pl as isize;
                                if jj < 0 || jj >= w as isize {
                                    continue;
                                }
                                cells.push((ii as usize, jj as usize));
                            }
                        }
                        let share = dy[(ni, ci, oi, oj)] / cells.len().max(1) as f64;
                        for (ii, jj) in cells {
                            dx[(ni, ci, ii, jj)] += share;
                        }
                    }
                }
            }
        }
        Ok(dx)
    }
}

/// Spatial zero-padding.
#[derive(Debug, Clone, Copy)]
pub struct PadSpec {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl PadSpec {
    pub fn symmetric(p: usize) -> Self {
        PadSpec {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub fn forward(&self, x: &Array4<f64>) -> Array4<f64> {
        let (n, c, h, w) = dim4(x);
        let mut y = Array4::<f64>::zeros((n, c, h + self.top + self.bottom, w + self.left + self.right));
        y.slice_mut(ndarray::s![
            ..,
            ..,
            self.top..self.top + h,
            self.left..self.left + w
        ])
        .assign(x);
        y
    }

    pub fn backward(&self, x: &Array4<f64>, dy: &Array4<f64>) -> Array4<f64> {
        let (_, _, h, w) = dim4(x);
        dy.slice(ndarray::s![
            ..,
            ..,
            self.top..self.top + h,
            self.left..self.left + w
        ])
        .to_owned()
    }
}

/// Fully connected layer over `[N, in] -> [N, out]`; weights are `[in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: Param<Ix2>,
    pub b: Param<Ix1>,
}

impl Dense {
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.w.v);
        for mut row in y.rows_mut() {
            row += &self.b.v;
        }
        y
    }

    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.w.g = &self.w.g + &x.t().dot(dy);
        self.b.g = &self.b.g + &dy.sum_axis(ndarray::Axis(0));
        dy.dot(&self.w.v.t())
    }
}

/// 1-D batch normalization for dense-head features `[N, F]`.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub gamma: Param<Ix1>,
    pub beta: Param<Ix1>,
    pub moving_mean: Array1<f64>,
    pub moving_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm1d {
    pub fn new(features: usize) -> Self {
        BatchNorm1d {
            gamma: Param::new(Array1::ones(features)),
            beta: Param::new(Array1::zeros(features)),
            moving_mean: Array1::zeros(features),
            moving_var: Array1::ones(features),
            eps: 1e-3,
            momentum: 0.99,
        }
    }

    pub fn eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for (ci, mut col) in y.columns_mut().into_iter().enumerate() {
            let a = self.gamma.v[ci] / (self.moving_var[ci] + self.eps).sqrt();
            let b = self.beta.v[ci] - self.moving_mean[ci] * a;
            col.mapv_inplace(|v| v * a + b);
        }
        y
    }

    /// Returns (y, xhat, invstd).
    pub fn train_forward(&mut self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let n = x.shape()[0] as f64;
        let f = x.shape()[1];
        let mut xhat = x.clone();
        let mut invstd = Array1::<f64>::zeros(f);
        for ci in 0..f {
            let col = x.column(ci);
            let mean = col.sum() / n;
            let var = col.mapv(|v| (v - mean) * (v - mean)).sum() / n;
            let istd = 1.0 / (var + self.eps).sqrt();
            invstd[ci] = istd;
            xhat.column_mut(ci).mapv_inplace(|v| (v - mean) * istd);
            self.moving_mean[ci] = self.moving_mean[ci] * self.momentum + mean * (1.0 - self.momentum);
            self.moving_var[ci] = self.moving_var[ci] * self.momentum + var * (1.0 - self.momentum);
        }
        let mut y = xhat.clone();
        for (ci, mut col) in y.columns_mut().into_iter().enumerate() {
            let g = self.gamma.v[ci];
            let b = self.beta.v[ci];
            col.mapv_inplace(|v| v * g + b);
        }
        (y, xhat, invstd)
    }

    pub fn backward(
        &mut self,
        xhat: &Array2<f64>,
        invstd: &Array1<f64>,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let n = dy.shape()[0] as f64;
        let f = dy.shape()[1];
        let mut dx = Array2::<f64>::zeros(dy.raw_dim());
        for ci in 0..f {
            let dyc = dy.column(ci);
            let xc = xhat.column(ci);
            let sum_dy = dyc.sum();
            let sum_dy_xhat = dyc
                .iter()
                .zip(xc.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>();
            self.beta.g[ci] += sum_dy;
            self.gamma.g[ci] += sum_dy_xhat;
            let scale = self.gamma.v[ci] * invstd[ci] / n;
            for (r, d) in dx.column_mut(ci).iter_mut().enumerate() {
                *d = scale * (n * dyc[r] - sum_dy - xc[r] * sum_dy_xhat);
            }
        }
        dx
    }
}

pub(crate) fn dim4(x: &Array4<f64>) -> (usize, usize, usize, usize) {
    let s = x.shape();
    (s[0], s[1], s[2], s[3])
}

/// Elementwise sum of tensors with identical shapes.
pub fn tensor_add(a: &Tensor, b: &Tensor) -> Tensor {
    match (a, b) {
        (Tensor::T2(x), Tensor::T2(y)) => Tensor::T2(x + y),
        (Tensor::T4(x), Tensor::T4(y)) => Tensor::T4(x + y),
        _ => panic!("rank mismatch in tensor_add"),
    }
}

/// Helper for 3-D arrays inside tests and the synthetic generator.
pub fn array3_to4(x: Array3<f64>) -> Array4<f64> {
    let (a, b, c) = x.dim();
    x.into_shape_with_order((1, a, b, c)).unwrap()
}
