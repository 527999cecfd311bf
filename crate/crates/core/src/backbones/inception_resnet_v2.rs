//! Inception-ResNet v2: inception branches with scaled residual shortcuts.
//!
//! Branch convolutions are bias-free with scale-less batch norm; each
//! block's closing 1x1 projection carries a bias and no batch norm.

use super::Builder;
use crate::nn::graph::Graph;
use crate::nn::ops::{Activation, Padding};

const BN_EPS: f64 = 1e-3;

fn conv_bn(
    b: &mut Builder,
    x: usize,
    ch: usize,
    k: (usize, usize),
    stride: (usize, usize),
    pad: Padding,
) -> usize {
    let y = b.conv(x, ch, k, stride, pad, false);
    let y = b.bn(y, false, BN_EPS);
    b.act(y, Activation::Relu)
}

/// Bias-carrying linear 1x1 projection used to close each residual block.
fn conv_linear(b: &mut Builder, x: usize, ch: usize) -> usize {
    b.conv(x, ch, (1, 1), (1, 1), Padding::Same, true)
}

pub(super) fn build(b: &mut Builder) -> Graph {
    use Padding::{Same, Valid};
    let x = b.input();
    let x = conv_bn(b, x, 32, (3, 3), (2, 2), Valid);
    let x = conv_bn(b, x, 32, (3, 3), (1, 1), Valid);
    let x = conv_bn(b, x, 64, (3, 3), (1, 1), Same);
    let x = b.maxpool(x, 3, 2, Valid);
    let x = conv_bn(b, x, 80, (1, 1), (1, 1), Valid);
    let x = conv_bn(b, x, 192, (3, 3), (1, 1), Valid);
    let x = b.maxpool(x, 3, 2, Valid);

    // mixed_5b -> 320 channels
    let b0 = conv_bn(b, x, 96, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, x, 48, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, b1, 64, (5, 5), (1, 1), Same);
    let b2 = conv_bn(b, x, 64, (1, 1), (1, 1), Same);
    let b2 = conv_bn(b, b2, 96, (3, 3), (1, 1), Same);
    let b2 = conv_bn(b, b2, 96, (3, 3), (1, 1), Same);
    let p = b.avgpool(x, 3, 1, Same);
    let p = conv_bn(b, p, 64, (1, 1), (1, 1), Same);
    let mut x = b.concat(&[b0, b1, b2, p]);

    for _ in 0..10 {
        x = block35(b, x, 0.17);
    }

    // mixed_6a -> 1088 channels
    let b0 = conv_bn(b, x, 384, (3, 3), (2, 2), Valid);
    let b1 = conv_bn(b, x, 256, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, b1, 256, (3, 3), (1, 1), Same);
    let b1 = conv_bn(b, b1, 384, (3, 3), (2, 2), Valid);
    let p = b.maxpool(x, 3, 2, Valid);
    let mut x = b.concat(&[b0, b1, p]);

    for _ in 0..20 {
        x = block17(b, x, 0.1);
    }

    // mixed_7a -> 2080 channels
    let b0 = conv_bn(b, x, 256, (1, 1), (1, 1), Same);
    let b0 = conv_bn(b, b0, 384, (3, 3), (2, 2), Valid);
    let b1 = conv_bn(b, x, 256, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, b1, 288, (3, 3), (2, 2), Valid);
    let b2 = conv_bn(b, x, 256, (1, 1), (1, 1), Same);
    let b2 = conv_bn(b, b2, 288, (3, 3), (1, 1), Same);
    let b2 = conv_bn(b, b2, 320, (3, 3), (2, 2), Valid);
    let p = b.maxpool(x, 3, 2, Valid);
    let mut x = b.concat(&[b0, b1, b2, p]);

    for _ in 0..9 {
        x = block8(b, x, 0.2, true);
    }
    x = block8(b, x, 1.0, false);

    let x = conv_bn(b, x, 1536, (1, 1), (1, 1), Same);
    b.gap(x, false);
    std::mem::take(&mut b.g)
}

fn block35(b: &mut Builder, x: usize, scale: f64) -> usize {
    use Padding::Same;
    let b0 = conv_bn(b, x, 32, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, x, 32, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, b1, 32, (3, 3), (1, 1), Same);
    let b2 = conv_bn(b, x, 32, (1, 1), (1, 1), Same);
    let b2 = conv_bn(b, b2, 48, (3, 3), (1, 1), Same);
    let b2 = conv_bn(b, b2, 64, (3, 3), (1, 1), Same);
    let mixed = b.concat(&[b0, b1, b2]);
    let up = conv_linear(b, mixed, b.channels(x));
    let up = b.scale(up, scale);
    let sum = b.add(&[x, up]);
    b.act(sum, Activation::Relu)
}

fn block17(b: &mut Builder, x: usize, scale: f64) -> usize {
    use Padding::Same;
    let b0 = conv_bn(b, x, 192, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, x, 128, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, b1, 160, (1, 7), (1, 1), Same);
    let b1 = conv_bn(b, b1, 192, (7, 1), (1, 1), Same);
    let mixed = b.concat(&[b0, b1]);
    let up = conv_linear(b, mixed, b.channels(x));
    let up = b.scale(up, scale);
    let sum = b.add(&[x, up]);
    b.act(sum, Activation::Relu)
}

fn block8(b: &mut Builder, x: usize, scale: f64, relu: bool) -> usize {
    use Padding::Same;
    let b0 = conv_bn(b, x, 192, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, x, 192, (1, 1), (1, 1), Same);
    let b1 = conv_bn(b, b1, 224, (1, 3), (1, 1), Same);
    let b1 = conv_bn(b, b1, 256, (3, 1), (1, 1), Same);
    let mixed = b.concat(&[b0, b1]);
    let up = conv_linear(b, mixed, b.channels(x));
    let up = b.scale(up, scale);
    let sum = b.add(&[x, up]);
    if relu {
        b.act(sum, Activation::Relu)
    } else {
        sum
    }
}
