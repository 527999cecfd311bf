//! Inception v3: factorized-convolution mixed blocks.
//!
//! Every convolution is bias-free and followed by batch norm without a
//! scale term, then ReLU.

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

pub(super) fn build(b: &mut Builder) -> Graph {
    use Padding::{Same, Valid};
    let x = b.input();
    let x = conv_bn(b, x, 32, (3, 3), (2, 2), Valid);
    let x = conv_bn(b, x, 32, (3, 3), (1, 1), Valid);
    let x = conv_bn(b, x, 64, (3, 3), (1, 1), Same);
    let x = b.maxpool(x, 3, 2, Valid);
    let x = conv_bn(b, x, 80, (1, 1), (1, 1), Valid);
    let x = conv_bn(b, x, 192, (3, 3), (1, 1), Valid);
    let mut x = b.maxpool(x, 3, 2, Valid);

    // 35x35 mixed blocks; the pool branch widens from 32 to 64 after the first.
    for pool_ch in [32, 64, 64] {
        let b0 = conv_bn(b, x, 64, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, x, 48, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, b1, 64, (5, 5), (1, 1), Same);
        let b2 = conv_bn(b, x, 64, (1, 1), (1, 1), Same);
        let b2 = conv_bn(b, b2, 96, (3, 3), (1, 1), Same);
        let b2 = conv_bn(b, b2, 96, (3, 3), (1, 1), Same);
        let p = b.avgpool(x, 3, 1, Same);
        let p = conv_bn(b, p, pool_ch, (1, 1), (1, 1), Same);
        x = b.concat(&[b0, b1, b2, p]);
    }

    // reduction to 17x17
    {
        let b0 = conv_bn(b, x, 384, (3, 3), (2, 2), Valid);
        let b1 = conv_bn(b, x, 64, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, b1, 96, (3, 3), (1, 1), Same);
        let b1 = conv_bn(b, b1, 96, (3, 3), (2, 2), Valid);
        let p = b.maxpool(x, 3, 2, Valid);
        x = b.concat(&[b0, b1, p]);
    }

    // 17x17 factorized-7 blocks with growing mid width
    for mid in [128, 160, 160, 192] {
        let b0 = conv_bn(b, x, 192, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, x, mid, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, b1, mid, (1, 7), (1, 1), Same);
        let b1 = conv_bn(b, b1, 192, (7, 1), (1, 1), Same);
        let b2 = conv_bn(b, x, mid, (1, 1), (1, 1), Same);
        let b2 = conv_bn(b, b2, mid, (7, 1), (1, 1), Same);
        let b2 = conv_bn(b, b2, mid, (1, 7), (1, 1), Same);
        let b2 = conv_bn(b, b2, mid, (7, 1), (1, 1), Same);
        let b2 = conv_bn(b, b2, 192, (1, 7), (1, 1), Same);
        let p = b.avgpool(x, 3, 1, Same);
        let p = conv_bn(b, p, 192, (1, 1), (1, 1), Same);
        x = b.concat(&[b0, b1, b2, p]);
    }

    // reduction to 8x8
    {
        let b0 = conv_bn(b, x, 192, (1, 1), (1, 1), Same);
        let b0 = conv_bn(b, b0, 320, (3, 3), (2, 2), Valid);
        let b1 = conv_bn(b, x, 192, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, b1, 192, (1, 7), (1, 1), Same);
        let b1 = conv_bn(b, b1, 192, (7, 1), (1, 1), Same);
        let b1 = conv_bn(b, b1, 192, (3, 3), (2, 2), Valid);
        let p = b.maxpool(x, 3, 2, Valid);
        x = b.concat(&[b0, b1, p]);
    }

    // 8x8 expanded blocks
    for _ in 0..2 {
        let b0 = conv_bn(b, x, 320, (1, 1), (1, 1), Same);
        let b1 = conv_bn(b, x, 384, (1, 1), (1, 1), Same);
        let b1a = conv_bn(b, b1, 384, (1, 3), (1, 1), Same);
        let b1b = conv_bn(b, b1, 384, (3, 1), (1, 1), Same);
        let b1 = b.concat(&[b1a, b1b]);
        let b2 = conv_bn(b, x, 448, (1, 1), (1, 1), Same);
        let b2 = conv_bn(b, b2, 384, (3, 3), (1, 1), Same);
        let b2a = conv_bn(b, b2, 384, (1, 3), (1, 1), Same);
        let b2b = conv_bn(b, b2, 384, (3, 1), (1, 1), Same);
        let b2 = b.concat(&[b2a, b2b]);
        let p = b.avgpool(x, 3, 1, Same);
        let p = conv_bn(b, p, 192, (1, 1), (1, 1), Same);
        x = b.concat(&[b0, b1, b2, p]);
    }

    b.gap(x, false);
    std::mem::take(&mut b.g)
}
