//! Residual networks, v1 bottleneck variant (50/101 layers).
//!
//! Convolutions carry biases and the stride-2 reduction sits on the first
//! 1x1 convolution of each stage's opening block.

use super::Builder;
use crate::nn::graph::Graph;
use crate::nn::ops::{Activation, Padding, PadSpec};

const BN_EPS: f64 = 1.001e-5;

pub(super) fn build(b: &mut Builder, blocks: &[usize; 4]) -> Graph {
    let x = b.input();
    let x = b.zeropad(x, PadSpec::symmetric(3));
    let x = b.conv(x, 64, (7, 7), (2, 2), Padding::Valid, true);
    let x = b.bn(x, true, BN_EPS);
    let x = b.act(x, Activation::Relu);
    let x = b.zeropad(x, PadSpec::symmetric(1));
    let mut x = b.maxpool(x, 3, 2, Padding::Valid);

    for (stage, &n_blocks) in blocks.iter().enumerate() {
        let filters = 64 << stage;
        let stride = if stage == 0 { 1 } else { 2 };
        x = bottleneck(b, x, filters, stride, true);
        for _ in 1..n_blocks {
            x = bottleneck(b, x, filters, 1, false);
        }
    }
    b.gap(x, false);
    std::mem::take(&mut b.g)
}

fn bottleneck(b: &mut Builder, x: usize, filters: usize, stride: usize, conv_shortcut: bool) -> usize {
    let shortcut = if conv_shortcut {
        let s = b.conv(x, filters * 4, (1, 1), (stride, stride), Padding::Valid, true);
        b.bn(s, true, BN_EPS)
    } else {
        x
    };
    let y = b.conv(x, filters, (1, 1), (stride, stride), Padding::Valid, true);
    let y = b.bn(y, true, BN_EPS);
    let y = b.act(y, Activation::Relu);
    let y = b.conv(y, filters, (3, 3), (1, 1), Padding::Same, true);
    let y = b.bn(y, true, BN_EPS);
    let y = b.act(y, Activation::Relu);
    let y = b.conv(y, filters * 4, (1, 1), (1, 1), Padding::Valid, true);
    let y = b.bn(y, true, BN_EPS);
    let sum = b.add(&[shortcut, y]);
    b.act(sum, Activation::Relu)
}
