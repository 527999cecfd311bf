//! Densely connected networks (121/201): growth rate 32, pre-activation
//! conv blocks, 0.5-compression transitions.

use super::Builder;
use crate::nn::graph::Graph;
use crate::nn::ops::{Activation, Padding, PadSpec};

const BN_EPS: f64 = 1.001e-5;
const GROWTH: usize = 32;

pub(super) fn build(b: &mut Builder, blocks: &[usize; 4]) -> Graph {
    let x = b.input();
    let x = b.zeropad(x, PadSpec::symmetric(3));
    let x = b.conv(x, 64, (7, 7), (2, 2), Padding::Valid, false);
    let x = b.bn(x, true, BN_EPS);
    let x = b.act(x, Activation::Relu);
    let x = b.zeropad(x, PadSpec::symmetric(1));
    let mut x = b.maxpool(x, 3, 2, Padding::Valid);

    for (i, &n) in blocks.iter().enumerate() {
        x = dense_block(b, x, n);
        if i + 1 < blocks.len() {
            x = transition(b, x);
        }
    }
    let x = b.bn(x, true, BN_EPS);
    let x = b.act(x, Activation::Relu);
    b.gap(x, false);
    std::mem::take(&mut b.g)
}

fn dense_block(b: &mut Builder, mut x: usize, layers: usize) -> usize {
    for _ in 0..layers {
        let y = b.bn(x, true, BN_EPS);
        let y = b.act(y, Activation::Relu);
        let y = b.conv(y, 4 * GROWTH, (1, 1), (1, 1), Padding::Valid, false);
        let y = b.bn(y, true, BN_EPS);
        let y = b.act(y, Activation::Relu);
        let y = b.conv(y, GROWTH, (3, 3), (1, 1), Padding::Same, false);
        x = b.concat(&[x, y]);
    }
    x
}

fn transition(b: &mut Builder, x: usize) -> usize {
    let ch = b.channels(x) / 2;
    let y = b.bn(x, true, BN_EPS);
    let y = b.act(y, Activation::Relu);
    let y = b.conv(y, ch, (1, 1), (1, 1), Padding::Valid, false);
    b.avgpool(y, 2, 2, Padding::Valid)
}
