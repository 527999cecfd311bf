//! Small two-stage convolutional trunk (pooled width 32) so the full test
//! suite and desk-scale experiments run in seconds on a CPU.

use super::Builder;
use crate::nn::graph::Graph;
use crate::nn::ops::{Activation, Padding};

pub(super) fn build(b: &mut Builder) -> Graph {
    let x = b.input();
    let x = b.conv(x, 16, (3, 3), (1, 1), Padding::Same, false);
    let x = b.bn(x, true, 1e-3);
    let x = b.act(x, Activation::Relu);
    let x = b.maxpool(x, 2, 2, Padding::Valid);
    let x = b.conv(x, 32, (3, 3), (1, 1), Padding::Same, false);
    let x = b.bn(x, true, 1e-3);
    let x = b.act(x, Activation::Relu);
    let x = b.maxpool(x, 2, 2, Padding::Valid);
    b.gap(x, false);
    std::mem::take(&mut b.g)
}
