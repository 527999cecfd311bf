//! VGG16 trunk: five conv stages with 3x3 kernels and 2x2 max pooling.

use super::Builder;
use crate::nn::graph::Graph;
use crate::nn::ops::{Activation, Padding};

pub(super) fn build(b: &mut Builder) -> Graph {
    let mut x = b.input();
    for (reps, ch) in [(2, 64), (2, 128), (3, 256), (3, 512), (3, 512)] {
        for _ in 0..reps {
            x = b.conv(x, ch, (3, 3), (1, 1), Padding::Same, true);
            x = b.act(x, Activation::Relu);
        }
        x = b.maxpool(x, 2, 2, Padding::Valid);
    }
    b.gap(x, false);
    std::mem::take(&mut b.g)
}
