//! EfficientNet-B4: mobile inverted-bottleneck blocks with squeeze-and-
//! excitation, compound-scaled (width 1.4, depth 1.8) from the B0 layout.
//!
//! Stochastic depth is a parameter-free training regularizer and is not
//! modeled here.

use super::Builder;
use crate::nn::graph::Graph;
use crate::nn::ops::{Activation, Padding, PadSpec};

const BN_EPS: f64 = 1e-3;
const WIDTH: f64 = 1.4;
const DEPTH: f64 = 1.8;

struct BlockArgs {
    kernel: usize,
    repeats: usize,
    filters_in: usize,
    filters_out: usize,
    expand_ratio: usize,
    stride: usize,
}

const B0_BLOCKS: [BlockArgs; 7] = [
    BlockArgs { kernel: 3, repeats: 1, filters_in: 32, filters_out: 16, expand_ratio: 1, stride: 1 },
    BlockArgs { kernel: 3, repeats: 2, filters_in: 16, filters_out: 24, expand_ratio: 6, stride: 2 },
    BlockArgs { kernel: 5, repeats: 2, filters_in: 24, filters_out: 40, expand_ratio: 6, stride: 2 },
    BlockArgs { kernel: 3, repeats: 3, filters_in: 40, filters_out: 80, expand_ratio: 6, stride: 2 },
    BlockArgs { kernel: 5, repeats: 3, filters_in: 80, filters_out: 112, expand_ratio: 6, stride: 1 },
    BlockArgs { kernel: 5, repeats: 4, filters_in: 112, filters_out: 192, expand_ratio: 6, stride: 2 },
    BlockArgs { kernel: 3, repeats: 1, filters_in: 192, filters_out: 320, expand_ratio: 6, stride: 1 },
];

fn round_filters(filters: usize) -> usize {
    let divisor = 8.0;
    let f = filters as f64 * WIDTH;
    let mut new = ((f + divisor / 2.0) as usize / 8) * 8;
    new = new.max(8);
    if (new as f64) < 0.9 * f {
        new += 8;
    }
    new
}

fn round_repeats(repeats: usize) -> usize {
    (DEPTH * repeats as f64).ceil() as usize
}

/// Asymmetric zero padding for stride-2 stages (extra pixel bottom/right).
fn correct_pad(kernel: usize) -> PadSpec {
    let c = kernel / 2;
    PadSpec {
        top: c.saturating_sub(1),
        bottom: c,
        left: c.saturating_sub(1),
        right: c,
    }
}

pub(super) fn build_b4(b: &mut Builder) -> Graph {
    use Padding::{Same, Valid};
    let x = b.input();
    let x = b.zeropad(x, correct_pad(3));
    let x = b.conv(x, round_filters(32), (3, 3), (2, 2), Valid, false);
    let x = b.bn(x, true, BN_EPS);
    let mut x = b.act(x, Activation::Swish);

    for args in &B0_BLOCKS {
        let filters_in = round_filters(args.filters_in);
        let filters_out = round_filters(args.filters_out);
        let repeats = round_repeats(args.repeats);
        for r in 0..repeats {
            let (fin, stride) = if r == 0 {
                (filters_in, args.stride)
            } else {
                (filters_out, 1)
            };
            x = mbconv(b, x, fin, filters_out, args.kernel, stride, args.expand_ratio);
        }
    }

    let x = b.conv(x, round_filters(1280), (1, 1), (1, 1), Same, false);
    let x = b.bn(x, true, BN_EPS);
    let x = b.act(x, Activation::Swish);
    b.gap(x, false);
    std::mem::take(&mut b.g)
}

fn mbconv(
    b: &mut Builder,
    x: usize,
    filters_in: usize,
    filters_out: usize,
    kernel: usize,
    stride: usize,
    expand_ratio: usize,
) -> usize {
    use Padding::{Same, Valid};
    let expanded = filters_in * expand_ratio;

    let mut y = x;
    if expand_ratio != 1 {
        y = b.conv(y, expanded, (1, 1), (1, 1), Same, false);
        y = b.bn(y, true, BN_EPS);
        y = b.act(y, Activation::Swish);
    }

    if stride == 2 {
        y = b.zeropad(y, correct_pad(kernel));
        y = b.dwconv(y, (kernel, kernel), (2, 2), Valid);
    } else {
        y = b.dwconv(y, (kernel, kernel), (1, 1), Same);
    }
    y = b.bn(y, true, BN_EPS);
    y = b.act(y, Activation::Swish);

    // squeeze-and-excitation on the expanded representation
    let se_ch = (filters_in / 4).max(1);
    let s = b.gap(y, true);
    let s = b.conv(s, se_ch, (1, 1), (1, 1), Same, true);
    let s = b.act(s, Activation::Swish);
    let s = b.conv(s, expanded, (1, 1), (1, 1), Same, true);
    let s = b.act(s, Activation::Sigmoid);
    y = b.scale_channels(y, s);

    y = b.conv(y, filters_out, (1, 1), (1, 1), Same, false);
    y = b.bn(y, true, BN_EPS);

    if stride == 1 && filters_in == filters_out {
        y = b.add(&[x, y]);
    }
    y
}
