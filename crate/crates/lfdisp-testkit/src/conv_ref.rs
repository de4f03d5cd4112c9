//! Brute-force reference convolution: six nested loops, nothing shared with
//! the optimized kernel.

use lfdisp_core::tensor::{Element, Shape, Tensor};
use lfdisp_core::ConvSpec;

/// Direct cross-correlation with dilation, stride, zero padding and groups.
/// Weights are (out_c, in_c/groups, k, k). Panics on inconsistent shapes;
/// this is test-support code.
pub fn conv2d_reference<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    bias: Option<&[E]>,
    spec: &ConvSpec,
    groups: usize,
) -> Tensor<E> {
    let ishape = input.shape();
    let k = spec.kernel;
    let k_eff = spec.k_eff();
    let (d, s, p) = (spec.dilation, spec.stride, spec.padding);
    let h_out = (ishape.h + 2 * p - k_eff) / s + 1;
    let w_out = (ishape.w + 2 * p - k_eff) / s + 1;
    let cpg_in = spec.in_channels / groups;
    let cpg_out = spec.out_channels / groups;

    let mut out = Tensor::zeros(Shape::new(ishape.n, spec.out_channels, h_out, w_out));
    for n in 0..ishape.n {
        for co in 0..spec.out_channels {
            let group = co / cpg_out;
            for oy in 0..h_out {
                for ox in 0..w_out {
                    let mut acc = bias.map_or(E::ZERO, |b| b[co]);
                    for ci_off in 0..cpg_in {
                        let ci = group * cpg_in + ci_off;
                        for kh in 0..k {
                            for kw in 0..k {
                                let iy = oy as isize * s as isize + (kh * d) as isize - p as isize;
                                let ix = ox as isize * s as isize + (kw * d) as isize - p as isize;
                                if iy < 0
                                    || iy >= ishape.h as isize
                                    || ix < 0
                                    || ix >= ishape.w as isize
                                {
                                    continue; // zero padding
                                }
                                let x = input.data()
                                    [input.at(n, ci, iy as usize, ix as usize)];
                                let w = weights.data()
                                    [weights.at(co, ci_off, kh, kw)];
                                acc += x * w;
                            }
                        }
                    }
                    let idx = out.at(n, co, oy, ox);
                    out.data_mut()[idx] = acc;
                }
            }
        }
    }
    out
}
