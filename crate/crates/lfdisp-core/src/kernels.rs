#![allow(clippy::needless_range_loop)]

//! Convolution and batch-norm compute kernels.
//!
//! Cross-correlation semantics (no kernel flip), zero padding. The inner
//! loops are written row-wise so the width axis vectorizes; parallelism
//! splits over independent output planes only, keeping every reduction in
//! a fixed order.

use crate::error::{Error, Result};
use crate::parallel::{for_each_chunk_mut, map_indexed};
use crate::tensor::{Element, Shape, Tensor};

/// Geometry of one 2D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub stride: usize,
    pub padding: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    pub fn new(
        kernel: usize,
        dilation: usize,
        stride: usize,
        padding: usize,
        in_channels: usize,
        out_channels: usize,
        has_bias: bool,
    ) -> Result<Self> {
        let spec = ConvSpec {
            kernel,
            dilation,
            stride,
            padding,
            in_channels,
            out_channels,
            has_bias,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Stride-1 spec with padding chosen so output size equals input size.
    pub fn same(kernel: usize, dilation: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        let k_eff = kernel + (kernel - 1) * (dilation - 1);
        ConvSpec::new(kernel, dilation, 1, (k_eff - 1) / 2, in_channels, out_channels, false)
    }

    fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.kernel.is_multiple_of(2) {
            return Err(Error::InvalidConvSpec(format!(
                "kernel must be odd and positive, got {}",
                self.kernel
            )));
        }
        if self.dilation == 0 || self.stride == 0 {
            return Err(Error::InvalidConvSpec(format!(
                "dilation and stride must be positive, got d={} s={}",
                self.dilation, self.stride
            )));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidConvSpec(format!(
                "channel counts must be positive, got in={} out={}",
                self.in_channels, self.out_channels
            )));
        }
        debug_assert!(!self.k_eff().is_multiple_of(2));
        Ok(())
    }

    /// Effective kernel extent k + (k-1)(d-1).
    pub fn k_eff(&self) -> usize {
        self.kernel + (self.kernel - 1) * (self.dilation - 1)
    }

    /// Output extent along one spatial axis, or an error when it would be < 1.
    pub fn out_extent(&self, input: usize, other: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < self.k_eff() {
            return Err(Error::EmptyConvOutput {
                input,
                input_w: other,
                k_eff: self.k_eff(),
                padding: self.padding,
                stride: self.stride,
            });
        }
        Ok((padded - self.k_eff()) / self.stride + 1)
    }

    /// Trainable scalar count: weights plus bias when present.
    pub fn weight_count(&self, groups: usize) -> usize {
        let w = self.out_channels * (self.in_channels / groups) * self.kernel * self.kernel;
        w + if self.has_bias { self.out_channels } else { 0 }
    }
}

fn check_conv_inputs<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    bias: Option<&[E]>,
    spec: &ConvSpec,
    groups: usize,
) -> Result<(usize, usize)> {
    let ishape = input.shape();
    if ishape.c != spec.in_channels {
        return Err(Error::ChannelMismatch {
            context: "conv2d input".into(),
            expected: spec.in_channels,
            actual: ishape.c,
        });
    }
    if groups == 0 || !spec.in_channels.is_multiple_of(groups) || !spec.out_channels.is_multiple_of(groups) {
        return Err(Error::InvalidConvSpec(format!(
            "groups {} must divide in_channels {} and out_channels {}",
            groups, spec.in_channels, spec.out_channels
        )));
    }
    let expected_w = Shape::new(
        spec.out_channels,
        spec.in_channels / groups,
        spec.kernel,
        spec.kernel,
    );
    if weights.shape() != expected_w {
        return Err(Error::ShapeMismatch {
            context: "conv2d weights".into(),
            expected: expected_w.to_string(),
            actual: weights.shape().to_string(),
        });
    }
    if let Some(b) = bias {
        if b.len() != spec.out_channels {
            return Err(Error::ShapeMismatch {
                context: "conv2d bias".into(),
                expected: format!("{} values", spec.out_channels),
                actual: format!("{} values", b.len()),
            });
        }
    }
    let h_out = spec.out_extent(ishape.h, ishape.w)?;
    let w_out = spec.out_extent(ishape.w, ishape.h)?;
    Ok((h_out, w_out))
}

/// 2D cross-correlation with dilation, stride, zero padding and channel groups.
///
/// Weights are (out_channels, in_channels/groups, k, k). Depthwise convolution
/// is `groups == in_channels` with weights (C, 1, k, k).
pub fn conv2d_forward<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    bias: Option<&[E]>,
    spec: &ConvSpec,
    groups: usize,
) -> Result<Tensor<E>> {
    let (h_out, w_out) = check_conv_inputs(input, weights, bias, spec, groups)?;
    let ishape = input.shape();
    let (h_in, w_in) = (ishape.h, ishape.w);
    let cpg_in = spec.in_channels / groups;
    let cpg_out = spec.out_channels / groups;
    let k = spec.kernel;
    let (d, s, p) = (spec.dilation, spec.stride, spec.padding);

    let mut out = Tensor::zeros(Shape::new(ishape.n, spec.out_channels, h_out, w_out));
    let out_plane = h_out * w_out;

    for_each_chunk_mut(out.data_mut(), out_plane, |idx, plane| {
        let n = idx / spec.out_channels;
        let co = idx % spec.out_channels;
        if let Some(b) = bias {
            plane.iter_mut().for_each(|v| *v = b[co]);
        }
        let ci_base = (co / cpg_out) * cpg_in;
        for ci_off in 0..cpg_in {
            let in_plane = input.plane(n, ci_base + ci_off);
            let w_base = ((co * cpg_in + ci_off) * k) * k;
            for kh in 0..k {
                for kw in 0..k {
                    let w = weights.data()[w_base + kh * k + kw];
                    let x_off = (kw * d) as isize - p as isize;
                    let y_off = (kh * d) as isize - p as isize;
                    // valid ox range: 0 <= ox*s + x_off < w_in
                    let ox0 = ceil_div_nonneg(-x_off, s as isize);
                    let ox1 = floor_div(w_in as isize - 1 - x_off, s as isize) + 1;
                    let (ox0, ox1) = (ox0.max(0) as usize, (ox1.max(0) as usize).min(w_out));
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..h_out {
                        let iy = oy as isize * s as isize + y_off;
                        if iy < 0 || iy >= h_in as isize {
                            continue;
                        }
                        let in_row = &in_plane[iy as usize * w_in..iy as usize * w_in + w_in];
                        let out_row = &mut plane[oy * w_out..oy * w_out + w_out];
                        if s == 1 {
                            let base = (ox0 as isize + x_off) as usize;
                            let src = &in_row[base..base + (ox1 - ox0)];
                            for (o, &i) in out_row[ox0..ox1].iter_mut().zip(src) {
                                *o += w * i;
                            }
                        } else {
                            for ox in ox0..ox1 {
                                let ix = (ox as isize * s as isize + x_off) as usize;
                                out_row[ox] += w * in_row[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Depthwise 3x3-style convolution (one filter per channel) followed by a
/// 1x1 pointwise mix-down: the low-parameter factorization used throughout
/// the network trunk. `spec` describes the depthwise stage; the pointwise
/// stage is stride-1, unpadded 1x1 with `pointwise_weights.shape().n` output
/// channels. Equals the explicit composition of the two convolutions.
pub fn depthwise_separable_conv<E: Element>(
    input: &Tensor<E>,
    depthwise_weights: &Tensor<E>,
    pointwise_weights: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let channels = spec.in_channels;
    let dw_spec = ConvSpec {
        out_channels: channels,
        has_bias: false,
        ..*spec
    };
    let mid = conv2d_forward(input, depthwise_weights, None, &dw_spec, channels)?;
    let pw_spec = ConvSpec::new(
        1,
        1,
        1,
        0,
        channels,
        pointwise_weights.shape().n,
        false,
    )?;
    conv2d_forward(&mid, pointwise_weights, None, &pw_spec, 1)
}

/// Gradients of [`conv2d_forward`] given the upstream gradient.
pub struct ConvGrads<E: Element> {
    pub input: Option<Tensor<E>>,
    pub weights: Tensor<E>,
    pub bias: Option<Vec<E>>,
}

pub fn conv2d_backward<E: Element>(
    input: &Tensor<E>,
    weights: &Tensor<E>,
    spec: &ConvSpec,
    groups: usize,
    grad_out: &Tensor<E>,
    want_input_grad: bool,
) -> Result<ConvGrads<E>> {
    let (h_out, w_out) = check_conv_inputs(input, weights, None, spec, groups)?;
    let gshape = grad_out.shape();
    let ishape = input.shape();
    let expected = Shape::new(ishape.n, spec.out_channels, h_out, w_out);
    if gshape != expected {
        return Err(Error::ShapeMismatch {
            context: "conv2d grad_out".into(),
            expected: expected.to_string(),
            actual: gshape.to_string(),
        });
    }
    let (h_in, w_in) = (ishape.h, ishape.w);
    let cpg_in = spec.in_channels / groups;
    let cpg_out = spec.out_channels / groups;
    let k = spec.kernel;
    let (d, s, p) = (spec.dilation, spec.stride, spec.padding);

    // dL/dW: independent per output channel, batch summed in index order.
    let mut grad_w = Tensor::zeros(weights.shape());
    let w_chunk = cpg_in * k * k;
    for_each_chunk_mut(grad_w.data_mut(), w_chunk, |co, wslice| {
        let ci_base = (co / cpg_out) * cpg_in;
        for n in 0..ishape.n {
            let g_plane = grad_out.plane(n, co);
            for ci_off in 0..cpg_in {
                let in_plane = input.plane(n, ci_base + ci_off);
                for kh in 0..k {
                    for kw in 0..k {
                        let x_off = (kw * d) as isize - p as isize;
                        let y_off = (kh * d) as isize - p as isize;
                        let ox0 = ceil_div_nonneg(-x_off, s as isize).max(0) as usize;
                        let ox1 = ((floor_div(w_in as isize - 1 - x_off, s as isize) + 1).max(0)
                            as usize)
                            .min(w_out);
                        if ox0 >= ox1 {
                            continue;
                        }
                        let mut acc = E::ZERO;
                        for oy in 0..h_out {
                            let iy = oy as isize * s as isize + y_off;
                            if iy < 0 || iy >= h_in as isize {
                                continue;
                            }
                            let in_row = &in_plane[iy as usize * w_in..(iy as usize + 1) * w_in];
                            let g_row = &g_plane[oy * w_out..oy * w_out + w_out];
                            if s == 1 {
                                let base = (ox0 as isize + x_off) as usize;
                                acc += dot8(&g_row[ox0..ox1], &in_row[base..base + (ox1 - ox0)]);
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = (ox as isize * s as isize + x_off) as usize;
                                    acc += g_row[ox] * in_row[ix];
                                }
                            }
                        }
                        wslice[(ci_off * k + kh) * k + kw] += acc;
                    }
                }
            }
        }
    });

    let bias = if spec.has_bias {
        let sums = map_indexed(spec.out_channels, |co| {
            let mut acc = E::ZERO;
            for n in 0..ishape.n {
                acc += sum8(grad_out.plane(n, co));
            }
            acc
        });
        Some(sums)
    } else {
        None
    };

    let grad_in = if want_input_grad {
        let mut gin = Tensor::zeros(ishape);
        let in_plane_len = h_in * w_in;
        for_each_chunk_mut(gin.data_mut(), in_plane_len, |idx, gplane| {
            let n = idx / spec.in_channels;
            let ci = idx % spec.in_channels;
            let g = ci / cpg_in;
            let ci_off = ci % cpg_in;
            for co in g * cpg_out..(g + 1) * cpg_out {
                let g_plane = grad_out.plane(n, co);
                let w_base = (co * cpg_in + ci_off) * k * k;
                for kh in 0..k {
                    for kw in 0..k {
                        let w = weights.data()[w_base + kh * k + kw];
                        let x_off = (kw * d) as isize - p as isize;
                        let y_off = (kh * d) as isize - p as isize;
                        let ox0 = ceil_div_nonneg(-x_off, s as isize).max(0) as usize;
                        let ox1 = ((floor_div(w_in as isize - 1 - x_off, s as isize) + 1).max(0)
                            as usize)
                            .min(w_out);
                        if ox0 >= ox1 {
                            continue;
                        }
                        for oy in 0..h_out {
                            let iy = oy as isize * s as isize + y_off;
                            if iy < 0 || iy >= h_in as isize {
                                continue;
                            }
                            let gin_row =
                                &mut gplane[iy as usize * w_in..(iy as usize + 1) * w_in];
                            let g_row = &g_plane[oy * w_out..oy * w_out + w_out];
                            if s == 1 {
                                let base = (ox0 as isize + x_off) as usize;
                                for (gi, go) in
                                    gin_row[base..base + (ox1 - ox0)].iter_mut().zip(&g_row[ox0..ox1])
                                {
                                    *gi += w * *go;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = (ox as isize * s as isize + x_off) as usize;
                                    gin_row[ix] += w * g_row[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
        Some(gin)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_in,
        weights: grad_w,
        bias,
    })
}

/// Dot product with eight independent accumulators. The lane split lets the
/// compiler vectorize the reduction; the order is fixed, so results are
/// deterministic (though not identical to a naive left fold).
pub(crate) fn dot8<E: Element>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut lanes = [E::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    let mut acc = E::ZERO;
    for l in lanes {
        acc += l;
    }
    for i in chunks * 8..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Eight-lane sum; same determinism contract as [`dot8`].
pub(crate) fn sum8<E: Element>(a: &[E]) -> E {
    let mut lanes = [E::ZERO; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let x = &a[i * 8..i * 8 + 8];
        for l in 0..8 {
            lanes[l] += x[l];
        }
    }
    let mut acc = E::ZERO;
    for l in lanes {
        acc += l;
    }
    for i in chunks * 8..a.len() {
        acc += a[i];
    }
    acc
}

fn ceil_div_nonneg(a: isize, b: isize) -> isize {
    if a <= 0 {
        0
    } else {
        (a + b - 1) / b
    }
}

fn floor_div(a: isize, b: isize) -> isize {
    a.div_euclid(b)
}

/// Whether batch norm consumes batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Standalone batch normalization state: scale/shift plus running statistics.
#[derive(Debug, Clone)]
pub struct BatchNormState<E: Element> {
    pub gamma: Vec<E>,
    pub beta: Vec<E>,
    pub running_mean: Vec<E>,
    pub running_var: Vec<E>,
    pub momentum: f64,
    pub epsilon: f64,
    pub mode: Mode,
}

impl<E: Element> BatchNormState<E> {
    pub fn new(channels: usize, momentum: f64, epsilon: f64) -> Self {
        BatchNormState {
            gamma: vec![E::ONE; channels],
            beta: vec![E::ZERO; channels],
            running_mean: vec![E::ZERO; channels],
            running_var: vec![E::ONE; channels],
            momentum,
            epsilon,
            mode: Mode::Training,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Normalize each channel with the given statistics, then scale and shift.
pub(crate) fn bn_normalize<E: Element>(
    input: &Tensor<E>,
    gamma: &[E],
    beta: &[E],
    mean: &[E],
    var: &[E],
    epsilon: f64,
) -> Tensor<E> {
    let shape = input.shape();
    let plane = shape.plane();
    let eps = E::from_f64(epsilon);
    let mut out = Tensor::zeros(shape);
    for_each_chunk_mut(out.data_mut(), plane, |idx, dst| {
        let n = idx / shape.c;
        let c = idx % shape.c;
        let inv_std = E::ONE / (var[c] + eps).sqrt();
        let (g, b, m) = (gamma[c], beta[c], mean[c]);
        for (o, &x) in dst.iter_mut().zip(input.plane(n, c)) {
            *o = (x - m) * inv_std * g + b;
        }
    });
    out
}

/// Batch normalization. Training mode uses batch statistics over
/// (batch, h, w) per channel and folds them into the running statistics as
/// `running <- (1 - momentum) * running + momentum * batch`; inference mode
/// uses the running statistics only.
pub fn batch_norm<E: Element>(input: &Tensor<E>, state: &mut BatchNormState<E>) -> Result<Tensor<E>> {
    let shape = input.shape();
    if shape.c != state.channels() {
        return Err(Error::ChannelMismatch {
            context: "batch_norm".into(),
            expected: state.channels(),
            actual: shape.c,
        });
    }
    match state.mode {
        Mode::Training => {
            let m = shape.n * shape.plane();
            if m < 2 {
                return Err(Error::BatchTooSmall(m));
            }
            let (mean, var) = batch_stats(input);
            let out = bn_normalize(input, &state.gamma, &state.beta, &mean, &var, state.epsilon);
            let mom = E::from_f64(state.momentum);
            let keep = E::from_f64(1.0 - state.momentum);
            for c in 0..state.channels() {
                state.running_mean[c] = keep * state.running_mean[c] + mom * mean[c];
                state.running_var[c] = keep * state.running_var[c] + mom * var[c];
            }
            Ok(out)
        }
        Mode::Inference => Ok(bn_normalize(
            input,
            &state.gamma,
            &state.beta,
            &state.running_mean,
            &state.running_var,
            state.epsilon,
        )),
    }
}

/// Per-channel batch statistics over (batch, h, w).
pub fn batch_stats<E: Element>(input: &Tensor<E>) -> (Vec<E>, Vec<E>) {
    let shape = input.shape();
    let m = E::from_f64((shape.n * shape.plane()) as f64);
    let stats = map_indexed(shape.c, |c| {
        let mut sum = E::ZERO;
        for n in 0..shape.n {
            sum += sum8(input.plane(n, c));
        }
        let mean = sum / m;
        let mut var_sum = E::ZERO;
        for n in 0..shape.n {
            let plane = input.plane(n, c);
            let mut lanes = [E::ZERO; 8];
            let chunks = plane.len() / 8;
            for i in 0..chunks {
                let x = &plane[i * 8..i * 8 + 8];
                for l in 0..8 {
                    let d = x[l] - mean;
                    lanes[l] += d * d;
                }
            }
            for l in lanes {
                var_sum += l;
            }
            for &v in &plane[chunks * 8..] {
                let d = v - mean;
                var_sum += d * d;
            }
        }
        (mean, var_sum / m)
    });
    stats.into_iter().unzip()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(shape: Shape) -> Tensor<f64> {
        Tensor::filled(shape, 1.0)
    }

    #[test]
    fn all_ones_3x3_full_overlap_sums_nine() {
        let spec = ConvSpec::new(3, 1, 1, 0, 1, 1, false).unwrap();
        let out = conv2d_forward(
            &ones(Shape::new(1, 1, 3, 3)),
            &ones(Shape::new(1, 1, 3, 3)),
            None,
            &spec,
            1,
        )
        .unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn dilation_two_covers_five_wide_input() {
        // k_eff = 3 + 2*1 = 5, so a 5x5 input with no padding yields one tap.
        let spec = ConvSpec::new(3, 2, 1, 0, 1, 1, false).unwrap();
        assert_eq!(spec.k_eff(), 5);
        let out = conv2d_forward(
            &ones(Shape::new(1, 1, 5, 5)),
            &ones(Shape::new(1, 1, 3, 3)),
            None,
            &spec,
            1,
        )
        .unwrap();
        assert_eq!(out.shape(), Shape::new(1, 1, 1, 1));
        assert_eq!(out.data()[0], 9.0);
    }

    #[test]
    fn same_padding_preserves_shape_for_odd_kernels() {
        for k in [1usize, 3, 5] {
            let spec = ConvSpec::same(k, 1, 2, 3).unwrap();
            let input = ones(Shape::new(1, 2, 7, 9));
            let w = ones(Shape::new(3, 2, k, k));
            let out = conv2d_forward(&input, &w, None, &spec, 1).unwrap();
            assert_eq!(out.shape(), Shape::new(1, 3, 7, 9), "k={k}");
        }
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let spec = ConvSpec::new(3, 1, 1, 0, 4, 2, false).unwrap();
        let err = conv2d_forward(
            &ones(Shape::new(1, 3, 5, 5)),
            &ones(Shape::new(2, 4, 3, 3)),
            None,
            &spec,
            1,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("expected 4"), "{msg}");
        assert!(msg.contains("got 3"), "{msg}");
    }

    #[test]
    fn too_small_input_is_rejected() {
        let spec = ConvSpec::new(3, 16, 1, 0, 1, 1, false).unwrap();
        let err = conv2d_forward(
            &ones(Shape::new(1, 1, 8, 8)),
            &ones(Shape::new(1, 1, 3, 3)),
            None,
            &spec,
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyConvOutput { .. }), "{err}");
    }

    #[test]
    fn batch_stats_of_constant_channel() {
        let t = Tensor::filled(Shape::new(2, 1, 3, 3), 5.0f64);
        let (mean, var) = batch_stats(&t);
        assert_eq!(mean, vec![5.0]);
        assert_eq!(var, vec![0.0]);
    }

    #[test]
    fn bn_constant_channel_training_gives_zeros() {
        let t = Tensor::filled(Shape::new(2, 1, 4, 4), 3.25f64);
        let mut state = BatchNormState::new(1, BN_MOMENTUM, BN_EPSILON);
        let out = batch_norm(&t, &mut state).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bn_training_normalizes_random_input() {
        // deterministic pseudo-random values
        let shape = Shape::new(4, 3, 8, 8);
        let data: Vec<f64> = (0..shape.count())
            .map(|i| (((i * 2654435761usize) % 1000) as f64) / 250.0 - 2.0)
            .collect();
        let t = Tensor::from_vec(shape, data).unwrap();
        let mut state = BatchNormState::new(3, BN_MOMENTUM, BN_EPSILON);
        let out = batch_norm(&t, &mut state).unwrap();
        let (mean, var) = batch_stats(&out);
        for c in 0..3 {
            assert!(mean[c].abs() < 1e-5, "channel {c} mean {}", mean[c]);
            assert!((var[c] - 1.0).abs() < 1e-3, "channel {c} var {}", var[c]);
        }
    }

    #[test]
    fn bn_inference_closed_form() {
        // running_mean 0, running_var 1, gamma 2, beta 1 -> 2x/sqrt(1+eps) + 1
        let shape = Shape::new(1, 1, 2, 3);
        let t = Tensor::from_vec(shape, vec![-1.0f64, -0.5, 0.0, 0.25, 1.0, 2.0]).unwrap();
        let mut state = BatchNormState::new(1, BN_MOMENTUM, BN_EPSILON);
        state.gamma[0] = 2.0;
        state.beta[0] = 1.0;
        state.mode = Mode::Inference;
        let out = batch_norm(&t, &mut state).unwrap();
        for (o, x) in out.data().iter().zip(t.data()) {
            let expected = 2.0 * x / (1.0 + BN_EPSILON).sqrt() + 1.0;
            assert!((o - expected).abs() < 1e-12, "{o} vs {expected}");
        }
    }

    #[test]
    fn bn_inference_ignores_batch_statistics() {
        let shape = Shape::new(1, 1, 2, 2);
        let a = Tensor::from_vec(shape, vec![5.0f64, 6.0, 7.0, 8.0]).unwrap();
        let mut state = BatchNormState::new(1, BN_MOMENTUM, BN_EPSILON);
        state.mode = Mode::Inference;
        let before = state.running_mean.clone();
        let out = batch_norm(&a, &mut state).unwrap();
        assert_eq!(state.running_mean, before);
        // output is an affine map of the input, not a standardization
        assert!((out.data()[0] - 5.0 / (1.0f64 + BN_EPSILON).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bn_rejects_tiny_training_batches() {
        let t = Tensor::filled(Shape::new(1, 2, 1, 1), 1.0f64);
        let mut state = BatchNormState::new(2, BN_MOMENTUM, BN_EPSILON);
        assert!(matches!(
            batch_norm(&t, &mut state),
            Err(Error::BatchTooSmall(1))
        ));
    }

    #[test]
    fn bn_rejects_channel_mismatch() {
        let t = Tensor::filled(Shape::new(1, 3, 2, 2), 1.0f64);
        let mut state = BatchNormState::new(2, BN_MOMENTUM, BN_EPSILON);
        assert!(matches!(
            batch_norm(&t, &mut state),
            Err(Error::ChannelMismatch { .. })
        ));
    }
}
