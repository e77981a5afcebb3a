//! Minimal CNN layers with explicit forward and backward passes.
//!
//! Feature maps are dense CHW buffers. Convolutions are stride-1 with
//! implicit zero padding (outputs keep the input's spatial size); spatial
//! reduction comes from 2x2 average pooling. Everything is generic over the
//! scalar so training runs in f32 while gradient verification runs in f64.

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type of a network: f32 for training, f64 for verification.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + std::ops::AddAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A dense channels-first activation buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<F> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> FeatureMap<F> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![F::zero(); channels * height * width],
        }
    }

    pub fn from_data(channels: usize, height: usize, width: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), channels * height * width);
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn plane(&self, c: usize) -> &[F] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [F] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Sum of all cells, accumulated in f64.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().unwrap_or(0.0)).sum()
    }
}

/// Gradients of one convolution's parameters.
#[derive(Debug, Clone)]
pub struct ConvGrad<F> {
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

/// Stride-1 convolution with zero padding and optional dilation.
/// Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<F> {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weights: Vec<F>,
    pub bias: Vec<F>,
}

impl<F: Scalar> Conv2d<F> {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernels must be odd for same-size output");
        Conv2d {
            name: name.to_string(),
            in_channels,
            out_channels,
            kernel,
            dilation,
            weights: vec![F::zero(); out_channels * in_channels * kernel * kernel],
            bias: vec![F::zero(); out_channels],
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[inline]
    fn weight_index(&self, o: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + ic) * self.kernel + ky) * self.kernel + kx
    }

    pub fn forward(&self, x: &FeatureMap<F>) -> FeatureMap<F> {
        assert_eq!(x.channels, self.in_channels, "conv {}: channel mismatch", self.name);
        let (h, w) = (x.height, x.width);
        let r = (self.kernel as isize - 1) / 2;
        let d = self.dilation as isize;
        let mut y = FeatureMap::zeros(self.out_channels, h, w);

        for o in 0..self.out_channels {
            let yp = y.plane_mut(o);
            yp.fill(self.bias[o]);
            for ic in 0..self.in_channels {
                let xp = x.plane(ic);
                for ky in 0..self.kernel {
                    let off_y = d * (ky as isize - r);
                    let y0 = (-off_y).max(0) as usize;
                    let y1 = ((h as isize - off_y).min(h as isize)).max(0) as usize;
                    if y1 <= y0 {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let wv = self.weights[self.weight_index(o, ic, ky, kx)];
                        let off_x = d * (kx as isize - r);
                        let x0 = (-off_x).max(0) as usize;
                        let x1 = ((w as isize - off_x).min(w as isize)).max(0) as usize;
                        if x1 <= x0 {
                            continue;
                        }
                        for row in y0..y1 {
                            let src_row = (row as isize + off_y) as usize;
                            let src_lo = src_row * w + (x0 as isize + off_x) as usize;
                            let src = &xp[src_lo..src_lo + (x1 - x0)];
                            let dst = &mut yp[row * w + x0..row * w + x1];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv = *dv + wv * *sv;
                            }
                        }
                    }
                }
            }
        }
        y
    }

    /// Returns the gradient w.r.t. the input and the parameter gradients.
    pub fn backward(&self, x: &FeatureMap<F>, gy: &FeatureMap<F>) -> (FeatureMap<F>, ConvGrad<F>) {
        assert_eq!(gy.channels, self.out_channels);
        assert_eq!(x.channels, self.in_channels);
        let (h, w) = (x.height, x.width);
        let r = (self.kernel as isize - 1) / 2;
        let d = self.dilation as isize;

        let mut gx = FeatureMap::zeros(self.in_channels, h, w);
        let mut gw = vec![F::zero(); self.weights.len()];
        let mut gb = vec![F::zero(); self.out_channels];

        for o in 0..self.out_channels {
            let gyp = gy.plane(o);
            let mut bias_acc = F::zero();
            for &g in gyp {
                bias_acc += g;
            }
            gb[o] = bias_acc;

            for ic in 0..self.in_channels {
                let xp = x.plane(ic);
                let gxp = gx.plane_mut(ic);
                for ky in 0..self.kernel {
                    let off_y = d * (ky as isize - r);
                    let y0 = (-off_y).max(0) as usize;
                    let y1 = ((h as isize - off_y).min(h as isize)).max(0) as usize;
                    if y1 <= y0 {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let widx = self.weight_index(o, ic, ky, kx);
                        let wv = self.weights[widx];
                        let off_x = d * (kx as isize - r);
                        let x0 = (-off_x).max(0) as usize;
                        let x1 = ((w as isize - off_x).min(w as isize)).max(0) as usize;
                        if x1 <= x0 {
                            continue;
                        }
                        let mut acc = F::zero();
                        for row in y0..y1 {
                            let src_row = (row as isize + off_y) as usize;
                            let src_lo = src_row * w + (x0 as isize + off_x) as usize;
                            let len = x1 - x0;
                            let gy_row = &gyp[row * w + x0..row * w + x1];
                            let x_row = &xp[src_lo..src_lo + len];
                            let gx_row = &mut gxp[src_lo..src_lo + len];
                            for i in 0..len {
                                gx_row[i] += wv * gy_row[i];
                                acc += gy_row[i] * x_row[i];
                            }
                        }
                        gw[widx] = acc;
                    }
                }
            }
        }
        (gx, ConvGrad { weights: gw, bias: gb })
    }
}

/// 2x2 average pooling with stride 2. Inputs must have even spatial dims.
pub fn avg_pool2_forward<F: Scalar>(x: &FeatureMap<F>) -> FeatureMap<F> {
    assert!(x.height % 2 == 0 && x.width % 2 == 0, "pool needs even dims");
    let (oh, ow) = (x.height / 2, x.width / 2);
    let quarter = F::from_f64(0.25).unwrap();
    let mut y = FeatureMap::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let xp = x.plane(c);
        let yp = y.plane_mut(c);
        for j in 0..oh {
            let top = 2 * j * x.width;
            let bottom = (2 * j + 1) * x.width;
            for i in 0..ow {
                let s = xp[top + 2 * i]
                    + xp[top + 2 * i + 1]
                    + xp[bottom + 2 * i]
                    + xp[bottom + 2 * i + 1];
                yp[j * ow + i] = s * quarter;
            }
        }
    }
    y
}

pub fn avg_pool2_backward<F: Scalar>(gy: &FeatureMap<F>, in_h: usize, in_w: usize) -> FeatureMap<F> {
    let quarter = F::from_f64(0.25).unwrap();
    let mut gx = FeatureMap::zeros(gy.channels, in_h, in_w);
    for c in 0..gy.channels {
        let gyp = gy.plane(c);
        let gxp = gx.plane_mut(c);
        for j in 0..gy.height {
            for i in 0..gy.width {
                let g = gyp[j * gy.width + i] * quarter;
                let top = 2 * j * in_w;
                let bottom = (2 * j + 1) * in_w;
                gxp[top + 2 * i] = g;
                gxp[top + 2 * i + 1] = g;
                gxp[bottom + 2 * i] = g;
                gxp[bottom + 2 * i + 1] = g;
            }
        }
    }
    gx
}

/// Full-wave rectification |x|: keeps outputs non-negative without the
/// dead-gradient trap a hard ReLU head falls into under a hot optimizer.
pub fn abs_forward<F: Scalar>(x: &FeatureMap<F>) -> FeatureMap<F> {
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        *v = v.abs();
    }
    y
}

/// Gradient of |x| given the pre-activation `x`: sign(x) * gy (zero at the
/// kink).
pub fn abs_backward<F: Scalar>(x: &FeatureMap<F>, gy: &FeatureMap<F>) -> FeatureMap<F> {
    let mut gx = gy.clone();
    for (g, &pre) in gx.data.iter_mut().zip(&x.data) {
        if pre < F::zero() {
            *g = -*g;
        } else if pre == F::zero() {
            *g = F::zero();
        }
    }
    gx
}

pub fn relu_forward<F: Scalar>(x: &FeatureMap<F>) -> FeatureMap<F> {
    let mut y = x.clone();
    for v in y.data.iter_mut() {
        if *v < F::zero() {
            *v = F::zero();
        }
    }
    y
}

/// ReLU gradient masked by the forward *output* (y > 0 iff x > 0).
pub fn relu_backward<F: Scalar>(y: &FeatureMap<F>, gy: &FeatureMap<F>) -> FeatureMap<F> {
    let mut gx = gy.clone();
    for (g, &out) in gx.data.iter_mut().zip(&y.data) {
        if out <= F::zero() {
            *g = F::zero();
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_from(c: usize, h: usize, w: usize, vals: &[f64]) -> FeatureMap<f64> {
        FeatureMap::from_data(c, h, w, vals.to_vec())
    }

    #[test]
    fn identity_kernel_copies_input() {
        let mut conv = Conv2d::<f64>::new("id", 1, 1, 3, 1);
        let center = conv.weight_index(0, 0, 1, 1);
        conv.weights[center] = 1.0;
        let x = map_from(1, 2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = conv.forward(&x);
        assert_eq!(y.data, x.data);
    }

    #[test]
    fn shifted_kernel_uses_zero_padding() {
        let mut conv = Conv2d::<f64>::new("shift", 1, 1, 3, 1);
        // Weight at (ky=1, kx=0) reads the pixel to the left.
        let left = conv.weight_index(0, 0, 1, 0);
        conv.weights[left] = 1.0;
        let x = map_from(1, 1, 3, &[7.0, 8.0, 9.0]);
        let y = conv.forward(&x);
        assert_eq!(y.data, vec![0.0, 7.0, 8.0]);
    }

    #[test]
    fn bias_fills_output() {
        let mut conv = Conv2d::<f64>::new("b", 1, 2, 1, 1);
        conv.bias = vec![0.5, -1.5];
        let x = map_from(1, 2, 2, &[0.0; 4]);
        let y = conv.forward(&x);
        assert_eq!(y.plane(0), &[0.5; 4]);
        assert_eq!(y.plane(1), &[-1.5; 4]);
    }

    #[test]
    fn dilated_kernel_reaches_further() {
        let mut conv = Conv2d::<f64>::new("dil", 1, 1, 3, 2);
        let right = conv.weight_index(0, 0, 1, 2); // two to the right
        conv.weights[right] = 1.0;
        let x = map_from(1, 1, 5, &[1.0, 2.0, 3.0, 4.0, 5.0]);
        let y = conv.forward(&x);
        assert_eq!(y.data, vec![3.0, 4.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut conv = Conv2d::<f64>::new("fd", 2, 3, 3, 1);
        for w in conv.weights.iter_mut() {
            *w = rng.random::<f64>() - 0.5;
        }
        for b in conv.bias.iter_mut() {
            *b = rng.random::<f64>() - 0.5;
        }
        let x = FeatureMap::from_data(
            2,
            4,
            5,
            (0..40).map(|_| rng.random::<f64>() - 0.5).collect(),
        );
        // Loss = sum(y^2) / 2, so gy = y.
        let y = conv.forward(&x);
        let (gx, grad) = conv.backward(&x, &y);

        let loss = |c: &Conv2d<f64>, x: &FeatureMap<f64>| -> f64 {
            c.forward(x).data.iter().map(|v| v * v).sum::<f64>() / 2.0
        };
        let eps = 1e-6;

        for idx in [0usize, 7, 23, conv.weights.len() - 1] {
            let mut hi = conv.clone();
            hi.weights[idx] += eps;
            let mut lo = conv.clone();
            lo.weights[idx] -= eps;
            let fd = (loss(&hi, &x) - loss(&lo, &x)) / (2.0 * eps);
            assert!(
                (fd - grad.weights[idx]).abs() <= 1e-6 * fd.abs().max(1.0),
                "weight {idx}: fd {fd} vs analytic {}",
                grad.weights[idx]
            );
        }
        for idx in 0..conv.bias.len() {
            let mut hi = conv.clone();
            hi.bias[idx] += eps;
            let mut lo = conv.clone();
            lo.bias[idx] -= eps;
            let fd = (loss(&hi, &x) - loss(&lo, &x)) / (2.0 * eps);
            assert!((fd - grad.bias[idx]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
        for idx in [0usize, 13, 39] {
            let mut hi_x = x.clone();
            hi_x.data[idx] += eps;
            let mut lo_x = x.clone();
            lo_x.data[idx] -= eps;
            let fd = (loss(&conv, &hi_x) - loss(&conv, &lo_x)) / (2.0 * eps);
            assert!((fd - gx.data[idx]).abs() <= 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn avg_pool_round_trip_shapes_and_values() {
        let x = map_from(1, 2, 4, &[1.0, 3.0, 5.0, 7.0, 2.0, 4.0, 6.0, 8.0]);
        let y = avg_pool2_forward(&x);
        assert_eq!((y.height, y.width), (1, 2));
        assert_eq!(y.data, vec![2.5, 6.5]);
        let gx = avg_pool2_backward(&y, 2, 4);
        assert_eq!(gx.data, vec![0.625, 0.625, 1.625, 1.625, 0.625, 0.625, 1.625, 1.625]);
    }

    #[test]
    fn relu_masks_negatives() {
        let x = map_from(1, 1, 4, &[-1.0, 0.0, 2.0, -3.0]);
        let y = relu_forward(&x);
        assert_eq!(y.data, vec![0.0, 0.0, 2.0, 0.0]);
        let gy = map_from(1, 1, 4, &[1.0, 1.0, 1.0, 1.0]);
        let gx = relu_backward(&y, &gy);
        assert_eq!(gx.data, vec![0.0, 0.0, 1.0, 0.0]);
    }
}
