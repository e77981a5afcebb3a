//! Network graphs for the toy crowd regressors: a shared stem, one or more
//! parallel columns, channel concatenation, and a 1x1 regression head with
//! a non-negative (ReLU) output.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{
    abs_backward, abs_forward, avg_pool2_backward, avg_pool2_forward, relu_backward,
    relu_forward, Conv2d, ConvGrad, FeatureMap, Scalar,
};
use super::{ModelFamily, ModelSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub enum Layer<F> {
    Conv(Conv2d<F>),
    Relu,
    Pool,
}

#[derive(Debug, Clone)]
pub struct Net<F> {
    pub stem: Vec<Layer<F>>,
    pub columns: Vec<Vec<Layer<F>>>,
    pub head: Conv2d<F>,
    pub stride: u32,
}

/// Parameter gradients aligned with [`Net::convs`] order (head last).
#[derive(Debug, Clone)]
pub struct NetGrads<F> {
    pub convs: Vec<ConvGrad<F>>,
}

impl<F: Scalar> NetGrads<F> {
    pub fn accumulate(&mut self, other: &NetGrads<F>) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            for (x, y) in a.weights.iter_mut().zip(&b.weights) {
                *x += *y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: F) {
        for g in self.convs.iter_mut() {
            for x in g.weights.iter_mut() {
                *x *= factor;
            }
            for x in g.bias.iter_mut() {
                *x *= factor;
            }
        }
    }
}

/// Activations retained by a forward pass for the backward pass.
pub struct ForwardCache<F> {
    stem_acts: Vec<FeatureMap<F>>,
    column_acts: Vec<Vec<FeatureMap<F>>>,
    concat: FeatureMap<F>,
    pre_head: FeatureMap<F>,
    output: FeatureMap<F>,
}

impl<F: Scalar> ForwardCache<F> {
    pub fn output(&self) -> &FeatureMap<F> {
        &self.output
    }
}

fn layer_forward<F: Scalar>(layer: &Layer<F>, x: &FeatureMap<F>) -> FeatureMap<F> {
    match layer {
        Layer::Conv(conv) => conv.forward(x),
        Layer::Relu => relu_forward(x),
        Layer::Pool => avg_pool2_forward(x),
    }
}

/// Runs layers sequentially; returns activations with `acts[0]` the input
/// and `acts[i + 1]` the output of layer `i`.
fn chain_forward<F: Scalar>(layers: &[Layer<F>], input: FeatureMap<F>) -> Vec<FeatureMap<F>> {
    let mut acts = Vec::with_capacity(layers.len() + 1);
    acts.push(input);
    for layer in layers {
        let y = layer_forward(layer, acts.last().unwrap());
        acts.push(y);
    }
    acts
}

/// Backpropagates through a chain; returns the gradient at the chain input
/// and conv gradients in forward layer order.
fn chain_backward<F: Scalar>(
    layers: &[Layer<F>],
    acts: &[FeatureMap<F>],
    mut g: FeatureMap<F>,
) -> (FeatureMap<F>, Vec<ConvGrad<F>>) {
    let mut grads_rev = Vec::new();
    for (i, layer) in layers.iter().enumerate().rev() {
        match layer {
            Layer::Conv(conv) => {
                let (gx, grad) = conv.backward(&acts[i], &g);
                grads_rev.push(grad);
                g = gx;
            }
            Layer::Relu => {
                g = relu_backward(&acts[i + 1], &g);
            }
            Layer::Pool => {
                g = avg_pool2_backward(&g, acts[i].height, acts[i].width);
            }
        }
    }
    grads_rev.reverse();
    (g, grads_rev)
}

fn concat_channels<F: Scalar>(parts: &[&FeatureMap<F>]) -> FeatureMap<F> {
    let (h, w) = (parts[0].height, parts[0].width);
    let channels = parts.iter().map(|p| p.channels).sum();
    let mut out = FeatureMap::zeros(channels, h, w);
    let mut c0 = 0;
    for part in parts {
        assert_eq!((part.height, part.width), (h, w), "column output size mismatch");
        for c in 0..part.channels {
            out.plane_mut(c0 + c).copy_from_slice(part.plane(c));
        }
        c0 += part.channels;
    }
    out
}

impl<F: Scalar> Net<F> {
    /// All convolutions in deterministic order: stem, columns, head.
    pub fn convs(&self) -> Vec<&Conv2d<F>> {
        let mut v = Vec::new();
        for l in &self.stem {
            if let Layer::Conv(c) = l {
                v.push(c);
            }
        }
        for col in &self.columns {
            for l in col {
                if let Layer::Conv(c) = l {
                    v.push(c);
                }
            }
        }
        v.push(&self.head);
        v
    }

    pub fn convs_mut(&mut self) -> Vec<&mut Conv2d<F>> {
        let mut v = Vec::new();
        for l in self.stem.iter_mut() {
            if let Layer::Conv(c) = l {
                v.push(c);
            }
        }
        for col in self.columns.iter_mut() {
            for l in col.iter_mut() {
                if let Layer::Conv(c) = l {
                    v.push(c);
                }
            }
        }
        v.push(&mut self.head);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.convs().iter().map(|c| c.parameter_count()).sum()
    }

    /// Named parameter tensors (`<conv>.weight`, `<conv>.bias`) in conv order.
    pub fn named_tensors(&self) -> Vec<(String, Vec<F>)> {
        let mut out = Vec::new();
        for conv in self.convs() {
            out.push((format!("{}.weight", conv.name), conv.weights.clone()));
            out.push((format!("{}.bias", conv.name), conv.bias.clone()));
        }
        out
    }

    /// Loads named tensors produced by [`Net::named_tensors`].
    pub fn load_named_tensors(&mut self, tensors: &[(String, Vec<F>)]) -> Result<()> {
        let mut by_name: std::collections::BTreeMap<&str, &Vec<F>> =
            tensors.iter().map(|(n, v)| (n.as_str(), v)).collect();
        for conv in self.convs_mut() {
            for (suffix, slot) in [("weight", &mut conv.weights), ("bias", &mut conv.bias)] {
                let key = format!("{}.{suffix}", conv.name);
                let values = by_name.remove(key.as_str()).ok_or_else(|| {
                    Error::ShapeMismatch(format!("checkpoint missing tensor '{key}'"))
                })?;
                if values.len() != slot.len() {
                    return Err(Error::ShapeMismatch(format!(
                        "tensor '{key}' has {} elements, expected {}",
                        values.len(),
                        slot.len()
                    )));
                }
                slot.copy_from_slice(values);
            }
        }
        if !by_name.is_empty() {
            let extras: Vec<&str> = by_name.keys().copied().collect();
            return Err(Error::ShapeMismatch(format!(
                "checkpoint carries unknown tensors: {extras:?}"
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: FeatureMap<F>) -> ForwardCache<F> {
        let stem_acts = chain_forward(&self.stem, input);
        let stem_out = stem_acts.last().unwrap();
        let column_acts: Vec<Vec<FeatureMap<F>>> = self
            .columns
            .iter()
            .map(|col| chain_forward(col, stem_out.clone()))
            .collect();
        let outputs: Vec<&FeatureMap<F>> =
            column_acts.iter().map(|acts| acts.last().unwrap()).collect();
        let concat = concat_channels(&outputs);
        let pre_head = self.head.forward(&concat);
        let output = abs_forward(&pre_head);
        ForwardCache {
            stem_acts,
            column_acts,
            concat,
            pre_head,
            output,
        }
    }

    /// Backpropagates `g_output` (gradient w.r.t. the network output).
    pub fn backward(&self, cache: &ForwardCache<F>, g_output: &FeatureMap<F>) -> NetGrads<F> {
        let g_pre = abs_backward(&cache.pre_head, g_output);
        let (g_concat, head_grad) = self.head.backward(&cache.concat, &g_pre);

        // Split the concat gradient back into per-column slices.
        let stem_out = cache.stem_acts.last().unwrap();
        let mut g_stem_out = FeatureMap::zeros(stem_out.channels, stem_out.height, stem_out.width);
        let mut column_grads: Vec<Vec<ConvGrad<F>>> = Vec::with_capacity(self.columns.len());
        let mut c0 = 0;
        for (col, acts) in self.columns.iter().zip(&cache.column_acts) {
            let out = acts.last().unwrap();
            let mut g_col = FeatureMap::zeros(out.channels, out.height, out.width);
            for c in 0..out.channels {
                g_col.plane_mut(c).copy_from_slice(g_concat.plane(c0 + c));
            }
            c0 += out.channels;
            let (g_in, grads) = chain_backward(col, acts, g_col);
            for (acc, g) in g_stem_out.data.iter_mut().zip(&g_in.data) {
                *acc += *g;
            }
            column_grads.push(grads);
        }

        let (_, stem_grads) = chain_backward(&self.stem, &cache.stem_acts, g_stem_out);

        let mut convs = stem_grads;
        for grads in column_grads {
            convs.extend(grads);
        }
        convs.push(head_grad);
        NetGrads { convs }
    }
}

/// Per-sample squared-error density loss: mean over cells of (pred - target)^2.
/// Returns the loss and the gradient w.r.t. the prediction.
pub fn density_loss<F: Scalar>(pred: &FeatureMap<F>, target: &[F]) -> (f64, FeatureMap<F>) {
    assert_eq!(pred.data.len(), target.len(), "loss shape mismatch");
    let n = F::from_usize(target.len()).unwrap();
    let two = F::from_f64(2.0).unwrap();
    let mut grad = FeatureMap::zeros(pred.channels, pred.height, pred.width);
    let mut loss = 0.0f64;
    for ((g, &p), &t) in grad.data.iter_mut().zip(&pred.data).zip(target) {
        let d = p - t;
        loss += (d * d).to_f64().unwrap();
        *g = two * d / n;
    }
    (loss / target.len() as f64, grad)
}

fn he_uniform_init<F: Scalar>(conv: &mut Conv2d<F>, rng: &mut ChaCha8Rng) {
    let fan_in = (conv.in_channels * conv.kernel * conv.kernel) as f64;
    let limit = (6.0 / fan_in).sqrt();
    for w in conv.weights.iter_mut() {
        *w = F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * limit).unwrap();
    }
    for b in conv.bias.iter_mut() {
        *b = F::zero();
    }
}

/// Builds an initialized network for `spec`. Initialization is a pure
/// function of (spec, seed).
pub fn build_net<F: Scalar>(spec: &ModelSpec, seed: u64) -> Result<Net<F>> {
    let w = spec.channels as usize;
    if w == 0 {
        return Err(Error::parameter("channels", "width multiplier must be >= 1"));
    }
    let mut net = match spec.family {
        ModelFamily::MultiColumn => {
            // Three columns with large/medium/small kernels over a pooled
            // stem; one more pool inside each column gives stride 4.
            let (cl, cm, cs) = (4 * w, 3 * w, 2 * w);
            let column = |tag: &str, c: usize, k0: usize, k1: usize| {
                vec![
                    Layer::Conv(Conv2d::new(&format!("{tag}.conv0"), 3, c, k0, 1)),
                    Layer::Relu,
                    Layer::Pool,
                    Layer::Conv(Conv2d::new(&format!("{tag}.conv1"), c, 2 * c, k1, 1)),
                    Layer::Relu,
                    Layer::Conv(Conv2d::new(&format!("{tag}.conv2"), 2 * c, c, 3, 1)),
                    Layer::Relu,
                ]
            };
            Net {
                stem: vec![Layer::Pool],
                columns: vec![
                    column("large", cl, 7, 5),
                    column("medium", cm, 5, 3),
                    column("small", cs, 3, 3),
                ],
                head: Conv2d::new("head", cl + cm + cs, 1, 1, 1),
                stride: 4,
            }
        }
        ModelFamily::DilatedSingleColumn => {
            // A deep single column: three pooled 3x3 stages, then dilated
            // 3x3 convolutions at stride 8.
            let (c1, c2, c3) = (2 * w, 4 * w, 8 * w);
            Net {
                stem: vec![],
                columns: vec![vec![
                    Layer::Pool,
                    Layer::Conv(Conv2d::new("front.conv0", 3, c1, 3, 1)),
                    Layer::Relu,
                    Layer::Pool,
                    Layer::Conv(Conv2d::new("front.conv1", c1, c2, 3, 1)),
                    Layer::Relu,
                    Layer::Pool,
                    Layer::Conv(Conv2d::new("front.conv2", c2, c3, 3, 1)),
                    Layer::Relu,
                    Layer::Conv(Conv2d::new("back.conv0", c3, c3, 3, 2)),
                    Layer::Relu,
                    Layer::Conv(Conv2d::new("back.conv1", c3, c2, 3, 2)),
                    Layer::Relu,
                ]],
                head: Conv2d::new("head", c2, 1, 1, 1),
                stride: 8,
            }
        }
        ModelFamily::External => return Err(Error::ExternalModel),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for conv in net.convs_mut() {
        he_uniform_init(conv, &mut rng);
    }
    Ok(net)
}

/// Result of comparing analytic gradients against central finite
/// differences on a sample of weights.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
}

/// Verifies analytic gradients of the density loss against central finite
/// differences for `n_weights` randomly chosen parameters. Runs the same
/// generic forward/backward code the f32 trainer uses, instantiated in f64
/// so the finite differences are trustworthy.
pub fn gradient_check(spec: &ModelSpec, seed: u64, n_weights: usize) -> Result<GradCheckReport> {
    let mut net: Net<f64> = build_net(spec, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(crate::util::derive_seed(seed, "gradcheck"));

    let (h, w) = (16usize, 16usize);
    let input = FeatureMap::from_data(
        3,
        h,
        w,
        (0..3 * h * w).map(|_| rng.random::<f64>()).collect(),
    );
    let stride = net.stride as usize;
    let target: Vec<f64> = (0..(h / stride) * (w / stride))
        .map(|_| rng.random::<f64>() * 0.2)
        .collect();

    let cache = net.forward(input.clone());
    let (_, g_out) = density_loss(cache.output(), &target);
    let grads = net.backward(&cache, &g_out);

    // Flatten (tensor, element) addressing: even tensors are weights, odd
    // tensors are biases, paired per conv.
    let sizes: Vec<usize> = net
        .convs()
        .iter()
        .flat_map(|c| [c.weights.len(), c.bias.len()])
        .collect();
    let loss_of = |net: &Net<f64>| -> f64 {
        let cache = net.forward(input.clone());
        density_loss(cache.output(), &target).0
    };

    let mut max_rel_err = 0.0f64;
    for _ in 0..n_weights {
        let tensor = rng.random_range(0..sizes.len());
        let elem = rng.random_range(0..sizes[tensor]);
        let conv_idx = tensor / 2;
        let is_weight = tensor % 2 == 0;

        let analytic = if is_weight {
            grads.convs[conv_idx].weights[elem]
        } else {
            grads.convs[conv_idx].bias[elem]
        };

        let original = {
            let convs = net.convs();
            if is_weight {
                convs[conv_idx].weights[elem]
            } else {
                convs[conv_idx].bias[elem]
            }
        };
        let eps = 1e-5 * original.abs().max(1.0);

        let set = |net: &mut Net<f64>, value: f64| {
            let mut convs = net.convs_mut();
            if is_weight {
                convs[conv_idx].weights[elem] = value;
            } else {
                convs[conv_idx].bias[elem] = value;
            }
        };

        set(&mut net, original + eps);
        let hi = loss_of(&net);
        set(&mut net, original - eps);
        let lo = loss_of(&net);
        set(&mut net, original);

        let fd = (hi - lo) / (2.0 * eps);
        let rel = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8);
        max_rel_err = max_rel_err.max(rel);
    }

    Ok(GradCheckReport {
        max_rel_err,
        checked: n_weights,
    })
}
