//! Adaptive-moment (Adam) optimizer over a network's conv parameters.

use crate::models::{Net, NetGrads};

struct TensorState {
    m_weights: Vec<f32>,
    v_weights: Vec<f32>,
    m_bias: Vec<f32>,
    v_bias: Vec<f32>,
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: usize,
    state: Vec<TensorState>,
}

impl Adam {
    pub fn new(net: &Net<f32>) -> Self {
        let state = net
            .convs()
            .iter()
            .map(|c| TensorState {
                m_weights: vec![0.0; c.weights.len()],
                v_weights: vec![0.0; c.weights.len()],
                m_bias: vec![0.0; c.bias.len()],
                v_bias: vec![0.0; c.bias.len()],
            })
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            state,
        }
    }

    pub fn step(&mut self, net: &mut Net<f32>, grads: &NetGrads<f32>, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let scale = (lr / bc1) as f32;
        let denom_scale = (1.0 / bc2.sqrt()) as f32;
        let eps = self.eps as f32;

        for ((conv, grad), state) in net
            .convs_mut()
            .into_iter()
            .zip(&grads.convs)
            .zip(&mut self.state)
        {
            for i in 0..conv.weights.len() {
                let g = grad.weights[i];
                state.m_weights[i] = b1 * state.m_weights[i] + (1.0 - b1) * g;
                state.v_weights[i] = b2 * state.v_weights[i] + (1.0 - b2) * g * g;
                conv.weights[i] -= scale * state.m_weights[i]
                    / (state.v_weights[i].sqrt() * denom_scale + eps);
            }
            for i in 0..conv.bias.len() {
                let g = grad.bias[i];
                state.m_bias[i] = b1 * state.m_bias[i] + (1.0 - b1) * g;
                state.v_bias[i] = b2 * state.v_bias[i] + (1.0 - b2) * g * g;
                conv.bias[i] -=
                    scale * state.m_bias[i] / (state.v_bias[i].sqrt() * denom_scale + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_net, density_loss, FeatureMap, ModelFamily, ModelSpec};

    #[test]
    fn adam_reduces_loss_on_a_fixed_target() {
        let spec = ModelSpec::new(ModelFamily::MultiColumn, 1);
        let mut net = build_net::<f32>(&spec, 5).unwrap();
        let mut adam = Adam::new(&net);

        let input = FeatureMap::from_data(
            3,
            16,
            16,
            (0..3 * 16 * 16).map(|i| (i % 17) as f32 / 17.0).collect(),
        );
        let target: Vec<f32> = (0..16).map(|i| 0.05 * (i % 3) as f32).collect();

        let mut first = None;
        let mut last = 0.0;
        for _ in 0..50 {
            let cache = net.forward(input.clone());
            let (loss, g) = density_loss(cache.output(), &target);
            let grads = net.backward(&cache, &g);
            adam.step(&mut net, &grads, 1e-2);
            first.get_or_insert(loss);
            last = loss;
        }
        assert!(last < first.unwrap(), "loss {last} did not drop from {first:?}");
        assert!(last.is_finite());
    }
}
