//! Adam with bias correction, updating parameter leaves functionally.

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 2e-4, beta1: 0.0, beta2: 0.99, eps: 1e-8 }
    }
}

/// Moment buffers for one parameter list. The list order must stay fixed
/// across steps.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Adam {
        Adam {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Replaces every parameter with its updated value as a fresh leaf.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len(), "parameter count changed");
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape());
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let updated: Vec<f64> = p
                .data()
                .iter()
                .zip(g.data())
                .enumerate()
                .map(|(j, (&w, &gj))| {
                    m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                    v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                    let mh = m[j] / bc1;
                    let vh = v[j] / bc2;
                    w - lr * mh / (vh.sqrt() + eps)
                })
                .collect();
            **p = Tensor::leaf(updated, p.shape().to_vec(), true);
        }
    }
}
