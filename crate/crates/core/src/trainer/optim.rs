use super::config::OptimizerConfig;
use crate::nn::Params;
use crate::scalar::Float;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub config: OptimizerConfig,
    pub velocity: Vec<T>,
}

impl<T: Float> Sgd<T> {
    pub fn new(config: OptimizerConfig, num_params: usize) -> Self {
        Sgd {
            config,
            velocity: vec![T::zero(); num_params],
        }
    }

    /// Applies one update; returns the gradient norm before clipping.
    pub fn step<P: Params<T>>(&mut self, params: &mut P, grads: &P, lr: f64) -> f64 {
        let g = grads.flatten();
        assert_eq!(g.len(), self.velocity.len(), "optimizer state size");
        let norm = g.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
        let clip = if self.config.max_grad_norm > 0.0 && norm > self.config.max_grad_norm {
            T::lit(self.config.max_grad_norm / norm)
        } else {
            T::one()
        };
        let mu = T::lit(self.config.momentum);
        let wd = T::lit(self.config.weight_decay);
        let lr = T::lit(lr);
        let mut at = 0;
        let velocity = &mut self.velocity;
        params.visit_mut("", &mut |_, w, _| {
            for (i, wi) in w.iter_mut().enumerate() {
                let v = &mut velocity[at + i];
                *v = mu * *v + g[at + i] * clip + wd * *wi;
                *wi -= lr * *v;
            }
            at += w.len();
        });
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;
    use ndarray::array;

    #[test]
    fn plain_sgd_step() {
        let mut p = Linear::<f64>::zeros(2, 1);
        p.weight = array![[1.0, -2.0]];
        let mut g = p.zeros_like();
        g.weight = array![[0.5, 0.5]];
        g.bias[0] = 1.0;
        let cfg = OptimizerConfig {
            momentum: 0.0,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut opt = Sgd::new(cfg, 3);
        opt.step(&mut p, &g, 0.1);
        assert_eq!(p.weight, array![[0.95, -2.05]]);
        assert_eq!(p.bias[0], -0.1);
    }

    #[test]
    fn momentum_accumulates() {
        let mut p = Linear::<f64>::zeros(1, 1);
        let mut g = p.zeros_like();
        g.weight[[0, 0]] = 1.0;
        let cfg = OptimizerConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            ..OptimizerConfig::default()
        };
        let mut opt = Sgd::new(cfg, 2);
        opt.step(&mut p, &g, 1.0);
        opt.step(&mut p, &g, 1.0);
        assert!((p.weight[[0, 0]] + 2.9).abs() < 1e-12);
    }
}
