//! Adam with L2 weight decay, global-norm clipping, and EMA shadow weights.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::tensor::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Array2<f32>>,
    v: Vec<Array2<f32>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet<f32>) -> Self {
        let zeros = || params.values().iter().map(|p| Array2::zeros(p.dim())).collect();
        Self {
            cfg,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update. Weight decay is added to the gradient (`g + λ·θ`).
    pub fn step(&mut self, params: &mut ParamSet<f32>, grads: &[Option<Array2<f32>>]) {
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let (b1, b2, wd) = (beta1 as f32, beta2 as f32, weight_decay as f32);
        let step = (lr / bc1) as f32;
        let inv_bc2 = (1.0 / bc2) as f32;
        let eps = eps as f32;
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let Some(g) = grads.get(i).and_then(Option::as_ref) else { continue };
            Zip::from(p)
                .and(g)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    let g = g + wd * *p;
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= step * *m / ((*v * inv_bc2).sqrt() + eps);
                });
        }
    }
}

/// Rescales `grads` in place so their joint L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Array2<f32>>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|&x| f64::from(x) * f64::from(x))
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

/// Exponential moving average of parameters with the usual warmup
/// `min(decay, (1 + t) / (10 + t))`.
#[derive(Clone, Debug)]
pub struct Ema {
    pub decay: f64,
    pub shadow: ParamSet<f32>,
    updates: u64,
}

impl Ema {
    pub fn new(decay: f64, params: &ParamSet<f32>) -> Self {
        Self {
            decay,
            shadow: params.clone(),
            updates: 0,
        }
    }

    pub fn effective_decay(&self) -> f64 {
        let t = self.updates as f64;
        self.decay.min((1.0 + t) / (10.0 + t))
    }

    pub fn update(&mut self, params: &ParamSet<f32>) {
        let d = self.effective_decay() as f32;
        self.updates += 1;
        for (s, p) in self.shadow.values_mut().iter_mut().zip(params.values()) {
            Zip::from(s).and(p).for_each(|s, &p| *s = d * *s + (1.0 - d) * p);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f32) -> ParamSet<f32> {
        let mut p = ParamSet::new();
        p.add("x", Array2::from_elem((1, 1), x));
        p
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut opt = Adam::new(AdamConfig::default(), &p);
        opt.step(&mut p, &[Some(Array2::from_elem((1, 1), 3.0))]);
        assert!((p.get(0)[[0, 0]] - (1.0 - 1e-3)).abs() < 1e-6);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = single(5.0);
        let mut opt = Adam::new(
            AdamConfig {
                lr: 0.05,
                ..AdamConfig::default()
            },
            &p,
        );
        for _ in 0..2000 {
            let x = p.get(0)[[0, 0]];
            opt.step(&mut p, &[Some(Array2::from_elem((1, 1), 2.0 * (x - 2.0)))]);
        }
        assert!((p.get(0)[[0, 0]] - 2.0).abs() < 1e-2);
    }

    #[test]
    fn clipping_caps_the_joint_norm() {
        let mut g = vec![Some(Array2::from_elem((1, 2), 3.0f32)), None, Some(Array2::from_elem((1, 1), 4.0f32))];
        let before = clip_global_norm(&mut g, 5.0);
        assert!((before - 34f64.sqrt()).abs() < 1e-6);
        let after: f64 = g.iter().flatten().flat_map(|a| a.iter()).map(|&x| f64::from(x).powi(2)).sum();
        assert!((after.sqrt() - 5.0).abs() < 1e-5);
        let mut small = vec![Some(Array2::from_elem((1, 1), 1.0f32))];
        assert_eq!(clip_global_norm(&mut small, 5.0), 1.0);
        assert_eq!(small[0].as_ref().unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn ema_tracks_with_warmup() {
        let mut ema = Ema::new(0.999, &single(0.0));
        assert!((ema.effective_decay() - 0.1).abs() < 1e-12);
        ema.update(&single(1.0));
        assert!((ema.shadow.get(0)[[0, 0]] - 0.9).abs() < 1e-6);
        for _ in 0..100_000 {
            ema.update(&single(1.0));
        }
        assert_eq!(ema.effective_decay(), 0.999);
        assert!((ema.shadow.get(0)[[0, 0]] - 1.0).abs() < 1e-4);
    }
}
