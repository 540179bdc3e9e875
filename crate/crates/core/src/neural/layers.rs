//! Affine layers and multilayer perceptrons built on [`Graph`].

use ndarray::Array2;
use rand::Rng as _;

use super::tensor::{c, Graph, ParamSet, Scalar, Var};
use crate::error::Result;
use crate::rng::Rng;

/// `x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    /// Uniform initialization on `±1/√in` for weights and bias.
    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim.max(1) as f64).sqrt();
        let mut draw = |rows, cols| Array2::from_shape_fn((rows, cols), |_| c::<T>(rng.random_range(-bound..bound)));
        let w = params.add(format!("{name}.w"), draw(in_dim, out_dim));
        let b = params.add(format!("{name}.b"), draw(1, out_dim));
        Self { w, b, in_dim, out_dim }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let w = g.param(params, self.w);
        let b = g.param(params, self.b);
        let h = g.matmul(x, w)?;
        g.add_bias(h, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormLayer {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNormLayer {
    pub const EPS: f64 = 1e-5;

    pub fn new<T: Scalar>(params: &mut ParamSet<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: params.add(format!("{name}.gamma"), Array2::from_elem((1, dim), T::one())),
            beta: params.add(format!("{name}.beta"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let gamma = g.param(params, self.gamma);
        let beta = g.param(params, self.beta);
        g.layer_norm(x, gamma, beta, Self::EPS)
    }
}

/// Hidden stack of `Linear → [LayerNorm] → ReLU` layers.
///
/// A hidden layer whose width matches an earlier hidden layer adds that
/// layer's activation (the most recent such layer) to its own output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub norms: Vec<Option<LayerNormLayer>>,
    pub skips: Vec<Option<usize>>,
    pub in_dim: usize,
}

impl Mlp {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        in_dim: usize,
        hidden: &[usize],
        layer_norm: bool,
        rng: &mut Rng,
    ) -> Self {
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut skips = Vec::new();
        let mut prev = in_dim;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(Linear::new(params, &format!("{name}.{i}"), prev, h, rng));
            norms.push(layer_norm.then(|| LayerNormLayer::new(params, &format!("{name}.{i}.ln"), h)));
            skips.push((0..i).rev().find(|&j| hidden[j] == h));
            prev = h;
        }
        Self {
            layers,
            norms,
            skips,
            in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(self.in_dim, |l| l.out_dim)
    }

    /// Output of the last hidden layer (the input itself for an empty stack).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, x: Var) -> Result<Var> {
        let mut acts: Vec<Var> = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(g, params, h)?;
            if let Some(norm) = &self.norms[i] {
                y = norm.forward(g, params, y)?;
            }
            y = g.relu(y);
            if let Some(j) = self.skips[i] {
                y = g.add(y, acts[j])?;
            }
            acts.push(y);
            h = y;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{check, random_array};
    use crate::rng::{stream, Role};

    #[test]
    fn residual_sources_follow_matching_widths() {
        let mut p = ParamSet::<f32>::new();
        let mut rng = stream(1, Role::Init, 0);
        let mlp = Mlp::new(&mut p, "e", 7, &[256, 128, 256, 64], false, &mut rng);
        assert_eq!(mlp.skips, vec![None, None, Some(0), None]);
        let paper = Mlp::new(&mut ParamSet::<f32>::new(), "e", 7, &[16, 8, 16, 12, 8, 4], false, &mut rng);
        assert_eq!(paper.skips, vec![None, None, Some(0), None, Some(1), None]);
    }

    #[test]
    fn mlp_gradient() {
        let mut p = ParamSet::<f64>::new();
        let mut rng = stream(2, Role::Init, 0);
        let mlp = Mlp::new(&mut p, "m", 3, &[5, 4, 5], true, &mut rng);
        let head = Linear::new(&mut p, "h", 5, 2, &mut rng);
        let x = random_array(6, 3, -1.0, 1.0, 3);
        let err = check(&p, 10, 4, |g, ps| {
            let xv = g.constant(x.clone());
            let h = mlp.forward(g, ps, xv).unwrap();
            let o = head.forward(g, ps, h).unwrap();
            let s = g.square(o);
            g.sum_all(s)
        });
        assert!(err < 1e-3, "relative error {err}");
    }
}
