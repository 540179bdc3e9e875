//! Conditional neural Bernoulli-mixture model `q_θ(m_s | z)`.
//!
//! A gating MLP (layer norm + ReLU) gives mixture weights
//! `π = softmax(g(z)/τ)`. Expert `e` emits logits
//! `ℓ_e = f_e(z) + Σ_r w_{e,r}(z)·(u_r ⊙ v_r) + r_e(z)`: a trunk MLP with an
//! affine output, an affine head on the trunk producing the per-sample factor
//! weights, low-rank factors shared by all experts, and a linear residual
//! path from the input.

use ndarray::Array2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::layers::{Linear, Mlp};
use super::tensor::{c, Graph, ParamSet, Scalar, Var};
use crate::error::{Error, Result};
use crate::rng::{stream, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnbmmConfig {
    pub n_in: usize,
    pub k_out: usize,
    pub num_experts: usize,
    pub gating_hidden: Vec<usize>,
    pub expert_hidden: Vec<usize>,
    pub rank: usize,
    pub temperature: f64,
    pub lambda_div: f64,
    pub lambda_int: f64,
}

impl CnbmmConfig {
    /// Widths sized for a single CPU core.
    pub fn desk(n_in: usize, k_out: usize) -> Self {
        Self {
            n_in,
            k_out,
            num_experts: 2,
            gating_hidden: vec![64, 32, 12],
            expert_hidden: vec![256, 128, 256, 64],
            rank: 2 * n_in,
            temperature: 10.0,
            lambda_div: 0.01,
            lambda_int: 1e-6,
        }
    }

    /// Full-size widths.
    pub fn paper(n_in: usize, k_out: usize) -> Self {
        Self {
            gating_hidden: vec![512, 256, 12],
            expert_hidden: vec![2048, 512, 2048, 1024, 512, 128],
            ..Self::desk(n_in, k_out)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.k_out == 0 {
            return Err(Error::Config("model input and output sizes must be positive".into()));
        }
        if self.num_experts == 0 {
            return Err(Error::Config("at least one expert is required".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("gating temperature must be positive".into()));
        }
        if !(self.lambda_div >= 0.0 && self.lambda_int >= 0.0) {
            return Err(Error::Config("regularization weights must be nonnegative".into()));
        }
        if self.gating_hidden.contains(&0) || self.expert_hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Expert {
    trunk: Mlp,
    head: Linear,
    weight_head: Option<Linear>,
    residual: Linear,
}

#[derive(Clone, Debug, PartialEq)]
struct Layout {
    gating: Mlp,
    gating_out: Linear,
    experts: Vec<Expert>,
    factors: Option<(usize, usize)>,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct CnbmmOutput {
    /// `[b, M]` log mixture weights.
    pub log_pi: Var,
    /// Per expert, `[b, k]` logits.
    pub logits: Vec<Var>,
}

/// Scalar parts of the composite loss.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub nll: Var,
}

#[derive(Clone, Debug)]
pub struct Cnbmm {
    cfg: CnbmmConfig,
    layout: Layout,
    pub params: ParamSet<f32>,
}

fn build_layout<T: Scalar>(cfg: &CnbmmConfig, params: &mut ParamSet<T>, seed: u64) -> Layout {
    let mut rng = stream(seed, Role::Init, 0);
    let gating = Mlp::new(params, "gate", cfg.n_in, &cfg.gating_hidden, true, &mut rng);
    let gating_out = Linear::new(params, "gate.out", gating.out_dim(), cfg.num_experts, &mut rng);
    let experts = (0..cfg.num_experts)
        .map(|e| {
            let trunk = Mlp::new(params, &format!("expert{e}"), cfg.n_in, &cfg.expert_hidden, false, &mut rng);
            let head = Linear::new(params, &format!("expert{e}.out"), trunk.out_dim(), cfg.k_out, &mut rng);
            let weight_head = (cfg.rank > 0)
                .then(|| Linear::new(params, &format!("expert{e}.w"), trunk.out_dim(), cfg.rank, &mut rng));
            let residual = Linear::new(params, &format!("expert{e}.res"), cfg.n_in, cfg.k_out, &mut rng);
            Expert {
                trunk,
                head,
                weight_head,
                residual,
            }
        })
        .collect();
    let factors = (cfg.rank > 0).then(|| {
        let mut draw = || Array2::from_shape_fn((cfg.rank, cfg.k_out), |_| c::<T>(rng.random_range(-1.0..1.0)));
        let u = params.add("factors.u", draw());
        let v = params.add("factors.v", draw());
        (u, v)
    });
    Layout {
        gating,
        gating_out,
        experts,
        factors,
    }
}

impl Cnbmm {
    pub fn new(cfg: CnbmmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamSet::new();
        let layout = build_layout(&cfg, &mut params, seed);
        Ok(Self { cfg, layout, params })
    }

    /// Rebuilds the layout for `cfg` and adopts `params`, which must match it.
    pub fn from_params(cfg: CnbmmConfig, params: ParamSet<f32>) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        if model.params.names() != params.names()
            || model
                .params
                .values()
                .iter()
                .zip(params.values())
                .any(|(a, b)| a.dim() != b.dim())
        {
            return Err(Error::Format("parameter blocks do not match the model configuration".into()));
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &CnbmmConfig {
        &self.cfg
    }

    pub fn parameter_count(&self) -> usize {
        self.params.scalar_count()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, z: Var) -> Result<CnbmmOutput> {
        let l = &self.layout;
        let h = l.gating.forward(g, params, z)?;
        let gate = l.gating_out.forward(g, params, h)?;
        let log_pi = g.log_softmax(gate, self.cfg.temperature);
        let shared = match l.factors {
            Some((u, v)) => {
                let (u, v) = (g.param(params, u), g.param(params, v));
                Some(g.mul(u, v)?)
            }
            None => None,
        };
        let mut logits = Vec::with_capacity(l.experts.len());
        for e in &l.experts {
            let t = e.trunk.forward(g, params, z)?;
            let mut logit = e.head.forward(g, params, t)?;
            if let (Some(wh), Some(uv)) = (&e.weight_head, shared) {
                let w = wh.forward(g, params, t)?;
                let low_rank = g.matmul(w, uv)?;
                logit = g.add(logit, low_rank)?;
            }
            let res = e.residual.forward(g, params, z)?;
            logits.push(g.add(logit, res)?);
        }
        Ok(CnbmmOutput { log_pi, logits })
    }

    /// `ln q(m_s | z)` per row, `[b, 1]`. `signs` holds `2·m_s − 1`, so each
    /// Bernoulli term is `ln σ(±ℓ)`.
    pub fn log_prob<T: Scalar>(&self, g: &mut Graph<T>, out: &CnbmmOutput, signs: Var) -> Result<Var> {
        let mut per_expert = Vec::with_capacity(out.logits.len());
        for &logit in &out.logits {
            let signed = g.mul(logit, signs)?;
            let ls = g.log_sigmoid(signed);
            per_expert.push(g.sum_rows(ls));
        }
        let stacked = g.concat_cols(&per_expert)?;
        let joint = g.add(stacked, out.log_pi)?;
        Ok(g.log_sum_exp_rows(joint))
    }

    /// Composite loss: mean NLL (nats) + λ_div·Σ_{s<t} mean cos(p_s, p_t) +
    /// λ_int·Σ_r (‖u_r‖ + ‖v_r‖).
    pub fn loss<T: Scalar>(&self, g: &mut Graph<T>, params: &ParamSet<T>, z: &Array2<T>, ms: &Array2<T>) -> Result<LossParts> {
        let zv = g.constant(z.clone());
        let signs = g.constant(ms.mapv(|m| m + m - T::one()));
        let out = self.forward(g, params, zv)?;
        let lp = self.log_prob(g, &out, signs)?;
        let mean_lp = g.mean_all(lp);
        let nll = g.scale(mean_lp, -1.0);
        let mut total = nll;
        if self.cfg.lambda_div > 0.0 && out.logits.len() > 1 {
            let probs: Vec<Var> = out.logits.iter().map(|&l| g.sigmoid(l)).collect();
            let norms: Vec<Var> = probs
                .iter()
                .map(|&p| {
                    let sq = g.square(p);
                    g.sum_rows(sq)
                })
                .collect();
            for s in 0..probs.len() {
                for t in s + 1..probs.len() {
                    let prod = g.mul(probs[s], probs[t])?;
                    let dot = g.sum_rows(prod);
                    let nn = g.mul(norms[s], norms[t])?;
                    let denom = g.sqrt(nn);
                    let cos = g.div(dot, denom)?;
                    let mean_cos = g.mean_all(cos);
                    let term = g.scale(mean_cos, self.cfg.lambda_div);
                    total = g.add(total, term)?;
                }
            }
        }
        if let (true, Some((u, v))) = (self.cfg.lambda_int > 0.0, self.layout.factors) {
            for idx in [u, v] {
                let f = g.param(params, idx);
                let sq = g.square(f);
                let rows = g.sum_rows(sq);
                let norms = g.sqrt(rows);
                let s = g.sum_all(norms);
                let term = g.scale(s, self.cfg.lambda_int);
                total = g.add(total, term)?;
            }
        }
        Ok(LossParts { total, nll })
    }

    /// `log2 q(m_s | z)` per row with the given parameters.
    pub fn log2_prob_with(&self, params: &ParamSet<f32>, z: &Array2<f32>, ms: &Array2<f32>) -> Result<Vec<f64>> {
        check_rows(z, ms, self.cfg.n_in, self.cfg.k_out)?;
        let mut out = Vec::with_capacity(z.nrows());
        for start in (0..z.nrows()).step_by(EVAL_CHUNK) {
            let end = (start + EVAL_CHUNK).min(z.nrows());
            let mut g = Graph::new();
            let zv = g.constant(z.slice(ndarray::s![start..end, ..]).to_owned());
            let signs = g.constant(ms.slice(ndarray::s![start..end, ..]).mapv(|m| 2.0 * m - 1.0));
            let fw = self.forward(&mut g, params, zv)?;
            let lp = self.log_prob(&mut g, &fw, signs)?;
            out.extend(g.value(lp).iter().map(|&v| v as f64 / std::f64::consts::LN_2));
        }
        Ok(out)
    }

    /// Mixture weights `[b, M]` and per-expert bit probabilities.
    pub fn mixture(&self, params: &ParamSet<f32>, z: &Array2<f32>) -> Result<(Array2<f32>, Vec<Array2<f32>>)> {
        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let fw = self.forward(&mut g, params, zv)?;
        let pi = g.value(fw.log_pi).mapv(f32::exp);
        let probs = fw.logits.iter().map(|&l| g.value(l).mapv(super::tensor::sigmoid)).collect();
        Ok((pi, probs))
    }
}

pub(crate) const EVAL_CHUNK: usize = 4096;

pub(crate) fn check_rows(z: &Array2<f32>, ms: &Array2<f32>, n: usize, k: usize) -> Result<()> {
    if z.ncols() != n || ms.ncols() != k || z.nrows() != ms.nrows() {
        return Err(Error::Dimension(format!(
            "expected z: [b, {n}] and m_s: [b, {k}], got {:?} and {:?}",
            z.dim(),
            ms.dim()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::gradcheck::{check, random_array};

    fn tiny(experts: usize, rank: usize) -> CnbmmConfig {
        CnbmmConfig {
            n_in: 4,
            k_out: 3,
            num_experts: experts,
            gating_hidden: vec![5, 3],
            expert_hidden: vec![6, 4, 6],
            rank,
            temperature: 2.0,
            lambda_div: 0.01,
            lambda_int: 1e-2,
        }
    }

    fn all_patterns(k: usize) -> Array2<f32> {
        Array2::from_shape_fn((1 << k, k), |(i, j)| ((i >> j) & 1) as f32)
    }

    #[test]
    fn single_expert_has_unit_weight() {
        let m = Cnbmm::new(tiny(1, 2), 3).unwrap();
        let z = random_array(5, 4, -1.0, 1.0, 1).mapv(|x| x as f32);
        let (pi, probs) = m.mixture(&m.params, &z).unwrap();
        assert!(pi.iter().all(|&p| (p - 1.0).abs() < 1e-7));
        assert!(probs[0].iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn weights_sum_to_one() {
        let m = Cnbmm::new(tiny(3, 2), 4).unwrap();
        let z = random_array(7, 4, -3.0, 3.0, 2).mapv(|x| x as f32);
        let (pi, _) = m.mixture(&m.params, &z).unwrap();
        for row in pi.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zeroed_logits_give_fair_coins() {
        let mut m = Cnbmm::new(tiny(2, 0), 5).unwrap();
        for i in 0..m.params.len() {
            let name = m.params.name(i).to_string();
            if name.starts_with("expert") {
                m.params.get_mut(i).fill(0.0);
            }
        }
        let z = random_array(4, 4, -1.0, 1.0, 3).mapv(|x| x as f32);
        let ms = Array2::from_shape_fn((4, 3), |(i, j)| ((i + j) % 2) as f32);
        let lp = m.log2_prob_with(&m.params, &z, &ms).unwrap();
        assert!(lp.iter().all(|&v| (v + 3.0).abs() < 1e-6));
    }

    #[test]
    fn point_mass_experts_mix_to_one_half() {
        // Gating bias dominates nothing: equal logits give π = (1/2, 1/2).
        let mut m = Cnbmm::new(tiny(2, 0), 6).unwrap();
        for i in 0..m.params.len() {
            let name = m.params.name(i).to_string();
            if name.starts_with("gate.out") || name.starts_with("expert") {
                m.params.get_mut(i).fill(0.0);
            }
        }
        // expert0 strongly predicts 101, expert1 predicts 010
        let target = [[1.0f32, 0.0, 1.0], [0.0, 1.0, 0.0]];
        for (e, bits) in target.iter().enumerate() {
            let idx = m.params.index_of(&format!("expert{e}.res.b")).unwrap();
            for (j, &b) in bits.iter().enumerate() {
                m.params.get_mut(idx)[[0, j]] = if b == 1.0 { 40.0 } else { -40.0 };
            }
        }
        let z = Array2::zeros((1, 4));
        let ms = Array2::from_shape_vec((1, 3), vec![1.0, 0.0, 1.0]).unwrap();
        let lp = m.log2_prob_with(&m.params, &z, &ms).unwrap();
        assert!((lp[0] + 1.0).abs() < 1e-6, "{}", lp[0]);
    }

    #[test]
    fn log_prob_normalizes_over_all_secrets() {
        let m = Cnbmm::new(tiny(3, 4), 7).unwrap();
        let pats = all_patterns(3);
        for row in 0..5 {
            let z = random_array(1, 4, -2.0, 2.0, 10 + row).mapv(|x| x as f32);
            let zs = Array2::from_shape_fn((8, 4), |(_, j)| z[[0, j]]);
            let lp = m.log2_prob_with(&m.params, &zs, &pats).unwrap();
            let total: f64 = lp.iter().map(|&v| v.exp2()).sum();
            assert!((total - 1.0).abs() < 1e-5, "{total}");
        }
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let m = Cnbmm::new(tiny(2, 2), 8).unwrap();
        let params = m.params.cast::<f64>();
        let z = random_array(6, 4, -1.0, 1.0, 30);
        let ms = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) % 2) as f64);
        let err = check(&params, 10, 31, |g, ps| m.loss(g, ps, &z, &ms).unwrap().total);
        assert!(err < 1e-3, "relative error {err}");
    }

    #[test]
    fn loss_reduces_to_nll_without_regularizers() {
        let mut cfg = tiny(1, 2);
        cfg.lambda_div = 0.0;
        cfg.lambda_int = 0.0;
        let m = Cnbmm::new(cfg, 9).unwrap();
        let z = random_array(6, 4, -1.0, 1.0, 40).mapv(|x| x as f32);
        let ms = Array2::from_shape_fn((6, 3), |(i, j)| ((i + 2 * j) % 2) as f32);
        let mut g = Graph::new();
        let parts = m.loss(&mut g, &m.params, &z, &ms).unwrap();
        assert_eq!(g.scalar(parts.total), g.scalar(parts.nll));
        let lp = m.log2_prob_with(&m.params, &z, &ms).unwrap();
        let nll = -lp.iter().sum::<f64>() / 6.0 * std::f64::consts::LN_2;
        assert!((g.scalar(parts.nll) - nll).abs() < 1e-5);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = tiny(2, 2);
        cfg.temperature = 0.0;
        assert!(Cnbmm::new(cfg, 1).is_err());
        let mut cfg = tiny(2, 2);
        cfg.num_experts = 0;
        assert!(Cnbmm::new(cfg, 1).is_err());
    }
}
