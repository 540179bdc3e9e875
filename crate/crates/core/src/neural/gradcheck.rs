//! Central-difference gradient checks for the autodiff graph.

use ndarray::Array2;
use rand::Rng;
use serde::Serialize;

use super::cnbmm::{Cnbmm, CnbmmConfig};
use super::tensor::{Graph, ParamSet, Var};
use crate::error::Result;
use crate::rng::{stream, Role};

/// Step used for the central differences.
pub const STEP: f64 = 1e-3;

/// Largest relative error between analytic and central-difference gradients
/// of `build(params)` at `probes` random coordinates.
pub fn check<F>(params: &ParamSet<f64>, probes: usize, seed: u64, build: F) -> f64
where
    F: Fn(&mut Graph<f64>, &ParamSet<f64>) -> Var,
{
    let mut g = Graph::new();
    let root = build(&mut g, params);
    let grads = g.backward(root, params.len());
    let mut rng = stream(seed, Role::Misc, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let p = rng.random_range(0..params.len());
        let idx = rng.random_range(0..params.get(p).len());
        let analytic = grads[p].as_ref().map_or(0.0, |a| a.as_slice().unwrap()[idx]);
        let eval = |delta: f64| {
            let mut q = params.clone();
            q.get_mut(p).as_slice_mut().unwrap()[idx] += delta;
            let mut g = Graph::new();
            let r = build(&mut g, &q);
            g.scalar(r)
        };
        let numeric = (eval(STEP) - eval(-STEP)) / (2.0 * STEP);
        let scale = analytic.abs().max(numeric.abs()).max(1e-4);
        worst = worst.max((analytic - numeric).abs() / scale);
    }
    worst
}

pub fn random_array(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut rng = stream(seed, Role::Misc, 1);
    Array2::from_shape_fn((rows, cols), |_| {
        // keep values away from kinks at zero
        let mut x: f64 = rng.random_range(lo..hi);
        if x.abs() < 0.05 {
            x += 0.1_f64.copysign(x);
        }
        x
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub probes: usize,
}

/// Contracts an arbitrary node to a scalar with fixed random weights so
/// every output coordinate contributes a distinct gradient.
fn contract(g: &mut Graph<f64>, v: Var, seed: u64) -> Var {
    let (r, c) = g.shape(v);
    let w = g.constant(random_array(r, c, -1.0, 1.0, seed + 100));
    let m = g.mul(v, w).expect("same shape");
    g.sum_all(m)
}

type Unary = fn(&mut Graph<f64>, Var) -> Var;
type Binary = fn(&mut Graph<f64>, Var, Var) -> Var;

const UNARY: [(&str, f64, f64, Unary); 17] = [
    ("relu", -2.0, 2.0, |g, x| g.relu(x)),
    ("sigmoid", -4.0, 4.0, |g, x| g.sigmoid(x)),
    ("log_sigmoid", -6.0, 6.0, |g, x| g.log_sigmoid(x)),
    ("exp", -2.0, 2.0, |g, x| g.exp(x)),
    ("ln", 0.2, 3.0, |g, x| g.ln(x)),
    ("sqrt", 0.2, 3.0, |g, x| g.sqrt(x)),
    ("square", -2.0, 2.0, |g, x| g.square(x)),
    ("scale", -2.0, 2.0, |g, x| g.scale(x, -1.7)),
    ("add_scalar", -2.0, 2.0, |g, x| g.add_scalar(x, 0.3)),
    ("clamp", -2.0, 2.0, |g, x| g.clamp(x, -1.0, 1.0)),
    ("softmax", -2.0, 2.0, |g, x| g.softmax(x, 0.7)),
    ("log_softmax", -2.0, 2.0, |g, x| g.log_softmax(x, 3.0)),
    ("log_sum_exp_rows", -3.0, 3.0, |g, x| g.log_sum_exp_rows(x)),
    ("sum_rows", -2.0, 2.0, |g, x| g.sum_rows(x)),
    ("sum_all", -2.0, 2.0, |g, x| g.sum_all(x)),
    ("mean_all", -2.0, 2.0, |g, x| g.mean_all(x)),
    ("slice_cols", -2.0, 2.0, |g, x| g.slice_cols(x, 1, 3).unwrap()),
];

const BINARY: [(&str, (usize, usize), (usize, usize), f64, f64, Binary); 9] = [
    ("matmul", (4, 3), (3, 5), -1.0, 1.0, |g, a, b| g.matmul(a, b).unwrap()),
    ("add_bias", (4, 3), (1, 3), -1.0, 1.0, |g, a, b| g.add_bias(a, b).unwrap()),
    ("add", (4, 3), (4, 3), -1.0, 1.0, |g, a, b| g.add(a, b).unwrap()),
    ("sub", (4, 3), (4, 3), -1.0, 1.0, |g, a, b| g.sub(a, b).unwrap()),
    ("mul", (4, 3), (4, 3), -1.0, 1.0, |g, a, b| g.mul(a, b).unwrap()),
    ("div", (4, 3), (4, 3), 0.5, 2.0, |g, a, b| g.div(a, b).unwrap()),
    ("mul_col", (4, 3), (4, 1), -1.0, 1.0, |g, a, b| g.mul_col(a, b).unwrap()),
    ("mul_row", (4, 3), (1, 3), -1.0, 1.0, |g, a, b| g.mul_row(a, b).unwrap()),
    ("concat_cols", (4, 3), (4, 2), -1.0, 1.0, |g, a, b| g.concat_cols(&[a, b]).unwrap()),
];

/// Checks every differentiable graph operation with `probes` probes each.
pub fn op_suite(probes: usize) -> Vec<GradCheck> {
    let mut out = Vec::new();
    for (name, lo, hi, op) in UNARY {
        let mut p = ParamSet::new();
        p.add("x", random_array(4, 5, lo, hi, 7));
        let err = check(&p, probes, 3, |g, ps| {
            let x = g.param(ps, 0);
            let y = op(g, x);
            contract(g, y, 9)
        });
        out.push(GradCheck {
            name: name.into(),
            max_rel_error: err,
            probes,
        });
    }
    for (name, a, b, lo, hi, op) in BINARY {
        let mut p = ParamSet::new();
        p.add("a", random_array(a.0, a.1, lo, hi, 11));
        p.add("b", random_array(b.0, b.1, lo, hi, 12));
        let err = check(&p, probes, 5, |g, ps| {
            let x = g.param(ps, 0);
            let y = g.param(ps, 1);
            let z = op(g, x, y);
            contract(g, z, 13)
        });
        out.push(GradCheck {
            name: name.into(),
            max_rel_error: err,
            probes,
        });
    }
    let mut p = ParamSet::new();
    p.add("x", random_array(5, 6, -2.0, 2.0, 21));
    p.add("gamma", random_array(1, 6, 0.5, 1.5, 22));
    p.add("beta", random_array(1, 6, -0.5, 0.5, 23));
    let err = check(&p, probes, 7, |g, ps| {
        let (x, ga, be) = (g.param(ps, 0), g.param(ps, 1), g.param(ps, 2));
        let y = g.layer_norm(x, ga, be, 1e-5).unwrap();
        contract(g, y, 24)
    });
    out.push(GradCheck {
        name: "layer_norm".into(),
        max_rel_error: err,
        probes,
    });
    out
}

/// Checks the full CNBMM training loss (NLL plus both regularizers) on a
/// small mixture.
pub fn loss_check(probes: usize, seed: u64) -> Result<GradCheck> {
    let cfg = CnbmmConfig {
        n_in: 4,
        k_out: 3,
        num_experts: 2,
        gating_hidden: vec![5, 3],
        expert_hidden: vec![6, 4, 6],
        rank: 2,
        temperature: 2.0,
        lambda_div: 0.01,
        lambda_int: 1e-2,
    };
    let m = Cnbmm::new(cfg, seed)?;
    let params = m.params.cast::<f64>();
    let z = random_array(6, 4, -1.0, 1.0, seed + 22);
    let ms = Array2::from_shape_fn((6, 3), |(i, j)| ((i * 3 + j) % 2) as f64);
    let err = check(&params, probes, seed + 23, |g, ps| m.loss(g, ps, &z, &ms).unwrap().total);
    Ok(GradCheck {
        name: "cnbmm_loss".into(),
        max_rel_error: err,
        probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_matches_finite_differences() {
        let report = op_suite(10);
        assert_eq!(report.len(), UNARY.len() + BINARY.len() + 1);
        for r in &report {
            assert!(r.max_rel_error < 1e-3, "{}: relative error {}", r.name, r.max_rel_error);
        }
    }

    #[test]
    fn loss_matches_finite_differences() {
        let r = loss_check(10, 8).unwrap();
        assert!(r.max_rel_error < 1e-3, "relative error {}", r.max_rel_error);
    }
}
