#![allow(dead_code)]

use gcse::tensor::{backward_params, grad_penalty_param_gradient, mlp_forward, MlpParams, OutputActivation};
use num_rational::Ratio;
use rand::Rng;

/// Random scalar-output Elu net with at most 3 layers of width at most 16,
/// random biases and an input whose pre-activations stay clear of the Elu kink.
pub fn random_case<R: Rng>(rng: &mut R) -> (MlpParams, Vec<f64>, Vec<bool>) {
    loop {
        let depth = rng.gen_range(1..=3);
        let mut widths = vec![rng.gen_range(1..=6)];
        for _ in 1..depth {
            widths.push(rng.gen_range(1..=16));
        }
        widths.push(1);
        let alpha = rng.gen_range(0.1..1.0);
        let mut net = MlpParams::glorot(&widths, alpha, OutputActivation::Linear, rng).unwrap();
        for layer in &mut net.layers {
            layer.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
            layer.weight.iter_mut().for_each(|w| *w *= 1.5);
        }
        let input: Vec<f64> = (0..widths[0]).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let mut mask: Vec<bool> = (0..widths[0]).map(|_| rng.gen_bool(0.8)).collect();
        mask[0] = true;
        let (_, tape) = mlp_forward(&net, &input).unwrap();
        let hidden = &tape.pre[..tape.pre.len() - 1];
        if hidden.iter().all(|z| z.iter().all(|v| v.abs() > 1e-3)) {
            return (net, input, mask);
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

fn output(net: &MlpParams, input: &[f64]) -> f64 {
    mlp_forward(net, input).unwrap().0[0]
}

fn penalty(net: &MlpParams, input: &[f64], mask: &[bool]) -> f64 {
    grad_penalty_param_gradient(net, input, mask).unwrap().value
}

/// Worst relative error of analytic parameter gradients of the output and of
/// the penalty against central differences.
pub fn finite_difference_errors(net: &MlpParams, input: &[f64], mask: &[bool]) -> (f64, f64) {
    let (_, tape) = mlp_forward(net, input).unwrap();
    let value_grad = backward_params(net, &tape, 1.0).unwrap().param_grads.to_flat();
    let pen_grad = grad_penalty_param_gradient(net, input, mask)
        .unwrap()
        .param_grads
        .to_flat();
    let flat = net.to_flat();
    let mut worst = (0.0f64, 0.0f64);
    let mut probe = net.clone();
    for k in 0..flat.len() {
        let h = 1e-5 * flat[k].abs().max(1.0);
        let mut at = |delta: f64| {
            let mut p = flat.clone();
            p[k] += delta;
            probe.set_flat(&p).unwrap();
            (output(&probe, input), penalty(&probe, input, mask))
        };
        let (vp, pp) = at(h);
        let (vm, pm) = at(-h);
        worst.0 = worst.0.max(relative_error(value_grad[k], (vp - vm) / (2.0 * h)));
        worst.1 = worst.1.max(relative_error(pen_grad[k], (pp - pm) / (2.0 * h)));
    }
    worst
}

pub type Q = Ratio<i64>;

/// Product-limit survival, in exact arithmetic, at time `t` for integer times,
/// dividing out one observation at a time with events before censorings.
pub fn brute_km(sample: &[(i64, u8)], t: i64) -> Q {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let m = sorted.len() as i64;
    let mut s = Q::from_integer(1);
    for (j, &(y, d)) in sorted.iter().enumerate() {
        if y <= t && d == 1 {
            s *= Q::new(m - j as i64 - 1, m - j as i64);
        }
    }
    s
}

/// Cumulative hazard `sum_{y_(j) <= t} delta_(j) / (m - j + 1)` in exact arithmetic.
pub fn brute_na(sample: &[(i64, u8)], t: i64) -> Q {
    let mut sorted = sample.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
    let m = sorted.len() as i64;
    let mut h = Q::from_integer(0);
    for (j, &(y, d)) in sorted.iter().enumerate() {
        if y <= t && d == 1 {
            h += Q::new(1, m - j as i64);
        }
    }
    h
}

pub fn to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// Every multiset of at most `max_len` observations over times {1,2,3} and
/// indicators {0,1}.
pub fn exhaustive_samples(max_len: usize) -> Vec<Vec<(i64, u8)>> {
    let atoms: Vec<(i64, u8)> = (1..=3).flat_map(|t| [(t, 0), (t, 1)]).collect();
    let mut out = Vec::new();
    fn extend(
        atoms: &[(i64, u8)],
        start: usize,
        left: usize,
        cur: &mut Vec<(i64, u8)>,
        out: &mut Vec<Vec<(i64, u8)>>,
    ) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for k in start..atoms.len() {
            cur.push(atoms[k]);
            extend(atoms, k, left - 1, cur, out);
            cur.pop();
        }
    }
    extend(&atoms, 0, max_len, &mut Vec::new(), &mut out);
    out
}
