//! Oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::f64::consts::PI;

use mfam_core::autodiff::{PoolMode, PoolSpan, Tape, Var};
use mfam_core::model::{
    aggregate_bag, attention_scores, classify, forward_graph, param_layout, Aggregator,
    ModelConfig, ModelParams,
};
use mfam_core::signal::Complex64;
use mfam_core::train::joint_loss;
use mfam_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;
pub const FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Projects `out` onto fixed random weights so every output element
/// contributes to a scalar loss.
pub fn project(tape: &mut Tape, out: Var, seed: u64) -> Var {
    let shape = tape.value(out).shape().to_vec();
    let r = random(&shape, &mut ChaCha8Rng::seed_from_u64(seed));
    let r = tape.leaf(r);
    let p = tape.mul(out, r).unwrap();
    tape.sum(p)
}

pub type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

pub struct OpCase {
    pub name: String,
    pub inputs: Vec<Tensor>,
    pub build: Build,
}

impl OpCase {
    fn new(
        name: impl Into<String>,
        inputs: Vec<Tensor>,
        build: impl Fn(&mut Tape, &[Var]) -> Var + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            inputs,
            build: Box::new(build),
        }
    }

    fn eval(&self, inputs: &[Tensor]) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars);
        let loss = project(&mut tape, out, 99);
        tape.value(loss).data()[0]
    }

    /// Largest relative error between the tape gradient and central
    /// differences over every element of every input.
    pub fn max_rel_err(&self) -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = (self.build)(&mut tape, &vars);
        let loss = project(&mut tape, out, 99);
        let grads = tape.backward(loss).unwrap();
        let mut worst = 0.0f64;
        for (i, v) in vars.iter().enumerate() {
            let analytic = grads.get(*v).data().to_vec();
            for j in 0..self.inputs[i].len() {
                let mut plus = self.inputs.clone();
                plus[i].data_mut()[j] += H;
                let mut minus = self.inputs.clone();
                minus[i].data_mut()[j] -= H;
                let numeric = (self.eval(&plus) - self.eval(&minus)) / (2.0 * H);
                worst = worst.max(rel_err(analytic[j], numeric));
            }
        }
        worst
    }
}

pub fn conv1d_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut out = Vec::new();
    for (cin, cout, k, t) in [(3, 4, 3, 20), (1, 2, 3, 7), (2, 3, 5, 12)] {
        for dil in [1, 2, 4] {
            let inputs = vec![
                random(&[cin, t], &mut rng),
                random(&[cout, cin, k], &mut rng),
                random(&[cout], &mut rng),
            ];
            out.push(OpCase::new(
                format!("conv1d {cin}x{t} k={k} d={dil}"),
                inputs,
                move |t, v| t.conv1d(v[0], v[1], v[2], dil).unwrap(),
            ));
        }
    }
    out
}

pub fn linear_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut out = Vec::new();
    for (m, n) in [(3, 5), (1, 4), (6, 2)] {
        let inputs = vec![random(&[n], &mut rng), random(&[m, n], &mut rng), random(&[m], &mut rng)];
        out.push(OpCase::new("affine", inputs.clone(), |t, v| {
            t.affine(v[0], v[1], v[2]).unwrap()
        }));
        out.push(OpCase::new("linear no bias", inputs, |t, v| {
            t.linear(v[0], v[1], None).unwrap()
        }));
        let inputs = vec![random(&[4, n], &mut rng), random(&[m, n], &mut rng), random(&[m], &mut rng)];
        out.push(OpCase::new("linear rows", inputs, |t, v| {
            t.linear(v[0], v[1], Some(v[2])).unwrap()
        }));
    }
    out
}

pub fn activation_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut out = Vec::new();
    for shape in [vec![4, 6], vec![9], vec![2, 3, 2]] {
        let x = vec![random(&shape, &mut rng)];
        out.push(OpCase::new("tanh", x.clone(), |t, v| t.tanh(v[0])));
        out.push(OpCase::new("sigmoid", x.clone(), |t, v| t.sigmoid(v[0])));
        out.push(OpCase::new("relu", x, |t, v| t.relu(v[0])));
    }
    for n in [1, 2, 7] {
        let x = vec![random(&[n], &mut rng)];
        out.push(OpCase::new("softmax", x, |t, v| t.softmax(v[0])));
    }
    out
}

pub fn pooling_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut out = Vec::new();
    for (c, t, window, stride) in [(3, 24, 8, 4), (1, 10, 10, 1), (4, 17, 5, 3)] {
        let x = vec![random(&[c, t], &mut rng)];
        for mode in [PoolMode::Mean, PoolMode::Max] {
            out.push(OpCase::new(format!("{mode:?} global"), x.clone(), move |t, v| {
                t.pool(v[0], mode, PoolSpan::Global).unwrap()
            }));
            out.push(OpCase::new(format!("{mode:?} windowed"), x.clone(), move |t, v| {
                t.pool(v[0], mode, PoolSpan::Windowed { window, stride }).unwrap()
            }));
        }
    }
    out
}

pub fn cross_entropy_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();
    for k in [2, 4, 6] {
        let x = vec![random(&[k], &mut rng)];
        for label in 0..k {
            out.push(OpCase::new(format!("cross_entropy k={k} y={label}"), x.clone(), move |t, v| {
                t.cross_entropy(v[0], label).unwrap()
            }));
        }
    }
    out
}

pub fn structural_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut out = Vec::new();
    for (r, c) in [(3, 4), (1, 5), (6, 2)] {
        let ab = vec![random(&[r, c], &mut rng), random(&[r, c], &mut rng)];
        out.push(OpCase::new("add", ab.clone(), |t, v| t.add(v[0], v[1]).unwrap()));
        out.push(OpCase::new("mul", ab.clone(), |t, v| t.mul(v[0], v[1]).unwrap()));
        out.push(OpCase::new("scale", ab.clone(), |t, v| t.scale(v[0], -1.7)));
        out.push(OpCase::new("sum", ab.clone(), |t, v| t.sum(v[1])));
        out.push(OpCase::new("concat_rows", ab.clone(), |t, v| {
            t.concat_rows(&[v[0], v[1], v[0]]).unwrap()
        }));
        out.push(OpCase::new("reshape", ab, move |t, v| t.reshape(v[0], vec![c, r]).unwrap()));

        let xw = vec![random(&[r, c], &mut rng), random(&[r], &mut rng)];
        out.push(OpCase::new("scale_rows", xw, |t, v| t.scale_rows(v[0], v[1]).unwrap()));
        let ab = vec![random(&[r], &mut rng), random(&[c], &mut rng)];
        out.push(OpCase::new("outer", ab, |t, v| t.outer(v[0], v[1]).unwrap()));
        let za = vec![random(&[r, c], &mut rng), random(&[r], &mut rng)];
        out.push(OpCase::new("weighted_row_sum", za.clone(), |t, v| {
            t.weighted_row_sum(v[0], v[1]).unwrap()
        }));
        out.push(OpCase::new("mean_rows", za, |t, v| t.mean_rows(v[0]).unwrap()));
    }
    out
}

pub fn gating_cases() -> Vec<OpCase> {
    // well separated weights so the kept set is stable under perturbation
    let a = Tensor::vector(vec![0.05, 0.30, 0.10, 0.02, 0.25, 0.08, 0.15, 0.05]);
    let single = Tensor::vector(vec![0.7]);
    let s = Tensor::vector(vec![0.3, -1.2, 2.0, 0.9, -0.4, 1.5, 0.1]);
    vec![
        OpCase::new("topk_gate", vec![a], |t, v| t.topk_gate(v[0], 0.3).unwrap()),
        OpCase::new("topk_gate single", vec![single], |t, v| t.topk_gate(v[0], 0.3).unwrap()),
        OpCase::new("softmax+topk_gate", vec![s], |t, v| {
            let a = t.softmax(v[0]);
            t.topk_gate(a, 0.5).unwrap()
        }),
    ]
}

pub fn all_op_cases() -> Vec<OpCase> {
    [
        conv1d_cases(),
        linear_cases(),
        activation_cases(),
        pooling_cases(),
        cross_entropy_cases(),
        structural_cases(),
        gating_cases(),
    ]
    .into_iter()
    .flatten()
    .collect()
}

/// C=2, D=8, K=2, 2 domains.
pub fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(2, 2, 2);
    cfg.hidden_dim = 8;
    cfg.attention_hidden = 8;
    cfg.discr_hidden = 8;
    cfg.instance_window = 16;
    cfg.instance_stride = 8;
    cfg
}

/// `[2, 64]`.
pub fn tiny_input() -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    random(&[2, 64], &mut rng)
}

/// Classification and adversarial losses of the tiny model.
fn losses(params: &ModelParams, cfg: &ModelConfig, x: &Tensor, lambda: f64) -> (f64, f64) {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let g = forward_graph(&mut tape, xv, &pv, cfg, Some(lambda)).unwrap();
    let l = joint_loss(&mut tape, g.logits, 1, g.domain_logits.unwrap(), 0, 1.0).unwrap();
    (tape.value(l.cls).data()[0], tape.value(l.adv).data()[0])
}

/// End to end: the tape gradient of `cls + adv` must equal the numerical
/// gradient of `cls - lambda * adv` for every parameter upstream of the
/// reversal layer, and of `cls + adv` for the discriminator.
pub fn end_to_end_error(aggregator: Aggregator, lambda: f64) -> f64 {
    let mut cfg = tiny_config();
    cfg.aggregator = aggregator;
    let params = ModelParams::init(&cfg, 5).unwrap();
    let x = tiny_input();

    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let g = forward_graph(&mut tape, xv, &pv, &cfg, Some(lambda)).unwrap();
    let l = joint_loss(&mut tape, g.logits, 1, g.domain_logits.unwrap(), 0, 1.0).unwrap();
    let grads = tape.backward(l.total).unwrap();

    let layout = param_layout(&cfg);
    let mut worst = 0.0f64;
    for (i, (name, _)) in layout.iter().enumerate() {
        let sign = if name.starts_with("discriminator.") { 1.0 } else { -lambda };
        let analytic = grads.get(pv.all()[i]).data().to_vec();
        for j in 0..analytic.len() {
            let mut plus = params.clone();
            plus.tensors_mut()[i].data_mut()[j] += H;
            let mut minus = params.clone();
            minus.tensors_mut()[i].data_mut()[j] -= H;
            let (cp, ap) = losses(&plus, &cfg, &x, lambda);
            let (cm, am) = losses(&minus, &cfg, &x, lambda);
            let numeric = (cp - cm) / (2.0 * H) + sign * (ap - am) / (2.0 * H);
            worst = worst.max(rel_err(analytic[j], numeric));
        }
    }
    worst
}

/// One-sided DFT by direct summation.
pub fn naive_dft(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    (0..=n / 2)
        .map(|k| {
            let mut acc = Complex64::new(0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                // reduce the phase index first to keep the angle small
                let ang = -2.0 * PI * ((k * t) % n) as f64 / n as f64;
                acc += Complex64::new(v * ang.cos(), v * ang.sin());
            }
            acc
        })
        .collect()
}

/// Energy of the masked one-sided spectrum, counting mirrored bins twice.
pub fn spectral_energy(bins: &[Complex64], mask: &[bool], len: usize) -> f64 {
    let mut e = 0.0;
    for (k, (b, &m)) in bins.iter().zip(mask).enumerate() {
        if m {
            let mirrored = k != 0 && !(len % 2 == 0 && k == len / 2);
            e += b.norm_sqr() * if mirrored { 2.0 } else { 1.0 };
        }
    }
    e / len as f64
}

/// Indices whose rank (larger value first, lower index on ties) is below
/// `k`, in ascending order.
pub fn brute_topk(a: &[f64], k: usize) -> Vec<usize> {
    (0..a.len())
        .filter(|&i| {
            let rank = (0..a.len())
                .filter(|&j| a[j] > a[i] || (a[j] == a[i] && j < i))
                .count();
            rank < k
        })
        .collect()
}

pub fn mil_config(d: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(2, 3, 2);
    cfg.hidden_dim = d;
    cfg.attention_hidden = 5;
    cfg
}

/// Attention pooling and classification of explicit instances.
pub fn pool_instances(z: &Tensor, params: &ModelParams) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let pv = params.register(&mut tape);
    let zv = tape.leaf(z.clone());
    let s = attention_scores(&mut tape, zv, &pv).unwrap();
    let a = tape.softmax(s);
    let g = tape.topk_gate(a, 0.3).unwrap();
    let bag = aggregate_bag(&mut tape, zv, g).unwrap();
    let logits = classify(&mut tape, bag, &pv).unwrap();
    (
        tape.value(g).data().to_vec(),
        tape.value(bag).data().to_vec(),
        tape.value(logits).data().to_vec(),
    )
}
