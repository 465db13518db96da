use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::Transition;
use crate::error::{Error, Result};

pub const FILE_VERSION: &str = "qnet-v1";

/// Layer sizes of the deployed value network: (OD, setpoint) in, one value per pump level out.
pub const STANDARD_LAYERS: [usize; 4] = [2, 64, 64, 17];

/// Fully connected value network, rectified-linear hidden layers, linear output.
///
/// All parameters live in one flat buffer. Layer `l` stores its weight matrix
/// (`out x in`, row-major) followed by its bias vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl QNetwork {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(
            sizes.len() >= 2,
            "network needs an input and an output layer"
        );
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Weights and biases drawn uniformly from `±1/sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            let n = w[0] * w[1] + w[1];
            for p in &mut net.params[offset..offset + n] {
                *p = rng.random_range(-bound..bound);
            }
            offset += n;
        }
        net
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "invalid layer sizes {sizes:?}"
            )));
        }
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                got: params.len(),
            });
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_outputs(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, n_in, n_out)
        self.sizes.windows(2).scan(0, |off, w| {
            let start = *off;
            *off += w[0] * w[1] + w[1];
            Some((start, w[0], w[1]))
        })
    }

    fn affine(&self, off: usize, n_in: usize, n_out: usize, input: &[f64], out: &mut Vec<f64>) {
        let w = &self.params[off..off + n_in * n_out];
        let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
        out.clear();
        out.extend(
            w.chunks_exact(n_in)
                .zip(b)
                .map(|(row, bias)| bias + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()),
        );
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.sizes[0], "input width");
        let n_layers = self.sizes.len() - 1;
        let mut act = input.to_vec();
        let mut next = Vec::new();
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            self.affine(off, n_in, n_out, &act, &mut next);
            if l + 1 < n_layers {
                next.iter_mut().for_each(|z| *z = z.max(0.0));
            }
            std::mem::swap(&mut act, &mut next);
        }
        act
    }

    /// Pre-activations of every layer, for backpropagation.
    fn forward_trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let n_layers = self.sizes.len() - 1;
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = input.to_vec();
        for (l, (off, n_in, n_out)) in self.layers().enumerate() {
            let mut z = Vec::with_capacity(n_out);
            self.affine(off, n_in, n_out, &act, &mut z);
            act = if l + 1 < n_layers {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
        }
        pre
    }

    /// Accumulate `scale * d(output[action])/d(params)` into `grad`, given the
    /// pre-activations recorded by `forward_trace`.
    fn backprop(
        &self,
        input: &[f64],
        pre: &[Vec<f64>],
        action: usize,
        scale: f64,
        grad: &mut [f64],
    ) {
        let layers: Vec<_> = self.layers().collect();
        let n_layers = layers.len();

        let mut delta = vec![0.0; self.num_outputs()];
        delta[action] = scale;
        for l in (0..n_layers).rev() {
            let (off, n_in, n_out) = layers[l];
            let relu_in: Vec<f64>;
            let input_act: &[f64] = if l == 0 {
                input
            } else {
                relu_in = pre[l - 1].iter().map(|v| v.max(0.0)).collect();
                &relu_in
            };
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input_act) {
                    *g += d * a;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (o, row) in w.chunks_exact(n_in).enumerate() {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wv) in prev.iter_mut().zip(row) {
                        *p += d * wv;
                    }
                }
                for (p, z) in prev.iter_mut().zip(&pre[l - 1]) {
                    if *z <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }

    /// Bootstrap target `r + gamma * max_a' Q_target(s', a')`, or `r` for terminal transitions.
    pub fn td_target(target: &QNetwork, t: &Transition, gamma: f64) -> f64 {
        if t.terminal {
            t.reward
        } else {
            let next = target.forward(&t.next_state);
            t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        }
    }

    /// Mean squared temporal-difference loss and its exact gradient.
    ///
    /// The target network's values are treated as constants.
    pub fn loss_and_gradient(
        &self,
        target: &QNetwork,
        batch: &[Transition],
        gamma: f64,
    ) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        if batch.is_empty() {
            return (0.0, grad);
        }
        let n = batch.len() as f64;
        let mut loss = 0.0;
        for t in batch {
            let y = Self::td_target(target, t, gamma);
            let pre = self.forward_trace(&t.state);
            let err = pre[pre.len() - 1][t.action] - y;
            loss += err * err;
            self.backprop(&t.state, &pre, t.action, 2.0 * err / n, &mut grad);
        }
        (loss / n, grad)
    }

    /// Mean squared TD loss without gradients.
    pub fn loss(&self, target: &QNetwork, batch: &[Transition], gamma: f64) -> f64 {
        let n = batch.len() as f64;
        batch
            .iter()
            .map(|t| (self.forward(&t.state)[t.action] - Self::td_target(target, t, gamma)).powi(2))
            .sum::<f64>()
            / n
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(FILE_VERSION);
        s.push('\n');
        let sizes: Vec<String> = self.sizes.iter().map(|n| n.to_string()).collect();
        s.push_str(&sizes.join(" "));
        s.push('\n');
        let line = |s: &mut String, vals: &[f64]| {
            for (i, v) in vals.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                write!(s, "{v}").unwrap();
            }
            s.push('\n');
        };
        for (off, n_in, n_out) in self.layers() {
            for row in self.params[off..off + n_in * n_out].chunks_exact(n_in) {
                line(&mut s, row);
            }
            line(
                &mut s,
                &self.params[off + n_in * n_out..off + n_in * n_out + n_out],
            );
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or("").trim();
        if header != FILE_VERSION {
            return Err(Error::VersionMismatch(header.to_string()));
        }
        let sizes: Vec<usize> = lines
            .next()
            .ok_or_else(|| Error::DimensionMismatch("missing layer sizes".into()))?
            .split_whitespace()
            .map(|t| {
                t.parse()
                    .map_err(|_| Error::DimensionMismatch(format!("bad layer size `{t}`")))
            })
            .collect::<Result<_>>()?;
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::DimensionMismatch(format!(
                "invalid layer sizes {sizes:?}"
            )));
        }

        let mut params = Vec::with_capacity(param_count(&sizes));
        let mut read_row = |width: usize, what: &str| -> Result<()> {
            let line = lines
                .next()
                .ok_or_else(|| Error::DimensionMismatch(format!("file ends before {what}")))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>().map_err(|_| {
                        Error::DimensionMismatch(format!("bad number `{t}` in {what}"))
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != width {
                return Err(Error::DimensionMismatch(format!(
                    "{what} has {} values, expected {width}",
                    vals.len()
                )));
            }
            params.extend(vals);
            Ok(())
        };
        for (l, w) in sizes.windows(2).enumerate() {
            for r in 0..w[1] {
                read_row(w[0], &format!("layer {l} weight row {r}"))?;
            }
            read_row(w[1], &format!("layer {l} bias"))?;
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(Error::DimensionMismatch(
                "trailing data after last layer".into(),
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network weights".into()));
        }
        Self::from_params(&sizes, params)
    }
}

pub fn save_network(net: &QNetwork, path: &Path) -> Result<()> {
    fs::write(path, net.to_text()).map_err(|e| Error::io(path, e))
}

/// Load a network file and check it has the deployed architecture.
pub fn load_network(path: &Path) -> Result<QNetwork> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let net = QNetwork::from_text(&text)?;
    if net.sizes() != STANDARD_LAYERS {
        return Err(Error::DimensionMismatch(format!(
            "layer sizes {:?}, expected {:?}",
            net.sizes(),
            STANDARD_LAYERS
        )));
    }
    Ok(net)
}
