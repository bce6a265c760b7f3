//! Layer-stack network with manual backpropagation.
//!
//! Activations are flat, channel-major (`[channel][position]`). The final
//! layer produces logits; softmax and cross-entropy live outside the stack.

use rand::distributions::{Distribution, Uniform};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cache::mix_seed;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub length: usize,
    /// `[out][in][tap]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv1d {
    fn pad_left(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Output tap range `t` for which input index `t + j - pad` is in range.
    fn span(&self, j: usize) -> (usize, usize) {
        let pad = self.pad_left();
        let lo = pad.saturating_sub(j);
        let hi = (self.length + pad).saturating_sub(j).min(self.length);
        (lo, hi.max(lo))
    }

    fn forward(&self, x: &[f64], y: &mut [f64]) {
        let (n, k, pad) = (self.length, self.kernel, self.pad_left());
        for o in 0..self.out_channels {
            let out = &mut y[o * n..(o + 1) * n];
            out.fill(self.bias[o]);
            for i in 0..self.in_channels {
                let input = &x[i * n..(i + 1) * n];
                for j in 0..k {
                    let w = self.weight[(o * self.in_channels + i) * k + j];
                    let (lo, hi) = self.span(j);
                    let src = &input[lo + j - pad..hi + j - pad];
                    for (yv, xv) in out[lo..hi].iter_mut().zip(src) {
                        *yv += w * xv;
                    }
                }
            }
        }
    }

    fn backward(&self, x: &[f64], dy: &[f64], dx: &mut [f64], dw: &mut [f64], db: &mut [f64]) {
        let (n, k, pad) = (self.length, self.kernel, self.pad_left());
        for o in 0..self.out_channels {
            let grad = &dy[o * n..(o + 1) * n];
            db[o] += grad.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let input = &x[i * n..(i + 1) * n];
                let back = &mut dx[i * n..(i + 1) * n];
                for j in 0..k {
                    let idx = (o * self.in_channels + i) * k + j;
                    let w = self.weight[idx];
                    let (lo, hi) = self.span(j);
                    let range = lo + j - pad..hi + j - pad;
                    let mut acc = 0.0;
                    for ((g, xv), bx) in grad[lo..hi].iter().zip(&input[range.clone()]).zip(&mut back[range]) {
                        acc += g * xv;
                        *bx += w * g;
                    }
                    dw[idx] += acc;
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// `[out][in]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn forward(&self, x: &[f64], y: &mut [f64]) {
        for (o, yv) in y.iter_mut().enumerate() {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            *yv = self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }

    fn backward(&self, x: &[f64], dy: &[f64], dx: &mut [f64], dw: &mut [f64], db: &mut [f64]) {
        for (o, &g) in dy.iter().enumerate() {
            db[o] += g;
            if g == 0.0 {
                continue;
            }
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut dw[o * self.inputs..(o + 1) * self.inputs];
            for ((gw, w), (xv, bx)) in grow.iter_mut().zip(row).zip(x.iter().zip(dx.iter_mut())) {
                *gw += g * xv;
                *bx += g * w;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv(Conv1d),
    Relu,
    Tanh,
    /// Non-overlapping max over windows of `size`; a trailing partial window is dropped.
    MaxPool { channels: usize, length: usize, size: usize },
    /// Inverted dropout: identity at inference.
    Dropout { rate: f64 },
    Dense(Dense),
}

impl Layer {
    fn output_len(&self, input_len: usize) -> usize {
        match self {
            Layer::Conv(c) => c.out_channels * c.length,
            Layer::MaxPool { channels, length, size } => channels * (length / size),
            Layer::Dense(d) => d.outputs,
            _ => input_len,
        }
    }
}

/// Per-sample record of a training-mode forward pass.
pub struct Tape {
    /// `values[i]` is the input of layer `i`; the last entry is the logits.
    values: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    argmax: Vec<Option<Vec<usize>>>,
}

impl Tape {
    pub fn logits(&self) -> &[f64] {
        self.values.last().unwrap()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub input_len: usize,
    pub layers: Vec<Layer>,
}

fn glorot(rng: &mut impl Rng, n: usize, fan_in: usize, fan_out: usize) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    (0..n).map(|_| dist.sample(rng)).collect()
}

impl Network {
    /// A single dense layer: multinomial logistic regression.
    pub fn linear(input_len: usize, classes: usize) -> Self {
        Network {
            input_len,
            layers: vec![Layer::Dense(Dense {
                inputs: input_len,
                outputs: classes,
                weight: vec![0.0; input_len * classes],
                bias: vec![0.0; classes],
            })],
        }
    }

    /// conv(ReLU) x2 -> maxpool -> dropout -> dense(tanh) -> dense, Glorot-uniform weights, zero biases.
    #[allow(clippy::too_many_arguments)]
    pub fn cnn(
        input_len: usize,
        filters: [usize; 2],
        kernel: usize,
        pool: usize,
        dropout_rate: f64,
        dense_units: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        if input_len == 0 || kernel == 0 || pool == 0 || dense_units == 0 || classes == 0 || filters.contains(&0) {
            return Err(Error::Config("network sizes must all be at least 1".into()));
        }
        if input_len < pool {
            return Err(Error::Shape(format!("input length {input_len} is shorter than pool size {pool}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Config(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv = |rng: &mut ChaCha8Rng, cin: usize, cout: usize| Conv1d {
            in_channels: cin,
            out_channels: cout,
            kernel,
            length: input_len,
            weight: glorot(rng, cout * cin * kernel, cin * kernel, cout * kernel),
            bias: vec![0.0; cout],
        };
        let dense = |rng: &mut ChaCha8Rng, inputs: usize, outputs: usize| Dense {
            inputs,
            outputs,
            weight: glorot(rng, inputs * outputs, inputs, outputs),
            bias: vec![0.0; outputs],
        };
        let flat = filters[1] * (input_len / pool);
        let layers = vec![
            Layer::Conv(conv(&mut rng, 1, filters[0])),
            Layer::Relu,
            Layer::Conv(conv(&mut rng, filters[0], filters[1])),
            Layer::Relu,
            Layer::MaxPool {
                channels: filters[1],
                length: input_len,
                size: pool,
            },
            Layer::Dropout { rate: dropout_rate },
            Layer::Dense(dense(&mut rng, flat, dense_units)),
            Layer::Tanh,
            Layer::Dense(dense(&mut rng, dense_units, classes)),
        ];
        Ok(Network { input_len, layers })
    }

    pub fn num_classes(&self) -> usize {
        self.layers
            .iter()
            .fold(self.input_len, |len, layer| layer.output_len(len))
    }

    /// Parameter tensors in layer order, weight before bias.
    pub fn params(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&c.weight, &c.bias]),
                Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => out.extend([&mut c.weight, &mut c.bias]),
                Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
                _ => {}
            }
        }
        out
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_len {
            return Err(Error::Shape(format!(
                "feature vector has length {}, model expects {}",
                x.len(),
                self.input_len
            )));
        }
        Ok(())
    }

    /// Inference-mode logits.
    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, None)?.values.pop().unwrap())
    }

    /// Forward pass keeping every intermediate. Dropout masks are drawn from
    /// `dropout` when given; otherwise dropout is the identity.
    pub fn forward(&self, x: &[f64], mut dropout: Option<&mut ChaCha8Rng>) -> Result<Tape> {
        self.check_input(x)?;
        let mut values = vec![x.to_vec()];
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = values.last().unwrap();
            let mut mask = None;
            let mut arg = None;
            let output = match layer {
                Layer::Conv(c) => {
                    let mut y = vec![0.0; c.out_channels * c.length];
                    c.forward(input, &mut y);
                    y
                }
                Layer::Dense(d) => {
                    let mut y = vec![0.0; d.outputs];
                    d.forward(input, &mut y);
                    y
                }
                Layer::Relu => input.iter().map(|&v| v.max(0.0)).collect(),
                Layer::Tanh => input.iter().map(|&v| v.tanh()).collect(),
                Layer::MaxPool { channels, length, size } => {
                    let out_len = length / size;
                    let mut y = Vec::with_capacity(channels * out_len);
                    let mut idx = Vec::with_capacity(channels * out_len);
                    for c in 0..*channels {
                        for w in 0..out_len {
                            let start = c * length + w * size;
                            let mut best = start;
                            for i in start + 1..start + size {
                                if input[i] > input[best] {
                                    best = i;
                                }
                            }
                            y.push(input[best]);
                            idx.push(best);
                        }
                    }
                    arg = Some(idx);
                    y
                }
                Layer::Dropout { rate } => match dropout.as_deref_mut() {
                    Some(rng) if *rate > 0.0 => {
                        let keep = 1.0 / (1.0 - rate);
                        let m: Vec<f64> = (0..input.len())
                            .map(|_| if rng.gen::<f64>() >= *rate { keep } else { 0.0 })
                            .collect();
                        let y = input.iter().zip(&m).map(|(v, k)| v * k).collect();
                        mask = Some(m);
                        y
                    }
                    _ => input.clone(),
                },
            };
            masks.push(mask);
            argmax.push(arg);
            values.push(output);
        }
        Ok(Tape { values, masks, argmax })
    }

    /// Accumulates parameter gradients of a tape given d(loss)/d(logits).
    pub fn backward(&self, tape: &Tape, dlogits: &[f64], grads: &mut [Vec<f64>]) {
        let mut delta = dlogits.to_vec();
        let mut slot = grads.len();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.values[i];
            let output = &tape.values[i + 1];
            delta = match layer {
                Layer::Conv(c) => {
                    slot -= 2;
                    let (gw, gb) = grads[slot..].split_at_mut(1);
                    let mut dx = vec![0.0; input.len()];
                    c.backward(input, &delta, &mut dx, &mut gw[0], &mut gb[0]);
                    dx
                }
                Layer::Dense(d) => {
                    slot -= 2;
                    let (gw, gb) = grads[slot..].split_at_mut(1);
                    let mut dx = vec![0.0; input.len()];
                    d.backward(input, &delta, &mut dx, &mut gw[0], &mut gb[0]);
                    dx
                }
                Layer::Relu => delta.iter().zip(input).map(|(g, &v)| if v > 0.0 { *g } else { 0.0 }).collect(),
                Layer::Tanh => delta.iter().zip(output).map(|(g, y)| g * (1.0 - y * y)).collect(),
                Layer::MaxPool { .. } => {
                    let mut dx = vec![0.0; input.len()];
                    for (g, &src) in delta.iter().zip(tape.argmax[i].as_ref().unwrap()) {
                        dx[src] += g;
                    }
                    dx
                }
                Layer::Dropout { .. } => match &tape.masks[i] {
                    Some(m) => delta.iter().zip(m).map(|(g, k)| g * k).collect(),
                    None => delta,
                },
            };
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Cross-entropy of the softmax of `logits` against class `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    lse - logits[label]
}

/// Loss and d(loss)/d(logits) for one example.
fn loss_grad(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    (cross_entropy(logits, label), g)
}

#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Sgd { learning_rate: f64 },
    Adam { learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    pub fn adam(learning_rate: f64) -> Self {
        Optimizer::Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct OptimizerState {
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(network: &Network) -> Self {
        OptimizerState {
            step: 0,
            m: network.zero_grads(),
            v: network.zero_grads(),
        }
    }

    fn apply(&mut self, optimizer: &Optimizer, params: Vec<&mut Vec<f64>>, grads: &[Vec<f64>]) {
        self.step += 1;
        match *optimizer {
            Optimizer::Sgd { learning_rate } => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, gw) in p.iter_mut().zip(g) {
                        *w -= learning_rate * gw;
                    }
                }
            }
            Optimizer::Adam {
                learning_rate,
                beta1,
                beta2,
                epsilon,
            } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Stop after this many epochs without a validation-loss improvement
    /// larger than `min_delta`.
    pub patience: Option<usize>,
    pub min_delta: f64,
    /// Above 1, batches are split across threads and gradient summation
    /// order changes, so results are no longer bitwise identical to the
    /// single-threaded run.
    pub threads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean inference-mode loss and accuracy.
pub fn evaluate(network: &Network, xs: &[Vec<f64>], ys: &[usize]) -> Result<(f64, f64)> {
    let mut loss = 0.0;
    let mut correct = 0;
    for (x, &y) in xs.iter().zip(ys) {
        let logits = network.logits(x)?;
        loss += cross_entropy(&logits, y);
        correct += usize::from(argmax(&logits) == y);
    }
    let n = xs.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Loss sum, correct count and summed gradients over `batch`.
fn batch_gradients(
    network: &Network,
    xs: &[Vec<f64>],
    ys: &[usize],
    batch: &[(usize, u64)],
) -> Result<(f64, usize, Vec<Vec<f64>>)> {
    let mut grads = network.zero_grads();
    let mut loss = 0.0;
    let mut correct = 0;
    for &(i, mask_seed) in batch {
        let mut rng = ChaCha8Rng::seed_from_u64(mask_seed);
        let tape = network.forward(&xs[i], Some(&mut rng))?;
        let (l, g) = loss_grad(tape.logits(), ys[i]);
        loss += l;
        correct += usize::from(argmax(tape.logits()) == ys[i]);
        network.backward(&tape, &g, &mut grads);
    }
    Ok((loss, correct, grads))
}

fn parallel_gradients(
    network: &Network,
    xs: &[Vec<f64>],
    ys: &[usize],
    batch: &[(usize, u64)],
    threads: usize,
) -> Result<(f64, usize, Vec<Vec<f64>>)> {
    if threads <= 1 || batch.len() < 2 {
        return batch_gradients(network, xs, ys, batch);
    }
    let chunk = batch.len().div_ceil(threads);
    let parts: Vec<Result<(f64, usize, Vec<Vec<f64>>)>> = std::thread::scope(|scope| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| scope.spawn(move || batch_gradients(network, xs, ys, part)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("gradient worker panicked")).collect()
    });
    let mut total = (0.0, 0, network.zero_grads());
    for part in parts {
        let (l, c, g) = part?;
        total.0 += l;
        total.1 += c;
        for (t, p) in total.2.iter_mut().zip(g) {
            for (a, b) in t.iter_mut().zip(p) {
                *a += b;
            }
        }
    }
    Ok(total)
}

/// Mini-batch training on mean cross-entropy. With a validation set the
/// parameters with the lowest validation loss are kept.
pub fn fit(
    network: &mut Network,
    xs: &[Vec<f64>],
    ys: &[usize],
    validation: Option<(&[Vec<f64>], &[usize])>,
    opts: &TrainOptions,
) -> Result<Vec<EpochStats>> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Contract(format!(
            "training needs matching non-empty features and labels ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    let classes = network.num_classes();
    if let Some(&bad) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::Contract(format!("label {bad} outside 0..{classes}")));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(opts.seed, 0x74_7261_696e));
    let mut state = OptimizerState::new(network);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, Network)> = None;
    let mut plateau_base = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(opts.batch_size) {
            let tagged: Vec<(usize, u64)> = batch.iter().map(|&i| (i, rng.gen())).collect();
            let (loss, c, mut grads) = parallel_gradients(network, xs, ys, &tagged, opts.threads)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            state.apply(&opts.optimizer, network.params_mut(), &grads);
            loss_sum += loss;
            correct += c;
        }
        let (val_loss, val_accuracy) = match validation {
            Some((vx, vy)) if !vx.is_empty() => {
                let (l, a) = evaluate(network, vx, vy)?;
                if !l.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                (Some(l), Some(a))
            }
            _ => (None, None),
        };
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / xs.len() as f64,
            train_accuracy: correct as f64 / xs.len() as f64,
            val_loss,
            val_accuracy,
        };
        log::debug!("epoch {epoch}: {stats:?}");
        history.push(stats);

        if let Some(l) = val_loss {
            if best.as_ref().is_none_or(|(b, _)| l < *b) {
                best = Some((l, network.clone()));
            }
            if l < plateau_base - opts.min_delta {
                plateau_base = l;
                since_best = 0;
            } else {
                since_best += 1;
                if opts.patience.is_some_and(|p| since_best >= p) {
                    break;
                }
            }
        }
    }
    if let Some((_, net)) = best {
        *network = net;
    }
    Ok(history)
}

/// Analytic versus central-difference gradients of one example's loss,
/// dropout disabled. Returns max |g_a - g_n| / max(|g_a|, |g_n|, 1e-12).
pub fn grad_check(network: &Network, x: &[f64], label: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Contract("grad_check needs eps > 0".into()));
    }
    if label >= network.num_classes() {
        return Err(Error::Contract(format!("label {label} outside the model's classes")));
    }
    let tape = network.forward(x, None)?;
    let (_, g) = loss_grad(tape.logits(), label);
    let mut analytic = network.zero_grads();
    network.backward(&tape, &g, &mut analytic);

    let mut probe = network.clone();
    let mut worst: f64 = 0.0;
    for (t, tensor) in analytic.iter().enumerate() {
        for (i, &ga) in tensor.iter().enumerate() {
            let original = probe.params()[t][i];
            probe.params_mut()[t][i] = original + eps;
            let plus = cross_entropy(&probe.logits(x)?, label);
            probe.params_mut()[t][i] = original - eps;
            let minus = cross_entropy(&probe.logits(x)?, label);
            probe.params_mut()[t][i] = original;
            let gn = (plus - minus) / (2.0 * eps);
            let err = (ga - gn).abs() / ga.abs().max(gn.abs()).max(1e-12);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
