//! Multinomial logistic regression trained by full-batch gradient descent.

use crate::error::{Error, Result};

use super::network::{Dense, Layer, Network};
use super::{Architecture, Dataset, Model, Standardizer, TrainingSummary};

#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxHyper {
    pub learning_rate: f64,
    /// L2 penalty on weights (not biases), applied as implicit weight decay
    /// so any value is stable.
    pub l2: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SoftmaxHyper {
    fn default() -> Self {
        SoftmaxHyper {
            learning_rate: 0.5,
            l2: 1e-4,
            epochs: 500,
            seed: 0,
        }
    }
}

/// Trained parameters: `weight` is `[class][feature]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftmaxParams {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn class_probabilities(params: &SoftmaxParams, x: &[f64], out: &mut [f64]) {
    let d = x.len();
    let mut max = f64::NEG_INFINITY;
    for (c, o) in out.iter_mut().enumerate() {
        let w = &params.weight[c * d..(c + 1) * d];
        *o = params.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Mean cross-entropy of `params` on the data.
pub fn softmax_loss(params: &SoftmaxParams, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let classes = params.bias.len();
    let mut p = vec![0.0; classes];
    let mut total = 0.0;
    for (x, &y) in xs.iter().zip(ys) {
        class_probabilities(params, x, &mut p);
        total -= p[y].max(f64::MIN_POSITIVE).ln();
    }
    total / xs.len() as f64
}

/// Gradient descent from zero weights. Deterministic: the data order does
/// not matter and the seed is unused by the full-batch update.
pub fn fit_softmax(xs: &[Vec<f64>], ys: &[usize], classes: usize, hyper: &SoftmaxHyper) -> Result<SoftmaxParams> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::Contract("softmax training needs matching non-empty data".into()));
    }
    if let Some(&y) = ys.iter().find(|&&y| y >= classes) {
        return Err(Error::Contract(format!("label {y} outside 0..{classes}")));
    }
    if !(hyper.learning_rate > 0.0 && hyper.l2 >= 0.0) {
        return Err(Error::Config("softmax needs learning_rate > 0 and l2 >= 0".into()));
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return Err(Error::Shape("feature vectors of differing lengths".into()));
    }
    let n = xs.len() as f64;
    let mut params = SoftmaxParams {
        weight: vec![0.0; classes * d],
        bias: vec![0.0; classes],
    };
    let mut p = vec![0.0; classes];
    let mut gw = vec![0.0; classes * d];
    let mut gb = vec![0.0; classes];
    let decay = 1.0 / (1.0 + hyper.learning_rate * hyper.l2);
    for epoch in 0..hyper.epochs {
        gw.fill(0.0);
        gb.fill(0.0);
        for (x, &y) in xs.iter().zip(ys) {
            class_probabilities(&params, x, &mut p);
            for c in 0..classes {
                let r = p[c] - f64::from(u8::from(c == y));
                gb[c] += r;
                for (g, v) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g += r * v;
                }
            }
        }
        for (w, g) in params.weight.iter_mut().zip(&gw) {
            *w = (*w - hyper.learning_rate * g / n) * decay;
        }
        for (b, g) in params.bias.iter_mut().zip(&gb) {
            *b -= hyper.learning_rate * g / n;
        }
        if params.weight.iter().chain(&params.bias).any(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
    }
    Ok(params)
}

/// Fits a standardizer and a softmax model on the data.
pub fn train_softmax(train: &Dataset, hyper: &SoftmaxHyper) -> Result<Model> {
    let classes = train.num_classes();
    let scaler = Standardizer::fit(&train.features)?;
    let xs = scaler.apply_all(&train.features)?;
    let params = fit_softmax(&xs, &train.labels, classes, hyper)?;
    let network = Network {
        input_len: scaler.len(),
        layers: vec![Layer::Dense(Dense {
            inputs: scaler.len(),
            outputs: classes,
            weight: params.weight,
            bias: params.bias,
        })],
    };
    let mut model = Model {
        architecture: Architecture::Softmax,
        network,
        scaler,
        summary: TrainingSummary::default(),
        history: Vec::new(),
    };
    let (loss, accuracy) = model.evaluate(train)?;
    model.summary.train_loss = loss;
    model.summary.train_accuracy = accuracy;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::network::{fit, Optimizer, TrainOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in 0..n {
            let y = i % 3;
            xs.push((0..4).map(|j| if j == y { 1.0 } else { 0.0 } + rng.gen_range(-0.8..0.8)).collect());
            ys.push(y);
        }
        (xs, ys)
    }

    #[test]
    fn separated_single_feature() {
        let features: Vec<Vec<f64>> = (0..20).map(|i| vec![if i % 2 == 0 { -1.0 - i as f64 } else { 1.0 + i as f64 }]).collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let data = Dataset::new(features, labels, vec!["a".into(), "b".into()]).unwrap();
        let model = train_softmax(&data, &SoftmaxHyper::default()).unwrap();
        assert_eq!(model.evaluate(&data).unwrap().1, 1.0);
        let test = Dataset::new(vec![vec![-50.0], vec![50.0]], vec![0, 1], data.class_names.clone()).unwrap();
        assert_eq!(model.evaluate(&test).unwrap().1, 1.0);
    }

    #[test]
    fn huge_penalty_gives_uniform_probabilities() {
        let (xs, ys) = toy(30, 1);
        let params = fit_softmax(&xs, &ys, 3, &SoftmaxHyper { l2: 1e15, ..SoftmaxHyper::default() }).unwrap();
        assert!(params.weight.iter().all(|w| w.abs() < 1e-12));
        let mut p = vec![0.0; 3];
        class_probabilities(&params, &xs[0], &mut p);
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-9);
        }
    }

    #[test]
    fn matches_single_dense_network() {
        let (xs, ys) = toy(45, 2);
        let hyper = SoftmaxHyper {
            learning_rate: 0.3,
            l2: 0.0,
            epochs: 200,
            seed: 0,
        };
        let params = fit_softmax(&xs, &ys, 3, &hyper).unwrap();
        let mut net = Network::linear(4, 3);
        fit(
            &mut net,
            &xs,
            &ys,
            None,
            &TrainOptions {
                optimizer: Optimizer::Sgd { learning_rate: 0.3 },
                batch_size: xs.len(),
                epochs: 200,
                seed: 0,
                patience: None,
                min_delta: 0.0,
                threads: 1,
            },
        )
        .unwrap();
        let Layer::Dense(d) = &net.layers[0] else { unreachable!() };
        let as_params = SoftmaxParams {
            weight: d.weight.clone(),
            bias: d.bias.clone(),
        };
        let a = softmax_loss(&params, &xs, &ys);
        let b = softmax_loss(&as_params, &xs, &ys);
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }

    #[test]
    fn rejects_bad_labels() {
        let (xs, _) = toy(3, 0);
        assert!(fit_softmax(&xs, &[0, 1, 5], 3, &SoftmaxHyper::default()).is_err());
    }
}
