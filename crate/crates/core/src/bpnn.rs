//! Three-layer sigmoid network trained by per-sample backpropagation against
//! squared error, with train/validation/test splitting and early stopping.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Logistic function, evaluated on the branch that cannot overflow.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Derivative of the logistic function expressed through its output `s`.
#[inline]
pub fn sigmoid_derivative(s: f64) -> f64 {
    s * (1.0 - s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub n_in: usize,
    pub n_hidden: usize,
    pub n_out: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub val_fail_limit: usize,
    pub goal_mse: f64,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn new(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        NetworkConfig {
            n_in,
            n_hidden,
            n_out,
            learning_rate: 0.5,
            max_epochs: 1000,
            val_fail_limit: 6,
            goal_mse: 1e-3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_in == 0 || self.n_hidden == 0 || self.n_out == 0 {
            return Err(Error::Config(format!(
                "network dimensions must be positive, got {}-{}-{}",
                self.n_in, self.n_hidden, self.n_out
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(self.goal_mse >= 0.0) {
            return Err(Error::Config(format!(
                "goal_mse must be >= 0, got {}",
                self.goal_mse
            )));
        }
        Ok(())
    }
}

/// Weights are row-major: `w1[h * n_in + i]` connects input `i` to hidden unit `h`.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    n_in: usize,
    n_hidden: usize,
    n_out: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Network {
    pub fn zeros(n_in: usize, n_hidden: usize, n_out: usize) -> Self {
        Network {
            n_in,
            n_hidden,
            n_out,
            w1: vec![0.0; n_hidden * n_in],
            b1: vec![0.0; n_hidden],
            w2: vec![0.0; n_out * n_hidden],
            b2: vec![0.0; n_out],
        }
    }

    /// Weights and biases drawn uniformly from `[-0.5, 0.5]` with `cfg.seed`.
    pub fn init(cfg: &NetworkConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut net = Network::zeros(cfg.n_in, cfg.n_hidden, cfg.n_out);
        for p in net
            .w1
            .iter_mut()
            .chain(&mut net.b1)
            .chain(&mut net.w2)
            .chain(&mut net.b2)
        {
            *p = rng.gen_range(-0.5..=0.5);
        }
        Ok(net)
    }

    pub fn from_parts(
        (n_in, n_hidden, n_out): (usize, usize, usize),
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        if n_in == 0 || n_hidden == 0 || n_out == 0 {
            return Err(Error::Dimension(
                "network dimensions must be positive".into(),
            ));
        }
        if w1.len() != n_hidden * n_in
            || b1.len() != n_hidden
            || w2.len() != n_out * n_hidden
            || b2.len() != n_out
        {
            return Err(Error::Dimension(format!(
                "parameter shapes do not match a {n_in}-{n_hidden}-{n_out} network"
            )));
        }
        let net = Network {
            n_in,
            n_hidden,
            n_out,
            w1,
            b1,
            w2,
            b2,
        };
        if net.params().any(|p| !p.is_finite()) {
            return Err(Error::Dimension("network parameters must be finite".into()));
        }
        Ok(net)
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_in, self.n_hidden, self.n_out)
    }

    /// All parameters in canonical order: w1, b1, w2, b2.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(&self.b1)
            .chain(&self.w2)
            .chain(&self.b2)
            .copied()
    }

    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(self, input)?.output)
    }

    /// `p ← p − rate · dp` for every parameter.
    pub fn apply_update(&mut self, grads: &Gradients, rate: f64) {
        let pairs = [
            (&mut self.w1, &grads.dw1),
            (&mut self.b1, &grads.db1),
            (&mut self.w2, &grads.dw2),
            (&mut self.b2, &grads.db2),
        ];
        for (params, deltas) in pairs {
            for (p, d) in params.iter_mut().zip(deltas) {
                *p -= rate * d;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Activations {
    pub hidden: Vec<f64>,
    pub output: Vec<f64>,
}

fn layer(weights: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    weights
        .chunks_exact(input.len())
        .zip(bias)
        .map(|(row, b)| sigmoid(row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>() + b))
        .collect()
}

pub fn forward(net: &Network, input: &[f64]) -> Result<Activations> {
    if input.len() != net.n_in {
        return Err(Error::Dimension(format!(
            "input has {} values, network expects {}",
            input.len(),
            net.n_in
        )));
    }
    let hidden = layer(&net.w1, &net.b1, input);
    let output = layer(&net.w2, &net.b2, &hidden);
    Ok(Activations { hidden, output })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub dw1: Vec<f64>,
    pub db1: Vec<f64>,
    pub dw2: Vec<f64>,
    pub db2: Vec<f64>,
}

/// Gradient of `½ Σ (output − target)²` with respect to every parameter.
pub fn backward(net: &Network, input: &[f64], target: &[f64]) -> Result<Gradients> {
    if target.len() != net.n_out {
        return Err(Error::Dimension(format!(
            "target has {} values, network outputs {}",
            target.len(),
            net.n_out
        )));
    }
    let Activations { hidden, output } = forward(net, input)?;
    let delta_out: Vec<f64> = output
        .iter()
        .zip(target)
        .map(|(&o, &t)| (o - t) * sigmoid_derivative(o))
        .collect();
    let delta_hid: Vec<f64> = (0..net.n_hidden)
        .map(|h| {
            let back: f64 = (0..net.n_out)
                .map(|o| net.w2[o * net.n_hidden + h] * delta_out[o])
                .sum();
            back * sigmoid_derivative(hidden[h])
        })
        .collect();
    let outer = |delta: &[f64], act: &[f64]| -> Vec<f64> {
        delta
            .iter()
            .flat_map(|&d| act.iter().map(move |&a| d * a))
            .collect()
    };
    Ok(Gradients {
        dw1: outer(&delta_hid, input),
        db1: delta_hid.clone(),
        dw2: outer(&delta_out, &hidden),
        db2: delta_out,
    })
}

pub fn apply_update(net: &Network, grads: &Gradients, learning_rate: f64) -> Result<Network> {
    let shapes_match = grads.dw1.len() == net.w1.len()
        && grads.db1.len() == net.b1.len()
        && grads.dw2.len() == net.w2.len()
        && grads.db2.len() == net.b2.len();
    if !shapes_match {
        return Err(Error::Dimension(
            "gradient shapes do not match the network".into(),
        ));
    }
    let mut next = net.clone();
    next.apply_update(grads, learning_rate);
    Ok(next)
}

/// Mean over samples and components of `(output − target)²`.
pub fn mse(outputs: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} outputs vs {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (o, t) in outputs.iter().zip(targets) {
        if o.len() != t.len() {
            return Err(Error::Dimension(format!(
                "output width {} vs target width {}",
                o.len(),
                t.len()
            )));
        }
        sum += o.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += o.len();
    }
    if count == 0 {
        return Err(Error::Dimension("mse of an empty set".into()));
    }
    Ok(sum / count as f64)
}

/// Disjoint index lists covering `0..n`.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
    pub ratios: (f64, f64, f64),
}

/// Seeded shuffle, then contiguous train/validation/test slices. Slice sizes
/// apportion `n` by largest remainder (ties favor train, then validation).
pub fn split_data(n: usize, ratios: (f64, f64, f64), seed: u64) -> Result<DataSplit> {
    let (rt, rv, rs) = ratios;
    if n == 0 {
        return Err(Error::Config("cannot split an empty data set".into()));
    }
    if [rt, rv, rs].iter().any(|r| !(*r >= 0.0))
        || !(rt > 0.0)
        || ((rt + rv + rs) - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split ratios must be non-negative, train positive, and sum to 1; got {ratios:?}"
        )));
    }
    let quotas = [rt * n as f64, rv * n as f64, rs * n as f64];
    let mut sizes = quotas.map(|q| q.floor() as usize);
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut by_remainder = [0usize, 1, 2];
    by_remainder.sort_by(|&a, &b| {
        (quotas[b] - quotas[b].floor())
            .total_cmp(&(quotas[a] - quotas[a].floor()))
            .then(a.cmp(&b))
    });
    for &k in by_remainder.iter().cycle() {
        if rest == 0 {
            break;
        }
        if quotas[k] > 0.0 {
            sizes[k] += 1;
            rest -= 1;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let validation = idx.split_off(sizes[0]);
    let mut validation = validation;
    let test = validation.split_off(sizes[1]);
    Ok(DataSplit {
        train: idx,
        validation,
        test,
        ratios,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    GoalMet,
    ValFail,
    MaxEpochs,
}

impl StopReason {
    pub const fn name(self) -> &'static str {
        match self {
            StopReason::GoalMet => "goal_met",
            StopReason::ValFail => "val_fail",
            StopReason::MaxEpochs => "max_epochs",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMse {
    pub train: f64,
    /// `None` when the validation split is empty.
    pub validation: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub mse_curve: Vec<EpochMse>,
    pub stop_reason: StopReason,
    /// Validation MSE of the returned network, if there is a validation split.
    pub best_validation_mse: Option<f64>,
    /// Training MSE of the returned network.
    pub final_train_mse: f64,
    pub final_test_mse: Option<f64>,
}

impl TrainReport {
    /// `epoch,train_mse,val_mse`, one row per epoch; an empty validation
    /// split leaves the last column blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse\n");
        for (i, e) in self.mse_curve.iter().enumerate() {
            let val = e.validation.map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(out, "{},{:e},{}", i + 1, e.train, val);
        }
        out
    }
}

fn mse_on(net: &Network, data: &[(Vec<f64>, Vec<f64>)], idx: &[usize]) -> Result<Option<f64>> {
    if idx.is_empty() {
        return Ok(None);
    }
    let mut outputs = Vec::with_capacity(idx.len());
    let mut targets = Vec::with_capacity(idx.len());
    for &i in idx {
        outputs.push(net.predict(&data[i].0)?);
        targets.push(data[i].1.clone());
    }
    mse(&outputs, &targets).map(Some)
}

/// Stochastic gradient descent over the train split.
///
/// Stops when the train MSE reaches `goal_mse`, when the validation MSE has
/// failed to improve on its minimum for `val_fail_limit` consecutive epochs
/// (returning the parameters of that minimum), or after `max_epochs`.
pub fn train(
    net: Network,
    data: &[(Vec<f64>, Vec<f64>)],
    split: &DataSplit,
    cfg: &NetworkConfig,
) -> Result<(Network, TrainReport)> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    if net.dims() != (cfg.n_in, cfg.n_hidden, cfg.n_out) {
        return Err(Error::Dimension(
            "network shape differs from its config".into(),
        ));
    }
    for &i in split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
    {
        let (x, t) = data.get(i).ok_or_else(|| {
            Error::Dimension(format!("split index {i} outside {} samples", data.len()))
        })?;
        if x.len() != cfg.n_in || t.len() != cfg.n_out {
            return Err(Error::Dimension(format!(
                "sample {i} does not match the network shape"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut net = net;
    let mut order = split.train.clone();
    let mut curve = Vec::new();
    let mut best: Option<(f64, Network)> = None;
    let mut fails = 0;
    let mut stop = StopReason::MaxEpochs;

    for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let g = backward(&net, &data[i].0, &data[i].1)?;
            net.apply_update(&g, cfg.learning_rate);
        }
        let train_mse = mse_on(&net, data, &split.train)?.expect("non-empty train split");
        let val_mse = mse_on(&net, data, &split.validation)?;
        curve.push(EpochMse {
            train: train_mse,
            validation: val_mse,
        });
        if train_mse <= cfg.goal_mse {
            stop = StopReason::GoalMet;
            break;
        }
        if let Some(v) = val_mse {
            match &best {
                Some((b, _)) if v >= *b => fails += 1,
                _ => {
                    best = Some((v, net.clone()));
                    fails = 0;
                }
            }
            if fails >= cfg.val_fail_limit {
                stop = StopReason::ValFail;
                break;
            }
        }
    }
    if stop == StopReason::ValFail {
        net = best.expect("a validation minimum exists").1;
    }
    let report = TrainReport {
        epochs_run: curve.len(),
        mse_curve: curve,
        stop_reason: stop,
        best_validation_mse: mse_on(&net, data, &split.validation)?,
        final_train_mse: mse_on(&net, data, &split.train)?.expect("non-empty train split"),
        final_test_mse: mse_on(&net, data, &split.test)?,
    };
    Ok((net, report))
}
