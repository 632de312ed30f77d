//! Parameter initialization, the warmup learning-rate schedule, Adam, class
//! balancing and the epoch loop.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::eval::auc;
use crate::featureizer::TrainingWindow;
use crate::model::{Init, Model, ModelParams, ModelSpec, Readout};
use crate::numerics::{Graph, Scalar, Tensor};

/// Uniform samples in `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_init<T: Scalar, R: Rng + ?Sized>(fan_in: usize, fan_out: usize, shape: &[usize], rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
    Tensor::new(shape.to_vec(), data).expect("shape covers data")
}

/// Fresh parameters for `spec`, reproducible from `seed`.
pub fn init_params(spec: &ModelSpec, seed: u64) -> ModelParams<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::new();
    for p in spec.param_shapes() {
        let t = match p.init {
            Init::Xavier => {
                let (fan_in, fan_out) = (p.shape[0], p.shape[p.shape.len() - 1]);
                xavier_init(fan_in, fan_out, &p.shape, &mut rng)
            }
            Init::Zeros => Tensor::zeros(&p.shape),
            Init::Ones => Tensor::full(&p.shape, 1.0),
        };
        params.insert(p.name, t);
    }
    params
}

/// Warmup-then-inverse-square-root learning rate for a 1-based `step`.
pub fn noam_lr(step: u64, d_model: usize, warmup_steps: u64) -> Result<f64> {
    if step == 0 {
        return Err(Error::Config("learning-rate steps are 1-based".into()));
    }
    if warmup_steps == 0 || d_model == 0 {
        return Err(Error::Config("warmup steps and d_model must be positive".into()));
    }
    let s = step as f64;
    let warm = s * (warmup_steps as f64).powf(-1.5);
    Ok((d_model as f64).powf(-0.5) * s.powf(-0.5).min(warm))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> Default for Adam<T> {
    fn default() -> Self {
        Self::new(0.9, 0.98, 1e-9)
    }
}

impl<T: Scalar> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter that has a gradient. Nothing is changed
    /// if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ModelParams<T>, grads: &BTreeMap<String, Tensor<T>>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            if params.get(name)?.shape() != g.shape() {
                return Err(Error::Dimension {
                    op: "adam",
                    left: params.get(name)?.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as f64;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powf(t));
        let c2 = T::of(1.0 - self.beta2.powf(t));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![T::zero(); g.len()]);
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *w -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(grads: &mut BTreeMap<String, Tensor<T>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.data())
        .map(|&x| x.as_f64() * x.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        for g in grads.values_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

/// Indices into `labels` with the minority class replicated up to the size of
/// the majority class, shuffled. Whole copies come first, the remainder is
/// drawn without replacement.
pub fn oversample<R: Rng + ?Sized>(labels: &[u8], rng: &mut R) -> Result<Vec<usize>> {
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i] != 0);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Data(format!(
            "cannot balance classes: {} positive and {} negative windows",
            pos.len(),
            neg.len()
        )));
    }
    let (minor, major) = if pos.len() < neg.len() { (pos, neg) } else { (neg, pos) };
    let mut out = major.clone();
    for _ in 0..major.len() / minor.len() {
        out.extend_from_slice(&minor);
    }
    let rest = major.len() % minor.len();
    out.extend(minor.choose_multiple(rng, rest).copied());
    out.shuffle(rng);
    Ok(out)
}

/// The sample stream of one epoch: balanced by [`oversample`], or a plain
/// shuffle.
pub fn epoch_order<R: Rng + ?Sized>(labels: &[u8], balance: bool, rng: &mut R) -> Result<Vec<usize>> {
    if balance {
        return oversample(labels, rng);
    }
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    Ok(order)
}

/// Which positions contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossPositions {
    /// The target interaction of each window.
    Last,
    /// Every real slot of each window.
    All,
}

impl std::str::FromStr for LossPositions {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" => Ok(Self::Last),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("loss positions must be `last` or `all`, got `{s}`"))),
        }
    }
}

impl fmt::Display for LossPositions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Last => "last",
            Self::All => "all",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup_steps: u64,
    pub clip_norm: f64,
    pub seed: u64,
    pub oversample: bool,
    pub loss_positions: LossPositions,
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            epochs: 10,
            batch_size: 128,
            warmup_steps: 400,
            clip_norm: 5.0,
            seed: 7,
            oversample: true,
            loss_positions: LossPositions::Last,
        }
    }

    pub fn paper() -> Self {
        Self {
            warmup_steps: 6000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.warmup_steps == 0 {
            return Err(Error::Config("epochs, batch size and warmup steps must be positive".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the validation windows hold a single class.
    pub val_auc: Option<f64>,
    pub lr: f64,
    pub steps: u64,
}

pub fn write_curves<W: Write>(history: &[EpochLog], mut out: W) -> Result<()> {
    writeln!(out, "epoch,train_loss,val_auc,lr")?;
    for e in history {
        let auc = e.val_auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
        writeln!(out, "{},{:.6},{},{:.6e}", e.epoch, e.train_loss, auc, e.lr)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Trained {
    /// Parameters of the epoch with the best validation AUC.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
}

/// Loss and parameter gradients of one batch.
pub fn batch_gradients<T: Scalar>(
    model: &Model<T>,
    batch: &[&TrainingWindow],
    positions: LossPositions,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<(f64, BTreeMap<String, Tensor<T>>)> {
    let mut g = Graph::new();
    let bound = model.bind(&mut g, true);
    let readout = match positions {
        LossPositions::Last => Readout::Last,
        LossPositions::All => Readout::All,
    };
    let fwd = model.forward(&mut g, &bound, batch, readout, rng)?;
    let targets = fwd
        .rows
        .iter()
        .map(|&(b, slot)| {
            let f = batch[b].frames[slot].expect("readout rows are real slots");
            T::of(f64::from(f.dropout))
        })
        .collect();
    let loss = g.bce_with_logits(fwd.logits, targets)?;
    let value = g.value(loss).data()[0].as_f64();
    if !value.is_finite() {
        return Ok((value, BTreeMap::new()));
    }
    let mut grads = g.backward(loss)?;
    let out = bound
        .iter()
        .map(|(name, id)| (name.to_string(), grads.take(id)))
        .collect();
    Ok((value, out))
}

/// Receives progress from [`train`].
pub trait Observer {
    fn epoch(&mut self, _log: &EpochLog) {}
}

impl Observer for () {}

impl<F: FnMut(&EpochLog)> Observer for F {
    fn epoch(&mut self, log: &EpochLog) {
        self(log)
    }
}

/// Trains from `init`, keeping the parameters with the best validation AUC.
///
/// Single-threaded apart from validation scoring, and fully determined by
/// `config.seed`.
pub fn train(
    spec: &ModelSpec,
    init: ModelParams<f32>,
    train_windows: &[TrainingWindow],
    val_windows: &[TrainingWindow],
    config: &TrainConfig,
    observer: &mut dyn Observer,
) -> Result<Trained> {
    config.validate()?;
    if train_windows.is_empty() {
        return Err(Error::Data("no training windows".into()));
    }
    let mut model = Model::new(spec.clone(), init)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::default();
    let labels: Vec<u8> = train_windows.iter().map(|w| w.target_label).collect();
    let val_labels: Vec<u8> = val_windows.iter().map(|w| w.target_label).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    let mut last_good = model.params.clone();
    let mut lr = 0.0;

    for epoch in 1..=config.epochs {
        let order = epoch_order(&labels, config.oversample, &mut rng)?;
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingWindow> = chunk.iter().map(|&i| &train_windows[i]).collect();
            let (loss, mut grads) = batch_gradients(&model, &batch, config.loss_positions, Some(&mut rng))?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    last_good: Some(Box::new(last_good)),
                });
            }
            clip_grad_norm(&mut grads, config.clip_norm);
            lr = noam_lr(adam.steps() + 1, spec.config.d_model, config.warmup_steps)?;
            adam.step(&mut model.params, &grads, lr)?;
            total += loss * batch.len() as f64;
            count += batch.len();
        }
        let train_loss = total / count as f64;
        if !train_loss.is_finite() || !model.params.is_finite() {
            return Err(Error::Diverged {
                epoch,
                last_good: Some(Box::new(last_good)),
            });
        }
        last_good = model.params.clone();

        let val_auc = if val_windows.is_empty() {
            None
        } else {
            auc(&model.predict(val_windows)?, &val_labels).ok()
        };
        let log = EpochLog {
            epoch,
            train_loss,
            val_auc,
            lr,
            steps: adam.steps(),
        };
        observer.epoch(&log);
        history.push(log);

        let score = val_auc.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
            best = Some((score, epoch, model.params.clone()));
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch");
    Ok(Trained {
        model: Model::new(spec.clone(), params)?,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noam_reference_values() {
        assert!((noam_lr(6000, 512, 6000).unwrap() - 5.705e-4).abs() < 1e-7);
        assert!((noam_lr(1, 512, 6000).unwrap() - 9.51e-8).abs() < 1e-10);
        assert!(noam_lr(0, 512, 6000).is_err());
        let peak = noam_lr(400, 64, 400).unwrap();
        assert!(noam_lr(399, 64, 400).unwrap() < peak);
        assert!(noam_lr(401, 64, 400).unwrap() < peak);
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t: Tensor<f64> = xavier_init(512, 512, &[512, 512], &mut rng);
        let bound = (6.0f64 / 1024.0).sqrt();
        assert!(t.data().iter().all(|x| x.abs() <= bound));
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = ModelParams::<f64>::new();
        p.insert("w", Tensor::from_rows(&[[1.0, -1.0]]).unwrap());
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::from_rows(&[[0.5, -2.0]]).unwrap());
        let mut adam = Adam::default();
        adam.step(&mut p, &g, 0.1).unwrap();
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-8);
        assert!((w[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn adam_rejects_nan_without_touching_params() {
        let mut p = ModelParams::<f32>::new();
        p.insert("w", Tensor::full(&[2], 1.0));
        let before = p.clone();
        let mut g = BTreeMap::new();
        g.insert("w".to_string(), Tensor::new(vec![2], vec![f32::NAN, 0.0]).unwrap());
        let err = Adam::default().step(&mut p, &g, 0.1).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(p, before);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = BTreeMap::new();
        g.insert("a".to_string(), Tensor::<f64>::full(&[4], 5.0));
        let n = clip_grad_norm(&mut g, 5.0);
        assert_eq!(n, 10.0);
        assert!(g["a"].data().iter().all(|&x| (x - 2.5).abs() < 1e-12));
    }

    #[test]
    fn oversampling_balances() {
        let labels: Vec<u8> = (0..100).map(|i| u8::from(i % 7 == 0)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let idx = oversample(&labels, &mut rng).unwrap();
        let pos = idx.iter().filter(|&&i| labels[i] == 1).count();
        assert_eq!(pos * 2, idx.len());
        assert!(oversample(&[0, 0], &mut rng).is_err());
    }
}
