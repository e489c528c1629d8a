//! Incremental classification: a one-hidden-layer classifier, the cross-entropy plus
//! information-back loss, from-scratch phase training, and phase metrics.

mod experiment;

pub use experiment::{
    parse_results, run_experiment, write_results, ExperimentConfig, ExperimentResults, ParsedRun, PhaseRecord,
    PhaseSchedule,
};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, DrrError, Result};
use crate::image::ImageTensor;
use crate::nn::{dot, Linear};

pub const DEFAULT_LAMBDA: f64 = 0.005;

/// Hidden layer `r = tanh(W x + b)` followed by a linear head over all classes seen so far.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub hidden: Linear,
    pub head: Linear,
}

fn features(img: &ImageTensor) -> Vec<f64> {
    img.values().iter().map(|v| v - 0.5).collect()
}

impl ClassifierParams {
    pub fn init(inputs: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        if inputs == 0 || hidden == 0 || classes == 0 {
            return invalid("classifier sizes must be positive");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { hidden: Linear::uniform(inputs, hidden, &mut rng), head: Linear::uniform(hidden, classes, &mut rng) })
    }

    fn zeros_like(&self) -> Self {
        Self {
            hidden: Linear::zeros(self.hidden.inputs(), self.hidden.outputs()),
            head: Linear::zeros(self.head.inputs(), self.head.outputs()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.head.outputs()
    }

    pub fn num_parameters(&self) -> usize {
        self.hidden.num_parameters() + self.head.num_parameters()
    }

    /// All parameters, hidden layer first (weights then bias).
    pub fn parameters(&self) -> Vec<f64> {
        self.hidden.parameters().chain(self.head.parameters()).copied().collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.num_parameters(), "parameter count mismatch");
        for (p, v) in self.hidden.parameters_mut().chain(self.head.parameters_mut()).zip(values) {
            *p = *v;
        }
    }

    fn check_input(&self, img: &ImageTensor) -> Result<()> {
        if img.len() != self.hidden.inputs() {
            return invalid(format!("image has {} values, classifier expects {}", img.len(), self.hidden.inputs()));
        }
        Ok(())
    }

    /// Representation used by the information-back term.
    pub fn representation(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        self.check_input(img)?;
        let mut r = vec![0.0; self.hidden.outputs()];
        self.hidden.forward(&features(img), &mut r);
        r.iter_mut().for_each(|v| *v = v.tanh());
        Ok(r)
    }

    pub fn logits(&self, img: &ImageTensor) -> Result<Vec<f64>> {
        let r = self.representation(img)?;
        let mut out = vec![0.0; self.head.outputs()];
        self.head.forward(&r, &mut out);
        Ok(out)
    }
}

/// Anything that assigns a class label to an image.
pub trait Classifier {
    fn predict(&self, img: &ImageTensor) -> usize;
}

impl Classifier for ClassifierParams {
    fn predict(&self, img: &ImageTensor) -> usize {
        let logits = self.logits(img).expect("image matches the classifier input");
        // First maximum wins.
        logits.iter().enumerate().fold(0, |best, (i, v)| if *v > logits[best] { i } else { best })
    }
}

/// Pseudo-random labels derived from the image bytes and a seed.
#[derive(Debug, Clone, Copy)]
pub struct RandomGuess {
    pub classes: usize,
    pub seed: u64,
}

impl Classifier for RandomGuess {
    fn predict(&self, img: &ImageTensor) -> usize {
        let mut h = self.seed ^ 0xcbf2_9ce4_8422_2325;
        for b in img.to_bytes() {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        rng.gen_range(0..self.classes)
    }
}

/// Negative cosine similarity `-(r1/|r1|) . (r2/|r2|)` and its gradient with respect to
/// `r2`. `r1` is treated as a constant.
pub fn ib_loss(r1: &[f64], r2: &[f64]) -> Result<(f64, Vec<f64>)> {
    if r1.len() != r2.len() {
        return invalid("representations differ in length");
    }
    let (n1, n2) = (dot(r1, r1).sqrt(), dot(r2, r2).sqrt());
    if n1 == 0.0 || n2 == 0.0 {
        return Err(DrrError::Degenerate("zero-norm representation".into()));
    }
    let cos = dot(r1, r2) / (n1 * n2);
    let grad = r1.iter().zip(r2).map(|(a, b)| -(a / n1 - cos * b / n2) / n2).collect();
    Ok((-cos, grad))
}

/// One optimization batch: labelled reconstructions and (raw, reconstruction) pairs.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub samples: &'a [(&'a ImageTensor, usize)],
    pub pairs: &'a [(&'a ImageTensor, &'a ImageTensor)],
}

/// Loss terms of a batch; the total is `cross_entropy + lambda * similarity`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub cross_entropy: f64,
    pub similarity: f64,
    pub total: f64,
}

/// Mean cross-entropy over `samples` plus `lambda` times the mean information-back
/// loss over `pairs`, with gradients for every parameter.
pub fn total_loss(batch: &Batch<'_>, params: &ClassifierParams, lambda: f64) -> Result<(LossValue, ClassifierParams)> {
    let mut grads = params.zeros_like();
    let c = params.num_classes();
    let hidden = params.hidden.outputs();
    let mut ce = 0.0;
    for &(img, label) in batch.samples {
        if label >= c {
            return invalid(format!("label {label} outside {c} classes"));
        }
        params.check_input(img)?;
        let x = features(img);
        let mut r = vec![0.0; hidden];
        params.hidden.forward(&x, &mut r);
        r.iter_mut().for_each(|v| *v = v.tanh());
        let mut logits = vec![0.0; c];
        params.head.forward(&r, &mut logits);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        ce += z.ln() + max - logits[label];

        let n = batch.samples.len() as f64;
        let g_logits: Vec<f64> = logits
            .iter()
            .enumerate()
            .map(|(i, l)| ((l - max).exp() / z - f64::from(u8::from(i == label))) / n)
            .collect();
        grads.head.accumulate(&r, &g_logits);
        let mut g_r = vec![0.0; hidden];
        params.head.backward_input(&g_logits, &mut g_r);
        backprop_hidden(&mut grads, &x, &r, &g_r);
    }
    if !batch.samples.is_empty() {
        ce /= batch.samples.len() as f64;
    }

    let mut sim = 0.0;
    if lambda != 0.0 && !batch.pairs.is_empty() {
        let n = batch.pairs.len() as f64;
        for &(raw, rec) in batch.pairs {
            let r1 = params.representation(raw)?;
            let x2 = features(rec);
            let r2 = params.representation(rec)?;
            let (l, g) = ib_loss(&r1, &r2)?;
            sim += l / n;
            let g: Vec<f64> = g.iter().map(|v| v * lambda / n).collect();
            backprop_hidden(&mut grads, &x2, &r2, &g);
        }
    }
    Ok((LossValue { cross_entropy: ce, similarity: sim, total: ce + lambda * sim }, grads))
}

fn backprop_hidden(grads: &mut ClassifierParams, x: &[f64], r: &[f64], g_r: &[f64]) {
    let g_pre: Vec<f64> = r.iter().zip(g_r).map(|(h, g)| g * (1.0 - h * h)).collect();
    grads.hidden.accumulate(x, &g_pre);
}

/// Which raw images the information-back term may use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Reconstructions only.
    Drr,
    /// Raw images of the current phase's new classes.
    IbDrrStar,
    /// New-class raws plus stored raw exemplars of old classes.
    IbDrr,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Drr => "drr",
            Mode::IbDrrStar => "ib-drr-star",
            Mode::IbDrr => "ib-drr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "drr" => Ok(Mode::Drr),
            "ib-drr-star" => Ok(Mode::IbDrrStar),
            "ib-drr" => Ok(Mode::IbDrr),
            _ => invalid(format!("unknown mode {s:?}, expected drr, ib-drr-star, or ib-drr")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { mode: Mode::IbDrr, lambda: DEFAULT_LAMBDA, epochs: 30, lr: 0.05, batch_size: 32, hidden: 32, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid(format!("lambda must be a finite value >= 0, got {}", self.lambda));
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return invalid("batch size and hidden width must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid("learning rate must be positive");
        }
        Ok(())
    }
}

/// Training data of one phase.
#[derive(Debug, Clone, Default)]
pub struct PhaseData {
    /// Reconstructed replay images with labels in `0..classes`.
    pub samples: Vec<(ImageTensor, usize)>,
    /// (raw, reconstruction) positive pairs.
    pub pairs: Vec<(ImageTensor, ImageTensor)>,
}

/// Trains a fresh classifier on `data` with minibatch gradient descent.
///
/// The result depends only on the data, the configuration, and the seed. Pairs are
/// spread evenly over the batches of each epoch.
pub fn train_phase(data: &PhaseData, classes: usize, cfg: &TrainConfig) -> Result<ClassifierParams> {
    cfg.validate()?;
    let Some((first, _)) = data.samples.first() else {
        return invalid("empty training set");
    };
    let mut seen = vec![false; classes];
    for &(_, l) in &data.samples {
        if l >= classes {
            return invalid(format!("label {l} outside {classes} classes"));
        }
        seen[l] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return invalid(format!("class {missing} missing from the training set"));
    }
    let mut params = ClassifierParams::init(first.len(), cfg.hidden, classes, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_6e64);
    let mut order: Vec<usize> = (0..data.samples.len()).collect();
    let mut pair_order: Vec<usize> = (0..data.pairs.len()).collect();
    let batches = data.samples.len().div_ceil(cfg.batch_size);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        pair_order.shuffle(&mut rng);
        for b in 0..batches {
            let samples: Vec<(&ImageTensor, usize)> = order
                [b * cfg.batch_size..((b + 1) * cfg.batch_size).min(order.len())]
                .iter()
                .map(|&i| (&data.samples[i].0, data.samples[i].1))
                .collect();
            let (lo, hi) = (b * pair_order.len() / batches, (b + 1) * pair_order.len() / batches);
            let pairs: Vec<(&ImageTensor, &ImageTensor)> =
                pair_order[lo..hi].iter().map(|&i| (&data.pairs[i].0, &data.pairs[i].1)).collect();
            let lambda = if cfg.mode == Mode::Drr { 0.0 } else { cfg.lambda };
            let (_, grads) = total_loss(&Batch { samples: &samples, pairs: &pairs }, &params, lambda)?;
            params.hidden.axpy(-cfg.lr, &grads.hidden);
            params.head.axpy(-cfg.lr, &grads.head);
        }
    }
    Ok(params)
}

/// Fraction of correctly labelled test images.
pub fn accuracy(clf: &dyn Classifier, test: &[(ImageTensor, usize)]) -> Result<f64> {
    if test.is_empty() {
        return invalid("empty test set");
    }
    let correct = test.iter().filter(|(img, l)| clf.predict(img) == *l).count();
    Ok(correct as f64 / test.len() as f64)
}

/// Phase-wise accuracies `A_0..A_N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseResults {
    pub accuracies: Vec<f64>,
}

impl PhaseResults {
    /// Mean of `A_1..A_N`; the initial phase is excluded. `None` when `N = 0`.
    pub fn average(&self) -> Option<f64> {
        let inc = self.accuracies.get(1..).filter(|a| !a.is_empty())?;
        Some(inc.iter().sum::<f64>() / inc.len() as f64)
    }

    pub fn last(&self) -> Option<f64> {
        self.accuracies.last().copied()
    }
}

/// Evaluates the classifier of each phase on that phase's test set.
pub fn evaluate(classifiers: &[&dyn Classifier], tests: &[Vec<(ImageTensor, usize)>]) -> Result<PhaseResults> {
    if classifiers.len() != tests.len() {
        return invalid("one test set per phase classifier is required");
    }
    let accuracies = classifiers.iter().zip(tests).map(|(c, t)| accuracy(*c, t)).collect::<Result<_>>()?;
    Ok(PhaseResults { accuracies })
}
