//! Loss, optimizer, gated per-level training and the k-fold protocol.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::image::Mask;
use crate::layers::Mode;
use crate::metrics::{self, FoldResult, MetricsReport, SplitStats};
use crate::net::{compute_gate, gate_decision, GateDecision, Level, MultiLevelNet, NetConfig};
use crate::preprocess::LabeledImage;
use crate::synthgen::splitmix64;
use crate::tensor::{Rng, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub minibatch: usize,
    pub max_epochs_per_level: usize,
    pub iterations_per_epoch: usize,
    pub max_global_rounds: usize,
    pub seed: u64,
    /// Share of the data kept out of the test holdout.
    pub split_fraction: f64,
    pub folds: usize,
    /// Draw minibatch members independently instead of from a per-epoch
    /// permutation.
    pub with_replacement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            minibatch: 2,
            max_epochs_per_level: 400,
            iterations_per_epoch: 150,
            max_global_rounds: 2,
            seed: 0,
            split_fraction: 0.9,
            folds: 5,
            with_replacement: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.minibatch == 0 {
            return Err(Error::invalid("minibatch must be at least 1"));
        }
        if self.iterations_per_epoch == 0 {
            return Err(Error::invalid("iterations per epoch must be at least 1"));
        }
        if self.folds < 2 {
            return Err(Error::invalid(format!("need at least 2 folds, got {}", self.folds)));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "split fraction must lie in (0, 1], got {}",
                self.split_fraction
            )));
        }
        Ok(())
    }
}

/// Mean squared error and its gradient with respect to `pred`.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != truth.len() {
        return Err(Error::shape(format!(
            "loss compares {} values against {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("loss over zero elements"));
    }
    let n = pred.len() as f64;
    let loss = pred.iter().zip(truth).map(|(p, g)| (g - p) * (g - p)).sum::<f64>() / n;
    let grad = pred.iter().zip(truth).map(|(p, g)| 2.0 * (p - g) / n).collect();
    Ok((loss, grad))
}

/// [`mse`] on tensors; the gradient is rounded to `f32` once at the end.
pub fn mse_loss(pred: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != truth.shape() {
        return Err(Error::shape(format!(
            "loss compares {} against {}",
            pred.shape(),
            truth.shape()
        )));
    }
    let p: Vec<f64> = pred.data().iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = truth.data().iter().map(|&v| v as f64).collect();
    let (loss, grad) = mse(&p, &g)?;
    let grad = Tensor::from_vec(pred.shape(), grad.into_iter().map(|v| v as f32).collect())?;
    Ok((loss, grad))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Zeroed moments for parameter groups of the given lengths.
    pub fn new(lengths: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = lengths.into_iter().map(|n| vec![0.0; n]).collect();
        AdamState {
            v: m.clone(),
            m,
            step: 0,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn for_level(level: &Level) -> Self {
        Self::new(level.visit_params().iter().map(|p| p.len()))
    }

    /// One bias-corrected update of every group.
    pub fn apply(&mut self, params: Vec<&mut [f32]>, grads: &[Vec<f32>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} groups, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[i].len() || g.len() != self.m[i].len() {
                return Err(Error::shape(format!(
                    "group {i}: optimizer has {} entries, parameter {}, gradient {}",
                    self.m[i].len(),
                    p.len(),
                    g.len()
                )));
            }
        }
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let gj = g[j] as f64;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let update = lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.epsilon);
                p[j] = (p[j] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

/// One training example; `input` and `target` are single-item batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub input: Tensor,
    pub target: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// Running epoch counter over the whole run.
    pub epoch: usize,
    pub level: usize,
    /// 0 for the first pass, then the global round number.
    pub round: usize,
    pub level_epoch: usize,
    pub loss: f64,
    pub c_o: f64,
    pub decision: GateDecision,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// `(level, round)` pairs that stopped at the epoch cap below threshold.
    pub unmet: Vec<(usize, usize)>,
    pub final_c_o: Option<f64>,
    pub wall_seconds: f64,
}

pub const HISTORY_HEADER: &str = "fold,epoch,level,round,level_epoch,loss,c_o,decision\n";

impl TrainHistory {
    /// Comma-separated rows, without the header, tagged with `fold`.
    pub fn csv_rows(&self, fold: usize) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&format!(
                "{fold},{},{},{},{},{:.8},{:.6},{}\n",
                r.epoch,
                r.level + 1,
                r.round,
                r.level_epoch,
                r.loss,
                r.c_o,
                r.decision
            ));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{HISTORY_HEADER}{}", self.csv_rows(1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochOutcome {
    pub loss: f64,
    pub c_o: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GateRun {
    pub epochs: Vec<(EpochOutcome, GateDecision)>,
    pub reached: bool,
}

impl GateRun {
    pub fn last_c_o(&self) -> f64 {
        self.epochs.last().map_or(0.0, |(o, _)| o.c_o)
    }
}

/// Runs `epoch` until its C_o meets `threshold` or `max_epochs` pass.
pub fn run_gated_epochs(
    threshold: f64,
    max_epochs: usize,
    mut epoch: impl FnMut(usize) -> Result<EpochOutcome>,
) -> Result<GateRun> {
    let mut epochs = Vec::new();
    for e in 1..=max_epochs {
        let outcome = epoch(e)?;
        let decision = gate_decision(outcome.c_o, threshold);
        epochs.push((outcome, decision));
        if decision == GateDecision::Advance {
            return Ok(GateRun { epochs, reached: true });
        }
    }
    Ok(GateRun { epochs, reached: false })
}

/// Mean gate value of a level over a set of examples, in inference mode.
pub fn evaluate_gate(level: &Level, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("gate evaluation set is empty".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        total += compute_gate(&level.infer(&ex.input)?, &ex.target)?;
    }
    Ok(total / examples.len() as f64)
}

fn epoch_batches(n: usize, config: &TrainConfig, rng: &mut Rng) -> Vec<Vec<usize>> {
    let count = config.iterations_per_epoch.min(n.div_ceil(config.minibatch));
    if config.with_replacement {
        return (0..count)
            .map(|_| (0..config.minibatch).map(|_| rng.below(n)).collect())
            .collect();
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
        .chunks(config.minibatch)
        .take(count)
        .map(<[usize]>::to_vec)
        .collect()
}

/// One pass of minibatch updates; returns the mean minibatch loss.
pub fn train_epoch(
    level: &mut Level,
    adam: &mut AdamState,
    train: &[Example],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let batches = epoch_batches(train.len(), config, rng);
    let mut total = 0.0;
    for batch in &batches {
        let inputs: Vec<&Tensor> = batch.iter().map(|&i| &train[i].input).collect();
        let targets: Vec<&Tensor> = batch.iter().map(|&i| &train[i].target).collect();
        let x = Tensor::stack(&inputs)?;
        let t = Tensor::stack(&targets)?;
        let (pred, tape) = level.forward(&x, Mode::Training, rng)?;
        let (loss, grad) = mse_loss(&pred, &t)?;
        if !loss.is_finite() {
            return Ok(loss);
        }
        level.absorb_statistics(&tape);
        let grads = tape.backward(&grad)?;
        adam.apply(level.visit_params_mut(), &grads.0, config.learning_rate)?;
        total += loss;
    }
    Ok(total / batches.len() as f64)
}

/// Trains one level until the gate opens on `val` or the epoch cap is hit.
/// Every epoch is appended to `history`.
#[allow(clippy::too_many_arguments)]
pub fn train_level(
    level: &mut Level,
    index: usize,
    round: usize,
    threshold: f64,
    train: &[Example],
    val: &[Example],
    config: &TrainConfig,
    rng: &mut Rng,
    history: &mut TrainHistory,
) -> Result<GateRun> {
    if train.is_empty() {
        return Err(Error::EmptyDataset("training set is empty".into()));
    }
    if val.is_empty() {
        return Err(Error::EmptyDataset("validation set is empty".into()));
    }
    let mut adam = AdamState::for_level(level);
    let run = run_gated_epochs(threshold, config.max_epochs_per_level, |e| {
        let loss = train_epoch(level, &mut adam, train, config, rng)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                level: index + 1,
                epoch: e,
            });
        }
        let c_o = evaluate_gate(level, val)?;
        let decision = gate_decision(c_o, threshold);
        history.records.push(EpochRecord {
            epoch: history.records.len() + 1,
            level: index,
            round,
            level_epoch: e,
            loss,
            c_o,
            decision,
        });
        Ok(EpochOutcome { loss, c_o })
    })?;
    if !run.reached {
        history.unmet.push((index, round));
    }
    Ok(run)
}

fn examples_for(items: &[&LabeledImage]) -> Vec<Example> {
    items
        .iter()
        .map(|it| Example {
            input: it.image.clone(),
            target: it.target(),
        })
        .collect()
}

/// Replaces each example's input with `level`'s inference output.
fn advance_inputs(level: &Level, examples: &mut [Example]) -> Result<()> {
    for ex in examples {
        ex.input = level.infer(&ex.input)?;
    }
    Ok(())
}

/// Inputs of level `index`: the images pushed through every earlier level.
fn inputs_for_level(net: &MultiLevelNet, base: &[Example], index: usize) -> Result<Vec<Example>> {
    let mut out = base.to_vec();
    for level in &net.levels[..index] {
        advance_inputs(level, &mut out)?;
    }
    Ok(out)
}

fn net_gate(net: &MultiLevelNet, val: &[Example]) -> Result<f64> {
    let mut total = 0.0;
    for ex in val {
        total += compute_gate(&net.forward(&ex.input)?, &ex.target)?;
    }
    Ok(total / val.len() as f64)
}

/// Trains every level in order, each on the previous level's outputs.
///
/// If the whole network then scores below `final_threshold` on `val`, the
/// level with the lowest last C_o is retrained against `final_threshold`
/// and every later level is retrained on the refreshed inputs. At most
/// `max_global_rounds` such rounds run.
pub fn train_network(
    net: &mut MultiLevelNet,
    train: &[&LabeledImage],
    val: &[&LabeledImage],
    config: &TrainConfig,
) -> Result<TrainHistory> {
    config.validate()?;
    let start = Instant::now();
    let mut state = config.seed ^ net.provenance.seed.rotate_left(17);
    let mut rng = Rng::seeded(splitmix64(&mut state));
    let base_train = examples_for(train);
    let base_val = examples_for(val);
    let mut history = TrainHistory::default();
    let mut last_c_o = vec![0.0; net.levels.len()];

    let train_from = |net: &mut MultiLevelNet,
                      first: usize,
                      first_threshold: Option<f64>,
                      round: usize,
                      rng: &mut Rng,
                      history: &mut TrainHistory,
                      last_c_o: &mut [f64]|
     -> Result<()> {
        let mut tr = inputs_for_level(net, &base_train, first)?;
        let mut va = inputs_for_level(net, &base_val, first)?;
        for index in first..net.levels.len() {
            let threshold = match first_threshold {
                Some(t) if index == first => t,
                _ => net.levels[index].threshold,
            };
            let run = train_level(
                &mut net.levels[index],
                index,
                round,
                threshold,
                &tr,
                &va,
                config,
                rng,
                history,
            )?;
            last_c_o[index] = run.last_c_o();
            if index + 1 < net.levels.len() {
                advance_inputs(&net.levels[index], &mut tr)?;
                advance_inputs(&net.levels[index], &mut va)?;
            }
        }
        Ok(())
    };

    train_from(net, 0, None, 0, &mut rng, &mut history, &mut last_c_o)?;
    let final_threshold = net.config.final_threshold;
    let mut c_o = net_gate(net, &base_val)?;
    for round in 1..=config.max_global_rounds {
        if c_o >= final_threshold {
            break;
        }
        let weakest = last_c_o
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v < last_c_o[best] { i } else { best });
        train_from(
            net,
            weakest,
            Some(final_threshold),
            round,
            &mut rng,
            &mut history,
            &mut last_c_o,
        )?;
        c_o = net_gate(net, &base_val)?;
    }
    history.final_c_o = Some(c_o);
    history.wall_seconds = start.elapsed().as_secs_f64();
    Ok(history)
}

/// Index sets of one fold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n`, carves the test holdout, then deals the rest into `k`
/// validation folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, split_fraction: f64, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    if !(split_fraction > 0.0 && split_fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "split fraction must lie in (0, 1], got {split_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::seeded(seed).shuffle(&mut order);
    let keep = (n as f64 * split_fraction).round() as usize;
    let (test, rest) = order.split_at(n - keep);
    if rest.len() < k {
        return Err(Error::invalid(format!(
            "{} items outside the test holdout cannot fill {k} folds",
            rest.len()
        )));
    }
    let mut test = test.to_vec();
    test.sort_unstable();
    Ok((0..k)
        .map(|i| {
            let (lo, hi) = (i * rest.len() / k, (i + 1) * rest.len() / k);
            let mut validation = rest[lo..hi].to_vec();
            let mut train: Vec<usize> = rest[..lo].iter().chain(&rest[hi..]).copied().collect();
            validation.sort_unstable();
            train.sort_unstable();
            FoldSplit {
                train,
                validation,
                test: test.clone(),
            }
        })
        .collect())
}

/// Scores `net` on `items`, grouped by dataset tag.
pub fn evaluate_split(net: &MultiLevelNet, items: &[&LabeledImage]) -> Result<SplitStats> {
    let mut stats = SplitStats::default();
    for it in items {
        let pred = net.forward(&it.image)?;
        let (loss, _) = mse_loss(&pred, &it.target())?;
        let s = pred.shape();
        let mask = Mask::from_probabilities(s.w, s.h, pred.data())?;
        let theta = metrics::default_theta(s.w, s.h);
        stats.entry(it.tag).add(&mask, &it.mask, Some(loss), theta)?;
    }
    Ok(stats)
}

pub fn evaluate_fold(
    net: &MultiLevelNet,
    train: &[&LabeledImage],
    val: &[&LabeledImage],
    test: &[&LabeledImage],
) -> Result<FoldResult> {
    Ok(FoldResult {
        train: evaluate_split(net, train)?,
        validation: evaluate_split(net, val)?,
        test: evaluate_split(net, test)?,
    })
}

/// Everything one fold produced.
#[derive(Clone, Debug)]
pub struct FoldRun {
    pub split: FoldSplit,
    pub net: MultiLevelNet,
    pub history: TrainHistory,
    pub result: FoldResult,
}

fn pick<'a>(data: &'a [LabeledImage], idx: &[usize]) -> Vec<&'a LabeledImage> {
    idx.iter().map(|&i| &data[i]).collect()
}

/// Trains and evaluates a fresh network on one split.
pub fn run_fold(
    data: &[LabeledImage],
    split: FoldSplit,
    net_config: &NetConfig,
    config: &TrainConfig,
    net_seed: u64,
) -> Result<FoldRun> {
    let mut net = MultiLevelNet::new(net_config.clone(), net_seed)?;
    let train = pick(data, &split.train);
    let val = pick(data, &split.validation);
    let test = pick(data, &split.test);
    let history = train_network(&mut net, &train, &val, config)?;
    let result = evaluate_fold(&net, &train, &val, &test)?;
    Ok(FoldRun {
        split,
        net,
        history,
        result,
    })
}

/// Single training run on the first fold of the configured split.
pub fn run_single(data: &[LabeledImage], net_config: &NetConfig, config: &TrainConfig) -> Result<FoldRun> {
    config.validate()?;
    let split = kfold_split(data.len(), config.folds, config.split_fraction, config.seed)?.swap_remove(0);
    run_fold(data, split, net_config, config, config.seed)
}

pub struct KFoldOutcome {
    pub folds: Vec<FoldRun>,
    pub report: MetricsReport,
}

pub fn dataset_pixel_counts(data: &[LabeledImage]) -> std::collections::BTreeMap<String, metrics::PixelCounts> {
    metrics::pixel_count(data.iter().map(|d| (&d.mask, d.tag)))
}

/// Trains one network per fold and reports per-fold and mean metrics.
pub fn run_kfold(data: &[LabeledImage], net_config: &NetConfig, config: &TrainConfig) -> Result<KFoldOutcome> {
    config.validate()?;
    let splits = kfold_split(data.len(), config.folds, config.split_fraction, config.seed)?;
    let mut state = config.seed;
    let mut folds = Vec::with_capacity(splits.len());
    for split in splits {
        let seed = splitmix64(&mut state);
        folds.push(run_fold(data, split, net_config, config, seed)?);
    }
    let results: Vec<FoldResult> = folds.iter().map(|f| f.result.clone()).collect();
    let report = metrics::build_report(&results, dataset_pixel_counts(data))?;
    Ok(KFoldOutcome { folds, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn mse_examples() {
        let (l, g) = mse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (l, g) = mse(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((l - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(g, vec![2.0 / 3.0, 0.0, -2.0 / 3.0]);
        assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn mse_tensor_shape_mismatch() {
        let a = Tensor::zeros(Shape::new(1, 1, 2, 2).unwrap());
        let b = Tensor::zeros(Shape::new(1, 1, 2, 3).unwrap());
        assert!(mse_loss(&a, &b).is_err());
    }

    #[test]
    fn adam_zero_grad_leaves_params() {
        let mut p = vec![1.5f32, -2.0];
        let mut s = AdamState::new([2]);
        s.apply(vec![&mut p], &[vec![0.0, 0.0]], 1e-3).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut p = vec![0.0f32];
        let mut s = AdamState::new([1]);
        s.apply(vec![&mut p], &[vec![3.0]], 1e-2).unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let expect = -1e-2 * 3.0 / (3.0 + 1e-8);
        assert!((p[0] as f64 - expect).abs() < 1e-8);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![0.0f32; 3];
        let mut s = AdamState::new([2]);
        assert!(s.apply(vec![&mut p], &[vec![0.0; 3]], 1e-3).is_err());
    }

    #[test]
    fn gate_stops_on_stubbed_sequence() {
        let seq = [0.4, 0.6, 0.9];
        let run = run_gated_epochs(0.5, 10, |e| {
            Ok(EpochOutcome {
                loss: 1.0,
                c_o: seq[e - 1],
            })
        })
        .unwrap();
        assert_eq!(run.epochs.len(), 2);
        assert!(run.reached);
        assert_eq!(run.epochs[0].1, GateDecision::Repeat);
        assert_eq!(run.epochs[1].1, GateDecision::Advance);

        let run = run_gated_epochs(0.0, 10, |_| Ok(EpochOutcome { loss: 1.0, c_o: 0.0 })).unwrap();
        assert_eq!(run.epochs.len(), 1);

        let run = run_gated_epochs(0.99, 3, |_| Ok(EpochOutcome { loss: 1.0, c_o: 0.5 })).unwrap();
        assert_eq!(run.epochs.len(), 3);
        assert!(!run.reached);
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_split(10, 5, 1.0, 3).unwrap();
        assert_eq!(folds.len(), 5);
        let mut seen = [0; 10];
        for f in &folds {
            assert_eq!(f.validation.len(), 2);
            assert!(f.test.is_empty());
            for &i in &f.validation {
                seen[i] += 1;
                assert!(!f.train.contains(&i));
            }
            assert_eq!(f.train.len() + f.validation.len(), 10);
        }
        assert!(seen.iter().all(|&c| c == 1));
        assert_eq!(folds, kfold_split(10, 5, 1.0, 3).unwrap());
        assert_ne!(folds, kfold_split(10, 5, 1.0, 4).unwrap());
    }

    #[test]
    fn kfold_carves_test_first() {
        let folds = kfold_split(20, 5, 0.9, 1).unwrap();
        for f in &folds {
            assert_eq!(f.test.len(), 2);
            for i in &f.test {
                assert!(!f.train.contains(i) && !f.validation.contains(i));
            }
        }
        let union: usize = folds.iter().map(|f| f.validation.len()).sum();
        assert_eq!(union, 18);
        assert!(kfold_split(3, 5, 1.0, 0).is_err());
        assert!(kfold_split(10, 1, 1.0, 0).is_err());
    }

    #[test]
    fn history_csv_has_header() {
        let mut h = TrainHistory::default();
        h.records.push(EpochRecord {
            epoch: 1,
            level: 0,
            round: 0,
            level_epoch: 1,
            loss: 0.25,
            c_o: 0.5,
            decision: GateDecision::Advance,
        });
        assert_eq!(
            h.to_csv(),
            "fold,epoch,level,round,level_epoch,loss,c_o,decision\n1,1,1,0,1,0.25000000,0.500000,advance\n"
        );
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                minibatch: 0,
                ..TrainConfig::default()
            },
            TrainConfig {
                folds: 1,
                ..TrainConfig::default()
            },
            TrainConfig {
                split_fraction: 0.0,
                ..TrainConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
