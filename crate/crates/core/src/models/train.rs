//! Epoch loop for the deep models: minibatches of choice sets, Adam with a
//! freeze mask, validation after every epoch and best-epoch selection.
//!
//! Work is split into chunks of whole choice sets. Chunk boundaries depend
//! only on the batch composition and `chunk_tokens`, chunks are evaluated in
//! parallel and their gradients are summed in chunk order, so results do not
//! depend on the number of threads.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{set_loss_and_hits, set_utility_gradient, ChoiceData, Tally};
use super::deep::DeepModel;
use crate::engine::layers::{Ctx, Mode};
use crate::engine::{Adam, AdamConfig};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Selection {
    /// Highest validation accuracy; ties go to the lower validation loss,
    /// then the earlier epoch. Epoch 0 (the initial state) competes too.
    #[default]
    BestValidation,
    /// State after the last epoch.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub epochs: usize,
    pub lr: f64,
    /// Cosine-decay floor reached at the last epoch; `None` keeps `lr`.
    pub lr_min: Option<f64>,
    /// Observations per minibatch (whole choice sets are kept together);
    /// `None` = full batch, written as 0 in config files.
    #[serde(with = "zero_is_full_batch")]
    pub batch_size: Option<usize>,
    pub selection: Selection,
    /// Drives minibatch shuffling and dropout.
    pub seed: u64,
    /// Work-unit size in encoder tokens (rows for models without one).
    pub chunk_tokens: usize,
}

mod zero_is_full_batch {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(v.unwrap_or(0) as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<usize>, D::Error> {
        let n = usize::deserialize(d)?;
        Ok((n > 0).then_some(n))
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            epochs: 50,
            lr: 1e-3,
            lr_min: None,
            batch_size: Some(1024),
            selection: Selection::BestValidation,
            seed: 0,
            chunk_tokens: 8192,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == Some(0) || self.chunk_tokens == 0 {
            return Err(Error::config("batch and chunk sizes must be positive"));
        }
        Ok(())
    }

    /// Learning rate used during epoch `e` (1-based).
    pub fn lr_at(&self, e: usize) -> f64 {
        match self.lr_min {
            Some(floor) if self.epochs > 1 => {
                let t = (e - 1) as f64 / (self.epochs - 1) as f64;
                floor + 0.5 * (self.lr - floor) * (1.0 + (std::f64::consts::PI * t).cos())
            }
            _ => self.lr,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Mean negative log-likelihood per observation.
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training-mode loss over the epoch's minibatches (evaluation-mode
    /// loss of the initial state for epoch 0).
    pub train_loss: f64,
    pub valid_loss: f64,
    pub valid_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub model: DeepModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Rows of the sets named by a tally, gathered in tally order.
struct Prepared<'a> {
    x: Array2<f64>,
    tokens: Option<Array2<f64>>,
    tally: &'a Tally,
}

impl<'a> Prepared<'a> {
    fn new(model: &DeepModel, data: &ChoiceData, tally: &'a Tally) -> Result<Self> {
        if data.feature_dim() != model.feature_dim() {
            return Err(Error::structural(format!(
                "model reads {} features, data has {}",
                model.feature_dim(),
                data.feature_dim()
            )));
        }
        let rows: Vec<usize> = tally.sets.iter().flat_map(|&s| data.set_range(s)).collect();
        let x = data.rows().select(Axis(0), &rows);
        let tokens = model.tokens(&x.view());
        Ok(Prepared { x, tokens, tally })
    }

    fn rows_of(&self, k: usize) -> std::ops::Range<usize> {
        self.tally.bounds[k]..self.tally.bounds[k + 1]
    }
}

/// A run of whole sets processed as one unit.
struct Chunk {
    x: Array2<f64>,
    tokens: Option<Array2<f64>>,
    counts: Vec<f64>,
    /// Row boundaries of the sets inside the chunk.
    bounds: Vec<usize>,
    /// Index of the chunk's first row within its batch.
    row_offset: usize,
}

fn make_chunks(p: &Prepared, sets: &[usize], max_rows: usize) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut offset = 0;
    while start < sets.len() {
        let mut end = start;
        let mut rows = 0;
        while end < sets.len() && (end == start || rows + p.rows_of(sets[end]).len() <= max_rows) {
            rows += p.rows_of(sets[end]).len();
            end += 1;
        }
        let idx: Vec<usize> = sets[start..end].iter().flat_map(|&k| p.rows_of(k)).collect();
        let mut bounds = vec![0];
        for &k in &sets[start..end] {
            bounds.push(bounds.last().unwrap() + p.rows_of(k).len());
        }
        chunks.push(Chunk {
            x: p.x.select(Axis(0), &idx),
            tokens: p.tokens.as_ref().map(|t| t.select(Axis(0), &idx)),
            counts: idx.iter().map(|&r| p.tally.counts[r]).collect(),
            bounds,
            row_offset: offset,
        });
        offset += rows;
        start = end;
    }
    chunks
}

fn chunk_rows(model: &DeepModel, chunk_tokens: usize) -> usize {
    match model.transformer() {
        Some(t) => (chunk_tokens / t.pool).max(1),
        None => chunk_tokens,
    }
}

fn tokens_view(c: &Chunk) -> Option<ArrayView2<'_, f64>> {
    c.tokens.as_ref().map(|t| t.view())
}

/// Summed loss and hits of a prepared tally, evaluation mode.
fn eval_prepared(model: &DeepModel, p: &Prepared, chunk_tokens: usize) -> (f64, f64) {
    let sets: Vec<usize> = (0..p.tally.n_sets()).collect();
    let chunks = make_chunks(p, &sets, chunk_rows(model, chunk_tokens));
    let parts: Vec<(f64, f64)> = chunks
        .par_iter()
        .map(|c| {
            let (u, _) = model.forward_chunk(&c.x.view(), tokens_view(c).as_ref(), &Ctx::eval(1));
            let mut loss = 0.0;
            let mut hits = 0.0;
            for w in c.bounds.windows(2) {
                let (l, h) = set_loss_and_hits(
                    &u.as_slice().expect("contiguous")[w[0]..w[1]],
                    &c.counts[w[0]..w[1]],
                );
                loss += l;
                hits += h;
            }
            (loss, hits)
        })
        .collect();
    parts.iter().fold((0.0, 0.0), |(a, b), (l, h)| (a + l, b + h))
}

/// Mean loss and accuracy of a model over the observations in `tally`.
pub fn evaluate(model: &DeepModel, data: &ChoiceData, tally: &Tally) -> Result<Metrics> {
    if tally.n_obs == 0 {
        return Err(Error::data("cannot evaluate on zero observations"));
    }
    let p = Prepared::new(model, data, tally)?;
    let (loss, hits) = eval_prepared(model, &p, Schedule::default().chunk_tokens);
    let n = tally.n_obs as f64;
    Ok(Metrics {
        loss: loss / n,
        accuracy: hits / n,
    })
}

/// Loss sum and parameter gradients of one chunk, scaled by `scale`.
fn chunk_gradient(model: &DeepModel, c: &Chunk, scale: f64, seed: u64, step: u64, pool: usize) -> (f64, Vec<Vec<f64>>) {
    let ctx = Ctx {
        mode: Mode::Train { seed, step },
        seq_len: 1,
        row_offset: (c.row_offset * pool) as u64,
    };
    let mut m = model.clone();
    m.zero_grads();
    let (u, cache) = m.forward_chunk(&c.x.view(), tokens_view(c).as_ref(), &ctx);
    let u = u.as_slice().expect("contiguous");
    let mut g = Array1::zeros(u.len());
    let mut loss = 0.0;
    {
        let gs = g.as_slice_mut().expect("contiguous");
        for w in c.bounds.windows(2) {
            loss += set_utility_gradient(&u[w[0]..w[1]], &c.counts[w[0]..w[1]], &mut gs[w[0]..w[1]]);
        }
    }
    g *= scale;
    m.backward_chunk(&c.x.view(), &cache, &g.view());
    (loss, m.grads())
}

fn batches(p: &Prepared, schedule: &Schedule, epoch: usize) -> Vec<Vec<usize>> {
    let n = p.tally.n_sets();
    let mut order: Vec<usize> = (0..n).collect();
    let Some(size) = schedule.batch_size else {
        return vec![order];
    };
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut obs = 0.0;
    for k in order {
        obs += p.tally.set_counts(k).iter().sum::<f64>();
        current.push(k);
        if obs >= size as f64 {
            out.push(std::mem::take(&mut current));
            obs = 0.0;
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn better(a: &EpochRecord, b: &EpochRecord) -> bool {
    a.valid_acc > b.valid_acc || (a.valid_acc == b.valid_acc && a.valid_loss < b.valid_loss)
}

/// Train `model` on the observations of `train_set`, validating on
/// `valid_set` after every epoch.
pub fn train(
    model: DeepModel,
    data: &ChoiceData,
    train_set: &Tally,
    valid_set: Option<&Tally>,
    schedule: &Schedule,
) -> Result<FittedModel> {
    schedule.validate()?;
    if train_set.n_obs == 0 {
        return Err(Error::data("training set is empty"));
    }
    let mut model = model;
    let mask = model.freeze_mask().clone();
    let prepared = Prepared::new(&model, data, train_set)?;
    let valid = match valid_set {
        Some(v) if v.n_obs > 0 => Some(Prepared::new(&model, data, v)?),
        Some(_) => return Err(Error::data("validation set is empty")),
        None => None,
    };
    let max_rows = chunk_rows(&model, schedule.chunk_tokens);
    let pool = model.transformer().map_or(1, |t| t.pool);
    let n_train = train_set.n_obs as f64;

    let validate = |m: &DeepModel| -> (f64, f64) {
        match &valid {
            Some(v) => {
                let (l, h) = eval_prepared(m, v, schedule.chunk_tokens);
                let n = v.tally.n_obs as f64;
                (l / n, h / n)
            }
            None => (f64::NAN, f64::NAN),
        }
    };

    let (init_loss, _) = eval_prepared(&model, &prepared, schedule.chunk_tokens);
    let (vl, va) = validate(&model);
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: init_loss / n_train,
        valid_loss: vl,
        valid_acc: va,
    }];
    let mut best = (0, model.clone());
    let mut opt = Adam::new(AdamConfig {
        lr: schedule.lr,
        ..AdamConfig::default()
    });

    for epoch in 1..=schedule.epochs {
        opt.config.lr = schedule.lr_at(epoch);
        let mut epoch_loss = 0.0;
        for (b, sets) in batches(&prepared, schedule, epoch).iter().enumerate() {
            let chunks = make_chunks(&prepared, sets, max_rows);
            let batch_obs: f64 = chunks.iter().flat_map(|c| &c.counts).sum();
            let step = opt.steps_taken() + 1;
            let parts: Vec<(f64, Vec<Vec<f64>>)> = chunks
                .par_iter()
                .map(|c| chunk_gradient(&model, c, 1.0 / batch_obs, schedule.seed, step, pool))
                .collect();
            model.zero_grads();
            let mut loss = 0.0;
            for (l, g) in &parts {
                loss += l;
                model.add_grads(g);
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    lr: opt.config.lr,
                    batch: b,
                });
            }
            epoch_loss += loss;
            opt.step(&mut model.params_mut(), &mask)?;
        }
        let (vl, va) = validate(&model);
        let rec = EpochRecord {
            epoch,
            train_loss: epoch_loss / n_train,
            valid_loss: vl,
            valid_acc: va,
        };
        if schedule.selection == Selection::BestValidation && valid.is_some() && better(&rec, &history[best.0]) {
            best = (epoch, model.clone());
        }
        history.push(rec);
    }
    let (best_epoch, model) = match (schedule.selection, &valid) {
        (Selection::BestValidation, Some(_)) => best,
        _ => (schedule.epochs, model),
    };
    Ok(FittedModel {
        model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::GroundTruthUtility;
    use crate::features::TransformSpec;
    use crate::models::deep::{DeepKind, DeepSpec, TransformerConfig};
    use rand_distr::Distribution;
    use crate::models::{dcm, DcmSpec};
    use crate::types::test_support::route;
    use crate::types::{CardType, ChoiceObservation, NodeId};
    use rand::Rng;

    /// MNL choices over random sets drawn from a small pool of OD "templates"
    /// so sets repeat, as in generated data.
    fn mnl_observations(n: usize, templates: usize, seed: u64) -> Vec<ChoiceObservation> {
        let truth = GroundTruthUtility::default();
        let gumbel = rand_distr::Gumbel::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sets: Vec<Vec<_>> = (0..templates)
            .map(|_| {
                let m = rng.random_range(2..6);
                (0..m)
                    .map(|_| {
                        let t = rng.random_range(0..3u32);
                        route(
                            rng.random_range(300..3600),
                            rng.random_range(90..250),
                            if t == 0 { 0 } else { rng.random_range(30..900) },
                            t,
                            &[rng.random_range(0..500)],
                        )
                    })
                    .collect()
            })
            .collect();
        (0..n)
            .map(|_| {
                let alternatives = sets[rng.random_range(0..templates)].clone();
                let u: Vec<f64> = alternatives
                    .iter()
                    .map(|r| truth.utility(r, CardType::Adult) + gumbel.sample(&mut rng))
                    .collect();
                let chosen = (0..u.len()).max_by(|&a, &b| u[a].total_cmp(&u[b])).unwrap();
                ChoiceObservation {
                    od_pair: (NodeId(0), NodeId(1)),
                    alternatives,
                    chosen,
                    card_type: CardType::Adult,
                }
            })
            .collect()
    }

    fn cnn1() -> DeepModel {
        DeepModel::build(&DeepSpec::new(DeepKind::Cnn1, 4), None, 0).unwrap()
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let obs = mnl_observations(400, 30, 1);
        let data = ChoiceData::from_observations(&obs, &TransformSpec::default(), false, false).unwrap();
        let all = data.tally_all();
        let m = DeepModel::build(&DeepSpec::new(DeepKind::Cnn2U, 4), None, 0).unwrap();
        let schedule = Schedule {
            epochs: 0,
            ..Schedule::default()
        };
        let fit = train(m.clone(), &data, &all, Some(&all), &schedule).unwrap();
        assert_eq!(fit.model, m);
        assert_eq!(fit.best_epoch, 0);
        // the all-zero model guesses uniformly
        let baseline: f64 = obs.iter().map(|o| 1.0 / o.alternatives.len() as f64).sum::<f64>() / obs.len() as f64;
        assert!((fit.history[0].valid_acc - baseline).abs() < 1e-12);
    }

    #[test]
    fn loss_equals_dcm_log_likelihood() {
        let obs = mnl_observations(3000, 80, 2);
        let data = ChoiceData::from_observations(&obs, &TransformSpec::default(), false, false).unwrap();
        let mut m = cnn1();
        let betas = [-2.1, -1.0, -2.7, -3.3];
        m.params_mut()[0].data_mut().copy_from_slice(&betas);
        let metrics = evaluate(&m, &data, &data.tally_all()).unwrap();
        let fms: Vec<_> = obs
            .iter()
            .map(|o| crate::features::assemble_features(o, &TransformSpec::default(), false).unwrap())
            .collect();
        let dd = dcm::DcmData::from_feature_matrices(&fms, None).unwrap();
        let ll = dcm::log_likelihood(&DcmSpec::mnl(), &dd, &[betas[0], betas[2], betas[3]]);
        let summed = metrics.loss * obs.len() as f64;
        assert!((summed + ll).abs() <= 1e-9 * ll.abs(), "{summed} vs {ll}");
    }

    #[test]
    fn full_batch_cnn1_loss_is_monotone() {
        let obs = mnl_observations(2000, 60, 3);
        let data = ChoiceData::from_observations(&obs, &TransformSpec::default(), false, false).unwrap();
        let all = data.tally_all();
        let schedule = Schedule {
            epochs: 300,
            lr: 1e-2,
            batch_size: None,
            selection: Selection::Final,
            ..Schedule::default()
        };
        let fit = train(cnn1(), &data, &all, None, &schedule).unwrap();
        for w in fit.history.windows(2) {
            assert!(w[1].train_loss <= w[0].train_loss + 1e-12, "{w:?}");
        }
        // fare never moves
        assert_eq!(fit.model.policy_betas()[1], -1.0);
    }

    #[test]
    fn frozen_policy_is_bit_identical_after_training() {
        let obs = mnl_observations(1500, 40, 4);
        let with_ctx = ChoiceData::from_observations(&obs, &TransformSpec::default(), true, false).unwrap();
        let all = with_ctx.tally_all();
        let mut src = cnn1();
        src.params_mut()[0].data_mut().copy_from_slice(&[-2.453, -1.0, -2.89, -3.545]);
        let ckpt = src.to_checkpoint();
        let tiny = TransformerConfig {
            pool: 4,
            d_model: 8,
            heads: 2,
            d_k: 4,
            d_v: 4,
            d_ff: 16,
            ..TransformerConfig::default()
        };
        for kind in [DeepKind::Cnn2C, DeepKind::TfmC] {
            let spec = DeepSpec::constrained(kind, "cnn1").with_transformer(tiny);
            let m = DeepModel::build(&spec, Some(&ckpt), 5).unwrap();
            let schedule = Schedule {
                epochs: 3,
                lr: 0.05,
                batch_size: Some(200),
                ..Schedule::default()
            };
            let fit = train(m, &with_ctx, &all, Some(&all), &schedule).unwrap();
            let b = fit.model.policy_betas();
            assert_eq!(b.map(f64::to_bits), [-2.453, -1.0, -2.89, -3.545].map(f64::to_bits));
            assert_eq!(&fit.model.parameter_table().estimates[..4], &[-2.453, -1.0, -2.89, -3.545]);
        }
    }

    #[test]
    fn cnn1_recovers_mle_and_cnn2u_nests_it() {
        let obs = mnl_observations(6000, 150, 5);
        let data = ChoiceData::from_observations(&obs, &TransformSpec::default(), false, false).unwrap();
        let all = data.tally_all();
        let schedule = Schedule {
            epochs: 2000,
            lr: 0.2,
            lr_min: Some(1e-5),
            batch_size: None,
            selection: Selection::Final,
            ..Schedule::default()
        };
        let c1 = train(cnn1(), &data, &all, None, &schedule).unwrap();
        let fms: Vec<_> = obs
            .iter()
            .map(|o| crate::features::assemble_features(o, &TransformSpec::default(), false).unwrap())
            .collect();
        let mle = dcm::fit_dcm(&DcmSpec::mnl(), &fms, None).unwrap();
        for (a, b) in c1.model.policy_betas().iter().zip(mle.policy_betas()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        let u = DeepModel::build(&DeepSpec::new(DeepKind::Cnn2U, 4), None, 0).unwrap();
        let c2 = train(u, &data, &all, None, &schedule).unwrap();
        let l1 = evaluate(&c1.model, &data, &all).unwrap().loss;
        let l2 = evaluate(&c2.model, &data, &all).unwrap().loss;
        assert!(l2 <= l1 + 1e-6, "{l2} > {l1}");
    }

    #[test]
    fn training_is_reproducible_and_chunking_invariant() {
        let obs = mnl_observations(800, 30, 6);
        let data = ChoiceData::from_observations(&obs, &TransformSpec::default(), true, false).unwrap();
        let all = data.tally(&(0..600).collect::<Vec<_>>());
        let valid = data.tally(&(600..800).collect::<Vec<_>>());
        let spec = DeepSpec::new(DeepKind::TfmU, 97).with_transformer(TransformerConfig {
            pool: 4,
            d_model: 8,
            heads: 2,
            d_k: 4,
            d_v: 4,
            d_ff: 16,
            ..TransformerConfig::default()
        });
        let run = |chunk_tokens| {
            let m = DeepModel::build(&spec, None, 7).unwrap();
            let schedule = Schedule {
                epochs: 2,
                lr: 0.01,
                batch_size: Some(128),
                chunk_tokens,
                ..Schedule::default()
            };
            train(m, &data, &all, Some(&valid), &schedule).unwrap()
        };
        let a = run(64);
        let b = run(64);
        assert_eq!(a, b);
        let c = run(4096);
        // same dropout masks and same sums up to float reassociation
        for (x, y) in a.history.iter().zip(&c.history) {
            assert!((x.train_loss - y.train_loss).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_context() {
        let obs = mnl_observations(200, 10, 7);
        let data = ChoiceData::from_observations(&obs, &TransformSpec::default(), false, false).unwrap();
        let all = data.tally_all();
        let mut m = cnn1();
        m.params_mut()[0].data_mut()[0] = f64::NAN;
        let schedule = Schedule {
            epochs: 2,
            batch_size: None,
            ..Schedule::default()
        };
        match train(m, &data, &all, None, &schedule) {
            Err(Error::NonFiniteLoss { epoch, batch, .. }) => assert_eq!((epoch, batch), (1, 0)),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }
}
