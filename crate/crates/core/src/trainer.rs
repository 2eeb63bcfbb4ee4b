//! Fitting committee members to energies and forces with Adam.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::committee::mlp::{self, MlpArchitecture, ModelParameters, WeightInit};
use crate::committee::Committee;
use crate::error::{Error, Result};
use crate::potentials::{Configuration, LabeledSample};
use crate::rng::{rng_from, Rng, STREAM_MEMBER, STREAM_RETRY, STREAM_SPLIT};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub alpha_e: f64,
    pub alpha_f: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha_e: 1.0,
            alpha_f: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_e >= 0.0 && self.alpha_f >= 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if self.alpha_e == 0.0 && self.alpha_f == 0.0 {
            return Err(Error::Config("alpha_e and alpha_f cannot both be zero".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// (train, validation, test).
    pub split_ratios: [f64; 3],
    pub resample_splits_per_member: bool,
    pub adam: AdamConfig,
    /// Halve the learning rate after this many epochs without a new best
    /// validation loss. Off when absent.
    pub plateau_patience: Option<usize>,
    pub init: WeightInit,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 600,
            batch_size: 35,
            learning_rate: 1e-3,
            split_ratios: [0.6, 0.2, 0.2],
            resample_splits_per_member: false,
            adam: AdamConfig::default(),
            plateau_patience: None,
            init: WeightInit::FanIn,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Config("epochs and batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        let r = self.split_ratios;
        if r.iter().any(|&v| !(v >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {r:?} must be non-negative and sum to 1"
            )));
        }
        if r[0] == 0.0 {
            return Err(Error::Config("train ratio must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Random permutation cut at `floor(n·r_train)` and `floor(n·(r_train + r_val))`.
pub fn split_dataset(n: usize, ratios: [f64; 3], rng: &mut Rng) -> Result<SplitAssignment> {
    if n < 3 {
        return Err(Error::Input(format!("cannot split a dataset of {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_train = ((n as f64 * ratios[0]) + 1e-9).floor() as usize;
    let n_val = ((n as f64 * ratios[1]) + 1e-9).floor() as usize;
    if n_train == 0 {
        return Err(Error::Input(format!(
            "{n} samples leave the training partition empty"
        )));
    }
    let test = idx.split_off((n_train + n_val).min(n));
    let validation = idx.split_off(n_train);
    Ok(SplitAssignment {
        train: idx,
        validation,
        test,
    })
}

/// Mean over samples of `α_E (E − Ê)² + α_F ‖F − F̂‖²`.
pub fn batch_loss(
    predicted: &[(f64, Vec<f64>)],
    target: &[(f64, Vec<f64>)],
    cfg: &LossConfig,
) -> Result<f64> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(Error::Input(format!(
            "{} predictions for {} targets",
            predicted.len(),
            target.len()
        )));
    }
    let mut total = 0.0;
    for ((e_hat, f_hat), (e, f)) in predicted.iter().zip(target) {
        if f_hat.len() != f.len() {
            return Err(Error::Input("force dimensions differ".into()));
        }
        let fe: f64 = f.iter().zip(f_hat).map(|(a, b)| (a - b).powi(2)).sum();
        total += cfg.alpha_e * (e - e_hat).powi(2) + cfg.alpha_f * fe;
    }
    Ok(total / predicted.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: usize,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam descent step on `params`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != grads.len() {
        return Err(Error::Input("Adam shapes do not match".into()));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Training {
            epoch: 0,
            batch: state.t + 1,
            message: format!("non-finite gradient at optimizer step {}", state.t + 1),
        });
    }
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Loss of a batch under `params`, together with ∂loss/∂θ.
///
/// The force term differentiates through `F̂ = −∇ₓÊ`: with
/// `v_i = −2α_F (F̂_i − F_i)/N` it contributes `Σ_i v_i · ∇ₓÊ_i`.
pub fn loss_and_grad(
    params: &ModelParameters,
    arch: &MlpArchitecture,
    samples: &[&LabeledSample],
    loss: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    let n = samples.len() as f64;
    let xs: Vec<&Configuration> = samples.iter().map(|s| &s.configuration).collect();
    let batch = mlp::featurize(arch, &xs)?;
    let cache = mlp::forward(params, batch.feats.clone());
    let grad = mlp::input_grad(params, &cache);
    let forces = -mlp::pull_to_coords(&batch, &grad.grads[0]);

    let mut total = 0.0;
    let mut beta = Array1::zeros(samples.len());
    let mut v = Array2::zeros(forces.raw_dim());
    for (i, s) in samples.iter().enumerate() {
        let de = cache.energies[i] - s.energy;
        total += loss.alpha_e * de * de;
        beta[i] = 2.0 * loss.alpha_e * de / n;
        for (j, &f) in s.forces.iter().enumerate() {
            let df = forces[[i, j]] - f;
            total += loss.alpha_f * df * df;
            v[[i, j]] = -2.0 * loss.alpha_f * df / n;
        }
    }
    let dfeat = (loss.alpha_f != 0.0).then(|| mlp::push_to_features(&batch, &v));
    let g = mlp::param_grad(params, &cache, &grad, &beta, dfeat.as_ref());
    Ok((total / n, g))
}

/// Loss over `samples`, evaluated in chunks.
pub fn dataset_loss(
    params: &ModelParameters,
    arch: &MlpArchitecture,
    samples: &[&LabeledSample],
    loss: &LossConfig,
) -> Result<f64> {
    if samples.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for chunk in samples.chunks(256) {
        let xs: Vec<&Configuration> = chunk.iter().map(|s| &s.configuration).collect();
        let (e, f) = mlp::energies_and_forces(params, arch, &xs)?;
        let predicted: Vec<(f64, Vec<f64>)> = e.iter().copied().zip(mlp::rows(&f)).collect();
        let target: Vec<(f64, Vec<f64>)> =
            chunk.iter().map(|s| (s.energy, s.forces.clone())).collect();
        total += batch_loss(&predicted, &target, loss)? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Clone, Debug)]
pub struct MemberTraining {
    pub params: ModelParameters,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
}

/// Trains one member from a fresh initialization drawn from `rng`.
pub fn train_member(
    data: &[LabeledSample],
    split: &SplitAssignment,
    arch: &MlpArchitecture,
    loss: &LossConfig,
    cfg: &TrainConfig,
    rng: &mut Rng,
) -> Result<MemberTraining> {
    arch.validate()?;
    loss.validate()?;
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Input("empty training partition".into()));
    }
    let mut params = ModelParameters::init_with(arch, cfg.init, rng);
    let mut state = AdamState::new(params.values.len());
    let val: Vec<&LabeledSample> = split.validation.iter().map(|&i| &data[i]).collect();
    let mut order = split.train.clone();
    let mut lr = cfg.learning_rate;
    let mut best_val = f64::INFINITY;
    let mut stagnant = 0;
    let mut train_curve = Vec::with_capacity(cfg.epochs);
    let mut val_curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(rng);
        let mut epoch_total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&LabeledSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (l, g) = loss_and_grad(&params, arch, &batch, loss)?;
            if !l.is_finite() {
                return Err(Error::Training {
                    epoch,
                    batch: b + 1,
                    message: format!("non-finite loss {l}"),
                });
            }
            adam_step(&mut params.values, &g, &mut state, lr, &cfg.adam).map_err(|e| match e {
                Error::Training { message, .. } => Error::Training {
                    epoch,
                    batch: b + 1,
                    message,
                },
                other => other,
            })?;
            epoch_total += l * chunk.len() as f64;
        }
        train_curve.push(epoch_total / order.len() as f64);
        let v = dataset_loss(&params, arch, &val, loss)?;
        val_curve.push(v);
        if let Some(patience) = cfg.plateau_patience {
            if v < best_val {
                best_val = v;
                stagnant = 0;
            } else {
                stagnant += 1;
                if stagnant >= patience {
                    lr *= 0.5;
                    stagnant = 0;
                }
            }
        }
    }
    if !params.is_finite() {
        return Err(Error::Training {
            epoch: cfg.epochs,
            batch: 0,
            message: "parameters became non-finite".into(),
        });
    }
    Ok(MemberTraining {
        params,
        train_curve,
        val_curve,
    })
}

#[derive(Clone, Debug)]
pub struct CommitteeTraining {
    pub committee: Committee,
    pub members: Vec<MemberTraining>,
    /// One split per member (identical entries unless splits are resampled).
    pub splits: Vec<SplitAssignment>,
}

impl CommitteeTraining {
    /// Training indices shared by all members, or `None` when each member
    /// drew its own split.
    pub fn shared_train_indices(&self) -> Option<Vec<usize>> {
        let first = &self.splits[0].train;
        self.splits.iter().all(|s| &s.train == first).then(|| {
            let mut idx = first.clone();
            idx.sort_unstable();
            idx
        })
    }

    /// CSV `epoch,member,train_loss,val_loss`.
    pub fn loss_curves_csv(&self) -> String {
        let mut out = String::from("epoch,member,train_loss,val_loss\n");
        for (m, t) in self.members.iter().enumerate() {
            for (e, (tl, vl)) in t.train_curve.iter().zip(&t.val_curve).enumerate() {
                out.push_str(&format!("{},{m},{tl:e},{vl:e}\n", e + 1));
            }
        }
        out
    }
}

/// Trains `m` members, each from its own sub-seed of `cfg.seed`.
///
/// A member whose loss diverges is retrained once from a fresh sub-seed.
pub fn train_committee(
    data: &[LabeledSample],
    arch: &MlpArchitecture,
    m: usize,
    loss: &LossConfig,
    cfg: &TrainConfig,
) -> Result<CommitteeTraining> {
    if m < 2 {
        return Err(Error::Config(format!("a committee needs at least 2 members, got {m}")));
    }
    arch.validate()?;
    loss.validate()?;
    cfg.validate()?;
    let splits: Vec<SplitAssignment> = if cfg.resample_splits_per_member {
        (0..m as u64)
            .map(|k| split_dataset(data.len(), cfg.split_ratios, &mut rng_from(cfg.seed, &[STREAM_SPLIT, k])))
            .collect::<Result<_>>()?
    } else {
        let s = split_dataset(data.len(), cfg.split_ratios, &mut rng_from(cfg.seed, &[STREAM_SPLIT]))?;
        vec![s; m]
    };
    let members = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from(cfg.seed, &[STREAM_MEMBER, k as u64]);
            match train_member(data, &splits[k], arch, loss, cfg, &mut rng) {
                Err(Error::Training { .. }) => {
                    let mut rng = rng_from(cfg.seed, &[STREAM_MEMBER, k as u64, STREAM_RETRY]);
                    train_member(data, &splits[k], arch, loss, cfg, &mut rng)
                }
                other => other,
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let committee = Committee::new(
        arch.clone(),
        members.iter().map(|t| t.params.clone()).collect(),
    )?;
    Ok(CommitteeTraining {
        committee,
        members,
        splits,
    })
}
