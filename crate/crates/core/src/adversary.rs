//! Boltzmann-weighted uncertainty attacks.
//!
//! An attack perturbs a seed configuration by δ and ascends
//! `L(δ) = p(X_δ) · σ²(X_δ)`, where `p = exp(−Ē/kT)/Q` uses the committee
//! mean energy and `Q` is the partition sum over the current dataset.

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::committee::{stats_from_members, CommitteeStats, EnsemblePredictor, VarianceKind};
use crate::error::{Error, Result};
use crate::potentials::{Configuration, LabeledSample};
use crate::rng::{rng_from, Rng, STREAM_ATTACK};
use crate::trainer::{adam_step, AdamConfig, AdamState};

/// Largest exponent accepted before `exp` is considered an overflow risk.
const MAX_EXPONENT: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThermoContext {
    pub q: f64,
    pub ln_q: f64,
    pub kt: f64,
}

/// `Q = Σ exp(−E_i/kT)` with a sorted, compensated sum.
pub fn partition_function(energies: &[f64], kt: f64) -> Result<ThermoContext> {
    if energies.is_empty() {
        return Err(Error::Input("partition function of an empty dataset".into()));
    }
    if !(kt > 0.0 && kt.is_finite()) {
        return Err(Error::Config(format!("kT must be positive, got {kt}")));
    }
    let mut exponents = Vec::with_capacity(energies.len());
    for &e in energies {
        let a = -e / kt;
        if !a.is_finite() || a > MAX_EXPONENT {
            return Err(Error::Numeric(format!(
                "Boltzmann factor exp({a:.3e}) overflows for energy {e}; shift energies to a higher reference"
            )));
        }
        exponents.push(a);
    }
    exponents.sort_by(f64::total_cmp);
    let (mut sum, mut comp) = (0.0_f64, 0.0_f64);
    for a in exponents {
        let t = a.exp();
        let s = sum + t;
        comp += if sum.abs() >= t.abs() { (sum - s) + t } else { (t - s) + sum };
        sum = s;
    }
    let q = sum + comp;
    if !(q > 0.0) {
        return Err(Error::Numeric(format!(
            "partition function underflows at kT = {kt}; shift energies to a lower reference"
        )));
    }
    Ok(ThermoContext {
        q,
        ln_q: q.ln(),
        kt,
    })
}

pub fn partition_function_of(data: &[LabeledSample], kt: f64) -> Result<ThermoContext> {
    partition_function(&data.iter().map(|s| s.energy).collect::<Vec<_>>(), kt)
}

/// `p = exp(−Ē/kT) / Q`, evaluated in log space.
pub fn boltzmann_probability(mean_energy: f64, ctx: &ThermoContext) -> Result<f64> {
    let a = -mean_energy / ctx.kt;
    if !a.is_finite() || a - ctx.ln_q > MAX_EXPONENT {
        return Err(Error::Numeric(format!(
            "Boltzmann probability overflows at mean energy {mean_energy}; shift energies to a higher reference"
        )));
    }
    Ok((a - ctx.ln_q).exp())
}

/// Committee statistics, probability and loss at one configuration, with the
/// coordinate gradient of the loss when requested.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub stats: CommitteeStats,
    pub p: f64,
    pub loss: f64,
    pub coord_grad: Option<Vec<f64>>,
}

/// Evaluates `p · σ²` and optionally `∇ₓ(p · σ²)` for a batch.
///
/// `∇p = (p/kT) F̄`; for the force variance
/// `∇σ²_F = 2/(d(M−1)) Σ_m (∂F_m/∂x)(F_m − F̄)`, for the energy variance
/// `∇σ²_E = −2/(M−1) Σ_m (E_m − Ē) F_m`.
pub fn evaluate_batch<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    ctx: &ThermoContext,
    xs: &[&Configuration],
    kind: VarianceKind,
    with_grad: bool,
) -> Result<Vec<Evaluation>> {
    let m = ens.n_members();
    if m < 2 {
        return Err(Error::Config(format!(
            "attacks need at least 2 committee members, got {m}"
        )));
    }
    let preds = ens.member_predictions(xs)?;
    let mut out = Vec::with_capacity(xs.len());
    for i in 0..xs.len() {
        let stats = stats_from_members(
            preds.iter().map(|(e, _)| e[i]).collect(),
            preds.iter().map(|(_, f)| f.row(i).to_vec()).collect(),
        );
        let p = boltzmann_probability(stats.mean_energy, ctx)?;
        let loss = p * stats.variance(kind);
        out.push(Evaluation {
            stats,
            p,
            loss,
            coord_grad: None,
        });
    }
    if !with_grad {
        return Ok(out);
    }
    let d = ens.input_dim();
    let scale_m = 1.0 / (m as f64 - 1.0);
    let var_grads: Vec<Vec<f64>> = match kind {
        VarianceKind::ForceVariance => {
            let dirs: Vec<Array2<f64>> = (0..m)
                .map(|k| {
                    let mut dir = preds[k].1.clone();
                    for (i, ev) in out.iter().enumerate() {
                        for j in 0..d {
                            dir[[i, j]] -= ev.stats.mean_forces[j];
                        }
                    }
                    dir
                })
                .collect();
            let jvps = ens.member_force_jvps(xs, &dirs)?;
            (0..xs.len())
                .map(|i| {
                    (0..d)
                        .map(|j| 2.0 * scale_m / d as f64 * jvps.iter().map(|a| a[[i, j]]).sum::<f64>())
                        .collect()
                })
                .collect()
        }
        VarianceKind::EnergyVariance => out
            .iter()
            .map(|ev| {
                (0..d)
                    .map(|j| {
                        -2.0 * scale_m
                            * ev.stats
                                .member_energies
                                .iter()
                                .zip(&ev.stats.member_forces)
                                .map(|(e, f)| (e - ev.stats.mean_energy) * f[j])
                                .sum::<f64>()
                    })
                    .collect()
            })
            .collect(),
    };
    for (ev, vg) in out.iter_mut().zip(var_grads) {
        let var = ev.stats.variance(kind);
        let p = ev.p;
        let g = ev
            .stats
            .mean_forces
            .iter()
            .zip(&vg)
            .map(|(f, v)| var * p / ctx.kt * f + p * v)
            .collect();
        ev.coord_grad = Some(g);
    }
    Ok(out)
}

pub fn adversarial_loss<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    ctx: &ThermoContext,
    x: &Configuration,
    kind: VarianceKind,
) -> Result<f64> {
    Ok(evaluate_batch(ens, ctx, &[x], kind, false)?[0].loss)
}

/// Where δ lives and how it maps to a configuration.
pub trait AttackSpace: Sync {
    fn dim(&self, seed: &Configuration) -> usize;
    fn apply(&self, seed: &Configuration, delta: &[f64]) -> Result<Configuration>;
    /// Converts `∇ₓL` at `apply(seed, delta)` into `∇_δ L`.
    fn pullback(&self, seed: &Configuration, delta: &[f64], coord_grad: &[f64]) -> Result<Vec<f64>>;
    fn report_cvs(&self, _x: &Configuration) -> Option<Vec<f64>> {
        None
    }
}

/// `X_δ = X + δ`.
#[derive(Clone, Copy, Debug, Default)]
pub struct CoordinateSpace;

impl AttackSpace for CoordinateSpace {
    fn dim(&self, seed: &Configuration) -> usize {
        seed.dim()
    }

    fn apply(&self, seed: &Configuration, delta: &[f64]) -> Result<Configuration> {
        if delta.len() != seed.dim() {
            return Err(Error::Input(format!(
                "δ has {} components, configuration has {}",
                delta.len(),
                seed.dim()
            )));
        }
        Ok(Configuration {
            coords: seed.coords.iter().zip(delta).map(|(a, b)| a + b).collect(),
            species: seed.species.clone(),
        })
    }

    fn pullback(&self, _seed: &Configuration, _delta: &[f64], coord_grad: &[f64]) -> Result<Vec<f64>> {
        Ok(coord_grad.to_vec())
    }
}

pub fn attack_gradient<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    ctx: &ThermoContext,
    seed: &Configuration,
    delta: &[f64],
    kind: VarianceKind,
    space: &dyn AttackSpace,
) -> Result<Vec<f64>> {
    let x = space.apply(seed, delta)?;
    let ev = evaluate_batch(ens, ctx, &[&x], kind, true)?.remove(0);
    space.pullback(seed, delta, ev.coord_grad.as_deref().expect("gradient requested"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttackSpaceKind {
    #[default]
    Coordinate,
    CollectiveVariable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Sampling temperature in energy units.
    pub kt: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub delta_init_sigma: f64,
    pub loss_kind: VarianceKind,
    pub space: AttackSpaceKind,
    pub n_seeds: usize,
    /// Literal `δ ← δ + α ∇L` updates instead of Adam.
    pub plain_ascent: bool,
    pub adam: AdamConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            kt: 5.0,
            steps: 600,
            learning_rate: 0.003,
            delta_init_sigma: 0.01,
            loss_kind: VarianceKind::ForceVariance,
            space: AttackSpaceKind::Coordinate,
            n_seeds: 20,
            plain_ascent: false,
            adam: AdamConfig::default(),
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kt > 0.0 && self.kt.is_finite()) {
            return Err(Error::Config("kt must be positive".into()));
        }
        if self.steps < 1 {
            return Err(Error::Config("attack steps must be ≥ 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("attack learning_rate must be positive".into()));
        }
        if !(self.delta_init_sigma >= 0.0 && self.delta_init_sigma.is_finite()) {
            return Err(Error::Config("delta_init_sigma must be ≥ 0".into()));
        }
        if self.n_seeds < 1 {
            return Err(Error::Config("n_seeds must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackStep {
    pub loss: f64,
    pub mean_energy: f64,
    pub var_forces: f64,
    pub p: f64,
    pub cvs: Option<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct AttackResult {
    pub seed_configuration: Configuration,
    pub delta: Vec<f64>,
    pub attacked: Configuration,
    pub loss: f64,
    pub stats: CommitteeStats,
    pub p: f64,
    /// `steps + 1` entries, the first at the initial δ.
    pub trajectory: Vec<AttackStep>,
    /// Loss was exactly zero at every step.
    pub zero_signal: bool,
}

impl AttackResult {
    pub fn losses(&self) -> Vec<f64> {
        self.trajectory.iter().map(|s| s.loss).collect()
    }
}

fn initial_delta(dim: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; dim];
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    (0..dim).map(|_| normal.sample(rng)).collect()
}

/// Runs attacks from every seed in lock-step so each step is one batched
/// committee evaluation.
pub fn attack_from_deltas<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    ctx: &ThermoContext,
    seeds: &[Configuration],
    mut deltas: Vec<Vec<f64>>,
    cfg: &AttackConfig,
    space: &dyn AttackSpace,
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    let n = seeds.len();
    let mut states: Vec<AdamState> = deltas.iter().map(|d| AdamState::new(d.len())).collect();
    let mut logs: Vec<Vec<AttackStep>> = vec![Vec::with_capacity(cfg.steps + 1); n];
    let mut last: Vec<(Configuration, Evaluation)> = Vec::new();
    for step in 0..=cfg.steps {
        let xs: Vec<Configuration> = seeds
            .iter()
            .zip(&deltas)
            .map(|(s, d)| space.apply(s, d))
            .collect::<Result<_>>()
            .map_err(|e| Error::Attack {
                step,
                message: e.to_string(),
            })?;
        let refs: Vec<&Configuration> = xs.iter().collect();
        let with_grad = step < cfg.steps;
        let evals = evaluate_batch(ens, ctx, &refs, cfg.loss_kind, with_grad)?;
        for (i, ev) in evals.iter().enumerate() {
            logs[i].push(AttackStep {
                loss: ev.loss,
                mean_energy: ev.stats.mean_energy,
                var_forces: ev.stats.var_forces,
                p: ev.p,
                cvs: space.report_cvs(&xs[i]),
            });
        }
        if !with_grad {
            last = xs.into_iter().zip(evals).collect();
            break;
        }
        for (i, ev) in evals.iter().enumerate() {
            let g = space.pullback(&seeds[i], &deltas[i], ev.coord_grad.as_deref().expect("gradient"))?;
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Attack {
                    step,
                    message: format!("non-finite gradient for seed {i}"),
                });
            }
            if cfg.plain_ascent {
                for (d, g) in deltas[i].iter_mut().zip(&g) {
                    *d += cfg.learning_rate * g;
                }
            } else {
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                adam_step(&mut deltas[i], &neg, &mut states[i], cfg.learning_rate, &cfg.adam).map_err(
                    |e| Error::Attack {
                        step,
                        message: e.to_string(),
                    },
                )?;
            }
        }
    }
    Ok(last
        .into_iter()
        .zip(logs)
        .zip(deltas)
        .zip(seeds)
        .map(|((((attacked, ev), trajectory), delta), seed)| AttackResult {
            seed_configuration: seed.clone(),
            delta,
            attacked,
            loss: ev.loss,
            zero_signal: trajectory.iter().all(|s| s.loss == 0.0),
            stats: ev.stats,
            p: ev.p,
            trajectory,
        })
        .collect())
}

/// One attack with δ⁽⁰⁾ ~ 𝒩(0, σ_δ² I) drawn from `rng`.
pub fn run_attack<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    ctx: &ThermoContext,
    seed: &Configuration,
    cfg: &AttackConfig,
    rng: &mut Rng,
    space: &dyn AttackSpace,
) -> Result<AttackResult> {
    cfg.validate()?;
    let delta = initial_delta(space.dim(seed), cfg.delta_init_sigma, rng);
    Ok(attack_from_deltas(ens, ctx, std::slice::from_ref(seed), vec![delta], cfg, space)?.remove(0))
}

/// Attacks from every seed; seed `i` draws δ⁽⁰⁾ from its own sub-stream of `base_seed`.
pub fn run_attacks<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    ctx: &ThermoContext,
    seeds: &[Configuration],
    cfg: &AttackConfig,
    space: &dyn AttackSpace,
    base_seed: u64,
) -> Result<Vec<AttackResult>> {
    cfg.validate()?;
    let deltas = seeds
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = rng_from(base_seed, &[STREAM_ATTACK, i as u64]);
            initial_delta(space.dim(s), cfg.delta_init_sigma, &mut rng)
        })
        .collect();
    attack_from_deltas(ens, ctx, seeds, deltas, cfg, space)
}

/// Picks `count` distinct indices out of `n` uniformly (all of them if `count ≥ n`),
/// returned in draw order.
pub fn draw_distinct(n: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let k = count.min(n);
    for i in 0..k {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// CSV `seed_id,step,loss,mean_energy,var_forces,p`, plus the collective
/// variables when the attack space reports them (`phi,psi` for two of them,
/// `cv1..cvK` otherwise).
pub fn attack_log_csv(results: &[AttackResult]) -> String {
    let n_cvs = results
        .first()
        .and_then(|r| r.trajectory.first())
        .and_then(|s| s.cvs.as_ref())
        .map_or(0, Vec::len);
    let mut out = String::from("seed_id,step,loss,mean_energy,var_forces,p");
    if n_cvs == 2 {
        out.push_str(",phi,psi");
    } else {
        for k in 1..=n_cvs {
            out.push_str(&format!(",cv{k}"));
        }
    }
    out.push('\n');
    for (i, r) in results.iter().enumerate() {
        for (step, s) in r.trajectory.iter().enumerate() {
            out.push_str(&format!(
                "{i},{step},{:e},{:e},{:e},{:e}",
                s.loss, s.mean_energy, s.var_forces, s.p
            ));
            for v in s.cvs.iter().flatten() {
                out.push_str(&format!(",{v:e}"));
            }
            out.push('\n');
        }
    }
    out
}
