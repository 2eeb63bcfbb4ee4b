//! The active-learning loop: train a committee, propose configurations,
//! keep the informative ones, label them and grow the dataset.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    attack_log_csv, draw_distinct, evaluate_batch, partition_function_of, run_attacks, AttackConfig,
    AttackResult, AttackSpace, AttackSpaceKind, CoordinateSpace,
};
use crate::committee::{
    fit_threshold, mean_energies, Activation, EnsemblePredictor, FeatureMap, MlpArchitecture,
    UncertaintyThreshold, VarianceKind,
};
use crate::cvgeom::{ChainTopology, CvSpace};
use crate::error::{Error, Result};
use crate::io::{candidates_to_csv, fmt_f64, write_dataset, write_text};
use crate::potentials::{
    sample_initial_dataset_with_retries, Configuration, LabeledSample, PotentialSpec, TorsionChain,
    MIN_INITIAL_SIZE,
};
use crate::rng::{derive_seed, rng_from, Rng, STREAM_GENERATION, STREAM_INIT_DATA, STREAM_RANDOM, STREAM_RUN, STREAM_SEEDS, STREAM_SELECT};
use crate::selection::{select_informative, SelectionConfig, SelectionOutcome};
use crate::trainer::{train_committee, CommitteeTraining, LossConfig, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Adversarial,
    Random,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Adversarial => "adversarial",
            Strategy::Random => "random",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    #[default]
    DoubleWell,
    /// Six-atom chain with two torsional terms; sampled through its dihedrals.
    TorsionChain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SaveCommittees {
    None,
    #[default]
    Final,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PotentialConfig {
    pub kind: PotentialKind,
    pub initial_candidates: usize,
    pub energy_cutoff: f64,
    /// Uniform sampling box, per coordinate (per dihedral for chains).
    pub bounds: Vec<[f64; 2]>,
    /// Labeled candidates above this energy are discarded.
    pub energy_ceiling: Option<f64>,
}

impl Default for PotentialConfig {
    fn default() -> Self {
        PotentialConfig {
            kind: PotentialKind::DoubleWell,
            initial_candidates: 800,
            energy_cutoff: -2.0,
            bounds: vec![[-1.5, 1.5]; 2],
            energy_ceiling: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommitteeConfig {
    pub members: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub feature_map: FeatureMap,
}

impl Default for CommitteeConfig {
    fn default() -> Self {
        CommitteeConfig {
            members: 5,
            hidden_layers: 4,
            hidden_units: 1024,
            activation: Activation::Softplus,
            feature_map: FeatureMap::Identity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Grid points per axis.
    pub resolution: usize,
    /// Grid box for coordinate-space surfaces; dihedral grids always span (−π, π].
    pub bounds: Vec<[f64; 2]>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            resolution: 100,
            bounds: vec![[-1.5, 1.5]; 2],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopConfig {
    pub generations: usize,
    pub strategy: Strategy,
    /// Half-width of the uniform displacement used by the random baseline.
    pub random_sigma: f64,
    pub seed: u64,
    pub save_committees: SaveCommittees,
    pub potential: PotentialConfig,
    pub committee: CommitteeConfig,
    pub loss: LossConfig,
    /// `train.seed` is ignored here; each generation derives its own.
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub selection: SelectionConfig,
    /// Variance behind the in-domain threshold.
    pub threshold_source: VarianceKind,
    pub eval: EvalConfig,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            generations: 6,
            strategy: Strategy::Adversarial,
            random_sigma: 1.0,
            seed: 0,
            save_committees: SaveCommittees::Final,
            potential: PotentialConfig::default(),
            committee: CommitteeConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            selection: SelectionConfig::default(),
            threshold_source: VarianceKind::ForceVariance,
            eval: EvalConfig::default(),
        }
    }
}

impl LoopConfig {
    /// Defaults for the torsion-chain demonstration: attacks act on the two
    /// dihedrals and the network sees `(sin, cos)` of every dihedral.
    pub fn torsion_demo() -> Self {
        LoopConfig {
            generations: 4,
            potential: PotentialConfig {
                kind: PotentialKind::TorsionChain,
                initial_candidates: 400,
                energy_cutoff: 2.0,
                bounds: vec![[-PI, PI]; 2],
                energy_ceiling: Some(200.0),
            },
            committee: CommitteeConfig {
                hidden_layers: 2,
                hidden_units: 64,
                feature_map: FeatureMap::SinCosAngles,
                ..CommitteeConfig::default()
            },
            train: TrainConfig {
                epochs: 300,
                batch_size: 16,
                learning_rate: 3e-3,
                ..TrainConfig::default()
            },
            attack: AttackConfig {
                kt: 20.0,
                steps: 300,
                learning_rate: 0.05,
                space: AttackSpaceKind::CollectiveVariable,
                n_seeds: 50,
                ..AttackConfig::default()
            },
            selection: SelectionConfig {
                distance_threshold: 0.05,
                distance_kind: crate::selection::DistanceKind::Rmsd,
                ..SelectionConfig::default()
            },
            eval: EvalConfig {
                resolution: 64,
                bounds: vec![[-PI, PI]; 2],
            },
            ..LoopConfig::default()
        }
    }

    pub fn architecture(&self) -> MlpArchitecture {
        let mut arch = MlpArchitecture::new(
            self.potential_spec().dim(),
            self.committee.hidden_layers,
            self.committee.hidden_units,
            self.committee.feature_map,
        );
        arch.activation = self.committee.activation;
        arch
    }

    pub fn potential_spec(&self) -> PotentialSpec {
        match self.potential.kind {
            PotentialKind::DoubleWell => PotentialSpec::DoubleWell,
            PotentialKind::TorsionChain => PotentialSpec::TorsionChain(TorsionChain::six_atom_default()),
        }
    }

    pub fn topology(&self) -> Option<ChainTopology> {
        match self.potential.kind {
            PotentialKind::DoubleWell => None,
            PotentialKind::TorsionChain => Some(ChainTopology::six_atom()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.generations < 1 {
            return Err(Error::Config("generations must be ≥ 1".into()));
        }
        if self.committee.members < 2 {
            return Err(Error::Config(format!(
                "committee.members must be ≥ 2, got {}",
                self.committee.members
            )));
        }
        if !(self.random_sigma >= 0.0 && self.random_sigma.is_finite()) {
            return Err(Error::Config("random_sigma must be ≥ 0".into()));
        }
        if self.potential.initial_candidates < 1 {
            return Err(Error::Config("potential.initial_candidates must be ≥ 1".into()));
        }
        let box_dim = match self.topology() {
            Some(t) => t.n_cvs(),
            None => self.potential_spec().dim(),
        };
        if self.potential.bounds.len() != box_dim {
            return Err(Error::Config(format!(
                "potential.bounds needs {box_dim} intervals, got {}",
                self.potential.bounds.len()
            )));
        }
        if self.eval.resolution < 2 {
            return Err(Error::Config("eval.resolution must be ≥ 2".into()));
        }
        if self.attack.space == AttackSpaceKind::CollectiveVariable && self.topology().is_none() {
            return Err(Error::Config(
                "collective-variable attacks need a chain potential".into(),
            ));
        }
        self.architecture().validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.attack.validate()?;
        self.selection.validate()?;
        Ok(())
    }

    fn attack_space(&self) -> Box<dyn AttackSpace> {
        match (self.attack.space, self.topology()) {
            (AttackSpaceKind::CollectiveVariable, Some(topology)) => Box::new(CvSpace { topology }),
            _ => Box::new(CoordinateSpace),
        }
    }
}

/// Inclusive `n`-point grid over `[lo, hi]`.
fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// `n` angles spanning (−π, π].
pub fn angle_grid(n: usize) -> Vec<f64> {
    (1..=n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect()
}

fn rms_error<E: EnsemblePredictor + ?Sized>(ens: &E, spec: &PotentialSpec, points: &[Configuration]) -> Result<f64> {
    let refs: Vec<&Configuration> = points.iter().collect();
    let predicted = mean_energies(ens, &refs)?;
    let mut total = 0.0;
    for (x, e_hat) in points.iter().zip(predicted) {
        total += (e_hat - spec.evaluate_energy(x)?).powi(2);
    }
    Ok((total / points.len() as f64).sqrt())
}

/// Committee-mean RMSE over an inclusive `resolution × resolution` grid.
pub fn grid_rmse<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    spec: &PotentialSpec,
    bounds: &[[f64; 2]],
    resolution: usize,
) -> Result<f64> {
    if spec.dim() != 2 || bounds.len() != 2 {
        return Err(Error::UnsupportedMetric(format!(
            "grid RMSE is defined for 2-D surfaces, this one has {} dimensions",
            spec.dim()
        )));
    }
    if resolution < 2 {
        return Err(Error::Config("grid resolution must be ≥ 2".into()));
    }
    let xs = linspace(bounds[0][0], bounds[0][1], resolution);
    let ys = linspace(bounds[1][0], bounds[1][1], resolution);
    let points: Vec<Configuration> = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Configuration::new(vec![x, y])))
        .collect();
    rms_error(ens, spec, &points)
}

/// Geometries on a `resolution²` dihedral grid over (−π, π]².
pub fn cv_grid(topo: &ChainTopology, resolution: usize) -> Result<Vec<Configuration>> {
    if topo.n_cvs() != 2 {
        return Err(Error::UnsupportedMetric(format!(
            "dihedral grids need exactly 2 collective variables, topology has {}",
            topo.n_cvs()
        )));
    }
    let angles = angle_grid(resolution);
    let mut out = Vec::with_capacity(resolution * resolution);
    for &psi in &angles {
        for &phi in &angles {
            out.push(topo.geometry_with_cvs(&[phi, psi])?);
        }
    }
    Ok(out)
}

/// Committee-mean RMSE over backmapped geometries on the dihedral grid.
pub fn cv_grid_rmse<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    spec: &PotentialSpec,
    topo: &ChainTopology,
    resolution: usize,
) -> Result<f64> {
    rms_error(ens, spec, &cv_grid(topo, resolution)?)
}

/// `count` distinct dataset configurations, each displaced in `space` by
/// δ ~ 𝒰(−σ, σ) per component.
pub fn random_proposals(
    data: &[LabeledSample],
    sigma: f64,
    count: usize,
    rng: &mut Rng,
    space: &dyn AttackSpace,
) -> Result<Vec<Configuration>> {
    if data.is_empty() {
        return Err(Error::Input("random proposals need a nonempty dataset".into()));
    }
    draw_distinct(data.len(), count, rng)
        .into_iter()
        .map(|i| {
            let seed = &data[i].configuration;
            let delta: Vec<f64> = (0..space.dim(seed))
                .map(|_| if sigma > 0.0 { rng.random_range(-sigma..sigma) } else { 0.0 })
                .collect();
            space.apply(seed, &delta)
        })
        .collect()
}

/// Initial chain data: uniform dihedrals inside `bounds`, kept when the
/// energy is below `cutoff`, with the same redraw policy as the coordinate
/// sampler.
pub fn sample_initial_cv_dataset(
    spec: &PotentialSpec,
    topo: &ChainTopology,
    n_candidates: usize,
    bounds: &[[f64; 2]],
    cutoff: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, bool)> {
    let mut best = Vec::new();
    for attempt in 0..=10u64 {
        let mut rng = rng_from(seed, &[STREAM_INIT_DATA, attempt]);
        let mut data = Vec::new();
        for _ in 0..n_candidates {
            let angles: Vec<f64> = bounds
                .iter()
                .map(|&[lo, hi]| if lo < hi { rng.random_range(lo..hi) } else { lo })
                .collect();
            let x = topo.geometry_with_cvs(&angles)?;
            if spec.evaluate_energy(&x)? < cutoff {
                data.push(spec.label(x)?);
            }
        }
        if data.len() >= MIN_INITIAL_SIZE {
            return Ok((data, false));
        }
        if data.len() > best.len() {
            best = data;
        }
    }
    Ok((best, true))
}

pub fn initial_dataset(cfg: &LoopConfig) -> Result<(Vec<LabeledSample>, bool)> {
    let spec = cfg.potential_spec();
    let p = &cfg.potential;
    match cfg.topology() {
        Some(topo) => sample_initial_cv_dataset(&spec, &topo, p.initial_candidates, &p.bounds, p.energy_cutoff, cfg.seed),
        None => {
            let bounds: Vec<(f64, f64)> = p.bounds.iter().map(|b| (b[0], b[1])).collect();
            sample_initial_dataset_with_retries(&spec, p.initial_candidates, &bounds, p.energy_cutoff, cfg.seed)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRecord {
    pub generation: usize,
    /// Size of the dataset the committee was trained on.
    pub n_train: usize,
    pub rmse: f64,
    pub n_proposed: usize,
    /// Samples actually added to the dataset.
    pub n_selected: usize,
    pub new_energies: Vec<f64>,
    pub median_new_energy: f64,
    pub threshold_t: f64,
    pub saturated: bool,
    pub wall_time_s: f64,
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Linear-interpolation quantile of the finite values (NaN if none).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// CSV `generation,n_train,rmse,n_proposed,n_selected,median_new_energy,threshold_t,saturated`.
pub fn records_csv(records: &[GenerationRecord]) -> String {
    let mut out = String::from("generation,n_train,rmse,n_proposed,n_selected,median_new_energy,threshold_t,saturated\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.generation,
            r.n_train,
            fmt_f64(r.rmse),
            r.n_proposed,
            r.n_selected,
            fmt_f64(r.median_new_energy),
            fmt_f64(r.threshold_t),
            r.saturated
        ));
    }
    out
}

/// Candidate configurations with their adversarial-loss scores.
pub struct Proposals {
    /// Empty for the random strategy.
    pub attacks: Vec<AttackResult>,
    pub candidates: Vec<Configuration>,
    pub scores: Vec<f64>,
}

/// The proposal phase: attacks from seeds drawn out of `data`, or random
/// displacements of dataset points, scored by the adversarial loss with Q
/// built from `data`.
pub fn propose_candidates<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    data: &[LabeledSample],
    cfg: &LoopConfig,
    seed: u64,
) -> Result<Proposals> {
    let space = cfg.attack_space();
    let ctx = partition_function_of(data, cfg.attack.kt)?;
    match cfg.strategy {
        Strategy::Adversarial => {
            let mut rng = rng_from(seed, &[STREAM_SEEDS]);
            let seeds: Vec<Configuration> = draw_distinct(data.len(), cfg.attack.n_seeds, &mut rng)
                .into_iter()
                .map(|i| data[i].configuration.clone())
                .collect();
            let attacks = run_attacks(ens, &ctx, &seeds, &cfg.attack, space.as_ref(), seed)?;
            let candidates = attacks.iter().map(|a| a.attacked.clone()).collect();
            let scores = attacks.iter().map(|a| a.loss).collect();
            Ok(Proposals {
                attacks,
                candidates,
                scores,
            })
        }
        Strategy::Random => {
            let mut rng = rng_from(seed, &[STREAM_RANDOM]);
            let candidates = random_proposals(data, cfg.random_sigma, cfg.attack.n_seeds, &mut rng, space.as_ref())?;
            let refs: Vec<&Configuration> = candidates.iter().collect();
            let scores = evaluate_batch(ens, &ctx, &refs, cfg.attack.loss_kind, false)?
                .into_iter()
                .map(|e| e.loss)
                .collect();
            Ok(Proposals {
                attacks: Vec::new(),
                candidates,
                scores,
            })
        }
    }
}

/// Selection stream for proposals made under `seed`.
pub fn selection_rng(seed: u64) -> Rng {
    rng_from(seed, &[STREAM_SELECT])
}

/// Everything one generation produced.
pub struct GenerationOutput {
    pub training: CommitteeTraining,
    pub threshold: UncertaintyThreshold,
    pub attacks: Vec<AttackResult>,
    pub candidates: Vec<Configuration>,
    pub scores: Vec<f64>,
    pub selection: SelectionOutcome,
    pub new_samples: Vec<LabeledSample>,
    pub record: GenerationRecord,
}

/// One pass of train → propose → select → label on dataset `data` (𝒟_g).
pub fn run_generation(data: &[LabeledSample], cfg: &LoopConfig, g: usize) -> Result<GenerationOutput> {
    let start = Instant::now();
    let gen_seed = derive_seed(cfg.seed, &[STREAM_GENERATION, g as u64]);
    let spec = cfg.potential_spec();
    let arch = cfg.architecture();
    let train = TrainConfig {
        seed: gen_seed,
        ..cfg.train.clone()
    };
    let training = train_committee(data, &arch, cfg.committee.members, &cfg.loss, &train)?;
    let committee = &training.committee;

    let train_set: Vec<LabeledSample> = match training.shared_train_indices() {
        Some(idx) => idx.iter().map(|&i| data[i].clone()).collect(),
        None => data.to_vec(),
    };
    let threshold = fit_threshold(
        committee,
        &train_set,
        cfg.selection.uncertainty_percentile,
        cfg.threshold_source,
    )?;
    let rmse = match cfg.topology() {
        Some(topo) => cv_grid_rmse(committee, &spec, &topo, cfg.eval.resolution)?,
        None => grid_rmse(committee, &spec, &cfg.eval.bounds, cfg.eval.resolution)?,
    };

    let Proposals {
        attacks,
        candidates,
        scores,
    } = propose_candidates(committee, data, cfg, gen_seed)?;

    let refs: Vec<&Configuration> = candidates.iter().collect();
    let mut rng = selection_rng(gen_seed);
    let selection = select_informative(&refs, &scores, committee, &threshold, &cfg.selection, &mut rng)?;
    let mut new_samples = Vec::new();
    for &i in &selection.selected {
        let s = spec.label(candidates[i].clone())?;
        if cfg.potential.energy_ceiling.is_none_or(|c| s.energy <= c) {
            new_samples.push(s);
        }
    }
    let new_energies: Vec<f64> = new_samples.iter().map(|s| s.energy).collect();
    let record = GenerationRecord {
        generation: g,
        n_train: data.len(),
        rmse,
        n_proposed: candidates.len(),
        n_selected: new_samples.len(),
        median_new_energy: median(&new_energies),
        new_energies,
        threshold_t: threshold.t,
        saturated: new_samples.is_empty(),
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok(GenerationOutput {
        training,
        threshold,
        attacks,
        candidates,
        scores,
        selection,
        new_samples,
        record,
    })
}

fn write_generation(dir: &Path, cfg: &LoopConfig, data: &[LabeledSample], out: &GenerationOutput, last: bool) -> Result<()> {
    write_dataset(&dir.join("dataset.csv"), data)?;
    write_text(&dir.join("loss_curves.csv"), &out.training.loss_curves_csv())?;
    if !out.attacks.is_empty() {
        write_text(&dir.join("attack_log.csv"), &attack_log_csv(&out.attacks))?;
    }
    let spec = cfg.potential_spec();
    let source = match cfg.strategy {
        Strategy::Adversarial => "attack",
        Strategy::Random => "random",
    };
    let labeled = out
        .candidates
        .iter()
        .map(|c| Ok((spec.label(c.clone())?, source)))
        .collect::<Result<Vec<_>>>()?;
    write_text(&dir.join("candidates.csv"), &candidates_to_csv(&labeled))?;
    write_text(&dir.join("selection.csv"), &out.selection.report_csv())?;
    let save = match cfg.save_committees {
        SaveCommittees::None => false,
        SaveCommittees::Final => last,
        SaveCommittees::All => true,
    };
    if save {
        out.training.committee.save(dir, "committee")?;
    }
    Ok(())
}

pub struct RunOutput {
    pub records: Vec<GenerationRecord>,
    pub initial_size: usize,
    /// Every redraw of the initial sampler came up short.
    pub degenerate_initial: bool,
    /// Dataset the last committee was trained on (𝒟_G).
    pub last_training_set: Vec<LabeledSample>,
    /// 𝒟_{G+1}, including the last generation's samples.
    pub final_dataset: Vec<LabeledSample>,
}

/// Runs all generations from a freshly sampled initial dataset, writing
/// per-generation artifacts and `records.csv` under `out` when given.
pub fn run_active_learning(cfg: &LoopConfig, out: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    let (mut data, degenerate_initial) = initial_dataset(cfg)?;
    let initial_size = data.len();
    let mut records = Vec::with_capacity(cfg.generations);
    let mut last_training_set = Vec::new();
    for g in 1..=cfg.generations {
        let gen = run_generation(&data, cfg, g).map_err(|e| Error::Generation {
            generation: g,
            source: Box::new(e),
        })?;
        if let Some(dir) = out {
            write_generation(&dir.join(format!("gen_{g}")), cfg, &data, &gen, g == cfg.generations)?;
        }
        records.push(gen.record);
        if let Some(dir) = out {
            write_text(&dir.join("records.csv"), &records_csv(&records))?;
        }
        if g == cfg.generations {
            last_training_set = data.clone();
        }
        data.extend(gen.new_samples);
    }
    if let Some(dir) = out {
        write_dataset(&dir.join("final_dataset.csv"), &data)?;
    }
    Ok(RunOutput {
        records,
        initial_size,
        degenerate_initial,
        last_training_set,
        final_dataset: data,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        Quartiles {
            q1: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q3: quantile(values, 0.75),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub strategy: Strategy,
    pub generation: usize,
    pub n_runs: usize,
    pub rmse: Quartiles,
    pub n_train: Quartiles,
    pub energy: Quartiles,
}

pub struct Comparison {
    /// Per strategy (adversarial, random), one entry per run index.
    pub runs: [Vec<Result<RunOutput>>; 2],
    pub summary: Vec<SummaryRow>,
    /// Random over adversarial, final generation.
    pub rmse_ratio: f64,
    pub energy_ratio: f64,
}

impl Comparison {
    pub fn completed(&self, strategy: Strategy) -> Vec<&RunOutput> {
        let k = match strategy {
            Strategy::Adversarial => 0,
            Strategy::Random => 1,
        };
        self.runs[k].iter().filter_map(|r| r.as_ref().ok()).collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "strategy,generation,n_runs,rmse_q1,rmse_median,rmse_q3,n_train_q1,n_train_median,n_train_q3,energy_q1,energy_median,energy_q3\n",
        );
        for r in &self.summary {
            let q = |q: &Quartiles| format!("{},{},{}", fmt_f64(q.q1), fmt_f64(q.median), fmt_f64(q.q3));
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.strategy.name(),
                r.generation,
                r.n_runs,
                q(&r.rmse),
                q(&r.n_train),
                q(&r.energy)
            ));
        }
        out
    }

    pub fn ratios_text(&self) -> String {
        format!(
            "rmse_ratio = {}\nenergy_ratio = {}\n# random over adversarial at the final generation; completed runs: adversarial {}, random {}\n",
            fmt_f64(self.rmse_ratio),
            fmt_f64(self.energy_ratio),
            self.completed(Strategy::Adversarial).len(),
            self.completed(Strategy::Random).len()
        )
    }
}

/// Master seed of run `r`; shared by both strategies so initial datasets pair up.
pub fn run_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, &[STREAM_RUN, r as u64])
}

fn summarize(strategy: Strategy, runs: &[&RunOutput], generations: usize) -> Vec<SummaryRow> {
    (1..=generations)
        .map(|g| {
            let recs: Vec<&GenerationRecord> = runs.iter().filter_map(|r| r.records.get(g - 1)).collect();
            SummaryRow {
                strategy,
                generation: g,
                n_runs: recs.len(),
                rmse: Quartiles::of(&recs.iter().map(|r| r.rmse).collect::<Vec<_>>()),
                n_train: Quartiles::of(&recs.iter().map(|r| r.n_train as f64).collect::<Vec<_>>()),
                energy: Quartiles::of(&recs.iter().map(|r| r.median_new_energy).collect::<Vec<_>>()),
            }
        })
        .collect()
}

/// Paired multi-run study of both strategies. Run directories go under
/// `out/<strategy>/run_<r>/`, with `summary.csv` and `ratios.txt` at the top.
pub fn compare_strategies(
    cfg_adv: &LoopConfig,
    cfg_rand: &LoopConfig,
    n_runs: usize,
    out: Option<&Path>,
) -> Result<Comparison> {
    if n_runs < 2 {
        return Err(Error::Config(format!("compare needs at least 2 runs, got {n_runs}")));
    }
    if cfg_adv.generations != cfg_rand.generations {
        return Err(Error::Config("both strategies must run the same number of generations".into()));
    }
    cfg_adv.validate()?;
    cfg_rand.validate()?;
    let jobs: Vec<(usize, usize)> = (0..2).flat_map(|k| (0..n_runs).map(move |r| (k, r))).collect();
    let mut results: Vec<((usize, usize), Result<RunOutput>)> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let base = if k == 0 { cfg_adv } else { cfg_rand };
            let strategy = if k == 0 { Strategy::Adversarial } else { Strategy::Random };
            let cfg = LoopConfig {
                strategy,
                seed: run_seed(cfg_adv.seed, r),
                ..base.clone()
            };
            let dir: Option<PathBuf> = out.map(|o| o.join(strategy.name()).join(format!("run_{r}")));
            ((k, r), run_active_learning(&cfg, dir.as_deref()))
        })
        .collect();
    results.sort_by_key(|(key, _)| *key);
    let mut runs: [Vec<Result<RunOutput>>; 2] = [Vec::new(), Vec::new()];
    for ((k, _), res) in results {
        runs[k].push(res);
    }
    let g = cfg_adv.generations;
    let done = |k: usize| -> Vec<&RunOutput> { runs[k].iter().filter_map(|r| r.as_ref().ok()).collect() };
    let mut summary = summarize(Strategy::Adversarial, &done(0), g);
    summary.extend(summarize(Strategy::Random, &done(1), g));
    let last = |s: Strategy| summary.iter().find(|r| r.strategy == s && r.generation == g).cloned();
    let (adv, rnd) = (last(Strategy::Adversarial), last(Strategy::Random));
    let (rmse_ratio, energy_ratio) = match (adv, rnd) {
        (Some(a), Some(r)) => (r.rmse.median / a.rmse.median, r.energy.median / a.energy.median),
        _ => (f64::NAN, f64::NAN),
    };
    let cmp = Comparison {
        runs,
        summary,
        rmse_ratio,
        energy_ratio,
    };
    if let Some(dir) = out {
        write_text(&dir.join("summary.csv"), &cmp.summary_csv())?;
        write_text(&dir.join("ratios.txt"), &cmp.ratios_text())?;
    }
    Ok(cmp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::committee::{Committee, ModelParameters, OracleEnsemble};
    use rand::SeedableRng;

    #[test]
    fn exact_committee_has_zero_rmse() {
        let oracle = OracleEnsemble {
            spec: PotentialSpec::DoubleWell,
            members: 3,
        };
        let r = grid_rmse(&oracle, &PotentialSpec::DoubleWell, &[[-1.5, 1.5]; 2], 100).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn zero_committee_rmse_matches_grid_oracle() {
        let arch = MlpArchitecture::new(2, 1, 4, FeatureMap::Identity);
        let zero = Committee::new(arch.clone(), vec![ModelParameters::zeros(&arch); 2]).unwrap();
        let n = 100;
        let mut ss = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -1.5 + 3.0 * i as f64 / 99.0;
                let y = -1.5 + 3.0 * j as f64 / 99.0;
                let e = 10.0 * x.powi(4) - 10.0 * x * x + 2.0 * x + 4.0 * y * y;
                ss += e * e;
            }
        }
        let want = (ss / (n * n) as f64).sqrt();
        let got = grid_rmse(&zero, &PotentialSpec::DoubleWell, &[[-1.5, 1.5]; 2], n).unwrap();
        assert!((got - want).abs() < 1e-12 * want, "{got} vs {want}");
    }

    #[test]
    fn grid_rmse_rejects_other_dimensions() {
        let spec = PotentialSpec::TorsionChain(TorsionChain::six_atom_default());
        let oracle = OracleEnsemble {
            spec: spec.clone(),
            members: 2,
        };
        assert!(matches!(
            grid_rmse(&oracle, &spec, &[[-1.0, 1.0]; 2], 10),
            Err(Error::UnsupportedMetric(_))
        ));
    }

    fn data() -> Vec<LabeledSample> {
        (0..8)
            .map(|i| {
                PotentialSpec::DoubleWell
                    .label(Configuration::new(vec![-1.5 + 0.4 * i as f64, 1.5 - 0.3 * i as f64]))
                    .unwrap()
            })
            .collect()
    }

    #[test]
    fn random_proposal_contracts() {
        let d = data();
        let p0 = random_proposals(&d, 0.0, 5, &mut Rng::seed_from_u64(1), &CoordinateSpace).unwrap();
        assert!(p0.iter().all(|p| d.iter().any(|s| s.configuration == *p)));
        let a = random_proposals(&d, 1.0, 5, &mut Rng::seed_from_u64(2), &CoordinateSpace).unwrap();
        let b = random_proposals(&d, 1.0, 5, &mut Rng::seed_from_u64(2), &CoordinateSpace).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|p| &p.coords).all(|c| (-2.5..=2.5).contains(c)));
        assert_eq!(random_proposals(&d, 1.0, 50, &mut Rng::seed_from_u64(2), &CoordinateSpace).unwrap().len(), 8);
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[1.0, 3.0]), 2.0);
        assert_eq!(median(&[3.0, f64::NAN, 1.0, 2.0]), 2.0);
        assert!(median(&[]).is_nan());
        let q = Quartiles::of(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!((q.q1, q.median, q.q3), (2.0, 3.0, 4.0));
    }

    #[test]
    fn angle_grid_is_half_open() {
        let g = angle_grid(64);
        assert_eq!(g.len(), 64);
        assert!(g[0] > -PI);
        assert_eq!(*g.last().unwrap(), PI);
    }

    #[test]
    fn default_config_is_valid() {
        LoopConfig::default().validate().unwrap();
        LoopConfig::torsion_demo().validate().unwrap();
        let bad = LoopConfig {
            committee: CommitteeConfig {
                members: 1,
                ..CommitteeConfig::default()
            },
            ..LoopConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
