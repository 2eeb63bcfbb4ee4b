//! Committees of energy regressors and their uncertainty statistics.

pub mod features;
pub mod mlp;

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use features::FeatureMap;
pub use mlp::{Activation, MlpArchitecture, ModelParameters, WeightInit};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, parse_f64, read_text, write_text};
use crate::potentials::{Configuration, LabeledSample, PotentialSpec};

/// Which committee variance drives thresholds and attacks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    #[default]
    ForceVariance,
    EnergyVariance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Committee {
    pub architecture: MlpArchitecture,
    pub members: Vec<ModelParameters>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CommitteeStats {
    pub mean_energy: f64,
    pub var_energy: f64,
    pub mean_forces: Vec<f64>,
    pub var_forces: f64,
    pub member_energies: Vec<f64>,
    pub member_forces: Vec<Vec<f64>>,
}

impl CommitteeStats {
    pub fn variance(&self, kind: VarianceKind) -> f64 {
        match kind {
            VarianceKind::ForceVariance => self.var_forces,
            VarianceKind::EnergyVariance => self.var_energy,
        }
    }
}

/// Anything producing per-member energies and forces.
pub trait EnsemblePredictor: Sync {
    fn n_members(&self) -> usize;
    fn input_dim(&self) -> usize;
    /// For each member: energies `(B)` and forces `(B × d)`.
    fn member_predictions(&self, xs: &[&Configuration]) -> Result<Vec<(Array1<f64>, Array2<f64>)>>;

    /// Per-member energies only.
    fn member_energies(&self, xs: &[&Configuration]) -> Result<Vec<Array1<f64>>> {
        Ok(self.member_predictions(xs)?.into_iter().map(|(e, _)| e).collect())
    }

    /// For each member m, rows `∂F_m/∂x (x_i) · dirs[m]_i`.
    ///
    /// The default uses central differences of the forces.
    fn member_force_jvps(&self, xs: &[&Configuration], dirs: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        let h = 1e-5;
        let forces_at = |m: usize, dir: &Array2<f64>, step: f64| -> Result<Array2<f64>> {
            let moved: Vec<Configuration> = xs
                .iter()
                .zip(dir.outer_iter())
                .map(|(x, d)| Configuration::new(x.coords.iter().zip(d).map(|(a, b)| a + step * b).collect()))
                .collect();
            let refs: Vec<&Configuration> = moved.iter().collect();
            Ok(self.member_predictions(&refs)?.swap_remove(m).1)
        };
        dirs.iter()
            .enumerate()
            .map(|(m, dir)| Ok((forces_at(m, dir, h)? - forces_at(m, dir, -h)?) / (2.0 * h)))
            .collect()
    }
}

impl EnsemblePredictor for Committee {
    fn n_members(&self) -> usize {
        self.members.len()
    }

    fn input_dim(&self) -> usize {
        self.architecture.input_dim
    }

    fn member_predictions(&self, xs: &[&Configuration]) -> Result<Vec<(Array1<f64>, Array2<f64>)>> {
        self.members
            .par_iter()
            .map(|p| mlp::energies_and_forces(p, &self.architecture, xs))
            .collect()
    }

    fn member_energies(&self, xs: &[&Configuration]) -> Result<Vec<Array1<f64>>> {
        self.members
            .par_iter()
            .map(|p| {
                let mut out = Vec::with_capacity(xs.len());
                for chunk in xs.chunks(512) {
                    let batch = mlp::featurize(&self.architecture, chunk)?;
                    out.extend(mlp::forward(p, batch.feats).energies);
                }
                Ok(Array1::from(out))
            })
            .collect()
    }

    fn member_force_jvps(&self, xs: &[&Configuration], dirs: &[Array2<f64>]) -> Result<Vec<Array2<f64>>> {
        self.members
            .par_iter()
            .zip(dirs)
            .map(|(p, d)| Ok(mlp::energies_forces_and_force_jvp(p, &self.architecture, xs, d)?.2))
            .collect()
    }
}

/// A committee whose members all equal the ground truth.
pub struct OracleEnsemble {
    pub spec: PotentialSpec,
    pub members: usize,
}

impl EnsemblePredictor for OracleEnsemble {
    fn n_members(&self) -> usize {
        self.members
    }

    fn input_dim(&self) -> usize {
        self.spec.dim()
    }

    fn member_predictions(&self, xs: &[&Configuration]) -> Result<Vec<(Array1<f64>, Array2<f64>)>> {
        let d = self.spec.dim();
        let mut e = Array1::zeros(xs.len());
        let mut f = Array2::zeros((xs.len(), d));
        for (i, x) in xs.iter().enumerate() {
            e[i] = self.spec.evaluate_energy(x)?;
            f.row_mut(i)
                .assign(&Array1::from(self.spec.evaluate_forces(x)?));
        }
        Ok(vec![(e, f); self.members])
    }
}

/// Mean as `v₀ + mean(v − v₀)`: exact for identical values.
fn shifted_mean(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let mut it = values.clone();
    let first = match it.next() {
        Some(v) => v,
        None => return f64::NAN,
    };
    let n = values.clone().count() as f64;
    first + values.map(|v| v - first).sum::<f64>() / n
}

/// Committee mean energy at every configuration.
pub fn mean_energies<E: EnsemblePredictor + ?Sized>(ens: &E, xs: &[&Configuration]) -> Result<Vec<f64>> {
    let per_member = ens.member_energies(xs)?;
    Ok((0..xs.len())
        .map(|i| shifted_mean(per_member.iter().map(|e| e[i])))
        .collect())
}

/// Mean/variance statistics from member predictions at one configuration.
pub fn stats_from_members(energies: Vec<f64>, forces: Vec<Vec<f64>>) -> CommitteeStats {
    let m = energies.len();
    let d = forces.first().map_or(0, Vec::len);
    let mean_energy = shifted_mean(energies.iter().copied());
    let var_energy = energies
        .iter()
        .map(|e| (e - mean_energy).powi(2))
        .sum::<f64>()
        / (m as f64 - 1.0);
    let mean_forces: Vec<f64> = (0..d)
        .map(|j| shifted_mean(forces.iter().map(|f| f[j])))
        .collect();
    let var_forces = forces
        .iter()
        .map(|f| {
            f.iter()
                .zip(&mean_forces)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                / d as f64
        })
        .sum::<f64>()
        / (m as f64 - 1.0);
    CommitteeStats {
        mean_energy,
        var_energy,
        mean_forces,
        var_forces,
        member_energies: energies,
        member_forces: forces,
    }
}

pub fn committee_stats_batch<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    xs: &[&Configuration],
) -> Result<Vec<CommitteeStats>> {
    if ens.n_members() < 2 {
        return Err(Error::Config(format!(
            "variance statistics need at least 2 members, committee has {}",
            ens.n_members()
        )));
    }
    let preds = ens.member_predictions(xs)?;
    Ok((0..xs.len())
        .map(|i| {
            let energies = preds.iter().map(|(e, _)| e[i]).collect();
            let forces = preds.iter().map(|(_, f)| f.row(i).to_vec()).collect();
            stats_from_members(energies, forces)
        })
        .collect())
}

pub fn committee_stats<E: EnsemblePredictor + ?Sized>(ens: &E, x: &Configuration) -> Result<CommitteeStats> {
    Ok(committee_stats_batch(ens, &[x])?.remove(0))
}

/// In-domain classifier threshold fitted on training variances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UncertaintyThreshold {
    pub t: f64,
    pub percentile: f64,
    pub source: VarianceKind,
}

/// Nearest-rank percentile: the ⌈(p/100)·N⌉-th smallest value.
pub fn nearest_rank(values: &[f64], percentile: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Input("percentile of an empty set".into()));
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::Input(format!("percentile {percentile} outside (0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((percentile * n as f64) / 100.0 - 1e-9).ceil() as usize;
    Ok(sorted[rank.clamp(1, n) - 1])
}

pub fn fit_threshold<E: EnsemblePredictor + ?Sized>(
    ens: &E,
    train: &[LabeledSample],
    percentile: f64,
    source: VarianceKind,
) -> Result<UncertaintyThreshold> {
    if train.is_empty() {
        return Err(Error::Input("cannot fit a threshold on an empty training set".into()));
    }
    let xs: Vec<&Configuration> = train.iter().map(|s| &s.configuration).collect();
    let variances: Vec<f64> = committee_stats_batch(ens, &xs)?
        .iter()
        .map(|s| s.variance(source))
        .collect();
    Ok(UncertaintyThreshold {
        t: nearest_rank(&variances, percentile)?,
        percentile,
        source,
    })
}

/// True iff the configuration counts as in-domain (`variance < t`).
pub fn classify_in_domain(variance: f64, thr: &UncertaintyThreshold) -> bool {
    variance < thr.t
}

const MODEL_MAGIC: &str = "advsamp-model v1";
const COMMITTEE_MAGIC: &str = "advsamp-committee v1";

pub fn model_to_text(params: &ModelParameters, arch: &MlpArchitecture) -> String {
    let mut out = String::new();
    out.push_str(MODEL_MAGIC);
    out.push('\n');
    out.push_str(&arch.to_line());
    out.push('\n');
    let join = |v: &mut dyn Iterator<Item = &f64>| v.map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ");
    for l in 0..params.n_layers() {
        let (w, b) = params.layer(l);
        out.push_str(&format!("W {} {}\n", w.nrows(), w.ncols()));
        for row in w.outer_iter() {
            out.push_str(&join(&mut row.iter()));
            out.push('\n');
        }
        out.push_str(&format!("b {}\n", b.len()));
        out.push_str(&join(&mut b.iter()));
        out.push('\n');
    }
    out
}

pub fn model_from_text(text: &str, path: &Path) -> Result<(MlpArchitecture, ModelParameters)> {
    let perr = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let lines: Vec<&str> = text.lines().collect();
    if lines.first().map(|l| l.trim()) != Some(MODEL_MAGIC) {
        return Err(perr(1, format!("expected `{MODEL_MAGIC}`")));
    }
    let arch = MlpArchitecture::from_line(lines.get(1).ok_or_else(|| perr(2, "missing architecture".into()))?)?;
    let mut values = Vec::with_capacity(arch.n_params());
    let mut i = 2;
    for &(rows, cols) in &arch.layer_shapes() {
        let head = lines.get(i).ok_or_else(|| perr(i + 1, "missing weight block".into()))?;
        if head.split_whitespace().collect::<Vec<_>>() != ["W", &rows.to_string(), &cols.to_string()] {
            return Err(perr(i + 1, format!("expected `W {rows} {cols}`")));
        }
        i += 1;
        for _ in 0..rows {
            let line = lines.get(i).ok_or_else(|| perr(i + 1, "truncated weights".into()))?;
            let row = line
                .split_whitespace()
                .map(|t| parse_f64(t, path, i + 1))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != cols {
                return Err(perr(i + 1, format!("expected {cols} values")));
            }
            values.extend(row);
            i += 1;
        }
        let head = lines.get(i).ok_or_else(|| perr(i + 1, "missing bias block".into()))?;
        if head.split_whitespace().collect::<Vec<_>>() != ["b", &rows.to_string()] {
            return Err(perr(i + 1, format!("expected `b {rows}`")));
        }
        i += 1;
        let line = lines.get(i).ok_or_else(|| perr(i + 1, "truncated biases".into()))?;
        let row = line
            .split_whitespace()
            .map(|t| parse_f64(t, path, i + 1))
            .collect::<Result<Vec<_>>>()?;
        if row.len() != rows {
            return Err(perr(i + 1, format!("expected {rows} values")));
        }
        values.extend(row);
        i += 1;
    }
    let params = ModelParameters::from_values(&arch, values)?;
    Ok((arch, params))
}

pub fn save_model(path: &Path, params: &ModelParameters, arch: &MlpArchitecture) -> Result<()> {
    write_text(path, &model_to_text(params, arch))
}

pub fn load_model(path: &Path) -> Result<(MlpArchitecture, ModelParameters)> {
    model_from_text(&read_text(path)?, path)
}

impl Committee {
    pub fn new(architecture: MlpArchitecture, members: Vec<ModelParameters>) -> Result<Self> {
        architecture.validate()?;
        let n = architecture.n_params();
        if members.iter().any(|m| m.values.len() != n) {
            return Err(Error::Config("committee members must share one architecture".into()));
        }
        Ok(Committee {
            architecture,
            members,
        })
    }

    /// Writes `<stem>.committee` plus one model file per member into `dir`;
    /// returns the manifest path.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<PathBuf> {
        let mut manifest = format!("{COMMITTEE_MAGIC}\n{}\n", self.architecture.to_line());
        for (m, p) in self.members.iter().enumerate() {
            let name = format!("{stem}_member_{m}.model");
            save_model(&dir.join(&name), p, &self.architecture)?;
            manifest.push_str(&name);
            manifest.push('\n');
        }
        let path = dir.join(format!("{stem}.committee"));
        write_text(&path, &manifest)?;
        Ok(path)
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = read_text(manifest)?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        if lines.first().map(|l| l.trim()) != Some(COMMITTEE_MAGIC) {
            return Err(Error::Parse {
                path: manifest.to_path_buf(),
                line: 1,
                message: format!("expected `{COMMITTEE_MAGIC}`"),
            });
        }
        let arch = MlpArchitecture::from_line(lines.get(1).copied().unwrap_or(""))?;
        let dir = manifest.parent().unwrap_or(Path::new("."));
        let mut members = Vec::new();
        for name in &lines[2..] {
            let (a, p) = load_model(&dir.join(name.trim()))?;
            if a != arch {
                return Err(Error::Input(format!(
                    "member {name} architecture differs from the manifest"
                )));
            }
            members.push(p);
        }
        Committee::new(arch, members)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand::SeedableRng;

    fn fixed(e: &[f64], f: &[Vec<f64>]) -> CommitteeStats {
        stats_from_members(e.to_vec(), f.to_vec())
    }

    #[test]
    fn two_member_reference_statistics() {
        let s = fixed(&[1.0, 3.0], &[vec![1.0, 0.0], vec![3.0, 0.0]]);
        assert_eq!(s.mean_energy, 2.0);
        assert_eq!(s.var_energy, 2.0);
        assert_eq!(s.mean_forces, vec![2.0, 0.0]);
        assert_eq!(s.var_forces, 1.0);
    }

    #[test]
    fn identical_members_have_exactly_zero_variance() {
        let e = vec![0.1 + 0.2; 5];
        let f = vec![vec![0.7, -1.3 / 3.0]; 5];
        let s = fixed(&e, &f);
        assert_eq!(s.var_energy, 0.0);
        assert_eq!(s.var_forces, 0.0);
        assert_eq!(s.mean_energy, e[0]);
    }

    #[test]
    fn single_member_committee_is_rejected() {
        let arch = MlpArchitecture::new(2, 1, 4, FeatureMap::Identity);
        let c = Committee::new(arch.clone(), vec![ModelParameters::zeros(&arch)]).unwrap();
        assert!(matches!(
            committee_stats(&c, &Configuration::new(vec![0.0, 0.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 80.0).unwrap(), 8.0);
        assert_eq!(nearest_rank(&v, 100.0).unwrap(), 10.0);
        assert_eq!(nearest_rank(&v, 0.1).unwrap(), 1.0);
        assert_eq!(nearest_rank(&[2.5; 7], 33.0).unwrap(), 2.5);
        assert!(nearest_rank(&[], 50.0).is_err());
        assert!(nearest_rank(&v, 0.0).is_err());
    }

    #[test]
    fn classifier_boundary_is_out_of_domain() {
        let thr = UncertaintyThreshold {
            t: 1.0,
            percentile: 80.0,
            source: VarianceKind::ForceVariance,
        };
        assert!(classify_in_domain(0.0, &thr));
        assert!(!classify_in_domain(1.0, &thr));
        assert!(!classify_in_domain(2.0, &thr));
    }

    #[test]
    fn identical_committee_threshold_is_zero() {
        let arch = MlpArchitecture::new(2, 2, 8, FeatureMap::Identity);
        let mut rng = Rng::seed_from_u64(5);
        let p = ModelParameters::init(&arch, &mut rng);
        let c = Committee::new(arch, vec![p; 3]).unwrap();
        let train: Vec<LabeledSample> = (0..6)
            .map(|i| {
                PotentialSpec::DoubleWell
                    .label(Configuration::new(vec![i as f64 * 0.1, -0.2]))
                    .unwrap()
            })
            .collect();
        let thr = fit_threshold(&c, &train, 80.0, VarianceKind::ForceVariance).unwrap();
        assert_eq!(thr.t, 0.0);
        assert!(fit_threshold(&c, &[], 80.0, VarianceKind::ForceVariance).is_err());
    }

    #[test]
    fn committee_files_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let arch = MlpArchitecture::new(2, 2, 8, FeatureMap::Identity);
        let mut rng = Rng::seed_from_u64(9);
        let members = (0..3).map(|_| ModelParameters::init(&arch, &mut rng)).collect();
        let c = Committee::new(arch, members).unwrap();
        let path = c.save(dir.path(), "gen_1").unwrap();
        let back = Committee::load(&path).unwrap();
        assert_eq!(back, c);
        let x = Configuration::new(vec![0.4, -0.9]);
        let a = committee_stats(&c, &x).unwrap();
        let b = committee_stats(&back, &x).unwrap();
        assert_eq!(a, b);
    }
}
