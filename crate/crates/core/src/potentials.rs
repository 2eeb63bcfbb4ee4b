//! Analytic ground-truth surfaces.
//!
//! These play the role of the expensive reference method in the active
//! learning loop: every configuration proposed by an attack (or by the
//! random baseline) is labeled here with an energy and exact forces.

use rand::Rng as _;

use crate::cvgeom::{dihedral_angle, dihedral_gradient};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng, STREAM_INIT_DATA};

/// A point in input space.
#[derive(Clone, Debug, PartialEq)]
pub struct Configuration {
    pub coords: Vec<f64>,
    /// Optional atomic numbers.
    pub species: Option<Vec<u32>>,
}

impl Configuration {
    pub fn new(coords: Vec<f64>) -> Self {
        Configuration {
            coords,
            species: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }
}

/// A configuration labeled by the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub configuration: Configuration,
    pub energy: f64,
    pub forces: Vec<f64>,
}

/// Sparse polynomial `Σ c · Π x_i^{e_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    pub dim: usize,
    pub terms: Vec<(Vec<u32>, f64)>,
}

/// `A (1 − cos(θ − θ⁰))` on one dihedral of a chain.
#[derive(Clone, Debug, PartialEq)]
pub struct TorsionTerm {
    pub atoms: [usize; 4],
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TorsionChain {
    pub n_atoms: usize,
    pub terms: Vec<TorsionTerm>,
}

impl TorsionChain {
    /// Two-torsion stand-in surface on the six-atom chain: A = (5, 3), θ⁰ = (π, π).
    pub fn six_atom_default() -> Self {
        use std::f64::consts::PI;
        TorsionChain {
            n_atoms: 6,
            terms: vec![
                TorsionTerm {
                    atoms: [0, 1, 2, 3],
                    amplitude: 5.0,
                    phase: PI,
                },
                TorsionTerm {
                    atoms: [2, 3, 4, 5],
                    amplitude: 3.0,
                    phase: PI,
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PotentialSpec {
    /// `E(x, y) = 10x⁴ − 10x² + 2x + 4y²`
    DoubleWell,
    Polynomial(Polynomial),
    TorsionChain(TorsionChain),
}

impl PotentialSpec {
    pub fn dim(&self) -> usize {
        match self {
            PotentialSpec::DoubleWell => 2,
            PotentialSpec::Polynomial(p) => p.dim,
            PotentialSpec::TorsionChain(t) => 3 * t.n_atoms,
        }
    }

    /// The double well written as a generic polynomial.
    pub fn double_well_polynomial() -> Self {
        PotentialSpec::Polynomial(Polynomial {
            dim: 2,
            terms: vec![
                (vec![4, 0], 10.0),
                (vec![2, 0], -10.0),
                (vec![1, 0], 2.0),
                (vec![0, 2], 4.0),
            ],
        })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PotentialSpec::DoubleWell => Ok(()),
            PotentialSpec::Polynomial(p) => {
                for (exps, c) in &p.terms {
                    if exps.len() != p.dim {
                        return Err(Error::Input(format!(
                            "monomial has {} exponents, polynomial dimension is {}",
                            exps.len(),
                            p.dim
                        )));
                    }
                    if !c.is_finite() {
                        return Err(Error::Input("polynomial coefficient is not finite".into()));
                    }
                }
                Ok(())
            }
            PotentialSpec::TorsionChain(t) => {
                for term in &t.terms {
                    if !(term.amplitude >= 0.0) {
                        return Err(Error::Input("torsion amplitude must be ≥ 0".into()));
                    }
                    if term.atoms.iter().any(|&a| a >= t.n_atoms) {
                        return Err(Error::Input("torsion atom index out of range".into()));
                    }
                }
                Ok(())
            }
        }
    }

    fn check(&self, x: &Configuration) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::Input(format!(
                "configuration has {} coordinates, potential expects {}",
                x.dim(),
                self.dim()
            )));
        }
        if let Some(i) = x.coords.iter().position(|c| !c.is_finite()) {
            return Err(Error::Input(format!("coordinate {i} is not finite")));
        }
        Ok(())
    }

    pub fn evaluate_energy(&self, x: &Configuration) -> Result<f64> {
        self.check(x)?;
        let c = &x.coords;
        Ok(match self {
            PotentialSpec::DoubleWell => {
                let (x, y) = (c[0], c[1]);
                let x2 = x * x;
                10.0 * x2 * x2 - 10.0 * x2 + 2.0 * x + 4.0 * y * y
            }
            PotentialSpec::Polynomial(p) => p
                .terms
                .iter()
                .map(|(exps, coef)| {
                    coef * exps
                        .iter()
                        .zip(c)
                        .map(|(&e, &v)| v.powi(e as i32))
                        .product::<f64>()
                })
                .sum(),
            PotentialSpec::TorsionChain(t) => {
                let mut e = 0.0;
                for term in &t.terms {
                    let theta = dihedral_angle(x, term.atoms)?;
                    e += term.amplitude * (1.0 - (theta - term.phase).cos());
                }
                e
            }
        })
    }

    /// Exact forces, `−∇E`.
    pub fn evaluate_forces(&self, x: &Configuration) -> Result<Vec<f64>> {
        self.check(x)?;
        let c = &x.coords;
        Ok(match self {
            PotentialSpec::DoubleWell => {
                let (x, y) = (c[0], c[1]);
                vec![-(40.0 * x * x * x - 20.0 * x + 2.0), -8.0 * y]
            }
            PotentialSpec::Polynomial(p) => {
                let mut f = vec![0.0; p.dim];
                for (exps, coef) in &p.terms {
                    for j in 0..p.dim {
                        if exps[j] == 0 {
                            continue;
                        }
                        let mut d = coef * exps[j] as f64;
                        for (i, (&e, &v)) in exps.iter().zip(c).enumerate() {
                            let e = if i == j { e - 1 } else { e };
                            d *= v.powi(e as i32);
                        }
                        f[j] -= d;
                    }
                }
                f
            }
            PotentialSpec::TorsionChain(t) => {
                let mut f = vec![0.0; c.len()];
                for term in &t.terms {
                    let theta = dihedral_angle(x, term.atoms)?;
                    let de = term.amplitude * (theta - term.phase).sin();
                    let g = dihedral_gradient(c, term.atoms)?;
                    for (slot, &a) in term.atoms.iter().enumerate() {
                        for k in 0..3 {
                            f[3 * a + k] -= de * g[slot][k];
                        }
                    }
                }
                f
            }
        })
    }

    pub fn label(&self, x: Configuration) -> Result<LabeledSample> {
        let energy = self.evaluate_energy(&x)?;
        let forces = self.evaluate_forces(&x)?;
        Ok(LabeledSample {
            configuration: x,
            energy,
            forces,
        })
    }
}

/// Draws `n_candidates` uniform points in `bounds` and keeps those with
/// energy strictly below `energy_cutoff`. May return an empty set.
pub fn sample_initial_dataset(
    spec: &PotentialSpec,
    n_candidates: usize,
    bounds: &[(f64, f64)],
    energy_cutoff: f64,
    rng: &mut Rng,
) -> Result<Vec<LabeledSample>> {
    if n_candidates == 0 {
        return Err(Error::Input("n_candidates must be positive".into()));
    }
    if bounds.len() != spec.dim() {
        return Err(Error::Input(format!(
            "{} bounds given for a {}-dimensional potential",
            bounds.len(),
            spec.dim()
        )));
    }
    if bounds
        .iter()
        .any(|&(lo, hi)| !(lo.is_finite() && hi.is_finite() && lo <= hi))
    {
        return Err(Error::Input("bounds must be finite with lo ≤ hi".into()));
    }
    let mut out = Vec::new();
    for _ in 0..n_candidates {
        let coords: Vec<f64> = bounds
            .iter()
            .map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..hi) })
            .collect();
        let x = Configuration::new(coords);
        let e = spec.evaluate_energy(&x)?;
        if e < energy_cutoff {
            out.push(spec.label(x)?);
        }
    }
    Ok(out)
}

/// Minimum size below which the initial sampler redraws.
pub const MIN_INITIAL_SIZE: usize = 10;
const MAX_REDRAWS: u64 = 10;

/// Initial dataset with redraws: if fewer than [`MIN_INITIAL_SIZE`] points
/// survive the energy filter, redraws with a fresh sub-seed up to ten times.
/// The flag reports that every attempt came up short.
pub fn sample_initial_dataset_with_retries(
    spec: &PotentialSpec,
    n_candidates: usize,
    bounds: &[(f64, f64)],
    energy_cutoff: f64,
    seed: u64,
) -> Result<(Vec<LabeledSample>, bool)> {
    let mut best = Vec::new();
    for attempt in 0..=MAX_REDRAWS {
        let mut rng = rng_from(seed, &[STREAM_INIT_DATA, attempt]);
        let data = sample_initial_dataset(spec, n_candidates, bounds, energy_cutoff, &mut rng)?;
        if data.len() >= MIN_INITIAL_SIZE {
            return Ok((data, false));
        }
        if data.len() > best.len() {
            best = data;
        }
    }
    Ok((best, true))
}
