use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::cvgeom::dihedral_sin_cos;
use crate::dual::{Dual, Real};
use crate::error::{Error, Result};

/// Input featurization applied before the first dense layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMap {
    Identity,
    /// All n(n−1)/2 interatomic distances, pairs in lexicographic order.
    PairwiseDistances,
    /// `(sin θ, cos θ)` for every consecutive-atom dihedral of a chain.
    SinCosAngles,
}

impl FeatureMap {
    pub fn name(&self) -> &'static str {
        match self {
            FeatureMap::Identity => "identity",
            FeatureMap::PairwiseDistances => "pairwise_distances",
            FeatureMap::SinCosAngles => "sin_cos_angles",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(FeatureMap::Identity),
            "pairwise_distances" => Some(FeatureMap::PairwiseDistances),
            "sin_cos_angles" => Some(FeatureMap::SinCosAngles),
            _ => None,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> Result<usize> {
        match self {
            FeatureMap::Identity => Ok(input_dim),
            FeatureMap::PairwiseDistances | FeatureMap::SinCosAngles => {
                if !input_dim.is_multiple_of(3) {
                    return Err(Error::Config(format!(
                        "{} needs 3n coordinates, got {input_dim}",
                        self.name()
                    )));
                }
                let n = input_dim / 3;
                match self {
                    FeatureMap::PairwiseDistances if n >= 2 => Ok(n * (n - 1) / 2),
                    FeatureMap::SinCosAngles if n >= 4 => Ok(2 * (n - 3)),
                    _ => Err(Error::Config(format!(
                        "{} needs more atoms than {n}",
                        self.name()
                    ))),
                }
            }
        }
    }

    /// Generic evaluation; used with duals for derivatives.
    pub fn eval<T: Real>(&self, x: &[T]) -> Result<Vec<T>> {
        match self {
            FeatureMap::Identity => Ok(x.to_vec()),
            FeatureMap::PairwiseDistances => {
                let n = x.len() / 3;
                let mut out = Vec::with_capacity(n * (n - 1) / 2);
                for i in 0..n {
                    for j in i + 1..n {
                        let mut s = T::zero();
                        for k in 0..3 {
                            let d = x[3 * i + k] - x[3 * j + k];
                            s += d * d;
                        }
                        if s.value() <= 0.0 {
                            return Err(Error::Geometry(format!("atoms {i} and {j} coincide")));
                        }
                        out.push(s.sqrt());
                    }
                }
                Ok(out)
            }
            FeatureMap::SinCosAngles => {
                let n = x.len() / 3;
                let at = |i: usize| [x[3 * i], x[3 * i + 1], x[3 * i + 2]];
                let mut out = Vec::with_capacity(2 * (n - 3));
                for s in 0..n - 3 {
                    let (sin, cos) = dihedral_sin_cos([at(s), at(s + 1), at(s + 2), at(s + 3)])?;
                    out.push(sin);
                    out.push(cos);
                }
                Ok(out)
            }
        }
    }

    pub fn features(&self, x: &[f64]) -> Result<Array1<f64>> {
        Ok(Array1::from(self.eval(x)?))
    }

    /// (k × d) Jacobian of the features.
    pub fn jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        let d = x.len();
        let k = self.output_dim(d)?;
        let mut jac = Array2::zeros((k, d));
        for j in 0..d {
            let xs: Vec<Dual<f64>> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| Dual::new(v, if i == j { 1.0 } else { 0.0 }))
                .collect();
            for (r, f) in self.eval(&xs)?.iter().enumerate() {
                jac[[r, j]] = f.eps;
            }
        }
        Ok(jac)
    }

    /// Jacobian and its directional derivative along `v`.
    pub fn jacobian_and_directional(
        &self,
        x: &[f64],
        v: ArrayView1<'_, f64>,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let d = x.len();
        let k = self.output_dim(d)?;
        let mut jac = Array2::zeros((k, d));
        let mut djac = Array2::zeros((k, d));
        for j in 0..d {
            let xs: Vec<Dual<Dual<f64>>> = x
                .iter()
                .enumerate()
                .map(|(i, &val)| {
                    Dual::new(
                        Dual::new(val, if i == j { 1.0 } else { 0.0 }),
                        Dual::new(v[i], 0.0),
                    )
                })
                .collect();
            for (r, f) in self.eval(&xs)?.iter().enumerate() {
                jac[[r, j]] = f.re.eps;
                djac[[r, j]] = f.eps.eps;
            }
        }
        Ok((jac, djac))
    }
}
