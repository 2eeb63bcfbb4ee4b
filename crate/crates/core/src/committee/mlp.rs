//! Dense softplus energy regressors and their derivative kernels.
//!
//! All kernels work on row batches. Besides the plain forward pass there
//! are three derivative paths, each a closed-form sweep over the layers:
//!
//! * input gradient (forces), a reverse sweep;
//! * parameter gradient of an energy/force loss, which needs the mixed
//!   derivative of the input gradient with respect to the weights. This is
//!   a reverse sweep over the forward pass *and* its tangent along the
//!   force-residual direction;
//! * input Hessian-vector products, a forward tangent of the reverse sweep.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use crate::error::{Error, Result};
use crate::potentials::Configuration;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Softplus,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        "softplus"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub hidden_units: usize,
    pub activation: Activation,
    pub feature_map: FeatureMap,
}

impl MlpArchitecture {
    pub fn new(input_dim: usize, hidden_layers: usize, hidden_units: usize, feature_map: FeatureMap) -> Self {
        MlpArchitecture {
            input_dim,
            hidden_layers,
            hidden_units,
            activation: Activation::Softplus,
            feature_map,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers > 0 && self.hidden_units < 1 {
            return Err(Error::Config("hidden_units must be ≥ 1".into()));
        }
        if self.input_dim < 1 {
            return Err(Error::Config("input_dim must be ≥ 1".into()));
        }
        self.feature_map.output_dim(self.input_dim)?;
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_map
            .output_dim(self.input_dim)
            .expect("validated architecture")
    }

    /// `(rows, cols)` of every weight matrix, output layer last.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_layers + 1);
        let mut fan_in = self.feature_dim();
        for _ in 0..self.hidden_layers {
            shapes.push((self.hidden_units, fan_in));
            fan_in = self.hidden_units;
        }
        shapes.push((1, fan_in));
        shapes
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }

    /// One-line text form: `input_dim hidden_layers hidden_units activation feature_map`.
    pub fn to_line(&self) -> String {
        format!(
            "{} {} {} {} {}",
            self.input_dim,
            self.hidden_layers,
            self.hidden_units,
            self.activation.name(),
            self.feature_map.name()
        )
    }

    pub fn from_line(line: &str) -> Result<Self> {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 5 {
            return Err(Error::Input(format!("bad architecture line `{line}`")));
        }
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| Error::Input(format!("bad architecture field `{s}`: {e}")))
        };
        if parts[3] != "softplus" {
            return Err(Error::Input(format!("unknown activation `{}`", parts[3])));
        }
        let feature_map = FeatureMap::from_name(parts[4])
            .ok_or_else(|| Error::Input(format!("unknown feature map `{}`", parts[4])))?;
        let arch = MlpArchitecture::new(num(parts[0])?, num(parts[1])?, num(parts[2])?, feature_map);
        arch.validate()?;
        Ok(arch)
    }
}

/// Flat parameter vector: for each layer, row-major weights then biases.
/// Initial weight distribution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightInit {
    /// `𝒰(−a, a)`, `a = sqrt(6/(fan_in + fan_out))`, zero biases.
    #[default]
    Glorot,
    /// Weights and biases `𝒰(−1/√fan_in, 1/√fan_in)`.
    FanIn,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParameters {
    pub values: Vec<f64>,
    shapes: Vec<(usize, usize)>,
}

impl ModelParameters {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        ModelParameters {
            values: vec![0.0; arch.n_params()],
            shapes: arch.layer_shapes(),
        }
    }

    /// Uniform `[−a, a]` weights with `a = sqrt(6/(fan_in + fan_out))`, zero biases.
    pub fn init(arch: &MlpArchitecture, rng: &mut Rng) -> Self {
        Self::init_with(arch, WeightInit::Glorot, rng)
    }

    pub fn init_with(arch: &MlpArchitecture, scheme: WeightInit, rng: &mut Rng) -> Self {
        let mut p = ModelParameters::zeros(arch);
        let mut off = 0;
        for &(rows, cols) in &p.shapes.clone() {
            let (a, b) = match scheme {
                WeightInit::Glorot => ((6.0 / (rows + cols) as f64).sqrt(), 0.0),
                WeightInit::FanIn => {
                    let a = 1.0 / (cols as f64).sqrt();
                    (a, a)
                }
            };
            for v in &mut p.values[off..off + rows * cols] {
                *v = rng.random_range(-a..a);
            }
            off += rows * cols;
            if b > 0.0 {
                for v in &mut p.values[off..off + rows] {
                    *v = rng.random_range(-b..b);
                }
            }
            off += rows;
        }
        p
    }

    pub fn from_values(arch: &MlpArchitecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.n_params() {
            return Err(Error::Input(format!(
                "{} parameters given, architecture needs {}",
                values.len(),
                arch.n_params()
            )));
        }
        Ok(ModelParameters {
            values,
            shapes: arch.layer_shapes(),
        })
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn n_layers(&self) -> usize {
        self.shapes.len()
    }

    fn offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(|(r, c)| r * c + r).sum()
    }

    pub fn layer(&self, l: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (rows, cols) = self.shapes[l];
        let off = self.offset(l);
        let w = ArrayView2::from_shape((rows, cols), &self.values[off..off + rows * cols])
            .expect("layout");
        let b = ArrayView1::from(&self.values[off + rows * cols..off + rows * cols + rows]);
        (w, b)
    }

    pub fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (rows, cols) = self.shapes[l];
        let off = self.offset(l);
        let (w, rest) = self.values[off..off + rows * cols + rows].split_at_mut(rows * cols);
        (w, rest)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[inline]
fn softplus_sigmoid(z: f64) -> (f64, f64) {
    let t = (-z.abs()).exp();
    let sp = z.max(0.0) + t.ln_1p();
    let sig = if z >= 0.0 { 1.0 / (1.0 + t) } else { t / (1.0 + t) };
    (sp, sig)
}

/// Activations kept from a forward pass.
pub struct ForwardCache {
    /// `acts[0]` are the features, `acts[l]` the output of hidden layer l.
    pub acts: Vec<Array2<f64>>,
    /// Sigmoid (softplus derivative) of each hidden pre-activation; `sig[l-1]` ↔ layer l.
    pub sig: Vec<Array2<f64>>,
    pub energies: Array1<f64>,
}

/// Reverse-sweep results: `grads[l]` is ∂E/∂acts[l] (l = 0..=L) and
/// `pre[l-1]` is ∂E/∂z_l.
pub struct InputGrad {
    pub grads: Vec<Array2<f64>>,
    pub pre: Vec<Array2<f64>>,
}

pub fn forward(params: &ModelParameters, feats: Array2<f64>) -> ForwardCache {
    let n_hidden = params.n_layers() - 1;
    let mut acts = Vec::with_capacity(n_hidden + 1);
    let mut sig = Vec::with_capacity(n_hidden);
    acts.push(feats);
    for l in 0..n_hidden {
        let (w, b) = params.layer(l);
        let mut z = acts[l].dot(&w.t());
        z += &b;
        let mut s = Array2::zeros(z.raw_dim());
        Zip::from(&mut z).and(&mut s).for_each(|z, s| {
            let (sp, sg) = softplus_sigmoid(*z);
            *z = sp;
            *s = sg;
        });
        acts.push(z);
        sig.push(s);
    }
    let (w, b) = params.layer(n_hidden);
    let energies = acts[n_hidden].dot(&w.row(0)) + b[0];
    ForwardCache {
        acts,
        sig,
        energies,
    }
}

pub fn input_grad(params: &ModelParameters, cache: &ForwardCache) -> InputGrad {
    let n_hidden = params.n_layers() - 1;
    let batch = cache.energies.len();
    let (w_out, _) = params.layer(n_hidden);
    let mut grads = vec![Array2::zeros((0, 0)); n_hidden + 1];
    let mut pre = vec![Array2::zeros((0, 0)); n_hidden];
    grads[n_hidden] = w_out
        .row(0)
        .broadcast((batch, w_out.ncols()))
        .expect("broadcast")
        .to_owned();
    for l in (1..=n_hidden).rev() {
        let e = &grads[l] * &cache.sig[l - 1];
        let (w, _) = params.layer(l - 1);
        grads[l - 1] = e.dot(&w);
        pre[l - 1] = e;
    }
    InputGrad { grads, pre }
}

/// Forward tangent along feature-space directions `dfeat` (rows):
/// returns (ż_l, ȧ_l) for every hidden layer.
fn tangent_forward(
    params: &ModelParameters,
    cache: &ForwardCache,
    dfeat: &Array2<f64>,
) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
    let n_hidden = params.n_layers() - 1;
    let mut dz = Vec::with_capacity(n_hidden);
    let mut da = Vec::with_capacity(n_hidden + 1);
    da.push(dfeat.clone());
    for l in 0..n_hidden {
        let (w, _) = params.layer(l);
        let z = da[l].dot(&w.t());
        let a = &z * &cache.sig[l];
        dz.push(z);
        da.push(a);
    }
    (dz, da)
}

/// Feature-space Hessian-vector product `H_φ · dfeat` (rows).
pub fn feature_hvp(
    params: &ModelParameters,
    cache: &ForwardCache,
    grad: &InputGrad,
    dfeat: &Array2<f64>,
) -> Array2<f64> {
    let n_hidden = params.n_layers() - 1;
    let (dz, _) = tangent_forward(params, cache, dfeat);
    let mut dg: Option<Array2<f64>> = None;
    for l in (1..=n_hidden).rev() {
        let s = &cache.sig[l - 1];
        // ė = ġ ⊙ s + g ⊙ s(1−s) ⊙ ż
        let mut de = Array2::zeros(s.raw_dim());
        Zip::from(&mut de)
            .and(s)
            .and(&grad.grads[l])
            .and(&dz[l - 1])
            .for_each(|de, &s, &g, &z| *de = g * s * (1.0 - s) * z);
        if let Some(dg) = &dg {
            de += &(dg * s);
        }
        let (w, _) = params.layer(l - 1);
        dg = Some(de.dot(&w));
    }
    // a network without hidden layers is linear in its features
    dg.unwrap_or_else(|| Array2::zeros(dfeat.raw_dim()))
}

/// Gradient with respect to the parameters of
/// `Σ_i β_i E_i + Σ_i dfeat_i · ∂E_i/∂features`.
///
/// The second term is how a force-matching loss enters: with `dfeat_i = J_i v_i`
/// it equals `Σ_i v_i · ∇_x E_i`.
pub fn param_grad(
    params: &ModelParameters,
    cache: &ForwardCache,
    grad: &InputGrad,
    beta: &Array1<f64>,
    dfeat: Option<&Array2<f64>>,
) -> Vec<f64> {
    let n_hidden = params.n_layers() - 1;
    let mut out = vec![0.0; params.values.len()];
    let tangent = dfeat.map(|d| tangent_forward(params, cache, d));

    // output layer
    {
        let off = params.offset(n_hidden);
        let (_, cols) = params.shapes[n_hidden];
        let mut gw = cache.acts[n_hidden].t().dot(beta);
        if let Some((_, da)) = &tangent {
            gw += &da[n_hidden].sum_axis(Axis(0));
        }
        out[off..off + cols].copy_from_slice(gw.as_slice().expect("contiguous"));
        out[off + cols] = beta.sum();
    }

    let (w_out, _) = params.layer(n_hidden);
    // adjoint of the primal activations of the last hidden layer
    let mut abar: Array2<f64> = beta
        .view()
        .insert_axis(Axis(1))
        .dot(&w_out.row(0).insert_axis(Axis(0)));
    for l in (1..=n_hidden).rev() {
        let s = &cache.sig[l - 1];
        let mut zbar = &abar * s;
        if let Some((dz, _)) = &tangent {
            Zip::from(&mut zbar)
                .and(s)
                .and(&grad.grads[l])
                .and(&dz[l - 1])
                .for_each(|zb, &s, &g, &z| *zb += g * z * s * (1.0 - s));
        }
        let off = params.offset(l - 1);
        let (rows, cols) = params.shapes[l - 1];
        let mut gw = zbar.t().dot(&cache.acts[l - 1]);
        if let Some((_, da)) = &tangent {
            gw += &grad.pre[l - 1].t().dot(&da[l - 1]);
        }
        out[off..off + rows * cols].copy_from_slice(gw.as_slice().expect("contiguous"));
        let gb = zbar.sum_axis(Axis(0));
        out[off + rows * cols..off + rows * cols + rows]
            .copy_from_slice(gb.as_slice().expect("contiguous"));
        if l > 1 {
            let (w, _) = params.layer(l - 1);
            abar = zbar.dot(&w);
        }
    }
    out
}

/// Features of a batch plus per-sample Jacobians (None for the identity map).
pub struct FeatureBatch {
    pub feats: Array2<f64>,
    pub jacobians: Option<Vec<Array2<f64>>>,
}

pub fn featurize(arch: &MlpArchitecture, xs: &[&Configuration]) -> Result<FeatureBatch> {
    let k = arch.feature_dim();
    let mut feats = Array2::zeros((xs.len(), k));
    let identity = arch.feature_map == FeatureMap::Identity;
    let mut jacs = Vec::new();
    for (i, x) in xs.iter().enumerate() {
        if x.dim() != arch.input_dim {
            return Err(Error::Config(format!(
                "configuration has {} coordinates, model expects {}",
                x.dim(),
                arch.input_dim
            )));
        }
        if identity {
            feats.row_mut(i).assign(&ArrayView1::from(&x.coords));
        } else {
            feats.row_mut(i).assign(&arch.feature_map.features(&x.coords)?);
            jacs.push(arch.feature_map.jacobian(&x.coords)?);
        }
    }
    Ok(FeatureBatch {
        feats,
        jacobians: (!identity).then_some(jacs),
    })
}

/// Maps feature-space row gradients to coordinate space, `J_iᵀ g_i`.
pub fn pull_to_coords(batch: &FeatureBatch, g: &Array2<f64>) -> Array2<f64> {
    match &batch.jacobians {
        None => g.clone(),
        Some(jacs) => {
            let d = jacs.first().map_or(0, |j| j.ncols());
            let mut out = Array2::zeros((g.nrows(), d));
            for (i, jac) in jacs.iter().enumerate() {
                out.row_mut(i).assign(&jac.t().dot(&g.row(i)));
            }
            out
        }
    }
}

/// Pushes coordinate-space row directions to feature space, `J_i v_i`.
pub fn push_to_features(batch: &FeatureBatch, v: &Array2<f64>) -> Array2<f64> {
    match &batch.jacobians {
        None => v.clone(),
        Some(jacs) => {
            let k = batch.feats.ncols();
            let mut out = Array2::zeros((v.nrows(), k));
            for (i, jac) in jacs.iter().enumerate() {
                out.row_mut(i).assign(&jac.dot(&v.row(i)));
            }
            out
        }
    }
}

/// Energies and forces for a batch of configurations.
pub fn energies_and_forces(
    params: &ModelParameters,
    arch: &MlpArchitecture,
    xs: &[&Configuration],
) -> Result<(Array1<f64>, Array2<f64>)> {
    let batch = featurize(arch, xs)?;
    let cache = forward(params, batch.feats.clone());
    let grad = input_grad(params, &cache);
    let forces = -pull_to_coords(&batch, &grad.grads[0]);
    Ok((cache.energies, forces))
}

/// Energies, forces and `∂F_i/∂x · dirs_i` for each row.
pub fn energies_forces_and_force_jvp(
    params: &ModelParameters,
    arch: &MlpArchitecture,
    xs: &[&Configuration],
    dirs: &Array2<f64>,
) -> Result<(Array1<f64>, Array2<f64>, Array2<f64>)> {
    let batch = featurize(arch, xs)?;
    let cache = forward(params, batch.feats.clone());
    let grad = input_grad(params, &cache);
    let forces = -pull_to_coords(&batch, &grad.grads[0]);
    let dfeat = push_to_features(&batch, dirs);
    let hg = feature_hvp(params, &cache, &grad, &dfeat);
    let mut hv = pull_to_coords(&batch, &hg);
    if batch.jacobians.is_some() {
        // second-order term of the feature map: J̇ᵀ g
        for (i, x) in xs.iter().enumerate() {
            let (_, djac) = arch
                .feature_map
                .jacobian_and_directional(&x.coords, dirs.row(i))?;
            let extra = djac.t().dot(&grad.grads[0].row(i));
            let mut row = hv.row_mut(i);
            row += &extra;
        }
    }
    Ok((cache.energies, forces, -hv))
}

pub fn predict_energy(params: &ModelParameters, arch: &MlpArchitecture, x: &Configuration) -> Result<f64> {
    let batch = featurize(arch, &[x])?;
    Ok(forward(params, batch.feats).energies[0])
}

/// `−∂Ê/∂x`.
pub fn predict_forces(params: &ModelParameters, arch: &MlpArchitecture, x: &Configuration) -> Result<Vec<f64>> {
    let (_, f) = energies_and_forces(params, arch, &[x])?;
    Ok(f.row(0).to_vec())
}

/// Rows of a `(batch × d)` array as `Vec`s.
pub fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Selects rows `[lo, hi)`.
pub fn row_block(a: &Array2<f64>, lo: usize, hi: usize) -> Array2<f64> {
    a.slice(s![lo..hi, ..]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn zero_network_predicts_zero() {
        let arch = MlpArchitecture::new(2, 3, 8, FeatureMap::Identity);
        let p = ModelParameters::zeros(&arch);
        let x = Configuration::new(vec![0.3, -1.0]);
        assert_eq!(predict_energy(&p, &arch, &x).unwrap(), 0.0);
        assert_eq!(predict_forces(&p, &arch, &x).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn single_unit_at_zero_preactivation_outputs_ln2() {
        let arch = MlpArchitecture::new(1, 1, 1, FeatureMap::Identity);
        // w1 = 0, b1 = 0 → hidden ln 2; output w = 3, b = 0.5
        let p = ModelParameters::from_values(&arch, vec![0.0, 0.0, 3.0, 0.5]).unwrap();
        let e = predict_energy(&p, &arch, &Configuration::new(vec![1.7])).unwrap();
        assert!((e - (3.0 * 2f64.ln() + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_a_config_error() {
        let arch = MlpArchitecture::new(2, 1, 4, FeatureMap::Identity);
        let p = ModelParameters::zeros(&arch);
        assert!(matches!(
            predict_energy(&p, &arch, &Configuration::new(vec![1.0, 2.0, 3.0])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn init_respects_glorot_bound_and_zero_biases() {
        let arch = MlpArchitecture::new(2, 2, 16, FeatureMap::Identity);
        let mut rng = Rng::seed_from_u64(1);
        let p = ModelParameters::init(&arch, &mut rng);
        for l in 0..p.n_layers() {
            let (w, b) = p.layer(l);
            let a = (6.0 / (w.nrows() + w.ncols()) as f64).sqrt();
            assert!(w.iter().all(|v| v.abs() <= a));
            assert!(b.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn architecture_line_round_trip() {
        let arch = MlpArchitecture::new(18, 4, 64, FeatureMap::PairwiseDistances);
        assert_eq!(MlpArchitecture::from_line(&arch.to_line()).unwrap(), arch);
        assert!(MlpArchitecture::from_line("2 1 0 softplus identity").is_err());
        assert!(MlpArchitecture::from_line("2 0 0 softplus identity").is_ok());
    }
}
