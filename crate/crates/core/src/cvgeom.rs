//! Dihedral collective variables on linear chains.
//!
//! Provides signed dihedral measurement, rigid rotation of the downstream
//! part of a chain about a bond axis, and the sequential backmapping that
//! realizes a displacement in dihedral space on a Cartesian geometry. All
//! geometry is generic over [`Real`] so the same code yields values and
//! exact derivatives.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::adversary::AttackSpace;
use crate::dual::{seed_unit, Dual, Real};
use crate::error::{Error, Result};
use crate::potentials::Configuration;

const COLLINEAR_TOL: f64 = 1e-10;

/// One rotatable dihedral: four consecutive chain atoms plus the atoms that
/// move rigidly when the central bond is rotated.
#[derive(Clone, Debug, PartialEq)]
pub struct RotatableDihedral {
    pub atoms: [usize; 4],
    pub downstream: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChainTopology {
    pub n_atoms: usize,
    pub bond_length: f64,
    /// Bond angle in degrees.
    pub bond_angle: f64,
    pub dihedrals: Vec<RotatableDihedral>,
}

impl ChainTopology {
    /// Linear chain whose rotatable dihedrals start at the given atoms.
    pub fn linear(
        n_atoms: usize,
        bond_length: f64,
        bond_angle: f64,
        dihedral_starts: &[usize],
    ) -> Result<Self> {
        let dihedrals = dihedral_starts
            .iter()
            .map(|&s| RotatableDihedral {
                atoms: [s, s + 1, s + 2, s + 3],
                downstream: (s + 3..n_atoms).collect(),
            })
            .collect();
        let topo = ChainTopology {
            n_atoms,
            bond_length,
            bond_angle,
            dihedrals,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// The six-atom, two-torsion toy chain (atoms 1-2-3-4 and 3-4-5-6).
    pub fn six_atom() -> Self {
        ChainTopology::linear(6, 1.5, 109.5, &[0, 2]).expect("valid built-in topology")
    }

    pub fn n_cvs(&self) -> usize {
        self.dihedrals.len()
    }

    pub fn dim(&self) -> usize {
        3 * self.n_atoms
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms < 4 {
            return Err(Error::Input("a chain needs at least 4 atoms".into()));
        }
        if !(self.bond_length > 0.0 && self.bond_length.is_finite()) {
            return Err(Error::Input("bond length must be positive".into()));
        }
        if !(self.bond_angle > 0.0 && self.bond_angle < 180.0) {
            return Err(Error::Input("bond angle must lie in (0, 180) degrees".into()));
        }
        for (k, d) in self.dihedrals.iter().enumerate() {
            let s = d.atoms[0];
            if d.atoms != [s, s + 1, s + 2, s + 3] || d.atoms[3] >= self.n_atoms {
                return Err(Error::Input(format!(
                    "dihedral {k} must be four consecutive chain atoms"
                )));
            }
            let expected: Vec<usize> = (s + 3..self.n_atoms).collect();
            if d.downstream != expected {
                return Err(Error::Input(format!(
                    "dihedral {k} downstream set must be atoms after the rotation bond"
                )));
            }
        }
        Ok(())
    }

    /// Planar all-trans zigzag; every consecutive dihedral equals π.
    pub fn reference_geometry(&self) -> Configuration {
        let half = self.bond_angle.to_radians() / 2.0;
        let dx = self.bond_length * half.sin();
        let dy = self.bond_length * half.cos();
        let mut coords = Vec::with_capacity(self.dim());
        for i in 0..self.n_atoms {
            coords.extend_from_slice(&[i as f64 * dx, if i % 2 == 1 { dy } else { 0.0 }, 0.0]);
        }
        Configuration::new(coords)
    }

    /// Geometry with the rotatable dihedrals set to `angles`, built from
    /// the reference zigzag.
    pub fn geometry_with_cvs(&self, angles: &[f64]) -> Result<Configuration> {
        let reference = self.reference_geometry();
        let current = self.measure_cvs(&reference)?;
        let delta: Vec<f64> = angles.iter().zip(&current).map(|(a, c)| a - c).collect();
        cv_backmap(&reference, self, &delta)
    }

    /// Current values of the rotatable dihedrals, wrapped to (−π, π].
    pub fn measure_cvs(&self, x: &Configuration) -> Result<Vec<f64>> {
        self.dihedrals
            .iter()
            .map(|d| dihedral_angle(x, d.atoms))
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "atoms = {}", self.n_atoms).unwrap();
        writeln!(s, "bond_length = {}", self.bond_length).unwrap();
        writeln!(s, "bond_angle = {}", self.bond_angle).unwrap();
        for d in &self.dihedrals {
            let [a, b, c, e] = d.atoms;
            writeln!(s, "dihedral = {a} {b} {c} {e}").unwrap();
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (mut n, mut bond, mut angle) = (None, None, None);
        let mut starts = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(i + 1, "expected `key = value`".into()))?;
            let value = value.trim();
            match key.trim() {
                "atoms" => n = Some(value.parse::<usize>().map_err(|e| err(i + 1, e.to_string()))?),
                "bond_length" => {
                    bond = Some(value.parse::<f64>().map_err(|e| err(i + 1, e.to_string()))?)
                }
                "bond_angle" => {
                    angle = Some(value.parse::<f64>().map_err(|e| err(i + 1, e.to_string()))?)
                }
                "dihedral" => {
                    let idx: Vec<usize> = value
                        .split_whitespace()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| err(i + 1, e.to_string()))?;
                    if idx.len() != 4 {
                        return Err(err(i + 1, "dihedral needs 4 atom indices".into()));
                    }
                    if idx[1] != idx[0] + 1 || idx[2] != idx[0] + 2 || idx[3] != idx[0] + 3 {
                        return Err(err(i + 1, "dihedral atoms must be consecutive".into()));
                    }
                    starts.push(idx[0]);
                }
                other => return Err(err(i + 1, format!("unknown key `{other}`"))),
            }
        }
        let n = n.ok_or_else(|| err(0, "missing `atoms`".into()))?;
        let bond = bond.ok_or_else(|| err(0, "missing `bond_length`".into()))?;
        let angle = angle.ok_or_else(|| err(0, "missing `bond_angle`".into()))?;
        ChainTopology::linear(n, bond, angle, &starts)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        ChainTopology::parse(&text, path)
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a % (2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    } else if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

type Vec3<T> = [T; 3];

#[inline]
fn sub<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn cross<T: Real>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn atom<T: Real>(coords: &[T], i: usize) -> Vec3<T> {
    [coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]]
}

/// Signed dihedral of four points, unwrapped output of `atan2` (in [−π, π]).
pub fn dihedral_of<T: Real>(p: [Vec3<T>; 4]) -> Result<T> {
    let b1 = sub(p[1], p[0]);
    let b2 = sub(p[2], p[1]);
    let b3 = sub(p[3], p[2]);
    let m = cross(b1, b2);
    let n = cross(b2, b3);
    if dot(m, m).value().sqrt() < COLLINEAR_TOL || dot(n, n).value().sqrt() < COLLINEAR_TOL {
        return Err(Error::Geometry("collinear atoms in dihedral".into()));
    }
    let y = dot(b1, n) * dot(b2, b2).sqrt();
    let x = dot(m, n);
    Ok(y.atan2(x))
}

/// Sine and cosine of a dihedral without going through an angle.
pub fn dihedral_sin_cos<T: Real>(p: [Vec3<T>; 4]) -> Result<(T, T)> {
    let b1 = sub(p[1], p[0]);
    let b2 = sub(p[2], p[1]);
    let b3 = sub(p[3], p[2]);
    let m = cross(b1, b2);
    let n = cross(b2, b3);
    let mm = dot(m, m);
    let nn = dot(n, n);
    if mm.value().sqrt() < COLLINEAR_TOL || nn.value().sqrt() < COLLINEAR_TOL {
        return Err(Error::Geometry("collinear atoms in dihedral".into()));
    }
    let norm = (mm * nn).sqrt();
    let y = dot(b1, n) * dot(b2, b2).sqrt();
    Ok((y / norm, dot(m, n) / norm))
}

fn quad<T: Real>(coords: &[T], q: [usize; 4]) -> Result<[Vec3<T>; 4]> {
    if q.iter().any(|&i| 3 * i + 2 >= coords.len()) {
        return Err(Error::Input(format!(
            "dihedral atoms {q:?} out of range for {} coordinates",
            coords.len()
        )));
    }
    Ok([
        atom(coords, q[0]),
        atom(coords, q[1]),
        atom(coords, q[2]),
        atom(coords, q[3]),
    ])
}

/// Signed dihedral in (−π, π].
pub fn dihedral_angle(x: &Configuration, q: [usize; 4]) -> Result<f64> {
    let phi = dihedral_of(quad(&x.coords, q)?)?;
    Ok(if phi <= -PI { phi + 2.0 * PI } else { phi })
}

/// Closed-form gradient of the dihedral with respect to its four atoms.
pub fn dihedral_gradient(coords: &[f64], q: [usize; 4]) -> Result<[Vec3<f64>; 4]> {
    let p = quad(coords, q)?;
    let b1 = sub(p[1], p[0]);
    let b2 = sub(p[2], p[1]);
    let b3 = sub(p[3], p[2]);
    let m = cross(b1, b2);
    let n = cross(b2, b3);
    let mm = dot(m, m);
    let nn = dot(n, n);
    if mm.sqrt() < COLLINEAR_TOL || nn.sqrt() < COLLINEAR_TOL {
        return Err(Error::Geometry("collinear atoms in dihedral".into()));
    }
    let b2n2 = dot(b2, b2);
    let b2n = b2n2.sqrt();
    let g1 = m.map(|c| -b2n / mm * c);
    let g4 = n.map(|c| b2n / nn * c);
    let f1 = dot(b1, b2) / b2n2;
    let f3 = dot(b3, b2) / b2n2;
    let mut g2 = [0.0; 3];
    let mut g3 = [0.0; 3];
    for k in 0..3 {
        g2[k] = -(1.0 + f1) * g1[k] + f3 * g4[k];
        g3[k] = -(g1[k] + g2[k] + g4[k]);
    }
    Ok([g1, g2, g3, g4])
}

/// Rotates the downstream atoms of dihedral `k` about its central bond.
pub fn rotate_dihedral<T: Real>(
    coords: &[T],
    topo: &ChainTopology,
    k: usize,
    delta: T,
) -> Result<Vec<T>> {
    let dih = topo
        .dihedrals
        .get(k)
        .ok_or_else(|| Error::Input(format!("no dihedral with index {k}")))?;
    if coords.len() != topo.dim() {
        return Err(Error::Input(format!(
            "configuration has {} coordinates, topology expects {}",
            coords.len(),
            topo.dim()
        )));
    }
    let b = atom(coords, dih.atoms[1]);
    let c = atom(coords, dih.atoms[2]);
    let axis = sub(c, b);
    let len = dot(axis, axis).sqrt();
    if len.value() < COLLINEAR_TOL {
        return Err(Error::Geometry("zero-length rotation bond".into()));
    }
    let u = axis.map(|a| a / len);
    let (s, co) = (delta.sin(), delta.cos());
    let one_minus = T::cst(1.0) - co;
    let mut out = coords.to_vec();
    for &i in &dih.downstream {
        let r = sub(atom(coords, i), c);
        let ur = cross(u, r);
        let along = dot(u, r) * one_minus;
        for j in 0..3 {
            // p + ((cos δ − 1) r + sin δ (u × r) + (1 − cos δ)(u·r) u); exact identity at δ = 0
            let disp = -(one_minus * r[j]) + s * ur[j] + along * u[j];
            out[3 * i + j] = coords[3 * i + j] + disp;
        }
    }
    Ok(out)
}

/// Applies the dihedral displacements in ascending order.
pub fn cv_backmap_generic<T: Real>(coords: &[T], topo: &ChainTopology, delta: &[T]) -> Result<Vec<T>> {
    if delta.len() != topo.n_cvs() {
        return Err(Error::Input(format!(
            "delta has {} components, topology has {} dihedrals",
            delta.len(),
            topo.n_cvs()
        )));
    }
    let mut x = coords.to_vec();
    for (k, &d) in delta.iter().enumerate() {
        x = rotate_dihedral(&x, topo, k, d)?;
    }
    Ok(x)
}

pub fn cv_backmap(seed: &Configuration, topo: &ChainTopology, delta: &[f64]) -> Result<Configuration> {
    let coords = cv_backmap_generic(&seed.coords, topo, delta)?;
    Ok(Configuration {
        coords,
        species: seed.species.clone(),
    })
}

/// ∂coords/∂delta as a (3n × K) matrix.
pub fn backmap_jacobian(seed: &Configuration, topo: &ChainTopology, delta: &[f64]) -> Result<Array2<f64>> {
    let dim = topo.dim();
    let mut jac = Array2::zeros((dim, delta.len()));
    let base: Vec<Dual<f64>> = seed.coords.iter().map(|&c| Dual::constant(c)).collect();
    for k in 0..delta.len() {
        let d = seed_unit(delta, k);
        let out = cv_backmap_generic(&base, topo, &d)?;
        for (i, v) in out.iter().enumerate() {
            jac[[i, k]] = v.eps;
        }
    }
    Ok(jac)
}

/// Attack adapter optimizing displacements of the rotatable dihedrals.
#[derive(Clone, Debug)]
pub struct CvSpace {
    pub topology: ChainTopology,
}

impl AttackSpace for CvSpace {
    fn dim(&self, _seed: &Configuration) -> usize {
        self.topology.n_cvs()
    }

    fn apply(&self, seed: &Configuration, delta: &[f64]) -> Result<Configuration> {
        cv_backmap(seed, &self.topology, delta)
    }

    fn pullback(&self, seed: &Configuration, delta: &[f64], coord_grad: &[f64]) -> Result<Vec<f64>> {
        let jac = backmap_jacobian(seed, &self.topology, delta)?;
        Ok((0..delta.len())
            .map(|k| jac.column(k).iter().zip(coord_grad).map(|(a, b)| a * b).sum())
            .collect())
    }

    fn report_cvs(&self, x: &Configuration) -> Option<Vec<f64>> {
        self.topology.measure_cvs(x).ok()
    }
}

/// Places a chain atom from its three predecessors (natural extension
/// reference frame construction).
fn place_atom(a: Vec3<f64>, b: Vec3<f64>, c: Vec3<f64>, bond: f64, angle: f64, torsion: f64) -> Vec3<f64> {
    let bc = sub(c, b);
    let bcn = bc.map(|v| v / dot(bc, bc).sqrt());
    let nv = cross(sub(b, a), bcn);
    let nvn = nv.map(|v| v / dot(nv, nv).sqrt());
    let mv = cross(nvn, bcn);
    let d2 = [
        -bond * angle.cos(),
        bond * angle.sin() * torsion.cos(),
        bond * angle.sin() * torsion.sin(),
    ];
    let mut d = c;
    for k in 0..3 {
        d[k] += d2[0] * bcn[k] + d2[1] * mv[k] + d2[2] * nvn[k];
    }
    d
}

/// Chain of `n` atoms with the given consecutive dihedrals (length n − 3).
pub fn build_chain(n: usize, bond: f64, angle_deg: f64, torsions: &[f64]) -> Result<Configuration> {
    if n < 3 || torsions.len() + 3 != n {
        return Err(Error::Input("need n ≥ 3 atoms and n − 3 torsions".into()));
    }
    let theta = angle_deg.to_radians();
    let mut atoms: Vec<Vec3<f64>> = vec![
        [0.0, 0.0, 0.0],
        [bond, 0.0, 0.0],
        [bond - bond * theta.cos(), bond * theta.sin(), 0.0],
    ];
    for &t in torsions {
        let k = atoms.len();
        let next = place_atom(atoms[k - 3], atoms[k - 2], atoms[k - 1], bond, theta, t);
        atoms.push(next);
    }
    Ok(Configuration::new(atoms.into_iter().flatten().collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(points: &[[f64; 3]]) -> Configuration {
        Configuration::new(points.iter().flatten().copied().collect())
    }

    #[test]
    fn cis_and_trans_reference_values() {
        let cis = cfg(&[[0., 1., 0.], [0., 0., 0.], [1., 0., 0.], [1., 1., 0.]]);
        assert_eq!(dihedral_angle(&cis, [0, 1, 2, 3]).unwrap(), 0.0);
        let trans = cfg(&[[0., 1., 0.], [0., 0., 0.], [1., 0., 0.], [1., -1., 0.]]);
        assert!((dihedral_angle(&trans, [0, 1, 2, 3]).unwrap() - PI).abs() < 1e-15);
    }

    #[test]
    fn mirror_negates_dihedral() {
        let x = cfg(&[[0.3, 1., 0.2], [0., 0., 0.], [1., 0., 0.], [1.4, 0.5, 0.8]]);
        let mirrored = Configuration::new(
            x.coords
                .chunks(3)
                .flat_map(|p| [p[0], p[1], -p[2]])
                .collect(),
        );
        let a = dihedral_angle(&x, [0, 1, 2, 3]).unwrap();
        let b = dihedral_angle(&mirrored, [0, 1, 2, 3]).unwrap();
        assert!((a + b).abs() < 1e-14);
    }

    #[test]
    fn collinear_triple_is_rejected() {
        let x = cfg(&[[0., 0., 0.], [1., 0., 0.], [2., 0., 0.], [2., 1., 0.]]);
        assert!(matches!(
            dihedral_angle(&x, [0, 1, 2, 3]),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn half_turn_maps_cis_to_trans() {
        let topo = ChainTopology::linear(4, 1.0, 90.0, &[0]).unwrap();
        let cis = cfg(&[[0., 1., 0.], [0., 0., 0.], [1., 0., 0.], [1., 1., 0.]]);
        let out = rotate_dihedral(&cis.coords, &topo, 0, PI).unwrap();
        let expected = [1.0, -1.0, 0.0];
        for k in 0..3 {
            assert!((out[9 + k] - expected[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_rotation_is_bitwise_identity() {
        let topo = ChainTopology::six_atom();
        let x = build_chain(6, 1.5, 109.5, &[0.3, -2.0, 1.1]).unwrap();
        let out = rotate_dihedral(&x.coords, &topo, 0, 0.0).unwrap();
        assert_eq!(out, x.coords);
        let back = cv_backmap(&x, &topo, &[0.0, 0.0]).unwrap();
        assert_eq!(back.coords, x.coords);
    }

    #[test]
    fn full_turn_is_periodic() {
        let topo = ChainTopology::six_atom();
        let x = build_chain(6, 1.5, 109.5, &[0.3, -2.0, 1.1]).unwrap();
        let out = rotate_dihedral(&x.coords, &topo, 1, 2.0 * PI).unwrap();
        for (a, b) in out.iter().zip(&x.coords) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn build_chain_realizes_requested_torsions() {
        let t = [0.7, -2.9, 1.9];
        let x = build_chain(6, 1.5, 109.5, &t).unwrap();
        for (s, &want) in t.iter().enumerate() {
            let got = dihedral_angle(&x, [s, s + 1, s + 2, s + 3]).unwrap();
            assert!((wrap_angle(got - want)).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn half_turn_on_first_dihedral_leaves_second_alone() {
        let topo = ChainTopology::six_atom();
        let x = topo.reference_geometry();
        let before = topo.measure_cvs(&x).unwrap();
        let y = cv_backmap(&x, &topo, &[PI, 0.0]).unwrap();
        let after = topo.measure_cvs(&y).unwrap();
        assert!(wrap_angle(after[0] - before[0] - PI).abs() < 1e-10);
        assert!(wrap_angle(after[1] - before[1]).abs() < 1e-10);
    }

    #[test]
    fn dihedral_gradient_matches_dual_numbers() {
        let x = build_chain(4, 1.2, 100.0, &[1.1]).unwrap();
        let g = dihedral_gradient(&x.coords, [0, 1, 2, 3]).unwrap();
        for j in 0..12 {
            let d = seed_unit(&x.coords, j);
            let phi = dihedral_of(quad(&d, [0, 1, 2, 3]).unwrap()).unwrap();
            assert!((phi.eps - g[j / 3][j % 3]).abs() < 1e-12, "{j}: {} vs {}", phi.eps, g[j / 3][j % 3]);
        }
    }

    #[test]
    fn topology_text_round_trip() {
        let topo = ChainTopology::six_atom();
        let parsed = ChainTopology::parse(&topo.to_text(), Path::new("mem")).unwrap();
        assert_eq!(parsed, topo);
        assert!(ChainTopology::parse("atoms = 6\nbogus = 1\n", Path::new("mem")).is_err());
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
    }
}
