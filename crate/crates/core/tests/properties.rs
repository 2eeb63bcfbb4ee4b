//! Randomized invariants across modules.

use std::f64::consts::PI;

use advsamp::adversary::{attack_gradient, evaluate_batch, partition_function, CoordinateSpace};
use advsamp::committee::{committee_stats, FeatureMap, UncertaintyThreshold};
use advsamp::cvgeom::{build_chain, cv_backmap, dihedral_angle, wrap_angle, ChainTopology};
use advsamp::potentials::TorsionChain;
use advsamp::rng::Rng;
use advsamp::selection::{select_informative, SelectionConfig};
use advsamp::{Committee, Configuration, MlpArchitecture, ModelParameters, PotentialSpec, VarianceKind};
use proptest::prelude::*;
use rand::SeedableRng;

fn committee(seed: u64, members: usize) -> Committee {
    let arch = MlpArchitecture::new(2, 2, 8, FeatureMap::Identity);
    let mut rng = Rng::seed_from_u64(seed);
    let ms = (0..members).map(|_| ModelParameters::init(&arch, &mut rng)).collect();
    Committee::new(arch, ms).unwrap()
}

fn points() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec([-1.5f64..1.5, -1.5f64..1.5], 1..40)
}

fn configs(p: &[[f64; 2]]) -> Vec<Configuration> {
    p.iter().map(|c| Configuration::new(c.to_vec())).collect()
}

fn dist(a: &Configuration, b: &Configuration) -> f64 {
    a.coords.iter().zip(&b.coords).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selection_outputs_are_filtered_capped_and_stable(
        pts in points(),
        seed in 0u64..1000,
        thr in 0.01f64..0.5,
        t_frac in 0.0f64..1.0,
        max_new in 1usize..15,
    ) {
        let c = committee(seed, 3);
        let cands = configs(&pts);
        let refs: Vec<&Configuration> = cands.iter().collect();
        let scores: Vec<f64> = (0..cands.len()).map(|i| ((i * 7919) % 13) as f64).collect();
        let variances: Vec<f64> = cands.iter().map(|x| committee_stats(&c, x).unwrap().var_forces).collect();
        let vmax = variances.iter().cloned().fold(0.0, f64::max);
        let t = UncertaintyThreshold { t: t_frac * vmax, percentile: 80.0, source: VarianceKind::ForceVariance };
        let cfg = SelectionConfig { distance_threshold: thr, max_new, ..SelectionConfig::default() };
        let out = select_informative(&refs, &scores, &c, &t, &cfg, &mut Rng::seed_from_u64(seed)).unwrap();

        prop_assert!(out.selected.len() <= max_new);
        prop_assert!(out.selected.windows(2).all(|w| w[0] < w[1]));
        for &i in &out.selected {
            prop_assert!(variances[i] >= t.t);
        }
        for (a, &i) in out.selected.iter().enumerate() {
            for &j in &out.selected[a + 1..] {
                prop_assert!(dist(&cands[i], &cands[j]) >= thr);
            }
        }

        let again: Vec<&Configuration> = out.selected.iter().map(|&i| &cands[i]).collect();
        let again_scores: Vec<f64> = out.selected.iter().map(|&i| scores[i]).collect();
        let second = select_informative(&again, &again_scores, &c, &t, &cfg, &mut Rng::seed_from_u64(seed + 1)).unwrap();
        prop_assert_eq!(second.selected, (0..again.len()).collect::<Vec<_>>());
    }

    #[test]
    fn identical_members_have_zero_spread(x in -1.5f64..1.5, y in -1.5f64..1.5, seed in 0u64..1000) {
        let base = committee(seed, 1);
        let c = Committee::new(base.architecture.clone(), vec![base.members[0].clone(); 4]).unwrap();
        let pt = Configuration::new(vec![x, y]);
        let s = committee_stats(&c, &pt).unwrap();
        prop_assert_eq!(s.var_energy, 0.0);
        prop_assert_eq!(s.var_forces, 0.0);
        let ctx = partition_function(&[s.mean_energy, 0.5], 5.0).unwrap();
        for kind in [VarianceKind::ForceVariance, VarianceKind::EnergyVariance] {
            let g = attack_gradient(&c, &ctx, &pt, &[0.0, 0.0], kind, &CoordinateSpace).unwrap();
            prop_assert!(g.iter().all(|&v| v == 0.0), "{:?}", g);
        }
    }

    #[test]
    fn adversarial_loss_is_invariant_to_energy_shifts(
        pts in prop::collection::vec([-1.5f64..1.5, -1.5f64..1.5], 2..20),
        data_e in prop::collection::vec(-5.0f64..5.0, 1..20),
        shift in -50.0f64..50.0,
        seed in 0u64..1000,
    ) {
        let c = committee(seed, 3);
        let mut shifted = c.clone();
        for m in &mut shifted.members {
            let n = m.values.len();
            m.values[n - 1] += shift;
        }
        let cands = configs(&pts);
        let refs: Vec<&Configuration> = cands.iter().collect();
        let moved: Vec<f64> = data_e.iter().map(|e| e + shift).collect();
        let ctx0 = partition_function(&data_e, 5.0).unwrap();
        let ctx1 = partition_function(&moved, 5.0).unwrap();
        for kind in [VarianceKind::ForceVariance, VarianceKind::EnergyVariance] {
            let a = evaluate_batch(&c, &ctx0, &refs, kind, false).unwrap();
            let b = evaluate_batch(&shifted, &ctx1, &refs, kind, false).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u.loss - v.loss).abs() <= 1e-12 * u.loss.abs().max(1e-300) + 1e-300,
                    "{} vs {}", u.loss, v.loss);
            }
        }
    }
}

#[test]
fn large_temperature_ranks_by_variance_alone() {
    let c = committee(5, 4);
    let mut rng = Rng::seed_from_u64(6);
    let cands: Vec<Configuration> = (0..100)
        .map(|_| {
            use rand::Rng as _;
            Configuration::new(vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])
        })
        .collect();
    let refs: Vec<&Configuration> = cands.iter().collect();
    let ctx = partition_function(&[0.0, 1.0, 2.0], 1e9).unwrap();
    for kind in [VarianceKind::ForceVariance, VarianceKind::EnergyVariance] {
        let ev = evaluate_batch(&c, &ctx, &refs, kind, false).unwrap();
        let argmax = |v: Vec<f64>| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        let by_loss = argmax(ev.iter().map(|e| e.loss).collect());
        let by_var = argmax(ev.iter().map(|e| e.stats.variance(kind)).collect());
        assert_eq!(by_loss, by_var);
    }
}

fn random_chain(rng: &mut Rng) -> Configuration {
    use rand::Rng as _;
    let t: Vec<f64> = (0..3).map(|_| rng.random_range(-PI..PI)).collect();
    build_chain(6, 1.5, 109.5, &t).unwrap()
}

fn pair_distances(c: &[f64], atoms: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for (a, &i) in atoms.iter().enumerate() {
        for &j in &atoms[a + 1..] {
            out.push((0..3).map(|k| (c[3 * i + k] - c[3 * j + k]).powi(2)).sum::<f64>().sqrt());
        }
    }
    out
}

#[test]
fn backmap_increments_dihedrals_exactly_and_keeps_fragments_rigid() {
    use rand::Rng as _;
    let topo = ChainTopology::six_atom();
    let mut rng = Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let x = random_chain(&mut rng);
        let delta = [rng.random_range(-2.0 * PI..2.0 * PI), rng.random_range(-2.0 * PI..2.0 * PI)];
        let y = cv_backmap(&x, &topo, &delta).unwrap();
        for (k, d) in topo.dihedrals.iter().enumerate() {
            let before = dihedral_angle(&x, d.atoms).unwrap();
            let after = dihedral_angle(&y, d.atoms).unwrap();
            let diff = wrap_angle(after - wrap_angle(before + delta[k]));
            assert!(diff.abs() < 1e-10, "dihedral {k}: {diff:e}");
        }
        for fragment in [vec![0, 1, 2], vec![1, 2, 3, 4], vec![3, 4, 5]] {
            let a = pair_distances(&x.coords, &fragment);
            let b = pair_distances(&y.coords, &fragment);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-10);
            }
        }
        let bonds: Vec<f64> = (0..5).map(|i| pair_distances(&y.coords, &[i, i + 1])[0]).collect();
        assert!(bonds.iter().all(|b| (b - 1.5).abs() < 1e-10));
    }
}

#[test]
fn torsion_oracle_loss_is_periodic_in_dihedral_space() {
    use rand::Rng as _;
    let topo = ChainTopology::six_atom();
    let spec = PotentialSpec::TorsionChain(TorsionChain::six_atom_default());
    let arch = MlpArchitecture::new(topo.dim(), 2, 8, FeatureMap::SinCosAngles);
    let mut rng = Rng::seed_from_u64(22);
    let ms = (0..3).map(|_| ModelParameters::init(&arch, &mut rng)).collect();
    let c = Committee::new(arch, ms).unwrap();
    let ctx = partition_function(&[0.0, 1.0], 20.0).unwrap();
    for _ in 0..200 {
        let x = random_chain(&mut rng);
        let delta = [rng.random_range(-PI..PI), rng.random_range(-PI..PI)];
        let k = rng.random_range(0..2);
        let mut wrapped = delta;
        wrapped[k] += 2.0 * PI;
        let a = cv_backmap(&x, &topo, &delta).unwrap();
        let b = cv_backmap(&x, &topo, &wrapped).unwrap();
        let la = evaluate_batch(&c, &ctx, &[&a], VarianceKind::ForceVariance, false).unwrap()[0].loss;
        let lb = evaluate_batch(&c, &ctx, &[&b], VarianceKind::ForceVariance, false).unwrap()[0].loss;
        assert!((la - lb).abs() < 1e-10 * la.abs().max(1.0), "{la} vs {lb}");
        let ea = spec.evaluate_energy(&a).unwrap();
        let eb = spec.evaluate_energy(&b).unwrap();
        assert!((ea - eb).abs() < 1e-10 * ea.abs().max(1.0));
    }
}
