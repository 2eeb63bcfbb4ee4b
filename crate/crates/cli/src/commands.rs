//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use advsamp::adversary::attack_log_csv;
use advsamp::alloop::{
    angle_grid, compare_strategies, cv_grid, propose_candidates, run_active_learning,
    selection_rng, Comparison, GenerationRecord, LoopConfig, Strategy, SummaryRow,
};
use advsamp::committee::{committee_stats_batch, fit_threshold, EnsemblePredictor, OracleEnsemble};
use advsamp::io::{candidates_to_csv, fmt_f64, read_dataset, read_text, write_dataset, write_text};
use advsamp::selection::select_informative;
use advsamp::trainer::train_committee;
use advsamp::{Committee, Configuration, Error, Result};

use crate::config::{from_snapshot, resolve, snapshot};
use crate::svg::{curve_panels, heatmap, Series};
use crate::Common;

pub fn exit_code(category: &str) -> u8 {
    match category {
        "config" => 2,
        "input" => 3,
        "training" => 4,
        "attack" => 5,
        "numeric" => 6,
        _ => 1,
    }
}

fn out_dir(common: &Common, command: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| {
        std::env::var_os("ADVSAMP_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("advsamp_out"))
            .join(command)
    })
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Writes `config.resolved` and a manifest before any computation.
fn write_manifest(dir: &Path, command: &str, cfg: &LoopConfig) -> Result<()> {
    write_text(&dir.join("config.resolved"), &snapshot(cfg))?;
    write_text(
        &dir.join("manifest.txt"),
        &format!(
            "tool = advsamp {}\ncommand = {command}\nseed = {}\nout = {}\nstarted_unix = {}\nconfig = config.resolved\n",
            env!("CARGO_PKG_VERSION"),
            cfg.seed,
            dir.display(),
            unix_now()
        ),
    )
}

fn finish_manifest(dir: &Path) -> Result<()> {
    let path = dir.join("manifest.txt");
    let text = read_text(&path)?;
    write_text(&path, &format!("{text}finished_unix = {}\n", unix_now()))
}

fn print_records(records: &[GenerationRecord]) {
    println!("gen  n_train  rmse          proposed  selected  median_E      t");
    for r in records {
        println!(
            "{:<4} {:<8} {:<13.6e} {:<9} {:<9} {:<13.6e} {:.4e}{}",
            r.generation,
            r.n_train,
            r.rmse,
            r.n_proposed,
            r.n_selected,
            r.median_new_energy,
            r.threshold_t,
            if r.saturated { "  saturated" } else { "" }
        );
    }
}

fn run_loop(cfg: &LoopConfig, dir: &Path, command: &str) -> Result<Vec<GenerationRecord>> {
    write_manifest(dir, command, cfg)?;
    let out = run_active_learning(cfg, Some(dir))?;
    if out.degenerate_initial {
        eprintln!(
            "warning: initial sampler kept only {} configurations after all redraws",
            out.initial_size
        );
    }
    finish_manifest(dir)?;
    print_records(&out.records);
    println!("artifacts in {}", dir.display());
    Ok(out.records)
}

pub fn run(common: &Common, replay: Option<&Path>) -> Result<()> {
    match replay {
        None => {
            let cfg = resolve(&LoopConfig::default(), common.config.as_deref(), &common.overrides)?;
            run_loop(&cfg, &out_dir(common, "run"), "run").map(|_| ())
        }
        Some(src) => {
            if common.config.is_some() || !common.overrides.is_empty() {
                return Err(Error::Config("--replay takes its config from the run directory".into()));
            }
            let cfg = from_snapshot(&read_text(&src.join("config.resolved"))?)?;
            let original = read_text(&src.join("records.csv"))?;
            let dir = common.out.clone().unwrap_or_else(|| src.join("replay"));
            run_loop(&cfg, &dir, "run --replay")?;
            if read_text(&dir.join("records.csv"))? != original {
                return Err(Error::Numeric(format!(
                    "replayed records.csv in {} differs from {}",
                    dir.display(),
                    src.display()
                )));
            }
            println!("replay: records.csv identical to {}", src.join("records.csv").display());
            Ok(())
        }
    }
}

fn series(rows: &[SummaryRow], strategy: Strategy, pick: fn(&SummaryRow) -> (f64, f64, f64)) -> Series {
    Series {
        label: strategy.name().to_string(),
        colour: match strategy {
            Strategy::Adversarial => "#c0392b",
            Strategy::Random => "#2c6fbb",
        },
        points: rows.iter().filter(|r| r.strategy == strategy).map(pick).collect(),
    }
}

fn comparison_svg(cmp: &Comparison) -> String {
    let panel = |pick: fn(&SummaryRow) -> (f64, f64, f64)| {
        vec![
            series(&cmp.summary, Strategy::Adversarial, pick),
            series(&cmp.summary, Strategy::Random, pick),
        ]
    };
    curve_panels(&[
        ("RMSE", panel(|r| (r.rmse.q1, r.rmse.median, r.rmse.q3))),
        ("training points", panel(|r| (r.n_train.q1, r.n_train.median, r.n_train.q3))),
        ("sampled energy", panel(|r| (r.energy.q1, r.energy.median, r.energy.q3))),
    ])
}

pub fn compare(common: &Common, runs: usize) -> Result<()> {
    let cfg = resolve(&LoopConfig::default(), common.config.as_deref(), &common.overrides)?;
    let dir = out_dir(common, "compare");
    let adv = LoopConfig {
        strategy: Strategy::Adversarial,
        ..cfg.clone()
    };
    let rnd = LoopConfig {
        strategy: Strategy::Random,
        ..cfg
    };
    write_manifest(&dir, "compare", &adv)?;
    let cmp = compare_strategies(&adv, &rnd, runs, Some(&dir))?;
    write_text(&dir.join("summary.svg"), &comparison_svg(&cmp))?;
    for (k, runs) in cmp.runs.iter().enumerate() {
        for (r, res) in runs.iter().enumerate() {
            if let Err(e) = res {
                eprintln!("run {r} ({}) failed [{}]: {e}", ["adversarial", "random"][k], e.category());
            }
        }
    }
    finish_manifest(&dir)?;
    print!("{}", cmp.ratios_text());
    println!("artifacts in {}", dir.display());
    Ok(())
}

pub fn attack(common: &Common, committee: &Path, data: &Path) -> Result<()> {
    let cfg = resolve(&LoopConfig::default(), common.config.as_deref(), &common.overrides)?;
    let dir = out_dir(common, "attack");
    write_manifest(&dir, "attack", &cfg)?;
    let committee = Committee::load(committee)?;
    let data = read_dataset(data)?;
    if data.is_empty() {
        return Err(Error::Input("dataset is empty".into()));
    }
    if committee.input_dim() != data[0].configuration.dim() {
        return Err(Error::Input(format!(
            "committee expects {} coordinates, dataset has {}",
            committee.input_dim(),
            data[0].configuration.dim()
        )));
    }
    let spec = cfg.potential_spec();
    let threshold = fit_threshold(&committee, &data, cfg.selection.uncertainty_percentile, cfg.threshold_source)?;
    let proposals = propose_candidates(&committee, &data, &cfg, cfg.seed)?;
    let refs: Vec<&Configuration> = proposals.candidates.iter().collect();
    let outcome = select_informative(
        &refs,
        &proposals.scores,
        &committee,
        &threshold,
        &cfg.selection,
        &mut selection_rng(cfg.seed),
    )?;
    if !proposals.attacks.is_empty() {
        write_text(&dir.join("attack_log.csv"), &attack_log_csv(&proposals.attacks))?;
    }
    let source = match cfg.strategy {
        Strategy::Adversarial => "attack",
        Strategy::Random => "random",
    };
    let labeled = proposals
        .candidates
        .iter()
        .map(|c| Ok((spec.label(c.clone())?, source)))
        .collect::<Result<Vec<_>>>()?;
    write_text(&dir.join("candidates.csv"), &candidates_to_csv(&labeled))?;
    write_text(&dir.join("selection.csv"), &outcome.report_csv())?;
    let selected: Vec<_> = outcome.selected.iter().map(|&i| labeled[i].0.clone()).collect();
    write_dataset(&dir.join("selected.csv"), &selected)?;
    finish_manifest(&dir)?;
    println!(
        "{} candidates, {} selected (t = {:.4e}); artifacts in {}",
        proposals.candidates.len(),
        selected.len(),
        threshold.t,
        dir.display()
    );
    Ok(())
}

pub fn train(common: &Common, data: &Path) -> Result<()> {
    let cfg = resolve(&LoopConfig::default(), common.config.as_deref(), &common.overrides)?;
    let dir = out_dir(common, "train");
    write_manifest(&dir, "train", &cfg)?;
    let data = read_dataset(data)?;
    let training = train_committee(&data, &cfg.architecture(), cfg.committee.members, &cfg.loss, &cfg.train)?;
    write_text(&dir.join("loss_curves.csv"), &training.loss_curves_csv())?;
    let manifest = training.committee.save(&dir, "committee")?;
    finish_manifest(&dir)?;
    for (m, t) in training.members.iter().enumerate() {
        println!(
            "member {m}: train loss {:.4e}, validation loss {:.4e}",
            t.train_curve.last().copied().unwrap_or(f64::NAN),
            t.val_curve.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!("committee saved to {}", manifest.display());
    Ok(())
}

/// Grid points, axis names and axis ranges for the configured surface.
struct EvalGrid {
    points: Vec<Configuration>,
    axes: [&'static str; 2],
    x_range: (f64, f64),
    y_range: (f64, f64),
    coords: Vec<[f64; 2]>,
}

fn eval_grid(cfg: &LoopConfig) -> Result<EvalGrid> {
    let n = cfg.eval.resolution;
    match cfg.topology() {
        Some(topo) => {
            let angles = angle_grid(n);
            let coords = angles.iter().flat_map(|&p| angles.iter().map(move |&f| [f, p])).collect();
            let r = (angles[0], angles[n - 1]);
            Ok(EvalGrid {
                points: cv_grid(&topo, n)?,
                axes: ["phi", "psi"],
                x_range: r,
                y_range: r,
                coords,
            })
        }
        None => {
            let b = &cfg.eval.bounds;
            if b.len() != 2 || cfg.potential_spec().dim() != 2 {
                return Err(Error::UnsupportedMetric("eval grids need a 2-D surface".into()));
            }
            let axis = |k: usize| -> Vec<f64> {
                (0..n).map(|i| b[k][0] + (b[k][1] - b[k][0]) * i as f64 / (n - 1) as f64).collect()
            };
            let (xs, ys) = (axis(0), axis(1));
            let coords: Vec<[f64; 2]> = ys.iter().flat_map(|&y| xs.iter().map(move |&x| [x, y])).collect();
            let points = coords.iter().map(|c| Configuration::new(c.to_vec())).collect();
            Ok(EvalGrid {
                points,
                axes: ["x", "y"],
                x_range: (b[0][0], b[0][1]),
                y_range: (b[1][0], b[1][1]),
                coords,
            })
        }
    }
}

pub fn eval(common: &Common, committee: Option<&Path>, mock_oracle: bool) -> Result<()> {
    let cfg = resolve(&LoopConfig::default(), common.config.as_deref(), &common.overrides)?;
    let dir = out_dir(common, "eval");
    write_manifest(&dir, "eval", &cfg)?;
    let spec = cfg.potential_spec();
    let ens: Box<dyn EnsemblePredictor> = match (committee, mock_oracle) {
        (_, true) => Box::new(OracleEnsemble {
            spec: spec.clone(),
            members: cfg.committee.members,
        }),
        (Some(path), false) => Box::new(Committee::load(path)?),
        (None, false) => return Err(Error::Config("eval needs --committee or --mock-oracle".into())),
    };
    let EvalGrid {
        points,
        axes,
        x_range: xr,
        y_range: yr,
        coords,
    } = eval_grid(&cfg)?;
    if ens.input_dim() != points[0].dim() {
        return Err(Error::Input(format!(
            "committee expects {} coordinates, the surface has {}",
            ens.input_dim(),
            points[0].dim()
        )));
    }
    let refs: Vec<&Configuration> = points.iter().collect();
    let stats = committee_stats_batch(ens.as_ref(), &refs)?;
    let truth = points.iter().map(|x| spec.evaluate_energy(x)).collect::<Result<Vec<f64>>>()?;
    let n = cfg.eval.resolution;
    let mut csv = format!("{},{},mean_energy,var_forces,true_energy,abs_error\n", axes[0], axes[1]);
    let (mut ss, mut max_err) = (0.0, 0.0f64);
    for ((c, s), e) in coords.iter().zip(&stats).zip(&truth) {
        let err = (s.mean_energy - e).abs();
        ss += err * err;
        max_err = max_err.max(err);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            fmt_f64(c[0]),
            fmt_f64(c[1]),
            fmt_f64(s.mean_energy),
            fmt_f64(s.var_forces),
            fmt_f64(*e),
            fmt_f64(err)
        ));
    }
    let rmse = (ss / points.len() as f64).sqrt();
    write_text(&dir.join("eval_grid.csv"), &csv)?;
    write_text(
        &dir.join("eval.txt"),
        &format!("rmse = {}\nmax_abs_error = {}\nresolution = {n}\n", fmt_f64(rmse), fmt_f64(max_err)),
    )?;
    let rows = |v: Vec<f64>| -> Vec<Vec<f64>> { v.chunks(n).map(<[f64]>::to_vec).collect() };
    let panels = [
        ("mean_energy.svg", "committee mean energy", rows(stats.iter().map(|s| s.mean_energy).collect())),
        ("force_variance.svg", "committee force variance", rows(stats.iter().map(|s| s.var_forces).collect())),
        ("ground_truth.svg", "ground-truth energy", rows(truth)),
    ];
    for (file, title, values) in panels {
        write_text(&dir.join(file), &heatmap(title, xr, yr, &values))?;
    }
    finish_manifest(&dir)?;
    println!("rmse = {rmse:.6e}, max |error| = {max_err:.6e}; artifacts in {}", dir.display());
    Ok(())
}

pub fn cv_demo(common: &Common) -> Result<()> {
    let cfg = resolve(&LoopConfig::torsion_demo(), common.config.as_deref(), &common.overrides)?;
    let dir = out_dir(common, "cv-demo");
    if let Some(topo) = cfg.topology() {
        write_text(&dir.join("topology.txt"), &topo.to_text())?;
    }
    let records = run_loop(&cfg, &dir, "cv-demo")?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        println!(
            "dihedral-grid rmse: generation 1 {:.4e}, generation {} {:.4e} (ratio {:.3})",
            first.rmse,
            last.generation,
            last.rmse,
            last.rmse / first.rmse
        );
    }
    Ok(())
}
