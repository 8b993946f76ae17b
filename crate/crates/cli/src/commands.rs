//! Subcommand implementations. Each takes a merged [`RunConfig`], fills in
//! defaults so the manifest records exactly what ran, and returns a JSON
//! report for stdout.

use std::path::{Path, PathBuf};

use hsmrf::calibration::{calibrate_with_alpha, classic_skyline, default_theta1_prior, Calibration, DEFAULT_ALPHA};
use hsmrf::coalescent::CoalescentLikelihood;
use hsmrf::evaluate::{log_bayes_factors, metrics, model_probabilities, steppingstone, FitSummary, Metrics};
use hsmrf::field_priors::{FieldModel, ModelKind};
use hsmrf::genealogy::Genealogy;
use hsmrf::grid::{build_grid, choose_boundary, choose_cell_count, grid_for_genealogy, partition, Grid};
use hsmrf::samplers::{run_chain, Diagnostics, PosteriorChain};
use hsmrf::simulate::{Scenario, Trajectory};
use hsmrf::study::{run_study, simulate_replicate_tree, StudyConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{RunConfig, DEFAULT_ALPHA_T, DEFAULT_BETA_SHAPE, DEFAULT_STONES};
use crate::error::{CliError, CliResult};
use crate::io;

pub const VERSION: &str = env!("HSMRF_BUILD_VERSION");
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize)]
struct Manifest<'a> {
    manifest_version: u32,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    config: &'a RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid: Option<&'a Grid>,
    outputs: Vec<String>,
}

fn write_manifest(out: &Path, command: &str, cfg: &RunConfig, grid: Option<&Grid>, outputs: &[PathBuf]) -> CliResult<PathBuf> {
    let path = out.join("manifest.json");
    let manifest = Manifest {
        manifest_version: MANIFEST_VERSION,
        version: VERSION,
        command,
        seed: cfg.seed,
        config: cfg,
        grid,
        outputs: io::display(outputs),
    };
    io::write_json(&path, &manifest)?;
    Ok(path)
}

/// A fixed tree on its resolved grid.
struct Prepared {
    genealogy: Genealogy,
    grid: Grid,
    lik: CoalescentLikelihood,
    mu: f64,
    sigma: f64,
}

fn prepare(cfg: &mut RunConfig) -> CliResult<Prepared> {
    let (tree, dates) = cfg.require_tree()?;
    let (_, g) = io::read_tree(tree, dates)?;
    let cells = match cfg.cells {
        Some(h) => h,
        None => *cfg.cells.insert(choose_cell_count(g.sample_size())?),
    };
    if cfg.boundary.is_none() {
        if let Some(median) = cfg.tmrca_median {
            let ci = cfg
                .tmrca_ci()?
                .ok_or_else(|| CliError::usage("tmrca_median needs tmrca_ci"))?;
            let alpha_t = *cfg.alpha_t.get_or_insert(DEFAULT_ALPHA_T);
            cfg.boundary = Some(choose_boundary(median, ci, alpha_t)?);
        }
    }
    let grid = match cfg.boundary {
        Some(t) => build_grid(cells, t, Some(g.tmrca()))?,
        None => grid_for_genealogy(cells, &g)?,
    };
    let part = partition(&g, &grid)?;
    let (mu_d, sigma_d) = default_theta1_prior(&g)?;
    let mu = *cfg.mu.get_or_insert(mu_d);
    let sigma = *cfg.sigma.get_or_insert(sigma_d);
    Ok(Prepared {
        lik: CoalescentLikelihood::new(&part),
        genealogy: g,
        grid,
        mu,
        sigma,
    })
}

/// `zeta` from the config, or calibrated on the tree.
fn resolve_zeta(cfg: &mut RunConfig, p: &Prepared, kind: ModelKind) -> CliResult<(f64, Option<Calibration>)> {
    if let Some(z) = cfg.zeta {
        return Ok((z, None));
    }
    let alpha = *cfg.alpha.get_or_insert(DEFAULT_ALPHA);
    let model = FieldModel::new(kind, p.mu, p.sigma, 1.0)?;
    let c = calibrate_with_alpha(&p.genealogy, &model, p.grid.cell_count(), alpha)?;
    Ok((c.zeta, Some(c)))
}

#[derive(Serialize)]
struct FitReport<'a> {
    model: ModelKind,
    cells: usize,
    mu: f64,
    sigma: f64,
    zeta: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<Calibration>,
    draws: usize,
    #[serde(flatten)]
    summary: &'a FitSummary,
    diagnostics: Diagnostics,
}

pub fn fit(mut cfg: RunConfig, out: &Path) -> CliResult<Value> {
    let p = prepare(&mut cfg)?;
    let kind = cfg.model();
    let (zeta, calibration) = resolve_zeta(&mut cfg, &p, kind)?;
    cfg.zeta = Some(zeta);
    let chain_cfg = cfg.chain()?;
    let truth = match cfg.truth.as_deref() {
        None => None,
        Some([t]) => Some(io::read_truth(t)?),
        Some(_) => return Err(CliError::usage("fit takes a single truth file")),
    };
    if let Some(t) = &truth {
        if t.len() != p.grid.cell_count() {
            return Err(CliError::usage(format!(
                "truth has {} cells but the grid has {}",
                t.len(),
                p.grid.cell_count()
            )));
        }
    }

    let model = FieldModel::new(kind, p.mu, p.sigma, zeta)?;
    let chains = run_chain(&model, &p.lik, &chain_cfg)?;
    let post = PosteriorChain::pool(&chains)?;
    let summary = metrics(&post, truth.as_deref())?;

    io::ensure_dir(out)?;
    let posterior_path = out.join("posterior.csv");
    io::write_posterior(&posterior_path, &post, zeta, chain_cfg.n_burnin, chain_cfg.thin)?;
    let summary_path = out.join("summary.json");
    let report = FitReport {
        model: kind,
        cells: p.grid.cell_count(),
        mu: p.mu,
        sigma: p.sigma,
        zeta,
        calibration,
        draws: post.len(),
        summary: &summary,
        diagnostics: post.diagnostics,
    };
    io::write_json(&summary_path, &report)?;
    let outputs = vec![posterior_path, summary_path];
    let manifest = write_manifest(out, "fit", &cfg, Some(&p.grid), &outputs)?;
    Ok(json!({
        "command": "fit",
        "model": kind,
        "zeta": zeta,
        "metrics": summary.metrics,
        "outputs": io::display(&[outputs, vec![manifest]].concat()),
    }))
}

pub fn calibrate(mut cfg: RunConfig) -> CliResult<Value> {
    cfg.zeta = None;
    let p = prepare(&mut cfg)?;
    let kind = cfg.model();
    let (_, c) = resolve_zeta(&mut cfg, &p, kind)?;
    let c = c.expect("calibrated");
    Ok(json!({
        "model": kind,
        "cells": p.grid.cell_count(),
        "alpha": cfg.alpha,
        "U": c.upper,
        "sigma_ref": c.sigma_ref,
        "zeta": c.zeta,
    }))
}

pub fn skyline(mut cfg: RunConfig, out: &Path) -> CliResult<Value> {
    let (tree, dates) = cfg.require_tree()?;
    let (_, g) = io::read_tree(tree, dates)?;
    let sky = classic_skyline(&g)?;
    io::ensure_dir(out)?;
    let path = out.join("skyline.csv");
    let mut w = io::writer(&path)?;
    w.write_record(["start", "end", "estimate", "log_estimate"])?;
    for iv in &sky.intervals {
        w.write_record([iv.start, iv.end, iv.estimate, iv.estimate.ln()].map(|x| x.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))?;
    cfg.seed = None;
    let manifest = write_manifest(out, "skyline", &cfg, None, std::slice::from_ref(&path))?;
    Ok(json!({
        "command": "skyline",
        "intervals": sky.intervals.len(),
        "outputs": io::display(&[path, manifest]),
    }))
}

/// Resolves the scenario-based study design, filling defaults into `cfg`.
fn study_config(cfg: &mut RunConfig) -> CliResult<StudyConfig> {
    let scenario = *cfg.scenario.get_or_insert(Scenario::Bottleneck);
    let d = scenario.defaults();
    let sample_size = *cfg.sample_size.get_or_insert(d.sample_size);
    let chain = cfg.chain()?;
    let cells = match cfg.cells {
        Some(h) => h,
        None => *cfg.cells.insert(choose_cell_count(sample_size)?),
    };
    let study = StudyConfig {
        scenario,
        replicates: *cfg.reps.get_or_insert(100),
        sample_size,
        samples_at_zero: *cfg.samples_at_zero.get_or_insert(d.samples_at_zero),
        horizon: *cfg.horizon.get_or_insert(d.horizon),
        boundary: *cfg.boundary.get_or_insert(d.boundary),
        cells,
        models: cfg.models(),
        chain,
        alpha: *cfg.alpha.get_or_insert(DEFAULT_ALPHA),
    };
    study.validate()?;
    Ok(study)
}

pub fn simulate(mut cfg: RunConfig, out: &Path) -> CliResult<Value> {
    let study = study_config(&mut cfg)?;
    let seed = study.chain.seed;
    io::ensure_dir(out)?;
    let width = study.replicates.to_string().len().max(3);
    let files: Vec<Vec<PathBuf>> = (0..study.replicates)
        .into_par_iter()
        .map(|r| -> CliResult<Vec<PathBuf>> {
            let sim = simulate_replicate_tree(&study, seed, r as u64)?;
            let stem = format!("rep_{:0width$}", r + 1);
            let newick = out.join(format!("{stem}.nwk"));
            std::fs::write(&newick, sim.tree.to_newick() + "\n").map_err(|e| CliError::io(newick.display(), e))?;
            let dates = out.join(format!("{stem}_dates.csv"));
            io::write_dates(&dates, &sim.dates)?;
            let grid = build_grid(study.cells, study.boundary, Some(sim.genealogy.tmrca()))?;
            let truth = out.join(format!("{stem}_truth.csv"));
            io::write_truth(&truth, &grid, &Trajectory::Scenario(study.scenario).log_on_grid(&grid))?;
            Ok(vec![newick, dates, truth])
        })
        .collect::<CliResult<_>>()?;
    let outputs: Vec<PathBuf> = files.into_iter().flatten().collect();
    let manifest = write_manifest(out, "simulate", &cfg, None, &outputs)?;
    Ok(json!({
        "command": "simulate",
        "scenario": study.scenario,
        "replicates": study.replicates,
        "files": outputs.len(),
        "manifest": manifest.display().to_string(),
    }))
}

const METRIC_COLUMNS: [&str; 6] = ["MAD", "MCIW", "Env", "MASV", "TMASV", "p_eff"];

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn metric_fields(m: &Metrics) -> [String; 6] {
    [opt(m.mad), m.mciw.to_string(), opt(m.envelope), m.masv.to_string(), opt(m.tmasv), opt(m.p_eff)]
}

pub fn study(mut cfg: RunConfig, out: &Path) -> CliResult<Value> {
    let study = study_config(&mut cfg)?;
    let result = run_study(&study)?;
    io::ensure_dir(out)?;

    let summary_path = out.join("summary.csv");
    let mut w = io::writer(&summary_path)?;
    w.write_record(std::iter::once("model").chain(METRIC_COLUMNS))?;
    for row in &result.summary {
        let values = [row.mad, row.mciw, row.envelope, row.masv, row.tmasv, row.p_eff];
        w.write_record(std::iter::once(row.model.to_string()).chain(values.iter().map(f64::to_string)))?;
    }
    w.flush().map_err(|e| CliError::io(summary_path.display(), e))?;

    let reps_path = out.join("replicates.csv");
    let mut w = io::writer(&reps_path)?;
    w.write_record(["replicate", "model", "zeta"].into_iter().chain(METRIC_COLUMNS).chain(["WAIC"]))?;
    for r in &result.results {
        let head = [(r.replicate + 1).to_string(), r.model.to_string(), r.zeta.to_string()];
        w.write_record(head.into_iter().chain(metric_fields(&r.metrics)).chain([opt(r.metrics.waic)]))?;
    }
    w.flush().map_err(|e| CliError::io(reps_path.display(), e))?;

    let json_path = out.join("study.json");
    io::write_json(&json_path, &result)?;
    let outputs = vec![summary_path, reps_path, json_path];
    let manifest = write_manifest(out, "study", &cfg, None, &outputs)?;
    Ok(json!({
        "command": "study",
        "summary": result.summary,
        "failures": result.failures.len(),
        "outputs": io::display(&[outputs, vec![manifest]].concat()),
    }))
}

pub fn evaluate(cfg: RunConfig, out: &Path) -> CliResult<Value> {
    let posteriors = cfg
        .posterior
        .clone()
        .filter(|p| !p.is_empty())
        .ok_or_else(|| CliError::usage("evaluate needs --posterior"))?;
    let truths = cfg.truth.clone().unwrap_or_default();
    if !(truths.len() <= 1 || truths.len() == posteriors.len()) {
        return Err(CliError::usage("give one truth file per posterior, or a single shared one"));
    }

    let rows: Vec<(PathBuf, Metrics)> = posteriors
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let post = io::read_posterior(path)?;
            let truth = match truths.get(if truths.len() == 1 { 0 } else { i }) {
                Some(t) => Some(io::read_truth(t)?),
                None => None,
            };
            if let Some(t) = &truth {
                if t.len() != post.cells {
                    return Err(CliError::usage(format!(
                        "{}: truth has {} cells but the posterior has {}",
                        path.display(),
                        t.len(),
                        post.cells
                    )));
                }
            }
            Ok((path.clone(), metrics(&post, truth.as_deref())?.metrics))
        })
        .collect::<CliResult<_>>()?;

    io::ensure_dir(out)?;
    let metrics_path = out.join("metrics.csv");
    let mut w = io::writer(&metrics_path)?;
    w.write_record(std::iter::once("posterior").chain(METRIC_COLUMNS).chain(["WAIC"]))?;
    for (path, m) in &rows {
        w.write_record(
            std::iter::once(path.display().to_string())
                .chain(metric_fields(m))
                .chain([opt(m.waic)]),
        )?;
    }
    w.flush().map_err(|e| CliError::io(metrics_path.display(), e))?;

    let mean = |f: &dyn Fn(&Metrics) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(|(_, m)| f(m)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let summary = Metrics {
        mad: mean(&|m| m.mad),
        mciw: mean(&|m| Some(m.mciw)).unwrap_or(f64::NAN),
        envelope: mean(&|m| m.envelope),
        masv: mean(&|m| Some(m.masv)).unwrap_or(f64::NAN),
        tmasv: mean(&|m| m.tmasv),
        p_eff: mean(&|m| m.p_eff),
        waic: mean(&|m| m.waic),
    };
    let summary_path = out.join("summary.csv");
    let mut w = io::writer(&summary_path)?;
    w.write_record(std::iter::once("replicates").chain(METRIC_COLUMNS).chain(["WAIC"]))?;
    w.write_record(
        std::iter::once(rows.len().to_string())
            .chain(metric_fields(&summary))
            .chain([opt(summary.waic)]),
    )?;
    w.flush().map_err(|e| CliError::io(summary_path.display(), e))?;

    let outputs = vec![metrics_path, summary_path];
    let manifest = write_manifest(out, "evaluate", &cfg, None, &outputs)?;
    Ok(json!({
        "command": "evaluate",
        "replicates": rows.len(),
        "summary": summary,
        "outputs": io::display(&[outputs, vec![manifest]].concat()),
    }))
}

#[derive(Serialize)]
struct ComparisonRow {
    model: String,
    log_ml: f64,
    log_bf: f64,
    probability: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta: Option<f64>,
}

fn parse_log_ml(entries: &[String]) -> CliResult<Vec<(String, f64)>> {
    entries
        .iter()
        .map(|e| {
            let (name, value) = e
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("expected name=value, got '{e}'")))?;
            let v: f64 = value
                .trim()
                .parse()
                .map_err(|_| CliError::usage(format!("'{value}' is not a number")))?;
            Ok((name.trim().to_string(), v))
        })
        .collect()
}

pub fn compare(mut cfg: RunConfig, out: &Path) -> CliResult<Value> {
    let (names, log_ml, zetas): (Vec<String>, Vec<f64>, Vec<Option<f64>>) = match cfg.log_ml.clone() {
        Some(entries) => {
            let parsed = parse_log_ml(&entries)?;
            cfg.seed = None;
            (
                parsed.iter().map(|(n, _)| n.clone()).collect(),
                parsed.iter().map(|(_, v)| *v).collect(),
                vec![None; parsed.len()],
            )
        }
        None => {
            let p = prepare(&mut cfg)?;
            let chain_cfg = cfg.chain()?;
            let stones = *cfg.stones.get_or_insert(DEFAULT_STONES);
            let shape = *cfg.beta_shape.get_or_insert(DEFAULT_BETA_SHAPE);
            let kinds = cfg.models();
            let mut names = Vec::new();
            let mut values = Vec::new();
            let mut zetas = Vec::new();
            for kind in kinds {
                let (zeta, _) = resolve_zeta(&mut cfg, &p, kind)?;
                let model = FieldModel::new(kind, p.mu, p.sigma, zeta)?;
                let ss = steppingstone(&model, &p.lik, &chain_cfg, stones, shape)?;
                names.push(kind.to_string());
                values.push(ss.log_ml);
                zetas.push(Some(zeta));
            }
            (names, values, zetas)
        }
    };
    let bf = log_bayes_factors(&log_ml)?;
    let prob = model_probabilities(&log_ml, &vec![1.0; log_ml.len()])?;
    let rows: Vec<ComparisonRow> = names
        .into_iter()
        .zip(log_ml)
        .zip(bf.into_iter().zip(prob))
        .zip(zetas)
        .map(|(((model, log_ml), (log_bf, probability)), zeta)| ComparisonRow {
            model,
            log_ml,
            log_bf,
            probability,
            zeta,
        })
        .collect();

    io::ensure_dir(out)?;
    let csv_path = out.join("compare.csv");
    let mut w = io::writer(&csv_path)?;
    w.write_record(["model", "log_ml", "log_bf", "probability"])?;
    for r in &rows {
        w.write_record([r.model.clone(), r.log_ml.to_string(), r.log_bf.to_string(), r.probability.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(csv_path.display(), e))?;
    let json_path = out.join("compare.json");
    io::write_json(&json_path, &rows)?;
    let outputs = vec![csv_path, json_path];
    let manifest = write_manifest(out, "compare", &cfg, None, &outputs)?;
    Ok(json!({
        "command": "compare",
        "models": rows,
        "outputs": io::display(&[outputs, vec![manifest]].concat()),
    }))
}
