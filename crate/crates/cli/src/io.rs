//! File formats: tip dates, posterior draws, truth tables and JSON documents.
//! Floats are written in shortest round-trip form, so every CSV parses back
//! to the same bits.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use hsmrf::genealogy::{Genealogy, Tree};
use hsmrf::grid::Grid;
use hsmrf::samplers::{Diagnostics, PosteriorChain};
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}", path.display()), e))
}

/// `label,date` rows; dates are backward times.
pub fn read_dates(path: &Path) -> CliResult<HashMap<String, f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("cannot read {}", path.display()), e))?;
    let mut dates = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CliError::input(path.display(), e))?;
        let bad = || CliError::input(path.display(), format!("row {} is not `label,date`", i + 2));
        if row.len() != 2 {
            return Err(bad());
        }
        let date: f64 = row[1].parse().map_err(|_| bad())?;
        if dates.insert(row[0].to_string(), date).is_some() {
            return Err(CliError::input(path.display(), format!("duplicate label '{}'", &row[0])));
        }
    }
    Ok(dates)
}

pub fn write_dates(path: &Path, dates: &[(String, f64)]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["label", "date"])?;
    for (label, date) in dates {
        w.write_record([label.clone(), date.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_tree(tree: &Path, dates: &Path) -> CliResult<(Tree, Genealogy)> {
    let t = Tree::parse(read_text(tree)?.trim())?;
    let g = t.genealogy(&read_dates(dates)?)?;
    Ok((t, g))
}

pub fn writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path.display(), e))
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))
}

/// Columns `iter, chain, theta_1..theta_H, eta, gamma, loglik, ll_1..ll_H`;
/// `iter` is the sampler iteration at which the draw was retained.
pub fn write_posterior(path: &Path, post: &PosteriorChain, zeta: f64, n_burnin: usize, thin: usize) -> CliResult<()> {
    let h = post.cells;
    let mut w = writer(path)?;
    let mut header = vec!["iter".to_string(), "chain".to_string()];
    header.extend((1..=h).map(|i| format!("theta_{i}")));
    header.extend(["eta", "gamma", "loglik"].map(String::from));
    header.extend((1..=h).map(|i| format!("ll_{i}")));
    w.write_record(&header)?;

    let mut seen: HashMap<usize, usize> = HashMap::new();
    let mut row = Vec::with_capacity(header.len());
    for k in 0..post.len() {
        let c = post.chain[k];
        let idx = seen.entry(c).or_insert(0);
        *idx += 1;
        row.clear();
        row.push((n_burnin + *idx * thin).to_string());
        row.push(c.to_string());
        row.extend(post.theta_draws[k].iter().map(f64::to_string));
        row.push((post.global_scale[k] / zeta).to_string());
        row.push(post.global_scale[k].to_string());
        row.push(post.log_lik[k].to_string());
        row.extend(post.pointwise_ll[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

fn column_block(headers: &csv::StringRecord, prefix: &str) -> Vec<usize> {
    let mut cols = Vec::new();
    while let Some(i) = headers.iter().position(|h| h == format!("{prefix}{}", cols.len() + 1)) {
        cols.push(i);
    }
    cols
}

/// Reads a posterior CSV written by [`write_posterior`].
pub fn read_posterior(path: &Path) -> CliResult<PosteriorChain> {
    let bad = |msg: String| CliError::input(path.display(), msg);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("missing column '{name}'")))
    };
    let (chain_col, gamma_col, ll_col) = (find("chain")?, find("gamma")?, find("loglik")?);
    let theta = column_block(&headers, "theta_");
    let pointwise = column_block(&headers, "ll_");
    if theta.is_empty() || pointwise.len() != theta.len() {
        return Err(bad("theta_* and ll_* blocks must be non-empty and of equal length".into()));
    }

    let mut post = PosteriorChain {
        cells: theta.len(),
        chain: Vec::new(),
        theta_draws: Vec::new(),
        global_scale: Vec::new(),
        log_lik: Vec::new(),
        pointwise_ll: Vec::new(),
        diagnostics: Diagnostics::default(),
    };
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| bad(e.to_string()))?;
        let num = |i: usize| -> CliResult<f64> {
            row.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("row {}: non-numeric field in column {}", line + 2, i + 1)))
        };
        post.chain.push(
            row.get(chain_col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad(format!("row {}: bad chain index", line + 2)))?,
        );
        post.theta_draws.push(theta.iter().map(|&i| num(i)).collect::<CliResult<_>>()?);
        post.global_scale.push(num(gamma_col)?);
        post.log_lik.push(num(ll_col)?);
        post.pointwise_ll.push(pointwise.iter().map(|&i| num(i)).collect::<CliResult<_>>()?);
    }
    if post.is_empty() {
        return Err(bad("no draws".into()));
    }
    Ok(post)
}

/// Columns `cell, start, end, midpoint, theta`.
pub fn write_truth(path: &Path, grid: &Grid, theta: &[f64]) -> CliResult<()> {
    let mut w = writer(path)?;
    w.write_record(["cell", "start", "end", "midpoint", "theta"])?;
    for (h, (mid, t)) in grid.midpoints().iter().zip(theta).enumerate() {
        let (a, b) = grid.cell_bounds(h);
        w.write_record([(h + 1).to_string(), a.to_string(), b.to_string(), mid.to_string(), t.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path.display(), e))
}

pub fn read_truth(path: &Path) -> CliResult<Vec<f64>> {
    let bad = |msg: String| CliError::input(path.display(), msg);
    let mut rdr = csv::Reader::from_path(path).map_err(|e| bad(e.to_string()))?;
    let col = rdr
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .position(|h| h == "theta")
        .ok_or_else(|| bad("missing column 'theta'".into()))?;
    rdr.records()
        .map(|r| {
            let r = r.map_err(|e| bad(e.to_string()))?;
            r.get(col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("non-numeric theta".into()))
        })
        .collect()
}

pub fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}
