//! Report files: `deltas.csv`, `infidelity.csv`, `summary.txt` and
//! `run_metadata.json`. Files are replaced atomically.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::time::Duration;

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::experiment::ExperimentResults;

pub const DELTAS_FILE: &str = "deltas.csv";
pub const INFIDELITY_FILE: &str = "infidelity.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const METADATA_FILE: &str = "run_metadata.json";

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// One row per (explainer, k, seed), in that nesting order. An undefined
/// delta (no correctly classified inputs) is left empty.
pub fn deltas_csv(r: &ExperimentResults) -> String {
    let mut s = String::from("model,dataset,explainer,k,seed,CC,CC_after,delta\n");
    for label in &r.explainers {
        for (j, k) in r.ks.iter().enumerate() {
            for &seed in &r.seeds {
                let c = r.cell(seed, label).expect("complete results");
                let delta = c.delta(j, r.literal_delta).map_or(String::new(), |d| d.to_string());
                writeln!(
                    s,
                    "{},{},{},{},{},{},{},{}",
                    r.model, r.dataset, label, k, seed, c.correct, c.correct_after[j], delta
                )
                .unwrap();
            }
        }
    }
    s
}

/// One row per (explainer, seed) with a defined infidelity.
pub fn infidelity_csv(r: &ExperimentResults) -> String {
    let mut s = String::from("model,dataset,explainer,seed,instances,infidelity,std_error\n");
    for label in &r.explainers {
        for &seed in &r.seeds {
            let c = r.cell(seed, label).expect("complete results");
            if let Some(inf) = &c.infidelity {
                writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    r.model, r.dataset, label, seed, inf.instances, inf.mean, inf.std_error
                )
                .unwrap();
            }
        }
    }
    s
}

/// Mean and sample standard deviation; `None` for an empty slice.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Some((mean, std))
}

fn cell_text(values: &[f64]) -> String {
    mean_std(values).map_or_else(|| "-".into(), |(m, s)| format!("{m:.3}±{s:.3}"))
}

/// Per explainer: mean±std over seeds of delta at each k, and of the mean
/// infidelity.
pub fn summary_table(r: &ExperimentResults) -> String {
    let mut header = vec!["explainer".to_string()];
    header.extend(r.ks.iter().map(|k| format!("delta@k={k}")));
    header.push("infidelity".into());
    let mut rows = vec![header];
    for label in &r.explainers {
        let cells: Vec<_> = r
            .seeds
            .iter()
            .map(|&s| r.cell(s, label).expect("complete results"))
            .collect();
        let mut row = vec![label.clone()];
        for j in 0..r.ks.len() {
            let deltas: Vec<f64> = cells.iter().filter_map(|c| c.delta(j, r.literal_delta)).collect();
            row.push(cell_text(&deltas));
        }
        let infid: Vec<f64> = cells
            .iter()
            .filter_map(|c| c.infidelity.as_ref().map(|i| i.mean))
            .collect();
        row.push(cell_text(&infid));
        rows.push(row);
    }
    let widths: Vec<usize> = (0..rows[0].len())
        .map(|j| rows.iter().map(|row| row[j].chars().count()).max().unwrap_or(0))
        .collect();
    let mut s = format!(
        "model: {}  dataset: {}  seeds: {}\n\n",
        r.model,
        r.dataset,
        r.seeds.len()
    );
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(v, w)| format!("{v}{}", " ".repeat(w - v.chars().count())))
            .collect();
        writeln!(s, "{}", line.join("  ").trim_end()).unwrap();
    }
    s
}

pub fn write_reports(r: &ExperimentResults, config: &ExperimentConfig, dir: &Path, wall: Duration) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_atomic(&dir.join(DELTAS_FILE), deltas_csv(r).as_bytes())?;
    write_atomic(&dir.join(INFIDELITY_FILE), infidelity_csv(r).as_bytes())?;
    write_atomic(&dir.join(SUMMARY_FILE), summary_table(r).as_bytes())?;
    let meta = json!({
        "config_hash": r.config_hash,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_secs": wall.as_secs_f64(),
        "threads": rayon::current_num_threads(),
        "model": r.model,
        "dataset": r.dataset,
        "seeds": r.seed_info,
        "config": config,
    });
    write_atomic(
        &dir.join(METADATA_FILE),
        serde_json::to_string_pretty(&meta).unwrap().as_bytes(),
    )
}
