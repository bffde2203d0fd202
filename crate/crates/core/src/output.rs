//! Writes a report to disk: `report.json`, `fits.csv`, `measures.csv`, plot
//! data with an SVG render per CSV, and `manifest.json` listing every file
//! with its size and SHA-256.
//!
//! Layout under the output directory:
//!
//! ```text
//! report.json
//! fits.csv
//! measures.csv
//! plots/v_vs_n/<model>__<measure>.{csv,svg}
//! plots/alpha_vs_layer/<measure>.{csv,svg}
//! plots/e4_axis/<model>.{csv,svg}
//! plots/v_vs_freq/<model>.{csv,svg}        (when frequencies were given)
//! plots/e6_delta.{csv,svg}                  (paired comparisons only)
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::sha256_hex;
use crate::pipeline::{AnalysisReport, ModelAnalysis};
use crate::svg::{Chart, Stroke};

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("report has no models")]
    EmptyReport,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Relative to the output directory, `/`-separated.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputManifest {
    pub files: Vec<FileEntry>,
}

struct Writer<'a> {
    root: &'a Path,
    files: BTreeMap<String, FileEntry>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, contents: &[u8]) -> Result<(), OutputError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| OutputError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&path, contents).map_err(|source| OutputError::Io { path, source })?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                path: rel.to_string(),
                bytes: contents.len() as u64,
                sha256: sha256_hex(contents),
            },
        );
        Ok(())
    }
}

/// Model names made safe for file names; duplicates get an index suffix.
fn file_stems(models: &[ModelAnalysis]) -> Vec<String> {
    let mut seen = BTreeMap::new();
    models
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let clean: String = m
                .model
                .chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '.' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect();
            let clean = if clean.is_empty() {
                "model".to_string()
            } else {
                clean
            };
            if seen.insert(clean.clone(), i).is_some() {
                format!("{clean}_{i}")
            } else {
                clean
            }
        })
        .collect()
}

fn join_u64(xs: &[u64]) -> String {
    xs.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

fn fits_csv(report: &AnalysisReport) -> String {
    let mut s = String::from(
        "model,measure,layer,estimator,alpha,intercept,ci_low,ci_high,n_used,excluded\n",
    );
    for m in &report.models {
        for f in &m.fits {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                csv_field(&m.model),
                f.measure,
                f.layer,
                f.estimator,
                f.alpha,
                f.intercept,
                f.ci_low,
                f.ci_high,
                f.n_used,
                join_u64(&f.excluded_magnitudes)
            );
        }
    }
    s
}

fn measures_csv(report: &AnalysisReport) -> String {
    let mut s = String::from("model,measure,layer,magnitude,value\n");
    for m in &report.models {
        for t in &m.tables {
            for (layer, row) in t.layers.iter().zip(&t.values) {
                for (n, v) in t.magnitudes.iter().zip(row) {
                    let _ = writeln!(s, "{},{},{layer},{n},{v}", csv_field(&m.model), t.measure);
                }
            }
        }
    }
    s
}

fn v_vs_n(
    writer: &mut Writer,
    stem: &str,
    model: &ModelAnalysis,
    report: &AnalysisReport,
) -> Result<(), OutputError> {
    let estimator = report.provenance.config.primary_estimator;
    for table in &model.tables {
        let mut csv = String::from("layer,magnitude,ln_n,value,ln_value,excluded,fit_ln_value\n");
        for (layer, row) in table.layers.iter().zip(&table.values) {
            let fit = model.fit(table.measure, *layer, estimator);
            for (n, v) in table.magnitudes.iter().zip(row) {
                let ln_n = (*n as f64).ln();
                let excluded = fit.is_some_and(|f| f.excluded_magnitudes.contains(n));
                let fitted = fit
                    .map(|f| (f.intercept + f.alpha * ln_n).to_string())
                    .unwrap_or_default();
                let _ = writeln!(
                    csv,
                    "{layer},{n},{ln_n},{v},{},{},{fitted}",
                    v.ln(),
                    u8::from(excluded)
                );
            }
        }
        let name = format!("plots/v_vs_n/{stem}__{}", table.measure);
        writer.put(&format!("{name}.csv"), csv.as_bytes())?;

        let Some((layer, row)) = table.layers.first().zip(table.values.first()) else {
            writer.put(
                &format!("{name}.svg"),
                Chart::new(&name, "ln n", "ln V").render().as_bytes(),
            )?;
            continue;
        };
        let xy: Vec<(f64, f64)> = table
            .magnitudes
            .iter()
            .zip(row)
            .map(|(n, v)| ((*n as f64).ln(), v.ln()))
            .collect();
        let mut chart = Chart::new(
            &format!("{} {} layer {layer}", model.model, table.measure),
            "ln n",
            "ln V",
        )
        .points("V", xy.clone());
        if let Some(f) = model.fit(table.measure, *layer, estimator) {
            let (x0, x1) = (xy[0].0, xy[xy.len() - 1].0);
            chart = chart
                .line(
                    &format!("{estimator} alpha = {:.3}", f.alpha),
                    vec![
                        (x0, f.intercept + f.alpha * x0),
                        (x1, f.intercept + f.alpha * x1),
                    ],
                    Stroke::Solid,
                )
                // Scalar (alpha = 1) and flat (alpha = 0) predictions through the first fitted value.
                .reference(1.0, f.intercept + f.alpha * x0 - x0, Stroke::Dashed)
                .reference(0.0, f.intercept + f.alpha * x0, Stroke::Dotted);
        }
        writer.put(&format!("{name}.svg"), chart.render().as_bytes())?;
    }
    Ok(())
}

fn alpha_vs_layer(writer: &mut Writer, report: &AnalysisReport) -> Result<(), OutputError> {
    let config = &report.provenance.config;
    for measure in config.measures_sorted() {
        let mut csv = String::from("model,layer,estimator,alpha,ci_low,ci_high\n");
        let mut chart = Chart::new(&format!("alpha by layer ({measure})"), "layer", "alpha");
        for m in &report.models {
            for estimator in config.estimators_sorted() {
                for f in m.fits_for(measure, estimator) {
                    let _ = writeln!(
                        csv,
                        "{},{},{estimator},{},{},{}",
                        csv_field(&m.model),
                        f.layer,
                        f.alpha,
                        f.ci_low,
                        f.ci_high
                    );
                }
            }
            let xy = m
                .fits_for(measure, config.primary_estimator)
                .iter()
                .map(|f| (f.layer as f64, f.alpha))
                .collect();
            chart = chart.line(&m.model, xy, Stroke::Solid);
        }
        chart = chart
            .reference(0.0, 1.0, Stroke::Dashed)
            .reference(0.0, 0.0, Stroke::Dotted);
        let name = format!("plots/alpha_vs_layer/{measure}");
        writer.put(&format!("{name}.csv"), csv.as_bytes())?;
        writer.put(&format!("{name}.svg"), chart.render().as_bytes())?;
    }
    Ok(())
}

fn e4_axis(writer: &mut Writer, stem: &str, model: &ModelAnalysis) -> Result<(), OutputError> {
    let Some(e4) = model.e4.ok() else {
        return Ok(());
    };
    let mut csv = String::from("layer,alpha_on,alpha_off\n");
    for ((l, on), off) in e4.layers.iter().zip(&e4.alpha_on).zip(&e4.alpha_off) {
        let _ = writeln!(csv, "{l},{on},{off}");
    }
    let layers: Vec<f64> = e4.layers.iter().map(|l| *l as f64).collect();
    let chart = Chart::new(
        &format!("{}: on- vs off-axis alpha", model.model),
        "layer",
        "alpha",
    )
    .line(
        "on-axis",
        layers
            .iter()
            .copied()
            .zip(e4.alpha_on.iter().copied())
            .collect(),
        Stroke::Solid,
    )
    .line(
        "off-axis",
        layers
            .iter()
            .copied()
            .zip(e4.alpha_off.iter().copied())
            .collect(),
        Stroke::Solid,
    )
    .reference(0.0, 0.0, Stroke::Dotted);
    let name = format!("plots/e4_axis/{stem}");
    writer.put(&format!("{name}.csv"), csv.as_bytes())?;
    writer.put(&format!("{name}.svg"), chart.render().as_bytes())
}

fn v_vs_freq(
    writer: &mut Writer,
    stem: &str,
    model: &ModelAnalysis,
    magnitudes: &[u64],
) -> Result<(), OutputError> {
    let Some(e5) = model.e5.as_ref().and_then(|o| o.ok()) else {
        return Ok(());
    };
    let mut csv = String::from("layer,magnitude,ln_frequency,value\n");
    for (layer, row) in e5.layers.iter().zip(&e5.values) {
        for ((n, lf), v) in magnitudes.iter().zip(&e5.log_frequency).zip(row) {
            let _ = writeln!(csv, "{layer},{n},{lf},{v}");
        }
    }
    let name = format!("plots/v_vs_freq/{stem}");
    writer.put(&format!("{name}.csv"), csv.as_bytes())?;
    let mut chart = Chart::new(
        &format!(
            "{} layer {}: rho = {:.3}",
            model.model,
            e5.layers.first().copied().unwrap_or_default(),
            e5.rho.first().copied().unwrap_or(f64::NAN)
        ),
        "ln frequency",
        &e5.measure.to_string(),
    );
    if let Some(row) = e5.values.first() {
        chart = chart.points(
            "",
            e5.log_frequency
                .iter()
                .copied()
                .zip(row.iter().copied())
                .collect(),
        );
    }
    writer.put(&format!("{name}.svg"), chart.render().as_bytes())
}

fn e6_delta(writer: &mut Writer, report: &AnalysisReport) -> Result<(), OutputError> {
    let Some(e6) = &report.e6 else {
        return Ok(());
    };
    let mut csv = String::from("layer,alpha_a,alpha_b,delta\n");
    for i in 0..e6.layers.len() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            e6.layers[i], e6.alpha_a[i], e6.alpha_b[i], e6.delta[i]
        );
    }
    let xy = e6
        .layers
        .iter()
        .map(|l| *l as f64)
        .zip(e6.delta.iter().copied())
        .collect();
    let chart = Chart::new(
        &format!("{} - {} ({})", e6.model_a, e6.model_b, e6.measure),
        "layer",
        "delta alpha",
    )
    .line("delta", xy, Stroke::Solid)
    .reference(0.0, 0.0, Stroke::Dotted);
    writer.put("plots/e6_delta.csv", csv.as_bytes())?;
    writer.put("plots/e6_delta.svg", chart.render().as_bytes())
}

/// Writes every output file and the checksum manifest.
pub fn emit_outputs(
    report: &AnalysisReport,
    out_dir: &Path,
) -> Result<OutputManifest, OutputError> {
    if report.models.is_empty() {
        return Err(OutputError::EmptyReport);
    }
    let mut writer = Writer {
        root: out_dir,
        files: BTreeMap::new(),
    };
    let json = serde_json::to_string_pretty(report)? + "\n";
    writer.put("report.json", json.as_bytes())?;
    writer.put("fits.csv", fits_csv(report).as_bytes())?;
    writer.put("measures.csv", measures_csv(report).as_bytes())?;

    let stems = file_stems(&report.models);
    for (model, stem) in report.models.iter().zip(&stems) {
        v_vs_n(&mut writer, stem, model, report)?;
        e4_axis(&mut writer, stem, model)?;
        v_vs_freq(&mut writer, stem, model, &report.magnitudes)?;
    }
    alpha_vs_layer(&mut writer, report)?;
    e6_delta(&mut writer, report)?;

    let manifest = OutputManifest {
        files: writer.files.into_values().collect(),
    };
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    let path = out_dir.join("manifest.json");
    fs::write(&path, text).map_err(|source| OutputError::Io { path, source })?;
    Ok(manifest)
}
