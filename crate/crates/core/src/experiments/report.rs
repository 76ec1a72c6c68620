//! Plots and provenance for a finished (or partial) ablation.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use plotters::prelude::*;
use plotters::style::FontStyle;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

use super::config::{ExperimentConfig, Variant};
use super::results::{ResultsRow, ResultsTable};

pub const PROVENANCE_JSON: &str = "provenance.json";
pub const REPORT_DIR: &str = "report";
pub const PLOT_FILES: [&str; 4] = ["aprc_vs_train_size.png", "dl1_all.png", "dcount_empty.png", "dcount_landslide.png"];
pub const FONT_ENV: &str = "SLIDENET_FONT";
const DEFAULT_FONT: &str = "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    pub config: serde_json::Value,
    /// Training seeds per size, shared by every variant.
    pub seeds: BTreeMap<usize, Vec<u64>>,
    pub code_version: String,
    /// Cells or panels absent from the report.
    #[serde(default)]
    pub gaps: Vec<String>,
}

pub fn code_version() -> String {
    format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

pub fn config_hash(config: &serde_json::Value) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(config)?)))
}

impl Provenance {
    pub fn new(config: serde_json::Value, seeds: BTreeMap<usize, Vec<u64>>) -> Result<Self> {
        Ok(Self { config_hash: config_hash(&config)?, config, seeds, code_version: code_version(), gaps: Vec::new() })
    }

    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        let seeds = config.train_sizes.iter().map(|&s| (s, config.seeds_for(s))).collect();
        Self::new(serde_json::to_value(config)?, seeds)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

/// Registers a TrueType font for labels once per process.
/// Without one the plots are drawn without text.
fn font_available() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let path = std::env::var(FONT_ENV).unwrap_or_else(|_| DEFAULT_FONT.to_string());
        match fs::read(&path) {
            Ok(bytes) => {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok()
            }
            Err(_) => false,
        }
    })
}

fn colour(v: Variant) -> RGBColor {
    match v {
        Variant::None => BLACK,
        Variant::PretrainA => BLUE,
        Variant::PretrainB => RED,
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Plot(e.to_string())
}

/// `(x, y, err)`.
type ErrPoint = (f64, f64, f64);

struct Panel<'a> {
    title: &'a str,
    y_label: &'a str,
    series: Vec<(Variant, Vec<ErrPoint>)>,
    baseline: Vec<(f64, f64)>,
}

fn draw(path: &Path, panel: &Panel) -> Result<()> {
    let text = font_available();
    let xs: Vec<f64> = panel.series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)).collect();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !x0.is_finite() {
        (x0, x1) = (1.0, 10.0);
    }
    let (x0, x1) = (x0 / 1.3, x1 * 1.3);
    let mut ys: Vec<f64> =
        panel.series.iter().flat_map(|(_, p)| p.iter().flat_map(|q| [q.1 - q.2, q.1 + q.2])).collect();
    ys.extend(panel.baseline.iter().map(|b| b.1));
    let (mut y0, mut y1) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.1).max(0.5 * f64::EPSILON.max(y1.abs() * 1e-3)).max(1e-3);
    let (y0, y1) = (y0 - pad, y1 + pad);

    let root = BitMapBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut builder = ChartBuilder::on(&root);
    builder.margin(16);
    if text {
        builder.caption(panel.title, ("sans-serif", 20)).x_label_area_size(40).y_label_area_size(60);
    }
    let mut chart = builder.build_cartesian_2d((x0..x1).log_scale(), y0..y1).map_err(plot_err)?;
    let mut mesh = chart.configure_mesh();
    mesh.light_line_style(WHITE).x_labels(6).x_label_formatter(&|x| format!("{}", x.round() as i64));
    if text {
        mesh.x_desc("training chips").y_desc(panel.y_label);
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(plot_err)?;

    if !panel.baseline.is_empty() {
        let grey = RGBColor(128, 128, 128);
        let s = chart.draw_series(LineSeries::new(panel.baseline.clone(), grey.stroke_width(1))).map_err(plot_err)?;
        if text {
            s.label("random baseline")
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], grey.stroke_width(2)));
        }
    }
    for (variant, points) in &panel.series {
        let c = colour(*variant);
        let s = chart
            .draw_series(LineSeries::new(points.iter().map(|p| (p.0, p.1)), c.stroke_width(2)))
            .map_err(plot_err)?;
        if text {
            s.label(variant.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], c.stroke_width(3)));
        }
        chart
            .draw_series(points.iter().map(|&(x, y, e)| ErrorBar::new_vertical(x, y - e, y, y + e, c.filled(), 8)))
            .map_err(plot_err)?;
        chart.draw_series(points.iter().map(|&(x, y, _)| Circle::new((x, y), 3, c.filled()))).map_err(plot_err)?;
    }
    if text {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

fn series(
    rows: &[ResultsRow],
    value: impl Fn(&ResultsRow) -> Option<(f64, Option<f64>)>,
) -> Vec<(Variant, Vec<ErrPoint>)> {
    let mut out: Vec<(Variant, Vec<ErrPoint>)> = Vec::new();
    for v in Variant::ALL {
        let mut pts: Vec<ErrPoint> = rows
            .iter()
            .filter(|r| r.variant == v)
            .filter_map(|r| value(r).map(|(y, e)| (r.train_size as f64, y, e.unwrap_or(0.0))))
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        if !pts.is_empty() {
            out.push((v, pts));
        }
    }
    out
}

fn gaps(table: &ResultsTable, config: Option<&ExperimentConfig>) -> Vec<String> {
    let mut gaps: Vec<String> = table
        .failures
        .iter()
        .map(|f| format!("cell {}/{}/{} failed: {}", f.variant, f.train_size, f.seed, f.error))
        .collect();
    if let Some(cfg) = config {
        for &v in &cfg.variants {
            for &s in &cfg.train_sizes {
                if table.row(v, s).is_none() {
                    gaps.push(format!("no results for {v} at size {s}"));
                }
            }
        }
    }
    for r in &table.rows {
        for (name, m) in [("dcount_empty", r.median_dcount_empty), ("dcount_landslide", r.median_dcount_landslide)] {
            if m.is_none() {
                gaps.push(format!("{name} panel has no chips for {} at size {}", r.variant, r.train_size));
            }
        }
    }
    gaps
}

/// Write `results.csv`, the four plots under `report/` and `provenance.json`.
pub fn emit_report(table: &ResultsTable, provenance: &Provenance, out: &Path) -> Result<()> {
    let report = out.join(REPORT_DIR);
    fs::create_dir_all(&report).map_err(|e| Error::io(&report, e))?;
    table.write_csv(out)?;
    let rows = &table.rows;
    let mut baseline: Vec<(f64, f64)> = rows.iter().map(|r| (r.train_size as f64, r.aprc_random_baseline)).collect();
    baseline.sort_by(|a, b| a.0.total_cmp(&b.0));
    baseline.dedup_by(|a, b| a.0 == b.0);
    let median = |m: Option<i64>, e: Option<f64>| m.map(|m| (m as f64, e));
    let panels = [
        Panel {
            title: "APRC vs training size",
            y_label: "APRC",
            series: series(rows, |r| Some((r.aprc, Some(r.aprc_err)))),
            baseline,
        },
        Panel {
            title: "Median dL1, all chips",
            y_label: "median dL1 (pixels)",
            series: series(rows, |r| median(r.median_dl1_all, r.dl1_all_err)),
            baseline: Vec::new(),
        },
        Panel {
            title: "Median dCount, chips without landslides",
            y_label: "median dCount (pixels)",
            series: series(rows, |r| median(r.median_dcount_empty, r.dcount_empty_err)),
            baseline: Vec::new(),
        },
        Panel {
            title: "Median dCount, chips with landslides",
            y_label: "median dCount (pixels)",
            series: series(rows, |r| median(r.median_dcount_landslide, r.dcount_landslide_err)),
            baseline: Vec::new(),
        },
    ];
    for (file, panel) in PLOT_FILES.iter().zip(&panels) {
        draw(&report.join(file), panel)?;
    }
    let config: Option<ExperimentConfig> = serde_json::from_value(provenance.config.clone()).ok();
    let mut prov = provenance.clone();
    prov.gaps = gaps(table, config.as_ref());
    prov.write(&out.join(PROVENANCE_JSON))
}
