//! Result rows, CSV export and line plots.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::training::EvalCurve;

/// One evaluated point. Column order is the CSV schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub snr_db: f64,
    pub rate: f64,
    pub psnr_db: f64,
    pub ms_ssim: f64,
    pub ms_ssim_db: f64,
    pub variant: String,
    pub seed: u64,
    pub sparsity: f64,
    pub bits: u32,
}

impl ResultRow {
    /// Series label: the variant, plus the compression setting if any.
    pub fn label(&self) -> String {
        if self.sparsity == 0.0 && self.bits >= 32 {
            self.variant.clone()
        } else if self.bits >= 32 {
            format!("{} (s={})", self.variant, self.sparsity)
        } else {
            format!("{} (s={}, {}-bit)", self.variant, self.sparsity, self.bits)
        }
    }
}

/// Rows of an evaluation curve tagged with experiment metadata.
pub fn rows_from_curve(curve: &EvalCurve, variant: &str, sparsity: f64, bits: u32) -> Vec<ResultRow> {
    curve
        .rows
        .iter()
        .map(|r| ResultRow {
            snr_db: r.snr_db,
            rate: r.code_rate,
            psnr_db: r.psnr_db,
            ms_ssim: r.ms_ssim,
            ms_ssim_db: r.ms_ssim_db,
            variant: variant.to_string(),
            seed: r.seed,
            sparsity,
            bits,
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::arg(format!("refusing to write {}: no result rows", path.display())));
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?)
}

/// Quantity on a plot axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Snr,
    Rate,
    Psnr,
    MsSsimDb,
}

impl Axis {
    pub fn label(self) -> &'static str {
        match self {
            Axis::Snr => "SNR (dB)",
            Axis::Rate => "R",
            Axis::Psnr => "PSNR (dB)",
            Axis::MsSsimDb => "MS-SSIM (dB)",
        }
    }

    fn of(self, r: &ResultRow) -> f64 {
        match self {
            Axis::Snr => r.snr_db,
            Axis::Rate => r.rate,
            Axis::Psnr => r.psnr_db,
            Axis::MsSsimDb => r.ms_ssim_db,
        }
    }
}

/// Seed-averaged `(x, y)` points per series label, sorted by `x`. Rows
/// with a non-finite `x` (the noiseless channel) are skipped.
pub fn series(rows: &[ResultRow], x: Axis, y: Axis) -> BTreeMap<String, Vec<(f64, f64)>> {
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, f64, usize)>> = BTreeMap::new();
    for r in rows {
        let xv = x.of(r);
        if !xv.is_finite() {
            continue;
        }
        let e = acc.entry(r.label()).or_default().entry(xv.to_bits()).or_insert((xv, 0.0, 0));
        e.1 += y.of(r);
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(k, pts)| {
            let mut v: Vec<(f64, f64)> = pts.values().map(|(x, s, n)| (*x, s / *n as f64)).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0));
            (k, v)
        })
        .collect()
}

/// Line plot of `y` against `x` with one series per label, as SVG.
pub fn plot(path: &Path, title: &str, rows: &[ResultRow], x: Axis, y: Axis) -> Result<()> {
    let data = series(rows, x, y);
    let pts: Vec<(f64, f64)> = data.values().flatten().copied().collect();
    if pts.is_empty() {
        return Err(Error::arg(format!("nothing to plot for {title}")));
    }
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(px, py)| (a.min(px), b.max(px), c.min(py), d.max(py)),
    );
    if x1 <= x0 {
        x0 -= 1.0;
        x1 += 1.0;
    }
    let pad = ((y1 - y0) * 0.08).max(0.1);
    y0 -= pad;
    y1 += pad;
    let plot_err = |e: String| Error::arg(format!("plot {}: {e}", path.display()));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| plot_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(x.label())
        .y_desc(y.label())
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    for (i, (label, pts)) in data.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| plot_err(e.to_string()))?
            .label(label.clone())
            .legend(move |(lx, ly)| PathElement::new(vec![(lx, ly), (lx + 18, ly)], color.stroke_width(2)));
        chart
            .draw_series(pts.iter().map(|&p| Circle::new(p, 3, color.filled())))
            .map_err(|e| plot_err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| plot_err(e.to_string()))?;
    root.present().map_err(|e| plot_err(e.to_string()))?;
    Ok(())
}

/// `<stem>.csv` plus the SNR-vs-PSNR and SNR-vs-MS-SSIM plots. Returns the
/// written paths.
pub fn export_report(dir: &Path, stem: &str, rows: &[ResultRow]) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::arg("refusing to export an empty report"));
    }
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    write_csv(&csv, rows)?;
    let mut out = vec![csv];
    for (y, name) in [(Axis::Psnr, "psnr"), (Axis::MsSsimDb, "msssim")] {
        let p = dir.join(format!("{stem}_snr_vs_{name}.svg"));
        plot(&p, &format!("{stem}: {}", y.label()), rows, Axis::Snr, y)?;
        out.push(p);
    }
    Ok(out)
}
