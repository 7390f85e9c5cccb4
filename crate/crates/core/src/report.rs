//! Sweep execution and result files: concatenated round records, the
//! final-round summary table and a static SVG plot.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{Cell, ExperimentConfig};
use crate::fedsim::{run_experiment, write_records_csv, FedError, RoundRecord, Strategy};

/// Round records of one finished sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub strategy: Strategy,
    pub q: f64,
    pub records: Vec<RoundRecord>,
}

impl CellResult {
    pub fn final_map(&self) -> Option<f64> {
        self.records.last().map(|r| r.map)
    }
}

/// Paths written by [`run_sweep`].
#[derive(Debug, Clone)]
pub struct SweepFiles {
    pub records: PathBuf,
    pub summary: PathBuf,
    pub plot: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FedError {
    let path = path.to_path_buf();
    move |source| FedError::Io { path, source }
}

fn run_cell(cell: &Cell, cells_dir: &Path) -> Result<CellResult, FedError> {
    log::info!("running {}", cell.stem());
    let out = run_experiment::<f32>(&cell.run)?;
    out.persist(cells_dir, &cell.stem())?;
    Ok(CellResult {
        strategy: cell.strategy,
        q: cell.q,
        records: out.records,
    })
}

/// Runs every cell of `config`, writing per-cell artifacts under
/// `<outdir>/cells/` and the combined files directly into `outdir`.
/// Cells are independent, so `parallel` changes only wall time.
pub fn run_sweep(config: &ExperimentConfig, outdir: &Path, parallel: bool) -> Result<(Vec<CellResult>, SweepFiles), FedError> {
    let cells = config.cells();
    let cells_dir = outdir.join("cells");
    std::fs::create_dir_all(&cells_dir).map_err(io_err(&cells_dir))?;
    let results = if parallel {
        cells.par_iter().map(|c| run_cell(c, &cells_dir)).collect::<Result<Vec<_>, _>>()?
    } else {
        cells.iter().map(|c| run_cell(c, &cells_dir)).collect::<Result<Vec<_>, _>>()?
    };
    let files = write_outputs(&results, outdir)?;
    Ok((results, files))
}

pub fn write_outputs(results: &[CellResult], outdir: &Path) -> Result<SweepFiles, FedError> {
    let files = SweepFiles {
        records: outdir.join("records.csv"),
        summary: outdir.join("summary.csv"),
        plot: outdir.join("map_vs_round.svg"),
    };
    let mut buf = Vec::new();
    for (i, r) in results.iter().enumerate() {
        write_records_csv(&mut buf, &r.records, i == 0).map_err(io_err(&files.records))?;
    }
    std::fs::write(&files.records, buf).map_err(io_err(&files.records))?;
    std::fs::write(&files.summary, summary_csv(results)).map_err(io_err(&files.summary))?;
    std::fs::write(&files.plot, render_svg(results)).map_err(io_err(&files.plot))?;
    Ok(files)
}

/// Final-round mAP (percent, two decimals) with one row per strategy and
/// one column per pruning rate. Cells that were not run hold `-`.
pub fn summary_csv(results: &[CellResult]) -> String {
    let mut rates: Vec<f64> = results.iter().map(|r| r.q).collect();
    rates.push(0.0);
    rates.sort_by(f64::total_cmp);
    rates.dedup();
    let mut out = String::from("strategy");
    for q in &rates {
        let _ = write!(out, ",{q}");
    }
    out.push('\n');
    for s in [Strategy::Standard, Strategy::Random, Strategy::Proposed] {
        if !results.iter().any(|r| r.strategy == s) {
            continue;
        }
        out.push_str(s.name());
        for &q in &rates {
            match results.iter().find(|r| r.strategy == s && r.q == q).and_then(CellResult::final_map) {
                Some(m) => {
                    let _ = write!(out, ",{:.2}", 100.0 * m);
                }
                None => out.push_str(",-"),
            }
        }
        out.push('\n');
    }
    out
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

struct Panel {
    top: f64,
    height: f64,
    y_max: f64,
}

const LEFT: f64 = 80.0;
const WIDTH: f64 = 560.0;

fn x_pos(round: u32, rounds: u32) -> f64 {
    if rounds <= 1 {
        LEFT + WIDTH / 2.0
    } else {
        LEFT + WIDTH * (round - 1) as f64 / (rounds - 1) as f64
    }
}

impl Panel {
    fn y(&self, v: f64) -> f64 {
        let frac = if self.y_max > 0.0 { v / self.y_max } else { 0.0 };
        self.top + self.height * (1.0 - frac)
    }

    fn axes(&self, svg: &mut String, title: &str, rounds: u32, label: impl Fn(f64) -> String) {
        let bottom = self.top + self.height;
        let _ = writeln!(
            svg,
            r#"<text x="{LEFT}" y="{:.1}" font-size="14">{title}</text>"#,
            self.top - 8.0
        );
        let _ = writeln!(
            svg,
            r#"<path d="M{LEFT},{:.1} V{bottom:.1} H{:.1}" stroke="black" fill="none"/>"#,
            self.top,
            LEFT + WIDTH
        );
        for i in 0..=4 {
            let v = self.y_max * i as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{}</text>"##,
                LEFT + WIDTH,
                LEFT - 6.0,
                y + 4.0,
                label(v)
            );
        }
        for r in 1..=rounds {
            let x = x_pos(r, rounds);
            let _ = writeln!(
                svg,
                r#"<text x="{x:.1}" y="{:.1}" font-size="11" text-anchor="middle">{r}</text>"#,
                bottom + 16.0
            );
        }
    }

    fn series(&self, svg: &mut String, points: impl Iterator<Item = (u32, f64)>, rounds: u32, color: &str) {
        let pts: Vec<String> = points
            .map(|(r, v)| format!("{:.1},{:.1}", x_pos(r, rounds), self.y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
            pts.join(" ")
        );
    }
}

/// Two stacked panels: test mAP per round and total bytes (uplink plus
/// downlink) per round, one line per cell.
pub fn render_svg(results: &[CellResult]) -> String {
    let rounds = results
        .iter()
        .flat_map(|c| c.records.iter().map(|r| r.round))
        .max()
        .unwrap_or(1);
    let bytes = |r: &RoundRecord| (r.uplink_bytes + r.downlink_bytes) as f64;
    let max_bytes = results
        .iter()
        .flat_map(|c| c.records.iter().map(bytes))
        .fold(0.0, f64::max);
    let legend_h = 18.0 * results.len() as f64;
    let height = 620.0 + legend_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="700" height="{height:.0}" viewBox="0 0 700 {height:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let map_panel = Panel { top: 40.0, height: 220.0, y_max: 1.0 };
    let byte_panel = Panel { top: 330.0, height: 220.0, y_max: max_bytes };
    map_panel.axes(&mut svg, "test mAP", rounds, |v| format!("{v:.2}"));
    byte_panel.axes(&mut svg, "bytes per round (up + down)", rounds, |v| format!("{:.0}k", v / 1000.0));
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">round</text>"#,
        LEFT + WIDTH / 2.0,
        byte_panel.top + byte_panel.height + 34.0
    );
    for (i, cell) in results.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        map_panel.series(&mut svg, cell.records.iter().map(|r| (r.round, r.map)), rounds, color);
        byte_panel.series(&mut svg, cell.records.iter().map(|r| (r.round, bytes(r))), rounds, color);
        let y = 600.0 + 18.0 * i as f64;
        let name = match cell.strategy {
            Strategy::Standard => "standard".to_string(),
            s => format!("{s} q={}", cell.q),
        };
        let _ = writeln!(
            svg,
            r#"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}" font-size="12">{name}</text>"#,
            LEFT + 24.0,
            LEFT + 30.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}
