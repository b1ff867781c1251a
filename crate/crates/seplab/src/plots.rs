//! SVG summary plots with the plotted values alongside as CSV.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use seplab_core::eval::EvalRecord;
use seplab_core::report::{bucket_by_overlap, format_value, Metric, BUCKETS, BUCKET_LABELS};

use crate::error::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn value(r: &EvalRecord, metric: Metric) -> f64 {
    match metric {
        Metric::SiSdr => r.mean_si_sdr_db(),
        Metric::Improvement => r.improvement_db,
    }
}

fn axis_label(metric: Metric) -> &'static str {
    match metric {
        Metric::SiSdr => "SI-SDR (dB)",
        Metric::Improvement => "SI-SDR improvement (dB)",
    }
}

/// Padded `[lo, hi]` covering `values` (and 0).
fn y_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let pad = ((hi - lo) * 0.05).max(0.5);
    ((lo - pad).floor(), (hi + pad).ceil())
}

struct Frame {
    svg: String,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, (y_lo, y_hi): (f64, f64)) -> Self {
        let mut svg = String::new();
        let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#);
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#, WIDTH / 2.0, escape(title));
        let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN / 2.0, HEIGHT - MARGIN, MARGIN / 1.5);
        let _ = writeln!(svg, r#"<path d="M{x0} {y1} V{y0} H{x1}" stroke="black" fill="none"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 12.0, escape(x_label));
        let _ = writeln!(svg, r#"<text transform="translate(14 {}) rotate(-90)" text-anchor="middle">{}</text>"#, (y0 + y1) / 2.0, escape(y_label));
        let mut f = Frame { svg, y_lo, y_hi };
        let step = nice_step(y_hi - y_lo);
        let mut t = (y_lo / step).ceil() * step;
        while t <= y_hi + 1e-9 {
            let y = f.y(t);
            let _ = writeln!(f.svg, r##"<line x1="{}" x2="{x0}" y1="{y:.1}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##, x0 - 4.0, x0 - 6.0, y + 4.0, t);
            t += step;
        }
        f
    }

    fn y(&self, v: f64) -> f64 {
        let (y0, y1) = (HEIGHT - MARGIN, MARGIN / 1.5);
        y0 - (v - self.y_lo) / (self.y_hi - self.y_lo) * (y0 - y1)
    }

    fn x_frac(&self, f: f64) -> f64 {
        MARGIN + f * (WIDTH - 1.5 * MARGIN)
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 6.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(path: PathBuf, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Writes `scatter.svg`/`scatter.csv` (per-utterance value against overlap,
/// with bucket means) and `bars.svg`/`bars.csv` (per-config bucket means and
/// average). Returns the files written.
pub fn emit_plots(runs: &[(String, Vec<EvalRecord>)], out_dir: &Path, metric: Metric) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut stats = Vec::with_capacity(runs.len());
    for (id, recs) in runs {
        let s = bucket_by_overlap(recs)?;
        let (cells, avg) = match metric {
            Metric::SiSdr => (s.si_sdr, s.average_si_sdr),
            Metric::Improvement => (s.improvement, s.average_improvement),
        };
        stats.push((id.as_str(), cells, avg));
    }

    // scatter
    let mut csv = String::from("config_id,utterance_id,overlap,value_db\n");
    for (id, recs) in runs {
        for r in recs {
            let _ = writeln!(csv, "{id},{},{},{}", r.id, r.overlap, value(r, metric));
        }
    }
    for (id, cells, _) in &stats {
        for (b, c) in cells.iter().enumerate() {
            let _ = writeln!(csv, "{id},bucket_mean:{},{},{}", BUCKET_LABELS[b], (b as f64 + 0.5) / BUCKETS as f64, format_value(*c));
        }
    }
    write(out_dir.join("scatter.csv"), &csv, &mut written)?;
    let range = y_range(runs.iter().flat_map(|(_, rs)| rs.iter().map(|r| value(r, metric))));
    let mut f = Frame::new(&format!("{} against overlap ratio", axis_label(metric)), "Overlap ratio", axis_label(metric), range);
    for b in 1..BUCKETS {
        let x = f.x_frac(b as f64 / BUCKETS as f64);
        let _ = writeln!(f.svg, r##"<line x1="{x:.1}" x2="{x:.1}" y1="{}" y2="{}" stroke="#ccc" stroke-dasharray="3 3"/>"##, f.y(f.y_lo), f.y(f.y_hi));
    }
    for (ci, (id, recs)) in runs.iter().enumerate() {
        let color = PALETTE[ci % PALETTE.len()];
        for r in recs {
            let _ = writeln!(f.svg, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#, f.x_frac(r.overlap), f.y(value(r, metric)));
        }
        for (b, c) in stats[ci].1.iter().enumerate() {
            if let Some(m) = c {
                let (xa, xb) = (f.x_frac(b as f64 / BUCKETS as f64), f.x_frac((b + 1) as f64 / BUCKETS as f64));
                let _ = writeln!(f.svg, r#"<line x1="{xa:.1}" x2="{xb:.1}" y1="{y:.1}" y2="{y:.1}" stroke="{color}" stroke-width="2"/>"#, y = f.y(*m));
            }
        }
        let _ = writeln!(f.svg, r#"<text x="{}" y="{}" fill="{color}">{}</text>"#, WIDTH - 150.0, 40.0 + 14.0 * ci as f64, escape(id));
    }
    for b in 0..=BUCKETS {
        let x = f.x_frac(b as f64 / BUCKETS as f64);
        let _ = writeln!(f.svg, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{:.2}</text>"#, HEIGHT - MARGIN + 14.0, b as f64 / BUCKETS as f64);
    }
    write(out_dir.join("scatter.svg"), &f.finish(), &mut written)?;

    // grouped bars
    let mut csv = String::from("config_id,bucket,value_db\n");
    for (id, cells, avg) in &stats {
        for (b, c) in cells.iter().enumerate() {
            let _ = writeln!(csv, "{id},{},{}", BUCKET_LABELS[b], format_value(*c));
        }
        let _ = writeln!(csv, "{id},Average,{}", format_value(*avg));
    }
    write(out_dir.join("bars.csv"), &csv, &mut written)?;
    let range = y_range(stats.iter().flat_map(|(_, c, a)| c.iter().chain([a]).flatten().copied()));
    let mut f = Frame::new(&format!("Mean {} per configuration", axis_label(metric)), "Overlap bucket (%)", axis_label(metric), range);
    let groups = BUCKETS + 1;
    let slot = 1.0 / groups as f64;
    let bar = slot * 0.8 / stats.len().max(1) as f64;
    for g in 0..groups {
        let label = if g < BUCKETS { BUCKET_LABELS[g] } else { "Average" };
        let _ = writeln!(f.svg, r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#, f.x_frac((g as f64 + 0.5) * slot), HEIGHT - MARGIN + 14.0, escape(label));
        for (ci, (_, cells, avg)) in stats.iter().enumerate() {
            let v = if g < BUCKETS { cells[g] } else { *avg };
            let Some(v) = v else { continue };
            let xa = f.x_frac(g as f64 * slot + 0.1 * slot + ci as f64 * bar);
            let xb = f.x_frac(g as f64 * slot + 0.1 * slot + (ci + 1) as f64 * bar);
            let (ya, yb) = (f.y(v.max(0.0)), f.y(v.min(0.0)));
            let _ = writeln!(f.svg, r#"<rect x="{xa:.1}" y="{ya:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#, xb - xa, yb - ya, PALETTE[ci % PALETTE.len()]);
        }
    }
    for (ci, (id, _, _)) in stats.iter().enumerate() {
        let _ = writeln!(f.svg, r#"<text x="{}" y="{}" fill="{}">{}</text>"#, WIDTH - 150.0, 40.0 + 14.0 * ci as f64, PALETTE[ci % PALETTE.len()], escape(id));
    }
    write(out_dir.join("bars.svg"), &f.finish(), &mut written)?;
    Ok(written)
}
