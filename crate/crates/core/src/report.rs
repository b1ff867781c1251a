//! Overlap-bucketed SI-SDR tables: aggregation, Markdown/plain rendering and CSV.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::eval::EvalRecord;
use crate::math::round_half_up_1;

pub const BUCKETS: usize = 4;
/// Column labels of the overlap buckets, in percent.
pub const BUCKET_LABELS: [&str; BUCKETS] = ["<25", "25-50", "50-75", ">75"];
/// Rendering of an empty cell.
pub const EMPTY_CELL: &str = "–";
/// Tag attached to tables holding previously published numbers.
pub const REPORTED_LABEL: &str = "paper-reported";

/// Bucket index for an overlap ratio: `[0, .25)`, `[.25, .5)`, `[.5, .75)`, `[.75, 1]`.
pub fn bucket_of(overlap: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&overlap) {
        bail!(InvalidInput, "overlap {overlap} outside [0, 1]");
    }
    Ok(if overlap < 0.25 {
        0
    } else if overlap < 0.5 {
        1
    } else if overlap < 0.75 {
        2
    } else {
        3
    })
}

/// Per-bucket counts and means for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStats {
    pub counts: [usize; BUCKETS],
    pub si_sdr: [Option<f64>; BUCKETS],
    pub improvement: [Option<f64>; BUCKETS],
    /// Means over all records, not over bucket means.
    pub average_si_sdr: Option<f64>,
    pub average_improvement: Option<f64>,
}

impl BucketStats {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Order-independent mean: values are summed in sorted order.
fn mean(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    Some(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn bucket_by_overlap(records: &[EvalRecord]) -> Result<BucketStats> {
    let mut sdr: [Vec<f64>; BUCKETS] = Default::default();
    let mut imp: [Vec<f64>; BUCKETS] = Default::default();
    for r in records {
        let b = bucket_of(r.overlap)?;
        sdr[b].push(r.mean_si_sdr_db());
        imp[b].push(r.improvement_db);
    }
    let mut all_sdr: Vec<f64> = sdr.iter().flatten().copied().collect();
    let mut all_imp: Vec<f64> = imp.iter().flatten().copied().collect();
    Ok(BucketStats {
        counts: core::array::from_fn(|b| sdr[b].len()),
        si_sdr: core::array::from_fn(|b| mean(&mut sdr[b])),
        improvement: core::array::from_fn(|b| mean(&mut imp[b])),
        average_si_sdr: mean(&mut all_sdr),
        average_improvement: mean(&mut all_imp),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SiSdr,
    Improvement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    /// Leading key cells, e.g. block counts.
    pub keys: Vec<String>,
    pub cells: [Option<f64>; BUCKETS],
    pub average: Option<f64>,
}

impl TableRow {
    pub fn from_stats(keys: Vec<String>, stats: &BucketStats, metric: Metric) -> Self {
        let (cells, average) = match metric {
            Metric::SiSdr => (stats.si_sdr, stats.average_si_sdr),
            Metric::Improvement => (stats.improvement, stats.average_improvement),
        };
        TableRow { keys, cells, average }
    }

    fn values(&self) -> impl Iterator<Item = Option<f64>> + '_ {
        self.cells.iter().copied().chain(core::iter::once(self.average))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketTable {
    pub caption: String,
    pub key_headers: Vec<String>,
    pub rows: Vec<TableRow>,
    pub reported: bool,
}

/// One-decimal, half-up.
pub fn format_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{:.1}", round_half_up_1(x)),
        None => EMPTY_CELL.to_string(),
    }
}

impl BucketTable {
    pub fn new(caption: &str, key_headers: &[&str]) -> Self {
        BucketTable { caption: caption.into(), key_headers: key_headers.iter().map(|s| s.to_string()).collect(), rows: Vec::new(), reported: false }
    }

    fn headers(&self) -> Vec<String> {
        self.key_headers.iter().cloned().chain(BUCKET_LABELS.iter().map(|s| s.to_string())).chain(["Average".to_string()]).collect()
    }

    fn title(&self) -> String {
        if self.reported {
            format!("{} ({REPORTED_LABEL})", self.caption)
        } else {
            self.caption.clone()
        }
    }

    /// For every value column, whether each row holds the (rounded) maximum.
    fn maxima(&self) -> Vec<Vec<bool>> {
        let cols = BUCKETS + 1;
        let best: Vec<Option<f64>> = (0..cols)
            .map(|c| self.rows.iter().filter_map(|r| r.values().nth(c).flatten()).map(round_half_up_1).reduce(f64::max))
            .collect();
        self.rows
            .iter()
            .map(|r| r.values().zip(&best).map(|(v, b)| matches!((v, b), (Some(v), Some(b)) if round_half_up_1(v) == *b)).collect())
            .collect()
    }

    /// Markdown table with column maxima in bold.
    pub fn render_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "**{}**\n", self.title());
        let headers = self.headers();
        let _ = writeln!(out, "| {} |", headers.join(" | "));
        let _ = writeln!(out, "|{}", ":-:|".repeat(headers.len()));
        for (row, best) in self.rows.iter().zip(self.maxima()) {
            let cells: Vec<String> = row
                .keys
                .iter()
                .cloned()
                .chain(row.values().zip(best).map(|(v, b)| if b { format!("**{}**", format_value(v)) } else { format_value(v) }))
                .collect();
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out
    }

    /// Fixed-width text table; column maxima carry a trailing `*`.
    pub fn render_plain(&self) -> String {
        let headers = self.headers();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .zip(self.maxima())
            .map(|(row, best)| {
                row.keys
                    .iter()
                    .cloned()
                    .chain(row.values().zip(best).map(|(v, b)| format!("{}{}", format_value(v), if b { "*" } else { "" })))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|c| body.iter().map(|r| r[c].chars().count()).chain([headers[c].chars().count()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}", w = *w)).collect();
            padded.join("  ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title());
        let _ = writeln!(out, "{}", line(&headers));
        for r in &body {
            let _ = writeln!(out, "{}", line(r));
        }
        out
    }
}

pub const CSV_HEADER: &str = "config_id,bucket,n,mean_si_sdr_db,mean_improvement_db";

/// One line per bucket plus an `Average` line, values formatted as in the tables
/// (empty field for an empty bucket).
pub fn csv_rows(config_id: &str, stats: &BucketStats) -> Vec<String> {
    let field = |v: Option<f64>| v.map(|x| format_value(Some(x))).unwrap_or_default();
    let mut rows: Vec<String> = (0..BUCKETS)
        .map(|b| format!("{config_id},{},{},{},{}", BUCKET_LABELS[b], stats.counts[b], field(stats.si_sdr[b]), field(stats.improvement[b])))
        .collect();
    rows.push(format!("{config_id},Average,{},{},{}", stats.total(), field(stats.average_si_sdr), field(stats.average_improvement)));
    rows
}

const TABLE1_REPORTED: [(u8, u8, [f64; 4], f64); 7] = [
    (6, 0, [13.9, 10.0, 7.2, 4.8], 9.0),
    (5, 1, [14.0, 10.1, 7.3, 4.9], 9.1),
    (4, 2, [14.2, 10.4, 7.6, 5.0], 9.4),
    (3, 3, [14.4, 10.5, 7.6, 5.0], 9.4),
    (2, 4, [14.6, 10.6, 7.8, 4.9], 9.5),
    (1, 5, [14.3, 10.3, 7.5, 4.8], 9.2),
    (0, 6, [13.5, 9.5, 6.8, 4.5], 8.6),
];

const TABLE2_REPORTED: [(u8, u8, [f64; 4], f64); 5] = [
    (1, 5, [14.3, 10.3, 7.3, 4.9], 9.3),
    (2, 4, [14.2, 10.2, 7.4, 4.8], 9.1),
    (3, 3, [14.0, 10.0, 7.1, 4.4], 8.9),
    (4, 2, [13.4, 9.3, 6.5, 3.8], 8.3),
    (5, 1, [13.0, 8.9, 6.2, 3.3], 7.9),
];

pub const TABLE1_CAPTION: &str = "SI-SDR (dB) of SIMO-only and mixed SIMO-SISO splits by overlap ratio (%)";
pub const TABLE1_KEYS: [&str; 2] = ["SIMO blocks", "SISO blocks"];
pub const TABLE2_CAPTION: &str = "SI-SDR (dB) of iterative SISO-only splits by overlap ratio (%)";
pub const TABLE2_KEYS: [&str; 2] = ["Encoder blocks", "Decoder blocks"];

fn reported(caption: &str, keys: &[&str], data: &[(u8, u8, [f64; 4], f64)]) -> BucketTable {
    let mut t = BucketTable::new(caption, keys);
    t.reported = true;
    t.rows = data
        .iter()
        .map(|(a, b, cells, avg)| TableRow { keys: alloc::vec![a.to_string(), b.to_string()], cells: cells.map(Some), average: Some(*avg) })
        .collect();
    t
}

/// Published SI-SDR for the seven SIMO/SISO splits.
pub fn reported_table1() -> BucketTable {
    reported(TABLE1_CAPTION, &TABLE1_KEYS, &TABLE1_REPORTED)
}

/// Published SI-SDR for the five encoder/decoder splits of the iterative design.
pub fn reported_table2() -> BucketTable {
    reported(TABLE2_CAPTION, &TABLE2_KEYS, &TABLE2_REPORTED)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn rec(overlap: f64, v: f64) -> EvalRecord {
        EvalRecord { id: "x".into(), overlap, si_sdr_db: vec![v, v], mixture_si_sdr_db: 0.0, improvement_db: v }
    }

    #[test]
    fn bucket_edges_are_half_open() {
        assert_eq!(bucket_of(0.0).unwrap(), 0);
        assert_eq!(bucket_of(0.25).unwrap(), 1);
        assert_eq!(bucket_of(0.5).unwrap(), 2);
        assert_eq!(bucket_of(0.75).unwrap(), 3);
        assert_eq!(bucket_of(1.0).unwrap(), 3);
        assert!(bucket_of(1.01).is_err());
    }

    #[test]
    fn four_records_one_per_bucket() {
        let recs: Vec<_> = [(0.1, 14.0), (0.3, 10.0), (0.6, 7.0), (0.9, 5.0)].iter().map(|(o, v)| rec(*o, *v)).collect();
        let s = bucket_by_overlap(&recs).unwrap();
        assert_eq!(s.si_sdr, [Some(14.0), Some(10.0), Some(7.0), Some(5.0)]);
        assert_eq!(s.average_si_sdr, Some(9.0));
    }

    #[test]
    fn average_is_over_records_and_empty_buckets_render_dash() {
        let recs = vec![rec(0.1, 10.0), rec(0.1, 10.0), rec(0.1, 10.0), rec(0.9, 2.0)];
        let s = bucket_by_overlap(&recs).unwrap();
        assert_eq!(s.average_si_sdr, Some(8.0));
        assert_eq!(s.si_sdr[1], None);
        let mut t = BucketTable::new("t", &["id"]);
        t.rows.push(TableRow::from_stats(vec!["a".into()], &s, Metric::SiSdr));
        assert!(t.render_markdown().contains("| a | **10.0** | – | – | **2.0** | **8.0** |"));
    }

    #[test]
    fn half_up_rounding() {
        assert_eq!(format_value(Some(9.45)), "9.5");
        assert_eq!(format_value(Some(9.449)), "9.4");
        assert_eq!(format_value(Some(-0.04)), "0.0");
        assert_eq!(format_value(None), "–");
    }

    #[test]
    fn reported_table_layout() {
        let md = reported_table1().render_markdown();
        assert!(md.contains("| 6 | 0 | 13.9 | 10.0 | 7.2 | 4.8 | 9.0 |"));
        assert!(md.contains("| 2 | 4 | **14.6** | **10.6** | **7.8** | 4.9 | **9.5** |"));
        assert!(md.contains("| 4 | 2 | 14.2 | 10.4 | 7.6 | **5.0** | 9.4 |"));
        assert!(md.contains(REPORTED_LABEL));
        let md2 = reported_table2().render_markdown();
        assert!(md2.contains("| 1 | 5 | **14.3** | **10.3** | 7.3 | **4.9** | **9.3** |"));
        assert!(md2.contains("| 2 | 4 | 14.2 | 10.2 | **7.4** | 4.8 | 9.1 |"));
    }

    #[test]
    fn empty_table_is_header_only() {
        let t = BucketTable::new("Empty", &TABLE1_KEYS);
        assert_eq!(t.render_markdown().lines().count(), 4);
        assert_eq!(t.render_plain().lines().count(), 2);
    }

    #[test]
    fn csv_matches_rendered_cells() {
        let recs = vec![rec(0.1, 14.04), rec(0.3, 10.05), rec(0.95, 5.0)];
        let s = bucket_by_overlap(&recs).unwrap();
        let rows = csv_rows("cfg", &s);
        assert_eq!(rows[0], "cfg,<25,1,14.0,14.0");
        assert_eq!(rows[1], "cfg,25-50,1,10.1,10.1");
        assert_eq!(rows[2], "cfg,50-75,0,,");
        assert_eq!(rows[4], "cfg,Average,3,9.7,9.7");
    }
}
