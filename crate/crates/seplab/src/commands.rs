//! The subcommands, as library functions over a working directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use seplab_core::eval::EvalRecord;
use seplab_core::models::{build_model, count_parameters, max_relative_spread, table1_configs, table2_configs, Design, ModelConfig};
use seplab_core::report::{
    bucket_by_overlap, csv_rows, reported_table1, reported_table2, BucketTable, TableRow, CSV_HEADER, TABLE1_CAPTION, TABLE1_KEYS,
    TABLE2_CAPTION, TABLE2_KEYS,
};
use seplab_core::train::TrainConfig;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::config::ExperimentConfig;
use crate::dataset::{generate_dataset, load_split, open_sources, DatasetConfig};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_manifest, read_records, write_records};
use crate::manifest::{read_manifest, Split};
use crate::plots::emit_plots;
use crate::training::{append_log, train};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.jsonl";
pub const RUN_ECHO_FILE: &str = "run.json";
pub const RECORDS_FILE: &str = "records.jsonl";

/// Working directory plus validated configuration.
#[derive(Debug, Clone)]
pub struct Context {
    pub workdir: PathBuf,
    pub config: ExperimentConfig,
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    fs::write(p, text).map_err(|e| Error::io(p, e))
}

impl Context {
    pub fn new(workdir: impl Into<PathBuf>, config: ExperimentConfig) -> Self {
        Context { workdir: workdir.into(), config }
    }

    pub fn run_dir(&self, model: &ModelConfig) -> PathBuf {
        self.workdir.join("runs").join(model.id())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.workdir.join(&self.config.eval.report_dir)
    }
}

/// Generates the dataset; returns the manifest path.
pub fn cmd_simulate(ctx: &Context) -> Result<PathBuf> {
    let cfg = &ctx.config;
    let sources = open_sources(&cfg.dataset.source, &ctx.workdir)?;
    generate_dataset(&cfg.dataset, cfg.seed, &ctx.workdir.join(&cfg.dataset.out_dir), sources.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunEcho {
    root_seed: u64,
    init_seed: u64,
    model: ModelConfig,
    train: TrainConfig,
    dataset: DatasetConfig,
    complete: bool,
    best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub best_epoch: usize,
    /// True when a finished run with the same inputs was found and kept.
    pub reused: bool,
}

/// Trains the configured model.
pub fn cmd_train(ctx: &Context) -> Result<TrainArtifacts> {
    train_model(ctx, &ctx.config.model.resolve()?)
}

/// Trains `model` on the dataset (generating it if needed) into its run
/// directory. A finished run with identical inputs is reused.
pub fn train_model(ctx: &Context, model: &ModelConfig) -> Result<TrainArtifacts> {
    let cfg = &ctx.config;
    let manifest = cmd_simulate(ctx)?;
    let dir = ctx.run_dir(model);
    create_dir(&dir)?;
    let (ckpt, log_path, echo_path) = (dir.join(CHECKPOINT_FILE), dir.join(LOG_FILE), dir.join(RUN_ECHO_FILE));
    let mut echo = RunEcho {
        root_seed: cfg.seed,
        init_seed: cfg.init_seed(),
        model: model.clone(),
        train: cfg.effective_train(),
        dataset: cfg.dataset.clone(),
        complete: true,
        best_epoch: 0,
    };
    if let Some(prev) = fs::read_to_string(&echo_path).ok().and_then(|t| serde_json::from_str::<RunEcho>(&t).ok()) {
        if ckpt.is_file() && (RunEcho { best_epoch: prev.best_epoch, ..echo.clone() }) == prev {
            log::info!("run {} is up to date", dir.display());
            return Ok(TrainArtifacts { checkpoint: ckpt, log: log_path, best_epoch: prev.best_epoch, reused: true });
        }
    }
    for p in [&echo_path, &log_path, &ckpt] {
        let _ = fs::remove_file(p);
    }

    let train_set: Vec<_> = load_split(&manifest, Split::Train)?.into_iter().map(|(_, ex)| ex).collect();
    let valid_set: Vec<_> = load_split(&manifest, Split::Valid)?.into_iter().map(|(_, ex)| ex).collect();
    let meta = CheckpointMeta { init_seed: echo.init_seed, root_seed: cfg.seed };
    let initial = build_model(model, echo.init_seed)?;
    let mut last_best = usize::MAX;
    let outcome = train(initial, &train_set, &valid_set, &echo.train, |entry, best| {
        append_log(&log_path, entry)?;
        if entry.best_epoch != last_best {
            last_best = entry.best_epoch;
            save_checkpoint(&ckpt, best, meta)?;
        }
        Ok(())
    })?;
    save_checkpoint(&ckpt, &outcome.best, meta)?;
    echo.best_epoch = outcome.best_epoch;
    let text = serde_json::to_string_pretty(&echo).expect("run echo serialises");
    write_text(&echo_path, &text)?;
    Ok(TrainArtifacts { checkpoint: ckpt, log: log_path, best_epoch: outcome.best_epoch, reused: false })
}

/// Key cells of a config's table row and which table it belongs to.
pub fn row_keys(model: &ModelConfig) -> (bool, Vec<String>) {
    let (front, back) = model.split();
    (model.design == Design::SisoIterative, vec![front.to_string(), back.to_string()])
}

fn table_for(iterative: bool) -> BucketTable {
    if iterative {
        BucketTable::new(TABLE2_CAPTION, &TABLE2_KEYS)
    } else {
        BucketTable::new(TABLE1_CAPTION, &TABLE1_KEYS)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalArtifacts {
    pub records: Vec<EvalRecord>,
    pub dir: PathBuf,
    pub table_markdown: String,
    pub table_plain: String,
}

/// Scores a checkpoint (default: the configured model's run) on the eval
/// split and writes records, table, CSV and plots.
pub fn cmd_evaluate(ctx: &Context, checkpoint: Option<&Path>) -> Result<EvalArtifacts> {
    let ckpt = match checkpoint {
        Some(p) => ctx.workdir.join(p),
        None => ctx.run_dir(&ctx.config.model.resolve()?).join(CHECKPOINT_FILE),
    };
    let (model, _) = load_checkpoint(&ckpt)?;
    let manifest = ctx.config.manifest_path(&ctx.workdir);
    let entries: Vec<_> = read_manifest(&manifest)?.into_iter().filter(|e| e.split == ctx.config.eval.split).collect();
    if entries.is_empty() {
        return Err(seplab_core::Error::InvalidInput(format!("no {} utterances in {}", ctx.config.eval.split.name(), manifest.display())).into());
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let records = evaluate_manifest(&model, &entries, base)?;

    let id = model.config.id();
    let dir = ctx.report_dir().join(&id);
    create_dir(&dir)?;
    write_records(&dir.join(RECORDS_FILE), &records)?;
    let metric = ctx.config.eval.metric;
    let stats = bucket_by_overlap(&records)?;
    let (iterative, keys) = row_keys(&model.config);
    let mut table = table_for(iterative);
    table.rows.push(TableRow::from_stats(keys, &stats, metric));
    let (md, plain) = (table.render_markdown(), table.render_plain());
    write_text(&dir.join("table.md"), &md)?;
    write_text(&dir.join("table.txt"), &plain)?;
    let mut csv = format!("{CSV_HEADER}\n");
    csv_rows(&id, &stats).iter().for_each(|r| {
        let _ = writeln!(csv, "{r}");
    });
    write_text(&dir.join("buckets.csv"), &csv)?;
    emit_plots(&[(id, records.clone())], &dir.join("plots"), metric)?;
    Ok(EvalArtifacts { records, dir, table_markdown: md, table_plain: plain })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub table1: Vec<(String, usize)>,
    pub table2: Vec<(String, usize)>,
    pub spread1: f64,
    pub spread2: f64,
}

impl ParamCheck {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.spread1 < tolerance && self.spread2 < tolerance
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (title, rows, spread) in [("SIMO-only and mixed splits", &self.table1, self.spread1), ("iterative splits", &self.table2, self.spread2)] {
            let _ = writeln!(out, "{title}:");
            for (id, n) in rows.iter() {
                let _ = writeln!(out, "  {id:<22} {n:>10}");
            }
            let _ = writeln!(out, "  pairwise relative difference (%):");
            let _ = write!(out, "  {:<22}", "");
            for (id, _) in rows.iter() {
                let _ = write!(out, " {id:>20}");
            }
            let _ = writeln!(out);
            for (a, na) in rows.iter() {
                let _ = write!(out, "  {a:<22}");
                for (_, nb) in rows.iter() {
                    let d = 100.0 * (*na as f64 - *nb as f64).abs() / (*na.max(nb) as f64);
                    let _ = write!(out, " {d:>20.2}");
                }
                let _ = writeln!(out);
            }
            let _ = writeln!(out, "  max pairwise difference: {:.2}%\n", 100.0 * spread);
        }
        out
    }
}

/// Parameter counts of every Table-1 and Table-2 split at the configured widths.
pub fn cmd_paramcheck(ctx: &Context) -> Result<ParamCheck> {
    let base = ctx.config.model.base();
    let count = |cfgs: Vec<ModelConfig>| -> Result<Vec<(String, usize)>> {
        cfgs.iter().map(|c| Ok((c.id(), count_parameters(&build_model(c, 0)?)))).collect()
    };
    let table1 = count(table1_configs(&base))?;
    let table2 = count(table2_configs(&base))?;
    let spread = |rows: &[(String, usize)]| max_relative_spread(&rows.iter().map(|r| r.1).collect::<Vec<_>>());
    Ok(ParamCheck { spread1: spread(&table1), spread2: spread(&table2), table1, table2 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepScope {
    Table1,
    Table2,
    Both,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub tables: Vec<BucketTable>,
    pub runs: Vec<(ModelConfig, Vec<EvalRecord>)>,
    pub text: String,
}

/// Trains and evaluates every split of the chosen tables, then renders them
/// next to the reported numbers.
pub fn cmd_sweep(ctx: &Context, scope: SweepScope) -> Result<SweepReport> {
    let base = ctx.config.model.base();
    let mut configs = Vec::new();
    if scope != SweepScope::Table2 {
        configs.extend(table1_configs(&base));
    }
    if scope != SweepScope::Table1 {
        configs.extend(table2_configs(&base));
    }
    let mut runs = Vec::new();
    for model in configs {
        log::info!("sweep: {}", model.id());
        let art = train_model(ctx, &model)?;
        let rel = art.checkpoint.strip_prefix(&ctx.workdir).unwrap_or(&art.checkpoint).to_path_buf();
        let ev = cmd_evaluate(ctx, Some(&rel))?;
        runs.push((model, ev.records));
    }
    let report = render_runs(ctx, &runs, "sweep")?;
    Ok(SweepReport { tables: report.0, runs, text: report.1 })
}

/// Renders stored records of every evaluated config found under the report
/// directory, together with the reported tables.
pub fn cmd_report(ctx: &Context) -> Result<String> {
    let root = ctx.report_dir();
    let mut runs = Vec::new();
    if root.is_dir() {
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root).map_err(|e| Error::io(&root, e))?.filter_map(|e| e.ok().map(|e| e.path())).collect();
        dirs.sort();
        for d in dirs {
            let rec = d.join(RECORDS_FILE);
            let run = ctx.workdir.join("runs").join(d.file_name().unwrap_or_default()).join(RUN_ECHO_FILE);
            let Ok(text) = fs::read_to_string(&run) else { continue };
            if !rec.is_file() {
                continue;
            }
            let echo: RunEcho = serde_json::from_str(&text).map_err(|e| Error::format(&run, e))?;
            runs.push((echo.model, read_records(&rec)?));
        }
    }
    Ok(render_runs(ctx, &runs, "summary")?.1)
}

fn order_key(m: &ModelConfig) -> (bool, std::cmp::Reverse<usize>) {
    let (iterative, _) = row_keys(m);
    let k = m.split().0;
    // Table 1 lists SIMO blocks descending, Table 2 encoder blocks ascending
    (iterative, std::cmp::Reverse(if iterative { usize::MAX - k } else { k }))
}

fn render_runs(ctx: &Context, runs: &[(ModelConfig, Vec<EvalRecord>)], name: &str) -> Result<(Vec<BucketTable>, String)> {
    let metric = ctx.config.eval.metric;
    let dir = ctx.report_dir().join(name);
    create_dir(&dir)?;
    let mut sorted: Vec<&(ModelConfig, Vec<EvalRecord>)> = runs.iter().collect();
    sorted.sort_by_key(|(m, _)| order_key(m));
    let mut t1 = table_for(false);
    let mut t2 = table_for(true);
    let mut csv = format!("{CSV_HEADER}\n");
    for (m, recs) in &sorted {
        let stats = bucket_by_overlap(recs)?;
        let (iterative, keys) = row_keys(m);
        let row = TableRow::from_stats(keys, &stats, metric);
        if iterative { &mut t2 } else { &mut t1 }.rows.push(row);
        for r in csv_rows(&m.id(), &stats) {
            let _ = writeln!(csv, "{r}");
        }
    }
    write_text(&dir.join("buckets.csv"), &csv)?;
    let mut md = String::new();
    let mut plain = String::new();
    let mut tables = Vec::new();
    for (measured, reported) in [(t1, reported_table1()), (t2, reported_table2())] {
        if measured.rows.is_empty() {
            continue;
        }
        for t in [&measured, &reported] {
            let _ = writeln!(md, "{}", t.render_markdown());
            let _ = writeln!(plain, "{}", t.render_plain());
        }
        tables.push(measured);
    }
    if tables.is_empty() {
        for t in [reported_table1(), reported_table2()] {
            let _ = writeln!(md, "{}", t.render_markdown());
            let _ = writeln!(plain, "{}", t.render_plain());
        }
    }
    write_text(&dir.join("tables.md"), &md)?;
    write_text(&dir.join("tables.txt"), &plain)?;
    if !runs.is_empty() {
        let plot_runs: Vec<(String, Vec<EvalRecord>)> = sorted.iter().map(|(m, r)| (m.id(), r.clone())).collect();
        emit_plots(&plot_runs, &dir.join("plots"), metric)?;
    }
    Ok((tables, plain))
}

/// Per-bucket spread (max − min over configs) of a table's means.
pub fn bucket_spreads(table: &BucketTable) -> [Option<f64>; 4] {
    std::array::from_fn(|b| {
        let vals: Vec<f64> = table.rows.iter().filter_map(|r| r.cells[b]).collect();
        if vals.len() < 2 {
            return None;
        }
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        Some(hi - lo)
    })
}
