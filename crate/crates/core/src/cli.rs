//! Command-line front end.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{CountMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::export::{self, write_atomic};
use crate::ingest::{for_each_reading, CollarMap, ReadingsFormat, UnknownTagPolicy};
use crate::pipeline::Pipeline;
use crate::simgen::{self, Scenario};

#[derive(Debug, Parser)]
#[command(name = "troop-net", version, about = "Social structure from RTLS tag positions")]
pub struct Cli {
    /// JSON config file with flat PipelineConfig keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for per-animal and per-pair stages.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory (or file for the export commands).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GraphKind {
    Affiliation,
    Hierarchy,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground truth.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full pipeline and write every output.
    Analyze {
        #[arg(long)]
        readings: Option<PathBuf>,
        #[arg(long)]
        collars: Option<PathBuf>,
        /// Skip the first line of the readings file.
        #[arg(long)]
        header: bool,
        #[arg(long, value_enum)]
        count_mode: Option<CountModeArg>,
    },
    /// Convert a matrix CSV into a DOT graph.
    ExportGraph {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long, value_enum)]
        kind: GraphKind,
        #[arg(long)]
        min_weight: Option<f64>,
    },
    /// Convert a heat-map CSV into a PGM image.
    ExportHeatmap {
        #[arg(long)]
        heatmap: PathBuf,
    },
    /// Print a readable report from an analyze output directory.
    Report,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CountModeArg {
    Events,
    Samples,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be >= 1".into()));
    }
    match cli.command {
        Command::Simulate { ref scenario, seed } => cmd_simulate(scenario, seed, cli.out.as_deref()),
        Command::Analyze { readings, collars, header, count_mode } => {
            let mut cfg = match &cli.config {
                Some(p) => PipelineConfig::load(p)?,
                None => PipelineConfig::default(),
            };
            if readings.is_some() {
                cfg.readings = readings;
            }
            if collars.is_some() {
                cfg.collars = collars;
            }
            if header {
                cfg.header = true;
            }
            if let Some(m) = count_mode {
                cfg.count_mode = match m {
                    CountModeArg::Events => CountMode::Events,
                    CountModeArg::Samples => CountMode::Samples,
                };
            }
            if cli.out.is_some() {
                cfg.out = cli.out;
            }
            cfg.validate()?;
            let summary = cmd_analyze(&cfg, cli.threads)?;
            println!("{summary}");
            Ok(())
        }
        Command::ExportGraph { ref matrix, kind, min_weight } => {
            let out = cli.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
            let min_weight = match (min_weight, &cli.config) {
                (Some(w), _) => w,
                (None, Some(p)) => PipelineConfig::load(p)?.min_weight,
                (None, None) => 0.0,
            };
            cmd_export_graph(matrix, kind, out, min_weight)
        }
        Command::ExportHeatmap { ref heatmap } => {
            let out = cli.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
            cmd_export_heatmap(heatmap, out)
        }
        Command::Report => {
            let dir = cli.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;
            print!("{}", cmd_report(dir)?);
            Ok(())
        }
    }
}

fn read_file(path: &Path, what: &'static str) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(what, path.to_owned()),
        _ => e.into(),
    })
}

fn open_file(path: &Path, what: &'static str) -> Result<File> {
    File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(what, path.to_owned()),
        _ => e.into(),
    })
}

/// Writes `readings.csv`, `collars.csv` and `ground_truth.jsonl` into `out`.
pub fn cmd_simulate(scenario: &Path, seed: Option<u64>, out: Option<&Path>) -> Result<()> {
    let out = out.ok_or_else(|| Error::Config("--out is required".into()))?;
    let mut sc = Scenario::from_json(&read_file(scenario, "scenario file")?)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    let sc = simgen::prepare(&sc)?;
    std::fs::create_dir_all(out)?;

    let readings_path = out.join("readings.csv");
    let tmp = out.join(".readings.csv.tmp");
    let (truth, count) = {
        let w = BufWriter::with_capacity(1 << 20, File::create(&tmp)?);
        match simgen::write_readings_csv(&sc, w) {
            Ok(r) => r,
            Err(e) => {
                let _ = std::fs::remove_file(&tmp);
                return Err(e);
            }
        }
    };
    std::fs::rename(&tmp, &readings_path)?;
    write_atomic(&out.join("collars.csv"), sc.collar_csv().as_bytes())?;
    write_atomic(&out.join("ground_truth.jsonl"), simgen::ground_truth_jsonl(&sc, &truth)?.as_bytes())?;
    println!(
        "{}",
        serde_json::json!({
            "seed": sc.seed,
            "animals": sc.animals,
            "ticks": sc.n_ticks(),
            "readings": count,
            "grooming_episodes": truth.grooming.len(),
            "displacement_episodes": truth.displacements.len(),
        })
    );
    Ok(())
}

/// Runs the pipeline on the configured inputs and writes every output
/// file. Returns the one-line JSON summary.
pub fn cmd_analyze(cfg: &PipelineConfig, threads: usize) -> Result<String> {
    let readings = cfg.readings.as_deref().ok_or_else(|| Error::Config("readings path is required".into()))?;
    let collars = cfg.collars.as_deref().ok_or_else(|| Error::Config("collars path is required".into()))?;
    let out = cfg.out.as_deref().ok_or_else(|| Error::Config("--out is required".into()))?;

    let map = CollarMap::from_csv(BufReader::new(open_file(collars, "collar file")?), cfg.tags_per_animal)?;
    for (animal, count) in map.tag_count_mismatches() {
        eprintln!("warning: animal {animal} has {count} tags, expected {}", cfg.tags_per_animal);
    }
    let policy = cfg.unknown_tag_policy();
    let mut pipeline = Pipeline::new(cfg, map.n_animals() as usize, threads)?;
    let mut unknown = 0u64;
    let input = BufReader::with_capacity(1 << 20, open_file(readings, "readings file")?);
    let format = ReadingsFormat { has_header: cfg.header };
    let report = for_each_reading(input, format, |line, tag, t, pos| {
        match map.animal_of(tag) {
            Some(a) => pipeline.push(a, t, pos),
            None if policy == UnknownTagPolicy::Strict => {
                return Err(Error::UnknownTag { tag: tag.to_owned(), line });
            }
            None => unknown += 1,
        }
        Ok(())
    })?;
    if report.rejected > 0 {
        eprintln!("warning: {} malformed lines skipped", report.rejected);
    }
    if unknown > 0 {
        eprintln!("warning: {unknown} readings from unknown tags skipped");
    }
    let analysis = pipeline.finish()?;
    if analysis.late_readings > 0 {
        eprintln!("warning: {} readings arrived too late and were dropped", analysis.late_readings);
    }
    let social = analysis.social_structure()?;

    std::fs::create_dir_all(out)?;
    let ids: Vec<u32> = (1..=analysis.n_animals as u32).collect();
    let a = &social.affiliation.values;
    let h = social.hierarchy.dominates.map(f64::from);
    write_atomic(&out.join("events.jsonl"), export::events_jsonl(&analysis)?.as_bytes())?;
    write_atomic(&out.join("affiliation.csv"), export::matrix_csv(a).as_bytes())?;
    write_atomic(&out.join("away_counts.csv"), export::matrix_csv(&social.away.counts).as_bytes())?;
    write_atomic(&out.join("hierarchy.csv"), export::matrix_csv(&social.hierarchy.dominates).as_bytes())?;
    write_atomic(&out.join("overlap.csv"), export::matrix_csv(&social.overlap).as_bytes())?;
    write_atomic(&out.join("rank.json"), export::rank_json(&social)?.as_bytes())?;
    write_atomic(&out.join("dv_histograms.csv"), export::histograms_csv(&analysis).as_bytes())?;
    write_atomic(&out.join("affiliation.dot"), export::affiliation_dot(&ids, a, cfg.min_weight)?.as_bytes())?;
    write_atomic(&out.join("hierarchy.dot"), export::hierarchy_dot(&ids, &h)?.as_bytes())?;
    for hm in &analysis.heatmaps {
        write_atomic(&out.join(format!("heatmap_{}.csv", hm.animal_id)), export::heatmap_csv(hm).as_bytes())?;
        write_atomic(
            &out.join(format!("heatmap_{}.pgm", hm.animal_id)),
            export::heatmap_pgm(hm.gx, hm.gy, &hm.cells).as_bytes(),
        )?;
    }
    let summary = export::summary_json(&analysis, &social)?;
    write_atomic(&out.join("summary.json"), format!("{summary}\n").as_bytes())?;
    write_atomic(&out.join("config.resolved"), cfg.to_json().as_bytes())?;
    Ok(summary)
}

pub fn cmd_export_graph(matrix: &Path, kind: GraphKind, out: &Path, min_weight: f64) -> Result<()> {
    let (ids, m) = export::parse_matrix_csv(&read_file(matrix, "matrix file")?, matrix)?;
    let dot = match kind {
        GraphKind::Affiliation => export::affiliation_dot(&ids, &m, min_weight)?,
        GraphKind::Hierarchy => export::hierarchy_dot(&ids, &m)?,
    };
    write_atomic(out, dot.as_bytes())
}

pub fn cmd_export_heatmap(heatmap: &Path, out: &Path) -> Result<()> {
    let (gx, gy, cells) = export::parse_heatmap_csv(&read_file(heatmap, "heat-map file")?, heatmap)?;
    write_atomic(out, export::heatmap_pgm(gx, gy, &cells).as_bytes())
}

/// Human-readable digest of `summary.json` and `rank.json` in `dir`.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let summary: serde_json::Value = serde_json::from_str(&read_file(&dir.join("summary.json"), "summary file")?)?;
    let rank: serde_json::Value = serde_json::from_str(&read_file(&dir.join("rank.json"), "rank file")?)?;
    let list = |v: &serde_json::Value| -> String {
        v.as_array()
            .map(|a| a.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" > "))
            .unwrap_or_default()
    };
    let mut s = String::new();
    s.push_str(&format!("animals: {}\n", summary["animals"]));
    s.push_str(&format!("span (days): {}\n", summary["span_days"]));
    s.push_str(&format!("readings: {} ({} late)\n", summary["readings"], summary["late_readings"]));
    if let Some(events) = summary["events"].as_object() {
        for (k, v) in events {
            s.push_str(&format!("{k}: {v}\n"));
        }
    }
    s.push_str(&format!("rank order: {}\n", list(&rank["order"])));
    let triads = rank["intransitive_triads"].as_array().map_or(0, Vec::len);
    let ties = rank["tied_pairs"].as_array().map_or(0, Vec::len);
    s.push_str(&format!("intransitive triads: {triads}\ntied pairs: {ties}\n"));
    Ok(s)
}
