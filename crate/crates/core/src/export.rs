//! Output file formats. All reals are written with Rust's shortest
//! round-trip formatting so files diff cleanly across platforms.

use std::fmt::{Display, Write as _};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::pipeline::{Analysis, SocialStructure};
use crate::social::{HeatMap, Matrix};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Config(format!("bad output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Header of animal ids, then one row per animal.
pub fn matrix_csv<T: Copy + Default + Display>(m: &Matrix<T>) -> String {
    let mut s = String::new();
    let ids: Vec<String> = (1..=m.n()).map(|i| i.to_string()).collect();
    s.push_str(&ids.join(","));
    s.push('\n');
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses a matrix CSV; returns the animal ids from the header and the values.
pub fn parse_matrix_csv(text: &str, source: &Path) -> Result<(Vec<u32>, Matrix<f64>)> {
    let bad = |message: String| Error::Malformed { path: source.to_owned(), message };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty matrix file".into()))?;
    let ids = header
        .split(',')
        .map(|f| f.trim().parse::<u32>().map_err(|_| bad(format!("bad animal id {f:?} in header"))))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (r, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(format!("row {}: bad value {f:?}", r + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        if row.len() != ids.len() {
            return Err(bad(format!("row {} has {} values, expected {}", r + 1, row.len(), ids.len())));
        }
        rows.push(row);
    }
    if rows.len() != ids.len() {
        return Err(bad(format!("{} rows for {} animals", rows.len(), ids.len())));
    }
    Ok((ids, Matrix::from_rows(rows)?))
}

/// Undirected graph with one weighted edge per positive entry above `min_weight`.
pub fn affiliation_dot(ids: &[u32], a: &Matrix<f64>, min_weight: f64) -> Result<String> {
    let n = a.n();
    for i in 0..n {
        if a.get(i, i) != 0.0 {
            return Err(Error::Config(format!("affiliation matrix has non-zero diagonal at {}", ids[i])));
        }
        for j in 0..n {
            if a.get(i, j) != a.get(j, i) {
                return Err(Error::Config(format!("affiliation matrix is not symmetric at ({}, {})", ids[i], ids[j])));
            }
            if a.get(i, j) < 0.0 {
                return Err(Error::Config("affiliation matrix has negative entries".into()));
            }
        }
    }
    let mut s = String::from("graph affiliation {\n");
    for id in ids {
        let _ = writeln!(s, "  {id};");
    }
    for i in 0..n {
        for j in i + 1..n {
            let w = a.get(i, j);
            if w > 0.0 && w >= min_weight {
                let _ = writeln!(s, "  {} -- {} [weight={}];", ids[i], ids[j], w);
            }
        }
    }
    s.push_str("}\n");
    Ok(s)
}

/// Directed graph with edge `i -> j` iff `i` dominates `j`.
pub fn hierarchy_dot(ids: &[u32], h: &Matrix<f64>) -> Result<String> {
    let n = h.n();
    for i in 0..n {
        for j in 0..n {
            let v = h.get(i, j);
            if v != 0.0 && v != 1.0 {
                return Err(Error::Config(format!("hierarchy matrix is not binary at ({}, {})", ids[i], ids[j])));
            }
            if i == j && v != 0.0 {
                return Err(Error::Config("hierarchy matrix has non-zero diagonal".into()));
            }
        }
    }
    let mut s = String::from("digraph hierarchy {\n");
    for id in ids {
        let _ = writeln!(s, "  {id};");
    }
    for i in 0..n {
        for j in 0..n {
            if h.get(i, j) == 1.0 {
                let _ = writeln!(s, "  {} -> {};", ids[i], ids[j]);
            }
        }
    }
    s.push_str("}\n");
    Ok(s)
}

/// `gy` rows of `gx` counts; row 0 is y index 0.
pub fn heatmap_csv(h: &HeatMap) -> String {
    let mut s = String::new();
    for row in h.cells.chunks(h.gx) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

/// Parses a heat-map grid CSV into `(gx, gy, cells)`.
pub fn parse_heatmap_csv(text: &str, source: &Path) -> Result<(usize, usize, Vec<u64>)> {
    let bad = |message: String| Error::Malformed { path: source.to_owned(), message };
    let mut cells = Vec::new();
    let mut gx = None;
    let mut gy = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let row = line
            .split(',')
            .map(|f| f.trim().parse::<u64>().map_err(|_| bad(format!("row {}: bad count {f:?}", gy + 1))))
            .collect::<Result<Vec<_>>>()?;
        match gx {
            None => gx = Some(row.len()),
            Some(w) if w != row.len() => return Err(bad(format!("row {} has {} cells, expected {w}", gy + 1, row.len()))),
            _ => {}
        }
        cells.extend(row);
        gy += 1;
    }
    let gx = gx.ok_or_else(|| bad("empty heat map".into()))?;
    Ok((gx, gy, cells))
}

/// Plain (P2) PGM: brighter pixels for larger counts.
pub fn heatmap_pgm(gx: usize, gy: usize, cells: &[u64]) -> String {
    let maxval = cells.iter().copied().max().unwrap_or(0).max(1);
    let mut s = format!("P2\n{gx} {gy}\n{maxval}\n");
    for row in cells.chunks(gx.max(1)) {
        let px: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&px.join(" "));
        s.push('\n');
    }
    s
}

fn event_params(a: &Analysis) -> serde_json::Value {
    let c = &a.config;
    json!({
        "dt_ms": c.dt_ms,
        "v_stat": c.v_stat,
        "w_stat_s": c.w_stat_s,
        "v_min": c.v_min,
        "grooming": c.grooming(),
        "move_away": c.move_away(),
        "chase": c.chase(),
        "attack": c.attack(),
    })
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record<'a> {
    Grooming(&'a crate::events::GroomingEvent),
    Withdrawal(&'a crate::events::MoveAwayEvent),
    Displacement(&'a crate::events::MoveAwayEvent),
    Chase(&'a crate::events::ChaseEvent),
    Attack(&'a crate::events::AttackEvent),
}

/// Header line with detector parameters, then all events in
/// `(t_start, type, ids)` order.
pub fn events_jsonl(a: &Analysis) -> Result<String> {
    use crate::events::MoveKind;
    let mut recs: Vec<((i64, u8, u32, u32), Record)> = Vec::new();
    recs.extend(a.grooming.iter().map(|e| ((e.t_start, 0, e.a, e.b), Record::Grooming(e))));
    recs.extend(a.move_away.iter().map(|e| {
        let r = match e.kind {
            MoveKind::Withdrawal => Record::Withdrawal(e),
            MoveKind::Displacement => Record::Displacement(e),
        };
        ((e.t_start, 1, e.mover, e.target), r)
    }));
    recs.extend(a.chase.iter().map(|e| ((e.t_start, 2, e.chaser, e.chasee), Record::Chase(e))));
    recs.extend(a.attack.iter().map(|e| ((e.t_onset, 3, e.attacker, e.target), Record::Attack(e))));
    recs.sort_by_key(|r| r.0);

    let mut s = serde_json::to_string(&json!({"type": "header", "params": event_params(a)}))?;
    s.push('\n');
    for (_, r) in &recs {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

/// Long format: one line per (ordered pair, bin), plus one `undefined` line per pair.
pub fn histograms_csv(a: &Analysis) -> String {
    let mut s = String::from("mover,target,bin,lo,hi,count\n");
    for h in &a.histograms {
        for (k, c) in h.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{},{},{}", h.mover, h.target, k, h.edge(k), h.edge(k + 1), c);
        }
        let _ = writeln!(s, "{},{},undefined,,,{}", h.mover, h.target, h.undefined);
    }
    s
}

pub fn rank_json(s: &SocialStructure) -> Result<String> {
    let mut out = serde_json::to_string_pretty(&json!({
        "order": s.rank.order,
        "out_degree": s.rank.out_degree,
        "intransitive_triads": s.rank.intransitive_triads,
        "tied_pairs": s.rank.tied_pairs,
        "weighted_degree": s.degree,
    }))?;
    out.push('\n');
    Ok(out)
}

/// One-line JSON run summary.
pub fn summary_json(a: &Analysis, s: &SocialStructure) -> Result<String> {
    let displacements = a.move_away.iter().filter(|e| e.kind == crate::events::MoveKind::Displacement).count();
    Ok(serde_json::to_string(&json!({
        "animals": a.n_animals,
        "span_days": a.span_days(),
        "ticks": a.ticks,
        "readings": a.readings,
        "late_readings": a.late_readings,
        "events": {
            "grooming": a.grooming.len(),
            "withdrawal": a.move_away.len() - displacements,
            "displacement": displacements,
            "chase": a.chase.len(),
            "attack": a.attack.len(),
        },
        "rank_order": s.rank.order,
    }))?)
}
