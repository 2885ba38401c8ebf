//! Reading ingest: CSV parsing, tag-to-animal mapping, multi-tag fusion
//! onto a uniform timeline, and short-gap interpolation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::BufRead;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Lower bound on the median absolute deviation used by the outlier gate.
pub const MAD_FLOOR_M: f64 = 0.01;

/// Maximum number of individually listed rejected lines in a [`ParseReport`].
const MAX_LISTED_REJECTS: usize = 1000;

/// One raw `(tag, timestamp, position)` tuple from the locating system.
#[derive(Debug, Clone, PartialEq)]
pub struct TagReading {
    pub tag_id: String,
    /// Milliseconds since epoch.
    pub t: i64,
    pub pos: Vec3,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ReadingsFormat {
    /// Skip the first line.
    pub has_header: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    WrongColumnCount,
    InvalidTimestamp,
    NegativeTimestamp,
    NonNumericCoordinate,
    NonFiniteCoordinate,
    InvalidUtf8,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::WrongColumnCount => "wrong column count",
            RejectReason::InvalidTimestamp => "invalid timestamp",
            RejectReason::NegativeTimestamp => "negative timestamp",
            RejectReason::NonNumericCoordinate => "non-numeric coordinate",
            RejectReason::NonFiniteCoordinate => "non-finite coordinate",
            RejectReason::InvalidUtf8 => "invalid utf-8",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RejectedLine {
    /// 1-based line number in the input.
    pub line: u64,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ParseReport {
    pub accepted: u64,
    pub rejected: u64,
    pub by_reason: BTreeMap<RejectReason, u64>,
    /// The first rejected lines, capped to keep the report bounded.
    pub rejected_lines: Vec<RejectedLine>,
}

impl ParseReport {
    fn reject(&mut self, line: u64, reason: RejectReason) {
        self.rejected += 1;
        *self.by_reason.entry(reason).or_default() += 1;
        if self.rejected_lines.len() < MAX_LISTED_REJECTS {
            self.rejected_lines.push(RejectedLine { line, reason });
        }
    }
}

/// Parses one `tag_id,t_ms,x_m,y_m,z_m` line.
pub fn parse_line(line: &str) -> std::result::Result<(&str, i64, Vec3), RejectReason> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    let mut fields = line.split(',');
    let mut next = || fields.next().ok_or(RejectReason::WrongColumnCount);
    let tag = next()?.trim();
    let t_raw = next()?.trim();
    let coords = [next()?.trim(), next()?.trim(), next()?.trim()];
    if fields.next().is_some() || tag.is_empty() {
        return Err(RejectReason::WrongColumnCount);
    }
    let t: i64 = t_raw.parse().map_err(|_| RejectReason::InvalidTimestamp)?;
    if t < 0 {
        return Err(RejectReason::NegativeTimestamp);
    }
    let mut xyz = [0.0; 3];
    for (slot, raw) in xyz.iter_mut().zip(coords) {
        let v: f64 = raw.parse().map_err(|_| RejectReason::NonNumericCoordinate)?;
        if !v.is_finite() {
            return Err(RejectReason::NonFiniteCoordinate);
        }
        *slot = v;
    }
    Ok((tag, t, Vec3::from(xyz)))
}

/// Streams readings from `input`, calling `sink(line_no, tag, t, pos)` for
/// every well-formed line. Malformed lines are recorded in the report and
/// skipped. Blank lines are ignored.
pub fn for_each_reading<R, F>(mut input: R, format: ReadingsFormat, mut sink: F) -> Result<ParseReport>
where
    R: BufRead,
    F: FnMut(u64, &str, i64, Vec3) -> Result<()>,
{
    let mut report = ParseReport::default();
    let mut buf = Vec::with_capacity(128);
    let mut line_no = 0u64;
    loop {
        buf.clear();
        if input.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        if line_no == 1 && format.has_header {
            continue;
        }
        if buf.last() == Some(&b'\n') {
            buf.pop();
        }
        let Ok(line) = std::str::from_utf8(&buf) else {
            report.reject(line_no, RejectReason::InvalidUtf8);
            continue;
        };
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Ok((tag, t, pos)) => {
                report.accepted += 1;
                sink(line_no, tag, t, pos)?;
            }
            Err(reason) => report.reject(line_no, reason),
        }
    }
    Ok(report)
}

/// Parses a whole readings stream into memory.
pub fn parse_readings<R: BufRead>(input: R, format: ReadingsFormat) -> Result<(Vec<TagReading>, ParseReport)> {
    let mut out = Vec::new();
    let report = for_each_reading(input, format, |_, tag, t, pos| {
        out.push(TagReading { tag_id: tag.to_owned(), t, pos });
        Ok(())
    })?;
    Ok((out, report))
}

/// Tag-to-animal association. Animal ids run from 1 to `n_animals`.
#[derive(Debug, Clone)]
pub struct CollarMap {
    tags: HashMap<String, u32>,
    n_animals: u32,
    expected_tags_per_animal: u32,
}

impl CollarMap {
    pub fn new<I, S>(entries: I, expected_tags_per_animal: u32) -> Result<Self>
    where
        I: IntoIterator<Item = (S, u32)>,
        S: Into<String>,
    {
        let mut tags = HashMap::new();
        let mut n_animals = 0;
        for (tag, animal) in entries {
            let tag = tag.into();
            if animal == 0 {
                return Err(Error::CollarMap(format!("tag {tag}: animal ids start at 1")));
            }
            if let Some(prev) = tags.insert(tag.clone(), animal) {
                if prev != animal {
                    return Err(Error::CollarMap(format!("tag {tag} maps to both {prev} and {animal}")));
                }
            }
            n_animals = n_animals.max(animal);
        }
        let mut seen = vec![false; n_animals as usize];
        for &a in tags.values() {
            seen[a as usize - 1] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::CollarMap(format!("animal {} has no tag", missing + 1)));
        }
        Ok(CollarMap { tags, n_animals, expected_tags_per_animal })
    }

    /// Reads `tag_id,animal_id` lines. A leading `tag_id,animal_id` header is tolerated.
    pub fn from_csv<R: BufRead>(input: R, expected_tags_per_animal: u32) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.eq_ignore_ascii_case("tag_id,animal_id")) {
                continue;
            }
            let (tag, animal) = line
                .split_once(',')
                .ok_or_else(|| Error::CollarMap(format!("line {}: expected tag_id,animal_id", i + 1)))?;
            let animal: u32 = animal
                .trim()
                .parse()
                .map_err(|_| Error::CollarMap(format!("line {}: bad animal id {animal:?}", i + 1)))?;
            entries.push((tag.trim().to_owned(), animal));
        }
        Self::new(entries, expected_tags_per_animal)
    }

    pub fn animal_of(&self, tag: &str) -> Option<u32> {
        self.tags.get(tag).copied()
    }

    pub fn n_animals(&self) -> u32 {
        self.n_animals
    }

    pub fn expected_tags_per_animal(&self) -> u32 {
        self.expected_tags_per_animal
    }

    /// Animals whose tag count differs from the expected count, as `(animal, count)`.
    pub fn tag_count_mismatches(&self) -> Vec<(u32, u32)> {
        let mut counts = vec![0u32; self.n_animals as usize];
        for &a in self.tags.values() {
            counts[a as usize - 1] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c != self.expected_tags_per_animal)
            .map(|(i, c)| (i as u32 + 1, c))
            .collect()
    }

    /// `(tag, animal)` pairs sorted by tag.
    pub fn entries(&self) -> Vec<(&str, u32)> {
        let mut v: Vec<_> = self.tags.iter().map(|(t, &a)| (t.as_str(), a)).collect();
        v.sort();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownTagPolicy {
    #[default]
    Skip,
    Strict,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct CollarReport {
    pub per_tag: BTreeMap<String, u64>,
    pub unknown_tag_drops: u64,
    pub unknown_tags: BTreeMap<String, u64>,
}

/// Partitions readings by animal. Index `a - 1` of the result holds animal `a`.
pub fn apply_collar_map(
    readings: &[TagReading],
    map: &CollarMap,
    policy: UnknownTagPolicy,
) -> Result<(Vec<Vec<TagReading>>, CollarReport)> {
    let mut groups = vec![Vec::new(); map.n_animals() as usize];
    let mut report = CollarReport::default();
    for (i, r) in readings.iter().enumerate() {
        match map.animal_of(&r.tag_id) {
            Some(a) => {
                *report.per_tag.entry(r.tag_id.clone()).or_default() += 1;
                groups[a as usize - 1].push(r.clone());
            }
            None if policy == UnknownTagPolicy::Strict => {
                return Err(Error::UnknownTag { tag: r.tag_id.clone(), line: i as u64 + 1 });
            }
            None => {
                report.unknown_tag_drops += 1;
                *report.unknown_tags.entry(r.tag_id.clone()).or_default() += 1;
            }
        }
    }
    Ok((groups, report))
}

/// Per-animal position track on a uniform timeline; `None` marks a gap.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedTrack {
    pub animal_id: u32,
    pub t0: i64,
    pub dt: i64,
    pub samples: Vec<Option<Vec3>>,
}

impl FusedTrack {
    pub fn timestamp(&self, k: usize) -> i64 {
        self.t0 + k as i64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Reusable buffers for [`fuse_window`].
#[derive(Debug, Default)]
pub struct FusionScratch {
    comp: Vec<f64>,
    dist: Vec<f64>,
}

fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) * 0.5
    }
}

fn median_in_place(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    median_sorted(v)
}

/// Fuses the readings of one window. Readings are rejected worst-first:
/// while the reading farthest from the component-wise median lies beyond
/// `outlier_k * max(MAD, MAD_FLOOR_M)`, drop it and recompute both on the
/// rest. The survivors are averaged. Dropping one reading at a time means
/// a gross outlier is removed before it can move the gate for the others,
/// so the estimate is exactly the one without it. The result does not
/// depend on the order of `readings` (which is reordered in place).
/// Panics on an empty window.
pub fn fuse_window(readings: &mut [Vec3], outlier_k: f64, scratch: &mut FusionScratch) -> Vec3 {
    assert!(!readings.is_empty(), "fuse_window on empty window");
    readings.sort_unstable_by(Vec3::total_cmp);
    let mut n = readings.len();
    while n > 2 {
        let active = &readings[..n];
        let comp = &mut scratch.comp;
        let mut component = |f: fn(&Vec3) -> f64| {
            comp.clear();
            comp.extend(active.iter().map(f));
            median_in_place(comp)
        };
        let median = Vec3::new(component(|p| p.x), component(|p| p.y), component(|p| p.z));

        let dist = &mut scratch.dist;
        dist.clear();
        dist.extend(active.iter().map(|p| p.distance(median)));
        comp.clear();
        comp.extend_from_slice(dist);
        let mad = median_in_place(comp).max(MAD_FLOOR_M);
        let (worst, &d) = dist
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty window");
        if d <= outlier_k * mad {
            break;
        }
        readings[worst..n].rotate_left(1);
        n -= 1;
    }
    let sum = readings[..n].iter().fold(Vec3::ZERO, |acc, p| acc + *p);
    sum / n as f64
}

pub(crate) fn check_fusion_params(dt: i64, outlier_k: f64) -> Result<()> {
    if dt <= 0 {
        return Err(Error::Config(format!("dt must be > 0 ms, got {dt}")));
    }
    if !(outlier_k > 0.0 && outlier_k.is_finite()) {
        return Err(Error::Config(format!("outlier_k must be > 0, got {outlier_k}")));
    }
    Ok(())
}

/// Fuses one animal's readings onto a timeline of `dt`-ms ticks aligned to
/// multiples of `dt`. The track spans the first through last populated
/// window; empty windows in between become gaps.
pub fn fuse_positions(animal_id: u32, readings: &[TagReading], dt: i64, outlier_k: f64) -> Result<FusedTrack> {
    check_fusion_params(dt, outlier_k)?;
    let mut keyed: Vec<(i64, Vec3)> = readings.iter().map(|r| (r.t.div_euclid(dt), r.pos)).collect();
    if keyed.is_empty() {
        return Ok(FusedTrack { animal_id, t0: 0, dt, samples: Vec::new() });
    }
    keyed.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let first = keyed[0].0;
    let last = keyed[keyed.len() - 1].0;
    let mut samples = vec![None; (last - first + 1) as usize];
    let mut scratch = FusionScratch::default();
    let mut window = Vec::new();
    for chunk in keyed.chunk_by(|a, b| a.0 == b.0) {
        window.clear();
        window.extend(chunk.iter().map(|(_, p)| *p));
        samples[(chunk[0].0 - first) as usize] = Some(fuse_window(&mut window, outlier_k, &mut scratch));
    }
    Ok(FusedTrack { animal_id, t0: first * dt, dt, samples })
}

/// Streaming form of [`fill_gaps`]: holds back up to `max_gap` gap samples
/// until it knows whether a position closes the run.
#[derive(Debug, Clone)]
pub struct GapFiller {
    max_gap: usize,
    last: Option<Vec3>,
    pending: usize,
}

impl GapFiller {
    pub fn new(max_gap: usize) -> Self {
        GapFiller { max_gap, last: None, pending: 0 }
    }

    pub fn push(&mut self, sample: Option<Vec3>, out: &mut impl Extend<Option<Vec3>>) {
        match sample {
            Some(p) => {
                if let (Some(a), n @ 1..) = (self.last, self.pending) {
                    let span = (n + 1) as f64;
                    out.extend((1..=n).map(|j| Some(a.lerp(p, j as f64 / span))));
                }
                self.pending = 0;
                self.last = Some(p);
                out.extend(std::iter::once(Some(p)));
            }
            None if self.last.is_none() => out.extend(std::iter::once(None)),
            None => {
                self.pending += 1;
                if self.pending > self.max_gap {
                    out.extend(std::iter::repeat_n(None, self.pending));
                    self.pending = 0;
                    self.last = None;
                }
            }
        }
    }

    pub fn finish(&mut self, out: &mut impl Extend<Option<Vec3>>) {
        out.extend(std::iter::repeat_n(None, self.pending));
        self.pending = 0;
        self.last = None;
    }
}

/// Replaces bracketed gap runs of at most `max_gap` samples with linear
/// interpolation. Longer and unbracketed runs are left as gaps.
pub fn fill_gaps(track: &FusedTrack, max_gap: usize) -> FusedTrack {
    let mut filler = GapFiller::new(max_gap);
    let mut samples = Vec::with_capacity(track.samples.len());
    for &s in &track.samples {
        filler.push(s, &mut samples);
    }
    filler.finish(&mut samples);
    FusedTrack { samples, ..track.clone() }
}
