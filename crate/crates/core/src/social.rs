//! Aggregation of events and samples into the group-level structures:
//! affiliation (A), away counts (TA), hierarchy (H), rank order, DV
//! histograms and occupancy heat maps.
//!
//! Matrices are indexed by `animal_id - 1`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{GroomingEvent, MoveAwayEvent};
use crate::kinematics::{pair_dv, KinematicTrack};

/// Dense row-major square matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Matrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Matrix<T> {
    pub fn zeros(n: usize) -> Self {
        Matrix { n, data: vec![T::default(); n * n] }
    }

    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Config(format!("matrix is not square ({n} rows)")));
        }
        Ok(Matrix { n, data: rows.into_iter().flatten().collect() })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.n.max(1)).take(self.n)
    }

    pub fn map<U: Copy + Default>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix { n: self.n, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Tie strength in seconds of grooming per day.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AffiliationMatrix {
    pub values: Matrix<f64>,
    pub span_days: f64,
}

/// `counts[i][j]`: move-away events with mover `i+1` and target `j+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AwayCountMatrix {
    pub counts: Matrix<u64>,
}

/// `dominates[i][j] == 1` iff animal `i+1` dominates animal `j+1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierarchyMatrix {
    pub dominates: Matrix<u8>,
}

pub fn build_affiliation(events: &[GroomingEvent], span_days: f64, n: usize) -> Result<AffiliationMatrix> {
    if !(span_days > 0.0 && span_days.is_finite()) {
        return Err(Error::Config(format!("span_days must be > 0, got {span_days}")));
    }
    let mut seconds = Matrix::<f64>::zeros(n);
    for e in events {
        let (i, j) = (e.a as usize - 1, e.b as usize - 1);
        seconds.set(i, j, seconds.get(i, j) + e.duration_s);
    }
    let mut values = Matrix::zeros(n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (seconds.get(i, j) + seconds.get(j, i)) / span_days;
            values.set(i, j, v);
            values.set(j, i, v);
        }
    }
    Ok(AffiliationMatrix { values, span_days })
}

/// Row sums of A.
pub fn weighted_degree(a: &AffiliationMatrix) -> Vec<f64> {
    a.values.rows().map(|r| r.iter().sum()).collect()
}

pub fn build_away_counts<'a>(events: impl IntoIterator<Item = &'a MoveAwayEvent>, n: usize) -> AwayCountMatrix {
    let mut counts = Matrix::zeros(n);
    for e in events {
        let (i, j) = (e.mover as usize - 1, e.target as usize - 1);
        counts.set(i, j, counts.get(i, j) + 1);
    }
    AwayCountMatrix { counts }
}

/// `i` dominates `j` when `j` moves away from `i` strictly more often than
/// the reverse. Equal counts give no edge.
pub fn build_hierarchy(ta: &AwayCountMatrix) -> HierarchyMatrix {
    let n = ta.counts.n();
    let mut dominates = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && ta.counts.get(j, i) > ta.counts.get(i, j) {
                dominates.set(i, j, 1);
            }
        }
    }
    HierarchyMatrix { dominates }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankOrder {
    /// Animal ids, most dominant first.
    pub order: Vec<u32>,
    /// Out-degree in H, indexed by `animal_id - 1`.
    pub out_degree: Vec<u32>,
    /// Dominance cycles `a -> b -> c -> a`, listed once with `a` smallest.
    pub intransitive_triads: Vec<[u32; 3]>,
    /// Pairs `(i, j)`, `i < j`, with no dominance edge either way.
    pub tied_pairs: Vec<(u32, u32)>,
}

pub fn rank_order(h: &HierarchyMatrix, ta: &AwayCountMatrix) -> RankOrder {
    let n = h.dominates.n();
    let d = |i: usize, j: usize| h.dominates.get(i, j) == 1;
    let out_degree: Vec<u32> = (0..n).map(|i| (0..n).filter(|&j| d(i, j)).count() as u32).collect();
    let provoked: Vec<i64> = (0..n)
        .map(|i| (0..n).map(|j| ta.counts.get(j, i) as i64 - ta.counts.get(i, j) as i64).sum())
        .collect();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&x, &y| {
        out_degree[y]
            .cmp(&out_degree[x])
            .then(provoked[y].cmp(&provoked[x]))
            .then(x.cmp(&y))
    });

    let mut intransitive_triads = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in a + 1..n {
                if b != c && d(a, b) && d(b, c) && d(c, a) {
                    intransitive_triads.push([a as u32 + 1, b as u32 + 1, c as u32 + 1]);
                }
            }
        }
    }
    let mut tied_pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if !d(i, j) && !d(j, i) {
                tied_pairs.push((i as u32 + 1, j as u32 + 1));
            }
        }
    }
    RankOrder {
        order: idx.into_iter().map(|i| i as u32 + 1).collect(),
        out_degree,
        intransitive_triads,
        tied_pairs,
    }
}

/// Histogram of DV values over uniform bins on [-1, 1]. Bins are half
/// open except the last, which includes 1.0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DvHistogram {
    pub mover: u32,
    pub target: u32,
    pub counts: Vec<u64>,
    pub undefined: u64,
}

impl DvHistogram {
    pub fn new(mover: u32, target: u32, bins: usize) -> Self {
        assert!(bins >= 1, "histogram needs at least one bin");
        DvHistogram { mover, target, counts: vec![0; bins], undefined: 0 }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edge(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / self.bins() as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins()).map(|k| self.edge(k)).collect()
    }

    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.bins();
        let mut k = (((v + 1.0) * 0.5 * n as f64).floor().max(0.0) as usize).min(n - 1);
        // reconcile the scaled index with the exact edges
        while k > 0 && v < self.edge(k) {
            k -= 1;
        }
        while k + 1 < n && v >= self.edge(k + 1) {
            k += 1;
        }
        k
    }

    pub fn add(&mut self, dv: Option<f64>) {
        match dv {
            Some(v) => {
                let k = self.bin_of(v);
                self.counts[k] += 1;
            }
            None => self.undefined += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.undefined
    }
}

/// Histogram of DV of `mover` toward `target` over their common timeline.
pub fn dv_histogram(mover: &KinematicTrack, target: &KinematicTrack, bins: usize, v_min: f64) -> DvHistogram {
    let mut h = DvHistogram::new(mover.animal_id, target.animal_id, bins);
    let start = mover.t0.min(target.t0);
    let end = |t: &KinematicTrack| t.t0 + t.samples.len() as i64 * t.dt;
    let stop = end(mover).max(end(target));
    let mut t = start;
    while t < stop {
        let si = crate::events::sample_at(mover, t);
        let sj = crate::events::sample_at(target, t);
        h.add(pair_dv(&si, &sj, v_min).map(|(d, _)| d));
        t += mover.dt;
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnclosureSpec {
    pub extent_x: f64,
    pub extent_y: f64,
    pub extent_z: f64,
}

impl Default for EnclosureSpec {
    fn default() -> Self {
        EnclosureSpec { extent_x: 3.0, extent_y: 3.0, extent_z: 3.0 }
    }
}

impl EnclosureSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("extent_x", self.extent_x), ("extent_y", self.extent_y), ("extent_z", self.extent_z)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// 2D occupancy counts; `cells[y * gx + x]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatMap {
    pub animal_id: u32,
    pub gx: usize,
    pub gy: usize,
    pub enclosure: EnclosureSpec,
    pub cells: Vec<u64>,
    pub total: u64,
}

impl HeatMap {
    pub fn new(animal_id: u32, enclosure: EnclosureSpec, gx: usize, gy: usize) -> Self {
        assert!(gx > 0 && gy > 0, "heat map dimensions must be positive");
        HeatMap { animal_id, gx, gy, enclosure, cells: vec![0; gx * gy], total: 0 }
    }

    fn index(coord: f64, extent: f64, cells: usize) -> usize {
        let k = (coord * cells as f64 / extent).floor();
        if k.is_nan() || k < 0.0 {
            0
        } else {
            (k as usize).min(cells - 1)
        }
    }

    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        (Self::index(x, self.enclosure.extent_x, self.gx), Self::index(y, self.enclosure.extent_y, self.gy))
    }

    pub fn add(&mut self, x: f64, y: f64) {
        let (cx, cy) = self.cell_of(x, y);
        self.cells[cy * self.gx + cx] += 1;
        self.total += 1;
    }

    pub fn get(&self, cx: usize, cy: usize) -> u64 {
        self.cells[cy * self.gx + cx]
    }

    pub fn max_cell(&self) -> u64 {
        self.cells.iter().copied().max().unwrap_or(0)
    }
}

pub fn build_heatmap(
    track: &KinematicTrack,
    enclosure: EnclosureSpec,
    gx: usize,
    gy: usize,
    stationary_only: bool,
) -> HeatMap {
    let mut h = HeatMap::new(track.animal_id, enclosure, gx, gy);
    for s in &track.samples {
        if s.valid && (s.stationary || !stationary_only) {
            h.add(s.pos.x, s.pos.y);
        }
    }
    h
}

/// Cosine similarity of two heat maps; 0 when either is empty.
pub fn overlap_score(h1: &HeatMap, h2: &HeatMap) -> Result<f64> {
    if h1.gx != h2.gx || h1.gy != h2.gy || h1.enclosure != h2.enclosure {
        return Err(Error::Config("heat maps have different grids".into()));
    }
    let (mut dot, mut n1, mut n2) = (0.0, 0.0, 0.0);
    for (&a, &b) in h1.cells.iter().zip(&h2.cells) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        n1 += a * a;
        n2 += b * b;
    }
    if n1 == 0.0 || n2 == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (n1.sqrt() * n2.sqrt())).clamp(0.0, 1.0))
}
