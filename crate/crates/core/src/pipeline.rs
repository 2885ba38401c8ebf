//! Single-pass streaming analysis. Readings go in one at a time; fused,
//! annotated ticks flow through the per-pair detectors in fixed-size
//! chunks, so memory stays bounded by the reorder window and the chunk
//! size rather than by the length of the recording.
//!
//! Work inside a chunk is split per animal and per pair. Each unit owns
//! its state and results are merged in a fixed order, so output does not
//! depend on the thread count.

use std::collections::VecDeque;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::config::{CountMode, PipelineConfig};
use crate::error::{Error, Result};
use crate::events::{
    AttackDetector, AttackEvent, ChaseDetector, ChaseEvent, GroomingDetector, GroomingEvent, MoveAwayDetector,
    MoveAwayEvent,
};
use crate::geom::Vec3;
use crate::ingest::{check_fusion_params, fuse_window, FusionScratch, GapFiller};
use crate::kinematics::{pair_dv, KinematicSample, StationaryFlagger, VelocityEstimator};
use crate::social::{
    build_affiliation, build_away_counts, build_hierarchy, overlap_score, rank_order, weighted_degree,
    AffiliationMatrix, AwayCountMatrix, DvHistogram, HeatMap, HierarchyMatrix, Matrix, RankOrder,
};

const CHUNK_TICKS: i64 = 4096;

struct AnimalStage {
    dt: i64,
    outlier_k: f64,
    buckets: VecDeque<Vec<Vec3>>,
    spare: Vec<Vec<Vec3>>,
    scratch: FusionScratch,
    filler: GapFiller,
    filled: Vec<Option<Vec3>>,
    next_t: i64,
    velocity: VelocityEstimator,
    flagger: StationaryFlagger,
    heatmap: HeatMap,
    heatmap_stationary_only: bool,
    queue: VecDeque<KinematicSample>,
}

impl AnimalStage {
    fn annotate(&mut self, s: Option<KinematicSample>) {
        let Some(mut s) = s else { return };
        self.flagger.apply(&mut s);
        if s.valid && (s.stationary || !self.heatmap_stationary_only) {
            self.heatmap.add(s.pos.x, s.pos.y);
        }
        self.queue.push_back(s);
    }

    fn drain_filled(&mut self) {
        for k in 0..self.filled.len() {
            let pos = self.filled[k];
            let t = self.next_t;
            self.next_t += self.dt;
            let s = self.velocity.push(t, pos);
            self.annotate(s);
        }
        self.filled.clear();
    }

    /// Finalizes the oldest `n` windows.
    fn finalize(&mut self, n: usize) {
        for _ in 0..n {
            let mut bucket = self.buckets.pop_front().unwrap_or_default();
            let fused = (!bucket.is_empty()).then(|| fuse_window(&mut bucket, self.outlier_k, &mut self.scratch));
            bucket.clear();
            self.spare.push(bucket);
            self.filler.push(fused, &mut self.filled);
        }
        self.drain_filled();
    }

    fn finish(&mut self) {
        self.filler.finish(&mut self.filled);
        self.drain_filled();
        let s = self.velocity.finish();
        self.annotate(s);
    }
}

struct PairStage {
    a: usize,
    b: usize,
    v_min: f64,
    grooming: GroomingDetector,
    chase: ChaseDetector,
    away_ab: MoveAwayDetector,
    away_ba: MoveAwayDetector,
    attack_ab: AttackDetector,
    attack_ba: AttackDetector,
    hist_ab: DvHistogram,
    hist_ba: DvHistogram,
    grooming_events: Vec<GroomingEvent>,
    chase_events: Vec<ChaseEvent>,
    away_events: Vec<MoveAwayEvent>,
    attack_events: Vec<AttackEvent>,
}

impl PairStage {
    fn process(&mut self, sa: &[KinematicSample], sb: &[KinematicSample]) {
        for (x, y) in sa.iter().zip(sb) {
            let ab = pair_dv(x, y, self.v_min);
            let ba = pair_dv(y, x, self.v_min);
            self.grooming.push(x, y, &mut self.grooming_events);
            self.chase.push(x, y, &mut self.chase_events);
            self.away_ab.push(x, y, ab, &mut self.away_events);
            self.away_ba.push(y, x, ba, &mut self.away_events);
            self.attack_ab.push(x, ab.map(|d| d.0), &mut self.attack_events);
            self.attack_ba.push(y, ba.map(|d| d.0), &mut self.attack_events);
            self.hist_ab.add(ab.map(|d| d.0));
            self.hist_ba.add(ba.map(|d| d.0));
        }
    }

    fn finish(&mut self) {
        self.grooming.finish(&mut self.grooming_events);
        self.chase.finish(&mut self.chase_events);
        self.away_ab.finish(&mut self.away_events);
        self.away_ba.finish(&mut self.away_events);
        self.attack_ab.finish(&mut self.attack_events);
        self.attack_ba.finish(&mut self.attack_events);
    }
}

fn each_mut<T: Send>(pool: Option<&ThreadPool>, items: &mut [T], f: impl Fn(&mut T) + Sync + Send) {
    match pool {
        Some(pool) => pool.install(|| items.par_iter_mut().for_each(&f)),
        None => items.iter_mut().for_each(f),
    }
}

/// Streaming analyzer for `n_animals` animals with ids `1..=n_animals`.
pub struct Pipeline {
    cfg: PipelineConfig,
    animals: Vec<AnimalStage>,
    pairs: Vec<PairStage>,
    pool: Option<ThreadPool>,
    /// Tick index of `buckets[0]` for every animal.
    base_tick: Option<i64>,
    finalizing: bool,
    max_tick: i64,
    first_tick: Option<i64>,
    ticks_finalized: u64,
    frames: u64,
    readings: u64,
    late_readings: u64,
    cols: Vec<Vec<KinematicSample>>,
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig, n_animals: usize, threads: usize) -> Result<Self> {
        cfg.validate()?;
        check_fusion_params(cfg.dt_ms, cfg.outlier_k)?;
        if n_animals == 0 {
            return Err(Error::Config("at least one animal is required".into()));
        }
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let animals = (0..n_animals)
            .map(|i| AnimalStage {
                dt: cfg.dt_ms,
                outlier_k: cfg.outlier_k,
                buckets: VecDeque::new(),
                spare: Vec::new(),
                scratch: FusionScratch::default(),
                filler: GapFiller::new(cfg.max_gap),
                filled: Vec::new(),
                next_t: 0,
                velocity: VelocityEstimator::new(cfg.dt_ms),
                flagger: StationaryFlagger::new(cfg.v_stat, cfg.w_stat_s),
                heatmap: HeatMap::new(i as u32 + 1, cfg.enclosure(), cfg.grid_x, cfg.grid_y),
                heatmap_stationary_only: cfg.heatmap_stationary_only,
                queue: VecDeque::new(),
            })
            .collect();
        let (g, m, c, a) = (cfg.grooming(), cfg.move_away(), cfg.chase(), cfg.attack());
        let mut pairs = Vec::new();
        for i in 0..n_animals {
            for j in i + 1..n_animals {
                let (ia, ib) = (i as u32 + 1, j as u32 + 1);
                pairs.push(PairStage {
                    a: i,
                    b: j,
                    v_min: cfg.v_min,
                    grooming: GroomingDetector::new(ia, ib, cfg.dt_ms, &g),
                    chase: ChaseDetector::new(ia, ib, cfg.dt_ms, &c),
                    away_ab: MoveAwayDetector::new(ia, ib, cfg.dt_ms, &m),
                    away_ba: MoveAwayDetector::new(ib, ia, cfg.dt_ms, &m),
                    attack_ab: AttackDetector::new(ia, ib, &a),
                    attack_ba: AttackDetector::new(ib, ia, &a),
                    hist_ab: DvHistogram::new(ia, ib, cfg.bins),
                    hist_ba: DvHistogram::new(ib, ia, cfg.bins),
                    grooming_events: Vec::new(),
                    chase_events: Vec::new(),
                    away_events: Vec::new(),
                    attack_events: Vec::new(),
                });
            }
        }
        Ok(Pipeline {
            cfg: cfg.clone(),
            animals,
            pairs,
            pool,
            base_tick: None,
            finalizing: false,
            max_tick: i64::MIN,
            first_tick: None,
            ticks_finalized: 0,
            frames: 0,
            readings: 0,
            late_readings: 0,
            cols: vec![Vec::new(); n_animals],
        })
    }

    pub fn n_animals(&self) -> usize {
        self.animals.len()
    }

    /// Adds one reading for animal `animal_id` (1-based).
    pub fn push(&mut self, animal_id: u32, t: i64, pos: Vec3) {
        let idx = animal_id as usize - 1;
        let tick = t.div_euclid(self.cfg.dt_ms);
        let base = match self.base_tick {
            None => {
                self.base_tick = Some(tick);
                tick
            }
            Some(base) if tick < base => {
                if self.finalizing {
                    self.late_readings += 1;
                    return;
                }
                for a in &mut self.animals {
                    for _ in tick..base {
                        a.buckets.push_front(Vec::new());
                    }
                }
                self.base_tick = Some(tick);
                tick
            }
            Some(base) => base,
        };
        self.readings += 1;
        let slot = (tick - base) as usize;
        let animal = &mut self.animals[idx];
        while animal.buckets.len() <= slot {
            let b = animal.spare.pop().unwrap_or_default();
            animal.buckets.push_back(b);
        }
        animal.buckets[slot].push(pos);
        if tick > self.max_tick {
            self.max_tick = tick;
            let slack = (self.cfg.reorder_slack_ms + self.cfg.dt_ms - 1) / self.cfg.dt_ms;
            let closable = self.max_tick - slack - base;
            if closable >= CHUNK_TICKS {
                self.advance(closable as usize);
            }
        }
    }

    /// Finalizes the oldest `n` ticks and runs them through the detectors.
    fn advance(&mut self, n: usize) {
        let base = self.base_tick.expect("advance before any reading");
        if !self.finalizing {
            self.finalizing = true;
            self.first_tick = Some(base);
            for a in &mut self.animals {
                a.next_t = base * self.cfg.dt_ms;
            }
        }
        each_mut(self.pool.as_ref(), &mut self.animals, |a| a.finalize(n));
        self.base_tick = Some(base + n as i64);
        self.ticks_finalized += n as u64;
        self.run_frames();
    }

    fn run_frames(&mut self) {
        let ready = self.animals.iter().map(|a| a.queue.len()).min().unwrap_or(0);
        if ready == 0 {
            return;
        }
        for (col, a) in self.cols.iter_mut().zip(&mut self.animals) {
            col.clear();
            col.extend(a.queue.drain(..ready));
        }
        let cols = &self.cols;
        each_mut(self.pool.as_ref(), &mut self.pairs, |p| p.process(&cols[p.a], &cols[p.b]));
        self.frames += ready as u64;
    }

    /// Flushes every open window and detector.
    pub fn finish(mut self) -> Result<Analysis> {
        let Some(base) = self.base_tick else {
            return Err(Error::NoData);
        };
        let remaining = (self.max_tick - base + 1).max(0) as usize;
        self.advance(remaining);
        each_mut(self.pool.as_ref(), &mut self.animals, |a| a.finish());
        self.run_frames();
        each_mut(self.pool.as_ref(), &mut self.pairs, |p| p.finish());

        let n = self.animals.len();
        let mut grooming = Vec::new();
        let mut chase = Vec::new();
        let mut move_away = Vec::new();
        let mut attack = Vec::new();
        let mut histograms = Vec::with_capacity(n * (n - 1));
        let mut in_band = Matrix::<u64>::zeros(n);
        for p in self.pairs {
            grooming.extend(p.grooming_events);
            chase.extend(p.chase_events);
            move_away.extend(p.away_events);
            attack.extend(p.attack_events);
            in_band.set(p.a, p.b, p.away_ab.in_band_samples());
            in_band.set(p.b, p.a, p.away_ba.in_band_samples());
            histograms.push(p.hist_ab);
            histograms.push(p.hist_ba);
        }
        grooming.sort_by_key(|e| (e.t_start, e.a, e.b));
        chase.sort_by_key(|e| (e.t_start, e.chaser, e.chasee));
        move_away.sort_by_key(|e| (e.t_start, e.mover, e.target));
        attack.sort_by_key(|e| (e.t_onset, e.attacker, e.target));
        histograms.sort_by_key(|h| (h.mover, h.target));

        let first_tick = self.first_tick.unwrap_or(base);
        Ok(Analysis {
            config: self.cfg.clone(),
            n_animals: n,
            t_first: first_tick * self.cfg.dt_ms,
            ticks: self.ticks_finalized,
            frames: self.frames,
            readings: self.readings,
            late_readings: self.late_readings,
            grooming,
            move_away,
            chase,
            attack,
            in_band_samples: in_band,
            histograms,
            heatmaps: self.animals.into_iter().map(|a| a.heatmap).collect(),
        })
    }
}

/// Everything a pipeline run produces before aggregation into matrices.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub config: PipelineConfig,
    pub n_animals: usize,
    pub t_first: i64,
    /// Timeline length in ticks.
    pub ticks: u64,
    /// Ticks that went through the pair detectors (equals `ticks`).
    pub frames: u64,
    pub readings: u64,
    /// Readings that arrived after their window was closed.
    pub late_readings: u64,
    pub grooming: Vec<GroomingEvent>,
    pub move_away: Vec<MoveAwayEvent>,
    pub chase: Vec<ChaseEvent>,
    pub attack: Vec<AttackEvent>,
    pub in_band_samples: Matrix<u64>,
    /// One per ordered pair, sorted by (mover, target).
    pub histograms: Vec<DvHistogram>,
    pub heatmaps: Vec<HeatMap>,
}

#[derive(Debug, Clone)]
pub struct SocialStructure {
    pub affiliation: AffiliationMatrix,
    pub degree: Vec<f64>,
    pub away: AwayCountMatrix,
    pub hierarchy: HierarchyMatrix,
    pub rank: RankOrder,
    pub overlap: Matrix<f64>,
}

impl Analysis {
    /// Observed span: timeline length in days.
    pub fn span_days(&self) -> f64 {
        self.ticks as f64 * self.config.dt_ms as f64 / 86_400_000.0
    }

    pub fn away_counts(&self) -> AwayCountMatrix {
        let n = self.n_animals;
        let mut ta = match self.config.count_mode {
            CountMode::Events => build_away_counts(&self.move_away, n),
            CountMode::Samples => AwayCountMatrix { counts: self.in_band_samples.clone() },
        };
        if self.config.include_chase_attack_in_ta {
            let mut bump = |mover: u32, target: u32| {
                let (i, j) = (mover as usize - 1, target as usize - 1);
                ta.counts.set(i, j, ta.counts.get(i, j) + 1);
            };
            for c in &self.chase {
                bump(c.chasee, c.chaser);
            }
            for a in &self.attack {
                bump(a.target, a.attacker);
            }
        }
        ta
    }

    pub fn social_structure(&self) -> Result<SocialStructure> {
        let affiliation = build_affiliation(&self.grooming, self.span_days(), self.n_animals)?;
        let degree = weighted_degree(&affiliation);
        let away = self.away_counts();
        let hierarchy = build_hierarchy(&away);
        let rank = rank_order(&hierarchy, &away);
        let n = self.n_animals;
        let mut overlap = Matrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                overlap.set(i, j, overlap_score(&self.heatmaps[i], &self.heatmaps[j])?);
            }
        }
        Ok(SocialStructure { affiliation, degree, away, hierarchy, rank, overlap })
    }
}
