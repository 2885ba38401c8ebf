//! Velocity, stationarity, bearings and the directed-velocity cosine.

use serde::Serialize;

use crate::geom::Vec3;
use crate::ingest::FusedTrack;

/// Separation below which a bearing is undefined.
pub const MIN_BEARING_SEPARATION_M: f64 = 1e-6;

/// One tick of an annotated track. `valid` is false wherever position or
/// velocity is unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct KinematicSample {
    pub t: i64,
    pub has_pos: bool,
    pub pos: Vec3,
    pub vel: Vec3,
    pub speed: f64,
    pub stationary: bool,
    pub valid: bool,
}

impl KinematicSample {
    pub fn invalid(t: i64) -> Self {
        KinematicSample { t, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTrack {
    pub animal_id: u32,
    pub t0: i64,
    pub dt: i64,
    pub samples: Vec<KinematicSample>,
}

/// Streaming differentiator. Emits each sample one tick late, once its
/// successor is known.
#[derive(Debug, Clone)]
pub struct VelocityEstimator {
    dt_s: f64,
    prev: Option<Vec3>,
    cur: Option<(i64, Option<Vec3>)>,
}

impl VelocityEstimator {
    pub fn new(dt_ms: i64) -> Self {
        VelocityEstimator { dt_s: dt_ms as f64 / 1000.0, prev: None, cur: None }
    }

    fn emit(&self, next: Option<Vec3>) -> Option<KinematicSample> {
        let (t, cur) = self.cur?;
        let Some(p) = cur else {
            return Some(KinematicSample::invalid(t));
        };
        let vel = match (self.prev, next) {
            (Some(a), Some(b)) => (b - a) / (2.0 * self.dt_s),
            (None, Some(b)) => (b - p) / self.dt_s,
            (Some(a), None) => (p - a) / self.dt_s,
            (None, None) => {
                return Some(KinematicSample { t, has_pos: true, pos: p, ..Default::default() });
            }
        };
        Some(KinematicSample { t, has_pos: true, pos: p, vel, speed: vel.norm(), stationary: false, valid: true })
    }

    pub fn push(&mut self, t: i64, pos: Option<Vec3>) -> Option<KinematicSample> {
        let out = self.emit(pos);
        if let Some((_, cur)) = self.cur {
            self.prev = cur;
        }
        self.cur = Some((t, pos));
        out
    }

    pub fn finish(&mut self) -> Option<KinematicSample> {
        let out = self.emit(None);
        self.prev = None;
        self.cur = None;
        out
    }
}

/// Streaming stationarity flag: a sample is stationary when it is valid
/// and no valid sample in `[t - window, t]` reaches `v_stat`.
#[derive(Debug, Clone)]
pub struct StationaryFlagger {
    v_stat: f64,
    window_ms: i64,
    last_fast: Option<i64>,
}

impl StationaryFlagger {
    pub fn new(v_stat: f64, w_stat_s: f64) -> Self {
        StationaryFlagger { v_stat, window_ms: (w_stat_s * 1000.0).round() as i64, last_fast: None }
    }

    pub fn apply(&mut self, s: &mut KinematicSample) {
        if s.valid && s.speed >= self.v_stat {
            self.last_fast = Some(s.t);
        }
        let recent_fast = self.last_fast.is_some_and(|tf| tf >= s.t - self.window_ms);
        s.stationary = s.valid && s.speed < self.v_stat && !recent_fast;
    }
}

/// Central differences inside runs, one-sided at run ends, invalid where
/// a sample has no positioned neighbor.
pub fn compute_velocity(track: &FusedTrack) -> KinematicTrack {
    let mut est = VelocityEstimator::new(track.dt);
    let mut samples = Vec::with_capacity(track.samples.len());
    for (k, &pos) in track.samples.iter().enumerate() {
        samples.extend(est.push(track.timestamp(k), pos));
    }
    samples.extend(est.finish());
    KinematicTrack { animal_id: track.animal_id, t0: track.t0, dt: track.dt, samples }
}

pub fn flag_stationary(samples: &mut [KinematicSample], v_stat: f64, w_stat_s: f64) {
    let mut flagger = StationaryFlagger::new(v_stat, w_stat_s);
    for s in samples {
        flagger.apply(s);
    }
}

/// Unit vector from one animal toward another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bearing(Vec3);

impl Bearing {
    pub fn vector(self) -> Vec3 {
        self.0
    }
}

pub fn bearing(from: Vec3, to: Vec3) -> Option<Bearing> {
    let d = to - from;
    let n = d.norm();
    (n >= MIN_BEARING_SEPARATION_M).then(|| Bearing(d / n))
}

/// Cosine between the mover's direction of motion and the bearing toward
/// the other animal: +1 heading straight at it, -1 heading straight away.
/// Undefined below `v_min` or without a bearing.
pub fn directed_velocity(vel: Vec3, speed: f64, b: Option<Bearing>, v_min: f64) -> Option<f64> {
    if !(speed >= v_min) || speed <= 0.0 {
        return None;
    }
    let b = b?;
    Some((vel / speed).dot(b.0).clamp(-1.0, 1.0))
}

/// DV of `mover` with respect to `other` at one tick, with the raw
/// projection of the velocity onto the bearing in m/s.
#[inline]
pub fn pair_dv(mover: &KinematicSample, other: &KinematicSample, v_min: f64) -> Option<(f64, f64)> {
    if !(mover.valid && other.valid) {
        return None;
    }
    let b = bearing(mover.pos, other.pos);
    let dv = directed_velocity(mover.vel, mover.speed, b, v_min)?;
    Some((dv, mover.vel.dot(b?.0)))
}
