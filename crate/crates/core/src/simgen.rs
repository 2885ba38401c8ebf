//! Synthetic tag-reading generator with known ground truth.
//!
//! Animals move on piecewise-linear paths inside the enclosure. Between
//! scripted episodes they alternate short rests with slow walks (below the
//! DV speed gate). Scripted grooming bouts and displacements are laid out
//! tick by tick so that the kinematic signature the detectors look for
//! matches the script exactly at zero noise.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`; stream 0 drives the displacement script, stream
//! 1 motion choices and stream 2 sensor noise. Gaussian noise and Poisson
//! arrivals use `rand_distr`. Versions of both crates are pinned: the
//! generated datasets depend on them.

use std::collections::VecDeque;
use std::io::Write;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::ingest::TagReading;
use crate::social::EnclosureSpec;

/// Time before a grooming bout from which both partners are reserved.
pub const GROOMING_LEAD_S: f64 = 40.0;
const WANDER_SPEED: f64 = 0.12;
const APPROACH_SPEED: f64 = 0.15;
const MAX_SPEED: f64 = 2.0;
const REST_MIN_S: f64 = 5.0;
const REST_MAX_S: f64 = 40.0;
const MIN_LEG_M: f64 = 0.5;
const MIN_APPROACH_M: f64 = 1.0;
const MIN_DETOUR_M: f64 = 1.2;
const MAX_DETOUR_M: f64 = 1.5;
const WALL_MARGIN_M: f64 = 0.15;
const STAGING_M: f64 = 0.9;
/// Minimum distance between the centers of concurrent grooming bouts.
const SPOT_CLEARANCE_M: f64 = 1.0;
const CONTACT_M: f64 = 0.45;
const PRE_FLEE_WAIT_S: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroomingScript {
    pub a: u32,
    pub b: u32,
    pub t_start_s: f64,
    pub duration_s: f64,
    #[serde(default = "default_groom_distance")]
    pub distance_m: f64,
}

fn default_groom_distance() -> f64 {
    0.25
}

/// A requested displacement: `mover` retreats from `target`. It runs at
/// the first tick at or after `t_request_s` when both animals are free.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplacementRequest {
    pub mover: u32,
    pub target: u32,
    pub t_request_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub animals: u32,
    pub duration_s: f64,
    pub dt_ms: i64,
    /// Timestamp of the first tick; rounded down to a multiple of `dt_ms`.
    pub start_ms: i64,
    /// Most dominant first; empty means `1..=animals`.
    pub planted_order: Vec<u32>,
    pub grooming: Vec<GroomingScript>,
    /// Base rate for [`plant_hierarchy`] (events/hour per adjacent-rank pair).
    pub displacement_rate_per_hour: f64,
    /// Reverse-direction episodes as a fraction of the forward rate.
    pub reverse_fraction: f64,
    pub displacements: Vec<DisplacementRequest>,
    pub tags_per_animal: u32,
    pub noise_sigma: f64,
    pub seed: u64,
    pub enclosure: EnclosureSpec,
    /// Height at which animals move.
    pub z_m: f64,
    pub flee_speed: f64,
    pub flee_s: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            animals: 6,
            duration_s: 3600.0,
            dt_ms: 1000,
            start_ms: 1_696_000_000_000,
            planted_order: Vec::new(),
            grooming: Vec::new(),
            displacement_rate_per_hour: 0.0,
            reverse_fraction: 0.2,
            displacements: Vec::new(),
            tags_per_animal: 4,
            noise_sigma: 0.1,
            seed: 0,
            enclosure: EnclosureSpec::default(),
            z_m: 0.5,
            flee_speed: 0.8,
            flee_s: 3.0,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> Error {
    Error::Scenario { field: field.into(), message: message.into() }
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| invalid("<file>", e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn order(&self) -> Vec<u32> {
        if self.planted_order.is_empty() {
            (1..=self.animals).collect()
        } else {
            self.planted_order.clone()
        }
    }

    pub fn n_ticks(&self) -> i64 {
        (self.duration_s * 1000.0 / self.dt_ms as f64).ceil() as i64
    }

    fn ticks(&self, secs: f64) -> i64 {
        (secs * 1000.0 / self.dt_ms as f64).ceil() as i64
    }

    pub fn t0(&self) -> i64 {
        self.start_ms.div_euclid(self.dt_ms) * self.dt_ms
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.animals;
        if n == 0 {
            return Err(invalid("animals", "must be >= 1"));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(invalid("duration_s", "must be > 0"));
        }
        if self.dt_ms <= 0 {
            return Err(invalid("dt_ms", "must be > 0"));
        }
        if self.start_ms < 0 {
            return Err(invalid("start_ms", "must be >= 0"));
        }
        let mut order = self.order();
        order.sort_unstable();
        if order != (1..=n).collect::<Vec<_>>() {
            return Err(invalid("planted_order", format!("must be a permutation of 1..={n}")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(invalid("noise_sigma", "must be >= 0"));
        }
        if self.tags_per_animal == 0 {
            return Err(invalid("tags_per_animal", "must be >= 1"));
        }
        if !(self.displacement_rate_per_hour >= 0.0 && self.displacement_rate_per_hour.is_finite()) {
            return Err(invalid("displacement_rate_per_hour", "must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.reverse_fraction) {
            return Err(invalid("reverse_fraction", "must lie in [0, 1]"));
        }
        if !(self.flee_speed > 0.0 && self.flee_speed <= MAX_SPEED) {
            return Err(invalid("flee_speed", format!("must lie in (0, {MAX_SPEED}]")));
        }
        if !(self.flee_s > 0.0) {
            return Err(invalid("flee_s", "must be > 0"));
        }
        self.enclosure.validate().map_err(|e| invalid("enclosure", e.to_string()))?;
        let known = |a: u32| (1..=n).contains(&a);
        for (i, g) in self.grooming.iter().enumerate() {
            let field = format!("grooming[{i}]");
            if !known(g.a) || !known(g.b) || g.a == g.b {
                return Err(invalid(&field, "needs two distinct known animals"));
            }
            if !(g.duration_s > 0.0) || !(g.t_start_s >= 0.0) || g.t_start_s + g.duration_s > self.duration_s {
                return Err(invalid(&field, "episode must lie within [0, duration_s]"));
            }
            if g.t_start_s > 0.0 && g.t_start_s < GROOMING_LEAD_S {
                return Err(invalid(&field, format!("t_start_s must be 0 or >= {GROOMING_LEAD_S}")));
            }
            if !(g.distance_m > 0.0 && g.distance_m <= 0.5) {
                return Err(invalid(&field, "distance_m must lie in (0, 0.5]"));
            }
        }
        for a in 1..=n {
            let mut spans: Vec<(f64, f64)> = self
                .grooming
                .iter()
                .filter(|g| g.a == a || g.b == a)
                .map(|g| (g.t_start_s - GROOMING_LEAD_S, g.t_start_s + g.duration_s + 2.0))
                .collect();
            spans.sort_by(|x, y| x.0.total_cmp(&y.0));
            if spans.windows(2).any(|w| w[1].0 < w[0].1) {
                return Err(invalid("grooming", format!("episodes overlap for animal {a}")));
            }
        }
        for (i, d) in self.displacements.iter().enumerate() {
            if !known(d.mover) || !known(d.target) || d.mover == d.target {
                return Err(invalid(&format!("displacements[{i}]"), "needs two distinct known animals"));
            }
            if !(d.t_request_s >= 0.0 && d.t_request_s < self.duration_s) {
                return Err(invalid(&format!("displacements[{i}]"), "t_request_s must lie in [0, duration_s)"));
            }
        }
        Ok(())
    }

    pub fn tag_id(&self, animal: u32, tag: u32) -> String {
        format!("T{:02}", (animal - 1) * self.tags_per_animal + tag + 1)
    }

    /// `tag_id,animal_id` lines.
    pub fn collar_csv(&self) -> String {
        let mut s = String::new();
        for a in 1..=self.animals {
            for k in 0..self.tags_per_animal {
                s.push_str(&format!("{},{}\n", self.tag_id(a, k), a));
            }
        }
        s
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Schedules Poisson displacement requests: for every dominant `d` above
/// subordinate `s` in the planted order, `s` retreats from `d` at rate
/// `base_rate * (1 + rank gap) / 2` per hour, and `d` from `s` at
/// `reverse_fraction` of that.
pub fn plant_hierarchy(scenario: &Scenario, base_rate: f64) -> Result<Scenario> {
    if !(base_rate > 0.0 && base_rate.is_finite()) {
        return Err(invalid("displacement_rate_per_hour", "base rate must be > 0"));
    }
    scenario.validate()?;
    let mut r = rng(scenario.seed, 0);
    let order = scenario.order();
    let mut reqs = Vec::new();
    let mut arrivals = |mover: u32, target: u32, per_hour: f64, r: &mut ChaCha8Rng| {
        if per_hour <= 0.0 {
            return;
        }
        let exp = Exp::new(per_hour / 3600.0).expect("positive rate");
        let mut t = exp.sample(r);
        while t < scenario.duration_s {
            reqs.push(DisplacementRequest { mover, target, t_request_s: t });
            t += exp.sample(r);
        }
    };
    for x in 0..order.len() {
        for y in x + 1..order.len() {
            let (d, s) = (order[x], order[y]);
            let rate = base_rate * (1.0 + (y - x) as f64) / 2.0;
            arrivals(s, d, rate, &mut r);
            arrivals(d, s, rate * scenario.reverse_fraction, &mut r);
        }
    }
    let mut out = scenario.clone();
    out.displacements.extend(reqs);
    out.displacements
        .sort_by(|a, b| a.t_request_s.total_cmp(&b.t_request_s).then(a.mover.cmp(&b.mover)).then(a.target.cmp(&b.target)));
    out.displacement_rate_per_hour = base_rate;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroomingEpisode {
    pub a: u32,
    pub b: u32,
    pub t_start: i64,
    pub t_end: i64,
    pub distance_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisplacementEpisode {
    pub mover: u32,
    pub target: u32,
    /// Tick at which the mover starts to leave.
    pub t_start: i64,
    /// Tick at which the mover stops.
    pub t_end: i64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruth {
    /// True per-tick positions, `tracks[animal - 1][tick]`; only filled by [`simulate`].
    pub tracks: Vec<Vec<Vec3>>,
    pub grooming: Vec<GroomingEpisode>,
    pub displacements: Vec<DisplacementEpisode>,
}

#[derive(Debug, Clone, Copy)]
struct Seg {
    start: i64,
    end: i64,
    from: Vec3,
    to: Vec3,
}

impl Seg {
    fn at(&self, k: i64) -> Vec3 {
        if k >= self.end {
            self.to
        } else if k <= self.start {
            self.from
        } else {
            self.from.lerp(self.to, (k - self.start) as f64 / (self.end - self.start) as f64)
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Approach {
    spot: Vec3,
    /// First tick of the hold.
    arrive: i64,
    /// Last tick of the hold; the first tick after the bout.
    release: i64,
}

#[derive(Debug)]
struct Agent {
    pos: Vec3,
    plan: VecDeque<Seg>,
    busy_until: i64,
    approach: Option<Approach>,
    /// Start ticks of this animal's future grooming reservations.
    reservations: VecDeque<i64>,
}

impl Agent {
    fn end_of_plan(&self) -> (i64, Vec3) {
        self.plan.back().map_or((i64::MIN, self.pos), |s| (s.end, s.to))
    }

    fn push(&mut self, start: i64, end: i64, to: Vec3) {
        let (_, from) = self.end_of_plan();
        self.plan.push_back(Seg { start, end, from, to });
    }
}

struct PlannedGrooming {
    prep: i64,
    a: usize,
    b: usize,
    spot_a: Vec3,
    spot_b: Vec3,
    arrive: i64,
    release: i64,
}

/// Tick-by-tick generator. Call [`Simulator::step`] until it returns
/// `None`; after each step [`Simulator::truth`] and
/// [`Simulator::readings`] describe the tick.
pub struct Simulator {
    sc: Scenario,
    dt_s: f64,
    n_ticks: i64,
    k: i64,
    agents: Vec<Agent>,
    groomings: Vec<PlannedGrooming>,
    next_grooming: usize,
    pending: VecDeque<(i64, usize, usize)>,
    motion: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    noise: Option<Normal<f64>>,
    truth_now: Vec<Vec3>,
    readings_now: Vec<(u32, u32, Vec3)>,
    episodes: GroundTruth,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let sc = scenario.clone();
        let dt_s = sc.dt_ms as f64 / 1000.0;
        let n = sc.animals as usize;
        let mut motion = rng(sc.seed, 1);
        let e = sc.enclosure;
        let z = sc.z_m;
        let mut agents: Vec<Agent> = (0..n)
            .map(|_| Agent {
                pos: random_point(&mut motion, &e, z),
                plan: VecDeque::new(),
                busy_until: 0,
                approach: None,
                reservations: VecDeque::new(),
            })
            .collect();

        let mut scripts: Vec<&GroomingScript> = sc.grooming.iter().collect();
        scripts.sort_by(|x, y| x.t_start_s.total_cmp(&y.t_start_s).then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
        let mut groomings = Vec::new();
        let mut placed: Vec<(f64, f64, Vec3)> = Vec::new();
        for g in scripts {
            let first = sc.ticks(g.t_start_s);
            let release = first + sc.ticks(g.duration_s);
            let prep_s = g.t_start_s - GROOMING_LEAD_S;
            let end_s = g.t_start_s + g.duration_s + GROOMING_LEAD_S;
            let busy: Vec<Vec3> =
                placed.iter().filter(|(a, b, _)| *a < end_s && prep_s < *b).map(|(_, _, c)| *c).collect();
            let clearance = |c: Vec3| busy.iter().map(|o| o.distance(c)).fold(f64::INFINITY, f64::min);
            let mut center = random_point_with_margin(&mut motion, &e, z, 0.5);
            for _ in 0..200 {
                if clearance(center) >= SPOT_CLEARANCE_M {
                    break;
                }
                let c = random_point_with_margin(&mut motion, &e, z, 0.5);
                if clearance(c) > clearance(center) {
                    center = c;
                }
            }
            placed.push((prep_s, end_s, center));
            let ang: f64 = motion.random_range(0.0..std::f64::consts::TAU);
            let half = Vec3::new(ang.cos(), ang.sin(), 0.0) * (g.distance_m / 2.0);
            let (a, b) = (g.a as usize - 1, g.b as usize - 1);
            let (spot_a, spot_b) = (center - half, center + half);
            let arrive = first - 1;
            let prep = if first == 0 { 0 } else { (first - sc.ticks(GROOMING_LEAD_S)).max(0) };
            agents[a].reservations.push_back(prep);
            agents[b].reservations.push_back(prep);
            if first == 0 {
                agents[a].pos = spot_a;
                agents[b].pos = spot_b;
            }
            groomings.push(PlannedGrooming { prep, a, b, spot_a, spot_b, arrive, release });
        }
        groomings.sort_by_key(|g| g.prep);

        let pending = sc
            .displacements
            .iter()
            .map(|d| (sc.ticks(d.t_request_s), d.mover as usize - 1, d.target as usize - 1))
            .collect();
        let noise = (sc.noise_sigma > 0.0).then(|| Normal::new(0.0, sc.noise_sigma).expect("finite sigma"));
        Ok(Simulator {
            n_ticks: sc.n_ticks(),
            dt_s,
            k: -1,
            agents,
            groomings,
            next_grooming: 0,
            pending,
            motion,
            noise_rng: rng(sc.seed, 2),
            noise,
            truth_now: vec![Vec3::ZERO; n],
            readings_now: Vec::with_capacity(n * sc.tags_per_animal as usize),
            episodes: GroundTruth::default(),
            sc,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.sc
    }

    pub fn n_ticks(&self) -> i64 {
        self.n_ticks
    }

    /// True positions at the current tick, indexed by `animal - 1`.
    pub fn truth(&self) -> &[Vec3] {
        &self.truth_now
    }

    /// `(animal, tag index, position)` for every reading of the current tick.
    pub fn readings(&self) -> &[(u32, u32, Vec3)] {
        &self.readings_now
    }

    /// Scripted episodes that have started so far.
    pub fn episodes(&self) -> &GroundTruth {
        &self.episodes
    }

    pub fn into_episodes(self) -> GroundTruth {
        self.episodes
    }

    fn t_of(&self, k: i64) -> i64 {
        self.sc.t0() + k * self.sc.dt_ms
    }

    fn walk_ticks(&self, dist: f64, speed: f64) -> i64 {
        if dist <= 1e-12 {
            0
        } else {
            (dist / (speed * self.dt_s)).ceil() as i64
        }
    }

    /// Advances to the next tick; returns its timestamp.
    pub fn step(&mut self) -> Option<i64> {
        if self.k + 1 >= self.n_ticks {
            return None;
        }
        self.k += 1;
        let k = self.k;
        for ag in &mut self.agents {
            while ag.plan.front().is_some_and(|s| s.end < k) {
                let s = ag.plan.pop_front().expect("checked");
                ag.pos = s.to;
            }
            if let Some(s) = ag.plan.front() {
                ag.pos = s.at(k);
            }
        }
        self.start_groomings(k);
        self.depart_for_groomings(k);
        self.start_displacements(k);
        for i in 0..self.agents.len() {
            if self.agents[i].plan.is_empty() {
                self.plan_background(i, k);
            }
        }

        let t = self.t_of(k);
        self.readings_now.clear();
        for (i, ag) in self.agents.iter().enumerate() {
            self.truth_now[i] = ag.pos;
            for tag in 0..self.sc.tags_per_animal {
                let p = match &self.noise {
                    Some(nd) => {
                        let r = &mut self.noise_rng;
                        ag.pos + Vec3::new(nd.sample(r), nd.sample(r), nd.sample(r))
                    }
                    None => ag.pos,
                };
                self.readings_now.push((i as u32 + 1, tag, p));
            }
        }
        Some(t)
    }

    fn start_groomings(&mut self, k: i64) {
        while let Some(g) = self.groomings.get(self.next_grooming).filter(|g| g.prep <= k) {
            let (a, b, arrive, release) = (g.a, g.b, g.arrive, g.release);
            let spots = [(a, g.spot_a), (b, g.spot_b)];
            self.next_grooming += 1;
            for (i, spot) in spots {
                let ag = &mut self.agents[i];
                ag.reservations.pop_front();
                ag.busy_until = release + 1;
                if arrive < k {
                    // bout starts at tick 0: animals were placed on their spots
                    ag.plan.clear();
                    ag.plan.push_back(Seg { start: k, end: release, from: spot, to: spot });
                    ag.pos = spot;
                    ag.approach = None;
                    let leave = self.leave_point(spot);
                    self.push_walk(i, release, leave, WANDER_SPEED);
                } else {
                    ag.approach = Some(Approach { spot, arrive, release });
                }
            }
            self.episodes.grooming.push(GroomingEpisode {
                a: a.min(b) as u32 + 1,
                b: a.max(b) as u32 + 1,
                t_start: self.t_of(arrive + 1),
                t_end: self.t_of(release),
                distance_m: spots[0].1.distance(spots[1].1),
            });
        }
    }

    /// Path from `from` to `spot`, detouring when the two are too close
    /// for the arrival to read as motion.
    fn approach_path(&mut self, from: Vec3, spot: Vec3) -> Vec<Vec3> {
        if from.distance(spot) >= MIN_APPROACH_M {
            return vec![spot];
        }
        for _ in 0..64 {
            let w = random_point(&mut self.motion, &self.sc.enclosure, self.sc.z_m);
            let len = from.distance(w) + w.distance(spot);
            if w.distance(spot) >= MIN_APPROACH_M * 0.6 && (MIN_DETOUR_M..=MAX_DETOUR_M).contains(&len) {
                return vec![w, spot];
            }
        }
        vec![spot]
    }

    fn depart_for_groomings(&mut self, k: i64) {
        for i in 0..self.agents.len() {
            let Some(ap) = self.agents[i].approach else { continue };
            let pos = self.agents[i].pos;
            let direct = pos.distance(ap.spot);
            let longest = if direct >= MIN_APPROACH_M { direct } else { MAX_DETOUR_M };
            let est = self.walk_ticks(longest, APPROACH_SPEED);
            let remaining = ap.arrive - k;
            if remaining > est {
                continue;
            }
            let path = self.approach_path(pos, ap.spot);
            let ag = &mut self.agents[i];
            ag.approach = None;
            ag.plan.clear();
            ag.plan.push_back(Seg { start: k, end: k, from: pos, to: pos });
            let mut legs = Vec::new();
            let mut prev = pos;
            for &p in &path {
                legs.push((p, prev.distance(p)));
                prev = p;
            }
            let total: f64 = legs.iter().map(|l| l.1).sum();
            let span = remaining.max(1);
            let mut t = k;
            let mut acc = 0.0;
            for (n, (p, len)) in legs.iter().enumerate() {
                acc += len;
                let end = if n + 1 == legs.len() {
                    k + span
                } else {
                    (k + ((acc / total) * span as f64).round() as i64).clamp(t + 1, k + span - 1)
                };
                ag.push(t, end, *p);
                t = end;
            }
            ag.push(t, ap.release, ap.spot);
            let leave = self.leave_point(ap.spot);
            self.push_walk(i, ap.release, leave, WANDER_SPEED);
        }
    }

    fn leave_point(&mut self, from: Vec3) -> Vec3 {
        for _ in 0..64 {
            let w = random_point(&mut self.motion, &self.sc.enclosure, self.sc.z_m);
            if w.distance(from) >= MIN_LEG_M {
                return w;
            }
        }
        random_point(&mut self.motion, &self.sc.enclosure, self.sc.z_m)
    }

    fn push_walk(&mut self, i: usize, start: i64, to: Vec3, speed: f64) -> i64 {
        let (_, from) = self.agents[i].end_of_plan();
        let n = self.walk_ticks(from.distance(to), speed).max(1);
        self.agents[i].push(start, start + n, to);
        start + n
    }

    fn plan_background(&mut self, i: usize, k: i64) {
        let rest_s: f64 = self.motion.random_range(REST_MIN_S..REST_MAX_S);
        let rest_end = k + ((rest_s / self.dt_s).floor() as i64).max(1);
        let pos = self.agents[i].pos;
        self.agents[i].plan.push_back(Seg { start: k, end: rest_end, from: pos, to: pos });
        let w = self.leave_point(pos);
        self.push_walk(i, rest_end, w, WANDER_SPEED);
    }

    fn free(&self, i: usize, k: i64, until: i64) -> bool {
        let ag = &self.agents[i];
        ag.busy_until <= k && ag.approach.is_none() && ag.reservations.front().is_none_or(|&r| r > until + 2)
    }

    /// Picks a flee direction near a diagonal and a start point from which
    /// both the staging point behind and the flight path ahead stay inside.
    fn displacement_geometry(&mut self) -> (Vec3, Vec3) {
        let e = self.sc.enclosure;
        let flee = self.sc.flee_speed * self.sc.flee_s + 0.1;
        let (lo_x, hi_x) = (WALL_MARGIN_M, e.extent_x - WALL_MARGIN_M);
        let (lo_y, hi_y) = (WALL_MARGIN_M, e.extent_y - WALL_MARGIN_M);
        let inside = |p: Vec3| p.x >= lo_x && p.x <= hi_x && p.y >= lo_y && p.y <= hi_y;
        let mut fallback = None;
        for _ in 0..256 {
            let quadrant = self.motion.random_range(0..4) as f64;
            let ang = (45.0 + 90.0 * quadrant + self.motion.random_range(-7.0..7.0)).to_radians();
            let u = Vec3::new(ang.cos(), ang.sin(), 0.0);
            let p = random_point(&mut self.motion, &e, self.sc.z_m);
            fallback.get_or_insert((p, u));
            if inside(p - u * STAGING_M) && inside(p + u * flee) {
                return (p, u);
            }
        }
        fallback.expect("at least one draw")
    }

    fn start_displacements(&mut self, k: i64) {
        let mut idx = 0;
        let mut scanned = 0;
        while idx < self.pending.len() && scanned < 32 {
            let (req, s, d) = self.pending[idx];
            if req > k {
                break;
            }
            scanned += 1;
            if !self.agents[s].busy_until.max(self.agents[d].busy_until).le(&k) {
                idx += 1;
                continue;
            }
            let (p_s, u) = self.displacement_geometry();
            let stage = p_s - u * STAGING_M;
            let contact = p_s - u * CONTACT_M;
            let n_s = self.walk_ticks(self.agents[s].pos.distance(p_s), APPROACH_SPEED);
            let n_d = self.walk_ticks(self.agents[d].pos.distance(stage), APPROACH_SPEED);
            let k_b = (k + n_d).max(k + n_s + self.sc.ticks(PRE_FLEE_WAIT_S));
            let k_c = k_b + self.walk_ticks(STAGING_M - CONTACT_M, APPROACH_SPEED).max(1);
            let n_flee = self.sc.ticks(self.sc.flee_s).max(1);
            let end = k_c + n_flee + 2;
            if end >= self.n_ticks {
                self.pending.remove(idx);
                continue;
            }
            if !(self.free(s, k, end) && self.free(d, k, end)) {
                idx += 1;
                continue;
            }
            self.pending.remove(idx);

            let here_s = self.agents[s].pos;
            let here_d = self.agents[d].pos;
            let flee_to = p_s + u * (self.sc.flee_speed * n_flee as f64 * self.dt_s);
            let ms = &mut self.agents[s];
            ms.plan.clear();
            ms.plan.push_back(Seg { start: k, end: k, from: here_s, to: here_s });
            ms.push(k, k + n_s, p_s);
            ms.push(k + n_s, k_c, p_s);
            ms.push(k_c, k_c + n_flee, flee_to);
            ms.push(k_c + n_flee, end, flee_to);
            ms.busy_until = end;
            let md = &mut self.agents[d];
            md.plan.clear();
            md.plan.push_back(Seg { start: k, end: k, from: here_d, to: here_d });
            md.push(k, k + n_d, stage);
            md.push(k + n_d, k_b, stage);
            md.push(k_b, k_c, contact);
            md.push(k_c, end, contact);
            md.busy_until = end;
            self.episodes.displacements.push(DisplacementEpisode {
                mover: s as u32 + 1,
                target: d as u32 + 1,
                t_start: self.t_of(k_c),
                t_end: self.t_of(k_c + n_flee),
            });
        }
    }

    /// Generates the whole scenario into memory.
    pub fn run_to_end(mut self) -> (Vec<TagReading>, GroundTruth) {
        let n = self.sc.animals as usize;
        let mut readings = Vec::new();
        let mut tracks = vec![Vec::with_capacity(self.n_ticks as usize); n];
        let tags: Vec<Vec<String>> =
            (1..=self.sc.animals).map(|a| (0..self.sc.tags_per_animal).map(|k| self.sc.tag_id(a, k)).collect()).collect();
        while let Some(t) = self.step() {
            for (i, p) in self.truth_now.iter().enumerate() {
                tracks[i].push(*p);
            }
            for &(a, tag, pos) in &self.readings_now {
                readings.push(TagReading { tag_id: tags[a as usize - 1][tag as usize].clone(), t, pos });
            }
        }
        let mut truth = self.episodes;
        truth.tracks = tracks;
        (readings, truth)
    }
}

fn random_point_with_margin(r: &mut ChaCha8Rng, e: &EnclosureSpec, z: f64, margin: f64) -> Vec3 {
    let mx = margin.min(e.extent_x / 2.0 - 1e-9);
    let my = margin.min(e.extent_y / 2.0 - 1e-9);
    Vec3::new(r.random_range(mx..e.extent_x - mx), r.random_range(my..e.extent_y - my), z)
}

fn random_point(r: &mut ChaCha8Rng, e: &EnclosureSpec, z: f64) -> Vec3 {
    random_point_with_margin(r, e, z, WALL_MARGIN_M)
}

/// Runs a scenario to completion. Displacement requests are planted first
/// when the scenario has a base rate and no explicit requests.
pub fn simulate(scenario: &Scenario) -> Result<(Vec<TagReading>, GroundTruth)> {
    let sc = prepare(scenario)?;
    Ok(Simulator::new(&sc)?.run_to_end())
}

/// Applies [`plant_hierarchy`] when the scenario asks for it.
pub fn prepare(scenario: &Scenario) -> Result<Scenario> {
    scenario.validate()?;
    if scenario.displacement_rate_per_hour > 0.0 && scenario.displacements.is_empty() {
        plant_hierarchy(scenario, scenario.displacement_rate_per_hour)
    } else {
        Ok(scenario.clone())
    }
}

/// Streams a scenario as readings CSV into `out`; returns the episodes
/// and the number of readings written.
pub fn write_readings_csv<W: Write>(scenario: &Scenario, mut out: W) -> Result<(GroundTruth, u64)> {
    let mut sim = Simulator::new(scenario)?;
    let tags: Vec<Vec<String>> = (1..=scenario.animals)
        .map(|a| (0..scenario.tags_per_animal).map(|k| scenario.tag_id(a, k)).collect())
        .collect();
    let mut count = 0u64;
    while let Some(t) = sim.step() {
        for &(a, tag, p) in sim.readings() {
            writeln!(out, "{},{},{},{},{}", tags[a as usize - 1][tag as usize], t, p.x, p.y, p.z)?;
            count += 1;
        }
    }
    out.flush()?;
    Ok((sim.into_episodes(), count))
}

/// Ground-truth JSONL: a scenario record, then one record per episode.
pub fn ground_truth_jsonl(scenario: &Scenario, truth: &GroundTruth) -> Result<String> {
    use serde_json::json;
    let mut s = serde_json::to_string(&json!({
        "type": "scenario",
        "animals": scenario.animals,
        "planted_order": scenario.order(),
        "seed": scenario.seed,
        "t0": scenario.t0(),
        "dt_ms": scenario.dt_ms,
        "ticks": scenario.n_ticks(),
        "noise_sigma": scenario.noise_sigma,
    }))?;
    s.push('\n');
    for g in &truth.grooming {
        let mut v = serde_json::to_value(g)?;
        v["type"] = json!("grooming");
        s.push_str(&serde_json::to_string(&v)?);
        s.push('\n');
    }
    for d in &truth.displacements {
        let mut v = serde_json::to_value(d)?;
        v["type"] = json!("displacement");
        s.push_str(&serde_json::to_string(&v)?);
        s.push('\n');
    }
    Ok(s)
}
