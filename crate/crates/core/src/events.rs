//! Behavioral episode detectors. Each detector is a small state machine
//! fed one tick at a time for one pair of animals; the batch functions
//! drive the same machines over whole tracks.

use serde::{Deserialize, Serialize};

use crate::kinematics::{pair_dv, KinematicSample, KinematicTrack};

fn secs_to_ms(s: f64) -> i64 {
    (s * 1000.0).round() as i64
}

fn duration_s(t_start: i64, t_end: i64) -> f64 {
    (t_end - t_start) as f64 / 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroomingEvent {
    /// Smaller animal id of the pair.
    pub a: u32,
    pub b: u32,
    pub t_start: i64,
    /// Exclusive end: last qualifying tick plus one sample period.
    pub t_end: i64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveKind {
    Withdrawal,
    Displacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoveAwayEvent {
    pub mover: u32,
    pub target: u32,
    pub t_start: i64,
    pub t_end: i64,
    pub mean_dv: f64,
    /// Mean of the unnormalized velocity projection onto the bearing, m/s.
    pub mean_projection: f64,
    #[serde(skip)]
    pub kind: MoveKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChaseEvent {
    pub chaser: u32,
    pub chasee: u32,
    pub t_start: i64,
    pub t_end: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackEvent {
    pub attacker: u32,
    pub target: u32,
    pub t_onset: i64,
    pub peak_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroomingParams {
    pub d_groom: f64,
    pub min_dur_s: f64,
    pub gap_merge_s: f64,
}

impl Default for GroomingParams {
    fn default() -> Self {
        GroomingParams { d_groom: 0.5, min_dur_s: 60.0, gap_merge_s: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveAwayParams {
    pub dv_lo: f64,
    pub dv_hi: f64,
    pub min_event_s: f64,
    pub proximity_gate: Option<f64>,
    pub v_min: f64,
    /// Look-back used to tell displacements from withdrawals.
    pub s_pre_s: f64,
    pub v_stat: f64,
}

impl Default for MoveAwayParams {
    fn default() -> Self {
        MoveAwayParams {
            dv_lo: -1.0,
            dv_hi: -0.7,
            min_event_s: 2.0,
            proximity_gate: None,
            v_min: 0.2,
            s_pre_s: 5.0,
            v_stat: 0.05,
        }
    }
}

impl MoveAwayParams {
    pub fn in_band(&self, dv: f64) -> bool {
        self.dv_lo <= dv && dv <= self.dv_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChaseParams {
    pub v_run: f64,
    pub r_chase: f64,
    pub dv_align: f64,
    pub min_dur_s: f64,
    pub v_min: f64,
}

impl Default for ChaseParams {
    fn default() -> Self {
        ChaseParams { v_run: 1.0, r_chase: 1.5, dv_align: 0.7, min_dur_s: 2.0, v_min: 0.2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub v_attack: f64,
    pub tau_s: f64,
    pub dv_align: f64,
    pub v_min: f64,
}

impl Default for AttackParams {
    fn default() -> Self {
        AttackParams { v_attack: 1.0, tau_s: 2.0, dv_align: 0.7, v_min: 0.2 }
    }
}

/// Grooming: both animals valid, stationary and within `d_groom` (3D).
#[derive(Debug, Clone)]
pub struct GroomingDetector {
    a: u32,
    b: u32,
    dt: i64,
    d_groom: f64,
    min_dur_s: f64,
    gap_merge_ms: i64,
    open: Option<(i64, i64)>,
}

impl GroomingDetector {
    pub fn new(a: u32, b: u32, dt: i64, p: &GroomingParams) -> Self {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        GroomingDetector {
            a,
            b,
            dt,
            d_groom: p.d_groom,
            min_dur_s: p.min_dur_s,
            gap_merge_ms: secs_to_ms(p.gap_merge_s),
            open: None,
        }
    }

    pub fn qualifies(&self, si: &KinematicSample, sj: &KinematicSample) -> bool {
        si.stationary && sj.stationary && si.pos.distance(sj.pos) <= self.d_groom
    }

    fn close(&mut self, out: &mut Vec<GroomingEvent>) {
        if let Some((t_start, t_end)) = self.open.take() {
            let duration_s = duration_s(t_start, t_end);
            if duration_s >= self.min_dur_s {
                out.push(GroomingEvent { a: self.a, b: self.b, t_start, t_end, duration_s });
            }
        }
    }

    pub fn push(&mut self, si: &KinematicSample, sj: &KinematicSample, out: &mut Vec<GroomingEvent>) {
        let t = si.t;
        if self.qualifies(si, sj) {
            match &mut self.open {
                Some((_, end)) if t - *end <= self.gap_merge_ms => *end = t + self.dt,
                _ => {
                    self.close(out);
                    self.open = Some((t, t + self.dt));
                }
            }
        } else if let Some((_, end)) = self.open {
            if t + self.dt - end > self.gap_merge_ms {
                self.close(out);
            }
        }
    }

    pub fn finish(&mut self, out: &mut Vec<GroomingEvent>) {
        self.close(out);
    }
}

#[derive(Debug, Clone)]
struct MoveRun {
    t_start: i64,
    t_end: i64,
    sum_dv: f64,
    sum_proj: f64,
    n: u32,
    kind: MoveKind,
    gate_ok: bool,
}

/// Move-away episodes of `mover` relative to `target`: maximal runs of
/// ticks with DV inside the closed band.
#[derive(Debug, Clone)]
pub struct MoveAwayDetector {
    mover: u32,
    target: u32,
    dt: i64,
    params: MoveAwayParams,
    s_pre_ms: i64,
    run: Option<MoveRun>,
    last_still: Option<i64>,
    last_moving: Option<i64>,
    in_band_samples: u64,
}

impl MoveAwayDetector {
    pub fn new(mover: u32, target: u32, dt: i64, params: &MoveAwayParams) -> Self {
        MoveAwayDetector {
            mover,
            target,
            dt,
            params: *params,
            s_pre_ms: secs_to_ms(params.s_pre_s),
            run: None,
            last_still: None,
            last_moving: None,
            in_band_samples: 0,
        }
    }

    /// In-band samples seen so far (after the proximity gate, if any).
    pub fn in_band_samples(&self) -> u64 {
        self.in_band_samples
    }

    fn kind_before(&self, t: i64) -> MoveKind {
        let from = t - self.s_pre_ms;
        let still = self.last_still.is_some_and(|ts| ts >= from);
        let moving = self.last_moving.is_some_and(|tm| tm >= from);
        if still && !moving {
            MoveKind::Displacement
        } else {
            MoveKind::Withdrawal
        }
    }

    fn close(&mut self, out: &mut Vec<MoveAwayEvent>) {
        let Some(run) = self.run.take() else { return };
        if run.gate_ok && duration_s(run.t_start, run.t_end) >= self.params.min_event_s {
            out.push(MoveAwayEvent {
                mover: self.mover,
                target: self.target,
                t_start: run.t_start,
                t_end: run.t_end,
                mean_dv: run.sum_dv / run.n as f64,
                mean_projection: run.sum_proj / run.n as f64,
                kind: run.kind,
            });
        }
    }

    /// `dv` is `pair_dv(mover, target)` for this tick.
    pub fn push(
        &mut self,
        si: &KinematicSample,
        sj: &KinematicSample,
        dv: Option<(f64, f64)>,
        out: &mut Vec<MoveAwayEvent>,
    ) {
        let t = si.t;
        match dv.filter(|&(d, _)| self.params.in_band(d)) {
            Some((d, proj)) => {
                let within_gate = self.params.proximity_gate.is_none_or(|g| si.pos.distance(sj.pos) <= g);
                if within_gate {
                    self.in_band_samples += 1;
                }
                match &mut self.run {
                    Some(run) => {
                        run.t_end = t + self.dt;
                        run.sum_dv += d;
                        run.sum_proj += proj;
                        run.n += 1;
                    }
                    None => {
                        self.run = Some(MoveRun {
                            t_start: t,
                            t_end: t + self.dt,
                            sum_dv: d,
                            sum_proj: proj,
                            n: 1,
                            kind: self.kind_before(t),
                            gate_ok: within_gate,
                        });
                    }
                }
            }
            None => self.close(out),
        }
        if si.valid {
            if si.speed < self.params.v_stat {
                self.last_still = Some(t);
            } else {
                self.last_moving = Some(t);
            }
        }
    }

    pub fn finish(&mut self, out: &mut Vec<MoveAwayEvent>) {
        self.close(out);
    }
}

/// Chasing: both running within `r_chase`, one heading at the other
/// while the other heads away. The animal moving toward the other is the
/// chaser; a role swap starts a new run.
#[derive(Debug, Clone)]
pub struct ChaseDetector {
    a: u32,
    b: u32,
    dt: i64,
    params: ChaseParams,
    run: Option<ChaseEvent>,
}

impl ChaseDetector {
    pub fn new(a: u32, b: u32, dt: i64, params: &ChaseParams) -> Self {
        ChaseDetector { a, b, dt, params: *params, run: None }
    }

    fn role(&self, sa: &KinematicSample, sb: &KinematicSample) -> Option<(u32, u32)> {
        let p = &self.params;
        if !(sa.valid && sb.valid && sa.speed > p.v_run && sb.speed > p.v_run) {
            return None;
        }
        if sa.pos.distance(sb.pos) > p.r_chase {
            return None;
        }
        let (ab, _) = pair_dv(sa, sb, p.v_min)?;
        let (ba, _) = pair_dv(sb, sa, p.v_min)?;
        if ab >= p.dv_align && ba <= -p.dv_align {
            Some((self.a, self.b))
        } else if ba >= p.dv_align && ab <= -p.dv_align {
            Some((self.b, self.a))
        } else {
            None
        }
    }

    fn close(&mut self, out: &mut Vec<ChaseEvent>) {
        if let Some(ev) = self.run.take() {
            if duration_s(ev.t_start, ev.t_end) >= self.params.min_dur_s {
                out.push(ev);
            }
        }
    }

    pub fn push(&mut self, sa: &KinematicSample, sb: &KinematicSample, out: &mut Vec<ChaseEvent>) {
        let t = sa.t;
        let role = self.role(sa, sb);
        match (&mut self.run, role) {
            (Some(ev), Some((c, e))) if ev.chaser == c && ev.chasee == e => ev.t_end = t + self.dt,
            (_, role) => {
                self.close(out);
                self.run = role.map(|(chaser, chasee)| ChaseEvent { chaser, chasee, t_start: t, t_end: t + self.dt });
            }
        }
    }

    pub fn finish(&mut self, out: &mut Vec<ChaseEvent>) {
        self.close(out);
    }
}

/// Attack onsets: speed rises from stationary to above `v_attack` within
/// `tau`, heading at the target at the first fast tick.
#[derive(Debug, Clone)]
pub struct AttackDetector {
    attacker: u32,
    target: u32,
    params: AttackParams,
    tau_ms: i64,
    last_still: Option<i64>,
    last_onset: Option<i64>,
    prev_fast: bool,
    active: Option<AttackEvent>,
}

impl AttackDetector {
    pub fn new(attacker: u32, target: u32, params: &AttackParams) -> Self {
        AttackDetector {
            attacker,
            target,
            params: *params,
            tau_ms: secs_to_ms(params.tau_s),
            last_still: None,
            last_onset: None,
            prev_fast: false,
            active: None,
        }
    }

    /// `dv` is the attacker's DV toward the target at this tick.
    pub fn push(&mut self, si: &KinematicSample, dv: Option<f64>, out: &mut Vec<AttackEvent>) {
        let t = si.t;
        let fast = si.valid && si.speed > self.params.v_attack;
        if fast && !self.prev_fast {
            let sudden = self.last_still.is_some_and(|ts| t - ts <= self.tau_ms);
            let aimed = dv.is_some_and(|d| d >= self.params.dv_align);
            let coalesced = self.last_onset.is_some_and(|to| t - to <= self.tau_ms);
            if sudden && aimed && !coalesced {
                self.active =
                    Some(AttackEvent { attacker: self.attacker, target: self.target, t_onset: t, peak_speed: si.speed });
                self.last_onset = Some(t);
            }
        }
        if fast {
            if let Some(ev) = &mut self.active {
                ev.peak_speed = ev.peak_speed.max(si.speed);
            }
        } else if let Some(ev) = self.active.take() {
            out.push(ev);
        }
        self.prev_fast = fast;
        if si.stationary {
            self.last_still = Some(t);
        }
    }

    pub fn finish(&mut self, out: &mut Vec<AttackEvent>) {
        out.extend(self.active.take());
    }
}

/// Sample of `track` at timestamp `t`, or an invalid placeholder.
pub(crate) fn sample_at(track: &KinematicTrack, t: i64) -> KinematicSample {
    let k = (t - track.t0).div_euclid(track.dt);
    if (t - track.t0) % track.dt == 0 && k >= 0 && (k as usize) < track.samples.len() {
        track.samples[k as usize]
    } else {
        KinematicSample::invalid(t)
    }
}

/// Walks the union of both tracks' timelines tick by tick.
fn for_each_tick(a: &KinematicTrack, b: &KinematicTrack, mut f: impl FnMut(&KinematicSample, &KinematicSample)) {
    assert_eq!(a.dt, b.dt, "tracks must share a sample period");
    let spans = [a, b].map(|tr| (tr.t0, tr.t0 + tr.samples.len() as i64 * tr.dt));
    let nonempty: Vec<_> = spans.iter().filter(|(s, e)| e > s).collect();
    let (Some(start), Some(end)) =
        (nonempty.iter().map(|s| s.0).min(), nonempty.iter().map(|s| s.1).max())
    else {
        return;
    };
    let mut t = start;
    while t < end {
        f(&sample_at(a, t), &sample_at(b, t));
        t += a.dt;
    }
}

pub fn detect_grooming(ti: &KinematicTrack, tj: &KinematicTrack, params: &GroomingParams) -> Vec<GroomingEvent> {
    let mut det = GroomingDetector::new(ti.animal_id, tj.animal_id, ti.dt, params);
    let mut out = Vec::new();
    for_each_tick(ti, tj, |si, sj| det.push(si, sj, &mut out));
    det.finish(&mut out);
    out
}

pub fn detect_move_away(mover: &KinematicTrack, target: &KinematicTrack, params: &MoveAwayParams) -> Vec<MoveAwayEvent> {
    let mut det = MoveAwayDetector::new(mover.animal_id, target.animal_id, mover.dt, params);
    let mut out = Vec::new();
    for_each_tick(mover, target, |si, sj| det.push(si, sj, pair_dv(si, sj, params.v_min), &mut out));
    det.finish(&mut out);
    out
}

/// Displacement iff the mover has at least one valid sample in
/// `[t_start - s_pre, t_start)` and every valid sample there is below `v_stat`.
pub fn classify_move_away(event: &MoveAwayEvent, mover: &[KinematicSample], s_pre_s: f64, v_stat: f64) -> MoveKind {
    let from = event.t_start - secs_to_ms(s_pre_s);
    let mut window = mover.iter().filter(|s| s.valid && s.t >= from && s.t < event.t_start).peekable();
    if window.peek().is_none() {
        return MoveKind::Withdrawal;
    }
    if window.all(|s| s.speed < v_stat) {
        MoveKind::Displacement
    } else {
        MoveKind::Withdrawal
    }
}

pub fn detect_chase(ta: &KinematicTrack, tb: &KinematicTrack, params: &ChaseParams) -> Vec<ChaseEvent> {
    let mut det = ChaseDetector::new(ta.animal_id, tb.animal_id, ta.dt, params);
    let mut out = Vec::new();
    for_each_tick(ta, tb, |sa, sb| det.push(sa, sb, &mut out));
    det.finish(&mut out);
    out
}

pub fn detect_attack(attacker: &KinematicTrack, target: &KinematicTrack, params: &AttackParams) -> Vec<AttackEvent> {
    let mut det = AttackDetector::new(attacker.animal_id, target.animal_id, params);
    let mut out = Vec::new();
    for_each_tick(attacker, target, |si, sj| {
        det.push(si, pair_dv(si, sj, params.v_min).map(|(d, _)| d), &mut out)
    });
    det.finish(&mut out);
    out
}
