//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.

#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use troop_net::events::{GroomingEvent, MoveAwayEvent, MoveKind};
use troop_net::{Pipeline, PipelineConfig, Vec3};

#[derive(Debug, Clone, Copy)]
pub struct RefSample {
    pub t: i64,
    pub valid: bool,
    pub pos: Vec3,
    pub vel: Vec3,
    pub speed: f64,
    pub stationary: bool,
}

/// Positions on a shared timeline `t0 + k * dt`; `None` is a dropout.
pub struct Instance {
    pub t0: i64,
    pub dt: i64,
    pub tracks: Vec<Vec<Option<Vec3>>>,
}

/// Linear interpolation over bracketed gap runs of at most `max_gap` ticks.
pub fn ref_fill(track: &[Option<Vec3>], max_gap: usize) -> Vec<Option<Vec3>> {
    let mut out = track.to_vec();
    let mut k = 0;
    while k < track.len() {
        if track[k].is_some() {
            k += 1;
            continue;
        }
        let start = k;
        while k < track.len() && track[k].is_none() {
            k += 1;
        }
        let len = k - start;
        if start == 0 || k == track.len() || len > max_gap {
            continue;
        }
        let (a, b) = (track[start - 1].unwrap(), track[k].unwrap());
        for j in 1..=len {
            let f = j as f64 / (len + 1) as f64;
            out[start + j - 1] = Some(a + (b - a) * f);
        }
    }
    out
}

pub fn ref_kinematics(track: &[Option<Vec3>], t0: i64, dt: i64, max_gap: usize, v_stat: f64) -> Vec<RefSample> {
    let filled = ref_fill(track, max_gap);
    let dt_s = dt as f64 / 1000.0;
    let at = |k: isize| -> Option<Vec3> {
        if k < 0 || k as usize >= filled.len() {
            None
        } else {
            filled[k as usize]
        }
    };
    (0..filled.len())
        .map(|k| {
            let t = t0 + k as i64 * dt;
            let ki = k as isize;
            let invalid = RefSample { t, valid: false, pos: Vec3::ZERO, vel: Vec3::ZERO, speed: 0.0, stationary: false };
            let Some(p) = at(ki) else { return invalid };
            let vel = match (at(ki - 1), at(ki + 1)) {
                (Some(a), Some(b)) => (b - a) / (2.0 * dt_s),
                (None, Some(b)) => (b - p) / dt_s,
                (Some(a), None) => (p - a) / dt_s,
                (None, None) => return RefSample { pos: p, ..invalid },
            };
            let speed = vel.norm();
            RefSample { t, valid: true, pos: p, vel, speed, stationary: speed < v_stat }
        })
        .collect()
}

/// `(dv, projection)` of `m` relative to `o`.
pub fn ref_dv(m: &RefSample, o: &RefSample, v_min: f64) -> Option<(f64, f64)> {
    if !m.valid || !o.valid || m.speed < v_min || m.speed <= 0.0 {
        return None;
    }
    let d = o.pos - m.pos;
    let sep = d.norm();
    if sep < 1e-6 {
        return None;
    }
    let b = d / sep;
    Some(((m.vel / m.speed).dot(b).clamp(-1.0, 1.0), m.vel.dot(b)))
}

pub fn ref_grooming(
    a: u32,
    b: u32,
    sa: &[RefSample],
    sb: &[RefSample],
    cfg: &PipelineConfig,
) -> Vec<GroomingEvent> {
    let dt = cfg.dt_ms;
    let q: Vec<bool> = sa
        .iter()
        .zip(sb)
        .map(|(x, y)| x.stationary && y.stationary && x.pos.distance(y.pos) <= cfg.d_groom)
        .collect();
    let mut runs: Vec<(i64, i64)> = Vec::new();
    for (k, &ok) in q.iter().enumerate() {
        if !ok {
            continue;
        }
        let t = sa[k].t;
        match runs.last_mut() {
            Some(r) if t - r.1 <= (cfg.gap_merge_s * 1000.0).round() as i64 => r.1 = t + dt,
            _ => runs.push((t, t + dt)),
        }
    }
    let (a, b) = (a.min(b), a.max(b));
    runs.into_iter()
        .map(|(s, e)| GroomingEvent { a, b, t_start: s, t_end: e, duration_s: (e - s) as f64 / 1000.0 })
        .filter(|e| e.duration_s >= cfg.min_groom_duration_s)
        .collect()
}

pub fn ref_move_away(
    mover: u32,
    target: u32,
    sm: &[RefSample],
    st: &[RefSample],
    cfg: &PipelineConfig,
) -> (Vec<MoveAwayEvent>, u64) {
    let dt = cfg.dt_ms;
    let band: Vec<Option<(f64, f64)>> = sm
        .iter()
        .zip(st)
        .map(|(m, o)| ref_dv(m, o, cfg.v_min).filter(|&(d, _)| cfg.dv_lo <= d && d <= cfg.dv_hi))
        .collect();
    let gate = |k: usize| cfg.proximity_gate.is_none_or(|g| sm[k].pos.distance(st[k].pos) <= g);
    let in_band = (0..band.len()).filter(|&k| band[k].is_some() && gate(k)).count() as u64;
    let mut out = Vec::new();
    let mut k = 0;
    while k < band.len() {
        if band[k].is_none() {
            k += 1;
            continue;
        }
        let start = k;
        let (mut sd, mut sp) = (0.0, 0.0);
        while k < band.len() {
            let Some((d, p)) = band[k] else { break };
            sd += d;
            sp += p;
            k += 1;
        }
        let n = k - start;
        let t_start = sm[start].t;
        let t_end = t_start + n as i64 * dt;
        if !gate(start) || ((t_end - t_start) as f64 / 1000.0) < cfg.min_event_s {
            continue;
        }
        let from = t_start - (cfg.s_pre_s * 1000.0).round() as i64;
        let window: Vec<&RefSample> = sm.iter().filter(|s| s.valid && s.t >= from && s.t < t_start).collect();
        let kind = if !window.is_empty() && window.iter().all(|s| s.speed < cfg.v_stat) {
            MoveKind::Displacement
        } else {
            MoveKind::Withdrawal
        };
        out.push(MoveAwayEvent {
            mover,
            target,
            t_start,
            t_end,
            mean_dv: sd / n as f64,
            mean_projection: sp / n as f64,
            kind,
        });
    }
    (out, in_band)
}

/// Random walks with rests, runs, planted grooming bouts and flights, and
/// dropouts of varying length.
pub fn random_instance(seed: u64, n: usize, ticks: usize) -> Instance {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut tracks = vec![vec![None; ticks]; n];
    let mut pos: Vec<Vec3> =
        (0..n).map(|_| Vec3::new(r.random_range(0.2..2.8), r.random_range(0.2..2.8), 0.5)).collect();
    let mut k = 0;
    while k < ticks {
        let len = r.random_range(5..120).min(ticks - k);
        let mode = r.random_range(0..10);
        let (pi, pj) = (r.random_range(0..n), r.random_range(0..n));
        let mut vels = vec![Vec3::ZERO; n];
        for (i, v) in vels.iter_mut().enumerate() {
            let speed = match r.random_range(0..4) {
                0 => 0.0,
                1 => r.random_range(0.01..0.1),
                2 => r.random_range(0.1..0.8),
                _ => r.random_range(0.8..2.0),
            };
            let a: f64 = r.random_range(0.0..std::f64::consts::TAU);
            *v = Vec3::new(a.cos(), a.sin(), 0.0) * speed;
            if mode < 3 && (i == pi || i == pj) {
                *v = Vec3::ZERO;
            }
        }
        if mode < 3 && pi != pj {
            // grooming bout: pj sits next to pi
            pos[pj] = pos[pi] + Vec3::new(r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), 0.0);
        }
        if mode == 3 && pi != pj {
            // flight: pi leaves pj at a random speed after a pause
            let d = pos[pi] - pos[pj];
            let dir = if d.norm() > 1e-9 { d / d.norm() } else { Vec3::new(1.0, 0.0, 0.0) };
            vels[pi] = dir * r.random_range(0.3..1.2);
            vels[pj] = Vec3::ZERO;
        }
        let jitter = if r.random_bool(0.5) { r.random_range(0.0..0.03) } else { 0.0 };
        for _ in 0..len {
            for i in 0..n {
                let mut p = pos[i] + vels[i];
                for c in [&mut p.x, &mut p.y] {
                    if *c < 0.0 || *c > 3.0 {
                        *c = c.clamp(0.0, 3.0);
                    }
                }
                pos[i] = p;
                let noisy = pos[i]
                    + Vec3::new(r.random_range(-jitter..=jitter), r.random_range(-jitter..=jitter), 0.0);
                tracks[i][k] = Some(noisy);
            }
            k += 1;
        }
    }
    for (i, track) in tracks.iter_mut().enumerate() {
        let mut k = 0;
        while k < ticks {
            if r.random_bool(0.02) {
                let len = r.random_range(1..9);
                for s in track.iter_mut().skip(k).take(len) {
                    *s = None;
                }
                k += len;
            } else {
                k += 1;
            }
        }
        // keep the shared timeline anchored at both ends
        if i == 0 {
            track[0] = Some(pos[0]);
            track[ticks - 1] = Some(pos[0]);
        }
    }
    Instance { t0: 1_700_000_000_000, dt: 1000, tracks }
}

/// Runs the production streaming pipeline on an instance, one reading per
/// present tick.
pub fn run_pipeline(inst: &Instance, cfg: &PipelineConfig, threads: usize) -> troop_net::Analysis {
    let mut p = Pipeline::new(cfg, inst.tracks.len(), threads).unwrap();
    let ticks = inst.tracks[0].len();
    for k in 0..ticks {
        for (i, tr) in inst.tracks.iter().enumerate() {
            if let Some(pos) = tr[k] {
                p.push(i as u32 + 1, inst.t0 + k as i64 * inst.dt, pos);
            }
        }
    }
    p.finish().unwrap()
}

/// Reference grooming and move-away lists in pipeline order, plus the
/// in-band sample matrix.
pub fn reference_events(
    inst: &Instance,
    cfg: &PipelineConfig,
) -> (Vec<GroomingEvent>, Vec<MoveAwayEvent>, Vec<Vec<u64>>) {
    let n = inst.tracks.len();
    let kin: Vec<Vec<RefSample>> =
        inst.tracks.iter().map(|t| ref_kinematics(t, inst.t0, inst.dt, cfg.max_gap, cfg.v_stat)).collect();
    let mut grooming = Vec::new();
    let mut away = Vec::new();
    let mut in_band = vec![vec![0u64; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            if i < j {
                grooming.extend(ref_grooming(i as u32 + 1, j as u32 + 1, &kin[i], &kin[j], cfg));
            }
            let (ev, c) = ref_move_away(i as u32 + 1, j as u32 + 1, &kin[i], &kin[j], cfg);
            away.extend(ev);
            in_band[i][j] = c;
        }
    }
    grooming.sort_by_key(|e| (e.t_start, e.a, e.b));
    away.sort_by_key(|e| (e.t_start, e.mover, e.target));
    (grooming, away, in_band)
}
