//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use troop_net::cli::cmd_analyze;
use troop_net::events::MoveAwayParams;
use troop_net::export::{heatmap_pgm, hierarchy_dot};
use troop_net::ingest::{fuse_window, FusionScratch};
use troop_net::kinematics::{bearing, directed_velocity};
use troop_net::simgen::{prepare, write_readings_csv, GroomingScript, Scenario, Simulator};
use troop_net::social::{HeatMap, Matrix};
use troop_net::{Analysis, Pipeline, PipelineConfig, SocialStructure, Vec3};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn run_scenario(sc: &Scenario, cfg: &PipelineConfig) -> Analysis {
    let sc = prepare(sc).unwrap();
    let mut sim = Simulator::new(&sc).unwrap();
    let mut p = Pipeline::new(cfg, sc.animals as usize, 1).unwrap();
    while let Some(t) = sim.step() {
        for &(a, _, pos) in sim.readings() {
            p.push(a, t, pos);
        }
    }
    p.finish().unwrap()
}

fn oracle_config(seed: u64) -> PipelineConfig {
    match seed % 3 {
        0 => PipelineConfig::default(),
        1 => PipelineConfig { proximity_gate: Some(1.0), reorder_slack_ms: 0, ..Default::default() },
        _ => PipelineConfig { gap_merge_s: 4.0, min_groom_duration_s: 30.0, max_gap: 2, ..Default::default() },
    }
}

fn criterion_1() -> Outcome {
    let (mut groom, mut away) = (0, 0);
    for seed in 0..200u64 {
        let cfg = oracle_config(seed);
        let inst = common::random_instance(seed, 6, 2000);
        let a = common::run_pipeline(&inst, &cfg, 1);
        let (g, m, in_band) = common::reference_events(&inst, &cfg);
        ensure(a.grooming == g, format!("grooming lists differ for instance {seed}"))?;
        ensure(a.move_away == m, format!("move-away lists differ for instance {seed}"))?;
        for (i, row) in in_band.iter().enumerate() {
            ensure(a.in_band_samples.row(i) == &row[..], format!("in-band counts differ for instance {seed}"))?;
        }
        groom += g.len();
        away += m.len();
    }
    ensure(groom > 0 && away > 0, "instances produced no events")?;
    Ok(format!("200 instances identical ({groom} grooming, {away} move-away events)"))
}

fn planted_order(seed: u64) -> Vec<u32> {
    let mut order: Vec<u32> = (1..=6).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed));
    order
}

fn hierarchy_scenario(seed: u64) -> Scenario {
    Scenario {
        animals: 6,
        duration_s: 86_400.0,
        planted_order: planted_order(seed),
        displacement_rate_per_hour: 6.0,
        reverse_fraction: 0.2,
        noise_sigma: 0.1,
        tags_per_animal: 4,
        seed,
        ..Default::default()
    }
}

fn criterion_2() -> Outcome {
    let (mut exact, mut adjacent) = (0, 0);
    for seed in 0..100u64 {
        let sc = hierarchy_scenario(seed);
        let a = run_scenario(&sc, &PipelineConfig::default());
        let s = a.social_structure().unwrap();
        if s.rank.order == sc.planted_order {
            exact += 1;
        }
        let ta = &s.away.counts;
        let ok = sc.planted_order.windows(2).all(|w| {
            let (d, sub) = (w[0] as usize - 1, w[1] as usize - 1);
            ta.get(sub, d) > ta.get(d, sub)
        });
        if ok {
            adjacent += 1;
        }
    }
    let detail = format!("exact order {exact}/100 (need 95), adjacent directions {adjacent}/100 (need 98)");
    ensure(exact >= 95 && adjacent >= 98, detail.clone())?;
    Ok(detail)
}

const GROOMING_PAIRS: [(u32, u32); 6] = [(1, 2), (3, 4), (5, 6), (1, 3), (2, 5), (4, 6)];

fn grooming_scenario(seed: u64, sigma: f64) -> Scenario {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut grooming = Vec::new();
    let mut t = 100.0;
    for _ in 0..3 {
        for &(a, b) in &GROOMING_PAIRS {
            let d: f64 = r.random_range(60.0f64..300.0).round();
            grooming.push(GroomingScript { a, b, t_start_s: t, duration_s: d, distance_m: 0.25 });
            t += d + 60.0;
        }
    }
    Scenario { animals: 6, duration_s: t + 100.0, noise_sigma: sigma, seed, grooming, ..Default::default() }
}

fn criterion_3() -> Outcome {
    let (mut ok_pairs, mut ok_seeds) = (0, 0);
    let mut worst: f64 = 0.0;
    for seed in 0..50u64 {
        let sc = grooming_scenario(seed, 0.05);
        let a = run_scenario(&sc, &PipelineConfig::default());
        let s = a.social_structure().unwrap();
        let days = a.span_days();
        let mut seed_ok = true;
        for &(i, j) in &GROOMING_PAIRS {
            let scripted: f64 = sc.grooming.iter().filter(|g| (g.a, g.b) == (i, j)).map(|g| g.duration_s).sum();
            let detected: f64 = a.grooming.iter().filter(|g| (g.a, g.b) == (i, j)).map(|g| g.duration_s).sum();
            let rel = (detected - scripted) / scripted;
            let a_ij = s.affiliation.values.get(i as usize - 1, j as usize - 1);
            let rel_a = (a_ij - scripted / days) / (scripted / days);
            worst = worst.max(rel.abs()).max(rel_a.abs());
            if rel.abs() <= 0.05 && rel_a.abs() <= 0.05 {
                ok_pairs += 1;
            } else {
                seed_ok = false;
            }
        }
        if seed_ok {
            ok_seeds += 1;
        }
    }
    let detail =
        format!("{ok_pairs}/300 pairs and {ok_seeds}/50 seeds within 5%, worst deviation {:.1}%", worst * 100.0);
    ensure(ok_seeds == 50, detail.clone())?;
    Ok(detail)
}

fn check_invariants(a: &Analysis, s: &SocialStructure, stationary_counts: Option<&[u64]>) -> Result<(), String> {
    let n = a.n_animals;
    let am = &s.affiliation.values;
    let ta = &s.away.counts;
    let h = &s.hierarchy.dominates;
    for i in 0..n {
        ensure(am.get(i, i) == 0.0 && ta.get(i, i) == 0 && h.get(i, i) == 0, "non-zero diagonal")?;
        for j in 0..n {
            ensure(am.get(i, j) == am.get(j, i), "A not symmetric")?;
            ensure(am.get(i, j) >= 0.0, "negative A entry")?;
            if i != j {
                ensure(h.get(i, j) + h.get(j, i) <= 1, "H_ij + H_ji > 1")?;
                ensure(
                    (h.get(i, j) + h.get(j, i) == 1) == (ta.get(i, j) != ta.get(j, i)),
                    "H edge present iff TA asymmetric",
                )?;
            }
        }
    }
    for (k, hm) in a.heatmaps.iter().enumerate() {
        ensure(hm.cells.iter().sum::<u64>() == hm.total, "heat-map cells do not sum to total")?;
        if let Some(c) = stationary_counts {
            ensure(hm.total == c[k], format!("heat map {k} counted {} of {} stationary samples", hm.total, c[k]))?;
        }
    }
    for hist in &a.histograms {
        ensure(hist.total() == a.frames, "histogram counts + undefined != samples scanned")?;
    }
    Ok(())
}

fn criterion_4() -> Outcome {
    let mut runs = 0;
    for seed in 0..60u64 {
        let cfg = oracle_config(seed);
        let inst = common::random_instance(1000 + seed, 6, 2000);
        let a = common::run_pipeline(&inst, &cfg, 1);
        let counts: Vec<u64> = inst
            .tracks
            .iter()
            .map(|t| {
                common::ref_kinematics(t, inst.t0, inst.dt, cfg.max_gap, cfg.v_stat)
                    .iter()
                    .filter(|s| s.stationary)
                    .count() as u64
            })
            .collect();
        check_invariants(&a, &a.social_structure().unwrap(), Some(&counts))?;
        runs += 1;
    }
    for seed in 0..6u64 {
        let mut sc = hierarchy_scenario(seed);
        sc.duration_s = 6.0 * 3600.0;
        sc.grooming = grooming_scenario(seed, 0.1).grooming;
        let a = run_scenario(&sc, &PipelineConfig::default());
        check_invariants(&a, &a.social_structure().unwrap(), None)?;
        runs += 1;
    }
    Ok(format!("all invariants hold on {runs} pipeline outputs"))
}

fn criterion_5() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let unit = |r: &mut ChaCha8Rng| loop {
        let v = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        if v.norm() > 1e-3 && v.norm() <= 1.0 {
            return v / v.norm();
        }
    };
    let mut worst_cos: f64 = 0.0;
    let mut worst_scale: f64 = 0.0;
    for _ in 0..10_000 {
        let vel = unit(&mut r) * r.random_range(0.2..3.0);
        let from = Vec3::new(r.random_range(0.0..3.0), r.random_range(0.0..3.0), r.random_range(0.0..3.0));
        let to = from + unit(&mut r) * r.random_range(0.05..3.0);
        let dv = directed_velocity(vel, vel.norm(), bearing(from, to), 0.2).ok_or("DV undefined above v_min")?;
        ensure((-1.0..=1.0).contains(&dv), format!("DV {dv} out of range"))?;
        let d = to - from;
        let angle = (vel.dot(d) / (vel.norm() * d.norm())).clamp(-1.0, 1.0).acos();
        worst_cos = worst_cos.max((dv - angle.cos()).abs());
        let k = r.random_range(1.0..1000.0);
        let scaled = directed_velocity(vel * k, (vel * k).norm(), bearing(from, to), 0.2).unwrap();
        worst_scale = worst_scale.max((scaled - dv).abs());
    }
    ensure(worst_cos <= 1e-9, format!("cosine mismatch {worst_cos:e}"))?;
    ensure(worst_scale <= 1e-12, format!("scaling changed DV by {worst_scale:e}"))?;
    let p = MoveAwayParams::default();
    let a = 135f64.to_radians();
    let dv135 = directed_velocity(Vec3::new(a.cos(), a.sin(), 0.0), 1.0, bearing(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)), 0.2)
        .unwrap();
    #[allow(clippy::approx_constant)]
    let boundary = -0.7071;
    ensure(p.in_band(boundary) && p.in_band(dv135), "-0.7071 should be in band")?;
    ensure(!p.in_band(-0.69), "-0.69 should be out of band")?;
    Ok(format!("10000 pairs: cosine error {worst_cos:.1e}, scaling error {worst_scale:.1e}; band edges correct"))
}

fn criterion_6() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let nd = Normal::new(0.0, 0.15).unwrap();
    let mut scratch = FusionScratch::default();
    let (mut se_fused, mut se_single) = (0.0, 0.0);
    let mut worst_shift: f64 = 0.0;
    for _ in 0..10_000 {
        let truth = Vec3::new(r.random_range(0.0..3.0), r.random_range(0.0..3.0), r.random_range(0.0..3.0));
        let tags: Vec<Vec3> = (0..4)
            .map(|_| truth + Vec3::new(nd.sample(&mut r), nd.sample(&mut r), nd.sample(&mut r)))
            .collect();
        let fused = fuse_window(&mut tags.clone(), 3.0, &mut scratch);
        se_fused += (fused - truth).dot(fused - truth);
        se_single += (tags[0] - truth).dot(tags[0] - truth);

        let dir = {
            let a: f64 = r.random_range(0.0..std::f64::consts::TAU);
            Vec3::new(a.cos(), a.sin(), 0.0)
        };
        // a fifth, 5 m-offset tag against the four clean ones
        let mut with_outlier = tags.clone();
        with_outlier.push(tags[0] + dir * 5.0);
        let shifted = fuse_window(&mut with_outlier, 3.0, &mut scratch);
        worst_shift = worst_shift.max(shifted.distance(fused));
        // one of the four tags offset by 5 m against the other three
        let mut offset = tags.clone();
        offset[3] = offset[3] + dir * 5.0;
        let three = fuse_window(&mut tags[..3].to_vec(), 3.0, &mut scratch);
        let shifted = fuse_window(&mut offset, 3.0, &mut scratch);
        worst_shift = worst_shift.max(shifted.distance(three));
    }
    let ratio = (se_fused / se_single).sqrt();
    ensure(ratio <= 0.6, format!("fused/single RMSE ratio {ratio:.3}"))?;
    ensure(worst_shift < 1e-9, format!("5 m outlier shifted the estimate by up to {worst_shift:e} m"))?;
    Ok(format!("RMSE ratio {ratio:.3} over 10000 windows; worst outlier shift {worst_shift:.1e} m"))
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "config.resolved")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect();
    files.sort();
    files
}

fn peak_rss_kib(pid: u32) -> Option<u64> {
    let status = std::fs::read_to_string(format!("/proc/{pid}/status")).ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn criterion_7() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut sc = hierarchy_scenario(7);
    sc.duration_s = 6.0 * 3600.0;
    sc.grooming = grooming_scenario(7, 0.1).grooming;
    let sc = prepare(&sc).unwrap();
    let data = tmp.path().join("data");
    std::fs::create_dir_all(&data).unwrap();
    write_readings_csv(&sc, BufWriter::new(File::create(data.join("readings.csv")).unwrap())).unwrap();
    std::fs::write(data.join("collars.csv"), sc.collar_csv()).unwrap();
    let mut outputs = Vec::new();
    for threads in [1, 2, 8] {
        let out = tmp.path().join(format!("out{threads}"));
        let cfg = PipelineConfig {
            readings: Some(data.join("readings.csv")),
            collars: Some(data.join("collars.csv")),
            out: Some(out.clone()),
            ..Default::default()
        };
        cmd_analyze(&cfg, threads).map_err(|e| e.to_string())?;
        outputs.push(dir_bytes(&out));
    }
    ensure(outputs[0] == outputs[1] && outputs[0] == outputs[2], "outputs differ across thread counts")?;
    let n_files = outputs[0].len();

    // full-scale run: 6 animals, 60 days at 1 Hz, 4 tags each
    let big = Scenario { duration_s: 60.0 * 86_400.0, ..hierarchy_scenario(70) };
    let big = prepare(&big).unwrap();
    let big_dir = tmp.path().join("big");
    std::fs::create_dir_all(&big_dir).unwrap();
    let (_, readings) =
        write_readings_csv(&big, BufWriter::with_capacity(1 << 22, File::create(big_dir.join("readings.csv")).unwrap()))
            .unwrap();
    std::fs::write(big_dir.join("collars.csv"), big.collar_csv()).unwrap();
    let start = Instant::now();
    let mut child = Command::new(env!("CARGO_BIN_EXE_troop-net"))
        .arg("analyze")
        .arg("--readings")
        .arg(big_dir.join("readings.csv"))
        .arg("--collars")
        .arg(big_dir.join("collars.csv"))
        .arg("--out")
        .arg(big_dir.join("out"))
        .stdout(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut peak = 0;
    let status = loop {
        if let Some(rss) = peak_rss_kib(child.id()) {
            peak = peak.max(rss);
        }
        if let Some(status) = child.try_wait().map_err(|e| e.to_string())? {
            break status;
        }
        std::thread::sleep(Duration::from_millis(50));
    };
    let secs = start.elapsed().as_secs_f64();
    ensure(status.success(), format!("analyze exited with {status}"))?;
    let gib = peak as f64 / (1024.0 * 1024.0);
    let detail = format!(
        "{n_files} files identical at 1/2/8 threads; 60-day run: {readings} readings in {secs:.1} s, peak RSS {gib:.2} GiB"
    );
    ensure(secs < 120.0 && gib < 2.0, detail.clone())?;
    Ok(detail)
}

fn criterion_8() -> Outcome {
    let mut h = Matrix::<f64>::zeros(6);
    h.set(3, 2, 1.0);
    let ids: Vec<u32> = (1..=6).collect();
    let dot = hierarchy_dot(&ids, &h).map_err(|e| e.to_string())?;
    ensure(dot.lines().any(|l| l.trim() == "4 -> 3;"), "DOT lacks edge 4 -> 3")?;
    ensure(!dot.contains("3 -> 4"), "DOT has reversed edge")?;
    let cfg = PipelineConfig::default();
    let hm = HeatMap::new(1, cfg.enclosure(), cfg.grid_x, cfg.grid_y);
    ensure((hm.gx, hm.gy) == (30, 30), "default grid is not 30 x 30")?;
    let cell = cfg.extent_x / hm.gx as f64;
    ensure((cell - 0.1).abs() < 1e-12 && (cfg.extent_y / hm.gy as f64 - 0.1).abs() < 1e-12, "cells are not 0.1 m")?;
    ensure(hm.cell_of(1.05, 2.31) == (10, 23), "cell lookup off")?;
    ensure(heatmap_pgm(30, 30, &hm.cells).starts_with("P2\n30 30\n"), "PGM header")?;
    Ok("DOT edge `4 -> 3`; 30x30 grid of 0.1 m cells".into())
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: [Criterion; 8] = [
        (1, "oracle equivalence of event detectors", criterion_1),
        (2, "hierarchy recovery", criterion_2),
        (3, "grooming duration recovery", criterion_3),
        (4, "matrix invariants", criterion_4),
        (5, "DV math", criterion_5),
        (6, "fusion robustness", criterion_6),
        (7, "determinism and throughput", criterion_7),
        (8, "figure conventions", criterion_8),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n} PASS: {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} FAIL: {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
