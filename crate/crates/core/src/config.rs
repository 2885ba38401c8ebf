//! Flat pipeline configuration. Loaded from JSON; unknown keys are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{AttackParams, ChaseParams, GroomingParams, MoveAwayParams};
use crate::ingest::UnknownTagPolicy;
use crate::social::EnclosureSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// TA counts move-away episodes.
    #[default]
    Events,
    /// TA counts individual in-band samples.
    Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dt_ms: i64,
    /// How far behind the newest reading a window stays open for
    /// out-of-order readings.
    pub reorder_slack_ms: i64,
    pub outlier_k: f64,
    pub max_gap: usize,
    pub tags_per_animal: u32,
    pub strict_tags: bool,

    pub v_stat: f64,
    pub w_stat_s: f64,
    pub v_min: f64,

    pub d_groom: f64,
    pub min_groom_duration_s: f64,
    pub gap_merge_s: f64,

    pub dv_lo: f64,
    pub dv_hi: f64,
    pub min_event_s: f64,
    pub proximity_gate: Option<f64>,
    pub s_pre_s: f64,
    pub count_mode: CountMode,
    pub include_chase_attack_in_ta: bool,

    pub v_run: f64,
    pub r_chase: f64,
    pub chase_dv_align: f64,
    pub min_chase_duration_s: f64,
    pub v_attack: f64,
    pub attack_tau_s: f64,
    pub attack_dv_align: f64,

    pub grid_x: usize,
    pub grid_y: usize,
    pub heatmap_stationary_only: bool,
    pub bins: usize,
    pub extent_x: f64,
    pub extent_y: f64,
    pub extent_z: f64,
    /// Display filter for the affiliation graph export.
    pub min_weight: f64,

    pub readings: Option<PathBuf>,
    pub collars: Option<PathBuf>,
    pub header: bool,
    pub out: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let g = GroomingParams::default();
        let m = MoveAwayParams::default();
        let c = ChaseParams::default();
        let a = AttackParams::default();
        let e = EnclosureSpec::default();
        PipelineConfig {
            dt_ms: 1000,
            reorder_slack_ms: 10_000,
            outlier_k: 3.0,
            max_gap: 5,
            tags_per_animal: 4,
            strict_tags: false,
            v_stat: m.v_stat,
            w_stat_s: 0.0,
            v_min: m.v_min,
            d_groom: g.d_groom,
            min_groom_duration_s: g.min_dur_s,
            gap_merge_s: g.gap_merge_s,
            dv_lo: m.dv_lo,
            dv_hi: m.dv_hi,
            min_event_s: m.min_event_s,
            proximity_gate: m.proximity_gate,
            s_pre_s: m.s_pre_s,
            count_mode: CountMode::Events,
            include_chase_attack_in_ta: false,
            v_run: c.v_run,
            r_chase: c.r_chase,
            chase_dv_align: c.dv_align,
            min_chase_duration_s: c.min_dur_s,
            v_attack: a.v_attack,
            attack_tau_s: a.tau_s,
            attack_dv_align: a.dv_align,
            grid_x: 30,
            grid_y: 30,
            heatmap_stationary_only: true,
            bins: 40,
            extent_x: e.extent_x,
            extent_y: e.extent_y,
            extent_z: e.extent_z,
            min_weight: 0.0,
            readings: None,
            collars: None,
            header: false,
            out: None,
        }
    }
}

fn check(ok: bool, key: &str, msg: impl std::fmt::Display) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{key}: {msg}")))
    }
}

fn positive(key: &str, v: f64) -> Result<()> {
    check(v > 0.0 && v.is_finite(), key, format_args!("must be > 0, got {v}"))
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    check(v >= 0.0 && v.is_finite(), key, format_args!("must be >= 0, got {v}"))
}

fn unit(key: &str, v: f64) -> Result<()> {
    check((-1.0..=1.0).contains(&v), key, format_args!("must lie in [-1, 1], got {v}"))
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound("config file", path.to_owned()),
            _ => e.into(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        check(self.dt_ms > 0, "dt_ms", format_args!("must be > 0, got {}", self.dt_ms))?;
        check(self.reorder_slack_ms >= 0, "reorder_slack_ms", "must be >= 0")?;
        positive("outlier_k", self.outlier_k)?;
        check(self.tags_per_animal >= 1, "tags_per_animal", "must be >= 1")?;
        positive("v_stat", self.v_stat)?;
        non_negative("w_stat_s", self.w_stat_s)?;
        positive("v_min", self.v_min)?;
        positive("d_groom", self.d_groom)?;
        non_negative("min_groom_duration_s", self.min_groom_duration_s)?;
        non_negative("gap_merge_s", self.gap_merge_s)?;
        unit("dv_lo", self.dv_lo)?;
        unit("dv_hi", self.dv_hi)?;
        check(self.dv_lo <= self.dv_hi, "dv_lo", "must not exceed dv_hi")?;
        non_negative("min_event_s", self.min_event_s)?;
        if let Some(g) = self.proximity_gate {
            positive("proximity_gate", g)?;
        }
        non_negative("s_pre_s", self.s_pre_s)?;
        positive("v_run", self.v_run)?;
        positive("r_chase", self.r_chase)?;
        unit("chase_dv_align", self.chase_dv_align)?;
        non_negative("min_chase_duration_s", self.min_chase_duration_s)?;
        positive("v_attack", self.v_attack)?;
        non_negative("attack_tau_s", self.attack_tau_s)?;
        unit("attack_dv_align", self.attack_dv_align)?;
        check(self.grid_x > 0 && self.grid_y > 0, "grid_x", "grid dimensions must be > 0")?;
        check(self.bins >= 1, "bins", "must be >= 1")?;
        self.enclosure().validate()?;
        non_negative("min_weight", self.min_weight)?;
        Ok(())
    }

    pub fn enclosure(&self) -> EnclosureSpec {
        EnclosureSpec { extent_x: self.extent_x, extent_y: self.extent_y, extent_z: self.extent_z }
    }

    pub fn unknown_tag_policy(&self) -> UnknownTagPolicy {
        if self.strict_tags {
            UnknownTagPolicy::Strict
        } else {
            UnknownTagPolicy::Skip
        }
    }

    pub fn grooming(&self) -> GroomingParams {
        GroomingParams { d_groom: self.d_groom, min_dur_s: self.min_groom_duration_s, gap_merge_s: self.gap_merge_s }
    }

    pub fn move_away(&self) -> MoveAwayParams {
        MoveAwayParams {
            dv_lo: self.dv_lo,
            dv_hi: self.dv_hi,
            min_event_s: self.min_event_s,
            proximity_gate: self.proximity_gate,
            v_min: self.v_min,
            s_pre_s: self.s_pre_s,
            v_stat: self.v_stat,
        }
    }

    pub fn chase(&self) -> ChaseParams {
        ChaseParams {
            v_run: self.v_run,
            r_chase: self.r_chase,
            dv_align: self.chase_dv_align,
            min_dur_s: self.min_chase_duration_s,
            v_min: self.v_min,
        }
    }

    pub fn attack(&self) -> AttackParams {
        AttackParams {
            v_attack: self.v_attack,
            tau_s: self.attack_tau_s,
            dv_align: self.attack_dv_align,
            v_min: self.v_min,
        }
    }
}
