//! Pipeline configuration as plain `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{check_threshold, Error, Result};
use crate::map::{
    EvidencePolicy, GridGeometry, DEFAULT_LOG_ODDS_CLAMP, DEFAULT_P_HIT, DEFAULT_TAU_FREE,
    DEFAULT_TAU_OCCUPIED,
};
use crate::pose::{Estimator, LsmConfig, RegistrationConfig};
use crate::track::DEFAULT_Q_MIN;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub eta_cl: f64,
    pub eta_cf: f64,
    pub eta_sv: f64,
    pub estimator: Estimator,
    pub registration: RegistrationConfig,
    pub lsm: LsmConfig,
    pub t_f: f64,
    pub w0: f64,
    pub w_theta: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub sigma_theta: f64,
    pub q_min: f64,
    pub map: GridGeometry,
    pub p_hit: f64,
    pub evidence: EvidencePolicy,
    pub log_odds_clamp: Option<f64>,
    pub tau_occupied: f64,
    pub tau_free: f64,
    /// Dataset directory.
    pub input: Option<PathBuf>,
    /// Output directory.
    pub output: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eta_cl: 0.4,
            eta_cf: 1e-2,
            eta_sv: 0.9,
            estimator: Estimator::Sfm,
            registration: RegistrationConfig::default(),
            lsm: LsmConfig::default(),
            t_f: 1.0,
            w0: 1e-4,
            w_theta: 1e-4,
            sigma_x: 4.7e-3,
            sigma_y: 4.7e-3,
            sigma_theta: 1.7e-3,
            q_min: DEFAULT_Q_MIN,
            map: GridGeometry {
                origin_x: -5.0,
                origin_y: -4.0,
                cell_size: 0.05,
                width: 240,
                height: 200,
            },
            p_hit: DEFAULT_P_HIT,
            evidence: EvidencePolicy::HitAndFree,
            log_odds_clamp: Some(DEFAULT_LOG_ODDS_CLAMP),
            tau_occupied: DEFAULT_TAU_OCCUPIED,
            tau_free: DEFAULT_TAU_FREE,
            input: None,
            output: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| {
        Error::parse(
            format!("config line {line}"),
            format!("{key} = `{value}`: {e}"),
        )
    })
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        check_threshold("eta_cl", self.eta_cl)?;
        check_threshold("eta_cf", self.eta_cf)?;
        check_threshold("eta_sv", self.eta_sv)?;
        if !(self.p_hit > 0.5 && self.p_hit < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_hit must lie in (0.5, 1), got {}",
                self.p_hit
            )));
        }
        if !(self.q_min > 0.0 && self.q_min <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "q_min must lie in (0, 1], got {}",
                self.q_min
            )));
        }
        if !(self.map.cell_size > 0.0) || self.map.width == 0 || self.map.height == 0 {
            return Err(Error::InvalidParameter(
                "map geometry must be nonempty".into(),
            ));
        }
        let r = &self.registration;
        if r.peak_box % 2 == 0 {
            return Err(Error::InvalidParameter(format!(
                "peak_box must be odd, got {}",
                r.peak_box
            )));
        }
        let (lo, hi) = r.spectrum_band;
        if r.column_power.is_some_and(|p| !(p > 0.0 && p.is_finite()))
            || !(r.edge_guard_deg >= 0.0)
            || !r.range_gain.is_finite()
            || !(r.spectrum_taper_deg >= 0.0 && r.spectrum_taper_deg.is_finite())
            || !(0.0 <= lo && lo < hi && hi <= 1.0)
        {
            return Err(Error::InvalidParameter(
                "invalid registration weighting".into(),
            ));
        }
        if !(self.tau_free <= self.tau_occupied) {
            return Err(Error::InvalidParameter(
                "tau_free must not exceed tau_occupied".into(),
            ));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "eta_cl" => self.eta_cl = parse_value(key, v, line)?,
            "eta_cf" => self.eta_cf = parse_value(key, v, line)?,
            "eta_sv" => self.eta_sv = parse_value(key, v, line)?,
            "pose" => self.estimator = parse_value(key, v, line)?,
            "cell_size" => self.registration.cell_size = parse_value(key, v, line)?,
            "image_size" => self.registration.image_size = parse_value(key, v, line)?,
            "window" => self.registration.window = parse_value(key, v, line)?,
            "subpixel" => self.registration.subpixel = parse_value(key, v, line)?,
            "resolve_half_turn" => self.registration.resolve_half_turn = parse_value(key, v, line)?,
            "translation_window" => {
                self.registration.translation_window = parse_value(key, v, line)?
            }
            "resampling" => self.registration.resampling = parse_value(key, v, line)?,
            "edge_guard_deg" => self.registration.edge_guard_deg = parse_value(key, v, line)?,
            "column_power" => {
                self.registration.column_power = if v == "none" {
                    None
                } else {
                    Some(parse_value(key, v, line)?)
                }
            }
            "range_gain" => self.registration.range_gain = parse_value(key, v, line)?,
            "peak_box" => self.registration.peak_box = parse_value(key, v, line)?,
            "spectrum_taper_deg" => {
                self.registration.spectrum_taper_deg = parse_value(key, v, line)?
            }
            "spectrum_band" => {
                let (lo, hi) = v.split_once(',').ok_or_else(|| {
                    Error::parse(
                        format!("config line {line}"),
                        format!("{key} = `{v}`: expected `lo,hi`"),
                    )
                })?;
                self.registration.spectrum_band = (
                    parse_value(key, lo.trim(), line)?,
                    parse_value(key, hi.trim(), line)?,
                );
            }
            "lsm_cell_size" => self.lsm.cell_size = parse_value(key, v, line)?,
            "search_x" => self.lsm.search_x = parse_value(key, v, line)?,
            "search_y" => self.lsm.search_y = parse_value(key, v, line)?,
            "search_theta" => self.lsm.search_theta = parse_value(key, v, line)?,
            "lsm_sigma_cells" => self.lsm.sigma_cells = parse_value(key, v, line)?,
            "lsm_block" => self.lsm.block = parse_value(key, v, line)?,
            "t_f" => self.t_f = parse_value(key, v, line)?,
            "w0" => self.w0 = parse_value(key, v, line)?,
            "w_theta" => self.w_theta = parse_value(key, v, line)?,
            "sigma_x" => self.sigma_x = parse_value(key, v, line)?,
            "sigma_y" => self.sigma_y = parse_value(key, v, line)?,
            "sigma_theta" => self.sigma_theta = parse_value(key, v, line)?,
            "q_min" => self.q_min = parse_value(key, v, line)?,
            "map_origin_x" => self.map.origin_x = parse_value(key, v, line)?,
            "map_origin_y" => self.map.origin_y = parse_value(key, v, line)?,
            "map_cell_size" => self.map.cell_size = parse_value(key, v, line)?,
            "map_width" => self.map.width = parse_value(key, v, line)?,
            "map_height" => self.map.height = parse_value(key, v, line)?,
            "p_hit" => self.p_hit = parse_value(key, v, line)?,
            "evidence" => self.evidence = parse_value(key, v, line)?,
            "log_odds_clamp" => {
                self.log_odds_clamp = if v == "none" {
                    None
                } else {
                    Some(parse_value(key, v, line)?)
                }
            }
            "tau_occupied" => self.tau_occupied = parse_value(key, v, line)?,
            "tau_free" => self.tau_free = parse_value(key, v, line)?,
            "input" => self.input = (!v.is_empty()).then(|| PathBuf::from(v)),
            "output" => self.output = (!v.is_empty()).then(|| PathBuf::from(v)),
            other => {
                return Err(Error::parse(
                    format!("config line {line}"),
                    format!("unknown key `{other}`"),
                ));
            }
        }
        Ok(())
    }

    /// Parses assignments over the defaults; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::parse(
                    format!("config line {}", i + 1),
                    "expected `key = value`",
                ));
            };
            cfg.set(key, value, i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("eta_cl", self.eta_cl.to_string());
        put("eta_cf", self.eta_cf.to_string());
        put("eta_sv", self.eta_sv.to_string());
        put("pose", self.estimator.to_string());
        put("cell_size", self.registration.cell_size.to_string());
        put("image_size", self.registration.image_size.to_string());
        put("window", self.registration.window.to_string());
        put("subpixel", self.registration.subpixel.to_string());
        put(
            "resolve_half_turn",
            self.registration.resolve_half_turn.to_string(),
        );
        put(
            "translation_window",
            self.registration.translation_window.to_string(),
        );
        put("resampling", self.registration.resampling.to_string());
        put(
            "edge_guard_deg",
            self.registration.edge_guard_deg.to_string(),
        );
        put(
            "column_power",
            self.registration
                .column_power
                .map_or("none".into(), |p| p.to_string()),
        );
        put("range_gain", self.registration.range_gain.to_string());
        put("peak_box", self.registration.peak_box.to_string());
        put(
            "spectrum_taper_deg",
            self.registration.spectrum_taper_deg.to_string(),
        );
        let (lo, hi) = self.registration.spectrum_band;
        put("spectrum_band", format!("{lo},{hi}"));
        put("lsm_cell_size", self.lsm.cell_size.to_string());
        put("search_x", self.lsm.search_x.to_string());
        put("search_y", self.lsm.search_y.to_string());
        put("search_theta", self.lsm.search_theta.to_string());
        put("lsm_sigma_cells", self.lsm.sigma_cells.to_string());
        put("lsm_block", self.lsm.block.to_string());
        put("t_f", self.t_f.to_string());
        put("w0", self.w0.to_string());
        put("w_theta", self.w_theta.to_string());
        put("sigma_x", self.sigma_x.to_string());
        put("sigma_y", self.sigma_y.to_string());
        put("sigma_theta", self.sigma_theta.to_string());
        put("q_min", self.q_min.to_string());
        put("map_origin_x", self.map.origin_x.to_string());
        put("map_origin_y", self.map.origin_y.to_string());
        put("map_cell_size", self.map.cell_size.to_string());
        put("map_width", self.map.width.to_string());
        put("map_height", self.map.height.to_string());
        put("p_hit", self.p_hit.to_string());
        put("evidence", self.evidence.to_string());
        put(
            "log_odds_clamp",
            self.log_odds_clamp.map_or("none".into(), |c| c.to_string()),
        );
        put("tau_occupied", self.tau_occupied.to_string());
        put("tau_free", self.tau_free.to_string());
        if let Some(p) = &self.input {
            put("input", p.display().to_string());
        }
        if let Some(p) = &self.output {
            put("output", p.display().to_string());
        }
        s
    }
}
