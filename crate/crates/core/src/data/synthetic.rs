//! Deterministic synthetic PCG generator, a stand-in for licensed smart-meter data.
//!
//! PV follows a daylight bell scaled by a community-wide daily cloudiness factor, consumption is
//! a base load with morning/evening peaks and a weather-driven afternoon cooling load, and EV
//! charging is a sequence of constant-rate sessions separated by idle zeros.

use std::f64::consts::PI;

use chrono::{DateTime, Duration, Utc};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{DataError, ProsumerDataset, Result, SignalKind, TimeSeries};
use crate::seed;

/// First sample of every generated series (local time is taken to be UTC).
pub const SYNTHETIC_START: DateTime<Utc> = match DateTime::from_timestamp(1_525_132_800, 0) {
    Some(t) => t,
    None => panic!("invalid start"),
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_prosumers: usize,
    pub n_with_ev: usize,
    pub days: u32,
    pub pv_peak_kw: f64,
    pub consumption_base_kw: f64,
    pub noise_scale: f64,
    pub seed: u64,
    /// EV series cover the final `ev_days` days at one-minute resolution.
    pub ev_days: u32,
    pub ev_charge_rate_kw: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_prosumers: 18,
            n_with_ev: 5,
            days: 90,
            pv_peak_kw: 5.0,
            consumption_base_kw: 0.6,
            noise_scale: 0.05,
            seed: 7,
            ev_days: 14,
            ev_charge_rate_kw: 6.6,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.n_prosumers == 0 {
            return bad("n_prosumers must be positive");
        }
        if self.n_with_ev > self.n_prosumers {
            return bad("n_with_ev exceeds n_prosumers");
        }
        if self.days == 0 {
            return bad("days must be positive");
        }
        if self.n_with_ev > 0 && (self.ev_days == 0 || self.ev_days > self.days) {
            return bad("ev_days must be in 1..=days");
        }
        if !(self.pv_peak_kw > 0.0) || !(self.consumption_base_kw > 0.0) {
            return bad("pv_peak_kw and consumption_base_kw must be positive");
        }
        if !(self.noise_scale >= 0.0) || !(self.ev_charge_rate_kw > 0.0) {
            return bad("noise_scale must be non-negative and ev_charge_rate_kw positive");
        }
        Ok(())
    }

    pub fn prosumer_id(index: usize) -> String {
        format!("p{:02}", index + 1)
    }
}

const SLOTS_PER_DAY: usize = 96;
const MINUTES_PER_DAY: usize = 1440;

fn gauss(rng: &mut seed::Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Hour difference wrapped to [-12, 12).
fn hour_delta(h: f64, center: f64) -> f64 {
    (h - center + 12.0).rem_euclid(24.0) - 12.0
}

fn bump(h: f64, center: f64, width: f64) -> f64 {
    let z = hour_delta(h, center) / width;
    (-0.5 * z * z).exp()
}

/// Community weather: one cloudiness factor in [0.3, 1] per day, AR(1) across days.
fn daily_cloudiness(cfg: &SyntheticConfig) -> Vec<f64> {
    let mut rng = seed::rng(seed::derive(cfg.seed, &[u64::MAX]));
    let mut prev = 0.85;
    (0..cfg.days)
        .map(|_| {
            let u: f64 = rng.random();
            prev = (0.5 * prev + 0.5 * (1.0 - 0.75 * u * u)).clamp(0.3, 1.0);
            prev
        })
        .collect()
}

struct PvSite {
    size_kw: f64,
    solar_noon_h: f64,
    half_day_h: f64,
    sharpness: f64,
}

fn pv_series(cfg: &SyntheticConfig, clouds: &[f64], rng: &mut seed::Rng) -> Vec<f64> {
    let site = PvSite {
        size_kw: cfg.pv_peak_kw * rng.random_range(0.6..1.4),
        solar_noon_h: 13.5 + rng.random_range(-1.0..1.0),
        half_day_h: rng.random_range(6.0..6.8),
        sharpness: rng.random_range(1.0..2.0),
    };
    let rise = site.solar_noon_h - site.half_day_h;
    let set = site.solar_noon_h + site.half_day_h;
    let mut shade = 0.0;
    let mut out = Vec::with_capacity(clouds.len() * SLOTS_PER_DAY);
    for &cloud in clouds {
        let day_factor = cloud * (1.0 + 0.05 * gauss(rng)).max(0.5);
        for slot in 0..SLOTS_PER_DAY {
            let h = (slot as f64 + 0.5) * 24.0 / SLOTS_PER_DAY as f64;
            shade = 0.8 * shade + cfg.noise_scale * (1.0 - cloud + 0.2) * gauss(rng);
            if h <= rise || h >= set {
                out.push(0.0);
                continue;
            }
            let shape = (PI * (h - rise) / (set - rise)).sin().powf(site.sharpness);
            let v = site.size_kw * day_factor * shape * (1.0 - shade.abs()).max(0.0)
                * (1.0 + cfg.noise_scale * gauss(rng));
            out.push(v.max(0.0));
        }
    }
    out
}

fn consumption_series(cfg: &SyntheticConfig, clouds: &[f64], rng: &mut seed::Rng) -> Vec<f64> {
    let base = cfg.consumption_base_kw * rng.random_range(0.7..1.3);
    let morning_h = 7.0 + rng.random_range(-1.0..1.0);
    let morning_amp = base * rng.random_range(0.8..2.0);
    let evening_h = 19.0 + rng.random_range(-1.5..1.5);
    let evening_amp = base * rng.random_range(1.5..3.5);
    let cooling_amp = base * rng.random_range(0.5..2.5);
    let cooling_h = 15.5 + rng.random_range(-1.0..1.5);
    let mut ar = 0.0;
    let mut out = Vec::with_capacity(clouds.len() * SLOTS_PER_DAY);
    for (day, &cloud) in clouds.iter().enumerate() {
        let weekend = day % 7 >= 5;
        let shift = if weekend { 1.5 } else { 0.0 };
        for slot in 0..SLOTS_PER_DAY {
            let h = (slot as f64 + 0.5) * 24.0 / SLOTS_PER_DAY as f64;
            let level = base
                + morning_amp * bump(h, morning_h + shift, 1.0)
                + evening_amp * bump(h, evening_h, 1.8)
                + cooling_amp * cloud * bump(h, cooling_h, 2.5);
            ar = 0.7 * ar + 3.0 * cfg.noise_scale * gauss(rng);
            out.push((level * (1.0 + ar)).max(0.05 * base));
        }
    }
    out
}

fn ev_series(cfg: &SyntheticConfig, rng: &mut seed::Rng) -> Vec<f64> {
    let arrival_mean = 18.0 * 60.0 + rng.random_range(-90.0..120.0);
    let daily_prob = rng.random_range(0.6..0.95);
    let total = cfg.ev_days as usize * MINUTES_PER_DAY;
    let mut out = vec![0.0; total];
    let mut busy_until = 0usize;
    for day in 0..cfg.ev_days as usize {
        if rng.random::<f64>() > daily_prob {
            continue;
        }
        let arrival = (arrival_mean + 60.0 * gauss(rng)).clamp(0.0, (MINUTES_PER_DAY - 1) as f64);
        let duration = rng.random_range(45..240usize);
        let begin = (day * MINUTES_PER_DAY + arrival as usize).max(busy_until);
        let end = (begin + duration).min(total);
        for v in out.iter_mut().take(end).skip(begin) {
            *v = cfg.ev_charge_rate_kw;
        }
        busy_until = end.max(busy_until);
    }
    out
}

/// Generates `n_prosumers` datasets; the first `n_with_ev` prosumers own an EV.
pub fn generate_synthetic_pcg(cfg: &SyntheticConfig) -> Result<Vec<ProsumerDataset>> {
    cfg.validate()?;
    let clouds = daily_cloudiness(cfg);
    let ev_start = SYNTHETIC_START + Duration::days((cfg.days - cfg.ev_days.min(cfg.days)) as i64);
    (0..cfg.n_prosumers)
        .map(|i| {
            let mut pv_rng = seed::rng(seed::derive(cfg.seed, &[i as u64, 0]));
            let mut load_rng = seed::rng(seed::derive(cfg.seed, &[i as u64, 1]));
            let mut ev_rng = seed::rng(seed::derive(cfg.seed, &[i as u64, 2]));
            let pv = TimeSeries::new(
                SignalKind::Pv,
                15,
                SYNTHETIC_START,
                pv_series(cfg, &clouds, &mut pv_rng),
            )?;
            let consumption = TimeSeries::new(
                SignalKind::Consumption,
                15,
                SYNTHETIC_START,
                consumption_series(cfg, &clouds, &mut load_rng),
            )?;
            let ev = if i < cfg.n_with_ev {
                Some(TimeSeries::new(
                    SignalKind::Ev,
                    1,
                    ev_start,
                    ev_series(cfg, &mut ev_rng),
                )?)
            } else {
                None
            };
            Ok(ProsumerDataset {
                prosumer_id: SyntheticConfig::prosumer_id(i),
                pv: Some(pv),
                consumption,
                ev,
            })
        })
        .collect()
}
