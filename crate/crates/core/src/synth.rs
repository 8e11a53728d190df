//! Seeded synthetic notification logs with planted anomalous users and
//! planted network events.
//!
//! Every user draws from its own ChaCha8 stream of the master seed, so the
//! output does not depend on generation order. Arrivals are Poisson with a
//! rate that is constant within each hour.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::ingestion::{NotificationLog, Record, SECONDS_PER_HOUR};

pub const GENERATOR_ID: &str = "ChaCha8";
/// Hours per regime in the alternating pattern of anomalous users.
pub const REGIME_HOURS: usize = 6;
const HIGH_REGIME: f64 = 1.8;
const LOW_REGIME: f64 = 0.2;
const EVENT_STREAM_BASE: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSpec {
    /// Inclusive hour range.
    pub start_hour: usize,
    pub end_hour: usize,
    pub affected_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub window_hours: usize,
    /// Unix seconds, hour aligned.
    pub window_start: i64,
    /// Messages per hour.
    pub base_rate: f64,
    pub burst_rate: f64,
    /// User indices that burst for the whole window.
    pub persistent_anomalous: Vec<usize>,
    pub events: Vec<EventSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            window_hours: 720,
            window_start: 1_699_999_200,
            base_rate: 2.0,
            burst_rate: 10.0,
            persistent_anomalous: Vec::new(),
            events: Vec::new(),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_users == 0 || self.window_hours == 0 {
            return invalid("n_users and window_hours must be positive");
        }
        if self.window_start.rem_euclid(SECONDS_PER_HOUR) != 0 {
            return invalid(format!("window_start {} is not hour aligned", self.window_start));
        }
        for (name, rate) in [("base_rate", self.base_rate), ("burst_rate", self.burst_rate)] {
            if !(rate > 0.0) || !rate.is_finite() {
                return invalid(format!("{name} must be positive and finite, got {rate}"));
            }
        }
        if let Some(&u) = self.persistent_anomalous.iter().find(|&&u| u >= self.n_users) {
            return invalid(format!(
                "anomalous user index {u} out of range for {} users",
                self.n_users
            ));
        }
        for e in &self.events {
            if e.start_hour > e.end_hour || e.end_hour >= self.window_hours {
                return invalid(format!(
                    "event hours [{}, {}] not inside the window",
                    e.start_hour, e.end_hour
                ));
            }
            if !(e.affected_fraction > 0.0 && e.affected_fraction <= 1.0) {
                return invalid(format!(
                    "affected_fraction must be in (0, 1], got {}",
                    e.affected_fraction
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub start_hour: usize,
    pub end_hour: usize,
    pub affected_user_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub generator: String,
    pub seed: u64,
    pub window_start: i64,
    pub window_hours: usize,
    pub anomalous_user_ids: Vec<String>,
    pub events: Vec<PlantedEvent>,
}

impl GroundTruth {
    pub fn is_empty(&self) -> bool {
        self.anomalous_user_ids.is_empty() && self.events.is_empty()
    }
}

pub fn user_id(index: usize) -> String {
    format!("user{index:04}")
}

pub fn generate(cfg: &SynthConfig) -> Result<(NotificationLog, GroundTruth)> {
    cfg.validate()?;
    let affected: Vec<Vec<usize>> = cfg
        .events
        .iter()
        .enumerate()
        .map(|(e, spec)| {
            let mut rng = stream_rng(cfg.seed, EVENT_STREAM_BASE + e as u64);
            let k = ((spec.affected_fraction * cfg.n_users as f64).round() as usize).clamp(1, cfg.n_users);
            let mut users = sample(&mut rng, cfg.n_users, k).into_vec();
            users.sort_unstable();
            users
        })
        .collect();

    let records: Vec<Record> = (0..cfg.n_users)
        .into_par_iter()
        .flat_map_iter(|u| {
            let rates = hourly_rates(cfg, u, &affected);
            user_arrivals(cfg, u, &rates)
        })
        .collect();
    let log = NotificationLog::new(records, cfg.window_start, cfg.window_hours)?;

    let mut anomalous = cfg.persistent_anomalous.clone();
    anomalous.sort_unstable();
    anomalous.dedup();
    let truth = GroundTruth {
        generator: GENERATOR_ID.to_string(),
        seed: cfg.seed,
        window_start: cfg.window_start,
        window_hours: cfg.window_hours,
        anomalous_user_ids: anomalous.into_iter().map(user_id).collect(),
        events: cfg
            .events
            .iter()
            .zip(&affected)
            .map(|(spec, users)| PlantedEvent {
                start_hour: spec.start_hour,
                end_hour: spec.end_hour,
                affected_user_ids: users.iter().map(|&u| user_id(u)).collect(),
            })
            .collect(),
    };
    Ok((log, truth))
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn hourly_rates(cfg: &SynthConfig, user: usize, affected: &[Vec<usize>]) -> Vec<f64> {
    let anomalous = cfg.persistent_anomalous.contains(&user);
    let mut rates: Vec<f64> = (0..cfg.window_hours)
        .map(|h| {
            if !anomalous {
                cfg.base_rate
            } else if (h / REGIME_HOURS).is_multiple_of(2) {
                HIGH_REGIME * cfg.burst_rate
            } else {
                LOW_REGIME * cfg.burst_rate
            }
        })
        .collect();
    for (spec, users) in cfg.events.iter().zip(affected) {
        if users.binary_search(&user).is_ok() {
            for r in &mut rates[spec.start_hour..=spec.end_hour] {
                *r = r.max(cfg.burst_rate);
            }
        }
    }
    rates
}

/// Poisson arrivals; a draw landing in the same second as the previous
/// message is discarded so the log needs no deduplication.
fn user_arrivals(cfg: &SynthConfig, user: usize, rates: &[f64]) -> Vec<Record> {
    let mut rng = stream_rng(cfg.seed, user as u64);
    let id = user_id(user);
    let mut out = Vec::new();
    let mut last = i64::MIN;
    for (h, &rate) in rates.iter().enumerate() {
        let gap = Exp::new(rate / SECONDS_PER_HOUR as f64).expect("validated positive rate");
        let hour_start = cfg.window_start + SECONDS_PER_HOUR * h as i64;
        let mut t = 0.0;
        loop {
            t += gap.sample(&mut rng);
            if t >= SECONDS_PER_HOUR as f64 {
                break;
            }
            let ts = hour_start + t as i64;
            if ts != last {
                out.push(Record {
                    user_id: id.clone(),
                    timestamp: ts,
                });
                last = ts;
            }
        }
    }
    out
}
