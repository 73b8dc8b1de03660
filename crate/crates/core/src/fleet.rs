//! Simulated worker devices: hardware profiles, synthetic telemetry,
//! the execution-speed model and churn schedules.

use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SimRng;

pub type WorkerId = String;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FleetError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid profile {id}: {reason}")]
    InvalidProfile { id: String, reason: String },
}

/// Static description of one worker device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub id: WorkerId,
    pub cores: u32,
    pub freq_ghz: f64,
    pub ram_gb: f64,
    #[serde(default = "default_background_load")]
    pub background_load: f64,
    #[serde(default)]
    pub churn_rate_per_min: f64,
    #[serde(default)]
    pub reconnect_delay_s: (f64, f64),
}

fn default_background_load() -> f64 {
    0.1
}

impl DeviceProfile {
    pub fn new(id: impl Into<String>, cores: u32, freq_ghz: f64, ram_gb: f64) -> Self {
        Self {
            id: id.into(),
            cores,
            freq_ghz,
            ram_gb,
            background_load: default_background_load(),
            churn_rate_per_min: 0.0,
            reconnect_delay_s: (0.0, 0.0),
        }
    }

    pub fn validate(&self) -> Result<(), FleetError> {
        let fail = |reason: &str| {
            Err(FleetError::InvalidProfile {
                id: self.id.clone(),
                reason: reason.to_string(),
            })
        };
        if self.id.is_empty() {
            return fail("empty id");
        }
        if self.cores == 0 {
            return fail("cores must be positive");
        }
        if !(self.freq_ghz.is_finite() && self.freq_ghz > 0.0) {
            return fail("freq_ghz must be positive and finite");
        }
        if !(self.ram_gb.is_finite() && self.ram_gb > 0.0) {
            return fail("ram_gb must be positive and finite");
        }
        if !(0.0..1.0).contains(&self.background_load) {
            return fail("background_load must lie in [0, 1)");
        }
        if !(self.churn_rate_per_min.is_finite() && self.churn_rate_per_min >= 0.0) {
            return fail("churn_rate_per_min must be non-negative and finite");
        }
        let (lo, hi) = self.reconnect_delay_s;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return fail("reconnect_delay_s must satisfy 0 <= min <= max");
        }
        Ok(())
    }

    /// `cores * freq_ghz`, the static compute capacity.
    pub fn capacity(&self) -> f64 {
        self.cores as f64 * self.freq_ghz
    }
}

/// The six-device heterogeneous test fleet.
pub fn default_fleet() -> Vec<DeviceProfile> {
    [
        ("A34", 8, 2.00, 7.3),
        ("A32", 8, 1.80, 5.5),
        ("A51", 8, 1.74, 7.4),
        ("E40", 8, 1.82, 3.4),
        ("S6 Lite", 8, 2.00, 3.6),
        ("A9+", 8, 1.80, 3.3),
    ]
    .into_iter()
    .map(|(id, cores, freq, ram)| DeviceProfile::new(id, cores, freq, ram))
    .collect()
}

/// One worker's live state at a simulated instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TelemetrySnapshot {
    pub worker_id: WorkerId,
    pub cpu_util: f64,
    pub free_mem_gb: f64,
    pub battery: f64,
    pub latency_ms: f64,
    pub thermal: f64,
    pub timestamp_s: f64,
}

impl TelemetrySnapshot {
    /// Resting state: full battery, load at the profile's background level.
    pub fn initial(profile: &DeviceProfile, model: &TelemetryModel) -> Self {
        let cpu = profile.background_load;
        Self {
            worker_id: profile.id.clone(),
            cpu_util: cpu,
            free_mem_gb: profile.ram_gb * (1.0 - model.mem_pressure * cpu),
            battery: 1.0,
            latency_ms: model.base_latency_ms + model.latency_jitter_mean_ms,
            thermal: cpu,
            timestamp_s: 0.0,
        }
    }

    pub fn in_bounds(&self) -> bool {
        (0.0..=1.0).contains(&self.cpu_util)
            && self.free_mem_gb >= 0.0
            && (0.0..=1.0).contains(&self.battery)
            && self.latency_ms > 0.0
            && (0.0..=1.0).contains(&self.thermal)
    }
}

/// Constants of the synthetic telemetry dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TelemetryModel {
    /// Mean-reversion rate of cpu utilisation toward background load, 1/s.
    pub reversion_rate: f64,
    /// Noise scale; the per-step standard deviation is `noise_sigma * sqrt(dt)`.
    pub noise_sigma: f64,
    pub battery_drain_per_min: f64,
    pub busy_drain_per_min: f64,
    pub busy_threshold: f64,
    pub thermal_rate: f64,
    pub base_latency_ms: f64,
    pub latency_jitter_mean_ms: f64,
    pub mem_pressure: f64,
    pub mem_noise_gb: f64,
    /// Fixed integration step used by the simulator, seconds.
    pub step_s: f64,
}

impl Default for TelemetryModel {
    fn default() -> Self {
        Self {
            reversion_rate: 0.5,
            noise_sigma: 0.05,
            battery_drain_per_min: 0.01,
            busy_drain_per_min: 0.05,
            busy_threshold: 0.5,
            thermal_rate: 0.1,
            base_latency_ms: 20.0,
            latency_jitter_mean_ms: 5.0,
            mem_pressure: 0.3,
            mem_noise_gb: 0.1,
            step_s: 1.0,
        }
    }
}

/// Advances one worker's telemetry by `dt_s` seconds.
pub fn step_telemetry(
    profile: &DeviceProfile,
    prev: &TelemetrySnapshot,
    dt_s: f64,
    model: &TelemetryModel,
    rng: &mut SimRng,
) -> Result<TelemetrySnapshot, FleetError> {
    if !(dt_s.is_finite() && dt_s > 0.0) {
        return Err(FleetError::InvalidInput(format!(
            "time step must be positive, got {dt_s}"
        )));
    }
    // Draw every variate unconditionally so the stream position depends only
    // on the number of steps taken.
    let z: f64 = StandardNormal.sample(rng);
    let jitter_u: f64 = rng.random();
    let mem_u: f64 = rng.random();

    let target = profile.background_load;
    let decay = (-model.reversion_rate * dt_s).exp();
    let cpu = (target + (prev.cpu_util - target) * decay + model.noise_sigma * dt_s.sqrt() * z)
        .clamp(0.0, 1.0);

    let mut drain = model.battery_drain_per_min;
    if cpu > model.busy_threshold {
        drain += model.busy_drain_per_min;
    }
    let battery = (prev.battery - drain * dt_s / 60.0).clamp(0.0, 1.0);

    let relax = 1.0 - (-model.thermal_rate * dt_s).exp();
    let thermal = (prev.thermal + (cpu - prev.thermal) * relax).clamp(0.0, 1.0);

    // exponential jitter by inverse CDF
    let latency_ms = model.base_latency_ms - model.latency_jitter_mean_ms * (1.0 - jitter_u).ln();

    let mem_noise = (2.0 * mem_u - 1.0) * model.mem_noise_gb;
    let free_mem_gb = (profile.ram_gb * (1.0 - model.mem_pressure * cpu) + mem_noise).max(0.0);

    Ok(TelemetrySnapshot {
        worker_id: prev.worker_id.clone(),
        cpu_util: cpu,
        free_mem_gb,
        battery,
        latency_ms: latency_ms.max(f64::MIN_POSITIVE),
        thermal,
        timestamp_s: prev.timestamp_s + dt_s,
    })
}

/// Work units per second the device delivers given its current load.
pub fn effective_throughput(
    profile: &DeviceProfile,
    snap: &TelemetrySnapshot,
    unit_scale: f64,
) -> f64 {
    (profile.capacity() * (1.0 - snap.cpu_util) * unit_scale).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChurnKind {
    Disconnect,
    Reconnect,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChurnEvent {
    pub worker_id: WorkerId,
    pub kind: ChurnKind,
    pub at_s: f64,
}

/// Draws a disconnect/reconnect schedule for every profile with a
/// non-zero churn rate.
///
/// Disconnects arrive as a Poisson process while the worker is connected;
/// each is followed by a reconnect after a uniform delay. A reconnect is
/// emitted even if it lands past the horizon, so every disconnect is paired.
pub fn sample_churn(
    profiles: &[DeviceProfile],
    horizon_s: f64,
    rng: &mut SimRng,
) -> Result<Vec<ChurnEvent>, FleetError> {
    if !(horizon_s.is_finite() && horizon_s > 0.0) {
        return Err(FleetError::InvalidInput(format!(
            "horizon must be positive, got {horizon_s}"
        )));
    }
    let mut events = Vec::new();
    for profile in profiles {
        if profile.churn_rate_per_min <= 0.0 {
            continue;
        }
        let gap = Exp::new(profile.churn_rate_per_min / 60.0)
            .map_err(|e| FleetError::InvalidInput(e.to_string()))?;
        let (lo, hi) = profile.reconnect_delay_s;
        let mut t = 0.0;
        loop {
            t += gap.sample(rng);
            if t >= horizon_s {
                break;
            }
            let delay = if hi > lo { rng.random_range(lo..hi) } else { lo };
            events.push(ChurnEvent {
                worker_id: profile.id.clone(),
                kind: ChurnKind::Disconnect,
                at_s: t,
            });
            t += delay;
            events.push(ChurnEvent {
                worker_id: profile.id.clone(),
                kind: ChurnKind::Reconnect,
                at_s: t,
            });
        }
    }
    // stable: per-worker order is preserved on equal timestamps
    events.sort_by(|a, b| a.at_s.total_cmp(&b.at_s));
    Ok(events)
}
