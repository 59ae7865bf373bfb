//! Scenario description. Every field has a default so a config file only
//! names what it changes; the fully materialized struct is what gets hashed.

use misac_core::Modality;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arena {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Arena {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn extent(&self) -> [f64; 3] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1], self.max[2] - self.min[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorruptionMode {
    /// Adds N(0, σ²) to every feature, in raw feature units.
    GaussianNoise { sigma: f64 },
    /// Replaces the whole vector with zeros.
    DropoutToZero,
    /// Adds a bias that grows linearly over the episode to `magnitude` in a
    /// random ±1 direction per feature.
    BiasDrift { magnitude: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    pub episode_probability: f64,
    pub episode_length_slots: usize,
    pub mode: CorruptionMode,
}

impl CorruptionSpec {
    pub fn none() -> Self {
        Self { episode_probability: 0.0, episode_length_slots: 1, mode: CorruptionMode::DropoutToZero }
    }
}

/// Corruption process per modality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorruptionConfig {
    pub vision: CorruptionSpec,
    pub radar: CorruptionSpec,
    pub lidar: CorruptionSpec,
    pub position: CorruptionSpec,
    pub rf_history: CorruptionSpec,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        let spec = |mode| CorruptionSpec { episode_probability: 0.02, episode_length_slots: 20, mode };
        Self {
            vision: spec(CorruptionMode::DropoutToZero),
            radar: spec(CorruptionMode::BiasDrift { magnitude: 0.5 }),
            lidar: spec(CorruptionMode::GaussianNoise { sigma: 15.0 }),
            position: spec(CorruptionMode::GaussianNoise { sigma: 50.0 }),
            rf_history: spec(CorruptionMode::DropoutToZero),
        }
    }
}

impl CorruptionConfig {
    pub fn none() -> Self {
        let n = CorruptionSpec::none();
        Self { vision: n, radar: n, lidar: n, position: n, rf_history: n }
    }

    pub fn get(&self, m: Modality) -> &CorruptionSpec {
        match m {
            Modality::Vision => &self.vision,
            Modality::Radar => &self.radar,
            Modality::Lidar => &self.lidar,
            Modality::Position => &self.position,
            Modality::RfHistory => &self.rf_history,
        }
    }
}

/// Per-sensor measurement noise (standard deviations, raw units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNoise {
    pub vision: f64,
    pub radar_range_m: f64,
    pub radar_velocity_mps: f64,
    pub radar_angle_rad: f64,
    pub lidar_quantization_m: f64,
    pub lidar_m: f64,
    pub position_m: f64,
    pub velocity_mps: f64,
    pub rf_db: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            vision: 0.01,
            radar_range_m: 1.0,
            radar_velocity_mps: 0.3,
            radar_angle_rad: 0.02,
            lidar_quantization_m: 2.0,
            lidar_m: 1.0,
            position_m: 10.0,
            velocity_mps: 0.5,
            rf_db: 1.0,
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        Self {
            vision: 0.0,
            radar_range_m: 0.0,
            radar_velocity_mps: 0.0,
            radar_angle_rad: 0.0,
            lidar_quantization_m: 0.0,
            lidar_m: 0.0,
            position_m: 0.0,
            velocity_mps: 0.0,
            rf_db: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// ULA element count M.
    pub antennas: usize,
    /// UAV count K.
    pub uavs: usize,
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Element spacing; λ/2 when absent.
    pub antenna_spacing_m: Option<f64>,
    /// Path count L_p; path 0 is line of sight.
    pub paths: usize,
    pub noise_power_w: f64,
    pub max_power_w: f64,
    pub codebook_size: usize,
    pub slots: usize,
    pub slot_duration_s: f64,
    pub max_speed_mps: f64,
    /// Nominal seconds between trajectory waypoints before speed limiting.
    pub waypoint_interval_s: f64,
    pub arena: Arena,
    /// Base-station array phase center; the array axis is +y.
    pub bs_position: [f64; 3],
    pub scatterer_count: usize,
    pub rng_seed: u64,
    pub noise: SensorNoise,
    pub corruption: CorruptionConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            antennas: 32,
            uavs: 1,
            carrier_hz: 5.915e9,
            bandwidth_hz: 20e6,
            antenna_spacing_m: None,
            paths: 3,
            // kTB at 290 K over 20 MHz.
            noise_power_w: 8.0e-14,
            max_power_w: 1.0,
            codebook_size: 32,
            slots: 4096,
            slot_duration_s: 0.1,
            max_speed_mps: 15.0,
            waypoint_interval_s: 20.0,
            arena: Arena { min: [20.0, -100.0, 20.0], max: [220.0, 100.0, 120.0] },
            bs_position: [0.0, 0.0, 10.0],
            scatterer_count: 32,
            rng_seed: 1,
            noise: SensorNoise::default(),
            corruption: CorruptionConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }

    pub fn spacing(&self) -> f64 {
        self.antenna_spacing_m.unwrap_or(self.wavelength() / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if self.antennas == 0 {
            return bad("antennas must be positive".into());
        }
        if self.uavs == 0 {
            return bad("uavs must be positive".into());
        }
        if self.paths == 0 {
            return bad("paths must be at least 1 (line of sight)".into());
        }
        if self.codebook_size < 2 {
            return bad(format!("codebook_size must be at least 2, got {}", self.codebook_size));
        }
        if self.slots == 0 {
            return bad("slots must be positive".into());
        }
        let positive = [
            ("carrier_hz", self.carrier_hz),
            ("bandwidth_hz", self.bandwidth_hz),
            ("noise_power_w", self.noise_power_w),
            ("max_power_w", self.max_power_w),
            ("slot_duration_s", self.slot_duration_s),
            ("max_speed_mps", self.max_speed_mps),
            ("waypoint_interval_s", self.waypoint_interval_s),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(v.is_finite() && *v > 0.0)) {
            return bad(format!("{name} must be positive and finite, got {v}"));
        }
        if let Some(d) = self.antenna_spacing_m {
            if !(d.is_finite() && d > 0.0) {
                return bad(format!("antenna_spacing_m must be positive, got {d}"));
            }
        }
        if (0..3).any(|i| !(self.arena.min[i] < self.arena.max[i])) {
            return bad(format!("arena {:?} is empty", self.arena));
        }
        if self.arena.min[0] <= self.bs_position[0] {
            return bad("the arena must lie in front of the array (min x > bs x)".into());
        }
        if self.scatterer_count + 1 < self.paths {
            return bad(format!("{} paths need at least {} scatterers", self.paths, self.paths - 1));
        }
        let n = &self.noise;
        let sigmas = [
            n.vision,
            n.radar_range_m,
            n.radar_velocity_mps,
            n.radar_angle_rad,
            n.lidar_quantization_m,
            n.lidar_m,
            n.position_m,
            n.velocity_mps,
            n.rf_db,
        ];
        if sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise parameters must be non-negative".into());
        }
        for m in Modality::ALL {
            let c = self.corruption.get(m);
            if !(0.0..=1.0).contains(&c.episode_probability) {
                return bad(format!("{m} corruption probability {} outside [0, 1]", c.episode_probability));
            }
            if c.episode_length_slots == 0 {
                return bad(format!("{m} corruption episode length must be at least 1"));
            }
            let magnitude = match c.mode {
                CorruptionMode::GaussianNoise { sigma } => sigma,
                CorruptionMode::BiasDrift { magnitude } => magnitude,
                CorruptionMode::DropoutToZero => 0.0,
            };
            if !(magnitude.is_finite() && magnitude >= 0.0) {
                return bad(format!("{m} corruption magnitude must be non-negative"));
            }
        }
        Ok(())
    }
}
