//! The five sensing/communication feature streams and their corruption
//! episodes.
//!
//! Features are raw physical quantities (meters, radians, dB); z-scoring
//! happens downstream using the manifest statistics.

use misac_core::Modality;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{codebook_sine, norm_sqr};
use crate::config::{CorruptionMode, CorruptionSpec, ScenarioConfig};
use crate::scene::{distance, Scene, SlotState, VISION_WIDTH};

/// Radius of the lidar neighbour count.
pub const LIDAR_NEIGHBOUR_RADIUS_M: f64 = 50.0;

/// Communication-side measurements of one past slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfObservation {
    pub beam: usize,
    pub beam_gain: f64,
    pub channel_energy: f64,
    pub path_loss_db: f64,
}

impl RfObservation {
    pub fn of(state: &SlotState) -> Self {
        Self {
            beam: state.beam,
            beam_gain: state.beam_gain,
            channel_energy: norm_sqr(&state.channel),
            path_loss_db: state.path_loss_db,
        }
    }
}

/// The last two slots' RF observations, newest first.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RfHistory {
    pub last: Option<RfObservation>,
    pub before: Option<RfObservation>,
}

impl RfHistory {
    pub fn push(&mut self, obs: RfObservation) {
        self.before = self.last;
        self.last = Some(obs);
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    sigma * z
}

pub fn vision_features<R: Rng + ?Sized>(scene: &Scene, state: &SlotState, rng: &mut R) -> Vec<f64> {
    let (az, el, r) = scene.polar(state.kinematics.position);
    let x = [az, el, r / scene.max_range];
    let sigma = scene.config.noise.vision;
    (0..VISION_WIDTH)
        .map(|i| {
            let row = &scene.vision_projection[3 * i..3 * i + 3];
            row[0] * x[0] + row[1] * x[1] + row[2] * x[2] + gauss(rng, sigma)
        })
        .collect()
}

pub fn radar_features<R: Rng + ?Sized>(scene: &Scene, state: &SlotState, rng: &mut R) -> Vec<f64> {
    let n = &scene.config.noise;
    let p = state.kinematics.position;
    let v = state.kinematics.velocity;
    let bs = scene.config.bs_position;
    let (az, el, r) = scene.polar(p);
    let radial: f64 = (0..3).map(|i| v[i] * (p[i] - bs[i]) / r).sum();
    let r = r + gauss(rng, n.radar_range_m);
    let radial = radial + gauss(rng, n.radar_velocity_mps);
    let az = az + gauss(rng, n.radar_angle_rad);
    let el = el + gauss(rng, n.radar_angle_rad);
    vec![r, radial, az, el, az.cos(), az.sin(), el.cos(), el.sin()]
}

pub fn lidar_features<R: Rng + ?Sized>(scene: &Scene, state: &SlotState, rng: &mut R) -> Vec<f64> {
    let n = &scene.config.noise;
    let p = state.kinematics.position;
    let bs = scene.config.bs_position;
    let q = n.lidar_quantization_m;
    let quantize = |x: f64| if q > 0.0 { (x / q).round() * q } else { x };
    let mut f = Vec::with_capacity(Modality::Lidar.width());
    for i in 0..3 {
        f.push(quantize(p[i] - bs[i]) + gauss(rng, n.lidar_m));
    }
    f.push(distance(p, bs) + gauss(rng, n.lidar_m));
    let nearest = scene.nearest_scatterers(p);
    for k in 0..4 {
        let d = nearest.get(k).map_or(0.0, |&(d, _)| d);
        f.push(d + gauss(rng, n.lidar_m));
    }
    for k in 0..2 {
        for i in 0..3 {
            let rel = nearest.get(k).map_or(0.0, |&(_, s)| scene.scatterers[s].position[i] - p[i]);
            f.push(rel + gauss(rng, n.lidar_m));
        }
    }
    f.push(p[2] + gauss(rng, n.lidar_m));
    f.push(nearest.iter().filter(|&&(d, _)| d <= LIDAR_NEIGHBOUR_RADIUS_M).count() as f64);
    f
}

pub fn position_features<R: Rng + ?Sized>(config: &ScenarioConfig, state: &SlotState, rng: &mut R) -> Vec<f64> {
    let n = &config.noise;
    let k = state.kinematics;
    let mut f: Vec<f64> = k.position.iter().map(|&x| x + gauss(rng, n.position_m)).collect();
    f.extend(k.velocity.iter().map(|&x| x + gauss(rng, n.velocity_mps)));
    f
}

/// Previous slot's beam (compressed), SNR, path loss and beam efficiency.
/// All zeros before the first observation.
pub fn rf_history_features<R: Rng + ?Sized>(config: &ScenarioConfig, history: &RfHistory, rng: &mut R) -> Vec<f64> {
    let sigma = config.noise.rf_db;
    let noise: [f64; 3] = std::array::from_fn(|_| gauss(rng, sigma));
    let Some(last) = history.last else {
        return vec![0.0; Modality::RfHistory.width()];
    };
    let b = last.beam as f64;
    let size = config.codebook_size as f64;
    let angle = std::f64::consts::PI * b / size;
    let snr_db = 10.0 * (config.max_power_w * last.beam_gain / config.noise_power_w).log10();
    let delta = history.before.map_or(0.0, |o| last.path_loss_db - o.path_loss_db);
    vec![
        b / (size - 1.0),
        codebook_sine(last.beam, config.codebook_size),
        angle.cos(),
        angle.sin(),
        snr_db + noise[0],
        last.path_loss_db + noise[1],
        delta + noise[2],
        last.beam_gain / last.channel_energy,
    ]
}

/// Episode bookkeeping for one modality stream.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorruptionTracker {
    remaining: usize,
    elapsed: usize,
    direction: Vec<f64>,
}

impl CorruptionTracker {
    /// Possibly start an episode, then corrupt `features` in place if one is
    /// running. Returns the reliability flag.
    pub fn step<R: Rng + ?Sized>(&mut self, spec: &CorruptionSpec, features: &mut [f64], rng: &mut R) -> bool {
        let start: f64 = rng.random();
        if self.remaining == 0 && start < spec.episode_probability {
            self.remaining = spec.episode_length_slots;
            self.elapsed = 0;
            self.direction = (0..features.len()).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        }
        if self.remaining == 0 {
            return true;
        }
        self.elapsed += 1;
        self.remaining -= 1;
        match spec.mode {
            CorruptionMode::GaussianNoise { sigma } => features.iter_mut().for_each(|x| *x += gauss(rng, sigma)),
            CorruptionMode::DropoutToZero => features.fill(0.0),
            CorruptionMode::BiasDrift { magnitude } => {
                let ramp = magnitude * self.elapsed as f64 / spec.episode_length_slots as f64;
                features.iter_mut().zip(&self.direction).for_each(|(x, d)| *x += d * ramp);
            }
        }
        false
    }
}

/// Stateful generator of the concatenated 54-wide feature vector.
#[derive(Debug, Clone, Default)]
pub struct ModalitySynth {
    trackers: [CorruptionTracker; Modality::COUNT],
    pub history: RfHistory,
}

impl ModalitySynth {
    pub fn new() -> Self {
        Self::default()
    }

    /// Features for `state` in canonical modality order plus reliability
    /// flags. Records `state` into the RF history afterwards.
    pub fn step<R1: Rng + ?Sized, R2: Rng + ?Sized>(
        &mut self,
        scene: &Scene,
        state: &SlotState,
        noise_rng: &mut R1,
        corruption_rng: &mut R2,
    ) -> (Vec<f64>, [bool; Modality::COUNT]) {
        let mut all = Vec::with_capacity(Modality::total_width());
        let mut reliable = [true; Modality::COUNT];
        for m in Modality::ALL {
            let mut f = match m {
                Modality::Vision => vision_features(scene, state, noise_rng),
                Modality::Radar => radar_features(scene, state, noise_rng),
                Modality::Lidar => lidar_features(scene, state, noise_rng),
                Modality::Position => position_features(&scene.config, state, noise_rng),
                Modality::RfHistory => rf_history_features(&scene.config, &self.history, noise_rng),
            };
            debug_assert_eq!(f.len(), m.width());
            reliable[m.index()] = self.trackers[m.index()].step(scene.config.corruption.get(m), &mut f, corruption_rng);
            all.extend(f);
        }
        self.history.push(RfObservation::of(state));
        (all, reliable)
    }
}
