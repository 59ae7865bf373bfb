//! Static scene (scatterers, frozen vision projection) and per-slot
//! propagation geometry.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::{dft_codebook, optimal_beam, path_loss_db, synthesize_channel, Path, PathSet};
use crate::config::{ScenarioConfig, SPEED_OF_LIGHT};
use crate::error::Result;
use crate::trajectory::KinematicState;

/// Scatterers sit below this height.
pub const SCATTERER_MAX_HEIGHT_M: f64 = 15.0;
pub const VISION_WIDTH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub position: [f64; 3],
    /// Amplitude relative to the LoS gain, in [0.05, 0.3].
    pub reflectivity: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub config: ScenarioConfig,
    pub scatterers: Vec<Scatterer>,
    /// `VISION_WIDTH x 3`, row-major; maps [azimuth, elevation, range / max range].
    pub vision_projection: Vec<f64>,
    /// Phase of the LoS gain, one per UAV.
    pub los_phases: Vec<f64>,
    pub codebook: Vec<Vec<Complex64>>,
    pub max_range: f64,
}

/// Everything the sensors could observe about one UAV in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    pub kinematics: KinematicState,
    pub paths: PathSet,
    pub channel: Vec<Complex64>,
    pub beam: usize,
    pub beam_gain: f64,
    pub path_loss_db: f64,
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

/// Sine of the departure angle towards `target`: the direction component
/// along the array axis (+y).
fn departure_angle(bs: [f64; 3], target: [f64; 3]) -> f64 {
    let d = distance(bs, target);
    ((target[1] - bs[1]) / d).clamp(-1.0, 1.0).asin()
}

impl Scene {
    pub fn generate<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let a = &config.arena;
        let scatterers = (0..config.scatterer_count)
            .map(|_| Scatterer {
                position: [
                    rng.random_range(a.min[0]..=a.max[0]),
                    rng.random_range(a.min[1]..=a.max[1]),
                    rng.random_range(0.0..=SCATTERER_MAX_HEIGHT_M),
                ],
                reflectivity: rng.random_range(0.05..=0.3),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let scale = 1.0 / 3f64.sqrt();
        let vision_projection = (0..VISION_WIDTH * 3).map(|_| { let z: f64 = StandardNormal.sample(rng); scale * z }).collect();
        let los_phases = (0..config.uavs).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
        let codebook = dft_codebook(config.antennas, config.codebook_size, config.spacing(), config.wavelength())?;
        let max_range = corners(a).into_iter().map(|c| distance(config.bs_position, c)).fold(0.0, f64::max);
        Ok(Self { config: config.clone(), scatterers, vision_projection, los_phases, codebook, max_range })
    }

    /// LoS path plus reflections off the `L_p - 1` scatterers with the
    /// shortest detour.
    pub fn paths(&self, uav: usize, position: [f64; 3]) -> PathSet {
        let c = &self.config;
        let bs = c.bs_position;
        let d1 = distance(bs, position);
        // Inverse-distance amplitude with d_ref = 1 m: λ / (4π d).
        let los_amp = c.wavelength() / (4.0 * std::f64::consts::PI * d1);
        let los_gain = Complex64::from_polar(los_amp, self.los_phases[uav]);
        let mut paths = vec![Path { gain: los_gain, delay: d1 / SPEED_OF_LIGHT, aod: departure_angle(bs, position) }];

        let mut order: Vec<(f64, usize)> = self
            .scatterers
            .iter()
            .enumerate()
            .map(|(i, s)| (distance(bs, s.position) + distance(s.position, position), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(length, i) in order.iter().take(c.paths - 1) {
            let s = &self.scatterers[i];
            paths.push(Path {
                gain: los_gain * Complex64::from_polar(s.reflectivity, s.phase),
                delay: length / SPEED_OF_LIGHT,
                aod: departure_angle(bs, s.position),
            });
        }
        paths
    }

    pub fn slot_state(&self, uav: usize, kinematics: KinematicState) -> Result<SlotState> {
        let c = &self.config;
        let paths = self.paths(uav, kinematics.position);
        let channel = synthesize_channel(&paths, c.antennas, c.spacing(), c.carrier_hz);
        let (beam, beam_gain) = optimal_beam(&channel, &self.codebook)?;
        let path_loss_db = path_loss_db(&channel);
        Ok(SlotState { kinematics, paths, channel, beam, beam_gain, path_loss_db })
    }

    /// Azimuth, elevation and range of `p` seen from the base station.
    pub fn polar(&self, p: [f64; 3]) -> (f64, f64, f64) {
        let bs = self.config.bs_position;
        let (dx, dy, dz) = (p[0] - bs[0], p[1] - bs[1], p[2] - bs[2]);
        (dy.atan2(dx), dz.atan2(dx.hypot(dy)), distance(bs, p))
    }

    /// Scatterer indices sorted by distance to `p` (ties by index).
    pub fn nearest_scatterers(&self, p: [f64; 3]) -> Vec<(f64, usize)> {
        let mut d: Vec<(f64, usize)> = self.scatterers.iter().enumerate().map(|(i, s)| (distance(s.position, p), i)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        d
    }
}

fn corners(a: &crate::config::Arena) -> Vec<[f64; 3]> {
    (0..8)
        .map(|k| std::array::from_fn(|i| if (k >> i) & 1 == 0 { a.min[i] } else { a.max[i] }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scene() -> Scene {
        Scene::generate(&ScenarioConfig::default(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    }

    #[test]
    fn los_dominates_and_delays_are_positive() {
        let s = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = &s.config.arena;
            let p: [f64; 3] = std::array::from_fn(|i| rng.random_range(a.min[i]..a.max[i]));
            let paths = s.paths(0, p);
            assert_eq!(paths.len(), 3);
            assert!(paths.iter().all(|q| q.delay > 0.0 && q.aod.abs() < std::f64::consts::FRAC_PI_2));
            assert!(paths[1..].iter().all(|q| q.gain.norm() <= paths[0].gain.norm()));
            assert!(paths[1..].iter().all(|q| q.delay > paths[0].delay));
        }
    }

    #[test]
    fn los_aod_follows_geometry() {
        let s = scene();
        let bs = s.config.bs_position;
        let p = [bs[0] + 100.0, bs[1] + 100.0, bs[2]];
        let aod = s.paths(0, p)[0].aod;
        assert!((aod - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn beam_tracks_the_los_direction() {
        let s = scene();
        let bs = s.config.bs_position;
        // Broadside UAV: the two central beams straddle sin θ = 0.
        let st = s.slot_state(0, KinematicState { position: [bs[0] + 80.0, 0.0, 60.0], velocity: [0.0; 3] }).unwrap();
        assert!((15..=16).contains(&st.beam), "{}", st.beam);
        assert!(st.path_loss_db.is_finite() && st.path_loss_db > 60.0);
    }
}
