//! Waypoint trajectories: per-axis monotone cubic (PCHIP) interpolation over
//! uniformly spaced knots, time-scaled so the speed never exceeds `v_max`.
//!
//! Each Hermite segment is monotone per axis, so the path stays inside the
//! bounding box of its waypoints; drawing waypoints inside the arena keeps the
//! whole flight inside the arena without clamping.

use rand::Rng;

use crate::config::ScenarioConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: Vec<[f64; 3]>,
    /// Knot slopes in meters per second.
    slopes: Vec<[f64; 3]>,
    /// Seconds between knots.
    spacing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicState {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
}

fn pchip_slopes(y: &[f64], h: f64) -> Vec<f64> {
    let n = y.len();
    let mut d = vec![0.0; n];
    for k in 1..n.saturating_sub(1) {
        let (s0, s1) = ((y[k] - y[k - 1]) / h, (y[k + 1] - y[k]) / h);
        if s0 * s1 > 0.0 {
            // Harmonic mean; equal spacing makes the weights equal.
            d[k] = 2.0 / (1.0 / s0 + 1.0 / s1);
        }
    }
    d
}

/// Bound on `|dp/dt|` over one Hermite segment of length `h` seconds.
fn segment_speed_bound(y0: f64, y1: f64, d0: f64, d1: f64, h: f64) -> f64 {
    // p'(s)/h with s in [0, 1]: a s² + b s + c.
    let delta = y1 - y0;
    let (m0, m1) = (d0 * h, d1 * h);
    let a = -6.0 * delta + 3.0 * (m0 + m1);
    let b = 6.0 * delta - 4.0 * m0 - 2.0 * m1;
    let c = m0;
    let q = |s: f64| ((a * s + b) * s + c).abs();
    let mut best = q(0.0).max(q(1.0));
    if a != 0.0 {
        let s = -b / (2.0 * a);
        if (0.0..=1.0).contains(&s) {
            best = best.max(q(s));
        }
    }
    best / h
}

impl Trajectory {
    /// Interpolate `waypoints` visited every `spacing` seconds. A single
    /// waypoint is a hover.
    pub fn from_waypoints(waypoints: Vec<[f64; 3]>, spacing: f64) -> Self {
        assert!(!waypoints.is_empty() && spacing > 0.0);
        let mut slopes = vec![[0.0; 3]; waypoints.len()];
        for axis in 0..3 {
            let y: Vec<f64> = waypoints.iter().map(|w| w[axis]).collect();
            for (k, d) in pchip_slopes(&y, spacing).into_iter().enumerate() {
                slopes[k][axis] = d;
            }
        }
        Self { waypoints, slopes, spacing }
    }

    /// Rigorous upper bound on the speed over the whole trajectory.
    pub fn speed_bound(&self) -> f64 {
        let mut best: f64 = 0.0;
        for k in 0..self.waypoints.len().saturating_sub(1) {
            let per_axis: f64 = (0..3)
                .map(|i| {
                    segment_speed_bound(
                        self.waypoints[k][i],
                        self.waypoints[k + 1][i],
                        self.slopes[k][i],
                        self.slopes[k + 1][i],
                        self.spacing,
                    )
                    .powi(2)
                })
                .sum();
            best = best.max(per_axis.sqrt());
        }
        best
    }

    /// Stretch time by `factor` (> 1 slows down).
    pub fn time_scaled(&self, factor: f64) -> Self {
        Self::from_waypoints(self.waypoints.clone(), self.spacing * factor)
    }

    pub fn duration(&self) -> f64 {
        self.spacing * (self.waypoints.len() - 1) as f64
    }

    pub fn waypoints(&self) -> &[[f64; 3]] {
        &self.waypoints
    }

    /// Position and analytic velocity at time `t` seconds, clamped to the
    /// trajectory's time span.
    pub fn state(&self, t: f64) -> KinematicState {
        let n = self.waypoints.len();
        if n == 1 {
            return KinematicState { position: self.waypoints[0], velocity: [0.0; 3] };
        }
        let t = t.clamp(0.0, self.duration());
        let k = ((t / self.spacing).floor() as usize).min(n - 2);
        let s = (t - k as f64 * self.spacing) / self.spacing;
        let h = self.spacing;
        let (s2, s3) = (s * s, s * s * s);
        let (h00, h10, h01, h11) = (2.0 * s3 - 3.0 * s2 + 1.0, s3 - 2.0 * s2 + s, -2.0 * s3 + 3.0 * s2, s3 - s2);
        let (g00, g10, g01, g11) = (6.0 * s2 - 6.0 * s, 3.0 * s2 - 4.0 * s + 1.0, -6.0 * s2 + 6.0 * s, 3.0 * s2 - 2.0 * s);
        let mut state = KinematicState { position: [0.0; 3], velocity: [0.0; 3] };
        for i in 0..3 {
            let (y0, y1) = (self.waypoints[k][i], self.waypoints[k + 1][i]);
            let (m0, m1) = (self.slopes[k][i] * h, self.slopes[k + 1][i] * h);
            state.position[i] = h00 * y0 + h10 * m0 + h01 * y1 + h11 * m1;
            state.velocity[i] = (g00 * y0 + g10 * m0 + g01 * y1 + g11 * m1) / h;
        }
        state
    }
}

/// Draw waypoints uniformly in the arena, one per `waypoint_interval_s`,
/// enough to cover all slots, then slow the schedule down if needed to honour
/// `max_speed_mps`.
pub fn generate_trajectory<R: Rng + ?Sized>(config: &ScenarioConfig, rng: &mut R) -> Trajectory {
    let horizon = config.slot_duration_s * config.slots.saturating_sub(1) as f64;
    let interval = config.waypoint_interval_s;
    let count = (horizon / interval).ceil() as usize + 1;
    let a = &config.arena;
    let waypoints: Vec<[f64; 3]> = (0..count)
        .map(|_| std::array::from_fn(|i| rng.random_range(a.min[i]..=a.max[i])))
        .collect();
    let traj = Trajectory::from_waypoints(waypoints, interval);
    let bound = traj.speed_bound();
    if bound > config.max_speed_mps {
        traj.time_scaled(bound / config.max_speed_mps)
    } else {
        traj
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_waypoint_hovers() {
        let t = Trajectory::from_waypoints(vec![[1.0, 2.0, 3.0]], 5.0);
        for time in [0.0, 3.0, 100.0] {
            let s = t.state(time);
            assert_eq!(s.position, [1.0, 2.0, 3.0]);
            assert_eq!(s.velocity, [0.0; 3]);
        }
    }

    #[test]
    fn passes_through_waypoints() {
        let w = vec![[0.0, 0.0, 0.0], [10.0, -5.0, 2.0], [12.0, 5.0, 1.0], [0.0, 0.0, 4.0]];
        let t = Trajectory::from_waypoints(w.clone(), 2.0);
        for (k, p) in w.iter().enumerate() {
            let s = t.state(2.0 * k as f64);
            for i in 0..3 {
                assert!((s.position[i] - p[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn extrema_have_zero_slope() {
        let t = Trajectory::from_waypoints(vec![[0.0; 3], [5.0, 5.0, 5.0], [1.0, 6.0, 5.0]], 1.0);
        let v = t.state(1.0).velocity;
        assert_eq!(v[0], 0.0);
        assert!(v[1] > 0.0);
        assert_eq!(v[2], 0.0);
    }

    #[test]
    fn speed_bound_dominates_sampled_speed() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w: Vec<[f64; 3]> = (0..12).map(|_| std::array::from_fn(|_| rng.random_range(-50.0..50.0))).collect();
        let t = Trajectory::from_waypoints(w, 7.0);
        let bound = t.speed_bound();
        let mut max_seen: f64 = 0.0;
        for i in 0..=11_000 {
            let v = t.state(i as f64 * 7e-3).velocity;
            max_seen = max_seen.max(v.iter().map(|x| x * x).sum::<f64>().sqrt());
        }
        assert!(max_seen <= bound + 1e-9);
        assert!(max_seen > 0.5 * bound);
    }
}
