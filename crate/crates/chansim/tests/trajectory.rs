use misac_chansim::dataset::{stream_rng, streams};
use misac_chansim::{generate_trajectory, ScenarioConfig, Trajectory};
use proptest::prelude::*;

#[test]
fn velocity_matches_numeric_derivative() {
    let c = ScenarioConfig::default();
    for seed in 0..5 {
        let traj = generate_trajectory(&c, &mut stream_rng(seed, streams::TRAJECTORY));
        let h = 1e-4;
        for k in 1..1000 {
            let t = k as f64 * c.slot_duration_s;
            let s = traj.state(t);
            let (plus, minus) = (traj.state(t + h).position, traj.state(t - h).position);
            for i in 0..3 {
                let fd = (plus[i] - minus[i]) / (2.0 * h);
                assert!((fd - s.velocity[i]).abs() <= 1e-3 * c.max_speed_mps, "seed {seed} t {t}: {fd} vs {}", s.velocity[i]);
            }
        }
    }
}

#[test]
fn trajectory_covers_all_slots_under_the_speed_limit() {
    let c = ScenarioConfig::default();
    let traj = generate_trajectory(&c, &mut stream_rng(1, streams::TRAJECTORY));
    assert!(traj.duration() >= c.slot_duration_s * (c.slots - 1) as f64);
    assert!(traj.speed_bound() <= c.max_speed_mps * (1.0 + 1e-12));
}

#[test]
fn hovering_with_one_waypoint() {
    let t = Trajectory::from_waypoints(vec![[50.0, 0.0, 40.0]], 1.0);
    assert_eq!(t.state(12.5).position, [50.0, 0.0, 40.0]);
    assert_eq!(t.state(12.5).velocity, [0.0; 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stays_inside_the_arena(seed in any::<u64>(), interval in 2.0f64..40.0, vmax in 1.0f64..30.0) {
        let c = ScenarioConfig { slots: 1000, waypoint_interval_s: interval, max_speed_mps: vmax, ..Default::default() };
        let traj = generate_trajectory(&c, &mut stream_rng(seed, streams::TRAJECTORY));
        for k in 0..1000 {
            let s = traj.state(k as f64 * c.slot_duration_s);
            prop_assert!(c.arena.contains(s.position), "{:?}", s.position);
            let speed = s.velocity.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(speed <= vmax * (1.0 + 1e-9));
        }
    }
}
