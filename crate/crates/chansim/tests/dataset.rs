use misac_chansim::channel::{dft_codebook, optimal_beam, path_loss_db, synthesize_channel};
use misac_chansim::config::{CorruptionConfig, CorruptionMode, CorruptionSpec, SensorNoise};
use misac_chansim::dataset::{DATA_FILE, MANIFEST_FILE};
use misac_chansim::{generate_dataset, Dataset, ScenarioConfig};
use misac_core::Modality;
use num_complex::Complex64;

fn small(slots: usize) -> ScenarioConfig {
    ScenarioConfig { slots, ..Default::default() }
}

#[test]
fn same_seed_gives_byte_identical_files() {
    let c = small(300);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&c, 0.7).unwrap().write(a.path()).unwrap();
    generate_dataset(&c, 0.7).unwrap().write(b.path()).unwrap();
    for f in [DATA_FILE, MANIFEST_FILE] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = generate_dataset(&ScenarioConfig { rng_seed: 2, ..c }, 0.7).unwrap();
    let first = Dataset::read(a.path()).unwrap();
    assert_ne!(other.records[5].features, first.records[5].features);
}

#[test]
fn write_then_read_is_lossless() {
    let d = generate_dataset(&small(200), 0.7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    assert_eq!(Dataset::read(dir.path()).unwrap(), d);
}

#[test]
fn stored_labels_are_recomputable() {
    let d = generate_dataset(&small(1000), 0.7).unwrap();
    let c = d.config();
    let cb = dft_codebook(c.antennas, c.codebook_size, c.spacing(), c.wavelength()).unwrap();
    let mut matches = 0;
    for r in &d.records {
        // Brute-force sweep over the stored channel.
        let gains: Vec<f64> = cb.iter().map(|f| r.channel.iter().zip(f).map(|(h, x)| h.conj() * x).sum::<Complex64>().norm_sqr()).collect();
        let best = (0..gains.len()).fold(0, |b, i| if gains[i] > gains[b] { i } else { b });
        if best == r.beam_label as usize {
            matches += 1;
        }
        let recomputed = synthesize_channel(&r.paths, c.antennas, c.spacing(), c.carrier_hz);
        assert_eq!(recomputed, r.channel);
        assert!((path_loss_db(&r.channel) - r.path_loss_db).abs() < 1e-12);
    }
    assert_eq!(matches, d.len());
}

#[test]
fn records_satisfy_their_invariants() {
    let d = generate_dataset(&small(2000), 0.7).unwrap();
    let c = d.config();
    for (t, r) in d.records.iter().enumerate() {
        assert_eq!(r.t, t as u64);
        assert!(c.arena.contains(r.position), "slot {t} at {:?}", r.position);
        assert!(r.velocity.iter().map(|v| v * v).sum::<f64>().sqrt() <= c.max_speed_mps + 1e-9);
        assert!(r.path_loss_db.is_finite());
        assert!(r.channel.iter().all(|h| h.is_finite()));
        assert!((r.beam_label as usize) < c.codebook_size);
        assert!(r.features.iter().all(|x| x.is_finite()));
        assert!(r.paths.iter().all(|p| p.delay > 0.0));
        assert!(r.paths[1..].iter().all(|p| p.gain.norm() <= r.paths[0].gain.norm()));
    }
}

#[test]
fn path_loss_falls_as_los_gain_grows() {
    let d = generate_dataset(&small(200), 0.7).unwrap();
    let c = d.config();
    for r in d.records.iter().step_by(10) {
        let mut last = f64::INFINITY;
        for k in 0..20 {
            let mut paths = r.paths.clone();
            paths[0].gain *= 1.0 + 0.25 * k as f64;
            let pl = path_loss_db(&synthesize_channel(&paths, c.antennas, c.spacing(), c.carrier_hz));
            assert!(pl.is_finite() && pl <= last + 1e-12);
            last = pl;
        }
    }
}

#[test]
fn noiseless_position_stream_is_ground_truth() {
    let c = ScenarioConfig { slots: 100, noise: SensorNoise::zero(), corruption: CorruptionConfig::none(), ..Default::default() };
    let d = generate_dataset(&c, 0.7).unwrap();
    for r in &d.records {
        let p = r.modality(Modality::Position);
        assert_eq!(&p[..3], &r.position);
        assert_eq!(&p[3..], &r.velocity);
        assert_eq!(r.reliability, [true; 5]);
    }
}

#[test]
fn position_noise_has_the_configured_spread() {
    let noise = SensorNoise { position_m: 0.1, ..SensorNoise::default() };
    let c = ScenarioConfig { slots: 10_000, noise, corruption: CorruptionConfig::none(), ..Default::default() };
    let d = generate_dataset(&c, 0.7).unwrap();
    let err: Vec<f64> = d.records.iter().flat_map(|r| (0..3).map(move |i| r.modality(Modality::Position)[i] - r.position[i])).collect();
    let mean = err.iter().sum::<f64>() / err.len() as f64;
    let std = (err.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (err.len() - 1) as f64).sqrt();
    assert!((0.09..=0.11).contains(&std), "std {std}");
}

#[test]
fn dropout_episodes_zero_the_stream_and_clear_the_flag() {
    let spec = CorruptionSpec { episode_probability: 0.05, episode_length_slots: 10, mode: CorruptionMode::DropoutToZero };
    let corruption = CorruptionConfig { vision: spec, ..CorruptionConfig::none() };
    let d = generate_dataset(&ScenarioConfig { slots: 1000, corruption, ..Default::default() }, 0.7).unwrap();
    let corrupted: Vec<_> = d.records.iter().filter(|r| !r.reliability[Modality::Vision.index()]).collect();
    assert!(corrupted.len() > 50);
    for r in &corrupted {
        assert!(r.modality(Modality::Vision).iter().all(|&x| x == 0.0));
        assert!(r.reliability[1..].iter().all(|&ok| ok));
    }
    for r in d.records.iter().filter(|r| r.reliability[0]) {
        assert!(r.modality(Modality::Vision).iter().any(|&x| x != 0.0));
    }
}

#[test]
fn default_corruption_hits_every_modality() {
    let d = generate_dataset(&small(4096), 0.7).unwrap();
    for m in Modality::ALL {
        let frac = d.records.iter().filter(|r| !r.reliability[m.index()]).count() as f64 / d.len() as f64;
        assert!((0.1..0.5).contains(&frac), "{m}: {frac}");
    }
}

#[test]
fn generated_beams_are_optimal() {
    let d = generate_dataset(&small(300), 0.7).unwrap();
    let c = d.config();
    let cb = dft_codebook(c.antennas, c.codebook_size, c.spacing(), c.wavelength()).unwrap();
    for r in &d.records {
        assert_eq!(optimal_beam(&r.channel, &cb).unwrap().0, r.beam_label as usize);
    }
}
