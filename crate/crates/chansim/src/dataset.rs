//! Dataset generation and the on-disk format (binary records + JSON
//! manifest). The layout is documented in `docs/dataset-format.md`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path as FsPath;

use misac_core::Modality;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{Path, PathSet};
use crate::config::ScenarioConfig;
use crate::error::{Result, SimError};
use crate::modalities::ModalitySynth;
use crate::scene::{Scatterer, Scene};
use crate::trajectory::generate_trajectory;

pub const MAGIC: &[u8; 6] = b"MISAC1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_SIZE: usize = 6 + 4 + 8 + 32;
pub const DATA_FILE: &str = "dataset.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.7;

/// Independent ChaCha streams derived from `rng_seed`.
pub mod streams {
    pub const SCENE: u64 = 0;
    pub const TRAJECTORY: u64 = 1;
    pub const SENSOR_NOISE: u64 = 2;
    pub const CORRUPTION: u64 = 3;
    pub const SPLIT: u64 = 4;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    pub t: u64,
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub paths: PathSet,
    pub channel: Vec<Complex64>,
    pub beam_label: u32,
    pub path_loss_db: f64,
    /// The five modality vectors concatenated in canonical order (54 reals).
    pub features: Vec<f64>,
    /// Metadata only; `true` means uncorrupted.
    pub reliability: [bool; Modality::COUNT],
}

impl SlotRecord {
    pub fn modality(&self, m: Modality) -> &[f64] {
        &self.features[m.offset()..m.offset() + m.width()]
    }

    /// Channel as 2M reals: real parts then imaginary parts.
    pub fn channel_reals(&self) -> Vec<f64> {
        self.channel.iter().map(|c| c.re).chain(self.channel.iter().map(|c| c.im)).collect()
    }
}

/// Run the simulator for UAV 0 and return the scene and all slots.
pub fn simulate(config: &ScenarioConfig) -> Result<(Scene, Vec<SlotRecord>)> {
    config.validate()?;
    if config.uavs != 1 {
        return Err(SimError::Config(format!(
            "datasets are single-link; uavs must be 1, got {} (multi-user sum-rate is an evaluation utility)",
            config.uavs
        )));
    }
    let scene = Scene::generate(config, &mut stream_rng(config.rng_seed, streams::SCENE))?;
    let trajectory = generate_trajectory(config, &mut stream_rng(config.rng_seed, streams::TRAJECTORY));
    let mut noise_rng = stream_rng(config.rng_seed, streams::SENSOR_NOISE);
    let mut corruption_rng = stream_rng(config.rng_seed, streams::CORRUPTION);
    let mut synth = ModalitySynth::new();
    let mut records = Vec::with_capacity(config.slots);
    for t in 0..config.slots {
        let kin = trajectory.state(t as f64 * config.slot_duration_s);
        let state = scene.slot_state(0, kin)?;
        let (features, reliability) = synth.step(&scene, &state, &mut noise_rng, &mut corruption_rng);
        records.push(SlotRecord {
            t: t as u64,
            position: kin.position,
            velocity: kin.velocity,
            paths: state.paths,
            channel: state.channel,
            beam_label: state.beam as u32,
            path_loss_db: state.path_loss_db,
            features,
            reliability,
        });
    }
    Ok((scene, records))
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    /// Columns with (near) zero spread get unit scale.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, width: usize) -> Self {
        let mut n = 0usize;
        let mut mean = vec![0.0; width];
        for r in rows.clone() {
            n += 1;
            mean.iter_mut().zip(r).for_each(|(m, x)| *m += x);
        }
        let n = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; width];
        for r in rows {
            var.iter_mut().zip(r).zip(&mean).for_each(|((v, x), m)| *v += (x - m).powi(2));
        }
        let std = var.into_iter().map(|v| (v / n).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn normalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect()
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }
}

/// Training-split statistics for inputs and regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub features: ColumnStats,
    pub path_loss_db: ColumnStats,
    pub channel: ColumnStats,
    pub position: ColumnStats,
}

impl Normalization {
    pub fn fit(records: &[SlotRecord], train: &[usize]) -> Self {
        let pick = || train.iter().map(|&i| &records[i]);
        let pl: Vec<[f64; 1]> = pick().map(|r| [r.path_loss_db]).collect();
        let ch: Vec<Vec<f64>> = pick().map(|r| r.channel_reals()).collect();
        let m = records.first().map_or(0, |r| r.channel.len());
        Self {
            features: ColumnStats::fit(pick().map(|r| r.features.as_slice()), Modality::total_width()),
            path_loss_db: ColumnStats::fit(pl.iter().map(|r| r.as_slice()), 1),
            channel: ColumnStats::fit(ch.iter().map(|r| r.as_slice()), 2 * m),
            position: ColumnStats::fit(pick().map(|r| r.position.as_slice()), 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Shuffle `0..n` and give the first `⌈fraction·n⌉` indices to training.
    pub fn shuffled(n: usize, fraction: f64, seed: u64) -> Self {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(seed, streams::SPLIT));
        let cut = ((fraction * n as f64).ceil() as usize).min(n);
        let test = idx.split_off(cut);
        Self { train: idx, test }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub config_hash: String,
    pub record_size: usize,
    pub train_fraction: f64,
    pub config: ScenarioConfig,
    pub split: Split,
    pub normalization: Normalization,
    /// 16 rows of 3 weights applied to [azimuth, elevation, range / max range].
    pub vision_projection: Vec<[f64; 3]>,
    pub max_range_m: f64,
    pub scatterers: Vec<Scatterer>,
    pub los_phases: Vec<f64>,
}

/// SHA-256 over the canonical JSON of the materialized scenario and split
/// fraction, hex encoded.
pub fn config_hash(config: &ScenarioConfig, train_fraction: f64) -> String {
    #[derive(Serialize)]
    struct Hashed<'a> {
        scenario: &'a ScenarioConfig,
        train_fraction: f64,
    }
    let json = serde_json::to_vec(&Hashed { scenario: config, train_fraction }).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

pub fn record_size(antennas: usize, paths: usize) -> usize {
    8 + 24 + 24 + 32 * paths + 16 * antennas + 4 + 1 + 3 + 8 + 8 * Modality::total_width()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: Manifest,
    pub records: Vec<SlotRecord>,
}

/// Simulate `config` and attach the split and training-split statistics.
pub fn generate_dataset(config: &ScenarioConfig, train_fraction: f64) -> Result<Dataset> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(SimError::Config(format!("train_fraction must lie in (0, 1), got {train_fraction}")));
    }
    let (scene, records) = simulate(config)?;
    let split = Split::shuffled(records.len(), train_fraction, config.rng_seed);
    if split.test.is_empty() {
        return Err(SimError::Config(format!("{} slots leave no test samples", records.len())));
    }
    let normalization = Normalization::fit(&records, &split.train);
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        config_hash: config_hash(config, train_fraction),
        record_size: record_size(config.antennas, config.paths),
        train_fraction,
        config: config.clone(),
        split,
        normalization,
        vision_projection: scene.vision_projection.chunks(3).map(|c| [c[0], c[1], c[2]]).collect(),
        max_range_m: scene.max_range,
        scatterers: scene.scatterers.clone(),
        los_phases: scene.los_phases.clone(),
    };
    Ok(Dataset { manifest, records })
}

fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn encode_record(r: &SlotRecord, buf: &mut Vec<u8>) {
    buf.extend_from_slice(&r.t.to_le_bytes());
    r.position.iter().chain(&r.velocity).for_each(|&x| put_f64(buf, x));
    for p in &r.paths {
        [p.gain.re, p.gain.im, p.delay, p.aod].into_iter().for_each(|x| put_f64(buf, x));
    }
    for c in &r.channel {
        put_f64(buf, c.re);
        put_f64(buf, c.im);
    }
    buf.extend_from_slice(&r.beam_label.to_le_bytes());
    let flags = r.reliability.iter().enumerate().fold(0u8, |acc, (i, &ok)| acc | ((ok as u8) << i));
    buf.push(flags);
    buf.extend_from_slice(&[0u8; 3]);
    put_f64(buf, r.path_loss_db);
    r.features.iter().for_each(|&x| put_f64(buf, x));
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let out: [u8; N] = self.bytes[self.at..self.at + N].try_into().expect("length checked");
        self.at += N;
        out
    }
    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

fn decode_record(bytes: &[u8], antennas: usize, paths: usize) -> Result<SlotRecord> {
    let mut r = Reader { bytes, at: 0 };
    let t = u64::from_le_bytes(r.take());
    let position = [r.f64(), r.f64(), r.f64()];
    let velocity = [r.f64(), r.f64(), r.f64()];
    let paths = (0..paths)
        .map(|_| {
            let (re, im, delay, aod) = (r.f64(), r.f64(), r.f64(), r.f64());
            Path { gain: Complex64::new(re, im), delay, aod }
        })
        .collect();
    let channel = (0..antennas).map(|_| Complex64::new(r.f64(), r.f64())).collect();
    let beam_label = u32::from_le_bytes(r.take());
    let [flags] = r.take::<1>();
    let pad = r.take::<3>();
    if flags >> Modality::COUNT != 0 || pad != [0; 3] {
        return Err(SimError::Format(format!("record {t}: corrupt flag byte or padding")));
    }
    let reliability = std::array::from_fn(|i| flags & (1 << i) != 0);
    let path_loss_db = r.f64();
    let features = (0..Modality::total_width()).map(|_| r.f64()).collect();
    Ok(SlotRecord { t, position, velocity, paths, channel, beam_label, path_loss_db, features, reliability })
}

impl Dataset {
    pub fn config(&self) -> &ScenarioConfig {
        &self.manifest.config
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn config_hash(&self) -> &str {
        &self.manifest.config_hash
    }

    /// Binary file contents: header then fixed-width records.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let size = self.manifest.record_size;
        let mut buf = Vec::with_capacity(HEADER_SIZE + size * self.records.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        let hash = hex::decode(&self.manifest.config_hash).map_err(|e| SimError::Format(format!("config hash: {e}")))?;
        if hash.len() != 32 {
            return Err(SimError::Format("config hash must be 32 bytes".into()));
        }
        buf.extend_from_slice(&hash);
        for r in &self.records {
            let before = buf.len();
            encode_record(r, &mut buf);
            if buf.len() - before != size {
                return Err(SimError::Format(format!("record {} encodes to {} bytes, expected {size}", r.t, buf.len() - before)));
            }
        }
        Ok(buf)
    }

    /// Write `dataset.bin` and `manifest.json` into `dir`, creating it.
    pub fn write(&self, dir: &FsPath) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join(DATA_FILE), self.encode()?)?;
        let mut w = BufWriter::new(fs::File::create(dir.join(MANIFEST_FILE))?);
        serde_json::to_writer_pretty(&mut w, &self.manifest)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// Load and cross-check header, manifest and recomputed config hash.
    pub fn read(dir: &FsPath) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
        let bytes = fs::read(dir.join(DATA_FILE))?;
        Self::decode(manifest, &bytes)
    }

    pub fn decode(manifest: Manifest, bytes: &[u8]) -> Result<Self> {
        let expected = config_hash(&manifest.config, manifest.train_fraction);
        if manifest.config_hash != expected {
            return Err(SimError::HashMismatch { expected, found: manifest.config_hash });
        }
        if bytes.len() < HEADER_SIZE || &bytes[..6] != MAGIC {
            return Err(SimError::Format("missing MISAC1 header".into()));
        }
        let version = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        if version != FORMAT_VERSION || manifest.format_version != FORMAT_VERSION {
            return Err(SimError::Format(format!("unsupported format version {version}")));
        }
        let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap()) as usize;
        let found = hex::encode(&bytes[18..50]);
        if found != manifest.config_hash {
            return Err(SimError::HashMismatch { expected: manifest.config_hash, found });
        }
        let c = &manifest.config;
        let size = record_size(c.antennas, c.paths);
        if size != manifest.record_size || count != c.slots || bytes.len() != HEADER_SIZE + count * size {
            return Err(SimError::Format(format!(
                "expected {} records of {size} bytes, file holds {} bytes",
                c.slots,
                bytes.len() - HEADER_SIZE
            )));
        }
        let records = bytes[HEADER_SIZE..]
            .chunks_exact(size)
            .map(|chunk| decode_record(chunk, c.antennas, c.paths))
            .collect::<Result<Vec<_>>>()?;
        if let Some(r) = records.iter().enumerate().find(|(i, r)| r.t != *i as u64) {
            return Err(SimError::Format(format!("record {} is out of slot order", r.0)));
        }
        Ok(Self { manifest, records })
    }
}
