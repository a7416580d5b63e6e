//! Synthetic dataset directories with a seed manifest.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::clip::VideoClip;
use crate::signal::Waveform;
use crate::synth::{synth_clip, RegionLayout, SynthConfig};
use crate::train::LabeledClip;
use crate::{Error, Result};

use super::table::{num, Table};

pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub hr_min: f64,
    pub hr_max: f64,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f64,
    pub pulse_amplitude: f64,
    pub sensor_noise_sigma: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 20,
            n_test: 10,
            hr_min: 50.0,
            hr_max: 110.0,
            t: 300,
            h: 64,
            w: 64,
            fps: 30.0,
            pulse_amplitude: 0.004,
            sensor_noise_sigma: 0.005,
            seed: 0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train + self.n_test == 0 {
            return Err(Error::Config("dataset has no clips".into()));
        }
        if !(self.hr_min < self.hr_max) {
            return Err(Error::Config(format!("hr range [{}, {}] is empty", self.hr_min, self.hr_max)));
        }
        self.clip_config(0, 0, self.hr_min)?.validate()?;
        self.clip_config(0, 0, self.hr_max)?.validate()
    }

    fn clip_config(&self, seed: u64, texture: u64, hr: f64) -> Result<SynthConfig> {
        Ok(SynthConfig {
            seed,
            base_texture_seed: texture,
            hr_bpm: hr,
            fps: self.fps,
            pulse_amplitude: self.pulse_amplitude,
            sensor_noise_sigma: self.sensor_noise_sigma,
            ..SynthConfig::sized(self.t, self.h, self.w)
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = DatasetConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let err = || Error::Config(format!("line {}: {key}: bad value `{value}`", n + 1));
            let f = || value.parse::<f64>().map_err(|_| err());
            let u = || value.parse::<usize>().map_err(|_| err());
            match key {
                "n_train" => c.n_train = u()?,
                "n_test" => c.n_test = u()?,
                "hr_min" => c.hr_min = f()?,
                "hr_max" => c.hr_max = f()?,
                "t" => c.t = u()?,
                "h" => c.h = u()?,
                "w" => c.w = u()?,
                "fps" => c.fps = f()?,
                "pulse_amplitude" => c.pulse_amplitude = f()?,
                "sensor_noise_sigma" => c.sensor_noise_sigma = f()?,
                "seed" => c.seed = value.parse().map_err(|_| err())?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Parse(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    pub seed: u64,
    pub texture_seed: u64,
    pub hr_bpm: f64,
    /// SHA-256 of the clip container bytes, hex encoded.
    pub hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

const HEADER: [&str; 6] = ["name", "split", "seed", "texture_seed", "hr_bpm", "hash"];

impl Manifest {
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(&HEADER);
        for e in &self.entries {
            t.push(vec![
                e.name.clone(),
                e.split.to_string(),
                e.seed.to_string(),
                e.texture_seed.to_string(),
                num(e.hr_bpm),
                e.hash.clone(),
            ]);
        }
        t
    }

    pub fn from_table(t: &Table) -> Result<Self> {
        if t.header != HEADER {
            return Err(Error::Parse(format!("unexpected manifest header {:?}", t.header)));
        }
        let int = |v: &str| v.parse::<u64>().map_err(|_| Error::Parse(format!("`{v}` is not an integer")));
        let entries = t
            .rows
            .iter()
            .map(|r| {
                Ok(ManifestEntry {
                    name: r[0].clone(),
                    split: r[1].parse()?,
                    seed: int(&r[2])?,
                    texture_seed: int(&r[3])?,
                    hr_bpm: r[4].parse().map_err(|_| Error::Parse(format!("`{}` is not a number", r[4])))?,
                    hash: r[5].clone(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Manifest { entries })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::from_table(&Table::read_from(BufReader::new(File::open(dir.join(MANIFEST))?))?)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Heart rates stratified over `[lo, hi)`: one uniform draw per equal-width
/// bin, in shuffled order.
fn stratified(n: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|k| lo + (hi - lo) * (k as f64 + rng.random::<f64>()) / n as f64).collect();
    v.shuffle(rng);
    v
}

/// Clip and ground truth for one manifest entry, regenerated from its seeds.
pub fn synth_entry(cfg: &DatasetConfig, e: &ManifestEntry) -> Result<(VideoClip, Waveform)> {
    synth_clip(&cfg.clip_config(e.seed, e.texture_seed, e.hr_bpm)?)
}

pub fn plan(cfg: &DatasetConfig) -> Vec<ManifestEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for (split, n) in [(Split::Train, cfg.n_train), (Split::Test, cfg.n_test)] {
        for (i, hr) in stratified(n, cfg.hr_min, cfg.hr_max, &mut rng).into_iter().enumerate() {
            out.push(ManifestEntry {
                name: format!("{split}_{i:03}"),
                split,
                seed: rng.random(),
                texture_seed: rng.random(),
                hr_bpm: hr,
                hash: String::new(),
            });
        }
    }
    out
}

/// Writes `<name>.rpcl`, `<name>.csv` per clip and the manifest.
pub fn synth_dataset(cfg: &DatasetConfig, dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let mut entries = plan(cfg);
    for e in &mut entries {
        let (clip, gt) = synth_entry(cfg, e)?;
        let mut bytes = Vec::new();
        clip.write_to(&mut bytes)?;
        e.hash = content_hash(&bytes);
        fs::write(dir.join(format!("{}.rpcl", e.name)), &bytes)?;
        gt.write_csv(BufWriter::new(File::create(dir.join(format!("{}.csv", e.name)))?))?;
    }
    let manifest = Manifest { entries };
    manifest.to_table().write_to(BufWriter::new(File::create(dir.join(MANIFEST))?))?;
    Ok(manifest)
}

/// Loads one split and checks each clip against its manifest hash.
pub fn load_split(dir: &Path, split: Split) -> Result<Vec<LabeledClip>> {
    let manifest = Manifest::read(dir)?;
    manifest
        .split(split)
        .map(|e| {
            let bytes = fs::read(dir.join(format!("{}.rpcl", e.name)))?;
            if content_hash(&bytes) != e.hash {
                return Err(Error::Parse(format!("{}: clip does not match its manifest hash", e.name)));
            }
            let clip = VideoClip::read_from(bytes.as_slice())?;
            let s_gt = Waveform::read_csv(BufReader::new(File::open(dir.join(format!("{}.csv", e.name)))?))?;
            let layout = RegionLayout::for_frame(clip.h, clip.w);
            Ok(LabeledClip { clip, layout, s_gt })
        })
        .collect()
}
