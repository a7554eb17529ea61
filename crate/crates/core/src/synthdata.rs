//! Seeded synthetic clip features with a planted nuisance/signal split, and
//! the PHIF binary format plus its text manifest.
//!
//! Each video belongs to one of a few coarse scenes. The scene prototype is
//! large and carries no score information. Every clip also carries a small
//! signal in a fixed low-dimensional subspace orthogonal to the prototypes:
//! `σ_f·√d_s·(skill·q + 0.1·ε)` for a fixed unit direction `q` and a
//! per-video skill in `[0, 1)`. The score is a squashed mean of the clip
//! signal norms (divided by `√d_s`) plus label noise, mapped into `[10, 30]`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diffcore::{rng, Matrix};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::lcr::distance_matrix;

pub const PHIF_MAGIC: &[u8; 4] = b"PHIF";
pub const PHIF_VERSION: u32 = 1;
pub const PHIF_HEADER_LEN: usize = 20;
pub const SCORE_LOW: f64 = 10.0;
pub const SCORE_HIGH: f64 = 30.0;
const CLIP_NOISE: f64 = 0.1;
const CLIP_JITTER: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub m: usize,
    pub d: usize,
    pub d_s: usize,
    pub sigma_c: f64,
    pub sigma_f: f64,
    pub sigma_y: f64,
    pub n_scenes: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_train: 200,
            n_test: 50,
            m: 16,
            d: 64,
            d_s: 8,
            sigma_c: 4.0,
            sigma_f: 1.0,
            sigma_y: 0.02,
            n_scenes: 6,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    /// Full-width features and the long rhythmic-gymnastics sequence length.
    pub fn paper_dims() -> Self {
        Self {
            d: 1024,
            m: 68,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.m == 0 || self.d == 0 {
            return bad(format!("m and d must be positive, got m={} d={}", self.m, self.d));
        }
        if self.d_s == 0 || self.d_s >= self.d {
            return bad(format!("signal width d_s={} must lie in 1..d={}", self.d_s, self.d));
        }
        if !(self.sigma_c > self.sigma_f) {
            return bad(format!(
                "nuisance scale {} must exceed signal scale {}",
                self.sigma_c, self.sigma_f
            ));
        }
        if !(self.sigma_f >= 0.0 && self.sigma_y >= 0.0) || !self.sigma_c.is_finite() {
            return bad("scales must be finite and non-negative".into());
        }
        if self.n_scenes == 0 {
            return bad("n_scenes must be positive".into());
        }
        if u32::try_from(self.n_train.max(self.n_test)).is_err() || u32::try_from(self.m * self.d).is_err() {
            return bad("dataset dimensions exceed the 32-bit header fields".into());
        }
        Ok(())
    }

    fn echo(&self, out: &mut String) {
        let _ = writeln!(out, "gen.n_train={}", self.n_train);
        let _ = writeln!(out, "gen.n_test={}", self.n_test);
        let _ = writeln!(out, "gen.m={}", self.m);
        let _ = writeln!(out, "gen.d={}", self.d);
        let _ = writeln!(out, "gen.d_s={}", self.d_s);
        let _ = writeln!(out, "gen.sigma_c={}", self.sigma_c);
        let _ = writeln!(out, "gen.sigma_f={}", self.sigma_f);
        let _ = writeln!(out, "gen.sigma_y={}", self.sigma_y);
        let _ = writeln!(out, "gen.n_scenes={}", self.n_scenes);
        let _ = writeln!(out, "gen.seed={}", self.seed);
    }

    fn from_echo(kv: &KeyValues) -> Result<Option<Self>> {
        if kv.get("gen.seed").is_none() {
            return Ok(None);
        }
        const W: &str = "manifest";
        Ok(Some(Self {
            n_train: kv.require("gen.n_train", W)?,
            n_test: kv.require("gen.n_test", W)?,
            m: kv.require("gen.m", W)?,
            d: kv.require("gen.d", W)?,
            d_s: kv.require("gen.d_s", W)?,
            sigma_c: kv.require("gen.sigma_c", W)?,
            sigma_f: kv.require("gen.sigma_f", W)?,
            sigma_y: kv.require("gen.sigma_y", W)?,
            n_scenes: kv.require("gen.n_scenes", W)?,
            seed: kv.require("gen.seed", W)?,
        }))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    fn counter(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }
}

/// One video: `M×D` clip features and its score in original units.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub features: Matrix,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub split: String,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub score_min: f64,
    pub score_max: f64,
    pub generator: Option<SyntheticConfig>,
}

impl DatasetManifest {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format_version={}", self.format_version);
        let _ = writeln!(out, "split={}", self.split);
        let _ = writeln!(out, "n={}", self.n);
        let _ = writeln!(out, "m={}", self.m);
        let _ = writeln!(out, "d={}", self.d);
        // bounds are f32 values; printing them as f32 round-trips exactly
        let _ = writeln!(out, "score_min={}", self.score_min as f32);
        let _ = writeln!(out, "score_max={}", self.score_max as f32);
        if let Some(g) = &self.generator {
            g.echo(&mut out);
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        const W: &str = "manifest";
        let kv = KeyValues::parse(text, W)?;
        let format_version: u32 = kv.require("format_version", W)?;
        if format_version != PHIF_VERSION {
            return Err(Error::VersionMismatch {
                expected: PHIF_VERSION,
                found: format_version,
            });
        }
        let score_min: f32 = kv.require("score_min", W)?;
        let score_max: f32 = kv.require("score_max", W)?;
        if !score_min.is_finite() || !score_max.is_finite() || score_min > score_max {
            return Err(Error::Malformed {
                what: W,
                detail: format!("score bounds {score_min}..{score_max}"),
            });
        }
        Ok(Self {
            format_version,
            split: kv.require("split", W)?,
            n: kv.require("n", W)?,
            m: kv.require("m", W)?,
            d: kv.require("d", W)?,
            score_min: score_min as f64,
            score_max: score_max as f64,
            generator: SyntheticConfig::from_echo(&kv)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub samples: Vec<ScoredSample>,
    pub manifest: DatasetManifest,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scores(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.score).collect()
    }
}

/// A generated split with the latent quantities hidden from the files.
#[derive(Clone, Debug)]
pub struct SyntheticSplit {
    pub dataset: Dataset,
    /// Mean per-clip signal norm over `√d_s`, before squashing and label noise.
    pub latents: Vec<f64>,
    pub scenes: Vec<usize>,
}

struct World {
    /// `d_s` orthonormal rows spanning the signal subspace.
    signal_basis: Matrix,
    /// Unit vector in signal coordinates along which skill shows.
    quality: Vec<f64>,
    scenes: Vec<Vec<f64>>,
}

fn orthonormal_rows(k: usize, d: usize, r: &mut impl Rng) -> Matrix {
    let mut basis = Matrix::zeros(k, d);
    let mut i = 0;
    while i < k {
        let mut v: Vec<f64> = (0..d).map(|_| r.sample(StandardNormal)).collect();
        for j in 0..i {
            let b = basis.row(j);
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        basis.row_mut(i).iter_mut().zip(&v).for_each(|(b, x)| *b = x / norm);
        i += 1;
    }
    basis
}

impl World {
    fn new(cfg: &SyntheticConfig) -> Self {
        let mut r = rng::stream(rng::derive(cfg.seed, &[rng::tag("synth-world")]));
        let signal_basis = orthonormal_rows(cfg.d_s, cfg.d, &mut r);
        let quality = orthonormal_rows(1, cfg.d_s, &mut r).row(0).to_vec();
        let scenes = (0..cfg.n_scenes)
            .map(|_| {
                let mut c: Vec<f64> = (0..cfg.d).map(|_| cfg.sigma_c * r.sample::<f64, _>(StandardNormal)).collect();
                for k in 0..cfg.d_s {
                    let e = signal_basis.row(k);
                    let dot: f64 = c.iter().zip(e).map(|(x, y)| x * y).sum();
                    c.iter_mut().zip(e).for_each(|(x, y)| *x -= dot * y);
                }
                c
            })
            .collect();
        Self {
            signal_basis,
            quality,
            scenes,
        }
    }
}

fn squash(raw: f64) -> f64 {
    raw / (1.0 + raw)
}

/// Generates one split. Pure function of `(cfg, split)`.
pub fn generate_split(cfg: &SyntheticConfig, split: Split) -> Result<SyntheticSplit> {
    cfg.validate()?;
    let world = World::new(cfg);
    let n = match split {
        Split::Train => cfg.n_train,
        Split::Test => cfg.n_test,
    };
    let mut r = rng::stream(rng::derive(cfg.seed, &[rng::tag("synth-split"), split.counter()]));
    let mut samples = Vec::with_capacity(n);
    let mut latents = Vec::with_capacity(n);
    let mut scenes = Vec::with_capacity(n);
    let gain = cfg.sigma_f * (cfg.d_s as f64).sqrt();
    for _ in 0..n {
        let scene = r.random_range(0..cfg.n_scenes);
        let skill: f64 = r.random();
        let mut features = Matrix::zeros(cfg.m, cfg.d);
        let mut norm_sum = 0.0;
        for clip in 0..cfg.m {
            let z: Vec<f64> = world
                .quality
                .iter()
                .map(|q| gain * (skill * q + CLIP_JITTER * r.sample::<f64, _>(StandardNormal)))
                .collect();
            norm_sum += z.iter().map(|x| x * x).sum::<f64>().sqrt();
            let row = features.row_mut(clip);
            row.copy_from_slice(&world.scenes[scene]);
            for (k, zk) in z.iter().enumerate() {
                row.iter_mut().zip(world.signal_basis.row(k)).for_each(|(h, e)| *h += zk * e);
            }
            for h in row.iter_mut() {
                *h += CLIP_NOISE * r.sample::<f64, _>(StandardNormal);
                *h = *h as f32 as f64;
            }
        }
        let raw = norm_sum / (cfg.m as f64 * (cfg.d_s as f64).sqrt());
        let noise: f64 = if cfg.sigma_y > 0.0 {
            cfg.sigma_y * r.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let score = (SCORE_LOW + (SCORE_HIGH - SCORE_LOW) * (squash(raw) + noise)).clamp(SCORE_LOW, SCORE_HIGH);
        samples.push(ScoredSample {
            features,
            score: score as f32 as f64,
        });
        latents.push(raw);
        scenes.push(scene);
    }
    let (score_min, score_max) = score_bounds(&samples);
    let manifest = DatasetManifest {
        format_version: PHIF_VERSION,
        split: split.as_str().to_string(),
        n,
        m: cfg.m,
        d: cfg.d,
        score_min,
        score_max,
        generator: Some(cfg.clone()),
    };
    Ok(SyntheticSplit {
        dataset: Dataset { samples, manifest },
        latents,
        scenes,
    })
}

fn score_bounds(samples: &[ScoredSample]) -> (f64, f64) {
    if samples.is_empty() {
        return (SCORE_LOW, SCORE_HIGH);
    }
    samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s.score), hi.max(s.score)))
}

/// Encodes samples as PHIF bytes.
pub fn encode_phif(samples: &[ScoredSample], m: usize, d: usize) -> Result<Vec<u8>> {
    let header = |v: usize| u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("{v} does not fit in u32")));
    let mut out = Vec::with_capacity(PHIF_HEADER_LEN + samples.len() * (m * d + 1) * 4);
    out.extend_from_slice(PHIF_MAGIC);
    out.extend_from_slice(&PHIF_VERSION.to_le_bytes());
    out.extend_from_slice(&header(samples.len())?.to_le_bytes());
    out.extend_from_slice(&header(m)?.to_le_bytes());
    out.extend_from_slice(&header(d)?.to_le_bytes());
    for s in samples {
        if s.features.shape() != (m, d) {
            return Err(Error::shape("encode_phif", format!("sample {:?}, header {m}x{d}", s.features.shape())));
        }
        for &v in s.features.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&(s.score as f32).to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

/// Decodes PHIF bytes into samples; returns `(samples, m, d)`.
pub fn decode_phif(bytes: &[u8]) -> Result<(Vec<ScoredSample>, usize, usize)> {
    if bytes.len() < 4 {
        return Err(Error::Truncated);
    }
    if &bytes[..4] != PHIF_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < PHIF_HEADER_LEN {
        return Err(Error::Truncated);
    }
    let version = read_u32(bytes, 4);
    if version != PHIF_VERSION {
        return Err(Error::VersionMismatch {
            expected: PHIF_VERSION,
            found: version,
        });
    }
    let n = read_u32(bytes, 8) as usize;
    let m = read_u32(bytes, 12) as usize;
    let d = read_u32(bytes, 16) as usize;
    if m == 0 || d == 0 {
        return Err(Error::Malformed {
            what: "PHIF header",
            detail: format!("clip shape {m}x{d}"),
        });
    }
    let record = m
        .checked_mul(d)
        .and_then(|x| x.checked_add(1))
        .and_then(|x| x.checked_mul(4))
        .ok_or(Error::Truncated)?;
    let expected = record
        .checked_mul(n)
        .and_then(|x| x.checked_add(PHIF_HEADER_LEN))
        .ok_or(Error::Truncated)?;
    if bytes.len() < expected {
        return Err(Error::Truncated);
    }
    if bytes.len() > expected {
        return Err(Error::Malformed {
            what: "PHIF payload",
            detail: format!("{} trailing bytes", bytes.len() - expected),
        });
    }
    let mut samples = Vec::with_capacity(n);
    let floats = |chunk: &[u8]| -> Result<Vec<f64>> {
        chunk
            .chunks_exact(4)
            .map(|c| {
                let v = f32::from_le_bytes(c.try_into().expect("4-byte chunk"));
                if v.is_finite() {
                    Ok(v as f64)
                } else {
                    Err(Error::Malformed {
                        what: "PHIF payload",
                        detail: "non-finite value".into(),
                    })
                }
            })
            .collect()
    };
    for rec in bytes[PHIF_HEADER_LEN..].chunks_exact(record) {
        let mut values = floats(rec)?;
        let score = values.pop().expect("record holds a score");
        samples.push(ScoredSample {
            features: Matrix::from_vec(m, d, values)?,
            score,
        });
    }
    Ok((samples, m, d))
}

/// `<stem>.manifest` next to a PHIF file.
pub fn manifest_path(phif: &Path) -> PathBuf {
    phif.with_extension("manifest")
}

pub fn save_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let bytes = encode_phif(&dataset.samples, dataset.manifest.m, dataset.manifest.d)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let mpath = manifest_path(path);
    fs::write(&mpath, dataset.manifest.to_text()).map_err(|e| Error::io(mpath, e))
}

/// Loads a PHIF file and its manifest, checking that they describe the same data.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (samples, m, d) = decode_phif(&bytes)?;
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = DatasetManifest::parse(&text)?;
    if (manifest.n, manifest.m, manifest.d) != (samples.len(), m, d) {
        return Err(Error::Malformed {
            what: "manifest",
            detail: format!(
                "describes {}x{}x{}, file holds {}x{m}x{d}",
                manifest.n,
                manifest.m,
                manifest.d,
                samples.len()
            ),
        });
    }
    if !samples.is_empty() {
        let (lo, hi) = score_bounds(&samples);
        if lo != manifest.score_min || hi != manifest.score_max {
            return Err(Error::Malformed {
                what: "manifest",
                detail: format!(
                    "bounds {}..{} differ from stored scores {lo}..{hi}",
                    manifest.score_min, manifest.score_max
                ),
            });
        }
    }
    Ok(Dataset { samples, manifest })
}

/// Writes `train.phif`, `test.phif` and their manifests into `dir`.
pub fn generate_dataset(cfg: &SyntheticConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(2);
    for split in [Split::Train, Split::Test] {
        let generated = generate_split(cfg, split)?;
        let path = dir.join(format!("{}.phif", split.as_str()));
        save_dataset(&path, &generated.dataset)?;
        paths.push(path);
    }
    let test = paths.pop().expect("two splits");
    let train = paths.pop().expect("two splits");
    Ok((train, test))
}

/// Ratio of mean cross-scene to mean within-scene action distance over the first `limit` samples.
pub fn scene_distance_ratio(split: &SyntheticSplit, limit: usize) -> Result<f64> {
    let k = split.dataset.samples.len().min(limit);
    let feats: Vec<Matrix> = split.dataset.samples[..k].iter().map(|s| s.features.clone()).collect();
    let dm = distance_matrix(&feats)?;
    let (mut within, mut nw, mut cross, mut nc) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            if split.scenes[i] == split.scenes[j] {
                within += dm.get(i, j);
                nw += 1;
            } else {
                cross += dm.get(i, j);
                nc += 1;
            }
        }
    }
    if nw == 0 || nc == 0 {
        return Err(Error::InvalidArgument("need both within- and cross-scene pairs".into()));
    }
    Ok((cross / nc as f64) / (within / nw as f64))
}
