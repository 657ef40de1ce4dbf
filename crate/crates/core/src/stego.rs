//! Hide, extract and sample, plus the `.sgn` model container.
//!
//! # Container layout (version 1)
//!
//! All integers are little-endian.
//!
//! | field            | encoding                                        |
//! |------------------|-------------------------------------------------|
//! | magic            | 8 bytes `SGNSTEGO`                              |
//! | version          | u32                                             |
//! | width            | u32, hidden channel count                       |
//! | levels           | u32, pyramid level count `N + 1`                |
//! | blocks           | u32, trained generator blocks                   |
//! | ratio            | f64                                             |
//! | level dims       | `levels` × (u32 height, u32 width), finest first|
//! | noise amps       | `levels` × f32, finest first                    |
//! | noise scheme     | u32 length + UTF-8                              |
//! | obfuscated       | u8 (0 or 1)                                     |
//! | shuffle scheme   | u32 length + UTF-8, present when obfuscated     |
//! | tensor count     | u32                                             |
//! | tensors          | name (u32 length + UTF-8), u32 rank, rank × u32 dims, f32 data |
//! | checksum         | 32-byte SHA-256 of every preceding byte         |
//!
//! Tensors appear in the generator's canonical order: `head.*`, then
//! `block{i}.conv{j}.*` for each block coarse to fine, then `tail.*`. Each
//! normalized conv contributes `weight`, `bias`, `bn.gamma`, `bn.beta`.
//! Conv weights are `[out, in, 3, 3]`.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::keynoise::{
    noise_pyramid, noise_pyramid_from_seed, shuffle_image, shuffle_permutation, unshuffle_image_f,
    EmbeddingKey, ShuffleKey, SHUFFLE_SCHEME_V1,
};
use crate::netarch::{generator_forward, Generator, StegoModel};
use crate::pyramid::{quantize, resize_u8, ImageF, ImageU8};
use crate::tensor::Tensor;
use crate::trainer::{self, IterationRecord, StageSummary, TrainConfig, TrainObserver, MAX_SECRETS};

pub const MAGIC: &[u8; 8] = b"SGNSTEGO";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// Hides `secrets` in a generator trained on `cover`; `keys[t]` recovers
/// `secrets[t]`. With `obfuscate`, each secret is scrambled with
/// `shuffle_keys[t]` before training.
pub fn hide(
    cover: &ImageU8,
    secrets: &[ImageU8],
    keys: &[EmbeddingKey],
    obfuscate: bool,
    shuffle_keys: Option<&[ShuffleKey]>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<StegoModel> {
    if secrets.is_empty() || secrets.len() > MAX_SECRETS {
        return Err(Error::invalid(format!(
            "between 1 and {MAX_SECRETS} secrets required, got {}",
            secrets.len()
        )));
    }
    let (h, w) = cover.dims();
    let secrets: Vec<ImageU8> = match (obfuscate, shuffle_keys) {
        (false, None) => secrets.to_vec(),
        (false, Some(_)) => return Err(Error::invalid("shuffle keys given without obfuscation")),
        (true, None) => return Err(Error::invalid("obfuscation requires shuffle keys")),
        (true, Some(sk)) => {
            if sk.len() != secrets.len() {
                return Err(Error::invalid(format!(
                    "{} secrets but {} shuffle keys",
                    secrets.len(),
                    sk.len()
                )));
            }
            secrets
                .iter()
                .zip(sk)
                .map(|(s, k)| {
                    let s = resize_u8(s, h, w)?;
                    shuffle_image(&s, &shuffle_permutation(k, h * w)?)
                })
                .collect::<Result<_>>()?
        }
    };
    let mut model = trainer::train(cover, &secrets, keys, cfg, observer)?;
    if obfuscate {
        model.shuffle_scheme = Some(SHUFFLE_SCHEME_V1.to_owned());
    }
    Ok(model)
}

/// Trains the plain model of `cover`, with no hidden content.
pub fn train_original(cover: &ImageU8, cfg: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<StegoModel> {
    trainer::train(cover, &[], &[], cfg, observer)
}

fn require_complete(model: &StegoModel) -> Result<()> {
    if model.trained_to() != Some(0) {
        return Err(Error::invalid("model is not trained down to the finest scale"));
    }
    Ok(())
}

/// Regenerates the secret bound to `key` with a single forward pass.
pub fn extract(model: &StegoModel, key: &EmbeddingKey, shuffle_key: Option<&ShuffleKey>) -> Result<ImageU8> {
    if key.scheme_id() != model.noise_scheme {
        return Err(Error::SchemeMismatch {
            model: model.noise_scheme.clone(),
            key: key.scheme_id().to_owned(),
        });
    }
    require_complete(model)?;
    let noise = noise_pyramid(key, &model.level_dims)?;
    let out = generator_forward(model, &noise, 0)?;
    let out = match (&model.shuffle_scheme, shuffle_key) {
        (Some(scheme), Some(sk)) => {
            if sk.scheme_id() != scheme {
                return Err(Error::SchemeMismatch {
                    model: scheme.clone(),
                    key: sk.scheme_id().to_owned(),
                });
            }
            let (h, w) = out.dims();
            unshuffle_image_f(&out, &shuffle_permutation(sk, h * w)?)?
        }
        (Some(_), None) => return Err(Error::invalid("model is obfuscated; a shuffle key is required")),
        (None, Some(_)) => return Err(Error::invalid("model is not obfuscated; drop the shuffle key")),
        (None, None) => out,
    };
    quantize(&out)
}

/// Raw generator output for `key`, before unshuffling and quantization.
pub fn extract_float(model: &StegoModel, key: &EmbeddingKey) -> Result<ImageF> {
    require_complete(model)?;
    generator_forward(model, &noise_pyramid(key, &model.level_dims)?, 0)
}

/// Unconditional sample from random noise seeded by `sample_seed`.
pub fn sample(model: &StegoModel, sample_seed: u64) -> Result<ImageU8> {
    require_complete(model)?;
    let noise = noise_pyramid_from_seed(sample_seed, &model.level_dims);
    quantize(&generator_forward(model, &noise, 0)?)
}

/// Seeds used for `count` samples starting at `first`.
pub fn sample_seeds(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first.wrapping_add(i)).collect()
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

/// Serializes `model` into the container format.
pub fn save(model: &StegoModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, model.generator.width());
    put_u32(&mut out, model.level_dims.len());
    put_u32(&mut out, model.generator.block_count());
    out.extend_from_slice(&model.ratio.to_le_bytes());
    for &(h, w) in &model.level_dims {
        put_u32(&mut out, h);
        put_u32(&mut out, w);
    }
    for a in &model.noise_amps {
        out.extend_from_slice(&a.to_le_bytes());
    }
    put_str(&mut out, &model.noise_scheme);
    match &model.shuffle_scheme {
        Some(s) => {
            out.push(1);
            put_str(&mut out, s);
        }
        None => out.push(0),
    }
    let params = model.generator.named_params();
    put_u32(&mut out, params.len());
    for (name, _, t) in params {
        put_str(&mut out, &name);
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Malformed(format!("unexpected end of data at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Malformed("string is not UTF-8".into()))
    }
}

/// Parses a container produced by [`save`]. Checks run in order: magic,
/// version, checksum, then structure.
pub fn load(bytes: &[u8]) -> Result<StegoModel> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic);
    }
    let header = MAGIC.len() + 4;
    if bytes.len() < header + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(bytes[MAGIC.len()..header].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }

    let mut r = Reader { buf: body, pos: header };
    let width = r.u32()?;
    let levels = r.u32()?;
    let blocks = r.u32()?;
    if width == 0 || levels == 0 || blocks > levels {
        return Err(Error::Malformed(format!(
            "inconsistent architecture: width {width}, {levels} levels, {blocks} blocks"
        )));
    }
    let ratio = r.f64()?;
    let mut level_dims = Vec::with_capacity(levels);
    for _ in 0..levels {
        let h = r.u32()?;
        let w = r.u32()?;
        level_dims.push((h, w));
    }
    let noise_amps = (0..levels).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
    let noise_scheme = r.string()?;
    let shuffle_scheme = match r.u8()? {
        0 => None,
        1 => Some(r.string()?),
        f => return Err(Error::Malformed(format!("bad obfuscation flag {f}"))),
    };
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let _name = r.string()?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Malformed("tensor size overflows".into()))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| Error::Malformed("tensor size overflows".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor::new(shape, data));
    }
    if r.pos != body.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    let generator = Generator::from_params(width, blocks, tensors)?;
    Ok(StegoModel {
        generator,
        level_dims,
        ratio,
        noise_amps,
        noise_scheme,
        shuffle_scheme,
    })
}

/// Writes the container to `path`.
pub fn save_file(model: &StegoModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, save(model)).map_err(|e| Error::io(path, e))
}

pub fn load_file(path: impl AsRef<Path>) -> Result<StegoModel> {
    let path = path.as_ref();
    load(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Observer that writes the model being trained every `every` iterations
/// and at the end of each stage. Wraps another observer.
pub struct Checkpointer<'a> {
    path: std::path::PathBuf,
    every: usize,
    inner: &'a mut dyn TrainObserver,
    pub error: Option<Error>,
}

impl<'a> Checkpointer<'a> {
    pub fn new(path: impl Into<std::path::PathBuf>, every: usize, inner: &'a mut dyn TrainObserver) -> Self {
        Self {
            path: path.into(),
            every,
            inner,
            error: None,
        }
    }

    fn write(&mut self, model: &StegoModel) {
        if self.error.is_none() {
            if let Err(e) = save_file(model, &self.path) {
                log::warn!("checkpoint failed: {e}");
                self.error = Some(e);
            }
        }
    }
}

impl TrainObserver for Checkpointer<'_> {
    fn on_iteration(&mut self, record: &IterationRecord, model: &StegoModel) {
        self.inner.on_iteration(record, model);
        if self.every > 0 && (record.iteration + 1) % self.every == 0 {
            self.write(model);
        }
    }

    fn on_stage_end(&mut self, summary: &StageSummary, model: &StegoModel) {
        self.inner.on_stage_end(summary, model);
        self.write(model);
    }
}
