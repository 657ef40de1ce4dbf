//! Key-derived noise pyramids and pixel permutations.
//!
//! Both derivations are fully specified at the byte level so that a sender
//! and a receiver written in different languages land on the same noise:
//!
//! * `derive_seed`: the first 8 bytes of SHA-256(key bytes), big-endian.
//! * `cbrng-bm-v1`: word `i` of the stream is the SplitMix64 finalizer applied
//!   to `seed + (i + 1) * 0x9E3779B97F4A7C15` (wrapping). Normal sample `k`
//!   uses words `2*(k/2)` and `2*(k/2)+1` through Box-Muller:
//!   `u1 = ((w0 >> 11) + 1) * 2^-53`, `u2 = (w1 >> 11) * 2^-53`,
//!   `r = sqrt(-2 ln u1)`; even `k` takes `r cos(2 pi u2)`, odd `k` takes
//!   `r sin(2 pi u2)`. Samples are computed in `f64` and stored as `f32`.
//!   A pyramid is filled coarsest level first, each level row-major, from a
//!   single stream.
//! * `fy-v1`: Fisher-Yates from the top: for `i = n-1 .. 1`, draw the next
//!   word `w` and swap positions `i` and `j = (w * (i + 1)) >> 64` (128-bit
//!   product).

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Scheme id of the counter-based Box-Muller noise derivation.
pub const NOISE_SCHEME_V1: &str = "cbrng-bm-v1";
/// Scheme id of the keyed Fisher-Yates permutation.
pub const SHUFFLE_SCHEME_V1: &str = "fy-v1";

const NOISE_SCHEMES: &[&str] = &[NOISE_SCHEME_V1];
const SHUFFLE_SCHEMES: &[&str] = &[SHUFFLE_SCHEME_V1];

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix_finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based 64-bit generator: word `i` depends only on `(seed, i)`.
#[derive(Debug, Clone)]
pub struct CounterRng {
    seed: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Word at absolute position `index`.
    pub fn word_at(seed: u64, index: u64) -> u64 {
        splitmix_finalize(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    pub fn next_u64(&mut self) -> u64 {
        let w = Self::word_at(self.seed, self.counter);
        self.counter += 1;
        w
    }

    /// Uniform integer in `[0, bound)` via the high half of a 128-bit product.
    pub fn below(&mut self, bound: u64) -> u64 {
        ((u128::from(self.next_u64()) * u128::from(bound)) >> 64) as u64
    }

    /// Standard-normal sample `k` of the stream, independent of any state.
    pub fn normal_at(seed: u64, k: u64) -> f64 {
        let pair = k & !1;
        let w0 = Self::word_at(seed, pair);
        let w1 = Self::word_at(seed, pair + 1);
        let u1 = ((w0 >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (w1 >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        if k & 1 == 0 {
            r * theta.cos()
        } else {
            r * theta.sin()
        }
    }
}

/// Shared secret `k` that selects the noise pyramid a secret is bound to.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EmbeddingKey {
    key_bytes: Vec<u8>,
    scheme_id: String,
}

impl EmbeddingKey {
    /// Key using the current noise scheme.
    pub fn new(key_bytes: impl Into<Vec<u8>>) -> Result<Self> {
        Self::with_scheme(key_bytes, NOISE_SCHEME_V1)
    }

    pub fn with_scheme(key_bytes: impl Into<Vec<u8>>, scheme_id: &str) -> Result<Self> {
        let key_bytes = key_bytes.into();
        if key_bytes.is_empty() {
            return Err(Error::invalid("embedding key must not be empty"));
        }
        if !NOISE_SCHEMES.contains(&scheme_id) {
            return Err(Error::invalid(format!("unknown noise scheme `{scheme_id}`")));
        }
        Ok(Self {
            key_bytes,
            scheme_id: scheme_id.to_owned(),
        })
    }

    pub fn key_bytes(&self) -> &[u8] {
        &self.key_bytes
    }

    pub fn scheme_id(&self) -> &str {
        &self.scheme_id
    }

    pub fn seed(&self) -> u64 {
        seed_from_bytes(&self.key_bytes)
    }
}

/// Key for the optional pixel-scrambling pass applied to a secret.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ShuffleKey {
    key_bytes: Vec<u8>,
    scheme_id: String,
}

impl ShuffleKey {
    pub fn new(key_bytes: impl Into<Vec<u8>>) -> Result<Self> {
        Self::with_scheme(key_bytes, SHUFFLE_SCHEME_V1)
    }

    pub fn with_scheme(key_bytes: impl Into<Vec<u8>>, scheme_id: &str) -> Result<Self> {
        let key_bytes = key_bytes.into();
        if key_bytes.is_empty() {
            return Err(Error::invalid("shuffle key must not be empty"));
        }
        if !SHUFFLE_SCHEMES.contains(&scheme_id) {
            return Err(Error::invalid(format!("unknown shuffle scheme `{scheme_id}`")));
        }
        Ok(Self {
            key_bytes,
            scheme_id: scheme_id.to_owned(),
        })
    }

    pub fn key_bytes(&self) -> &[u8] {
        &self.key_bytes
    }

    pub fn scheme_id(&self) -> &str {
        &self.scheme_id
    }

    pub fn seed(&self) -> u64 {
        seed_from_bytes(&self.key_bytes)
    }
}

fn seed_from_bytes(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_be_bytes(head)
}

/// 64-bit seed of an embedding key.
pub fn derive_seed(key: &EmbeddingKey) -> Result<u64> {
    if key.key_bytes.is_empty() {
        return Err(Error::invalid("embedding key must not be empty"));
    }
    Ok(key.seed())
}

/// One single-channel noise map.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

/// One noise map per pyramid level; `map(0)` is the finest.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePyramid {
    maps: Vec<NoiseMap>,
}

impl NoisePyramid {
    pub fn from_maps(maps: Vec<NoiseMap>) -> Result<Self> {
        for m in &maps {
            if m.data.len() != m.height * m.width {
                return Err(Error::dims("noise map length does not match its dims"));
            }
            if m.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("noise map".into()));
            }
        }
        Ok(Self { maps })
    }

    pub fn map(&self, n: usize) -> &NoiseMap {
        &self.maps[n]
    }

    pub fn maps(&self) -> &[NoiseMap] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.maps.iter().map(|m| (m.height, m.width)).collect()
    }
}

/// Noise pyramid for raw seed `seed` over level dims given finest first.
pub fn noise_pyramid_from_seed(seed: u64, dims: &[(usize, usize)]) -> NoisePyramid {
    let mut maps: Vec<NoiseMap> = dims
        .iter()
        .map(|&(h, w)| NoiseMap {
            height: h,
            width: w,
            data: vec![0.0; h * w],
        })
        .collect();
    let mut k = 0u64;
    for map in maps.iter_mut().rev() {
        for v in &mut map.data {
            *v = CounterRng::normal_at(seed, k) as f32;
            k += 1;
        }
    }
    NoisePyramid { maps }
}

/// Keyed noise pyramid `z^(s)` for the given level dims (finest first).
pub fn noise_pyramid(key: &EmbeddingKey, dims: &[(usize, usize)]) -> Result<NoisePyramid> {
    if dims.iter().any(|&(h, w)| h == 0 || w == 0) {
        return Err(Error::invalid("noise map dims must be non-zero"));
    }
    Ok(noise_pyramid_from_seed(derive_seed(key)?, dims))
}

/// Keyed permutation of `[0, n)`.
pub fn shuffle_permutation(key: &ShuffleKey, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::invalid("cannot permute an empty range"));
    }
    let mut rng = CounterRng::new(key.seed());
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    Ok(perm)
}

/// Inverse of a permutation.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

fn check_perm(len: usize, perm: &[usize]) -> Result<()> {
    if perm.len() != len {
        return Err(Error::dims(format!(
            "permutation length {} does not match pixel count {len}",
            perm.len()
        )));
    }
    Ok(())
}

fn permute_pixels<P: Copy>(pixels: &[P], perm: &[usize], inverse: bool, stride: usize) -> Vec<P> {
    let mut out = pixels.to_vec();
    for (i, &p) in perm.iter().enumerate() {
        let (dst, src) = if inverse { (p, i) } else { (i, p) };
        out[dst * stride..(dst + 1) * stride].copy_from_slice(&pixels[src * stride..(src + 1) * stride]);
    }
    out
}

/// Scrambles pixel positions: output pixel `i` is input pixel `perm[i]`; all
/// channels move together.
pub fn shuffle_image(img: &crate::ImageU8, perm: &[usize]) -> Result<crate::ImageU8> {
    let (h, w) = img.dims();
    check_perm(h * w, perm)?;
    crate::ImageU8::new(h, w, permute_pixels(img.data(), perm, false, 3))
}

/// Exact inverse of [`shuffle_image`].
pub fn unshuffle_image(img: &crate::ImageU8, perm: &[usize]) -> Result<crate::ImageU8> {
    let (h, w) = img.dims();
    check_perm(h * w, perm)?;
    crate::ImageU8::new(h, w, permute_pixels(img.data(), perm, true, 3))
}

/// [`unshuffle_image`] for planar float images.
pub fn unshuffle_image_f(img: &crate::ImageF, perm: &[usize]) -> Result<crate::ImageF> {
    let (h, w) = img.dims();
    check_perm(h * w, perm)?;
    let plane = h * w;
    let mut out = Vec::with_capacity(3 * plane);
    for c in 0..3 {
        out.extend(permute_pixels(&img.data()[c * plane..(c + 1) * plane], perm, true, 1));
    }
    crate::ImageF::from_planar(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ImageU8;

    #[test]
    fn seed_of_test_matches_published_digest() {
        // SHA-256("test") = 9f86d081884c7d65 9a2feaa0c55ad015 ...
        let key = EmbeddingKey::new("test").unwrap();
        assert_eq!(derive_seed(&key).unwrap(), 0x9f86_d081_884c_7d65);
    }

    #[test]
    fn seed_is_deterministic_and_key_sensitive() {
        let a = EmbeddingKey::new("alpha-key").unwrap();
        let b = EmbeddingKey::new("alpha-kez").unwrap();
        assert_eq!(derive_seed(&a).unwrap(), derive_seed(&a.clone()).unwrap());
        assert_ne!(derive_seed(&a).unwrap(), derive_seed(&b).unwrap());
    }

    #[test]
    fn empty_and_unknown_keys_rejected() {
        assert!(EmbeddingKey::new(Vec::new()).is_err());
        assert!(EmbeddingKey::with_scheme("k", "mt19937").is_err());
        assert!(ShuffleKey::new(Vec::new()).is_err());
    }

    #[test]
    fn noise_pyramid_is_reproducible_and_shaped() {
        let key = EmbeddingKey::new("k").unwrap();
        let dims = [(16, 20), (8, 10), (4, 5)];
        let a = noise_pyramid(&key, &dims).unwrap();
        let b = noise_pyramid(&key, &dims).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dims(), dims.to_vec());
    }

    #[test]
    fn coarsest_level_is_filled_first() {
        let dims = [(3, 3), (2, 2)];
        let p = noise_pyramid_from_seed(7, &dims);
        assert_eq!(p.map(1).data[0], CounterRng::normal_at(7, 0) as f32);
        assert_eq!(p.map(0).data[0], CounterRng::normal_at(7, 4) as f32);
    }

    #[test]
    fn noise_is_standard_normal() {
        let key = EmbeddingKey::new("stat").unwrap();
        let p = noise_pyramid(&key, &[(1000, 1000)]).unwrap();
        let d = &p.map(0).data;
        let n = d.len() as f64;
        let mean = d.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let var = d.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }

    #[test]
    fn distinct_keys_are_uncorrelated() {
        let dims = [(250, 400)];
        let a = noise_pyramid(&EmbeddingKey::new("one").unwrap(), &dims).unwrap();
        let b = noise_pyramid(&EmbeddingKey::new("two").unwrap(), &dims).unwrap();
        let (x, y) = (&a.map(0).data, &b.map(0).data);
        assert_ne!(x, y);
        let n = x.len() as f64;
        let mx = x.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let my = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (&u, &v) in x.iter().zip(y) {
            let (du, dv) = (f64::from(u) - mx, f64::from(v) - my);
            sxy += du * dv;
            sxx += du * du;
            syy += dv * dv;
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() < 0.01, "rho {rho}");
    }

    /// Sequential SplitMix64 + Fisher-Yates written from the textbook form,
    /// independent of `CounterRng`.
    fn reference_permutation(key: &[u8], n: usize) -> Vec<usize> {
        let digest = Sha256::digest(key);
        let mut state = u64::from_be_bytes(digest[..8].try_into().unwrap());
        let mut next = || {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        let mut p: Vec<usize> = (0..n).collect();
        let mut i = n - 1;
        while i > 0 {
            let j = ((next() as u128 * (i as u128 + 1)) >> 64) as usize;
            p.swap(i, j);
            i -= 1;
        }
        p
    }

    #[test]
    fn permutation_matches_reference_procedure() {
        let key = ShuffleKey::new("perm-key").unwrap();
        let perm = shuffle_permutation(&key, 8).unwrap();
        assert_eq!(perm, reference_permutation(b"perm-key", 8));
        let mut sorted = perm.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn permutation_edge_cases() {
        let key = ShuffleKey::new("x").unwrap();
        assert_eq!(shuffle_permutation(&key, 1).unwrap(), vec![0]);
        assert!(shuffle_permutation(&key, 0).is_err());
        let p = shuffle_permutation(&key, 10_000).unwrap();
        let inv = invert_permutation(&p);
        assert!(p.iter().enumerate().all(|(i, &v)| inv[v] == i));
    }

    fn test_image(h: usize, w: usize) -> ImageU8 {
        let data = (0..h * w * 3).map(|i| ((i * 31 + 7) % 256) as u8).collect();
        ImageU8::new(h, w, data).unwrap()
    }

    #[test]
    fn shuffle_roundtrip_and_multiset() {
        let img = test_image(6, 9);
        let perm = shuffle_permutation(&ShuffleKey::new("s").unwrap(), 54).unwrap();
        let s = shuffle_image(&img, &perm).unwrap();
        assert_ne!(s, img);
        assert_eq!(unshuffle_image(&s, &perm).unwrap(), img);
        let pixels = |im: &ImageU8| {
            let mut v: Vec<[u8; 3]> = im.data().chunks(3).map(|c| [c[0], c[1], c[2]]).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(pixels(&s), pixels(&img));
    }

    #[test]
    fn identity_permutation_leaves_image() {
        let img = test_image(3, 4);
        let id: Vec<usize> = (0..12).collect();
        assert_eq!(shuffle_image(&img, &id).unwrap(), img);
    }

    #[test]
    fn shuffle_length_mismatch() {
        let img = test_image(3, 4);
        assert!(shuffle_image(&img, &[0, 1, 2]).is_err());
        assert!(unshuffle_image(&img, &[0, 1, 2]).is_err());
    }

    #[test]
    fn float_unshuffle_agrees_with_u8() {
        let img = test_image(5, 5);
        let perm = shuffle_permutation(&ShuffleKey::new("f").unwrap(), 25).unwrap();
        let s = shuffle_image(&img, &perm).unwrap();
        let back = unshuffle_image_f(&crate::dequantize(&s), &perm).unwrap();
        assert_eq!(crate::quantize(&back).unwrap(), img);
    }
}
