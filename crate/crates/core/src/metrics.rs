//! Extraction accuracy (PSNR, SSIM) and the model audit: SIFID, diversity,
//! weight divergence and leakage.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::netarch::{ParamGroup, StegoModel};
use crate::pyramid::{resize_u8, ImageU8, CHANNELS};
use crate::stego;
use crate::tensor::{conv_forward, Tensor};

/// Returned by [`psnr`] for identical images.
pub const PSNR_IDENTICAL: f64 = f64::INFINITY;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

pub const DS_SAMPLES: usize = 25;
pub const KLD_BINS: usize = 100;
pub const KLD_EPS: f64 = 1e-10;
pub const LEAKAGE_THRESHOLD: f64 = 0.5;
/// Diagonal loading applied to rank-deficient covariances.
pub const COV_EPS: f64 = 1e-6;

fn same_dims(a: &ImageU8, b: &ImageU8) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::dims(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all pixels and channels.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    same_dims(a, b)?;
    let sse: u64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(PSNR_IDENTICAL);
    }
    let mse = sse as f64 / a.data().len() as f64;
    Ok(10.0 * (DYNAMIC_RANGE * DYNAMIC_RANGE / mse).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

fn channel(img: &ImageU8, c: usize) -> Vec<f64> {
    img.data().iter().skip(c).step_by(CHANNELS).map(|&v| f64::from(v)).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for ox in 0..ow {
            rows[y * ow + ox] = taps.iter().enumerate().map(|(i, t)| t * x[y * w + ox + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = taps.iter().enumerate().map(|(i, t)| t * rows[(oy + i) * ow + ox]).sum();
        }
    }
    out
}

/// Mean structural similarity, per channel then averaged.
pub fn ssim(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    let mut total = 0.0;
    for c in 0..CHANNELS {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = filter_valid(&x, h, w, &taps);
        let my = filter_valid(&y, h, w, &taps);
        let sxx = filter_valid(&xx, h, w, &taps);
        let syy = filter_valid(&yy, h, w, &taps);
        let sxy = filter_valid(&xy, h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / CHANNELS as f64)
}

/// ITU-R BT.601 luma.
pub fn grayscale(img: &ImageU8) -> Vec<f64> {
    img.data()
        .chunks_exact(CHANNELS)
        .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
        .collect()
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Anything that draws images from a seed.
pub trait Sampler {
    fn sample(&self, seed: u64) -> Result<ImageU8>;
}

impl Sampler for StegoModel {
    fn sample(&self, seed: u64) -> Result<ImageU8> {
        stego::sample(self, seed)
    }
}

/// Per-pixel standard deviation across `samples` (grayscale), averaged over
/// pixels and divided by the cover's grayscale standard deviation.
pub fn diversity_from_samples(samples: &[ImageU8], cover: &ImageU8) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::invalid("diversity needs at least 2 samples"));
    }
    for s in samples {
        same_dims(s, cover)?;
    }
    let cover_std = population_std(&grayscale(cover));
    if cover_std == 0.0 {
        return Err(Error::invalid("cover has zero intensity spread"));
    }
    let grays: Vec<Vec<f64>> = samples.iter().map(grayscale).collect();
    let n = grays.len() as f64;
    let pixels = grays[0].len();
    let mut acc = 0.0;
    for p in 0..pixels {
        // shifted by the first sample so identical draws give exactly zero
        let base = grays[0][p];
        let mean = grays.iter().map(|g| g[p] - base).sum::<f64>() / n;
        let var = grays.iter().map(|g| (g[p] - base - mean).powi(2)).sum::<f64>() / n;
        acc += var.sqrt();
    }
    Ok(acc / pixels as f64 / cover_std)
}

/// Diversity of `n_samples` draws with seeds `first_seed, first_seed + 1, ...`.
pub fn diversity_score(sampler: &dyn Sampler, cover: &ImageU8, n_samples: usize, first_seed: u64) -> Result<f64> {
    if n_samples < 2 {
        return Err(Error::invalid("diversity needs at least 2 samples"));
    }
    let samples = stego::sample_seeds(first_seed, n_samples)
        .into_iter()
        .map(|s| sampler.sample(s))
        .collect::<Result<Vec<_>>>()?;
    diversity_from_samples(&samples, cover)
}

/// Maps an image to a set of feature vectors, one row per spatial position.
pub trait FeatureExtractor {
    fn features(&self, img: &ImageU8) -> Result<DMatrix<f64>>;
}

/// Two frozen random 3x3 conv layers with ReLU.
#[derive(Debug, Clone)]
pub struct RandomConvFeatures {
    w1: Tensor<f64>,
    w2: Tensor<f64>,
}

impl RandomConvFeatures {
    pub const DIM: usize = 16;

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |fan_in: usize, shape: Vec<usize>| {
            let n = Normal::new(0.0, (2.0 / (fan_in * 9) as f64).sqrt()).unwrap();
            let len = shape.iter().product();
            Tensor::new(shape, (0..len).map(|_| n.sample(&mut rng)).collect())
        };
        let w1 = draw(CHANNELS, vec![Self::DIM, CHANNELS, 3, 3]);
        let w2 = draw(Self::DIM, vec![Self::DIM, Self::DIM, 3, 3]);
        Self { w1, w2 }
    }
}

impl Default for RandomConvFeatures {
    fn default() -> Self {
        Self::new(0x51F1D)
    }
}

impl FeatureExtractor for RandomConvFeatures {
    fn features(&self, img: &ImageU8) -> Result<DMatrix<f64>> {
        let (h, w) = img.dims();
        let plane = h * w;
        let mut x = vec![0.0; CHANNELS * plane];
        for (i, p) in img.data().chunks_exact(CHANNELS).enumerate() {
            for c in 0..CHANNELS {
                x[c * plane + i] = f64::from(p[c]) / 127.5 - 1.0;
            }
        }
        let x = Tensor::new(vec![CHANNELS, h, w], x);
        let y = conv_forward(&x, &self.w1).map(|v| v.max(0.0));
        let y = conv_forward(&y, &self.w2).map(|v| v.max(0.0));
        let d = Self::DIM;
        Ok(DMatrix::from_fn(plane, d, |r, c| y.data()[c * plane + r]))
    }
}

/// Mean and covariance of the rows of `feats`.
pub fn gaussian_stats(feats: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (n, d) = feats.shape();
    if n < 2 {
        return Err(Error::invalid("need at least 2 feature vectors"));
    }
    let mean = DVector::from_fn(d, |j, _| feats.column(j).sum() / n as f64);
    let mut centered = feats.clone();
    for j in 0..d {
        let m = mean[j];
        centered.column_mut(j).iter_mut().for_each(|v| *v -= m);
    }
    let mut cov = centered.transpose() * &centered / (n as f64 - 1.0);
    if n <= d {
        log::warn!("{n} feature vectors for dimension {d}; regularizing covariance");
        for i in 0..d {
            cov[(i, i)] += COV_EPS;
        }
    }
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d * eig.eigenvectors.transpose()
}

/// Fréchet distance between two Gaussians.
pub fn frechet_distance(mu1: &DVector<f64>, s1: &DMatrix<f64>, mu2: &DVector<f64>, s2: &DMatrix<f64>) -> Result<f64> {
    if mu1.len() != mu2.len() || s1.shape() != s2.shape() || s1.nrows() != mu1.len() {
        return Err(Error::dims("feature dimensions differ"));
    }
    if mu1 == mu2 && s1 == s2 {
        return Ok(0.0);
    }
    let diff = (mu1 - mu2).norm_squared();
    // tr((S1 S2)^{1/2}) = tr((A S2 A)^{1/2}) with A = S1^{1/2}
    let a = psd_sqrt(s1);
    let inner = &a * s2 * &a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let tr_sqrt: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .sum();
    Ok((diff + s1.trace() + s2.trace() - 2.0 * tr_sqrt).max(0.0))
}

/// Fréchet distance between two feature sets.
pub fn frechet_from_features(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let (m1, s1) = gaussian_stats(a)?;
    let (m2, s2) = gaussian_stats(b)?;
    frechet_distance(&m1, &s1, &m2, &s2)
}

/// Fréchet distance between the reference's features and the pooled
/// features of `samples`.
pub fn sifid(reference: &ImageU8, samples: &[ImageU8], extractor: &dyn FeatureExtractor) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("sifid needs at least one sample"));
    }
    let r = extractor.features(reference)?;
    let mut rows = Vec::new();
    let mut d = 0;
    for s in samples {
        let f = extractor.features(s)?;
        d = f.ncols();
        rows.push(f);
    }
    let n: usize = rows.iter().map(|f| f.nrows()).sum();
    let mut pooled = DMatrix::zeros(n, d);
    let mut at = 0;
    for f in rows {
        pooled.rows_mut(at, f.nrows()).copy_from(&f);
        at += f.nrows();
    }
    frechet_from_features(&r, &pooled)
}

/// Equal-width histogram of `values` over `[lo, hi]`.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<u64> {
    let mut counts = vec![0u64; bins];
    let span = hi - lo;
    for &v in values {
        let i = if span > 0.0 {
            (((v - lo) / span) * bins as f64).floor() as isize
        } else {
            0
        };
        counts[i.clamp(0, bins as isize - 1) as usize] += 1;
    }
    counts
}

/// KL divergence between two histograms after ε-smoothing.
pub fn kld_from_counts(p: &[u64], q: &[u64]) -> f64 {
    let norm = |c: &[u64]| {
        let n = c.iter().sum::<u64>().max(1) as f64;
        let v: Vec<f64> = c.iter().map(|&x| x as f64 / n + KLD_EPS).collect();
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (norm(p), norm(q));
    p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// KLD(a ‖ b) of two value sets histogrammed over their pooled range.
pub fn kld_of_values(a: &[f64], b: &[f64], bins: usize) -> f64 {
    HistogramPair::build(String::new(), a, b, bins).kld
}

/// Histograms of one parameter group in both models.
#[derive(Debug, Clone, Serialize)]
pub struct HistogramPair {
    pub label: String,
    pub lo: f64,
    pub hi: f64,
    pub counts_a: Vec<u64>,
    pub counts_b: Vec<u64>,
    pub kld: f64,
}

impl HistogramPair {
    fn build(label: String, a: &[f64], b: &[f64], bins: usize) -> Self {
        let (lo, hi) = a
            .iter()
            .chain(b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let counts_a = histogram(a, lo, hi, bins);
        let counts_b = histogram(b, lo, hi, bins);
        let kld = kld_from_counts(&counts_a, &counts_b);
        Self {
            label,
            lo,
            hi,
            counts_a,
            counts_b,
            kld,
        }
    }

    /// CSV with one row per bin.
    pub fn to_csv(&self) -> String {
        let bins = self.counts_a.len();
        let width = (self.hi - self.lo) / bins as f64;
        let mut s = String::from("bin,lower,upper,count_a,count_b\n");
        for i in 0..bins {
            let l = self.lo + width * i as f64;
            let _ = writeln!(s, "{i},{l:.8e},{:.8e},{},{}", l + width, self.counts_a[i], self.counts_b[i]);
        }
        s
    }
}

/// Weight-distribution divergence between two generators.
#[derive(Debug, Clone, Serialize)]
pub struct WeightKld {
    pub total: f64,
    pub per_block: Vec<f64>,
    /// Overall histogram first, then one per block.
    pub histograms: Vec<HistogramPair>,
}

fn flatten(model: &StegoModel, block: Option<usize>) -> Vec<f64> {
    model
        .generator
        .named_params()
        .into_iter()
        .filter(|(_, g, _)| block.map_or(true, |b| *g == ParamGroup::Block(b)))
        .flat_map(|(_, _, t)| t.data().iter().map(|&v| f64::from(v)))
        .collect()
}

/// KLD(a ‖ b) between the marginal parameter histograms of two models, over
/// all parameters and per block.
pub fn weight_kld(a: &StegoModel, b: &StegoModel, bins: usize) -> Result<WeightKld> {
    if bins == 0 {
        return Err(Error::invalid("bins must be positive"));
    }
    let shapes = |m: &StegoModel| -> Vec<Vec<usize>> { m.generator.params().iter().map(|t| t.shape().to_vec()).collect() };
    if shapes(a) != shapes(b) || a.generator.block_count() == 0 {
        return Err(Error::dims("models have different architectures"));
    }
    let mut histograms = vec![HistogramPair::build("all".into(), &flatten(a, None), &flatten(b, None), bins)];
    for i in 0..a.generator.block_count() {
        histograms.push(HistogramPair::build(
            format!("block{i}"),
            &flatten(a, Some(i)),
            &flatten(b, Some(i)),
            bins,
        ));
    }
    Ok(WeightKld {
        total: histograms[0].kld,
        per_block: histograms[1..].iter().map(|h| h.kld).collect(),
        histograms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeakageRecord {
    pub samples_drawn: usize,
    /// `None` when no samples were drawn.
    pub max_ssim_vs_secret: Option<f64>,
    pub flagged: usize,
    pub threshold: f64,
}

/// Draws `n_samples` unconditional samples and counts those whose SSIM
/// against the secret exceeds `threshold`.
pub fn leakage_audit(
    sampler: &dyn Sampler,
    secret: &ImageU8,
    n_samples: usize,
    threshold: f64,
    first_seed: u64,
) -> Result<LeakageRecord> {
    let mut max: Option<f64> = None;
    let mut flagged = 0;
    let mut target: Option<ImageU8> = None;
    for seed in stego::sample_seeds(first_seed, n_samples) {
        let s = sampler.sample(seed)?;
        if target.as_ref().map(|t| t.dims()) != Some(s.dims()) {
            target = Some(resize_u8(secret, s.height(), s.width())?);
        }
        let v = ssim(&s, target.as_ref().unwrap())?;
        if v > threshold {
            flagged += 1;
        }
        max = Some(max.map_or(v, |m: f64| m.max(v)));
    }
    Ok(LeakageRecord {
        samples_drawn: n_samples,
        max_ssim_vs_secret: max,
        flagged,
        threshold,
    })
}

/// Which probes to run and how many samples to draw.
#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub ds_samples: usize,
    pub leakage_samples: usize,
    pub threshold: f64,
    pub bins: usize,
    pub seed: u64,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            ds_samples: DS_SAMPLES,
            leakage_samples: 1000,
            threshold: LEAKAGE_THRESHOLD,
            bins: KLD_BINS,
            seed: 0,
        }
    }
}

/// Results of the audit; `None` marks a probe that was skipped.
#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub sifid_original: Option<f64>,
    pub sifid_stego: Option<f64>,
    pub ds_original: Option<f64>,
    pub ds_stego: f64,
    pub kld: Option<WeightKld>,
    pub leakage: Option<LeakageRecord>,
}

fn draw(model: &StegoModel, opts: &AuditOptions) -> Result<Vec<ImageU8>> {
    stego::sample_seeds(opts.seed, opts.ds_samples)
        .into_iter()
        .map(|s| stego::sample(model, s))
        .collect()
}

/// Runs every probe the inputs allow. SIFID and weight KLD compare the stego
/// model with `original`; leakage needs the `secret`.
pub fn audit(
    stego_model: &StegoModel,
    original: Option<&StegoModel>,
    cover: &ImageU8,
    secret: Option<&ImageU8>,
    extractor: &dyn FeatureExtractor,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    let stego_samples = draw(stego_model, opts)?;
    let ds_stego = diversity_from_samples(&stego_samples, cover)?;
    let (mut sifid_original, mut sifid_stego, mut ds_original, mut kld) = (None, None, None, None);
    if let Some(orig) = original {
        let orig_samples = draw(orig, opts)?;
        ds_original = Some(diversity_from_samples(&orig_samples, cover)?);
        sifid_original = Some(sifid(cover, &orig_samples, extractor)?);
        sifid_stego = Some(sifid(cover, &stego_samples, extractor)?);
        kld = Some(weight_kld(orig, stego_model, opts.bins)?);
    }
    let leakage = secret
        .map(|s| leakage_audit(stego_model, s, opts.leakage_samples, opts.threshold, opts.seed))
        .transpose()?;
    Ok(AuditReport {
        sifid_original,
        sifid_stego,
        ds_original,
        ds_stego,
        kld,
        leakage,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "skipped".to_owned(), |x| format!("{x:.9e}"))
}

impl AuditReport {
    /// Plain-text report with one `key: value` line per figure.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[sifid]");
        let _ = writeln!(s, "sifid_original: {}", opt(self.sifid_original));
        let _ = writeln!(s, "sifid_stego: {}", opt(self.sifid_stego));
        let _ = writeln!(s, "\n[diversity]");
        let _ = writeln!(s, "ds_original: {}", opt(self.ds_original));
        let _ = writeln!(s, "ds_stego: {:.9e}", self.ds_stego);
        let _ = writeln!(s, "\n[weight_kld]");
        match &self.kld {
            Some(k) => {
                let _ = writeln!(s, "kld_total: {:.9e}", k.total);
                for (i, v) in k.per_block.iter().enumerate() {
                    let _ = writeln!(s, "kld_block{i}: {v:.9e}");
                }
            }
            None => {
                let _ = writeln!(s, "kld_total: skipped");
            }
        }
        let _ = writeln!(s, "\n[leakage]");
        match &self.leakage {
            Some(l) => {
                let _ = writeln!(s, "samples_drawn: {}", l.samples_drawn);
                let _ = writeln!(s, "threshold: {}", l.threshold);
                let _ = writeln!(s, "max_ssim_vs_secret: {}", opt(l.max_ssim_vs_secret));
                let _ = writeln!(s, "flagged: {}", l.flagged);
            }
            None => {
                let _ = writeln!(s, "leakage: skipped");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(h: usize, w: usize, f: impl Fn(usize) -> u8) -> ImageU8 {
        ImageU8::new(h, w, (0..h * w * 3).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_closed_forms() {
        let a = img(8, 8, |i| (i % 200) as u8);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = img(8, 8, |i| (i % 200) as u8 + 1);
        assert!((psnr(&a, &b).unwrap() - 20.0 * 255f64.log10()).abs() < 1e-12);
        assert!((psnr(&ImageU8::filled(4, 4, 0), &ImageU8::filled(4, 4, 255)).unwrap()).abs() < 1e-12);
        assert!(psnr(&a, &ImageU8::filled(8, 9, 0)).is_err());
    }

    #[test]
    fn psnr_decreases_with_error() {
        let a = ImageU8::filled(4, 4, 100);
        let mut last = f64::INFINITY;
        for d in 1..50u8 {
            let p = psnr(&a, &ImageU8::filled(4, 4, 100 + d)).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_and_size_check() {
        let a = img(16, 13, |i| (i * 37 % 256) as u8);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&ImageU8::filled(10, 20, 0), &ImageU8::filled(10, 20, 0)).is_err());
    }

    #[test]
    fn gaussian_taps_sum_to_one() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((t[0] - t[10]).abs() < 1e-18);
    }

    #[test]
    fn histogram_edges() {
        assert_eq!(histogram(&[0.0, 0.5, 1.0], 0.0, 1.0, 2), vec![1, 2]);
        assert_eq!(histogram(&[3.0, 3.0], 3.0, 3.0, 4), vec![2, 0, 0, 0]);
    }

    #[test]
    fn kld_of_identical_histograms_is_zero() {
        assert_eq!(kld_from_counts(&[3, 0, 5], &[3, 0, 5]), 0.0);
        assert!(kld_from_counts(&[3, 0, 5], &[1, 4, 5]) > 0.0);
    }

    #[test]
    fn frechet_of_identical_stats_is_zero() {
        let f = DMatrix::from_fn(50, 3, |r, c| ((r * 7 + c * 3) % 11) as f64);
        assert_eq!(frechet_from_features(&f, &f).unwrap(), 0.0);
    }

    #[test]
    fn regularized_covariance_for_few_vectors() {
        let f = DMatrix::from_fn(3, 5, |r, c| (r + c) as f64);
        let (_, cov) = gaussian_stats(&f).unwrap();
        assert!(cov[(0, 0)] > 0.0);
        assert!(gaussian_stats(&DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn diversity_of_identical_samples_is_zero() {
        let cover = img(6, 6, |i| (i * 13 % 256) as u8);
        let s = vec![cover.clone(); 5];
        assert_eq!(diversity_from_samples(&s, &cover).unwrap(), 0.0);
        assert!(diversity_from_samples(&s[..1], &cover).is_err());
    }

    struct Const(ImageU8);
    impl Sampler for Const {
        fn sample(&self, _seed: u64) -> Result<ImageU8> {
            Ok(self.0.clone())
        }
    }

    #[test]
    fn leakage_edge_cases() {
        let secret = img(16, 16, |i| (i * 29 % 256) as u8);
        let r = leakage_audit(&Const(secret.clone()), &secret, 0, 0.5, 0).unwrap();
        assert_eq!((r.flagged, r.max_ssim_vs_secret), (0, None));
        let r = leakage_audit(&Const(secret.clone()), &secret, 7, 0.5, 0).unwrap();
        assert_eq!(r.flagged, 7);
        assert!((r.max_ssim_vs_secret.unwrap() - 1.0).abs() < 1e-12);
    }
}
