//! Multi-stage generator and shared patch critic.
//!
//! The generator grows one convolution block per scale. Block 0 runs at the
//! coarsest level on pure noise; every later block runs one level finer on
//! the upsampled features of the block before it plus that level's noise,
//! and adds the upsampled features back as a residual. A single back-end
//! convolution with `tanh` maps the final features to RGB.
//!
//! All networks are generic over [`Real`] so that gradient checks can run in
//! `f64`; stored models are `f32`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::keynoise::{NoisePyramid, NOISE_SCHEME_V1};
use crate::pyramid::{ImageF, CHANNELS};
use crate::tensor::{Real, Tensor, KERNEL};

/// Hidden feature width of every convolution except the RGB back-end.
pub const HIDDEN_WIDTH: usize = 64;
/// Convolution layers per generator block.
pub const BLOCK_LAYERS: usize = 3;
/// Layers in the critic.
pub const CRITIC_LAYERS: usize = 5;
pub const LEAKY_SLOPE: f64 = 0.05;
/// Std of freshly initialized convolution weights.
pub const INIT_STD: f64 = 0.02;
pub const BN_EPS: f64 = 1e-5;
/// Smallest input side the critic accepts (five stacked 3x3 layers).
pub const CRITIC_RECEPTIVE_FIELD: usize = 1 + CRITIC_LAYERS * (KERNEL - 1);

/// 3x3 convolution with bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> ConvLayer<T> {
    fn fresh(out_ch: usize, in_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).unwrap();
        let n = out_ch * in_ch * KERNEL * KERNEL;
        let data = (0..n).map(|_| T::lit(normal.sample(rng))).collect();
        Self {
            weight: Tensor::new(vec![out_ch, in_ch, KERNEL, KERNEL], data),
            bias: Tensor::zeros(vec![out_ch]),
        }
    }

    fn cast<U: Real>(&self) -> ConvLayer<U> {
        ConvLayer {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

/// Convolution followed by batch normalization and leaky ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct NormConv<T> {
    pub conv: ConvLayer<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

impl<T: Real> NormConv<T> {
    fn fresh(out_ch: usize, in_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let conv = ConvLayer::fresh(out_ch, in_ch, rng);
        let normal = Normal::new(1.0, INIT_STD).unwrap();
        let gamma = (0..out_ch).map(|_| T::lit(normal.sample(rng))).collect();
        Self {
            conv,
            gamma: Tensor::new(vec![out_ch], gamma),
            beta: Tensor::zeros(vec![out_ch]),
        }
    }

    fn cast<U: Real>(&self) -> NormConv<U> {
        NormConv {
            conv: self.conv.cast(),
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
        }
    }
}

/// Which part of the generator a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Head,
    Block(usize),
    Tail,
}

/// The growing generator. `head`/`tail` are absent until the coarsest stage
/// is initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator<T> {
    width: usize,
    head: Option<NormConv<T>>,
    blocks: Vec<Vec<NormConv<T>>>,
    tail: Option<ConvLayer<T>>,
}

impl<T: Real> Generator<T> {
    pub fn empty(width: usize) -> Self {
        Self {
            width,
            head: None,
            blocks: Vec::new(),
            tail: None,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Appends one freshly initialized block; on an empty generator the
    /// front-end and back-end are created as well. Existing weights are left
    /// untouched, which is how a stage inherits from the one below it.
    pub fn grow(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = self.width;
        if self.head.is_none() {
            self.head = Some(NormConv::fresh(w, CHANNELS, &mut rng));
            self.tail = Some(ConvLayer::fresh(CHANNELS, w, &mut rng));
        }
        let block = (0..BLOCK_LAYERS).map(|_| NormConv::fresh(w, w, &mut rng)).collect();
        self.blocks.push(block);
    }

    /// Parameters in canonical order, with their group and name.
    pub fn named_params(&self) -> Vec<(String, ParamGroup, &Tensor<T>)> {
        fn push_norm<'a, T>(
            out: &mut Vec<(String, ParamGroup, &'a Tensor<T>)>,
            prefix: &str,
            g: ParamGroup,
            nc: &'a NormConv<T>,
        ) {
            out.push((format!("{prefix}.weight"), g, &nc.conv.weight));
            out.push((format!("{prefix}.bias"), g, &nc.conv.bias));
            out.push((format!("{prefix}.bn.gamma"), g, &nc.gamma));
            out.push((format!("{prefix}.bn.beta"), g, &nc.beta));
        }
        let mut out = Vec::new();
        if let Some(h) = &self.head {
            push_norm(&mut out, "head", ParamGroup::Head, h);
        }
        for (i, block) in self.blocks.iter().enumerate() {
            for (j, layer) in block.iter().enumerate() {
                push_norm(&mut out, &format!("block{i}.conv{j}"), ParamGroup::Block(i), layer);
            }
        }
        if let Some(t) = &self.tail {
            out.push(("tail.weight".into(), ParamGroup::Tail, &t.weight));
            out.push(("tail.bias".into(), ParamGroup::Tail, &t.bias));
        }
        out
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.named_params().into_iter().map(|(_, _, t)| t).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        fn push_norm<'a, T>(out: &mut Vec<&'a mut Tensor<T>>, nc: &'a mut NormConv<T>) {
            let NormConv { conv, gamma, beta } = nc;
            out.push(&mut conv.weight);
            out.push(&mut conv.bias);
            out.push(gamma);
            out.push(beta);
        }
        let mut out = Vec::new();
        if let Some(h) = &mut self.head {
            push_norm(&mut out, h);
        }
        for block in &mut self.blocks {
            for layer in block {
                push_norm(&mut out, layer);
            }
        }
        if let Some(t) = &mut self.tail {
            out.push(&mut t.weight);
            out.push(&mut t.bias);
        }
        out
    }

    pub fn param_groups(&self) -> Vec<ParamGroup> {
        self.named_params().into_iter().map(|(_, g, _)| g).collect()
    }

    /// Per-parameter trainable flags for the newest `window` blocks plus the
    /// front-end and back-end.
    pub fn trainable_mask(&self, window: usize) -> Vec<bool> {
        let first_trainable = self.blocks.len().saturating_sub(window);
        self.param_groups()
            .into_iter()
            .map(|g| match g {
                ParamGroup::Head | ParamGroup::Tail => true,
                ParamGroup::Block(i) => i >= first_trainable,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Generator<U> {
        Generator {
            width: self.width,
            head: self.head.as_ref().map(NormConv::cast),
            blocks: self
                .blocks
                .iter()
                .map(|b| b.iter().map(NormConv::cast).collect())
                .collect(),
            tail: self.tail.as_ref().map(ConvLayer::cast),
        }
    }

    /// Rebuilds a generator from tensors in canonical order.
    pub fn from_params(width: usize, blocks: usize, mut tensors: Vec<Tensor<T>>) -> Result<Self> {
        let mut g = Self::empty(width);
        if blocks > 0 {
            g.grow(0);
            for _ in 1..blocks {
                g.grow(0);
            }
        }
        let expected: Vec<Vec<usize>> = g.params().iter().map(|t| t.shape().to_vec()).collect();
        if expected.len() != tensors.len() {
            return Err(Error::Malformed(format!(
                "expected {} tensors for {blocks} blocks, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for (i, (shape, t)) in expected.iter().zip(&tensors).enumerate() {
            if shape.as_slice() != t.shape() {
                return Err(Error::Malformed(format!(
                    "tensor {i} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        for (dst, src) in g.params_mut().into_iter().zip(tensors.drain(..)) {
            *dst = src;
        }
        Ok(g)
    }

    /// Places the parameters on `tape`; `trainable[i]` decides whether
    /// parameter `i` (canonical order) receives gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: &[bool]) -> BoundGenerator {
        let params = self.params();
        assert_eq!(params.len(), trainable.len());
        let vars: Vec<Var> = params
            .iter()
            .zip(trainable)
            .map(|(t, &tr)| tape.leaf((*t).clone(), tr))
            .collect();
        let mut it = vars.iter().copied();
        let norm = |it: &mut dyn Iterator<Item = Var>| BoundNormConv {
            conv: BoundConv {
                w: it.next().unwrap(),
                b: it.next().unwrap(),
            },
            gamma: it.next().unwrap(),
            beta: it.next().unwrap(),
        };
        let head = self.head.as_ref().map(|_| norm(&mut it));
        let blocks = self
            .blocks
            .iter()
            .map(|b| b.iter().map(|_| norm(&mut it)).collect())
            .collect();
        let tail = self.tail.as_ref().map(|_| BoundConv {
            w: it.next().unwrap(),
            b: it.next().unwrap(),
        });
        BoundGenerator {
            head,
            blocks,
            tail,
            params: vars,
        }
    }

    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundGenerator {
        let mask = vec![false; self.params().len()];
        self.bind(tape, &mask)
    }
}

#[derive(Debug, Clone, Copy)]
struct BoundConv {
    w: Var,
    b: Var,
}

#[derive(Debug, Clone, Copy)]
struct BoundNormConv {
    conv: BoundConv,
    gamma: Var,
    beta: Var,
}

fn apply_conv<T: Real>(tape: &mut Tape<T>, l: BoundConv, x: Var) -> Var {
    let y = tape.conv(x, l.w);
    tape.add_bias(y, l.b)
}

fn apply_norm_conv<T: Real>(tape: &mut Tape<T>, l: BoundNormConv, x: Var) -> Var {
    let y = apply_conv(tape, l.conv, x);
    let y = tape.batch_norm(y, l.gamma, l.beta, T::lit(BN_EPS));
    tape.leaky_relu(y, T::lit(LEAKY_SLOPE))
}

/// Generator parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundGenerator {
    head: Option<BoundNormConv>,
    blocks: Vec<Vec<BoundNormConv>>,
    tail: Option<BoundConv>,
    params: Vec<Var>,
}

impl BoundGenerator {
    /// Parameter vars in canonical order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Runs the generator up to scale `to_stage`.
    ///
    /// `noise[n]` is the `[1,H,W]` noise map of level `n` and `amps[n]` its
    /// amplitude; `dims[n]` are the level dims (finest first).
    pub fn forward<T: Real>(
        &self,
        tape: &mut Tape<T>,
        noise: &[Var],
        amps: &[f64],
        dims: &[(usize, usize)],
        to_stage: usize,
    ) -> Var {
        let coarsest = dims.len() - 1;
        let used = coarsest - to_stage + 1;
        assert!(used <= self.blocks.len(), "generator has too few blocks");
        let (head, tail) = (self.head.unwrap(), self.tail.unwrap());

        let z = tape.broadcast_channels(noise[coarsest], CHANNELS);
        let z = tape.scale(z, T::lit(amps[coarsest]));
        let mut feat = apply_norm_conv(tape, head, z);
        for &layer in &self.blocks[0] {
            feat = apply_norm_conv(tape, layer, feat);
        }
        for (i, block) in self.blocks.iter().enumerate().take(used).skip(1) {
            let level = coarsest - i;
            let (h, w) = dims[level];
            let width = tape.value(feat).chw().0;
            let up = tape.resize(feat, h, w);
            let z = tape.broadcast_channels(noise[level], width);
            let z = tape.scale(z, T::lit(amps[level]));
            let mut x = tape.add(up, z);
            for &layer in block {
                x = apply_norm_conv(tape, layer, x);
            }
            feat = tape.add(x, up);
        }
        let rgb = apply_conv(tape, tail, feat);
        tape.tanh(rgb)
    }
}

/// Shared patch critic: four 64-wide conv + leaky ReLU layers and a final
/// single-filter conv producing a score per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    layers: Vec<ConvLayer<T>>,
}

impl<T: Real> Critic<T> {
    pub fn new(width: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(CRITIC_LAYERS);
        let mut in_ch = CHANNELS;
        for i in 0..CRITIC_LAYERS {
            let out_ch = if i + 1 == CRITIC_LAYERS { 1 } else { width };
            layers.push(ConvLayer::fresh(out_ch, in_ch, &mut rng));
            in_ch = out_ch;
        }
        Self { layers }
    }

    /// Critic whose every weight equals `w` and every bias equals `b`.
    pub fn constant(width: usize, w: T, b: T) -> Self {
        let mut c = Self::new(width, 0);
        for l in &mut c.layers {
            l.weight.data_mut().iter_mut().for_each(|v| *v = w);
            l.bias.data_mut().iter_mut().for_each(|v| *v = b);
        }
        c
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> Critic<U> {
        Critic {
            layers: self.layers.iter().map(ConvLayer::cast).collect(),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> BoundCritic {
        let layers: Vec<BoundConv> = self
            .layers
            .iter()
            .map(|l| BoundConv {
                w: tape.leaf(l.weight.clone(), trainable),
                b: tape.leaf(l.bias.clone(), trainable),
            })
            .collect();
        let params = layers.iter().flat_map(|l| [l.w, l.b]).collect();
        BoundCritic { layers, params }
    }
}

/// Critic parameters placed on a tape.
#[derive(Debug, Clone)]
pub struct BoundCritic {
    layers: Vec<BoundConv>,
    params: Vec<Var>,
}

impl BoundCritic {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    /// Score map `[1,H,W]` for an image `[3,H,W]`.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Var {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &l) in self.layers.iter().enumerate() {
            h = apply_conv(tape, l, h);
            if i != last {
                h = tape.leaky_relu(h, T::lit(LEAKY_SLOPE));
            }
        }
        h
    }
}

/// Patch scores of `img` under `critic`, one per pixel.
pub fn critic_forward(critic: &Critic<f32>, img: &ImageF) -> Result<Tensor<f32>> {
    let (h, w) = img.dims();
    if h < CRITIC_RECEPTIVE_FIELD || w < CRITIC_RECEPTIVE_FIELD {
        return Err(Error::invalid(format!(
            "critic needs at least {0}x{0} input, got {h}x{w}",
            CRITIC_RECEPTIVE_FIELD
        )));
    }
    let mut tape = Tape::new();
    let bound = critic.bind(&mut tape, false);
    let x = tape.constant(image_tensor(img));
    let s = bound.forward(&mut tape, x);
    Ok(tape.value(s).clone())
}

pub(crate) fn image_tensor<T: Real>(img: &ImageF) -> Tensor<T> {
    let (h, w) = img.dims();
    Tensor::new(
        vec![CHANNELS, h, w],
        img.data().iter().map(|&v| T::lit(f64::from(v))).collect(),
    )
}

pub(crate) fn tensor_image<T: Real>(t: &Tensor<T>) -> Result<ImageF> {
    let (c, h, w) = t.chw();
    if c != CHANNELS {
        return Err(Error::dims(format!("expected 3 channels, got {c}")));
    }
    ImageF::from_planar(
        h,
        w,
        t.data().iter().map(|v| v.to_f32().unwrap()).collect(),
    )
}

/// Noise maps as `[1,H,W]` constants, one per level.
pub(crate) fn noise_vars<T: Real>(tape: &mut Tape<T>, noise: &NoisePyramid) -> Vec<Var> {
    noise
        .maps()
        .iter()
        .map(|m| {
            tape.constant(Tensor::new(
                vec![1, m.height, m.width],
                m.data.iter().map(|&v| T::lit(f64::from(v))).collect(),
            ))
        })
        .collect()
}

/// The transmitted generator together with everything needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct StegoModel {
    pub generator: Generator<f32>,
    /// Level dims, finest first.
    pub level_dims: Vec<(usize, usize)>,
    pub ratio: f64,
    /// Noise amplitude per level, finest first.
    pub noise_amps: Vec<f32>,
    pub noise_scheme: String,
    /// Shuffle scheme when the secrets were scrambled before hiding.
    pub shuffle_scheme: Option<String>,
}

impl StegoModel {
    /// Model with no trained stages over the given level dims.
    pub fn new(level_dims: Vec<(usize, usize)>, ratio: f64) -> Self {
        let levels = level_dims.len();
        let mut noise_amps = vec![0.0; levels];
        if let Some(last) = noise_amps.last_mut() {
            *last = 1.0;
        }
        Self {
            generator: Generator::empty(HIDDEN_WIDTH),
            level_dims,
            ratio,
            noise_amps,
            noise_scheme: NOISE_SCHEME_V1.to_owned(),
            shuffle_scheme: None,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.generator = Generator::empty(width);
        self
    }

    /// `N`.
    pub fn coarsest(&self) -> usize {
        self.level_dims.len() - 1
    }

    /// Finest scale the generator can currently produce.
    pub fn trained_to(&self) -> Option<usize> {
        let b = self.generator.block_count();
        (b > 0).then(|| self.level_dims.len() - b)
    }

    /// Output dims (finest level).
    pub fn output_dims(&self) -> (usize, usize) {
        self.level_dims[0]
    }

    pub fn amps_f64(&self) -> Vec<f64> {
        self.noise_amps.iter().map(|&a| f64::from(a)).collect()
    }
}

/// Grows the generator from stage `n + 1` to stage `n`: one new block with
/// fresh weights, everything else inherited.
pub fn init_stage(model: &mut StegoModel, n: usize, seed: u64) -> Result<()> {
    let coarsest = model.coarsest();
    if n > coarsest {
        return Err(Error::invalid(format!(
            "stage {n} does not exist (coarsest is {coarsest})"
        )));
    }
    let have = model.generator.block_count();
    if have != coarsest - n {
        return Err(Error::invalid(format!(
            "cannot initialize stage {n}: generator has {have} blocks, stage {} must be trained first",
            n + 1
        )));
    }
    model.generator.grow(seed);
    Ok(())
}

/// Runs the stored generator on a noise pyramid and returns the image at
/// scale `to_stage`.
pub fn generator_forward(model: &StegoModel, noise: &NoisePyramid, to_stage: usize) -> Result<ImageF> {
    check_noise(model, noise)?;
    let coarsest = model.coarsest();
    if to_stage > coarsest {
        return Err(Error::invalid(format!("stage {to_stage} out of range")));
    }
    if model.generator.block_count() < coarsest - to_stage + 1 {
        return Err(Error::invalid(format!(
            "generator is not trained down to stage {to_stage}"
        )));
    }
    let mut tape = Tape::<f32>::new();
    let bound = model.generator.bind_frozen(&mut tape);
    let z = noise_vars(&mut tape, noise);
    let out = bound.forward(&mut tape, &z, &model.amps_f64(), &model.level_dims, to_stage);
    tensor_image(tape.value(out))
}

pub(crate) fn check_noise(model: &StegoModel, noise: &NoisePyramid) -> Result<()> {
    if noise.dims() != model.level_dims {
        return Err(Error::dims(format!(
            "noise dims {:?} do not match model level dims {:?}",
            noise.dims(),
            model.level_dims
        )));
    }
    Ok(())
}

/// Number of learnable scalars in the generator.
pub fn param_count(model: &StegoModel) -> usize {
    model.generator.param_count()
}

/// Fresh per-call seed helper for stage initialization.
pub(crate) fn stage_seed(base: u64, n: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ 0x5354_4147_4500_0000);
    let mut s = 0;
    for _ in 0..=n {
        s = rng.gen();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keynoise::noise_pyramid_from_seed;
    use crate::pyramid::pyramid_dims;

    fn grown(levels: usize, width: usize) -> StegoModel {
        let (dims, ratio) = pyramid_dims(40, 48, levels, 12).unwrap();
        let mut m = StegoModel::new(dims, ratio).with_width(width);
        for n in (0..levels).rev() {
            init_stage(&mut m, n, 100 + n as u64).unwrap();
        }
        m
    }

    #[test]
    fn empty_model_has_no_params() {
        let m = StegoModel::new(vec![(30, 30)], 1.0);
        assert_eq!(param_count(&m), 0);
    }

    #[test]
    fn single_conv_param_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = ConvLayer::<f32>::fresh(64, 3, &mut rng);
        assert_eq!(l.weight.len() + l.bias.len(), 1_792);
    }

    #[test]
    fn default_six_stage_param_count() {
        let (dims, ratio) = pyramid_dims(164, 244, 6, 25).unwrap();
        let mut m = StegoModel::new(dims, ratio);
        for n in (0..6).rev() {
            init_stage(&mut m, n, n as u64).unwrap();
        }
        // 18 block convs + front-end + back-end + 19 BN affine pairs
        let expected = 6 * 3 * (3 * 3 * 64 * 64 + 64) + 1_792 + 1_731 + 19 * 2 * 64;
        assert_eq!(param_count(&m), expected);
        assert_eq!(expected, 670_659);
    }

    #[test]
    fn stage_growth_inherits_weights() {
        let (dims, ratio) = pyramid_dims(40, 48, 3, 12).unwrap();
        let mut m = StegoModel::new(dims, ratio).with_width(8);
        assert!(init_stage(&mut m, 1, 0).is_err(), "stage 1 before stage 2");
        init_stage(&mut m, 2, 1).unwrap();
        assert_eq!(m.generator.block_count(), 1);
        let before: Vec<Tensor<f32>> = m.generator.params().into_iter().cloned().collect();
        let per_block = 3 * (8 * 8 * 9 + 8 + 16);
        init_stage(&mut m, 1, 2).unwrap();
        assert_eq!(m.generator.block_count(), 2);
        let after = m.generator.named_params();
        // head + block0 unchanged, tail unchanged
        let old_names: Vec<String> = {
            let mut g = Generator::<f32>::empty(8);
            g.grow(1);
            g.named_params().into_iter().map(|(n, _, _)| n).collect()
        };
        for (name, t) in old_names.iter().zip(&before) {
            let (_, _, now) = after.iter().find(|(n, _, _)| n == name).unwrap();
            assert_eq!(*now, t, "{name} changed");
        }
        let before_count: usize = before.iter().map(|t| t.len()).sum();
        assert_eq!(m.generator.param_count() - before_count, per_block);
    }

    #[test]
    fn forward_shapes_and_range() {
        let m = grown(3, 8);
        for seed in 0..100u64 {
            let z = noise_pyramid_from_seed(seed, &m.level_dims);
            let coarse = generator_forward(&m, &z, 2).unwrap();
            assert_eq!(coarse.dims(), m.level_dims[2]);
            let fine = generator_forward(&m, &z, 0).unwrap();
            assert_eq!(fine.dims(), m.level_dims[0]);
            assert!(fine.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn forward_rejects_wrong_noise_dims() {
        let m = grown(2, 4);
        let z = noise_pyramid_from_seed(1, &[(10, 10), (5, 5)]);
        assert!(generator_forward(&m, &z, 0).is_err());
    }

    #[test]
    fn forward_does_not_touch_weights() {
        let m = grown(2, 4);
        let snapshot = m.clone();
        let z = noise_pyramid_from_seed(3, &m.level_dims);
        for _ in 0..3 {
            generator_forward(&m, &z, 0).unwrap();
        }
        assert_eq!(m, snapshot);
    }

    #[test]
    fn trainable_window_covers_newest_blocks() {
        let m = grown(5, 4);
        let mask = m.generator.trainable_mask(3);
        for (g, t) in m.generator.param_groups().into_iter().zip(mask) {
            match g {
                ParamGroup::Block(i) => assert_eq!(t, i >= 2),
                _ => assert!(t),
            }
        }
    }

    #[test]
    fn critic_shape_and_constant_weights() {
        let img = ImageF::from_planar(
            12,
            14,
            (0..3 * 12 * 14).map(|i| ((i % 17) as f32 / 8.5) - 1.0).collect(),
        )
        .unwrap();
        let c = Critic::<f32>::new(8, 4);
        let s = critic_forward(&c, &img).unwrap();
        assert_eq!(s.shape(), [1, 12, 14]);

        let zero = Critic::<f32>::constant(8, 0.0, 0.25);
        let s = critic_forward(&zero, &img).unwrap();
        assert!(s.data().iter().all(|&v| v == s.data()[0]));

        for v in [-1.0f32, 1.0] {
            let s = critic_forward(&c, &ImageF::filled(11, 11, v)).unwrap();
            assert!(s.all_finite());
        }
    }

    #[test]
    fn critic_rejects_small_input() {
        let c = Critic::<f32>::new(4, 0);
        assert!(critic_forward(&c, &ImageF::filled(10, 20, 0.0)).is_err());
    }
}
