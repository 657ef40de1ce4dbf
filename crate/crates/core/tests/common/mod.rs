//! Gradient checks against finite differences and metric oracles, shared by
//! the `numerics` and `acceptance` targets.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use stegan_core::keynoise::{noise_pyramid, noise_pyramid_from_seed, EmbeddingKey};
use stegan_core::metrics::{self, frechet_from_features, kld_of_values, ssim, Sampler};
use stegan_core::netarch::{generator_forward, init_stage, Critic, Generator, StegoModel};
use stegan_core::pyramid::{build_pyramid, dequantize, pyramid_dims};
use stegan_core::tensor::Tensor;
use stegan_core::trainer::{check, multi_reconstruction_loss, reconstruction_loss};
use stegan_core::{stego, ImageU8};

const FD_STEP: f64 = 1e-6;
const REL_TOL: f64 = 1e-3;

fn random_tensor(shape: Vec<usize>, rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-scale..scale)).collect())
}

/// Relative error of `analytic` against central differences of `f` over a
/// random subset of coordinates in each tensor.
fn fd_relative_error(
    params: &mut [Tensor<f64>],
    analytic: &[Tensor<f64>],
    picks: usize,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(&[Tensor<f64>]) -> f64,
) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in 0..params.len() {
        let len = params[p].len();
        for _ in 0..picks.min(len) {
            let i = rng.gen_range(0..len);
            let orig = params[p].data()[i];
            params[p].data_mut()[i] = orig + FD_STEP;
            let up = f(params);
            params[p].data_mut()[i] = orig - FD_STEP;
            let down = f(params);
            params[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * FD_STEP);
            let a = analytic[p].data()[i];
            num += (a - fd).powi(2);
            den += fd.powi(2);
        }
    }
    (num / den.max(1e-300)).sqrt()
}

fn tiny_generator(width: usize, blocks: usize, seed: u64) -> Generator<f64> {
    let mut g = Generator::<f64>::empty(width);
    for b in 0..blocks {
        g.grow(seed + b as u64);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // larger weights so every nonlinearity is exercised
    for t in g.params_mut() {
        for v in t.data_mut() {
            *v += rng.gen_range(-0.2..0.2);
        }
    }
    g
}

fn critic_params(c: &Critic<f64>) -> Vec<Tensor<f64>> {
    c.params().into_iter().cloned().collect()
}

fn critic_from(base: &Critic<f64>, params: &[Tensor<f64>]) -> Critic<f64> {
    let mut c = base.clone();
    for (dst, src) in c.params_mut().into_iter().zip(params) {
        *dst = src.clone();
    }
    c
}

fn tiny_critic(seed: u64) -> Critic<f64> {
    let mut c = Critic::<f64>::new(4, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
    for t in c.params_mut() {
        for v in t.data_mut() {
            *v = rng.gen_range(-0.4..0.4);
        }
    }
    c
}

pub fn reconstruction_gradient_matches_finite_differences() {
    let (dims, _) = pyramid_dims(8, 10, 3, 4).unwrap();
    let gen = tiny_generator(4, 3, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let noise = noise_pyramid_from_seed(77, &dims);
    let amps = [0.3, 0.2, 1.0];
    let (h, w) = dims[0];
    let target = random_tensor(vec![3, h, w], &mut rng, 0.9);
    let (_, grads) = check::reconstruction_grad(&gen, &noise, &amps, &dims, &target, 0);
    let mut params: Vec<Tensor<f64>> = gen.params().into_iter().cloned().collect();
    let blocks = gen.block_count();
    let err = fd_relative_error(&mut params, &grads, 6, &mut rng, |p| {
        let g = Generator::from_params(4, blocks, p.to_vec()).unwrap();
        check::reconstruction_value(&g, &noise, &amps, &dims, &target, 0)
    });
    assert!(err < REL_TOL, "relative error {err}");
}

pub fn reconstruction_gradient_at_intermediate_stage() {
    let (dims, _) = pyramid_dims(8, 10, 3, 4).unwrap();
    let gen = tiny_generator(3, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let noise = noise_pyramid_from_seed(1, &dims);
    let amps = [0.0, 0.5, 1.0];
    let (h, w) = dims[1];
    let target = random_tensor(vec![3, h, w], &mut rng, 0.9);
    let (_, grads) = check::reconstruction_grad(&gen, &noise, &amps, &dims, &target, 1);
    let mut params: Vec<Tensor<f64>> = gen.params().into_iter().cloned().collect();
    let err = fd_relative_error(&mut params, &grads, 8, &mut rng, |p| {
        let g = Generator::from_params(3, 2, p.to_vec()).unwrap();
        check::reconstruction_value(&g, &noise, &amps, &dims, &target, 1)
    });
    assert!(err < REL_TOL, "relative error {err}");
}

pub fn critic_input_gradient_matches_finite_differences() {
    let critic = tiny_critic(2);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(vec![3, 12, 12], &mut rng, 1.0);
    let g = check::critic_input_grad(&critic, &x);
    let mut xs = vec![x];
    let err = fd_relative_error(&mut xs, &[g], 60, &mut rng, |p| check::critic_sum(&critic, &p[0]));
    assert!(err < REL_TOL, "relative error {err}");
}

pub fn gradient_penalty_loss_gradient_matches_finite_differences() {
    let critic = tiny_critic(4);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let real = random_tensor(vec![3, 12, 13], &mut rng, 1.0);
    let fake = random_tensor(vec![3, 12, 13], &mut rng, 1.0);
    let (gp_coeff, eps) = (0.1, 0.37);
    let (loss, grads) = check::critic_loss_grad(&critic, &real, &fake, gp_coeff, eps);
    let l = stegan_core::trainer::adversarial_losses(&critic, &real, &fake, gp_coeff, eps).unwrap();
    assert!((loss - l.critic_loss).abs() < 1e-12);
    let mut params = critic_params(&critic);
    let err = fd_relative_error(&mut params, &grads, 10, &mut rng, |p| {
        check::critic_loss_grad(&critic_from(&critic, p), &real, &fake, gp_coeff, eps).0
    });
    assert!(err < REL_TOL, "relative error {err}");
}

pub fn penalty_alone_gradient_matches_finite_differences() {
    // large coefficient so the penalty dominates the Wasserstein term
    let critic = tiny_critic(6);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let real = random_tensor(vec![3, 12, 12], &mut rng, 1.0);
    let fake = random_tensor(vec![3, 12, 12], &mut rng, 1.0);
    let (_, grads) = check::critic_loss_grad(&critic, &real, &fake, 1e4, 0.8);
    let mut params = critic_params(&critic);
    let err = fd_relative_error(&mut params, &grads, 10, &mut rng, |p| {
        check::critic_loss_grad(&critic_from(&critic, p), &real, &fake, 1e4, 0.8).0
    });
    assert!(err < REL_TOL, "relative error {err}");
}

pub fn penalty_of_linear_critic_has_closed_form() {
    // an all-equal linear critic has the same input gradient everywhere
    let critic = Critic::<f64>::constant(2, 0.01, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // non-negative inputs keep every activation on the identity branch
    let real = random_tensor(vec![3, 14, 14], &mut rng, 1.0).map(|v| v.abs());
    let fake = random_tensor(vec![3, 14, 14], &mut rng, 1.0).map(|v| v.abs());
    let g = check::critic_input_grad(&critic, &real);
    let norm = g.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    let gp = stegan_core::trainer::gradient_penalty(&critic, &real, &fake, 0.5).unwrap();
    assert!((gp - (norm - 1.0).powi(2)).abs() < 1e-12);
}

fn smoke_model(width: usize, levels: usize) -> StegoModel {
    let (dims, ratio) = pyramid_dims(24, 30, levels, 10).unwrap();
    let mut m = StegoModel::new(dims, ratio).with_width(width);
    for n in (0..levels).rev() {
        init_stage(&mut m, n, 100 + n as u64).unwrap();
        m.noise_amps[n] = if n == levels - 1 { 1.0 } else { 0.1 };
    }
    m
}

pub fn multi_secret_objective_reduces_to_single_at_one_secret() {
    let m = smoke_model(4, 3);
    let key = EmbeddingKey::new("one").unwrap();
    let z = noise_pyramid(&key, &m.level_dims).unwrap();
    let secret = ImageU8::new(24, 30, (0..24 * 30 * 3).map(|i| (i * 7 % 256) as u8).collect()).unwrap();
    let pyr = build_pyramid(&dequantize(&secret), 3, 10).unwrap();
    for n in 0..3 {
        let target = pyr.level(n).clone();
        let single = reconstruction_loss(&m, &z, &target, n).unwrap();
        let multi = multi_reconstruction_loss(&m, std::slice::from_ref(&z), std::slice::from_ref(&target), n).unwrap();
        assert_eq!(single, multi);
        // independent evaluation of the squared error
        let out = generator_forward(&m, &z, n).unwrap();
        let direct = out
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
            .sum::<f64>()
            / out.data().len() as f64;
        assert!((single - direct).abs() <= 1e-15 * direct.max(1.0));
    }
}

pub fn multi_secret_objective_is_mean_of_pairs() {
    let m = smoke_model(4, 2);
    let keys = ["a", "b", "c"].map(|k| EmbeddingKey::new(k).unwrap());
    let zs: Vec<_> = keys.iter().map(|k| noise_pyramid(k, &m.level_dims).unwrap()).collect();
    let targets: Vec<_> = (0..3)
        .map(|t| {
            let s = ImageU8::new(24, 30, (0..24 * 30 * 3).map(|i| ((i + 40 * t) * 13 % 256) as u8).collect()).unwrap();
            dequantize(&s)
        })
        .collect();
    let each: f64 = zs
        .iter()
        .zip(&targets)
        .map(|(z, t)| reconstruction_loss(&m, z, t, 0).unwrap())
        .sum::<f64>()
        / 3.0;
    let multi = multi_reconstruction_loss(&m, &zs, &targets, 0).unwrap();
    assert!((each - multi).abs() < 1e-15);
}

/// Direct double-sum SSIM with the 2-D Gaussian window.
fn ssim_oracle(a: &ImageU8, b: &ImageU8) -> f64 {
    let (h, w) = a.dims();
    let k = 11;
    let sigma: f64 = 1.5;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            win[i * k + j] = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut total = 0.0;
    for c in 0..3 {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - k {
            for x0 in 0..=w - k {
                let px = |img: &ImageU8, i: usize, j: usize| f64::from(img.get(y0 + i, x0 + j, c));
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        mx += win[i * k + j] * px(a, i, j);
                        my += win[i * k + j] * px(b, i, j);
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let dx = px(a, i, j) - mx;
                        let dy = px(b, i, j) - my;
                        vx += win[i * k + j] * dx * dx;
                        vy += win[i * k + j] * dy * dy;
                        cxy += win[i * k + j] * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / 3.0
}

fn random_image(h: usize, w: usize, rng: &mut ChaCha8Rng) -> ImageU8 {
    ImageU8::new(h, w, (0..h * w * 3).map(|_| rng.gen()).collect()).unwrap()
}

pub fn ssim_matches_definition_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let a = ImageU8::filled(16, 18, 40);
    let b = ImageU8::filled(16, 18, 168);
    assert!((ssim(&a, &b).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
    for _ in 0..4 {
        let a = random_image(17, 21, &mut rng);
        let mut b = a.clone();
        for v in b.data_mut() {
            *v = v.saturating_add(rng.gen_range(0..60));
        }
        let got = ssim(&a, &b).unwrap();
        assert!((got - ssim_oracle(&a, &b)).abs() < 1e-6, "{got}");
        let c = random_image(17, 21, &mut rng);
        assert!((ssim(&a, &c).unwrap() - ssim_oracle(&a, &c)).abs() < 1e-6);
    }
}

pub fn ssim_is_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let a = random_image(12, 13, &mut rng);
        let b = random_image(12, 13, &mut rng);
        assert_eq!(ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
    }
}

fn histogram_kld_oracle(a: &[f64], b: &[f64], bins: usize) -> f64 {
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    let count = |v: &[f64]| {
        let mut c = vec![0.0; bins];
        for &x in v {
            let mut i = ((x - lo) / (hi - lo) * bins as f64) as usize;
            if i >= bins {
                i = bins - 1;
            }
            c[i] += 1.0;
        }
        let n = v.len() as f64;
        let p: Vec<f64> = c.iter().map(|x| x / n + 1e-10).collect();
        let s: f64 = p.iter().sum();
        p.into_iter().map(|x| x / s).collect::<Vec<_>>()
    };
    let (p, q) = (count(a), count(b));
    p.iter().zip(&q).map(|(x, y)| x * (x / y).ln()).sum()
}

pub fn weight_kld_matches_histogram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let n0 = Normal::new(0.0, 1.0).unwrap();
    let n1 = Normal::new(0.5, 1.0).unwrap();
    let a: Vec<f64> = (0..100_000).map(|_| n0.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..100_000).map(|_| n1.sample(&mut rng)).collect();
    let got = kld_of_values(&a, &b, 100);
    let want = histogram_kld_oracle(&a, &b, 100);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    // continuous KLD of the two Gaussians is 0.125
    assert!((got - 0.125).abs() < 0.02, "{got}");
}

pub fn weight_kld_of_model_with_itself_is_zero() {
    let m = smoke_model(4, 3);
    let k = metrics::weight_kld(&m, &m, 100).unwrap();
    assert_eq!(k.total, 0.0);
    assert!(k.per_block.iter().all(|&v| v == 0.0));
    assert_eq!(k.per_block.len(), 3);
    let other = smoke_model(4, 2);
    assert!(metrics::weight_kld(&m, &other, 100).is_err());
}

pub fn weight_kld_is_positive_for_different_models() {
    let a = smoke_model(4, 3);
    let mut b = a.clone();
    for t in b.generator.params_mut() {
        t.data_mut().iter_mut().for_each(|v| *v *= 1.5);
    }
    let k = metrics::weight_kld(&a, &b, 100).unwrap();
    assert!(k.total > 0.0);
}

pub fn frechet_distance_closed_form() {
    use nalgebra::DMatrix;
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let n = Normal::new(0.0, 1.0).unwrap();
    let rows = 200_000;
    let a = DMatrix::from_fn(rows, 4, |_, _| n.sample(&mut rng));
    let b = DMatrix::from_fn(rows, 4, |_, _| n.sample(&mut rng) + 1.0);
    let d = frechet_from_features(&a, &b).unwrap();
    assert!((d - 4.0).abs() < 0.05, "{d}");
    // reordering rows changes rounding but not the distribution
    let mut shuffled = a.clone();
    shuffled.swap_rows(0, rows - 1);
    assert!(frechet_from_features(&a, &shuffled).unwrap() < 1e-9);
}

pub fn sifid_of_reference_against_itself_is_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let img = random_image(20, 24, &mut rng);
    let ext = metrics::RandomConvFeatures::default();
    assert_eq!(metrics::sifid(&img, &[img.clone()], &ext).unwrap(), 0.0);
    let other = random_image(20, 24, &mut rng);
    assert!(metrics::sifid(&img, &[other], &ext).unwrap() >= 0.0);
}

struct UniformNoise {
    h: usize,
    w: usize,
    half_width: f64,
}

impl Sampler for UniformNoise {
    fn sample(&self, seed: u64) -> stegan_core::Result<ImageU8> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::with_capacity(self.h * self.w * 3);
        for _ in 0..self.h * self.w {
            // gray pixels so luma equals the drawn value
            let v = (128.0 + rng.gen_range(-self.half_width..self.half_width)).round() as u8;
            data.extend([v, v, v]);
        }
        ImageU8::new(self.h, self.w, data)
    }
}

pub fn diversity_of_uniform_noise_matches_its_spread() {
    let (h, w) = (40, 40);
    let sampler = UniformNoise { h, w, half_width: 50.0 };
    let mut cover_data = Vec::new();
    for i in 0..h * w {
        let v = if i % 2 == 0 { 78u8 } else { 178 };
        cover_data.extend([v, v, v]);
    }
    let cover = ImageU8::new(h, w, cover_data).unwrap();
    let n = 400;
    let ds = metrics::diversity_score(&sampler, &cover, n, 0).unwrap();
    // uniform on [-50, 50] has std 50/sqrt(3); rounding adds 1/12 variance;
    // the sample std with n draws is biased by about (1 - 1/(4n))
    let sigma = (50.0f64.powi(2) / 3.0 + 1.0 / 12.0).sqrt() * (1.0 - 1.0 / (4.0 * n as f64));
    let expected = sigma / 50.0;
    assert!((ds - expected).abs() < 0.01, "{ds} vs {expected}");
}

pub fn noise_is_deterministic_per_key() {
    let dims = [(30, 40), (15, 20), (8, 10)];
    let k = EmbeddingKey::new("determinism").unwrap();
    let a = noise_pyramid(&k, &dims).unwrap();
    let b = noise_pyramid(&EmbeddingKey::new("determinism").unwrap(), &dims).unwrap();
    assert_eq!(a, b);
    let m = smoke_model(4, 3);
    assert_eq!(
        stego::extract(&m, &k, None).unwrap(),
        stego::extract(&m, &k, None).unwrap()
    );
}

pub fn serialization_roundtrip_is_bit_exact() {
    let m = smoke_model(5, 3);
    let bytes = stego::save(&m);
    let back = stego::load(&bytes).unwrap();
    for (a, b) in m.generator.params().iter().zip(back.generator.params()) {
        let ab: Vec<u32> = a.data().iter().map(|v| v.to_bits()).collect();
        let bb: Vec<u32> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(ab, bb);
    }
    let k = EmbeddingKey::new("rt").unwrap();
    assert_eq!(stego::extract(&m, &k, None).unwrap(), stego::extract(&back, &k, None).unwrap());
    assert_eq!(stego::sample(&m, 9).unwrap(), stego::sample(&back, 9).unwrap());
}

/// Every check above, by name.
pub const ALL: &[(&str, fn())] = &[
    ("reconstruction_gradient_matches_finite_differences", reconstruction_gradient_matches_finite_differences),
    ("reconstruction_gradient_at_intermediate_stage", reconstruction_gradient_at_intermediate_stage),
    ("critic_input_gradient_matches_finite_differences", critic_input_gradient_matches_finite_differences),
    ("gradient_penalty_loss_gradient_matches_finite_differences", gradient_penalty_loss_gradient_matches_finite_differences),
    ("penalty_alone_gradient_matches_finite_differences", penalty_alone_gradient_matches_finite_differences),
    ("penalty_of_linear_critic_has_closed_form", penalty_of_linear_critic_has_closed_form),
    ("multi_secret_objective_reduces_to_single_at_one_secret", multi_secret_objective_reduces_to_single_at_one_secret),
    ("multi_secret_objective_is_mean_of_pairs", multi_secret_objective_is_mean_of_pairs),
    ("ssim_matches_definition_oracle", ssim_matches_definition_oracle),
    ("ssim_is_symmetric", ssim_is_symmetric),
    ("weight_kld_matches_histogram_oracle", weight_kld_matches_histogram_oracle),
    ("weight_kld_of_model_with_itself_is_zero", weight_kld_of_model_with_itself_is_zero),
    ("weight_kld_is_positive_for_different_models", weight_kld_is_positive_for_different_models),
    ("frechet_distance_closed_form", frechet_distance_closed_form),
    ("sifid_of_reference_against_itself_is_zero", sifid_of_reference_against_itself_is_zero),
    ("diversity_of_uniform_noise_matches_its_spread", diversity_of_uniform_noise_matches_its_spread),
    ("noise_is_deterministic_per_key", noise_is_deterministic_per_key),
    ("serialization_roundtrip_is_bit_exact", serialization_roundtrip_is_bit_exact),
];
