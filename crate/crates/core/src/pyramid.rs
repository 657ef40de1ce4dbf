//! Image containers, 8-bit quantization, bilinear resampling and the
//! multi-scale pyramid that every generator stage trains against.
//!
//! Float images live in `[-1, 1]` to line up with the generator's `tanh`
//! output and are stored channel-planar (`[3, H, W]`), which is also the
//! tensor layout used by the network code.

use crate::error::{Error, Result};

/// Number of color channels in every image handled here.
pub const CHANNELS: usize = 3;

/// 8-bit RGB image, row-major, channels interleaved (`HWC`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be non-zero"));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::dims(format!(
                "expected {} bytes for {height}x{width}x3, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    /// Value at row `y`, column `x`, channel `c`.
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }
}

/// Float RGB image with values in `[-1, 1]`, stored channel-planar.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageF {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageF {
    /// Builds an image from planar `[3, H, W]` data.
    pub fn from_planar(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("image dimensions must be non-zero"));
        }
        if data.len() != height * width * CHANNELS {
            return Err(Error::dims(format!(
                "expected {} values for 3x{height}x{width}, got {}",
                height * width * CHANNELS,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Planar `[3, H, W]` samples.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_planar(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(-1.0, 1.0);
        }
    }
}

/// Maps `[-1, 1]` onto `[0, 255]`, rounding half away from zero.
pub fn quantize(img: &ImageF) -> Result<ImageU8> {
    let (h, w) = img.dims();
    let plane = h * w;
    let mut out = vec![0u8; plane * CHANNELS];
    for c in 0..CHANNELS {
        for (i, &v) in img.data[c * plane..(c + 1) * plane].iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "pixel (channel {c}, index {i}) is {v}"
                )));
            }
            // f64::round is half-away-from-zero.
            let q = ((f64::from(v) + 1.0) * 127.5).round().clamp(0.0, 255.0);
            out[i * CHANNELS + c] = q as u8;
        }
    }
    Ok(ImageU8 {
        height: h,
        width: w,
        data: out,
    })
}

/// Maps `[0, 255]` onto `[-1, 1]`.
pub fn dequantize(img: &ImageU8) -> ImageF {
    let plane = img.height * img.width;
    let mut data = vec![0f32; plane * CHANNELS];
    for (i, px) in img.data.chunks_exact(CHANNELS).enumerate() {
        for c in 0..CHANNELS {
            data[c * plane + i] = f32::from(px[c]) / 127.5 - 1.0;
        }
    }
    ImageF {
        height: img.height,
        width: img.width,
        data,
    }
}

/// Two-tap bilinear weights along one axis (half-pixel centers, no corner
/// alignment).
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AxisPlan {
    pub in_len: usize,
    pub taps: Vec<(usize, usize, f64, f64)>,
}

impl AxisPlan {
    fn new(in_len: usize, out_len: usize) -> Self {
        let scale = in_len as f64 / out_len as f64;
        let taps = (0..out_len)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(in_len - 1);
                let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
                let frac = src - i0 as f64;
                (i0, i1, 1.0 - frac, frac)
            })
            .collect();
        Self { in_len, taps }
    }
}

/// Separable bilinear resampling operator between two spatial sizes. The
/// operator is linear, so the network code also uses its transpose for
/// backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ResizePlan {
    pub in_h: usize,
    pub in_w: usize,
    pub out_h: usize,
    pub out_w: usize,
    rows: AxisPlan,
    cols: AxisPlan,
}

impl ResizePlan {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            in_h,
            in_w,
            out_h,
            out_w,
            rows: AxisPlan::new(in_h, out_h),
            cols: AxisPlan::new(in_w, out_w),
        }
    }

    pub fn is_identity(&self) -> bool {
        self.in_h == self.out_h && self.in_w == self.out_w
    }

    /// Applies the operator to `channels` planes of `in_h x in_w`.
    pub fn apply<T: num_traits::Float>(&self, input: &[T], channels: usize) -> Vec<T> {
        if self.is_identity() {
            return input.to_vec();
        }
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut tmp = vec![T::zero(); channels * ih * ow];
        for c in 0..channels {
            for y in 0..ih {
                let src = &input[(c * ih + y) * iw..(c * ih + y + 1) * iw];
                let dst = &mut tmp[(c * ih + y) * ow..(c * ih + y + 1) * ow];
                for (d, &(x0, x1, w0, w1)) in dst.iter_mut().zip(&self.cols.taps) {
                    *d = src[x0] * T::from(w0).unwrap() + src[x1] * T::from(w1).unwrap();
                }
            }
        }
        let mut out = vec![T::zero(); channels * oh * ow];
        for c in 0..channels {
            for (y, &(y0, y1, w0, w1)) in self.rows.taps.iter().enumerate() {
                let (w0, w1) = (T::from(w0).unwrap(), T::from(w1).unwrap());
                let r0 = (c * ih + y0) * ow;
                let r1 = (c * ih + y1) * ow;
                let dst = &mut out[(c * oh + y) * ow..(c * oh + y + 1) * ow];
                for (x, d) in dst.iter_mut().enumerate() {
                    *d = tmp[r0 + x] * w0 + tmp[r1 + x] * w1;
                }
            }
        }
        out
    }

    /// Applies the adjoint operator: maps `out_h x out_w` planes back onto
    /// `in_h x in_w`.
    pub fn apply_transpose<T: num_traits::Float>(&self, grad: &[T], channels: usize) -> Vec<T> {
        if self.is_identity() {
            return grad.to_vec();
        }
        let (ih, iw, oh, ow) = (self.in_h, self.in_w, self.out_h, self.out_w);
        let mut tmp = vec![T::zero(); channels * ih * ow];
        for c in 0..channels {
            for (y, &(y0, y1, w0, w1)) in self.rows.taps.iter().enumerate() {
                let (w0, w1) = (T::from(w0).unwrap(), T::from(w1).unwrap());
                let src = &grad[(c * oh + y) * ow..(c * oh + y + 1) * ow];
                let r0 = (c * ih + y0) * ow;
                for (x, &g) in src.iter().enumerate() {
                    tmp[r0 + x] = tmp[r0 + x] + g * w0;
                }
                let r1 = (c * ih + y1) * ow;
                for (x, &g) in src.iter().enumerate() {
                    tmp[r1 + x] = tmp[r1 + x] + g * w1;
                }
            }
        }
        let mut out = vec![T::zero(); channels * ih * iw];
        for c in 0..channels {
            for y in 0..ih {
                let src = &tmp[(c * ih + y) * ow..(c * ih + y + 1) * ow];
                let dst = &mut out[(c * ih + y) * iw..(c * ih + y + 1) * iw];
                for (&g, &(x0, x1, w0, w1)) in src.iter().zip(&self.cols.taps) {
                    dst[x0] = dst[x0] + g * T::from(w0).unwrap();
                    dst[x1] = dst[x1] + g * T::from(w1).unwrap();
                }
            }
        }
        out
    }
}

/// Bilinear resize (half-pixel centers), clamped to `[-1, 1]`.
pub fn resize(img: &ImageF, target_h: usize, target_w: usize) -> Result<ImageF> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::invalid(format!(
            "resize target must be at least 1x1, got {target_h}x{target_w}"
        )));
    }
    if img.dims() == (target_h, target_w) {
        return Ok(img.clone());
    }
    let plan = ResizePlan::new(img.height, img.width, target_h, target_w);
    let mut out = ImageF {
        height: target_h,
        width: target_w,
        data: plan.apply(&img.data, CHANNELS),
    };
    out.clamp_in_place();
    Ok(out)
}

/// Resize for 8-bit images: dequantize, resample, quantize.
pub fn resize_u8(img: &ImageU8, target_h: usize, target_w: usize) -> Result<ImageU8> {
    if img.dims() == (target_h, target_w) {
        return Ok(img.clone());
    }
    quantize(&resize(&dequantize(img), target_h, target_w)?)
}

/// Multi-scale image ladder. `level(0)` is the source image, `level(N)` the
/// coarsest.
#[derive(Debug, Clone)]
pub struct ImagePyramid {
    levels: Vec<ImageF>,
    ratio: f64,
}

impl ImagePyramid {
    /// Image at scale `n` (0 = finest).
    pub fn level(&self, n: usize) -> &ImageF {
        &self.levels[n]
    }

    pub fn levels(&self) -> &[ImageF] {
        &self.levels
    }

    /// Downscaling factor between adjacent levels (1.0 for a single level).
    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    /// `N + 1`.
    pub fn stage_count(&self) -> usize {
        self.levels.len()
    }

    /// Index of the coarsest level, `N`.
    pub fn coarsest(&self) -> usize {
        self.levels.len() - 1
    }

    /// Spatial dims per level, finest first.
    pub fn dims(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(ImageF::dims).collect()
    }
}

/// Per-level `(height, width)` of the geometric schedule, finest first,
/// together with the inter-level ratio.
///
/// Level `n`'s shorter side is `cmin * (m / cmin)^((N - n) / N)` where `m` is
/// the source's shorter side; the longer side keeps the aspect ratio.
pub fn pyramid_dims(
    height: usize,
    width: usize,
    stage_count: usize,
    coarsest_min_dim: usize,
) -> Result<(Vec<(usize, usize)>, f64)> {
    if stage_count == 0 {
        return Err(Error::invalid("stage_count must be at least 1"));
    }
    if coarsest_min_dim == 0 {
        return Err(Error::invalid("coarsest_min_dim must be at least 1"));
    }
    let m = height.min(width);
    if m < coarsest_min_dim {
        return Err(Error::invalid(format!(
            "image {height}x{width} is smaller than coarsest_min_dim {coarsest_min_dim}"
        )));
    }
    if stage_count == 1 {
        return Ok((vec![(height, width)], 1.0));
    }
    let big_n = (stage_count - 1) as f64;
    let span = m as f64 / coarsest_min_dim as f64;
    let ratio = span.powf(1.0 / big_n);
    let dims: Vec<(usize, usize)> = (0..stage_count)
        .map(|n| {
            if n == 0 {
                return (height, width);
            }
            let short = coarsest_min_dim as f64 * span.powf((big_n - n as f64) / big_n);
            let scale = short / m as f64;
            let h = (height as f64 * scale).round() as usize;
            let w = (width as f64 * scale).round() as usize;
            (h.max(1), w.max(1))
        })
        .collect();
    for n in 1..stage_count {
        let (h0, w0) = dims[n - 1];
        let (h1, w1) = dims[n];
        if !(h1 < h0 && w1 < w0) {
            return Err(Error::invalid(format!(
                "pyramid levels {} and {n} collapse ({h0}x{w0} vs {h1}x{w1}); \
                 use fewer stages or a smaller coarsest_min_dim",
                n - 1
            )));
        }
    }
    Ok((dims, ratio))
}

/// Builds the pyramid by resampling the source directly to every level.
pub fn build_pyramid(
    img: &ImageF,
    stage_count: usize,
    coarsest_min_dim: usize,
) -> Result<ImagePyramid> {
    let (dims, ratio) = pyramid_dims(img.height, img.width, stage_count, coarsest_min_dim)?;
    let levels = dims
        .iter()
        .map(|&(h, w)| resize(img, h, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(ImagePyramid { levels, ratio })
}
