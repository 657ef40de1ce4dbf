//! Dense tensors and the 3x3 same-padded convolution kernels.
//!
//! Convolutions go through im2col + GEMM. The three kernels below are the
//! three partial derivatives of one trilinear form
//! `T(y, w, x) = sum y[o,p] * w[o,i,k] * x[i,p+k]`, which is what lets the
//! autograd tape differentiate through its own backward pass.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};

/// Scalar type the network code is generic over (`f32` for training and
/// storage, `f64` for gradient checks).
pub trait Real:
    Float + FromPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + 'static
{
    /// `c = a * b + beta * c` with explicit strides.
    ///
    /// # Safety
    /// Strides and dims must describe memory inside the given slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }
}

impl Real for f32 {
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// `C[m,n] = op(A)[m,k] * op(B)[k,n]`, all row-major. `a_t` means `A` is
/// stored as `[k,m]`, `b_t` means `B` is stored as `[n,k]`.
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above pin every slice to exactly the extent the
    // strides address.
    unsafe {
        T::gemm_strided(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length"
        );
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: Vec<usize>, v: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![v; n],
        }
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected [C,H,W], got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!(self.shape, other.shape, "shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Kernel side length of every convolution in the networks.
pub const KERNEL: usize = 3;
const KK: usize = KERNEL * KERNEL;

/// Unfolds `[C,H,W]` into `[C*9, H*W]` with zero padding of one pixel.
fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * KK * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ch * KK) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds `[C*9, H*W]` back onto `[C,H,W]`, summing
/// overlapping taps.
fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ch * KK) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&src[1..]).for_each(|(d, &s)| *d += s),
                        1 => dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s),
                        _ => dst[1..].iter_mut().zip(&src[..w - 1]).for_each(|(d, &s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

fn weight_dims<T: Real>(w: &Tensor<T>) -> (usize, usize) {
    let s = w.shape();
    assert!(
        s.len() == 4 && s[2] == KERNEL && s[3] == KERNEL,
        "expected [O,C,3,3] weights, got {s:?}"
    );
    (s[0], s[1])
}

/// `y = conv(x, w)`: `[C,H,W] x [O,C,3,3] -> [O,H,W]`.
pub(crate) fn conv_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let (c, h, wd) = x.chw();
    let (o, ci) = weight_dims(w);
    assert_eq!(c, ci, "conv input has {c} channels, weights expect {ci}");
    let cols = im2col(x.data(), c, h, wd);
    let mut y = vec![T::zero(); o * h * wd];
    gemm(o, c * KK, h * wd, w.data(), false, &cols, false, &mut y);
    Tensor::new(vec![o, h, wd], y)
}

/// Input gradient: `[O,H,W] x [O,C,3,3] -> [C,H,W]`.
pub(crate) fn conv_backward_input<T: Real>(gy: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
    let (o, h, wd) = gy.chw();
    let (wo, c) = weight_dims(w);
    assert_eq!(o, wo);
    let mut cols = vec![T::zero(); c * KK * h * wd];
    gemm(c * KK, o, h * wd, w.data(), true, gy.data(), false, &mut cols);
    Tensor::new(vec![c, h, wd], col2im(&cols, c, h, wd))
}

/// Weight gradient: `[O,H,W] x [C,H,W] -> [O,C,3,3]`.
pub(crate) fn conv_backward_weight<T: Real>(gy: &Tensor<T>, x: &Tensor<T>) -> Tensor<T> {
    let (o, h, wd) = gy.chw();
    let (c, xh, xw) = x.chw();
    assert_eq!((h, wd), (xh, xw));
    let cols = im2col(x.data(), c, h, wd);
    let mut dw = vec![T::zero(); o * c * KK];
    gemm(o, h * wd, c * KK, gy.data(), false, &cols, true, &mut dw);
    Tensor::new(vec![o, c, KERNEL, KERNEL], dw)
}
