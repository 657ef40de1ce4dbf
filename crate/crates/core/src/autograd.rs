//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every backward rule is written in terms of tape operations, so the
//! gradients produced by [`Tape::grad`] are themselves tape nodes and can be
//! differentiated again (`create_graph = true`). The critic's gradient
//! penalty relies on this.

use std::rc::Rc;

use crate::pyramid::ResizePlan;
use crate::tensor::{self, Real, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone)]
enum Op<T> {
    Leaf,
    Conv(Var, Var),
    ConvBwdInput(Var, Var),
    ConvBwdWeight(Var, Var),
    AddBias(Var, Var),
    SumSpatial(Var),
    BroadcastSpatial(Var),
    SumChannels(Var),
    BroadcastChannels(Var),
    SumAll(Var),
    BroadcastAll(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var, T),
    MaskMul(Var, Rc<Tensor<T>>),
    Tanh(Var),
    Powf(Var, T),
    Sqrt(Var),
    RecipOrZero(Var),
    Resize(Var, Rc<ResizePlan>),
    ResizeT(Var, Rc<ResizePlan>),
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation record for one forward/backward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    no_grad: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            no_grad: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = !self.no_grad && parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds an input tensor.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Rc::new(value),
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes[v.0].value)
    }

    pub fn conv(&mut self, x: Var, w: Var) -> Var {
        let y = tensor::conv_forward(self.value(x), self.value(w));
        self.push(y, Op::Conv(x, w), &[x, w])
    }

    fn conv_bwd_input(&mut self, gy: Var, w: Var) -> Var {
        let r = tensor::conv_backward_input(self.value(gy), self.value(w));
        self.push(r, Op::ConvBwdInput(gy, w), &[gy, w])
    }

    fn conv_bwd_weight(&mut self, gy: Var, x: Var) -> Var {
        let r = tensor::conv_backward_weight(self.value(gy), self.value(x));
        self.push(r, Op::ConvBwdWeight(gy, x), &[gy, x])
    }

    /// Adds a per-channel bias `[C]` to `[C,H,W]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xv = self.val(x);
        let bv = self.val(b);
        let (c, h, w) = xv.chw();
        assert_eq!(bv.shape(), [c]);
        let hw = h * w;
        let mut out = xv.data().to_vec();
        for (ch, plane) in out.chunks_mut(hw).enumerate() {
            let bias = bv.data()[ch];
            plane.iter_mut().for_each(|v| *v += bias);
        }
        self.push(Tensor::new(vec![c, h, w], out), Op::AddBias(x, b), &[x, b])
    }

    /// `[C,H,W] -> [C]`.
    pub fn sum_spatial(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        let (c, h, w) = xv.chw();
        let out = xv.data().chunks(h * w).map(|p| p.iter().copied().sum()).collect();
        self.push(Tensor::new(vec![c], out), Op::SumSpatial(x), &[x])
    }

    /// `[C] -> [C,H,W]`.
    pub fn broadcast_spatial(&mut self, x: Var, h: usize, w: usize) -> Var {
        let xv = self.val(x);
        assert_eq!(xv.shape().len(), 1);
        let c = xv.shape()[0];
        let mut out = Vec::with_capacity(c * h * w);
        for &v in xv.data() {
            out.extend(std::iter::repeat(v).take(h * w));
        }
        self.push(Tensor::new(vec![c, h, w], out), Op::BroadcastSpatial(x), &[x])
    }

    /// `[C,H,W] -> [1,H,W]`.
    pub fn sum_channels(&mut self, x: Var) -> Var {
        let xv = self.val(x);
        let (_, h, w) = xv.chw();
        let mut out = vec![T::zero(); h * w];
        for plane in xv.data().chunks(h * w) {
            out.iter_mut().zip(plane).for_each(|(o, &v)| *o += v);
        }
        self.push(Tensor::new(vec![1, h, w], out), Op::SumChannels(x), &[x])
    }

    /// `[1,H,W] -> [C,H,W]`.
    pub fn broadcast_channels(&mut self, x: Var, c: usize) -> Var {
        let xv = self.val(x);
        let (one, h, w) = xv.chw();
        assert_eq!(one, 1);
        let out = xv.data().repeat(c);
        self.push(Tensor::new(vec![c, h, w], out), Op::BroadcastChannels(x), &[x])
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: T = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::SumAll(x), &[x])
    }

    pub fn broadcast_all(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let v = self.value(x).item();
        self.push(Tensor::full(shape, v), Op::BroadcastAll(x), &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let r = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(r, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let r = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(r, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let r = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(r, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let r = self.value(a).map(|x| x * c);
        self.push(r, Op::Scale(a, c), &[a])
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Var {
        let r = self.value(a).map(|x| x + c);
        self.push(r, Op::AddConst(a, c), &[a])
    }

    fn mask_mul(&mut self, a: Var, mask: Rc<Tensor<T>>) -> Var {
        let r = self.value(a).zip_map(&mask, |x, m| x * m);
        self.push(r, Op::MaskMul(a, mask), &[a])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let mask = self
            .value(x)
            .map(|v| if v > T::zero() { T::one() } else { slope });
        self.mask_mul(x, Rc::new(mask))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let r = self.value(a).map(|x| x.tanh());
        self.push(r, Op::Tanh(a), &[a])
    }

    pub fn powf(&mut self, a: Var, p: T) -> Var {
        let r = self.value(a).map(|x| x.powf(p));
        self.push(r, Op::Powf(a, p), &[a])
    }

    /// Square root whose derivative is taken as zero at zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let r = self.value(a).map(|x| x.sqrt());
        self.push(r, Op::Sqrt(a), &[a])
    }

    fn recip_or_zero(&mut self, a: Var) -> Var {
        let r = self
            .value(a)
            .map(|x| if x == T::zero() { T::zero() } else { x.recip() });
        self.push(r, Op::RecipOrZero(a), &[a])
    }

    /// Bilinear resample of `[C,H,W]` to `[C,out_h,out_w]` (no clamping).
    pub fn resize(&mut self, x: Var, out_h: usize, out_w: usize) -> Var {
        let (_, h, w) = self.value(x).chw();
        let plan = Rc::new(ResizePlan::new(h, w, out_h, out_w));
        self.resize_with(x, plan)
    }

    fn resize_with(&mut self, x: Var, plan: Rc<ResizePlan>) -> Var {
        let xv = self.val(x);
        let (c, h, w) = xv.chw();
        assert_eq!((h, w), (plan.in_h, plan.in_w));
        let out = plan.apply(xv.data(), c);
        self.push(
            Tensor::new(vec![c, plan.out_h, plan.out_w], out),
            Op::Resize(x, plan),
            &[x],
        )
    }

    fn resize_transpose(&mut self, g: Var, plan: Rc<ResizePlan>) -> Var {
        let gv = self.val(g);
        let (c, h, w) = gv.chw();
        assert_eq!((h, w), (plan.out_h, plan.out_w));
        let out = plan.apply_transpose(gv.data(), c);
        self.push(
            Tensor::new(vec![c, plan.in_h, plan.in_w], out),
            Op::ResizeT(g, plan),
            &[g],
        )
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).len();
        let s = self.sum_all(x);
        self.scale(s, T::one() / T::from_usize(n).unwrap())
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Batch normalization with the statistics of the single input
    /// `[C,H,W]`, followed by the affine `gamma`/`beta` `[C]`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Var {
        let (_, h, w) = self.value(x).chw();
        let inv_n = T::one() / T::from_usize(h * w).unwrap();
        let s = self.sum_spatial(x);
        let mean = self.scale(s, inv_n);
        let mean_b = self.broadcast_spatial(mean, h, w);
        let centered = self.sub(x, mean_b);
        let sq = self.mul(centered, centered);
        let sq_sum = self.sum_spatial(sq);
        let var = self.scale(sq_sum, inv_n);
        let var_eps = self.add_const(var, eps);
        let inv_std = self.powf(var_eps, T::lit(-0.5));
        let inv_std_b = self.broadcast_spatial(inv_std, h, w);
        let normed = self.mul(centered, inv_std_b);
        let gamma_b = self.broadcast_spatial(gamma, h, w);
        let scaled = self.mul(normed, gamma_b);
        self.add_bias(scaled, beta)
    }

    /// Gradients of scalar `output` with respect to `wrt`.
    ///
    /// With `create_graph`, the returned nodes stay differentiable; without
    /// it they are detached. Inputs that `output` does not depend on get
    /// `None`.
    pub fn grad(&mut self, output: Var, wrt: &[Var], create_graph: bool) -> Vec<Option<Var>> {
        assert_eq!(self.value(output).len(), 1, "grad needs a scalar output");
        let saved = self.no_grad;
        self.no_grad = !create_graph;
        let mut grads: Vec<Option<Var>> = vec![None; output.0 + 1];
        if self.nodes[output.0].requires_grad {
            let seed = self.constant(Tensor::scalar(T::one()));
            grads[output.0] = Some(seed);
        }
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i] else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            for (parent, pg) in self.backward_rule(Var(i), g) {
                grads[parent.0] = Some(match grads[parent.0] {
                    None => pg,
                    Some(acc) => self.add(acc, pg),
                });
            }
        }
        self.no_grad = saved;
        wrt.iter()
            .map(|v| grads.get(v.0).copied().flatten())
            .collect()
    }

    /// Like [`Tape::grad`] but returns plain tensors (zeros where `output`
    /// does not depend on the input).
    pub fn grad_tensors(&mut self, output: Var, wrt: &[Var]) -> Vec<Tensor<T>> {
        let g = self.grad(output, wrt, false);
        g.iter()
            .zip(wrt)
            .map(|(g, v)| match g {
                Some(g) => self.value(*g).clone(),
                None => Tensor::zeros(self.value(*v).shape().to_vec()),
            })
            .collect()
    }

    fn backward_rule(&mut self, node: Var, g: Var) -> Vec<(Var, Var)> {
        let op = self.nodes[node.0].op.clone();
        let rg = |tape: &Self, v: Var| tape.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::Conv(x, w) => {
                if rg(self, x) {
                    out.push((x, self.conv_bwd_input(g, w)));
                }
                if rg(self, w) {
                    out.push((w, self.conv_bwd_weight(g, x)));
                }
            }
            Op::ConvBwdInput(gy, w) => {
                if rg(self, gy) {
                    out.push((gy, self.conv(g, w)));
                }
                if rg(self, w) {
                    out.push((w, self.conv_bwd_weight(gy, g)));
                }
            }
            Op::ConvBwdWeight(gy, x) => {
                if rg(self, gy) {
                    out.push((gy, self.conv(x, g)));
                }
                if rg(self, x) {
                    out.push((x, self.conv_bwd_input(gy, g)));
                }
            }
            Op::AddBias(x, b) => {
                if rg(self, x) {
                    out.push((x, g));
                }
                if rg(self, b) {
                    out.push((b, self.sum_spatial(g)));
                }
            }
            Op::SumSpatial(x) => {
                let (_, h, w) = self.value(x).chw();
                out.push((x, self.broadcast_spatial(g, h, w)));
            }
            Op::BroadcastSpatial(x) => out.push((x, self.sum_spatial(g))),
            Op::SumChannels(x) => {
                let (c, _, _) = self.value(x).chw();
                out.push((x, self.broadcast_channels(g, c)));
            }
            Op::BroadcastChannels(x) => out.push((x, self.sum_channels(g))),
            Op::SumAll(x) => {
                let shape = self.value(x).shape().to_vec();
                out.push((x, self.broadcast_all(g, shape)));
            }
            Op::BroadcastAll(x) => out.push((x, self.sum_all(g))),
            Op::Add(a, b) => {
                if rg(self, a) {
                    out.push((a, g));
                }
                if rg(self, b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if rg(self, a) {
                    out.push((a, g));
                }
                if rg(self, b) {
                    out.push((b, self.scale(g, -T::one())));
                }
            }
            Op::Mul(a, b) => {
                if rg(self, a) {
                    out.push((a, self.mul(g, b)));
                }
                if rg(self, b) {
                    out.push((b, self.mul(g, a)));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::AddConst(a, _) => out.push((a, g)),
            Op::MaskMul(a, m) => out.push((a, self.mask_mul(g, m))),
            Op::Tanh(a) => {
                let y2 = self.mul(node, node);
                let neg = self.scale(y2, -T::one());
                let d = self.add_const(neg, T::one());
                out.push((a, self.mul(g, d)));
            }
            Op::Powf(a, p) => {
                let pm1 = self.powf(a, p - T::one());
                let d = self.scale(pm1, p);
                out.push((a, self.mul(g, d)));
            }
            Op::Sqrt(a) => {
                let r = self.recip_or_zero(node);
                let gr = self.mul(g, r);
                out.push((a, self.scale(gr, T::lit(0.5))));
            }
            Op::RecipOrZero(a) => {
                let y2 = self.mul(node, node);
                let d = self.scale(y2, -T::one());
                out.push((a, self.mul(g, d)));
            }
            Op::Resize(x, plan) => out.push((x, self.resize_transpose(g, plan))),
            Op::ResizeT(x, plan) => out.push((x, self.resize_with(g, plan))),
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(shape: Vec<usize>, salt: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut s = salt.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
        let data = (0..n)
            .map(|_| {
                s ^= s << 13;
                s ^= s >> 7;
                s ^= s << 17;
                (s % 2001) as f64 / 1000.0 - 1.0
            })
            .collect();
        Tensor::new(shape, data)
    }

    /// Central-difference check of `d f / d input` for a scalar-valued
    /// builder `f`.
    fn check_grad(
        inputs: Vec<Tensor<f64>>,
        f: impl Fn(&mut Tape<f64>, &[Var]) -> Var,
        tol: f64,
    ) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
        let out = f(&mut tape, &vars);
        let analytic = tape.grad_tensors(out, &vars);
        let eval = |ins: &[Tensor<f64>]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone(), true)).collect();
            let o = f(&mut t, &vs);
            t.value(o).item()
        };
        let h = 1e-5;
        for (k, input) in inputs.iter().enumerate() {
            for i in 0..input.len() {
                let mut plus = inputs.clone();
                plus[k].data_mut()[i] += h;
                let mut minus = inputs.clone();
                minus[k].data_mut()[i] -= h;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let an = analytic[k].data()[i];
                assert!(
                    (fd - an).abs() <= tol * (1.0 + fd.abs().max(an.abs())),
                    "input {k}[{i}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn conv_bias_tanh_gradients() {
        check_grad(
            vec![
                pseudo(vec![2, 4, 5], 1),
                pseudo(vec![3, 2, 3, 3], 2),
                pseudo(vec![3], 3),
            ],
            |t, v| {
                let y = t.conv(v[0], v[1]);
                let y = t.add_bias(y, v[2]);
                let y = t.tanh(y);
                let y = t.mul(y, y);
                t.mean_all(y)
            },
            1e-6,
        );
    }

    #[test]
    fn batch_norm_and_resize_gradients() {
        check_grad(
            vec![
                pseudo(vec![2, 3, 4], 4),
                pseudo(vec![2], 5),
                pseudo(vec![2], 6),
                pseudo(vec![2, 5, 7], 7),
            ],
            |t, v| {
                let y = t.batch_norm(v[0], v[1], v[2], 1e-5);
                let y = t.resize(y, 5, 7);
                let y = t.mul(y, v[3]);
                let y = t.sum_all(y);
                t.powf(y, 2.0)
            },
            1e-6,
        );
    }

    #[test]
    fn channel_broadcast_gradients() {
        check_grad(
            vec![pseudo(vec![1, 3, 3], 8), pseudo(vec![4, 3, 3], 9)],
            |t, v| {
                let b = t.broadcast_channels(v[0], 4);
                let y = t.mul(b, v[1]);
                let y = t.sum_channels(y);
                let y = t.mul(y, y);
                t.sum_all(y)
            },
            1e-6,
        );
    }

    /// Second-order: gradient of ||d f / d x||^2 with respect to the
    /// weights, checked against finite differences of a first-order
    /// quantity.
    #[test]
    fn double_backward_through_conv_stack() {
        let inputs = vec![
            pseudo(vec![2, 4, 4], 10),
            pseudo(vec![3, 2, 3, 3], 11),
            pseudo(vec![1, 3, 3, 3], 12),
        ];
        check_grad(
            inputs,
            |t, v| {
                let h = t.conv(v[0], v[1]);
                let h = t.leaky_relu(h, 0.05);
                let h = t.tanh(h);
                let s = t.conv(h, v[2]);
                let s = t.sum_all(s);
                let g = t.grad(s, &[v[0]], true)[0].unwrap();
                let g2 = t.mul(g, g);
                let n = t.sum_all(g2);
                let n = t.sqrt(n);
                let d = t.add_const(n, -1.0);
                t.mul(d, d)
            },
            1e-5,
        );
    }

    #[test]
    fn unreachable_input_has_no_grad() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(2.0f64), true);
        let b = t.leaf(Tensor::scalar(3.0f64), true);
        let y = t.mul(a, a);
        let g = t.grad(y, &[a, b], false);
        assert_eq!(t.value(g[0].unwrap()).item(), 4.0);
        assert!(g[1].is_none());
    }

    #[test]
    fn sqrt_of_zero_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Tensor::scalar(0.0f64), true);
        let y = t.sqrt(a);
        let g = t.grad(y, &[a], false);
        assert_eq!(t.value(g[0].unwrap()).item(), 0.0);
    }
}
