//! Minimal reverse-mode autodiff over dense tensors.
//!
//! A [`Graph`] is a tape: every operation eagerly computes its forward value
//! and records what backward needs (inputs, saved activations). [`Graph::backward`]
//! walks the tape once in reverse, accumulating gradients onto the
//! `requires_grad` leaves. The instruction set is exactly what the counting
//! network uses — 2-D cross-correlation, ReLU/sigmoid, max-pool, bilinear 2x
//! upsampling, channel concat, pointwise arithmetic, and two reductions.
//!
//! Tensors are dense row-major buffers. Image-like tensors are channels-first
//! `[C, H, W]`; reductions produce rank-0 scalars. There is no broadcasting.
//!
//! A graph and its tensors belong to one thread for the duration of a
//! forward/backward pass; data parallelism uses independent graphs that share
//! read-only parameter values.

mod adam;
mod gradcheck;
pub mod kernels;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{gradcheck, GradCheckReport};

use crate::error::{Error, Result};

/// Element type of the engine: f32 for training, f64 for gradient checking.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    const BITS: u32;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Scalar for f32 {
    const BITS: u32 = 32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// A named parameter tensor, owned outside any graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, values: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Param { name: name.into(), shape, values }
    }
}

/// Handle to a tensor inside one [`Graph`].
#[derive(Copy, Clone, PartialEq, Eq, Debug, Hash)]
pub struct TensorId(usize);

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    /// inputs: [x, weight, bias]
    Conv2d { stride: usize, padding: usize, k: usize },
    Relu,
    Sigmoid,
    /// argmax holds, per output cell, the flat input index the max came from.
    MaxPool2d { argmax: Vec<u32> },
    Upsample2x { preserve_integral: bool },
    /// inputs: [a, b]; a's channels come first.
    ConcatChannels,
    Add,
    Sub,
    Mul,
    Log,
    Sqrt,
    Scale(S),
    ClampMin(S),
    SumAll,
    FrobeniusNorm,
}

#[derive(Clone, Debug)]
struct Node<S> {
    op: Op<S>,
    inputs: Vec<TensorId>,
    shape: Vec<usize>,
    values: Vec<S>,
    /// Persistent gradient accumulator; populated on `requires_grad` leaves
    /// by [`Graph::backward`].
    grad: Option<Vec<S>>,
    requires_grad: bool,
}

/// The tape. Operations append nodes; values are computed eagerly so shape
/// and domain errors surface at the call site.
#[derive(Clone, Debug, Default)]
pub struct Graph<S: Scalar> {
    nodes: Vec<Node<S>>,
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Expect a `[C, H, W]` shape.
fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::Shape(format!("{what}: expected [C,H,W], got {other:?}"))),
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn values(&self, id: TensorId) -> &[S] {
        &self.nodes[id.0].values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, id: TensorId) -> Option<&[S]> {
        self.nodes[id.0].grad.as_deref()
    }

    /// Value of a rank-0 tensor.
    pub fn scalar_value(&self, id: TensorId) -> S {
        debug_assert_eq!(numel(&self.nodes[id.0].shape), 1);
        self.nodes[id.0].values[0]
    }

    /// Clear persistent leaf gradients. Without this, repeated backward
    /// passes accumulate.
    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, op: Op<S>, inputs: Vec<TensorId>, shape: Vec<usize>, values: Vec<S>) -> TensorId {
        debug_assert_eq!(numel(&shape), values.len());
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { op, inputs, shape, values, grad: None, requires_grad });
        TensorId(self.nodes.len() - 1)
    }

    // ── Leaves ───────────────────────────────────────────────────────────

    pub fn leaf(&mut self, values: Vec<S>, shape: Vec<usize>, requires_grad: bool) -> Result<TensorId> {
        if numel(&shape) != values.len() {
            return Err(Error::Shape(format!(
                "leaf: shape {:?} implies {} values, got {}",
                shape,
                numel(&shape),
                values.len()
            )));
        }
        let id = self.push(Op::Leaf, vec![], shape, values);
        self.nodes[id.0].requires_grad = requires_grad;
        Ok(id)
    }

    pub fn constant_scalar(&mut self, v: S) -> TensorId {
        self.leaf(vec![v], vec![], false).expect("scalar leaf")
    }

    // ── Network primitives ───────────────────────────────────────────────

    /// 2-D cross-correlation with bias: input `[Cin,H,W]`, weight
    /// `[Cout,Cin,k,k]` (k odd), bias `[Cout]`.
    pub fn conv2d(
        &mut self,
        x: TensorId,
        weight: TensorId,
        bias: TensorId,
        stride: usize,
        padding: usize,
    ) -> Result<TensorId> {
        let (cin, h, w) = chw(self.shape(x), "conv2d input")?;
        let wshape = self.shape(weight).to_vec();
        let (cout, wcin, kh, kw) = match wshape.as_slice() {
            [a, b, c, d] => (*a, *b, *c, *d),
            other => return Err(Error::Shape(format!("conv2d weight: expected [Cout,Cin,k,k], got {other:?}"))),
        };
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!("conv2d weight: kernel must be square with odd extent, got {kh}x{kw}")));
        }
        if wcin != cin {
            return Err(Error::Shape(format!("conv2d: input has {cin} channels but weight expects {wcin}")));
        }
        if self.shape(bias) != [cout] {
            return Err(Error::Shape(format!("conv2d bias: expected [{cout}], got {:?}", self.shape(bias))));
        }
        if stride == 0 {
            return Err(Error::Shape("conv2d: stride must be >= 1".into()));
        }
        let oh = kernels::conv_out_extent(h, kh, stride, padding);
        let ow = kernels::conv_out_extent(w, kw, stride, padding);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) if a > 0 && b > 0 => (a, b),
            _ => {
                return Err(Error::Shape(format!(
                    "conv2d: non-positive output extent for input {h}x{w}, kernel {kh}, stride {stride}, padding {padding}"
                )))
            }
        };
        let mut out = vec![S::zero(); cout * oh * ow];
        kernels::conv2d_forward(
            self.values(x),
            cin,
            h,
            w,
            self.values(weight),
            cout,
            kh,
            self.values(bias),
            stride,
            padding,
            &mut out,
            oh,
            ow,
        );
        Ok(self.push(
            Op::Conv2d { stride, padding, k: kh },
            vec![x, weight, bias],
            vec![cout, oh, ow],
            out,
        ))
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let values = self.values(x).iter().map(|&v| v.max(S::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Relu, vec![x], shape, values)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let values = self
            .values(x)
            .iter()
            .map(|&v| {
                // Split form avoids overflow of exp for large |v|.
                if v >= S::zero() {
                    S::one() / (S::one() + (-v).exp())
                } else {
                    let e = v.exp();
                    e / (S::one() + e)
                }
            })
            .collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Sigmoid, vec![x], shape, values)
    }

    /// Non-overlapping max pooling; gradient routes to the first maximum in
    /// row-major order within each window.
    pub fn maxpool2d(&mut self, x: TensorId, window: usize, stride: usize) -> Result<TensorId> {
        let (c, h, w) = chw(self.shape(x), "maxpool2d input")?;
        if window == 0 || stride == 0 {
            return Err(Error::Shape("maxpool2d: window and stride must be >= 1".into()));
        }
        if h % stride != 0 || w % stride != 0 {
            return Err(Error::Shape(format!(
                "maxpool2d: extents {h}x{w} not divisible by stride {stride}"
            )));
        }
        let (oh, ow) = (h / stride, w / stride);
        let mut out = vec![S::zero(); c * oh * ow];
        let mut argmax = Vec::new();
        kernels::maxpool2d_forward(self.values(x), c, h, w, window, stride, &mut out, &mut argmax);
        Ok(self.push(Op::MaxPool2d { argmax }, vec![x], vec![c, oh, ow], out))
    }

    /// Bilinear 2x upsampling with half-pixel centers and edge clamping.
    /// With `preserve_integral` the output is scaled by 1/4 so its pixel sum
    /// matches the input's.
    pub fn bilinear_upsample2x(&mut self, x: TensorId, preserve_integral: bool) -> Result<TensorId> {
        let (c, h, w) = chw(self.shape(x), "bilinear_upsample2x input")?;
        if h == 0 || w == 0 {
            return Err(Error::Shape("bilinear_upsample2x: empty spatial extent".into()));
        }
        let mut out = vec![S::zero(); c * 4 * h * w];
        kernels::upsample2x_forward(self.values(x), c, h, w, preserve_integral, &mut out);
        Ok(self.push(Op::Upsample2x { preserve_integral }, vec![x], vec![c, 2 * h, 2 * w], out))
    }

    /// Stack `a`'s channels before `b`'s. Spatial extents must match.
    pub fn concat_channels(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ca, ha, wa) = chw(self.shape(a), "concat_channels lhs")?;
        let (cb, hb, wb) = chw(self.shape(b), "concat_channels rhs")?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Shape(format!(
                "concat_channels: spatial mismatch {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut values = Vec::with_capacity((ca + cb) * ha * wa);
        values.extend_from_slice(self.values(a));
        values.extend_from_slice(self.values(b));
        Ok(self.push(Op::ConcatChannels, vec![a, b], vec![ca + cb, ha, wa], values))
    }

    // ── Pointwise and reductions ─────────────────────────────────────────

    fn binary(&mut self, a: TensorId, b: TensorId, op: Op<S>, f: impl Fn(S, S) -> S) -> Result<TensorId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "pointwise: shape mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let values = self
            .values(a)
            .iter()
            .zip(self.values(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, vec![a, b], shape, values))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    /// Natural log; requires strictly positive input.
    pub fn log(&mut self, x: TensorId) -> Result<TensorId> {
        if let Some(pos) = self.values(x).iter().position(|v| *v <= S::zero()) {
            return Err(Error::Domain(format!(
                "log: non-positive value {} at flat index {pos}",
                self.values(x)[pos]
            )));
        }
        let values = self.values(x).iter().map(|&v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Log, vec![x], shape, values))
    }

    pub fn sqrt(&mut self, x: TensorId) -> Result<TensorId> {
        if let Some(pos) = self.values(x).iter().position(|v| *v < S::zero()) {
            return Err(Error::Domain(format!(
                "sqrt: negative value {} at flat index {pos}",
                self.values(x)[pos]
            )));
        }
        let values = self.values(x).iter().map(|&v| v.sqrt()).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push(Op::Sqrt, vec![x], shape, values))
    }

    pub fn scale(&mut self, x: TensorId, c: S) -> TensorId {
        let values = self.values(x).iter().map(|&v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale(c), vec![x], shape, values)
    }

    /// `max(x, floor)` elementwise; gradient is zero where the floor is active.
    pub fn clamp_min(&mut self, x: TensorId, floor: S) -> TensorId {
        let values = self.values(x).iter().map(|&v| v.max(floor)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Op::ClampMin(floor), vec![x], shape, values)
    }

    pub fn sum_all(&mut self, x: TensorId) -> TensorId {
        let mut acc = S::zero();
        for &v in self.values(x) {
            acc = acc + v;
        }
        self.push(Op::SumAll, vec![x], vec![], vec![acc])
    }

    /// `sqrt(sum(x^2))`, a rank-0 result.
    pub fn frobenius_norm(&mut self, x: TensorId) -> TensorId {
        let mut acc = S::zero();
        for &v in self.values(x) {
            acc = acc + v * v;
        }
        self.push(Op::FrobeniusNorm, vec![x], vec![], vec![acc.sqrt()])
    }

    // ── Backward ─────────────────────────────────────────────────────────

    /// Reverse-mode pass from a scalar root. Gradients of `requires_grad`
    /// leaves are accumulated into their persistent slots; calling backward
    /// again without [`Graph::zero_grads`] keeps accumulating.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        if numel(&self.nodes[root.0].shape) != 1 {
            return Err(Error::Usage(format!(
                "backward: root must be a scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        let mut pass: Vec<Option<Vec<S>>> = vec![None; self.nodes.len()];
        pass[root.0] = Some(vec![S::one()]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                pass[i] = None;
                continue;
            }
            let Some(gout) = pass[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Leaf => {
                    let slot = self.nodes[i].grad.get_or_insert_with(|| vec![S::zero(); gout.len()]);
                    for (d, g) in slot.iter_mut().zip(gout.iter()) {
                        *d = *d + *g;
                    }
                }
                _ => self.backprop_node(i, &gout, &mut pass),
            }
        }
        Ok(())
    }

    /// Compute the contribution of node `i` to each of its inputs and add it
    /// to the pass-local accumulators.
    fn backprop_node(&self, i: usize, gout: &[S], pass: &mut [Option<Vec<S>>]) {
        let node = &self.nodes[i];
        let ins = &node.inputs;
        let needs = |j: usize| self.nodes[ins[j].0].requires_grad;
        match &node.op {
            Op::Leaf => unreachable!("leaves handled by backward"),
            Op::Conv2d { stride, padding, k } => {
                let (cin, h, w) = match self.nodes[ins[0].0].shape.as_slice() {
                    [c, h, w] => (*c, *h, *w),
                    _ => unreachable!(),
                };
                let cout = node.shape[0];
                let (oh, ow) = (node.shape[1], node.shape[2]);
                let mut gx = needs(0).then(|| vec![S::zero(); cin * h * w]);
                let mut gw = needs(1).then(|| vec![S::zero(); cout * cin * k * k]);
                let mut gb = needs(2).then(|| vec![S::zero(); cout]);
                kernels::conv2d_backward(
                    &self.nodes[ins[0].0].values,
                    cin,
                    h,
                    w,
                    &self.nodes[ins[1].0].values,
                    cout,
                    *k,
                    *stride,
                    *padding,
                    gout,
                    oh,
                    ow,
                    gx.as_deref_mut(),
                    gw.as_deref_mut(),
                    gb.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    accumulate(pass, ins[0], gx);
                }
                if let Some(gw) = gw {
                    accumulate(pass, ins[1], gw);
                }
                if let Some(gb) = gb {
                    accumulate(pass, ins[2], gb);
                }
            }
            Op::Relu => {
                let xv = &self.nodes[ins[0].0].values;
                let g = gout
                    .iter()
                    .zip(xv.iter())
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                accumulate(pass, ins[0], g);
            }
            Op::Sigmoid => {
                let g = gout
                    .iter()
                    .zip(node.values.iter())
                    .map(|(&g, &y)| g * y * (S::one() - y))
                    .collect();
                accumulate(pass, ins[0], g);
            }
            Op::MaxPool2d { argmax } => {
                let mut gx = vec![S::zero(); self.nodes[ins[0].0].values.len()];
                for (j, &src) in argmax.iter().enumerate() {
                    gx[src as usize] = gx[src as usize] + gout[j];
                }
                accumulate(pass, ins[0], gx);
            }
            Op::Upsample2x { preserve_integral } => {
                let (c, h, w) = match self.nodes[ins[0].0].shape.as_slice() {
                    [c, h, w] => (*c, *h, *w),
                    _ => unreachable!(),
                };
                let mut gx = vec![S::zero(); c * h * w];
                kernels::upsample2x_backward(gout, c, h, w, *preserve_integral, &mut gx);
                accumulate(pass, ins[0], gx);
            }
            Op::ConcatChannels => {
                let na = self.nodes[ins[0].0].values.len();
                if needs(0) {
                    accumulate(pass, ins[0], gout[..na].to_vec());
                }
                if needs(1) {
                    accumulate(pass, ins[1], gout[na..].to_vec());
                }
            }
            Op::Add => {
                if needs(0) {
                    accumulate(pass, ins[0], gout.to_vec());
                }
                if needs(1) {
                    accumulate(pass, ins[1], gout.to_vec());
                }
            }
            Op::Sub => {
                if needs(0) {
                    accumulate(pass, ins[0], gout.to_vec());
                }
                if needs(1) {
                    accumulate(pass, ins[1], gout.iter().map(|&g| -g).collect());
                }
            }
            Op::Mul => {
                if needs(0) {
                    let vb = &self.nodes[ins[1].0].values;
                    accumulate(pass, ins[0], gout.iter().zip(vb.iter()).map(|(&g, &b)| g * b).collect());
                }
                if needs(1) {
                    let va = &self.nodes[ins[0].0].values;
                    accumulate(pass, ins[1], gout.iter().zip(va.iter()).map(|(&g, &a)| g * a).collect());
                }
            }
            Op::Log => {
                let xv = &self.nodes[ins[0].0].values;
                accumulate(pass, ins[0], gout.iter().zip(xv.iter()).map(|(&g, &x)| g / x).collect());
            }
            Op::Sqrt => {
                let two = S::from_f64(2.0);
                let g = gout
                    .iter()
                    .zip(node.values.iter())
                    .map(|(&g, &y)| if y > S::zero() { g / (two * y) } else { S::zero() })
                    .collect();
                accumulate(pass, ins[0], g);
            }
            Op::Scale(c) => {
                let c = *c;
                accumulate(pass, ins[0], gout.iter().map(|&g| g * c).collect());
            }
            Op::ClampMin(floor) => {
                let floor = *floor;
                let xv = &self.nodes[ins[0].0].values;
                let g = gout
                    .iter()
                    .zip(xv.iter())
                    .map(|(&g, &x)| if x >= floor { g } else { S::zero() })
                    .collect();
                accumulate(pass, ins[0], g);
            }
            Op::SumAll => {
                let g = gout[0];
                let n = self.nodes[ins[0].0].values.len();
                accumulate(pass, ins[0], vec![g; n]);
            }
            Op::FrobeniusNorm => {
                // d||x||/dx = x/||x||; subgradient 0 at the origin.
                let norm = node.values[0];
                let xv = &self.nodes[ins[0].0].values;
                let g = if norm > S::zero() {
                    let s = gout[0] / norm;
                    xv.iter().map(|&x| x * s).collect()
                } else {
                    vec![S::zero(); xv.len()]
                };
                accumulate(pass, ins[0], g);
            }
        }
    }
}

/// Add `contribution` into the pass-local slot for `id`.
fn accumulate<S: Scalar>(pass: &mut [Option<Vec<S>>], id: TensorId, contribution: Vec<S>) {
    match &mut pass[id.0] {
        Some(slot) => {
            for (d, g) in slot.iter_mut().zip(contribution.iter()) {
                *d = *d + *g;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}
