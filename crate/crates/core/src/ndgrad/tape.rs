use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::kernels::{self, ConvGeom, ConvGrads};
use super::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Right-hand side of a binary elementwise op.
#[derive(Clone, Copy, Debug)]
pub enum Operand<S> {
    /// Same shape as the left side, or a single element broadcast over it.
    Var(Var),
    Scalar(S),
}

#[derive(Clone, Copy, Debug)]
pub enum Elementwise<S> {
    Add(Operand<S>),
    Sub(Operand<S>),
    Mul(Operand<S>),
    Scale(S),
    Relu,
    Silu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    L1,
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnKind {
    Relu,
    Silu,
    Sigmoid,
}

#[derive(Clone, Debug)]
enum Op<S> {
    Leaf,
    Conv2d { input: Var, kernel: Var, bias: Var, geom: ConvGeom, n: usize },
    Binary { kind: BinKind, a: Var, b: Var, broadcast: bool },
    WithScalar { kind: BinKind, a: Var, s: S },
    Unary { kind: UnKind, a: Var },
    ChannelBias { x: Var, bias: Var },
    Linear { x: Var, w: Var, b: Var },
    AvgPool2 { a: Var },
    Upsample2 { a: Var },
    Concat { a: Var, b: Var },
    Sum { a: Var },
    Mean { a: Var },
    Loss { kind: LossKind, pred: Var, target: Var },
}

struct Node<S> {
    value: Tensor<S>,
    requires_grad: bool,
    grad: Option<Tensor<S>>,
    op: Op<S>,
}

/// Records a computation for reverse-mode differentiation.
///
/// Leaves that require gradients carry a gradient buffer from creation;
/// [`Tape::backward`] adds into those buffers, so repeated calls accumulate
/// until [`Tape::zero_grad`].
pub struct Tape<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        let y = e / (S::one() + e);
        if y.is_subnormal() {
            S::zero()
        } else {
            y
        }
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        let grad = requires_grad.then(|| Tensor::zeros(value.shape()));
        self.nodes.push(Node { value, requires_grad, grad, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, present iff it requires grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor<S>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            if let Some(g) = node.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v = S::zero());
            }
        }
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, grad: None, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Zero-padded cross-correlation of `[N,Cin,H,W]` with `[Cout,Cin,kh,kw]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize, padding: usize) -> Result<Var> {
        let (is, ks, bs) = (self.shape(input), self.shape(kernel), self.shape(bias));
        if is.len() != 4 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::shape(format!(
                "conv2d expects input [N,C,H,W], kernel [O,C,kh,kw], bias [O]; got {is:?}, {ks:?}, {bs:?}"
            )));
        }
        if ks[1] != is[1] || bs[0] != ks[0] {
            return Err(Error::shape(format!(
                "conv2d channel mismatch: input {is:?}, kernel {ks:?}, bias {bs:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::param("conv2d stride must be at least 1"));
        }
        let (hp, wp) = (is[2] + 2 * padding, is[3] + 2 * padding);
        if ks[2] > hp || ks[3] > wp {
            return Err(Error::shape(format!(
                "conv2d kernel {}x{} larger than padded input {}x{}",
                ks[2], ks[3], hp, wp
            )));
        }
        let geom = ConvGeom {
            cin: is[1],
            h: is[2],
            w: is[3],
            cout: ks[0],
            kh: ks[2],
            kw: ks[3],
            stride,
            pad: padding,
            ho: (hp - ks[2]) / stride + 1,
            wo: (wp - ks[3]) / stride + 1,
        };
        let n = is[0];
        let out = kernels::conv2d_forward(
            &geom,
            n,
            self.value(input).data(),
            self.value(kernel).data(),
            self.value(bias).data(),
        );
        let value = Tensor::new(&[n, geom.cout, geom.ho, geom.wo], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, bias, geom, n }, &[input, kernel, bias]))
    }

    pub fn elementwise(&mut self, a: Var, op: Elementwise<S>) -> Result<Var> {
        match op {
            Elementwise::Add(rhs) => self.binary(BinKind::Add, a, rhs),
            Elementwise::Sub(rhs) => self.binary(BinKind::Sub, a, rhs),
            Elementwise::Mul(rhs) => self.binary(BinKind::Mul, a, rhs),
            Elementwise::Scale(s) => self.binary(BinKind::Mul, a, Operand::Scalar(s)),
            Elementwise::Relu => Ok(self.unary(UnKind::Relu, a)),
            Elementwise::Silu => Ok(self.unary(UnKind::Silu, a)),
            Elementwise::Sigmoid => Ok(self.unary(UnKind::Sigmoid, a)),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Add, a, Operand::Var(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Sub, a, Operand::Var(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinKind::Mul, a, Operand::Var(b))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Var {
        self.scalar_op(BinKind::Mul, a, s)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(UnKind::Relu, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(UnKind::Silu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(UnKind::Sigmoid, a)
    }

    fn binary(&mut self, kind: BinKind, a: Var, rhs: Operand<S>) -> Result<Var> {
        let b = match rhs {
            Operand::Scalar(s) => return Ok(self.scalar_op(kind, a, s)),
            Operand::Var(b) => b,
        };
        let (av, bv) = (self.value(a), self.value(b));
        let broadcast = if av.shape() == bv.shape() {
            false
        } else if bv.numel() == 1 {
            true
        } else {
            return Err(Error::shape(format!(
                "elementwise op on incompatible shapes {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        let f = |x: S, y: S| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let data: Vec<S> = if broadcast {
            let y = bv.data()[0];
            av.data().iter().map(|&x| f(x, y)).collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(av.shape(), data)?;
        Ok(self.push(value, Op::Binary { kind, a, b, broadcast }, &[a, b]))
    }

    fn scalar_op(&mut self, kind: BinKind, a: Var, s: S) -> Var {
        let value = self.value(a).map(|x| match kind {
            BinKind::Add => x + s,
            BinKind::Sub => x - s,
            BinKind::Mul => x * s,
        });
        self.push(value, Op::WithScalar { kind, a, s }, &[a])
    }

    fn unary(&mut self, kind: UnKind, a: Var) -> Var {
        let value = self.value(a).map(|x| match kind {
            UnKind::Relu => {
                if x > S::zero() {
                    x
                } else {
                    S::zero()
                }
            }
            UnKind::Silu => x * sigmoid(x),
            UnKind::Sigmoid => sigmoid(x),
        });
        self.push(value, Op::Unary { kind, a }, &[a])
    }

    /// Adds a per-sample, per-channel bias `[N,C]` to `[N,C,H,W]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xs, bs) = (self.shape(x), self.shape(bias));
        if xs.len() != 4 || bs != [xs[0], xs[1]] {
            return Err(Error::shape(format!("channel bias {bs:?} does not match activation {xs:?}")));
        }
        let plane = xs[2] * xs[3];
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for (i, chunk) in value.data_mut().chunks_mut(plane).enumerate() {
            let bv = b[i];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.push(value, Op::ChannelBias { x, bias }, &[x, bias]))
    }

    /// `x[N,in] · w[out,in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (self.shape(x), self.shape(w), self.shape(b));
        if xs.len() != 2 || ws.len() != 2 || ws[1] != xs[1] || bs != [ws[0]] {
            return Err(Error::shape(format!("linear: x {xs:?}, w {ws:?}, b {bs:?}")));
        }
        let (n, fin, fout) = (xs[0], xs[1], ws[0]);
        let (xd, wd, bd) = (self.value(x).data(), self.value(w).data(), self.value(b).data());
        let mut out = Vec::with_capacity(n * fout);
        for r in 0..n {
            let xr = &xd[r * fin..(r + 1) * fin];
            for o in 0..fout {
                let wr = &wd[o * fin..(o + 1) * fin];
                let acc = xr.iter().zip(wr).fold(S::zero(), |acc, (&a, &c)| acc + a * c);
                out.push(acc + bd[o]);
            }
        }
        let value = Tensor::new(&[n, fout], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, &[x, w, b]))
    }

    /// 2×2 average pooling with stride 2.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs [N,C,H,W] with even H and W, got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(a).data();
        let quarter = S::lit(0.25);
        let mut out = Vec::with_capacity(s[0] * s[1] * ho * wo);
        for plane in src.chunks(h * w) {
            for y in 0..ho {
                for x in 0..wo {
                    let i = 2 * y * w + 2 * x;
                    out.push((plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]) * quarter);
                }
            }
        }
        let value = Tensor::new(&[s[0], s[1], ho, wo], out)?;
        Ok(self.push(value, Op::AvgPool2 { a }, &[a]))
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 4 {
            return Err(Error::shape(format!("upsample2 needs [N,C,H,W], got {s:?}")));
        }
        let (h, w) = (s[2], s[3]);
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(src.len() * 4);
        for plane in src.chunks(h * w) {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    out.push(plane[(y / 2) * w + x / 2]);
                }
            }
        }
        let value = Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.push(value, Op::Upsample2 { a }, &[a]))
    }

    /// Concatenates two `[N,C,H,W]` tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 4 || sb.len() != 4 || sa[0] != sb[0] || sa[2..] != sb[2..] {
            return Err(Error::shape(format!("cannot concatenate {sa:?} and {sb:?} along channels")));
        }
        let (n, ca, cb) = (sa[0], sa[1], sb[1]);
        let plane = sa[2] * sa[3];
        let shape = [n, ca + cb, sa[2], sa[3]];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(da.len() + db.len());
        for i in 0..n {
            out.extend_from_slice(&da[i * ca * plane..(i + 1) * ca * plane]);
            out.extend_from_slice(&db[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Concat { a, b }, &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().fold(S::zero(), |acc, &v| acc + v);
        self.push(Tensor::scalar(s), Op::Sum { a }, &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().fold(S::zero(), |acc, &v| acc + v);
        let m = s / S::lit(t.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { a }, &[a])
    }

    /// Mean absolute (L1) or mean squared (L2) difference over all elements.
    pub fn loss(&mut self, kind: LossKind, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(Error::shape(format!(
                "loss between mismatched shapes {:?} and {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let acc = p.data().iter().zip(t.data()).fold(S::zero(), |acc, (&a, &b)| {
            let d = a - b;
            acc + match kind {
                LossKind::L1 => d.abs(),
                LossKind::L2 => d * d,
            }
        });
        let value = Tensor::scalar(acc / S::lit(p.numel() as f64));
        Ok(self.push(value, Op::Loss { kind, pred, target }, &[pred, target]))
    }

    /// Propagates d(loss)/d(node) back to every leaf that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<S>>> = vec![None; loss.0 + 1];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![S::one()]);
        }
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                op => self.propagate(op, &node.value, &g, &mut grads),
            }
            let node = &mut self.nodes[i];
            if let (Op::Leaf, Some(acc)) = (&node.op, node.grad.as_mut()) {
                for (a, &v) in acc.data_mut().iter_mut().zip(&g) {
                    *a += v;
                }
            }
        }
        Ok(())
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<S>>], v: Var) -> Option<&'g mut Vec<S>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![S::zero(); n]))
    }

    fn propagate(&self, op: &Op<S>, out: &Tensor<S>, g: &[S], grads: &mut [Option<Vec<S>>]) {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { input, kernel, bias, ref geom, n } => {
                // Three distinct nodes, so the slots are disjoint; collect them
                // one at a time to satisfy the borrow checker.
                let mut gi = self.slot(grads, input).map(std::mem::take);
                let mut gk = self.slot(grads, kernel).map(std::mem::take);
                let mut gb = self.slot(grads, bias).map(std::mem::take);
                kernels::conv2d_backward(
                    geom,
                    n,
                    self.value(input).data(),
                    self.value(kernel).data(),
                    g,
                    ConvGrads {
                        input: gi.as_deref_mut(),
                        kernel: gk.as_deref_mut(),
                        bias: gb.as_deref_mut(),
                    },
                );
                for (v, buf) in [(input, gi), (kernel, gk), (bias, gb)] {
                    if let Some(buf) = buf {
                        grads[v.0] = Some(buf);
                    }
                }
            }
            Op::Binary { kind, a, b, broadcast } => {
                let (av, bv) = (self.value(a).data(), self.value(b).data());
                let bval = |i: usize| if broadcast { bv[0] } else { bv[i] };
                if let Some(ga) = self.slot(grads, a) {
                    for (i, acc) in ga.iter_mut().enumerate() {
                        *acc += match kind {
                            BinKind::Add | BinKind::Sub => g[i],
                            BinKind::Mul => g[i] * bval(i),
                        };
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for (i, &gi) in g.iter().enumerate() {
                        let d = match kind {
                            BinKind::Add => gi,
                            BinKind::Sub => -gi,
                            BinKind::Mul => gi * av[i],
                        };
                        gb[if broadcast { 0 } else { i }] += d;
                    }
                }
            }
            Op::WithScalar { kind, a, s } => {
                if let Some(ga) = self.slot(grads, a) {
                    for (acc, &gi) in ga.iter_mut().zip(g) {
                        *acc += match kind {
                            BinKind::Add | BinKind::Sub => gi,
                            BinKind::Mul => gi * s,
                        };
                    }
                }
            }
            Op::Unary { kind, a } => {
                let x = self.value(a).data();
                let y = out.data();
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..ga.len() {
                        let d = match kind {
                            UnKind::Relu => {
                                if x[i] > S::zero() {
                                    S::one()
                                } else {
                                    S::zero()
                                }
                            }
                            UnKind::Silu => {
                                let s = sigmoid(x[i]);
                                s + x[i] * s * (S::one() - s)
                            }
                            UnKind::Sigmoid => y[i] * (S::one() - y[i]),
                        };
                        ga[i] += g[i] * d;
                    }
                }
            }
            Op::ChannelBias { x, bias } => {
                let s = self.value(x).shape();
                let plane = s[2] * s[3];
                if let Some(gx) = self.slot(grads, x) {
                    gx.iter_mut().zip(g).for_each(|(a, &v)| *a += v);
                }
                if let Some(gb) = self.slot(grads, bias) {
                    for (acc, chunk) in gb.iter_mut().zip(g.chunks(plane)) {
                        for &v in chunk {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = (self.value(x).shape()[0], self.value(x).shape()[1]);
                let fout = self.value(w).shape()[0];
                let (xd, wd) = (self.value(x).data(), self.value(w).data());
                if let Some(gx) = self.slot(grads, x) {
                    for r in 0..n {
                        for o in 0..fout {
                            let gv = g[r * fout + o];
                            for i in 0..fin {
                                gx[r * fin + i] += gv * wd[o * fin + i];
                            }
                        }
                    }
                }
                if let Some(gw) = self.slot(grads, w) {
                    for r in 0..n {
                        for o in 0..fout {
                            let gv = g[r * fout + o];
                            for i in 0..fin {
                                gw[o * fin + i] += gv * xd[r * fin + i];
                            }
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for r in 0..n {
                        for o in 0..fout {
                            gb[o] += g[r * fout + o];
                        }
                    }
                }
            }
            Op::AvgPool2 { a } => {
                let s = self.value(a).shape();
                let (h, w) = (s[2], s[3]);
                let (ho, wo) = (h / 2, w / 2);
                let quarter = S::lit(0.25);
                if let Some(ga) = self.slot(grads, a) {
                    for (pi, plane) in ga.chunks_mut(h * w).enumerate() {
                        let go = &g[pi * ho * wo..(pi + 1) * ho * wo];
                        for y in 0..ho {
                            for x in 0..wo {
                                let v = go[y * wo + x] * quarter;
                                let i = 2 * y * w + 2 * x;
                                plane[i] += v;
                                plane[i + 1] += v;
                                plane[i + w] += v;
                                plane[i + w + 1] += v;
                            }
                        }
                    }
                }
            }
            Op::Upsample2 { a } => {
                let s = self.value(a).shape();
                let (h, w) = (s[2], s[3]);
                if let Some(ga) = self.slot(grads, a) {
                    for (pi, plane) in ga.chunks_mut(h * w).enumerate() {
                        let go = &g[pi * 4 * h * w..(pi + 1) * 4 * h * w];
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                plane[(y / 2) * w + x / 2] += go[y * 2 * w + x];
                            }
                        }
                    }
                }
            }
            Op::Concat { a, b } => {
                let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
                let plane = sa[2] * sa[3];
                let (n, ca, cb) = (sa[0], sa[1], sb[1]);
                let row = (ca + cb) * plane;
                if let Some(ga) = self.slot(grads, a) {
                    for i in 0..n {
                        let src = &g[i * row..i * row + ca * plane];
                        for (acc, &v) in ga[i * ca * plane..(i + 1) * ca * plane].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
                if let Some(gb) = self.slot(grads, b) {
                    for i in 0..n {
                        let src = &g[i * row + ca * plane..(i + 1) * row];
                        for (acc, &v) in gb[i * cb * plane..(i + 1) * cb * plane].iter_mut().zip(src) {
                            *acc += v;
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = self.slot(grads, a) {
                    ga.iter_mut().for_each(|v| *v += g[0]);
                }
            }
            Op::Mean { a } => {
                let n = S::lit(self.value(a).numel() as f64);
                if let Some(ga) = self.slot(grads, a) {
                    let d = g[0] / n;
                    ga.iter_mut().for_each(|v| *v += d);
                }
            }
            Op::Loss { kind, pred, target } => {
                let (p, t) = (self.value(pred).data(), self.value(target).data());
                let n = S::lit(p.len() as f64);
                let two = S::lit(2.0);
                let d = |i: usize| {
                    let r = p[i] - t[i];
                    let v = match kind {
                        LossKind::L1 => {
                            // subgradient 0 at r == 0
                            if r > S::zero() {
                                S::one()
                            } else if r < S::zero() {
                                -S::one()
                            } else {
                                S::zero()
                            }
                        }
                        LossKind::L2 => two * r,
                    };
                    g[0] * v / n
                };
                if let Some(gp) = self.slot(grads, pred) {
                    for (i, acc) in gp.iter_mut().enumerate() {
                        *acc += d(i);
                    }
                }
                if let Some(gt) = self.slot(grads, target) {
                    for (i, acc) in gt.iter_mut().enumerate() {
                        *acc -= d(i);
                    }
                }
            }
        }
    }
}
