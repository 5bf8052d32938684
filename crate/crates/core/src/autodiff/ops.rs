//! Primitive operations: shape rules, forward kernels and vector-Jacobian
//! products.
//!
//! Volumes are `[C, D, H, W]` with `W` fastest; there is no batch axis.
//! Every kernel accumulates each output element in a fixed order so that a
//! recomputed value is bitwise equal to the original.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tensor::{axpy, dot, numel, sum, Real, Tensor};

/// Primitive kind of a graph node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Op {
    /// Graph input bound by name at forward time.
    Input { name: String, shape: Vec<usize> },
    /// Stride-1 convolution, weight `[out, in, k, k, k]`, bias `[out]`.
    Conv3d { in_channels: usize, out_channels: usize, kernel: usize, padding: usize },
    /// Transposed convolution, kernel 2 stride 2; weight `[in, out, 2, 2, 2]`, bias `[out]`.
    Deconv3d { in_channels: usize, out_channels: usize },
    /// 2×2×2 max pooling, stride 2, odd extents floor-divide.
    MaxPool3d,
    /// Per-channel normalization over the spatial axes, params gamma and beta.
    BatchNorm { channels: usize, eps: f64 },
    Relu,
    /// Channel concatenation; all inputs share spatial extents.
    Concat,
    Add,
    /// Mean squared error between `inputs[0]` (prediction) and `inputs[1]` (target).
    L2Loss,
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Conv3d { .. } => "conv3d",
            Op::Deconv3d { .. } => "deconv3d",
            Op::MaxPool3d => "max_pool3d",
            Op::BatchNorm { .. } => "batch_norm",
            Op::Relu => "relu",
            Op::Concat => "channel_concat",
            Op::Add => "add",
            Op::L2Loss => "l2_loss",
        }
    }

    /// Shapes of the learnable parameters this op owns.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            Op::Conv3d { in_channels, out_channels, kernel, .. } => {
                vec![vec![out_channels, in_channels, kernel, kernel, kernel], vec![out_channels]]
            }
            Op::Deconv3d { in_channels, out_channels } => {
                vec![vec![in_channels, out_channels, 2, 2, 2], vec![out_channels]]
            }
            Op::BatchNorm { channels, .. } => vec![vec![channels], vec![channels]],
            _ => Vec::new(),
        }
    }

    /// Output shape for the given input shapes. `Err` carries the expected
    /// shape of the first offending input.
    pub fn output_shape(&self, inputs: &[&[usize]]) -> Result<Vec<usize>, ShapeFault> {
        let arity = |n: usize| -> Result<(), ShapeFault> {
            if inputs.len() != n {
                Err(ShapeFault::arity(n, inputs.len()))
            } else {
                Ok(())
            }
        };
        match self {
            Op::Input { shape, .. } => {
                arity(0)?;
                Ok(shape.clone())
            }
            Op::Conv3d { in_channels, out_channels, kernel, padding } => {
                arity(1)?;
                let s = inputs[0];
                let fits = s.len() == 4
                    && s[0] == *in_channels
                    && s[1..].iter().all(|&e| e + 2 * padding >= *kernel);
                if !fits {
                    let mut expected = vec![*in_channels];
                    expected.extend(s.iter().skip(1).map(|&e| e.max(kernel.saturating_sub(2 * padding))));
                    expected.resize(4, *kernel);
                    return Err(ShapeFault::mismatch(expected, s.to_vec()));
                }
                let mut out = vec![*out_channels];
                out.extend(s[1..].iter().map(|&e| e + 2 * padding - kernel + 1));
                Ok(out)
            }
            Op::Deconv3d { in_channels, out_channels } => {
                arity(1)?;
                let s = inputs[0];
                if s.len() != 4 || s[0] != *in_channels {
                    let mut expected = s.to_vec();
                    expected.resize(4, 1);
                    expected[0] = *in_channels;
                    return Err(ShapeFault::mismatch(expected, s.to_vec()));
                }
                Ok(vec![*out_channels, s[1] * 2, s[2] * 2, s[3] * 2])
            }
            Op::MaxPool3d => {
                arity(1)?;
                let s = inputs[0];
                if s.len() != 4 || s[1..].iter().any(|&e| e < 2) {
                    return Err(ShapeFault::mismatch(vec![s.first().copied().unwrap_or(1), 2, 2, 2], s.to_vec()));
                }
                Ok(vec![s[0], s[1] / 2, s[2] / 2, s[3] / 2])
            }
            Op::BatchNorm { channels, .. } => {
                arity(1)?;
                let s = inputs[0];
                if s.len() != 4 || s[0] != *channels {
                    let mut expected = s.to_vec();
                    expected.resize(4, 1);
                    expected[0] = *channels;
                    return Err(ShapeFault::mismatch(expected, s.to_vec()));
                }
                Ok(s.to_vec())
            }
            Op::Relu => {
                arity(1)?;
                Ok(inputs[0].to_vec())
            }
            Op::Concat => {
                if inputs.is_empty() {
                    return Err(ShapeFault::arity(2, 0));
                }
                let first = inputs[0];
                if first.len() != 4 {
                    return Err(ShapeFault::mismatch(vec![first.first().copied().unwrap_or(1), 1, 1, 1], first.to_vec()));
                }
                let mut channels = 0;
                for s in inputs {
                    if s.len() != 4 || s[1..] != first[1..] {
                        let mut expected = first.to_vec();
                        expected[0] = s.first().copied().unwrap_or(1);
                        return Err(ShapeFault::mismatch(expected, s.to_vec()));
                    }
                    channels += s[0];
                }
                let mut out = first.to_vec();
                out[0] = channels;
                Ok(out)
            }
            Op::Add => {
                arity(2)?;
                if inputs[0] != inputs[1] {
                    return Err(ShapeFault::mismatch(inputs[0].to_vec(), inputs[1].to_vec()));
                }
                Ok(inputs[0].to_vec())
            }
            Op::L2Loss => {
                arity(2)?;
                if inputs[0] != inputs[1] {
                    return Err(ShapeFault::mismatch(inputs[0].to_vec(), inputs[1].to_vec()));
                }
                Ok(vec![1])
            }
        }
    }
}

/// Shape rule violation before a node id is attached.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeFault {
    pub expected: Vec<usize>,
    pub actual: Vec<usize>,
}

impl ShapeFault {
    fn mismatch(expected: Vec<usize>, actual: Vec<usize>) -> Self {
        Self { expected, actual }
    }

    // Arity faults are reported as rank-1 "shapes" holding the input counts.
    fn arity(expected: usize, actual: usize) -> Self {
        Self { expected: vec![expected], actual: vec![actual] }
    }
}

/// Forward kernel dispatch.
///
/// # Panics
/// If the shapes do not satisfy [`Op::output_shape`], or for `Input`.
pub fn forward<T: Real>(op: &Op, inputs: &[&Tensor<T>], params: &[&Tensor<T>]) -> Tensor<T> {
    match *op {
        Op::Input { .. } => unreachable!("inputs are bound, not computed"),
        Op::Conv3d { kernel, padding, .. } => conv3d_forward(inputs[0], params[0], params[1], kernel, padding),
        Op::Deconv3d { .. } => deconv3d_forward(inputs[0], params[0], params[1]),
        Op::MaxPool3d => max_pool3d_forward(inputs[0]),
        Op::BatchNorm { eps, .. } => batch_norm_forward(inputs[0], params[0], params[1], T::from_f64(eps)),
        Op::Relu => relu_forward(inputs[0]),
        Op::Concat => concat_forward(inputs),
        Op::Add => {
            let mut out = inputs[0].clone();
            out.add_assign(inputs[1]);
            out
        }
        Op::L2Loss => l2_forward(inputs[0], inputs[1]),
    }
}

/// Gradients produced by one node's backward step.
pub struct OpGrads<T> {
    /// One slot per input; `None` where the input needs no gradient.
    pub inputs: Vec<Option<Tensor<T>>>,
    /// One gradient per parameter, in the op's parameter order.
    pub params: Vec<Tensor<T>>,
}

/// Vector-Jacobian product of one primitive.
///
/// Only input values are read, never the node's own output, so a node's
/// value can be dropped as soon as its consumers are done.
///
/// # Panics
/// Under the same conditions as [`forward`].
pub fn backward<T: Real>(
    op: &Op,
    inputs: &[&Tensor<T>],
    params: &[&Tensor<T>],
    grad_out: &Tensor<T>,
    need_input: &[bool],
) -> OpGrads<T> {
    match *op {
        Op::Input { .. } => OpGrads { inputs: Vec::new(), params: Vec::new() },
        Op::Conv3d { kernel, padding, .. } => {
            let gx = need_input[0].then(|| conv3d_grad_input(inputs[0].shape(), params[0], grad_out, kernel, padding));
            let (gw, gb) = conv3d_grad_params(inputs[0], grad_out, kernel, padding, params[0].shape());
            OpGrads { inputs: vec![gx], params: vec![gw, gb] }
        }
        Op::Deconv3d { .. } => {
            let gx = need_input[0].then(|| deconv3d_grad_input(inputs[0].shape(), params[0], grad_out));
            let (gw, gb) = deconv3d_grad_params(inputs[0], grad_out, params[0].shape());
            OpGrads { inputs: vec![gx], params: vec![gw, gb] }
        }
        Op::MaxPool3d => OpGrads { inputs: vec![need_input[0].then(|| max_pool3d_backward(inputs[0], grad_out))], params: Vec::new() },
        Op::BatchNorm { eps, .. } => {
            let (gx, gg, gb) = batch_norm_backward(inputs[0], params[0], grad_out, T::from_f64(eps), need_input[0]);
            OpGrads { inputs: vec![gx], params: vec![gg, gb] }
        }
        Op::Relu => {
            let gx = need_input[0].then(|| {
                let mut g = grad_out.clone();
                for (gv, &x) in g.data_mut().iter_mut().zip(inputs[0].data()) {
                    // zero input → zero gradient
                    if x <= T::zero() {
                        *gv = T::zero();
                    }
                }
                g
            });
            OpGrads { inputs: vec![gx], params: Vec::new() }
        }
        Op::Concat => {
            let mut grads = Vec::with_capacity(inputs.len());
            let spatial: usize = grad_out.shape()[1..].iter().product();
            let mut offset = 0;
            for (x, &need) in inputs.iter().zip(need_input) {
                let n = x.shape()[0] * spatial;
                grads.push(need.then(|| {
                    Tensor::from_vec(x.shape(), grad_out.data()[offset..offset + n].to_vec())
                        .expect("concat split matches input shape")
                }));
                offset += n;
            }
            OpGrads { inputs: grads, params: Vec::new() }
        }
        Op::Add => OpGrads {
            inputs: need_input.iter().map(|&need| need.then(|| grad_out.clone())).collect(),
            params: Vec::new(),
        },
        Op::L2Loss => {
            let (p, t) = (inputs[0], inputs[1]);
            let scale = T::from_f64(2.0) * grad_out.data()[0] / T::from_f64(p.len() as f64);
            let diff = || {
                let data = p.data().iter().zip(t.data()).map(|(&a, &b)| scale * (a - b)).collect();
                Tensor::from_vec(p.shape(), data).expect("same shape as prediction")
            };
            let gp = need_input[0].then(diff);
            let gt = need_input[1].then(|| {
                let mut g = diff();
                g.data_mut().iter_mut().for_each(|v| *v = -*v);
                g
            });
            OpGrads { inputs: vec![gp, gt], params: Vec::new() }
        }
    }
}

/// Flat-lattice view of a convolution.
///
/// The input is zero-padded and flattened; output voxel `(z, y, x)` lives
/// at `(z * hp + y) * wp + x` on the padded row pitch, so every kernel tap
/// is one contiguous shifted multiply-add. Lattice slots with `y >= oh` or
/// `x >= ow` are scratch.
struct Lattice {
    dp: usize,
    hp: usize,
    wp: usize,
    od: usize,
    oh: usize,
    ow: usize,
    k: usize,
    /// Slots covering every real output voxel.
    len: usize,
}

impl Lattice {
    fn new(d: usize, h: usize, w: usize, k: usize, pad: usize) -> Self {
        let (dp, hp, wp) = (d + 2 * pad, h + 2 * pad, w + 2 * pad);
        let (od, oh, ow) = (dp + 1 - k, hp + 1 - k, wp + 1 - k);
        let len = ((od - 1) * hp + oh - 1) * wp + ow;
        Self { dp, hp, wp, od, oh, ow, k, len }
    }

    fn padded_len(&self) -> usize {
        self.dp * self.hp * self.wp
    }

    #[inline]
    fn tap(&self, kz: usize, ky: usize, kx: usize) -> usize {
        (kz * self.hp + ky) * self.wp + kx
    }

    /// Copies `c` channels of `[d, h, w]` into zero-padded planes.
    fn pad_input<T: Real>(&self, x: &[T], c: usize, pad: usize) -> Vec<T> {
        let (d, h, w) = (self.dp - 2 * pad, self.hp - 2 * pad, self.wp - 2 * pad);
        let plen = self.padded_len();
        let mut out = vec![T::zero(); c * plen];
        for ch in 0..c {
            for z in 0..d {
                for y in 0..h {
                    let src = ((ch * d + z) * h + y) * w;
                    let dst = ch * plen + ((z + pad) * self.hp + y + pad) * self.wp + pad;
                    out[dst..dst + w].copy_from_slice(&x[src..src + w]);
                }
            }
        }
        out
    }

    /// Spreads `c` channels of `[od, oh, ow]` onto the lattice, zeros elsewhere.
    fn spread_output<T: Real>(&self, g: &[T], c: usize) -> Vec<T> {
        let mut out = vec![T::zero(); c * self.len];
        for ch in 0..c {
            for z in 0..self.od {
                for y in 0..self.oh {
                    let src = ((ch * self.od + z) * self.oh + y) * self.ow;
                    let dst = ch * self.len + (z * self.hp + y) * self.wp;
                    out[dst..dst + self.ow].copy_from_slice(&g[src..src + self.ow]);
                }
            }
        }
        out
    }

    /// Gathers the real output voxels of one lattice channel.
    fn gather_output<T: Real>(&self, lat: &[T], out: &mut [T]) {
        for z in 0..self.od {
            for y in 0..self.oh {
                let src = (z * self.hp + y) * self.wp;
                let dst = (z * self.oh + y) * self.ow;
                out[dst..dst + self.ow].copy_from_slice(&lat[src..src + self.ow]);
            }
        }
    }

    /// Gathers the interior of one padded input channel.
    fn gather_input<T: Real>(&self, padded: &[T], pad: usize, out: &mut [T]) {
        let (d, h, w) = (self.dp - 2 * pad, self.hp - 2 * pad, self.wp - 2 * pad);
        for z in 0..d {
            for y in 0..h {
                let src = ((z + pad) * self.hp + y + pad) * self.wp + pad;
                let dst = (z * h + y) * w;
                out[dst..dst + w].copy_from_slice(&padded[src..src + w]);
            }
        }
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let k = self.k;
        (0..k * k * k).map(move |t| (t, self.tap(t / (k * k), (t / k) % k, t % k)))
    }
}

fn conv3d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, k: usize, pad: usize) -> Tensor<T> {
    let [cin, d, h, wd] = x.dims4();
    let cout = w.shape()[0];
    let lat = Lattice::new(d, h, wd, k, pad);
    let xp = lat.pad_input(x.data(), cin, pad);
    let plen = lat.padded_len();
    let kvol = k * k * k;
    let ovol = lat.od * lat.oh * lat.ow;
    let mut out = vec![T::zero(); cout * ovol];
    let mut acc = vec![T::zero(); lat.len];
    for (oc, o) in out.chunks_exact_mut(ovol).enumerate() {
        acc.fill(b.data()[oc]);
        for ic in 0..cin {
            let xin = &xp[ic * plen..(ic + 1) * plen];
            let wk = &w.data()[(oc * cin + ic) * kvol..(oc * cin + ic + 1) * kvol];
            for (t, off) in lat.taps() {
                axpy(wk[t], &xin[off..off + lat.len], &mut acc);
            }
        }
        lat.gather_output(&acc, o);
    }
    Tensor::from_vec(&[cout, lat.od, lat.oh, lat.ow], out).expect("conv output shape")
}

fn conv3d_grad_input<T: Real>(x_shape: &[usize], w: &Tensor<T>, g: &Tensor<T>, k: usize, pad: usize) -> Tensor<T> {
    let (cin, d, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let cout = g.shape()[0];
    let lat = Lattice::new(d, h, wd, k, pad);
    let gl = lat.spread_output(g.data(), cout);
    let kvol = k * k * k;
    let ivol = d * h * wd;
    let mut gx = vec![T::zero(); cin * ivol];
    let mut acc = vec![T::zero(); lat.padded_len()];
    for (ic, gi) in gx.chunks_exact_mut(ivol).enumerate() {
        acc.fill(T::zero());
        for oc in 0..cout {
            let go = &gl[oc * lat.len..(oc + 1) * lat.len];
            let wk = &w.data()[(oc * cin + ic) * kvol..(oc * cin + ic + 1) * kvol];
            for (t, off) in lat.taps() {
                axpy(wk[t], go, &mut acc[off..off + lat.len]);
            }
        }
        lat.gather_input(&acc, pad, gi);
    }
    Tensor::from_vec(x_shape, gx).expect("conv input grad shape")
}

fn conv3d_grad_params<T: Real>(
    x: &Tensor<T>,
    g: &Tensor<T>,
    k: usize,
    pad: usize,
    w_shape: &[usize],
) -> (Tensor<T>, Tensor<T>) {
    let [cin, d, h, wd] = x.dims4();
    let cout = g.shape()[0];
    let lat = Lattice::new(d, h, wd, k, pad);
    let xp = lat.pad_input(x.data(), cin, pad);
    let gl = lat.spread_output(g.data(), cout);
    let plen = lat.padded_len();
    let kvol = k * k * k;
    let mut gw = vec![T::zero(); cout * cin * kvol];
    let mut gb = vec![T::zero(); cout];
    for oc in 0..cout {
        let go = &gl[oc * lat.len..(oc + 1) * lat.len];
        gb[oc] = sum(go);
        for ic in 0..cin {
            let xin = &xp[ic * plen..(ic + 1) * plen];
            let acc = &mut gw[(oc * cin + ic) * kvol..(oc * cin + ic + 1) * kvol];
            for (t, off) in lat.taps() {
                acc[t] = dot(go, &xin[off..off + lat.len]);
            }
        }
    }
    (
        Tensor::from_vec(w_shape, gw).expect("conv weight grad shape"),
        Tensor::from_vec(&[cout], gb).expect("conv bias grad shape"),
    )
}

fn deconv3d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let [cin, d, h, wd] = x.dims4();
    let cout = w.shape()[1];
    let (od, oh, ow) = (2 * d, 2 * h, 2 * wd);
    let (ivol, ovol) = (d * h * wd, od * oh * ow);
    let mut out = vec![T::zero(); cout * ovol];
    for (oc, o) in out.chunks_exact_mut(ovol).enumerate() {
        o.fill(b.data()[oc]);
        for ic in 0..cin {
            let xin = &x.data()[ic * ivol..(ic + 1) * ivol];
            let wk = &w.data()[(ic * cout + oc) * 8..(ic * cout + oc + 1) * 8];
            for z in 0..d {
                for y in 0..h {
                    let irow = &xin[(z * h + y) * wd..(z * h + y + 1) * wd];
                    for a in 0..2 {
                        for bb in 0..2 {
                            let orow = &mut o[((2 * z + a) * oh + 2 * y + bb) * ow..((2 * z + a) * oh + 2 * y + bb + 1) * ow];
                            let (w0, w1) = (wk[(a * 2 + bb) * 2], wk[(a * 2 + bb) * 2 + 1]);
                            for (xi, &v) in irow.iter().enumerate() {
                                orow[2 * xi] += w0 * v;
                                orow[2 * xi + 1] += w1 * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[cout, od, oh, ow], out).expect("deconv output shape")
}

fn deconv3d_grad_input<T: Real>(x_shape: &[usize], w: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (cin, d, h, wd) = (x_shape[0], x_shape[1], x_shape[2], x_shape[3]);
    let [cout, _, oh, ow] = g.dims4();
    let (ivol, ovol) = (d * h * wd, g.len() / cout);
    let mut gx = vec![T::zero(); cin * ivol];
    for (ic, gi) in gx.chunks_exact_mut(ivol).enumerate() {
        for oc in 0..cout {
            let go = &g.data()[oc * ovol..(oc + 1) * ovol];
            let wk = &w.data()[(ic * cout + oc) * 8..(ic * cout + oc + 1) * 8];
            for z in 0..d {
                for y in 0..h {
                    let irow = &mut gi[(z * h + y) * wd..(z * h + y + 1) * wd];
                    for a in 0..2 {
                        for bb in 0..2 {
                            let grow = &go[((2 * z + a) * oh + 2 * y + bb) * ow..((2 * z + a) * oh + 2 * y + bb + 1) * ow];
                            let (w0, w1) = (wk[(a * 2 + bb) * 2], wk[(a * 2 + bb) * 2 + 1]);
                            for (xi, v) in irow.iter_mut().enumerate() {
                                *v += w0 * grow[2 * xi] + w1 * grow[2 * xi + 1];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(x_shape, gx).expect("deconv input grad shape")
}

fn deconv3d_grad_params<T: Real>(x: &Tensor<T>, g: &Tensor<T>, w_shape: &[usize]) -> (Tensor<T>, Tensor<T>) {
    let [cin, d, h, wd] = x.dims4();
    let [cout, _, oh, ow] = g.dims4();
    let (ivol, ovol) = (d * h * wd, g.len() / cout);
    let mut gw = vec![T::zero(); cin * cout * 8];
    let gb: Vec<T> = (0..cout).map(|oc| sum(&g.data()[oc * ovol..(oc + 1) * ovol])).collect();
    for ic in 0..cin {
        let xin = &x.data()[ic * ivol..(ic + 1) * ivol];
        for oc in 0..cout {
            let go = &g.data()[oc * ovol..(oc + 1) * ovol];
            let mut acc = [T::zero(); 8];
            for z in 0..d {
                for y in 0..h {
                    let irow = &xin[(z * h + y) * wd..(z * h + y + 1) * wd];
                    for a in 0..2 {
                        for bb in 0..2 {
                            let grow = &go[((2 * z + a) * oh + 2 * y + bb) * ow..((2 * z + a) * oh + 2 * y + bb + 1) * ow];
                            let (mut s0, mut s1) = (T::zero(), T::zero());
                            for (xi, &v) in irow.iter().enumerate() {
                                s0 += v * grow[2 * xi];
                                s1 += v * grow[2 * xi + 1];
                            }
                            acc[(a * 2 + bb) * 2] += s0;
                            acc[(a * 2 + bb) * 2 + 1] += s1;
                        }
                    }
                }
            }
            gw[(ic * cout + oc) * 8..(ic * cout + oc + 1) * 8].copy_from_slice(&acc);
        }
    }
    (
        Tensor::from_vec(w_shape, gw).expect("deconv weight grad shape"),
        Tensor::from_vec(&[cout], gb).expect("deconv bias grad shape"),
    )
}

/// Linear input index of the max in each pooling window; ties keep the
/// lowest index.
fn pool_argmax<T: Real>(x: &Tensor<T>) -> (Vec<usize>, [usize; 4]) {
    let [c, d, h, w] = x.dims4();
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut idx = Vec::with_capacity(c * od * oh * ow);
    let data = x.data();
    for ch in 0..c {
        let base = ch * d * h * w;
        for z in 0..od {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut best = base + ((2 * z) * h + 2 * y) * w + 2 * xx;
                    for a in 0..2 {
                        for b in 0..2 {
                            for e in 0..2 {
                                let i = base + ((2 * z + a) * h + 2 * y + b) * w + 2 * xx + e;
                                if data[i] > data[best] {
                                    best = i;
                                }
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
    }
    (idx, [c, od, oh, ow])
}

fn max_pool3d_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (idx, shape) = pool_argmax(x);
    let data = idx.iter().map(|&i| x.data()[i]).collect();
    Tensor::from_vec(&shape, data).expect("pool output shape")
}

fn max_pool3d_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (idx, _) = pool_argmax(x);
    let mut gx = Tensor::zeros(x.shape());
    for (&i, &gv) in idx.iter().zip(g.data()) {
        gx.data_mut()[i] += gv;
    }
    gx
}

/// Per-channel mean and inverse standard deviation over the spatial axes.
fn channel_stats<T: Real>(xc: &[T], eps: T) -> (T, T) {
    let n = T::from_f64(xc.len() as f64);
    let mean = sum(xc) / n;
    let mut acc = [T::zero(); 8];
    let chunks = xc.chunks_exact(8);
    let rem = chunks.remainder();
    for c in chunks {
        for j in 0..8 {
            let dv = c[j] - mean;
            acc[j] += dv * dv;
        }
    }
    for (j, &v) in rem.iter().enumerate() {
        let dv = v - mean;
        acc[j] += dv * dv;
    }
    let ss = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    let var = ss / n;
    (mean, T::one() / (var + eps).sqrt())
}

fn batch_norm_forward<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: T) -> Tensor<T> {
    let c = x.shape()[0];
    let vol = x.len() / c;
    let mut out = x.clone();
    for (ch, o) in out.data_mut().chunks_exact_mut(vol).enumerate() {
        let (mean, inv) = channel_stats(&x.data()[ch * vol..(ch + 1) * vol], eps);
        let scale = gamma.data()[ch] * inv;
        let shift = beta.data()[ch];
        for v in o.iter_mut() {
            *v = (*v - mean) * scale + shift;
        }
    }
    out
}

fn batch_norm_backward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
    eps: T,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let c = x.shape()[0];
    let vol = x.len() / c;
    let n = T::from_f64(vol as f64);
    let mut gx = need_input.then(|| Tensor::zeros(x.shape()));
    let mut ggamma = vec![T::zero(); c];
    let mut gbeta = vec![T::zero(); c];
    let mut xhat = vec![T::zero(); vol];
    for ch in 0..c {
        let xc = &x.data()[ch * vol..(ch + 1) * vol];
        let gc = &g.data()[ch * vol..(ch + 1) * vol];
        let (mean, inv) = channel_stats(xc, eps);
        for (xh, &v) in xhat.iter_mut().zip(xc) {
            *xh = (v - mean) * inv;
        }
        let sum_g = sum(gc);
        let sum_gx = dot(gc, &xhat);
        gbeta[ch] = sum_g;
        ggamma[ch] = sum_gx;
        if let Some(gx) = gx.as_mut() {
            // dx = gamma * inv / n * (n*g - sum(g) - xhat * sum(g*xhat))
            let k = gamma.data()[ch] * inv / n;
            let out = &mut gx.data_mut()[ch * vol..(ch + 1) * vol];
            for ((o, &gv), &xh) in out.iter_mut().zip(gc).zip(&xhat) {
                *o = k * (n * gv - sum_g - xh * sum_gx);
            }
        }
    }
    (
        gx,
        Tensor::from_vec(&[c], ggamma).expect("gamma grad shape"),
        Tensor::from_vec(&[c], gbeta).expect("beta grad shape"),
    )
}

fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let mut out = x.clone();
    for v in out.data_mut() {
        if *v <= T::zero() {
            *v = T::zero();
        }
    }
    out
}

fn concat_forward<T: Real>(inputs: &[&Tensor<T>]) -> Tensor<T> {
    let mut shape = inputs[0].shape().to_vec();
    shape[0] = inputs.iter().map(|t| t.shape()[0]).sum();
    let mut data = Vec::with_capacity(numel(&shape));
    for t in inputs {
        data.extend_from_slice(t.data());
    }
    Tensor::from_vec(&shape, data).expect("concat output shape")
}

fn l2_forward<T: Real>(p: &Tensor<T>, t: &Tensor<T>) -> Tensor<T> {
    let mut acc = [T::zero(); 8];
    let (pc, tc) = (p.data().chunks_exact(8), t.data().chunks_exact(8));
    let (pr, tr) = (pc.remainder(), tc.remainder());
    for (a, b) in pc.zip(tc) {
        for j in 0..8 {
            let dv = a[j] - b[j];
            acc[j] += dv * dv;
        }
    }
    for j in 0..pr.len() {
        let dv = pr[j] - tr[j];
        acc[j] += dv * dv;
    }
    let ss = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    Tensor::scalar(ss / T::from_f64(p.len() as f64))
}
