//! Minimal layers with hand-written backward passes.
//!
//! Every layer reads its weights from one flat parameter buffer through a
//! [`ParamSlot`] and accumulates gradients into a buffer of the same layout.
//! Activations are single samples in planar `(C, H, W)` form; batching is a
//! loop in the caller.

use ndarray::linalg::general_mat_mul;
use ndarray::ArrayView2;
use ndarray::ArrayViewMut2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamSlot {
    pub offset: usize,
    pub len: usize,
}

impl ParamSlot {
    #[inline]
    pub fn of<'a, F>(&self, p: &'a [F]) -> &'a [F] {
        &p[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a, F>(&self, p: &'a mut [F]) -> &'a mut [F] {
        &mut p[self.offset..self.offset + self.len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Uniform(f64),
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub slot: ParamSlot,
    pub(crate) init: Init,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub(crate) fn alloc(&mut self, name: impl Into<String>, len: usize, init: Init) -> ParamSlot {
        let slot = ParamSlot { offset: self.total, len };
        self.total += len;
        self.entries.push(ParamEntry { name: name.into(), slot, init });
        slot
    }

    /// Deterministic initialization in registration order.
    pub fn initialize<F: Scalar>(&self, seed: u64) -> Vec<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![F::zero(); self.total];
        for e in &self.entries {
            let dst = e.slot.of_mut(&mut out);
            match e.init {
                Init::Zero => {}
                Init::Uniform(bound) => {
                    for v in dst {
                        *v = F::lit(rng.random_range(-bound..bound));
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

#[inline]
pub fn silu<F: Scalar>(x: F) -> F {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad<F: Scalar>(x: F) -> F {
    let s = sigmoid(x);
    s * (F::one() + x * (F::one() - s))
}

pub fn silu_image<F: Scalar>(x: &Image<F>) -> Image<F> {
    x.map(silu)
}

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
#[allow(clippy::too_many_arguments)]
fn gemm<F: Scalar>(
    alpha: F,
    a: &[F],
    (ar, ac): (usize, usize),
    trans_a: bool,
    b: &[F],
    (br, bc): (usize, usize),
    trans_b: bool,
    beta: F,
    c: &mut [F],
    (cr, cc): (usize, usize),
) {
    let a = ArrayView2::from_shape((ar, ac), a).expect("gemm a shape");
    let b = ArrayView2::from_shape((br, bc), b).expect("gemm b shape");
    let mut c = ArrayViewMut2::from_shape((cr, cc), c).expect("gemm c shape");
    let a = if trans_a { a.reversed_axes() } else { a };
    let b = if trans_b { b.reversed_axes() } else { b };
    general_mat_mul(alpha, &a, &b, beta, &mut c);
}

/// Square convolution, stride 1, "same" zero padding. `kernel` is 1 or 3.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    weight: ParamSlot,
    bias: ParamSlot,
}

impl Conv2d {
    pub(crate) fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, kernel: usize, zero: bool) -> Self {
        assert!(kernel == 1 || kernel == 3);
        let fan_in = (cin * kernel * kernel) as f64;
        let init = if zero { Init::Zero } else { Init::Uniform(1.0 / fan_in.sqrt()) };
        let weight = layout.alloc(format!("{name}.weight"), cout * cin * kernel * kernel, init);
        let bias = layout.alloc(format!("{name}.bias"), cout, init);
        Self { cin, cout, kernel, weight, bias }
    }

    fn rows(&self) -> usize {
        self.cin * self.kernel * self.kernel
    }

    /// Returns the output and the unfolded input needed by `backward`.
    pub fn forward<F: Scalar>(&self, p: &[F], x: &Image<F>) -> (Image<F>, Vec<F>) {
        debug_assert_eq!(x.channels, self.cin);
        let hw = x.plane_len();
        let cols = if self.kernel == 1 { x.data.clone() } else { im2col3(x) };
        let mut out = Vec::with_capacity(self.cout * hw);
        for &b in self.bias.of(p) {
            out.extend(std::iter::repeat_n(b, hw));
        }
        gemm(
            F::one(),
            self.weight.of(p),
            (self.cout, self.rows()),
            false,
            &cols,
            (self.rows(), hw),
            false,
            F::one(),
            &mut out,
            (self.cout, hw),
        );
        (Image::from_vec(self.cout, x.height, x.width, out), cols)
    }

    pub fn backward<F: Scalar>(&self, p: &[F], g: &mut [F], cols: &[F], dy: &Image<F>) -> Image<F> {
        let hw = dy.plane_len();
        gemm(
            F::one(),
            &dy.data,
            (self.cout, hw),
            false,
            cols,
            (self.rows(), hw),
            true,
            F::one(),
            self.weight.of_mut(g),
            (self.cout, self.rows()),
        );
        for (gb, plane) in self.bias.of_mut(g).iter_mut().zip(dy.data.chunks_exact(hw)) {
            *gb = *gb + plane.iter().copied().sum::<F>();
        }
        let mut dcols = vec![F::zero(); self.rows() * hw];
        gemm(
            F::one(),
            self.weight.of(p),
            (self.cout, self.rows()),
            true,
            &dy.data,
            (self.cout, hw),
            false,
            F::zero(),
            &mut dcols,
            (self.rows(), hw),
        );
        if self.kernel == 1 {
            Image::from_vec(self.cin, dy.height, dy.width, dcols)
        } else {
            col2im3(&dcols, self.cin, dy.height, dy.width)
        }
    }
}

fn im2col3<F: Scalar>(x: &Image<F>) -> Vec<F> {
    let (c, h, w) = x.shape();
    let hw = h * w;
    let mut cols = vec![F::zero(); c * 9 * hw];
    for ci in 0..c {
        let src = x.channel(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s = &src[sy as usize * w..][..w];
                    let d = &mut row[y * w..][..w];
                    match kx {
                        0 => d[1..].copy_from_slice(&s[..w - 1]),
                        1 => d.copy_from_slice(s),
                        _ => d[..w - 1].copy_from_slice(&s[1..]),
                    }
                }
            }
        }
    }
    cols
}

fn col2im3<F: Scalar>(cols: &[F], c: usize, h: usize, w: usize) -> Image<F> {
    let hw = h * w;
    let mut out = Image::zeros(c, h, w);
    for ci in 0..c {
        let dst = out.channel_mut(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[(ci * 9 + ky * 3 + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let d = &mut dst[sy as usize * w..][..w];
                    let s = &row[y * w..][..w];
                    match kx {
                        0 => d[..w - 1].iter_mut().zip(&s[1..]).for_each(|(a, &b)| *a = *a + b),
                        1 => d.iter_mut().zip(s).for_each(|(a, &b)| *a = *a + b),
                        _ => d[1..].iter_mut().zip(&s[..w - 1]).for_each(|(a, &b)| *a = *a + b),
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    weight: ParamSlot,
    bias: ParamSlot,
}

impl Linear {
    pub(crate) fn new(layout: &mut ParamLayout, name: &str, input: usize, output: usize) -> Self {
        let init = Init::Uniform(1.0 / (input as f64).sqrt());
        let weight = layout.alloc(format!("{name}.weight"), input * output, init);
        let bias = layout.alloc(format!("{name}.bias"), output, init);
        Self { input, output, weight, bias }
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: &[F]) -> Vec<F> {
        let w = self.weight.of(p);
        self.bias
            .of(p)
            .iter()
            .enumerate()
            .map(|(o, &b)| b + w[o * self.input..(o + 1) * self.input].iter().zip(x).map(|(&a, &v)| a * v).sum::<F>())
            .collect()
    }

    /// Accumulates parameter gradients and adds the input gradient into `dx`.
    pub fn backward<F: Scalar>(&self, p: &[F], g: &mut [F], x: &[F], dy: &[F], dx: &mut [F]) {
        {
            let gw = self.weight.of_mut(g);
            for (o, &d) in dy.iter().enumerate() {
                for (gv, &xv) in gw[o * self.input..(o + 1) * self.input].iter_mut().zip(x) {
                    *gv = *gv + d * xv;
                }
            }
        }
        for (gb, &d) in self.bias.of_mut(g).iter_mut().zip(dy) {
            *gb = *gb + d;
        }
        let w = self.weight.of(p);
        for (o, &d) in dy.iter().enumerate() {
            for (dv, &wv) in dx.iter_mut().zip(&w[o * self.input..(o + 1) * self.input]) {
                *dv = *dv + d * wv;
            }
        }
    }
}

pub fn avg_pool2<F: Scalar>(x: &Image<F>) -> Image<F> {
    let (c, h, w) = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let quarter = F::lit(0.25);
    let mut out = Image::zeros(c, oh, ow);
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let s = x.at(ci, 2 * y, 2 * xx)
                    + x.at(ci, 2 * y, 2 * xx + 1)
                    + x.at(ci, 2 * y + 1, 2 * xx)
                    + x.at(ci, 2 * y + 1, 2 * xx + 1);
                out.set(ci, y, xx, s * quarter);
            }
        }
    }
    out
}

pub fn avg_pool2_backward<F: Scalar>(dy: &Image<F>) -> Image<F> {
    let (c, h, w) = dy.shape();
    let quarter = F::lit(0.25);
    let mut out = Image::zeros(c, h * 2, w * 2);
    for ci in 0..c {
        for y in 0..2 * h {
            for x in 0..2 * w {
                out.set(ci, y, x, dy.at(ci, y / 2, x / 2) * quarter);
            }
        }
    }
    out
}

pub fn upsample2<F: Scalar>(x: &Image<F>) -> Image<F> {
    let (c, h, w) = x.shape();
    let mut out = Image::zeros(c, h * 2, w * 2);
    for ci in 0..c {
        for y in 0..2 * h {
            for xx in 0..2 * w {
                out.set(ci, y, xx, x.at(ci, y / 2, xx / 2));
            }
        }
    }
    out
}

pub fn upsample2_backward<F: Scalar>(dy: &Image<F>) -> Image<F> {
    let (c, h, w) = dy.shape();
    let mut out = Image::zeros(c, h / 2, w / 2);
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = out.at(ci, y / 2, x / 2) + dy.at(ci, y, x);
                out.set(ci, y / 2, x / 2, v);
            }
        }
    }
    out
}

/// Residual block conditioned on the shared embedding: the activated
/// embedding is projected to a per-channel bias between the two convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    emb_proj: Linear,
    skip: Option<Conv2d>,
}

pub struct ResCache<F> {
    x: Image<F>,
    cols1: Vec<F>,
    h3: Image<F>,
    cols2: Vec<F>,
    skip_cols: Option<Vec<F>>,
}

impl ResBlock {
    pub(crate) fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, emb_dim: usize) -> Self {
        let conv1 = Conv2d::new(layout, &format!("{name}.conv1"), cin, cout, 3, false);
        let emb_proj = Linear::new(layout, &format!("{name}.emb"), emb_dim, cout);
        let conv2 = Conv2d::new(layout, &format!("{name}.conv2"), cout, cout, 3, true);
        let skip = (cin != cout).then(|| Conv2d::new(layout, &format!("{name}.skip"), cin, cout, 1, false));
        Self { conv1, conv2, emb_proj, skip }
    }

    pub fn out_channels(&self) -> usize {
        self.conv1.cout
    }

    pub fn forward<F: Scalar>(&self, p: &[F], x: Image<F>, emb_act: &[F]) -> (Image<F>, ResCache<F>) {
        let (h2, cols1) = self.conv1.forward(p, &silu_image(&x));
        let bias = self.emb_proj.forward(p, emb_act);
        let mut h3 = h2;
        let hw = h3.plane_len();
        for (plane, &b) in h3.data.chunks_exact_mut(hw).zip(&bias) {
            plane.iter_mut().for_each(|v| *v = *v + b);
        }
        let (mut out, cols2) = self.conv2.forward(p, &silu_image(&h3));
        let skip_cols = match &self.skip {
            Some(conv) => {
                let (s, cols) = conv.forward(p, &x);
                out.data.iter_mut().zip(&s.data).for_each(|(o, &v)| *o = *o + v);
                Some(cols)
            }
            None => {
                out.data.iter_mut().zip(&x.data).for_each(|(o, &v)| *o = *o + v);
                None
            }
        };
        (out, ResCache { x, cols1, h3, cols2, skip_cols })
    }

    pub fn backward<F: Scalar>(
        &self,
        p: &[F],
        g: &mut [F],
        cache: ResCache<F>,
        d_out: &Image<F>,
        emb_act: &[F],
        d_emb_act: &mut [F],
    ) -> Image<F> {
        let mut d_s2 = self.conv2.backward(p, g, &cache.cols2, d_out);
        for (d, &h) in d_s2.data.iter_mut().zip(&cache.h3.data) {
            *d = *d * silu_grad(h);
        }
        let d_h3 = d_s2;
        let hw = d_h3.plane_len();
        let d_bias: Vec<F> = d_h3.data.chunks_exact(hw).map(|pl| pl.iter().copied().sum()).collect();
        self.emb_proj.backward(p, g, emb_act, &d_bias, d_emb_act);
        let mut dx = self.conv1.backward(p, g, &cache.cols1, &d_h3);
        for (d, &xv) in dx.data.iter_mut().zip(&cache.x.data) {
            *d = *d * silu_grad(xv);
        }
        match (&self.skip, cache.skip_cols) {
            (Some(conv), Some(cols)) => {
                let ds = conv.backward(p, g, &cols, d_out);
                dx.data.iter_mut().zip(&ds.data).for_each(|(a, &b)| *a = *a + b);
            }
            _ => dx.data.iter_mut().zip(&d_out.data).for_each(|(a, &b)| *a = *a + b),
        }
        dx
    }
}
