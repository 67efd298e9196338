//! Forward and backward kernels for the conv / group-norm / leaky-ReLU stack.
//!
//! Activations are stored per sample as `[channels, height * width]`. A
//! [`Stream`] records the pre-normalization output `a_l` of every conv it ran
//! plus the group statistics, which is all the backward pass needs: the
//! normalized and activated inputs are recomputed on the way back.

use std::cell::RefCell;
use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, ArrayView2, ArrayViewMut2};

use super::params::{LayerSlots, Layout};
use super::scalar::Scalar;
use super::spec::NetworkSpec;

pub(crate) const GN_EPS: f64 = 1e-5;

/// Largest im2col buffer, in elements, built for one band of output rows.
const COL_BUDGET: usize = 1 << 21;

fn band_rows(k2: usize, h: usize, w: usize) -> usize {
    (COL_BUDGET / (k2 * w).max(1)).clamp(1, h.max(1))
}

/// Column buffers reused across the convs of one pass. Contents are
/// overwritten before every read, so they are never cleared.
#[derive(Default)]
pub(crate) struct Scratch<T> {
    col: Vec<T>,
    dcol: Vec<T>,
}

fn grow<T: Scalar>(buf: &mut Vec<T>, n: usize) -> &mut [T] {
    if buf.len() < n {
        buf.resize(n, T::zero());
    }
    &mut buf[..n]
}

/// Column matrix `[cin * k * k, (y1 - y0) * w]` for output rows `y0..y1`.
fn im2col_band<T: Scalar>(
    input: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    rows: Range<usize>,
    col: &mut [T],
) {
    let pad = k / 2;
    let bw = rows.len() * w;
    for ci in 0..cin {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let base = ((ci * k + ky) * k + kx) * bw;
                for (i, y) in rows.clone().enumerate() {
                    let dst = &mut col[base + i * w..base + (i + 1) * w];
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    if kx >= pad {
                        let d = (kx - pad).min(w);
                        dst[..w - d].copy_from_slice(&src[d..]);
                        dst[w - d..].fill(T::zero());
                    } else {
                        let d = (pad - kx).min(w);
                        dst[..d].fill(T::zero());
                        dst[d..].copy_from_slice(&src[..w - d]);
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column-matrix gradient back onto the input planes.
fn col2im_band<T: Scalar>(
    col: &[T],
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    rows: Range<usize>,
    grad: &mut [T],
) {
    let pad = k / 2;
    let bw = rows.len() * w;
    for ci in 0..cin {
        let plane = &mut grad[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let base = ((ci * k + ky) * k + kx) * bw;
                for (i, y) in rows.clone().enumerate() {
                    let sy = y as isize + ky as isize - pad as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &col[base + i * w..base + (i + 1) * w];
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    if kx >= pad {
                        let d = (kx - pad).min(w);
                        for (o, v) in dst[d..].iter_mut().zip(&src[..w - d]) {
                            *o = *o + *v;
                        }
                    } else {
                        let d = (pad - kx).min(w);
                        for (o, v) in dst[..w - d].iter_mut().zip(&src[d..]) {
                            *o = *o + *v;
                        }
                    }
                }
            }
        }
    }
}

/// Convolves `input` with the filters `rows` of `slot`, writing the matching
/// output channels of `out` (bias included).
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_forward<T: Scalar>(
    params: &[T],
    slot: &LayerSlots,
    k: usize,
    input: &[T],
    h: usize,
    w: usize,
    rows: Range<usize>,
    out: &mut [T],
    scratch: &mut Scratch<T>,
) {
    let k2 = slot.cin * k * k;
    let hw = h * w;
    let kernel = &params[slot.kernel.clone()];
    let wv = ArrayView2::from_shape((slot.cout, k2), kernel).expect("kernel shape");
    let wv = wv.slice(s![rows.clone(), ..]);
    let band = band_rows(k2, h, w);
    let col = grow(&mut scratch.col, k2 * band * w);
    let mut ov = ArrayViewMut2::from_shape((slot.cout, hw), out).expect("output shape");
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + band).min(h);
        let bw = (y1 - y0) * w;
        im2col_band(input, slot.cin, h, w, k, y0..y1, col);
        let cv = ArrayView2::from_shape((k2, bw), &col[..k2 * bw]).expect("col shape");
        let mut dst = ov.slice_mut(s![rows.clone(), y0 * w..y1 * w]);
        general_mat_mul(T::one(), &wv, &cv, T::zero(), &mut dst);
        y0 = y1;
    }
    if let Some(b) = &slot.bias {
        let bias = &params[b.clone()];
        for o in rows {
            let bo = bias[o];
            for v in &mut out[o * hw..(o + 1) * hw] {
                *v = *v + bo;
            }
        }
    }
}

/// Backward of [`conv_forward`] for the filters `rows`: accumulates kernel and
/// bias gradients and, when `d_input` is given, the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_backward<T: Scalar>(
    params: &[T],
    slot: &LayerSlots,
    k: usize,
    input: &[T],
    h: usize,
    w: usize,
    rows: Range<usize>,
    d_out: &[T],
    grad: &mut [T],
    mut d_input: Option<&mut [T]>,
    scratch: &mut Scratch<T>,
) {
    let k2 = slot.cin * k * k;
    let hw = h * w;
    if let Some(b) = &slot.bias {
        let gb = &mut grad[b.clone()];
        for o in rows.clone() {
            let s: f64 = d_out[o * hw..(o + 1) * hw].iter().map(|v| v.as_f64()).sum();
            gb[o] = gb[o] + T::of(s);
        }
    }
    let kernel = &params[slot.kernel.clone()];
    let wv = ArrayView2::from_shape((slot.cout, k2), kernel).expect("kernel shape");
    let wv = wv.slice(s![rows.clone(), ..]);
    let dov = ArrayView2::from_shape((slot.cout, hw), d_out).expect("grad shape");
    let mut gv = ArrayViewMut2::from_shape((slot.cout, k2), &mut grad[slot.kernel.clone()])
        .expect("kernel grad shape");
    let mut gv = gv.slice_mut(s![rows.clone(), ..]);
    let band = band_rows(k2, h, w);
    let Scratch { col, dcol } = scratch;
    let col = grow(col, k2 * band * w);
    let dcol = if d_input.is_some() {
        grow(dcol, k2 * band * w)
    } else {
        &mut []
    };
    let mut y0 = 0;
    while y0 < h {
        let y1 = (y0 + band).min(h);
        let bw = (y1 - y0) * w;
        im2col_band(input, slot.cin, h, w, k, y0..y1, col);
        let cv = ArrayView2::from_shape((k2, bw), &col[..k2 * bw]).expect("col shape");
        let dob = dov.slice(s![rows.clone(), y0 * w..y1 * w]);
        general_mat_mul(T::one(), &dob, &cv.t(), T::one(), &mut gv);
        if let Some(d_in) = d_input.as_deref_mut() {
            let mut dcv = ArrayViewMut2::from_shape((k2, bw), &mut dcol[..k2 * bw])
                .expect("col grad shape");
            general_mat_mul(T::one(), &wv.t(), &dob, T::zero(), &mut dcv);
            col2im_band(&dcol[..k2 * bw], slot.cin, h, w, k, y0..y1, d_in);
        }
        y0 = y1;
    }
}

/// Group normalization followed by the leaky ReLU. Returns the activated
/// tensor and `(mean, 1 / std)` per group.
pub(crate) fn norm_act_forward<T: Scalar>(
    a: &[T],
    c: usize,
    hw: usize,
    groups: usize,
    scale: &[T],
    shift: &[T],
    slope: T,
) -> (Vec<T>, Vec<(T, T)>) {
    let per = c / groups;
    let m = (per * hw) as f64;
    let mut out = vec![T::zero(); a.len()];
    let mut stats = Vec::with_capacity(groups);
    for g in 0..groups {
        let span = g * per * hw..(g + 1) * per * hw;
        let mean = a[span.clone()].iter().map(|v| v.as_f64()).sum::<f64>() / m;
        let var = a[span.clone()]
            .iter()
            .map(|v| {
                let d = v.as_f64() - mean;
                d * d
            })
            .sum::<f64>()
            / m;
        let mean_t = T::of(mean);
        let rstd = T::of(1.0 / (var + GN_EPS).sqrt());
        stats.push((mean_t, rstd));
        for ch in g * per..(g + 1) * per {
            let (gamma, beta) = (scale[ch], shift[ch]);
            let src = &a[ch * hw..(ch + 1) * hw];
            let dst = &mut out[ch * hw..(ch + 1) * hw];
            for (o, &x) in dst.iter_mut().zip(src) {
                let y = gamma * (x - mean_t) * rstd + beta;
                *o = if y > T::zero() { y } else { y * slope };
            }
        }
    }
    (out, stats)
}

/// Recomputes the activated tensor from saved statistics.
pub(crate) fn norm_act_replay<T: Scalar>(
    a: &[T],
    c: usize,
    hw: usize,
    stats: &[(T, T)],
    scale: &[T],
    shift: &[T],
    slope: T,
) -> Vec<T> {
    let per = c / stats.len();
    let mut out = vec![T::zero(); a.len()];
    for ch in 0..c {
        let (mean, rstd) = stats[ch / per];
        let (gamma, beta) = (scale[ch], shift[ch]);
        for (o, &x) in out[ch * hw..(ch + 1) * hw].iter_mut().zip(&a[ch * hw..(ch + 1) * hw]) {
            let y = gamma * (x - mean) * rstd + beta;
            *o = if y > T::zero() { y } else { y * slope };
        }
    }
    out
}

/// Backward of [`norm_act_forward`]: adds into `d_a`, `d_scale`, `d_shift`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn norm_act_backward<T: Scalar>(
    a: &[T],
    c: usize,
    hw: usize,
    stats: &[(T, T)],
    scale: &[T],
    shift: &[T],
    slope: T,
    d_out: &[T],
    d_a: &mut [T],
    d_scale: &mut [T],
    d_shift: &mut [T],
) {
    let groups = stats.len();
    let per = c / groups;
    let m = (per * hw) as f64;
    let mut dxhat = vec![T::zero(); per * hw];
    for g in 0..groups {
        let (mean, rstd) = stats[g];
        let mut sum_d = 0.0f64;
        let mut sum_dx = 0.0f64;
        for (j, ch) in (g * per..(g + 1) * per).enumerate() {
            let (gamma, beta) = (scale[ch], shift[ch]);
            let mut ds = 0.0f64;
            let mut db = 0.0f64;
            let span = ch * hw..(ch + 1) * hw;
            for ((dx, &x), &dout) in dxhat[j * hw..(j + 1) * hw]
                .iter_mut()
                .zip(&a[span.clone()])
                .zip(&d_out[span])
            {
                let xhat = (x - mean) * rstd;
                let y = gamma * xhat + beta;
                let dy = if y > T::zero() { dout } else { dout * slope };
                ds += (dy * xhat).as_f64();
                db += dy.as_f64();
                *dx = dy * gamma;
                sum_d += dx.as_f64();
                sum_dx += (*dx * xhat).as_f64();
            }
            d_scale[ch] = d_scale[ch] + T::of(ds);
            d_shift[ch] = d_shift[ch] + T::of(db);
        }
        let mean_d = T::of(sum_d / m);
        let mean_dx = T::of(sum_dx / m);
        for (j, ch) in (g * per..(g + 1) * per).enumerate() {
            let span = ch * hw..(ch + 1) * hw;
            for ((o, &x), &dx) in d_a[span.clone()]
                .iter_mut()
                .zip(&a[span])
                .zip(&dxhat[j * hw..(j + 1) * hw])
            {
                let xhat = (x - mean) * rstd;
                *o = *o + rstd * (dx - mean_d - xhat * mean_dx);
            }
        }
    }
}

fn add_into<T: Scalar>(dst: &mut Vec<T>, src: &[T]) {
    if dst.is_empty() {
        dst.extend_from_slice(src);
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + *s;
        }
    }
}

/// Saved forward state of one pass through a contiguous run of layers.
#[derive(Clone, Debug)]
pub(crate) struct Stream<T> {
    pub h: usize,
    pub w: usize,
    /// `acts[0]` is the input, `acts[l]` the output of conv `l`. Entries that
    /// were never computed or were released are empty.
    pub acts: Vec<Vec<T>>,
    /// Group statistics of the normalization preceding conv `l`.
    pub stats: Vec<Vec<(T, T)>>,
}

impl<T: Scalar> Stream<T> {
    pub fn new(spec: &NetworkSpec, input: Vec<T>, h: usize, w: usize) -> Self {
        let n = spec.num_conv_layers + 1;
        let mut acts = vec![Vec::new(); n];
        acts[0] = input;
        Self {
            h,
            w,
            acts,
            stats: vec![Vec::new(); n],
        }
    }

    pub fn output(&self) -> &[T] {
        self.acts.last().expect("non-empty stream")
    }
}

/// Runs the layers of one spec over one parameter buffer.
pub(crate) struct Engine<'a, T> {
    pub spec: &'a NetworkSpec,
    pub layout: &'a Layout,
    pub params: &'a [T],
    pub scratch: RefCell<Scratch<T>>,
}

/// Saved state of an encode pass.
pub(crate) struct EncodeTrace<T> {
    pub cover: Stream<T>,
    pub secret: Stream<T>,
    pub merged: Stream<T>,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn slope(&self) -> T {
        T::of(self.spec.lrelu_slope)
    }

    fn hw(s: &Stream<T>) -> usize {
        s.h * s.w
    }

    /// Input to conv `layer`, computing normalization statistics if needed.
    fn layer_input(&self, s: &mut Stream<T>, layer: usize) -> Vec<T> {
        let slot = self.layout.layer(layer);
        if self.spec.has_norm(layer) {
            let (h, stats) = norm_act_forward(
                &s.acts[layer - 1],
                slot.cin,
                Self::hw(s),
                self.spec.gn_groups,
                &self.params[slot.gn_scale.clone().unwrap()],
                &self.params[slot.gn_shift.clone().unwrap()],
                self.slope(),
            );
            s.stats[layer] = stats;
            h
        } else {
            s.acts[layer - 1].clone()
        }
    }

    fn replay_input(&self, s: &Stream<T>, layer: usize) -> Vec<T> {
        let slot = self.layout.layer(layer);
        if self.spec.has_norm(layer) {
            norm_act_replay(
                &s.acts[layer - 1],
                slot.cin,
                Self::hw(s),
                &s.stats[layer],
                &self.params[slot.gn_scale.clone().unwrap()],
                &self.params[slot.gn_shift.clone().unwrap()],
                self.slope(),
            )
        } else {
            s.acts[layer - 1].clone()
        }
    }

    /// Runs convs `layers` over `s`. Without `retain`, activations no longer
    /// needed by later layers are released as the pass moves on.
    pub fn advance(&self, s: &mut Stream<T>, layers: Range<usize>, retain: bool) {
        let hw = Self::hw(s);
        let scratch = &mut *self.scratch.borrow_mut();
        for layer in layers {
            let slot = self.layout.layer(layer);
            let input = self.layer_input(s, layer);
            let mut out = vec![T::zero(); slot.cout * hw];
            conv_forward(
                self.params,
                slot,
                self.spec.kernel,
                &input,
                s.h,
                s.w,
                0..slot.cout,
                &mut out,
                scratch,
            );
            if let Some(src) = self.spec.skip_source(layer) {
                for (o, v) in out.iter_mut().zip(&s.acts[src]) {
                    *o = *o + *v;
                }
            }
            s.acts[layer] = out;
            if !retain && layer >= 2 {
                s.acts[layer - 2] = Vec::new();
            }
        }
    }

    /// Backward over convs `layers` (visited in reverse). `d[l]` holds the
    /// gradient w.r.t. `acts[l]`; gradients of the parameters accumulate into
    /// `grad`. The input gradient `d[0]` is only produced when requested.
    pub fn retreat(
        &self,
        s: &Stream<T>,
        d: &mut [Vec<T>],
        layers: Range<usize>,
        grad: &mut [T],
        input_grad: bool,
    ) {
        let hw = Self::hw(s);
        let mut scratch = self.scratch.borrow_mut();
        for layer in layers.rev() {
            let d_out = std::mem::take(&mut d[layer]);
            if d_out.is_empty() {
                continue;
            }
            let slot = self.layout.layer(layer);
            if let Some(src) = self.spec.skip_source(layer) {
                add_into(&mut d[src], &d_out);
            }
            let input = self.replay_input(s, layer);
            let want_input = layer > 1 || input_grad;
            let mut d_in = if want_input {
                vec![T::zero(); slot.cin * hw]
            } else {
                Vec::new()
            };
            conv_backward(
                self.params,
                slot,
                self.spec.kernel,
                &input,
                s.h,
                s.w,
                0..slot.cout,
                &d_out,
                grad,
                want_input.then_some(&mut d_in[..]),
                &mut scratch,
            );
            if want_input {
                self.input_backward(s, layer, &d_in, &mut d[layer - 1], grad);
            }
        }
    }

    /// Pushes the gradient w.r.t. conv `layer`'s input back onto `acts[layer - 1]`.
    fn input_backward(
        &self,
        s: &Stream<T>,
        layer: usize,
        d_in: &[T],
        d_prev: &mut Vec<T>,
        grad: &mut [T],
    ) {
        let slot = self.layout.layer(layer);
        if !self.spec.has_norm(layer) {
            add_into(d_prev, d_in);
            return;
        }
        let hw = Self::hw(s);
        if d_prev.is_empty() {
            d_prev.resize(slot.cin * hw, T::zero());
        }
        let scale_r = slot.gn_scale.clone().unwrap();
        let shift_r = slot.gn_shift.clone().unwrap();
        let mut d_scale = vec![T::zero(); scale_r.len()];
        let mut d_shift = vec![T::zero(); shift_r.len()];
        norm_act_backward(
            &s.acts[layer - 1],
            slot.cin,
            hw,
            &s.stats[layer],
            &self.params[scale_r.clone()],
            &self.params[shift_r.clone()],
            self.slope(),
            d_in,
            d_prev,
            &mut d_scale,
            &mut d_shift,
        );
        for (g, v) in grad[scale_r].iter_mut().zip(&d_scale) {
            *g = *g + *v;
        }
        for (g, v) in grad[shift_r].iter_mut().zip(&d_shift) {
            *g = *g + *v;
        }
    }

    /// Single-input pass (denoise and decode modes).
    pub fn single_forward(&self, input: Vec<T>, h: usize, w: usize, retain: bool) -> Stream<T> {
        let mut s = Stream::new(self.spec, input, h, w);
        self.advance(&mut s, 1..self.spec.num_conv_layers + 1, retain);
        s
    }

    /// Backward of [`Self::single_forward`]; returns the input gradient when
    /// requested.
    pub fn single_backward(
        &self,
        s: &Stream<T>,
        d_out: Vec<T>,
        grad: &mut [T],
        input_grad: bool,
    ) -> Option<Vec<T>> {
        let l = self.spec.num_conv_layers;
        let mut d = vec![Vec::new(); l + 1];
        d[l] = d_out;
        self.retreat(s, &mut d, 1..l + 1, grad, input_grad);
        input_grad.then(|| std::mem::take(&mut d[0]))
    }

    /// Two-input pass: weight-shared prefixes for cover and secret, the split
    /// conv with one half of its filters per branch, then the common suffix.
    pub fn encode_forward(
        &self,
        cover: Vec<T>,
        secret: Vec<T>,
        h: usize,
        w: usize,
        retain: bool,
    ) -> EncodeTrace<T> {
        let split = self.spec.split_layer;
        let hw = h * w;
        let mut cs = Stream::new(self.spec, cover, h, w);
        let mut ss = Stream::new(self.spec, secret, h, w);
        self.advance(&mut cs, 1..split, retain);
        self.advance(&mut ss, 1..split, retain);

        let slot = self.layout.layer(split);
        let half = slot.cout / 2;
        let hc = self.layer_input(&mut cs, split);
        let hs = self.layer_input(&mut ss, split);
        let mut out = vec![T::zero(); slot.cout * hw];
        {
            let scratch = &mut *self.scratch.borrow_mut();
            let k = self.spec.kernel;
            conv_forward(self.params, slot, k, &hc, h, w, 0..half, &mut out, scratch);
            conv_forward(self.params, slot, k, &hs, h, w, half..slot.cout, &mut out, scratch);
        }
        if let Some(src) = self.spec.skip_source(split) {
            // Each output channel keeps the shortcut of the branch whose
            // filters produced it.
            let (lo, hi) = out.split_at_mut(half * hw);
            for (o, v) in lo.iter_mut().zip(&cs.acts[src][..half * hw]) {
                *o = *o + *v;
            }
            for (o, v) in hi.iter_mut().zip(&ss.acts[src][half * hw..]) {
                *o = *o + *v;
            }
        }
        if !retain {
            for s in [&mut cs, &mut ss] {
                for a in &mut s.acts[..split.saturating_sub(2)] {
                    *a = Vec::new();
                }
            }
        }
        let mut ms = Stream::new(self.spec, Vec::new(), h, w);
        ms.acts[split] = out;
        self.advance(&mut ms, split + 1..self.spec.num_conv_layers + 1, retain);
        EncodeTrace {
            cover: cs,
            secret: ss,
            merged: ms,
        }
    }

    /// Backward of [`Self::encode_forward`]. Inputs are treated as data, so no
    /// input gradient is produced.
    pub fn encode_backward(&self, t: &EncodeTrace<T>, d_out: Vec<T>, grad: &mut [T]) {
        let l = self.spec.num_conv_layers;
        let split = self.spec.split_layer;
        let hw = t.merged.h * t.merged.w;
        let mut dm = vec![Vec::new(); l + 1];
        dm[l] = d_out;
        self.retreat(&t.merged, &mut dm, split + 1..l + 1, grad, false);
        let d_split = std::mem::take(&mut dm[split]);

        let slot = self.layout.layer(split);
        let half = slot.cout / 2;
        let mut dc = vec![Vec::new(); l + 1];
        let mut ds = vec![Vec::new(); l + 1];
        if d_split.is_empty() {
            return;
        }
        if let Some(src) = self.spec.skip_source(split) {
            let mut dcs = vec![T::zero(); slot.cout * hw];
            dcs[..half * hw].copy_from_slice(&d_split[..half * hw]);
            let mut dss = vec![T::zero(); slot.cout * hw];
            dss[half * hw..].copy_from_slice(&d_split[half * hw..]);
            dc[src] = dcs;
            ds[src] = dss;
        }
        for (stream, d, rows) in [(&t.cover, &mut dc, 0..half), (&t.secret, &mut ds, half..slot.cout)] {
            let input = self.replay_input(stream, split);
            let mut d_in = vec![T::zero(); slot.cin * hw];
            conv_backward(
                self.params,
                slot,
                self.spec.kernel,
                &input,
                stream.h,
                stream.w,
                rows,
                &d_split,
                grad,
                Some(&mut d_in[..]),
                &mut self.scratch.borrow_mut(),
            );
            self.input_backward(stream, split, &d_in, &mut d[split - 1], grad);
            self.retreat(stream, d, 1..split, grad, false);
        }
    }
}
