//! Forward and reverse-mode passes of the score network.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

#[cfg_attr(feature = "std", allow(unused_imports))]
use num_traits::Float;

use super::arch::Architecture;
use super::ops::{
    conv_backward, conv_forward, silu, silu_backward, silu_into, upsample_nearest,
    upsample_nearest_backward, ConvShape, Scalar,
};

// Indices into `Architecture::layout()`; each bias follows its weight.
const IN: usize = 0;
const RES1_CONV1: usize = 2;
const RES1_CONV2: usize = 4;
const DOWN: usize = 6;
const RES2_CONV1: usize = 8;
const RES2_CONV2: usize = 10;
const UP: usize = 12;
const OUT: usize = 14;
const DENSE1: usize = 16;
const DENSE2: usize = 18;

/// Scale applied to the noisy field before it enters the network.
#[inline]
pub(crate) fn input_scale(sigma: f64) -> f64 {
    1.0 / (1.0 + sigma * sigma).sqrt()
}

/// Intermediate activations of one item, kept for the backward pass. Opaque
/// outside the crate.
pub struct ItemTape<T> {
    inp: Vec<T>,
    h0: Vec<T>,
    a1: Vec<T>,
    r1: Vec<T>,
    f1: Vec<T>,
    d0: Vec<T>,
    a2: Vec<T>,
    r2: Vec<T>,
    cat: Vec<T>,
    u1: Vec<T>,
    emb: Vec<T>,
    hid_pre: Vec<T>,
    film: Vec<T>,
}

/// Borrowed view of a parameter vector laid out per [`Architecture`].
pub(crate) struct Network<'a, T: Scalar> {
    arch: &'a Architecture,
    params: &'a [T],
    ranges: Vec<Range<usize>>,
    freqs: Vec<f64>,
}

struct Dims {
    h: usize,
    w: usize,
    h2: usize,
    w2: usize,
}

impl Dims {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            h2: (h - 1) / 2 + 1,
            w2: (w - 1) / 2 + 1,
        }
    }

    fn hw(&self) -> usize {
        self.h * self.w
    }

    fn hw2(&self) -> usize {
        self.h2 * self.w2
    }
}

impl<'a, T: Scalar> Network<'a, T> {
    pub fn new(arch: &'a Architecture, params: &'a [T]) -> Self {
        let layout = arch.layout();
        debug_assert_eq!(params.len(), arch.param_count());
        Self {
            arch,
            params,
            ranges: layout.iter().map(|b| b.range()).collect(),
            freqs: arch.frequencies(),
        }
    }

    fn p(&self, index: usize) -> &'a [T] {
        &self.params[self.ranges[index].clone()]
    }

    fn conv(&self, c_in: usize, c_out: usize, h: usize, w: usize, stride: usize) -> ConvShape {
        ConvShape {
            c_in,
            c_out,
            h,
            w,
            stride,
        }
    }

    fn embed(&self, sigma: f64) -> Vec<T> {
        let ls = sigma.ln();
        let f = self.freqs.len();
        let mut emb = vec![T::zero(); 2 * f];
        for (i, &omega) in self.freqs.iter().enumerate() {
            emb[i] = T::of((omega * ls).sin());
            emb[f + i] = T::of((omega * ls).cos());
        }
        emb
    }

    /// Dense head: returns `(hidden pre-activation, film vector)`.
    fn head(&self, emb: &[T]) -> (Vec<T>, Vec<T>) {
        let (hd, ed, fd) = (self.arch.embed_hidden, self.arch.embed_dim(), self.arch.film_dim());
        let (w1, b1) = (self.p(DENSE1), self.p(DENSE1 + 1));
        let hid_pre: Vec<T> = (0..hd)
            .map(|j| {
                w1[j * ed..(j + 1) * ed]
                    .iter()
                    .zip(emb)
                    .fold(b1[j], |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        let hid: Vec<T> = hid_pre.iter().map(|&v| silu(v)).collect();
        let (w2, b2) = (self.p(DENSE2), self.p(DENSE2 + 1));
        let film = (0..fd)
            .map(|j| {
                w2[j * hd..(j + 1) * hd]
                    .iter()
                    .zip(&hid)
                    .fold(b2[j], |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        (hid_pre, film)
    }

    fn conv_layer(&self, index: usize, s: &ConvShape, input: &[T], col: &mut Vec<T>) -> Vec<T> {
        let mut out = vec![T::zero(); s.c_out * s.out_len()];
        conv_forward(input, self.p(index), self.p(index + 1), s, col, &mut out);
        out
    }

    /// Predicted noise for one item. `mt` and `x` are `h * w` row-major.
    pub fn forward_item(
        &self,
        mt: &[T],
        x: &[T],
        sigma: f64,
        (h, w): (usize, usize),
        keep: bool,
    ) -> (Vec<T>, Option<ItemTape<T>>) {
        let d = Dims::new(h, w);
        let c = self.arch.width;
        let (hw, hw2) = (d.hw(), d.hw2());
        let mut col = Vec::new();

        let emb = self.embed(sigma);
        let (hid_pre, film) = self.head(&emb);
        let (g1, b1) = (&film[0..c], &film[c..2 * c]);
        let (g2, b2) = (&film[2 * c..4 * c], &film[4 * c..6 * c]);

        let scale = T::of(input_scale(sigma));
        let mut inp = Vec::with_capacity(2 * hw);
        inp.extend(mt.iter().map(|&v| v * scale));
        inp.extend_from_slice(x);

        let full = |ci, co| self.conv(ci, co, d.h, d.w, 1);
        let half = |ci, co| self.conv(ci, co, d.h2, d.w2, 1);

        let h0 = self.conv_layer(IN, &full(2, c), &inp, &mut col);
        let mut s = vec![T::zero(); h0.len()];
        silu_into(&h0, &mut s);
        let a1 = self.conv_layer(RES1_CONV1, &full(c, c), &s, &mut col);
        silu_into(&a1, &mut s);
        let mut r1 = self.conv_layer(RES1_CONV2, &full(c, c), &s, &mut col);
        for (r, &h) in r1.iter_mut().zip(&h0) {
            *r = *r + h;
        }
        let f1 = film_apply(&r1, g1, b1, hw);

        silu_into(&f1, &mut s);
        let d0 = self.conv_layer(DOWN, &self.conv(c, 2 * c, d.h, d.w, 2), &s, &mut col);
        let mut s2 = vec![T::zero(); d0.len()];
        silu_into(&d0, &mut s2);
        let a2 = self.conv_layer(RES2_CONV1, &half(2 * c, 2 * c), &s2, &mut col);
        silu_into(&a2, &mut s2);
        let mut r2 = self.conv_layer(RES2_CONV2, &half(2 * c, 2 * c), &s2, &mut col);
        for (r, &v) in r2.iter_mut().zip(&d0) {
            *r = *r + v;
        }
        let f2 = film_apply(&r2, g2, b2, hw2);

        let mut cat = vec![T::zero(); 3 * c * hw];
        upsample_nearest(&f2, 2 * c, (d.h2, d.w2), (d.h, d.w), &mut cat[..2 * c * hw]);
        cat[2 * c * hw..].copy_from_slice(&f1);
        let mut s3 = vec![T::zero(); cat.len()];
        silu_into(&cat, &mut s3);
        let u1 = self.conv_layer(UP, &full(3 * c, c), &s3, &mut col);
        silu_into(&u1, &mut s);
        let out = self.conv_layer(OUT, &full(c, 1), &s, &mut col);

        let tape = keep.then(|| ItemTape {
            inp,
            h0,
            a1,
            r1,
            f1,
            d0,
            a2,
            r2,
            cat,
            u1,
            emb,
            hid_pre,
            film,
        });
        (out, tape)
    }

    fn grad_pair<'g>(&self, grad: &'g mut [T], index: usize) -> (&'g mut [T], &'g mut [T]) {
        let (wr, br) = (&self.ranges[index], &self.ranges[index + 1]);
        debug_assert_eq!(wr.end, br.start);
        grad[wr.start..br.end].split_at_mut(wr.len())
    }

    fn conv_back(
        &self,
        index: usize,
        s: &ConvShape,
        input: &[T],
        d_out: &[T],
        grad: &mut [T],
        want_input: bool,
        col: &mut Vec<T>,
    ) -> Option<Vec<T>> {
        let weight = self.p(index);
        let (dw, db) = self.grad_pair(grad, index);
        if want_input {
            let mut d_in = vec![T::zero(); input.len()];
            conv_backward(input, weight, s, d_out, dw, db, Some(&mut d_in), col);
            Some(d_in)
        } else {
            conv_backward(input, weight, s, d_out, dw, db, None, col);
            None
        }
    }

    /// Accumulates `d(out)/d(params)^T d_out` into `grad`.
    pub fn backward_item(&self, tape: &ItemTape<T>, d_out: &[T], (h, w): (usize, usize), grad: &mut [T]) {
        let d = Dims::new(h, w);
        let c = self.arch.width;
        let (hw, hw2) = (d.hw(), d.hw2());
        let mut col = Vec::new();
        let full = |ci, co| self.conv(ci, co, d.h, d.w, 1);
        let half = |ci, co| self.conv(ci, co, d.h2, d.w2, 1);
        let act = |pre: &[T]| {
            let mut s = vec![T::zero(); pre.len()];
            silu_into(pre, &mut s);
            s
        };
        let film = &tape.film;
        let mut d_film = vec![T::zero(); film.len()];

        // out conv
        let mut d_u1 = self
            .conv_back(OUT, &full(c, 1), &act(&tape.u1), d_out, grad, true, &mut col)
            .unwrap();
        silu_backward(&tape.u1, &mut d_u1);
        // up conv over silu(concat)
        let mut d_cat = self
            .conv_back(UP, &full(3 * c, c), &act(&tape.cat), &d_u1, grad, true, &mut col)
            .unwrap();
        silu_backward(&tape.cat, &mut d_cat);
        let (d_up, d_skip) = d_cat.split_at(2 * c * hw);

        let mut d_f2 = vec![T::zero(); 2 * c * hw2];
        upsample_nearest_backward(d_up, 2 * c, (d.h2, d.w2), (d.h, d.w), &mut d_f2);
        let d_r2 = film_backward(&tape.r2, &film[2 * c..4 * c], &d_f2, hw2, &mut d_film[2 * c..6 * c]);

        // r2 = d0 + conv2(silu(conv1(silu(d0))))
        let mut d_a2 = self
            .conv_back(RES2_CONV2, &half(2 * c, 2 * c), &act(&tape.a2), &d_r2, grad, true, &mut col)
            .unwrap();
        silu_backward(&tape.a2, &mut d_a2);
        let mut d_s = self
            .conv_back(RES2_CONV1, &half(2 * c, 2 * c), &act(&tape.d0), &d_a2, grad, true, &mut col)
            .unwrap();
        silu_backward(&tape.d0, &mut d_s);
        let mut d_d0 = d_r2;
        for (a, &b) in d_d0.iter_mut().zip(&d_s) {
            *a = *a + b;
        }

        let mut d_f1 = self
            .conv_back(DOWN, &self.conv(c, 2 * c, d.h, d.w, 2), &act(&tape.f1), &d_d0, grad, true, &mut col)
            .unwrap();
        silu_backward(&tape.f1, &mut d_f1);
        for (a, &b) in d_f1.iter_mut().zip(d_skip) {
            *a = *a + b;
        }
        let (dg1, rest) = d_film.split_at_mut(c);
        let d_r1 = film_backward_split(&tape.r1, &film[0..c], &d_f1, hw, dg1, &mut rest[..c]);

        let h0 = &tape.h0;
        let mut d_a1 = self
            .conv_back(RES1_CONV2, &full(c, c), &act(&tape.a1), &d_r1, grad, true, &mut col)
            .unwrap();
        silu_backward(&tape.a1, &mut d_a1);
        let mut d_s0 = self
            .conv_back(RES1_CONV1, &full(c, c), &act(h0), &d_a1, grad, true, &mut col)
            .unwrap();
        silu_backward(h0, &mut d_s0);
        let mut d_h0 = d_r1;
        for (a, &b) in d_h0.iter_mut().zip(&d_s0) {
            *a = *a + b;
        }
        self.conv_back(IN, &full(2, c), &tape.inp, &d_h0, grad, false, &mut col);

        // dense head
        let (hd, ed, fd) = (self.arch.embed_hidden, self.arch.embed_dim(), self.arch.film_dim());
        let hid: Vec<T> = tape.hid_pre.iter().map(|&v| silu(v)).collect();
        let w2 = self.p(DENSE2);
        let mut d_hid = vec![T::zero(); hd];
        {
            let (dw2, db2) = self.grad_pair(grad, DENSE2);
            for j in 0..fd {
                let g = d_film[j];
                db2[j] = db2[j] + g;
                let row = &mut dw2[j * hd..(j + 1) * hd];
                for k in 0..hd {
                    row[k] = row[k] + g * hid[k];
                    d_hid[k] = d_hid[k] + g * w2[j * hd + k];
                }
            }
        }
        silu_backward(&tape.hid_pre, &mut d_hid);
        let (dw1, db1) = self.grad_pair(grad, DENSE1);
        for j in 0..hd {
            let g = d_hid[j];
            db1[j] = db1[j] + g;
            let row = &mut dw1[j * ed..(j + 1) * ed];
            for (r, &e) in row.iter_mut().zip(&tape.emb) {
                *r = *r + g * e;
            }
        }
    }
}

/// `out[c, p] = r[c, p] * (1 + gamma[c]) + beta[c]`.
fn film_apply<T: Scalar>(r: &[T], gamma: &[T], beta: &[T], plane: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(r.len());
    for (ch, chunk) in r.chunks(plane).enumerate() {
        let g = T::one() + gamma[ch];
        out.extend(chunk.iter().map(|&v| v * g + beta[ch]));
    }
    out
}

/// Backward of [`film_apply`] with `d_gb = [d_gamma; d_beta]` contiguous.
fn film_backward<T: Scalar>(r: &[T], gamma: &[T], d_f: &[T], plane: usize, d_gb: &mut [T]) -> Vec<T> {
    let n = gamma.len();
    let (dg, db) = d_gb.split_at_mut(n);
    film_backward_split(r, gamma, d_f, plane, dg, db)
}

fn film_backward_split<T: Scalar>(
    r: &[T],
    gamma: &[T],
    d_f: &[T],
    plane: usize,
    d_gamma: &mut [T],
    d_beta: &mut [T],
) -> Vec<T> {
    let mut d_r = vec![T::zero(); r.len()];
    for ch in 0..gamma.len() {
        let span = ch * plane..(ch + 1) * plane;
        let g = T::one() + gamma[ch];
        let (mut sg, mut sb) = (T::zero(), T::zero());
        for ((dr, &df), &rv) in d_r[span.clone()].iter_mut().zip(&d_f[span.clone()]).zip(&r[span]) {
            *dr = df * g;
            sg = sg + df * rv;
            sb = sb + df;
        }
        d_gamma[ch] = d_gamma[ch] + sg;
        d_beta[ch] = d_beta[ch] + sb;
    }
    d_r
}
