//! A small 2-D U-Net over `(frequency, time)` grids with a hand-written
//! backward pass.
//!
//! Full layout (`b` = base channels, `C` = output channels):
//!
//! ```text
//! x0[1]  --enc1 3x3-> a1[b]  --pad/pool-> p1[b]
//! p1     --enc2 3x3-> a2[2b] --pad/pool-> p2[2b]
//! p2     --bott 3x3-> a3[2b] --up/crop--> u2[2b] ++ a2 -> c2[4b]
//! c2     --dec2 3x3-> a4[b]  --up/crop--> u1[b]  ++ a1 -> c1[2b]
//! c1     --dec1 3x3-> f_s[C]   (linear output)
//! ```
//!
//! Hidden layers use a leaky-linear activation. Odd spatial sizes are
//! reflect-padded by one row/column before pooling and cropped back after
//! upsampling.

use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn concat(a: &Tensor3, b: &Tensor3) -> Tensor3 {
        debug_assert_eq!((a.height, a.width), (b.height, b.width));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor3 {
            channels: a.channels + b.channels,
            height: a.height,
            width: a.width,
            data,
        }
    }

    fn split(self, first: usize) -> (Tensor3, Tensor3) {
        let n = self.height * self.width;
        let mut data = self.data;
        let rest = data.split_off(first * n);
        (
            Tensor3 {
                channels: first,
                height: self.height,
                width: self.width,
                data,
            },
            Tensor3 {
                channels: self.channels - first,
                height: self.height,
                width: self.width,
                data: rest,
            },
        )
    }
}

/// Square convolution with zero "same" padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    /// 1 or 3.
    pub kernel: usize,
    /// `[out][in][ky][kx]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weight[((o * self.in_channels + i) * self.kernel + ky) * self.kernel + kx]
    }

    /// Valid `(dst_start, src_start, len)` ranges for one kernel offset along
    /// an axis of length `n`.
    #[inline]
    fn span(n: usize, offset: isize) -> (usize, usize, usize) {
        if offset >= 0 {
            let o = offset as usize;
            (0, o, n.saturating_sub(o))
        } else {
            let o = (-offset) as usize;
            (o, 0, n.saturating_sub(o))
        }
    }

    pub fn forward(&self, x: &Tensor3) -> Tensor3 {
        let (h, w) = (x.height, x.width);
        let half = (self.kernel / 2) as isize;
        let mut out = Tensor3::zeros(self.out_channels, h, w);
        for o in 0..self.out_channels {
            let dst = out.plane_mut(o);
            dst.iter_mut().for_each(|v| *v = self.bias[o]);
            for i in 0..self.in_channels {
                let src = x.plane(i);
                for ky in 0..self.kernel {
                    let (y0, sy0, ny) = Self::span(h, ky as isize - half);
                    for kx in 0..self.kernel {
                        let wt = self.w(o, i, ky, kx);
                        if wt == 0.0 {
                            continue;
                        }
                        let (x0, sx0, nx) = Self::span(w, kx as isize - half);
                        for r in 0..ny {
                            let d = &mut dst[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                            let s = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                            d.iter_mut().zip(s).for_each(|(d, s)| *d += wt * s);
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `want_input` is set.
    pub fn backward(&self, x: &Tensor3, grad_out: &Tensor3, grad: &mut Conv2d, want_input: bool) -> Option<Tensor3> {
        let (h, w) = (x.height, x.width);
        let half = (self.kernel / 2) as isize;
        let k = self.kernel;
        let mut grad_in = want_input.then(|| Tensor3::zeros(self.in_channels, h, w));
        for o in 0..self.out_channels {
            let g = grad_out.plane(o);
            grad.bias[o] += g.iter().sum::<f64>();
            for i in 0..self.in_channels {
                let src = x.plane(i);
                for ky in 0..k {
                    let (y0, sy0, ny) = Self::span(h, ky as isize - half);
                    for kx in 0..k {
                        let (x0, sx0, nx) = Self::span(w, kx as isize - half);
                        let mut acc = 0.0;
                        for r in 0..ny {
                            let gr = &g[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                            let s = &src[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                            acc += gr.iter().zip(s).map(|(a, b)| a * b).sum::<f64>();
                        }
                        grad.weight[((o * self.in_channels + i) * k + ky) * k + kx] += acc;
                        if let Some(gi) = grad_in.as_mut() {
                            let wt = self.w(o, i, ky, kx);
                            if wt == 0.0 {
                                continue;
                            }
                            let dst = gi.plane_mut(i);
                            for r in 0..ny {
                                let d = &mut dst[(sy0 + r) * w + sx0..(sy0 + r) * w + sx0 + nx];
                                let gr = &g[(y0 + r) * w + x0..(y0 + r) * w + x0 + nx];
                                d.iter_mut().zip(gr).for_each(|(d, g)| *d += wt * g);
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnetArch {
    /// Two-level encoder/decoder with skip connections.
    Unet,
    /// A single 1x1 convolution; the mask predictor becomes a per-bin
    /// logistic regression on the log magnitude.
    Pointwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnetWeights {
    pub arch: UnetArch,
    pub layers: Vec<(String, Conv2d)>,
}

impl UnetWeights {
    pub fn zeros(arch: UnetArch, base: usize, out_channels: usize) -> Self {
        let layers = match arch {
            UnetArch::Unet => vec![
                ("enc1".to_string(), Conv2d::zeros(1, base, 3)),
                ("enc2".to_string(), Conv2d::zeros(base, 2 * base, 3)),
                ("bottleneck".to_string(), Conv2d::zeros(2 * base, 2 * base, 3)),
                ("dec2".to_string(), Conv2d::zeros(4 * base, base, 3)),
                ("dec1".to_string(), Conv2d::zeros(2 * base, out_channels, 3)),
            ],
            UnetArch::Pointwise => vec![("proj".to_string(), Conv2d::zeros(1, out_channels, 1))],
        };
        Self { arch, layers }
    }

    fn layer(&self, i: usize) -> &Conv2d {
        &self.layers[i].1
    }

    pub fn forward(&self, input: &Tensor3) -> (Tensor3, UnetCache) {
        match self.arch {
            UnetArch::Pointwise => {
                let out = self.layer(0).forward(input);
                (
                    out,
                    UnetCache {
                        x0: input.clone(),
                        ..UnetCache::default()
                    },
                )
            }
            UnetArch::Unet => {
                let mut a1 = self.layer(0).forward(input);
                leaky_inplace(&mut a1);
                let p1 = pool2(&a1);
                let mut a2 = self.layer(1).forward(&p1);
                leaky_inplace(&mut a2);
                let p2 = pool2(&a2);
                let mut a3 = self.layer(2).forward(&p2);
                leaky_inplace(&mut a3);
                let u2 = upsample2(&a3, a2.height, a2.width);
                let c2 = Tensor3::concat(&u2, &a2);
                let mut a4 = self.layer(3).forward(&c2);
                leaky_inplace(&mut a4);
                let u1 = upsample2(&a4, a1.height, a1.width);
                let c1 = Tensor3::concat(&u1, &a1);
                let out = self.layer(4).forward(&c1);
                (
                    out,
                    UnetCache {
                        x0: input.clone(),
                        a1,
                        p1,
                        a2,
                        p2,
                        a3,
                        c2,
                        a4,
                        c1,
                    },
                )
            }
        }
    }

    /// Accumulates the gradient of the output into `grad` (same layout).
    pub fn backward(&self, cache: &UnetCache, grad_out: &Tensor3, grad: &mut UnetWeights) {
        match self.arch {
            UnetArch::Pointwise => {
                self.layer(0)
                    .backward(&cache.x0, grad_out, &mut grad.layers[0].1, false);
            }
            UnetArch::Unet => {
                let g_c1 = self
                    .layer(4)
                    .backward(&cache.c1, grad_out, &mut grad.layers[4].1, true)
                    .expect("input grad");
                let (g_u1, g_a1_skip) = g_c1.split(cache.a4.channels);
                let mut g_a4 = upsample2_backward(&g_u1, cache.a4.height, cache.a4.width);
                leaky_backward(&cache.a4, &mut g_a4);
                let g_c2 = self
                    .layer(3)
                    .backward(&cache.c2, &g_a4, &mut grad.layers[3].1, true)
                    .expect("input grad");
                let (g_u2, g_a2_skip) = g_c2.split(cache.a3.channels);
                let mut g_a3 = upsample2_backward(&g_u2, cache.a3.height, cache.a3.width);
                leaky_backward(&cache.a3, &mut g_a3);
                let g_p2 = self
                    .layer(2)
                    .backward(&cache.p2, &g_a3, &mut grad.layers[2].1, true)
                    .expect("input grad");
                let mut g_a2 = pool2_backward(&g_p2, cache.a2.height, cache.a2.width);
                add_inplace(&mut g_a2, &g_a2_skip);
                leaky_backward(&cache.a2, &mut g_a2);
                let g_p1 = self
                    .layer(1)
                    .backward(&cache.p1, &g_a2, &mut grad.layers[1].1, true)
                    .expect("input grad");
                let mut g_a1 = pool2_backward(&g_p1, cache.a1.height, cache.a1.width);
                add_inplace(&mut g_a1, &g_a1_skip);
                leaky_backward(&cache.a1, &mut g_a1);
                self.layer(0).backward(&cache.x0, &g_a1, &mut grad.layers[0].1, false);
            }
        }
    }
}

/// Activations kept from the forward pass for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct UnetCache {
    x0: Tensor3,
    a1: Tensor3,
    p1: Tensor3,
    a2: Tensor3,
    p2: Tensor3,
    a3: Tensor3,
    c2: Tensor3,
    a4: Tensor3,
    c1: Tensor3,
}

impl Default for Tensor3 {
    fn default() -> Self {
        Tensor3::zeros(0, 0, 0)
    }
}

fn leaky_inplace(t: &mut Tensor3) {
    t.data.iter_mut().for_each(|v| {
        if *v <= 0.0 {
            *v *= LEAKY_SLOPE
        }
    });
}

/// `grad *= act'(z)`, reading the sign of z off the activation output.
fn leaky_backward(activated: &Tensor3, grad: &mut Tensor3) {
    grad.data.iter_mut().zip(&activated.data).for_each(|(g, &a)| {
        if a <= 0.0 {
            *g *= LEAKY_SLOPE
        }
    });
}

fn add_inplace(a: &mut Tensor3, b: &Tensor3) {
    a.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y);
}

/// Source index for position `i` of an axis of length `n` reflect-padded to
/// even length.
#[inline]
fn reflect_even(i: usize, n: usize) -> usize {
    if i < n {
        i
    } else {
        n.saturating_sub(2)
    }
}

/// Reflect-pad to even size, then 2x2 average pooling.
fn pool2(x: &Tensor3) -> Tensor3 {
    let (h, w) = (x.height, x.width);
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = Tensor3::zeros(x.channels, oh, ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            let (ya, yb) = (reflect_even(2 * y, h), reflect_even(2 * y + 1, h));
            for xo in 0..ow {
                let (xa, xb) = (reflect_even(2 * xo, w), reflect_even(2 * xo + 1, w));
                dst[y * ow + xo] = 0.25 * (src[ya * w + xa] + src[ya * w + xb] + src[yb * w + xa] + src[yb * w + xb]);
            }
        }
    }
    out
}

fn pool2_backward(g: &Tensor3, h: usize, w: usize) -> Tensor3 {
    let (oh, ow) = (g.height, g.width);
    let mut out = Tensor3::zeros(g.channels, h, w);
    for c in 0..g.channels {
        let src = g.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..oh {
            let (ya, yb) = (reflect_even(2 * y, h), reflect_even(2 * y + 1, h));
            for xo in 0..ow {
                let (xa, xb) = (reflect_even(2 * xo, w), reflect_even(2 * xo + 1, w));
                let v = 0.25 * src[y * ow + xo];
                dst[ya * w + xa] += v;
                dst[ya * w + xb] += v;
                dst[yb * w + xa] += v;
                dst[yb * w + xb] += v;
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling cropped to `h x w`.
fn upsample2(x: &Tensor3, h: usize, w: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..h {
            for xo in 0..w {
                dst[y * w + xo] = src[(y / 2) * x.width + xo / 2];
            }
        }
    }
    out
}

fn upsample2_backward(g: &Tensor3, h: usize, w: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(g.channels, h, w);
    for c in 0..g.channels {
        let src = g.plane(c);
        let dst = out.plane_mut(c);
        for y in 0..g.height {
            for xo in 0..g.width {
                dst[(y / 2) * w + xo / 2] += src[y * g.width + xo];
            }
        }
    }
    out
}
