//! 1-D convolution primitives with explicit backward passes.
//!
//! Activations are channel-major: `x[c * len + i]`. Weights are
//! `[out][in][k]` for [`Conv`] and `[in][out][k]` for [`ConvTranspose`].

#[derive(Debug, Clone, Copy)]
pub(crate) struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Output positions `o` for which `o * stride + kk - pad` lies in `0..len`.
fn valid_range(kk: usize, stride: usize, pad: usize, len: usize, out_len: usize) -> std::ops::Range<usize> {
    let lo = if kk >= pad { 0 } else { (pad - kk).div_ceil(stride) };
    let hi = if len + pad > kk {
        ((len - 1 + pad - kk) / stride + 1).min(out_len)
    } else {
        0
    };
    lo..hi.max(lo)
}

impl Conv {
    pub fn weights(&self) -> usize {
        self.cout * self.cin * self.k
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len + 2 * self.pad - self.k) / self.stride + 1
    }

    /// `out += conv(x)`.
    pub fn forward(&self, w: &[f64], x: &[f64], len: usize, out: &mut [f64]) {
        let ol = self.out_len(len);
        for co in 0..self.cout {
            let orow = &mut out[co * ol..(co + 1) * ol];
            for ci in 0..self.cin {
                let xrow = &x[ci * len..(ci + 1) * len];
                for kk in 0..self.k {
                    let wv = w[(co * self.cin + ci) * self.k + kk];
                    let r = valid_range(kk, self.stride, self.pad, len, ol);
                    if self.stride == 1 {
                        let shift = kk as isize - self.pad as isize;
                        let xs = &xrow[(r.start as isize + shift) as usize..(r.end as isize + shift) as usize];
                        for (o, xv) in orow[r].iter_mut().zip(xs) {
                            *o += wv * xv;
                        }
                    } else {
                        for o in r {
                            orow[o] += wv * xrow[o * self.stride + kk - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Accumulates input and weight gradients from the output gradient `g`.
    pub fn backward(&self, w: &[f64], x: &[f64], len: usize, g: &[f64], mut gx: Option<&mut [f64]>, mut gw: Option<&mut [f64]>) {
        let ol = self.out_len(len);
        for co in 0..self.cout {
            let grow = &g[co * ol..(co + 1) * ol];
            for ci in 0..self.cin {
                // Only read when weight gradients are requested.
                let xrow = if gw.is_some() { &x[ci * len..(ci + 1) * len] } else { &[][..] };
                for kk in 0..self.k {
                    let widx = (co * self.cin + ci) * self.k + kk;
                    let r = valid_range(kk, self.stride, self.pad, len, ol);
                    let mut acc = 0.0;
                    if let Some(gx) = gx.as_deref_mut() {
                        let wv = w[widx];
                        let gxrow = &mut gx[ci * len..(ci + 1) * len];
                        for o in r.clone() {
                            let i = o * self.stride + kk - self.pad;
                            gxrow[i] += wv * grow[o];
                        }
                    }
                    if gw.is_some() {
                        for o in r {
                            acc += grow[o] * xrow[o * self.stride + kk - self.pad];
                        }
                    }
                    if let Some(gw) = gw.as_deref_mut() {
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvTranspose {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    pub fn weights(&self) -> usize {
        self.cin * self.cout * self.k
    }

    pub fn out_len(&self, len: usize) -> usize {
        (len - 1) * self.stride + self.k - 2 * self.pad
    }

    fn as_conv(&self) -> Conv {
        Conv {
            cin: self.cout,
            cout: self.cin,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }

    /// `out += convT(x)`; the adjoint of the matching strided [`Conv`].
    pub fn forward(&self, w: &[f64], x: &[f64], len: usize, out: &mut [f64]) {
        let ol = self.out_len(len);
        self.as_conv().backward(w, &[], ol, x, Some(out), None);
    }

    pub fn backward(&self, w: &[f64], x: &[f64], len: usize, g: &[f64], gx: Option<&mut [f64]>, gw: Option<&mut [f64]>) {
        let ol = self.out_len(len);
        let conv = self.as_conv();
        if let Some(gx) = gx {
            conv.forward(w, g, ol, gx);
        }
        if let Some(gw) = gw {
            // dL/dw[ci][co][kk] = sum_i x[ci][i] g[co][i*s + kk - p]
            conv.backward(w, g, ol, x, None, Some(gw));
        }
    }
}

pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}
