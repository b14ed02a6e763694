//! Raw numeric kernels operating on flat slices. Shapes are validated by the
//! callers in `ops`.

/// `c = a · b + beta · c` where `a` is `m×k` and `b` is `k×n`, both row-major
/// unless the matching `*_t` flag says the buffer holds the transpose.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index dgemm touches given the
    // row/column strides chosen for each layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(Self {
            c_in,
            h,
            w,
            k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (w + 2 * pad - k) / stride + 1,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }
}

/// Unfolds `input` (`c_in×h×w`) into a `(c_in·k·k) × (out_h·out_w)` matrix.
pub fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let p = g.out_len();
    let mut cols = vec![0.0; g.patch_len() * p];
    for c in 0..g.c_in {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let src = &plane[y as usize * g.w..(y as usize + 1) * g.w];
                    let out_row = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            *o = src[x as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `cols` back onto a `c_in×h×w` buffer.
pub fn col2im_add(g: &ConvGeom, cols: &[f64], out: &mut [f64]) {
    let p = g.out_len();
    for c in 0..g.c_in {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.out_h {
                    let y = (oy * g.stride + ki) as isize - g.pad as isize;
                    if y < 0 || y >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[y as usize * g.w..(y as usize + 1) * g.w];
                    for ox in 0..g.out_w {
                        let x = (ox * g.stride + kj) as isize - g.pad as isize;
                        if x >= 0 && x < g.w as isize {
                            dst[x as usize] += src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Max pooling. Returns the pooled values and, per output cell, the flat
/// input index that produced the maximum (first index wins ties).
pub fn maxpool(
    input: &[f64],
    c: usize,
    h: usize,
    w: usize,
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>, usize, usize) {
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut arg = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        let base = ch * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = usize::MAX;
                for dy in 0..window {
                    let row = base + (oy * stride + dy) * w + ox * stride;
                    for dx in 0..window {
                        let v = input[row + dx];
                        // Row-major scan with strict comparison keeps the
                        // lowest linear index on ties.
                        if v > best || best_idx == usize::MAX {
                            best = v;
                            best_idx = row + dx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx);
            }
        }
    }
    (out, arg, oh, ow)
}

/// `out = weight · input + bias` for a `d_out × d_in` weight.
pub fn affine(weight: &[f64], input: &[f64], bias: &[f64]) -> Vec<f64> {
    let d_in = input.len();
    weight
        .chunks_exact(d_in)
        .zip(bias)
        .map(|(row, b)| dot(row, input) + b)
        .collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorise without
    // reassociating a single serial sum.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = 4 * i;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in 4 * chunks..a.len() {
        s += a[j] * b[j];
    }
    s
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += alpha * xi);
}
