//! Forward and adjoint loops shared by graph nodes.
//!
//! Everything here works on flat row-major slices; shape checks happen in
//! the graph layer before these are called.

/// `out[M×N] = a[M×K] · b[K×N]`
pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `out[M×K] = g[M×N] · bᵀ` for `b[K×N]`
pub(crate) fn matmul_nt(g: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `out[K×N] = aᵀ · g` for `a[M×K]`, `g[M×N]`
pub(crate) fn matmul_tn(a: &[f64], g: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub(crate) fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Splits `shape` around `axis` into (outer, axis length, inner) extents.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn sum_axis(x: &[f64], outer: usize, len: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[o * inner + i] += x[base + i];
            }
        }
    }
    out
}

/// Adjoint of [`sum_axis`]: copies each reduced gradient back along the axis.
pub(crate) fn expand_axis(g: &[f64], outer: usize, len: usize, inner: usize, scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; outer * len * inner];
    for o in 0..outer {
        for l in 0..len {
            let base = (o * len + l) * inner;
            for i in 0..inner {
                out[base + i] = g[o * inner + i] * scale;
            }
        }
    }
    out
}

/// Geometry of a stride-1, same-padded 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_ch: usize,
    pub out_ch: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvDims {
    fn input_idx(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        ((b * self.in_ch + c) * self.height + y) * self.width + x
    }

    fn output_idx(&self, b: usize, o: usize, y: usize, x: usize) -> usize {
        ((b * self.out_ch + o) * self.height + y) * self.width + x
    }

    fn kernel_idx(&self, o: usize, c: usize, i: usize, j: usize) -> usize {
        ((o * self.in_ch + c) * self.kh + i) * self.kw + j
    }

    /// Visits every (output cell, kernel tap, input cell) triple that lies
    /// inside the zero padding.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        for b in 0..self.batch {
            for o in 0..self.out_ch {
                for y in 0..self.height {
                    for x in 0..self.width {
                        let out = self.output_idx(b, o, y, x);
                        for c in 0..self.in_ch {
                            for i in 0..self.kh {
                                let Some(yy) = (y + i).checked_sub(ph).filter(|&v| v < self.height) else {
                                    continue;
                                };
                                for j in 0..self.kw {
                                    let Some(xx) = (x + j).checked_sub(pw).filter(|&v| v < self.width) else {
                                        continue;
                                    };
                                    f(out, self.kernel_idx(o, c, i, j), self.input_idx(b, c, yy, xx));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d(input: &[f64], kernel: &[f64], d: ConvDims) -> Vec<f64> {
    let mut out = vec![0.0; d.batch * d.out_ch * d.height * d.width];
    d.for_each_tap(|o, k, i| out[o] += input[i] * kernel[k]);
    out
}

/// Returns (input gradient, kernel gradient).
pub(crate) fn conv2d_backward(grad: &[f64], input: &[f64], kernel: &[f64], d: ConvDims) -> (Vec<f64>, Vec<f64>) {
    let mut g_in = vec![0.0; input.len()];
    let mut g_k = vec![0.0; kernel.len()];
    d.for_each_tap(|o, k, i| {
        g_in[i] += grad[o] * kernel[k];
        g_k[k] += grad[o] * input[i];
    });
    (g_in, g_k)
}

/// Geometry of a non-overlapping average pool. Trailing rows and columns
/// that do not fill a whole window are dropped.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PoolDims {
    pub planes: usize,
    pub height: usize,
    pub width: usize,
    pub wh: usize,
    pub ww: usize,
}

impl PoolDims {
    pub fn out_h(&self) -> usize {
        self.height / self.wh
    }

    pub fn out_w(&self) -> usize {
        self.width / self.ww
    }

    fn for_each_cell(&self, mut f: impl FnMut(usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for p in 0..self.planes {
            for y in 0..oh {
                for x in 0..ow {
                    let out = (p * oh + y) * ow + x;
                    for i in 0..self.wh {
                        for j in 0..self.ww {
                            let inp = (p * self.height + y * self.wh + i) * self.width + x * self.ww + j;
                            f(out, inp);
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn avg_pool2d(input: &[f64], d: PoolDims) -> Vec<f64> {
    let scale = 1.0 / (d.wh * d.ww) as f64;
    let mut out = vec![0.0; d.planes * d.out_h() * d.out_w()];
    d.for_each_cell(|o, i| out[o] += input[i] * scale);
    out
}

pub(crate) fn avg_pool2d_backward(grad: &[f64], d: PoolDims) -> Vec<f64> {
    let scale = 1.0 / (d.wh * d.ww) as f64;
    let mut g_in = vec![0.0; d.planes * d.height * d.width];
    d.for_each_cell(|o, i| g_in[i] += grad[o] * scale);
    g_in
}
