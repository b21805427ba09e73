use super::{gemm, Tensor};
use crate::error::{Error, Result};

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn of(input: &Tensor, kernels: &Tensor) -> Result<Self> {
        let &[n, c, h, w] = input.shape() else {
            return Err(Error::shape(format!("conv input must be N×C×H×W, got {:?}", input.shape())));
        };
        let &[f, kc, kh, kw] = kernels.shape() else {
            return Err(Error::shape(format!("kernels must be F×C×KH×KW, got {:?}", kernels.shape())));
        };
        if kc != c {
            return Err(Error::shape(format!("kernel channels {kc} != input channels {c}")));
        }
        if h < kh || w < kw {
            return Err(Error::shape(format!("input {h}×{w} smaller than kernel {kh}×{kw}")));
        }
        Ok(ConvDims { n, c, h, w, f, kh, kw, oh: h - kh + 1, ow: w - kw + 1 })
    }

    fn patch_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }
}

/// Unfolds one C×H×W sample into a (C·KH·KW)×(OH·OW) patch matrix.
fn im2col(x: &[f64], d: &ConvDims, cols: &mut [f64]) {
    let p = d.positions();
    for ci in 0..d.c {
        let plane = &x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let r = (ci * d.kh + ki) * d.kw + kj;
                let dst = &mut cols[r * p..(r + 1) * p];
                for oi in 0..d.oh {
                    let src = &plane[(oi + ki) * d.w + kj..][..d.ow];
                    dst[oi * d.ow..(oi + 1) * d.ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back onto the sample.
fn col2im(cols: &[f64], d: &ConvDims, x: &mut [f64]) {
    let p = d.positions();
    for ci in 0..d.c {
        let plane = &mut x[ci * d.h * d.w..(ci + 1) * d.h * d.w];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let r = (ci * d.kh + ki) * d.kw + kj;
                let src = &cols[r * p..(r + 1) * p];
                for oi in 0..d.oh {
                    let dst = &mut plane[(oi + ki) * d.w + kj..][..d.ow];
                    for (o, g) in dst.iter_mut().zip(&src[oi * d.ow..(oi + 1) * d.ow]) {
                        *o += g;
                    }
                }
            }
        }
    }
}

/// Valid (unpadded, stride 1) cross-correlation plus per-filter bias.
///
/// `input` is N×C×H×W, `kernels` F×C×KH×KW, `bias` has F entries. The
/// output is N×F×(H−KH+1)×(W−KW+1).
pub fn conv2d_valid(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = ConvDims::of(input, kernels)?;
    if bias.len() != d.f {
        return Err(Error::shape(format!("bias has {} entries, expected {}", bias.len(), d.f)));
    }
    let (r, p) = (d.patch_rows(), d.positions());
    let sample = d.c * d.h * d.w;
    let mut cols = vec![0.0; r * p];
    let mut out = vec![0.0; d.n * d.f * p];
    for s in 0..d.n {
        im2col(&input.data()[s * sample..(s + 1) * sample], &d, &mut cols);
        let dst = &mut out[s * d.f * p..(s + 1) * d.f * p];
        for (fi, chunk) in dst.chunks_mut(p).enumerate() {
            chunk.fill(bias.data()[fi]);
        }
        gemm(d.f, r, p, 1.0, kernels.data(), (r, 1), &cols, (p, 1), 1.0, dst);
    }
    Tensor::new(&[d.n, d.f, d.oh, d.ow], out)
}

/// Gradients of a valid convolution with respect to its three operands.
#[derive(Clone, Debug)]
pub struct ConvGrads {
    pub input: Tensor,
    pub kernels: Tensor,
    pub bias: Tensor,
}

/// Backward pass of [`conv2d_valid`] given the gradient of its output.
pub fn conv2d_backward(input: &Tensor, kernels: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
    let d = ConvDims::of(input, kernels)?;
    if grad_out.shape() != [d.n, d.f, d.oh, d.ow] {
        return Err(Error::shape(format!(
            "grad_out {:?} does not match conv output {:?}",
            grad_out.shape(),
            [d.n, d.f, d.oh, d.ow]
        )));
    }
    let (r, p) = (d.patch_rows(), d.positions());
    let sample = d.c * d.h * d.w;
    let mut cols = vec![0.0; r * p];
    let mut dcols = vec![0.0; r * p];
    let mut g_in = vec![0.0; input.len()];
    let mut g_k = vec![0.0; kernels.len()];
    let mut g_b = vec![0.0; d.f];
    for s in 0..d.n {
        let g = &grad_out.data()[s * d.f * p..(s + 1) * d.f * p];
        for (fi, chunk) in g.chunks(p).enumerate() {
            g_b[fi] += chunk.iter().sum::<f64>();
        }
        im2col(&input.data()[s * sample..(s + 1) * sample], &d, &mut cols);
        // dK += G · colsᵀ
        gemm(d.f, p, r, 1.0, g, (p, 1), &cols, (1, p), 1.0, &mut g_k);
        // dcols = Kᵀ · G
        gemm(r, d.f, p, 1.0, kernels.data(), (1, r), g, (p, 1), 0.0, &mut dcols);
        col2im(&dcols, &d, &mut g_in[s * sample..(s + 1) * sample]);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape(), g_in)?,
        kernels: Tensor::new(kernels.shape(), g_k)?,
        bias: Tensor::new(&[d.f], g_b)?,
    })
}

/// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
///
/// Returns the pooled tensor and, for every output element, the flat index
/// of the input element that produced it. Ties go to the lowest flat index.
pub fn maxpool2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let &[n, c, h, w] = input.shape() else {
        return Err(Error::shape(format!("pool input must be N×C×H×W, got {:?}", input.shape())));
    };
    if h < 2 || w < 2 {
        return Err(Error::shape(format!("pool input {h}×{w} smaller than 2×2")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let top = base + 2 * i * w + 2 * j;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, oh, ow], out)?, idx))
}

/// Routes pooled gradients back to the recorded argmax positions.
pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &[usize], input_shape: &[usize]) -> Result<Tensor> {
    if grad_out.len() != indices.len() {
        return Err(Error::shape("pool gradient does not match index map"));
    }
    let mut g = Tensor::zeros(input_shape);
    let dst = g.data_mut();
    for (&i, &v) in indices.iter().zip(grad_out.data()) {
        if i >= dst.len() {
            return Err(Error::shape("pool index out of range"));
        }
        dst[i] += v;
    }
    Ok(g)
}
