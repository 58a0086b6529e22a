//! Single-layer 2d convolution used by sophisticated internal nodes.
//!
//! Valid padding, square kernel, shared stride in both directions. Kernels are
//! stored as `[out_ch][in_ch][kh][kw]` flattened row-major.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvShape {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn out_height(&self) -> usize {
        (self.height - self.kernel) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width - self.kernel) / self.stride + 1
    }

    pub fn output_len(&self) -> usize {
        self.out_channels * self.out_height() * self.out_width()
    }

    pub fn kernel_len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
    }
}

/// Computes `out[o][y][x] = bias[o] + sum_{c,i,j} kernel[o][c][i][j] * input[c][y*s+i][x*s+j]`.
pub fn conv2d_forward(shape: &ConvShape, kernel: &[f64], bias: &[f64], input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (shape.out_height(), shape.out_width());
    let (k, s) = (shape.kernel, shape.stride);
    let mut out = vec![0.0; shape.output_len()];
    for o in 0..shape.out_channels {
        let kbase_o = o * shape.in_channels * k * k;
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = bias[o];
                for c in 0..shape.in_channels {
                    let kbase = kbase_o + c * k * k;
                    let ibase = c * shape.height * shape.width;
                    for i in 0..k {
                        let irow = ibase + (y * s + i) * shape.width + x * s;
                        let krow = kbase + i * k;
                        for j in 0..k {
                            acc += kernel[krow + j] * input[irow + j];
                        }
                    }
                }
                out[(o * oh + y) * ow + x] = acc;
            }
        }
    }
    out
}

/// Accumulates kernel and bias gradients given the gradient w.r.t. the conv output.
pub fn conv2d_backward(
    shape: &ConvShape,
    input: &[f64],
    grad_out: &[f64],
    grad_kernel: &mut [f64],
    grad_bias: &mut [f64],
) {
    let (oh, ow) = (shape.out_height(), shape.out_width());
    let (k, s) = (shape.kernel, shape.stride);
    for o in 0..shape.out_channels {
        let kbase_o = o * shape.in_channels * k * k;
        for y in 0..oh {
            for x in 0..ow {
                let g = grad_out[(o * oh + y) * ow + x];
                if g == 0.0 {
                    continue;
                }
                grad_bias[o] += g;
                for c in 0..shape.in_channels {
                    let kbase = kbase_o + c * k * k;
                    let ibase = c * shape.height * shape.width;
                    for i in 0..k {
                        let irow = ibase + (y * s + i) * shape.width + x * s;
                        let krow = kbase + i * k;
                        for j in 0..k {
                            grad_kernel[krow + j] += g * input[irow + j];
                        }
                    }
                }
            }
        }
    }
}

pub fn leaky_relu(slope: f64, pre: &[f64]) -> Vec<f64> {
    pre.iter()
        .map(|&a| if a >= 0.0 { a } else { slope * a })
        .collect()
}

pub fn leaky_relu_grad(slope: f64, pre: f64) -> f64 {
    if pre >= 0.0 {
        1.0
    } else {
        slope
    }
}
