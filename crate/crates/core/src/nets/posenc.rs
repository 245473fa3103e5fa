use serde::{Deserialize, Serialize};

use crate::autodiff::{AdError, BackwardArgs, Tensor, Var};

/// Sinusoidal lifting of 3-D points with a linear frequency sweep.
///
/// Output layout for `F` frequencies: a cosine block followed by a sine
/// block, each `F·3` wide, frequency-major and coordinate-minor. Entry
/// `k·3 + c` of the cosine block is `cos(ω_k · x_c)`; the matching sine
/// entry sits at `F·3 + k·3 + c`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosEncConfig {
    pub frequencies: Vec<f64>,
}

impl Default for PosEncConfig {
    fn default() -> Self {
        Self::linear(16)
    }
}

impl PosEncConfig {
    pub const INPUT_DIM: usize = 3;

    /// Frequencies `1, 2, …, count`.
    pub fn linear(count: usize) -> Self {
        Self {
            frequencies: (1..=count).map(|w| w as f64).collect(),
        }
    }

    pub fn output_dim(&self) -> usize {
        2 * self.frequencies.len() * Self::INPUT_DIM
    }

    /// Encodes `n` points stored row-major as `n × 3`.
    pub fn encode(&self, points: &[f64]) -> Vec<f64> {
        let width = self.output_dim();
        let half = width / 2;
        let n = points.len() / 3;
        let mut out = vec![0.0; n * width];
        for (p, row) in points.chunks_exact(3).zip(out.chunks_exact_mut(width)) {
            for (k, &w) in self.frequencies.iter().enumerate() {
                for c in 0..3 {
                    let (s, co) = (w * p[c]).sin_cos();
                    row[k * 3 + c] = co;
                    row[half + k * 3 + c] = s;
                }
            }
        }
        out
    }

    /// Taped encoding of an `n × 3` variable.
    pub fn encode_var<'t>(&self, points: Var<'t>) -> Result<Var<'t>, AdError> {
        let v = points.value();
        match v.dims2() {
            Some((_, 3)) => {}
            _ => {
                return Err(AdError::ShapeMismatch {
                    op: "posenc",
                    lhs: v.shape().to_vec(),
                    rhs: vec![0, 3],
                })
            }
        }
        let n = v.shape()[0];
        let width = self.output_dim();
        let value = Tensor::matrix(n, width, self.encode(v.data()))?;
        let freqs = self.frequencies.clone();
        Ok(points.tape().custom("posenc", &[points], value, move |args: &BackwardArgs<'_>| {
            let half = width / 2;
            let y = args.output.data();
            let g = args.grad.data();
            let mut out = vec![0.0; n * 3];
            for i in 0..n {
                let row = i * width;
                for (k, &w) in freqs.iter().enumerate() {
                    for c in 0..3 {
                        let ci = row + k * 3 + c;
                        let si = row + half + k * 3 + c;
                        // d cos(wx) = -w sin(wx), d sin(wx) = w cos(wx)
                        out[i * 3 + c] += w * (g[si] * y[ci] - g[ci] * y[si]);
                    }
                }
            }
            vec![Some(Tensor::matrix(n, 3, out).expect("shape"))]
        }))
    }
}
