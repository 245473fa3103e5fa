use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{elu, gemm, AdError, BackwardArgs, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Elu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Elu => elu(x),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Elu => {
                if y > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
        }
    }
}

/// Fully connected layer computing `act(X·W + b)` for row-batched `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `in × out`
    pub weight: Tensor,
    /// `out`
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[outputs]),
        }
    }

    /// Uniform initialization in `±1/√inputs` for weights and biases.
    pub fn init<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let w = draw(inputs * outputs);
        let b = draw(outputs);
        Self {
            weight: Tensor::matrix(inputs, outputs, w).expect("shape"),
            bias: Tensor::vector(b),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }
}

/// Shared forward arithmetic for the plain and taped paths, so both give
/// bitwise-identical values.
fn dense_forward(x: &[f64], rows: usize, weight: &Tensor, bias: &Tensor, act: Activation) -> Vec<f64> {
    let (k, n) = weight.dims2().expect("rank-2 weight");
    let mut out = vec![0.0; rows * n];
    gemm(rows, k, n, x, false, weight.data(), false, &mut out);
    for row in out.chunks_exact_mut(n) {
        for (y, b) in row.iter_mut().zip(bias.data()) {
            *y = act.apply(*y + b);
        }
    }
    out
}

/// Taped `act(X·W + b)` with a single fused adjoint.
pub fn dense<'t>(x: Var<'t>, weight: Var<'t>, bias: Var<'t>, act: Activation) -> Result<Var<'t>, AdError> {
    let xv = x.value();
    let wv = weight.value();
    let bv = bias.value();
    let (rows, k) = xv.dims2().ok_or_else(|| AdError::ShapeMismatch {
        op: "dense",
        lhs: xv.shape().to_vec(),
        rhs: wv.shape().to_vec(),
    })?;
    let n = match wv.dims2() {
        Some((k2, n)) if k2 == k && bv.len() == n => n,
        _ => {
            return Err(AdError::ShapeMismatch {
                op: "dense",
                lhs: xv.shape().to_vec(),
                rhs: wv.shape().to_vec(),
            })
        }
    };
    let value = Tensor::matrix(rows, n, dense_forward(xv.data(), rows, &wv, &bv, act))?;
    Ok(x.tape().custom("dense", &[x, weight, bias], value, move |args: &BackwardArgs<'_>| {
        let y = args.output.data();
        let pre: Vec<f64> = args
            .grad
            .data()
            .iter()
            .zip(y)
            .map(|(&g, &y)| g * act.slope_from_output(y))
            .collect();
        let gx = args.needs[0].then(|| {
            let mut out = vec![0.0; rows * k];
            gemm(rows, n, k, &pre, false, args.inputs[1].data(), true, &mut out);
            Tensor::matrix(rows, k, out).expect("shape")
        });
        let gw = args.needs[1].then(|| {
            let mut out = vec![0.0; k * n];
            gemm(k, rows, n, args.inputs[0].data(), true, &pre, false, &mut out);
            Tensor::matrix(k, n, out).expect("shape")
        });
        let gb = args.needs[2].then(|| {
            let mut out = vec![0.0; n];
            for row in pre.chunks_exact(n) {
                for (o, g) in out.iter_mut().zip(row) {
                    *o += g;
                }
            }
            Tensor::new(args.inputs[2].shape().to_vec(), out).expect("shape")
        });
        vec![gx, gw, gb]
    }))
}

/// Multi-layer perceptron with a shared hidden activation and an identity
/// output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
}

/// Tape handles for the weights of one [`Mlp`].
#[derive(Clone, Debug)]
pub struct MlpVars<'t> {
    pub layers: Vec<(Var<'t>, Var<'t>)>,
    pub hidden: Activation,
}

impl Mlp {
    /// Builds layers for the width chain `dims[0] → dims[1] → … → dims[last]`.
    pub fn init<R: Rng>(dims: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least one layer");
        Self {
            layers: dims.windows(2).map(|d| Linear::init(d[0], d[1], rng)).collect(),
            hidden,
        }
    }

    pub fn zeros(dims: &[usize], hidden: Activation) -> Self {
        Self {
            layers: dims.windows(2).map(|d| Linear::zeros(d[0], d[1])).collect(),
            hidden,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Sum of output widths over all layers.
    pub fn neuron_count(&self) -> usize {
        self.layers.iter().map(Linear::outputs).sum()
    }

    /// Checks that consecutive layers chain.
    pub fn validate(&self) -> Result<(), AdError> {
        for pair in self.layers.windows(2) {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(AdError::ShapeMismatch {
                    op: "mlp",
                    lhs: pair[0].weight.shape().to_vec(),
                    rhs: pair[1].weight.shape().to_vec(),
                });
            }
        }
        for l in &self.layers {
            if l.bias.len() != l.outputs() {
                return Err(AdError::ShapeMismatch {
                    op: "mlp",
                    lhs: l.weight.shape().to_vec(),
                    rhs: l.bias.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            Activation::Identity
        } else {
            self.hidden
        }
    }

    /// Untaped forward over `rows` inputs stored row-major.
    pub fn forward(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            h = dense_forward(&h, rows, &l.weight, &l.bias, self.activation(i));
        }
        h
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone())))
                .collect(),
            hidden: self.hidden,
        }
    }

    /// Weights as constants (no gradient).
    pub fn constants<'t>(&self, tape: &'t Tape) -> MlpVars<'t> {
        MlpVars {
            layers: self
                .layers
                .iter()
                .map(|l| (tape.constant(l.weight.clone()), tape.constant(l.bias.clone())))
                .collect(),
            hidden: self.hidden,
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias]).collect()
    }

    /// Names matching [`Mlp::tensors`] order.
    pub fn tensor_names(&self, prefix: &str) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("{prefix}.{i}.weight"), format!("{prefix}.{i}.bias")])
            .collect()
    }
}

impl<'t> MlpVars<'t> {
    pub fn forward(&self, x: Var<'t>) -> Result<Var<'t>, AdError> {
        let last = self.layers.len() - 1;
        let mut h = x;
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            let act = if i == last { Activation::Identity } else { self.hidden };
            h = dense(h, w, b, act)?;
        }
        Ok(h)
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}
