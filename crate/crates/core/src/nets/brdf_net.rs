use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, AdError, BackwardArgs, Tape, Tensor, Var};

use super::mlp::{Activation, Mlp, MlpVars};
use super::{NetError, PosEncConfig};

pub const BRDF_HIDDEN: [usize; 5] = [256; 5];
/// Number of reflectance parameters per point: three diffuse albedos,
/// specular albedo, roughness.
pub const BRDF_PARAMS: usize = 5;
pub const ROUGHNESS_MIN: f64 = 1e-3;
pub const ROUGHNESS_MAX: f64 = 1.0 - 1e-3;

/// MLP from canonical points to squashed reflectance parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BrdfNet {
    pub posenc: PosEncConfig,
    pub mlp: Mlp,
}

fn brdf_dims(posenc: &PosEncConfig, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![posenc.output_dim()];
    dims.extend_from_slice(hidden);
    dims.push(BRDF_PARAMS);
    dims
}

/// Sigmoid on every component, then roughness clamped into
/// `[ROUGHNESS_MIN, ROUGHNESS_MAX]`.
fn squash_value(raw: f64, column: usize) -> f64 {
    let y = sigmoid(raw);
    if column == BRDF_PARAMS - 1 {
        y.clamp(ROUGHNESS_MIN, ROUGHNESS_MAX)
    } else {
        y
    }
}

pub fn squash(raw: &[f64]) -> Vec<f64> {
    raw.iter().enumerate().map(|(i, &x)| squash_value(x, i % BRDF_PARAMS)).collect()
}

pub fn squash_var(raw: Var<'_>) -> Result<Var<'_>, AdError> {
    let v = raw.value();
    if v.dims2().map(|d| d.1) != Some(BRDF_PARAMS) {
        return Err(AdError::ShapeMismatch {
            op: "brdf_squash",
            lhs: v.shape().to_vec(),
            rhs: vec![0, BRDF_PARAMS],
        });
    }
    let value = Tensor::new(v.shape().to_vec(), squash(v.data()))?;
    Ok(raw.tape().custom("brdf_squash", &[raw], value, |args: &BackwardArgs<'_>| {
        let out: Vec<f64> = args
            .output
            .data()
            .iter()
            .zip(args.inputs[0].data())
            .zip(args.grad.data())
            .enumerate()
            .map(|(i, ((&y, &x), &g))| {
                let s = sigmoid(x);
                let clamped = i % BRDF_PARAMS == BRDF_PARAMS - 1 && y != s;
                if clamped {
                    0.0
                } else {
                    g * s * (1.0 - s)
                }
            })
            .collect();
        vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), out).expect("shape"))]
    }))
}

impl BrdfNet {
    pub fn new(seed: u64) -> Self {
        Self::with_layout(PosEncConfig::default(), &BRDF_HIDDEN, seed)
    }

    pub fn with_layout(posenc: PosEncConfig, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        Self {
            mlp: Mlp::init(&brdf_dims(&posenc, hidden), Activation::Elu, &mut rng),
            posenc,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.mlp.neuron_count()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.mlp.validate()?;
        if self.mlp.input_dim() != self.posenc.output_dim() || self.mlp.output_dim() != BRDF_PARAMS {
            return Err(NetError::Config(format!(
                "BRDF MLP maps {} → {}, expected {} → {BRDF_PARAMS}",
                self.mlp.input_dim(),
                self.mlp.output_dim(),
                self.posenc.output_dim()
            )));
        }
        Ok(())
    }

    /// Parameters for `n` canonical points, `n × 5` row-major.
    pub fn forward(&self, points: &[f64]) -> Vec<f64> {
        let rows = points.len() / 3;
        squash(&self.mlp.forward(&self.posenc.encode(points), rows))
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> BrdfNetVars<'_, 't> {
        BrdfNetVars {
            net: self,
            mlp: self.mlp.leaves(tape),
        }
    }

    pub fn constants<'t>(&self, tape: &'t Tape) -> BrdfNetVars<'_, 't> {
        BrdfNetVars {
            net: self,
            mlp: self.mlp.constants(tape),
        }
    }
}

pub struct BrdfNetVars<'a, 't> {
    net: &'a BrdfNet,
    pub mlp: MlpVars<'t>,
}

impl<'a, 't> BrdfNetVars<'a, 't> {
    pub fn forward(&self, points: Var<'t>) -> Result<Var<'t>, AdError> {
        squash_var(self.mlp.forward(self.net.posenc.encode_var(points)?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};

    #[test]
    fn default_layout_has_1285_neurons() {
        let net = BrdfNet::new(0);
        assert_eq!(net.neuron_count(), 1285);
        assert!(net.validate().is_ok());
    }

    #[test]
    fn zero_output_layer_gives_midpoints() {
        let mut net = BrdfNet::new(3);
        let last = net.mlp.layers.last_mut().unwrap();
        last.weight = Tensor::zeros_like(&last.weight);
        last.bias = Tensor::zeros_like(&last.bias);
        let theta = net.forward(&[0.2, -0.4, 0.9, 0.0, 1.0, 0.0]);
        assert!(theta.iter().all(|&t| t == 0.5));
    }

    #[test]
    fn outputs_in_range_and_deterministic() {
        let net = BrdfNet::new(11);
        let pts: Vec<f64> = (0..60).map(|i| (i as f64 * 0.731).sin() * 3.0).collect();
        let a = net.forward(&pts);
        assert_eq!(a, net.forward(&pts));
        for row in a.chunks_exact(5) {
            assert!(row[..4].iter().all(|&x| (0.0..=1.0).contains(&x)));
            assert!(row[4] > 0.0 && row[4] < 1.0);
        }
    }

    #[test]
    fn nearby_points_give_nearby_parameters() {
        let net = BrdfNet::new(2);
        let a = net.forward(&[0.3, 0.4, 0.5]);
        let b = net.forward(&[0.3 + 5e-10, 0.4 - 5e-10, 0.5]);
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(d < 1e-6);
    }

    #[test]
    fn roughness_clamp_blocks_gradient() {
        let tape = Tape::new();
        let raw = tape.leaf(Tensor::matrix(1, 5, vec![0.1, -0.2, 0.3, 0.0, 30.0]).unwrap());
        let y = squash_var(raw).unwrap();
        assert_eq!(y.value().data()[4], ROUGHNESS_MAX);
        tape.backward(y.sum()).unwrap();
        let g = tape.grad(raw).unwrap();
        assert_eq!(g.data()[4], 0.0);
        assert!(g.data()[..4].iter().all(|&x| x > 0.0));
    }

    #[test]
    fn squash_gradient() {
        let x = Tensor::matrix(2, 5, vec![0.1, -0.2, 0.3, 0.0, 1.5, -2.0, 0.7, 0.2, 0.9, -1.1]).unwrap();
        let r = grad_check(|_, v| Ok(squash_var(v)?.square().sum()), &x, &GradCheckConfig::default()).unwrap();
        assert!(r.passed(), "{:?}", r.failures);
    }
}
