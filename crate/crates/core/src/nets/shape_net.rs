use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};

use super::flow::{integrate, integrate_var, Flow, VelocityField};
use super::mlp::{Activation, Mlp, MlpVars};
use super::{NetError, PosEncConfig};

/// Recurrent residual network integrating a learned velocity field.
///
/// A single MLP `V = mlp ∘ posenc` is reused for every step; each step
/// adds `V(x)/steps` to the running position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeNet {
    pub posenc: PosEncConfig,
    pub mlp: Mlp,
    pub steps: usize,
}

pub const SHAPE_HIDDEN: [usize; 3] = [256, 256, 256];
pub const DEFAULT_STEPS: usize = 20;
/// Scale applied to the freshly initialized output layer so the initial
/// flow stays close to the identity.
pub const SHAPE_OUTPUT_INIT_SCALE: f64 = 1e-2;

fn shape_dims(posenc: &PosEncConfig, hidden: &[usize]) -> Vec<usize> {
    let mut dims = vec![posenc.output_dim()];
    dims.extend_from_slice(hidden);
    dims.push(3);
    dims
}

impl ShapeNet {
    pub fn new(seed: u64) -> Self {
        Self::with_layout(PosEncConfig::default(), &SHAPE_HIDDEN, DEFAULT_STEPS, seed)
    }

    pub fn with_layout(posenc: PosEncConfig, hidden: &[usize], steps: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let mut mlp = Mlp::init(&shape_dims(&posenc, hidden), Activation::Elu, &mut rng);
        let last = mlp.layers.last_mut().expect("non-empty");
        last.weight = last.weight.scale(SHAPE_OUTPUT_INIT_SCALE);
        last.bias = last.bias.scale(SHAPE_OUTPUT_INIT_SCALE);
        Self { posenc, mlp, steps }
    }

    /// All-zero weights: the flow is exactly the identity.
    pub fn zeros(steps: usize) -> Self {
        let posenc = PosEncConfig::default();
        Self {
            mlp: Mlp::zeros(&shape_dims(&posenc, &SHAPE_HIDDEN), Activation::Elu),
            posenc,
            steps,
        }
    }

    pub fn neuron_count(&self) -> usize {
        self.mlp.neuron_count()
    }

    pub fn validate(&self) -> Result<(), NetError> {
        self.mlp.validate()?;
        if self.mlp.input_dim() != self.posenc.output_dim() || self.mlp.output_dim() != 3 {
            return Err(NetError::Config(format!(
                "shape MLP maps {} → {}, expected {} → 3",
                self.mlp.input_dim(),
                self.mlp.output_dim(),
                self.posenc.output_dim()
            )));
        }
        if self.steps == 0 {
            return Err(NetError::Config("step count must be positive".into()));
        }
        Ok(())
    }

    /// Maps canonical points (`n × 3`) through the flow.
    pub fn forward(&self, points: &[f64], record_trajectory: bool) -> Result<Flow, NetError> {
        integrate(self, points, self.steps, record_trajectory)
    }

    pub fn leaves<'t>(&self, tape: &'t Tape) -> ShapeNetVars<'_, 't> {
        ShapeNetVars {
            net: self,
            mlp: self.mlp.leaves(tape),
        }
    }

    pub fn constants<'t>(&self, tape: &'t Tape) -> ShapeNetVars<'_, 't> {
        ShapeNetVars {
            net: self,
            mlp: self.mlp.constants(tape),
        }
    }
}

impl VelocityField for ShapeNet {
    fn velocity(&self, points: &[f64]) -> Vec<f64> {
        let rows = points.len() / 3;
        self.mlp.forward(&self.posenc.encode(points), rows)
    }
}

/// Taped view of a [`ShapeNet`].
pub struct ShapeNetVars<'a, 't> {
    net: &'a ShapeNet,
    pub mlp: MlpVars<'t>,
}

impl<'a, 't> ShapeNetVars<'a, 't> {
    /// Returns the deformed points and the velocity at every step.
    pub fn forward(&self, points: Var<'t>) -> Result<(Var<'t>, Vec<Var<'t>>), NetError> {
        integrate_var(
            |x| self.mlp.forward(self.net.posenc.encode_var(x)?),
            points,
            self.net.steps,
        )
    }

    pub fn forward_tensor(&self, tape: &'t Tape, points: &Tensor) -> Result<(Var<'t>, Vec<Var<'t>>), NetError> {
        self.forward(tape.constant(points.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::geometry::icosphere;

    #[test]
    fn default_layout_has_771_neurons() {
        let net = ShapeNet::new(0);
        assert_eq!(net.neuron_count(), 771);
        assert!(net.validate().is_ok());
        assert_eq!(net.steps, 20);
    }

    #[test]
    fn zero_net_is_identity() {
        let net = ShapeNet::zeros(20);
        let pts = [0.3, -0.7, 0.2, 1.0, 0.0, 0.0, -5.0, 2.0, 9.0];
        assert_eq!(net.forward(&pts, false).unwrap().points, pts.to_vec());
    }

    #[test]
    fn initial_flow_is_near_identity() {
        let sphere = icosphere(3, None).unwrap();
        let pts = sphere.flat_vertices();
        for seed in 0..3 {
            let out = ShapeNet::new(seed).forward(&pts, false).unwrap().points;
            let worst = out
                .chunks_exact(3)
                .zip(pts.chunks_exact(3))
                .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt())
                .fold(0.0, f64::max);
            assert!(worst < 0.1, "seed {seed}: {worst}");
        }
    }

    #[test]
    fn seeds_are_reproducible() {
        assert_eq!(ShapeNet::new(4), ShapeNet::new(4));
        assert_ne!(ShapeNet::new(4), ShapeNet::new(5));
    }

    #[test]
    fn taped_forward_matches_plain() {
        let net = ShapeNet::new(1);
        let pts = vec![0.1, 0.2, 0.3, -0.5, 0.5, 0.7];
        let tape = Tape::new();
        let vars = net.leaves(&tape);
        let (x, vel) = vars.forward_tensor(&tape, &Tensor::matrix(2, 3, pts.clone()).unwrap()).unwrap();
        let plain = net.forward(&pts, true).unwrap();
        assert_eq!(x.value().data(), plain.points.as_slice());
        assert_eq!(vel.len(), 20);
        for (v, step) in vel.iter().zip(plain.trajectory.unwrap()) {
            assert_eq!(v.value().data(), step.velocity.as_slice());
        }
    }

    #[test]
    fn unrolled_recurrence_gradients() {
        let net = ShapeNet::with_layout(PosEncConfig::linear(3), &[8, 8], 6, 3);
        let pts = Tensor::matrix(3, 3, vec![0.6, 0.0, 0.8, 0.0, -1.0, 0.0, 0.48, 0.6, -0.64]).unwrap();
        let target = Tensor::matrix(3, 3, vec![0.2, 0.1, 0.4, 0.0, -0.3, 0.1, 0.3, 0.2, -0.5]).unwrap();
        // check a first-layer weight matrix and the output bias
        for which in [0usize, 5] {
            let base = net.mlp.tensors()[which].clone();
            let r = grad_check(
                |tape, v| {
                    let mut vars = net.constants(tape);
                    let layer = which / 2;
                    if which % 2 == 0 {
                        vars.mlp.layers[layer].0 = v;
                    } else {
                        vars.mlp.layers[layer].1 = v;
                    }
                    let (x, _) = vars.forward(tape.constant(pts.clone())).map_err(|e| match e {
                        NetError::Ad(a) => a,
                        other => panic!("{other}"),
                    })?;
                    Ok(x.sub(tape.constant(target.clone()))?.square().sum())
                },
                &base,
                &GradCheckConfig::with_tol(1e-3),
            )
            .unwrap();
            assert!(r.passed(), "tensor {which}: {:?}", r.failures);
        }
    }
}
