use crate::autodiff::{AdError, Var};

use super::NetError;

/// A stationary velocity field over row-batched 3-D points.
pub trait VelocityField {
    /// Velocities for `n` points stored as `n × 3`.
    fn velocity(&self, points: &[f64]) -> Vec<f64>;
}

/// `V(x) = x`; the Euler flow after `T` steps is `(1 + 1/T)^T · x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LinearField;

impl VelocityField for LinearField {
    fn velocity(&self, points: &[f64]) -> Vec<f64> {
        points.to_vec()
    }
}

/// `V(x) = c`; the flow is the translation by `c` for any step count.
#[derive(Clone, Copy, Debug)]
pub struct ConstantField(pub [f64; 3]);

impl VelocityField for ConstantField {
    fn velocity(&self, points: &[f64]) -> Vec<f64> {
        points.chunks_exact(3).flat_map(|_| self.0).collect()
    }
}

/// Positions and velocities visited by one Euler step.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowStep {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flow {
    pub points: Vec<f64>,
    pub trajectory: Option<Vec<FlowStep>>,
}

/// Integrates `steps` explicit Euler steps `x ← x + (1/steps)·V(x)`.
pub fn integrate<F: VelocityField + ?Sized>(
    field: &F,
    points: &[f64],
    steps: usize,
    record_trajectory: bool,
) -> Result<Flow, NetError> {
    if steps == 0 {
        return Err(NetError::Config("step count must be positive".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = points.to_vec();
    let mut trajectory = record_trajectory.then(|| Vec::with_capacity(steps));
    for step in 0..steps {
        let v = field.velocity(&x);
        if !v.iter().all(|c| c.is_finite()) {
            return Err(NetError::NonFinite { step });
        }
        let next: Vec<f64> = x.iter().zip(&v).map(|(&xi, &vi)| xi + vi * h).collect();
        if !next.iter().all(|c| c.is_finite()) {
            return Err(NetError::NonFinite { step });
        }
        if let Some(t) = trajectory.as_mut() {
            t.push(FlowStep {
                position: std::mem::replace(&mut x, next),
                velocity: v,
            });
        } else {
            x = next;
        }
    }
    Ok(Flow {
        points: x,
        trajectory,
    })
}

/// Taped counterpart of [`integrate`]; returns the end points and the
/// per-step velocity variables.
pub fn integrate_var<'t, V>(
    velocity: V,
    points: Var<'t>,
    steps: usize,
) -> Result<(Var<'t>, Vec<Var<'t>>), NetError>
where
    V: Fn(Var<'t>) -> Result<Var<'t>, AdError>,
{
    if steps == 0 {
        return Err(NetError::Config("step count must be positive".into()));
    }
    let h = 1.0 / steps as f64;
    let mut x = points;
    let mut velocities = Vec::with_capacity(steps);
    for step in 0..steps {
        let v = velocity(x)?;
        if !v.value().all_finite() {
            return Err(NetError::NonFinite { step });
        }
        x = x.add(v.mul_scalar(h))?;
        if !x.value().all_finite() {
            return Err(NetError::NonFinite { step });
        }
        velocities.push(v);
    }
    Ok((x, velocities))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn linear_field_matches_closed_form() {
        let flow = integrate(&LinearField, &[1.0, 0.0, 0.0], 20, false).unwrap();
        let expected = (1.0f64 + 1.0 / 20.0).powi(20);
        assert!((flow.points[0] - expected).abs() <= 4.0 * f64::EPSILON * expected);
        assert!((flow.points[0] - 2.6533).abs() < 1e-4);
        assert_eq!(&flow.points[1..], &[0.0, 0.0]);
    }

    #[test]
    fn linear_field_gap_shrinks_with_steps() {
        let gaps: Vec<f64> = [5, 10, 20, 40, 80]
            .iter()
            .map(|&t| (integrate(&LinearField, &[1.0, 0.0, 0.0], t, false).unwrap().points[0] - E).abs())
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn constant_field_translates() {
        let c = [0.3, -0.1, 0.25];
        for t in [1, 7, 20] {
            let flow = integrate(&ConstantField(c), &[0.5, 0.5, -1.0, 0.0, 0.0, 0.0], t, false).unwrap();
            for (i, p) in flow.points.iter().enumerate() {
                let base = [0.5, 0.5, -1.0, 0.0, 0.0, 0.0][i];
                assert!((p - (base + c[i % 3])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trajectory_records_every_step() {
        let flow = integrate(&LinearField, &[1.0, 2.0, 3.0], 4, true).unwrap();
        let t = flow.trajectory.unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t[0].position, vec![1.0, 2.0, 3.0]);
        assert_eq!(t[1].position, vec![1.25, 2.5, 3.75]);
        assert_eq!(t[3].velocity, t[3].position);
    }

    struct Explodes;
    impl VelocityField for Explodes {
        fn velocity(&self, points: &[f64]) -> Vec<f64> {
            points.iter().map(|x| if x.abs() > 10.0 { f64::NAN } else { x * 40.0 }).collect()
        }
    }

    #[test]
    fn non_finite_reports_step() {
        let err = integrate(&Explodes, &[1.0, 0.0, 0.0], 20, false).unwrap_err();
        assert!(matches!(err, NetError::NonFinite { step: 3 }), "{err:?}");
    }
}
