//! Taped camera pose: exponential map and rigid transforms.

use crate::autodiff::{AdError, BackwardArgs, Tensor, Var};

use super::camera::{mat_mul, Mat3};

fn skew(w: [f64; 3]) -> Mat3 {
    [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
}

/// `(A, B, A'/θ, B'/θ)` for `R = I + A·K + B·K²`.
fn coefficients(theta: f64) -> (f64, f64, f64, f64) {
    let t2 = theta * theta;
    if theta < 1e-3 {
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            -1.0 / 3.0 + t2 / 30.0,
            -1.0 / 12.0 + t2 / 180.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        (
            s / theta,
            (1.0 - c) / t2,
            (theta * c - s) / (t2 * theta),
            (theta * s - 2.0 * (1.0 - c)) / (t2 * t2),
        )
    }
}

/// Taped Rodrigues map from a 3-vector to a `3 × 3` rotation.
pub fn so3_exp_var(w: Var<'_>) -> Result<Var<'_>, AdError> {
    let wv = w.value();
    if wv.len() != 3 {
        return Err(AdError::ShapeMismatch {
            op: "so3_exp",
            lhs: wv.shape().to_vec(),
            rhs: vec![3],
        });
    }
    let w3 = [wv.data()[0], wv.data()[1], wv.data()[2]];
    let theta = (w3[0] * w3[0] + w3[1] * w3[1] + w3[2] * w3[2]).sqrt();
    let (a, b, da, db) = coefficients(theta);
    let k = skew(w3);
    let k2 = mat_mul(&k, &k);
    let mut r = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            r[3 * i + j] = if i == j { 1.0 } else { 0.0 } + a * k[i][j] + b * k2[i][j];
        }
    }
    let value = Tensor::matrix(3, 3, r)?;
    Ok(w.tape().custom("so3_exp", &[w], value, move |args: &BackwardArgs<'_>| {
        let g = args.grad.data();
        let mut out = [0.0; 3];
        for (m, o) in out.iter_mut().enumerate() {
            let mut e = [0.0; 3];
            e[m] = 1.0;
            let gm = skew(e);
            let gk = mat_mul(&gm, &k);
            let kg = mat_mul(&k, &gm);
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    let d = a * gm[i][j] + b * (gk[i][j] + kg[i][j]) + w3[m] * (da * k[i][j] + db * k2[i][j]);
                    acc += g[3 * i + j] * d;
                }
            }
            *o = acc;
        }
        vec![Some(Tensor::new(args.inputs[0].shape().to_vec(), out.to_vec()).expect("3-vector"))]
    }))
}

/// `x ↦ R x + t` applied to each row of an `n × 3` point matrix.
pub fn rigid_transform_var<'t>(points: Var<'t>, rotation: Var<'t>, translation: Var<'t>) -> Result<Var<'t>, AdError> {
    let n = points.shape()[0];
    points.matmul(rotation.transpose()?)?.add(translation.expand_rows(n)?)
}

/// `x ↦ R (x − c)` for a camera with rotation `R` and center `c`.
pub fn world_to_camera_var<'t>(points: Var<'t>, rotation: Var<'t>, center: Var<'t>) -> Result<Var<'t>, AdError> {
    let n = points.shape()[0];
    points.sub(center.expand_rows(n)?)?.matmul(rotation.transpose()?)
}
