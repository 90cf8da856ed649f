//! Learnable per-channel gating. A trainable vector of raw weights is
//! squashed through a sigmoid at use time, giving one coefficient in (0, 1)
//! per feature channel, shared across points. Storing the raw weights keeps
//! the trainable parameter unconstrained.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::FeatureMatrix;

/// Raw-weight initialization value for every channel.
pub const INIT_RAW_WEIGHT: f64 = 0.1;

/// Numerically stable logistic sigmoid.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trainable per-channel raw weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingParams {
    pub raw_weights: Vec<f64>,
}

impl GatingParams {
    pub fn channels(&self) -> usize {
        self.raw_weights.len()
    }

    /// Current gate coefficients, `sigmoid(raw)` per channel.
    pub fn coefficients(&self) -> Vec<f64> {
        self.raw_weights.iter().map(|&r| sigmoid(r)).collect()
    }
}

/// All raw weights start at the same small positive value, so every gate
/// opens slightly above one half.
pub fn init_gating(channels: usize) -> Result<GatingParams> {
    if channels == 0 {
        return Err(Error::config("channel count must be at least 1"));
    }
    Ok(GatingParams {
        raw_weights: vec![INIT_RAW_WEIGHT; channels],
    })
}

/// `out[i][c] = sigmoid(raw[c]) * features[i][c]`.
pub fn gate_features(params: &GatingParams, features: &FeatureMatrix) -> Result<FeatureMatrix> {
    if params.channels() != features.cols() {
        return Err(Error::shape(format!(
            "gating has {} channels, features have {}",
            params.channels(),
            features.cols()
        )));
    }
    let gates = params.coefficients();
    let mut out = features.clone();
    for i in 0..out.rows() {
        for (v, &g) in out.row_mut(i).iter_mut().zip(&gates) {
            *v *= g;
        }
    }
    Ok(out)
}

/// Backward pass of [`gate_features`].
///
/// Returns `(grad_raw, grad_features)` where
/// `grad_features[i][c] = sigmoid(r_c) * upstream[i][c]` and
/// `grad_raw[c] = sigmoid(r_c) (1 - sigmoid(r_c)) * sum_i features[i][c] * upstream[i][c]`.
pub fn gate_backward(
    params: &GatingParams,
    features: &FeatureMatrix,
    upstream: &FeatureMatrix,
) -> Result<(Vec<f64>, FeatureMatrix)> {
    if params.channels() != features.cols() {
        return Err(Error::shape(format!(
            "gating has {} channels, features have {}",
            params.channels(),
            features.cols()
        )));
    }
    if features.shape() != upstream.shape() {
        return Err(Error::shape(format!(
            "upstream {:?} does not match features {:?}",
            upstream.shape(),
            features.shape()
        )));
    }
    let gates = params.coefficients();
    let mut grad_raw = vec![0.0; params.channels()];
    let mut grad_features = FeatureMatrix::zeros(features.rows(), features.cols());
    for i in 0..features.rows() {
        let f_row = features.row(i);
        let u_row = upstream.row(i);
        let g_row = grad_features.row_mut(i);
        for c in 0..gates.len() {
            g_row[c] = gates[c] * u_row[c];
            grad_raw[c] += f_row[c] * u_row[c];
        }
    }
    for c in 0..gates.len() {
        grad_raw[c] *= gates[c] * (1.0 - gates[c]);
    }
    Ok((grad_raw, grad_features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn init_fills_all_channels() {
        assert_eq!(init_gating(4).unwrap().raw_weights, vec![0.1; 4]);
        assert_eq!(init_gating(1).unwrap().raw_weights, vec![0.1]);
        assert!(init_gating(0).is_err());
    }

    #[test]
    fn initial_gate_coefficient() {
        let g = init_gating(1).unwrap().coefficients()[0];
        assert!((g - 0.524979).abs() < 1e-6);
    }

    #[test]
    fn zero_raw_weight_halves_features() {
        let params = GatingParams {
            raw_weights: vec![0.0, 0.0],
        };
        let features = FeatureMatrix::from_rows(&[vec![2.0, 4.0]]).unwrap();
        let gated = gate_features(&params, &features).unwrap();
        assert_eq!(gated.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn saturated_gate_passes_features_through() {
        let params = GatingParams {
            raw_weights: vec![30.0],
        };
        let features = FeatureMatrix::from_rows(&[vec![3.25], vec![-1.5]]).unwrap();
        let gated = gate_features(&params, &features).unwrap();
        assert!((gated.get(0, 0) - 3.25).abs() < 1e-9);
        assert!((gated.get(1, 0) + 1.5).abs() < 1e-9);
    }

    #[test]
    fn initial_weight_gate_value() {
        let params = init_gating(1).unwrap();
        let features = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        let gated = gate_features(&params, &features).unwrap();
        assert!((gated.get(0, 0) - 0.524979).abs() < 1e-6);
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let params = init_gating(3).unwrap();
        let features = FeatureMatrix::zeros(2, 2);
        assert!(gate_features(&params, &features).is_err());
    }

    #[test]
    fn gating_is_linear_in_features() {
        let mut rng = SplitMix64::new(5);
        let params = GatingParams {
            raw_weights: (0..4).map(|_| rng.range_f64(-2.0, 2.0)).collect(),
        };
        let f1 = FeatureMatrix::from_vec(3, 4, (0..12).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap();
        let f2 = FeatureMatrix::from_vec(3, 4, (0..12).map(|_| rng.range_f64(-1.0, 1.0)).collect()).unwrap();
        let (a, b) = (1.75, -0.5);
        let mut combo = f1.clone();
        combo.scale(a);
        let mut f2b = f2.clone();
        f2b.scale(b);
        combo.add_assign(&f2b).unwrap();

        let lhs = gate_features(&params, &combo).unwrap();
        let mut rhs = gate_features(&params, &f1).unwrap();
        rhs.scale(a);
        let mut g2 = gate_features(&params, &f2).unwrap();
        g2.scale(b);
        rhs.add_assign(&g2).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let params = init_gating(2).unwrap();
        let features = FeatureMatrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let upstream = FeatureMatrix::zeros(1, 2);
        let (grad_raw, grad_features) = gate_backward(&params, &features, &upstream).unwrap();
        assert_eq!(grad_raw, vec![0.0, 0.0]);
        assert_eq!(grad_features, FeatureMatrix::zeros(1, 2));
    }

    #[test]
    fn backward_single_point_analytic() {
        let params = GatingParams {
            raw_weights: vec![0.0],
        };
        let features = FeatureMatrix::from_rows(&[vec![2.0]]).unwrap();
        let upstream = FeatureMatrix::from_rows(&[vec![1.0]]).unwrap();
        let (grad_raw, grad_features) = gate_backward(&params, &features, &upstream).unwrap();
        assert!((grad_features.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((grad_raw[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = SplitMix64::new(21);
        let (n, c) = (5, 3);
        let params = GatingParams {
            raw_weights: (0..c).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        };
        let features = FeatureMatrix::from_vec(
            n,
            c,
            (0..n * c).map(|_| rng.range_f64(-2.0, 2.0)).collect(),
        )
        .unwrap();
        let upstream = FeatureMatrix::from_vec(
            n,
            c,
            (0..n * c).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        )
        .unwrap();

        // scalar objective: sum(gate(features) * upstream)
        let objective = |p: &GatingParams, f: &FeatureMatrix| -> f64 {
            let gated = gate_features(p, f).unwrap();
            gated
                .data()
                .iter()
                .zip(upstream.data())
                .map(|(a, b)| a * b)
                .sum()
        };

        let (grad_raw, grad_features) = gate_backward(&params, &features, &upstream).unwrap();
        let h = 1e-4;
        for k in 0..c {
            let mut plus = params.clone();
            plus.raw_weights[k] += h;
            let mut minus = params.clone();
            minus.raw_weights[k] -= h;
            let fd = (objective(&plus, &features) - objective(&minus, &features)) / (2.0 * h);
            assert!(
                (fd - grad_raw[k]).abs() <= 1e-5 * fd.abs().max(grad_raw[k].abs()).max(1e-3),
                "raw[{k}]: fd={fd} analytic={}",
                grad_raw[k]
            );
        }
        for idx in 0..n * c {
            let mut plus = features.clone();
            plus.data_mut()[idx] += h;
            let mut minus = features.clone();
            minus.data_mut()[idx] -= h;
            let fd = (objective(&params, &plus) - objective(&params, &minus)) / (2.0 * h);
            let analytic = grad_features.data()[idx];
            assert!(
                (fd - analytic).abs() <= 1e-5 * fd.abs().max(analytic.abs()).max(1e-3),
                "features[{idx}]: fd={fd} analytic={analytic}"
            );
        }
    }
}
