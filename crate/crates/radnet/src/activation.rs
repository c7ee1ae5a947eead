//! Radial rescaling activations.
//!
//! A radial rescaling function sends `v ↦ h(|v|)·v/|v|` and `0 ↦ 0`, so it
//! only changes the length of a vector, never its direction. The shifted
//! variant replaces `h(r)` with `h(r − t)` for a per-layer shift `t`.
//!
//! ```
//! use radnet::activation::{RadialProfile, ShiftedActivation};
//!
//! let act = ShiftedActivation::new(RadialProfile::Squashing, 0.0);
//! assert_eq!(act.apply(&[1.0, 0.0]), vec![0.5, 0.0]);
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix, TOL};

/// The scalar profile `h` of a radial rescaling function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadialProfile {
    /// `h(r) = r` for `r ≥ 1`, else `0`.
    StepRelu,
    /// `h(r) = r² / (r² + 1)`.
    Squashing,
    /// `h(r) = max(0, r − offset)`.
    ShiftedRelu { offset: f64 },
    /// `h(r) = 1 / (1 + e^{−r + offset})`.
    ShiftedSigmoid { offset: f64 },
    /// `h(r) = 1 / (1 + e^{−r})`.
    Sigmoid,
    /// `h(r) = r`.
    Identity,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl RadialProfile {
    /// Evaluates `h`.
    pub fn h(&self, x: f64) -> f64 {
        match *self {
            Self::StepRelu => {
                if x >= 1.0 {
                    x
                } else {
                    0.0
                }
            }
            Self::Squashing => x * x / (x * x + 1.0),
            Self::ShiftedRelu { offset } => (x - offset).max(0.0),
            Self::ShiftedSigmoid { offset } => sigmoid(x - offset),
            Self::Sigmoid => sigmoid(x),
            Self::Identity => x,
        }
    }

    /// Derivative of `h`; at kinks the right-hand branch is taken.
    pub fn dh(&self, x: f64) -> f64 {
        match *self {
            Self::StepRelu => {
                if x >= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Squashing => {
                let d = x * x + 1.0;
                2.0 * x / (d * d)
            }
            Self::ShiftedRelu { offset } => {
                if x >= offset {
                    1.0
                } else {
                    0.0
                }
            }
            Self::ShiftedSigmoid { offset } => {
                let s = sigmoid(x - offset);
                s * (1.0 - s)
            }
            Self::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Self::Identity => 1.0,
        }
    }

    /// Whether `h` is differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        !matches!(self, Self::StepRelu | Self::ShiftedRelu { .. })
    }

    /// Serialization tag.
    pub fn tag(&self) -> &'static str {
        match self {
            Self::StepRelu => "step_relu",
            Self::Squashing => "squashing",
            Self::ShiftedRelu { .. } => "shifted_relu",
            Self::ShiftedSigmoid { .. } => "shifted_sigmoid",
            Self::Sigmoid => "sigmoid",
            Self::Identity => "identity",
        }
    }

    /// Profile constants, in the order used by the model file.
    pub fn params(&self) -> Vec<f64> {
        match *self {
            Self::ShiftedRelu { offset } | Self::ShiftedSigmoid { offset } => vec![offset],
            _ => Vec::new(),
        }
    }

    /// Inverse of [`tag`](Self::tag) + [`params`](Self::params).
    pub fn from_tag(tag: &str, params: &[f64]) -> Result<Self> {
        let offset = || {
            params.first().copied().ok_or_else(|| {
                Error::Data(format!("profile `{tag}` needs one parameter, got none"))
            })
        };
        let profile = match tag {
            "step_relu" => Self::StepRelu,
            "squashing" => Self::Squashing,
            "shifted_relu" => Self::ShiftedRelu { offset: offset()? },
            "shifted_sigmoid" => Self::ShiftedSigmoid { offset: offset()? },
            "sigmoid" => Self::Sigmoid,
            "identity" => Self::Identity,
            other => return Err(Error::Data(format!("unknown profile `{other}`"))),
        };
        let expected = profile.params().len();
        if params.len() != expected {
            return Err(Error::Data(format!(
                "profile `{tag}` takes {expected} parameter(s), got {}",
                params.len()
            )));
        }
        Ok(profile)
    }
}

/// A radial profile together with a layer shift `t`: `v ↦ h(|v| − t)·v/|v|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShiftedActivation {
    pub profile: RadialProfile,
    pub shift: f64,
}

/// `g(r) = h(r−t)/r` and derivatives at a point away from the origin.
struct Radial {
    r: f64,
    g: f64,
    dg: f64,
    dh: f64,
}

impl ShiftedActivation {
    pub fn new(profile: RadialProfile, shift: f64) -> Self {
        Self { profile, shift }
    }

    /// Unshifted activation.
    pub fn unshifted(profile: RadialProfile) -> Self {
        Self::new(profile, 0.0)
    }

    fn radial(&self, v: &[f64]) -> Option<Radial> {
        let r = norm(v);
        if r < TOL.near_origin {
            return None;
        }
        let x = r - self.shift;
        let h = self.profile.h(x);
        let dh = self.profile.dh(x);
        Some(Radial {
            r,
            g: h / r,
            dg: dh / r - h / (r * r),
            dh,
        })
    }

    /// Derivative at the origin: `h'(−t)·I` when `h(−t) = 0`, otherwise zero.
    fn origin_slope(&self) -> f64 {
        if self.profile.h(-self.shift) == 0.0 {
            self.profile.dh(-self.shift)
        } else {
            0.0
        }
    }

    /// Evaluates the activation.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self.radial(v) {
            Some(rad) => v.iter().map(|x| rad.g * x).collect(),
            None => vec![0.0; v.len()],
        }
    }

    /// Jacobian `g·I + g'·vvᵀ/r`.
    pub fn jacobian(&self, v: &[f64]) -> Matrix {
        let n = v.len();
        match self.radial(v) {
            Some(rad) => {
                let mut j = Matrix::identity(n).scale(rad.g);
                j.add_outer(rad.dg / rad.r, v, v);
                j
            }
            None => Matrix::identity(n).scale(self.origin_slope()),
        }
    }

    /// Vector-Jacobian product: returns `Jᵀδ` and `∂⟨ρ(v), δ⟩/∂t`.
    pub fn vjp(&self, v: &[f64], delta: &[f64]) -> (Vec<f64>, f64) {
        match self.radial(v) {
            Some(rad) => {
                let vd = dot(v, delta) / rad.r;
                let c = rad.dg * vd;
                let grad = v
                    .iter()
                    .zip(delta)
                    .map(|(vi, di)| rad.g * di + c * vi)
                    .collect();
                (grad, -rad.dh * vd)
            }
            None => {
                let s = self.origin_slope();
                (delta.iter().map(|d| s * d).collect(), 0.0)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::linalg::inclusion_matrix;

    fn smooth_profiles() -> Vec<RadialProfile> {
        vec![
            RadialProfile::Squashing,
            RadialProfile::Sigmoid,
            RadialProfile::ShiftedSigmoid { offset: 0.5 },
            RadialProfile::Identity,
        ]
    }

    fn fd_jacobian(act: &ShiftedActivation, v: &[f64], step: f64) -> Matrix {
        let n = v.len();
        let mut j = Matrix::zeros(n, n);
        for c in 0..n {
            let mut p = v.to_vec();
            let mut m = v.to_vec();
            p[c] += step;
            m[c] -= step;
            let (fp, fm) = (act.apply(&p), act.apply(&m));
            for r in 0..n {
                j[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
            }
        }
        j
    }

    #[test]
    fn step_relu_inside_and_outside() {
        let act = ShiftedActivation::unshifted(RadialProfile::StepRelu);
        assert_eq!(act.apply(&[0.3, 0.4]), vec![0.0, 0.0]);
        assert_eq!(act.apply(&[3.0, 4.0]), vec![3.0, 4.0]);
    }

    #[test]
    fn squashing_hand_value() {
        let act = ShiftedActivation::unshifted(RadialProfile::Squashing);
        assert_eq!(act.apply(&[1.0, 0.0]), vec![0.5, 0.0]);
    }

    #[test]
    fn origin_maps_to_origin() {
        for p in smooth_profiles() {
            let act = ShiftedActivation::new(p, 0.3);
            assert_eq!(act.apply(&[0.0, 0.0, 0.0]), vec![0.0; 3]);
        }
    }

    #[test]
    fn identity_jacobian_is_identity() {
        let act = ShiftedActivation::unshifted(RadialProfile::Identity);
        let j = act.jacobian(&[0.2, -1.3, 4.0]);
        assert!(j.max_abs_diff(&Matrix::identity(3)) < 1e-15);
    }

    #[test]
    fn step_relu_jacobian_outside_ball() {
        let act = ShiftedActivation::unshifted(RadialProfile::StepRelu);
        let j = act.jacobian(&[2.0, 0.0]);
        assert!(j.max_abs_diff(&Matrix::identity(2)) < 1e-15);
    }

    #[test]
    fn squashing_jacobian_matches_fd() {
        let act = ShiftedActivation::unshifted(RadialProfile::Squashing);
        let v = [1.0, 0.0];
        let j = act.jacobian(&v);
        let fd = fd_jacobian(&act, &v, 1e-6);
        for k in 0..4 {
            let (a, b) = (j.as_slice()[k], fd.as_slice()[k]);
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1e-8), "{a} vs {b}");
        }
    }

    #[test]
    fn origin_jacobian_convention() {
        // Squashing: h(0) = 0, h'(0) = 0.
        let sq = ShiftedActivation::unshifted(RadialProfile::Squashing);
        assert_eq!(sq.jacobian(&[0.0, 0.0]), Matrix::zeros(2, 2));
        // Identity: g ≡ 1.
        let id = ShiftedActivation::unshifted(RadialProfile::Identity);
        assert_eq!(id.jacobian(&[0.0, 0.0]), Matrix::identity(2));
        // Sigmoid: h(0) = 1/2, g blows up, so zero by convention.
        let sg = ShiftedActivation::unshifted(RadialProfile::Sigmoid);
        assert_eq!(sg.jacobian(&[0.0, 0.0]), Matrix::zeros(2, 2));
    }

    #[test]
    fn vjp_matches_jacobian_and_shift_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in smooth_profiles() {
            let act = ShiftedActivation::new(p, 0.4);
            let v = Matrix::random_uniform(4, 1, 2.0, &mut rng).col(0);
            let d = Matrix::random_uniform(4, 1, 1.0, &mut rng).col(0);
            let (gv, gt) = act.vjp(&v, &d);
            let expect = act.jacobian(&v).transpose().mul_vec(&d);
            for (a, b) in gv.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
            let eps = 1e-6;
            let f = |t: f64| dot(&ShiftedActivation::new(p, t).apply(&v), &d);
            let fd = (f(0.4 + eps) - f(0.4 - eps)) / (2.0 * eps);
            assert!((gt - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{p:?}: {gt} vs {fd}");
        }
    }

    #[test]
    fn tags_round_trip() {
        let all = [
            RadialProfile::StepRelu,
            RadialProfile::Squashing,
            RadialProfile::ShiftedRelu { offset: 0.25 },
            RadialProfile::ShiftedSigmoid { offset: -1.5 },
            RadialProfile::Sigmoid,
            RadialProfile::Identity,
        ];
        for p in all {
            assert_eq!(RadialProfile::from_tag(p.tag(), &p.params()).unwrap(), p);
        }
        assert!(RadialProfile::from_tag("relu", &[]).is_err());
        assert!(RadialProfile::from_tag("shifted_relu", &[]).is_err());
        assert!(RadialProfile::from_tag("sigmoid", &[1.0]).is_err());
    }

    fn arb_profile() -> impl Strategy<Value = RadialProfile> {
        prop_oneof![
            Just(RadialProfile::StepRelu),
            Just(RadialProfile::Squashing),
            (-1.0f64..1.0).prop_map(|offset| RadialProfile::ShiftedRelu { offset }),
            (-1.0f64..1.0).prop_map(|offset| RadialProfile::ShiftedSigmoid { offset }),
            Just(RadialProfile::Sigmoid),
            Just(RadialProfile::Identity),
        ]
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-3.0f64..3.0, n)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn commutes_with_orthogonal(
            p in arb_profile(),
            t in -0.5f64..0.5,
            (v, seed) in (1usize..6).prop_flat_map(|n| (arb_vec(n), any::<u64>())),
        ) {
            let act = ShiftedActivation::new(p, t);
            let q = Matrix::random_orthogonal(v.len(), &mut ChaCha8Rng::seed_from_u64(seed));
            let lhs = act.apply(&q.mul_vec(&v));
            let rhs = q.mul_vec(&act.apply(&v));
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() <= 1e-10);
            }
        }

        #[test]
        fn commutes_with_inclusion(
            p in arb_profile(),
            t in -0.5f64..0.5,
            (v, extra) in (1usize..5).prop_flat_map(|m| (arb_vec(m), 0usize..4)),
        ) {
            let act = ShiftedActivation::new(p, t);
            let m = v.len();
            let inc = inclusion_matrix(m, m + extra).unwrap();
            let lhs = act.apply(&inc.mul_vec(&v));
            let rhs = inc.mul_vec(&act.apply(&v));
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn output_is_collinear(p in arb_profile(), t in -0.5f64..0.5, v in arb_vec(3)) {
            let w = ShiftedActivation::new(p, t).apply(&v);
            for i in 0..3 {
                for j in 0..3 {
                    prop_assert!((w[i] * v[j] - w[j] * v[i]).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn jacobian_matches_central_differences(
            pi in 0usize..4,
            t in -0.5f64..0.5,
            v in arb_vec(3),
        ) {
            let act = ShiftedActivation::new(smooth_profiles()[pi], t);
            prop_assume!(norm(&v) > 0.1);
            let j = act.jacobian(&v);
            let fd = fd_jacobian(&act, &v, 1e-6);
            let scale = j.max_abs().max(1e-3);
            for (a, b) in j.as_slice().iter().zip(fd.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-4 * scale, "{} vs {}", a, b);
            }
        }
    }
}
