//! Dense model math: a two-layer ReLU network (or its affine degenerate
//! case) with exact per-example parameter gradients.
//!
//! Parameters live in one flat `Vec<f64>`. For the ReLU network the layout is
//! `W1` (row-major, `h x d`), then `b1` (`h`), then `W2` (`h`), then `b2`
//! (scalar), so `p = h*d + h + h + 1`. The affine model stores `w` (`d`)
//! followed by `b`. Every [`FlatGrad`] uses the same layout as the snapshot it
//! came from, which is what makes kernel dot products well defined.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary class label in `{-1, +1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Label {
    Neg,
    Pos,
}

impl Label {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Label::Neg => -1.0,
            Label::Pos => 1.0,
        }
    }

    #[inline]
    pub fn is_pos(self) -> bool {
        self == Label::Pos
    }

    /// Prediction rule `2 * 1[f >= 0] - 1`.
    #[inline]
    pub fn predict(score: f64) -> Label {
        if score >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        }
    }
}

impl TryFrom<f64> for Label {
    type Error = Error;

    fn try_from(v: f64) -> Result<Self> {
        if v == 1.0 {
            Ok(Label::Pos)
        } else if v == -1.0 {
            Ok(Label::Neg)
        } else {
            Err(Error::InvalidLabel(v))
        }
    }
}

impl TryFrom<i8> for Label {
    type Error = Error;

    fn try_from(v: i8) -> Result<Self> {
        Label::try_from(f64::from(v))
    }
}

impl From<Label> for i8 {
    fn from(l: Label) -> i8 {
        match l {
            Label::Neg => -1,
            Label::Pos => 1,
        }
    }
}

/// Model family. `Affine` is the `f(x) = w.x + b` special case used for
/// closed-form checks and the one-dimensional synthetic study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Affine { d: usize },
    Mlp { d: usize, h: usize },
}

impl Architecture {
    /// `hidden == 0` selects the affine model.
    pub fn from_dims(d: usize, hidden: usize) -> Self {
        if hidden == 0 {
            Architecture::Affine { d }
        } else {
            Architecture::Mlp { d, h: hidden }
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Architecture::Affine { d } | Architecture::Mlp { d, .. } => d,
        }
    }

    pub fn hidden(&self) -> usize {
        match *self {
            Architecture::Affine { .. } => 0,
            Architecture::Mlp { h, .. } => h,
        }
    }

    pub fn num_params(&self) -> usize {
        match *self {
            Architecture::Affine { d } => d + 1,
            Architecture::Mlp { d, h } => h * d + h + h + 1,
        }
    }
}

/// Flat parameter vector plus the architecture that gives it meaning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    arch: Architecture,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Architecture) -> Self {
        Self {
            arch,
            values: vec![0.0; arch.num_params()],
        }
    }

    pub fn from_flat(arch: Architecture, values: Vec<f64>) -> Result<Self> {
        if values.len() != arch.num_params() {
            return Err(Error::Shape {
                what: "flat parameters",
                expected: arch.num_params(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("parameters must be finite"));
        }
        Ok(Self { arch, values })
    }

    /// Builds a ReLU network from its four blocks. `w1` is row-major `h x d`.
    pub fn mlp(d: usize, h: usize, w1: &[f64], b1: &[f64], w2: &[f64], b2: f64) -> Result<Self> {
        let check = |what, expected, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(Error::Shape {
                    what,
                    expected,
                    got,
                })
            }
        };
        check("W1", h * d, w1.len())?;
        check("b1", h, b1.len())?;
        check("W2", h, w2.len())?;
        let mut values = Vec::with_capacity(h * d + 2 * h + 1);
        values.extend_from_slice(w1);
        values.extend_from_slice(b1);
        values.extend_from_slice(w2);
        values.push(b2);
        Self::from_flat(Architecture::Mlp { d, h }, values)
    }

    pub fn affine(w: &[f64], b: f64) -> Result<Self> {
        let mut values = w.to_vec();
        values.push(b);
        Self::from_flat(Architecture::Affine { d: w.len() }, values)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// `(W1, b1, W2, b2)` views; `None` for the affine model.
    pub fn mlp_blocks(&self) -> Option<(&[f64], &[f64], &[f64], f64)> {
        match self.arch {
            Architecture::Mlp { d, h } => {
                let (w1, rest) = self.values.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, rest) = rest.split_at(h);
                Some((w1, b1, w2, rest[0]))
            }
            Architecture::Affine { .. } => None,
        }
    }

    /// Evaluates the model without shape checks. Callers guarantee `x.len() == d`.
    pub(crate) fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.arch.input_dim());
        match self.arch {
            Architecture::Affine { d } => dot(&self.values[..d], x) + self.values[d],
            Architecture::Mlp { d, h } => {
                let (w1, rest) = self.values.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, rest) = rest.split_at(h);
                let mut out = rest[0];
                for k in 0..h {
                    let a = dot(&w1[k * d..(k + 1) * d], x) + b1[k];
                    if a > 0.0 {
                        out += w2[k] * a;
                    }
                }
                out
            }
        }
    }

    /// Adds `scale * df(x)/dtheta` into `grad` and returns `f(x)`.
    pub(crate) fn accumulate_output_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        debug_assert_eq!(grad.len(), self.values.len());
        match self.arch {
            Architecture::Affine { d } => {
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += scale * xi;
                }
                grad[d] += scale;
                dot(&self.values[..d], x) + self.values[d]
            }
            Architecture::Mlp { d, h } => {
                let (w1, rest) = self.values.split_at(h * d);
                let (b1, rest) = rest.split_at(h);
                let (w2, rest) = rest.split_at(h);
                let b2 = rest[0];
                let (g_w1, g_rest) = grad.split_at_mut(h * d);
                let (g_b1, g_rest) = g_rest.split_at_mut(h);
                let (g_w2, g_b2) = g_rest.split_at_mut(h);
                let mut out = b2;
                for k in 0..h {
                    let a = dot(&w1[k * d..(k + 1) * d], x) + b1[k];
                    // ReLU subgradient at exactly 0 is taken as 0.
                    if a > 0.0 {
                        out += w2[k] * a;
                        g_w2[k] += scale * a;
                        let back = scale * w2[k];
                        g_b1[k] += back;
                        for (g, xi) in g_w1[k * d..(k + 1) * d].iter_mut().zip(x) {
                            *g += back * xi;
                        }
                    }
                }
                g_b2[0] += scale;
                out
            }
        }
    }
}

/// Frozen model parameters: the reference point `theta_0` of every influence
/// computation. Immutable once built; updates produce a new snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    params: ModelParams,
    tag: String,
}

impl ModelSnapshot {
    pub fn new(params: ModelParams, tag: impl Into<String>) -> Self {
        Self {
            params,
            tag: tag.into(),
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn arch(&self) -> Architecture {
        self.params.arch
    }

    pub fn input_dim(&self) -> usize {
        self.params.arch.input_dim()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                what: "input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input contains non-finite entries"));
        }
        Ok(())
    }

    /// `f(x; theta_0) = W2 . relu(W1 x + b1) + b2`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.params.eval(x))
    }

    /// Exact gradient of [`forward`](Self::forward) with respect to every parameter.
    pub fn output_gradient(&self, x: &[f64]) -> Result<FlatGrad> {
        self.check_input(x)?;
        Ok(self.output_gradient_unchecked(x))
    }

    pub(crate) fn output_gradient_unchecked(&self, x: &[f64]) -> FlatGrad {
        let mut g = vec![0.0; self.params.len()];
        self.params.accumulate_output_gradient(x, 1.0, &mut g);
        FlatGrad(g)
    }

    /// Returns a new snapshot with `theta + scale * delta`.
    pub fn stepped(&self, delta: &[f64], scale: f64, tag: impl Into<String>) -> Result<Self> {
        if delta.len() != self.params.len() {
            return Err(Error::Shape {
                what: "parameter delta",
                expected: self.params.len(),
                got: delta.len(),
            });
        }
        let mut params = self.params.clone();
        for (p, d) in params.values.iter_mut().zip(delta) {
            *p += scale * d;
        }
        Ok(Self::new(params, tag))
    }
}

/// Per-example parameter gradient, aligned with the snapshot's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGrad(pub(crate) Vec<f64>);

impl FlatGrad {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &FlatGrad) -> f64 {
        dot(&self.0, &other.0)
    }

    pub fn scaled(mut self, c: f64) -> FlatGrad {
        self.0.iter_mut().for_each(|v| *v *= c);
        self
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-y w))`, stable for large `|w|`.
pub fn logistic_loss(w: f64, y: Label) -> f64 {
    let t = -y.sign() * w;
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// `d logistic_loss / dw = -y * sigmoid(-y w)`.
pub fn loss_score_derivative(w: f64, y: Label) -> f64 {
    let s = y.sign();
    -s * sigmoid(-s * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> ModelSnapshot {
        ModelSnapshot::new(ModelParams::mlp(1, 1, &[1.0], &[0.0], &[1.0], 0.0).unwrap(), "tiny")
    }

    fn random_snapshot(rng: &mut ChaCha8Rng, d: usize, h: usize) -> ModelSnapshot {
        let arch = Architecture::Mlp { d, h };
        let values = (0..arch.num_params()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        ModelSnapshot::new(ModelParams::from_flat(arch, values).unwrap(), "rand")
    }

    // Second, straight-line implementation used only as an oracle.
    fn reference_forward(s: &ModelSnapshot, x: &[f64]) -> f64 {
        let (w1, b1, w2, b2) = s.params().mlp_blocks().unwrap();
        let d = x.len();
        let h = b1.len();
        let mut hidden = vec![0.0; h];
        for k in 0..h {
            let mut a = b1[k];
            for l in 0..d {
                a += w1[k * d + l] * x[l];
            }
            hidden[k] = a.max(0.0);
        }
        let mut out = b2;
        for k in 0..h {
            out += w2[k] * hidden[k];
        }
        out
    }

    #[test]
    fn zero_network_outputs_zero() {
        let s = ModelSnapshot::new(ModelParams::zeros(Architecture::Mlp { d: 3, h: 4 }), "z");
        assert_eq!(s.forward(&[1.0, -2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn relu_gating() {
        let s = tiny();
        assert_eq!(s.forward(&[2.0]).unwrap(), 2.0);
        assert_eq!(s.forward(&[-2.0]).unwrap(), 0.0);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let s = random_snapshot(&mut rng, 5, 7);
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..2.0)).collect();
            assert_relative_eq!(s.forward(&x).unwrap(), reference_forward(&s, &x), epsilon = 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let s = tiny();
        assert!(matches!(s.forward(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(s.output_gradient(&[]), Err(Error::Shape { .. })));
    }

    #[test]
    fn hand_chain_rule() {
        let g = tiny().output_gradient(&[2.0]).unwrap();
        // layout: W1, b1, W2, b2
        assert_eq!(g.as_slice(), &[2.0, 1.0, 2.0, 1.0]);
    }

    #[test]
    fn kink_subgradient_is_zero() {
        let g = tiny().output_gradient(&[0.0]).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn last_layer_gradient_is_hidden_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = random_snapshot(&mut rng, 3, 4);
        let x = [0.3, -0.7, 1.1];
        let g = s.output_gradient(&x).unwrap();
        let (w1, b1, _, _) = s.params().mlp_blocks().unwrap();
        for k in 0..4 {
            let a = dot(&w1[k * 3..k * 3 + 3], &x) + b1[k];
            assert_eq!(g.as_slice()[12 + 4 + k], a.max(0.0));
        }
        assert_eq!(*g.as_slice().last().unwrap(), 1.0);
    }

    #[test]
    fn affine_gradient_is_input_and_one() {
        let s = ModelSnapshot::new(ModelParams::affine(&[0.5, -1.0], 0.25).unwrap(), "lin");
        assert_eq!(s.forward(&[2.0, 1.0]).unwrap(), 0.25);
        assert_eq!(s.output_gradient(&[2.0, 1.0]).unwrap().as_slice(), &[2.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let step = 1e-4;
        for _ in 0..100 {
            let s = random_snapshot(&mut rng, 4, 6);
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let g = s.output_gradient(&x).unwrap();
            for p in 0..s.num_params() {
                let mut e = vec![0.0; s.num_params()];
                e[p] = 1.0;
                let fp = s.stepped(&e, step, "").unwrap().forward(&x).unwrap();
                let fm = s.stepped(&e, -step, "").unwrap().forward(&x).unwrap();
                let fd = (fp - fm) / (2.0 * step);
                let err = (fd - g.as_slice()[p]).abs() / g.as_slice()[p].abs().max(1.0);
                assert!(err < 1e-5, "param {p}: fd {fd} vs analytic {}", g.as_slice()[p]);
            }
        }
    }

    #[test]
    fn positive_homogeneity_in_output_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_snapshot(&mut rng, 3, 5);
        let (w1, b1, w2, _) = s.params().mlp_blocks().unwrap();
        let x = [0.1, 0.9, -0.4];
        let base = ModelSnapshot::new(ModelParams::mlp(3, 5, w1, b1, w2, 0.0).unwrap(), "");
        let w2c: Vec<f64> = w2.iter().map(|w| 2.5 * w).collect();
        let scaled = ModelSnapshot::new(ModelParams::mlp(3, 5, w1, b1, &w2c, 0.0).unwrap(), "");
        assert_relative_eq!(
            scaled.forward(&x).unwrap(),
            2.5 * base.forward(&x).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn logistic_loss_values() {
        assert_relative_eq!(logistic_loss(0.0, Label::Pos), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(logistic_loss(1.5, Label::Neg), 1.701_413_277_982_752_4, epsilon = 1e-12);
        assert_eq!(logistic_loss(1e4, Label::Pos), 0.0);
        assert_relative_eq!(logistic_loss(1e4, Label::Neg), 1e4, epsilon = 1e-9);
        assert!(logistic_loss(-1e308, Label::Pos).is_finite());
    }

    #[test]
    fn loss_derivative_values() {
        assert_eq!(loss_score_derivative(0.0, Label::Pos), -0.5);
        assert_eq!(loss_score_derivative(0.0, Label::Neg), 0.5);
    }

    #[test]
    fn label_validation() {
        assert!(Label::try_from(2.0).is_err());
        assert!(Label::try_from(0i8).is_err());
        assert_eq!(Label::try_from(-1i8).unwrap(), Label::Neg);
    }

    proptest::proptest! {
        #[test]
        fn loss_derivative_matches_finite_difference(w in -30.0f64..30.0, pos in proptest::bool::ANY) {
            let y = if pos { Label::Pos } else { Label::Neg };
            let h = 1e-5;
            let fd = (logistic_loss(w + h, y) - logistic_loss(w - h, y)) / (2.0 * h);
            proptest::prop_assert!((fd - loss_score_derivative(w, y)).abs() < 1e-6);
        }

        #[test]
        fn loss_nonnegative_and_derivative_sign(w in -1e3f64..1e3, pos in proptest::bool::ANY) {
            let y = if pos { Label::Pos } else { Label::Neg };
            proptest::prop_assert!(logistic_loss(w, y) >= 0.0);
            let d = loss_score_derivative(w, y);
            proptest::prop_assert!(d * y.sign() <= 0.0);
        }
    }
}
