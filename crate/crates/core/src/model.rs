//! Sinusoidal INR architectures.
//!
//! * single layer: `x(t) = Σ_i a2_i · sin(ω0·a1_i·t + b1_i) + b2`
//! * double layer: `x(t) = Σ_j a3_j · sin(Σ_i A2_ij · sin(ω0·a1_i·t + b1_i) + b2_j) + b3`
//! * multi-output: the double-layer trunk shared by `C` output heads
//!
//! `ω0` multiplies the first-layer pre-activation only. It is a fixed
//! hyperparameter and is not counted as a parameter.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Sine,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sine => x.sin(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Value and derivative. ReLU uses derivative 0 at exactly 0.
    #[inline]
    pub fn apply_with_slope(self, x: f64) -> (f64, f64) {
        match self {
            Activation::Sine => crate::trig::sin_cos(x),
            Activation::Relu => {
                if x > 0.0 {
                    (x, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Sine => "sine",
            Activation::Relu => "relu",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" | "sin" => Ok(Activation::Sine),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

/// Layer widths of an architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchKind {
    Single { h: usize },
    Double { h1: usize, h2: usize },
    Multi { h1: usize, h2: usize, channels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    #[serde(flatten)]
    pub kind: ArchKind,
    #[serde(default)]
    pub activation: Activation,
    pub omega0: f64,
}

pub const DEFAULT_OMEGA0: f64 = 30.0;

impl ArchSpec {
    pub fn single(h: usize) -> Self {
        Self {
            kind: ArchKind::Single { h },
            activation: Activation::Sine,
            omega0: DEFAULT_OMEGA0,
        }
    }

    pub fn double(h1: usize, h2: usize) -> Self {
        Self {
            kind: ArchKind::Double { h1, h2 },
            activation: Activation::Sine,
            omega0: DEFAULT_OMEGA0,
        }
    }

    pub fn multi(h1: usize, h2: usize, channels: usize) -> Self {
        Self {
            kind: ArchKind::Multi { h1, h2, channels },
            activation: Activation::Sine,
            omega0: DEFAULT_OMEGA0,
        }
    }

    pub fn with_omega0(mut self, omega0: f64) -> Self {
        self.omega0 = omega0;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn n_outputs(&self) -> usize {
        match self.kind {
            ArchKind::Multi { channels, .. } => channels,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            ArchKind::Single { h } => h >= 1,
            ArchKind::Double { h1, h2 } => h1 >= 1 && h2 >= 1,
            ArchKind::Multi { h1, h2, channels } => h1 >= 1 && h2 >= 1 && channels >= 2,
        };
        if !ok {
            return Err(Error::invalid(format!("invalid architecture {:?}", self.kind)));
        }
        if self.activation == Activation::Relu && matches!(self.kind, ArchKind::Single { .. }) {
            return Err(Error::invalid(
                "relu activation is only supported on layered (double/multi) models",
            ));
        }
        if !(self.omega0.is_finite() && self.omega0 > 0.0) {
            return Err(Error::invalid(format!("omega0 must be positive, got {}", self.omega0)));
        }
        Ok(())
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ArchKind::Single { h } => write!(f, "single(h={h})"),
            ArchKind::Double { h1, h2 } => write!(f, "double(h1={h1}, h2={h2})"),
            ArchKind::Multi { h1, h2, channels } => {
                write!(f, "multi(h1={h1}, h2={h2}, C={channels})")
            }
        }?;
        if self.activation != Activation::Sine {
            write!(f, "[{}]", self.activation)?;
        }
        Ok(())
    }
}

/// Closed-form parameter count: `3h + 1`, `2h1 + h1·h2 + 2h2 + 1`, or
/// `2h1 + h1·h2 + h2 + C·(h2 + 1)` for the shared-trunk model.
pub fn param_count(arch: &ArchSpec) -> usize {
    match arch.kind {
        ArchKind::Single { h } => 3 * h + 1,
        ArchKind::Double { h1, h2 } => 2 * h1 + h1 * h2 + 2 * h2 + 1,
        ArchKind::Multi { h1, h2, channels } => 2 * h1 + h1 * h2 + h2 + channels * (h2 + 1),
    }
}

/// Total size of `channels` independent double-layer models.
pub fn separate_param_count(h1: usize, h2: usize, channels: usize) -> usize {
    channels * param_count(&ArchSpec::double(h1, h2))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SingleLayerModel {
    pub(crate) omega0: f64,
    pub(crate) a1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) a2: Vec<f64>,
    pub(crate) b2: f64,
}

impl SingleLayerModel {
    pub fn new(omega0: f64, a1: Vec<f64>, b1: Vec<f64>, a2: Vec<f64>, b2: f64) -> Result<Self> {
        let h = a1.len();
        if h == 0 {
            return Err(Error::invalid("single-layer model needs h >= 1"));
        }
        check_len("b1", &b1, h)?;
        check_len("a2", &a2, h)?;
        let m = Self {
            omega0,
            a1,
            b1,
            a2,
            b2,
        };
        check_finite(&m.named_params())?;
        check_finite(&[("omega0", std::slice::from_ref(&m.omega0))])?;
        Ok(m)
    }

    pub fn zeros(h: usize, omega0: f64) -> Self {
        Self {
            omega0,
            a1: vec![0.0; h],
            b1: vec![0.0; h],
            a2: vec![0.0; h],
            b2: 0.0,
        }
    }

    pub fn h(&self) -> usize {
        self.a1.len()
    }
    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn a1(&self) -> &[f64] {
        &self.a1
    }
    pub fn b1(&self) -> &[f64] {
        &self.b1
    }
    pub fn a2(&self) -> &[f64] {
        &self.a2
    }
    pub fn b2(&self) -> f64 {
        self.b2
    }

    pub fn forward(&self, t: f64) -> f64 {
        let mut acc = self.b2;
        for i in 0..self.h() {
            acc += self.a2[i] * (self.omega0 * self.a1[i] * t + self.b1[i]).sin();
        }
        acc
    }

    pub(crate) fn named_params(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("a1", &self.a1),
            ("b1", &self.b1),
            ("a2", &self.a2),
            ("b2", std::slice::from_ref(&self.b2)),
        ]
    }
}

/// Two sinusoidal hidden layers followed by `C` linear outputs. `a2` is
/// `h1 × h2` row-major, `a3` is `h2 × C` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoLayerWeights {
    pub(crate) h1: usize,
    pub(crate) h2: usize,
    pub(crate) c: usize,
    pub(crate) a1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) a2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
    pub(crate) a3: Vec<f64>,
    pub(crate) b3: Vec<f64>,
}

impl TwoLayerWeights {
    pub fn zeros(h1: usize, h2: usize, c: usize) -> Self {
        Self {
            h1,
            h2,
            c,
            a1: vec![0.0; h1],
            b1: vec![0.0; h1],
            a2: vec![0.0; h1 * h2],
            b2: vec![0.0; h2],
            a3: vec![0.0; h2 * c],
            b3: vec![0.0; c],
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub fn new(
        h1: usize,
        h2: usize,
        c: usize,
        a1: Vec<f64>,
        b1: Vec<f64>,
        a2: Vec<f64>,
        b2: Vec<f64>,
        a3: Vec<f64>,
        b3: Vec<f64>,
    ) -> Result<Self> {
        if h1 == 0 || h2 == 0 || c == 0 {
            return Err(Error::invalid(format!(
                "layer widths must be positive (h1={h1}, h2={h2}, C={c})"
            )));
        }
        check_len("a1", &a1, h1)?;
        check_len("b1", &b1, h1)?;
        check_len("A2", &a2, h1 * h2)?;
        check_len("b2", &b2, h2)?;
        check_len("A3", &a3, h2 * c)?;
        check_len("b3", &b3, c)?;
        let w = Self {
            h1,
            h2,
            c,
            a1,
            b1,
            a2,
            b2,
            a3,
            b3,
        };
        check_finite(&w.named_params())?;
        Ok(w)
    }

    pub fn h1(&self) -> usize {
        self.h1
    }
    pub fn h2(&self) -> usize {
        self.h2
    }
    pub fn n_outputs(&self) -> usize {
        self.c
    }
    pub fn a1(&self) -> &[f64] {
        &self.a1
    }
    pub fn b1(&self) -> &[f64] {
        &self.b1
    }
    /// Hidden-to-hidden weights, `h1 × h2` row-major.
    pub fn a2(&self) -> &[f64] {
        &self.a2
    }
    pub fn b2(&self) -> &[f64] {
        &self.b2
    }
    /// Output weights, `h2 × C` row-major.
    pub fn a3(&self) -> &[f64] {
        &self.a3
    }
    pub fn b3(&self) -> &[f64] {
        &self.b3
    }

    /// Second hidden layer activations at `t`.
    fn trunk(&self, omega0: f64, act: Activation, t: f64) -> Vec<f64> {
        let mut v = self.b2.clone();
        for i in 0..self.h1 {
            let z = act.apply(omega0 * self.a1[i] * t + self.b1[i]);
            let row = &self.a2[i * self.h2..(i + 1) * self.h2];
            for (vj, aij) in v.iter_mut().zip(row) {
                *vj += aij * z;
            }
        }
        for vj in &mut v {
            *vj = act.apply(*vj);
        }
        v
    }

    pub(crate) fn forward_into(&self, omega0: f64, act: Activation, t: f64, out: &mut [f64]) {
        let y = self.trunk(omega0, act, t);
        out.copy_from_slice(&self.b3);
        for (j, yj) in y.iter().enumerate() {
            let row = &self.a3[j * self.c..(j + 1) * self.c];
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yj;
            }
        }
    }

    pub(crate) fn named_params(&self) -> Vec<(&'static str, &[f64])> {
        vec![
            ("a1", &self.a1),
            ("b1", &self.b1),
            ("A2", &self.a2),
            ("b2", &self.b2),
            ("A3", &self.a3),
            ("b3", &self.b3),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DoubleLayerModel {
    pub(crate) omega0: f64,
    pub(crate) activation: Activation,
    pub(crate) weights: TwoLayerWeights,
}

impl DoubleLayerModel {
    pub fn new(omega0: f64, activation: Activation, weights: TwoLayerWeights) -> Result<Self> {
        if weights.c != 1 {
            return Err(Error::Dimension {
                field: "b3".into(),
                expected: 1,
                found: weights.c,
            });
        }
        Ok(Self {
            omega0,
            activation,
            weights,
        })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn weights(&self) -> &TwoLayerWeights {
        &self.weights
    }
    pub fn a3(&self) -> &[f64] {
        &self.weights.a3
    }
    pub fn b3(&self) -> f64 {
        self.weights.b3[0]
    }

    pub fn forward(&self, t: f64) -> f64 {
        let mut out = [0.0];
        self.weights
            .forward_into(self.omega0, self.activation, t, &mut out);
        out[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiOutputModel {
    pub(crate) omega0: f64,
    pub(crate) activation: Activation,
    pub(crate) weights: TwoLayerWeights,
    pub(crate) labels: Vec<String>,
}

impl MultiOutputModel {
    pub fn new(
        omega0: f64,
        activation: Activation,
        weights: TwoLayerWeights,
        labels: Vec<String>,
    ) -> Result<Self> {
        if weights.c < 2 {
            return Err(Error::invalid("multi-output model needs at least 2 channels"));
        }
        if labels.len() != weights.c {
            return Err(Error::Dimension {
                field: "labels".into(),
                expected: weights.c,
                found: labels.len(),
            });
        }
        Ok(Self {
            omega0,
            activation,
            weights,
            labels,
        })
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn weights(&self) -> &TwoLayerWeights {
        &self.weights
    }
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
    pub fn n_channels(&self) -> usize {
        self.weights.c
    }

    pub fn forward(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.weights.c];
        self.weights
            .forward_into(self.omega0, self.activation, t, &mut out);
        out
    }

    /// The double-layer model made of the shared trunk and output head `c`.
    pub fn channel_model(&self, c: usize) -> DoubleLayerModel {
        let w = &self.weights;
        let mut single = TwoLayerWeights {
            c: 1,
            a3: (0..w.h2).map(|j| w.a3[j * w.c + c]).collect(),
            b3: vec![w.b3[c]],
            ..w.clone()
        };
        single.a3.shrink_to_fit();
        DoubleLayerModel {
            omega0: self.omega0,
            activation: self.activation,
            weights: single,
        }
    }
}

pub fn forward_single(model: &SingleLayerModel, t: f64) -> f64 {
    model.forward(t)
}

pub fn forward_double(model: &DoubleLayerModel, t: f64) -> f64 {
    model.forward(t)
}

pub fn forward_multi(model: &MultiOutputModel, t: f64) -> Vec<f64> {
    model.forward(t)
}

/// Any of the three architectures.
#[derive(Debug, Clone, PartialEq)]
pub enum InrModel {
    Single(SingleLayerModel),
    Double(DoubleLayerModel),
    Multi(MultiOutputModel),
}

impl InrModel {
    pub fn arch(&self) -> ArchSpec {
        match self {
            InrModel::Single(m) => ArchSpec {
                kind: ArchKind::Single { h: m.h() },
                activation: Activation::Sine,
                omega0: m.omega0,
            },
            InrModel::Double(m) => ArchSpec {
                kind: ArchKind::Double {
                    h1: m.weights.h1,
                    h2: m.weights.h2,
                },
                activation: m.activation,
                omega0: m.omega0,
            },
            InrModel::Multi(m) => ArchSpec {
                kind: ArchKind::Multi {
                    h1: m.weights.h1,
                    h2: m.weights.h2,
                    channels: m.weights.c,
                },
                activation: m.activation,
                omega0: m.omega0,
            },
        }
    }

    pub fn n_outputs(&self) -> usize {
        match self {
            InrModel::Multi(m) => m.weights.c,
            _ => 1,
        }
    }

    /// All outputs at `t`, one per channel.
    pub fn forward(&self, t: f64) -> Vec<f64> {
        match self {
            InrModel::Single(m) => vec![m.forward(t)],
            InrModel::Double(m) => vec![m.forward(t)],
            InrModel::Multi(m) => m.forward(t),
        }
    }

    /// Every trainable container with its name, in the canonical flat order.
    pub fn named_params(&self) -> Vec<(&'static str, &[f64])> {
        match self {
            InrModel::Single(m) => m.named_params(),
            InrModel::Double(m) => m.weights.named_params(),
            InrModel::Multi(m) => m.weights.named_params(),
        }
    }

    /// Number of trainable scalars found by walking the weight containers.
    pub fn enumerate_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.named_params()
            .iter()
            .flat_map(|(_, p)| p.iter().copied())
            .collect()
    }

    /// Inverse of [`InrModel::flatten`]; `flat` must hold exactly
    /// [`InrModel::enumerate_params`] values.
    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut rest = flat;
        let mut take = |dst: &mut [f64]| {
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        };
        match self {
            InrModel::Single(m) => {
                take(&mut m.a1);
                take(&mut m.b1);
                take(&mut m.a2);
                take(std::slice::from_mut(&mut m.b2));
            }
            InrModel::Double(DoubleLayerModel { weights: w, .. })
            | InrModel::Multi(MultiOutputModel { weights: w, .. }) => {
                take(&mut w.a1);
                take(&mut w.b1);
                take(&mut w.a2);
                take(&mut w.b2);
                take(&mut w.a3);
                take(&mut w.b3);
            }
        }
        debug_assert!(rest.is_empty());
    }
}

pub(crate) fn check_len(field: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::Dimension {
            field: field.to_string(),
            expected,
            found: v.len(),
        });
    }
    Ok(())
}

pub(crate) fn check_finite(params: &[(&str, &[f64])]) -> Result<()> {
    for (name, values) in params {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                param: name.to_string(),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn paper_parameter_counts() {
        assert_eq!(param_count(&ArchSpec::single(554)), 1663);
        assert_eq!(param_count(&ArchSpec::double(30, 50)), 1661);
        assert_eq!(separate_param_count(50, 50, 3), 8103);
        assert_eq!(param_count(&ArchSpec::multi(50, 100, 3)), 5503);
        assert_eq!(param_count(&ArchSpec::double(1, 1)), 6);
        assert_eq!(param_count(&ArchSpec::double(50, 70)), 3741);
    }

    #[test]
    fn constant_paths() {
        let mut m = SingleLayerModel::zeros(7, 30.0);
        m.b2 = 0.5;
        for t in [-1.0, -0.3, 0.0, 0.9] {
            assert_eq!(m.forward(t), 0.5);
        }
        let mut w = TwoLayerWeights::zeros(3, 4, 1);
        w.b3 = vec![-2.0];
        let d = DoubleLayerModel::new(30.0, Activation::Sine, w).unwrap();
        assert_eq!(d.forward(0.25), -2.0);
        let mut w = TwoLayerWeights::zeros(3, 4, 3);
        w.b3 = vec![1.0, 2.0, 3.0];
        let labels = vec!["v_A".into(), "v_B".into(), "v_C".into()];
        let m = MultiOutputModel::new(30.0, Activation::Sine, w, labels).unwrap();
        assert_eq!(m.forward(-0.7), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn single_closed_form() {
        let m = SingleLayerModel::new(1.0, vec![PI], vec![0.0], vec![1.0], 0.0).unwrap();
        assert!((m.forward(0.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn double_closed_form() {
        let (om, a1, b1, a2, b2, a3, b3) = (2.0, 0.7, 0.1, 1.3, -0.2, 0.8, 0.05);
        let w = TwoLayerWeights::new(
            1,
            1,
            1,
            vec![a1],
            vec![b1],
            vec![a2],
            vec![b2],
            vec![a3],
            vec![b3],
        )
        .unwrap();
        let m = DoubleLayerModel::new(om, Activation::Sine, w).unwrap();
        let t = 0.37;
        let expected = ((om * a1 * t + b1).sin() * a2 + b2).sin() * a3 + b3;
        assert!((m.forward(t) - expected).abs() < 1e-15);

        let relu = DoubleLayerModel {
            activation: Activation::Relu,
            ..m
        };
        let expected = ((om * a1 * t + b1).max(0.0) * a2 + b2).max(0.0) * a3 + b3;
        assert!((relu.forward(t) - expected).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors_name_the_field() {
        let err = TwoLayerWeights::new(
            2,
            3,
            1,
            vec![0.0; 2],
            vec![0.0; 2],
            vec![0.0; 5],
            vec![0.0; 3],
            vec![0.0; 3],
            vec![0.0],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Dimension { ref field, expected: 6, found: 5 } if field == "A2"));
        let err = SingleLayerModel::new(1.0, vec![0.0; 2], vec![0.0; 2], vec![f64::NAN; 2], 0.0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { ref param } if param == "a2"));
    }

    #[test]
    fn arch_validation() {
        assert!(ArchSpec::single(0).validate().is_err());
        assert!(ArchSpec::multi(3, 3, 1).validate().is_err());
        assert!(ArchSpec::double(3, 3).with_omega0(-1.0).validate().is_err());
        assert!(ArchSpec::single(3)
            .with_activation(Activation::Relu)
            .validate()
            .is_err());
        assert!(ArchSpec::double(3, 3)
            .with_activation(Activation::Relu)
            .validate()
            .is_ok());
    }

    #[test]
    fn flatten_roundtrip_preserves_model() {
        let mut w = TwoLayerWeights::zeros(2, 3, 2);
        for (k, x) in w.a2.iter_mut().enumerate() {
            *x = k as f64 * 0.1;
        }
        w.b3 = vec![4.0, 5.0];
        let m = InrModel::Multi(
            MultiOutputModel::new(10.0, Activation::Sine, w, vec!["a".into(), "b".into()])
                .unwrap(),
        );
        let flat = m.flatten();
        assert_eq!(flat.len(), param_count(&m.arch()));
        let mut z = m.clone();
        z.set_flat(&vec![0.0; flat.len()]);
        assert_ne!(z, m);
        z.set_flat(&flat);
        assert_eq!(z, m);
    }
}
