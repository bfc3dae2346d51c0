//! Parameterized reward, Q-value and transition classes.
//!
//! Rewards and Q-values come in two flavors. Tabular parameters are the table
//! itself, kept inside the legal box by clamping. Linear parameters are one
//! weight block per step over a supplied feature map; weights live in an L2
//! ball and the dot product is clamped to the legal range when materialized.
//! One-hot features reproduce the tabular class.
//!
//! Transition models are per-row logits; materialization is a softmax, so every
//! row is strictly positive and log-likelihoods stay finite.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};
use crate::mdp::{Dynamics, EnvShape, Policy, SaTable};

/// Dense per-`(h, s, a)` feature vectors `phi_h(s, a)` of a common dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    shape: EnvShape,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(shape: EnvShape, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feature dimension must be positive"));
        }
        if data.len() != shape.sa_len() * dim {
            return Err(mismatch(format!(
                "feature map needs {} entries, got {}",
                shape.sa_len() * dim,
                data.len()
            )));
        }
        Ok(Self { shape, dim, data })
    }

    /// `phi_h(s, a) = e_{s * actions + a}`.
    pub fn one_hot(shape: EnvShape) -> Self {
        let dim = shape.states * shape.actions;
        let mut data = vec![0.0; shape.sa_len() * dim];
        for h in 0..shape.horizon {
            for s in 0..shape.states {
                for a in 0..shape.actions {
                    data[shape.sa_index(h, s, a) * dim + s * shape.actions + a] = 1.0;
                }
            }
        }
        Self { shape, dim, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> EnvShape {
        self.shape
    }

    #[inline]
    pub fn feature(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape.sa_index(h, s, a) * self.dim;
        &self.data[start..start + self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Tabular,
    Linear,
}

/// Shared machinery for the box-bounded reward and Q classes.
#[derive(Clone, Debug, PartialEq)]
enum Repr {
    Tabular,
    Linear {
        features: Arc<FeatureMap>,
        radius: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Bounded {
    shape: EnvShape,
    upper: f64,
    repr: Repr,
    params: Vec<f64>,
}

impl Bounded {
    fn param_len(&self) -> usize {
        match &self.repr {
            Repr::Tabular => self.shape.sa_len(),
            Repr::Linear { features, .. } => self.shape.horizon * features.dim(),
        }
    }

    fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.param_len() {
            return Err(mismatch(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid("parameters must be finite"));
        }
        Ok(match &self.repr {
            Repr::Tabular => raw.iter().map(|v| v.clamp(0.0, self.upper)).collect(),
            Repr::Linear { features, radius } => {
                let mut out = raw.to_vec();
                for block in out.chunks_mut(features.dim()) {
                    let norm = block.iter().map(|w| w * w).sum::<f64>().sqrt();
                    // slack keeps the projection idempotent under rounding
                    if norm > *radius * (1.0 + 1e-12) {
                        let scale = radius / norm;
                        block.iter_mut().for_each(|w| *w *= scale);
                    }
                }
                out
            }
        })
    }

    fn materialize(&self) -> SaTable {
        match &self.repr {
            Repr::Tabular => {
                SaTable::new(self.shape, self.params.clone()).expect("tabular params match shape")
            }
            Repr::Linear { features, .. } => {
                let dim = features.dim();
                SaTable::from_fn(self.shape, |h, s, a| {
                    let w = &self.params[h * dim..(h + 1) * dim];
                    let dot: f64 = w
                        .iter()
                        .zip(features.feature(h, s, a))
                        .map(|(x, y)| x * y)
                        .sum();
                    dot.clamp(0.0, self.upper)
                })
            }
        }
    }

    /// Maps a gradient over table entries to a gradient over parameters,
    /// treating the linear clamp as the identity.
    fn pullback(&self, table_grad: &SaTable) -> Vec<f64> {
        match &self.repr {
            Repr::Tabular => table_grad.values().to_vec(),
            Repr::Linear { features, .. } => {
                let dim = features.dim();
                let mut g = vec![0.0; self.param_len()];
                for h in 0..self.shape.horizon {
                    let block = &mut g[h * dim..(h + 1) * dim];
                    for s in 0..self.shape.states {
                        for a in 0..self.shape.actions {
                            let v = table_grad.get(h, s, a);
                            if v != 0.0 {
                                for (b, f) in block.iter_mut().zip(features.feature(h, s, a)) {
                                    *b += v * f;
                                }
                            }
                        }
                    }
                }
                g
            }
        }
    }

    fn kind(&self) -> ClassKind {
        match self.repr {
            Repr::Tabular => ClassKind::Tabular,
            Repr::Linear { .. } => ClassKind::Linear,
        }
    }

    fn tabular(shape: EnvShape, upper: f64, raw: &[f64]) -> Result<Self> {
        let mut b = Bounded {
            shape,
            upper,
            repr: Repr::Tabular,
            params: Vec::new(),
        };
        b.params = b.project(raw)?;
        Ok(b)
    }

    fn linear(upper: f64, features: Arc<FeatureMap>, radius: f64, raw: &[f64]) -> Result<Self> {
        if radius <= 0.0 || !radius.is_finite() {
            return Err(invalid(format!(
                "weight radius must be positive, got {radius}"
            )));
        }
        let shape = features.shape();
        let mut b = Bounded {
            shape,
            upper,
            repr: Repr::Linear { features, radius },
            params: Vec::new(),
        };
        b.params = b.project(raw)?;
        Ok(b)
    }
}

/// Common surface of the parameterized classes.
pub trait Parameterized: Sized {
    type Table;

    fn shape(&self) -> EnvShape;
    fn params(&self) -> &[f64];
    /// Projects a raw parameter vector onto the feasible parameter set.
    fn project(&self, raw: &[f64]) -> Result<Vec<f64>>;
    /// Same class, new parameters (projected).
    fn with_params(&self, raw: &[f64]) -> Result<Self>;
    fn materialize(&self) -> Self::Table;
}

macro_rules! bounded_class {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Clone, Debug, PartialEq)]
        pub struct $name {
            inner: Bounded,
        }

        impl $name {
            pub fn kind(&self) -> ClassKind {
                self.inner.kind()
            }

            /// Upper end of the materialized range.
            pub fn upper(&self) -> f64 {
                self.inner.upper
            }

            pub fn features(&self) -> Option<&FeatureMap> {
                match &self.inner.repr {
                    Repr::Tabular => None,
                    Repr::Linear { features, .. } => Some(features),
                }
            }

            /// Gradient over parameters from a gradient over table entries.
            pub fn pullback(&self, table_grad: &SaTable) -> Vec<f64> {
                self.inner.pullback(table_grad)
            }
        }

        impl Parameterized for $name {
            type Table = SaTable;

            fn shape(&self) -> EnvShape {
                self.inner.shape
            }

            fn params(&self) -> &[f64] {
                &self.inner.params
            }

            fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
                self.inner.project(raw)
            }

            fn with_params(&self, raw: &[f64]) -> Result<Self> {
                let mut inner = self.inner.clone();
                inner.params = inner.project(raw)?;
                Ok(Self { inner })
            }

            fn materialize(&self) -> SaTable {
                self.inner.materialize()
            }
        }
    };
}

bounded_class!(
    RewardFunction,
    "Reward class member with values in `[0, 1]`."
);
bounded_class!(
    QFunction,
    "Q-value class member with values in `[0, horizon]`; `Q_H` is implicitly zero."
);

impl RewardFunction {
    /// Tabular reward; raw entries are clamped to `[0, 1]`.
    pub fn tabular(shape: EnvShape, raw: &[f64]) -> Result<Self> {
        Ok(Self {
            inner: Bounded::tabular(shape, 1.0, raw)?,
        })
    }

    pub fn from_table(table: &SaTable) -> Result<Self> {
        Self::tabular(table.shape(), table.values())
    }

    /// The all-`value` tabular reward.
    pub fn constant(shape: EnvShape, value: f64) -> Self {
        Self::tabular(shape, &vec![value; shape.sa_len()])
            .expect("constant table has the right length")
    }

    pub fn linear(features: Arc<FeatureMap>, radius: f64, weights: &[f64]) -> Result<Self> {
        Ok(Self {
            inner: Bounded::linear(1.0, features, radius, weights)?,
        })
    }
}

impl QFunction {
    /// Tabular Q; raw entries are clamped to `[0, horizon]`.
    pub fn tabular(shape: EnvShape, raw: &[f64]) -> Result<Self> {
        Ok(Self {
            inner: Bounded::tabular(shape, shape.horizon as f64, raw)?,
        })
    }

    pub fn from_table(table: &SaTable) -> Result<Self> {
        Self::tabular(table.shape(), table.values())
    }

    /// `Q_h = horizon - h` everywhere: the largest value any reward in `[0, 1]` supports.
    pub fn optimistic(shape: EnvShape) -> Self {
        let t = SaTable::from_fn(shape, |h, _, _| shape.remaining(h));
        Self::from_table(&t).expect("optimistic table is in range")
    }

    pub fn linear(features: Arc<FeatureMap>, radius: f64, weights: &[f64]) -> Result<Self> {
        let upper = features.shape().horizon as f64;
        Ok(Self {
            inner: Bounded::linear(upper, features, radius, weights)?,
        })
    }

    pub fn greedy_policy(&self) -> Policy {
        crate::mdp::greedy_policy(&self.materialize())
    }
}

/// Per-`(h, s, a)` logits over next states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    shape: EnvShape,
    logits: Vec<f64>,
}

impl TransitionModel {
    pub fn uniform(shape: EnvShape) -> Self {
        Self {
            shape,
            logits: vec![0.0; shape.sas_len()],
        }
    }

    pub fn from_logits(shape: EnvShape, logits: Vec<f64>) -> Result<Self> {
        let model = Self::uniform(shape);
        let logits = model.project(&logits)?;
        Ok(Self { shape, logits })
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    #[inline]
    pub fn row_logits(&self, h: usize, s: usize, a: usize) -> &[f64] {
        let start = self.shape.sa_index(h, s, a) * self.shape.states;
        &self.logits[start..start + self.shape.states]
    }

    /// Materialized probabilities of one row.
    pub fn row_probs(&self, h: usize, s: usize, a: usize) -> Vec<f64> {
        softmax(self.row_logits(h, s, a))
    }
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

impl Parameterized for TransitionModel {
    type Table = Dynamics;

    fn shape(&self) -> EnvShape {
        self.shape
    }

    fn params(&self) -> &[f64] {
        &self.logits
    }

    /// Logits are unconstrained: only length and finiteness are checked.
    fn project(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.shape.sas_len() {
            return Err(mismatch(format!(
                "expected {} logits, got {}",
                self.shape.sas_len(),
                raw.len()
            )));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(invalid("logits must be finite"));
        }
        Ok(raw.to_vec())
    }

    fn with_params(&self, raw: &[f64]) -> Result<Self> {
        Ok(Self {
            shape: self.shape,
            logits: self.project(raw)?,
        })
    }

    fn materialize(&self) -> Dynamics {
        let n = self.shape.states;
        let mut probs = Vec::with_capacity(self.shape.sas_len());
        for row in self.logits.chunks(n) {
            probs.extend(softmax(row));
        }
        Dynamics::new(self.shape, probs).expect("softmax rows are distributions")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn shape() -> EnvShape {
        EnvShape::new(3, 2, 4, 0).unwrap()
    }

    #[test]
    fn tabular_materialize_is_identity() {
        let vals: Vec<f64> = (0..shape().sa_len()).map(|i| (i as f64) / 30.0).collect();
        let r = RewardFunction::tabular(shape(), &vals).unwrap();
        assert_eq!(r.materialize().values(), &vals[..]);
    }

    #[test]
    fn linear_zero_weights_materialize_to_zero() {
        let f = Arc::new(FeatureMap::one_hot(shape()));
        let r = RewardFunction::linear(f.clone(), 2.0, &vec![0.0; 4 * f.dim()]).unwrap();
        assert!(r.materialize().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_logits_are_uniform() {
        let m = TransitionModel::from_logits(shape(), vec![3.5; shape().sas_len()]).unwrap();
        for p in m.materialize().probs() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn tabular_clamps() {
        let r = RewardFunction::constant(shape(), 0.5);
        let mut raw = vec![0.5; shape().sa_len()];
        raw[0] = 1.7;
        raw[1] = -0.3;
        let p = r.project(&raw).unwrap();
        assert_eq!((p[0], p[1], p[2]), (1.0, 0.0, 0.5));
        let q = QFunction::optimistic(shape());
        let p = q.project(&vec![9.0; shape().sa_len()]).unwrap();
        assert!(p.iter().all(|&v| v == 4.0));
    }

    #[test]
    fn linear_ball_projection_scales() {
        let f = Arc::new(FeatureMap::one_hot(shape()));
        let radius = 1.5;
        let r = RewardFunction::linear(f.clone(), radius, &vec![0.0; 4 * f.dim()]).unwrap();
        let mut raw = vec![0.0; 4 * f.dim()];
        raw[0] = 2.0 * radius;
        let p = r.project(&raw).unwrap();
        let norm = p[..f.dim()].iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!((norm - radius).abs() < 1e-12);
    }

    #[test]
    fn one_hot_linear_matches_tabular() {
        let s = shape();
        let f = Arc::new(FeatureMap::one_hot(s));
        let vals: Vec<f64> = (0..s.sa_len())
            .map(|i| ((i * 7) % 10) as f64 / 10.0)
            .collect();
        // one weight block per step equals that step's table slice
        let lin = RewardFunction::linear(f, 100.0, &vals).unwrap();
        let tab = RewardFunction::tabular(s, &vals).unwrap();
        assert_eq!(lin.materialize(), tab.materialize());
    }

    #[test]
    fn length_mismatch_errors() {
        let r = RewardFunction::constant(shape(), 0.0);
        assert!(r.project(&[0.0; 3]).is_err());
        assert!(TransitionModel::uniform(shape())
            .project(&[0.0; 2])
            .is_err());
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            raw in prop::collection::vec(-3.0f64..3.0, 24),
            feasible in prop::collection::vec(0.0f64..1.0, 24),
        ) {
            let r = RewardFunction::constant(shape(), 0.0);
            let p = r.project(&raw).unwrap();
            prop_assert_eq!(r.project(&p).unwrap(), p.clone());
            let d_proj: f64 = feasible.iter().zip(&p).map(|(y, x)| (y - x).powi(2)).sum();
            let d_raw: f64 = feasible.iter().zip(&raw).map(|(y, x)| (y - x).powi(2)).sum();
            prop_assert!(d_proj <= d_raw + 1e-12);
            let q = QFunction::optimistic(shape());
            let raw_q: Vec<f64> = raw.iter().map(|v| v * 3.0).collect();
            let pq = q.project(&raw_q).unwrap();
            prop_assert_eq!(q.project(&pq).unwrap(), pq);
        }

        #[test]
        fn materialized_ranges_hold(weights in prop::collection::vec(-5.0f64..5.0, 24)) {
            let f = Arc::new(FeatureMap::one_hot(shape()));
            let r = RewardFunction::linear(f.clone(), 3.0, &weights).unwrap();
            prop_assert!(r.materialize().values().iter().all(|v| (0.0..=1.0).contains(v)));
            let q = QFunction::linear(f, 3.0, &weights).unwrap();
            prop_assert!(q.materialize().values().iter().all(|v| (0.0..=4.0).contains(v)));
            let lin_p = r.project(&weights).unwrap();
            prop_assert_eq!(r.project(&lin_p).unwrap(), lin_p);
        }

        #[test]
        fn logits_materialize_to_positive_rows(logits in prop::collection::vec(-30.0f64..30.0, 72)) {
            let m = TransitionModel::from_logits(shape(), logits).unwrap();
            let d = m.materialize();
            for row in d.probs().chunks(3) {
                prop_assert!(row.iter().all(|&p| p > 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }
}
