use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Maximize,
    Minimize,
}

type ScoreFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A user objective over `(recall, precision)`. It must be monotone in both
/// arguments in the direction given by `sense`.
#[derive(Clone)]
pub struct Custom {
    pub name: String,
    pub sense: Sense,
    f: Arc<ScoreFn>,
}

impl Custom {
    pub fn new(
        name: impl Into<String>,
        sense: Sense,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            sense,
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for Custom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Custom")
            .field("name", &self.name)
            .field("sense", &self.sense)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Objective {
    /// `(1-alpha)·recall + alpha·precision`, maximized.
    Linear { alpha: f64 },
    /// `(1-alpha)/recall + alpha/precision`, minimized.
    Reciprocal { alpha: f64 },
    Custom(Custom),
}

impl Objective {
    pub fn linear(alpha: f64) -> Self {
        Self::Linear { alpha }
    }

    pub fn reciprocal(alpha: f64) -> Self {
        Self::Reciprocal { alpha }
    }

    pub fn precision() -> Self {
        Self::Linear { alpha: 1.0 }
    }

    pub fn recall() -> Self {
        Self::Linear { alpha: 0.0 }
    }

    pub fn custom(
        name: impl Into<String>,
        sense: Sense,
        f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::Custom(Custom::new(name, sense, f))
    }

    pub fn validate(&self) -> Result<()> {
        match self.alpha() {
            Some(a) if !(0.0..=1.0).contains(&a) => Err(Error::InvalidAlpha(a)),
            _ => Ok(()),
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Self::Linear { alpha } | Self::Reciprocal { alpha } => Some(*alpha),
            Self::Custom(_) => None,
        }
    }

    pub fn sense(&self) -> Sense {
        match self {
            Self::Linear { .. } => Sense::Maximize,
            Self::Reciprocal { .. } => Sense::Minimize,
            Self::Custom(c) => c.sense,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Self::Linear { alpha } if *alpha == 1.0 => "precision".into(),
            Self::Linear { alpha } => format!("linear(alpha={alpha})"),
            Self::Reciprocal { alpha } => format!("reciprocal(alpha={alpha})"),
            Self::Custom(c) => c.name.clone(),
        }
    }

    /// Scores a policy. An undefined precision counts as 0.
    pub fn score(&self, recall: f64, precision: Option<f64>) -> f64 {
        let p = precision.unwrap_or(0.0);
        match self {
            Self::Linear { alpha } => (1.0 - alpha) * recall + alpha * p,
            Self::Reciprocal { alpha } => inv(1.0 - alpha, recall) + inv(*alpha, p),
            Self::Custom(c) => (c.f)(recall, p),
        }
    }

    /// Whether `a` is strictly better than `b`.
    pub fn better(&self, a: f64, b: f64) -> bool {
        match self.sense() {
            Sense::Maximize => a > b,
            Sense::Minimize => a < b,
        }
    }

    pub fn worst(&self) -> f64 {
        match self.sense() {
            Sense::Maximize => f64::NEG_INFINITY,
            Sense::Minimize => f64::INFINITY,
        }
    }

    /// Score oriented so that larger is always better.
    pub fn utility(&self, score: f64) -> f64 {
        match self.sense() {
            Sense::Maximize => score,
            Sense::Minimize => -score,
        }
    }
}

fn inv(w: f64, v: f64) -> f64 {
    if w == 0.0 {
        0.0
    } else if v <= 0.0 {
        f64::INFINITY
    } else {
        w / v
    }
}
