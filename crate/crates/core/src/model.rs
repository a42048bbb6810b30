//! Network description shared by the simulator and the fluid solvers.
//!
//! Thresholds are held in rescaled AoI units (`ĥ = h / N`). The simulator
//! works in unscaled slots and converts at its boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const FRACTION_SUM_TOL: f64 = 1e-9;
const CLASS_SIZE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("class fractions sum to {sum}, expected 1 (last class checked: {class})")]
    FractionSumMismatch { class: usize, sum: f64 },
    #[error("class {class}: fraction {fraction} of {num_agents} agents is not a positive integer")]
    NonIntegerClassSize {
        class: usize,
        fraction: f64,
        num_agents: u64,
    },
    #[error("class {class}: {field} = {value} is out of range")]
    OutOfRangeParameter {
        class: usize,
        field: &'static str,
        value: f64,
    },
    #[error("network has no classes")]
    Empty,
}

/// One homogeneous group of agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    /// Share of all agents in this class (η_c).
    pub fraction: f64,
    /// Per-attempt delivery probability (p_{s,c}).
    pub success_prob: f64,
    /// Threshold in rescaled units, if one has been assigned.
    pub threshold_rescaled: Option<f64>,
}

impl ClassSpec {
    pub fn new(fraction: f64, success_prob: f64) -> Self {
        Self {
            fraction,
            success_prob,
            threshold_rescaled: None,
        }
    }

    pub fn with_threshold(mut self, threshold_rescaled: f64) -> Self {
        self.threshold_rescaled = Some(threshold_rescaled);
        self
    }

    pub fn validate(&self, class: usize) -> Result<(), ModelError> {
        let out = |field, value| ModelError::OutOfRangeParameter { class, field, value };
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(out("fraction", self.fraction));
        }
        if !(self.success_prob > 0.0 && self.success_prob <= 1.0) {
            return Err(out("success_prob", self.success_prob));
        }
        if let Some(h) = self.threshold_rescaled {
            if !(h >= 0.0 && h.is_finite()) {
                return Err(out("threshold_rescaled", h));
            }
        }
        Ok(())
    }
}

/// Assign thresholds to a list of classes, returning a new list.
pub fn with_thresholds(classes: &[ClassSpec], thresholds: &[f64]) -> Vec<ClassSpec> {
    assert_eq!(classes.len(), thresholds.len(), "one threshold per class");
    classes
        .iter()
        .zip(thresholds)
        .map(|(c, &h)| c.with_threshold(h))
        .collect()
}

/// Validate class parameters without the agent-count constraint.
pub fn validate_classes(classes: &[ClassSpec]) -> Result<(), ModelError> {
    if classes.is_empty() {
        return Err(ModelError::Empty);
    }
    for (i, c) in classes.iter().enumerate() {
        c.validate(i)?;
    }
    let sum: f64 = classes.iter().map(|c| c.fraction).sum();
    if (sum - 1.0).abs() > FRACTION_SUM_TOL {
        return Err(ModelError::FractionSumMismatch {
            class: classes.len() - 1,
            sum,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub classes: Vec<ClassSpec>,
    pub num_agents: u64,
}

impl NetworkSpec {
    pub fn new(classes: Vec<ClassSpec>, num_agents: u64) -> Self {
        Self {
            classes,
            num_agents,
        }
    }

    /// Equal-sized classes with the given success probabilities.
    pub fn equal_classes(success_probs: &[f64], num_agents: u64) -> Self {
        let share = 1.0 / success_probs.len() as f64;
        Self::new(
            success_probs
                .iter()
                .map(|&p| ClassSpec::new(share, p))
                .collect(),
            num_agents,
        )
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// N_c for every class. Only meaningful on a validated spec.
    pub fn class_sizes(&self) -> Vec<usize> {
        self.classes
            .iter()
            .map(|c| (c.fraction * self.num_agents as f64).round() as usize)
            .collect()
    }

    /// Class index of every agent, agents laid out class by class.
    pub fn agent_classes(&self) -> Vec<usize> {
        self.class_sizes()
            .into_iter()
            .enumerate()
            .flat_map(|(c, n)| std::iter::repeat(c).take(n))
            .collect()
    }
}

/// Check every [`NetworkSpec`] invariant and hand the spec back unchanged.
pub fn validate_network(spec: NetworkSpec) -> Result<NetworkSpec, ModelError> {
    if spec.num_agents == 0 {
        return Err(ModelError::OutOfRangeParameter {
            class: 0,
            field: "num_agents",
            value: 0.0,
        });
    }
    validate_classes(&spec.classes)?;
    let n = spec.num_agents as f64;
    for (class, c) in spec.classes.iter().enumerate() {
        let size = c.fraction * n;
        let rounded = size.round();
        if rounded < 1.0 || (size - rounded).abs() > CLASS_SIZE_TOL * n.max(1.0) {
            return Err(ModelError::NonIntegerClassSize {
                class,
                fraction: c.fraction,
                num_agents: spec.num_agents,
            });
        }
    }
    Ok(spec)
}

/// Unscaled slot count → rescaled AoI.
pub fn rescale_threshold(unscaled: f64, num_agents: u64) -> f64 {
    assert!(num_agents >= 1);
    unscaled / num_agents as f64
}

/// Rescaled AoI → unscaled slot count.
pub fn unscale_threshold(rescaled: f64, num_agents: u64) -> f64 {
    rescaled * num_agents as f64
}

/// A non-negative AoI expressed in rescaled units.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct RescaledAge(pub f64);

impl RescaledAge {
    pub fn from_slots(age: u64, num_agents: u64) -> Self {
        Self(rescale_threshold(age as f64, num_agents))
    }

    pub fn to_slots(self, num_agents: u64) -> f64 {
        unscale_threshold(self.0, num_agents)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Value-of-information functional applied to an age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum AgeFunction {
    Linear,
    Power { m: f64 },
    Log { a: f64 },
}

impl AgeFunction {
    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            AgeFunction::Linear => h,
            AgeFunction::Power { m } => h.powf(m),
            AgeFunction::Log { a } => (a * h).ln_1p(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |field, value| ModelError::OutOfRangeParameter {
            class: 0,
            field,
            value,
        };
        match *self {
            AgeFunction::Linear => Ok(()),
            AgeFunction::Power { m } if m > 0.0 && m.is_finite() => Ok(()),
            AgeFunction::Power { m } => Err(bad("age_function.m", m)),
            AgeFunction::Log { a } if a > 0.0 && a.is_finite() => Ok(()),
            AgeFunction::Log { a } => Err(bad("age_function.a", a)),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AgeFunction::Linear => "linear",
            AgeFunction::Power { .. } => "power",
            AgeFunction::Log { .. } => "log",
        }
    }
}
