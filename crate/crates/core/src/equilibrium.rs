//! Stationary fluid limit of the threshold policy and threshold optimizers.
//!
//! Under per-class rescaled thresholds `Ĥ_c`, the stationary density of class
//! `c` is flat at level `κ_c` on `[0, Ĥ_c]` and decays as
//! `κ_c · exp(-p_c (h - Ĥ_c) / β)` above it, where `β` is the fraction of all
//! agents sitting above their threshold. `β` is the positive root of
//!
//! ```text
//! ν(β) = β + Σ_c η_c Ĥ_c p_c / (β + Ĥ_c p_c) − 1
//! ```
//!
//! which exists iff `Σ_c η_c / (Ĥ_c p_c) > 1`. When it does not, the only
//! stationary regime is the idle one (`β = 0`, every agent served the
//! moment it crosses its threshold) which [`stationary`] returns.
//!
//! The closed-form optimal thresholds for linear, power and logarithmic age
//! functions all sit exactly on the existence boundary; evaluate them through
//! [`stationary`], or regularize the linear ones with `ε > 0`.

use serde::Serialize;
use thiserror::Error;

use crate::model::{validate_classes, AgeFunction, ClassSpec, ModelError};
use crate::numeric::{bisect, integrate_exp_weighted};

pub const BETA_TOL: f64 = 1e-12;
pub const KKT_TOL: f64 = 1e-10;
pub const MAX_ITER: usize = 200;
const QUAD_REL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error("no positive equilibrium: Σ η/(Ĥ p) = {existence_sum} ≤ 1")]
    NoEquilibrium { existence_sum: f64 },
    #[error("KKT solve did not converge: stationarity residual {stationarity}, constraint residual {constraint}")]
    NoConvergence { stationarity: f64, constraint: f64 },
    #[error("epsilon {epsilon} outside (0, {max})")]
    EpsilonOutOfRange { epsilon: f64, max: f64 },
    #[error("class {class} has no threshold")]
    MissingThreshold { class: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn thresholds_of(classes: &[ClassSpec]) -> Result<Vec<f64>, FluidError> {
    classes
        .iter()
        .enumerate()
        .map(|(class, c)| c.threshold_rescaled.ok_or(FluidError::MissingThreshold { class }))
        .collect()
}

fn threshold(c: &ClassSpec) -> f64 {
    c.threshold_rescaled.expect("threshold checked on construction")
}

/// `ν(β)` as written, with zero-threshold classes contributing nothing.
///
/// `ν(0) = 0` whenever every threshold is positive; each class with
/// `Ĥ_c = 0` shifts `ν(0)` down by its `η_c`.
pub fn nu(beta: f64, classes: &[ClassSpec]) -> f64 {
    let sum: f64 = classes
        .iter()
        .map(|c| {
            let hp = threshold(c) * c.success_prob;
            if hp == 0.0 {
                0.0
            } else {
                c.fraction * hp / (beta + hp)
            }
        })
        .sum();
    beta + sum - 1.0
}

/// `ν(β)/β = 1 − Σ_c η_c / (β + Ĥ_c p_c)`, strictly increasing on `β > 0`.
/// Has the same positive root as [`nu`] and no spurious root at zero.
fn nu_over_beta(beta: f64, classes: &[ClassSpec]) -> f64 {
    1.0 - classes
        .iter()
        .map(|c| c.fraction / (beta + threshold(c) * c.success_prob))
        .sum::<f64>()
}

/// `Σ_c η_c / (Ĥ_c p_c)`; infinite as soon as one threshold is zero.
pub fn existence_sum(classes: &[ClassSpec]) -> f64 {
    classes
        .iter()
        .map(|c| {
            let hp = threshold(c) * c.success_prob;
            if hp == 0.0 {
                f64::INFINITY
            } else {
                c.fraction / hp
            }
        })
        .sum()
}

/// The unique positive root of `ν`.
pub fn solve_beta(classes: &[ClassSpec]) -> Result<f64, FluidError> {
    validate_classes(classes)?;
    thresholds_of(classes)?;
    let existence_sum = existence_sum(classes);
    if existence_sum <= 1.0 + BETA_TOL {
        return Err(FluidError::NoEquilibrium { existence_sum });
    }
    let psi = |b: f64| nu_over_beta(b, classes);
    // ψ(1) ≥ 0 always; equality only when every threshold is zero.
    if psi(1.0) <= 0.0 {
        return Ok(1.0);
    }
    let mut lo = 1e-3;
    while psi(lo) >= 0.0 {
        lo *= 0.1;
        if lo < 1e-300 {
            return Err(FluidError::NoEquilibrium { existence_sum });
        }
    }
    let (beta, _) = bisect(psi, lo, 1.0, 0.0, MAX_ITER);
    Ok(beta)
}

/// Stationary state of the fluid limit for a fixed set of thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidEquilibrium {
    pub beta: f64,
    pub kappas: Vec<f64>,
    pub classes: Vec<ClassSpec>,
}

/// Equilibrium with `β > 0`; fails with `NoEquilibrium` otherwise.
pub fn equilibrium(classes: &[ClassSpec]) -> Result<FluidEquilibrium, FluidError> {
    let beta = solve_beta(classes)?;
    Ok(FluidEquilibrium::from_beta(beta, classes))
}

/// Positive equilibrium when one exists, the idle `β = 0` regime otherwise.
pub fn stationary(classes: &[ClassSpec]) -> Result<FluidEquilibrium, FluidError> {
    match equilibrium(classes) {
        Err(FluidError::NoEquilibrium { .. }) => Ok(FluidEquilibrium::from_beta(0.0, classes)),
        other => other,
    }
}

impl FluidEquilibrium {
    fn from_beta(beta: f64, classes: &[ClassSpec]) -> Self {
        let kappas = classes
            .iter()
            .map(|c| c.fraction * c.success_prob / (beta + threshold(c) * c.success_prob))
            .collect();
        Self {
            beta,
            kappas,
            classes: classes.to_vec(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn threshold(&self, c: usize) -> f64 {
        threshold(&self.classes[c])
    }

    /// `true` for the `β = 0` regime with no mass above any threshold.
    pub fn is_idle(&self) -> bool {
        self.beta == 0.0
    }

    /// Tail length `β / p_c` of class `c`.
    fn tail_scale(&self, c: usize) -> f64 {
        self.beta / self.classes[c].success_prob
    }

    pub fn density_at(&self, c: usize, h: f64) -> f64 {
        let (kappa, th) = (self.kappas[c], self.threshold(c));
        if h <= th {
            kappa
        } else if self.is_idle() {
            0.0
        } else {
            kappa * (-(h - th) / self.tail_scale(c)).exp()
        }
    }

    /// `∫₀^h` of [`density_at`](Self::density_at); `h = ∞` gives `η_c`.
    pub fn cdf_at(&self, c: usize, h: f64) -> f64 {
        let (kappa, th) = (self.kappas[c], self.threshold(c));
        if h <= th {
            kappa * h
        } else {
            let tail = kappa * self.tail_scale(c);
            kappa * th + tail * -(-(h - th) / self.tail_scale(c)).exp_m1()
        }
    }

    /// Sum of class CDFs.
    pub fn total_cdf_at(&self, h: f64) -> f64 {
        (0..self.num_classes()).map(|c| self.cdf_at(c, h)).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.total_cdf_at(f64::INFINITY)
    }

    /// `∫ h d̂_c(h) dh = κĤ²/2 − ηĤ + η²/κ`.
    pub fn mean_aoi_class(&self, c: usize) -> f64 {
        let (kappa, th, eta) = (self.kappas[c], self.threshold(c), self.classes[c].fraction);
        0.5 * kappa * th * th - eta * th + eta * eta / kappa
    }

    pub fn mean_aoi(&self) -> f64 {
        (0..self.num_classes()).map(|c| self.mean_aoi_class(c)).sum()
    }

    /// `∫ V(h) d̂_c(h) dh` for one class.
    pub fn mean_age_value_class(&self, c: usize, v: AgeFunction) -> f64 {
        if let AgeFunction::Linear = v {
            return self.mean_aoi_class(c);
        }
        let (kappa, th) = (self.kappas[c], self.threshold(c));
        let flat = match v {
            AgeFunction::Power { m } => kappa * th.powf(m + 1.0) / (m + 1.0),
            AgeFunction::Log { a } => {
                let y = a * th;
                kappa * ((1.0 + y) * y.ln_1p() - y) / a
            }
            AgeFunction::Linear => unreachable!(),
        };
        if self.is_idle() {
            return flat;
        }
        // With h = Ĥ + L t the tail is κ L ∫ e^{-t} V(Ĥ + L t) dt.
        let scale = self.tail_scale(c);
        let tail = kappa * scale * integrate_exp_weighted(|t| v.eval(th + scale * t), QUAD_REL_TOL);
        flat + tail
    }

    /// `Σ_c ∫ V d̂_c`.
    pub fn mean_age_value(&self, v: AgeFunction) -> f64 {
        (0..self.num_classes())
            .map(|c| self.mean_age_value_class(c, v))
            .sum()
    }
}

fn check_epsilon(classes: &[ClassSpec], epsilon: f64) -> Result<(), FluidError> {
    let max = classes.iter().map(|c| c.fraction).fold(f64::INFINITY, f64::min);
    if !(epsilon > 0.0 && epsilon < max) {
        return Err(FluidError::EpsilonOutOfRange { epsilon, max });
    }
    Ok(())
}

/// Default regularization `ε = 1e-3 · min_c η_c`.
pub fn default_epsilon(classes: &[ClassSpec]) -> f64 {
    1e-3 * classes.iter().map(|c| c.fraction).fold(f64::INFINITY, f64::min)
}

/// Regularized AoI-optimal thresholds
/// `Ĥ_c = (η_c − ε) / sqrt((η_c² + ε²) p_c) · Σ_j sqrt((η_j² + ε²) / p_j)`.
///
/// The `ε` shrink keeps `Σ η/(Ĥ p) > 1`, so a positive equilibrium exists.
pub fn thresholds_linear(classes: &[ClassSpec], epsilon: f64) -> Result<Vec<f64>, FluidError> {
    validate_classes(classes)?;
    check_epsilon(classes, epsilon)?;
    let e2 = epsilon * epsilon;
    let total: f64 = classes
        .iter()
        .map(|c| ((c.fraction * c.fraction + e2) / c.success_prob).sqrt())
        .sum();
    Ok(classes
        .iter()
        .map(|c| {
            (c.fraction - epsilon) / ((c.fraction * c.fraction + e2) * c.success_prob).sqrt() * total
        })
        .collect())
}

/// `ε → 0` limit of [`thresholds_linear`]: `Ĥ_c = p_c^{-1/2} Σ_j η_j p_j^{-1/2}`.
pub fn thresholds_linear_limit(classes: &[ClassSpec]) -> Result<Vec<f64>, FluidError> {
    validate_classes(classes)?;
    let total: f64 = classes.iter().map(|c| c.fraction / c.success_prob.sqrt()).sum();
    Ok(classes.iter().map(|c| total / c.success_prob.sqrt()).collect())
}

/// Fluid time-average AoI of the optimized threshold policy in unscaled
/// slots, `(N/2)(Σ_c η_c / √p_c)²`. The finite-`N` policy deviates from it
/// by a lower-order term (observed growing sublinearly in `N`).
pub fn predicted_avg_aoi(classes: &[ClassSpec], num_agents: u64) -> f64 {
    let s: f64 = classes.iter().map(|c| c.fraction / c.success_prob.sqrt()).sum();
    0.5 * num_agents as f64 * s * s
}

/// Lower bound on the time-average AoI of any policy. With equal classes it
/// reads `N/(2C²)(Σ_c 1/√p_c)²`; the general-fraction form coincides with
/// [`predicted_avg_aoi`].
pub fn lower_bound(classes: &[ClassSpec], num_agents: u64) -> f64 {
    predicted_avg_aoi(classes, num_agents)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerOptimum {
    pub m: f64,
    pub thresholds_rescaled: Vec<f64>,
    /// `S^{m+1}/(m+1)` with `S = Σ_c η_c p_c^{-m/(m+1)}`.
    pub optimum_rescaled: f64,
}

impl PowerOptimum {
    pub fn thresholds_unscaled(&self, num_agents: u64) -> Vec<f64> {
        self.thresholds_rescaled
            .iter()
            .map(|h| h * num_agents as f64)
            .collect()
    }

    /// Leading-order optimum for `V(h) = h^m` on unscaled ages.
    pub fn optimum_unscaled(&self, num_agents: u64) -> f64 {
        (num_agents as f64).powf(self.m) * self.optimum_rescaled
    }
}

/// Optimal thresholds for `V(ĥ) = ĥ^m`.
pub fn thresholds_power(classes: &[ClassSpec], m: f64) -> Result<PowerOptimum, FluidError> {
    validate_classes(classes)?;
    AgeFunction::Power { m }.validate()?;
    let s: f64 = classes
        .iter()
        .map(|c| c.fraction * c.success_prob.powf(-m / (m + 1.0)))
        .sum();
    Ok(PowerOptimum {
        m,
        thresholds_rescaled: classes
            .iter()
            .map(|c| c.success_prob.powf(-1.0 / (m + 1.0)) * s)
            .collect(),
        optimum_rescaled: s.powf(m + 1.0) / (m + 1.0),
    })
}

/// Solution of the logarithmic-age KKT system
/// `log(1+x_c) − x_c = λ/p_c`, `Σ_c η_c/(x_c p_c) = 1/a`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktSolution {
    pub xs: Vec<f64>,
    pub lambda: f64,
    pub a: f64,
    /// `max_c |log(1+x_c) − x_c − λ/p_c|`.
    pub stationarity_residual: f64,
    /// `|a Σ_c η_c/(x_c p_c) − 1|`, the constraint scaled by `a`.
    pub constraint_residual: f64,
}

impl KktSolution {
    pub fn residual(&self) -> f64 {
        self.stationarity_residual.max(self.constraint_residual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogOptimum {
    pub kkt: KktSolution,
    /// `Ĥ_c = x_c / a`.
    pub thresholds_rescaled: Vec<f64>,
    /// `Σ_c η_c (1/x_c + 1) log(1 + x_c) − η_c`.
    pub optimum_rescaled: f64,
}

/// `log(1+x) − x`, strictly decreasing on `x > 0`.
fn log_gap(x: f64) -> f64 {
    x.ln_1p() - x
}

/// Positive root of `log(1+x) − x = target` for `target < 0`: bisection
/// followed by a Newton polish.
fn solve_log_gap(target: f64) -> f64 {
    debug_assert!(target < 0.0);
    let mut hi = (2.0 * -target).sqrt().max(-target);
    while log_gap(hi) > target {
        hi *= 2.0;
    }
    let (mut x, _) = bisect(|x| log_gap(x) - target, 0.0, hi, 0.0, MAX_ITER);
    for _ in 0..3 {
        let slope = -x / (1.0 + x);
        let step = (log_gap(x) - target) / slope;
        let next = x - step;
        if !(next > 0.0) || (log_gap(next) - target).abs() >= (log_gap(x) - target).abs() {
            break;
        }
        x = next;
    }
    x
}

fn log_optimum_value(classes: &[ClassSpec], xs: &[f64]) -> f64 {
    classes
        .iter()
        .zip(xs)
        .map(|(c, &x)| c.fraction * ((1.0 / x + 1.0) * x.ln_1p() - 1.0))
        .sum()
}

/// Nested solve of the KKT system: an outer bisection on `λ < 0` (in
/// `log(−λ)`), an inner monotone solve per class.
pub fn solve_log_kkt(classes: &[ClassSpec], a: f64) -> Result<KktSolution, FluidError> {
    validate_classes(classes)?;
    AgeFunction::Log { a }.validate()?;
    let xs_at = |s: f64| -> Vec<f64> {
        let lambda = -s.exp();
        classes.iter().map(|c| solve_log_gap(lambda / c.success_prob)).collect()
    };
    // Decreasing in s = ln(−λ).
    let constraint = |xs: &[f64]| -> f64 {
        a * classes
            .iter()
            .zip(xs)
            .map(|(c, &x)| c.fraction / (x * c.success_prob))
            .sum::<f64>()
            - 1.0
    };
    let phi = |s: f64| constraint(&xs_at(s));

    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    if phi(0.0) > 0.0 {
        while phi(hi) > 0.0 {
            lo = hi;
            hi += 4.0;
            if hi > 700.0 {
                return Err(FluidError::NoConvergence {
                    stationarity: f64::NAN,
                    constraint: phi(hi),
                });
            }
        }
    } else {
        while phi(lo) <= 0.0 {
            hi = lo;
            lo -= 4.0;
            if lo < -700.0 {
                return Err(FluidError::NoConvergence {
                    stationarity: f64::NAN,
                    constraint: phi(lo),
                });
            }
        }
    }
    let (s, _) = bisect(phi, lo, hi, 0.0, MAX_ITER);
    let lambda = -s.exp();
    let xs = xs_at(s);
    let stationarity_residual = classes
        .iter()
        .zip(&xs)
        .map(|(c, &x)| (log_gap(x) - lambda / c.success_prob).abs())
        .fold(0.0, f64::max);
    let constraint_residual = constraint(&xs).abs();
    if stationarity_residual > KKT_TOL || constraint_residual > KKT_TOL {
        return Err(FluidError::NoConvergence {
            stationarity: stationarity_residual,
            constraint: constraint_residual,
        });
    }
    Ok(KktSolution {
        xs,
        lambda,
        a,
        stationarity_residual,
        constraint_residual,
    })
}

/// Optimal thresholds for `V(ĥ) = log(1 + a ĥ)`.
pub fn thresholds_log(classes: &[ClassSpec], a: f64) -> Result<LogOptimum, FluidError> {
    let kkt = solve_log_kkt(classes, a)?;
    let thresholds_rescaled = kkt.xs.iter().map(|x| x / a).collect();
    let optimum_rescaled = log_optimum_value(classes, &kkt.xs);
    Ok(LogOptimum {
        kkt,
        thresholds_rescaled,
        optimum_rescaled,
    })
}

impl LogOptimum {
    /// Leading-order optimum on unscaled ages, solving the KKT system at
    /// slope `N a`.
    pub fn optimum_unscaled(&self, classes: &[ClassSpec], num_agents: u64) -> Result<f64, FluidError> {
        let kkt = solve_log_kkt(classes, self.kkt.a * num_agents as f64)?;
        Ok(log_optimum_value(classes, &kkt.xs))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::with_thresholds;
    use crate::numeric::integrate;
    use proptest::prelude::*;

    fn one(p: f64, h: f64) -> Vec<ClassSpec> {
        vec![ClassSpec::new(1.0, p).with_threshold(h)]
    }

    fn two(ps: [f64; 2], hs: [f64; 2]) -> Vec<ClassSpec> {
        vec![
            ClassSpec::new(0.5, ps[0]).with_threshold(hs[0]),
            ClassSpec::new(0.5, ps[1]).with_threshold(hs[1]),
        ]
    }

    /// Plain bisection on the literal ν over [1e-9, 1]; independent of the
    /// ψ-based solver.
    fn beta_oracle(classes: &[ClassSpec]) -> f64 {
        let (mut lo, mut hi) = (1e-9, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if nu(mid, classes) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn nu_examples() {
        assert_eq!(nu(0.0, &two([0.9, 0.2], [1.0, 2.5])), 0.0);
        assert_eq!(nu(1.0, &one(1.0, 0.0)), 0.0);
        assert!(nu(0.5, &one(1.0, 0.5)).abs() < 1e-15);
        // a zero-threshold class moves ν(0) off zero by its fraction
        assert!((nu(0.0, &two([0.9, 0.2], [0.0, 1.0])) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn beta_examples() {
        assert!((solve_beta(&one(1.0, 0.5)).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(solve_beta(&one(1.0, 0.0)).unwrap(), 1.0);
        let classes = two([0.9, 0.2], [1.0, 1.0]);
        let beta = solve_beta(&classes).unwrap();
        let oracle = beta_oracle(&classes);
        assert!((beta - oracle).abs() < 1e-12);
        // frozen from the oracle
        assert!((beta - 0.560_327_780_786_685).abs() < 1e-12, "{beta}");
        assert!(matches!(
            solve_beta(&one(1.0, 2.0)),
            Err(FluidError::NoEquilibrium { .. })
        ));
        assert!(matches!(
            solve_beta(&[ClassSpec::new(1.0, 1.0)]),
            Err(FluidError::MissingThreshold { class: 0 })
        ));
    }

    #[test]
    fn equilibrium_examples() {
        let eq = equilibrium(&one(1.0, 0.0)).unwrap();
        assert_eq!((eq.beta, eq.kappas[0]), (1.0, 1.0));
        let eq = equilibrium(&one(1.0, 0.5)).unwrap();
        assert!((eq.beta - 0.5).abs() < 1e-15 && (eq.kappas[0] - 1.0).abs() < 1e-15);

        let eq = equilibrium(&two([0.9, 0.2], [1.0, 1.0])).unwrap();
        assert!((eq.kappas[0] - 0.45 / (eq.beta + 0.9)).abs() < 1e-15);
        assert!((eq.kappas[1] - 0.10 / (eq.beta + 0.2)).abs() < 1e-15);
        let s: f64 = eq.kappas[0] / 0.9 + eq.kappas[1] / 0.2;
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn density_examples() {
        let mu = 0.7;
        let eq = equilibrium(&one(mu, 0.0)).unwrap();
        for h in [0.0, 0.3, 1.0, 4.0] {
            assert!((eq.density_at(0, h) - mu * (-mu * h).exp()).abs() < 1e-14);
        }
        let eq = equilibrium(&one(1.0, 0.5)).unwrap();
        assert!((eq.density_at(0, 0.25) - 1.0).abs() < 1e-15);
        let h = 0.5 + std::f64::consts::LN_2 * 0.5;
        assert!((eq.density_at(0, h) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(equilibrium(&one(1.0, 0.0)).unwrap().cdf_at(0, f64::INFINITY), 1.0);
        let eq = equilibrium(&one(1.0, 0.5)).unwrap();
        assert!((eq.cdf_at(0, 0.5) - 0.5).abs() < 1e-15);
        let eq = equilibrium(&two([0.9, 0.2], [1.0, 1.0])).unwrap();
        let below = eq.cdf_at(0, 1.0) + eq.cdf_at(1, 1.0);
        assert!((below - (1.0 - eq.beta)).abs() < 1e-12);
    }

    #[test]
    fn mean_aoi_examples() {
        assert!((equilibrium(&one(1.0, 0.0)).unwrap().mean_aoi_class(0) - 1.0).abs() < 1e-15);
        assert!((equilibrium(&one(1.0, 0.5)).unwrap().mean_aoi_class(0) - 0.625).abs() < 1e-15);
        let eq = equilibrium(&two([0.9, 0.2], [1.0, 2.0])).unwrap();
        for c in 0..2 {
            let eta = eq.classes[c].fraction;
            assert!(eq.mean_aoi_class(c) > eta * eta / (2.0 * eq.kappas[c]));
        }
    }

    #[test]
    fn mean_age_value_examples() {
        let eq = equilibrium(&two([0.9, 0.2], [1.1, 2.3])).unwrap();
        let lin = eq.mean_age_value(AgeFunction::Linear);
        assert!((lin - eq.mean_aoi()).abs() < 1e-15);
        let p1 = eq.mean_age_value(AgeFunction::Power { m: 1.0 });
        assert!((p1 / lin - 1.0).abs() < 1e-9);
        let eq = equilibrium(&one(1.0, 0.0)).unwrap();
        assert!((eq.mean_age_value(AgeFunction::Power { m: 2.0 }) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn quadrature_cross_check() {
        // direct finite-interval quadrature of the density as an oracle for
        // the closed forms and the mapped tail integral
        let eq = equilibrium(&two([0.9, 0.2], [0.8, 2.4])).unwrap();
        for c in 0..2 {
            let th = eq.threshold(c);
            let end = th + 60.0 * eq.beta / eq.classes[c].success_prob;
            let mass = integrate(|h| eq.density_at(c, h), 0.0, th, 1e-12)
                + integrate(|h| eq.density_at(c, h), th, end, 1e-12);
            assert!((mass - eq.classes[c].fraction).abs() < 1e-10);
            let mean = integrate(|h| h * eq.density_at(c, h), 0.0, th, 1e-12)
                + integrate(|h| h * eq.density_at(c, h), th, end, 1e-12);
            assert!((mean - eq.mean_aoi_class(c)).abs() < 1e-6);
            for v in [AgeFunction::Power { m: 2.5 }, AgeFunction::Log { a: 3.0 }] {
                let direct = integrate(|h| v.eval(h) * eq.density_at(c, h), 0.0, th, 1e-12)
                    + integrate(|h| v.eval(h) * eq.density_at(c, h), th, end, 1e-12);
                let got = eq.mean_age_value_class(c, v);
                assert!((got / direct - 1.0).abs() < 1e-8, "{v:?} {got} {direct}");
            }
        }
    }

    #[test]
    fn linear_threshold_examples() {
        let base = [ClassSpec::new(0.5, 1.0), ClassSpec::new(0.5, 0.25)];
        let h = thresholds_linear_limit(&base).unwrap();
        assert!((h[0] - 1.5).abs() < 1e-15 && (h[1] - 3.0).abs() < 1e-15);

        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.2)];
        let h = thresholds_linear_limit(&base).unwrap();
        assert!((h[0] - 1.734).abs() < 1e-3 && (h[1] - 3.679).abs() < 1e-3, "{h:?}");
        let hr = thresholds_linear(&base, 1e-9).unwrap();
        assert!((hr[0] - h[0]).abs() < 1e-8 && (hr[1] - h[1]).abs() < 1e-8);

        let single = [ClassSpec::new(1.0, 0.3)];
        assert!((thresholds_linear_limit(&single).unwrap()[0] - 1.0 / 0.3).abs() < 1e-14);

        assert!(matches!(
            thresholds_linear(&base, 0.5),
            Err(FluidError::EpsilonOutOfRange { .. })
        ));
        assert!(matches!(
            thresholds_linear(&base, 0.0),
            Err(FluidError::EpsilonOutOfRange { .. })
        ));
        let with = with_thresholds(&base, &thresholds_linear(&base, 1e-3).unwrap());
        assert!(existence_sum(&with) > 1.0);
        assert!(solve_beta(&with).is_ok());
    }

    #[test]
    fn prediction_examples() {
        let single = [ClassSpec::new(1.0, 1.0)];
        assert_eq!(predicted_avg_aoi(&single, 40), 20.0);
        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.2)];
        let direct = 100.0 / 8.0 * (1.0 / 0.9f64.sqrt() + 1.0 / 0.2f64.sqrt()).powi(2);
        assert!((predicted_avg_aoi(&base, 100) - direct).abs() < 1e-12);
        assert!((direct - 135.3).abs() < 0.05);
        assert_eq!(lower_bound(&base, 100), predicted_avg_aoi(&base, 100));
    }

    #[test]
    fn power_examples() {
        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.2)];
        let p1 = thresholds_power(&base, 1.0).unwrap();
        let lin = thresholds_linear_limit(&base).unwrap();
        for (a, b) in p1.thresholds_rescaled.iter().zip(&lin) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((p1.optimum_rescaled - predicted_avg_aoi(&base, 1)).abs() < 1e-12);

        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.1)];
        let p4 = thresholds_power(&base, 4.0).unwrap();
        assert!((p4.thresholds_rescaled[0] - 3.778).abs() < 1e-3);
        assert!((p4.thresholds_rescaled[1] - 5.862).abs() < 1e-3);
        assert!((p4.optimum_rescaled - 138.5).abs() < 0.5, "{}", p4.optimum_rescaled);
        assert!((p4.optimum_unscaled(10) - 1e4 * p4.optimum_rescaled).abs() < 1e-6);

        for (m, p) in [(0.5, 0.3), (3.0, 0.8)] {
            let o = thresholds_power(&[ClassSpec::new(1.0, p)], m).unwrap();
            assert!((o.thresholds_rescaled[0] - 1.0 / p).abs() < 1e-12);
            assert!((o.optimum_rescaled - 1.0 / ((m + 1.0) * p.powf(m))).abs() < 1e-12);
        }
    }

    #[test]
    fn power_optimum_matches_idle_regime_value() {
        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.1)];
        let p4 = thresholds_power(&base, 4.0).unwrap();
        let eq = stationary(&with_thresholds(&base, &p4.thresholds_rescaled)).unwrap();
        assert!(eq.beta < 1e-6);
        let v = eq.mean_age_value(AgeFunction::Power { m: 4.0 });
        assert!((v / p4.optimum_rescaled - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_examples() {
        let o = thresholds_log(&[ClassSpec::new(1.0, 1.0)], 1.0).unwrap();
        assert!((o.kkt.xs[0] - 1.0).abs() < 1e-12);
        assert!((o.thresholds_rescaled[0] - 1.0).abs() < 1e-12);
        assert!((o.optimum_rescaled - (2.0 * std::f64::consts::LN_2 - 1.0)).abs() < 1e-12);
        assert!(o.kkt.lambda < 0.0);

        for (p, a) in [(0.3, 0.01), (0.7, 5.0), (1.0, 100.0)] {
            let o = thresholds_log(&[ClassSpec::new(1.0, p)], a).unwrap();
            assert!((o.thresholds_rescaled[0] - 1.0 / p).abs() < 1e-9 / p);
        }

        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.2)];
        let o = thresholds_log(&base, 1e-4).unwrap();
        let lin = thresholds_linear_limit(&base).unwrap();
        for (a, b) in o.thresholds_rescaled.iter().zip(&lin) {
            assert!((a - b).abs() < 1e-3, "{a} {b}");
        }
    }

    #[test]
    fn log_optimum_matches_quadrature() {
        let base = [ClassSpec::new(0.3, 0.9), ClassSpec::new(0.7, 0.4)];
        for a in [0.1, 1.0, 10.0] {
            let o = thresholds_log(&base, a).unwrap();
            let eq = stationary(&with_thresholds(&base, &o.thresholds_rescaled)).unwrap();
            let v = eq.mean_age_value(AgeFunction::Log { a });
            assert!((v / o.optimum_rescaled - 1.0).abs() < 1e-6, "a={a}: {v} vs {}", o.optimum_rescaled);
        }
    }

    #[test]
    fn log_unscaled_uses_scaled_slope() {
        let base = [ClassSpec::new(0.5, 0.9), ClassSpec::new(0.5, 0.2)];
        let o = thresholds_log(&base, 0.01).unwrap();
        let direct = thresholds_log(&base, 1.0).unwrap().optimum_rescaled;
        assert!((o.optimum_unscaled(&base, 100).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn idle_regime() {
        let eq = stationary(&one(1.0, 2.0)).unwrap();
        assert_eq!(eq.beta, 0.0);
        assert_eq!(eq.kappas[0], 0.5);
        assert_eq!(eq.density_at(0, 2.5), 0.0);
        assert!((eq.total_mass() - 1.0).abs() < 1e-15);
        assert!((eq.mean_aoi() - 1.0).abs() < 1e-15);
    }

    fn random_classes() -> impl Strategy<Value = Vec<ClassSpec>> {
        (1usize..=5)
            .prop_flat_map(|c| {
                (
                    proptest::collection::vec(0.05f64..1.0, c),
                    proptest::collection::vec(0.05f64..=1.0, c),
                    proptest::collection::vec(0.0f64..1.0, c),
                )
            })
            .prop_map(|(w, p, shrink)| {
                let total: f64 = w.iter().sum();
                // thresholds shrunk from the boundary Ĥ = C η/p so that the
                // existence condition holds
                let c = w.len() as f64;
                w.iter()
                    .zip(&p)
                    .zip(&shrink)
                    .map(|((&wi, &pi), &si)| {
                        let eta = wi / total;
                        ClassSpec::new(eta, pi).with_threshold(si * c * eta / pi * 0.999)
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn beta_root_and_masses(classes in random_classes()) {
            let eq = equilibrium(&classes).unwrap();
            prop_assert!(nu(eq.beta, &classes).abs() <= 1e-12);
            prop_assert!((eq.total_mass() - 1.0).abs() <= 1e-8);
            let below: f64 = (0..classes.len()).map(|c| eq.cdf_at(c, eq.threshold(c))).sum();
            prop_assert!((below - (1.0 - eq.beta)).abs() <= 1e-9);
            let s: f64 = eq.kappas.iter().zip(&classes).map(|(k, c)| k / c.success_prob).sum();
            prop_assert!((s - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn nu_single_sign_change(classes in random_classes()) {
            let beta = solve_beta(&classes).unwrap();
            for i in 1..50 {
                let b = i as f64 / 50.0;
                if b < beta * (1.0 - 1e-9) {
                    prop_assert!(nu(b, &classes) < 0.0);
                } else if b > beta * (1.0 + 1e-9) {
                    prop_assert!(nu(b, &classes) > 0.0);
                }
            }
        }

        #[test]
        fn power_thresholds_scale_with_probability(
            m in 0.1f64..6.0, p in proptest::collection::vec(0.05f64..=1.0, 1..5)
        ) {
            let c = p.len() as f64;
            let classes: Vec<_> = p.iter().map(|&pi| ClassSpec::new(1.0 / c, pi)).collect();
            let o = thresholds_power(&classes, m).unwrap();
            let scaled: Vec<f64> = o.thresholds_rescaled.iter().zip(&p)
                .map(|(h, pi)| h * pi.powf(1.0 / (m + 1.0))).collect();
            for s in &scaled {
                prop_assert!((s / scaled[0] - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn log_kkt_residuals(
            a_exp in -4.0f64..2.0, p in proptest::collection::vec(0.05f64..=1.0, 1..5)
        ) {
            let a = 10f64.powf(a_exp);
            let c = p.len() as f64;
            let classes: Vec<_> = p.iter().map(|&pi| ClassSpec::new(1.0 / c, pi)).collect();
            let kkt = solve_log_kkt(&classes, a).unwrap();
            prop_assert!(kkt.residual() <= KKT_TOL);
            prop_assert!(kkt.lambda < 0.0);
            prop_assert!(kkt.xs.iter().all(|&x| x > 0.0));
        }
    }
}
