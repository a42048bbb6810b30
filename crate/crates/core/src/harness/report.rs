use serde::Serialize;

use crate::equilibrium::{
    equilibrium, lower_bound, predicted_avg_aoi, stationary, thresholds_linear, thresholds_linear_limit,
    thresholds_log, thresholds_power, FluidError,
};
use crate::model::{validate_classes, with_thresholds, AgeFunction, ClassSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub a: f64,
    pub lambda: f64,
    pub xs: Vec<f64>,
    pub stationarity_residual: f64,
    pub constraint_residual: f64,
}

/// Equilibrium under the `ε`-shrunk linear thresholds, where `β > 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegularizedReport {
    pub epsilon: f64,
    pub thresholds_rescaled: Vec<f64>,
    pub thresholds_unscaled: Vec<f64>,
    pub beta: f64,
    pub kappas: Vec<f64>,
    pub mean_aoi_unscaled: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidReport {
    pub age_function: AgeFunction,
    pub num_agents: u64,
    pub fractions: Vec<f64>,
    pub success_probs: Vec<f64>,
    pub thresholds_rescaled: Vec<f64>,
    pub thresholds_unscaled: Vec<f64>,
    /// Stationary `β` at the optimal thresholds (0: they sit on the boundary).
    pub beta: f64,
    pub kappas: Vec<f64>,
    pub optimum_rescaled: f64,
    pub optimum_unscaled: f64,
    pub lower_bound_rescaled: f64,
    pub lower_bound_unscaled: f64,
    pub kkt: Option<KktReport>,
    pub regularized: Option<RegularizedReport>,
}

/// Optimal thresholds and the fluid predictions that go with them.
/// `epsilon` only affects the linear case's regularized block.
pub fn emit_fluid_report(
    classes: &[ClassSpec],
    age_function: AgeFunction,
    num_agents: u64,
    epsilon: f64,
) -> Result<FluidReport, FluidError> {
    validate_classes(classes)?;
    age_function.validate()?;
    let n = num_agents as f64;
    let mut kkt = None;
    let mut regularized = None;
    let (thresholds, optimum_rescaled, optimum_unscaled, lb_rescaled, lb_unscaled) = match age_function {
        AgeFunction::Linear => {
            let th = thresholds_linear_limit(classes)?;
            let eps_th = thresholds_linear(classes, epsilon)?;
            let eq = equilibrium(&with_thresholds(classes, &eps_th))?;
            regularized = Some(RegularizedReport {
                epsilon,
                thresholds_unscaled: eps_th.iter().map(|h| h * n).collect(),
                thresholds_rescaled: eps_th,
                beta: eq.beta,
                kappas: eq.kappas.clone(),
                mean_aoi_unscaled: eq.mean_aoi() * n,
            });
            let opt = predicted_avg_aoi(classes, num_agents);
            let lb = lower_bound(classes, num_agents);
            (th, opt / n, opt, lb / n, lb)
        }
        AgeFunction::Power { m } => {
            let opt = thresholds_power(classes, m)?;
            let unscaled = opt.optimum_unscaled(num_agents);
            (opt.thresholds_rescaled, opt.optimum_rescaled, unscaled, opt.optimum_rescaled, unscaled)
        }
        AgeFunction::Log { a } => {
            let opt = thresholds_log(classes, a)?;
            let unscaled = opt.optimum_unscaled(classes, num_agents)?;
            kkt = Some(KktReport {
                a,
                lambda: opt.kkt.lambda,
                xs: opt.kkt.xs.clone(),
                stationarity_residual: opt.kkt.stationarity_residual,
                constraint_residual: opt.kkt.constraint_residual,
            });
            (opt.thresholds_rescaled, opt.optimum_rescaled, unscaled, opt.optimum_rescaled, unscaled)
        }
    };
    let eq = stationary(&with_thresholds(classes, &thresholds))?;
    Ok(FluidReport {
        age_function,
        num_agents,
        fractions: classes.iter().map(|c| c.fraction).collect(),
        success_probs: classes.iter().map(|c| c.success_prob).collect(),
        thresholds_unscaled: thresholds.iter().map(|h| h * n).collect(),
        thresholds_rescaled: thresholds,
        beta: eq.beta,
        kappas: eq.kappas,
        optimum_rescaled,
        optimum_unscaled,
        lower_bound_rescaled: lb_rescaled,
        lower_bound_unscaled: lb_unscaled,
        kkt,
        regularized,
    })
}
