//! Time-dependent fluid limit.
//!
//! Densities `f̂_c(t, h)` are sampled at `h_k = k Δh` and advanced with an
//! explicit first-order upwind step. Above its threshold each class drains at
//! rate `p_c / β(t)`, with `β(t) = 1 − Σ_j F̂_j(t, Ĥ_j)`, and the drained mass
//! re-enters at `h = 0`. Analytically that inflow is the boundary density
//! `p_c (η_c − F̂_c(t, Ĥ_c)) / β(t)`; on the grid it is taken to be exactly
//! what the drain removed, which keeps the discrete mass constant.
//!
//! The drain is applied as an exact exponential over the part of the step a
//! parcel spends above its threshold, so at `dt = Δh` the sampled stationary
//! density is a fixed point of the scheme.

use thiserror::Error;

use crate::model::ClassSpec;

pub const DEFAULT_GRID_STEP: f64 = 1e-3;
pub const BETA_FLOOR: f64 = 1e-12;
pub const INIT_MASS_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransientError {
    #[error("dt = {dt} exceeds grid step {grid_step}")]
    CflViolation { dt: f64, grid_step: f64 },
    #[error("initial density has mass {mass} on [0, h_max]; more than 1e-3 lies outside")]
    MassDeficit { mass: f64 },
    #[error("initial density has mass {mass} on [0, h_max], expected 1")]
    MassExcess { mass: f64 },
    #[error("initial density is negative or not finite at class {class}, h = {h}")]
    InvalidDensity { class: usize, h: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("class {class} has no threshold")]
    MissingThreshold { class: usize },
}

/// Grid defaults: `Δh = 1e-3`, `dt = Δh`, and a horizon
/// `max_c Ĥ_c + 20 / min_c p_c` that leaves a negligible stationary tail.
pub fn default_h_max(classes: &[ClassSpec]) -> f64 {
    let max_h = classes
        .iter()
        .filter_map(|c| c.threshold_rescaled)
        .fold(0.0, f64::max);
    let min_p = classes.iter().map(|c| c.success_prob).fold(1.0, f64::min);
    max_h + 20.0 / min_p
}

#[derive(Debug, Clone)]
pub struct TransientSolution {
    pub grid_step: f64,
    pub h_max: f64,
    /// `densities[c][k]` samples class `c` at `h = k · grid_step`.
    pub densities: Vec<Vec<f64>>,
    pub time: f64,
    pub classes: Vec<ClassSpec>,
    thresholds: Vec<f64>,
}

/// Area under a sampled curve between two nodes, exact for exponentials.
fn log_linear_area(len: f64, a: f64, b: f64) -> f64 {
    if a > 0.0 && b > 0.0 && (a - b).abs() > 1e-12 * a.max(b) {
        len * (a - b) / (a / b).ln()
    } else {
        0.5 * len * (a + b)
    }
}

/// Sample each class density on the grid and rescale it to unit total mass.
pub fn init_transient<F>(
    classes: &[ClassSpec],
    initial_density: F,
    grid_step: f64,
    h_max: f64,
) -> Result<TransientSolution, TransientError>
where
    F: Fn(usize, f64) -> f64,
{
    let thresholds = classes
        .iter()
        .enumerate()
        .map(|(class, c)| c.threshold_rescaled.ok_or(TransientError::MissingThreshold { class }))
        .collect::<Result<Vec<_>, _>>()?;
    if !(grid_step > 0.0 && grid_step.is_finite()) {
        return Err(TransientError::InvalidGrid(format!("grid_step = {grid_step}")));
    }
    let max_h = thresholds.iter().copied().fold(0.0, f64::max);
    if !(h_max > max_h) {
        return Err(TransientError::InvalidGrid(format!(
            "h_max = {h_max} must exceed the largest threshold {max_h}"
        )));
    }
    let n = (h_max / grid_step).floor() as usize + 1;
    let mut densities = Vec::with_capacity(classes.len());
    for c in 0..classes.len() {
        let mut column = Vec::with_capacity(n);
        for k in 0..n {
            let h = k as f64 * grid_step;
            let v = initial_density(c, h);
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TransientError::InvalidDensity { class: c, h });
            }
            column.push(v);
        }
        densities.push(column);
    }
    let mut state = TransientSolution {
        grid_step,
        h_max,
        densities,
        time: 0.0,
        classes: classes.to_vec(),
        thresholds,
    };
    let mass = state.mass();
    if mass < 1.0 - INIT_MASS_TOL {
        return Err(TransientError::MassDeficit { mass });
    }
    if mass > 1.0 + INIT_MASS_TOL {
        return Err(TransientError::MassExcess { mass });
    }
    for column in &mut state.densities {
        column.iter_mut().for_each(|v| *v /= mass);
    }
    Ok(state)
}

/// Truncated normal on `h ≥ 0` carrying mass `weight`, up to the truncation
/// factor (removed by the renormalization in [`init_transient`]).
pub fn gaussian_density(weight: f64, mean: f64, std: f64) -> impl Fn(f64) -> f64 {
    let norm = weight / (std * (2.0 * std::f64::consts::PI).sqrt());
    move |h| {
        if h < 0.0 {
            0.0
        } else {
            let z = (h - mean) / std;
            norm * (-0.5 * z * z).exp()
        }
    }
}

impl TransientSolution {
    pub fn num_cells(&self) -> usize {
        self.densities.first().map_or(0, Vec::len)
    }

    pub fn h_at(&self, k: usize) -> f64 {
        k as f64 * self.grid_step
    }

    pub fn threshold(&self, c: usize) -> f64 {
        self.thresholds[c]
    }

    /// `F̂_c(t, Ĥ_c)`, reading the samples as left-endpoint cell values.
    pub fn mass_below_threshold(&self, c: usize) -> f64 {
        let th = self.thresholds[c];
        let f = &self.densities[c];
        let k_star = ((th / self.grid_step).floor() as usize).min(f.len() - 1);
        let full: f64 = f[..k_star].iter().sum::<f64>() * self.grid_step;
        full + f[k_star] * (th - self.h_at(k_star))
    }

    /// Mass of class `c` above `Ĥ_c`, interpolating exponentially between
    /// samples (the flat reading holds up to the threshold itself).
    pub fn mass_above_threshold(&self, c: usize) -> f64 {
        let th = self.thresholds[c];
        let f = &self.densities[c];
        let k_star = ((th / self.grid_step).floor() as usize).min(f.len() - 1);
        let mut mass = 0.0;
        if k_star + 1 < f.len() {
            mass += log_linear_area(self.h_at(k_star + 1) - th, f[k_star], f[k_star + 1]);
            for k in k_star + 1..f.len() - 1 {
                mass += log_linear_area(self.grid_step, f[k], f[k + 1]);
            }
        }
        mass
    }

    /// `β(t) = 1 − Σ_j F̂_j(t, Ĥ_j)`, read as the mass currently above
    /// threshold and floored at `1e-12`.
    pub fn beta(&self) -> f64 {
        let above: f64 = (0..self.classes.len()).map(|c| self.mass_above_threshold(c)).sum();
        above.max(BETA_FLOOR)
    }

    /// Left Riemann sum `Σ_c Σ_k f_c(h_k) Δh`.
    pub fn riemann_mass(&self) -> f64 {
        self.densities
            .iter()
            .map(|col| col.iter().sum::<f64>() * self.grid_step)
            .sum()
    }

    pub fn class_mass(&self, c: usize) -> f64 {
        self.mass_below_threshold(c) + self.mass_above_threshold(c)
    }

    pub fn mass(&self) -> f64 {
        (0..self.classes.len()).map(|c| self.class_mass(c)).sum()
    }

    /// Advance by one explicit step: transport, drain, boundary inflow.
    ///
    /// The drain uses `β` from the state at the start of the step. Its total
    /// is capped by the channel's service rate `Σ_c p_c A_c / Σ_c A_c` over the
    /// post-transport mass `A_c` above threshold, which only binds while the
    /// network is leaving an idle phase. Drained mass is re-injected at `h = 0`.
    pub fn step(&mut self, dt: f64) -> Result<(), TransientError> {
        if !(dt > 0.0) || dt > self.grid_step * (1.0 + 1e-12) {
            return Err(TransientError::CflViolation {
                dt,
                grid_step: self.grid_step,
            });
        }
        let dt = dt.min(self.grid_step);
        let courant = dt / self.grid_step;
        let beta = self.beta();
        let grid_step = self.grid_step;

        // (first draining node, fractional node decay, full decay)
        let mut sinks = Vec::with_capacity(self.classes.len());
        let mut drained = vec![0.0; self.classes.len()];
        let mut served_rate = 0.0;
        let mut above_total = 0.0;
        for (c, f) in self.densities.iter_mut().enumerate() {
            let n = f.len();
            for k in (1..n).rev() {
                f[k] -= courant * (f[k] - f[k - 1]);
            }
            f[0] -= courant * f[0];

            let th = self.thresholds[c];
            let rate = self.classes[c].success_prob / beta;
            let first = ((th / grid_step).floor() as usize + 1).min(n);
            let exposure = first as f64 * grid_step - th;
            let partial = (first < n && exposure < dt).then(|| (-rate * exposure).exp());
            let full_decay = (-rate * dt).exp();
            let rest = first + usize::from(partial.is_some());
            let tail: f64 = f[rest.min(n)..].iter().sum();
            let head = partial.map_or(0.0, |_| f[first]);
            drained[c] =
                grid_step * (head * (1.0 - partial.unwrap_or(1.0)) + tail * (1.0 - full_decay));
            let above = grid_step * (head + tail);
            served_rate += self.classes[c].success_prob * above;
            above_total += above;
            sinks.push((first, partial, full_decay));
        }

        let total: f64 = drained.iter().sum();
        let capacity = if above_total > 0.0 { dt * served_rate / above_total } else { 0.0 };
        let scale = if total > capacity { capacity / total } else { 1.0 };

        for (c, f) in self.densities.iter_mut().enumerate() {
            let (first, partial, full_decay) = sinks[c];
            let mut rest = first;
            if let Some(d) = partial {
                f[first] *= 1.0 - scale * (1.0 - d);
                rest += 1;
            }
            let keep = 1.0 - scale * (1.0 - full_decay);
            if rest < f.len() {
                f[rest..].iter_mut().for_each(|v| *v *= keep);
            }
            f[0] += scale * drained[c] / grid_step;
        }
        self.time += dt;
        Ok(())
    }

    /// Step until `t_end` (the last step is shortened to land on it).
    pub fn run_to(&mut self, t_end: f64, dt: f64) -> Result<(), TransientError> {
        self.run_to_with(t_end, dt, |_| {})
    }

    /// [`run_to`](Self::run_to) calling `observe` after every step.
    pub fn run_to_with<O>(&mut self, t_end: f64, dt: f64, mut observe: O) -> Result<(), TransientError>
    where
        O: FnMut(&TransientSolution),
    {
        if !(dt > 0.0) || dt > self.grid_step * (1.0 + 1e-12) {
            return Err(TransientError::CflViolation {
                dt,
                grid_step: self.grid_step,
            });
        }
        let start = self.time;
        let remaining = t_end - start;
        if remaining <= 0.0 {
            return Ok(());
        }
        let steps = (remaining / dt - 1e-9).ceil() as usize;
        for i in 0..steps {
            let target = start + (i + 1) as f64 * dt;
            let h = if i + 1 == steps { t_end - self.time } else { dt };
            self.step(h.min(dt))?;
            self.time = target.min(t_end);
            observe(self);
        }
        Ok(())
    }

    /// `max_{c,k} |f_c(h_k) − reference(c, h_k)|`.
    pub fn sup_distance<R: Fn(usize, f64) -> f64>(&self, reference: R) -> f64 {
        let mut worst = 0.0f64;
        for (c, f) in self.densities.iter().enumerate() {
            for (k, &v) in f.iter().enumerate() {
                worst = worst.max((v - reference(c, self.h_at(k))).abs());
            }
        }
        worst
    }

    pub fn min_density(&self) -> f64 {
        self.densities
            .iter()
            .flat_map(|col| col.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}
