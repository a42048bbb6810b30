use serde::Serialize;
use thiserror::Error;

use crate::equilibrium::FluidEquilibrium;
use crate::sim::OccupancySnapshot;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("snapshot has {snapshot} classes, equilibrium has {equilibrium}")]
pub struct ClassMismatch {
    pub snapshot: usize,
    pub equilibrium: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub n_samples: usize,
}

/// Sup distance between the class-aggregated empirical CDF of rescaled ages
/// and the total equilibrium CDF. The theory CDF is continuous, so checking
/// each sample point and its left limit covers the supremum.
pub fn ks_distance(snapshot: &OccupancySnapshot, eq: &FluidEquilibrium) -> Result<KsResult, ClassMismatch> {
    if snapshot.num_classes() != eq.num_classes() {
        return Err(ClassMismatch {
            snapshot: snapshot.num_classes(),
            equilibrium: eq.num_classes(),
        });
    }
    let mut samples: Vec<f64> = snapshot.ages.iter().flatten().copied().collect();
    samples.sort_by(f64::total_cmp);
    let n = snapshot.num_agents as f64;
    let mut statistic = 0.0f64;
    let mut i = 0;
    while i < samples.len() {
        let x = samples[i];
        let below = i as f64 / n;
        while i < samples.len() && samples[i] == x {
            i += 1;
        }
        let at = i as f64 / n;
        let theory = eq.total_cdf_at(x);
        statistic = statistic.max((at - theory).abs()).max((below - theory).abs());
    }
    Ok(KsResult {
        statistic,
        n_samples: samples.len(),
    })
}
