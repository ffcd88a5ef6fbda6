use super::{ClientUpdate, FederatedError, Result, Weighting};
use crate::nn::ParamVector;

/// Coordinate-wise weighted mean of client parameters.
///
/// Updates are combined in prosumer-id order as `x_0 + sum_i w_i (x_i - x_0)`, which equals the
/// weighted mean, is exact when all inputs agree, and does not depend on arrival order.
pub fn fedavg(updates: &[ClientUpdate], weighting: Weighting) -> Result<ParamVector> {
    let mut order: Vec<&ClientUpdate> = updates.iter().collect();
    order.sort_by(|a, b| a.prosumer_id.cmp(&b.prosumer_id));
    let first = *order.first().ok_or(FederatedError::NoUpdates)?;
    let topology = first.params.topology();
    if let Some(bad) = order.iter().find(|u| u.params.topology() != topology) {
        return Err(FederatedError::TopologyMismatch(bad.prosumer_id.clone()));
    }
    let weights: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0 / order.len() as f64; order.len()],
        Weighting::BySampleCount => {
            let total: usize = order.iter().map(|u| u.n_samples).sum();
            if total == 0 {
                return Err(FederatedError::ZeroSamples);
            }
            order
                .iter()
                .map(|u| u.n_samples as f64 / total as f64)
                .collect()
        }
    };
    let base = first.params.values();
    let mut out = base.to_vec();
    for (u, &w) in order.iter().zip(&weights).skip(1) {
        for ((o, &x), &x0) in out.iter_mut().zip(u.params.values()).zip(base) {
            *o += w * (x - x0);
        }
    }
    Ok(ParamVector::new(topology.clone(), out)?)
}
