use rand::seq::index;

use super::{FederatedError, Result};
use crate::seed;

/// Uniform sample of `k` distinct clients, returned in `eligible` order.
///
/// Deterministic in (eligible order, k, round, seed).
pub fn select_clients(eligible: &[String], k: usize, round: usize, seed: u64) -> Result<Vec<String>> {
    if k > eligible.len() {
        return Err(FederatedError::NotEnoughClients {
            k,
            available: eligible.len(),
        });
    }
    let mut rng = seed::rng(seed::derive(seed, &[round as u64]));
    let mut picked = index::sample(&mut rng, eligible.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| eligible[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("p{i:02}")).collect()
    }

    #[test]
    fn full_selection_and_determinism() {
        let all = ids(6);
        assert_eq!(select_clients(&all, 6, 3, 9).unwrap(), all);
        let a = select_clients(&ids(18), 5, 4, 1).unwrap();
        assert_eq!(a, select_clients(&ids(18), 5, 4, 1).unwrap());
        assert_eq!(a.len(), 5);
        let mut dedup = a.clone();
        dedup.dedup();
        assert_eq!(dedup, a);
        assert!(matches!(
            select_clients(&ids(3), 4, 0, 0),
            Err(FederatedError::NotEnoughClients { k: 4, available: 3 })
        ));
    }

    #[test]
    fn selection_frequency_is_uniform() {
        let all = ids(18);
        let mut counts = vec![0usize; 18];
        let rounds = 10_000;
        for r in 0..rounds {
            for id in select_clients(&all, 5, r, 42).unwrap() {
                counts[all.iter().position(|x| *x == id).unwrap()] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / rounds as f64;
            assert!((freq - 5.0 / 18.0).abs() <= 0.02, "{freq}");
        }
    }
}
