use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::lstm::{loss_and_gradient, Predictor};
use super::{adam_step, AdamState, ModelError, ParamVector, Result};
use crate::data::{NormalizationParams, WindowedDataset};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
    pub gradient_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 32,
            learning_rate: 0.001,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
            gradient_clip_norm: Some(1.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::InvalidTopology(format!("train config: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) {
            return bad("learning_rate and adam_epsilon must be positive");
        }
        for b in [self.adam_beta1, self.adam_beta2] {
            if !(b > 0.0 && b < 1.0) {
                return bad("adam betas must lie in (0, 1)");
            }
        }
        if matches!(self.gradient_clip_norm, Some(c) if !(c > 0.0)) {
            return bad("gradient_clip_norm must be positive");
        }
        Ok(())
    }
}

/// Runs `cfg.epochs` passes of shuffled mini-batch Adam from a fresh optimizer state.
///
/// Returns the updated parameters and the mean training loss of the final epoch; with zero
/// epochs the parameters are returned unchanged with the loss of one evaluation pass.
pub fn train_epochs(
    params: &ParamVector,
    dataset: &WindowedDataset,
    cfg: &TrainConfig,
) -> Result<(ParamVector, f64)> {
    train_epochs_with(params, dataset, cfg, |_, _| {})
}

/// [`train_epochs`] that also reports `(epoch, mean loss)` after every epoch.
pub fn train_epochs_with(
    params: &ParamVector,
    dataset: &WindowedDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(ParamVector, f64)> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    cfg.validate()?;
    if cfg.epochs == 0 {
        return Ok((params.clone(), evaluate_mse(params, dataset)?));
    }
    let mut current = params.clone();
    let mut state = AdamState::new(current.len());
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(seed::derive(cfg.seed, &[epoch as u64])));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| dataset.inputs[i].as_slice()).collect();
            let targets: Vec<&[f64]> = chunk.iter().map(|&i| dataset.targets[i].as_slice()).collect();
            let (loss, grad) = loss_and_gradient(&current, &inputs, &targets)?;
            adam_step(current.values_mut(), &grad, &mut state, cfg)?;
            total += loss * chunk.len() as f64;
        }
        epoch_loss = total / dataset.len() as f64;
        on_epoch(epoch, epoch_loss);
    }
    Ok((current, epoch_loss))
}

fn check_shape(params: &ParamVector, dataset: &WindowedDataset) -> Result<()> {
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let t = params.topology();
    if dataset.lookback * t.input_size != t.window_len() {
        return Err(ModelError::WindowLength {
            expected: t.window_len(),
            got: dataset.lookback,
        });
    }
    if dataset.horizon != t.output_size {
        return Err(ModelError::TargetLength {
            expected: t.output_size,
            got: dataset.horizon,
        });
    }
    Ok(())
}

/// Mean squared error in normalized units.
pub fn evaluate_mse(params: &ParamVector, dataset: &WindowedDataset) -> Result<f64> {
    check_shape(params, dataset)?;
    let (sum, n) = squared_errors(params, dataset, |v| v);
    Ok(sum / n as f64)
}

/// Root mean squared error in kW, over every pair and horizon step.
pub fn evaluate_rmse(
    params: &ParamVector,
    dataset: &WindowedDataset,
    norm: &NormalizationParams,
) -> Result<f64> {
    check_shape(params, dataset)?;
    Ok(rmse_with(params, dataset, norm))
}

/// RMSE in kW for any predictor; both sides are denormalized with `norm`.
pub fn rmse_with<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &WindowedDataset,
    norm: &NormalizationParams,
) -> f64 {
    let (sum, n) = squared_errors(predictor, dataset, |v| norm.denormalize(v));
    (sum / n as f64).sqrt()
}

fn squared_errors<P: Predictor + ?Sized>(
    predictor: &P,
    dataset: &WindowedDataset,
    map: impl Fn(f64) -> f64,
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut n = 0;
    let inputs: Vec<&[f64]> = dataset.inputs.iter().map(|w| w.as_slice()).collect();
    for (chunk_idx, chunk) in inputs.chunks(256).enumerate() {
        let preds = predictor.predict_batch(chunk);
        for (k, pred) in preds.iter().enumerate() {
            let target = &dataset.targets[chunk_idx * 256 + k];
            for (p, y) in pred.iter().zip(target) {
                let e = map(*p) - map(*y);
                sum += e * e;
                n += 1;
            }
        }
    }
    (sum, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SYNTHETIC_START;
    use crate::nn::{init_params, ModelTopology};

    fn trend_dataset(pairs: usize, lookback: usize) -> WindowedDataset {
        let series: Vec<f64> = (0..pairs + lookback).map(|i| i as f64 / (pairs + lookback) as f64).collect();
        WindowedDataset {
            lookback,
            horizon: 1,
            inputs: (0..pairs).map(|i| series[i..i + lookback].to_vec()).collect(),
            targets: (0..pairs).map(|i| vec![series[i + lookback]]).collect(),
            norm: NormalizationParams {
                min_value: 0.0,
                max_value: 10.0,
            },
            first_target: SYNTHETIC_START,
            resolution_minutes: 15,
        }
    }

    fn tiny() -> ModelTopology {
        ModelTopology {
            input_size: 1,
            hidden_sizes: vec![4],
            output_size: 1,
            lookback: 3,
        }
    }

    struct Shifted(f64);

    impl Predictor for Shifted {
        fn predict_batch(&self, inputs: &[&[f64]]) -> Vec<Vec<f64>> {
            // the series rises by 1/23 per step
            inputs
                .iter()
                .map(|w| vec![w[w.len() - 1] + 1.0 / 23.0 + self.0])
                .collect()
        }
    }

    #[test]
    fn training_reduces_loss() {
        let ds = trend_dataset(20, 3);
        let p = init_params(&tiny(), 1).unwrap();
        let initial = evaluate_mse(&p, &ds).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 3,
            ..TrainConfig::default()
        };
        let (trained, final_loss) = train_epochs(&p, &ds, &cfg).unwrap();
        let after = evaluate_mse(&trained, &ds).unwrap();
        assert!(final_loss < initial, "{final_loss} vs {initial}");
        assert!(after < initial);
        let (again, again_loss) = train_epochs(&p, &ds, &cfg).unwrap();
        assert_eq!(again, trained);
        assert_eq!(again_loss, final_loss);
    }

    #[test]
    fn zero_epochs_keeps_params() {
        let ds = trend_dataset(10, 3);
        let p = init_params(&tiny(), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (q, loss) = train_epochs(&p, &ds, &cfg).unwrap();
        assert_eq!(q, p);
        assert_eq!(loss, evaluate_mse(&p, &ds).unwrap());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut ds = trend_dataset(4, 3);
        ds.inputs.clear();
        ds.targets.clear();
        let p = init_params(&tiny(), 2).unwrap();
        assert!(matches!(
            train_epochs(&p, &ds, &TrainConfig::default()),
            Err(ModelError::EmptyDataset)
        ));
        assert!(matches!(
            evaluate_rmse(&p, &ds, &ds.norm.clone()),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn rmse_is_in_kilowatts() {
        let ds = trend_dataset(20, 3);
        let norm = ds.norm;
        assert!(rmse_with(&Shifted(0.0), &ds, &norm) < 1e-12);
        // +0.1 normalized on a 10 kW span is +1 kW
        assert!((rmse_with(&Shifted(0.1), &ds, &norm) - 1.0).abs() < 1e-12);
        let p = init_params(&tiny(), 4).unwrap();
        let mse = evaluate_mse(&p, &ds).unwrap();
        let rmse = evaluate_rmse(&p, &ds, &norm).unwrap();
        assert!((rmse - 10.0 * mse.sqrt()).abs() < 1e-12);
    }
}
