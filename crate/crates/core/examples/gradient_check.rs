//! Compares backpropagation through time against central differences on a small stacked LSTM.

use pcg_feel::nn::{init_params, loss_and_gradient, ModelTopology};
use rand::Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let topology = ModelTopology {
        input_size: 1,
        hidden_sizes: vec![4, 4],
        output_size: 2,
        lookback: 6,
    };
    let params = init_params(&topology, 3)?;
    let mut rng = pcg_feel::seed::rng(11);
    let inputs: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();
    let targets: Vec<Vec<f64>> = (0..8)
        .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
        .collect();

    let (loss, grad) = loss_and_gradient(&params, &inputs, &targets)?;
    println!("{} parameters, loss {loss:.6}", params.len());

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in (0..params.len()).step_by(7) {
        let mut plus = params.clone();
        plus.values_mut()[i] += h;
        let mut minus = params.clone();
        minus.values_mut()[i] -= h;
        let numeric = (loss_and_gradient(&plus, &inputs, &targets)?.0
            - loss_and_gradient(&minus, &inputs, &targets)?.0)
            / (2.0 * h);
        let rel = (grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()).max(1e-12);
        worst = worst.max(rel);
        println!("{i:>4} analytic {:>+.6e} numeric {numeric:>+.6e}", grad[i]);
    }
    println!("worst relative error {worst:.2e}");
    Ok(())
}
