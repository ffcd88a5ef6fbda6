//! Mean single-window inference time of the two forecaster shapes.

use pcg_feel::nn::{init_params, mean_inference_latency, ModelTopology};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let m1 = ModelTopology::model1();
    let m2 = ModelTopology::model2();
    let p1 = init_params(&m1, 1)?;
    let p2 = init_params(&m2, 2)?;
    let w1 = vec![0.4; m1.window_len()];
    let w2 = vec![0.0; m2.window_len()];
    let t1 = mean_inference_latency(&p1, &w1, 100)?;
    let t2 = mean_inference_latency(&p2, &w2, 100)?;
    println!("Model1 {} params, 1 step:  {t1:.2?}", m1.param_count());
    println!("Model2 {} params, 5 steps: {t2:.2?}", m2.param_count());
    println!("ratio {:.2}", t2.as_secs_f64() / t1.as_secs_f64());
    Ok(())
}
