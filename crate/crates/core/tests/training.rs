//! Training loops on small synthetic problems.

use discontinuity::checkpoint::{decode, encode};
use discontinuity::data::{synthesize, Dataset};
use discontinuity::diffusion::DiffusionConfig;
use discontinuity::train::{accuracy, diffusion_loss_at, train_classifier, train_diffusion, TrainConfig};
use discontinuity::{Model, ModelSpec, Tensor};

fn cfg(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        learning_rate: lr,
        seed: 2,
        ..Default::default()
    }
}

#[test]
fn synthetic_classifier_converges() {
    let ds = synthesize(7, 1000, 16, 4).unwrap();
    let model = Model::build(ModelSpec::classifier(16, 4).with_seed(1)).unwrap();
    let (trained, history) = train_classifier(&model, &ds, &cfg(30, 1e-3)).unwrap();
    let acc = accuracy(&trained, &ds).unwrap();
    assert!(acc >= 0.95, "train accuracy {acc}");
    assert!(history.epoch_loss.last().unwrap() < history.epoch_loss.first().unwrap());
    // a trained model survives the checkpoint format bit for bit
    assert!(decode(&encode(&trained)).unwrap().bitwise_eq(&trained));
}

#[test]
fn denoiser_on_constant_data() {
    let rows = vec![vec![0.3, 0.6, 0.9, 0.1]; 256];
    let ds = Dataset::new("const", Tensor::from_rows(&rows).unwrap(), vec![0; 256], 1).unwrap();
    let dcfg = DiffusionConfig { steps: 100, ..Default::default() };
    let model = Model::build(ModelSpec::denoiser(4, 0.05).with_seed(3)).unwrap();
    let before = diffusion_loss_at(&model, &ds, &dcfg, 0, 9).unwrap();
    let (trained, history) = train_diffusion(&model, &ds, &cfg(60, 1e-3), &dcfg).unwrap();
    let after = diffusion_loss_at(&trained, &ds, &dcfg, 0, 9).unwrap();
    assert!(before > after);
    // x_t is x₀ plus noise scaled by 0.01 at t=0; the network does not
    // learn the 100x gain needed to read ε back, so it stays near the
    // zero predictor's mse of 1
    assert!((after - 1.0).abs() < 0.25, "t=0 loss {after}");
    assert!(history.epoch_loss.last().unwrap() < history.epoch_loss.first().unwrap());
}
