//! Tape gradients against central differences on random small networks.

mod common;

use discontinuity::model::input_gradient;
use discontinuity::ops::{Activation, LossKind, Target};
use discontinuity::tape::Tape;
use discontinuity::{DropoutMode, Model, ModelSpec, Tensor};

#[test]
fn random_networks_match_central_differences() {
    let (reports, _) = common::gradient_suite(40, 1_000);
    for (i, r) in reports.iter().enumerate() {
        assert!(r.checked > 0 || r.failures == 0);
        assert_eq!(r.failures, 0, "case {i}: worst relative error {:e}", r.worst);
    }
}

#[test]
fn linear_input_gradient_closed_form() {
    // f(x) = 2x, L = mse(f(x), 0) = 4x², dL/dx = 8x
    let spec = ModelSpec::new(1, vec![], 1, Activation::Identity, Activation::Identity);
    let model = Model::from_flat(spec, &[2.0, 0.0]).unwrap();
    let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    let g = input_gradient(
        &model,
        &x,
        &Target::Dense(Tensor::matrix(1, 1, vec![0.0]).unwrap()),
        LossKind::Mse,
        DropoutMode::Inactive,
    )
    .unwrap();
    assert_eq!(g.data(), &[8.0]);
}

#[test]
fn target_equal_to_output_gives_zero_gradient() {
    let model = Model::build(ModelSpec::new(3, vec![5], 2, Activation::Tanh, Activation::Identity).with_seed(4)).unwrap();
    let x = Tensor::matrix(1, 3, vec![0.2, -0.4, 0.9]).unwrap();
    let y = model.forward(&x, DropoutMode::Inactive).unwrap();
    let g = input_gradient(&model, &x, &Target::Dense(y), LossKind::Mse, DropoutMode::Inactive).unwrap();
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn backward_is_bitwise_repeatable() {
    let case = common::random_case(77);
    let run = || {
        let mut tape = Tape::new();
        let input = tape.leaf(case.x.clone(), true);
        let (loss, _) = case
            .model
            .record_loss(&mut tape, input, case.target.clone(), case.kind, DropoutMode::Inactive, true)
            .unwrap();
        tape.backward(loss).unwrap().get_or_zeros(input, &case.x)
    };
    assert!(run().bitwise_eq(&run()));
}
