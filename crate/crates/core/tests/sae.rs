mod common;

use common::{gradient_check, random_pair, toy_model};
use uad_core::sae::{Architecture, Mode, SaeModel};

#[test]
fn gradient_matches_finite_differences_in_training_mode() {
    let model = toy_model(0.7, 3);
    let pairs = vec![random_pair(5, 2, 10), random_pair(5, 2, 11)];
    let err = gradient_check(&model, &pairs, Mode::Train, 1e-5);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn gradient_matches_finite_differences_in_inference_mode() {
    let model = toy_model(2.0, 8);
    let pairs = vec![random_pair(5, 2, 12)];
    let err = gradient_check(&model, &pairs, Mode::Infer, 1e-5);
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn cosine_term_is_bounded() {
    let model = toy_model(1.0, 4);
    for seed in 0..20 {
        let out = model.sae_loss(&random_pair(5, 2, seed), Mode::Infer).unwrap();
        assert!((-1.0..=1.0).contains(&out.cosine));
    }
}

#[test]
fn zero_latents_are_guarded() {
    let model = SaeModel::zeros(&Architecture::reference(3), 1.0).unwrap();
    let out = model.sae_loss(&random_pair(15, 3, 1), Mode::Infer).unwrap();
    assert!(out.loss.is_finite());
    assert!(out.grads.unwrap().tensors.iter().flatten().all(|g| g.is_finite()));
}
