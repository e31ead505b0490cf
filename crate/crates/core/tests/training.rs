use geosup::backbone::{BackboneConfig, Reduction};
use geosup::data::{generate_synthetic, AugmentConfig, DatasetManifest};
use geosup::instrument::{count_ops, OpKind};
use geosup::nn::Params;
use geosup::trainer::{
    evaluate, forward_backward, forward_step, model_config_for, stack_images, AblationFlags, Checkpoint, LossWeights,
    Model, ModelConfig, StepSettings, TrainConfig, Trainer,
};
use geosup::verify::{grad_check, GradCheckOptions};
use ndarray::Array3;

fn tiny_data() -> DatasetManifest {
    generate_synthetic(4, 3, 2, 32, 5).unwrap()
}

fn tiny_model(data: &DatasetManifest) -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            input_channels: 3,
            stage_channels: vec![6, 8, 12],
            stride_per_stage: vec![2, 2, 2],
        },
        ..model_config_for(data)
    }
}

fn tiny_train(flags: AblationFlags, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        flags,
        ..TrainConfig::default()
    }
}

#[test]
fn full_model_trains_with_finite_additive_losses() {
    let data = tiny_data();
    let mut trainer = Trainer::<f32>::new(&tiny_model(&data), &tiny_train(AblationFlags::full(), 2), data.class_names.clone()).unwrap();
    let history = trainer.fit(&data, |_, _| Ok(())).unwrap();
    assert_eq!(history.len(), 2);
    for m in &history {
        let l = &m.losses;
        assert!(l.total.is_finite());
        assert!(l.l_reg > 0.0 && l.l_gae > 0.0);
        assert!(l.additivity_error(&LossWeights::default(), m.gamma) < 1e-6 * l.total.abs().max(1.0));
        assert!(m.test_acc.is_some());
    }
}

#[test]
fn baseline_reports_zero_auxiliary_terms() {
    let data = tiny_data();
    let mut trainer = Trainer::<f32>::new(&tiny_model(&data), &tiny_train(AblationFlags::baseline(), 1), data.class_names.clone()).unwrap();
    let m = trainer.run_epoch(&data).unwrap();
    let l = m.losses;
    assert_eq!((l.l_reg, l.l_dis, l.l_ang, l.l_gae, l.l_gat, l.aux_cls), (0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
    assert_eq!(l.total, l.l_cls);
}

#[test]
fn deterministic_runs_match_exactly() {
    let data = tiny_data();
    let run = || {
        let mut t = Trainer::<f32>::new(&tiny_model(&data), &tiny_train(AblationFlags::full(), 2), data.class_names.clone()).unwrap();
        let h = t.fit(&data, |_, _| Ok(())).unwrap();
        (serde_json::to_string(&h).unwrap(), t.model.flatten())
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let data = tiny_data();
    let cfg = tiny_train(AblationFlags::full(), 3);
    let mut straight = Trainer::<f32>::new(&tiny_model(&data), &cfg, data.class_names.clone()).unwrap();
    let full_history = straight.fit(&data, |_, _| Ok(())).unwrap();

    let mut first = Trainer::<f32>::new(&tiny_model(&data), &cfg, data.class_names.clone()).unwrap();
    first.run_epoch(&data).unwrap();
    let bytes = first.checkpoint().to_bytes().unwrap();
    let mut resumed = Trainer::from_checkpoint(Checkpoint::<f32>::from_bytes(&bytes).unwrap());
    let rest = resumed.fit(&data, |_, _| Ok(())).unwrap();
    assert_eq!(rest, full_history[1..]);
    assert_eq!(resumed.model.flatten(), straight.model.flatten());
}

#[test]
fn checkpoint_roundtrip_preserves_predictions() {
    let data = tiny_data();
    let mut t = Trainer::<f32>::new(&tiny_model(&data), &tiny_train(AblationFlags::full(), 1), data.class_names.clone()).unwrap();
    t.run_epoch(&data).unwrap();
    let ck = t.checkpoint();
    let back = Checkpoint::<f32>::from_bytes(&ck.to_bytes().unwrap()).unwrap();
    let aug = AugmentConfig::default();
    assert_eq!(evaluate(&ck.model, &data.test, &aug).unwrap(), evaluate(&back.model, &data.test, &aug).unwrap());
    assert_eq!(back.epoch, 1);
    assert_eq!(back.class_names, data.class_names);
}

#[test]
fn evaluation_cost_does_not_depend_on_auxiliary_modules() {
    let data = tiny_data();
    let mc = tiny_model(&data);
    let aug = AugmentConfig::default();
    let full = Model::<f32>::new(&mc, 1).unwrap();
    let base = Model::<f32>::new(&mc, 2).unwrap();
    let (_, full_ops) = count_ops(|| evaluate(&full, &data.test, &aug).unwrap());
    let (_, base_ops) = count_ops(|| evaluate(&base, &data.test, &aug).unwrap());
    assert_eq!(full_ops, base_ops);
    assert_eq!(full_ops.auxiliary_calls(), 0);
    assert!(full_ops.calls(OpKind::Conv) > 0);
}

#[test]
fn cam_and_geometry_variants_train() {
    let data = tiny_data();
    let full = AblationFlags::full();
    for flags in [
        AblationFlags { cam_feedback: true, ..full },
        AblationFlags { cartesian_mode: true, ..full },
        AblationFlags { sd_mode: false, masked: false, ..full },
    ] {
        let mut t = Trainer::<f32>::new(&tiny_model(&data), &tiny_train(flags, 1), data.class_names.clone()).unwrap();
        assert!(t.run_epoch(&data).unwrap().losses.total.is_finite());
    }
}

/// Whole-objective gradient of one step, with the transfer teacher left
/// attached so that the objective is a plain function of the parameters.
#[test]
fn full_step_gradient_matches_finite_differences() {
    let data = tiny_data();
    let mut mc = tiny_model(&data);
    mc.gat.bidirectional = true;
    let mut model = Model::<f64>::new(&mc, 4).unwrap();
    // a non-trivial feedback generator so the warp is not the identity
    let mut gen = model.generator.flatten();
    for (i, g) in gen.iter_mut().enumerate() {
        *g = 0.3 * ((i as f64) * 0.7).sin();
    }
    model.generator.unflatten(&gen);

    let imgs: Vec<&Array3<f32>> = data.train.iter().take(4).map(|s| &s.image).collect();
    let labels: Vec<usize> = data.train.iter().take(4).map(|s| s.label).collect();
    let images = stack_images::<f64>(&imgs);
    let settings = StepSettings {
        flags: AblationFlags::full(),
        weights: LossWeights::default(),
        gamma: 0.5,
        gat_bidirectional: true,
        reduction: Reduction::Mean,
        epoch: 0,
        step: 0,
    };
    let out = forward_backward(&model, images.view(), &labels, &settings).unwrap();
    let x = model.flatten();
    let report = grad_check(
        |p| {
            let mut m = model.clone();
            m.unflatten(p);
            forward_step(&m, images.view(), &labels, &settings).unwrap().total
        },
        &x,
        &out.grads.flatten(),
        GradCheckOptions {
            max_coords: 200,
            ..GradCheckOptions::default()
        },
    );
    assert!(report.passed, "{report}");
}
