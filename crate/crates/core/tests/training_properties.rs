use dcan_core::augment::Sample;
use dcan_core::net::{
    train, window_means, DcanConfig, DcanModel, LossTerms, ParamGroup, TrainSchedule, TrainingSample,
};
use dcan_core::synth::{generate_dataset, GlandSceneSpec};
use dcan_core::RngState;

fn tiny_spec() -> GlandSceneSpec {
    GlandSceneSpec {
        width: 16,
        height: 16,
        min_glands: 1,
        max_glands: 2,
        min_radius: 3.0,
        max_radius: 5.0,
        min_ring: 1.0,
        max_ring: 2.0,
        ..GlandSceneSpec::default()
    }
}

fn tiny_batch(n: usize, seed: u64) -> Vec<TrainingSample> {
    let (samples, _) = generate_dataset(&tiny_spec(), n, &mut RngState::new(seed)).unwrap();
    samples.iter().map(|s: &Sample| TrainingSample::new(s, 1, 16)).collect()
}

fn group_norms(model: &DcanModel, grads: &dcan_core::net::DcanGrads) -> [f64; 3] {
    let mut norms = [0.0; 3];
    for (i, p) in model.params().iter().enumerate() {
        let slot = match p.group {
            ParamGroup::Shared => 0,
            ParamGroup::Object => 1,
            ParamGroup::Contour => 2,
        };
        norms[slot] += grads.param(i).iter().map(|g| g * g).sum::<f64>();
    }
    norms
}

#[test]
fn each_branch_loss_only_reaches_its_own_parameters() {
    let config = DcanConfig {
        dropout_rate: 0.0,
        weight_decay: 0.0,
        ..DcanConfig::miniature()
    };
    let mut rng = RngState::new(3);
    let model = DcanModel::build(config, &mut rng).unwrap();
    let sample = &tiny_batch(1, 8)[0];
    let pass = model.forward_pass(&sample.image, true, &mut rng).unwrap();
    let labels = sample.labels();

    let object_only = LossTerms {
        object: true,
        contour: false,
    };
    let contour_only = LossTerms {
        object: false,
        contour: true,
    };
    for (terms, untouched, touched) in [(object_only, 2, 1), (contour_only, 1, 2)] {
        let (_, grads) = model.loss_and_grads(&pass, &labels, 1.0, terms).unwrap();
        let norms = group_norms(&model, &grads);
        assert_eq!(norms[untouched], 0.0, "{terms:?}");
        assert!(norms[touched] > 0.0 && norms[0] > 0.0, "{terms:?}: {norms:?}");

        let mut stepped = model.clone();
        stepped.sgd_step(&grads, 0.01);
        for (before, after) in model.params().iter().zip(stepped.params()) {
            let changed = before.values != after.values;
            match before.group {
                ParamGroup::Shared => {}
                ParamGroup::Object => assert!(!changed || touched == 1, "{}", before.name),
                ParamGroup::Contour => assert!(!changed || touched == 2, "{}", before.name),
            }
        }
    }
}

#[test]
fn miniature_model_overfits_four_images() {
    let config = DcanConfig {
        dropout_rate: 0.0,
        ..DcanConfig::miniature()
    };
    let mut rng = RngState::new(11);
    let mut model = DcanModel::build(config, &mut rng).unwrap();
    let data = tiny_batch(4, 12);
    let schedule = TrainSchedule {
        lr0: 1e-3,
        max_iters: 600,
        wa_interval: 200,
        ..TrainSchedule::default()
    };
    let report = train(&mut model, &data, &schedule, None, &mut rng).unwrap();
    let means = window_means(&report.losses, 50);
    for pair in means.windows(2) {
        assert!(pair[1] <= pair[0], "smoothed loss rose: {means:?}");
    }
    assert!(means[means.len() - 1] < 0.5 * means[0], "{means:?}");
}
