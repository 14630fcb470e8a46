//! Reverse-mode gradients against central finite differences.

use rand::Rng;
use rectiflow::data::sample_noise;
use rectiflow::nn::MlpArch;
use rectiflow::training::{rf_loss_and_grads, Trainable};
use rectiflow::{BoundaryKind, FlowModel, LossWeight, Mlp, MlpParams, ModelKind, Point, StreamFamily};

const STEP: f64 = 1e-5;

fn model(kind: ModelKind, seed: u64) -> FlowModel {
    let arch = MlpArch::default_for(2);
    let mlp = Mlp::init(arch, seed).unwrap();
    FlowModel::build(kind, BoundaryKind::OffsetCosine, Point::new(vec![0.3, -0.2]).unwrap(), mlp).unwrap()
}

fn random_direction(like: &MlpParams, rng: &mut impl Rng) -> MlpParams {
    let mut d = like.zeros_like();
    for v in d.iter_mut() {
        *v = rng.random::<f64>() * 2.0 - 1.0;
    }
    let norm = d.dot(&d).sqrt();
    d.scale(1.0 / norm);
    d
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

fn check(kind: ModelKind) {
    let family = StreamFamily::new(7, "gradcheck");
    let mut net = model(kind, 3);
    let x0 = sample_noise(&family, 0, 16, 2);
    let x1 = sample_noise(&family, 100, 16, 2);
    let mut rng = family.stream(999);
    let times: Vec<f64> = (0..16).map(|_| 0.02 + 0.96 * rng.random::<f64>()).collect();
    let eta = LossWeight::Unit;
    let (_, grads) = rf_loss_and_grads(&net, &x0, &x1, &times, &eta).unwrap();
    let base = net.backbone().params().clone();
    let mut worst: f64 = 0.0;
    for _ in 0..24 {
        let d = random_direction(&base, &mut rng);
        let analytic = grads.dot(&d);
        let mut plus = base.clone();
        plus.add_scaled(&d, STEP);
        *net.backbone_mut().params_mut() = plus;
        let lp = rf_loss_and_grads(&net, &x0, &x1, &times, &eta).unwrap().0;
        let mut minus = base.clone();
        minus.add_scaled(&d, -STEP);
        *net.backbone_mut().params_mut() = minus;
        let lm = rf_loss_and_grads(&net, &x0, &x1, &times, &eta).unwrap().0;
        let numeric = (lp - lm) / (2.0 * STEP);
        worst = worst.max(relative_error(analytic, numeric));
    }
    assert!(worst < 1e-5, "{kind:?}: worst relative error {worst:e}");
}

#[test]
fn vanilla_directional_derivatives() {
    check(ModelKind::Vanilla);
}

#[test]
fn mask_directional_derivatives() {
    check(ModelKind::Mask);
}

#[test]
fn subtraction_directional_derivatives() {
    check(ModelKind::Subtraction);
}

#[test]
fn single_coordinates_of_the_raw_network() {
    let mut arch = MlpArch::default_for(3);
    arch.hidden = vec![32, 17];
    let mut mlp = Mlp::init(arch, 11).unwrap();
    let family = StreamFamily::new(2, "coord");
    let x = sample_noise::<f64>(&family, 0, 8, 3);
    let times: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
    let upstream = sample_noise::<f64>(&family, 50, 8, 3);
    // Scalar objective sum(upstream * m(x, t)).
    let objective = |mlp: &Mlp| {
        let out = mlp.forward(x.view(), &times).unwrap();
        (&out * upstream.array()).sum()
    };
    let (_, tape) = mlp.forward_with_tape(x.view(), &times).unwrap();
    let grads = mlp.backward(&tape, upstream.view()).unwrap();
    let total = grads.num_params();
    let mut rng = family.stream(7);
    for _ in 0..20 {
        let k = rng.random_range(0..total);
        let original = *mlp.params().iter().nth(k).unwrap();
        *mlp.params_mut().iter_mut().nth(k).unwrap() = original + STEP;
        let up = objective(&mlp);
        *mlp.params_mut().iter_mut().nth(k).unwrap() = original - STEP;
        let down = objective(&mlp);
        *mlp.params_mut().iter_mut().nth(k).unwrap() = original;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = *grads.iter().nth(k).unwrap();
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
        assert!(err < 1e-5, "coordinate {k}: {analytic} vs {numeric}");
    }
}
