//! Property tests for the structural invariants.

use proptest::prelude::*;
use rectiflow::data::sample_noise;
use rectiflow::nn::MlpArch;
use rectiflow::samplers::overshoot_coefficients;
use rectiflow::training::{rf_loss_and_grads, FlowModel};
use rectiflow::{
    energy_distance, interpolate, BoundaryKind, Batch, LossWeight, Mlp, ModelKind, Point, StreamFamily,
    VelocityField,
};

fn small_arch(d: usize) -> MlpArch {
    let mut arch = MlpArch::default_for(d);
    arch.hidden = vec![24, 24];
    arch.time_frequencies = 3;
    arch
}

fn coords(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0..50.0f64, d)
}

fn boundary_kind() -> impl Strategy<Value = BoundaryKind> {
    prop::sample::select(BoundaryKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn interpolation_endpoints_are_exact(a in coords(3), b in coords(3)) {
        let (x0, x1) = (Point::new(a).unwrap(), Point::new(b).unwrap());
        prop_assert_eq!(interpolate(&x0, &x1, 0.0).unwrap(), x0.clone());
        prop_assert_eq!(interpolate(&x0, &x1, 1.0).unwrap(), x1);
    }

    #[test]
    fn interpolation_is_affine(a in coords(2), b in coords(2), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let (x0, x1) = (Point::new(a).unwrap(), Point::new(b).unwrap());
        let mid = interpolate(&x0, &x1, 0.5 * (s + t)).unwrap();
        let (ps, pt) = (interpolate(&x0, &x1, s).unwrap(), interpolate(&x0, &x1, t).unwrap());
        for i in 0..2 {
            let avg = 0.5 * (ps.coords()[i] + pt.coords()[i]);
            prop_assert!((mid.coords()[i] - avg).abs() <= 1e-12 * (1.0 + avg.abs() + 50.0));
        }
    }

    #[test]
    fn boundary_models_hold_their_boundaries(seed in any::<u64>(), kind in boundary_kind(), c in coords(2)) {
        let probes = sample_noise::<f64>(&StreamFamily::new(seed, "probes"), 0, 100, 2);
        let probes = Batch::from_array(probes.array() * 3.0);
        let c = Point::new(c).unwrap();
        let mask = FlowModel::build(ModelKind::Mask, kind, c.clone(), Mlp::init(small_arch(2), seed).unwrap()).unwrap();
        let sub = FlowModel::build(ModelKind::Subtraction, kind, c.clone(), Mlp::init(small_arch(2), seed).unwrap()).unwrap();
        for model in [&mask, &sub] {
            let v1 = model.velocity(&probes, 1.0).unwrap();
            let right = (v1.array() - probes.array()).iter().fold(0.0f64, |m, d| m.max(d.abs()));
            prop_assert!(right <= 1e-9, "right {}", right);
        }
        let v0 = mask.velocity(&probes, 0.0).unwrap();
        for i in 0..100 {
            for j in 0..2 {
                let want = c.coords()[j] - probes.array()[[i, j]];
                prop_assert!((v0.array()[[i, j]] - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn overshoot_radicand_is_non_negative(t in 0.0..0.999f64, frac in 0.001..1.0f64, c in 0.0..10.0f64) {
        let s = t + frac * (1.0 - t);
        prop_assume!(s > t);
        let (o, a, b) = overshoot_coefficients(t, s, c).unwrap();
        prop_assert!(o >= s && o <= 1.0);
        prop_assert!(b >= 0.0);
        let lhs = b * b + (a * (1.0 - o)).powi(2);
        prop_assert!((lhs - (1.0 - s).powi(2)).abs() <= 1e-12);
    }

    #[test]
    fn energy_distance_is_symmetric(seed in any::<u64>(), n in 1usize..40, m in 1usize..40) {
        let fam = StreamFamily::new(seed, "ed");
        let a = sample_noise::<f64>(&fam, 0, n, 2);
        let b = sample_noise::<f64>(&fam, 1000, m, 2);
        let ab = energy_distance(&a, &b).unwrap();
        prop_assert!((ab - energy_distance(&b, &a).unwrap()).abs() <= 1e-12);
        prop_assert!(ab >= -1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loss_ignores_batch_order(seed in any::<u64>(), kind in prop::sample::select(vec![ModelKind::Vanilla, ModelKind::Mask, ModelKind::Subtraction])) {
        let fam = StreamFamily::new(seed, "perm");
        let n = 12;
        let x0 = sample_noise::<f64>(&fam, 0, n, 2);
        let x1 = sample_noise::<f64>(&fam, 100, n, 2);
        let times: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let model = FlowModel::build(kind, BoundaryKind::Linear, Point::zeros(2), Mlp::init(small_arch(2), seed).unwrap()).unwrap();
        let order: Vec<usize> = (0..n).map(|i| (i * 5 + seed as usize % n) % n).collect();
        let shuffled_times: Vec<f64> = order.iter().map(|&i| times[i]).collect();
        let (l, g) = rf_loss_and_grads(&model, &x0, &x1, &times, &LossWeight::Unit).unwrap();
        let (lp, gp) = rf_loss_and_grads(&model, &x0.select_rows(&order), &x1.select_rows(&order), &shuffled_times, &LossWeight::Unit).unwrap();
        prop_assert!((l - lp).abs() <= 1e-12 * l.abs().max(1.0));
        let mut diff = g.clone();
        diff.add_scaled(&gp, -1.0);
        prop_assert!(diff.dot(&diff).sqrt() <= 1e-12 * g.dot(&g).sqrt().max(1.0));
    }

    #[test]
    fn weight_scales_loss_and_gradients(seed in any::<u64>(), eta in 0.1..10.0f64) {
        let fam = StreamFamily::new(seed, "eta");
        let x0 = sample_noise::<f64>(&fam, 0, 8, 2);
        let x1 = sample_noise::<f64>(&fam, 100, 8, 2);
        let times = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
        let model = FlowModel::build(ModelKind::Mask, BoundaryKind::StandardCosine, Point::zeros(2), Mlp::init(small_arch(2), seed).unwrap()).unwrap();
        let (l1, g1) = rf_loss_and_grads(&model, &x0, &x1, &times, &LossWeight::Unit).unwrap();
        let (le, ge) = rf_loss_and_grads(&model, &x0, &x1, &times, &LossWeight::Constant { value: eta }).unwrap();
        prop_assert!((le - eta * l1).abs() <= 1e-12 * le.abs().max(1.0));
        for (a, b) in g1.iter().zip(ge.iter()) {
            prop_assert!((b - eta * a).abs() <= 1e-12 * b.abs().max(1e-3));
        }
    }
}
