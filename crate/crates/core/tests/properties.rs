use proptest::prelude::*;

use wsram::diffnet::{log_sum_exp, softmax, DistributionParams, Sample};
use wsram::estimators::{
    bound_estimates, ess, importance_weights, wake_q_gradient_cv, wsram_theta_gradient_cv, ImportanceWeightSet,
};
use wsram::glimpse::{area_resample, extract_glimpse, Action, Image, ToyWorld};
use wsram::model::{GlimpseModel, TabularModel};
use wsram::rng::substream;
use wsram::training::ExperimentConfig;

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len()
        && a.iter()
            .zip(b)
            .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #[test]
    fn categorical_log_prob_normalizes(logits in prop::collection::vec(-30.0f64..30.0, 1..12)) {
        let d = DistributionParams::categorical(logits.clone());
        let total: f64 = (0..logits.len()).map(|i| d.log_prob(&Sample::Index(i)).unwrap().exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10);
        prop_assert!((softmax(&logits).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tempered_distributions_stay_normalized(
        logits in prop::collection::vec(-10.0f64..10.0, 2..8),
        tau in 0.2f64..5.0,
    ) {
        let d = DistributionParams::categorical(logits.clone()).temperature_scaled(tau).unwrap();
        let p = d.probabilities().unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // higher temperature never lowers entropy
        let base = DistributionParams::categorical(logits).entropy();
        if tau >= 1.0 { prop_assert!(d.entropy() >= base - 1e-12) } else { prop_assert!(d.entropy() <= base + 1e-12) }
    }

    #[test]
    fn log_weight_shift_leaves_normalized_weights_and_ess(
        lw in prop::collection::vec(-40.0f64..5.0, 1..10),
        shift in -500.0f64..500.0,
    ) {
        let a = ImportanceWeightSet::from_log_weights(lw.clone()).unwrap();
        let b = ImportanceWeightSet::from_log_weights(lw.iter().map(|l| l + shift).collect()).unwrap();
        prop_assert!(close(a.normalized(), b.normalized(), 1e-12));
        prop_assert!((ess(&a) - ess(&b)).abs() < 1e-9);
        let m = lw.len() as f64;
        prop_assert!(ess(&a) >= 1.0 - 1e-12 && ess(&a) <= m + 1e-9);
        let bounds = bound_estimates(&a);
        prop_assert!(bounds.f_hat <= bounds.lm_hat + 1e-12);
        prop_assert!((bounds.lm_hat - (log_sum_exp(&lw) - m.ln())).abs() < 1e-12);
    }

    #[test]
    fn control_variate_estimators_ignore_weight_shift(seed in 0u64..500, m in 1usize..6, shift in -50.0f64..50.0) {
        let world = ToyWorld::random(2, 2, 2, 3, 1.0, seed).unwrap();
        let model = TabularModel::from_world(&world);
        let label = (seed % 3) as usize;
        let mut rng = substream(seed, "prop", 0);
        let trajs: Vec<_> = (0..m).map(|_| model.rollout_proposal(&world, label, &mut rng).unwrap()).collect();
        let w = importance_weights(&trajs).unwrap();
        let shifted = ImportanceWeightSet::from_log_weights(w.log_raw().iter().map(|l| l + shift).collect()).unwrap();
        let theta = wsram_theta_gradient_cv(&model, &world, &trajs, &w).unwrap().grad;
        let theta_s = wsram_theta_gradient_cv(&model, &world, &trajs, &shifted).unwrap().grad;
        prop_assert!(close(&theta, &theta_s, 1e-10));
        let eta = wake_q_gradient_cv(&model, &world, &trajs, &w).unwrap().grad;
        let eta_s = wake_q_gradient_cv(&model, &world, &trajs, &shifted).unwrap().grad;
        prop_assert!(close(&eta, &eta_s, 1e-10));
    }

    #[test]
    fn area_resampling_conserves_mean(
        (h, w, pixels) in (1usize..20, 1usize..20).prop_flat_map(|(h, w)| {
            (Just(h), Just(w), prop::collection::vec(0.0f64..1.0, h * w))
        }),
        dh in 1usize..20,
        dw in 1usize..20,
    ) {
        let out = area_resample(&pixels, h, w, dh, dw);
        let mean_in = pixels.iter().sum::<f64>() / (h * w) as f64;
        let mean_out = out.iter().sum::<f64>() / (dh * dw) as f64;
        prop_assert!((mean_in - mean_out).abs() < 1e-12);
    }

    #[test]
    fn glimpses_are_translation_consistent(
        seed in 0u64..1000,
        ox in 4i64..10,
        oy in 4i64..10,
        dx in -3i64..4,
        dy in -3i64..4,
        scale in 0usize..2,
    ) {
        const SIDE: usize = 24;
        let scales = [4usize, 6];
        let mut rng = substream(seed, "prop-image", 0);
        let pixels: Vec<f64> = (0..SIDE * SIDE).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
        let image = Image::new(SIDE, SIDE, pixels.clone()).unwrap();
        let mut moved = vec![0.0; SIDE * SIDE];
        for r in 0..SIDE as i64 {
            for c in 0..SIDE as i64 {
                let (sr, sc) = (r - dy, c - dx);
                if (0..SIDE as i64).contains(&sr) && (0..SIDE as i64).contains(&sc) {
                    moved[(r * SIDE as i64 + c) as usize] = pixels[(sr * SIDE as i64 + sc) as usize];
                }
            }
        }
        let moved = Image::new(SIDE, SIDE, moved).unwrap();
        // centre a quarter pixel past the window midpoint so rounding is stable
        let half = scales[scale] as f64 / 2.0;
        let to_unit = |p: f64| 2.0 * p / SIDE as f64 - 1.0;
        let at = |o: i64, d: i64| to_unit((o + d) as f64 + half + 0.25);
        let a = extract_glimpse(&image, &Action::point(at(ox, 0), at(oy, 0), scale), &scales, 3, 0).unwrap();
        let b = extract_glimpse(&moved, &Action::point(at(ox, dx), at(oy, dy), scale), &scales, 3, 0).unwrap();
        prop_assert_eq!(a.patch, b.patch);
    }

    #[test]
    fn config_survives_toml_round_trip(
        seed in 0..=i64::MAX as u64,
        lr in 1e-6f64..1.0,
        samples in 1usize..10,
        glimpses in 1usize..8,
        temperature in 1.0f64..3.0,
    ) {
        let mut c = ExperimentConfig::default();
        c.seed = seed;
        c.train.lr = lr;
        c.train.samples = samples;
        c.model.glimpses = glimpses;
        c.exploration.temperature = temperature;
        let back = ExperimentConfig::from_toml_str(&c.to_toml(), &[]).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn unrepresentable_seed_is_a_config_error() {
    let c = ExperimentConfig {
        seed: u64::MAX,
        ..ExperimentConfig::default()
    };
    assert!(matches!(c.validate(), Err(wsram::Error::Config(_))));
}
