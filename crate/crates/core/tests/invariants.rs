use wsram::diffnet::{DistributionParams, Sample};
use wsram::estimators::EstimatorTag;
use wsram::glimpse::{
    generate_translated_scaled, glyph_digits, ActionSpace, DigitPlacer, GlimpseSensor, Image, ToyWorld,
};
use wsram::model::{AttentionModel, GlimpseModel, ModelShape, TabularModel};
use wsram::oracle::{estimator_expectation, exact_grad_marginal, Budget};
use wsram::rng::substream;

/// Five-point Gauss–Legendre rule on [-1, 1].
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

fn composite_gl(f: impl Fn(f64) -> f64, lo: f64, hi: f64, panels: usize) -> f64 {
    let h = (hi - lo) / panels as f64;
    (0..panels)
        .map(|i| {
            let mid = lo + (i as f64 + 0.5) * h;
            GL5.iter().map(|(x, w)| w * f(mid + 0.5 * h * x)).sum::<f64>() * 0.5 * h
        })
        .sum()
}

#[test]
fn gaussian_density_integrates_to_one() {
    for (mean, log_std) in [(0.0, 0.0), (0.7, 0.1f64.ln()), (-2.0, 1.5f64.ln())] {
        let d = DistributionParams::gaussian(vec![mean], vec![log_std]);
        let s = f64::exp(log_std);
        let mass = composite_gl(
            |x| d.log_prob(&Sample::Point(vec![x])).unwrap().exp(),
            mean - 8.0 * s,
            mean + 8.0 * s,
            64,
        );
        assert!((mass - 1.0).abs() < 1e-6, "{mass}");
    }
}

/// Mean log-probability of draws is the negated entropy, within 3 standard
/// errors.
#[test]
fn samples_agree_with_log_prob() {
    let heads = [
        DistributionParams::categorical(vec![0.3, -1.2, 2.0, 0.0]),
        DistributionParams::gaussian(vec![0.2, -0.4], vec![0.1f64.ln(), 0.5f64.ln()]),
    ];
    for (k, d) in heads.iter().enumerate() {
        let mut rng = substream(17, "consistency", k as u64);
        let n = 100_000;
        let lps: Vec<f64> = (0..n).map(|_| d.log_prob(&d.sample(&mut rng)).unwrap()).collect();
        let mean = lps.iter().sum::<f64>() / n as f64;
        let var = lps.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean + d.entropy()).abs() < 3.0 * se,
            "head {k}: {mean} vs {}",
            -d.entropy()
        );
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn mimicking_proposal_matches_prior_in_distribution() {
    let mut rng = substream(5, "ks-image", 0);
    let pixels: Vec<f64> = (0..24 * 24).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
    let image = Image::new(24, 24, pixels).unwrap();
    let sensor = GlimpseSensor {
        scales: vec![6, 12],
        retina: 3,
        low_res_side: 4,
        grid: None,
    };
    let env = sensor.env(&image).unwrap();
    let shape = ModelShape {
        action_space: ActionSpace::Continuous { scales: 2 },
        context_dim: 16,
        glimpse_dim: 9,
        bottom_width: 8,
        top_width: 6,
        inference_width: 6,
        classes: 4,
        glimpses: 3,
        location_log_std: 0.3f64.ln(),
    };
    let mut model = AttentionModel::new(shape, 9).unwrap();
    model.mimic_prior_with_inference().unwrap();
    let n = 10_000;
    let mut rp = substream(5, "ks-prior", 0);
    let mut rq = substream(5, "ks-proposal", 0);
    let prior: Vec<f64> = (0..n)
        .map(|_| model.rollout_prior(&env, 1, &mut rp).unwrap().log_likelihood)
        .collect();
    let proposal: Vec<f64> = (0..n)
        .map(|_| model.rollout_proposal(&env, 1, &mut rq).unwrap().log_likelihood)
        .collect();
    let d = ks_statistic(prior, proposal);
    // α = 0.01 critical value for equal sample sizes
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} ≥ {critical}");
}

#[test]
fn generated_labels_are_uniform() {
    let placer = DigitPlacer::new(28, (1.0, 1.5)).unwrap();
    // the command-line default seed
    let examples = generate_translated_scaled(&glyph_digits(5, 2), &placer, 10_000, 1).unwrap();
    let mut counts = [0usize; 10];
    examples.iter().for_each(|e| counts[e.label] += 1);
    // binomial(10⁴, 0.1): mean 1000, σ = 30
    for (class, &c) in counts.iter().enumerate() {
        assert!((c as f64 - 1000.0).abs() <= 90.0, "class {class}: {c}");
    }
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi2 < 27.88, "χ²(9) = {chi2}"); // α = 0.001
}

#[test]
fn wsram_bias_shrinks_with_samples() {
    let world = ToyWorld::fixture();
    let model = TabularModel::from_world(&world);
    let exact = exact_grad_marginal(&model, &world, 0).unwrap();
    for tag in [EstimatorTag::Wsram, EstimatorTag::WsramQ] {
        let bias: Vec<f64> = [1, 2, 3, 5]
            .iter()
            .map(|&m| {
                let e = estimator_expectation(&model, &world, 0, tag, m, 0.0, &Budget::default()).unwrap();
                e.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
            })
            .collect();
        assert!(bias.windows(2).all(|w| w[1] < w[0]), "{tag}: {bias:?}");
    }
}
