//! The identity suite run by `oracle-verify` and the acceptance tests.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::Serialize;

use super::{
    enumerate, estimator_expectation, exact_lm_bound, posterior_node_conditionals, tuple_expectation, Budget,
    EnumerationReport,
};
use crate::diffnet::{finite_difference_gradient, log_sum_exp};
use crate::error::Result;
use crate::estimators::{importance_weights, wake_q_coefficients, EstimatorTag};
use crate::glimpse::{sequence_choices, ToyWorld};
use crate::model::{GlimpseModel, Sampler, TabularModel, ThetaCoefficients};
use crate::rng::substream;

/// A deliberately injected bug, used to check that the suite can fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of the wake-q control-variate coefficient.
    WakeQControlVariateSign,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentityResult {
    pub identity: &'static str,
    pub world_seed: u64,
    pub passed: bool,
    pub error: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub base_seed: u64,
    pub worlds: usize,
    pub results: Vec<IdentityResult>,
}

#[derive(Debug, Clone, Serialize)]
struct IdentitySummary {
    identity: &'static str,
    checks: usize,
    passed: usize,
    max_error: f64,
    tolerance: f64,
    failing_seeds: Vec<u64>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.results.iter().all(|r| r.passed)
    }

    pub fn identities(&self) -> Vec<&'static str> {
        let mut seen = Vec::new();
        for r in &self.results {
            if !seen.contains(&r.identity) {
                seen.push(r.identity);
            }
        }
        seen
    }

    fn summaries(&self) -> Vec<IdentitySummary> {
        let mut by: BTreeMap<usize, IdentitySummary> = BTreeMap::new();
        let order = self.identities();
        for r in &self.results {
            let key = order.iter().position(|i| *i == r.identity).expect("listed");
            let s = by.entry(key).or_insert(IdentitySummary {
                identity: r.identity,
                checks: 0,
                passed: 0,
                max_error: 0.0,
                tolerance: r.tolerance,
                failing_seeds: Vec::new(),
            });
            s.checks += 1;
            s.max_error = s.max_error.max(r.error);
            if r.passed {
                s.passed += 1;
            } else if !s.failing_seeds.contains(&r.world_seed) {
                s.failing_seeds.push(r.world_seed);
            }
        }
        by.into_values().collect()
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "oracle identity suite: {} worlds from seed {}",
            self.worlds, self.base_seed
        );
        let _ = writeln!(
            out,
            "{:<32} {:>7} {:>12} {:>10}  {}",
            "identity", "checks", "max error", "tolerance", "result"
        );
        for s in self.summaries() {
            let verdict = if s.failing_seeds.is_empty() {
                "PASS".to_string()
            } else {
                format!("FAIL (world seeds {:?})", s.failing_seeds)
            };
            let _ = writeln!(
                out,
                "{:<32} {:>7} {:>12.3e} {:>10.0e}  {}",
                s.identity, s.checks, s.max_error, s.tolerance, verdict
            );
        }
        let _ = writeln!(
            out,
            "{}",
            if self.all_passed() {
                "ALL PASS"
            } else {
                "FAILURES PRESENT"
            }
        );
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            base_seed: u64,
            worlds: usize,
            all_passed: bool,
            identities: Vec<IdentitySummary>,
            results: &'a [IdentityResult],
        }
        serde_json::to_string_pretty(&Summary {
            base_seed: self.base_seed,
            worlds: self.worlds,
            all_passed: self.all_passed(),
            identities: self.summaries(),
            results: &self.results,
        })
        .expect("report serializes")
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// ∞-norm error of `analytic` relative to `max(‖fd‖∞, 1e-6)`.
pub(crate) fn fd_relative_error(analytic: &[f64], fd: &[f64]) -> f64 {
    max_abs_diff(analytic, fd) / max_abs(fd).max(1e-6)
}

/// Random world drawn from `seed`, small enough for 3-tuples.
pub fn random_world(seed: u64) -> (ToyWorld, usize) {
    let mut rng = substream(seed, "oracle-world", 0);
    let cells = rng.random_range(2..=3);
    let scales = rng.random_range(1..=2);
    let classes = rng.random_range(2..=3);
    let glimpses = if cells * scales <= 4 {
        rng.random_range(1..=2)
    } else {
        1
    };
    let spread = rng.random_range(0.5..2.0);
    let world = ToyWorld::random(cells, scales, glimpses, classes, spread, seed).expect("valid random world");
    let label = rng.random_range(0..classes);
    (world, label)
}

struct Checker<'a> {
    seed: u64,
    out: &'a mut Vec<IdentityResult>,
}

impl Checker<'_> {
    fn check(&mut self, identity: &'static str, error: f64, tolerance: f64) {
        self.out.push(IdentityResult {
            identity,
            world_seed: self.seed,
            passed: error <= tolerance,
            error,
            tolerance,
        });
    }
}

fn table_marginal(world: &ToyWorld, label: usize) -> f64 {
    let b = world.branching();
    let n = world.glimpses();
    let total: f64 = (0..b.pow(n as u32))
        .map(|code| {
            let c = sequence_choices(b, n, code);
            world.table_prior(&c) * world.table_likelihood(&c, label)
        })
        .sum();
    total.ln()
}

fn posterior_model(
    model: &TabularModel,
    world: &ToyWorld,
    label: usize,
    report: &EnumerationReport,
) -> Result<TabularModel> {
    let mut q = model.clone();
    let rows = posterior_node_conditionals(report, world.branching(), world.glimpses());
    for (node, row) in rows.iter().enumerate() {
        q.set_proposal(label, node, row)?;
    }
    Ok(q)
}

fn check_world(seed: u64, fault: Option<Fault>, out: &mut Vec<IdentityResult>) -> Result<()> {
    let (world, label) = random_world(seed);
    let model = TabularModel::from_world(&world);
    let budget = Budget::default();
    let mut c = Checker { seed, out };
    let report = enumerate(&model, &world, label, &budget)?;

    let prior_total: f64 = report.sequences.iter().map(|s| s.prior).sum();
    let post_total: f64 = report.sequences.iter().map(|s| s.posterior).sum();
    c.check(
        "probability-normalization",
        (prior_total - 1.0).abs().max((post_total - 1.0).abs()),
        1e-12,
    );
    c.check(
        "marginal-matches-tables",
        (report.log_marginal - table_marginal(&world, label)).abs(),
        1e-12,
    );
    let reversed: Vec<f64> = report
        .sequences
        .iter()
        .rev()
        .map(|s| s.trajectory.log_prior + s.trajectory.log_likelihood)
        .collect();
    c.check(
        "enumeration-order-invariance",
        (log_sum_exp(&reversed) - report.log_marginal).abs(),
        1e-12,
    );

    // Σ_a q(a)·(p(a)/q(a))·∇θ log p(a) = 0
    let mut prior_score = vec![0.0; model.theta().len()];
    for s in &report.sequences {
        let t = &s.trajectory;
        let coef = t.log_inference.exp() * (t.log_prior - t.log_inference).exp();
        model.backward_theta(&world, t, &ThetaCoefficients::new(0.0, coef), &mut prior_score)?;
    }
    c.check("prior-score-identity", max_abs(&prior_score), 1e-10);
    let mut q_score = vec![0.0; model.eta().len()];
    for s in &report.sequences {
        model.backward_eta(&world, &s.trajectory, s.trajectory.log_inference.exp(), &mut q_score)?;
    }
    c.check("proposal-score-identity", max_abs(&q_score), 1e-10);

    let f = report.variational_bound;
    let l = report.log_marginal;
    let mut ordering: f64 = 0.0;
    let mut monotone: f64 = 0.0;
    for sampler in [Sampler::Prior, Sampler::Inference] {
        let mut prev = f64::NEG_INFINITY;
        for m in 1..=3 {
            let lm = exact_lm_bound(&model, &world, label, sampler, m, &budget)?;
            if sampler == Sampler::Prior {
                ordering = ordering.max(f - lm).max(lm - l);
            } else {
                ordering = ordering.max(lm - l);
            }
            monotone = monotone.max(prev - lm);
            prev = lm;
        }
    }
    c.check("bound-ordering", ordering.max(0.0), 1e-12);
    c.check("lm-nondecreasing-in-m", monotone.max(0.0), 1e-12);

    for m in [2, 3] {
        let plain = estimator_expectation(&model, &world, label, EstimatorTag::WakeQ, m, 0.0, &budget)?;
        let cv = match fault {
            None => estimator_expectation(&model, &world, label, EstimatorTag::WakeQCv, m, 0.0, &budget)?,
            Some(Fault::WakeQControlVariateSign) => {
                tuple_expectation(&model, &world, label, Sampler::Inference, m, &budget, |tuple| {
                    let w = importance_weights(tuple)?;
                    let mut grad = vec![0.0; model.eta().len()];
                    for (t, k) in tuple.iter().zip(wake_q_coefficients(&w, true)) {
                        model.backward_eta(&world, t, -k, &mut grad)?;
                    }
                    Ok(grad)
                })?
            }
        };
        c.check("wake-q-cv-expectation", max_abs_diff(&plain, &cv), 1e-10);
    }

    let exact_grad = super::exact_grad_marginal(&model, &world, label)?;
    let q_post = posterior_model(&model, &world, label, &report)?;
    for m in 1..=3 {
        let e = estimator_expectation(&q_post, &world, label, EstimatorTag::WsramQ, m, 0.0, &budget)?;
        c.check("wsram-posterior-proposal-exact", max_abs_diff(&e, &exact_grad), 1e-10);
    }
    let post_report = enumerate(&q_post, &world, label, &budget)?;
    c.check("kl-gibbs", (-report.kl).max(post_report.kl.abs()).max(0.0), 1e-12);

    let (_, exact_f_grad) = super::exact_variational_bound_and_grad(&model, &world, label)?;
    for m in 1..=2 {
        let e = estimator_expectation(&model, &world, label, EstimatorTag::Var, m, 0.0, &budget)?;
        c.check("var-expectation-exact", max_abs_diff(&e, &exact_f_grad), 1e-10);
    }

    let fd_step = 1e-5;
    let mut probe = model.clone();
    let fd = finite_difference_gradient(
        |v| {
            probe.theta_mut().values_mut().copy_from_slice(v);
            enumerate(&probe, &world, label, &budget)
                .map(|r| r.log_marginal)
                .unwrap_or(f64::NAN)
        },
        model.theta(),
        fd_step,
    )?;
    c.check(
        "marginal-grad-finite-difference",
        fd_relative_error(&exact_grad, &fd),
        1e-6,
    );
    let mut probe = model.clone();
    let fd = finite_difference_gradient(
        |v| {
            probe.theta_mut().values_mut().copy_from_slice(v);
            enumerate(&probe, &world, label, &budget)
                .map(|r| r.variational_bound)
                .unwrap_or(f64::NAN)
        },
        model.theta(),
        fd_step,
    )?;
    c.check(
        "bound-grad-finite-difference",
        fd_relative_error(&exact_f_grad, &fd),
        1e-6,
    );
    let kl_grad = super::exact_kl_grad(&model, &world, label)?;
    let mut probe = model.clone();
    let fd = finite_difference_gradient(
        |v| {
            probe.eta_mut().values_mut().copy_from_slice(v);
            enumerate(&probe, &world, label, &budget)
                .map(|r| r.kl)
                .unwrap_or(f64::NAN)
        },
        model.eta(),
        fd_step,
    )?;
    c.check("kl-grad-finite-difference", fd_relative_error(&kl_grad, &fd), 1e-6);
    Ok(())
}

/// Runs every identity on `worlds` random toy worlds seeded
/// `base_seed, base_seed + 1, …`.
pub fn run_identity_suite(worlds: usize, base_seed: u64, fault: Option<Fault>) -> Result<SuiteReport> {
    let mut results = Vec::new();
    for i in 0..worlds as u64 {
        check_world(base_seed + i, fault, &mut results)?;
    }
    Ok(SuiteReport {
        base_seed,
        worlds,
        results,
    })
}
