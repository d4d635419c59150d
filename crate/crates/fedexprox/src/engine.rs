//! The extrapolated proximal iteration loop.
//!
//! Each round the server broadcasts the iterate, a (possibly sampled) set of
//! clients returns approximate proximal points, and the server moves by
//! `x + alpha (mean(points) - x)`. The update is algebraically SGD on the
//! scaled averaged Moreau envelope with a biased gradient estimator; test
//! builds assert that identity at every step.

use rand::seq::index::sample as sample_indices;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::moreau::EnvelopeContext;
use crate::problem::FederatedProblem;
use crate::prox::{InexactnessSpec, ProxResult};
use crate::rng::{substream, Domain};
use crate::theory::{self, ProblemConstants};

/// Divergence guard: a run is flagged once the squared distance to the
/// minimizer exceeds this multiple of its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e12;

/// Server extrapolation rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExtrapolationPolicy {
    /// Fixed extrapolation parameter.
    Constant(f64),
    /// `1 / (gamma L_gamma)`, the largest extrapolation for exact evaluation.
    TheoryExact,
    /// `1 / (4 gamma L_gamma)`, optimal under absolute inexactness.
    TheoryAbsolute,
    /// Largest admissible extrapolation of the biased-SGD relative analysis.
    TheoryRelativeSgd,
    /// Largest extrapolation of the biased-compression relative analysis
    /// (same as the exact one, subject to admissibility).
    TheoryRelativeCompression,
    /// Largest admissible extrapolation for tau-nice sampling.
    TheoryMinibatch,
    /// Adaptive rule scaling with the diversity ratio of the observed
    /// client displacements.
    GradientDiversity,
    /// Adaptive rule of Polyak type built from observed envelope values.
    Polyak,
}

impl ExtrapolationPolicy {
    pub fn is_adaptive(&self) -> bool {
        matches!(
            self,
            ExtrapolationPolicy::GradientDiversity | ExtrapolationPolicy::Polyak
        )
    }

    /// Resolves the constant extrapolation parameter for non-adaptive kinds;
    /// `None` for adaptive rules. Theory kinds take the inexactness level
    /// from the run's oracle spec and validate admissibility.
    pub fn constant_alpha(
        &self,
        consts: &ProblemConstants,
        spec: &InexactnessSpec,
    ) -> Result<Option<f64>> {
        match self {
            ExtrapolationPolicy::Constant(a) => {
                if !(a.is_finite() && *a > 0.0) {
                    return Err(Error::invalid("alpha", "must be positive and finite"));
                }
                Ok(Some(*a))
            }
            ExtrapolationPolicy::TheoryExact => Ok(Some(theory::alpha_exact(consts))),
            ExtrapolationPolicy::TheoryAbsolute => Ok(Some(theory::alpha_absolute(consts))),
            ExtrapolationPolicy::TheoryRelativeSgd => {
                Ok(Some(theory::alpha_relative_sgd(consts, spec.eps2())?))
            }
            ExtrapolationPolicy::TheoryRelativeCompression => {
                // Validates admissibility for the compression regime.
                theory::contraction_relative_compression(consts, spec.eps2())?;
                Ok(Some(theory::alpha_exact(consts)))
            }
            ExtrapolationPolicy::TheoryMinibatch => {
                Ok(Some(theory::alpha_minibatch(consts, spec.eps2())?))
            }
            ExtrapolationPolicy::GradientDiversity | ExtrapolationPolicy::Polyak => Ok(None),
        }
    }
}

/// Full description of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub gamma: f64,
    /// Number of server iterations `K`.
    pub iterations: usize,
    /// Clients sampled per round; `n` means full participation.
    pub tau: usize,
    pub spec: InexactnessSpec,
    pub policy: ExtrapolationPolicy,
    pub x0: Vector,
    pub seed: u64,
}

/// What the server did at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub alpha: f64,
    /// Sampled client indices in increasing order.
    pub sampled: Vec<usize>,
    /// Total local solver iterations across the sampled clients.
    pub local_iters: usize,
    /// Norm of the mean approximation bias `mean(point - exact)`.
    pub bias_norm: f64,
}

/// State metrics at one iterate, plus the step taken from it (absent on the
/// final record).
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub sq_dist: f64,
    pub envelope_gap: f64,
    /// `||gamma grad M(x)||` over all clients.
    pub grad_norm: f64,
    pub step: Option<StepRecord>,
}

/// Per-iteration trace of one run; `records` has one entry per visited
/// iterate including the initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub records: Vec<IterationRecord>,
    pub final_x: Vector,
    /// Iteration at which the divergence guard tripped, if any.
    pub diverged_at: Option<usize>,
}

impl RunTrace {
    pub fn is_diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn initial_gap(&self) -> f64 {
        self.records[0].envelope_gap
    }

    pub fn final_sq_dist(&self) -> f64 {
        self.records.last().expect("trace has records").sq_dist
    }
}

/// A run bound to its envelope context with the policy resolved.
#[derive(Debug)]
pub struct Simulation<'a, 'p> {
    ctx: &'a EnvelopeContext<'p>,
    config: RunConfig,
    consts: ProblemConstants,
    fixed_alpha: Option<f64>,
}

impl<'a, 'p> Simulation<'a, 'p> {
    pub fn new(ctx: &'a EnvelopeContext<'p>, config: RunConfig) -> Result<Self> {
        config.spec.validate()?;
        let problem = ctx.problem();
        if config.gamma != ctx.gamma() {
            return Err(Error::invalid("gamma", "differs from the envelope context"));
        }
        if config.x0.len() != problem.dim() {
            return Err(Error::DimensionMismatch {
                expected: problem.dim(),
                got: config.x0.len(),
            });
        }
        if config.tau == 0 || config.tau > problem.n_clients() {
            return Err(Error::invalid(
                "tau",
                format!("need 1 <= tau <= n = {}", problem.n_clients()),
            ));
        }
        let consts = ProblemConstants::new(
            problem.mu(),
            problem.l_max(),
            ctx.l_gamma(),
            config.gamma,
            problem.n_clients(),
            config.tau,
        )?;
        let fixed_alpha = config.policy.constant_alpha(&consts, &config.spec)?;
        Ok(Simulation {
            ctx,
            config,
            consts,
            fixed_alpha,
        })
    }

    pub fn constants(&self) -> &ProblemConstants {
        &self.consts
    }

    fn problem(&self) -> &'p FederatedProblem {
        self.ctx.problem()
    }

    /// One server round from `x`, returning the next iterate and the record
    /// of what happened.
    pub fn step(&self, k: usize, x: &Vector) -> Result<(Vector, StepRecord)> {
        let n = self.problem().n_clients();
        let tau = self.config.tau;
        let sampled: Vec<usize> = if tau == n {
            (0..n).collect()
        } else {
            let mut rng = substream(self.config.seed, Domain::Sampling, k as u64, 0);
            let mut idx = sample_indices(&mut rng, n, tau).into_vec();
            // Results are reduced in client-index order.
            idx.sort_unstable();
            idx
        };

        let mut results: Vec<ProxResult> = Vec::with_capacity(tau);
        for &i in &sampled {
            let mut rng = substream(self.config.seed, Domain::Injection, k as u64, i as u64);
            results.push(self.ctx.kernel().evaluate(&self.config.spec, i, x, &mut rng)?);
        }

        let alpha = match self.fixed_alpha {
            Some(a) => a,
            None => self.adaptive_alpha(k, x, &sampled, &results)?,
        };

        let mean_point = Vector::mean(results.iter().map(|r| &r.point));
        let mut next = x.clone();
        next.add_scaled(alpha, &(&mean_point - x));

        #[cfg(debug_assertions)]
        self.assert_estimator_identity(x, alpha, &sampled, &results, &next);

        let inv = 1.0 / tau as f64;
        let mut bias = Vector::zeros(x.len());
        let mut local_iters = 0;
        for r in &results {
            bias.add_scaled(inv, &(&r.point - &r.exact_point));
            local_iters += r.local_iters;
        }
        Ok((
            next,
            StepRecord {
                alpha,
                sampled,
                local_iters,
                bias_norm: bias.norm(),
            },
        ))
    }

    /// Adaptive extrapolation from the round's observed approximations (not
    /// the unobservable exact points).
    fn adaptive_alpha(
        &self,
        k: usize,
        x: &Vector,
        sampled: &[usize],
        results: &[ProxResult],
    ) -> Result<f64> {
        let m = results.len() as f64;
        let gamma = self.config.gamma;
        match self.config.policy {
            ExtrapolationPolicy::GradientDiversity => {
                let mut mean_disp = Vector::zeros(x.len());
                let mut mean_sq = 0.0;
                for r in results {
                    let disp = x - &r.point;
                    mean_sq += disp.norm_sq() / m;
                    mean_disp.add_scaled(1.0 / m, &disp);
                }
                let den = mean_disp.norm_sq();
                if den <= 0.0 {
                    return Err(Error::DegenerateStep { iter: k });
                }
                let gl = gamma * self.consts.l_max;
                Ok((1.0 + gl) / gl * mean_sq / den)
            }
            ExtrapolationPolicy::Polyak => {
                // Observed per-client envelope values over their infimum
                // (zero by problem normalization), divided by
                // gamma ||mean observed envelope gradient||^2.
                let mut numerator = 0.0;
                let mut mean_disp = Vector::zeros(x.len());
                for (r, &i) in results.iter().zip(sampled) {
                    let value = self.problem().value_client(i, &r.point)?
                        + x.dist_sq(&r.point) / (2.0 * gamma);
                    numerator += (value - self.ctx.m_inf()) / m;
                    mean_disp.add_scaled(1.0 / m, &(x - &r.point));
                }
                let denominator = mean_disp.norm_sq() / gamma;
                if denominator <= 0.0 {
                    return Err(Error::DegenerateStep { iter: k });
                }
                Ok(numerator / denominator)
            }
            _ => unreachable!("constant policies are resolved at construction"),
        }
    }

    /// The broadcast update must equal a biased-SGD step on the scaled
    /// averaged envelope: `x - alpha g` with
    /// `g = mean(gamma grad M_i(x)) - mean(point_i - prox_i)`.
    #[cfg(debug_assertions)]
    fn assert_estimator_identity(
        &self,
        x: &Vector,
        alpha: f64,
        sampled: &[usize],
        results: &[ProxResult],
        next: &Vector,
    ) {
        let m = sampled.len() as f64;
        let gamma = self.config.gamma;
        let mut g = Vector::zeros(x.len());
        for (&i, r) in sampled.iter().zip(results) {
            let env_grad = self
                .ctx
                .envelope_grad(i, x)
                .expect("envelope gradient for identity check");
            g.add_scaled(gamma / m, &env_grad);
            g.add_scaled(-1.0 / m, &(&r.point - &r.exact_point));
        }
        let mut alt = x.clone();
        alt.add_scaled(-alpha, &g);
        let diff = alt.dist_sq(next).sqrt();
        let scale = 1.0 + x.norm() + alpha.abs() * g.norm();
        debug_assert!(
            diff <= 1e-12 * scale,
            "update rule and biased estimator disagree: {diff:e} (scale {scale:e})"
        );
    }

    /// Executes the configured number of iterations, recording one entry per
    /// visited iterate. The run halts early with a divergence flag when the
    /// squared distance to the minimizer explodes or stops being finite.
    pub fn run(&self) -> Result<RunTrace> {
        let x_star = self.problem().x_star();
        let mut records = Vec::with_capacity(self.config.iterations + 1);
        let mut x = self.config.x0.clone();
        let initial_sq = x.dist_sq(x_star);
        let guard = DIVERGENCE_FACTOR
            * initial_sq.max(f64::EPSILON * (1.0 + x_star.norm_sq()));
        let mut diverged_at = None;

        for k in 0..self.config.iterations {
            let metrics = self.ctx.metrics(&x)?;
            let (next, step) = self.step(k, &x)?;
            records.push(IterationRecord {
                sq_dist: x.dist_sq(x_star),
                envelope_gap: metrics.gap,
                grad_norm: metrics.grad_norm,
                step: Some(step),
            });
            x = next;
            let sq = if x.is_finite() {
                x.dist_sq(x_star)
            } else {
                f64::INFINITY
            };
            if !sq.is_finite() || sq > guard {
                let (gap, grad_norm) = if x.is_finite() {
                    match self.ctx.metrics(&x) {
                        Ok(m) => (m.gap, m.grad_norm),
                        Err(_) => (f64::INFINITY, f64::INFINITY),
                    }
                } else {
                    (f64::INFINITY, f64::INFINITY)
                };
                records.push(IterationRecord {
                    sq_dist: sq,
                    envelope_gap: gap,
                    grad_norm,
                    step: None,
                });
                diverged_at = Some(k + 1);
                break;
            }
        }

        if diverged_at.is_none() {
            let metrics = self.ctx.metrics(&x)?;
            records.push(IterationRecord {
                sq_dist: x.dist_sq(x_star),
                envelope_gap: metrics.gap,
                grad_norm: metrics.grad_norm,
                step: None,
            });
        }
        Ok(RunTrace {
            records,
            final_x: x,
            diverged_at,
        })
    }
}

/// Builds the envelope context for `config.gamma` and executes the run.
pub fn run(config: &RunConfig, problem: &FederatedProblem) -> Result<RunTrace> {
    let ctx = EnvelopeContext::new(problem, config.gamma)?;
    Simulation::new(&ctx, config.clone())?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Spectrum;
    use crate::prox::prox_exact;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn problem(n: usize, d: usize, seed: u64) -> FederatedProblem {
        FederatedProblem::generate_interpolated(n, d, seed, Spectrum::new(0.0, 8.0, 0.7).unwrap())
            .unwrap()
    }

    fn start_point(d: usize, seed: u64) -> Vector {
        let mut rng = substream(seed, Domain::Start, 0, 0);
        Vector::from_fn(d, |_| rng.sample(StandardNormal))
    }

    fn config(p: &FederatedProblem, gamma: f64, k: usize) -> RunConfig {
        RunConfig {
            gamma,
            iterations: k,
            tau: p.n_clients(),
            spec: InexactnessSpec::Exact,
            policy: ExtrapolationPolicy::TheoryExact,
            x0: start_point(p.dim(), 5),
            seed: 11,
        }
    }

    #[test]
    fn single_client_unit_alpha_is_proximal_point_method() {
        let p = problem(1, 6, 3);
        let mut cfg = config(&p, 0.7, 1);
        cfg.policy = ExtrapolationPolicy::Constant(1.0);
        let trace = run(&cfg, &p).unwrap();
        let expected = prox_exact(p.client(0), &cfg.x0, 0.7).unwrap();
        assert!(trace.final_x.dist_sq(&expected) <= 1e-24);
    }

    #[test]
    fn minimizer_is_a_fixed_point() {
        let p = problem(4, 8, 9);
        let mut cfg = config(&p, 1.0, 3);
        cfg.x0 = p.x_star().clone();
        let trace = run(&cfg, &p).unwrap();
        assert!(trace.final_x.dist_sq(p.x_star()) <= 1e-18);
        assert!(!trace.is_diverged());
    }

    #[test]
    fn displacement_is_parallel_to_mean_prox_direction() {
        let p = problem(5, 7, 13);
        let gamma = 0.4;
        for alpha in [0.5, 1.0, 2.5] {
            let mut cfg = config(&p, gamma, 1);
            cfg.policy = ExtrapolationPolicy::Constant(alpha);
            let trace = run(&cfg, &p).unwrap();
            let mean_prox = Vector::mean(
                (0..p.n_clients())
                    .map(|i| prox_exact(p.client(i), &cfg.x0, gamma).unwrap())
                    .collect::<Vec<_>>()
                    .iter(),
            );
            let mut expected = cfg.x0.clone();
            expected.add_scaled(alpha, &(&mean_prox - &cfg.x0));
            assert!(trace.final_x.dist_sq(&expected).sqrt() <= 1e-12);
        }
    }

    #[test]
    fn zero_iterations_gives_single_record() {
        let p = problem(3, 5, 1);
        let trace = run(&config(&p, 1.0, 0), &p).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert!(trace.records[0].step.is_none());
        assert_eq!(trace.final_x, config(&p, 1.0, 0).x0);
    }

    #[test]
    fn trace_has_one_record_per_visited_iterate() {
        let p = problem(3, 5, 2);
        let trace = run(&config(&p, 1.0, 17), &p).unwrap();
        assert_eq!(trace.records.len(), 18);
        for rec in &trace.records[..17] {
            assert!(rec.step.is_some());
            assert!(rec.sq_dist.is_finite() && rec.envelope_gap.is_finite());
        }
        assert!(trace.records[17].step.is_none());
    }

    #[test]
    fn exact_mode_envelope_gap_is_nonincreasing() {
        let p = problem(6, 10, 21);
        let trace = run(&config(&p, 0.5, 150), &p).unwrap();
        let floor = 1e-15 * trace.initial_gap();
        let mut last = f64::INFINITY;
        for rec in &trace.records {
            assert!(rec.envelope_gap <= last * (1.0 + 1e-9) + floor);
            last = rec.envelope_gap;
        }
    }

    #[test]
    fn absolute_injection_plateaus_above_exact_run() {
        let p = problem(4, 8, 31);
        let gamma = 1.0;
        let k = 400;
        let exact = run(&config(&p, gamma, k), &p).unwrap();
        let mut cfg = config(&p, gamma, k);
        cfg.spec = InexactnessSpec::AbsoluteInjected(1e-3);
        cfg.policy = ExtrapolationPolicy::TheoryAbsolute;
        let inexact = run(&cfg, &p).unwrap();
        assert!(exact.final_sq_dist() <= 1e-16);
        assert!(inexact.final_sq_dist() > 1e-9, "no plateau: {}", inexact.final_sq_dist());
        assert!(!inexact.is_diverged());
    }

    #[test]
    fn theory_alpha_values_match_formulas() {
        let c = ProblemConstants::new(1.0, 4.0, 2.0, 0.1, 3, 3).unwrap();
        let spec = InexactnessSpec::Exact;
        let a = ExtrapolationPolicy::TheoryExact
            .constant_alpha(&c, &spec)
            .unwrap()
            .unwrap();
        assert!((a - 5.0).abs() <= 1e-12);
        let a = ExtrapolationPolicy::TheoryAbsolute
            .constant_alpha(&c, &spec)
            .unwrap()
            .unwrap();
        assert!((a - 1.25).abs() <= 1e-12);
        assert!(ExtrapolationPolicy::GradientDiversity
            .constant_alpha(&c, &spec)
            .unwrap()
            .is_none());
    }

    #[test]
    fn inadmissible_relative_policy_is_rejected() {
        let p = problem(4, 6, 41);
        let mut cfg = config(&p, 1.0, 5);
        cfg.spec = InexactnessSpec::RelativeInjected(0.9);
        cfg.policy = ExtrapolationPolicy::TheoryRelativeSgd;
        let ctx = EnvelopeContext::new(&p, 1.0).unwrap();
        let err = Simulation::new(&ctx, cfg).unwrap_err();
        assert!(matches!(err, Error::InadmissibleInexactness { .. }));
    }

    #[test]
    fn diversity_alpha_with_single_client_hits_ratio_one() {
        // One client: the diversity ratio is exactly 1, so
        // alpha = (1 + gamma l_max) / (gamma l_max).
        let p = problem(1, 5, 51);
        let gamma = 0.8;
        let mut cfg = config(&p, gamma, 1);
        cfg.policy = ExtrapolationPolicy::GradientDiversity;
        cfg.spec = InexactnessSpec::Exact;
        let trace = run(&cfg, &p).unwrap();
        let gl = gamma * p.l_max();
        let alpha = trace.records[0].step.as_ref().unwrap().alpha;
        assert!(
            (alpha - (1.0 + gl) / gl).abs() <= 1e-9 * alpha,
            "alpha {alpha}"
        );
    }

    #[test]
    fn sampling_is_uniform_without_replacement() {
        let p = problem(10, 4, 61);
        let mut cfg = config(&p, 1.0, 2000);
        cfg.tau = 3;
        cfg.policy = ExtrapolationPolicy::Constant(1.0);
        let trace = run(&cfg, &p).unwrap();
        let mut counts = vec![0usize; 10];
        let mut rounds = 0usize;
        for rec in &trace.records {
            if let Some(step) = &rec.step {
                assert_eq!(step.sampled.len(), 3);
                let mut sorted = step.sampled.clone();
                sorted.dedup();
                assert_eq!(sorted.len(), 3, "replacement in {:?}", step.sampled);
                for &i in &step.sampled {
                    counts[i] += 1;
                }
                rounds += 1;
            }
        }
        let expectation = rounds as f64 * 0.3;
        let sigma = (rounds as f64 * 0.3 * 0.7).sqrt();
        for (i, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - expectation).abs() <= 3.0 * sigma,
                "client {i} sampled {c} times (expected {expectation} +- {sigma})"
            );
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let p = problem(5, 6, 71);
        let mut cfg = config(&p, 0.3, 40);
        cfg.tau = 2;
        cfg.spec = InexactnessSpec::RelativeInjected(1e-3);
        cfg.policy = ExtrapolationPolicy::Constant(1.2);
        let a = run(&cfg, &p).unwrap();
        let b = run(&cfg, &p).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn update_matches_biased_estimator_route() {
        // Recompute x_{k+1} = x_k - alpha g(x_k) independently and compare.
        let p = problem(4, 6, 81);
        let gamma = 0.9;
        let ctx = EnvelopeContext::new(&p, gamma).unwrap();
        let mut cfg = config(&p, gamma, 6);
        cfg.spec = InexactnessSpec::AbsoluteInjected(1e-4);
        cfg.policy = ExtrapolationPolicy::Constant(1.5);
        let sim = Simulation::new(&ctx, cfg.clone()).unwrap();
        let mut x = cfg.x0.clone();
        for k in 0..cfg.iterations {
            let (next, step) = sim.step(k, &x).unwrap();
            let mut g = Vector::zeros(x.len());
            for &i in &step.sampled {
                let mut rng = substream(cfg.seed, Domain::Injection, k as u64, i as u64);
                let r = ctx.kernel().evaluate(&cfg.spec, i, &x, &mut rng).unwrap();
                let scaled_grad = &ctx.envelope_grad(i, &x).unwrap() * gamma;
                g.add_scaled(
                    1.0 / step.sampled.len() as f64,
                    &(&scaled_grad - &(&r.point - &r.exact_point)),
                );
            }
            let mut alt = x.clone();
            alt.add_scaled(-step.alpha, &g);
            assert!(alt.dist_sq(&next).sqrt() <= 1e-12 * (1.0 + next.norm()));
            x = next;
        }
    }

    #[test]
    fn runaway_constant_alpha_trips_divergence_guard() {
        let p = problem(4, 6, 91);
        let mut cfg = config(&p, 1.0, 500);
        cfg.policy = ExtrapolationPolicy::Constant(1e7);
        let trace = run(&cfg, &p).unwrap();
        assert!(trace.is_diverged());
        let at = trace.diverged_at.unwrap();
        assert!(at >= 1 && at <= 500);
        assert_eq!(trace.records.len(), at + 1);
        assert!(trace.records.last().unwrap().step.is_none());
    }
}
