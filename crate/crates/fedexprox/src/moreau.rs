//! Moreau-envelope analytics.
//!
//! The envelope of client `i` at step `gamma` is
//! `M_i(x) = f_i(prox_i(x)) + ||x - prox_i(x)||^2 / (2 gamma)` with gradient
//! `(x - prox_i(x)) / gamma`. Problems are normalized so that every client
//! vanishes at the shared minimizer, which pins the infimum of the averaged
//! envelope at zero and makes the envelope gap an exactly computable
//! convergence metric.

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::problem::FederatedProblem;
use crate::prox::ProxKernel;

/// Envelope analytics bound to one problem and step size, sharing the cached
/// proximal factors.
#[derive(Debug)]
pub struct EnvelopeContext<'a> {
    kernel: ProxKernel<'a>,
    l_gamma: f64,
    m_inf: f64,
}

/// Scalar diagnostics of one iterate, computed in a single pass over clients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeMetrics {
    /// Envelope gap `gamma M(x) - gamma M_inf`.
    pub gap: f64,
    /// Norm of the scaled envelope gradient, `||gamma grad M(x)||`.
    pub grad_norm: f64,
}

impl<'a> EnvelopeContext<'a> {
    pub fn new(problem: &'a FederatedProblem, gamma: f64) -> Result<Self> {
        let smoothness = problem.moreau_smoothness(gamma)?;
        let kernel = ProxKernel::new(problem, gamma)?;
        let ctx = EnvelopeContext {
            kernel,
            l_gamma: smoothness.l_gamma,
            m_inf: 0.0,
        };
        debug_assert!(
            {
                let at_star: f64 = (0..problem.n_clients())
                    .map(|i| ctx.envelope_value(i, problem.x_star()).unwrap())
                    .sum::<f64>()
                    / problem.n_clients() as f64;
                (at_star - ctx.m_inf).abs() <= 1e-10
            },
            "envelope infimum is not zero at the minimizer"
        );
        Ok(ctx)
    }

    pub fn problem(&self) -> &'a FederatedProblem {
        self.kernel.problem()
    }

    pub fn gamma(&self) -> f64 {
        self.kernel.gamma()
    }

    /// Smoothness constant of the averaged envelope.
    pub fn l_gamma(&self) -> f64 {
        self.l_gamma
    }

    /// Infimum of the averaged envelope (zero by problem normalization).
    pub fn m_inf(&self) -> f64 {
        self.m_inf
    }

    pub fn kernel(&self) -> &ProxKernel<'a> {
        &self.kernel
    }

    /// Envelope value of client `i` at `x`.
    pub fn envelope_value(&self, i: usize, x: &Vector) -> Result<f64> {
        let p = self.kernel.exact(i, x)?;
        let fval = self.problem().value_client(i, &p)?;
        Ok(fval + x.dist_sq(&p) / (2.0 * self.gamma()))
    }

    /// Envelope gradient of client `i` at `x`: `(x - prox_i(x)) / gamma`.
    pub fn envelope_grad(&self, i: usize, x: &Vector) -> Result<Vector> {
        let p = self.kernel.exact(i, x)?;
        let mut g = x - &p;
        g.scale(1.0 / self.gamma());
        Ok(g)
    }

    /// Gradient of the averaged envelope.
    pub fn global_grad(&self, x: &Vector) -> Result<Vector> {
        let n = self.problem().n_clients();
        let mut sum = Vector::zeros(x.len());
        for i in 0..n {
            sum.add_scaled(1.0, &self.envelope_grad(i, x)?);
        }
        sum.scale(1.0 / n as f64);
        Ok(sum)
    }

    /// Envelope gap `gamma M(x) - gamma M_inf`; nonnegative.
    pub fn global_envelope_gap(&self, x: &Vector) -> Result<f64> {
        Ok(self.metrics(x)?.gap)
    }

    /// Gap and scaled gradient norm in one pass over the clients.
    pub fn metrics(&self, x: &Vector) -> Result<EnvelopeMetrics> {
        let n = self.problem().n_clients();
        let gamma = self.gamma();
        let mut value_sum = 0.0;
        let mut displacement_sum = Vector::zeros(x.len());
        for i in 0..n {
            let p = self.kernel.exact(i, x)?;
            value_sum += self.problem().value_client(i, &p)? + x.dist_sq(&p) / (2.0 * gamma);
            displacement_sum.add_scaled(1.0, &(x - &p));
        }
        let gap = gamma * (value_sum / n as f64 - self.m_inf);
        displacement_sum.scale(1.0 / n as f64);
        Ok(EnvelopeMetrics {
            gap,
            grad_norm: displacement_sum.norm(),
        })
    }

    /// Biased gradient estimator built from returned approximations over a
    /// sampled client subset: `mean_i (x - approx_i)`.
    pub fn estimator_g(&self, x: &Vector, approximations: &[Vector]) -> Result<Vector> {
        if approximations.is_empty() {
            return Err(Error::invalid("approximations", "need at least one client"));
        }
        let mut g = Vector::zeros(x.len());
        for a in approximations {
            if a.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    got: a.len(),
                });
            }
            g.add_scaled(1.0, &(x - a));
        }
        g.scale(1.0 / approximations.len() as f64);
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymMatrix;
    use crate::problem::{QuadraticClient, Spectrum};
    use crate::prox::{evaluate, prox_exact, InexactnessSpec};
    use crate::rng::{substream, Domain};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn sample_problem() -> FederatedProblem {
        FederatedProblem::generate_interpolated(5, 8, 17, Spectrum::new(0.0, 6.0, 0.6).unwrap())
            .unwrap()
    }

    fn random_point(dim: usize, tag: u64, scale: f64) -> Vector {
        let mut rng = substream(7, Domain::Start, tag, 0);
        Vector::from_fn(dim, |_| rng.sample::<f64, _>(StandardNormal) * scale)
    }

    #[test]
    fn envelope_vanishes_at_minimizer() {
        let p = sample_problem();
        let ctx = EnvelopeContext::new(&p, 0.8).unwrap();
        for i in 0..p.n_clients() {
            let v = ctx.envelope_value(i, p.x_star()).unwrap();
            assert!(v.abs() <= 1e-12, "client {i}: {v}");
        }
        assert!(ctx.global_envelope_gap(p.x_star()).unwrap().abs() <= 1e-12);
        assert!(ctx.global_grad(p.x_star()).unwrap().norm() <= 1e-10);
    }

    #[test]
    fn envelope_of_zero_function_is_zero() {
        let x_star = Vector::zeros(3);
        let zero = QuadraticClient::new(SymMatrix::identity(3), Vector::zeros(3), 0.0).unwrap();
        let flat = QuadraticClient::new(SymMatrix::zeros(3), Vector::zeros(3), 0.0).unwrap();
        let p = FederatedProblem::from_parts(vec![zero, flat], x_star).unwrap();
        let ctx = EnvelopeContext::new(&p, 2.0).unwrap();
        let x = Vector::from_vec(vec![1.0, -2.0, 0.5]);
        assert!(ctx.envelope_value(1, &x).unwrap().abs() <= 1e-14);
    }

    #[test]
    fn envelope_value_matches_grid_minimization_oracle() {
        // 1-D instance: minimize f(z) + (z-x)^2/(2 gamma) by nested grid
        // refinement and compare to the closed form.
        let mut a = SymMatrix::zeros(1);
        a.set(0, 0, 3.0);
        // Offset chosen so the client vanishes at its minimizer 0.5.
        let client =
            QuadraticClient::new(a, Vector::from_vec(vec![-1.5]), 0.375).unwrap();
        let p = FederatedProblem::from_parts(
            vec![client],
            Vector::from_vec(vec![0.5]), // grad = 3z - 1.5 vanishes at 0.5
        )
        .unwrap();
        let ctx = EnvelopeContext::new(&p, 0.7).unwrap();
        let x = Vector::from_vec(vec![2.3]);
        let evaluated = ctx.envelope_value(0, &x).unwrap();

        let objective = |z: f64| -> f64 {
            let zv = Vector::from_vec(vec![z]);
            p.value_client(0, &zv).unwrap() + (z - 2.3) * (z - 2.3) / (2.0 * 0.7)
        };
        let mut lo = -10.0;
        let mut hi = 10.0;
        let mut best = f64::INFINITY;
        for _ in 0..8 {
            let mut stage_best = f64::INFINITY;
            let mut argmin = lo;
            for k in 0..=2000 {
                let z = lo + (hi - lo) * k as f64 / 2000.0;
                let v = objective(z);
                if v < stage_best {
                    stage_best = v;
                    argmin = z;
                }
            }
            best = best.min(stage_best);
            let width = (hi - lo) / 100.0;
            lo = argmin - width;
            hi = argmin + width;
        }
        assert!(
            (evaluated - best).abs() <= 1e-8 * (1.0 + best.abs()),
            "closed form {evaluated} vs grid {best}"
        );
    }

    #[test]
    fn envelope_grad_simple_case() {
        let x_star = Vector::zeros(2);
        let client = QuadraticClient::new(SymMatrix::identity(2), Vector::zeros(2), 0.0).unwrap();
        let p = FederatedProblem::from_parts(vec![client], x_star).unwrap();
        let ctx = EnvelopeContext::new(&p, 1.0).unwrap();
        let g = ctx.envelope_grad(0, &Vector::from_vec(vec![2.0, 0.0])).unwrap();
        assert!((g[0] - 1.0).abs() <= 1e-12 && g[1].abs() <= 1e-12);
    }

    #[test]
    fn envelope_grad_matches_finite_differences() {
        let p = sample_problem();
        let ctx = EnvelopeContext::new(&p, 1.3).unwrap();
        let x = random_point(8, 1, 2.0);
        let i = 2;
        let g = ctx.envelope_grad(i, &x).unwrap();
        let h = 1e-6 * (1.0 + x.norm());
        for k in 0..8 {
            let e = Vector::from_fn(8, |j| if j == k { 1.0 } else { 0.0 });
            let plus = ctx.envelope_value(i, &(&x + &(&e * h))).unwrap();
            let minus = ctx.envelope_value(i, &(&x - &(&e * h))).unwrap();
            let fd = (plus - minus) / (2.0 * h);
            assert!(
                (g[k] - fd).abs() <= 1e-5 * (1.0 + g[k].abs()),
                "coordinate {k}: {} vs {fd}",
                g[k]
            );
        }
    }

    #[test]
    fn envelope_grad_agrees_with_prox_displacement() {
        let p = sample_problem();
        let ctx = EnvelopeContext::new(&p, 0.6).unwrap();
        let x = random_point(8, 2, 3.0);
        for i in 0..p.n_clients() {
            let g = ctx.envelope_grad(i, &x).unwrap();
            let prox = prox_exact(p.client(i), &x, 0.6).unwrap();
            let mut alt = &x - &prox;
            alt.scale(1.0 / 0.6);
            assert!(g.dist_sq(&alt).sqrt() <= 1e-10);
        }
    }

    #[test]
    fn gap_respects_growth_and_smoothness_bounds() {
        let p = sample_problem();
        let gamma = 0.5;
        let ctx = EnvelopeContext::new(&p, gamma).unwrap();
        for tag in 0..20 {
            let x = random_point(8, 100 + tag, 2.5);
            let gap = ctx.global_envelope_gap(&x).unwrap();
            let dist = x.dist_sq(p.x_star());
            let lower = gamma * p.mu() / (2.0 * (1.0 + gamma * p.l_max())) * dist;
            let upper = gamma * ctx.l_gamma() / 2.0 * dist;
            assert!(gap >= lower * (1.0 - 1e-7), "gap {gap} below {lower}");
            assert!(gap <= upper * (1.0 + 1e-7), "gap {gap} above {upper}");
            assert!(gap >= 0.0);
        }
    }

    #[test]
    fn pl_inequality_holds_on_random_points() {
        let p = sample_problem();
        let gamma = 1.1;
        let ctx = EnvelopeContext::new(&p, gamma).unwrap();
        let pl_constant = gamma * p.mu() / (4.0 * (1.0 + gamma * p.l_max()));
        for tag in 0..1000 {
            let x = random_point(8, 2000 + tag, 2.0);
            let m = ctx.metrics(&x).unwrap();
            let lhs = m.grad_norm * m.grad_norm;
            let rhs = 2.0 * pl_constant * m.gap;
            assert!(lhs >= rhs * (1.0 - 1e-7), "PL violated: {lhs} < {rhs}");
        }
    }

    #[test]
    fn envelope_gradient_is_lipschitz() {
        let p = sample_problem();
        let gamma = 0.9;
        let ctx = EnvelopeContext::new(&p, gamma).unwrap();
        for tag in 0..50 {
            let x = random_point(8, 3000 + tag, 2.0);
            let y = random_point(8, 4000 + tag, 2.0);
            let gx = ctx.global_grad(&x).unwrap();
            let gy = ctx.global_grad(&y).unwrap();
            let lhs = gx.dist_sq(&gy).sqrt();
            let rhs = ctx.l_gamma() * x.dist_sq(&y).sqrt();
            assert!(lhs <= rhs * (1.0 + 1e-7), "{lhs} > {rhs}");
        }
    }

    #[test]
    fn envelope_is_a_lower_approximation() {
        let p = sample_problem();
        let ctx = EnvelopeContext::new(&p, 2.2).unwrap();
        for tag in 0..20 {
            let x = random_point(8, 5000 + tag, 3.0);
            for i in 0..p.n_clients() {
                let env = ctx.envelope_value(i, &x).unwrap();
                let f = p.value_client(i, &x).unwrap();
                assert!(env <= f * (1.0 + 1e-12) + 1e-12, "client {i}: {env} > {f}");
            }
        }
    }

    #[test]
    fn estimator_identity_term_by_term() {
        // mean(x - approx) must equal mean(gamma grad M_i) - mean(approx - prox).
        let p = sample_problem();
        let gamma = 0.8;
        let ctx = EnvelopeContext::new(&p, gamma).unwrap();
        let x = random_point(8, 9, 2.0);
        let spec = InexactnessSpec::RelativeInjected(0.2);
        let mut approximations = Vec::new();
        let mut identity = Vector::zeros(8);
        for i in 0..p.n_clients() {
            let mut rng = substream(3, Domain::Injection, 0, i as u64);
            let r = evaluate(&spec, p.client(i), &x, gamma, &mut rng).unwrap();
            let scaled_grad = &ctx.envelope_grad(i, &x).unwrap() * gamma;
            let bias = &r.point - &r.exact_point;
            identity.add_scaled(1.0 / p.n_clients() as f64, &(&scaled_grad - &bias));
            approximations.push(r.point);
        }
        let g = ctx.estimator_g(&x, &approximations).unwrap();
        assert!(g.dist_sq(&identity).sqrt() <= 1e-12 * (1.0 + g.norm()));
    }

    #[test]
    fn estimator_with_exact_prox_is_mean_displacement() {
        let p = sample_problem();
        let ctx = EnvelopeContext::new(&p, 1.5).unwrap();
        let x = random_point(8, 10, 1.5);
        let proxes: Vec<Vector> = (0..p.n_clients())
            .map(|i| ctx.kernel().exact(i, &x).unwrap())
            .collect();
        let g = ctx.estimator_g(&x, &proxes).unwrap();
        let scaled = &ctx.global_grad(&x).unwrap() * ctx.gamma();
        assert!(g.dist_sq(&scaled).sqrt() <= 1e-12 * (1.0 + g.norm()));
        // At the minimizer the estimator vanishes in exact mode.
        let star_proxes: Vec<Vector> = (0..p.n_clients())
            .map(|i| ctx.kernel().exact(i, p.x_star()).unwrap())
            .collect();
        let g_star = ctx.estimator_g(p.x_star(), &star_proxes).unwrap();
        assert!(g_star.norm() <= 1e-10);
    }

    #[test]
    fn estimator_rejects_dimension_mismatch() {
        let p = sample_problem();
        let ctx = EnvelopeContext::new(&p, 1.0).unwrap();
        let x = Vector::zeros(8);
        let err = ctx.estimator_g(&x, &[Vector::zeros(5)]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }
}
