//! Proximal-operator evaluation.
//!
//! For a quadratic client the proximal step has the closed form
//! `prox(x) = (A + I/gamma)^{-1} (x/gamma - b)`, so the exact point is always
//! available. Inexact evaluation comes in two flavors: controlled injection
//! that places the approximation exactly on the admissible error boundary
//! (the worst case for every bound), and local GD/AGD solvers that stop at
//! the first iterate certifying the requested criterion against the exact
//! point, with iteration counts checked against their closed-form caps.

use std::sync::OnceLock;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{CholeskyFactor, Vector};
use crate::problem::{FederatedProblem, QuadraticClient};

/// Accuracy target for an inexact proximal evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    /// Squared distance to the exact prox at most this value.
    Absolute(f64),
    /// Squared distance at most this fraction of the squared displacement
    /// `||x - prox(x)||^2` of the center.
    Relative(f64),
}

/// Strategy for evaluating each proximal subproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InexactnessSpec {
    /// Closed-form evaluation.
    Exact,
    /// Exact point plus a perturbation of squared norm exactly `eps1`.
    AbsoluteInjected(f64),
    /// Exact point plus a perturbation of squared norm exactly
    /// `eps2 * ||x - prox(x)||^2`.
    RelativeInjected(f64),
    /// Gradient descent on the local subproblem until the target holds.
    SolverGd(Target),
    /// Nesterov's accelerated gradient descent, same stopping contract.
    SolverAgd(Target),
}

impl InexactnessSpec {
    pub fn validate(&self) -> Result<()> {
        let check_injected = |eps: f64, relative: bool| -> Result<()> {
            if eps < 0.0 || !eps.is_finite() {
                return Err(Error::invalid("inexactness", "level must be finite and >= 0"));
            }
            if relative && eps >= 1.0 {
                return Err(Error::invalid("eps2", "relative level must be < 1"));
            }
            Ok(())
        };
        match self {
            InexactnessSpec::Exact => Ok(()),
            InexactnessSpec::AbsoluteInjected(e1) => check_injected(*e1, false),
            InexactnessSpec::RelativeInjected(e2) => check_injected(*e2, true),
            InexactnessSpec::SolverGd(t) | InexactnessSpec::SolverAgd(t) => match t {
                // A zero solver target only terminates when the start already
                // satisfies it; require a positive level.
                Target::Absolute(e1) => {
                    check_injected(*e1, false)?;
                    if *e1 == 0.0 {
                        return Err(Error::invalid("eps1", "solver target must be positive"));
                    }
                    Ok(())
                }
                Target::Relative(e2) => {
                    check_injected(*e2, true)?;
                    if *e2 == 0.0 {
                        return Err(Error::invalid("eps2", "solver target must be positive"));
                    }
                    Ok(())
                }
            },
        }
    }

    /// Relative inexactness level this spec certifies (0 for exact and
    /// absolute modes).
    pub fn eps2(&self) -> f64 {
        match self {
            InexactnessSpec::RelativeInjected(e) => *e,
            InexactnessSpec::SolverGd(Target::Relative(e))
            | InexactnessSpec::SolverAgd(Target::Relative(e)) => *e,
            _ => 0.0,
        }
    }

    /// Absolute inexactness level this spec certifies (0 for exact and
    /// relative modes).
    pub fn eps1(&self) -> f64 {
        match self {
            InexactnessSpec::AbsoluteInjected(e) => *e,
            InexactnessSpec::SolverGd(Target::Absolute(e))
            | InexactnessSpec::SolverAgd(Target::Absolute(e)) => *e,
            _ => 0.0,
        }
    }
}

/// Which stopping criterion the returned point certifies, with the achieved
/// level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Criterion {
    Exact,
    Absolute(f64),
    Relative(f64),
}

/// One proximal evaluation. The exact point is always computed alongside the
/// approximation, so every criterion is checked against ground truth rather
/// than a surrogate stopping rule.
#[derive(Debug, Clone)]
pub struct ProxResult {
    pub point: Vector,
    pub exact_point: Vector,
    pub local_iters: usize,
    pub criterion_met: Criterion,
}

// ---------------------------------------------------------------------------
// Exact prox
// ---------------------------------------------------------------------------

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be positive and finite"));
    }
    Ok(())
}

fn prox_exact_with_factor(
    client: &QuadraticClient,
    factor: &CholeskyFactor,
    x: &Vector,
    gamma: f64,
) -> Result<Vector> {
    let mut rhs = x * (1.0 / gamma);
    rhs.add_scaled(-1.0, client.linear());
    factor.solve(&rhs)
}

/// Closed-form proximal step: the unique minimizer of
/// `f_i(z) + ||z - x||^2 / (2 gamma)`.
pub fn prox_exact(client: &QuadraticClient, x: &Vector, gamma: f64) -> Result<Vector> {
    check_gamma(gamma)?;
    if x.len() != client.dim() {
        return Err(Error::DimensionMismatch {
            expected: client.dim(),
            got: x.len(),
        });
    }
    let factor = CholeskyFactor::new(client.curvature(), 1.0 / gamma)?;
    prox_exact_with_factor(client, &factor, x, gamma)
}

/// Computable upper bound `||gamma grad f_i(x)||^2` on the squared
/// displacement `||x - prox(x)||^2`, usable before the exact prox is known.
pub fn displacement_upper_bound(
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
) -> Result<f64> {
    check_gamma(gamma)?;
    let g = client.grad(x)?;
    Ok(gamma * gamma * g.norm_sq())
}

// ---------------------------------------------------------------------------
// Iteration-count formulas
// ---------------------------------------------------------------------------

/// Smallest integer `t >= 0` with `prefactor * ratio^t <= target`, for
/// `ratio` in [0, 1). Returns `usize::MAX` when no finite `t` exists.
fn smallest_count(prefactor: f64, ratio: f64, target: f64) -> usize {
    if prefactor <= target {
        return 0;
    }
    if target <= 0.0 {
        return usize::MAX;
    }
    if ratio <= 0.0 {
        return 1;
    }
    debug_assert!(ratio < 1.0);
    let bound = |t: usize| prefactor * ratio.powi(t.min(i32::MAX as usize) as i32);
    let guess = ((target / prefactor).ln() / ratio.ln()).ceil();
    let mut t = if guess.is_finite() && guess > 0.0 {
        guess as usize
    } else {
        1
    };
    // The log estimate can be off by an ulp; settle on the exact minimum.
    let mut fuel = 64;
    while bound(t) > target && fuel > 0 {
        t += 1;
        fuel -= 1;
    }
    while t > 0 && bound(t - 1) <= target && fuel > 0 {
        t -= 1;
        fuel -= 1;
    }
    t
}

/// Iterations gradient descent needs on the local subproblem: the smallest
/// `t` with `(1 - 1/(1+gamma L_i))^t * dist0_sq` below the absolute target,
/// or with the contraction factor alone below the relative target.
pub fn local_complexity_gd(l_i: f64, gamma: f64, target: Target, dist0_sq: f64) -> usize {
    let q = 1.0 - 1.0 / (1.0 + gamma * l_i);
    match target {
        Target::Absolute(eps1) => smallest_count(dist0_sq, q, eps1),
        Target::Relative(eps2) => smallest_count(1.0, q, eps2),
    }
}

/// Iterations accelerated gradient descent needs: the smallest `t` with
/// `2 (1+gamma L_i) (1 - 1/sqrt(1+gamma L_i))^t * dist0_sq` below the
/// absolute target (relative analogously, without the distance factor).
pub fn local_complexity_agd(l_i: f64, gamma: f64, target: Target, dist0_sq: f64) -> usize {
    let kappa = 1.0 + gamma * l_i;
    let r = 1.0 - 1.0 / kappa.sqrt();
    match target {
        Target::Absolute(eps1) => {
            if dist0_sq <= eps1 {
                0
            } else {
                smallest_count(2.0 * kappa * dist0_sq, r, eps1)
            }
        }
        Target::Relative(eps2) => smallest_count(2.0 * kappa, r, eps2),
    }
}

// ---------------------------------------------------------------------------
// Local solvers
// ---------------------------------------------------------------------------

struct TargetCheck {
    target: Target,
    dist0_sq: f64,
    /// Displacements below this are indistinguishable from zero at the
    /// accuracy the exact prox itself is computed to.
    noise_floor: f64,
}

impl TargetCheck {
    fn new(target: Target, x: &Vector, exact: &Vector) -> Self {
        let noise = crate::linalg::SOLVE_RESIDUAL_TOL * (1.0 + x.norm());
        TargetCheck {
            target,
            dist0_sq: x.dist_sq(exact),
            noise_floor: noise * noise,
        }
    }

    /// Returns the achieved criterion if `z` certifies the target.
    fn check(&self, z: &Vector, exact: &Vector) -> Option<Criterion> {
        let d = z.dist_sq(exact);
        match self.target {
            Target::Absolute(eps1) => (d <= eps1).then_some(Criterion::Absolute(d)),
            Target::Relative(eps2) => {
                if self.dist0_sq <= self.noise_floor {
                    return Some(Criterion::Relative(0.0));
                }
                (d <= eps2 * self.dist0_sq).then_some(Criterion::Relative(d / self.dist0_sq))
            }
        }
    }
}

fn local_grad(client: &QuadraticClient, z: &Vector, x: &Vector, gamma: f64) -> Result<Vector> {
    // Gradient of the local objective f_i(z) + ||z - x||^2 / (2 gamma).
    let mut g = client.grad(z)?;
    g.add_scaled(1.0 / gamma, z);
    g.add_scaled(-1.0 / gamma, x);
    Ok(g)
}

fn prox_gd_with_exact(
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
    target: Target,
    exact: Vector,
) -> Result<ProxResult> {
    let check = TargetCheck::new(target, x, &exact);
    if let Some(criterion_met) = check.check(x, &exact) {
        return Ok(ProxResult {
            point: x.clone(),
            exact_point: exact,
            local_iters: 0,
            criterion_met,
        });
    }
    let l_i = client.smoothness();
    let cap = local_complexity_gd(l_i, gamma, target, check.dist0_sq).saturating_add(1);
    let eta = gamma / (1.0 + gamma * l_i);
    let mut z = x.clone();
    for t in 1..=cap {
        let g = local_grad(client, &z, x, gamma)?;
        z.add_scaled(-eta, &g);
        if let Some(criterion_met) = check.check(&z, &exact) {
            return Ok(ProxResult {
                point: z,
                exact_point: exact,
                local_iters: t,
                criterion_met,
            });
        }
    }
    // The cap is a theorem; reaching this line means a bug.
    Err(Error::IterationCapExceeded { cap })
}

fn prox_agd_with_exact(
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
    target: Target,
    exact: Vector,
) -> Result<ProxResult> {
    let check = TargetCheck::new(target, x, &exact);
    if let Some(criterion_met) = check.check(x, &exact) {
        return Ok(ProxResult {
            point: x.clone(),
            exact_point: exact,
            local_iters: 0,
            criterion_met,
        });
    }
    let l_i = client.smoothness();
    let cap = local_complexity_agd(l_i, gamma, target, check.dist0_sq).saturating_add(1);
    let kappa = 1.0 + gamma * l_i;
    let eta = gamma / kappa;
    let momentum = (kappa.sqrt() - 1.0) / (kappa.sqrt() + 1.0);
    let mut z_prev = x.clone();
    let mut z = x.clone();
    for t in 1..=cap {
        // y = z + momentum (z - z_prev); z_next = y - eta grad(y).
        let mut y = z.clone();
        y.add_scaled(momentum, &z);
        y.add_scaled(-momentum, &z_prev);
        let g = local_grad(client, &y, x, gamma)?;
        y.add_scaled(-eta, &g);
        z_prev = z;
        z = y;
        if let Some(criterion_met) = check.check(&z, &exact) {
            return Ok(ProxResult {
                point: z,
                exact_point: exact,
                local_iters: t,
                criterion_met,
            });
        }
    }
    Err(Error::IterationCapExceeded { cap })
}

/// Gradient descent on the local subproblem from `z0 = x` with step size
/// `gamma / (1 + gamma L_i)`, stopping at the first iterate that certifies
/// the target against the closed-form prox.
pub fn prox_gd(
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
    target: Target,
) -> Result<ProxResult> {
    InexactnessSpec::SolverGd(target).validate()?;
    let exact = prox_exact(client, x, gamma)?;
    prox_gd_with_exact(client, x, gamma, target, exact)
}

/// Nesterov's accelerated method on the local subproblem, same contract as
/// [`prox_gd`] with momentum `(sqrt(1+gamma L_i) - 1)/(sqrt(1+gamma L_i) + 1)`.
pub fn prox_agd(
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
    target: Target,
) -> Result<ProxResult> {
    InexactnessSpec::SolverAgd(target).validate()?;
    let exact = prox_exact(client, x, gamma)?;
    prox_agd_with_exact(client, x, gamma, target, exact)
}

// ---------------------------------------------------------------------------
// Boundary injection
// ---------------------------------------------------------------------------

fn random_unit(dim: usize, rng: &mut ChaCha8Rng) -> Vector {
    loop {
        let v = Vector::from_fn(dim, |_| rng.sample(StandardNormal));
        let n = v.norm();
        if n > 1e-150 {
            return &v * (1.0 / n);
        }
    }
}

/// Scales `offset` down by ulps until `exact + offset` satisfies
/// `dist_sq <= allowed` exactly as evaluated in floating point.
fn place_on_boundary(exact: &Vector, mut offset: Vector, allowed: f64) -> Vector {
    for _ in 0..64 {
        let candidate = exact + &offset;
        if candidate.dist_sq(exact) <= allowed {
            return candidate;
        }
        offset.scale(1.0 - 1e-14);
    }
    exact.clone()
}

/// Returns `exact` perturbed by a uniformly random direction of squared norm
/// exactly `eps1` (the boundary of the admissible set).
pub fn inject_absolute(exact: &Vector, eps1: f64, rng: &mut ChaCha8Rng) -> Vector {
    if eps1 <= 0.0 {
        return exact.clone();
    }
    let offset = &random_unit(exact.len(), rng) * eps1.sqrt();
    place_on_boundary(exact, offset, eps1)
}

/// Returns `exact` perturbed to squared distance exactly
/// `eps2 * ||center - exact||^2`; degenerate centers return `exact`.
pub fn inject_relative(
    exact: &Vector,
    center: &Vector,
    eps2: f64,
    rng: &mut ChaCha8Rng,
) -> Vector {
    let allowed = eps2 * center.dist_sq(exact);
    if allowed <= 0.0 {
        return exact.clone();
    }
    let offset = &random_unit(exact.len(), rng) * allowed.sqrt();
    place_on_boundary(exact, offset, allowed)
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

fn evaluate_with_exact(
    spec: &InexactnessSpec,
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
    exact: Vector,
    rng: &mut ChaCha8Rng,
) -> Result<ProxResult> {
    spec.validate()?;
    match spec {
        InexactnessSpec::Exact => Ok(ProxResult {
            point: exact.clone(),
            exact_point: exact,
            local_iters: 0,
            criterion_met: Criterion::Exact,
        }),
        InexactnessSpec::AbsoluteInjected(eps1) => {
            let point = inject_absolute(&exact, *eps1, rng);
            let achieved = point.dist_sq(&exact);
            Ok(ProxResult {
                point,
                exact_point: exact,
                local_iters: 0,
                criterion_met: Criterion::Absolute(achieved),
            })
        }
        InexactnessSpec::RelativeInjected(eps2) => {
            let point = inject_relative(&exact, x, *eps2, rng);
            let d0 = x.dist_sq(&exact);
            let achieved = if d0 > 0.0 {
                point.dist_sq(&exact) / d0
            } else {
                0.0
            };
            Ok(ProxResult {
                point,
                exact_point: exact,
                local_iters: 0,
                criterion_met: Criterion::Relative(achieved),
            })
        }
        InexactnessSpec::SolverGd(target) => {
            prox_gd_with_exact(client, x, gamma, *target, exact)
        }
        InexactnessSpec::SolverAgd(target) => {
            prox_agd_with_exact(client, x, gamma, *target, exact)
        }
    }
}

/// Evaluates the proximal oracle for a standalone client.
pub fn evaluate(
    spec: &InexactnessSpec,
    client: &QuadraticClient,
    x: &Vector,
    gamma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ProxResult> {
    let exact = prox_exact(client, x, gamma)?;
    evaluate_with_exact(spec, client, x, gamma, exact, rng)
}

// ---------------------------------------------------------------------------
// Cached kernel
// ---------------------------------------------------------------------------

/// Exact proximal evaluation bound to one problem and step size, with the
/// per-client Cholesky factors cached (populate once, then concurrent reads).
#[derive(Debug)]
pub struct ProxKernel<'a> {
    problem: &'a FederatedProblem,
    gamma: f64,
    factors: Vec<OnceLock<CholeskyFactor>>,
}

impl<'a> ProxKernel<'a> {
    pub fn new(problem: &'a FederatedProblem, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(ProxKernel {
            problem,
            gamma,
            factors: (0..problem.n_clients()).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn problem(&self) -> &'a FederatedProblem {
        self.problem
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    fn factor(&self, i: usize) -> Result<&CholeskyFactor> {
        if let Some(f) = self.factors[i].get() {
            return Ok(f);
        }
        let f = CholeskyFactor::new(self.problem.client(i).curvature(), 1.0 / self.gamma)?;
        // A concurrent populate of the same slot computes the identical
        // factor; losing the race is harmless.
        let _ = self.factors[i].set(f);
        Ok(self.factors[i].get().expect("factor was just populated"))
    }

    /// Closed-form prox of client `i` at `x`.
    pub fn exact(&self, i: usize, x: &Vector) -> Result<Vector> {
        let client = self.problem.client(i);
        if x.len() != client.dim() {
            return Err(Error::DimensionMismatch {
                expected: client.dim(),
                got: x.len(),
            });
        }
        prox_exact_with_factor(client, self.factor(i)?, x, self.gamma)
    }

    /// Evaluates the inexactness strategy for client `i` at `x`.
    pub fn evaluate(
        &self,
        spec: &InexactnessSpec,
        i: usize,
        x: &Vector,
        rng: &mut ChaCha8Rng,
    ) -> Result<ProxResult> {
        let exact = self.exact(i, x)?;
        evaluate_with_exact(spec, self.problem.client(i), x, self.gamma, exact, rng)
    }
}
