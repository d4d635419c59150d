//! Closed-form convergence rates, admissibility conditions, neighborhood
//! sizes, and slowdown factors for the inexact extrapolated proximal method.
//!
//! Every formula is implemented exactly as derived, constant factors
//! included, because empirical traces are checked against these expressions
//! as envelopes. Inadmissible inexactness levels are errors, never clamped.

use crate::error::{Error, Result};
use crate::problem::FederatedProblem;

/// Scalar constants of a problem instance at a fixed proximal step size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Strong-convexity constant of the average objective.
    pub mu: f64,
    /// Largest per-client smoothness constant.
    pub l_max: f64,
    /// Smoothness constant of the averaged Moreau envelope.
    pub l_gamma: f64,
    /// Proximal step size.
    pub gamma: f64,
    /// Number of clients.
    pub n: usize,
    /// Minibatch size for sampled runs.
    pub tau: usize,
}

impl ProblemConstants {
    pub fn new(
        mu: f64,
        l_max: f64,
        l_gamma: f64,
        gamma: f64,
        n: usize,
        tau: usize,
    ) -> Result<Self> {
        for (name, v) in [
            ("mu", mu),
            ("l_max", l_max),
            ("l_gamma", l_gamma),
            ("gamma", gamma),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be positive and finite"));
            }
        }
        if mu > l_max * (1.0 + 1e-9) {
            return Err(Error::invalid("mu", format!("exceeds l_max = {l_max}")));
        }
        if mu > l_gamma * (1.0 + gamma * l_max) * (1.0 + 1e-9) {
            return Err(Error::invalid(
                "mu",
                "exceeds the envelope estimate l_gamma (1 + gamma l_max)",
            ));
        }
        if n == 0 || tau == 0 || tau > n {
            return Err(Error::invalid("tau", format!("need 1 <= tau <= n = {n}")));
        }
        Ok(ProblemConstants {
            mu,
            l_max,
            l_gamma,
            gamma,
            n,
            tau,
        })
    }

    /// Reads the constants off a problem, computing the envelope smoothness
    /// for `gamma`.
    pub fn from_problem(problem: &FederatedProblem, gamma: f64, tau: usize) -> Result<Self> {
        let ms = problem.moreau_smoothness(gamma)?;
        ProblemConstants::new(
            problem.mu(),
            problem.l_max(),
            ms.l_gamma,
            gamma,
            problem.n_clients(),
            tau,
        )
    }

    fn one_plus_gl(&self) -> f64 {
        1.0 + self.gamma * self.l_max
    }
}

/// Analysis regimes for relative inexactness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// Biased-SGD analysis; admissible while `eps2 < mu^2 / (4 l_max^2)`.
    RelSgd,
    /// Biased-compression analysis; admissible while `eps2 < mu / (4 l_max)`.
    RelCompression,
}

impl Regime {
    fn name(self) -> &'static str {
        match self {
            Regime::RelSgd => "relative-sgd",
            Regime::RelCompression => "relative-compression",
        }
    }
}

/// Strict admissibility bound on `eps2` for the regime.
pub fn admissibility_bound(c: &ProblemConstants, regime: Regime) -> f64 {
    match regime {
        Regime::RelSgd => c.mu * c.mu / (4.0 * c.l_max * c.l_max),
        Regime::RelCompression => c.mu / (4.0 * c.l_max),
    }
}

/// Whether `eps2` satisfies the regime's strict admissibility inequality.
pub fn check_admissible(c: &ProblemConstants, regime: Regime, eps2: f64) -> bool {
    eps2 >= 0.0 && eps2 < admissibility_bound(c, regime)
}

fn require_admissible(c: &ProblemConstants, regime: Regime, eps2: f64) -> Result<()> {
    if check_admissible(c, regime, eps2) {
        Ok(())
    } else {
        Err(Error::InadmissibleInexactness {
            eps2,
            regime: regime.name(),
            bound: admissibility_bound(c, regime),
        })
    }
}

// ---------------------------------------------------------------------------
// Optimal extrapolation parameters
// ---------------------------------------------------------------------------

/// Largest extrapolation for exact evaluation: `1 / (gamma L_gamma)`.
pub fn alpha_exact(c: &ProblemConstants) -> f64 {
    1.0 / (c.gamma * c.l_gamma)
}

/// Optimal extrapolation under absolute inexactness: `1 / (4 gamma L_gamma)`.
pub fn alpha_absolute(c: &ProblemConstants) -> f64 {
    0.25 * alpha_exact(c)
}

/// Largest admissible extrapolation under the biased-SGD relative analysis.
pub fn alpha_relative_sgd(c: &ProblemConstants, eps2: f64) -> Result<f64> {
    require_admissible(c, Regime::RelSgd, eps2)?;
    let root = eps2.sqrt() * c.l_max;
    let num = c.mu - 2.0 * root;
    let den = c.mu + 4.0 * root + 4.0 * eps2 * c.l_max;
    Ok(alpha_exact(c) * num / den)
}

/// Largest admissible extrapolation for tau-nice sampling.
pub fn alpha_minibatch(c: &ProblemConstants, eps2: f64) -> Result<f64> {
    require_admissible(c, Regime::RelSgd, eps2)?;
    let root = eps2.sqrt() * c.l_max;
    let num = c.mu - 2.0 * root;
    let den = c.mu
        + 4.0 * eps2 * c.l_max
        + 4.0 * root
        + sampling_coefficient(c.n, c.tau) * (4.0 * c.l_max + 4.0 * root - c.mu);
    Ok(alpha_exact(c) * num / den)
}

/// Variance coefficient `(n - tau) / (tau (n - 1))` of sampling without
/// replacement; zero for full participation (including n = 1).
fn sampling_coefficient(n: usize, tau: usize) -> f64 {
    if tau >= n || n <= 1 {
        0.0
    } else {
        (n - tau) as f64 / (tau as f64 * (n - 1) as f64)
    }
}

// ---------------------------------------------------------------------------
// Slowdown factors
// ---------------------------------------------------------------------------

/// Multiplicative slowdown `S(eps2)` of the linear rate caused by relative
/// inexactness; equals 1 at `eps2 = 0`.
pub fn slowdown_s(c: &ProblemConstants, eps2: f64) -> Result<f64> {
    slowdown_s_tau(c, eps2, c.n)
}

/// Slowdown `S(eps2, tau)` with client sampling; `S(eps2, n) = S(eps2)`.
pub fn slowdown_s_tau(c: &ProblemConstants, eps2: f64, tau: usize) -> Result<f64> {
    require_admissible(c, Regime::RelSgd, eps2)?;
    if tau == 0 || tau > c.n {
        return Err(Error::invalid("tau", format!("need 1 <= tau <= n = {}", c.n)));
    }
    let root = eps2.sqrt() * c.l_max;
    let num = (c.mu - 2.0 * root) * (1.0 - 2.0 * root / c.mu);
    let den = c.mu
        + 4.0 * eps2 * c.l_max
        + 4.0 * root
        + sampling_coefficient(c.n, tau) * (4.0 * c.l_max + 4.0 * root - c.mu);
    Ok(num / den)
}

// ---------------------------------------------------------------------------
// Envelopes
// ---------------------------------------------------------------------------

/// Constants of the absolute-inexactness bound at the optimal extrapolation
/// `1 / (4 gamma L_gamma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsoluteEnvelope {
    /// Per-iteration contraction factor `1 - mu / (32 L_gamma (1 + gamma l_max))`.
    pub rate: f64,
    /// Additive constant of the envelope-gap recursion,
    /// `6 eps1 (1 + gamma l_max) / (gamma mu)`.
    pub neighborhood_gap: f64,
    /// Squared-distance neighborhood `12 eps1 ((1/gamma + l_max) / mu)^2`.
    pub neighborhood_dist: f64,
}

/// Bound constants under absolute inexactness `eps1`.
pub fn envelope_absolute(c: &ProblemConstants, eps1: f64) -> AbsoluteEnvelope {
    let rate = 1.0 - c.mu / (32.0 * c.l_gamma * c.one_plus_gl());
    let neighborhood_gap = 6.0 * eps1 * c.one_plus_gl() / (c.gamma * c.mu);
    let ratio = (1.0 / c.gamma + c.l_max) / c.mu;
    AbsoluteEnvelope {
        rate,
        neighborhood_gap,
        neighborhood_dist: 12.0 * eps1 * ratio * ratio,
    }
}

/// Additive gap constant in its general-extrapolation form,
/// `4 eps1 (1 + gamma l_max) / mu * (2 alpha L_gamma + 1/gamma)`; at
/// `alpha = 1/(4 gamma L_gamma)` it coincides with
/// [`AbsoluteEnvelope::neighborhood_gap`].
pub fn absolute_gap_additive(c: &ProblemConstants, eps1: f64, alpha: f64) -> f64 {
    4.0 * eps1 * c.one_plus_gl() / c.mu * (2.0 * alpha * c.l_gamma + 1.0 / c.gamma)
}

/// Envelope-gap bound after `k` iterations under absolute inexactness.
pub fn absolute_gap_bound(c: &ProblemConstants, eps1: f64, k: usize, gap0: f64) -> f64 {
    let env = envelope_absolute(c, eps1);
    env.rate.powi(k as i32) * gap0 + env.neighborhood_gap
}

/// Squared-distance bound after `k` iterations under absolute inexactness.
pub fn absolute_dist_bound(c: &ProblemConstants, eps1: f64, k: usize, dist0: f64) -> f64 {
    let env = envelope_absolute(c, eps1);
    let blowup = c.l_gamma * c.one_plus_gl() / c.mu;
    env.rate.powi(k as i32) * blowup * dist0 + env.neighborhood_dist
}

/// Per-iteration contraction of the envelope gap under the
/// biased-compression analysis with extrapolation `alpha`.
pub fn contraction_relative_compression_with_alpha(
    c: &ProblemConstants,
    eps2: f64,
    alpha: f64,
) -> Result<f64> {
    require_admissible(c, Regime::RelCompression, eps2)?;
    if !(alpha > 0.0 && alpha <= alpha_exact(c) * (1.0 + 1e-12)) {
        return Err(Error::invalid(
            "alpha",
            format!("must lie in (0, {}]", alpha_exact(c)),
        ));
    }
    let shrink = 1.0 - 4.0 * eps2 * c.l_max / c.mu;
    Ok(1.0 - shrink * c.gamma * c.mu / (4.0 * c.one_plus_gl()) * alpha)
}

/// Contraction of the compression analysis at the largest extrapolation
/// `alpha = 1/(gamma L_gamma)`:
/// `1 - (1 - 4 eps2 l_max/mu) mu / (4 L_gamma (1 + gamma l_max))`.
pub fn contraction_relative_compression(c: &ProblemConstants, eps2: f64) -> Result<f64> {
    contraction_relative_compression_with_alpha(c, eps2, alpha_exact(c))
}

/// Per-iteration contraction of the biased-SGD analysis with extrapolation
/// `alpha`: `1 - alpha gamma (mu - 2 sqrt(eps2) l_max) / (4 (1 + gamma l_max))`.
pub fn contraction_relative_sgd_with_alpha(
    c: &ProblemConstants,
    eps2: f64,
    alpha: f64,
) -> Result<f64> {
    require_admissible(c, Regime::RelSgd, eps2)?;
    let root = eps2.sqrt() * c.l_max;
    Ok(1.0 - alpha * c.gamma * (c.mu - 2.0 * root) / (4.0 * c.one_plus_gl()))
}

/// Biased-SGD contraction at the largest admissible extrapolation.
pub fn contraction_relative_sgd(c: &ProblemConstants, eps2: f64) -> Result<f64> {
    contraction_relative_sgd_with_alpha(c, eps2, alpha_relative_sgd(c, eps2)?)
}

/// Expected-envelope contraction for tau-nice sampling at the largest
/// admissible extrapolation; equals
/// `1 - mu S(eps2, tau) / (4 L_gamma (1 + gamma l_max))`.
pub fn contraction_minibatch(c: &ProblemConstants, eps2: f64) -> Result<f64> {
    contraction_relative_sgd_with_alpha(c, eps2, alpha_minibatch(c, eps2)?)
}

/// Geometric envelope `factor^k * initial`.
pub fn envelope_bound(factor: f64, k: usize, initial: f64) -> f64 {
    factor.powi(k.min(i32::MAX as usize) as i32) * initial
}

// ---------------------------------------------------------------------------
// Rate comparison report
// ---------------------------------------------------------------------------

/// One row of the regime comparison table.
#[derive(Debug, Clone)]
pub struct RateRow {
    pub algorithm: &'static str,
    /// Optimal extrapolation parameter, when admissible.
    pub alpha: Option<f64>,
    /// Per-iteration contraction of the bound, when admissible.
    pub contraction: Option<f64>,
    /// Squared-distance neighborhood the bound converges to.
    pub neighborhood_dist: f64,
    /// Strict upper bound on the admissible inexactness, if any.
    pub inexactness_bound: Option<f64>,
    pub admissible: bool,
}

/// Emits the per-regime comparison (optimal extrapolation, contraction,
/// neighborhood) for concrete constants and inexactness levels. A minibatch
/// row is appended when `tau < n`.
pub fn rate_comparison_report(c: &ProblemConstants, eps1: f64, eps2: f64) -> Vec<RateRow> {
    let mut rows = Vec::new();

    rows.push(RateRow {
        algorithm: "exact",
        alpha: Some(alpha_exact(c)),
        contraction: contraction_relative_compression(c, 0.0).ok(),
        neighborhood_dist: 0.0,
        inexactness_bound: None,
        admissible: true,
    });

    let abs = envelope_absolute(c, eps1);
    rows.push(RateRow {
        algorithm: "absolute",
        alpha: Some(alpha_absolute(c)),
        contraction: Some(abs.rate),
        neighborhood_dist: abs.neighborhood_dist,
        inexactness_bound: None,
        admissible: true,
    });

    let sgd_ok = check_admissible(c, Regime::RelSgd, eps2);
    rows.push(RateRow {
        algorithm: "relative-sgd",
        alpha: alpha_relative_sgd(c, eps2).ok(),
        contraction: contraction_relative_sgd(c, eps2).ok(),
        neighborhood_dist: 0.0,
        inexactness_bound: Some(admissibility_bound(c, Regime::RelSgd)),
        admissible: sgd_ok,
    });

    let comp_ok = check_admissible(c, Regime::RelCompression, eps2);
    rows.push(RateRow {
        algorithm: "relative-compression",
        alpha: comp_ok.then(|| alpha_exact(c)),
        contraction: contraction_relative_compression(c, eps2).ok(),
        neighborhood_dist: 0.0,
        inexactness_bound: Some(admissibility_bound(c, Regime::RelCompression)),
        admissible: comp_ok,
    });

    if c.tau < c.n {
        rows.push(RateRow {
            algorithm: "minibatch",
            alpha: alpha_minibatch(c, eps2).ok(),
            contraction: contraction_minibatch(c, eps2).ok(),
            neighborhood_dist: 0.0,
            inexactness_bound: Some(admissibility_bound(c, Regime::RelSgd)),
            admissible: sgd_ok,
        });
    }
    rows
}
