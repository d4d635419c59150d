//! Synthetic federated quadratic problems in the interpolation regime.
//!
//! Each client owns `f_i(x) = x'A_i x / 2 + b_i'x + c_i` with `A_i` PSD. The
//! linear and constant terms are chosen so that one shared point `x_star`
//! minimizes every client with `f_i(x_star) = 0`, which makes every
//! convergence metric downstream an exact quantity with no unknown offset.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{extreme_eigenvalues, CholeskyFactor, SymMatrix, Vector};
use crate::rng::{substream, Domain};

/// Eigensolver tolerance used for problem constants.
pub(crate) const EIG_TOL: f64 = 1e-9;

/// Spectrum of the per-client curvature matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spectrum {
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Fraction of nonzero eigenvalues per client, in (0, 1]. Below 1 the
    /// individual clients are only convex; only the average curvature must
    /// be positive definite.
    pub rank_fraction: f64,
}

impl Spectrum {
    pub fn new(lambda_lo: f64, lambda_hi: f64, rank_fraction: f64) -> Result<Self> {
        if !(lambda_lo >= 0.0 && lambda_hi >= lambda_lo) {
            return Err(Error::invalid(
                "spectrum",
                format!("need 0 <= lambda_lo <= lambda_hi, got [{lambda_lo}, {lambda_hi}]"),
            ));
        }
        if !(rank_fraction > 0.0 && rank_fraction <= 1.0) {
            return Err(Error::invalid(
                "rank_fraction",
                format!("must lie in (0, 1], got {rank_fraction}"),
            ));
        }
        Ok(Spectrum {
            lambda_lo,
            lambda_hi,
            rank_fraction,
        })
    }
}

/// One client's local quadratic objective with cached spectral constants.
#[derive(Debug, Clone)]
pub struct QuadraticClient {
    curvature: SymMatrix,
    linear: Vector,
    offset: f64,
    smoothness: f64,
}

impl QuadraticClient {
    /// Builds a client from explicit coefficients, validating that the
    /// curvature is PSD and caching its largest eigenvalue.
    pub fn new(curvature: SymMatrix, linear: Vector, offset: f64) -> Result<Self> {
        if curvature.dim() != linear.len() {
            return Err(Error::DimensionMismatch {
                expected: curvature.dim(),
                got: linear.len(),
            });
        }
        let (lo, hi) = extreme_eigenvalues(&curvature, EIG_TOL)?;
        if lo < -1e-10 * hi.abs().max(f64::MIN_POSITIVE) {
            return Err(Error::invalid(
                "curvature",
                format!("not PSD: lambda_min = {lo:e}, lambda_max = {hi:e}"),
            ));
        }
        Ok(QuadraticClient {
            curvature,
            linear,
            offset,
            smoothness: hi.max(0.0),
        })
    }

    /// Generation fast path: the caller guarantees `curvature` is PSD with
    /// largest eigenvalue `smoothness` (true by construction for Q D Q').
    pub(crate) fn with_known_smoothness(
        curvature: SymMatrix,
        linear: Vector,
        offset: f64,
        smoothness: f64,
    ) -> Self {
        QuadraticClient {
            curvature,
            linear,
            offset,
            smoothness,
        }
    }

    pub fn dim(&self) -> usize {
        self.curvature.dim()
    }

    pub fn curvature(&self) -> &SymMatrix {
        &self.curvature
    }

    pub fn linear(&self) -> &Vector {
        &self.linear
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Smoothness constant `L_i`, the largest eigenvalue of the curvature.
    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn value(&self, x: &Vector) -> Result<f64> {
        self.check_dim(x)?;
        Ok(0.5 * self.curvature.quad_form(x) + self.linear.dot(x) + self.offset)
    }

    pub fn grad(&self, x: &Vector) -> Result<Vector> {
        self.check_dim(x)?;
        let mut g = self.curvature.matvec(x);
        g.add_scaled(1.0, &self.linear);
        Ok(g)
    }

    fn check_dim(&self, x: &Vector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// `n` clients sharing a minimizer, plus the global constants every
/// convergence formula consumes.
#[derive(Debug, Clone)]
pub struct FederatedProblem {
    clients: Vec<QuadraticClient>,
    x_star: Vector,
    l_max: f64,
    mu: f64,
}

/// Smoothness of the averaged Moreau envelope together with its closed-form
/// bracket `sum L_i/(1+g L_i) / n^2 <= L_gamma <= sum L_i/(1+g L_i) / n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoreauSmoothness {
    pub l_gamma: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl FederatedProblem {
    /// Generates an interpolated problem: every client's curvature is
    /// `Q_i D_i Q_i'` with a seeded random orthogonal `Q_i`, the shared
    /// minimizer is standard normal, and `b_i`, `c_i` are chosen so that
    /// `grad f_i(x_star) = 0` and `f_i(x_star) = 0`.
    pub fn generate_interpolated(
        n: usize,
        d: usize,
        seed: u64,
        spectrum: Spectrum,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n", "need at least one client"));
        }
        if d == 0 {
            return Err(Error::invalid("d", "need dimension of at least one"));
        }
        let mut star_rng = substream(seed, Domain::Problem, 0, 0);
        let x_star = Vector::from_fn(d, |_| star_rng.sample(StandardNormal));

        let rank = ((spectrum.rank_fraction * d as f64).ceil() as usize).clamp(1, d);
        let mut clients: Vec<QuadraticClient> = (0..n)
            .map(|i| {
                let mut rng = substream(seed, Domain::Client, i as u64, 0);
                generate_client(d, rank, &spectrum, &x_star, &mut rng)
            })
            .collect();

        let (mut mu, mut l_avg_max) = average_curvature_extremes(&clients)?;
        if mu <= 1e-10 * l_avg_max.max(f64::MIN_POSITIVE) {
            // The average curvature is not strictly PD; rebuild client 0 at
            // full rank from a fresh substream.
            let mut rng = substream(seed, Domain::Client, 0, 1);
            clients[0] = generate_client(d, d, &spectrum, &x_star, &mut rng);
            let redo = average_curvature_extremes(&clients)?;
            mu = redo.0;
            l_avg_max = redo.1;
            if mu <= 1e-10 * l_avg_max.max(f64::MIN_POSITIVE) {
                return Err(Error::DegenerateSpectrum { mu });
            }
        }
        let l_max = clients
            .iter()
            .map(|c| c.smoothness())
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(FederatedProblem {
            clients,
            x_star,
            l_max,
            mu,
        })
    }

    /// Reassembles a problem from explicit parts (e.g. a replayed dump),
    /// validating interpolation and global strong convexity.
    pub fn from_parts(clients: Vec<QuadraticClient>, x_star: Vector) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::invalid("clients", "need at least one client"));
        }
        let d = x_star.len();
        for client in &clients {
            if client.dim() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: client.dim(),
                });
            }
            let residual = client.grad(&x_star)?.norm();
            let allowed = 1e-10 * (1.0 + client.linear().norm());
            if residual > allowed {
                return Err(Error::invalid(
                    "clients",
                    format!("interpolation violated: gradient residual {residual:e} at x_star"),
                ));
            }
            // Value normalization pins the envelope infimum at zero, which
            // every convergence metric downstream relies on.
            let value = client.value(&x_star)?;
            if value.abs() > 1e-10 * (1.0 + client.offset().abs()) {
                return Err(Error::invalid(
                    "clients",
                    format!("normalization violated: f(x_star) = {value:e}, expected 0"),
                ));
            }
        }
        let (mu, l_avg_max) = average_curvature_extremes(&clients)?;
        if mu <= 1e-10 * l_avg_max.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateSpectrum { mu });
        }
        let l_max = clients
            .iter()
            .map(|c| c.smoothness())
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(FederatedProblem {
            clients,
            x_star,
            l_max,
            mu,
        })
    }

    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.x_star.len()
    }

    pub fn clients(&self) -> &[QuadraticClient] {
        &self.clients
    }

    pub fn client(&self, i: usize) -> &QuadraticClient {
        &self.clients[i]
    }

    /// The shared minimizer.
    pub fn x_star(&self) -> &Vector {
        &self.x_star
    }

    /// Largest per-client smoothness constant.
    pub fn l_max(&self) -> f64 {
        self.l_max
    }

    /// Strong-convexity constant of the average objective, the smallest
    /// eigenvalue of the mean curvature.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn grad_client(&self, i: usize, x: &Vector) -> Result<Vector> {
        self.clients[i].grad(x)
    }

    pub fn value_client(&self, i: usize, x: &Vector) -> Result<f64> {
        self.clients[i].value(x)
    }

    pub fn value_global(&self, x: &Vector) -> Result<f64> {
        let mut total = 0.0;
        for client in &self.clients {
            total += client.value(x)?;
        }
        Ok(total / self.clients.len() as f64)
    }

    /// Smoothness constant of the averaged Moreau envelope for step `gamma`,
    /// computed exactly for quadratics as the largest eigenvalue of
    /// `mean_i A_i (I + gamma A_i)^{-1}`, together with its bracket.
    pub fn moreau_smoothness(&self, gamma: f64) -> Result<MoreauSmoothness> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid("gamma", "must be positive and finite"));
        }
        let d = self.dim();
        let n = self.clients.len();
        let mut hessian = SymMatrix::zeros(d);
        for client in &self.clients {
            // A(I + gA)^{-1} = (I - (I + gA)^{-1}) / g, computed column by
            // column from the shifted Cholesky factor and symmetrized.
            let mut scaled = client.curvature().clone();
            scaled.scale(gamma);
            let factor = CholeskyFactor::new(&scaled, 1.0)?;
            let mut columns: Vec<Vector> = Vec::with_capacity(d);
            for j in 0..d {
                let e = Vector::from_fn(d, |i| if i == j { 1.0 } else { 0.0 });
                columns.push(factor.solve(&e)?);
            }
            let w = SymMatrix::from_fn(d, |i, j| {
                let inv = 0.5 * (columns[j][i] + columns[i][j]);
                let id = if i == j { 1.0 } else { 0.0 };
                (id - inv) / gamma
            });
            hessian.add_scaled(1.0 / n as f64, &w);
        }
        let (_, l_gamma) = extreme_eigenvalues(&hessian, EIG_TOL)?;

        let mut sum = 0.0;
        for client in &self.clients {
            let li = client.smoothness();
            sum += li / (1.0 + gamma * li);
        }
        let upper_bound = sum / n as f64;
        let lower_bound = upper_bound / n as f64;
        debug_assert!(
            l_gamma >= lower_bound * (1.0 - 1e-7) - 1e-300
                && l_gamma <= upper_bound * (1.0 + 1e-7) + 1e-300,
            "envelope smoothness {l_gamma} escaped bracket [{lower_bound}, {upper_bound}]"
        );
        Ok(MoreauSmoothness {
            l_gamma,
            lower_bound,
            upper_bound,
        })
    }
}

fn generate_client(
    d: usize,
    rank: usize,
    spectrum: &Spectrum,
    x_star: &Vector,
    rng: &mut ChaCha8Rng,
) -> QuadraticClient {
    let q = random_orthogonal(d, rng);
    let mut diag = vec![0.0; d];
    for entry in diag.iter_mut().take(rank) {
        *entry = if spectrum.lambda_hi > spectrum.lambda_lo {
            rng.random_range(spectrum.lambda_lo..=spectrum.lambda_hi)
        } else {
            spectrum.lambda_hi
        };
    }
    let curvature = SymMatrix::from_fn(d, |i, j| {
        let mut sum = 0.0;
        for (k, &dk) in diag.iter().enumerate() {
            if dk != 0.0 {
                sum += dk * q[k][i] * q[k][j];
            }
        }
        sum
    });
    let mut linear = curvature.matvec(x_star);
    linear.scale(-1.0);
    let offset = 0.5 * curvature.quad_form(x_star);
    let smoothness = diag.iter().cloned().fold(0.0, f64::max);
    QuadraticClient::with_known_smoothness(curvature, linear, offset, smoothness)
}

/// Random orthonormal basis via modified Gram-Schmidt with a second
/// orthogonalization pass.
fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vector> {
    let mut cols: Vec<Vector> = (0..d)
        .map(|_| Vector::from_fn(d, |_| rng.sample(StandardNormal)))
        .collect();
    for j in 0..d {
        loop {
            let (done, rest) = cols.split_at_mut(j);
            let v = &mut rest[0];
            for _ in 0..2 {
                for q in done.iter() {
                    let proj = v.dot(q);
                    v.add_scaled(-proj, q);
                }
            }
            let n = v.norm();
            if n > 1e-12 {
                v.scale(1.0 / n);
                break;
            }
            // Degenerate draw; replace the column and retry.
            *v = Vector::from_fn(d, |_| rng.sample(StandardNormal));
        }
    }
    cols
}

fn average_curvature_extremes(clients: &[QuadraticClient]) -> Result<(f64, f64)> {
    let d = clients[0].dim();
    let n = clients.len() as f64;
    let mut avg = SymMatrix::zeros(d);
    for client in clients {
        avg.add_scaled(1.0 / n, client.curvature());
    }
    extreme_eigenvalues(&avg, EIG_TOL)
}
