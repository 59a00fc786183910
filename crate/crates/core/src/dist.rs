//! Parametric distribution families.
//!
//! Every family validates its parameters at construction and then exposes
//! an exact log-density and a sampler.  Points are passed as `&[f64]`
//! slices so scalar, count and vector-valued families share one carrier;
//! discrete values are represented by their (integral) `f64` value.
//!
//! `log_density` returns `-inf` for a point outside the support; parameter
//! problems are construction-time `Error::InvalidParameter`s, so the two
//! failure modes never mix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution as _, Gamma as RdGamma, StandardNormal};

use crate::error::Error;
use crate::special::{ln_abs_expm1, ln_beta, ln_choose};
use crate::Result;

const LN_2PI: f64 = 1.8378770664093454835606594728112;

/// Multivariate Gaussian with full covariance.
#[derive(Debug, Clone)]
pub struct GaussianMv {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianMv {
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "covariance must be {d}x{d}, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let max_asym = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| (cov[(i, j)] - cov[(j, i)]).abs())
            .fold(0.0f64, f64::max);
        if max_asym > 1e-10 {
            return Err(Error::InvalidParameter(
                "covariance matrix is not symmetric".into(),
            ));
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            Error::InvalidParameter("covariance matrix is not positive definite".into())
        })?;
        Ok(Self {
            mean: DVector::from_vec(mean),
            cov,
            chol,
        })
    }

    /// One-dimensional Gaussian.
    pub fn univariate(mean: f64, var: f64) -> Result<Self> {
        Self::new(vec![mean], DMatrix::from_element(1, 1, var))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol_lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn log_det_cov(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>()
    }

    /// Solve `cov * x = v`.
    pub fn cov_solve(&self, v: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(v)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = DVector::from_column_slice(x) - &self.mean;
        let z = self.chol.solve(&diff);
        -0.5 * (self.dim() as f64 * LN_2PI + self.log_det_cov() + diff.dot(&z))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        (&self.mean + self.chol.l_dirty().lower_triangle() * z)
            .iter()
            .cloned()
            .collect()
    }
}

/// Beta(a, b).
#[derive(Debug, Clone, Copy)]
pub struct BetaDist {
    pub a: f64,
    pub b: f64,
}

impl BetaDist {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return f64::NEG_INFINITY;
        }
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (1.0 - x).ln() - ln_beta(self.a, self.b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rand_distr::Beta::new(self.a, self.b)
            .expect("validated at construction")
            .sample(rng)
    }
}

/// Inverse gamma with shape `a` and rate-type scale `b`.
///
/// Density `b^a / Gamma(a) * x^{-a-1} exp(-b/x)`: `b` enters the kernel as
/// `exp(-b/x)`, matching the normal-inverse-gamma factor `exp(-2b/(2s^2))`.
/// (The other circulating convention swaps `b` for `1/b`.)
#[derive(Debug, Clone, Copy)]
pub struct InverseGamma {
    pub a: f64,
    pub b: f64,
}

impl InverseGamma {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "inverse gamma parameters must be positive, got a={a}, b={b}"
            )));
        }
        Ok(Self { a, b })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.a * self.b.ln() - crate::special::ln_gamma(self.a) - (self.a + 1.0) * x.ln()
            - self.b / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1/X ~ Gamma(a, rate b)  =>  X ~ IG(a, b)
        let g = RdGamma::new(self.a, 1.0 / self.b)
            .expect("validated at construction")
            .sample(rng);
        1.0 / g
    }

    pub fn mean(&self) -> Option<f64> {
        (self.a > 1.0).then(|| self.b / (self.a - 1.0))
    }
}

/// Normal-inverse-gamma over `(mu, sigma^2)`:
/// `sigma^2 ~ IG(a, b)`, `mu | sigma^2 ~ N(mu0, sigma^2 / lambda0)`.
#[derive(Debug, Clone, Copy)]
pub struct NormalInverseGamma {
    pub mu0: f64,
    pub lambda0: f64,
    pub a: f64,
    pub b: f64,
}

impl NormalInverseGamma {
    pub fn new(mu0: f64, lambda0: f64, a: f64, b: f64) -> Result<Self> {
        if !(lambda0 > 0.0 && a > 0.0 && b > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "NIG parameters must have lambda0, a, b > 0, got {lambda0}, {a}, {b}"
            )));
        }
        Ok(Self { mu0, lambda0, a, b })
    }

    pub fn variance_marginal(&self) -> InverseGamma {
        InverseGamma { a: self.a, b: self.b }
    }

    /// Log density at `(mu, sigma^2)`.
    pub fn log_density(&self, mu: f64, sigma_sq: f64) -> f64 {
        if sigma_sq <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let ig = self.variance_marginal().log_density(sigma_sq);
        let var = sigma_sq / self.lambda0;
        let normal = -0.5 * (LN_2PI + var.ln() + (mu - self.mu0).powi(2) / var);
        ig + normal
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let sigma_sq = self.variance_marginal().sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        let mu = self.mu0 + z * (sigma_sq / self.lambda0).sqrt();
        (mu, sigma_sq)
    }
}

/// Exponential tilted by `exp(rate * x)` and truncated to `(0, upper)`.
///
/// The rate may be negative or zero (zero gives the uniform on
/// `(0, upper)`); the normalizer is evaluated in log space.
#[derive(Debug, Clone, Copy)]
pub struct TruncatedExponential {
    pub rate: f64,
    pub upper: f64,
}

impl TruncatedExponential {
    pub fn new(rate: f64, upper: f64) -> Result<Self> {
        if !(upper > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "truncation point must be positive, got {upper}"
            )));
        }
        if !rate.is_finite() {
            return Err(Error::InvalidParameter("rate must be finite".into()));
        }
        Ok(Self { rate, upper })
    }

    /// `ln` of the normalizing constant `|rate| / |e^{rate * upper} - 1|`
    /// (equals `-ln upper` at rate zero).
    pub fn ln_norm_const(&self) -> f64 {
        if self.rate == 0.0 {
            -self.upper.ln()
        } else {
            self.rate.abs().ln() - ln_abs_expm1(self.rate * self.upper)
        }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 || x >= self.upper {
            return f64::NEG_INFINITY;
        }
        self.ln_norm_const() + self.rate * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        if self.rate == 0.0 {
            u * self.upper
        } else {
            // Inverse CDF: F(x) = (e^{cx}-1)/(e^{cu}-1)
            (u * (self.rate * self.upper).exp_m1()).ln_1p() / self.rate
        }
    }

    pub fn mean(&self) -> f64 {
        let c = self.rate;
        let u = self.upper;
        if c.abs() * u < 1e-8 {
            // Uniform limit plus first-order tilt correction.
            u / 2.0 + c * u * u / 12.0
        } else {
            u / (-(c * u)).exp_m1() * -1.0 - 1.0 / c
        }
    }
}

/// Exponential with rate `kappa`.
#[derive(Debug, Clone, Copy)]
pub struct ExponentialDist {
    pub kappa: f64,
}

impl ExponentialDist {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "exponential rate must be positive, got {kappa}"
            )));
        }
        Ok(Self { kappa })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.kappa.ln() - self.kappa * x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rand_distr::Exp::new(self.kappa)
            .expect("validated at construction")
            .sample(rng)
    }
}

/// Binomial(n, theta).
#[derive(Debug, Clone, Copy)]
pub struct BinomialDist {
    pub n: u64,
    pub theta: f64,
}

impl BinomialDist {
    pub fn new(n: u64, theta: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParameter("binomial needs n >= 1".into()));
        }
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::InvalidParameter(format!(
                "binomial success probability must be in [0,1], got {theta}"
            )));
        }
        Ok(Self { n, theta })
    }

    pub fn log_pmf(&self, y: u64) -> f64 {
        if y > self.n {
            return f64::NEG_INFINITY;
        }
        let (n, y_f) = (self.n as f64, y as f64);
        let succ = if y == 0 { 0.0 } else { y_f * self.theta.ln() };
        let fail = if y == self.n {
            0.0
        } else {
            (n - y_f) * (1.0 - self.theta).ln()
        };
        ln_choose(self.n, y) + succ + fail
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        if self.theta == 0.0 {
            return 0;
        }
        if self.theta == 1.0 {
            return self.n;
        }
        rand_distr::Binomial::new(self.n, self.theta)
            .expect("validated at construction")
            .sample(rng)
    }
}

/// Beta-binomial with mean `eta` and precision `k`:
/// `y ~ Binomial(n, p)` with `p ~ Beta(k*eta, k*(1-eta))`.
#[derive(Debug, Clone, Copy)]
pub struct BetaBinomialDist {
    pub n: u64,
    pub eta: f64,
    pub k: f64,
}

impl BetaBinomialDist {
    pub fn new(n: u64, eta: f64, k: f64) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidParameter("beta-binomial needs n >= 1".into()));
        }
        if !(eta > 0.0 && eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta-binomial mean must be in (0,1), got {eta}"
            )));
        }
        if !(k > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "beta-binomial precision must be positive, got {k}"
            )));
        }
        Ok(Self { n, eta, k })
    }

    pub fn log_pmf(&self, y: u64) -> f64 {
        if y > self.n {
            return f64::NEG_INFINITY;
        }
        let (a, b) = (self.k * self.eta, self.k * (1.0 - self.eta));
        let (n_f, y_f) = (self.n as f64, y as f64);
        ln_choose(self.n, y) + ln_beta(a + y_f, b + n_f - y_f) - ln_beta(a, b)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let p = BetaDist::new(self.k * self.eta, self.k * (1.0 - self.eta))
            .expect("validated at construction")
            .sample(rng);
        BinomialDist::new(self.n, p.clamp(0.0, 1.0))
            .expect("validated at construction")
            .sample(rng)
    }
}

/// Tagged union over the supported families; the carrier type used in
/// generic operations (Monte Carlo divergences, report plumbing).
#[derive(Debug, Clone)]
pub enum Distribution {
    GaussianMv(GaussianMv),
    Beta(BetaDist),
    InverseGamma(InverseGamma),
    NormalInverseGamma(NormalInverseGamma),
    TruncatedExponential(TruncatedExponential),
    Exponential(ExponentialDist),
    Binomial(BinomialDist),
    BetaBinomial(BetaBinomialDist),
}

impl Distribution {
    /// Log of the normalized density / probability mass at `x`.
    ///
    /// Scalar families take a length-1 slice; the normal-inverse-gamma
    /// takes `[mu, sigma^2]`; the multivariate Gaussian takes a length-d
    /// slice.  Out-of-support points give `-inf`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        match self {
            Distribution::GaussianMv(d) => d.log_density(x),
            Distribution::Beta(d) => d.log_density(x[0]),
            Distribution::InverseGamma(d) => d.log_density(x[0]),
            Distribution::NormalInverseGamma(d) => d.log_density(x[0], x[1]),
            Distribution::TruncatedExponential(d) => d.log_density(x[0]),
            Distribution::Exponential(d) => d.log_density(x[0]),
            Distribution::Binomial(d) => d.log_pmf(x[0].round() as u64),
            Distribution::BetaBinomial(d) => d.log_pmf(x[0].round() as u64),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            Distribution::GaussianMv(d) => d.sample(rng),
            Distribution::Beta(d) => vec![d.sample(rng)],
            Distribution::InverseGamma(d) => vec![d.sample(rng)],
            Distribution::NormalInverseGamma(d) => {
                let (mu, s2) = d.sample(rng);
                vec![mu, s2]
            }
            Distribution::TruncatedExponential(d) => vec![d.sample(rng)],
            Distribution::Exponential(d) => vec![d.sample(rng)],
            Distribution::Binomial(d) => vec![d.sample(rng) as f64],
            Distribution::BetaBinomial(d) => vec![d.sample(rng) as f64],
        }
    }
}
