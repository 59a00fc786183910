//! Gaussian and Gaussian-mixture variational posterior fits.
//!
//! Both fits maximize a Monte Carlo evidence lower bound by stochastic
//! gradient ascent (Adam) with reparameterized draws `theta = m + L z`,
//! `z ~ N(0, I)`.  The factor `L` is lower triangular with its diagonal
//! optimized on the log scale, so the covariance stays positive definite
//! without projection.
//!
//! For the mixture fit the per-parameter score term of `-log q` has zero
//! expectation and is dropped; the surviving path term differentiates
//! `log p(theta, y) - log q(theta)` through the draw.  Mixture weights use
//! the exact identity `d ELBO / d w_k = E_k[f] - 1` chained through a
//! softmax.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dist::GaussianMv;
use crate::divergence::GaussianMixtureApprox;
use crate::error::Error;
use crate::models::{Dataset, Model};
use crate::rng::master_rng;
use crate::Result;

const LN_2PI: f64 = 1.8378770664093454835606594728112;

/// Optimizer settings for the variational fits.
#[derive(Debug, Clone)]
pub struct FitConfig {
    /// Base Adam step size.
    pub step_size: f64,
    /// Reparameterized draws per gradient estimate.
    pub gradient_draws: usize,
    pub max_iterations: usize,
    /// Relative change of the windowed mean ELBO that counts as converged.
    pub tolerance: f64,
    /// Iterations per convergence window.
    pub window: usize,
    /// Initial scale of the covariance factor (diagonal of `L`).
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            step_size: 0.05,
            gradient_draws: 16,
            max_iterations: 20_000,
            tolerance: 1e-4,
            window: 500,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Unconstrained parameters of a Gaussian variational family: mean vector
/// plus a lower-triangular factor with a log-scale diagonal.
#[derive(Debug, Clone)]
pub struct GaussianParams {
    pub mean: DVector<f64>,
    /// Lower triangle; entry `(i, i)` is `ln L_ii`, entry `(i, j)` for
    /// `i > j` is `L_ij`.  The strict upper triangle is ignored.
    pub phi: DMatrix<f64>,
}

impl GaussianParams {
    pub fn init(mean: Vec<f64>, scale: f64) -> Self {
        let d = mean.len();
        let mut phi = DMatrix::zeros(d, d);
        for i in 0..d {
            phi[(i, i)] = scale.ln();
        }
        Self {
            mean: DVector::from_vec(mean),
            phi,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// The lower-triangular covariance factor `L`.
    pub fn chol(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut l = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..i {
                l[(i, j)] = self.phi[(i, j)];
            }
            l[(i, i)] = self.phi[(i, i)].exp();
        }
        l
    }

    fn from_fit(fit: &GaussianFit) -> Self {
        let d = fit.dim();
        let mut phi = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..i {
                phi[(i, j)] = fit.chol[(i, j)];
            }
            phi[(i, i)] = fit.chol[(i, i)].ln();
        }
        Self {
            mean: fit.mean.clone(),
            phi,
        }
    }

    /// Number of free parameters: `d` means plus `d(d+1)/2` factor entries.
    pub fn n_free(dim: usize) -> usize {
        dim + dim * (dim + 1) / 2
    }

    /// Pack into a flat vector (mean first, then the lower triangle row by
    /// row).
    pub fn to_flat(&self) -> DVector<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(Self::n_free(d));
        out.extend(self.mean.iter());
        for i in 0..d {
            for j in 0..=i {
                out.push(self.phi[(i, j)]);
            }
        }
        DVector::from_vec(out)
    }

    pub fn from_flat(dim: usize, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != Self::n_free(dim) {
            return Err(Error::InvalidParameter(format!(
                "flat parameter vector must have length {}, got {}",
                Self::n_free(dim),
                flat.len()
            )));
        }
        let mean = DVector::from_iterator(dim, flat.iter().take(dim).cloned());
        let mut phi = DMatrix::zeros(dim, dim);
        let mut k = dim;
        for i in 0..dim {
            for j in 0..=i {
                phi[(i, j)] = flat[k];
                k += 1;
            }
        }
        Ok(Self { mean, phi })
    }

    fn entropy(&self) -> f64 {
        0.5 * self.dim() as f64 * (LN_2PI + 1.0)
            + (0..self.dim()).map(|i| self.phi[(i, i)]).sum::<f64>()
    }
}

/// ELBO estimate at `params` using the supplied standard normal draws.
pub fn elbo_reparam(
    model: &Model,
    data: &Dataset,
    params: &GaussianParams,
    z_draws: &[DVector<f64>],
) -> Result<f64> {
    if z_draws.is_empty() {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let l = params.chol();
    let mut acc = 0.0;
    for z in z_draws {
        let theta = &params.mean + &l * z;
        acc += model.log_joint(theta.as_slice(), data)?;
    }
    Ok(acc / z_draws.len() as f64 + params.entropy())
}

/// ELBO estimate and its exact gradient (for the given draws) in the
/// `GaussianParams` layout.
pub fn elbo_grad_reparam(
    model: &Model,
    data: &Dataset,
    params: &GaussianParams,
    z_draws: &[DVector<f64>],
) -> Result<(f64, GaussianParams)> {
    if z_draws.is_empty() {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let d = params.dim();
    let l = params.chol();
    let s = z_draws.len() as f64;
    let mut value = 0.0;
    let mut g_mean = DVector::zeros(d);
    let mut g_l = DMatrix::zeros(d, d);
    for z in z_draws {
        let theta = &params.mean + &l * z;
        value += model.log_joint(theta.as_slice(), data)?;
        let g = model.grad_log_joint(theta.as_slice(), data)?;
        g_mean += &g;
        for i in 0..d {
            for j in 0..=i {
                g_l[(i, j)] += g[i] * z[j];
            }
        }
    }
    let mut grad_phi = g_l / s;
    for i in 0..d {
        // Log-diagonal chain rule plus the entropy term d/dphi_ii = 1.
        grad_phi[(i, i)] = grad_phi[(i, i)] * l[(i, i)] + 1.0;
    }
    Ok((
        value / s + params.entropy(),
        GaussianParams {
            mean: g_mean / s,
            phi: grad_phi,
        },
    ))
}

/// A fitted Gaussian variational posterior.
#[derive(Debug, Clone)]
pub struct GaussianFit {
    mean: DVector<f64>,
    /// Lower-triangular covariance factor.
    chol: DMatrix<f64>,
    pub elbo_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-iteration fit trace as CSV text for offline inspection.
pub fn trace_csv(elbo: &[f64], grad_norm: &[f64]) -> String {
    let mut out = String::from("iteration,elbo,grad_norm\n");
    for (i, e) in elbo.iter().enumerate() {
        let g = grad_norm.get(i).copied().unwrap_or(f64::NAN);
        out.push_str(&format!("{i},{e},{g}\n"));
    }
    out
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn cov(&self) -> DMatrix<f64> {
        &self.chol * self.chol.transpose()
    }

    pub fn to_gaussian(&self) -> Result<GaussianMv> {
        let mut cov = self.cov();
        // The product can pick up asymmetry at the last ulp.
        let sym = (&cov + cov.transpose()) * 0.5;
        cov.copy_from(&sym);
        GaussianMv::new(self.mean.iter().cloned().collect(), cov)
    }

    /// Gaussian marginal over a subset of coordinates.
    pub fn marginal(&self, idx: &[usize]) -> Result<GaussianMv> {
        let cov = self.cov();
        for &i in idx {
            if i >= self.dim() {
                return Err(Error::InvalidParameter(format!(
                    "index {i} out of range for dimension {}",
                    self.dim()
                )));
            }
        }
        let mean: Vec<f64> = idx.iter().map(|&i| self.mean[i]).collect();
        let sub = DMatrix::from_fn(idx.len(), idx.len(), |r, c| cov[(idx[r], idx[c])]);
        let sym = (&sub + sub.transpose()) * 0.5;
        GaussianMv::new(mean, sym)
    }

    /// Mean and variance of coordinate `i` conditional on the coordinates
    /// `given_idx` taking the values `given_vals`.
    pub fn conditional_scalar(
        &self,
        i: usize,
        given_idx: &[usize],
        given_vals: &[f64],
    ) -> Result<(f64, f64)> {
        if given_idx.len() != given_vals.len() {
            return Err(Error::InvalidParameter(
                "conditioning indices and values differ in length".into(),
            ));
        }
        if given_idx.contains(&i) || i >= self.dim() {
            return Err(Error::InvalidParameter(format!(
                "target index {i} invalid for the conditioning set"
            )));
        }
        let cov = self.cov();
        if given_idx.is_empty() {
            return Ok((self.mean[i], cov[(i, i)]));
        }
        let b = given_idx.len();
        let sigma_bb = DMatrix::from_fn(b, b, |r, c| cov[(given_idx[r], given_idx[c])]);
        let sigma_ib = DVector::from_fn(b, |r, _| cov[(i, given_idx[r])]);
        let diff = DVector::from_fn(b, |r, _| given_vals[r] - self.mean[given_idx[r]]);
        let sym = (&sigma_bb + sigma_bb.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(sym).ok_or_else(|| {
            Error::Numerical("conditioning block is not positive definite".into())
        })?;
        let w = chol.solve(&sigma_ib);
        let mean = self.mean[i] + w.dot(&diff);
        let var = (cov[(i, i)] - w.dot(&sigma_ib)).max(1e-300);
        Ok((mean, var))
    }
}

/// Average conditional prior-to-posterior divergence for one random
/// effect under a fitted joint Gaussian posterior.
///
/// For each `(beta, log D)` draw, conditions `q` on those coordinates to
/// get the 1-D conditional of coordinate `unit`, and measures its
/// divergence from the conditional prior `N(0, D)`.  Returns the average
/// plus the number of draws whose conditional variance had to be clipped
/// at 1e-12.
pub fn kl1_star(
    q: &GaussianFit,
    unit: usize,
    theta2_idx: (usize, usize),
    theta2_draws: &[[f64; 2]],
    order: crate::divergence::DivergenceOrder,
) -> Result<(f64, usize)> {
    if theta2_draws.is_empty() {
        return Err(Error::InvalidParameter("need at least one draw".into()));
    }
    let mut acc = 0.0;
    let mut clipped = 0usize;
    for draw in theta2_draws {
        let (mc, mut vc) =
            q.conditional_scalar(unit, &[theta2_idx.0, theta2_idx.1], &[draw[0], draw[1]])?;
        if vc < 1e-12 {
            vc = 1e-12;
            clipped += 1;
        }
        let d = draw[1].exp();
        acc += crate::divergence::renyi_gaussian_1d(mc, vc, 0.0, d, order)?;
    }
    Ok((acc / theta2_draws.len() as f64, clipped))
}

struct Adam {
    m: DVector<f64>,
    v: DVector<f64>,
    t: usize,
    step: f64,
}

impl Adam {
    fn new(n: usize, step: f64) -> Self {
        Self {
            m: DVector::zeros(n),
            v: DVector::zeros(n),
            t: 0,
            step,
        }
    }

    /// Ascent step: `params += step * m_hat / (sqrt(v_hat) + eps)`.
    fn update(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let t = self.t as i32;
        // Mild decay so the iterates settle instead of dithering at the
        // gradient-noise floor.
        let step = self.step / (1.0 + self.t as f64 / 2000.0).powf(0.55);
        for k in 0..params.len() {
            self.m[k] = B1 * self.m[k] + (1.0 - B1) * grad[k];
            self.v[k] = B2 * self.v[k] + (1.0 - B2) * grad[k] * grad[k];
            let m_hat = self.m[k] / (1.0 - B1.powi(t));
            let v_hat = self.v[k] / (1.0 - B2.powi(t));
            params[k] += step * m_hat / (v_hat.sqrt() + EPS);
        }
    }
}

fn param_dim(model: &Model, data: &Dataset) -> Result<usize> {
    match model {
        Model::NormalKnownVar { .. } => Ok(1),
        Model::BetaBinomialHier { .. } => Ok(2),
        Model::LogisticRe { .. } => Ok(data.grouped()?.len() + 2),
        _ => Err(Error::Unsupported(format!(
            "{}: variational fit needs a log-joint gradient",
            model.name()
        ))),
    }
}

fn default_init_mean(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    match model {
        Model::NormalKnownVar { mu0, .. } => Ok(vec![*mu0]),
        Model::BetaBinomialHier { prior } => Ok(prior.mean().iter().cloned().collect()),
        Model::LogisticRe {
            beta_mean,
            log_d_mean,
            ..
        } => {
            let units = data.grouped()?.len();
            let mut m = vec![0.0; units];
            m.push(*beta_mean);
            m.push(*log_d_mean);
            Ok(m)
        }
        _ => Err(Error::Unsupported(format!(
            "{}: variational fit needs a log-joint gradient",
            model.name()
        ))),
    }
}

/// Convergence monitor: the ELBO on a fixed draw set is a deterministic
/// function of the parameters, so its windowed change measures parameter
/// movement rather than gradient noise.
struct ValMonitor {
    z: Vec<DVector<f64>>,
    last: Option<f64>,
}

impl ValMonitor {
    fn new(dim: usize, seed: u64) -> Self {
        let mut rng = master_rng(seed ^ 0x5bf0_3635_9035_21c7);
        Self {
            z: draw_z(dim, 64, &mut rng),
            last: None,
        }
    }

    fn converged(&mut self, value: f64, tol: f64) -> bool {
        let done = match self.last {
            Some(prev) => (value - prev).abs() / prev.abs().max(1.0) < tol,
            None => false,
        };
        self.last = Some(value);
        done
    }
}

fn draw_z<R: Rng + ?Sized>(dim: usize, count: usize, rng: &mut R) -> Vec<DVector<f64>> {
    (0..count)
        .map(|_| DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal))))
        .collect()
}

/// Fit a full-covariance Gaussian posterior approximation.  A warm start
/// resumes from a previous fit's parameters.
pub fn fit_gaussian_vb(
    model: &Model,
    data: &Dataset,
    config: &FitConfig,
    warm_start: Option<&GaussianFit>,
) -> Result<GaussianFit> {
    let dim = param_dim(model, data)?;
    let mut params = match warm_start {
        Some(fit) => {
            if fit.dim() != dim {
                return Err(Error::InvalidParameter(format!(
                    "warm start has dimension {}, model needs {dim}",
                    fit.dim()
                )));
            }
            GaussianParams::from_fit(fit)
        }
        None => GaussianParams::init(default_init_mean(model, data)?, config.init_scale),
    };
    let mut rng = master_rng(config.seed);
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), config.step_size);
    let mut monitor = ValMonitor::new(dim, config.seed);
    let mut trace = Vec::new();
    let mut grad_norms = Vec::new();
    let mut converged = false;
    // Average the iterates over each window; the average has far less
    // stationary gradient noise than the last iterate.
    let mut window_sum = DVector::zeros(flat.len());
    let mut window_count = 0usize;
    let mut averaged = flat.clone();
    while trace.len() < config.max_iterations {
        let z = draw_z(dim, config.gradient_draws, &mut rng);
        let (elbo, grad) = elbo_grad_reparam(model, data, &params, &z)?;
        let grad_flat = grad.to_flat();
        grad_norms.push(grad_flat.norm());
        adam.update(&mut flat, &grad_flat);
        params = GaussianParams::from_flat(dim, &flat)?;
        trace.push(elbo);
        window_sum += &flat;
        window_count += 1;
        if trace.len() % config.window == 0 {
            averaged = &window_sum / window_count as f64;
            window_sum.fill(0.0);
            window_count = 0;
            let avg_params = GaussianParams::from_flat(dim, &averaged)?;
            let v = elbo_reparam(model, data, &avg_params, &monitor.z)?;
            if monitor.converged(v, config.tolerance) {
                converged = true;
                break;
            }
        }
    }
    if window_count > 0 {
        averaged = &window_sum / window_count as f64;
    }
    params = GaussianParams::from_flat(dim, &averaged)?;
    let iterations = trace.len();
    Ok(GaussianFit {
        mean: params.mean.clone(),
        chol: params.chol(),
        elbo_trace: trace,
        grad_norm_trace: grad_norms,
        iterations,
        converged,
    })
}

/// A fitted two-component Gaussian-mixture posterior approximation.
#[derive(Debug, Clone)]
pub struct MixtureFit {
    pub mixture: GaussianMixtureApprox,
    pub elbo_trace: Vec<f64>,
    pub grad_norm_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct MixtureParams {
    comps: [GaussianParams; 2],
    logits: [f64; 2],
}

impl MixtureParams {
    fn weights(&self) -> [f64; 2] {
        let m = self.logits[0].max(self.logits[1]);
        let e0 = (self.logits[0] - m).exp();
        let e1 = (self.logits[1] - m).exp();
        [e0 / (e0 + e1), e1 / (e0 + e1)]
    }

    fn to_flat(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.comps[0].to_flat().iter().cloned().collect();
        v.extend(self.comps[1].to_flat().iter());
        v.extend(self.logits);
        DVector::from_vec(v)
    }

    fn from_flat(dim: usize, flat: &DVector<f64>) -> Result<Self> {
        let n = GaussianParams::n_free(dim);
        let part = |lo: usize| DVector::from_iterator(n, (lo..lo + n).map(|k| flat[k]));
        Ok(Self {
            comps: [
                GaussianParams::from_flat(dim, &part(0))?,
                GaussianParams::from_flat(dim, &part(n))?,
            ],
            logits: [flat[2 * n], flat[2 * n + 1]],
        })
    }
}

/// Fit a two-component Gaussian mixture posterior approximation.
///
/// If the fit collapses (one weight effectively zero) the degenerate
/// component is re-seeded once near the surviving one and the
/// optimization resumes.
pub fn fit_gmm_vb(
    model: &Model,
    data: &Dataset,
    config: &FitConfig,
    warm_start: Option<&MixtureFit>,
) -> Result<MixtureFit> {
    let dim = param_dim(model, data)?;
    let mut rng = master_rng(config.seed.wrapping_add(0x9e3779b97f4a7c15));
    let mut params = match warm_start {
        Some(fit) => {
            let [w1, w2] = fit.mixture.weights();
            let from = |g: &GaussianMv| -> Result<GaussianParams> {
                let chol = nalgebra::Cholesky::new(g.cov().clone()).ok_or_else(|| {
                    Error::Numerical("warm-start covariance is not positive definite".into())
                })?;
                Ok(GaussianParams::from_fit(&GaussianFit {
                    mean: g.mean().clone(),
                    chol: chol.l(),
                    elbo_trace: vec![],
                    grad_norm_trace: vec![],
                    iterations: 0,
                    converged: true,
                }))
            };
            let [c1, c2] = fit.mixture.components();
            MixtureParams {
                comps: [from(c1)?, from(c2)?],
                logits: [w1.max(1e-6).ln(), w2.max(1e-6).ln()],
            }
        }
        None => {
            let base = default_init_mean(model, data)?;
            let jitter = |rng: &mut crate::rng::Rng| -> Vec<f64> {
                base.iter()
                    .map(|m| m + 0.5 * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            MixtureParams {
                comps: [
                    GaussianParams::init(jitter(&mut rng), config.init_scale),
                    GaussianParams::init(jitter(&mut rng), config.init_scale),
                ],
                logits: [0.0, 0.0],
            }
        }
    };

    let mut restarts = 0;
    loop {
        let mut flat = params.to_flat();
        let mut adam = Adam::new(flat.len(), config.step_size);
        let mut monitor = ValMonitor::new(dim, config.seed);
        let mut trace = Vec::new();
        let mut grad_norms = Vec::new();
        let mut converged = false;
        while trace.len() < config.max_iterations {
            let (elbo, grad) = mixture_elbo_grad(model, data, &params, config, &mut rng)?;
            grad_norms.push(grad.norm());
            adam.update(&mut flat, &grad);
            params = MixtureParams::from_flat(dim, &flat)?;
            trace.push(elbo);
            if trace.len() % config.window == 0 {
                let v = mixture_elbo_fixed(model, data, &params, &monitor.z)?;
                if monitor.converged(v, config.tolerance) {
                    converged = true;
                    break;
                }
            }
        }
        let w = params.weights();
        if w[0].min(w[1]) < 0.02 && restarts == 0 {
            // Re-seed the dead component beside the survivor and retry.
            restarts += 1;
            let (live, dead) = if w[0] >= w[1] { (0, 1) } else { (1, 0) };
            let mut reseeded = params.comps[live].clone();
            for k in 0..dim {
                let sd = reseeded.phi[(k, k)].exp();
                reseeded.mean[k] += 2.0 * sd * rng.sample::<f64, _>(StandardNormal);
            }
            params.comps[dead] = reseeded;
            params.logits = [0.0, 0.0];
            continue;
        }
        let iterations = trace.len();
        let mixture = GaussianMixtureApprox::new(
            w,
            [
                gaussian_from_params(&params.comps[0])?,
                gaussian_from_params(&params.comps[1])?,
            ],
        )?;
        return Ok(MixtureFit {
            mixture,
            elbo_trace: trace,
            grad_norm_trace: grad_norms,
            iterations,
            converged,
        });
    }
}

/// Deterministic mixture ELBO on a fixed draw set, shared per component
/// through the reparameterization.
fn mixture_elbo_fixed(
    model: &Model,
    data: &Dataset,
    params: &MixtureParams,
    z: &[DVector<f64>],
) -> Result<f64> {
    let dim = params.comps[0].dim();
    let w = params.weights();
    let ls = [params.comps[0].chol(), params.comps[1].chol()];
    let log_dets: [f64; 2] = [
        (0..dim).map(|i| params.comps[0].phi[(i, i)]).sum(),
        (0..dim).map(|i| params.comps[1].phi[(i, i)]).sum(),
    ];
    let comp_log_density = |k: usize, theta: &DVector<f64>| -> f64 {
        let diff = theta - &params.comps[k].mean;
        let v = ls[k]
            .solve_lower_triangular(&diff)
            .expect("positive diagonal by construction");
        -0.5 * dim as f64 * LN_2PI - log_dets[k] - 0.5 * v.norm_squared()
    };
    let mut acc = 0.0;
    for k in 0..2 {
        let mut comp_acc = 0.0;
        for zi in z {
            let theta = &params.comps[k].mean + &ls[k] * zi;
            let terms = [
                w[0].ln() + comp_log_density(0, &theta),
                w[1].ln() + comp_log_density(1, &theta),
            ];
            let log_q = crate::special::log_sum_exp(&terms);
            comp_acc += model.log_joint(theta.as_slice(), data)? - log_q;
        }
        acc += w[k] * comp_acc / z.len() as f64;
    }
    Ok(acc)
}

fn gaussian_from_params(p: &GaussianParams) -> Result<GaussianMv> {
    let l = p.chol();
    let cov = &l * l.transpose();
    let sym = (&cov + cov.transpose()) * 0.5;
    GaussianMv::new(p.mean.iter().cloned().collect(), sym)
}

/// One stochastic estimate of the mixture ELBO and its gradient in the
/// `MixtureParams` flat layout.
fn mixture_elbo_grad(
    model: &Model,
    data: &Dataset,
    params: &MixtureParams,
    config: &FitConfig,
    rng: &mut crate::rng::Rng,
) -> Result<(f64, DVector<f64>)> {
    let dim = params.comps[0].dim();
    let w = params.weights();
    let ls = [params.comps[0].chol(), params.comps[1].chol()];
    let log_dets: [f64; 2] = [
        (0..dim).map(|i| params.comps[0].phi[(i, i)]).sum(),
        (0..dim).map(|i| params.comps[1].phi[(i, i)]).sum(),
    ];
    // log q_k(theta) and its theta-gradient through the triangular solve.
    let comp_log_density = |k: usize, theta: &DVector<f64>| -> (f64, DVector<f64>) {
        let diff = theta - &params.comps[k].mean;
        let v = ls[k]
            .solve_lower_triangular(&diff)
            .expect("positive diagonal by construction");
        let ld = -0.5 * dim as f64 * LN_2PI - log_dets[k] - 0.5 * v.dot(&v);
        let grad = -ls[k]
            .tr_solve_lower_triangular(&v)
            .expect("positive diagonal by construction");
        (ld, grad)
    };
    let s = config.gradient_draws;
    let mut e_f = [0.0f64; 2];
    let mut g_mean = [DVector::zeros(dim), DVector::zeros(dim)];
    let mut g_l: [DMatrix<f64>; 2] = [DMatrix::zeros(dim, dim), DMatrix::zeros(dim, dim)];
    for k in 0..2 {
        for _ in 0..s {
            let z = DVector::from_iterator(
                dim,
                (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)),
            );
            let theta = &params.comps[k].mean + &ls[k] * &z;
            let (ld0, gq0) = comp_log_density(0, &theta);
            let (ld1, gq1) = comp_log_density(1, &theta);
            let terms = [w[0].ln() + ld0, w[1].ln() + ld1];
            let log_q = crate::special::log_sum_exp(&terms);
            let r = [(terms[0] - log_q).exp(), (terms[1] - log_q).exp()];
            let grad_log_q = &gq0 * r[0] + &gq1 * r[1];
            let f = model.log_joint(theta.as_slice(), data)? - log_q;
            let g_theta = model.grad_log_joint(theta.as_slice(), data)? - grad_log_q;
            e_f[k] += f;
            g_mean[k] += &g_theta;
            for i in 0..dim {
                for j in 0..=i {
                    g_l[k][(i, j)] += g_theta[i] * z[j];
                }
            }
        }
        e_f[k] /= s as f64;
    }
    let elbo = w[0] * e_f[0] + w[1] * e_f[1];
    let mut grad = Vec::with_capacity(2 * GaussianParams::n_free(dim) + 2);
    for k in 0..2 {
        let scale = w[k] / s as f64;
        let gm = &g_mean[k] * scale;
        grad.extend(gm.iter());
        for i in 0..dim {
            for j in 0..=i {
                let mut g = g_l[k][(i, j)] * scale;
                if i == j {
                    g *= ls[k][(i, i)];
                }
                grad.push(g);
            }
        }
    }
    // Softmax chain of d ELBO / d w_k = E_k[f] - 1.
    grad.push(w[0] * (e_f[0] - elbo));
    grad.push(w[1] * (e_f[1] - elbo));
    Ok((elbo, DVector::from_vec(grad)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Dataset, GroupRow, Model};
    use approx::assert_relative_eq;

    #[test]
    fn elbo_gradient_matches_finite_differences() {
        let model = Model::LogisticRe {
            beta_mean: 0.0,
            beta_var: 1000.0,
            log_d_mean: -3.5,
            log_d_var: 1.0,
        };
        let data = Dataset::Grouped(vec![
            GroupRow { unit: 1, y: 41, n: 143 },
            GroupRow { unit: 2, y: 25, n: 187 },
            GroupRow { unit: 3, y: 24, n: 323 },
        ]);
        let dim = 5;
        let mut params = GaussianParams::init(vec![0.1, -0.2, 0.05, -1.5, -3.0], 0.3);
        params.phi[(3, 1)] = 0.2;
        params.phi[(4, 0)] = -0.15;
        // Common random numbers: the same draws on both sides of the
        // difference make the comparison exact up to O(h^2).
        let mut rng = master_rng(7);
        let z = draw_z(dim, 32, &mut rng);
        let (_, grad) = elbo_grad_reparam(&model, &data, &params, &z).unwrap();
        let grad_flat = grad.to_flat();
        let flat = params.to_flat();
        let h = 1e-5;
        for k in 0..flat.len() {
            let mut up = flat.clone();
            let mut dn = flat.clone();
            up[k] += h;
            dn[k] -= h;
            let fu = elbo_reparam(&model, &data, &GaussianParams::from_flat(dim, &up).unwrap(), &z)
                .unwrap();
            let fd = elbo_reparam(&model, &data, &GaussianParams::from_flat(dim, &dn).unwrap(), &z)
                .unwrap();
            let fdiff = (fu - fd) / (2.0 * h);
            assert_relative_eq!(grad_flat[k], fdiff, max_relative = 1e-4, epsilon = 1e-6);
        }
    }

    #[test]
    fn gaussian_fit_recovers_conjugate_posterior() {
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 4.0,
            sigma_sq: 1.0,
        };
        let data = Dataset::Scalars(vec![1.2, 0.7, 1.9, 1.4]);
        // Exact posterior: precision 1/4 + 4, mean weighted accordingly.
        let n = 4.0;
        let ybar = (1.2 + 0.7 + 1.9 + 1.4) / n;
        let post_var = 1.0 / (0.25 + n);
        let post_mean = post_var * n * ybar;
        let config = FitConfig {
            seed: 3,
            ..FitConfig::default()
        };
        let fit = fit_gaussian_vb(&model, &data, &config, None).unwrap();
        assert!(fit.converged, "fit did not converge in {} iters", fit.iterations);
        assert!(
            (fit.mean()[0] - post_mean).abs() < 1e-2,
            "mean {} vs {post_mean} after {} iters",
            fit.mean()[0],
            fit.iterations
        );
        assert!(
            (fit.cov()[(0, 0)] - post_var).abs() / post_var < 1e-2 * 3.0,
            "var {} vs {post_var} after {} iters",
            fit.cov()[(0, 0)],
            fit.iterations
        );

        // Warm start from the solution converges quickly.
        let warm = fit_gaussian_vb(&model, &data, &config, Some(&fit)).unwrap();
        assert!(warm.iterations <= fit.iterations);
        assert!((warm.mean()[0] - post_mean).abs() < 1e-2);
    }

    #[test]
    fn mixture_fit_matches_unimodal_posterior() {
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 4.0,
            sigma_sq: 1.0,
        };
        let data = Dataset::Scalars(vec![1.2, 0.7, 1.9, 1.4]);
        let n = 4.0;
        let ybar = (1.2 + 0.7 + 1.9 + 1.4) / n;
        let post_var = 1.0 / (0.25 + n);
        let post_mean = post_var * n * ybar;
        let config = FitConfig {
            seed: 11,
            ..FitConfig::default()
        };
        let fit = fit_gmm_vb(&model, &data, &config, None).unwrap();
        let mix = &fit.mixture;
        let mean = mix.mean()[0];
        let [w1, w2] = mix.weights();
        let [c1, c2] = mix.components();
        let second_moment = w1 * (c1.cov()[(0, 0)] + c1.mean()[0].powi(2))
            + w2 * (c2.cov()[(0, 0)] + c2.mean()[0].powi(2));
        let var = second_moment - mean * mean;
        assert!((mean - post_mean).abs() < 2e-2, "mean {mean} vs {post_mean}");
        assert!((var - post_var).abs() / post_var < 0.1, "var {var} vs {post_var}");
    }

    #[test]
    fn conditional_scalar_matches_direct_formula() {
        // Hand-checkable 3-d Gaussian.
        let fit = GaussianFit {
            mean: DVector::from_vec(vec![1.0, -0.5, 2.0]),
            chol: DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 0.0, 0.0, 0.4, 0.9, 0.0, -0.2, 0.3, 0.8],
            ),
            elbo_trace: vec![],
            grad_norm_trace: vec![],
            iterations: 0,
            converged: true,
        };
        let cov = fit.cov();
        let (m, v) = fit.conditional_scalar(0, &[1, 2], &[0.0, 2.5]).unwrap();
        // Direct 2x2 inversion.
        let sbb = DMatrix::from_row_slice(
            2,
            2,
            &[cov[(1, 1)], cov[(1, 2)], cov[(2, 1)], cov[(2, 2)]],
        );
        let sib = DVector::from_vec(vec![cov[(0, 1)], cov[(0, 2)]]);
        let inv = sbb.try_inverse().unwrap();
        let w = &inv * &sib;
        let m_ref = fit.mean()[0] + w.dot(&DVector::from_vec(vec![0.0 + 0.5, 2.5 - 2.0]));
        let v_ref = cov[(0, 0)] - w.dot(&sib);
        assert_relative_eq!(m, m_ref, max_relative = 1e-10);
        assert_relative_eq!(v, v_ref, max_relative = 1e-10);
        // Empty conditioning set returns the marginal.
        let (m0, v0) = fit.conditional_scalar(1, &[], &[]).unwrap();
        assert_relative_eq!(m0, -0.5);
        assert_relative_eq!(v0, cov[(1, 1)]);
    }

    #[test]
    fn flat_round_trip() {
        let mut p = GaussianParams::init(vec![0.5, -1.0, 2.0], 0.2);
        p.phi[(1, 0)] = 0.7;
        p.phi[(2, 1)] = -0.3;
        let q = GaussianParams::from_flat(3, &p.to_flat()).unwrap();
        assert_eq!(p.mean, q.mean);
        for i in 0..3 {
            for j in 0..=i {
                assert_eq!(p.phi[(i, j)], q.phi[(i, j)]);
            }
        }
        assert!(GaussianParams::from_flat(3, &DVector::zeros(4)).is_err());
    }
}
