//! The checking engine.
//!
//! A check compares the prior-to-posterior divergence of the observed data
//! against its distribution when datasets are drawn from the prior
//! predictive: small tail probabilities flag a prior placing its mass far
//! from what the data support.  This module houses the plain check, the
//! predictive-density comparator, hierarchical and cross-validated
//! per-unit variants, one-sided variants, the large-sample limiting
//! p-value, and the exact curve for the shifted-exponential model.
//!
//! Replicate `i` always draws its generator from `(seed, i)`, so results
//! are identical for any worker count.  Ties count toward the p-value:
//! the comparison is `>=` with a tiny relative slack so analytically
//! equal discrepancies compare equal in floating point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{BetaDist, ExponentialDist, GaussianMv, InverseGamma, TruncatedExponential};
use crate::divergence::{
    gmm_kl_upper_bound, renyi_beta, renyi_gaussian_1d, renyi_inverse_gamma, renyi_nig,
    renyi_truncexp_vs_exp, DivergenceOrder, ShiftedExpScalars,
};
use crate::error::Error;
use crate::models::{
    posterior_beta_binomial, posterior_nig, posterior_normal_known_var, posterior_shifted_exp,
    Dataset, GroupRow, Model,
};
use crate::rng::{master_rng, replicate_rng};
use crate::variational::{fit_gaussian_vb, fit_gmm_vb, kl1_star, FitConfig, GaussianFit};
use crate::Result;

/// Relative slack used when comparing discrepancies, so analytically tied
/// values count as ties despite floating-point noise.
const TIE_SLACK: f64 = 1e-12;

fn ge_with_slack(a: f64, b: f64) -> bool {
    a >= b - TIE_SLACK * (1.0 + b.abs())
}

fn le_with_slack(a: f64, b: f64) -> bool {
    a <= b + TIE_SLACK * (1.0 + b.abs())
}

/// Outcome of one check, serializable as a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// One of plain, em, hier1, hier2, hier1_cv, hier1_one_sided,
    /// asymptotic.
    pub variant: String,
    pub order: DivergenceOrder,
    pub discrepancy_obs: f64,
    pub p_value: f64,
    /// Binomial Monte Carlo standard error; absent on exact/enumeration
    /// paths.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mc_std_error: Option<f64>,
    /// Number of reference replicates (outcome-space size on the
    /// enumeration path).
    pub replicates: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inner_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub unit: Option<usize>,
    /// Finite replicate discrepancies, in replicate order.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub replicate_discrepancies: Option<Vec<f64>>,
    pub flags: Vec<String>,
}

impl CheckReport {
    fn new(variant: &str, order: DivergenceOrder, seed: u64) -> Self {
        Self {
            variant: variant.to_string(),
            order,
            discrepancy_obs: f64::NAN,
            p_value: f64::NAN,
            mc_std_error: None,
            replicates: 0,
            seed,
            inner_draws: None,
            unit: None,
            replicate_discrepancies: None,
            flags: Vec::new(),
        }
    }
}

fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Divergence of the posterior for `data` from the prior.  Empty data
/// leaves the posterior equal to the prior, so the discrepancy is zero.
pub fn discrepancy(model: &Model, data: &Dataset, order: DivergenceOrder) -> Result<f64> {
    model.validate()?;
    if data.is_empty() {
        return Ok(0.0);
    }
    match model {
        Model::NormalKnownVar {
            mu0,
            sigma0_sq,
            sigma_sq,
        } => {
            let y = data.scalars()?;
            let n = y.len() as f64;
            let ybar = y.iter().sum::<f64>() / n;
            let prior = GaussianMv::univariate(*mu0, *sigma0_sq)?;
            let post = posterior_normal_known_var(&prior, sigma_sq / n, ybar)?;
            renyi_gaussian_1d(post.mean()[0], post.cov()[(0, 0)], *mu0, *sigma0_sq, order)
        }
        Model::Binomial { a, b, n } => {
            let y = model.sufficient_statistic(data)?[0] as u64;
            let prior = BetaDist::new(*a, *b)?;
            renyi_beta(&posterior_beta_binomial(&prior, *n, y)?, &prior, order)
        }
        Model::NormalNig {
            mu0,
            lambda0,
            a,
            b,
        } => {
            let prior = crate::dist::NormalInverseGamma::new(*mu0, *lambda0, *a, *b)?;
            renyi_nig(&posterior_nig(&prior, data.scalars()?)?, &prior, order)
        }
        Model::ShiftedExp { r, kappa } => {
            let y = data.scalars()?;
            let prior = ExponentialDist::new(*kappa)?;
            let post = posterior_shifted_exp(&prior, *r, y)?;
            renyi_truncexp_vs_exp(
                &post,
                &prior,
                order,
                ShiftedExpScalars {
                    n: y.len() as u64,
                    r: *r,
                    kappa: *kappa,
                },
            )
        }
        Model::BetaBinomialHier { .. } | Model::LogisticRe { .. } => Err(Error::Unsupported(
            format!(
                "{}: no exact posterior; use the variational check paths",
                model.name()
            ),
        )),
    }
}

/// Calibrate the observed discrepancy against `m` prior-predictive
/// replicate discrepancies evaluated by `eval`.
fn mc_calibrate<F>(
    m: usize,
    seed: u64,
    d_obs: f64,
    eval: F,
) -> Result<(f64, f64, Vec<f64>, usize)>
where
    F: Fn(usize, &mut crate::rng::Rng) -> Result<f64> + Sync,
{
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    if !d_obs.is_finite() {
        return Err(Error::Numerical(
            "observed discrepancy is not finite; this order is unavailable for the model".into(),
        ));
    }
    let draws: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            eval(i, &mut rng)
        })
        .collect::<Result<Vec<f64>>>()?;
    let kept: Vec<f64> = draws.iter().cloned().filter(|d| d.is_finite()).collect();
    let excluded = m - kept.len();
    if excluded as f64 > 0.01 * m as f64 {
        return Err(Error::Numerical(format!(
            "{excluded} of {m} replicate discrepancies were non-finite"
        )));
    }
    let count = kept.iter().filter(|d| ge_with_slack(**d, d_obs)).count();
    let p = count as f64 / kept.len() as f64;
    Ok((p, binomial_se(p, kept.len()), kept, excluded))
}

/// Tail probability of the observed divergence under the prior predictive.
///
/// Discrete models with a small outcome space are enumerated exactly;
/// otherwise `m` replicate datasets are drawn and checked in parallel.
pub fn conflict_p_value(
    model: &Model,
    data_obs: &Dataset,
    order: DivergenceOrder,
    m: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("plain", order, seed);
    let d_obs = discrepancy(model, data_obs, order)?;
    report.discrepancy_obs = d_obs;
    if let Model::Binomial { n, .. } = model {
        if *n as usize + 1 <= 10_000 {
            // Exact enumeration over the outcome space.  Normalizing by
            // the summed mass keeps an all-ties case at exactly 1.
            let mut p = 0.0;
            let mut total = 0.0;
            let mut ds = Vec::with_capacity(*n as usize + 1);
            for y in 0..=*n {
                let data = Dataset::Scalars(vec![y as f64]);
                let d = discrepancy(model, &data, order)?;
                let pmf = model.predictive_log_density_t(&data)?.exp();
                total += pmf;
                if ge_with_slack(d, d_obs) {
                    p += pmf;
                }
                ds.push(d);
            }
            report.p_value = (p / total).min(1.0);
            report.replicates = *n as usize + 1;
            report.replicate_discrepancies = Some(ds);
            report.flags.push("enumeration".into());
            return Ok(report);
        }
    }
    let (p, se, kept, excluded) = mc_calibrate(m, seed, d_obs, |_, rng| {
        let y = model.prior_predictive_sample(data_obs, rng)?;
        discrepancy(model, &y, order)
    })?;
    report.p_value = p;
    report.mc_std_error = Some(se);
    report.replicates = m;
    report.replicate_discrepancies = Some(kept);
    if excluded > 0 {
        report.flags.push(format!("excluded_non_finite:{excluded}"));
    }
    Ok(report)
}

/// Comparator check: how unusual is the predictive density value of the
/// observed sufficient statistic.  Low density values count as surprising,
/// so the tail is `p(T) <= p(t_obs)`.
pub fn em_p_value(model: &Model, data_obs: &Dataset, m: usize, seed: u64) -> Result<CheckReport> {
    let mut report = CheckReport::new("em", DivergenceOrder::Kl, seed);
    let lp_obs = model.predictive_log_density_t(data_obs)?;
    report.discrepancy_obs = lp_obs;
    if let Model::Binomial { n, .. } = model {
        if *n as usize + 1 <= 10_000 {
            let mut p = 0.0;
            let mut total = 0.0;
            let mut lps = Vec::with_capacity(*n as usize + 1);
            for y in 0..=*n {
                let data = Dataset::Scalars(vec![y as f64]);
                let lp = model.predictive_log_density_t(&data)?;
                total += lp.exp();
                if le_with_slack(lp, lp_obs) {
                    p += lp.exp();
                }
                lps.push(lp);
            }
            report.p_value = (p / total).min(1.0);
            report.replicates = *n as usize + 1;
            report.replicate_discrepancies = Some(lps);
            report.flags.push("enumeration".into());
            return Ok(report);
        }
    }
    if m == 0 {
        return Err(Error::InvalidParameter("M must be at least 1".into()));
    }
    let draws: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let y = model.prior_predictive_sample(data_obs, &mut rng)?;
            model.predictive_log_density_t(&y)
        })
        .collect::<Result<Vec<f64>>>()?;
    let kept: Vec<f64> = draws.iter().cloned().filter(|d| d.is_finite()).collect();
    let excluded = m - kept.len();
    if excluded as f64 > 0.01 * m as f64 {
        return Err(Error::Numerical(format!(
            "{excluded} of {m} replicate density values were non-finite"
        )));
    }
    let count = kept.iter().filter(|lp| le_with_slack(**lp, lp_obs)).count();
    let p = count as f64 / kept.len() as f64;
    report.p_value = p;
    report.mc_std_error = Some(binomial_se(p, kept.len()));
    report.replicates = m;
    report.replicate_discrepancies = Some(kept);
    if excluded > 0 {
        report.flags.push(format!("excluded_non_finite:{excluded}"));
    }
    Ok(report)
}

/// Which block of a hierarchical prior a check targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    /// Location given scale (`mu | sigma^2`) in the location-scale model;
    /// the complementary marginal check targets `sigma^2`.
    LocationGivenScale,
    /// One random effect `u_i` given `(beta, log D)` in the
    /// random-effects model.  Zero-based row index.
    Unit(usize),
}

/// Settings for checks that go through variational posterior fits.
#[derive(Debug, Clone)]
pub struct VbCheckConfig {
    /// Fit settings for the observed dataset (and held-out fits).
    pub fit: FitConfig,
    /// Fit settings for replicate refits (warm-started, so shorter).
    pub replicate_fit: FitConfig,
}

impl Default for VbCheckConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            replicate_fit: FitConfig {
                max_iterations: 4000,
                window: 250,
                ..FitConfig::default()
            },
        }
    }
}

fn replicate_fit_config(base: &FitConfig, seed: u64, i: u64) -> FitConfig {
    FitConfig {
        seed: base
            .seed
            .wrapping_add(seed.rotate_left(17))
            .wrapping_add(i.wrapping_mul(0x2545f4914f6cdd1d)),
        ..base.clone()
    }
}

/// Conditional-block check: is the conditional prior of the first block in
/// conflict with the data, judged with the second block integrated out
/// against the observed-data posterior.
pub fn hierarchical_p1(
    model: &Model,
    split: Split,
    data_obs: &Dataset,
    order: DivergenceOrder,
    m: usize,
    inner_draws: usize,
    seed: u64,
    vb: &VbCheckConfig,
) -> Result<CheckReport> {
    match (model, split) {
        (Model::NormalNig { .. }, Split::LocationGivenScale) => {
            nig_hier1(model, data_obs, order, m, inner_draws, seed)
        }
        (Model::LogisticRe { .. }, Split::Unit(unit)) => {
            let mut reports = logistic_unit_checks(
                model,
                data_obs,
                Some(unit),
                order,
                m,
                inner_draws,
                seed,
                vb,
                false,
                false,
            )?;
            Ok(reports.remove(0))
        }
        _ => Err(Error::Unsupported(
            "this model/split pair has no conditional-block check".into(),
        )),
    }
}

/// Cross-validated variant: the second-block posterior leaves out the
/// checked unit in both the expectation and the reference distribution.
pub fn hierarchical_p1_cv(
    model: &Model,
    split: Split,
    data_obs: &Dataset,
    order: DivergenceOrder,
    m: usize,
    inner_draws: usize,
    seed: u64,
    vb: &VbCheckConfig,
) -> Result<CheckReport> {
    let unit = match (model, split) {
        (Model::LogisticRe { .. }, Split::Unit(unit)) => unit,
        _ => {
            return Err(Error::Unsupported(
                "cross-validated checks need a per-unit random-effects model".into(),
            ))
        }
    };
    let mut reports = logistic_unit_checks(
        model, data_obs, Some(unit), order, m, inner_draws, seed, vb, true, false,
    )?;
    Ok(reports.remove(0))
}

/// One-sided per-unit variant: only upward departures of the random effect
/// count as surprising, with the sign convention keyed on the observed
/// posterior mean of the effect.
pub fn one_sided_p1(
    model: &Model,
    split: Split,
    data_obs: &Dataset,
    order: DivergenceOrder,
    m: usize,
    inner_draws: usize,
    seed: u64,
    vb: &VbCheckConfig,
) -> Result<CheckReport> {
    let unit = match (model, split) {
        (Model::LogisticRe { .. }, Split::Unit(unit)) => unit,
        _ => {
            return Err(Error::Unsupported(
                "one-sided checks need a per-unit random-effects model".into(),
            ))
        }
    };
    let mut reports = logistic_unit_checks(
        model, data_obs, Some(unit), order, m, inner_draws, seed, vb, false, true,
    )?;
    Ok(reports.remove(0))
}

/// Marginal second-block check: the plain check applied to the marginal
/// posterior and prior of the second block, with the full prior predictive
/// as reference.
pub fn hierarchical_p2(
    model: &Model,
    split: Split,
    data_obs: &Dataset,
    order: DivergenceOrder,
    m: usize,
    seed: u64,
) -> Result<CheckReport> {
    match (model, split) {
        (
            Model::NormalNig {
                mu0: _,
                lambda0: _,
                a,
                b,
            },
            Split::LocationGivenScale,
        ) => {
            let prior_scale = InverseGamma::new(*a, *b)?;
            let d_of = |data: &Dataset| -> Result<f64> {
                let prior = match model {
                    Model::NormalNig {
                        mu0,
                        lambda0,
                        a,
                        b,
                    } => crate::dist::NormalInverseGamma::new(*mu0, *lambda0, *a, *b)?,
                    _ => unreachable!(),
                };
                let post = posterior_nig(&prior, data.scalars()?)?;
                renyi_inverse_gamma(
                    &InverseGamma::new(post.a, post.b)?,
                    &prior_scale,
                    order,
                )
            };
            let d_obs = d_of(data_obs)?;
            let (p, se, kept, excluded) = mc_calibrate(m, seed, d_obs, |_, rng| {
                let y = model.prior_predictive_sample(data_obs, rng)?;
                d_of(&y)
            })?;
            let mut report = CheckReport::new("hier2", order, seed);
            report.discrepancy_obs = d_obs;
            report.p_value = p;
            report.mc_std_error = Some(se);
            report.replicates = m;
            report.replicate_discrepancies = Some(kept);
            if excluded > 0 {
                report.flags.push(format!("excluded_non_finite:{excluded}"));
            }
            Ok(report)
        }
        _ => Err(Error::Unsupported(
            "this model/split pair has no marginal-block check".into(),
        )),
    }
}

/// Location-given-scale check for the normal-inverse-gamma model, all in
/// closed form except the Monte Carlo calibration itself.
fn nig_hier1(
    model: &Model,
    data_obs: &Dataset,
    order: DivergenceOrder,
    m: usize,
    inner_draws: usize,
    seed: u64,
) -> Result<CheckReport> {
    let (mu0, lambda0, a, b) = match model {
        Model::NormalNig {
            mu0,
            lambda0,
            a,
            b,
        } => (*mu0, *lambda0, *a, *b),
        _ => unreachable!(),
    };
    if inner_draws == 0 {
        return Err(Error::InvalidParameter("inner_draws must be positive".into()));
    }
    let prior = crate::dist::NormalInverseGamma::new(mu0, lambda0, a, b)?;
    let y_obs = data_obs.scalars()?;
    let n = y_obs.len();
    let post_obs = posterior_nig(&prior, y_obs)?;
    // Scale draws shared by the observed statistic and every replicate:
    // they come from the observed-data posterior of sigma^2.
    let mut inner_rng = master_rng(seed);
    let scale_post = InverseGamma::new(post_obs.a, post_obs.b)?;
    let sigma_sq_draws: Vec<f64> = (0..inner_draws).map(|_| scale_post.sample(&mut inner_rng)).collect();
    let n_f = n as f64;
    let lambda0p = n_f + lambda0;
    let r1 = |ybar: f64| -> Result<f64> {
        let mu0p = (mu0 * lambda0 + n_f * ybar) / lambda0p;
        let mut acc = 0.0;
        for &s2 in &sigma_sq_draws {
            acc += renyi_gaussian_1d(mu0p, s2 / lambda0p, mu0, s2 / lambda0, order)?;
        }
        Ok(acc / inner_draws as f64)
    };
    let ybar_obs = y_obs.iter().sum::<f64>() / n_f;
    let d_obs = r1(ybar_obs)?;
    // Reference: scale from the observed posterior, location from its
    // conditional prior, then data from the sampling model.
    let (p, se, kept, excluded) = mc_calibrate(m, seed, d_obs, |_, rng| {
        let s2 = scale_post.sample(rng);
        let mu = mu0
            + (s2 / lambda0).sqrt() * rand::Rng::sample::<f64, _>(rng, rand_distr::StandardNormal);
        let ybar = mu
            + (s2 / n_f).sqrt() * rand::Rng::sample::<f64, _>(rng, rand_distr::StandardNormal);
        r1(ybar)
    })?;
    let mut report = CheckReport::new("hier1", order, seed);
    report.discrepancy_obs = d_obs;
    report.p_value = p;
    report.mc_std_error = Some(se);
    report.replicates = m;
    report.inner_draws = Some(inner_draws);
    report.replicate_discrepancies = Some(kept);
    if excluded > 0 {
        report.flags.push(format!("excluded_non_finite:{excluded}"));
    }
    Ok(report)
}

fn remove_unit(rows: &[GroupRow], unit: usize) -> Dataset {
    Dataset::Grouped(
        rows.iter()
            .enumerate()
            .filter(|(j, _)| *j != unit)
            .map(|(_, r)| *r)
            .collect(),
    )
}

/// Per-unit random-effect checks for the logistic random-effects model.
///
/// With `unit = None`, checks every unit against one shared set of
/// replicate refits (the reference distribution does not depend on the
/// unit when not cross-validating).  With `cv` set, the second-block
/// posterior is refit without the checked unit, which forces per-unit
/// replicate sets.
pub fn logistic_unit_checks(
    model: &Model,
    data_obs: &Dataset,
    unit: Option<usize>,
    order: DivergenceOrder,
    m: usize,
    inner_draws: usize,
    seed: u64,
    vb: &VbCheckConfig,
    cv: bool,
    one_sided: bool,
) -> Result<Vec<CheckReport>> {
    if !matches!(model, Model::LogisticRe { .. }) {
        return Err(Error::Unsupported(
            "per-unit checks need the random-effects model".into(),
        ));
    }
    if m == 0 || inner_draws == 0 {
        return Err(Error::InvalidParameter(
            "M and inner_draws must be positive".into(),
        ));
    }
    let rows = data_obs.grouped()?.to_vec();
    let units = rows.len();
    if let Some(u) = unit {
        if u >= units {
            return Err(Error::InvalidData(format!(
                "unit {u} out of range for {units} units"
            )));
        }
    }
    let q_obs = fit_gaussian_vb(model, data_obs, &vb.fit, None)?;
    let targets: Vec<usize> = match unit {
        Some(u) => vec![u],
        None => (0..units).collect(),
    };
    let theta2_idx = (units, units + 1);
    let variant = if cv {
        "hier1_cv"
    } else if one_sided {
        "hier1_one_sided"
    } else {
        "hier1"
    };

    let mut reports = Vec::with_capacity(targets.len());
    if cv {
        for (k, &u) in targets.iter().enumerate() {
            // Per-unit held-out posterior for the shared parameters.
            let data_loo = remove_unit(&rows, u);
            let loo_cfg = FitConfig {
                seed: vb.fit.seed.wrapping_add(1 + u as u64),
                ..vb.fit.clone()
            };
            let q_loo = fit_gaussian_vb(model, &data_loo, &loo_cfg, None)?;
            let loo_idx = (units - 1, units);
            let theta2_src = q_loo.marginal(&[loo_idx.0, loo_idx.1])?;
            let unit_seed = seed.wrapping_add((k as u64 + 1) << 32);
            reports.push(logistic_unit_report(
                model, data_obs, &q_obs, &theta2_src, u, theta2_idx, order, m, inner_draws,
                unit_seed, vb, variant, one_sided,
            )?);
        }
    } else {
        let theta2_src = q_obs.marginal(&[theta2_idx.0, theta2_idx.1])?;
        // One shared replicate set serves every unit.
        let shared = logistic_replicates(model, data_obs, &q_obs, &theta2_src, m, seed, vb)?;
        let mut inner_rng = master_rng(seed);
        let theta2_draws: Vec<[f64; 2]> = (0..inner_draws)
            .map(|_| {
                let t = theta2_src.sample(&mut inner_rng);
                [t[0], t[1]]
            })
            .collect();
        for &u in &targets {
            reports.push(evaluate_unit(
                &q_obs,
                &shared,
                u,
                theta2_idx,
                &theta2_draws,
                order,
                seed,
                inner_draws,
                variant,
                one_sided,
            )?);
        }
    }
    Ok(reports)
}

struct ReplicateFits {
    fits: Vec<GaussianFit>,
    non_converged: usize,
}

/// Draw `m` replicate datasets from the hierarchical reference (shared
/// parameters from `theta2_src`, random effects from their conditional
/// prior, data from the sampling model) and refit each one.
fn logistic_replicates(
    model: &Model,
    data_obs: &Dataset,
    q_obs: &GaussianFit,
    theta2_src: &GaussianMv,
    m: usize,
    seed: u64,
    vb: &VbCheckConfig,
) -> Result<ReplicateFits> {
    let units = data_obs.grouped()?.len();
    let fits: Vec<GaussianFit> = (0..m)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let t2 = theta2_src.sample(&mut rng);
            let d_sd = (0.5 * t2[1]).exp();
            let mut theta = Vec::with_capacity(units + 2);
            for _ in 0..units {
                theta.push(d_sd * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal));
            }
            theta.push(t2[0]);
            theta.push(t2[1]);
            let y = model.simulate_like(&theta, data_obs, &mut rng)?;
            let cfg = replicate_fit_config(&vb.replicate_fit, seed, i as u64);
            fit_gaussian_vb(model, &y, &cfg, Some(q_obs))
        })
        .collect::<Result<Vec<_>>>()?;
    let non_converged = fits.iter().filter(|f| !f.converged).count();
    Ok(ReplicateFits { fits, non_converged })
}

fn logistic_unit_report(
    model: &Model,
    data_obs: &Dataset,
    q_obs: &GaussianFit,
    theta2_src: &GaussianMv,
    unit: usize,
    theta2_idx: (usize, usize),
    order: DivergenceOrder,
    m: usize,
    inner_draws: usize,
    seed: u64,
    vb: &VbCheckConfig,
    variant: &str,
    one_sided: bool,
) -> Result<CheckReport> {
    let replicates = logistic_replicates(model, data_obs, q_obs, theta2_src, m, seed, vb)?;
    let mut inner_rng = master_rng(seed);
    let theta2_draws: Vec<[f64; 2]> = (0..inner_draws)
        .map(|_| {
            let t = theta2_src.sample(&mut inner_rng);
            [t[0], t[1]]
        })
        .collect();
    evaluate_unit(
        q_obs,
        &replicates,
        unit,
        theta2_idx,
        &theta2_draws,
        order,
        seed,
        inner_draws,
        variant,
        one_sided,
    )
}

fn evaluate_unit(
    q_obs: &GaussianFit,
    replicates: &ReplicateFits,
    unit: usize,
    theta2_idx: (usize, usize),
    theta2_draws: &[[f64; 2]],
    order: DivergenceOrder,
    seed: u64,
    inner_draws: usize,
    variant: &str,
    one_sided: bool,
) -> Result<CheckReport> {
    let (d_obs, mut clipped) = kl1_star(q_obs, unit, theta2_idx, theta2_draws, order)?;
    let mut ds = Vec::with_capacity(replicates.fits.len());
    let mut u_means = Vec::with_capacity(replicates.fits.len());
    for fit in &replicates.fits {
        let (d, c) = kl1_star(fit, unit, theta2_idx, theta2_draws, order)?;
        clipped += c;
        ds.push(d);
        u_means.push(fit.mean()[unit]);
    }
    let m = ds.len();
    let mut report = CheckReport::new(variant, order, seed);
    report.unit = Some(unit);
    report.discrepancy_obs = d_obs;
    report.replicates = m;
    report.inner_draws = Some(inner_draws);
    let p = if one_sided {
        let obs_mean = q_obs.mean()[unit];
        if obs_mean == 0.0 {
            report.flags.push("sign_boundary".into());
        }
        if obs_mean >= 0.0 {
            ds.iter()
                .zip(&u_means)
                .filter(|(d, um)| ge_with_slack(**d, d_obs) && **um > 0.0)
                .count() as f64
                / m as f64
        } else {
            let below = ds.iter().filter(|d| le_with_slack(**d, d_obs)).count();
            let above_pos = ds
                .iter()
                .zip(&u_means)
                .filter(|(d, um)| ge_with_slack(**d, d_obs) && **um > 0.0)
                .count();
            ((below + above_pos) as f64 / m as f64).min(1.0)
        }
    } else {
        ds.iter().filter(|d| ge_with_slack(**d, d_obs)).count() as f64 / m as f64
    };
    report.p_value = p;
    report.mc_std_error = Some(binomial_se(p, m));
    report.replicate_discrepancies = Some(ds);
    if replicates.non_converged > 0 {
        report
            .flags
            .push(format!("non_converged_fits:{}", replicates.non_converged));
    }
    if clipped > 0 {
        report
            .flags
            .push(format!("clipped_conditional_variance:{clipped}"));
    }
    Ok(report)
}

/// Plain check through the mixture variational path: fit a two-component
/// Gaussian mixture posterior, measure its divergence from the Gaussian
/// prior with the pairwise closed-form approximation, and calibrate
/// against prior-predictive replicates with warm-started refits.
pub fn gmm_conflict_p_value(
    model: &Model,
    data_obs: &Dataset,
    m: usize,
    seed: u64,
    vb: &VbCheckConfig,
) -> Result<CheckReport> {
    let prior = match model {
        Model::BetaBinomialHier { prior } => prior.clone(),
        _ => {
            return Err(Error::Unsupported(
                "the mixture check path expects the overdispersed count model".into(),
            ))
        }
    };
    let obs_fit = fit_gmm_vb(model, data_obs, &vb.fit, None)?;
    let d_obs = gmm_kl_upper_bound(&obs_fit.mixture, &prior)?;
    let non_converged = std::sync::atomic::AtomicUsize::new(usize::from(!obs_fit.converged));
    let (p, se, kept, excluded) = mc_calibrate(m, seed, d_obs, |i, rng| {
        let theta = model.prior_sample(data_obs, rng);
        let y = model.simulate_like(&theta, data_obs, rng)?;
        let cfg = replicate_fit_config(&vb.replicate_fit, seed, i as u64);
        let fit = fit_gmm_vb(model, &y, &cfg, Some(&obs_fit))?;
        if !fit.converged {
            non_converged.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        gmm_kl_upper_bound(&fit.mixture, &prior)
    })?;
    let mut report = CheckReport::new("plain", DivergenceOrder::Kl, seed);
    report.discrepancy_obs = d_obs;
    report.p_value = p;
    report.mc_std_error = Some(se);
    report.replicates = m;
    report.replicate_discrepancies = Some(kept);
    report.flags.push("variational".into());
    let nc = non_converged.into_inner();
    if nc > 0 {
        report.flags.push(format!("non_converged_fits:{nc}"));
    }
    if excluded > 0 {
        report.flags.push(format!("excluded_non_finite:{excluded}"));
    }
    Ok(report)
}

/// Large-sample limit of the plain check: the probability that a prior
/// draw has smaller information-weighted prior density than the true
/// parameter.  Returns the estimate and its Monte Carlo standard error.
pub fn asymptotic_limit_p(
    model: &Model,
    theta_star: &[f64],
    template: &Dataset,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be positive".into()));
    }
    let weight = |theta: &[f64]| -> Result<f64> {
        let info = model.fisher_info(theta, template)?;
        let det = info.determinant();
        if !(det > 0.0) {
            return Err(Error::Numerical(
                "Fisher information determinant not positive".into(),
            ));
        }
        Ok(model.log_prior(theta, template)? - 0.5 * det.ln())
    };
    let v_star = weight(theta_star)?;
    let results: Vec<Option<bool>> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let theta = model.prior_sample(template, &mut rng);
            match weight(&theta) {
                Ok(v) if v.is_finite() => Some(ge_with_slack(v_star, v)),
                // A draw can land where the information degenerates (e.g.
                // a success probability rounded onto an endpoint).
                _ => None,
            }
        })
        .collect();
    let kept: Vec<bool> = results.iter().filter_map(|r| *r).collect();
    let excluded = n_draws - kept.len();
    if excluded as f64 > 0.01 * n_draws as f64 {
        return Err(Error::Numerical(format!(
            "{excluded} of {n_draws} prior draws had degenerate information"
        )));
    }
    let p = kept.iter().filter(|b| **b).count() as f64 / kept.len() as f64;
    Ok((p, binomial_se(p, kept.len())))
}

/// Hierarchical analogue of the limit for the location-given-scale split
/// of the normal-inverse-gamma model: conditions on the true scale and
/// uses the location block of the information matrix.
pub fn asymptotic_limit_p1(
    model: &Model,
    theta_star: &[f64],
    template: &Dataset,
    n_draws: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (mu0, lambda0) = match model {
        Model::NormalNig { mu0, lambda0, .. } => (*mu0, *lambda0),
        _ => {
            return Err(Error::Unsupported(
                "the hierarchical limit is implemented for the location-scale model".into(),
            ))
        }
    };
    let (mu_star, s2_star) = (theta_star[0], theta_star[1]);
    if !(s2_star > 0.0) {
        return Err(Error::InvalidParameter("sigma^2* must be positive".into()));
    }
    let cond_var = s2_star / lambda0;
    let weight = |mu: f64| -> Result<f64> {
        let info = model.fisher_info(&[mu, s2_star], template)?;
        let i11 = info[(0, 0)];
        Ok(-0.5 * (mu - mu0).powi(2) / cond_var - 0.5 * i11.ln())
    };
    let v_star = weight(mu_star)?;
    let results: Vec<bool> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = replicate_rng(seed, i as u64);
            let mu = mu0
                + cond_var.sqrt()
                    * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal);
            weight(mu).map(|v| ge_with_slack(v_star, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let p = results.iter().filter(|b| **b).count() as f64 / n_draws as f64;
    Ok((p, binomial_se(p, n_draws)))
}

/// Discrepancy for the shifted-exponential model as a function of the
/// scaled statistic `t = (nr - kappa) * y_min`, parameterized by
/// `nu = nr / kappa > 1`.
pub fn shifted_exp_discrepancy_of_t(nu: f64, order: DivergenceOrder, t: f64) -> Result<f64> {
    if !(nu > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "nu = n*r/kappa must exceed 1, got {nu}"
        )));
    }
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "statistic t must be positive, got {t}"
        )));
    }
    let c = nu - 1.0;
    let y_min = t / c;
    let post = TruncatedExponential::new(c, y_min)?;
    let prior = ExponentialDist::new(1.0)?;
    renyi_truncexp_vs_exp(
        &post,
        &prior,
        order,
        ShiftedExpScalars { n: 1, r: nu, kappa: 1.0 },
    )
}

/// Prior-predictive CDF of the scaled statistic `t` for ratio `nu`.
pub fn shifted_exp_predictive_cdf(nu: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    let c = nu - 1.0;
    (nu * (-(-t / c).exp_m1()) - (-(-nu * t / c).exp_m1())) / c
}

/// The statistic value minimizing the discrepancy, by golden-section
/// search on the unimodal curve.
pub fn shifted_exp_t0(nu: f64, order: DivergenceOrder) -> Result<f64> {
    let r = |t: f64| shifted_exp_discrepancy_of_t(nu, order, t);
    let mut hi = 1.0;
    while r(hi)? <= r(0.5 * hi)? {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::Numerical(
                "failed to bracket the discrepancy minimum".into(),
            ));
        }
    }
    let mut lo = 1e-10;
    let phi = 0.5 * (5.0f64.sqrt() - 1.0);
    let mut x1 = hi - phi * (hi - lo);
    let mut x2 = lo + phi * (hi - lo);
    let mut f1 = r(x1)?;
    let mut f2 = r(x2)?;
    while hi - lo > 1e-12 * hi.max(1.0) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = r(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = r(x2)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact tail p-value for the shifted-exponential check at observed
/// statistic `t_obs`: one minus the predictive mass between the two
/// points sharing the observed discrepancy level.
pub fn shifted_exp_exact_p(nu: f64, order: DivergenceOrder, t_obs: f64) -> Result<f64> {
    let r = |t: f64| shifted_exp_discrepancy_of_t(nu, order, t);
    let r_obs = r(t_obs)?;
    let t0 = shifted_exp_t0(nu, order)?;
    if r_obs <= r(t0)? + 1e-13 * (1.0 + r_obs.abs()) {
        return Ok(1.0);
    }
    let bisect = |mut lo: f64, mut hi: f64, increasing: bool| -> f64 {
        // Root of r(t) = r_obs on a monotone stretch.
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if hi - lo < 1e-10 * hi.max(1.0) {
                break;
            }
            let above = r(mid).map(|v| v > r_obs).unwrap_or(true);
            if above == increasing {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let t1 = if t_obs < t0 {
        t_obs
    } else {
        // Left root: the curve rises without bound as t shrinks.
        let mut eps = 0.5 * t0;
        while r(eps)? < r_obs {
            eps *= 0.5;
            if eps < 1e-300 {
                return Err(Error::Numerical("left root bracket underflow".into()));
            }
        }
        bisect(eps, t0, false)
    };
    let t2 = if t_obs > t0 {
        t_obs
    } else {
        let mut hi = 2.0 * t0;
        while r(hi)? < r_obs {
            hi *= 2.0;
            if hi > 1e12 {
                return Err(Error::Numerical("right root bracket overflow".into()));
            }
        }
        bisect(t0, hi, true)
    };
    let p = 1.0 - (shifted_exp_predictive_cdf(nu, t2) - shifted_exp_predictive_cdf(nu, t1));
    Ok(p.clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{ln_beta, norm_cdf, student_t_cdf};
    use approx::assert_relative_eq;

    #[test]
    fn discrepancy_basic_cases() {
        // Empty data: posterior equals prior.
        let model = Model::Binomial { a: 2.0, b: 3.0, n: 10 };
        assert_eq!(
            discrepancy(&model, &Dataset::Scalars(vec![]), DivergenceOrder::Kl).unwrap(),
            0.0
        );
        // Unit-information normal update at y = 2.
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 1.0,
            sigma_sq: 1.0,
        };
        let d = discrepancy(&model, &Dataset::Scalars(vec![2.0]), DivergenceOrder::Kl).unwrap();
        let oracle = crate::divergence::renyi_gaussian(
            &GaussianMv::univariate(1.0, 0.5).unwrap(),
            &GaussianMv::univariate(0.0, 1.0).unwrap(),
            DivergenceOrder::Kl,
        )
        .unwrap();
        assert_relative_eq!(d, oracle, epsilon = 1e-12);
        // Uniform-prior count model at y = n: max log ratio is attained at
        // the right endpoint and equals ln B(a,b) - ln B(a+n, b).
        let model = Model::Binomial { a: 1.0, b: 1.0, n: 10 };
        let d = discrepancy(&model, &Dataset::Scalars(vec![10.0]), DivergenceOrder::Mr).unwrap();
        assert_relative_eq!(d, ln_beta(1.0, 1.0) - ln_beta(11.0, 1.0), epsilon = 1e-12);
        assert_relative_eq!(d, 11.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn plain_check_matches_two_sided_normal_tail() {
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 1.0,
            sigma_sq: 1.0,
        };
        let data = Dataset::Scalars(vec![2.0]);
        let expected = 2.0 * (1.0 - norm_cdf(2.0 / 2.0f64.sqrt()));
        for order in [DivergenceOrder::Kl, DivergenceOrder::Finite(0.5), DivergenceOrder::Mr] {
            let report = conflict_p_value(&model, &data, order, 4000, 17).unwrap();
            assert!(
                (report.p_value - expected).abs() < 0.02,
                "order {order}: p {} vs {expected}",
                report.p_value
            );
        }
    }

    #[test]
    fn replicate_ranking_is_order_invariant() {
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 1.0,
            sigma_sq: 1.0,
        };
        let data = Dataset::Scalars(vec![1.0]);
        let rank = |order| {
            let r = conflict_p_value(&model, &data, order, 200, 3).unwrap();
            let ds = r.replicate_discrepancies.unwrap();
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.sort_by(|&i, &j| ds[i].total_cmp(&ds[j]));
            idx
        };
        let base = rank(DivergenceOrder::Kl);
        for order in [DivergenceOrder::Finite(0.5), DivergenceOrder::Finite(2.0), DivergenceOrder::Mr] {
            assert_eq!(rank(order), base, "ranking differs at {order}");
        }
    }

    #[test]
    fn binomial_enumeration_path() {
        let model = Model::Binomial { a: 1.0, b: 1.0, n: 10 };
        // Discrepancy symmetric with its smallest value at n/2, so the
        // antimodal observation is never surprising.
        let at = |y: u64| conflict_p_value(&model, &Dataset::Scalars(vec![y as f64]), DivergenceOrder::Mr, 1, 5).unwrap();
        let center = at(5);
        assert_eq!(center.p_value, 1.0);
        assert!(center.flags.contains(&"enumeration".to_string()));
        assert!(center.mc_std_error.is_none());
        let ds = center.replicate_discrepancies.unwrap();
        for y in 0..=10usize {
            assert_relative_eq!(ds[y], ds[10 - y], epsilon = 1e-12);
        }
        let min = ds.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(ds[5], min, epsilon = 1e-12);
        // Extreme observation: only the two extreme outcomes are at least
        // as surprising, so p = 2/11 under the uniform predictive.
        let edge = at(10);
        assert_relative_eq!(edge.p_value, 2.0 / 11.0, epsilon = 1e-10);
    }

    #[test]
    fn em_uniform_predictive_all_ties() {
        let model = Model::Binomial { a: 1.0, b: 1.0, n: 10 };
        for y in [0u64, 3, 5, 10] {
            let r = em_p_value(&model, &Dataset::Scalars(vec![y as f64]), 1, 9).unwrap();
            assert_relative_eq!(r.p_value, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn em_matches_normal_closed_form() {
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 1.0,
            sigma_sq: 1.0,
        };
        let data = Dataset::Scalars(vec![2.0]);
        let r = em_p_value(&model, &data, 4000, 23).unwrap();
        let expected = 2.0 * (1.0 - norm_cdf(2.0 / 2.0f64.sqrt()));
        assert!((r.p_value - expected).abs() < 0.02, "p {}", r.p_value);
    }

    #[test]
    fn nig_hier1_matches_t_reference() {
        let model = Model::NormalNig {
            mu0: 0.5,
            lambda0: 2.0,
            a: 3.0,
            b: 4.0,
        };
        let data = Dataset::Scalars(vec![1.9, 2.4, 1.2, 2.9, 2.2, 1.6, 2.7, 2.1]);
        let n = 8.0;
        let report = hierarchical_p1(
            &model,
            Split::LocationGivenScale,
            &data,
            DivergenceOrder::Kl,
            4000,
            400,
            31,
            &VbCheckConfig::default(),
        )
        .unwrap();
        // Closed form: |ybar - mu0| / sigma* against a standard t.
        let y: &[f64] = data.scalars().unwrap();
        let ybar = y.iter().sum::<f64>() / n;
        let prior = crate::dist::NormalInverseGamma::new(0.5, 2.0, 3.0, 4.0).unwrap();
        let post = posterior_nig(&prior, y).unwrap();
        let sigma_star = (post.b / post.a * (1.0 / 2.0 + 1.0 / n)).sqrt();
        let z = (ybar - 0.5).abs() / sigma_star;
        let expected = 2.0 * (1.0 - student_t_cdf(z, 2.0 * post.a));
        assert!(
            (report.p_value - expected).abs() < 3.5 * report.mc_std_error.unwrap() + 0.01,
            "p {} vs t closed form {expected}",
            report.p_value
        );
        // Centered data: nothing surprising.
        let centered = Dataset::Scalars(vec![0.2, 0.5, 0.8, 0.4, 0.6]);
        let r0 = hierarchical_p1(
            &model,
            Split::LocationGivenScale,
            &centered,
            DivergenceOrder::Kl,
            1500,
            200,
            32,
            &VbCheckConfig::default(),
        )
        .unwrap();
        assert!(r0.p_value > 0.8, "p {}", r0.p_value);
    }

    #[test]
    fn nig_hier2_detects_scale_inflation() {
        let a = 3.0;
        let b = 2.0;
        let model = Model::NormalNig {
            mu0: 0.0,
            lambda0: 1.0,
            a,
            b,
        };
        // Spread matched to the prior scale: p near 1.
        let mut rng = master_rng(2);
        let scale_ok: Vec<f64> = (0..50)
            .map(|_| {
                (b / a as f64).sqrt() * rand::Rng::sample::<f64, _>(&mut rng, rand_distr::StandardNormal)
            })
            .collect();
        let r_ok = hierarchical_p2(
            &model,
            Split::LocationGivenScale,
            &Dataset::Scalars(scale_ok.clone()),
            DivergenceOrder::Kl,
            2000,
            41,
        )
        .unwrap();
        // Spread 100x the prior scale: strong conflict.
        let inflated: Vec<f64> = scale_ok.iter().map(|v| v * 10.0).collect();
        let r_bad = hierarchical_p2(
            &model,
            Split::LocationGivenScale,
            &Dataset::Scalars(inflated),
            DivergenceOrder::Kl,
            2000,
            41,
        )
        .unwrap();
        assert!(r_bad.p_value < 0.05, "inflated-scale p {}", r_bad.p_value);
        assert!(r_ok.p_value > r_bad.p_value);
    }

    #[test]
    fn asymptotic_limit_reference_cases() {
        let template = Dataset::Scalars(vec![0.0]);
        // Information-matched prior: every draw ties, p = 1.
        let jeffreys = Model::Binomial { a: 0.5, b: 0.5, n: 10 };
        for theta_star in [0.1, 0.5, 0.83] {
            let (p, _) = asymptotic_limit_p(&jeffreys, &[theta_star], &template, 20_000, 2).unwrap();
            assert!(p > 0.999, "theta* {theta_star}: p {p}");
        }
        // Constant information: the event reduces to a two-sided normal tail.
        let normal = Model::NormalKnownVar {
            mu0: 1.0,
            sigma0_sq: 4.0,
            sigma_sq: 1.0,
        };
        for (mu_star, expected) in [
            (1.0, 1.0),
            (1.0 + 2.0 * 2.0, 2.0 * (1.0 - norm_cdf(2.0))),
            (1.0 - 1.0 * 2.0, 2.0 * (1.0 - norm_cdf(1.0))),
        ] {
            let (p, se) = asymptotic_limit_p(&normal, &[mu_star], &template, 50_000, 3).unwrap();
            assert!(
                (p - expected).abs() < 3.0 * se + 1e-3,
                "mu* {mu_star}: p {p} vs {expected}"
            );
        }
        // Non-regular model refuses.
        let shifted = Model::ShiftedExp { r: 1.0, kappa: 1.0 };
        assert!(matches!(
            asymptotic_limit_p(&shifted, &[0.5], &template, 10, 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn hierarchical_asymptotic_limit_reduces_to_location_tail() {
        let model = Model::NormalNig {
            mu0: 0.0,
            lambda0: 4.0,
            a: 2.0,
            b: 2.0,
        };
        let template = Dataset::Scalars(vec![0.0, 0.0]);
        let s2_star = 1.5;
        let cond_sd = (s2_star / 4.0f64).sqrt();
        for k in [0.0f64, 1.0, 2.5] {
            let mu_star = k * cond_sd;
            let (p, se) =
                asymptotic_limit_p1(&model, &[mu_star, s2_star], &template, 50_000, 7).unwrap();
            let expected = 2.0 * (1.0 - norm_cdf(k));
            assert!(
                (p - expected).abs() < 3.0 * se + 1e-3,
                "k {k}: p {p} vs {expected}"
            );
        }
    }

    #[test]
    fn shifted_exp_curve_shape() {
        for nu in [2.0, 8.0, 50.0] {
            let t0 = shifted_exp_t0(nu, DivergenceOrder::Kl).unwrap();
            assert!(t0 > 0.0);
            let p0 = shifted_exp_exact_p(nu, DivergenceOrder::Kl, t0).unwrap();
            assert_eq!(p0, 1.0, "nu {nu}: p at the minimizer");
            // Unimodal in p: decreasing on both sides of the minimizer.
            let mut last = 1.0;
            for f in [1.5, 3.0, 6.0, 10.0] {
                let p = shifted_exp_exact_p(nu, DivergenceOrder::Kl, f * t0).unwrap();
                assert!(p < last + 1e-12, "nu {nu}: p not decreasing above t0");
                last = p;
            }
            let p_small = shifted_exp_exact_p(nu, DivergenceOrder::Kl, t0 / 50.0).unwrap();
            assert!(p_small < 1.0);
        }
        // Far-tail decay rate is set by the predictive, whose scale grows
        // with nu; only the smallest ratio is deep in the tail at 10 t0.
        let t0 = shifted_exp_t0(2.0, DivergenceOrder::Kl).unwrap();
        let p_far = shifted_exp_exact_p(2.0, DivergenceOrder::Kl, 10.0 * t0).unwrap();
        assert!(p_far < 1e-4, "far-tail p {p_far}");
    }

    #[test]
    fn shifted_exp_exact_matches_monte_carlo() {
        // Same check through the generic engine: n = 4, r = 2, kappa = 1
        // gives nu = 8; a dataset with the matching minimum statistic.
        let nu = 8.0;
        let (n, r, kappa) = (4usize, 2.0, 1.0);
        let model = Model::ShiftedExp { r, kappa };
        let c = n as f64 * r - kappa;
        let t_obs = 3.0;
        let y_min = t_obs / c;
        let data = Dataset::Scalars(vec![y_min + 0.4, y_min, y_min + 1.1, y_min + 0.2]);
        let exact = shifted_exp_exact_p(nu, DivergenceOrder::Kl, t_obs).unwrap();
        let mc = conflict_p_value(&model, &data, DivergenceOrder::Kl, 20_000, 13).unwrap();
        assert!(
            (mc.p_value - exact).abs() < 3.0 * mc.mc_std_error.unwrap() + 1e-3,
            "mc {} vs exact {exact}",
            mc.p_value
        );
    }

    #[test]
    fn permutation_invariance() {
        let model = Model::NormalNig {
            mu0: 0.0,
            lambda0: 1.0,
            a: 2.0,
            b: 2.0,
        };
        let data = Dataset::Scalars(vec![0.4, -1.2, 2.0, 0.9]);
        let permuted = Dataset::Scalars(vec![2.0, 0.4, 0.9, -1.2]);
        let r1 = conflict_p_value(&model, &data, DivergenceOrder::Kl, 500, 7).unwrap();
        let r2 = conflict_p_value(&model, &permuted, DivergenceOrder::Kl, 500, 7).unwrap();
        // Summation order of the sample mean can move the last ulp.
        assert_relative_eq!(r1.discrepancy_obs, r2.discrepancy_obs, max_relative = 1e-12);
        assert_eq!(r1.p_value, r2.p_value);
        assert_eq!(r1.replicate_discrepancies, r2.replicate_discrepancies);
    }

    #[test]
    fn reports_are_reproducible() {
        let model = Model::NormalKnownVar {
            mu0: 0.0,
            sigma0_sq: 1.0,
            sigma_sq: 1.0,
        };
        let data = Dataset::Scalars(vec![1.3]);
        let a = conflict_p_value(&model, &data, DivergenceOrder::Kl, 300, 99).unwrap();
        let b = conflict_p_value(&model, &data, DivergenceOrder::Kl, 300, 99).unwrap();
        assert_eq!(a, b);
        let c = conflict_p_value(&model, &data, DivergenceOrder::Kl, 300, 100).unwrap();
        assert_ne!(
            a.replicate_discrepancies, c.replicate_discrepancies,
            "different seeds should change the replicate draws"
        );
    }

    #[test]
    fn logistic_unit_check_smoke() {
        // Tiny configuration: exercises the fit/refit/conditional path,
        // not the paper-scale numbers.
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
        let vb = VbCheckConfig {
            fit: FitConfig {
                max_iterations: 6000,
                seed: 1,
                ..FitConfig::default()
            },
            replicate_fit: FitConfig {
                max_iterations: 1200,
                window: 200,
                ..FitConfig::default()
            },
        };
        let reports = logistic_unit_checks(
            &model,
            &data,
            None,
            DivergenceOrder::Kl,
            40,
            50,
            5,
            &vb,
            false,
            false,
        )
        .unwrap();
        assert_eq!(reports.len(), 3);
        for r in &reports {
            assert!(r.p_value.is_finite() && (0.0..=1.0).contains(&r.p_value));
            assert!(r.discrepancy_obs >= 0.0);
        }
        // One-sided p never exceeds the two-sided p for a positive-mean unit.
        let one_sided = logistic_unit_checks(
            &model,
            &data,
            Some(0),
            DivergenceOrder::Kl,
            40,
            50,
            5,
            &vb,
            false,
            true,
        )
        .unwrap();
        assert!(one_sided[0].p_value <= reports[0].p_value + 1e-12);
        // Out-of-range unit rejected.
        assert!(logistic_unit_checks(
            &model, &data, Some(7), DivergenceOrder::Kl, 5, 5, 5, &vb, false, false
        )
        .is_err());
    }

    #[test]
    fn report_serialization_round_trip() {
        let model = Model::Binomial { a: 1.0, b: 1.0, n: 10 };
        let report =
            conflict_p_value(&model, &Dataset::Scalars(vec![7.0]), DivergenceOrder::Kl, 1, 3)
                .unwrap();
        let json = serde_json::to_string(&report).unwrap();
        let back: CheckReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
    }
}
