//! Model construction from a name plus key-value parameter overrides.
//!
//! Precedence: command-line `--set` pairs override the config file, which
//! overrides the model's built-in defaults.  Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use priordiv::dist::GaussianMv;
use priordiv::models::Model;

use crate::CliError;

type Params = BTreeMap<String, f64>;

fn defaults(model: &str) -> Option<(&'static [(&'static str, f64)], &'static [&'static str])> {
    // (defaults, accepted keys); keys equal the default names everywhere.
    match model {
        "normal-location" => Some((
            &[("mu0", 0.0), ("sigma0sq", 1.0), ("sigmasq", 1.0)],
            &["mu0", "sigma0sq", "sigmasq"],
        )),
        "binomial" => Some((&[("a", 1.0), ("b", 1.0), ("n", 10.0)], &["a", "b", "n"])),
        "normal-nig" => Some((
            &[("mu0", 0.0), ("lambda0", 1.0), ("a", 2.0), ("b", 2.0)],
            &["mu0", "lambda0", "a", "b"],
        )),
        "shifted-exp" => Some((&[("r", 1.0), ("kappa", 1.0)], &["r", "kappa"])),
        "beta-binomial-hier" => Some((
            &[
                ("m1", -7.1),
                ("m2", 7.9),
                ("v11", 0.25),
                ("v22", 0.25),
                ("v12", 0.0),
            ],
            &["m1", "m2", "v11", "v22", "v12"],
        )),
        "logistic-re" => Some((
            &[
                ("beta_mean", 0.0),
                ("beta_var", 1000.0),
                ("log_d_mean", -3.5),
                ("log_d_var", 1.0),
            ],
            &["beta_mean", "beta_var", "log_d_mean", "log_d_var"],
        )),
        _ => None,
    }
}

pub fn known_models() -> &'static [&'static str] {
    &[
        "normal-location",
        "binomial",
        "normal-nig",
        "shifted-exp",
        "beta-binomial-hier",
        "logistic-re",
    ]
}

fn parse_set_pairs(sets: &[String]) -> Result<Params, CliError> {
    let mut out = Params::new();
    for group in sets {
        for pair in group.split(',').filter(|s| !s.trim().is_empty()) {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| CliError::config(format!("--set entry '{pair}' is not key=value")))?;
            let value: f64 = v.trim().parse().map_err(|_| {
                CliError::config(format!("--set key '{}' has non-numeric value '{v}'", k.trim()))
            })?;
            out.insert(k.trim().to_string(), value);
        }
    }
    Ok(out)
}

fn load_config_file(path: &Path) -> Result<Params, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| CliError::config(format!("{}: expected a flat JSON object", path.display())))?;
    let mut out = Params::new();
    for (k, v) in obj {
        let value = v.as_f64().ok_or_else(|| {
            CliError::config(format!("{}: key '{k}' is not a number", path.display()))
        })?;
        out.insert(k.clone(), value);
    }
    Ok(out)
}

/// Merge defaults, config file, and `--set` pairs (highest precedence
/// last), rejecting keys the model does not accept.
pub fn resolve_params(
    model: &str,
    config_path: Option<&Path>,
    sets: &[String],
) -> Result<Params, CliError> {
    let (defaults, accepted) = defaults(model).ok_or_else(|| {
        CliError::config(format!(
            "unknown model '{model}'; expected one of {}",
            known_models().join(", ")
        ))
    })?;
    let mut params: Params = defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let mut apply = |overrides: Params, source: &str| -> Result<(), CliError> {
        for (k, v) in overrides {
            if !accepted.contains(&k.as_str()) {
                return Err(CliError::config(format!(
                    "{source} key '{k}' is not a parameter of model '{model}' (accepted: {})",
                    accepted.join(", ")
                )));
            }
            params.insert(k, v);
        }
        Ok(())
    };
    if let Some(path) = config_path {
        apply(load_config_file(path)?, "config file")?;
    }
    apply(parse_set_pairs(sets)?, "--set")?;
    Ok(params)
}

pub fn build_model(name: &str, p: &Params) -> Result<Model, CliError> {
    let get = |k: &str| -> f64 { p[k] };
    let model = match name {
        "normal-location" => Model::NormalKnownVar {
            mu0: get("mu0"),
            sigma0_sq: get("sigma0sq"),
            sigma_sq: get("sigmasq"),
        },
        "binomial" => {
            let n = get("n");
            if n < 0.0 || n.fract() != 0.0 {
                return Err(CliError::config(format!(
                    "parameter 'n' must be a non-negative integer, got {n}"
                )));
            }
            Model::Binomial {
                a: get("a"),
                b: get("b"),
                n: n as u64,
            }
        }
        "normal-nig" => Model::NormalNig {
            mu0: get("mu0"),
            lambda0: get("lambda0"),
            a: get("a"),
            b: get("b"),
        },
        "shifted-exp" => Model::ShiftedExp {
            r: get("r"),
            kappa: get("kappa"),
        },
        "beta-binomial-hier" => {
            let cov = DMatrix::from_row_slice(
                2,
                2,
                &[get("v11"), get("v12"), get("v12"), get("v22")],
            );
            let prior = GaussianMv::new(vec![get("m1"), get("m2")], cov)
                .map_err(CliError::from_core_config)?;
            Model::BetaBinomialHier { prior }
        }
        "logistic-re" => Model::LogisticRe {
            beta_mean: get("beta_mean"),
            beta_var: get("beta_var"),
            log_d_mean: get("log_d_mean"),
            log_d_var: get("log_d_var"),
        },
        _ => unreachable!("validated by resolve_params"),
    };
    model.validate().map_err(CliError::from_core_config)?;
    Ok(model)
}
