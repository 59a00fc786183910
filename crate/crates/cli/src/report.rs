//! JSON report emission.  Reports are versioned and timestamped; apart
//! from the timestamp, identical runs produce byte-identical output.

use std::path::Path;

use priordiv::conflict::CheckReport;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub timestamp: String,
    #[serde(flatten)]
    pub check: CheckReport,
}

impl Report {
    pub fn new(mut check: CheckReport, keep_replicates: bool) -> Self {
        if !keep_replicates {
            check.replicate_discrepancies = None;
        }
        Self {
            schema_version: 1,
            timestamp: chrono::Utc::now().to_rfc3339(),
            check,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn write_or_print(json: &str, output: Option<&Path>) -> Result<(), CliError> {
    match output {
        Some(path) => std::fs::write(path, json)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display()))),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

/// One console line per check: p to four decimals plus its standard
/// error; full precision lives in the JSON only.
pub fn summary_line(label: &str, check: &CheckReport) -> String {
    let se = match check.mc_std_error {
        Some(se) => format!(" (se {se:.4})"),
        None => " (exact)".to_string(),
    };
    let flags = if check.flags.is_empty() {
        String::new()
    } else {
        format!(" [{}]", check.flags.join(", "))
    };
    format!("{label}: p = {:.4}{se}{flags}", check.p_value)
}
