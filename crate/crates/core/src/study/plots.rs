//! Plot-ready CSV projections of a finished report: preference-score
//! densities, the balance scatter, the negative-control scatter with its
//! significance boundary, and per-stratum forest data.

use crate::study::report::Report;
use crate::study::StudyError;
use crate::survival::Z95;
use std::fmt::Write as _;
use std::path::Path;

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

pub fn preference_csv(report: &Report) -> String {
    let mut out = String::from("outcome_id,risk_stratum,arm,bin_lo,bin_hi,density\n");
    for outcome in &report.outcomes {
        for stratum in &outcome.strata {
            let Some(hist) = &stratum.preference else {
                continue;
            };
            for (arm, densities) in [
                ("treated", &hist.treated_density),
                ("comparator", &hist.comparator_density),
            ] {
                for (i, &d) in densities.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{}",
                        outcome.outcome_id,
                        stratum.label,
                        arm,
                        hist.bin_edges[i],
                        hist.bin_edges[i + 1],
                        d
                    );
                }
            }
        }
    }
    out
}

pub fn balance_scatter_csv(report: &Report) -> String {
    let mut out =
        String::from("outcome_id,risk_stratum,covariate_id,name,smd_before,smd_after\n");
    for outcome in &report.outcomes {
        for stratum in &outcome.strata {
            for row in &stratum.balance {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    outcome.outcome_id,
                    stratum.label,
                    row.covariate_id,
                    row.name,
                    row.smd_before.map(|x| x.to_string()).unwrap_or_else(|| "inf".into()),
                    row.smd_after.map(|x| x.to_string()).unwrap_or_else(|| "inf".into()),
                );
            }
        }
    }
    out
}

pub fn control_scatter_csv(report: &Report) -> String {
    let mut out =
        String::from("outcome_id,risk_stratum,control_id,log_hr,se,p,calibrated_p,significant\n");
    for outcome in &report.outcomes {
        for stratum in &outcome.strata {
            for c in &stratum.negative_controls {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    outcome.outcome_id,
                    stratum.label,
                    c.outcome_id,
                    c.log_hr,
                    c.se,
                    c.p,
                    fmt_opt(&c.calibrated_p),
                    c.p < report.settings.control_alpha,
                );
            }
        }
    }
    out
}

/// The significance boundary of the control scatter: estimates with
/// `se < |log_hr| / z` are significant, so the curve `se = |log_hr| / z`
/// sampled on a log-HR grid separates the regions.
pub fn control_boundary_csv() -> String {
    let mut out = String::from("log_hr,se\n");
    let steps = 100;
    for i in 0..=steps {
        let log_hr = -2.303 + 2.0 * 2.303 * (i as f64 / steps as f64);
        let se = log_hr.abs() / Z95;
        let _ = writeln!(out, "{log_hr},{se}");
    }
    out
}

pub fn forest_csv(report: &Report) -> String {
    let mut out = String::from(
        "outcome_id,risk_stratum,hr,hr_lo,hr_hi,ard,ard_lo,ard_hi,diagnostics_pass\n",
    );
    for outcome in &report.outcomes {
        for stratum in &outcome.strata {
            let e = &stratum.effect;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                e.outcome_id,
                e.risk_stratum,
                fmt_opt(&e.hr.map(|h| h.hr)),
                fmt_opt(&e.hr.map(|h| h.lo)),
                fmt_opt(&e.hr.map(|h| h.hi)),
                fmt_opt(&e.ard.map(|a| a.ard)),
                fmt_opt(&e.ard.map(|a| a.lo)),
                fmt_opt(&e.ard.map(|a| a.hi)),
                e.diagnostics.status.as_str(),
            );
        }
    }
    out
}

/// Writes every plot CSV into `dir`.
pub fn emit_plot_data(report: &Report, dir: impl AsRef<Path>) -> Result<(), StudyError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|source| StudyError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let files = [
        ("plot_preference.csv", preference_csv(report)),
        ("plot_balance.csv", balance_scatter_csv(report)),
        ("plot_controls.csv", control_scatter_csv(report)),
        ("plot_control_boundary.csv", control_boundary_csv()),
        ("plot_forest.csv", forest_csv(report)),
    ];
    for (name, contents) in files {
        let path = dir.join(name);
        std::fs::write(&path, contents).map_err(|source| StudyError::Write {
            path,
            source,
        })?;
    }
    Ok(())
}
