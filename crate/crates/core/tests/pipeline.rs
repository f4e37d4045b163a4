//! Integration tests that drive whole-module flows on simulated data.

mod common;

use common::*;
use riskstrat_core::data::{load_bundle, write_bundle, StudySettings};
use riskstrat_core::propensity::{compute_balance, Adjustment};
use riskstrat_core::risk::{develop_risk_model, evaluate_risk_model, stratify_by_risk};
use riskstrat_core::sim::{negative_control_ids, simulate};
use riskstrat_core::study::{run_study, validate_config, ReportOptions, StudyConfig};
use riskstrat_core::survival::{fit_cox, survival_rows, StratumLabel};
use riskstrat_core::lasso::{model_from_json, model_to_json, PopulationLabel};
use riskstrat_core::rng::{stream, Purpose};
use rand::seq::SliceRandom;
use std::collections::HashSet;

#[test]
fn crude_hazard_ratio_reflects_confounding_direction() {
    // Confounding on: x1..x3 raise both treatment probability and hazard,
    // so the crude hazard ratio must exceed 1 even though the true effect
    // is null. The crude estimate is checked against the brute-force
    // partial-likelihood grid search.
    let spec = confounded_null_spec(20_000, 41);
    let (_, cohort, _) = simulate(&spec).unwrap();
    let subjects: Vec<u64> = cohort.subject_ids().collect();
    let (times, events, treated) = survival_rows(&cohort, &subjects, MAIN_OUTCOME, 730);
    let strata = vec![1usize; subjects.len()];
    let fit = fit_cox(
        &times,
        &events,
        &treated,
        &strata,
        riskstrat_core::data::TieMethod::Efron,
    )
    .unwrap();
    assert!(
        fit.log_hr > 0.15,
        "crude log HR {} should be biased upward",
        fit.log_hr
    );
    let oracle = grid_search_cox(&times, &events, &treated, &strata);
    assert!(
        (fit.log_hr - oracle).abs() < 1e-6,
        "newton {} vs grid {}",
        fit.log_hr,
        oracle
    );

    // Confounding off: crude estimate sits near the truth.
    let spec = randomized_constant_hr_spec(20_000, 42, 0.8);
    let (_, cohort, _) = simulate(&spec).unwrap();
    let subjects: Vec<u64> = cohort.subject_ids().collect();
    let (times, events, treated) = survival_rows(&cohort, &subjects, MAIN_OUTCOME, 730);
    let strata = vec![1usize; subjects.len()];
    let fit = fit_cox(
        &times,
        &events,
        &treated,
        &strata,
        riskstrat_core::data::TieMethod::Efron,
    )
    .unwrap();
    assert!(
        (fit.log_hr - 0.8f64.ln()).abs() < 3.0 * fit.se,
        "crude log HR {} (se {}) should track ln 0.8",
        fit.log_hr,
        fit.se
    );
}

#[test]
fn permuted_treatment_labels_cover_the_null() {
    // Permuting treatment breaks any association: the 95% CI must cover
    // HR = 1 in at least 93 of 100 permutations.
    let spec = confounded_null_spec(4_000, 7);
    let (_, cohort, _) = simulate(&spec).unwrap();
    let subjects: Vec<u64> = cohort.subject_ids().collect();
    let (times, events, treated) = survival_rows(&cohort, &subjects, MAIN_OUTCOME, 730);
    let strata = vec![1usize; subjects.len()];
    let mut covered = 0;
    for rep in 0..100u64 {
        let mut permuted = treated.clone();
        permuted.shuffle(&mut stream(99, rep, Purpose::Permutation, 0));
        let fit = fit_cox(
            &times,
            &events,
            &permuted,
            &strata,
            riskstrat_core::data::TieMethod::Efron,
        )
        .unwrap();
        let (lo, hi) = fit.hr_ci95();
        if lo <= 1.0 && 1.0 <= hi {
            covered += 1;
        }
    }
    assert!(covered >= 93, "null coverage {covered}/100");
}

#[test]
fn risk_model_orders_subjects_by_true_risk() {
    let spec = randomized_constant_hr_spec(20_000, 13, 1.0);
    let (cov, cohort, truth) = simulate(&spec).unwrap();
    let settings = settings_for(&spec, &[]);
    let strat = stratify_by_risk(&cov, &cohort, MAIN_OUTCOME, &settings, None).unwrap();

    // Four population rows in the fixed order.
    let labels: Vec<PopulationLabel> =
        strat.performance.iter().map(|p| p.population).collect();
    assert_eq!(
        labels,
        vec![
            PopulationLabel::Matched,
            PopulationLabel::Treatment,
            PopulationLabel::Comparator,
            PopulationLabel::Entire
        ]
    );

    // Mean predicted risk strictly increases across strata.
    let k = settings.risk_strata_count;
    let mut mean_pred = vec![0.0; k];
    let mut mean_true = vec![0.0; k];
    let mut counts = vec![0.0; k];
    let truth_rows = &truth.outcomes[&MAIN_OUTCOME];
    for (i, &subject) in strat.eligible.iter().enumerate() {
        let q = strat.labels[i] - 1;
        mean_pred[q] += strat.predictions[i];
        mean_true[q] += truth_rows.true_risk[subject as usize - 1];
        counts[q] += 1.0;
    }
    for q in 0..k {
        mean_pred[q] /= counts[q];
        mean_true[q] /= counts[q];
    }
    for q in 1..k {
        assert!(
            mean_pred[q] > mean_pred[q - 1],
            "predicted risk means not increasing: {mean_pred:?}"
        );
    }
    // The fitted model discriminates, so true risk rises across predicted
    // strata too.
    let c = strat.performance[3].c_statistic.unwrap().estimate;
    assert!(c > 0.6, "entire-population c-statistic {c}");
    for q in 1..k {
        assert!(
            mean_true[q] > mean_true[q - 1],
            "true risk means not increasing: {mean_true:?}"
        );
    }
    // Strata partition the eligible population.
    let union: usize = counts.iter().map(|&c| c as usize).sum();
    assert_eq!(union, strat.eligible.len());
}

#[test]
fn matched_development_balances_confounders() {
    let spec = confounded_null_spec(10_000, 99);
    let (cov, cohort, _) = simulate(&spec).unwrap();
    let settings = settings_for(&spec, &[]);
    let (dev, _model) = develop_risk_model(&cov, &cohort, MAIN_OUTCOME, &settings).unwrap();

    let eligible: Vec<u64> = cohort.subject_ids().collect();
    let treated: Vec<bool> = cohort.rows().iter().map(|r| r.treated).collect();
    let rows = compute_balance(
        &cov,
        &eligible,
        &treated,
        Adjustment::MatchedSet(&dev.matched_subjects),
    )
    .unwrap();
    let max_before = rows.iter().map(|r| r.smd_before.abs()).fold(0.0, f64::max);
    let max_after = rows.iter().map(|r| r.smd_after.abs()).fold(0.0, f64::max);
    assert!(max_before > 0.1, "confounders should start imbalanced: {max_before}");
    assert!(max_after < 0.1, "matching should balance: {max_after}");

    // Matched pairs cross arms by construction; development labels exclude
    // nobody here (no prior outcomes in simulated data).
    assert!(dev.n_development_events >= settings.min_events);
}

#[test]
fn evaluate_risk_model_flags_single_class_population_without_failing() {
    let spec = no_signal_spec(4_000, 3);
    let (cov, cohort, _) = simulate(&spec).unwrap();
    let settings = StudySettings {
        outcome_ids: vec![MAIN_OUTCOME],
        // An outcome id nobody has: labels are single-class everywhere.
        ..settings_for(&spec, &[])
    };
    let (dev, model) = develop_risk_model(&cov, &cohort, MAIN_OUTCOME, &settings).unwrap();
    let rows = evaluate_risk_model(
        &model,
        &cov,
        &cohort,
        777, // no events for this outcome id
        &dev.matched_subjects,
        &settings,
    );
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert!(row.c_statistic.is_none());
        assert!(row.note.is_some());
    }
}

#[test]
fn end_to_end_bundle_is_complete_and_cross_referenced() {
    let spec = clean_null_controls_spec(4_000, 21, 10);
    let (cov, cohort, _) = simulate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    write_bundle(&cov, &cohort, &bundle_dir).unwrap();

    let config = StudyConfig {
        covariates: bundle_dir.join("covariates.csv"),
        cohort: bundle_dir.join("cohort.csv"),
        outcomes: bundle_dir.join("outcomes.csv"),
        output_dir: None,
        settings: StudySettings {
            min_events: 10,
            ..settings_for(&spec, &negative_control_ids(10))
        },
        report: ReportOptions {
            emit_km_curves: true,
            bootstrap_reps: 50,
        },
        external_risk_models: Default::default(),
    };
    let bundle = run_study(&config).unwrap();
    let out = dir.path().join("results");
    bundle.write(&out).unwrap();

    for file in [
        "report.json",
        "estimates.csv",
        "balance.csv",
        "ncs.csv",
        "verdicts.csv",
        "risk.csv",
        "ps.csv",
        "nulls.json",
        "km.csv",
        "model_101.json",
    ] {
        assert!(out.join(file).is_file(), "{file} missing");
    }

    // estimates.csv rows and verdicts.csv rows describe the same strata.
    let keys = |text: &str| -> HashSet<(String, String)> {
        text.lines()
            .skip(1)
            .map(|l| {
                let mut parts = l.split(',');
                (
                    parts.next().unwrap().to_string(),
                    parts.next().unwrap().to_string(),
                )
            })
            .collect()
    };
    let estimates = std::fs::read_to_string(out.join("estimates.csv")).unwrap();
    let verdicts = std::fs::read_to_string(out.join("verdicts.csv")).unwrap();
    assert_eq!(keys(&estimates), keys(&verdicts));
    // One row per quarter plus the overall row.
    assert_eq!(
        estimates.lines().count() - 1,
        config.settings.risk_strata_count + 1
    );
    assert!(estimates.lines().any(|l| l.contains(",overall,")));

    // Every subject lands in exactly one risk stratum or the exclusion
    // ledger.
    let outcome_report = &bundle.report.outcomes[0];
    let in_strata: usize = outcome_report
        .strata
        .iter()
        .filter(|s| s.label != StratumLabel::Overall)
        .map(|s| s.effect.n_treated + s.effect.n_comparator)
        .sum();
    assert_eq!(
        in_strata + outcome_report.excluded_prior_outcome.len(),
        cohort.len()
    );

    // Person-years bookkeeping: reported person-years match an independent
    // sum of capped follow-up.
    let subjects: Vec<u64> = cohort.subject_ids().collect();
    let (times, _, treated_flags) = survival_rows(&cohort, &subjects, MAIN_OUTCOME, 730);
    let expected_py: f64 = times
        .iter()
        .zip(&treated_flags)
        .filter(|(_, &t)| t)
        .map(|(&d, _)| f64::from(d))
        .sum::<f64>()
        / 365.25;
    let overall = outcome_report
        .strata
        .iter()
        .find(|s| s.label == StratumLabel::Overall)
        .unwrap();
    assert!(
        (overall.effect.person_years_treated - expected_py).abs() < 1e-9,
        "person-years {} vs {}",
        overall.effect.person_years_treated,
        expected_py
    );
    let cap = cohort.len() as f64 * 730.0 / 365.25;
    assert!(overall.effect.person_years_treated + overall.effect.person_years_comparator <= cap);

    // model.json round-trips through the wire format.
    let wire = std::fs::read_to_string(out.join("model_101.json")).unwrap();
    let parsed = model_from_json(&wire).unwrap();
    assert_eq!(model_to_json(&parsed), wire);

    // The emitted bundle loads back and the config validates.
    let (cov2, cohort2) = load_bundle(
        &config.covariates,
        &config.cohort,
        &config.outcomes,
    )
    .unwrap();
    assert_eq!(cov2, cov);
    assert_eq!(cohort2, cohort);
    let config_path = dir.path().join("study.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    validate_config(&config_path).unwrap();
}

#[test]
fn bundle_round_trip_is_byte_identical() {
    let spec = confounded_null_spec(100, 5);
    let (cov, cohort, _) = simulate(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    write_bundle(&cov, &cohort, &first).unwrap();
    let (cov2, cohort2) = load_bundle(
        first.join("covariates.csv"),
        first.join("cohort.csv"),
        first.join("outcomes.csv"),
    )
    .unwrap();
    assert_eq!(cov, cov2);
    assert_eq!(cohort, cohort2);
    let second = dir.path().join("second");
    write_bundle(&cov2, &cohort2, &second).unwrap();
    for name in ["covariates.csv", "cohort.csv", "outcomes.csv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name} differs after round trip"
        );
    }
}

#[test]
fn restricted_cohort_halves_and_preserves_invariants() {
    let spec = confounded_null_spec(2_000, 17);
    let (_, cohort, _) = simulate(&spec).unwrap();
    let half: HashSet<u64> = cohort
        .subject_ids()
        .filter(|s| s % 2 == 0)
        .collect();
    let restricted = cohort.restrict(&half).unwrap();
    assert_eq!(restricted.len(), half.len());
    assert!(restricted.rows().windows(2).all(|w| w[0].subject_id < w[1].subject_id));
    // Input untouched.
    assert_eq!(cohort.len(), 2_000);
}
