//! Readers and writers for the three-file CSV exchange bundle.
//!
//! The formats are deliberately minimal: base-10 integers, UTF-8, LF line
//! endings, no quoting. Writing is canonical (ascending subject id, then
//! covariate/outcome id), so `load_bundle` followed by `write_bundle`
//! reproduces a canonical bundle byte for byte.

use super::{
    CohortRow, CohortTable, CovariateTable, DataError, SubjectId,
};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

pub const COVARIATES_HEADER: &str = "subject_id,covariate_id,value";
pub const COHORT_HEADER: &str = "subject_id,treatment,followup_days";
pub const OUTCOMES_HEADER: &str = "subject_id,outcome_id,event_day,prior_flag";

fn malformed(file: &Path, line: usize, reason: impl Into<String>) -> DataError {
    DataError::Malformed {
        file: file.to_path_buf(),
        line,
        reason: reason.into(),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn check_header(path: &Path, lines: &[String], expected: &str) -> Result<(), DataError> {
    match lines.first() {
        Some(h) if h == expected => Ok(()),
        Some(h) => Err(malformed(
            path,
            1,
            format!("expected header `{expected}`, found `{h}`"),
        )),
        None => Err(malformed(path, 1, format!("missing header `{expected}`"))),
    }
}

fn split_fields<'a>(
    path: &Path,
    line_no: usize,
    line: &'a str,
    expected: usize,
) -> Result<Vec<&'a str>, DataError> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() != expected {
        return Err(malformed(
            path,
            line_no,
            format!("expected {expected} fields, found {}", fields.len()),
        ));
    }
    Ok(fields)
}

fn parse_u64(path: &Path, line_no: usize, field: &str, name: &str) -> Result<u64, DataError> {
    field
        .parse::<u64>()
        .map_err(|_| malformed(path, line_no, format!("invalid {name} `{field}`")))
}

fn parse_u32(path: &Path, line_no: usize, field: &str, name: &str) -> Result<u32, DataError> {
    field
        .parse::<u32>()
        .map_err(|_| malformed(path, line_no, format!("invalid {name} `{field}`")))
}

/// Loads and validates a bundle. The cohort file defines the subject
/// universe; covariate and outcome rows must reference known subjects.
pub fn load_bundle(
    covariate_path: impl AsRef<Path>,
    cohort_path: impl AsRef<Path>,
    outcome_path: impl AsRef<Path>,
) -> Result<(CovariateTable, CohortTable), DataError> {
    let cohort_path = cohort_path.as_ref();
    let covariate_path = covariate_path.as_ref();
    let outcome_path = outcome_path.as_ref();

    // cohort.csv
    let lines = read_lines(cohort_path)?;
    check_header(cohort_path, &lines, COHORT_HEADER)?;
    let mut rows: Vec<CohortRow> = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut seen: HashSet<SubjectId> = HashSet::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let fields = split_fields(cohort_path, line_no, line, 3)?;
        let subject = parse_u64(cohort_path, line_no, fields[0], "subject_id")?;
        let treated = match fields[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(malformed(
                    cohort_path,
                    line_no,
                    format!("treatment must be 0 or 1, found `{other}`"),
                ))
            }
        };
        let followup = parse_u32(cohort_path, line_no, fields[2], "followup_days")?;
        if !seen.insert(subject) {
            return Err(malformed(
                cohort_path,
                line_no,
                format!("duplicate subject id {subject}"),
            ));
        }
        rows.push(CohortRow {
            subject_id: subject,
            treated,
            followup_days: followup,
            outcomes: BTreeMap::new(),
            prior_outcomes: BTreeSet::new(),
        });
    }
    let mut row_index: BTreeMap<SubjectId, usize> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        row_index.insert(row.subject_id, i);
    }

    // outcomes.csv
    let lines = read_lines(outcome_path)?;
    check_header(outcome_path, &lines, OUTCOMES_HEADER)?;
    for (i, line) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let fields = split_fields(outcome_path, line_no, line, 4)?;
        let subject = parse_u64(outcome_path, line_no, fields[0], "subject_id")?;
        let outcome = parse_u64(outcome_path, line_no, fields[1], "outcome_id")?;
        let event_day = parse_u32(outcome_path, line_no, fields[2], "event_day")?;
        let prior = match fields[3] {
            "0" => false,
            "1" => true,
            other => {
                return Err(malformed(
                    outcome_path,
                    line_no,
                    format!("prior_flag must be 0 or 1, found `{other}`"),
                ))
            }
        };
        let &row = row_index.get(&subject).ok_or_else(|| {
            malformed(
                outcome_path,
                line_no,
                format!("unknown subject id {subject}"),
            )
        })?;
        let row = &mut rows[row];
        if prior {
            if !row.prior_outcomes.insert(outcome) {
                return Err(malformed(
                    outcome_path,
                    line_no,
                    format!("duplicate prior record for subject {subject}, outcome {outcome}"),
                ));
            }
        } else {
            if event_day > row.followup_days {
                return Err(malformed(
                    outcome_path,
                    line_no,
                    format!(
                        "event day {event_day} exceeds follow-up {} for subject {subject}",
                        row.followup_days
                    ),
                ));
            }
            if row.outcomes.insert(outcome, event_day).is_some() {
                return Err(malformed(
                    outcome_path,
                    line_no,
                    format!("duplicate event record for subject {subject}, outcome {outcome}"),
                ));
            }
        }
    }
    let cohort = CohortTable::new(rows)?;

    // covariates.csv
    let lines = read_lines(covariate_path)?;
    check_header(covariate_path, &lines, COVARIATES_HEADER)?;
    let mut entries = Vec::with_capacity(lines.len().saturating_sub(1));
    let mut seen_pairs: HashSet<(SubjectId, u64)> = HashSet::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        let line_no = i + 1;
        let fields = split_fields(covariate_path, line_no, line, 3)?;
        let subject = parse_u64(covariate_path, line_no, fields[0], "subject_id")?;
        let covariate = parse_u64(covariate_path, line_no, fields[1], "covariate_id")?;
        let value: f64 = fields[2].parse().map_err(|_| {
            malformed(
                covariate_path,
                line_no,
                format!("invalid value `{}`", fields[2]),
            )
        })?;
        if !value.is_finite() {
            return Err(malformed(covariate_path, line_no, "non-finite value"));
        }
        if cohort.get(subject).is_none() {
            return Err(malformed(
                covariate_path,
                line_no,
                format!("unknown subject id {subject}"),
            ));
        }
        if !seen_pairs.insert((subject, covariate)) {
            return Err(malformed(
                covariate_path,
                line_no,
                format!("duplicate (subject_id, covariate_id) pair ({subject}, {covariate})"),
            ));
        }
        entries.push((subject, covariate, value));
    }
    let covariates =
        CovariateTable::from_entries(cohort.subject_ids().collect(), entries)?;

    Ok((covariates, cohort))
}

fn write_file(path: &Path, contents: &str) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(|source| DataError::Write {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(contents.as_bytes())
        .map_err(|source| DataError::Write {
            path: path.to_path_buf(),
            source,
        })
}

/// Writes the three bundle files into `dir` in canonical order.
pub fn write_bundle(
    covariates: &CovariateTable,
    cohort: &CohortTable,
    dir: impl AsRef<Path>,
) -> Result<(), DataError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|source| DataError::Write {
        path: dir.to_path_buf(),
        source,
    })?;

    let mut cov = String::from(COVARIATES_HEADER);
    cov.push('\n');
    for (subject, covariate, value) in covariates.iter_entries() {
        cov.push_str(&format!("{subject},{covariate},{value}\n"));
    }
    write_file(&dir.join("covariates.csv"), &cov)?;

    let mut coh = String::from(COHORT_HEADER);
    coh.push('\n');
    let mut out = String::from(OUTCOMES_HEADER);
    out.push('\n');
    for row in cohort.rows() {
        coh.push_str(&format!(
            "{},{},{}\n",
            row.subject_id,
            u8::from(row.treated),
            row.followup_days
        ));
        for (&outcome, &event_day) in &row.outcomes {
            out.push_str(&format!(
                "{},{},{},0\n",
                row.subject_id, outcome, event_day
            ));
        }
        for &outcome in &row.prior_outcomes {
            out.push_str(&format!("{},{},0,1\n", row.subject_id, outcome));
        }
    }
    write_file(&dir.join("cohort.csv"), &coh)?;
    write_file(&dir.join("outcomes.csv"), &out)?;
    Ok(())
}

pub fn bundle_paths(dir: impl AsRef<Path>) -> (PathBuf, PathBuf, PathBuf) {
    let dir = dir.as_ref();
    (
        dir.join("covariates.csv"),
        dir.join("cohort.csv"),
        dir.join("outcomes.csv"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(dir: &Path, name: &str, contents: &str) -> PathBuf {
        let path = dir.join(name);
        fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn duplicate_pair_cites_line() {
        let dir = tempfile::tempdir().unwrap();
        let cov = write_tmp(
            dir.path(),
            "covariates.csv",
            "subject_id,covariate_id,value\n1,10,1\n1,10,1\n",
        );
        let coh = write_tmp(
            dir.path(),
            "cohort.csv",
            "subject_id,treatment,followup_days\n1,1,730\n",
        );
        let out = write_tmp(
            dir.path(),
            "outcomes.csv",
            "subject_id,outcome_id,event_day,prior_flag\n",
        );
        let err = load_bundle(&cov, &coh, &out).unwrap_err();
        match err {
            DataError::Malformed { line, reason, .. } => {
                assert_eq!(line, 3);
                assert!(reason.contains("duplicate"));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_outcomes_file_gives_empty_maps() {
        let dir = tempfile::tempdir().unwrap();
        let cov = write_tmp(
            dir.path(),
            "covariates.csv",
            "subject_id,covariate_id,value\n",
        );
        let coh = write_tmp(
            dir.path(),
            "cohort.csv",
            "subject_id,treatment,followup_days\n1,1,10\n2,0,20\n",
        );
        let out = write_tmp(
            dir.path(),
            "outcomes.csv",
            "subject_id,outcome_id,event_day,prior_flag\n",
        );
        let (_, cohort) = load_bundle(&cov, &coh, &out).unwrap();
        assert!(cohort.rows().iter().all(|r| r.outcomes.is_empty()));
    }

    #[test]
    fn empty_tables_write_header_only_files() {
        let dir = tempfile::tempdir().unwrap();
        let cov = CovariateTable::from_entries(vec![], vec![]).unwrap();
        let coh = CohortTable::new(vec![]).unwrap();
        write_bundle(&cov, &coh, dir.path()).unwrap();
        assert_eq!(
            fs::read_to_string(dir.path().join("covariates.csv")).unwrap(),
            "subject_id,covariate_id,value\n"
        );
        assert_eq!(
            fs::read_to_string(dir.path().join("cohort.csv")).unwrap(),
            "subject_id,treatment,followup_days\n"
        );
        assert_eq!(
            fs::read_to_string(dir.path().join("outcomes.csv")).unwrap(),
            "subject_id,outcome_id,event_day,prior_flag\n"
        );
    }

    #[test]
    fn non_canonical_input_is_written_in_canonical_order() {
        let dir = tempfile::tempdir().unwrap();
        let cov = write_tmp(
            dir.path(),
            "covariates.csv",
            "subject_id,covariate_id,value\n2,20,1\n2,10,1\n1,10,1\n",
        );
        let coh = write_tmp(
            dir.path(),
            "cohort.csv",
            "subject_id,treatment,followup_days\n2,0,20\n1,1,10\n",
        );
        let out = write_tmp(
            dir.path(),
            "outcomes.csv",
            "subject_id,outcome_id,event_day,prior_flag\n",
        );
        let (covariates, cohort) = load_bundle(&cov, &coh, &out).unwrap();
        let out_dir = dir.path().join("canonical");
        write_bundle(&covariates, &cohort, &out_dir).unwrap();
        assert_eq!(
            fs::read_to_string(out_dir.join("covariates.csv")).unwrap(),
            "subject_id,covariate_id,value\n1,10,1\n2,10,1\n2,20,1\n"
        );
        assert_eq!(
            fs::read_to_string(out_dir.join("cohort.csv")).unwrap(),
            "subject_id,treatment,followup_days\n1,1,10\n2,0,20\n"
        );
    }
}
