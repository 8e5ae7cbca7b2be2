//! Leave-one-subject-out splits.

use std::collections::BTreeMap;

use psl_core::{Error, Result};

/// One held-out subject with sample indices into the caller's list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fold {
    pub subject_id: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// One fold per subject in `roster`, ordered by subject id. `subjects[i]` is the
/// subject of sample `i`.
///
/// Fails when fewer than two subjects are listed, when a listed subject has no
/// samples, or when a sample belongs to a subject outside the roster.
pub fn loso_split<S: AsRef<str>>(subjects: &[S], roster: &[String]) -> Result<Vec<Fold>> {
    let mut by_subject: BTreeMap<&str, Vec<usize>> = roster.iter().map(|s| (s.as_str(), Vec::new())).collect();
    if by_subject.len() < 2 {
        return Err(Error::config(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            by_subject.len()
        )));
    }
    for (i, s) in subjects.iter().enumerate() {
        match by_subject.get_mut(s.as_ref()) {
            Some(v) => v.push(i),
            None => return Err(Error::config(format!("sample {i} belongs to unlisted subject `{}`", s.as_ref()))),
        }
    }
    let empty: Vec<&str> = by_subject.iter().filter(|(_, v)| v.is_empty()).map(|(s, _)| *s).collect();
    if !empty.is_empty() {
        return Err(Error::config(format!("subjects without samples: {}", empty.join(", "))));
    }
    Ok(by_subject
        .iter()
        .map(|(&subject, test)| Fold {
            subject_id: subject.to_string(),
            train: (0..subjects.len()).filter(|&i| subjects[i].as_ref() != subject).collect(),
            test: test.clone(),
        })
        .collect())
}

/// [`loso_split`] over the subjects that occur in `subjects`.
pub fn loso_folds<S: AsRef<str>>(subjects: &[S]) -> Result<Vec<Fold>> {
    let mut roster: Vec<String> = subjects.iter().map(|s| s.as_ref().to_string()).collect();
    roster.sort();
    roster.dedup();
    loso_split(subjects, &roster)
}
