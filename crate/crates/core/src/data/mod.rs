//! Panel data: households of binary outcomes with non-negative integer covariates.

mod csv;
mod spec;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use self::csv::{load_dataset, load_dataset_with, save_dataset, LoadOptions};
pub use self::spec::{GammaSpec, HeterogeneitySpec, MixtureSpec, PointMassSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub category: u32,
    pub occasion: u32,
    pub y: i64,
    pub x: Vec<i64>,
}

impl Observation {
    pub fn new(category: u32, occasion: u32, y: i64, x: Vec<i64>) -> Self {
        Observation { category, occasion, y, x }
    }
}

/// Observations are stored flattened over (category, occasion) in input order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Household {
    pub id: u64,
    pub observations: Vec<Observation>,
}

/// Real-valued covariate units. The likelihood sees `units[p] * x_p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScaleNote {
    pub units: Vec<f64>,
    /// Attributes whose sign was flipped at ingestion.
    pub flipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub households: Vec<Household>,
    pub n_attributes: usize,
    pub scale_note: Option<ScaleNote>,
}

impl Dataset {
    pub fn new(households: Vec<Household>, n_attributes: usize) -> Self {
        Dataset { households, n_attributes, scale_note: None }
    }

    /// Units per attribute; 1 when no scale note is attached.
    pub fn units(&self) -> Vec<f64> {
        match &self.scale_note {
            Some(note) if note.units.len() == self.n_attributes => note.units.clone(),
            _ => vec![1.0; self.n_attributes],
        }
    }

    pub fn n_observations(&self) -> usize {
        self.households.iter().map(|h| h.observations.len()).sum()
    }

    /// Fails with the first violation, if any.
    pub fn ensure_valid(&self) -> Result<()> {
        if self.households.is_empty() {
            return Err(Error::NoHouseholds);
        }
        match validate_dataset(self).into_iter().next() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidData(v.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    NoHouseholds,
    NoAttributes,
    EmptyHousehold,
    AttributeCount,
    OutcomeNotBinary,
    NegativeCovariate,
    AllZeroCovariates,
    NonPositiveUnit,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::NoHouseholds => "dataset must contain at least one household",
            Rule::NoAttributes => "attribute count P must be at least 1",
            Rule::EmptyHousehold => "household must have at least one observation",
            Rule::AttributeCount => "observation covariate count must equal P",
            Rule::OutcomeNotBinary => "outcome y must be 0 or 1",
            Rule::NegativeCovariate => "covariates must be non-negative",
            Rule::AllZeroCovariates => "at least one covariate must be positive",
            Rule::NonPositiveUnit => "covariate units must be positive and finite",
        };
        f.write_str(s)
    }
}

/// Location of a failed rule. Fields are `None` when the rule is not tied to one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub household: Option<u64>,
    pub category: Option<u32>,
    pub occasion: Option<u32>,
    pub attribute: Option<usize>,
    pub rule: Rule,
}

impl Violation {
    fn global(rule: Rule) -> Self {
        Violation { household: None, category: None, occasion: None, attribute: None, rule }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(i) = self.household {
            parts.push(format!("household {i}"));
        }
        if let Some(j) = self.category {
            parts.push(format!("category {j}"));
        }
        if let Some(t) = self.occasion {
            parts.push(format!("occasion {t}"));
        }
        if let Some(p) = self.attribute {
            parts.push(format!("attribute {}", p + 1));
        }
        if parts.is_empty() {
            write!(f, "{}", self.rule)
        } else {
            write!(f, "{}: {}", parts.join(", "), self.rule)
        }
    }
}

pub fn validate_dataset(d: &Dataset) -> Vec<Violation> {
    let mut out = Vec::new();
    if d.households.is_empty() {
        out.push(Violation::global(Rule::NoHouseholds));
    }
    if d.n_attributes == 0 {
        out.push(Violation::global(Rule::NoAttributes));
    }
    if let Some(note) = &d.scale_note {
        for (p, u) in note.units.iter().enumerate() {
            if !(*u > 0.0 && u.is_finite()) {
                out.push(Violation { attribute: Some(p), ..Violation::global(Rule::NonPositiveUnit) });
            }
        }
    }
    for h in &d.households {
        if h.observations.is_empty() {
            out.push(Violation { household: Some(h.id), ..Violation::global(Rule::EmptyHousehold) });
        }
        for o in &h.observations {
            let at = |attribute: Option<usize>, rule: Rule| Violation {
                household: Some(h.id),
                category: Some(o.category),
                occasion: Some(o.occasion),
                attribute,
                rule,
            };
            if o.x.len() != d.n_attributes {
                out.push(at(None, Rule::AttributeCount));
                continue;
            }
            if o.y != 0 && o.y != 1 {
                out.push(at(None, Rule::OutcomeNotBinary));
            }
            for (p, v) in o.x.iter().enumerate() {
                if *v < 0 {
                    out.push(at(Some(p), Rule::NegativeCovariate));
                }
            }
            if !o.x.is_empty() && o.x.iter().all(|v| *v == 0) {
                out.push(at(None, Rule::AllZeroCovariates));
            }
        }
    }
    out
}

/// Applies `map` to every covariate of the attributes in `flip`, without checks.
pub fn recode_with(d: &Dataset, flip: &BTreeSet<usize>, map: impl Fn(i64) -> i64) -> Dataset {
    let mut out = d.clone();
    for h in &mut out.households {
        for o in &mut h.observations {
            for p in flip {
                if let Some(v) = o.x.get_mut(*p) {
                    *v = map(*v);
                }
            }
        }
    }
    let mut note = out.scale_note.take().unwrap_or_else(|| ScaleNote {
        units: vec![1.0; d.n_attributes],
        flipped: Vec::new(),
    });
    let previous: BTreeSet<usize> = note.flipped.iter().copied().collect();
    note.flipped = previous.symmetric_difference(flip).copied().collect();
    out.scale_note = Some(note);
    out
}

/// Negates the flagged attributes; the flipped set in the scale note toggles.
pub fn negate_attributes(d: &Dataset, flip: &BTreeSet<usize>) -> Dataset {
    recode_with(d, flip, |v| -v)
}

/// Negates the flagged attributes and requires every result to be non-negative.
pub fn recode_negative(d: &Dataset, flip: &BTreeSet<usize>) -> Result<Dataset> {
    if let Some(p) = flip.iter().find(|p| **p >= d.n_attributes) {
        return Err(Error::InvalidData(format!(
            "flip index {p} out of range for P = {}",
            d.n_attributes
        )));
    }
    let out = negate_attributes(d, flip);
    for h in &out.households {
        for o in &h.observations {
            for p in flip {
                if o.x[*p] < 0 {
                    return Err(Error::InvalidData(format!(
                        "household {}, category {}, occasion {}: attribute {} is {} after recoding",
                        h.id,
                        o.category,
                        o.occasion,
                        p + 1,
                        o.x[*p]
                    )));
                }
            }
        }
    }
    Ok(out)
}

/// Removes observations whose covariates are all zero, then any emptied household.
pub fn drop_degenerate(d: &Dataset) -> (Dataset, usize) {
    let mut out = d.clone();
    let mut dropped = 0;
    for h in &mut out.households {
        let before = h.observations.len();
        h.observations.retain(|o| o.x.iter().any(|v| *v != 0));
        dropped += before - h.observations.len();
    }
    out.households.retain(|h| !h.observations.is_empty());
    (out, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(y: i64, x: Vec<i64>) -> Dataset {
        let p = x.len();
        Dataset::new(
            vec![Household { id: 1, observations: vec![Observation::new(1, 1, y, x)] }],
            p,
        )
    }

    #[test]
    fn validate_examples() {
        assert!(validate_dataset(&one(1, vec![1])).is_empty());
        let v = validate_dataset(&one(1, vec![0]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::AllZeroCovariates);
        let v = validate_dataset(&one(2, vec![1]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::OutcomeNotBinary);
        assert_eq!(v[0].to_string(), "household 1, category 1, occasion 1: outcome y must be 0 or 1");
    }

    #[test]
    fn validate_names_attribute() {
        let v = validate_dataset(&one(0, vec![3, -1]));
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].attribute, Some(1));
        assert_eq!(v[0].rule, Rule::NegativeCovariate);
        let d = Dataset::new(Vec::new(), 1);
        assert_eq!(validate_dataset(&d)[0].rule, Rule::NoHouseholds);
    }

    #[test]
    fn validate_rejects_ragged_attributes() {
        let mut d = one(0, vec![1, 2]);
        d.households[0].observations.push(Observation::new(1, 2, 0, vec![1]));
        let v = validate_dataset(&d);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::AttributeCount);
    }

    #[test]
    fn recode_examples() {
        let flip0: BTreeSet<usize> = [0].into();
        let r = recode_negative(&one(0, vec![-2]), &flip0).unwrap();
        assert_eq!(r.households[0].observations[0].x, vec![2]);
        assert_eq!(r.scale_note.as_ref().unwrap().flipped, vec![0]);

        let r = recode_negative(&one(0, vec![3]), &BTreeSet::new()).unwrap();
        assert_eq!(r.households[0].observations[0].x, vec![3]);

        let r = recode_negative(&one(0, vec![-1, 4]), &flip0).unwrap();
        assert_eq!(r.households[0].observations[0].x, vec![1, 4]);

        assert!(matches!(
            recode_negative(&one(0, vec![5]), &flip0),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn negation_is_an_involution() {
        let d = one(0, vec![-1, 4, 2]);
        let flip: BTreeSet<usize> = [0, 2].into();
        let twice = negate_attributes(&negate_attributes(&d, &flip), &flip);
        assert_eq!(twice.households, d.households);
        assert!(twice.scale_note.unwrap().flipped.is_empty());
    }

    #[test]
    fn drop_degenerate_removes_rows_and_empty_households() {
        let mut d = one(0, vec![0, 0]);
        d.households.push(Household {
            id: 2,
            observations: vec![
                Observation::new(1, 1, 0, vec![0, 0]),
                Observation::new(1, 2, 1, vec![0, 3]),
            ],
        });
        let (out, dropped) = drop_degenerate(&d);
        assert_eq!(dropped, 2);
        assert_eq!(out.households.len(), 1);
        assert_eq!(out.households[0].id, 2);
        assert!(validate_dataset(&out).is_empty());
    }
}
