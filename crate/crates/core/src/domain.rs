//! Labels shared across the pipeline: subject areas, indicators and covariates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// A subject area label (e.g. `Chemistry`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubjectArea(pub String);

impl SubjectArea {
    pub fn new(name: impl Into<String>) -> Self {
        SubjectArea(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Lowercase ASCII path segment, e.g. `Pharmacology, Toxicology and Pharmaceutics`
    /// becomes `pharmacology-toxicology-and-pharmaceutics`.
    pub fn slug(&self) -> String {
        slugify(&self.0)
    }
}

impl fmt::Display for SubjectArea {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn slugify(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut dash = false;
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
            dash = false;
        } else if !dash && !out.is_empty() {
            out.push('-');
            dash = true;
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

/// The 17 subject areas of the 2006–2010 edition.
pub const SUBJECT_AREAS: [&str; 17] = [
    "Agricultural and Biological Science",
    "Biochemistry, Genetics and Molecular Biology",
    "Chemical Engineering",
    "Chemistry",
    "Computer Science",
    "Earth and Planetary Sciences",
    "Engineering",
    "Environmental Science",
    "Immunology and Microbiology",
    "Materials Science",
    "Mathematics",
    "Medicine",
    "Neuroscience",
    "Pharmacology, Toxicology and Pharmaceutics",
    "Physics and Astronomy",
    "Psychology",
    "Social Sciences",
];

/// Excellence indicator modelled as a binomial proportion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    /// Share of papers in the top 10% most cited of their subject and year.
    BestPaper,
    /// Share of papers in first-quartile journals of their subject.
    BestJournal,
}

impl Indicator {
    pub const ALL: [Indicator; 2] = [Indicator::BestPaper, Indicator::BestJournal];

    pub fn as_str(self) -> &'static str {
        match self {
            Indicator::BestPaper => "best_paper",
            Indicator::BestJournal => "best_journal",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "best_paper" => Ok(Indicator::BestPaper),
            "best_journal" => Ok(Indicator::BestJournal),
            other => Err(Error::Usage(format!(
                "unknown indicator `{other}` (expected best_paper or best_journal)"
            ))),
        }
    }
}

/// Covariates entering one-at-a-time adjusted models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    /// Institution-level share of internationally co-authored papers.
    Collaboration,
    /// Country corruption perception index (0–100).
    Corruption,
    /// Country residents in millions.
    Residents,
    /// Country GDP per capita in international dollars.
    Gdp,
}

impl Covariate {
    pub const ALL: [Covariate; 4] = [
        Covariate::Collaboration,
        Covariate::Corruption,
        Covariate::Residents,
        Covariate::Gdp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Covariate::Collaboration => "collaboration",
            Covariate::Corruption => "corruption",
            Covariate::Residents => "residents",
            Covariate::Gdp => "gdp",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Covariate::Collaboration => "International collaboration",
            Covariate::Corruption => "Corruption perception index",
            Covariate::Residents => "Number of residents",
            Covariate::Gdp => "Gross domestic product",
        }
    }

    pub fn is_country_level(self) -> bool {
        !matches!(self, Covariate::Collaboration)
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Covariate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Covariate::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                Error::Usage(format!(
                    "unknown covariate `{s}` (expected one of collaboration, corruption, residents, gdp)"
                ))
            })
    }
}

/// Path/query label for an optional covariate (`none` for the unadjusted model).
pub fn covariate_label(covariate: Option<Covariate>) -> &'static str {
    covariate.map_or("none", Covariate::as_str)
}

pub fn parse_covariate_label(s: &str) -> Result<Option<Covariate>, Error> {
    if s == "none" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}
