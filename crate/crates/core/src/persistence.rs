//! Append-only edition store: a directory tree of JSON documents plus a
//! manifest with per-edition checksums.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<edition>/edition.json
//! <root>/<edition>/report.json
//! <root>/<edition>/datasets/<subject>/<indicator>.json
//! <root>/<edition>/fits/<subject|overall>/<indicator>/<covariate>.json
//! <root>/<edition>/rankings/<subject>/<indicator>/<covariate>.json
//! ```
//!
//! Subjects are stored under their slug, covariates under their label
//! (`none` for the unadjusted model).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{covariate_label, Covariate, Indicator, SubjectArea};
use crate::error::{Error, Result};
use crate::glmm::FitResult;
use crate::ingest::SubjectDataset;
use crate::ranking::RankingTable;
use crate::report::EditionReport;

pub const MANIFEST: &str = "manifest.json";
pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edition {
    pub edition_id: String,
    pub publication_window: (i32, i32),
    /// ISO date of the citation count snapshot.
    pub citation_cutoff: String,
    pub subjects: Vec<SubjectArea>,
    pub indicators: Vec<Indicator>,
    /// Fitted covariate models, `None` being the unadjusted one.
    pub covariates: Vec<Option<Covariate>>,
}

impl Edition {
    pub fn validate(&self) -> Result<()> {
        let (a, b) = self.publication_window;
        if a > b {
            return Err(Error::Validation(format!("publication window {a}-{b} is reversed")));
        }
        if self.edition_id.is_empty()
            || !self
                .edition_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
            || self.edition_id.starts_with('.')
        {
            return Err(Error::Validation(format!(
                "edition id `{}` must be non-empty ASCII letters, digits, `-`, `_` or `.`",
                self.edition_id
            )));
        }
        Ok(())
    }

    pub fn subject_by_key(&self, key: &str) -> Option<&SubjectArea> {
        self.subjects.iter().find(|s| s.as_str() == key || s.slug() == key)
    }
}

/// A fitted model and the table key it belongs to; `subject_area = None`
/// marks an overall dummy-coded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredFit {
    pub subject_area: Option<SubjectArea>,
    pub indicator: Indicator,
    pub covariate: Option<Covariate>,
    pub fit: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditionContent {
    pub edition: Edition,
    pub datasets: Vec<SubjectDataset>,
    pub fits: Vec<StoredFit>,
    pub rankings: Vec<RankingTable>,
    pub report: Option<EditionReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub edition_id: String,
    pub publication_window: (i32, i32),
    /// Unix seconds; kept out of the edition files so checksums are reproducible.
    pub created_at: u64,
    /// SHA-256 over the sorted `(path, file digest)` list.
    pub checksum: String,
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub editions: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Checksum of a set of files, independent of write order.
pub fn edition_checksum(files: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (path, digest) in files {
        h.update(path.as_bytes());
        h.update(b"\0");
        h.update(digest.as_bytes());
        h.update(b"\n");
    }
    hex(&h.finalize())
}

pub fn ranking_rel_path(subject: &SubjectArea, indicator: Indicator, covariate: Option<Covariate>) -> String {
    format!("rankings/{}/{}/{}.json", subject.slug(), indicator, covariate_label(covariate))
}

pub fn fit_rel_path(subject: Option<&SubjectArea>, indicator: Indicator, covariate: Option<Covariate>) -> String {
    let scope = subject.map_or(OVERALL.to_string(), |s| s.slug());
    format!("fits/{scope}/{indicator}/{}.json", covariate_label(covariate))
}

fn dataset_rel_path(subject: &SubjectArea, indicator: Indicator) -> String {
    format!("datasets/{}/{indicator}.json", subject.slug())
}

/// Serializes every document of an edition, keyed by relative path.
pub fn render_edition(content: &EditionContent) -> Result<BTreeMap<String, Vec<u8>>> {
    let ed = &content.edition;
    ed.validate()?;
    let mut slugs = BTreeMap::new();
    for s in &ed.subjects {
        if let Some(prev) = slugs.insert(s.slug(), s) {
            return Err(Error::Validation(format!("subjects `{prev}` and `{s}` share a path slug")));
        }
    }
    let mut docs = BTreeMap::new();
    let mut put = |path: String, bytes: Vec<u8>| {
        if docs.insert(path.clone(), bytes).is_some() {
            Err(Error::Validation(format!("duplicate document `{path}`")))
        } else {
            Ok(())
        }
    };
    put("edition.json".into(), to_json(ed)?)?;
    if let Some(r) = &content.report {
        put("report.json".into(), to_json(r)?)?;
    }
    let known = |s: &SubjectArea| {
        if ed.subjects.contains(s) {
            Ok(())
        } else {
            Err(Error::Validation(format!("subject `{s}` is not part of edition `{}`", ed.edition_id)))
        }
    };
    for d in &content.datasets {
        known(&d.subject_area)?;
        put(dataset_rel_path(&d.subject_area, d.indicator), to_json(d)?)?;
    }
    for f in &content.fits {
        if let Some(s) = &f.subject_area {
            known(s)?;
        }
        put(fit_rel_path(f.subject_area.as_ref(), f.indicator, f.covariate), to_json(f)?)?;
    }
    for t in &content.rankings {
        known(&t.subject_area)?;
        t.validate()?;
        put(ranking_rel_path(&t.subject_area, t.indicator, t.covariate), to_json(t)?)?;
    }
    for s in &ed.subjects {
        for i in &ed.indicators {
            for c in &ed.covariates {
                let path = ranking_rel_path(s, *i, *c);
                if !docs.contains_key(&path) {
                    return Err(Error::Validation(format!("edition is incomplete: missing {path}")));
                }
            }
        }
    }
    Ok(docs)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Store { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> Result<Manifest> {
        let path = self.root.join(MANIFEST);
        match fs::read(&path) {
            Ok(bytes) => Ok(serde_json::from_slice(&bytes)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Writes a complete edition. The documents are staged in a hidden
    /// directory and renamed into place; the manifest is replaced last, so
    /// readers going through the manifest never see a partial edition.
    pub fn store_edition(&self, content: &EditionContent, created_at: u64) -> Result<ManifestEntry> {
        let docs = render_edition(content)?;
        let id = &content.edition.edition_id;
        let mut manifest = self.manifest()?;
        let target = self.root.join(id);
        if manifest.editions.iter().any(|e| &e.edition_id == id) || target.exists() {
            return Err(Error::Conflict(format!("edition `{id}` already exists")));
        }
        fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let staging = self.root.join(format!(".staging-{id}-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
        }
        let result = (|| {
            let mut files = BTreeMap::new();
            for (rel, bytes) in &docs {
                write_file(&staging.join(rel), bytes)?;
                files.insert(rel.clone(), sha256_hex(bytes));
            }
            fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))?;
            Ok(files)
        })();
        let files = match result {
            Ok(f) => f,
            Err(e) => {
                let _ = fs::remove_dir_all(&staging);
                return Err(e);
            }
        };
        let entry = ManifestEntry {
            edition_id: id.clone(),
            publication_window: content.edition.publication_window,
            created_at,
            checksum: edition_checksum(&files),
            files,
        };
        manifest.editions.push(entry.clone());
        let tmp = self.root.join(format!(".{MANIFEST}.{}", std::process::id()));
        write_file(&tmp, &to_json(&manifest)?)?;
        let path = self.root.join(MANIFEST);
        fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))?;
        Ok(entry)
    }

    pub fn entry(&self, edition_id: &str) -> Result<ManifestEntry> {
        self.manifest()?
            .editions
            .into_iter()
            .find(|e| e.edition_id == edition_id)
            .ok_or_else(|| Error::NotFound(format!("edition `{edition_id}`")))
    }

    pub fn edition(&self, edition_id: &str) -> Result<Edition> {
        let bytes = self.document(edition_id, "edition.json")?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Raw bytes of a document listed in the manifest.
    pub fn document(&self, edition_id: &str, rel: &str) -> Result<Vec<u8>> {
        let entry = self.entry(edition_id)?;
        if !entry.files.contains_key(rel) {
            return Err(Error::NotFound(format!("`{rel}` in edition `{edition_id}`")));
        }
        read(&self.root.join(edition_id).join(rel))
    }

    pub fn ranking_bytes(
        &self,
        edition_id: &str,
        subject: &SubjectArea,
        indicator: Indicator,
        covariate: Option<Covariate>,
    ) -> Result<Vec<u8>> {
        self.document(edition_id, &ranking_rel_path(subject, indicator, covariate))
    }

    pub fn load_ranking(
        &self,
        edition_id: &str,
        subject: &SubjectArea,
        indicator: Indicator,
        covariate: Option<Covariate>,
    ) -> Result<RankingTable> {
        let bytes = self.ranking_bytes(edition_id, subject, indicator, covariate)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn load_fit(
        &self,
        edition_id: &str,
        subject: Option<&SubjectArea>,
        indicator: Indicator,
        covariate: Option<Covariate>,
    ) -> Result<StoredFit> {
        let bytes = self.document(edition_id, &fit_rel_path(subject, indicator, covariate))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn load_report(&self, edition_id: &str) -> Result<EditionReport> {
        Ok(serde_json::from_slice(&self.document(edition_id, "report.json")?)?)
    }

    /// Recomputes file digests and compares them with the manifest.
    pub fn verify(&self, edition_id: &str) -> Result<()> {
        let entry = self.entry(edition_id)?;
        for (rel, digest) in &entry.files {
            let actual = sha256_hex(&read(&self.root.join(edition_id).join(rel))?);
            if &actual != digest {
                return Err(Error::Validation(format!("checksum mismatch for {edition_id}/{rel}")));
            }
        }
        Ok(())
    }
}
