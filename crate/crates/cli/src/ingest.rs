//! CSV ingestion and the canonical dataset writer.
//!
//! Input is one study per row with a header. Columns are mapped by name; the
//! within-study correlation column is optional. A field equal to the missing
//! token (or empty) is ABSENT. Lines starting with `#` are comments.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use mvpb::{MetaDataset, Observation, Study, OUTCOMES};
use thiserror::Error;

pub const DATASET_SCHEMA: &str = "# mvpb-dataset v1";

/// Declared scale of the effect sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectScale {
    /// Logit sensitivity / logit specificity; the log DOR combination applies.
    Logit,
    LogOddsRatio,
    Raw,
}

impl FromStr for EffectScale {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "logit" => Ok(EffectScale::Logit),
            "log-odds-ratio" | "logor" | "lor" => Ok(EffectScale::LogOddsRatio),
            "raw" => Ok(EffectScale::Raw),
            other => Err(format!("unknown effect scale '{other}' (expected logit, log-odds-ratio or raw)")),
        }
    }
}

impl fmt::Display for EffectScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EffectScale::Logit => "logit",
            EffectScale::LogOddsRatio => "log-odds-ratio",
            EffectScale::Raw => "raw",
        })
    }
}

/// Header names of the mapped columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub id: String,
    pub y: [String; OUTCOMES],
    pub se: [String; OUTCOMES],
    /// Optional: when the header lacks it, complete rows need a default.
    pub rho_w: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            id: "study".into(),
            y: ["y1".into(), "y2".into()],
            se: ["se1".into(), "se2".into()],
            rho_w: "rho_w".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IngestSpec {
    pub path: PathBuf,
    pub columns: ColumnMap,
    /// Token marking an absent value; empty fields are always absent.
    pub missing: String,
    pub scale: Option<EffectScale>,
    /// Imputed for complete rows without a within-study correlation.
    pub default_rho_w: Option<f64>,
    pub outcome_names: [String; OUTCOMES],
}

impl IngestSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            columns: ColumnMap::default(),
            missing: String::new(),
            scale: None,
            default_rho_w: None,
            outcome_names: ["outcome1".into(), "outcome2".into()],
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let token = self.missing.trim();
        if !token.is_empty() && token.parse::<f64>().is_ok() {
            return Err(IngestError::AmbiguousMissingToken(self.missing.clone()));
        }
        if let Some(r) = self.default_rho_w {
            if !(-1.0..=1.0).contains(&r) {
                return Err(IngestError::InvalidDefault(r));
            }
        }
        Ok(())
    }
}

/// Validation rule a rejected row broke.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    MissingId,
    DuplicateId,
    Unparseable,
    /// An effect without its standard error, or the reverse.
    UnpairedValue,
    NonFiniteEffect,
    NonPositiveSe,
    RhoOutOfRange,
    MissingRho,
    NoOutcome,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Rule::MissingId => "missing-id",
            Rule::DuplicateId => "duplicate-id",
            Rule::Unparseable => "unparseable",
            Rule::UnpairedValue => "unpaired-value",
            Rule::NonFiniteEffect => "non-finite-effect",
            Rule::NonPositiveSe => "non-positive-se",
            Rule::RhoOutOfRange => "rho-out-of-range",
            Rule::MissingRho => "missing-rho",
            Rule::NoOutcome => "no-outcome",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowDiagnostic {
    /// 1-based line in the input file.
    pub line: u64,
    pub id: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {} (study '{}'): {}: {}", self.line, self.id, self.rule, self.message)
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}")]
    Io { path: PathBuf, source: io::Error },
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("missing-value token '{0}' parses as a number")]
    AmbiguousMissingToken(String),
    #[error("default within-study correlation {0} outside [-1, 1]")]
    InvalidDefault(f64),
    #[error("no valid studies ({} row(s) rejected)", .0.len())]
    Empty(Vec<RowDiagnostic>),
}

#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: MetaDataset,
    /// Rejected rows.
    pub diagnostics: Vec<RowDiagnostic>,
    /// Complete rows that received the default correlation.
    pub imputed_rho: usize,
}

pub fn ingest(spec: &IngestSpec) -> Result<Ingested, IngestError> {
    let file = File::open(&spec.path).map_err(|source| IngestError::Io {
        path: spec.path.clone(),
        source,
    })?;
    ingest_reader(file, spec)
}

struct Columns {
    id: usize,
    y: [usize; OUTCOMES],
    se: [usize; OUTCOMES],
    rho_w: Option<usize>,
}

fn locate(headers: &csv::StringRecord, map: &ColumnMap) -> Result<Columns, IngestError> {
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    };
    Ok(Columns {
        id: find(&map.id)?,
        y: [find(&map.y[0])?, find(&map.y[1])?],
        se: [find(&map.se[0])?, find(&map.se[1])?],
        rho_w: headers.iter().position(|h| h == map.rho_w),
    })
}

/// Reads a dataset from any reader; `spec.path` is only used for messages.
pub fn ingest_reader<R: Read>(reader: R, spec: &IngestSpec) -> Result<Ingested, IngestError> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let cols = locate(rdr.headers()?, &spec.columns)?;
    let missing = spec.missing.trim();

    let mut studies = Vec::new();
    let mut diagnostics = Vec::new();
    let mut seen = HashSet::new();
    let mut imputed_rho = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = record.get(cols.id).unwrap_or("").to_string();
        let reject = |rule: Rule, message: String| RowDiagnostic {
            line,
            id: id.clone(),
            rule,
            message,
        };
        match parse_row(&record, &cols, &id, missing, spec, &mut seen) {
            Ok((study, imputed)) => {
                imputed_rho += usize::from(imputed);
                studies.push(study);
            }
            Err((rule, message)) => diagnostics.push(reject(rule, message)),
        }
    }
    if studies.is_empty() {
        return Err(IngestError::Empty(diagnostics));
    }
    let dataset = MetaDataset::new(studies, spec.outcome_names.clone()).expect("non-empty");
    Ok(Ingested {
        dataset,
        diagnostics,
        imputed_rho,
    })
}

type RowError = (Rule, String);

fn field(record: &csv::StringRecord, col: usize, name: &str, missing: &str) -> Result<Option<f64>, RowError> {
    let raw = record.get(col).unwrap_or("");
    if raw.is_empty() || raw == missing {
        return Ok(None);
    }
    raw.parse::<f64>()
        .map(Some)
        .map_err(|_| (Rule::Unparseable, format!("{name} = '{raw}' is not a number")))
}

fn parse_row(
    record: &csv::StringRecord,
    cols: &Columns,
    id: &str,
    missing: &str,
    spec: &IngestSpec,
    seen: &mut HashSet<String>,
) -> Result<(Study, bool), RowError> {
    let map = &spec.columns;
    if id.is_empty() || id == missing {
        return Err((Rule::MissingId, "study id is empty".into()));
    }
    if seen.contains(id) {
        return Err((Rule::DuplicateId, format!("study id '{id}' already used")));
    }
    let mut outcomes = [None; OUTCOMES];
    for j in 0..OUTCOMES {
        let y = field(record, cols.y[j], &map.y[j], missing)?;
        let se = field(record, cols.se[j], &map.se[j], missing)?;
        outcomes[j] = match (y, se) {
            (None, None) => None,
            (Some(y), Some(se)) => {
                if !y.is_finite() {
                    return Err((Rule::NonFiniteEffect, format!("{} = {y} must be finite", map.y[j])));
                }
                if !(se.is_finite() && se > 0.0) {
                    return Err((Rule::NonPositiveSe, format!("{} = {se} must be positive", map.se[j])));
                }
                Some(Observation::new(y, se))
            }
            (Some(_), None) => return Err((Rule::UnpairedValue, format!("{} given without {}", map.y[j], map.se[j]))),
            (None, Some(_)) => return Err((Rule::UnpairedValue, format!("{} given without {}", map.se[j], map.y[j]))),
        };
    }
    if outcomes.iter().all(Option::is_none) {
        return Err((Rule::NoOutcome, "neither outcome is reported".into()));
    }
    let complete = outcomes.iter().all(Option::is_some);
    let rho = match cols.rho_w {
        Some(c) => field(record, c, &map.rho_w, missing)?,
        None => None,
    };
    let mut imputed = false;
    let rho = match rho {
        Some(r) if !(-1.0..=1.0).contains(&r) => {
            return Err((Rule::RhoOutOfRange, format!("{} = {r} outside [-1, 1]", map.rho_w)));
        }
        Some(r) => Some(r),
        None if complete => match spec.default_rho_w {
            Some(r) => {
                imputed = true;
                Some(r)
            }
            None => {
                return Err((
                    Rule::MissingRho,
                    format!("both outcomes reported but {} is absent (pass --default-rho-w to impute)", map.rho_w),
                ))
            }
        },
        None => None,
    };
    let study = Study::new(id, outcomes, rho).map_err(|e| (Rule::Unparseable, e.to_string()))?;
    seen.insert(id.to_string());
    Ok((study, imputed))
}

/// Writes `data` in the canonical layout read back by [`ingest`] with the
/// default [`IngestSpec`]. Numbers use the shortest exact representation.
pub fn write_dataset<W: Write>(mut w: W, data: &MetaDataset) -> io::Result<()> {
    writeln!(w, "{DATASET_SCHEMA}")?;
    let mut out = csv::Writer::from_writer(w);
    let map = ColumnMap::default();
    out.write_record([&map.id, &map.y[0], &map.se[0], &map.y[1], &map.se[1], &map.rho_w])?;
    let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in data.studies() {
        let o = s.outcomes();
        out.write_record([
            s.id().to_string(),
            num(o[0].map(|o| o.y)),
            num(o[0].map(|o| o.se)),
            num(o[1].map(|o| o.y)),
            num(o[1].map(|o| o.se)),
            num(s.rho_w()),
        ])?;
    }
    out.flush()
}

/// Convenience for fixtures.
pub fn write_dataset_file(path: &Path, data: &MetaDataset) -> io::Result<()> {
    write_dataset(io::BufWriter::new(File::create(path)?), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, spec: &IngestSpec) -> Result<Ingested, IngestError> {
        ingest_reader(text.as_bytes(), spec)
    }

    fn spec() -> IngestSpec {
        IngestSpec::new("inline.csv")
    }

    #[test]
    fn complete_row() {
        let got = read("study,y1,se1,y2,se2,rho_w\ns1, 1.2, 0.3, 0.8, 0.4, -0.5\n", &spec()).unwrap();
        let s = &got.dataset.studies()[0];
        assert_eq!(s.id(), "s1");
        assert_eq!(s.outcome(0), Some(&Observation::new(1.2, 0.3)));
        assert_eq!(s.outcome(1), Some(&Observation::new(0.8, 0.4)));
        assert_eq!(s.rho_w(), Some(-0.5));
        assert!(got.diagnostics.is_empty());
    }

    #[test]
    fn missing_tokens_make_outcome_absent() {
        let mut sp = spec();
        sp.missing = "NA".into();
        let got = read("study,y1,se1,y2,se2,rho_w\ns1,1.2,0.3,NA,NA,NA\ns2,0.1,0.2,,,\n", &sp).unwrap();
        for s in got.dataset.studies() {
            assert!(s.outcome(0).is_some());
            assert!(s.outcome(1).is_none());
            assert_eq!(s.rho_w(), None);
        }
    }

    #[test]
    fn zero_se_is_rejected_with_rule() {
        let got = read("study,y1,se1,y2,se2,rho_w\ns1,1.2,0,0.8,0.4,0\ns2,1,0.3,0.8,0.4,0\n", &spec()).unwrap();
        assert_eq!(got.dataset.len(), 1);
        let d = &got.diagnostics[0];
        assert_eq!((d.line, d.id.as_str(), d.rule), (2, "s1", Rule::NonPositiveSe));
        assert!(d.to_string().contains("line 2") && d.to_string().contains("se1"));
    }

    #[test]
    fn rho_rules() {
        let text = "study,y1,se1,y2,se2,rho_w\na,1,0.3,0.8,0.4,1.5\nb,1,0.3,0.8,0.4,\nc,1,0.3,,,\n";
        let got = read(text, &spec()).unwrap();
        let rules: Vec<Rule> = got.diagnostics.iter().map(|d| d.rule).collect();
        assert_eq!(rules, vec![Rule::RhoOutOfRange, Rule::MissingRho]);

        let mut sp = spec();
        sp.default_rho_w = Some(0.2);
        let got = read(text, &sp).unwrap();
        assert_eq!(got.dataset.len(), 2);
        assert_eq!(got.imputed_rho, 1);
        assert_eq!(got.dataset.studies()[0].rho_w(), Some(0.2));
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(
            read("id,y1,se1,y2,se2\ns1,1,1,1,1\n", &spec()),
            Err(IngestError::MissingColumn(c)) if c == "study"
        ));
        let mut sp = spec();
        sp.missing = "-99".into();
        assert!(matches!(read("study,y1,se1,y2,se2\n", &sp), Err(IngestError::AmbiguousMissingToken(_))));
        assert!(matches!(read("study,y1,se1,y2,se2\ns,,,,\n", &spec()), Err(IngestError::Empty(d)) if d.len() == 1));
    }

    #[test]
    fn custom_column_names_and_comments() {
        let mut sp = spec();
        sp.columns = ColumnMap {
            id: "name".into(),
            y: ["lsens".into(), "lspec".into()],
            se: ["s_sens".into(), "s_spec".into()],
            rho_w: "r".into(),
        };
        sp.default_rho_w = Some(0.0);
        let text = "# exported 2024\nlspec,s_spec,name,lsens,s_sens\n0.5,0.2,x,1.0,0.1\n";
        let got = read(text, &sp).unwrap();
        let s = &got.dataset.studies()[0];
        assert_eq!(s.outcome(0), Some(&Observation::new(1.0, 0.1)));
        assert_eq!(s.outcome(1), Some(&Observation::new(0.5, 0.2)));
        assert_eq!((s.rho_w(), got.imputed_rho), (Some(0.0), 1));
    }

    #[test]
    fn duplicate_and_unparseable() {
        let got = read("study,y1,se1,y2,se2\na,1,0.3,,\na,1,0.3,,\nb,x,0.3,,\n", &spec()).unwrap();
        let rules: Vec<Rule> = got.diagnostics.iter().map(|d| d.rule).collect();
        assert_eq!(rules, vec![Rule::DuplicateId, Rule::Unparseable]);
    }
}
