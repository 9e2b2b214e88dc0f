//! CDR, profile, and label file ingestion.
//!
//! Input files are CSV with a fixed header, or JSON lines mirroring the
//! same field names. Telecom feeds are dirty, so parsing is lenient by
//! default: malformed rows are reported with their line number and
//! skipped. Strict mode turns the first malformed row into an error.
//! Structural problems (unreadable file, bad header, duplicate identity)
//! are always fatal.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, SecondsFormat, SubsecRound, Utc};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Exact CDR CSV header, in column order.
pub const CDR_HEADER: [&str; 10] = [
    "timestamp",
    "caller",
    "callee",
    "event_kind",
    "duration_s",
    "bytes_up",
    "bytes_down",
    "rat",
    "dropped",
    "cell_id",
];

/// Which network an identifier belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Operator {
    Home,
    Competitor,
    Landline,
}

impl Operator {
    pub fn token(self) -> &'static str {
        match self {
            Operator::Home => "HOME",
            Operator::Competitor => "COMPETITOR",
            Operator::Landline => "LANDLINE",
        }
    }
}

impl FromStr for Operator {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "HOME" => Ok(Operator::Home),
            "COMPETITOR" => Ok(Operator::Competitor),
            "LANDLINE" => Ok(Operator::Landline),
            _ => Err(()),
        }
    }
}

/// Subscriber identity. The (operator, number) pair is the identity key,
/// encoded `OPERATOR:number` in every file format.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CustomerId {
    pub operator: Operator,
    pub number: String,
}

impl CustomerId {
    pub fn new(operator: Operator, number: impl Into<String>) -> Self {
        Self { operator, number: number.into() }
    }

    pub fn home(number: impl Into<String>) -> Self {
        Self::new(Operator::Home, number)
    }

    pub fn competitor(number: impl Into<String>) -> Self {
        Self::new(Operator::Competitor, number)
    }
}

impl fmt::Display for CustomerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.operator.token(), self.number)
    }
}

impl FromStr for CustomerId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        let (op, number) = s.split_once(':').ok_or(())?;
        if number.is_empty() {
            return Err(());
        }
        Ok(CustomerId { operator: op.parse()?, number: number.to_string() })
    }
}

impl Serialize for CustomerId {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CustomerId {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(|_| D::Error::custom(format!("bad customer id `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Call,
    Sms,
    Mms,
    Data,
}

impl EventKind {
    pub fn token(self) -> &'static str {
        match self {
            EventKind::Call => "CALL",
            EventKind::Sms => "SMS",
            EventKind::Mms => "MMS",
            EventKind::Data => "DATA",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "CALL" => Some(EventKind::Call),
            "SMS" => Some(EventKind::Sms),
            "MMS" => Some(EventKind::Mms),
            "DATA" => Some(EventKind::Data),
            _ => None,
        }
    }
}

/// Radio access technology of a data session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rat {
    G2,
    G3,
    G4,
}

impl Rat {
    pub fn token(self) -> &'static str {
        match self {
            Rat::G2 => "G2",
            Rat::G3 => "G3",
            Rat::G4 => "G4",
        }
    }

    fn from_token(s: &str) -> Option<Self> {
        match s {
            "G2" => Some(Rat::G2),
            "G3" => Some(Rat::G3),
            "G4" => Some(Rat::G4),
            _ => None,
        }
    }
}

/// One timestamped interaction event between two subscriber identifiers.
///
/// Data sessions have no callee; only calls carry a duration and a
/// dropped flag; only data sessions carry byte counts and a RAT.
#[derive(Debug, Clone, PartialEq)]
pub struct CdrRecord {
    pub timestamp: DateTime<Utc>,
    pub caller: CustomerId,
    pub callee: Option<CustomerId>,
    pub event_kind: EventKind,
    pub duration_s: u32,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub rat: Option<Rat>,
    pub dropped: bool,
    pub cell_id: String,
}

impl CdrRecord {
    fn validate(&self) -> Result<(), RowProblem> {
        if self.duration_s > 0 && self.event_kind != EventKind::Call {
            return Err(RowProblem::FieldNotAllowed("duration_s"));
        }
        if self.bytes_up + self.bytes_down > 0 && self.event_kind != EventKind::Data {
            return Err(RowProblem::FieldNotAllowed("bytes_up/bytes_down"));
        }
        if self.dropped && self.event_kind != EventKind::Call {
            return Err(RowProblem::FieldNotAllowed("dropped"));
        }
        match self.event_kind {
            EventKind::Data => {
                if self.callee.is_some() {
                    return Err(RowProblem::FieldNotAllowed("callee"));
                }
                if self.rat.is_none() {
                    return Err(RowProblem::MissingField("rat"));
                }
            }
            _ => {
                if self.callee.is_none() {
                    return Err(RowProblem::MissingField("callee"));
                }
                if self.rat.is_some() {
                    return Err(RowProblem::FieldNotAllowed("rat"));
                }
            }
        }
        Ok(())
    }
}

/// One profile attribute cell: numeric, categorical, or missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AttrValue {
    Numeric(f64),
    Categorical(String),
    Missing,
}

impl AttrValue {
    pub fn parse_cell(cell: &str) -> AttrValue {
        if cell.is_empty() {
            return AttrValue::Missing;
        }
        match cell.parse::<f64>() {
            Ok(v) if v.is_finite() => AttrValue::Numeric(v),
            _ => AttrValue::Categorical(cell.to_string()),
        }
    }

    pub fn to_cell(&self) -> String {
        match self {
            AttrValue::Numeric(v) => format!("{v}"),
            AttrValue::Categorical(s) => s.clone(),
            AttrValue::Missing => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CustomerProfile {
    pub id: CustomerId,
    pub activation_date: NaiveDate,
    pub birth_year: Option<i32>,
    pub attributes: Vec<(String, AttrValue)>,
}

impl CustomerProfile {
    pub fn attribute(&self, name: &str) -> Option<&AttrValue> {
        self.attributes.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// Parsed profile file: rows plus the free attribute column order.
#[derive(Debug, Clone, Default)]
pub struct ProfileTable {
    pub profiles: Vec<CustomerProfile>,
    pub attribute_columns: Vec<String>,
}

impl ProfileTable {
    pub fn get(&self, id: &CustomerId) -> Option<&CustomerProfile> {
        self.profiles.iter().find(|p| &p.id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChurnLabel {
    Churn,
    Active,
}

impl ChurnLabel {
    pub fn token(self) -> &'static str {
        match self {
            ChurnLabel::Churn => "CHURN",
            ChurnLabel::Active => "ACTIVE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub id: CustomerId,
    pub label: ChurnLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FileFormat {
    #[serde(rename = "CSV")]
    Csv,
    #[serde(rename = "JSON_LINES")]
    JsonLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

/// A malformed row in a lenient parse: line number plus what was wrong.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedRow {
    pub line: u64,
    pub problem: RowProblem,
}

#[derive(Debug, Clone, Default)]
pub struct ParseReport {
    pub skipped: Vec<SkippedRow>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RowProblem {
    #[error("unknown event_kind `{0}`")]
    UnknownEventKind(String),
    #[error("negative {0}")]
    NegativeQuantity(&'static str),
    #[error("bad timestamp `{0}`")]
    BadTimestamp(String),
    #[error("bad customer id `{0}`")]
    BadId(String),
    #[error("bad label `{0}`")]
    BadLabel(String),
    #[error("label id not on home operator: `{0}`")]
    NonHomeLabel(String),
    #[error("missing field `{0}`")]
    MissingField(&'static str),
    #[error("field `{0}` not allowed for this event kind")]
    FieldNotAllowed(&'static str),
    #[error("bad number in `{0}`")]
    BadNumber(&'static str),
    #[error("bad date `{0}`")]
    BadDate(String),
    #[error("bad rat `{0}`")]
    BadRat(String),
    #[error("bad dropped flag `{0}`")]
    BadDropped(String),
    #[error("wrong column count")]
    WrongWidth,
    #[error("bad json: {0}")]
    BadJson(String),
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad header, expected `{expected}`")]
    BadHeader { path: PathBuf, expected: String },
    #[error("{path}:{line}: {problem}")]
    Row { path: PathBuf, line: u64, problem: RowProblem },
    #[error("{path}:{line}: duplicate identity `{id}`")]
    DuplicateIdentity { path: PathBuf, line: u64, id: CustomerId },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

fn open_reader(path: &Path) -> Result<BufReader<File>, IngestError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, RowProblem> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc).trunc_subsecs(0))
        .map_err(|_| RowProblem::BadTimestamp(s.to_string()))
}

fn parse_non_negative(cell: &str, field: &'static str) -> Result<u64, RowProblem> {
    let v: i64 = cell.trim().parse().map_err(|_| RowProblem::BadNumber(field))?;
    if v < 0 {
        return Err(RowProblem::NegativeQuantity(field));
    }
    Ok(v as u64)
}

fn parse_dropped(cell: &str) -> Result<bool, RowProblem> {
    match cell {
        "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(RowProblem::BadDropped(other.to_string())),
    }
}

fn cdr_from_fields(fields: &[&str]) -> Result<CdrRecord, RowProblem> {
    if fields.len() != CDR_HEADER.len() {
        return Err(RowProblem::WrongWidth);
    }
    let timestamp = parse_timestamp(fields[0])?;
    let caller: CustomerId =
        fields[1].parse().map_err(|_| RowProblem::BadId(fields[1].to_string()))?;
    let callee = if fields[2].is_empty() {
        None
    } else {
        Some(fields[2].parse().map_err(|_| RowProblem::BadId(fields[2].to_string()))?)
    };
    let event_kind = EventKind::from_token(fields[3])
        .ok_or_else(|| RowProblem::UnknownEventKind(fields[3].to_string()))?;
    let duration_s = parse_non_negative(fields[4], "duration_s")? as u32;
    let bytes_up = parse_non_negative(fields[5], "bytes_up")?;
    let bytes_down = parse_non_negative(fields[6], "bytes_down")?;
    let rat = if fields[7].is_empty() {
        None
    } else {
        Some(Rat::from_token(fields[7]).ok_or_else(|| RowProblem::BadRat(fields[7].to_string()))?)
    };
    let dropped = parse_dropped(fields[8])?;
    let cell_id = fields[9].to_string();
    let rec = CdrRecord {
        timestamp,
        caller,
        callee,
        event_kind,
        duration_s,
        bytes_up,
        bytes_down,
        rat,
        dropped,
        cell_id,
    };
    rec.validate()?;
    Ok(rec)
}

/// JSON-lines wire form of a CDR record; field names mirror the CSV header.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CdrWire {
    timestamp: String,
    caller: String,
    callee: Option<String>,
    event_kind: String,
    duration_s: i64,
    bytes_up: i64,
    bytes_down: i64,
    rat: Option<String>,
    dropped: bool,
    cell_id: String,
}

fn cdr_from_wire(w: CdrWire) -> Result<CdrRecord, RowProblem> {
    let callee_cell = w.callee.unwrap_or_default();
    let rat_cell = w.rat.unwrap_or_default();
    let dropped = if w.dropped { "1" } else { "0" };
    let fields = [
        w.timestamp.as_str(),
        w.caller.as_str(),
        callee_cell.as_str(),
        w.event_kind.as_str(),
        &w.duration_s.to_string(),
        &w.bytes_up.to_string(),
        &w.bytes_down.to_string(),
        rat_cell.as_str(),
        dropped,
        w.cell_id.as_str(),
    ];
    cdr_from_fields(&fields)
}

struct RowSink<'a> {
    mode: ParseMode,
    path: &'a Path,
    report: ParseReport,
}

impl<'a> RowSink<'a> {
    fn new(mode: ParseMode, path: &'a Path) -> Self {
        Self { mode, path, report: ParseReport::default() }
    }

    fn reject(&mut self, line: u64, problem: RowProblem) -> Result<(), IngestError> {
        match self.mode {
            ParseMode::Strict => {
                Err(IngestError::Row { path: self.path.to_path_buf(), line, problem })
            }
            ParseMode::Lenient => {
                self.report.skipped.push(SkippedRow { line, problem });
                Ok(())
            }
        }
    }
}

/// Parse one CDR file. Yields records in file order; malformed rows are
/// reported with their line number and skipped, or fatal in strict mode.
pub fn parse_cdr_file(
    path: &Path,
    format: FileFormat,
    mode: ParseMode,
) -> Result<(Vec<CdrRecord>, ParseReport), IngestError> {
    let mut sink = RowSink::new(mode, path);
    let mut records = Vec::new();
    match format {
        FileFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(open_reader(path)?);
            let headers =
                rdr.headers().map_err(|e| csv_err(path, e))?.iter().collect::<Vec<_>>();
            if headers != CDR_HEADER {
                return Err(IngestError::BadHeader {
                    path: path.to_path_buf(),
                    expected: CDR_HEADER.join(","),
                });
            }
            for row in rdr.records() {
                let row = row.map_err(|e| csv_err(path, e))?;
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                let fields: Vec<&str> = row.iter().collect();
                match cdr_from_fields(&fields) {
                    Ok(rec) => records.push(rec),
                    Err(problem) => sink.reject(line, problem)?,
                }
            }
        }
        FileFormat::JsonLines => {
            for (idx, line) in open_reader(path)?.lines().enumerate() {
                let line_no = idx as u64 + 1;
                let text =
                    line.map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
                if text.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<CdrWire>(&text)
                    .map_err(|e| RowProblem::BadJson(e.to_string()))
                    .and_then(cdr_from_wire);
                match parsed {
                    Ok(rec) => records.push(rec),
                    Err(problem) => sink.reject(line_no, problem)?,
                }
            }
        }
    }
    Ok((records, sink.report))
}

/// Parse a CDR file or every file inside a directory (sorted by name).
/// Files are independent, so a directory is parsed concurrently.
pub fn parse_cdr_path(
    path: &Path,
    format: FileFormat,
    mode: ParseMode,
) -> Result<(Vec<CdrRecord>, ParseReport), IngestError> {
    if !path.is_dir() {
        return parse_cdr_file(path, format, mode);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    use rayon::prelude::*;
    let parts: Vec<Result<(Vec<CdrRecord>, ParseReport), IngestError>> =
        files.par_iter().map(|f| parse_cdr_file(f, format, mode)).collect();
    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for part in parts {
        let (mut recs, mut rep) = part?;
        records.append(&mut recs);
        report.skipped.append(&mut rep.skipped);
    }
    Ok((records, report))
}

fn csv_err(path: &Path, e: csv::Error) -> IngestError {
    IngestError::Csv { path: path.to_path_buf(), source: e }
}

/// Parse a profile file. Header: `id,activation_date,birth_year,<attrs...>`.
pub fn parse_profiles(
    path: &Path,
    format: FileFormat,
    mode: ParseMode,
) -> Result<(ProfileTable, ParseReport), IngestError> {
    let mut sink = RowSink::new(mode, path);
    let mut table = ProfileTable::default();
    let mut seen: HashSet<CustomerId> = HashSet::new();
    match format {
        FileFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(open_reader(path)?);
            let headers: Vec<String> =
                rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(String::from).collect();
            let fixed = ["id", "activation_date", "birth_year"];
            let attr_names: Vec<String> = headers.iter().skip(3).cloned().collect();
            let mut unique = HashSet::new();
            let header_ok = headers.len() >= 3
                && headers[..3] == fixed
                && attr_names.iter().all(|n| unique.insert(n.clone()) && !fixed.contains(&n.as_str()));
            if !header_ok {
                return Err(IngestError::BadHeader {
                    path: path.to_path_buf(),
                    expected: "id,activation_date,birth_year,<unique attribute columns>".into(),
                });
            }
            table.attribute_columns = attr_names.clone();
            for row in rdr.records() {
                let row = row.map_err(|e| csv_err(path, e))?;
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                let fields: Vec<&str> = row.iter().collect();
                match profile_from_fields(&fields, &attr_names) {
                    Ok(profile) => {
                        if !seen.insert(profile.id.clone()) {
                            return Err(IngestError::DuplicateIdentity {
                                path: path.to_path_buf(),
                                line,
                                id: profile.id,
                            });
                        }
                        table.profiles.push(profile);
                    }
                    Err(problem) => sink.reject(line, problem)?,
                }
            }
        }
        FileFormat::JsonLines => {
            let mut attr_order: Vec<String> = Vec::new();
            for (idx, line) in open_reader(path)?.lines().enumerate() {
                let line_no = idx as u64 + 1;
                let text =
                    line.map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
                if text.trim().is_empty() {
                    continue;
                }
                match profile_from_json(&text, &mut attr_order) {
                    Ok(profile) => {
                        if !seen.insert(profile.id.clone()) {
                            return Err(IngestError::DuplicateIdentity {
                                path: path.to_path_buf(),
                                line: line_no,
                                id: profile.id,
                            });
                        }
                        table.profiles.push(profile);
                    }
                    Err(problem) => sink.reject(line_no, problem)?,
                }
            }
            table.attribute_columns = attr_order;
        }
    }
    Ok((table, sink.report))
}

fn profile_from_fields(
    fields: &[&str],
    attr_names: &[String],
) -> Result<CustomerProfile, RowProblem> {
    if fields.len() != attr_names.len() + 3 {
        return Err(RowProblem::WrongWidth);
    }
    let id: CustomerId = fields[0].parse().map_err(|_| RowProblem::BadId(fields[0].to_string()))?;
    let activation_date = NaiveDate::parse_from_str(fields[1], "%Y-%m-%d")
        .map_err(|_| RowProblem::BadDate(fields[1].to_string()))?;
    let birth_year = if fields[2].is_empty() {
        None
    } else {
        Some(fields[2].parse::<i32>().map_err(|_| RowProblem::BadNumber("birth_year"))?)
    };
    let attributes = attr_names
        .iter()
        .zip(fields[3..].iter())
        .map(|(name, cell)| (name.clone(), AttrValue::parse_cell(cell)))
        .collect();
    Ok(CustomerProfile { id, activation_date, birth_year, attributes })
}

fn profile_from_json(
    text: &str,
    attr_order: &mut Vec<String>,
) -> Result<CustomerProfile, RowProblem> {
    let value: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| RowProblem::BadJson(e.to_string()))?;
    let id_cell = value
        .get("id")
        .and_then(|v| v.as_str())
        .ok_or(RowProblem::MissingField("id"))?
        .to_string();
    let id: CustomerId = id_cell.parse().map_err(|_| RowProblem::BadId(id_cell.clone()))?;
    let date_cell = value
        .get("activation_date")
        .and_then(|v| v.as_str())
        .ok_or(RowProblem::MissingField("activation_date"))?;
    let activation_date = NaiveDate::parse_from_str(date_cell, "%Y-%m-%d")
        .map_err(|_| RowProblem::BadDate(date_cell.to_string()))?;
    let birth_year = match value.get("birth_year") {
        None | Some(serde_json::Value::Null) => None,
        Some(serde_json::Value::Number(n)) => {
            Some(n.as_i64().ok_or(RowProblem::BadNumber("birth_year"))? as i32)
        }
        Some(_) => return Err(RowProblem::BadNumber("birth_year")),
    };
    let mut attributes = Vec::new();
    for (key, v) in &value {
        if key == "id" || key == "activation_date" || key == "birth_year" {
            continue;
        }
        let attr = match v {
            serde_json::Value::Null => AttrValue::Missing,
            serde_json::Value::Number(n) => {
                AttrValue::Numeric(n.as_f64().ok_or(RowProblem::BadNumber("attribute"))?)
            }
            serde_json::Value::String(s) => AttrValue::parse_cell(s),
            _ => return Err(RowProblem::BadJson(format!("unsupported value for `{key}`"))),
        };
        if !attr_order.contains(key) {
            attr_order.push(key.clone());
        }
        attributes.push((key.clone(), attr));
    }
    Ok(CustomerProfile { id, activation_date, birth_year, attributes })
}

/// Parse a label file. Header: `id,label`; labels are CHURN or ACTIVE and
/// must belong to the home operator.
pub fn parse_labels(
    path: &Path,
    format: FileFormat,
    mode: ParseMode,
) -> Result<(Vec<LabelRecord>, ParseReport), IngestError> {
    let mut sink = RowSink::new(mode, path);
    let mut labels = Vec::new();
    let mut seen: HashSet<CustomerId> = HashSet::new();
    let mut push = |rec: LabelRecord, line: u64, seen: &mut HashSet<CustomerId>| {
        if !seen.insert(rec.id.clone()) {
            return Err(IngestError::DuplicateIdentity {
                path: path.to_path_buf(),
                line,
                id: rec.id,
            });
        }
        labels.push(rec);
        Ok(())
    };
    match format {
        FileFormat::Csv => {
            let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(open_reader(path)?);
            let headers: Vec<&str> = rdr.headers().map_err(|e| csv_err(path, e))?.iter().collect();
            if headers != ["id", "label"] {
                return Err(IngestError::BadHeader {
                    path: path.to_path_buf(),
                    expected: "id,label".into(),
                });
            }
            for row in rdr.records() {
                let row = row.map_err(|e| csv_err(path, e))?;
                let line = row.position().map(|p| p.line()).unwrap_or(0);
                let fields: Vec<&str> = row.iter().collect();
                match label_from_fields(&fields) {
                    Ok(rec) => push(rec, line, &mut seen)?,
                    Err(problem) => sink.reject(line, problem)?,
                }
            }
        }
        FileFormat::JsonLines => {
            #[derive(Deserialize)]
            #[serde(deny_unknown_fields)]
            struct LabelWire {
                id: String,
                label: String,
            }
            for (idx, line) in open_reader(path)?.lines().enumerate() {
                let line_no = idx as u64 + 1;
                let text =
                    line.map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
                if text.trim().is_empty() {
                    continue;
                }
                let parsed = serde_json::from_str::<LabelWire>(&text)
                    .map_err(|e| RowProblem::BadJson(e.to_string()))
                    .and_then(|w| label_from_fields(&[&w.id, &w.label]));
                match parsed {
                    Ok(rec) => push(rec, line_no, &mut seen)?,
                    Err(problem) => sink.reject(line_no, problem)?,
                }
            }
        }
    }
    Ok((labels, sink.report))
}

fn label_from_fields(fields: &[&str]) -> Result<LabelRecord, RowProblem> {
    if fields.len() != 2 {
        return Err(RowProblem::WrongWidth);
    }
    let id: CustomerId = fields[0].parse().map_err(|_| RowProblem::BadId(fields[0].to_string()))?;
    if id.operator != Operator::Home {
        return Err(RowProblem::NonHomeLabel(fields[0].to_string()));
    }
    let label = match fields[1] {
        "CHURN" => ChurnLabel::Churn,
        "ACTIVE" => ChurnLabel::Active,
        other => return Err(RowProblem::BadLabel(other.to_string())),
    };
    Ok(LabelRecord { id, label })
}

// ---------------------------------------------------------------------------
// Canonical writers. parse(write(records)) reproduces the records; the
// canonical cell forms are the ones the synthetic generator emits.

pub fn cdr_to_csv_row(rec: &CdrRecord) -> Vec<String> {
    vec![
        rec.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
        rec.caller.to_string(),
        rec.callee.as_ref().map(|c| c.to_string()).unwrap_or_default(),
        rec.event_kind.token().to_string(),
        rec.duration_s.to_string(),
        rec.bytes_up.to_string(),
        rec.bytes_down.to_string(),
        rec.rat.map(|r| r.token().to_string()).unwrap_or_default(),
        if rec.dropped { "1" } else { "0" }.to_string(),
        rec.cell_id.clone(),
    ]
}

pub fn write_cdr_csv(path: &Path, records: &[CdrRecord]) -> Result<(), IngestError> {
    let file =
        File::create(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(CDR_HEADER).map_err(|e| csv_err(path, e))?;
    for rec in records {
        w.write_record(cdr_to_csv_row(rec)).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn write_cdr_jsonl(path: &Path, records: &[CdrRecord]) -> Result<(), IngestError> {
    let file =
        File::create(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut w = BufWriter::new(file);
    for rec in records {
        let wire = CdrWire {
            timestamp: rec.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true),
            caller: rec.caller.to_string(),
            callee: rec.callee.as_ref().map(|c| c.to_string()),
            event_kind: rec.event_kind.token().to_string(),
            duration_s: rec.duration_s as i64,
            bytes_up: rec.bytes_up as i64,
            bytes_down: rec.bytes_down as i64,
            rat: rec.rat.map(|r| r.token().to_string()),
            dropped: rec.dropped,
            cell_id: rec.cell_id.clone(),
        };
        let line = serde_json::to_string(&wire).expect("wire record serializes");
        writeln!(w, "{line}").map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    }
    w.flush().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn write_profiles_csv(path: &Path, table: &ProfileTable) -> Result<(), IngestError> {
    let file =
        File::create(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let mut header = vec!["id".to_string(), "activation_date".into(), "birth_year".into()];
    header.extend(table.attribute_columns.iter().cloned());
    w.write_record(&header).map_err(|e| csv_err(path, e))?;
    for p in &table.profiles {
        let mut row = vec![
            p.id.to_string(),
            p.activation_date.format("%Y-%m-%d").to_string(),
            p.birth_year.map(|y| y.to_string()).unwrap_or_default(),
        ];
        for name in &table.attribute_columns {
            row.push(p.attribute(name).map(|a| a.to_cell()).unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

pub fn write_labels_csv(path: &Path, labels: &[LabelRecord]) -> Result<(), IngestError> {
    let file =
        File::create(path).map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["id", "label"]).map_err(|e| csv_err(path, e))?;
    for rec in labels {
        w.write_record([rec.id.to_string(), rec.label.token().to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| IngestError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write as _;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_call_row() {
        let f = write_temp(
            "timestamp,caller,callee,event_kind,duration_s,bytes_up,bytes_down,rat,dropped,cell_id\n\
             2021-03-01T10:00:00Z,HOME:111,HOME:222,CALL,60,0,0,,0,C1\n",
        );
        let (recs, report) = parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Lenient).unwrap();
        assert!(report.skipped.is_empty());
        assert_eq!(recs.len(), 1);
        let r = &recs[0];
        assert_eq!(r.event_kind, EventKind::Call);
        assert_eq!(r.duration_s, 60);
        assert_eq!(r.caller, CustomerId::home("111"));
        assert_eq!(r.callee, Some(CustomerId::home("222")));
        assert!(!r.dropped);
    }

    #[test]
    fn unknown_event_kind_reported_with_line() {
        let f = write_temp(
            "timestamp,caller,callee,event_kind,duration_s,bytes_up,bytes_down,rat,dropped,cell_id\n\
             2021-03-01T10:00:00Z,HOME:111,HOME:222,FAX,0,0,0,,0,C1\n",
        );
        let (recs, report) = parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Lenient).unwrap();
        assert!(recs.is_empty());
        assert_eq!(report.skipped.len(), 1);
        assert_eq!(report.skipped[0].line, 2);
        assert_eq!(report.skipped[0].problem, RowProblem::UnknownEventKind("FAX".into()));

        let err = parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Strict).unwrap_err();
        match err {
            IngestError::Row { line, problem, .. } => {
                assert_eq!(line, 2);
                assert_eq!(problem, RowProblem::UnknownEventKind("FAX".into()));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_file_with_header_is_empty_stream() {
        let f = write_temp(
            "timestamp,caller,callee,event_kind,duration_s,bytes_up,bytes_down,rat,dropped,cell_id\n",
        );
        let (recs, report) = parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Strict).unwrap();
        assert!(recs.is_empty());
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn negative_duration_rejected() {
        let f = write_temp(
            "timestamp,caller,callee,event_kind,duration_s,bytes_up,bytes_down,rat,dropped,cell_id\n\
             2021-03-01T10:00:00Z,HOME:111,HOME:222,CALL,-5,0,0,,0,C1\n",
        );
        let (_, report) = parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Lenient).unwrap();
        assert_eq!(report.skipped[0].problem, RowProblem::NegativeQuantity("duration_s"));
    }

    #[test]
    fn bad_header_is_fatal() {
        let f = write_temp("time,caller\n");
        assert!(matches!(
            parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Lenient),
            Err(IngestError::BadHeader { .. })
        ));
    }

    #[test]
    fn duplicate_profile_id_is_fatal() {
        let f = write_temp(
            "id,activation_date,birth_year,balance\n\
             HOME:1,2020-01-01,1980,10\n\
             HOME:1,2020-02-01,1981,20\n",
        );
        let err = parse_profiles(f.path(), FileFormat::Csv, ParseMode::Lenient).unwrap_err();
        assert!(matches!(err, IngestError::DuplicateIdentity { .. }));
    }

    #[test]
    fn empty_balance_cell_is_missing() {
        let f = write_temp(
            "id,activation_date,birth_year,balance\n\
             HOME:1,2020-01-01,1980,\n",
        );
        let (table, _) = parse_profiles(f.path(), FileFormat::Csv, ParseMode::Strict).unwrap();
        assert_eq!(table.profiles[0].attribute("balance"), Some(&AttrValue::Missing));
    }

    #[test]
    fn unknown_label_token_rejected() {
        let f = write_temp("id,label\nHOME:1,SLEEPY\n");
        let (labels, report) = parse_labels(f.path(), FileFormat::Csv, ParseMode::Lenient).unwrap();
        assert!(labels.is_empty());
        assert_eq!(report.skipped[0].problem, RowProblem::BadLabel("SLEEPY".into()));
    }

    #[test]
    fn non_home_label_rejected() {
        let f = write_temp("id,label\nCOMPETITOR:9,CHURN\n");
        let (labels, report) = parse_labels(f.path(), FileFormat::Csv, ParseMode::Lenient).unwrap();
        assert!(labels.is_empty());
        assert!(matches!(report.skipped[0].problem, RowProblem::NonHomeLabel(_)));
    }

    #[test]
    fn data_row_round_trip_jsonl() {
        let rec = CdrRecord {
            timestamp: "2021-05-02T08:30:00Z".parse().unwrap(),
            caller: CustomerId::home("77"),
            callee: None,
            event_kind: EventKind::Data,
            duration_s: 0,
            bytes_up: 1024,
            bytes_down: 4096,
            rat: Some(Rat::G3),
            dropped: false,
            cell_id: "C9".into(),
        };
        let f = tempfile::NamedTempFile::new().unwrap();
        write_cdr_jsonl(f.path(), std::slice::from_ref(&rec)).unwrap();
        let (recs, _) = parse_cdr_file(f.path(), FileFormat::JsonLines, ParseMode::Strict).unwrap();
        assert_eq!(recs, vec![rec]);
    }

    fn arb_customer_id() -> impl Strategy<Value = CustomerId> {
        (
            prop_oneof![
                Just(Operator::Home),
                Just(Operator::Competitor),
                Just(Operator::Landline)
            ],
            "[1-9][0-9]{0,7}",
        )
            .prop_map(|(op, n)| CustomerId::new(op, n))
    }

    prop_compose! {
        fn arb_record()(
            kind in prop_oneof![
                Just(EventKind::Call), Just(EventKind::Sms),
                Just(EventKind::Mms), Just(EventKind::Data)
            ],
            caller in arb_customer_id(),
            callee in arb_customer_id(),
            secs in 0i64..=250_000_000,
            duration in 1u32..7200,
            up in 0u64..1_000_000,
            down in 1u64..1_000_000,
            rat in prop_oneof![Just(Rat::G2), Just(Rat::G3), Just(Rat::G4)],
            dropped in any::<bool>(),
            cell in "[A-Z][A-Z0-9]{0,5}",
        ) -> CdrRecord {
            let base: DateTime<Utc> = "2014-01-01T00:00:00Z".parse().unwrap();
            let timestamp = base + chrono::Duration::seconds(secs);
            match kind {
                EventKind::Call => CdrRecord {
                    timestamp, caller, callee: Some(callee), event_kind: kind,
                    duration_s: duration, bytes_up: 0, bytes_down: 0,
                    rat: None, dropped, cell_id: cell,
                },
                EventKind::Sms | EventKind::Mms => CdrRecord {
                    timestamp, caller, callee: Some(callee), event_kind: kind,
                    duration_s: 0, bytes_up: 0, bytes_down: 0,
                    rat: None, dropped: false, cell_id: cell,
                },
                EventKind::Data => CdrRecord {
                    timestamp, caller, callee: None, event_kind: kind,
                    duration_s: 0, bytes_up: up, bytes_down: down,
                    rat: Some(rat), dropped: false, cell_id: cell,
                },
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn csv_round_trip(records in proptest::collection::vec(arb_record(), 0..40)) {
            let f = tempfile::NamedTempFile::new().unwrap();
            write_cdr_csv(f.path(), &records).unwrap();
            let (parsed, report) =
                parse_cdr_file(f.path(), FileFormat::Csv, ParseMode::Strict).unwrap();
            prop_assert!(report.skipped.is_empty());
            prop_assert_eq!(parsed, records);
        }

        #[test]
        fn jsonl_round_trip(records in proptest::collection::vec(arb_record(), 0..40)) {
            let f = tempfile::NamedTempFile::new().unwrap();
            write_cdr_jsonl(f.path(), &records).unwrap();
            let (parsed, report) =
                parse_cdr_file(f.path(), FileFormat::JsonLines, ParseMode::Strict).unwrap();
            prop_assert!(report.skipped.is_empty());
            prop_assert_eq!(parsed, records);
        }
    }
}
