//! Typed inputs: longitudinal measurements, time-fixed predictors, outcomes,
//! mixed-model specifications and forest hyperparameters.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("column `{0}` not found in header")]
    MissingColumn(String),
    #[error("empty table")]
    EmptyTable,
    #[error("row {row}: cannot parse `{value}` in column `{column}` as a number")]
    Unparseable {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}: missing time value")]
    MissingTime { row: usize },
    #[error("row {row}: time {time} must be finite and non-negative")]
    InvalidTime { row: usize, time: f64 },
    #[error("duplicate measurement for subject `{subject}`, marker `{marker}` at time {time}")]
    DuplicateMeasurement {
        subject: String,
        marker: String,
        time: f64,
    },
    #[error("duplicate row for subject `{0}`")]
    DuplicateSubject(String),
    #[error("unknown level `{value}` for categorical column `{column}`")]
    UnknownLevel { column: String, value: String },
    #[error("categorical column `{0}` must declare at least one level")]
    NoLevels(String),
    #[error("outcome value missing for subject `{0}`")]
    MissingOutcome(String),
    #[error("survival time {time} for subject `{subject}` must be finite and > 0")]
    InvalidSurvivalTime { subject: String, time: f64 },
    #[error("event code `{0}` is not a non-negative integer")]
    InvalidEventCode(String),
    #[error("cause of interest {0} does not occur among observed causes")]
    UnknownCause(u32),
    #[error("several causes are present; the cause of interest must be given")]
    MissingCause,
    #[error("a factor outcome needs at least 2 levels")]
    TooFewLevels,
    #[error("outcome subject `{0}` has no longitudinal or fixed data")]
    UnknownSubject(String),
    #[error("marker `{0}` has a model specification but is absent from the longitudinal table")]
    UnknownMarker(String),
    #[error("marker `{0}` has no model specification")]
    MissingMarkerSpec(String),
    #[error("invalid model specification for `{marker}`: {reason}")]
    InvalidSpec { marker: String, reason: String },
    #[error("mtry = {mtry} exceeds the number of predictors ({total})")]
    MtryTooLarge { mtry: usize, total: usize },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("no predictors supplied")]
    NoPredictors,
    #[error("column length differs from the number of subjects")]
    ColumnLength,
    #[error("csv error: {0}")]
    Csv(String),
}

impl From<csv::Error> for DataError {
    fn from(e: csv::Error) -> Self {
        DataError::Csv(e.to_string())
    }
}

/// One observed value of a marker.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obs {
    pub time: f64,
    pub value: f64,
}

/// Options shared by all delimited-text readers and writers.
#[derive(Debug, Clone)]
pub struct TextFormat {
    pub delimiter: u8,
}

impl Default for TextFormat {
    fn default() -> Self {
        TextFormat { delimiter: b',' }
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<Option<f64>, DataError> {
    if is_missing(cell) {
        return Ok(None);
    }
    cell.trim()
        .parse::<f64>()
        .map(Some)
        .map_err(|_| DataError::Unparseable {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        })
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, DataError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| DataError::MissingColumn(name.to_string()))
}

fn reader<R: Read>(source: R, format: &TextFormat) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(format.delimiter)
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Long-format repeated measures: one series per (subject, marker), sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalTable {
    markers: Vec<String>,
    subjects: Vec<String>,
    index: HashMap<String, usize>,
    // series[subject][marker]
    series: Vec<Vec<Vec<Obs>>>,
}

impl LongitudinalTable {
    pub fn new(markers: Vec<String>) -> Self {
        LongitudinalTable {
            markers,
            subjects: Vec::new(),
            index: HashMap::new(),
            series: Vec::new(),
        }
    }

    pub fn markers(&self) -> &[String] {
        &self.markers
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.index.contains_key(subject)
    }

    /// Sorted series of one marker for one subject (empty if the subject is unknown).
    pub fn series(&self, subject: &str, marker: usize) -> &[Obs] {
        match self.index.get(subject) {
            Some(&i) => &self.series[i][marker],
            None => &[],
        }
    }

    /// Adds one row; `values` is aligned with `markers()`.
    pub fn push_row(
        &mut self,
        subject: &str,
        time: f64,
        values: &[Option<f64>],
    ) -> Result<(), DataError> {
        let n_markers = self.markers.len();
        let i = match self.index.get(subject) {
            Some(&i) => i,
            None => {
                self.subjects.push(subject.to_string());
                self.series.push(vec![Vec::new(); n_markers]);
                self.index
                    .insert(subject.to_string(), self.subjects.len() - 1);
                self.subjects.len() - 1
            }
        };
        for (m, v) in values.iter().enumerate() {
            if let Some(value) = v {
                let s = &mut self.series[i][m];
                // keep sorted on insert; duplicates are rejected here
                let pos = s.partition_point(|o| o.time < time);
                if pos < s.len() && s[pos].time == time {
                    return Err(DataError::DuplicateMeasurement {
                        subject: subject.to_string(),
                        marker: self.markers[m].clone(),
                        time,
                    });
                }
                s.insert(
                    pos,
                    Obs {
                        time,
                        value: *value,
                    },
                );
            }
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.series
            .iter()
            .map(|per| {
                let mut times: Vec<f64> = per.iter().flatten().map(|o| o.time).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                times.len()
            })
            .sum()
    }
}

/// Reads a long-format table. Rows with a missing time are rejected; missing
/// marker cells are kept as marker-wise gaps.
pub fn ingest_longitudinal<R: Read>(
    source: R,
    format: &TextFormat,
    id_column: &str,
    time_column: &str,
    marker_columns: &[String],
) -> Result<LongitudinalTable, DataError> {
    let mut rdr = reader(source, format);
    let headers = rdr.headers()?.clone();
    let id_ix = column_index(&headers, id_column)?;
    let time_ix = column_index(&headers, time_column)?;
    let marker_ix: Vec<usize> = marker_columns
        .iter()
        .map(|m| column_index(&headers, m))
        .collect::<Result<_, _>>()?;

    let mut table = LongitudinalTable::new(marker_columns.to_vec());
    let mut n = 0usize;
    let mut values = vec![None; marker_ix.len()];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = row + 2;
        let id = rec.get(id_ix).unwrap_or("").trim();
        let time = parse_real(rec.get(time_ix).unwrap_or(""), row, time_column)?
            .ok_or(DataError::MissingTime { row })?;
        if !time.is_finite() || time < 0.0 {
            return Err(DataError::InvalidTime { row, time });
        }
        for (slot, (&ix, name)) in values.iter_mut().zip(marker_ix.iter().zip(marker_columns)) {
            *slot = parse_real(rec.get(ix).unwrap_or(""), row, name)?;
        }
        table.push_row(id, time, &values)?;
        n += 1;
    }
    if n == 0 {
        return Err(DataError::EmptyTable);
    }
    Ok(table)
}

/// Declared kind of a time-fixed column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnKind {
    Numeric,
    Factor { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericColumn {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorColumn {
    pub name: String,
    pub levels: Vec<String>,
    pub values: Vec<Option<u32>>,
}

/// Wide-format time-fixed predictors: exactly one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedTable {
    subjects: Vec<String>,
    index: HashMap<String, usize>,
    pub numeric: Vec<NumericColumn>,
    pub factors: Vec<FactorColumn>,
}

impl FixedTable {
    pub fn empty() -> Self {
        FixedTable {
            subjects: Vec::new(),
            index: HashMap::new(),
            numeric: Vec::new(),
            factors: Vec::new(),
        }
    }

    /// Builds a table from columns aligned with `subjects`.
    pub fn from_columns(
        subjects: Vec<String>,
        numeric: Vec<NumericColumn>,
        factors: Vec<FactorColumn>,
    ) -> Result<Self, DataError> {
        let mut index = HashMap::new();
        for (i, s) in subjects.iter().enumerate() {
            if index.insert(s.clone(), i).is_some() {
                return Err(DataError::DuplicateSubject(s.clone()));
            }
        }
        let n = subjects.len();
        if numeric.iter().any(|c| c.values.len() != n)
            || factors.iter().any(|c| c.values.len() != n)
        {
            return Err(DataError::ColumnLength);
        }
        Ok(FixedTable {
            subjects,
            index,
            numeric,
            factors,
        })
    }

    pub fn subjects(&self) -> &[String] {
        &self.subjects
    }

    pub fn row(&self, subject: &str) -> Option<usize> {
        self.index.get(subject).copied()
    }

    pub fn contains(&self, subject: &str) -> bool {
        self.index.contains_key(subject)
    }
}

pub fn ingest_fixed<R: Read>(
    source: R,
    format: &TextFormat,
    id_column: &str,
    schema: &[ColumnSpec],
) -> Result<FixedTable, DataError> {
    let mut rdr = reader(source, format);
    let headers = rdr.headers()?.clone();
    let id_ix = column_index(&headers, id_column)?;
    let mut table = FixedTable::empty();
    let mut cols = Vec::with_capacity(schema.len());
    for spec in schema {
        cols.push(column_index(&headers, &spec.name)?);
        match &spec.kind {
            ColumnKind::Numeric => table.numeric.push(NumericColumn {
                name: spec.name.clone(),
                values: Vec::new(),
            }),
            ColumnKind::Factor { levels } => {
                if levels.is_empty() {
                    return Err(DataError::NoLevels(spec.name.clone()));
                }
                table.factors.push(FactorColumn {
                    name: spec.name.clone(),
                    levels: levels.clone(),
                    values: Vec::new(),
                })
            }
        }
    }
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = row + 2;
        let id = rec.get(id_ix).unwrap_or("").trim().to_string();
        if table.index.contains_key(&id) {
            return Err(DataError::DuplicateSubject(id));
        }
        let (mut ni, mut fi) = (0, 0);
        for (spec, &ix) in schema.iter().zip(&cols) {
            let cell = rec.get(ix).unwrap_or("");
            match &spec.kind {
                ColumnKind::Numeric => {
                    let v = parse_real(cell, row, &spec.name)?;
                    table.numeric[ni].values.push(v);
                    ni += 1;
                }
                ColumnKind::Factor { levels } => {
                    let v = if is_missing(cell) {
                        None
                    } else {
                        let pos =
                            levels
                                .iter()
                                .position(|l| l == cell.trim())
                                .ok_or_else(|| DataError::UnknownLevel {
                                    column: spec.name.clone(),
                                    value: cell.to_string(),
                                })?;
                        Some(pos as u32)
                    };
                    table.factors[fi].values.push(v);
                    fi += 1;
                }
            }
        }
        table.index.insert(id.clone(), table.subjects.len());
        table.subjects.push(id);
    }
    if table.subjects.is_empty() {
        return Err(DataError::EmptyTable);
    }
    Ok(table)
}

/// Per-subject outcome values, aligned with a subject list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeValues {
    Numeric(Vec<f64>),
    Factor {
        y: Vec<u32>,
        levels: Vec<String>,
    },
    Survival {
        time: Vec<f64>,
        /// 0 = censored, otherwise the cause code.
        event: Vec<u32>,
        cause: u32,
    },
}

impl OutcomeValues {
    pub fn len(&self) -> usize {
        match self {
            OutcomeValues::Numeric(y) => y.len(),
            OutcomeValues::Factor { y, .. } => y.len(),
            OutcomeValues::Survival { time, .. } => time.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> OutcomeMode {
        match self {
            OutcomeValues::Numeric(_) => OutcomeMode::Numeric,
            OutcomeValues::Factor { .. } => OutcomeMode::Factor,
            OutcomeValues::Survival { .. } => OutcomeMode::Survival,
        }
    }

    /// Sorted distinct non-zero cause codes (survival only).
    pub fn causes(&self) -> Vec<u32> {
        match self {
            OutcomeValues::Survival { event, .. } => {
                let mut c: Vec<u32> = event.iter().copied().filter(|&e| e > 0).collect();
                c.sort_unstable();
                c.dedup();
                c
            }
            _ => Vec::new(),
        }
    }

    /// Restrict to the given row positions.
    pub fn select(&self, rows: &[usize]) -> OutcomeValues {
        match self {
            OutcomeValues::Numeric(y) => {
                OutcomeValues::Numeric(rows.iter().map(|&i| y[i]).collect())
            }
            OutcomeValues::Factor { y, levels } => OutcomeValues::Factor {
                y: rows.iter().map(|&i| y[i]).collect(),
                levels: levels.clone(),
            },
            OutcomeValues::Survival { time, event, cause } => OutcomeValues::Survival {
                time: rows.iter().map(|&i| time[i]).collect(),
                event: rows.iter().map(|&i| event[i]).collect(),
                cause: *cause,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutcomeMode {
    Numeric,
    Factor,
    Survival,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub subjects: Vec<String>,
    pub values: OutcomeValues,
}

/// How to read the outcome table.
#[derive(Debug, Clone, PartialEq)]
pub enum OutcomeColumns {
    Numeric {
        column: String,
    },
    Factor {
        column: String,
        levels: Vec<String>,
    },
    Survival {
        time: String,
        event: String,
        cause: Option<u32>,
    },
}

pub fn ingest_outcome<R: Read>(
    source: R,
    format: &TextFormat,
    id_column: &str,
    columns: &OutcomeColumns,
) -> Result<Outcome, DataError> {
    let mut rdr = reader(source, format);
    let headers = rdr.headers()?.clone();
    let id_ix = column_index(&headers, id_column)?;
    let mut subjects = Vec::new();
    let mut seen = HashSet::new();
    let mut num = Vec::new();
    let mut fac = Vec::new();
    let mut times = Vec::new();
    let mut events = Vec::new();
    let ix: Vec<usize> = match columns {
        OutcomeColumns::Numeric { column } | OutcomeColumns::Factor { column, .. } => {
            vec![column_index(&headers, column)?]
        }
        OutcomeColumns::Survival { time, event, .. } => {
            vec![
                column_index(&headers, time)?,
                column_index(&headers, event)?,
            ]
        }
    };
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = row + 2;
        let id = rec.get(id_ix).unwrap_or("").trim().to_string();
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateSubject(id));
        }
        match columns {
            OutcomeColumns::Numeric { column } => {
                let v = parse_real(rec.get(ix[0]).unwrap_or(""), row, column)?
                    .ok_or_else(|| DataError::MissingOutcome(id.clone()))?;
                num.push(v);
            }
            OutcomeColumns::Factor { column, levels } => {
                let cell = rec.get(ix[0]).unwrap_or("").trim();
                if is_missing(cell) {
                    return Err(DataError::MissingOutcome(id));
                }
                let pos = levels.iter().position(|l| l == cell).ok_or_else(|| {
                    DataError::UnknownLevel {
                        column: column.clone(),
                        value: cell.to_string(),
                    }
                })?;
                fac.push(pos as u32);
            }
            OutcomeColumns::Survival { time, .. } => {
                let t = parse_real(rec.get(ix[0]).unwrap_or(""), row, time)?
                    .ok_or_else(|| DataError::MissingOutcome(id.clone()))?;
                let cell = rec.get(ix[1]).unwrap_or("").trim();
                if is_missing(cell) {
                    return Err(DataError::MissingOutcome(id));
                }
                let e: u32 = cell
                    .parse()
                    .or_else(|_| match cell.parse::<f64>() {
                        Ok(x) if x >= 0.0 && x.fract() == 0.0 => Ok(x as u32),
                        _ => Err(()),
                    })
                    .map_err(|_| DataError::InvalidEventCode(cell.to_string()))?;
                times.push(t);
                events.push(e);
            }
        }
        subjects.push(id);
    }
    if subjects.is_empty() {
        return Err(DataError::EmptyTable);
    }
    let values = match columns {
        OutcomeColumns::Numeric { .. } => OutcomeValues::Numeric(num),
        OutcomeColumns::Factor { levels, .. } => {
            if levels.len() < 2 {
                return Err(DataError::TooFewLevels);
            }
            OutcomeValues::Factor {
                y: fac,
                levels: levels.clone(),
            }
        }
        OutcomeColumns::Survival { cause, .. } => {
            // Default cause: 1 when the data has a single cause.
            let mut distinct: Vec<u32> = events.iter().copied().filter(|&e| e > 0).collect();
            distinct.sort_unstable();
            distinct.dedup();
            let cause = match cause {
                Some(c) => *c,
                None if distinct.len() <= 1 => distinct.first().copied().unwrap_or(1),
                None => return Err(DataError::MissingCause),
            };
            OutcomeValues::Survival {
                time: times,
                event: events,
                cause,
            }
        }
    };
    Ok(Outcome { subjects, values })
}

/// Mixed-model specification for one marker: polynomial degrees in time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LmmSpec {
    pub marker: String,
    pub fixed: Vec<u32>,
    pub random: Vec<u32>,
}

impl LmmSpec {
    /// Random intercept and slope with a linear fixed trajectory.
    pub fn linear(marker: &str) -> Self {
        LmmSpec {
            marker: marker.to_string(),
            fixed: vec![0, 1],
            random: vec![0, 1],
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |reason: &str| DataError::InvalidSpec {
            marker: self.marker.clone(),
            reason: reason.to_string(),
        };
        for basis in [&self.fixed, &self.random] {
            if !basis.windows(2).all(|w| w[0] < w[1]) {
                return Err(bad("degrees must be strictly increasing"));
            }
            if basis.first() != Some(&0) {
                return Err(bad("the intercept (degree 0) must be included"));
            }
        }
        if !self.random.iter().all(|d| self.fixed.contains(d)) {
            return Err(bad("random basis must be a subset of the fixed basis"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum SplitOption {
    #[default]
    Quantile,
    Sample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub ntree: usize,
    /// `None` means round(sqrt(P+Q)).
    pub mtry: Option<usize>,
    pub nodesize: usize,
    pub minsplit: usize,
    pub nsplit_option: SplitOption,
    pub seed: u64,
    pub ibs_min: Option<f64>,
    pub ibs_max: Option<f64>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            ntree: 200,
            mtry: None,
            nodesize: 1,
            minsplit: 2,
            nsplit_option: SplitOption::Quantile,
            seed: 1234,
            ibs_min: None,
            ibs_max: None,
        }
    }
}

impl Hyperparams {
    pub fn resolved_mtry(&self, n_predictors: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| ((n_predictors as f64).sqrt().round() as usize).max(1))
    }

    pub fn validate(&self, n_predictors: usize) -> Result<(), DataError> {
        let bad = |s: &str| Err(DataError::InvalidHyperparameter(s.to_string()));
        if self.ntree == 0 {
            return bad("ntree must be >= 1");
        }
        if self.nodesize == 0 {
            return bad("nodesize must be >= 1");
        }
        if self.minsplit < 2 {
            return bad("minsplit must be >= 2");
        }
        let mtry = self.resolved_mtry(n_predictors);
        if mtry == 0 {
            return bad("mtry must be >= 1");
        }
        if mtry > n_predictors {
            return Err(DataError::MtryTooLarge {
                mtry,
                total: n_predictors,
            });
        }
        if let (Some(a), Some(b)) = (self.ibs_min, self.ibs_max) {
            if a >= b {
                return bad("ibs_min must be < ibs_max");
            }
        }
        Ok(())
    }
}

/// A longitudinal predictor: its model specification and one sorted series per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerColumn {
    pub spec: LmmSpec,
    pub series: Vec<Vec<Obs>>,
}

impl MarkerColumn {
    pub fn name(&self) -> &str {
        &self.spec.marker
    }
}

/// Validated, subject-aligned training data. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub subjects: Vec<String>,
    pub markers: Vec<MarkerColumn>,
    pub numeric: Vec<NumericColumn>,
    pub factors: Vec<FactorColumn>,
    pub outcome: OutcomeValues,
}

/// Predictor kinds in declared order: longitudinal markers, then numeric, then factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Predictor {
    Longitudinal(usize),
    Numeric(usize),
    Factor(usize),
}

impl Dataset {
    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    /// Q, the number of longitudinal predictors.
    pub fn q(&self) -> usize {
        self.markers.len()
    }

    /// P, the number of time-fixed predictors.
    pub fn p(&self) -> usize {
        self.numeric.len() + self.factors.len()
    }

    pub fn n_predictors(&self) -> usize {
        self.p() + self.q()
    }

    pub fn predictors(&self) -> Vec<Predictor> {
        (0..self.markers.len())
            .map(Predictor::Longitudinal)
            .chain((0..self.numeric.len()).map(Predictor::Numeric))
            .chain((0..self.factors.len()).map(Predictor::Factor))
            .collect()
    }

    pub fn predictor_name(&self, p: Predictor) -> &str {
        match p {
            Predictor::Longitudinal(i) => self.markers[i].name(),
            Predictor::Numeric(i) => &self.numeric[i].name,
            Predictor::Factor(i) => &self.factors[i].name,
        }
    }

    pub fn find_predictor(&self, name: &str) -> Option<Predictor> {
        self.predictors()
            .into_iter()
            .find(|&p| self.predictor_name(p) == name)
    }

    /// The full record of one subject, used for routing down trees.
    pub fn subject(&self, i: usize) -> SubjectRecord {
        SubjectRecord {
            series: self.markers.iter().map(|m| m.series[i].clone()).collect(),
            numeric: self.numeric.iter().map(|c| c.values[i]).collect(),
            factors: self.factors.iter().map(|c| c.values[i]).collect(),
        }
    }

    pub fn subject_records(&self) -> Vec<SubjectRecord> {
        (0..self.n_subjects()).map(|i| self.subject(i)).collect()
    }

    /// Long table of all markers (union of measurement times per subject).
    pub fn write_longitudinal<W: Write>(
        &self,
        sink: W,
        format: &TextFormat,
        id_column: &str,
        time_column: &str,
    ) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(format.delimiter)
            .from_writer(sink);
        let mut header = vec![id_column.to_string(), time_column.to_string()];
        header.extend(self.markers.iter().map(|m| m.name().to_string()));
        w.write_record(&header)?;
        for (i, id) in self.subjects.iter().enumerate() {
            let mut rows: BTreeMap<u64, Vec<Option<f64>>> = BTreeMap::new();
            for (m, marker) in self.markers.iter().enumerate() {
                for o in &marker.series[i] {
                    rows.entry(o.time.to_bits())
                        .or_insert_with(|| vec![None; self.markers.len()])[m] = Some(o.value);
                }
            }
            // times are non-negative so bit order equals numeric order
            for (bits, vals) in rows {
                let mut rec = vec![id.clone(), f64::from_bits(bits).to_string()];
                rec.extend(vals.into_iter().map(fmt_opt));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
        Ok(())
    }

    pub fn write_fixed<W: Write>(
        &self,
        sink: W,
        format: &TextFormat,
        id_column: &str,
    ) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(format.delimiter)
            .from_writer(sink);
        let mut header = vec![id_column.to_string()];
        header.extend(self.numeric.iter().map(|c| c.name.clone()));
        header.extend(self.factors.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (i, id) in self.subjects.iter().enumerate() {
            let mut rec = vec![id.clone()];
            rec.extend(self.numeric.iter().map(|c| fmt_opt(c.values[i])));
            rec.extend(self.factors.iter().map(|c| {
                c.values[i].map_or_else(|| "NA".to_string(), |l| c.levels[l as usize].clone())
            }));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Writes the outcome; survival uses columns `time` and `event`, others `y`.
    pub fn write_outcome<W: Write>(
        &self,
        sink: W,
        format: &TextFormat,
        id_column: &str,
    ) -> Result<(), DataError> {
        let mut w = csv::WriterBuilder::new()
            .delimiter(format.delimiter)
            .from_writer(sink);
        match &self.outcome {
            OutcomeValues::Numeric(y) => {
                w.write_record([id_column, "y"])?;
                for (id, v) in self.subjects.iter().zip(y) {
                    w.write_record([id.clone(), v.to_string()])?;
                }
            }
            OutcomeValues::Factor { y, levels } => {
                w.write_record([id_column, "y"])?;
                for (id, v) in self.subjects.iter().zip(y) {
                    w.write_record([id.clone(), levels[*v as usize].clone()])?;
                }
            }
            OutcomeValues::Survival { time, event, .. } => {
                w.write_record([id_column, "time", "event"])?;
                for ((id, t), e) in self.subjects.iter().zip(time).zip(event) {
                    w.write_record([id.clone(), t.to_string(), e.to_string()])?;
                }
            }
        }
        w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Schema of the fixed table, in declared order.
    pub fn fixed_schema(&self) -> Vec<ColumnSpec> {
        self.numeric
            .iter()
            .map(|c| ColumnSpec {
                name: c.name.clone(),
                kind: ColumnKind::Numeric,
            })
            .chain(self.factors.iter().map(|c| ColumnSpec {
                name: c.name.clone(),
                kind: ColumnKind::Factor {
                    levels: c.levels.clone(),
                },
            }))
            .collect()
    }
}

/// Predictor values of one subject, in dataset order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SubjectRecord {
    pub series: Vec<Vec<Obs>>,
    pub numeric: Vec<Option<f64>>,
    pub factors: Vec<Option<u32>>,
}

/// Assembles subject records for arbitrary (e.g. new) subjects from raw tables.
/// The fixed table's columns are matched by name against the given schema.
pub fn subject_records(
    ids: &[String],
    long: Option<&LongitudinalTable>,
    fixed: Option<&FixedTable>,
    marker_names: &[String],
    numeric_names: &[String],
    factor_names: &[String],
) -> Result<Vec<SubjectRecord>, DataError> {
    let marker_ix: Vec<Option<usize>> = marker_names
        .iter()
        .map(|m| long.and_then(|l| l.markers().iter().position(|x| x == m)))
        .collect();
    let num_ix: Vec<Option<usize>> = numeric_names
        .iter()
        .map(|n| fixed.and_then(|f| f.numeric.iter().position(|c| &c.name == n)))
        .collect();
    let fac_ix: Vec<Option<usize>> = factor_names
        .iter()
        .map(|n| fixed.and_then(|f| f.factors.iter().position(|c| &c.name == n)))
        .collect();
    for (name, ix) in marker_names.iter().zip(&marker_ix) {
        if ix.is_none() {
            return Err(DataError::MissingColumn(name.clone()));
        }
    }
    for (name, ix) in numeric_names
        .iter()
        .zip(&num_ix)
        .chain(factor_names.iter().zip(&fac_ix))
    {
        if ix.is_none() {
            return Err(DataError::MissingColumn(name.clone()));
        }
    }
    Ok(ids
        .iter()
        .map(|id| {
            let row = fixed.and_then(|f| f.row(id));
            SubjectRecord {
                series: marker_ix
                    .iter()
                    .map(|&m| long.map_or_else(Vec::new, |l| l.series(id, m.unwrap()).to_vec()))
                    .collect(),
                numeric: num_ix
                    .iter()
                    .map(|&c| row.and_then(|r| fixed.unwrap().numeric[c.unwrap()].values[r]))
                    .collect(),
                factors: fac_ix
                    .iter()
                    .map(|&c| row.and_then(|r| fixed.unwrap().factors[c.unwrap()].values[r]))
                    .collect(),
            }
        })
        .collect())
}

/// Checks every invariant and aligns all tables on the outcome's subjects.
pub fn validate_inputs(
    long: Option<&LongitudinalTable>,
    fixed: Option<&FixedTable>,
    outcome: &Outcome,
    specs: &[LmmSpec],
    hp: &Hyperparams,
) -> Result<Dataset, DataError> {
    if outcome.subjects.is_empty() {
        return Err(DataError::EmptyTable);
    }
    for spec in specs {
        spec.validate()?;
        if !long.is_some_and(|l| l.markers().contains(&spec.marker)) {
            return Err(DataError::UnknownMarker(spec.marker.clone()));
        }
    }
    if let Some(l) = long {
        for m in l.markers() {
            if !specs.iter().any(|s| &s.marker == m) {
                return Err(DataError::MissingMarkerSpec(m.clone()));
            }
        }
    }
    for id in &outcome.subjects {
        let known = long.is_some_and(|l| l.contains(id)) || fixed.is_some_and(|f| f.contains(id));
        if !known {
            return Err(DataError::UnknownSubject(id.clone()));
        }
    }
    match &outcome.values {
        OutcomeValues::Survival { time, event, cause } => {
            for (id, &t) in outcome.subjects.iter().zip(time) {
                if !(t.is_finite() && t > 0.0) {
                    return Err(DataError::InvalidSurvivalTime {
                        subject: id.clone(),
                        time: t,
                    });
                }
            }
            if !event.contains(cause) || *cause == 0 {
                return Err(DataError::UnknownCause(*cause));
            }
        }
        OutcomeValues::Factor { y, levels } => {
            if levels.len() < 2 {
                return Err(DataError::TooFewLevels);
            }
            debug_assert!(y.iter().all(|&v| (v as usize) < levels.len()));
        }
        OutcomeValues::Numeric(y) => {
            if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
                return Err(DataError::MissingOutcome(outcome.subjects[pos].clone()));
            }
        }
    }

    let marker_names: Vec<String> = long.map_or_else(Vec::new, |l| l.markers().to_vec());
    let records = subject_records(
        &outcome.subjects,
        long,
        fixed,
        &marker_names,
        &fixed.map_or_else(Vec::new, |f| {
            f.numeric.iter().map(|c| c.name.clone()).collect()
        }),
        &fixed.map_or_else(Vec::new, |f| {
            f.factors.iter().map(|c| c.name.clone()).collect()
        }),
    )?;
    let markers = marker_names
        .iter()
        .enumerate()
        .map(|(m, name)| MarkerColumn {
            spec: specs.iter().find(|s| &s.marker == name).cloned().unwrap(),
            series: records.iter().map(|r| r.series[m].clone()).collect(),
        })
        .collect();
    let numeric = fixed.map_or_else(Vec::new, |f| {
        f.numeric
            .iter()
            .enumerate()
            .map(|(c, col)| NumericColumn {
                name: col.name.clone(),
                values: records.iter().map(|r| r.numeric[c]).collect(),
            })
            .collect()
    });
    let factors = fixed.map_or_else(Vec::new, |f| {
        f.factors
            .iter()
            .enumerate()
            .map(|(c, col)| FactorColumn {
                name: col.name.clone(),
                levels: col.levels.clone(),
                values: records.iter().map(|r| r.factors[c]).collect(),
            })
            .collect()
    });
    let ds = Dataset {
        subjects: outcome.subjects.clone(),
        markers,
        numeric,
        factors,
        outcome: outcome.values.clone(),
    };
    if ds.n_predictors() == 0 {
        return Err(DataError::NoPredictors);
    }
    hp.validate(ds.n_predictors())?;
    Ok(ds)
}
