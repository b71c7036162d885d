//! TOML run configuration and loading of the tables it points at.

use std::fs::File;
use std::path::{Path, PathBuf};

use longforest::data::{
    ingest_fixed, ingest_longitudinal, ingest_outcome, validate_inputs, ColumnKind, ColumnSpec,
    Dataset, FixedTable, Hyperparams, LmmSpec, LongitudinalTable, OutcomeColumns, SplitOption,
    TextFormat,
};
use longforest::forest::Schema;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub data: DataSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub marker: Vec<MarkerSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub numeric: Vec<NumericSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub factor: Vec<FactorSection>,
    pub outcome: Option<OutcomeSection>,
    #[serde(default)]
    pub forest: ForestSection,
    #[serde(default, skip_serializing_if = "IbsSection::is_empty")]
    pub ibs: IbsSection,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub group: Vec<GroupSection>,
    /// Directory of the config file; relative paths resolve against it.
    #[serde(skip)]
    pub base: PathBuf,
}

fn default_id() -> String {
    "id".into()
}

fn default_time() -> String {
    "time".into()
}

fn default_delimiter() -> String {
    ",".into()
}

fn default_degrees() -> Vec<u32> {
    vec![0, 1]
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub longitudinal: Option<PathBuf>,
    pub fixed: Option<PathBuf>,
    pub outcome: Option<PathBuf>,
    #[serde(default = "default_id")]
    pub id: String,
    #[serde(default = "default_time")]
    pub time: String,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerSection {
    pub name: String,
    /// Polynomial degrees in time of the fixed effects.
    #[serde(default = "default_degrees")]
    pub fixed: Vec<u32>,
    #[serde(default = "default_degrees")]
    pub random: Vec<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericSection {
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorSection {
    pub name: String,
    pub levels: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum OutcomeSection {
    Numeric {
        column: String,
    },
    Factor {
        column: String,
        levels: Vec<String>,
    },
    Survival {
        #[serde(default = "default_time")]
        time: String,
        #[serde(default = "default_event")]
        event: String,
        cause: Option<u32>,
    },
}

fn default_event() -> String {
    "event".into()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestSection {
    pub ntree: Option<usize>,
    pub mtry: Option<usize>,
    pub nodesize: Option<usize>,
    pub minsplit: Option<usize>,
    pub nsplit_option: Option<String>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IbsSection {
    pub min: Option<f64>,
    pub max: Option<f64>,
}

impl IbsSection {
    fn is_empty(&self) -> bool {
        self.min.is_none() && self.max.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSection {
    pub name: String,
    pub members: Vec<String>,
}

pub fn parse_split_option(s: &str) -> Result<SplitOption, CliError> {
    match s.to_ascii_lowercase().as_str() {
        "quantile" => Ok(SplitOption::Quantile),
        "sample" => Ok(SplitOption::Sample),
        _ => Err(CliError::Validation(format!(
            "nsplit_option must be `quantile` or `sample`, got `{s}`"
        ))),
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        cfg.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn format(&self) -> Result<TextFormat, CliError> {
        match self.data.delimiter.as_bytes() {
            [b] => Ok(TextFormat { delimiter: *b }),
            _ => Err(CliError::Validation(format!(
                "delimiter must be a single byte, got `{}`",
                self.data.delimiter
            ))),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn open(&self, p: &Path) -> Result<File, CliError> {
        let full = self.resolve(p);
        File::open(&full)
            .map_err(|e| CliError::Validation(format!("cannot open {}: {e}", full.display())))
    }

    pub fn specs(&self) -> Vec<LmmSpec> {
        self.marker
            .iter()
            .map(|m| LmmSpec {
                marker: m.name.clone(),
                fixed: m.fixed.clone(),
                random: m.random.clone(),
            })
            .collect()
    }

    pub fn fixed_schema(&self) -> Vec<ColumnSpec> {
        self.numeric
            .iter()
            .map(|c| ColumnSpec {
                name: c.name.clone(),
                kind: ColumnKind::Numeric,
            })
            .chain(self.factor.iter().map(|c| ColumnSpec {
                name: c.name.clone(),
                kind: ColumnKind::Factor {
                    levels: c.levels.clone(),
                },
            }))
            .collect()
    }

    /// Hyperparameters from the `[forest]` and `[ibs]` sections.
    pub fn hyperparams(&self) -> Result<Hyperparams, CliError> {
        let d = Hyperparams::default();
        let f = &self.forest;
        Ok(Hyperparams {
            ntree: f.ntree.unwrap_or(d.ntree),
            mtry: f.mtry,
            nodesize: f.nodesize.unwrap_or(d.nodesize),
            minsplit: f.minsplit.unwrap_or(d.minsplit),
            nsplit_option: f
                .nsplit_option
                .as_deref()
                .map(parse_split_option)
                .transpose()?
                .unwrap_or(d.nsplit_option),
            seed: f.seed.unwrap_or(d.seed),
            ibs_min: self.ibs.min,
            ibs_max: self.ibs.max,
        })
    }

    pub fn longitudinal(&self, markers: &[String]) -> Result<Option<LongitudinalTable>, CliError> {
        let Some(p) = &self.data.longitudinal else {
            if let Some(m) = markers.first() {
                return Err(CliError::Validation(format!(
                    "marker `{m}` is declared but [data] has no longitudinal file"
                )));
            }
            return Ok(None);
        };
        Ok(Some(ingest_longitudinal(
            self.open(p)?,
            &self.format()?,
            &self.data.id,
            &self.data.time,
            markers,
        )?))
    }

    pub fn fixed(&self, schema: &[ColumnSpec]) -> Result<Option<FixedTable>, CliError> {
        match &self.data.fixed {
            Some(p) => Ok(Some(ingest_fixed(
                self.open(p)?,
                &self.format()?,
                &self.data.id,
                schema,
            )?)),
            None if schema.is_empty() => Ok(None),
            None => Err(CliError::Validation(
                "time-fixed predictors are declared but [data] has no fixed file".into(),
            )),
        }
    }

    /// `(id, time)` pairs of the outcome file's time column.
    pub fn outcome_times(&self) -> Result<Vec<(String, f64)>, CliError> {
        let (Some(p), Some(OutcomeSection::Survival { time, .. })) =
            (&self.data.outcome, &self.outcome)
        else {
            return Err(CliError::Validation(
                "at-risk filtering needs a survival [outcome] section and an outcome file".into(),
            ));
        };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(self.format()?.delimiter)
            .trim(csv::Trim::All)
            .from_reader(self.open(p)?);
        let bad = |e: csv::Error| CliError::Validation(e.to_string());
        let headers = rdr.headers().map_err(bad)?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                CliError::Validation(format!("column `{name}` not found in outcome file"))
            })
        };
        let (id_ix, t_ix) = (col(&self.data.id)?, col(time)?);
        let mut out = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(bad)?;
            let t = rec[t_ix].parse::<f64>().map_err(|_| {
                CliError::Validation(format!("cannot parse survival time `{}`", &rec[t_ix]))
            })?;
            out.push((rec[id_ix].to_string(), t));
        }
        Ok(out)
    }

    /// Loads and validates the training data.
    pub fn dataset(&self, hp: &Hyperparams) -> Result<Dataset, CliError> {
        let Some(outcome) = &self.outcome else {
            return Err(CliError::Validation(
                "config has no [outcome] section".into(),
            ));
        };
        let Some(path) = &self.data.outcome else {
            return Err(CliError::Validation("[data] has no outcome file".into()));
        };
        let columns = match outcome {
            OutcomeSection::Numeric { column } => OutcomeColumns::Numeric {
                column: column.clone(),
            },
            OutcomeSection::Factor { column, levels } => OutcomeColumns::Factor {
                column: column.clone(),
                levels: levels.clone(),
            },
            OutcomeSection::Survival { time, event, cause } => OutcomeColumns::Survival {
                time: time.clone(),
                event: event.clone(),
                cause: *cause,
            },
        };
        let outcome = ingest_outcome(self.open(path)?, &self.format()?, &self.data.id, &columns)?;
        let specs = self.specs();
        let markers: Vec<String> = specs.iter().map(|s| s.marker.clone()).collect();
        let long = self.longitudinal(&markers)?;
        let fixed = self.fixed(&self.fixed_schema())?;
        Ok(validate_inputs(
            long.as_ref(),
            fixed.as_ref(),
            &outcome,
            &specs,
            hp,
        )?)
    }
}

/// Fixed-table columns a trained forest expects.
pub fn schema_columns(schema: &Schema) -> Vec<ColumnSpec> {
    schema
        .numeric
        .iter()
        .map(|n| ColumnSpec {
            name: n.clone(),
            kind: ColumnKind::Numeric,
        })
        .chain(schema.factors.iter().map(|(n, levels)| ColumnSpec {
            name: n.clone(),
            kind: ColumnKind::Factor {
                levels: levels.clone(),
            },
        }))
        .collect()
}
