//! Ensembles of trees: growth, out-of-bag prediction and error, prediction
//! for new subjects, summaries, and the on-disk archive.

use std::fmt::Write as _;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::data::{
    Dataset, Hyperparams, LmmSpec, OutcomeMode, OutcomeValues, SubjectRecord, TextFormat,
};
use crate::survstats::{censoring_km, integrated_brier, SurvError, SurvSample};
use crate::tree::{drop_down, grow_tree, LeafSummary, Tree};

pub const ARCHIVE_FORMAT: &str = "longforest-archive";
pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ForestError {
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("no subject is out-of-bag in any tree")]
    NoOob,
    #[error(transparent)]
    Surv(#[from] SurvError),
    #[error("archive: {0}")]
    Archive(String),
    #[error("training data hash {found} does not match the archive ({expected})")]
    DataMismatch { expected: String, found: String },
}

/// Predictor layout a forest expects from new subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub markers: Vec<LmmSpec>,
    pub numeric: Vec<String>,
    pub factors: Vec<(String, Vec<String>)>,
}

impl Schema {
    pub fn of(ds: &Dataset) -> Self {
        Schema {
            markers: ds.markers.iter().map(|m| m.spec.clone()).collect(),
            numeric: ds.numeric.iter().map(|c| c.name.clone()).collect(),
            factors: ds
                .factors
                .iter()
                .map(|c| (c.name.clone(), c.levels.clone()))
                .collect(),
        }
    }

    pub fn marker_names(&self) -> Vec<String> {
        self.markers.iter().map(|m| m.marker.clone()).collect()
    }

    pub fn factor_names(&self) -> Vec<String> {
        self.factors.iter().map(|f| f.0.clone()).collect()
    }

    fn check(&self, r: &SubjectRecord) -> Result<(), ForestError> {
        if r.series.len() != self.markers.len()
            || r.numeric.len() != self.numeric.len()
            || r.factors.len() != self.factors.len()
        {
            return Err(ForestError::SchemaMismatch(format!(
                "expected {} markers, {} numeric and {} factor predictors",
                self.markers.len(),
                self.numeric.len(),
                self.factors.len()
            )));
        }
        Ok(())
    }
}

/// Outcome information shared by all trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OutcomeInfo {
    Numeric,
    Factor { levels: Vec<String> },
    Survival { causes: Vec<u32>, cause: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub outcome: OutcomeInfo,
    /// Distinct training event times of the cause of interest (survival).
    pub grid: Vec<f64>,
    /// Largest training event time of any cause (survival).
    pub max_event_time: Option<f64>,
    pub hyperparams: Hyperparams,
    pub mtry: usize,
    pub schema: Schema,
    pub n_subjects: usize,
    /// Hex digest of the training data.
    pub data_hash: String,
}

impl Forest {
    pub fn mode(&self) -> OutcomeMode {
        match self.outcome {
            OutcomeInfo::Numeric => OutcomeMode::Numeric,
            OutcomeInfo::Factor { .. } => OutcomeMode::Factor,
            OutcomeInfo::Survival { .. } => OutcomeMode::Survival,
        }
    }

    pub fn check_data(&self, ds: &Dataset) -> Result<(), ForestError> {
        let found = data_hash(ds);
        if found != self.data_hash {
            return Err(ForestError::DataMismatch {
                expected: self.data_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}

/// SHA-256 over the delimited rendering of all inputs and the cause of interest.
pub fn data_hash(ds: &Dataset) -> String {
    let fmt = TextFormat::default();
    let mut buf = Vec::new();
    ds.write_longitudinal(&mut buf, &fmt, "id", "time")
        .expect("in-memory write");
    ds.write_fixed(&mut buf, &fmt, "id")
        .expect("in-memory write");
    ds.write_outcome(&mut buf, &fmt, "id")
        .expect("in-memory write");
    if let OutcomeValues::Survival { cause, .. } = &ds.outcome {
        buf.extend_from_slice(format!("cause={cause}").as_bytes());
    }
    if let OutcomeValues::Factor { levels, .. } = &ds.outcome {
        buf.extend_from_slice(levels.join("\u{1f}").as_bytes());
    }
    for m in &ds.markers {
        buf.extend_from_slice(format!("{:?}", m.spec).as_bytes());
    }
    Sha256::digest(&buf)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// RNG of tree `b`: the master seed with one stream per tree.
pub fn tree_rng(seed: u64, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

fn run_in_pool<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, ForestError> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|p| p.install(f))
            .map_err(|e| ForestError::ThreadPool(e.to_string())),
    }
}

pub fn grow_forest(ds: &Dataset, hp: &Hyperparams) -> Forest {
    grow_forest_threads(ds, hp, None).expect("default pool")
}

/// Grows the forest on a pool of `threads` workers (default: rayon's global
/// pool). The result does not depend on the number of threads.
pub fn grow_forest_threads(
    ds: &Dataset,
    hp: &Hyperparams,
    threads: Option<usize>,
) -> Result<Forest, ForestError> {
    let n = ds.n_subjects();
    let trees = run_in_pool(threads, || {
        (0..hp.ntree)
            .into_par_iter()
            .map(|b| {
                let mut rng = tree_rng(hp.seed, b);
                let boot: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                grow_tree(ds, boot, hp, &mut rng)
            })
            .collect::<Vec<Tree>>()
    })?;
    let (outcome, grid, max_event_time) = match &ds.outcome {
        OutcomeValues::Numeric(_) => (OutcomeInfo::Numeric, Vec::new(), None),
        OutcomeValues::Factor { levels, .. } => (
            OutcomeInfo::Factor {
                levels: levels.clone(),
            },
            Vec::new(),
            None,
        ),
        OutcomeValues::Survival { time, event, cause } => {
            let s = SurvSample {
                time: time.clone(),
                event: event.clone(),
            };
            (
                OutcomeInfo::Survival {
                    causes: ds.outcome.causes(),
                    cause: *cause,
                },
                s.cause_times(*cause),
                s.event_times().last().copied(),
            )
        }
    };
    Ok(Forest {
        trees,
        outcome,
        grid,
        max_event_time,
        hyperparams: hp.clone(),
        mtry: hp.resolved_mtry(ds.n_predictors()),
        schema: Schema::of(ds),
        n_subjects: n,
        data_hash: data_hash(ds),
    })
}

/// Aggregated prediction for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Prediction {
    Numeric(f64),
    Factor {
        category: u32,
        share: f64,
    },
    /// Cumulative incidence of the cause of interest on the forest grid.
    Cif(Vec<f64>),
}

/// Mean / majority vote / pointwise mean CIF over the given leaves.
pub fn aggregate<'a>(
    forest: &Forest,
    leaves: impl IntoIterator<Item = &'a LeafSummary>,
) -> Option<Prediction> {
    let leaves: Vec<&LeafSummary> = leaves.into_iter().collect();
    if leaves.is_empty() {
        return None;
    }
    let b = leaves.len() as f64;
    Some(match &forest.outcome {
        OutcomeInfo::Numeric => Prediction::Numeric(
            leaves
                .iter()
                .map(|l| match l {
                    LeafSummary::Mean(m) => *m,
                    _ => f64::NAN,
                })
                .sum::<f64>()
                / b,
        ),
        OutcomeInfo::Factor { levels } => {
            let mut votes = vec![0usize; levels.len()];
            for l in &leaves {
                if let LeafSummary::Vote { category, .. } = l {
                    votes[*category as usize] += 1;
                }
            }
            let mut best = 0;
            for (k, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = k;
                }
            }
            Prediction::Factor {
                category: best as u32,
                share: votes[best] as f64 / b,
            }
        }
        OutcomeInfo::Survival { cause, .. } => {
            let mut acc = vec![0.0; forest.grid.len()];
            for l in &leaves {
                if let Some(c) = l.curve(*cause) {
                    for (a, v) in acc.iter_mut().zip(c.on_grid(&forest.grid)) {
                        *a += v;
                    }
                }
            }
            Prediction::Cif(acc.into_iter().map(|v| v / b).collect())
        }
    })
}

/// `leaves[i][b]`: leaf reached by training subject `i` in tree `b` when it
/// is out-of-bag there, else `None`.
pub type LeafMatrix = Vec<Vec<Option<u64>>>;

pub fn oob_leaves(forest: &Forest, records: &[SubjectRecord]) -> LeafMatrix {
    let mut m = vec![vec![None; forest.trees.len()]; records.len()];
    let cols: Vec<Vec<(usize, u64)>> = forest
        .trees
        .par_iter()
        .map(|t| {
            t.oob_ids
                .iter()
                .map(|&i| (i, drop_down(t, &records[i], None)))
                .collect()
        })
        .collect();
    for (b, col) in cols.into_iter().enumerate() {
        for (i, leaf) in col {
            m[i][b] = Some(leaf);
        }
    }
    m
}

fn predict_from_row(forest: &Forest, row: &[Option<u64>]) -> Option<Prediction> {
    aggregate(
        forest,
        row.iter()
            .enumerate()
            .filter_map(|(b, l)| l.map(|l| &forest.trees[b].leaves[&l])),
    )
}

/// Out-of-bag prediction of training subject `i`; `None` if it is in every
/// bootstrap sample.
pub fn oob_predict(forest: &Forest, ds: &Dataset, i: usize) -> Option<Prediction> {
    let rec = ds.subject(i);
    aggregate(
        forest,
        forest
            .trees
            .iter()
            .filter(|t| t.oob_ids.binary_search(&i).is_ok())
            .map(|t| &t.leaves[&drop_down(t, &rec, None)]),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OobErrorKind {
    MeanSquareError,
    Misclassification,
    IntegratedBrierScore,
}

impl OobErrorKind {
    pub fn label(self) -> &'static str {
        match self {
            OobErrorKind::MeanSquareError => "Mean square error",
            OobErrorKind::Misclassification => "Missclassification",
            OobErrorKind::IntegratedBrierScore => "Integrated Brier Score",
        }
    }

    pub fn of(mode: OutcomeMode) -> Self {
        match mode {
            OutcomeMode::Numeric => OobErrorKind::MeanSquareError,
            OutcomeMode::Factor => OobErrorKind::Misclassification,
            OutcomeMode::Survival => OobErrorKind::IntegratedBrierScore,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OobError {
    pub kind: OobErrorKind,
    /// Per training subject; `None` for subjects never out-of-bag.
    pub per_subject: Vec<Option<f64>>,
    pub mean: f64,
    pub never_oob: Vec<usize>,
    /// Subjects with a zero censoring-survival weight (survival only).
    pub degenerate_weights: usize,
}

/// Integration range `[τ1, τ2]` of the IBS for this forest.
pub fn ibs_range(forest: &Forest) -> (f64, f64) {
    let hp = &forest.hyperparams;
    let tau2 = hp
        .ibs_max
        .or(forest.max_event_time)
        .unwrap_or_else(|| forest.grid.last().copied().unwrap_or(0.0));
    (hp.ibs_min.unwrap_or(0.0), tau2)
}

/// Pooled OOB error from a leaf matrix (see [`oob_leaves`]).
pub fn error_from_leaves(
    forest: &Forest,
    ds: &Dataset,
    leaves: &LeafMatrix,
) -> Result<OobError, ForestError> {
    let preds: Vec<Option<Prediction>> = leaves
        .iter()
        .map(|row| predict_from_row(forest, row))
        .collect();
    let never_oob: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].is_none()).collect();
    let seen: Vec<usize> = (0..preds.len()).filter(|&i| preds[i].is_some()).collect();
    if seen.is_empty() {
        return Err(ForestError::NoOob);
    }
    let mut per_subject = vec![None; preds.len()];
    let mut degenerate_weights = 0;
    match &ds.outcome {
        OutcomeValues::Numeric(y) => {
            for &i in &seen {
                if let Some(Prediction::Numeric(p)) = preds[i] {
                    per_subject[i] = Some((p - y[i]).powi(2));
                }
            }
        }
        OutcomeValues::Factor { y, .. } => {
            for &i in &seen {
                if let Some(Prediction::Factor { category, .. }) = preds[i] {
                    per_subject[i] = Some(if category == y[i] { 0.0 } else { 1.0 });
                }
            }
        }
        OutcomeValues::Survival { time, event, cause } => {
            let full = SurvSample {
                time: time.clone(),
                event: event.clone(),
            };
            let g = censoring_km(&full);
            let sub = full.select(&seen);
            let curves: Vec<Vec<f64>> = seen
                .iter()
                .map(|&i| match &preds[i] {
                    Some(Prediction::Cif(c)) => c.clone(),
                    _ => unreachable!("survival forest yields curves"),
                })
                .collect();
            let (tau1, tau2) = ibs_range(forest);
            let ibs = integrated_brier(&curves, &forest.grid, &sub, *cause, tau1, tau2, &g)?;
            degenerate_weights = ibs.degenerate;
            for (k, &i) in seen.iter().enumerate() {
                per_subject[i] = Some(ibs.per_subject[k]);
            }
        }
    }
    let vals: Vec<f64> = per_subject.iter().flatten().copied().collect();
    Ok(OobError {
        kind: OobErrorKind::of(ds.outcome.mode()),
        mean: vals.iter().sum::<f64>() / vals.len() as f64,
        per_subject,
        never_oob,
        degenerate_weights,
    })
}

pub fn compute_oob_error(forest: &Forest, ds: &Dataset) -> Result<OobError, ForestError> {
    let records = ds.subject_records();
    error_from_leaves(forest, ds, &oob_leaves(forest, &records))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictionResult {
    pub t0: Option<f64>,
    /// Prediction times (survival): training event times of the cause of
    /// interest, restricted to times after `t0`.
    pub times: Vec<f64>,
    pub pred_indiv: Vec<Prediction>,
    /// Leaf reached in every tree, per subject.
    pub pred_leaf: Vec<Vec<u64>>,
    /// Share of trees voting for the predicted category (factor only).
    pub pred_indiv_proba: Option<Vec<f64>>,
}

/// Predicts new subjects with all trees, using longitudinal data observed up
/// to `t0` when given.
pub fn predict_new(
    forest: &Forest,
    records: &[SubjectRecord],
    t0: Option<f64>,
) -> Result<PredictionResult, ForestError> {
    for r in records {
        forest.schema.check(r)?;
    }
    let pred_leaf: Vec<Vec<u64>> = records
        .par_iter()
        .map(|r| forest.trees.iter().map(|t| drop_down(t, r, t0)).collect())
        .collect();
    let start = t0.map_or(0, |t| forest.grid.partition_point(|&x| x <= t));
    let mut pred_indiv: Vec<Prediction> = pred_leaf
        .iter()
        .map(|row| {
            aggregate(
                forest,
                row.iter().zip(&forest.trees).map(|(l, t)| &t.leaves[l]),
            )
            .expect("forest has at least one tree")
        })
        .collect();
    for p in &mut pred_indiv {
        if let Prediction::Cif(c) = p {
            c.drain(..start);
        }
    }
    let pred_indiv_proba = matches!(forest.outcome, OutcomeInfo::Factor { .. }).then(|| {
        pred_indiv
            .iter()
            .map(|p| match p {
                Prediction::Factor { share, .. } => *share,
                _ => f64::NAN,
            })
            .collect()
    });
    Ok(PredictionResult {
        t0,
        times: forest.grid[start..].to_vec(),
        pred_indiv,
        pred_leaf,
        pred_indiv_proba,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestStats {
    pub avg_depth: f64,
    pub avg_leaves: f64,
    pub avg_subjects_per_leaf: f64,
    pub avg_events_per_leaf: Option<f64>,
}

pub fn forest_stats(forest: &Forest) -> ForestStats {
    let b = forest.trees.len() as f64;
    let n_leaves: usize = forest.trees.iter().map(|t| t.n_leaves()).sum();
    let leaf_records = || {
        forest
            .trees
            .iter()
            .flat_map(|t| t.splits.values().filter(|s| s.is_leaf()))
    };
    let subjects: usize = leaf_records().map(|s| s.n).sum();
    let events = matches!(forest.outcome, OutcomeInfo::Survival { .. }).then(|| {
        leaf_records()
            .map(|s| s.n_event.unwrap_or(0))
            .sum::<usize>() as f64
            / n_leaves as f64
    });
    ForestStats {
        avg_depth: forest.trees.iter().map(|t| t.depth() as f64).sum::<f64>() / b,
        avg_leaves: n_leaves as f64 / b,
        avg_subjects_per_leaf: subjects as f64 / n_leaves as f64,
        avg_events_per_leaf: events,
    }
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Text summary of a forest, optionally with its OOB error and run time.
pub fn summarize(
    forest: &Forest,
    oob: Option<&OobError>,
    threads: Option<usize>,
    elapsed: Option<Duration>,
) -> String {
    let (what, rule, leaf) = match &forest.outcome {
        OutcomeInfo::Numeric => (
            "continuous",
            "Minimize weighted within-group variance",
            "Mean",
        ),
        OutcomeInfo::Factor { .. } => (
            "categorical",
            "Minimize weighted within-group Shannon entropy",
            "Majority vote",
        ),
        OutcomeInfo::Survival { causes, .. } if causes.len() > 1 => (
            "survival (competing risk)",
            "Fine & Gray statistic test",
            "Cumulative incidence function",
        ),
        OutcomeInfo::Survival { .. } => {
            ("survival", "Logrank test", "Cumulative incidence function")
        }
    };
    let kind = OobErrorKind::of(forest.mode());
    let rule_line = "----------------";
    let mut s = String::new();
    let _ = writeln!(s, "Forest executed for {what} outcome");
    let _ = writeln!(s, " Splitting rule: {rule}");
    let _ = writeln!(s, " Out-of-bag error type: {}", kind.label());
    let _ = writeln!(s, " Leaf statistic: {leaf}");
    let _ = writeln!(s, "{rule_line}");
    let _ = writeln!(s, "Input");
    let _ = writeln!(s, " Number of subjects: {}", forest.n_subjects);
    let _ = writeln!(
        s,
        " Longitudinal: {} predictor(s)",
        forest.schema.markers.len()
    );
    let _ = writeln!(s, " Numeric: {} predictor(s)", forest.schema.numeric.len());
    let _ = writeln!(s, " Factor: {} predictor(s)", forest.schema.factors.len());
    let _ = writeln!(s, "{rule_line}");
    let _ = writeln!(s, "Tuning parameters");
    let hp = &forest.hyperparams;
    let _ = writeln!(s, " mtry: {}", forest.mtry);
    let _ = writeln!(s, " nodesize: {}", hp.nodesize);
    if forest.mode() == OutcomeMode::Survival {
        let _ = writeln!(s, " minsplit: {}", hp.minsplit);
    }
    let _ = writeln!(s, " ntree: {}", forest.trees.len());
    let _ = writeln!(s, "{rule_line}");
    let st = forest_stats(forest);
    let _ = writeln!(s, "Forest summary");
    let _ = writeln!(s, " Average depth per tree: {}", round2(st.avg_depth));
    let _ = writeln!(
        s,
        " Average number of leaves per tree: {}",
        round2(st.avg_leaves)
    );
    let _ = writeln!(
        s,
        " Average number of subjects per leaf: {}",
        round2(st.avg_subjects_per_leaf)
    );
    if let Some(e) = st.avg_events_per_leaf {
        let _ = writeln!(
            s,
            " Average number of events of interest per leaf: {}",
            round2(e)
        );
    }
    let _ = writeln!(s, "{rule_line}");
    let _ = writeln!(s, "Out-of-bag error based on {}", kind.label());
    match oob {
        Some(e) => {
            let _ = writeln!(s, " Out-of-bag error: {:.4}", e.mean);
        }
        None => {
            let _ = writeln!(s, " Out-of-bag error: Not computed!");
        }
    }
    let _ = writeln!(s, "{rule_line}");
    let _ = writeln!(s, "Computation time");
    let _ = writeln!(
        s,
        " Number of cores used: {}",
        threads.map_or_else(String::new, |t| t.to_string())
    );
    match elapsed {
        Some(d) => {
            let _ = writeln!(s, " Time difference of {:.4} secs", d.as_secs_f64());
        }
        None => {
            let _ = writeln!(s, " Time difference of NA");
        }
    }
    let _ = writeln!(s, "{rule_line}");
    s
}

#[derive(Serialize, Deserialize)]
struct Archive {
    format: String,
    version: u32,
    forest: Forest,
}

/// Serializes a forest to the versioned JSON archive.
pub fn save_forest(forest: &Forest) -> Result<String, ForestError> {
    serde_json::to_string(&Archive {
        format: ARCHIVE_FORMAT.into(),
        version: ARCHIVE_VERSION,
        forest: forest.clone(),
    })
    .map_err(|e| ForestError::Archive(e.to_string()))
}

pub fn load_forest(text: &str) -> Result<Forest, ForestError> {
    #[derive(Deserialize)]
    struct Header {
        format: String,
        version: u32,
    }
    let h: Header = serde_json::from_str(text).map_err(|e| ForestError::Archive(e.to_string()))?;
    if h.format != ARCHIVE_FORMAT {
        return Err(ForestError::Archive(format!(
            "unknown format `{}`",
            h.format
        )));
    }
    if h.version != ARCHIVE_VERSION {
        return Err(ForestError::Archive(format!(
            "unsupported version {}",
            h.version
        )));
    }
    let a: Archive = serde_json::from_str(text).map_err(|e| ForestError::Archive(e.to_string()))?;
    Ok(a.forest)
}
