//! Permutation importance of single predictors and groups, and minimal depth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{Dataset, Predictor, SubjectRecord};
use crate::forest::{error_from_leaves, oob_leaves, Forest, ForestError, LeafMatrix};
use crate::lmm::feature_name;
use crate::tree::{drop_down, SplitKind};

#[derive(Debug, Error)]
pub enum ImportanceError {
    #[error("unknown predictor `{0}`")]
    UnknownPredictor(String),
    #[error("predictor `{0}` belongs to more than one group")]
    OverlappingGroups(String),
    #[error("group `{0}` is empty")]
    EmptyGroup(String),
    #[error(transparent)]
    Forest(#[from] ForestError),
}

/// How a longitudinal predictor is permuted among out-of-bag subjects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum MarkerPermutation {
    /// Shuffle the marker values across all out-of-bag observation rows;
    /// measurement times stay in place.
    #[default]
    Observation,
    /// Swap whole trajectories between out-of-bag subjects.
    Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VimpOptions {
    pub seed: u64,
    /// Permutations per (predictor, tree), averaged.
    pub repeats: usize,
    pub marker_permutation: MarkerPermutation,
}

impl Default for VimpOptions {
    fn default() -> Self {
        VimpOptions {
            seed: 1234,
            repeats: 1,
            marker_permutation: MarkerPermutation::Observation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VimpResult {
    pub names: Vec<String>,
    /// Permuted OOB error minus baseline OOB error.
    pub importance: Vec<f64>,
    pub baseline: f64,
    pub seed: u64,
}

/// Shuffles predictor `p` among the records listed in `oob`, in place.
pub fn permute_predictor(
    records: &mut [SubjectRecord],
    oob: &[usize],
    p: Predictor,
    mode: MarkerPermutation,
    rng: &mut ChaCha8Rng,
) {
    match p {
        Predictor::Numeric(v) => {
            let mut vals: Vec<Option<f64>> = oob.iter().map(|&i| records[i].numeric[v]).collect();
            vals.shuffle(rng);
            for (&i, x) in oob.iter().zip(vals) {
                records[i].numeric[v] = x;
            }
        }
        Predictor::Factor(v) => {
            let mut vals: Vec<Option<u32>> = oob.iter().map(|&i| records[i].factors[v]).collect();
            vals.shuffle(rng);
            for (&i, x) in oob.iter().zip(vals) {
                records[i].factors[v] = x;
            }
        }
        Predictor::Longitudinal(m) => match mode {
            MarkerPermutation::Observation => {
                let mut vals: Vec<f64> = oob
                    .iter()
                    .flat_map(|&i| records[i].series[m].iter().map(|o| o.value))
                    .collect();
                vals.shuffle(rng);
                let mut it = vals.into_iter();
                for &i in oob {
                    for o in records[i].series[m].iter_mut() {
                        o.value = it.next().expect("same count");
                    }
                }
            }
            MarkerPermutation::Trajectory => {
                let mut vals: Vec<_> = oob
                    .iter()
                    .map(|&i| std::mem::take(&mut records[i].series[m]))
                    .collect();
                vals.shuffle(rng);
                for (&i, s) in oob.iter().zip(vals) {
                    records[i].series[m] = s;
                }
            }
        },
    }
}

fn pair_rng(seed: u64, item: usize, tree: usize, rep: usize) -> ChaCha8Rng {
    let mut rng =
        ChaCha8Rng::seed_from_u64(seed ^ (rep as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(((item as u64) << 32) | tree as u64);
    rng
}

/// OOB error after permuting every predictor of `members` (independent
/// shuffles) within each tree's out-of-bag set.
#[allow(clippy::too_many_arguments)]
fn permuted_error(
    forest: &Forest,
    ds: &Dataset,
    records: &[SubjectRecord],
    base: &LeafMatrix,
    members: &[Predictor],
    item: usize,
    rep: usize,
    opts: &VimpOptions,
) -> Result<f64, ForestError> {
    let cols: Vec<Vec<(usize, u64)>> = forest
        .trees
        .par_iter()
        .enumerate()
        .map(|(b, tree)| {
            let mut rng = pair_rng(opts.seed, item, b, rep);
            let mut recs: Vec<SubjectRecord> = records.to_vec();
            for &p in members {
                permute_predictor(
                    &mut recs,
                    &tree.oob_ids,
                    p,
                    opts.marker_permutation,
                    &mut rng,
                );
            }
            tree.oob_ids
                .iter()
                .map(|&i| (i, drop_down(tree, &recs[i], None)))
                .collect()
        })
        .collect();
    let mut leaves = base.clone();
    for (b, col) in cols.into_iter().enumerate() {
        for (i, l) in col {
            leaves[i][b] = Some(l);
        }
    }
    Ok(error_from_leaves(forest, ds, &leaves)?.mean)
}

fn importance_of(
    forest: &Forest,
    ds: &Dataset,
    items: &[Vec<Predictor>],
    opts: &VimpOptions,
) -> Result<(Vec<f64>, f64), ImportanceError> {
    forest.check_data(ds)?;
    let records = ds.subject_records();
    let base = oob_leaves(forest, &records);
    let baseline = error_from_leaves(forest, ds, &base)?.mean;
    let reps = opts.repeats.max(1);
    let mut out = Vec::with_capacity(items.len());
    for (k, members) in items.iter().enumerate() {
        let mut acc = 0.0;
        for rep in 0..reps {
            acc += permuted_error(forest, ds, &records, &base, members, k, rep, opts)? - baseline;
        }
        out.push(acc / reps as f64);
    }
    Ok((out, baseline))
}

pub fn compute_vimp(
    forest: &Forest,
    ds: &Dataset,
    opts: &VimpOptions,
) -> Result<VimpResult, ImportanceError> {
    let preds = ds.predictors();
    let items: Vec<Vec<Predictor>> = preds.iter().map(|&p| vec![p]).collect();
    let (importance, baseline) = importance_of(forest, ds, &items, opts)?;
    Ok(VimpResult {
        names: preds
            .iter()
            .map(|&p| ds.predictor_name(p).to_string())
            .collect(),
        importance,
        baseline,
        seed: opts.seed,
    })
}

pub fn compute_gvimp(
    forest: &Forest,
    ds: &Dataset,
    groups: &[(String, Vec<String>)],
    opts: &VimpOptions,
) -> Result<VimpResult, ImportanceError> {
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    let mut items = Vec::with_capacity(groups.len());
    for (g, members) in groups {
        if members.is_empty() {
            return Err(ImportanceError::EmptyGroup(g.clone()));
        }
        let mut ps = Vec::new();
        for m in members {
            let p = ds
                .find_predictor(m)
                .ok_or_else(|| ImportanceError::UnknownPredictor(m.clone()))?;
            if seen.insert(m, ()).is_some() {
                return Err(ImportanceError::OverlappingGroups(m.clone()));
            }
            ps.push(p);
        }
        items.push(ps);
    }
    let (importance, baseline) = importance_of(forest, ds, &items, opts)?;
    Ok(VimpResult {
        names: groups.iter().map(|g| g.0.clone()).collect(),
        importance,
        baseline,
        seed: opts.seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthItem {
    pub name: String,
    /// Mean first-use depth over the trees using it.
    pub mean_depth: Option<f64>,
    /// Number of trees using it.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthResult {
    pub predictors: Vec<DepthItem>,
    /// Random effects of longitudinal predictors (`marker.bi0`, ...) and
    /// time-fixed predictors.
    pub features: Vec<DepthItem>,
    /// First-use depth per tree, keyed by predictor name.
    pub predictor_depth_by_tree: Vec<BTreeMap<String, u32>>,
    pub feature_depth_by_tree: Vec<BTreeMap<String, u32>>,
    /// Number of splits per tree, keyed by predictor name.
    pub usage_by_tree: Vec<BTreeMap<String, usize>>,
    pub warning: Option<String>,
}

fn feature_label(
    ds_names: &(Vec<String>, Vec<String>, Vec<String>),
    kind: SplitKind,
    v: usize,
    f: Option<usize>,
) -> (String, String) {
    match kind {
        SplitKind::Longitudinal => {
            let n = &ds_names.0[v];
            (n.clone(), format!("{n}.{}", feature_name(f.unwrap_or(0))))
        }
        SplitKind::Numeric => (ds_names.1[v].clone(), ds_names.1[v].clone()),
        SplitKind::Factor => (ds_names.2[v].clone(), ds_names.2[v].clone()),
        SplitKind::Leaf => unreachable!(),
    }
}

fn averaged(names: &[String], per_tree: &[BTreeMap<String, u32>]) -> Vec<DepthItem> {
    names
        .iter()
        .map(|n| {
            let d: Vec<u32> = per_tree.iter().filter_map(|t| t.get(n).copied()).collect();
            DepthItem {
                name: n.clone(),
                mean_depth: (!d.is_empty())
                    .then(|| d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64),
                count: d.len(),
            }
        })
        .collect()
}

pub fn compute_min_depth(forest: &Forest) -> DepthResult {
    let schema = &forest.schema;
    let names = (
        schema.marker_names(),
        schema.numeric.clone(),
        schema.factor_names(),
    );
    let mut predictor_depth_by_tree = Vec::with_capacity(forest.trees.len());
    let mut feature_depth_by_tree = Vec::with_capacity(forest.trees.len());
    let mut usage_by_tree = Vec::with_capacity(forest.trees.len());
    for t in &forest.trees {
        let mut pd: BTreeMap<String, u32> = BTreeMap::new();
        let mut fd: BTreeMap<String, u32> = BTreeMap::new();
        let mut us: BTreeMap<String, usize> = BTreeMap::new();
        for s in t.splits.values().filter(|s| !s.is_leaf()) {
            let (p, f) = feature_label(&names, s.kind, s.var_index.unwrap(), s.feature_index);
            let e = pd.entry(p.clone()).or_insert(s.depth);
            *e = (*e).min(s.depth);
            let e = fd.entry(f).or_insert(s.depth);
            *e = (*e).min(s.depth);
            *us.entry(p).or_insert(0) += 1;
        }
        predictor_depth_by_tree.push(pd);
        feature_depth_by_tree.push(fd);
        usage_by_tree.push(us);
    }
    let pred_names: Vec<String> = names
        .0
        .iter()
        .chain(&names.1)
        .chain(&names.2)
        .cloned()
        .collect();
    let mut feat_names: Vec<String> = Vec::new();
    for spec in &schema.markers {
        for j in 0..spec.random.len() {
            feat_names.push(format!("{}.{}", spec.marker, feature_name(j)));
        }
    }
    feat_names.extend(names.1.iter().chain(&names.2).cloned());
    let total = pred_names.len();
    let warning = (forest.mtry < total).then(|| {
        format!(
            "warning: mtry = {} < {total} predictors; minimal depth is best interpreted with mtry at its maximum",
            forest.mtry
        )
    });
    DepthResult {
        predictors: averaged(&pred_names, &predictor_depth_by_tree),
        features: averaged(&feat_names, &feature_depth_by_tree),
        predictor_depth_by_tree,
        feature_depth_by_tree,
        usage_by_tree,
        warning,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub name: String,
    pub value: f64,
    pub percentage: Option<f64>,
    pub count: Option<usize>,
}

/// Importance table sorted by decreasing importance; with `as_percentage`
/// each row also carries importance / baseline × 100.
pub fn vimp_report(v: &VimpResult, as_percentage: bool) -> Vec<ReportRow> {
    let mut rows: Vec<ReportRow> = v
        .names
        .iter()
        .zip(&v.importance)
        .map(|(n, &x)| ReportRow {
            name: n.clone(),
            value: x,
            percentage: as_percentage.then(|| x / v.baseline * 100.0),
            count: None,
        })
        .collect();
    rows.sort_by(|a, b| b.value.total_cmp(&a.value));
    rows
}

/// Minimal-depth table of used items sorted by increasing mean depth.
pub fn depth_report(d: &DepthResult, by_feature: bool) -> Vec<ReportRow> {
    let items = if by_feature {
        &d.features
    } else {
        &d.predictors
    };
    let mut rows: Vec<ReportRow> = items
        .iter()
        .filter_map(|it| {
            it.mean_depth.map(|m| ReportRow {
                name: it.name.clone(),
                value: m,
                percentage: None,
                count: Some(it.count),
            })
        })
        .collect();
    rows.sort_by(|a, b| a.value.total_cmp(&b.value));
    rows
}

/// Delimited rendering with columns `name,value,percentage,count`.
pub fn render_report(rows: &[ReportRow]) -> String {
    let mut s = String::from("name,value,percentage,count\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.name,
            r.value,
            r.percentage.map_or_else(|| "NA".into(), |p| p.to_string()),
            r.count.map_or_else(|| "NA".into(), |c| c.to_string())
        );
    }
    s
}
