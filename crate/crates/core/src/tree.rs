//! Growing a single tree on a bootstrap sample and routing subjects down it.
//!
//! Node ids follow the heap layout: root 1, children `2d` (left) and `2d+1`.
//! A subject goes left when its value is `<= threshold` (continuous) or its
//! level belongs to the left subset (factor).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    Dataset, Hyperparams, Obs, OutcomeValues, Predictor, SplitOption, SubjectRecord,
};
use crate::lmm::{fit_lmm, predict_random_effects, LmmDesign, LmmFit};
use crate::survstats::{aalen_johansen_cif, nelson_aalen_cif, CifCurve, SortedSurv, SurvSample};

/// Deepest level a node may sit at; node ids must fit in a `u64`.
pub const MAX_DEPTH: u32 = 64;
pub const MAX_FACTOR_LEVELS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("no valid cutpoint: all values identical")]
    NoValidCut,
    #[error("{0} levels present, at most {MAX_FACTOR_LEVELS} supported")]
    TooManyLevels(usize),
    #[error("invalid partition")]
    InvalidPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitKind {
    Longitudinal,
    Numeric,
    Factor,
    Leaf,
}

impl SplitKind {
    pub fn label(self) -> &'static str {
        match self {
            SplitKind::Longitudinal => "Longitudinal",
            SplitKind::Numeric => "Numeric",
            SplitKind::Factor => "Factor",
            SplitKind::Leaf => "Leaf",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "Longitudinal" => SplitKind::Longitudinal,
            "Numeric" => SplitKind::Numeric,
            "Factor" => SplitKind::Factor,
            "Leaf" => SplitKind::Leaf,
            _ => return None,
        })
    }
}

/// Mixed model fitted at a node, kept to compute features of new subjects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeModel {
    pub design: LmmDesign,
    pub fit: LmmFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub node_id: u64,
    pub kind: SplitKind,
    /// Index within the predictor's kind (0-based).
    pub var_index: Option<usize>,
    /// Random-effect index for longitudinal splits (0 = bi0).
    pub feature_index: Option<usize>,
    pub threshold: Option<f64>,
    pub left_levels: Vec<u32>,
    pub right_levels: Vec<u32>,
    /// Direction taken by a subject whose value is missing or unseen.
    pub missing_left: bool,
    pub n: usize,
    /// Events of the cause of interest (survival only).
    pub n_event: Option<usize>,
    pub depth: u32,
    pub model: Option<NodeModel>,
}

impl SplitRecord {
    pub fn is_leaf(&self) -> bool {
        self.kind == SplitKind::Leaf
    }

    pub fn predictor(&self) -> Option<Predictor> {
        let v = self.var_index?;
        match self.kind {
            SplitKind::Longitudinal => Some(Predictor::Longitudinal(v)),
            SplitKind::Numeric => Some(Predictor::Numeric(v)),
            SplitKind::Factor => Some(Predictor::Factor(v)),
            SplitKind::Leaf => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LeafSummary {
    Mean(f64),
    Vote {
        category: u32,
        share: f64,
    },
    Cif {
        causes: Vec<u32>,
        curves: Vec<CifCurve>,
    },
}

impl LeafSummary {
    pub fn curve(&self, cause: u32) -> Option<&CifCurve> {
        match self {
            LeafSummary::Cif { causes, curves } => {
                causes.iter().position(|&c| c == cause).map(|i| &curves[i])
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Every node, internal and leaf, keyed by node id.
    pub splits: BTreeMap<u64, SplitRecord>,
    pub leaves: BTreeMap<u64, LeafSummary>,
    /// Dataset row of each bootstrap draw (with repeats).
    pub boot_ids: Vec<usize>,
    pub oob_ids: Vec<usize>,
}

impl Tree {
    pub fn depth(&self) -> u32 {
        self.splits.values().map(|s| s.depth).max().unwrap_or(1)
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Node-by-node dump with columns
    /// `type,id_node,var_split,feature,threshold,N,Nevent,depth`.
    /// `var_split` and `feature` are 1-based; absent fields read `NA`.
    pub fn v_split(&self) -> String {
        let mut out = String::from("type,id_node,var_split,feature,threshold,N,Nevent,depth\n");
        let na = |x: Option<String>| x.unwrap_or_else(|| "NA".into());
        for s in self.splits.values() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.kind.label(),
                s.node_id,
                na(s.var_index.map(|v| (v + 1).to_string())),
                na(s.feature_index.map(|v| (v + 1).to_string())),
                na(s.threshold.map(|v| v.to_string())),
                s.n,
                na(s.n_event.map(|v| v.to_string())),
                s.depth
            );
        }
        out
    }
}

/// One parsed row of a [`Tree::v_split`] dump, in the dump's own indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct VSplitRow {
    pub kind: SplitKind,
    pub id_node: u64,
    pub var_split: Option<usize>,
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub n: usize,
    pub n_event: Option<usize>,
    pub depth: u32,
}

pub fn parse_v_split(text: &str) -> Option<Vec<VSplitRow>> {
    fn opt<T: std::str::FromStr>(s: &str) -> Option<Option<T>> {
        if s == "NA" {
            Some(None)
        } else {
            s.parse().ok().map(Some)
        }
    }
    let mut lines = text.lines();
    if lines.next()? != "type,id_node,var_split,feature,threshold,N,Nevent,depth" {
        return None;
    }
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 8 {
                return None;
            }
            Some(VSplitRow {
                kind: SplitKind::parse(f[0])?,
                id_node: f[1].parse().ok()?,
                var_split: opt(f[2])?,
                feature: opt(f[3])?,
                threshold: opt(f[4])?,
                n: f[5].parse().ok()?,
                n_event: opt(f[6])?,
                depth: f[7].parse().ok()?,
            })
        })
        .collect()
}

/// Uniform draw without replacement of `mtry` predictor positions out of
/// `P + Q`, in draw order. Positions index [`Dataset::predictors`].
pub fn draw_candidates<R: Rng + ?Sized>(
    rng: &mut R,
    p: usize,
    q: usize,
    mtry: usize,
) -> Vec<usize> {
    rand::seq::index::sample(rng, p + q, mtry.min(p + q)).into_vec()
}

/// Empirical quantile, linear interpolation between order statistics
/// (the default definition in most statistics packages).
fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Candidate thresholds for a continuous feature. Quantile: the interior
/// deciles, keeping the first cut of each distinct partition and dropping
/// cuts that leave one side empty. Sample: up to 9 distinct observed values
/// other than the maximum, ascending.
pub fn enumerate_cutpoints<R: Rng + ?Sized>(
    values: &[f64],
    option: SplitOption,
    rng: &mut R,
) -> Result<Vec<f64>, TreeError> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || sorted[0] == sorted[sorted.len() - 1] {
        return Err(TreeError::NoValidCut);
    }
    let n = sorted.len();
    match option {
        SplitOption::Quantile => {
            let mut cuts = Vec::new();
            let mut last_left = 0;
            for k in 1..=9 {
                let c = quantile_sorted(&sorted, k as f64 / 10.0);
                let left = sorted.partition_point(|&x| x <= c);
                if left == 0 || left == n || left == last_left {
                    continue;
                }
                last_left = left;
                cuts.push(c);
            }
            Ok(cuts)
        }
        SplitOption::Sample => {
            let mut distinct = sorted;
            distinct.dedup();
            distinct.pop();
            let k = distinct.len().min(9);
            let mut picked: Vec<f64> = rand::seq::index::sample(rng, distinct.len(), k)
                .into_iter()
                .map(|i| distinct[i])
                .collect();
            picked.sort_by(f64::total_cmp);
            Ok(picked)
        }
    }
}

/// All binary partitions of the levels present, as left-side level lists.
/// The last present level always goes right, which removes complements.
pub fn enumerate_factor_splits(levels: &[u32]) -> Result<Vec<Vec<u32>>, TreeError> {
    let mut lv = levels.to_vec();
    lv.sort_unstable();
    lv.dedup();
    let l = lv.len();
    if l > MAX_FACTOR_LEVELS {
        return Err(TreeError::TooManyLevels(l));
    }
    if l < 2 {
        return Err(TreeError::NoValidCut);
    }
    Ok((1u32..(1 << (l - 1)))
        .map(|m| {
            (0..l - 1)
                .filter(|b| m >> b & 1 == 1)
                .map(|b| lv[b])
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Minimize,
    Maximize,
}

impl Orientation {
    fn better(self, a: f64, b: f64) -> bool {
        match self {
            Orientation::Minimize => a < b,
            Orientation::Maximize => a > b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitScore {
    pub score: f64,
    pub orientation: Orientation,
}

/// Outcome of the rows at one node, prepared for repeated scoring.
struct NodeOutcome<'a> {
    values: &'a OutcomeValues,
    surv: Option<SortedSurv>,
    competing: bool,
}

impl<'a> NodeOutcome<'a> {
    fn new(values: &'a OutcomeValues) -> Self {
        let (surv, competing) = match values {
            OutcomeValues::Survival { time, event, cause } => (
                Some(SortedSurv::new(time, event)),
                event.iter().any(|&e| e > 0 && e != *cause),
            ),
            _ => (None, false),
        };
        NodeOutcome {
            values,
            surv,
            competing,
        }
    }

    fn orientation(&self) -> Orientation {
        match self.values {
            OutcomeValues::Survival { .. } => Orientation::Maximize,
            _ => Orientation::Minimize,
        }
    }

    /// Score of the partition `left` (true) / right; `None` if invalid.
    fn score(&self, left: &[bool]) -> Option<f64> {
        let n_l = left.iter().filter(|&&b| b).count();
        let n = left.len();
        if n_l == 0 || n_l == n {
            return None;
        }
        match self.values {
            OutcomeValues::Numeric(y) => {
                let (mut s, mut c) = ([0.0f64; 2], [0.0f64; 2]);
                for (v, &l) in y.iter().zip(left) {
                    let g = usize::from(!l);
                    s[g] += v;
                    c[g] += 1.0;
                }
                let m = [s[0] / c[0], s[1] / c[1]];
                let mut ss = 0.0;
                for (v, &l) in y.iter().zip(left) {
                    let d = v - m[usize::from(!l)];
                    ss += d * d;
                }
                Some(ss / n as f64)
            }
            OutcomeValues::Factor { y, levels } => {
                let mut counts = vec![[0usize; 2]; levels.len()];
                for (&v, &l) in y.iter().zip(left) {
                    counts[v as usize][usize::from(!l)] += 1;
                }
                let side = [n_l as f64, (n - n_l) as f64];
                let mut h = 0.0;
                for g in 0..2 {
                    let mut hg = 0.0;
                    for c in &counts {
                        if c[g] > 0 {
                            let p = c[g] as f64 / side[g];
                            hg -= p * p.ln();
                        }
                    }
                    h += side[g] / n as f64 * hg;
                }
                Some(h)
            }
            OutcomeValues::Survival { event, cause, .. } => {
                let mut ev = [false; 2];
                for (&e, &l) in event.iter().zip(left) {
                    if e > 0 {
                        ev[usize::from(!l)] = true;
                    }
                }
                if !(ev[0] && ev[1]) {
                    return None;
                }
                let s = self.surv.as_ref().unwrap();
                Some(if self.competing {
                    s.gray(left, *cause)
                } else {
                    s.logrank(left)
                })
            }
        }
    }
}

/// Scores the partition of `outcome` (one node's rows) into `left` and
/// `right` row positions. Survival partitions need an event on each side.
pub fn score_split(
    outcome: &OutcomeValues,
    left: &[usize],
    right: &[usize],
) -> Result<SplitScore, TreeError> {
    let mut rows: Vec<usize> = left.iter().chain(right).copied().collect();
    rows.sort_unstable();
    let sub = outcome.select(&rows);
    let mask: Vec<bool> = rows.iter().map(|r| left.contains(r)).collect();
    let node = NodeOutcome::new(&sub);
    let score = node.score(&mask).ok_or(TreeError::InvalidPartition)?;
    Ok(SplitScore {
        score,
        orientation: node.orientation(),
    })
}

/// How a chosen split assigns subjects.
#[derive(Debug, Clone, PartialEq)]
pub enum SplitRule {
    Longitudinal {
        marker: usize,
        feature: usize,
        threshold: f64,
        model: NodeModel,
    },
    Numeric {
        var: usize,
        threshold: f64,
        missing_left: bool,
    },
    Factor {
        var: usize,
        left_levels: Vec<u32>,
        right_levels: Vec<u32>,
        missing_left: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestSplit {
    pub rule: SplitRule,
    pub score: f64,
    /// Per node row: goes left.
    pub left: Vec<bool>,
}

fn continuous_mask(values: &[Option<f64>], c: f64) -> (Vec<bool>, bool) {
    let l = values.iter().filter(|v| v.is_some_and(|x| x <= c)).count();
    let r = values.iter().filter(|v| v.is_some_and(|x| x > c)).count();
    let missing_left = l >= r;
    (
        values
            .iter()
            .map(|v| v.map_or(missing_left, |x| x <= c))
            .collect(),
        missing_left,
    )
}

fn factor_mask(values: &[Option<u32>], left_levels: &[u32]) -> (Vec<bool>, bool) {
    let l = values
        .iter()
        .filter(|v| v.is_some_and(|x| left_levels.contains(&x)))
        .count();
    let r = values
        .iter()
        .filter(|v| v.is_some_and(|x| !left_levels.contains(&x)))
        .count();
    let missing_left = l >= r;
    (
        values
            .iter()
            .map(|v| v.map_or(missing_left, |x| left_levels.contains(&x)))
            .collect(),
        missing_left,
    )
}

/// Searches the candidates for the best valid split of the node made of
/// dataset rows `rows`. Splits leaving fewer than `nodesize` rows on a side
/// are skipped. Ties keep the first split met, iterating candidates in the
/// given order, then features, then cuts.
pub fn find_best_split<R: Rng + ?Sized>(
    ds: &Dataset,
    rows: &[usize],
    candidates: &[Predictor],
    hp: &Hyperparams,
    rng: &mut R,
) -> Option<BestSplit> {
    let outcome = ds.outcome.select(rows);
    let node = NodeOutcome::new(&outcome);
    let orient = node.orientation();
    let nodesize = hp.nodesize;
    let mut best: Option<BestSplit> = None;

    let consider = |mask: Vec<bool>, rule: &dyn Fn() -> SplitRule, best: &mut Option<BestSplit>| {
        let n_l = mask.iter().filter(|&&b| b).count();
        if n_l < nodesize || mask.len() - n_l < nodesize {
            return;
        }
        let Some(score) = node.score(&mask) else {
            return;
        };
        if score.is_nan() {
            return;
        }
        if best.as_ref().is_none_or(|b| orient.better(score, b.score)) {
            *best = Some(BestSplit {
                rule: rule(),
                score,
                left: mask,
            });
        }
    };

    for &cand in candidates {
        match cand {
            Predictor::Longitudinal(m) => {
                let marker = &ds.markers[m];
                let design = LmmDesign::from_spec(&marker.spec);
                let series: Vec<&[Obs]> =
                    rows.iter().map(|&r| marker.series[r].as_slice()).collect();
                let fit = match fit_lmm(&design, &series) {
                    Ok(f) if f.converged => f,
                    _ => continue,
                };
                let feats: Vec<Vec<f64>> = series
                    .iter()
                    .map(|s| predict_random_effects(&fit, &design, s))
                    .collect();
                let model = NodeModel { design, fit };
                for j in 0..model.design.n_random() {
                    let col: Vec<f64> = feats.iter().map(|f| f[j]).collect();
                    let Ok(cuts) = enumerate_cutpoints(&col, hp.nsplit_option, rng) else {
                        continue;
                    };
                    for c in cuts {
                        let mask = col.iter().map(|&x| x <= c).collect();
                        consider(
                            mask,
                            &|| SplitRule::Longitudinal {
                                marker: m,
                                feature: j,
                                threshold: c,
                                model: model.clone(),
                            },
                            &mut best,
                        );
                    }
                }
            }
            Predictor::Numeric(v) => {
                let all = &ds.numeric[v].values;
                let col: Vec<Option<f64>> = rows.iter().map(|&r| all[r]).collect();
                let present: Vec<f64> = col.iter().flatten().copied().collect();
                let Ok(cuts) = enumerate_cutpoints(&present, hp.nsplit_option, rng) else {
                    continue;
                };
                for c in cuts {
                    let (mask, missing_left) = continuous_mask(&col, c);
                    consider(
                        mask,
                        &|| SplitRule::Numeric {
                            var: v,
                            threshold: c,
                            missing_left,
                        },
                        &mut best,
                    );
                }
            }
            Predictor::Factor(v) => {
                let all = &ds.factors[v].values;
                let col: Vec<Option<u32>> = rows.iter().map(|&r| all[r]).collect();
                let mut present: Vec<u32> = col.iter().flatten().copied().collect();
                present.sort_unstable();
                present.dedup();
                let Ok(parts) = enumerate_factor_splits(&present) else {
                    continue;
                };
                for left_levels in parts {
                    let (mask, missing_left) = factor_mask(&col, &left_levels);
                    let right_levels: Vec<u32> = present
                        .iter()
                        .copied()
                        .filter(|l| !left_levels.contains(l))
                        .collect();
                    consider(
                        mask,
                        &|| SplitRule::Factor {
                            var: v,
                            left_levels: left_levels.clone(),
                            right_levels: right_levels.clone(),
                            missing_left,
                        },
                        &mut best,
                    );
                }
            }
        }
    }
    best
}

fn leaf_summary(outcome: &OutcomeValues, all_causes: &[u32]) -> LeafSummary {
    match outcome {
        OutcomeValues::Numeric(y) => LeafSummary::Mean(y.iter().sum::<f64>() / y.len() as f64),
        OutcomeValues::Factor { y, levels } => {
            let mut counts = vec![0usize; levels.len()];
            for &v in y {
                counts[v as usize] += 1;
            }
            let mut category = 0;
            for (k, &c) in counts.iter().enumerate() {
                if c > counts[category] {
                    category = k;
                }
            }
            LeafSummary::Vote {
                category: category as u32,
                share: counts[category] as f64 / y.len() as f64,
            }
        }
        OutcomeValues::Survival { time, event, .. } => {
            let sample = SurvSample {
                time: time.clone(),
                event: event.clone(),
            };
            let curves = if all_causes.len() <= 1 {
                vec![nelson_aalen_cif(&sample)]
            } else {
                all_causes
                    .iter()
                    .map(|&k| aalen_johansen_cif(&sample, k))
                    .collect()
            };
            LeafSummary::Cif {
                causes: all_causes.to_vec(),
                curves,
            }
        }
    }
}

struct Grower<'a, R: Rng + ?Sized> {
    ds: &'a Dataset,
    hp: &'a Hyperparams,
    predictors: Vec<Predictor>,
    mtry: usize,
    causes: Vec<u32>,
    rng: &'a mut R,
    tree: Tree,
}

impl<R: Rng + ?Sized> Grower<'_, R> {
    fn grow(&mut self, node_id: u64, depth: u32, rows: Vec<usize>) {
        let outcome = self.ds.outcome.select(&rows);
        let (any_events, n_event) = match &outcome {
            OutcomeValues::Survival { event, cause, .. } => (
                event.iter().filter(|&&e| e > 0).count(),
                Some(event.iter().filter(|&&e| e == *cause).count()),
            ),
            _ => (usize::MAX, None),
        };
        let mut record = SplitRecord {
            node_id,
            kind: SplitKind::Leaf,
            var_index: None,
            feature_index: None,
            threshold: None,
            left_levels: Vec::new(),
            right_levels: Vec::new(),
            missing_left: true,
            n: rows.len(),
            n_event,
            depth,
            model: None,
        };
        let can_split = rows.len() >= 2 * self.hp.nodesize
            && any_events >= self.hp.minsplit
            && depth < MAX_DEPTH;
        let best = if can_split {
            let cand: Vec<Predictor> =
                draw_candidates(&mut *self.rng, self.ds.p(), self.ds.q(), self.mtry)
                    .into_iter()
                    .map(|i| self.predictors[i])
                    .collect();
            find_best_split(self.ds, &rows, &cand, self.hp, &mut *self.rng)
        } else {
            None
        };
        let Some(best) = best else {
            self.tree
                .leaves
                .insert(node_id, leaf_summary(&outcome, &self.causes));
            self.tree.splits.insert(node_id, record);
            return;
        };
        match best.rule {
            SplitRule::Longitudinal {
                marker,
                feature,
                threshold,
                model,
            } => {
                record.kind = SplitKind::Longitudinal;
                record.var_index = Some(marker);
                record.feature_index = Some(feature);
                record.threshold = Some(threshold);
                record.model = Some(model);
            }
            SplitRule::Numeric {
                var,
                threshold,
                missing_left,
            } => {
                record.kind = SplitKind::Numeric;
                record.var_index = Some(var);
                record.threshold = Some(threshold);
                record.missing_left = missing_left;
            }
            SplitRule::Factor {
                var,
                left_levels,
                right_levels,
                missing_left,
            } => {
                record.kind = SplitKind::Factor;
                record.var_index = Some(var);
                record.left_levels = left_levels;
                record.right_levels = right_levels;
                record.missing_left = missing_left;
            }
        }
        self.tree.splits.insert(node_id, record);
        let (mut l, mut r) = (Vec::new(), Vec::new());
        for (&row, &go_left) in rows.iter().zip(&best.left) {
            if go_left {
                l.push(row);
            } else {
                r.push(row);
            }
        }
        self.grow(2 * node_id, depth + 1, l);
        self.grow(2 * node_id + 1, depth + 1, r);
    }
}

/// Grows one tree on the dataset rows `boot_ids` (repeats allowed).
pub fn grow_tree<R: Rng + ?Sized>(
    ds: &Dataset,
    boot_ids: Vec<usize>,
    hp: &Hyperparams,
    rng: &mut R,
) -> Tree {
    let mut in_bag = vec![false; ds.n_subjects()];
    for &i in &boot_ids {
        in_bag[i] = true;
    }
    let oob_ids = (0..ds.n_subjects()).filter(|&i| !in_bag[i]).collect();
    let mut g = Grower {
        ds,
        hp,
        predictors: ds.predictors(),
        mtry: hp.resolved_mtry(ds.n_predictors()),
        causes: ds.outcome.causes(),
        rng,
        tree: Tree {
            splits: BTreeMap::new(),
            leaves: BTreeMap::new(),
            boot_ids: boot_ids.clone(),
            oob_ids,
        },
    };
    g.grow(1, 1, boot_ids);
    g.tree
}

/// Routes a subject from the root to a leaf. With a landmark `s`, only
/// longitudinal observations at times `<= s` are used.
pub fn drop_down(tree: &Tree, subject: &SubjectRecord, landmark: Option<f64>) -> u64 {
    let mut id = 1u64;
    loop {
        let Some(s) = tree.splits.get(&id) else {
            return id;
        };
        let left = match s.kind {
            SplitKind::Leaf => return id,
            SplitKind::Longitudinal => {
                let m = s.var_index.unwrap();
                let model = s.model.as_ref().unwrap();
                let all = &subject.series[m];
                let series = match landmark {
                    Some(t) => &all[..all.partition_point(|o| o.time <= t)],
                    None => &all[..],
                };
                let b = predict_random_effects(&model.fit, &model.design, series);
                b[s.feature_index.unwrap()] <= s.threshold.unwrap()
            }
            SplitKind::Numeric => subject.numeric[s.var_index.unwrap()]
                .map_or(s.missing_left, |x| x <= s.threshold.unwrap()),
            SplitKind::Factor => match subject.factors[s.var_index.unwrap()] {
                Some(l) if s.left_levels.contains(&l) => true,
                Some(l) if s.right_levels.contains(&l) => false,
                _ => s.missing_left,
            },
        };
        id = if left { 2 * id } else { 2 * id + 1 };
    }
}
