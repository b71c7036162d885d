//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use longforest::data::{
    validate_inputs, Dataset, FactorColumn, FixedTable, Hyperparams, NumericColumn, Obs, Outcome,
    OutcomeValues, Predictor, SplitOption,
};
use longforest::lmm::{predict_random_effects, LmmDesign, LmmFit};
use longforest::simgen::{generate, SimConfig};
use longforest::tree::{drop_down, score_split, Orientation, SplitRule, Tree};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn distinct(v: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = v.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn at_risk(time: &[f64], t: f64) -> f64 {
    time.iter().filter(|&&x| x >= t).count() as f64
}

fn count(time: &[f64], event: &[u32], t: f64, pred: impl Fn(u32) -> bool) -> f64 {
    time.iter()
        .zip(event)
        .filter(|(&x, &e)| x == t && pred(e))
        .count() as f64
}

/// `(t, 1 - exp(-H(t)))` at each distinct event time.
pub fn na_cif(time: &[f64], event: &[u32]) -> Vec<(f64, f64)> {
    let ts = distinct(
        time.iter()
            .zip(event)
            .filter(|(_, &e)| e > 0)
            .map(|(&t, _)| t),
    );
    ts.iter()
        .map(|&t| {
            let h: f64 = ts
                .iter()
                .filter(|&&u| u <= t)
                .map(|&u| count(time, event, u, |e| e > 0) / at_risk(time, u))
                .sum();
            (t, 1.0 - (-h).exp())
        })
        .collect()
}

/// All-cause Kaplan–Meier just before `t`.
fn km_before(time: &[f64], event: &[u32], t: f64) -> f64 {
    distinct(time.iter().copied())
        .into_iter()
        .filter(|&u| u < t)
        .map(|u| 1.0 - count(time, event, u, |e| e > 0) / at_risk(time, u))
        .product()
}

/// `(t, F_k(t))` at each distinct time of cause `k`.
pub fn aj_cif(time: &[f64], event: &[u32], k: u32) -> Vec<(f64, f64)> {
    let ts = distinct(
        time.iter()
            .zip(event)
            .filter(|(_, &e)| e == k)
            .map(|(&t, _)| t),
    );
    ts.iter()
        .map(|&t| {
            let f: f64 = ts
                .iter()
                .filter(|&&u| u <= t)
                .map(|&u| {
                    km_before(time, event, u) * count(time, event, u, |e| e == k) / at_risk(time, u)
                })
                .sum();
            (t, f)
        })
        .collect()
}

/// Two-sample log-rank chi-square (any non-zero code is an event).
pub fn logrank(time: &[f64], event: &[u32], left: &[bool]) -> f64 {
    let (mut oe, mut v) = (0.0, 0.0);
    for t in distinct(time.iter().copied()) {
        let n = at_risk(time, t);
        let n1 = (0..time.len()).filter(|&i| left[i] && time[i] >= t).count() as f64;
        let d = count(time, event, t, |e| e > 0);
        let d1 = (0..time.len())
            .filter(|&i| left[i] && time[i] == t && event[i] > 0)
            .count() as f64;
        if d == 0.0 {
            continue;
        }
        oe += d1 - n1 * d / n;
        if n > 1.0 {
            v += n1 / n * (1.0 - n1 / n) * d * (n - d) / (n - 1.0);
        }
    }
    if v > 0.0 {
        oe * oe / v
    } else {
        0.0
    }
}

/// Gray's two-sample statistic for cause `k`, computed term by term with
/// every group quantity re-derived from the raw data at each time.
pub fn gray(time: &[f64], event: &[u32], left: &[bool], k: u32) -> f64 {
    let ts = distinct(time.iter().copied());
    let m = ts.len();
    let members =
        |g: usize| -> Vec<usize> { (0..time.len()).filter(|&i| left[i] == (g == 0)).collect() };
    let groups = [members(0), members(1)];
    // per group, per time
    let mut y = [vec![0.0; m], vec![0.0; m]];
    let mut d1 = [vec![0.0; m], vec![0.0; m]];
    let mut d2 = [vec![0.0; m], vec![0.0; m]];
    for g in 0..2 {
        for (j, &t) in ts.iter().enumerate() {
            for &i in &groups[g] {
                if time[i] >= t {
                    y[g][j] += 1.0;
                }
                if time[i] == t && event[i] == k {
                    d1[g][j] += 1.0;
                }
                if time[i] == t && event[i] > 0 && event[i] != k {
                    d2[g][j] += 1.0;
                }
            }
        }
    }
    let s_before = |g: usize, j: usize| -> f64 {
        (0..j)
            .filter(|&i| y[g][i] > 0.0)
            .map(|i| 1.0 - (d1[g][i] + d2[g][i]) / y[g][i])
            .product()
    };
    let f_before = |g: usize, j: usize| -> f64 {
        (0..j)
            .filter(|&i| y[g][i] > 0.0)
            .map(|i| s_before(g, i) * d1[g][i] / y[g][i])
            .sum()
    };
    let r = |g: usize, j: usize| -> f64 {
        let s = s_before(g, j);
        if y[g][j] > 0.0 && s > 0.0 {
            y[g][j] * (1.0 - f_before(g, j)) / s
        } else {
            0.0
        }
    };
    let r_tot = |j: usize| r(0, j) + r(1, j);
    let dgamma = |j: usize| {
        let rt = r_tot(j);
        if rt > 0.0 {
            (d1[0][j] + d1[1][j]) / rt
        } else {
            0.0
        }
    };
    let w = |g: usize, j: usize| -> f64 {
        let rt = r_tot(j);
        if rt <= 0.0 {
            0.0
        } else if g == 0 {
            r(1, j) / rt
        } else {
            -r(0, j) / rt
        }
    };
    let score: f64 = (0..m).map(|j| d1[0][j] - r(0, j) * dgamma(j)).sum();
    let c = |g: usize, j: usize| -> f64 {
        (j + 1..m)
            .map(|i| {
                let one_minus_f = 1.0 - f_before(g, i);
                if one_minus_f > 0.0 {
                    w(g, i) * r(g, i) * dgamma(i) / one_minus_f
                } else {
                    0.0
                }
            })
            .sum()
    };
    let mut var = 0.0;
    for j in 0..m {
        let yt = y[0][j] + y[1][j];
        let dt = d1[0][j] + d1[1][j];
        let tie = if yt > 1.0 {
            (yt - dt) / (yt - 1.0)
        } else {
            1.0
        };
        for g in 0..2 {
            if y[g][j] == 0.0 {
                continue;
            }
            let f_after = f_before(g, j + 1);
            let s_after = s_before(g, j + 1);
            let cg = c(g, j);
            let a1 = w(g, j) - cg * (1.0 - f_after - s_after) / y[g][j];
            let a2 = -cg * (1.0 - f_after) / y[g][j];
            var += a1 * a1 * r(g, j) * dgamma(j) * tie + a2 * a2 * d2[g][j];
        }
    }
    if var > 0.0 {
        score * score / var
    } else {
        0.0
    }
}

/// Marginal Gaussian log-likelihood with explicit `n_i × n_i` covariances.
pub fn direct_loglik(fit: &LmmFit, design: &LmmDesign, series: &[&[Obs]]) -> f64 {
    let p = design.n_fixed();
    let q = design.n_random();
    let b = DMatrix::from_row_slice(q, q, &fit.b_cov);
    let beta = DVector::from_column_slice(&fit.beta);
    let mut ll = 0.0;
    for s in series.iter().filter(|s| !s.is_empty()) {
        let n = s.len();
        let mut x = DMatrix::zeros(n, p);
        let mut z = DMatrix::zeros(n, q);
        let mut xr = vec![0.0; p];
        let mut zr = vec![0.0; q];
        for (i, o) in s.iter().enumerate() {
            design.x_row(o.time, &mut xr);
            design.z_row(o.time, &mut zr);
            for c in 0..p {
                x[(i, c)] = xr[c];
            }
            for c in 0..q {
                z[(i, c)] = zr[c];
            }
        }
        let v = &z * &b * z.transpose() + DMatrix::identity(n, n) * fit.sigma2;
        let y = DVector::from_iterator(n, s.iter().map(|o| o.value));
        let r = y - x * &beta;
        let chol = v.cholesky().expect("V positive definite");
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let quad = r.dot(&chol.solve(&r));
        ll += -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad);
    }
    ll
}

/// Interior deciles, linear interpolation between order statistics, keeping
/// the first cut of each distinct non-trivial partition.
pub fn decile_cuts(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = Vec::new();
    let mut seen: Vec<usize> = Vec::new();
    for k in 1..10 {
        let h = (n as f64 - 1.0) * (k as f64 / 10.0);
        let lo = h.floor() as usize;
        let c = if lo + 1 < n {
            s[lo] + (h - lo as f64) * (s[lo + 1] - s[lo])
        } else {
            s[lo]
        };
        let left = s.iter().filter(|&&x| x <= c).count();
        if left == 0 || left == n || seen.contains(&left) {
            continue;
        }
        seen.push(left);
        cuts.push(c);
    }
    cuts
}

/// What the brute force picked.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteBest {
    pub predictor: Predictor,
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left_levels: Option<Vec<u32>>,
    pub score: f64,
}

/// Scores every (candidate, feature, cut) of a node independently and keeps
/// the first optimum. Only for the Quantile option.
pub fn brute_force_split(
    ds: &Dataset,
    rows: &[usize],
    cands: &[Predictor],
    nodesize: usize,
) -> Option<BruteBest> {
    let outcome = ds.outcome.select(rows);
    let n = rows.len();
    let mut best: Option<BruteBest> = None;
    let try_mask = |left: Vec<bool>, cand: BruteBest, best: &mut Option<BruteBest>| {
        let l: Vec<usize> = (0..n).filter(|&i| left[i]).collect();
        let r: Vec<usize> = (0..n).filter(|&i| !left[i]).collect();
        if l.len() < nodesize || r.len() < nodesize {
            return;
        }
        let Ok(s) = score_split(&outcome, &l, &r) else {
            return;
        };
        if s.score.is_nan() {
            return;
        }
        let better = match best {
            None => true,
            Some(b) => match s.orientation {
                Orientation::Minimize => s.score < b.score,
                Orientation::Maximize => s.score > b.score,
            },
        };
        if better {
            *best = Some(BruteBest {
                score: s.score,
                ..cand
            });
        }
    };
    for &c in cands {
        match c {
            Predictor::Longitudinal(m) => {
                let marker = &ds.markers[m];
                let design = LmmDesign::from_spec(&marker.spec);
                let series: Vec<&[Obs]> =
                    rows.iter().map(|&r| marker.series[r].as_slice()).collect();
                let Ok(fit) = longforest::lmm::fit_lmm(&design, &series) else {
                    continue;
                };
                if !fit.converged {
                    continue;
                }
                let feats: Vec<Vec<f64>> = series
                    .iter()
                    .map(|s| predict_random_effects(&fit, &design, s))
                    .collect();
                for j in 0..design.n_random() {
                    let col: Vec<f64> = feats.iter().map(|f| f[j]).collect();
                    for cut in decile_cuts(&col) {
                        let mask = col.iter().map(|&x| x <= cut).collect();
                        let cand = BruteBest {
                            predictor: c,
                            feature: Some(j),
                            threshold: Some(cut),
                            left_levels: None,
                            score: 0.0,
                        };
                        try_mask(mask, cand, &mut best);
                    }
                }
            }
            Predictor::Numeric(v) => {
                let col: Vec<Option<f64>> = rows.iter().map(|&r| ds.numeric[v].values[r]).collect();
                let present: Vec<f64> = col.iter().flatten().copied().collect();
                for cut in decile_cuts(&present) {
                    let nl = present.iter().filter(|&&x| x <= cut).count();
                    let miss_left = 2 * nl >= present.len();
                    let mask = col
                        .iter()
                        .map(|x| x.map_or(miss_left, |x| x <= cut))
                        .collect();
                    let cand = BruteBest {
                        predictor: c,
                        feature: None,
                        threshold: Some(cut),
                        left_levels: None,
                        score: 0.0,
                    };
                    try_mask(mask, cand, &mut best);
                }
            }
            Predictor::Factor(v) => {
                let col: Vec<Option<u32>> = rows.iter().map(|&r| ds.factors[v].values[r]).collect();
                let levels = distinct(col.iter().flatten().map(|&l| l as f64));
                let l = levels.len();
                if l < 2 {
                    continue;
                }
                for m in 1u32..(1 << l) - 1 {
                    if m >> (l - 1) & 1 == 1 {
                        continue;
                    }
                    let subset: Vec<u32> = (0..l)
                        .filter(|b| m >> b & 1 == 1)
                        .map(|b| levels[b] as u32)
                        .collect();
                    let present: Vec<u32> = col.iter().flatten().copied().collect();
                    let nl = present.iter().filter(|x| subset.contains(x)).count();
                    let miss_left = 2 * nl >= present.len();
                    let mask = col
                        .iter()
                        .map(|x| x.map_or(miss_left, |x| subset.contains(&x)))
                        .collect();
                    let cand = BruteBest {
                        predictor: c,
                        feature: None,
                        threshold: None,
                        left_levels: Some(subset),
                        score: 0.0,
                    };
                    try_mask(mask, cand, &mut best);
                }
            }
        }
    }
    best
}

/// Same shape as [`BruteBest`] for a split found by the library.
pub fn as_brute(rule: &SplitRule, score: f64) -> BruteBest {
    match rule {
        SplitRule::Longitudinal {
            marker,
            feature,
            threshold,
            ..
        } => BruteBest {
            predictor: Predictor::Longitudinal(*marker),
            feature: Some(*feature),
            threshold: Some(*threshold),
            left_levels: None,
            score,
        },
        SplitRule::Numeric { var, threshold, .. } => BruteBest {
            predictor: Predictor::Numeric(*var),
            feature: None,
            threshold: Some(*threshold),
            left_levels: None,
            score,
        },
        SplitRule::Factor {
            var, left_levels, ..
        } => BruteBest {
            predictor: Predictor::Factor(*var),
            feature: None,
            threshold: None,
            left_levels: Some(left_levels.clone()),
            score,
        },
    }
}

/// Random small dataset with one marker, one numeric (with gaps), one
/// three-level factor and an outcome of the requested kind (0 numeric,
/// 1 factor, 2 competing-risk survival).
pub fn random_small_dataset(rng: &mut ChaCha8Rng, n: usize, kind: u8) -> Dataset {
    let subjects: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let mut long = longforest::data::LongitudinalTable::new(vec!["m".into()]);
    for id in &subjects {
        let b0: f64 = rng.random_range(-1.5..1.5);
        let visits = rng.random_range(1..5);
        for v in 0..visits {
            let t = v as f64 + rng.random_range(0.0..0.5);
            long.push_row(id, t, &[Some(b0 + 0.3 * t + rng.random_range(-0.3..0.3))])
                .unwrap();
        }
    }
    let num = NumericColumn {
        name: "x".into(),
        values: (0..n)
            .map(|_| {
                (rng.random_range(0.0..1.0) > 0.1).then(|| (rng.random_range(0..6) as f64) / 2.0)
            })
            .collect(),
    };
    let fac = FactorColumn {
        name: "f".into(),
        levels: vec!["a".into(), "b".into(), "c".into()],
        values: (0..n).map(|_| Some(rng.random_range(0..3))).collect(),
    };
    let fixed = FixedTable::from_columns(subjects.clone(), vec![num], vec![fac]).unwrap();
    let values = match kind {
        0 => OutcomeValues::Numeric((0..n).map(|_| rng.random_range(0..4) as f64).collect()),
        1 => OutcomeValues::Factor {
            y: (0..n).map(|_| rng.random_range(0..2)).collect(),
            levels: vec!["no".into(), "yes".into()],
        },
        _ => {
            let mut event: Vec<u32> = (0..n).map(|_| rng.random_range(0..3)).collect();
            event[0] = 1;
            event[1] = 2;
            OutcomeValues::Survival {
                time: (0..n).map(|_| rng.random_range(1..6) as f64).collect(),
                event,
                cause: 1,
            }
        }
    };
    let outcome = Outcome { subjects, values };
    validate_inputs(
        Some(&long),
        Some(&fixed),
        &outcome,
        &[longforest::data::LmmSpec {
            marker: "m".into(),
            fixed: vec![0, 1],
            random: vec![0],
        }],
        &Hyperparams {
            mtry: Some(1),
            nsplit_option: SplitOption::Quantile,
            ..Default::default()
        },
    )
    .unwrap()
}

/// Simulated markers with a competing-risk outcome: cause 1 hazard grows
/// with the random intercept of marker 1.
pub fn survival_dataset(n: usize, seed: u64) -> Dataset {
    let sim = generate(&SimConfig {
        n_subjects: n,
        seed,
        ..Default::default()
    })
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for b in &sim.random_effects {
        let t1 = Exp::new(0.15 * (0.9 * b[0][0]).exp())
            .unwrap()
            .sample(&mut rng);
        let t2 = Exp::new(0.08).unwrap().sample(&mut rng);
        let c = rng.random_range(2.0..12.0);
        let (t, e) = if t1 <= t2 && t1 <= c {
            (t1, 1)
        } else if t2 <= c {
            (t2, 2)
        } else {
            (c, 0)
        };
        time.push(t.max(1e-3));
        event.push(e);
    }
    let outcome = Outcome {
        subjects: sim.outcome.subjects.clone(),
        values: OutcomeValues::Survival {
            time,
            event,
            cause: 1,
        },
    };
    let hp = Hyperparams::default();
    validate_inputs(
        Some(&sim.longitudinal),
        Some(&sim.fixed),
        &outcome,
        &sim.specs,
        &hp,
    )
    .unwrap()
}

/// Checks the structural invariants of a grown tree and that replaying the
/// bootstrap rows reproduces the recorded node sizes.
pub fn audit_tree(tree: &Tree, ds: &Dataset, hp: &Hyperparams) -> Result<(), String> {
    for (&id, s) in &tree.splits {
        if s.is_leaf() {
            if s.n < hp.nodesize {
                return Err(format!("leaf {id} has {} < nodesize", s.n));
            }
            if !tree.leaves.contains_key(&id) {
                return Err(format!("leaf {id} has no summary"));
            }
            continue;
        }
        let (l, r) = match (tree.splits.get(&(2 * id)), tree.splits.get(&(2 * id + 1))) {
            (Some(l), Some(r)) => (l, r),
            _ => return Err(format!("node {id} lacks a child")),
        };
        if l.n + r.n != s.n {
            return Err(format!("node {id}: {} != {} + {}", s.n, l.n, r.n));
        }
        if l.depth != s.depth + 1 || r.depth != s.depth + 1 {
            return Err(format!("node {id}: child depth"));
        }
    }
    // replay
    let mut reached: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
    for &row in &tree.boot_ids {
        let leaf = drop_down(tree, &ds.subject(row), None);
        reached.entry(leaf).or_default().push(row);
    }
    for (&id, s) in tree.splits.iter().filter(|(_, s)| s.is_leaf()) {
        let got = reached.get(&id).map_or(0, |v| v.len());
        if got != s.n {
            return Err(format!("leaf {id}: replay reaches {got}, recorded {}", s.n));
        }
    }
    if let OutcomeValues::Survival { event, .. } = &ds.outcome {
        // any-cause events below each internal node
        for (&id, s) in tree.splits.iter().filter(|(_, s)| !s.is_leaf()) {
            let mut ev = 0;
            for (&leaf, rows) in &reached {
                let mut a = leaf;
                while a > id {
                    a /= 2;
                }
                if a == id {
                    ev += rows.iter().filter(|&&r| event[r] > 0).count();
                }
            }
            if ev < hp.minsplit || s.n < 2 * hp.nodesize {
                return Err(format!(
                    "node {id} split with {ev} events, {} subjects",
                    s.n
                ));
            }
        }
    }
    Ok(())
}
