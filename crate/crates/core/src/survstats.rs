//! Survival kernels: cumulative incidence estimators, two-sample tests used
//! as splitting rules, and IPCW Brier scores.
//!
//! Ties: at a common timestamp events are processed before censorings.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvError {
    #[error("survival time {0} must be finite and > 0")]
    InvalidTime(f64),
    #[error("time and event vectors differ in length")]
    LengthMismatch,
    #[error("no event times in the integration range")]
    EmptyGrid,
    #[error("integration range must satisfy tau1 < tau2")]
    InvalidRange,
}

/// Observed times and event codes (0 censored, otherwise a cause).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurvSample {
    pub time: Vec<f64>,
    pub event: Vec<u32>,
}

impl SurvSample {
    pub fn new(time: Vec<f64>, event: Vec<u32>) -> Result<Self, SurvError> {
        if time.len() != event.len() {
            return Err(SurvError::LengthMismatch);
        }
        if let Some(&t) = time.iter().find(|t| !(t.is_finite() && **t > 0.0)) {
            return Err(SurvError::InvalidTime(t));
        }
        Ok(SurvSample { time, event })
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> SurvSample {
        SurvSample {
            time: rows.iter().map(|&i| self.time[i]).collect(),
            event: rows.iter().map(|&i| self.event[i]).collect(),
        }
    }

    /// Sorted distinct times at which any event occurs.
    pub fn event_times(&self) -> Vec<f64> {
        distinct(
            self.time
                .iter()
                .zip(&self.event)
                .filter(|(_, &e)| e > 0)
                .map(|(&t, _)| t),
        )
    }

    /// Sorted distinct times at which `cause` occurs.
    pub fn cause_times(&self, cause: u32) -> Vec<f64> {
        distinct(
            self.time
                .iter()
                .zip(&self.event)
                .filter(|(_, &e)| e == cause)
                .map(|(&t, _)| t),
        )
    }
}

fn distinct(it: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Right-continuous step function; value 0 before the first jump unless
/// `initial` says otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub initial: f64,
}

impl StepFunction {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x < t);
        if k == 0 {
            self.initial
        } else {
            self.values[k - 1]
        }
    }
}

/// Cumulative incidence curve: jumps at event times, 0 before the first one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CifCurve {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl CifCurve {
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&x| x <= t);
        if k == 0 {
            0.0
        } else {
            self.values[k - 1]
        }
    }

    /// Values of the curve on an ascending grid.
    pub fn on_grid(&self, grid: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(grid.len());
        let mut k = 0;
        for &t in grid {
            while k < self.times.len() && self.times[k] <= t {
                k += 1;
            }
            out.push(if k == 0 { 0.0 } else { self.values[k - 1] });
        }
        out
    }

    /// Two-column delimited text `time,value`.
    pub fn write_delimited<W: Write>(&self, mut w: W, delimiter: char) -> std::io::Result<()> {
        writeln!(w, "time{delimiter}value")?;
        for (t, v) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t}{delimiter}{v}")?;
        }
        Ok(())
    }
}

/// Per distinct time: at-risk count, events per cause, censorings.
struct TimeTable {
    times: Vec<f64>,
    at_risk: Vec<usize>,
    // events[j] = (cause, count) pairs collapsed into "of interest" / total
    events: Vec<Vec<(u32, usize)>>,
    censored: Vec<usize>,
}

impl TimeTable {
    fn new(sample: &SurvSample) -> Self {
        let mut order: Vec<usize> = (0..sample.len()).collect();
        order.sort_by(|&a, &b| sample.time[a].total_cmp(&sample.time[b]));
        let n = order.len();
        let mut tt = TimeTable {
            times: Vec::new(),
            at_risk: Vec::new(),
            events: Vec::new(),
            censored: Vec::new(),
        };
        let mut i = 0;
        while i < n {
            let t = sample.time[order[i]];
            let mut ev: Vec<(u32, usize)> = Vec::new();
            let mut cens = 0;
            let start = i;
            while i < n && sample.time[order[i]] == t {
                let e = sample.event[order[i]];
                if e == 0 {
                    cens += 1;
                } else if let Some(x) = ev.iter_mut().find(|x| x.0 == e) {
                    x.1 += 1;
                } else {
                    ev.push((e, 1));
                }
                i += 1;
            }
            tt.times.push(t);
            tt.at_risk.push(n - start);
            tt.events.push(ev);
            tt.censored.push(cens);
        }
        tt
    }

    fn deaths(&self, j: usize) -> usize {
        self.events[j].iter().map(|x| x.1).sum()
    }

    fn deaths_of(&self, j: usize, cause: u32) -> usize {
        self.events[j]
            .iter()
            .find(|x| x.0 == cause)
            .map_or(0, |x| x.1)
    }
}

/// Nelson–Aalen cumulative hazard Ĥ over all events mapped to a CIF via
/// `1 − exp(−Ĥ)`.
pub fn nelson_aalen_cif(sample: &SurvSample) -> CifCurve {
    let tt = TimeTable::new(sample);
    let mut h = 0.0;
    let mut curve = CifCurve::default();
    for j in 0..tt.times.len() {
        let d = tt.deaths(j);
        if d > 0 {
            h += d as f64 / tt.at_risk[j] as f64;
            curve.times.push(tt.times[j]);
            curve.values.push(1.0 - (-h).exp());
        }
    }
    curve
}

/// All-cause Kaplan–Meier survival.
pub fn kaplan_meier(sample: &SurvSample) -> StepFunction {
    let tt = TimeTable::new(sample);
    let mut s = 1.0;
    let mut out = StepFunction {
        initial: 1.0,
        ..Default::default()
    };
    for j in 0..tt.times.len() {
        let d = tt.deaths(j);
        if d > 0 {
            s *= 1.0 - d as f64 / tt.at_risk[j] as f64;
            out.times.push(tt.times[j]);
            out.values.push(s);
        }
    }
    out
}

/// Aalen–Johansen cumulative incidence of `cause`.
pub fn aalen_johansen_cif(sample: &SurvSample, cause: u32) -> CifCurve {
    let tt = TimeTable::new(sample);
    let mut s = 1.0;
    let mut f = 0.0;
    let mut curve = CifCurve::default();
    for j in 0..tt.times.len() {
        let n = tt.at_risk[j] as f64;
        let dk = tt.deaths_of(j, cause);
        if dk > 0 {
            f += s * dk as f64 / n;
            curve.times.push(tt.times[j]);
            curve.values.push(f.min(1.0));
        }
        let d = tt.deaths(j);
        if d > 0 {
            s *= 1.0 - d as f64 / n;
        }
    }
    curve
}

/// Kaplan–Meier of the censoring distribution Ĝ. Events at a timestamp are
/// removed from the risk set before censorings at that timestamp.
pub fn censoring_km(sample: &SurvSample) -> StepFunction {
    let tt = TimeTable::new(sample);
    let mut g = 1.0;
    let mut out = StepFunction {
        initial: 1.0,
        ..Default::default()
    };
    for j in 0..tt.times.len() {
        let c = tt.censored[j];
        if c > 0 {
            let n = tt.at_risk[j] - tt.deaths(j);
            g *= 1.0 - c as f64 / n as f64;
            out.times.push(tt.times[j]);
            out.values.push(g);
        }
    }
    out
}

/// Subjects of a two-group comparison sorted by time, for repeated scoring
/// of many partitions of the same node.
#[derive(Debug, Clone)]
pub struct SortedSurv {
    pub time: Vec<f64>,
    pub event: Vec<u32>,
    /// Position in the caller's ordering for each sorted entry.
    pub origin: Vec<usize>,
    // start index of each distinct time block
    blocks: Vec<usize>,
}

impl SortedSurv {
    pub fn new(time: &[f64], event: &[u32]) -> Self {
        let mut origin: Vec<usize> = (0..time.len()).collect();
        origin.sort_by(|&a, &b| time[a].total_cmp(&time[b]).then(a.cmp(&b)));
        let time: Vec<f64> = origin.iter().map(|&i| time[i]).collect();
        let event: Vec<u32> = origin.iter().map(|&i| event[i]).collect();
        let mut blocks = Vec::new();
        for i in 0..time.len() {
            if i == 0 || time[i] != time[i - 1] {
                blocks.push(i);
            }
        }
        blocks.push(time.len());
        SortedSurv {
            time,
            event,
            origin,
            blocks,
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Log-rank statistic for `left[origin]` vs the rest; every non-zero
    /// event code counts as an event.
    pub fn logrank(&self, left: &[bool]) -> f64 {
        let mut n_l = self.origin.iter().filter(|&&o| left[o]).count() as f64;
        let mut n = self.len() as f64;
        let mut o_minus_e = 0.0;
        let mut var = 0.0;
        for w in self.blocks.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mut d = 0.0;
            let mut d_l = 0.0;
            let mut leave_l = 0.0;
            for i in a..b {
                let is_l = left[self.origin[i]];
                if is_l {
                    leave_l += 1.0;
                }
                if self.event[i] > 0 {
                    d += 1.0;
                    if is_l {
                        d_l += 1.0;
                    }
                }
            }
            if d > 0.0 {
                o_minus_e += d_l - n_l * d / n;
                if n > 1.0 {
                    var += n_l * (n - n_l) * d * (n - d) / (n * n * (n - 1.0));
                }
            }
            n -= (b - a) as f64;
            n_l -= leave_l;
        }
        if var > 0.0 {
            o_minus_e * o_minus_e / var
        } else {
            0.0
        }
    }

    /// Gray's two-sample statistic (ρ = 0) comparing the cumulative
    /// incidence of `cause` between `left[origin]` and the rest.
    pub fn gray(&self, left: &[bool], cause: u32) -> f64 {
        let nb = self.blocks.len() - 1;
        let mut y = [self.origin.iter().filter(|&&o| left[o]).count() as f64, 0.0];
        y[1] = self.len() as f64 - y[0];
        let mut s = [1.0f64; 2];
        let mut f = [0.0f64; 2];
        let mut score = 0.0;

        // per-time quantities needed by the backward pass
        let mut w = vec![[0.0f64; 2]; nb];
        let mut term = vec![[0.0f64; 2]; nb];
        let mut y_at = vec![[0.0f64; 2]; nb];
        let mut f_after = vec![[0.0f64; 2]; nb];
        let mut s_after = vec![[0.0f64; 2]; nb];
        let mut e1 = vec![[0.0f64; 2]; nb];
        let mut d2 = vec![[0.0f64; 2]; nb];
        let mut tie = vec![1.0f64; nb];

        for (j, win) in self.blocks.windows(2).enumerate() {
            let (a, b) = (win[0], win[1]);
            let mut d1 = [0.0f64; 2];
            let mut dd2 = [0.0f64; 2];
            let mut leave = [0.0f64; 2];
            for i in a..b {
                let g = if left[self.origin[i]] { 0 } else { 1 };
                leave[g] += 1.0;
                let e = self.event[i];
                if e == cause {
                    d1[g] += 1.0;
                } else if e > 0 {
                    dd2[g] += 1.0;
                }
            }
            let mut r = [0.0f64; 2];
            for g in 0..2 {
                if y[g] > 0.0 && s[g] > 0.0 {
                    r[g] = y[g] * (1.0 - f[g]) / s[g];
                }
            }
            let r_tot = r[0] + r[1];
            let d1_tot = d1[0] + d1[1];
            let y_tot = y[0] + y[1];
            y_at[j] = y;
            d2[j] = dd2;
            if r_tot > 0.0 {
                let dgamma = d1_tot / r_tot;
                score += d1[0] - r[0] * dgamma;
                w[j] = [r[1] / r_tot, -r[0] / r_tot];
                for g in 0..2 {
                    e1[j][g] = r[g] * dgamma;
                    if y[g] > 0.0 && s[g] > 0.0 {
                        term[j][g] = w[j][g] * y[g] * dgamma / s[g];
                    }
                }
                if y_tot > 1.0 {
                    tie[j] = (y_tot - d1_tot) / (y_tot - 1.0);
                }
            }
            for g in 0..2 {
                if y[g] > 0.0 {
                    let s_prev = s[g];
                    f[g] += s_prev * d1[g] / y[g];
                    s[g] = s_prev * (1.0 - (d1[g] + dd2[g]) / y[g]);
                }
                y[g] -= leave[g];
            }
            f_after[j] = f;
            s_after[j] = s;
        }

        let mut var = 0.0;
        let mut c = [0.0f64; 2];
        for j in (0..nb).rev() {
            for g in 0..2 {
                let yg = y_at[j][g];
                if yg > 0.0 {
                    let a1 = w[j][g] - c[g] * (1.0 - f_after[j][g] - s_after[j][g]) / yg;
                    let a2 = -c[g] * (1.0 - f_after[j][g]) / yg;
                    var += a1 * a1 * e1[j][g] * tie[j] + a2 * a2 * d2[j][g];
                }
            }
            // c(u) sums strictly later times
            for g in 0..2 {
                c[g] += term[j][g];
            }
        }
        if var > 0.0 {
            score * score / var
        } else {
            0.0
        }
    }
}

fn two_groups(left: &SurvSample, right: &SurvSample) -> (SortedSurv, Vec<bool>) {
    let time: Vec<f64> = left.time.iter().chain(&right.time).copied().collect();
    let event: Vec<u32> = left.event.iter().chain(&right.event).copied().collect();
    let mask: Vec<bool> = (0..time.len()).map(|i| i < left.len()).collect();
    (SortedSurv::new(&time, &event), mask)
}

/// Two-sample log-rank chi-square statistic; 0 when there are no events.
pub fn logrank_stat(left: &SurvSample, right: &SurvSample) -> f64 {
    let (s, mask) = two_groups(left, right);
    s.logrank(&mask)
}

/// Gray's two-sample test statistic for `cause`; 0 when the variance vanishes.
/// Without competing events it coincides with the log-rank statistic.
pub fn gray_stat(left: &SurvSample, right: &SurvSample, cause: u32) -> f64 {
    let (s, mask) = two_groups(left, right);
    s.gray(&mask, cause)
}

/// Brier score at one time point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrierScore {
    pub value: f64,
    /// Subjects whose weight was dropped because Ĝ was 0.
    pub degenerate: usize,
}

fn ipcw_weight(t_i: f64, d_i: u32, t: f64, g: &StepFunction, degenerate: &mut usize) -> f64 {
    let denom = if t_i <= t {
        if d_i == 0 {
            return 0.0;
        }
        g.left_limit(t_i)
    } else {
        g.eval(t)
    };
    if denom > 0.0 {
        1.0 / denom
    } else {
        *degenerate += 1;
        0.0
    }
}

/// IPCW Brier score of predicted cumulative incidences `pred` at time `t`.
pub fn brier_score(
    pred: &[f64],
    sample: &SurvSample,
    t: f64,
    cause: u32,
    g: &StepFunction,
) -> BrierScore {
    let mut degenerate = 0;
    let mut sum = 0.0;
    debug_assert_eq!(pred.len(), sample.len());
    for ((&ti, &ei), &p) in sample.time.iter().zip(&sample.event).zip(pred) {
        let w = ipcw_weight(ti, ei, t, g, &mut degenerate);
        let ind = if ti <= t && ei == cause { 1.0 } else { 0.0 };
        sum += w * (ind - p).powi(2);
    }
    BrierScore {
        value: sum / sample.len() as f64,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedBrier {
    /// Mean over subjects of the per-subject integrals.
    pub value: f64,
    pub per_subject: Vec<f64>,
    pub points: Vec<f64>,
    pub degenerate: usize,
}

/// Integration points: τ1, the grid times strictly inside (τ1, τ2), and τ2.
pub fn ibs_points(grid: &[f64], tau1: f64, tau2: f64) -> Result<Vec<f64>, SurvError> {
    if tau1.is_nan() || tau2.is_nan() || tau1 >= tau2 {
        return Err(SurvError::InvalidRange);
    }
    if !grid.iter().any(|&t| t >= tau1 && t <= tau2) {
        return Err(SurvError::EmptyGrid);
    }
    let mut pts = vec![tau1];
    pts.extend(grid.iter().copied().filter(|&t| t > tau1 && t < tau2));
    pts.push(tau2);
    Ok(pts)
}

/// Trapezoidal integral of the IPCW Brier score over `[τ1, τ2]` (no
/// normalization by the interval length). `pred[i]` is subject `i`'s
/// predicted cumulative incidence on the ascending `grid`, read as a
/// right-continuous step function that is 0 before `grid[0]`.
pub fn integrated_brier(
    pred: &[Vec<f64>],
    grid: &[f64],
    sample: &SurvSample,
    cause: u32,
    tau1: f64,
    tau2: f64,
    g: &StepFunction,
) -> Result<IntegratedBrier, SurvError> {
    let pts = ibs_points(grid, tau1, tau2)?;
    let mut degenerate = 0;
    let per_subject: Vec<f64> = (0..sample.len())
        .map(|i| {
            let curve = |t: f64| {
                let k = grid.partition_point(|&x| x <= t);
                if k == 0 {
                    0.0
                } else {
                    pred[i][k - 1]
                }
            };
            let integrand = |t: f64, deg: &mut usize| {
                let w = ipcw_weight(sample.time[i], sample.event[i], t, g, deg);
                let ind = if sample.time[i] <= t && sample.event[i] == cause {
                    1.0
                } else {
                    0.0
                };
                w * (ind - curve(t)).powi(2)
            };
            let mut acc = 0.0;
            let mut prev = integrand(pts[0], &mut degenerate);
            for w in pts.windows(2) {
                let next = integrand(w[1], &mut degenerate);
                acc += 0.5 * (prev + next) * (w[1] - w[0]);
                prev = next;
            }
            acc
        })
        .collect();
    let value = per_subject.iter().sum::<f64>() / per_subject.len().max(1) as f64;
    Ok(IntegratedBrier {
        value,
        per_subject,
        points: pts,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(time: &[f64], event: &[u32]) -> SurvSample {
        SurvSample::new(time.to_vec(), event.to_vec()).unwrap()
    }

    #[test]
    fn nelson_aalen_hand_values() {
        let c = nelson_aalen_cif(&s(&[1.0], &[1]));
        assert!((c.eval(1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert!((c.eval(1.0) - 0.632121).abs() < 1e-6);
        let c = nelson_aalen_cif(&s(&[1.0, 2.0], &[1, 1]));
        assert!((c.eval(1.0) - 0.393469).abs() < 1e-6);
        assert!((c.eval(2.0) - 0.776870).abs() < 1e-6);
        assert_eq!(c.eval(0.5), 0.0);
        let none = nelson_aalen_cif(&s(&[1.0, 2.0], &[0, 0]));
        assert!(none.times.is_empty());
        assert_eq!(none.eval(10.0), 0.0);
    }

    #[test]
    fn aalen_johansen_hand_values() {
        let data = s(&[1.0, 2.0], &[1, 2]);
        let c1 = aalen_johansen_cif(&data, 1);
        let c2 = aalen_johansen_cif(&data, 2);
        assert!((c1.eval(1.0) - 0.5).abs() < 1e-15);
        assert!((c2.eval(2.0) - 0.5).abs() < 1e-15);
        assert!((c1.eval(3.0) + c2.eval(3.0) - 1.0).abs() < 1e-15);
        assert!(aalen_johansen_cif(&data, 3).times.is_empty());
    }

    #[test]
    fn aalen_johansen_single_cause_is_one_minus_km() {
        let data = s(&[1.0, 2.0, 2.0, 3.5, 4.0, 5.0], &[1, 0, 1, 1, 0, 1]);
        let c = aalen_johansen_cif(&data, 1);
        let km = kaplan_meier(&data);
        for t in [0.5, 1.0, 2.0, 3.0, 3.5, 4.5, 5.0, 6.0] {
            assert!((c.eval(t) - (1.0 - km.eval(t))).abs() < 1e-12);
        }
    }

    #[test]
    fn logrank_edge_cases() {
        let a = s(&[1.0, 2.0, 3.0], &[1, 0, 1]);
        assert!(logrank_stat(&a, &a).abs() < 1e-12);
        let c = s(&[1.0, 2.0], &[0, 0]);
        assert_eq!(logrank_stat(&c, &c), 0.0);
    }

    #[test]
    fn logrank_separated_groups() {
        // left events at 1,2; right at 3,4
        let l = s(&[1.0, 2.0], &[1, 1]);
        let r = s(&[3.0, 4.0], &[1, 1]);
        // t=1: n=4,nl=2,d=1: O-E=1-0.5, V=2*2*1*3/(16*3)=0.25
        // t=2: n=3,nl=1: O-E=1-1/3, V=1*2*1*2/(9*2)=2/9
        // t=3: n=2,nl=0: O-E=0, V=0 ; t=4: n=1 : 0
        let oe: f64 = 0.5 + 2.0 / 3.0;
        let v = 0.25 + 2.0 / 9.0;
        assert!((logrank_stat(&l, &r) - oe * oe / v).abs() < 1e-12);
    }

    #[test]
    fn gray_edge_cases_and_reduction() {
        let a = s(&[1.0, 2.0, 3.0, 4.0], &[1, 2, 0, 1]);
        assert!(gray_stat(&a, &a, 1).abs() < 1e-10);
        let no_k = s(&[1.0, 2.0], &[2, 0]);
        assert_eq!(gray_stat(&no_k, &no_k, 1), 0.0);
        let l = s(&[1.0, 2.5, 3.0], &[1, 0, 1]);
        let r = s(&[2.0, 4.0, 5.0, 5.0], &[1, 1, 0, 1]);
        assert!((gray_stat(&l, &r, 1) - logrank_stat(&l, &r)).abs() < 1e-12);
    }

    #[test]
    fn tests_are_symmetric() {
        let l = s(&[1.0, 2.5, 3.0, 6.0], &[1, 2, 1, 0]);
        let r = s(&[2.0, 2.5, 4.0, 5.0, 5.0], &[2, 1, 1, 0, 1]);
        assert!((gray_stat(&l, &r, 1) - gray_stat(&r, &l, 1)).abs() < 1e-10);
        assert!((logrank_stat(&l, &r) - logrank_stat(&r, &l)).abs() < 1e-10);
        assert!(gray_stat(&l, &r, 1) >= 0.0);
    }

    #[test]
    fn censoring_km_cases() {
        let g = censoring_km(&s(&[1.0, 2.0], &[1, 1]));
        assert_eq!(g.eval(5.0), 1.0);
        let g = censoring_km(&s(&[5.0, 5.0, 5.0], &[0, 0, 0]));
        assert_eq!(g.eval(4.99), 1.0);
        assert_eq!(g.eval(5.0), 0.0);
        assert_eq!(g.left_limit(5.0), 1.0);
        // event at 2 leaves the censoring risk set before the censoring at 2
        let g = censoring_km(&s(&[2.0, 2.0, 3.0], &[1, 0, 1]));
        assert_eq!(g.eval(2.0), 0.5);
    }

    #[test]
    fn brier_constant_and_perfect() {
        let data = s(&[1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 1]);
        let g = censoring_km(&data);
        let t = 2.5;
        let truth: Vec<f64> = data
            .time
            .iter()
            .zip(&data.event)
            .map(|(&ti, &e)| if ti <= t && e == 1 { 1.0 } else { 0.0 })
            .collect();
        assert_eq!(brier_score(&truth, &data, t, 1, &g).value, 0.0);
        let half = vec![0.5; 4];
        assert!((brier_score(&half, &data, t, 1, &g).value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn brier_with_unit_weights_is_mse() {
        let data = s(&[1.0, 2.0, 3.0, 4.0], &[1, 0, 2, 1]);
        let ones = StepFunction {
            initial: 1.0,
            ..Default::default()
        };
        let pred = [0.1, 0.7, 0.3, 0.9];
        let t = 3.0;
        // subject 2 is censored before t: weight 0 even under Ĝ ≡ 1
        let mse =
            ((1.0f64 - 0.1).powi(2) + 0.0 + (0.0f64 - 0.3).powi(2) + (0.0f64 - 0.9).powi(2)) / 4.0;
        assert_eq!(brier_score(&pred, &data, t, 1, &ones).value, mse);
    }

    #[test]
    fn ibs_constant_half() {
        let data = s(&[1.0, 1.0], &[1, 1]);
        let g = censoring_km(&data);
        let grid = [1.0];
        let pred = vec![vec![0.5], vec![0.5]];
        // prediction is 0 before the first grid time, so use a grid starting at 0
        let r = integrated_brier(&pred, &grid, &data, 1, 0.0, 1.0, &g).unwrap();
        // BS(0) = 0 (pred 0, indicator 0), BS(1) = 0.25
        assert!((r.value - 0.125).abs() < 1e-15);
        let grid0 = [0.0, 1.0];
        let pred0 = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
        let r = integrated_brier(&pred0, &grid0, &data, 1, 0.0, 1.0, &g).unwrap();
        assert!((r.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn ibs_errors() {
        let data = s(&[1.0], &[1]);
        let g = censoring_km(&data);
        assert_eq!(
            integrated_brier(&[vec![0.0]], &[5.0], &data, 1, 0.0, 1.0, &g).unwrap_err(),
            SurvError::EmptyGrid
        );
        assert_eq!(
            integrated_brier(&[vec![0.0]], &[0.5], &data, 1, 1.0, 1.0, &g).unwrap_err(),
            SurvError::InvalidRange
        );
    }

    #[test]
    fn cif_delimited_output() {
        let c = CifCurve {
            times: vec![1.0, 2.5],
            values: vec![0.25, 0.5],
        };
        let mut buf = Vec::new();
        c.write_delimited(&mut buf, ',').unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "time,value\n1,0.25\n2.5,0.5\n"
        );
    }
}
