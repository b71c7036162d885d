mod common;

use longforest::survstats::{
    aalen_johansen_cif, brier_score, censoring_km, gray_stat, integrated_brier, logrank_stat,
    nelson_aalen_cif, StepFunction, SurvSample,
};
use proptest::prelude::*;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-8 * a.abs().max(b.abs()).max(1.0)
}

fn sample_strategy(
    max: usize,
    causes: u32,
) -> impl Strategy<Value = (Vec<f64>, Vec<u32>, Vec<bool>)> {
    (2..=max).prop_flat_map(move |n| {
        (
            prop::collection::vec(1u32..8, n).prop_map(|v| v.into_iter().map(f64::from).collect()),
            prop::collection::vec(0..=causes, n),
            prop::collection::vec(any::<bool>(), n),
        )
    })
}

fn split(time: &[f64], event: &[u32], left: &[bool]) -> (SurvSample, SurvSample) {
    let pick = |side: bool| {
        let rows: Vec<usize> = (0..time.len()).filter(|&i| left[i] == side).collect();
        SurvSample {
            time: rows.iter().map(|&i| time[i]).collect(),
            event: rows.iter().map(|&i| event[i]).collect(),
        }
    };
    (pick(true), pick(false))
}

proptest! {
    #[test]
    fn nelson_aalen_matches_oracle((time, event, _) in sample_strategy(10, 1)) {
        let c = nelson_aalen_cif(&SurvSample { time: time.clone(), event: event.clone() });
        let o = common::na_cif(&time, &event);
        prop_assert_eq!(c.times.len(), o.len());
        for ((t, v), (ot, ov)) in c.times.iter().zip(&c.values).zip(o) {
            prop_assert_eq!(*t, ot);
            prop_assert!(close(*v, ov));
        }
    }

    #[test]
    fn aalen_johansen_matches_oracle((time, event, _) in sample_strategy(10, 3), k in 1u32..=3) {
        let s = SurvSample { time: time.clone(), event: event.clone() };
        let c = aalen_johansen_cif(&s, k);
        let o = common::aj_cif(&time, &event, k);
        prop_assert_eq!(c.times.len(), o.len());
        for (v, (_, ov)) in c.values.iter().zip(o) {
            prop_assert!(close(*v, ov));
        }
        // sum over causes never exceeds one
        let total: f64 = (1..=3).map(|k| aalen_johansen_cif(&s, k).eval(100.0)).sum();
        prop_assert!(total <= 1.0 + 1e-12);
    }

    #[test]
    fn logrank_matches_oracle((time, event, left) in sample_strategy(10, 1)) {
        let (l, r) = split(&time, &event, &left);
        prop_assume!(!l.is_empty() && !r.is_empty());
        prop_assert!(close(logrank_stat(&l, &r), common::logrank(&time, &event, &left)));
    }

    #[test]
    fn gray_matches_oracle((time, event, left) in sample_strategy(10, 2), k in 1u32..=2) {
        let (l, r) = split(&time, &event, &left);
        prop_assume!(!l.is_empty() && !r.is_empty());
        let fast = gray_stat(&l, &r, k);
        prop_assert!(close(fast, common::gray(&time, &event, &left, k)), "{} vs {}", fast, common::gray(&time, &event, &left, k));
        prop_assert!(fast >= 0.0);
        prop_assert!(close(fast, gray_stat(&r, &l, k)));
    }

    #[test]
    fn gray_without_competitors_is_logrank((time, event, left) in sample_strategy(10, 1)) {
        let (l, r) = split(&time, &event, &left);
        prop_assume!(!l.is_empty() && !r.is_empty());
        prop_assert!(close(gray_stat(&l, &r, 1), logrank_stat(&l, &r)));
    }

    #[test]
    fn censoring_km_is_monotone((time, event, _) in sample_strategy(12, 2)) {
        let g = censoring_km(&SurvSample { time, event });
        prop_assert!(g.values.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(g.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn brier_without_censoring_is_mean_squared_residual(
        (time, event, _) in sample_strategy(10, 2),
        preds in prop::collection::vec(0.0f64..1.0, 10),
        t in 1.0f64..8.0,
    ) {
        let event: Vec<u32> = event.into_iter().map(|e| e.max(1)).collect();
        let s = SurvSample { time: time.clone(), event: event.clone() };
        let g = censoring_km(&s);
        let n = time.len();
        let bs = brier_score(&preds[..n], &s, t, 1, &g);
        let direct: f64 = (0..n)
            .map(|i| {
                let y = if time[i] <= t && event[i] == 1 { 1.0 } else { 0.0 };
                (y - preds[i]).powi(2)
            })
            .sum::<f64>()
            / n as f64;
        prop_assert_eq!(bs.value, direct);
        prop_assert_eq!(bs.degenerate, 0);
    }

    #[test]
    fn perfect_prediction_has_zero_ibs((time, event, _) in sample_strategy(10, 2)) {
        let s = SurvSample { time: time.clone(), event: event.clone() };
        let grid = s.cause_times(1);
        prop_assume!(!grid.is_empty());
        let pred: Vec<Vec<f64>> = (0..time.len())
            .map(|i| grid.iter().map(|&g| if time[i] <= g && event[i] == 1 { 1.0 } else { 0.0 }).collect())
            .collect();
        let g = censoring_km(&s);
        let tau2 = s.event_times().last().copied().unwrap();
        let r = integrated_brier(&pred, &grid, &s, 1, 0.0, tau2, &g).unwrap();
        prop_assert_eq!(r.value, 0.0);
    }
}

#[test]
fn ibs_with_unit_weights_matches_trapezoid_of_squared_residuals() {
    let time = [1.0, 2.0, 3.0, 4.0];
    let event = [1, 1, 1, 1];
    let s = SurvSample {
        time: time.to_vec(),
        event: event.to_vec(),
    };
    let grid = [1.0, 2.0, 3.0, 4.0];
    let pred: Vec<Vec<f64>> = (0..4)
        .map(|i| vec![0.1 * i as f64, 0.2, 0.5, 0.9])
        .collect();
    let ones = StepFunction {
        initial: 1.0,
        ..Default::default()
    };
    let r = integrated_brier(&pred, &grid, &s, 1, 0.0, 4.0, &ones).unwrap();
    let bs = |t: f64| -> f64 {
        (0..4)
            .map(|i| {
                let k = grid.partition_point(|&g| g <= t);
                let p = if k == 0 { 0.0 } else { pred[i][k - 1] };
                let y = if time[i] <= t { 1.0 } else { 0.0 };
                (y - p).powi(2)
            })
            .sum::<f64>()
            / 4.0
    };
    let pts = [0.0, 1.0, 2.0, 3.0, 4.0];
    let trap: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (bs(w[0]) + bs(w[1])) * (w[1] - w[0]))
        .sum();
    assert!((r.value - trap).abs() < 1e-12);
}
