//! Heart-rate error statistics and the per-video / short-time evaluation
//! protocols.

use std::fmt;

use crate::error::{Error, Result};

/// Ordered `(predicted, ground_truth)` bpm pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct HrPairSeries {
    pub pairs: Vec<(f64, f64)>,
}

impl HrPairSeries {
    pub fn new(pairs: Vec<(f64, f64)>) -> Self {
        HrPairSeries { pairs }
    }

    pub fn from_slices(pred: &[f64], gt: &[f64]) -> Result<Self> {
        if pred.len() != gt.len() {
            return Err(Error::Metrics(format!(
                "{} predictions vs {} ground-truth values",
                pred.len(),
                gt.len()
            )));
        }
        Ok(HrPairSeries {
            pairs: pred.iter().copied().zip(gt.iter().copied()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn extend(&mut self, other: &HrPairSeries) {
        self.pairs.extend_from_slice(&other.pairs);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    /// Mean error.
    pub me: f64,
    /// Population standard deviation of the error.
    pub sde: f64,
    pub rmse: f64,
    /// Mean absolute error relative to ground truth.
    pub me_rate: f64,
    /// Pearson correlation; `None` when undefined (fewer than two pairs, or
    /// either series constant).
    pub rho: Option<f64>,
}

pub fn evaluate(series: &HrPairSeries) -> Result<EvalReport> {
    let n = series.len();
    if n == 0 {
        return Err(Error::Metrics("cannot evaluate an empty series".into()));
    }
    if let Some((_, g)) = series.pairs.iter().find(|(_, g)| !(*g > 0.0)) {
        return Err(Error::Metrics(format!("ground truth {g} must be positive")));
    }
    let nf = n as f64;
    let err = |&(p, g): &(f64, f64)| p - g;

    let me = series.pairs.iter().map(err).sum::<f64>() / nf;
    let sde = (series.pairs.iter().map(|q| (err(q) - me).powi(2)).sum::<f64>() / nf).sqrt();
    let rmse = (series.pairs.iter().map(|q| err(q).powi(2)).sum::<f64>() / nf).sqrt();
    let me_rate = series.pairs.iter().map(|q| err(q).abs() / q.1).sum::<f64>() / nf;

    Ok(EvalReport {
        n,
        me,
        sde,
        rmse,
        me_rate,
        rho: pearson(series),
    })
}

fn pearson(series: &HrPairSeries) -> Option<f64> {
    let n = series.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mp = series.pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let mg = series.pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut cov, mut vp, mut vg) = (0.0, 0.0, 0.0);
    for &(p, g) in &series.pairs {
        cov += (g - mg) * (p - mp);
        vp += (p - mp) * (p - mp);
        vg += (g - mg) * (g - mg);
    }
    if vp == 0.0 || vg == 0.0 {
        return None;
    }
    Some((cov / (vg.sqrt() * vp.sqrt())).clamp(-1.0, 1.0))
}

/// Mean absolute error in bpm (not one of the five reported metrics, but
/// the usual sanity figure for synthetic runs).
pub fn mean_absolute_error(series: &HrPairSeries) -> Result<f64> {
    if series.is_empty() {
        return Err(Error::Metrics("cannot evaluate an empty series".into()));
    }
    Ok(series.pairs.iter().map(|(p, g)| (p - g).abs()).sum::<f64>() / series.len() as f64)
}

/// Whole-video estimate: the mean of the per-second predictions.
pub fn average_hr_protocol(per_second: &[f64]) -> Result<f64> {
    if per_second.is_empty() {
        return Err(Error::Metrics("no per-second predictions".into()));
    }
    Ok(per_second.iter().sum::<f64>() / per_second.len() as f64)
}

/// Average predictions and ground truth over disjoint windows of
/// `window_s` seconds; a trailing partial window is dropped.
pub fn short_time_protocol(pred: &[f64], gt: &[f64], window_s: usize) -> Result<HrPairSeries> {
    if pred.len() != gt.len() {
        return Err(Error::Metrics(format!(
            "{} predictions vs {} ground-truth seconds",
            pred.len(),
            gt.len()
        )));
    }
    if window_s == 0 || pred.len() < window_s {
        return Err(Error::Metrics(format!(
            "series of {} s is shorter than one {window_s} s window",
            pred.len()
        )));
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Ok(HrPairSeries {
        pairs: pred
            .chunks_exact(window_s)
            .zip(gt.chunks_exact(window_s))
            .map(|(p, g)| (mean(p), mean(g)))
            .collect(),
    })
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rho = self.rho.map_or_else(|| "n/a".to_string(), |r| format!("{r:.2}"));
        write!(
            f,
            "{:>8.2}({:.2}) {:>8.2} {:>8.2}% {:>6}",
            self.me,
            self.sde,
            self.rmse,
            self.me_rate * 100.0,
            rho
        )
    }
}

pub const REPORT_CSV_HEADER: &str = "protocol,n,me,sde,rmse,me_rate,rho";
pub const REPORT_TABLE_HEADER: &str = "      Me(SDe)     RMSE   MeRate    rho";

impl EvalReport {
    pub fn csv_row(&self, protocol: &str) -> String {
        let rho = self.rho.map_or_else(|| "NA".to_string(), |r| r.to_string());
        format!(
            "{protocol},{},{},{},{},{},{rho}",
            self.n, self.me, self.sde, self.rmse, self.me_rate
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_predictions() {
        let s = HrPairSeries::new(vec![(70.0, 70.0), (80.0, 80.0), (95.0, 95.0)]);
        let r = evaluate(&s).unwrap();
        assert_eq!((r.me, r.sde, r.rmse, r.me_rate), (0.0, 0.0, 0.0, 0.0));
        assert!((r.rho.unwrap() - 1.0).abs() < 1e-15);
        let c = HrPairSeries::new(vec![(70.0, 70.0); 3]);
        assert_eq!(evaluate(&c).unwrap().rho, None);
    }

    #[test]
    fn two_pair_example() {
        let r = evaluate(&HrPairSeries::new(vec![(72.0, 70.0), (68.0, 70.0)])).unwrap();
        assert_eq!(r.me, 0.0);
        assert_eq!(r.sde, 2.0);
        assert_eq!(r.rmse, 2.0);
        assert!((r.me_rate - 2.0 / 70.0).abs() < 1e-15);
        assert_eq!(r.rho, None);
    }

    #[test]
    fn errors() {
        assert!(evaluate(&HrPairSeries::default()).is_err());
        assert!(evaluate(&HrPairSeries::new(vec![(1.0, 0.0)])).is_err());
        assert_eq!(evaluate(&HrPairSeries::new(vec![(1.0, 2.0)])).unwrap().rho, None);
        assert!(average_hr_protocol(&[]).is_err());
        assert!(short_time_protocol(&[1.0; 3], &[1.0; 3], 4).is_err());
    }

    #[test]
    fn protocols() {
        assert_eq!(average_hr_protocol(&[70.0, 72.0, 74.0]).unwrap(), 72.0);
        assert_eq!(average_hr_protocol(&[63.5]).unwrap(), 63.5);
        let p: Vec<f64> = (0..10).map(f64::from).collect();
        let s = short_time_protocol(&p, &p, 4).unwrap();
        assert_eq!(s.pairs, vec![(1.5, 1.5), (5.5, 5.5)]);
        let c = short_time_protocol(&[88.0; 13], &[90.0; 13], 6).unwrap();
        assert_eq!(c.pairs, vec![(88.0, 90.0); 2]);
    }

    fn arb_series() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((40.0..200.0f64, 45.0..240.0f64), 2..60)
    }

    proptest! {
        #[test]
        fn bias_variance_identity(pairs in arb_series()) {
            let r = evaluate(&HrPairSeries::new(pairs)).unwrap();
            let lhs = r.rmse * r.rmse;
            let rhs = r.me * r.me + r.sde * r.sde;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * lhs.max(1e-12));
            prop_assert!(r.sde >= 0.0);
        }

        #[test]
        fn rho_affine_invariance(pairs in arb_series(), a in -50.0..50.0f64, b in 0.1..5.0f64) {
            let base = evaluate(&HrPairSeries::new(pairs.clone())).unwrap();
            prop_assume!(base.rho.is_some());
            let pos: Vec<_> = pairs.iter().map(|&(p, g)| (a + b * p, g)).collect();
            let neg: Vec<_> = pairs.iter().map(|&(p, g)| (a - b * p, g)).collect();
            let r0 = base.rho.unwrap();
            let r1 = evaluate(&HrPairSeries::new(pos)).unwrap().rho.unwrap();
            prop_assert!((r0 - r1).abs() < 1e-12);
            let r2 = evaluate(&HrPairSeries::new(neg)).unwrap().rho.unwrap();
            prop_assert!((r0 + r2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r0));
        }

        #[test]
        fn me_rate_scale_invariant(pairs in arb_series(), c in 0.1..10.0f64) {
            let a = evaluate(&HrPairSeries::new(pairs.clone())).unwrap().me_rate;
            let scaled: Vec<_> = pairs.iter().map(|&(p, g)| (c * p, c * g)).collect();
            let b = evaluate(&HrPairSeries::new(scaled)).unwrap().me_rate;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn permutation_invariant(pairs in arb_series(), seed in any::<u64>()) {
            use rand::{seq::SliceRandom, SeedableRng};
            let mut shuffled = pairs.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a = evaluate(&HrPairSeries::new(pairs)).unwrap();
            let b = evaluate(&HrPairSeries::new(shuffled)).unwrap();
            let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * x.abs().max(1.0);
            prop_assert!(close(a.me, b.me) && close(a.sde, b.sde) && close(a.rmse, b.rmse));
            prop_assert!(close(a.me_rate, b.me_rate));
            match (a.rho, b.rho) {
                (Some(x), Some(y)) => prop_assert!(close(x, y)),
                (None, None) => {}
                _ => prop_assert!(false),
            }
        }
    }
}
