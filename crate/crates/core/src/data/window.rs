use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// One sample: `t_l` past targets, covariates over `t_l + t_h` steps and,
/// when known, the `t_h` future targets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForecastWindow {
    pub series_id: usize,
    /// Dataset index of the first input step.
    pub t0: usize,
    pub y_past: Vec<f64>,
    /// `[(t_l + t_h) × d_x]`.
    pub x_all: Matrix,
    pub y_future: Option<Vec<f64>>,
}

impl ForecastWindow {
    pub fn t_l(&self) -> usize {
        self.y_past.len()
    }

    pub fn t_h(&self) -> usize {
        self.x_all.rows() - self.y_past.len()
    }

    /// Future targets, or a mode error when the window has none.
    pub fn truth(&self) -> Result<&[f64]> {
        self.y_future
            .as_deref()
            .ok_or_else(|| Error::Mode("window carries no future targets".into()))
    }

    /// Dataset indices covered by this window (inputs and targets).
    pub fn span(&self) -> Range<usize> {
        self.t0..self.t0 + self.x_all.rows()
    }

    fn cut(ds: &SeriesDataset, series: usize, t0: usize, t_l: usize, t_h: usize) -> Self {
        let v = &ds.values[series];
        ForecastWindow {
            series_id: ds.series_ids[series],
            t0,
            y_past: v[t0..t0 + t_l].to_vec(),
            x_all: ds.covariates[series].slice_rows(t0, t_l + t_h),
            y_future: Some(v[t0 + t_l..t0 + t_l + t_h].to_vec()),
        }
    }
}

/// All windows of every series, ordered by start index then series.
///
/// Per series there are `floor((T - t_l - t_h) / stride) + 1` windows.
pub fn window(
    ds: &SeriesDataset,
    t_l: usize,
    t_h: usize,
    stride: usize,
) -> Result<Vec<ForecastWindow>> {
    if t_l == 0 || t_h == 0 || stride == 0 {
        return Err(Error::Config("t_l, t_h and stride must be positive".into()));
    }
    if t_l + t_h > ds.len() {
        return Err(Error::Sizing {
            minimum: t_l + t_h,
            got: ds.len(),
        });
    }
    let last = ds.len() - t_l - t_h;
    let mut out = Vec::new();
    for t0 in (0..=last).step_by(stride) {
        for s in 0..ds.n_series() {
            out.push(ForecastWindow::cut(ds, s, t0, t_l, t_h));
        }
    }
    Ok(out)
}

/// Disjoint chronological ranges: training, then validation, then test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub training: Range<usize>,
    pub validation: Range<usize>,
    pub test: Range<usize>,
}

impl SplitSpec {
    pub fn new(training: Range<usize>, validation: Range<usize>, test: Range<usize>) -> Result<Self> {
        let spec = SplitSpec {
            training,
            validation,
            test,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// The last `test_len` steps for test, the `val_len` before for
    /// validation, and everything earlier for training.
    pub fn tail(t_total: usize, val_len: usize, test_len: usize) -> Result<Self> {
        let held = val_len + test_len;
        if held >= t_total {
            return Err(Error::Split(format!(
                "validation ({val_len}) plus test ({test_len}) leave no training data out of {t_total}"
            )));
        }
        let v0 = t_total - held;
        let s0 = t_total - test_len;
        Self::new(0..v0, v0..s0, s0..t_total)
    }

    fn validate(&self) -> Result<()> {
        for (name, r) in [
            ("training", &self.training),
            ("validation", &self.validation),
            ("test", &self.test),
        ] {
            if r.is_empty() {
                return Err(Error::Split(format!("{name} range {r:?} is empty")));
            }
        }
        if self.training.end > self.validation.start || self.validation.end > self.test.start {
            return Err(Error::Split(format!(
                "ranges overlap or are out of order: training {:?}, validation {:?}, test {:?}",
                self.training, self.validation, self.test
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default)]
pub struct WindowSplits {
    pub train: Vec<ForecastWindow>,
    pub validation: Vec<ForecastWindow>,
    pub test: Vec<ForecastWindow>,
}

/// Cuts the three window sets.
///
/// Training windows lie entirely inside the training range. Validation and
/// test windows have their targets inside their own range, stepping by
/// `t_h` so targets never overlap, and may draw history from earlier ranges.
pub fn split(
    ds: &SeriesDataset,
    spec: &SplitSpec,
    t_l: usize,
    t_h: usize,
    train_stride: usize,
) -> Result<WindowSplits> {
    spec.validate()?;
    if spec.test.end > ds.len() {
        return Err(Error::Split(format!(
            "test range {:?} exceeds the {} available steps",
            spec.test,
            ds.len()
        )));
    }
    if train_stride == 0 || t_l == 0 || t_h == 0 {
        return Err(Error::Config("t_l, t_h and stride must be positive".into()));
    }
    let mut out = WindowSplits::default();
    let tr = &spec.training;
    if tr.len() < t_l + t_h {
        return Err(Error::Split(format!(
            "training range of {} steps cannot hold one window of {}",
            tr.len(),
            t_l + t_h
        )));
    }
    for t0 in (tr.start..=tr.end - t_l - t_h).step_by(train_stride) {
        for s in 0..ds.n_series() {
            out.train.push(ForecastWindow::cut(ds, s, t0, t_l, t_h));
        }
    }
    for (range, sink) in [
        (&spec.validation, &mut out.validation),
        (&spec.test, &mut out.test),
    ] {
        let mut f0 = range.start;
        while f0 + t_h <= range.end {
            if f0 >= t_l {
                for s in 0..ds.n_series() {
                    sink.push(ForecastWindow::cut(ds, s, f0 - t_l, t_l, t_h));
                }
            }
            f0 += t_h;
        }
        if sink.is_empty() {
            return Err(Error::Split(format!(
                "range {range:?} yields no evaluation window with t_l={t_l}, t_h={t_h}"
            )));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_dataset, SynthKind, SynthSpec};

    fn ramp(n_series: usize, t: usize) -> SeriesDataset {
        let start = chrono::NaiveDate::from_ymd_opt(2020, 1, 1)
            .unwrap()
            .and_hms_opt(0, 0, 0)
            .unwrap();
        let ts = (0..t).map(|i| start + chrono::TimeDelta::hours(i as i64)).collect();
        let values = (0..n_series)
            .map(|s| (0..t).map(|i| (s * 1000 + i) as f64).collect())
            .collect();
        let covs = (0..n_series)
            .map(|_| Matrix::from_vec(t, 1, (0..t).map(|i| i as f64).collect()))
            .collect();
        SeriesDataset::new(values, covs, vec!["idx".into()], ts).unwrap()
    }

    /// Counts windows by trying every start index.
    fn brute_force_count(t_total: usize, t_l: usize, t_h: usize, stride: usize) -> usize {
        (0..t_total)
            .filter(|t0| t0 % stride == 0 && t0 + t_l + t_h <= t_total)
            .count()
    }

    #[test]
    fn window_count_matches_enumeration() {
        let ds = ramp(1, 10);
        assert_eq!(brute_force_count(10, 4, 2, 1), 5);
        assert_eq!(window(&ds, 4, 2, 1).unwrap().len(), 5);
        for stride in 1..=10 {
            for (t_l, t_h) in [(1, 1), (3, 2), (4, 2), (6, 4)] {
                let got = window(&ds, t_l, t_h, stride).unwrap().len();
                assert_eq!(got, brute_force_count(10, t_l, t_h, stride));
                assert_eq!(got, (10 - t_l - t_h) / stride + 1);
            }
        }
        assert_eq!(window(&ds, 4, 2, 10).unwrap().len(), 1);
    }

    #[test]
    fn windows_are_contiguous_and_never_mix_series() {
        let ds = ramp(2, 12);
        for w in window(&ds, 4, 3, 1).unwrap() {
            let base = (w.series_id * 1000 + w.t0) as f64;
            let mut all = w.y_past.clone();
            all.extend(w.y_future.as_ref().unwrap());
            for (k, v) in all.iter().enumerate() {
                assert_eq!(*v, base + k as f64);
            }
            assert_eq!(w.x_all.rows(), 7);
            assert_eq!(w.x_all[(0, 0)], w.t0 as f64);
        }
    }

    #[test]
    fn windows_are_chronological() {
        let ds = ramp(2, 12);
        let ws = window(&ds, 4, 3, 2).unwrap();
        assert!(ws.windows(2).all(|p| p[0].t0 <= p[1].t0));
    }

    #[test]
    fn touching_ranges_accepted_overlap_rejected() {
        assert!(SplitSpec::new(0..10, 10..15, 15..20).is_ok());
        assert!(matches!(
            SplitSpec::new(0..11, 10..15, 15..20),
            Err(Error::Split(_))
        ));
        assert!(matches!(
            SplitSpec::new(0..10, 10..16, 15..20),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn training_windows_never_touch_test_range() {
        let ds = synthesize_dataset(&SynthSpec {
            n_series: 2,
            t_total: 480,
            seed: 3,
            kind: SynthKind::SineMix,
            t_l: 24,
            t_h: 12,
        })
        .unwrap();
        let spec = SplitSpec::tail(480, 96, 96).unwrap();
        let splits = split(&ds, &spec, 24, 12, 1).unwrap();
        let leaked: Vec<usize> = splits
            .train
            .iter()
            .flat_map(|w| w.span())
            .filter(|i| spec.test.contains(i) || spec.validation.contains(i))
            .collect();
        assert!(leaked.is_empty());
        for w in &splits.test {
            let future = w.t0 + 24..w.t0 + 36;
            assert!(future.start >= spec.test.start && future.end <= spec.test.end);
        }
        // 96 test steps / 12 = 8 windows per series
        assert_eq!(splits.test.len(), 16);
        assert_eq!(splits.validation.len(), 16);
    }
}
