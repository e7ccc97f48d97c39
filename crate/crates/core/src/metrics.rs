//! Accuracy matrix and the continual-adaptation summary metrics.
//!
//! `R[t][j]` is the test accuracy on domain `j` after adapting through
//! domain `t` (domain 0 is the source). With `N` target domains:
//!
//! ```text
//! ACC = (1/N)     Σ_{t=0..N}   R[N][t]
//! BWT = (1/(N−1)) Σ_{t=1..N−1} (R[N][t] − R[t][t])
//! ```
//!
//! ACC sums `N + 1` accuracies but divides by `N`; it is evaluated exactly as
//! written. The plain mean over all `N + 1` domains is reported alongside as
//! `acc_mean`.

use crate::datagen::LabeledPoint;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    num_targets: usize,
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new(num_targets: usize) -> Self {
        Self {
            num_targets,
            rows: vec![vec![None; num_targets + 1]; num_targets + 1],
        }
    }

    pub fn num_targets(&self) -> usize {
        self.num_targets
    }

    pub fn set(&mut self, t: usize, j: usize, acc: f64) -> Result<()> {
        if t > self.num_targets || j > self.num_targets {
            return Err(Error::Contract(format!("R[{t}][{j}] outside the matrix")));
        }
        if !(0.0..=1.0).contains(&acc) {
            return Err(Error::Contract(format!("accuracy {acc} outside [0, 1]")));
        }
        self.rows[t][j] = Some(acc);
        Ok(())
    }

    /// Fills row `t` from column 0 onwards.
    pub fn set_row(&mut self, t: usize, accs: &[f64]) -> Result<()> {
        for (j, a) in accs.iter().enumerate() {
            self.set(t, j, *a)?;
        }
        Ok(())
    }

    pub fn get(&self, t: usize, j: usize) -> Option<f64> {
        self.rows.get(t).and_then(|r| r.get(j)).copied().flatten()
    }

    fn require(&self, t: usize, j: usize) -> Result<f64> {
        self.get(t, j)
            .ok_or_else(|| Error::Contract(format!("R[{t}][{j}] is required but missing")))
    }

    /// Writes the matrix as CSV: a `t` column then one column per domain,
    /// empty where undefined.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..=self.num_targets).map(|j| format!("d{j}")));
        w.write_record(&header)?;
        for (t, row) in self.rows.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.map_or_else(String::new, |a| a.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// ACC as defined above (divisor `N`).
    pub acc: f64,
    /// Mean of the final row over all `N + 1` domains.
    pub acc_mean: f64,
    /// Undefined for a single target domain.
    pub bwt: Option<f64>,
}

pub fn compute_metrics(r: &AccuracyMatrix) -> Result<Metrics> {
    let n = r.num_targets();
    if n == 0 {
        return Err(Error::Contract("metrics need at least one target domain".into()));
    }
    let mut total = 0.0;
    for t in 0..=n {
        total += r.require(n, t)?;
    }
    let acc = total / n as f64;
    let acc_mean = total / (n + 1) as f64;
    let bwt = if n >= 2 {
        let mut sum = 0.0;
        for t in 1..n {
            sum += r.require(n, t)? - r.require(t, t)?;
        }
        Some(sum / (n - 1) as f64)
    } else {
        None
    };
    Ok(Metrics { acc, acc_mean, bwt })
}

/// Fraction of argmax predictions equal to the label.
pub fn accuracy(params: &ModelParams, test: &[LabeledPoint]) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::Degenerate("empty test set".into()));
    }
    let mut correct = 0usize;
    for p in test {
        if params.predict(&p.x)? == p.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / test.len() as f64)
}

/// One accuracy per test set, in order.
pub fn evaluate(params: &ModelParams, test_sets: &[&[LabeledPoint]]) -> Result<Vec<f64>> {
    test_sets.iter().map(|t| accuracy(params, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hand_evaluated_case() {
        let mut r = AccuracyMatrix::new(2);
        r.set(1, 1, 0.85).unwrap();
        r.set_row(2, &[0.9, 0.8, 0.7]).unwrap();
        let m = compute_metrics(&r).unwrap();
        assert_abs_diff_eq!(m.acc, 1.2, epsilon = 1e-15);
        assert_abs_diff_eq!(m.bwt.unwrap(), -0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(m.acc_mean, 0.8, epsilon = 1e-15);
    }

    #[test]
    fn constant_matrix() {
        for n in 2..6 {
            let mut r = AccuracyMatrix::new(n);
            for t in 0..=n {
                for j in 0..=t {
                    r.set(t, j, 0.6).unwrap();
                }
            }
            let m = compute_metrics(&r).unwrap();
            assert_abs_diff_eq!(m.acc, 0.6 * (n + 1) as f64 / n as f64, epsilon = 1e-12);
            assert_eq!(m.bwt, Some(0.0));
        }
    }

    #[test]
    fn no_forgetting_gives_zero_bwt() {
        let mut r = AccuracyMatrix::new(3);
        let diag = [0.9, 0.7, 0.6, 0.5];
        for t in 0..=3 {
            r.set(t, t, diag[t]).unwrap();
        }
        r.set_row(3, &[0.95, 0.7, 0.6, 0.5]).unwrap();
        assert_eq!(compute_metrics(&r).unwrap().bwt, Some(0.0));
    }

    #[test]
    fn missing_entries_and_single_target() {
        let mut r = AccuracyMatrix::new(2);
        r.set_row(2, &[0.9, 0.8, 0.7]).unwrap();
        assert!(matches!(compute_metrics(&r), Err(Error::Contract(_))));

        let mut one = AccuracyMatrix::new(1);
        one.set_row(1, &[0.5, 0.7]).unwrap();
        let m = compute_metrics(&one).unwrap();
        assert_eq!(m.bwt, None);
        assert_abs_diff_eq!(m.acc, 1.2, epsilon = 1e-15);
        assert!(r.set(0, 0, 1.5).is_err());
        assert!(r.set(3, 0, 0.5).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut r = AccuracyMatrix::new(1);
        r.set(0, 0, 1.0).unwrap();
        r.set_row(1, &[0.5, 0.25]).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,d0,d1\n0,1,\n1,0.5,0.25\n");
    }

    fn constant_classifier(num_classes: usize, favored: usize) -> ModelParams {
        let cfg = ModelConfig::new(2, num_classes);
        let mut p = ModelParams::zeros(cfg).unwrap();
        let (_, b) = p.layer_mut(4);
        b[favored] = 1.0;
        p
    }

    #[test]
    fn constant_classifier_on_balanced_set() {
        let p = constant_classifier(4, 2);
        let test: Vec<LabeledPoint> = (0..40)
            .map(|i| LabeledPoint {
                x: vec![i as f64, -(i as f64)],
                label: i % 4,
            })
            .collect();
        assert_abs_diff_eq!(accuracy(&p, &test).unwrap(), 0.25);
        assert!(matches!(accuracy(&p, &[]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn ties_go_to_lowest_class_and_manual_count() {
        let p = ModelParams::zeros(ModelConfig::new(2, 3)).unwrap();
        assert_eq!(p.predict(&[1.0, 1.0]).unwrap(), 0);
        let test = vec![
            LabeledPoint { x: vec![0.0, 0.0], label: 0 },
            LabeledPoint { x: vec![1.0, 0.0], label: 1 },
            LabeledPoint { x: vec![0.0, 1.0], label: 0 },
            LabeledPoint { x: vec![2.0, 2.0], label: 2 },
            LabeledPoint { x: vec![3.0, 2.0], label: 0 },
        ];
        // all predictions are class 0: 3 of 5 correct
        let accs = evaluate(&p, &[&test, &test[..2]]).unwrap();
        assert_abs_diff_eq!(accs[0], 0.6);
        assert_abs_diff_eq!(accs[1], 0.5);
    }
}
