//! Accuracy bookkeeping over a task sequence.
//!
//! The accuracy matrix is lower-triangular: entry `(i, j)` is the accuracy
//! on task `i`'s test set after training task `j`, for `i <= j` (1-based in
//! the math, 0-based in the API). Final and cumulative averages, forgetting
//! and plasticity all derive from it.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    /// `cols[j]` holds accuracies on tasks `0..=j` after training task `j`.
    cols: Vec<Vec<f64>>,
}

impl Default for AccuracyMatrix {
    fn default() -> Self {
        Self::new()
    }
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self { cols: Vec::new() }
    }

    /// Append the evaluation column after training one more task; must hold
    /// one entry per task seen so far, each in [0, 1].
    pub fn push_column(&mut self, accuracies: Vec<f64>) -> Result<()> {
        if accuracies.len() != self.cols.len() + 1 {
            return Err(Error::Protocol(format!(
                "column after task {} must have {} entries, got {}",
                self.cols.len() + 1,
                self.cols.len() + 1,
                accuracies.len()
            )));
        }
        if accuracies.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
            return Err(Error::InvalidInput("accuracy outside [0, 1]".into()));
        }
        self.cols.push(accuracies);
        Ok(())
    }

    /// Number of tasks recorded.
    pub fn t(&self) -> usize {
        self.cols.len()
    }

    /// Accuracy on task `i` after training task `j`, 0-based, `i <= j`.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cols[j][i]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    /// Final average accuracy: mean over tasks of the last column.
    pub fn faa(&self) -> f64 {
        let t = self.t();
        if t == 0 {
            return 0.0;
        }
        self.cols[t - 1].iter().sum::<f64>() / t as f64
    }

    /// Cumulative average accuracy: mean over steps of each step's average
    /// accuracy across the tasks seen by then.
    pub fn caa(&self) -> f64 {
        let t = self.t();
        if t == 0 {
            return 0.0;
        }
        let per_step: f64 =
            self.cols.iter().map(|col| col.iter().sum::<f64>() / col.len() as f64).sum();
        per_step / t as f64
    }

    /// Mean gap between each task's best historical accuracy and its final
    /// accuracy, over all but the last task; zero for a single task.
    pub fn forgetting(&self) -> f64 {
        let t = self.t();
        if t <= 1 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..t - 1 {
            let best = (i..t).map(|j| self.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            total += best - self.get(i, t - 1);
        }
        total / (t - 1) as f64
    }

    /// Mean current-task accuracy `a[t][t]` over the run.
    pub fn plasticity(&self) -> f64 {
        let t = self.t();
        if t == 0 {
            return 0.0;
        }
        (0..t).map(|j| self.get(j, j)).sum::<f64>() / t as f64
    }

    /// CSV with one line per column: `after_task,acc_task_1,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("after_task,accuracies\n");
        for (j, col) in self.cols.iter().enumerate() {
            let vals: Vec<String> = col.iter().map(|v| format!("{v}")).collect();
            s.push_str(&format!("{},{}\n", j + 1, vals.join(",")));
        }
        s
    }
}

/// Scalar summary of one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub faa: f64,
    pub caa: f64,
    pub forgetting: f64,
    pub plasticity: f64,
}

impl RunMetrics {
    pub fn from_matrix(m: &AccuracyMatrix) -> Self {
        Self { faa: m.faa(), caa: m.caa(), forgetting: m.forgetting(), plasticity: m.plasticity() }
    }
}

/// Per-alpha deltas against a baseline alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePoint {
    pub alpha: f64,
    pub relative_forgetting: f64,
    pub relative_plasticity: f64,
}

/// Difference of forgetting and plasticity from the run at
/// `baseline_alpha`; errors if the baseline is missing.
pub fn relative_curves(
    per_alpha: &[(f64, RunMetrics)],
    baseline_alpha: f64,
) -> Result<Vec<RelativePoint>> {
    let base = per_alpha
        .iter()
        .find(|(a, _)| *a == baseline_alpha)
        .map(|(_, m)| *m)
        .ok_or_else(|| {
            Error::InvalidInput(format!("baseline alpha {baseline_alpha} not among the runs"))
        })?;
    Ok(per_alpha
        .iter()
        .map(|(alpha, m)| RelativePoint {
            alpha: *alpha,
            relative_forgetting: m.forgetting - base.forgetting,
            relative_plasticity: m.plasticity - base.plasticity,
        })
        .collect())
}

/// Spearman rank correlation with average ranks on ties.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let rx = ranks(xs);
    let ry = ranks(ys);
    let n = xs.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for i in 0..xs.len() {
        let dx = rx[i] - mx;
        let dy = ry[i] - my;
        cov += dx * dy;
        vx += dx * dx;
        vy += dy * dy;
    }
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx.sqrt() * vy.sqrt())
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].partial_cmp(&xs[b]).unwrap());
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}
