use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Curve {
    pub fn new(label: impl Into<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "curve needs matching x/y of length >= 2, got {} and {}",
                x.len(),
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("curve x must be strictly increasing".into()));
        }
        Ok(Self { label: label.into(), x, y })
    }

    /// Linear interpolation at `x`, clamped to the end points.
    pub fn at(&self, x: f64) -> f64 {
        let i = self.x.partition_point(|&v| v < x);
        if i == 0 {
            return self.y[0];
        }
        if i == self.x.len() {
            return self.y[i - 1];
        }
        let (x0, x1) = (self.x[i - 1], self.x[i]);
        let t = (x - x0) / (x1 - x0);
        self.y[i - 1] + t * (self.y[i] - self.y[i - 1])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y\n");
        for (x, y) in self.x.iter().zip(&self.y) {
            out.push_str(&format!("{x},{y}\n"));
        }
        out
    }
}

/// Trapezoid integral of `y` over `x`, divided by the x-range.
pub fn curve_auc(c: &Curve) -> f64 {
    let area: f64 = c
        .x
        .windows(2)
        .zip(c.y.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum();
    area / (c.x[c.x.len() - 1] - c.x[0])
}

fn truth<T: Copy>(flags: &[Option<T>], order: &[usize], what: &str) -> Result<Vec<T>> {
    order
        .iter()
        .map(|&i| {
            flags
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::MissingTruthFlags(format!("item {i} has no {what} flag")))
        })
        .collect()
}

/// Share of uncorrupted items among the selected ones, selecting from the
/// least-noisy end of a most-noise-first ranking: `y(j/n)` covers the last
/// `j` ranked items.
pub fn kept_useful_curve(label: &str, order: &[usize], corrupted: &[Option<bool>]) -> Result<Curve> {
    let flags = truth(corrupted, order, "is_corrupted")?;
    let n = flags.len();
    if n < 2 {
        return Err(Error::InvalidArgument("kept-useful curve needs at least two items".into()));
    }
    let mut useful = 0usize;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for (j, &bad) in flags.iter().rev().enumerate() {
        useful += usize::from(!bad);
        x.push((j + 1) as f64 / n as f64);
        y.push(useful as f64 / (j + 1) as f64);
    }
    Curve::new(label, x, y)
}

/// Rejection grid `0, 0.01, ..., 0.99`; at `k` the first `k n / 100` ranked
/// items are rejected.
fn rejection_curve(label: &str, bad: &[bool]) -> Result<Curve> {
    let n = bad.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    // suffix[r] = bad items among order[r..]
    let mut suffix = vec![0usize; n + 1];
    for r in (0..n).rev() {
        suffix[r] = suffix[r + 1] + usize::from(bad[r]);
    }
    let mut x = Vec::with_capacity(100);
    let mut y = Vec::with_capacity(100);
    for k in 0..100 {
        let rejected = k * n / 100;
        let kept = n - rejected;
        x.push(k as f64 / 100.0);
        y.push(suffix[rejected] as f64 / kept as f64);
    }
    Curve::new(label, x, y)
}

/// Accuracy of the retained items after rejecting in ranking order. OOD
/// items never count as correct.
pub fn accuracy_rejection_curve(
    label: &str,
    order: &[usize],
    predicted: &[usize],
    labels: &[Option<usize>],
    is_ood: &[Option<bool>],
) -> Result<Curve> {
    let wrong: Vec<bool> = order
        .iter()
        .map(|&i| {
            if is_ood.get(i).copied().flatten() == Some(true) {
                return Ok(true);
            }
            let label = labels
                .get(i)
                .copied()
                .flatten()
                .ok_or_else(|| Error::MissingTruthFlags(format!("item {i} has no true_label")))?;
            Ok(predicted[i] != label)
        })
        .collect::<Result<_>>()?;
    let mut c = rejection_curve(label, &wrong)?;
    for v in &mut c.y {
        *v = 1.0 - *v;
    }
    Ok(c)
}

/// Fraction of retained items that are OOD after rejecting in ranking order.
pub fn ood_rejection_curve(label: &str, order: &[usize], is_ood: &[Option<bool>]) -> Result<Curve> {
    rejection_curve(label, &truth(is_ood, order, "is_ood")?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn auc_basics() {
        let flat = Curve::new("", vec![0.0, 0.5, 1.0], vec![1.0; 3]).unwrap();
        assert_abs_diff_eq!(curve_auc(&flat), 1.0, epsilon = 1e-15);
        let diag = Curve::new("", vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(curve_auc(&diag), 0.5, epsilon = 1e-15);
        assert!(Curve::new("", vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(Curve::new("", vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn kept_useful_ideal_ranking() {
        // 10 items, the first ranked one is the only corrupted
        let order: Vec<usize> = (0..10).collect();
        let mut flags = vec![Some(false); 10];
        flags[0] = Some(true);
        let c = kept_useful_curve("ideal", &order, &flags).unwrap();
        for (x, y) in c.x.iter().zip(&c.y) {
            if *x <= 0.9 + 1e-12 {
                assert_eq!(*y, 1.0);
            } else {
                assert_abs_diff_eq!(*y, 0.9, epsilon = 1e-12);
            }
        }
        // hand trapezoid over x = 0.1..1.0: eight unit panels and one from 1.0 to 0.9
        let expected = (0.1 * 8.0 + 0.1 * 0.95) / 0.9;
        assert_abs_diff_eq!(curve_auc(&c), expected, epsilon = 1e-12);
        assert!(matches!(
            kept_useful_curve("", &order, &[None; 10]),
            Err(Error::MissingTruthFlags(_))
        ));
    }

    #[test]
    fn accuracy_rejection_basics() {
        let order: Vec<usize> = (0..10).collect();
        let labels: Vec<Option<usize>> = (0..10).map(|i| Some(i % 3)).collect();
        let predicted: Vec<usize> = (0..10).map(|i| i % 3).collect();
        let c = accuracy_rejection_curve("", &order, &predicted, &labels, &[None; 10]).unwrap();
        assert!(c.y.iter().all(|&y| y == 1.0));
        assert_eq!(c.x.len(), 100);

        // two misclassified items ranked first: curve reaches 1.0 at x = 0.2
        let mut wrong = predicted.clone();
        wrong[0] = 1;
        wrong[1] = 2;
        let c = accuracy_rejection_curve("", &order, &wrong, &labels, &[None; 10]).unwrap();
        assert_abs_diff_eq!(c.y[0], 0.8, epsilon = 1e-12);
        assert!(c.y.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(c.at(0.2), 1.0);

        // OOD counts as wrong even with a matching prediction
        let mut ood = vec![Some(false); 10];
        ood[5] = Some(true);
        let c = accuracy_rejection_curve("", &order, &predicted, &labels, &ood).unwrap();
        assert_abs_diff_eq!(c.y[0], 0.9, epsilon = 1e-12);
        // unlabeled OOD item is fine, unlabeled in-distribution item is not
        let mut partial = labels.clone();
        partial[5] = None;
        assert!(accuracy_rejection_curve("", &order, &predicted, &partial, &ood).is_ok());
        partial[4] = None;
        assert!(matches!(
            accuracy_rejection_curve("", &order, &predicted, &partial, &ood),
            Err(Error::MissingTruthFlags(_))
        ));
    }

    #[test]
    fn ood_rejection_geometry() {
        let order: Vec<usize> = (0..10).collect();
        let c = ood_rejection_curve("", &order, &[Some(false); 10]).unwrap();
        assert!(c.y.iter().all(|&y| y == 0.0));
        let flags: Vec<Option<bool>> = (0..10).map(|i| Some(i < 4)).collect();
        let c = ood_rejection_curve("", &order, &flags).unwrap();
        assert_abs_diff_eq!(c.y[0], 0.4, epsilon = 1e-12);
        assert!(c.y.windows(2).all(|w| w[1] <= w[0]));
        for (x, y) in c.x.iter().zip(&c.y) {
            if *x >= 0.4 {
                assert_eq!(*y, 0.0);
            }
        }
    }

    #[test]
    fn interpolation() {
        let c = Curve::new("", vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(c.at(-1.0), 0.0);
        assert_eq!(c.at(0.5), 1.0);
        assert_eq!(c.at(1.5), 1.0);
        assert_eq!(c.at(3.0), 0.0);
        assert_eq!(c.to_csv(), "x,y\n0,0\n1,2\n2,0\n");
    }
}
