//! Confusion matrices, balanced accuracy and the multiclass MCC (R_K).

use super::ClassifyError;

/// `conf[true][pred]` counts.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; k]; k];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        c[t][p] += 1;
    }
    c
}

pub fn recalls(conf: &[Vec<usize>]) -> Result<Vec<f64>, ClassifyError> {
    conf.iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            if n == 0 {
                Err(ClassifyError::EmptyTrueClass(i))
            } else {
                Ok(row[i] as f64 / n as f64)
            }
        })
        .collect()
}

/// Mean of per-class recalls.
pub fn balanced_accuracy(conf: &[Vec<usize>]) -> Result<f64, ClassifyError> {
    let r = recalls(conf)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

/// Mean recall over the classes that actually occur in `conf`.
pub fn balanced_accuracy_present(conf: &[Vec<usize>]) -> f64 {
    let mut sum = 0.0;
    let mut k = 0;
    for (i, row) in conf.iter().enumerate() {
        let n: usize = row.iter().sum();
        if n > 0 {
            sum += row[i] as f64 / n as f64;
            k += 1;
        }
    }
    if k == 0 {
        0.0
    } else {
        sum / k as f64
    }
}

/// Gorodkin's R_K. A zero denominator yields 0.
pub fn mcc_multiclass(conf: &[Vec<usize>]) -> f64 {
    let k = conf.len();
    let s: f64 = conf.iter().flatten().map(|&v| v as f64).sum();
    let c: f64 = (0..k).map(|i| conf[i][i] as f64).sum();
    let t: Vec<f64> = conf.iter().map(|r| r.iter().sum::<usize>() as f64).collect();
    let p: Vec<f64> = (0..k).map(|j| conf.iter().map(|r| r[j]).sum::<usize>() as f64).collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    let den = ((s * s - pp) * (s * s - tt)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (c * s - pt) / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balanced_accuracy_examples() {
        let conf = vec![vec![4, 0, 0], vec![1, 1, 0], vec![0, 1, 3]];
        assert_eq!(balanced_accuracy(&conf).unwrap(), 0.75);
        let diag = vec![vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 2]];
        assert_eq!(balanced_accuracy(&diag).unwrap(), 1.0);
        assert!(balanced_accuracy(&[vec![1, 0], vec![0, 0]]).is_err());
    }

    #[test]
    fn mcc_examples() {
        let diag = vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]];
        assert_eq!(mcc_multiclass(&diag), 1.0);
        let one = vec![vec![3, 0, 0], vec![4, 0, 0], vec![2, 0, 0]];
        assert_eq!(mcc_multiclass(&one), 0.0);
        // c = 8, s = 12, t = p = (4, 4, 4): (96 - 48) / (144 - 48)
        let m = vec![vec![3, 1, 0], vec![1, 2, 1], vec![0, 1, 3]];
        assert!((mcc_multiclass(&m) - 0.5).abs() < 1e-15);
    }
}
