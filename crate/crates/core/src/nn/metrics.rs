use serde::{Deserialize, Serialize};

use super::NnError;

/// Offline regression quality. `r2` is `None` when the targets have zero
/// variance, where the coefficient of determination is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub n: usize,
    pub mse: f64,
    pub r2: Option<f64>,
}

impl RegressionMetrics {
    pub fn r2_display(&self) -> String {
        match self.r2 {
            Some(r) => format!("{r:.4}"),
            None => "undefined".to_string(),
        }
    }
}

pub fn regression_metrics(predictions: &[f64], targets: &[f64]) -> Result<RegressionMetrics, NnError> {
    if targets.is_empty() {
        return Err(NnError::EmptyData("evaluation set"));
    }
    if predictions.len() != targets.len() {
        return Err(NnError::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let ss_res: f64 = predictions.iter().zip(targets).map(|(p, y)| (y - p) * (y - p)).sum();
    let ss_tot: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    Ok(RegressionMetrics {
        n: targets.len(),
        mse: ss_res / n,
        r2: (ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_fit() {
        let y = [0.1, -0.3, 0.7];
        let m = regression_metrics(&y, &y).unwrap();
        assert_eq!((m.mse, m.r2), (0.0, Some(1.0)));
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let y = [1.0, 2.0, 3.0, 6.0];
        let m = regression_metrics(&[3.0; 4], &y).unwrap();
        assert_eq!(m.r2, Some(0.0));
        assert_eq!(m.mse, 3.5);
    }

    #[test]
    fn constant_targets_undefined() {
        let m = regression_metrics(&[0.9, 1.1], &[1.0, 1.0]).unwrap();
        assert_eq!(m.r2, None);
        assert_eq!(m.r2_display(), "undefined");
        assert!(regression_metrics(&[], &[]).is_err());
    }
}
