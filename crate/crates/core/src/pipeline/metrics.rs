//! Evidence-contribution metrics, both measured with base-context embeddings.

use crate::error::{FclError, Result};
use crate::numerics::dot;

/// One competitor `y` of the predicted class `y_hat`.
#[derive(Debug, Clone, Copy)]
pub struct Competitor<'a> {
    /// `tau_y(delta_0)`.
    pub text: &'a [f64],
    /// `z_com` for the pair `(y_hat, y)`.
    pub common: &'a [f64],
}

/// `sum max(0, <z_com, tau_yhat - tau_y>) / sum max(eps, <z, tau_yhat - tau_y>)`.
pub fn compute_ecec(z: &[f64], predicted_text: &[f64], competitors: &[Competitor<'_>], epsilon: f64) -> Result<f64> {
    if competitors.is_empty() {
        return Err(FclError::Degenerate("ECEC needs at least one competitor".into()));
    }
    if !(epsilon > 0.0) {
        return Err(FclError::invalid("epsilon_ecec", "must be > 0"));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for c in competitors {
        let diff: Vec<f64> = predicted_text.iter().zip(c.text).map(|(a, b)| a - b).collect();
        num += dot(c.common, &diff).max(0.0);
        den += dot(z, &diff).max(epsilon);
    }
    Ok(num / den)
}

/// Mean of `<z_uniq_(yhat, y), tau_yhat>` over competitors.
pub fn compute_euec(predicted_text: &[f64], unique_embeddings: &[Vec<f64>]) -> Result<f64> {
    if unique_embeddings.is_empty() {
        return Err(FclError::Degenerate("EUEC needs at least one competitor".into()));
    }
    let sum: f64 = unique_embeddings.iter().map(|u| dot(u, predicted_text)).sum();
    Ok((sum / unique_embeddings.len() as f64).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ecec_examples() {
        // tau_yhat - tau_y = (1, 0, 0); numerator 0.2, denominator 0.5.
        let t_hat = [1.0, 0.0, 0.0];
        let t_y = [0.0, 0.0, 0.0];
        let comp = [Competitor {
            text: &t_y,
            common: &[0.2, 0.7, 0.1],
        }];
        let v = compute_ecec(&[0.5, 0.3, 0.9], &t_hat, &comp, 1e-6).unwrap();
        assert!((v - 0.4).abs() < 1e-15);

        let orth = [Competitor {
            text: &t_y,
            common: &[0.0, 1.0, 0.0],
        }];
        assert_eq!(compute_ecec(&[0.5, 0.3, 0.9], &t_hat, &orth, 1e-6).unwrap(), 0.0);

        // Every denominator term non-positive: floored at (K - 1) eps.
        let comps = [comp[0], comp[0]];
        let v = compute_ecec(&[-1.0, 0.0, 0.0], &t_hat, &comps, 1e-6).unwrap();
        assert!((v - 0.4 / 2e-6).abs() < 1e-6);
        assert!(v.is_finite());
        assert!(compute_ecec(&[1.0], &[1.0], &[], 1e-6).is_err());
    }

    #[test]
    fn euec_examples() {
        let t = [0.6, 0.8];
        assert!((compute_euec(&t, &[t.to_vec(), t.to_vec()]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(compute_euec(&t, &[vec![0.8, -0.6]]).unwrap(), 0.0);
        let e = compute_euec(&[1.0, 0.0], &[vec![0.3, 0.9], vec![0.5, 0.1]]).unwrap();
        assert!((e - 0.4).abs() < 1e-15);
        assert!(compute_euec(&t, &[]).is_err());
    }
}
