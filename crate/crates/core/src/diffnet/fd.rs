use crate::diffnet::ParameterVector;
use crate::error::{Error, Result};

/// Central-difference gradient of `loss` at the values of `params`.
pub fn finite_difference_gradient<F>(mut loss: F, params: &ParameterVector, step: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::domain(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut point = params.values().to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let original = point[i];
        point[i] = original + step;
        let up = loss(&point);
        point[i] = original - step;
        let down = loss(&point);
        point[i] = original;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss while perturbing coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * step));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::LayoutBuilder;

    fn params(values: &[f64]) -> ParameterVector {
        let mut b = LayoutBuilder::new();
        b.push("p", values.len());
        let mut p = b.build();
        p.values_mut().copy_from_slice(values);
        p
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let g = finite_difference_gradient(|_| 3.5, &params(&[1.0, -2.0]), 1e-5).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn quadratic_gradient_is_identity() {
        let p = params(&[0.3, -1.2, 4.0]);
        let g = finite_difference_gradient(|v| 0.5 * v.iter().map(|x| x * x).sum::<f64>(), &p, 1e-4).unwrap();
        for (gi, vi) in g.iter().zip(p.values()) {
            assert!((gi - vi).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_step_and_non_finite_loss() {
        let p = params(&[1.0]);
        assert!(finite_difference_gradient(|_| 0.0, &p, 0.0).is_err());
        assert!(matches!(
            finite_difference_gradient(|_| f64::NAN, &p, 1e-5),
            Err(Error::Numerical(_))
        ));
    }
}
