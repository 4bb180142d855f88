use crate::error::{Error, Result};

/// Result of a resampling study of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceProbe {
    /// Mean over coordinates of the unbiased per-coordinate variance.
    pub variance: f64,
    /// Standard error of `variance`, from the spread of batch estimates.
    pub std_error: f64,
    /// Mean over resamples of the estimator.
    pub mean: Vec<f64>,
    /// Per-coordinate standard error of `mean`.
    pub mean_std_error: Vec<f64>,
    pub mean_ess: f64,
    pub resamples: usize,
}

/// Per-coordinate running mean and sum of squared deviations.
struct Moments {
    n: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        self.n += 1.0;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / self.n;
            *s += d * (v - *m);
        }
    }

    fn merge(&mut self, other: &Moments) {
        let n = self.n + other.n;
        if other.n == 0.0 {
            return;
        }
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * other.n / n;
            self.m2[i] += other.m2[i] + d * d * self.n * other.n / n;
        }
        self.n = n;
    }

    fn mean_variance(&self) -> f64 {
        if self.mean.is_empty() {
            return 0.0;
        }
        self.m2.iter().sum::<f64>() / (self.n - 1.0) / self.mean.len() as f64
    }
}

const BATCHES: usize = 20;

/// Runs `draw(r)` for `r = 0..resamples`; each call returns one gradient
/// estimate and the ESS of its weights. Draws must be independent, typically
/// by seeding each from `r`.
pub fn gradient_variance_probe<F>(resamples: usize, mut draw: F) -> Result<VarianceProbe>
where
    F: FnMut(u64) -> Result<(Vec<f64>, f64)>,
{
    if resamples < 2 {
        return Err(Error::domain("a variance probe needs at least 2 resamples"));
    }
    let batches = BATCHES.min(resamples / 2).max(1);
    let mut total: Option<Moments> = None;
    let mut batch_variances = Vec::with_capacity(batches);
    let mut ess_sum = 0.0;
    let mut r = 0u64;
    for b in 0..batches {
        let size = resamples / batches + usize::from(b < resamples % batches);
        let mut moments: Option<Moments> = None;
        for _ in 0..size {
            let (grad, ess) = draw(r)?;
            r += 1;
            ess_sum += ess;
            let m = moments.get_or_insert_with(|| Moments::new(grad.len()));
            if grad.len() != m.mean.len() {
                return Err(Error::Dimension {
                    context: "probe gradient",
                    expected: m.mean.len(),
                    actual: grad.len(),
                });
            }
            m.push(&grad);
        }
        let m = moments.expect("every batch has at least two draws");
        batch_variances.push(m.mean_variance());
        match total.as_mut() {
            Some(t) => t.merge(&m),
            None => total = Some(m),
        }
    }
    let total = total.expect("at least one batch");
    let k = batch_variances.len() as f64;
    let std_error = if batch_variances.len() > 1 {
        let mu = batch_variances.iter().sum::<f64>() / k;
        let s2 = batch_variances.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (k - 1.0);
        (s2 / k).sqrt()
    } else {
        f64::NAN
    };
    let n = total.n;
    Ok(VarianceProbe {
        variance: total.mean_variance(),
        std_error,
        mean_std_error: total.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect(),
        mean: total.mean,
        mean_ess: ess_sum / n,
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use rand::Rng;

    #[test]
    fn constant_estimator_has_zero_variance() {
        let p = gradient_variance_probe(100, |_| Ok((vec![0.3, -1.7], 2.0))).unwrap();
        assert!(p.variance.abs() < 1e-16);
        assert_eq!(p.mean_ess, 2.0);
        assert!(gradient_variance_probe(1, |_| Ok((vec![0.0], 1.0))).is_err());
    }

    #[test]
    fn recovers_known_variance() {
        // coordinates uniform on [0,1) and [0,2): variances 1/12 and 4/12
        let draw = |r: u64| {
            let mut rng = substream(3, "probe", r);
            Ok((vec![rng.random::<f64>(), 2.0 * rng.random::<f64>()], 1.0))
        };
        let p = gradient_variance_probe(20_000, draw).unwrap();
        let truth = (1.0 / 12.0 + 4.0 / 12.0) / 2.0;
        assert!((p.variance - truth).abs() < 4.0 * p.std_error, "{p:?}");
        let q = gradient_variance_probe(40_000, draw).unwrap();
        assert!((p.variance - q.variance).abs() < 3.0 * p.std_error);
    }

    #[test]
    fn merged_moments_equal_two_pass() {
        let xs: Vec<f64> = (0..37).map(|i| ((i * 7919) % 31) as f64 * 0.1).collect();
        let p = gradient_variance_probe(xs.len(), |r| Ok((vec![xs[r as usize]], 1.0))).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0);
        assert!((p.variance - var).abs() < 1e-12);
        assert!((p.mean[0] - mean).abs() < 1e-12);
    }
}
