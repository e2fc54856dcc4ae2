use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};

use super::Matrix;

/// A collection of named tensors that can be visited in a fixed order.
///
/// Gradients are stored in the same type as the parameters they belong to,
/// so `tensors()` of a parameter set and of its gradient line up entry by entry.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &Matrix)>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)>;
}

pub type NamedTensors = Vec<(String, Matrix)>;

impl Parameters for NamedTensors {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        self.iter().map(|(n, m)| (n.clone(), m)).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        self.iter_mut().map(|(n, m)| (n.clone(), m)).collect()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_param: (String, usize),
    pub eps: f64,
    pub checked: usize,
}

/// Compares analytic gradients against central differences at `samples`
/// randomly chosen entries.
///
/// A tensor is chosen uniformly, then an entry within it, so small tensors
/// such as norm gains are covered as often as embeddings. Relative error
/// uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
pub fn finite_diff_check<P, F, R>(
    mut loss_fn: F,
    params: &mut P,
    analytic: &P,
    eps: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradCheckReport>
where
    P: Parameters,
    F: FnMut(&P) -> f64,
    R: Rng + ?Sized,
{
    assert!(eps > 0.0, "eps must be positive");
    let grads: Vec<(String, Vec<f64>)> = analytic
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.data().to_vec()))
        .collect();
    let shapes: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(n, m)| (n, m.len()))
        .collect();
    if shapes.len() != grads.len()
        || shapes.iter().zip(&grads).any(|((_, len), (_, g))| *len != g.len())
    {
        return Err(Error::Shape {
            op: "finite_diff_check",
            left: (shapes.len(), 0),
            right: (grads.len(), 0),
        });
    }
    let candidates: Vec<usize> = (0..shapes.len()).filter(|&i| shapes[i].1 > 0).collect();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_param: (String::new(), 0),
        eps,
        checked: 0,
    };
    if candidates.is_empty() {
        return Ok(report);
    }

    for _ in 0..samples {
        let t = candidates[rng.random_range(0..candidates.len())];
        let idx = rng.random_range(0..shapes[t].1);

        let original = params.tensors_mut()[t].1.data()[idx];
        params.tensors_mut()[t].1.data_mut()[idx] = original + eps;
        let plus = loss_fn(params);
        params.tensors_mut()[t].1.data_mut()[idx] = original - eps;
        let minus = loss_fn(params);
        params.tensors_mut()[t].1.data_mut()[idx] = original;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at {}[{idx}]", shapes[t].0)));
        }

        let numeric = (plus - minus) / (2.0 * eps);
        let exact = grads[t].1[idx];
        let denom = exact.abs().max(numeric.abs()).max(1e-8);
        let rel = (exact - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_err || report.worst_param.0.is_empty() {
            report.max_rel_err = rel.max(report.max_rel_err);
            report.worst_param = (shapes[t].0.clone(), idx);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let theta = Matrix::random_normal(4, 4, 1.0, &mut rng);
        let grads: NamedTensors = vec![("theta".into(), theta.clone())];
        let mut params: NamedTensors = vec![("theta".into(), theta)];
        let report = finite_diff_check(
            |p: &NamedTensors| 0.5 * p[0].1.sum_squares(),
            &mut params,
            &grads,
            1e-5,
            32,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_err < 1e-8, "{report:?}");
        assert_eq!(report.checked, 32);
    }

    #[test]
    fn constant_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grads: NamedTensors = vec![("w".into(), Matrix::zeros(2, 3))];
        let mut params: NamedTensors = vec![("w".into(), Matrix::filled(2, 3, 1.5))];
        let report =
            finite_diff_check(|_: &NamedTensors| 3.0, &mut params, &grads, 1e-5, 10, &mut rng).unwrap();
        assert_eq!(report.max_rel_err, 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grads: NamedTensors = vec![("w".into(), Matrix::zeros(1, 1))];
        let mut params: NamedTensors = vec![("w".into(), Matrix::zeros(1, 1))];
        let err = finite_diff_check(|_: &NamedTensors| f64::NAN, &mut params, &grads, 1e-5, 1, &mut rng)
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn params_restored_after_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let theta = Matrix::random_normal(3, 3, 1.0, &mut rng);
        let grads: NamedTensors = vec![("t".into(), theta.clone())];
        let mut params: NamedTensors = vec![("t".into(), theta.clone())];
        finite_diff_check(|p: &NamedTensors| 0.5 * p[0].1.sum_squares(), &mut params, &grads, 1e-3, 20, &mut rng)
            .unwrap();
        assert_eq!(params[0].1, theta);
    }
}
