use super::tensor::Tensor;
use super::EngineError;

/// Central-difference gradient of `f` at `x`:
/// `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` for every coordinate in
/// `coords` (all coordinates when `None`). Coordinates not visited are zero.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64, coords: Option<&[usize]>) -> Result<Vec<f64>, EngineError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0) {
        return Err(EngineError::BadEpsilon(eps));
    }
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    let all: Vec<usize>;
    let coords = match coords {
        Some(c) => c,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    for &i in coords {
        if i >= x.len() {
            return Err(EngineError::IndexOutOfRange { index: i, len: x.len() });
        }
        let orig = probe[i];
        probe[i] = orig + eps;
        let up = f(&probe);
        probe[i] = orig - eps;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(EngineError::NonFinite { op: "finite_diff_grad" });
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

/// Total L2 norm across every gradient tensor.
pub fn grad_l2_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}
