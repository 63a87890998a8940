use super::Tensor;

/// Central finite-difference gradient of a scalar function of several tensors.
///
/// Each entry of each input is perturbed by `±step` in turn; `f` sees the full
/// input list every time.
pub fn central_difference(
    inputs: &[Tensor],
    step: f64,
    mut f: impl FnMut(&[Tensor]) -> f64,
) -> Vec<Tensor> {
    let mut work: Vec<Tensor> = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[t].len()];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = inputs[t].data()[i];
            work[t].data_mut()[i] = orig + step;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - step;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            *g = (plus - minus) / (2.0 * step);
        }
        out.push(Tensor::from_parts(inputs[t].rows(), inputs[t].cols(), grad));
    }
    out
}

/// `max_i |a_i - b_i| / max(1, |a_i|, |b_i|)`.
///
/// The unit floor keeps entries whose true gradient is (near) zero from
/// dominating through pure finite-difference noise.
pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shape mismatch");
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}
