/// Compare an analytic gradient with central finite differences.
///
/// `f` returns the value and the analytic gradient at a point. The result is
/// the largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)` over
/// coordinates. The floor keeps round-off on exactly-zero gradients from
/// reading as a large relative error.
pub fn finite_diff_check<F>(mut f: F, x: &[f64], h: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = f(x);
    assert_eq!(analytic.len(), x.len(), "gradient length must match input");
    let mut probe = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let (fp, _) = f(&probe);
        probe[i] = x[i] - h;
        let (fm, _) = f(&probe);
        probe[i] = x[i];
        let numeric = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}
