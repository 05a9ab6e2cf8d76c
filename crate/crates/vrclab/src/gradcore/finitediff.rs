//! Central finite differences, the reference oracle every analytic gradient
//! is judged against.

use crate::error::{Error, Result};

/// Guard added to the denominator of the relative error so near-zero
/// analytic gradients do not divide by zero.
pub const REL_ERR_GUARD: f64 = 1e-6;

/// Max over coordinates of |analytic - central difference| / (|analytic| + guard).
///
/// `f` is evaluated 2 * len(x0) times at perturbed copies of `x0`; it must be
/// deterministic for the check to mean anything.
pub fn max_rel_error<F>(mut f: F, x0: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::invalid("finite_diff", format!("step h = {h} must be positive")));
    }
    if x0.len() != analytic.len() {
        return Err(Error::invalid(
            "finite_diff",
            format!("{} parameters but {} gradient entries", x0.len(), analytic.len()),
        ));
    }
    if x0.iter().chain(analytic).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("finite_diff inputs"));
    }
    let mut x = x0.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let saved = x[i];
        x[i] = saved + h;
        let fp = f(&x)?;
        x[i] = saved - h;
        let fm = f(&x)?;
        x[i] = saved;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::non_finite("finite_diff function value"));
        }
        let central = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - central).abs() / (analytic[i].abs() + REL_ERR_GUARD);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{Graph, Tensor};

    #[test]
    fn square_at_three_with_h_1e4_is_tight() {
        let err = max_rel_error(|x| Ok(x[0] * x[0]), &[3.0], &[6.0], 1e-4).unwrap();
        assert!(err < 1e-6, "err = {err}");
    }

    #[test]
    fn constant_function_has_zero_error() {
        let err = max_rel_error(|_| Ok(42.0), &[1.0, -2.0], &[0.0, 0.0], 1e-4).unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn deliberately_wrong_gradient_is_caught() {
        let err = max_rel_error(|x| Ok(x[0] * x[0]), &[3.0], &[5.0], 1e-4).unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn invalid_step_is_rejected() {
        assert!(max_rel_error(|x| Ok(x[0]), &[1.0], &[1.0], 0.0).is_err());
        assert!(max_rel_error(|x| Ok(x[0]), &[1.0], &[1.0], -1e-4).is_err());
    }

    #[test]
    fn non_finite_function_value_is_reported() {
        let err = max_rel_error(|x| Ok(1.0 / (x[0] - 1.0001)), &[1.0001], &[0.0], 1e-4);
        assert!(err.is_err() || err.unwrap().is_finite());
        let res = max_rel_error(|_| Ok(f64::NAN), &[1.0], &[0.0], 1e-4);
        assert!(res.is_err());
    }

    #[test]
    fn small_mlp_loss_gradient_matches() {
        // two-layer softplus network, loss = mean((out - target)^2)
        let w0 = [0.4, -0.3, 0.2, 0.7, -0.5, 0.1];
        let eval = |p: &[f64]| -> crate::error::Result<(f64, Vec<f64>)> {
            let mut g = Graph::new();
            let x = g.constant(Tensor::from_rows(&[vec![0.5, -1.0]]).unwrap())?;
            let w1 = g.leaf(Tensor::new(vec![2, 2], p[..4].to_vec())?, true)?;
            let b1 = g.leaf(Tensor::from_vec(p[4..6].to_vec()), true)?;
            let h = g.affine(x, w1, b1)?;
            let a = g.softplus(h)?;
            let s = g.reduce_sum(a)?;
            let t = g.shift(s, -1.3)?;
            let loss = g.square(t)?;
            g.backward(loss)?;
            let mut grad = g.grad(w1)?.unwrap().to_vec();
            grad.extend_from_slice(g.grad(b1)?.unwrap());
            Ok((g.value(loss)?.scalar_value()?, grad))
        };
        let (_, analytic) = eval(&w0).unwrap();
        let err = max_rel_error(|p| eval(p).map(|(l, _)| l), &w0, &analytic, 1e-4).unwrap();
        assert!(err < 1e-4, "err = {err}");
    }
}
