//! Central finite differences.
//!
//! First partials use the step `max(1e-6, 1e-6·|x|)` per component. Second
//! partials are nested central differences with a fixed step of `1e-4`, which
//! keeps the roundoff term (eps/h²) near 1e-8.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// Relative (and absolute floor) step for first partials.
pub const FIRST_STEP: f64 = 1e-6;
/// Step for nested second partials.
pub const SECOND_STEP: f64 = 1e-4;

#[inline]
pub fn step_for(x: f64) -> f64 {
    FIRST_STEP.max(FIRST_STEP * x.abs())
}

/// Central-difference derivative of a scalar function of one variable.
pub fn derivative<F>(mut f: F, x: f64, h: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let fp = f(x + h)?;
    let fm = f(x - h)?;
    Ok((fp - fm) / (2.0 * h))
}

/// Central-difference gradient of a scalar field.
pub fn gradient<F>(mut f: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let mut grad = DVector::zeros(x.len());
    let mut xp = x.clone();
    for j in 0..x.len() {
        let h = step_for(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        grad[j] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

/// Central-difference Jacobian `J_ij = ∂f_i/∂x_j` with an explicit step rule.
pub fn jacobian_with<F, S>(mut f: F, x: &DVector<f64>, step: S) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
    S: Fn(f64) -> f64,
{
    let mut xp = x.clone();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let h = step(x[j]);
        xp[j] = x[j] + h;
        let fp = f(&xp)?;
        xp[j] = x[j] - h;
        let fm = f(&xp)?;
        xp[j] = x[j];
        cols.push((fp - fm) / (2.0 * h));
    }
    let rows = cols.first().map_or(0, |c| c.len());
    Ok(DMatrix::from_fn(rows, x.len(), |i, j| cols[j][i]))
}

pub fn jacobian<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    jacobian_with(f, x, step_for)
}

/// Nested central-difference Hessian with step [`SECOND_STEP`]. Symmetric by
/// construction off the diagonal.
pub fn hessian<F>(mut f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let h = SECOND_STEP;
    let mut out = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    let f0 = f(x)?;
    for i in 0..n {
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        out[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in (i + 1)..n {
            let mut eval = |si: f64, sj: f64| -> Result<f64> {
                xp[i] = x[i] + si * h;
                xp[j] = x[j] + sj * h;
                let v = f(&xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let pp = eval(1.0, 1.0)?;
            let pm = eval(1.0, -1.0)?;
            let mp = eval(-1.0, 1.0)?;
            let mm = eval(-1.0, -1.0)?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok(out)
}

/// Max-abs difference between two matrices normalized by `max(1, ‖reference‖∞)`.
pub fn relative_diff(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.amax().max(1.0);
    (a - reference).amax() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_quadratic() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let g = gradient(|v| Ok(v.dot(v) + 3.0 * v[0]), &x).unwrap();
        let expected = DVector::from_vec(vec![5.0, -4.0, 1.0]);
        assert!((g - expected).amax() < 1e-8);
    }

    #[test]
    fn jacobian_of_polar_map() {
        let x = DVector::from_vec(vec![2.0, 0.3]);
        let j = jacobian(
            |v| Ok(DVector::from_vec(vec![v[0] * v[1].cos(), v[0] * v[1].sin()])),
            &x,
        )
        .unwrap();
        let (s, c) = 0.3f64.sin_cos();
        let exact = DMatrix::from_row_slice(2, 2, &[c, -2.0 * s, s, 2.0 * c]);
        assert!(relative_diff(&j, &exact) < 1e-8);
    }

    #[test]
    fn hessian_of_cubic_is_symmetric() {
        let x = DVector::from_vec(vec![0.7, 1.3]);
        let h = hessian(|v| Ok(v[0].powi(3) * v[1] + v[1] * v[1]), &x).unwrap();
        let exact = DMatrix::from_row_slice(
            2,
            2,
            &[6.0 * 0.7 * 1.3, 3.0 * 0.49, 3.0 * 0.49, 2.0],
        );
        assert!(relative_diff(&h, &exact) < 1e-6);
        assert_eq!(h[(0, 1)], h[(1, 0)]);
    }
}
