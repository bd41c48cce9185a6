//! Matrix exponential and its action on vectors.

use nalgebra::DMatrix;

/// Dense operators above this dimension are never exponentiated directly.
pub const DENSE_LIMIT: usize = 4096;

/// `e^{A}` by scaling and squaring with Pade approximants.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return a.clone();
    }
    a.exp()
}

/// `e^{tA} v` for an operator known only through its action, by scaled
/// truncated Taylor series. `norm_bound` must bound the induced max-norm of `A`.
pub fn expm_action(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    norm_bound: f64,
    t: f64,
    v: &[f64],
) -> Vec<f64> {
    let scale = (t.abs() * norm_bound).ceil().max(1.0) as usize;
    let h = t / scale as f64;
    let mut x = v.to_vec();
    for _ in 0..scale {
        let mut term = x.clone();
        let mut acc = x.clone();
        for k in 1..=60 {
            term = apply(&term);
            let c = h / k as f64;
            term.iter_mut().for_each(|y| *y *= c);
            let tn = term.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            acc.iter_mut().zip(&term).for_each(|(a, b)| *a += b);
            let an = acc.iter().fold(0.0f64, |m, y| m.max(y.abs()));
            if tn <= 1e-17 * an.max(1e-300) {
                break;
            }
        }
        x = acc;
    }
    x
}
