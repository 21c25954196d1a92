//! Small numerical kernels shared by the modules.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

use crate::{Error, Result};

/// Maps an angle into `(-pi, pi]`.
#[inline]
pub fn wrap_angle(x: f64) -> f64 {
    let r = x.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn neumaier_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = Neumaier::default();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Brent's bracketing root finder. `fa` and `fb` must have opposite signs
/// (or one of them vanishes). Terminates when the bracket is narrower than
/// `tol`.
pub fn brent_root<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Bracketing(format!(
            "f({a}) = {fa:e} and f({b}) = {fb:e} have the same sign"
        )));
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b)?;
    }
    Err(Error::NoConvergence {
        what: "Brent root search",
        detail: format!("bracket [{b}, {c}] after {max_iter} iterations"),
    })
}

/// Value, gradient and Hessian of a function of three variables.
pub type Jet3 = (f64, [f64; 3], [[f64; 3]; 3]);

/// Damped Newton (Levenberg-Marquardt) minimisation on the torus, starting
/// from `start`. Coordinates are wrapped after each step. `tol` is the
/// relative gradient size (and step length) accepted as stationary; it should
/// reflect the accuracy of the supplied derivatives.
pub fn minimize_on_torus<F>(mut eval: F, start: [f64; 3], tol: f64, max_iter: usize) -> Result<([f64; 3], Jet3)>
where
    F: FnMut(&[f64; 3]) -> Jet3,
{
    let mut x = start;
    let mut jet = eval(&x);
    let mut damping = 1e-6;
    for _ in 0..max_iter {
        let (f, g, h) = jet;
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm <= tol * (1.0 + f.abs()) {
            return Ok((x, jet));
        }
        let hm = Matrix3::from_fn(|i, j| h[i][j]);
        let scale = (0..3).map(|i| h[i][i].abs()).fold(1e-12f64, f64::max);
        let gv = Vector3::new(g[0], g[1], g[2]);
        let mut accepted = false;
        let mut step_norm = 0.0;
        while damping < 1e12 {
            let shifted = hm + Matrix3::identity() * (damping * scale);
            if let Some(chol) = shifted.cholesky() {
                let delta = -chol.solve(&gv);
                let trial = [
                    wrap_angle(x[0] + delta[0]),
                    wrap_angle(x[1] + delta[1]),
                    wrap_angle(x[2] + delta[2]),
                ];
                let tj = eval(&trial);
                if tj.0 <= f + 1e-15 * (1.0 + f.abs()) {
                    step_norm = delta.amax();
                    x = trial;
                    jet = tj;
                    damping = (damping * 0.1).max(1e-12);
                    accepted = true;
                    break;
                }
            }
            damping *= 10.0;
        }
        if !accepted {
            // No descent possible at this resolution: x is a minimiser to rounding.
            return Ok((x, jet));
        }
        if step_norm < 0.1 * tol {
            return Ok((x, jet));
        }
    }
    Err(Error::NoConvergence {
        what: "damped Newton minimisation",
        detail: format!("best point {x:?} after {max_iter} iterations"),
    })
}

/// Derivative-free compass search on the torus. Returns the best point and
/// value once the step falls below `tol`.
pub fn compass_search<F, const N: usize>(
    mut f: F,
    start: [f64; N],
    f_start: f64,
    step: f64,
    tol: f64,
) -> Result<([f64; N], f64)>
where
    F: FnMut(&[f64; N]) -> Result<f64>,
{
    let mut x = start;
    let mut fx = f_start;
    let mut step = step;
    while step > tol {
        let mut improved = false;
        for axis in 0..N {
            for sign in [1.0, -1.0] {
                let mut trial = x;
                trial[axis] = wrap_angle(trial[axis] + sign * step);
                let ft = f(&trial)?;
                if ft < fx {
                    x = trial;
                    fx = ft;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok((x, fx))
}

/// Least-squares solution of `A c = y` where `A` has the given columns.
/// Returns the coefficients and the root-mean-square residual.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Result<(Vec<f64>, f64)> {
    let m = y.len();
    let k = columns.len();
    if m < k || k == 0 {
        return Err(Error::InsufficientData(format!("{m} samples for {k} fit parameters")));
    }
    let a = DMatrix::from_fn(m, k, |i, j| columns[j][i]);
    let b = DVector::from_column_slice(y);
    let svd = a.clone().svd(true, true);
    let c = svd
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidArgument(format!("least squares: {e}")))?;
    let r = &a * &c - &b;
    let rms = (r.norm_squared() / m as f64).sqrt();
    Ok((c.iter().copied().collect(), rms))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_idempotent_and_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert_eq!(wrap_angle(0.0), 0.0);
        let x = 1.234;
        assert!((wrap_angle(x + 2.0 * PI) - x).abs() < 1e-14);
        assert_eq!(wrap_angle(wrap_angle(7.0)), wrap_angle(7.0));
    }

    #[test]
    fn brent_finds_cubic_root() {
        let f = |x: f64| Ok(x * x * x - 2.0);
        let r = brent_root(f, 0.0, 2.0, -2.0, 6.0, 1e-14, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-13);
    }

    #[test]
    fn brent_rejects_unbracketed() {
        let f = |x: f64| Ok(x * x + 1.0);
        assert!(brent_root(f, -1.0, 1.0, 2.0, 2.0, 1e-12, 50).is_err());
    }

    #[test]
    fn newton_minimises_cosine_bowl() {
        let eval = |x: &[f64; 3]| {
            let mut v = 0.0;
            let mut g = [0.0; 3];
            let mut h = [[0.0; 3]; 3];
            for i in 0..3 {
                let c = 0.3 * (i as f64 + 1.0);
                v += 1.0 - (x[i] - c).cos();
                g[i] = (x[i] - c).sin();
                h[i][i] = (x[i] - c).cos();
            }
            (v, g, h)
        };
        let (x, jet) = minimize_on_torus(eval, [0.0, 0.0, 0.0], 1e-14, 100).unwrap();
        for i in 0..3 {
            assert!((x[i] - 0.3 * (i as f64 + 1.0)).abs() < 1e-12);
        }
        assert!(jet.0.abs() < 1e-20);
    }

    #[test]
    fn least_squares_recovers_line() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let (c, rms) = least_squares(&[xs.clone(), vec![1.0; 10]], &ys).unwrap();
        assert!((c[0] - 2.0).abs() < 1e-12 && (c[1] - 1.0).abs() < 1e-12);
        assert!(rms < 1e-12);
    }

    #[test]
    fn neumaier_beats_naive_cancellation() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(neumaier_sum(xs), 2.0);
    }
}
