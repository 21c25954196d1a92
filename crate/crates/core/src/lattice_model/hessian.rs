use nalgebra::{Matrix3, SMatrix};
use serde::{Deserialize, Serialize};

use super::{ModelSpec, TorusPoint};
use crate::{Error, Result};

/// Factorisation of the Hessian of `u` at the origin as
/// `[[l1 U, l U], [l U, l2 U]]`, normalised so that the largest diagonal
/// entry of `U` is 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianBlocks {
    pub l1: f64,
    pub l2: f64,
    pub l: f64,
    pub u: [[f64; 3]; 3],
    /// Larger of the factorisation misfit and the finite-difference error estimate.
    pub residual: f64,
    /// `max |H_pq - H_pq^T|` of the mixed block.
    pub mixed_asymmetry: f64,
    /// The full 6x6 Hessian after Richardson extrapolation.
    pub hessian: [[f64; 6]; 6],
}

impl HessianBlocks {
    pub fn u_matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.u[i][j])
    }

    pub fn det_u(&self) -> f64 {
        self.u_matrix().determinant()
    }

    pub fn l(&self, channel: super::Channel) -> f64 {
        match channel {
            super::Channel::One => self.l1,
            super::Channel::Two => self.l2,
        }
    }

    /// `(U p, p)`
    pub fn quadratic_form(&self, p: &TorusPoint) -> f64 {
        let x = p.coords();
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += self.u[i][j] * x[i] * x[j];
            }
        }
        s
    }
}

type M6 = SMatrix<f64, 6, 6>;

fn fd_hessian(model: &ModelSpec, h: f64) -> (M6, f64) {
    let f = |x: &[f64; 6]| {
        model.eval_dispersion(
            &TorusPoint::new([x[0], x[1], x[2]]),
            &TorusPoint::new([x[3], x[4], x[5]]),
        )
    };
    let at = |d: &[(usize, f64)]| {
        let mut x = [0.0; 6];
        for &(i, s) in d {
            x[i] += s;
        }
        f(&x)
    };
    let f0 = at(&[]);
    let mut fmax = f0.abs();
    let mut m = M6::zeros();
    for i in 0..6 {
        let (a, b) = (at(&[(i, h)]), at(&[(i, -h)]));
        fmax = fmax.max(a.abs()).max(b.abs());
        m[(i, i)] = (a - 2.0 * f0 + b) / (h * h);
        for j in 0..i {
            let v = (at(&[(i, h), (j, h)]) - at(&[(i, h), (j, -h)]) - at(&[(i, -h), (j, h)]) + at(&[(i, -h), (j, -h)]))
                / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    (m, fmax)
}

/// Central-difference Hessian of `u` at `(0,0)` with one Richardson step,
/// factored into `(l1, l2, l, U)`.
pub fn estimate_hessian_blocks(model: &ModelSpec, step: f64) -> Result<HessianBlocks> {
    if !(1e-6..=1e-2).contains(&step) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {step} outside [1e-6, 1e-2]"
        )));
    }
    let (coarse, fmax) = fd_hessian(model, step);
    let (fine, _) = fd_hessian(model, 0.5 * step);
    let hess = (fine * 4.0 - coarse) / 3.0;
    let truncation = (fine - coarse).amax() / 3.0;
    let rounding = 10.0 * 1e-15 * fmax.max(1.0) / (0.25 * step * step);
    let fd_error = truncation + rounding;

    let block = |r: usize, c: usize| Matrix3::from_fn(|i, j| hess[(r + i, c + j)]);
    let pp = block(0, 0);
    let pq = block(0, 3);
    let qq = block(3, 3);
    let mixed_asymmetry = (pq - pq.transpose()).amax();
    let sym = |m: Matrix3<f64>| (m + m.transpose()) * 0.5;
    let (pp, pq, qq) = (sym(pp), sym(pq), sym(qq));

    if pp.cholesky().is_none() {
        return Err(Error::Model("pp block of the Hessian is not positive definite".into()));
    }
    if qq.cholesky().is_none() {
        return Err(Error::Model("qq block of the Hessian is not positive definite".into()));
    }
    let l1 = (0..3).map(|i| pp[(i, i)]).fold(f64::MIN, f64::max);
    let u = pp / l1;
    let uu = u.norm_squared();
    let l2 = qq.component_mul(&u).sum() / uu;
    let l = pq.component_mul(&u).sum() / uu;
    let scale = hess.amax().max(1.0);
    let misfit = ((qq - u * l2).amax()).max((pq - u * l).amax()) / scale;
    let tol = 1e-4;
    if misfit > tol {
        return Err(Error::Model(format!(
            "no common matrix U factors the Hessian blocks (misfit {misfit:e})"
        )));
    }
    if l.abs() <= tol * scale {
        return Err(Error::Model("mixed Hessian block vanishes (l = 0)".into()));
    }
    if l1 * l2 - l * l <= 0.0 {
        return Err(Error::Model(format!(
            "l1 l2 - l^2 = {} is not positive",
            l1 * l2 - l * l
        )));
    }
    let mut full = [[0.0; 6]; 6];
    for (i, row) in full.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = hess[(i, j)];
        }
    }
    Ok(HessianBlocks {
        l1,
        l2,
        l,
        u: [
            [u[(0, 0)], u[(0, 1)], u[(0, 2)]],
            [u[(1, 0)], u[(1, 1)], u[(1, 2)]],
            [u[(2, 0)], u[(2, 1)], u[(2, 2)]],
        ],
        residual: misfit.max(fd_error),
        mixed_asymmetry,
        hessian: full,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::{appendix_b_cos, Dispersion};

    #[test]
    fn appendix_b_blocks() {
        let m = appendix_b_cos(1.0, 1.0).unwrap();
        let hb = estimate_hessian_blocks(&m, 1e-3).unwrap();
        assert!((hb.l1 - 2.0).abs() < 1e-6);
        assert!((hb.l2 - 2.0).abs() < 1e-6);
        assert!((hb.l + 1.0).abs() < 1e-6);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((hb.u[i][j] - e).abs() < 1e-6);
            }
        }
        assert!((hb.l1 * hb.l2 - hb.l * hb.l - 3.0).abs() < 1e-6);
        assert!(hb.mixed_asymmetry < 1e-8);
    }

    #[test]
    fn anisotropic_cosine_sum() {
        let m = appendix_b_cos(1.0, 1.0)
            .unwrap()
            .with_dispersion(Dispersion::CosineSum { a: 1.0, b: 2.0, c: 1.0 });
        let hb = estimate_hessian_blocks(&m, 1e-3).unwrap();
        assert!((hb.l1 - 2.0).abs() < 1e-6);
        assert!((hb.l2 - 3.0).abs() < 1e-6);
        assert!((hb.l + 1.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_uncoupled_or_inconsistent_blocks() {
        let base = appendix_b_cos(1.0, 1.0).unwrap();
        let no_mix = base.with_dispersion(Dispersion::CosineSum { a: 1.0, b: 1.0, c: 0.0 });
        assert!(estimate_hessian_blocks(&no_mix, 1e-3).is_err());
        let skew = base.with_dispersion(Dispersion::custom(|p, q| {
            let (p, q) = (p.coords(), q.coords());
            (0..3)
                .map(|i| (1.0 + i as f64) * (1.0 - p[i].cos()) + (1.0 - q[i].cos()) + (1.0 - (p[i] - q[i]).cos()))
                .sum()
        }));
        assert!(estimate_hessian_blocks(&skew, 1e-3).is_err());
        assert!(estimate_hessian_blocks(&base, 0.5).is_err());
    }
}
