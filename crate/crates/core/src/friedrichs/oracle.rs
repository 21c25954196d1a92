//! Discrete reference for the fiber operator: on an `n^3` grid, `h_alpha(p)`
//! becomes `diag(u_p(t_i)) - mu w phi(t_i) phi(t_j)`.

use nalgebra::DMatrix;

use crate::lattice_model::{Channel, ModelSpec, TorusPoint};
use crate::numeric::brent_root;
use crate::quadrature::UniformGrid;
use crate::{Error, Result};

fn discrete_data(model: &ModelSpec, channel: Channel, p: &TorusPoint, n: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let grid = UniformGrid::new(n)?;
    let d = model.dispersion();
    let phi = model.phi(channel);
    let mut u = Vec::with_capacity(grid.len());
    let mut f = Vec::with_capacity(grid.len());
    for t in grid.nodes() {
        u.push(d.slice(channel, p, &t));
        f.push(phi.eval(&t));
    }
    Ok((u, f, grid.weight()))
}

/// Dense Nystrom matrix of `h_alpha(p)` on the `n^3` grid.
pub fn fiber_matrix(model: &ModelSpec, channel: Channel, p: &TorusPoint, mu: f64, n: usize) -> Result<DMatrix<f64>> {
    let (u, f, w) = discrete_data(model, channel, p, n)?;
    let len = u.len();
    Ok(DMatrix::from_fn(len, len, |i, j| {
        let diag = if i == j { u[i] } else { 0.0 };
        diag - mu * w * f[i] * f[j]
    }))
}

/// Smallest eigenvalue of [`fiber_matrix`], computed as the smallest singular
/// value of the matrix shifted to be positive semidefinite.
pub fn dense_lowest_eigenvalue(model: &ModelSpec, channel: Channel, p: &TorusPoint, mu: f64, n: usize) -> Result<f64> {
    let (u, f, w) = discrete_data(model, channel, p, n)?;
    let umin = u.iter().cloned().fold(f64::INFINITY, f64::min);
    let norm2: f64 = f.iter().map(|x| x * x).sum();
    // Weyl bound: every eigenvalue is at least umin - mu w |f|^2.
    let shift = -(umin - mu * w * norm2) + 1e-9;
    let len = u.len();
    let a = DMatrix::from_fn(len, len, |i, j| {
        let diag = if i == j { u[i] + shift } else { 0.0 };
        diag - mu * w * f[i] * f[j]
    });
    let sv = a
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or(Error::NoConvergence {
            what: "dense singular value decomposition",
            detail: format!("{len}x{len} fiber matrix"),
        })?
        .singular_values;
    Ok(sv.min() - shift)
}

/// The discretised determinant `1 - mu w sum_i phi_i^2 / (u_i - z)`.
pub fn discrete_delta(model: &ModelSpec, channel: Channel, p: &TorusPoint, z: f64, mu: f64, n: usize) -> Result<f64> {
    let (u, f, w) = discrete_data(model, channel, p, n)?;
    secular(&u, &f, w, z, mu)
}

fn secular(u: &[f64], f: &[f64], w: f64, z: f64, mu: f64) -> Result<f64> {
    let mut s = 0.0;
    for (ui, fi) in u.iter().zip(f) {
        if fi * fi == 0.0 {
            continue;
        }
        if ui - z <= 0.0 {
            return Err(Error::AboveThreshold { z, threshold: *ui });
        }
        s += fi * fi / (ui - z);
    }
    Ok(1.0 - mu * w * s)
}

/// Root of [`discrete_delta`] below every node with `phi != 0`, if any.
pub fn discrete_bound_state(
    model: &ModelSpec,
    channel: Channel,
    p: &TorusPoint,
    mu: f64,
    n: usize,
) -> Result<Option<f64>> {
    let (u, f, w) = discrete_data(model, channel, p, n)?;
    let top = u
        .iter()
        .zip(&f)
        .filter(|(_, fi)| **fi != 0.0)
        .map(|(ui, _)| *ui)
        .fold(f64::INFINITY, f64::min);
    if !top.is_finite() {
        return Ok(None);
    }
    // Delta -> -infinity as z -> top from below.
    let mut hi = top - 1e-300f64.max(top.abs() * 1e-15);
    let mut d_hi = secular(&u, &f, w, hi, mu)?;
    if d_hi >= 0.0 {
        // Lowest pole carries no weight at this precision; nudge further.
        hi = top - 1e-14 * top.abs().max(1.0);
        d_hi = secular(&u, &f, w, hi, mu)?;
        if d_hi >= 0.0 {
            return Ok(None);
        }
    }
    let mut step = 1.0;
    let mut lo = top - step;
    let mut d_lo = secular(&u, &f, w, lo, mu)?;
    while d_lo <= 0.0 {
        step *= 2.0;
        lo = top - step;
        d_lo = secular(&u, &f, w, lo, mu)?;
    }
    brent_root(|z| secular(&u, &f, w, z, mu), lo, hi, d_lo, d_hi, 1e-14, 400).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::appendix_b_cos;

    #[test]
    fn secular_root_matches_dense_eigenvalue() {
        let m = appendix_b_cos(1.0, 1.0).unwrap();
        let p = TorusPoint::new([0.7, -1.3, 2.1]);
        let mu = 0.1;
        let root = discrete_bound_state(&m, Channel::One, &p, mu, 6).unwrap().unwrap();
        let dense = fiber_matrix(&m, Channel::One, &p, mu, 6)
            .unwrap()
            .symmetric_eigenvalues()
            .min();
        assert!((root - dense).abs() < 1e-10, "{root} vs {dense}");
        let shifted = dense_lowest_eigenvalue(&m, Channel::One, &p, mu, 6).unwrap();
        assert!((shifted - dense).abs() < 1e-10);
    }
}
