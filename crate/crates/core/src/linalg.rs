//! Dense and iterative symmetric eigenvalue kernels.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Singular values of a dense matrix, in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = m
        .clone()
        .try_svd(false, false, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::NoConvergence {
            what: "dense SVD",
            detail: format!("{}x{} matrix", m.nrows(), m.ncols()),
        })?;
    let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Eigenvalues of a dense symmetric matrix, in descending order.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000).ok_or_else(|| Error::NoConvergence {
        what: "dense symmetric eigensolver",
        detail: format!("{}x{} matrix", m.nrows(), m.ncols()),
    })?;
    let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    Ok(v)
}

/// Converged leading eigenvalues of a symmetric operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopEigenvalues {
    /// Ritz values in descending order.
    pub values: Vec<f64>,
    /// Residual norms `|A y - theta y|` for each Ritz value.
    pub residuals: Vec<f64>,
    pub block_steps: usize,
}

/// Orthonormalises the columns of `w` against `basis` (twice) and then
/// among themselves. Returns the new block and the coefficient matrix `R`
/// with `w_orth_part = Q R`. Columns that vanish are replaced by fresh
/// directions orthogonal to everything seen so far.
fn orthonormalize(w: &mut DMatrix<f64>, basis: &[DMatrix<f64>], seed: &mut u64) -> DMatrix<f64> {
    let b = w.ncols();
    for _ in 0..2 {
        for v in basis {
            let c = v.transpose() * &*w;
            *w -= v * c;
        }
    }
    let mut r = DMatrix::zeros(b, b);
    let scale = w.norm().max(1e-300);
    for j in 0..b {
        for _ in 0..2 {
            for i in 0..j {
                let c = w.column(i).dot(&w.column(j));
                r[(i, j)] += c;
                let qi = w.column(i).clone_owned();
                w.column_mut(j).axpy(-c, &qi, 1.0);
            }
        }
        let nrm = w.column(j).norm();
        if nrm > 1e-12 * scale {
            r[(j, j)] = nrm;
            w.column_mut(j).scale_mut(1.0 / nrm);
        } else {
            // Deflated direction: continue with a new vector.
            for k in 0..w.nrows() {
                w[(k, j)] = pseudo_random(seed);
            }
            for _ in 0..2 {
                for v in basis {
                    let c = v.transpose() * w.column(j);
                    let upd = v * c;
                    w.column_mut(j).axpy(-1.0, &upd, 1.0);
                }
                for i in 0..j {
                    let c = w.column(i).dot(&w.column(j));
                    let qi = w.column(i).clone_owned();
                    w.column_mut(j).axpy(-c, &qi, 1.0);
                }
            }
            let n2 = w.column(j).norm();
            w.column_mut(j).scale_mut(1.0 / n2);
        }
    }
    r
}

fn pseudo_random(state: &mut u64) -> f64 {
    // splitmix64
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

/// Block Lanczos with full reorthogonalisation for the leading eigenvalues
/// of a symmetric positive semidefinite operator of dimension `dim`.
///
/// Iterates until every Ritz value above `threshold` and the first one
/// below it have residual at most `tol`. `apply` maps a block of column
/// vectors to its image.
pub fn block_lanczos_top<F>(
    apply: F,
    dim: usize,
    block: usize,
    threshold: f64,
    tol: f64,
    max_steps: usize,
) -> Result<TopEigenvalues>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    if dim == 0 {
        return Ok(TopEigenvalues {
            values: Vec::new(),
            residuals: Vec::new(),
            block_steps: 0,
        });
    }
    let b = block.clamp(1, dim);
    let mut seed = 0x5EED_u64;
    let mut v0 = DMatrix::from_fn(dim, b, |_, _| pseudo_random(&mut seed));
    orthonormalize(&mut v0, &[], &mut seed);

    let mut basis: Vec<DMatrix<f64>> = vec![v0];
    let mut alphas: Vec<DMatrix<f64>> = Vec::new();
    let mut betas: Vec<DMatrix<f64>> = Vec::new();
    let max_blocks = max_steps.min(dim.div_ceil(b));
    let mut last = None;

    for step in 0..max_blocks {
        let vj = &basis[step];
        let mut w = apply(vj);
        let a = vj.transpose() * &w;
        let a = (&a + a.transpose()) * 0.5;
        w -= vj * &a;
        if step > 0 {
            w -= &basis[step - 1] * betas[step - 1].transpose();
        }
        alphas.push(a);
        let full_space = (step + 1) * b >= dim;
        let r = if full_space {
            DMatrix::zeros(b, b)
        } else {
            orthonormalize(&mut w, &basis, &mut seed)
        };

        let k = alphas.len() * b;
        let mut t = DMatrix::zeros(k, k);
        for (i, a) in alphas.iter().enumerate() {
            t.view_mut((i * b, i * b), (b, b)).copy_from(a);
        }
        for (i, bt) in betas.iter().enumerate() {
            t.view_mut(((i + 1) * b, i * b), (b, b)).copy_from(bt);
            t.view_mut((i * b, (i + 1) * b), (b, b)).copy_from(&bt.transpose());
        }
        let eig = SymmetricEigen::try_new(t, f64::EPSILON, 10_000).ok_or_else(|| Error::NoConvergence {
            what: "block tridiagonal eigensolver",
            detail: format!("size {k}"),
        })?;
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
        let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let residuals: Vec<f64> = order
            .iter()
            .map(|&i| {
                if full_space {
                    0.0
                } else {
                    let s = eig.eigenvectors.column(i);
                    let tail = s.rows(k - b, b).clone_owned();
                    (&r * tail).norm()
                }
            })
            .collect();
        let above = values.iter().take_while(|&&v| v > threshold).count();
        let needed = (above + 1).min(k);
        let done = full_space || (needed < k && residuals[..needed].iter().all(|&r| r <= tol));
        if done {
            return Ok(TopEigenvalues {
                values,
                residuals,
                block_steps: step + 1,
            });
        }
        last = Some((values, residuals));
        betas.push(r);
        basis.push(w);
    }
    let detail = match last {
        Some((v, r)) => format!(
            "leading Ritz values {:?} with residuals {:?}",
            &v[..v.len().min(4)],
            &r[..r.len().min(4)]
        ),
        None => String::new(),
    };
    Err(Error::NoConvergence {
        what: "block Lanczos",
        detail,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize) -> DMatrix<f64> {
        let mut seed = 7u64;
        let x = DMatrix::from_fn(n, n, |_, _| pseudo_random(&mut seed));
        // Decaying spectrum with a repeated top eigenvalue.
        let q = x.qr().q();
        let d = DMatrix::from_fn(n, n, |i, j| {
            if i != j {
                0.0
            } else if i < 3 {
                4.0
            } else {
                3.0 * (-(i as f64) / 6.0).exp()
            }
        });
        &q * d * q.transpose()
    }

    #[test]
    fn lanczos_matches_dense_with_multiplicity() {
        let a = test_matrix(200);
        let dense = symmetric_eigenvalues(&a).unwrap();
        let top = block_lanczos_top(|v| &a * v, 200, 4, 1.0, 1e-10, 100).unwrap();
        let above_dense = dense.iter().filter(|&&v| v > 1.0).count();
        let above = top.values.iter().filter(|&&v| v > 1.0).count();
        assert_eq!(above, above_dense);
        for i in 0..above {
            assert!((top.values[i] - dense[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn small_dimension_uses_whole_space() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 2.0, 0.5]));
        let top = block_lanczos_top(|v| &a * v, 3, 8, 1.0, 1e-12, 10).unwrap();
        assert!((top.values[0] - 3.0).abs() < 1e-12 && (top.values[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn singular_values_descending() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 2.0, 1.0, 0.0]);
        let s = singular_values(&m).unwrap();
        assert!((s[0] - 2.0).abs() < 1e-14 && (s[1] - 1.0).abs() < 1e-14, "{s:?}");
    }
}
