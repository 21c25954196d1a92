//! Nyström discretisation of the off-diagonal block `T_12(z)` of the
//! Birman-Schwinger operator and the count `N(z) = n(1, T(z))`.
//!
//! `T(z)` is antidiagonal with blocks `T_12` and `T_21 = T_12^*`, so its
//! eigenvalues are `±sigma_i(T_12)` and the count above one equals the
//! number of singular values of `T_12` above one.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::friedrichs::Friedrichs;
use crate::lattice_model::{Channel, ModelSpec};
use crate::linalg::{block_lanczos_top, singular_values};
use crate::quadrature::UniformGrid;
use crate::{Error, Result};

/// Margin on the comparison `sigma > 1`.
pub const COUNT_TOLERANCE: f64 = 1e-9;
/// Largest kernel grid assembled densely.
pub const MAX_KERNEL_GRID: usize = 24;
/// Dimension up to which singular values are computed by a dense SVD.
pub const DENSE_LIMIT: usize = 512;

const LANCZOS_BLOCK: usize = 8;
const LANCZOS_TOL: f64 = 1e-10;
const REPORTED_VALUES: usize = 8;

/// `T_12(z)` on a grid, with the quadrature weights absorbed.
#[derive(Clone, Debug)]
pub struct KernelBlock {
    pub z: f64,
    pub grid: UniformGrid,
    /// Row index `q`, column index `t`.
    pub matrix: DMatrix<f64>,
    /// `Delta_{mu_alpha}(., z)` on the grid nodes, per channel.
    pub delta: [Vec<f64>; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub z: f64,
    pub count: usize,
    pub top_singular_values: Vec<f64>,
    pub grid_n: usize,
    pub tolerance: f64,
    /// The grid spacing exceeds `sqrt|z|`.
    pub resolution_flag: bool,
}

impl CountResult {
    pub fn log_abs_z(&self) -> f64 {
        self.z.abs().ln().abs()
    }
}

/// `2 pi / n > sqrt|z|`.
pub fn resolution_flag(z: f64, grid_n: usize) -> bool {
    2.0 * std::f64::consts::PI / grid_n as f64 > z.abs().sqrt()
}

fn check_kernel_grid(grid_n: usize) -> Result<()> {
    if grid_n > MAX_KERNEL_GRID {
        return Err(Error::GridTooLarge {
            n: grid_n,
            cap: MAX_KERNEL_GRID,
        });
    }
    Ok(())
}

/// `Delta_{mu_alpha}(p, z)` on every node of `grid`, for each `z` in `zs`.
/// Fiber data are built once per node and shared across the energies.
pub fn delta_tables(fr: &Friedrichs, channel: Channel, zs: &[f64], grid: &UniformGrid) -> Result<Vec<Vec<f64>>> {
    let mu = fr.model().mu(channel);
    let per_node = fr.even_grid_map(grid, |p| {
        let slice = fr.slice(channel, p)?;
        zs.iter()
            .map(|&z| Ok(1.0 - mu * fr.lambda_on(&slice, z)?.value))
            .collect::<Result<Vec<f64>>>()
    })?;
    let mut out = vec![Vec::with_capacity(grid.len()); zs.len()];
    for vals in per_node {
        for (k, v) in vals.into_iter().enumerate() {
            out[k].push(v);
        }
    }
    Ok(out)
}

fn check_deltas(z: f64, grid: &UniformGrid, delta: &[Vec<f64>; 2]) -> Result<()> {
    if !(z < 0.0) {
        return Err(Error::InvalidArgument(format!("energy z = {z} must be negative")));
    }
    for d in delta {
        if d.len() != grid.len() {
            return Err(Error::InvalidArgument(format!(
                "Delta table has {} entries for {} nodes",
                d.len(),
                grid.len()
            )));
        }
        if let Some((i, &v)) = d.iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
            return Err(Error::NotBelowEssentialSpectrum {
                z,
                delta: v,
                node: grid.node(i).coords(),
            });
        }
    }
    Ok(())
}

/// Assembles `T_12(z)` from given `Delta` tables. Entry `(q, t)` is
/// `sqrt(mu1 mu2) phi1(t) phi2(q) / (sqrt(Delta1(q)) sqrt(Delta2(t)) (u(t,q) - z)) w`.
pub fn assemble_with_deltas(
    model: &ModelSpec,
    z: f64,
    grid: &UniformGrid,
    delta: [Vec<f64>; 2],
) -> Result<KernelBlock> {
    check_kernel_grid(grid.n())?;
    check_deltas(z, grid, &delta)?;
    let n3 = grid.len();
    let nodes: Vec<_> = grid.nodes().collect();
    let pref = (model.mu(Channel::One) * model.mu(Channel::Two)).sqrt() * grid.weight();
    let row: Vec<f64> = (0..n3)
        .map(|q| model.phi(Channel::Two).eval(&nodes[q]) / delta[0][q].sqrt())
        .collect();
    let col: Vec<f64> = (0..n3)
        .map(|t| pref * model.phi(Channel::One).eval(&nodes[t]) / delta[1][t].sqrt())
        .collect();

    let mut data = vec![0.0; n3 * n3];
    let n = grid.n();
    match model.dispersion().pair_table(&grid.axis()) {
        Some(table) => {
            data.par_chunks_mut(n3).enumerate().for_each(|(t, column)| {
                let (ti, tj, tk) = grid.split(t);
                let (r0, r1, r2) = (&table[ti * n..][..n], &table[tj * n..][..n], &table[tk * n..][..n]);
                let c = col[t];
                for (q, out) in column.iter_mut().enumerate() {
                    let (qi, qj, qk) = grid.split(q);
                    let u = r0[qi] + r1[qj] + r2[qk];
                    *out = c * row[q] / (u - z);
                }
            });
        }
        None => {
            data.par_chunks_mut(n3).enumerate().for_each(|(t, column)| {
                let c = col[t];
                for (q, out) in column.iter_mut().enumerate() {
                    let u = model.eval_dispersion(&nodes[t], &nodes[q]);
                    *out = c * row[q] / (u - z);
                }
            });
        }
    }
    if let Some(i) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteIntegrand {
            node: nodes[i % n3].coords(),
            value: data[i],
        });
    }
    Ok(KernelBlock {
        z,
        grid: *grid,
        matrix: DMatrix::from_vec(n3, n3, data),
        delta,
    })
}

/// Assembles `T_12(z)` on `grid` for the couplings of the model.
pub fn assemble_block(fr: &Friedrichs, z: f64, grid: &UniformGrid) -> Result<KernelBlock> {
    check_kernel_grid(grid.n())?;
    if !(z < 0.0) {
        return Err(Error::InvalidArgument(format!("energy z = {z} must be negative")));
    }
    let d1 = delta_tables(fr, Channel::One, &[z], grid)?.pop().expect("one energy");
    let d2 = delta_tables(fr, Channel::Two, &[z], grid)?.pop().expect("one energy");
    assemble_with_deltas(fr.model(), z, grid, [d1, d2])
}

/// `max |T_21 - T_12^T|` where `T_21` is evaluated entrywise from its own
/// kernel `sqrt(mu1 mu2) phi1(p) phi2(t) / (sqrt(Delta2(p)) sqrt(Delta1(t)) (u(p,t) - z))`.
pub fn exchange_residual(model: &ModelSpec, block: &KernelBlock) -> f64 {
    let grid = &block.grid;
    let nodes: Vec<_> = grid.nodes().collect();
    let pref = (model.mu(Channel::One) * model.mu(Channel::Two)).sqrt() * grid.weight();
    let (d1, d2) = (&block.delta[0], &block.delta[1]);
    let z = block.z;
    (0..grid.len())
        .into_par_iter()
        .map(|p| {
            let fp = model.phi(Channel::One).eval(&nodes[p]) / d2[p].sqrt();
            let mut worst: f64 = 0.0;
            for t in 0..grid.len() {
                let k21 = pref * fp * model.phi(Channel::Two).eval(&nodes[t])
                    / (d1[t].sqrt() * (model.eval_dispersion(&nodes[p], &nodes[t]) - z));
                worst = worst.max((k21 - block.matrix[(t, p)]).abs());
            }
            worst
        })
        .reduce(|| 0.0, f64::max)
}

/// Number of singular values above `1 + COUNT_TOLERANCE` and the leading
/// singular values.
pub fn count_singular_values_above_one(m: &DMatrix<f64>) -> Result<(usize, Vec<f64>)> {
    let cut = 1.0 + COUNT_TOLERANCE;
    if m.nrows() <= DENSE_LIMIT && m.ncols() <= DENSE_LIMIT {
        let s = singular_values(m)?;
        let count = s.iter().filter(|&&v| v > cut).count();
        let keep = (count + REPORTED_VALUES).min(s.len());
        return Ok((count, s[..keep].to_vec()));
    }
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument("iterative count needs a square block".into()));
    }
    let top = block_lanczos_top(
        |v| m.tr_mul(&(m * v)),
        m.ncols(),
        LANCZOS_BLOCK,
        cut * cut,
        LANCZOS_TOL,
        400,
    )?;
    let s: Vec<f64> = top.values.iter().map(|v| v.max(0.0).sqrt()).collect();
    let count = s.iter().filter(|&&v| v > cut).count();
    let keep = (count + REPORTED_VALUES).min(s.len());
    Ok((count, s[..keep].to_vec()))
}

/// `n(1, T(z))` for an assembled block.
pub fn count_above_one(block: &KernelBlock) -> Result<CountResult> {
    let (count, top) = count_singular_values_above_one(&block.matrix)?;
    Ok(CountResult {
        z: block.z,
        count,
        top_singular_values: top,
        grid_n: block.grid.n(),
        tolerance: COUNT_TOLERANCE,
        resolution_flag: resolution_flag(block.z, block.grid.n()),
    })
}

/// `N(z)`: number of eigenvalues of `H` below `z`, for `z < 0` below the
/// essential spectrum (enforced through `Delta > 0` on the kernel grid).
pub fn eigenvalue_count(fr: &Friedrichs, z: f64, grid_n: usize) -> Result<CountResult> {
    check_kernel_grid(grid_n)?;
    let grid = UniformGrid::new(grid_n)?;
    count_above_one(&assemble_block(fr, z, &grid)?)
}

/// Counts along a schedule of energies increasing towards `0-`.
pub fn count_schedule(fr: &Friedrichs, zs: &[f64], grid_n: usize) -> Result<Vec<CountResult>> {
    if zs.is_empty() {
        return Ok(Vec::new());
    }
    if let Some(w) = zs.windows(2).find(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument(format!(
            "schedule must increase strictly: {} then {}",
            w[0], w[1]
        )));
    }
    if let Some(z) = zs.iter().find(|z| !(**z < 0.0)) {
        return Err(Error::InvalidArgument(format!("energy z = {z} must be negative")));
    }
    check_kernel_grid(grid_n)?;
    let grid = UniformGrid::new(grid_n)?;
    let d1 = delta_tables(fr, Channel::One, zs, &grid)?;
    let d2 = delta_tables(fr, Channel::Two, zs, &grid)?;
    let mut out = Vec::with_capacity(zs.len());
    for ((&z, a), b) in zs.iter().zip(d1).zip(d2) {
        let block = assemble_with_deltas(fr.model(), z, &grid, [a, b])?;
        out.push(count_above_one(&block)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::{appendix_b_cos, appendix_b_sin, FormFactor};
    use crate::linalg::symmetric_eigenvalues;

    fn at_mu_zero(m: ModelSpec) -> Friedrichs {
        let fr = Friedrichs::with_defaults(&m).unwrap();
        let mu1 = fr.mu_zero(Channel::One).unwrap();
        let mu2 = fr.mu_zero(Channel::Two).unwrap();
        Friedrichs::with_defaults(&m.with_couplings(mu1, mu2).unwrap()).unwrap()
    }

    #[test]
    fn far_below_is_small_and_empty() {
        let fr = at_mu_zero(appendix_b_cos(1.0, 1.0).unwrap());
        let g = UniformGrid::new(8).unwrap();
        let block = assemble_block(&fr, -1e3, &g).unwrap();
        let c = count_above_one(&block).unwrap();
        assert!(c.top_singular_values[0] < 0.05, "{:?}", c.top_singular_values);
        assert_eq!(c.count, 0);
        assert!(exchange_residual(fr.model(), &block) < 1e-10);
    }

    #[test]
    fn antidiagonal_pairing() {
        let mut seed = 3u64;
        let mut rnd = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let k = DMatrix::from_fn(20, 20, |_, _| rnd() * 0.6);
        let mut big = DMatrix::zeros(40, 40);
        big.view_mut((0, 20), (20, 20)).copy_from(&k);
        big.view_mut((20, 0), (20, 20)).copy_from(&k.transpose());
        let eig = symmetric_eigenvalues(&big).unwrap();
        let (count, _) = count_singular_values_above_one(&k).unwrap();
        assert_eq!(eig.iter().filter(|&&v| v > 1.0 + COUNT_TOLERANCE).count(), count);
        assert!(count > 0);
        assert_eq!(count_singular_values_above_one(&DMatrix::zeros(5, 5)).unwrap().0, 0);
    }

    #[test]
    fn prefactor_is_linear_in_sqrt_mu() {
        let m = appendix_b_cos(0.01, 0.01).unwrap();
        let g = UniformGrid::new(4).unwrap();
        let d = vec![0.5; g.len()];
        let a = assemble_with_deltas(&m, -1.0, &g, [d.clone(), d.clone()]).unwrap();
        let b = assemble_with_deltas(&m.with_couplings(0.04, 0.09).unwrap(), -1.0, &g, [d.clone(), d]).unwrap();
        let ratio = (0.04f64 * 0.09).sqrt() / 0.01;
        assert!((&b.matrix - &a.matrix * ratio).amax() < 1e-14 * b.matrix.amax());
    }

    #[test]
    fn nonpositive_delta_is_rejected() {
        let m = appendix_b_cos(0.01, 0.01).unwrap();
        let g = UniformGrid::new(4).unwrap();
        let mut d = vec![0.5; g.len()];
        d[3] = -0.1;
        let err = assemble_with_deltas(&m, -1.0, &g, [d.clone(), d]).unwrap_err();
        assert!(matches!(err, Error::NotBelowEssentialSpectrum { .. }));
        assert!(matches!(
            eigenvalue_count(&Friedrichs::with_defaults(&m).unwrap(), -1.0, 26),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn exchange_with_mixed_form_factors() {
        let m = appendix_b_sin(1.0, 1.0)
            .unwrap()
            .with_form_factor(Channel::Two, FormFactor::cos_form(1.0, [0.2, 0.0, 0.1]));
        let fr = at_mu_zero(m);
        let block = assemble_block(&fr, -0.5, &UniformGrid::new(6).unwrap()).unwrap();
        assert!(exchange_residual(fr.model(), &block) < 1e-10);
    }

    #[test]
    fn schedule_validation() {
        let fr = at_mu_zero(appendix_b_cos(1.0, 1.0).unwrap());
        assert!(count_schedule(&fr, &[], 8).unwrap().is_empty());
        assert!(count_schedule(&fr, &[-1e-3, -1e-2], 8).is_err());
        let one = count_schedule(&fr, &[-1e-2], 8).unwrap();
        let single = eigenvalue_count(&fr, -1e-2, 8).unwrap();
        assert_eq!(one[0], single);
    }
}
