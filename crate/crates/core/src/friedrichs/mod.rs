//! The two-particle fiber operators
//! `h_alpha(p) = u_p^(alpha) - mu_alpha (., phi_alpha) phi_alpha`
//! and their Fredholm determinant
//! `Delta(p, z) = 1 - mu Lambda(p, z)`,
//! `Lambda(p, z) = int phi^2(t) / (u_p(t) - z) dt`.

mod oracle;
mod threshold;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::lattice_model::{Channel, ModelSpec, TorusPoint};
use crate::numeric::{brent_root, compass_search, minimize_on_torus};
use crate::quadrature::{PreparedSingular, QuadraticSingularity, QuadratureResult, UniformGrid};
use crate::{Error, Result};

pub use oracle::{dense_lowest_eigenvalue, discrete_bound_state, discrete_delta, fiber_matrix};
pub use threshold::{
    IdentityCheck, MinimizerAsymptotics, NearThresholdBounds, ThresholdClass, ThresholdExpansion, ThresholdKind,
    ZeroEigenvalueCheck,
};

/// Numerical parameters of the fiber analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FriedrichsSettings {
    /// Points per axis of the quadrature grid for `Lambda`.
    pub quad_n: usize,
    /// Points per axis of the scan grid used by [`Friedrichs::slice_extrema`].
    pub scan_n: usize,
    /// Absolute tolerance on bound-state energies.
    pub root_tol: f64,
    /// Relative tolerance for `mu == mu0` and `|phi(0)| == 0` decisions.
    pub class_tol: f64,
    /// Shift below the threshold used when `Lambda(p, m)` diverges.
    pub threshold_shift: f64,
}

impl Default for FriedrichsSettings {
    fn default() -> Self {
        FriedrichsSettings {
            quad_n: 32,
            scan_n: 24,
            root_tol: 1e-12,
            class_tol: 1e-10,
            threshold_shift: 1e-8,
        }
    }
}

/// Minimum, maximum and minimiser of the fiber dispersion `u_p^(alpha)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceExtrema {
    pub channel: Channel,
    pub p: TorusPoint,
    pub m: f64,
    pub m_big: f64,
    pub minimizer: TorusPoint,
}

/// Fiber data reused across several energies `z` at fixed `(alpha, p)`.
pub struct Slice {
    pub channel: Channel,
    pub p: TorusPoint,
    /// `m_alpha(p)`
    pub m: f64,
    pub minimizer: TorusPoint,
    pub hessian: Matrix3<f64>,
    /// `u_p(t) - m` on the quadrature grid.
    excess: Vec<f64>,
    prepared: PreparedSingular,
}

impl Slice {
    /// Whether the minimum is non-degenerate (positive definite Hessian).
    pub fn is_nondegenerate(&self) -> bool {
        SymmetricEigen::new(self.hessian).eigenvalues.min() > 1e-10
    }
}

/// Sample of the negative bound-state branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSample {
    pub p: TorusPoint,
    pub z: Option<f64>,
}

/// The negative eigenvalue `z_alpha(p)` of `h_alpha(p)` sampled over a p-grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundStateBranch {
    pub channel: Channel,
    pub mu: f64,
    pub grid_n: usize,
    pub samples: Vec<BranchSample>,
}

impl BoundStateBranch {
    pub fn present(&self) -> impl Iterator<Item = (&TorusPoint, f64)> {
        self.samples.iter().filter_map(|s| s.z.map(|z| (&s.p, z)))
    }

    pub fn extremes(&self) -> Option<(f64, f64)> {
        self.present().fold(None, |acc, (_, z)| match acc {
            None => Some((z, z)),
            Some((lo, hi)) => Some((lo.min(z), hi.max(z))),
        })
    }
}

/// Result of the coupling-constant maximisation `max_p 1/Lambda(p, 0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuMax {
    pub value: f64,
    pub argmax: TorusPoint,
    pub grid_n: usize,
    /// Best value on the grid before local refinement.
    pub grid_value: f64,
}

/// Evaluator for the fiber operators of one model on a fixed quadrature grid.
#[derive(Clone)]
pub struct Friedrichs {
    model: ModelSpec,
    settings: FriedrichsSettings,
    grid: UniformGrid,
    axis: Vec<f64>,
    phi_sq: [Vec<f64>; 2],
}

impl Friedrichs {
    pub fn new(model: &ModelSpec, settings: FriedrichsSettings) -> Result<Self> {
        let grid = UniformGrid::new(settings.quad_n)?;
        UniformGrid::new(settings.scan_n)?;
        let phi_sq = Channel::BOTH.map(|ch| {
            let phi = model.phi(ch);
            (0..grid.len())
                .into_par_iter()
                .map(|idx| phi.eval(&grid.node(idx)).powi(2))
                .collect::<Vec<f64>>()
        });
        for ch in Channel::BOTH {
            if phi_sq[ch.index()].iter().all(|v| *v == 0.0) {
                return Err(Error::Model(format!("form factor {ch} vanishes on the grid")));
            }
        }
        Ok(Friedrichs {
            model: model.clone(),
            axis: grid.axis(),
            grid,
            settings,
            phi_sq,
        })
    }

    pub fn with_defaults(model: &ModelSpec) -> Result<Self> {
        Self::new(model, FriedrichsSettings::default())
    }

    pub fn model(&self) -> &ModelSpec {
        &self.model
    }

    pub fn settings(&self) -> &FriedrichsSettings {
        &self.settings
    }

    pub fn grid(&self) -> &UniformGrid {
        &self.grid
    }

    /// Fiber dispersion values on the quadrature grid.
    fn slice_values(&self, channel: Channel, p: &TorusPoint) -> Vec<f64> {
        let d = self.model.dispersion();
        let n = self.grid.n();
        match d.slice_axis_tables(channel, p, &self.axis) {
            Some([a, b, c]) => {
                let mut v = Vec::with_capacity(self.grid.len());
                for ai in &a {
                    for bj in &b {
                        for ck in &c {
                            v.push(ai + bj + ck);
                        }
                    }
                }
                debug_assert_eq!(v.len(), n * n * n);
                v
            }
            None => (0..self.grid.len())
                .into_par_iter()
                .map(|idx| d.slice(channel, p, &self.grid.node(idx)))
                .collect(),
        }
    }

    fn refine_minimum(
        &self,
        channel: Channel,
        p: &TorusPoint,
        start: TorusPoint,
    ) -> Result<(TorusPoint, f64, Matrix3<f64>)> {
        let d = self.model.dispersion();
        let (x, jet) = minimize_on_torus(|t| d.slice_jet(channel, p, t), start.coords(), d.jet_tolerance(), 100)
            .map_err(|e| match e {
                Error::NoConvergence { what, detail } => Error::NoConvergence {
                    what,
                    detail: format!("{detail}; grid start {:?}", start.coords()),
                },
                other => other,
            })?;
        let h = Matrix3::from_fn(|i, j| jet.2[i][j]);
        Ok((TorusPoint::new(x), jet.0, (h + h.transpose()) * 0.5))
    }

    /// Prepares the fiber at `(channel, p)` for repeated `Lambda` evaluations.
    pub fn slice(&self, channel: Channel, p: &TorusPoint) -> Result<Slice> {
        let values = self.slice_values(channel, p);
        let (argmin, _) = values.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        );
        let (minimizer, m, hessian) = self.refine_minimum(channel, p, self.grid.node(argmin))?;
        let m = m.min(values[argmin]);
        let excess: Vec<f64> = values.iter().map(|v| v - m).collect();
        let phi = self.model.phi(channel);
        let phi_c = phi.eval(&minimizer);
        let grad_phi = phi.gradient(&minimizer);
        let prepared = PreparedSingular::new(
            &self.grid,
            self.phi_sq[channel.index()].clone(),
            &QuadraticSingularity {
                center: minimizer,
                hessian,
            },
            phi_c * phi_c,
            grad_phi.map(|g| 2.0 * phi_c * g),
        )?;
        Ok(Slice {
            channel,
            p: *p,
            m,
            minimizer,
            hessian,
            excess,
            prepared,
        })
    }

    /// Grid scan followed by damped-Newton refinement of the minimum and
    /// maximum of `u_p^(alpha)`.
    pub fn slice_extrema(&self, channel: Channel, p: &TorusPoint) -> Result<SliceExtrema> {
        let scan = UniformGrid::new(self.settings.scan_n)?;
        let d = self.model.dispersion();
        let (mut imin, mut vmin, mut imax, mut vmax) = (0, f64::INFINITY, 0, f64::NEG_INFINITY);
        for idx in 0..scan.len() {
            let v = d.slice(channel, p, &scan.node(idx));
            if v < vmin {
                imin = idx;
                vmin = v;
            }
            if v > vmax {
                imax = idx;
                vmax = v;
            }
        }
        let (minimizer, m, _) = self.refine_minimum(channel, p, scan.node(imin))?;
        let (_, neg_max) = minimize_on_torus(
            |t| {
                let (v, g, h) = d.slice_jet(channel, p, t);
                (-v, g.map(|x| -x), h.map(|r| r.map(|x| -x)))
            },
            scan.node(imax).coords(),
            d.jet_tolerance(),
            100,
        )?;
        Ok(SliceExtrema {
            channel,
            p: *p,
            m: m.min(vmin),
            m_big: (-neg_max.0).max(vmax),
            minimizer,
        })
    }

    /// `Lambda(p, z)` for a prepared fiber; `z` may not exceed `m_alpha(p)`.
    pub fn lambda_on(&self, slice: &Slice, z: f64) -> Result<QuadratureResult> {
        let eps = slice.m - z;
        let slack = 1e-14 * slice.m.abs().max(1.0);
        if eps < -slack || z.is_nan() {
            return Err(Error::AboveThreshold { z, threshold: slice.m });
        }
        slice.prepared.integrate(&slice.excess, eps.max(0.0))
    }

    pub fn lambda(&self, channel: Channel, p: &TorusPoint, z: f64) -> Result<QuadratureResult> {
        let s = self.slice(channel, p)?;
        self.lambda_on(&s, z)
    }

    /// `Delta_mu(p, z) = 1 - mu Lambda(p, z)`.
    pub fn delta(&self, channel: Channel, p: &TorusPoint, z: f64, mu: f64) -> Result<f64> {
        Ok(1.0 - mu * self.lambda(channel, p, z)?.value)
    }

    /// `mu_alpha^0 = 1 / Lambda_alpha(0, 0)`.
    pub fn mu_zero(&self, channel: Channel) -> Result<f64> {
        let l = self.lambda(channel, &TorusPoint::ORIGIN, 0.0)?.value;
        if !(l > 0.0) {
            return Err(Error::Model(format!("Lambda(0,0) = {l} is not positive")));
        }
        Ok(1.0 / l)
    }

    /// `max_p 1/Lambda(p, 0)`: grid scan over `grid_n^3` points and local refinement.
    pub fn mu_max(&self, channel: Channel, grid_n: usize) -> Result<MuMax> {
        if grid_n < 8 {
            return Err(Error::InvalidArgument(format!("p-grid {grid_n} must be at least 8")));
        }
        let pg = UniformGrid::new(grid_n)?;
        let lambdas = self.even_grid_map(&pg, |p| Ok(self.lambda(channel, p, 0.0)?.value))?;
        let (best, lbest) = lambdas.iter().enumerate().fold(
            (0, f64::INFINITY),
            |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) },
        );
        let (x, lmin) = compass_search(
            |x| Ok(self.lambda(channel, &TorusPoint::new(*x), 0.0)?.value),
            pg.node(best).coords(),
            lbest,
            0.5 * pg.spacing(),
            1e-7,
        )?;
        Ok(MuMax {
            value: 1.0 / lmin,
            argmax: TorusPoint::new(x),
            grid_n,
            grid_value: 1.0 / lbest,
        })
    }

    /// Evaluates `f` on every node of `pg`, using `f(-p) = f(p)`.
    pub(crate) fn even_grid_map<T, F>(&self, pg: &UniformGrid, f: F) -> Result<Vec<T>>
    where
        T: Clone + Send,
        F: Fn(&TorusPoint) -> Result<T> + Sync,
    {
        let canon: Vec<usize> = (0..pg.len()).filter(|&i| i <= pg.negated_index(i)).collect();
        let vals: Vec<Result<T>> = canon.par_iter().map(|&i| f(&pg.node(i))).collect();
        let mut out: Vec<Option<T>> = vec![None; pg.len()];
        for (&i, v) in canon.iter().zip(vals) {
            let v = v?;
            out[pg.negated_index(i)] = Some(v.clone());
            out[i] = Some(v);
        }
        Ok(out
            .into_iter()
            .map(|v| v.expect("every node is canonical or mirrored"))
            .collect())
    }

    /// `Delta` at the top of an interval: the threshold `m` itself when
    /// `Lambda(p, m)` is finite, otherwise `m - threshold_shift`.
    fn top_delta(&self, slice: &Slice, top: f64, mu: f64) -> Result<(f64, f64)> {
        match self.lambda_on(slice, top) {
            Ok(l) => Ok((top, 1.0 - mu * l.value)),
            Err(Error::VanishingDenominator { .. }) | Err(Error::NonFiniteIntegrand { .. }) => {
                let z = top - self.settings.threshold_shift;
                Ok((z, 1.0 - mu * self.lambda_on(slice, z)?.value))
            }
            Err(e) => Err(e),
        }
    }

    /// Root of `Delta(p, .)` below `top`, if `Delta(p, top) < 0`.
    fn root_below(&self, slice: &Slice, mu: f64, top: f64) -> Result<Option<f64>> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("coupling {mu} must be positive")));
        }
        let (top, d_top) = self.top_delta(slice, top, mu)?;
        if d_top >= 0.0 {
            return Ok(None);
        }
        let delta = |z: f64| -> Result<f64> { Ok(1.0 - mu * self.lambda_on(slice, z)?.value) };
        let mut step = 1.0;
        let mut lo = top - step;
        let mut d_lo = delta(lo)?;
        let mut tries = 0;
        while d_lo <= 0.0 {
            tries += 1;
            if tries > 60 {
                return Err(Error::Bracketing(format!(
                    "Delta stays nonpositive down to z = {lo} at p = {:?}",
                    slice.p.coords()
                )));
            }
            step *= 2.0;
            lo = top - step;
            d_lo = delta(lo)?;
        }
        let z = brent_root(delta, lo, top, d_lo, d_top, self.settings.root_tol, 200)?;
        Ok(Some(z))
    }

    /// Eigenvalue of `h_alpha(p)` below the threshold `m_alpha(p)`, if any.
    pub fn bound_state(&self, channel: Channel, p: &TorusPoint, mu: f64) -> Result<Option<f64>> {
        let slice = self.slice(channel, p)?;
        let m = slice.m;
        self.root_below(&slice, mu, m)
    }

    /// Negative eigenvalue of `h_alpha(p)`, if any: the branch `z_alpha(p)`.
    pub fn negative_bound_state(&self, channel: Channel, p: &TorusPoint, mu: f64) -> Result<Option<f64>> {
        let slice = self.slice(channel, p)?;
        self.root_below(&slice, mu, slice.m.min(0.0))
    }

    /// `1/Lambda(p, 0) < mu`.
    pub fn in_coupling_region(&self, channel: Channel, p: &TorusPoint, mu: f64) -> Result<bool> {
        let l = self.lambda(channel, p, 0.0)?.value;
        Ok(1.0 / l < mu)
    }

    /// Negative bound state sampled over the `grid_n^3` p-grid.
    pub fn branch(&self, channel: Channel, mu: f64, grid_n: usize) -> Result<BoundStateBranch> {
        let pg = UniformGrid::new(grid_n)?;
        let zs = self.even_grid_map(&pg, |p| self.negative_bound_state(channel, p, mu))?;
        Ok(BoundStateBranch {
            channel,
            mu,
            grid_n,
            samples: zs
                .into_iter()
                .enumerate()
                .map(|(i, z)| BranchSample { p: pg.node(i), z })
                .collect(),
        })
    }
}
