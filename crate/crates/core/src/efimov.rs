//! The Efimov constant `U_0` from the one-dimensional Sobolev-type
//! operators, and the growth fit of `N(z)` against `|log|z||`.
//!
//! The Sobolev kernel is `S_12(x; t) = (2 pi)^-2 u12 / (cosh(x + r12) + s12 t)`
//! for `x` real and `t = <xi, eta>` on the unit sphere. Its Legendre
//! projections `K_l(x)` give a difference kernel per degree; their Fourier
//! transforms `lambda_l(y)` are the eigenvalues of `S_hat(y)`.

use std::f64::consts::PI;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::birman_schwinger::{CountResult, COUNT_TOLERANCE};
use crate::lattice_model::HessianBlocks;
use crate::linalg::{singular_values, symmetric_eigenvalues};
use crate::numeric::{brent_root, least_squares};
use crate::{Error, Result};

/// Parameters of the Sobolev-type operator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevParams {
    pub u12: f64,
    pub s12: f64,
    pub r12: f64,
}

/// `u12 = sqrt(l1 l2 / (l1 l2 - l^2))`, `s12 = l / sqrt(l1 l2)`,
/// `r12 = log(l1 / l2) / 2`.
pub fn sobolev_params(l1: f64, l2: f64, l: f64) -> Result<SobolevParams> {
    if !(l1 > 0.0 && l2 > 0.0) || !l1.is_finite() || !l2.is_finite() {
        return Err(Error::InvalidArgument(format!("l1 = {l1}, l2 = {l2} must be positive")));
    }
    if !(l != 0.0 && l.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "mixed coefficient l = {l} must be nonzero"
        )));
    }
    let prod = l1 * l2;
    let gap = prod - l * l;
    if !(gap > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "l1 l2 = {prod} must exceed l^2 = {}",
            l * l
        )));
    }
    Ok(SobolevParams {
        u12: (prod / gap).sqrt(),
        s12: l / prod.sqrt(),
        r12: 0.5 * (l1.ln() - l2.ln()),
    })
}

/// Parameters from estimated Hessian blocks.
pub fn sobolev_params_from_hessian(h: &HessianBlocks) -> Result<SobolevParams> {
    sobolev_params(h.l1, h.l2, h.l)
}

/// Half-width of the `x` window in the Fourier integral.
const FOURIER_WINDOW: f64 = 46.0;
const FOURIER_STEP: f64 = 0.02;
/// Agreement required between `quad_n` and `quad_n / 2` Gauss rules.
const QUAD_AGREEMENT: f64 = 1e-8;
pub const MIN_QUAD_N: usize = 32;

fn gauss_rule(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = NonZeroUsize::new(n).ok_or_else(|| Error::InvalidArgument("empty Gauss rule".into()))?;
    let rule = GaussLegendre::new(n);
    Ok(rule.iter().map(|&(x, w)| (x, w)).unzip())
}

/// `P_0(t), ..., P_lmax(t)`.
fn legendre_all(l_max: usize, t: f64) -> Vec<f64> {
    let mut p = Vec::with_capacity(l_max + 1);
    p.push(1.0);
    if l_max >= 1 {
        p.push(t);
    }
    for l in 2..=l_max {
        let lf = l as f64;
        let next = ((2.0 * lf - 1.0) * t * p[l - 1] - (lf - 1.0) * p[l - 2]) / lf;
        p.push(next);
    }
    p
}

/// Trapezoid nodes on `[0, FOURIER_WINDOW]` with half weight at the origin;
/// the integrand is even so the full-line integral is twice the sum.
struct FourierNodes {
    x: Vec<f64>,
    w: Vec<f64>,
    cosh: Vec<f64>,
}

impl FourierNodes {
    fn new() -> Self {
        let mut m = (FOURIER_WINDOW / FOURIER_STEP).ceil() as usize;
        m += m % 2;
        let h = FOURIER_WINDOW / m as f64;
        let x: Vec<f64> = (0..=m).map(|j| j as f64 * h).collect();
        let w: Vec<f64> = (0..=m).map(|j| if j == 0 { h } else { 2.0 * h }).collect();
        let cosh = x.iter().map(|v| v.cosh()).collect();
        FourierNodes { x, w, cosh }
    }
}

/// Signed Legendre-projected symbol at one frequency for a given rule.
fn degree_values_with_rule(
    p: &SobolevParams,
    y: f64,
    l_max: usize,
    nodes: &FourierNodes,
    rule: &(Vec<f64>, Vec<f64>),
) -> Vec<f64> {
    let cos_row: Vec<f64> = nodes.x.iter().zip(&nodes.w).map(|(x, w)| w * (y * x).cos()).collect();
    let scale = 2.0 * PI * p.u12 / (4.0 * PI * PI);
    let mut out = vec![0.0; l_max + 1];
    for (&t, &wt) in rule.0.iter().zip(&rule.1) {
        let c = p.s12 * t;
        let f: f64 = cos_row.iter().zip(&nodes.cosh).map(|(a, ch)| a / (ch + c)).sum();
        let leg = legendre_all(l_max, t);
        for (o, pl) in out.iter_mut().zip(leg) {
            *o += wt * pl * f;
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Evaluator of `lambda_l(y)` with cached quadrature data.
pub struct SymbolEvaluator {
    params: SobolevParams,
    l_max: usize,
    nodes: FourierNodes,
    fine: (Vec<f64>, Vec<f64>),
    coarse: (Vec<f64>, Vec<f64>),
}

impl SymbolEvaluator {
    pub fn new(params: SobolevParams, l_max: usize, quad_n: usize) -> Result<Self> {
        if quad_n < MIN_QUAD_N {
            return Err(Error::InvalidArgument(format!(
                "quad_n = {quad_n} is below {MIN_QUAD_N}"
            )));
        }
        if !(params.s12.abs() < 1.0) || !(params.u12 > 0.0) {
            return Err(Error::InvalidArgument(format!("invalid Sobolev parameters {params:?}")));
        }
        Ok(SymbolEvaluator {
            params,
            l_max,
            nodes: FourierNodes::new(),
            fine: gauss_rule(quad_n)?,
            coarse: gauss_rule(quad_n / 2)?,
        })
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    /// `lambda_0(y), ..., lambda_lmax(y)` (signed). Fails when the two
    /// Gauss rules disagree by more than `1e-8`.
    pub fn degree_values(&self, y: f64) -> Result<Vec<f64>> {
        let fine = degree_values_with_rule(&self.params, y, self.l_max, &self.nodes, &self.fine);
        let coarse = degree_values_with_rule(&self.params, y, self.l_max, &self.nodes, &self.coarse);
        if let Some((l, (a, b))) = fine
            .iter()
            .zip(&coarse)
            .enumerate()
            .find(|(_, (a, b))| (*a - *b).abs() > QUAD_AGREEMENT)
        {
            return Err(Error::NoConvergence {
                what: "Legendre projection",
                detail: format!("degree {l} at y = {y}: {a} vs {b}"),
            });
        }
        Ok(fine)
    }
}

/// Eigenvalue of the block operator with its multiplicity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralValue {
    pub value: f64,
    pub degree: usize,
    pub multiplicity: usize,
}

/// Eigenvalues of `S_hat(y)` through degree `l_max`, in descending order.
/// The antidiagonal block structure contributes `+-|lambda_l(y)|`, each with
/// multiplicity `2l + 1`.
pub fn s_hat_spectrum(params: &SobolevParams, y: f64, l_max: usize, quad_n: usize) -> Result<Vec<SpectralValue>> {
    let ev = SymbolEvaluator::new(*params, l_max, quad_n)?;
    let vals = ev.degree_values(y)?;
    let mut out = Vec::with_capacity(2 * vals.len());
    for (l, v) in vals.iter().enumerate() {
        for sign in [1.0, -1.0] {
            out.push(SpectralValue {
                value: sign * v.abs(),
                degree: l,
                multiplicity: 2 * l + 1,
            });
        }
    }
    out.sort_by(|a, b| b.value.total_cmp(&a.value));
    Ok(out)
}

/// Degree-zero closed form `u sinh(y arcsin s) / (s y cosh(pi y / 2))`.
pub fn degree_zero_closed_form(params: &SobolevParams, y: f64) -> f64 {
    let (u, s) = (params.u12, params.s12);
    let a = s.asin();
    let ratio = if y.abs() < 1e-8 { a } else { (y * a).sinh() / y };
    u * ratio / (s * (PI * y / 2.0).cosh())
}

/// Closed forms of the spherical kernel `S_hat(y; t)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedForm {
    /// `(2 pi)^-2 u sinh(y arccos(s t)) / (sqrt(1 - s^2 t) sinh(pi y))`.
    Printed,
    /// `(2 pi)^-1 u sinh(y arccos(s t)) / (sqrt(1 - s^2 t^2) sinh(pi y))`.
    Corrected,
}

fn sinh_ratio(y: f64, theta: f64) -> f64 {
    if y.abs() < 1e-8 {
        theta / PI
    } else {
        (y * theta).sinh() / (PI * y).sinh()
    }
}

pub fn closed_form_kernel(form: ClosedForm, params: &SobolevParams, y: f64, t: f64) -> f64 {
    let (u, s) = (params.u12, params.s12);
    let theta = (s * t).acos();
    match form {
        ClosedForm::Printed => u * sinh_ratio(y, theta) / ((4.0 * PI * PI) * (1.0 - s * s * t).sqrt()),
        ClosedForm::Corrected => u * sinh_ratio(y, theta) / ((2.0 * PI) * (1.0 - s * s * t * t).sqrt()),
    }
}

/// Max deviation of each closed form from the Fourier route over `ys`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormCheck {
    pub printed_max_error: f64,
    pub corrected_max_error: f64,
    pub degree_zero_max_error: f64,
    pub better: ClosedForm,
}

pub fn check_closed_forms(ev: &SymbolEvaluator, ys: &[f64]) -> Result<ClosedFormCheck> {
    let rule = &ev.fine;
    let mut printed: f64 = 0.0;
    let mut corrected: f64 = 0.0;
    let mut zero: f64 = 0.0;
    for &y in ys {
        let fourier = ev.degree_values(y)?;
        for (form, worst) in [
            (ClosedForm::Printed, &mut printed),
            (ClosedForm::Corrected, &mut corrected),
        ] {
            let mut proj = vec![0.0; ev.l_max + 1];
            for (&t, &w) in rule.0.iter().zip(&rule.1) {
                let k = closed_form_kernel(form, &ev.params, y, t);
                for (o, pl) in proj.iter_mut().zip(legendre_all(ev.l_max, t)) {
                    *o += 2.0 * PI * w * pl * k;
                }
            }
            for (a, b) in proj.iter().zip(&fourier) {
                *worst = worst.max((a - b).abs());
            }
        }
        zero = zero.max((degree_zero_closed_form(&ev.params, y) - fourier[0]).abs());
    }
    Ok(ClosedFormCheck {
        printed_max_error: printed,
        corrected_max_error: corrected,
        degree_zero_max_error: zero,
        better: if corrected <= printed {
            ClosedForm::Corrected
        } else {
            ClosedForm::Printed
        },
    })
}

/// Uniform frequency grid `[-y_max, y_max]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub y_max: f64,
    pub step: f64,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        FrequencyGrid {
            y_max: 50.0,
            step: 0.05,
        }
    }
}

impl FrequencyGrid {
    fn half_points(&self) -> Result<Vec<f64>> {
        if !(self.y_max > 0.0 && self.step > 0.0 && self.step < self.y_max) {
            return Err(Error::InvalidArgument(format!("invalid frequency grid {self:?}")));
        }
        let m = (self.y_max / self.step).round() as usize;
        let h = self.y_max / m as f64;
        Ok((0..=m).map(|j| j as f64 * h).collect())
    }
}

/// `|lambda_l(y)|` on the nonnegative half of a frequency grid. The symbol
/// is even in `y`, so the full-line measure is twice the half-line one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymbolTable {
    pub params: SobolevParams,
    pub grid: FrequencyGrid,
    pub l_max: usize,
    pub quad_n: usize,
    pub y: Vec<f64>,
    /// `moduli[j][l] = |lambda_l(y_j)|`.
    pub moduli: Vec<Vec<f64>>,
}

impl SymbolTable {
    pub fn build(params: SobolevParams, grid: FrequencyGrid, l_max: usize, quad_n: usize) -> Result<Self> {
        let ev = SymbolEvaluator::new(params, l_max, quad_n)?;
        let y = grid.half_points()?;
        let moduli = y
            .par_iter()
            .map(|&y| Ok(ev.degree_values(y)?.into_iter().map(f64::abs).collect()))
            .collect::<Result<Vec<Vec<f64>>>>()?;
        Ok(SymbolTable {
            params,
            grid,
            l_max,
            quad_n,
            y,
            moduli,
        })
    }

    pub fn global_max(&self) -> f64 {
        self.moduli.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// `n(lambda, S_hat(y_j))` on every grid node.
    pub fn counts(&self, lambda: f64) -> Vec<Vec<usize>> {
        self.moduli
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(l, &v)| if v > lambda { 2 * l + 1 } else { 0 })
                    .collect()
            })
            .collect()
    }

    /// `U(lambda) = (4 pi)^-1 sum_l (2l+1) mes{y : |lambda_l(y)| > lambda}`.
    /// The measure of each superlevel set is assembled from grid intervals,
    /// with crossings located by Brent's method on the symbol itself.
    pub fn u_of_lambda(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidArgument(format!("lambda = {lambda} must be positive")));
        }
        let last = self.moduli.last().expect("nonempty grid");
        if last.iter().any(|&v| v > lambda) {
            return Err(Error::FrequencyGridTooNarrow {
                lo: -self.grid.y_max,
                hi: self.grid.y_max,
            });
        }
        let ev = SymbolEvaluator::new(self.params, self.l_max, self.quad_n)?;
        let mut total = 0.0;
        for l in 0..=self.l_max {
            let mut half = 0.0;
            for j in 0..self.y.len() - 1 {
                let (a, b) = (self.y[j], self.y[j + 1]);
                let (fa, fb) = (self.moduli[j][l] - lambda, self.moduli[j + 1][l] - lambda);
                match (fa > 0.0, fb > 0.0) {
                    (true, true) => half += b - a,
                    (false, false) => {}
                    (above_a, _) => {
                        let g = |y: f64| Ok(ev.degree_values(y)?[l].abs() - lambda);
                        let c = brent_root(g, a, b, fa, fb, 1e-12, 200)?;
                        half += if above_a { c - a } else { b - c };
                    }
                }
            }
            total += (2 * l + 1) as f64 * 2.0 * half;
        }
        Ok(total / (4.0 * PI))
    }
}

/// `U(lambda)` with the default grid degree settings; fails if the grid
/// does not cover the support.
pub fn u_of_lambda(params: &SobolevParams, lambda: f64, grid: FrequencyGrid, l_max: usize) -> Result<f64> {
    SymbolTable::build(*params, grid, l_max, MIN_QUAD_N)?.u_of_lambda(lambda)
}

/// Doubles `y_max` (at fixed step) until the count vanishes at the edge.
pub fn u_of_lambda_widening(
    params: &SobolevParams,
    lambda: f64,
    grid: FrequencyGrid,
    l_max: usize,
) -> Result<(f64, FrequencyGrid)> {
    let mut g = grid;
    for _ in 0..6 {
        match u_of_lambda(params, lambda, g, l_max) {
            Err(Error::FrequencyGridTooNarrow { .. }) => g.y_max *= 2.0,
            other => return other.map(|u| (u, g)),
        }
    }
    Err(Error::FrequencyGridTooNarrow {
        lo: -g.y_max,
        hi: g.y_max,
    })
}

/// `log(2 u12) / pi^2`.
pub fn efimov_lower_bound(params: &SobolevParams) -> f64 {
    (2.0 * params.u12).ln() / (PI * PI)
}

/// Default 1D grid size for the truncated operator on `(0, r)`.
pub fn default_grid_1d(r: f64) -> usize {
    ((8.0 * r).ceil() as usize).max(64)
}

/// `n(1, S_r)`: per degree, midpoint Nystrom of the difference kernel
/// `K_l(x - x') = (u / 2pi) int P_l(t) / (cosh(x - x' + r12) + s t) dt` on
/// `(0, r)`, counting singular values above one with multiplicity `2l + 1`.
pub fn s_r_count(params: &SobolevParams, r: f64, grid_1d_n: usize, l_max: usize) -> Result<usize> {
    Ok(s_r_count_by_degree(params, r, grid_1d_n, l_max)?.iter().sum())
}

/// Per-degree contributions to `n(1, S_r)` (already multiplied by `2l + 1`).
pub fn s_r_count_by_degree(params: &SobolevParams, r: f64, grid_1d_n: usize, l_max: usize) -> Result<Vec<usize>> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "interval length r = {r} must be positive"
        )));
    }
    if grid_1d_n < 64 {
        return Err(Error::InvalidArgument(format!("grid_1d_n = {grid_1d_n} is below 64")));
    }
    let n = grid_1d_n;
    let h = r / n as f64;
    let (tn, tw) = gauss_rule(MIN_QUAD_N)?;
    let leg: Vec<Vec<f64>> = tn.iter().map(|&t| legendre_all(l_max, t)).collect();
    let pref = params.u12 / (2.0 * PI);
    // kern[d][l] = K_l((d - (n - 1)) h), d = 0 .. 2n - 2
    let kern: Vec<Vec<f64>> = (0..2 * n - 1)
        .map(|d| {
            let x = (d as f64 - (n as f64 - 1.0)) * h;
            let ch = (x + params.r12).cosh();
            let mut out = vec![0.0; l_max + 1];
            for ((&t, &w), p) in tn.iter().zip(&tw).zip(&leg) {
                let f = w / (ch + params.s12 * t);
                for (o, pl) in out.iter_mut().zip(p) {
                    *o += pl * f;
                }
            }
            out.iter_mut().for_each(|v| *v *= pref * h);
            out
        })
        .collect();
    let symmetric = params.r12 == 0.0;
    let cut = 1.0 + COUNT_TOLERANCE;
    (0..=l_max)
        .map(|l| {
            let a = DMatrix::from_fn(n, n, |i, j| kern[i + n - 1 - j][l]);
            let rs = a
                .row_iter()
                .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            let cs = a
                .column_iter()
                .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
                .fold(0.0, f64::max);
            if (rs * cs).sqrt() <= 1.0 {
                return Ok(0);
            }
            let above = if symmetric {
                symmetric_eigenvalues(&a)?.iter().filter(|v| v.abs() > cut).count()
            } else {
                singular_values(&a)?.iter().filter(|&&v| v > cut).count()
            };
            Ok(above * (2 * l + 1))
        })
        .collect()
}

/// One point of the `S_r` sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrPoint {
    pub r: f64,
    pub grid_1d_n: usize,
    pub count: usize,
    /// `n(1, S_r) / (2 r)`.
    pub density: f64,
}

/// `n(1, S_r)` over a schedule of lengths; `grid_1d_n = None` uses
/// [`default_grid_1d`] for each `r`.
pub fn s_r_sequence(
    params: &SobolevParams,
    rs: &[f64],
    l_max: usize,
    grid_1d_n: Option<usize>,
) -> Result<Vec<SrPoint>> {
    rs.iter()
        .map(|&r| {
            let grid_1d_n = grid_1d_n.unwrap_or_else(|| default_grid_1d(r));
            let count = s_r_count(params, r, grid_1d_n, l_max)?;
            Ok(SrPoint {
                r,
                grid_1d_n,
                count,
                density: count as f64 / (2.0 * r),
            })
        })
        .collect()
}

/// Least-squares fit `N = slope |log|z|| + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NzFit {
    pub slope: f64,
    pub intercept: f64,
    pub residual_rms: f64,
    pub points_used: usize,
    /// `max |log|z|| - min |log|z||` over the points used.
    pub log_span: f64,
    /// The counts are constant or `U_0` times the span is below
    /// [`SHALLOW_GROWTH`], so the slope says nothing about `U_0`.
    pub range_too_shallow: bool,
    /// Fewer than three unflagged points: the fit uses grid-limited counts.
    pub resolution_limited: bool,
    pub counts_nondecreasing: bool,
}

/// Expected number of new eigenvalues below which a fit is uninformative.
pub const SHALLOW_GROWTH: f64 = 3.0;

pub fn fit_counts(counts: &[CountResult], u0: f64) -> Result<NzFit> {
    let unflagged: Vec<&CountResult> = counts.iter().filter(|c| !c.resolution_flag).collect();
    let (used, resolution_limited) = if unflagged.len() >= 3 {
        (unflagged, false)
    } else {
        (counts.iter().collect::<Vec<_>>(), true)
    };
    if used.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} count results; at least 3 are needed",
            used.len()
        )));
    }
    let mut pts: Vec<(f64, f64)> = used.iter().map(|c| (c.log_abs_z(), c.count as f64)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let counts_nondecreasing = pts.windows(2).all(|w| w[1].1 >= w[0].1);
    let log_span = pts.last().unwrap().0 - pts[0].0;
    let constant = pts.iter().all(|p| p.1 == pts[0].1);
    let (slope, intercept, residual_rms) = if constant {
        (0.0, pts[0].1, 0.0)
    } else {
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (c, rms) = least_squares(&[x, vec![1.0; y.len()]], &y)?;
        (c[0], c[1], rms)
    };
    Ok(NzFit {
        slope,
        intercept,
        residual_rms,
        points_used: pts.len(),
        log_span,
        range_too_shallow: constant || u0 * log_span < SHALLOW_GROWTH,
        resolution_limited,
        counts_nondecreasing,
    })
}

/// Settings of the Efimov pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfimovOptions {
    pub grid: FrequencyGrid,
    pub l_max: usize,
    pub quad_n: usize,
    pub r_schedule: Vec<f64>,
    pub grid_1d_n: Option<usize>,
}

impl Default for EfimovOptions {
    fn default() -> Self {
        EfimovOptions {
            grid: FrequencyGrid::default(),
            l_max: 8,
            quad_n: MIN_QUAD_N,
            r_schedule: vec![25.0, 50.0, 100.0, 200.0],
            grid_1d_n: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfimovEstimate {
    pub params: SobolevParams,
    pub u0: f64,
    pub lower_bound: f64,
    pub meets_lower_bound: bool,
    /// Frequency grid actually used (after any widening).
    pub grid: FrequencyGrid,
    pub l_max: usize,
    pub quad_n: usize,
    pub y: Vec<f64>,
    /// `per_degree_counts[j][l]`: contribution of degree `l` to `n(1, S_hat(y_j))`.
    pub per_degree_counts: Vec<Vec<usize>>,
    pub closed_forms: ClosedFormCheck,
    pub sr_sequence: Vec<SrPoint>,
    pub nz_fit: NzFit,
}

/// `U_0 = U(1)` together with the symbol table it came from.
pub fn efimov_constant(params: &SobolevParams, opts: &EfimovOptions) -> Result<(f64, SymbolTable)> {
    let mut grid = opts.grid;
    for _ in 0..6 {
        let table = SymbolTable::build(*params, grid, opts.l_max, opts.quad_n)?;
        match table.u_of_lambda(1.0) {
            Err(Error::FrequencyGridTooNarrow { .. }) => grid.y_max *= 2.0,
            other => return other.map(|u| (u, table)),
        }
    }
    Err(Error::FrequencyGridTooNarrow {
        lo: -grid.y_max,
        hi: grid.y_max,
    })
}

/// Assembles the estimate: `U_0`, the lower bound, the `S_r` sequence and
/// the fit of the supplied counts.
pub fn fit_nz_slope(counts: &[CountResult], params: &SobolevParams, opts: &EfimovOptions) -> Result<EfimovEstimate> {
    let (u0, table) = efimov_constant(params, opts)?;
    let nz_fit = fit_counts(counts, u0)?;
    let ev = SymbolEvaluator::new(*params, opts.l_max, opts.quad_n)?;
    let closed_forms = check_closed_forms(&ev, &[0.0, 0.25, 0.5, 1.0, 2.0, 4.0])?;
    let sr_sequence = s_r_sequence(params, &opts.r_schedule, opts.l_max, opts.grid_1d_n)?;
    let lower_bound = efimov_lower_bound(params);
    Ok(EfimovEstimate {
        params: *params,
        u0,
        lower_bound,
        meets_lower_bound: u0 >= lower_bound,
        grid: table.grid,
        l_max: table.l_max,
        quad_n: table.quad_n,
        per_degree_counts: table.counts(1.0),
        y: table.y,
        closed_forms,
        sr_sequence,
        nz_fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn appendix_b() -> SobolevParams {
        sobolev_params(2.0, 2.0, -1.0).unwrap()
    }

    fn synthetic(z: f64, count: usize) -> CountResult {
        CountResult {
            z,
            count,
            top_singular_values: vec![],
            grid_n: 20,
            tolerance: COUNT_TOLERANCE,
            resolution_flag: false,
        }
    }

    #[test]
    fn params_for_reference_model() {
        let p = appendix_b();
        assert!((p.u12 - 2.0 / 3f64.sqrt()).abs() < 1e-15);
        assert_eq!(p.s12, -0.5);
        assert_eq!(p.r12, 0.0);
        assert!(sobolev_params(1.0, 1.0, 1.0).is_err());
        assert!(sobolev_params(1.0, 2.0, 0.0).is_err());
        assert!(sobolev_params(-1.0, 2.0, 0.5).is_err());
    }

    #[test]
    fn exchange_is_bitwise_symmetric() {
        let a = sobolev_params(2.0, 3.5, -1.3).unwrap();
        let b = sobolev_params(3.5, 2.0, -1.3).unwrap();
        assert_eq!(a.u12.to_bits(), b.u12.to_bits());
        assert_eq!(a.s12.to_bits(), b.s12.to_bits());
        assert_eq!(a.r12.to_bits(), (-b.r12).to_bits());
    }

    #[test]
    fn degree_zero_matches_closed_form() {
        let p = appendix_b();
        let ev = SymbolEvaluator::new(p, 4, 32).unwrap();
        for y in [0.0, 0.3, 1.0, 3.0] {
            let v = ev.degree_values(y).unwrap()[0];
            assert!((v - degree_zero_closed_form(&p, y)).abs() < 1e-10, "y = {y}: {v}");
        }
        let lim = p.u12 * p.s12.asin() / p.s12;
        assert!((ev.degree_values(0.0).unwrap()[0] - lim).abs() < 1e-10);
    }

    #[test]
    fn corrected_closed_form_is_reproduced() {
        let ev = SymbolEvaluator::new(appendix_b(), 5, 32).unwrap();
        let check = check_closed_forms(&ev, &[0.0, 0.5, 2.0]).unwrap();
        assert_eq!(check.better, ClosedForm::Corrected);
        assert!(check.corrected_max_error < 1e-9, "{check:?}");
        assert!(check.degree_zero_max_error < 1e-9);
    }

    #[test]
    fn degrees_decay_and_vanish_far_out() {
        let ev = SymbolEvaluator::new(appendix_b(), 5, 32).unwrap();
        for y in [0.0, 0.5, 1.0, 2.0, 5.0] {
            let v = ev.degree_values(y).unwrap();
            assert!(v[5].abs() < v[0].abs(), "y = {y}: {v:?}");
        }
        let values = s_hat_spectrum(&appendix_b(), 40.0, 5, 32).unwrap();
        assert!(values.iter().all(|s| s.value.abs() < 1e-6));
        assert_eq!(values[0].value, -values[values.len() - 1].value);
    }

    #[test]
    fn u_of_lambda_monotone_and_vanishes_above_max() {
        let table = SymbolTable::build(
            appendix_b(),
            FrequencyGrid {
                y_max: 20.0,
                step: 0.05,
            },
            4,
            32,
        )
        .unwrap();
        let max = table.global_max();
        assert_eq!(table.u_of_lambda(max * 1.01).unwrap(), 0.0);
        let mut prev = f64::INFINITY;
        for lambda in [0.05, 0.1, 0.3, 0.6, 1.0, 1.1] {
            let u = table.u_of_lambda(lambda).unwrap();
            assert!(u <= prev);
            prev = u;
        }
        // Only degree zero exceeds one; its crossing is at the root of the closed form.
        let p = appendix_b();
        let g = |y: f64| Ok(degree_zero_closed_form(&p, y) - 1.0);
        let ystar = brent_root(g, 0.0, 2.0, g(0.0).unwrap(), g(2.0).unwrap(), 1e-14, 100).unwrap();
        let u0 = table.u_of_lambda(1.0).unwrap();
        assert!((u0 - 2.0 * ystar / (4.0 * PI)).abs() < 1e-9, "{u0}");
    }

    #[test]
    fn narrow_grid_is_rejected() {
        let table = SymbolTable::build(appendix_b(), FrequencyGrid { y_max: 0.2, step: 0.05 }, 2, 32).unwrap();
        assert!(matches!(
            table.u_of_lambda(1.0),
            Err(Error::FrequencyGridTooNarrow { .. })
        ));
        let (u, g) = u_of_lambda_widening(&appendix_b(), 1.0, FrequencyGrid { y_max: 0.2, step: 0.05 }, 2).unwrap();
        assert!(g.y_max > 0.4 && u > 0.0);
    }

    #[test]
    fn short_interval_has_no_count() {
        assert_eq!(s_r_count(&appendix_b(), 0.01, 64, 4).unwrap(), 0);
        let mut prev = 0;
        for r in [5.0, 10.0, 20.0] {
            let c = s_r_count(&appendix_b(), r, default_grid_1d(r), 4).unwrap();
            assert!(c >= prev, "r = {r}: {c} < {prev}");
            prev = c;
        }
        assert!(prev > 0);
    }

    #[test]
    fn shifted_kernel_uses_singular_values() {
        let p = sobolev_params(2.0, 3.0, -1.2).unwrap();
        let c = s_r_count(&p, 10.0, 80, 2).unwrap();
        let q = sobolev_params(3.0, 2.0, -1.2).unwrap();
        assert_eq!(c, s_r_count(&q, 10.0, 80, 2).unwrap());
    }

    #[test]
    fn fitter_recovers_synthetic_slope() {
        let slope = 0.0848;
        let counts: Vec<CountResult> = (2..=30)
            .map(|k| {
                let z = -(10f64).powi(-k);
                synthetic(z, (slope * z.abs().ln().abs()).round() as usize)
            })
            .collect();
        let fit = fit_counts(&counts, slope).unwrap();
        assert!((fit.slope - slope).abs() < 0.05 * slope, "{fit:?}");
        assert!(!fit.range_too_shallow && !fit.resolution_limited && fit.counts_nondecreasing);
    }

    #[test]
    fn constant_counts_are_shallow() {
        let counts: Vec<CountResult> = [1e-2, 1e-3, 1e-4].iter().map(|&z| synthetic(-z, 0)).collect();
        let fit = fit_counts(&counts, 0.066).unwrap();
        assert_eq!(fit.slope, 0.0);
        assert!(fit.range_too_shallow);
        assert!(fit_counts(&counts[..2], 0.066).is_err());
    }

    #[test]
    fn flagged_points_are_used_only_when_needed() {
        let mut counts: Vec<CountResult> = [1e-2, 1e-3, 1e-4, 1e-5].iter().map(|&z| synthetic(-z, 1)).collect();
        counts[3].count = 2;
        counts[3].resolution_flag = true;
        counts[2].resolution_flag = true;
        let fit = fit_counts(&counts, 0.066).unwrap();
        assert!(fit.resolution_limited && fit.points_used == 4 && fit.slope > 0.0);
        counts[2].resolution_flag = false;
        let fit = fit_counts(&counts, 0.066).unwrap();
        assert!(!fit.resolution_limited && fit.points_used == 3 && fit.slope == 0.0);
    }
}
