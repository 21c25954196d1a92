//! Periodic trapezoid quadrature on the 3-torus.
//!
//! Sums are accumulated per slab of the first axis with compensated
//! summation and then combined in a fixed order, so results do not depend on
//! the number of worker threads.

use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::lattice_model::TorusPoint;
use crate::numeric::{neumaier_sum, wrap_angle, Neumaier};
use crate::{Error, Result};

/// Uniform product grid with `n` points per axis at `-pi + 2 pi (i + 1) / n`.
///
/// `n` must be even: the origin is then a node, the node set is closed under
/// negation, and the odd-indexed nodes form the `n/2` grid used for error
/// estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformGrid {
    n: usize,
}

impl UniformGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 4 || !n.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "grid size {n} must be even and at least 4"
            )));
        }
        Ok(UniformGrid { n })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    #[inline]
    pub fn weight(&self) -> f64 {
        self.spacing().powi(3)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn coordinate(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            PI
        } else {
            -PI + self.spacing() * (i + 1) as f64
        }
    }

    pub fn axis(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.coordinate(i)).collect()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn split(&self, idx: usize) -> (usize, usize, usize) {
        let k = idx % self.n;
        let j = (idx / self.n) % self.n;
        (idx / (self.n * self.n), j, k)
    }

    pub fn node(&self, idx: usize) -> TorusPoint {
        let (i, j, k) = self.split(idx);
        TorusPoint::new([self.coordinate(i), self.coordinate(j), self.coordinate(k)])
    }

    pub fn nodes(&self) -> impl Iterator<Item = TorusPoint> + '_ {
        (0..self.len()).map(move |i| self.node(i))
    }

    #[inline]
    fn negate_axis(&self, i: usize) -> usize {
        (2 * self.n - 2 - i) % self.n
    }

    /// Index of the node `-t`.
    pub fn negated_index(&self, idx: usize) -> usize {
        let (i, j, k) = self.split(idx);
        self.index(self.negate_axis(i), self.negate_axis(j), self.negate_axis(k))
    }

    pub fn origin_index(&self) -> usize {
        let h = self.n / 2 - 1;
        self.index(h, h, h)
    }

    fn nearest_axis(&self, x: f64) -> usize {
        let m = ((x + PI) / self.spacing()).round() as isize - 1;
        m.rem_euclid(self.n as isize) as usize
    }

    pub fn nearest_index(&self, p: &TorusPoint) -> usize {
        let c = p.coords();
        self.index(
            self.nearest_axis(c[0]),
            self.nearest_axis(c[1]),
            self.nearest_axis(c[2]),
        )
    }

    /// The grid with half as many points per axis, if it exists.
    pub fn coarse(&self) -> Option<UniformGrid> {
        let m = self.n / 2;
        (m >= 2).then_some(UniformGrid { n: m })
    }
}

/// Quadrature value with the two-grid error estimate `|I_n - I_{n/2}|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error_estimate: f64,
}

/// Sum of `f(i, j, k)` over the sublattice `offset + stride * m` of an
/// `n`-point axis, in a fixed order.
fn lattice_sum<F>(n: usize, stride: usize, offset: usize, f: F) -> Result<f64>
where
    F: Fn(usize, usize, usize) -> Result<f64> + Sync,
{
    let idx: Vec<usize> = (offset..n).step_by(stride).collect();
    let slabs: Vec<Result<f64>> = idx
        .par_iter()
        .map(|&i| {
            let mut acc = Neumaier::default();
            for &j in &idx {
                for &k in &idx {
                    acc.add(f(i, j, k)?);
                }
            }
            Ok(acc.value())
        })
        .collect();
    let mut parts = Vec::with_capacity(slabs.len());
    for s in slabs {
        parts.push(s?);
    }
    Ok(neumaier_sum(parts))
}

/// Periodic trapezoid rule for a function finite at every node.
pub fn integrate_smooth<F>(f: F, grid: &UniformGrid) -> Result<QuadratureResult>
where
    F: Fn(&TorusPoint) -> f64 + Sync,
{
    let values: Vec<f64> = (0..grid.len()).into_par_iter().map(|idx| f(&grid.node(idx))).collect();
    integrate_values(&values, grid)
}

/// Trapezoid rule for precomputed node values (in [`UniformGrid::index`] order).
pub fn integrate_values(values: &[f64], grid: &UniformGrid) -> Result<QuadratureResult> {
    if values.len() != grid.len() {
        return Err(Error::InvalidArgument(format!(
            "{} values for a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    let n = grid.n();
    let at = |i: usize, j: usize, k: usize| -> Result<f64> {
        let idx = grid.index(i, j, k);
        let v = values[idx];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteIntegrand {
                node: grid.node(idx).coords(),
                value: v,
            })
        }
    };
    let fine = lattice_sum(n, 1, 0, at)? * grid.weight();
    let coarse = lattice_sum(n, 2, 1, at)? * grid.weight() * 8.0;
    Ok(QuadratureResult {
        value: fine,
        error_estimate: (fine - coarse).abs(),
    })
}

/// Local quadratic model `d(t) ~ 1/2 (t-c)^T H (t-c)` of a denominator at its zero.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSingularity {
    pub center: TorusPoint,
    pub hessian: Matrix3<f64>,
}

/// Gaussian-damped subtraction function on one grid level.
#[derive(Clone, Debug)]
struct Subtraction {
    s: f64,
    det: f64,
    q: Vec<f64>,
    e: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Level {
    stride: usize,
    offset: usize,
    weight: f64,
    puncture: Option<usize>,
    sub: Option<Subtraction>,
}

/// Precomputed data for integrating `g/(d + eps)` where `d` vanishes
/// quadratically at a single point, for several shifts `eps >= 0`.
///
/// The integrand is regularised by subtracting
/// `G(t) = (g(c) + grad g(c) . x) chi(Q/s) / (Q + eps)` with `x = t - c`,
/// `Q = x^T H x / 2` and the cutoff `chi(y) = exp(-y) (1 + y)`. The integral
/// of `G` over R^3 is known in closed form, and `chi = 1 + O(y^2)` keeps the
/// remainder bounded at the center for every `eps`.
#[derive(Clone, Debug)]
pub struct PreparedSingular {
    grid: UniformGrid,
    g: Vec<f64>,
    g_center: f64,
    levels: [Level; 2],
}

/// Closed form of `int_{R^3} chi(Q/s) / (Q + eps) dx` with
/// `chi(y) = exp(-y) (1 + y)` and `Q = x^T H x / 2`, `det = det H`.
fn damped_resolvent_integral(det: f64, s: f64, eps: f64) -> f64 {
    let a = (eps / s).sqrt();
    let erfcx = if a == 0.0 { 1.0 } else { (a * a).exp() * erfc(a) };
    let jac = 2f64.powf(1.5) / det.sqrt();
    // int exp(-Q/s) / (Q + eps)
    let plain = jac * (2.0 * PI.powf(1.5) * s.sqrt() - 2.0 * PI * PI * eps.sqrt() * erfcx);
    // (1/s) int exp(-Q/s) Q / (Q + eps) = (1/s) (int exp(-Q/s) - eps * plain)
    plain * (1.0 - eps / s) + jac * PI.powf(1.5) * s.sqrt()
}

const MAX_SHIFT_RATIO: f64 = 25.0;

impl PreparedSingular {
    pub fn new(
        grid: &UniformGrid,
        g: Vec<f64>,
        sing: &QuadraticSingularity,
        g_center: f64,
        g_gradient: [f64; 3],
    ) -> Result<Self> {
        if g.len() != grid.len() {
            return Err(Error::InvalidArgument("numerator length does not match grid".into()));
        }
        let eig = SymmetricEigen::new(sing.hessian);
        let lmin = eig.eigenvalues.min();
        let lmax = eig.eigenvalues.max();
        let det = sing.hessian.determinant();
        let c = sing.center.coords();
        let n = grid.n();
        let h = grid.spacing();
        let build = |stride: usize, offset: usize| -> Level {
            let hl = h * stride as f64;
            let nearest = {
                let a = |x: f64| {
                    // nearest index within the sublattice
                    let m = ((x + PI) / hl).round() as isize - 1;
                    let m = m.rem_euclid((n / stride) as isize) as usize;
                    offset + stride * m
                };
                grid.index(a(c[0]), a(c[1]), a(c[2]))
            };
            let near_pt = grid.node(nearest).coords();
            let dist = (0..3).fold(0.0f64, |m, i| m.max(wrap_angle(near_pt[i] - c[i]).abs()));
            let puncture = (dist < hl / 100.0).then_some(nearest);
            let rho = (4.0 * hl).min(PI / 5.5);
            let resolved = lmin > 0.0 && rho * (lmin / lmax).sqrt() >= 1.4 * hl;
            let sub = resolved.then(|| {
                let s = 0.5 * lmin * rho * rho;
                let mut q = vec![0.0; grid.len()];
                let mut e = vec![0.0; grid.len()];
                for i in (offset..n).step_by(stride) {
                    for j in (offset..n).step_by(stride) {
                        for k in (offset..n).step_by(stride) {
                            let idx = grid.index(i, j, k);
                            let t = [grid.coordinate(i), grid.coordinate(j), grid.coordinate(k)];
                            let x = [
                                wrap_angle(t[0] - c[0]),
                                wrap_angle(t[1] - c[1]),
                                wrap_angle(t[2] - c[2]),
                            ];
                            let mut qq = 0.0;
                            for a in 0..3 {
                                for b in 0..3 {
                                    qq += sing.hessian[(a, b)] * x[a] * x[b];
                                }
                            }
                            qq *= 0.5;
                            q[idx] = qq;
                            let ratio = qq / s;
                            e[idx] = if ratio < 60.0 {
                                let lin = g_gradient[0] * x[0] + g_gradient[1] * x[1] + g_gradient[2] * x[2];
                                (g_center + lin) * (-ratio).exp() * (1.0 + ratio)
                            } else {
                                0.0
                            };
                        }
                    }
                }
                Subtraction { s, det, q, e }
            });
            Level {
                stride,
                offset,
                weight: hl.powi(3),
                puncture,
                sub,
            }
        };
        let fine = build(1, 0);
        let coarse = build(2, 1);
        Ok(PreparedSingular {
            grid: *grid,
            g,
            g_center,
            levels: [fine, coarse],
        })
    }

    /// Whether the subtraction is used on the fine level for this shift.
    pub fn uses_subtraction(&self, eps: f64) -> bool {
        self.levels[0]
            .sub
            .as_ref()
            .is_some_and(|s| eps / s.s <= MAX_SHIFT_RATIO)
    }

    fn level_value(&self, level: &Level, d: &[f64], eps: f64) -> Result<f64> {
        let grid = &self.grid;
        let sub = level.sub.as_ref().filter(|s| eps / s.s <= MAX_SHIFT_RATIO);
        let sum = lattice_sum(grid.n(), level.stride, level.offset, |i, j, k| {
            let idx = grid.index(i, j, k);
            if level.puncture == Some(idx) && (sub.is_some() || eps == 0.0) {
                return Ok(0.0);
            }
            let den = d[idx] + eps;
            if den < 1e-12 {
                return Err(Error::VanishingDenominator {
                    node: grid.node(idx).coords(),
                    value: den,
                });
            }
            let mut v = self.g[idx] / den;
            if let Some(s) = sub {
                v -= s.e[idx] / (s.q[idx] + eps);
            }
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand {
                    node: grid.node(idx).coords(),
                    value: v,
                });
            }
            Ok(v)
        })?;
        let mut value = sum * level.weight;
        if let Some(s) = sub {
            value += self.g_center * damped_resolvent_integral(s.det, s.s, eps);
        }
        Ok(value)
    }

    /// Integral of `g/(d + eps)` for denominator values `d` on the grid.
    pub fn integrate(&self, d: &[f64], eps: f64) -> Result<QuadratureResult> {
        if d.len() != self.grid.len() {
            return Err(Error::InvalidArgument("denominator length does not match grid".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("shift {eps} must be nonnegative")));
        }
        let fine = self.level_value(&self.levels[0], d, eps)?;
        let coarse = self.level_value(&self.levels[1], d, eps)?;
        Ok(QuadratureResult {
            value: fine,
            error_estimate: (fine - coarse).abs(),
        })
    }
}

/// Integral of `g(t) / (d(t) + eps)` over the torus, where `d >= 0` vanishes
/// quadratically at `sing.center` with Hessian `sing.hessian`.
pub fn integrate_with_quadratic_singularity<G, D>(
    g: G,
    d: D,
    sing: &QuadraticSingularity,
    eps: f64,
    grid: &UniformGrid,
) -> Result<QuadratureResult>
where
    G: Fn(&TorusPoint) -> f64 + Sync,
    D: Fn(&TorusPoint) -> f64 + Sync,
{
    let (gv, dv): (Vec<f64>, Vec<f64>) = (0..grid.len())
        .into_par_iter()
        .map(|idx| {
            let t = grid.node(idx);
            (g(&t), d(&t))
        })
        .unzip();
    let c = sing.center;
    let g_center = g(&c);
    let h = 1e-6;
    let mut grad = [0.0; 3];
    for (i, gi) in grad.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = h;
        let e = TorusPoint::new(e);
        *gi = (g(&(c + e)) - g(&(c - e))) / (2.0 * h);
    }
    PreparedSingular::new(grid, gv, sing, g_center, grad)?.integrate(&dv, eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn u0(t: &TorusPoint) -> f64 {
        t.coords().iter().map(|x| 2.0 * (1.0 - x.cos())).sum()
    }

    const WATSON_HALF: f64 = 0.505_462_019_717_326 / 2.0;

    #[test]
    fn grid_nodes_and_negation() {
        let g = UniformGrid::new(8).unwrap();
        assert_eq!(g.coordinate(7), PI);
        assert_eq!(g.node(g.origin_index()).coords(), [0.0; 3]);
        for idx in 0..g.len() {
            let neg = g.negated_index(idx);
            assert!(g.node(neg).torus_distance(&-g.node(idx)) < 1e-14);
            assert_eq!(g.nearest_index(&g.node(idx)), idx);
        }
        assert!(UniformGrid::new(7).is_err());
        assert!(UniformGrid::new(2).is_err());
    }

    #[test]
    fn trapezoid_constants_and_cosines() {
        let g = UniformGrid::new(8).unwrap();
        let r = integrate_smooth(|_| 1.0, &g).unwrap();
        assert!((r.value - (2.0 * PI).powi(3)).abs() < 1e-11);
        let r = integrate_smooth(|t| t.get(0).cos(), &g).unwrap();
        assert!(r.value.abs() < 1e-13);
    }

    #[test]
    fn smooth_refinement() {
        let f = |t: &TorusPoint| 1.0 / (u0(t) + 1.0);
        let a = integrate_smooth(f, &UniformGrid::new(32).unwrap()).unwrap();
        let b = integrate_smooth(f, &UniformGrid::new(64).unwrap()).unwrap();
        assert!((a.value - b.value).abs() < 1e-10);
    }

    #[test]
    fn non_finite_node_is_reported() {
        let g = UniformGrid::new(4).unwrap();
        let err = integrate_smooth(|t| if t.get(0) == PI { f64::NAN } else { 1.0 }, &g).unwrap_err();
        assert!(matches!(err, Error::NonFiniteIntegrand { .. }));
    }

    #[test]
    fn watson_integral() {
        let sing = QuadraticSingularity {
            center: TorusPoint::ORIGIN,
            hessian: Matrix3::identity() * 2.0,
        };
        let exact = (2.0 * PI).powi(3) * WATSON_HALF;
        let r32 =
            integrate_with_quadratic_singularity(|_| 1.0, u0, &sing, 0.0, &UniformGrid::new(32).unwrap()).unwrap();
        let r64 =
            integrate_with_quadratic_singularity(|_| 1.0, u0, &sing, 0.0, &UniformGrid::new(64).unwrap()).unwrap();
        assert!(((r64.value - exact) / exact).abs() < 1e-3, "{} vs {}", r64.value, exact);
        assert!(((r32.value - r64.value) / r64.value).abs() < 1e-3);
    }

    #[test]
    fn zero_numerator() {
        let sing = QuadraticSingularity {
            center: TorusPoint::ORIGIN,
            hessian: Matrix3::identity() * 2.0,
        };
        let r = integrate_with_quadratic_singularity(|_| 0.0, u0, &sing, 0.0, &UniformGrid::new(16).unwrap()).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn spurious_zero_is_a_fault() {
        let sing = QuadraticSingularity {
            center: TorusPoint::ORIGIN,
            hessian: Matrix3::identity() * 2.0,
        };
        let d = |t: &TorusPoint| u0(t) * u0(&(*t - TorusPoint::splat(PI)));
        let err = integrate_with_quadratic_singularity(|_| 1.0, d, &sing, 0.0, &UniformGrid::new(16).unwrap());
        assert!(matches!(err, Err(Error::VanishingDenominator { .. })));
    }

    #[test]
    fn resolvent_closed_form() {
        let (det, s) = (8.0, 0.3);
        for eps in [0.0, 0.05, 2.0] {
            let exact = damped_resolvent_integral(det, s, eps);
            let m = 200_000;
            let rmax = 12.0 * s.sqrt();
            let dr = rmax / m as f64;
            let radial: f64 = (0..m)
                .map(|i| {
                    let r = (i as f64 + 0.5) * dr;
                    let y = r * r / s;
                    4.0 * PI * r * r * (-y).exp() * (1.0 + y) / (r * r + eps) * dr
                })
                .sum();
            let direct = 2f64.powf(1.5) / det.sqrt() * radial;
            assert!((exact - direct).abs() < 1e-8 * direct, "{eps}: {exact} vs {direct}");
        }
    }
}
