//! Threshold behaviour of the fiber at `p = 0`: resonance versus zero
//! eigenvalue, the square-root expansion of `Delta`, and the quadratic
//! vanishing in the zero-eigenvalue case.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::Friedrichs;
use crate::lattice_model::{estimate_hessian_blocks, Channel, HessianBlocks, TorusPoint};
use crate::numeric::{least_squares, Neumaier};
use crate::quadrature::UniformGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdKind {
    ZeroEnergyResonance,
    ZeroEigenvalue,
    Regular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClass {
    pub kind: ThresholdKind,
    pub phi_at_zero: f64,
    /// `Delta_mu(0, 0)` at the model's coupling.
    pub delta_at_zero: f64,
    pub mu: f64,
    pub mu_zero: f64,
}

/// Bounds `c |p| <= Delta_mu0(p, 0) <= C |p|` sampled on small `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NearThresholdBounds {
    /// `(|p|, Delta / |p|)` per sample.
    pub samples: Vec<(f64, f64)>,
    pub c_lower: f64,
    pub c_upper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdExpansion {
    pub channel: Channel,
    pub mu_zero: f64,
    pub phi_at_zero: f64,
    /// `4 sqrt 2 pi^2 mu0 phi(0)^2 / (l_alpha^{3/2} sqrt det U)`.
    pub predicted_slope: f64,
    /// Same coefficient with the other channel's curvature `l_beta`.
    pub predicted_slope_other_curvature: f64,
    /// `l1 != l2`, so the two conventions give different coefficients.
    pub curvature_conventions_differ: bool,
    pub fitted_slope: f64,
    pub fitted_linear: f64,
    pub relative_error: f64,
    /// RMS fit residual relative to the RMS of the data.
    pub fit_relative_residual: f64,
    pub z: Vec<f64>,
    pub delta: Vec<f64>,
    pub near_threshold: NearThresholdBounds,
}

/// Small-`p` behaviour of the fiber minimum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimizerAsymptotics {
    pub channel: Channel,
    /// `(l1 l2 - l^2) / (2 l_alpha)`
    pub predicted_coefficient: f64,
    /// Same with `l_beta` in the denominator.
    pub predicted_coefficient_other_curvature: f64,
    /// `(|p|, m(p) / (U p, p))`
    pub coefficient_samples: Vec<(f64, f64)>,
    pub coefficient_max_relative_error: f64,
    /// `-l / l_alpha`
    pub predicted_ratio: f64,
    /// `(|p|, |q(p) + (l / l_alpha) p|)`
    pub drift_samples: Vec<(f64, f64)>,
    /// Log-log slope of the drift; `None` when the drift sits at rounding level.
    pub drift_slope: Option<f64>,
    pub drift_at_rounding_level: bool,
}

/// Check of the identity
/// `Lambda(p) - Lambda(0) = int (2u_0 - S) S phi^2 / (4 P u_0) + 1/4 int D^2 phi^2 / (P u_0)`
/// with `S = u_p + u_{-p}`, `D = u_p - u_{-p}`, `P = u_p u_{-p}`, all at `z = 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub grid_n: usize,
    pub samples: Vec<TorusPoint>,
    /// `max |Delta(p,0) - (-mu0 * identity)|` with both sides summed on the same grid.
    pub max_discrepancy: f64,
    /// Same, with the sign of the `D^2` term reversed.
    pub max_discrepancy_reversed_sign: f64,
    /// `max |Delta(p,0)|` from the production quadrature minus the identity value.
    pub max_quadrature_difference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZeroEigenvalueCheck {
    pub channel: Channel,
    pub mu_zero: f64,
    pub delta_at_zero: f64,
    /// `(|p|, direction index, Delta / |p|^2)`
    pub ray_samples: Vec<(f64, usize, f64)>,
    pub c_lower: f64,
    /// Least-squares coefficient of `Delta ~ c |p|^2` per ray direction.
    pub ray_fits: Vec<f64>,
    /// `min Delta_mu0(p, 0)` over grid points with `|p| >= 0.5`.
    pub off_neighborhood_floor: f64,
    pub identity: IdentityCheck,
}

fn ray_directions() -> Vec<[f64; 3]> {
    let s2 = 1.0 / 2f64.sqrt();
    let s3 = 1.0 / 3f64.sqrt();
    vec![
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [0.0, 0.0, 1.0],
        [s3, s3, s3],
        [s2, -s2, 0.0],
    ]
}

fn along(dir: &[f64; 3], r: f64) -> TorusPoint {
    TorusPoint::new([dir[0] * r, dir[1] * r, dir[2] * r])
}

impl Friedrichs {
    pub fn classify_threshold(&self, channel: Channel) -> Result<ThresholdClass> {
        let mu0 = self.mu_zero(channel)?;
        let mu = self.model.mu(channel);
        let phi0 = self.model.phi(channel).value_at_zero();
        let delta0 = 1.0 - mu * self.lambda(channel, &TorusPoint::ORIGIN, 0.0)?.value;
        let tol = self.settings.class_tol;
        let at_threshold = ((mu - mu0) / mu0).abs() <= tol;
        let kind = match (at_threshold, phi0.abs() > tol) {
            (true, true) => ThresholdKind::ZeroEnergyResonance,
            (true, false) => ThresholdKind::ZeroEigenvalue,
            _ => ThresholdKind::Regular,
        };
        Ok(ThresholdClass {
            kind,
            phi_at_zero: phi0,
            delta_at_zero: delta0,
            mu,
            mu_zero: mu0,
        })
    }

    fn require(&self, channel: Channel, kind: ThresholdKind) -> Result<ThresholdClass> {
        let class = self.classify_threshold(channel)?;
        if class.kind != kind {
            return Err(Error::InvalidArgument(format!(
                "channel {channel} threshold is {:?}, this check needs {kind:?}",
                class.kind
            )));
        }
        Ok(class)
    }

    fn blocks(&self) -> Result<HessianBlocks> {
        estimate_hessian_blocks(&self.model, 1e-3)
    }

    /// Fits `Delta_mu0(0, -z) = a sqrt z + b z` on `z in [1e-6, 1e-3]` and
    /// compares `a` with the predicted coefficient.
    pub fn threshold_expansion_check(&self, channel: Channel) -> Result<ThresholdExpansion> {
        let class = self.require(channel, ThresholdKind::ZeroEnergyResonance)?;
        let hb = self.blocks()?;
        let mu0 = class.mu_zero;
        let phi0 = class.phi_at_zero;
        let l_own = hb.l(channel);
        let l_other = hb.l(channel.other());
        let coeff = |l: f64| 4.0 * 2f64.sqrt() * PI * PI * mu0 * phi0 * phi0 / (l.powf(1.5) * hb.det_u().sqrt());
        let predicted = coeff(l_own);

        let slice = self.slice(channel, &TorusPoint::ORIGIN)?;
        let count = 16;
        let z: Vec<f64> = (0..count)
            .map(|k| 1e-6 * 1e3f64.powf(k as f64 / (count - 1) as f64))
            .collect();
        let delta: Vec<f64> = z
            .iter()
            .map(|&z| Ok(1.0 - mu0 * self.lambda_on(&slice, -z)?.value))
            .collect::<Result<_>>()?;
        let (c, rms) = least_squares(&[z.iter().map(|v| v.sqrt()).collect(), z.clone()], &delta)?;
        let data_rms = (delta.iter().map(|d| d * d).sum::<f64>() / delta.len() as f64).sqrt();
        let fit_relative_residual = rms / data_rms;
        if fit_relative_residual > 0.1 {
            return Err(Error::CheckFailed(format!(
                "square-root fit residual {fit_relative_residual:.3} exceeds 10%; refine the quadrature"
            )));
        }

        let mut samples = Vec::new();
        for dir in ray_directions() {
            for r in [0.02, 0.05, 0.1, 0.2] {
                let d = self.delta(channel, &along(&dir, r), 0.0, mu0)?;
                samples.push((r, d / r));
            }
        }
        let c_lower = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let c_upper = samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);

        Ok(ThresholdExpansion {
            channel,
            mu_zero: mu0,
            phi_at_zero: phi0,
            predicted_slope: predicted,
            predicted_slope_other_curvature: coeff(l_other),
            curvature_conventions_differ: (hb.l1 - hb.l2).abs() > 1e-6 * hb.l1.abs(),
            fitted_slope: c[0],
            fitted_linear: c[1],
            relative_error: ((c[0] - predicted) / predicted).abs(),
            fit_relative_residual,
            z,
            delta,
            near_threshold: NearThresholdBounds {
                samples,
                c_lower,
                c_upper,
            },
        })
    }

    /// Quadratic coefficient of `m_alpha(p)` and the cubic drift of the
    /// minimiser from its linear approximation.
    pub fn minimizer_asymptotics(&self, channel: Channel) -> Result<MinimizerAsymptotics> {
        let hb = self.blocks()?;
        let l_own = hb.l(channel);
        let l_other = hb.l(channel.other());
        let num = hb.l1 * hb.l2 - hb.l * hb.l;
        let predicted = num / (2.0 * l_own);
        let ratio = -hb.l / l_own;
        let dir = {
            let v: [f64; 3] = [1.0, 0.6, -0.3];
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        };
        let mut coefficient_samples = Vec::new();
        for r in [0.01, 0.02, 0.03, 0.05] {
            let p = along(&dir, r);
            let e = self.slice_extrema(channel, &p)?;
            coefficient_samples.push((r, e.m / hb.quadratic_form(&p)));
        }
        let coefficient_max_relative_error = coefficient_samples
            .iter()
            .map(|(_, c)| ((c - predicted) / predicted).abs())
            .fold(0.0, f64::max);

        let mut drift_samples = Vec::new();
        let count = 8;
        for k in 0..count {
            let r = 0.01 * 20f64.powf(k as f64 / (count - 1) as f64);
            let p = along(&dir, r);
            let e = self.slice_extrema(channel, &p)?;
            let q = e.minimizer.coords();
            let pc = p.coords();
            let drift = (0..3).map(|i| (q[i] - ratio * pc[i]).powi(2)).sum::<f64>().sqrt();
            drift_samples.push((r, drift));
        }
        // The estimated ratio carries an error of order the Hessian residual,
        // which shows up as a drift linear in |p|.
        let floor = |r: f64| 1e-12 + hb.residual * r;
        let usable: Vec<&(f64, f64)> = drift_samples.iter().filter(|s| s.1 > floor(s.0)).collect();
        let drift_at_rounding_level = usable.len() < 3;
        let drift_slope = if drift_at_rounding_level {
            None
        } else {
            let x: Vec<f64> = usable.iter().map(|s| s.0.ln()).collect();
            let y: Vec<f64> = usable.iter().map(|s| s.1.ln()).collect();
            let (c, _) = least_squares(&[x, vec![1.0; y.len()]], &y)?;
            Some(c[0])
        };
        Ok(MinimizerAsymptotics {
            channel,
            predicted_coefficient: predicted,
            predicted_coefficient_other_curvature: num / (2.0 * l_other),
            coefficient_samples,
            coefficient_max_relative_error,
            predicted_ratio: ratio,
            drift_samples,
            drift_slope,
            drift_at_rounding_level,
        })
    }

    /// Both sides of the `Lambda`-difference identity summed on the same grid
    /// (the origin node omitted), at each sample `p`.
    pub fn lambda_difference_identity(
        &self,
        channel: Channel,
        samples: &[TorusPoint],
        mu0: f64,
    ) -> Result<IdentityCheck> {
        let grid: UniformGrid = *self.grid();
        let d = self.model.dispersion();
        let phi = self.model.phi(channel);
        let origin = grid.origin_index();
        let w = grid.weight();
        let mut max_discrepancy: f64 = 0.0;
        let mut max_reversed: f64 = 0.0;
        let mut max_quad: f64 = 0.0;
        for p in samples {
            let mp = -*p;
            let (mut direct, mut base, mut first, mut second) = (
                Neumaier::default(),
                Neumaier::default(),
                Neumaier::default(),
                Neumaier::default(),
            );
            for idx in 0..grid.len() {
                if idx == origin {
                    continue;
                }
                let t = grid.node(idx);
                let f2 = phi.eval(&t).powi(2);
                let u0 = d.slice(channel, &TorusPoint::ORIGIN, &t);
                let up = d.slice(channel, p, &t);
                let um = d.slice(channel, &mp, &t);
                let s = up + um;
                let dd = up - um;
                let pp = up * um;
                direct.add(f2 / up);
                base.add(f2 / u0);
                first.add((2.0 * u0 - s) * s * f2 / (4.0 * pp * u0));
                second.add(dd * dd * f2 / (4.0 * pp * u0));
            }
            let lhs = (direct.value() - base.value()) * w;
            let rhs = (first.value() + second.value()) * w;
            let rhs_reversed = (first.value() - second.value()) * w;
            max_discrepancy = max_discrepancy.max(mu0 * (lhs - rhs).abs());
            max_reversed = max_reversed.max(mu0 * (lhs - rhs_reversed).abs());
            let production = self.delta(channel, p, 0.0, mu0)?;
            max_quad = max_quad.max((production + mu0 * rhs).abs());
        }
        Ok(IdentityCheck {
            grid_n: grid.n(),
            samples: samples.to_vec(),
            max_discrepancy,
            max_discrepancy_reversed_sign: max_reversed,
            max_quadrature_difference: max_quad,
        })
    }

    /// Quadratic vanishing of `Delta_mu0(p, 0)` at `p = 0` in the zero-eigenvalue case.
    pub fn zero_eigenvalue_quadratic_check(&self, channel: Channel) -> Result<ZeroEigenvalueCheck> {
        let class = self.require(channel, ThresholdKind::ZeroEigenvalue)?;
        let mu0 = class.mu_zero;
        let radii = [0.05, 0.1, 0.2, 0.3];
        let mut ray_samples = Vec::new();
        let mut ray_fits = Vec::new();
        for (k, dir) in ray_directions().iter().enumerate() {
            let mut x = Vec::new();
            let mut y = Vec::new();
            for &r in &radii {
                let d = self.delta(channel, &along(dir, r), 0.0, mu0)?;
                ray_samples.push((r, k, d / (r * r)));
                x.push(r * r);
                y.push(d);
            }
            let (c, _) = least_squares(&[x], &y)?;
            ray_fits.push(c[0]);
        }
        let c_lower = ray_samples.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
        let fit_min = ray_fits.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(c_lower > 0.0) || !(fit_min > 0.0) {
            return Err(Error::CheckFailed(format!(
                "Delta/|p|^2 is not bounded below by a positive constant (min ratio {c_lower:e}, min fit {fit_min:e})"
            )));
        }
        let pg = UniformGrid::new(8)?;
        let floor_vals = self.even_grid_map(&pg, |p| {
            if p.norm() >= 0.5 {
                Ok(self.delta(channel, p, 0.0, mu0)?)
            } else {
                Ok(f64::INFINITY)
            }
        })?;
        let off_neighborhood_floor = floor_vals.into_iter().fold(f64::INFINITY, f64::min);
        let samples: Vec<TorusPoint> = vec![
            TorusPoint::new([0.3, 0.0, 0.0]),
            TorusPoint::new([0.5, -0.4, 0.2]),
            TorusPoint::new([1.2, 0.7, -2.0]),
            TorusPoint::new([std::f64::consts::FRAC_PI_2, 0.0, 1.0]),
            TorusPoint::new([3.0, 3.0, 3.0]),
        ];
        let identity = self.lambda_difference_identity(channel, &samples, mu0)?;
        Ok(ZeroEigenvalueCheck {
            channel,
            mu_zero: mu0,
            delta_at_zero: 1.0 - mu0 * self.lambda(channel, &TorusPoint::ORIGIN, 0.0)?.value,
            ray_samples,
            c_lower,
            ray_fits,
            off_neighborhood_floor,
            identity,
        })
    }
}
