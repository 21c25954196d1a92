//! Sampled verification of the standing hypotheses on a model.

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{estimate_hessian_blocks, Channel, ModelSpec, TorusPoint};
use crate::friedrichs::{Friedrichs, FriedrichsSettings};
use crate::quadrature::UniformGrid;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub model: String,
    pub grid_n: usize,
    /// Points per axis of the q-grid paired with the p-grid for dispersion checks.
    pub pair_grid_n: usize,
    pub quad_n: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl HypothesisReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> HypothesisCheck {
    HypothesisCheck {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

/// Runs every sampled hypothesis check. Failures become report entries.
pub fn verify_hypotheses(model: &ModelSpec, grid_n: usize) -> Result<HypothesisReport> {
    verify_hypotheses_with(model, grid_n, FriedrichsSettings::default())
}

pub fn verify_hypotheses_with(
    model: &ModelSpec,
    grid_n: usize,
    settings: FriedrichsSettings,
) -> Result<HypothesisReport> {
    if grid_n < 8 {
        return Err(Error::InvalidArgument(format!("grid {grid_n} must be at least 8")));
    }
    let pg = UniformGrid::new(grid_n)?;
    let qg = UniformGrid::new(grid_n.min(8))?;
    let mut checks = Vec::new();

    // Evenness and positivity of u on the paired grid.
    let origin = TorusPoint::ORIGIN;
    let mut worst_even: f64 = 0.0;
    let mut min_pos = f64::INFINITY;
    let mut min_pos_at = (origin, origin);
    for p in pg.nodes() {
        for q in qg.nodes() {
            let v = model.eval_dispersion(&p, &q);
            let w = model.eval_dispersion(&-p, &-q);
            worst_even = worst_even.max((v - w).abs());
            let at_origin = p.norm() < 1e-12 && q.norm() < 1e-12;
            if !at_origin && v < min_pos {
                min_pos = v;
                min_pos_at = (p, q);
            }
        }
    }
    checks.push(check(
        "dispersion_even",
        worst_even <= 1e-12,
        format!("max |u(p,q) - u(-p,-q)| = {worst_even:e}"),
    ));
    checks.push(check(
        "dispersion_positive",
        min_pos > 0.0,
        format!(
            "min u off the origin = {min_pos:e} at p = {:?}, q = {:?}",
            min_pos_at.0.coords(),
            min_pos_at.1.coords()
        ),
    ));

    match estimate_hessian_blocks(model, 1e-3) {
        Ok(hb) => checks.push(check(
            "hessian_blocks",
            true,
            format!(
                "l1 = {:.9}, l2 = {:.9}, l = {:.9}, residual {:e}",
                hb.l1, hb.l2, hb.l, hb.residual
            ),
        )),
        Err(e) => checks.push(check("hessian_blocks", false, e.to_string())),
    }

    for ch in Channel::BOTH {
        let phi = model.phi(ch);
        let parity_ok = phi.parity_violation(grid_n).is_none();
        checks.push(check(
            format!("phi{ch}_parity"),
            parity_ok,
            format!("declared {:?}, phi(0) = {}", phi.parity(), phi.value_at_zero()),
        ));
    }

    let fr = Friedrichs::new(model, settings.clone())?;
    for ch in Channel::BOTH {
        match lambda_checks(&fr, ch, &pg, &settings) {
            Ok(mut c) => checks.append(&mut c),
            Err(e) => checks.push(check(format!("lambda{ch}_checks"), false, e.to_string())),
        }
    }

    Ok(HypothesisReport {
        model: model.name.clone(),
        grid_n,
        pair_grid_n: qg.n(),
        quad_n: settings.quad_n,
        checks,
    })
}

/// Checks on `Lambda_alpha(p) = Lambda_alpha(p, 0)` for one channel.
fn lambda_checks(
    fr: &Friedrichs,
    ch: Channel,
    pg: &UniformGrid,
    settings: &FriedrichsSettings,
) -> Result<Vec<HypothesisCheck>> {
    let model = fr.model();
    let mut checks = Vec::new();
    let l0 = fr.lambda(ch, &TorusPoint::ORIGIN, 0.0)?.value;
    let lambdas = fr.even_grid_map(pg, |p| {
        if p.norm() < 1e-12 {
            Ok(f64::NEG_INFINITY)
        } else {
            Ok(fr.lambda(ch, p, 0.0)?.value)
        }
    })?;
    let (imax, lmax) = lambdas.iter().enumerate().fold(
        (0, f64::NEG_INFINITY),
        |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
    );
    checks.push(check(
        format!("lambda{ch}_max_at_origin"),
        lmax < l0,
        format!(
            "Lambda(0) = {l0:.10}, max over p != 0 is {lmax:.10} at {:?}",
            pg.node(imax).coords()
        ),
    ));

    let mu0 = 1.0 / l0;
    let phi0 = model.phi(ch).value_at_zero();
    if phi0.abs() <= settings.class_tol {
        let h = 0.1;
        let lam = |x: [f64; 3]| -> Result<f64> { Ok(fr.lambda(ch, &TorusPoint::new(x), 0.0)?.value) };
        let mut hess = Matrix3::zeros();
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = h;
            let plus = lam(e)?;
            let minus = lam(e.map(|v| -v))?;
            hess[(i, i)] = (plus - 2.0 * l0 + minus) / (h * h);
            for j in 0..i {
                let at = |si: f64, sj: f64| {
                    let mut x = [0.0; 3];
                    x[i] = si * h;
                    x[j] = sj * h;
                    lam(x)
                };
                let v = (at(1.0, 1.0)? - at(1.0, -1.0)? - at(-1.0, 1.0)? + at(-1.0, -1.0)?) / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        let eig = SymmetricEigen::new(hess).eigenvalues;
        checks.push(check(
            format!("lambda{ch}_hessian_negative_definite"),
            eig.max() < 0.0,
            format!("eigenvalues of the finite-difference Hessian: {:?}", eig.as_slice()),
        ));
    }

    let samples = [
        TorusPoint::new([0.4, 0.0, 0.0]),
        TorusPoint::new([1.0, -0.5, 0.25]),
        TorusPoint::new([2.5, 1.5, -3.0]),
    ];
    let id = fr.lambda_difference_identity(ch, &samples, mu0)?;
    checks.push(check(
        format!("lambda{ch}_difference_identity"),
        id.max_discrepancy <= 1e-8,
        format!(
            "max discrepancy {:e} (reversed-sign form: {:e})",
            id.max_discrepancy, id.max_discrepancy_reversed_sign
        ),
    ));
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_model::{appendix_b_cos, appendix_b_sin, Dispersion};

    #[test]
    fn appendix_b_models_pass() {
        for m in [appendix_b_cos(1.0, 1.0).unwrap(), appendix_b_sin(1.0, 1.0).unwrap()] {
            let r = verify_hypotheses(&m, 8).unwrap();
            assert!(r.all_passed(), "{r:#?}");
        }
        let r = verify_hypotheses(&appendix_b_sin(1.0, 1.0).unwrap(), 8).unwrap();
        assert!(r.get("lambda1_hessian_negative_definite").is_some());
    }

    #[test]
    fn broken_evenness_is_reported() {
        let base = appendix_b_cos(1.0, 1.0).unwrap();
        let broken = base.with_dispersion(Dispersion::custom(|p, q| {
            Dispersion::appendix_b().eval(p, q) + 0.1 * p.get(0).sin()
        }));
        let r = verify_hypotheses(&broken, 8).unwrap();
        assert!(!r.get("dispersion_even").unwrap().passed);
    }
}
