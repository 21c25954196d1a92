//! Essential spectrum of the three-particle operator: the two-particle
//! branch bands together with the three-particle band `[0, M]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::friedrichs::{BoundStateBranch, Friedrichs};
use crate::lattice_model::{Channel, ModelSpec, TorusPoint};
use crate::numeric::compass_search;
use crate::quadrature::UniformGrid;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralBand {
    pub lo: f64,
    pub hi: f64,
}

impl SpectralBand {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!("band [{lo}, {hi}] is empty")));
        }
        Ok(SpectralBand { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Placement of one coupling constant relative to `mu0` and `mu_max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CouplingCase {
    /// `mu > mu_max`: the branch exists for every p and stays negative.
    AboveMuMax,
    /// `mu0 < mu <= mu_max`: the branch exists on a proper subset and reaches 0.
    Intermediate,
    /// `mu <= mu0`: no negative branch.
    AtOrBelowMuZero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    BothAboveMuMax,
    Intermediate,
    AtOrBelowMuZero,
    Mixed,
}

/// Band of one channel with the sampling diagnostics behind it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandEstimate {
    pub channel: Channel,
    pub mu: f64,
    pub mu_zero: f64,
    pub mu_max: f64,
    pub case: CouplingCase,
    pub grid_n: usize,
    pub band: Option<SpectralBand>,
    /// Extremes of the branch on the grid, before refinement.
    pub grid_extremes: Option<(f64, f64)>,
    pub argmin: Option<TorusPoint>,
    pub argmax: Option<TorusPoint>,
    /// Largest change of an endpoint caused by local refinement.
    pub refinement_error: f64,
    /// Grid nodes without a negative eigenvalue.
    pub missing_samples: usize,
    /// Largest jump of the branch between adjacent grid nodes.
    pub max_adjacent_jump: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EssentialSpectrum {
    pub bands: Vec<SpectralBand>,
    pub regime: Regime,
    pub m_big: f64,
    pub a1: Option<f64>,
    pub b1: Option<f64>,
    pub a2: Option<f64>,
    pub b2: Option<f64>,
    pub channels: Vec<BandEstimate>,
    pub grid_n: usize,
}

impl EssentialSpectrum {
    /// Bottom of the essential spectrum.
    pub fn bottom(&self) -> f64 {
        self.bands.first().map_or(0.0, |b| b.lo)
    }
}

/// `M = max u(p, q)`: scan of the `grid_n^6` grid and compass ascent.
pub fn global_max_energy(model: &ModelSpec, grid_n: usize) -> Result<f64> {
    if grid_n < 8 {
        return Err(Error::InvalidArgument(format!("grid {grid_n} must be at least 8")));
    }
    let g = UniformGrid::new(grid_n)?;
    let nodes: Vec<TorusPoint> = g.nodes().collect();
    let (bp, bq, best) = nodes
        .par_iter()
        .map(|p| {
            nodes.iter().fold((*p, *p, f64::NEG_INFINITY), |acc, q| {
                let v = model.eval_dispersion(p, q);
                if v > acc.2 {
                    (*p, *q, v)
                } else {
                    acc
                }
            })
        })
        .reduce(
            || (TorusPoint::ORIGIN, TorusPoint::ORIGIN, f64::NEG_INFINITY),
            |a, b| if b.2 > a.2 { b } else { a },
        );
    if !best.is_finite() {
        return Err(Error::NonFiniteIntegrand {
            node: bp.coords(),
            value: best,
        });
    }
    let split = |x: &[f64; 6]| (TorusPoint::new([x[0], x[1], x[2]]), TorusPoint::new([x[3], x[4], x[5]]));
    let (p, q) = (bp.coords(), bq.coords());
    let start = [p[0], p[1], p[2], q[0], q[1], q[2]];
    let (_, neg) = compass_search(
        |x| {
            let (p, q) = split(x);
            Ok(-model.eval_dispersion(&p, &q))
        },
        start,
        -best,
        0.5 * g.spacing(),
        1e-9,
    )?;
    Ok(-neg)
}

fn classify(mu: f64, mu_zero: f64, mu_max: f64, tol: f64) -> CouplingCase {
    if mu <= mu_zero * (1.0 + tol) {
        CouplingCase::AtOrBelowMuZero
    } else if mu <= mu_max * (1.0 + tol) {
        CouplingCase::Intermediate
    } else {
        CouplingCase::AboveMuMax
    }
}

/// Largest `|z(i) - z(j)|` over adjacent grid nodes where both are present.
pub fn max_adjacent_jump(branch: &BoundStateBranch) -> Result<f64> {
    let g = UniformGrid::new(branch.grid_n)?;
    let n = g.n();
    let mut worst: f64 = 0.0;
    for idx in 0..g.len() {
        let Some(z) = branch.samples[idx].z else { continue };
        let (i, j, k) = g.split(idx);
        for nb in [
            g.index((i + 1) % n, j, k),
            g.index(i, (j + 1) % n, k),
            g.index(i, j, (k + 1) % n),
        ] {
            if let Some(w) = branch.samples[nb].z {
                worst = worst.max((z - w).abs());
            }
        }
    }
    Ok(worst)
}

/// The negative two-particle band `{z_alpha(p)}` for coupling `mu`.
pub fn two_particle_band(fr: &Friedrichs, channel: Channel, mu: f64, grid_n: usize) -> Result<BandEstimate> {
    if grid_n < 8 {
        return Err(Error::InvalidArgument(format!("p-grid {grid_n} must be at least 8")));
    }
    let mu_zero = fr.mu_zero(channel)?;
    let mu_max = fr.mu_max(channel, grid_n)?.value;
    let case = classify(mu, mu_zero, mu_max, fr.settings().class_tol);
    let mut est = BandEstimate {
        channel,
        mu,
        mu_zero,
        mu_max,
        case,
        grid_n,
        band: None,
        grid_extremes: None,
        argmin: None,
        argmax: None,
        refinement_error: 0.0,
        missing_samples: 0,
        max_adjacent_jump: 0.0,
    };
    if case == CouplingCase::AtOrBelowMuZero {
        return Ok(est);
    }

    let branch = fr.branch(channel, mu, grid_n)?;
    est.missing_samples = branch.samples.iter().filter(|s| s.z.is_none()).count();
    est.max_adjacent_jump = max_adjacent_jump(&branch)?;
    let (imin, zmin) = extreme_sample(&branch, |a, b| a < b)
        .ok_or_else(|| Error::CheckFailed(format!("no negative eigenvalue sampled for mu = {mu}")))?;
    let (imax, zmax) = extreme_sample(&branch, |a, b| a > b).expect("a sample exists");
    est.grid_extremes = Some((zmin, zmax));

    let z_at = |x: &[f64; 3]| fr.negative_bound_state(channel, &TorusPoint::new(*x), mu);
    let step = 0.5 * UniformGrid::new(grid_n)?.spacing();
    let (xmin, lo) = compass_search(
        |x| Ok(z_at(x)?.unwrap_or(f64::INFINITY)),
        branch.samples[imin].p.coords(),
        zmin,
        step,
        1e-7,
    )?;
    est.argmin = Some(TorusPoint::new(xmin));
    est.refinement_error = (zmin - lo).abs();

    let hi = match case {
        CouplingCase::AboveMuMax => {
            let (xmax, neg) = compass_search(
                |x| Ok(z_at(x)?.map_or(f64::INFINITY, |z| -z)),
                branch.samples[imax].p.coords(),
                -zmax,
                step,
                1e-7,
            )?;
            est.argmax = Some(TorusPoint::new(xmax));
            est.refinement_error = est.refinement_error.max((zmax + neg).abs());
            -neg
        }
        _ => 0.0,
    };
    est.band = Some(SpectralBand::new(lo, hi)?);
    Ok(est)
}

fn extreme_sample(branch: &BoundStateBranch, better: impl Fn(f64, f64) -> bool) -> Option<(usize, f64)> {
    branch
        .samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s.z.map(|z| (i, z)))
        .fold(None, |acc, (i, z)| match acc {
            Some((_, w)) if !better(z, w) => acc,
            _ => Some((i, z)),
        })
}

/// Sorts and merges overlapping or touching bands.
pub fn merge_bands(mut bands: Vec<SpectralBand>) -> Vec<SpectralBand> {
    bands.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut out: Vec<SpectralBand> = Vec::with_capacity(bands.len());
    for b in bands {
        match out.last_mut() {
            Some(last) if b.lo <= last.hi => last.hi = last.hi.max(b.hi),
            _ => out.push(b),
        }
    }
    out
}

/// Union of both branch bands with `[0, M]` and the coupling regime, for
/// the couplings stored in the model.
pub fn essential_spectrum(fr: &Friedrichs, grid_n: usize) -> Result<EssentialSpectrum> {
    let m_big = global_max_energy(fr.model(), grid_n)?;
    let mut channels = Vec::with_capacity(2);
    for ch in Channel::BOTH {
        channels.push(two_particle_band(fr, ch, fr.model().mu(ch), grid_n)?);
    }
    let regime = match (channels[0].case, channels[1].case) {
        (CouplingCase::AboveMuMax, CouplingCase::AboveMuMax) => Regime::BothAboveMuMax,
        (CouplingCase::Intermediate, CouplingCase::Intermediate) => Regime::Intermediate,
        (CouplingCase::AtOrBelowMuZero, CouplingCase::AtOrBelowMuZero) => Regime::AtOrBelowMuZero,
        _ => Regime::Mixed,
    };
    let mut all: Vec<SpectralBand> = channels.iter().filter_map(|c| c.band).collect();
    all.push(SpectralBand::new(0.0, m_big)?);
    let bands = merge_bands(all);
    if let Some(b) = bands.iter().find(|b| b.hi > m_big) {
        return Err(Error::CheckFailed(format!(
            "band [{}, {}] extends above M = {m_big}",
            b.lo, b.hi
        )));
    }
    let ends = |i: usize| (channels[i].band.map(|b| b.lo), channels[i].band.map(|b| b.hi));
    let (a1, b1) = ends(0);
    let (a2, b2) = ends(1);
    Ok(EssentialSpectrum {
        bands,
        regime,
        m_big,
        a1,
        b1,
        a2,
        b2,
        channels,
        grid_n,
    })
}
