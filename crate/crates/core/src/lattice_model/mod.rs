//! Torus geometry, dispersion relations, form factors and the reference
//! models built from a nearest-neighbour cosine dispersion.

mod hessian;
mod hypotheses;

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::numeric::{wrap_angle, Jet3};
use crate::{Error, Result};

pub use hessian::{estimate_hessian_blocks, HessianBlocks};
pub use hypotheses::{verify_hypotheses, verify_hypotheses_with, HypothesisCheck, HypothesisReport};

/// A point of the 3-torus with every coordinate in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct TorusPoint([f64; 3]);

impl TorusPoint {
    pub const ORIGIN: TorusPoint = TorusPoint([0.0; 3]);

    pub fn new(coords: [f64; 3]) -> Self {
        TorusPoint([wrap_angle(coords[0]), wrap_angle(coords[1]), wrap_angle(coords[2])])
    }

    pub fn splat(x: f64) -> Self {
        Self::new([x; 3])
    }

    #[inline]
    pub fn coords(&self) -> [f64; 3] {
        self.0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }

    /// Euclidean norm of the representative in `(-pi, pi]^3`.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Largest coordinate distance to `other` on the torus.
    pub fn torus_distance(&self, other: &TorusPoint) -> f64 {
        (*self - *other).0.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

impl From<[f64; 3]> for TorusPoint {
    fn from(c: [f64; 3]) -> Self {
        TorusPoint::new(c)
    }
}

impl From<TorusPoint> for [f64; 3] {
    fn from(p: TorusPoint) -> Self {
        p.0
    }
}

impl Add for TorusPoint {
    type Output = TorusPoint;
    fn add(self, o: TorusPoint) -> TorusPoint {
        TorusPoint::new([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for TorusPoint {
    type Output = TorusPoint;
    fn sub(self, o: TorusPoint) -> TorusPoint {
        TorusPoint::new([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Neg for TorusPoint {
    type Output = TorusPoint;
    fn neg(self) -> TorusPoint {
        TorusPoint::new([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for TorusPoint {
    type Output = TorusPoint;
    fn mul(self, s: f64) -> TorusPoint {
        TorusPoint::new([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

/// Which two-particle subsystem a fiber belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    One,
    Two,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::One, Channel::Two];

    pub fn index(self) -> usize {
        match self {
            Channel::One => 0,
            Channel::Two => 1,
        }
    }

    pub fn other(self) -> Channel {
        match self {
            Channel::One => Channel::Two,
            Channel::Two => Channel::One,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    Even,
    Odd,
}

impl Parity {
    pub fn sign(self) -> f64 {
        match self {
            Parity::Even => 1.0,
            Parity::Odd => -1.0,
        }
    }
}

pub type DispersionFn = dyn Fn(&TorusPoint, &TorusPoint) -> f64 + Send + Sync;
pub type FormFactorFn = dyn Fn(&TorusPoint) -> f64 + Send + Sync;

/// The dispersion `u(p, q)` of the free three-particle operator.
#[derive(Clone)]
pub enum Dispersion {
    /// `sum_i a(1 - cos p_i) + b(1 - cos q_i) + c(1 - cos(p_i - q_i))`.
    CosineSum {
        a: f64,
        b: f64,
        c: f64,
    },
    Custom(Arc<DispersionFn>),
}

impl fmt::Debug for Dispersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dispersion::CosineSum { a, b, c } => f
                .debug_struct("CosineSum")
                .field("a", a)
                .field("b", b)
                .field("c", c)
                .finish(),
            Dispersion::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

#[inline]
fn cosine_axis(a: f64, b: f64, c: f64, x: f64, y: f64) -> f64 {
    a * (1.0 - x.cos()) + b * (1.0 - y.cos()) + c * (1.0 - (x - y).cos())
}

impl Dispersion {
    /// `3 - cos p - cos q - cos(p - q)` summed over coordinates.
    pub fn appendix_b() -> Self {
        Dispersion::CosineSum { a: 1.0, b: 1.0, c: 1.0 }
    }

    pub fn custom<F>(f: F) -> Self
    where
        F: Fn(&TorusPoint, &TorusPoint) -> f64 + Send + Sync + 'static,
    {
        Dispersion::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, p: &TorusPoint, q: &TorusPoint) -> f64 {
        match self {
            Dispersion::CosineSum { a, b, c } => (0..3).map(|i| cosine_axis(*a, *b, *c, p.0[i], q.0[i])).sum(),
            Dispersion::Custom(f) => f(p, q),
        }
    }

    /// Value of the fiber dispersion `u_p^(alpha)(t)`: the slice variable is the
    /// first argument for channel 1 and the second for channel 2.
    #[inline]
    pub fn slice(&self, channel: Channel, p: &TorusPoint, t: &TorusPoint) -> f64 {
        match channel {
            Channel::One => self.eval(t, p),
            Channel::Two => self.eval(p, t),
        }
    }

    /// Value, gradient and Hessian in `t` of the fiber dispersion.
    pub(crate) fn slice_jet(&self, channel: Channel, p: &TorusPoint, t: &[f64; 3]) -> Jet3 {
        match self {
            Dispersion::CosineSum { a, b, c } => {
                // Per axis the slice is alpha(1-cos t) + const + c(1-cos(t-p)).
                let (own, other) = match channel {
                    Channel::One => (*a, *b),
                    Channel::Two => (*b, *a),
                };
                let mut v = 0.0;
                let mut g = [0.0; 3];
                let mut h = [[0.0; 3]; 3];
                for i in 0..3 {
                    let (x, y) = (t[i], p.0[i]);
                    v += own * (1.0 - x.cos()) + other * (1.0 - y.cos()) + c * (1.0 - (x - y).cos());
                    g[i] = own * x.sin() + c * (x - y).sin();
                    h[i][i] = own * x.cos() + c * (x - y).cos();
                }
                (v, g, h)
            }
            Dispersion::Custom(_) => finite_difference_jet(|x| self.slice(channel, p, &TorusPoint(*x)), t),
        }
    }

    /// Accuracy of [`Dispersion::slice_jet`] derivatives, used as the
    /// stationarity tolerance of the fiber minimisation.
    pub(crate) fn jet_tolerance(&self) -> f64 {
        match self {
            Dispersion::CosineSum { .. } => 1e-14,
            Dispersion::Custom(_) => 1e-8,
        }
    }

    /// Per-axis tables for separable dispersions: the slice value at grid node
    /// `(i, j, k)` is `tables[0][i] + tables[1][j] + tables[2][k]`.
    pub(crate) fn slice_axis_tables(&self, channel: Channel, p: &TorusPoint, axis: &[f64]) -> Option<[Vec<f64>; 3]> {
        match self {
            Dispersion::CosineSum { a, b, c } => {
                let table = |k: usize| -> Vec<f64> {
                    axis.iter()
                        .map(|&t| match channel {
                            Channel::One => cosine_axis(*a, *b, *c, t, p.0[k]),
                            Channel::Two => cosine_axis(*a, *b, *c, p.0[k], t),
                        })
                        .collect()
                };
                Some([table(0), table(1), table(2)])
            }
            Dispersion::Custom(_) => None,
        }
    }

    /// For separable dispersions, the table `F[i][j] = term(axis[i], axis[j])`
    /// with `u(x, y) = sum_k F[x_k][y_k]`, stored row-major.
    pub(crate) fn pair_table(&self, axis: &[f64]) -> Option<Vec<f64>> {
        match self {
            Dispersion::CosineSum { a, b, c } => {
                let n = axis.len();
                let mut t = Vec::with_capacity(n * n);
                for &x in axis {
                    for &y in axis {
                        t.push(cosine_axis(*a, *b, *c, x, y));
                    }
                }
                Some(t)
            }
            Dispersion::Custom(_) => None,
        }
    }
}

pub(crate) fn finite_difference_jet<F: Fn(&[f64; 3]) -> f64>(f: F, x: &[f64; 3]) -> Jet3 {
    let hg = 1e-5;
    let hh = 1e-4;
    let f0 = f(x);
    let shifted = |d: &[(usize, f64)]| {
        let mut y = *x;
        for &(i, s) in d {
            y[i] += s;
        }
        f(&y)
    };
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for i in 0..3 {
        g[i] = (shifted(&[(i, hg)]) - shifted(&[(i, -hg)])) / (2.0 * hg);
        h[i][i] = (shifted(&[(i, hh)]) - 2.0 * f0 + shifted(&[(i, -hh)])) / (hh * hh);
        for j in 0..i {
            let v = (shifted(&[(i, hh), (j, hh)]) - shifted(&[(i, hh), (j, -hh)]) - shifted(&[(i, -hh), (j, hh)])
                + shifted(&[(i, -hh), (j, -hh)]))
                / (4.0 * hh * hh);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    (f0, g, h)
}

#[derive(Clone)]
enum Shape {
    /// `a0 + sum_i a_i cos p_i`
    Cos {
        a0: f64,
        a: [f64; 3],
    },
    /// `a sum_i sin p_i`
    Sin {
        a: f64,
    },
    Custom {
        f: Arc<FormFactorFn>,
        scale: f64,
    },
}

/// A form factor `phi_alpha` of the rank-one interaction, tagged with its parity.
#[derive(Clone)]
pub struct FormFactor {
    shape: Shape,
    parity: Parity,
    value_at_zero: f64,
}

impl fmt::Debug for FormFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut d = f.debug_struct("FormFactor");
        match &self.shape {
            Shape::Cos { a0, a } => d.field("cos", &(a0, a)),
            Shape::Sin { a } => d.field("sin", a),
            Shape::Custom { scale, .. } => d.field("custom_scale", scale),
        };
        d.field("parity", &self.parity)
            .field("value_at_zero", &self.value_at_zero)
            .finish()
    }
}

impl FormFactor {
    pub fn cos_form(a0: f64, a: [f64; 3]) -> Self {
        FormFactor {
            shape: Shape::Cos { a0, a },
            parity: Parity::Even,
            value_at_zero: a0 + a.iter().sum::<f64>(),
        }
    }

    pub fn sin_form(a: f64) -> Self {
        FormFactor {
            shape: Shape::Sin { a },
            parity: Parity::Odd,
            value_at_zero: 0.0,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::cos_form(c, [0.0; 3])
    }

    /// Wraps an arbitrary evaluator. The declared parity is checked on a grid
    /// of sample points; a mismatch is an error.
    pub fn custom<F>(f: F, parity: Parity) -> Result<Self>
    where
        F: Fn(&TorusPoint) -> f64 + Send + Sync + 'static,
    {
        let f: Arc<FormFactorFn> = Arc::new(f);
        let value_at_zero = f(&TorusPoint::ORIGIN);
        let ff = FormFactor {
            shape: Shape::Custom { f, scale: 1.0 },
            parity,
            value_at_zero: if parity == Parity::Odd { 0.0 } else { value_at_zero },
        };
        if let Some((p, lhs, rhs)) = ff.parity_violation(7) {
            return Err(Error::Model(format!(
                "form factor declared {parity:?} but phi(-p) = {lhs} while {}phi(p) = {rhs} at p = {:?}",
                if parity == Parity::Odd { "-" } else { "" },
                p.coords()
            )));
        }
        if parity == Parity::Odd && value_at_zero.abs() > 1e-12 {
            return Err(Error::Model(format!("odd form factor has phi(0) = {value_at_zero}")));
        }
        Ok(ff)
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    pub fn value_at_zero(&self) -> f64 {
        self.value_at_zero
    }

    #[inline]
    pub fn eval(&self, p: &TorusPoint) -> f64 {
        match &self.shape {
            Shape::Cos { a0, a } => a0 + a[0] * p.0[0].cos() + a[1] * p.0[1].cos() + a[2] * p.0[2].cos(),
            Shape::Sin { a } => a * (p.0[0].sin() + p.0[1].sin() + p.0[2].sin()),
            Shape::Custom { f, scale } => scale * f(p),
        }
    }

    pub fn gradient(&self, p: &TorusPoint) -> [f64; 3] {
        match &self.shape {
            Shape::Cos { a, .. } => [-a[0] * p.0[0].sin(), -a[1] * p.0[1].sin(), -a[2] * p.0[2].sin()],
            Shape::Sin { a } => [a * p.0[0].cos(), a * p.0[1].cos(), a * p.0[2].cos()],
            Shape::Custom { .. } => {
                let h = 1e-6;
                let mut g = [0.0; 3];
                for (i, gi) in g.iter_mut().enumerate() {
                    let mut plus = p.0;
                    let mut minus = p.0;
                    plus[i] += h;
                    minus[i] -= h;
                    *gi = (self.eval(&TorusPoint(plus)) - self.eval(&TorusPoint(minus))) / (2.0 * h);
                }
                g
            }
        }
    }

    /// The form factor multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let shape = match &self.shape {
            Shape::Cos { a0, a } => Shape::Cos {
                a0: a0 * c,
                a: [a[0] * c, a[1] * c, a[2] * c],
            },
            Shape::Sin { a } => Shape::Sin { a: a * c },
            Shape::Custom { f, scale } => Shape::Custom {
                f: f.clone(),
                scale: scale * c,
            },
        };
        FormFactor {
            shape,
            parity: self.parity,
            value_at_zero: self.value_at_zero * c,
        }
    }

    /// First sample point (on an `n^3` grid shifted off the symmetry planes)
    /// where the declared parity fails, if any.
    pub fn parity_violation(&self, n: usize) -> Option<(TorusPoint, f64, f64)> {
        let s = self.parity.sign();
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let c = |m: usize, off: f64| -PI + 2.0 * PI * (m as f64 + off) / n as f64;
                    let p = TorusPoint::new([c(i, 0.31), c(j, 0.57), c(k, 0.83)]);
                    let lhs = self.eval(&-p);
                    let rhs = s * self.eval(&p);
                    if (lhs - rhs).abs() > 1e-12 * (1.0 + rhs.abs()) {
                        return Some((p, lhs, rhs));
                    }
                }
            }
        }
        None
    }
}

/// The full problem definition: dispersion, form factors and couplings.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub name: String,
    dispersion: Dispersion,
    phi: [FormFactor; 2],
    mu: [f64; 2],
}

impl ModelSpec {
    pub fn new(
        name: impl Into<String>,
        dispersion: Dispersion,
        phi1: FormFactor,
        phi2: FormFactor,
        mu1: f64,
        mu2: f64,
    ) -> Result<Self> {
        let u00 = dispersion.eval(&TorusPoint::ORIGIN, &TorusPoint::ORIGIN);
        if u00.abs() > 1e-12 {
            return Err(Error::Model(format!("dispersion at (0,0) is {u00}, expected 0")));
        }
        let model = ModelSpec {
            name: name.into(),
            dispersion,
            phi: [phi1, phi2],
            mu: [1.0, 1.0],
        };
        model.with_couplings(mu1, mu2)
    }

    pub fn dispersion(&self) -> &Dispersion {
        &self.dispersion
    }

    pub fn eval_dispersion(&self, p: &TorusPoint, q: &TorusPoint) -> f64 {
        self.dispersion.eval(p, q)
    }

    pub fn phi(&self, channel: Channel) -> &FormFactor {
        &self.phi[channel.index()]
    }

    pub fn mu(&self, channel: Channel) -> f64 {
        self.mu[channel.index()]
    }

    pub fn with_couplings(&self, mu1: f64, mu2: f64) -> Result<Self> {
        for (k, m) in [mu1, mu2].iter().enumerate() {
            if !(m.is_finite() && *m > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "coupling mu{} = {m} must be positive and finite",
                    k + 1
                )));
            }
        }
        let mut m = self.clone();
        m.mu = [mu1, mu2];
        Ok(m)
    }

    pub fn with_coupling(&self, channel: Channel, mu: f64) -> Result<Self> {
        let mut both = self.mu;
        both[channel.index()] = mu;
        self.with_couplings(both[0], both[1])
    }

    pub fn with_form_factor(&self, channel: Channel, phi: FormFactor) -> Self {
        let mut m = self.clone();
        m.phi[channel.index()] = phi;
        m
    }

    pub fn with_dispersion(&self, dispersion: Dispersion) -> Self {
        let mut m = self.clone();
        m.dispersion = dispersion;
        m
    }
}

/// Form-factor families of the reference model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AppendixBForm {
    /// `a0 + sum_i a_i cos p_i`
    Cos { a0: f64, a: [f64; 3] },
    /// `a sum_i sin p_i`
    Sin { a: f64 },
}

impl AppendixBForm {
    pub const UNIT_COS: AppendixBForm = AppendixBForm::Cos { a0: 1.0, a: [0.0; 3] };
    pub const UNIT_SIN: AppendixBForm = AppendixBForm::Sin { a: 1.0 };

    fn build(&self) -> Result<FormFactor> {
        match *self {
            AppendixBForm::Cos { a0, a } => {
                if a0 == 0.0 && a.iter().all(|x| *x == 0.0) {
                    return Err(Error::Model("cosine form factor is identically zero".into()));
                }
                Ok(FormFactor::cos_form(a0, a))
            }
            AppendixBForm::Sin { a } => {
                if a == 0.0 {
                    return Err(Error::Model("sine form factor needs a nonzero amplitude".into()));
                }
                Ok(FormFactor::sin_form(a))
            }
        }
    }

    fn label(&self) -> &'static str {
        match self {
            AppendixBForm::Cos { .. } => "cos",
            AppendixBForm::Sin { .. } => "sin",
        }
    }
}

/// The reference model `u = sum 3 - cos p - cos q - cos(p - q)` with the given
/// form factors.
pub fn make_appendix_b_model(forms: [AppendixBForm; 2], mu1: f64, mu2: f64) -> Result<ModelSpec> {
    let name = if forms[0].label() == forms[1].label() {
        format!("appendix-b-{}", forms[0].label())
    } else {
        format!("appendix-b-{}-{}", forms[0].label(), forms[1].label())
    };
    ModelSpec::new(
        name,
        Dispersion::appendix_b(),
        forms[0].build()?,
        forms[1].build()?,
        mu1,
        mu2,
    )
}

/// Reference model with `phi = 1` in both channels.
pub fn appendix_b_cos(mu1: f64, mu2: f64) -> Result<ModelSpec> {
    make_appendix_b_model([AppendixBForm::UNIT_COS; 2], mu1, mu2)
}

/// Reference model with `phi = sum sin p_i` in both channels.
pub fn appendix_b_sin(mu1: f64, mu2: f64) -> Result<ModelSpec> {
    make_appendix_b_model([AppendixBForm::UNIT_SIN; 2], mu1, mu2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appendix_b_dispersion_values() {
        let m = appendix_b_cos(1.0, 1.0).unwrap();
        let o = TorusPoint::ORIGIN;
        assert_eq!(m.eval_dispersion(&o, &o), 0.0);
        let p = TorusPoint::new([PI, 0.0, 0.0]);
        assert!((m.eval_dispersion(&p, &o) - 4.0).abs() < 1e-14);
        let q = TorusPoint::new([0.3, -1.1, 2.0]);
        assert!((m.eval_dispersion(&p, &q) - m.eval_dispersion(&-p, &-q)).abs() < 1e-14);
    }

    #[test]
    fn form_factor_families() {
        let c = AppendixBForm::UNIT_COS.build().unwrap();
        assert_eq!(c.parity(), Parity::Even);
        assert_eq!(c.value_at_zero(), 1.0);
        let s = AppendixBForm::UNIT_SIN.build().unwrap();
        assert_eq!(s.parity(), Parity::Odd);
        assert_eq!(s.value_at_zero(), 0.0);
        let c3 = AppendixBForm::Cos { a0: 0.0, a: [1.0; 3] }.build().unwrap();
        assert_eq!(c3.value_at_zero(), 3.0);
        assert!(AppendixBForm::Cos { a0: 0.0, a: [0.0; 3] }.build().is_err());
        assert!(AppendixBForm::Sin { a: 0.0 }.build().is_err());
    }

    #[test]
    fn custom_parity_is_checked() {
        assert!(FormFactor::custom(|p| p.get(0).sin(), Parity::Even).is_err());
        assert!(FormFactor::custom(|p| p.get(0).sin(), Parity::Odd).is_ok());
        assert!(FormFactor::custom(|p| p.get(1).cos(), Parity::Even).is_ok());
    }

    #[test]
    fn slice_jet_matches_finite_differences() {
        let d = Dispersion::CosineSum { a: 1.0, b: 2.0, c: 0.7 };
        let p = TorusPoint::new([0.4, -1.2, 2.5]);
        let t = [0.1, 0.9, -2.2];
        for ch in Channel::BOTH {
            let exact = d.slice_jet(ch, &p, &t);
            let fd = finite_difference_jet(|x| d.slice(ch, &p, &TorusPoint::new(*x)), &t);
            assert!((exact.0 - fd.0).abs() < 1e-13);
            for i in 0..3 {
                assert!((exact.1[i] - fd.1[i]).abs() < 1e-8);
                for j in 0..3 {
                    assert!((exact.2[i][j] - fd.2[i][j]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn scaled_form_factor() {
        let f = FormFactor::cos_form(1.0, [0.5, 0.0, 0.0]).scaled(3.0);
        assert_eq!(f.value_at_zero(), 4.5);
        let p = TorusPoint::new([1.0, 2.0, 3.0]);
        assert!((f.eval(&p) - 3.0 * (1.0 + 0.5 * 1f64.cos())).abs() < 1e-14);
    }
}
