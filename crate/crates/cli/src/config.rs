//! Experiment configuration: a TOML document with the sections `[model]`,
//! `[couplings]`, `[grids]`, `[schedule]`, `[efimov]` and `[output]`.

use std::fmt;
use std::ops::Range;

use serde::Deserialize;
use toml::{Spanned, Table, Value};

use threebody::Parity;

use crate::expr::Expr;

/// A problem in the configuration text, 1-based.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct Diagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
    }
}

fn position(text: &str, offset: usize) -> (usize, usize) {
    let offset = offset.min(text.len());
    let before = &text[..offset];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, col)
}

fn diag(text: &str, span: Range<usize>, message: impl Into<String>) -> Diagnostic {
    let (line, column) = position(text, span.start);
    Diagnostic {
        line,
        column,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Builtin {
    AppendixBCos,
    AppendixBSin,
}

impl Builtin {
    pub fn name(self) -> &'static str {
        match self {
            Builtin::AppendixBCos => "appendix-b-cos",
            Builtin::AppendixBSin => "appendix-b-sin",
        }
    }
}

/// An expression together with the text it was parsed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ExprSource {
    pub source: String,
    pub expr: Expr,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelConfig {
    Builtin {
        name: Builtin,
        /// `(a, b, c)` in `sum a(1 - cos p) + b(1 - cos q) + c(1 - cos(p - q))`.
        dispersion_coefficients: [f64; 3],
        cos_a0: f64,
        cos_a: [f64; 3],
        sin_a: f64,
    },
    Inline {
        dispersion: ExprSource,
        phi: [ExprSource; 2],
        parity: [Parity; 2],
    },
}

/// A coupling constant, possibly relative to the channel's `mu0` or `mu_max`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coupling {
    Value(f64),
    MuZero(f64),
    MuMax(f64),
}

impl Coupling {
    fn parse(s: &str) -> Result<Coupling, String> {
        let s = s.trim();
        let (k, base) = match s.split_once('*') {
            Some((k, base)) => {
                let k: f64 = k
                    .trim()
                    .parse()
                    .map_err(|_| format!("malformed factor '{}' in coupling '{s}'", k.trim()))?;
                (k, base.trim())
            }
            None => (1.0, s),
        };
        match base {
            "mu0" => Ok(Coupling::MuZero(k)),
            "mu_max" => Ok(Coupling::MuMax(k)),
            _ => Err(format!(
                "unknown coupling token '{base}'; expected mu0, mu_max or k*mu0"
            )),
        }
    }

    fn to_value(self) -> Value {
        match self {
            Coupling::Value(v) => Value::Float(v),
            Coupling::MuZero(1.0) => Value::String("mu0".into()),
            Coupling::MuMax(1.0) => Value::String("mu_max".into()),
            Coupling::MuZero(k) => Value::String(format!("{k:?}*mu0")),
            Coupling::MuMax(k) => Value::String(format!("{k:?}*mu_max")),
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_value() {
            Value::String(s) => f.write_str(&s),
            v => write!(f, "{v}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Grids {
    /// Points per axis of the quadrature grid for `Lambda`.
    pub quad_n: usize,
    /// Points per axis of the Birman-Schwinger kernel grid.
    pub kernel_n: usize,
    /// Points per axis of p-grids (hypotheses, branches, bands).
    pub p_grid_n: usize,
    /// Fixed 1D grid for the truncated Sobolev operator; `None` scales with `r`.
    pub grid_1d_n: Option<usize>,
}

impl Default for Grids {
    fn default() -> Self {
        Grids {
            quad_n: 32,
            kernel_n: 16,
            p_grid_n: 16,
            grid_1d_n: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Schedule {
    List(Vec<f64>),
    Geometric { from: f64, to: f64, points: usize },
}

impl Schedule {
    /// The energies in increasing order.
    pub fn energies(&self) -> Vec<f64> {
        let mut z = match self {
            Schedule::List(z) => z.clone(),
            Schedule::Geometric { from, to, points } => {
                if *points == 1 {
                    vec![*from]
                } else {
                    let (a, b) = (from.abs().ln(), to.abs().ln());
                    (0..*points)
                        .map(|i| -(a + (b - a) * i as f64 / (*points - 1) as f64).exp())
                        .collect()
                }
            }
        };
        z.sort_by(f64::total_cmp);
        z
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EfimovConfig {
    pub l_max: usize,
    pub legendre_n: usize,
    pub y_max: f64,
    pub y_step: f64,
    pub r: Vec<f64>,
}

impl Default for EfimovConfig {
    fn default() -> Self {
        EfimovConfig {
            l_max: 8,
            legendre_n: 32,
            y_max: 50.0,
            y_step: 0.05,
            r: vec![25.0, 50.0, 100.0, 200.0],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: String,
    pub format: Format,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub couplings: [Coupling; 2],
    pub grids: Grids,
    pub schedule: Schedule,
    pub efimov: EfimovConfig,
    pub output: OutputConfig,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawCoupling {
    Number(f64),
    Token(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    builtin: Option<Spanned<String>>,
    dispersion_coefficients: Option<[f64; 3]>,
    cos_a0: Option<f64>,
    cos_a: Option<[f64; 3]>,
    sin_a: Option<f64>,
    dispersion: Option<Spanned<String>>,
    phi1: Option<Spanned<String>>,
    phi2: Option<Spanned<String>>,
    parity1: Option<Spanned<String>>,
    parity2: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCouplings {
    mu1: Option<Spanned<RawCoupling>>,
    mu2: Option<Spanned<RawCoupling>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrids {
    quad_n: Option<Spanned<i64>>,
    kernel_n: Option<Spanned<i64>>,
    p_grid_n: Option<Spanned<i64>>,
    grid_1d_n: Option<Spanned<i64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSchedule {
    z: Option<Spanned<Vec<f64>>>,
    z_from: Option<Spanned<f64>>,
    z_to: Option<f64>,
    z_points: Option<i64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEfimov {
    l_max: Option<Spanned<i64>>,
    legendre_n: Option<Spanned<i64>>,
    y_max: Option<Spanned<f64>>,
    y_step: Option<Spanned<f64>>,
    r: Option<Spanned<Vec<f64>>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    format: Option<Spanned<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: Spanned<RawModel>,
    couplings: Option<RawCouplings>,
    grids: Option<RawGrids>,
    schedule: Option<RawSchedule>,
    efimov: Option<RawEfimov>,
    output: Option<RawOutput>,
}

struct Ctx<'a> {
    text: &'a str,
    diags: Vec<Diagnostic>,
}

impl Ctx<'_> {
    fn err(&mut self, span: Range<usize>, msg: impl Into<String>) {
        self.diags.push(diag(self.text, span, msg));
    }

    fn expr(&mut self, s: &Spanned<String>) -> Option<ExprSource> {
        match Expr::parse(s.get_ref()) {
            Ok(expr) => Some(ExprSource {
                source: s.get_ref().clone(),
                expr,
            }),
            Err(e) => {
                // Skip the opening quote.
                let start = s.span().start
                    + 1
                    + s.get_ref()
                        .char_indices()
                        .nth(e.offset)
                        .map_or(s.get_ref().len(), |c| c.0);
                self.err(start..start, format!("malformed expression: {}", e.message));
                None
            }
        }
    }

    fn parity(&mut self, s: &Spanned<String>) -> Option<Parity> {
        match s.get_ref().as_str() {
            "even" => Some(Parity::Even),
            "odd" => Some(Parity::Odd),
            other => {
                self.err(s.span(), format!("parity must be \"even\" or \"odd\", not \"{other}\""));
                None
            }
        }
    }

    fn grid(&mut self, v: &Option<Spanned<i64>>, default: usize, min: i64, even: bool) -> usize {
        let Some(v) = v else { return default };
        let n = *v.get_ref();
        if n < min {
            self.err(v.span(), format!("grid size {n} is below {min}"));
            return default;
        }
        if even && n % 2 != 0 {
            self.err(v.span(), format!("grid size {n} must be even"));
            return default;
        }
        n as usize
    }

    fn positive(&mut self, v: &Option<Spanned<f64>>, default: f64) -> f64 {
        let Some(v) = v else { return default };
        if !(*v.get_ref() > 0.0) {
            self.err(v.span(), format!("value {} must be positive", v.get_ref()));
            return default;
        }
        *v.get_ref()
    }
}

fn parse_model(ctx: &mut Ctx, raw: &Spanned<RawModel>) -> Option<ModelConfig> {
    let m = raw.get_ref();
    let inline_keys = [&m.dispersion, &m.phi1, &m.phi2, &m.parity1, &m.parity2];
    match &m.builtin {
        Some(b) => {
            let name = match b.get_ref().as_str() {
                "appendix-b-cos" => Builtin::AppendixBCos,
                "appendix-b-sin" => Builtin::AppendixBSin,
                other => {
                    ctx.err(
                        b.span(),
                        format!("unknown builtin model \"{other}\"; expected appendix-b-cos or appendix-b-sin"),
                    );
                    return None;
                }
            };
            if let Some(k) = inline_keys.iter().find_map(|k| k.as_ref()) {
                ctx.err(k.span(), "inline expressions cannot be combined with a builtin model");
            }
            Some(ModelConfig::Builtin {
                name,
                dispersion_coefficients: m.dispersion_coefficients.unwrap_or([1.0; 3]),
                cos_a0: m.cos_a0.unwrap_or(1.0),
                cos_a: m.cos_a.unwrap_or([0.0; 3]),
                sin_a: m.sin_a.unwrap_or(1.0),
            })
        }
        None => {
            if m.dispersion_coefficients.is_some() || m.cos_a0.is_some() || m.cos_a.is_some() || m.sin_a.is_some() {
                ctx.err(raw.span(), "coefficient overrides need a builtin model");
            }
            let (Some(d), Some(p1), Some(p2), Some(t1), Some(t2)) =
                (&m.dispersion, &m.phi1, &m.phi2, &m.parity1, &m.parity2)
            else {
                ctx.err(
                    raw.span(),
                    "model needs either `builtin` or all of dispersion, phi1, phi2, parity1, parity2",
                );
                return None;
            };
            let dispersion = ctx.expr(d);
            let phi = [ctx.expr(p1), ctx.expr(p2)];
            let parity = [ctx.parity(t1), ctx.parity(t2)];
            if let Some(d_expr) = &dispersion {
                let (defect, x) = d_expr.expr.parity_defect(1.0);
                if defect > 1e-12 {
                    ctx.err(
                        d.span(),
                        format!("dispersion is not even: u(-p,-q) != u(p,q) at {x:.3?}"),
                    );
                }
                let u00 = d_expr.expr.eval(&[0.0; 6]);
                if u00.abs() > 1e-12 {
                    ctx.err(d.span(), format!("dispersion at (0,0) is {u00}, expected 0"));
                }
            }
            for (i, (src, spanned)) in phi.iter().zip([p1, p2]).enumerate() {
                let (Some(src), Some(par)) = (src, parity[i]) else {
                    continue;
                };
                if src.expr.uses_q() {
                    ctx.err(spanned.span(), format!("phi{} may only use p1, p2, p3", i + 1));
                    continue;
                }
                let (defect, x) = src.expr.parity_defect(par.sign());
                if defect > 1e-12 {
                    ctx.err(
                        spanned.span(),
                        format!(
                            "phi{} is declared {} but is not: parity fails at p = {:.3?}",
                            i + 1,
                            if par == Parity::Even { "even" } else { "odd" },
                            &x[..3]
                        ),
                    );
                }
            }
            match (dispersion, phi, parity) {
                (Some(dispersion), [Some(a), Some(b)], [Some(s), Some(t)]) => Some(ModelConfig::Inline {
                    dispersion,
                    phi: [a, b],
                    parity: [s, t],
                }),
                _ => None,
            }
        }
    }
}

fn parse_coupling(ctx: &mut Ctx, c: &Option<Spanned<RawCoupling>>) -> Coupling {
    match c {
        None => Coupling::MuZero(1.0),
        Some(s) => match s.get_ref() {
            RawCoupling::Number(v) => {
                if !(*v > 0.0) {
                    ctx.err(s.span(), format!("coupling {v} must be positive"));
                }
                Coupling::Value(*v)
            }
            RawCoupling::Token(t) => match Coupling::parse(t) {
                Ok(c) => {
                    if let Coupling::MuZero(k) | Coupling::MuMax(k) = c {
                        if !(k > 0.0) {
                            ctx.err(s.span(), format!("coupling factor {k} must be positive"));
                        }
                    }
                    c
                }
                Err(msg) => {
                    ctx.err(s.span(), msg);
                    Coupling::MuZero(1.0)
                }
            },
        },
    }
}

fn parse_schedule(ctx: &mut Ctx, raw: Option<&RawSchedule>) -> Schedule {
    let Some(s) = raw else {
        return Schedule::List(Vec::new());
    };
    match (&s.z, &s.z_from) {
        (Some(_), Some(f)) => {
            ctx.err(f.span(), "give either `z` or `z_from`/`z_to`/`z_points`, not both");
            Schedule::List(Vec::new())
        }
        (Some(z), None) => {
            if let Some(bad) = z.get_ref().iter().find(|v| !(**v < 0.0)) {
                ctx.err(z.span(), format!("energy {bad} must be negative"));
            }
            let mut sorted = z.get_ref().clone();
            sorted.sort_by(f64::total_cmp);
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                ctx.err(z.span(), "energies must be distinct");
            }
            Schedule::List(z.get_ref().clone())
        }
        (None, Some(f)) => {
            let (Some(to), Some(points)) = (s.z_to, s.z_points) else {
                ctx.err(f.span(), "a geometric schedule needs z_from, z_to and z_points");
                return Schedule::List(Vec::new());
            };
            let from = *f.get_ref();
            if !(from < 0.0 && to < 0.0) || points < 1 || (points > 1 && from == to) {
                ctx.err(
                    f.span(),
                    "geometric schedule needs negative, distinct endpoints and z_points >= 1",
                );
                return Schedule::List(Vec::new());
            }
            Schedule::Geometric {
                from,
                to,
                points: points as usize,
            }
        }
        (None, None) => Schedule::List(Vec::new()),
    }
}

/// Parses a configuration, collecting every problem found.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let span = e.span().unwrap_or(0..0);
        vec![diag(text, span, e.message().to_string())]
    })?;
    let mut ctx = Ctx {
        text,
        diags: Vec::new(),
    };
    let model = parse_model(&mut ctx, &raw.model);
    let couplings = match &raw.couplings {
        Some(c) => [parse_coupling(&mut ctx, &c.mu1), parse_coupling(&mut ctx, &c.mu2)],
        None => [Coupling::MuZero(1.0); 2],
    };
    let d = Grids::default();
    let grids = match &raw.grids {
        Some(g) => Grids {
            quad_n: ctx.grid(&g.quad_n, d.quad_n, 8, true),
            kernel_n: ctx.grid(&g.kernel_n, d.kernel_n, 4, true),
            p_grid_n: ctx.grid(&g.p_grid_n, d.p_grid_n, 8, true),
            grid_1d_n: g.grid_1d_n.as_ref().map(|_| ctx.grid(&g.grid_1d_n, 64, 64, false)),
        },
        None => d,
    };
    let schedule = parse_schedule(&mut ctx, raw.schedule.as_ref());
    let de = EfimovConfig::default();
    let efimov = match &raw.efimov {
        Some(e) => {
            let r = match &e.r {
                Some(r) => {
                    if r.get_ref().is_empty() || r.get_ref().iter().any(|v| !(*v > 0.0)) {
                        ctx.err(r.span(), "r schedule must be a nonempty list of positive lengths");
                    }
                    r.get_ref().clone()
                }
                None => de.r.clone(),
            };
            EfimovConfig {
                l_max: ctx.grid(&e.l_max, de.l_max, 0, false),
                legendre_n: ctx.grid(&e.legendre_n, de.legendre_n, 32, false),
                y_max: ctx.positive(&e.y_max, de.y_max),
                y_step: ctx.positive(&e.y_step, de.y_step),
                r,
            }
        }
        None => de,
    };
    let output = match &raw.output {
        Some(o) => OutputConfig {
            dir: o.dir.clone().unwrap_or_else(|| "out".into()),
            format: match o.format.as_ref().map(|f| (f.get_ref().as_str(), f.span())) {
                None | Some(("csv", _)) => Format::Csv,
                Some(("json", _)) => Format::Json,
                Some((other, span)) => {
                    ctx.err(
                        span,
                        format!("output format must be \"csv\" or \"json\", not \"{other}\""),
                    );
                    Format::Csv
                }
            },
        },
        None => OutputConfig {
            dir: "out".into(),
            format: Format::Csv,
        },
    };
    match model {
        Some(model) if ctx.diags.is_empty() => Ok(ExperimentConfig {
            model,
            couplings,
            grids,
            schedule,
            efimov,
            output,
        }),
        _ => {
            let mut diags = ctx.diags;
            diags.sort_by_key(|d| (d.line, d.column));
            Err(diags)
        }
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn int(n: usize) -> Value {
    Value::Integer(n as i64)
}

impl ExperimentConfig {
    /// Serialises every resolved field; `parse_config` of the result gives
    /// back an equal configuration.
    pub fn to_toml(&self) -> String {
        let mut model = Table::new();
        match &self.model {
            ModelConfig::Builtin {
                name,
                dispersion_coefficients,
                cos_a0,
                cos_a,
                sin_a,
            } => {
                model.insert("builtin".into(), Value::String(name.name().into()));
                model.insert("dispersion_coefficients".into(), floats(dispersion_coefficients));
                model.insert("cos_a0".into(), Value::Float(*cos_a0));
                model.insert("cos_a".into(), floats(cos_a));
                model.insert("sin_a".into(), Value::Float(*sin_a));
            }
            ModelConfig::Inline {
                dispersion,
                phi,
                parity,
            } => {
                model.insert("dispersion".into(), Value::String(dispersion.source.clone()));
                for i in 0..2 {
                    model.insert(format!("phi{}", i + 1), Value::String(phi[i].source.clone()));
                    let tag = if parity[i] == Parity::Even { "even" } else { "odd" };
                    model.insert(format!("parity{}", i + 1), Value::String(tag.into()));
                }
            }
        }
        let mut couplings = Table::new();
        couplings.insert("mu1".into(), self.couplings[0].to_value());
        couplings.insert("mu2".into(), self.couplings[1].to_value());
        let mut grids = Table::new();
        grids.insert("quad_n".into(), int(self.grids.quad_n));
        grids.insert("kernel_n".into(), int(self.grids.kernel_n));
        grids.insert("p_grid_n".into(), int(self.grids.p_grid_n));
        if let Some(n) = self.grids.grid_1d_n {
            grids.insert("grid_1d_n".into(), int(n));
        }
        let mut schedule = Table::new();
        match &self.schedule {
            Schedule::List(z) => {
                schedule.insert("z".into(), floats(z));
            }
            Schedule::Geometric { from, to, points } => {
                schedule.insert("z_from".into(), Value::Float(*from));
                schedule.insert("z_to".into(), Value::Float(*to));
                schedule.insert("z_points".into(), int(*points));
            }
        }
        let mut efimov = Table::new();
        efimov.insert("l_max".into(), int(self.efimov.l_max));
        efimov.insert("legendre_n".into(), int(self.efimov.legendre_n));
        efimov.insert("y_max".into(), Value::Float(self.efimov.y_max));
        efimov.insert("y_step".into(), Value::Float(self.efimov.y_step));
        efimov.insert("r".into(), floats(&self.efimov.r));
        let mut output = Table::new();
        output.insert("dir".into(), Value::String(self.output.dir.clone()));
        let format = match self.output.format {
            Format::Csv => "csv",
            Format::Json => "json",
        };
        output.insert("format".into(), Value::String(format.into()));

        let mut doc = Table::new();
        doc.insert("model".into(), Value::Table(model));
        doc.insert("couplings".into(), Value::Table(couplings));
        doc.insert("grids".into(), Value::Table(grids));
        doc.insert("schedule".into(), Value::Table(schedule));
        doc.insert("efimov".into(), Value::Table(efimov));
        doc.insert("output".into(), Value::Table(output));
        toml::to_string(&doc).expect("configuration tables serialise")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[model]\nbuiltin = \"appendix-b-cos\"\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.couplings, [Coupling::MuZero(1.0); 2]);
        assert_eq!(c.grids, Grids::default());
        assert_eq!(c.schedule, Schedule::List(vec![]));
    }

    #[test]
    fn coupling_tokens() {
        let text = format!("{MINIMAL}[couplings]\nmu1 = \"1.5*mu0\"\nmu2 = \"mu_max\"\n");
        let c = parse_config(&text).unwrap();
        assert_eq!(c.couplings, [Coupling::MuZero(1.5), Coupling::MuMax(1.0)]);
        let text = format!("{MINIMAL}[couplings]\nmu1 = 0.02\nmu2 = \"2*mu1\"\n");
        let d = parse_config(&text).unwrap_err();
        assert_eq!(d[0].line, 5);
        assert!(d[0].message.contains("mu1"));
    }

    #[test]
    fn odd_expression_declared_even() {
        let text = "[model]\ndispersion = \"3 - cos(p1) - cos(q1) - cos(p1 - q1)\"\nphi1 = \"sin(p1)\"\nphi2 = \"1\"\nparity1 = \"even\"\nparity2 = \"even\"\n";
        let d = parse_config(text).unwrap_err();
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!((d[0].line, d[0].column), (3, 8));
        assert!(d[0].message.contains("declared even"));
    }

    #[test]
    fn malformed_expression_position() {
        let text = "[model]\ndispersion = \"3 - cos(p1 - )\"\nphi1 = \"1\"\nphi2 = \"1\"\nparity1 = \"even\"\nparity2 = \"even\"\n";
        let d = parse_config(text).unwrap_err();
        assert_eq!((d[0].line, d[0].column), (2, 28), "{d:?}");
    }

    #[test]
    fn unknown_keys_are_reported() {
        let d = parse_config("[model]\nbuiltin = \"appendix-b-cos\"\nbogus = 1\n").unwrap_err();
        assert_eq!(d[0].line, 3);
        let d = parse_config("[model]\nbuiltin = \"appendix-b-cos\"\n[grid]\nquad_n = 8\n").unwrap_err();
        assert_eq!(d[0].line, 3);
    }

    #[test]
    fn several_problems_at_once() {
        let text = format!("{MINIMAL}[grids]\nquad_n = 7\nkernel_n = 2\n[output]\nformat = \"xml\"\n");
        let d = parse_config(&text).unwrap_err();
        assert_eq!(d.iter().map(|d| d.line).collect::<Vec<_>>(), vec![4, 5, 7]);
    }

    #[test]
    fn round_trip() {
        let texts = [
            format!("{MINIMAL}[couplings]\nmu1 = \"0.5*mu_max\"\nmu2 = 0.013\n[schedule]\nz = [-0.01, -0.001]\n[grids]\ngrid_1d_n = 100\n"),
            "[model]\ndispersion = \"3 - cos(p1) - cos(q1) - cos(p1 - q1)\"\nphi1 = \"sin(p1) + sin(p2)\"\nphi2 = \"1 + 0.5*cos(p3)\"\nparity1 = \"odd\"\nparity2 = \"even\"\n[schedule]\nz_from = -1e-2\nz_to = -1e-5\nz_points = 4\n[output]\nformat = \"json\"\n".to_string(),
        ];
        for t in texts {
            let a = parse_config(&t).unwrap();
            let b = parse_config(&a.to_toml()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn geometric_schedule_is_increasing() {
        let s = Schedule::Geometric {
            from: -1e-2,
            to: -1e-4,
            points: 3,
        };
        let z = s.energies();
        assert_eq!(z.len(), 3);
        assert!((z[0] + 1e-2).abs() < 1e-15 && (z[2] + 1e-4).abs() < 1e-17 && z[1] > z[0]);
    }
}
