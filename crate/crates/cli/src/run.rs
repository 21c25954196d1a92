//! Command execution and artifact output.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use threebody::birman_schwinger::{count_schedule, CountResult, COUNT_TOLERANCE};
use threebody::efimov::{fit_nz_slope, sobolev_params_from_hessian, EfimovOptions, FrequencyGrid};
use threebody::friedrichs::{Friedrichs, FriedrichsSettings};
use threebody::lattice_model::{estimate_hessian_blocks, make_appendix_b_model, verify_hypotheses_with, AppendixBForm};
use threebody::spectrum::essential_spectrum;
use threebody::{Channel, Dispersion, Error, FormFactor, ModelSpec, TorusPoint, UniformGrid};

use crate::config::{Builtin, Coupling, Diagnostic, ExperimentConfig, Format, ModelConfig};

/// Version tag of the CSV layouts.
pub const SCHEMA_VERSION: u32 = 1;
const HESSIAN_STEP: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Verify,
    Friedrichs,
    Spectrum,
    Count,
    Efimov,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Verify => "verify",
            Command::Friedrichs => "friedrichs",
            Command::Spectrum => "spectrum",
            Command::Count => "count",
            Command::Efimov => "efimov",
        }
    }
}

/// Why a run stopped.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    /// Bad input; exit status 1.
    #[error("invalid input: {0}")]
    Validation(String),
    /// A numerical routine failed; exit status 2.
    #[error("numerical failure: {0}")]
    Numerical(Error),
    #[error("i/o: {0}")]
    Io(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Numerical(_) | Failure::Io(_) => 2,
        }
    }

    fn record(&self) -> Value {
        let (kind, message) = match self {
            Failure::Validation(m) => ("validation", m.clone()),
            Failure::Numerical(e) => ("numerical", e.to_string()),
            Failure::Io(m) => ("io", m.clone()),
        };
        json!({ "kind": kind, "message": message })
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) | Error::Model(m) | Error::InsufficientData(m) => Failure::Validation(m),
            // The requested energies or grids lie outside what the input allows.
            Error::NotBelowEssentialSpectrum { .. } | Error::AboveThreshold { .. } | Error::GridTooLarge { .. } => {
                Failure::Validation(e.to_string())
            }
            other => Failure::Numerical(other),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

/// Collects tables and summary fields, and writes them on completion or
/// failure.
struct Artifacts {
    dir: PathBuf,
    format: Format,
    files: Vec<String>,
    summary: serde_json::Map<String, Value>,
}

impl Artifacts {
    fn table<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Outcome<()> {
        let file = match self.format {
            Format::Csv => format!("{name}.csv"),
            Format::Json => format!("{name}.json"),
        };
        let path = self.dir.join(&file);
        let io = |e: &dyn std::fmt::Display| Failure::Io(format!("{}: {e}", path.display()));
        match self.format {
            Format::Csv => {
                let mut w = csv::Writer::from_path(&path).map_err(|e| io(&e))?;
                for r in rows {
                    w.serialize(r).map_err(|e| io(&e))?;
                }
                w.flush().map_err(|e| io(&e))?;
            }
            Format::Json => {
                let text = serde_json::to_string_pretty(rows).map_err(|e| io(&e))?;
                fs::write(&path, text + "\n").map_err(|e| io(&e))?;
            }
        }
        self.files.push(file);
        Ok(())
    }

    fn set(&mut self, key: &str, v: impl Serialize) {
        self.summary
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    fn finish(mut self, failure: Option<&Failure>) -> Outcome<()> {
        self.summary.insert("partial".into(), Value::Bool(failure.is_some()));
        self.summary
            .insert("error".into(), failure.map_or(Value::Null, Failure::record));
        self.summary.insert("tables".into(), json!(self.files));
        let path = self.dir.join("summary.json");
        let text =
            serde_json::to_string_pretty(&Value::Object(self.summary)).map_err(|e| Failure::Io(e.to_string()))?;
        fs::write(&path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
    }
}

fn form(builtin: Builtin, cos_a0: f64, cos_a: [f64; 3], sin_a: f64) -> AppendixBForm {
    match builtin {
        Builtin::AppendixBCos => AppendixBForm::Cos { a0: cos_a0, a: cos_a },
        Builtin::AppendixBSin => AppendixBForm::Sin { a: sin_a },
    }
}

/// Model with unit couplings.
pub fn build_model(cfg: &ExperimentConfig) -> Outcome<ModelSpec> {
    match &cfg.model {
        ModelConfig::Builtin {
            name,
            dispersion_coefficients: [a, b, c],
            cos_a0,
            cos_a,
            sin_a,
        } => {
            let f = form(*name, *cos_a0, *cos_a, *sin_a);
            let m = make_appendix_b_model([f, f], 1.0, 1.0)?;
            Ok(if [*a, *b, *c] == [1.0; 3] {
                m
            } else {
                m.with_dispersion(Dispersion::CosineSum { a: *a, b: *b, c: *c })
            })
        }
        ModelConfig::Inline {
            dispersion,
            phi,
            parity,
        } => {
            let d = Arc::new(dispersion.expr.clone());
            let disp = Dispersion::custom(move |p: &TorusPoint, q: &TorusPoint| {
                let (p, q) = (p.coords(), q.coords());
                d.eval(&[p[0], p[1], p[2], q[0], q[1], q[2]])
            });
            let mut ff = Vec::new();
            for i in 0..2 {
                let e = Arc::new(phi[i].expr.clone());
                ff.push(FormFactor::custom(
                    move |p: &TorusPoint| {
                        let p = p.coords();
                        e.eval(&[p[0], p[1], p[2], 0.0, 0.0, 0.0])
                    },
                    parity[i],
                )?);
            }
            let phi2 = ff.pop().expect("two form factors");
            let phi1 = ff.pop().expect("two form factors");
            Ok(ModelSpec::new("inline", disp, phi1, phi2, 1.0, 1.0)?)
        }
    }
}

fn settings(cfg: &ExperimentConfig) -> FriedrichsSettings {
    FriedrichsSettings {
        quad_n: cfg.grids.quad_n,
        ..FriedrichsSettings::default()
    }
}

#[derive(Serialize)]
struct ResolvedCoupling {
    channel: u8,
    token: String,
    mu: f64,
    mu_zero: f64,
    mu_max: Option<f64>,
}

/// Resolves symbolic couplings against the configured quadrature grid.
fn resolve(cfg: &ExperimentConfig, base: &ModelSpec) -> Outcome<(Friedrichs, Vec<ResolvedCoupling>)> {
    let fr = Friedrichs::new(base, settings(cfg))?;
    let mut mus = [0.0; 2];
    let mut info = Vec::new();
    for ch in [Channel::One, Channel::Two] {
        let c = cfg.couplings[ch.index()];
        let mu_zero = fr.mu_zero(ch)?;
        let (mu, mu_max) = match c {
            Coupling::Value(v) => (v, None),
            Coupling::MuZero(k) => (k * mu_zero, None),
            Coupling::MuMax(k) => {
                let mm = fr.mu_max(ch, cfg.grids.p_grid_n)?.value;
                (k * mm, Some(mm))
            }
        };
        mus[ch.index()] = mu;
        info.push(ResolvedCoupling {
            channel: ch.number(),
            token: c.to_string(),
            mu,
            mu_zero,
            mu_max,
        });
    }
    let model = base.with_couplings(mus[0], mus[1])?;
    Ok((Friedrichs::new(&model, settings(cfg))?, info))
}

#[derive(Serialize)]
struct CheckRow<'a> {
    name: &'a str,
    passed: bool,
    detail: &'a str,
}

#[derive(Serialize)]
struct DeltaRow {
    channel: u8,
    p1: f64,
    p2: f64,
    p3: f64,
    z: f64,
    delta: f64,
}

#[derive(Serialize)]
struct BranchRow {
    channel: u8,
    p1: f64,
    p2: f64,
    p3: f64,
    present: bool,
    z: Option<f64>,
}

#[derive(Serialize)]
struct BandRow {
    lo: f64,
    hi: f64,
}

#[derive(Serialize)]
struct CountRow {
    z: f64,
    log_abs_z: f64,
    count: usize,
    grid_n: usize,
    resolution_flag: bool,
}

#[derive(Serialize)]
struct DegreeRow {
    y: f64,
    degree: usize,
    count: usize,
}

#[derive(Serialize)]
struct SrRow {
    r: f64,
    grid_1d_n: usize,
    count: usize,
    density: f64,
}

fn count_rows(counts: &[CountResult]) -> Vec<CountRow> {
    counts
        .iter()
        .map(|c| CountRow {
            z: c.z,
            log_abs_z: c.log_abs_z(),
            count: c.count,
            grid_n: c.grid_n,
            resolution_flag: c.resolution_flag,
        })
        .collect()
}

fn model_label(cfg: &ExperimentConfig) -> Value {
    match &cfg.model {
        ModelConfig::Builtin {
            name,
            dispersion_coefficients,
            cos_a0,
            cos_a,
            sin_a,
        } => json!({
            "builtin": name.name(),
            "dispersion_coefficients": dispersion_coefficients,
            "cos_a0": cos_a0,
            "cos_a": cos_a,
            "sin_a": sin_a,
        }),
        ModelConfig::Inline {
            dispersion,
            phi,
            parity,
        } => json!({
            "dispersion": dispersion.source,
            "phi1": phi[0].source,
            "phi2": phi[1].source,
            "parity1": format!("{:?}", parity[0]).to_lowercase(),
            "parity2": format!("{:?}", parity[1]).to_lowercase(),
        }),
    }
}

fn execute(cmd: Command, cfg: &ExperimentConfig, art: &mut Artifacts) -> Outcome<()> {
    let base = build_model(cfg)?;
    match cmd {
        Command::Verify => {
            let report = verify_hypotheses_with(&base, cfg.grids.p_grid_n, settings(cfg))?;
            let rows: Vec<CheckRow> = report
                .checks
                .iter()
                .map(|c| CheckRow {
                    name: &c.name,
                    passed: c.passed,
                    detail: &c.detail,
                })
                .collect();
            art.table("hypotheses", &rows)?;
            art.set("all_passed", report.all_passed());
            art.set("pair_grid_n", report.pair_grid_n);
            art.set("hessian_step", HESSIAN_STEP);
        }
        Command::Friedrichs => {
            let (fr, couplings) = resolve(cfg, &base)?;
            art.set("couplings", &couplings);
            let zs = cfg.schedule.energies();
            let pg = UniformGrid::new(cfg.grids.p_grid_n)?;
            let mut classes = serde_json::Map::new();
            let mut expansions = serde_json::Map::new();
            let mut minimizers = serde_json::Map::new();
            let mut branch_rows = Vec::new();
            let mut delta_rows = Vec::new();
            for ch in [Channel::One, Channel::Two] {
                let key = format!("channel{}", ch.number());
                classes.insert(
                    key.clone(),
                    serde_json::to_value(fr.classify_threshold(ch)?).unwrap_or(Value::Null),
                );
                // The expansion is only defined at a zero-energy resonance.
                let exp = match fr.threshold_expansion_check(ch) {
                    Ok(x) => serde_json::to_value(x).unwrap_or(Value::Null),
                    Err(e) => json!({ "not_applicable": e.to_string() }),
                };
                expansions.insert(key.clone(), exp);
                let asym = match fr.minimizer_asymptotics(ch) {
                    Ok(x) => serde_json::to_value(x).unwrap_or(Value::Null),
                    Err(e) => json!({ "not_applicable": e.to_string() }),
                };
                minimizers.insert(key, asym);
                let mu = fr.model().mu(ch);
                let branch = fr.branch(ch, mu, cfg.grids.p_grid_n)?;
                for s in &branch.samples {
                    let c = s.p.coords();
                    branch_rows.push(BranchRow {
                        channel: ch.number(),
                        p1: c[0],
                        p2: c[1],
                        p3: c[2],
                        present: s.z.is_some(),
                        z: s.z,
                    });
                }
                for p in pg.nodes() {
                    let slice = fr.slice(ch, &p)?;
                    let c = p.coords();
                    for &z in &zs {
                        let delta = 1.0 - mu * fr.lambda_on(&slice, z)?.value;
                        delta_rows.push(DeltaRow {
                            channel: ch.number(),
                            p1: c[0],
                            p2: c[1],
                            p3: c[2],
                            z,
                            delta,
                        });
                    }
                }
            }
            let hb = estimate_hessian_blocks(fr.model(), HESSIAN_STEP)?;
            if (hb.l1 - hb.l2).abs() > 1e-6 * hb.l1.abs().max(hb.l2.abs()) {
                art.set(
                    "notes",
                    ["l1 != l2: the threshold coefficient and the minimiser curvature differ between the l_alpha and l_beta conventions; both are reported"],
                );
            }
            art.set("threshold", classes);
            art.set("threshold_expansion", expansions);
            art.set("minimizer_asymptotics", minimizers);
            art.table("branch", &branch_rows)?;
            if !zs.is_empty() {
                art.table("delta", &delta_rows)?;
            }
        }
        Command::Spectrum => {
            let (fr, couplings) = resolve(cfg, &base)?;
            art.set("couplings", &couplings);
            let es = essential_spectrum(&fr, cfg.grids.p_grid_n)?;
            let rows: Vec<BandRow> = es.bands.iter().map(|b| BandRow { lo: b.lo, hi: b.hi }).collect();
            art.table("bands", &rows)?;
            art.set("regime", es.regime);
            art.set("m_big", es.m_big);
            art.set(
                "band_endpoints",
                json!({ "a1": es.a1, "b1": es.b1, "a2": es.a2, "b2": es.b2 }),
            );
            art.set("channels", &es.channels);
        }
        Command::Count => {
            let zs = cfg.schedule.energies();
            if zs.is_empty() {
                return Err(Failure::Validation(
                    "the count command needs a nonempty z schedule".into(),
                ));
            }
            let (fr, couplings) = resolve(cfg, &base)?;
            art.set("couplings", &couplings);
            let counts = count_schedule(&fr, &zs, cfg.grids.kernel_n)?;
            art.table("counts", &count_rows(&counts))?;
            art.set(
                "top_singular_values",
                counts.iter().map(|c| &c.top_singular_values).collect::<Vec<_>>(),
            );
        }
        Command::Efimov => {
            let zs = cfg.schedule.energies();
            if zs.len() < 3 {
                return Err(Failure::Validation(format!(
                    "the efimov command fits N(z) and needs at least 3 energies, got {}",
                    zs.len()
                )));
            }
            let hb = estimate_hessian_blocks(&base, HESSIAN_STEP)?;
            let params = sobolev_params_from_hessian(&hb)?;
            art.set(
                "hessian",
                json!({ "l1": hb.l1, "l2": hb.l2, "l": hb.l, "residual": hb.residual, "step": HESSIAN_STEP }),
            );
            art.set("sobolev_params", params);
            let (fr, couplings) = resolve(cfg, &base)?;
            art.set("couplings", &couplings);
            let counts = count_schedule(&fr, &zs, cfg.grids.kernel_n)?;
            art.table("counts", &count_rows(&counts))?;
            let opts = EfimovOptions {
                grid: FrequencyGrid {
                    y_max: cfg.efimov.y_max,
                    step: cfg.efimov.y_step,
                },
                l_max: cfg.efimov.l_max,
                quad_n: cfg.efimov.legendre_n,
                r_schedule: cfg.efimov.r.clone(),
                grid_1d_n: cfg.grids.grid_1d_n,
            };
            let est = fit_nz_slope(&counts, &params, &opts)?;
            let mut deg = Vec::new();
            for (j, y) in est.y.iter().enumerate() {
                for (l, &count) in est.per_degree_counts[j].iter().enumerate() {
                    deg.push(DegreeRow {
                        y: *y,
                        degree: l,
                        count,
                    });
                }
            }
            let sr: Vec<SrRow> = est
                .sr_sequence
                .iter()
                .map(|s| SrRow {
                    r: s.r,
                    grid_1d_n: s.grid_1d_n,
                    count: s.count,
                    density: s.density,
                })
                .collect();
            art.table("sr_sequence", &sr)?;
            art.table("per_degree_counts", &deg)?;
            art.set("u0", est.u0);
            art.set("lower_bound", est.lower_bound);
            art.set("meets_lower_bound", est.meets_lower_bound);
            art.set("frequency_grid", est.grid);
            art.set("l_max", est.l_max);
            art.set("legendre_n", est.quad_n);
            art.set("closed_forms", &est.closed_forms);
            art.set("nz_fit", &est.nz_fit);
            let mut notes = vec![
                "U0 is computed from the Fourier transform of the Legendre-projected Sobolev kernel; the closed form reproduced is reported under closed_forms".to_string(),
            ];
            if !est.meets_lower_bound {
                notes.push(format!(
                    "U0 = {:.6} is below the bound log(2 u12)/pi^2 = {:.6}; the degree-zero symbol is not dominated by 2 u12 exp(-pi|y|/2) near y = 0",
                    est.u0, est.lower_bound
                ));
            }
            if est.nz_fit.range_too_shallow {
                notes.push(format!(
                    "range too shallow: U0 times the |log|z|| span is {:.3}, so the fitted slope is not an estimate of U0",
                    est.u0 * est.nz_fit.log_span
                ));
            }
            if est.nz_fit.resolution_limited {
                notes.push(
                    "fewer than 3 energies are resolved by the kernel grid; the fit uses grid-limited counts".into(),
                );
            }
            art.set("notes", notes);
        }
    }
    Ok(())
}

/// Writes the summary of a run whose configuration did not parse.
pub fn write_config_failure(cmd: Command, out: &Path, diags: &[Diagnostic]) -> Outcome<()> {
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let summary = json!({
        "command": cmd.name(),
        "schema_version": SCHEMA_VERSION,
        "partial": true,
        "tables": [],
        "error": { "kind": "validation", "message": "configuration rejected", "diagnostics": diags },
    });
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Io(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Runs `cmd` and writes its artifacts into `out` (created if needed).
/// A `summary.json` is written in every case once the directory exists.
pub fn run(cmd: Command, cfg: &ExperimentConfig, out: &Path) -> Outcome<()> {
    fs::create_dir_all(out).map_err(|e| Failure::Io(format!("{}: {e}", out.display())))?;
    let mut art = Artifacts {
        dir: out.to_path_buf(),
        format: cfg.output.format,
        files: Vec::new(),
        summary: serde_json::Map::new(),
    };
    art.set("command", cmd.name());
    art.set("schema_version", SCHEMA_VERSION);
    art.set("model", model_label(cfg));
    art.set(
        "grids",
        json!({
            "quad_n": cfg.grids.quad_n,
            "kernel_n": cfg.grids.kernel_n,
            "p_grid_n": cfg.grids.p_grid_n,
            "grid_1d_n": cfg.grids.grid_1d_n,
            "efimov_y_max": cfg.efimov.y_max,
            "efimov_y_step": cfg.efimov.y_step,
            "efimov_l_max": cfg.efimov.l_max,
            "efimov_legendre_n": cfg.efimov.legendre_n,
            "efimov_r": cfg.efimov.r,
        }),
    );
    let s = FriedrichsSettings {
        quad_n: cfg.grids.quad_n,
        ..FriedrichsSettings::default()
    };
    art.set(
        "tolerances",
        json!({
            "root_tol": s.root_tol,
            "class_tol": s.class_tol,
            "threshold_shift": s.threshold_shift,
            "count_tolerance": COUNT_TOLERANCE,
        }),
    );
    art.set("schedule", cfg.schedule.energies());
    let result = execute(cmd, cfg, &mut art);
    let failure = result.err();
    art.finish(failure.as_ref())?;
    match failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}
