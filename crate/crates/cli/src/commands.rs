//! Subcommand bodies. Each returns the rendered artifact and whether the
//! underlying solve converged.

use std::fmt::Write as _;
use std::sync::Arc;

use ocvar_core::bvp::{control_cost, solve_costate, solve_costate_free, ShootingResult};
use ocvar_core::cases::CaseConfig;
use ocvar_core::control_ode::{fmt_num, integrate, Trajectory};
use ocvar_core::costate_oracle::equivalence_check;
use ocvar_core::helmholtz::{check_system, HelmholtzReport, Multiplier, DEFAULT_TOL};
use ocvar_core::invariants::{drift_report, hamiltonian_costate_free, mass_spring_invariant_set, ConservedQuantity};
use ocvar_core::lagrangian::{discrete_el_residual, max_residual, LagrangianForm, OCLagrangian, Wrt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::problem::Loaded;
use crate::{CliError, Format};

pub const FORMAT_VERSION: u32 = 1;

pub struct Artifact {
    pub body: String,
    pub converged: bool,
}

#[derive(Serialize)]
struct Meta<'a> {
    command: &'a str,
    format_version: u32,
    case: &'a str,
    seed: u64,
    h: f64,
    tol: f64,
}

fn meta<'a>(command: &'a str, p: &'a Loaded, seed: u64) -> Meta<'a> {
    Meta {
        command,
        format_version: FORMAT_VERSION,
        case: p.problem.system.name(),
        seed,
        h: p.h,
        tol: p.tol,
    }
}

#[derive(Serialize)]
struct SolverSummary {
    converged: bool,
    iterations: usize,
    unknowns: Vec<f64>,
    constraint_residual_inf: f64,
    cost: f64,
}

impl From<&ShootingResult> for SolverSummary {
    fn from(r: &ShootingResult) -> Self {
        Self {
            converged: r.converged,
            iterations: r.iterations,
            unknowns: r.unknowns.iter().copied().collect(),
            constraint_residual_inf: r.constraint_residual.amax(),
            cost: r.cost(),
        }
    }
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Io(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn csv<F>(write: F) -> Result<String, CliError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    String::from_utf8(buf).map_err(|e| CliError::Io(e.to_string()))
}

fn solve_free(p: &Loaded) -> Result<ShootingResult, CliError> {
    solve_costate_free(&p.system, &p.boundary_spec()?, &p.guess(), &p.options()).map_err(CliError::from_core)
}

pub fn solve(p: &Loaded, seed: u64, format: Format) -> Result<Artifact, CliError> {
    let r = solve_free(p)?;
    let body = match format {
        Format::Csv => csv(|w| r.trajectory.write_csv(w))?,
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                #[serde(flatten)]
                meta: Meta<'a>,
                #[serde(flatten)]
                result: SolverSummary,
                #[serde(skip_serializing_if = "Option::is_none")]
                reference_cost: Option<f64>,
                #[serde(skip_serializing_if = "Option::is_none")]
                reference_cost_error: Option<f64>,
            }
            let reference_cost = p.problem.reference.as_ref().and_then(|r| r.cost);
            let cost = r.cost();
            json(&Out {
                meta: meta("solve", p, seed),
                result: SolverSummary::from(&r),
                reference_cost,
                reference_cost_error: reference_cost.map(|c| (cost - c).abs()),
            })?
        }
    };
    Ok(Artifact { body, converged: r.converged })
}

pub fn compare(p: &Loaded, seed: u64, format: Format) -> Result<Artifact, CliError> {
    let spec = p.boundary_spec()?;
    let opts = p.options();
    let free = solve_free(p)?;
    let guess = nalgebra::DVector::zeros(2 * p.system.dof());
    let costate = solve_costate(&p.system, &spec, &guess, &opts).map_err(CliError::from_core)?;
    let converged = free.converged && costate.converged;
    let costate_traj = costate.costate.as_ref().expect("costate solve keeps its trajectory");
    let body = match format {
        Format::Csv => csv(|w| costate_traj.write_csv(&p.system, w))?,
        Format::Json => {
            let rep = equivalence_check(&p.system, costate_traj, &free.trajectory).map_err(CliError::from_core)?;
            #[derive(Serialize)]
            struct Out<'a> {
                #[serde(flatten)]
                meta: Meta<'a>,
                converged: bool,
                costate_free: SolverSummary,
                costate: SolverSummary,
                state_rms: f64,
                state_max: f64,
                control_rms: f64,
                control_max: f64,
                cost_rel_diff: f64,
                diverging: bool,
            }
            let (a, b) = (free.cost(), costate.cost());
            json(&Out {
                meta: meta("compare", p, seed),
                converged,
                costate_free: SolverSummary::from(&free),
                costate: SolverSummary::from(&costate),
                state_rms: rep.state_rms,
                state_max: rep.state_max,
                control_rms: rep.control_rms,
                control_max: rep.control_max,
                cost_rel_diff: (a - b).abs() / b.abs().max(f64::MIN_POSITIVE),
                diverging: rep.diverging,
            })?
        }
    };
    Ok(Artifact { body, converged })
}

pub fn helmholtz(p: &Loaded, seed: u64, format: Format) -> Result<Artifact, CliError> {
    let sec = p.helmholtz()?;
    if sec.multiplier == Multiplier::Jlm && p.system.classical_lagrangian().is_none() {
        return Err(CliError::Validation(format!(
            "case {} has no classical Lagrangian, so no JLM multiplier",
            p.problem.system.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = p.sample_box().sample(sec.samples, &mut rng);
    let tol = sec.tol.unwrap_or(DEFAULT_TOL);
    let report = check_system(&p.system, sec.multiplier, &samples, tol, sec.form).map_err(CliError::from_core)?;
    let body = match format {
        Format::Csv => {
            let mut s = String::from("condition,residual\n");
            for (name, r) in [
                ("cond1_sym", report.cond1_sym),
                ("cond2_dqdot", report.cond2_dqdot),
                ("cond3_beta", report.cond3_beta),
                ("cond4_mixed", report.cond4_mixed),
            ] {
                let _ = writeln!(s, "{name},{}", fmt_num(r));
            }
            s
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Out<'a> {
                command: &'a str,
                format_version: u32,
                case: &'a str,
                seed: u64,
                multiplier: Multiplier,
                report: HelmholtzReport,
            }
            json(&Out {
                command: "helmholtz",
                format_version: FORMAT_VERSION,
                case: p.problem.system.name(),
                seed,
                multiplier: sec.multiplier,
                report,
            })?
        }
    };
    Ok(Artifact { body, converged: true })
}

/// `(m, k)` when the case is an undamped oscillator.
fn mass_spring_params(cfg: &CaseConfig) -> Option<(f64, f64)> {
    match *cfg {
        CaseConfig::MassSpring(p) => Some((p.m, p.k)),
        CaseConfig::Msd(p) if p.c == 0.0 => Some((p.m, p.k)),
        _ => None,
    }
}

pub fn invariants(p: &Loaded, seed: u64, format: Format) -> Result<Artifact, CliError> {
    let r = solve_free(p)?;
    let sys = Arc::new(ocvar_core::cases::from_config(&p.problem.system).map_err(CliError::validation)?);
    let h_sys = sys.clone();
    let hamiltonian = ConservedQuantity::new("H", move |s| hamiltonian_costate_free(&h_sys, s));
    let physical = r.trajectory.scale_control(sys.control_scale());
    let noether = match mass_spring_params(&p.problem.system) {
        Some((m, k)) => mass_spring_invariant_set(m, k).map_err(CliError::from_core)?,
        None => Vec::new(),
    };
    let body = match format {
        Format::Csv => {
            let mut s = String::from("t,H");
            for q in &noether {
                let _ = write!(s, ",{}", q.name.replace(' ', "_"));
            }
            s.push('\n');
            for (a, b) in r.trajectory.states().iter().zip(physical.states()) {
                let _ = write!(s, "{},{}", fmt_num(a.t), fmt_num(hamiltonian.value(a).map_err(CliError::from_core)?));
                for q in &noether {
                    let _ = write!(s, ",{}", fmt_num(q.value(b).map_err(CliError::from_core)?));
                }
                s.push('\n');
            }
            s
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Drift {
                name: String,
                initial: f64,
                max_drift_abs: f64,
                max_drift_rel: f64,
            }
            let drift = |traj: &Trajectory, q: &ConservedQuantity| -> Result<Drift, CliError> {
                let d = drift_report(traj, q).map_err(CliError::from_core)?;
                Ok(Drift {
                    name: q.name.clone(),
                    initial: d.initial,
                    max_drift_abs: d.max_drift_abs,
                    max_drift_rel: d.max_drift_rel,
                })
            };
            #[derive(Serialize)]
            struct Out<'a> {
                #[serde(flatten)]
                meta: Meta<'a>,
                converged: bool,
                cost: f64,
                hamiltonian: Drift,
                invariants: Vec<Drift>,
            }
            json(&Out {
                meta: meta("invariants", p, seed),
                converged: r.converged,
                cost: control_cost(&r.trajectory),
                hamiltonian: drift(&r.trajectory, &hamiltonian)?,
                invariants: noether.iter().map(|q| drift(&physical, q)).collect::<Result<_, _>>()?,
            })?
        }
    };
    Ok(Artifact { body, converged: r.converged })
}

pub fn el_residual(p: &Loaded, seed: u64, format: Format) -> Result<Artifact, CliError> {
    let r = solve_free(p)?;
    let spec = p.boundary_spec()?;
    let span = (spec.tf - spec.t0) / p.h;
    if (span - span.round()).abs() > 1e-9 {
        return Err(CliError::Validation(format!(
            "el-residual needs (tf - t0)/h to be an integer, got {span}"
        )));
    }
    let lag = OCLagrangian::default_for(&p.system);
    let fine = integrate(&p.system, r.trajectory.first(), spec.tf, p.h / 2.0).map_err(CliError::from_core)?;
    let residuals = |traj: &Trajectory, w: Wrt| discrete_el_residual(&lag, traj, w).map_err(CliError::from_core);
    let body = match format {
        Format::Csv => {
            let n = p.system.dof();
            let rq = residuals(&r.trajectory, Wrt::Q)?;
            let ru = residuals(&r.trajectory, Wrt::U)?;
            let mut s = String::from("t");
            for i in 1..=n {
                let _ = write!(s, ",el_q{i}");
            }
            for i in 1..=n {
                let _ = write!(s, ",el_u{i}");
            }
            s.push('\n');
            for (k, (a, b)) in rq.iter().zip(&ru).enumerate() {
                s.push_str(&fmt_num(r.trajectory.grid()[k + 1]));
                for x in a.iter().chain(b.iter()) {
                    s.push(',');
                    s.push_str(&fmt_num(*x));
                }
                s.push('\n');
            }
            s
        }
        Format::Json => {
            let mut stats = [[0.0; 2]; 2];
            for (i, w) in [Wrt::Q, Wrt::U].into_iter().enumerate() {
                stats[i] = [
                    max_residual(&residuals(&r.trajectory, w)?),
                    max_residual(&residuals(&fine, w)?),
                ];
            }
            #[derive(Serialize)]
            struct Out<'a> {
                #[serde(flatten)]
                meta: Meta<'a>,
                converged: bool,
                form: &'a str,
                el_q: [f64; 2],
                el_u: [f64; 2],
                ratio_q: f64,
                ratio_u: f64,
            }
            json(&Out {
                meta: meta("el-residual", p, seed),
                converged: r.converged,
                form: match lag.form {
                    LagrangianForm::Split => "split",
                    LagrangianForm::Jlm => "jlm",
                    LagrangianForm::Reduced => "reduced",
                },
                el_q: stats[0],
                el_u: stats[1],
                ratio_q: stats[0][0] / stats[0][1],
                ratio_u: stats[1][0] / stats[1][1],
            })?
        }
    };
    Ok(Artifact { body, converged: r.converged })
}
