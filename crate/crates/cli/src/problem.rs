//! Problem files.

use std::path::Path;

use nalgebra::DVector;
use ocvar_core::bvp::{BoundarySpec, ShootingOptions, DEFAULT_MAX_HALVINGS, DEFAULT_MAX_ITER, DEFAULT_TOL};
use ocvar_core::cases::{self, CaseConfig};
use ocvar_core::helmholtz::{ConditionForm, Multiplier};
use ocvar_core::model::{MechanicalSystem, SampleBox};
use serde::Deserialize;

use crate::CliError;

pub const PROBLEM_VERSION: u32 = 1;
pub const DEFAULT_H: f64 = 1e-3;
pub const DEFAULT_SAMPLES: usize = 50;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Problem {
    pub version: u32,
    pub system: CaseConfig,
    #[serde(default)]
    pub boundary: Option<Boundary>,
    #[serde(default)]
    pub solver: Solver,
    #[serde(default)]
    pub helmholtz: Option<HelmholtzSection>,
    #[serde(default)]
    pub reference: Option<Reference>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Boundary {
    pub t0: f64,
    pub tf: f64,
    pub q0: Vec<f64>,
    pub qdot0: Vec<f64>,
    pub qf: Vec<f64>,
    pub qdotf: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Solver {
    pub h: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Initial `(u, u̇)` for costate-free shooting; zeros when absent.
    pub guess: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelmholtzSection {
    pub multiplier: Multiplier,
    #[serde(default = "default_form")]
    pub form: ConditionForm,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub tol: Option<f64>,
    #[serde(default, rename = "box")]
    pub sample_box: Option<BoxSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub q_lo: Vec<f64>,
    pub q_hi: Vec<f64>,
    pub qdot_lo: Vec<f64>,
    pub qdot_hi: Vec<f64>,
    #[serde(default)]
    pub t_lo: f64,
    #[serde(default)]
    pub t_hi: f64,
}

/// Known answers carried by fixtures; reported against, never used to solve.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub cost: Option<f64>,
}

fn default_form() -> ConditionForm {
    ConditionForm::Standard
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

/// Problem with its system built and overrides applied.
pub struct Loaded {
    pub problem: Problem,
    pub system: MechanicalSystem,
    pub h: f64,
    pub tol: f64,
}

pub fn load(path: &Path, h: Option<f64>, tol: Option<f64>) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read problem {}: {e}", path.display())))?;
    let problem: Problem =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("invalid problem file: {e}")))?;
    if problem.version != PROBLEM_VERSION {
        return Err(CliError::Validation(format!(
            "unsupported problem version {}, expected {PROBLEM_VERSION}",
            problem.version
        )));
    }
    let system = cases::from_config(&problem.system).map_err(CliError::validation)?;
    let h = h.or(problem.solver.h).unwrap_or(DEFAULT_H);
    let tol = tol.or(problem.solver.tol).unwrap_or(DEFAULT_TOL);
    if !(h.is_finite() && h > 0.0) {
        return Err(CliError::Validation(format!("step must be positive, got {h}")));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(CliError::Validation(format!("tolerance must be positive, got {tol}")));
    }
    let n = system.dof();
    if let Some(b) = &problem.boundary {
        for (name, len) in [("q0", b.q0.len()), ("qdot0", b.qdot0.len()), ("qf", b.qf.len()), ("qdotf", b.qdotf.len())] {
            if len != n {
                return Err(CliError::Validation(format!("boundary.{name} has {len} entries, system has {n} dof")));
            }
        }
    }
    if let Some(g) = &problem.solver.guess {
        if g.len() != 2 * n {
            return Err(CliError::Validation(format!("solver.guess has {} entries, expected {}", g.len(), 2 * n)));
        }
    }
    if let Some(HelmholtzSection { sample_box: Some(b), samples, .. }) = &problem.helmholtz {
        for (name, len) in [("q_lo", b.q_lo.len()), ("q_hi", b.q_hi.len()), ("qdot_lo", b.qdot_lo.len()), ("qdot_hi", b.qdot_hi.len())] {
            if len != n {
                return Err(CliError::Validation(format!("helmholtz.box.{name} has {len} entries, system has {n} dof")));
            }
        }
        if *samples == 0 {
            return Err(CliError::Validation("helmholtz.samples must be positive".into()));
        }
    }
    Ok(Loaded { problem, system, h, tol })
}

impl Loaded {
    pub fn boundary_spec(&self) -> Result<BoundarySpec, CliError> {
        let b = self
            .problem
            .boundary
            .as_ref()
            .ok_or_else(|| CliError::Validation("problem has no boundary section".into()))?;
        let v = |x: &[f64]| DVector::from_column_slice(x);
        BoundarySpec::full_state(b.t0, b.tf, v(&b.q0), v(&b.qdot0), v(&b.qf), v(&b.qdotf)).map_err(CliError::validation)
    }

    pub fn options(&self) -> ShootingOptions {
        ShootingOptions {
            h: self.h,
            tol: self.tol,
            max_iter: self.problem.solver.max_iter.unwrap_or(DEFAULT_MAX_ITER),
            max_halvings: DEFAULT_MAX_HALVINGS,
        }
    }

    pub fn guess(&self) -> DVector<f64> {
        match &self.problem.solver.guess {
            Some(g) => DVector::from_column_slice(g),
            None => DVector::zeros(2 * self.system.dof()),
        }
    }

    pub fn helmholtz(&self) -> Result<&HelmholtzSection, CliError> {
        self.problem
            .helmholtz
            .as_ref()
            .ok_or_else(|| CliError::Validation("problem has no helmholtz section".into()))
    }

    /// Sample box from the problem, else the case's default region.
    pub fn sample_box(&self) -> SampleBox {
        if let Some(b) = self.problem.helmholtz.as_ref().and_then(|h| h.sample_box.as_ref()) {
            return SampleBox {
                q_lo: b.q_lo.clone(),
                q_hi: b.q_hi.clone(),
                qdot_lo: b.qdot_lo.clone(),
                qdot_hi: b.qdot_hi.clone(),
                t_lo: b.t_lo,
                t_hi: b.t_hi,
            };
        }
        match self.problem.system {
            CaseConfig::TwoBody(_) => SampleBox {
                q_lo: vec![0.5, -std::f64::consts::PI],
                q_hi: vec![2.0, std::f64::consts::PI],
                qdot_lo: vec![-1.0, -1.0],
                qdot_hi: vec![1.0, 1.0],
                t_lo: 0.0,
                t_hi: 1.0,
            },
            CaseConfig::Msd(_) | CaseConfig::MassSpring(_) => SampleBox {
                q_lo: vec![-2.0],
                q_hi: vec![2.0],
                qdot_lo: vec![-2.0],
                qdot_hi: vec![2.0],
                t_lo: 0.0,
                t_hi: 1.0,
            },
        }
    }
}
