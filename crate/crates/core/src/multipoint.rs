//! One multi-point step with either solver, followed by the VCM renewal.

use serde::{Deserialize, Serialize};

use crate::array::{BeamWeight, Steering};
use crate::cadmm::{solve_cadmm, CadmmConfig};
use crate::error::Result;
use crate::iterative::{solve_iterative, IterativeConfig};
use crate::kernel::ControlTask;
use crate::vcm::Vcm;
use crate::CVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Solver {
    Iterative(IterativeConfig),
    Cadmm(CadmmConfig),
}

impl Default for Solver {
    fn default() -> Self {
        Solver::Iterative(IterativeConfig::default())
    }
}

impl Solver {
    pub fn name(&self) -> &'static str {
        match self {
            Solver::Iterative(_) => "iterative",
            Solver::Cadmm(_) => "cadmm",
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub tasks: Vec<ControlTask>,
    /// INR assigned at each task angle in this step.
    pub sigma: Vec<f64>,
    pub vcm: Vcm,
    pub weight: BeamWeight,
    /// β_MAX per sweep (iterative) or δ_MAX per iteration (C-ADMM).
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub fn solve_step(vcm: &Vcm, a0: &CVector, steering: &dyn Steering, tasks: &[ControlTask], solver: &Solver) -> Result<StepOutcome> {
    match solver {
        Solver::Iterative(cfg) => {
            let r = solve_iterative(vcm, a0, steering, tasks, cfg)?;
            Ok(StepOutcome {
                trace: r.beta_max_trace(),
                tasks: r.tasks,
                sigma: r.sigma_star,
                vcm: r.vcm_out,
                weight: r.weight,
                converged: r.converged,
            })
        }
        Solver::Cadmm(cfg) => {
            let (rec, out) = solve_cadmm(vcm, a0, steering, tasks, cfg)?;
            Ok(StepOutcome {
                tasks: tasks.to_vec(),
                sigma: rec.sigma,
                vcm: rec.vcm_out,
                weight: rec.weight,
                trace: out.trace,
                converged: out.converged,
            })
        }
    }
}
