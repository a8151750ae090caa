//! Single-point control: the real INR that puts one angle exactly at a desired level
//! while keeping the array gain maximal.
//!
//! With `P = T⁻¹`, `p0 = a0^H P a0`, `q = a_c^H P a_c`, `s = a_c^H P a0` and
//! `r = p0 q - |s|²`, adding `β a_c a_c^H` gives
//!
//! ```text
//! w(β)^H a_c = conj(s) / (1 + βq)
//! w(β)^H a0  = (p0 + βr) / (1 + βq)
//! L(β)       = |s|² / (p0 + βr)²
//! G(β)       = p0 - β|s|² / (1 + βq)
//! ```
//!
//! so `L(β) = ρ` is the quadratic `(p0 + βr)² = |s|²/ρ`. The root with
//! `p0 + βr < 0` always violates `1 + βq > 0`; the other one is admissible iff
//! `ρ < q²/|s|²`. `G` decreases along `1 + βq > 0`, so when two admissible roots
//! exist the smaller one wins, and here there is at most one.

use serde::{Deserialize, Serialize};

use crate::array::{BeamWeight, Steering};
use crate::error::{OparcError, Result};
use crate::vcm::Vcm;
use crate::{from_db, to_db, CMatrix, CVector, C64};

/// Relative size of `r = p0 q - |s|²` below which `a_c` is treated as parallel to `a0`.
const PARALLEL_TOLERANCE: f64 = 1e-12;

/// One `(angle, desired level)` pair. The level is a linear power ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlTask {
    pub theta_deg: f64,
    pub level: f64,
}

impl ControlTask {
    pub fn new(theta_deg: f64, level: f64) -> Result<Self> {
        crate::array::check_angle(theta_deg)?;
        if !(level.is_finite() && level > 0.0) {
            return Err(OparcError::InvalidTask(format!("level {level} must be positive and finite")));
        }
        Ok(Self { theta_deg, level })
    }

    pub fn from_db(theta_deg: f64, level_db: f64) -> Result<Self> {
        Self::new(theta_deg, from_db(level_db))
    }

    pub fn level_db(&self) -> f64 {
        to_db(self.level)
    }

    /// Reject tasks at the beam axis.
    pub fn check_against_axis(&self, theta0_deg: f64) -> Result<()> {
        if (self.theta_deg - theta0_deg).abs() < 1e-12 {
            return Err(OparcError::InvalidTask(format!("control angle {} is the beam axis", self.theta_deg)));
        }
        Ok(())
    }
}

/// Quantities of the rank-one problem that the closed form needs.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RankOneTerms {
    pub p0: f64,
    pub q: f64,
    pub s: C64,
}

impl RankOneTerms {
    pub fn new(t_inv: &CMatrix, a0: &CVector, a_c: &CVector) -> Self {
        let pa_c = t_inv * a_c;
        let p0 = a0.dotc(&(t_inv * a0)).re;
        let q = a_c.dotc(&pa_c).re;
        // s = a_c^H P a0 = (a0^H P a_c)^*
        let s = a0.dotc(&pa_c).conj();
        Self { p0, q, s }
    }

    pub fn current_level(&self) -> f64 {
        self.s.norm_sqr() / (self.p0 * self.p0)
    }

    pub fn residual_gap(&self) -> f64 {
        self.p0 * self.q - self.s.norm_sqr()
    }

    pub fn gamma(&self, beta: f64) -> C64 {
        -self.s * beta / (1.0 + beta * self.q)
    }

    /// Gain-maximal admissible root of `L(β) = rho`.
    pub fn solve(&self, theta_deg: f64, rho: f64) -> Result<f64> {
        let infeasible = || OparcError::InfeasibleLevel { theta_deg, level_db: to_db(rho) };
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(infeasible());
        }
        let abs_s = self.s.norm();
        let r = self.residual_gap();
        if r <= PARALLEL_TOLERANCE * self.p0 * self.q {
            if ((self.current_level() - rho) / rho).abs() <= 1e-10 {
                return Ok(0.0);
            }
            return Err(OparcError::DegenerateGeometry(theta_deg));
        }
        if abs_s <= 1e-14 * (self.p0 * self.q).sqrt() {
            return Err(infeasible());
        }
        let target = abs_s / rho.sqrt();
        let beta = (target - self.p0) / r;
        if 1.0 + beta * self.q <= 0.0 || !beta.is_finite() {
            return Err(infeasible());
        }
        Ok(beta)
    }
}

/// The INR that sets `L(θ_c, θ0) = rho` with maximal gain, given the current VCM.
pub fn solve_single_beta(vcm: &Vcm, a0: &CVector, a_c: &CVector, theta_c_deg: f64, rho: f64) -> Result<f64> {
    RankOneTerms::new(vcm.inverse(), a0, a_c).solve(theta_c_deg, rho)
}

/// Result of one single-point control.
#[derive(Debug, Clone)]
pub struct SingleControl {
    pub beta: f64,
    pub vcm: Vcm,
    pub weight: BeamWeight,
    /// Coefficient with `w' = w + γ T⁻¹ a_c`.
    pub gamma: C64,
}

pub fn control_single(vcm: &Vcm, a0: &CVector, steering: &dyn Steering, task: &ControlTask) -> Result<SingleControl> {
    let a_c = steering.steer(task.theta_deg)?;
    let terms = RankOneTerms::new(vcm.inverse(), a0, &a_c);
    let beta = terms.solve(task.theta_deg, task.level)?;
    let gamma = terms.gamma(beta);
    let vcm = if beta == 0.0 { vcm.clone() } else { vcm.apply_rank_one(task.theta_deg, &a_c, beta)? };
    let weight = vcm.optimal_weight(a0);
    Ok(SingleControl { beta, vcm, weight, gamma })
}
