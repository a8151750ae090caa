//! Two-stage quiescent pattern control.
//!
//! Stage 1 synthesizes a quiescent pattern offline and keeps its VCM `T_q`.
//! Stage 2 loads the estimated normalized covariance onto it,
//! `w_a = (T_q - I + T_{n+i})⁻¹ a(θ0)`, which returns `w_q` exactly when the data
//! are white (`T_{n+i} = I`). Extra level constraints can then be imposed by a
//! multi-point step started from the composite matrix.

use serde::{Deserialize, Serialize};

use crate::array::{pattern_over_grid, AngleGrid, ArrayGeometry, BeamWeight, Steering};
use crate::error::{OparcError, Result};
use crate::kernel::ControlTask;
use crate::linalg::{hermitize, hpd_solve};
use crate::multipoint::{solve_step, Solver};
use crate::synthesis::{synthesize, DesiredPattern, SynthesisConfig, SynthesisOutcome, SynthesisResult};
use crate::vcm::{LedgerEntry, Vcm};
use crate::{CMatrix, CVector, C64};

/// On-disk form: enough to rebuild the design against a matching geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedDesign {
    pub theta0_deg: f64,
    pub geometry_fingerprint: String,
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone)]
pub struct QuiescentDesign {
    theta0_deg: f64,
    fingerprint: String,
    vcm: Vcm,
    weight: BeamWeight,
}

impl QuiescentDesign {
    /// `T_q = I + Σ β a a^H` from a ledger, with `w_q = T_q⁻¹ a(θ0)`.
    pub fn from_ledger(geom: &ArrayGeometry, theta0_deg: f64, ledger: &[LedgerEntry]) -> Result<Self> {
        let vcm = Vcm::from_ledger(geom, ledger)?;
        let a0 = geom.steer(theta0_deg)?;
        let weight = BeamWeight(hpd_solve(vcm.matrix(), &a0)?);
        Ok(Self { theta0_deg, fingerprint: geom.fingerprint(), vcm, weight })
    }

    pub fn restore(persisted: &PersistedDesign, geom: &ArrayGeometry) -> Result<Self> {
        let live = geom.fingerprint();
        if live != persisted.geometry_fingerprint {
            return Err(OparcError::FingerprintMismatch { design: persisted.geometry_fingerprint.clone(), live });
        }
        Self::from_ledger(geom, persisted.theta0_deg, &persisted.ledger)
    }

    pub fn persist(&self) -> PersistedDesign {
        PersistedDesign {
            theta0_deg: self.theta0_deg,
            geometry_fingerprint: self.fingerprint.clone(),
            ledger: self.vcm.ledger().to_vec(),
        }
    }

    pub fn theta0_deg(&self) -> f64 {
        self.theta0_deg
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn vcm(&self) -> &Vcm {
        &self.vcm
    }

    pub fn t_q(&self) -> &CMatrix {
        self.vcm.matrix()
    }

    pub fn weight(&self) -> &BeamWeight {
        &self.weight
    }

    pub fn pattern(&self, geom: &ArrayGeometry, grid: &AngleGrid) -> Result<Vec<(f64, f64)>> {
        self.check_geometry(geom)?;
        pattern_over_grid(&self.weight, self.theta0_deg, grid, geom)
    }

    fn check_geometry(&self, geom: &ArrayGeometry) -> Result<()> {
        let live = geom.fingerprint();
        if live != self.fingerprint {
            return Err(OparcError::FingerprintMismatch { design: self.fingerprint.clone(), live });
        }
        Ok(())
    }

    /// `T_q - I + T_{n+i}`, formed as `T_q + (T_{n+i} - I)` so white data leave `T_q` untouched.
    pub fn composite(&self, t_ni: &CMatrix) -> Result<CMatrix> {
        let n = self.vcm.dim();
        if t_ni.nrows() != n || t_ni.ncols() != n {
            return Err(OparcError::Dimension(format!("T_n+i is {}x{}, design is {n}x{n}", t_ni.nrows(), t_ni.ncols())));
        }
        let mut loading = t_ni - CMatrix::identity(n, n);
        hermitize(&mut loading);
        Ok(self.vcm.matrix() + loading)
    }
}

/// Stage 1. A solver failure inside the synthesis is returned as an error; a
/// design that merely ran out of steps is returned with the synthesis result so
/// the caller can judge it.
pub fn design_quiescent(geom: &ArrayGeometry, desired: &DesiredPattern, cfg: &SynthesisConfig) -> Result<(QuiescentDesign, SynthesisResult)> {
    let result = synthesize(geom, desired, cfg)?;
    if let SynthesisOutcome::SolverFailed(e) = &result.outcome {
        return Err(OparcError::Aborted {
            stage: format!("quiescent synthesis step {}", result.steps_used() + 1),
            trace: result.steps.iter().map(|s| s.gain).collect(),
            source: Box::new(e.clone()),
        });
    }
    let design = QuiescentDesign::from_ledger(geom, desired.beam_axis_deg, result.vcm.ledger())?;
    Ok((design, result))
}

/// `T_{n+i} = R̂ / σ̂²`.
pub fn normalized_covariance(r_hat: &CMatrix, sigma_n2_hat: f64) -> Result<CMatrix> {
    if !(sigma_n2_hat > 0.0 && sigma_n2_hat.is_finite()) {
        return Err(OparcError::Config(format!("noise power estimate {sigma_n2_hat} must be positive")));
    }
    Ok(r_hat / C64::new(sigma_n2_hat, 0.0))
}

/// Stage 2: `w_a = (T_q - I + T_{n+i})⁻¹ a(θ0)`.
pub fn adapt(design: &QuiescentDesign, geom: &ArrayGeometry, r_hat: &CMatrix, sigma_n2_hat: f64) -> Result<BeamWeight> {
    design.check_geometry(geom)?;
    let composite = design.composite(&normalized_covariance(r_hat, sigma_n2_hat)?)?;
    let a0: CVector = geom.steer(design.theta0_deg)?;
    Ok(BeamWeight(hpd_solve(&composite, &a0)?))
}

/// Stage 2 with extra level constraints applied by one multi-point step from the composite matrix.
pub fn adapt_with_constraints(
    design: &QuiescentDesign,
    geom: &ArrayGeometry,
    r_hat: &CMatrix,
    sigma_n2_hat: f64,
    extra: &[ControlTask],
    solver: &Solver,
) -> Result<BeamWeight> {
    if extra.is_empty() {
        return adapt(design, geom, r_hat, sigma_n2_hat);
    }
    design.check_geometry(geom)?;
    let composite = design.composite(&normalized_covariance(r_hat, sigma_n2_hat)?)?;
    let vcm = Vcm::from_matrix(composite)?;
    let a0 = geom.steer(design.theta0_deg)?;
    Ok(solve_step(&vcm, &a0, geom, extra, solver)?.weight)
}
