//! Multi-point control as a real nonconvex QCQP solved by consensus ADMM.
//!
//! The step variable is `h` in `w = w_prev + T⁻¹ A h`. Maximizing the gain is
//! `min h^H C̃ h - 2 Re(c̃^H h)` subject to one quadratic equality per task;
//! lifting `z = [Re h; Im h]` gives `min z^T C z - 2 c^T z` with constraints
//! `z^T D_m z - 2 d_m^T z = α_m`. Each constraint gets a consensus copy `p_m`
//! whose update is a projection onto a single quadric.

mod projection;

pub use projection::{project_qcqp1, Quadric};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::array::{BeamWeight, Steering};
use crate::error::{OparcError, Result};
use crate::iterative::check_tasks;
use crate::kernel::{ControlTask, RankOneTerms};
use crate::linalg::{delift_vector, lift_matrix, lift_vector, symmetrize_real};
use crate::vcm::{BlockAssignment, Vcm};
use crate::{CMatrix, CVector, C64};

/// Tolerated imaginary residue, relative to the largest recovered INR, when
/// mapping an ADMM solution back to INRs. ADMM meets consensus to `delta` but
/// stationarity only to a few digits less, and the imaginary part tracks the latter.
pub const RECOVERY_IMAG_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CadmmConfig {
    /// Penalty parameter.
    pub eta: f64,
    /// Stop once `max_m ||z - p_m|| <= delta`.
    pub delta: f64,
    pub max_iter: usize,
}

impl Default for CadmmConfig {
    fn default() -> Self {
        Self { eta: 900.0, delta: 1e-10, max_iter: 5000 }
    }
}

/// Real-lifted problem data together with its complex originals.
#[derive(Debug, Clone)]
pub struct RealQcqp {
    pub c_mat: DMatrix<f64>,
    pub c_vec: DVector<f64>,
    pub constraints: Vec<Quadric>,
    pub c_tilde: CMatrix,
    pub c_tilde_vec: CVector,
    pub d_tilde: Vec<CMatrix>,
    pub d_tilde_vec: Vec<CVector>,
    /// `|a0^H w_prev|²`.
    pub base_gain_sq: f64,
}

impl RealQcqp {
    pub fn dim(&self) -> usize {
        self.c_vec.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.c_mat * z)) - 2.0 * self.c_vec.dot(z)
    }

    /// `G²` of the weight `w_prev + T⁻¹ A h` with `z` the lift of `h`.
    pub fn gain_squared(&self, z: &DVector<f64>) -> f64 {
        -self.objective(z) + self.base_gain_sq
    }

    pub fn constraint_residual(&self, m: usize, z: &DVector<f64>) -> f64 {
        self.constraints[m].residual(z)
    }
}

/// `S_m = a_m a_m^H - ρ_m a0 a0^H`; returns `(C̃, c̃, D̃_m, d̃_m, α_m)` lifted to the reals.
pub fn build_real_qcqp(
    vcm_prev: &Vcm,
    a0: &CVector,
    w_prev: &BeamWeight,
    steering: &dyn Steering,
    tasks: &[ControlTask],
) -> Result<RealQcqp> {
    let n = vcm_prev.dim();
    if a0.len() != n || w_prev.len() != n {
        return Err(OparcError::Dimension(format!("a0 has {}, w_prev {} entries, VCM is {n}x{n}", a0.len(), w_prev.len())));
    }
    check_tasks(n, tasks)?;
    let angles: Vec<f64> = tasks.iter().map(|t| t.theta_deg).collect();
    let a = steering.steering_matrix(&angles)?;
    let u = vcm_prev.inverse() * &a; // T⁻¹A
    let b = u.adjoint() * a0; // (T⁻¹A)^H a0
    let x0 = a0.dotc(&w_prev.0); // a0^H w_prev
    let c_tilde = -(&b * b.adjoint());
    let c_tilde_vec = &b * x0;

    let mut d_tilde = Vec::with_capacity(tasks.len());
    let mut d_tilde_vec = Vec::with_capacity(tasks.len());
    let mut constraints = Vec::with_capacity(tasks.len());
    for (m, task) in tasks.iter().enumerate() {
        let am = a.column(m).into_owned();
        let v = u.adjoint() * &am; // (T⁻¹A)^H a_m
        let xm = am.dotc(&w_prev.0); // a_m^H w_prev
        let rho = C64::new(task.level, 0.0);
        let dm = &v * v.adjoint() - &b * b.adjoint() * rho;
        let dvm = -(&v * xm - &b * (x0 * rho));
        let alpha = -(xm.norm_sqr() - task.level * x0.norm_sqr());
        let mut d_real = lift_matrix(&dm);
        symmetrize_real(&mut d_real);
        constraints.push(Quadric::new(d_real, lift_vector(&dvm), alpha)?);
        d_tilde.push(dm);
        d_tilde_vec.push(dvm);
    }
    let mut c_mat = lift_matrix(&c_tilde);
    symmetrize_real(&mut c_mat);
    Ok(RealQcqp {
        c_mat,
        c_vec: lift_vector(&c_tilde_vec),
        constraints,
        c_tilde,
        c_tilde_vec,
        d_tilde,
        d_tilde_vec,
        base_gain_sq: x0.norm_sqr(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusState {
    pub z: DVector<f64>,
    pub p: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub eta: f64,
    pub iteration: usize,
    pub delta_max: f64,
}

/// Smallest penalty for which `C + (η M / 2) I` is positive definite, with margin.
pub fn minimum_eta(qcqp: &RealQcqp) -> f64 {
    let m = qcqp.constraints.len() as f64;
    // C = lift(-b b^H) has eigenvalues {-|b|², -|b|², 0, ...}
    let lam_min = qcqp.c_mat.clone().symmetric_eigenvalues().iter().copied().fold(0.0f64, f64::min);
    4.0 * (-lam_min) / m
}

/// Each `p_m` starts at the single-point solution for task `m` alone.
pub fn initialize_consensus(
    vcm_prev: &Vcm,
    a0: &CVector,
    steering: &dyn Steering,
    tasks: &[ControlTask],
    qcqp: &RealQcqp,
    eta: f64,
) -> Result<ConsensusState> {
    if !(eta > 0.0) {
        return Err(OparcError::Config(format!("penalty eta must be positive, got {eta}")));
    }
    let mm = tasks.len();
    let mut p = Vec::with_capacity(mm);
    for (m, task) in tasks.iter().enumerate() {
        let a_c = steering.steer(task.theta_deg)?;
        let terms = RankOneTerms::new(vcm_prev.inverse(), a0, &a_c);
        let beta = terms.solve(task.theta_deg, task.level)?;
        let mut h = CVector::zeros(mm);
        h[m] = terms.gamma(beta);
        p.push(lift_vector(&h));
    }
    let dim = 2 * mm;
    Ok(ConsensusState {
        z: DVector::zeros(dim),
        lambda: vec![DVector::zeros(dim); mm],
        p,
        eta: eta.max(minimum_eta(qcqp)),
        iteration: 0,
        delta_max: f64::INFINITY,
    })
}

#[derive(Debug, Clone)]
pub struct CadmmOutcome {
    pub h_star: CVector,
    /// δ_MAX per iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
    pub state: ConsensusState,
}

/// `argmin_z z^T (C + ηM/2 I) z - 2 g^T z` with `g = c - ½ Σ (λ_m - η p_m)`.
pub fn z_step(qcqp: &RealQcqp, state: &ConsensusState) -> Result<DVector<f64>> {
    let m = state.p.len() as f64;
    let dim = qcqp.dim();
    let lhs = &qcqp.c_mat + DMatrix::identity(dim, dim) * (state.eta * m / 2.0);
    let g = z_rhs(qcqp, state);
    let chol = lhs.cholesky().ok_or_else(|| OparcError::NotPositiveDefinite("C + (ηM/2) I".into()))?;
    Ok(chol.solve(&g))
}

fn z_rhs(qcqp: &RealQcqp, state: &ConsensusState) -> DVector<f64> {
    let mut g = qcqp.c_vec.clone();
    for (l, p) in state.lambda.iter().zip(&state.p) {
        g -= (l - p * state.eta) * 0.5;
    }
    g
}

/// Augmented Lagrangian `L_η(z, p, λ)`.
pub fn augmented_lagrangian(qcqp: &RealQcqp, state: &ConsensusState) -> f64 {
    let mut v = qcqp.objective(&state.z);
    for (l, p) in state.lambda.iter().zip(&state.p) {
        let diff = &state.z - p;
        v += l.dot(&diff) + 0.5 * state.eta * diff.norm_squared();
    }
    v
}

pub fn run_cadmm(qcqp: &RealQcqp, init: ConsensusState, delta: f64, max_iter: usize) -> Result<CadmmOutcome> {
    let mut state = init;
    let m = state.p.len();
    let dim = qcqp.dim();
    let lhs = &qcqp.c_mat + DMatrix::identity(dim, dim) * (state.eta * m as f64 / 2.0);
    let chol = lhs.cholesky().ok_or_else(|| OparcError::NotPositiveDefinite("C + (ηM/2) I".into()))?;
    let mut trace = Vec::new();
    let mut converged = false;

    while state.iteration < max_iter {
        state.z = chol.solve(&z_rhs(qcqp, &state));
        for k in 0..m {
            let zeta = &state.z + &state.lambda[k] / state.eta;
            state.p[k] = qcqp.constraints[k].project(&zeta).map_err(|e| OparcError::Aborted {
                stage: format!("ADMM iteration {}, projection {}", state.iteration + 1, k + 1),
                trace: trace.clone(),
                source: Box::new(e),
            })?;
        }
        let mut delta_max = 0.0f64;
        for k in 0..m {
            let diff = &state.z - &state.p[k];
            state.lambda[k] += &diff * state.eta;
            delta_max = delta_max.max(diff.norm());
        }
        state.iteration += 1;
        state.delta_max = delta_max;
        trace.push(delta_max);
        if delta_max <= delta {
            converged = true;
            break;
        }
    }
    Ok(CadmmOutcome { h_star: delift_vector(&state.z), trace, converged, state })
}

#[derive(Debug, Clone)]
pub struct Recovered {
    pub sigma: Vec<f64>,
    pub vcm_out: Vcm,
    pub weight: BeamWeight,
}

/// Weight `w_prev + T⁻¹ A h`, the INRs that realize `h`, and the renewed VCM.
pub fn recover(vcm_prev: &Vcm, a0: &CVector, w_prev: &BeamWeight, angles_deg: &[f64], a: &CMatrix, h_star: &CVector) -> Result<Recovered> {
    let weight = BeamWeight(&w_prev.0 + vcm_prev.inverse() * a * h_star);
    let sigma = vcm_prev.sigma_from_h_with_tolerance(a, h_star, a0, RECOVERY_IMAG_TOLERANCE)?;
    let vcm_out = vcm_prev.apply_block_update(&BlockAssignment::from_parts(angles_deg.to_vec(), a.clone(), sigma.clone())?)?;
    Ok(Recovered { sigma, vcm_out, weight })
}

/// Build, initialize, run and recover in one call.
pub fn solve_cadmm(vcm_prev: &Vcm, a0: &CVector, steering: &dyn Steering, tasks: &[ControlTask], cfg: &CadmmConfig) -> Result<(Recovered, CadmmOutcome)> {
    let w_prev = vcm_prev.optimal_weight(a0);
    let qcqp = build_real_qcqp(vcm_prev, a0, &w_prev, steering, tasks)?;
    let init = initialize_consensus(vcm_prev, a0, steering, tasks, &qcqp, cfg.eta)?;
    let outcome = run_cadmm(&qcqp, init, cfg.delta, cfg.max_iter)?;
    let angles: Vec<f64> = tasks.iter().map(|t| t.theta_deg).collect();
    let a = steering.steering_matrix(&angles)?;
    let rec = recover(vcm_prev, a0, &w_prev, &angles, &a, &outcome.h_star)?;
    Ok((rec, outcome))
}
