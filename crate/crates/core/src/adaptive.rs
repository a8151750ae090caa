//! Multi-constraint adaptive beamforming: covariance and noise-power estimation,
//! the LCMV baseline, and QCMV through multi-point control on the estimated
//! normalized covariance.
//!
//! Side constraints with level exactly zero are hard nulls, which no finite INR
//! can reach. QCMV handles them by restricting the weight to the orthogonal
//! complement `B` of the null steering vectors and running the multi-point step
//! there (steering `B^H a`, covariance `B^H T B`); the nulls are reported with
//! infinite INR.

use serde::{Deserialize, Serialize};

use crate::array::{output_sinr, BeamWeight, Steering};
use crate::error::{OparcError, Result};
use crate::kernel::ControlTask;
use crate::linalg::{hermitian_eigenvalues, hermitize, hpd_solve, orthogonal_complement};
use crate::multipoint::{solve_step, Solver};
use crate::scenario::{true_covariance, Scenario};
use crate::vcm::{check_rank, LedgerEntry, Vcm};
use crate::{to_db, CMatrix, CVector, C64};

/// Relative diagonal loading added to `R̂` before inversion.
pub const REGULARIZATION: f64 = 1e-8;

/// Beam axis plus side constraints; `g[0] = 1`, side levels are `|g_d|²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub angles_deg: Vec<f64>,
    pub g: Vec<C64>,
}

impl ConstraintSpec {
    pub fn new(angles_deg: Vec<f64>, g: Vec<C64>) -> Result<Self> {
        let s = Self { angles_deg, g };
        s.validate()?;
        Ok(s)
    }

    /// Real, nonnegative `g` from side levels in dB; `-inf` dB is a null.
    pub fn from_levels_db(theta0_deg: f64, side: &[(f64, f64)]) -> Result<Self> {
        let mut angles_deg = vec![theta0_deg];
        let mut g = vec![C64::new(1.0, 0.0)];
        for &(theta, level_db) in side {
            angles_deg.push(theta);
            g.push(C64::new(crate::from_db(level_db).sqrt(), 0.0));
        }
        Self::new(angles_deg, g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.angles_deg.is_empty() || self.angles_deg.len() != self.g.len() {
            return Err(OparcError::Config("constraint angles and g must be non-empty and of equal length".into()));
        }
        if self.g[0] != C64::new(1.0, 0.0) {
            return Err(OparcError::Config("the beam-axis constraint must be g_1 = 1".into()));
        }
        for (i, &t) in self.angles_deg.iter().enumerate() {
            crate::array::check_angle(t)?;
            if self.angles_deg[..i].contains(&t) {
                return Err(OparcError::Config(format!("duplicate constraint angle {t}")));
            }
        }
        if self.g.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(OparcError::Config("g must be finite".into()));
        }
        Ok(())
    }

    pub fn theta0_deg(&self) -> f64 {
        self.angles_deg[0]
    }

    /// `D - 1` side constraints as `(angle, linear level)`.
    pub fn side_levels(&self) -> Vec<(f64, f64)> {
        self.angles_deg[1..].iter().zip(&self.g[1..]).map(|(&t, g)| (t, g.norm_sqr())).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub r_hat: CMatrix,
    pub sigma_n2_hat: f64,
    pub snapshots_used: usize,
}

impl CovarianceEstimate {
    pub fn from_snapshots(snapshots: &[CVector], interference_count: usize) -> Result<Self> {
        let r_hat = sample_covariance(snapshots)?;
        let sigma_n2_hat = estimate_noise_power(&r_hat, interference_count)?;
        Ok(Self { r_hat, sigma_n2_hat, snapshots_used: snapshots.len() })
    }
}

/// `(1/T) Σ x x^H`.
pub fn sample_covariance(snapshots: &[CVector]) -> Result<CMatrix> {
    let first = snapshots.first().ok_or_else(|| OparcError::Config("at least one snapshot is required".into()))?;
    let n = first.len();
    let mut r = CMatrix::zeros(n, n);
    for x in snapshots {
        if x.len() != n {
            return Err(OparcError::Dimension(format!("snapshot of length {} among length {n}", x.len())));
        }
        r.ger(C64::new(1.0, 0.0), x, &x.conjugate(), C64::new(1.0, 0.0));
    }
    r /= C64::new(snapshots.len() as f64, 0.0);
    hermitize(&mut r);
    Ok(r)
}

/// Mean of the `N - J_r` smallest eigenvalues of `R̂`.
pub fn estimate_noise_power(r_hat: &CMatrix, interference_count: usize) -> Result<f64> {
    let n = r_hat.nrows();
    if interference_count >= n {
        return Err(OparcError::InterferenceCount { j_r: interference_count, n });
    }
    let ev = hermitian_eigenvalues(r_hat);
    let tail = &ev[..n - interference_count];
    Ok(tail.iter().sum::<f64>() / tail.len() as f64)
}

/// `w = R⁻¹C (C^H R⁻¹ C)⁻¹ g`.
pub fn lcmv(r: &CMatrix, spec: &ConstraintSpec, steering: &dyn Steering) -> Result<BeamWeight> {
    spec.validate()?;
    let c = steering.steering_matrix(&spec.angles_deg)?;
    check_rank(&c)?;
    let mut r_inv_c = CMatrix::zeros(c.nrows(), c.ncols());
    for j in 0..c.ncols() {
        r_inv_c.set_column(j, &hpd_solve(r, &c.column(j).into_owned())?);
    }
    let gram = c.adjoint() * &r_inv_c;
    let g = CVector::from_vec(spec.g.clone());
    let y = gram.lu().solve(&g).ok_or(OparcError::RankDeficient(0.0))?;
    Ok(BeamWeight(r_inv_c * y))
}

/// Steering of a physical array seen through an orthonormal basis: `B^H a(θ)`.
pub struct ProjectedSteering<'a> {
    inner: &'a dyn Steering,
    basis: CMatrix,
}

impl<'a> ProjectedSteering<'a> {
    pub fn new(inner: &'a dyn Steering, basis: CMatrix) -> Result<Self> {
        if basis.nrows() != inner.element_count() {
            return Err(OparcError::Dimension(format!("basis has {} rows for {} elements", basis.nrows(), inner.element_count())));
        }
        Ok(Self { inner, basis })
    }

    pub fn basis(&self) -> &CMatrix {
        &self.basis
    }
}

impl Steering for ProjectedSteering<'_> {
    fn element_count(&self) -> usize {
        self.basis.ncols()
    }

    fn steer(&self, theta_deg: f64) -> Result<CVector> {
        Ok(self.basis.adjoint() * self.inner.steer(theta_deg)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcmvDiagnostics {
    /// Diagonal load added to `R̂` before normalization.
    pub regularization: f64,
    pub null_angles_deg: Vec<f64>,
    pub solver_trace: Vec<f64>,
    pub solver_converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QcmvResult {
    /// Scaled so that `w^H a(θ0) = 1`.
    pub weight: BeamWeight,
    /// `T_{n+i} = (R̂ + εI)/σ̂²`.
    pub t_ni: CMatrix,
    /// Finite part of the loading, `Σ β a a^H` over the level constraints.
    pub delta: CMatrix,
    /// Virtual interferences of the loading; hard nulls carry an infinite INR.
    pub loading: Vec<LedgerEntry>,
    /// `(T_{n+i} + Δ)⁻¹ a(θ0) = raw_scale · weight` when there are no nulls.
    pub raw_scale: f64,
    pub diagnostics: QcmvDiagnostics,
}

pub fn qcmv(r_hat: &CMatrix, sigma_n2_hat: f64, spec: &ConstraintSpec, steering: &dyn Steering, solver: &Solver) -> Result<QcmvResult> {
    spec.validate()?;
    let n = steering.element_count();
    if r_hat.nrows() != n || r_hat.ncols() != n {
        return Err(OparcError::Dimension(format!("R̂ is {}x{}, array has {n} elements", r_hat.nrows(), r_hat.ncols())));
    }
    if !(sigma_n2_hat > 0.0 && sigma_n2_hat.is_finite()) {
        return Err(OparcError::Config(format!("noise power estimate {sigma_n2_hat} must be positive")));
    }
    let side = spec.side_levels();
    if side.len() >= n {
        return Err(OparcError::DegreesOfFreedom { requested: side.len(), available: n - 1 });
    }
    let theta0 = spec.theta0_deg();
    let eps = REGULARIZATION * r_hat.trace().re / n as f64;
    let mut t_ni = (r_hat + CMatrix::identity(n, n) * C64::new(eps, 0.0)) / C64::new(sigma_n2_hat, 0.0);
    hermitize(&mut t_ni);

    let null_angles: Vec<f64> = side.iter().filter(|s| s.1 == 0.0).map(|s| s.0).collect();
    let tasks = side
        .iter()
        .filter(|s| s.1 > 0.0)
        .map(|&(t, l)| ControlTask::new(t, l))
        .collect::<Result<Vec<_>>>()?;

    let (raw, sigma, trace, converged) = if null_angles.is_empty() {
        let a0 = steering.steer(theta0)?;
        let vcm = Vcm::from_matrix(t_ni.clone())?;
        if tasks.is_empty() {
            (vcm.optimal_weight(&a0).0, Vec::new(), Vec::new(), true)
        } else {
            let out = solve_step(&vcm, &a0, steering, &tasks, solver)?;
            (out.weight.0, out.sigma, out.trace, out.converged)
        }
    } else {
        let c_null = steering.steering_matrix(&null_angles)?;
        check_rank(&c_null)?;
        let basis = orthogonal_complement(&c_null);
        let reduced = ProjectedSteering::new(steering, basis.clone())?;
        let a0 = reduced.steer(theta0)?;
        let mut t_red = basis.adjoint() * &t_ni * &basis;
        hermitize(&mut t_red);
        let (w_red, sigma, trace, converged) = if tasks.is_empty() {
            (hpd_solve(&t_red, &a0)?, Vec::new(), Vec::new(), true)
        } else {
            let vcm = Vcm::from_matrix(t_red)?;
            let out = solve_step(&vcm, &a0, &reduced, &tasks, solver)?;
            (out.weight.0, out.sigma, out.trace, out.converged)
        };
        (&basis * w_red, sigma, trace, converged)
    };

    let a0 = steering.steer(theta0)?;
    let response = raw.dotc(&a0);
    if response.norm() == 0.0 {
        return Err(OparcError::DegenerateBeam);
    }
    let weight = BeamWeight(&raw / response.conj());

    let mut delta = CMatrix::zeros(n, n);
    let mut loading = Vec::new();
    for (task, &beta) in tasks.iter().zip(&sigma) {
        let a = steering.steer(task.theta_deg)?;
        delta += &a * a.adjoint() * C64::new(beta, 0.0);
        loading.push(LedgerEntry { theta_deg: task.theta_deg, inr_linear: beta });
    }
    hermitize(&mut delta);
    loading.extend(null_angles.iter().map(|&t| LedgerEntry { theta_deg: t, inr_linear: f64::INFINITY }));

    Ok(QcmvResult {
        weight,
        t_ni,
        delta,
        loading,
        raw_scale: response.re,
        diagnostics: QcmvDiagnostics { regularization: eps, null_angles_deg: null_angles, solver_trace: trace, solver_converged: converged },
    })
}

/// Output SINR (dB) of `w` against the scenario's true covariance.
pub fn sinr_report(w: &BeamWeight, scenario: &Scenario, steering: &dyn Steering) -> Result<f64> {
    let r = true_covariance(scenario, steering)?;
    let a0 = steering.steer(scenario.theta0_deg)?;
    Ok(to_db(output_sinr(w, &r, scenario.sigma_s2, &a0)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{response_level_vectors, ArrayGeometry};
    use crate::linalg::hpd_inverse;
    use crate::scenario::Interference;

    fn scenario(interferences: Vec<Interference>) -> Scenario {
        Scenario { theta0_deg: 0.0, sigma_s2: 10.0, interferences, sigma_n2: 1.0, seed: 1, snapshot_count: 1 }
    }

    #[test]
    fn single_snapshot_is_rank_one() {
        let x = CVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 1.0)]);
        let r = sample_covariance(std::slice::from_ref(&x)).unwrap();
        assert!((r.clone() - &x * x.adjoint()).norm() < 1e-15);
        let ev = hermitian_eigenvalues(&r);
        assert!(ev[0].abs() < 1e-12 && ev[1].abs() < 1e-12);
        assert!(sample_covariance(&[]).is_err());
    }

    #[test]
    fn noise_power_of_a_rank_one_bump() {
        let g = ArrayGeometry::half_wave_ula(6).unwrap();
        let r = true_covariance(&Scenario { sigma_n2: 1.7, ..scenario(vec![Interference { theta_deg: 20.0, inr: 50.0 }]) }, &g).unwrap();
        assert!((estimate_noise_power(&r, 1).unwrap() - 1.7).abs() < 1e-10);
        assert!(matches!(estimate_noise_power(&r, 6), Err(OparcError::InterferenceCount { .. })));
    }

    #[test]
    fn single_constraint_lcmv_is_mvdr() {
        let g = ArrayGeometry::half_wave_ula(8).unwrap();
        let r = true_covariance(&scenario(vec![Interference { theta_deg: 30.0, inr: 100.0 }]), &g).unwrap();
        let spec = ConstraintSpec::from_levels_db(0.0, &[]).unwrap();
        let w = lcmv(&r, &spec, &g).unwrap();
        let a0 = g.steer(0.0).unwrap();
        let ri = hpd_inverse(&r).unwrap() * &a0;
        let mvdr = &ri / a0.dotc(&ri);
        assert!((w.0 - mvdr).norm() < 1e-12);
    }

    #[test]
    fn lcmv_meets_its_constraints() {
        let g = ArrayGeometry::half_wave_ula(8).unwrap();
        let r = true_covariance(&scenario(vec![Interference { theta_deg: 40.0, inr: 1000.0 }]), &g).unwrap();
        let spec = ConstraintSpec::new(vec![0.0, -30.0, 25.0], vec![C64::new(1.0, 0.0), C64::new(0.01, 0.02), C64::new(0.0, 0.0)]).unwrap();
        let w = lcmv(&r, &spec, &g).unwrap();
        let c = g.steering_matrix(&spec.angles_deg).unwrap();
        let resp = c.adjoint() * &w.0;
        for (got, want) in resp.iter().zip(&spec.g) {
            assert!((got - want).norm() < 1e-10);
        }
    }

    #[test]
    fn qcmv_without_side_constraints_is_mvdr() {
        let g = ArrayGeometry::half_wave_ula(8).unwrap();
        let r = true_covariance(&scenario(vec![Interference { theta_deg: -35.0, inr: 300.0 }]), &g).unwrap();
        let spec = ConstraintSpec::from_levels_db(0.0, &[]).unwrap();
        let out = qcmv(&r, 1.0, &spec, &g, &Solver::default()).unwrap();
        let a0 = g.steer(0.0).unwrap();
        let ri = hpd_inverse(&r).unwrap() * &a0;
        let mvdr = &ri / a0.dotc(&ri);
        assert!((&out.weight.0 - mvdr).norm() / out.weight.0.norm() < 1e-7);
        assert!((out.weight.response(&a0) - C64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn qcmv_levels_and_loading_identity() {
        let g = ArrayGeometry::half_wave_ula(10).unwrap();
        let r = true_covariance(&scenario(vec![Interference { theta_deg: 50.0, inr: 500.0 }]), &g).unwrap();
        let spec = ConstraintSpec::from_levels_db(0.0, &[(-30.0, -30.0), (25.0, -35.0)]).unwrap();
        let out = qcmv(&r, 1.0, &spec, &g, &Solver::default()).unwrap();
        let a0 = g.steer(0.0).unwrap();
        for (t, l) in spec.side_levels() {
            let got = response_level_vectors(&out.weight, &g.steer(t).unwrap(), &a0).unwrap();
            assert!((got - l).abs() <= 1e-8 * l.max(1.0));
        }
        let w_ncl = hpd_solve(&(&out.t_ni + &out.delta), &a0).unwrap();
        assert!((&w_ncl - &out.weight.0 * C64::new(out.raw_scale, 0.0)).norm() / w_ncl.norm() < 1e-9);
    }

    #[test]
    fn null_constraints_are_exact() {
        let g = ArrayGeometry::half_wave_ula(8).unwrap();
        let r = true_covariance(&scenario(vec![Interference { theta_deg: 45.0, inr: 200.0 }]), &g).unwrap();
        let spec = ConstraintSpec::from_levels_db(0.0, &[(-40.0, f64::NEG_INFINITY), (20.0, -30.0)]).unwrap();
        let out = qcmv(&r, 1.0, &spec, &g, &Solver::default()).unwrap();
        assert!(out.weight.response(&g.steer(-40.0).unwrap()).norm() < 1e-12);
        let l = response_level_vectors(&out.weight, &g.steer(20.0).unwrap(), &g.steer(0.0).unwrap()).unwrap();
        assert!((l - 1e-3).abs() < 1e-11);
        assert_eq!(out.loading.last().unwrap().inr_linear, f64::INFINITY);
    }

    #[test]
    fn too_many_constraints() {
        let g = ArrayGeometry::half_wave_ula(3).unwrap();
        let spec = ConstraintSpec::from_levels_db(0.0, &[(-40.0, -30.0), (20.0, -30.0), (50.0, -30.0)]).unwrap();
        let r = CMatrix::identity(3, 3);
        assert!(matches!(qcmv(&r, 1.0, &spec, &g, &Solver::default()), Err(OparcError::DegreesOfFreedom { .. })));
    }

    #[test]
    fn sinr_of_conventional_beam_without_interference() {
        let g = ArrayGeometry::half_wave_ula(8).unwrap();
        let w = BeamWeight(g.steer(0.0).unwrap() * C64::new(0.0, 3.0));
        let s = sinr_report(&w, &scenario(vec![]), &g).unwrap();
        assert!((s - to_db(8.0 * 10.0)).abs() < 1e-10);
    }
}
