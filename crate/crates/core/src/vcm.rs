//! Virtual normalized covariance matrix with a maintained inverse.

use serde::{Deserialize, Serialize};

use crate::array::{BeamWeight, Steering};
use crate::error::{OparcError, Result};
use crate::linalg::{hermitize, hpd_inverse, relative_min_singular_value};
use crate::{CMatrix, CVector, C64};

/// Dense re-inversion cadence (in block updates) that bounds Woodbury drift.
pub const REFRESH_INTERVAL: usize = 64;
/// Relative smallest singular value below which a steering block is rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;
/// Relative imaginary residue tolerated when mapping `h` back to real INRs.
pub const INR_IMAG_TOLERANCE: f64 = 1e-8;

/// One virtual interference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub theta_deg: f64,
    pub inr_linear: f64,
}

/// Steering block `A` and the INRs on the diagonal of `Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockAssignment {
    angles_deg: Vec<f64>,
    a: CMatrix,
    inrs: Vec<f64>,
}

impl BlockAssignment {
    pub fn new(steering: &dyn Steering, angles_deg: &[f64], inrs: &[f64]) -> Result<Self> {
        let a = steering.steering_matrix(angles_deg)?;
        Self::from_parts(angles_deg.to_vec(), a, inrs.to_vec())
    }

    pub fn from_parts(angles_deg: Vec<f64>, a: CMatrix, inrs: Vec<f64>) -> Result<Self> {
        if a.ncols() != inrs.len() || angles_deg.len() != inrs.len() {
            return Err(OparcError::Dimension(format!(
                "{} angles, {} steering columns, {} INRs",
                angles_deg.len(),
                a.ncols(),
                inrs.len()
            )));
        }
        if inrs.iter().any(|b| !b.is_finite()) {
            return Err(OparcError::Config("INRs must be finite".into()));
        }
        check_rank(&a)?;
        Ok(Self { angles_deg, a, inrs })
    }

    pub fn angles_deg(&self) -> &[f64] {
        &self.angles_deg
    }

    pub fn steering(&self) -> &CMatrix {
        &self.a
    }

    pub fn inrs(&self) -> &[f64] {
        &self.inrs
    }
}

pub(crate) fn check_rank(a: &CMatrix) -> Result<()> {
    if a.ncols() == 0 {
        return Ok(());
    }
    let rel = if a.ncols() == 1 {
        if a.norm() > 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        relative_min_singular_value(a)
    };
    if rel <= RANK_TOLERANCE {
        return Err(OparcError::RankDeficient(rel));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum Base {
    Identity,
    Matrix(CMatrix),
}

/// `T = base + Σ_l β_l a(θ_l) a(θ_l)^H` together with `T⁻¹` and the `(θ_l, β_l)` ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct Vcm {
    t: CMatrix,
    t_inv: CMatrix,
    ledger: Vec<LedgerEntry>,
    base: Base,
    updates_since_refresh: usize,
}

impl Vcm {
    pub fn identity(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(OparcError::Dimension(format!("VCM needs at least 2 elements, got {n}")));
        }
        Ok(Self {
            t: CMatrix::identity(n, n),
            t_inv: CMatrix::identity(n, n),
            ledger: Vec::new(),
            base: Base::Identity,
            updates_since_refresh: 0,
        })
    }

    /// Start from an arbitrary Hermitian positive definite matrix, e.g. an estimated
    /// normalized covariance. The ledger then records only later assignments.
    pub fn from_matrix(t: CMatrix) -> Result<Self> {
        if t.nrows() != t.ncols() || t.nrows() < 2 {
            return Err(OparcError::Dimension(format!("VCM must be square with N >= 2, got {}x{}", t.nrows(), t.ncols())));
        }
        let mut t = t;
        hermitize(&mut t);
        let t_inv = hpd_inverse(&t)?;
        Ok(Self { t: t.clone(), t_inv, ledger: Vec::new(), base: Base::Matrix(t), updates_since_refresh: 0 })
    }

    /// Identity plus the ledger's assignments, applied as a single block.
    pub fn from_ledger(steering: &dyn Steering, ledger: &[LedgerEntry]) -> Result<Self> {
        let mut t = CMatrix::identity(steering.element_count(), steering.element_count());
        for e in ledger {
            let a = steering.steer(e.theta_deg)?;
            t += &a * a.adjoint() * C64::new(e.inr_linear, 0.0);
        }
        hermitize(&mut t);
        let t_inv = hpd_inverse(&t)?;
        Ok(Self { t, t_inv, ledger: ledger.to_vec(), base: Base::Identity, updates_since_refresh: 0 })
    }

    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.t
    }

    pub fn inverse(&self) -> &CMatrix {
        &self.t_inv
    }

    pub fn ledger(&self) -> &[LedgerEntry] {
        &self.ledger
    }

    pub fn is_identity_based(&self) -> bool {
        self.base == Base::Identity
    }

    /// Rebuild `T` by summing the ledger onto the base matrix.
    pub fn replay(&self, steering: &dyn Steering) -> Result<CMatrix> {
        let n = self.dim();
        let mut t = match &self.base {
            Base::Identity => CMatrix::identity(n, n),
            Base::Matrix(m) => m.clone(),
        };
        for e in &self.ledger {
            let a = steering.steer(e.theta_deg)?;
            t += &a * a.adjoint() * C64::new(e.inr_linear, 0.0);
        }
        Ok(t)
    }

    /// `T + A Σ A^H`, with the inverse updated by the generalized Woodbury identity
    /// `T⁻¹ - T⁻¹A (I + Σ A^H T⁻¹ A)⁻¹ Σ A^H T⁻¹`.
    pub fn apply_block_update(&self, assign: &BlockAssignment) -> Result<Vcm> {
        let n = self.dim();
        let a = &assign.a;
        if a.nrows() != n {
            return Err(OparcError::Dimension(format!("steering block has {} rows, VCM is {n}x{n}", a.nrows())));
        }
        if assign.inrs.iter().all(|&b| b == 0.0) {
            let mut out = self.clone();
            out.ledger.extend(assign.angles_deg.iter().zip(&assign.inrs).map(|(&t, &b)| LedgerEntry { theta_deg: t, inr_linear: b }));
            return Ok(out);
        }
        let u = &self.t_inv * a; // T⁻¹A
        let mut k = a.adjoint() * &u; // A^H T⁻¹ A
        hermitize(&mut k);
        ensure_update_definite(&k, &assign.inrs)?;

        let (t, mut t_inv) = updated_pair(&self.t, &self.t_inv, a, &assign.inrs, Some((&u, &k)))?;

        let mut ledger = self.ledger.clone();
        ledger.extend(assign.angles_deg.iter().zip(&assign.inrs).map(|(&t, &b)| LedgerEntry { theta_deg: t, inr_linear: b }));

        let mut updates = self.updates_since_refresh + 1;
        if updates >= REFRESH_INTERVAL {
            t_inv = hpd_inverse(&t)?;
            updates = 0;
        }
        Ok(Vcm { t, t_inv, ledger, base: self.base.clone(), updates_since_refresh: updates })
    }

    /// Single virtual interference `β a a^H`.
    pub fn apply_rank_one(&self, theta_deg: f64, a: &CVector, beta: f64) -> Result<Vcm> {
        let assign = BlockAssignment::from_parts(vec![theta_deg], CMatrix::from_column_slice(a.len(), 1, a.as_slice()), vec![beta])?;
        self.apply_block_update(&assign)
    }

    /// Gain-optimal weight `T⁻¹ a0`.
    pub fn optimal_weight(&self, a0: &CVector) -> BeamWeight {
        BeamWeight(&self.t_inv * a0)
    }

    /// `h = -(I + Σ A^H T⁻¹ A)⁻¹ Σ A^H T⁻¹ a0`; the post-update weight is `w + T⁻¹ A h`.
    pub fn h_from_sigma(&self, a: &CMatrix, inrs: &[f64], a0: &CVector) -> Result<CVector> {
        check_block(self.dim(), a, inrs.len())?;
        let m = a.ncols();
        let u = &self.t_inv * a;
        let sigma = sigma_matrix(inrs);
        let cap = CMatrix::identity(m, m) + &sigma * (a.adjoint() * &u);
        let rhs = &sigma * (u.adjoint() * a0);
        let x = cap.lu().solve(&rhs).ok_or(OparcError::UpdateSingular)?;
        Ok(-x)
    }

    /// Inverse map `Σ = Diag(-h ⊘ (A^H T⁻¹ (a0 + A h)))`, truncated to real INRs.
    pub fn sigma_from_h(&self, a: &CMatrix, h: &CVector, a0: &CVector) -> Result<Vec<f64>> {
        self.sigma_from_h_with_tolerance(a, h, a0, INR_IMAG_TOLERANCE)
    }

    pub fn sigma_from_h_with_tolerance(&self, a: &CMatrix, h: &CVector, a0: &CVector, imag_tol: f64) -> Result<Vec<f64>> {
        check_block(self.dim(), a, h.len())?;
        let denom = a.adjoint() * (&self.t_inv * (a0 + a * h));
        let scale = denom.iter().map(|d| d.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut values = Vec::with_capacity(h.len());
        for (i, (hi, di)) in h.iter().zip(denom.iter()).enumerate() {
            if *hi == C64::new(0.0, 0.0) {
                values.push(C64::new(0.0, 0.0));
                continue;
            }
            if di.norm() <= 1e-14 * scale || di.norm() == 0.0 {
                return Err(OparcError::BijectionSingular(i));
            }
            values.push(-hi / di);
        }
        // Imaginary residue relative to the largest INR of the block, so that a
        // near-zero INR is not judged against its own tiny magnitude.
        let inr_scale = values.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (i, v) in values.iter().enumerate() {
            let residue = if inr_scale > 0.0 { v.im.abs() / inr_scale } else { 0.0 };
            if residue > imag_tol {
                return Err(OparcError::InrConsistency { index: i, residue });
            }
        }
        Ok(values.iter().map(|v| v.re).collect())
    }

    /// Post-update weight in the explicit form
    /// `w - T⁻¹A (I + Σ A^H T⁻¹ A)⁻¹ Σ A^H T⁻¹ a0` without touching `T`.
    pub fn updated_weight(&self, a: &CMatrix, inrs: &[f64], a0: &CVector) -> Result<BeamWeight> {
        let h = self.h_from_sigma(a, inrs, a0)?;
        Ok(BeamWeight(&self.t_inv * a0 + &self.t_inv * a * h))
    }
}

/// Residual `‖T T⁻¹ x - x‖ / ‖x‖` on a fixed probe above which the Woodbury
/// inverse is replaced by a dense one. Nearly singular VCMs (strongly negative
/// INRs) make chained low-rank updates lose all accuracy otherwise.
pub const INVERSE_RESIDUAL_TOLERANCE: f64 = 1e-10;

fn inverse_residual(t: &CMatrix, t_inv: &CMatrix) -> f64 {
    let n = t.nrows();
    let x = CVector::from_fn(n, |i, _| C64::new(1.0 + (i % 7) as f64 * 0.25, (i % 3) as f64 * 0.5 - 0.5));
    (t * (t_inv * &x) - &x).norm() / x.norm()
}

/// `T + A Σ A^H` and its inverse by Woodbury, with a dense fallback when the probe
/// residual shows the update lost accuracy. `pre` optionally supplies `(T⁻¹A, A^H T⁻¹ A)`.
pub(crate) fn updated_pair(
    t: &CMatrix,
    t_inv: &CMatrix,
    a: &CMatrix,
    inrs: &[f64],
    pre: Option<(&CMatrix, &CMatrix)>,
) -> Result<(CMatrix, CMatrix)> {
    let m = inrs.len();
    let owned;
    let (u, k) = match pre {
        Some(p) => p,
        None => {
            let u = t_inv * a;
            let k = a.adjoint() * &u;
            owned = (u, k);
            (&owned.0, &owned.1)
        }
    };
    let sigma = sigma_matrix(inrs);
    let mut t_new = t + a * &sigma * a.adjoint();
    hermitize(&mut t_new);
    let cap = CMatrix::identity(m, m) + &sigma * k;
    let woodbury = cap.lu().solve(&(&sigma * u.adjoint())).map(|x| {
        let mut inv = t_inv - u * x;
        hermitize(&mut inv);
        inv
    });
    match woodbury {
        Some(inv) if inverse_residual(&t_new, &inv) <= INVERSE_RESIDUAL_TOLERANCE => Ok((t_new, inv)),
        _ => {
            let inv = hpd_inverse(&t_new)?;
            Ok((t_new, inv))
        }
    }
}

fn check_block(n: usize, a: &CMatrix, m: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != m {
        return Err(OparcError::Dimension(format!("steering block is {}x{}, expected {n}x{m}", a.nrows(), a.ncols())));
    }
    Ok(())
}

fn sigma_matrix(inrs: &[f64]) -> CMatrix {
    CMatrix::from_diagonal(&CVector::from_iterator(inrs.len(), inrs.iter().map(|&b| C64::new(b, 0.0))))
}

/// `T + A Σ A^H` stays positive definite iff `I + L^H Σ L` is, where `A^H T⁻¹ A = L L^H`.
fn ensure_update_definite(k: &CMatrix, inrs: &[f64]) -> Result<()> {
    if inrs.iter().all(|&b| b >= 0.0) {
        return Ok(());
    }
    let m = inrs.len();
    if !crate::linalg::is_positive_definite(k) {
        return Err(OparcError::NotPositiveDefinite("A^H T⁻¹ A".into()));
    }
    let l = k.clone().cholesky().ok_or_else(|| OparcError::NotPositiveDefinite("A^H T⁻¹ A".into()))?.unpack();
    let inner = CMatrix::identity(m, m) + l.adjoint() * sigma_matrix(inrs) * &l;
    if crate::linalg::is_positive_definite(&inner) {
        Ok(())
    } else {
        Err(OparcError::NotPositiveDefinite("updated VCM".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;
    use crate::linalg::rel_diff;

    fn geom(n: usize) -> ArrayGeometry {
        ArrayGeometry::half_wave_ula(n).unwrap()
    }

    #[test]
    fn identity_vcm() {
        let v = Vcm::identity(4).unwrap();
        assert_eq!(v.matrix(), &CMatrix::identity(4, 4));
        assert!(v.ledger().is_empty());
        let g = geom(4);
        assert_eq!(v.replay(&g).unwrap(), CMatrix::identity(4, 4));
        let a0 = g.steer(12.0).unwrap();
        assert_eq!(v.optimal_weight(&a0).0, a0);
        assert!(Vcm::identity(1).is_err());
    }

    #[test]
    fn zero_update_is_noop() {
        let g = geom(6);
        let v = Vcm::identity(6).unwrap();
        let b = BlockAssignment::new(&g, &[10.0, 40.0], &[0.0, 0.0]).unwrap();
        let out = v.apply_block_update(&b).unwrap();
        assert_eq!(out.matrix(), v.matrix());
        assert_eq!(out.inverse(), v.inverse());
    }

    #[test]
    fn rank_one_matches_dense_inverse() {
        let g = geom(8);
        let v = Vcm::identity(8).unwrap();
        let a = g.steer(23.0).unwrap();
        let out = v.apply_rank_one(23.0, &a, 2.0).unwrap();
        let dense = (CMatrix::identity(8, 8) + &a * a.adjoint() * C64::new(2.0, 0.0)).try_inverse().unwrap();
        assert!(rel_diff(out.inverse(), &dense) < 1e-10);
    }

    #[test]
    fn block_equals_sequential() {
        let g = geom(8);
        let v = Vcm::identity(8).unwrap();
        let block = v.apply_block_update(&BlockAssignment::new(&g, &[-30.0, 35.0], &[3.0, 0.7]).unwrap()).unwrap();
        let seq = v
            .apply_rank_one(-30.0, &g.steer(-30.0).unwrap(), 3.0)
            .unwrap()
            .apply_rank_one(35.0, &g.steer(35.0).unwrap(), 0.7)
            .unwrap();
        assert!(rel_diff(block.matrix(), seq.matrix()) < 1e-14);
        assert!(rel_diff(block.inverse(), seq.inverse()) < 1e-12);
    }

    #[test]
    fn rank_deficient_block_is_rejected() {
        let g = geom(8);
        let r = BlockAssignment::new(&g, &[20.0, 20.0], &[1.0, 1.0]);
        assert!(matches!(r, Err(OparcError::RankDeficient(_))));
    }

    #[test]
    fn definiteness_loss_is_rejected() {
        let g = geom(4);
        let v = Vcm::identity(4).unwrap();
        let a = g.steer(0.0).unwrap();
        // 1 + β a^H a = 1 - 0.5 * 4 < 0
        assert!(matches!(v.apply_rank_one(0.0, &a, -0.5), Err(OparcError::NotPositiveDefinite(_))));
        // 1 + β a^H a = 1 - 0.2 * 4 > 0
        assert!(v.apply_rank_one(0.0, &a, -0.2).is_ok());
    }

    #[test]
    fn orthogonal_update_leaves_weight() {
        let g = geom(8);
        let v = Vcm::identity(8).unwrap();
        let a0 = g.steer(0.0).unwrap();
        let null = (2.0f64 / 8.0).asin().to_degrees();
        let a1 = g.steer(null).unwrap();
        assert!(a1.dotc(&a0).norm() < 1e-12);
        let w = v.apply_rank_one(null, &a1, 50.0).unwrap().optimal_weight(&a0);
        assert!((w.0 - &a0).norm() < 1e-10);
    }

    #[test]
    fn scalar_h() {
        let g = geom(8);
        let v = Vcm::identity(8).unwrap();
        let a0 = g.steer(0.0).unwrap();
        let a = g.steer(27.0).unwrap();
        let beta = 4.0;
        let h = v.h_from_sigma(&CMatrix::from_column_slice(8, 1, a.as_slice()), &[beta], &a0).unwrap();
        let q = a.dotc(&a).re;
        let expected = -(a.dotc(&a0)) * beta / (1.0 + beta * q);
        assert!((h[0] - expected).norm() < 1e-12);
        let zero = v.h_from_sigma(&CMatrix::from_column_slice(8, 1, a.as_slice()), &[0.0], &a0).unwrap();
        assert_eq!(zero[0], C64::new(0.0, 0.0));
    }

    #[test]
    fn zero_h_gives_zero_sigma() {
        let g = geom(6);
        let v = Vcm::identity(6).unwrap();
        let a = g.steering_matrix(&[-20.0, 40.0]).unwrap();
        let s = v.sigma_from_h(&a, &CVector::zeros(2), &g.steer(0.0).unwrap()).unwrap();
        assert_eq!(s, vec![0.0, 0.0]);
    }

    #[test]
    fn complex_h_off_the_real_manifold_is_flagged() {
        let g = geom(6);
        let v = Vcm::identity(6).unwrap();
        let a = g.steering_matrix(&[30.0]).unwrap();
        let a0 = g.steer(0.0).unwrap();
        let h = CVector::from_vec(vec![C64::new(0.3, 0.9)]);
        assert!(matches!(v.sigma_from_h(&a, &h, &a0), Err(OparcError::InrConsistency { .. })));
    }

    #[test]
    fn periodic_refresh_keeps_inverse() {
        let g = geom(6);
        let mut v = Vcm::identity(6).unwrap();
        for i in 0..(REFRESH_INTERVAL + 3) {
            let th = -80.0 + (i as f64 * 7.3) % 160.0;
            v = v.apply_rank_one(th, &g.steer(th).unwrap(), 0.5).unwrap();
        }
        let dense = v.matrix().clone().try_inverse().unwrap();
        assert!(rel_diff(v.inverse(), &dense) < 1e-9);
        assert!(rel_diff(&v.replay(&g).unwrap(), v.matrix()) < 1e-9);
    }
}
