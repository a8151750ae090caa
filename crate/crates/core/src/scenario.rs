//! Simulated interference scenarios, snapshot generation and pattern-change metrics.
//!
//! Snapshots are drawn from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `seed_from_u64(seed)`; snapshot `t` uses stream `t`, so any snapshot can be
//! regenerated on its own and sharded generation matches sequential output bit
//! for bit. Within a snapshot the draws are ordered: one complex amplitude per
//! interference (in listed order), then one noise sample per element. Each
//! complex sample consumes two `u64` words `(x1, x2)`, mapped to uniforms
//! `u1 = 1 - (x1 >> 11) 2^-53` in `(0, 1]` and `u2 = (x2 >> 11) 2^-53`, and
//! equals `sqrt(power) sqrt(-ln u1) exp(j 2π u2)` (Box–Muller, both normals).

use std::collections::BTreeMap;

use rand_chacha::ChaCha20Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::array::{check_angle, Steering};
use crate::error::{OparcError, Result};
use crate::linalg::hermitize;
use crate::{to_db, CMatrix, CVector, C64};

/// Default signal power relative to unit noise: 10 dB SNR.
pub const DEFAULT_SIGMA_S2: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interference {
    pub theta_deg: f64,
    /// Interference-to-noise ratio, linear.
    pub inr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub theta0_deg: f64,
    pub sigma_s2: f64,
    pub interferences: Vec<Interference>,
    pub sigma_n2: f64,
    pub seed: u64,
    pub snapshot_count: usize,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        check_angle(self.theta0_deg)?;
        if !(self.sigma_s2 > 0.0 && self.sigma_s2.is_finite()) {
            return Err(OparcError::Config(format!("signal power {} must be positive", self.sigma_s2)));
        }
        if !(self.sigma_n2 > 0.0 && self.sigma_n2.is_finite()) {
            return Err(OparcError::Config(format!("noise power {} must be positive", self.sigma_n2)));
        }
        for i in &self.interferences {
            check_angle(i.theta_deg)?;
            if !(i.inr > 0.0 && i.inr.is_finite()) {
                return Err(OparcError::Config(format!("INR {} at {} deg must be positive", i.inr, i.theta_deg)));
            }
        }
        Ok(())
    }

    pub fn interference_count(&self) -> usize {
        self.interferences.len()
    }
}

/// `R = σ_n² (I + Σ_l β_l a(θ_l) a(θ_l)^H)`.
pub fn true_covariance(scenario: &Scenario, steering: &dyn Steering) -> Result<CMatrix> {
    let n = steering.element_count();
    let mut t = CMatrix::identity(n, n);
    for i in &scenario.interferences {
        let a = steering.steer(i.theta_deg)?;
        t += &a * a.adjoint() * C64::new(i.inr, 0.0);
    }
    hermitize(&mut t);
    Ok(t * C64::new(scenario.sigma_n2, 0.0))
}

/// Uniform in `[0, 1)` from the top 53 bits.
fn unit_uniform(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn complex_gaussian(rng: &mut ChaCha20Rng, power: f64) -> C64 {
    let u1 = 1.0 - unit_uniform(rng.next_u64());
    let u2 = unit_uniform(rng.next_u64());
    C64::from_polar(power.sqrt() * (-u1.ln()).sqrt(), 2.0 * std::f64::consts::PI * u2)
}

/// Interference-plus-noise snapshot number `index`.
pub fn snapshot(scenario: &Scenario, steerings: &[CVector], n: usize, index: u64) -> CVector {
    let mut rng = ChaCha20Rng::seed_from_u64(scenario.seed);
    rng.set_stream(index);
    let mut x = CVector::zeros(n);
    for (i, a) in scenario.interferences.iter().zip(steerings) {
        let s = complex_gaussian(&mut rng, i.inr * scenario.sigma_n2);
        x.axpy(s, a, C64::new(1.0, 0.0));
    }
    for xi in x.iter_mut() {
        *xi += complex_gaussian(&mut rng, scenario.sigma_n2);
    }
    x
}

/// `scenario.snapshot_count` interference-plus-noise snapshots.
pub fn generate_snapshots(scenario: &Scenario, steering: &dyn Steering) -> Result<Vec<CVector>> {
    scenario.validate()?;
    if scenario.snapshot_count == 0 {
        return Err(OparcError::Config("snapshot count must be at least 1".into()));
    }
    let n = steering.element_count();
    let steerings = scenario
        .interferences
        .iter()
        .map(|i| steering.steer(i.theta_deg))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..scenario.snapshot_count as u64).map(|t| snapshot(scenario, &steerings, n, t)).collect())
}

/// Level change at the controlled angles (`D_m`, dB) and the RMS change of the
/// whole pattern (`J`, linear levels).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMetrics {
    pub d_db: Vec<f64>,
    pub j: f64,
}

/// Both patterns are linear levels sampled on `angles_deg`.
pub fn control_metrics(angles_deg: &[f64], prev: &[f64], curr: &[f64], controlled_deg: &[f64]) -> Result<ControlMetrics> {
    if prev.len() != angles_deg.len() || curr.len() != angles_deg.len() {
        return Err(OparcError::GridMismatch(format!(
            "{} angles, {} previous and {} current samples",
            angles_deg.len(),
            prev.len(),
            curr.len()
        )));
    }
    if angles_deg.is_empty() {
        return Err(OparcError::GridMismatch("empty grid".into()));
    }
    let d_db = controlled_deg
        .iter()
        .map(|&theta| {
            let i = angles_deg
                .iter()
                .position(|&a| (a - theta).abs() <= 1e-9)
                .ok_or_else(|| OparcError::GridMismatch(format!("controlled angle {theta} is not a grid point")))?;
            Ok((to_db(curr[i]) - to_db(prev[i])).abs())
        })
        .collect::<Result<Vec<_>>>()?;
    let sum: f64 = prev.iter().zip(curr).map(|(p, c)| (c - p) * (c - p)).sum();
    Ok(ControlMetrics { d_db, j: (sum / angles_deg.len() as f64).sqrt() })
}

/// Machine-readable record of one command-line run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Vec<String>,
    /// SHA-256 of the configuration file bytes.
    pub config_hash: String,
    pub traces: Vec<serde_json::Value>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub outputs: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;
    use crate::linalg::{hermitian_eigenvalues, rel_diff};

    fn scenario(interferences: Vec<Interference>, sigma_n2: f64, count: usize) -> Scenario {
        Scenario { theta0_deg: 0.0, sigma_s2: DEFAULT_SIGMA_S2, interferences, sigma_n2, seed: 7, snapshot_count: count }
    }

    #[test]
    fn generator_test_vectors() {
        let s = scenario(vec![], 1.0, 1);
        let steer: Vec<CVector> = vec![];
        let x0 = snapshot(&s, &steer, 2, 0);
        let x1 = snapshot(&s, &steer, 2, 1);
        let expect = |v: C64, re: f64, im: f64| assert!((v.re - re).abs() < 1e-15 && (v.im - im).abs() < 1e-15, "{v}");
        // Seed 7, unit noise power, no interference.
        expect(x0[0], -0.1500441077259292, -0.03315073672900191);
        expect(x0[1], -0.36663770427496895, 1.699829927133564);
        expect(x1[0], 0.10925247022213973, 0.703740348700567);
        expect(x1[1], 0.3000525056775061, 0.0637248943739822);
    }

    #[test]
    fn no_interference_is_scaled_identity() {
        let g = ArrayGeometry::half_wave_ula(5).unwrap();
        let r = true_covariance(&scenario(vec![], 2.5, 1), &g).unwrap();
        assert!(rel_diff(&r, &(CMatrix::identity(5, 5) * C64::new(2.5, 0.0))) < 1e-15);
    }

    #[test]
    fn one_interference_lifts_the_top_eigenvalue() {
        let g = ArrayGeometry::half_wave_ula(6).unwrap();
        let r = true_covariance(&scenario(vec![Interference { theta_deg: 30.0, inr: 100.0 }], 2.0, 1), &g).unwrap();
        let ev = hermitian_eigenvalues(&r);
        assert!((ev[5] - 2.0 * (1.0 + 100.0 * 6.0)).abs() < 1e-9);
        assert!(ev[..5].iter().all(|e| (e - 2.0).abs() < 1e-9));
    }

    #[test]
    fn noiseless_snapshots_follow_the_interferer() {
        let g = ArrayGeometry::half_wave_ula(4).unwrap();
        // Unit-power interferer over a negligible noise floor.
        let s = scenario(vec![Interference { theta_deg: -20.0, inr: 1e30 }], 1e-30, 20);
        let a = g.steer(-20.0).unwrap();
        for x in generate_snapshots(&s, &g).unwrap() {
            let c = a.dotc(&x) / a.dotc(&a);
            assert!((&x - &a * c).norm() <= 1e-12 * x.norm());
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let g = ArrayGeometry::half_wave_ula(4).unwrap();
        let s = scenario(vec![Interference { theta_deg: 10.0, inr: 5.0 }], 1.0, 50);
        assert_eq!(generate_snapshots(&s, &g).unwrap(), generate_snapshots(&s, &g).unwrap());
        let mut other = s.clone();
        other.seed = 8;
        assert_ne!(generate_snapshots(&s, &g).unwrap(), generate_snapshots(&other, &g).unwrap());
    }

    #[test]
    fn sharded_generation_matches() {
        let g = ArrayGeometry::half_wave_ula(3).unwrap();
        let s = scenario(vec![Interference { theta_deg: 40.0, inr: 3.0 }], 1.0, 10);
        let all = generate_snapshots(&s, &g).unwrap();
        let a = vec![g.steer(40.0).unwrap()];
        assert_eq!(snapshot(&s, &a, 3, 7), all[7]);
    }

    #[test]
    fn metrics_identity_and_shift() {
        let angles = [-10.0, 0.0, 10.0];
        let prev = [0.01, 1.0, 0.02];
        let m = control_metrics(&angles, &prev, &prev, &[-10.0, 10.0]).unwrap();
        assert_eq!(m.d_db, vec![0.0, 0.0]);
        assert_eq!(m.j, 0.0);
        let mut curr = prev;
        curr[0] *= crate::from_db(3.0);
        let m = control_metrics(&angles, &prev, &curr, &[-10.0, 10.0]).unwrap();
        assert!((m.d_db[0] - 3.0).abs() < 1e-12 && m.d_db[1] == 0.0);
        assert!(control_metrics(&angles, &prev, &curr, &[5.0]).is_err());
        assert!(control_metrics(&angles, &prev[..2], &curr, &[]).is_err());
    }
}
