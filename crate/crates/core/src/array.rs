//! Array geometry, steering vectors and the beampattern functionals.

use serde::{Deserialize, Serialize};

use crate::error::{OparcError, Result};
use crate::linalg::hpd_solve;
use crate::{to_db, CMatrix, CVector, C64};

pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;
/// 300 MHz carrier, expressed as angular frequency.
pub const DEFAULT_OMEGA: f64 = 6.0 * std::f64::consts::PI * 1e8;

const ANGLE_SLACK_DEG: f64 = 1e-9;

/// Directional amplitude gain of one element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ElementPattern {
    Isotropic,
    /// `cos(θ)^exponent`, clamped at zero.
    CosinePower { exponent: f64 },
    /// Gains sampled on ascending angles, linearly interpolated, held constant
    /// beyond the table ends.
    Tabulated { angles_deg: Vec<f64>, gains: Vec<f64> },
}

impl ElementPattern {
    pub fn gain(&self, theta_deg: f64) -> f64 {
        match self {
            ElementPattern::Isotropic => 1.0,
            ElementPattern::CosinePower { exponent } => {
                let c = theta_deg.to_radians().cos().max(0.0);
                c.powf(*exponent)
            }
            ElementPattern::Tabulated { angles_deg, gains } => {
                let idx = angles_deg.partition_point(|&a| a <= theta_deg);
                if idx == 0 {
                    gains[0]
                } else if idx == angles_deg.len() {
                    gains[gains.len() - 1]
                } else {
                    let (a0, a1) = (angles_deg[idx - 1], angles_deg[idx]);
                    let t = (theta_deg - a0) / (a1 - a0);
                    gains[idx - 1] + t * (gains[idx] - gains[idx - 1])
                }
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ElementPattern::Isotropic => Ok(()),
            ElementPattern::CosinePower { exponent } => {
                if exponent.is_finite() && *exponent >= 0.0 {
                    Ok(())
                } else {
                    Err(OparcError::Geometry(format!("cosine exponent {exponent} must be finite and >= 0")))
                }
            }
            ElementPattern::Tabulated { angles_deg, gains } => {
                if angles_deg.is_empty() || angles_deg.len() != gains.len() {
                    return Err(OparcError::Geometry("tabulated pattern needs matching, non-empty angle and gain lists".into()));
                }
                if angles_deg.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(OparcError::Geometry("tabulated angles must be strictly ascending".into()));
                }
                if gains.iter().any(|g| !g.is_finite() || *g < 0.0) {
                    return Err(OparcError::Geometry("tabulated gains must be finite and nonnegative".into()));
                }
                Ok(())
            }
        }
    }
}

/// Anything that maps a direction to an N-dimensional array response.
///
/// Besides physical arrays this is implemented by projected views used when
/// hard null constraints remove part of the weight space.
pub trait Steering {
    fn element_count(&self) -> usize;
    fn steer(&self, theta_deg: f64) -> Result<CVector>;

    fn steering_matrix(&self, thetas_deg: &[f64]) -> Result<CMatrix> {
        let n = self.element_count();
        let mut a = CMatrix::zeros(n, thetas_deg.len());
        for (j, &t) in thetas_deg.iter().enumerate() {
            a.set_column(j, &self.steer(t)?);
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    /// Element coordinates in meters.
    positions: Vec<[f64; 3]>,
    /// One pattern per element.
    patterns: Vec<ElementPattern>,
    omega: f64,
    wave_speed: f64,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<[f64; 3]>, patterns: Vec<ElementPattern>, omega: f64, wave_speed: f64) -> Result<Self> {
        if positions.len() < 2 {
            return Err(OparcError::Geometry("at least 2 elements are required".into()));
        }
        if positions.iter().flatten().any(|c| !c.is_finite()) {
            return Err(OparcError::Geometry("element positions must be finite".into()));
        }
        let patterns = match patterns.len() {
            1 => vec![patterns[0].clone(); positions.len()],
            n if n == positions.len() => patterns,
            n => {
                return Err(OparcError::Geometry(format!(
                    "{n} element patterns given for {} elements",
                    positions.len()
                )))
            }
        };
        for p in &patterns {
            p.validate()?;
        }
        if !(omega.is_finite() && omega > 0.0 && wave_speed.is_finite() && wave_speed > 0.0) {
            return Err(OparcError::Geometry("omega and wave speed must be positive".into()));
        }
        Ok(Self { positions, patterns, omega, wave_speed })
    }

    /// Linear array along x with uniform spacing given in wavelengths, default carrier.
    pub fn ula(n: usize, spacing_wavelengths: f64, pattern: ElementPattern) -> Result<Self> {
        let lambda = 2.0 * std::f64::consts::PI * SPEED_OF_LIGHT / DEFAULT_OMEGA;
        let positions = (0..n).map(|i| [i as f64 * spacing_wavelengths * lambda, 0.0, 0.0]).collect();
        Self::new(positions, vec![pattern], DEFAULT_OMEGA, SPEED_OF_LIGHT)
    }

    /// Half-wavelength isotropic ULA.
    pub fn half_wave_ula(n: usize) -> Result<Self> {
        Self::ula(n, 0.5, ElementPattern::Isotropic)
    }

    pub fn wavelength(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.wave_speed / self.omega
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    pub fn patterns(&self) -> &[ElementPattern] {
        &self.patterns
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn wave_speed(&self) -> f64 {
        self.wave_speed
    }

    /// Stable hex digest identifying this geometry.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("geometry serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn check_angle(theta_deg: f64) -> Result<()> {
    if theta_deg.is_finite() && theta_deg.abs() <= 90.0 + ANGLE_SLACK_DEG {
        Ok(())
    } else {
        Err(OparcError::AngleDomain(theta_deg))
    }
}

impl Steering for ArrayGeometry {
    fn element_count(&self) -> usize {
        self.positions.len()
    }

    /// `g_n(θ) exp(-j ω τ_n(θ))` with `τ_n = (p_n · (sin θ, 0, 0)) / c`, θ from broadside.
    fn steer(&self, theta_deg: f64) -> Result<CVector> {
        check_angle(theta_deg)?;
        let sin = theta_deg.to_radians().sin();
        Ok(CVector::from_iterator(
            self.positions.len(),
            self.positions.iter().zip(&self.patterns).map(|(p, g)| {
                let tau = p[0] * sin / self.wave_speed;
                C64::from_polar(g.gain(theta_deg), -self.omega * tau)
            }),
        ))
    }
}

/// Complex beamformer weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamWeight(pub CVector);

impl BeamWeight {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &CVector {
        &self.0
    }

    /// `w^H a`.
    pub fn response(&self, a: &CVector) -> C64 {
        self.0.dotc(a)
    }

    /// Rescaled copy with `w^H a0 = 1`.
    pub fn normalized_to(&self, a0: &CVector) -> Result<BeamWeight> {
        let r = self.response(a0);
        if r.norm() == 0.0 {
            return Err(OparcError::DegenerateBeam);
        }
        // (w c)^H a0 = conj(c) w^H a0 = 1  =>  c = 1 / conj(r)
        Ok(BeamWeight(&self.0 / r.conj()))
    }
}

impl From<CVector> for BeamWeight {
    fn from(v: CVector) -> Self {
        BeamWeight(v)
    }
}

/// Uniform sampling of an angular interval in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleGrid {
    pub start_deg: f64,
    pub stop_deg: f64,
    pub step_deg: f64,
}

impl AngleGrid {
    /// A grid with `start == stop` is a single point.
    pub fn new(start_deg: f64, stop_deg: f64, step_deg: f64) -> Result<Self> {
        if !(step_deg > 0.0 && step_deg.is_finite()) {
            return Err(OparcError::Grid(format!("step {step_deg} must be positive")));
        }
        if !(start_deg <= stop_deg) {
            return Err(OparcError::Grid(format!("start {start_deg} exceeds stop {stop_deg}")));
        }
        check_angle(start_deg)?;
        check_angle(stop_deg)?;
        Ok(Self { start_deg, stop_deg, step_deg })
    }

    pub fn full(step_deg: f64) -> Result<Self> {
        Self::new(-90.0, 90.0, step_deg)
    }

    pub fn len(&self) -> usize {
        ((self.stop_deg - self.start_deg) / self.step_deg + 0.5).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid angles; the last point is snapped onto `stop_deg`.
    pub fn points(&self) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|i| if i + 1 == n { self.stop_deg } else { self.start_deg + i as f64 * self.step_deg })
            .collect()
    }
}

/// `|w^H a|² / |w^H a0|²` from precomputed steering vectors.
pub fn response_level_vectors(w: &BeamWeight, a: &CVector, a0: &CVector) -> Result<f64> {
    let den = w.response(a0).norm_sqr();
    if den == 0.0 {
        return Err(OparcError::DegenerateBeam);
    }
    Ok(w.response(a).norm_sqr() / den)
}

/// Linear response level `L(θ, θ0)`.
pub fn response_level(w: &BeamWeight, theta_deg: f64, theta0_deg: f64, steering: &dyn Steering) -> Result<f64> {
    let a = steering.steer(theta_deg)?;
    let a0 = steering.steer(theta0_deg)?;
    response_level_vectors(w, &a, &a0)
}

fn check_square(m: &CMatrix, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(OparcError::Dimension(format!("expected {n}x{n} matrix, got {}x{}", m.nrows(), m.ncols())));
    }
    Ok(())
}

fn quadratic_form(w: &BeamWeight, m: &CMatrix) -> Result<f64> {
    check_square(m, w.len())?;
    if !crate::linalg::is_positive_definite(m) {
        return Err(OparcError::NotPositiveDefinite("covariance".into()));
    }
    Ok(w.0.dotc(&(m * &w.0)).re)
}

/// Array gain `|w^H a0|² / (w^H T w)`.
pub fn array_gain(w: &BeamWeight, t: &CMatrix, a0: &CVector) -> Result<f64> {
    let den = quadratic_form(w, t)?;
    Ok(w.response(a0).norm_sqr() / den)
}

/// Output SINR `σ_s² |w^H a0|² / (w^H R w)` (linear).
pub fn output_sinr(w: &BeamWeight, r: &CMatrix, sigma_s2: f64, a0: &CVector) -> Result<f64> {
    let den = quadratic_form(w, r)?;
    Ok(sigma_s2 * w.response(a0).norm_sqr() / den)
}

/// The gain-optimal weight `T⁻¹ a0` by a dense solve; used where no maintained inverse exists.
pub fn dense_optimal_weight(t: &CMatrix, a0: &CVector) -> Result<BeamWeight> {
    Ok(BeamWeight(hpd_solve(t, a0)?))
}

/// Linear levels over the grid.
pub fn pattern_linear(w: &BeamWeight, theta0_deg: f64, angles_deg: &[f64], steering: &dyn Steering) -> Result<Vec<f64>> {
    let a0 = steering.steer(theta0_deg)?;
    let den = w.response(&a0).norm_sqr();
    if den == 0.0 {
        return Err(OparcError::DegenerateBeam);
    }
    angles_deg
        .iter()
        .map(|&t| Ok(w.response(&steering.steer(t)?).norm_sqr() / den))
        .collect()
}

/// `(angle, level dB)` pairs over the grid.
pub fn pattern_over_grid(w: &BeamWeight, theta0_deg: f64, grid: &AngleGrid, steering: &dyn Steering) -> Result<Vec<(f64, f64)>> {
    let angles = grid.points();
    let levels = pattern_linear(w, theta0_deg, &angles, steering)?;
    Ok(angles.into_iter().zip(levels.into_iter().map(to_db)).collect())
}
