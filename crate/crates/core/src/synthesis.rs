//! Step-wise beampattern synthesis from the quiescent start `T = I`.
//!
//! Every step samples the current pattern, picks the sidelobe peaks and the
//! mainlobe template points that deviate from the desired pattern, optionally
//! keeps only the worst `C_k` of them, and drives those angles to their desired
//! levels with one multi-point step.

use serde::{Deserialize, Serialize};

use crate::array::{check_angle, pattern_linear, AngleGrid, BeamWeight, Steering};
use crate::error::{OparcError, Result};
use crate::kernel::ControlTask;
use crate::multipoint::{solve_step, Solver};
use crate::vcm::Vcm;
use crate::{to_db, CVector};

const ALIAS_TOLERANCE: f64 = 1e-9;

/// Closed angular interval in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub start_deg: f64,
    pub stop_deg: f64,
}

impl Sector {
    pub fn new(start_deg: f64, stop_deg: f64) -> Result<Self> {
        check_angle(start_deg)?;
        check_angle(stop_deg)?;
        if !(start_deg <= stop_deg) {
            return Err(OparcError::Config(format!("sector [{start_deg}, {stop_deg}] is reversed")));
        }
        Ok(Self { start_deg, stop_deg })
    }

    pub fn contains(&self, theta_deg: f64) -> bool {
        theta_deg >= self.start_deg && theta_deg <= self.stop_deg
    }

    /// Overlap of positive length; touching endpoints do not count.
    fn overlaps(&self, other: &Sector) -> bool {
        self.start_deg.max(other.start_deg) < self.stop_deg.min(other.stop_deg)
    }
}

/// A sidelobe sector with its desired level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SidelobeSector {
    pub sector: Sector,
    pub level_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MainlobeTemplate {
    Unconstrained,
    /// `(angle deg, desired level dB)` targets inside the mainlobe sector.
    Sampled { points: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesiredPattern {
    pub beam_axis_deg: f64,
    pub mainlobe: Sector,
    pub mainlobe_template: MainlobeTemplate,
    pub sidelobe_sectors: Vec<SidelobeSector>,
}

impl DesiredPattern {
    /// Mainlobe `[θ0 - half_width, θ0 + half_width]` (clipped to the angle domain)
    /// and one sidelobe level everywhere else.
    pub fn uniform(theta0_deg: f64, half_width_deg: f64, level_db: f64) -> Result<Self> {
        check_angle(theta0_deg)?;
        let lo = (theta0_deg - half_width_deg).max(-90.0);
        let hi = (theta0_deg + half_width_deg).min(90.0);
        let mut sidelobe_sectors = Vec::new();
        if lo > -90.0 {
            sidelobe_sectors.push(SidelobeSector { sector: Sector::new(-90.0, lo)?, level_db });
        }
        if hi < 90.0 {
            sidelobe_sectors.push(SidelobeSector { sector: Sector::new(hi, 90.0)?, level_db });
        }
        let d = Self {
            beam_axis_deg: theta0_deg,
            mainlobe: Sector::new(lo, hi)?,
            mainlobe_template: MainlobeTemplate::Unconstrained,
            sidelobe_sectors,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        check_angle(self.beam_axis_deg)?;
        Sector::new(self.mainlobe.start_deg, self.mainlobe.stop_deg)?;
        if !self.mainlobe.contains(self.beam_axis_deg) {
            return Err(OparcError::Config(format!("mainlobe does not contain the beam axis {}", self.beam_axis_deg)));
        }
        for (i, s) in self.sidelobe_sectors.iter().enumerate() {
            Sector::new(s.sector.start_deg, s.sector.stop_deg)?;
            if !(s.level_db < 0.0) {
                return Err(OparcError::Config(format!("sidelobe level {} dB must be below 0 dB", s.level_db)));
            }
            if s.sector.overlaps(&self.mainlobe) || self.sidelobe_sectors[..i].iter().any(|o| o.sector.overlaps(&s.sector)) {
                return Err(OparcError::Config("pattern sectors must be pairwise disjoint".into()));
            }
        }
        if let MainlobeTemplate::Sampled { points } = &self.mainlobe_template {
            for &(theta, level) in points {
                check_angle(theta)?;
                if !self.mainlobe.contains(theta) || !level.is_finite() {
                    return Err(OparcError::Config(format!("template point ({theta}, {level}) is outside the mainlobe")));
                }
            }
        }
        Ok(())
    }

    /// Desired sidelobe level at `theta`; the first matching sector wins.
    pub fn sidelobe_level_db(&self, theta_deg: f64) -> Option<f64> {
        self.sidelobe_sectors.iter().find(|s| s.sector.contains(theta_deg)).map(|s| s.level_db)
    }

    /// Sidelobe sectors with the transition band next to the mainlobe removed.
    pub fn peak_sectors(&self, transition_deg: f64) -> Vec<SidelobeSector> {
        let lo = self.mainlobe.start_deg - transition_deg;
        let hi = self.mainlobe.stop_deg + transition_deg;
        let mut out = Vec::new();
        for s in &self.sidelobe_sectors {
            let (a, b) = (s.sector.start_deg, s.sector.stop_deg);
            // Parts of [a, b] outside the open band (lo, hi).
            if a <= lo {
                out.push(SidelobeSector { sector: Sector { start_deg: a, stop_deg: b.min(lo) }, level_db: s.level_db });
            }
            if b >= hi {
                out.push(SidelobeSector { sector: Sector { start_deg: a.max(hi), stop_deg: b }, level_db: s.level_db });
            }
        }
        out
    }

    fn template_points(&self) -> &[(f64, f64)] {
        match &self.mainlobe_template {
            MainlobeTemplate::Unconstrained => &[],
            MainlobeTemplate::Sampled { points } => points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    pub grid_step_deg: f64,
    pub level_tol_db: f64,
    pub max_steps: usize,
    /// Per-step cap on the control set; the last entry repeats. `None` controls every candidate.
    pub large_array_ck: Option<Vec<usize>>,
    pub solver: Solver,
    pub mainlobe_deviation_db: f64,
    pub transition_deg: f64,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            grid_step_deg: 0.05,
            level_tol_db: 0.5,
            max_steps: 100,
            large_array_ck: None,
            solver: Solver::default(),
            mainlobe_deviation_db: 0.5,
            transition_deg: 2.0,
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.grid_step_deg > 0.0 && self.grid_step_deg <= 0.1) {
            return Err(OparcError::Config(format!("grid step {} must be in (0, 0.1] deg", self.grid_step_deg)));
        }
        if !(self.level_tol_db > 0.0) || !(self.mainlobe_deviation_db > 0.0) || !(self.transition_deg >= 0.0) {
            return Err(OparcError::Config("tolerances must be positive and the transition band nonnegative".into()));
        }
        if let Some(ck) = &self.large_array_ck {
            if ck.is_empty() || ck.iter().any(|&c| c == 0 || c >= n) {
                return Err(OparcError::Config(format!("every C_k must satisfy 1 <= C_k < N = {n}")));
            }
        }
        Ok(())
    }

    fn ck(&self, step: usize) -> Option<usize> {
        self.large_array_ck.as_ref().map(|c| c[step.min(c.len() - 1)])
    }
}

/// Strict local maxima of `levels` inside `sectors`. Only points with a grid
/// neighbour on both sides qualify, so the grid ends are never peaks.
pub fn detect_sidelobe_peaks(angles_deg: &[f64], levels: &[f64], sectors: &[SidelobeSector]) -> Vec<f64> {
    (1..levels.len().saturating_sub(1))
        .filter(|&i| levels[i] > levels[i - 1] && levels[i] > levels[i + 1])
        .map(|i| angles_deg[i])
        .filter(|&t| sectors.iter().any(|s| s.sector.contains(t)))
        .collect()
}

/// Template points whose current level misses the target by more than `threshold_db`,
/// with their signed deviations.
pub fn select_mainlobe_angles(
    w: &BeamWeight,
    steering: &dyn Steering,
    desired: &DesiredPattern,
    threshold_db: f64,
) -> Result<Vec<(f64, f64)>> {
    Ok(mainlobe_deviations(w, steering, desired)?.into_iter().filter(|(_, d)| d.abs() > threshold_db).collect())
}

fn mainlobe_deviations(w: &BeamWeight, steering: &dyn Steering, desired: &DesiredPattern) -> Result<Vec<(f64, f64)>> {
    let points = desired.template_points();
    let angles: Vec<f64> = points.iter().map(|p| p.0).collect();
    let levels = pattern_linear(w, desired.beam_axis_deg, &angles, steering)?;
    Ok(points.iter().zip(levels).map(|(&(t, d), l)| (t, to_db(l) - d)).collect())
}

/// Orders `(angle, deviation dB)` candidates by `|deviation|`, largest first, and keeps `ck`.
pub fn rank_and_truncate(candidates: &[(f64, f64)], ck: usize) -> Vec<f64> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    sorted.into_iter().take(ck).map(|c| c.0).collect()
}

/// Keeps up to `cap` angles in order, skipping any whose steering vector is parallel
/// to an already kept one (e.g. ±90° on a half-wavelength ULA).
fn drop_aliases(steering: &dyn Steering, ranked: Vec<f64>, cap: usize) -> Result<Vec<f64>> {
    let mut kept: Vec<(f64, CVector)> = Vec::new();
    for theta in ranked {
        if kept.len() == cap {
            break;
        }
        let a = steering.steer(theta)?;
        let an = a.norm();
        if kept.iter().all(|(_, b)| a.dotc(b).norm() < (1.0 - ALIAS_TOLERANCE) * an * b.norm()) {
            kept.push((theta, a));
        }
    }
    Ok(kept.into_iter().map(|k| k.0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisStep {
    pub step: usize,
    pub tasks: Vec<ControlTask>,
    pub inrs: Vec<f64>,
    pub solver_trace: Vec<f64>,
    pub solver_converged: bool,
    /// Array gain `a0^H T⁻¹ a0` after the step.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SynthesisOutcome {
    /// Every audited point lies within the level tolerance.
    Qualified,
    StepLimit,
    SolverFailed(OparcError),
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub weight: BeamWeight,
    pub vcm: Vcm,
    pub steps: Vec<SynthesisStep>,
    /// Final pattern on the synthesis grid, `(angle, level dB)`.
    pub pattern: Vec<(f64, f64)>,
    /// Final sidelobe peaks with their deviation from the target (dB).
    pub peak_deviations: Vec<(f64, f64)>,
    pub outcome: SynthesisOutcome,
}

impl SynthesisResult {
    pub fn steps_used(&self) -> usize {
        self.steps.len()
    }

    pub fn success(&self) -> bool {
        self.outcome == SynthesisOutcome::Qualified
    }

    pub fn max_peak_excess_db(&self) -> f64 {
        self.peak_deviations.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }
}

struct Audit {
    pattern: Vec<(f64, f64)>,
    peaks: Vec<(f64, f64)>,
    mainlobe: Vec<(f64, f64)>,
}

fn audit(w: &BeamWeight, steering: &dyn Steering, desired: &DesiredPattern, angles: &[f64], cfg: &SynthesisConfig) -> Result<Audit> {
    let levels = pattern_linear(w, desired.beam_axis_deg, angles, steering)?;
    let sectors = desired.peak_sectors(cfg.transition_deg);
    let index = |theta: f64| angles.iter().position(|&a| a == theta).expect("peak is a grid angle");
    let peaks = detect_sidelobe_peaks(angles, &levels, &sectors)
        .into_iter()
        .map(|t| {
            let target = sectors.iter().find(|s| s.sector.contains(t)).expect("peak inside a sector").level_db;
            (t, to_db(levels[index(t)]) - target)
        })
        .collect();
    let mainlobe = mainlobe_deviations(w, steering, desired)?;
    let pattern = angles.iter().zip(&levels).map(|(&a, &l)| (a, to_db(l))).collect();
    Ok(Audit { pattern, peaks, mainlobe })
}

pub fn synthesize(steering: &dyn Steering, desired: &DesiredPattern, cfg: &SynthesisConfig) -> Result<SynthesisResult> {
    let n = steering.element_count();
    if n < 3 {
        return Err(OparcError::Geometry(format!("synthesis needs N >= 3, got {n}")));
    }
    desired.validate()?;
    cfg.validate(n)?;
    let theta0 = desired.beam_axis_deg;
    let a0: CVector = steering.steer(theta0)?;
    let angles = AngleGrid::full(cfg.grid_step_deg)?.points();
    let sectors = desired.peak_sectors(cfg.transition_deg);

    let mut vcm = Vcm::identity(n)?;
    let mut weight = vcm.optimal_weight(&a0);
    let mut steps = Vec::new();
    let outcome = loop {
        let state = audit(&weight, steering, desired, &angles, cfg)?;
        let within = |d: &(f64, f64)| d.1.abs() <= cfg.level_tol_db;
        if state.peaks.iter().all(within) && state.mainlobe.iter().all(within) {
            break SynthesisOutcome::Qualified;
        }
        if steps.len() >= cfg.max_steps {
            break SynthesisOutcome::StepLimit;
        }
        let mut candidates = state.peaks.clone();
        candidates.extend(state.mainlobe.iter().filter(|d| d.1.abs() > cfg.mainlobe_deviation_db));
        let cap = cfg.ck(steps.len()).unwrap_or(n - 1).min(n - 1);
        let chosen = drop_aliases(steering, rank_and_truncate(&candidates, candidates.len()), cap)?;
        let tasks = chosen
            .iter()
            .map(|&t| {
                let level = desired.template_points().iter().find(|p| p.0 == t).map(|p| p.1).unwrap_or_else(|| {
                    sectors.iter().find(|s| s.sector.contains(t)).expect("peak inside a sector").level_db
                });
                ControlTask::from_db(t, level)
            })
            .collect::<Result<Vec<_>>>()?;
        match solve_step(&vcm, &a0, steering, &tasks, &cfg.solver) {
            Ok(out) => {
                vcm = out.vcm;
                weight = out.weight;
                steps.push(SynthesisStep {
                    step: steps.len() + 1,
                    tasks,
                    inrs: out.sigma,
                    solver_trace: out.trace,
                    solver_converged: out.converged,
                    gain: a0.dotc(&weight.0).re,
                });
            }
            Err(e) => break SynthesisOutcome::SolverFailed(e),
        }
    };
    let last = audit(&weight, steering, desired, &angles, cfg)?;
    Ok(SynthesisResult { weight, vcm, steps, pattern: last.pattern, peak_deviations: last.peaks, outcome })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::ArrayGeometry;

    #[test]
    fn monotone_samples_have_no_peaks() {
        let angles: Vec<f64> = (0..50).map(|i| -40.0 + i as f64 * 0.1).collect();
        let levels: Vec<f64> = (0..50).map(|i| 1e-3 * (i + 1) as f64).collect();
        let s = [SidelobeSector { sector: Sector::new(-40.0, -35.0).unwrap(), level_db: -30.0 }];
        assert!(detect_sidelobe_peaks(&angles, &levels, &s).is_empty());
    }

    #[test]
    fn grid_ends_are_not_peaks() {
        let angles = [-90.0, -89.9, -89.8];
        let s = [SidelobeSector { sector: Sector::new(-90.0, -80.0).unwrap(), level_db: -30.0 }];
        assert!(detect_sidelobe_peaks(&angles, &[0.3, 0.2, 0.1], &s).is_empty());
        assert_eq!(detect_sidelobe_peaks(&angles, &[0.1, 0.2, 0.1], &s), vec![-89.9]);
    }

    #[test]
    fn ranking_keeps_the_largest_deviations() {
        let c = [(10.0, 3.0), (20.0, -9.0), (30.0, 1.0)];
        assert_eq!(rank_and_truncate(&c, 2), vec![20.0, 10.0]);
        assert_eq!(rank_and_truncate(&c, 5), vec![20.0, 10.0, 30.0]);
    }

    #[test]
    fn transition_band_is_cut_from_the_sectors() {
        let d = DesiredPattern::uniform(0.0, 10.0, -30.0).unwrap();
        let p = d.peak_sectors(2.0);
        assert_eq!(p.len(), 2);
        assert_eq!(p[0].sector, Sector { start_deg: -90.0, stop_deg: -12.0 });
        assert_eq!(p[1].sector, Sector { start_deg: 12.0, stop_deg: 90.0 });
    }

    #[test]
    fn invalid_patterns_are_rejected() {
        let mut d = DesiredPattern::uniform(0.0, 10.0, -30.0).unwrap();
        d.sidelobe_sectors[0].level_db = 1.0;
        assert!(d.validate().is_err());
        let mut d = DesiredPattern::uniform(0.0, 10.0, -30.0).unwrap();
        d.mainlobe = Sector::new(5.0, 10.0).unwrap();
        assert!(d.validate().is_err());
        let mut d = DesiredPattern::uniform(0.0, 10.0, -30.0).unwrap();
        d.sidelobe_sectors[0].sector.stop_deg = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn unconstrained_mainlobe_selects_nothing() {
        let g = ArrayGeometry::half_wave_ula(8).unwrap();
        let d = DesiredPattern::uniform(0.0, 15.0, -30.0).unwrap();
        let w = BeamWeight(g.steer(0.0).unwrap());
        assert!(select_mainlobe_angles(&w, &g, &d, 0.5).unwrap().is_empty());
    }

    #[test]
    fn quiescent_target_stops_at_step_zero() {
        let g = ArrayGeometry::half_wave_ula(10).unwrap();
        let cfg = SynthesisConfig { grid_step_deg: 0.1, ..Default::default() };
        let angles = AngleGrid::full(0.1).unwrap().points();
        let w = BeamWeight(g.steer(0.0).unwrap());
        let levels = pattern_linear(&w, 0.0, &angles, &g).unwrap();
        let all = [SidelobeSector { sector: Sector::new(15.0, 90.0).unwrap(), level_db: -1.0 }];
        // One sector per quiescent peak, at exactly the peak's level.
        let sidelobe_sectors = detect_sidelobe_peaks(&angles, &levels, &all)
            .into_iter()
            .map(|t| {
                let i = angles.iter().position(|&a| a == t).unwrap();
                SidelobeSector { sector: Sector::new(t - 0.5, t + 0.5).unwrap(), level_db: to_db(levels[i]) }
            })
            .collect();
        let d = DesiredPattern {
            beam_axis_deg: 0.0,
            mainlobe: Sector::new(-12.0, 12.0).unwrap(),
            mainlobe_template: MainlobeTemplate::Unconstrained,
            sidelobe_sectors,
        };
        let r = synthesize(&g, &d, &SynthesisConfig { transition_deg: 0.0, ..cfg }).unwrap();
        assert!(r.success());
        assert_eq!(r.steps_used(), 0);
        assert!(r.vcm.ledger().is_empty());
    }

    #[test]
    fn sixteen_element_uniform_sidelobes() {
        let g = ArrayGeometry::half_wave_ula(16).unwrap();
        let d = DesiredPattern::uniform(0.0, 12.0, -30.0).unwrap();
        let r = synthesize(&g, &d, &SynthesisConfig::default()).unwrap();
        assert!(r.success(), "{:?}", r.outcome);
        assert!(!r.peak_deviations.is_empty());
        assert!(r.peak_deviations.iter().all(|p| p.1.abs() <= 0.5));
        let axis = r.pattern.iter().find(|p| p.0.abs() < 1e-9).unwrap();
        assert!(axis.1.abs() < 1e-9);
    }
}
