//! TOML run configuration and the small input files that go with it.

use std::path::Path;

use anyhow::{bail, Context, Result};
use oparc::array::{DEFAULT_OMEGA, SPEED_OF_LIGHT};
use oparc::scenario::DEFAULT_SIGMA_S2;
use oparc::{
    ArrayGeometry, CadmmConfig, ControlTask, DesiredPattern, ElementPattern, Interference, IterativeConfig, LedgerEntry, MainlobeTemplate,
    Scenario, Sector, SidelobeSector, Solver, SynthesisConfig,
};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub array: ArrayConfig,
    pub desired_pattern: Option<DesiredConfig>,
    pub scenario: Option<ScenarioConfig>,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    #[default]
    Wavelengths,
    Meters,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    /// Uniform linear array: element count and spacing.
    pub elements: Option<usize>,
    pub spacing: Option<f64>,
    /// Explicit element coordinates, 1 to 3 components each (x, y, z).
    pub positions: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub units: Units,
    pub pattern: Option<ElementPattern>,
    pub element_patterns: Option<Vec<ElementPattern>>,
    pub omega: Option<f64>,
    pub wave_speed: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SidelobeConfig {
    pub start_deg: f64,
    pub stop_deg: f64,
    pub level_db: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesiredConfig {
    pub theta0_deg: f64,
    /// `[start, stop]`; with `half_width_deg` and `level_db` instead, a uniform pattern is built.
    pub mainlobe: Option<[f64; 2]>,
    #[serde(default)]
    pub sidelobes: Vec<SidelobeConfig>,
    pub half_width_deg: Option<f64>,
    pub level_db: Option<f64>,
    /// `[[angle, level_db], ...]` inside the mainlobe.
    pub mainlobe_template: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceConfig {
    pub theta_deg: f64,
    pub inr: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub theta0_deg: Option<f64>,
    pub sigma_s2: Option<f64>,
    pub sigma_n2: Option<f64>,
    #[serde(default)]
    pub interferences: Vec<InterferenceConfig>,
    /// Interference count assumed by the noise-power estimate; defaults to the listed count.
    pub interference_count: Option<usize>,
    pub snapshots: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    #[default]
    Iterative,
    Cadmm,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: Option<SolverKind>,
    pub beta_eps: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub eta: Option<f64>,
    pub delta: Option<f64>,
    pub max_iter: Option<usize>,
    pub grid_step_deg: Option<f64>,
    pub level_tol_db: Option<f64>,
    pub max_steps: Option<usize>,
    pub large_array_ck: Option<Vec<usize>>,
    pub transition_deg: Option<f64>,
    pub mainlobe_deviation_db: Option<f64>,
}

pub struct Loaded {
    pub config: Config,
    pub bytes: Vec<u8>,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
    let config = toml::from_str(text).with_context(|| format!("parsing config {}", path.display()))?;
    Ok(Loaded { config, bytes })
}

pub fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

impl ArrayConfig {
    pub fn geometry(&self) -> Result<ArrayGeometry> {
        let omega = self.omega.unwrap_or(DEFAULT_OMEGA);
        let wave_speed = self.wave_speed.unwrap_or(SPEED_OF_LIGHT);
        let lambda = 2.0 * std::f64::consts::PI * wave_speed / omega;
        let scale = match self.units {
            Units::Wavelengths => lambda,
            Units::Meters => 1.0,
        };
        let positions: Vec<[f64; 3]> = match (&self.positions, self.elements) {
            (Some(_), Some(_)) => bail!("[array] takes either `positions` or `elements`, not both"),
            (Some(p), None) => p
                .iter()
                .map(|c| match c.len() {
                    1..=3 => {
                        let mut xyz = [0.0; 3];
                        for (d, v) in xyz.iter_mut().zip(c) {
                            *d = v * scale;
                        }
                        Ok(xyz)
                    }
                    k => bail!("element position with {k} coordinates"),
                })
                .collect::<Result<_>>()?,
            (None, Some(n)) => {
                let d = self.spacing.unwrap_or(match self.units {
                    Units::Wavelengths => 0.5,
                    Units::Meters => lambda / 2.0,
                });
                (0..n).map(|i| [i as f64 * d * scale, 0.0, 0.0]).collect()
            }
            (None, None) => bail!("[array] needs `positions` or `elements`"),
        };
        let patterns = match (&self.element_patterns, &self.pattern) {
            (Some(_), Some(_)) => bail!("[array] takes either `pattern` or `element_patterns`, not both"),
            (Some(p), None) => p.clone(),
            (None, Some(p)) => vec![p.clone()],
            (None, None) => vec![ElementPattern::Isotropic],
        };
        Ok(ArrayGeometry::new(positions, patterns, omega, wave_speed)?)
    }
}

impl DesiredConfig {
    pub fn desired(&self) -> Result<DesiredPattern> {
        let mut d = match (self.mainlobe, self.half_width_deg) {
            (Some(_), Some(_)) => bail!("[desired_pattern] takes either `mainlobe` or `half_width_deg`, not both"),
            (None, Some(hw)) => {
                if !self.sidelobes.is_empty() {
                    bail!("[desired_pattern] `half_width_deg` builds the sidelobes itself; drop `sidelobes`");
                }
                let level = self.level_db.context("[desired_pattern] `half_width_deg` needs `level_db`")?;
                DesiredPattern::uniform(self.theta0_deg, hw, level)?
            }
            (Some([lo, hi]), None) => {
                if self.level_db.is_some() {
                    bail!("[desired_pattern] `level_db` is only used with `half_width_deg`");
                }
                DesiredPattern {
                    beam_axis_deg: self.theta0_deg,
                    mainlobe: Sector::new(lo, hi)?,
                    mainlobe_template: MainlobeTemplate::Unconstrained,
                    sidelobe_sectors: self
                        .sidelobes
                        .iter()
                        .map(|s| Ok(SidelobeSector { sector: Sector::new(s.start_deg, s.stop_deg)?, level_db: s.level_db }))
                        .collect::<Result<_>>()?,
                }
            }
            (None, None) => bail!("[desired_pattern] needs `mainlobe` or `half_width_deg`"),
        };
        if let Some(points) = &self.mainlobe_template {
            d.mainlobe_template = MainlobeTemplate::Sampled { points: points.iter().map(|p| (p[0], p[1])).collect() };
        }
        d.validate()?;
        Ok(d)
    }
}

pub struct ScenarioSettings {
    pub scenario: Scenario,
    pub interference_count: usize,
}

impl ScenarioConfig {
    /// Flags override the section's `snapshots` and `seed`.
    pub fn settings(&self, fallback_theta0: Option<f64>, snapshots: Option<usize>, seed: Option<u64>) -> Result<ScenarioSettings> {
        let theta0_deg = self.theta0_deg.or(fallback_theta0).context("[scenario] needs `theta0_deg`")?;
        let scenario = Scenario {
            theta0_deg,
            sigma_s2: self.sigma_s2.unwrap_or(DEFAULT_SIGMA_S2),
            interferences: self.interferences.iter().map(|i| Interference { theta_deg: i.theta_deg, inr: i.inr }).collect(),
            sigma_n2: self.sigma_n2.unwrap_or(1.0),
            seed: seed.or(self.seed).unwrap_or(0),
            snapshot_count: snapshots.or(self.snapshots).unwrap_or(1000),
        };
        scenario.validate()?;
        Ok(ScenarioSettings { interference_count: self.interference_count.unwrap_or(scenario.interferences.len()), scenario })
    }
}

impl SolverConfig {
    pub fn solver(&self, override_kind: Option<SolverKind>) -> Solver {
        match override_kind.or(self.kind).unwrap_or_default() {
            SolverKind::Iterative => {
                let d = IterativeConfig::default();
                Solver::Iterative(IterativeConfig {
                    beta_eps: self.beta_eps.unwrap_or(d.beta_eps),
                    max_sweeps: self.max_sweeps.unwrap_or(d.max_sweeps),
                })
            }
            SolverKind::Cadmm => {
                let d = CadmmConfig::default();
                Solver::Cadmm(CadmmConfig {
                    eta: self.eta.unwrap_or(d.eta),
                    delta: self.delta.unwrap_or(d.delta),
                    max_iter: self.max_iter.unwrap_or(d.max_iter),
                })
            }
        }
    }

    pub fn synthesis(&self, override_kind: Option<SolverKind>) -> SynthesisConfig {
        let d = SynthesisConfig::default();
        SynthesisConfig {
            grid_step_deg: self.grid_step_deg.unwrap_or(d.grid_step_deg),
            level_tol_db: self.level_tol_db.unwrap_or(d.level_tol_db),
            max_steps: self.max_steps.unwrap_or(d.max_steps),
            large_array_ck: self.large_array_ck.clone().or(d.large_array_ck),
            solver: self.solver(override_kind),
            mainlobe_deviation_db: self.mainlobe_deviation_db.unwrap_or(d.mainlobe_deviation_db),
            transition_deg: self.transition_deg.unwrap_or(d.transition_deg),
        }
    }

    /// Step of the angle grid used for pattern output.
    pub fn grid_step(&self) -> f64 {
        self.grid_step_deg.unwrap_or(SynthesisConfig::default().grid_step_deg)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelPoint {
    pub theta_deg: f64,
    /// `-inf` requests a null.
    pub level_db: f64,
}

/// `control --tasks` and `quiescent adapt --extra-constraints` input.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub theta0_deg: Option<f64>,
    #[serde(default)]
    pub task: Vec<LevelPoint>,
    /// Virtual interferences already present before the step.
    #[serde(default)]
    pub initial: Vec<LedgerEntry>,
}

impl TaskFile {
    pub fn tasks(&self) -> Result<Vec<ControlTask>> {
        if self.task.is_empty() {
            bail!("no [[task]] entries");
        }
        Ok(self.task.iter().map(|t| ControlTask::from_db(t.theta_deg, t.level_db)).collect::<oparc::Result<_>>()?)
    }
}

/// `beamform --constraints` input.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintFile {
    #[serde(default)]
    pub constraint: Vec<LevelPoint>,
}
