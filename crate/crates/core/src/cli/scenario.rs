//! Scenario file: a TOML document whose keys spell out their units.

use crate::fdm::{GridSpec, ObstacleStreamValue};
use crate::flc::OuterGains;
use crate::flowfield::ObstacleSpec;
use crate::orchestrator::{HealthyQuad, RecoveryScenario};
use crate::quadrotor::{ExtendedState, QuadParams};
use crate::streamline::FitConfig;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Reserved; the pipeline is deterministic.
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainSection,
    #[serde(default)]
    pub obstacles: Vec<ObstacleEntry>,
    #[serde(default)]
    pub quads: Vec<QuadEntry>,
    pub airframe: AirframeSection,
    #[serde(default)]
    pub gains: GainsSection,
    pub simulation: SimulationSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleValueMode {
    #[default]
    Zero,
    CenterHeight,
    /// Each obstacle supplies `stream_value_m2_per_s`.
    PerObstacle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub x_min_m: f64,
    pub x_max_m: f64,
    pub y_min_m: f64,
    pub y_max_m: f64,
    pub nx: usize,
    pub ny: usize,
    pub boundary_gain_per_s: f64,
    #[serde(default)]
    pub obstacle_stream_value: ObstacleValueMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    pub x_m: f64,
    pub y_m: f64,
    pub radius_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stream_value_m2_per_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadEntry {
    pub id: u32,
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AirframeSection {
    pub mass_kg: f64,
    pub gravity_m_per_s2: f64,
    pub arm_length_m: f64,
    pub inertia_kg_m2: [f64; 3],
    pub thrust_coeff_n_s2: f64,
    pub drag_coeff_n_m_s2: f64,
    pub omega_max_rad_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
    pub k5: f64,
    pub k6: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        let g = OuterGains::default();
        Self {
            k1: g.k1,
            k2: g.k2,
            k3: g.k3,
            k4: g.k4,
            k5: g.k5,
            k6: g.k6,
        }
    }
}

fn default_iterations() -> usize {
    20
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub sim_dt_s: f64,
    pub horizon_s: f64,
    pub v_min_m_per_s: f64,
    pub v_max_m_per_s: f64,
    pub v_tolerance_m_per_s: f64,
    #[serde(default = "default_iterations")]
    pub max_iterations: usize,
    #[serde(default = "FitSection::default")]
    pub fit: FitSection,
    #[serde(default = "default_true")]
    pub snap_feedforward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub segment_s: f64,
    pub max_deviation_m: f64,
}

impl Default for FitSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            segment_s: f.segment_duration,
            max_deviation_m: f.max_deviation,
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Builds and validates the pipeline scenario.
    pub fn to_scenario(&self) -> Result<RecoveryScenario, String> {
        let d = &self.domain;
        let grid = GridSpec::new(d.x_min_m, d.x_max_m, d.y_min_m, d.y_max_m, d.nx, d.ny)
            .map_err(|e| format!("domain: {e}"))?;
        let obstacles: Vec<ObstacleSpec> = self
            .obstacles
            .iter()
            .map(|o| ObstacleSpec::new(o.x_m, o.y_m, o.radius_m))
            .collect();
        let obstacle_values = match d.obstacle_stream_value {
            ObstacleValueMode::Zero => ObstacleStreamValue::Zero,
            ObstacleValueMode::CenterHeight => ObstacleStreamValue::CenterHeight,
            ObstacleValueMode::PerObstacle => ObstacleStreamValue::PerObstacle(
                self.obstacles
                    .iter()
                    .enumerate()
                    .map(|(i, o)| {
                        o.stream_value_m2_per_s
                            .ok_or_else(|| format!("obstacles[{i}].stream_value_m2_per_s is required"))
                    })
                    .collect::<Result<_, _>>()?,
            ),
        };
        let a = &self.airframe;
        let params = QuadParams {
            mass: a.mass_kg,
            gravity: a.gravity_m_per_s2,
            arm_length: a.arm_length_m,
            inertia: Vector3::from(a.inertia_kg_m2),
            thrust_coeff: a.thrust_coeff_n_s2,
            drag_coeff: a.drag_coeff_n_m_s2,
            omega_max: a.omega_max_rad_per_s,
        };
        params.validate().map_err(|e| format!("airframe: {e}"))?;
        let g = &self.gains;
        let s = &self.simulation;
        let scenario = RecoveryScenario {
            grid,
            boundary_gain: d.boundary_gain_per_s,
            obstacles,
            obstacle_values,
            healthy: self
                .quads
                .iter()
                .map(|q| HealthyQuad {
                    id: q.id,
                    initial: ExtendedState::hover_at(Vector3::new(q.x_m, q.y_m, q.z_m), &params),
                })
                .collect(),
            params,
            gains: OuterGains {
                k1: g.k1,
                k2: g.k2,
                k3: g.k3,
                k4: g.k4,
                k5: g.k5,
                k6: g.k6,
            },
            sim_dt: s.sim_dt_s,
            horizon: s.horizon_s,
            v_bounds: (s.v_min_m_per_s, s.v_max_m_per_s),
            v_tolerance: s.v_tolerance_m_per_s,
            max_iterations: s.max_iterations,
            fit: FitConfig {
                segment_duration: s.fit.segment_s,
                max_deviation: s.fit.max_deviation_m,
            },
            snap_feedforward: s.snap_feedforward,
        };
        scenario.validate().map_err(|e| e.to_string())?;
        Ok(scenario)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUNDLED: &str = include_str!("../../scenarios/two_failures.toml");

    #[test]
    fn bundled_scenario_parses() {
        let file = ScenarioFile::parse(BUNDLED).unwrap();
        let s = file.to_scenario().unwrap();
        assert_eq!(s.healthy.len(), 10);
        assert_eq!(s.obstacles.len(), 2);
        assert!(s.obstacles.iter().all(|o| o.radius == 2.0));
        assert_eq!(s.grid.dx(), 0.25);
        assert_eq!(s.grid.dy(), 0.25);
        assert_eq!(s.gains, OuterGains::default());
    }

    #[test]
    fn round_trip_is_identical() {
        let file = ScenarioFile::parse(BUNDLED).unwrap();
        let again = ScenarioFile::parse(&file.to_toml()).unwrap();
        assert_eq!(file, again);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = BUNDLED.replace("omega_max_rad_per_s", "omega_max");
        let err = ScenarioFile::parse(&text).unwrap_err();
        assert!(err.contains("omega_max"), "{err}");
    }

    #[test]
    fn per_obstacle_values_need_every_entry() {
        let mut file = ScenarioFile::parse(BUNDLED).unwrap();
        file.domain.obstacle_stream_value = ObstacleValueMode::PerObstacle;
        assert!(file.to_scenario().unwrap_err().contains("stream_value_m2_per_s"));
    }
}
