//! Scenario files, bundled scenarios, and snapshot / manifest output.
//!
//! Lane numbers and cut pairs are 1-based in files: cut `j` stops the
//! exchange between lanes `j` and `j + 1`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::RunSummary;
use crate::error::Error as ModelError;
use crate::grid::Grid;
use crate::model::{FluxProfile, LaneTopology, Side, SideProfiles, SpeedLaw};
use crate::solver::{Numerics, Piece, RunResult, Scenario, Snapshot};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{origin}: line {line}, column {column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: field `{field}`: {source}")]
    Semantic {
        origin: String,
        field: String,
        source: ModelError,
    },
    #[error("unknown scenario `{0}`: not a file and not a bundled scenario")]
    NotFound(String),
    #[error("scenario cannot be written to a file: {0}")]
    Unserializable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LanesSection {
    pub count: usize,
    pub active_left: Vec<usize>,
    pub active_right: Vec<usize>,
    #[serde(default)]
    pub cut_left: Vec<usize>,
    #[serde(default)]
    pub cut_right: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LawSpec {
    /// Free-flow speed of a linear law.
    Linear(f64),
    /// Piecewise-linear `(u, v)` table.
    Table { table: Vec<(f64, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SideSpeeds {
    Uniform(LawSpec),
    PerLane(Vec<LawSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeedsSection {
    pub left: SideSpeeds,
    pub right: SideSpeeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub lanes: LanesSection,
    pub speeds: SpeedsSection,
    /// Piece lists, one per lane.
    pub initial: Vec<Vec<Piece>>,
    #[serde(default)]
    pub numerics: Numerics,
}

fn semantic(origin: &str, field: &str) -> impl FnOnce(ModelError) -> IoError {
    let (origin, field) = (origin.to_string(), field.to_string());
    move |source| IoError::Semantic {
        origin,
        field,
        source,
    }
}

fn zero_based(origin: &str, field: &str, labels: &[usize]) -> Result<Vec<usize>, IoError> {
    labels
        .iter()
        .map(|&l| {
            l.checked_sub(1).ok_or_else(|| {
                semantic(origin, field)(ModelError::InvalidTopology(
                    "lane and pair numbers start at 1".into(),
                ))
            })
        })
        .collect()
}

fn build_law(spec: &LawSpec) -> Result<SpeedLaw, ModelError> {
    match spec {
        LawSpec::Linear(v) => SpeedLaw::linear(*v),
        LawSpec::Table { table } => SpeedLaw::tabulated(table.clone()),
    }
}

fn build_side(
    origin: &str,
    side: &str,
    spec: &SideSpeeds,
    lanes: usize,
) -> Result<Vec<FluxProfile>, IoError> {
    let field = format!("speeds.{side}");
    let specs: Vec<&LawSpec> = match spec {
        SideSpeeds::Uniform(s) => vec![s; lanes],
        SideSpeeds::PerLane(v) => v.iter().collect(),
    };
    if specs.len() != lanes {
        return Err(semantic(origin, &field)(ModelError::InvalidScenario(format!(
            "{} speed laws for {lanes} lanes",
            specs.len()
        ))));
    }
    specs
        .into_iter()
        .enumerate()
        .map(|(j, s)| {
            build_law(s)
                .and_then(FluxProfile::new)
                .map_err(semantic(origin, &format!("{field}[{j}]")))
        })
        .collect()
}

fn law_spec(law: &SpeedLaw) -> Result<LawSpec, IoError> {
    match law {
        SpeedLaw::Linear { v_max } => Ok(LawSpec::Linear(*v_max)),
        SpeedLaw::Tabulated { points } => Ok(LawSpec::Table {
            table: points.clone(),
        }),
        SpeedLaw::Custom(_) => Err(IoError::Unserializable(
            "closure speed laws have no file representation".into(),
        )),
    }
}

fn one_based(set: &std::collections::BTreeSet<usize>) -> Vec<usize> {
    set.iter().map(|j| j + 1).collect()
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, IoError> {
        serde_json::from_str(text).map_err(|e| IoError::Parse {
            origin: origin.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_scenario(&self, origin: &str) -> Result<Scenario, IoError> {
        let l = &self.lanes;
        let topology = LaneTopology::new(
            l.count,
            zero_based(origin, "lanes.active_left", &l.active_left)?,
            zero_based(origin, "lanes.active_right", &l.active_right)?,
            zero_based(origin, "lanes.cut_left", &l.cut_left)?,
            zero_based(origin, "lanes.cut_right", &l.cut_right)?,
        )
        .map_err(semantic(origin, "lanes"))?;
        let left = build_side(origin, "left", &self.speeds.left, l.count)?;
        let right = build_side(origin, "right", &self.speeds.right, l.count)?;
        let profiles = SideProfiles::new(left, right).map_err(semantic(origin, "speeds"))?;
        let name = if self.name.is_empty() {
            origin.to_string()
        } else {
            self.name.clone()
        };
        let scenario = Scenario {
            name,
            topology,
            profiles,
            initial: self.initial.clone(),
            numerics: self.numerics.clone(),
        };
        scenario.validate_numerics().map_err(semantic(origin, "numerics"))?;
        scenario.validate_initial().map_err(semantic(origin, "initial"))?;
        Ok(scenario)
    }

    pub fn from_scenario(scenario: &Scenario) -> Result<Self, IoError> {
        let t = &scenario.topology;
        let side = |s: Side| -> Result<SideSpeeds, IoError> {
            Ok(SideSpeeds::PerLane(
                scenario
                    .profiles
                    .side(s)
                    .iter()
                    .map(|p| law_spec(p.law()))
                    .collect::<Result<_, _>>()?,
            ))
        };
        Ok(ScenarioFile {
            name: scenario.name.clone(),
            description: None,
            lanes: LanesSection {
                count: t.lanes(),
                active_left: one_based(t.active(Side::Left)),
                active_right: one_based(t.active(Side::Right)),
                cut_left: one_based(t.cuts(Side::Left)),
                cut_right: one_based(t.cuts(Side::Right)),
            },
            speeds: SpeedsSection {
                left: side(Side::Left)?,
                right: side(Side::Right)?,
            },
            initial: scenario.initial.clone(),
            numerics: scenario.numerics.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario files always serialize")
    }
}

pub fn parse_scenario_str(text: &str, origin: &str) -> Result<Scenario, IoError> {
    ScenarioFile::parse(text, origin)?.to_scenario(origin)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, IoError> {
    let text = fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text, &path.display().to_string())
}

pub fn serialize_scenario(scenario: &Scenario) -> Result<String, IoError> {
    Ok(ScenarioFile::from_scenario(scenario)?.to_json())
}

/// Scenario files shipped with the crate.
pub const BUNDLED: &[(&str, &str)] = &[
    ("s31_2to3.json", include_str!("../scenarios/s31_2to3.json")),
    ("s31_2to3_vr2.json", include_str!("../scenarios/s31_2to3_vr2.json")),
    ("s32_3to2.json", include_str!("../scenarios/s32_3to2.json")),
    ("s32_3to2_vr2.json", include_str!("../scenarios/s32_3to2_vr2.json")),
    ("s33_3to2_cut.json", include_str!("../scenarios/s33_3to2_cut.json")),
    ("s33_3to2_cut_vr1.5.json", include_str!("../scenarios/s33_3to2_cut_vr1.5.json")),
    ("s33_3to2_cut_vr2.json", include_str!("../scenarios/s33_3to2_cut_vr2.json")),
    ("s34_4to2.json", include_str!("../scenarios/s34_4to2.json")),
    ("s34_4to2_vr1.5.json", include_str!("../scenarios/s34_4to2_vr1.5.json")),
    ("s34_4to2_vr2.json", include_str!("../scenarios/s34_4to2_vr2.json")),
];

const ALIASES: &[(&str, &str)] = &[
    ("s31", "s31_2to3.json"),
    ("s32", "s32_3to2.json"),
    ("s33", "s33_3to2_cut.json"),
    ("s34", "s34_4to2.json"),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Bundled scenario by file name, file stem, or short alias such as `s31`.
pub fn bundled(name: &str) -> Option<Result<Scenario, IoError>> {
    let name = ALIASES
        .iter()
        .find(|(alias, _)| *alias == name)
        .map_or(name, |(_, file)| *file);
    BUNDLED
        .iter()
        .find(|(file, _)| *file == name || file.strip_suffix(".json") == Some(name))
        .map(|(file, text)| parse_scenario_str(text, file))
}

/// Loads a scenario from a path, falling back to the bundled set.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, IoError> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        return parse_scenario(path);
    }
    bundled(name_or_path).unwrap_or_else(|| Err(IoError::NotFound(name_or_path.to_string())))
}

/// Snapshot as CSV: `t,x,lane,rho`, one row per lane and cell, with the
/// cell centre as `x` and densities to 17 significant digits.
pub fn snapshot_csv(grid: &Grid, snap: &Snapshot) -> String {
    let state = &snap.state;
    let mut out = String::with_capacity(48 * state.lanes() * state.cells() + 16);
    out.push_str("t,x,lane,rho\n");
    for j in 0..state.lanes() {
        for (i, rho) in state.lane(j).iter().enumerate() {
            writeln!(out, "{},{},{},{:.16e}", snap.time, grid.center(i), j + 1, rho)
                .expect("writing to a String cannot fail");
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub index: usize,
    pub time: f64,
    pub step: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub scenario: String,
    pub lanes: usize,
    pub grid: Grid,
    pub v_max: f64,
    pub c1_norm: f64,
    pub lambda: f64,
    pub dt: f64,
    pub snapshots: Vec<SnapshotEntry>,
    pub summary: RunSummary,
}

impl Manifest {
    pub fn new(scenario: &Scenario, run: &RunResult) -> Self {
        Manifest {
            scenario: scenario.name.clone(),
            lanes: scenario.topology.lanes(),
            grid: run.grid,
            v_max: run.constants.v_max,
            c1_norm: run.constants.c1_norm,
            lambda: run.grid.lambda,
            dt: run.grid.dt,
            snapshots: run
                .snapshots
                .iter()
                .enumerate()
                .map(|(index, s)| SnapshotEntry {
                    index,
                    time: s.time,
                    step: s.state.step,
                    file: format!("snapshot_{index}.csv"),
                })
                .collect(),
            summary: RunSummary::new(run),
        }
    }
}

fn write_file(path: PathBuf, contents: &str) -> Result<(), IoError> {
    fs::write(&path, contents).map_err(|source| IoError::Write { path, source })
}

/// Writes `snapshot_<i>.csv` for every snapshot plus `manifest.json`.
pub fn write_run(dir: &Path, scenario: &Scenario, run: &RunResult) -> Result<Manifest, IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::Write {
        path: dir.to_path_buf(),
        source,
    })?;
    let manifest = Manifest::new(scenario, run);
    for (entry, snap) in manifest.snapshots.iter().zip(&run.snapshots) {
        write_file(dir.join(&entry.file), &snapshot_csv(&run.grid, snap))?;
    }
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_file(dir.join("manifest.json"), &json)?;
    Ok(manifest)
}
