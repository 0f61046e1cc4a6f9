//! Experiment configuration files.

use std::path::Path;

use mw_harmonics::czo::{riesz_kernel, zero_kernel, KernelSpec};
use mw_harmonics::geometry::Cube;
use mw_harmonics::grid::{CellGrid, ScalarField, VectorField};
use mw_harmonics::muckenhoupt::ExponentConfig;
use mw_harmonics::weights::{make_weight, MatrixWeightField, WeightSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::suite::Tier;
use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random weight and input is derived from it.
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub weights: Vec<WeightSpec>,
    #[serde(default)]
    pub exponents: Option<ExponentSpec>,
    #[serde(default)]
    pub family: FamilySpec,
    #[serde(default)]
    pub inputs: Vec<InputSpec>,
    pub task: Task,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub d: usize,
    /// Cells per axis `2^level`.
    pub level: u32,
    /// Domain `[0, 2^side_log2)^d`.
    #[serde(default)]
    pub side_log2: i32,
}

/// A number or one of `"inf"`, `"infinity"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Exponent {
    Number(f64),
    Text(Infinity),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Infinity {
    Inf,
    Infinity,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::Number(x) => x,
            Exponent::Text(_) => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub p: Vec<Exponent>,
    /// Defaults to all ones.
    #[serde(default)]
    pub r: Option<Vec<Exponent>>,
    /// Defaults to infinity.
    #[serde(default)]
    pub s: Option<Exponent>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CubeSpec {
    pub corner: Vec<f64>,
    pub side: f64,
}

impl CubeSpec {
    pub fn cube(&self) -> Result<Cube, mw_harmonics::Error> {
        Cube::from_f64(&self.corner, self.side)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilySpec {
    /// Dyadic subcubes of the domain, down to `max_depth` levels (cell level by default).
    #[default]
    Dyadic,
    DyadicDepth { max_depth: u32 },
    /// Dyadic subcubes of one cube.
    Subcubes { cube: CubeSpec, depth: u32 },
    /// Grid-aligned cubes of dyadic side at every cell offset.
    Sliding,
    Cubes { cubes: Vec<CubeSpec> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// `1_Q · vector`.
    Indicator { cube: CubeSpec, vector: Vec<f64> },
    Constant { vector: Vec<f64> },
    /// Uniform entries in `[-1, 1]`, optionally restricted to a cube.
    Random {
        dim: usize,
        #[serde(default)]
        support: Option<CubeSpec>,
    },
    /// Cell-major values, `dim` per cell.
    Values { dim: usize, values: Vec<f64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Riesz,
    Zero,
}

impl KernelChoice {
    pub fn build(self, m: usize, d: usize) -> Result<KernelSpec, mw_harmonics::Error> {
        match self {
            KernelChoice::Riesz => riesz_kernel(m, d),
            KernelChoice::Zero => Ok(zero_kernel(m, d)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CharacteristicMethod {
    Roudenko,
    Reducing,
    Tensor,
    Factorization,
    Oracle,
    FujiiWilson,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaximalMethod {
    Multilinear,
    Eta,
    Weighted,
    Auxiliary,
    Convex,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "operator", rename_all = "snake_case", deny_unknown_fields)]
pub enum SparseOperator {
    /// Convex-body maximal operator over the configured family.
    Maximal {
        #[serde(default = "default_directions")]
        directions: usize,
    },
    /// Calderón–Zygmund operator on a top cube.
    Czo {
        kernel: KernelChoice,
        top: CubeSpec,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_directions() -> usize {
    200
}

fn default_eps() -> f64 {
    0.5
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CzoAction {
    Apply,
    GrandMaximal,
    CzDecompose { lambda: f64 },
    Diagnostics { top: CubeSpec },
    SparseDominate {
        top: CubeSpec,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case", deny_unknown_fields)]
pub enum Task {
    Characteristic { method: CharacteristicMethod },
    Reduce { p: Exponent },
    Maximal {
        method: MaximalMethod,
        #[serde(default)]
        r: Option<Vec<f64>>,
        #[serde(default)]
        eta: Option<f64>,
    },
    SparseDominate(SparseOperator),
    Nondegeneracy {
        m: usize,
        cube: CubeSpec,
        alpha: f64,
        #[serde(default = "default_factorizations")]
        factorizations: usize,
    },
    Czo {
        kernel: KernelChoice,
        action: CzoAction,
    },
    Verify { tier: Tier },
}

fn default_factorizations() -> usize {
    20
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Characteristic { .. } => "characteristic",
            Task::Reduce { .. } => "reduce",
            Task::Maximal { .. } => "maximal",
            Task::SparseDominate(_) => "sparse-dominate",
            Task::Nondegeneracy { .. } => "nondegeneracy",
            Task::Czo { .. } => "czo",
            Task::Verify { .. } => "verify",
        }
    }
}

fn input_error(path: impl Into<String>, msg: impl std::fmt::Display) -> CliError {
    CliError::Input(format!("{}: {msg}", path.into()))
}

/// SplitMix64 step, used to derive independent seeds from the master seed.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            input_error(if path == "." { "config".to_string() } else { path }, e.into_inner())
        })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| input_error(path.display().to_string(), e))?;
        Self::from_json(&text)
    }

    pub fn cell_grid(&self) -> Result<CellGrid, CliError> {
        CellGrid::new(self.grid.d, self.grid.side_log2, self.grid.level).map_err(|e| input_error("grid", e))
    }

    /// Weight fields with random generators reseeded from the master seed.
    pub fn weight_fields(&self) -> Result<Vec<MatrixWeightField>, CliError> {
        let grid = self.cell_grid()?;
        self.weights
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let spec = match spec.clone() {
                    WeightSpec::RandomCells { n, seed, spread } => {
                        WeightSpec::RandomCells { n, seed: mix(self.seed, mix(j as u64, seed)), spread }
                    }
                    WeightSpec::RandomLogLipschitz { n, seed, lipschitz } => {
                        WeightSpec::RandomLogLipschitz { n, seed: mix(self.seed, mix(j as u64, seed)), lipschitz }
                    }
                    other => other,
                };
                make_weight(&spec, grid).map_err(|e| input_error(format!("weights[{j}]"), e))
            })
            .collect()
    }

    pub fn exponent_config(&self) -> Result<ExponentConfig, CliError> {
        let spec = self.exponents.as_ref().ok_or_else(|| input_error("exponents", "missing"))?;
        let p: Vec<f64> = spec.p.iter().map(|x| x.value()).collect();
        let r: Vec<f64> = match &spec.r {
            Some(r) => r.iter().map(|x| x.value()).collect(),
            None => vec![1.0; p.len()],
        };
        if r.len() != p.len() {
            return Err(input_error("exponents.r", format!("expected {} entries, got {}", p.len(), r.len())));
        }
        let s = spec.s.map_or(f64::INFINITY, |x| x.value());
        let cfg = ExponentConfig::new(&p, &r, s).map_err(|e| input_error("exponents", e))?;
        if !self.weights.is_empty() && self.weights.len() != cfg.m() {
            return Err(input_error("weights", format!("expected {} weights for the exponents, got {}", cfg.m(), self.weights.len())));
        }
        Ok(cfg)
    }

    pub fn cubes(&self) -> Result<Vec<Cube>, CliError> {
        let grid = self.cell_grid()?;
        let err = |e| input_error("family", e);
        let cubes = match &self.family {
            FamilySpec::Dyadic => grid.dyadic_family(),
            FamilySpec::DyadicDepth { max_depth } => {
                grid.dyadic_subcubes(&grid.domain(), (*max_depth).min(grid.level)).map_err(err)?
            }
            FamilySpec::Subcubes { cube, depth } => {
                let q = cube.cube().map_err(|e| input_error("family.cube", e))?;
                grid.dyadic_subcubes(&q, *depth).map_err(err)?
            }
            FamilySpec::Sliding => grid.sliding_family(),
            FamilySpec::Cubes { cubes } => cubes
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let q = c.cube().map_err(|e| input_error(format!("family.cubes[{i}]"), e))?;
                    grid.cells_of(&q).map_err(|e| input_error(format!("family.cubes[{i}]"), e))?;
                    Ok(q)
                })
                .collect::<Result<_, CliError>>()?,
        };
        if cubes.is_empty() {
            return Err(input_error("family", "no cubes"));
        }
        Ok(cubes)
    }

    pub fn input_fields(&self) -> Result<Vec<VectorField>, CliError> {
        let grid = self.cell_grid()?;
        self.inputs.iter().enumerate().map(|(j, spec)| build_input(spec, grid, mix(self.seed, 1000 + j as u64), j)).collect()
    }
}

pub fn build_input(spec: &InputSpec, grid: CellGrid, seed: u64, j: usize) -> Result<VectorField, CliError> {
    let path = |field: &str| format!("inputs[{j}]{field}");
    match spec {
        InputSpec::Indicator { cube, vector } => {
            let q = cube.cube().map_err(|e| input_error(path(".cube"), e))?;
            let h = ScalarField::indicator(grid, &q).map_err(|e| input_error(path(".cube"), e))?;
            Ok(VectorField::scaled(&h, vector))
        }
        InputSpec::Constant { vector } => Ok(VectorField::scaled(&ScalarField::constant(grid, 1.0), vector)),
        InputSpec::Random { dim, support } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f = VectorField::new(grid, *dim, (0..grid.n_cells() * dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .map_err(|e| input_error(path(""), e))?;
            if let Some(s) = support {
                let q = s.cube().map_err(|e| input_error(path(".support"), e))?;
                let cells = grid.cells_of(&q).map_err(|e| input_error(path(".support"), e))?;
                f = f.restrict(&cells);
            }
            Ok(f)
        }
        InputSpec::Values { dim, values } => {
            VectorField::new(grid, *dim, values.clone()).map_err(|e| input_error(path(".values"), e))
        }
    }
}

/// Inputs for the `czo` subcommand: `{"inputs": [...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputFile {
    #[serde(default)]
    pub seed: u64,
    pub inputs: Vec<InputSpec>,
}

impl InputFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| input_error(path.display().to_string(), e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| input_error(e.path().to_string(), e.into_inner()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponents_accept_inf() {
        let spec: ExponentSpec = serde_json::from_str(r#"{"p": [2, "inf"], "s": "infinity"}"#).unwrap();
        assert_eq!(spec.p[1].value(), f64::INFINITY);
        assert_eq!(spec.s.unwrap().value(), f64::INFINITY);
        assert!(serde_json::from_str::<ExponentSpec>(r#"{"p": ["two"]}"#).is_err());
    }

    #[test]
    fn errors_carry_field_paths() {
        let err = ExperimentConfig::from_json(r#"{"seed": 1, "grid": {"d": "x", "level": 2}, "task": {"command": "verify", "tier": "fast"}}"#)
            .unwrap_err();
        assert!(err.to_string().contains("grid.d"), "{err}");
    }

    #[test]
    fn derived_seeds_differ_by_stream() {
        assert_eq!(mix(5, 1), mix(5, 1));
        assert_ne!(mix(5, 1), mix(5, 2));
        assert_ne!(mix(5, 1), mix(6, 1));
    }
}
