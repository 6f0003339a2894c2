//! TOML run configuration.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::algebra::{NilpotentAlgebra, StructureConstants};
use crate::error::{Error, Result};
use crate::group::{LinearFlow, SemidirectGroup};
use crate::lcs::{ControlBox, ControlSystem};
use crate::spectral::Derivation;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub name: String,
    pub algebra: AlgebraConfig,
    pub derivation: DerivationConfig,
    #[serde(default)]
    pub compact: CompactConfig,
    pub control: ControlConfig,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub conjugate: Option<ConjugateConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Either a named preset or explicit structure constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgebraConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    /// `[i, j, k, c]` meaning `[e_i, e_j] = c e_k` plus the antisymmetric
    /// partner; indices are 1-based.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub brackets: Vec<(usize, usize, usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DerivationConfig {
    /// Row-major matrix of `D`.
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompactConfig {
    #[serde(default)]
    pub torus_dim: usize,
    /// Torus drift of the linear flow.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub speeds: Vec<f64>,
    /// One row-major `n x n` generator per torus factor.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generators: Vec<Vec<Vec<f64>>>,
    /// 1-based nilpotent coordinates taken modulo `2 pi`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub periodic: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    /// Nilpotent part of each control vector field.
    pub z: Vec<Vec<f64>>,
    /// Torus part of each control vector field (zeros when empty).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y: Vec<Vec<f64>>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub eps: f64,
    pub tau: f64,
    pub delta: f64,
    #[serde(default = "default_torus_cells")]
    pub torus_cells: usize,
    /// Number of landing times, uniform in `[tau, 2 tau]`.
    #[serde(default = "default_time_samples")]
    pub time_samples: usize,
    /// Explicit window for the nilpotent coordinates; derived from the
    /// bounds when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_hi: Option<Vec<f64>>,
}

fn default_torus_cells() -> usize {
    32
}

fn default_time_samples() -> usize {
    4
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            eps: 0.1,
            tau: 1.0,
            delta: 0.05,
            torus_cells: default_torus_cells(),
            time_samples: default_time_samples(),
            window_lo: None,
            window_hi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub t: f64,
    #[serde(default)]
    pub h0: Vec<f64>,
    #[serde(default)]
    pub x0: Vec<f64>,
    /// Switching times `t_0 < ... < t_p` (defaults to `[0, t]`).
    #[serde(default)]
    pub times: Vec<f64>,
    /// One control value per piece.
    pub values: Vec<Vec<f64>>,
    #[serde(default)]
    pub cross_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjugateConfig {
    /// Vectors spanning the ideal `n0` that is divided out.
    #[serde(default)]
    pub kernel: Vec<Vec<f64>>,
    /// Chain parameters used downstairs (upstairs ones when omitted).
    #[serde(default)]
    pub chain: Option<ChainConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: String,
    /// Write every graph edge, not only those inside chain sets.
    #[serde(default)]
    pub all_edges: bool,
    #[serde(default = "yes")]
    pub plotdata: bool,
}

fn default_dir() -> String {
    "out".into()
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: default_dir(),
            all_edges: false,
            plotdata: true,
        }
    }
}

/// Configurations bundled with the crate.
pub const PRESETS: &[(&str, &str)] = &[
    ("scalar-stable", include_str!("../presets/scalar-stable.toml")),
    ("scalar-unstable", include_str!("../presets/scalar-unstable.toml")),
    ("rotation-plane", include_str!("../presets/rotation-plane.toml")),
    ("heisenberg-central", include_str!("../presets/heisenberg-central.toml")),
    ("cylinder-conjugate", include_str!("../presets/cylinder-conjugate.toml")),
    ("drift-axis", include_str!("../presets/drift-axis.toml")),
    ("heisenberg-mixed", include_str!("../presets/heisenberg-mixed.toml")),
];

fn matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!("{what} must be {n} x {n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn finite(vals: &[f64], what: &str) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} contains a non-finite value")))
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn preset(name: &str) -> Result<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name}")))
            .and_then(|(_, t)| Self::parse(t))
    }

    /// `--config` accepts a path or `preset:NAME`.
    pub fn resolve(source: &str) -> Result<Self> {
        match source.strip_prefix("preset:") {
            Some(name) => Self::preset(name),
            None => Self::load(Path::new(source)),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn structure_constants(&self) -> Result<StructureConstants> {
        let a = &self.algebra;
        match (&a.preset, a.dim) {
            (Some(p), None) if a.brackets.is_empty() => StructureConstants::preset(p),
            (None, Some(n)) => {
                let mut q = Vec::with_capacity(a.brackets.len());
                for &(i, j, k, c) in &a.brackets {
                    if i == 0 || j == 0 || k == 0 || i > n || j > n || k > n {
                        return Err(Error::Config(format!("bracket index out of 1..={n}")));
                    }
                    q.push((i - 1, j - 1, k - 1, c));
                }
                StructureConstants::from_quadruples(n, &q)
            }
            _ => Err(Error::Config("algebra needs either `preset` or `dim` with `brackets`".into())),
        }
    }

    pub fn algebra(&self) -> Result<NilpotentAlgebra> {
        NilpotentAlgebra::new(self.structure_constants()?)
    }

    /// Group, flow and control system, with every construction check run.
    pub fn system(&self) -> Result<ControlSystem> {
        let alg = self.algebra()?;
        let n = alg.dim();
        let d = matrix(&self.derivation.matrix, n, "derivation.matrix")?;
        finite(d.as_slice(), "derivation.matrix")?;
        let c = &self.compact;
        if c.generators.len() != c.torus_dim {
            return Err(Error::Config(format!(
                "compact.generators needs {} matrices, found {}",
                c.torus_dim,
                c.generators.len()
            )));
        }
        let gens = c
            .generators
            .iter()
            .map(|g| matrix(g, n, "compact.generators"))
            .collect::<Result<Vec<_>>>()?;
        let periodic = c
            .periodic
            .iter()
            .map(|&p| {
                if p == 0 || p > n {
                    Err(Error::Config(format!("periodic index {p} outside 1..={n}")))
                } else {
                    Ok(p - 1)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let group = SemidirectGroup::new(alg.clone(), c.torus_dim, gens, periodic)?;
        let deriv = Derivation::new(d, &alg)?;
        let speeds = if c.speeds.is_empty() {
            DVector::zeros(c.torus_dim)
        } else if c.speeds.len() == c.torus_dim {
            DVector::from_row_slice(&c.speeds)
        } else {
            return Err(Error::Config("compact.speeds length must equal torus_dim".into()));
        };
        let flow = LinearFlow::new(&group, deriv, speeds)?;
        let ctl = &self.control;
        let m = ctl.lo.len();
        if ctl.hi.len() != m || ctl.z.len() != m {
            return Err(Error::Config("control.lo, control.hi and control.z must have one entry per control".into()));
        }
        finite(&ctl.lo, "control.lo")?;
        finite(&ctl.hi, "control.hi")?;
        let omega = ControlBox::new(DVector::from_row_slice(&ctl.lo), DVector::from_row_slice(&ctl.hi))?;
        let z = ctl.z.iter().map(|v| DVector::from_row_slice(v)).collect();
        let y = ctl.y.iter().map(|v| DVector::from_row_slice(v)).collect();
        ControlSystem::new(group, flow, z, y, omega)
    }

    /// Applies command-line overrides of the chain parameters.
    pub fn with_overrides(mut self, seed: Option<u64>, eps: Option<f64>, tau: Option<f64>, delta: Option<f64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(e) = eps {
            self.chain.eps = e;
        }
        if let Some(t) = tau {
            self.chain.tau = t;
        }
        if let Some(d) = delta {
            self.chain.delta = d;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for (name, _) in PRESETS {
            let cfg = RunConfig::preset(name).unwrap();
            cfg.system().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn round_trip_through_toml() {
        let cfg = RunConfig::preset("cylinder-conjugate").unwrap();
        let back = RunConfig::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_schema_and_fields() {
        let text = PRESETS[0].1.replace("schema_version = 1", "schema_version = 9");
        assert!(matches!(RunConfig::parse(&text), Err(Error::Config(_))));
        let text = format!("{}\nbogus = 1\n", PRESETS[0].1);
        assert!(RunConfig::parse(&text).is_err());
    }

    #[test]
    fn jacobi_failure_is_a_validation_error() {
        let text = r#"
schema_version = 1
[algebra]
dim = 3
brackets = [[1, 2, 3, 1.0], [1, 3, 1, 1.0]]
[derivation]
matrix = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]
[control]
z = [[1, 0, 0]]
lo = [-1]
hi = [1]
"#;
        let cfg = RunConfig::parse(text).unwrap();
        let err = cfg.system().unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().to_lowercase().contains("jacobi"), "{err}");
    }

    #[test]
    fn explicit_brackets_match_preset() {
        let text = PRESETS[3].1.replace("preset = \"heisenberg3\"", "dim = 3\nbrackets = [[1, 2, 3, 1.0]]");
        let a = RunConfig::parse(&text).unwrap().structure_constants().unwrap();
        let b = StructureConstants::heisenberg3();
        assert_eq!(a.nonzero(), b.nonzero());
    }

    #[test]
    fn overrides_apply() {
        let cfg = RunConfig::preset("scalar-stable")
            .unwrap()
            .with_overrides(Some(9), Some(0.3), None, Some(0.1));
        assert_eq!((cfg.seed, cfg.chain.eps, cfg.chain.delta), (9, 0.3, 0.1));
    }
}
