//! JSON model files.
//!
//! ```json
//! {
//!   "space": { "labels": ["a", "b"], "mu": [1.0, 1.0] },
//!   "process": {
//!     "variant": "superposition",
//!     "components": [
//!       { "variant": "poisson", "nu": [1.0, 2.0] },
//!       { "variant": "determinantal", "K": [[0.5, 0.25], [0.25, 0.5]] }
//!     ]
//!   }
//! }
//! ```
//!
//! `mu` defaults to the counting measure and `labels` to `x1..xn`; either
//! `labels` or `n` must be given. Kernel entries are reals or `[re, im]`
//! pairs, as nested rows or a flat row-major list, holding the kernel values
//! `K(x, y)`; `nu` holds densities against `mu`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::model::{GroundSpace, IntensityMeasure, Kernel, KernelTolerances, ProcessModel};
use crate::{C64, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    fn value(self) -> C64 {
        match self {
            Entry::Real(re) => C64::new(re, 0.0),
            Entry::Complex([re, im]) => C64::new(re, im),
        }
    }

    fn from_value(z: C64) -> Self {
        if z.im == 0.0 { Entry::Real(z.re) } else { Entry::Complex([z.re, z.im]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelSpec {
    Rows(Vec<Vec<Entry>>),
    Flat(Vec<Entry>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProcessSpec {
    Poisson {
        nu: Vec<f64>,
    },
    Determinantal {
        #[serde(rename = "K")]
        k: KernelSpec,
    },
    Superposition {
        components: Vec<ProcessSpec>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub space: SpaceSpec,
    pub process: ProcessSpec,
    /// Overrides for the kernel classification thresholds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<KernelTolerances>,
}

/// Serde failure with its position in the text.
pub fn json_error(err: &serde_json::Error) -> Error {
    Error::Config(format!("line {}, column {}: {err}", err.line(), err.column()))
}

fn at(path: &str, err: Error) -> Error {
    Error::Config(format!("{path}: {}", strip_config(err)))
}

fn strip_config(err: Error) -> String {
    match err {
        Error::Config(msg) => msg,
        other => other.to_string(),
    }
}

impl ModelFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| json_error(&e))
    }

    /// Validated ground space and process model.
    pub fn build(&self) -> Result<(GroundSpace, ProcessModel)> {
        let space = self.space.build().map_err(|e| at("space", e))?;
        let tol = self.tolerances.unwrap_or_default();
        let model = self.process.build(&space, tol, "process")?;
        model.validate().map_err(|e| at("process", e))?;
        Ok((space, model))
    }

    /// The file describing `model` on `space`; inverse of [`ModelFile::build`].
    pub fn from_model(space: &GroundSpace, model: &ProcessModel) -> Self {
        let tolerances = model
            .kernels()
            .first()
            .map(|k| k.tolerances())
            .filter(|t| *t != KernelTolerances::default());
        let space_spec = SpaceSpec {
            n: None,
            labels: Some(space.labels().to_vec()),
            mu: (!space.is_counting()).then(|| space.mu().to_vec()),
        };
        Self { space: space_spec, process: ProcessSpec::from_model(space, model), tolerances }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model files serialise")
    }
}

impl SpaceSpec {
    fn build(&self) -> Result<GroundSpace> {
        let labels = match (&self.labels, self.n) {
            (Some(l), Some(n)) if l.len() != n => {
                return Err(Error::Config(format!("n = {n} but {} labels given", l.len())));
            }
            (Some(l), _) => l.clone(),
            (None, Some(n)) => (1..=n).map(|i| format!("x{i}")).collect(),
            (None, None) => return Err(Error::Config("either `labels` or `n` is required".into())),
        };
        let mu = self.mu.clone().unwrap_or_else(|| vec![1.0; labels.len()]);
        GroundSpace::new(labels, mu)
    }
}

impl ProcessSpec {
    fn build(&self, space: &GroundSpace, tol: KernelTolerances, path: &str) -> Result<ProcessModel> {
        match self {
            ProcessSpec::Poisson { nu } => IntensityMeasure::on(space, nu.clone())
                .map(ProcessModel::Poisson)
                .map_err(|e| at(&format!("{path}.nu"), e)),
            ProcessSpec::Determinantal { k } => {
                let path = format!("{path}.K");
                let values = k.matrix(space.len()).map_err(|e| at(&path, e))?;
                Kernel::from_values_on_with(space, values, tol).map(ProcessModel::Determinantal).map_err(|e| at(&path, e))
            }
            ProcessSpec::Superposition { components } => components
                .iter()
                .enumerate()
                .map(|(i, c)| c.build(space, tol, &format!("{path}.components[{i}]")))
                .collect::<Result<Vec<_>>>()
                .map(ProcessModel::Superposition),
        }
    }

    fn from_model(space: &GroundSpace, model: &ProcessModel) -> Self {
        match model {
            ProcessModel::Poisson(nu) => ProcessSpec::Poisson { nu: nu.density().to_vec() },
            ProcessModel::Determinantal(k) => {
                let s: Vec<f64> = space.mu().iter().map(|w| w.sqrt()).collect();
                let m = k.matrix();
                let rows = (0..k.dim())
                    .map(|i| (0..k.dim()).map(|j| Entry::from_value(m[(i, j)] / (s[i] * s[j]))).collect())
                    .collect();
                ProcessSpec::Determinantal { k: KernelSpec::Rows(rows) }
            }
            ProcessModel::Superposition(parts) => {
                ProcessSpec::Superposition { components: parts.iter().map(|p| Self::from_model(space, p)).collect() }
            }
        }
    }
}

impl KernelSpec {
    fn matrix(&self, n: usize) -> Result<DMatrix<C64>> {
        match self {
            KernelSpec::Rows(rows) => {
                if rows.len() != n {
                    return Err(Error::Config(format!("expected {n} rows, got {}", rows.len())));
                }
                if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != n) {
                    return Err(Error::Config(format!("row {i} has {} entries, expected {n}", r.len())));
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j].value()))
            }
            KernelSpec::Flat(v) => {
                if v.len() != n * n {
                    return Err(Error::Config(format!("expected {} row-major entries, got {}", n * n, v.len())));
                }
                Ok(DMatrix::from_row_iterator(n, n, v.iter().map(|e| e.value())))
            }
        }
    }
}

/// Parses and validates a model file.
pub fn load_model(text: &str) -> Result<(GroundSpace, ProcessModel)> {
    ModelFile::parse(text)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    const WORKED: &str = r#"{
        "space": { "n": 2 },
        "process": { "variant": "superposition", "components": [
            { "variant": "poisson", "nu": [1, 2] },
            { "variant": "determinantal", "K": [[0.5, 0.25], [0.25, 0.5]] }
        ] }
    }"#;

    #[test]
    fn loads_worked_model() {
        let (space, model) = load_model(WORKED).unwrap();
        assert_eq!(space.labels(), ["x1", "x2"]);
        assert_eq!(model.poisson_part().unwrap().density(), [1.0, 2.0]);
        assert_eq!(model.kernels()[0].matrix()[(0, 1)], C64::new(0.25, 0.0));
    }

    #[test]
    fn flat_and_complex_entries() {
        let text = r#"{ "space": { "labels": ["a", "b"] },
            "process": { "variant": "determinantal", "K": [0.5, [0.1, 0.2], [0.1, -0.2], 0.5] } }"#;
        let (_, model) = load_model(text).unwrap();
        let k = model.kernels()[0];
        assert_eq!(k.matrix()[(0, 1)], C64::new(0.1, 0.2));
        assert!(k.is_hermitian());
    }

    #[test]
    fn weighted_values_are_rescaled() {
        let text = r#"{ "space": { "n": 1, "mu": [0.5] },
            "process": { "variant": "determinantal", "K": [[1.0]] } }"#;
        let (_, model) = load_model(text).unwrap();
        assert!((model.kernels()[0].matrix()[(0, 0)] - C64::new(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn round_trips() {
        let (space, model) = load_model(WORKED).unwrap();
        let again = load_model(&ModelFile::from_model(&space, &model).to_json()).unwrap();
        assert_eq!(again.1, model);
        let weighted = GroundSpace::new(vec!["p".into(), "q".into()], vec![0.5, 2.0]).unwrap();
        let k = Kernel::from_values_on(&weighted, DMatrix::from_element(2, 2, C64::new(0.2, 0.0))).unwrap();
        let m = ProcessModel::Determinantal(k);
        let back = load_model(&ModelFile::from_model(&weighted, &m).to_json()).unwrap();
        assert!((back.1.kernels()[0].matrix() - m.kernels()[0].matrix()).norm() < 1e-15);
    }

    #[test]
    fn tolerances_are_configurable() {
        let body = r#""space": { "n": 2 },
            "process": { "variant": "determinantal", "K": [[0.5, 0.25], [0.2500001, 1.0000001]] }"#;
        let strict = load_model(&format!("{{ {body} }}"));
        assert!(strict.map_or(true, |(_, m)| !m.kernels()[0].is_hermitian()));
        let loose = format!(r#"{{ {body}, "tolerances": {{ "hermitian": 1e-6, "spectral": 1e-5 }} }}"#);
        let (space, model) = load_model(&loose).unwrap();
        let k = model.kernels()[0];
        assert!(k.is_hermitian() && k.tolerances().spectral == 1e-5);
        let again = load_model(&ModelFile::from_model(&space, &model).to_json()).unwrap();
        assert_eq!(again.1, model);
        let bad = format!(r#"{{ {body}, "tolerances": {{ "hermitian": -1 }} }}"#);
        assert!(matches!(load_model(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn syntax_errors_carry_position() {
        let err = load_model("{\n  \"space\": { \"n\": 2 },\n  \"process\": { \"variant\": \"poisson\" \"nu\": [1] }\n}").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn semantic_errors_carry_field() {
        let text = r#"{ "space": { "n": 2 },
            "process": { "variant": "superposition", "components": [
                { "variant": "poisson", "nu": [1, 2] },
                { "variant": "determinantal", "K": [[0.5, 0.25]] } ] } }"#;
        let msg = load_model(text).unwrap_err().to_string();
        assert!(msg.contains("process.components[1].K"), "{msg}");
        let neg = r#"{ "space": { "n": 1 }, "process": { "variant": "poisson", "nu": [-1] } }"#;
        assert!(load_model(neg).unwrap_err().to_string().contains("process.nu"));
        let unknown = r#"{ "space": { "n": 1 }, "process": { "variant": "cox", "nu": [1] } }"#;
        assert!(matches!(load_model(unknown), Err(Error::Config(_))));
    }
}
