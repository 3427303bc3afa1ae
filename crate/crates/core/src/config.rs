//! TOML configuration files: the operator plus optional sections used by
//! individual commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixkit::{MatrixField, MutationDecomposition};
use crate::model::{sample, CoefficientDescriptor, PeriodicCell, System, SystemSpec};
use crate::optimize::{Objective, PartitionCell};
use crate::spectra::{EigenOptions, Engine};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumericsSection {
    pub substeps: Option<usize>,
    pub richardson: Option<bool>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub engine: Option<Engine>,
}

impl NumericsSection {
    pub fn apply(&self, mut o: EigenOptions) -> EigenOptions {
        if let Some(v) = self.substeps {
            o.substeps = v;
        }
        if let Some(v) = self.richardson {
            o.richardson = v;
        }
        if let Some(v) = self.tol {
            o.tol = v;
        }
        if let Some(v) = self.max_iter {
            o.max_iter = v;
        }
        if let Some(v) = self.engine {
            o.engine = v;
        }
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSection {
    pub r: Vec<CoefficientDescriptor>,
    pub mu: Vec<CoefficientDescriptor>,
    #[serde(rename = "S")]
    pub s: Vec<Vec<CoefficientDescriptor>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutationSection {
    pub r: Vec<CoefficientDescriptor>,
    pub mu: Vec<CoefficientDescriptor>,
    /// Whole cell when absent.
    #[serde(default)]
    pub partition: Vec<PartitionCell>,
    #[serde(default = "default_objective")]
    pub objective: Objective,
}

fn default_objective() -> Objective {
    Objective::Min
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub parameter: Option<String>,
    #[serde(default)]
    pub values: Vec<f64>,
    pub tolerance: Option<f64>,
    /// `to_zero` or `to_infinity` for frequency scans.
    pub direction: Option<String>,
    /// Second endpoint of a coupling path.
    pub coupling1: Option<Vec<Vec<CoefficientDescriptor>>>,
    /// Perturbation direction for eigenvalue derivatives.
    pub direction_field: Option<Vec<Vec<CoefficientDescriptor>>>,
}

/// A parsed configuration file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub species: usize,
    pub cell: PeriodicCell,
    pub diffusion: Vec<CoefficientDescriptor>,
    pub advection: Vec<CoefficientDescriptor>,
    pub coupling: Vec<Vec<CoefficientDescriptor>>,
    #[serde(default)]
    pub reducible: bool,
    #[serde(default = "one")]
    pub time_scale: f64,
    #[serde(default)]
    pub numerics: NumericsSection,
    pub decomposition: Option<DecompositionSection>,
    pub mutation: Option<MutationSection>,
    #[serde(default)]
    pub scan: ScanSection,
    /// Free-form parameters of an acceptance criterion.
    pub criterion: Option<toml::Table>,
}

fn one() -> f64 {
    1.0
}

pub fn parse_config(text: &str) -> Result<Config> {
    toml::from_str(text).map_err(|e| Error::Schema(e.to_string().trim().replace('\n', " ")))
}

pub fn load_config(path: &Path) -> Result<Config> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

fn sample_matrix(desc: &[Vec<CoefficientDescriptor>], n: usize, cell: &PeriodicCell, what: &str) -> Result<MatrixField> {
    if desc.len() != n || desc.iter().any(|r| r.len() != n) {
        return Err(Error::Schema(format!("{what} must be {n}x{n}")));
    }
    let entries = desc.iter().map(|r| r.iter().map(|d| sample(d, cell)).collect::<Result<Vec<_>>>()).collect::<Result<Vec<_>>>()?;
    Ok(MatrixField::from_entries(&entries))
}

fn sample_vec(desc: &[CoefficientDescriptor], n: usize, cell: &PeriodicCell, what: &str) -> Result<Vec<crate::matrixkit::ScalarField>> {
    if desc.len() != n {
        return Err(Error::Schema(format!("{what} needs {n} entries")));
    }
    desc.iter().map(|d| sample(d, cell)).collect()
}

impl Config {
    pub fn spec(&self) -> SystemSpec {
        SystemSpec {
            species: self.species,
            cell: self.cell,
            diffusion: self.diffusion.clone(),
            advection: self.advection.clone(),
            coupling: self.coupling.clone(),
            reducible: self.reducible,
            time_scale: self.time_scale,
        }
    }

    /// Grid overrides from the command line; the operator itself is fixed by the file.
    pub fn with_grid(mut self, nt: Option<usize>, nx: Option<usize>) -> Self {
        if let Some(v) = nt {
            self.cell.nt = v;
        }
        if let Some(v) = nx {
            self.cell.nx = v;
        }
        self
    }

    pub fn system(&self) -> Result<System> {
        self.spec().build()
    }

    pub fn eigen_options(&self) -> EigenOptions {
        self.numerics.apply(EigenOptions::default())
    }

    pub fn decomposition(&self) -> Result<Option<MutationDecomposition>> {
        let Some(d) = &self.decomposition else { return Ok(None) };
        let n = self.species;
        Ok(Some(MutationDecomposition {
            r: sample_vec(&d.r, n, &self.cell, "decomposition.r")?,
            mu: sample_vec(&d.mu, n, &self.cell, "decomposition.mu")?,
            s: sample_matrix(&d.s, n, &self.cell, "decomposition.S")?,
        }))
    }

    pub fn mutation_template(&self) -> Result<Option<(crate::optimize::MutationTemplate, Objective)>> {
        let Some(m) = &self.mutation else { return Ok(None) };
        let n = self.species;
        let partition = if m.partition.is_empty() { vec![PartitionCell::whole(&self.cell)] } else { m.partition.clone() };
        Ok(Some((
            crate::optimize::MutationTemplate {
                r: sample_vec(&m.r, n, &self.cell, "mutation.r")?,
                mu: sample_vec(&m.mu, n, &self.cell, "mutation.mu")?,
                partition,
            },
            m.objective,
        )))
    }

    pub fn path_endpoint(&self) -> Result<Option<MatrixField>> {
        self.scan.coupling1.as_ref().map(|c| sample_matrix(c, self.species, &self.cell, "scan.coupling1")).transpose()
    }

    pub fn direction_field(&self) -> Result<Option<MatrixField>> {
        self.scan.direction_field.as_ref().map(|c| sample_matrix(c, self.species, &self.cell, "scan.direction_field")).transpose()
    }

    pub fn criterion_f64(&self, key: &str) -> Option<f64> {
        self.criterion.as_ref()?.get(key).and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    }

    pub fn criterion_list(&self, key: &str) -> Option<Vec<f64>> {
        let arr = self.criterion.as_ref()?.get(key)?.as_array()?;
        arr.iter().map(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64))).collect()
    }
}
