//! Regression learners: ridge and gradient-boosted trees, plus the model
//! file container.

mod gbt;
mod matrix;
mod ridge;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gbt::{fit_gbt, GbtModel, GbtParams, TreeNode};
pub use matrix::DesignMatrix;
pub use ridge::{
    cv_select_lambda, default_lambda_grid, fit_ridge, fit_ridge_with, fold_assignment, log_grid,
    CvResult, RidgeModel, RidgeOptions, RidgeProblem,
};

use crate::error::{Error, Result};

pub const MODEL_FILE_VERSION: u32 = 1;
const MODEL_FILE_FORMAT: &str = "claimvec-model";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Ridge,
    Gbt,
}

impl LearnerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LearnerKind::Ridge => "ridge",
            LearnerKind::Gbt => "gbt",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ridge" => Ok(LearnerKind::Ridge),
            "gbt" => Ok(LearnerKind::Gbt),
            _ => Err(Error::Config(format!(
                "unknown learner `{s}` (expected ridge or gbt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedModel {
    Ridge(RidgeModel),
    Gbt(GbtModel),
}

impl FittedModel {
    pub fn kind(&self) -> LearnerKind {
        match self {
            FittedModel::Ridge(_) => LearnerKind::Ridge,
            FittedModel::Gbt(_) => LearnerKind::Gbt,
        }
    }

    pub fn col_names(&self) -> &[String] {
        match self {
            FittedModel::Ridge(m) => &m.col_names,
            FittedModel::Gbt(m) => &m.col_names,
        }
    }

    /// Columns are matched by name; any missing or unexpected column is an error.
    pub fn predict(&self, x: &DesignMatrix) -> Result<Vec<f64>> {
        let x = x.align_to(self.col_names())?;
        Ok(match self {
            FittedModel::Ridge(m) => m.predict_aligned(&x),
            FittedModel::Gbt(m) => m.predict_aligned(&x),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Out<'a> {
            format: &'static str,
            version: u32,
            model: &'a FittedModel,
        }
        Ok(serde_json::to_string(&Out {
            format: MODEL_FILE_FORMAT,
            version: MODEL_FILE_VERSION,
            model: self,
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Head {
            format: String,
            version: u32,
        }
        #[derive(Deserialize)]
        struct In {
            model: FittedModel,
        }
        let head: Head = serde_json::from_str(text)?;
        if head.format != MODEL_FILE_FORMAT {
            return Err(Error::Corrupt(format!(
                "not a model file (format `{}`)",
                head.format
            )));
        }
        if head.version != MODEL_FILE_VERSION {
            return Err(Error::VersionMismatch {
                found: format!("{MODEL_FILE_FORMAT}/{}", head.version),
                expected: format!("{MODEL_FILE_FORMAT}/{MODEL_FILE_VERSION}"),
            });
        }
        Ok(serde_json::from_str::<In>(text)?.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FittedModel::from_json(&text)
    }
}
