//! Model file format.
//!
//! ```text
//! { "format": "caesn-model", "version": 1,
//!   "params": { "n_reservoir", "seed", "bias" as JSON integers/booleans;
//!               every float as a 16-digit hex bit pattern;
//!               "input_scaling": <packed> },
//!   "reynolds": <packed>,
//!   "w_in":  { "rows", "cols", "data": <packed, column-major> },
//!   "w":     { "rows", "cols", "row_ptr", "col_idx", "values": <packed> },
//!   "w_c":   { ... dense ... },
//!   "w_out": { ... dense ... } | null }
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{CsrMatrix, EsnModel, EsnParams};
use crate::dynsys::{ActionSet, N_MODES};
use crate::error::{Error, Result};
use crate::hexfloat;

pub const MODEL_FORMAT: &str = "caesn-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsRecord {
    n_reservoir: usize,
    #[serde(with = "hexfloat::scalar")]
    sigma_in: f64,
    #[serde(with = "hexfloat::scalar")]
    sigma_c: f64,
    #[serde(with = "hexfloat::scalar")]
    rho: f64,
    #[serde(with = "hexfloat::scalar")]
    ridge_lambda: f64,
    #[serde(with = "hexfloat::packed")]
    input_scaling: Vec<f64>,
    seed: u64,
    #[serde(with = "hexfloat::scalar")]
    esn_dt: f64,
    #[serde(with = "hexfloat::scalar")]
    density: f64,
    bias: bool,
    #[serde(with = "hexfloat::scalar")]
    divergence_bound: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DenseRecord {
    rows: usize,
    cols: usize,
    #[serde(with = "hexfloat::packed")]
    data: Vec<f64>,
}

impl DenseRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        DenseRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn into_matrix(self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Format("dense matrix data length mismatch".into()));
        }
        Ok(DMatrix::from_vec(self.rows, self.cols, self.data))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SparseRecord {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    #[serde(with = "hexfloat::packed")]
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelRecord {
    format: String,
    version: u32,
    params: ParamsRecord,
    #[serde(with = "hexfloat::packed")]
    reynolds: Vec<f64>,
    w_in: DenseRecord,
    w: SparseRecord,
    w_c: DenseRecord,
    w_out: Option<DenseRecord>,
}

impl EsnModel {
    pub fn to_json(&self) -> Result<String> {
        let p = &self.params;
        let rec = ModelRecord {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            params: ParamsRecord {
                n_reservoir: p.n_reservoir,
                sigma_in: p.sigma_in,
                sigma_c: p.sigma_c,
                rho: p.rho,
                ridge_lambda: p.ridge_lambda,
                input_scaling: p.input_scaling.to_vec(),
                seed: p.seed,
                esn_dt: p.esn_dt,
                density: p.density,
                bias: p.bias,
                divergence_bound: p.divergence_bound,
            },
            reynolds: self.reynolds.levels().to_vec(),
            w_in: DenseRecord::from_matrix(&self.w_in),
            w: SparseRecord {
                rows: self.w.shape().0,
                cols: self.w.shape().1,
                row_ptr: self.w.row_ptr().to_vec(),
                col_idx: self.w.col_idx().to_vec(),
                values: self.w.values().to_vec(),
            },
            w_c: DenseRecord::from_matrix(&self.w_c),
            w_out: self.w_out.as_ref().map(DenseRecord::from_matrix),
        };
        serde_json::to_string(&rec).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ModelRecord =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("model: {e}")))?;
        if rec.format != MODEL_FORMAT {
            return Err(Error::Format(format!("not a model file (format {:?})", rec.format)));
        }
        if rec.version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {}", rec.version)));
        }
        let p = rec.params;
        let input_scaling: [f64; N_MODES] = p
            .input_scaling
            .try_into()
            .map_err(|_| Error::Format("input_scaling must have 9 entries".into()))?;
        let params = EsnParams {
            n_reservoir: p.n_reservoir,
            sigma_in: p.sigma_in,
            sigma_c: p.sigma_c,
            rho: p.rho,
            ridge_lambda: p.ridge_lambda,
            input_scaling,
            seed: p.seed,
            esn_dt: p.esn_dt,
            density: p.density,
            bias: p.bias,
            divergence_bound: p.divergence_bound,
        };
        let w = CsrMatrix::new(rec.w.rows, rec.w.cols, rec.w.row_ptr, rec.w.col_idx, rec.w.values)?;
        EsnModel::from_parts(
            params,
            ActionSet::new(rec.reynolds)?,
            rec.w_in.into_matrix()?,
            w,
            rec.w_c.into_matrix()?,
            rec.w_out.map(DenseRecord::into_matrix).transpose()?,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
