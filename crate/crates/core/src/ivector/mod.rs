//! GMM-UBM, Baum-Welch statistics, total-variability training and i-vector
//! extraction over MFCC frames.

mod gmm;
mod tv;

use nalgebra::{DMatrix, DVector};
use replayscope_autodiff::{Checkpoint, Tensor};

use crate::error::{Error, Result};

pub use gmm::{accumulate_stats, train_ubm, BwStats, GmmModel, UbmConfig, UbmReport};
pub use tv::{extract_ivector, extract_ivectors, train_tv, TvConfig, TvMatrix, TvReport};

fn matrix_tensor(m: &DMatrix<f64>) -> Tensor {
    // Row-major payload.
    Tensor::from_fn(&[m.nrows(), m.ncols()], |i| m[(i / m.ncols(), i % m.ncols())])
}

fn tensor_matrix(t: &Tensor) -> Result<DMatrix<f64>> {
    match *t.shape() {
        [r, c] => Ok(DMatrix::from_row_slice(r, c, t.data())),
        _ => Err(Error::Format(format!("expected a matrix, got shape {:?}", t.shape()))),
    }
}

/// Store the UBM and T matrix as named tensors in a checkpoint.
pub fn to_checkpoint(meta: impl Into<String>, ubm: &GmmModel, tv: &TvMatrix) -> Checkpoint {
    Checkpoint {
        meta: meta.into(),
        tensors: vec![
            ("ubm.weights".into(), Tensor::from_fn(&[ubm.weights.len()], |i| ubm.weights[i])),
            ("ubm.means".into(), matrix_tensor(&ubm.means)),
            ("ubm.variances".into(), matrix_tensor(&ubm.variances)),
            ("tv.t".into(), matrix_tensor(&tv.t)),
        ],
    }
}

/// Unit-sum slack for weights read back from a single-precision payload.
const F32_SIMPLEX_TOL: f64 = 1e-5;

pub fn from_checkpoint(ck: &Checkpoint) -> Result<(GmmModel, TvMatrix)> {
    let get = |name: &str| {
        ck.get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks {name}")))
    };
    let weights = DVector::from_column_slice(get("ubm.weights")?.data());
    let means = tensor_matrix(get("ubm.means")?)?;
    let variances = tensor_matrix(get("ubm.variances")?)?;
    let t = tensor_matrix(get("tv.t")?)?;
    // Weights are kept as stored so a reloaded model saves to the same bytes.
    let ubm = GmmModel::with_simplex_tolerance(weights, means, variances, F32_SIMPLEX_TOL)?;
    let tv = TvMatrix::new(t, &ubm)?;
    Ok((ubm, tv))
}
