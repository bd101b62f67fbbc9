//! Linear-inversion mitigation: measure the response to every basis state,
//! then solve `Λ x = p̂`, clip negatives and renormalize.

use std::path::Path;

use nalgebra::{DMatrix, DVector, LU};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::probdist::ProbDist;
use crate::rng;
use crate::sig17;
use crate::simulator::{AngleVector, Executor};

/// Condition numbers above this are logged.
pub const CONDITION_WARN: f64 = 1e8;
/// Condition numbers above this are treated as singular.
pub const CONDITION_SINGULAR: f64 = 1e13;

/// Exact inverse-based condition number up to this dimension; a randomized
/// lower bound beyond it.
const EXACT_CONDITION_DIM: usize = 1024;

/// `2^n × 2^n` matrix whose column `t` is the measured response to basis
/// state `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationMatrix {
    pub n: usize,
    pub lambda: DMatrix<f64>,
}

/// Runs the `2^n` basis-state circuits.
pub fn calibrate<E: Executor + ?Sized>(executor: &E, n: usize, shots: u64) -> Result<CalibrationMatrix> {
    if executor.qubit_count() != n {
        return Err(Error::Argument(format!(
            "executor has {} qubits, calibration requested {n}",
            executor.qubit_count()
        )));
    }
    let dim = 1usize << n;
    let mut lambda = DMatrix::zeros(dim, dim);
    for t in 0..dim {
        let col = executor.execute(&AngleVector::basis_state(t, n), shots, t as u64)?;
        lambda.column_mut(t).copy_from_slice(col.values());
    }
    Ok(CalibrationMatrix { n, lambda })
}

impl CalibrationMatrix {
    pub fn new(n: usize, lambda: DMatrix<f64>) -> Result<Self> {
        let dim = 1usize << n;
        if lambda.nrows() != dim || lambda.ncols() != dim {
            return Err(Error::Argument(format!(
                "calibration matrix is {}x{}, expected {dim}x{dim}",
                lambda.nrows(),
                lambda.ncols()
            )));
        }
        for (t, col) in lambda.column_iter().enumerate() {
            let s: f64 = col.iter().sum();
            if col.iter().any(|v| *v < 0.0 || !v.is_finite()) || (s - 1.0).abs() > 1e-9 {
                return Err(Error::Argument(format!("column {t} is not a distribution")));
            }
        }
        Ok(Self { n, lambda })
    }

    pub fn factorize(&self) -> Result<LinearInverter> {
        LinearInverter::new(self)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CalibrationFile {
            n: self.n,
            values: self.lambda.transpose().as_slice().to_vec(),
        };
        let text = serde_json::to_string(&file).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: CalibrationFile = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let dim = 1usize << file.n;
        if file.values.len() != dim * dim {
            return Err(Error::Validation {
                path: path.into(),
                message: format!("{} values for n = {}", file.values.len(), file.n),
            });
        }
        Self::new(file.n, DMatrix::from_row_slice(dim, dim, &file.values))
    }
}

/// Row-major on-disk form.
#[derive(Debug, Serialize, Deserialize)]
struct CalibrationFile {
    n: usize,
    #[serde(serialize_with = "sig17::vec")]
    values: Vec<f64>,
}

/// LU factorization (partial pivoting) of a calibration matrix, reused
/// across many mitigations.
pub struct LinearInverter {
    n: usize,
    lu: LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    condition: f64,
}

impl LinearInverter {
    pub fn new(cal: &CalibrationMatrix) -> Result<Self> {
        let a = &cal.lambda;
        let lu = LU::new(a.clone());
        if !lu.is_invertible() {
            return Err(Error::Conditioning {
                condition: f64::INFINITY,
            });
        }
        let condition = condition_1norm(a, &lu);
        if condition.is_nan() || condition > CONDITION_SINGULAR {
            return Err(Error::Conditioning { condition });
        }
        if condition > CONDITION_WARN {
            log::warn!("calibration matrix condition estimate {condition:e}");
        }
        Ok(Self {
            n: cal.n,
            lu,
            condition,
        })
    }

    /// 1-norm condition number (exact for small matrices, a lower bound
    /// otherwise).
    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn mitigate(&self, noisy: &ProbDist) -> Result<ProbDist> {
        if noisy.width() != self.n {
            return Err(Error::Argument(format!(
                "distribution width {} does not match calibration width {}",
                noisy.width(),
                self.n
            )));
        }
        let b = DVector::from_column_slice(noisy.values());
        let x = self
            .lu
            .solve(&b)
            .ok_or(Error::Conditioning { condition: self.condition })?;
        let clipped = x.iter().filter(|v| **v < 0.0).count();
        if clipped > 0 {
            log::debug!("linear inversion clipped {clipped} negative entries");
        }
        let values: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
        ProbDist::normalized(self.n, values)
    }
}

/// Solves, clips and renormalizes in one call.
pub fn li_mitigate(cal: &CalibrationMatrix, noisy: &ProbDist) -> Result<ProbDist> {
    cal.factorize()?.mitigate(noisy)
}

fn norm1(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn condition_1norm(a: &DMatrix<f64>, lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> f64 {
    let dim = a.nrows();
    if dim <= EXACT_CONDITION_DIM {
        return match lu.try_inverse() {
            Some(inv) => norm1(a) * norm1(&inv),
            None => f64::INFINITY,
        };
    }
    // ‖A⁻¹‖₁ ≥ ‖A⁻¹y‖₁ / ‖y‖₁ for any y; take the best of a few sign vectors
    let mut r = rng::stream(0, "condition-estimate", 0);
    let mut best = 0.0f64;
    for _ in 0..4 {
        let y = DVector::from_fn(dim, |_, _| if r.random::<bool>() { 1.0 } else { -1.0 });
        match lu.solve(&y) {
            Some(x) => best = best.max(x.iter().map(|v| v.abs()).sum::<f64>() / dim as f64),
            None => return f64::INFINITY,
        }
    }
    norm1(a) * best
}
