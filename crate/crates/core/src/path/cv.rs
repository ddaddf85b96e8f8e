use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Weighting `A` between the denoising and target score identities.
///
/// `A = I` is pure DSI, `A = 0` pure TSI and `A = (1 - lambda) I` the mixed
/// identity.
#[derive(Clone, Debug, PartialEq)]
pub enum CvSchedule {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Matrix(DMatrix<f64>),
}

impl CvSchedule {
    /// Scalar weight clipped to `[0, 1]`.
    pub fn scalar(alpha: f64) -> Self {
        CvSchedule::Scalar(clip01(alpha))
    }

    /// Diagonal weights, each clipped to `[0, 1]`.
    pub fn diagonal(a: Vec<f64>) -> Self {
        CvSchedule::Diagonal(a.into_iter().map(clip01).collect())
    }

    pub fn matrix(a: DMatrix<f64>) -> Self {
        CvSchedule::Matrix(a)
    }

    pub fn dsi() -> Self {
        CvSchedule::Scalar(1.0)
    }

    pub fn tsi() -> Self {
        CvSchedule::Scalar(0.0)
    }

    pub fn msi(lambda: f64) -> Self {
        CvSchedule::scalar(1.0 - lambda)
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        let got = match self {
            CvSchedule::Scalar(_) => return Ok(()),
            CvSchedule::Diagonal(a) => a.len(),
            CvSchedule::Matrix(m) => {
                if m.nrows() != m.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: m.nrows(),
                        got: m.ncols(),
                    });
                }
                m.nrows()
            }
        };
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
        Ok(())
    }

    /// Dense `d x d` representation.
    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            CvSchedule::Scalar(a) => DMatrix::identity(d, d) * *a,
            CvSchedule::Diagonal(a) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(a)),
            CvSchedule::Matrix(m) => m.clone(),
        }
    }

    /// `A s1 + (I - A) s2`.
    pub fn apply(&self, s1: &[f64], s2: &[f64]) -> Vec<f64> {
        let mut out = s2.to_vec();
        let mut tmp = s1.to_vec();
        self.blend(&mut tmp, &mut out);
        out
    }

    /// In place: `out <- out + A (s1 - out)`. `s1` is used as scratch.
    pub fn blend(&self, s1: &mut [f64], out: &mut [f64]) {
        match self {
            CvSchedule::Scalar(a) => {
                let a = *a;
                for (o, s) in out.iter_mut().zip(s1.iter()) {
                    *o += a * (s - *o);
                }
            }
            CvSchedule::Diagonal(a) => {
                for ((o, s), ai) in out.iter_mut().zip(s1.iter()).zip(a) {
                    *o += ai * (s - *o);
                }
            }
            CvSchedule::Matrix(m) => {
                let d = out.len();
                for (s, o) in s1.iter_mut().zip(out.iter()) {
                    *s -= o;
                }
                for i in 0..d {
                    let mut acc = 0.0;
                    for j in 0..d {
                        acc += m[(i, j)] * s1[j];
                    }
                    out[i] += acc;
                }
            }
        }
    }
}

fn clip01(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}
