use ndarray::Array2;

use crate::error::{Error, Result};

/// Per-dimension affine map of `[min, max]` onto `[−1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    pub fn new(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() || min.is_empty() {
            return Err(Error::Contract("normalizer bounds must be non-empty and equally long".into()));
        }
        if min.iter().chain(&max).any(|v| !v.is_finite()) || min.iter().zip(&max).any(|(a, b)| a > b) {
            return Err(Error::Contract("normalizer bounds must be finite with min <= max".into()));
        }
        Ok(Self { min, max })
    }

    /// Bounds over every row of every chunk.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut min: Vec<f64> = Vec::new();
        let mut max: Vec<f64> = Vec::new();
        for row in rows {
            if min.is_empty() {
                min = row.to_vec();
                max = row.to_vec();
            } else if row.len() != min.len() {
                return Err(Error::Contract("rows of different widths".into()));
            }
            for (j, v) in row.iter().enumerate() {
                min[j] = min[j].min(*v);
                max[j] = max[j].max(*v);
            }
        }
        Self::new(min, max)
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn is_degenerate(&self, j: usize) -> bool {
        self.max[j] == self.min[j]
    }

    /// Half-range `∂a/∂a_norm`; zero on degenerate dimensions.
    pub fn scale(&self, j: usize) -> f64 {
        (self.max[j] - self.min[j]) / 2.0
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.dim() {
            return Err(Error::Contract(format!("vector of length {len}, normalizer has {}", self.dim())));
        }
        Ok(())
    }

    /// Normalized vector and whether any degenerate dimension was mapped
    /// to 0.
    pub fn normalize(&self, a: &[f64]) -> Result<(Vec<f64>, bool)> {
        self.check(a.len())?;
        let mut flagged = false;
        let out = (0..a.len())
            .map(|j| {
                if self.is_degenerate(j) {
                    flagged = true;
                    0.0
                } else {
                    2.0 * (a[j] - self.min[j]) / (self.max[j] - self.min[j]) - 1.0
                }
            })
            .collect();
        if flagged {
            log::warn!("degenerate normalizer dimension mapped to 0");
        }
        Ok((out, flagged))
    }

    pub fn denormalize(&self, a: &[f64]) -> Result<Vec<f64>> {
        self.check(a.len())?;
        Ok((0..a.len())
            .map(|j| self.min[j] + (a[j] + 1.0) * self.scale(j))
            .collect())
    }

    pub fn normalize_chunk(&self, chunk: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(chunk.ncols())?;
        let mut out = chunk.clone();
        for mut row in out.rows_mut() {
            let (n, _) = self.normalize(row.as_slice().unwrap())?;
            row.assign(&ndarray::ArrayView1::from(&n));
        }
        Ok(out)
    }

    pub fn denormalize_chunk(&self, chunk: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(chunk.ncols())?;
        let mut out = chunk.clone();
        for mut row in out.rows_mut() {
            let d = self.denormalize(row.as_slice().unwrap())?;
            row.assign(&ndarray::ArrayView1::from(&d));
        }
        Ok(out)
    }

    pub fn to_meta(&self) -> String {
        let f = |v: &[f64]| v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(",");
        format!("{};{}", f(&self.min), f(&self.max))
    }

    pub fn from_meta(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad normalizer `{s}`"));
        let (a, b) = s.split_once(';').ok_or_else(bad)?;
        let p = |t: &str| -> Result<Vec<f64>> { t.split(',').map(|x| x.parse().map_err(|_| bad())).collect() };
        Self::new(p(a)?, p(b)?)
    }
}
