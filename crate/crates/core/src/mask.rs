use crate::error::{Error, Result};
use crate::tensor::{self, DenseTensor};

/// Observed index set `Omega` and the observed values `T_Omega` of a tensor
/// with a declared shape.
///
/// Indices are stored as sorted, unique linear (column-major) offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationMask {
    shape: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl ObservationMask {
    /// Builds a mask from linear offsets and aligned values.
    pub fn new(shape: Vec<usize>, indices: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        DenseTensor::zeros(&shape)?;
        if indices.len() != values.len() {
            return Err(Error::arg(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.is_empty() {
            return Err(Error::arg("observation mask is empty"));
        }
        let total: usize = shape.iter().product();
        let mut pairs: Vec<(usize, f64)> = indices.into_iter().zip(values).collect();
        pairs.sort_unstable_by_key(|p| p.0);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::arg("observation mask has duplicate indices"));
        }
        if pairs.last().is_some_and(|p| p.0 >= total) {
            return Err(Error::arg(format!("observed index out of bounds for {shape:?}")));
        }
        let (indices, values) = pairs.into_iter().unzip();
        Ok(Self {
            shape,
            indices,
            values,
        })
    }

    /// Mask over 0-based multi-indices.
    pub fn from_multi_indices(shape: Vec<usize>, idx: &[Vec<usize>], values: Vec<f64>) -> Result<Self> {
        let lin = idx
            .iter()
            .map(|i| tensor::linear_index(&shape, i))
            .collect::<Result<Vec<_>>>()?;
        Self::new(shape, lin, values)
    }

    /// Observes `t` at the given linear offsets.
    pub fn observe(t: &DenseTensor, indices: Vec<usize>) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(Error::arg(format!("observed offset {bad} out of bounds")));
        }
        let values = indices.iter().map(|&i| t.data()[i]).collect();
        Self::new(t.shape().to_vec(), indices, values)
    }

    /// Every entry of `t` observed.
    pub fn full(t: &DenseTensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            indices: (0..t.len()).collect(),
            values: t.data().to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `|Omega|`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn total(&self) -> usize {
        self.shape.iter().product()
    }

    /// `mr = 1 - |Omega| / prod(I_k)`.
    pub fn missing_ratio(&self) -> f64 {
        1.0 - self.len() as f64 / self.total() as f64
    }

    pub fn multi_indices(&self) -> impl Iterator<Item = Vec<usize>> + '_ {
        self.indices.iter().map(|&i| tensor::multi_index(&self.shape, i))
    }

    /// Dense membership flags in storage order.
    pub fn observed_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.total()];
        for &i in &self.indices {
            flags[i] = true;
        }
        flags
    }

    /// `||T_Omega||_F`.
    pub fn observed_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Tensor equal to `T` on `Omega` and `fill` elsewhere.
    pub fn filled(&self, fill: f64) -> DenseTensor {
        let mut t = DenseTensor::filled(&self.shape, fill).expect("mask shape is valid");
        self.write_into(&mut t);
        t
    }

    pub fn zero_filled(&self) -> DenseTensor {
        self.filled(0.0)
    }

    /// Resets the observed entries of `t` to `T_Omega`.
    pub fn write_into(&self, t: &mut DenseTensor) {
        let data = t.data_mut();
        for (&i, &v) in self.indices.iter().zip(&self.values) {
            data[i] = v;
        }
    }

    /// True when `t` agrees with `T_Omega` bit for bit.
    pub fn agrees_with(&self, t: &DenseTensor) -> bool {
        t.shape() == self.shape.as_slice()
            && self
                .indices
                .iter()
                .zip(&self.values)
                .all(|(&i, &v)| t.data()[i].to_bits() == v.to_bits())
    }

    /// Same index set with values replaced from `t`.
    pub fn with_values_from(&self, t: &DenseTensor) -> Result<Self> {
        if t.shape() != self.shape.as_slice() {
            return Err(Error::arg("shape mismatch"));
        }
        Ok(Self {
            shape: self.shape.clone(),
            indices: self.indices.clone(),
            values: self.indices.iter().map(|&i| t.data()[i]).collect(),
        })
    }
}
