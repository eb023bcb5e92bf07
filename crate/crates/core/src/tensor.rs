//! Dense N-way tensors and their matricizations.
//!
//! Entries are stored column-major in mode order: the first index varies
//! fastest. With that layout the prefix matricization `X_[k]` (modes `1..=k`
//! as rows, the rest as columns) is a plain reshape of the buffer, and the
//! mode-n unfolding needs one permuted copy for `n > 1`.
//!
//! Mode numbers and prefix split points are 1-based, element indices are
//! 0-based.

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Which matricization produced a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    /// Mode-n unfolding `X_(n)`, `1 <= n <= N`.
    ModeN(usize),
    /// Mode-(1..k) matricization `X_[k]`, `1 <= k <= N-1`.
    Prefix(usize),
}

impl Split {
    /// Checks the split against a shape and returns the matrix dimensions.
    pub fn dims(&self, shape: &[usize]) -> Result<(usize, usize)> {
        let order = shape.len();
        let total: usize = shape.iter().product();
        match *self {
            Split::ModeN(n) => {
                if n == 0 || n > order {
                    return Err(Error::arg(format!(
                        "mode {n} out of range for an order-{order} tensor"
                    )));
                }
                let rows = shape[n - 1];
                Ok((rows, total / rows))
            }
            Split::Prefix(k) => {
                if k == 0 || k >= order {
                    return Err(Error::arg(format!(
                        "prefix split {k} out of range 1..={} for an order-{order} tensor",
                        order.saturating_sub(1)
                    )));
                }
                let rows: usize = shape[..k].iter().product();
                Ok((rows, total / rows))
            }
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::ModeN(n) => write!(f, "mode-{n}"),
            Split::Prefix(k) => write!(f, "prefix-{k}"),
        }
    }
}

/// A matricized tensor together with what is needed to fold it back.
#[derive(Debug, Clone, PartialEq)]
pub struct MatricizedView {
    pub matrix: DMatrix<f64>,
    pub origin_shape: Vec<usize>,
    pub split: Split,
}

impl MatricizedView {
    pub fn new(matrix: DMatrix<f64>, origin_shape: Vec<usize>, split: Split) -> Result<Self> {
        validate_shape(&origin_shape)?;
        let (rows, cols) = split.dims(&origin_shape)?;
        if matrix.shape() != (rows, cols) {
            return Err(Error::arg(format!(
                "{split} view of shape {origin_shape:?} must be {rows}x{cols}, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self {
            matrix,
            origin_shape,
            split,
        })
    }

    /// Inverse of the unfolding that produced this view.
    pub fn fold(self) -> Result<DenseTensor> {
        fold_matrix(&self.matrix, &self.origin_shape, self.split)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::arg("tensor order must be at least 1"));
    }
    if shape.contains(&0) {
        return Err(Error::arg(format!("zero-sized mode in shape {shape:?}")));
    }
    Ok(())
}

/// Splits the shape around mode `n` (1-based) into
/// (product of earlier modes, I_n, product of later modes).
fn around_mode(shape: &[usize], n: usize) -> (usize, usize, usize) {
    let before: usize = shape[..n - 1].iter().product();
    let after: usize = shape[n..].iter().product();
    (before, shape[n - 1], after)
}

/// Folds `matrix` back into a tensor of `shape`, inverting `split`.
pub fn fold_matrix(matrix: &DMatrix<f64>, shape: &[usize], split: Split) -> Result<DenseTensor> {
    validate_shape(shape)?;
    let (rows, cols) = split.dims(shape)?;
    if matrix.shape() != (rows, cols) {
        return Err(Error::arg(format!(
            "cannot fold a {}x{} matrix as {split} of {shape:?} (expected {rows}x{cols})",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let data = match split {
        Split::Prefix(_) => matrix.as_slice().to_vec(),
        Split::ModeN(n) => {
            let (before, dim, after) = around_mode(shape, n);
            let src = matrix.as_slice();
            let mut out = vec![0.0; src.len()];
            // matrix (i, a + before*b) <- tensor (a, i, b)
            for b in 0..after {
                for i in 0..dim {
                    let dst = &mut out[before * (i + dim * b)..before * (i + dim * b + 1)];
                    for (a, d) in dst.iter_mut().enumerate() {
                        *d = src[i + dim * (a + before * b)];
                    }
                }
            }
            out
        }
    };
    DenseTensor::new(shape.to_vec(), data)
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::arg(format!(
                "shape {shape:?} holds {expected} entries but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        validate_shape(shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn filled(shape: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        t.data.fill(value);
        Ok(t)
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in storage order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; shape.len()];
        for v in t.data.iter_mut() {
            *v = f(&idx);
            increment(&mut idx, shape);
        }
        Ok(t)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear storage offset of a 0-based multi-index.
    pub fn linear_index(&self, idx: &[usize]) -> Result<usize> {
        linear_index(&self.shape, idx)
    }

    /// 0-based multi-index of a storage offset.
    pub fn multi_index(&self, offset: usize) -> Vec<usize> {
        multi_index(&self.shape, offset)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.linear_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let i = self.linear_index(idx)?;
        self.data[i] = value;
        Ok(())
    }

    /// Reinterprets the buffer under a new shape with the same entry count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    /// Reorders modes: output mode `m` is input mode `perm[m]` (0-based).
    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let order = self.order();
        let mut seen = vec![false; order];
        if perm.len() != order || perm.iter().any(|&p| p >= order || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::arg(format!(
                "{perm:?} is not a permutation of 0..{order}"
            )));
        }
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut idx = vec![0usize; order];
        for _ in 0..self.len() {
            let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
            out.push(self.data[off]);
            increment(&mut idx, &new_shape);
        }
        Self::new(new_shape, out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn unfold(&self, split: Split) -> Result<MatricizedView> {
        let (rows, cols) = split.dims(&self.shape)?;
        let data = match split {
            Split::Prefix(_) => self.data.clone(),
            Split::ModeN(n) => {
                let (before, dim, after) = around_mode(&self.shape, n);
                let mut out = vec![0.0; self.data.len()];
                for b in 0..after {
                    for i in 0..dim {
                        let src = &self.data[before * (i + dim * b)..before * (i + dim * b + 1)];
                        for (a, &s) in src.iter().enumerate() {
                            out[i + dim * (a + before * b)] = s;
                        }
                    }
                }
                out
            }
        };
        Ok(MatricizedView {
            matrix: DMatrix::from_vec(rows, cols, data),
            origin_shape: self.shape.clone(),
            split,
        })
    }

    /// Mode-n unfolding `X_(n)`; element `(i_1..i_N)` lands in row `i_n` and
    /// the column given by the remaining indices, earliest mode fastest.
    pub fn unfold_mode_n(&self, n: usize) -> Result<MatricizedView> {
        self.unfold(Split::ModeN(n))
    }

    /// Mode-(1..k) matricization `X_[k]`.
    pub fn unfold_prefix(&self, k: usize) -> Result<MatricizedView> {
        self.unfold(Split::Prefix(k))
    }

    /// Borrowed `X_[k]` without copying.
    pub fn prefix_view(&self, k: usize) -> Result<DMatrixView<'_, f64>> {
        let (rows, cols) = Split::Prefix(k).dims(&self.shape)?;
        Ok(DMatrixView::from_slice(&self.data, rows, cols))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        if self.shape != other.shape {
            return Err(Error::arg(format!(
                "shape mismatch: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, c: f64) -> DenseTensor {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &d in shape {
        s.push(acc);
        acc *= d;
    }
    s
}

pub(crate) fn linear_index(shape: &[usize], idx: &[usize]) -> Result<usize> {
    if idx.len() != shape.len() {
        return Err(Error::arg(format!(
            "index {idx:?} has wrong order for shape {shape:?}"
        )));
    }
    let mut off = 0;
    let mut stride = 1;
    for (&i, &d) in idx.iter().zip(shape) {
        if i >= d {
            return Err(Error::arg(format!("index {idx:?} out of bounds for {shape:?}")));
        }
        off += i * stride;
        stride *= d;
    }
    Ok(off)
}

pub(crate) fn multi_index(shape: &[usize], mut offset: usize) -> Vec<usize> {
    shape
        .iter()
        .map(|&d| {
            let i = offset % d;
            offset /= d;
            i
        })
        .collect()
}

/// Advances a column-major multi-index odometer.
pub(crate) fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &d) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < d {
            return;
        }
        *i = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arange(shape: &[usize]) -> DenseTensor {
        let n: usize = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..n).map(|x| x as f64).collect()).unwrap()
    }

    /// Column of element `idx` (1-based) in the mode-n unfolding, evaluated
    /// term by term: j = 1 + sum_{k != n} (i_k - 1) J_k, J_k = prod_{m<k, m!=n} I_m.
    fn column_by_formula(shape: &[usize], idx1: &[usize], n: usize) -> usize {
        let mut j = 1;
        for k in 1..=shape.len() {
            if k == n {
                continue;
            }
            let jk: usize = (1..k).filter(|&m| m != n).map(|m| shape[m - 1]).product();
            j += (idx1[k - 1] - 1) * jk;
        }
        j
    }

    #[test]
    fn mode1_column_of_last_element() {
        assert_eq!(column_by_formula(&[2, 3, 4], &[2, 3, 4], 1), 12);
        let t = arange(&[2, 3, 4]);
        let v = t.unfold_mode_n(1).unwrap();
        assert_eq!(v.matrix.shape(), (2, 12));
        // 1-based (2,3,4) is the last entry, 0-based offset 23
        assert_eq!(v.matrix[(1, 11)], 23.0);
    }

    #[test]
    fn mode_n_matches_index_formula_exhaustively() {
        for shape in [vec![2, 3, 4], vec![3, 1, 2, 2], vec![5], vec![2, 2, 2, 3, 2]] {
            let t = arange(&shape);
            for n in 1..=shape.len() {
                let v = t.unfold_mode_n(n).unwrap();
                assert_eq!(v.matrix.nrows(), shape[n - 1]);
                for off in 0..t.len() {
                    let idx1: Vec<usize> = t.multi_index(off).iter().map(|i| i + 1).collect();
                    let j = column_by_formula(&shape, &idx1, n);
                    assert_eq!(v.matrix[(idx1[n - 1] - 1, j - 1)], t.data()[off]);
                }
            }
        }
    }

    #[test]
    fn vector_unfolds_to_column() {
        let t = arange(&[5]);
        let v = t.unfold_mode_n(1).unwrap();
        assert_eq!(v.matrix.shape(), (5, 1));
        assert_eq!(v.matrix.as_slice(), t.data());
    }

    #[test]
    fn matrix_mode2_is_transpose_of_mode1() {
        let t = DenseTensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m1 = t.unfold_mode_n(1).unwrap().matrix;
        let m2 = t.unfold_mode_n(2).unwrap().matrix;
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m2[(i, j)], m1[(j, i)]);
                assert_eq!(m1[(i, j)], t.get(&[i, j]).unwrap());
            }
        }
    }

    #[test]
    fn prefix_is_a_reshape() {
        let t = arange(&[2, 3, 4]);
        let v = t.unfold_prefix(2).unwrap();
        assert_eq!(v.matrix.shape(), (6, 4));
        assert_eq!(v.matrix.as_slice(), t.data());
        let w = arange(&[4, 4, 4, 3]).unfold_prefix(2).unwrap();
        assert_eq!(w.matrix.shape(), (16, 12));
        assert_eq!(t.prefix_view(2).unwrap(), v.matrix);
    }

    #[test]
    fn bad_splits_rejected() {
        let t = arange(&[2, 3, 4]);
        assert!(t.unfold_mode_n(0).is_err());
        assert!(t.unfold_mode_n(4).is_err());
        assert!(t.unfold_prefix(0).is_err());
        assert!(t.unfold_prefix(3).is_err());
        let bad = MatricizedView {
            matrix: DMatrix::zeros(4, 6),
            origin_shape: vec![2, 3, 4],
            split: Split::Prefix(2),
        };
        assert!(bad.fold().is_err());
        assert!(MatricizedView::new(DMatrix::zeros(4, 6), vec![2, 3, 4], Split::Prefix(2)).is_err());
    }

    #[test]
    fn zero_view_folds_to_zero_tensor() {
        let v = MatricizedView::new(DMatrix::zeros(6, 4), vec![2, 3, 4], Split::Prefix(2)).unwrap();
        assert_eq!(v.fold().unwrap(), DenseTensor::zeros(&[2, 3, 4]).unwrap());
    }

    #[test]
    fn construction_invariants() {
        assert!(DenseTensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(DenseTensor::new(vec![], vec![]).is_err());
        assert!(DenseTensor::zeros(&[2, 0]).is_err());
        assert_eq!(DenseTensor::filled(&[2, 2], 1.0).unwrap().frobenius_norm(), 2.0);
        assert_eq!(DenseTensor::zeros(&[3, 3]).unwrap().frobenius_norm(), 0.0);
    }

    #[test]
    fn permute_matches_index_swap() {
        let t = arange(&[2, 3, 4]);
        let p = t.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        for off in 0..t.len() {
            let i = t.multi_index(off);
            assert_eq!(p.get(&[i[2], i[0], i[1]]).unwrap(), t.data()[off]);
        }
        assert!(t.permute(&[0, 0, 1]).is_err());
    }

    fn small_tensor() -> impl Strategy<Value = DenseTensor> {
        prop::collection::vec(1usize..4, 1..=6).prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop::collection::vec(-10.0f64..10.0, n)
                .prop_map(move |data| DenseTensor::new(shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn fold_inverts_every_unfolding(t in small_tensor()) {
            let norm = t.frobenius_norm();
            for n in 1..=t.order() {
                let v = t.unfold_mode_n(n).unwrap();
                prop_assert!((v.matrix.norm() - norm).abs() <= 1e-12 * (1.0 + norm));
                prop_assert_eq!(&v.fold().unwrap(), &t);
            }
            for k in 1..t.order() {
                let v = t.unfold_prefix(k).unwrap();
                prop_assert!((v.matrix.norm() - norm).abs() <= 1e-12 * (1.0 + norm));
                prop_assert_eq!(&v.fold().unwrap(), &t);
            }
        }

        #[test]
        fn norm_is_direct_sum_of_squares(t in small_tensor()) {
            let mut acc = 0.0;
            for off in 0..t.len() {
                let x = t.get(&t.multi_index(off)).unwrap();
                acc += x * x;
            }
            prop_assert!((t.frobenius_norm() - acc.sqrt()).abs() <= 1e-12 * (1.0 + acc.sqrt()));
        }

        #[test]
        fn mode_n_matches_formula_on_random_shapes(t in small_tensor()) {
            let shape = t.shape().to_vec();
            for n in 1..=t.order() {
                let v = t.unfold_mode_n(n).unwrap();
                for off in 0..t.len() {
                    let idx1: Vec<usize> = t.multi_index(off).iter().map(|i| i + 1).collect();
                    let j = column_by_formula(&shape, &idx1, n);
                    prop_assert_eq!(v.matrix[(idx1[n - 1] - 1, j - 1)], t.data()[off]);
                }
            }
        }
    }
}
