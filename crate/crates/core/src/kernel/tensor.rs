use crate::error::{Error, Result};

/// Dense row-major f64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::invalid(format!(
                "tensor dims {dims:?} need {n} values, got {}",
                data.len()
            )));
        }
        let t = Self { dims, data };
        t.check_finite("tensor data")?;
        Ok(t)
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![0.0; n] }
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Self {
        let n = dims.iter().product();
        Self { dims, data: vec![value; n] }
    }

    pub fn from_fn(dims: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n = dims.iter().product();
        Self {
            dims,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Self { dims, data }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
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

    /// Size of the last axis (1 for a scalar).
    pub fn last_dim(&self) -> usize {
        self.dims.last().copied().unwrap_or(1)
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::invalid(format!("cannot reshape {:?} to {dims:?}", self.dims)));
        }
        Ok(Self { dims, data: self.data })
    }

    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.dims.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.dims) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<f64> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.expect_same_dims(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self::from_parts(self.dims.clone(), data))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        if self.dims != other.dims {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub(crate) fn expect_same_dims(&self, other: &Tensor, what: &str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::invalid(format!(
                "{what}: shape mismatch {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::Numeric(format!("{what}: non-finite value at flat index {i}"))),
            None => Ok(()),
        }
    }

    /// Concatenates tensors of equal trailing shape along axis 0.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        if first.rank() == 0 {
            return Err(Error::invalid("cannot concat scalars"));
        }
        let tail = &first.dims[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.rank() != first.rank() || &p.dims[1..] != tail {
                return Err(Error::invalid(format!(
                    "concat: shape mismatch {:?} vs {:?}",
                    first.dims, p.dims
                )));
            }
            lead += p.dims[0];
            data.extend_from_slice(&p.data);
        }
        let mut dims = vec![lead];
        dims.extend_from_slice(tail);
        Ok(Self::from_parts(dims, data))
    }

    /// Slice `i` along axis 0.
    pub fn index_axis0(&self, i: usize) -> Result<Tensor> {
        if self.rank() == 0 || i >= self.dims[0] {
            return Err(Error::invalid(format!("index {i} out of range for {:?}", self.dims)));
        }
        let inner: usize = self.dims[1..].iter().product();
        Ok(Self::from_parts(
            self.dims[1..].to_vec(),
            self.data[i * inner..(i + 1) * inner].to_vec(),
        ))
    }
}

/// In-place numerically stable softmax of each `row_len`-sized row.
pub fn softmax_rows(data: &mut [f64], row_len: usize) {
    for row in data.chunks_mut(row_len) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
