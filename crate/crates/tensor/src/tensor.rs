use crate::error::{Result, TensorError};

/// A dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Row-major strides of a shape.
pub fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn strides(&self) -> Vec<usize> {
        contiguous_strides(&self.shape)
    }

    /// The element at a multi-index.
    pub fn get(&self, index: &[usize]) -> f64 {
        let offset: usize = index.iter().zip(self.strides()).map(|(i, s)| i * s).sum();
        self.data[offset]
    }

    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Permutes the axes: output axis `i` is input axis `perm[i]`.
    pub fn transposed(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.rank())?;
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = self.strides();
        let mapped: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut data = vec![0.0; self.data.len()];
        for_each_strided(&out_shape, &mapped, |i, j| data[i] = self.data[j]);
        Ok(Self {
            shape: out_shape,
            data,
        })
    }
}

pub(crate) fn check_permutation(perm: &[usize], rank: usize) -> Result<()> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(TensorError::ShapeMismatch(format!(
            "permutation {perm:?} for rank {rank}"
        )));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(TensorError::ShapeMismatch(format!("{perm:?} is not a permutation")));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Calls `f(i, j)` for every flat row-major index `i` of `shape`, where
/// `j = sum_k index_k * strides[k]`.
pub(crate) fn for_each_strided(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let n: usize = shape.iter().product();
    if n == 0 {
        return;
    }
    // Merge runs of axes that address memory like a single axis, so the
    // inner loop is as long as possible.
    let mut merged_shape: Vec<usize> = Vec::with_capacity(shape.len());
    let mut merged_strides: Vec<usize> = Vec::with_capacity(shape.len());
    for (&s, &st) in shape.iter().zip(strides) {
        if s == 1 {
            continue;
        }
        match (merged_shape.last_mut(), merged_strides.last_mut()) {
            (Some(ps), Some(pst)) if *pst == st * s => {
                *ps *= s;
                *pst = st;
            }
            _ => {
                merged_shape.push(s);
                merged_strides.push(st);
            }
        }
    }
    let (shape, strides) = (&merged_shape[..], &merged_strides[..]);
    let rank = shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let last = rank - 1;
    let (inner, inner_stride) = (shape[last], strides[last]);
    let mut index = vec![0usize; rank];
    let mut base = 0usize;
    let mut i = 0usize;
    loop {
        let mut j = base;
        for _ in 0..inner {
            f(i, j);
            i += 1;
            j += inner_stride;
        }
        // Advance the odometer over the outer axes.
        let mut axis = last;
        loop {
            if axis == 0 {
                return;
            }
            axis -= 1;
            index[axis] += 1;
            base += strides[axis];
            if index[axis] < shape[axis] {
                break;
            }
            base -= strides[axis] * shape[axis];
            index[axis] = 0;
        }
    }
}

/// Strides of `input` in the coordinates of `output`, zero along axes where
/// `input` has extent 1 and `output` does not.
pub(crate) fn broadcast_strides(input: &[usize], output: &[usize]) -> Result<Vec<usize>> {
    if input.len() != output.len() {
        return Err(TensorError::ShapeMismatch(format!(
            "cannot broadcast {input:?} to {output:?}: ranks differ"
        )));
    }
    let strides = contiguous_strides(input);
    input
        .iter()
        .zip(output)
        .zip(strides)
        .map(|((&i, &o), s)| {
            if i == o {
                Ok(s)
            } else if i == 1 {
                Ok(0)
            } else {
                Err(TensorError::ShapeMismatch(format!(
                    "cannot broadcast {input:?} to {output:?}"
                )))
            }
        })
        .collect()
}
