use crate::error::{check_finite, Error, Result};

/// Dense row-major tensor of `f64` values.
///
/// Every constructor and public kernel rejects NaN and infinities, so a
/// published tensor is always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Shape(format!(
                "dimensions must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            )));
        }
        check_finite(&data, "tensor data")?;
        Ok(Tensor { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
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

    /// Size of the innermost dimension.
    pub fn cols(&self) -> usize {
        *self
            .shape
            .last()
            .expect("tensor has at least one dimension")
    }

    /// Number of innermost rows, i.e. the product of all leading dimensions.
    pub fn rows(&self) -> usize {
        self.data.len() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Builds a tensor without re-checking finiteness. Kernels whose outputs
    /// are finite by construction use this.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn checked(
        shape: Vec<usize>,
        data: Vec<f64>,
        context: &'static str,
    ) -> Result<Self> {
        check_finite(&data, context)?;
        Ok(Tensor { shape, data })
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data.clone())
    }

    /// Transpose of a matrix; higher-rank tensors are viewed as `rows × cols`.
    pub fn transpose(&self) -> Self {
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; self.data.len()];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_parts(vec![c, r], out)
    }

    /// Copies the `width`-column slab starting at `col` out of every row.
    pub fn column_slice(
        &self,
        rows: std::ops::Range<usize>,
        col: usize,
        width: usize,
    ) -> Result<Self> {
        let c = self.cols();
        if col + width > c || rows.end > self.rows() || rows.is_empty() || width == 0 {
            return Err(Error::Shape(format!(
                "slice rows {rows:?} cols {col}..{} out of {}x{c}",
                col + width,
                self.rows()
            )));
        }
        let mut out = Vec::with_capacity(rows.len() * width);
        for r in rows.clone() {
            out.extend_from_slice(&self.data[r * c + col..r * c + col + width]);
        }
        Ok(Tensor::from_parts(vec![rows.len(), width], out))
    }

    /// Adds `src` into the slab of `self` starting at (`row`, `col`).
    pub fn add_into_slice(&mut self, row: usize, col: usize, src: &Tensor) -> Result<()> {
        let c = self.cols();
        if row + src.rows() > self.rows() || col + src.cols() > c {
            return Err(Error::Shape(format!(
                "slab {}x{} at ({row},{col}) exceeds {}x{c}",
                src.rows(),
                src.cols(),
                self.rows()
            )));
        }
        for r in 0..src.rows() {
            let dst = &mut self.data[(row + r) * c + col..(row + r) * c + col + src.cols()];
            for (d, s) in dst.iter_mut().zip(src.row(r)) {
                *d += s;
            }
        }
        Ok(())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}
