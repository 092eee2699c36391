//! Dense row-major tensors of rank 1..=3.

use crate::{Error, Result};

/// Contiguous `f64` buffer with a shape of rank 1, 2, or 3.
///
/// Row-major layout; rank-2 tensors are the workhorse (matrices, one row per
/// graph node or edge). Equality is exact bitwise equality of shape and data,
/// which the determinism tests rely on.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Self {
        assert!(
            !shape.is_empty() && shape.len() <= 3,
            "tensor rank must be 1..=3, got {shape:?}"
        );
        let want: usize = shape.iter().product();
        assert_eq!(data.len(), want, "buffer length {} != shape {shape:?}", data.len());
        Self { shape: shape.to_vec(), data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Self::new(&[1], vec![v])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// True for a single-element tensor of any rank.
    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn item(&self) -> f64 {
        assert!(self.is_scalar(), "item() on non-scalar tensor {:?}", self.shape);
        self.data[0]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Rows of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on rank-{} tensor", self.shape.len());
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on rank-{} tensor", self.shape.len());
        self.shape[1]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn check_same_shape(&self, other: &Tensor, ctx: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{ctx}: {:?} vs {:?}",
                self.shape, other.shape
            )))
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert!(self.same_shape(other), "add_assign shape {:?} vs {:?}", self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, c: f64) {
        for a in &mut self.data {
            *a *= c;
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(&self.shape, self.data.iter().map(|&v| f(v)).collect())
    }
}

/// `a @ b` for rank-2 tensors.
pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (k2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (aik, brow) in arow.iter().zip(b.data.chunks_exact(n)) {
            let aik = *aik;
            for (o, bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Tensor::new(&[m, n], out)
}

/// `a @ b^T`: gradient kernel for the right factor of a product.
pub(crate) fn matmul_nt(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (n, k2) = (b.shape[0], b.shape[1]);
    assert_eq!(k, k2, "matmul_nt inner dims {k} vs {k2}");
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (o, brow) in orow.iter_mut().zip(b.data.chunks_exact(k)) {
            *o = dot(arow, brow);
        }
    }
    Tensor::new(&[m, n], out)
}

/// `a^T @ b`: gradient kernel for the left factor of a product.
pub(crate) fn matmul_tn(a: &Tensor, b: &Tensor) -> Tensor {
    let (m, k) = (a.shape[0], a.shape[1]);
    let (m2, n) = (b.shape[0], b.shape[1]);
    assert_eq!(m, m2, "matmul_tn outer dims {m} vs {m2}");
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (l, ail) in arow.iter().enumerate() {
            let ail = *ail;
            let orow = &mut out[l * n..(l + 1) * n];
            for (o, bij) in orow.iter_mut().zip(brow) {
                *o += ail * bij;
            }
        }
    }
    Tensor::new(&[k, n], out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::new(&[3, 2], vec![7., 8., 9., 10., 11., 12.]);
        let c = matmul(&a, &b);
        assert_eq!(c.data(), &[58., 64., 139., 154.]);
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let a = Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 5., -6.]);
        let b = Tensor::new(&[4, 3], vec![7., 8., 9., 1., 2., 3., -1., 0., 2., 4., -4., 1.]);
        // a @ b^T
        let nt = matmul_nt(&a, &b);
        let bt = Tensor::new(&[3, 4], {
            let mut v = vec![0.0; 12];
            for i in 0..4 {
                for j in 0..3 {
                    v[j * 4 + i] = b.at(i, j);
                }
            }
            v
        });
        assert_eq!(nt.data(), matmul(&a, &bt).data());
        // a^T @ c
        let c = Tensor::new(&[2, 4], vec![1., 0., 2., -1., 3., 1., 0., 2.]);
        let tn = matmul_tn(&a, &c);
        let at = Tensor::new(&[3, 2], {
            let mut v = vec![0.0; 6];
            for i in 0..2 {
                for j in 0..3 {
                    v[j * 2 + i] = a.at(i, j);
                }
            }
            v
        });
        assert_eq!(tn.data(), matmul(&at, &c).data());
    }

    #[test]
    #[should_panic]
    fn matmul_dim_mismatch_panics() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let _ = matmul(&a, &b);
    }
}
