use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
///
/// Scalars use an empty shape, vectors `[n]`, matrices `[rows, cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(DenseTensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        DenseTensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn scalar(v: f64) -> Self {
        DenseTensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        DenseTensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Stack equal-length rows into a `[rows.len(), dim]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {} has length {}, expected {}",
                    i,
                    r.len(),
                    cols
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[0],
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Normalize a vector to unit length. Fails on a (near-)zero vector.
pub fn normalized(a: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(a);
    if !(n > 1e-12) {
        return Err(Error::contract(format!(
            "cannot normalize vector with norm {n:e}"
        )));
    }
    Ok(a.iter().map(|v| v / n).collect())
}

/// `a[m,k] @ b[k,n]`.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseTensor::new(vec![m, n], out)
}

/// `a[m,k] @ b[n,k]^T`.
pub fn matmul_t(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_t {:?} x {:?}^T",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(arow, b.row(j));
        }
    }
    DenseTensor::new(vec![m, n], out)
}

/// `a[m,k]^T @ b[m,n]`.
pub fn t_matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    let (m, k) = (a.rows(), a.cols());
    let (m2, n) = (b.rows(), b.cols());
    if m != m2 {
        return Err(Error::dim(format!(
            "t_matmul {:?}^T x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = a.row(i);
        let brow = b.row(i);
        for (p, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    DenseTensor::new(vec![k, n], out)
}

/// Broadcast-add a `[n]` bias to every row of `a[m,n]`.
pub fn add_row(a: &DenseTensor, bias: &DenseTensor) -> Result<DenseTensor> {
    if a.cols() != bias.len() {
        return Err(Error::dim(format!(
            "bias {:?} for {:?}",
            bias.shape(),
            a.shape()
        )));
    }
    let mut out = a.clone();
    let n = bias.len();
    for row in out.data.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(&bias.data) {
            *o += b;
        }
    }
    Ok(out)
}

/// Row-wise L2 normalization; returns the normalized matrix and row norms.
pub fn normalize_rows(a: &DenseTensor) -> Result<(DenseTensor, Vec<f64>)> {
    let mut out = a.clone();
    let c = a.cols();
    let mut norms = Vec::with_capacity(a.rows());
    for (i, row) in out.data.chunks_mut(c).enumerate() {
        let n = l2_norm(row);
        if !(n > 1e-12) {
            return Err(Error::numeric(format!(
                "row {i} has zero norm and cannot be normalized"
            )));
        }
        row.iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((out, norms))
}
