//! Small numerical kernels shared by the network engine and the subspace code.
//!
//! All reductions use a fixed summation order so that results do not depend on
//! threading or platform vectorisation choices.

const PAIRWISE_BLOCK: usize = 128;

/// Pairwise (cascade) summation.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Dot product with pairwise accumulation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    if a.len() <= PAIRWISE_BLOCK {
        let mut acc = 0.0;
        for (x, y) in a.iter().zip(b) {
            acc += x * y;
        }
        return acc;
    }
    let mid = a.len() / 2;
    dot(&a[..mid], &b[..mid]) + dot(&a[mid..], &b[mid..])
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Strided view of a row-major or transposed matrix operand.
#[derive(Clone, Copy)]
pub struct MatRef<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> MatRef<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "MatRef: buffer too small");
        MatRef { data, rows, cols, row_stride: cols as isize, col_stride: 1 }
    }

    pub fn t(self) -> Self {
        MatRef {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `C = alpha * A B + beta * C` where `C` is row-major `a.rows x b.cols`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64]) {
    assert_eq!(a.cols, b.rows, "gemm: inner dimension mismatch");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert!(c.len() >= m * n, "gemm: output buffer too small");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for x in &mut c[..m * n] {
            *x *= beta;
        }
        return;
    }
    // SAFETY: the asserts above and in `MatRef::new` guarantee every strided
    // access stays inside the borrowed buffers.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Eigendecomposition of a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    /// Eigenvalues, non-increasing.
    pub values: Vec<f64>,
    /// Row-major `dim x dim`; column `i` is the eigenvector for `values[i]`.
    pub vectors: Vec<f64>,
    pub dim: usize,
}

impl SymmetricEigen {
    pub fn vector(&self, i: usize) -> Vec<f64> {
        (0..self.dim).map(|r| self.vectors[r * self.dim + i]).collect()
    }
}

/// Cyclic Jacobi eigensolver for a symmetric row-major matrix.
///
/// Eigenpairs are sorted by descending eigenvalue (stable, so ties keep the
/// solver's index order) and each eigenvector is signed so that its
/// largest-magnitude entry is positive.
pub fn symmetric_eigen(matrix: &[f64], dim: usize) -> SymmetricEigen {
    assert_eq!(matrix.len(), dim * dim, "symmetric_eigen: expected a square matrix");
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; dim * dim];
    for i in 0..dim {
        v[i * dim + i] = 1.0;
    }

    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..dim {
            for q in p + 1..dim {
                off += a[p * dim + q] * a[p * dim + q];
            }
        }
        if off <= f64::EPSILON * f64::EPSILON * scale * 1e-4 || off == 0.0 {
            break;
        }
        for p in 0..dim {
            for q in p + 1..dim {
                let apq = a[p * dim + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * dim + p];
                let aqq = a[q * dim + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[k * dim + p];
                    let akq = a[k * dim + q];
                    a[k * dim + p] = c * akp - s * akq;
                    a[k * dim + q] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[p * dim + k];
                    let aqk = a[q * dim + k];
                    a[p * dim + k] = c * apk - s * aqk;
                    a[q * dim + k] = s * apk + c * aqk;
                }
                a[p * dim + q] = 0.0;
                a[q * dim + p] = 0.0;
                for k in 0..dim {
                    let vkp = v[k * dim + p];
                    let vkq = v[k * dim + q];
                    v[k * dim + p] = c * vkp - s * vkq;
                    v[k * dim + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| a[j * dim + j].total_cmp(&a[i * dim + i]));

    let mut values = Vec::with_capacity(dim);
    let mut vectors = vec![0.0; dim * dim];
    for (col, &src) in order.iter().enumerate() {
        values.push(a[src * dim + src]);
        let mut pivot = 0;
        for r in 0..dim {
            if v[r * dim + src].abs() > v[pivot * dim + src].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot * dim + src] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..dim {
            vectors[r * dim + col] = sign * v[r * dim + src];
        }
    }
    SymmetricEigen { values, vectors, dim }
}
