//! Orthonormal bases for a sampled parameter trajectory.
//!
//! The snapshots `w_1..w_t` are centred on their mean, the `t x t` Gram matrix
//! of the centred columns is eigendecomposed, and the leading eigenvectors are
//! lifted back to parameter space through `u_i = W v_i / sigma_i`. Nothing of
//! size `n x n` is ever formed: the extra memory is the centred copy (`n t`),
//! the Gram matrix (`t^2`) and the basis itself (`n d`).

use std::path::Path;

use crate::binio::{self, put_f64s, Reader};
use crate::linalg::{axpy, dot, norm, symmetric_eigen, SymmetricEigen};
use crate::{Error, ParamVector, Result};

/// Components with `sigma_i^2 < DROP_RATIO * sigma_1^2` are discarded.
pub const DROP_RATIO: f64 = 1e-10;

/// `n x t` matrix stored column by column (one column per snapshot).
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshots {
    n: usize,
    t: usize,
    data: Vec<f64>,
}

impl Snapshots {
    pub fn new(n: usize, data: Vec<f64>) -> Result<Self> {
        if n == 0 || data.len() % n != 0 {
            return Err(Error::Shape(format!("{} values do not form columns of length {n}", data.len())));
        }
        Ok(Snapshots { n, t: data.len() / n, data })
    }

    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let n = columns.first().map(|c| c.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n * columns.len());
        for c in columns {
            if c.as_ref().len() != n {
                return Err(Error::Shape("snapshot columns differ in length".into()));
            }
            data.extend_from_slice(c.as_ref());
        }
        Snapshots::new(n, data)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Returns the snapshot mean and the centred matrix `W = [w_j - mean]`.
///
/// Rows whose entries are all equal centre to exact zeros.
pub fn center(samples: &Snapshots) -> Result<(ParamVector, Snapshots)> {
    let (n, t) = (samples.n, samples.t);
    if t < 2 {
        return Err(Error::DegenerateTrajectory(format!("need at least 2 snapshots, got {t}")));
    }
    let mut mean = vec![0.0; n];
    for col in samples.columns() {
        axpy(1.0, col, &mut mean);
    }
    let first = samples.column(0);
    for (r, m) in mean.iter_mut().enumerate() {
        if samples.columns().all(|c| c[r] == first[r]) {
            *m = first[r];
        } else {
            *m /= t as f64;
        }
    }
    let mut data = Vec::with_capacity(n * t);
    for col in samples.columns() {
        data.extend(col.iter().zip(&mean).map(|(w, m)| w - m));
    }
    Ok((ParamVector::new(mean), Snapshots { n, t, data }))
}

/// Spectral decomposition of the centred trajectory via its Gram matrix.
#[derive(Debug, Clone)]
pub struct GramDecomposition {
    mean: ParamVector,
    centered: Snapshots,
    eigen: SymmetricEigen,
}

pub fn decompose(samples: &Snapshots) -> Result<GramDecomposition> {
    let (mean, centered) = center(samples)?;
    let t = centered.t;
    let mut gram = vec![0.0; t * t];
    for i in 0..t {
        for j in i..t {
            let g = dot(centered.column(i), centered.column(j));
            gram[i * t + j] = g;
            gram[j * t + i] = g;
        }
    }
    let eigen = symmetric_eigen(&gram, t);
    if !(eigen.values[0] > 0.0) || !eigen.values[0].is_finite() {
        return Err(Error::DegenerateTrajectory("all snapshots are identical".into()));
    }
    Ok(GramDecomposition { mean, centered, eigen })
}

impl GramDecomposition {
    /// Eigenvalues `sigma_i^2` of `W^T W`, non-increasing (all `t`).
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigen.values
    }

    pub fn mean(&self) -> &ParamVector {
        &self.mean
    }

    /// Variance ratio of every one of the `t` components.
    pub fn explained_variance(&self) -> Result<Vec<f64>> {
        let sigmas: Vec<f64> = self.eigen.values.iter().map(|&l| l.max(0.0).sqrt()).collect();
        explained_variance(&sigmas)
    }

    /// Lifts the leading `d` components to an orthonormal `n x d` basis.
    pub fn basis(&self, d: usize) -> Result<SubspaceBasis> {
        let (n, t) = (self.centered.n, self.centered.t);
        if d == 0 {
            return Err(Error::Dimension("subspace dimension must be at least 1".into()));
        }
        if d > t {
            return Err(Error::Dimension(format!("requested d = {d} exceeds the {t} trajectory samples")));
        }
        let values = &self.eigen.values;
        let total: f64 = values.iter().map(|&l| l.max(0.0)).sum();
        let keep = values[..d]
            .iter()
            .take_while(|&&l| l > 0.0 && l >= DROP_RATIO * values[0])
            .count();

        let mut columns = vec![0.0; n * keep];
        let mut sigmas = Vec::with_capacity(keep);
        let mut ratios = Vec::with_capacity(keep);
        for i in 0..keep {
            let sigma = values[i].sqrt();
            let v = self.eigen.vector(i);
            let u = &mut columns[i * n..(i + 1) * n];
            for (j, col) in self.centered.columns().enumerate() {
                axpy(v[j] / sigma, col, u);
            }
            sigmas.push(sigma);
            ratios.push(values[i] / total);
        }
        gram_schmidt(&mut columns, n, keep)?;
        Ok(SubspaceBasis {
            n,
            d: keep,
            columns,
            mean: self.mean.clone(),
            sigmas,
            variance_ratios: ratios,
        })
    }
}

/// One modified Gram-Schmidt pass over the columns, in place.
fn gram_schmidt(columns: &mut [f64], n: usize, d: usize) -> Result<()> {
    for i in 0..d {
        let (done, rest) = columns.split_at_mut(i * n);
        let u = &mut rest[..n];
        for j in 0..i {
            let prev = &done[j * n..(j + 1) * n];
            let r = dot(prev, u);
            axpy(-r, prev, u);
        }
        let len = norm(u);
        if !(len > 0.0) {
            return Err(Error::Numerical(format!("basis column {i} vanished during orthonormalisation")));
        }
        for x in u.iter_mut() {
            *x /= len;
        }
    }
    Ok(())
}

/// Basis of the top-`d` trajectory components (`d` may shrink, see [`SubspaceBasis::dim`]).
pub fn extract_basis(samples: &Snapshots, d: usize) -> Result<SubspaceBasis> {
    if d > samples.t() {
        return Err(Error::Dimension(format!(
            "requested d = {d} exceeds the {} trajectory samples",
            samples.t()
        )));
    }
    decompose(samples)?.basis(d)
}

/// `sigma_i^2 / sum_j sigma_j^2` for each component.
pub fn explained_variance(sigmas: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = sigmas.iter().map(|s| s * s).sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateTrajectory("no positive singular value".into()));
    }
    Ok(sigmas.iter().map(|s| s * s / total).collect())
}

/// Orthonormal `n x d` basis `P` together with the trajectory statistics it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    n: usize,
    d: usize,
    columns: Vec<f64>,
    pub mean: ParamVector,
    pub sigmas: Vec<f64>,
    pub variance_ratios: Vec<f64>,
}

const BASIS_MAGIC: &[u8; 4] = b"DLBS";
const BASIS_VERSION: u32 = 1;

impl SubspaceBasis {
    /// `P = I_n`, mostly useful for tests and full-space comparisons.
    pub fn identity(n: usize) -> Self {
        let mut columns = vec![0.0; n * n];
        for i in 0..n {
            columns[i * n + i] = 1.0;
        }
        SubspaceBasis {
            n,
            d: n,
            columns,
            mean: ParamVector::zeros(n),
            sigmas: vec![1.0; n],
            variance_ratios: vec![1.0 / n as f64; n],
        }
    }

    /// Wraps caller-provided columns, which must be orthonormal to 1e-8.
    pub fn from_columns<C: AsRef<[f64]>>(columns: &[C]) -> Result<Self> {
        let d = columns.len();
        let snaps = Snapshots::from_columns(columns)?;
        let n = snaps.n;
        let basis = SubspaceBasis {
            n,
            d,
            columns: snaps.data,
            mean: ParamVector::zeros(n),
            sigmas: vec![1.0; d],
            variance_ratios: vec![1.0 / d as f64; d],
        };
        let err = basis.orthonormality_error();
        if err >= 1e-8 {
            return Err(Error::Numerical(format!("columns are not orthonormal (max |P^T P - I| = {err:e})")));
        }
        Ok(basis)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Effective dimension `d`.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn column(&self, i: usize) -> &[f64] {
        &self.columns[i * self.n..(i + 1) * self.n]
    }

    /// `max |P^T P - I|`
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.d {
            for j in i..self.d {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(self.column(i), self.column(j)) - target).abs());
            }
        }
        worst
    }

    /// `P^T g`
    pub fn project(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.n {
            return Err(Error::Shape(format!("cannot project length {} onto a basis in R^{}", g.len(), self.n)));
        }
        Ok((0..self.d).map(|i| dot(self.column(i), g)).collect())
    }

    /// `P s`
    pub fn lift(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n];
        self.lift_add(1.0, s, &mut out)?;
        Ok(out)
    }

    /// `w += alpha * P s`
    pub fn lift_add(&self, alpha: f64, s: &[f64], w: &mut [f64]) -> Result<()> {
        if s.len() != self.d || w.len() != self.n {
            return Err(Error::Shape(format!(
                "lift expects a {}-vector into R^{}, got {} into {}",
                self.d,
                self.n,
                s.len(),
                w.len()
            )));
        }
        for (i, &si) in s.iter().enumerate() {
            axpy(alpha * si, self.column(i), w);
        }
        Ok(())
    }

    /// `||(I - P P^T) x||`, the part of `x` outside the subspace.
    pub fn residual_norm(&self, x: &[f64]) -> Result<f64> {
        let coords = self.project(x)?;
        let mut r = x.to_vec();
        self.lift_add(-1.0, &coords, &mut r)?;
        Ok(norm(&r))
    }

    /// `DLBS`, version u32, n u64, d u64, mean, sigmas, ratios, then the d columns; little-endian f64.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(24 + 8 * (self.n * (self.d + 1) + 2 * self.d));
        buf.extend_from_slice(BASIS_MAGIC);
        buf.extend_from_slice(&BASIS_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(self.d as u64).to_le_bytes());
        put_f64s(&mut buf, &self.mean);
        put_f64s(&mut buf, &self.sigmas);
        put_f64s(&mut buf, &self.variance_ratios);
        put_f64s(&mut buf, &self.columns);
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "basis file");
        r.magic(BASIS_MAGIC)?;
        let version = r.u32()?;
        if version != BASIS_VERSION {
            return Err(Error::Format(format!("basis file: unsupported version {version}")));
        }
        let n = r.usize_from_u64()?;
        let d = r.usize_from_u64()?;
        let expected = n
            .checked_mul(d + 1)
            .and_then(|x| x.checked_add(2 * d))
            .and_then(|x| x.checked_mul(8))
            .ok_or_else(|| Error::Format("basis file: size overflow".into()))?;
        if bytes.len() != 24 + expected {
            return Err(Error::Format(format!(
                "basis file: header promises {} bytes, file has {}",
                24 + expected,
                bytes.len()
            )));
        }
        let mean = ParamVector::new(r.f64s(n)?);
        let sigmas = r.f64s(d)?;
        let variance_ratios = r.f64s(d)?;
        let columns = r.f64s(n * d)?;
        r.finish()?;
        Ok(SubspaceBasis { n, d, columns, mean, sigmas, variance_ratios })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        SubspaceBasis::from_bytes(&binio::read_file(path)?)
    }
}

/// `P^T g`
pub fn project(basis: &SubspaceBasis, g: &[f64]) -> Result<Vec<f64>> {
    basis.project(g)
}

/// `P s`
pub fn lift(basis: &SubspaceBasis, s: &[f64]) -> Result<Vec<f64>> {
    basis.lift(s)
}
