//! Dense vectors and matrices plus lineage-keyed random streams.
//!
//! The linear algebra here is intentionally small: the simulator only needs
//! matrix-vector products, transposed products, axpy-style updates and
//! Frobenius norms on desk-scale dimensions. Anything heavier (eigenvalues,
//! pseudo-inverses) is delegated to `nalgebra` at problem-construction time.

use std::ops::{Index, IndexMut};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// A dense real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn filled(len: usize, value: f64) -> Self {
        Self(vec![value; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        assert_eq!(self.len(), other.len(), "dot: length mismatch");
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        fro_norm(self)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, c: f64) -> Vector {
        Vector(self.0.iter().map(|v| c * v).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "add: length mismatch");
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        assert_eq!(self.len(), other.len(), "sub: length mismatch");
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Vector) {
        assert_eq!(self.len(), other.len(), "axpy: length mismatch");
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Arithmetic mean of equal-length vectors, summed in slice order.
    ///
    /// When every input is bitwise identical the first one is returned as-is,
    /// so a broadcast state averages back to itself exactly.
    pub fn mean_of<'a, I>(items: I) -> Option<Vector>
    where
        I: IntoIterator<Item = &'a Vector>,
    {
        let items: Vec<&Vector> = items.into_iter().collect();
        let first = *items.first()?;
        if items.iter().all(|v| v.0 == first.0) {
            return Some(first.clone());
        }
        let mut acc = Vector::zeros(first.len());
        for v in &items {
            acc.axpy(1.0, v);
        }
        let inv = 1.0 / items.len() as f64;
        Some(acc.scaled(inv))
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

/// A dense row-major `rows x cols` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(config_err(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(config_err("ragged matrix rows"));
        }
        Ok(Self { rows: r, cols: c, data: rows.concat() })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    /// `J x`, panicking on a shape mismatch. See [`matvec`] for the checked form.
    pub fn mul_vec(&self, x: &Vector) -> Vector {
        assert_eq!(self.cols, x.len(), "mul_vec: shape mismatch");
        let xs = x.as_slice();
        Vector(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(xs).map(|(a, b)| a * b).sum())
                .collect(),
        )
    }

    /// `Jᵀ y`, panicking on a shape mismatch. See [`mat_t_vec`] for the checked form.
    pub fn t_mul_vec(&self, y: &Vector) -> Vector {
        assert_eq!(self.rows, y.len(), "t_mul_vec: shape mismatch");
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let yi = y[i];
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * yi;
            }
        }
        Vector(out)
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul: shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "add: shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert!(self.same_shape(other), "sub: shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &Matrix) {
        assert!(self.same_shape(other), "axpy: shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Same rule as [`Vector::mean_of`].
    pub fn mean_of<'a, I>(items: I) -> Option<Matrix>
    where
        I: IntoIterator<Item = &'a Matrix>,
    {
        let items: Vec<&Matrix> = items.into_iter().collect();
        let first = *items.first()?;
        if items.iter().all(|m| m.data == first.data) {
            return Some(first.clone());
        }
        let mut acc = Matrix::zeros(first.rows, first.cols);
        for m in &items {
            acc.axpy(1.0, m);
        }
        Some(acc.scaled(1.0 / items.len() as f64))
    }

    pub(crate) fn to_nalgebra(&self) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }

    /// Spectral norm (largest singular value).
    pub fn operator_norm(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.to_nalgebra()
            .singular_values()
            .iter()
            .fold(0.0_f64, |m, s| m.max(*s))
    }
}

/// Anything whose entries live in one flat buffer: used for Frobenius norms
/// and radial projection.
pub trait Entries {
    fn entries(&self) -> &[f64];
    fn entries_mut(&mut self) -> &mut [f64];
}

impl Entries for Vector {
    fn entries(&self) -> &[f64] {
        &self.0
    }
    fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl Entries for Matrix {
    fn entries(&self) -> &[f64] {
        &self.data
    }
    fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `√(Σ entries²)`; the Euclidean norm for vectors.
pub fn fro_norm<T: Entries + ?Sized>(a: &T) -> f64 {
    a.entries().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn matvec(j: &Matrix, x: &Vector) -> Result<Vector> {
    if j.cols() != x.len() {
        return Err(config_err(format!(
            "matvec: matrix is {}x{}, vector has length {}",
            j.rows(),
            j.cols(),
            x.len()
        )));
    }
    Ok(j.mul_vec(x))
}

pub fn mat_t_vec(j: &Matrix, y: &Vector) -> Result<Vector> {
    if j.rows() != y.len() {
        return Err(config_err(format!(
            "matTvec: matrix is {}x{}, vector has length {}",
            j.rows(),
            j.cols(),
            y.len()
        )));
    }
    Ok(j.t_mul_vec(y))
}

/// What a random stream is used for. Part of the stream lineage, so two
/// purposes at the same `(m, t)` never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Purpose {
    /// Inner samples `ζ` drawn at cold start.
    ColdInner,
    /// Outer samples `ξ` drawn at cold start.
    ColdOuter,
    /// Inner sample `ζ^m_{t+1}` of a local step.
    Inner,
    /// Outer sample `ξ^m_{t+1}` of a local step.
    Outer,
    /// Reservoir draw for the uniformly chosen output iterate.
    OutputSelect,
    /// Problem-instance generation.
    Instance,
    /// Diagnostic probes (box points, audits).
    Probe,
    /// Free-form tag for callers outside the simulator.
    Custom(u64),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::ColdInner => 1,
            Purpose::ColdOuter => 2,
            Purpose::Inner => 3,
            Purpose::Outer => 4,
            Purpose::OutputSelect => 5,
            Purpose::Instance => 6,
            Purpose::Probe => 7,
            Purpose::Custom(v) => splitmix64(v ^ 0x6375_7374_6f6d_0000),
        }
    }

    /// Parse the short names used on the Python side and in tests.
    pub fn from_name(name: &str) -> Option<Purpose> {
        Some(match name {
            "cold_zeta" => Purpose::ColdInner,
            "cold_xi" => Purpose::ColdOuter,
            "zeta" => Purpose::Inner,
            "xi" => Purpose::Outer,
            "output" => Purpose::OutputSelect,
            "instance" => Purpose::Instance,
            "probe" => Purpose::Probe,
            _ => return None,
        })
    }
}

/// Client index used for server-side streams.
pub const SERVER_LINEAGE: u64 = u64::MAX;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha8 stream keyed by `(master_seed, m, t, purpose)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    rng: ChaCha8Rng,
    lineage: (u64, u64, u64, Purpose),
}

/// Derive the stream for one lineage tuple. Derivation is a pure function of
/// its arguments: no stream depends on how many draws another stream made.
pub fn derive_stream(master_seed: u64, m: u64, t: u64, purpose: Purpose) -> RngStream {
    let mut state = splitmix64(master_seed);
    for (i, word) in [m, t, purpose.tag()].into_iter().enumerate() {
        state = splitmix64(state ^ splitmix64(word.wrapping_add(0x51_7cc1_b727_220a_u64.wrapping_mul(i as u64 + 1))));
    }
    let mut key = [0u8; 32];
    let mut s = state;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    RngStream { rng: ChaCha8Rng::from_seed(key), lineage: (master_seed, m, t, purpose) }
}

impl RngStream {
    pub fn lineage(&self) -> (u64, u64, u64, Purpose) {
        self.lineage
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / 9_007_199_254_740_992.0)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normals(&mut self, n: usize, std: f64) -> Vec<f64> {
        (0..n).map(|_| std * self.normal()).collect()
    }

    /// Uniform integer in `0..n` (`n > 0`).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below: empty range");
        // Lemire-style widening multiply; the bias is < 2^-64 * n.
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// A point uniformly distributed in the box `‖x‖∞ ≤ radius`.
    pub fn box_point(&mut self, d: usize, radius: f64) -> Vector {
        Vector::from_vec((0..d).map(|_| self.uniform_in(-radius, radius)).collect())
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}
