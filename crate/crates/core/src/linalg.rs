//! Fixed-size complex linear algebra for the two Hilbert spaces used here:
//! a single polarization qubit (dimension 2) and one photon spread over two
//! paths (dimension 4).

use std::fmt;
use std::ops::{Add, Mul, Sub};

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::tol;

pub const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Supported Hilbert-space dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dim {
    Two,
    Four,
}

impl Dim {
    pub fn new(n: usize) -> Result<Self> {
        match n {
            2 => Ok(Dim::Two),
            4 => Ok(Dim::Four),
            other => Err(Error::UnsupportedDimension(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dim::Two => 2,
            Dim::Four => 4,
        }
    }
}

/// Square complex matrix of dimension 2 or 4.
#[derive(Clone, PartialEq)]
pub struct ComplexMatrix {
    dim: Dim,
    data: DMatrix<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(dim: Dim) -> Self {
        let n = dim.size();
        ComplexMatrix {
            dim,
            data: DMatrix::from_element(n, n, ZERO),
        }
    }

    pub fn identity(dim: Dim) -> Self {
        let n = dim.size();
        ComplexMatrix {
            dim,
            data: DMatrix::identity(n, n),
        }
    }

    /// Builds a matrix from row-major entries; the length fixes the dimension.
    pub fn from_rows(entries: &[Complex64]) -> Result<Self> {
        let n = match entries.len() {
            4 => 2,
            16 => 4,
            other => {
                return Err(Error::InvalidParameter(format!(
                    "{other} entries do not form a 2x2 or 4x4 matrix"
                )))
            }
        };
        if entries
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::NonFinite);
        }
        Ok(ComplexMatrix {
            dim: Dim::new(n)?,
            data: DMatrix::from_row_slice(n, n, entries),
        })
    }

    pub fn from_real_rows(entries: &[f64]) -> Result<Self> {
        let c: Vec<Complex64> = entries.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        Self::from_rows(&c)
    }

    pub fn from_dmatrix(data: DMatrix<Complex64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::DimensionMismatch {
                left: data.nrows(),
                right: data.ncols(),
            });
        }
        let dim = Dim::new(data.nrows())?;
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(ComplexMatrix { dim, data })
    }

    pub fn diagonal(values: &[f64]) -> Result<Self> {
        let dim = Dim::new(values.len())?;
        let mut m = Self::zeros(dim);
        for (i, &v) in values.iter().enumerate() {
            m.data[(i, i)] = Complex64::new(v, 0.0);
        }
        Ok(m)
    }

    /// `|v⟩⟨w|`
    pub fn outer(v: &[Complex64], w: &[Complex64]) -> Result<Self> {
        if v.len() != w.len() {
            return Err(Error::DimensionMismatch {
                left: v.len(),
                right: w.len(),
            });
        }
        let dim = Dim::new(v.len())?;
        let n = dim.size();
        let data = DMatrix::from_fn(n, n, |i, j| v[i] * w[j].conj());
        Ok(ComplexMatrix { dim, data })
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.dim.size()
    }

    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[(row, col)] = value;
    }

    pub fn as_dmatrix(&self) -> &DMatrix<Complex64> {
        &self.data
    }

    pub fn adjoint(&self) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: self.data.adjoint(),
        }
    }

    pub fn trace(&self) -> Complex64 {
        self.data.trace()
    }

    pub fn scale(&self, factor: f64) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: &self.data * Complex64::new(factor, 0.0),
        }
    }

    /// Largest entry of `|A - A†|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.size();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self.data[(i, j)] - self.data[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Largest entry of `|A - B|`.
    pub fn max_abs_diff(&self, other: &ComplexMatrix) -> f64 {
        assert_eq!(self.dim, other.dim, "dimension mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// `(A + A†) / 2`
    pub fn hermitian_part(&self) -> Self {
        ComplexMatrix {
            dim: self.dim,
            data: (&self.data + self.data.adjoint()) * Complex64::new(0.5, 0.0),
        }
    }

    /// `U A U†`
    pub fn conjugate_by(&self, u: &ComplexMatrix) -> Self {
        &(u * self) * &u.adjoint()
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let n = self.size();
        assert_eq!(v.len(), n, "dimension mismatch");
        (0..n)
            .map(|i| (0..n).map(|j| self.data[(i, j)] * v[j]).sum())
            .collect()
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.size()).map(|i| self.data[(i, j)]).collect()
    }

    /// Block-diagonal sum of two 2x2 matrices.
    pub fn direct_sum(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<Self> {
        if a.dim != Dim::Two || b.dim != Dim::Two {
            return Err(Error::InvalidParameter(
                "direct sum is defined for two 2x2 blocks".into(),
            ));
        }
        let mut m = Self::zeros(Dim::Four);
        for i in 0..2 {
            for j in 0..2 {
                m.data[(i, j)] = a.data[(i, j)];
                m.data[(i + 2, j + 2)] = b.data[(i, j)];
            }
        }
        Ok(m)
    }

    fn ensure_hermitian(&self) -> Result<()> {
        let asym = self.max_asymmetry();
        if asym > tol::CONSTRUCTION {
            Err(Error::NotHermitian {
                max_asymmetry: asym,
            })
        } else {
            Ok(())
        }
    }
}

impl fmt::Debug for ComplexMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "ComplexMatrix {}x{} [", self.size(), self.size())?;
        for i in 0..self.size() {
            write!(f, "  ")?;
            for j in 0..self.size() {
                let z = self.data[(i, j)];
                write!(f, "{:+.6}{:+.6}i  ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl<'a> Mul<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn mul(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: &self.data * &rhs.data,
        }
    }
}

impl<'a> Add<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn add(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: &self.data + &rhs.data,
        }
    }
}

impl<'a> Sub<&'a ComplexMatrix> for &'a ComplexMatrix {
    type Output = ComplexMatrix;

    fn sub(self, rhs: &'a ComplexMatrix) -> ComplexMatrix {
        assert_eq!(self.dim, rhs.dim, "dimension mismatch");
        ComplexMatrix {
            dim: self.dim,
            data: &self.data - &rhs.data,
        }
    }
}

/// Spectral decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    /// Eigenvalues in descending order.
    pub values: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `values`.
    pub vectors: ComplexMatrix,
}

impl Eigen {
    pub fn vector(&self, k: usize) -> Vec<Complex64> {
        self.vectors.column(k)
    }
}

/// Eigen-decomposition of a Hermitian matrix: closed form at dimension 2,
/// cyclic complex Jacobi at dimension 4.
pub fn eig_hermitian(a: &ComplexMatrix) -> Result<Eigen> {
    a.ensure_hermitian()?;
    let a = a.hermitian_part();
    let (values, vectors) = match a.dim() {
        Dim::Two => eig2(&a),
        Dim::Four => jacobi(&a),
    };
    Ok(sorted(values, vectors))
}

/// Trace norm `Tr|A| = Σ|λᵢ|` of a Hermitian matrix.
pub fn trace_norm(a: &ComplexMatrix) -> Result<f64> {
    Ok(eig_hermitian(a)?.values.iter().map(|v| v.abs()).sum())
}

fn sorted(values: Vec<f64>, vectors: ComplexMatrix) -> Eigen {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].total_cmp(&values[i]));
    let mut out = ComplexMatrix::zeros(vectors.dim());
    for (dst, &src) in order.iter().enumerate() {
        for row in 0..vectors.size() {
            out.set(row, dst, vectors.get(row, src));
        }
    }
    Eigen {
        values: order.iter().map(|&i| values[i]).collect(),
        vectors: out,
    }
}

fn eig2(a: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let p = a.get(0, 0).re;
    let d = a.get(1, 1).re;
    let b = a.get(0, 1);
    let mean = 0.5 * (p + d);
    let half_gap = (0.5 * (p - d)).hypot(b.norm());
    let (hi, lo) = (mean + half_gap, mean - half_gap);

    if b.norm() <= f64::EPSILON * (p.abs() + d.abs()).max(f64::MIN_POSITIVE) {
        let mut v = ComplexMatrix::identity(Dim::Two);
        if d > p {
            v = ComplexMatrix::from_rows(&[ZERO, ONE, ONE, ZERO]).expect("2x2");
        }
        return (vec![hi, lo], v);
    }

    // Two algebraically equivalent forms of the top eigenvector; the longer
    // one avoids cancellation.
    let first = [b, Complex64::new(hi - p, 0.0)];
    let second = [Complex64::new(hi - d, 0.0), b.conj()];
    let norm = |v: &[Complex64; 2]| (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
    let top = if norm(&first) >= norm(&second) {
        first
    } else {
        second
    };
    let n = norm(&top);
    let u = [top[0] / n, top[1] / n];
    // orthogonal complement
    let w = [-u[1].conj(), u[0].conj()];
    let vectors = ComplexMatrix::from_rows(&[u[0], w[0], u[1], w[1]]).expect("2x2");
    (vec![hi, lo], vectors)
}

fn jacobi(a: &ComplexMatrix) -> (Vec<f64>, ComplexMatrix) {
    let n = a.size();
    let mut m = a.as_dmatrix().clone();
    let mut v: DMatrix<Complex64> = DMatrix::identity(n, n);
    let scale = m
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);

    for _sweep in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                let r = apq.norm();
                if r <= 1e-300 {
                    continue;
                }
                // Phase that makes the (p, q) entry real and positive.
                let phase = apq.conj() / r;
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let tau = (aqq - app) / (2.0 * r);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                // G = diag(.., 1 at p, phase at q, ..) · real rotation(p, q)
                let mut g: DMatrix<Complex64> = DMatrix::identity(n, n);
                g[(p, p)] = Complex64::new(c, 0.0);
                g[(p, q)] = Complex64::new(s, 0.0);
                g[(q, p)] = phase * (-s);
                g[(q, q)] = phase * c;

                m = g.adjoint() * &m * &g;
                v = &v * &g;
            }
        }
    }

    let values = (0..n).map(|i| m[(i, i)].re).collect();
    (
        values,
        ComplexMatrix::from_dmatrix(v).expect("dimension preserved"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn reconstruct(e: &Eigen) -> ComplexMatrix {
        let mut acc = ComplexMatrix::zeros(e.vectors.dim());
        for (k, &lambda) in e.values.iter().enumerate() {
            let v = e.vector(k);
            acc = &acc + &ComplexMatrix::outer(&v, &v).unwrap().scale(lambda);
        }
        acc
    }

    fn random_hermitian(n: usize, seed: &[f64]) -> ComplexMatrix {
        let mut data = vec![ZERO; n * n];
        let mut it = seed.iter().cycle();
        for i in 0..n {
            data[i * n + i] = c(*it.next().unwrap(), 0.0);
            for j in i + 1..n {
                let z = c(*it.next().unwrap(), *it.next().unwrap());
                data[i * n + j] = z;
                data[j * n + i] = z.conj();
            }
        }
        ComplexMatrix::from_rows(&data).unwrap()
    }

    #[test]
    fn diagonal_input() {
        let e = eig_hermitian(&ComplexMatrix::diagonal(&[0.3, 0.7]).unwrap()).unwrap();
        assert_abs_diff_eq!(e.values[0], 0.7, epsilon = 1e-15);
        assert_abs_diff_eq!(e.values[1], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(e.vector(0)[1].norm(), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.vector(1)[0].norm(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn pauli_x() {
        let sx = ComplexMatrix::from_real_rows(&[0.0, 1.0, 1.0, 0.0]).unwrap();
        let e = eig_hermitian(&sx).unwrap();
        assert_abs_diff_eq!(e.values[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(e.values[1], -1.0, epsilon = 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v0 = e.vector(0);
        let v1 = e.vector(1);
        // up to a global phase
        assert_abs_diff_eq!((v0[0] * v0[1].conj()).re, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!((v1[0] * v1[1].conj()).re, -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v0[0].norm(), h, epsilon = 1e-15);
        assert_abs_diff_eq!(trace_norm(&sx).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn trace_norm_diagonal() {
        let a = ComplexMatrix::diagonal(&[0.3, -0.3]).unwrap();
        assert_abs_diff_eq!(trace_norm(&a).unwrap(), 0.6, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = ComplexMatrix::from_real_rows(&[0.0, 1.0, 0.5, 0.0]).unwrap();
        match eig_hermitian(&a) {
            Err(Error::NotHermitian { max_asymmetry }) => {
                assert_abs_diff_eq!(max_asymmetry, 0.5, epsilon = 1e-15)
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_dimension() {
        assert!(ComplexMatrix::from_rows(&[ZERO; 9]).is_err());
        assert_eq!(Dim::new(3), Err(Error::UnsupportedDimension(3)));
    }

    #[test]
    fn degenerate_four_by_four() {
        let a = ComplexMatrix::diagonal(&[0.5, 0.0, 0.5, 0.0]).unwrap();
        let e = eig_hermitian(&a).unwrap();
        assert_eq!(e.values, vec![0.5, 0.5, 0.0, 0.0]);
        assert!(reconstruct(&e).max_abs_diff(&a) < 1e-15);
    }

    #[test]
    fn jacobi_agrees_with_closed_form() {
        let a = ComplexMatrix::from_rows(&[c(0.2, 0.0), c(0.3, -0.4), c(0.3, 0.4), c(-0.7, 0.0)])
            .unwrap();
        let closed = eig_hermitian(&a).unwrap();
        let (vals, _) = jacobi(&a);
        let mut vals = vals;
        vals.sort_by(|x, y| y.total_cmp(x));
        for (x, y) in closed.values.iter().zip(&vals) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-13);
        }
    }

    // Independent route at dimension 2: roots of λ² − tr·λ + det.
    fn char_poly_trace_norm(a: &ComplexMatrix) -> f64 {
        let tr = a.trace().re;
        let det = (a.get(0, 0) * a.get(1, 1) - a.get(0, 1) * a.get(1, 0)).re;
        let disc = (tr * tr - 4.0 * det).max(0.0).sqrt();
        ((tr + disc) / 2.0).abs() + ((tr - disc) / 2.0).abs()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn reconstruction_dim2(seed in prop::collection::vec(-1.0f64..1.0, 4)) {
            let a = random_hermitian(2, &seed);
            let e = eig_hermitian(&a).unwrap();
            prop_assert!(reconstruct(&e).max_abs_diff(&a) < tol::SOLVER);
            prop_assert!(e.values[0] >= e.values[1]);
            prop_assert!((char_poly_trace_norm(&a) - trace_norm(&a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn reconstruction_dim4(seed in prop::collection::vec(-1.0f64..1.0, 16)) {
            let a = random_hermitian(4, &seed);
            let e = eig_hermitian(&a).unwrap();
            prop_assert!(reconstruct(&e).max_abs_diff(&a) < tol::SOLVER);
            for w in e.values.windows(2) {
                prop_assert!(w[0] >= w[1]);
            }
            let gram = &e.vectors.adjoint() * &e.vectors;
            prop_assert!(gram.max_abs_diff(&ComplexMatrix::identity(Dim::Four)) < 1e-10);
            for k in 0..4 {
                let v = e.vector(k);
                let av = a.apply(&v);
                for i in 0..4 {
                    prop_assert!((av[i] - v[i] * e.values[k]).norm() < tol::SOLVER);
                }
            }
            // external solver as a second opinion on the spectrum
            let reference = a.as_dmatrix().clone().symmetric_eigen();
            let mut expected: Vec<f64> = reference.eigenvalues.iter().copied().collect();
            expected.sort_by(|x, y| y.total_cmp(x));
            for (x, y) in e.values.iter().zip(&expected) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}
