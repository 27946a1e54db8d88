//! Small dense linear-algebra helpers shared by the analysis modules.
//!
//! Everything here works on `nalgebra` dynamic matrices. Sizes are small
//! (tens of states at most), so direct methods are used throughout.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;

/// Stacked observability matrix `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(a: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let p = c.nrows();
    let mut out = DMatrix::zeros(p * n, n);
    let mut block = c.clone();
    for k in 0..n {
        out.view_mut((k * p, 0), (p, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Numerical rank with a cutoff relative to the largest singular value.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    rank_from_singular_values(&sv, rel_tol)
}

pub fn complex_rank(m: &DMatrix<C64>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    rank_from_singular_values(&sv, rel_tol)
}

/// Number of singular values above an absolute cutoff.
pub fn complex_rank_abs(m: &DMatrix<C64>, cutoff: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    m.clone().svd(false, false).singular_values.iter().filter(|&&s| s > cutoff).count()
}

fn rank_from_singular_values(sv: &[f64], rel_tol: f64) -> usize {
    let smax = sv.iter().copied().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Orthonormal basis of the numerical null space, one column per vector.
pub fn complex_null_space(m: &DMatrix<C64>, rel_tol: f64) -> DMatrix<C64> {
    let n = m.ncols();
    // Pad to square so the SVD returns a full set of right singular vectors.
    let rows = m.nrows().max(n);
    let mut sq = DMatrix::<C64>::zeros(rows, n);
    sq.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = sq.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let cols: Vec<DVector<C64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax == 0.0 || s <= rel_tol * smax)
        .map(|(k, _)| v_t.row(k).adjoint())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|x| C64::new(x, 0.0))
}

/// `lambda * I - A` as a complex matrix.
pub fn shifted(a: &DMatrix<f64>, lambda: C64) -> DMatrix<C64> {
    let n = a.nrows();
    let mut m = -to_complex(a);
    for i in 0..n {
        m[(i, i)] += lambda;
    }
    m
}

/// Eigenvalues of a real square matrix, sorted by real part then imaginary part.
pub fn eigenvalues(a: &DMatrix<f64>) -> Vec<C64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<C64> = a.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    ev
}

pub fn spectral_abscissa(a: &DMatrix<f64>) -> f64 {
    eigenvalues(a)
        .iter()
        .map(|e| e.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Fails with the right-most eigenvalue when it does not lie strictly in
/// the open left half-plane.
pub fn ensure_hurwitz(a: &DMatrix<f64>) -> Result<()> {
    if let Some(worst) = eigenvalues(a)
        .into_iter()
        .max_by(|x, y| x.re.total_cmp(&y.re))
    {
        if !(worst.re < 0.0) {
            return Err(Error::NotHurwitz {
                re: worst.re,
                im: worst.im,
            });
        }
    }
    Ok(())
}

/// Solves `Aᵀ X + X A + Q = 0` by a Kronecker-product linear solve with one
/// step of iterative refinement. The result is symmetrized.
pub fn lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::Dimension {
            what: "lyapunov A",
            expected: n,
            got: a.ncols(),
            index: 1,
        });
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::Dimension {
            what: "lyapunov Q",
            expected: n,
            got: q.nrows(),
            index: 0,
        });
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let at = a.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let kron = eye.kronecker(&at) + at.kronecker(&eye);
    let lu = kron.lu();
    let solve = |rhs: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let v = DVector::from_column_slice(rhs.as_slice());
        let x = lu.solve(&v).ok_or(Error::Singular("lyapunov operator"))?;
        Ok(DMatrix::from_column_slice(n, n, x.as_slice()))
    };
    let mut x = solve(&(-q))?;
    let resid = -(q + &at * &x + &x * a);
    x += solve(&resid)?;
    let x = (&x + x.transpose()) * 0.5;
    Ok(x)
}

pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (a.transpose() * x + x * a + q).norm()
}

/// Adjugate via cofactors; well defined for singular matrices too.
pub fn adjugate(m: &DMatrix<C64>) -> DMatrix<C64> {
    let n = m.nrows();
    if n == 1 {
        return DMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    }
    let mut adj = DMatrix::<C64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let minor = m.clone().remove_row(i).remove_column(j);
            let det = minor.lu().determinant();
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            adj[(j, i)] = det * sign;
        }
    }
    adj
}

/// Frobenius-normalized scale used for relative zero tests.
pub fn complex_norm(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::Dimension {
                what: "matrix row",
                expected: ncols,
                got: r.len(),
                index: i,
            });
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}
