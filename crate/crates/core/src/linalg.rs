//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Largest singular value.
pub fn op_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    sv.iter().cloned().fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Orthogonal projector onto the column span of `span`, plus its rank.
///
/// Rank uses singular values above `RANK_TOL` times the largest one; a span
/// whose largest singular value is below `abs_floor` is treated as zero.
pub fn range_projector(span: &DMatrix<f64>, abs_floor: f64) -> (DMatrix<f64>, usize) {
    let n = span.nrows();
    if span.ncols() == 0 {
        return (DMatrix::zeros(n, n), 0);
    }
    let svd = span.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    if smax <= abs_floor {
        return (DMatrix::zeros(n, n), 0);
    }
    let mut p = DMatrix::zeros(n, n);
    let mut rank = 0;
    for (idx, s) in svd.singular_values.iter().enumerate() {
        if *s > RANK_TOL * smax {
            let col = u.column(idx);
            p += &col * col.transpose();
            rank += 1;
        }
    }
    (p, rank)
}

/// Deterministic orthonormal basis (as columns) of the range of a projector.
///
/// Column-pivoted Gram-Schmidt over the projector's columns; ties go to the
/// lowest column index so coordinate subspaces come out as unit vectors.
pub fn basis_from_projector(p: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let mut cols: Vec<DVector<f64>> = (0..p.ncols()).map(|j| p.column(j).into_owned()).collect();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(rank);
    for _ in 0..rank {
        let norms: Vec<f64> = cols.iter().map(|c| c.norm()).collect();
        let best = norms.iter().cloned().fold(0.0, f64::max);
        if best <= 1e-300 {
            break;
        }
        let pick = norms
            .iter()
            .position(|v| *v >= best * (1.0 - 1e-9))
            .unwrap_or(0);
        let mut q = cols[pick].clone() / norms[pick];
        q.iter_mut().for_each(|v| {
            if v.abs() < 1e-13 {
                *v = 0.0
            }
        });
        q /= q.norm();
        for c in cols.iter_mut() {
            let d = q.dot(c);
            c.axpy(-d, &q, 1.0);
        }
        basis.push(q);
    }
    if basis.is_empty() {
        return DMatrix::zeros(n, 0);
    }
    DMatrix::from_columns(&basis)
}

/// Orthonormal basis of the span of the given columns.
pub fn orthonormal_span(span: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, r) = range_projector(span, 1e-14);
    basis_from_projector(&p, r)
}

/// Orthonormal basis of the orthogonal complement of the span of `span`.
pub fn orthogonal_complement(span: &DMatrix<f64>) -> DMatrix<f64> {
    let n = span.nrows();
    let (p, r) = range_projector(span, 1e-14);
    let q = DMatrix::identity(n, n) - p;
    basis_from_projector(&q, n - r)
}

/// Matrix sign function by scaled Newton iteration.
pub fn matrix_sign(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(a.clone());
    }
    let mut s = a.clone();
    for _ in 0..100 {
        let inv = s.clone().try_inverse().ok_or_else(|| {
            Error::DefectiveClustering("sign iteration hit a singular iterate".into())
        })?;
        // determinant scaling speeds up the early iterations
        let det = s.determinant().abs();
        let g = if det > 0.0 && det.is_finite() {
            det.powf(-1.0 / n as f64)
        } else {
            1.0
        };
        let next = (&s * g + &inv / g) * 0.5;
        let diff = (&next - &s).norm();
        let scale = next.norm().max(1.0);
        s = next;
        if diff <= 1e-14 * scale {
            break;
        }
    }
    // a few unscaled polishing steps
    for _ in 0..3 {
        let inv = s
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::DefectiveClustering("singular sign iterate".into()))?;
        s = (&s + inv) * 0.5;
    }
    let resid = (&s * &s - DMatrix::identity(n, n)).norm();
    if resid > 1e-8 {
        return Err(Error::DefectiveClustering(format!(
            "sign iteration did not converge (|S^2 - I| = {resid:e})"
        )));
    }
    Ok(s)
}

/// Spectral projector onto the generalized eigenspaces with real part > `shift`.
pub fn projector_right_of(a: &DMatrix<f64>, shift: f64) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * shift;
    let s = matrix_sign(&shifted)?;
    Ok((DMatrix::identity(n, n) + s) * 0.5)
}

pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.nrows() == 0 {
        return a.clone();
    }
    a.clone().exp()
}

/// Least-squares solve via SVD.
pub fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone()
        .svd(true, true)
        .solve(b, 1e-14)
        .map_err(|e| Error::InvalidArgument(e.to_string()))
}
