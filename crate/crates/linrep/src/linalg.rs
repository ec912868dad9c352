//! Small dense-matrix helpers shared across the crate.
//!
//! Conventions: all sampling fills column-major (the storage order), so a
//! fixed generator state yields a fixed byte layout. Reductions that sum many
//! columns use an explicit fixed-shape pairwise tree, making the result
//! independent of how work would be chunked by a parallel dispatcher.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// rows×cols matrix of i.i.d. standard normals, drawn column-major.
pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = rng.sample(StandardNormal);
        }
    }
    m
}

/// Length-n vector of i.i.d. standard normals.
pub fn normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    let mut v = DVector::zeros(n);
    for i in 0..n {
        v[i] = rng.sample(StandardNormal);
    }
    v
}

/// Refill an existing matrix with i.i.d. standard normals, column-major,
/// consuming the generator exactly like `normal_matrix` of the same shape.
pub fn fill_normal_matrix<R: Rng + ?Sized>(m: &mut DMatrix<f64>, rng: &mut R) {
    for e in m.as_mut_slice() {
        *e = rng.sample(StandardNormal);
    }
}

/// Refill an existing vector with i.i.d. standard normals.
pub fn fill_normal_vector<R: Rng + ?Sized>(v: &mut DVector<f64>, rng: &mut R) {
    for e in v.as_mut_slice() {
        *e = rng.sample(StandardNormal);
    }
}

/// Uniform draw on the sphere of the given radius (zero radius ⇒ zero vector).
pub fn sphere_vector<R: Rng + ?Sized>(n: usize, radius: f64, rng: &mut R) -> DVector<f64> {
    assert!(radius >= 0.0, "sphere radius must be nonnegative");
    if radius == 0.0 {
        return DVector::zeros(n);
    }
    loop {
        let v = normal_vector(n, rng);
        let norm = v.norm();
        if norm > 1e-12 {
            return v * (radius / norm);
        }
    }
}

/// rows×cols matrix with orthonormal columns: Q factor of a Gaussian draw,
/// with the sign of each R diagonal entry fixed positive so Q is a
/// deterministic function of the draw.
pub fn orthonormal_columns<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    assert!(cols <= rows, "orthonormal_columns needs cols <= rows");
    loop {
        let g = normal_matrix(rows, cols, rng);
        let qr = g.qr();
        let r = qr.r();
        if (0..cols).any(|j| r[(j, j)].abs() < 1e-12) {
            continue; // degenerate draw, probability zero
        }
        let mut q = qr.q();
        for j in 0..cols {
            if r[(j, j)] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        return q;
    }
}

/// Orthonormal basis of the orthogonal complement of col(q), where q has
/// orthonormal columns. Deterministic: candidates are the identity basis
/// vectors, orthogonalized twice against the accepted set.
pub fn orthonormal_complement(q: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, k) = (q.nrows(), q.ncols());
    assert!(k <= d);
    let mut basis: Vec<DVector<f64>> = (0..k).map(|j| q.column(j).into_owned()).collect();
    let mut complement: Vec<DVector<f64>> = Vec::with_capacity(d - k);
    for cand in 0..d {
        if complement.len() == d - k {
            break;
        }
        let mut v = DVector::zeros(d);
        v[cand] = 1.0;
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            basis.push(v.clone());
            complement.push(v);
        }
    }
    assert_eq!(complement.len(), d - k, "complement construction lost rank");
    DMatrix::from_columns(&complement)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> DVector<f64> {
    let mut ev: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    DVector::from_vec(ev)
}

/// Squared singular values of a rectangular matrix, ascending
/// (eigenvalues of the smaller Gram matrix, clamped at zero).
pub fn sv_squared(a: &DMatrix<f64>) -> DVector<f64> {
    let gram = if a.nrows() <= a.ncols() { a * a.transpose() } else { a.transpose() * a };
    let mut ev = sym_eigenvalues(&gram);
    for x in ev.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    ev
}

/// Largest squared singular value (spectral norm squared).
pub fn spectral_norm_sq(a: &DMatrix<f64>) -> f64 {
    let sv2 = sv_squared(a);
    sv2[sv2.len() - 1]
}

/// Symmetric PSD square root via eigendecomposition (negative eigenvalues
/// from roundoff are clamped to zero).
pub fn spd_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = a.clone().symmetric_eigen();
    let mut vals = eig.eigenvalues;
    for x in vals.iter_mut() {
        *x = x.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Solve the SPD system `a x = b` by Cholesky.
pub fn chol_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Cholesky factorization failed".into()))?;
    Ok(chol.solve(b))
}

/// Inverse of an SPD matrix by Cholesky.
pub fn chol_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("Cholesky factorization failed".into()))?;
    Ok(chol.inverse())
}

/// Sum of the columns of `m` with a fixed pairwise reduction tree.
pub fn pairwise_col_sum(m: &DMatrix<f64>) -> DVector<f64> {
    fn sum_range(m: &DMatrix<f64>, lo: usize, hi: usize) -> DVector<f64> {
        if hi - lo <= 8 {
            let mut acc = m.column(lo).into_owned();
            for j in lo + 1..hi {
                acc += m.column(j);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            sum_range(m, lo, mid) + sum_range(m, mid, hi)
        }
    }
    assert!(m.ncols() > 0);
    sum_range(m, 0, m.ncols())
}

/// Sum of a slice of scalars with the same fixed pairwise tree.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    fn sum_range(xs: &[f64], lo: usize, hi: usize) -> f64 {
        if hi - lo <= 8 {
            xs[lo..hi].iter().sum()
        } else {
            let mid = lo + (hi - lo) / 2;
            sum_range(xs, lo, mid) + sum_range(xs, mid, hi)
        }
    }
    if xs.is_empty() {
        return 0.0;
    }
    sum_range(xs, 0, xs.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSpec;
    use approx::assert_abs_diff_eq;

    const ORTHO_TOL: f64 = 1e-10;

    #[test]
    fn orthonormal_columns_satisfy_gram_identity() {
        let mut rng = RngSpec::new(3).stream("b_star");
        let q = orthonormal_columns(50, 5, &mut rng);
        let gram = q.transpose() * &q;
        assert_abs_diff_eq!(gram, DMatrix::identity(5, 5), epsilon = ORTHO_TOL);
    }

    #[test]
    fn orthonormal_columns_deterministic_for_fixed_stream() {
        let a = orthonormal_columns(20, 4, &mut RngSpec::new(9).stream("b_star"));
        let b = orthonormal_columns(20, 4, &mut RngSpec::new(9).stream("b_star"));
        assert_eq!(a, b);
    }

    #[test]
    fn complement_is_orthonormal_and_orthogonal_to_input() {
        let mut rng = RngSpec::new(5).stream("b_star");
        let q = orthonormal_columns(12, 3, &mut rng);
        let p = orthonormal_complement(&q);
        assert_eq!(p.shape(), (12, 9));
        assert_abs_diff_eq!(p.transpose() * &p, DMatrix::identity(9, 9), epsilon = ORTHO_TOL);
        assert_abs_diff_eq!(q.transpose() * &p, DMatrix::zeros(3, 9), epsilon = ORTHO_TOL);
    }

    #[test]
    fn sv_squared_matches_direct_svd() {
        let mut rng = RngSpec::new(11).stream("features");
        let a = normal_matrix(7, 4, &mut rng);
        let sv = a.clone().svd(false, false).singular_values;
        let sv2 = sv_squared(&a);
        let mut expected: Vec<f64> = sv.iter().map(|s| s * s).collect();
        expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (got, want) in sv2.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-9);
        }
    }

    #[test]
    fn sphere_vector_has_requested_radius() {
        let mut rng = RngSpec::new(2).stream("init");
        let v = sphere_vector(50, 0.3, &mut rng);
        assert_abs_diff_eq!(v.norm(), 0.3, epsilon = 1e-12);
        assert_eq!(sphere_vector(4, 0.0, &mut rng), DVector::zeros(4));
    }

    #[test]
    fn spd_sqrt_squares_back() {
        let mut rng = RngSpec::new(13).stream("features");
        let g = normal_matrix(6, 6, &mut rng);
        let a = &g * g.transpose();
        let s = spd_sqrt(&a);
        assert_abs_diff_eq!(&s * &s, a, epsilon = 1e-9);
    }

    #[test]
    fn pairwise_sums_match_naive() {
        let mut rng = RngSpec::new(17).stream("noise");
        let m = normal_matrix(5, 137, &mut rng);
        let naive = (0..m.ncols()).fold(DVector::zeros(5), |acc, j| acc + m.column(j));
        assert_abs_diff_eq!(pairwise_col_sum(&m), naive, epsilon = 1e-12);
        let xs: Vec<f64> = (0..1001).map(|i| (i as f64 * 0.37).sin()).collect();
        let direct: f64 = xs.iter().sum();
        assert_abs_diff_eq!(pairwise_sum(&xs), direct, epsilon = 1e-9);
    }

    #[test]
    fn chol_solve_recovers_known_solution() {
        let mut rng = RngSpec::new(19).stream("features");
        let g = normal_matrix(8, 8, &mut rng);
        let a = &g * g.transpose() + DMatrix::identity(8, 8);
        let x = normal_vector(8, &mut rng);
        let b = &a * &x;
        let got = chol_solve(&a, &b).unwrap();
        assert_abs_diff_eq!(got, x, epsilon = 1e-9);
    }
}
