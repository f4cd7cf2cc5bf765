use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

pub(crate) fn cholesky(a: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a).ok_or_else(|| Error::Numeric(format!("{what} is not positive definite")))
}

/// Symmetric eigendecomposition with eigenpairs sorted by decreasing eigenvalue.
pub(crate) fn sorted_eigen(a: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = (&a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Flips the sign of each column so its first non-negligible entry is positive.
pub(crate) fn canonical_signs(m: &mut DMatrix<f64>) {
    for mut col in m.column_iter_mut() {
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if let Some(first) = col.iter().find(|v| v.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE)) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
    }
}

/// Replaces eigenvalues below `floor` and rebuilds the matrix.
pub(crate) fn floor_eigenvalues(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let (mut values, vectors) = sorted_eigen(a.clone());
    for v in values.iter_mut() {
        *v = v.max(floor);
    }
    &vectors * DMatrix::from_diagonal(&values) * vectors.transpose()
}

/// `log det` of a positive-definite matrix via its Cholesky factor.
pub(crate) fn log_det_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum()
}
