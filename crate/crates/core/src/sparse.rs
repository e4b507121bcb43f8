//! Small helpers on top of `nalgebra_sparse` CSR matrices.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

/// Builds a CSR matrix from `(row, col, value)` triplets; duplicates are summed.
pub fn csr_from_triplets(n_rows: usize, n_cols: usize, triplets: &[(usize, usize, f64)]) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(n_rows, n_cols);
    for &(i, j, v) in triplets {
        coo.push(i, j, v);
    }
    CsrMatrix::from(&coo)
}

pub fn spmv(a: &CsrMatrix<f64>, x: &[f64]) -> DVector<f64> {
    debug_assert_eq!(a.ncols(), x.len());
    let mut y = DVector::zeros(a.nrows());
    for (i, row) in a.row_iter().enumerate() {
        let mut acc = 0.0;
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            acc += v * x[j];
        }
        y[i] = acc;
    }
    y
}

/// `A · X` for sparse `A` and dense `X`.
pub fn spmm(a: &CsrMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.ncols(), x.nrows());
    let mut y = DMatrix::zeros(a.nrows(), x.ncols());
    for c in 0..x.ncols() {
        let xc = x.column(c);
        for (i, row) in a.row_iter().enumerate() {
            let mut acc = 0.0;
            for (&j, &v) in row.col_indices().iter().zip(row.values()) {
                acc += v * xc[j];
            }
            y[(i, c)] = acc;
        }
    }
    y
}

/// `Uᵀ · A` for dense `U` and sparse `A`.
pub fn dense_t_sparse(u: &DMatrix<f64>, a: &CsrMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(u.nrows(), a.nrows());
    let mut y = DMatrix::zeros(u.ncols(), a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        let ui = u.row(i);
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            for k in 0..u.ncols() {
                y[(k, j)] += v * ui[k];
            }
        }
    }
    y
}

pub fn to_dense(a: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for (i, row) in a.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            d[(i, j)] += v;
        }
    }
    d
}

/// Topological order of the rows of a square matrix when its off-diagonal
/// pattern is read as "row depends on column". `None` if the pattern has a cycle.
pub fn dependency_order(a: &CsrMatrix<f64>) -> Option<Vec<usize>> {
    let n = a.nrows();
    let mut indegree = vec![0usize; n];
    let mut dependents: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, row) in a.row_iter().enumerate() {
        for (&j, &v) in row.col_indices().iter().zip(row.values()) {
            if j != i && v != 0.0 {
                indegree[i] += 1;
                dependents[j].push(i);
            }
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut head = 0;
    while head < order.len() {
        let j = order[head];
        head += 1;
        for &i in &dependents[j] {
            indegree[i] -= 1;
            if indegree[i] == 0 {
                order.push(i);
            }
        }
    }
    (order.len() == n).then_some(order)
}
