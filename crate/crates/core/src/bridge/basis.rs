//! Rank-revealing basis selection by Gaussian elimination with complete
//! pivoting.
//!
//! On N data points every layer-ℓ function is determined by its N values, so a
//! maximal set of data rows with independent evaluation functionals, paired
//! with the same number of atoms whose Gram block K̂ is invertible, spans every
//! column of the Gram matrix. Elimination stops at the first pivot smaller than
//! `pivot_threshold` times the first pivot; the r leading pivot rows and columns
//! form the basis and the LU factors of K̂ are kept for interpolation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

pub const DEFAULT_PIVOT_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisSelection {
    /// Selected data rows, in pivot order.
    pub row_indices: Vec<usize>,
    /// Selected atoms (Gram columns), in pivot order.
    pub col_indices: Vec<usize>,
    /// K̂ = G[row_indices, col_indices].
    pub khat: Array2<f64>,
    pub pivot_threshold: f64,
    /// Magnitudes of the accepted pivots, non-increasing in exact arithmetic.
    pub pivots: Vec<f64>,
    lower: Array2<f64>,
    upper: Array2<f64>,
}

impl BasisSelection {
    pub fn rank(&self) -> usize {
        self.row_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_indices.is_empty()
    }
}

/// Complete-pivoting elimination on `g` (N × m). Ties in pivot magnitude go to
/// the lowest original (row, column) pair. An all-zero matrix gives r = 0.
pub fn select_basis(g: ArrayView2<f64>, pivot_threshold: f64) -> Result<BasisSelection> {
    if !(pivot_threshold >= 0.0 && pivot_threshold < 1.0) {
        return Err(Error::contract(format!(
            "pivot threshold must lie in [0, 1), got {pivot_threshold}"
        )));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::contract("Gram matrix has non-finite entries"));
    }
    let (n, m) = g.dim();
    let mut a = g.to_owned();
    let mut rows: Vec<usize> = (0..n).collect();
    let mut cols: Vec<usize> = (0..m).collect();
    let mut pivots = Vec::new();
    let mut first = 0.0;

    for k in 0..n.min(m) {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in k..n {
            for j in k..m {
                let mag = a[[i, j]].abs();
                let better = match best {
                    None => true,
                    Some((bm, bi, bj)) => mag > bm || (mag == bm && (rows[i], cols[j]) < (rows[bi], cols[bj])),
                };
                if better {
                    best = Some((mag, i, j));
                }
            }
        }
        let (mag, pi, pj) = best.expect("non-empty trailing block");
        if mag == 0.0 || (k > 0 && mag < pivot_threshold * first) {
            break;
        }
        if k == 0 {
            first = mag;
        }
        if pi != k {
            swap_rows(&mut a, k, pi);
            rows.swap(k, pi);
        }
        if pj != k {
            swap_cols(&mut a, k, pj);
            cols.swap(k, pj);
        }
        let pivot = a[[k, k]];
        for i in k + 1..n {
            let l = a[[i, k]] / pivot;
            a[[i, k]] = l;
            if l != 0.0 {
                for j in k + 1..m {
                    a[[i, j]] -= l * a[[k, j]];
                }
            }
        }
        pivots.push(mag);
    }

    let r = pivots.len();
    let mut lower = Array2::eye(r);
    let mut upper = Array2::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            if j < i {
                lower[[i, j]] = a[[i, j]];
            } else {
                upper[[i, j]] = a[[i, j]];
            }
        }
    }
    rows.truncate(r);
    cols.truncate(r);
    let khat = Array2::from_shape_fn((r, r), |(i, j)| g[[rows[i], cols[j]]]);
    Ok(BasisSelection {
        row_indices: rows,
        col_indices: cols,
        khat,
        pivot_threshold,
        pivots,
        lower,
        upper,
    })
}

fn swap_rows(a: &mut Array2<f64>, i: usize, j: usize) {
    for c in 0..a.ncols() {
        a.swap([i, c], [j, c]);
    }
}

fn swap_cols(a: &mut Array2<f64>, i: usize, j: usize) {
    for r in 0..a.nrows() {
        a.swap([r, i], [r, j]);
    }
}

/// Solves K̂ c = values with the factors kept from elimination. `values` is
/// ordered like `sel.row_indices` and `c` like `sel.col_indices`.
pub fn interpolation_coefficients(sel: &BasisSelection, values: ArrayView1<f64>) -> Result<Array1<f64>> {
    let r = sel.rank();
    if r == 0 {
        return if values.iter().all(|&v| v == 0.0) {
            Ok(Array1::zeros(0))
        } else {
            Err(Error::Infeasible)
        };
    }
    if values.len() != r {
        return Err(Error::contract(format!("expected {r} values, got {}", values.len())));
    }
    let mut y = values.to_owned();
    for i in 0..r {
        let mut s = y[i];
        for j in 0..i {
            s -= sel.lower[[i, j]] * y[j];
        }
        y[i] = s;
    }
    for i in (0..r).rev() {
        let mut s = y[i];
        for j in i + 1..r {
            s -= sel.upper[[i, j]] * y[j];
        }
        y[i] = s / sel.upper[[i, i]];
    }
    Ok(y)
}

/// Expresses a function known by its values on all N rows in the selected
/// basis. `basis` holds the N × r selected Gram columns in pivot order.
///
/// Returns the coefficients, the largest absolute residual over all rows and the
/// magnitude scale the residual should be compared against.
pub fn reexpress(
    sel: &BasisSelection,
    basis: ArrayView2<f64>,
    values: ArrayView1<f64>,
) -> Result<(Array1<f64>, f64, f64)> {
    let at_rows: Array1<f64> = sel.row_indices.iter().map(|&i| values[i]).collect();
    let coeffs = match interpolation_coefficients(sel, at_rows.view()) {
        Err(Error::Infeasible) => Array1::zeros(0),
        other => other?,
    };
    let mut residual: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (row, &target) in basis.rows().into_iter().zip(values.iter()) {
        let mut fit = 0.0;
        let mut mag = 0.0;
        for (g, c) in row.iter().zip(coeffs.iter()) {
            fit += g * c;
            mag += (g * c).abs();
        }
        residual = residual.max((fit - target).abs());
        scale = scale.max(mag).max(target.abs());
    }
    Ok((coeffs, residual, scale))
}
