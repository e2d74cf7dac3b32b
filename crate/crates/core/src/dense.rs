//! Dense matrix helpers with a fixed summation order.
//!
//! Every product here accumulates along ascending indices with a plain
//! left-to-right fold. The distributed protocol replays the same sums over
//! node-local submatrices; skipping structural zeros does not perturb an
//! IEEE sum, so local and global results agree bit for bit. Do not swap
//! these loops for a blocked/SIMD multiply.

use ndarray::Array2;

use crate::error::{Error, Result};

/// C = A * B with the canonical i,j,k loop order.
pub fn mat_mul(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, k1) = a.dim();
    let (k2, m) = b.dim();
    assert_eq!(k1, k2, "inner dimensions must agree");
    let mut c = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = 0.0;
            for k in 0..k1 {
                acc += a[[i, k]] * b[[k, j]];
            }
            c[[i, j]] = acc;
        }
    }
    c
}

/// M^k by successive left multiplication: (((M*M)*M)...*M).
///
/// The association matters for bit-exact agreement with the node-local
/// computation; do not use exponentiation by squaring.
pub fn mat_power(m: &Array2<f64>, k: usize) -> Array2<f64> {
    assert!(k >= 1);
    let mut acc = m.clone();
    for _ in 1..k {
        acc = mat_mul(&acc, m);
    }
    acc
}

/// y = M x, rows folded in ascending column order.
pub fn mat_vec(m: &Array2<f64>, x: &[f64]) -> Vec<f64> {
    let (n, cols) = m.dim();
    assert_eq!(cols, x.len());
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..cols {
            acc += m[[i, j]] * x[j];
        }
        y[i] = acc;
    }
    y
}

/// Largest absolute entry.
pub fn max_abs(m: &Array2<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest absolute asymmetry max_ij |m_ij - m_ji|.
pub fn max_asymmetry(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// Reject non-square or visibly asymmetric input.
pub fn require_symmetric(m: &Array2<f64>) -> Result<()> {
    let (rows, cols) = m.dim();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    let tol = 1e-9 * max_abs(m).max(1.0);
    let asym = max_asymmetry(m);
    if asym > tol {
        return Err(Error::NotSymmetric { asym, tol });
    }
    Ok(())
}
