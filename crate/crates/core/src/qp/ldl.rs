//! Sparse `LDLᵀ` factorization without pivoting for quasi-definite matrices.
//!
//! Up-looking algorithm driven by the elimination tree; the symbolic part is
//! computed once per sparsity pattern and reused across numeric
//! refactorizations.

use super::csc::CscMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Elimination tree and column counts of `L` for an upper-triangular pattern.
#[derive(Clone, Debug)]
pub struct LdlSymbolic {
    n: usize,
    parent: Vec<usize>,
    lp: Vec<usize>,
    colptr: Vec<usize>,
    rowind: Vec<usize>,
}

impl LdlSymbolic {
    pub fn new(upper: &CscMatrix) -> Result<Self> {
        let n = upper.ncols;
        if upper.nrows != n {
            return Err(Error::Dimension("LDL factorization needs a square matrix".into()));
        }
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in upper.colptr[k]..upper.colptr[k + 1] {
                let mut i = upper.rowind[p];
                if i > k {
                    return Err(Error::Argument("LDL input must be upper triangular".into()));
                }
                while flag[i] != k {
                    if parent[i] == NONE {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }
        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        Ok(LdlSymbolic { n, parent, lp, colptr: upper.colptr.clone(), rowind: upper.rowind.clone() })
    }

    pub fn matches(&self, upper: &CscMatrix) -> bool {
        upper.ncols == self.n && upper.colptr == self.colptr && upper.rowind == self.rowind
    }

    pub fn nnz_l(&self) -> usize {
        self.lp[self.n]
    }
}

/// Numeric factors `L` (unit lower, strictly-lower part stored by column) and `D`.
#[derive(Clone, Debug)]
pub struct LdlFactor {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Factorizes a matrix whose upper triangle has the symbolic pattern.
    pub fn new(sym: &LdlSymbolic, upper: &CscMatrix) -> Result<Self> {
        if !sym.matches(upper) {
            return Err(Error::Argument("matrix pattern differs from the symbolic factorization".into()));
        }
        let n = sym.n;
        let nnz = sym.nnz_l();
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0; nnz];
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in upper.colptr[k]..upper.colptr[k + 1] {
                let mut i = upper.rowind[p];
                y[i] += upper.values[p];
                let mut len = 0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = sym.parent[i];
                }
                while len > 0 {
                    top -= 1;
                    len -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let start = sym.lp[i];
                for p in start..start + lnz[i] {
                    y[li[p]] -= lx[p] * yi;
                }
                let l_ki = yi / d[i];
                d[k] -= l_ki * yi;
                li[start + lnz[i]] = k;
                lx[start + lnz[i]] = l_ki;
                lnz[i] += 1;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(Error::Numerical(format!("zero or non-finite pivot at column {k} of LDL factorization")));
            }
        }
        Ok(LdlFactor { n, lp: sym.lp.clone(), li, lx, d })
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    pub fn positive_pivots(&self) -> usize {
        self.d.iter().filter(|&&v| v > 0.0).count()
    }

    /// Solves `L D Lᵀ x = b` in place.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        for i in 0..self.n {
            let xi = x[i];
            for p in self.lp[i]..self.lp[i + 1] {
                x[self.li[p]] -= self.lx[p] * xi;
            }
        }
        for i in 0..self.n {
            x[i] /= self.d[i];
        }
        for i in (0..self.n).rev() {
            let mut s = x[i];
            for p in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[p] * x[self.li[p]];
            }
            x[i] = s;
        }
    }
}
