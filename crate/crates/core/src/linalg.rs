//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Mat) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let sym = symmetrize(m);
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn lambda_max(m: &Mat) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

pub fn lambda_min(m: &Mat) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

/// `(m + mᵀ) / 2`, exactly symmetric.
pub fn symmetrize(m: &Mat) -> Mat {
    let n = m.nrows();
    let mut out = m.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

/// Induced 2-norm (largest singular value).
pub fn spectral_norm(m: &Mat) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0f64, |acc, s| acc.max(*s))
}

/// Moore-Penrose pseudoinverse with relative singular-value cutoff.
pub fn pinv(m: &Mat) -> Mat {
    let (r, c) = m.shape();
    if r == 0 || c == 0 {
        return Mat::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |a, s| a.max(*s));
    let cutoff = smax * 1e-12 * (r.max(c) as f64);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let mut out = Mat::zeros(c, r);
    for (k, s) in svd.singular_values.iter().enumerate() {
        if *s > cutoff {
            out += (vt.row(k).transpose() / *s) * u.column(k).transpose();
        }
    }
    out
}

/// Numerical rank from singular values, relative tolerance `rtol`.
pub fn rank(m: &Mat, rtol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0f64, |a, s| a.max(*s));
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > rtol * smax).count()
}

/// Householder QR with column pivoting, `a[:, perm] = q * r`, with the full
/// square `q`.
pub struct PivotedQr {
    pub q: Mat,
    pub r: Mat,
    pub perm: Vec<usize>,
}

impl PivotedQr {
    pub fn new(a: &Mat) -> Self {
        let (m, n) = a.shape();
        let mut r = a.clone();
        let mut q = Mat::identity(m, m);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut norms: Vec<f64> = (0..n).map(|j| r.column(j).norm_squared()).collect();
        let steps = m.min(n);
        for k in 0..steps {
            // pivot: remaining column with largest norm (recomputed, cheap at our sizes)
            for (j, nj) in norms.iter_mut().enumerate().skip(k) {
                *nj = r.view((k, j), (m - k, 1)).norm_squared();
            }
            let (pj, _) = (k..n).fold((k, -1.0), |best, j| {
                if norms[j] > best.1 {
                    (j, norms[j])
                } else {
                    best
                }
            });
            if pj != k {
                r.swap_columns(k, pj);
                perm.swap(k, pj);
                norms.swap(k, pj);
            }
            let x = r.view((k, k), (m - k, 1)).clone_owned();
            let alpha = x.norm();
            if alpha == 0.0 {
                continue;
            }
            let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
            let mut v = x;
            v[0] += sign * alpha;
            let vnorm2 = v.norm_squared();
            if vnorm2 == 0.0 {
                continue;
            }
            // r[k.., k..] -= 2 v (vᵀ r) / (vᵀv)
            {
                let mut block = r.view_mut((k, k), (m - k, n - k));
                let w = block.tr_mul(&v) * (2.0 / vnorm2);
                block -= &v * w.transpose();
            }
            for i in (k + 1)..m {
                r[(i, k)] = 0.0;
            }
            // q[:, k..] -= 2 (q v) vᵀ / (vᵀv)
            {
                let mut block = q.view_mut((0, k), (m, m - k));
                let w = &block * &v * (2.0 / vnorm2);
                block -= w * v.transpose();
            }
        }
        PivotedQr { q, r, perm }
    }

    /// Number of diagonal entries of `r` above `rtol · |r₀₀|`.
    pub fn rank(&self, rtol: f64) -> usize {
        let steps = self.r.nrows().min(self.r.ncols());
        if steps == 0 {
            return 0;
        }
        let r00 = self.r[(0, 0)].abs();
        if r00 == 0.0 {
            return 0;
        }
        (0..steps)
            .take_while(|&i| self.r[(i, i)].abs() > rtol * r00)
            .count()
    }
}

/// Column-stacked block diagonal.
pub fn block_diag(blocks: &[Mat]) -> Mat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

/// Builds a matrix from a row-major nested list.
pub fn from_rows(rows: &[Vec<f64>]) -> Mat {
    let r = rows.len();
    let c = rows.first().map(|v| v.len()).unwrap_or(0);
    Mat::from_fn(r, c, |i, j| rows[i][j])
}

pub fn to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Eigenvalues of a general real matrix (complex pairs as `(re, im)`).
pub fn eigenvalues(m: &Mat) -> Vec<(f64, f64)> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|c| (c.re, c.im))
        .collect()
}

pub fn is_hurwitz(m: &Mat) -> bool {
    eigenvalues(m).iter().all(|(re, _)| *re < 0.0)
}
