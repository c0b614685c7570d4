//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{PesinError, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Second derivative of a map R^d_in -> R^d_out.
///
/// Entry `(i, j, k)` is the mixed partial of output `i` with respect to inputs `j` and `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    dim_out: usize,
    dim_in: usize,
    data: Vec<f64>,
}

impl Hessian {
    pub fn zeros(dim_out: usize, dim_in: usize) -> Self {
        Self {
            dim_out,
            dim_in,
            data: vec![0.0; dim_out * dim_in * dim_in],
        }
    }

    pub fn dim_out(&self) -> usize {
        self.dim_out
    }

    pub fn dim_in(&self) -> usize {
        self.dim_in
    }

    #[inline]
    fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dim_in + j) * self.dim_in + k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let ix = self.idx(i, j, k);
        self.data[ix] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let ix = self.idx(i, j, k);
        self.data[ix] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Bilinear form `H[u, v]`.
    pub fn apply(&self, u: &Vector, v: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim_out);
        for i in 0..self.dim_out {
            let mut acc = 0.0;
            for j in 0..self.dim_in {
                for k in 0..self.dim_in {
                    acc += self.get(i, j, k) * u[j] * v[k];
                }
            }
            out[i] = acc;
        }
        out
    }

    /// Spectral norm of the `dim_out x dim_in^2` unfolding. It bounds the
    /// bilinear operator norm from above and equals it when `dim_in == 1`.
    pub fn norm(&self) -> f64 {
        if self.data.iter().all(|v| *v == 0.0) {
            return 0.0;
        }
        let m = Matrix::from_row_slice(self.dim_out, self.dim_in * self.dim_in, &self.data);
        op_norm(&m)
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    /// Second derivative of `g ∘ f` from the derivatives of `f` (inner) and `g` (outer).
    pub fn compose(
        outer_jac: &Matrix,
        outer_hess: &Hessian,
        inner_jac: &Matrix,
        inner_hess: &Hessian,
    ) -> Hessian {
        let d_out = outer_hess.dim_out;
        let d_mid = inner_hess.dim_out;
        let d_in = inner_hess.dim_in;
        let mut out = Hessian::zeros(d_out, d_in);
        for i in 0..d_out {
            for j in 0..d_in {
                for k in j..d_in {
                    let mut acc = 0.0;
                    for m in 0..d_mid {
                        acc += outer_jac[(i, m)] * inner_hess.get(m, j, k);
                    }
                    for m in 0..d_mid {
                        let a = inner_jac[(m, j)];
                        if a == 0.0 {
                            continue;
                        }
                        for p in 0..d_mid {
                            acc += outer_hess.get(i, m, p) * a * inner_jac[(p, k)];
                        }
                    }
                    out.set(i, j, k, acc);
                    out.set(i, k, j, acc);
                }
            }
        }
        out
    }

    /// Second derivative of `f^{-1}` at `f(x)`, given `Df(x)^{-1}` and `D²f(x)`.
    pub fn of_inverse(inv_jac: &Matrix, hess: &Hessian) -> Hessian {
        let d = hess.dim_in;
        let mut out = Hessian::zeros(d, d);
        // D²g[u,v] = -Dg · D²f[Dg u, Dg v]
        let mut tmp = vec![0.0; d];
        for j in 0..d {
            for k in j..d {
                for (i, t) in tmp.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for m in 0..d {
                        for p in 0..d {
                            acc += hess.get(i, m, p) * inv_jac[(m, j)] * inv_jac[(p, k)];
                        }
                    }
                    *t = acc;
                }
                for i in 0..d {
                    let mut acc = 0.0;
                    for (m, t) in tmp.iter().enumerate() {
                        acc -= inv_jac[(i, m)] * t;
                    }
                    out.set(i, j, k, acc);
                    out.set(i, k, j, acc);
                }
            }
        }
        out
    }
}

/// Largest singular value.
pub fn op_norm(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    if m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().max()
}

/// Smallest singular value of a tall (or square) matrix, i.e. the co-norm
/// `inf_{|v|=1} |M v|`.
pub fn co_norm(m: &Matrix) -> f64 {
    if m.ncols() == 0 {
        return f64::INFINITY;
    }
    if m.ncols() == 1 {
        return m.norm();
    }
    m.singular_values().min()
}

/// Orthonormal basis of the column span (assumes full column rank).
pub fn orthonormalize(m: &Matrix) -> Result<Matrix> {
    if m.ncols() == 0 {
        return Ok(Matrix::zeros(m.nrows(), 0));
    }
    let qr = m.clone().qr();
    let r = qr.r();
    let scale = m.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    for i in 0..m.ncols() {
        if r[(i, i)].abs() <= 1e-13 * scale.max(1e-300) {
            return Err(PesinError::Degeneracy(format!(
                "rank-deficient basis (column {i})"
            )));
        }
    }
    Ok(qr.q().columns(0, m.ncols()).into_owned())
}

/// Orthonormal basis of the orthogonal complement of the span of an orthonormal basis.
pub fn complement(basis: &Matrix, dim: usize) -> Matrix {
    let k = basis.ncols();
    if k == 0 {
        return Matrix::identity(dim, dim);
    }
    if k == dim {
        return Matrix::zeros(dim, 0);
    }
    let proj = Matrix::identity(dim, dim) - basis * basis.transpose();
    let svd = proj.svd(true, false);
    let u = svd.u.expect("svd u");
    // Projector eigenvalues are 1 on the complement, 0 on the span.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let cols: Vec<_> = order[..dim - k].iter().map(|&i| u.column(i).into_owned()).collect();
    Matrix::from_columns(&cols)
}

/// Smallest principal angle between two subspaces given by orthonormal bases.
pub fn principal_angle(e: &Matrix, h: &Matrix) -> f64 {
    if e.ncols() == 0 || h.ncols() == 0 {
        return std::f64::consts::FRAC_PI_2;
    }
    let m = e.transpose() * h;
    let s = op_norm(&m).min(1.0);
    s.acos()
}

pub fn log_abs_det(m: &Matrix) -> f64 {
    let lu = m.clone().lu();
    lu.u().diagonal().iter().map(|v| v.abs().ln()).sum()
}

pub fn all_finite(v: &Vector) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Row-major nested vectors, for JSON output.
pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Solves `m x = b` by SVD least squares.
pub fn lstsq(m: &Matrix, b: &Matrix) -> Result<Matrix> {
    let svd = m.clone().svd(true, true);
    svd.solve(b, 1e-13)
        .map_err(|e| PesinError::Degeneracy(format!("least squares: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_between_lines() {
        let e = Matrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let h = Matrix::from_column_slice(2, 1, &[0.3f64.cos(), 0.3f64.sin()]);
        assert!((principal_angle(&e, &h) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn complement_is_orthogonal() {
        let b = orthonormalize(&Matrix::from_column_slice(3, 1, &[1.0, 2.0, 2.0])).unwrap();
        let c = complement(&b, 3);
        assert_eq!(c.ncols(), 2);
        assert!((b.transpose() * &c).norm() < 1e-12);
        assert!((c.transpose() * &c - Matrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn inverse_hessian_of_scalar_map() {
        // f(x) = x + x^2/2 at x=0: f' = 1, f'' = 1 -> (f^{-1})'' = -1
        let mut h = Hessian::zeros(1, 1);
        h.set(0, 0, 0, 1.0);
        let inv = Hessian::of_inverse(&Matrix::identity(1, 1), &h);
        assert!((inv.get(0, 0, 0) + 1.0).abs() < 1e-15);
    }

    #[test]
    fn compose_matches_chain_rule_in_1d() {
        // g(y) = y^2, f(x) = 3x + x^2 at x = 1: f = 4, f' = 5, f'' = 2
        // (g∘f)'' = g''(f) f'^2 + g'(f) f'' = 2*25 + 8*2 = 66
        let mut hf = Hessian::zeros(1, 1);
        hf.set(0, 0, 0, 2.0);
        let mut hg = Hessian::zeros(1, 1);
        hg.set(0, 0, 0, 2.0);
        let jf = Matrix::from_element(1, 1, 5.0);
        let jg = Matrix::from_element(1, 1, 8.0);
        let h = Hessian::compose(&jg, &hg, &jf, &hf);
        assert!((h.get(0, 0, 0) - 66.0).abs() < 1e-12);
    }
}
