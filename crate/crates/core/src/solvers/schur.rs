//! Complex Schur factorization with eigenvalue reordering.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::statespace::CMatrix;

pub(crate) fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}

/// `m = q t q^H` with `t` upper triangular and `q` unitary.
pub(crate) fn complex_schur(m: CMatrix) -> (CMatrix, CMatrix) {
    let (q, mut t) = m.schur().unpack();
    let n = t.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            t[(i, j)] = Complex64::new(0.0, 0.0);
        }
    }
    (q, t)
}

/// Plane rotation `[c s; -conj(s) c]` mapping `(f, g)` to `(r, 0)`.
fn givens(f: Complex64, g: Complex64) -> (f64, Complex64) {
    let zero = Complex64::new(0.0, 0.0);
    if g == zero {
        return (1.0, zero);
    }
    if f == zero {
        return (0.0, g.conj() / g.norm());
    }
    let fa = f.norm();
    let norm = fa.hypot(g.norm());
    (fa / norm, (f / fa) * g.conj() / norm)
}

/// Apply `[x; y] <- [c s; -conj(s) c] [x; y]` element-wise.
fn rotate(x: &mut Complex64, y: &mut Complex64, c: f64, s: Complex64) {
    let tx = *x * c + s * *y;
    *y = *y * c - s.conj() * *x;
    *x = tx;
}

/// Swap the adjacent diagonal entries `k` and `k + 1` of the triangular `t`,
/// updating the Schur vectors `q`.
fn swap_adjacent(q: &mut CMatrix, t: &mut CMatrix, k: usize) {
    let n = t.nrows();
    let t11 = t[(k, k)];
    let t22 = t[(k + 1, k + 1)];
    let (c, s) = givens(t[(k, k + 1)], t22 - t11);
    for j in (k + 2)..n {
        let (mut x, mut y) = (t[(k, j)], t[(k + 1, j)]);
        rotate(&mut x, &mut y, c, s);
        t[(k, j)] = x;
        t[(k + 1, j)] = y;
    }
    for i in 0..k {
        let (mut x, mut y) = (t[(i, k)], t[(i, k + 1)]);
        rotate(&mut x, &mut y, c, s.conj());
        t[(i, k)] = x;
        t[(i, k + 1)] = y;
    }
    t[(k, k)] = t22;
    t[(k + 1, k + 1)] = t11;
    for i in 0..n {
        let (mut x, mut y) = (q[(i, k)], q[(i, k + 1)]);
        rotate(&mut x, &mut y, c, s.conj());
        q[(i, k)] = x;
        q[(i, k + 1)] = y;
    }
}

/// Move every diagonal entry satisfying `select` to the leading positions,
/// keeping relative order. Returns the number of selected eigenvalues.
pub(crate) fn reorder(
    q: &mut CMatrix,
    t: &mut CMatrix,
    select: impl Fn(Complex64) -> bool,
) -> usize {
    let n = t.nrows();
    let mut placed = 0;
    for i in 0..n {
        if select(t[(i, i)]) {
            for k in (placed..i).rev() {
                swap_adjacent(q, t, k);
            }
            placed += 1;
        }
    }
    placed
}

/// Eigenvalues of a real matrix.
pub(crate) fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.clone().complex_eigenvalues().iter().copied().collect()
}

/// Largest real part of the eigenvalues of `m`.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m)
        .into_iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn reconstruct(q: &CMatrix, t: &CMatrix) -> CMatrix {
        q * t * q.adjoint()
    }

    #[test]
    fn reorder_moves_stable_block_first_and_preserves_similarity() {
        let m = dmatrix![
            1.0, 2.0, 0.5, -1.0;
            0.3, -2.0, 1.0, 0.0;
            -0.7, 0.2, 0.5, 1.5;
            1.0, 0.0, -1.0, -3.0
        ];
        let mc = to_complex(&m);
        let (mut q, mut t) = complex_schur(mc.clone());
        let count = reorder(&mut q, &mut t, |z| z.re < 0.0);
        let stable = eigenvalues(&m).iter().filter(|z| z.re < 0.0).count();
        assert_eq!(count, stable);
        for i in 0..count {
            assert!(t[(i, i)].re < 0.0);
        }
        for i in count..4 {
            assert!(t[(i, i)].re >= 0.0);
        }
        let err = (reconstruct(&q, &t) - mc).norm();
        assert!(err < 1e-12, "reconstruction error {err}");
        let unitary = (q.adjoint() * &q - CMatrix::identity(4, 4)).norm();
        assert!(unitary < 1e-13);
    }

    #[test]
    fn spectral_abscissa_of_diagonal() {
        assert_eq!(spectral_abscissa(&dmatrix![-1.0, 0.0; 0.0, -3.0]), -1.0);
    }
}
