//! Continuous Lyapunov equation `A X + X A^T + Q = 0` by Bartels-Stewart.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::schur::{complex_schur, spectral_abscissa, to_complex};
use crate::error::{Error, Result};
use crate::statespace::CMatrix;

pub fn solve_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || q.shape() != (n, n) {
        return Err(Error::DimensionMismatch {
            context: "Lyapunov equation".into(),
            expected: format!("{n}x{n}"),
            found: format!("a {}x{}, q {}x{}", a.nrows(), a.ncols(), q.nrows(), q.ncols()),
        });
    }
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let abscissa = spectral_abscissa(a);
    if !(abscissa < 0.0) {
        return Err(Error::NotHurwitz {
            max_real_part: abscissa,
        });
    }

    // A = U T U^H, Y = U^H X U:  T Y + Y T^H = -U^H Q U.
    let (u, t) = complex_schur(to_complex(a));
    let c: CMatrix = u.adjoint() * to_complex(q) * &u;
    let mut y = CMatrix::zeros(n, n);
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            let mut acc = -c[(i, j)];
            for k in (i + 1)..n {
                acc -= t[(i, k)] * y[(k, j)];
            }
            for k in (j + 1)..n {
                acc -= y[(i, k)] * t[(j, k)].conj();
            }
            let denom: Complex64 = t[(i, i)] + t[(j, j)].conj();
            y[(i, j)] = acc / denom;
        }
    }
    let x = (&u * y * u.adjoint()).map(|z| z.re);
    Ok((&x + x.transpose()) * 0.5)
}
