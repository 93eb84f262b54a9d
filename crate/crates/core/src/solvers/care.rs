//! Continuous algebraic Riccati equations with cross weighting,
//!
//! `A^T X + X A - (X B + S) R^{-1} (B^T X + S^T) + Q = 0`,
//!
//! solved through the stable invariant subspace of the Hamiltonian matrix.

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::schur::{complex_schur, eigenvalues, reorder, spectral_abscissa, to_complex};
use crate::error::{Error, Result};
use crate::statespace::CMatrix;

pub const RESIDUAL_TOLERANCE: f64 = 1e-8;
/// Relative tolerance of the PBH rank tests.
pub const PBH_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct CareProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub s: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CareSolution {
    pub x: DMatrix<f64>,
    /// `R^{-1} (B^T X + S^T)`.
    pub gain: DMatrix<f64>,
    /// Relative residual `||Res|| / max(1, ||X||)` of the time-normalized problem.
    pub residual_norm: f64,
    /// Largest real part of `eig(A - B gain)`.
    pub closed_loop_spectral_abscissa: f64,
}

impl CareProblem {
    /// Problem without cross weighting.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let s = DMatrix::zeros(a.nrows(), b.ncols());
        Self { a, b, q, r, s }
    }

    pub fn with_cross(mut self, s: DMatrix<f64>) -> Self {
        self.s = s;
        self
    }

    /// The filter problem dual to `(A, C)`: `(A^T, C^T, W, V, S)`.
    pub fn dual(
        a: &DMatrix<f64>,
        c: &DMatrix<f64>,
        w: DMatrix<f64>,
        v: DMatrix<f64>,
        s: DMatrix<f64>,
    ) -> Self {
        Self {
            a: a.transpose(),
            b: c.transpose(),
            q: w,
            r: v,
            s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let m = self.b.ncols();
        let check = |context: &str, mat: &DMatrix<f64>, rows: usize, cols: usize| {
            if mat.shape() != (rows, cols) {
                return Err(Error::DimensionMismatch {
                    context: format!("CARE {context}"),
                    expected: format!("{rows}x{cols}"),
                    found: format!("{}x{}", mat.nrows(), mat.ncols()),
                });
            }
            Ok(())
        };
        check("a", &self.a, n, n)?;
        check("b", &self.b, n, m)?;
        check("q", &self.q, n, n)?;
        check("r", &self.r, m, m)?;
        check("s", &self.s, n, m)?;
        for (name, mat) in [("a", &self.a), ("b", &self.b), ("q", &self.q), ("r", &self.r), ("s", &self.s)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("CARE matrix {name} has non-finite entries")));
            }
        }
        for (name, mat) in [("q", &self.q), ("r", &self.r)] {
            let asym = (mat - mat.transpose()).norm();
            if asym > 1e-12 * mat.norm().max(1.0) {
                return Err(Error::InvalidModel(format!("CARE weight {name} is not symmetric")));
            }
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::InvalidModel("CARE weight r is not positive definite".into()));
        }
        Ok(())
    }

    /// Same problem in the time unit `1 / c`: `(A/c, B/sqrt(c), Q/c, R, S/sqrt(c))`.
    /// The solution `X` is unchanged and the gain scales by `1/sqrt(c)`.
    pub fn rescale_time(&self, c: f64) -> Self {
        let rc = c.sqrt();
        Self {
            a: &self.a / c,
            b: &self.b / rc,
            q: &self.q / c,
            r: self.r.clone(),
            s: &self.s / rc,
        }
    }

    pub fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let r_inv = self.r.clone().try_inverse().expect("validated r");
        let xb_s = x * &self.b + &self.s;
        self.a.transpose() * x + x * &self.a - &xb_s * r_inv * xb_s.transpose() + &self.q
    }
}

fn min_singular_value(m: &CMatrix) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// PBH test: every eigenvalue of `a` selected by `check` must leave
/// `[a - lambda I, b]` with full row rank.
fn pbh_failure(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    check: impl Fn(Complex64) -> bool,
) -> Option<Complex64> {
    let n = a.nrows();
    let scale = a.norm().max(b.norm()).max(1.0);
    let ac = to_complex(a);
    let bc = to_complex(b);
    for lambda in eigenvalues(a).into_iter().filter(|&z| check(z)) {
        let mut pencil = CMatrix::zeros(n, n + b.ncols());
        pencil.view_mut((0, 0), (n, n)).copy_from(&(&ac - CMatrix::identity(n, n) * lambda));
        pencil.view_mut((0, n), (n, b.ncols())).copy_from(&bc);
        if min_singular_value(&pencil) <= PBH_TOLERANCE * scale {
            return Some(lambda);
        }
    }
    None
}

/// Stabilizing solution of the CARE.
pub fn solve_care(p: &CareProblem) -> Result<CareSolution> {
    p.validate()?;
    let n = p.a.nrows();
    if n == 0 {
        return Ok(CareSolution {
            x: DMatrix::zeros(0, 0),
            gain: DMatrix::zeros(p.b.ncols(), 0),
            residual_norm: 0.0,
            closed_loop_spectral_abscissa: f64::NEG_INFINITY,
        });
    }

    let scale_tol = PBH_TOLERANCE * p.a.norm().max(1.0);
    if let Some(l) = pbh_failure(&p.a, &p.b, |z| z.re >= -scale_tol) {
        return Err(Error::NotStabilizable {
            eigenvalue: format!("{l}"),
        });
    }

    let r_inv = p.r.clone().try_inverse().expect("validated r");
    let a_bar = &p.a - &p.b * &r_inv * p.s.transpose();
    let q_bar = &p.q - &p.s * &r_inv * p.s.transpose();
    let g = &p.b * &r_inv * p.b.transpose();

    // Unobservable modes of (Q_bar, A_bar) on the imaginary axis make the
    // Hamiltonian singular there; anything off the axis is handled by the
    // stable subspace itself.
    let q_sym = (&q_bar + q_bar.transpose()) * 0.5;
    if let Some(l) = pbh_failure(&a_bar.transpose(), &q_sym, |z| z.re.abs() <= scale_tol) {
        return Err(Error::NotDetectable {
            eigenvalue: format!("{l}"),
        });
    }

    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&a_bar);
    h.view_mut((0, n), (n, n)).copy_from(&(-&g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-&q_bar));
    h.view_mut((n, n), (n, n)).copy_from(&(-a_bar.transpose()));
    // Normalize time so the Hamiltonian has unit size; X is invariant.
    let c = h.norm().max(1.0);
    let scaled = p.rescale_time(c);
    h /= c;

    let (mut u, mut t) = complex_schur(to_complex(&h));
    let stable = reorder(&mut u, &mut t, |z| z.re < 0.0);
    if stable != n {
        return Err(Error::NoStabilizingSolution(format!(
            "Hamiltonian has {stable} stable eigenvalues, expected {n}"
        )));
    }
    let u1 = u.view((0, 0), (n, n)).clone_owned();
    let u2 = u.view((n, 0), (n, n)).clone_owned();
    let sv = u1.clone().singular_values();
    let smin = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smin <= 1e-12 * smax {
        return Err(Error::NoStabilizingSolution(
            "stable subspace basis is singular".into(),
        ));
    }
    // X U1 = U2  <=>  U1^T X^T = U2^T
    let xt = u1
        .transpose()
        .lu()
        .solve(&u2.transpose())
        .ok_or_else(|| Error::NoStabilizingSolution("stable subspace basis is singular".into()))?;
    let x_c = xt.transpose();
    let x_re = x_c.map(|z| z.re);
    let x = (&x_re + x_re.transpose()) * 0.5;

    let residual_norm = scaled.residual(&x).norm() / x.norm().max(1.0);
    if !(residual_norm <= RESIDUAL_TOLERANCE) {
        return Err(Error::IllConditioned {
            residual: residual_norm,
            tolerance: RESIDUAL_TOLERANCE,
        });
    }
    let gain = &r_inv * (p.b.transpose() * &x + p.s.transpose());
    let abscissa = spectral_abscissa(&(&p.a - &p.b * &gain));
    if !(abscissa < 0.0) {
        return Err(Error::NoStabilizingSolution(format!(
            "closed loop has spectral abscissa {abscissa:e}"
        )));
    }
    Ok(CareSolution {
        x,
        gain,
        residual_norm,
        closed_loop_spectral_abscissa: abscissa,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(a: f64, b: f64, q: f64, r: f64) -> CareProblem {
        CareProblem::new(dmatrix![a], dmatrix![b], dmatrix![q], dmatrix![r])
    }

    #[test]
    fn scalar_integrator() {
        let sol = solve_care(&scalar(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((sol.x[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.gain[(0, 0)] - 1.0).abs() < 1e-12);
        assert!((sol.closed_loop_spectral_abscissa + 1.0).abs() < 1e-12);
    }

    #[test]
    fn scalar_unstable_zero_weight_picks_stabilizing_branch() {
        let sol = solve_care(&scalar(1.0, 1.0, 0.0, 1.0)).unwrap();
        assert!((sol.x[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((sol.gain[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((sol.closed_loop_spectral_abscissa + 1.0).abs() < 1e-12);
    }

    #[test]
    fn uncontrollable_unstable_mode_is_rejected() {
        let p = CareProblem::new(
            dmatrix![1.0, 0.0; 0.0, -1.0],
            dmatrix![0.0; 1.0],
            DMatrix::identity(2, 2),
            dmatrix![1.0],
        );
        assert!(matches!(solve_care(&p), Err(Error::NotStabilizable { .. })));
    }

    #[test]
    fn undetectable_oscillator_is_rejected() {
        // Undamped oscillator, no state weight: the Hamiltonian has imaginary eigenvalues.
        let p = CareProblem::new(
            dmatrix![0.0, 1.0; -1.0, 0.0],
            dmatrix![0.0; 1.0],
            DMatrix::zeros(2, 2),
            dmatrix![1.0],
        );
        assert!(matches!(solve_care(&p), Err(Error::NotDetectable { .. })));
    }

    #[test]
    fn rejects_indefinite_r() {
        let p = scalar(0.0, 1.0, 1.0, -1.0);
        assert!(matches!(solve_care(&p), Err(Error::InvalidModel(_))));
    }

    #[test]
    fn cross_term_matches_completed_square() {
        // With S, the CARE equals the S-free CARE for A - B R^-1 S^T and Q - S R^-1 S^T.
        let a = dmatrix![-1.0, 2.0; 0.5, 0.3];
        let b = dmatrix![1.0; 0.4];
        let s = dmatrix![0.3; -0.2];
        let q = dmatrix![2.0, 0.1; 0.1, 1.0];
        let r = dmatrix![1.5];
        let with_s = solve_care(&CareProblem::new(a.clone(), b.clone(), q.clone(), r.clone()).with_cross(s.clone())).unwrap();
        let r_inv = r.clone().try_inverse().unwrap();
        let plain = solve_care(&CareProblem::new(
            &a - &b * &r_inv * s.transpose(),
            b.clone(),
            &q - &s * &r_inv * s.transpose(),
            r,
        ))
        .unwrap();
        assert!((with_s.x - plain.x).norm() < 1e-10);
    }

    #[test]
    fn time_rescaling_leaves_x_invariant() {
        let p = CareProblem::new(
            dmatrix![-3e8, 1e8; 2e7, -1e8],
            dmatrix![1e4, 0.0; 0.0, 2e4],
            dmatrix![1e7, 0.0; 0.0, 3e7],
            DMatrix::identity(2, 2),
        );
        let sol = solve_care(&p).unwrap();
        let c = 1e8;
        let scaled = solve_care(&p.rescale_time(c)).unwrap();
        assert!((&sol.x - &scaled.x).norm() <= 1e-9 * sol.x.norm());
        assert!((&sol.gain / c.sqrt() - &scaled.gain).norm() <= 1e-9 * scaled.gain.norm());
    }

    #[test]
    fn solution_is_symmetric() {
        let p = CareProblem::new(
            dmatrix![0.0, 1.0, 0.0; 0.0, 0.0, 1.0; 1.0, -2.0, 0.5],
            dmatrix![0.0; 0.0; 1.0],
            DMatrix::identity(3, 3),
            dmatrix![0.2],
        );
        let sol = solve_care(&p).unwrap();
        assert!((&sol.x - sol.x.transpose()).norm() <= 1e-12 * sol.x.norm());
        assert!(sol.residual_norm <= RESIDUAL_TOLERANCE);
    }
}
