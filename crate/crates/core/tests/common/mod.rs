//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use eprnet::lqgsynth::{build_cost, synthesize, LqgController};
use eprnet::quadnet::{build_measurement_map, build_plant, NetworkParams};

/// Solve `A X + X A^T + Q = 0` through the `n^2 x n^2` Kronecker system.
pub fn kron_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let k = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = -DMatrix::from_column_slice(n * n, 1, q.as_slice());
    let v = k.lu().solve(&rhs).expect("Kronecker system is nonsingular");
    DMatrix::from_column_slice(n, n, v.as_slice())
}

/// Newton-Kleinman iteration for `A^T X + X A - X B R^-1 B^T X + Q = 0`,
/// started from a stabilizing `k0`.
pub fn newton_kleinman(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    k0: DMatrix<f64>,
) -> DMatrix<f64> {
    let r_inv = r.clone().try_inverse().unwrap();
    let mut k = k0;
    let mut x = DMatrix::zeros(a.nrows(), a.nrows());
    for _ in 0..200 {
        let acl = a - b * &k;
        let next = kron_lyapunov(&acl.transpose(), &(q + k.transpose() * r * &k));
        let done = (&next - &x).norm() <= 1e-14 * next.norm().max(1.0);
        x = next;
        k = &r_inv * b.transpose() * &x;
        if done {
            break;
        }
    }
    (&x + x.transpose()) * 0.5
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random Hurwitz matrix: Gaussian entries shifted left of the spectrum.
pub fn random_hurwitz(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = gaussian(rng, n, n);
    let abscissa = eprnet::solvers::spectral_abscissa(&m);
    let shift = abscissa + 0.5 + rng.random::<f64>();
    m - DMatrix::identity(n, n) * shift
}

pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let g = gaussian(rng, n, n);
    &g * g.transpose() + DMatrix::identity(n, n)
}

pub fn ideal_controller() -> LqgController {
    let p = NetworkParams::ideal();
    synthesize(
        &build_plant(&p, true).unwrap(),
        &build_measurement_map(&p).unwrap(),
        &build_cost(&p).unwrap(),
    )
    .unwrap()
}
