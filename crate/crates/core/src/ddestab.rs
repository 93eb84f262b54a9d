//! Rightmost characteristic roots of linear delay systems
//! `dx/dt = sum_j A_j x(t - tau_j)`, i.e. zeros of
//! `det(s I - sum_j A_j exp(-s tau_j))`.
//!
//! Candidates come from a Chebyshev collocation of the infinitesimal generator
//! on `[-tau_max, 0]`; each candidate is polished by Newton's method on the
//! determinant. Work is done in the time unit `tau_max`, where roots are O(1).

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::closedloop::ClosedLoopSystem;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::solvers::eigenvalues;
use crate::statespace::{CMatrix, DelayTerm};

pub const DEFAULT_ORDER: usize = 40;
pub const MAX_ORDER: usize = 320;
pub const ROOT_COUNT: usize = 10;
/// Bound on the scaled determinant (see `Scaled::certificate`) for an accepted root.
pub const CERTIFICATE_TOLERANCE: f64 = 1e-8;
/// Order-doubling agreement of the root set, in units of `1 / tau_max`.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;
/// Stable/marginal boundary, in units of `1 / tau_max`.
pub const MARGINAL_BAND: f64 = 1e-4;

const NEWTON_MAX_ITER: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
    /// The root set did not settle under order doubling.
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityReport {
    /// Distinct roots in 1/s, by descending real part (conjugates adjacent,
    /// positive imaginary part first). A conjugate pair is never split, so
    /// one more root than requested may be reported.
    pub rightmost_roots: Vec<Complex64>,
    /// Residual certificate of each reported root.
    pub certificates: Vec<f64>,
    pub discretization_order: usize,
    pub converged: bool,
    pub verdict: Verdict,
    /// Half-width of the marginal band, in 1/s.
    pub abs_tol: f64,
    /// Generator eigenvalues (1/s) on which Newton's method failed.
    pub failed_candidates: Vec<Complex64>,
}

#[derive(Serialize)]
struct ReportDump<'a> {
    verdict: Verdict,
    converged: bool,
    discretization_order: usize,
    abs_tol: f64,
    rightmost_roots: Vec<[f64; 2]>,
    certificates: &'a [f64],
    failed_candidates: Vec<[f64; 2]>,
}

impl StabilityReport {
    pub fn max_real_part(&self) -> f64 {
        self.rightmost_roots
            .iter()
            .map(|z| z.re)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn to_json(&self) -> String {
        let pairs = |v: &[Complex64]| v.iter().map(|z| [z.re, z.im]).collect();
        serde_json::to_string_pretty(&ReportDump {
            verdict: self.verdict,
            converged: self.converged,
            discretization_order: self.discretization_order,
            abs_tol: self.abs_tol,
            rightmost_roots: pairs(&self.rightmost_roots),
            certificates: &self.certificates,
            failed_candidates: pairs(&self.failed_candidates),
        })
        .expect("report serializes")
    }
}

fn classify(max_re: f64, abs_tol: f64) -> Verdict {
    if max_re < -abs_tol {
        Verdict::Stable
    } else if max_re.abs() <= abs_tol {
        Verdict::Marginal
    } else {
        Verdict::Unstable
    }
}

/// Delay system in the time unit `tau_max`.
struct Scaled {
    n: usize,
    terms: Vec<(DMatrix<f64>, f64)>,
    tau_max: f64,
}

impl Scaled {
    fn new(a_terms: &[DelayTerm]) -> Result<Self> {
        let Some(first) = a_terms.first() else {
            return Err(Error::InvalidModel("no drift terms".into()));
        };
        let n = first.matrix.nrows();
        for t in a_terms {
            if t.matrix.shape() != (n, n) {
                return Err(Error::DimensionMismatch {
                    context: "delay drift term".into(),
                    expected: format!("{n}x{n}"),
                    found: format!("{}x{}", t.matrix.nrows(), t.matrix.ncols()),
                });
            }
            if !(t.delay >= 0.0 && t.delay.is_finite()) {
                return Err(Error::InvalidModel(format!("invalid delay {}", t.delay)));
            }
        }
        let tau_max = a_terms.iter().map(|t| t.delay).fold(0.0, f64::max);
        if tau_max == 0.0 {
            return Err(Error::DegenerateDelay);
        }
        let terms = a_terms
            .iter()
            .map(|t| (&t.matrix * tau_max, t.delay / tau_max))
            .collect();
        Ok(Self { n, terms, tau_max })
    }

    /// Characteristic matrix and its derivative at `s`.
    fn delta(&self, s: Complex64) -> (CMatrix, CMatrix) {
        let n = self.n;
        let mut d = CMatrix::identity(n, n) * s;
        let mut dp = CMatrix::identity(n, n);
        for (a, tau) in &self.terms {
            let e = (-s * *tau).exp();
            let ae = a.map(|v| Complex64::new(v, 0.0) * e);
            d -= &ae;
            dp += ae * Complex64::new(*tau, 0.0);
        }
        (d, dp)
    }

    /// `|det D(s)|` relative to the product over rows of the summed term
    /// magnitudes `|s| + sum_j ||row_i A_j|| |exp(-s tau_j)|`.
    fn certificate(&self, s: Complex64) -> f64 {
        let (d, _) = self.delta(s);
        let scale: f64 = (0..self.n)
            .map(|i| {
                s.norm()
                    + self
                        .terms
                        .iter()
                        .map(|(a, tau)| a.row(i).norm() * (-s.re * tau).exp())
                        .sum::<f64>()
            })
            .product();
        if scale == 0.0 {
            return 0.0;
        }
        d.determinant().norm() / scale
    }

    /// Newton on `det D(s)` with step `1 / tr(D^{-1} D')`.
    fn newton(&self, start: Complex64) -> Option<(Complex64, f64)> {
        let mut s = start;
        for _ in 0..NEWTON_MAX_ITER {
            let (d, dp) = self.delta(s);
            let Some(x) = d.lu().solve(&dp) else {
                // Singular characteristic matrix: s is a root.
                return Some((s, 0.0));
            };
            let tr = x.trace();
            if tr.norm() == 0.0 || !tr.is_finite() {
                break;
            }
            let step = tr.inv();
            s -= step;
            if !s.is_finite() {
                return None;
            }
            if step.norm() <= 1e-13 * s.norm().max(1.0) {
                break;
            }
        }
        let cert = self.certificate(s);
        (cert <= CERTIFICATE_TOLERANCE).then_some((s, cert))
    }

    fn generator(&self, order: usize) -> DMatrix<f64> {
        let n = self.n;
        let m = order + 1;
        let x: Vec<f64> = (0..m)
            .map(|k| (std::f64::consts::PI * k as f64 / order as f64).cos())
            .collect();
        let theta: Vec<f64> = x.iter().map(|v| (v - 1.0) / 2.0).collect();
        let c: Vec<f64> = (0..m)
            .map(|k| {
                let edge = if k == 0 || k == order { 2.0 } else { 1.0 };
                if k % 2 == 0 { edge } else { -edge }
            })
            .collect();
        let mut diff = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    diff[(i, j)] = c[i] / c[j] / (x[i] - x[j]);
                }
            }
            let row_sum: f64 = diff.row(i).sum();
            diff[(i, i)] = -row_sum;
        }
        // d/dtheta = 2 d/dx on [-1, 0].
        diff *= 2.0;

        let mut g = DMatrix::<f64>::zeros(n * m, n * m);
        for (a, tau) in &self.terms {
            let weights = lagrange_at(&theta, -tau);
            for (k, w) in weights.iter().enumerate() {
                if *w != 0.0 {
                    let mut blk = g.view_mut((0, k * n), (n, n));
                    blk += a * *w;
                }
            }
        }
        for i in 1..m {
            for k in 0..m {
                let v = diff[(i, k)];
                for r in 0..n {
                    g[(i * n + r, k * n + r)] = v;
                }
            }
        }
        g
    }
}

/// Barycentric Lagrange basis on Chebyshev points of the second kind.
fn lagrange_at(nodes: &[f64], t: f64) -> Vec<f64> {
    let m = nodes.len();
    if let Some(k) = nodes.iter().position(|&x| (x - t).abs() <= 1e-15) {
        let mut e = vec![0.0; m];
        e[k] = 1.0;
        return e;
    }
    let w: Vec<f64> = (0..m)
        .map(|j| {
            let half = if j == 0 || j == m - 1 { 0.5 } else { 1.0 };
            if j % 2 == 0 { half } else { -half }
        })
        .collect();
    let terms: Vec<f64> = (0..m).map(|j| w[j] / (t - nodes[j])).collect();
    let total: f64 = terms.iter().sum();
    terms.iter().map(|v| v / total).collect()
}

struct RootSet {
    roots: Vec<Complex64>,
    certificates: Vec<f64>,
    failed: Vec<Complex64>,
}

/// Keep the first `count` entries, plus the partner of a conjugate pair that
/// would otherwise be split at the cut.
fn truncate_pairs<T>(v: &mut Vec<T>, count: usize, root: impl Fn(&T) -> Complex64) {
    let keep = match v.get(count.saturating_sub(1)) {
        Some(last) if count > 0 && root(last).im > 0.0 => count + 1,
        _ => count,
    };
    v.truncate(keep);
}

fn sort_roots(v: &mut [(Complex64, f64)]) {
    v.sort_by(|a, b| b.0.re.total_cmp(&a.0.re).then(b.0.im.total_cmp(&a.0.im)));
}

fn analyze(sys: &Scaled, count: usize, order: usize) -> RootSet {
    let mut eig = eigenvalues(&sys.generator(order));
    eig.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    // Upper half-plane representatives; conjugates are added after refinement.
    let candidates: Vec<Complex64> = eig
        .into_iter()
        .filter(|z| z.im >= 0.0)
        .take(2 * count + 4)
        .collect();
    let refined = par::map(&candidates, Execution::default(), |&z| sys.newton(z));

    let mut found: Vec<(Complex64, f64)> = Vec::new();
    let mut failed = Vec::new();
    for (z, r) in candidates.iter().zip(refined) {
        let Some((mut s, cert)) = r else {
            failed.push(*z);
            continue;
        };
        if s.im.abs() <= 1e-9 * s.norm().max(1.0) {
            s.im = 0.0;
        }
        let s = Complex64::new(s.re, s.im.abs());
        let dup = found
            .iter()
            .any(|(f, _)| (f - s).norm() <= 1e-6 * s.norm().max(1.0));
        if !dup {
            found.push((s, cert));
        }
    }
    let mut all: Vec<(Complex64, f64)> = Vec::new();
    for &(s, cert) in &found {
        all.push((s, cert));
        if s.im != 0.0 {
            all.push((s.conj(), cert));
        }
    }
    sort_roots(&mut all);
    truncate_pairs(&mut all, count, |r| r.0);
    failed.sort_by(|a, b| b.re.total_cmp(&a.re));
    RootSet {
        roots: all.iter().map(|r| r.0).collect(),
        certificates: all.iter().map(|r| r.1).collect(),
        failed,
    }
}

fn hausdorff(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return if a.len() == b.len() { 0.0 } else { f64::INFINITY };
    }
    let one_way = |x: &[Complex64], y: &[Complex64]| {
        x.iter()
            .map(|p| y.iter().map(|q| (p - q).norm()).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    one_way(a, b).max(one_way(b, a))
}

/// Locate the `count` rightmost roots, doubling the collocation order from
/// `order` until the root set settles (or the order cap is reached).
pub fn rightmost_roots(a_terms: &[DelayTerm], count: usize, order: usize) -> Result<StabilityReport> {
    if count == 0 {
        return Err(Error::InvalidModel("root count must be at least 1".into()));
    }
    if order < 2 {
        return Err(Error::InvalidModel("discretization order must be at least 2".into()));
    }
    let sys = Scaled::new(a_terms)?;
    let cap = MAX_ORDER.max(2 * order);
    let mut current = order;
    let mut prev = analyze(&sys, count, current);
    let mut converged = false;
    while 2 * current <= cap {
        let next = analyze(&sys, count, 2 * current);
        current *= 2;
        let settled = !next.roots.is_empty()
            && hausdorff(&prev.roots, &next.roots) < CONVERGENCE_TOLERANCE;
        prev = next;
        if settled {
            converged = true;
            break;
        }
    }
    if prev.roots.is_empty() {
        let candidate = prev
            .failed
            .first()
            .map(|z| format!("{}", z / sys.tau_max))
            .unwrap_or_else(|| "<none>".into());
        return Err(Error::NoConvergence { candidate });
    }
    let abs_tol = MARGINAL_BAND / sys.tau_max;
    let roots: Vec<Complex64> = prev.roots.iter().map(|z| z / sys.tau_max).collect();
    let max_re = roots.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let verdict = if converged {
        classify(max_re, abs_tol)
    } else {
        Verdict::Inconclusive
    };
    Ok(StabilityReport {
        rightmost_roots: roots,
        certificates: prev.certificates,
        discretization_order: current,
        converged,
        verdict,
        abs_tol,
        failed_candidates: prev.failed.iter().map(|z| z / sys.tau_max).collect(),
    })
}

/// Ordinary eigenvalue analysis of a delay-free drift.
fn plain_report(a: &DMatrix<f64>, count: usize) -> StabilityReport {
    let mut eig = eigenvalues(a);
    eig.sort_by(|x, y| y.re.total_cmp(&x.re).then(y.im.total_cmp(&x.im)));
    truncate_pairs(&mut eig, count, |z| *z);
    let abs_tol = 1e-10 * a.norm().max(1.0);
    let max_re = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    StabilityReport {
        certificates: vec![0.0; eig.len()],
        rightmost_roots: eig,
        discretization_order: 0,
        converged: true,
        verdict: classify(max_re, abs_tol),
        abs_tol,
        failed_candidates: Vec::new(),
    }
}

/// Rightmost roots of the assembled loop; delay-free loops fall back to the
/// eigenvalues of the collapsed drift.
pub fn check_closed_loop(cl: &ClosedLoopSystem, order: usize) -> Result<StabilityReport> {
    if cl.sys.a_terms().iter().all(|t| t.delay == 0.0) {
        return Ok(plain_report(&cl.sys.a(), ROOT_COUNT));
    }
    rightmost_roots(cl.sys.a_terms(), ROOT_COUNT, order)
}
