//! Linear time-invariant systems whose matrices are sums of delay-tagged terms.
//!
//! A [`DelayedStateSpace`] represents
//!
//! ```text
//! x'(t) = sum_j A_j x(t - a_j) + sum_k B_k w(t - b_k)
//! y(t)  = sum_l C_l x(t - c_l) + sum_m D_m w(t - d_m)
//! ```
//!
//! and evaluates to the transfer function
//! `(sum C_l e^{-s c_l}) (sI - sum A_j e^{-s a_j})^{-1} (sum B_k e^{-s b_k}) + sum D_m e^{-s d_m}`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;

/// One matrix contribution acting on a signal delayed by `delay` seconds.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayTerm {
    pub matrix: DMatrix<f64>,
    pub delay: f64,
}

impl DelayTerm {
    pub fn new(matrix: DMatrix<f64>, delay: f64) -> Self {
        Self { matrix, delay }
    }

    pub fn undelayed(matrix: DMatrix<f64>) -> Self {
        Self { matrix, delay: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DelayedStateSpace {
    state_dim: usize,
    input_dim: usize,
    output_dim: usize,
    a_terms: Vec<DelayTerm>,
    b_terms: Vec<DelayTerm>,
    c_terms: Vec<DelayTerm>,
    d_terms: Vec<DelayTerm>,
    state_labels: Vec<String>,
    input_labels: Vec<String>,
    output_labels: Vec<String>,
}

/// Merge terms sharing a delay, drop identically-zero matrices and sort by delay.
fn normalize_terms(
    block: &str,
    terms: Vec<DelayTerm>,
    rows: usize,
    cols: usize,
) -> Result<Vec<DelayTerm>> {
    let mut merged: BTreeMap<u64, DMatrix<f64>> = BTreeMap::new();
    for term in terms {
        if term.matrix.nrows() != rows || term.matrix.ncols() != cols {
            return Err(Error::DimensionMismatch {
                context: format!("{block} term"),
                expected: format!("{rows}x{cols}"),
                found: format!("{}x{}", term.matrix.nrows(), term.matrix.ncols()),
            });
        }
        if !(term.delay.is_finite() && term.delay >= 0.0) {
            return Err(Error::InvalidModel(format!(
                "{block} term has invalid delay {}",
                term.delay
            )));
        }
        if term.matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel(format!("{block} term has non-finite entries")));
        }
        // Non-negative finite f64 values order the same as their bit patterns.
        let key = (term.delay + 0.0).to_bits();
        merged
            .entry(key)
            .and_modify(|m| *m += &term.matrix)
            .or_insert(term.matrix);
    }
    Ok(merged
        .into_iter()
        .filter(|(_, m)| m.iter().any(|&v| v != 0.0))
        .map(|(bits, matrix)| DelayTerm {
            matrix,
            delay: f64::from_bits(bits),
        })
        .collect())
}

fn sum_terms(terms: &[DelayTerm], rows: usize, cols: usize) -> DMatrix<f64> {
    terms
        .iter()
        .fold(DMatrix::zeros(rows, cols), |acc, t| acc + &t.matrix)
}

fn eval_terms(terms: &[DelayTerm], rows: usize, cols: usize, s: Complex64) -> CMatrix {
    let mut out = CMatrix::zeros(rows, cols);
    for t in terms {
        let factor = if t.delay == 0.0 {
            Complex64::new(1.0, 0.0)
        } else {
            (-s * t.delay).exp()
        };
        out.zip_apply(&t.matrix, |o, m| *o += factor * m);
    }
    out
}

impl DelayedStateSpace {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a_terms: Vec<DelayTerm>,
        b_terms: Vec<DelayTerm>,
        c_terms: Vec<DelayTerm>,
        d_terms: Vec<DelayTerm>,
        state_labels: Vec<String>,
        input_labels: Vec<String>,
        output_labels: Vec<String>,
    ) -> Result<Self> {
        let n = state_labels.len();
        let m = input_labels.len();
        let p = output_labels.len();
        Ok(Self {
            state_dim: n,
            input_dim: m,
            output_dim: p,
            a_terms: normalize_terms("A", a_terms, n, n)?,
            b_terms: normalize_terms("B", b_terms, n, m)?,
            c_terms: normalize_terms("C", c_terms, p, n)?,
            d_terms: normalize_terms("D", d_terms, p, m)?,
            state_labels,
            input_labels,
            output_labels,
        })
    }

    /// Ordinary LTI system, every term at delay zero.
    pub fn from_lti(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        state_labels: Vec<String>,
        input_labels: Vec<String>,
        output_labels: Vec<String>,
    ) -> Result<Self> {
        Self::new(
            vec![DelayTerm::undelayed(a)],
            vec![DelayTerm::undelayed(b)],
            vec![DelayTerm::undelayed(c)],
            vec![DelayTerm::undelayed(d)],
            state_labels,
            input_labels,
            output_labels,
        )
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }
    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
    pub fn a_terms(&self) -> &[DelayTerm] {
        &self.a_terms
    }
    pub fn b_terms(&self) -> &[DelayTerm] {
        &self.b_terms
    }
    pub fn c_terms(&self) -> &[DelayTerm] {
        &self.c_terms
    }
    pub fn d_terms(&self) -> &[DelayTerm] {
        &self.d_terms
    }
    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }
    pub fn input_labels(&self) -> &[String] {
        &self.input_labels
    }
    pub fn output_labels(&self) -> &[String] {
        &self.output_labels
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.state_labels.iter().position(|l| l == label)
    }
    pub fn input_index(&self, label: &str) -> Option<usize> {
        self.input_labels.iter().position(|l| l == label)
    }
    pub fn output_index(&self, label: &str) -> Option<usize> {
        self.output_labels.iter().position(|l| l == label)
    }

    /// Sum of all A terms, i.e. the drift with every delay set to zero.
    pub fn a(&self) -> DMatrix<f64> {
        sum_terms(&self.a_terms, self.state_dim, self.state_dim)
    }
    pub fn b(&self) -> DMatrix<f64> {
        sum_terms(&self.b_terms, self.state_dim, self.input_dim)
    }
    pub fn c(&self) -> DMatrix<f64> {
        sum_terms(&self.c_terms, self.output_dim, self.state_dim)
    }
    pub fn d(&self) -> DMatrix<f64> {
        sum_terms(&self.d_terms, self.output_dim, self.input_dim)
    }

    /// The same system with all delays removed.
    pub fn collapsed(&self) -> Self {
        Self::from_lti(
            self.a(),
            self.b(),
            self.c(),
            self.d(),
            self.state_labels.clone(),
            self.input_labels.clone(),
            self.output_labels.clone(),
        )
        .expect("collapsing preserves dimensions")
    }

    /// Distinct delays over all four blocks, ascending.
    pub fn delays(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .a_terms
            .iter()
            .chain(&self.b_terms)
            .chain(&self.c_terms)
            .chain(&self.d_terms)
            .map(|t| t.delay)
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    pub fn max_state_delay(&self) -> f64 {
        self.a_terms.iter().map(|t| t.delay).fold(0.0, f64::max)
    }

    pub fn is_delay_free(&self) -> bool {
        self.delays().iter().all(|&d| d == 0.0)
    }

    pub fn eval_a(&self, s: Complex64) -> CMatrix {
        eval_terms(&self.a_terms, self.state_dim, self.state_dim, s)
    }
    pub fn eval_b(&self, s: Complex64) -> CMatrix {
        eval_terms(&self.b_terms, self.state_dim, self.input_dim, s)
    }
    pub fn eval_c(&self, s: Complex64) -> CMatrix {
        eval_terms(&self.c_terms, self.output_dim, self.state_dim, s)
    }
    pub fn eval_d(&self, s: Complex64) -> CMatrix {
        eval_terms(&self.d_terms, self.output_dim, self.input_dim, s)
    }

    /// Keep only the listed outputs, in the given order.
    pub fn select_outputs(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&bad) = rows.iter().find(|&&r| r >= self.output_dim) {
            return Err(Error::DimensionMismatch {
                context: "select_outputs".into(),
                expected: format!("row < {}", self.output_dim),
                found: bad.to_string(),
            });
        }
        let pick = |terms: &[DelayTerm]| -> Vec<DelayTerm> {
            terms
                .iter()
                .map(|t| DelayTerm::new(t.matrix.select_rows(rows.iter()), t.delay))
                .collect()
        };
        Self::new(
            self.a_terms.clone(),
            self.b_terms.clone(),
            pick(&self.c_terms),
            pick(&self.d_terms),
            self.state_labels.clone(),
            self.input_labels.clone(),
            rows.iter().map(|&r| self.output_labels[r].clone()).collect(),
        )
    }

    /// Multiply every input column (B and D) by `factor`.
    pub fn scale_inputs(&self, factor: f64) -> Self {
        let scale = |terms: &[DelayTerm]| -> Vec<DelayTerm> {
            terms
                .iter()
                .map(|t| DelayTerm::new(&t.matrix * factor, t.delay))
                .collect()
        };
        let mut out = self.clone();
        out.b_terms = scale(&self.b_terms);
        out.d_terms = scale(&self.d_terms);
        out
    }

    pub fn to_dump(&self) -> ModelDump {
        let dump = |terms: &[DelayTerm]| -> Vec<TermDump> {
            terms
                .iter()
                .map(|t| TermDump {
                    delay: t.delay,
                    matrix: matrix_rows(&t.matrix),
                })
                .collect()
        };
        ModelDump {
            state_labels: self.state_labels.clone(),
            input_labels: self.input_labels.clone(),
            output_labels: self.output_labels.clone(),
            a_terms: dump(&self.a_terms),
            b_terms: dump(&self.b_terms),
            c_terms: dump(&self.c_terms),
            d_terms: dump(&self.d_terms),
        }
    }

    pub fn from_dump(dump: &ModelDump) -> Result<Self> {
        let load = |terms: &[TermDump], cols: usize| -> Result<Vec<DelayTerm>> {
            terms
                .iter()
                .map(|t| Ok(DelayTerm::new(matrix_from_rows(&t.matrix, cols)?, t.delay)))
                .collect()
        };
        let n = dump.state_labels.len();
        let m = dump.input_labels.len();
        Self::new(
            load(&dump.a_terms, n)?,
            load(&dump.b_terms, m)?,
            load(&dump.c_terms, n)?,
            load(&dump.d_terms, m)?,
            dump.state_labels.clone(),
            dump.input_labels.clone(),
            dump.output_labels.clone(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_dump()).expect("model dump serializes")
    }
}

/// Serializable form of a [`DelayedStateSpace`]; matrices are stored row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDump {
    pub state_labels: Vec<String>,
    pub input_labels: Vec<String>,
    pub output_labels: Vec<String>,
    pub a_terms: Vec<TermDump>,
    pub b_terms: Vec<TermDump>,
    pub c_terms: Vec<TermDump>,
    pub d_terms: Vec<TermDump>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermDump {
    pub delay: f64,
    pub matrix: Vec<Vec<f64>>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch {
            context: "matrix row".into(),
            expected: cols.to_string(),
            found: bad.len().to_string(),
        });
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub(crate) fn labels(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> DelayedStateSpace {
        DelayedStateSpace::from_lti(
            dmatrix![a],
            dmatrix![b],
            dmatrix![c],
            dmatrix![d],
            labels(&["x"]),
            labels(&["w"]),
            labels(&["y"]),
        )
        .unwrap()
    }

    #[test]
    fn equal_delays_merge_and_zero_terms_vanish() {
        let sys = DelayedStateSpace::new(
            vec![
                DelayTerm::new(dmatrix![-1.0], 0.0),
                DelayTerm::new(dmatrix![0.5], 1e-6),
                DelayTerm::new(dmatrix![0.25], 1e-6),
                DelayTerm::new(dmatrix![0.0], 3.0),
            ],
            vec![DelayTerm::undelayed(dmatrix![1.0])],
            vec![DelayTerm::undelayed(dmatrix![1.0])],
            vec![],
            labels(&["x"]),
            labels(&["w"]),
            labels(&["y"]),
        )
        .unwrap();
        assert_eq!(sys.a_terms().len(), 2);
        assert_eq!(sys.a_terms()[1].matrix[(0, 0)], 0.75);
        assert_eq!(sys.delays(), vec![0.0, 1e-6]);
        assert_eq!(sys.a()[(0, 0)], -0.25);
        assert!(sys.d_terms().is_empty());
    }

    #[test]
    fn rejects_bad_dimensions_and_delays() {
        let bad_dim = DelayedStateSpace::new(
            vec![DelayTerm::undelayed(dmatrix![1.0, 2.0])],
            vec![],
            vec![],
            vec![],
            labels(&["x"]),
            labels(&["w"]),
            labels(&["y"]),
        );
        assert!(matches!(bad_dim, Err(Error::DimensionMismatch { .. })));
        let bad_delay = DelayedStateSpace::new(
            vec![DelayTerm::new(dmatrix![1.0], -1.0)],
            vec![],
            vec![],
            vec![],
            labels(&["x"]),
            labels(&["w"]),
            labels(&["y"]),
        );
        assert!(matches!(bad_delay, Err(Error::InvalidModel(_))));
    }

    #[test]
    fn eval_applies_delay_phase() {
        let sys = DelayedStateSpace::new(
            vec![],
            vec![],
            vec![],
            vec![DelayTerm::new(dmatrix![2.0], 0.5)],
            labels(&["x"]),
            labels(&["w"]),
            labels(&["y"]),
        )
        .unwrap();
        let s = Complex64::new(0.0, 3.0);
        let d = sys.eval_d(s)[(0, 0)];
        let expected = 2.0 * Complex64::new(0.0, -1.5).exp();
        assert!((d - expected).norm() < 1e-15);
    }

    #[test]
    fn dump_round_trip() {
        let sys = scalar(-2.0, 1.5, 0.5, 1.0);
        let back = DelayedStateSpace::from_dump(&sys.to_dump()).unwrap();
        assert_eq!(sys, back);
        let json = sys.to_json();
        let parsed: ModelDump = serde_json::from_str(&json).unwrap();
        assert_eq!(DelayedStateSpace::from_dump(&parsed).unwrap(), sys);
    }

    #[test]
    fn select_outputs_reorders() {
        let sys = DelayedStateSpace::from_lti(
            dmatrix![-1.0],
            dmatrix![1.0],
            dmatrix![1.0; 2.0],
            dmatrix![0.0; 3.0],
            labels(&["x"]),
            labels(&["w"]),
            labels(&["y1", "y2"]),
        )
        .unwrap();
        let picked = sys.select_outputs(&[1]).unwrap();
        assert_eq!(picked.output_labels(), &["y2".to_string()]);
        assert_eq!(picked.c()[(0, 0)], 2.0);
        assert_eq!(picked.d()[(0, 0)], 3.0);
        assert!(sys.select_outputs(&[2]).is_err());
    }
}
