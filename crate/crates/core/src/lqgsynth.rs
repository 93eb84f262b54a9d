//! LQG measurement-feedback synthesis for the quadrature network.
//!
//! The controller is `dz_c = Ac z_c + Bc y_c`, `u = Cc z_c`, built from a
//! regulator Riccati equation and a Kalman filter Riccati equation whose
//! process and measurement noises are correlated (the same vacuum fields drive
//! the plant and reach the detectors).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadnet::{
    NetworkParams, CONTROL_DIM, CONTROL_LABELS, EXTENDED_NOISE_DIM, MEASUREMENT_DIM,
    MEASUREMENT_LABELS, NOISE_DIM, STATE_DIM,
};
use crate::solvers::{solve_care, spectral_abscissa, CareProblem};
use crate::statespace::{labels, matrix_from_rows, matrix_rows, DelayedStateSpace};

#[derive(Clone, Debug, PartialEq)]
pub struct LqgWeights {
    /// Penalty on the plant state.
    pub state_weight: DMatrix<f64>,
    /// Penalty on the control effort.
    pub control_weight: DMatrix<f64>,
}

impl LqgWeights {
    pub fn validate(&self) -> Result<()> {
        let sym = |m: &DMatrix<f64>| (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0);
        if !self.state_weight.is_square() || !sym(&self.state_weight) {
            return Err(Error::InvalidModel("state weight must be square and symmetric".into()));
        }
        if !self.control_weight.is_square() || !sym(&self.control_weight) {
            return Err(Error::InvalidModel("control weight must be square and symmetric".into()));
        }
        if self.control_weight.clone().cholesky().is_none() {
            return Err(Error::InvalidModel("control weight must be positive definite".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            state_weight: &self.state_weight * factor,
            control_weight: &self.control_weight * factor,
        }
    }
}

/// Reading of the output-quadrature penalty in the cost.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostForm {
    /// `rho * ((a1q + a2q)^2 + (a1p - a2p)^2)`: each quadrature combination
    /// penalized separately.
    #[default]
    SeparateQuadratures,
    /// `rho * (a1q + a2q + a1p - a2p)^2`.
    RankOne,
    /// `(rho * (a1q + a2q + a1p - a2p))^2`.
    RankOneSquaredWeight,
}

fn combination_row(entries: &[(&str, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(1, STATE_DIM);
    for &(label, v) in entries {
        let idx = crate::quadnet::STATE_LABELS
            .iter()
            .position(|&l| l == label)
            .expect("state label");
        m[(0, idx)] = v;
    }
    m
}

pub fn build_cost(params: &NetworkParams) -> Result<LqgWeights> {
    build_cost_with(params, CostForm::default())
}

pub fn build_cost_with(params: &NetworkParams, form: CostForm) -> Result<LqgWeights> {
    params.validate()?;
    let rho = params.rho;
    let sum_q = combination_row(&[("a1q", 1.0), ("a2q", 1.0)]);
    let diff_p = combination_row(&[("a1p", 1.0), ("a2p", -1.0)]);
    let m = &sum_q + &diff_p;
    let state_weight = match form {
        CostForm::SeparateQuadratures => {
            (sum_q.transpose() * &sum_q + diff_p.transpose() * &diff_p) * rho
        }
        CostForm::RankOne => m.transpose() * &m * rho,
        CostForm::RankOneSquaredWeight => m.transpose() * &m * (rho * rho),
    };
    Ok(LqgWeights {
        state_weight,
        control_weight: DMatrix::identity(CONTROL_DIM, CONTROL_DIM),
    })
}

/// Controller triple `(Ac, Bc, Cc)`: 8 internal states, 4 measurements in,
/// 8 controls out.
#[derive(Clone, Debug, PartialEq)]
pub struct LqgController {
    pub ac: DMatrix<f64>,
    pub bc: DMatrix<f64>,
    pub cc: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ControllerFile {
    state_labels: Vec<String>,
    input_labels: Vec<String>,
    output_labels: Vec<String>,
    ac: Vec<Vec<f64>>,
    bc: Vec<Vec<f64>>,
    cc: Vec<Vec<f64>>,
}

fn controller_state_labels() -> Vec<String> {
    (1..=STATE_DIM).map(|i| format!("zc{i}")).collect()
}

impl LqgController {
    pub fn zero() -> Self {
        Self {
            ac: DMatrix::zeros(STATE_DIM, STATE_DIM),
            bc: DMatrix::zeros(STATE_DIM, MEASUREMENT_DIM),
            cc: DMatrix::zeros(CONTROL_DIM, STATE_DIM),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ac.nrows();
        let dims = [
            ("ac", self.ac.shape(), (n, n)),
            ("bc", self.bc.shape(), (n, MEASUREMENT_DIM)),
            ("cc", self.cc.shape(), (CONTROL_DIM, n)),
        ];
        for (name, found, expected) in dims {
            if found != expected {
                return Err(Error::DimensionMismatch {
                    context: format!("controller {name}"),
                    expected: format!("{}x{}", expected.0, expected.1),
                    found: format!("{}x{}", found.0, found.1),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = ControllerFile {
            state_labels: controller_state_labels(),
            input_labels: labels(&MEASUREMENT_LABELS),
            output_labels: labels(&CONTROL_LABELS),
            ac: matrix_rows(&self.ac),
            bc: matrix_rows(&self.bc),
            cc: matrix_rows(&self.cc),
        };
        serde_json::to_string_pretty(&file).expect("controller serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let parse = |message: String| Error::Parse {
            path: "<controller>".into(),
            message,
        };
        let file: ControllerFile = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
        if file.input_labels != labels(&MEASUREMENT_LABELS)
            || file.output_labels != labels(&CONTROL_LABELS)
        {
            return Err(parse("controller labels do not match the measurement/control ordering".into()));
        }
        let n = file.state_labels.len();
        let ctrl = Self {
            ac: matrix_from_rows(&file.ac, n)?,
            bc: matrix_from_rows(&file.bc, MEASUREMENT_DIM)?,
            cc: matrix_from_rows(&file.cc, n)?,
        };
        ctrl.validate()?;
        Ok(ctrl)
    }
}

/// Intermediate quantities of a synthesis run.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub controller: LqgController,
    /// Regulator gain `K` (`u = -K x_hat`).
    pub regulator_gain: DMatrix<f64>,
    /// Filter gain `L`.
    pub filter_gain: DMatrix<f64>,
    pub regulator_residual: f64,
    pub filter_residual: f64,
}

/// Zero-delay matrices of the plant and measurement map split by input kind.
pub(crate) struct SplitModel {
    pub a: DMatrix<f64>,
    pub bw: DMatrix<f64>,
    pub bu: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub dv: DMatrix<f64>,
    pub du: DMatrix<f64>,
}

pub(crate) fn check_shapes(plant: &DelayedStateSpace, meas: &DelayedStateSpace) -> Result<()> {
    let expect = |context: &str, found: (usize, usize), expected: (usize, usize)| {
        if found != expected {
            return Err(Error::DimensionMismatch {
                context: context.into(),
                expected: format!("{} states, {} inputs", expected.0, expected.1),
                found: format!("{} states, {} inputs", found.0, found.1),
            });
        }
        Ok(())
    };
    expect(
        "plant with control inputs",
        (plant.state_dim(), plant.input_dim()),
        (STATE_DIM, NOISE_DIM + CONTROL_DIM),
    )?;
    expect(
        "measurement map",
        (meas.state_dim(), meas.input_dim()),
        (STATE_DIM, EXTENDED_NOISE_DIM + CONTROL_DIM),
    )?;
    if meas.output_dim() != MEASUREMENT_DIM {
        return Err(Error::DimensionMismatch {
            context: "measurement outputs".into(),
            expected: MEASUREMENT_DIM.to_string(),
            found: meas.output_dim().to_string(),
        });
    }
    Ok(())
}

pub(crate) fn split(plant: &DelayedStateSpace, meas: &DelayedStateSpace) -> Result<SplitModel> {
    check_shapes(plant, meas)?;
    let b = plant.b();
    let mut bw = DMatrix::zeros(STATE_DIM, EXTENDED_NOISE_DIM);
    bw.columns_mut(0, NOISE_DIM).copy_from(&b.columns(0, NOISE_DIM));
    let d = meas.d();
    Ok(SplitModel {
        a: plant.a(),
        bw,
        bu: b.columns(NOISE_DIM, CONTROL_DIM).clone_owned(),
        c: meas.c(),
        dv: d.columns(0, EXTENDED_NOISE_DIM).clone_owned(),
        du: d.columns(EXTENDED_NOISE_DIM, CONTROL_DIM).clone_owned(),
    })
}

/// Design the controller on the delay-free collapse of `plant` and `meas`.
pub fn synthesize(
    plant: &DelayedStateSpace,
    meas: &DelayedStateSpace,
    weights: &LqgWeights,
) -> Result<LqgController> {
    synthesize_detailed(plant, meas, weights).map(|s| s.controller)
}

pub fn synthesize_detailed(
    plant: &DelayedStateSpace,
    meas: &DelayedStateSpace,
    weights: &LqgWeights,
) -> Result<Synthesis> {
    weights.validate()?;
    let m = split(plant, meas)?;
    if weights.state_weight.shape() != (STATE_DIM, STATE_DIM)
        || weights.control_weight.shape() != (CONTROL_DIM, CONTROL_DIM)
    {
        return Err(Error::DimensionMismatch {
            context: "LQG weights".into(),
            expected: format!("{STATE_DIM}x{STATE_DIM} and {CONTROL_DIM}x{CONTROL_DIM}"),
            found: format!(
                "{:?} and {:?}",
                weights.state_weight.shape(),
                weights.control_weight.shape()
            ),
        });
    }

    let regulator = solve_care(&CareProblem::new(
        m.a.clone(),
        m.bu.clone(),
        weights.state_weight.clone(),
        weights.control_weight.clone(),
    ))?;
    let k = regulator.gain;

    let v = &m.dv * m.dv.transpose();
    if v.clone().cholesky().is_none() {
        return Err(Error::DegenerateMeasurement);
    }
    let w = &m.bw * m.bw.transpose();
    let s = &m.bw * m.dv.transpose();
    let filter = solve_care(&CareProblem::dual(&m.a, &m.c, w, v, s))?;
    let l = filter.gain.transpose();

    let ac = &m.a - &m.bu * &k - &l * &m.c + &l * &m.du * &k;
    Ok(Synthesis {
        controller: LqgController {
            ac,
            bc: l.clone(),
            cc: -&k,
        },
        regulator_gain: k,
        filter_gain: l,
        regulator_residual: regulator.residual_norm,
        filter_residual: filter.residual_norm,
    })
}

/// Zero-delay closed-loop drift `[[A, Bu Cc], [Bc C, Ac + Bc Du Cc]]`.
pub fn closed_loop_drift(
    plant: &DelayedStateSpace,
    meas: &DelayedStateSpace,
    ctrl: &LqgController,
) -> Result<DMatrix<f64>> {
    ctrl.validate()?;
    let m = split(plant, meas)?;
    let n = STATE_DIM;
    let nc = ctrl.ac.nrows();
    let mut cl = DMatrix::zeros(n + nc, n + nc);
    cl.view_mut((0, 0), (n, n)).copy_from(&m.a);
    cl.view_mut((0, n), (n, nc)).copy_from(&(&m.bu * &ctrl.cc));
    cl.view_mut((n, 0), (nc, n)).copy_from(&(&ctrl.bc * &m.c));
    cl.view_mut((n, n), (nc, nc))
        .copy_from(&(&ctrl.ac + &ctrl.bc * &m.du * &ctrl.cc));
    Ok(cl)
}

/// Largest real part of the zero-delay closed loop.
pub fn closed_loop_abscissa(
    plant: &DelayedStateSpace,
    meas: &DelayedStateSpace,
    ctrl: &LqgController,
) -> Result<f64> {
    Ok(spectral_abscissa(&closed_loop_drift(plant, meas, ctrl)?))
}
