//! Plant + controller interconnection with delay tags, and the entanglement
//! outputs with the classical controller contribution removed.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lqgsynth::{check_shapes, LqgController};
use crate::quadnet::{
    extended_noise_labels, NetworkParams, CONTROL_DIM, EXTENDED_NOISE_DIM, NOISE_DIM, STATE_DIM,
};
use crate::statespace::{DelayTerm, DelayedStateSpace};

/// Relative tolerance used when matching delays to the admissible set.
const DELAY_MATCH: f64 = 1e-12;

/// One entanglement output row: a signed combination of plant output fields.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputRow {
    pub label: String,
    pub plant_outputs: Vec<(String, f64)>,
    /// Control inputs whose (classical) contribution to this row was dropped.
    pub omitted_controls: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClosedLoopSystem {
    /// 16 states (plant then controller), 24 noise inputs, 2 outputs.
    pub sys: DelayedStateSpace,
    pub plant_output_rows: Vec<OutputRow>,
}

fn block(n: usize, rows: (usize, usize), m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    out.view_mut(rows, m.shape()).copy_from(m);
    out
}

fn padded_input(rows: usize, top: Option<&DMatrix<f64>>, bottom: Option<&DMatrix<f64>>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, EXTENDED_NOISE_DIM);
    if let Some(t) = top {
        out.view_mut((0, 0), t.shape()).copy_from(t);
    }
    if let Some(b) = bottom {
        out.view_mut((rows - b.nrows(), 0), b.shape()).copy_from(b);
    }
    out
}

/// Assemble the measurement-feedback loop. Every plant and measurement term
/// keeps its own delay; control terms are composed with `Cc` at the delay of
/// the channel that carries them.
pub fn assemble(
    plant: &DelayedStateSpace,
    meas: &DelayedStateSpace,
    ctrl: &LqgController,
    params: &NetworkParams,
) -> Result<ClosedLoopSystem> {
    params.validate()?;
    check_shapes(plant, meas)?;
    ctrl.validate()?;
    let n = STATE_DIM;
    let nc = ctrl.ac.nrows();
    let total = n + nc;

    let mut a_terms = vec![DelayTerm::undelayed(block(total, (n, n), &ctrl.ac))];
    let mut b_terms = Vec::new();
    for t in plant.a_terms() {
        a_terms.push(DelayTerm::new(block(total, (0, 0), &t.matrix), t.delay));
    }
    for t in plant.b_terms() {
        let noise = t.matrix.columns(0, NOISE_DIM).clone_owned();
        b_terms.push(DelayTerm::new(padded_input(total, Some(&noise), None), t.delay));
        let bu = t.matrix.columns(NOISE_DIM, CONTROL_DIM);
        a_terms.push(DelayTerm::new(block(total, (0, n), &(bu * &ctrl.cc)), t.delay));
    }
    for t in meas.c_terms() {
        a_terms.push(DelayTerm::new(block(total, (n, 0), &(&ctrl.bc * &t.matrix)), t.delay));
    }
    for t in meas.d_terms() {
        let dv = &ctrl.bc * t.matrix.columns(0, EXTENDED_NOISE_DIM);
        b_terms.push(DelayTerm::new(padded_input(total, None, Some(&dv)), t.delay));
        let du = t.matrix.columns(EXTENDED_NOISE_DIM, CONTROL_DIM);
        a_terms.push(DelayTerm::new(
            block(total, (n, n), &(&ctrl.bc * du * &ctrl.cc)),
            t.delay,
        ));
    }

    let specs = [
        ("v_plus", [("out11_q", 1.0), ("out21_q", 1.0)]),
        ("v_minus", [("out11_p", 1.0), ("out21_p", -1.0)]),
    ];
    let mut combos = Vec::new();
    let mut rows = Vec::new();
    for (label, parts) in specs {
        let mut idx = Vec::new();
        for (name, sign) in parts {
            let i = plant.output_index(name).ok_or_else(|| {
                Error::InvalidModel(format!("plant has no output `{name}`"))
            })?;
            idx.push((i, sign));
        }
        rows.push(OutputRow {
            label: label.to_string(),
            plant_outputs: parts.iter().map(|&(l, s)| (l.to_string(), s)).collect(),
            omitted_controls: Vec::new(),
        });
        combos.push(idx);
    }
    let combine = |m: &DMatrix<f64>, cols: std::ops::Range<usize>| {
        DMatrix::from_fn(combos.len(), cols.len(), |r, c| {
            combos[r].iter().map(|&(i, s)| s * m[(i, cols.start + c)]).sum()
        })
    };
    let mut c_terms = Vec::new();
    for t in plant.c_terms() {
        let mut c = DMatrix::zeros(combos.len(), total);
        c.view_mut((0, 0), (combos.len(), n)).copy_from(&combine(&t.matrix, 0..n));
        c_terms.push(DelayTerm::new(c, t.delay));
    }
    let mut d_terms = Vec::new();
    for t in plant.d_terms() {
        let mut d = DMatrix::zeros(combos.len(), EXTENDED_NOISE_DIM);
        d.columns_mut(0, NOISE_DIM).copy_from(&combine(&t.matrix, 0..NOISE_DIM));
        d_terms.push(DelayTerm::new(d, t.delay));
        let dropped = combine(&t.matrix, NOISE_DIM..NOISE_DIM + CONTROL_DIM);
        for (r, row) in rows.iter_mut().enumerate() {
            for j in 0..CONTROL_DIM {
                let name = &plant.input_labels()[NOISE_DIM + j];
                if dropped[(r, j)] != 0.0 && !row.omitted_controls.contains(name) {
                    row.omitted_controls.push(name.clone());
                }
            }
        }
    }

    let state_labels = plant
        .state_labels()
        .iter()
        .cloned()
        .chain((1..=nc).map(|i| format!("zc{i}")))
        .collect();
    let sys = DelayedStateSpace::new(
        a_terms,
        b_terms,
        c_terms,
        d_terms,
        state_labels,
        extended_noise_labels(),
        rows.iter().map(|r| r.label.clone()).collect(),
    )?;
    check_delay_closure(&sys, params)?;
    Ok(ClosedLoopSystem {
        sys,
        plant_output_rows: rows,
    })
}

/// Delays that can legitimately appear after assembly.
pub fn admissible_delays(params: &NetworkParams) -> Vec<f64> {
    let t = params.transmission_delay;
    let tm = params.control_delay;
    vec![0.0, t, tm, t + tm]
}

fn check_delay_closure(sys: &DelayedStateSpace, params: &NetworkParams) -> Result<()> {
    let allowed = admissible_delays(params);
    for d in sys.delays() {
        let ok = allowed
            .iter()
            .any(|&a| (d - a).abs() <= DELAY_MATCH * a.max(d).max(f64::MIN_POSITIVE));
        if !ok {
            return Err(Error::InvalidModel(format!(
                "assembled loop carries unexpected delay {d:e} s"
            )));
        }
    }
    Ok(())
}

/// The two entanglement outputs `(C, 0) z + D xi`; controller states and
/// control feedthrough never reach them.
pub fn modified_outputs(cl: &ClosedLoopSystem) -> DelayedStateSpace {
    cl.sys.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqgsynth::{build_cost, synthesize};
    use crate::quadnet::{
        build_measurement_map, build_measurement_map_with, build_plant, build_plant_with,
        ControlCoupling, SET1_STATES, SET2_STATES,
    };
    use crate::solvers::spectral_abscissa;

    fn ideal_controller() -> LqgController {
        let p = NetworkParams::ideal();
        synthesize(
            &build_plant(&p, true).unwrap(),
            &build_measurement_map(&p).unwrap(),
            &build_cost(&p).unwrap(),
        )
        .unwrap()
    }

    fn loop_for(p: &NetworkParams, ctrl: &LqgController) -> ClosedLoopSystem {
        assemble(
            &build_plant(p, true).unwrap(),
            &build_measurement_map(p).unwrap(),
            ctrl,
            p,
        )
        .unwrap()
    }

    #[test]
    fn zero_delay_loop_is_lti_and_stable() {
        let p = NetworkParams::ideal();
        let cl = loop_for(&p, &ideal_controller());
        assert!(cl.sys.is_delay_free());
        assert_eq!(cl.sys.state_dim(), 16);
        assert_eq!(cl.sys.input_dim(), 24);
        assert!(spectral_abscissa(&cl.sys.a()) < 0.0);
    }

    #[test]
    fn quadrature_sets_never_couple_directly() {
        let p = NetworkParams::ideal().with_losses(1e6, 0.9).with_delays(1e-6, 2e-6);
        let cl = loop_for(&p, &ideal_controller());
        for t in cl.sys.a_terms() {
            for &i in &SET1_STATES {
                for &j in &SET2_STATES {
                    assert_eq!(t.matrix[(i, j)], 0.0);
                    assert_eq!(t.matrix[(j, i)], 0.0);
                }
            }
        }
    }

    #[test]
    fn output_rows_ignore_controller_states() {
        let cl = loop_for(&NetworkParams::ideal(), &ideal_controller());
        let c = cl.sys.c();
        assert!(c.columns(8, 8).iter().all(|&v| v == 0.0));
        let d = cl.sys.d();
        let col = |l: &str| cl.sys.input_index(l).unwrap();
        let nz: Vec<usize> = (0..24).filter(|&j| d[(0, j)] != 0.0).collect();
        assert_eq!(nz, vec![col("q_in11"), col("q_in21")]);
        assert_eq!(d[(1, col("p_in11"))], 1.0);
        assert_eq!(d[(1, col("p_in21"))], -1.0);
        assert_eq!((0..24).filter(|&j| d[(1, j)] != 0.0).count(), 2);
        assert_eq!(cl.plant_output_rows[0].omitted_controls, ["u11_q", "u21_q"]);
    }

    #[test]
    fn full_field_delays_close_over_sums() {
        let p = NetworkParams::ideal().with_delays(1e-6, 2e-6);
        let cl = loop_for(&p, &ideal_controller());
        assert_eq!(cl.sys.delays(), vec![0.0, 1e-6, 2e-6, 1e-6 + 2e-6]);
    }

    #[test]
    fn direct_only_delays_stay_in_base_set() {
        let p = NetworkParams::ideal().with_delays(1e-6, 2e-6);
        let coupling = ControlCoupling::DirectOnly;
        let cl = assemble(
            &build_plant_with(&p, Some(coupling)).unwrap(),
            &build_measurement_map_with(&p, coupling).unwrap(),
            &ideal_controller(),
            &p,
        )
        .unwrap();
        assert_eq!(cl.sys.delays(), vec![0.0, 1e-6, 2e-6]);
    }

    #[test]
    fn rejects_controller_of_wrong_shape() {
        let p = NetworkParams::ideal();
        let mut ctrl = LqgController::zero();
        ctrl.bc = DMatrix::zeros(8, 3);
        let err = assemble(
            &build_plant(&p, true).unwrap(),
            &build_measurement_map(&p).unwrap(),
            &ctrl,
            &p,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }
}
