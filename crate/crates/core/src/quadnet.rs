//! Quadrature-form models of the two-node oscillator network.
//!
//! Node `G_j` holds two modes `a_j`, `b_j` coupled by a two-mode squeezing
//! interaction. The `b` output of each node travels (with transmissivity
//! `alpha` and delay `T`) into the `a` mode of the other node. All models use
//! the fixed state ordering
//! `(a1q, a1p, b1q, b1p, a2q, a2p, b2q, b2p)` and the noise ordering
//! `xi = (xi_1, xi_2)`, where `xi_1` drives `{a1q, a2q, b1q, b2p}` and `xi_2`
//! drives `{a1p, a2p, b1p, b2q}`. Every noise component is unit-intensity white
//! noise.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::statespace::{labels, DelayTerm, DelayedStateSpace};

pub const STATE_LABELS: [&str; 8] = ["a1q", "a1p", "b1q", "b1p", "a2q", "a2p", "b2q", "b2p"];

pub const NOISE_SET1: [&str; 10] = [
    "q_in11", "p_in23", "q_in13", "q_in21", "q_loss11", "q_loss12", "q_loss21", "p_loss22", "q_bs1",
    "p_bs2",
];
pub const NOISE_SET2: [&str; 10] = [
    "p_in11", "q_in23", "p_in13", "p_in21", "p_loss11", "p_loss12", "p_loss21", "q_loss22", "p_bs1",
    "q_bs2",
];
pub const HOMODYNE_NOISE: [&str; 4] = ["q_h1", "p_h1", "q_h2", "p_h2"];

/// Control ordering `(u11, u21, u12, u22)`, each as (q, p).
pub const CONTROL_LABELS: [&str; 8] = [
    "u11_q", "u11_p", "u21_q", "u21_p", "u12_q", "u12_p", "u22_q", "u22_p",
];

pub const PLANT_OUTPUT_LABELS: [&str; 8] = [
    "out11_q", "out11_p", "out21_q", "out21_p", "out12_q", "out12_p", "out22_q", "out22_p",
];

pub const MEASUREMENT_LABELS: [&str; 4] = ["yc11", "yc12", "yc21", "yc22"];

pub const STATE_DIM: usize = 8;
pub const NOISE_DIM: usize = 20;
pub const EXTENDED_NOISE_DIM: usize = 24;
pub const CONTROL_DIM: usize = 8;
pub const MEASUREMENT_DIM: usize = 4;

/// Plant-state indices of `z_1 = (a1q, a2q, b1q, b2p)`.
pub const SET1_STATES: [usize; 4] = [0, 4, 2, 7];
/// Plant-state indices of `z_2 = (a1p, a2p, b1p, b2q)`.
pub const SET2_STATES: [usize; 4] = [1, 5, 3, 6];

pub fn noise_labels() -> Vec<String> {
    labels(&NOISE_SET1)
        .into_iter()
        .chain(labels(&NOISE_SET2))
        .collect()
}

pub fn extended_noise_labels() -> Vec<String> {
    noise_labels()
        .into_iter()
        .chain(labels(&HOMODYNE_NOISE))
        .collect()
}

fn noise_index(label: &str) -> usize {
    NOISE_SET1
        .iter()
        .chain(&NOISE_SET2)
        .chain(&HOMODYNE_NOISE)
        .position(|&l| l == label)
        .unwrap_or_else(|| panic!("unknown noise label {label}"))
}

fn state_index(label: &str) -> usize {
    STATE_LABELS
        .iter()
        .position(|&l| l == label)
        .unwrap_or_else(|| panic!("unknown state label {label}"))
}

/// Physical constants of the network. Rates are in rad/s, delays in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkParams {
    pub kappa: f64,
    pub gamma: f64,
    pub kappa1: f64,
    pub epsilon: f64,
    /// Amplification-loss rate.
    pub chi: f64,
    /// Channel transmissivity; the reflectivity is derived as `sqrt(1 - alpha^2)`.
    pub alpha: f64,
    #[serde(rename = "T", alias = "transmission_delay")]
    pub transmission_delay: f64,
    #[serde(rename = "Tm", alias = "control_delay")]
    pub control_delay: f64,
    /// Weight on the output-quadrature term of the LQG cost.
    pub rho: f64,
}

impl Default for NetworkParams {
    fn default() -> Self {
        Self::ideal()
    }
}

impl NetworkParams {
    /// Lossless, delay-free reference design point.
    pub fn ideal() -> Self {
        let kappa = 1.8e7;
        let kappa1 = 10.0 * kappa;
        Self {
            kappa,
            gamma: 1.5 * kappa,
            kappa1,
            // epsilon / sqrt(2) = sqrt(kappa * kappa1 / 2)
            epsilon: (kappa * kappa1).sqrt(),
            chi: 0.0,
            alpha: 1.0,
            transmission_delay: 0.0,
            control_delay: 0.0,
            rho: 1e7,
        }
    }

    pub fn with_losses(mut self, chi: f64, alpha: f64) -> Self {
        self.chi = chi;
        self.alpha = alpha;
        self
    }

    pub fn with_delays(mut self, transmission: f64, control: f64) -> Self {
        self.transmission_delay = transmission;
        self.control_delay = control;
        self
    }

    pub fn beta(&self) -> f64 {
        (1.0 - self.alpha * self.alpha).max(0.0).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("kappa", self.kappa),
            ("gamma", self.gamma),
            ("kappa1", self.kappa1),
            ("epsilon", self.epsilon),
            ("chi", self.chi),
            ("T", self.transmission_delay),
            ("Tm", self.control_delay),
            ("rho", self.rho),
        ];
        for (name, value) in nonneg {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be finite and >= 0, got {value}"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must lie in [0, 1], got {}", self.alpha),
            });
        }
        Ok(())
    }
}

/// How the modulated control fields enter the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlCoupling {
    /// The modulator output replaces the input field everywhere it appears:
    /// in the directly coupled mode, in the field forwarded to the other node,
    /// in the measured outputs and in the entanglement outputs.
    #[default]
    FullField,
    /// Controls act only on the directly coupled mode's dynamics; no control
    /// feedthrough to any output and no compounded delays.
    DirectOnly,
}

/// Controllable input port: the noise field a modulator replaces.
#[derive(Clone, Copy)]
struct Port {
    /// Control column of the q quadrature; p is the next column.
    control_q: usize,
    /// Extra delay applied to the control before it reaches the node.
    delay: f64,
    /// Dynamics rows of the mode this port couples to directly.
    direct_rows: [usize; 2],
}

/// Accumulates sparse entries per delay and turns them into delay terms.
struct TermSet {
    rows: usize,
    cols: usize,
    entries: BTreeMap<u64, DMatrix<f64>>,
}

impl TermSet {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: BTreeMap::new(),
        }
    }

    fn add(&mut self, row: usize, col: usize, value: f64, delay: f64) {
        let (rows, cols) = (self.rows, self.cols);
        let m = self
            .entries
            .entry((delay + 0.0).to_bits())
            .or_insert_with(|| DMatrix::zeros(rows, cols));
        m[(row, col)] += value;
    }

    fn into_terms(self) -> Vec<DelayTerm> {
        self.entries
            .into_iter()
            .map(|(bits, m)| DelayTerm::new(m, f64::from_bits(bits)))
            .collect()
    }
}

/// Builder for the rows of one system: state columns plus input columns
/// laid out as `[noise..., controls...]`.
struct RowBuilder<'a> {
    params: &'a NetworkParams,
    coupling: Option<ControlCoupling>,
    noise_dim: usize,
    state: TermSet,
    input: TermSet,
}

impl<'a> RowBuilder<'a> {
    fn new(
        params: &'a NetworkParams,
        rows: usize,
        noise_dim: usize,
        coupling: Option<ControlCoupling>,
    ) -> Self {
        let controls = if coupling.is_some() { CONTROL_DIM } else { 0 };
        Self {
            params,
            coupling,
            noise_dim,
            state: TermSet::new(rows, STATE_DIM),
            input: TermSet::new(rows, noise_dim + controls),
        }
    }

    fn port(&self, noise: &str) -> Option<Port> {
        let tm = self.params.control_delay;
        let (name, port) = noise.split_once('_')?;
        let quad = usize::from(name == "p");
        let port = match port {
            "in11" => Port {
                control_q: 0,
                delay: tm,
                direct_rows: [0, 1],
            },
            "in21" => Port {
                control_q: 2,
                delay: 0.0,
                direct_rows: [4, 5],
            },
            "in13" => Port {
                control_q: 4,
                delay: tm,
                direct_rows: [2, 3],
            },
            "in23" => Port {
                control_q: 6,
                delay: 0.0,
                direct_rows: [6, 7],
            },
            _ => return None,
        };
        Some(Port {
            control_q: port.control_q + quad,
            ..port
        })
    }

    fn state(&mut self, row: usize, state: &str, value: f64, delay: f64) {
        self.state.add(row, state_index(state), value, delay);
    }

    /// Noise entry; if the noise is a modulated input port the matching control
    /// entry is added according to the coupling mode. `is_dynamics` marks rows
    /// of the state equation (as opposed to output rows).
    fn noise(&mut self, row: usize, noise: &str, value: f64, delay: f64, is_dynamics: bool) {
        self.input.add(row, noise_index(noise), value, delay);
        let Some(coupling) = self.coupling else {
            return;
        };
        let Some(port) = self.port(noise) else {
            return;
        };
        let applies = match coupling {
            ControlCoupling::FullField => true,
            ControlCoupling::DirectOnly => is_dynamics && port.direct_rows.contains(&row),
        };
        if applies {
            let col = self.noise_dim + port.control_q;
            self.input.add(row, col, value, delay + port.delay);
        }
    }

    fn finish(self) -> (Vec<DelayTerm>, Vec<DelayTerm>) {
        (self.state.into_terms(), self.input.into_terms())
    }
}

/// Rows of the quadrature Langevin equations.
fn dynamics(b: &mut RowBuilder<'_>) {
    let p = *b.params;
    let t = p.transmission_delay;
    let beta = p.beta();
    let sq2 = std::f64::consts::SQRT_2;
    let drift_a = p.gamma / 2.0 + p.kappa / 4.0 + p.chi / 4.0;
    let drift_b = p.kappa1 / 2.0 + p.chi / 4.0;
    let pump = p.epsilon / (2.0 * sq2);
    let link = p.alpha * (p.kappa * p.kappa1 / 2.0).sqrt();
    let half_kappa = (p.kappa / 2.0).sqrt();
    let sg = p.gamma.sqrt();
    let sk1 = p.kappa1.sqrt();
    let loss = (p.chi / 2.0).sqrt();

    let r = state_index;
    // a1q
    b.state(r("a1q"), "a1q", -drift_a, 0.0);
    b.state(r("a1q"), "b1q", pump, 0.0);
    b.state(r("a1q"), "b2p", -link, t);
    b.noise(r("a1q"), "q_in11", -sg, 0.0, true);
    b.noise(r("a1q"), "p_in23", -p.alpha * half_kappa, t, true);
    b.noise(r("a1q"), "p_bs2", -beta * half_kappa, 0.0, true);
    b.noise(r("a1q"), "q_loss11", -loss, 0.0, true);
    // a1p
    b.state(r("a1p"), "a1p", -drift_a, 0.0);
    b.state(r("a1p"), "b1p", -pump, 0.0);
    b.state(r("a1p"), "b2q", link, t);
    b.noise(r("a1p"), "p_in11", -sg, 0.0, true);
    b.noise(r("a1p"), "q_in23", p.alpha * half_kappa, t, true);
    b.noise(r("a1p"), "q_bs2", beta * half_kappa, 0.0, true);
    b.noise(r("a1p"), "p_loss11", -loss, 0.0, true);
    // b1q
    b.state(r("b1q"), "a1q", pump, 0.0);
    b.state(r("b1q"), "b1q", -drift_b, 0.0);
    b.noise(r("b1q"), "q_in13", -sk1, 0.0, true);
    b.noise(r("b1q"), "q_loss12", -loss, 0.0, true);
    // b1p
    b.state(r("b1p"), "a1p", -pump, 0.0);
    b.state(r("b1p"), "b1p", -drift_b, 0.0);
    b.noise(r("b1p"), "p_in13", -sk1, 0.0, true);
    b.noise(r("b1p"), "p_loss12", -loss, 0.0, true);
    // a2q; the beam-splitter noise enters with a plus sign in this row.
    b.state(r("a2q"), "a2q", -drift_a, 0.0);
    b.state(r("a2q"), "b2p", pump, 0.0);
    b.state(r("a2q"), "b1q", -link, t);
    b.noise(r("a2q"), "q_in21", -sg, 0.0, true);
    b.noise(r("a2q"), "q_in13", -p.alpha * half_kappa, t, true);
    b.noise(r("a2q"), "q_bs1", beta * half_kappa, 0.0, true);
    b.noise(r("a2q"), "q_loss21", -loss, 0.0, true);
    // a2p
    b.state(r("a2p"), "a2p", -drift_a, 0.0);
    b.state(r("a2p"), "b2q", pump, 0.0);
    b.state(r("a2p"), "b1p", -link, t);
    b.noise(r("a2p"), "p_in21", -sg, 0.0, true);
    b.noise(r("a2p"), "p_in13", -p.alpha * half_kappa, t, true);
    b.noise(r("a2p"), "p_bs1", -beta * half_kappa, 0.0, true);
    b.noise(r("a2p"), "p_loss21", -loss, 0.0, true);
    // b2q
    b.state(r("b2q"), "a2p", pump, 0.0);
    b.state(r("b2q"), "b2q", -drift_b, 0.0);
    b.noise(r("b2q"), "q_in23", -sk1, 0.0, true);
    b.noise(r("b2q"), "q_loss22", -loss, 0.0, true);
    // b2p
    b.state(r("b2p"), "a2q", pump, 0.0);
    b.state(r("b2p"), "b2p", -drift_b, 0.0);
    b.noise(r("b2p"), "p_in23", -sk1, 0.0, true);
    b.noise(r("b2p"), "p_loss22", -loss, 0.0, true);
}

/// Rows of the eight output-field quadratures, ordered as [`PLANT_OUTPUT_LABELS`].
fn output_fields(b: &mut RowBuilder<'_>) {
    let p = *b.params;
    let t = p.transmission_delay;
    let beta = p.beta();
    let sg = p.gamma.sqrt();
    let half_kappa = (p.kappa / 2.0).sqrt();
    let forward = p.alpha * p.kappa1.sqrt();

    b.state(0, "a1q", sg, 0.0);
    b.noise(0, "q_in11", 1.0, 0.0, false);
    b.state(1, "a1p", sg, 0.0);
    b.noise(1, "p_in11", 1.0, 0.0, false);
    b.state(2, "a2q", sg, 0.0);
    b.noise(2, "q_in21", 1.0, 0.0, false);
    b.state(3, "a2p", sg, 0.0);
    b.noise(3, "p_in21", 1.0, 0.0, false);

    b.state(4, "a1p", -half_kappa, 0.0);
    b.state(4, "b2q", forward, t);
    b.noise(4, "q_in23", p.alpha, t, false);
    b.noise(4, "q_bs2", beta, 0.0, false);
    b.state(5, "a1q", half_kappa, 0.0);
    b.state(5, "b2p", forward, t);
    b.noise(5, "p_in23", p.alpha, t, false);
    b.noise(5, "p_bs2", beta, 0.0, false);

    b.state(6, "a2q", half_kappa, 0.0);
    b.state(6, "b1q", forward, t);
    b.noise(6, "q_in13", p.alpha, t, false);
    b.noise(6, "q_bs1", beta, 0.0, false);
    b.state(7, "a2p", half_kappa, 0.0);
    b.state(7, "b1p", forward, t);
    b.noise(7, "p_in13", p.alpha, t, false);
    b.noise(7, "p_bs1", beta, 0.0, false);
}

/// Full 8-state plant. Inputs are the 20 noises followed, when
/// `with_control_inputs` is set, by the 8 controls (full-field coupling).
pub fn build_plant(params: &NetworkParams, with_control_inputs: bool) -> Result<DelayedStateSpace> {
    let coupling = with_control_inputs.then_some(ControlCoupling::FullField);
    build_plant_with(params, coupling)
}

pub fn build_plant_with(
    params: &NetworkParams,
    coupling: Option<ControlCoupling>,
) -> Result<DelayedStateSpace> {
    params.validate()?;
    let mut dyn_rows = RowBuilder::new(params, STATE_DIM, NOISE_DIM, coupling);
    dynamics(&mut dyn_rows);
    let (a_terms, b_terms) = dyn_rows.finish();

    let mut out_rows = RowBuilder::new(params, PLANT_OUTPUT_LABELS.len(), NOISE_DIM, coupling);
    output_fields(&mut out_rows);
    let (c_terms, d_terms) = out_rows.finish();

    let mut inputs = noise_labels();
    if coupling.is_some() {
        inputs.extend(labels(&CONTROL_LABELS));
    }
    DelayedStateSpace::new(
        a_terms,
        b_terms,
        c_terms,
        d_terms,
        labels(&STATE_LABELS),
        inputs,
        labels(&PLANT_OUTPUT_LABELS),
    )
}

/// Dual-homodyne measurement map `y_c = (yc11, yc12, yc21, yc22)` over the
/// plant states. Inputs are the 24 extended noises followed by the 8 controls;
/// with [`ControlCoupling::DirectOnly`] the control columns are zero.
/// The rows measured at the remote node carry delay `T` on every term.
pub fn build_measurement_map(params: &NetworkParams) -> Result<DelayedStateSpace> {
    build_measurement_map_with(params, ControlCoupling::FullField)
}

pub fn build_measurement_map_with(
    params: &NetworkParams,
    coupling: ControlCoupling,
) -> Result<DelayedStateSpace> {
    params.validate()?;
    let p = *params;
    let t = p.transmission_delay;
    let beta = p.beta();
    let inv_sq2 = std::f64::consts::FRAC_1_SQRT_2;
    let k = p.kappa.sqrt() / 2.0;
    let fwd = p.alpha * (p.kappa1 / 2.0).sqrt();
    let a = p.alpha * inv_sq2;
    let bs = beta * inv_sq2;

    let mut b = RowBuilder::new(params, MEASUREMENT_DIM, EXTENDED_NOISE_DIM, Some(coupling));
    b.state(0, "a2q", k, 0.0);
    b.state(0, "b1q", fwd, 0.0);
    b.noise(0, "q_in13", a, 0.0, false);
    b.noise(0, "q_bs1", bs, 0.0, false);
    b.noise(0, "q_h2", inv_sq2, 0.0, false);

    b.state(1, "a2p", -k, 0.0);
    b.state(1, "b1p", -fwd, 0.0);
    b.noise(1, "p_in13", -a, 0.0, false);
    b.noise(1, "p_bs1", -bs, 0.0, false);
    b.noise(1, "p_h2", inv_sq2, 0.0, false);

    b.state(2, "a1p", -k, t);
    b.state(2, "b2q", fwd, t);
    b.noise(2, "q_in23", a, t, false);
    b.noise(2, "q_bs2", bs, t, false);
    b.noise(2, "q_h1", inv_sq2, t, false);

    b.state(3, "a1q", -k, t);
    b.state(3, "b2p", -fwd, t);
    b.noise(3, "p_in23", -a, t, false);
    b.noise(3, "p_bs2", -bs, t, false);
    b.noise(3, "p_h1", inv_sq2, t, false);

    let (c_terms, d_terms) = b.finish();
    let inputs = extended_noise_labels()
        .into_iter()
        .chain(labels(&CONTROL_LABELS))
        .collect();
    DelayedStateSpace::new(
        vec![],
        vec![],
        c_terms,
        d_terms,
        labels(&STATE_LABELS),
        inputs,
        labels(&MEASUREMENT_LABELS),
    )
}

/// The two decoupled quadrature sets of the uncontrolled network.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsystemPair {
    /// States `(a1q, a2q, b1q, b2p)`, noises `xi_1`, output `out11_q + out21_q`.
    pub sys1: DelayedStateSpace,
    /// States `(a1p, a2p, b1p, b2q)`, noises `xi_2`, output `out11_p - out21_p`.
    pub sys2: DelayedStateSpace,
}

pub fn build_uncontrolled_subsystems(params: &NetworkParams) -> Result<SubsystemPair> {
    let plant = build_plant(params, false)?;
    let out = |l: &str| plant.output_index(l).expect("plant output label");
    let sys1 = extract_subsystem(
        &plant,
        &SET1_STATES,
        &SET2_STATES,
        0..10,
        [(out("out11_q"), 1.0), (out("out21_q"), 1.0)],
        "out11_q+out21_q",
    )?;
    let sys2 = extract_subsystem(
        &plant,
        &SET2_STATES,
        &SET1_STATES,
        10..20,
        [(out("out11_p"), 1.0), (out("out21_p"), -1.0)],
        "out11_p-out21_p",
    )?;
    Ok(SubsystemPair { sys1, sys2 })
}

fn extract_subsystem(
    plant: &DelayedStateSpace,
    states: &[usize; 4],
    others: &[usize; 4],
    noises: std::ops::Range<usize>,
    combo: [(usize, f64); 2],
    output_label: &str,
) -> Result<DelayedStateSpace> {
    let noise_cols: Vec<usize> = noises.clone().collect();
    let other_noise: Vec<usize> = (0..NOISE_DIM).filter(|c| !noises.contains(c)).collect();
    let leak = |m: &DMatrix<f64>, rows: &[usize], cols: &[usize]| {
        rows.iter()
            .any(|&r| cols.iter().any(|&c| m[(r, c)] != 0.0))
    };

    let mut a_terms = Vec::new();
    for t in plant.a_terms() {
        if leak(&t.matrix, states, others) {
            return Err(Error::InvalidModel("quadrature sets are coupled in A".into()));
        }
        let m = t.matrix.select_rows(states.iter()).select_columns(states.iter());
        a_terms.push(DelayTerm::new(m, t.delay));
    }
    let mut b_terms = Vec::new();
    for t in plant.b_terms() {
        if leak(&t.matrix, states, &other_noise) {
            return Err(Error::InvalidModel("quadrature sets share noises in B".into()));
        }
        let m = t.matrix.select_rows(states.iter()).select_columns(noise_cols.iter());
        b_terms.push(DelayTerm::new(m, t.delay));
    }
    let combine = |m: &DMatrix<f64>| -> DMatrix<f64> {
        let row = m.row(combo[0].0) * combo[0].1 + m.row(combo[1].0) * combo[1].1;
        DMatrix::from_row_slice(1, m.ncols(), row.as_slice())
    };
    let c_terms = plant
        .c_terms()
        .iter()
        .map(|t| DelayTerm::new(combine(&t.matrix).select_columns(states.iter()), t.delay))
        .collect();
    let d_terms = plant
        .d_terms()
        .iter()
        .map(|t| DelayTerm::new(combine(&t.matrix).select_columns(noise_cols.iter()), t.delay))
        .collect();
    DelayedStateSpace::new(
        a_terms,
        b_terms,
        c_terms,
        d_terms,
        states.iter().map(|&i| STATE_LABELS[i].to_string()).collect(),
        noise_cols.iter().map(|&i| noise_labels()[i].clone()).collect(),
        vec![output_label.to_string()],
    )
}
