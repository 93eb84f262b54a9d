//! Frequency responses of delayed systems and the EPR power spectra
//! `V+ = Tr[H1* H1]`, `V- = Tr[H2* H2]`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::closedloop::ClosedLoopSystem;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::quadnet::SubsystemPair;
use crate::statespace::{CMatrix, DelayedStateSpace};

/// `V+ + V-` below this value certifies entanglement at that frequency.
pub const ENTANGLEMENT_THRESHOLD: f64 = 4.0;
/// Resolvent condition number above which a frequency is treated as a pole.
pub const MAX_RESOLVENT_CONDITION: f64 = 1e14;

pub const DEFAULT_LOW: f64 = 1e3;
pub const DEFAULT_HIGH: f64 = 1e9;
pub const DEFAULT_POINTS: usize = 2000;
/// Above this frequency delayed systems get a denser grid.
pub const DENSIFY_FROM: f64 = 1e5;
pub const DENSIFIED_POINTS: usize = 8000;

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyGrid {
    omegas: Vec<f64>,
}

impl FrequencyGrid {
    pub fn new(omegas: Vec<f64>) -> Result<Self> {
        if omegas.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if let Some(w) = omegas.iter().find(|w| !w.is_finite() || **w <= 0.0) {
            return Err(Error::InvalidGrid(format!("frequency {w} is not finite and positive")));
        }
        if omegas.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("frequencies must be strictly increasing".into()));
        }
        Ok(Self { omegas })
    }

    /// `n` logarithmically spaced points over `[lo, hi]`.
    pub fn log(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo > 0.0 && hi.is_finite() && hi > lo) {
            return Err(Error::InvalidGrid(format!("need 0 < lo < hi, got {lo}..{hi}")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid("need at least 2 points".into()));
        }
        let (a, b) = (lo.log10(), hi.log10());
        let step = (b - a) / (n - 1) as f64;
        let mut omegas: Vec<f64> = (0..n).map(|i| 10f64.powf(a + step * i as f64)).collect();
        omegas[0] = lo;
        omegas[n - 1] = hi;
        Self::new(omegas)
    }

    /// Replace the part of the grid above `from` by `points` log-spaced
    /// frequencies up to the current maximum.
    pub fn densified(&self, from: f64, points: usize) -> Result<Self> {
        let hi = self.max();
        if from >= hi {
            return Ok(self.clone());
        }
        let mut omegas: Vec<f64> = self.omegas.iter().copied().filter(|&w| w <= from).collect();
        let start = from.max(self.min());
        let upper = Self::log(start, hi, points + 1)?;
        omegas.extend(upper.omegas.into_iter().filter(|&w| w > start));
        Self::new(omegas)
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }
    pub fn len(&self) -> usize {
        self.omegas.len()
    }
    pub fn is_empty(&self) -> bool {
        self.omegas.is_empty()
    }
    pub fn min(&self) -> f64 {
        self.omegas[0]
    }
    pub fn max(&self) -> f64 {
        self.omegas[self.omegas.len() - 1]
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::log(DEFAULT_LOW, DEFAULT_HIGH, DEFAULT_POINTS).expect("default grid")
    }
}

/// Compact grid description `lo:hi:n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Densify above [`DENSIFY_FROM`] when the system has delays.
    #[serde(default = "default_true")]
    pub densify_delays: bool,
}

fn default_true() -> bool {
    true
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: DEFAULT_LOW,
            hi: DEFAULT_HIGH,
            n: DEFAULT_POINTS,
            densify_delays: true,
        }
    }
}

impl GridSpec {
    pub fn build(&self, has_delays: bool) -> Result<FrequencyGrid> {
        let grid = FrequencyGrid::log(self.lo, self.hi, self.n)?;
        if has_delays && self.densify_delays {
            grid.densified(DENSIFY_FROM, DENSIFIED_POINTS)
        } else {
            Ok(grid)
        }
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidGrid(format!("expected lo:hi:n, got `{s}`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let spec = Self {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            n: parts[2].trim().parse().map_err(|_| bad())?,
            densify_delays: true,
        };
        spec.build(false)?;
        Ok(spec)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e}:{:e}:{}", self.lo, self.hi, self.n)
    }
}

fn norm1(m: &CMatrix) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `C(iw) (iw I - A(iw))^{-1} B(iw) + D(iw)` with every delay term carrying
/// its factor `exp(-iw tau)`.
pub fn freq_response(sys: &DelayedStateSpace, omega: f64) -> Result<CMatrix> {
    let s = Complex64::new(0.0, omega);
    let n = sys.state_dim();
    let d = sys.eval_d(s);
    if n == 0 {
        return Ok(d);
    }
    let resolvent = CMatrix::identity(n, n) * s - sys.eval_a(s);
    let singular = |condition: f64| Error::SingularResolvent { omega, condition };
    let inv = resolvent
        .clone()
        .try_inverse()
        .ok_or_else(|| singular(f64::INFINITY))?;
    let condition = norm1(&resolvent) * norm1(&inv);
    if !(condition <= MAX_RESOLVENT_CONDITION) {
        return Err(singular(condition));
    }
    Ok(sys.eval_c(s) * inv * sys.eval_b(s) + d)
}

/// `Tr[H* H]` of a single-output system: the squared norm of its row.
pub fn row_power(sys: &DelayedStateSpace, omega: f64) -> Result<f64> {
    let h = freq_response(sys, omega)?;
    Ok(h.iter().map(|z| z.norm_sqr()).sum())
}

pub fn to_db(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::NonPositive { value: x });
    }
    Ok(10.0 * x.log10())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpectraResult {
    pub grid: FrequencyGrid,
    pub v_plus: Vec<f64>,
    pub v_minus: Vec<f64>,
    pub v_sum: Vec<f64>,
    pub entangled_mask: Vec<bool>,
    /// Intervals where `v_sum < 4`; interior edges refined to 3 significant figures.
    pub band_edges: Vec<(f64, f64)>,
}

fn single_output(sys: &DelayedStateSpace, name: &str) -> Result<()> {
    if sys.output_dim() != 1 {
        return Err(Error::DimensionMismatch {
            context: format!("{name} for spectra"),
            expected: "1 output".into(),
            found: format!("{} outputs", sys.output_dim()),
        });
    }
    Ok(())
}

pub fn compute_spectra(
    sys1: &DelayedStateSpace,
    sys2: &DelayedStateSpace,
    grid: &FrequencyGrid,
) -> Result<SpectraResult> {
    compute_spectra_with(sys1, sys2, grid, Execution::default())
}

pub fn compute_spectra_with(
    sys1: &DelayedStateSpace,
    sys2: &DelayedStateSpace,
    grid: &FrequencyGrid,
    exec: Execution,
) -> Result<SpectraResult> {
    single_output(sys1, "sys1")?;
    single_output(sys2, "sys2")?;
    let pairs = par::try_map(grid.omegas(), exec, |&w| {
        Ok::<_, Error>((row_power(sys1, w)?, row_power(sys2, w)?))
    })?;
    let (v_plus, v_minus): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let v_sum: Vec<f64> = v_plus.iter().zip(&v_minus).map(|(a, b)| a + b).collect();
    let entangled_mask: Vec<bool> = v_sum.iter().map(|&v| v < ENTANGLEMENT_THRESHOLD).collect();
    let sum_at = |w: f64| -> Result<f64> { Ok(row_power(sys1, w)? + row_power(sys2, w)?) };
    let band_edges = band_edges(grid.omegas(), &entangled_mask, sum_at)?;
    Ok(SpectraResult {
        grid: grid.clone(),
        v_plus,
        v_minus,
        v_sum,
        entangled_mask,
        band_edges,
    })
}

pub fn uncontrolled_spectra(
    pair: &SubsystemPair,
    grid: &FrequencyGrid,
    exec: Execution,
) -> Result<SpectraResult> {
    compute_spectra_with(&pair.sys1, &pair.sys2, grid, exec)
}

pub fn closed_loop_spectra(
    cl: &ClosedLoopSystem,
    grid: &FrequencyGrid,
    exec: Execution,
) -> Result<SpectraResult> {
    let out = crate::closedloop::modified_outputs(cl);
    compute_spectra_with(&out.select_outputs(&[0])?, &out.select_outputs(&[1])?, grid, exec)
}

fn round_sig(x: f64, digits: i32) -> f64 {
    let mag = x.abs().log10().floor() as i32;
    let factor = 10f64.powi(digits - 1 - mag);
    (x * factor).round() / factor
}

/// Bisect (in log frequency) for the threshold crossing inside `(lo, hi)`.
fn refine_edge(
    mut lo: f64,
    mut hi: f64,
    lo_inside: bool,
    sum_at: &impl Fn(f64) -> Result<f64>,
) -> Result<f64> {
    while hi / lo - 1.0 > 1e-5 {
        let mid = (lo * hi).sqrt();
        if (sum_at(mid)? < ENTANGLEMENT_THRESHOLD) == lo_inside {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(round_sig((lo * hi).sqrt(), 3))
}

fn band_edges(
    omegas: &[f64],
    mask: &[bool],
    sum_at: impl Fn(f64) -> Result<f64>,
) -> Result<Vec<(f64, f64)>> {
    let mut bands = Vec::new();
    let mut start = mask.first().copied().unwrap_or(false).then(|| omegas[0]);
    for i in 1..omegas.len() {
        if mask[i] == mask[i - 1] {
            continue;
        }
        let edge = refine_edge(omegas[i - 1], omegas[i], mask[i - 1], &sum_at)?;
        if mask[i] {
            start = Some(edge);
        } else if let Some(s) = start.take() {
            bands.push((s, edge));
        }
    }
    if let Some(s) = start {
        bands.push((s, omegas[omegas.len() - 1]));
    }
    Ok(bands)
}

fn db_field(x: f64) -> String {
    to_db(x).map(|v| format!("{v:.8e}")).unwrap_or_default()
}

impl SpectraResult {
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "omega_rad_s,v_plus_db,v_minus_db,v_sum_db,entangled")?;
        for (i, w) in self.grid.omegas().iter().enumerate() {
            writeln!(
                out,
                "{w:.8e},{},{},{},{}",
                db_field(self.v_plus[i]),
                db_field(self.v_minus[i]),
                db_field(self.v_sum[i]),
                u8::from(self.entangled_mask[i])
            )?;
        }
        Ok(())
    }

    /// Indices of grid points inside `[lo, hi]`.
    pub fn indices_in(&self, lo: f64, hi: f64) -> Vec<usize> {
        (0..self.grid.len())
            .filter(|&i| (lo..=hi).contains(&self.grid.omegas()[i]))
            .collect()
    }
}

/// Pointwise `10 log10(reference / controlled)` of `v_sum`, in dB.
pub fn reduction_db(reference: &SpectraResult, controlled: &SpectraResult) -> Result<Vec<f64>> {
    if reference.grid != controlled.grid {
        return Err(Error::InvalidGrid("spectra were computed on different grids".into()));
    }
    reference
        .v_sum
        .iter()
        .zip(&controlled.v_sum)
        .map(|(&u, &c)| Ok(to_db(u)? - to_db(c)?))
        .collect()
}

/// Mean of the pointwise reduction over grid points with `lo < omega <= hi`.
pub fn mean_reduction_db(
    reference: &SpectraResult,
    controlled: &SpectraResult,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let red = reduction_db(reference, controlled)?;
    let picked: Vec<f64> = reference
        .grid
        .omegas()
        .iter()
        .zip(red)
        .filter(|(w, _)| **w > lo && **w <= hi)
        .map(|(_, r)| r)
        .collect();
    if picked.is_empty() {
        return Err(Error::InvalidGrid(format!("no grid points in ({lo:e}, {hi:e}]")));
    }
    Ok(picked.iter().sum::<f64>() / picked.len() as f64)
}
