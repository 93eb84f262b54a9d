//! Named, config-driven pipelines: build the network, obtain a controller,
//! assemble the loop, compute spectra and stability, and write the results.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::closedloop::{assemble, ClosedLoopSystem};
use crate::ddestab::{check_closed_loop, rightmost_roots, StabilityReport, Verdict, DEFAULT_ORDER, ROOT_COUNT};
use crate::error::{Error, Result};
use crate::lqgsynth::{build_cost_with, synthesize, CostForm, LqgController};
use crate::par::Execution;
use crate::quadnet::{
    build_measurement_map, build_plant, build_uncontrolled_subsystems, NetworkParams,
};
use crate::spectra::{
    closed_loop_spectra, mean_reduction_db, uncontrolled_spectra, GridSpec, SpectraResult,
};

/// Name of the scenario whose controller the others reuse.
pub const REFERENCE_SCENARIO: &str = "fig1-ideal";
pub const CONTROLLER_FILE: &str = "controller.json";
/// Environment variable overriding the output directory.
pub const OUTPUT_ENV: &str = "EPRNET_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "eprnet-out";

/// Upper edge of the low-frequency band used for the summary reduction.
pub const LOW_BAND: f64 = 1e4;
pub const MID_BAND: f64 = 1e5;
pub const WIDE_BAND: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControllerSource {
    None,
    Synthesize,
    /// Controller JSON; relative paths resolve against the output directory.
    File(PathBuf),
}

impl ControllerSource {
    /// The controller written by the reference scenario.
    pub fn reference() -> Self {
        Self::File(Path::new(REFERENCE_SCENARIO).join(CONTROLLER_FILE))
    }

    /// `none`, `synth`/`synthesize`, or a file path.
    pub fn parse(text: &str) -> Self {
        match text {
            "none" => Self::None,
            "synth" | "synthesize" => Self::Synthesize,
            path => Self::File(PathBuf::from(path)),
        }
    }

    fn describe(&self) -> String {
        match self {
            Self::None => "none".into(),
            Self::Synthesize => "synthesize".into(),
            Self::File(p) => format!("file:{}", p.display()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub params: NetworkParams,
    pub controller: ControllerSource,
    pub grid: GridSpec,
    pub stability_order: usize,
    pub cost_form: CostForm,
}

impl Scenario {
    fn builtin(name: &str, description: &str, params: NetworkParams, controller: ControllerSource) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            params,
            controller,
            grid: GridSpec::default(),
            stability_order: DEFAULT_ORDER,
            cost_form: CostForm::default(),
        }
    }
}

pub const AMPLIFICATION_LOSS: f64 = 1.3975e6;
pub const HEAVY_AMPLIFICATION_LOSS: f64 = 5.5902e6;
pub const TRANSMISSION_DELAY: f64 = 1e-6;
pub const CONTROL_DELAY: f64 = 2e-6;

/// The built-in scenarios, in dependency order.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let ideal = NetworkParams::ideal();
    let reuse = ControllerSource::reference;
    vec![
        Scenario::builtin(
            REFERENCE_SCENARIO,
            "ideal network, synthesized LQG controller",
            ideal,
            ControllerSource::Synthesize,
        ),
        Scenario::builtin(
            "fig2-delays",
            "ideal network with transmission and control delays",
            ideal.with_delays(TRANSMISSION_DELAY, CONTROL_DELAY),
            reuse(),
        ),
        Scenario::builtin(
            "fig3-amploss",
            "amplification loss, lossless channel",
            ideal.with_losses(AMPLIFICATION_LOSS, 1.0),
            reuse(),
        ),
        Scenario::builtin(
            "fig5-loss3",
            "amplification loss, 3% transmission loss",
            ideal.with_losses(AMPLIFICATION_LOSS, 0.97),
            reuse(),
        ),
        Scenario::builtin(
            "fig7-loss5",
            "amplification loss, 5% transmission loss",
            ideal.with_losses(AMPLIFICATION_LOSS, 0.95),
            reuse(),
        ),
        Scenario::builtin(
            "fig19-heavyloss",
            "heavy amplification loss, 5% transmission loss",
            ideal.with_losses(HEAVY_AMPLIFICATION_LOSS, 0.95),
            reuse(),
        ),
        Scenario::builtin(
            "fig20-heavyloss-delays",
            "heavy losses with transmission and control delays",
            ideal
                .with_losses(HEAVY_AMPLIFICATION_LOSS, 0.95)
                .with_delays(TRANSMISSION_DELAY, CONTROL_DELAY),
            reuse(),
        ),
    ]
}

/// Accepts full names and the short `figN` prefixes.
pub fn find_scenario<'a>(scenarios: &'a [Scenario], name: &str) -> Option<&'a Scenario> {
    scenarios.iter().find(|s| s.name == name).or_else(|| {
        scenarios
            .iter()
            .find(|s| s.name.split('-').next() == Some(name))
    })
}

/// Built-ins followed by the scenarios of `config` (which may replace a
/// built-in of the same name).
pub fn list_scenarios(config: Option<&Config>) -> Result<Vec<Scenario>> {
    let mut all = builtin_scenarios();
    if let Some(cfg) = config {
        for s in cfg.scenarios()? {
            match all.iter_mut().find(|b| b.name == s.name) {
                Some(slot) => *slot = s,
                None => all.push(s),
            }
        }
    }
    Ok(all)
}

pub fn format_listing(scenarios: &[Scenario]) -> String {
    let mut out = format!(
        "{:<24} {:>10} {:>6} {:>8} {:>8} {:<28} {}\n",
        "name", "chi", "alpha", "T", "Tm", "controller", "description"
    );
    for s in scenarios {
        let p = &s.params;
        out.push_str(&format!(
            "{:<24} {:>10.4e} {:>6} {:>8.1e} {:>8.1e} {:<28} {}\n",
            s.name,
            p.chi,
            p.alpha,
            p.transmission_delay,
            p.control_delay,
            s.controller.describe(),
            s.description
        ));
    }
    out
}

// ---------------------------------------------------------------- config

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub output_dir: Option<PathBuf>,
    /// Overrides applied on top of the ideal parameters for every config scenario.
    #[serde(default)]
    pub params: toml::Table,
    #[serde(default, rename = "scenario")]
    pub scenario_blocks: Vec<ScenarioBlock>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioBlock {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Start from this built-in scenario instead of the ideal parameters.
    pub base: Option<String>,
    #[serde(default)]
    pub params: toml::Table,
    pub controller: Option<String>,
    pub grid: Option<String>,
    pub stability_order: Option<usize>,
    pub cost_form: Option<CostForm>,
}

fn merge_params(base: &NetworkParams, layers: &[&toml::Table], origin: &str) -> Result<NetworkParams> {
    let mut table = toml::Table::try_from(base).expect("params serialize");
    for layer in layers {
        for (k, v) in layer.iter() {
            let key = match k.as_str() {
                "transmission_delay" => "T",
                "control_delay" => "Tm",
                other => other,
            };
            table.insert(key.to_string(), v.clone());
        }
    }
    let params: NetworkParams = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
    params.validate()?;
    Ok(params)
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.into(),
            message: e.to_string(),
        })?;
        merge_params(&NetworkParams::ideal(), &[&cfg.params], origin)?;
        cfg.scenarios()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn scenarios(&self) -> Result<Vec<Scenario>> {
        let builtins = builtin_scenarios();
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for b in &self.scenario_blocks {
            if !seen.insert(b.name.clone()) {
                return Err(Error::Scenario(format!("duplicate scenario name `{}`", b.name)));
            }
            let mut s = match &b.base {
                Some(base) => find_scenario(&builtins, base)
                    .cloned()
                    .ok_or_else(|| Error::Scenario(format!("unknown base scenario `{base}`")))?,
                None => Scenario::builtin(&b.name, "", NetworkParams::ideal(), ControllerSource::Synthesize),
            };
            s.name = b.name.clone();
            s.description = b.description.clone();
            s.params = merge_params(&s.params, &[&self.params, &b.params], &format!("scenario {}", b.name))?;
            if let Some(c) = &b.controller {
                s.controller = ControllerSource::parse(c);
            }
            if let Some(g) = &b.grid {
                s.grid = g.parse()?;
            }
            if let Some(o) = b.stability_order {
                s.stability_order = o;
            }
            if let Some(f) = b.cost_form {
                s.cost_form = f;
            }
            out.push(s);
        }
        Ok(out)
    }
}

/// `--out`/environment beats the config file, which beats the default.
pub fn resolve_output_dir(cli: Option<PathBuf>, config: Option<&Config>) -> PathBuf {
    cli.or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
        .or_else(|| config.and_then(|c| c.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

// ---------------------------------------------------------------- running

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilitySummary {
    pub verdict: Verdict,
    pub max_real_part: f64,
    pub converged: bool,
    pub discretization_order: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub params: NetworkParams,
    pub controller: String,
    pub grid_points: usize,
    /// Mean of the pointwise `v_sum` reduction (dB) over omega <= 1e4 rad/s.
    pub reduction_db: Option<f64>,
    /// Same statistic over 1e4 < omega <= 1e5 rad/s.
    pub reduction_db_mid: Option<f64>,
    /// Same statistic over omega <= 1e6 rad/s.
    pub reduction_db_wide: Option<f64>,
    pub uncontrolled_band_edges: Vec<(f64, f64)>,
    pub controlled_band_edges: Option<Vec<(f64, f64)>>,
    pub stability: StabilitySummary,
    pub elapsed_s: f64,
}

/// Everything a run produces, before it is written out.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub summary: Summary,
    pub uncontrolled: SpectraResult,
    pub controlled: Option<SpectraResult>,
    pub stability: StabilityReport,
    pub controller: Option<LqgController>,
    pub closed_loop: Option<ClosedLoopSystem>,
}

#[derive(Clone, Copy, Debug)]
pub struct RunOptions {
    pub execution: Execution,
    /// Run the reference scenario first when its controller file is missing.
    pub bootstrap_reference: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            execution: Execution::default(),
            bootstrap_reference: true,
        }
    }
}

pub fn synthesize_for(params: &NetworkParams, form: CostForm) -> Result<LqgController> {
    synthesize(
        &build_plant(params, true)?,
        &build_measurement_map(params)?,
        &build_cost_with(params, form)?,
    )
}

/// Synthesis always uses the lossless, delay-free network with the scenario's
/// own rates and cost weight.
fn design_params(params: &NetworkParams) -> NetworkParams {
    let mut p = *params;
    p.chi = 0.0;
    p.alpha = 1.0;
    p.transmission_delay = 0.0;
    p.control_delay = 0.0;
    p
}

fn load_controller(path: &Path) -> Result<LqgController> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LqgController::from_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            path: path.display().to_string(),
            message,
        },
        other => other,
    })
}

fn obtain_controller(s: &Scenario, out_root: &Path, opts: &RunOptions) -> Result<Option<LqgController>> {
    match &s.controller {
        ControllerSource::None => Ok(None),
        ControllerSource::Synthesize => synthesize_for(&design_params(&s.params), s.cost_form).map(Some),
        ControllerSource::File(rel) => {
            let path = if rel.is_absolute() { rel.clone() } else { out_root.join(rel) };
            if !path.exists() && *rel == reference_path() && opts.bootstrap_reference {
                let reference = find_scenario(&builtin_scenarios(), REFERENCE_SCENARIO)
                    .cloned()
                    .expect("reference scenario is built in");
                run_scenario(&reference, out_root, opts)?;
            }
            load_controller(&path).map(Some)
        }
    }
}

fn reference_path() -> PathBuf {
    Path::new(REFERENCE_SCENARIO).join(CONTROLLER_FILE)
}

/// Compute a scenario without touching the filesystem except to load (or
/// bootstrap) a controller file.
pub fn evaluate_scenario(s: &Scenario, out_root: &Path, opts: &RunOptions) -> Result<Outcome> {
    let start = Instant::now();
    s.params.validate()?;
    let controller = obtain_controller(s, out_root, opts)?;

    let pair = build_uncontrolled_subsystems(&s.params)?;
    let has_delays = !pair.sys1.is_delay_free() || !pair.sys2.is_delay_free();
    let (closed_loop, stability) = match &controller {
        Some(ctrl) => {
            let cl = assemble(
                &build_plant(&s.params, true)?,
                &build_measurement_map(&s.params)?,
                ctrl,
                &s.params,
            )?;
            let report = check_closed_loop(&cl, s.stability_order)?;
            (Some(cl), report)
        }
        None => {
            let plant = build_plant(&s.params, false)?;
            let report = if plant.a_terms().iter().all(|t| t.delay == 0.0) {
                check_closed_loop(
                    &ClosedLoopSystem {
                        sys: plant.clone(),
                        plant_output_rows: Vec::new(),
                    },
                    s.stability_order,
                )?
            } else {
                rightmost_roots(plant.a_terms(), ROOT_COUNT, s.stability_order)?
            };
            (None, report)
        }
    };
    let loop_delays = closed_loop.as_ref().is_some_and(|cl| !cl.sys.is_delay_free());
    let grid = s.grid.build(has_delays || loop_delays)?;
    let uncontrolled = uncontrolled_spectra(&pair, &grid, opts.execution)?;
    let controlled = closed_loop
        .as_ref()
        .map(|cl| closed_loop_spectra(cl, &grid, opts.execution))
        .transpose()?;

    let band = |lo: f64, hi: f64| -> Result<Option<f64>> {
        match &controlled {
            Some(c) if grid.omegas().iter().any(|&w| w > lo && w <= hi) => {
                mean_reduction_db(&uncontrolled, c, lo, hi).map(Some)
            }
            _ => Ok(None),
        }
    };
    let summary = Summary {
        scenario: s.name.clone(),
        params: s.params,
        controller: s.controller.describe(),
        grid_points: grid.len(),
        reduction_db: band(0.0, LOW_BAND)?,
        reduction_db_mid: band(LOW_BAND, MID_BAND)?,
        reduction_db_wide: band(0.0, WIDE_BAND)?,
        uncontrolled_band_edges: uncontrolled.band_edges.clone(),
        controlled_band_edges: controlled.as_ref().map(|c| c.band_edges.clone()),
        stability: StabilitySummary {
            verdict: stability.verdict,
            max_real_part: stability.max_real_part(),
            converged: stability.converged,
            discretization_order: stability.discretization_order,
        },
        elapsed_s: start.elapsed().as_secs_f64(),
    };
    Ok(Outcome {
        summary,
        uncontrolled,
        controlled,
        stability,
        controller,
        closed_loop,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, spectra: &SpectraResult) -> Result<()> {
    let mut buf = Vec::new();
    spectra.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
    write_file(path, buf)
}

fn write_outcome(dir: &Path, s: &Scenario, o: &Outcome) -> Result<()> {
    write_csv(&dir.join("uncontrolled.csv"), &o.uncontrolled)?;
    if let Some(c) = &o.controlled {
        write_csv(&dir.join("controlled.csv"), c)?;
    }
    write_file(&dir.join("stability.json"), o.stability.to_json())?;
    if let (ControllerSource::Synthesize, Some(ctrl)) = (&s.controller, &o.controller) {
        write_file(&dir.join(CONTROLLER_FILE), ctrl.to_json())?;
    }
    let summary = serde_json::to_string_pretty(&o.summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), summary)
}

/// Evaluate `s` and write its results to `out_root/<name>/`. Output goes to
/// a staging directory that only replaces the final one on success.
pub fn run_scenario(s: &Scenario, out_root: &Path, opts: &RunOptions) -> Result<Summary> {
    if s.name.is_empty() || s.name.contains(['/', '\\']) || s.name.starts_with('.') {
        return Err(Error::Scenario(format!("invalid scenario name `{}`", s.name)));
    }
    fs::create_dir_all(out_root).map_err(|e| Error::io(out_root, e))?;
    let outcome = evaluate_scenario(s, out_root, opts)?;

    let final_dir = out_root.join(&s.name);
    let staging = out_root.join(format!(".{}.partial", s.name));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    if let Err(e) = write_outcome(&staging, s, &outcome) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir).map_err(|e| Error::io(&final_dir, e))?;
    }
    fs::rename(&staging, &final_dir).map_err(|e| Error::io(&final_dir, e))?;
    Ok(outcome.summary)
}
