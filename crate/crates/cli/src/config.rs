//! Run configuration: TOML documents, the isokinetic shorthand and
//! cross-field validation.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thermofew::distribution::MIN_HISTOGRAM_SAMPLES;
use thermofew::{
    BaseForce, BetaFamily, ConstrainedSystem, EnergyWindow, InitialSampler, IntegratorSpec, Potential, SystemModel,
    ThermoSetup,
};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub n_particles: usize,
    pub dim: usize,
    /// One entry for identical particles, otherwise one per particle.
    pub masses: Vec<f64>,
    pub potential: Potential,
    /// Extra external parameters that do not enter the Hamiltonian.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
}

impl ModelSpec {
    pub fn build(&self) -> thermofew::Result<SystemModel> {
        let mut model = match self.masses.as_slice() {
            [m] => SystemModel::uniform(self.n_particles, self.dim, *m, self.potential.clone())?,
            ms => SystemModel::new(self.n_particles, self.dim, ms.to_vec(), self.potential.clone())?,
        };
        for (k, v) in &self.params {
            model = model.with_extra(k.clone(), *v)?;
        }
        Ok(model)
    }
}

/// Shorthand for the Gaussian isokinetic thermostat: linear friction with
/// constant `beta0 = N d / kT`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsokineticSpec {
    pub kt: f64,
}

fn default_n_traj() -> usize {
    1
}

fn default_sampler() -> InitialSampler {
    InitialSampler::Gaussian {
        q_sigma: 1.0,
        p_sigma: 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default = "default_n_traj")]
    pub n_traj: usize,
    #[serde(default = "default_sampler")]
    pub sampler: InitialSampler,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_traj: default_n_traj(),
            sampler: default_sampler(),
            seed: None,
        }
    }
}

fn default_n_states() -> usize {
    100
}

fn default_pushforward_samples() -> usize {
    10_000
}

fn default_pushforward_steps() -> usize {
    100
}

fn default_bins() -> usize {
    20
}

fn default_closure_tolerance() -> f64 {
    1e-8
}

fn default_stationarity_tolerance() -> f64 {
    1e-6
}

fn default_first_law_tolerance() -> f64 {
    1e-6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default)]
    pub closure: bool,
    #[serde(default)]
    pub stationarity: bool,
    #[serde(default)]
    pub pushforward: bool,
    #[serde(default)]
    pub histogram: bool,
    #[serde(default)]
    pub thermo: bool,
    /// On-surface states used by the closure and stationarity checks.
    #[serde(default = "default_n_states")]
    pub n_states: usize,
    /// Family of the density tested for stationarity, when it should differ
    /// from the one driving the flow.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<BetaFamily>,
    #[serde(default = "default_pushforward_samples")]
    pub pushforward_samples: usize,
    #[serde(default = "default_pushforward_steps")]
    pub pushforward_steps: usize,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_closure_tolerance")]
    pub closure_tolerance: f64,
    #[serde(default = "default_stationarity_tolerance")]
    pub stationarity_tolerance: f64,
    #[serde(default = "default_first_law_tolerance")]
    pub first_law_tolerance: f64,
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self {
            closure: false,
            stationarity: false,
            pushforward: false,
            histogram: false,
            thermo: false,
            n_states: default_n_states(),
            density: None,
            pushforward_samples: default_pushforward_samples(),
            pushforward_steps: default_pushforward_steps(),
            bins: default_bins(),
            closure_tolerance: default_closure_tolerance(),
            stationarity_tolerance: default_stationarity_tolerance(),
            first_law_tolerance: default_first_law_tolerance(),
        }
    }
}

impl VerifySpec {
    pub fn any_stochastic(&self) -> bool {
        self.closure || self.stationarity || self.pushforward || self.histogram
    }
}

/// Points at which thermodynamic quantities are evaluated. Each point maps
/// parameter names (model parameters, family parameters or `T`) to values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub points: Vec<BTreeMap<String, f64>>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

/// Document as written, before shorthands are expanded.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: ModelSpec,
    force: Option<BaseForce>,
    beta: Option<BetaFamily>,
    isokinetic: Option<IsokineticSpec>,
    window: Option<EnergyWindow>,
    temperature: Option<f64>,
    integrator: IntegratorSpec,
    #[serde(default)]
    ensemble: EnsembleSpec,
    #[serde(default)]
    verify: VerifySpec,
    sweep: Option<SweepSpec>,
    #[serde(default)]
    output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub force: BaseForce,
    pub beta: BetaFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<EnergyWindow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub integrator: IntegratorSpec,
    pub ensemble: EnsembleSpec,
    pub verify: VerifySpec,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    pub output: OutputSpec,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str) -> CliResult<RunConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })?;
    let (force, beta) = match (raw.isokinetic, raw.force, raw.beta) {
        (Some(iso), None, None) => {
            if !(iso.kt.is_finite() && iso.kt > 0.0) {
                return Err(CliError::config("isokinetic.kt", format!("must be positive, got {}", iso.kt)));
            }
            let nd = (raw.model.n_particles * raw.model.dim) as f64;
            (BaseForce::LinearFriction { gamma: 1.0 }, BetaFamily::Constant { beta0: nd / iso.kt })
        }
        (Some(_), _, _) => {
            return Err(CliError::config("isokinetic", "cannot be combined with `force` or `beta`"));
        }
        (None, Some(f), Some(b)) => (f, b),
        (None, None, _) => return Err(CliError::config("force", "missing (or use the `isokinetic` shorthand)")),
        (None, _, None) => return Err(CliError::config("beta", "missing (or use the `isokinetic` shorthand)")),
    };
    let cfg = RunConfig {
        model: raw.model,
        force,
        beta,
        window: raw.window,
        temperature: raw.temperature,
        integrator: raw.integrator,
        ensemble: raw.ensemble,
        verify: raw.verify,
        sweep: raw.sweep,
        output: raw.output,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn to_toml(cfg: &RunConfig) -> String {
    toml::to_string(cfg).expect("a validated config serializes")
}

fn check_family(field: &str, family: &BetaFamily, window: Option<EnergyWindow>) -> CliResult<()> {
    family.validate().map_err(|e| CliError::config(field, e))?;
    if matches!(family, BetaFamily::BreitWigner { .. }) && window.is_none() {
        return Err(CliError::config(
            "window",
            format!("`{field}` is breit-wigner, whose density is not normalizable without an energy window"),
        ));
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> CliResult<()> {
        let model = self.model.build().map_err(|e| CliError::config("model", e))?;
        self.force.validate().map_err(|e| CliError::config("force", e))?;
        if let Some(w) = self.window {
            EnergyWindow::new(w.min, w.max).map_err(|e| CliError::config("window", e))?;
        }
        check_family("beta", &self.beta, self.window)?;
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(CliError::config("temperature", format!("must be positive, got {t}")));
            }
        }
        self.integrator.validate().map_err(|e| CliError::config("integrator", e))?;
        if self.ensemble.n_traj == 0 {
            return Err(CliError::config("ensemble.n_traj", "must be at least 1"));
        }
        self.ensemble
            .sampler
            .validate()
            .map_err(|e| CliError::config("ensemble.sampler", e))?;
        let v = &self.verify;
        if let Some(fam) = &v.density {
            check_family("verify.density", fam, self.window)?;
        }
        if v.n_states == 0 {
            return Err(CliError::config("verify.n_states", "must be at least 1"));
        }
        if v.pushforward && v.pushforward_samples < MIN_HISTOGRAM_SAMPLES {
            return Err(CliError::config(
                "verify.pushforward_samples",
                format!("needs at least {MIN_HISTOGRAM_SAMPLES}"),
            ));
        }
        if v.bins < 2 {
            return Err(CliError::config("verify.bins", "needs at least 2 bins"));
        }
        for (name, tol) in [
            ("verify.closure_tolerance", v.closure_tolerance),
            ("verify.stationarity_tolerance", v.stationarity_tolerance),
            ("verify.first_law_tolerance", v.first_law_tolerance),
        ] {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(CliError::config(name, format!("must be positive, got {tol}")));
            }
        }
        if v.thermo && self.sweep.is_none() {
            return Err(CliError::config("sweep", "required by `verify.thermo`"));
        }
        if let Some(sweep) = &self.sweep {
            if sweep.points.is_empty() {
                return Err(CliError::config("sweep.points", "must not be empty"));
            }
            let setup = self.thermo_setup(model.clone());
            for (i, x) in sweep.points.iter().enumerate() {
                setup.resolve(x).map_err(|e| CliError::config(format!("sweep.points[{i}]"), e))?;
            }
        }
        ConstrainedSystem::new(model, self.force.clone(), self.beta.clone()).map_err(|e| CliError::config("model", e))?;
        Ok(())
    }

    pub fn system(&self) -> CliResult<ConstrainedSystem> {
        Ok(ConstrainedSystem::new(
            self.model.build()?,
            self.force.clone(),
            self.beta.clone(),
        )?)
    }

    pub fn thermo_setup(&self, model: SystemModel) -> ThermoSetup {
        ThermoSetup::new(model, self.beta.clone(), self.window, self.temperature)
    }

    pub fn seed(&self, command: &str) -> CliResult<u64> {
        self.ensemble.seed.ok_or_else(|| {
            CliError::config("ensemble.seed", format!("`{command}` is stochastic; set a seed or pass --seed"))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[model]
n_particles = 2
dim = 3
masses = [1.0]
potential = { kind = "harmonic", omega = 1.0 }

[isokinetic]
kt = 2.0

[integrator]
dt = 0.001
n_steps = 10
"#;

    #[test]
    fn isokinetic_shorthand() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.force, BaseForce::LinearFriction { gamma: 1.0 });
        assert_eq!(cfg.beta, BetaFamily::Constant { beta0: 3.0 });
        assert_eq!(cfg.ensemble.n_traj, 1);
        assert!(!cfg.verify.any_stochastic());
    }

    #[test]
    fn breit_wigner_without_window_names_the_field() {
        // top-level keys must precede the first table
        let text = format!(
            "force = {{ kind = \"linear-friction\", gamma = 1.0 }}\nbeta = {{ kind = \"breit-wigner\", energy = 1.0, width = 0.5 }}\n{}",
            MINIMAL.replace("[isokinetic]\nkt = 2.0\n", "")
        );
        match parse_config(&text) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "window"),
            other => panic!("expected a window error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_a_line() {
        let text = MINIMAL.replace("dim = 3", "dim = three");
        match parse_config(&text) {
            Err(CliError::Parse { line, .. }) => assert_eq!(line, Some(4)),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("kt = 2.0", "kt = 2.0\nbogus = 1");
        assert!(matches!(parse_config(&text), Err(CliError::Parse { .. })));
    }

    #[test]
    fn shorthand_conflicts_with_explicit_force() {
        let text = format!("force = {{ kind = \"linear-friction\", gamma = 1.0 }}\n{MINIMAL}");
        match parse_config(&text) {
            Err(CliError::Config { field, .. }) => assert_eq!(field, "isokinetic"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn round_trip() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&to_toml(&cfg)).unwrap(), cfg);
    }

    #[test]
    fn seed_is_required_on_demand() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert!(matches!(cfg.seed("simulate"), Err(CliError::Config { .. })));
    }
}
