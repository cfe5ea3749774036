//! Ensemble thermodynamics: internal energy, thermodynamic forces, entropy,
//! heat increments and first-law bookkeeping along parameter sweeps.
//!
//! Units have `k_B = 1`. A thermodynamic force is `X_k = -<dH/dx_k>`, so
//! the first law reads `dU = T dS - sum_k X_k dx_k`.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::beta::{BetaFamily, Monotonicity};
use crate::distribution::{DensityModel, EnergyWindow};
use crate::error::{Error, Result};
use crate::phase::SystemModel;
use crate::quadrature::integrate;

/// Name of the temperature entry of a parameter map.
pub const TEMPERATURE_KEY: &str = "T";

/// Relative step of the finite differences behind the Maxwell diagnostic.
pub const MAXWELL_STEP: f64 = 1e-4;

pub fn internal_energy(dm: &DensityModel) -> Result<f64> {
    dm.expectation(|e| e)
}

/// `X_k = -<dH/dx_k>`. Zero for labels and coefficient-family parameters,
/// which do not enter `H`.
pub fn thermodynamic_force(dm: &DensityModel, name: &str) -> Result<f64> {
    let model = dm.model();
    if model.enters_hamiltonian(name) {
        let dos = dm.dos();
        if dos.shell_mean(name, 1.0).is_none() {
            return Err(Error::UnknownParameter(name.to_string()));
        }
        return Ok(-dm.expectation(|e| dos.shell_mean(name, e).unwrap_or(f64::NAN))?);
    }
    if model.param(name).is_ok() || dm.family().param(name).is_some() || name == TEMPERATURE_KEY {
        return Ok(0.0);
    }
    Err(Error::UnknownParameter(name.to_string()))
}

/// Temperature attached to a density: the explicit value if given, else the
/// reciprocal of the family's inverse-temperature parameter.
pub fn temperature(family: &BetaFamily, explicit: Option<f64>) -> Result<f64> {
    match explicit {
        Some(t) if t.is_finite() && t > 0.0 => Ok(t),
        Some(t) => Err(Error::Contract(format!("temperature must be positive, got {t}"))),
        None => family.natural_temperature().ok_or_else(|| {
            Error::Contract(format!(
                "the {} family has no natural temperature; supply one explicitly",
                family.name()
            ))
        }),
    }
}

/// Entropy of the stationary density.
///
/// For the constant family this is the Gibbs form `<B> + ln Z = -<ln rho>`.
/// Otherwise `S = <S_N(rho)>` where `d(rho S_N)/d rho = H(rho)/T + H_0/T`
/// with `H_0 = T (ln Z - 1)`, the choice under which the construction
/// reduces to the Gibbs form for canonical densities. The inversion
/// `H(rho)` needs `rho` monotone in `H` over the energy range.
pub fn entropy(dm: &DensityModel, temp: Option<f64>) -> Result<f64> {
    let family = dm.family();
    let ln_z = dm.ln_partition_function();
    if let BetaFamily::Constant { .. } = family {
        return Ok(dm.expectation(|e| family.antiderivative(e).unwrap_or(f64::NAN))? + ln_z);
    }
    let t = temperature(family, temp)?;
    let (lo, hi) = dm.energy_range();
    let branch = family.monotonicity(lo, hi);
    let b = |e: f64| family.antiderivative(e).unwrap_or(f64::NAN);
    // J(E) = (1/rho(E)) int rho dE' over the branch's tail
    let tail = |e: f64| -> f64 {
        let be = b(e);
        match branch {
            Monotonicity::Decreasing => integrate(|x| (be - b(x)).exp(), e, hi, 1e-11, 0.0).value,
            Monotonicity::Increasing => -integrate(|x| (be - b(x)).exp(), lo, e, 1e-11, 0.0).value,
            Monotonicity::Mixed => f64::NAN,
        }
    };
    if branch == Monotonicity::Mixed {
        return Err(Error::EntropyBranch(format!(
            "the {} density is not monotone on [{lo}, {hi}]; restrict the window to one side of its extremum",
            family.name()
        )));
    }
    let u = internal_energy(dm)?;
    let j = dm.expectation(tail)?;
    Ok((u + j) / t + ln_z - 1.0)
}

/// `<H(x_other)>` under `dm`, using the exact linear shift between the two
/// parameter sets.
fn cross_energy(dm: &DensityModel, other: &SystemModel) -> Result<f64> {
    let mut value = internal_energy(dm)?;
    for (name, c) in dm.model().exact_shift_coefficients(other)? {
        value -= c * thermodynamic_force(dm, &name)?;
    }
    Ok(value)
}

/// Heat exchanged between two nearby states, `int H_mid (rho' - rho)` with
/// the midpoint Hamiltonian `(H + H') / 2`.
pub fn heat_increment(dm: &DensityModel, dm2: &DensityModel) -> Result<f64> {
    if dm.window() != dm2.window() {
        return Err(Error::Contract("heat increment needs both densities on the same window".into()));
    }
    let u1 = internal_energy(dm)?;
    let u2 = internal_energy(dm2)?;
    let h1_under_2 = cross_energy(dm2, dm.model())?;
    let h2_under_1 = cross_energy(dm, dm2.model())?;
    Ok(0.5 * (u2 - u1 + h1_under_2 - h2_under_1))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermoPoint {
    pub x: BTreeMap<String, f64>,
    pub internal_energy: f64,
    pub forces: BTreeMap<String, f64>,
    pub entropy: f64,
    pub partition_function: f64,
    pub ln_partition_function: f64,
    pub temperature: f64,
}

/// Base model and family from which sweep points are derived by overriding
/// named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoSetup {
    pub model: SystemModel,
    pub family: BetaFamily,
    pub window: Option<EnergyWindow>,
    pub temperature: Option<f64>,
}

impl ThermoSetup {
    pub fn new(model: SystemModel, family: BetaFamily, window: Option<EnergyWindow>, temperature: Option<f64>) -> Self {
        Self {
            model,
            family,
            window,
            temperature,
        }
    }

    /// Applies a parameter map. `T` sets the temperature and, for families
    /// with an inverse-temperature parameter, that parameter to `1/T`.
    /// Remaining names go to the model first, then to the family.
    pub fn resolve(&self, x: &BTreeMap<String, f64>) -> Result<(SystemModel, BetaFamily, Option<f64>)> {
        let mut model = self.model.clone();
        let mut family = self.family.clone();
        let mut temp = self.temperature;
        for (name, &value) in x {
            if name == TEMPERATURE_KEY {
                temp = Some(value);
                family = match family {
                    BetaFamily::Constant { .. } | BetaFamily::FermiBose { .. } => family.with_param("beta0", 1.0 / value)?,
                    BetaFamily::Linear { .. } => family.with_param("beta1", 1.0 / value)?,
                    BetaFamily::BreitWigner { .. } => family,
                };
            } else if model.param(name).is_ok() {
                model = model.with_param(name, value)?;
            } else if family.param(name).is_some() {
                family = family.with_param(name, value)?;
            } else {
                return Err(Error::UnknownParameter(name.clone()));
            }
        }
        Ok((model, family, temp))
    }

    pub fn density(&self, x: &BTreeMap<String, f64>) -> Result<(DensityModel, Option<f64>)> {
        let (model, family, temp) = self.resolve(x)?;
        Ok((DensityModel::new(model, family, self.window)?, temp))
    }

    pub fn point(&self, x: &BTreeMap<String, f64>) -> Result<ThermoPoint> {
        let (dm, temp) = self.density(x)?;
        let forces = dm
            .model()
            .param_names()
            .into_iter()
            .map(|k| thermodynamic_force(&dm, &k).map(|v| (k, v)))
            .collect::<Result<_>>()?;
        Ok(ThermoPoint {
            x: x.clone(),
            internal_energy: internal_energy(&dm)?,
            forces,
            entropy: entropy(&dm, temp)?,
            partition_function: dm.partition_function(),
            ln_partition_function: dm.ln_partition_function(),
            temperature: temperature(dm.family(), temp)?,
        })
    }

    /// Evaluates every point independently; failures stay attached to their
    /// point.
    pub fn sweep(&self, xs: &[BTreeMap<String, f64>]) -> Vec<Result<ThermoPoint>> {
        xs.par_iter().map(|x| self.point(x)).collect()
    }

    /// `dX_k/dx_l - dX_l/dx_k` for every pair of names in `x`, by central
    /// differences of relative size `MAXWELL_STEP`.
    pub fn maxwell_asymmetry(&self, x: &BTreeMap<String, f64>) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
        let names: Vec<String> = x.keys().cloned().collect();
        let force_at = |k: &str, l: &str, sign: f64| -> Result<(f64, f64)> {
            let mut moved = x.clone();
            let v = moved[l];
            let h = MAXWELL_STEP * v.abs().max(1.0);
            moved.insert(l.to_string(), v + sign * h);
            let (dm, _) = self.density(&moved)?;
            Ok((thermodynamic_force(&dm, k)?, h))
        };
        let mut grad = vec![vec![0.0; names.len()]; names.len()];
        for (i, k) in names.iter().enumerate() {
            for (j, l) in names.iter().enumerate() {
                if i == j {
                    continue;
                }
                let (xp, h) = force_at(k, l, 1.0)?;
                let (xm, _) = force_at(k, l, -1.0)?;
                grad[i][j] = (xp - xm) / (2.0 * h);
            }
        }
        let n = names.len();
        let asym = (0..n)
            .map(|i| (0..n).map(|j| (grad[i][j] - grad[j][i]).abs()).collect())
            .collect();
        Ok((names, asym))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawResiduals {
    /// `|dU - (T dS - sum_k X_k dx_k)|` per segment, midpoint `T` and `X`.
    pub first_law: Vec<f64>,
    pub maxwell_params: Vec<String>,
    pub maxwell_asymmetry: Vec<Vec<f64>>,
}

/// First-law residual per sweep segment and the Maxwell asymmetry at the
/// middle point of the sweep.
pub fn first_law_residual(setup: &ThermoSetup, sweep: &[ThermoPoint]) -> Result<LawResiduals> {
    if sweep.len() < 3 {
        return Err(Error::Contract(format!(
            "first-law residuals need at least 3 sweep points, got {}",
            sweep.len()
        )));
    }
    let first_law = sweep
        .windows(2)
        .map(|w| {
            let (a, b) = (&w[0], &w[1]);
            let du = b.internal_energy - a.internal_energy;
            let ds = b.entropy - a.entropy;
            let t_mid = 0.5 * (a.temperature + b.temperature);
            let work: f64 = a
                .forces
                .iter()
                .map(|(k, xa)| {
                    let xb = b.forces.get(k).copied().unwrap_or(*xa);
                    let step = b.x.get(k).copied().unwrap_or(0.0) - a.x.get(k).copied().unwrap_or(0.0);
                    0.5 * (xa + xb) * step
                })
                .sum();
            (du - (t_mid * ds - work)).abs()
        })
        .collect();
    let (maxwell_params, maxwell_asymmetry) = setup.maxwell_asymmetry(&sweep[sweep.len() / 2].x)?;
    Ok(LawResiduals {
        first_law,
        maxwell_params,
        maxwell_asymmetry,
    })
}
